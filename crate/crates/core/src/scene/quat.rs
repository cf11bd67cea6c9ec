use crate::error::{Error, Result};
use crate::real::Real;

pub type Mat3<T> = [[T; 3]; 3];

/// Normalize a `(w, x, y, z)` quaternion.
pub fn normalize_quat(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::DegenerateRotation);
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// Rotation matrix of a `(w, x, y, z)` quaternion, renormalized first.
pub fn quaternion_to_rotation(q: [f64; 4]) -> Result<Mat3<f64>> {
    Ok(rotation_of_unit(normalize_quat(q)?))
}

/// Standard unit-quaternion to rotation matrix formula. The input is assumed
/// to be normalized already.
#[inline]
pub fn rotation_of_unit<T: Real>(q: [T; 4]) -> Mat3<T> {
    let [w, x, y, z] = q;
    let one = T::one();
    let two = T::of(2.0);
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

/// Backpropagate a gradient on the rotation matrix to the unit quaternion
/// entries `(w, x, y, z)` (before normalization).
#[inline]
pub fn rotation_grad_to_unit_quat<T: Real>(q: [T; 4], g: &Mat3<T>) -> [T; 4] {
    let [w, x, y, z] = q;
    let two = T::of(2.0);
    let four = T::of(4.0);
    let gw = two
        * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let gx = -four * x * g[1][1] - four * x * g[2][2]
        + two * (y * g[0][1] + z * g[0][2] + y * g[1][0] - w * g[1][2] + z * g[2][0] + w * g[2][1]);
    let gy = -four * y * g[0][0] - four * y * g[2][2]
        + two * (x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1]);
    let gz = -four * z * g[0][0] - four * z * g[1][1]
        + two * (-w * g[0][1] + x * g[0][2] + w * g[1][0] + y * g[1][2] + x * g[2][0] + y * g[2][1]);
    [gw, gx, gy, gz]
}

/// Chain a gradient through `q / |q|`.
#[inline]
pub fn normalize_grad<T: Real>(q: [T; 4], g_unit: [T; 4]) -> [T; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let d = u[0] * g_unit[0] + u[1] * g_unit[1] + u[2] * g_unit[2] + u[3] * g_unit[3];
    [
        (g_unit[0] - u[0] * d) / n,
        (g_unit[1] - u[1] * d) / n,
        (g_unit[2] - u[2] * d) / n,
        (g_unit[3] - u[3] * d) / n,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mul_t(a: &Mat3<f64>) -> Mat3<f64> {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| a[i][k] * a[j][k]).sum();
            }
        }
        out
    }

    fn det(m: &Mat3<f64>) -> f64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    #[test]
    fn identity_quaternion() {
        let r = quaternion_to_rotation([1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn quarter_turn_about_z() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let r = quaternion_to_rotation([h, 0.0, 0.0, h]).unwrap();
        let want = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[i][j] - want[i][j]).abs() < 1e-6, "{r:?}");
            }
        }
    }

    #[test]
    fn zero_quaternion_is_degenerate() {
        assert!(matches!(
            quaternion_to_rotation([0.0; 4]),
            Err(Error::DegenerateRotation)
        ));
    }

    #[test]
    fn quat_gradient_matches_finite_differences() {
        let q = [0.3, -0.5, 0.7, 0.2];
        let qn = normalize_quat(q).unwrap();
        let g = [[0.3, -1.0, 0.2], [0.7, 0.1, -0.4], [0.5, 0.9, -0.3]];
        let f = |q: [f64; 4]| {
            let r = quaternion_to_rotation(q).unwrap();
            (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| r[i][j] * g[i][j])
                .sum::<f64>()
        };
        let analytic = normalize_grad(q, rotation_grad_to_unit_quat(qn, &g));
        for k in 0..4 {
            let mut a = q;
            let mut b = q;
            a[k] += 1e-6;
            b[k] -= 1e-6;
            let fd = (f(a) - f(b)) / 2e-6;
            assert!((fd - analytic[k]).abs() < 1e-7, "{k}: {fd} vs {}", analytic[k]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn rotations_are_orthonormal(w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            prop_assume!(w * w + x * x + y * y + z * z > 1e-4);
            let r = quaternion_to_rotation([w, x, y, z]).unwrap();
            let rrt = mul_t(&r);
            for i in 0..3 {
                for j in 0..3 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((rrt[i][j] - e).abs() < 1e-6);
                }
            }
            prop_assert!((det(&r) - 1.0).abs() < 1e-6);
        }
    }
}
