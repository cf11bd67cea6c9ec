//! Real spherical harmonics up to degree 1.
//!
//! Coefficients are stored coefficient-major with interleaved channels:
//! `c[3 * j + channel]` for basis function `j`.

use crate::error::{Error, Result};
use crate::real::Real;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

pub const MAX_SH_DEGREE: u8 = 1;

/// Number of basis functions for a degree.
pub const fn basis_count(degree: u8) -> usize {
    (degree as usize + 1) * (degree as usize + 1)
}

/// Length of the per-primitive coefficient vector, `3·(deg+1)²`.
pub const fn coeff_len(degree: u8) -> usize {
    3 * basis_count(degree)
}

/// Basis values at a unit direction. Unused trailing entries are zero.
#[inline]
pub fn basis<T: Real>(degree: u8, dir: [T; 3]) -> [T; 4] {
    let c0 = T::of(SH_C0);
    if degree == 0 {
        return [c0, T::zero(), T::zero(), T::zero()];
    }
    let c1 = T::of(SH_C1);
    [c0, -c1 * dir[1], c1 * dir[2], -c1 * dir[0]]
}

/// Evaluate SH color for a unit view direction. No clamping is applied.
pub fn evaluate_sh(coeffs: &[f64], degree: u8, dir: [f64; 3]) -> Result<[f64; 3]> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::Unsupported(format!("sh degree {degree}")));
    }
    if coeffs.len() != coeff_len(degree) {
        return Err(Error::Shape(format!(
            "sh coefficients: got {}, expected {} for degree {degree}",
            coeffs.len(),
            coeff_len(degree)
        )));
    }
    Ok(eval_unchecked(coeffs, degree, dir))
}

#[inline]
pub fn eval_unchecked<T: Real>(coeffs: &[T], degree: u8, dir: [T; 3]) -> [T; 3] {
    let b = basis(degree, dir);
    let mut rgb = [T::zero(); 3];
    for (j, bj) in b.iter().take(basis_count(degree)).enumerate() {
        for (ch, v) in rgb.iter_mut().enumerate() {
            *v += *bj * coeffs[3 * j + ch];
        }
    }
    rgb
}

/// DC coefficients that reproduce a color exactly at degree 0.
pub fn rgb_to_dc(rgb: [f64; 3]) -> [f64; 3] {
    [rgb[0] / SH_C0, rgb[1] / SH_C0, rgb[2] / SH_C0]
}
