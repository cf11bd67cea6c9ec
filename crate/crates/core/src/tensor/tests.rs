use super::*;
use crate::seed::stream_rng;
use rand::Rng;

fn rand_vals(n: usize, seed: &str) -> Vec<f64> {
    let mut rng = stream_rng(7, seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn weighted_sum(t: &mut Tape<f64>, y: Var, seed: &str) -> Result<Var> {
    let w = rand_vals(t.value(y).len(), seed);
    let shape = t.shape(y).to_vec();
    let c = t.constant(&shape, w)?;
    let p = t.mul(y, c)?;
    Ok(t.sum(p))
}

fn check<F>(shapes: &[&[usize]], f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let inputs: Vec<(Vec<usize>, Vec<f64>)> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| (s.to_vec(), rand_vals(s.iter().product(), &format!("in{i}"))))
        .collect();
    let r = gradcheck(&inputs, 1e-6, |t, v| {
        let y = f(t, v)?;
        weighted_sum(t, y, "w")
    })
    .unwrap();
    assert!(r.checked > 0);
    assert!(r.max_rel_error < 1e-5, "rel error {} at {:?}", r.max_rel_error, r.worst);
}

#[test]
fn grad_elementwise() {
    check(&[&[3, 4], &[3, 4]], |t, v| t.add(v[0], v[1]));
    check(&[&[3, 4], &[3, 4]], |t, v| t.sub(v[0], v[1]));
    check(&[&[3, 4], &[3, 4]], |t, v| t.mul(v[0], v[1]));
    check(&[&[3, 4], &[4]], |t, v| t.add_row(v[0], v[1]));
    check(&[&[3, 4], &[4]], |t, v| t.mul_row(v[0], v[1]));
    check(&[&[5]], |t, v| Ok(t.scale(v[0], -1.7)));
    check(&[&[5]], |t, v| Ok(t.gelu(v[0])));
    check(&[&[5]], |t, v| Ok(t.tanh(v[0])));
    check(&[&[5]], |t, v| Ok(t.sigmoid(v[0])));
    check(&[&[5]], |t, v| Ok(t.exp(v[0])));
    check(&[&[5]], |t, v| Ok(t.clamp(v[0], -0.5, 0.5)));
    check(&[&[5]], |t, v| t.mul_const(v[0], vec![1.0, 2.0, 3.0, 4.0, 5.0]));
    check(&[&[5]], |t, v| t.add_const(v[0], &[1.0, 2.0, 3.0, 4.0, 5.0]));
}

#[test]
fn grad_structural() {
    check(&[&[3, 4], &[4, 2]], |t, v| t.matmul(v[0], v[1]));
    check(&[&[3, 4]], |t, v| t.transpose(v[0]));
    check(&[&[3, 4]], |t, v| t.reshape(v[0], &[2, 6]));
    check(&[&[3, 4], &[3, 2]], |t, v| t.concat_cols(&[v[0], v[1]]));
    check(&[&[3, 4], &[2, 4]], |t, v| t.concat_rows(&[v[0], v[1]]));
    check(&[&[3, 4]], |t, v| t.slice_cols(v[0], 1, 2));
    check(&[&[3, 4]], |t, v| t.slice_rows(v[0], 1, 2));
    check(&[&[3, 4]], |t, v| t.gather_rows(v[0], &[2, 0, 2, 1]));
    check(&[&[4]], |t, v| Ok(t.broadcast_rows(v[0], 3)));
}

#[test]
fn grad_reductions_and_norms() {
    check(&[&[3, 4]], |t, v| Ok(t.softmax(v[0])));
    check(&[&[3, 4], &[4], &[4]], |t, v| t.layer_norm(v[0], v[1], v[2]));
    check(&[&[3, 4]], |t, v| Ok(t.normalize_rows(v[0])));
    check(&[&[3, 4], &[3, 4]], |t, v| t.mse(v[0], v[1]));
    check(&[&[3, 4]], |t, v| Ok(t.mean(v[0])));
}

#[test]
fn grad_attention() {
    check(&[&[3, 4], &[5, 4], &[5, 4]], |t, v| t.attention(v[0], v[1], v[2], 2));
    let idx = [0, 2, 3, 1, 1, 4, 2, 0, 0];
    check(&[&[3, 4], &[5, 4], &[5, 4], &[9, 2]], |t, v| {
        t.neighbor_attention(v[0], v[1], v[2], &idx, 3, Some(v[3]), 2)
    });
}

#[test]
fn softmax_matches_oracle() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let y = t.softmax(x);
    let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    for (a, b) in t.value(y).iter().zip(&e) {
        assert!((a - b / s).abs() < 1e-15);
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let mut t = Tape::<f32>::new();
    let q = t.constant(&[6, 8], rand_vals(48, "q").iter().map(|v| *v as f32 * 5.0).collect()).unwrap();
    let k = t.constant(&[7, 8], rand_vals(56, "k").iter().map(|v| *v as f32 * 5.0).collect()).unwrap();
    let a = t.attention(q, k, k, 4).unwrap();
    assert_eq!(t.shape(a), &[6, 8]);
    assert_eq!(t.attention_probs(a).unwrap().len(), 6 * 4 * 7);
    assert!(t.attention_row_sum_error().unwrap() < 1e-5);
}

#[test]
fn neighbor_attention_over_all_keys_equals_dense() {
    let mut t = Tape::<f64>::new();
    let q = t.constant(&[4, 6], rand_vals(24, "q")).unwrap();
    let k = t.constant(&[4, 6], rand_vals(24, "k")).unwrap();
    let v = t.constant(&[4, 6], rand_vals(24, "v")).unwrap();
    let dense = t.attention(q, k, v, 3).unwrap();
    let idx: Vec<usize> = (0..4).flat_map(|_| 0..4).collect();
    let sparse = t.neighbor_attention(q, k, v, &idx, 4, None, 3).unwrap();
    for (a, b) in t.value(dense).iter().zip(t.value(sparse)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn shape_errors() {
    let mut t = Tape::<f32>::new();
    let a = t.var(&[2, 3], vec![0.0; 6]).unwrap();
    let b = t.var(&[2, 3], vec![0.0; 6]).unwrap();
    assert!(matches!(t.matmul(a, b), Err(Error::Shape(_))));
    assert!(matches!(t.reshape(a, &[4]), Err(Error::Shape(_))));
    assert!(matches!(t.gather_rows(a, &[2]), Err(Error::Shape(_))));
    assert!(matches!(t.attention(a, b, b, 2), Err(Error::Shape(_))));
    assert!(t.var(&[2], vec![0.0; 3]).is_err());
    assert!(t.backward(a).is_err());
}

#[test]
fn seeded_backward_matches_weighted_sum() {
    let mut t = Tape::<f64>::new();
    let x = t.var(&[3], vec![0.1, -0.4, 0.9]).unwrap();
    let y = t.tanh(x);
    let g = t.backward_seeded(&[(y, vec![1.0, 2.0, 3.0])]).unwrap();
    let gx = g.get(x).unwrap();
    for (i, xv) in [0.1f64, -0.4, 0.9].iter().enumerate() {
        let want = (i as f64 + 1.0) * (1.0 - xv.tanh().powi(2));
        assert!((gx[i] - want).abs() < 1e-14);
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut t = Tape::<f32>::new();
    let c = t.constant(&[2], vec![1.0, 2.0]).unwrap();
    let x = t.var(&[2], vec![3.0, 4.0]).unwrap();
    let p = t.mul(c, x).unwrap();
    let s = t.sum(p);
    let g = t.backward(s).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get(x).unwrap(), &[1.0, 2.0]);
}

#[test]
fn adam_minimizes_quadratic() {
    let mut store = ParamStore::new();
    store.add("x", &[2], vec![3.0, -2.0]).unwrap();
    let mut opt = Adam::new(
        AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        },
        &store,
    );
    for _ in 0..500 {
        let mut t = Tape::<f32>::new();
        let b = store.bind(&mut t);
        let x = b.var(ParamId(0));
        let sq = t.mul(x, x).unwrap();
        let l = t.sum(sq);
        let g = t.backward(l).unwrap();
        let grads = b.grads(&g, &store);
        opt.update(&mut store, &grads).unwrap();
    }
    assert!(store.data(0).iter().all(|v| v.abs() < 0.05), "{:?}", store.data(0));
    assert_eq!(opt.step_count(), 500);
}

#[test]
fn adam_first_step_is_lr_sized() {
    let mut store = ParamStore::new();
    store.add("x", &[1], vec![1.0]).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), &store);
    opt.update(&mut store, &[vec![0.3]]).unwrap();
    // Bias-corrected first step is lr · g / (|g| + eps).
    assert!((store.data(0)[0] - (1.0 - 2.5e-5)).abs() < 1e-7);
}

#[test]
fn trunc_normal_is_bounded() {
    let mut store = ParamStore::new();
    let mut rng = stream_rng(1, "init");
    let id = store.add_trunc_normal("w", &[64, 64], 0.02, &mut rng).unwrap();
    let d = store.get(id);
    assert!(d.iter().all(|v| v.abs() <= 0.04));
    let mean = d.iter().sum::<f32>() / d.len() as f32;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / d.len() as f32;
    // Truncation at 2σ shrinks the standard deviation by about 12%.
    assert!((var.sqrt() - 0.0176).abs() < 0.001, "{}", var.sqrt());
    assert!(store.add_zeros("w", &[1]).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let mut store = ParamStore::new();
    store.add("a.w", &[2, 3], vec![1.0, -2.0, 3.5, 0.25, f32::MIN_POSITIVE, 7.0]).unwrap();
    store.add("b", &[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), &store);
    opt.update(&mut store, &[vec![0.5; 6], vec![-1.0; 4]]).unwrap();
    let mut ck = store.to_checkpoint();
    ck.push_adam(&opt, &store);
    save_checkpoint(&path, &ck).unwrap();
    assert!(manifest_path(&path).exists());
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);

    let mut fresh = ParamStore::new();
    fresh.add_zeros("a.w", &[2, 3]).unwrap();
    fresh.add_zeros("b", &[4]).unwrap();
    fresh.load_from(&back).unwrap();
    assert_eq!(fresh.data(0), store.data(0));
    let mut opt2 = Adam::new(AdamConfig::default(), &fresh);
    back.restore_adam(&mut opt2, &fresh).unwrap();
    assert_eq!(opt2.step_count(), 1);
    assert_eq!(opt2.m, opt.m);

    let mut wrong = ParamStore::new();
    wrong.add_zeros("a.w", &[3, 2]).unwrap();
    assert!(matches!(wrong.load_from(&back), Err(Error::Checkpoint(_))));

    std::fs::write(&path, [0u8; 3]).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn matmul_parallel_matches_sequential() {
    use crate::par::{set_exec, Exec};
    let a: Vec<f32> = rand_vals(300 * 40, "a").iter().map(|v| *v as f32).collect();
    let b: Vec<f32> = rand_vals(40 * 70, "b").iter().map(|v| *v as f32).collect();
    let run = || {
        let mut t = Tape::<f32>::new();
        let x = t.var(&[300, 40], a.clone()).unwrap();
        let y = t.var(&[40, 70], b.clone()).unwrap();
        let z = t.matmul(x, y).unwrap();
        let s = t.sum(z);
        let g = t.backward(s).unwrap();
        (t.value(z).to_vec(), g.get(x).unwrap().to_vec())
    };
    set_exec(Exec::Sequential);
    let s = run();
    set_exec(Exec::Parallel);
    let p = run();
    assert_eq!(s, p);
}

#[test]
fn gelu_matches_tanh_form() {
    for i in -80..=80 {
        let x = i as f64 * 0.1;
        let u = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
        let want = 0.5 * x * (1.0 + u.tanh());
        assert!((gelu_value(x) - want).abs() < 1e-14, "{x}");
    }
    assert_eq!(gelu_value(-1e4f32), 0.0);
    assert_eq!(gelu_value(1e4f32), 1e4);
}
