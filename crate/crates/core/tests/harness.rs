use splatsr::config::RunConfig;
use splatsr::harness::dataset::generate;
use splatsr::harness::train::{backbone_self_psnr, build_caches, pretrain_backbone, Trainer};

fn smoke(scenes: usize, steps: usize) -> RunConfig {
    let mut c = RunConfig::smoke();
    c.set("scenes", &scenes.to_string()).unwrap();
    c.set("steps", &steps.to_string()).unwrap();
    c.finish().unwrap();
    c
}

#[test]
fn backbone_reproduces_its_inputs() {
    let c = smoke(16, 1);
    let train = generate(&c.data, 0, c.data.scenes).unwrap();
    let held_out = generate(&c.data, c.data.scenes, c.eval_scenes).unwrap();
    let (bb, losses) = pretrain_backbone(&train, &c.network, &c.train).unwrap();
    assert!(losses.last().unwrap() < &losses[0]);
    let p = backbone_self_psnr(&bb, &held_out, &c.train).unwrap();
    assert!(p > 25.0, "self-view PSNR {p:.2} dB");
}

#[test]
fn short_smoke_run_reduces_loss_and_resumes_exactly() {
    let c = smoke(8, 200);
    let samples = generate(&c.data, 0, c.data.scenes).unwrap();
    let (bb, _) = pretrain_backbone(&samples, &c.network, &c.train).unwrap();
    let mut tr = Trainer::new(c.train.clone(), c.network.clone()).unwrap();
    let caches = build_caches(&bb, &tr.network, &samples, &c.train).unwrap();
    let rows = tr.run(&caches, &mut std::io::sink()).unwrap();
    assert_eq!(rows.len(), 200);
    let tail = rows[190..].iter().map(|r| r.loss).sum::<f64>() / 10.0;
    assert!(tail < rows[0].loss, "smoothed {tail} vs initial {}", rows[0].loss);

    // Four steps straight through equal two, a checkpoint round trip, and two more.
    let mut short = c.train.clone();
    short.steps = 4;
    let mut a = Trainer::new(short.clone(), c.network.clone()).unwrap();
    a.run(&caches, &mut std::io::sink()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let mut b = Trainer::new(short.clone(), c.network.clone()).unwrap();
    b.step_once(&caches, false).unwrap();
    b.step_once(&caches, false).unwrap();
    b.save(&ckpt).unwrap();
    let mut b = Trainer::new(short, c.network.clone()).unwrap();
    b.resume(&ckpt).unwrap();
    assert_eq!(b.step, 2);
    b.run(&caches, &mut std::io::sink()).unwrap();
    for i in 0..a.network.store.len() {
        assert_eq!(a.network.store.data(i), b.network.store.data(i), "{}", a.network.store.name(i));
    }
}
