use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use vodepth::dataset::Sample;
use vodepth::harness::config::{Ablation, TrainConfig};
use vodepth::harness::model::{build_step, forward_model, Model};
use vodepth::losses::LossWeights;
use vodepth::synth::{generate_scene, SceneSpec, VoMode};
use vodepth::Tape;

fn sample() -> Sample<f32> {
    let spec = SceneSpec::standard(64, 128, VoMode::Stereo).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let scene = generate_scene(&spec, &mut rng).unwrap();
    Sample {
        left: scene.left.cast(),
        right: scene.right.cast(),
        gt_left: scene.gt_left.cast(),
        gt_right: scene.gt_right.cast(),
        sparse_left: scene.sparse_left.cast(),
        sparse_right: scene.sparse_right.cast(),
        rig: spec.rig,
    }
}

fn time(name: &str, mut f: impl FnMut()) {
    let t0 = Instant::now();
    let mut reps = 0u32;
    while t0.elapsed().as_secs_f64() < 1.0 {
        f();
        reps += 1;
    }
    println!("{name:30} {:8.1} ms", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);
}

#[test]
#[ignore]
fn step_segments() {
    let s = sample();
    let model = Model::<f32>::new(17, 5).unwrap();
    let weights = LossWeights::default();
    let cfg = TrainConfig::default();
    let n = model.store.len();
    drop(cfg);

    time("prior branch only (fwd)", || {
        let mut tape = Tape::new();
        forward_model(&mut tape, &model, &s, Ablation::None, false).unwrap();
    });
    time("full forward (no loss)", || {
        let mut tape = Tape::new();
        forward_model(&mut tape, &model, &s, Ablation::None, true).unwrap();
    });
    time("full fwd + loss", || {
        let mut tape = Tape::new();
        build_step(&mut tape, &model, &s, Ablation::None, &weights).unwrap();
    });
    time("full fwd + loss + backward", || {
        let mut tape = Tape::new();
        let st = build_step(&mut tape, &model, &s, Ablation::None, &weights).unwrap();
        let _ = tape.backward_detached(st.loss, n).unwrap();
    });
    time("noprior fwd + loss", || {
        let mut tape = Tape::new();
        build_step(&mut tape, &model, &s, Ablation::NoPrior, &weights).unwrap();
    });
    time("noprior fwd + loss + backward", || {
        let mut tape = Tape::new();
        let st = build_step(&mut tape, &model, &s, Ablation::NoPrior, &weights).unwrap();
        let _ = tape.backward_detached(st.loss, n).unwrap();
    });
    time("estimator fwd only", || {
        let mut tape = Tape::new();
        let img = tape.leaf(s.left.clone());
        let _ = model.estimator.forward(&mut tape, &model.store, img).unwrap();
    });
    time("autoencoder fwd only", || {
        let mut tape = Tape::new();
        let v = tape.leaf(s.sparse_left.values.clone());
        let m = tape.leaf(s.sparse_left.mask.clone());
        let _ = model
            .autoencoder
            .forward(&mut tape, &model.store, v, m)
            .unwrap();
    });
    time("estimator fwd+bwd", || {
        let mut tape = Tape::new();
        let img = tape.leaf(s.left.clone());
        let pyr = model.estimator.forward(&mut tape, &model.store, img).unwrap();
        let d = pyr.scales[0].disparity;
        let loss = tape.mean(d).unwrap();
        let _ = tape.backward_detached(loss, n).unwrap();
    });
    time("autoencoder fwd+bwd", || {
        let mut tape = Tape::new();
        let v = tape.leaf(s.sparse_left.values.clone());
        let m = tape.leaf(s.sparse_left.mask.clone());
        let p = model
            .autoencoder
            .forward(&mut tape, &model.store, v, m)
            .unwrap();
        let loss = tape.mean(p.values).unwrap();
        let _ = tape.backward_detached(loss, n).unwrap();
    });
}
