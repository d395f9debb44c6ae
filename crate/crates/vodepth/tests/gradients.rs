//! Finite-difference verification of every differentiable operation and of
//! the assembled training objective, all in f64.
//!
//! Central differences cannot cross a non-smooth point, so inputs are nudged
//! away from kink neighborhoods before checking: pool windows get tie-free
//! values, warp coordinates keep a margin from integer crossings and borders,
//! and L1-style terms keep their arguments away from zero. The margins are
//! orders of magnitude wider than the probe step.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vodepth::dataset::Sample;
use vodepth::gradcheck::{check_input_gradients, check_param_gradients, CheckSettings};
use vodepth::harness::config::Ablation;
use vodepth::harness::model::{build_step, Model};
use vodepth::losses::{LossWeights, MaskedTarget};
use vodepth::ops::WarpDirection;
use vodepth::synth::{generate_scene, SceneSpec, VoMode};
use vodepth::tape::{NodeId, Tape};
use vodepth::tensor::Tensor;

/// Margin kept between inputs and the nearest non-smooth point; the FD step
/// is 1e-5, so 0.05 leaves no way to cross a kink.
const MARGIN: f64 = 0.05;

/// Moves every element at least `MARGIN` away from zero, keeping its sign.
fn keep_off_zero(t: &mut Tensor<f64>) {
    for v in t.data_mut() {
        if v.abs() < MARGIN {
            *v = if *v >= 0.0 { MARGIN } else { -MARGIN };
        }
    }
}

/// Separates neighboring values (along x and y) by at least `gap` so L1
/// difference terms stay away from their kink.
fn separate_adjacent(t: &mut Tensor<f64>, gap: f64) {
    let (n, c, h, w) = t.dims4().unwrap();
    for _ in 0..6 {
        let mut changed = false;
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let v = t.at4(ni, ci, y, x);
                        if x + 1 < w {
                            let u = t.at4(ni, ci, y, x + 1);
                            if (u - v).abs() < gap {
                                t.set4(ni, ci, y, x + 1, v + gap * 1.5 * (x as f64 % 2.0 * 2.0 - 1.0));
                                changed = true;
                            }
                        }
                        if y + 1 < h {
                            let u = t.at4(ni, ci, y + 1, x);
                            if (u - v).abs() < gap {
                                t.set4(ni, ci, y + 1, x, v + gap * 1.5 * (y as f64 % 2.0 * 2.0 - 1.0));
                                changed = true;
                            }
                        }
                    }
                }
            }
        }
        if !changed {
            return;
        }
    }
    panic!("could not separate adjacent values");
}

/// Makes every pooling window tie-free: any two values a window can see end
/// up at least `gap` apart.
fn separate_window_ties(t: &mut Tensor<f64>, k: usize, stride: usize, pad: usize, gap: f64) {
    let (n, c, h, w) = t.dims4().unwrap();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    for sweep in 0..20 {
        let mut changed = false;
        for ni in 0..n {
            for ci in 0..c {
                for yo in 0..ho {
                    for xo in 0..wo {
                        let mut seen: Vec<(usize, usize)> = Vec::new();
                        for ky in 0..k {
                            for kx in 0..k {
                                let yi = (yo * stride + ky) as isize - pad as isize;
                                let xi = (xo * stride + kx) as isize - pad as isize;
                                if yi < 0 || yi >= h as isize || xi < 0 || xi >= w as isize {
                                    continue;
                                }
                                let (yi, xi) = (yi as usize, xi as usize);
                                let v = t.at4(ni, ci, yi, xi);
                                for &(py, px) in &seen {
                                    if (v - t.at4(ni, ci, py, px)).abs() < gap {
                                        t.set4(ni, ci, yi, xi, v + gap * (1.0 + sweep as f64));
                                        changed = true;
                                    }
                                }
                                seen.push((yi, xi));
                            }
                        }
                    }
                }
            }
        }
        if !changed {
            return;
        }
    }
    panic!("could not separate pooling ties");
}

/// Adjusts disparities so every sampling coordinate keeps `MARGIN` from
/// integer crossings and from the clamped borders.
fn keep_warp_smooth(disp: &mut Tensor<f64>, direction: f64, w: usize) {
    let (n, _, h, wd) = disp.dims4().unwrap();
    for ni in 0..n {
        for y in 0..h {
            for x in 0..wd {
                let d = disp.at4(ni, 0, y, x);
                let mut u = (x as f64 + direction * d).clamp(MARGIN, (w - 1) as f64 - MARGIN);
                let frac = u - u.floor();
                if frac < MARGIN {
                    u = u.floor() + MARGIN;
                } else if frac > 1.0 - MARGIN {
                    u = u.floor() + 1.0 - MARGIN;
                }
                disp.set4(ni, 0, y, x, (u - x as f64) / direction);
            }
        }
    }
}

fn probe_loss(
    tape: &mut Tape<f64>,
    out: NodeId,
    probe: &Tensor<f64>,
) -> vodepth::error::Result<NodeId> {
    let p = tape.leaf(probe.clone());
    let weighted = tape.mul(out, p)?;
    tape.mean(weighted)
}

fn check(inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[NodeId]) -> vodepth::error::Result<NodeId>) {
    let worst =
        check_input_gradients(inputs, CheckSettings::default(), build).expect("gradient check");
    assert!(worst < 1e-4, "worst relative error {worst:.3e}");
}

#[test]
fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    for &(k, stride, pad) in &[(1usize, 1usize, 0usize), (3, 1, 1), (3, 2, 1), (5, 1, 2), (3, 1, 0), (3, 2, 0)] {
        let (h, wd) = (rng.gen_range(5..=8), rng.gen_range(5..=8));
        let (cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        let x = Tensor::rand_uniform(&[1, cin, h, wd], -1.0, 1.0, &mut rng);
        let w = Tensor::rand_uniform(&[cout, cin, k, k], -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(&[cout], -0.5, 0.5, &mut rng);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let probe = Tensor::rand_uniform(&[1, cout, ho, wo], -1.0, 1.0, &mut rng);
        check(&[x, w, b], |tape, ids| {
            let y = tape.conv2d(ids[0], ids[1], ids[2], stride, pad)?;
            probe_loss(tape, y, &probe)
        });
    }
}

#[test]
fn sparse_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for &k in &[1usize, 3, 5] {
        let (h, wd) = (rng.gen_range(5..=8), rng.gen_range(5..=8));
        let (cin, cout) = (1usize, rng.gen_range(1..=2));
        let x = Tensor::rand_uniform(&[1, cin, h, wd], -1.0, 1.0, &mut rng);
        let mdata: Vec<f64> = (0..h * wd)
            .map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 })
            .collect();
        let mask = Tensor::new(vec![1, 1, h, wd], mdata).unwrap();
        let w = Tensor::rand_uniform(&[cout, cin, k, k], -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(&[cout], -0.5, 0.5, &mut rng);
        let probe = Tensor::rand_uniform(&[1, cout, h, wd], -1.0, 1.0, &mut rng);
        check(&[x, w, b], |tape, ids| {
            let m = tape.leaf(mask.clone());
            let y = tape.sparse_conv2d(ids[0], m, ids[1], ids[2])?;
            probe_loss(tape, y, &probe)
        });
    }
}

#[test]
fn max_pool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    for &(k, stride, pad) in &[(2usize, 2usize, 0usize), (3, 1, 1), (3, 2, 1)] {
        let (h, wd) = (6usize, 8usize);
        let mut x = Tensor::rand_uniform(&[1, 2, h, wd], -1.0, 1.0, &mut rng);
        separate_window_ties(&mut x, k, stride, pad, 1e-2);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let probe = Tensor::rand_uniform(&[1, 2, ho, wo], -1.0, 1.0, &mut rng);
        check(&[x], |tape, ids| {
            let y = tape.max_pool2d(ids[0], k, stride, pad)?;
            probe_loss(tape, y, &probe)
        });
    }
}

#[test]
fn warp_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    for dir in [WarpDirection::Negative, WarpDirection::Positive] {
        let (h, wd) = (5usize, 8usize);
        let src = Tensor::rand_uniform(&[1, 2, h, wd], -1.0, 1.0, &mut rng);
        let mut disp = Tensor::rand_uniform(&[1, 1, h, wd], 0.0, 3.0, &mut rng);
        keep_warp_smooth(&mut disp, dir.sign_f64(), wd);
        let probe = Tensor::rand_uniform(&[1, 2, h, wd], -1.0, 1.0, &mut rng);
        check(&[src, disp], |tape, ids| {
            let y = tape.bilinear_warp(ids[0], ids[1], dir)?;
            probe_loss(tape, y, &probe)
        });
    }
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let shape = [1usize, 2, 4, 6];
    let probe = Tensor::rand_uniform(&shape, -1.0, 1.0, &mut rng);

    let mut a = Tensor::rand_uniform(&shape, -1.0, 1.0, &mut rng);
    keep_off_zero(&mut a);
    let b = Tensor::rand_uniform(&shape, 0.5, 2.0, &mut rng);

    check(&[a.clone(), b.clone()], |tape, ids| {
        let y = tape.add(ids[0], ids[1])?;
        probe_loss(tape, y, &probe)
    });
    check(&[a.clone(), b.clone()], |tape, ids| {
        let y = tape.sub(ids[0], ids[1])?;
        probe_loss(tape, y, &probe)
    });
    check(&[a.clone(), b.clone()], |tape, ids| {
        let y = tape.mul(ids[0], ids[1])?;
        probe_loss(tape, y, &probe)
    });
    check(&[a.clone(), b.clone()], |tape, ids| {
        let y = tape.div(ids[0], ids[1])?;
        probe_loss(tape, y, &probe)
    });
    check(&[a.clone()], |tape, ids| {
        let y = tape.abs(ids[0])?;
        probe_loss(tape, y, &probe)
    });
    check(&[a.clone()], |tape, ids| {
        let y = tape.elu(ids[0])?;
        probe_loss(tape, y, &probe)
    });
    check(&[a.clone()], |tape, ids| {
        let y = tape.sigmoid(ids[0])?;
        probe_loss(tape, y, &probe)
    });
    check(&[a.clone()], |tape, ids| {
        let y = tape.exp(ids[0])?;
        probe_loss(tape, y, &probe)
    });
    check(&[a.clone()], |tape, ids| {
        let y = tape.scale(ids[0], 1.7)?;
        let y = tape.add_scalar(y, 0.3)?;
        probe_loss(tape, y, &probe)
    });
    // Clamp bounds sit well outside the data so no element is at the kink.
    check(&[a.clone()], |tape, ids| {
        let y = tape.clamp(ids[0], -5.0, 5.0)?;
        probe_loss(tape, y, &probe)
    });
}

#[test]
fn reduction_and_resample_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(65);
    let shape = [1usize, 3, 4, 6];
    let a = Tensor::rand_uniform(&shape, -1.0, 1.0, &mut rng);

    check(&[a.clone()], |tape, ids| tape.mean(ids[0]));
    check(&[a.clone()], |tape, ids| {
        let s = tape.sum(ids[0])?;
        tape.scale(s, 0.01)
    });
    let probe1 = Tensor::rand_uniform(&[1, 1, 4, 6], -1.0, 1.0, &mut rng);
    check(&[a.clone()], |tape, ids| {
        let y = tape.mean_channels(ids[0])?;
        probe_loss(tape, y, &probe1)
    });
    let probe3 = Tensor::rand_uniform(&shape, -1.0, 1.0, &mut rng);
    check(&[a.clone()], |tape, ids| {
        let y = tape.mean_pool_same(ids[0], 3)?;
        probe_loss(tape, y, &probe3)
    });
    let probe_dn = Tensor::rand_uniform(&[1, 3, 2, 3], -1.0, 1.0, &mut rng);
    check(&[a.clone()], |tape, ids| {
        let y = tape.downsample_avg_x2(ids[0])?;
        probe_loss(tape, y, &probe_dn)
    });
    let probe_up = Tensor::rand_uniform(&[1, 3, 8, 12], -1.0, 1.0, &mut rng);
    check(&[a.clone()], |tape, ids| {
        let y = tape.upsample_bilinear_x2(ids[0])?;
        probe_loss(tape, y, &probe_up)
    });
    check(&[a.clone()], |tape, ids| {
        let y = tape.grad_x(ids[0])?;
        let p = Tensor::rand_uniform(&[1, 3, 4, 5], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        probe_loss(tape, y, &p)
    });
    check(&[a.clone()], |tape, ids| {
        let y = tape.grad_y(ids[0])?;
        let p = Tensor::rand_uniform(&[1, 3, 3, 6], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(10));
        probe_loss(tape, y, &p)
    });
    let b = Tensor::rand_uniform(&[1, 2, 4, 6], -1.0, 1.0, &mut rng);
    let probe_cat = Tensor::rand_uniform(&[1, 5, 4, 6], -1.0, 1.0, &mut rng);
    check(&[a.clone(), b], |tape, ids| {
        let y = tape.concat_channels(&[ids[0], ids[1]])?;
        probe_loss(tape, y, &probe_cat)
    });
    let probe_slice = Tensor::rand_uniform(&[1, 2, 4, 6], -1.0, 1.0, &mut rng);
    check(&[a], |tape, ids| {
        let y = tape.slice_channels(ids[0], 1, 2)?;
        probe_loss(tape, y, &probe_slice)
    });
}

#[test]
fn loss_term_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let (h, wd) = (5usize, 7usize);

    // Disjoint value ranges keep |a - b| away from the L1 kink and the SSIM
    // map away from its clamp.
    let a = Tensor::rand_uniform(&[1, 3, h, wd], 0.10, 0.42, &mut rng);
    let b = Tensor::rand_uniform(&[1, 3, h, wd], 0.58, 0.90, &mut rng);
    check(&[a.clone(), b.clone()], |tape, ids| tape.ssim_map(ids[0], ids[1]).and_then(|s| tape.mean(s)));
    check(&[a.clone(), b.clone()], |tape, ids| tape.appearance(ids[0], ids[1], 0.85));

    let mut d = Tensor::rand_uniform(&[1, 1, h, wd], 0.5, 4.0, &mut rng);
    separate_adjacent(&mut d, 1e-2);
    let mut img = Tensor::rand_uniform(&[1, 3, h, wd], 0.0, 1.0, &mut rng);
    separate_adjacent(&mut img, 1e-2);
    check(&[d.clone(), img], |tape, ids| tape.smoothness(ids[0], ids[1]));

    check(&[d.clone()], |tape, ids| tape.occlusion(ids[0]));

    // The other map sits a constant offset above the reference so the
    // consistency difference never changes sign under the probe step.
    let mut d_ref = Tensor::rand_uniform(&[1, 1, h, wd], 0.2, 2.5, &mut rng);
    keep_warp_smooth(&mut d_ref, -1.0, wd);
    let d_other = d_ref.map(|v| v + 1.5);
    check(&[d_ref, d_other], |tape, ids| {
        tape.lr_consistency(ids[0], ids[1], WarpDirection::Negative)
    });

    // Masked L1 with a margin between prediction and target where the mask
    // is on.
    let pred = Tensor::rand_uniform(&[1, 1, h, wd], 2.0, 3.0, &mut rng);
    let target = Tensor::rand_uniform(&[1, 1, h, wd], 0.0, 1.0, &mut rng);
    let mdata: Vec<f64> = (0..h * wd)
        .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
        .collect();
    let mask = Tensor::new(vec![1, 1, h, wd], mdata).unwrap();
    check(&[pred, target], |tape, ids| {
        let m = tape.leaf(mask.clone());
        tape.masked_l1(MaskedTarget {
            prediction: ids[0],
            target: ids[1],
            mask: m,
        })
    });
}

/// End-to-end: the recorded parameter gradients of the full objective match
/// finite differences on a small scene, under the full model and the
/// stereo-only ablation.
#[test]
fn model_parameter_gradients() {
    let spec = SceneSpec::standard(16, 32, VoMode::Stereo).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let scene = generate_scene(&spec, &mut rng).unwrap();
    let sample = Sample {
        left: scene.left,
        right: scene.right,
        gt_left: scene.gt_left,
        gt_right: scene.gt_right,
        sparse_left: scene.sparse_left,
        sparse_right: scene.sparse_right,
        rig: spec.rig,
    };
    let weights = LossWeights::default();
    for ablation in [Ablation::None, Ablation::NoPrior] {
        let mut model = Model::<f64>::new(7, 4).unwrap();
        let mut pick = ChaCha8Rng::seed_from_u64(68);
        let worst = check_param_gradients(
            &mut model.store,
            CheckSettings::default(),
            Some((&mut pick, 20)),
            |tape, store| {
                let shadow = Model {
                    store: store.clone(),
                    autoencoder: model.autoencoder.clone(),
                    skip: model.skip.clone(),
                    estimator: model.estimator.clone(),
                };
                Ok(build_step(tape, &shadow, &sample, ablation, &weights)?.loss)
            },
        )
        .expect("model gradient check");
        assert!(worst < 1e-4, "{ablation:?}: worst relative error {worst:.3e}");
    }
}
