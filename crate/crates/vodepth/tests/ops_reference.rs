//! Agreement between the production kernels and the straight-loop references.
//!
//! Forward references live in `vodepth::reference`; the gradient references
//! here are written the same way (plain loops, no shared code with `ops`).
//! All comparisons run in f64.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vodepth::ops::{
    conv2d_bias_grad, conv2d_forward, conv2d_input_grad, conv2d_weight_grad, max_pool2d_forward,
    WarpDirection,
};
use vodepth::reference;
use vodepth::tape::Tape;
use vodepth::tensor::Tensor;

const TOL: f64 = 1e-10;

fn assert_close(got: &Tensor<f64>, want: &Tensor<f64>, what: &str) {
    assert_eq!(got.shape(), want.shape(), "{what}: shape mismatch");
    for i in 0..got.numel() {
        let (p, q) = (got.data()[i], want.data()[i]);
        let diff = (p - q).abs();
        let scale = p.abs().max(q.abs()).max(1.0);
        assert!(
            diff <= TOL * scale,
            "{what}: element {i}: {p:.12e} vs {q:.12e} (diff {diff:.3e})"
        );
    }
}

fn assert_scalar_close(got: f64, want: f64, what: &str) {
    let diff = (got - want).abs();
    let scale = got.abs().max(want.abs()).max(1.0);
    assert!(
        diff <= TOL * scale,
        "{what}: {got:.12e} vs {want:.12e} (diff {diff:.3e})"
    );
}

/// Conv instance shapes: small odd sizes for the plain paths, wide rows for
/// the register-blocked paths, strides 1 and 2, pads from 0 to k-1.
fn conv_cases() -> Vec<(usize, usize, usize, usize, usize, usize, usize, usize)> {
    let mut cases = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for &(k, stride) in &[(1, 1), (3, 1), (3, 2), (5, 1), (5, 2), (9, 1)] {
        for &pad in &[0usize, (k - 1) / 2, k - 1] {
            let n = rng.gen_range(1..=2);
            let cin = rng.gen_range(1..=3);
            let cout = rng.gen_range(1..=4);
            let h = rng.gen_range(k.max(4)..=k.max(4) + 5);
            let wd = rng.gen_range(k.max(4)..=k.max(4) + 5);
            cases.push((n, cin, cout, h, wd, k, stride, pad));
            // Wide rows exercise the tiled kernels (output width >= 16).
            let hw = rng.gen_range(k.max(4)..=k.max(4) + 3);
            let ww = rng.gen_range(24..=40);
            cases.push((n, cin, cout, hw, ww, k, stride, pad));
        }
    }
    cases
}

fn conv2d_input_grad_ref(
    gy: &Tensor<f64>,
    w: &Tensor<f64>,
    x_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let (n, cin, h, wd) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (cout, _, k, _) = w.dims4().unwrap();
    let (_, _, ho, wo) = gy.dims4().unwrap();
    let mut gx = Tensor::zeros(x_shape);
    for ni in 0..n {
        for co in 0..cout {
            for yo in 0..ho {
                for xo in 0..wo {
                    let g = gy.at4(ni, co, yo, xo);
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let yi = (yo * stride + ky) as isize - pad as isize;
                                let xi = (xo * stride + kx) as isize - pad as isize;
                                if yi >= 0 && yi < h as isize && xi >= 0 && xi < wd as isize {
                                    let (yi, xi) = (yi as usize, xi as usize);
                                    let v = gx.at4(ni, ci, yi, xi)
                                        + w.at4(co, ci, ky, kx) * g;
                                    gx.set4(ni, ci, yi, xi, v);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

fn conv2d_weight_grad_ref(
    gy: &Tensor<f64>,
    x: &Tensor<f64>,
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, k) = (w_shape[0], w_shape[2]);
    let (_, _, ho, wo) = gy.dims4().unwrap();
    let mut gw = Tensor::zeros(w_shape);
    for co in 0..cout {
        for ci in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for ni in 0..n {
                        for yo in 0..ho {
                            for xo in 0..wo {
                                let yi = (yo * stride + ky) as isize - pad as isize;
                                let xi = (xo * stride + kx) as isize - pad as isize;
                                if yi >= 0 && yi < h as isize && xi >= 0 && xi < wd as isize {
                                    acc += gy.at4(ni, co, yo, xo)
                                        * x.at4(ni, ci, yi as usize, xi as usize);
                                }
                            }
                        }
                    }
                    gw.set4(co, ci, ky, kx, acc);
                }
            }
        }
    }
    gw
}

#[test]
fn conv_forward_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for (n, cin, cout, h, wd, k, stride, pad) in conv_cases() {
        let x = Tensor::rand_uniform(&[n, cin, h, wd], -1.0, 1.0, &mut rng);
        let w = Tensor::rand_uniform(&[cout, cin, k, k], -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(&[cout], -0.5, 0.5, &mut rng);
        let got = conv2d_forward(&x, &w, &b, stride, pad).unwrap();
        let want = reference::conv2d_naive(&x, &w, &b, stride, pad);
        assert_close(
            &got,
            &want,
            &format!("conv fwd n{n} c{cin}->{cout} {h}x{wd} k{k} s{stride} p{pad}"),
        );
    }
}

#[test]
fn conv_input_grad_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for (n, cin, cout, h, wd, k, stride, pad) in conv_cases() {
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let gy = Tensor::rand_uniform(&[n, cout, ho, wo], -1.0, 1.0, &mut rng);
        let w = Tensor::rand_uniform(&[cout, cin, k, k], -1.0, 1.0, &mut rng);
        let got = conv2d_input_grad(&gy, &[n, cin, h, wd], &w, stride, pad);
        let want = conv2d_input_grad_ref(&gy, &w, &[n, cin, h, wd], stride, pad);
        assert_close(
            &got,
            &want,
            &format!("conv igrad n{n} c{cin}->{cout} {h}x{wd} k{k} s{stride} p{pad}"),
        );
    }
}

#[test]
fn conv_weight_grad_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for (n, cin, cout, h, wd, k, stride, pad) in conv_cases() {
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let gy = Tensor::rand_uniform(&[n, cout, ho, wo], -1.0, 1.0, &mut rng);
        let x = Tensor::rand_uniform(&[n, cin, h, wd], -1.0, 1.0, &mut rng);
        let got = conv2d_weight_grad(&gy, &x, &[cout, cin, k, k], stride, pad);
        let want = conv2d_weight_grad_ref(&gy, &x, &[cout, cin, k, k], stride, pad);
        assert_close(
            &got,
            &want,
            &format!("conv wgrad n{n} c{cin}->{cout} {h}x{wd} k{k} s{stride} p{pad}"),
        );
    }
}

#[test]
fn conv_bias_grad_is_channel_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let gy = Tensor::rand_uniform(&[2, 3, 5, 7], -1.0, 1.0, &mut rng);
    let got = conv2d_bias_grad(&gy);
    let mut want = Tensor::zeros(&[3]);
    for ni in 0..2 {
        for co in 0..3 {
            for y in 0..5 {
                for x in 0..7 {
                    want.data_mut()[co] += gy.at4(ni, co, y, x);
                }
            }
        }
    }
    assert_close(&got, &want, "bias grad");
}

#[test]
fn max_pool_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    for &(k, stride, pad) in &[(2, 2, 0), (3, 1, 1), (3, 2, 1), (5, 1, 2), (9, 1, 4)] {
        for _ in 0..4 {
            let h = rng.gen_range(k..=k + 9);
            let wd = rng.gen_range(k..=k + 9);
            let x = Tensor::rand_uniform(&[2, 2, h, wd], -1.0, 1.0, &mut rng);
            let (got, _) = max_pool2d_forward(&x, k, stride, pad).unwrap();
            let want = reference::max_pool2d_naive(&x, k, stride, pad);
            assert_close(&got, &want, &format!("max pool {h}x{wd} k{k} s{stride} p{pad}"));
        }
    }
}

#[test]
fn sparse_conv_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    for trial in 0..20 {
        let cin = rng.gen_range(1..=3);
        let cout = rng.gen_range(1..=3);
        let k = [1, 3, 5, 9][trial % 4];
        let h = rng.gen_range(4..=9);
        let wd = rng.gen_range(4..=20);
        let x = Tensor::rand_uniform(&[1, cin, h, wd], -1.0, 1.0, &mut rng);
        let mdata: Vec<f64> = (0..h * wd)
            .map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
            .collect();
        let m = Tensor::new(vec![1, 1, h, wd], mdata).unwrap();
        let w = Tensor::rand_uniform(&[cout, cin, k, k], -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(&[cout], -0.5, 0.5, &mut rng);
        let mut tape = Tape::new();
        let (xi, mi) = (tape.leaf(x.clone()), tape.leaf(m.clone()));
        let (wi, bi) = (tape.leaf(w.clone()), tape.leaf(b.clone()));
        let y = tape.sparse_conv2d(xi, mi, wi, bi).unwrap();
        let want = reference::sparse_conv2d_naive(&x, &m, &w, &b);
        assert_close(tape.value(y), &want, &format!("sparse conv trial {trial} k{k}"));
    }
}

#[test]
fn bilinear_warp_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(48);
    for trial in 0..20 {
        let c = rng.gen_range(1..=3);
        let h = rng.gen_range(4..=8);
        let wd = rng.gen_range(4..=10);
        let src = Tensor::rand_uniform(&[1, c, h, wd], -1.0, 1.0, &mut rng);
        let disp = Tensor::rand_uniform(&[1, 1, h, wd], 0.0, wd as f64 * 0.6, &mut rng);
        for dir in [WarpDirection::Negative, WarpDirection::Positive] {
            let mut tape = Tape::new();
            let (si, di) = (tape.leaf(src.clone()), tape.leaf(disp.clone()));
            let y = tape.bilinear_warp(si, di, dir).unwrap();
            let want = reference::bilinear_warp_naive(&src, &disp, dir.sign_f64());
            assert_close(
                tape.value(y),
                &want,
                &format!("warp trial {trial} dir {:?}", dir),
            );
        }
    }
}

#[test]
fn ssim_and_appearance_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(49);
    for trial in 0..20 {
        let c = rng.gen_range(1..=3);
        let h = rng.gen_range(4..=8);
        let wd = rng.gen_range(4..=10);
        let a = Tensor::rand_uniform(&[1, c, h, wd], 0.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(&[1, c, h, wd], 0.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let (ai, bi) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
        let s = tape.ssim_map(ai, bi).unwrap();
        assert_close(tape.value(s), &reference::ssim_naive(&a, &b), &format!("ssim {trial}"));
        let app = tape.appearance(ai, bi, 0.85).unwrap();
        assert_scalar_close(
            tape.scalar_value(app),
            reference::appearance_naive(&a, &b, 0.85),
            &format!("appearance {trial}"),
        );
    }
}

#[test]
fn smoothness_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for trial in 0..20 {
        let c = rng.gen_range(1..=3);
        let h = rng.gen_range(4..=8);
        let wd = rng.gen_range(4..=10);
        let d = Tensor::rand_uniform(&[1, 1, h, wd], 0.0, 5.0, &mut rng);
        let img = Tensor::rand_uniform(&[1, c, h, wd], 0.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let (di, ii) = (tape.leaf(d.clone()), tape.leaf(img.clone()));
        let s = tape.smoothness(di, ii).unwrap();
        assert_scalar_close(
            tape.scalar_value(s),
            reference::smoothness_naive(&d, &img),
            &format!("smoothness {trial}"),
        );
    }
}

#[test]
fn lr_consistency_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for trial in 0..20 {
        let h = rng.gen_range(4..=8);
        let wd = rng.gen_range(4..=10);
        let d_ref = Tensor::rand_uniform(&[1, 1, h, wd], 0.0, 3.0, &mut rng);
        let d_other = Tensor::rand_uniform(&[1, 1, h, wd], 0.0, 3.0, &mut rng);
        for dir in [WarpDirection::Negative, WarpDirection::Positive] {
            let mut tape = Tape::new();
            let (ri, oi) = (tape.leaf(d_ref.clone()), tape.leaf(d_other.clone()));
            let l = tape.lr_consistency(ri, oi, dir).unwrap();
            assert_scalar_close(
                tape.scalar_value(l),
                reference::lr_consistency_naive(&d_ref, &d_other, dir.sign_f64()),
                &format!("lr consistency {trial} {:?}", dir),
            );
        }
    }
}

#[test]
fn mask_propagation_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let kernels = [9usize, 5, 3, 3, 1];
    for trial in 0..10 {
        let h = rng.gen_range(6..=12);
        let wd = rng.gen_range(6..=12);
        let mdata: Vec<f64> = (0..h * wd)
            .map(|_| if rng.gen_bool(0.15) { 1.0 } else { 0.0 })
            .collect();
        let m = Tensor::new(vec![1, 1, h, wd], mdata).unwrap();
        let mut tape = Tape::new();
        let mut cur = tape.leaf(m.clone());
        for &k in &kernels {
            cur = tape.propagate_mask(cur, k).unwrap();
        }
        let want = reference::mask_propagation_naive(&m, &kernels);
        assert_close(tape.value(cur), &want, &format!("mask propagation {trial}"));
    }
}

/// The f32 instantiation of the conv kernels agrees with the f64 reference to
/// single-precision accuracy.
#[test]
fn conv_forward_f32_tracks_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let x = Tensor::<f64>::rand_uniform(&[1, 3, 8, 24], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::rand_uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut rng);
    let b = Tensor::<f64>::rand_uniform(&[4], -0.5, 0.5, &mut rng);
    let got = conv2d_forward(&x.cast::<f32>(), &w.cast::<f32>(), &b.cast::<f32>(), 1, 1).unwrap();
    let want = reference::conv2d_naive(&x, &w, &b, 1, 1);
    for i in 0..want.numel() {
        let (p, q) = (got.data()[i] as f64, want.data()[i]);
        assert!(
            (p - q).abs() <= 1e-4 * p.abs().max(q.abs()).max(1.0),
            "f32 conv element {i}: {p} vs {q}"
        );
    }
}
