//! Independent straight-loop reference implementations.
//!
//! Everything in this module is written as plainly as possible — sextuple
//! loops, explicit bounds tests, no shared code with the production kernels —
//! so the verification suites can compare the two routes. Keep it that way:
//! fixes belong in `ops`, not here. All references run in f64.

use crate::tensor::Tensor;

/// Cross-correlation with zero padding. Accumulates over (ci, ky, kx) per
/// output element, then adds the bias, skipping out-of-bounds taps.
pub fn conv2d_naive(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, cin_w, k, _) = w.dims4().unwrap();
    assert_eq!(cin, cin_w);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    for ni in 0..n {
        for co in 0..cout {
            for yo in 0..ho {
                for xo in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let yi = (yo * stride + ky) as isize - pad as isize;
                                let xi = (xo * stride + kx) as isize - pad as isize;
                                if yi >= 0 && yi < h as isize && xi >= 0 && xi < wd as isize {
                                    acc += w.at4(co, ci, ky, kx)
                                        * x.at4(ni, ci, yi as usize, xi as usize);
                                }
                            }
                        }
                    }
                    out.set4(ni, co, yo, xo, acc + b.data()[co]);
                }
            }
        }
    }
    out
}

/// Max pooling with padded cells at negative infinity; ties resolve to the
/// first maximal element in (ky, kx) scan order.
pub fn max_pool2d_naive(x: &Tensor<f64>, k: usize, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, w) = x.dims4().unwrap();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    for ni in 0..n {
        for ci in 0..c {
            for yo in 0..ho {
                for xo in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            let yi = (yo * stride + ky) as isize - pad as isize;
                            let xi = (xo * stride + kx) as isize - pad as isize;
                            if yi >= 0 && yi < h as isize && xi >= 0 && xi < w as isize {
                                let v = x.at4(ni, ci, yi as usize, xi as usize);
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                    }
                    out.set4(ni, ci, yo, xo, best);
                }
            }
        }
    }
    out
}

/// Normalized masked convolution, stride 1, same padding:
/// `y = sum(w * x * m) / (count of valid window pixels + 1e-8) + b`.
pub fn sparse_conv2d_naive(
    x: &Tensor<f64>,
    m: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
) -> Tensor<f64> {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, _, k, _) = w.dims4().unwrap();
    let pad = (k - 1) / 2;
    let mut out = Tensor::zeros(&[n, cout, h, wd]);
    for ni in 0..n {
        for co in 0..cout {
            for yo in 0..h {
                for xo in 0..wd {
                    let mut den = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            let yi = (yo + ky) as isize - pad as isize;
                            let xi = (xo + kx) as isize - pad as isize;
                            if yi >= 0 && yi < h as isize && xi >= 0 && xi < wd as isize {
                                den += m.at4(ni, 0, yi as usize, xi as usize);
                            }
                        }
                    }
                    let mut num = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let yi = (yo + ky) as isize - pad as isize;
                                let xi = (xo + kx) as isize - pad as isize;
                                if yi >= 0 && yi < h as isize && xi >= 0 && xi < wd as isize {
                                    num += w.at4(co, ci, ky, kx)
                                        * x.at4(ni, ci, yi as usize, xi as usize)
                                        * m.at4(ni, 0, yi as usize, xi as usize);
                                }
                            }
                        }
                    }
                    out.set4(ni, co, yo, xo, num / (den + 1e-8) + b.data()[co]);
                }
            }
        }
    }
    out
}

/// Horizontal two-tap interpolation: sample `src` at `x + direction * disp`,
/// with the sampling coordinate clamped to the image border.
pub fn bilinear_warp_naive(src: &Tensor<f64>, disp: &Tensor<f64>, direction: f64) -> Tensor<f64> {
    let (n, c, h, w) = src.dims4().unwrap();
    let mut out = Tensor::zeros(&[n, c, h, w]);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 + direction * disp.at4(ni, 0, y, x))
                        .clamp(0.0, (w - 1) as f64);
                    let x0 = u.floor() as usize;
                    let (x0, x1, a) = if x0 >= w - 1 {
                        (w - 1, w - 1, 0.0)
                    } else {
                        (x0, x0 + 1, u - x0 as f64)
                    };
                    let v = (1.0 - a) * src.at4(ni, ci, y, x0) + a * src.at4(ni, ci, y, x1);
                    out.set4(ni, ci, y, x, v);
                }
            }
        }
    }
    out
}

/// Valid-count 3x3 local mean (the window statistic underlying SSIM).
fn mean3(x: &Tensor<f64>) -> Tensor<f64> {
    let (n, c, h, w) = x.dims4().unwrap();
    let mut out = Tensor::zeros(&[n, c, h, w]);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x0 in 0..w {
                    let mut sum = 0.0;
                    let mut cnt = 0.0;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let yy = y as i64 + dy;
                            let xx = x0 as i64 + dx;
                            if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                                sum += x.at4(ni, ci, yy as usize, xx as usize);
                                cnt += 1.0;
                            }
                        }
                    }
                    out.set4(ni, ci, y, x0, sum / cnt);
                }
            }
        }
    }
    out
}

/// Per-pixel SSIM by direct evaluation of the formula with 3x3 mean-pool
/// statistics, C1 = 0.01^2, C2 = 0.03^2, clipped to [-1, 1].
pub fn ssim_naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let mu_a = mean3(a);
    let mu_b = mean3(b);
    let aa = mean3(&a.zip_map(a, "mul", |p, q| p * q).unwrap());
    let bb = mean3(&b.zip_map(b, "mul", |p, q| p * q).unwrap());
    let ab = mean3(&a.zip_map(b, "mul", |p, q| p * q).unwrap());
    let (n, c, h, w) = a.dims4().unwrap();
    let mut out = Tensor::zeros(&[n, c, h, w]);
    for i in 0..out.numel() {
        let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
        let va = aa.data()[i] - ma * ma;
        let vb = bb.data()[i] - mb * mb;
        let vab = ab.data()[i] - ma * mb;
        let ssim = ((2.0 * ma * mb + c1) * (2.0 * vab + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        out.data_mut()[i] = ssim.clamp(-1.0, 1.0);
    }
    let _ = (n, c, h, w);
    out
}

/// Edge-aware smoothness: forward differences, weights `exp(-mean_c |grad I|)`,
/// x-term averaged over H*(W-1) entries and y-term over (H-1)*W.
pub fn smoothness_naive(d: &Tensor<f64>, img: &Tensor<f64>) -> f64 {
    let (_, c, h, w) = img.dims4().unwrap();
    let mut sum_x = 0.0;
    for y in 0..h {
        for x in 0..w - 1 {
            let dd = (d.at4(0, 0, y, x + 1) - d.at4(0, 0, y, x)).abs();
            let mut gi = 0.0;
            for ci in 0..c {
                gi += (img.at4(0, ci, y, x + 1) - img.at4(0, ci, y, x)).abs();
            }
            sum_x += dd * (-(gi / c as f64)).exp();
        }
    }
    let mut sum_y = 0.0;
    for y in 0..h - 1 {
        for x in 0..w {
            let dd = (d.at4(0, 0, y + 1, x) - d.at4(0, 0, y, x)).abs();
            let mut gi = 0.0;
            for ci in 0..c {
                gi += (img.at4(0, ci, y + 1, x) - img.at4(0, ci, y, x)).abs();
            }
            sum_y += dd * (-(gi / c as f64)).exp();
        }
    }
    sum_x / (h * (w - 1)) as f64 + sum_y / ((h - 1) * w) as f64
}

/// Mean of `|d_ref(x) - d_other(x + direction * d_ref(x))|` with the same
/// two-tap border-clamped sampling as `bilinear_warp_naive`.
pub fn lr_consistency_naive(d_ref: &Tensor<f64>, d_other: &Tensor<f64>, direction: f64) -> f64 {
    let warped = bilinear_warp_naive(d_other, d_ref, direction);
    let (_, _, h, w) = d_ref.dims4().unwrap();
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            sum += (d_ref.at4(0, 0, y, x) - warped.at4(0, 0, y, x)).abs();
        }
    }
    sum / (h * w) as f64
}

/// Appearance term: mean over elements of
/// `gamma * (1 - SSIM)/2 + (1 - gamma) * |a - b|`.
pub fn appearance_naive(a: &Tensor<f64>, b: &Tensor<f64>, gamma: f64) -> f64 {
    let ssim = ssim_naive(a, b);
    let mut sum = 0.0;
    for i in 0..a.numel() {
        sum += gamma * (1.0 - ssim.data()[i]) / 2.0
            + (1.0 - gamma) * (a.data()[i] - b.data()[i]).abs();
    }
    sum / a.numel() as f64
}

/// Depth-error metrics over one prediction/ground-truth pair of depth maps,
/// both already clamped to the evaluation range; `valid` marks pixels to score.
pub struct NaiveMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub pixels: usize,
}

pub fn depth_metrics_naive(pred: &[f64], gt: &[f64], valid: &[bool]) -> NaiveMetrics {
    let mut abs_rel = 0.0;
    let mut sq_rel = 0.0;
    let mut se = 0.0;
    let mut se_log = 0.0;
    let mut d1 = 0usize;
    let mut d2 = 0usize;
    let mut d3 = 0usize;
    let mut count = 0usize;
    for i in 0..pred.len() {
        if !valid[i] {
            continue;
        }
        let (z, zt) = (pred[i], gt[i]);
        abs_rel += (z - zt).abs() / zt;
        sq_rel += (z - zt) * (z - zt) / zt;
        se += (z - zt) * (z - zt);
        se_log += (z.ln() - zt.ln()) * (z.ln() - zt.ln());
        let ratio = (z / zt).max(zt / z);
        if ratio < 1.25 {
            d1 += 1;
        }
        if ratio < 1.25f64.powi(2) {
            d2 += 1;
        }
        if ratio < 1.25f64.powi(3) {
            d3 += 1;
        }
        count += 1;
    }
    let n = count as f64;
    NaiveMetrics {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (se / n).sqrt(),
        rmse_log: (se_log / n).sqrt(),
        d1: d1 as f64 / n,
        d2: d2 as f64 / n,
        d3: d3 as f64 / n,
        pixels: count,
    }
}

/// Expected valid-mask footprint after a chain of stride-1 same-padding
/// max-pool dilations with the given kernel sizes.
pub fn mask_propagation_naive(mask: &Tensor<f64>, kernels: &[usize]) -> Tensor<f64> {
    let mut m = mask.clone();
    for &k in kernels {
        if k > 1 {
            m = max_pool2d_naive(&m, k, 1, (k - 1) / 2);
        }
    }
    m
}
