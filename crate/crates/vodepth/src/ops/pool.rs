//! Pooling and fixed-factor resampling ops.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Max pooling with padded cells at negative infinity. Returns the pooled map
/// and the flat input index of the chosen element per output (ties go to the
/// first maximal element in window scan order).
pub fn max_pool2d_forward<T: Scalar>(
    x: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    if k == 0 || stride == 0 {
        return Err(Error::invalid("max_pool2d needs k >= 1 and stride >= 1"));
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::invalid(format!(
            "max_pool2d: {h}x{w} too small for kernel {k} with padding {pad}"
        )));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut argmax = vec![usize::MAX; n * c * ho * wo];
    let xd = x.data();
    let od = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for yo in 0..ho {
                for xo in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for ky in 0..k {
                        let yi = (yo * stride + ky) as isize - pad as isize;
                        if yi < 0 || yi >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let xi = (xo * stride + kx) as isize - pad as isize;
                            if xi < 0 || xi >= w as isize {
                                continue;
                            }
                            let idx = base + yi as usize * w + xi as usize;
                            let v = xd[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ((ni * c + ci) * ho + yo) * wo + xo;
                    od[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    Ok((out, argmax))
}

impl<T: Scalar> Tape<T> {
    /// Max pooling; the gradient routes to the first maximal element of each
    /// window in scan order.
    pub fn max_pool2d(&mut self, x: NodeId, k: usize, stride: usize, pad: usize) -> Result<NodeId> {
        let (out, argmax) = max_pool2d_forward(self.value(x), k, stride, pad)?;
        let x_shape = self.value(x).shape().to_vec();
        self.push(
            "max_pool2d",
            out,
            vec![x],
            Box::new(move |g, _, _| {
                let mut gx = Tensor::zeros(&x_shape);
                let gxd = gx.data_mut();
                for (o, &src) in argmax.iter().enumerate() {
                    if src != usize::MAX {
                        gxd[src] += g.data()[o];
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Stride-1, same-size mean pooling normalized by the in-bounds window
    /// count (border windows average fewer samples).
    pub fn mean_pool_same(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if k % 2 == 0 {
            return Err(Error::invalid("mean_pool_same kernel must be odd"));
        }
        let r = (k / 2) as isize;
        let v = self.value(x);
        let mut out = Tensor::zeros(&[n, c, h, w]);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x0 in 0..w {
                        let mut sum = T::zero();
                        let mut cnt = 0usize;
                        for dy in -r..=r {
                            let yy = y as isize + dy;
                            if yy < 0 || yy >= h as isize {
                                continue;
                            }
                            for dx in -r..=r {
                                let xx = x0 as isize + dx;
                                if xx < 0 || xx >= w as isize {
                                    continue;
                                }
                                sum += v.at4(ni, ci, yy as usize, xx as usize);
                                cnt += 1;
                            }
                        }
                        out.set4(ni, ci, y, x0, sum / T::from_f64(cnt as f64));
                    }
                }
            }
        }
        self.push(
            "mean_pool_same",
            out,
            vec![x],
            Box::new(move |g, _, _| {
                let mut gx = Tensor::zeros(&[n, c, h, w]);
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h {
                            for x0 in 0..w {
                                let mut cnt = 0usize;
                                for dy in -r..=r {
                                    let yy = y as isize + dy;
                                    if yy < 0 || yy >= h as isize {
                                        continue;
                                    }
                                    for dx in -r..=r {
                                        let xx = x0 as isize + dx;
                                        if xx >= 0 && xx < w as isize {
                                            cnt += 1;
                                        }
                                    }
                                }
                                let gv = g.at4(ni, ci, y, x0) / T::from_f64(cnt as f64);
                                for dy in -r..=r {
                                    let yy = y as isize + dy;
                                    if yy < 0 || yy >= h as isize {
                                        continue;
                                    }
                                    for dx in -r..=r {
                                        let xx = x0 as isize + dx;
                                        if xx < 0 || xx >= w as isize {
                                            continue;
                                        }
                                        let cur = gx.at4(ni, ci, yy as usize, xx as usize);
                                        gx.set4(ni, ci, yy as usize, xx as usize, cur + gv);
                                    }
                                }
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// 2x2 average pooling; H and W must be even.
    pub fn downsample_avg_x2(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).avg_down2()?;
        let (n, c, h, w) = self.value(x).dims4()?;
        self.push(
            "downsample_avg_x2",
            out,
            vec![x],
            Box::new(move |g, _, _| {
                let quarter = T::from_f64(0.25);
                let mut gx = Tensor::zeros(&[n, c, h, w]);
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h / 2 {
                            for x0 in 0..w / 2 {
                                let gv = g.at4(ni, ci, y, x0) * quarter;
                                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                    let cur = gx.at4(ni, ci, 2 * y + dy, 2 * x0 + dx);
                                    gx.set4(ni, ci, 2 * y + dy, 2 * x0 + dx, cur + gv);
                                }
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Bilinear 2x upsampling with half-pixel centers and clamped borders;
    /// constants are preserved.
    pub fn upsample_bilinear_x2(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (ho, wo) = (2 * h, 2 * w);
        let taps_y = upsample_taps(h);
        let taps_x = upsample_taps(w);
        let v = self.value(x);
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        for ni in 0..n {
            for ci in 0..c {
                for yo in 0..ho {
                    let (y0, y1, fy) = taps_y[yo];
                    let wy0 = T::from_f64(1.0 - fy);
                    let wy1 = T::from_f64(fy);
                    for xo in 0..wo {
                        let (x0, x1, fx) = taps_x[xo];
                        let wx0 = T::from_f64(1.0 - fx);
                        let wx1 = T::from_f64(fx);
                        let val = ((wy0 * wx0 * v.at4(ni, ci, y0, x0)
                            + wy0 * wx1 * v.at4(ni, ci, y0, x1))
                            + wy1 * wx0 * v.at4(ni, ci, y1, x0))
                            + wy1 * wx1 * v.at4(ni, ci, y1, x1);
                        out.set4(ni, ci, yo, xo, val);
                    }
                }
            }
        }
        self.push(
            "upsample_bilinear_x2",
            out,
            vec![x],
            Box::new(move |g, _, _| {
                let mut gx = Tensor::zeros(&[n, c, h, w]);
                for ni in 0..n {
                    for ci in 0..c {
                        for yo in 0..ho {
                            let (y0, y1, fy) = taps_y[yo];
                            let wy0 = T::from_f64(1.0 - fy);
                            let wy1 = T::from_f64(fy);
                            for xo in 0..wo {
                                let (x0, x1, fx) = taps_x[xo];
                                let wx0 = T::from_f64(1.0 - fx);
                                let wx1 = T::from_f64(fx);
                                let gv = g.at4(ni, ci, yo, xo);
                                for (yy, xx, wgt) in [
                                    (y0, x0, wy0 * wx0),
                                    (y0, x1, wy0 * wx1),
                                    (y1, x0, wy1 * wx0),
                                    (y1, x1, wy1 * wx1),
                                ] {
                                    let cur = gx.at4(ni, ci, yy, xx);
                                    gx.set4(ni, ci, yy, xx, cur + gv * wgt);
                                }
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}

/// Source taps for one output axis of 2x bilinear upsampling: output center
/// `o` maps to source coordinate `(o + 0.5)/2 - 0.5`, clamped to the axis.
fn upsample_taps(len_in: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len_in)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len_in - 1) as f64);
            let i0 = src.floor() as usize;
            if i0 >= len_in - 1 {
                (len_in - 1, len_in - 1, 0.0)
            } else {
                (i0, i0 + 1, src - i0 as f64)
            }
        })
        .collect()
}
