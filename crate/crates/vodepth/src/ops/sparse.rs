//! Normalized masked convolution for sparse inputs.
//!
//! `y(p) = sum_window(w * x * m) / (count of valid window pixels + 1e-8) + b`
//! with stride 1 and same padding, where `m` is a binary single-channel
//! validity mask. The normalizer counts valid pixels spatially, so the output
//! is invariant to values at masked-out positions, and a fully-empty window
//! reduces to the bias. Masks never receive gradients.

use super::conv::{conv2d_bias_grad, conv2d_forward, conv2d_input_grad, conv2d_weight_grad};
use super::pool::max_pool2d_forward;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const SPARSE_NORM_EPS: f64 = 1e-8;

fn check_mask<T: Scalar>(op: &'static str, m: &Tensor<T>) -> Result<()> {
    if !m.data().iter().all(|&v| v == T::zero() || v == T::one()) {
        return Err(Error::NonBinaryMask { op });
    }
    Ok(())
}

/// In-bounds valid-pixel count per k-window of a binary mask.
fn window_count<T: Scalar>(m: &Tensor<T>, k: usize) -> Tensor<T> {
    let (n, _, h, w) = m.dims4().unwrap();
    let pad = (k - 1) / 2;
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut cnt = T::zero();
                for ky in 0..k {
                    let yi = (y + ky) as isize - pad as isize;
                    if yi < 0 || yi >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let xi = (x + kx) as isize - pad as isize;
                        if xi < 0 || xi >= w as isize {
                            continue;
                        }
                        cnt += m.at4(ni, 0, yi as usize, xi as usize);
                    }
                }
                out.set4(ni, 0, y, x, cnt);
            }
        }
    }
    out
}

/// Broadcast-multiplies a `[N,C,H,W]` tensor by a `[N,1,H,W]` mask.
fn mask_mul<T: Scalar>(x: &Tensor<T>, m: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4().unwrap();
    Tensor::from_fn4(n, c, h, w, |ni, ci, y, xx| {
        x.at4(ni, ci, y, xx) * m.at4(ni, 0, y, xx)
    })
}

/// Divides each channel of `gy` by `den + eps` pointwise.
fn div_by_den<T: Scalar>(gy: &Tensor<T>, den: &Tensor<T>, eps: T) -> Tensor<T> {
    let (n, c, h, w) = gy.dims4().unwrap();
    Tensor::from_fn4(n, c, h, w, |ni, ci, y, x| {
        gy.at4(ni, ci, y, x) / (den.at4(ni, 0, y, x) + eps)
    })
}

impl<T: Scalar> Tape<T> {
    /// Records one normalized masked convolution. The mask parent is
    /// non-differentiable; stride is 1 and padding keeps the size.
    pub fn sparse_conv2d(&mut self, x: NodeId, m: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, _cin, h, wd) = self.value(x).dims4()?;
        let (_, _, k, _) = self.value(w).dims4()?;
        let (nm, cm, hm, wm) = self.value(m).dims4()?;
        if (nm, cm, hm, wm) != (n, 1, h, wd) {
            return Err(Error::ShapeMismatch {
                op: "sparse_conv2d",
                detail: format!(
                    "mask {:?} vs input {:?}",
                    self.value(m).shape(),
                    self.value(x).shape()
                ),
            });
        }
        check_mask("sparse_conv2d", self.value(m))?;
        let eps = T::from_f64(SPARSE_NORM_EPS);
        let pad = (k - 1) / 2;

        let den = window_count(self.value(m), k);
        let xm = mask_mul(self.value(x), self.value(m));
        let zero_bias = Tensor::zeros(&[self.value(w).shape()[0]]);
        let acc = conv2d_forward(&xm, self.value(w), &zero_bias, 1, pad)?;
        let (_, cout, _, _) = acc.dims4()?;
        let bv = self.value(b).clone();
        let mut out = Tensor::zeros(&[n, cout, h, wd]);
        for ni in 0..n {
            for co in 0..cout {
                for y in 0..h {
                    for x0 in 0..wd {
                        let v = acc.at4(ni, co, y, x0) / (den.at4(ni, 0, y, x0) + eps)
                            + bv.data()[co];
                        out.set4(ni, co, y, x0, v);
                    }
                }
            }
        }
        self.push(
            "sparse_conv2d",
            out,
            vec![x, m, w, b],
            Box::new(move |g, _, parents| {
                let (xv, mv, wv) = (parents[0], parents[1], parents[2]);
                let gys = div_by_den(g, &den, eps);
                let xm = mask_mul(xv, mv);
                let gx_raw = conv2d_input_grad(&gys, xv.shape(), wv, 1, pad);
                let gx = mask_mul(&gx_raw, mv);
                let gw = conv2d_weight_grad(&gys, &xm, wv.shape(), 1, pad);
                let gb = conv2d_bias_grad(g);
                vec![Some(gx), None, Some(gw), Some(gb)]
            }),
        )
    }

    /// Dilates a binary validity mask by a stride-1 same-padding max pool and
    /// records the result as a constant: mask propagation carries no
    /// gradient. A 1x1 kernel returns the input node unchanged.
    pub fn propagate_mask(&mut self, m: NodeId, k: usize) -> Result<NodeId> {
        check_mask("propagate_mask", self.value(m))?;
        if k == 1 {
            return Ok(m);
        }
        let (dilated, _) = max_pool2d_forward(self.value(m), k, 1, (k - 1) / 2)?;
        Ok(self.leaf(dilated))
    }
}
