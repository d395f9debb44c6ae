//! Differentiable horizontal warping by a per-pixel disparity field.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Which way the sampling coordinate moves per unit of disparity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarpDirection {
    /// Sample at `x - disparity`.
    Negative,
    /// Sample at `x + disparity`.
    Positive,
}

impl WarpDirection {
    #[inline]
    pub fn sign_f64(self) -> f64 {
        match self {
            WarpDirection::Negative => -1.0,
            WarpDirection::Positive => 1.0,
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// `out(x, y) = src sampled at (x + direction * disp(x, y), y)` with
    /// two-tap interpolation along x and the coordinate clamped to the
    /// border. Differentiable w.r.t. both `src` and `disp`; the disparity
    /// gradient is zero wherever the coordinate clamps.
    pub fn bilinear_warp(
        &mut self,
        src: NodeId,
        disp: NodeId,
        direction: WarpDirection,
    ) -> Result<NodeId> {
        let (n, c, h, w) = self.value(src).dims4()?;
        let (nd, cd, hd, wd) = self.value(disp).dims4()?;
        if (nd, cd, hd, wd) != (n, 1, h, w) {
            return Err(Error::ShapeMismatch {
                op: "bilinear_warp",
                detail: format!(
                    "disparity {:?} does not match source {:?}",
                    self.value(disp).shape(),
                    self.value(src).shape()
                ),
            });
        }
        let sign = T::from_f64(direction.sign_f64());
        let sv = self.value(src);
        let dv = self.value(disp);
        let mut out = Tensor::zeros(&[n, c, h, w]);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let (x0, x1, a, _) = taps(dv.at4(ni, 0, y, x), sign, x, w);
                        let v = (T::one() - a) * sv.at4(ni, ci, y, x0) + a * sv.at4(ni, ci, y, x1);
                        out.set4(ni, ci, y, x, v);
                    }
                }
            }
        }
        self.push(
            "bilinear_warp",
            out,
            vec![src, disp],
            Box::new(move |g, _, parents| {
                let (sv, dv) = (parents[0], parents[1]);
                let mut gsrc = Tensor::zeros(&[n, c, h, w]);
                let mut gdisp = Tensor::zeros(&[n, 1, h, w]);
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h {
                            for x in 0..w {
                                let (x0, x1, a, clamped) = taps(dv.at4(ni, 0, y, x), sign, x, w);
                                let gv = g.at4(ni, ci, y, x);
                                let cur0 = gsrc.at4(ni, ci, y, x0);
                                gsrc.set4(ni, ci, y, x0, cur0 + (T::one() - a) * gv);
                                let cur1 = gsrc.at4(ni, ci, y, x1);
                                gsrc.set4(ni, ci, y, x1, cur1 + a * gv);
                                if !clamped {
                                    let slope =
                                        sign * (sv.at4(ni, ci, y, x1) - sv.at4(ni, ci, y, x0));
                                    let cur = gdisp.at4(ni, 0, y, x);
                                    gdisp.set4(ni, 0, y, x, cur + slope * gv);
                                }
                            }
                        }
                    }
                }
                vec![Some(gsrc), Some(gdisp)]
            }),
        )
    }
}

/// Tap indices, interpolation fraction, and whether the coordinate clamped.
#[inline]
fn taps<T: Scalar>(disp: T, sign: T, x: usize, w: usize) -> (usize, usize, T, bool) {
    let u_raw = T::from_f64(x as f64) + sign * disp;
    let hi = T::from_f64((w - 1) as f64);
    let clamped = u_raw < T::zero() || u_raw > hi;
    let u = u_raw.max(T::zero()).min(hi);
    let x0 = u.floor().as_f64() as usize;
    if x0 >= w - 1 {
        (w - 1, w - 1, T::zero(), clamped)
    } else {
        (x0, x0 + 1, u - T::from_f64(x0 as f64), clamped)
    }
}
