//! Training objective over a disparity pyramid.
//!
//! The total loss combines three groups: per-scale stereo terms (appearance,
//! edge-aware smoothness, left-right consistency, occlusion), a prior
//! reconstruction term scoring the densified map against the sparse samples
//! it was built from, and a prior agreement term tying the full-resolution
//! disparity to the densified prior. Dropped terms are recorded as exact
//! scalar zeros so the combination structure never changes shape.
//!
//! [`LossBreakdown::combine`] re-evaluates the final combination with the
//! same operation order used on the tape, so the recomputed total matches
//! the recorded one bit for bit.

use crate::error::{Error, Result};
use crate::ops::WarpDirection;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Mixing weights of the objective. `smoothness` is divided by each scale's
/// width ratio before use; `ssim_mix` blends SSIM against plain L1 inside
/// the appearance term.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub stereo: f64,
    pub inner: f64,
    pub outer: f64,
    pub appearance: f64,
    pub lr: f64,
    pub occlusion: f64,
    pub smoothness: f64,
    pub ssim_mix: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            stereo: 1.0,
            inner: 5.0,
            outer: 2.0,
            appearance: 1.0,
            lr: 1.0,
            occlusion: 0.01,
            smoothness: 0.1,
            ssim_mix: 0.85,
        }
    }
}

/// Everything one pyramid scale contributes to the stereo terms. Disparities
/// are `[N, 1, h, w]`, images `[N, 3, h, w]` on the same grid.
#[derive(Clone, Copy, Debug)]
pub struct StereoScale {
    pub div: usize,
    pub left_image: NodeId,
    pub right_image: NodeId,
    pub left_disparity: NodeId,
    pub right_disparity: NodeId,
}

/// A prediction scored against a target under a binary mask.
#[derive(Clone, Copy, Debug)]
pub struct MaskedTarget {
    pub prediction: NodeId,
    pub target: NodeId,
    pub mask: NodeId,
}

/// Term inputs for one optimization step. `None` terms contribute an exact
/// zero; an empty scale list skips the stereo group the same way.
pub struct LossInputs<'a> {
    pub scales: &'a [StereoScale],
    pub inner_left: Option<MaskedTarget>,
    pub inner_right: Option<MaskedTarget>,
    pub outer_left: Option<MaskedTarget>,
    pub outer_right: Option<MaskedTarget>,
}

/// Scalar values of every term of one recorded loss, read back off the tape.
/// The `appearance`/`smoothness`/`lr`/`occlusion` fields are unweighted
/// diagnostic sums over scales and cameras.
#[derive(Clone, Debug)]
pub struct LossBreakdown<T: Scalar> {
    pub stereo: Vec<T>,
    pub appearance: f64,
    pub smoothness: f64,
    pub lr: f64,
    pub occlusion: f64,
    pub inner_left: T,
    pub inner_right: T,
    pub outer_left: T,
    pub outer_right: T,
    pub total: T,
}

impl<T: Scalar> LossBreakdown<T> {
    /// Recombines the stored terms into the total with the tape's operation
    /// order: fold the stereo scales left to right, weight the three groups,
    /// then add them left to right.
    pub fn combine(&self, weights: &LossWeights) -> T {
        let mut stereo_sum = T::zero();
        for (i, &s) in self.stereo.iter().enumerate() {
            if i == 0 {
                stereo_sum = s;
            } else {
                stereo_sum = stereo_sum + s;
            }
        }
        let stereo = stereo_sum * T::from_f64(weights.stereo);
        let inner = (self.inner_left + self.inner_right) * T::from_f64(weights.inner);
        let outer = (self.outer_left + self.outer_right) * T::from_f64(weights.outer);
        (stereo + inner) + outer
    }
}

const SSIM_C1: f64 = 0.0001;
const SSIM_C2: f64 = 0.0009;

impl<T: Scalar> Tape<T> {
    /// Per-pixel SSIM from 3x3 valid-count window statistics, clipped to
    /// `[-1, 1]`. Identical inputs give exactly 1 everywhere: numerator and
    /// denominator are then built from bitwise-equal factors.
    pub fn ssim_map(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let c1 = T::from_f64(SSIM_C1);
        let c2 = T::from_f64(SSIM_C2);
        let mu_a = self.mean_pool_same(a, 3)?;
        let mu_b = self.mean_pool_same(b, 3)?;
        let aa = self.mul(a, a)?;
        let bb = self.mul(b, b)?;
        let ab = self.mul(a, b)?;
        let m_aa = self.mean_pool_same(aa, 3)?;
        let m_bb = self.mean_pool_same(bb, 3)?;
        let m_ab = self.mean_pool_same(ab, 3)?;
        let mu_a2 = self.mul(mu_a, mu_a)?;
        let mu_b2 = self.mul(mu_b, mu_b)?;
        let mu_ab = self.mul(mu_a, mu_b)?;
        let var_a = self.sub(m_aa, mu_a2)?;
        let var_b = self.sub(m_bb, mu_b2)?;
        let cov = self.sub(m_ab, mu_ab)?;

        let lum = self.scale(mu_ab, T::from_f64(2.0))?;
        let lum = self.add_scalar(lum, c1)?;
        let con = self.scale(cov, T::from_f64(2.0))?;
        let con = self.add_scalar(con, c2)?;
        let num = self.mul(lum, con)?;

        let den_l = self.add(mu_a2, mu_b2)?;
        let den_l = self.add_scalar(den_l, c1)?;
        let den_c = self.add(var_a, var_b)?;
        let den_c = self.add_scalar(den_c, c2)?;
        let den = self.mul(den_l, den_c)?;

        let ssim = self.div(num, den)?;
        self.clamp(ssim, T::from_f64(-1.0), T::from_f64(1.0))
    }

    /// Mean of `mix * (1 - SSIM)/2 + (1 - mix) * |a - b|`.
    pub fn appearance(&mut self, a: NodeId, b: NodeId, mix: f64) -> Result<NodeId> {
        let ssim = self.ssim_map(a, b)?;
        let neg = self.scale(ssim, T::from_f64(-1.0))?;
        let one_minus = self.add_scalar(neg, T::one())?;
        let half = self.scale(one_minus, T::from_f64(0.5))?;
        let structural = self.scale(half, T::from_f64(mix))?;
        let diff = self.sub(a, b)?;
        let l1 = self.abs(diff)?;
        let photometric = self.scale(l1, T::from_f64(1.0 - mix))?;
        let blended = self.add(structural, photometric)?;
        self.mean(blended)
    }

    /// Edge-aware smoothness of a disparity map: forward differences of the
    /// disparity, each weighted by `exp(-mean_c |grad image|)`, the x term
    /// averaged over its `N*H*(W-1)` entries and the y term over
    /// `N*(H-1)*W`.
    pub fn smoothness(&mut self, disparity: NodeId, image: NodeId) -> Result<NodeId> {
        let (n, _, h, w) = self.value(disparity).dims4()?;
        let dx = self.grad_x(disparity)?;
        let dx = self.abs(dx)?;
        let ix = self.grad_x(image)?;
        let ix = self.abs(ix)?;
        let ix = self.mean_channels(ix)?;
        let ix = self.scale(ix, T::from_f64(-1.0))?;
        let wx = self.exp(ix)?;
        let weighted_x = self.mul(dx, wx)?;
        let sum_x = self.sum(weighted_x)?;
        let term_x = self.scale(sum_x, T::from_f64(1.0 / (n * h * (w - 1)) as f64))?;

        let dy = self.grad_y(disparity)?;
        let dy = self.abs(dy)?;
        let iy = self.grad_y(image)?;
        let iy = self.abs(iy)?;
        let iy = self.mean_channels(iy)?;
        let iy = self.scale(iy, T::from_f64(-1.0))?;
        let wy = self.exp(iy)?;
        let weighted_y = self.mul(dy, wy)?;
        let sum_y = self.sum(weighted_y)?;
        let term_y = self.scale(sum_y, T::from_f64(1.0 / (n * (h - 1) * w) as f64))?;

        self.add(term_x, term_y)
    }

    /// Mean of `|d_ref - d_other(x + direction * d_ref)|`: how well the
    /// reference disparity map agrees with the other view's map warped onto
    /// it by the reference disparities themselves.
    pub fn lr_consistency(
        &mut self,
        d_ref: NodeId,
        d_other: NodeId,
        direction: WarpDirection,
    ) -> Result<NodeId> {
        let warped = self.bilinear_warp(d_other, d_ref, direction)?;
        let diff = self.sub(d_ref, warped)?;
        let l1 = self.abs(diff)?;
        self.mean(l1)
    }

    /// Mean absolute disparity; pressures unexplained (occluded) regions
    /// toward the background instead of arbitrary values.
    pub fn occlusion(&mut self, disparity: NodeId) -> Result<NodeId> {
        let a = self.abs(disparity)?;
        self.mean(a)
    }

    /// L1 between prediction and target restricted to `mask`, normalized by
    /// the number of masked-in pixels (a constant, not a tape value).
    pub fn masked_l1(&mut self, target: MaskedTarget) -> Result<NodeId> {
        let count: f64 = self
            .value(target.mask)
            .data()
            .iter()
            .map(|v| v.as_f64())
            .sum();
        if count == 0.0 {
            return Err(Error::invalid("masked L1 needs at least one valid pixel"));
        }
        let diff = self.sub(target.prediction, target.target)?;
        let l1 = self.abs(diff)?;
        let masked = self.mul(l1, target.mask)?;
        let sum = self.sum(masked)?;
        self.scale(sum, T::from_f64(1.0 / count))
    }
}

struct TermScalars<T: Scalar> {
    node: NodeId,
    value: T,
}

fn zero_or<T: Scalar>(
    tape: &mut Tape<T>,
    target: Option<MaskedTarget>,
    term: &'static str,
) -> Result<TermScalars<T>> {
    let node = match target {
        Some(t) => tape.masked_l1(t).map_err(|e| e.in_term(term))?,
        None => tape.leaf(Tensor::scalar(T::zero())),
    };
    Ok(TermScalars {
        node,
        value: tape.scalar_value(node),
    })
}

/// Records the full objective on the tape and returns the scalar loss node
/// together with the per-term breakdown.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    inputs: &LossInputs,
    weights: &LossWeights,
) -> Result<(NodeId, LossBreakdown<T>)> {
    let mut stereo_values = Vec::with_capacity(inputs.scales.len());
    let mut stereo_sum: Option<NodeId> = None;
    let mut diag_ap = 0.0;
    let mut diag_ds = 0.0;
    let mut diag_lr = 0.0;
    let mut diag_occ = 0.0;

    for scale in inputs.scales {
        let recon_left = tape
            .bilinear_warp(scale.right_image, scale.left_disparity, WarpDirection::Negative)
            .map_err(|e| e.in_term("reconstruction(left)"))?;
        let recon_right = tape
            .bilinear_warp(scale.left_image, scale.right_disparity, WarpDirection::Positive)
            .map_err(|e| e.in_term("reconstruction(right)"))?;
        let ap_l = tape
            .appearance(scale.left_image, recon_left, weights.ssim_mix)
            .map_err(|e| e.in_term("appearance(left)"))?;
        let ap_r = tape
            .appearance(scale.right_image, recon_right, weights.ssim_mix)
            .map_err(|e| e.in_term("appearance(right)"))?;
        let ds_l = tape
            .smoothness(scale.left_disparity, scale.left_image)
            .map_err(|e| e.in_term("smoothness(left)"))?;
        let ds_r = tape
            .smoothness(scale.right_disparity, scale.right_image)
            .map_err(|e| e.in_term("smoothness(right)"))?;
        let lr_l = tape
            .lr_consistency(
                scale.left_disparity,
                scale.right_disparity,
                WarpDirection::Negative,
            )
            .map_err(|e| e.in_term("consistency(left)"))?;
        let lr_r = tape
            .lr_consistency(
                scale.right_disparity,
                scale.left_disparity,
                WarpDirection::Positive,
            )
            .map_err(|e| e.in_term("consistency(right)"))?;
        let occ_l = tape
            .occlusion(scale.left_disparity)
            .map_err(|e| e.in_term("occlusion(left)"))?;
        let occ_r = tape
            .occlusion(scale.right_disparity)
            .map_err(|e| e.in_term("occlusion(right)"))?;

        diag_ap += tape.scalar_value(ap_l).as_f64() + tape.scalar_value(ap_r).as_f64();
        diag_ds += tape.scalar_value(ds_l).as_f64() + tape.scalar_value(ds_r).as_f64();
        diag_lr += tape.scalar_value(lr_l).as_f64() + tape.scalar_value(lr_r).as_f64();
        diag_occ += tape.scalar_value(occ_l).as_f64() + tape.scalar_value(occ_r).as_f64();

        let ap = tape.add(ap_l, ap_r)?;
        let ap = tape.scale(ap, T::from_f64(weights.appearance))?;
        let ds = tape.add(ds_l, ds_r)?;
        let ds = tape.scale(ds, T::from_f64(weights.smoothness / scale.div as f64))?;
        let lr = tape.add(lr_l, lr_r)?;
        let lr = tape.scale(lr, T::from_f64(weights.lr))?;
        let occ = tape.add(occ_l, occ_r)?;
        let occ = tape.scale(occ, T::from_f64(weights.occlusion))?;
        let mut st = tape.add(ap, ds)?;
        st = tape.add(st, lr)?;
        st = tape.add(st, occ)?;

        stereo_values.push(tape.scalar_value(st));
        stereo_sum = Some(match stereo_sum {
            None => st,
            Some(acc) => tape.add(acc, st)?,
        });
    }
    let stereo_sum = match stereo_sum {
        Some(node) => node,
        None => tape.leaf(Tensor::scalar(T::zero())),
    };

    let inner_l = zero_or(tape, inputs.inner_left, "inner(left)")?;
    let inner_r = zero_or(tape, inputs.inner_right, "inner(right)")?;
    let outer_l = zero_or(tape, inputs.outer_left, "outer(left)")?;
    let outer_r = zero_or(tape, inputs.outer_right, "outer(right)")?;

    let stereo_term = tape.scale(stereo_sum, T::from_f64(weights.stereo))?;
    let inner_sum = tape.add(inner_l.node, inner_r.node)?;
    let inner_term = tape.scale(inner_sum, T::from_f64(weights.inner))?;
    let outer_sum = tape.add(outer_l.node, outer_r.node)?;
    let outer_term = tape.scale(outer_sum, T::from_f64(weights.outer))?;
    let total = tape.add(stereo_term, inner_term)?;
    let total = tape.add(total, outer_term)?;

    let breakdown = LossBreakdown {
        stereo: stereo_values,
        appearance: diag_ap,
        smoothness: diag_ds,
        lr: diag_lr,
        occlusion: diag_occ,
        inner_left: inner_l.value,
        inner_right: inner_r.value,
        outer_left: outer_l.value,
        outer_right: outer_r.value,
        total: tape.scalar_value(total),
    };
    Ok((total, breakdown))
}
