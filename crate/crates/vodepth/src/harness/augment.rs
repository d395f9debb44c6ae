//! Training-time augmentation.
//!
//! Two transforms, each applied with probability one half: a horizontal
//! flip that mirrors both views and swaps their roles (the mirrored right
//! view is a geometrically valid left view with the same disparities), and
//! a color jitter (gamma, brightness, per-channel gain) applied identically
//! to both views so stereo appearance terms stay meaningful.
//!
//! Every random field is drawn on every call, whether or not it ends up
//! used, so the number of values consumed from the rng never depends on
//! earlier draws.

use crate::dataset::Sample;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;

/// Pre-drawn augmentation decisions for one sample.
#[derive(Clone, Copy, Debug)]
pub struct AugmentDraw {
    pub flip: bool,
    pub jitter: bool,
    pub gamma: f64,
    pub brightness: f64,
    pub channel: [f64; 3],
}

impl AugmentDraw {
    pub fn draw<R: Rng>(rng: &mut R) -> Self {
        AugmentDraw {
            flip: rng.gen::<f64>() < 0.5,
            jitter: rng.gen::<f64>() < 0.5,
            gamma: rng.gen::<f64>() * 0.4 + 0.8,
            brightness: rng.gen::<f64>() * 1.5 + 0.5,
            channel: [
                rng.gen::<f64>() * 0.4 + 0.8,
                rng.gen::<f64>() * 0.4 + 0.8,
                rng.gen::<f64>() * 0.4 + 0.8,
            ],
        }
    }

    /// No-op draw, used where the pipeline wants a draw unconditionally.
    pub fn identity() -> Self {
        AugmentDraw {
            flip: false,
            jitter: false,
            gamma: 1.0,
            brightness: 1.0,
            channel: [1.0; 3],
        }
    }
}

fn jitter<T: Scalar>(img: &Tensor<T>, draw: &AugmentDraw) -> Result<Tensor<T>> {
    let (n, c, h, w) = img.dims4()?;
    let gamma = draw.gamma;
    let brightness = draw.brightness;
    Ok(Tensor::from_fn4(n, c, h, w, |ni, ci, y, x| {
        let v = img.at4(ni, ci, y, x).as_f64().max(0.0);
        T::from_f64((v.powf(gamma) * brightness * draw.channel[ci]).clamp(0.0, 1.0))
    }))
}

/// Applies a draw to one sample. The flip happens before the jitter.
pub fn apply<T: Scalar>(sample: &Sample<T>, draw: &AugmentDraw) -> Result<Sample<T>> {
    let mut rig = sample.rig;
    let (mut left, mut right) = (sample.left.clone(), sample.right.clone());
    let (mut gt_left, mut gt_right) = (sample.gt_left.clone(), sample.gt_right.clone());
    let (mut sparse_left, mut sparse_right) =
        (sample.sparse_left.clone(), sample.sparse_right.clone());

    if draw.flip {
        let (_, _, _, w) = left.dims4()?;
        rig.cx = (w - 1) as f64 - rig.cx;
        let new_left = right.hflip()?;
        let new_right = left.hflip()?;
        left = new_left;
        right = new_right;
        let new_gt_left = gt_right.hflip()?;
        let new_gt_right = gt_left.hflip()?;
        gt_left = new_gt_left;
        gt_right = new_gt_right;
        let new_sparse_left = crate::geometry::SparseDisparityMap {
            values: sparse_right.values.hflip()?,
            mask: sparse_right.mask.hflip()?,
        };
        let new_sparse_right = crate::geometry::SparseDisparityMap {
            values: sparse_left.values.hflip()?,
            mask: sparse_left.mask.hflip()?,
        };
        sparse_left = new_sparse_left;
        sparse_right = new_sparse_right;
    }
    if draw.jitter {
        left = jitter(&left, draw)?;
        right = jitter(&right, draw)?;
    }
    Ok(Sample {
        left,
        right,
        gt_left,
        gt_right,
        sparse_left,
        sparse_right,
        rig,
    })
}
