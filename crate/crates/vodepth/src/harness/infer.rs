//! Deployment inference: a single left-view pass, with optional
//! flip-averaging to suppress border artifacts.

use crate::error::Result;
use crate::geometry::SparseDisparityMap;
use crate::harness::config::Ablation;
use crate::harness::model::{forward_left, Model};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Width fraction taken verbatim from one pass at each border.
const BORDER: f64 = 0.05;
/// Width fraction of the linear ramp joining border and interior weights.
const RAMP: f64 = 0.05;

/// Predicted disparity and how many estimator passes produced it.
pub struct InferOutcome<T: Scalar> {
    pub disparity: Tensor<T>,
    pub forward_passes: usize,
}

fn single_pass<T: Scalar>(
    model: &Model<T>,
    image: &Tensor<T>,
    sparse: &SparseDisparityMap<T>,
    ablation: Ablation,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let node = forward_left(&mut tape, model, image, sparse, ablation)?;
    Ok(tape.value(node).clone())
}

/// Weight of the flipped-run result at relative column position `l` in
/// [0, 1]: the left border trusts the flipped run, the right border the
/// direct run, the interior averages both, with linear ramps between.
fn flipped_weight(l: f64) -> f64 {
    if l <= BORDER {
        1.0
    } else if l <= BORDER + RAMP {
        1.0 - 0.5 * (l - BORDER) / RAMP
    } else if l < 1.0 - BORDER - RAMP {
        0.5
    } else if l < 1.0 - BORDER {
        0.5 * ((1.0 - BORDER) - l) / RAMP
    } else {
        0.0
    }
}

/// Runs the model on one left view. With `post_process` the image and its
/// sparse map are also mirrored, run again, mirrored back and blended
/// column-wise; two identical passes blend back to themselves exactly.
pub fn infer<T: Scalar>(
    model: &Model<T>,
    image: &Tensor<T>,
    sparse: &SparseDisparityMap<T>,
    ablation: Ablation,
    post_process: bool,
) -> Result<InferOutcome<T>> {
    let direct = single_pass(model, image, sparse, ablation)?;
    if !post_process {
        return Ok(InferOutcome {
            disparity: direct,
            forward_passes: 1,
        });
    }

    let mirrored_sparse = SparseDisparityMap {
        values: sparse.values.hflip()?,
        mask: sparse.mask.hflip()?,
    };
    let mirrored = single_pass(model, &image.hflip()?, &mirrored_sparse, ablation)?;
    let flipped_back = mirrored.hflip()?;

    let (n, c, h, w) = direct.dims4()?;
    let denom = (w.max(2) - 1) as f64;
    let mut blended = direct.clone();
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let wf = T::from_f64(flipped_weight(x as f64 / denom));
                    let d = direct.at4(ni, ci, y, x);
                    let f = flipped_back.at4(ni, ci, y, x);
                    blended.set4(ni, ci, y, x, d + wf * (f - d));
                }
            }
        }
    }
    Ok(InferOutcome {
        disparity: blended,
        forward_passes: 2,
    })
}
