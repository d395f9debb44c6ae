//! Full-model assembly: parameter registration and the forward pass that
//! wires priors, residual refinement, estimator and losses together for one
//! sample.

use crate::autoencoder::{DensifiedPrior, SparseAutoencoder};
use crate::dataset::Sample;
use crate::error::Result;
use crate::estimator::{compose_pyramid, ComposedLevel, DisparityEstimator};
use crate::geometry::SparseDisparityMap;
use crate::harness::config::Ablation;
use crate::losses::{total_loss, LossBreakdown, LossInputs, LossWeights, MaskedTarget, StereoScale};
use crate::scalar::Scalar;
use crate::skip::SkipResidual;
use crate::tape::{NodeId, ParamStore, Tape};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The three trainable components and their shared parameter store. All
/// components are always registered, whatever the ablation: unused parts
/// simply receive no gradients and stay at their initialization, and every
/// checkpoint has the same parameter inventory.
pub struct Model<T: Scalar> {
    pub store: ParamStore<T>,
    pub autoencoder: SparseAutoencoder,
    pub skip: SkipResidual,
    pub estimator: DisparityEstimator,
}

impl<T: Scalar> Model<T> {
    pub fn new(seed: u64, levels: usize) -> Result<Model<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let autoencoder = SparseAutoencoder::register(&mut store, &mut rng);
        let skip = SkipResidual::register(&mut store, &mut rng);
        let estimator = DisparityEstimator::register(&mut store, &mut rng, levels)?;
        Ok(Model {
            store,
            autoencoder,
            skip,
            estimator,
        })
    }
}

/// Nodes produced by one forward pass; pieces an ablation skips are `None`.
pub struct ForwardPieces {
    pub sd_left: Option<(NodeId, NodeId)>,
    pub sd_right: Option<(NodeId, NodeId)>,
    pub prior_left: Option<DensifiedPrior>,
    pub prior_right: Option<DensifiedPrior>,
    pub composed: Option<Vec<ComposedLevel>>,
}

/// Runs the model on one sample. `with_estimator: false` builds only the
/// densification branch (all the stereo machinery is skipped, which is what
/// makes prior-only training cheap).
pub fn forward_model<T: Scalar>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    sample: &Sample<T>,
    ablation: Ablation,
    with_estimator: bool,
) -> Result<ForwardPieces> {
    let use_prior = ablation != Ablation::NoPrior;
    let use_autoencoder = use_prior && ablation != Ablation::NoAutoencoder;

    let mut sd_left = None;
    let mut sd_right = None;
    let mut prior_left = None;
    let mut prior_right = None;
    if use_prior {
        let lv = tape.leaf(sample.sparse_left.values.clone());
        let lm = tape.leaf(sample.sparse_left.mask.clone());
        let rv = tape.leaf(sample.sparse_right.values.clone());
        let rm = tape.leaf(sample.sparse_right.mask.clone());
        sd_left = Some((lv, lm));
        sd_right = Some((rv, rm));
        if use_autoencoder {
            prior_left = Some(model.autoencoder.forward(tape, &model.store, lv, lm)?);
            prior_right = Some(model.autoencoder.forward(tape, &model.store, rv, rm)?);
        } else {
            prior_left = Some(DensifiedPrior {
                values: lv,
                mask: lm,
            });
            prior_right = Some(DensifiedPrior {
                values: rv,
                mask: rm,
            });
        }
    }

    let composed = if with_estimator {
        let (n, _, h, w) = sample.left.dims4()?;
        let image = tape.leaf(sample.left.clone());
        let pyramid = model.estimator.forward(tape, &model.store, image)?;
        let use_skip = use_prior && ablation != Ablation::NoSkip;
        let (res_l, res_r) = if use_skip {
            let pl = prior_left.as_ref().unwrap();
            let pr = prior_right.as_ref().unwrap();
            (
                model.skip.forward(tape, &model.store, pl.values)?,
                model.skip.forward(tape, &model.store, pr.values)?,
            )
        } else {
            (
                tape.leaf(Tensor::zeros(&[n, 1, h, w])),
                tape.leaf(Tensor::zeros(&[n, 1, h, w])),
            )
        };
        Some(compose_pyramid(tape, &pyramid, res_l, res_r)?)
    } else {
        None
    };

    Ok(ForwardPieces {
        sd_left,
        sd_right,
        prior_left,
        prior_right,
        composed,
    })
}

/// Deployment forward: left view only, so one autoencoder branch and a
/// single estimator pass. Returns the full-resolution left disparity node.
pub fn forward_left<T: Scalar>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    image: &Tensor<T>,
    sparse: &SparseDisparityMap<T>,
    ablation: Ablation,
) -> Result<NodeId> {
    let (n, _, h, w) = image.dims4()?;
    let use_prior = ablation != Ablation::NoPrior;

    let prior = if use_prior {
        let values = tape.leaf(sparse.values.clone());
        let mask = tape.leaf(sparse.mask.clone());
        if ablation != Ablation::NoAutoencoder {
            Some(model.autoencoder.forward(tape, &model.store, values, mask)?)
        } else {
            Some(DensifiedPrior { values, mask })
        }
    } else {
        None
    };

    let image = tape.leaf(image.clone());
    let pyramid = model.estimator.forward(tape, &model.store, image)?;
    let residual = match &prior {
        Some(p) if ablation != Ablation::NoSkip => {
            model.skip.forward(tape, &model.store, p.values)?
        }
        _ => tape.leaf(Tensor::zeros(&[n, 1, h, w])),
    };
    let unused_right = tape.leaf(Tensor::zeros(&[n, 1, h, w]));
    let composed = compose_pyramid(tape, &pyramid, residual, unused_right)?;
    Ok(composed[0].left)
}

/// One training step's recorded graph: the loss node and its breakdown,
/// plus the full-resolution disparities when the estimator ran.
pub struct StepOutputs<T: Scalar> {
    pub loss: NodeId,
    pub breakdown: LossBreakdown<T>,
    pub left_disparity: Option<NodeId>,
    pub right_disparity: Option<NodeId>,
}

/// Builds the complete objective for one sample under the given ablation.
/// When both the stereo and prior-agreement weights are zero the estimator
/// never runs at all.
pub fn build_step<T: Scalar>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    sample: &Sample<T>,
    ablation: Ablation,
    weights: &LossWeights,
) -> Result<StepOutputs<T>> {
    let stereo_active = weights.stereo != 0.0 || weights.outer != 0.0;
    let pieces = forward_model(tape, model, sample, ablation, stereo_active)?;
    let symmetric = ablation != Ablation::NoSymmetry;
    let use_autoencoder = ablation != Ablation::NoPrior && ablation != Ablation::NoAutoencoder;

    // Prior reconstruction: the densified map against the sparse samples it
    // was built from. Meaningful only when the autoencoder actually ran.
    let inner = |prior: &Option<DensifiedPrior>, sd: &Option<(NodeId, NodeId)>| {
        if !use_autoencoder {
            return None;
        }
        match (prior, *sd) {
            (Some(p), Some((values, mask))) => Some(MaskedTarget {
                prediction: p.values,
                target: values,
                mask,
            }),
            _ => None,
        }
    };
    let inner_left = inner(&pieces.prior_left, &pieces.sd_left);
    let inner_right = if symmetric {
        inner(&pieces.prior_right, &pieces.sd_right)
    } else {
        None
    };

    // Prior agreement: the full-resolution disparity against the densified
    // prior wherever the prior carries information.
    let full = pieces.composed.as_ref().map(|c| &c[0]);
    let outer = |prior: &Option<DensifiedPrior>, prediction: Option<NodeId>| match (prior, prediction)
    {
        (Some(p), Some(prediction)) => Some(MaskedTarget {
            prediction,
            target: p.values,
            mask: p.mask,
        }),
        _ => None,
    };
    let outer_left = outer(&pieces.prior_left, full.map(|f| f.left));
    let outer_right = if symmetric {
        outer(&pieces.prior_right, full.map(|f| f.right))
    } else {
        None
    };

    let mut scales = Vec::new();
    if let Some(composed) = &pieces.composed {
        let mut left_img = sample.left.clone();
        let mut right_img = sample.right.clone();
        let mut at = 1usize;
        for level in composed {
            while at < level.div {
                left_img = left_img.avg_down2()?;
                right_img = right_img.avg_down2()?;
                at *= 2;
            }
            scales.push(StereoScale {
                div: level.div,
                left_image: tape.leaf(left_img.clone()),
                right_image: tape.leaf(right_img.clone()),
                left_disparity: level.left,
                right_disparity: level.right,
            });
        }
    }

    let inputs = LossInputs {
        scales: &scales,
        inner_left,
        inner_right,
        outer_left,
        outer_right,
    };
    let (loss, breakdown) = total_loss(tape, &inputs, weights)?;
    Ok(StepOutputs {
        loss,
        breakdown,
        left_disparity: full.map(|f| f.left),
        right_disparity: full.map(|f| f.right),
    })
}
