//! Training loop: shuffled mini-batches, per-sample tapes, averaged
//! gradients, Adam updates and a piecewise learning-rate schedule.

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::harness::adam::Adam;
use crate::harness::augment::{self, AugmentDraw};
use crate::harness::config::TrainConfig;
use crate::harness::model::{build_step, Model};
use crate::scalar::Scalar;
use crate::tape::{GradBuffer, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-epoch summary, averaged over samples.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub stereo: f64,
    pub inner: f64,
    pub outer: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!(
            "epoch {:>4}  lr {:.3e}  loss {:.6}  stereo {:.6}  inner {:.6}  outer {:.6}",
            self.epoch, self.lr, self.loss, self.stereo, self.inner, self.outer
        )
    }
}

/// Runs epochs `start_epoch..config.epochs` over `dataset`, mutating the
/// model and optimizer in place. Every epoch reseeds its own generator from
/// `(seed, epoch)`, so epoch N's shuffle and augmentations are the same
/// whether reached in one run or across a resume. `on_epoch` fires after each
/// completed epoch.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    adam: &mut Adam<T>,
    config: &TrainConfig,
    dataset: &[Sample<T>],
    start_epoch: usize,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let n_params = model.store.len();
    let mut logs = Vec::new();

    for epoch in start_epoch..config.epochs {
        adam.set_lr(config.lr_at_epoch(epoch));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);

        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);

        let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for chunk in order.chunks(config.batch_size) {
            let mut grads = GradBuffer::new(n_params);
            for &idx in chunk {
                let draw = if config.augment {
                    AugmentDraw::draw(&mut rng)
                } else {
                    AugmentDraw::identity()
                };
                let sample = augment::apply(&dataset[idx], &draw)?;
                let mut tape = Tape::new();
                let step = build_step(&mut tape, model, &sample, config.ablation, &config.weights)?;
                sums.0 += step.breakdown.total.as_f64();
                sums.1 += step
                    .breakdown
                    .stereo
                    .iter()
                    .map(|s| s.as_f64())
                    .sum::<f64>();
                sums.2 +=
                    step.breakdown.inner_left.as_f64() + step.breakdown.inner_right.as_f64();
                sums.3 +=
                    step.breakdown.outer_left.as_f64() + step.breakdown.outer_right.as_f64();
                let sample_grads = tape.backward_detached(step.loss, n_params)?;
                grads.merge(&sample_grads)?;
            }
            grads.scale(T::from_f64(1.0 / chunk.len() as f64));
            model.store.zero_gradients();
            grads.apply_to_store(&mut model.store)?;
            adam.apply(&mut model.store)?;
        }

        let inv = 1.0 / dataset.len() as f64;
        let log = EpochLog {
            epoch,
            lr: config.lr_at_epoch(epoch),
            loss: sums.0 * inv,
            stereo: sums.1 * inv,
            inner: sums.2 * inv,
            outer: sums.3 * inv,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
