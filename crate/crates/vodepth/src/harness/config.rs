//! Run configuration: `key = value` parsing, canonical serialization, and
//! the learning-rate schedule.
//!
//! The canonical text form is what goes into checkpoints, so two runs can be
//! compared by comparing their config blocks verbatim.

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Numeric precision the run computes in. Checkpoints always store f64.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::invalid(format!(
                "unknown precision {other:?}, expected \"f32\" or \"f64\""
            ))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Which model component, if any, a run disables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Full model.
    None,
    /// No odometry prior at all: the estimator trains from stereo alone.
    NoPrior,
    /// The raw sparse map stands in for the densified prior.
    NoAutoencoder,
    /// The prior is densified but never mixed into the disparities.
    NoSkip,
    /// Prior terms are applied to the left camera only.
    NoSymmetry,
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "no-prior" => Ok(Ablation::NoPrior),
            "no-autoencoder" => Ok(Ablation::NoAutoencoder),
            "no-skip" => Ok(Ablation::NoSkip),
            "no-symmetry" => Ok(Ablation::NoSymmetry),
            other => Err(Error::invalid(format!(
                "unknown ablation {other:?}, expected none, no-prior, \
                 no-autoencoder, no-skip or no-symmetry"
            ))),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ablation::None => "none",
            Ablation::NoPrior => "no-prior",
            Ablation::NoAutoencoder => "no-autoencoder",
            Ablation::NoSkip => "no-skip",
            Ablation::NoSymmetry => "no-symmetry",
        })
    }
}

/// Everything a training run needs beyond the dataset itself.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub levels: usize,
    pub precision: Precision,
    pub ablation: Ablation,
    pub augment: bool,
    pub log_every: usize,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 17,
            epochs: 30,
            batch_size: 8,
            lr: 1e-4,
            levels: 5,
            precision: Precision::F32,
            ablation: Ablation::None,
            augment: true,
            log_every: 1,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::invalid(format!("config key {key}: cannot parse {value:?}"))
            })
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "levels" => self.levels = num(key, value)?,
            "precision" => self.precision = value.parse()?,
            "ablation" => self.ablation = value.parse()?,
            "augment" => self.augment = num(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            "alpha_stereo" => self.weights.stereo = num(key, value)?,
            "alpha_inner" => self.weights.inner = num(key, value)?,
            "alpha_outer" => self.weights.outer = num(key, value)?,
            "beta_appearance" => self.weights.appearance = num(key, value)?,
            "beta_lr" => self.weights.lr = num(key, value)?,
            "beta_occlusion" => self.weights.occlusion = num(key, value)?,
            "beta_smoothness" => self.weights.smoothness = num(key, value)?,
            "gamma_ssim" => self.weights.ssim_mix = num(key, value)?,
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a config block: one `key = value` per line, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::invalid(format!(
                    "config line {line:?} is not key = value"
                )));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Canonical text form; fixed key order, round-trips through
    /// [`TrainConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let w = &self.weights;
        format!(
            "seed = {}\nepochs = {}\nbatch_size = {}\nlr = {}\nlevels = {}\n\
             precision = {}\nablation = {}\naugment = {}\nlog_every = {}\n\
             alpha_stereo = {}\nalpha_inner = {}\nalpha_outer = {}\n\
             beta_appearance = {}\nbeta_lr = {}\nbeta_occlusion = {}\n\
             beta_smoothness = {}\ngamma_ssim = {}\n",
            self.seed,
            self.epochs,
            self.batch_size,
            self.lr,
            self.levels,
            self.precision,
            self.ablation,
            self.augment,
            self.log_every,
            w.stereo,
            w.inner,
            w.outer,
            w.appearance,
            w.lr,
            w.occlusion,
            w.smoothness,
            w.ssim_mix,
        )
    }

    /// Learning rate for a 0-indexed epoch: the base rate halves once at
    /// `ceil(3E/5)` and again at `ceil(4E/5)`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let first = (3 * self.epochs).div_ceil(5);
        let second = (4 * self.epochs).div_ceil(5);
        if epoch >= second {
            self.lr * 0.25
        } else if epoch >= first {
            self.lr * 0.5
        } else {
            self.lr
        }
    }

    /// Whether `other` continues the same run: every field must match except
    /// the epoch budget, which a resumed run may extend.
    pub fn resumes(&self, other: &TrainConfig) -> bool {
        let strip = |cfg: &TrainConfig| {
            let mut c = cfg.clone();
            c.epochs = 0;
            c.to_text()
        };
        strip(self) == strip(other)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::invalid(
                "epochs, batch_size and log_every must be positive",
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.weights.ssim_mix) {
            return Err(Error::invalid("gamma_ssim must lie in [0, 1]"));
        }
        Ok(())
    }
}
