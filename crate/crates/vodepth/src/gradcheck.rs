//! Finite-difference verification of recorded gradients.
//!
//! Checks run in f64 with central differences. A comparison passes when
//! `|analytic - numeric| <= rel_tol * max(|analytic|, |numeric|) + abs_floor`.

use crate::error::{Error, Result};
use crate::tape::{NodeId, ParamStore, Tape};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Copy, Debug)]
pub struct CheckSettings {
    pub eps: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings {
            eps: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-8,
        }
    }
}

impl CheckSettings {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        CheckSettings {
            rel_tol,
            ..Default::default()
        }
    }

    fn compare(&self, what: String, analytic: f64, numeric: f64) -> Result<f64> {
        let diff = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        if diff > self.rel_tol * scale + self.abs_floor {
            return Err(Error::invalid(format!(
                "gradient mismatch at {what}: analytic {analytic:.9e} vs numeric {numeric:.9e} \
                 (diff {diff:.3e}, rel {:.3e})",
                diff / scale.max(1e-300)
            )));
        }
        Ok(if scale > 0.0 { diff / scale } else { 0.0 })
    }
}

/// Checks gradients w.r.t. every element of every input tensor. `build` must
/// construct the scalar loss from leaf nodes of the given inputs on a fresh
/// tape each call. Returns the worst relative error seen.
pub fn check_input_gradients(
    inputs: &[Tensor<f64>],
    settings: CheckSettings,
    build: impl Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
) -> Result<f64> {
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        Ok(tape.scalar_value(loss))
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    let (_, watched) = tape.backward_watched(loss, 0, &ids)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + settings.eps;
            let f_plus = eval(&work)?;
            work[i].data_mut()[j] = orig - settings.eps;
            let f_minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * settings.eps);
            let analytic = watched[i].as_ref().map_or(0.0, |g| g.data()[j]);
            let rel = settings.compare(format!("input {i} element {j}"), analytic, numeric)?;
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Checks gradients w.r.t. parameter elements by perturbing store values.
/// With `sample: Some((rng, count))` only a random subset of coordinates is
/// tested (all otherwise). Returns the worst relative error seen.
pub fn check_param_gradients(
    store: &mut ParamStore<f64>,
    settings: CheckSettings,
    mut sample: Option<(&mut dyn rand::RngCore, usize)>,
    build: impl Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<NodeId>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    let grads = tape.backward_detached(loss, store.len())?;

    let mut coords: Vec<(usize, usize)> = Vec::new();
    for pid in store.ids() {
        for j in 0..store.get(pid).value.numel() {
            coords.push((pid.index(), j));
        }
    }
    if let Some((rng, count)) = sample.as_mut() {
        let total = coords.len();
        if *count < total {
            let mut picked = Vec::with_capacity(*count);
            for _ in 0..*count {
                picked.push(coords[rng.gen_range(0..total)]);
            }
            coords = picked;
        }
    }

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        Ok(tape.scalar_value(loss))
    };

    let mut worst = 0.0f64;
    for (pi, j) in coords {
        let pid = store
            .ids()
            .nth(pi)
            .expect("coordinate refers to a registered parameter");
        let orig = store.get(pid).value.data()[j];
        store.get_mut(pid).value.data_mut()[j] = orig + settings.eps;
        let f_plus = eval(store)?;
        store.get_mut(pid).value.data_mut()[j] = orig - settings.eps;
        let f_minus = eval(store)?;
        store.get_mut(pid).value.data_mut()[j] = orig;
        let numeric = (f_plus - f_minus) / (2.0 * settings.eps);
        let analytic = grads.get(pid).map_or(0.0, |g| g.data()[j]);
        let name = store.name(pid).to_string();
        let rel = settings.compare(format!("{name}[{j}]"), analytic, numeric)?;
        worst = worst.max(rel);
    }
    Ok(worst)
}
