//! Residual refinement block that feeds the densified prior into the
//! disparity estimate.
//!
//! A small bottleneck path (1x1 -> 3x3 -> 1x1 with ELU between) runs beside
//! a 1x1 projection of the same input; their sum passes through a final 1x1
//! whose weights and bias start at zero. Starting from zero means a freshly
//! initialized block leaves the estimator's disparities untouched, so
//! training begins from the plain estimate and learns how much of the prior
//! to mix in.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{NodeId, ParamId, ParamStore, Tape};
use crate::tensor::Tensor;
use rand::RngCore;

#[derive(Clone)]
struct Conv {
    weights: ParamId,
    bias: ParamId,
    pad: usize,
}

/// Parameter handles of the refinement block.
#[derive(Clone)]
pub struct SkipResidual {
    main0: Conv,
    main1: Conv,
    main2: Conv,
    proj: Conv,
    out: Conv,
}

const WIDTH: usize = 16;
const FUSED: usize = 64;

fn register_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    rng: Option<&mut dyn RngCore>,
) -> Conv {
    let shape = [c_out, c_in, k, k];
    let (w, b) = match rng {
        Some(rng) => {
            let fan_in = c_in * k * k;
            let bound = 1.0 / (fan_in as f64).sqrt();
            (
                Tensor::rand_uniform(&shape, -bound, bound, rng),
                Tensor::rand_uniform(&[c_out], -bound, bound, rng),
            )
        }
        None => (Tensor::zeros(&shape), Tensor::zeros(&[c_out])),
    };
    Conv {
        weights: store.register(format!("{name}.weights"), w),
        bias: store.register(format!("{name}.bias"), b),
        pad: k / 2,
    }
}

impl SkipResidual {
    /// Registers all parameters in `store` under `skip.*`. The output
    /// convolution starts at zero; the rest draw from `rng`.
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, rng: &mut dyn RngCore) -> Self {
        SkipResidual {
            main0: register_conv(store, "skip.main0", 1, WIDTH, 1, Some(rng)),
            main1: register_conv(store, "skip.main1", WIDTH, WIDTH, 3, Some(rng)),
            main2: register_conv(store, "skip.main2", WIDTH, FUSED, 1, Some(rng)),
            proj: register_conv(store, "skip.proj", 1, FUSED, 1, Some(rng)),
            out: register_conv(store, "skip.out", FUSED, 1, 1, None),
        }
    }

    fn conv<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        conv: &Conv,
        x: NodeId,
    ) -> Result<NodeId> {
        let w = tape.param(store, conv.weights);
        let b = tape.param(store, conv.bias);
        tape.conv2d(x, w, b, 1, conv.pad)
    }

    /// Maps a dense disparity prior `[N, 1, H, W]` to a same-shaped residual.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        prior: NodeId,
    ) -> Result<NodeId> {
        let h = self.conv(tape, store, &self.main0, prior)?;
        let h = tape.elu(h)?;
        let h = self.conv(tape, store, &self.main1, h)?;
        let h = tape.elu(h)?;
        let h = self.conv(tape, store, &self.main2, h)?;
        let p = self.conv(tape, store, &self.proj, prior)?;
        let fused = tape.add(h, p)?;
        self.conv(tape, store, &self.out, fused)
    }
}
