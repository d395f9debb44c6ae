//! Densification autoencoder for sparse disparity maps.
//!
//! A stack of mask-normalized convolutions turns a sparse disparity map into
//! a dense one. Each layer widens the set of pixels that carry information,
//! so the validity mask is dilated by the matching kernel between layers.
//! Both cameras are densified by the same weights; calling [`forward`]
//! twice on one tape reuses the parameter nodes, and their gradients
//! accumulate across both passes.
//!
//! [`forward`]: SparseAutoencoder::forward

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{NodeId, ParamId, ParamStore, Tape};
use crate::tensor::Tensor;
use rand::RngCore;

/// Kernel sizes of the five mask-normalized convolution layers.
pub const AUTOENCODER_KERNELS: [usize; 5] = [9, 5, 3, 3, 1];
/// Channel counts along the stack, input first, output last.
pub const AUTOENCODER_CHANNELS: [usize; 6] = [1, 16, 16, 16, 16, 1];

#[derive(Clone)]
struct Layer {
    weights: ParamId,
    bias: ParamId,
    kernel: usize,
}

/// Parameter handles of the densification network.
#[derive(Clone)]
pub struct SparseAutoencoder {
    layers: Vec<Layer>,
}

/// Dense disparity values plus the dilated validity mask they cover.
#[derive(Clone, Copy, Debug)]
pub struct DensifiedPrior {
    pub values: NodeId,
    pub mask: NodeId,
}

fn uniform_init<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut dyn RngCore) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

impl SparseAutoencoder {
    /// Registers all layer parameters in `store` under
    /// `autoencoder.layer{i}.{weights,bias}`.
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, rng: &mut dyn RngCore) -> Self {
        let mut layers = Vec::with_capacity(AUTOENCODER_KERNELS.len());
        for (i, &k) in AUTOENCODER_KERNELS.iter().enumerate() {
            let c_in = AUTOENCODER_CHANNELS[i];
            let c_out = AUTOENCODER_CHANNELS[i + 1];
            let fan_in = c_in * k * k;
            let weights = store.register(
                format!("autoencoder.layer{i}.weights"),
                uniform_init(&[c_out, c_in, k, k], fan_in, rng),
            );
            let bias = store.register(
                format!("autoencoder.layer{i}.bias"),
                uniform_init(&[c_out], fan_in, rng),
            );
            layers.push(Layer { weights, bias, kernel: k });
        }
        SparseAutoencoder { layers }
    }

    /// Densifies one sparse map. `values` and `mask` are `[N, 1, H, W]`
    /// nodes; the mask must be binary with zeros at unobserved pixels.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        values: NodeId,
        mask: NodeId,
    ) -> Result<DensifiedPrior> {
        let mut x = values;
        let mut m = mask;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(store, layer.weights);
            let b = tape.param(store, layer.bias);
            x = tape.sparse_conv2d(x, m, w, b)?;
            m = tape.propagate_mask(m, layer.kernel)?;
            if i < last {
                x = tape.elu(x)?;
            }
        }
        Ok(DensifiedPrior { values: x, mask: m })
    }
}
