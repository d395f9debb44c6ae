//! Encoder-decoder disparity estimator.
//!
//! The encoder stacks one 3x3 convolution per level, the first at stride 1
//! and the rest at stride 2, so an input must be divisible by
//! `2^(levels - 1)`. The decoder walks back up through four stages at 1/8,
//! 1/4, 1/2 and full resolution; each stage fuses the upsampled carry, the
//! matching encoder feature, and the previous stage's disparity, then a head
//! maps the fused feature to two disparity channels (left camera first)
//! bounded by [`MAX_DISPARITY_RATIO`] of that stage's width.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, ParamId, ParamStore, Tape};
use crate::tensor::Tensor;
use rand::RngCore;

/// Encoder channel widths from the full-resolution level downwards.
pub const ENCODER_CHANNELS: [usize; 5] = [16, 32, 64, 96, 128];
/// Decoder channel widths at 1/8, 1/4, 1/2 and full resolution.
pub const DECODER_CHANNELS: [usize; 4] = [48, 40, 24, 16];
/// Channels after the 1x1 reduction of the deepest encoder feature.
const REDUCED: usize = 64;
/// Head outputs are squashed to `(0, ratio * stage width)`.
pub const MAX_DISPARITY_RATIO: f64 = 0.3;
/// Composed disparities never fall below this, keeping depths finite.
pub const MIN_DISPARITY: f64 = 1e-6;

#[derive(Clone)]
struct Conv {
    weights: ParamId,
    bias: ParamId,
    stride: usize,
    pad: usize,
}

/// Parameter handles of the estimator network.
#[derive(Clone)]
pub struct DisparityEstimator {
    levels: usize,
    encoder: Vec<Conv>,
    reduce: Conv,
    decoder: Vec<Conv>,
    heads: Vec<Conv>,
}

/// One decoder output: a `[N, 2, H/div, W/div]` disparity map, channel 0 for
/// the left camera and channel 1 for the right.
#[derive(Clone, Copy, Debug)]
pub struct PyramidLevel {
    pub div: usize,
    pub disparity: NodeId,
}

/// Raw estimator outputs, full resolution first.
pub struct DisparityPyramid {
    pub scales: Vec<PyramidLevel>,
}

/// One pyramid level after mixing in the prior residual, split per camera.
#[derive(Clone, Copy, Debug)]
pub struct ComposedLevel {
    pub div: usize,
    pub left: NodeId,
    pub right: NodeId,
}

fn register_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    rng: &mut dyn RngCore,
) -> Conv {
    let fan_in = c_in * k * k;
    let bound = 1.0 / (fan_in as f64).sqrt();
    Conv {
        weights: store.register(
            format!("{name}.weights"),
            Tensor::rand_uniform(&[c_out, c_in, k, k], -bound, bound, rng),
        ),
        bias: store.register(
            format!("{name}.bias"),
            Tensor::rand_uniform(&[c_out], -bound, bound, rng),
        ),
        stride,
        pad: k / 2,
    }
}

impl DisparityEstimator {
    /// Registers all parameters under `estimator.*`. `levels` picks the
    /// encoder depth; four is the shallowest that still feeds every decoder
    /// stage, five the deepest the channel plan covers.
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut dyn RngCore,
        levels: usize,
    ) -> Result<Self> {
        if !(4..=ENCODER_CHANNELS.len()).contains(&levels) {
            return Err(Error::invalid(format!(
                "estimator depth must be 4 or 5 levels, got {levels}"
            )));
        }
        let mut encoder = Vec::with_capacity(levels);
        for i in 0..levels {
            let c_in = if i == 0 { 3 } else { ENCODER_CHANNELS[i - 1] };
            let stride = if i == 0 { 1 } else { 2 };
            encoder.push(register_conv(
                store,
                &format!("estimator.enc{i}"),
                c_in,
                ENCODER_CHANNELS[i],
                3,
                stride,
                rng,
            ));
        }
        let reduce = register_conv(
            store,
            "estimator.reduce",
            ENCODER_CHANNELS[levels - 1],
            REDUCED,
            1,
            1,
            rng,
        );
        let mut decoder = Vec::with_capacity(4);
        let mut heads = Vec::with_capacity(4);
        for j in 0..4 {
            let div = 8usize >> j;
            let enc_idx = 3 - j;
            let mut c_in = if j == 0 { REDUCED } else { DECODER_CHANNELS[j - 1] };
            if enc_idx < levels - 1 {
                c_in += ENCODER_CHANNELS[enc_idx];
            }
            if j > 0 {
                c_in += 2;
            }
            decoder.push(register_conv(
                store,
                &format!("estimator.dec{div}"),
                c_in,
                DECODER_CHANNELS[j],
                3,
                1,
                rng,
            ));
            heads.push(register_conv(
                store,
                &format!("estimator.head{div}"),
                DECODER_CHANNELS[j],
                2,
                3,
                1,
                rng,
            ));
        }
        Ok(DisparityEstimator {
            levels,
            encoder,
            reduce,
            decoder,
            heads,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
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
        tape.conv2d(x, w, b, conv.stride, conv.pad)
    }

    /// Runs the network on an `[N, 3, H, W]` image node and returns the four
    /// disparity maps, full resolution first.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        image: NodeId,
    ) -> Result<DisparityPyramid> {
        let (_, c, h, w) = tape.value(image).dims4()?;
        if c != 3 {
            return Err(Error::invalid(format!(
                "estimator expects a 3-channel image, got {c} channels"
            )));
        }
        let step = 1usize << (self.levels - 1);
        if h % step != 0 || w % step != 0 {
            return Err(Error::invalid(format!(
                "estimator input {h}x{w} must be divisible by {step}"
            )));
        }

        let mut features = Vec::with_capacity(self.levels);
        let mut x = image;
        for conv in &self.encoder {
            x = self.conv(tape, store, conv, x)?;
            x = tape.elu(x)?;
            features.push(x);
        }
        let mut carry = self.conv(tape, store, &self.reduce, features[self.levels - 1])?;
        carry = tape.elu(carry)?;

        let mut scales = Vec::with_capacity(4);
        let mut prev_disparity: Option<NodeId> = None;
        for j in 0..4 {
            let div = 8usize >> j;
            if j > 0 || self.levels == 5 {
                carry = tape.upsample_bilinear_x2(carry)?;
            }
            let mut parts = vec![carry];
            let enc_idx = 3 - j;
            if enc_idx < self.levels - 1 {
                parts.push(features[enc_idx]);
            }
            if let Some(prev) = prev_disparity {
                parts.push(tape.upsample_bilinear_x2(prev)?);
            }
            let fused = if parts.len() == 1 {
                parts[0]
            } else {
                tape.concat_channels(&parts)?
            };
            carry = self.conv(tape, store, &self.decoder[j], fused)?;
            carry = tape.elu(carry)?;
            let head = self.conv(tape, store, &self.heads[j], carry)?;
            let squashed = tape.sigmoid(head)?;
            let d_max = MAX_DISPARITY_RATIO * (w / div) as f64;
            let disparity = tape.scale(squashed, T::from_f64(d_max))?;
            prev_disparity = Some(disparity);
            scales.push(PyramidLevel { div, disparity });
        }
        scales.reverse();
        Ok(DisparityPyramid { scales })
    }
}

/// Adds the full-resolution prior residuals into every pyramid level and
/// splits the result per camera. The residual is average-pooled down to each
/// level's grid and divided by the level's width ratio, since disparities
/// measured on a half-width grid are half as many pixels. Values are floored
/// at [`MIN_DISPARITY`]. Feeding all-zero residuals reproduces the raw
/// estimator disparities bit for bit.
pub fn compose_pyramid<T: Scalar>(
    tape: &mut Tape<T>,
    pyramid: &DisparityPyramid,
    residual_left: NodeId,
    residual_right: NodeId,
) -> Result<Vec<ComposedLevel>> {
    let mut out = Vec::with_capacity(pyramid.scales.len());
    for level in &pyramid.scales {
        let compose_one = |tape: &mut Tape<T>, pre: NodeId, res: NodeId| -> Result<NodeId> {
            let mut r = res;
            let mut at = 1usize;
            while at < level.div {
                r = tape.downsample_avg_x2(r)?;
                at *= 2;
            }
            let scaled = tape.scale(r, T::from_f64(1.0 / level.div as f64))?;
            let sum = tape.add(pre, scaled)?;
            tape.clamp_min(sum, T::from_f64(MIN_DISPARITY))
        };
        let left_pre = tape.slice_channels(level.disparity, 0, 1)?;
        let right_pre = tape.slice_channels(level.disparity, 1, 1)?;
        let left = compose_one(tape, left_pre, residual_left)?;
        let right = compose_one(tape, right_pre, residual_right)?;
        out.push(ComposedLevel {
            div: level.div,
            left,
            right,
        });
    }
    Ok(out)
}
