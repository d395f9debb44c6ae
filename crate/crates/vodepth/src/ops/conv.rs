//! 2-D cross-correlation with zero padding.
//!
//! The forward kernel accumulates contributions per output element in
//! (ci, ky, kx) order with the bias added last, the same order as the
//! straight-loop reference; inner loops stay contiguous over x, autovectorize
//! and use fused multiply-add, so results agree with the reference to
//! rounding rather than bitwise. The weight gradient accumulates into a fixed
//! number of lanes to break the serial reduction chain. All loop structures
//! and lane counts are compile-time constants, so every kernel is
//! deterministic across runs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Output indices `o` in `[0, out_len)` with `0 <= o*stride + k_off - pad < limit`.
#[inline]
fn valid_out_range(
    limit: usize,
    k_off: usize,
    pad: usize,
    stride: usize,
    out_len: usize,
) -> (usize, usize) {
    let lo = if k_off >= pad {
        0
    } else {
        (pad - k_off + stride - 1) / stride
    };
    let max_in = limit - 1 + pad;
    if max_in < k_off {
        return (0, 0);
    }
    let hi = ((max_in - k_off) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

fn check_conv_args<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize)> {
    let (n, cin, h, wd) = x.dims4()?;
    let (cout, cin_w, k, k2) = w.dims4()?;
    if cin_w != cin || k != k2 {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!("input {:?} vs weights {:?}", x.shape(), w.shape()),
        });
    }
    if k % 2 == 0 {
        return Err(Error::invalid(format!("conv2d kernel must be odd, got {k}")));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d stride must be >= 1"));
    }
    if b.shape() != [cout] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!("bias {:?} vs Cout {cout}", b.shape()),
        });
    }
    if h + 2 * pad < k || wd + 2 * pad < k {
        return Err(Error::invalid(format!(
            "conv2d: {h}x{wd} too small for kernel {k} with padding {pad}"
        )));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    Ok((n, cin, h, wd, cout, k, ho, wo))
}

/// Output-channel block width of the tiled kernel; all weights of one block
/// stay broadcast-resident while a tile accumulates.
const CO_BLOCK: usize = 4;
/// Output columns per tile; one f32 SIMD register on AVX-512.
const TILE_W: usize = 16;

/// Packs one output-channel block as `[ci][ky][kx][j]` so the tile loop
/// walks it linearly.
fn pack_weight_block<T: Scalar>(
    w: &[T],
    co0: usize,
    cb: usize,
    cin: usize,
    k: usize,
) -> Vec<T> {
    let kk = k * k;
    let mut packed = vec![T::zero(); cin * kk * cb];
    for ci in 0..cin {
        for t in 0..kk {
            for j in 0..cb {
                packed[(ci * kk + t) * cb + j] = w[((co0 + j) * cin + ci) * kk + t];
            }
        }
    }
    packed
}

/// Accumulates a `CB x TILE_W` output tile at row `yo`, columns
/// `x0..x0+TILE_W`, reading a zero-padded input scratch. Terms are applied
/// in (ci, ky, kx) order per element, matching the unblocked path.
#[inline(always)]
fn conv_tile<T: Scalar, const CB: usize>(
    scratch: &[T],
    wp: usize,
    plane: usize,
    packed: &[T],
    cin: usize,
    k: usize,
    yo: usize,
    x0: usize,
) -> [[T; TILE_W]; CB] {
    let mut acc = [[T::zero(); TILE_W]; CB];
    let mut widx = 0;
    for ci in 0..cin {
        for ky in 0..k {
            let row = &scratch[ci * plane + (yo + ky) * wp..][..wp];
            for kx in 0..k {
                let src: &[T; TILE_W] = row[x0 + kx..][..TILE_W].try_into().unwrap();
                let wv = &packed[widx..][..CB];
                for (aj, &wj) in acc.iter_mut().zip(wv) {
                    for l in 0..TILE_W {
                        aj[l] = wj.mul_add(src[l], aj[l]);
                    }
                }
                widx += CB;
            }
        }
    }
    acc
}

/// Runs one packed output-channel block over a sample. The final partial
/// tile of each row re-runs aligned to the right edge; the overlap rewrites
/// identical values, so every element is still written exactly once per
/// value.
fn conv_run_block<T: Scalar, const CB: usize>(
    scratch: &[T],
    wp: usize,
    plane: usize,
    packed: &[T],
    cin: usize,
    k: usize,
    bias: &[T],
    out: &mut [T],
    ho: usize,
    wo: usize,
) {
    for yo in 0..ho {
        let mut x0 = 0;
        loop {
            let acc = conv_tile::<T, CB>(scratch, wp, plane, packed, cin, k, yo, x0);
            for j in 0..CB {
                let bv = bias[j];
                let orow = &mut out[j * ho * wo + yo * wo + x0..][..TILE_W];
                for l in 0..TILE_W {
                    orow[l] = acc[j][l] + bv;
                }
            }
            if x0 + TILE_W == wo {
                break;
            }
            x0 += TILE_W;
            if x0 + TILE_W > wo {
                x0 = wo - TILE_W;
            }
        }
    }
}

/// Stride-1 forward pass over a padded scratch copy of each sample.
fn conv2d_forward_blocked<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    pad: usize,
    dims: (usize, usize, usize, usize, usize, usize, usize, usize),
) -> Tensor<T> {
    let (n, cin, h, wd, cout, k, ho, wo) = dims;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let xd = x.data();
    let bd = b.data();
    let od = out.data_mut();

    let mut blocks: Vec<(usize, usize, Vec<T>)> = Vec::new();
    let mut co0 = 0;
    while co0 < cout {
        let rem = cout - co0;
        let cb = if rem >= CO_BLOCK {
            CO_BLOCK
        } else if rem >= 2 {
            2
        } else {
            1
        };
        blocks.push((co0, cb, pack_weight_block(w.data(), co0, cb, cin, k)));
        co0 += cb;
    }

    let wp = wd + 2 * pad;
    let plane = (h + 2 * pad) * wp;
    let mut scratch = vec![T::zero(); cin * plane];
    for ni in 0..n {
        if pad > 0 {
            scratch.fill(T::zero());
        }
        for ci in 0..cin {
            let src = &xd[(ni * cin + ci) * h * wd..][..h * wd];
            for y in 0..h {
                scratch[ci * plane + (y + pad) * wp + pad..][..wd]
                    .copy_from_slice(&src[y * wd..][..wd]);
            }
        }
        for (co0, cb, packed) in &blocks {
            let bias = &bd[*co0..*co0 + *cb];
            let out_block = &mut od[(ni * cout + *co0) * ho * wo..][..*cb * ho * wo];
            match cb {
                4 => conv_run_block::<T, 4>(
                    &scratch, wp, plane, packed, cin, k, bias, out_block, ho, wo,
                ),
                2 => conv_run_block::<T, 2>(
                    &scratch, wp, plane, packed, cin, k, bias, out_block, ho, wo,
                ),
                _ => conv_run_block::<T, 1>(
                    &scratch, wp, plane, packed, cin, k, bias, out_block, ho, wo,
                ),
            }
        }
    }
    out
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, cin, h, wd, cout, k, ho, wo) = check_conv_args(x, w, b, stride, pad)?;
    if stride == 1 && wo >= TILE_W {
        return Ok(conv2d_forward_blocked(
            x,
            w,
            b,
            pad,
            (n, cin, h, wd, cout, k, ho, wo),
        ));
    }
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let xd = x.data();
    let wv_all = w.data();
    let od = out.data_mut();
    for ni in 0..n {
        for co in 0..cout {
            let oplane = &mut od[(ni * cout + co) * ho * wo..][..ho * wo];
            for ci in 0..cin {
                let xplane = &xd[(ni * cin + ci) * h * wd..][..h * wd];
                for ky in 0..k {
                    let (yo_lo, yo_hi) = valid_out_range(h, ky, pad, stride, ho);
                    for kx in 0..k {
                        let wv = wv_all[((co * cin + ci) * k + ky) * k + kx];
                        let (xo_lo, xo_hi) = valid_out_range(wd, kx, pad, stride, wo);
                        if xo_lo >= xo_hi {
                            continue;
                        }
                        for yo in yo_lo..yo_hi {
                            let yi = yo * stride + ky - pad;
                            let src_row = &xplane[yi * wd..][..wd];
                            let dst = &mut oplane[yo * wo + xo_lo..yo * wo + xo_hi];
                            if stride == 1 {
                                let x0 = xo_lo + kx - pad;
                                let src = &src_row[x0..x0 + (xo_hi - xo_lo)];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d = wv.mul_add(s, *d);
                                }
                            } else {
                                for (i, d) in dst.iter_mut().enumerate() {
                                    let xi = (xo_lo + i) * stride + kx - pad;
                                    *d = wv.mul_add(src_row[xi], *d);
                                }
                            }
                        }
                    }
                }
            }
            let bv = b.data()[co];
            for v in oplane.iter_mut() {
                *v += bv;
            }
        }
    }
    Ok(out)
}

/// Spreads a strided output gradient onto the stride-1 grid, zero-filling the
/// skipped positions, so strided backward passes can reuse the stride-1
/// kernels. The inserted zeros contribute exact zero terms.
fn stuff_stride<T: Scalar>(gy: &Tensor<T>, stride: usize, hs: usize, ws: usize) -> Tensor<T> {
    let (n, c, ho, wo) = gy.dims4().unwrap();
    let mut up = Tensor::zeros(&[n, c, hs, ws]);
    let gyd = gy.data();
    let upd = up.data_mut();
    for pc in 0..n * c {
        let src = &gyd[pc * ho * wo..][..ho * wo];
        let dst = &mut upd[pc * hs * ws..][..hs * ws];
        for yo in 0..ho {
            let drow = &mut dst[yo * stride * ws..][..ws];
            for (xo, &g) in src[yo * wo..][..wo].iter().enumerate() {
                drow[xo * stride] = g;
            }
        }
    }
    up
}

/// Gradient w.r.t. the input.
pub fn conv2d_input_grad<T: Scalar>(
    gy: &Tensor<T>,
    x_shape: &[usize],
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n, cin, h, wd) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (cout, _, k, _) = w.dims4().unwrap();
    let (_, _, ho, wo) = gy.dims4().unwrap();
    if stride == 1 && pad < k {
        // For stride 1 the input gradient is itself a cross-correlation: the
        // 180-degree-rotated, channel-transposed weights applied to gy with
        // complementary padding. This reuses the blocked forward kernel.
        let mut wrot = Tensor::zeros(&[cin, cout, k, k]);
        {
            let src = w.data();
            let dst = wrot.data_mut();
            for co in 0..cout {
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            dst[((ci * cout + co) * k + (k - 1 - ky)) * k + (k - 1 - kx)] =
                                src[((co * cin + ci) * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
        let zero_bias = Tensor::zeros(&[cin]);
        return conv2d_forward(gy, &wrot, &zero_bias, 1, k - 1 - pad)
            .expect("input gradient shapes mirror the forward pass");
    }
    if stride > 1 && pad < k {
        let gy_up = stuff_stride(gy, stride, h + 2 * pad - k + 1, wd + 2 * pad - k + 1);
        return conv2d_input_grad(&gy_up, x_shape, w, 1, pad);
    }
    let mut gx = Tensor::zeros(x_shape);
    let gyd = gy.data();
    let wv_all = w.data();
    let gxd = gx.data_mut();
    for ni in 0..n {
        for ci in 0..cin {
            let gxplane = &mut gxd[(ni * cin + ci) * h * wd..][..h * wd];
            for co in 0..cout {
                let gyplane = &gyd[(ni * cout + co) * ho * wo..][..ho * wo];
                for ky in 0..k {
                    let (yo_lo, yo_hi) = valid_out_range(h, ky, pad, stride, ho);
                    for kx in 0..k {
                        let wv = wv_all[((co * cin + ci) * k + ky) * k + kx];
                        let (xo_lo, xo_hi) = valid_out_range(wd, kx, pad, stride, wo);
                        if xo_lo >= xo_hi {
                            continue;
                        }
                        for yo in yo_lo..yo_hi {
                            let yi = yo * stride + ky - pad;
                            let grow = &gyplane[yo * wo + xo_lo..yo * wo + xo_hi];
                            let drow = &mut gxplane[yi * wd..][..wd];
                            if stride == 1 {
                                let x0 = xo_lo + kx - pad;
                                let dst = &mut drow[x0..x0 + grow.len()];
                                for (d, &g) in dst.iter_mut().zip(grow) {
                                    *d = wv.mul_add(g, *d);
                                }
                            } else {
                                for (i, &g) in grow.iter().enumerate() {
                                    let xi = (xo_lo + i) * stride + kx - pad;
                                    drow[xi] = wv.mul_add(g, drow[xi]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Vector width of one weight-gradient accumulator; kept narrow so a full
/// group of [`WGROUP`] accumulators still fits in registers.
const WLANES: usize = 8;

/// Kernel offsets fused into one weight-gradient sweep.
const WGROUP: usize = 8;

#[inline(always)]
fn wlane_fma<T: Scalar>(s: &mut [T; WLANES], a: &[T; WLANES], b: &[T; WLANES]) {
    for j in 0..WLANES {
        s[j] = a[j].mul_add(b[j], s[j]);
    }
}

#[inline(always)]
fn as_wlanes<T: Scalar>(v: &[T]) -> &[T; WLANES] {
    v[..WLANES].try_into().unwrap()
}

/// Weight-gradient sweep accumulating up to [`WGROUP`] kernel offsets in one
/// pass over the output-gradient plane, so the plane is re-read once per
/// group rather than once per offset. Offsets within a group come from
/// strided positions of the flattened kernel, so no two members read
/// overlapping windows of one row. Padding zeros contribute exact zero terms.
#[inline(always)]
fn wgrad_group<T: Scalar, const M: usize>(
    gy_plane: &[T],
    xpad_plane: &[T],
    wp: usize,
    offs: &[(usize, usize); M],
    ho: usize,
    wo: usize,
) -> [T; M] {
    let mut acc = [[T::zero(); WLANES]; M];
    let mut tail = [T::zero(); M];
    let chunks = wo / WLANES;
    for yo in 0..ho {
        let grow = &gy_plane[yo * wo..][..wo];
        let rows: [&[T]; M] = core::array::from_fn(|m| {
            let (ky, kx) = offs[m];
            &xpad_plane[(yo + ky) * wp + kx..][..wo]
        });
        for c in 0..chunks {
            let base = c * WLANES;
            let g = as_wlanes(&grow[base..]);
            for m in 0..M {
                wlane_fma(&mut acc[m], g, as_wlanes(&rows[m][base..]));
            }
        }
        for xo in chunks * WLANES..wo {
            let gv = grow[xo];
            for m in 0..M {
                tail[m] = gv.mul_add(rows[m][xo], tail[m]);
            }
        }
    }
    core::array::from_fn(|m| {
        let mut s = tail[m];
        for l in 0..WLANES {
            s += acc[m][l];
        }
        s
    })
}

/// Stride-1 weight gradient over a padded scratch copy of each sample.
fn conv2d_weight_grad_blocked<T: Scalar>(
    gy: &Tensor<T>,
    x: &Tensor<T>,
    w_shape: &[usize],
    pad: usize,
) -> Tensor<T> {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, k) = (w_shape[0], w_shape[2]);
    let (_, _, ho, wo) = gy.dims4().unwrap();
    let mut gw = Tensor::zeros(w_shape);
    let gyd = gy.data();
    let xd = x.data();
    let gwd = gw.data_mut();
    let wp = wd + 2 * pad;
    let plane = (h + 2 * pad) * wp;
    let mut scratch = vec![T::zero(); cin * plane];
    for ni in 0..n {
        if pad > 0 {
            scratch.fill(T::zero());
        }
        for ci in 0..cin {
            let src = &xd[(ni * cin + ci) * h * wd..][..h * wd];
            for y in 0..h {
                scratch[ci * plane + (y + pad) * wp + pad..][..wd]
                    .copy_from_slice(&src[y * wd..][..wd]);
            }
        }
        let k2 = k * k;
        let groups = k2.div_ceil(WGROUP);
        for co in 0..cout {
            let gy_plane = &gyd[(ni * cout + co) * ho * wo..][..ho * wo];
            for ci in 0..cin {
                let xpad_plane = &scratch[ci * plane..][..plane];
                let wbase = (co * cin + ci) * k2;
                for g in 0..groups {
                    let mut offs = [(0usize, 0usize); WGROUP];
                    let mut count = 0;
                    let mut t = g;
                    while t < k2 {
                        offs[count] = (t / k, t % k);
                        count += 1;
                        t += groups;
                    }
                    let mut vals = [T::zero(); WGROUP];
                    macro_rules! run {
                        ($m:literal) => {{
                            let o: &[(usize, usize); $m] = offs[..$m].try_into().unwrap();
                            vals[..$m].copy_from_slice(&wgrad_group::<T, $m>(
                                gy_plane, xpad_plane, wp, o, ho, wo,
                            ));
                        }};
                    }
                    match count {
                        8 => run!(8),
                        7 => run!(7),
                        6 => run!(6),
                        5 => run!(5),
                        4 => run!(4),
                        3 => run!(3),
                        2 => run!(2),
                        _ => run!(1),
                    }
                    for (m, &(ky, kx)) in offs[..count].iter().enumerate() {
                        gwd[wbase + ky * k + kx] += vals[m];
                    }
                }
            }
        }
    }
    gw
}

/// Gradient w.r.t. the weights.
pub fn conv2d_weight_grad<T: Scalar>(
    gy: &Tensor<T>,
    x: &Tensor<T>,
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    if stride == 1 {
        return conv2d_weight_grad_blocked(gy, x, w_shape, pad);
    }
    let (_, _, h, wd) = x.dims4().unwrap();
    let k = w_shape[2];
    let gy_up = stuff_stride(gy, stride, h + 2 * pad - k + 1, wd + 2 * pad - k + 1);
    conv2d_weight_grad_blocked(&gy_up, x, w_shape, pad)
}

/// Gradient w.r.t. the bias: the per-channel sum of the output gradient.
pub fn conv2d_bias_grad<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let (n, cout, ho, wo) = gy.dims4().unwrap();
    let mut gb = Tensor::zeros(&[cout]);
    for ni in 0..n {
        for co in 0..cout {
            let mut acc = T::zero();
            for &g in &gy.data()[(ni * cout + co) * ho * wo..][..ho * wo] {
                acc += g;
            }
            gb.data_mut()[co] = gb.data()[co] + acc;
        }
    }
    gb
}

impl<T: Scalar> Tape<T> {
    /// Records `conv2d(x, w, b)` with the given stride and zero padding.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let out = conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad)?;
        self.push(
            "conv2d",
            out,
            vec![x, w, b],
            Box::new(move |g, _, parents| {
                let (xv, wv) = (parents[0], parents[1]);
                let gx = conv2d_input_grad(g, xv.shape(), wv, stride, pad);
                let gw = conv2d_weight_grad(g, xv, wv.shape(), stride, pad);
                let gb = conv2d_bias_grad(g);
                vec![Some(gx), Some(gw), Some(gb)]
            }),
        )
    }
}
