//! Elementwise, reduction, and channel-structure ops.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push(
            "add",
            out,
            vec![a, b],
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push(
            "sub",
            out,
            vec![a, b],
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push(
            "mul",
            out,
            vec![a, b],
            Box::new(|g, _, parents| {
                let ga = g.zip_map(parents[1], "mul", |gv, bv| gv * bv).unwrap();
                let gb = g.zip_map(parents[0], "mul", |gv, av| gv * av).unwrap();
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).zip_map(self.value(b), "div", |x, y| x / y)?;
        self.push(
            "div",
            out,
            vec![a, b],
            Box::new(|g, out, parents| {
                let ga = g.zip_map(parents[1], "div", |gv, bv| gv / bv).unwrap();
                let mut gb = g.zip_map(out, "div", |gv, ov| gv * ov).unwrap();
                gb = gb.zip_map(parents[1], "div", |v, bv| -v / bv).unwrap();
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let out = self.value(a).map(|v| v * c);
        self.push(
            "scale",
            out,
            vec![a],
            Box::new(move |g, _, _| vec![Some(g.map(|v| v * c))]),
        )
    }

    pub fn add_scalar(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let out = self.value(a).map(|v| v + c);
        self.push(
            "add_scalar",
            out,
            vec![a],
            Box::new(|g, _, _| vec![Some(g.clone())]),
        )
    }

    /// Subgradient at zero is zero.
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(|v| v.abs());
        self.push(
            "abs",
            out,
            vec![a],
            Box::new(|g, _, parents| {
                let ga = g
                    .zip_map(parents[0], "abs", |gv, av| {
                        if av > T::zero() {
                            gv
                        } else if av < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .unwrap();
                vec![Some(ga)]
            }),
        )
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(|v| v.exp());
        self.push(
            "exp",
            out,
            vec![a],
            Box::new(|g, out, _| vec![Some(g.zip_map(out, "exp", |gv, ov| gv * ov).unwrap())]),
        )
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let one = T::one();
        let out = self.value(a).map(|v| one / (one + (-v).exp()));
        self.push(
            "sigmoid",
            out,
            vec![a],
            Box::new(move |g, out, _| {
                let ga = g
                    .zip_map(out, "sigmoid", |gv, ov| gv * ov * (one - ov))
                    .unwrap();
                vec![Some(ga)]
            }),
        )
    }

    /// ELU with unit alpha: `x` for positive inputs, `exp(x) - 1` otherwise.
    pub fn elu(&mut self, a: NodeId) -> Result<NodeId> {
        let one = T::one();
        let out = self.value(a).map(|v| {
            if v > T::zero() {
                v
            } else {
                v.exp() - one
            }
        });
        self.push(
            "elu",
            out,
            vec![a],
            Box::new(move |g, out, parents| {
                let mut ga = Tensor::zeros(g.shape());
                for i in 0..g.numel() {
                    let slope = if parents[0].data()[i] > T::zero() {
                        one
                    } else {
                        out.data()[i] + one
                    };
                    ga.data_mut()[i] = g.data()[i] * slope;
                }
                vec![Some(ga)]
            }),
        )
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside the range.
    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> Result<NodeId> {
        let out = self.value(a).map(|v| v.max(lo).min(hi));
        self.push(
            "clamp",
            out,
            vec![a],
            Box::new(move |g, _, parents| {
                let ga = g
                    .zip_map(parents[0], "clamp", |gv, av| {
                        if av > lo && av < hi {
                            gv
                        } else {
                            T::zero()
                        }
                    })
                    .unwrap();
                vec![Some(ga)]
            }),
        )
    }

    pub fn clamp_min(&mut self, a: NodeId, lo: T) -> Result<NodeId> {
        self.clamp(a, lo, T::infinity())
    }

    /// Mean over all elements, producing a scalar node.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let n = v.numel();
        let mut acc = T::zero();
        for &x in v.data() {
            acc += x;
        }
        let inv = T::one() / T::from_f64(n as f64);
        let shape: Vec<usize> = v.shape().to_vec();
        self.push(
            "mean",
            Tensor::scalar(acc * inv),
            vec![a],
            Box::new(move |g, _, _| {
                vec![Some(Tensor::full(&shape, g.item() * inv))]
            }),
        )
    }

    /// Sum over all elements, producing a scalar node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let mut acc = T::zero();
        for &x in v.data() {
            acc += x;
        }
        let shape: Vec<usize> = v.shape().to_vec();
        self.push(
            "sum",
            Tensor::scalar(acc),
            vec![a],
            Box::new(move |g, _, _| vec![Some(Tensor::full(&shape, g.item()))]),
        )
    }

    /// Mean across the channel axis: `[N,C,H,W] -> [N,1,H,W]`.
    pub fn mean_channels(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(a).dims4()?;
        let inv = T::one() / T::from_f64(c as f64);
        let v = self.value(a);
        let mut out = Tensor::zeros(&[n, 1, h, w]);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let cur = out.at4(ni, 0, y, x);
                        out.set4(ni, 0, y, x, cur + v.at4(ni, ci, y, x));
                    }
                }
            }
        }
        for o in out.data_mut() {
            *o *= inv;
        }
        self.push(
            "mean_channels",
            out,
            vec![a],
            Box::new(move |g, _, _| {
                let mut ga = Tensor::zeros(&[n, c, h, w]);
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h {
                            for x in 0..w {
                                ga.set4(ni, ci, y, x, g.at4(ni, 0, y, x) * inv);
                            }
                        }
                    }
                }
                vec![Some(ga)]
            }),
        )
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::invalid("concat_channels of zero inputs"));
        }
        let (n, _, h, w) = self.value(inputs[0]).dims4()?;
        let mut channels = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let (ni, ci, hi, wi) = self.value(id).dims4()?;
            if (ni, hi, wi) != (n, h, w) {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    detail: format!("{:?} vs [N={n},_,{h},{w}]", self.value(id).shape()),
                });
            }
            channels.push(ci);
        }
        let c_total: usize = channels.iter().sum();
        let mut out = Tensor::zeros(&[n, c_total, h, w]);
        let mut c0 = 0usize;
        for (&id, &ci) in inputs.iter().zip(&channels) {
            let v = self.value(id).clone();
            for ni in 0..n {
                for c in 0..ci {
                    for y in 0..h {
                        for x in 0..w {
                            out.set4(ni, c0 + c, y, x, v.at4(ni, c, y, x));
                        }
                    }
                }
            }
            c0 += ci;
        }
        let channels_bw = channels.clone();
        self.push(
            "concat_channels",
            out,
            inputs.to_vec(),
            Box::new(move |g, _, _| {
                let mut grads = Vec::with_capacity(channels_bw.len());
                let mut c0 = 0usize;
                for &ci in &channels_bw {
                    let mut ga = Tensor::zeros(&[n, ci, h, w]);
                    for ni in 0..n {
                        for c in 0..ci {
                            for y in 0..h {
                                for x in 0..w {
                                    ga.set4(ni, c, y, x, g.at4(ni, c0 + c, y, x));
                                }
                            }
                        }
                    }
                    c0 += ci;
                    grads.push(Some(ga));
                }
                grads
            }),
        )
    }

    /// Selects `count` channels starting at `start`.
    pub fn slice_channels(&mut self, a: NodeId, start: usize, count: usize) -> Result<NodeId> {
        let (n, c, h, w) = self.value(a).dims4()?;
        if start + count > c {
            return Err(Error::ShapeMismatch {
                op: "slice_channels",
                detail: format!("slice {start}..{} of {c} channels", start + count),
            });
        }
        let v = self.value(a);
        let out = Tensor::from_fn4(n, count, h, w, |ni, ci, y, x| v.at4(ni, start + ci, y, x));
        self.push(
            "slice_channels",
            out,
            vec![a],
            Box::new(move |g, _, _| {
                let mut ga = Tensor::zeros(&[n, c, h, w]);
                for ni in 0..n {
                    for ci in 0..count {
                        for y in 0..h {
                            for x in 0..w {
                                ga.set4(ni, start + ci, y, x, g.at4(ni, ci, y, x));
                            }
                        }
                    }
                }
                vec![Some(ga)]
            }),
        )
    }

    /// Forward difference along x: `out[.., x] = a[.., x+1] - a[.., x]`,
    /// width shrinks by one.
    pub fn grad_x(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(a).dims4()?;
        if w < 2 {
            return Err(Error::invalid("grad_x needs W >= 2"));
        }
        let v = self.value(a);
        let out = Tensor::from_fn4(n, c, h, w - 1, |ni, ci, y, x| {
            v.at4(ni, ci, y, x + 1) - v.at4(ni, ci, y, x)
        });
        self.push(
            "grad_x",
            out,
            vec![a],
            Box::new(move |g, _, _| {
                let mut ga = Tensor::zeros(&[n, c, h, w]);
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h {
                            for x in 0..w - 1 {
                                let gv = g.at4(ni, ci, y, x);
                                let cur1 = ga.at4(ni, ci, y, x + 1);
                                ga.set4(ni, ci, y, x + 1, cur1 + gv);
                                let cur0 = ga.at4(ni, ci, y, x);
                                ga.set4(ni, ci, y, x, cur0 - gv);
                            }
                        }
                    }
                }
                vec![Some(ga)]
            }),
        )
    }

    /// Forward difference along y; height shrinks by one.
    pub fn grad_y(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(a).dims4()?;
        if h < 2 {
            return Err(Error::invalid("grad_y needs H >= 2"));
        }
        let v = self.value(a);
        let out = Tensor::from_fn4(n, c, h - 1, w, |ni, ci, y, x| {
            v.at4(ni, ci, y + 1, x) - v.at4(ni, ci, y, x)
        });
        self.push(
            "grad_y",
            out,
            vec![a],
            Box::new(move |g, _, _| {
                let mut ga = Tensor::zeros(&[n, c, h, w]);
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h - 1 {
                            for x in 0..w {
                                let gv = g.at4(ni, ci, y, x);
                                let cur1 = ga.at4(ni, ci, y + 1, x);
                                ga.set4(ni, ci, y + 1, x, cur1 + gv);
                                let cur0 = ga.at4(ni, ci, y, x);
                                ga.set4(ni, ci, y, x, cur0 - gv);
                            }
                        }
                    }
                }
                vec![Some(ga)]
            }),
        )
    }
}
