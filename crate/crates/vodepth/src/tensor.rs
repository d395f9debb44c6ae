//! Dense row-major tensors in `[N, C, H, W]` layout.
//!
//! `Tensor` is a plain value type: shape plus a flat buffer. All structural
//! checks happen in constructors so every live tensor satisfies
//! `data.len() == shape.iter().product()`. Scalars are shape `[1]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {:?} does not hold {} elements", shape, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let numel: usize = shape.iter().product();
        assert!(!shape.is_empty() && numel > 0, "degenerate shape {shape:?}");
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; numel],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Uniform draw in `[lo, hi)`. Sampling happens in f64 so the stream of
    /// random numbers is identical across scalar types for a given rng state.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::from_f64(rng.gen::<f64>() * (hi - lo) + lo))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_fn4(n: usize, c: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(ni, ci, y, x));
                    }
                }
            }
        }
        Tensor {
            shape: vec![n, c, h, w],
            data,
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// First element; the conventional way to read a scalar node's value.
    #[inline]
    pub fn item(&self) -> T {
        self.data[0]
    }

    /// Interprets the shape as `[N, C, H, W]`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "dims4",
                detail: format!("expected rank 4, got {:?}", self.shape),
            });
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let (_, cc, hh, ww) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cc + c) * hh + y) * ww + x]
    }

    #[inline]
    pub fn set4(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let (_, cc, hh, ww) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cc + c) * hh + y) * ww + x] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Elementwise `self += other * scale` (used for gradient accumulation).
    pub fn add_scaled(&mut self, other: &Tensor<T>, scale: T) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_scaled",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * scale;
        }
        Ok(())
    }

    /// Mirror along the W axis.
    pub fn hflip(&self) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.dims4()?;
        Ok(Tensor::from_fn4(n, c, h, w, |ni, ci, y, x| {
            self.at4(ni, ci, y, w - 1 - x)
        }))
    }

    /// 2x2 average pooling on even-sized maps; raw data-prep helper for image
    /// pyramids (the recorded op lives on the tape).
    pub fn avg_down2(&self) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(format!(
                "avg_down2 needs even H and W, got {h}x{w}"
            )));
        }
        let quarter = T::from_f64(0.25);
        Ok(Tensor::from_fn4(n, c, h / 2, w / 2, |ni, ci, y, x| {
            let a = self.at4(ni, ci, 2 * y, 2 * x);
            let b = self.at4(ni, ci, 2 * y, 2 * x + 1);
            let d = self.at4(ni, ci, 2 * y + 1, 2 * x);
            let e = self.at4(ni, ci, 2 * y + 1, 2 * x + 1);
            (((a + b) + d) + e) * quarter
        }))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}
