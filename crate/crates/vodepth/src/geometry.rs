//! Pinhole stereo geometry: projection, disparity conversions, and Z-buffered
//! rasterization of sparse point clouds into per-camera disparity maps.
//!
//! The rig is rectified with both image planes sharing rows. For a point at
//! depth `z` the two image columns differ by exactly the disparity value:
//! `u_right = u_left - disparity`. The right column is computed as that
//! literal subtraction so the identity holds bitwise, not just to rounding.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rectified stereo camera pair. Intrinsics are shared by both cameras and
/// the right camera sits `baseline` to the left camera's right along +x.
#[derive(Clone, Copy, Debug)]
pub struct StereoRig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
}

/// Image-plane coordinates of one 3D point in both cameras.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub u_left: f64,
    pub u_right: f64,
    pub v: f64,
    pub disparity: f64,
    pub depth: f64,
}

impl StereoRig {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, baseline: f64) -> Result<StereoRig> {
        if !(fx > 0.0 && fy > 0.0 && baseline > 0.0) || !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::invalid(format!(
                "stereo rig needs positive fx, fy, baseline and finite centers, \
                 got fx={fx} fy={fy} cx={cx} cy={cy} baseline={baseline}"
            )));
        }
        Ok(StereoRig {
            fx,
            fy,
            cx,
            cy,
            baseline,
        })
    }

    pub fn depth_to_disparity(&self, depth: f64) -> f64 {
        self.fx * self.baseline / depth
    }

    pub fn disparity_to_depth(&self, disparity: f64) -> f64 {
        self.fx * self.baseline / disparity
    }

    /// Projects a camera-frame point (left camera at the origin). Returns
    /// `None` for points at or behind the image plane.
    pub fn project(&self, point: [f64; 3]) -> Option<Projection> {
        let [x, y, z] = point;
        if !(z > 0.0) {
            return None;
        }
        let u_left = self.fx * x / z + self.cx;
        let v = self.fy * y / z + self.cy;
        let disparity = self.depth_to_disparity(z);
        Some(Projection {
            u_left,
            u_right: u_left - disparity,
            v,
            disparity,
            depth: z,
        })
    }
}

/// Disparity samples on a pixel grid: `values` holds the disparity where
/// `mask` is 1 and exactly zero where it is 0. Both are `[N, 1, H, W]`.
#[derive(Clone, Debug)]
pub struct SparseDisparityMap<T: Scalar> {
    pub values: Tensor<T>,
    pub mask: Tensor<T>,
}

impl<T: Scalar> SparseDisparityMap<T> {
    pub fn new(values: Tensor<T>, mask: Tensor<T>) -> Result<SparseDisparityMap<T>> {
        let map = SparseDisparityMap { values, mask };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, c, h, w) = self.values.dims4()?;
        if c != 1 {
            return Err(Error::invalid(format!(
                "sparse disparity map must have one channel, got {c}"
            )));
        }
        if self.mask.shape() != self.values.shape() {
            return Err(Error::ShapeMismatch {
                op: "sparse disparity map",
                detail: format!(
                    "values {:?} vs mask {:?}",
                    self.values.shape(),
                    self.mask.shape()
                ),
            });
        }
        let _ = (n, h, w);
        for (i, (&m, &v)) in self.mask.data().iter().zip(self.values.data()).enumerate() {
            let mf = m.as_f64();
            if mf != 0.0 && mf != 1.0 {
                return Err(Error::NonBinaryMask {
                    op: "sparse disparity map",
                });
            }
            let vf = v.as_f64();
            if mf == 0.0 && vf != 0.0 {
                return Err(Error::invalid(format!(
                    "sparse disparity map holds value {vf} at masked-out element {i}"
                )));
            }
            if mf == 1.0 && !(vf.is_finite() && vf >= 0.0) {
                return Err(Error::invalid(format!(
                    "sparse disparity map holds invalid disparity {vf} at element {i}"
                )));
            }
        }
        Ok(())
    }

    /// Fraction of pixels carrying a sample.
    pub fn density(&self) -> f64 {
        let total = self.mask.numel();
        let set = self
            .mask
            .data()
            .iter()
            .filter(|m| m.as_f64() != 0.0)
            .count();
        set as f64 / total as f64
    }

    pub fn cast<U: Scalar>(&self) -> SparseDisparityMap<U> {
        SparseDisparityMap {
            values: self.values.cast(),
            mask: self.mask.cast(),
        }
    }
}

/// Which camera of the rig an operation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Camera {
    Left,
    Right,
}

/// Rasterizes camera-frame points into a one-sample sparse disparity map for
/// the chosen camera. Each point lands on its nearest pixel; when several
/// points hit one pixel the nearest (smallest depth) wins, ties keeping the
/// earliest point, so the result is independent of how the losers are
/// ordered.
pub fn rasterize_points(
    rig: &StereoRig,
    points: &[[f64; 3]],
    height: usize,
    width: usize,
    camera: Camera,
) -> Result<SparseDisparityMap<f64>> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("rasterization target must be non-empty"));
    }
    let mut values = Tensor::zeros(&[1, 1, height, width]);
    let mut mask = Tensor::zeros(&[1, 1, height, width]);
    let mut depth = vec![f64::INFINITY; height * width];
    for &p in points {
        let Some(proj) = rig.project(p) else {
            continue;
        };
        let u = match camera {
            Camera::Left => proj.u_left,
            Camera::Right => proj.u_right,
        };
        let col = u.round();
        let row = proj.v.round();
        if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
            continue;
        }
        let idx = row as usize * width + col as usize;
        if proj.depth < depth[idx] {
            depth[idx] = proj.depth;
            values.data_mut()[idx] = proj.disparity;
            mask.data_mut()[idx] = 1.0;
        }
    }
    SparseDisparityMap::new(values, mask)
}
