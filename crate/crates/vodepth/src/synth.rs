//! Synthetic stereo scene generator with a simulated sparse-odometry sensor.
//!
//! A scene is a stack of fronto-parallel textured layers seen by a rectified
//! stereo rig. Layer coverage and texture are continuous fields (bilinear
//! interpolation of low-resolution random grids), so the right view can be
//! rendered by evaluating the same fields at `x + disparity`: the two views
//! are exactly consistent with the ground-truth disparity maps, including
//! occlusion, because layers are composited nearest first in both views.
//!
//! The odometry sensor picks feature pixels with probability proportional to
//! image gradient magnitude (without replacement), then reports each point's
//! disparity with multiplicative noise. Stereo odometry is lightly noisy;
//! monocular odometry is noisier and scales the whole scene by one global
//! factor, mimicking its scale ambiguity. Noise never moves a point off its
//! pixel ray, only along it.

use crate::error::{Error, Result};
use crate::geometry::{rasterize_points, Camera, SparseDisparityMap, StereoRig};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

/// Relative disparity noise of the simulated stereo odometry.
pub const STEREO_NOISE: f64 = 0.01;
/// Relative disparity noise of the simulated monocular odometry.
pub const MONO_NOISE: f64 = 0.03;
/// Global scale ambiguity range of monocular odometry.
pub const MONO_SCALE: (f64, f64) = (0.97, 1.03);
/// Fraction of pixels carrying an odometry disparity in the default recipe.
pub const DEFAULT_VO_DENSITY: f64 = 0.005;

fn points_for_density(height: usize, width: usize, density: f64) -> usize {
    (((height * width) as f64 * density).round() as usize).max(8)
}

/// Which odometry sensor produces the sparse prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VoMode {
    Stereo,
    Mono,
}

impl std::str::FromStr for VoMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stereo" => Ok(VoMode::Stereo),
            "mono" => Ok(VoMode::Mono),
            other => Err(Error::invalid(format!(
                "unknown odometry mode {other:?}, expected \"stereo\" or \"mono\""
            ))),
        }
    }
}

impl std::fmt::Display for VoMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VoMode::Stereo => "stereo",
            VoMode::Mono => "mono",
        })
    }
}

/// Recipe for drawing scenes.
#[derive(Clone, Copy, Debug)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub layers: usize,
    pub vo_points: usize,
    pub vo_mode: VoMode,
    pub rig: StereoRig,
}

impl SceneSpec {
    /// Default recipe for a given image size: a rig whose disparities span
    /// roughly one to twenty-five percent of the width, four depth layers,
    /// and odometry coverage at [`DEFAULT_VO_DENSITY`].
    pub fn standard(height: usize, width: usize, vo_mode: VoMode) -> Result<SceneSpec> {
        let w = width as f64;
        let rig = StereoRig::new(
            0.8 * w,
            0.8 * w,
            (w - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            0.5,
        )?;
        Ok(SceneSpec {
            height,
            width,
            layers: 4,
            vo_points: points_for_density(height, width, DEFAULT_VO_DENSITY),
            vo_mode,
            rig,
        })
    }

    /// Same recipe with an explicit odometry coverage fraction.
    pub fn with_density(
        height: usize,
        width: usize,
        vo_mode: VoMode,
        density: f64,
    ) -> Result<SceneSpec> {
        if !(density > 0.0 && density <= 1.0) {
            return Err(Error::invalid(format!(
                "odometry density must lie in (0, 1], got {density}"
            )));
        }
        let mut spec = SceneSpec::standard(height, width, vo_mode)?;
        spec.vo_points = points_for_density(height, width, density);
        Ok(spec)
    }
}

/// One rendered scene: images, exact disparity maps for both views, and the
/// two sparse odometry maps.
pub struct SceneSample {
    pub left: Tensor<f64>,
    pub right: Tensor<f64>,
    pub gt_left: Tensor<f64>,
    pub gt_right: Tensor<f64>,
    pub sparse_left: SparseDisparityMap<f64>,
    pub sparse_right: SparseDisparityMap<f64>,
}

/// Bilinear interpolation over a low-resolution grid covering the horizontal
/// strip `[u_min, u_max] x [0, height-1]`; constant beyond the border.
struct Field {
    grid: Vec<f64>,
    gh: usize,
    gw: usize,
    u_min: f64,
    du: f64,
    dv: f64,
}

impl Field {
    fn random<R: Rng>(
        rng: &mut R,
        cells: usize,
        lo: f64,
        hi: f64,
        u_min: f64,
        u_max: f64,
        height: f64,
    ) -> Field {
        let gw = cells + 1;
        let gh = cells + 1;
        let grid = (0..gh * gw)
            .map(|_| rng.gen::<f64>() * (hi - lo) + lo)
            .collect();
        Field {
            grid,
            gh,
            gw,
            u_min,
            du: (u_max - u_min) / (gw - 1) as f64,
            dv: height.max(1.0) / (gh - 1) as f64,
        }
    }

    fn sample(&self, u: f64, v: f64) -> f64 {
        let gu = ((u - self.u_min) / self.du).clamp(0.0, (self.gw - 1) as f64);
        let gv = (v / self.dv).clamp(0.0, (self.gh - 1) as f64);
        let x0 = (gu.floor() as usize).min(self.gw - 2);
        let y0 = (gv.floor() as usize).min(self.gh - 2);
        let fx = gu - x0 as f64;
        let fy = gv - y0 as f64;
        let at = |y: usize, x: usize| self.grid[y * self.gw + x];
        let top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1);
        let bot = (1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1);
        (1.0 - fy) * top + fy * bot
    }
}

struct Layer {
    disparity: f64,
    coverage: Field,
    threshold: f64,
    texture: [Field; 3],
}

impl Layer {
    fn covers(&self, u: f64, v: f64, background: bool) -> bool {
        background || self.coverage.sample(u, v) > self.threshold
    }
}

/// Renders one scene. All randomness comes from `rng`, so a seed fixes the
/// sample exactly.
pub fn generate_scene<R: Rng>(spec: &SceneSpec, rng: &mut R) -> Result<SceneSample> {
    if spec.layers < 2 {
        return Err(Error::invalid("a scene needs at least two layers"));
    }
    if spec.height < 8 || spec.width < 8 {
        return Err(Error::invalid("scene must be at least 8x8"));
    }
    let (h, w) = (spec.height, spec.width);

    // Depths, farthest first; the farthest layer is the full background.
    let mut depths: Vec<f64> = Vec::with_capacity(spec.layers);
    depths.push(rng.gen::<f64>() * 15.0 + 25.0);
    for _ in 1..spec.layers {
        depths.push(rng.gen::<f64>() * 22.5 + 2.5);
    }
    depths.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let max_disp = spec.rig.depth_to_disparity(*depths.last().unwrap());
    let u_min = -1.0;
    let u_max = (w as f64 - 1.0) + max_disp + 1.0;
    let hf = (h - 1) as f64;

    let layers: Vec<Layer> = depths
        .iter()
        .map(|&z| {
            let cells = rng.gen_range(3..=6);
            let coverage = Field::random(rng, cells, 0.0, 1.0, u_min, u_max, hf);
            let threshold = rng.gen::<f64>() * 0.25 + 0.35;
            let tex_cells = rng.gen_range(4..=8);
            let texture = [
                Field::random(rng, tex_cells, 0.05, 0.95, u_min, u_max, hf),
                Field::random(rng, tex_cells, 0.05, 0.95, u_min, u_max, hf),
                Field::random(rng, tex_cells, 0.05, 0.95, u_min, u_max, hf),
            ];
            Layer {
                disparity: spec.rig.depth_to_disparity(z),
                coverage,
                threshold,
                texture,
            }
        })
        .collect();

    // Composite nearest layer first in each view. A right-view pixel u shows
    // the layer surface point that sits at u + disparity in the left view.
    let mut left = Tensor::zeros(&[1, 3, h, w]);
    let mut right = Tensor::zeros(&[1, 3, h, w]);
    let mut gt_left = Tensor::zeros(&[1, 1, h, w]);
    let mut gt_right = Tensor::zeros(&[1, 1, h, w]);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64, y as f64);
            for (k, layer) in layers.iter().enumerate().rev() {
                if layer.covers(u, v, k == 0) {
                    for c in 0..3 {
                        left.set4(0, c, y, x, layer.texture[c].sample(u, v));
                    }
                    gt_left.set4(0, 0, y, x, layer.disparity);
                    break;
                }
            }
            for (k, layer) in layers.iter().enumerate().rev() {
                let us = u + layer.disparity;
                if layer.covers(us, v, k == 0) {
                    for c in 0..3 {
                        right.set4(0, c, y, x, layer.texture[c].sample(us, v));
                    }
                    gt_right.set4(0, 0, y, x, layer.disparity);
                    break;
                }
            }
        }
    }

    // Feature pixels: weighted sampling without replacement, weight =
    // gradient magnitude of the left image plus a floor so flat regions
    // stay reachable.
    let mut weights = vec![1e-3; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut g = 0.0;
            for c in 0..3 {
                if x + 1 < w {
                    g += (left.at4(0, c, y, x + 1) - left.at4(0, c, y, x)).abs();
                }
                if y + 1 < h {
                    g += (left.at4(0, c, y + 1, x) - left.at4(0, c, y, x)).abs();
                }
            }
            weights[y * w + x] += g;
        }
    }
    let count = spec.vo_points.min(h * w);
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &wt)| (rng.gen::<f64>().powf(1.0 / wt), i))
        .collect();
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = keyed[..count].iter().map(|&(_, i)| i).collect();
    picked.sort_unstable();

    // Odometry measurements: noise multiplies the true disparity, keeping
    // the point on its pixel ray. Monocular mode adds one global scale.
    let scene_scale = match spec.vo_mode {
        VoMode::Stereo => 1.0,
        VoMode::Mono => rng.gen::<f64>() * (MONO_SCALE.1 - MONO_SCALE.0) + MONO_SCALE.0,
    };
    let sigma = match spec.vo_mode {
        VoMode::Stereo => STEREO_NOISE,
        VoMode::Mono => MONO_NOISE,
    };
    let mut sd_values = Tensor::zeros(&[1, 1, h, w]);
    let mut sd_mask = Tensor::zeros(&[1, 1, h, w]);
    let mut points: Vec<[f64; 3]> = Vec::with_capacity(picked.len());
    for &i in &picked {
        let (y, x) = (i / w, i % w);
        let noise: f64 = rng.sample(StandardNormal);
        let d_true = gt_left.at4(0, 0, y, x);
        let d_meas = (d_true * scene_scale * (1.0 + sigma * noise)).max(1e-3);
        sd_values.data_mut()[i] = d_meas;
        sd_mask.data_mut()[i] = 1.0;
        let z = spec.rig.disparity_to_depth(d_meas);
        points.push([
            (x as f64 - spec.rig.cx) * z / spec.rig.fx,
            (y as f64 - spec.rig.cy) * z / spec.rig.fy,
            z,
        ]);
    }
    let sparse_left = SparseDisparityMap::new(sd_values, sd_mask)?;
    let sparse_right = rasterize_points(&spec.rig, &points, h, w, Camera::Right)?;

    Ok(SceneSample {
        left,
        right,
        gt_left,
        gt_right,
        sparse_left,
        sparse_right,
    })
}
