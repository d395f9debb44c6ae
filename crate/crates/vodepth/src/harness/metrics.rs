//! Depth-error metrics and their report format.

use crate::error::{Error, Result};
use crate::geometry::StereoRig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Depths are clamped to this range before scoring, for prediction and
/// ground truth alike.
pub const EVAL_DEPTH_MIN: f64 = 0.5;
pub const EVAL_DEPTH_MAX: f64 = 80.0;

/// Standard depth-error metrics plus threshold accuracies.
#[derive(Clone, Copy, Debug, Default)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub samples: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3";

    pub fn csv_line(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.d1, self.d2, self.d3
        )
    }

    /// Unweighted mean of per-sample reports.
    pub fn mean_of(reports: &[MetricsReport]) -> Result<MetricsReport> {
        if reports.is_empty() {
            return Err(Error::invalid("no samples produced metrics"));
        }
        let n = reports.len() as f64;
        let mut out = MetricsReport {
            samples: reports.len(),
            ..Default::default()
        };
        for r in reports {
            out.abs_rel += r.abs_rel / n;
            out.sq_rel += r.sq_rel / n;
            out.rmse += r.rmse / n;
            out.rmse_log += r.rmse_log / n;
            out.d1 += r.d1 / n;
            out.d2 += r.d2 / n;
            out.d3 += r.d3 / n;
        }
        Ok(out)
    }
}

/// Scores one predicted disparity map against ground truth. Pixels with a
/// positive ground-truth disparity count; both depths are clamped to the
/// evaluation range. Returns `None` when nothing is scoreable.
pub fn score_disparity_map<T: Scalar>(
    pred_disp: &Tensor<T>,
    gt_disp: &Tensor<T>,
    rig: &StereoRig,
) -> Result<Option<MetricsReport>> {
    if pred_disp.shape() != gt_disp.shape() {
        return Err(Error::ShapeMismatch {
            op: "score_disparity_map",
            detail: format!("{:?} vs {:?}", pred_disp.shape(), gt_disp.shape()),
        });
    }
    let mut abs_rel = 0.0;
    let mut sq_rel = 0.0;
    let mut se = 0.0;
    let mut se_log = 0.0;
    let mut within = [0usize; 3];
    let mut count = 0usize;
    for (p, g) in pred_disp.data().iter().zip(gt_disp.data()) {
        let gd = g.as_f64();
        if !(gd > 0.0) {
            continue;
        }
        let z = rig
            .disparity_to_depth(p.as_f64().max(1e-9))
            .clamp(EVAL_DEPTH_MIN, EVAL_DEPTH_MAX);
        let zt = rig
            .disparity_to_depth(gd)
            .clamp(EVAL_DEPTH_MIN, EVAL_DEPTH_MAX);
        let diff = z - zt;
        abs_rel += diff.abs() / zt;
        sq_rel += diff * diff / zt;
        se += diff * diff;
        se_log += (z.ln() - zt.ln()).powi(2);
        let ratio = (z / zt).max(zt / z);
        for (k, hit) in within.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *hit += 1;
            }
        }
        count += 1;
    }
    if count == 0 {
        return Ok(None);
    }
    let n = count as f64;
    Ok(Some(MetricsReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (se / n).sqrt(),
        rmse_log: (se_log / n).sqrt(),
        d1: within[0] as f64 / n,
        d2: within[1] as f64 / n,
        d3: within[2] as f64 / n,
        samples: 1,
    }))
}
