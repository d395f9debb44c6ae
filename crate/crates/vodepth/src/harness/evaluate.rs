//! Dataset-level evaluation: per-sample depth metrics against ground truth,
//! averaged over samples that carry any valid pixels.

use crate::dataset::Sample;
use crate::error::Result;
use crate::harness::config::Ablation;
use crate::harness::infer::infer;
use crate::harness::metrics::{score_disparity_map, MetricsReport};
use crate::harness::model::Model;
use crate::scalar::Scalar;

pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    dataset: &[Sample<T>],
    ablation: Ablation,
    post_process: bool,
) -> Result<MetricsReport> {
    let mut reports = Vec::with_capacity(dataset.len());
    for sample in dataset {
        let out = infer(model, &sample.left, &sample.sparse_left, ablation, post_process)?;
        if let Some(report) = score_disparity_map(&out.disparity, &sample.gt_left, &sample.rig)? {
            reports.push(report);
        }
    }
    MetricsReport::mean_of(&reports)
}
