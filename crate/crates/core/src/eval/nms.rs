use serde::{Deserialize, Serialize};

use super::Detection;
use crate::error::{Error, Result};
use crate::geometry::iou;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmsConfig {
    pub iou_threshold: f64,
    /// Candidates kept before suppression, by score.
    pub pre_topk: usize,
    /// Maximum number of survivors.
    pub post_topk: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.6,
            pre_topk: 5000,
            post_topk: 750,
        }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::InvalidConfig(format!(
                "nms iou_threshold {} outside [0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// Indices of `dets` sorted by descending score, ties by lower index.
pub(crate) fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy non-maximum suppression. Returns the kept input indices in
/// descending score order.
pub fn nms(dets: &[Detection], cfg: &NmsConfig) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(dets).into_iter().take(cfg.pre_topk) {
        if kept.len() == cfg.post_topk {
            break;
        }
        if kept
            .iter()
            .all(|&k| iou(&dets[k].bbox, &dets[i].bbox) <= cfg.iou_threshold)
        {
            kept.push(i);
        }
    }
    kept
}
