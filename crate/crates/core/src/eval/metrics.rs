use serde::{Deserialize, Serialize};

use super::nms::score_order;
use super::Detection;
use crate::geometry::{iou, BBox};

/// Outcome of one detection after matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchFlag {
    TruePositive,
    FalsePositive,
    /// Hit a skip-marked ground truth; left out of every tally.
    Ignored,
}

/// A ground truth as seen by the matcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalGt {
    pub bbox: BBox,
    pub skip: bool,
}

/// Greedy one-to-one matching of one image's detections.
///
/// Detections are visited by descending score (ties by lower index). Each
/// claims the unmatched, non-skip gt of highest IoU (ties by lower gt
/// index) when that IoU reaches `iou_threshold`; failing that, a detection
/// reaching a skip gt is [`MatchFlag::Ignored`], anything else is a false
/// positive. Flags are returned in input order.
pub fn match_detections(dets: &[Detection], gts: &[EvalGt], iou_threshold: f64) -> Vec<MatchFlag> {
    let mut taken = vec![false; gts.len()];
    let mut flags = vec![MatchFlag::FalsePositive; dets.len()];
    for d in score_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        let mut hits_skip = false;
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(&dets[d].bbox, &gt.bbox);
            if v < iou_threshold {
                continue;
            }
            if gt.skip {
                hits_skip = true;
            } else if !taken[g] && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        flags[d] = match best {
            Some((g, _)) => {
                taken[g] = true;
                MatchFlag::TruePositive
            }
            None if hits_skip => MatchFlag::Ignored,
            None => MatchFlag::FalsePositive,
        };
    }
    flags
}

/// One point of a precision/recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
}

impl From<[f64; 3]> for PrPoint {
    fn from([precision, recall, threshold]: [f64; 3]) -> Self {
        Self {
            precision,
            recall,
            threshold,
        }
    }
}

impl From<PrPoint> for [f64; 3] {
    fn from(p: PrPoint) -> Self {
        [p.precision, p.recall, p.threshold]
    }
}

pub const CURVE_POINTS: u32 = 1000;

/// `k / 1000` for `k = 1000, 999, ..., 1`.
pub fn default_thresholds() -> Vec<f64> {
    (1..=CURVE_POINTS)
        .rev()
        .map(|k| f64::from(k) / f64::from(CURVE_POINTS))
        .collect()
}

/// Precision and recall of the detections scoring at least each threshold.
/// Ignored detections are not counted. Points follow the order of
/// `thresholds`.
pub fn pr_curve(scored: &[(f64, MatchFlag)], num_gts: usize, thresholds: &[f64]) -> Vec<PrPoint> {
    let mut tp: Vec<f64> = scored
        .iter()
        .filter(|s| s.1 == MatchFlag::TruePositive)
        .map(|s| s.0)
        .collect();
    let mut fp: Vec<f64> = scored
        .iter()
        .filter(|s| s.1 == MatchFlag::FalsePositive)
        .map(|s| s.0)
        .collect();
    tp.sort_by(f64::total_cmp);
    fp.sort_by(f64::total_cmp);
    let at_least = |v: &[f64], t: f64| v.len() - v.partition_point(|&s| s < t);
    thresholds
        .iter()
        .map(|&t| {
            let (ntp, nfp) = (at_least(&tp, t), at_least(&fp, t));
            PrPoint {
                precision: if ntp + nfp == 0 {
                    1.0
                } else {
                    ntp as f64 / (ntp + nfp) as f64
                },
                recall: if num_gts == 0 {
                    0.0
                } else {
                    ntp as f64 / num_gts as f64
                },
                threshold: t,
            }
        })
        .collect()
}

/// Curve with one point per distinct score, highest first. Unlike the fixed
/// grid, its area only depends on the ranking of the scores.
pub fn exact_pr_curve(scored: &[(f64, MatchFlag)], num_gts: usize) -> Vec<PrPoint> {
    let mut thresholds: Vec<f64> = scored
        .iter()
        .filter(|s| s.1 != MatchFlag::Ignored)
        .map(|s| s.0)
        .collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    pr_curve(scored, num_gts, &thresholds)
}

/// Area under the curve after replacing each precision by the best
/// precision at equal or higher recall. Points are taken in recall order.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.recall, p.precision)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for i in (0..pts.len().saturating_sub(1)).rev() {
        pts[i].1 = pts[i].1.max(pts[i + 1].1);
    }
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (r, p) in pts {
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

/// Unmatched detections scoring at least `score_threshold`.
pub fn count_false_alarms(scored: &[(f64, MatchFlag)], score_threshold: f64) -> usize {
    scored
        .iter()
        .filter(|s| s.1 == MatchFlag::FalsePositive && s.0 >= score_threshold)
        .count()
}
