//! Detection evaluation: annotation and submission parsing, NMS, greedy
//! matching, precision/recall, AP and false-alarm counts.

mod metrics;
mod nms;
mod parse;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use metrics::{
    average_precision, count_false_alarms, default_thresholds, exact_pr_curve, match_detections,
    pr_curve, EvalGt, MatchFlag, PrPoint, CURVE_POINTS,
};
pub use nms::{nms, NmsConfig};
pub use parse::{
    image_key, parse_predictions, parse_widerface_annotations, write_predictions, Detection,
    FaceAttributes, GroundTruthFace, GroundTruthSet, ImageAnnotation, ImagePredictions,
    PredictionSet,
};

pub const ALL_SUBSET: &str = "all";

/// Kept gt indices per image, keyed by image path or name.
pub type SubsetList = BTreeMap<String, Vec<usize>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Minimum score for an unmatched detection to count as a false alarm.
    pub nfa_threshold: f64,
    /// Applied to each image's detections before matching when set.
    pub nms: Option<NmsConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            nfa_threshold: 0.8,
            nms: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "iou_threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        if self.nfa_threshold.is_nan() {
            return Err(Error::InvalidConfig("nfa_threshold is NaN".into()));
        }
        if let Some(n) = &self.nms {
            n.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub ap: f64,
    pub nfa: usize,
    /// Threshold-descending points on the `k / 1000` grid.
    pub curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvalReport {
    pub subsets: BTreeMap<String, SubsetReport>,
}

impl EvalReport {
    /// `(subset, threshold, precision, recall)` rows for plotting.
    pub fn curve_rows(&self) -> impl Iterator<Item = (&str, f64, f64, f64)> + '_ {
        self.subsets.iter().flat_map(|(name, r)| {
            r.curve
                .iter()
                .map(move |p| (name.as_str(), p.threshold, p.precision, p.recall))
        })
    }
}

/// Match flags and scores of one subset, plus its gt count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubsetTally {
    pub scored: Vec<(f64, MatchFlag)>,
    pub num_gts: usize,
}

impl SubsetTally {
    pub fn report(&self, cfg: &EvalConfig) -> SubsetReport {
        let curve = pr_curve(&self.scored, self.num_gts, &default_thresholds());
        SubsetReport {
            ap: average_precision(&curve),
            nfa: count_false_alarms(&self.scored, cfg.nfa_threshold),
            curve,
        }
    }
}

/// Collects each subset's tally. `"all"` uses the annotation skip markers
/// only; a named subset additionally skips every gt whose index is not
/// listed, and leaves out images it does not list (or lists empty).
pub fn tally(
    gts: &GroundTruthSet,
    preds: &PredictionSet,
    subsets: &BTreeMap<String, SubsetList>,
    cfg: &EvalConfig,
) -> Result<BTreeMap<String, SubsetTally>> {
    cfg.validate()?;
    if subsets.contains_key(ALL_SUBSET) {
        return Err(Error::InvalidConfig(format!(
            "subset name '{ALL_SUBSET}' is reserved"
        )));
    }
    let mut gt_keys: HashMap<&str, usize> = HashMap::new();
    for (i, img) in gts.images.iter().enumerate() {
        if gt_keys.insert(image_key(&img.path), i).is_some() {
            return Err(Error::InvalidConfig(format!(
                "duplicate annotation for image '{}'",
                img.path
            )));
        }
    }
    let mut dets: Vec<Vec<Detection>> = vec![Vec::new(); gts.images.len()];
    let mut unknown = BTreeSet::new();
    for p in &preds.images {
        match gt_keys.get(image_key(&p.name)) {
            Some(&i) => dets[i].extend_from_slice(&p.detections),
            None => {
                unknown.insert(p.name.clone());
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownImages(unknown.into_iter().collect()));
    }
    if let Some(n) = &cfg.nms {
        for d in &mut dets {
            *d = nms(d, n).into_iter().map(|i| d[i]).collect();
        }
    }

    let mut out = BTreeMap::new();
    out.insert(ALL_SUBSET.to_string(), run_subset(gts, &dets, None, cfg));
    for (name, list) in subsets {
        let mut kept: HashMap<&str, &[usize]> = HashMap::new();
        for (path, idx) in list {
            let key = image_key(path);
            let Some(&i) = gt_keys.get(key) else {
                return Err(Error::UnknownImages(vec![path.clone()]));
            };
            let n = gts.images[i].faces.len();
            if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
                return Err(Error::InvalidConfig(format!(
                    "subset '{name}' lists face {bad} of '{path}', which has {n} faces"
                )));
            }
            kept.insert(key, idx);
        }
        out.insert(name.clone(), run_subset(gts, &dets, Some(&kept), cfg));
    }
    Ok(out)
}

fn run_subset(
    gts: &GroundTruthSet,
    dets: &[Vec<Detection>],
    kept: Option<&HashMap<&str, &[usize]>>,
    cfg: &EvalConfig,
) -> SubsetTally {
    let mut t = SubsetTally::default();
    for (img, dets) in gts.images.iter().zip(dets) {
        let listed = match kept {
            None => None,
            Some(k) => match k.get(image_key(&img.path)) {
                Some(idx) if !idx.is_empty() => Some(*idx),
                _ => continue,
            },
        };
        let eval_gts: Vec<EvalGt> = img
            .faces
            .iter()
            .enumerate()
            .filter_map(|(j, f)| {
                let skip = f.skip || listed.is_some_and(|l| !l.contains(&j));
                f.bbox.map(|bbox| EvalGt { bbox, skip })
            })
            .collect();
        t.num_gts += eval_gts.iter().filter(|g| !g.skip).count();
        let flags = match_detections(dets, &eval_gts, cfg.iou_threshold);
        t.scored
            .extend(dets.iter().zip(flags).map(|(d, f)| (d.score, f)));
    }
    t
}

/// Full evaluation: `"all"` plus each named subset.
pub fn evaluate(
    gts: &GroundTruthSet,
    preds: &PredictionSet,
    subsets: &BTreeMap<String, SubsetList>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let tallies = tally(gts, preds, subsets, cfg)?;
    Ok(EvalReport {
        subsets: tallies
            .into_iter()
            .map(|(k, t)| (k, t.report(cfg)))
            .collect(),
    })
}
