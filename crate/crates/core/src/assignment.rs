//! Anchor labelling: IoU threshold matching and per-layer incremental anchor
//! mining driven by predicted classification scores.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{center_distance, iou, AnchorGrid, BBox, Layer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchConfig {
    pub pos_iou_threshold: f64,
    pub neg_iou_threshold: f64,
    pub guarantee_best_anchor: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            pos_iou_threshold: 0.5,
            neg_iou_threshold: 0.4,
            guarantee_best_anchor: true,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.neg_iou_threshold
            && self.neg_iou_threshold <= self.pos_iou_threshold
            && self.pos_iou_threshold <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "need 0 <= neg ({}) <= pos ({}) <= 1",
                self.neg_iou_threshold, self.pos_iou_threshold
            )))
        }
    }
}

/// Tri-state anchor label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// Matched to the ground truth with this index.
    Positive(usize),
    Negative,
    Ignore,
}

impl Label {
    pub fn is_positive(&self) -> bool {
        matches!(self, Label::Positive(_))
    }

    pub fn gt(&self) -> Option<usize> {
        match self {
            Label::Positive(g) => Some(*g),
            _ => None,
        }
    }

    /// `1` positive, `0` negative, `-1` ignore.
    pub fn code(&self) -> i8 {
        match self {
            Label::Positive(_) => 1,
            Label::Negative => 0,
            Label::Ignore => -1,
        }
    }
}

/// Per-layer match summary: which ground truths own at least one positive
/// anchor in the layer, how many each, and the largest such count.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LayerStats {
    pub matched: BTreeMap<usize, usize>,
    pub max_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    labels: Vec<Label>,
    per_gt_counts: BTreeMap<usize, usize>,
    per_layer_stats: BTreeMap<Layer, LayerStats>,
}

impl AssignmentResult {
    /// Rebuilds the bookkeeping for `labels` laid out over `grid`.
    pub fn from_labels(grid: &AnchorGrid, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} anchors",
                labels.len(),
                grid.len()
            )));
        }
        let mut per_gt_counts = BTreeMap::new();
        let mut per_layer_stats: BTreeMap<Layer, LayerStats> = Layer::ALL
            .iter()
            .map(|&l| (l, LayerStats::default()))
            .collect();
        for (anchor, label) in grid.anchors().iter().zip(&labels) {
            if let Label::Positive(g) = *label {
                *per_gt_counts.entry(g).or_insert(0) += 1;
                let stats = per_layer_stats
                    .get_mut(&anchor.layer)
                    .expect("all layers present");
                let c = stats.matched.entry(g).or_insert(0);
                *c += 1;
                stats.max_count = stats.max_count.max(*c);
            }
        }
        Ok(Self {
            labels,
            per_gt_counts,
            per_layer_stats,
        })
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn per_gt_counts(&self) -> &BTreeMap<usize, usize> {
        &self.per_gt_counts
    }

    pub fn per_layer_stats(&self) -> &BTreeMap<Layer, LayerStats> {
        &self.per_layer_stats
    }

    pub fn layer_stats(&self, layer: Layer) -> &LayerStats {
        &self.per_layer_stats[&layer]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Writes one `global_index label gt_index score` line per anchor. The
    /// label is `1`/`0`/`-1`, `gt_index` is `-1` unless positive, and the
    /// score column is `-` when no scores are supplied.
    pub fn to_lines(&self, scores: Option<&ScoreMap>) -> String {
        let mut out = String::with_capacity(self.labels.len() * 16);
        for (i, label) in self.labels.iter().enumerate() {
            let gt = label.gt().map_or(-1, |g| g as i64);
            match scores {
                Some(s) => out.push_str(&format!("{i} {} {gt} {}\n", label.code(), s.get(i))),
                None => out.push_str(&format!("{i} {} {gt} -\n", label.code())),
            }
        }
        out
    }

    /// Parses [`AssignmentResult::to_lines`] output back into labels for `grid`.
    pub fn parse_lines(grid: &AnchorGrid, text: &str) -> Result<Self> {
        let mut labels = Vec::with_capacity(grid.len());
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    line_no,
                    format!("expected 4 fields, found {}", fields.len()),
                ));
            }
            let index: usize = fields[0]
                .parse()
                .map_err(|e| Error::parse(line_no, format!("anchor index: {e}")))?;
            if index != labels.len() {
                return Err(Error::parse(
                    line_no,
                    format!(
                        "anchor index {index} out of sequence, expected {}",
                        labels.len()
                    ),
                ));
            }
            let gt: i64 = fields[2]
                .parse()
                .map_err(|e| Error::parse(line_no, format!("gt index: {e}")))?;
            let label = match (fields[1], gt) {
                ("1", g) if g >= 0 => Label::Positive(g as usize),
                ("0", -1) => Label::Negative,
                ("-1", -1) => Label::Ignore,
                (l, g) => {
                    return Err(Error::parse(
                        line_no,
                        format!("invalid label/gt pair {l} {g}"),
                    ))
                }
            };
            labels.push(label);
        }
        Self::from_labels(grid, labels)
    }
}

/// Predicted classification probability per anchor, by global index.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap(Vec<f64>);

impl ScoreMap {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidConfig(format!(
                "score {v} at anchor {i} outside [0, 1]"
            )));
        }
        Ok(Self(values))
    }

    pub fn uniform(len: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// One probability per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|e| Error::parse(i + 1, format!("score '{line}': {e}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::parse(i + 1, format!("score {v} outside [0, 1]")));
            }
            values.push(v);
        }
        Ok(Self(values))
    }
}

/// IoU-threshold matching.
///
/// Each anchor takes the ground truth of highest IoU (lowest index on ties)
/// and is positive at or above `pos_iou_threshold`, negative below
/// `neg_iou_threshold` and ignored in between. With `guarantee_best_anchor`,
/// every ground truth then claims its highest-IoU anchor (lowest global
/// index on ties), skipping anchors already claimed this way by an earlier
/// ground truth. Ground truths that overlap no anchor at all stay unmatched.
pub fn standard_match(
    grid: &AnchorGrid,
    gts: &[BBox],
    cfg: &MatchConfig,
) -> Result<AssignmentResult> {
    cfg.validate()?;
    let n = grid.len();
    if gts.is_empty() {
        return AssignmentResult::from_labels(grid, vec![Label::Negative; n]);
    }

    // Anchors absent from every overlap window have IoU 0 with all gts, so
    // their argmax is gt 0.
    let mut best: Vec<(f64, usize)> = vec![(0.0, 0); n];
    for (g, gt) in gts.iter().enumerate() {
        for layer in Layer::ALL {
            for idx in grid.overlapping(layer, gt) {
                let v = iou(&grid.anchor(idx).bbox, gt);
                if v > best[idx].0 {
                    best[idx] = (v, g);
                }
            }
        }
    }

    let mut labels: Vec<Label> = best
        .iter()
        .map(|&(v, g)| {
            if v >= cfg.pos_iou_threshold {
                Label::Positive(g)
            } else if v < cfg.neg_iou_threshold {
                Label::Negative
            } else {
                Label::Ignore
            }
        })
        .collect();

    if cfg.guarantee_best_anchor {
        let mut claimed = BTreeSet::new();
        for (g, gt) in gts.iter().enumerate() {
            let mut pick: Option<(f64, usize)> = None;
            for layer in Layer::ALL {
                for idx in grid.overlapping(layer, gt) {
                    if claimed.contains(&idx) {
                        continue;
                    }
                    let v = iou(&grid.anchor(idx).bbox, gt);
                    if v > 0.0 && pick.is_none_or(|(pv, _)| v > pv) {
                        pick = Some((v, idx));
                    }
                }
            }
            if let Some((_, idx)) = pick {
                claimed.insert(idx);
                labels[idx] = Label::Positive(g);
            }
        }
    }

    AssignmentResult::from_labels(grid, labels)
}

fn by_score_desc(scores: &ScoreMap) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |a, b| scores.get(*b).total_cmp(&scores.get(*a)).then(a.cmp(b))
}

/// Per-layer incremental anchor mining.
///
/// For each layer, every ground truth matched there with fewer anchors than
/// the layer maximum `T` gains `T - count` extra positives. Candidates are
/// the `T` closest anchors by centre distance together with the `T` anchors
/// of highest IoU, both drawn from the layer's anchors that are not yet
/// positive; the union is ranked by predicted score and the best are taken.
/// Ground truths are handled in ascending index order, so an anchor taken by
/// one is unavailable to the next. Existing labels are never altered except
/// for the promotion of selected candidates.
pub fn ali_ams(
    base: &AssignmentResult,
    grid: &AnchorGrid,
    gts: &[BBox],
    scores: &ScoreMap,
) -> Result<AssignmentResult> {
    if base.len() != grid.len() || scores.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "grid has {} anchors, assignment {}, scores {}",
            grid.len(),
            base.len(),
            scores.len()
        )));
    }
    if let Some(&g) = base.per_gt_counts.keys().find(|&&g| g >= gts.len()) {
        return Err(Error::ShapeMismatch(format!(
            "assignment references gt {g} but only {} given",
            gts.len()
        )));
    }

    let mut labels = base.labels.clone();
    for layer in Layer::ALL {
        let stats = base.layer_stats(layer);
        let target = stats.max_count;
        let anchors = grid.layer_anchors(layer);
        for (&g, &count) in &stats.matched {
            if count >= target {
                continue;
            }
            let needed = target - count;
            let gt = &gts[g];
            let mut pool: Vec<usize> = anchors
                .iter()
                .map(|a| a.index)
                .filter(|&i| !labels[i].is_positive())
                .collect();

            pool.sort_by(|&a, &b| {
                let da = center_distance(&grid.anchor(a).bbox, gt);
                let db = center_distance(&grid.anchor(b).bbox, gt);
                da.total_cmp(&db).then(a.cmp(&b))
            });
            let mut candidates: BTreeSet<usize> = pool.iter().take(target).copied().collect();

            pool.sort_by(|&a, &b| {
                let ia = iou(&grid.anchor(a).bbox, gt);
                let ib = iou(&grid.anchor(b).bbox, gt);
                ib.total_cmp(&ia).then(a.cmp(&b))
            });
            candidates.extend(pool.iter().take(target));

            let mut ranked: Vec<usize> = candidates.into_iter().collect();
            ranked.sort_by(by_score_desc(scores));
            for &idx in ranked.iter().take(needed) {
                labels[idx] = Label::Positive(g);
            }
        }
    }
    AssignmentResult::from_labels(grid, labels)
}

/// Per-layer recount derived from labels alone.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LayerMatchSummary {
    pub gt_count: usize,
    pub anchor_count: usize,
    /// Positive anchors per ground truth.
    pub per_gt: BTreeMap<usize, usize>,
    /// Number of ground truths for each per-gt anchor count.
    pub histogram: BTreeMap<usize, usize>,
}

pub fn layer_match_stats(
    grid: &AnchorGrid,
    result: &AssignmentResult,
) -> Result<BTreeMap<Layer, LayerMatchSummary>> {
    if result.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} anchors",
            result.len(),
            grid.len()
        )));
    }
    let mut out = BTreeMap::new();
    for shape in grid.layers() {
        let mut summary = LayerMatchSummary::default();
        for label in &result.labels()[shape.range()] {
            if let Label::Positive(g) = label {
                summary.anchor_count += 1;
                *summary.per_gt.entry(*g).or_insert(0) += 1;
            }
        }
        summary.gt_count = summary.per_gt.len();
        for &c in summary.per_gt.values() {
            *summary.histogram.entry(c).or_insert(0) += 1;
        }
        out.insert(shape.layer, summary);
    }
    Ok(out)
}
