//! Context-aware false-alarm suppression: high-confidence anchor selection,
//! neighbourhood attention masks, feature combination, discrepancy labels
//! and the two-classifier focal objective.

use serde::{Deserialize, Serialize};

use crate::assignment::{AssignmentResult, Label, ScoreMap};
use crate::error::{Error, Result};
use crate::geometry::{AnchorGrid, Layer};

/// Probability clamp used inside the focal loss.
pub const FOCAL_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HcamLossConfig {
    /// Weight of the progressive-classifier term.
    pub gamma_balance: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub confidence_threshold: f64,
    pub neighborhood_sizes: Vec<u32>,
}

impl Default for HcamLossConfig {
    fn default() -> Self {
        Self {
            gamma_balance: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            confidence_threshold: 0.5,
            neighborhood_sizes: vec![3, 5],
        }
    }
}

impl HcamLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma_balance.is_nan() || self.gamma_balance < 0.0 {
            return Err(Error::InvalidConfig(
                "gamma_balance must be non-negative".into(),
            ));
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return Err(Error::InvalidConfig(
                "confidence_threshold must lie in (0, 1)".into(),
            ));
        }
        if let Some(n) = self.neighborhood_sizes.iter().find(|n| *n % 2 == 0) {
            return Err(Error::InvalidConfig(format!(
                "neighbourhood size {n} must be odd and positive"
            )));
        }
        Ok(())
    }
}

/// Supervision target of one anchor for a binary focal loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Positive,
    Negative,
    Ignore,
}

impl Target {
    pub fn code(self) -> i8 {
        match self {
            Target::Positive => 1,
            Target::Negative => 0,
            Target::Ignore => -1,
        }
    }
}

impl From<Label> for Target {
    fn from(l: Label) -> Self {
        match l {
            Label::Positive(_) => Target::Positive,
            Label::Negative => Target::Negative,
            Label::Ignore => Target::Ignore,
        }
    }
}

pub fn assignment_targets(assignment: &AssignmentResult) -> Vec<Target> {
    assignment.labels().iter().map(|&l| l.into()).collect()
}

/// Positives and negatives of `assignment` whose score reaches `threshold`,
/// as ascending global anchor indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HighConfidence {
    pub correct_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

impl HighConfidence {
    /// Both sets merged in ascending order.
    pub fn all(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .correct_positives
            .iter()
            .chain(&self.false_negatives)
            .copied()
            .collect();
        v.sort_unstable();
        v
    }
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{what} has {got} entries, expected {expected}"
        )))
    }
}

pub fn select_high_confidence(
    scores: &ScoreMap,
    assignment: &AssignmentResult,
    threshold: f64,
) -> Result<HighConfidence> {
    check_len("score map", scores.len(), assignment.len())?;
    let mut out = HighConfidence::default();
    for (i, label) in assignment.labels().iter().enumerate() {
        if scores.get(i) < threshold {
            continue;
        }
        match label {
            Label::Positive(_) => out.correct_positives.push(i),
            Label::Negative => out.false_negatives.push(i),
            Label::Ignore => {}
        }
    }
    Ok(out)
}

/// Dynamic discrepancy labels: confident positives become positive samples,
/// confident negatives become negative samples, everything else is ignored.
pub fn discrepancy_labels(
    scores: &ScoreMap,
    assignment: &AssignmentResult,
    threshold: f64,
) -> Result<Vec<Target>> {
    let hc = select_high_confidence(scores, assignment, threshold)?;
    let mut labels = vec![Target::Ignore; assignment.len()];
    for &i in &hc.correct_positives {
        labels[i] = Target::Positive;
    }
    for &i in &hc.false_negatives {
        labels[i] = Target::Negative;
    }
    Ok(labels)
}

/// Binary attention mask over one feature map, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    pub layer: Layer,
    pub height: u32,
    pub width: u32,
    pub values: Vec<u8>,
}

impl AttentionMask {
    pub fn get(&self, row: u32, col: u32) -> u8 {
        self.values[row as usize * self.width as usize + col as usize]
    }

    pub fn ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// Marks every cell within Chebyshev distance `(n - 1) / 2` of a position.
pub fn attention_mask(
    layer: Layer,
    positions: &[(u32, u32)],
    height: u32,
    width: u32,
    n: u32,
) -> Result<AttentionMask> {
    if n.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "neighbourhood size {n} must be odd"
        )));
    }
    let r = n / 2;
    let mut values = vec![0u8; height as usize * width as usize];
    for &(row, col) in positions {
        if row >= height || col >= width {
            return Err(Error::ShapeMismatch(format!(
                "position ({row}, {col}) outside {height}x{width} map"
            )));
        }
        for y in row.saturating_sub(r)..=(row + r).min(height - 1) {
            let base = y as usize * width as usize;
            for x in col.saturating_sub(r)..=(col + r).min(width - 1) {
                values[base + x as usize] = 1;
            }
        }
    }
    Ok(AttentionMask {
        layer,
        height,
        width,
        values,
    })
}

/// One mask per pyramid layer for the given global anchor indices.
pub fn grid_attention_masks(
    grid: &AnchorGrid,
    indices: &[usize],
    n: u32,
) -> Result<Vec<AttentionMask>> {
    let mut per_layer: Vec<Vec<(u32, u32)>> = vec![Vec::new(); Layer::ALL.len()];
    for &i in indices {
        if i >= grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "anchor index {i} outside grid of {}",
                grid.len()
            )));
        }
        let a = grid.anchor(i);
        per_layer[a.layer.ordinal()].push((a.row, a.col));
    }
    grid.layers()
        .iter()
        .zip(per_layer)
        .map(|(shape, pos)| attention_mask(shape.layer, &pos, shape.rows, shape.cols, n))
        .collect()
}

/// Dense channel-major (CHW) feature map of one pyramid layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub layer: Layer,
    pub channels: u32,
    pub height: u32,
    pub width: u32,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        layer: Layer,
        channels: u32,
        height: u32,
        width: u32,
        values: Vec<f64>,
    ) -> Result<Self> {
        let expected = channels as usize * height as usize * width as usize;
        check_len("feature map", values.len(), expected)?;
        Ok(Self {
            layer,
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(layer: Layer, channels: u32, height: u32, width: u32) -> Self {
        Self {
            layer,
            channels,
            height,
            width,
            values: vec![0.0; channels as usize * height as usize * width as usize],
        }
    }

    pub fn get(&self, c: u32, y: u32, x: u32) -> f64 {
        self.values
            [(c as usize * self.height as usize + y as usize) * self.width as usize + x as usize]
    }
}

/// `pyramid + sum_k context * mask_k`, each mask broadcast over channels.
///
/// `contexts` holds either one map shared by every mask or one map per mask.
pub fn combine_features(
    contexts: &[FeatureMap],
    masks: &[AttentionMask],
    pyramid: &FeatureMap,
) -> Result<FeatureMap> {
    if contexts.len() != 1 && contexts.len() != masks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} context maps for {} masks",
            contexts.len(),
            masks.len()
        )));
    }
    let dims = (pyramid.channels, pyramid.height, pyramid.width);
    for c in contexts {
        if (c.channels, c.height, c.width) != dims {
            return Err(Error::ShapeMismatch(format!(
                "context {}x{}x{} vs pyramid {}x{}x{}",
                c.channels, c.height, c.width, dims.0, dims.1, dims.2
            )));
        }
    }
    for m in masks {
        if (m.height, m.width) != (pyramid.height, pyramid.width) {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs feature map {}x{}",
                m.height, m.width, pyramid.height, pyramid.width
            )));
        }
    }
    let plane = pyramid.height as usize * pyramid.width as usize;
    let mut out = pyramid.clone();
    for (k, mask) in masks.iter().enumerate() {
        let ctx = &contexts[if contexts.len() == 1 { 0 } else { k }];
        for (i, v) in out.values.iter_mut().enumerate() {
            if mask.values[i % plane] == 1 {
                *v += ctx.values[i];
            }
        }
    }
    Ok(out)
}

/// `(alpha_t, p_t)` for a scored anchor, `None` when ignored. `p_t` is
/// floored at [`FOCAL_EPS`] so the log stays finite.
fn focal_terms(p: f64, target: Target, alpha: f64) -> Option<(f64, f64)> {
    match target {
        Target::Positive => Some((alpha, p.max(FOCAL_EPS))),
        Target::Negative => Some((1.0 - alpha, (1.0 - p).max(FOCAL_EPS))),
        Target::Ignore => None,
    }
}

fn positives(targets: &[Target]) -> f64 {
    targets
        .iter()
        .filter(|t| **t == Target::Positive)
        .count()
        .max(1) as f64
}

/// Sigmoid focal loss over probabilities:
/// `sum alpha_t (1 - p_t)^gamma (-ln p_t) / max(1, #positives)` with
/// ignored anchors excluded and `p_t` floored at `eps`.
pub fn focal_loss(scores: &[f64], targets: &[Target], alpha: f64, gamma: f64) -> Result<f64> {
    check_len("score vector", scores.len(), targets.len())?;
    let mut total = 0.0;
    for (&p, &t) in scores.iter().zip(targets) {
        if let Some((a, pt)) = focal_terms(p, t, alpha) {
            total += a * (1.0 - pt).powf(gamma) * -pt.ln();
        }
    }
    Ok(total / positives(targets))
}

/// Derivative of [`focal_loss`] with respect to each score; zero where the
/// clamp is active or the anchor is ignored.
pub fn focal_loss_grad(
    scores: &[f64],
    targets: &[Target],
    alpha: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    check_len("score vector", scores.len(), targets.len())?;
    let norm = positives(targets);
    Ok(scores
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let Some((a, pt)) = focal_terms(p, t, alpha) else {
                return 0.0;
            };
            if pt == FOCAL_EPS {
                return 0.0;
            }
            // d/dpt of a (1-pt)^g (-ln pt)
            let d_pt =
                a * (gamma * (1.0 - pt).powf(gamma - 1.0) * pt.ln() - (1.0 - pt).powf(gamma) / pt);
            let sign = if t == Target::Positive { 1.0 } else { -1.0 };
            sign * d_pt / norm
        })
        .collect())
}

/// Main-classifier loss against assignment labels plus the weighted
/// progressive-classifier loss against discrepancy labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HcamLoss {
    pub main: f64,
    pub progressive: f64,
    pub gamma_balance: f64,
    pub total: f64,
}

pub fn hcam_loss(
    main_scores: &ScoreMap,
    progressive_scores: &ScoreMap,
    assignment: &AssignmentResult,
    discrepancy: &[Target],
    cfg: &HcamLossConfig,
) -> Result<HcamLoss> {
    cfg.validate()?;
    let main = focal_loss(
        main_scores.values(),
        &assignment_targets(assignment),
        cfg.focal_alpha,
        cfg.focal_gamma,
    )?;
    let progressive = focal_loss(
        progressive_scores.values(),
        discrepancy,
        cfg.focal_alpha,
        cfg.focal_gamma,
    )?;
    Ok(HcamLoss {
        main,
        progressive,
        gamma_balance: cfg.gamma_balance,
        total: main + cfg.gamma_balance * progressive,
    })
}

/// One `global_index code` line per anchor (`1`/`0`/`-1`).
pub fn targets_to_lines(targets: &[Target]) -> String {
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{i} {}\n", t.code()))
        .collect()
}

/// One `global_index layer row col` line per masked cell, across all layers.
pub fn masks_to_lines(grid: &AnchorGrid, masks: &[AttentionMask]) -> String {
    let mut out = String::new();
    for m in masks {
        for row in 0..m.height {
            for col in 0..m.width {
                if m.get(row, col) == 1 {
                    let idx = grid.index_of(m.layer, row, col).expect("mask matches grid");
                    out.push_str(&format!("{idx} {} {row} {col}\n", m.layer));
                }
            }
        }
    }
    out
}
