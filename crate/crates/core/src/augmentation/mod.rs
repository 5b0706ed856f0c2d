//! Scale-level augmentation: per-image transform planning, application of a
//! plan to annotations and pixels, scale statistics and the bisection-based
//! scale-control calibrator.

mod calibrate;
mod planners;
mod raster;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{face_scale, BBox, Layer};

pub use calibrate::{
    calibrate_scale_control, CalibrationConfig, CalibrationState, CalibrationStep, ScaleControl,
};
pub use planners::{das_plan, mst_plan, rsc_plan, sse_plan, RSC_FACTORS};
pub use raster::{apply_raster, Raster};

/// Plan record format version written into every serialized plan.
pub const PLAN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Identity,
    Mst,
    Rsc,
    Das,
    Sse,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mst" => Ok(Strategy::Mst),
            "rsc" => Ok(Strategy::Rsc),
            "das" => Ok(Strategy::Das),
            "sse" => Ok(Strategy::Sse),
            other => Err(Error::InvalidConfig(format!(
                "unknown augmentation strategy '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SseConfig {
    /// Probability of targeting the main layer p5.
    pub tr_p5: f64,
    /// Probability of targeting the auxiliary layer p6.
    pub tr_p6: f64,
    /// Face-scale interval each layer is responsible for.
    pub scale_ranges: BTreeMap<Layer, (f64, f64)>,
    pub output_side: u32,
    /// Short-side range of the initial random resize, inclusive.
    pub pre_resize_range: (u32, u32),
}

impl Default for SseConfig {
    fn default() -> Self {
        let bounds = [8.4, 20.7, 48.2, 106.2, 212.4, 420.8, 640.0];
        let scale_ranges = Layer::ALL
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, (bounds[i], bounds[i + 1])))
            .collect();
        Self {
            tr_p5: 0.20,
            // (1 - tr_p5) * 0.20
            tr_p6: 0.16,
            scale_ranges,
            output_side: 640,
            pre_resize_range: (640, 1280),
        }
    }
}

impl SseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.tr_p5)
            || !(0.0..=1.0).contains(&self.tr_p6)
            || self.tr_p5 + self.tr_p6 > 1.0
        {
            return bad(format!(
                "tr_p5 ({}) and tr_p6 ({}) must be probabilities summing to at most 1",
                self.tr_p5, self.tr_p6
            ));
        }
        let mut prev_end: Option<f64> = None;
        for layer in Layer::ALL {
            let Some(&(start, end)) = self.scale_ranges.get(&layer) else {
                return bad(format!("missing scale range for {layer}"));
            };
            if !(start > 0.0 && start < end) {
                return bad(format!(
                    "scale range for {layer} must satisfy 0 < start < end"
                ));
            }
            if prev_end.is_some_and(|p| p != start) {
                return bad(format!(
                    "scale range for {layer} does not continue the previous layer"
                ));
            }
            prev_end = Some(end);
        }
        if self.output_side == 0 {
            return bad("output_side must be positive".into());
        }
        let (lo, hi) = self.pre_resize_range;
        if lo == 0 || lo > hi {
            return bad(format!("invalid pre-resize range [{lo}, {hi}]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DasConfig {
    pub anchor_scales: Vec<f64>,
    /// Bound on the resize ratio, applied as `[1/r_th, r_th]`.
    pub r_th: Option<f64>,
    pub output_side: u32,
}

impl Default for DasConfig {
    fn default() -> Self {
        Self {
            anchor_scales: Layer::ALL.iter().map(|l| l.anchor_scale()).collect(),
            r_th: None,
            output_side: 640,
        }
    }
}

impl DasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.anchor_scales.is_empty()
            || self.anchor_scales.windows(2).any(|w| w[0] >= w[1])
            || self.anchor_scales[0] <= 0.0
        {
            return Err(Error::InvalidConfig(
                "anchor_scales must be positive and strictly increasing".into(),
            ));
        }
        if let Some(r) = self.r_th {
            if r.is_nan() || r < 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "r_th must be at least 1, got {r}"
                )));
            }
        }
        if self.output_side == 0 {
            return Err(Error::InvalidConfig("output_side must be positive".into()));
        }
        Ok(())
    }
}

/// One image's augmentation decision.
///
/// The source image is resized by `pre_resize_ratio * target_resize_ratio`,
/// cropped to `crop_window` (expressed in resized coordinates) and, when
/// `pad_to` is set, zero-padded at the bottom/right to that size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformPlan {
    #[serde(rename = "v")]
    pub version: u32,
    pub strategy: Strategy,
    /// Set when the requested strategy could not run (no faces) and the
    /// plan came from the random square crop instead.
    pub fallback: bool,
    pub source_size: (u32, u32),
    pub pre_resize_ratio: f64,
    pub target_layer: Option<Layer>,
    pub sampled_face_index: Option<usize>,
    /// Scale of the sampled face after the pre-resize.
    pub sampled_face_scale: Option<f64>,
    pub target_scale: Option<f64>,
    pub target_resize_ratio: f64,
    pub crop_window: BBox,
    pub pad_to: Option<(u32, u32)>,
}

impl TransformPlan {
    pub fn identity(width: u32, height: u32) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            version: PLAN_VERSION,
            strategy: Strategy::Identity,
            fallback: false,
            source_size: (width, height),
            pre_resize_ratio: 1.0,
            target_layer: None,
            sampled_face_index: None,
            sampled_face_scale: None,
            target_scale: None,
            target_resize_ratio: 1.0,
            crop_window: BBox::new(0.0, 0.0, f64::from(width), f64::from(height))?,
            pad_to: None,
        })
    }

    /// Total resize factor from source to resized coordinates.
    pub fn scale(&self) -> f64 {
        self.pre_resize_ratio * self.target_resize_ratio
    }

    /// Integer size of the resized image.
    pub fn resized_size(&self) -> (u32, u32) {
        resized_size(self.source_size, self.scale())
    }

    /// Pixel size of the crop region inside the output frame.
    pub fn crop_size(&self) -> (u32, u32) {
        (
            self.crop_window.width().round() as u32,
            self.crop_window.height().round() as u32,
        )
    }

    pub fn output_size(&self) -> (u32, u32) {
        self.pad_to.unwrap_or_else(|| self.crop_size())
    }

    /// Crop window mapped back into source coordinates.
    pub fn source_crop(&self) -> BBox {
        let s = self.scale();
        let c = self.crop_window;
        BBox::new(c.x_min() / s, c.y_min() / s, c.x_max() / s, c.y_max() / s)
            .expect("positive scale keeps the crop valid")
    }

    /// Source coordinates to output-frame coordinates, without clipping.
    pub fn forward(&self, b: &BBox) -> Result<BBox> {
        Ok(b.scaled(self.scale())?
            .translated(-self.crop_window.x_min(), -self.crop_window.y_min()))
    }

    /// Inverse of [`TransformPlan::forward`].
    pub fn inverse(&self, b: &BBox) -> Result<BBox> {
        b.translated(self.crop_window.x_min(), self.crop_window.y_min())
            .scaled(1.0 / self.scale())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }
}

pub(crate) fn check_dims(width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        Err(Error::InvalidDimensions { width, height })
    } else {
        Ok(())
    }
}

pub(crate) fn resized_size((w, h): (u32, u32), scale: f64) -> (u32, u32) {
    let r = |v: u32| ((f64::from(v) * scale).round() as u32).max(1);
    (r(w), r(h))
}

/// Maps source faces into the plan's output frame.
///
/// Faces whose transformed centre falls outside the crop are dropped; the
/// rest are clipped to the crop. Returns `(source index, box)` pairs.
pub fn apply_plan_indexed(faces: &[BBox], plan: &TransformPlan) -> Vec<(usize, BBox)> {
    let (cw, ch) = (plan.crop_window.width(), plan.crop_window.height());
    faces
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let t = plan.forward(f).ok()?;
            let (cx, cy) = t.center();
            if !(cx >= 0.0 && cx < cw && cy >= 0.0 && cy < ch) {
                return None;
            }
            t.clipped(cw, ch).map(|c| (i, c))
        })
        .collect()
}

pub fn apply_plan(faces: &[BBox], plan: &TransformPlan) -> Vec<BBox> {
    apply_plan_indexed(faces, plan)
        .into_iter()
        .map(|(_, b)| b)
        .collect()
}

/// Fraction of faces with scale strictly below each threshold, for the
/// thresholds sorted ascending with duplicates removed.
pub fn scale_distribution(dataset: &[Vec<BBox>], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut scales: Vec<f64> = dataset.iter().flatten().map(face_scale).collect();
    if scales.is_empty() {
        return Err(Error::EmptyDataset("no faces to measure".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidConfig(format!("threshold {t} is not finite")));
    }
    scales.sort_by(f64::total_cmp);
    let mut ts = thresholds.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let n = scales.len() as f64;
    Ok(ts
        .into_iter()
        .map(|t| {
            let below = scales.partition_point(|&s| s < t);
            (t, below as f64 / n)
        })
        .collect())
}
