use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{standard_match, MatchConfig};
use crate::error::{Error, Result};
use crate::geometry::{face_scale, AnchorGrid, BBox, Layer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Initial bisection interval, in face-scale pixels.
    pub start_scale: f64,
    pub end_scale: f64,
    pub tolerance: f64,
    pub max_iterations: u32,
    /// Side of the square training frame the matcher runs on.
    pub frame_side: u32,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            start_scale: 8.0,
            end_scale: 640.0,
            tolerance: 0.05,
            max_iterations: 30,
            frame_side: 640,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub iteration: u32,
    pub start_scale: f64,
    pub end_scale: f64,
    pub scale: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub target_layer: Layer,
    pub target_ratio: f64,
    pub start_scale: f64,
    pub end_scale: f64,
    /// Last probed middle scale.
    pub scale: f64,
    /// Fraction of ground truths matched in the target layer at `scale`.
    pub achieved_ratio: f64,
    pub iterations: u32,
    pub converged: bool,
    /// Ratios measured at the initial interval ends, used to orient the search.
    pub endpoint_ratios: (f64, f64),
    pub trace: Vec<CalibrationStep>,
}

/// Measures, for a given face scale, how many ground truths the matcher
/// places in a pyramid layer.
///
/// Each image gets one face drawn from the seed at construction time. A
/// probe at scale `s` resizes each image so its drawn face has scale `s`,
/// cuts a `frame_side` square window around that face (faces centred
/// outside the window are dropped, the rest clipped), runs
/// [`standard_match`] on the frame's anchors and reports the pooled
/// fraction of surviving ground truths with at least one positive anchor
/// in the layer.
pub struct ScaleControl<'a> {
    dataset: Vec<&'a [BBox]>,
    sampled: Vec<usize>,
    grid: AnchorGrid,
    match_cfg: MatchConfig,
}

impl<'a> ScaleControl<'a> {
    pub fn new(
        dataset: &'a [Vec<BBox>],
        frame_side: u32,
        seed: u64,
        match_cfg: MatchConfig,
    ) -> Result<Self> {
        match_cfg.validate()?;
        let dataset: Vec<&[BBox]> = dataset
            .iter()
            .filter(|f| !f.is_empty())
            .map(Vec::as_slice)
            .collect();
        if dataset.is_empty() {
            return Err(Error::EmptyDataset("no image has a face".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sampled = dataset
            .iter()
            .map(|f| rng.random_range(0..f.len()))
            .collect();
        Ok(Self {
            dataset,
            sampled,
            grid: AnchorGrid::new(frame_side, frame_side)?,
            match_cfg,
        })
    }

    pub fn sampled_faces(&self) -> &[usize] {
        &self.sampled
    }

    /// Faces of image `i` resized for scale `s` and framed around the drawn face.
    pub fn framed_faces(&self, i: usize, scale: f64) -> Vec<BBox> {
        let faces = self.dataset[i];
        let anchor_face = &faces[self.sampled[i]];
        let ratio = scale / face_scale(anchor_face);
        let side = f64::from(self.grid.width());
        let (cx, cy) = anchor_face.center();
        let x0 = (cx * ratio - side / 2.0).floor();
        let y0 = (cy * ratio - side / 2.0).floor();
        faces
            .iter()
            .filter_map(|f| {
                let t = f.scaled(ratio).ok()?.translated(-x0, -y0);
                let (fx, fy) = t.center();
                if fx < 0.0 || fy < 0.0 || fx >= side || fy >= side {
                    return None;
                }
                t.clipped(side, side)
            })
            .collect()
    }

    pub fn ratio_at(&self, scale: f64, layer: Layer) -> Result<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for i in 0..self.dataset.len() {
            let faces = self.framed_faces(i, scale);
            let result = standard_match(&self.grid, &faces, &self.match_cfg)?;
            total += faces.len();
            hit += result.layer_stats(layer).matched.len();
        }
        Ok(if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        })
    }
}

/// Bisects the face scale until the fraction of ground truths matched in
/// `target_layer` is within `cfg.tolerance` of `target_ratio`.
///
/// The ratios at both interval ends decide which half to keep: when the
/// response grows with scale, an overshoot moves the upper end down, and
/// the reverse otherwise. Returns a non-converged state when the iteration
/// cap is reached.
pub fn calibrate_scale_control(
    dataset: &[Vec<BBox>],
    target_layer: Layer,
    target_ratio: f64,
    cfg: &CalibrationConfig,
    match_cfg: &MatchConfig,
) -> Result<CalibrationState> {
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "target ratio {target_ratio} outside (0, 1]"
        )));
    }
    if !(cfg.start_scale > 0.0 && cfg.start_scale < cfg.end_scale) {
        return Err(Error::InvalidConfig(
            "calibration interval must satisfy 0 < start < end".into(),
        ));
    }
    let control = ScaleControl::new(dataset, cfg.frame_side, cfg.seed, *match_cfg)?;
    let endpoint_ratios = (
        control.ratio_at(cfg.start_scale, target_layer)?,
        control.ratio_at(cfg.end_scale, target_layer)?,
    );
    let increasing = endpoint_ratios.1 >= endpoint_ratios.0;

    let (mut lo, mut hi) = (cfg.start_scale, cfg.end_scale);
    let mut state = CalibrationState {
        target_layer,
        target_ratio,
        start_scale: lo,
        end_scale: hi,
        scale: lo,
        achieved_ratio: endpoint_ratios.0,
        iterations: 0,
        converged: false,
        endpoint_ratios,
        trace: Vec::new(),
    };
    for iteration in 1..=cfg.max_iterations {
        let mid = (lo + hi) / 2.0;
        let ratio = control.ratio_at(mid, target_layer)?;
        state.trace.push(CalibrationStep {
            iteration,
            start_scale: lo,
            end_scale: hi,
            scale: mid,
            ratio,
        });
        state.scale = mid;
        state.achieved_ratio = ratio;
        state.iterations = iteration;
        if (ratio - target_ratio).abs() < cfg.tolerance {
            state.converged = true;
            break;
        }
        if (ratio > target_ratio) == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    state.start_scale = lo;
    state.end_scale = hi;
    Ok(state)
}
