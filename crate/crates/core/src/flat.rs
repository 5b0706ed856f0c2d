//! Entry points over plain numeric buffers, for callers that hold boxes as
//! contiguous `[x_min, y_min, x_max, y_max]` rows (numpy arrays, C buffers).

use std::collections::BTreeMap;

use crate::assignment::{ali_ams, standard_match, MatchConfig, ScoreMap};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, Detection, EvalConfig, FaceAttributes, GroundTruthFace, GroundTruthSet,
    ImageAnnotation, ImagePredictions, PredictionSet,
};
use crate::geometry::{AnchorGrid, BBox};

/// One image's assignment inputs.
#[derive(Debug, Clone, Copy)]
pub struct FlatBatch<'a> {
    pub width: u32,
    pub height: u32,
    /// `4 * n` values; must reproduce the image's anchor grid exactly.
    /// Empty means "use the generated grid".
    pub anchors: &'a [f64],
    /// `4 * m` values.
    pub gts: &'a [f64],
    /// `n` probabilities; required for Ali-AMS, ignored otherwise.
    pub scores: Option<&'a [f64]>,
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::ShapeMismatch(format!("{field}: {msg}"))
}

fn rows(field: &str, buf: &[f64]) -> Result<Vec<BBox>> {
    if !buf.len().is_multiple_of(4) {
        return Err(field_error(
            field,
            format!("length {} is not a multiple of 4", buf.len()),
        ));
    }
    buf.chunks_exact(4)
        .enumerate()
        .map(|(i, c)| {
            BBox::new(c[0], c[1], c[2], c[3])
                .map_err(|e| field_error(field, format!("row {i}: {e}")))
        })
        .collect()
}

/// Label codes (`1` positive, `0` negative, `-1` ignore) and matched gt
/// index (`-1` when not positive) per anchor. Runs IoU matching, then
/// Ali-AMS when `use_ali_ams` is set.
pub fn assign_flat(
    batch: &FlatBatch<'_>,
    cfg: &MatchConfig,
    use_ali_ams: bool,
) -> Result<(Vec<i8>, Vec<i32>)> {
    let grid = AnchorGrid::new(batch.width, batch.height)?;
    if !batch.anchors.is_empty() {
        if batch.anchors.len() != grid.len() * 4 {
            return Err(field_error(
                "anchors",
                format!(
                    "expected {} values for a {}x{} image, got {}",
                    grid.len() * 4,
                    batch.width,
                    batch.height,
                    batch.anchors.len()
                ),
            ));
        }
        for (a, c) in grid.anchors().iter().zip(batch.anchors.chunks_exact(4)) {
            if a.bbox.to_array() != [c[0], c[1], c[2], c[3]] {
                return Err(field_error(
                    "anchors",
                    format!("row {} does not match the generated grid", a.index),
                ));
            }
        }
    }
    let gts = rows("gts", batch.gts)?;
    let mut result = standard_match(&grid, &gts, cfg)?;
    if use_ali_ams {
        let scores = batch
            .scores
            .ok_or_else(|| field_error("scores", "required for ali-ams"))?;
        if scores.len() != grid.len() {
            return Err(field_error(
                "scores",
                format!("expected {} values, got {}", grid.len(), scores.len()),
            ));
        }
        let scores = ScoreMap::new(scores.to_vec()).map_err(|e| field_error("scores", e))?;
        result = ali_ams(&result, &grid, &gts, &scores)?;
    }
    let labels = result.labels();
    let codes = labels.iter().map(|l| l.code()).collect();
    let gt_index = labels
        .iter()
        .map(|l| l.gt().map_or(-1, |g| g as i32))
        .collect();
    Ok((codes, gt_index))
}

/// Ground truths and detections of a whole set, flattened. Image ids index
/// `0..num_images`.
#[derive(Debug, Clone, Copy)]
pub struct FlatEval<'a> {
    pub num_images: usize,
    /// `4 * m` values.
    pub gt_boxes: &'a [f64],
    pub gt_image: &'a [u32],
    /// Nonzero marks a gt as skip.
    pub gt_skip: &'a [u8],
    /// `4 * k` values.
    pub pred_boxes: &'a [f64],
    pub pred_scores: &'a [f64],
    pub pred_image: &'a [u32],
}

impl FlatEval<'_> {
    /// Rebuilds the parsed-file representation; images are named by id.
    pub fn to_sets(&self) -> Result<(GroundTruthSet, PredictionSet)> {
        let gt_boxes = rows("gt_boxes", self.gt_boxes)?;
        for (field, len) in [
            ("gt_image", self.gt_image.len()),
            ("gt_skip", self.gt_skip.len()),
        ] {
            if len != gt_boxes.len() {
                return Err(field_error(
                    field,
                    format!("expected {} entries, got {len}", gt_boxes.len()),
                ));
            }
        }
        let pred_boxes = rows("pred_boxes", self.pred_boxes)?;
        for (field, len) in [
            ("pred_scores", self.pred_scores.len()),
            ("pred_image", self.pred_image.len()),
        ] {
            if len != pred_boxes.len() {
                return Err(field_error(
                    field,
                    format!("expected {} entries, got {len}", pred_boxes.len()),
                ));
            }
        }
        if let Some(i) = self
            .pred_scores
            .iter()
            .position(|s| !(0.0..=1.0).contains(s))
        {
            return Err(field_error(
                "pred_scores",
                format!("entry {i} is {} (outside [0, 1])", self.pred_scores[i]),
            ));
        }
        let check_ids = |field: &str, ids: &[u32]| match ids
            .iter()
            .position(|&i| i as usize >= self.num_images)
        {
            Some(i) => Err(field_error(
                field,
                format!("entry {i} names image {} of {}", ids[i], self.num_images),
            )),
            None => Ok(()),
        };
        check_ids("gt_image", self.gt_image)?;
        check_ids("pred_image", self.pred_image)?;

        let mut gts = GroundTruthSet {
            images: (0..self.num_images)
                .map(|i| ImageAnnotation {
                    path: i.to_string(),
                    faces: Vec::new(),
                })
                .collect(),
        };
        for ((b, &img), &skip) in gt_boxes.iter().zip(self.gt_image).zip(self.gt_skip) {
            gts.images[img as usize].faces.push(GroundTruthFace {
                raw: [0; 4],
                bbox: Some(*b),
                attributes: FaceAttributes {
                    invalid: i32::from(skip != 0),
                    ..FaceAttributes::default()
                },
                skip: skip != 0,
            });
        }
        let mut preds = PredictionSet {
            images: (0..self.num_images)
                .map(|i| ImagePredictions {
                    name: i.to_string(),
                    detections: Vec::new(),
                })
                .collect(),
        };
        for ((b, &score), &img) in pred_boxes.iter().zip(self.pred_scores).zip(self.pred_image) {
            preds.images[img as usize]
                .detections
                .push(Detection { bbox: *b, score });
        }
        Ok((gts, preds))
    }
}

/// AP, false-alarm count and the `"all"` curve as `[precision, recall,
/// threshold]` triples laid end to end.
pub fn evaluate_flat(input: &FlatEval<'_>, cfg: &EvalConfig) -> Result<(f64, usize, Vec<f64>)> {
    let (gts, preds) = input.to_sets()?;
    let report = evaluate(&gts, &preds, &BTreeMap::new(), cfg)?;
    let all = &report.subsets[crate::eval::ALL_SUBSET];
    let curve = all
        .curve
        .iter()
        .flat_map(|p| <[f64; 3]>::from(*p))
        .collect();
    Ok((all.ap, all.nfa, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::Label;

    fn flat_grid(w: u32, h: u32) -> Vec<f64> {
        AnchorGrid::new(w, h)
            .unwrap()
            .anchors()
            .iter()
            .flat_map(|a| a.bbox.to_array())
            .collect()
    }

    #[test]
    fn empty_gts_give_all_negative() {
        let anchors = flat_grid(64, 64);
        let batch = FlatBatch {
            width: 64,
            height: 64,
            anchors: &anchors,
            gts: &[],
            scores: None,
        };
        let (codes, gt) = assign_flat(&batch, &MatchConfig::default(), false).unwrap();
        assert_eq!(codes.len(), anchors.len() / 4);
        assert!(codes.iter().all(|&c| c == 0));
        assert!(gt.iter().all(|&g| g == -1));
    }

    #[test]
    fn matches_native_ali_ams() {
        let (w, h) = (96, 80);
        let grid = AnchorGrid::new(w, h).unwrap();
        let gts = [
            BBox::new(10.0, 12.0, 30.0, 35.0).unwrap(),
            BBox::new(40.0, 30.0, 90.0, 78.0).unwrap(),
        ];
        let scores: Vec<f64> = (0..grid.len())
            .map(|i| ((i * 37) % 101) as f64 / 100.0)
            .collect();
        let native = ali_ams(
            &standard_match(&grid, &gts, &MatchConfig::default()).unwrap(),
            &grid,
            &gts,
            &ScoreMap::new(scores.clone()).unwrap(),
        )
        .unwrap();
        let gt_flat: Vec<f64> = gts.iter().flat_map(|b| b.to_array()).collect();
        let batch = FlatBatch {
            width: w,
            height: h,
            anchors: &[],
            gts: &gt_flat,
            scores: Some(&scores),
        };
        let (codes, gt) = assign_flat(&batch, &MatchConfig::default(), true).unwrap();
        for (i, l) in native.labels().iter().enumerate() {
            assert_eq!(codes[i], l.code());
            assert_eq!(
                gt[i],
                if let Label::Positive(g) = l {
                    *g as i32
                } else {
                    -1
                }
            );
        }
    }

    #[test]
    fn buffer_errors_name_the_field() {
        let anchors = flat_grid(64, 64);
        let bad = FlatBatch {
            width: 64,
            height: 64,
            anchors: &anchors[..anchors.len() - 1],
            gts: &[],
            scores: None,
        };
        assert!(assign_flat(&bad, &MatchConfig::default(), false)
            .unwrap_err()
            .to_string()
            .contains("anchors"));
        let bad = FlatBatch {
            width: 64,
            height: 64,
            anchors: &[],
            gts: &[0.0, 0.0, 1.0],
            scores: None,
        };
        assert!(assign_flat(&bad, &MatchConfig::default(), false)
            .unwrap_err()
            .to_string()
            .contains("gts"));
        let bad = FlatBatch {
            width: 64,
            height: 64,
            anchors: &[],
            gts: &[],
            scores: Some(&[0.5]),
        };
        assert!(assign_flat(&bad, &MatchConfig::default(), true)
            .unwrap_err()
            .to_string()
            .contains("scores"));
    }

    #[test]
    fn perfect_flat_evaluation() {
        let boxes = [0.0, 0.0, 10.0, 10.0, 20.0, 20.0, 40.0, 40.0];
        let input = FlatEval {
            num_images: 2,
            gt_boxes: &boxes,
            gt_image: &[0, 1],
            gt_skip: &[0, 0],
            pred_boxes: &boxes,
            pred_scores: &[1.0, 1.0],
            pred_image: &[0, 1],
        };
        let (ap, nfa, curve) = evaluate_flat(&input, &EvalConfig::default()).unwrap();
        assert_eq!((ap, nfa), (1.0, 0));
        assert_eq!(curve.len(), 3000);
    }

    #[test]
    fn nan_score_is_rejected() {
        let boxes = [0.0, 0.0, 10.0, 10.0];
        let input = FlatEval {
            num_images: 1,
            gt_boxes: &boxes,
            gt_image: &[0],
            gt_skip: &[0],
            pred_boxes: &boxes,
            pred_scores: &[f64::NAN],
            pred_image: &[0],
        };
        let err = evaluate_flat(&input, &EvalConfig::default()).unwrap_err();
        assert!(err.to_string().contains("pred_scores"), "{err}");
    }
}
