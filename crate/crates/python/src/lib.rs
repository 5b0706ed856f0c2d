//! Python bindings over the flat-buffer entry points. Boxes are passed as
//! flat sequences of `[x_min, y_min, x_max, y_max]` rows.

use anchorkit::assignment::MatchConfig;
use anchorkit::eval::{Detection, EvalConfig, NmsConfig};
use anchorkit::flat::{assign_flat, evaluate_flat, FlatBatch, FlatEval};
use anchorkit::geometry::BBox;
use anchorkit::hcam::Target;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_error(e: anchorkit::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn bbox(b: [f64; 4]) -> PyResult<BBox> {
    BBox::new(b[0], b[1], b[2], b[3]).map_err(value_error)
}

/// Returns `(labels, gt_index)` per anchor: labels are 1 positive, 0
/// negative, -1 ignore; gt_index is -1 unless positive.
#[pyfunction]
#[pyo3(signature = (width, height, gts, anchors=Vec::new(), scores=None, ali_ams=false, pos_iou=0.5, neg_iou=0.4))]
#[allow(clippy::too_many_arguments)]
fn assign(
    width: u32,
    height: u32,
    gts: Vec<f64>,
    anchors: Vec<f64>,
    scores: Option<Vec<f64>>,
    ali_ams: bool,
    pos_iou: f64,
    neg_iou: f64,
) -> PyResult<(Vec<i8>, Vec<i32>)> {
    let batch = FlatBatch {
        width,
        height,
        anchors: &anchors,
        gts: &gts,
        scores: scores.as_deref(),
    };
    let cfg = MatchConfig {
        pos_iou_threshold: pos_iou,
        neg_iou_threshold: neg_iou,
        ..MatchConfig::default()
    };
    assign_flat(&batch, &cfg, ali_ams).map_err(value_error)
}

/// Returns `(ap, false_alarms, curve)` for the whole set; `curve` holds
/// `[precision, recall, threshold]` triples laid end to end.
#[pyfunction]
#[pyo3(signature = (num_images, gt_boxes, gt_image, gt_skip, pred_boxes, pred_scores, pred_image, iou_threshold=0.5, nfa_threshold=0.8, nms=false))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    num_images: usize,
    gt_boxes: Vec<f64>,
    gt_image: Vec<u32>,
    gt_skip: Vec<u8>,
    pred_boxes: Vec<f64>,
    pred_scores: Vec<f64>,
    pred_image: Vec<u32>,
    iou_threshold: f64,
    nfa_threshold: f64,
    nms: bool,
) -> PyResult<(f64, usize, Vec<f64>)> {
    let input = FlatEval {
        num_images,
        gt_boxes: &gt_boxes,
        gt_image: &gt_image,
        gt_skip: &gt_skip,
        pred_boxes: &pred_boxes,
        pred_scores: &pred_scores,
        pred_image: &pred_image,
    };
    let cfg = EvalConfig {
        iou_threshold,
        nfa_threshold,
        nms: nms.then(NmsConfig::default),
    };
    cfg.validate().map_err(value_error)?;
    evaluate_flat(&input, &cfg).map_err(value_error)
}

#[pyfunction]
fn iou(a: [f64; 4], b: [f64; 4]) -> PyResult<f64> {
    Ok(anchorkit::geometry::iou(&bbox(a)?, &bbox(b)?))
}

/// Indices of the kept boxes in descending score order.
#[pyfunction]
#[pyo3(signature = (boxes, scores, iou_threshold=0.6, pre_topk=5000, post_topk=750))]
fn nms(
    boxes: Vec<[f64; 4]>,
    scores: Vec<f64>,
    iou_threshold: f64,
    pre_topk: usize,
    post_topk: usize,
) -> PyResult<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(PyValueError::new_err(format!(
            "{} boxes but {} scores",
            boxes.len(),
            scores.len()
        )));
    }
    let cfg = NmsConfig {
        iou_threshold,
        pre_topk,
        post_topk,
    };
    cfg.validate().map_err(value_error)?;
    let dets = boxes
        .into_iter()
        .zip(scores)
        .map(|(b, score)| {
            Ok(Detection {
                bbox: bbox(b)?,
                score,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(anchorkit::eval::nms(&dets, &cfg))
}

/// Targets use the label codes of `assign`: 1, 0 or -1.
#[pyfunction]
#[pyo3(signature = (scores, targets, alpha=0.25, gamma=2.0))]
fn focal_loss(scores: Vec<f64>, targets: Vec<i8>, alpha: f64, gamma: f64) -> PyResult<f64> {
    let targets = targets
        .into_iter()
        .map(|t| match t {
            1 => Ok(Target::Positive),
            0 => Ok(Target::Negative),
            -1 => Ok(Target::Ignore),
            other => Err(PyValueError::new_err(format!(
                "target code {other} is not 1, 0 or -1"
            ))),
        })
        .collect::<PyResult<Vec<_>>>()?;
    anchorkit::hcam::focal_loss(&scores, &targets, alpha, gamma).map_err(value_error)
}

#[pymodule]
fn anchorkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(assign, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    m.add_function(wrap_pyfunction!(focal_loss, m)?)?;
    Ok(())
}
