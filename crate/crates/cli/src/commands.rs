use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use anchorkit::assignment::{
    ali_ams, layer_match_stats, standard_match, AssignmentResult, ScoreMap,
};
use anchorkit::augmentation::{
    calibrate_scale_control, das_plan, mst_plan, rsc_plan, scale_distribution, sse_plan,
    TransformPlan,
};
use anchorkit::eval::{
    evaluate, image_key, parse_predictions, parse_widerface_annotations, GroundTruthSet,
    ImageAnnotation, SubsetList,
};
use anchorkit::geometry::{AnchorGrid, BBox, Layer};
use anchorkit::hcam::{
    discrepancy_labels, grid_attention_masks, hcam_loss, masks_to_lines, select_high_confidence,
    targets_to_lines,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::{AssignStrategy, AugmentStrategy, Cli, Command, DimsArgs, Format};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{csv_bytes, emit, json_bytes, read_text};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    cfg.validate()?;
    let ctx = Ctx { cli, cfg };
    match &cli.command {
        Command::Anchors { width, height } => ctx.anchors(*width, *height),
        Command::Assign {
            annotations,
            image,
            strategy,
            scores,
            dims,
            stats,
        } => ctx.assign(
            annotations,
            image.as_deref(),
            *strategy,
            scores.as_deref(),
            dims,
            stats.as_deref(),
        ),
        Command::Augment {
            annotations,
            strategy,
            samples,
            dims,
            summary,
        } => ctx.augment(annotations, *strategy, *samples, dims, summary.as_deref()),
        Command::ScaleStats {
            annotations,
            thresholds,
        } => ctx.scale_stats(annotations, thresholds),
        Command::Calibrate {
            annotations,
            layer,
            ratio,
        } => ctx.calibrate(annotations, *layer, *ratio),
        Command::Eval {
            gt,
            predictions,
            subset,
            nms,
            curve,
        } => ctx.eval(gt, predictions, subset, *nms, curve.as_deref()),
        Command::Hcam {
            assignment,
            scores_main,
            scores_prog,
            width,
            height,
            masks,
            labels,
        } => ctx.hcam(
            assignment,
            scores_main,
            scores_prog,
            (*width, *height),
            masks.as_deref(),
            labels.as_deref(),
        ),
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: RunConfig,
}

fn with_path(path: &Path, e: anchorkit::Error) -> CliError {
    match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        usage => usage,
    }
}

fn load_annotations(path: &Path) -> Result<GroundTruthSet, CliError> {
    parse_widerface_annotations(&read_text(path)?).map_err(|e| with_path(path, e))
}

fn load_scores(path: &Path) -> Result<ScoreMap, CliError> {
    ScoreMap::parse(&read_text(path)?).map_err(|e| with_path(path, e))
}

fn usable_faces(img: &ImageAnnotation) -> Vec<BBox> {
    img.faces
        .iter()
        .filter(|f| !f.skip)
        .filter_map(|f| f.bbox)
        .collect()
}

enum Dims {
    Fixed(u32, u32),
    PerImage(HashMap<String, (u32, u32)>),
    Infer,
}

impl Dims {
    fn resolve(args: &DimsArgs) -> Result<Self, CliError> {
        if let Some(path) = &args.dims {
            let raw: BTreeMap<String, (u32, u32)> = serde_json::from_str(&read_text(path)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            return Ok(Dims::PerImage(
                raw.into_iter()
                    .map(|(k, v)| (image_key(&k).to_string(), v))
                    .collect(),
            ));
        }
        match (args.width, args.height) {
            (Some(w), Some(h)) => Ok(Dims::Fixed(w, h)),
            (None, None) => Ok(Dims::Infer),
            _ => Err(CliError::Usage(
                "--width and --height must be given together".into(),
            )),
        }
    }

    /// Size of `img`. Without explicit sizes, images are taken to be 1024
    /// pixels wide with a 4:3 aspect, enlarged to cover every annotated box.
    fn size_of(&self, img: &ImageAnnotation) -> Result<(u32, u32), CliError> {
        match self {
            Dims::Fixed(w, h) => Ok((*w, *h)),
            Dims::PerImage(map) => map.get(image_key(&img.path)).copied().ok_or_else(|| {
                CliError::Data(format!("no dimensions given for image '{}'", img.path))
            }),
            Dims::Infer => {
                let boxes = img.faces.iter().filter_map(|f| f.bbox);
                let (mx, my) = boxes.fold((0.0f64, 0.0f64), |(x, y), b| {
                    (x.max(b.x_max()), y.max(b.y_max()))
                });
                Ok(((mx.ceil() as u32).max(1024), (my.ceil() as u32).max(768)))
            }
        }
    }
}

#[derive(Serialize)]
struct LayerReport {
    gt_count: usize,
    anchor_count: usize,
    max_count: usize,
    per_gt: BTreeMap<usize, usize>,
    histogram: BTreeMap<usize, usize>,
}

#[derive(Serialize)]
struct AugmentRecord<'a> {
    sample: usize,
    image: &'a str,
    plan: &'a TransformPlan,
}

#[derive(Serialize)]
struct AugmentSummary {
    samples: usize,
    fallbacks: usize,
    counts: BTreeMap<String, usize>,
    frequencies: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct ScalePoint {
    threshold: f64,
    fraction: f64,
}

#[derive(Serialize)]
struct HcamReport {
    loss: anchorkit::hcam::HcamLoss,
    correct_positives: usize,
    false_negatives: usize,
    mask_cells: BTreeMap<u32, usize>,
}

impl Ctx<'_> {
    fn out(&self) -> Option<&Path> {
        self.cli.out.as_deref()
    }

    fn seed(&self) -> Result<u64, CliError> {
        self.cfg.seed.ok_or_else(|| {
            CliError::Usage(
                "this command is stochastic: pass --seed or set `seed` in the config".into(),
            )
        })
    }

    fn anchors(&self, width: u32, height: u32) -> Result<(), CliError> {
        let grid = AnchorGrid::new(width, height)?;
        let bytes = match self.cli.format {
            None => grid.to_records().into_bytes(),
            Some(Format::Csv) => csv_bytes(
                &[
                    "index", "layer", "row", "col", "x_min", "y_min", "x_max", "y_max",
                ],
                grid.anchors().iter().map(|a| {
                    let b = a.bbox.to_array();
                    [
                        a.index.to_string(),
                        a.layer.to_string(),
                        a.row.to_string(),
                        a.col.to_string(),
                    ]
                    .into_iter()
                    .chain(b.iter().map(f64::to_string))
                    .collect::<Vec<_>>()
                }),
            )?,
            Some(Format::Json) => {
                let rows: Vec<_> = grid
                    .anchors()
                    .iter()
                    .map(|a| serde_json::json!({ "index": a.index, "layer": a.layer, "row": a.row, "col": a.col, "bbox": a.bbox }))
                    .collect();
                json_bytes(&rows)?
            }
        };
        emit(self.out(), &bytes)
    }

    fn assign(
        &self,
        annotations: &Path,
        image: Option<&str>,
        strategy: AssignStrategy,
        scores: Option<&Path>,
        dims: &DimsArgs,
        stats: Option<&Path>,
    ) -> Result<(), CliError> {
        if strategy == AssignStrategy::AliAms && scores.is_none() {
            return Err(CliError::Usage("--strategy ali-ams needs --scores".into()));
        }
        let dims = Dims::resolve(dims)?;
        if matches!(dims, Dims::Infer) {
            return Err(CliError::Usage(
                "assign needs --width/--height or --dims".into(),
            ));
        }
        let set = load_annotations(annotations)?;
        let img = match image {
            Some(name) => set
                .images
                .iter()
                .find(|i| i.path == name || image_key(&i.path) == image_key(name))
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "image '{name}' not found in {}",
                        annotations.display()
                    ))
                })?,
            None if set.images.len() == 1 => &set.images[0],
            None => {
                return Err(CliError::Usage(format!(
                    "{} holds {} images; choose one with --image",
                    annotations.display(),
                    set.images.len()
                )))
            }
        };
        let (w, h) = dims.size_of(img)?;
        let grid = AnchorGrid::new(w, h)?;
        let faces = usable_faces(img);
        let scores = scores.map(load_scores).transpose()?;
        let mut result = standard_match(&grid, &faces, &self.cfg.matching)?;
        if strategy == AssignStrategy::AliAms {
            let s = scores.as_ref().expect("checked above");
            result = ali_ams(&result, &grid, &faces, s)?;
        }
        if let Some(path) = stats {
            self.write_layer_stats(path, &grid, &result)?;
        }
        emit(self.out(), result.to_lines(scores.as_ref()).as_bytes())
    }

    fn write_layer_stats(
        &self,
        path: &Path,
        grid: &AnchorGrid,
        result: &AssignmentResult,
    ) -> Result<(), CliError> {
        let summary = layer_match_stats(grid, result)?;
        let report: BTreeMap<Layer, LayerReport> = summary
            .into_iter()
            .map(|(layer, s)| {
                let max_count = result.layer_stats(layer).max_count;
                (
                    layer,
                    LayerReport {
                        gt_count: s.gt_count,
                        anchor_count: s.anchor_count,
                        max_count,
                        per_gt: s.per_gt,
                        histogram: s.histogram,
                    },
                )
            })
            .collect();
        let bytes = match self.cli.format {
            Some(Format::Csv) => csv_bytes(
                &["layer", "gt_count", "anchor_count", "max_count"],
                report.iter().map(|(l, r)| {
                    [
                        l.to_string(),
                        r.gt_count.to_string(),
                        r.anchor_count.to_string(),
                        r.max_count.to_string(),
                    ]
                }),
            )?,
            _ => json_bytes(&report)?,
        };
        emit(Some(path), &bytes)
    }

    fn augment(
        &self,
        annotations: &Path,
        strategy: AugmentStrategy,
        samples: Option<usize>,
        dims: &DimsArgs,
        summary: Option<&Path>,
    ) -> Result<(), CliError> {
        let seed = self.seed()?;
        let dims = Dims::resolve(dims)?;
        let set = load_annotations(annotations)?;
        if set.images.is_empty() {
            return Err(CliError::Data(format!(
                "{} holds no images",
                annotations.display()
            )));
        }
        let sized: Vec<((u32, u32), Vec<BBox>)> = set
            .images
            .iter()
            .map(|img| Ok((dims.size_of(img)?, usable_faces(img))))
            .collect::<Result<_, CliError>>()?;
        let n = samples.unwrap_or(set.images.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut fallbacks = 0;
        for sample in 0..n {
            let i = sample % set.images.len();
            let (size, faces) = &sized[i];
            let plan = match strategy {
                AugmentStrategy::Mst => mst_plan(*size, &mut rng)?,
                AugmentStrategy::Rsc => rsc_plan(*size, self.cfg.sse.output_side, &mut rng)?,
                AugmentStrategy::Das => das_plan(*size, faces, &self.cfg.das, &mut rng)?,
                AugmentStrategy::Sse => sse_plan(*size, faces, &self.cfg.sse, &mut rng)?,
            };
            let key = plan
                .target_layer
                .map_or_else(|| "none".to_string(), |l| l.to_string());
            *counts.entry(key).or_insert(0) += 1;
            fallbacks += usize::from(plan.fallback);
            serde_json::to_writer(
                &mut out,
                &AugmentRecord {
                    sample,
                    image: &set.images[i].path,
                    plan: &plan,
                },
            )?;
            out.push(b'\n');
        }
        if let Some(path) = summary {
            let frequencies = counts
                .iter()
                .map(|(k, &c)| (k.clone(), c as f64 / n.max(1) as f64))
                .collect();
            let s = AugmentSummary {
                samples: n,
                fallbacks,
                counts,
                frequencies,
            };
            let bytes = match self.cli.format {
                Some(Format::Csv) => csv_bytes(
                    &["target_layer", "count", "frequency"],
                    s.counts
                        .iter()
                        .map(|(k, c)| [k.clone(), c.to_string(), s.frequencies[k].to_string()]),
                )?,
                _ => json_bytes(&s)?,
            };
            emit(Some(path), &bytes)?;
        }
        emit(self.out(), &out)
    }

    fn scale_stats(&self, annotations: &Path, thresholds: &[f64]) -> Result<(), CliError> {
        if thresholds.iter().any(|t| !t.is_finite()) {
            return Err(CliError::Usage("thresholds must be finite numbers".into()));
        }
        let set = load_annotations(annotations)?;
        let points: Vec<ScalePoint> = scale_distribution(&set.face_lists(), thresholds)?
            .into_iter()
            .map(|(threshold, fraction)| ScalePoint {
                threshold,
                fraction,
            })
            .collect();
        let bytes = match self.cli.format {
            Some(Format::Json) => json_bytes(&points)?,
            _ => csv_bytes(
                &["threshold", "fraction"],
                points
                    .iter()
                    .map(|p| [p.threshold.to_string(), p.fraction.to_string()]),
            )?,
        };
        emit(self.out(), &bytes)
    }

    fn calibrate(&self, annotations: &Path, layer: Layer, ratio: f64) -> Result<(), CliError> {
        let mut cfg = self.cfg.calibration.clone();
        cfg.seed = self.seed()?;
        let set = load_annotations(annotations)?;
        let state =
            calibrate_scale_control(&set.face_lists(), layer, ratio, &cfg, &self.cfg.matching)?;
        if !state.converged {
            eprintln!(
                "warning: no scale within {} of ratio {ratio} on {layer} after {} iterations (last {:.4} at scale {:.3})",
                cfg.tolerance, state.iterations, state.achieved_ratio, state.scale
            );
        }
        let bytes = match self.cli.format {
            Some(Format::Csv) => csv_bytes(
                &["iteration", "start_scale", "end_scale", "scale", "ratio"],
                state.trace.iter().map(|s| {
                    [
                        s.iteration.to_string(),
                        s.start_scale.to_string(),
                        s.end_scale.to_string(),
                        s.scale.to_string(),
                        s.ratio.to_string(),
                    ]
                }),
            )?,
            _ => json_bytes(&state)?,
        };
        emit(self.out(), &bytes)
    }

    fn eval(
        &self,
        gt: &Path,
        predictions: &Path,
        subsets: &[String],
        nms: bool,
        curve: Option<&Path>,
    ) -> Result<(), CliError> {
        let gts = load_annotations(gt)?;
        let preds =
            parse_predictions(&read_text(predictions)?).map_err(|e| with_path(predictions, e))?;
        let mut lists: BTreeMap<String, SubsetList> = BTreeMap::new();
        for spec in subsets {
            let (name, path) = match spec.split_once('=') {
                Some((n, p)) => (n.to_string(), Path::new(p)),
                None => (image_key(spec).to_string(), Path::new(spec.as_str())),
            };
            let list: SubsetList = serde_json::from_str(&read_text(path)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            if lists.insert(name.clone(), list).is_some() {
                return Err(CliError::Usage(format!("subset '{name}' given twice")));
            }
        }
        let mut cfg = self.cfg.eval;
        if nms && cfg.nms.is_none() {
            cfg.nms = Some(Default::default());
        }
        let report = evaluate(&gts, &preds, &lists, &cfg).map_err(|e| match e {
            anchorkit::Error::UnknownImages(_) => CliError::Data(e.to_string()),
            other => other.into(),
        })?;
        let curve_csv = || {
            csv_bytes(
                &["subset", "threshold", "precision", "recall"],
                report.curve_rows().map(|(s, t, p, r)| {
                    [s.to_string(), t.to_string(), p.to_string(), r.to_string()]
                }),
            )
        };
        if let Some(path) = curve {
            emit(Some(path), &curve_csv()?)?;
        }
        let bytes = match self.cli.format {
            Some(Format::Csv) => curve_csv()?,
            _ => json_bytes(&report)?,
        };
        emit(self.out(), &bytes)
    }

    fn hcam(
        &self,
        assignment: &Path,
        scores_main: &Path,
        scores_prog: &Path,
        (width, height): (u32, u32),
        masks: Option<&Path>,
        labels: Option<&Path>,
    ) -> Result<(), CliError> {
        let grid = AnchorGrid::new(width, height)?;
        let result = AssignmentResult::parse_lines(&grid, &read_text(assignment)?)
            .map_err(|e| with_path(assignment, e))?;
        let main = load_scores(scores_main)?;
        let prog = load_scores(scores_prog)?;
        for (path, s) in [(scores_main, &main), (scores_prog, &prog)] {
            if s.len() != grid.len() {
                return Err(CliError::Data(format!(
                    "{}: {} scores for {} anchors",
                    path.display(),
                    s.len(),
                    grid.len()
                )));
            }
        }
        let hc_cfg = &self.cfg.hcam;
        let high = select_high_confidence(&main, &result, hc_cfg.confidence_threshold)?;
        let y_hc = discrepancy_labels(&main, &result, hc_cfg.confidence_threshold)?;
        let loss = hcam_loss(&main, &prog, &result, &y_hc, hc_cfg)?;
        let positions = high.all();
        let mut mask_cells = BTreeMap::new();
        let mut mask_text = String::new();
        for &n in &hc_cfg.neighborhood_sizes {
            let m = grid_attention_masks(&grid, &positions, n)?;
            mask_cells.insert(n, m.iter().map(|m| m.ones()).sum());
            for line in masks_to_lines(&grid, &m).lines() {
                mask_text.push_str(&format!("{n} {line}\n"));
            }
        }
        if let Some(path) = masks {
            emit(Some(path), mask_text.as_bytes())?;
        }
        if let Some(path) = labels {
            emit(Some(path), targets_to_lines(&y_hc).as_bytes())?;
        }
        let report = HcamReport {
            loss,
            correct_positives: high.correct_positives.len(),
            false_negatives: high.false_negatives.len(),
            mask_cells,
        };
        let bytes = match self.cli.format {
            Some(Format::Csv) => csv_bytes(
                &["main", "progressive", "gamma_balance", "total"],
                [
                    [loss.main, loss.progressive, loss.gamma_balance, loss.total]
                        .map(|v| v.to_string()),
                ],
            )?,
            _ => json_bytes(&report)?,
        };
        emit(self.out(), &bytes)
    }
}
