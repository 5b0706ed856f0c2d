//! Readers for the Wider Face annotation and submission text layouts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceAttributes {
    pub blur: i32,
    pub expression: i32,
    pub illumination: i32,
    pub invalid: i32,
    pub occlusion: i32,
    pub pose: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFace {
    /// `x y w h` exactly as written in the file.
    pub raw: [i64; 4],
    /// `None` when the record has a non-positive width or height.
    pub bbox: Option<BBox>,
    pub attributes: FaceAttributes,
    /// Excluded from matching: invalid flag set or empty box.
    pub skip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub path: String,
    pub faces: Vec<GroundTruthFace>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub images: Vec<ImageAnnotation>,
}

impl GroundTruthSet {
    /// Usable boxes of each image, skip-marked faces removed.
    pub fn face_lists(&self) -> Vec<Vec<BBox>> {
        self.images
            .iter()
            .map(|img| {
                img.faces
                    .iter()
                    .filter(|f| !f.skip)
                    .filter_map(|f| f.bbox)
                    .collect()
            })
            .collect()
    }

    pub fn face_count(&self) -> usize {
        self.images.iter().map(|i| i.faces.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePredictions {
    pub name: String,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub images: Vec<ImagePredictions>,
}

/// Key used to pair annotation paths with prediction names: the last path
/// component without its extension, so `0--Parade/0_Parade_1.jpg` and
/// `0_Parade_1` refer to the same image.
pub fn image_key(name: &str) -> &str {
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    match base.rfind('.') {
        Some(dot) if dot > 0 => &base[..dot],
        _ => base,
    }
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate().peekable(),
        }
    }

    /// Next non-blank line with its 1-based number.
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            let t = line.trim();
            if !t.is_empty() {
                return Some((i + 1, t));
            }
        }
        None
    }

    fn peek_content(&mut self) -> Option<&'a str> {
        while let Some((_, line)) = self.inner.peek() {
            if line.trim().is_empty() {
                self.inner.next();
            } else {
                return Some(line.trim());
            }
        }
        None
    }

    fn expect(&mut self, what: &str, after: usize) -> Result<(usize, &'a str)> {
        self.next_content().ok_or_else(|| {
            Error::parse(
                after + 1,
                format!("unexpected end of input, expected {what}"),
            )
        })
    }
}

fn parse_count(line_no: usize, line: &str) -> Result<usize> {
    line.parse()
        .map_err(|_| Error::parse(line_no, format!("expected a face count, found '{line}'")))
}

fn parse_ints(line: &str) -> Option<Vec<i64>> {
    line.split_whitespace().map(|f| f.parse().ok()).collect()
}

/// Parses the `path / count / records` annotation layout. Each record is
/// `x y w h blur expression illumination invalid occlusion pose`. A count of
/// zero may be followed by a single placeholder record, which is consumed.
pub fn parse_widerface_annotations(text: &str) -> Result<GroundTruthSet> {
    let mut lines = Lines::new(text);
    let mut set = GroundTruthSet::default();
    while let Some((path_line, path)) = lines.next_content() {
        let (count_line, count) = lines.expect("a face count", path_line)?;
        let count = parse_count(count_line, count)?;
        let mut faces = Vec::with_capacity(count);
        let mut last = count_line;
        if count == 0
            && lines
                .peek_content()
                .and_then(parse_ints)
                .is_some_and(|v| v.len() == 10)
        {
            lines.next_content();
        }
        for _ in 0..count {
            let (line_no, line) = lines.expect("a face record", last)?;
            last = line_no;
            let v = parse_ints(line).ok_or_else(|| {
                Error::parse(
                    line_no,
                    format!("non-integer field in face record '{line}'"),
                )
            })?;
            if v.len() < 10 {
                return Err(Error::parse(
                    line_no,
                    format!("face record has {} fields, expected 10", v.len()),
                ));
            }
            let attributes = FaceAttributes {
                blur: v[4] as i32,
                expression: v[5] as i32,
                illumination: v[6] as i32,
                invalid: v[7] as i32,
                occlusion: v[8] as i32,
                pose: v[9] as i32,
            };
            let bbox = BBox::from_xywh(v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64).ok();
            faces.push(GroundTruthFace {
                raw: [v[0], v[1], v[2], v[3]],
                bbox,
                attributes,
                skip: attributes.invalid == 1 || bbox.is_none(),
            });
        }
        set.images.push(ImageAnnotation {
            path: path.to_string(),
            faces,
        });
    }
    Ok(set)
}

/// Parses concatenated submission records: image name, detection count,
/// then `x y w h score` lines.
pub fn parse_predictions(text: &str) -> Result<PredictionSet> {
    let mut lines = Lines::new(text);
    let mut set = PredictionSet::default();
    while let Some((name_line, name)) = lines.next_content() {
        let (count_line, count) = lines.expect("a detection count", name_line)?;
        let count = parse_count(count_line, count)?;
        let mut detections = Vec::with_capacity(count);
        let mut last = count_line;
        for _ in 0..count {
            let (line_no, line) = lines.expect("a detection record", last)?;
            last = line_no;
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| {
                    Error::parse(
                        line_no,
                        format!("detection count mismatch or malformed record '{line}'"),
                    )
                })?;
            if v.len() != 5 {
                return Err(Error::parse(
                    line_no,
                    format!("detection record has {} fields, expected 5", v.len()),
                ));
            }
            if !(0.0..=1.0).contains(&v[4]) {
                return Err(Error::parse(
                    line_no,
                    format!("score {} outside [0, 1]", v[4]),
                ));
            }
            let bbox = BBox::from_xywh(v[0], v[1], v[2], v[3])
                .map_err(|e| Error::parse(line_no, e.to_string()))?;
            detections.push(Detection { bbox, score: v[4] });
        }
        set.images.push(ImagePredictions {
            name: name.to_string(),
            detections,
        });
    }
    Ok(set)
}

/// Writes a [`PredictionSet`] in the submission layout.
pub fn write_predictions(set: &PredictionSet) -> String {
    let mut out = String::new();
    for img in &set.images {
        out.push_str(&format!("{}\n{}\n", img.name, img.detections.len()));
        for d in &img.detections {
            let b = d.bbox;
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                b.x_min(),
                b.y_min(),
                b.width(),
                b.height(),
                d.score
            ));
        }
    }
    out
}
