//! Boxes, face scale and the six-level anchor pyramid.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in continuous pixel coordinates.
///
/// Construction rejects boxes that are empty on either axis, so every `BBox`
/// in circulation has strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        // NaN fails both comparisons and is rejected with the degenerate case.
        if x_max > x_min
            && y_max > y_min
            && x_min.is_finite()
            && y_min.is_finite()
            && x_max.is_finite()
            && y_max.is_finite()
        {
            Ok(Self {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        } else {
            Err(Error::DegenerateBox {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        }
    }

    /// Builds a box from the `(x, y, w, h)` layout used by Wider Face files.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    /// Square of side `side` centred on `(cx, cy)`.
    pub fn square(cx: f64, cy: f64, side: f64) -> Result<Self> {
        let half = side / 2.0;
        Self::new(cx - half, cy - half, cx + half, cy + half)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Multiplies every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<BBox> {
        BBox::new(
            self.x_min * factor,
            self.y_min * factor,
            self.x_max * factor,
            self.y_max * factor,
        )
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Intersection with `[0, width] x [0, height]`, or `None` when nothing remains.
    pub fn clipped(&self, width: f64, height: f64) -> Option<BBox> {
        BBox::new(
            self.x_min.max(0.0),
            self.y_min.max(0.0),
            self.x_max.min(width),
            self.y_max.min(height),
        )
        .ok()
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union. Symmetric, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Euclidean distance between box centres.
pub fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Face scale as the geometric mean of width and height.
pub fn face_scale(b: &BBox) -> f64 {
    b.area().sqrt()
}

/// One level of the anchor pyramid. Level `pN` has stride `2^N` and anchors
/// of side `4 * stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    P2,
    P3,
    P4,
    P5,
    P6,
    P7,
}

impl Layer {
    pub const ALL: [Layer; 6] = [
        Layer::P2,
        Layer::P3,
        Layer::P4,
        Layer::P5,
        Layer::P6,
        Layer::P7,
    ];

    pub fn level(self) -> u32 {
        self as u32 + 2
    }

    pub fn stride(self) -> u32 {
        1 << self.level()
    }

    pub fn anchor_scale(self) -> f64 {
        f64::from(4 * self.stride())
    }

    pub fn name(self) -> &'static str {
        match self {
            Layer::P2 => "p2",
            Layer::P3 => "p3",
            Layer::P4 => "p4",
            Layer::P5 => "p5",
            Layer::P6 => "p6",
            Layer::P7 => "p7",
        }
    }

    /// Position in [`Layer::ALL`].
    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Layer::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown pyramid layer '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub index: usize,
    pub layer: Layer,
    pub row: u32,
    pub col: u32,
    pub bbox: BBox,
}

/// Spatial layout of one pyramid level within an [`AnchorGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub layer: Layer,
    pub rows: u32,
    pub cols: u32,
    /// Global index of the layer's first anchor.
    pub offset: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Every anchor of the p2-p7 pyramid for one image size, indexed layer-major
/// then row-major. Anchors are not clipped to the image.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    width: u32,
    height: u32,
    layers: Vec<LayerShape>,
    anchors: Vec<Anchor>,
}

impl AnchorGrid {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        let mut layers = Vec::with_capacity(Layer::ALL.len());
        let mut anchors = Vec::new();
        for layer in Layer::ALL {
            let stride = layer.stride();
            let shape = LayerShape {
                layer,
                rows: height.div_ceil(stride),
                cols: width.div_ceil(stride),
                offset: anchors.len(),
            };
            let s = f64::from(stride);
            for row in 0..shape.rows {
                for col in 0..shape.cols {
                    let cx = s * (f64::from(col) + 0.5);
                    let cy = s * (f64::from(row) + 0.5);
                    anchors.push(Anchor {
                        index: anchors.len(),
                        layer,
                        row,
                        col,
                        bbox: BBox::square(cx, cy, layer.anchor_scale())?,
                    });
                }
            }
            layers.push(shape);
        }
        Ok(Self {
            width,
            height,
            layers,
            anchors,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn layer_shape(&self, layer: Layer) -> &LayerShape {
        &self.layers[layer.ordinal()]
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn anchor(&self, index: usize) -> &Anchor {
        &self.anchors[index]
    }

    pub fn layer_anchors(&self, layer: Layer) -> &[Anchor] {
        &self.anchors[self.layer_shape(layer).range()]
    }

    pub fn index_of(&self, layer: Layer, row: u32, col: u32) -> Option<usize> {
        let shape = self.layer_shape(layer);
        (row < shape.rows && col < shape.cols)
            .then(|| shape.offset + row as usize * shape.cols as usize + col as usize)
    }

    /// Global indices of the anchors in `layer` whose boxes can intersect `b`.
    ///
    /// The result is a superset of the overlapping anchors; non-overlapping
    /// anchors outside the returned rows/cols all have zero IoU with `b`.
    pub(crate) fn overlapping(&self, layer: Layer, b: &BBox) -> impl Iterator<Item = usize> + '_ {
        let shape = *self.layer_shape(layer);
        let stride = f64::from(layer.stride());
        let half = layer.anchor_scale() / 2.0;
        // anchor centre c = stride*(k+0.5) overlaps b iff c - half < max and c + half > min
        let span = |lo: f64, hi: f64, n: u32| -> Range<u32> {
            let first = ((lo - half) / stride - 0.5).floor().max(0.0);
            let last = ((hi + half) / stride - 0.5).ceil().min(f64::from(n));
            if last <= first {
                0..0
            } else {
                first as u32..last as u32
            }
        };
        let rows = span(b.y_min(), b.y_max(), shape.rows);
        let cols = span(b.x_min(), b.x_max(), shape.cols);
        rows.flat_map(move |r| {
            let cols = cols.clone();
            cols.map(move |c| shape.offset + r as usize * shape.cols as usize + c as usize)
        })
    }

    /// One `index layer row col x_min y_min x_max y_max` line per anchor.
    pub fn to_records(&self) -> String {
        let mut out = String::with_capacity(self.anchors.len() * 48);
        for a in &self.anchors {
            let [x0, y0, x1, y1] = a.bbox.to_array();
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {}\n",
                a.index, a.layer, a.row, a.col, x0, y0, x1, y1
            ));
        }
        out
    }

    /// Parses the output of [`AnchorGrid::to_records`].
    pub fn parse_records(text: &str) -> Result<Vec<Anchor>> {
        let mut anchors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 8 {
                return Err(Error::parse(
                    line_no,
                    format!("expected 8 fields, found {}", fields.len()),
                ));
            }
            let num = |k: usize| -> Result<f64> {
                fields[k]
                    .parse::<f64>()
                    .map_err(|e| Error::parse(line_no, format!("field {}: {e}", k + 1)))
            };
            let int = |k: usize| -> Result<u64> {
                fields[k]
                    .parse::<u64>()
                    .map_err(|e| Error::parse(line_no, format!("field {}: {e}", k + 1)))
            };
            anchors.push(Anchor {
                index: int(0)? as usize,
                layer: fields[1]
                    .parse()
                    .map_err(|e: Error| Error::parse(line_no, e.to_string()))?,
                row: int(2)? as u32,
                col: int(3)? as u32,
                bbox: BBox::new(num(4)?, num(5)?, num(6)?, num(7)?)
                    .map_err(|e| Error::parse(line_no, e.to_string()))?,
            });
        }
        Ok(anchors)
    }
}

/// Free-function form of [`AnchorGrid::new`].
pub fn generate_anchor_grid(width: u32, height: u32) -> Result<AnchorGrid> {
    AnchorGrid::new(width, height)
}
