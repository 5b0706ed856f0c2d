use super::TransformPlan;
use crate::error::{Error, Result};

/// Interleaved (HWC) image with `f32` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: u32, data: Vec<f32>) -> Result<Self> {
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "raster {width}x{height}x{channels} needs {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u32, value: f32) -> Self {
        let len = width as usize * height as usize * channels as usize;
        Self {
            width,
            height,
            channels,
            data: vec![value; len],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let c = self.channels as usize;
        let start = (y as usize * self.width as usize + x as usize) * c;
        &self.data[start..start + c]
    }

    fn sample(&self, x: usize, y: usize, ch: usize) -> f32 {
        self.data[(y * self.width as usize + x) * self.channels as usize + ch]
    }
}

/// Splits a continuous source coordinate into a clamped pixel pair and weight.
fn taps(pos: f64, len: u32) -> (usize, usize, f32) {
    let max = f64::from(len - 1);
    let p = pos.clamp(0.0, max);
    let lo = p.floor();
    let hi = (lo + 1.0).min(max);
    (lo as usize, hi as usize, (p - lo) as f32)
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

/// Renders `plan` over `image`: bilinear resample by the plan's scale
/// (pixel-centre aligned, edge clamped), crop, then zero-pad to the output
/// size.
pub fn apply_raster(image: &Raster, plan: &TransformPlan) -> Result<Raster> {
    if (image.width, image.height) != plan.source_size {
        return Err(Error::ShapeMismatch(format!(
            "plan expects a {}x{} image, got {}x{}",
            plan.source_size.0, plan.source_size.1, image.width, image.height
        )));
    }
    let (out_w, out_h) = plan.output_size();
    let (crop_w, crop_h) = plan.crop_size();
    let scale = plan.scale();
    let (ox, oy) = (plan.crop_window.x_min(), plan.crop_window.y_min());
    let ch = image.channels as usize;
    let mut out = Raster::filled(out_w, out_h, image.channels, 0.0);

    let cols: Vec<_> = (0..out_w.min(crop_w))
        .map(|u| taps((f64::from(u) + ox + 0.5) / scale - 0.5, image.width))
        .collect();
    for v in 0..out_h.min(crop_h) {
        let (y0, y1, fy) = taps((f64::from(v) + oy + 0.5) / scale - 0.5, image.height);
        for (u, &(x0, x1, fx)) in cols.iter().enumerate() {
            let base = (v as usize * out_w as usize + u) * ch;
            for c in 0..ch {
                let top = lerp(image.sample(x0, y0, c), image.sample(x1, y0, c), fx);
                let bottom = lerp(image.sample(x0, y1, c), image.sample(x1, y1, c), fx);
                out.data[base + c] = lerp(top, bottom, fy);
            }
        }
    }
    Ok(out)
}
