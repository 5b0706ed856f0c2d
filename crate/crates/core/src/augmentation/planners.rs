use rand::seq::IndexedRandom;
use rand::Rng;

use super::{
    check_dims, resized_size, DasConfig, SseConfig, Strategy, TransformPlan, PLAN_VERSION,
};
use crate::error::{Error, Result};
use crate::geometry::{face_scale, BBox, Layer};

/// Crop factors of the random square crop, relative to the short side.
pub const RSC_FACTORS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Layers drawn uniformly when neither p5 nor p6 is selected.
const OTHER_LAYERS: [Layer; 4] = [Layer::P2, Layer::P3, Layer::P4, Layer::P7];

/// Picks a crop offset along one axis of length `len` for a window of `side`.
///
/// When `focus` is given the window is placed so that it contains the focus
/// coordinate; otherwise every integer offset is equally likely.
fn crop_offset<R: Rng + ?Sized>(rng: &mut R, len: u32, side: u32, focus: Option<f64>) -> u32 {
    if len <= side {
        return 0;
    }
    let max = len - side;
    let (lo, hi) = match focus {
        Some(c) => {
            // integer offsets o with o <= c < o + side
            let lo = ((c - f64::from(side)).floor() + 1.0).max(0.0);
            let hi = c.floor().min(f64::from(max));
            if lo > hi {
                // focus lies outside the image; hug the nearer border
                let o = if c < 0.0 { 0 } else { max };
                (o, o)
            } else {
                (lo as u32, hi as u32)
            }
        }
        None => (0, max),
    };
    rng.random_range(lo..=hi)
}

/// Crop window of at most `side` x `side` inside a `size` image.
fn crop_window<R: Rng + ?Sized>(
    rng: &mut R,
    size: (u32, u32),
    side: u32,
    focus: Option<(f64, f64)>,
) -> BBox {
    let x0 = crop_offset(rng, size.0, side, focus.map(|f| f.0));
    let y0 = crop_offset(rng, size.1, side, focus.map(|f| f.1));
    let (w, h) = (size.0.min(side), size.1.min(side));
    BBox::new(
        f64::from(x0),
        f64::from(y0),
        f64::from(x0 + w),
        f64::from(y0 + h),
    )
    .expect("non-empty crop")
}

/// Multi-scale training: resize so the short side becomes an integer drawn
/// uniformly from `[640, 1280]`. No crop, no padding.
pub fn mst_plan<R: Rng + ?Sized>(size: (u32, u32), rng: &mut R) -> Result<TransformPlan> {
    mst_plan_in(size, (640, 1280), rng)
}

pub(crate) fn mst_plan_in<R: Rng + ?Sized>(
    size: (u32, u32),
    range: (u32, u32),
    rng: &mut R,
) -> Result<TransformPlan> {
    check_dims(size.0, size.1)?;
    let short = size.0.min(size.1);
    let target = rng.random_range(range.0..=range.1);
    let ratio = f64::from(target) / f64::from(short);
    let (w, h) = resized_size(size, ratio);
    Ok(TransformPlan {
        strategy: Strategy::Mst,
        pre_resize_ratio: ratio,
        crop_window: BBox::new(0.0, 0.0, f64::from(w), f64::from(h))?,
        ..TransformPlan::identity(size.0, size.1)?
    })
}

/// Random square crop of side `factor * short_side`, the factor drawn from
/// [`RSC_FACTORS`], placed uniformly at integer source offsets and resized to
/// `output_side` x `output_side`.
pub fn rsc_plan<R: Rng + ?Sized>(
    size: (u32, u32),
    output_side: u32,
    rng: &mut R,
) -> Result<TransformPlan> {
    check_dims(size.0, size.1)?;
    if output_side == 0 {
        return Err(Error::InvalidConfig("output_side must be positive".into()));
    }
    let factor = *RSC_FACTORS.choose(rng).expect("non-empty");
    let side = factor * f64::from(size.0.min(size.1));
    let max_x = (f64::from(size.0) - side).floor() as u32;
    let max_y = (f64::from(size.1) - side).floor() as u32;
    let x0 = f64::from(rng.random_range(0..=max_x));
    let y0 = f64::from(rng.random_range(0..=max_y));
    let n = f64::from(output_side);
    let ratio = n / side;
    Ok(TransformPlan {
        strategy: Strategy::Rsc,
        target_resize_ratio: ratio,
        crop_window: BBox::new(x0 * ratio, y0 * ratio, x0 * ratio + n, y0 * ratio + n)?,
        pad_to: Some((output_side, output_side)),
        ..TransformPlan::identity(size.0, size.1)?
    })
}

fn fallback<R: Rng + ?Sized>(
    size: (u32, u32),
    output_side: u32,
    rng: &mut R,
) -> Result<TransformPlan> {
    let mut plan = rsc_plan(size, output_side, rng)?;
    plan.fallback = true;
    Ok(plan)
}

/// Selective scale enhancement.
///
/// 1. resize so the short side is an integer in `pre_resize_range`;
/// 2. pick a face uniformly and measure its scale `fs`;
/// 3. draw `rn ~ U[0,1)`: `rn < tr_p5` targets p5, `rn <= tr_p5 + tr_p6`
///    targets p6, otherwise one of p2/p3/p4/p7 uniformly;
/// 4. draw a scale uniformly from that layer's range and resize by
///    `scale / fs`;
/// 5. crop `N x N` around the sampled face, zero-padding smaller images.
///
/// With no faces the plan falls back to [`rsc_plan`] and is flagged.
pub fn sse_plan<R: Rng + ?Sized>(
    size: (u32, u32),
    faces: &[BBox],
    cfg: &SseConfig,
    rng: &mut R,
) -> Result<TransformPlan> {
    cfg.validate()?;
    check_dims(size.0, size.1)?;
    if faces.is_empty() {
        return fallback(size, cfg.output_side, rng);
    }
    let pre = mst_plan_in(size, cfg.pre_resize_range, rng)?.pre_resize_ratio;
    let face_index = rng.random_range(0..faces.len());
    let fs = face_scale(&faces[face_index]) * pre;

    let rn: f64 = rng.random();
    let layer = if rn < cfg.tr_p5 {
        Layer::P5
    } else if rn <= cfg.tr_p5 + cfg.tr_p6 {
        Layer::P6
    } else {
        *OTHER_LAYERS.choose(rng).expect("non-empty")
    };
    let (start, end) = cfg.scale_ranges[&layer];
    let target = rng.random_range(start..end);
    let trr = target / fs;

    let scale = pre * trr;
    let resized = resized_size(size, scale);
    let (cx, cy) = faces[face_index].center();
    let crop = crop_window(
        rng,
        resized,
        cfg.output_side,
        Some((cx * scale, cy * scale)),
    );
    Ok(TransformPlan {
        version: PLAN_VERSION,
        strategy: Strategy::Sse,
        fallback: false,
        source_size: size,
        pre_resize_ratio: pre,
        target_layer: Some(layer),
        sampled_face_index: Some(face_index),
        sampled_face_scale: Some(fs),
        target_scale: Some(target),
        target_resize_ratio: trr,
        crop_window: crop,
        pad_to: Some((cfg.output_side, cfg.output_side)),
    })
}

/// Nearest entry of the sorted `scales` to `fs`; ties go to the smaller.
fn nearest_scale(scales: &[f64], fs: f64) -> usize {
    let mut best = 0;
    for (i, s) in scales.iter().enumerate() {
        if (s - fs).abs() < (scales[best] - fs).abs() {
            best = i;
        }
    }
    best
}

/// Data-anchor-sampling: pick a face, find the anchor scale nearest to its
/// scale, draw a target uniformly from the anchor scales up to that one and
/// resize by `target / fs` (bounded to `[1/r_th, r_th]` when configured),
/// then take a random `N x N` crop with zero padding.
pub fn das_plan<R: Rng + ?Sized>(
    size: (u32, u32),
    faces: &[BBox],
    cfg: &DasConfig,
    rng: &mut R,
) -> Result<TransformPlan> {
    cfg.validate()?;
    check_dims(size.0, size.1)?;
    if faces.is_empty() {
        return fallback(size, cfg.output_side, rng);
    }
    let face_index = rng.random_range(0..faces.len());
    let fs = face_scale(&faces[face_index]);
    let nearest = nearest_scale(&cfg.anchor_scales, fs);
    let target = *cfg.anchor_scales[..=nearest]
        .choose(rng)
        .expect("non-empty");
    let mut ratio = target / fs;
    if let Some(r_th) = cfg.r_th {
        ratio = ratio.clamp(1.0 / r_th, r_th);
    }
    let resized = resized_size(size, ratio);
    let crop = crop_window(rng, resized, cfg.output_side, None);
    Ok(TransformPlan {
        version: PLAN_VERSION,
        strategy: Strategy::Das,
        fallback: false,
        source_size: size,
        pre_resize_ratio: 1.0,
        target_layer: None,
        sampled_face_index: Some(face_index),
        sampled_face_scale: Some(fs),
        target_scale: Some(target),
        target_resize_ratio: ratio,
        crop_window: crop,
        pad_to: Some((cfg.output_side, cfg.output_side)),
    })
}
