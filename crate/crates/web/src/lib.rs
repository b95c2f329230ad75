//! Browser bindings for three small views of the `fsda` building blocks:
//! loss curves, a bilinear-fusion heatmap and a prototype decision field.
//!
//! The plain functions hold the logic and are tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use fsda::{build_prototypes, ce_loss, gce_loss, FusionConfig};
use ndarray::Array2;
use wasm_bindgen::prelude::*;

/// Samples the two-class losses at `points` evenly spaced true-class
/// probabilities in `(0, 1]`.
///
/// Returns `[p..., gce..., ce..., gce_weight...]`, each block `points` long.
/// `gce_weight` is `p^q`, the factor GCE puts on the CE logit gradient; it
/// is what keeps low-confidence (likely mislabeled) samples from dominating.
pub fn loss_curves(q: f64, points: usize) -> fsda::Result<Vec<f64>> {
    if points < 2 {
        return Err(fsda::Error::Config("need at least two points".into()));
    }
    let mut out = vec![0.0; 4 * points];
    for i in 0..points {
        let p = (i + 1) as f64 / points as f64;
        let probs = [p, 1.0 - p];
        out[i] = p;
        out[points + i] = gce_loss(&probs, 0, q)?;
        out[2 * points + i] = ce_loss(&probs, 0)?;
        out[3 * points + i] = p.powf(q);
    }
    Ok(out)
}

/// Fuses `x` and `y` and returns the result row-major as an
/// `x.len() × y.len()` grid, so the page can draw it as a heatmap.
pub fn fusion_grid(x: &[f64], y: &[f64], signed_sqrt: bool, l2_normalize: bool) -> fsda::Result<Vec<f64>> {
    let config = FusionConfig { signed_sqrt, l2_normalize, ..FusionConfig::default() };
    fsda::bilinear_fuse(x, y, &config)
}

/// Builds class prototypes from 2-D points (`xy` interleaved) and evaluates
/// them on a `size × size` grid covering `[-extent, extent]²`.
///
/// Each cell yields two numbers, the winning class and its probability.
/// Cells are emitted top row first, matching canvas pixel order.
pub fn prototype_field(
    xy: &[f64],
    labels: &[u32],
    class_count: usize,
    temperature: f64,
    size: usize,
    extent: f64,
) -> fsda::Result<Vec<f64>> {
    if xy.len() != 2 * labels.len() {
        return Err(fsda::Error::Dimension("need one label per point".into()));
    }
    if size == 0 || extent.is_nan() || extent <= 0.0 {
        return Err(fsda::Error::Config("grid size and extent must be positive".into()));
    }
    let features = Array2::from_shape_fn((labels.len(), 2), |(i, j)| xy[2 * i + j] as f32);
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let protos = build_prototypes(features.view(), &labels, class_count, temperature)?;

    let step = 2.0 * extent / size as f64;
    let mut out = Vec::with_capacity(2 * size * size);
    for row in 0..size {
        let y = extent - (row as f64 + 0.5) * step;
        for col in 0..size {
            let x = -extent + (col as f64 + 0.5) * step;
            let probs = protos.predict(&[x, y])?;
            let (best, p) =
                probs
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (c, p)| if p > acc.1 { (c, p) } else { acc });
            out.push(best as f64);
            out.push(p);
        }
    }
    Ok(out)
}

fn js(e: fsda::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = lossCurves)]
pub fn loss_curves_js(q: f64, points: usize) -> Result<Vec<f64>, JsError> {
    loss_curves(q, points).map_err(js)
}

#[wasm_bindgen(js_name = fusionGrid)]
pub fn fusion_grid_js(x: Vec<f64>, y: Vec<f64>, signed_sqrt: bool, l2_normalize: bool) -> Result<Vec<f64>, JsError> {
    fusion_grid(&x, &y, signed_sqrt, l2_normalize).map_err(js)
}

#[wasm_bindgen(js_name = prototypeField)]
pub fn prototype_field_js(
    xy: Vec<f64>,
    labels: Vec<u32>,
    class_count: usize,
    temperature: f64,
    size: usize,
    extent: f64,
) -> Result<Vec<f64>, JsError> {
    prototype_field(&xy, &labels, class_count, temperature, size, extent).map_err(js)
}
