//! Saliency and occlusion attribution maps.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{input_gradient, ScoreModel};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Saliency,
    Occlusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionParams {
    pub window: usize,
    pub stride: usize,
    pub fill_value: f64,
}

impl OcclusionParams {
    /// Window of an eighth of the side, half-window stride, mid-gray fill.
    pub fn for_resolution(resolution: usize) -> Self {
        let window = (resolution / 8).max(1);
        OcclusionParams {
            window,
            stride: (window / 2).max(1),
            fill_value: 0.5,
        }
    }

    /// Number of window positions along a side of length `n`.
    pub fn positions(&self, n: usize) -> usize {
        (n - self.window) / self.stride + 1
    }
}

/// The affine map from raw values to the `[0, 1]` view: `(v - min) / (max - min)`
/// after clamping negatives to 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    /// Raw per-pixel values. Occlusion drops may be negative here.
    pub values: Vec<f64>,
    pub method: Method,
    pub target_class: usize,
    pub normalization: Normalization,
    pub occlusion: Option<OcclusionParams>,
}

impl Heatmap {
    fn new(
        width: usize,
        height: usize,
        values: Vec<f64>,
        method: Method,
        target_class: usize,
        occlusion: Option<OcclusionParams>,
    ) -> Self {
        let (min, max) = values
            .iter()
            .map(|v| v.max(0.0))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        Heatmap {
            width,
            height,
            values,
            method,
            target_class,
            normalization: Normalization { min, max },
            occlusion,
        }
    }

    /// Values in `[0, 1]`; an all-equal map normalizes to zeros.
    pub fn normalized(&self) -> Vec<f64> {
        let Normalization { min, max } = self.normalization;
        let span = max - min;
        self.values
            .iter()
            .map(|v| {
                if span > 0.0 {
                    (v.max(0.0) - min) / span
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn argmax(&self) -> (usize, usize) {
        let i =
            self.values.iter().enumerate().fold(
                0,
                |best, (i, v)| if *v > self.values[best] { i } else { best },
            );
        (i % self.width, i / self.width)
    }

    pub fn save_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Channel-max of the absolute input gradient of the class score.
pub fn saliency_map(model: &dyn ScoreModel, image: &Image, target_class: usize) -> Result<Heatmap> {
    let g = input_gradient(model, image, target_class)?;
    let values = g
        .chunks_exact(3)
        .map(|p| p[0].abs().max(p[1].abs()).max(p[2].abs()))
        .collect();
    Ok(Heatmap::new(
        image.width(),
        image.height(),
        values,
        Method::Saliency,
        target_class,
        None,
    ))
}

/// Slides a filled window over the image and credits each covered pixel with
/// the mean drop in class score over the windows that cover it.
pub fn occlusion_map(
    model: &dyn ScoreModel,
    image: &Image,
    target_class: usize,
    params: OcclusionParams,
) -> Result<Heatmap> {
    let (w, h) = (image.width(), image.height());
    if params.window == 0 || params.window > w.min(h) {
        return Err(Error::validation(format!(
            "occlusion window {} must lie in 1..={}",
            params.window,
            w.min(h)
        )));
    }
    if params.stride == 0 {
        return Err(Error::validation("occlusion stride must be at least 1"));
    }
    let base = model.class_score(image, target_class)?;
    let (nx, ny) = (params.positions(w), params.positions(h));
    let positions: Vec<(usize, usize)> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i * params.stride, j * params.stride)))
        .collect();
    let drops = positions
        .par_iter()
        .map(|&(x0, y0)| {
            let mut occluded = image.clone();
            for y in y0..y0 + params.window {
                for x in x0..x0 + params.window {
                    occluded.set(x, y, [params.fill_value; 3]);
                }
            }
            Ok(base - model.class_score(&occluded, target_class)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut sum = vec![0.0; w * h];
    let mut count = vec![0u32; w * h];
    for (&(x0, y0), d) in positions.iter().zip(&drops) {
        for y in y0..y0 + params.window {
            for x in x0..x0 + params.window {
                sum[y * w + x] += d;
                count[y * w + x] += 1;
            }
        }
    }
    let values = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / f64::from(c) } else { 0.0 })
        .collect();
    Ok(Heatmap::new(
        w,
        h,
        values,
        Method::Occlusion,
        target_class,
        Some(params),
    ))
}

/// Peak opacity of the colormap layer.
pub const OVERLAY_ALPHA: f64 = 0.6;

fn hot(v: f64) -> [f64; 3] {
    [
        (3.0 * v).clamp(0.0, 1.0),
        (3.0 * v - 1.0).clamp(0.0, 1.0),
        (3.0 * v - 2.0).clamp(0.0, 1.0),
    ]
}

/// Colormap over the grayscale underlay, opacity proportional to the
/// normalized value. A zero map yields the plain grayscale underlay.
pub fn overlay(map: &Heatmap, underlay: &Image) -> Result<Image> {
    if underlay.width() != map.width || underlay.height() != map.height {
        return Err(Error::validation(format!(
            "heatmap is {}x{} but underlay is {}x{}",
            map.width,
            map.height,
            underlay.width(),
            underlay.height()
        )));
    }
    let gray = underlay.grayscale();
    let data = gray
        .iter()
        .zip(map.normalized())
        .flat_map(|(&g, v)| {
            let a = OVERLAY_ALPHA * v;
            hot(v).map(|c| g * (1.0 - a) + c * a)
        })
        .collect();
    Image::new(map.width, map.height, data)
}

/// Writes the overlay as an 8-bit RGB PNG.
pub fn render_heatmap(map: &Heatmap, underlay: &Image, path: impl AsRef<Path>) -> Result<()> {
    overlay(map, underlay)?.save_png(path)
}
