//! Consecutive-pair face swapping and the swap backends.
//!
//! A batch of `N` faces yields `N - 1` swaps: image `i` supplies the identity
//! (source) and image `i + 1` the scene (target).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{ExternalCommand, Scratch};
use crate::error::{Error, Result};
use crate::generator::{GeneratorSpec, SyntheticBatch};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapProvenance {
    pub source_index: usize,
    pub target_index: usize,
    pub backend_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwappedBatch {
    pub images: Vec<Image>,
    pub provenance: Vec<SwapProvenance>,
    pub parent_spec: GeneratorSpec,
}

/// Something that can put the face of `source` onto `target`.
pub trait SwapBackend: Send + Sync {
    fn id(&self) -> String;
    fn swap(&self, source: &Image, target: &Image) -> Result<Image>;
}

/// Swap every consecutive pair of `images`, preserving order.
pub fn pair_swap_images(
    images: &[Image],
    backend: &dyn SwapBackend,
) -> Result<(Vec<Image>, Vec<SwapProvenance>)> {
    if images.len() < 2 {
        return Err(Error::validation(format!(
            "pair swapping needs at least 2 images, got {}",
            images.len()
        )));
    }
    let id = backend.id();
    let swapped = images
        .par_windows(2)
        .enumerate()
        .map(|(i, pair)| {
            backend.swap(&pair[0], &pair[1]).map_err(|e| Error::Swap {
                pair: i,
                source_index: i,
                target_index: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let provenance = (0..images.len() - 1)
        .map(|i| SwapProvenance {
            source_index: i,
            target_index: i + 1,
            backend_id: id.clone(),
        })
        .collect();
    Ok((swapped, provenance))
}

pub fn pair_swap_batch(batch: &SyntheticBatch, backend: &dyn SwapBackend) -> Result<SwappedBatch> {
    let (images, provenance) = pair_swap_images(&batch.images, backend)?;
    Ok(SwappedBatch {
        images,
        provenance,
        parent_spec: batch.spec.clone(),
    })
}

/// Fixed central ellipse where toy faces live, with a linear alpha falloff
/// inside its rim.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceOval {
    pub cx: f64,
    pub cy: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    /// Width of the falloff band in pixels, measured along the x semi-axis.
    pub feather: f64,
}

pub const OVAL_SEMI_X: f64 = 0.30;
pub const OVAL_SEMI_Y: f64 = 0.40;
pub const OVAL_FEATHER: f64 = 0.08;

impl FaceOval {
    pub fn for_size(width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        FaceOval {
            cx: w / 2.0,
            cy: h / 2.0,
            semi_x: OVAL_SEMI_X * w,
            semi_y: OVAL_SEMI_Y * h,
            feather: OVAL_FEATHER * w,
        }
    }

    /// Normalised elliptical radius of pixel `(x, y)` (taken at its centre).
    pub fn radius(&self, x: usize, y: usize) -> f64 {
        let dx = (x as f64 + 0.5 - self.cx) / self.semi_x;
        let dy = (y as f64 + 0.5 - self.cy) / self.semi_y;
        (dx * dx + dy * dy).sqrt()
    }

    /// 1 deep inside, 0 on and outside the boundary.
    pub fn alpha(&self, x: usize, y: usize) -> f64 {
        feather_alpha(self.radius(x, y), self.feather / self.semi_x)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.radius(x, y) < 1.0
    }
}

fn feather_alpha(r: f64, band: f64) -> f64 {
    ((1.0 - r) / band).clamp(0.0, 1.0)
}

#[inline]
fn lerp_into(out: &mut Image, x: usize, y: usize, from: [f64; 3], to: [f64; 3], alpha: f64) {
    if alpha <= 0.0 {
        return;
    }
    let v = if alpha >= 1.0 {
        to
    } else {
        [
            from[0] + alpha * (to[0] - from[0]),
            from[1] + alpha * (to[1] - from[1]),
            from[2] + alpha * (to[2] - from[2]),
        ]
    };
    out.set(x, y, v);
}

fn check_shapes(source: &Image, target: &Image) -> Result<()> {
    if !source.same_shape(target) {
        return Err(Error::validation(format!(
            "source is {}x{} but target is {}x{}",
            source.width(),
            source.height(),
            target.width(),
            target.height()
        )));
    }
    Ok(())
}

/// Pastes the source's face oval onto the target through a feathered mask.
/// Pixels outside the oval are copied from the target untouched.
pub fn reference_swap_blend(source: &Image, target: &Image) -> Result<Image> {
    check_shapes(source, target)?;
    let oval = FaceOval::for_size(target.width(), target.height());
    let mut out = target.clone();
    for y in 0..target.height() {
        for x in 0..target.width() {
            lerp_into(
                &mut out,
                x,
                y,
                target.get(x, y),
                source.get(x, y),
                oval.alpha(x, y),
            );
        }
    }
    Ok(out)
}

/// Feature sub-regions pasted by the recolor backend, as
/// `(dx, dy, semi_x, semi_y)` fractions of the image size from its centre.
const FEATURE_REGIONS: [(f64, f64, f64, f64); 3] = [
    (-0.11, -0.072, 0.085, 0.05),
    (0.11, -0.072, 0.085, 0.05),
    (0.0, 0.20, 0.13, 0.05),
];
const FEATURE_BAND: f64 = 0.35;

fn oval_moments(img: &Image, oval: &FaceOval) -> ([f64; 3], [f64; 3]) {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if oval.contains(x, y) {
                let p = img.get(x, y);
                for c in 0..3 {
                    sum[c] += p[c];
                }
                n += 1;
            }
        }
    }
    let n = n.max(1) as f64;
    let mean = sum.map(|s| s / n);
    let mut var = [0.0; 3];
    for y in 0..img.height() {
        for x in 0..img.width() {
            if oval.contains(x, y) {
                let p = img.get(x, y);
                for c in 0..3 {
                    var[c] += (p[c] - mean[c]).powi(2);
                }
            }
        }
    }
    (mean, var.map(|v| (v / n).sqrt()))
}

/// Matches the target face's per-channel mean and spread to the source's,
/// then pastes the source's eyes and mouth with feathered masks.
///
/// A flat target face cannot be rescaled, so only its mean is shifted. A flat
/// source face makes the whole target face that flat colour.
pub fn reference_swap_recolor(source: &Image, target: &Image) -> Result<Image> {
    check_shapes(source, target)?;
    let (w, h) = (target.width(), target.height());
    let oval = FaceOval::for_size(w, h);
    let (mu_s, sd_s) = oval_moments(source, &oval);
    let (mu_t, sd_t) = oval_moments(target, &oval);
    let mut out = target.clone();
    for y in 0..h {
        for x in 0..w {
            let alpha = oval.alpha(x, y);
            if alpha <= 0.0 {
                continue;
            }
            let t = target.get(x, y);
            let mut matched = [0.0; 3];
            // Written as an offset from `t` so that source == target adds
            // exact zeros and the identity swap is bit-exact.
            for c in 0..3 {
                let shift = mu_s[c] - mu_t[c];
                let v = if sd_t[c] > 1e-12 {
                    t[c] + shift + (t[c] - mu_t[c]) * (sd_s[c] / sd_t[c] - 1.0)
                } else {
                    t[c] + shift
                };
                matched[c] = v.clamp(0.0, 1.0);
            }
            lerp_into(&mut out, x, y, t, matched, alpha);
        }
    }
    let (fw, fh) = (w as f64, h as f64);
    for (dx, dy, sx, sy) in FEATURE_REGIONS {
        let region = FaceOval {
            cx: fw / 2.0 + dx * fw,
            cy: fh / 2.0 + dy * fh,
            semi_x: sx * fw,
            semi_y: sy * fh,
            feather: FEATURE_BAND * sx * fw,
        };
        for y in 0..h {
            for x in 0..w {
                let beta = region.alpha(x, y);
                let cur = out.get(x, y);
                lerp_into(&mut out, x, y, cur, source.get(x, y), beta);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlendSwap;

impl SwapBackend for BlendSwap {
    fn id(&self) -> String {
        "blend".into()
    }

    fn swap(&self, source: &Image, target: &Image) -> Result<Image> {
        reference_swap_blend(source, target)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RecolorSwap;

impl SwapBackend for RecolorSwap {
    fn id(&self) -> String {
        "recolor".into()
    }

    fn swap(&self, source: &Image, target: &Image) -> Result<Image> {
        reference_swap_recolor(source, target)
    }
}

/// A swapper behind a subprocess, invoked as
/// `<cmd> --source s.png --target t.png --out o.png`.
pub struct ExternalSwapBackend {
    command: ExternalCommand,
}

impl ExternalSwapBackend {
    pub fn new(command: ExternalCommand) -> Self {
        ExternalSwapBackend { command }
    }
}

impl SwapBackend for ExternalSwapBackend {
    fn id(&self) -> String {
        self.command.identity()
    }

    fn swap(&self, source: &Image, target: &Image) -> Result<Image> {
        check_shapes(source, target)?;
        let scratch = Scratch::new("swap")?;
        let (s, t, o) = (
            scratch.path().join("source.png"),
            scratch.path().join("target.png"),
            scratch.path().join("swapped.png"),
        );
        source.save_png(&s)?;
        target.save_png(&t)?;
        self.command.run(&[
            ("source", s.display().to_string()),
            ("target", t.display().to_string()),
            ("out", o.display().to_string()),
        ])?;
        let img = Image::load_png(&o).map_err(|e| Error::Adapter {
            adapter: self.id(),
            message: e.to_string(),
        })?;
        if !img.same_shape(target) {
            return Err(Error::Adapter {
                adapter: self.id(),
                message: format!("output is {}x{}", img.width(), img.height()),
            });
        }
        Ok(img)
    }
}

/// Resolve `blend`, `recolor` or `ext:<command>`.
pub fn backend_from_name(name: &str) -> Result<Box<dyn SwapBackend>> {
    match name {
        "blend" => Ok(Box::new(BlendSwap)),
        "recolor" => Ok(Box::new(RecolorSwap)),
        other => match other.strip_prefix("ext:") {
            Some(cmd) => Ok(Box::new(ExternalSwapBackend::new(
                ExternalCommand::resolve(cmd)?,
            ))),
            None => Err(Error::config(format!(
                "unknown swap backend `{other}` (expected blend, recolor or ext:<command>)"
            ))),
        },
    }
}
