//! Procedural stand-in for a pretrained face generator.
//!
//! A toy face is a skin-toned oval with a dark contour, two eyes, a nose, a
//! mouth and a number of forehead lines, over a textured background. The face
//! sits near the centre of the frame with a small framing offset, so a swap
//! rarely lines the source contour up with the target's.
//! Categorical parameters encode the ground-truth demographic profile:
//!
//! | parameter          | profile field | mapping                                   |
//! |--------------------|---------------|-------------------------------------------|
//! | `skin_tone` 0..=5  | ethnicity     | white, asian, indian, black, latino_hispanic, middle_eastern |
//! | `face_band` 0..=1  | gender        | 0 = female (narrow oval), 1 = male (wide oval) |
//! | `wrinkles` 0..=11  | age bucket    | one forehead line per decade              |
//!
//! Continuous jitters live in `[-1, 1]` and are pre-scaled by the truncation
//! value at sampling time, so `psi = 0` yields the "average" face of each
//! category.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bias::{DemographicProfile, Ethnicity, Gender, MAX_AGE_BUCKET};
use crate::error::{Error, Result};
use crate::image::Image;

/// Base RGB skin tone per `skin_tone` index.
pub const SKIN_TONES: [[f64; 3]; 6] = [
    [0.96, 0.80, 0.69],
    [0.93, 0.76, 0.58],
    [0.78, 0.57, 0.42],
    [0.42, 0.28, 0.20],
    [0.86, 0.64, 0.47],
    [0.80, 0.60, 0.50],
];

pub const MIN_RESOLUTION: usize = 16;
pub const MAX_RESOLUTION: usize = 1024;

/// Largest framing offset of the face centre, as a fraction of the side.
pub const MAX_OFFSET: f64 = 0.05;

/// Background texture family. `Stripes` is the training domain; `Checker`
/// is the shifted domain used for fine-tuning experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundStyle {
    Stripes,
    Checker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub skin_tone: usize,
    pub face_band: usize,
    pub wrinkles: u8,
    pub tone_jitter: f64,
    pub shape_jitter: f64,
    pub eye_jitter: f64,
    pub mouth_jitter: f64,
    pub background: BackgroundStyle,
    /// In `[0, 1)`.
    pub background_hue: f64,
    /// In `[0, 1)`, fraction of a half turn.
    pub background_angle: f64,
    pub background_jitter: f64,
    /// Framing offset of the face centre, in `[-1, 1]` per axis.
    pub offset: [f64; 2],
    pub noise_seed: u64,
}

impl FaceParams {
    /// Draws a face. Ages are sampled from buckets 1..=8.
    pub fn sample<R: Rng>(rng: &mut R, psi: f64, background: BackgroundStyle) -> Self {
        let skin_tone = rng.random_range(0..6);
        FaceParams::sample_with_tone(rng, psi, background, skin_tone)
    }

    pub fn sample_with_tone<R: Rng>(
        rng: &mut R,
        psi: f64,
        background: BackgroundStyle,
        skin_tone: usize,
    ) -> Self {
        let jitter = |rng: &mut R| psi * rng.random_range(-1.0..=1.0);
        let face_band = rng.random_range(0..2);
        let wrinkles = rng.random_range(1..=8u8);
        FaceParams {
            skin_tone,
            face_band,
            wrinkles,
            tone_jitter: jitter(rng),
            shape_jitter: jitter(rng),
            eye_jitter: jitter(rng),
            mouth_jitter: jitter(rng),
            background,
            background_hue: rng.random_range(0.0..1.0),
            background_angle: rng.random_range(0.0..1.0),
            background_jitter: rng.random_range(-1.0..=1.0),
            offset: [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)],
            noise_seed: rng.random(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (-1.0..=1.0).contains(&v);
        if self.skin_tone >= SKIN_TONES.len() {
            return Err(Error::validation(format!(
                "skin tone {} outside 0..=5",
                self.skin_tone
            )));
        }
        if self.face_band > 1 {
            return Err(Error::validation(format!(
                "face band {} outside 0..=1",
                self.face_band
            )));
        }
        if self.wrinkles > MAX_AGE_BUCKET {
            return Err(Error::validation(format!(
                "wrinkle count {} outside 0..=11",
                self.wrinkles
            )));
        }
        if ![
            self.tone_jitter,
            self.shape_jitter,
            self.eye_jitter,
            self.mouth_jitter,
            self.background_jitter,
            self.offset[0],
            self.offset[1],
        ]
        .into_iter()
        .all(unit)
        {
            return Err(Error::validation("face jitters must lie in [-1, 1]"));
        }
        if !(0.0..1.0).contains(&self.background_hue)
            || !(0.0..1.0).contains(&self.background_angle)
        {
            return Err(Error::validation(
                "background hue and angle must lie in [0, 1)",
            ));
        }
        Ok(())
    }

    pub fn profile(&self) -> DemographicProfile {
        DemographicProfile {
            ethnicity: Ethnicity::ALL[self.skin_tone],
            gender: if self.face_band == 0 {
                Gender::Female
            } else {
                Gender::Male
            },
            age_bucket: self.wrinkles,
        }
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn scale(a: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

fn background(p: &FaceParams, x: f64, y: f64, r: f64) -> [f64; 3] {
    match p.background {
        BackgroundStyle::Stripes => {
            let a = hsv(p.background_hue, 0.35, 0.80);
            let b = hsv(p.background_hue + 0.08, 0.45, 0.55);
            let theta = p.background_angle * std::f64::consts::PI;
            let freq = 3.0 + 1.5 * p.background_jitter;
            let u = (x * theta.cos() + y * theta.sin()) / r;
            let t = 0.5 + 0.5 * (std::f64::consts::TAU * freq * u).sin();
            mix(a, b, t)
        }
        BackgroundStyle::Checker => {
            let a = hsv(p.background_hue, 0.75, 0.95);
            let b = hsv(p.background_hue + 0.5, 0.70, 0.30);
            let cell = r / (6.0 + 2.0 * p.background_jitter);
            let parity = ((x / cell).floor() + (y / cell).floor()) as i64 & 1;
            let base = if parity == 0 { a } else { b };
            let d = ((x - r / 2.0).powi(2) + (y - r / 2.0).powi(2)).sqrt() / r;
            scale(base, 1.0 - 0.35 * d)
        }
    }
}

#[inline]
fn in_ellipse(x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64) -> bool {
    let dx = (x - cx) / a;
    let dy = (y - cy) / b;
    dx * dx + dy * dy <= 1.0
}

/// Renders one face at `resolution x resolution`.
pub fn toy_render_face(
    params: &FaceParams,
    resolution: usize,
) -> Result<(Image, DemographicProfile)> {
    params.validate()?;
    if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&resolution) {
        return Err(Error::config(format!(
            "toy renderer supports resolutions {MIN_RESOLUTION}..={MAX_RESOLUTION}, got {resolution}"
        )));
    }
    let r = resolution as f64;
    let (cx, cy) = (
        r * (0.5 + MAX_OFFSET * params.offset[0]),
        r * (0.5 + MAX_OFFSET * params.offset[1]),
    );
    let a = r * (if params.face_band == 0 { 0.27 } else { 0.32 } + 0.02 * params.shape_jitter);
    let b = r * (0.40 + 0.015 * params.shape_jitter);
    let skin = scale(
        SKIN_TONES[params.skin_tone],
        1.0 + 0.05 * params.tone_jitter,
    );

    let eye_dx = (0.38 + 0.06 * params.eye_jitter) * a;
    let eye_y = cy - 0.18 * b;
    let (sclera_a, sclera_b, iris_r) = (0.16 * a, 0.07 * b, 0.06 * b);
    let mouth_y = cy + 0.5 * b;
    let (mouth_a, mouth_b) = ((0.35 + 0.08 * params.mouth_jitter) * a, 0.07 * b);
    let line_gap = 0.4 * b / 12.0;
    let outline = (0.025 * r).max(1.0);

    let mut noise = ChaCha8Rng::seed_from_u64(params.noise_seed);
    let mut data = Vec::with_capacity(resolution * resolution * 3);
    for py in 0..resolution {
        for px in 0..resolution {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut rgb = if in_ellipse(x, y, cx, cy, a, b) {
                let mut s = scale(skin, 1.0 - 0.08 * (y - cy) / b);
                // nose
                let t = (y - (cy - 0.1 * b)) / (0.3 * b);
                if (0.0..=1.0).contains(&t) && (x - cx).abs() < 0.10 * a * t {
                    s = scale(s, 0.85);
                }
                // forehead lines, one per decade
                let above = cy - 0.5 * b - y;
                if above > 0.0 && (x - cx).abs() < 0.5 * a {
                    let j = (above / line_gap).floor();
                    if j < f64::from(params.wrinkles) && (above / line_gap - j - 0.5).abs() < 0.3 {
                        s = scale(s, 0.82);
                    }
                }
                for side in [-1.0, 1.0] {
                    let ex = cx + side * eye_dx;
                    if in_ellipse(x, y, ex, eye_y, sclera_a, sclera_b) {
                        s = [0.95, 0.95, 0.93];
                        if in_ellipse(x, y, ex, eye_y, iris_r, iris_r) {
                            s = [0.18, 0.12, 0.08];
                        }
                    }
                }
                if in_ellipse(x, y, cx, mouth_y, mouth_a, mouth_b) {
                    s = [0.70, 0.25, 0.28];
                }
                if !in_ellipse(x, y, cx, cy, a - outline, b - outline) {
                    s = scale(skin, 0.45);
                }
                s
            } else {
                background(params, x, y, r)
            };
            for v in &mut rgb {
                *v = (*v + noise.random_range(-0.02..0.02)).clamp(0.0, 1.0);
            }
            data.extend_from_slice(&rgb);
        }
    }
    Ok((Image::new(resolution, resolution, data)?, params.profile()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> FaceParams {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        FaceParams::sample(&mut rng, 0.5, BackgroundStyle::Stripes)
    }

    #[test]
    fn rendering_is_deterministic() {
        let p = params();
        assert_eq!(
            toy_render_face(&p, 32).unwrap(),
            toy_render_face(&p, 32).unwrap()
        );
    }

    #[test]
    fn tone_three_maps_to_black() {
        let mut p = params();
        p.skin_tone = 3;
        assert_eq!(
            toy_render_face(&p, 32).unwrap().1.ethnicity,
            Ethnicity::Black
        );
        p.face_band = 0;
        p.wrinkles = 7;
        let prof = p.profile();
        assert_eq!((prof.gender, prof.age_bucket), (Gender::Female, 7));
    }

    #[test]
    fn out_of_range_params_rejected() {
        let mut p = params();
        p.skin_tone = 6;
        assert_eq!(toy_render_face(&p, 32).unwrap_err().kind(), "validation");
        let mut p = params();
        p.tone_jitter = 1.5;
        assert!(toy_render_face(&p, 32).is_err());
        let mut p = params();
        p.wrinkles = 12;
        assert!(toy_render_face(&p, 32).is_err());
        assert_eq!(toy_render_face(&params(), 8).unwrap_err().kind(), "config");
    }

    #[test]
    fn all_ethnicities_occur_in_a_thousand_renders() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut seen = [0usize; 6];
        for _ in 0..1000 {
            let p = FaceParams::sample(&mut rng, 0.7, BackgroundStyle::Stripes);
            let (_, prof) = toy_render_face(&p, 16).unwrap();
            seen[prof.ethnicity.index()] += 1;
        }
        assert!(seen.iter().all(|&n| n > 0), "{seen:?}");
    }

    #[test]
    fn center_is_skin_and_corner_is_background() {
        let mut p = params();
        p.skin_tone = 0;
        let (img, _) = toy_render_face(&p, 64).unwrap();
        let centre = img.get(32, 40);
        let skin = SKIN_TONES[0];
        assert!((centre[0] - skin[0]).abs() < 0.15, "{centre:?}");
        assert!(img.in_unit_range());
    }
}
