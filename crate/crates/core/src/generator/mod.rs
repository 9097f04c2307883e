//! Reproducible batches of synthetic faces.

pub mod toy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{ExternalCommand, Scratch};
use crate::bias::DemographicProfile;
use crate::error::{Error, Result};
use crate::image::Image;

pub use toy::{toy_render_face, BackgroundStyle, FaceParams};

/// Mean and standard deviation of the truncation distribution.
pub const TRUNCATION_MEAN: f64 = 0.5;
pub const TRUNCATION_STD: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub batch_seed: u64,
    pub truncation_psi: f64,
    pub batch_size: usize,
    pub resolution: usize,
}

impl GeneratorSpec {
    pub fn new(batch_seed: u64, truncation_psi: f64, batch_size: usize, resolution: usize) -> Self {
        GeneratorSpec {
            batch_seed,
            truncation_psi,
            batch_size,
            resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.truncation_psi) {
            return Err(Error::validation(format!(
                "truncation psi {} outside [0, 1]",
                self.truncation_psi
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be positive"));
        }
        if self.resolution == 0 {
            return Err(Error::validation("resolution must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBatch {
    pub images: Vec<Image>,
    pub spec: GeneratorSpec,
    /// Present only when the generator knows the ground truth (toy renderer).
    pub ground_truth_demographics: Option<Vec<DemographicProfile>>,
    pub generator_id: String,
}

/// Rendered images plus optional ground-truth profiles.
pub type Rendered = (Vec<Image>, Option<Vec<DemographicProfile>>);

/// A source of synthetic faces.
pub trait FaceGenerator: Send + Sync {
    /// Identity string recorded in run manifests.
    fn id(&self) -> String;

    fn supports_resolution(&self, resolution: usize) -> bool;

    /// Render `spec.batch_size` images. Called only with validated specs.
    fn render(&self, spec: &GeneratorSpec) -> Result<Rendered>;
}

/// Draw from a normal(0.5, 0.25) restricted to `[0, 1]` by rejection.
pub fn sample_truncation<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let normal = Normal::new(TRUNCATION_MEAN, TRUNCATION_STD).unwrap();
    loop {
        let v = normal.sample(rng);
        if (0.0..=1.0).contains(&v) {
            return v;
        }
    }
}

/// Generate one batch. Deterministic in `(spec, generator)`.
pub fn generate_batch(
    spec: &GeneratorSpec,
    generator: &dyn FaceGenerator,
) -> Result<SyntheticBatch> {
    spec.validate()?;
    if !generator.supports_resolution(spec.resolution) {
        return Err(Error::config(format!(
            "generator `{}` does not support resolution {}",
            generator.id(),
            spec.resolution
        )));
    }
    let (images, demographics) = generator.render(spec)?;
    if images.len() != spec.batch_size {
        return Err(Error::Adapter {
            adapter: generator.id(),
            message: format!(
                "returned {} images, expected {}",
                images.len(),
                spec.batch_size
            ),
        });
    }
    for (i, img) in images.iter().enumerate() {
        if img.width() != spec.resolution || img.height() != spec.resolution {
            return Err(Error::Adapter {
                adapter: generator.id(),
                message: format!("image {i} is {}x{}", img.width(), img.height()),
            });
        }
        if !img.in_unit_range() {
            return Err(Error::Adapter {
                adapter: generator.id(),
                message: format!("image {i} has values outside [0, 1]"),
            });
        }
    }
    Ok(SyntheticBatch {
        images,
        spec: spec.clone(),
        ground_truth_demographics: demographics,
        generator_id: generator.id(),
    })
}

/// The built-in procedural generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyGenerator {
    pub background: BackgroundStyle,
}

impl ToyGenerator {
    pub fn new() -> Self {
        ToyGenerator {
            background: BackgroundStyle::Stripes,
        }
    }

    /// Same faces, different background texture family.
    pub fn shifted() -> Self {
        ToyGenerator {
            background: BackgroundStyle::Checker,
        }
    }

    /// Face parameters for a batch, drawn sequentially from the batch seed.
    pub fn batch_params(&self, spec: &GeneratorSpec) -> Vec<FaceParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.batch_seed);
        (0..spec.batch_size)
            .map(|_| FaceParams::sample(&mut rng, spec.truncation_psi, self.background))
            .collect()
    }
}

impl Default for ToyGenerator {
    fn default() -> Self {
        ToyGenerator::new()
    }
}

impl FaceGenerator for ToyGenerator {
    fn id(&self) -> String {
        match self.background {
            BackgroundStyle::Stripes => "toy".into(),
            BackgroundStyle::Checker => "toy-shifted".into(),
        }
    }

    fn supports_resolution(&self, resolution: usize) -> bool {
        (toy::MIN_RESOLUTION..=toy::MAX_RESOLUTION).contains(&resolution)
    }

    fn render(&self, spec: &GeneratorSpec) -> Result<Rendered> {
        let rendered = self
            .batch_params(spec)
            .par_iter()
            .map(|p| toy_render_face(p, spec.resolution))
            .collect::<Result<Vec<_>>>()?;
        let (images, profiles) = rendered.into_iter().unzip();
        Ok((images, Some(profiles)))
    }
}

/// Balanced toy collection: ethnicities cycle through all six tones.
pub fn toy_balanced_collection(
    seed: u64,
    count: usize,
    resolution: usize,
    background: BackgroundStyle,
) -> Result<(Vec<Image>, Vec<DemographicProfile>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<FaceParams> = (0..count)
        .map(|i| {
            let psi = sample_truncation(&mut rng);
            FaceParams::sample_with_tone(&mut rng, psi, background, i % toy::SKIN_TONES.len())
        })
        .collect();
    let rendered = params
        .par_iter()
        .map(|p| toy_render_face(p, resolution))
        .collect::<Result<Vec<_>>>()?;
    Ok(rendered.into_iter().unzip())
}

/// A pretrained generator behind a subprocess. Invoked as
/// `<cmd> --seed S --psi P --count N --resolution R --out DIR`; must write
/// `N` PNG files into `DIR`, consumed in lexicographic filename order.
pub struct ExternalGenerator {
    command: ExternalCommand,
    resolutions: Option<Vec<usize>>,
}

impl ExternalGenerator {
    pub fn new(command: ExternalCommand) -> Self {
        ExternalGenerator {
            command,
            resolutions: None,
        }
    }

    /// Restrict the resolutions the adapter is allowed to serve.
    pub fn with_resolutions(mut self, resolutions: Vec<usize>) -> Self {
        self.resolutions = Some(resolutions);
        self
    }
}

impl FaceGenerator for ExternalGenerator {
    fn id(&self) -> String {
        self.command.identity()
    }

    fn supports_resolution(&self, resolution: usize) -> bool {
        self.resolutions
            .as_ref()
            .is_none_or(|r| r.contains(&resolution))
    }

    fn render(&self, spec: &GeneratorSpec) -> Result<Rendered> {
        let scratch = Scratch::new("gen")?;
        self.command.run(&[
            ("seed", spec.batch_seed.to_string()),
            ("psi", spec.truncation_psi.to_string()),
            ("count", spec.batch_size.to_string()),
            ("resolution", spec.resolution.to_string()),
            ("out", scratch.path().display().to_string()),
        ])?;
        let mut files: Vec<_> = std::fs::read_dir(scratch.path())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        let images = files
            .iter()
            .map(Image::load_png)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Adapter {
                adapter: self.id(),
                message: e.to_string(),
            })?;
        Ok((images, None))
    }
}

/// Resolve `toy`, `toy-shifted` or `ext:<command>`.
pub fn generator_from_name(name: &str) -> Result<Box<dyn FaceGenerator>> {
    match name {
        "toy" => Ok(Box::new(ToyGenerator::new())),
        "toy-shifted" => Ok(Box::new(ToyGenerator::shifted())),
        other => match other.strip_prefix("ext:") {
            Some(cmd) => Ok(Box::new(ExternalGenerator::new(ExternalCommand::resolve(
                cmd,
            )?))),
            None => Err(Error::config(format!(
                "unknown generator `{other}` (expected toy, toy-shifted or ext:<command>)"
            ))),
        },
    }
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Infinite stream of generator specs for training: a fresh batch seed per
/// batch and a truncation value redrawn per batch.
#[derive(Clone, Debug)]
pub struct SpecStream {
    data_seed: u64,
    index: u64,
    psi_rng: ChaCha8Rng,
    batch_size: usize,
    resolution: usize,
}

impl SpecStream {
    pub fn new(data_seed: u64, batch_size: usize, resolution: usize) -> Self {
        SpecStream {
            data_seed,
            index: 0,
            psi_rng: ChaCha8Rng::seed_from_u64(data_seed),
            batch_size,
            resolution,
        }
    }

    /// Batch seed of the `k`-th batch. Injective in `k`.
    pub fn batch_seed(data_seed: u64, k: u64) -> u64 {
        mix64(mix64(data_seed) ^ k)
    }
}

impl Iterator for SpecStream {
    type Item = GeneratorSpec;

    fn next(&mut self) -> Option<GeneratorSpec> {
        let seed = SpecStream::batch_seed(self.data_seed, self.index);
        self.index += 1;
        let psi = sample_truncation(&mut self.psi_rng);
        Some(GeneratorSpec::new(
            seed,
            psi,
            self.batch_size,
            self.resolution,
        ))
    }
}
