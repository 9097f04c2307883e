//! Binary swapped-vs-unswapped detector: training, fine-tuning and queries.
//!
//! Every training step takes `N` unswapped images labelled real and their
//! `N - 1` consecutive-pair swaps labelled fake, and applies one SGD step on
//! the mean cross-entropy over the `2N - 1` examples.

pub mod checkpoint;
pub mod net;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{generate_batch, FaceGenerator, GeneratorSpec};
use crate::image::Image;
use crate::label::{Class, FAKE_CLASS, REAL_CLASS};
use crate::swapper::{pair_swap_images, SwapBackend};

pub use net::{Activation, Architecture, ArchitectureRegistry, Gradients, TinyCnn};

/// Batch size of a full-scale run.
pub const FULL_SCALE_BATCH_SIZE: usize = 12;
/// Steps per epoch of a full-scale run.
pub const FULL_SCALE_STEPS_PER_EPOCH: usize = 2000;

/// Missing fields deserialize to their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub architecture_id: String,
    pub input_resolution: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    /// Zero is allowed and leaves the model at its starting point.
    pub epochs: usize,
    pub optimizer_seed: u64,
    /// Heavy-ball momentum for SGD; 0 is plain SGD.
    pub momentum: f64,
    pub optimizer: OptimizerKind,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// SGD with optional heavy-ball momentum.
    Sgd,
    /// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    #[default]
    Adam,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            architecture_id: "tiny-cnn".into(),
            input_resolution: 64,
            learning_rate: 1e-2,
            batch_size: FULL_SCALE_BATCH_SIZE,
            steps_per_epoch: FULL_SCALE_STEPS_PER_EPOCH,
            epochs: 1,
            optimizer_seed: 0,
            momentum: 0.0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// Batch size of the pinned desk-scale toy run.
pub const TOY_BATCH_SIZE: usize = 48;
/// Step count of the pinned desk-scale toy run.
pub const TOY_STEPS: usize = 300;
/// Step count of the pinned fine-tune.
pub const TOY_FINETUNE_STEPS: usize = 100;
/// Learning rate of the pinned fine-tune.
pub const TOY_FINETUNE_LR: f64 = 3e-3;

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_resolution == 0 {
            return Err(Error::config("input_resolution must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be a positive number"));
        }
        if self.batch_size < 2 {
            return Err(Error::config(
                "batch_size must be at least 2 to form swap pairs",
            ));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::config("steps_per_epoch must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        Ok(())
    }

    /// The pinned desk-scale run: tiny-cnn at 64x64, 300 Adam steps of 48
    /// real faces and their 47 swaps each.
    pub fn toy_reference() -> Self {
        DetectorConfig {
            batch_size: TOY_BATCH_SIZE,
            steps_per_epoch: TOY_STEPS,
            ..DetectorConfig::default()
        }
    }

    /// The pinned fine-tune that follows [`DetectorConfig::toy_reference`]:
    /// 100 Adam steps at a lower rate.
    pub fn toy_finetune() -> Self {
        DetectorConfig {
            learning_rate: TOY_FINETUNE_LR,
            steps_per_epoch: TOY_FINETUNE_STEPS,
            ..DetectorConfig::toy_reference()
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainType {
    RealTrained,
    SyntheticTrained,
    Finetuned,
}

impl TrainType {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainType::RealTrained => "real_trained",
            TrainType::SyntheticTrained => "synthetic_trained",
            TrainType::Finetuned => "finetuned",
        }
    }
}

impl fmt::Display for TrainType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real_trained" => Ok(TrainType::RealTrained),
            "synthetic_trained" => Ok(TrainType::SyntheticTrained),
            "finetuned" => Ok(TrainType::Finetuned),
            other => Err(Error::validation(format!("unknown train type `{other}`"))),
        }
    }
}

/// Output indices of the two classes, stored with every model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelConvention {
    pub real_class: usize,
    pub fake_class: usize,
}

impl Default for LabelConvention {
    fn default() -> Self {
        LabelConvention {
            real_class: REAL_CLASS,
            fake_class: FAKE_CLASS,
        }
    }
}

/// One optimisation step as it happened.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy on the step's examples before the update.
    pub accuracy: f64,
    pub n_real: usize,
    pub n_fake: usize,
    pub batch_seed: Option<u64>,
    pub truncation_psi: Option<f64>,
}

/// Header of the per-step loss history CSV.
pub const HISTORY_HEADER: [&str; 8] = [
    "step",
    "epoch",
    "loss",
    "accuracy",
    "n_real",
    "n_fake",
    "batch_seed",
    "truncation_psi",
];

/// One row per recorded step. Absent seeds and truncation values (for
/// collection-based training) are empty cells.
pub fn write_history_csv<W: std::io::Write>(out: W, history: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTORY_HEADER)?;
    for r in history {
        w.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            r.loss.to_string(),
            r.accuracy.to_string(),
            r.n_real.to_string(),
            r.n_fake.to_string(),
            r.batch_seed.map(|s| s.to_string()).unwrap_or_default(),
            r.truncation_psi.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub image: Image,
    pub label: Class,
}

#[derive(Clone)]
pub struct DetectorModel {
    architecture: Arc<dyn Architecture>,
    pub input_resolution: usize,
    pub parameters: Vec<f64>,
    pub config: DetectorConfig,
    pub history: Vec<StepRecord>,
    pub train_type: TrainType,
    /// Backend id used to create the training fakes.
    pub train_swap: String,
    pub label_convention: LabelConvention,
}

impl fmt::Debug for DetectorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DetectorModel")
            .field("architecture", &self.architecture.id())
            .field("input_resolution", &self.input_resolution)
            .field("parameters", &self.parameters.len())
            .field("steps", &self.history.len())
            .field("train_type", &self.train_type)
            .field("train_swap", &self.train_swap)
            .finish()
    }
}

impl DetectorModel {
    /// Seeded, untrained model for `config`.
    pub fn initialize(config: &DetectorConfig, registry: &ArchitectureRegistry) -> Result<Self> {
        config.validate()?;
        let architecture = registry.get(&config.architecture_id)?;
        let parameters = architecture.init(config.optimizer_seed);
        Ok(DetectorModel {
            architecture,
            input_resolution: config.input_resolution,
            parameters,
            config: config.clone(),
            history: Vec::new(),
            train_type: TrainType::SyntheticTrained,
            train_swap: String::new(),
            label_convention: LabelConvention::default(),
        })
    }

    pub(crate) fn from_parts(
        architecture: Arc<dyn Architecture>,
        parameters: Vec<f64>,
        config: DetectorConfig,
        history: Vec<StepRecord>,
        train_type: TrainType,
        train_swap: String,
    ) -> Result<Self> {
        if parameters.len() != architecture.parameter_count() {
            return Err(Error::validation(format!(
                "architecture `{}` expects {} parameters, got {}",
                architecture.id(),
                architecture.parameter_count(),
                parameters.len()
            )));
        }
        Ok(DetectorModel {
            architecture,
            input_resolution: config.input_resolution,
            parameters,
            config,
            history,
            train_type,
            train_swap,
            label_convention: LabelConvention::default(),
        })
    }

    pub fn architecture_id(&self) -> &str {
        self.architecture.id()
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        if image.width() != self.input_resolution || image.height() != self.input_resolution {
            return Err(Error::validation(format!(
                "model expects {r}x{r} input, got {}x{}",
                image.width(),
                image.height(),
                r = self.input_resolution
            )));
        }
        Ok(())
    }

    pub fn logits(&self, image: &Image) -> Result<[f64; 2]> {
        self.check_input(image)?;
        Ok(self.architecture.logits(&self.parameters, image))
    }

    /// `(p_real, p_fake)`.
    pub fn predict(&self, image: &Image) -> Result<[f64; 2]> {
        Ok(softmax(self.logits(image)?))
    }

    /// Argmax label; exact ties go to fake.
    pub fn classify(&self, image: &Image) -> Result<Class> {
        Ok(Class::from_probabilities(self.predict(image)?))
    }

    pub fn classify_all(&self, images: &[Image]) -> Result<Vec<Class>> {
        images.par_iter().map(|i| self.classify(i)).collect()
    }

    /// Mean loss over the first and last `fraction` of recorded steps.
    pub fn loss_window_means(&self, fraction: f64) -> Option<(f64, f64)> {
        let n = self.history.len();
        let k = ((n as f64 * fraction).ceil() as usize).max(1);
        if n < k {
            return None;
        }
        let mean = |s: &[StepRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len() as f64;
        Some((mean(&self.history[..k]), mean(&self.history[n - k..])))
    }
}

fn softmax(l: [f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let e = [(l[0] - m).exp(), (l[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// A model that exposes differentiable per-class scores. The class score of
/// a [`DetectorModel`] is its raw logit.
pub trait ScoreModel: Sync {
    fn class_score(&self, image: &Image, class_index: usize) -> Result<f64>;

    /// `d score / d pixel`, laid out like [`Image::data`].
    fn score_gradient(&self, _image: &Image, _class_index: usize) -> Result<Vec<f64>> {
        Err(Error::Capability(
            "model does not expose input gradients".into(),
        ))
    }
}

fn check_class(class_index: usize) -> Result<()> {
    if class_index > 1 {
        return Err(Error::validation(format!(
            "class index {class_index} is not 0 or 1"
        )));
    }
    Ok(())
}

impl ScoreModel for DetectorModel {
    fn class_score(&self, image: &Image, class_index: usize) -> Result<f64> {
        check_class(class_index)?;
        Ok(self.logits(image)?[class_index])
    }

    fn score_gradient(&self, image: &Image, class_index: usize) -> Result<Vec<f64>> {
        check_class(class_index)?;
        self.check_input(image)?;
        let mut up = [0.0; 2];
        up[class_index] = 1.0;
        self.architecture
            .backward(&self.parameters, image, up, true)?
            .input
            .ok_or_else(|| {
                Error::Capability(format!(
                    "{} returned no input gradient",
                    self.architecture_id()
                ))
            })
    }
}

/// Per-pixel gradient of the class score.
pub fn input_gradient(
    model: &dyn ScoreModel,
    image: &Image,
    class_index: usize,
) -> Result<Vec<f64>> {
    let g = model.score_gradient(image, class_index)?;
    if g.len() != image.data().len() {
        return Err(Error::validation(format!(
            "gradient has {} entries for an image of {}",
            g.len(),
            image.data().len()
        )));
    }
    Ok(g)
}

/// Loss, correctness count and summed gradient over one step's examples.
fn batch_gradient(
    arch: &dyn Architecture,
    params: &[f64],
    examples: &[(&Image, Class)],
) -> Result<(f64, usize, Vec<f64>)> {
    let per: Vec<(f64, bool, Vec<f64>)> = examples
        .par_iter()
        .map(|&(img, label)| {
            let logits = arch.logits(params, img);
            let p = softmax(logits);
            let y = label.index();
            let loss = -p[y].max(f64::MIN_POSITIVE).ln();
            let mut up = p;
            up[y] -= 1.0;
            let g = arch.backward(params, img, up, false)?.params;
            Ok((loss, Class::from_probabilities(p) == label, g))
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; params.len()];
    let (mut loss, mut correct) = (0.0, 0);
    for (l, ok, g) in per {
        loss += l;
        correct += ok as usize;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    Ok((loss, correct, grad))
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    t: i32,
}

impl Optimizer {
    fn new(config: &DetectorConfig, n: usize) -> Self {
        Optimizer {
            kind: config.optimizer,
            lr: config.learning_rate,
            momentum: config.momentum,
            first: vec![0.0; n],
            second: match config.optimizer {
                OptimizerKind::Sgd => Vec::new(),
                OptimizerKind::Adam => vec![0.0; n],
            },
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for ((p, v), g) in params.iter_mut().zip(&mut self.first).zip(grad) {
                    *v = self.momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                for (((p, m), v), g) in params
                    .iter_mut()
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                    .zip(grad)
                {
                    *m = B1 * *m + (1.0 - B1) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

/// One step's worth of training images.
struct StepData<'a> {
    real: std::borrow::Cow<'a, [Image]>,
    fake: Vec<Image>,
    spec: Option<GeneratorSpec>,
}

fn run_training<'a>(
    model: &mut DetectorModel,
    config: &DetectorConfig,
    mut next: impl FnMut(usize) -> Result<StepData<'a>>,
) -> Result<()> {
    let arch = model.architecture.clone();
    let mut opt = Optimizer::new(config, model.parameters.len());
    let base = model.history.len();
    for step in 0..config.total_steps() {
        let data = next(step)?;
        let examples: Vec<(&Image, Class)> = data
            .real
            .iter()
            .map(|i| (i, Class::Real))
            .chain(data.fake.iter().map(|i| (i, Class::Fake)))
            .collect();
        let (loss_sum, correct, mut grad) =
            batch_gradient(arch.as_ref(), &model.parameters, &examples)?;
        let n = examples.len() as f64;
        let loss = loss_sum / n;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training {
                step,
                message: format!("non-finite loss or gradient (loss {loss})"),
            });
        }
        grad.iter_mut().for_each(|g| *g /= n);
        opt.step(&mut model.parameters, &grad);
        model.history.push(StepRecord {
            step: base + step,
            epoch: step / config.steps_per_epoch,
            loss,
            accuracy: correct as f64 / n,
            n_real: data.real.len(),
            n_fake: data.fake.len(),
            batch_seed: data.spec.as_ref().map(|s| s.batch_seed),
            truncation_psi: data.spec.as_ref().map(|s| s.truncation_psi),
        });
    }
    Ok(())
}

/// Train from scratch on generated faces. Each spec drawn from `specs`
/// supplies one step's batch; its seed must not repeat.
pub fn train(
    specs: impl IntoIterator<Item = GeneratorSpec>,
    generator: &dyn FaceGenerator,
    backend: &dyn SwapBackend,
    config: &DetectorConfig,
    registry: &ArchitectureRegistry,
) -> Result<DetectorModel> {
    let mut model = DetectorModel::initialize(config, registry)?;
    model.train_type = TrainType::SyntheticTrained;
    model.train_swap = backend.id();
    let mut specs = specs.into_iter();
    let mut seen = HashSet::new();
    run_training(&mut model, config, |step| {
        let spec = specs.next().ok_or_else(|| Error::Training {
            step,
            message: "generator spec stream ended early".into(),
        })?;
        if spec.resolution != config.input_resolution {
            return Err(Error::config(format!(
                "spec resolution {} differs from detector input {}",
                spec.resolution, config.input_resolution
            )));
        }
        if !seen.insert(spec.batch_seed) {
            return Err(Error::validation(format!(
                "batch seed {} reused at step {step}",
                spec.batch_seed
            )));
        }
        let batch = generate_batch(&spec, generator)?;
        let (fake, _) = pair_swap_images(&batch.images, backend)?;
        Ok(StepData {
            real: batch.images.into(),
            fake,
            spec: Some(spec),
        })
    })?;
    Ok(model)
}

fn fit_collection(
    mut model: DetectorModel,
    images: &[Image],
    backend: &dyn SwapBackend,
    n_images: usize,
    config: &DetectorConfig,
) -> Result<DetectorModel> {
    config.validate()?;
    if n_images < 2 {
        return Err(Error::validation(
            "need at least 2 images to form swap pairs",
        ));
    }
    if images.len() < n_images {
        return Err(Error::validation(format!(
            "requested {n_images} images but the dataset has {}",
            images.len()
        )));
    }
    if config.architecture_id != model.architecture_id()
        || config.input_resolution != model.input_resolution
    {
        return Err(Error::config(format!(
            "config targets {} at {}px but the model is {} at {}px",
            config.architecture_id,
            config.input_resolution,
            model.architecture_id(),
            model.input_resolution
        )));
    }
    if let Some(i) = images[..n_images]
        .iter()
        .position(|i| model.check_input(i).is_err())
    {
        return Err(Error::validation(format!(
            "image {i} does not match the model input size"
        )));
    }
    let pool = &images[..n_images];
    let batch = config.batch_size.min(n_images);
    let mut rng = ChaCha8Rng::seed_from_u64(config.optimizer_seed);
    let mut order: Vec<usize> = (0..n_images).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    run_training(&mut model, config, |_| {
        let mut real = Vec::with_capacity(batch);
        while real.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            real.push(pool[order[cursor]].clone());
            cursor += 1;
        }
        let (fake, _) = pair_swap_images(&real, backend)?;
        Ok(StepData {
            real: real.into(),
            fake,
            spec: None,
        })
    })?;
    Ok(model)
}

/// Continue training `model` on the first `n_images` of `real_images` (real
/// class) and their pair swaps (fake class). `model` itself is left as is.
pub fn finetune(
    model: &DetectorModel,
    real_images: &[Image],
    backend: &dyn SwapBackend,
    n_images: usize,
    config: &DetectorConfig,
) -> Result<DetectorModel> {
    let mut m = fit_collection(model.clone(), real_images, backend, n_images, config)?;
    m.train_type = TrainType::Finetuned;
    m.config = config.clone();
    Ok(m)
}

/// Baseline: train from scratch on a collection of real images.
pub fn train_on_collection(
    images: &[Image],
    backend: &dyn SwapBackend,
    n_images: usize,
    config: &DetectorConfig,
    registry: &ArchitectureRegistry,
) -> Result<DetectorModel> {
    let mut init = DetectorModel::initialize(config, registry)?;
    init.train_type = TrainType::RealTrained;
    init.train_swap = backend.id();
    fit_collection(init, images, backend, n_images, config)
}
