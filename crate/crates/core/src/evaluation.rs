//! Test-set construction, accuracy, and the train-swap x test-swap x dataset
//! evaluation matrix.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::{DemographicProfile, PredictionRecord};
use crate::detector::{DetectorModel, LabeledExample, TrainType};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::label::Class;
use crate::swapper::{pair_swap_images, SwapBackend};

/// All images as real, followed by their consecutive-pair swaps as fake.
pub fn build_test_set(images: &[Image], backend: &dyn SwapBackend) -> Result<Vec<LabeledExample>> {
    if images.len() < 2 {
        return Err(Error::validation(format!(
            "test set needs at least 2 images, got {}",
            images.len()
        )));
    }
    let (fakes, _) = pair_swap_images(images, backend)?;
    Ok(images
        .iter()
        .cloned()
        .map(|image| LabeledExample {
            image,
            label: Class::Real,
        })
        .chain(fakes.into_iter().map(|image| LabeledExample {
            image,
            label: Class::Fake,
        }))
        .collect())
}

/// Fraction of positions where prediction equals truth.
pub fn accuracy(predictions: &[Class], truth: &[Class]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::validation("accuracy of an empty prediction list"));
    }
    if predictions.len() != truth.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(truth)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Accuracy of `model` on labelled examples.
pub fn evaluate(model: &DetectorModel, examples: &[LabeledExample]) -> Result<f64> {
    let preds = examples
        .par_iter()
        .map(|e| model.classify(&e.image))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<Class> = examples.iter().map(|e| e.label).collect();
    accuracy(&preds, &truth)
}

/// Resize every image to `width x height` without preserving aspect ratio.
pub fn resize_collection(images: &[Image], width: usize, height: usize) -> Vec<Image> {
    images
        .par_iter()
        .map(|i| i.resize_bilinear(width, height))
        .collect()
}

/// Per-example prediction log for one model, backend and identified image
/// set. Real images keep their id and profile. The swap of pair `(i, i+1)`
/// is logged as `swap:<id_i>-><id_i+1>` and inherits the source profile,
/// since the swapped face carries the source identity.
pub fn prediction_records(
    model: &DetectorModel,
    images: &[Image],
    ids: &[String],
    profiles: &[(DemographicProfile, f64)],
    backend: &dyn SwapBackend,
) -> Result<Vec<PredictionRecord>> {
    if ids.len() != images.len() || profiles.len() != images.len() {
        return Err(Error::validation(
            "images, ids and profiles must have equal length",
        ));
    }
    let examples = build_test_set(images, backend)?;
    let preds = examples
        .par_iter()
        .map(|e| model.classify(&e.image))
        .collect::<Result<Vec<_>>>()?;
    let n = images.len();
    Ok(examples
        .iter()
        .zip(preds)
        .enumerate()
        .map(|(k, (e, prediction))| {
            let (image_id, (profile, age)) = if k < n {
                (ids[k].clone(), profiles[k])
            } else {
                let i = k - n;
                (format!("swap:{}->{}", ids[i], ids[i + 1]), profiles[i])
            };
            PredictionRecord {
                image_id,
                prediction,
                truth: e.label,
                profile,
                age,
            }
        })
        .collect())
}

/// How a detector was trained: the row key of the matrix.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrainKey {
    pub train_type: TrainType,
    pub train_swap: String,
}

impl TrainKey {
    pub fn of(model: &DetectorModel) -> Self {
        TrainKey {
            train_type: model.train_type,
            train_swap: model.train_swap.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub train_type: TrainType,
    pub train_swap: String,
    pub test_swap: String,
    pub dataset: String,
    /// `None` when the cell failed; see `error`.
    pub accuracy: Option<f64>,
    pub n_examples: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub cells: Vec<EvalCell>,
    pub manifest: serde_json::Value,
}

/// Long-format CSV header.
pub const MATRIX_HEADER: [&str; 6] = [
    "train_type",
    "train_swap",
    "test_swap",
    "dataset",
    "accuracy",
    "n_examples",
];

fn duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    let mut seen = HashSet::new();
    ids.into_iter().find(|id| !seen.insert(*id))
}

/// One cell per (model, test backend, dataset). A failing cell records its
/// error and the rest of the matrix is still produced.
pub fn cross_modal_matrix(
    models: &[(TrainKey, &DetectorModel)],
    backends: &[&dyn SwapBackend],
    datasets: &[(String, Vec<Image>)],
) -> Result<EvalMatrix> {
    if models.is_empty() || backends.is_empty() || datasets.is_empty() {
        return Err(Error::validation(
            "evaluation needs at least one model, backend and dataset",
        ));
    }
    let mut keys = HashSet::new();
    for (k, _) in models {
        if !keys.insert(k) {
            return Err(Error::validation(format!(
                "two models share the key ({}, {})",
                k.train_type, k.train_swap
            )));
        }
    }
    let backend_ids: Vec<String> = backends.iter().map(|b| b.id()).collect();
    if let Some(d) = duplicates(backend_ids.iter().map(String::as_str)) {
        return Err(Error::validation(format!("backend `{d}` listed twice")));
    }
    if let Some(d) = duplicates(datasets.iter().map(|(id, _)| id.as_str())) {
        return Err(Error::validation(format!("dataset `{d}` listed twice")));
    }

    let test_sets: Vec<Vec<std::result::Result<Vec<LabeledExample>, String>>> = backends
        .iter()
        .map(|b| {
            datasets
                .par_iter()
                .map(|(_, images)| build_test_set(images, *b).map_err(|e| e.to_string()))
                .collect()
        })
        .collect();

    let mut jobs = Vec::new();
    for (mi, _) in models.iter().enumerate() {
        for bi in 0..backends.len() {
            for di in 0..datasets.len() {
                jobs.push((mi, bi, di));
            }
        }
    }
    let cells = jobs
        .par_iter()
        .map(|&(mi, bi, di)| {
            let (key, model) = &models[mi];
            let (accuracy, n_examples, error) = match &test_sets[bi][di] {
                Ok(examples) => match evaluate(model, examples) {
                    Ok(acc) => (Some(acc), examples.len(), None),
                    Err(e) => (None, examples.len(), Some(e.to_string())),
                },
                Err(e) => (None, 0, Some(e.clone())),
            };
            EvalCell {
                train_type: key.train_type,
                train_swap: key.train_swap.clone(),
                test_swap: backend_ids[bi].clone(),
                dataset: datasets[di].0.clone(),
                accuracy,
                n_examples,
                error,
            }
        })
        .collect();
    let manifest = serde_json::json!({
        "models": models.iter().map(|(k, m)| serde_json::json!({
            "train_type": k.train_type,
            "train_swap": k.train_swap,
            "architecture_id": m.architecture_id(),
            "config": m.config,
        })).collect::<Vec<_>>(),
        "backends": backend_ids,
        "datasets": datasets.iter().map(|(id, imgs)| serde_json::json!({"id": id, "n_images": imgs.len()})).collect::<Vec<_>>(),
    });
    Ok(EvalMatrix { cells, manifest })
}

impl EvalMatrix {
    pub fn cell(&self, train: &TrainKey, test_swap: &str, dataset: &str) -> Option<&EvalCell> {
        self.cells.iter().find(|c| {
            c.train_type == train.train_type
                && c.train_swap == train.train_swap
                && c.test_swap == test_swap
                && c.dataset == dataset
        })
    }

    /// Long format, one row per cell. Failed cells have an empty accuracy.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(MATRIX_HEADER)?;
        for c in &self.cells {
            w.write_record([
                c.train_type.as_str(),
                &c.train_swap,
                &c.test_swap,
                &c.dataset,
                &c.accuracy.map(|a| a.to_string()).unwrap_or_default(),
                &c.n_examples.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Wide format: one row per (train type, train swap, test swap), one
    /// accuracy column per dataset in first-seen order.
    pub fn write_table1_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut datasets: Vec<&str> = Vec::new();
        let mut rows: Vec<(TrainType, &str, &str)> = Vec::new();
        for c in &self.cells {
            if !datasets.contains(&c.dataset.as_str()) {
                datasets.push(&c.dataset);
            }
            let r = (c.train_type, c.train_swap.as_str(), c.test_swap.as_str());
            if !rows.contains(&r) {
                rows.push(r);
            }
        }
        rows.sort_by_key(|&(t, s, _)| (t, s));
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["train_type", "train_swap", "test_swap"];
        header.extend(&datasets);
        w.write_record(&header)?;
        for (t, s, ts) in rows {
            let mut rec = vec![t.as_str().to_string(), s.to_string(), ts.to_string()];
            for d in &datasets {
                let acc = self
                    .cells
                    .iter()
                    .find(|c| {
                        c.train_type == t
                            && c.train_swap == s
                            && c.test_swap == ts
                            && c.dataset == *d
                    })
                    .and_then(|c| c.accuracy);
                rec.push(acc.map(|a| format!("{a:.4}")).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
