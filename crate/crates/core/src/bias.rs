//! Demographic bias audit.
//!
//! Examples are grouped into facets along three axes (ethnicity, gender,
//! ten-year age bucket). Per facet we compute accuracy, acceptance rate
//! (true positives over observed positives) and rejection rate (true
//! negatives over observed negatives). The headline numbers are the largest
//! pairwise facet gap in each rate: AD, DAR and DRR.
//!
//! The positive class is [`Class::Fake`]: the detector "accepts" an image by
//! flagging it as swapped. Facets whose rate is undefined (no observed
//! positives or negatives) are skipped rather than counted as zero.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapter::{ExternalCommand, Scratch};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::label::Class;

/// Default small-facet threshold. Facets with `n <= DEFAULT_MIN_SAMPLES` are
/// flagged and left out of the filtered metrics.
pub const DEFAULT_MIN_SAMPLES: usize = 500;

/// Largest admissible age bucket (ages 110-120).
pub const MAX_AGE_BUCKET: u8 = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ethnicity {
    White,
    Asian,
    Indian,
    Black,
    LatinoHispanic,
    MiddleEastern,
}

impl Ethnicity {
    pub const ALL: [Ethnicity; 6] = [
        Ethnicity::White,
        Ethnicity::Asian,
        Ethnicity::Indian,
        Ethnicity::Black,
        Ethnicity::LatinoHispanic,
        Ethnicity::MiddleEastern,
    ];

    pub fn index(self) -> usize {
        Ethnicity::ALL.iter().position(|&e| e == self).unwrap()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ethnicity::White => "white",
            Ethnicity::Asian => "asian",
            Ethnicity::Indian => "indian",
            Ethnicity::Black => "black",
            Ethnicity::LatinoHispanic => "latino_hispanic",
            Ethnicity::MiddleEastern => "middle_eastern",
        }
    }
}

impl FromStr for Ethnicity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Ethnicity::ALL
            .into_iter()
            .find(|e| e.as_str() == norm)
            .ok_or_else(|| Error::validation(format!("unknown ethnicity `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "man" | "m" => Ok(Gender::Male),
            "female" | "woman" | "f" => Ok(Gender::Female),
            other => Err(Error::validation(format!("unknown gender `{other}`"))),
        }
    }
}

/// Ethnicity, gender and age bucket `k` (ages `[10k, 10k + 10)`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DemographicProfile {
    pub ethnicity: Ethnicity,
    pub gender: Gender,
    pub age_bucket: u8,
}

impl DemographicProfile {
    pub fn new(ethnicity: Ethnicity, gender: Gender, age_bucket: u8) -> Result<Self> {
        if age_bucket > MAX_AGE_BUCKET {
            return Err(Error::validation(format!(
                "age bucket {age_bucket} outside [0, {MAX_AGE_BUCKET}]"
            )));
        }
        Ok(DemographicProfile {
            ethnicity,
            gender,
            age_bucket,
        })
    }

    pub fn from_age(ethnicity: Ethnicity, gender: Gender, age: f64) -> Result<Self> {
        DemographicProfile::new(ethnicity, gender, age_bucket(age)?)
    }

    /// A representative age inside the bucket (its midpoint).
    pub fn representative_age(&self) -> f64 {
        f64::from(self.age_bucket) * 10.0 + 5.0
    }
}

/// `floor(age / 10)`, with ages of 120 and above folded into the last bucket.
pub fn age_bucket(age: f64) -> Result<u8> {
    if !age.is_finite() || age < 0.0 {
        return Err(Error::validation(format!("invalid age {age}")));
    }
    Ok(((age / 10.0).floor() as u64).min(u64::from(MAX_AGE_BUCKET)) as u8)
}

pub fn age_bucket_label(bucket: u8) -> String {
    let lo = u32::from(bucket) * 10;
    format!("{lo}-{}", lo + 10)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Ethnicity,
    Gender,
    Age,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Ethnicity, Axis::Gender, Axis::Age];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Ethnicity => "ethnicity",
            Axis::Gender => "gender",
            Axis::Age => "age",
        }
    }

    /// Sort key and display label of the facet a profile falls in.
    fn facet(self, p: &DemographicProfile) -> (usize, String) {
        match self {
            Axis::Ethnicity => (p.ethnicity.index(), p.ethnicity.as_str().to_string()),
            Axis::Gender => (p.gender as usize, p.gender.as_str().to_string()),
            Axis::Age => (p.age_bucket as usize, age_bucket_label(p.age_bucket)),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FacetStats {
    pub facet_label: String,
    pub n: usize,
    pub accuracy: f64,
    /// `None` when the facet has no observed positives.
    pub acceptance_rate: Option<f64>,
    /// `None` when the facet has no observed negatives.
    pub rejection_rate: Option<f64>,
    pub below_min_samples: bool,
    pub true_positives: usize,
    pub true_negatives: usize,
    pub observed_positives: usize,
    pub observed_negatives: usize,
}

#[derive(Default)]
struct Counts {
    n: usize,
    correct: usize,
    tp: usize,
    tn: usize,
    pos: usize,
    neg: usize,
}

fn check_aligned(predictions: &[Class], truths: &[Class], profiles: usize) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::validation("bias audit needs at least one example"));
    }
    if predictions.len() != truths.len() || predictions.len() != profiles {
        return Err(Error::validation(format!(
            "misaligned inputs: {} predictions, {} truths, {} profiles",
            predictions.len(),
            truths.len(),
            profiles
        )));
    }
    Ok(())
}

/// Per-facet statistics along one axis, facets in canonical order.
pub fn facet_stats(
    predictions: &[Class],
    truths: &[Class],
    profiles: &[DemographicProfile],
    axis: Axis,
    positive: Class,
    min_samples: usize,
) -> Result<Vec<FacetStats>> {
    check_aligned(predictions, truths, profiles.len())?;
    let mut groups: BTreeMap<usize, (String, Counts)> = BTreeMap::new();
    for ((&pred, &truth), profile) in predictions.iter().zip(truths).zip(profiles) {
        let (key, label) = axis.facet(profile);
        let c = &mut groups
            .entry(key)
            .or_insert_with(|| (label, Counts::default()))
            .1;
        c.n += 1;
        if pred == truth {
            c.correct += 1;
        }
        if truth == positive {
            c.pos += 1;
            if pred == positive {
                c.tp += 1;
            }
        } else {
            c.neg += 1;
            if pred != positive {
                c.tn += 1;
            }
        }
    }
    Ok(groups
        .into_values()
        .map(|(facet_label, c)| FacetStats {
            facet_label,
            n: c.n,
            accuracy: c.correct as f64 / c.n as f64,
            acceptance_rate: (c.pos > 0).then(|| c.tp as f64 / c.pos as f64),
            rejection_rate: (c.neg > 0).then(|| c.tn as f64 / c.neg as f64),
            below_min_samples: c.n <= min_samples,
            true_positives: c.tp,
            true_negatives: c.tn,
            observed_positives: c.pos,
            observed_negatives: c.neg,
        })
        .collect())
}

/// A disparity value with the facets that attain it (`(high, low)`).
/// `pair` is `None` when only one facet was eligible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disparity {
    pub value: f64,
    pub pair: Option<(String, String)>,
}

fn max_gap<'a>(values: impl Iterator<Item = (&'a str, f64)>, what: &str) -> Result<Disparity> {
    let vals: Vec<(&str, f64)> = values.collect();
    if vals.is_empty() {
        return Err(Error::validation(format!(
            "no eligible facet with a defined {what}"
        )));
    }
    if vals.len() == 1 {
        return Ok(Disparity {
            value: 0.0,
            pair: None,
        });
    }
    let mut hi = 0;
    let mut lo = 0;
    for (i, &(_, v)) in vals.iter().enumerate() {
        if v > vals[hi].1 {
            hi = i;
        }
        if v < vals[lo].1 {
            lo = i;
        }
    }
    if hi == lo {
        lo = 1;
    }
    Ok(Disparity {
        value: vals[hi].1 - vals[lo].1,
        pair: Some((vals[hi].0.to_string(), vals[lo].0.to_string())),
    })
}

fn eligible(stats: &[FacetStats], exclude_small: bool) -> impl Iterator<Item = &FacetStats> {
    stats
        .iter()
        .filter(move |s| !(exclude_small && s.below_min_samples))
}

/// AD: the largest accuracy gap between any two eligible facets.
pub fn accuracy_difference(stats: &[FacetStats], exclude_small: bool) -> Result<Disparity> {
    max_gap(
        eligible(stats, exclude_small).map(|s| (s.facet_label.as_str(), s.accuracy)),
        "accuracy",
    )
}

/// DAR: the largest acceptance-rate gap, skipping facets without positives.
pub fn dar(stats: &[FacetStats], exclude_small: bool) -> Result<Disparity> {
    max_gap(
        eligible(stats, exclude_small)
            .filter_map(|s| s.acceptance_rate.map(|r| (s.facet_label.as_str(), r))),
        "acceptance rate",
    )
}

/// DRR: the largest rejection-rate gap, skipping facets without negatives.
pub fn drr(stats: &[FacetStats], exclude_small: bool) -> Result<Disparity> {
    max_gap(
        eligible(stats, exclude_small)
            .filter_map(|s| s.rejection_rate.map(|r| (s.facet_label.as_str(), r))),
        "rejection rate",
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub ad: Option<Disparity>,
    pub drr: Option<Disparity>,
    pub dar: Option<Disparity>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisReport {
    pub axis: Axis,
    pub facets: Vec<FacetStats>,
    /// All facets. Every metric is present.
    pub unfiltered: MetricSet,
    /// Only facets with `n > min_samples`; a metric is absent when no facet
    /// qualifies.
    pub filtered: MetricSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub positive_class: Class,
    pub min_samples: usize,
    pub n_examples: usize,
    pub axes: Vec<AxisReport>,
}

impl BiasReport {
    pub fn axis(&self, axis: Axis) -> &AxisReport {
        self.axes.iter().find(|a| a.axis == axis).unwrap()
    }
}

/// Facet statistics and AD/DRR/DAR for every axis.
pub fn audit(
    predictions: &[Class],
    truths: &[Class],
    profiles: &[DemographicProfile],
    min_samples: usize,
) -> Result<BiasReport> {
    let positive = Class::Fake;
    let axes = Axis::ALL
        .into_iter()
        .map(|axis| {
            let facets = facet_stats(predictions, truths, profiles, axis, positive, min_samples)?;
            let unfiltered = MetricSet {
                ad: Some(accuracy_difference(&facets, false)?),
                drr: Some(drr(&facets, false)?),
                dar: Some(dar(&facets, false)?),
            };
            let filtered = MetricSet {
                ad: accuracy_difference(&facets, true).ok(),
                drr: drr(&facets, true).ok(),
                dar: dar(&facets, true).ok(),
            };
            Ok(AxisReport {
                axis,
                facets,
                unfiltered,
                filtered,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BiasReport {
        positive_class: positive,
        min_samples,
        n_examples: predictions.len(),
        axes,
    })
}

/// Header of the Table-2-shaped summary CSV.
pub const TABLE2_HEADER: [&str; 12] = [
    "train_type",
    "train_swap",
    "test_swap",
    "ethnicity_ad",
    "ethnicity_drr",
    "ethnicity_dar",
    "gender_ad",
    "gender_drr",
    "gender_dar",
    "age_ad",
    "age_drr",
    "age_dar",
];

/// One row of the Table-2-shaped summary: which detector was audited.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditRowKey {
    pub train_type: String,
    pub train_swap: String,
    pub test_swap: String,
}

/// Writes one row per report. With `filtered`, small facets are excluded and
/// an undefined metric is written as an empty cell.
pub fn write_table2_csv<W: Write>(
    out: W,
    rows: &[(AuditRowKey, &BiasReport)],
    filtered: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE2_HEADER)?;
    for (key, report) in rows {
        let mut rec = vec![
            key.train_type.clone(),
            key.train_swap.clone(),
            key.test_swap.clone(),
        ];
        for axis in Axis::ALL {
            let a = report.axis(axis);
            let m = if filtered { &a.filtered } else { &a.unfiltered };
            for d in [&m.ad, &m.drr, &m.dar] {
                rec.push(
                    d.as_ref()
                        .map(|d| format!("{:.4}", d.value))
                        .unwrap_or_default(),
                );
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Header of the prediction log shared by evaluation and the audit.
pub const PREDICTION_LOG_HEADER: [&str; 6] = [
    "image_id",
    "prediction",
    "truth",
    "ethnicity",
    "gender",
    "age",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub prediction: Class,
    pub truth: Class,
    pub profile: DemographicProfile,
    /// Age in years as given in the log.
    pub age: f64,
}

#[derive(Deserialize)]
struct RawRow {
    image_id: String,
    prediction: String,
    truth: String,
    ethnicity: String,
    gender: String,
    age: f64,
}

pub fn read_prediction_log<R: Read>(input: R) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    for col in PREDICTION_LOG_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::validation(format!(
                "prediction log is missing column `{col}`"
            )));
        }
    }
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<RawRow>().enumerate() {
        let row = row?;
        let profile =
            DemographicProfile::from_age(row.ethnicity.parse()?, row.gender.parse()?, row.age)
                .map_err(|e| Error::validation(format!("row {}: {e}", line + 1)))?;
        out.push(PredictionRecord {
            image_id: row.image_id,
            prediction: row.prediction.parse()?,
            truth: row.truth.parse()?,
            profile,
            age: row.age,
        });
    }
    Ok(out)
}

pub fn write_prediction_log<W: Write>(out: W, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PREDICTION_LOG_HEADER)?;
    for r in records {
        w.write_record([
            r.image_id.as_str(),
            r.prediction.as_str(),
            r.truth.as_str(),
            r.profile.ethnicity.as_str(),
            r.profile.gender.as_str(),
            &r.age.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Raw attribute prediction before bucketing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attributes {
    pub ethnicity: Ethnicity,
    pub gender: Gender,
    pub age: f64,
}

/// Predicts demographic attributes for an image.
pub trait AttributePredictor: Send + Sync {
    fn id(&self) -> String;
    fn predict(&self, image: &Image) -> Result<Attributes>;
}

/// Ground truth lookup for images whose profiles are known in advance, such
/// as renders from the toy generator. Images are matched by content digest.
pub struct GroundTruthPredictor {
    table: HashMap<String, DemographicProfile>,
}

impl GroundTruthPredictor {
    pub fn new<'a>(pairs: impl IntoIterator<Item = (&'a Image, DemographicProfile)>) -> Self {
        GroundTruthPredictor {
            table: pairs.into_iter().map(|(i, p)| (i.digest(), p)).collect(),
        }
    }
}

impl AttributePredictor for GroundTruthPredictor {
    fn id(&self) -> String {
        "ground-truth".into()
    }

    fn predict(&self, image: &Image) -> Result<Attributes> {
        let p = self
            .table
            .get(&image.digest())
            .ok_or_else(|| Error::Adapter {
                adapter: self.id(),
                message: "image has no recorded profile".into(),
            })?;
        Ok(Attributes {
            ethnicity: p.ethnicity,
            gender: p.gender,
            age: p.representative_age(),
        })
    }
}

/// External attribute predictor. Invoked as `<cmd> --image <png>`; must print
/// a JSON object `{"ethnicity": .., "gender": .., "age": <years>}`.
pub struct ExternalAttributePredictor {
    command: ExternalCommand,
}

impl ExternalAttributePredictor {
    pub fn new(command: ExternalCommand) -> Self {
        ExternalAttributePredictor { command }
    }
}

impl AttributePredictor for ExternalAttributePredictor {
    fn id(&self) -> String {
        self.command.identity()
    }

    fn predict(&self, image: &Image) -> Result<Attributes> {
        let scratch = Scratch::new("attr")?;
        let path = scratch.path().join("image.png");
        image.save_png(&path)?;
        let stdout = self.command.run(&[("image", path.display().to_string())])?;
        #[derive(Deserialize)]
        struct Raw {
            ethnicity: String,
            gender: String,
            age: f64,
        }
        let raw: Raw = serde_json::from_str(stdout.trim()).map_err(|e| Error::Adapter {
            adapter: self.id(),
            message: format!("unparseable output: {e}"),
        })?;
        Ok(Attributes {
            ethnicity: raw.ethnicity.parse()?,
            gender: raw.gender.parse()?,
            age: raw.age,
        })
    }
}

/// One profile (or a per-image error message) for each image, in order.
pub fn assign_demographics(
    images: &[Image],
    predictor: &dyn AttributePredictor,
) -> Vec<Result<DemographicProfile, String>> {
    images
        .iter()
        .map(|img| {
            predictor
                .predict(img)
                .and_then(|a| DemographicProfile::from_age(a.ethnicity, a.gender, a.age))
                .map_err(|e| e.to_string())
        })
        .collect()
}
