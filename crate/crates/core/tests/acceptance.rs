//! Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails. The detector trained for the pipeline criterion is
//! reused by the bias and interpretability criteria.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dataless::bias::{
    age_bucket_label, audit, write_table2_csv, AuditRowKey, Axis, BiasReport, DemographicProfile,
    Disparity, Ethnicity, Gender, DEFAULT_MIN_SAMPLES,
};
use dataless::detector::{train, ArchitectureRegistry, DetectorConfig, DetectorModel, ScoreModel};
use dataless::evaluation::{build_test_set, evaluate, prediction_records};
use dataless::generator::{
    generate_batch, toy_balanced_collection, BackgroundStyle, GeneratorSpec, SpecStream,
    ToyGenerator,
};
use dataless::interpret::{occlusion_map, render_heatmap, saliency_map, OcclusionParams};
use dataless::swapper::{pair_swap_batch, BlendSwap, FaceOval, RecolorSwap, SwapBackend};
use dataless::{Class, Image, Result, FAKE_CLASS};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }

    fn failed(e: impl std::fmt::Display) -> Self {
        Outcome::new(false, format!("error: {e}"))
    }
}

fn report(n: usize, name: &str, outcome: &Outcome, elapsed: Duration) {
    let tag = if outcome.pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {n} {tag} {name} ({:.1}s): {}",
        elapsed.as_secs_f64(),
        outcome.detail
    );
}

// ---------------------------------------------------------------------------
// 1. Bias metrics against a brute-force oracle.

struct Row {
    pred: Class,
    truth: Class,
    profile: DemographicProfile,
}

/// Label, size, accuracy, acceptance rate and rejection rate of one facet.
type OracleFacet = (String, usize, f64, Option<f64>, Option<f64>);

/// Recomputes every facet by scanning the rows once per facet.
fn oracle_facets(rows: &[Row], axis: Axis) -> Vec<OracleFacet> {
    let label = |p: &DemographicProfile| match axis {
        Axis::Ethnicity => p.ethnicity.as_str().to_string(),
        Axis::Gender => p.gender.as_str().to_string(),
        Axis::Age => age_bucket_label(p.age_bucket),
    };
    let mut labels: Vec<String> = rows.iter().map(|r| label(&r.profile)).collect();
    labels.sort();
    labels.dedup();
    labels
        .into_iter()
        .map(|l| {
            let members: Vec<&Row> = rows.iter().filter(|r| label(&r.profile) == l).collect();
            let n = members.len();
            let correct = members.iter().filter(|r| r.pred == r.truth).count();
            let pos: Vec<&&Row> = members.iter().filter(|r| r.truth == Class::Fake).collect();
            let neg: Vec<&&Row> = members.iter().filter(|r| r.truth == Class::Real).collect();
            let ar = (!pos.is_empty()).then(|| {
                pos.iter().filter(|r| r.pred == Class::Fake).count() as f64 / pos.len() as f64
            });
            let rr = (!neg.is_empty()).then(|| {
                neg.iter().filter(|r| r.pred == Class::Real).count() as f64 / neg.len() as f64
            });
            (l, n, correct as f64 / n as f64, ar, rr)
        })
        .collect()
}

/// Largest |a - b| over every pair of defined values; 0 for a single value,
/// `None` for none.
fn pairwise_max(values: &[(String, f64)]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut best = 0.0f64;
    for (_, a) in values {
        for (_, b) in values {
            best = best.max((a - b).abs());
        }
    }
    Some(best)
}

fn check_disparity(
    got: Option<&Disparity>,
    values: &[(String, f64)],
    what: &str,
) -> std::result::Result<(), String> {
    let want = pairwise_max(values);
    match (got, want) {
        (None, None) => Ok(()),
        (Some(d), Some(w)) => {
            if (d.value - w).abs() > 1e-12 {
                return Err(format!("{what}: got {} want {w}", d.value));
            }
            if let Some((hi, lo)) = &d.pair {
                let v = |name: &str| values.iter().find(|(l, _)| l == name).map(|(_, v)| *v);
                match (v(hi), v(lo)) {
                    (Some(a), Some(b)) if ((a - b) - d.value).abs() <= 1e-12 => {}
                    _ => {
                        return Err(format!(
                            "{what}: pair ({hi}, {lo}) does not attain {}",
                            d.value
                        ))
                    }
                }
            } else if values.len() != 1 {
                return Err(format!("{what}: missing pair with {} facets", values.len()));
            }
            Ok(())
        }
        (g, w) => Err(format!(
            "{what}: presence mismatch, got {:?} want {w:?}",
            g.map(|d| d.value)
        )),
    }
}

fn random_table(rng: &mut ChaCha8Rng) -> (Vec<Row>, usize) {
    let n = rng.random_range(10..=10_000usize);
    let mut eth: Vec<Ethnicity> = Ethnicity::ALL.to_vec();
    let n_eth = rng.random_range(2..=6usize);
    for i in (1..eth.len()).rev() {
        eth.swap(i, rng.random_range(0..=i));
    }
    eth.truncate(n_eth);
    let mut ages: Vec<u8> = (0..=11).collect();
    for i in (1..ages.len()).rev() {
        ages.swap(i, rng.random_range(0..=i));
    }
    ages.truncate(rng.random_range(2..=8usize));
    let fake_rate: f64 = rng.random_range(0.05..0.95);
    let accuracy: f64 = rng.random_range(0.3..1.0);
    let mut rows: Vec<Row> = (0..n)
        .map(|i| {
            // Cycle the first rows through every chosen facet so each appears.
            let e = if i < eth.len() {
                eth[i]
            } else {
                eth[rng.random_range(0..eth.len())]
            };
            let a = if i < ages.len() {
                ages[i]
            } else {
                ages[rng.random_range(0..ages.len())]
            };
            let g = if i < 2 {
                Gender::ALL[i]
            } else {
                Gender::ALL[rng.random_range(0..2)]
            };
            let truth = if rng.random_bool(fake_rate) {
                Class::Fake
            } else {
                Class::Real
            };
            let pred = if rng.random_bool(accuracy) {
                truth
            } else {
                truth.flipped()
            };
            Row {
                pred,
                truth,
                profile: DemographicProfile::new(e, g, a).unwrap(),
            }
        })
        .collect();
    rows[0].truth = Class::Fake;
    rows[1].truth = Class::Real;
    // Thresholds from "keeps everything" to "drops everything".
    let min_samples = match rng.random_range(0..4) {
        0 => 0,
        1 => rng.random_range(0..=n / 4),
        2 => rng.random_range(0..=n),
        _ => n,
    };
    (rows, min_samples)
}

fn check_table(rows: &[Row], min_samples: usize) -> std::result::Result<(), String> {
    let preds: Vec<Class> = rows.iter().map(|r| r.pred).collect();
    let truths: Vec<Class> = rows.iter().map(|r| r.truth).collect();
    let profiles: Vec<DemographicProfile> = rows.iter().map(|r| r.profile).collect();
    let rep = audit(&preds, &truths, &profiles, min_samples).map_err(|e| e.to_string())?;
    for axis in Axis::ALL {
        let a = rep.axis(axis);
        let facets = oracle_facets(rows, axis);
        if facets.len() != a.facets.len() {
            return Err(format!(
                "{axis}: {} facets, oracle {}",
                a.facets.len(),
                facets.len()
            ));
        }
        for (label, n, ..) in &facets {
            match a.facets.iter().find(|f| &f.facet_label == label) {
                Some(f) if f.n == *n && f.below_min_samples == (*n <= min_samples) => {}
                _ => return Err(format!("{axis}: facet {label} disagrees")),
            }
        }
        for filtered in [false, true] {
            let kept: Vec<_> = facets
                .iter()
                .filter(|f| !filtered || f.1 > min_samples)
                .collect();
            let acc: Vec<(String, f64)> = kept.iter().map(|f| (f.0.clone(), f.2)).collect();
            let ar: Vec<(String, f64)> = kept
                .iter()
                .filter_map(|f| f.3.map(|v| (f.0.clone(), v)))
                .collect();
            let rr: Vec<(String, f64)> = kept
                .iter()
                .filter_map(|f| f.4.map(|v| (f.0.clone(), v)))
                .collect();
            let m = if filtered { &a.filtered } else { &a.unfiltered };
            let tag = |w: &str| format!("{axis} {w}{}", if filtered { " filtered" } else { "" });
            check_disparity(m.ad.as_ref(), &acc, &tag("AD"))?;
            check_disparity(m.dar.as_ref(), &ar, &tag("DAR"))?;
            check_disparity(m.drr.as_ref(), &rr, &tag("DRR"))?;
        }
    }
    Ok(())
}

fn criterion_bias_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut none_cases = 0;
    for t in 0..1000 {
        let (rows, min_samples) = random_table(&mut rng);
        none_cases += usize::from(min_samples >= rows.len());
        if let Err(e) = check_table(&rows, min_samples) {
            return Outcome::new(false, format!("table {t} (n={}): {e}", rows.len()));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        secs < 30.0,
        format!("1000 tables match within 1e-12 ({none_cases} with every facet filtered out), {secs:.1}s < 30s"),
    )
}

// ---------------------------------------------------------------------------
// 2. Structural swap properties.

fn criterion_swap_structure() -> Result<Outcome> {
    let start = Instant::now();
    let backends: [&dyn SwapBackend; 2] = [&BlendSwap, &RecolorSwap];
    for (k, n) in [2usize, 3, 4, 12, 100].into_iter().enumerate() {
        let batch = generate_batch(
            &GeneratorSpec::new(300 + k as u64, 0.7, n, 64),
            &ToyGenerator::new(),
        )?;
        for b in backends {
            let swapped = pair_swap_batch(&batch, b)?;
            if swapped.images.len() != n - 1 || swapped.provenance.len() != n - 1 {
                return Ok(Outcome::new(
                    false,
                    format!("N={n} {}: {} outputs", b.id(), swapped.images.len()),
                ));
            }
            for (i, p) in swapped.provenance.iter().enumerate() {
                if (p.source_index, p.target_index) != (i, i + 1) || p.backend_id != b.id() {
                    return Ok(Outcome::new(
                        false,
                        format!("N={n}: provenance {i} is {p:?}"),
                    ));
                }
            }
            if b.id() == "blend" {
                let oval = FaceOval::for_size(64, 64);
                for (i, out) in swapped.images.iter().enumerate() {
                    let target = &batch.images[i + 1];
                    for y in 0..64 {
                        for x in 0..64 {
                            let differs = out
                                .get(x, y)
                                .iter()
                                .zip(target.get(x, y))
                                .any(|(a, b)| a.to_bits() != b.to_bits());
                            if !oval.contains(x, y) && differs {
                                return Ok(Outcome::new(
                                    false,
                                    format!(
                                        "N={n} pair {i}: pixel ({x},{y}) outside the oval changed"
                                    ),
                                ));
                            }
                        }
                    }
                }
            }
        }
        for b in backends {
            for img in &batch.images {
                if &b.swap(img, img)? != img {
                    return Ok(Outcome::new(
                        false,
                        format!("{} identity swap is not exact", b.id()),
                    ));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome::new(
        secs < 10.0,
        format!("N-1 outputs and (i, i+1) provenance for N in {{2,3,4,12,100}}; blend exterior and blend/recolor identity bit-exact; {secs:.2}s < 10s"),
    ))
}

// ---------------------------------------------------------------------------
// 3. Determinism.

fn small_config() -> DetectorConfig {
    DetectorConfig {
        input_resolution: 32,
        batch_size: 12,
        steps_per_epoch: 300,
        ..DetectorConfig::toy_reference()
    }
}

fn criterion_determinism(dir: &Path) -> Result<Outcome> {
    let spec = GeneratorSpec::new(77, 0.6, 16, 64);
    let digests = || -> Result<Vec<String>> {
        Ok(generate_batch(&spec, &ToyGenerator::new())?
            .images
            .iter()
            .map(Image::digest)
            .collect())
    };
    if digests()? != digests()? {
        return Ok(Outcome::new(false, "generate_batch digests differ"));
    }

    let cfg = small_config();
    let run = || {
        train(
            SpecStream::new(5, cfg.batch_size, 32),
            &ToyGenerator::new(),
            &BlendSwap,
            &cfg,
            &ArchitectureRegistry::default(),
        )
    };
    let (a, b) = (run()?, run()?);
    let bits = |m: &DetectorModel| m.parameters.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    if bits(&a) != bits(&b) {
        return Ok(Outcome::new(
            false,
            "300-step training produced different parameters",
        ));
    }
    let hist = |m: &DetectorModel| {
        m.history
            .iter()
            .map(|r| (r.loss.to_bits(), r.accuracy.to_bits(), r.batch_seed))
            .collect::<Vec<_>>()
    };
    if hist(&a) != hist(&b) || a.history.len() != 300 {
        return Ok(Outcome::new(
            false,
            "300-step training produced different loss histories",
        ));
    }
    let ckpt = (a.to_checkpoint_json()?, b.to_checkpoint_json()?);
    if ckpt.0 != ckpt.1 {
        return Ok(Outcome::new(false, "checkpoint JSON differs"));
    }

    let img = generate_batch(&GeneratorSpec::new(91, 0.5, 1, 32), &ToyGenerator::new())?
        .images
        .remove(0);
    let params = OcclusionParams::for_resolution(32);
    for round in 0..2 {
        let s = saliency_map(&a, &img, FAKE_CLASS)?;
        let o = occlusion_map(&a, &img, FAKE_CLASS, params)?;
        render_heatmap(&s, &img, dir.join(format!("sal{round}.png")))?;
        render_heatmap(&o, &img, dir.join(format!("occ{round}.png")))?;
        s.save_sidecar(dir.join(format!("sal{round}.json")))?;
        o.save_sidecar(dir.join(format!("occ{round}.json")))?;
    }
    for name in ["sal", "occ"] {
        for ext in ["png", "json"] {
            let read = |r: u32| std::fs::read(dir.join(format!("{name}{r}.{ext}")));
            if read(0)? != read(1)? {
                return Ok(Outcome::new(
                    false,
                    format!("{name} {ext} bytes differ between runs"),
                ));
            }
        }
    }
    Ok(Outcome::new(
        true,
        "batch digests, 300-step parameters/history/checkpoint, saliency and occlusion maps (values and PNG bytes) identical across two runs",
    ))
}

// ---------------------------------------------------------------------------
// 4. Desk-scale pipeline.

fn loss_windows(m: &DetectorModel) -> (f64, f64) {
    m.loss_window_means(0.1).unwrap_or((f64::NAN, f64::NAN))
}

fn criterion_pipeline() -> Result<(Outcome, DetectorModel)> {
    let start = Instant::now();
    let cfg = DetectorConfig::toy_reference();
    let res = cfg.input_resolution;
    let model = train(
        SpecStream::new(1, cfg.batch_size, res),
        &ToyGenerator::new(),
        &BlendSwap,
        &cfg,
        &ArchitectureRegistry::default(),
    )?;
    let trained_in = start.elapsed().as_secs_f64();
    let (held_out, _) = toy_balanced_collection(999, 200, res, BackgroundStyle::Stripes)?;
    let (shifted, _) = toy_balanced_collection(998, 200, res, BackgroundStyle::Checker)?;
    let blend_set = build_test_set(&held_out, &BlendSwap)?;
    let recolor_set = build_test_set(&held_out, &RecolorSwap)?;
    let shifted_set = build_test_set(&shifted, &BlendSwap)?;
    let blend = evaluate(&model, &blend_set)?;
    let recolor = evaluate(&model, &recolor_set)?;
    let shifted_before = evaluate(&model, &shifted_set)?;

    let (pool, _) = toy_balanced_collection(4242, 500, res, BackgroundStyle::Checker)?;
    let tuned = dataless::detector::finetune(
        &model,
        &pool,
        &BlendSwap,
        500,
        &DetectorConfig::toy_finetune(),
    )?;
    let shifted_after = evaluate(&tuned, &shifted_set)?;
    let total = start.elapsed().as_secs_f64();

    let (first, last) = loss_windows(&model);
    let tail = &model.history[model.history.len() * 9 / 10..];
    let tail_acc = tail.iter().map(|r| r.accuracy).sum::<f64>() / tail.len() as f64;
    let pass = blend >= 0.95 && recolor > 0.5 && shifted_after >= shifted_before && total <= 300.0;
    let detail = format!(
        "blend {blend:.4} (>= 0.95), recolor {recolor:.4} (> 0.5), shifted {shifted_before:.4} -> {shifted_after:.4} after finetune (non-decreasing), {total:.0}s <= 300s (train {trained_in:.0}s); loss first/last 10% {first:.4}/{last:.4}, last-10% train accuracy {tail_acc:.3}"
    );
    Ok((Outcome::new(pass, detail), model))
}

// ---------------------------------------------------------------------------
// 5. Bias reproduction with a corrupted detector.

fn table2_row(report: &BiasReport) -> Result<Vec<String>> {
    let mut buf = Vec::new();
    let key = AuditRowKey {
        train_type: "synthetic_trained".into(),
        train_swap: "blend".into(),
        test_swap: "blend".into(),
    };
    write_table2_csv(&mut buf, &[(key, report)], false)?;
    let text = String::from_utf8(buf).unwrap();
    Ok(text
        .lines()
        .nth(1)
        .unwrap_or_default()
        .split(',')
        .map(str::to_string)
        .collect())
}

fn criterion_bias_reproduction(model: &DetectorModel) -> Result<Outcome> {
    let (images, profiles) =
        toy_balanced_collection(555, 2400, model.input_resolution, BackgroundStyle::Stripes)?;
    let ids: Vec<String> = (0..images.len()).map(|i| format!("face{i:04}")).collect();
    let with_age: Vec<_> = profiles
        .iter()
        .map(|p| (*p, p.representative_age()))
        .collect();
    let records = prediction_records(model, &images, &ids, &with_age, &BlendSwap)?;
    let truths: Vec<Class> = records.iter().map(|r| r.truth).collect();
    let profs: Vec<DemographicProfile> = records.iter().map(|r| r.profile).collect();
    let mut preds: Vec<Class> = records.iter().map(|r| r.prediction).collect();

    let clean = audit(&preds, &truths, &profs, DEFAULT_MIN_SAMPLES)?;
    let row = table2_row(&clean)?;
    let eth = clean.axis(Axis::Ethnicity);
    let complete = row.len() == 12
        && row.iter().all(|c| !c.is_empty())
        && clean.axes.len() == 3
        && eth.facets.len() == 6
        && clean.axes.iter().all(|a| {
            a.unfiltered.ad.is_some() && a.unfiltered.dar.is_some() && a.unfiltered.drr.is_some()
        });
    let clean_ad = eth.unfiltered.ad.as_ref().map_or(f64::NAN, |d| d.value);

    let victim = Ethnicity::Black;
    let mut rng = ChaCha8Rng::seed_from_u64(2023);
    let mut flipped = 0;
    for (p, prof) in preds.iter_mut().zip(&profs) {
        if prof.ethnicity == victim && rng.random_bool(0.1) {
            *p = p.flipped();
            flipped += 1;
        }
    }
    let corrupted = audit(&preds, &truths, &profs, DEFAULT_MIN_SAMPLES)?;
    let ad = corrupted
        .axis(Axis::Ethnicity)
        .unfiltered
        .ad
        .clone()
        .unwrap();
    let per_facet: BTreeMap<&str, f64> = corrupted
        .axis(Axis::Ethnicity)
        .facets
        .iter()
        .map(|f| (f.facet_label.as_str(), f.accuracy))
        .collect();
    let pass = complete && (ad.value - 0.10).abs() <= 0.02;
    Ok(Outcome::new(
        pass,
        format!(
            "{} records, report complete: {complete} (12 table2 cells, 6 ethnicity facets); clean ethnicity AD {clean_ad:.4}; {flipped} {} predictions flipped -> ethnicity AD {:.4} (target 0.10 +/- 0.02), pair {:?}; facet accuracies {per_facet:?}",
            records.len(),
            victim.as_str(),
            ad.value,
            ad.pair
        ),
    ))
}

// ---------------------------------------------------------------------------
// 6. Interpretability correctness.

fn fd_deviation(model: &dyn ScoreModel, image: &Image, class: usize, h: f64) -> Result<f64> {
    use rayon::prelude::*;
    let analytic = dataless::detector::input_gradient(model, image, class)?;
    let numeric = (0..image.data().len())
        .into_par_iter()
        .map(|i| {
            let mut plus = image.clone();
            let mut minus = image.clone();
            plus.data_mut()[i] += h;
            minus.data_mut()[i] -= h;
            Ok((model.class_score(&plus, class)? - model.class_score(&minus, class)?) / (2.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    let sum: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs())
        .sum();
    Ok(sum / analytic.len() as f64)
}

/// Sums how far each pixel's brightness exceeds a threshold, wherever it is.
struct BrightPixels;

impl ScoreModel for BrightPixels {
    fn class_score(&self, image: &Image, _class: usize) -> Result<f64> {
        Ok(image.grayscale().iter().map(|g| (g - 0.8).max(0.0)).sum())
    }
}

struct Constant;

impl ScoreModel for Constant {
    fn class_score(&self, _image: &Image, _class: usize) -> Result<f64> {
        Ok(0.25)
    }

    fn score_gradient(&self, image: &Image, _class: usize) -> Result<Vec<f64>> {
        Ok(vec![0.0; image.data().len()])
    }
}

fn criterion_interpretability(model: &DetectorModel) -> Result<Outcome> {
    let res = model.input_resolution;
    let (faces, _) = toy_balanced_collection(31, 2, res, BackgroundStyle::Stripes)?;
    let fake = BlendSwap.swap(&faces[0], &faces[1])?;
    let mut deviations = Vec::new();
    for img in [&faces[0], &fake] {
        deviations.push(fd_deviation(model, img, FAKE_CLASS, 1e-3)?);
    }
    let fd_max = deviations.iter().cloned().fold(0.0, f64::max);
    let fd_ok = fd_max <= 1e-3;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut patch_hits = 0;
    let trials = 20;
    for _ in 0..trials {
        let data: Vec<f64> = (0..64 * 64 * 3)
            .map(|_| rng.random_range(0.0..0.6))
            .collect();
        let mut img = Image::new(64, 64, data)?;
        let (px, py) = (rng.random_range(0..=56usize), rng.random_range(0..=56usize));
        for y in py..py + 8 {
            for x in px..px + 8 {
                img.set(x, y, [1.0; 3]);
            }
        }
        let params = OcclusionParams {
            window: 8,
            stride: 1,
            fill_value: 0.5,
        };
        let (ax, ay) = occlusion_map(&BrightPixels, &img, FAKE_CLASS, params)?.argmax();
        patch_hits += usize::from((px..px + 8).contains(&ax) && (py..py + 8).contains(&ay));
    }

    let img = &faces[0];
    let maps = [
        saliency_map(&Constant, img, FAKE_CLASS)?,
        occlusion_map(
            &Constant,
            img,
            FAKE_CLASS,
            OcclusionParams::for_resolution(res),
        )?,
    ];
    let zero = maps
        .iter()
        .all(|m| m.values.iter().all(|v| *v == 0.0) && m.normalized().iter().all(|v| *v == 0.0));

    Ok(Outcome::new(
        fd_ok && patch_hits == trials && zero,
        format!(
            "fake-score saliency vs central differences (h=1e-3) on a real and a swapped face, trained {} model: worst mean abs deviation {fd_max:.2e} (<= 1e-3); occlusion argmax inside the planted 8x8 patch in {patch_hits}/{trials} images; constant model maps all zero: {zero}",
            model.architecture_id()
        ),
    ))
}

// ---------------------------------------------------------------------------
// 7. Report layouts through the command-line tool.

fn cli(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dataless"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`{}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn read_csv(path: &Path) -> std::result::Result<(String, Vec<Vec<String>>), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().to_string();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

fn expect_header(path: &Path, want: &str) -> std::result::Result<Vec<Vec<String>>, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let line = bytes.split(|b| *b == b'\n').next().unwrap_or_default();
    if line != want.as_bytes() {
        return Err(format!(
            "{} header is {:?}, want {want:?}",
            path.display(),
            String::from_utf8_lossy(line)
        ));
    }
    let (header, rows) = read_csv(path)?;
    let width = header.split(',').count();
    if let Some(r) = rows.iter().find(|r| r.len() != width) {
        return Err(format!(
            "{}: row {r:?} does not have {width} columns",
            path.display()
        ));
    }
    Ok(rows)
}

fn criterion_report_layout(dir: &Path) -> std::result::Result<String, String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let d1 = p("d1");
    cli(&[
        "generate",
        "--out",
        &d1,
        "--seed",
        "3",
        "--count",
        "40",
        "--resolution",
        "32",
    ])?;
    for (name, backend) in [("m1", "blend"), ("m2", "recolor")] {
        cli(&[
            "train",
            "--out",
            &p(name),
            "--resolution",
            "32",
            "--batch-size",
            "12",
            "--steps",
            "30",
            "--backend",
            backend,
        ])?;
    }
    let models = format!("{},{}", p("m1/checkpoint.json"), p("m2/checkpoint.json"));
    cli(&[
        "evaluate",
        "--models",
        &models,
        "--backends",
        "blend,recolor",
        "--datasets",
        &d1,
        "--out",
        &p("ev"),
    ])?;

    let matrix = expect_header(
        &dir.join("ev/matrix.csv"),
        "train_type,train_swap,test_swap,dataset,accuracy,n_examples",
    )?;
    if matrix.len() != 4 {
        return Err(format!("matrix.csv has {} cells, want 4", matrix.len()));
    }
    let table1 = expect_header(
        &dir.join("ev/table1.csv"),
        "train_type,train_swap,test_swap,d1",
    )?;
    let keys: Vec<(&str, &str, &str)> = table1
        .iter()
        .map(|r| (r[0].as_str(), r[1].as_str(), r[2].as_str()))
        .collect();
    let want = [
        ("synthetic_trained", "blend", "blend"),
        ("synthetic_trained", "blend", "recolor"),
        ("synthetic_trained", "recolor", "blend"),
        ("synthetic_trained", "recolor", "recolor"),
    ];
    if keys != want {
        return Err(format!("table1.csv rows {keys:?}, want {want:?}"));
    }
    if table1.iter().any(|r| {
        r[3].parse::<f64>()
            .map_or(true, |a| !(0.0..=1.0).contains(&a))
    }) {
        return Err("table1.csv has a non-accuracy cell".into());
    }

    let mut logs: Vec<String> = std::fs::read_dir(dir.join("ev/predictions"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path().to_string_lossy().into_owned())
        .collect();
    logs.sort();
    if logs.len() != 4 {
        return Err(format!("{} prediction logs, want 4", logs.len()));
    }
    for log in &logs {
        let rows = expect_header(
            Path::new(log),
            "image_id,prediction,truth,ethnicity,gender,age",
        )?;
        if rows.len() != 40 + 39 {
            return Err(format!("{log} has {} rows, want 79", rows.len()));
        }
    }
    cli(&[
        "audit-bias",
        "--predictions",
        &logs.join(","),
        "--min-samples",
        "10",
        "--out",
        &p("au"),
    ])?;
    let header2 = "train_type,train_swap,test_swap,ethnicity_ad,ethnicity_drr,ethnicity_dar,gender_ad,gender_drr,gender_dar,age_ad,age_drr,age_dar";
    for name in ["table2.csv", "table2_filtered.csv"] {
        let rows = expect_header(&dir.join("au").join(name), header2)?;
        let keys: Vec<(&str, &str, &str)> = rows
            .iter()
            .map(|r| (r[0].as_str(), r[1].as_str(), r[2].as_str()))
            .collect();
        if keys != want {
            return Err(format!("{name} rows {keys:?}, want {want:?}"));
        }
    }
    let (_, full) = read_csv(&dir.join("au/table2.csv"))?;
    if full.iter().flatten().any(String::is_empty) {
        return Err("table2.csv has an empty metric cell".into());
    }
    Ok("matrix.csv (4 cells), table1.csv, prediction logs, table2.csv and table2_filtered.csv headers byte-exact; rows keyed by train type, train swap and test swap; consistent column counts".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut failures = 0;
    let mut record = |n: usize, name: &str, outcome: Outcome, elapsed: Duration| {
        report(n, name, &outcome, elapsed);
        failures += usize::from(!outcome.pass);
    };

    let t = Instant::now();
    record(
        1,
        "bias-metric oracle",
        criterion_bias_oracle(),
        t.elapsed(),
    );

    let t = Instant::now();
    let o = criterion_swap_structure().unwrap_or_else(Outcome::failed);
    record(2, "swap structure", o, t.elapsed());

    let t = Instant::now();
    let o = criterion_determinism(dir.path()).unwrap_or_else(Outcome::failed);
    record(3, "determinism", o, t.elapsed());

    let t = Instant::now();
    let trained = match criterion_pipeline() {
        Ok((o, m)) => {
            record(4, "desk-scale pipeline", o, t.elapsed());
            Some(m)
        }
        Err(e) => {
            record(4, "desk-scale pipeline", Outcome::failed(e), t.elapsed());
            None
        }
    };

    let t = Instant::now();
    let o = match &trained {
        Some(m) => criterion_bias_reproduction(m).unwrap_or_else(Outcome::failed),
        None => Outcome::new(false, "no trained detector"),
    };
    record(5, "bias reproduction", o, t.elapsed());

    let t = Instant::now();
    let o = match &trained {
        Some(m) => criterion_interpretability(m).unwrap_or_else(Outcome::failed),
        None => Outcome::new(false, "no trained detector"),
    };
    record(6, "interpretability", o, t.elapsed());

    let t = Instant::now();
    let o = match criterion_report_layout(dir.path()) {
        Ok(d) => Outcome::new(true, d),
        Err(e) => Outcome::new(false, e),
    };
    record(7, "report layout", o, t.elapsed());

    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all 7 criteria passed");
}
