//! Audit a detector's errors across ethnicity, gender and age on a balanced
//! toy test set, then corrupt its predictions for one group and audit again.
//!
//! `cargo run --release --example bias_audit -- [train_steps]`

use dataless::bias::{audit, write_table2_csv, AuditRowKey, Axis, Ethnicity, DEFAULT_MIN_SAMPLES};
use dataless::detector::{train, ArchitectureRegistry, DetectorConfig};
use dataless::evaluation::prediction_records;
use dataless::generator::{toy_balanced_collection, BackgroundStyle, SpecStream, ToyGenerator};
use dataless::swapper::BlendSwap;
use dataless::Class;
use rand::{Rng, SeedableRng};

fn main() -> dataless::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .map_or(150, |s| s.parse().expect("steps must be a number"));
    let config = DetectorConfig {
        steps_per_epoch: steps,
        ..DetectorConfig::toy_reference()
    };
    let res = config.input_resolution;
    let model = train(
        SpecStream::new(1, config.batch_size, res),
        &ToyGenerator::new(),
        &BlendSwap,
        &config,
        &ArchitectureRegistry::default(),
    )?;

    let (images, profiles) = toy_balanced_collection(555, 1800, res, BackgroundStyle::Stripes)?;
    let ids: Vec<String> = (0..images.len()).map(|i| format!("face{i:04}")).collect();
    let known: Vec<_> = profiles
        .iter()
        .map(|p| (*p, p.representative_age()))
        .collect();
    let records = prediction_records(&model, &images, &ids, &known, &BlendSwap)?;
    let truths: Vec<Class> = records.iter().map(|r| r.truth).collect();
    let groups: Vec<_> = records.iter().map(|r| r.profile).collect();
    let mut preds: Vec<Class> = records.iter().map(|r| r.prediction).collect();

    let clean = audit(&preds, &truths, &groups, DEFAULT_MIN_SAMPLES)?;
    for facet in &clean.axis(Axis::Ethnicity).facets {
        println!(
            "{:<16} n={:<5} accuracy {:.3} acceptance {:.3} rejection {:.3}{}",
            facet.facet_label,
            facet.n,
            facet.accuracy,
            facet.acceptance_rate.unwrap_or(f64::NAN),
            facet.rejection_rate.unwrap_or(f64::NAN),
            if facet.below_min_samples {
                "  (small)"
            } else {
                ""
            }
        );
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2023);
    for (p, g) in preds.iter_mut().zip(&groups) {
        if g.ethnicity == Ethnicity::Black && rng.random_bool(0.1) {
            *p = p.flipped();
        }
    }
    let corrupted = audit(&preds, &truths, &groups, DEFAULT_MIN_SAMPLES)?;

    let key = |t: &str| AuditRowKey {
        train_type: t.into(),
        train_swap: "blend".into(),
        test_swap: "blend".into(),
    };
    println!();
    write_table2_csv(
        std::io::stdout(),
        &[(key("clean"), &clean), (key("corrupted"), &corrupted)],
        false,
    )?;
    Ok(())
}
