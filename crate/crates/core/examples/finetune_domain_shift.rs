//! Fine-tune a synthetic-trained detector on faces from a shifted domain
//! (checkered backgrounds) and compare accuracy there before and after.
//!
//! `cargo run --release --example finetune_domain_shift -- [train_steps]`

use dataless::detector::{finetune, train, ArchitectureRegistry, DetectorConfig};
use dataless::evaluation::{build_test_set, evaluate};
use dataless::generator::{toy_balanced_collection, BackgroundStyle, SpecStream, ToyGenerator};
use dataless::swapper::BlendSwap;

fn main() -> dataless::Result<()> {
    let mut config = DetectorConfig::toy_reference();
    if let Some(steps) = std::env::args().nth(1) {
        config.steps_per_epoch = steps.parse().expect("steps must be a number");
    }
    let res = config.input_resolution;
    let specs = SpecStream::new(1, config.batch_size, res);
    let model = train(
        specs,
        &ToyGenerator::new(),
        &BlendSwap,
        &config,
        &ArchitectureRegistry::default(),
    )?;

    let (stripes, _) = toy_balanced_collection(999, 200, res, BackgroundStyle::Stripes)?;
    let (checker, _) = toy_balanced_collection(998, 200, res, BackgroundStyle::Checker)?;
    let in_domain = build_test_set(&stripes, &BlendSwap)?;
    let shifted = build_test_set(&checker, &BlendSwap)?;

    // 500 real faces from the new domain stand in for a real photo collection.
    let (pool, _) = toy_balanced_collection(4242, 500, res, BackgroundStyle::Checker)?;
    let tuned = finetune(
        &model,
        &pool,
        &BlendSwap,
        pool.len(),
        &DetectorConfig::toy_finetune(),
    )?;

    println!("{:<12} {:>10} {:>10}", "model", "in-domain", "shifted");
    for (name, m) in [("synthetic", &model), ("finetuned", &tuned)] {
        println!(
            "{name:<12} {:>10.4} {:>10.4}",
            evaluate(m, &in_domain)?,
            evaluate(m, &shifted)?
        );
    }
    Ok(())
}
