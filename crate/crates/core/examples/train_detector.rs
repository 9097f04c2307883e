//! Train the desk-scale detector on generated faces and blend swaps, then
//! report held-out accuracy on both built-in backends.
//!
//! `cargo run --release --example train_detector -- [steps] [checkpoint.json]`
//! The default is the pinned 300-step reference run (about a minute or two).

use dataless::detector::{train, ArchitectureRegistry, DetectorConfig};
use dataless::evaluation::{build_test_set, evaluate};
use dataless::generator::{toy_balanced_collection, BackgroundStyle, SpecStream, ToyGenerator};
use dataless::swapper::{BlendSwap, RecolorSwap, SwapBackend};

fn main() -> dataless::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut config = DetectorConfig::toy_reference();
    if let Some(steps) = args.next() {
        config.steps_per_epoch = steps.parse().expect("steps must be a number");
    }
    let ckpt = args
        .next()
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("dataless-detector.json"));

    let start = std::time::Instant::now();
    let specs = SpecStream::new(1, config.batch_size, config.input_resolution);
    let model = train(
        specs,
        &ToyGenerator::new(),
        &BlendSwap,
        &config,
        &ArchitectureRegistry::default(),
    )?;
    println!(
        "trained {} steps in {:.0?}",
        model.history.len(),
        start.elapsed()
    );

    for chunk in model.history.chunks(model.history.len().div_ceil(10)) {
        let loss = chunk.iter().map(|r| r.loss).sum::<f64>() / chunk.len() as f64;
        let acc = chunk.iter().map(|r| r.accuracy).sum::<f64>() / chunk.len() as f64;
        println!(
            "steps {:>4}-{:<4} loss {loss:.4} batch accuracy {acc:.3}",
            chunk[0].step,
            chunk[chunk.len() - 1].step
        );
    }

    let (held_out, _) =
        toy_balanced_collection(999, 200, config.input_resolution, BackgroundStyle::Stripes)?;
    for backend in [&BlendSwap as &dyn SwapBackend, &RecolorSwap] {
        let acc = evaluate(&model, &build_test_set(&held_out, backend)?)?;
        println!("held-out accuracy, {} swaps: {acc:.4}", backend.id());
    }
    model.save(&ckpt)?;
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}
