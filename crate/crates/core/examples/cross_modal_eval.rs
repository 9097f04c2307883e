//! Train one detector per swap backend, test each on every backend and two
//! datasets, and print the matrix as a Table-1-shaped CSV.
//!
//! `cargo run --release --example cross_modal_eval -- [steps]`

use dataless::detector::{train, ArchitectureRegistry, DetectorConfig};
use dataless::evaluation::{cross_modal_matrix, TrainKey};
use dataless::generator::{toy_balanced_collection, BackgroundStyle, SpecStream, ToyGenerator};
use dataless::swapper::{BlendSwap, RecolorSwap, SwapBackend};

fn main() -> dataless::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .map_or(120, |s| s.parse().expect("steps must be a number"));
    let config = DetectorConfig {
        steps_per_epoch: steps,
        ..DetectorConfig::toy_reference()
    };
    let res = config.input_resolution;
    let backends: [&dyn SwapBackend; 2] = [&BlendSwap, &RecolorSwap];
    let models = backends
        .iter()
        .map(|b| {
            let specs = SpecStream::new(1, config.batch_size, res);
            train(
                specs,
                &ToyGenerator::new(),
                *b,
                &config,
                &ArchitectureRegistry::default(),
            )
        })
        .collect::<dataless::Result<Vec<_>>>()?;
    let keyed: Vec<_> = models.iter().map(|m| (TrainKey::of(m), m)).collect();

    let datasets = vec![
        (
            "stripes".to_string(),
            toy_balanced_collection(999, 150, res, BackgroundStyle::Stripes)?.0,
        ),
        (
            "checker".to_string(),
            toy_balanced_collection(998, 150, res, BackgroundStyle::Checker)?.0,
        ),
    ];
    let matrix = cross_modal_matrix(&keyed, &backends, &datasets)?;
    matrix.write_table1_csv(std::io::stdout())?;
    Ok(())
}
