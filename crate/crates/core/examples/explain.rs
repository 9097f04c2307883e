//! Saliency and occlusion maps of the reference detector on a real face
//! and on its swap, written as heatmap overlays.
//!
//! `cargo run --release --example explain -- [out_dir]`

use dataless::detector::{train, ArchitectureRegistry, DetectorConfig};
use dataless::generator::{toy_balanced_collection, BackgroundStyle, SpecStream, ToyGenerator};
use dataless::interpret::{occlusion_map, render_heatmap, saliency_map, OcclusionParams};
use dataless::swapper::{BlendSwap, SwapBackend};
use dataless::FAKE_CLASS;

fn main() -> dataless::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("dataless-explain"));
    std::fs::create_dir_all(&out)?;
    let config = DetectorConfig::toy_reference();
    let res = config.input_resolution;
    let model = train(
        SpecStream::new(1, config.batch_size, res),
        &ToyGenerator::new(),
        &BlendSwap,
        &config,
        &ArchitectureRegistry::default(),
    )?;

    let (faces, _) = toy_balanced_collection(31, 2, res, BackgroundStyle::Stripes)?;
    let swapped = BlendSwap.swap(&faces[0], &faces[1])?;
    for (name, img) in [("real", &faces[1]), ("swapped", &swapped)] {
        let p = model.predict(img)?;
        let sal = saliency_map(&model, img, FAKE_CLASS)?;
        let occ = occlusion_map(
            &model,
            img,
            FAKE_CLASS,
            OcclusionParams::for_resolution(res),
        )?;
        render_heatmap(&sal, img, out.join(format!("{name}_saliency.png")))?;
        render_heatmap(&occ, img, out.join(format!("{name}_occlusion.png")))?;
        occ.save_sidecar(out.join(format!("{name}_occlusion.json")))?;
        println!(
            "{name}: p(fake) {:.3}, saliency peak at {:?}, occlusion peak at {:?}",
            p[FAKE_CLASS],
            sal.argmax(),
            occ.argmax()
        );
    }
    println!("heatmaps written to {}", out.display());
    Ok(())
}
