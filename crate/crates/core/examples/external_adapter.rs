//! Plug an external face swapper in through the subprocess protocol. The
//! stand-in adapter is a shell script that returns the target unchanged, so
//! every "swap" is an exact copy of its target.
//!
//! `cargo run --example external_adapter` (Unix only)

use std::os::unix::fs::PermissionsExt;

use dataless::adapter::ExternalCommand;
use dataless::generator::{generate_batch, GeneratorSpec, ToyGenerator};
use dataless::swapper::{pair_swap_batch, ExternalSwapBackend, SwapBackend};

const SCRIPT: &str = r#"#!/bin/sh
# Called as: <adapter> --source s.png --target t.png --out o.png
while [ $# -gt 0 ]; do
  case "$1" in
    --target) target="$2"; shift 2 ;;
    --out) out="$2"; shift 2 ;;
    *) shift 2 ;;
  esac
done
cp "$target" "$out"
"#;

fn main() -> dataless::Result<()> {
    let dir = std::env::temp_dir().join("dataless-adapter");
    std::fs::create_dir_all(&dir)?;
    let script = dir.join("keep-target");
    std::fs::write(&script, SCRIPT)?;
    std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755))?;

    // A bare name would be looked up on DATALESS_ADAPTER_PATH, then PATH.
    let backend = ExternalSwapBackend::new(ExternalCommand::resolve(script.to_str().unwrap())?);
    let batch = generate_batch(&GeneratorSpec::new(5, 0.5, 4, 32), &ToyGenerator::new())?;
    let swapped = pair_swap_batch(&batch, &backend)?;
    for (img, p) in swapped.images.iter().zip(&swapped.provenance) {
        // Images cross the process boundary as 8-bit PNGs, so expect up to half a level.
        let target = &batch.images[p.target_index];
        let dev = img
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "{} -> {} via {}: max deviation from target {dev:.5}",
            p.source_index,
            p.target_index,
            backend.id()
        );
    }
    Ok(())
}
