//! Swap consecutive faces of a batch with both built-in backends and save a
//! contact sheet: real faces on the top row, blend swaps, then recolor swaps.
//!
//! `cargo run --example pair_swap -- [out.png]`

use dataless::generator::{generate_batch, GeneratorSpec, ToyGenerator};
use dataless::swapper::{pair_swap_batch, BlendSwap, RecolorSwap, SwapBackend};
use dataless::Image;

fn main() -> dataless::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("dataless-pair-swap.png"));
    let n = 6;
    let side = 64;
    let batch = generate_batch(&GeneratorSpec::new(11, 0.6, n, side), &ToyGenerator::new())?;

    let mut sheet = Image::filled(n * side, 3 * side, [1.0; 3]);
    let mut paste = |img: &Image, col: usize, row: usize| {
        for y in 0..side {
            for x in 0..side {
                sheet.set(col * side + x, row * side + y, img.get(x, y));
            }
        }
    };
    for (i, img) in batch.images.iter().enumerate() {
        paste(img, i, 0);
    }
    let backends: [&dyn SwapBackend; 2] = [&BlendSwap, &RecolorSwap];
    for (row, backend) in backends.into_iter().enumerate() {
        let swapped = pair_swap_batch(&batch, backend)?;
        for (img, p) in swapped.images.iter().zip(&swapped.provenance) {
            // Place each swap under its target face.
            paste(img, p.target_index, row + 1);
        }
        println!(
            "{}: {} swaps from {} faces",
            backend.id(),
            swapped.images.len(),
            n
        );
    }
    sheet.save_png(&out)?;
    println!("contact sheet written to {}", out.display());
    Ok(())
}
