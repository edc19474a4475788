//! 4-bit shared-base weight quantization: every connection becomes a sign
//! and a 4-bit mask over four base strengths shared by the whole matrix.
//! The quantizer has to pick the bases and the masks together; this demo
//! compares its result against brute force on a small matrix.
//!
//! Run with `cargo run --example weight_quantization`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spikeforge::quantizer::{grid_search_reference, quantize_matrix, QuantizeConfig};

fn main() -> spikeforge::error::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let w = Array2::from_shape_simple_fn((3, 3), || {
        let z: f64 = rng.sample(StandardNormal);
        z
    });

    let outcome = quantize_matrix(&w, &QuantizeConfig::default())?;
    let spec = &outcome.spec;
    println!(
        "base weights: {:.4} / {:.4} / {:.4} / {:.4}",
        spec.base_weights[0], spec.base_weights[1], spec.base_weights[2], spec.base_weights[3]
    );
    println!("\n  original    mask  sign  reconstructed");
    let recon = spec.reconstruct();
    for r in 0..3 {
        for c in 0..3 {
            println!(
                "  {:>9.4}  {:04b}  {:>4}  {:>9.4}",
                w[[r, c]],
                spec.mask[[r, c]],
                spec.sign[[r, c]],
                recon[[r, c]]
            );
        }
    }
    println!("\nreconstruction MSE: {:.6e}", outcome.loss);

    // Brute force over a 64-point log grid per base: slower by orders of
    // magnitude, and the engine should land within a few percent of it.
    let oracle = grid_search_reference(&w, 64)?;
    println!("brute-force MSE:    {:.6e}", oracle.loss);
    println!("engine / oracle:    {:.3}", outcome.loss / oracle.loss);
    Ok(())
}
