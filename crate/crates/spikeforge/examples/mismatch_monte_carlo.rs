//! Device mismatch as the training loop sees it: every analog parameter of
//! every neuron gets an independent relative Gaussian error, weights too.
//! Samples many virtual dies and shows the resulting spread of the
//! membrane time constant.
//!
//! Run with `cargo run --example mismatch_monte_carlo`.

use spikeforge::constants::PhysicalConstants;
use spikeforge::mismatch::{sample_mismatch, MismatchSpec};
use spikeforge::runconfig::RunConfig;

fn main() -> spikeforge::error::Result<()> {
    let constants = PhysicalConstants::default();
    let net = RunConfig::default().initial_network()?;
    let spec = MismatchSpec::default().with_sigma(0.2).with_seed(7);

    let n_dies = 3000;
    let nominal_tau = net.params.tau_mem(&constants)?;
    let mut taus = Vec::with_capacity(n_dies);
    let mut zero_weights_moved = 0usize;
    let mut signs_flipped = 0usize;
    for die in 0..n_dies {
        let d = sample_mismatch(&net, &spec, die as u64, &constants)?;
        taus.push(d.params[0].tau_mem(&constants)?);
        for (a, b) in net.w_in.iter().zip(d.w_in.iter()) {
            if *a == 0.0 && *b != 0.0 {
                zero_weights_moved += 1;
            }
            if a.signum() * b.signum() < 0.0 {
                signs_flipped += 1;
            }
        }
    }

    let mean = taus.iter().sum::<f64>() / n_dies as f64;
    let var = taus.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n_dies as f64;
    println!(
        "{} dies at sigma {}: tau_mem nominal {:.2} ms, sampled mean {:.2} ms, \
         spread {:.1}% (expected {:.0}%)",
        n_dies,
        spec.sigma_rel,
        nominal_tau * 1e3,
        mean * 1e3,
        100.0 * var.sqrt() / mean,
        100.0 * spec.sigma_rel
    );
    println!(
        "weight invariants: {zero_weights_moved} zero weights moved, {signs_flipped} signs \
         flipped (both must be 0)\n"
    );

    // The time constant follows 1/itau_mem, so the tau histogram is a
    // (slightly skewed) image of the Gaussian current spread.
    let lo = taus.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = taus.iter().cloned().fold(0.0f64, f64::max);
    let n_bins = 15;
    let width = (hi - lo) / n_bins as f64;
    let mut bins = vec![0usize; n_bins];
    for t in &taus {
        bins[(((t - lo) / width) as usize).min(n_bins - 1)] += 1;
    }
    println!("tau_mem distribution:");
    let peak = *bins.iter().max().unwrap();
    for (k, &count) in bins.iter().enumerate() {
        println!(
            "  {:>5.1} ms {:<50} {count}",
            (lo + width * (k as f64 + 0.5)) * 1e3,
            "#".repeat(50 * count / peak)
        );
    }

    // Same die index, same seed: the draw is frozen and reproducible.
    let a = sample_mismatch(&net, &spec, 5, &constants)?;
    let b = sample_mismatch(&net, &spec, 5, &constants)?;
    println!(
        "\ndraw 5 twice: identical = {}",
        a.params == b.params && a.w_in == b.w_in && a.w_rec == b.w_rec
    );
    Ok(())
}
