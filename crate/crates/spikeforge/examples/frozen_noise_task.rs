//! The frozen-noise task in simulation: two fixed Poisson patterns must
//! drive their own output neuron, random patterns must leave both outputs
//! balanced. Trains a short run and reports the rate ratios.
//!
//! The shipped defaults (100 000 epochs) push both target ratios above 5;
//! this demo trains 35 000 epochs (about 15 seconds) and shows the separation emerging.
//!
//! Run with `cargo run --example frozen_noise_task`.

use spikeforge::experiment::{evaluate, generate_frozen_noise};
use spikeforge::runconfig::RunConfig;
use spikeforge::training::train;

fn main() -> spikeforge::error::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.train.epochs = 35_000;
    cfg.data.n_test = 50;
    let constants = cfg.constants;

    let data = generate_frozen_noise(&cfg.data)?;
    println!(
        "{} channels at {} Hz for {} ms: 2 frozen targets, {} random test patterns",
        cfg.data.n_channels,
        cfg.data.rate_hz,
        cfg.data.duration_s * 1e3,
        data.tests.len()
    );

    let net = cfg.initial_network()?;
    let before = evaluate(|input| net.evolve(input, &constants), &data)?;
    println!("untrained: {}", before.summary());

    println!(
        "training {} epochs (lr {:e}, mismatch sigma {}, refresh every {})...",
        cfg.train.epochs,
        cfg.train.learning_rate,
        cfg.train.mismatch.sigma_rel,
        cfg.train.mismatch.refresh_period
    );
    let record = train(&net, &data.training_pairs()?, &cfg.train, &constants)?;
    println!(
        "loss {:.6} -> {:.6}",
        record.per_epoch.first().unwrap(),
        record.per_epoch.last().unwrap()
    );

    let after = evaluate(|input| record.net.evolve(input, &constants), &data)?;
    println!("trained:   {}", after.summary());

    println!("\nper-pattern rates (first rows of the evaluation CSV):");
    for line in after.to_csv().lines().take(6) {
        println!("  {line}");
    }
    Ok(())
}
