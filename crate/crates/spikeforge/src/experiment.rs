//! The frozen-noise classification task and its evaluation metrics.
//!
//! The task: two fixed Poisson-like spike patterns (the "targets") are
//! assigned to two output classes. A network is trained so that driving it
//! with target `k` makes output channel `k` fire much faster than the other
//! channel, while fresh random patterns drawn from the same statistics (the
//! "tests") excite both channels about equally. Selectivity is measured by
//! the firing-rate ratio (FRR) of the two output channels.
//!
//! All patterns are Bernoulli spike trains with `p = rate * dt` per step
//! and channel, drawn from one seeded generator. Each sample uses its own
//! RNG stream (targets are streams 0 and 1, test `i` is stream `2 + i`), so
//! any sample can be regenerated on its own and enlarging `n_test` never
//! changes existing samples.

use std::time::Instant;

use rand::distributions::Bernoulli;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::raster::SpikeRaster;
use crate::training::{make_target, train, TrainConfig};

/// Parameters of the frozen-noise task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrozenNoiseParams {
    /// Mean firing rate of every input channel, Hz.
    pub rate_hz: f64,
    /// Pattern length, seconds.
    pub duration_s: f64,
    /// Simulation step, seconds.
    pub dt: f64,
    /// Number of input channels.
    pub n_channels: usize,
    /// Number of held-out random test patterns.
    pub n_test: usize,
    /// Generator seed; fully determines every pattern.
    pub seed: u64,
}

impl Default for FrozenNoiseParams {
    fn default() -> Self {
        FrozenNoiseParams {
            rate_hz: 50.0,
            duration_s: 0.5,
            dt: 1e-3,
            n_channels: 60,
            n_test: 1000,
            seed: 0,
        }
    }
}

impl FrozenNoiseParams {
    pub fn n_steps(&self) -> usize {
        (self.duration_s / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !self.duration_s.is_finite() || self.duration_s < self.dt {
            return Err(Error::invalid(format!(
                "duration {} s must cover at least one step of {} s",
                self.duration_s, self.dt
            )));
        }
        let p = self.rate_hz * self.dt;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "rate {} Hz at dt {} s gives spike probability {p} outside [0, 1]",
                self.rate_hz, self.dt
            )));
        }
        if self.n_channels == 0 {
            return Err(Error::invalid("the task needs at least one input channel"));
        }
        Ok(())
    }
}

/// The generated task data: two frozen target patterns plus test patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenNoiseData {
    pub params: FrozenNoiseParams,
    pub targets: [SpikeRaster; 2],
    pub tests: Vec<SpikeRaster>,
}

impl FrozenNoiseData {
    /// Training pairs for the two-class task: target pattern `k` paired
    /// with a one-hot raster on output channel `k`.
    pub fn training_pairs(&self) -> Result<Vec<(SpikeRaster, SpikeRaster)>> {
        let n_steps = self.params.n_steps();
        Ok(vec![
            (self.targets[0].clone(), make_target(0, n_steps, 2, self.params.dt)?),
            (self.targets[1].clone(), make_target(1, n_steps, 2, self.params.dt)?),
        ])
    }
}

fn noise_raster(params: &FrozenNoiseParams, stream: u64) -> Result<SpikeRaster> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(stream);
    let dist = Bernoulli::new(params.rate_hz * params.dt)
        .map_err(|e| Error::invalid(format!("bad spike probability: {e}")))?;
    let mut raster = SpikeRaster::zeros(params.n_steps(), params.n_channels, params.dt)?;
    for step in 0..params.n_steps() {
        for ch in 0..params.n_channels {
            if rng.sample(dist) {
                raster.set(step, ch, true);
            }
        }
    }
    Ok(raster)
}

/// Generates the full task deterministically from `params.seed`.
pub fn generate_frozen_noise(params: &FrozenNoiseParams) -> Result<FrozenNoiseData> {
    params.validate()?;
    let targets = [noise_raster(params, 0)?, noise_raster(params, 1)?];
    let tests = (0..params.n_test)
        .into_par_iter()
        .map(|i| noise_raster(params, 2 + i as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrozenNoiseData { params: *params, targets, tests })
}

/// Mean firing rate of each channel in Hz: spike count over wall time.
pub fn firing_rates(raster: &SpikeRaster) -> Result<Vec<f64>> {
    if raster.n_steps() == 0 {
        return Err(Error::invalid("cannot compute a rate over zero steps"));
    }
    let wall = raster.n_steps() as f64 * raster.dt();
    Ok((0..raster.n_channels())
        .map(|ch| raster.channel_count(ch) as f64 / wall)
        .collect())
}

/// Ratio `num / den` under the task's conventions: two silent channels have
/// no preference (ratio 1), a silent denominator is infinite preference,
/// and negative or non-finite rates are errors.
fn rate_ratio(num: f64, den: f64) -> Result<f64> {
    if !num.is_finite() || !den.is_finite() || num < 0.0 || den < 0.0 {
        return Err(Error::invalid(format!("rates must be finite and non-negative, got ({num}, {den})")));
    }
    if num == 0.0 && den == 0.0 {
        return Ok(1.0);
    }
    if den == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(num / den)
}

/// Firing-rate ratio of a channel pair: faster over slower, so always at
/// least 1. Both silent is 1, exactly one silent is infinite.
pub fn firing_rate_ratio(a: f64, b: f64) -> Result<f64> {
    // Validate before max/min: f64::max would silently drop a NaN.
    if !a.is_finite() || !b.is_finite() || a < 0.0 || b < 0.0 {
        return Err(Error::invalid(format!("rates must be finite and non-negative, got ({a}, {b})")));
    }
    rate_ratio(a.max(b), a.min(b))
}

/// Output rates and selectivity for one evaluated sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    /// Mean rate of output channels 0 and 1, Hz.
    pub rates: [f64; 2],
    /// For a target row: in-class rate over out-of-class rate, so values
    /// above 1 mean the correct channel wins. For a test row: faster over
    /// slower channel, a pure selectivity magnitude.
    pub frr: f64,
}

/// Evaluation result over the whole task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Response to target 0 and target 1, with directional FRR.
    pub target_rows: [RateRow; 2],
    /// Response to each test pattern, with symmetric FRR.
    pub test_rows: Vec<RateRow>,
    /// Mean output rates across test patterns.
    pub mean_test_rates: [f64; 2],
    /// Symmetric FRR of the mean test rates.
    pub frr_of_mean: f64,
    pub mean_test_frr: f64,
    pub max_test_frr: f64,
}

impl EvalReport {
    /// True when each target drives its own output channel fastest.
    pub fn winners_correct(&self) -> bool {
        self.target_rows.iter().all(|row| row.frr > 1.0)
    }

    /// CSV form, one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,rate0_hz,rate1_hz,frr\n");
        for (k, row) in self.target_rows.iter().enumerate() {
            out.push_str(&format!("target_{k},{},{},{}\n", row.rates[0], row.rates[1], row.frr));
        }
        for (i, row) in self.test_rows.iter().enumerate() {
            out.push_str(&format!("test_{i},{},{},{}\n", row.rates[0], row.rates[1], row.frr));
        }
        out
    }

    /// A short human-readable summary.
    pub fn summary(&self) -> String {
        format!(
            "target FRR: {:.2} / {:.2} (winners {}), test FRR mean {:.3} max {:.3}, \
             mean test rates {:.1} / {:.1} Hz (ratio {:.3}) over {} tests",
            self.target_rows[0].frr,
            self.target_rows[1].frr,
            if self.winners_correct() { "correct" } else { "WRONG" },
            self.mean_test_frr,
            self.max_test_frr,
            self.mean_test_rates[0],
            self.mean_test_rates[1],
            self.frr_of_mean,
            self.test_rows.len()
        )
    }
}

fn rates_pair(output: &SpikeRaster) -> Result<[f64; 2]> {
    if output.n_channels() != 2 {
        return Err(Error::dim(
            "task response",
            "2 output channels",
            format!("{}", output.n_channels()),
        ));
    }
    let r = firing_rates(output)?;
    Ok([r[0], r[1]])
}

/// Runs `respond` on every pattern and scores the task. `respond` is any
/// map from an input raster to a two-channel output raster (a simulated
/// network, a quantized deployment, a device run), evaluated in parallel
/// over test patterns.
///
/// With no test patterns the aggregate test fields take their neutral
/// values (rates 0, ratios 1).
pub fn evaluate<F>(respond: F, data: &FrozenNoiseData) -> Result<EvalReport>
where
    F: Fn(&SpikeRaster) -> Result<SpikeRaster> + Sync,
{
    let target_rows = {
        let mut rows = Vec::with_capacity(2);
        for k in 0..2 {
            let rates = rates_pair(&respond(&data.targets[k])?)?;
            rows.push(RateRow { rates, frr: rate_ratio(rates[k], rates[1 - k])? });
        }
        [rows[0], rows[1]]
    };

    let test_rows: Vec<RateRow> = data
        .tests
        .par_iter()
        .map(|pattern| {
            let rates = rates_pair(&respond(pattern)?)?;
            Ok(RateRow { rates, frr: firing_rate_ratio(rates[0], rates[1])? })
        })
        .collect::<Result<_>>()?;

    let n = test_rows.len() as f64;
    let (mean_test_rates, frr_of_mean, mean_test_frr, max_test_frr) = if test_rows.is_empty() {
        ([0.0, 0.0], 1.0, 1.0, 1.0)
    } else {
        let mean = [
            test_rows.iter().map(|r| r.rates[0]).sum::<f64>() / n,
            test_rows.iter().map(|r| r.rates[1]).sum::<f64>() / n,
        ];
        (
            mean,
            firing_rate_ratio(mean[0], mean[1])?,
            test_rows.iter().map(|r| r.frr).sum::<f64>() / n,
            test_rows.iter().map(|r| r.frr).fold(f64::NEG_INFINITY, f64::max),
        )
    };

    Ok(EvalReport {
        target_rows,
        test_rows,
        mean_test_rates,
        frr_of_mean,
        mean_test_frr,
        max_test_frr,
    })
}

/// Training throughput measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub epochs: u32,
    pub wall_seconds: f64,
    pub epochs_per_second: f64,
    pub threads: usize,
}

/// Times `train` end to end: `warmup_epochs` untimed epochs first (page in
/// caches, spin up the thread pool), then `cfg.epochs` timed ones.
pub fn bench_training(
    net: &Network,
    data: &[(SpikeRaster, SpikeRaster)],
    cfg: &TrainConfig,
    warmup_epochs: u32,
    constants: &PhysicalConstants,
) -> Result<BenchReport> {
    if cfg.epochs == 0 {
        return Err(Error::invalid("benchmark needs at least one timed epoch"));
    }
    if warmup_epochs > 0 {
        let warm = TrainConfig { epochs: warmup_epochs, ..cfg.clone() };
        train(net, data, &warm, constants)?;
    }
    let start = Instant::now();
    train(net, data, cfg, constants)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    Ok(BenchReport {
        epochs: cfg.epochs,
        wall_seconds,
        epochs_per_second: cfg.epochs as f64 / wall_seconds,
        threads: rayon::current_num_threads(),
    })
}
