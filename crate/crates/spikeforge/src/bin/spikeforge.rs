//! Command-line front end for the pipeline: data generation, training,
//! evaluation, mapping, quantization, deployment, virtual-device runs and
//! the end-to-end reproduction.
//!
//! Every subcommand writes its artifacts under an output location plus a
//! `manifest.json` recording the tool version, the effective seed and the
//! SHA-256 of each written file. A single `--seed` overrides every stage
//! seed so one number pins the whole pipeline.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use spikeforge::constants::PhysicalConstants;
use spikeforge::device::{load_events, raster_to_aer, save_events, VirtualDevice};
use spikeforge::error::{Error, Result};
use spikeforge::experiment::{
    bench_training, evaluate, generate_frozen_noise, EvalReport, FrozenNoiseData,
    FrozenNoiseParams,
};
use spikeforge::graph::{as_graph, NetGraph};
use spikeforge::hwconfig::{
    config_from_specification, net_from_config, BiasTable, DeviceConfig,
};
use spikeforge::mapper::{map_graph, HardwareSpec};
use spikeforge::mismatch::MismatchSpec;
use spikeforge::network::LayeredNet;
use spikeforge::quantizer::{quantize_spec, QuantizedSpec};
use spikeforge::raster::SpikeRaster;
use spikeforge::runconfig::{Checkpoint, Manifest, RunConfig};
use spikeforge::training::{train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "spikeforge",
    version,
    about = "Train spiking networks against an analog neuromorphic chip model, \
             quantize them to 4-bit hardware weights and run the deployed \
             configuration on a virtual device"
)]
struct Cli {
    /// Master seed: overrides the weight, data, training and mismatch seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration; missing keys take the built-in defaults.
    /// Given before the subcommand (run-device and reverse use --config
    /// after the subcommand for the device configuration).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the frozen-noise task data and write the target patterns
    /// as AER event files.
    GenData {
        /// Output directory.
        #[arg(long, default_value = "runs/data")]
        out: PathBuf,
    },
    /// Train the network on the frozen-noise task with mismatch injection.
    Train {
        /// Data directory from gen-data; defaults to regenerating from the
        /// run configuration.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Training epochs.
        #[arg(long)]
        epochs: Option<u32>,
        /// Adam learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Mismatch spread (relative sigma) during training.
        #[arg(long)]
        mismatch_sigma: Option<f64>,
        /// Epochs between fresh mismatch draws.
        #[arg(long)]
        mismatch_period: Option<u32>,
        /// Seed of the training mismatch draws only.
        #[arg(long)]
        mismatch_seed: Option<u64>,
        /// Gradient-sign weight perturbation step on non-refresh epochs.
        #[arg(long)]
        adversarial_step: Option<f64>,
        /// Checkpoint file to write; the loss curve CSV and manifest go
        /// next to it.
        #[arg(long, default_value = "runs/train/checkpoint.json")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the task: rates and rate ratios for the
    /// targets and the random test set.
    Evaluate {
        /// Checkpoint produced by train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Data directory from gen-data; defaults to regenerating.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "runs/evaluate")]
        out: PathBuf,
    },
    /// Map a network graph (or a checkpoint) onto cores and chips.
    Map {
        /// Graph JSON or checkpoint JSON; detected by content.
        #[arg(long)]
        graph: PathBuf,
        /// Override the number of available chips.
        #[arg(long)]
        chips: Option<usize>,
        /// Hardware specification file to write.
        #[arg(long, default_value = "runs/map/spec.json")]
        out: PathBuf,
    },
    /// Quantize the mapped weights to the 4-bit shared-base scheme.
    Quantize {
        /// Hardware specification from map.
        #[arg(long)]
        spec: PathBuf,
        /// Quantization file to write.
        #[arg(long, default_value = "runs/quantize/quant.json")]
        out: PathBuf,
    },
    /// Translate a mapped and quantized network into a device
    /// configuration (CAM entries, bias codes).
    Deploy {
        /// Hardware specification from map.
        #[arg(long)]
        spec: PathBuf,
        /// Quantization from quantize.
        #[arg(long)]
        quant: PathBuf,
        /// Bias table CSV (coarse,fine,current_ampere); defaults to the
        /// built-in synthetic table, which is then written next to the
        /// output for reference.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Device configuration file to write.
        #[arg(long, default_value = "runs/deploy/config.json")]
        out: PathBuf,
    },
    /// Run an AER event stream through the virtual device.
    RunDevice {
        /// Device configuration from deploy.
        #[arg(long)]
        config: PathBuf,
        /// Input AER CSV (timestamp_us,address).
        #[arg(long)]
        input: PathBuf,
        /// Mismatch spread of the simulated die; 0 disables mismatch.
        #[arg(long, default_value_t = 0.2)]
        sigma: f64,
        /// Bias table CSV; defaults to the built-in synthetic table.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Run window in microseconds; defaults to the end of the last
        /// input step.
        #[arg(long)]
        duration_us: Option<u64>,
        /// Output AER CSV to write.
        #[arg(long, default_value = "runs/device/output.csv")]
        out: PathBuf,
    },
    /// Decode a device configuration back into a simulatable network.
    Reverse {
        /// Device configuration from deploy.
        #[arg(long)]
        config: PathBuf,
        /// Bias table CSV; defaults to the built-in synthetic table.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Decoded network JSON to write.
        #[arg(long, default_value = "runs/reverse/net.json")]
        out: PathBuf,
    },
    /// Measure training throughput in epochs per second.
    Bench {
        /// Timed epochs.
        #[arg(long, default_value_t = 1000)]
        epochs: u32,
        /// Untimed warm-up epochs.
        #[arg(long, default_value_t = 100)]
        warmup: u32,
        /// Output directory.
        #[arg(long, default_value = "runs/bench")]
        out: PathBuf,
    },
    /// Run the whole pipeline under one seed: generate, train, evaluate,
    /// map, quantize, deploy, run on the virtual device, evaluate again.
    Repro {
        /// Test samples evaluated on the virtual device (the full set is
        /// still evaluated in simulation).
        #[arg(long, default_value_t = 10)]
        device_tests: usize,
        /// Mismatch seeds checked for correct winner ordering.
        #[arg(long, default_value_t = 10)]
        device_seeds: u64,
        /// Output directory.
        #[arg(long, default_value = "runs/repro")]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

/// Loads the run configuration and applies the master seed override to
/// every stage seed.
fn effective_config(cli_seed: Option<u64>, config: &Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli_seed {
        cfg.seed = seed;
        cfg.data.seed = seed;
        cfg.train.seed = seed;
        cfg.train.mismatch.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if p != Path::new("") => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Loads task parameters from a gen-data directory, or falls back to the
/// run configuration.
fn task_params(data: &Option<PathBuf>, cfg: &RunConfig) -> Result<FrozenNoiseParams> {
    match data {
        Some(dir) => {
            let text = std::fs::read_to_string(dir.join("data_params.toml"))?;
            let params: FrozenNoiseParams = toml::from_str(&text)?;
            params.validate()?;
            Ok(params)
        }
        None => Ok(cfg.data.clone()),
    }
}

fn load_table(table: &Option<PathBuf>) -> Result<BiasTable> {
    match table {
        Some(path) => BiasTable::load(path),
        None => Ok(BiasTable::synthetic()),
    }
}

/// Histogram of the test-sample rate ratios as `bin_lo,bin_hi,count` CSV,
/// bins of width 0.1 starting at 1 (symmetric ratios cannot be smaller).
fn frr_histogram_csv(report: &EvalReport) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    let finite_max = report
        .test_rows
        .iter()
        .map(|r| r.frr)
        .filter(|f| f.is_finite())
        .fold(1.0f64, f64::max);
    let n_bins = ((finite_max - 1.0) / 0.1).floor() as usize + 1;
    let mut counts = vec![0usize; n_bins + 1];
    for row in &report.test_rows {
        if row.frr.is_finite() {
            let bin = (((row.frr - 1.0) / 0.1).floor() as usize).min(n_bins - 1);
            counts[bin] += 1;
        } else {
            // Infinite ratio: one channel fully silent on a test pattern.
            counts[n_bins] += 1;
        }
    }
    for (bin, &count) in counts.iter().take(n_bins).enumerate() {
        let lo = 1.0 + 0.1 * bin as f64;
        out.push_str(&format!("{:.1},{:.1},{}\n", lo, lo + 0.1, count));
    }
    if counts[n_bins] > 0 {
        out.push_str(&format!("{:.1},inf,{}\n", 1.0 + 0.1 * n_bins as f64, counts[n_bins]));
    }
    out
}

fn write_text(path: &Path, text: &str, manifest: &mut Manifest) -> Result<()> {
    std::fs::write(path, text)?;
    manifest.record(path)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(cli.seed, &cli.config)?;
    let constants = cfg.constants;

    match cli.command {
        Command::GenData { out } => {
            ensure_dir(&out)?;
            let mut manifest = Manifest::new(cfg.data.seed);
            let data = generate_frozen_noise(&cfg.data)?;

            let params_toml = toml::to_string_pretty(&cfg.data)
                .map_err(|e| Error::invalid(format!("cannot serialize task parameters: {e}")))?;
            write_text(&out.join("data_params.toml"), &params_toml, &mut manifest)?;
            for (k, target) in data.targets.iter().enumerate() {
                let path = out.join(format!("target_{k}.csv"));
                save_events(&raster_to_aer(target), &path)?;
                manifest.record(&path)?;
            }
            manifest.save(out.join("manifest.json"))?;

            println!(
                "wrote {} channels x {} steps, 2 targets + {} test patterns (regenerable \
                 from seed {}) to {}",
                cfg.data.n_channels,
                cfg.data.n_steps(),
                data.tests.len(),
                cfg.data.seed,
                out.display()
            );
        }

        Command::Train {
            data,
            epochs,
            lr,
            mismatch_sigma,
            mismatch_period,
            mismatch_seed,
            adversarial_step,
            out,
        } => {
            let mut run_cfg = cfg.clone();
            run_cfg.data = task_params(&data, &cfg)?;
            if let Some(e) = epochs {
                run_cfg.train.epochs = e;
            }
            if let Some(lr) = lr {
                run_cfg.train.learning_rate = lr;
            }
            if let Some(s) = mismatch_sigma {
                run_cfg.train.mismatch.sigma_rel = s;
            }
            if let Some(p) = mismatch_period {
                run_cfg.train.mismatch.refresh_period = p;
            }
            if let Some(s) = mismatch_seed {
                run_cfg.train.mismatch.seed = s;
            }
            if let Some(a) = adversarial_step {
                run_cfg.train.mismatch.adversarial_step = a;
            }
            run_cfg.validate()?;

            let dir = parent_dir(&out);
            ensure_dir(&dir)?;
            let mut manifest = Manifest::new(run_cfg.seed);

            let task = generate_frozen_noise(&run_cfg.data)?;
            let pairs = task.training_pairs()?;
            let net = run_cfg.initial_network()?;
            println!(
                "training {}->{} network for {} epochs (lr {:e}, mismatch sigma {})",
                run_cfg.data.n_channels,
                run_cfg.n_neurons,
                run_cfg.train.epochs,
                run_cfg.train.learning_rate,
                run_cfg.train.mismatch.sigma_rel
            );
            let start = Instant::now();
            let record = train(&net, &pairs, &run_cfg.train, &constants)?;
            let seconds = start.elapsed().as_secs_f64();

            let checkpoint = Checkpoint::new(&record.net, &run_cfg.train, record.per_epoch);
            checkpoint.save(&out)?;
            manifest.record(&out)?;
            write_text(&dir.join("loss_curve.csv"), &checkpoint.loss_csv(), &mut manifest)?;
            write_text(&dir.join("run_config.toml"), &run_cfg.to_toml()?, &mut manifest)?;
            manifest.save(dir.join("manifest.json"))?;

            let first = checkpoint.loss_curve.first().copied().unwrap_or(f64::NAN);
            let last = checkpoint.loss_curve.last().copied().unwrap_or(f64::NAN);
            println!(
                "loss {first:.6} -> {last:.6} in {seconds:.0} s ({:.0} epochs/s), checkpoint \
                 at {}",
                run_cfg.train.epochs as f64 / seconds,
                out.display()
            );
        }

        Command::Evaluate { checkpoint, data, out } => {
            ensure_dir(&out)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let net = ck.network()?;
            let params = task_params(&data, &cfg)?;
            if net.n_inputs() != params.n_channels {
                return Err(Error::dim(
                    "checkpoint inputs vs task channels",
                    net.n_inputs().to_string(),
                    params.n_channels.to_string(),
                ));
            }
            let task = generate_frozen_noise(&params)?;
            let report = evaluate(|input| net.evolve(input, &constants), &task)?;

            let mut manifest = Manifest::new(params.seed);
            write_text(&out.join("eval.csv"), &report.to_csv(), &mut manifest)?;
            write_text(&out.join("frr_histogram.csv"), &frr_histogram_csv(&report), &mut manifest)?;
            manifest.save(out.join("manifest.json"))?;
            println!("{}", report.summary());
        }

        Command::Map { graph, chips, out } => {
            let text = std::fs::read_to_string(&graph)?;
            // The file may be a graph export or a training checkpoint;
            // both are JSON, so try them in that order.
            let net_graph = match serde_json::from_str::<NetGraph>(&text) {
                Ok(g) => g,
                Err(graph_err) => match serde_json::from_str::<Checkpoint>(&text) {
                    Ok(ck) => as_graph(&LayeredNet::single(ck.network()?))?,
                    Err(ck_err) => {
                        return Err(Error::invalid(format!(
                            "'{}' is neither a graph ({graph_err}) nor a checkpoint ({ck_err})",
                            graph.display()
                        )))
                    }
                },
            };
            let mut limits = cfg.limits.clone();
            if let Some(chips) = chips {
                limits.chips = chips;
            }
            let spec = map_graph(&net_graph, &limits, &constants)?;

            let dir = parent_dir(&out);
            ensure_dir(&dir)?;
            spec.save(&out)?;
            let mut manifest = Manifest::new(cfg.seed);
            manifest.record(&out)?;
            manifest.save(dir.join("manifest.json"))?;
            println!(
                "mapped {} virtual inputs and {} neurons into {} clusters, spec at {}",
                spec.n_virtual,
                spec.n_hw(),
                spec.clusters.len(),
                out.display()
            );
        }

        Command::Quantize { spec, out } => {
            let spec = HardwareSpec::load(&spec)?;
            let start = Instant::now();
            let quant = quantize_spec(&spec, &cfg.quantize)?;
            let seconds = start.elapsed().as_secs_f64();

            let dir = parent_dir(&out);
            ensure_dir(&dir)?;
            quant.save(&out)?;
            let mut manifest = Manifest::new(cfg.seed);
            manifest.record(&out)?;
            manifest.save(dir.join("manifest.json"))?;
            for cl in &quant.clusters {
                println!(
                    "cluster {}: {} neurons, base currents {:.3e}/{:.3e}/{:.3e}/{:.3e} A, \
                     reconstruction MSE {:.3e}",
                    cl.cluster,
                    cl.neurons.len(),
                    cl.base_amperes[0],
                    cl.base_amperes[1],
                    cl.base_amperes[2],
                    cl.base_amperes[3],
                    cl.loss
                );
            }
            println!("quantized in {seconds:.1} s, result at {}", out.display());
        }

        Command::Deploy { spec, quant, table, out } => {
            let spec = HardwareSpec::load(&spec)?;
            let quant = QuantizedSpec::load(&quant)?;
            let bias_table = load_table(&table)?;

            let dir = parent_dir(&out);
            ensure_dir(&dir)?;
            let mut manifest = Manifest::new(cfg.seed);
            if table.is_none() {
                // Ship the table the codes refer to, otherwise the config
                // alone is not decodable.
                let path = dir.join("bias_table.csv");
                bias_table.save(&path)?;
                manifest.record(&path)?;
            }
            let config = config_from_specification(&spec, &quant, &bias_table)?;
            config.save(&out)?;
            manifest.record(&out)?;
            manifest.save(dir.join("manifest.json"))?;
            println!(
                "device configuration for {} neurons written to {}",
                spec.n_hw(),
                out.display()
            );
        }

        Command::RunDevice { config, input, sigma, table, duration_us, out } => {
            let config = DeviceConfig::load(&config)?;
            let bias_table = load_table(&table)?;
            let mismatch =
                MismatchSpec::default().with_sigma(sigma).with_seed(cfg.seed);
            let device = VirtualDevice::new(&config, &bias_table, &mismatch, &constants)?;
            let events = load_events(&input)?;

            let dt_us = (device.dt() * 1e6).round() as u64;
            let duration = match duration_us {
                Some(d) => d,
                None => {
                    let last = events
                        .last()
                        .ok_or_else(|| {
                            Error::invalid(
                                "empty input stream; give --duration-us for a silent run",
                            )
                        })?
                        .timestamp_us;
                    (last / dt_us + 1) * dt_us
                }
            };
            let output = device.run(&events, duration)?;

            let dir = parent_dir(&out);
            ensure_dir(&dir)?;
            save_events(&output, &out)?;
            let mut manifest = Manifest::new(cfg.seed);
            manifest.record(&out)?;
            manifest.save(dir.join("manifest.json"))?;

            let mut per_tag: Vec<(u32, usize)> =
                device.hw_tags().iter().map(|&t| (t, 0)).collect();
            for e in &output {
                if let Some(entry) = per_tag.iter_mut().find(|(t, _)| *t == e.address) {
                    entry.1 += 1;
                }
            }
            let rates: Vec<String> = per_tag
                .iter()
                .map(|(t, n)| format!("{t}: {:.1} Hz", *n as f64 / (duration as f64 * 1e-6)))
                .collect();
            println!(
                "die seed {} (sigma {sigma}): {} input events over {} us -> {} output events \
                 ({}), stream at {}",
                cfg.seed,
                events.len(),
                duration,
                output.len(),
                rates.join(", "),
                out.display()
            );
        }

        Command::Reverse { config, table, out } => {
            let config = DeviceConfig::load(&config)?;
            let bias_table = load_table(&table)?;
            let net = net_from_config(&config, &bias_table, &constants)?;

            let dir = parent_dir(&out);
            ensure_dir(&dir)?;
            std::fs::write(&out, serde_json::to_string_pretty(&net)?)?;
            let mut manifest = Manifest::new(cfg.seed);
            manifest.record(&out)?;
            manifest.save(dir.join("manifest.json"))?;
            println!(
                "decoded {} virtual inputs and {} neurons (tags {:?}) to {}",
                net.n_virtual,
                net.n_neurons(),
                net.hw_tags,
                out.display()
            );
        }

        Command::Bench { epochs, warmup, out } => {
            ensure_dir(&out)?;
            let task = generate_frozen_noise(&cfg.data)?;
            let pairs = task.training_pairs()?;
            let net = cfg.initial_network()?;
            let bench_cfg = TrainConfig { epochs, ..cfg.train.clone() };
            let report = bench_training(&net, &pairs, &bench_cfg, warmup, &constants)?;

            let mut manifest = Manifest::new(cfg.seed);
            write_text(
                &out.join("bench.json"),
                &serde_json::to_string_pretty(&report)?,
                &mut manifest,
            )?;
            manifest.save(out.join("manifest.json"))?;
            println!(
                "{:.0} epochs/s ({} epochs in {:.2} s on {} threads)",
                report.epochs_per_second, report.epochs, report.wall_seconds, report.threads
            );
        }

        Command::Repro { device_tests, device_seeds, out } => {
            repro(&cfg, &constants, device_tests, device_seeds, &out)?;
        }
    }
    Ok(())
}

/// One row of the reproduction summary: where the network ran and what the
/// task report said.
fn summary_row(stage: &str, report: &EvalReport) -> String {
    format!(
        "{stage},{:.4},{:.4},{},{:.4},{:.4}\n",
        report.target_rows[0].frr,
        report.target_rows[1].frr,
        report.winners_correct(),
        report.mean_test_frr,
        report.max_test_frr
    )
}

fn print_row(stage: &str, report: &EvalReport) {
    println!(
        "{stage:<10} {:>8.2} {:>8.2} {:>8} {:>9.3} {:>8.3}",
        report.target_rows[0].frr,
        report.target_rows[1].frr,
        if report.winners_correct() { "yes" } else { "no" },
        report.mean_test_frr,
        report.max_test_frr
    );
}

/// The full pipeline under one seed: every stage writes its artifact into
/// `out` and the manifest records them all.
fn repro(
    cfg: &RunConfig,
    constants: &PhysicalConstants,
    device_tests: usize,
    device_seeds: u64,
    out: &Path,
) -> Result<()> {
    ensure_dir(out)?;
    let mut manifest = Manifest::new(cfg.seed);
    let total = Instant::now();

    write_text(&out.join("run_config.toml"), &cfg.to_toml()?, &mut manifest)?;

    // Task data; the two target patterns double as device input streams.
    let data = generate_frozen_noise(&cfg.data)?;
    for (k, target) in data.targets.iter().enumerate() {
        let path = out.join(format!("target_{k}.csv"));
        save_events(&raster_to_aer(target), &path)?;
        manifest.record(&path)?;
    }

    // Training.
    println!(
        "training {}->{} network, {} epochs...",
        cfg.data.n_channels, cfg.n_neurons, cfg.train.epochs
    );
    let start = Instant::now();
    let record = train(&cfg.initial_network()?, &data.training_pairs()?, &cfg.train, constants)?;
    println!(
        "  loss {:.6} -> {:.6} in {:.0} s",
        record.per_epoch.first().copied().unwrap_or(f64::NAN),
        record.per_epoch.last().copied().unwrap_or(f64::NAN),
        start.elapsed().as_secs_f64()
    );
    let trained = record.net.clone();
    let checkpoint = Checkpoint::new(&record.net, &cfg.train, record.per_epoch);
    checkpoint.save(out.join("checkpoint.json"))?;
    manifest.record(out.join("checkpoint.json"))?;
    write_text(&out.join("loss_curve.csv"), &checkpoint.loss_csv(), &mut manifest)?;

    // Nominal evaluation.
    let nominal = evaluate(|input| trained.evolve(input, constants), &data)?;
    write_text(&out.join("eval_nominal.csv"), &nominal.to_csv(), &mut manifest)?;
    write_text(&out.join("frr_histogram.csv"), &frr_histogram_csv(&nominal), &mut manifest)?;

    // Mapping and quantization.
    let spec = map_graph(&as_graph(&LayeredNet::single(trained))?, &cfg.limits, constants)?;
    spec.save(&out.join("spec.json"))?;
    manifest.record(out.join("spec.json"))?;
    let quant = quantize_spec(&spec, &cfg.quantize)?;
    quant.save(&out.join("quant.json"))?;
    manifest.record(out.join("quant.json"))?;
    let quantized = evaluate(|input| quant.simulate(&spec, input, constants), &data)?;
    write_text(&out.join("eval_quantized.csv"), &quantized.to_csv(), &mut manifest)?;

    // Deployment.
    let table = BiasTable::synthetic();
    table.save(&out.join("bias_table.csv"))?;
    manifest.record(out.join("bias_table.csv"))?;
    let config = config_from_specification(&spec, &quant, &table)?;
    config.save(&out.join("config.json"))?;
    manifest.record(out.join("config.json"))?;

    // One die (mismatch drawn from the master seed) evaluated over the
    // targets and a small test subset, through the AER interface.
    let sigma = cfg.train.mismatch.sigma_rel;
    let mismatch = MismatchSpec::default().with_sigma(sigma).with_seed(cfg.seed);
    let device = VirtualDevice::new(&config, &table, &mismatch, constants)?;
    let mut device_data = FrozenNoiseData {
        params: cfg.data.clone(),
        targets: data.targets.clone(),
        tests: data.tests.iter().take(device_tests).cloned().collect(),
    };
    device_data.params.n_test = device_data.tests.len();
    let tag_of_col = device.hw_tags().to_vec();
    let run_on_device = |input: &SpikeRaster| -> spikeforge::error::Result<SpikeRaster> {
        let duration = (input.n_steps() as f64 * device.dt() * 1e6).round() as u64;
        let events = device.run(&raster_to_aer(input), duration)?;
        let mut raster =
            SpikeRaster::zeros(input.n_steps(), tag_of_col.len(), device.dt())?;
        let dt_us = device.dt() * 1e6;
        for e in &events {
            let col = tag_of_col.iter().position(|&t| t == e.address).unwrap();
            raster.set((e.timestamp_us as f64 / dt_us).floor() as usize, col, true);
        }
        Ok(raster)
    };
    let device_report = evaluate(run_on_device, &device_data)?;
    write_text(&out.join("eval_device.csv"), &device_report.to_csv(), &mut manifest)?;
    for (k, target) in data.targets.iter().enumerate() {
        let duration = (target.n_steps() as f64 * device.dt() * 1e6).round() as u64;
        let events = device.run(&raster_to_aer(target), duration)?;
        let path = out.join(format!("device_target_{k}.csv"));
        save_events(&events, &path)?;
        manifest.record(&path)?;
    }

    // Winner ordering across independent dies, as a yield check.
    let mut ordered = 0;
    for seed in 0..device_seeds {
        let die = VirtualDevice::new(
            &config,
            &table,
            &MismatchSpec::default().with_sigma(sigma).with_seed(seed),
            constants,
        )?;
        let good = (0..2).all(|class| {
            let rates = die
                .run_raster(&data.targets[class])
                .map(|r| [r.channel_count(0), r.channel_count(1)])
                .unwrap_or([0, 0]);
            rates[class] > rates[1 - class]
        });
        if good {
            ordered += 1;
        }
    }

    let mut summary =
        String::from("stage,frr_target_0,frr_target_1,winners_correct,mean_test_frr,max_test_frr\n");
    summary.push_str(&summary_row("nominal", &nominal));
    summary.push_str(&summary_row("quantized", &quantized));
    summary.push_str(&summary_row("device", &device_report));
    write_text(&out.join("summary.csv"), &summary, &mut manifest)?;
    manifest.save(out.join("manifest.json"))?;

    println!();
    println!(
        "{:<10} {:>8} {:>8} {:>8} {:>9} {:>8}",
        "stage", "frr_t0", "frr_t1", "winners", "mean_test", "max_test"
    );
    print_row("nominal", &nominal);
    print_row("quantized", &quantized);
    print_row("device", &device_report);
    println!(
        "\ndevice winner ordering correct on {ordered}/{device_seeds} dies (sigma {sigma}); \
         device rows use {} test samples",
        device_data.tests.len()
    );
    println!(
        "pipeline done in {:.0} s, artifacts and manifest in {}",
        total.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}
