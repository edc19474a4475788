//! Address-event streams and a virtual device that executes configurations.
//!
//! The hardware communicates exclusively in address events: a spike is a
//! pair (timestamp, address) on an asynchronous bus. This module converts
//! between spike rasters and event streams and provides [`VirtualDevice`],
//! a software stand-in for a configured chip. The device decodes a
//! [`DeviceConfig`] back into currents and weights, optionally applies one
//! frozen fabrication-mismatch draw (the deployed chip is a single silicon
//! instance, not a fresh draw per run), and turns input event streams into
//! output event streams.
//!
//! Timestamps are microseconds. A raster step `k` emits its events at
//! `round(k * dt * 1e6)` and an incoming event at `t` lands in step
//! `floor(t / (dt * 1e6))`, so conversions round-trip whenever `dt` is at
//! least a few microseconds. Several events in one step and channel
//! collapse to a single spike, exactly as the clocked simulation would see
//! them.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::hwconfig::{net_from_config, BiasTable, DecodedNet, DeviceConfig};
use crate::mismatch::{perturb_params, perturb_weights, MismatchSpec};
use crate::raster::SpikeRaster;

/// One address event: a spike from `address` at `timestamp_us` microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AerEvent {
    pub timestamp_us: u64,
    pub address: u32,
}

/// Converts a raster into a sorted event stream. Channel indices become
/// addresses unchanged; step `k` is stamped `round(k * dt * 1e6)`.
pub fn raster_to_aer(raster: &SpikeRaster) -> Vec<AerEvent> {
    let dt_us = raster.dt() * 1e6;
    raster
        .events()
        .into_iter()
        .map(|(step, ch)| AerEvent {
            timestamp_us: (step as f64 * dt_us).round() as u64,
            address: ch as u32,
        })
        .collect()
}

/// Bins a sorted event stream into a raster of `n_steps` steps of `dt`
/// seconds. Multiple events in one bin saturate to a single spike.
///
/// The stream must be sorted by timestamp, every address must be below
/// `n_channels` and every event must land inside the window; violations are
/// errors rather than silent drops because they always indicate a mismatch
/// between producer and consumer.
pub fn aer_to_raster(
    events: &[AerEvent],
    n_steps: usize,
    n_channels: usize,
    dt: f64,
) -> Result<SpikeRaster> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let mut raster = SpikeRaster::zeros(n_steps, n_channels, dt)?;
    let dt_us = dt * 1e6;
    let mut last = 0u64;
    for (k, e) in events.iter().enumerate() {
        if e.timestamp_us < last {
            return Err(Error::invalid(format!(
                "event stream is not sorted: event {k} at {} us follows one at {last} us",
                e.timestamp_us
            )));
        }
        last = e.timestamp_us;
        if e.address as usize >= n_channels {
            return Err(Error::invalid(format!(
                "event address {} is outside the {n_channels} channels",
                e.address
            )));
        }
        let step = (e.timestamp_us as f64 / dt_us).floor() as usize;
        if step >= n_steps {
            return Err(Error::invalid(format!(
                "event at {} us lands in step {step}, outside the {n_steps}-step window",
                e.timestamp_us
            )));
        }
        raster.set(step, e.address as usize, true);
    }
    Ok(raster)
}

const AER_CSV_HEADER: &str = "timestamp_us,address";

/// Renders an event stream as CSV with a `timestamp_us,address` header.
pub fn events_to_csv(events: &[AerEvent]) -> String {
    let mut out = String::with_capacity(AER_CSV_HEADER.len() + 1 + events.len() * 12);
    out.push_str(AER_CSV_HEADER);
    out.push('\n');
    for e in events {
        out.push_str(&format!("{},{}\n", e.timestamp_us, e.address));
    }
    out
}

/// Parses the CSV form produced by [`events_to_csv`]. The header is
/// required verbatim so files with swapped columns fail loudly.
pub fn events_from_csv(text: &str) -> Result<Vec<AerEvent>> {
    let parse_err = |line: usize, detail: String| Error::Parse { what: "AER stream", line, detail };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == AER_CSV_HEADER => {}
        Some((_, header)) => {
            return Err(parse_err(1, format!("expected header '{AER_CSV_HEADER}', got '{header}'")))
        }
        None => return Err(parse_err(1, "empty file".into())),
    }
    let mut events = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (t, a) = match (fields.next(), fields.next(), fields.next()) {
            (Some(t), Some(a), None) => (t, a),
            _ => return Err(parse_err(idx + 1, format!("expected 2 fields, got '{line}'"))),
        };
        let timestamp_us = t
            .trim()
            .parse::<u64>()
            .map_err(|e| parse_err(idx + 1, format!("bad timestamp '{t}': {e}")))?;
        let address = a
            .trim()
            .parse::<u32>()
            .map_err(|e| parse_err(idx + 1, format!("bad address '{a}': {e}")))?;
        events.push(AerEvent { timestamp_us, address });
    }
    Ok(events)
}

pub fn save_events(events: &[AerEvent], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, events_to_csv(events))?;
    Ok(())
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<AerEvent>> {
    events_from_csv(&std::fs::read_to_string(path)?)
}

/// A configured chip in software: decoded currents and weights plus one
/// frozen mismatch draw.
///
/// Input events address virtual channels `0..n_inputs`. Output events carry
/// the hardware tag of the spiking neuron (`hw_tags[column]`), the address
/// the physical chip would put on the bus, so input and output address
/// spaces are disjoint by construction.
#[derive(Debug, Clone)]
pub struct VirtualDevice {
    net: DecodedNet,
    constants: PhysicalConstants,
}

impl VirtualDevice {
    /// Decodes `config` and freezes one mismatch draw over it.
    ///
    /// The draw is keyed by `mismatch.seed` alone (stream 0): a device
    /// stands for one physical die, and two devices built with the same
    /// seed are the same die. Draw order matches the training-time sampler:
    /// per-neuron parameters in tag order, then input weights, then
    /// recurrent weights.
    pub fn new(
        config: &DeviceConfig,
        table: &BiasTable,
        mismatch: &MismatchSpec,
        constants: &PhysicalConstants,
    ) -> Result<VirtualDevice> {
        mismatch.validate()?;
        let mut net = net_from_config(config, table, constants)?;
        if !mismatch.is_off() {
            let mut rng = ChaCha8Rng::seed_from_u64(mismatch.seed);
            rng.set_stream(0);
            let sigma = mismatch.sigma_rel;
            for p in &mut net.params {
                *p = perturb_params(p, &mismatch.targets, sigma, constants.i_floor, &mut rng);
            }
            net.w_in =
                perturb_weights(&net.w_in, mismatch.targets.contains("w_in"), sigma, &mut rng);
            net.w_rec =
                perturb_weights(&net.w_rec, mismatch.targets.contains("w_rec"), sigma, &mut rng);
        }
        Ok(VirtualDevice { net, constants: *constants })
    }

    /// The decoded (and possibly perturbed) network the device executes.
    pub fn decoded(&self) -> &DecodedNet {
        &self.net
    }

    pub fn n_inputs(&self) -> usize {
        self.net.n_virtual
    }

    pub fn n_neurons(&self) -> usize {
        self.net.n_neurons()
    }

    /// Hardware tag on the output bus for each matrix column.
    pub fn hw_tags(&self) -> &[u32] {
        &self.net.hw_tags
    }

    pub fn dt(&self) -> f64 {
        self.net.params[0].dt
    }

    /// Runs the device for `duration_us` microseconds of wall time on the
    /// given input stream and returns the output stream.
    ///
    /// The window is `ceil(duration_us / dt_us)` steps; every input event
    /// must fall strictly inside `[0, duration_us)`.
    pub fn run(&self, events: &[AerEvent], duration_us: u64) -> Result<Vec<AerEvent>> {
        if duration_us == 0 {
            return Err(Error::invalid("device run duration must be positive"));
        }
        let dt_us = self.dt() * 1e6;
        let n_steps = (duration_us as f64 / dt_us).ceil() as usize;
        if let Some(e) = events.iter().find(|e| e.timestamp_us >= duration_us) {
            return Err(Error::invalid(format!(
                "event at {} us is at or beyond the {duration_us} us run window",
                e.timestamp_us
            )));
        }
        let input = aer_to_raster(events, n_steps, self.n_inputs(), self.dt())?;
        let output = self.net.evolve(&input, &self.constants)?;
        Ok(output
            .events()
            .into_iter()
            .map(|(step, col)| AerEvent {
                timestamp_us: (step as f64 * dt_us).round() as u64,
                address: self.net.hw_tags[col],
            })
            .collect())
    }

    /// Raster-in, raster-out execution for callers that already work in
    /// clocked time. Output column `j` is the neuron tagged `hw_tags[j]`.
    /// The raster must use the step the device was configured with.
    pub fn run_raster(&self, input: &SpikeRaster) -> Result<SpikeRaster> {
        if input.dt() != self.dt() {
            return Err(Error::invalid(format!(
                "input raster step {} s does not match the configured step {} s",
                input.dt(),
                self.dt()
            )));
        }
        self.net.evolve(input, &self.constants)
    }
}

/// One-shot wrapper: decode, freeze a die, run.
pub fn run_device(
    config: &DeviceConfig,
    table: &BiasTable,
    mismatch: &MismatchSpec,
    events: &[AerEvent],
    duration_us: u64,
    constants: &PhysicalConstants,
) -> Result<Vec<AerEvent>> {
    VirtualDevice::new(config, table, mismatch, constants)?.run(events, duration_us)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::as_graph;
    use crate::hwconfig::config_from_specification;
    use crate::mapper::{map_graph, HardwareLimits};
    use crate::network::{LayeredNet, Network};
    use crate::params::SimParams;
    use crate::quantizer::{quantize_spec, QuantizeConfig};
    use ndarray::array;

    #[test]
    fn raster_round_trips_through_events() {
        let raster = SpikeRaster::from_events(&[(0, 1), (3, 0), (3, 2), (7, 1)], 10, 3, 1e-3)
            .unwrap();
        let events = raster_to_aer(&raster);
        assert_eq!(
            events,
            vec![
                AerEvent { timestamp_us: 0, address: 1 },
                AerEvent { timestamp_us: 3000, address: 0 },
                AerEvent { timestamp_us: 3000, address: 2 },
                AerEvent { timestamp_us: 7000, address: 1 },
            ]
        );
        let back = aer_to_raster(&events, 10, 3, 1e-3).unwrap();
        assert_eq!(back, raster);
    }

    #[test]
    fn events_inside_one_step_collapse_to_one_spike() {
        // 0, 400 and 999 us all land in the first 1 ms step.
        let events = [
            AerEvent { timestamp_us: 0, address: 0 },
            AerEvent { timestamp_us: 400, address: 0 },
            AerEvent { timestamp_us: 999, address: 0 },
            AerEvent { timestamp_us: 1000, address: 0 },
        ];
        let raster = aer_to_raster(&events, 2, 1, 1e-3).unwrap();
        assert_eq!(raster.get(0, 0), 1);
        assert_eq!(raster.get(1, 0), 1);
        assert_eq!(raster.total_count(), 2);
    }

    #[test]
    fn malformed_streams_are_rejected() {
        let ok = AerEvent { timestamp_us: 1000, address: 0 };
        let earlier = AerEvent { timestamp_us: 0, address: 0 };
        let err = aer_to_raster(&[ok, earlier], 4, 1, 1e-3).unwrap_err();
        assert!(err.to_string().contains("not sorted"), "{err}");
        let far = AerEvent { timestamp_us: 4000, address: 0 };
        let err = aer_to_raster(&[far], 4, 1, 1e-3).unwrap_err();
        assert!(err.to_string().contains("outside the 4-step window"), "{err}");
        let wide = AerEvent { timestamp_us: 0, address: 9 };
        let err = aer_to_raster(&[wide], 4, 1, 1e-3).unwrap_err();
        assert!(err.to_string().contains("outside the 1 channels"), "{err}");
        assert!(aer_to_raster(&[ok], 4, 1, 0.0).is_err());
    }

    #[test]
    fn csv_round_trip_and_header_enforcement() {
        let events = vec![
            AerEvent { timestamp_us: 0, address: 2 },
            AerEvent { timestamp_us: 1500, address: 0 },
            AerEvent { timestamp_us: 1500, address: 41 },
        ];
        let csv = events_to_csv(&events);
        assert!(csv.starts_with("timestamp_us,address\n"));
        assert_eq!(events_from_csv(&csv).unwrap(), events);
        assert!(events_from_csv("address,timestamp_us\n0,0\n").is_err());
        assert!(events_from_csv("").is_err());
        match events_from_csv("timestamp_us,address\n12,abc\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected a parse error, got {other}"),
        }
        match events_from_csv("timestamp_us,address\n12,3,4\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected a parse error, got {other}"),
        }
        // A trailing newline or blank line is fine.
        assert_eq!(events_from_csv("timestamp_us,address\n7,1\n\n").unwrap().len(), 1);
    }

    /// Train-side fixture: two layers deployed to a config, as in the
    /// hwconfig tests.
    fn deployed() -> (DeviceConfig, BiasTable) {
        let mut p1 = SimParams::default();
        p1.i_spkthr = 1e-14;
        let mut p2 = p1;
        p2.itau_ahp = 2e-12;
        let first = Network::new(
            array![[0.9, -0.4, 0.2], [0.0, 1.1, -0.7]],
            array![[0.0, 0.3, 0.0], [0.0, 0.0, -0.6], [0.2, 0.0, 0.0]],
            p1,
        )
        .unwrap();
        let second = Network::new(
            array![[1.2, 0.0], [0.4, -0.9], [0.0, 0.8]],
            array![[0.0, 0.5], [0.0, 0.0]],
            p2,
        )
        .unwrap();
        let net = LayeredNet::new(vec![first, second]).unwrap();
        let spec = map_graph(
            &as_graph(&net).unwrap(),
            &HardwareLimits::default(),
            &PhysicalConstants::default(),
        )
        .unwrap();
        let quant = quantize_spec(&spec, &QuantizeConfig::default()).unwrap();
        let table = BiasTable::synthetic();
        let config = config_from_specification(&spec, &quant, &table).unwrap();
        (config, table)
    }

    fn dense_drive(n_steps: usize, n_channels: usize, dt: f64) -> SpikeRaster {
        let mut input = SpikeRaster::zeros(n_steps, n_channels, dt).unwrap();
        for step in 0..n_steps {
            for ch in 0..n_channels {
                if (step + ch) % 2 == 0 {
                    input.set(step, ch, true);
                }
            }
        }
        input
    }

    #[test]
    fn device_without_mismatch_is_the_decoded_network() {
        let constants = PhysicalConstants::default();
        let (config, table) = deployed();
        let device = VirtualDevice::new(&config, &table, &MismatchSpec::off(), &constants).unwrap();
        let reference = net_from_config(&config, &table, &constants).unwrap();
        assert_eq!(device.decoded(), &reference);

        let dt = device.dt();
        let input = dense_drive(80, device.n_inputs(), dt);
        let direct = reference.evolve(&input, &constants).unwrap();
        assert!(direct.total_count() > 0, "fixture must spike for the test to mean anything");

        let out_events = device.run(&raster_to_aer(&input), 80_000).unwrap();
        // Same spikes, addresses remapped onto hardware tags.
        let expected: Vec<AerEvent> = direct
            .events()
            .into_iter()
            .map(|(step, col)| AerEvent {
                timestamp_us: (step as f64 * dt * 1e6).round() as u64,
                address: device.hw_tags()[col],
            })
            .collect();
        assert_eq!(out_events, expected);
        assert_eq!(device.run_raster(&input).unwrap(), direct);
    }

    #[test]
    fn device_mismatch_is_frozen_per_seed() {
        let constants = PhysicalConstants::default();
        let (config, table) = deployed();
        let spec = MismatchSpec::default().with_sigma(0.15).with_seed(11);
        let a = VirtualDevice::new(&config, &table, &spec, &constants).unwrap();
        let b = VirtualDevice::new(&config, &table, &spec, &constants).unwrap();
        assert_eq!(a.decoded(), b.decoded());
        let other = VirtualDevice::new(&config, &table, &spec.clone().with_seed(12), &constants)
            .unwrap();
        assert_ne!(a.decoded().params[0].itau_mem, other.decoded().params[0].itau_mem);
        // The die differs from the nominal decode, but not in shape.
        let nominal = net_from_config(&config, &table, &constants).unwrap();
        assert_eq!(a.decoded().hw_tags, nominal.hw_tags);
        assert_ne!(a.decoded().w_in, nominal.w_in);
    }

    #[test]
    fn run_window_checks() {
        let constants = PhysicalConstants::default();
        let (config, table) = deployed();
        let device = VirtualDevice::new(&config, &table, &MismatchSpec::off(), &constants).unwrap();
        assert!(device.run(&[], 0).is_err());
        let late = AerEvent { timestamp_us: 5_000, address: 0 };
        let err = device.run(&[late], 5_000).unwrap_err();
        assert!(err.to_string().contains("beyond the 5000 us run window"), "{err}");
        // 5 ms at dt = 1 ms is exactly 5 steps; an event in the last step runs.
        let edge = AerEvent { timestamp_us: 4_999, address: 0 };
        device.run(&[edge], 5_000).unwrap();
        let wrong_dt = SpikeRaster::zeros(3, device.n_inputs(), device.dt() * 2.0).unwrap();
        assert!(device.run_raster(&wrong_dt).is_err());
    }
}
