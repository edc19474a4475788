//! Bias-code translation and device configuration files.
//!
//! On the device every analog parameter is programmed as a coarse/fine
//! code pair indexing a calibrated current table, weights become CAM
//! entries (per-neuron source matches with a 4-bit mask over the core's
//! base weights), and spike routing is a per-neuron destination list. This
//! module translates between that representation and the simulation-side
//! [`SimParams`] plus weight matrices, in both directions.
//!
//! Serialization is canonical: maps are ordered, so parsing a config and
//! serializing it again reproduces the bytes. Reversing a deployed config
//! recovers exactly the network that the codes can express, which is the
//! original one with every current snapped to its nearest table entry.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::mapper::{CoreId, HardwareSpec};
use crate::network::{evolve_hetero, evolve_hetero_recorded, StateTrace};
use crate::params::{SimParams, Synapse};
use crate::quantizer::QuantizedSpec;
use crate::raster::SpikeRaster;

/// One calibrated bias generator setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasEntry {
    pub coarse: u8,
    pub fine: u8,
    /// Output current in amperes.
    pub current: f64,
}

/// Calibrated map from coarse/fine codes to bias currents.
///
/// Entries are kept sorted by code. Within one coarse band the current
/// must grow strictly with the fine code; the bands themselves must be
/// ordered (band minima and maxima both nondecreasing), overlaps at the
/// band edges are expected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    entries: Vec<BiasEntry>,
}

impl BiasTable {
    pub fn new(mut entries: Vec<BiasEntry>) -> Result<Self> {
        entries.sort_by_key(|e| (e.coarse, e.fine));
        let table = BiasTable { entries };
        table.validate()?;
        Ok(table)
    }

    /// The idealized factory calibration: six coarse ranges spaced by
    /// powers of eight, 256 fine steps each, spanning roughly 1 fA to
    /// 10 nA.
    pub fn synthetic() -> Self {
        let mut entries = Vec::with_capacity(6 * 256);
        for coarse in 0u8..6 {
            let span = 2.5e-13 * 8f64.powi(coarse as i32);
            for fine in 0u8..=255 {
                entries.push(BiasEntry {
                    coarse,
                    fine,
                    current: span * (fine as f64 + 1.0) / 256.0,
                });
            }
        }
        BiasTable { entries }
    }

    pub fn entries(&self) -> &[BiasEntry] {
        &self.entries
    }

    pub fn min_current(&self) -> f64 {
        self.entries.iter().map(|e| e.current).fold(f64::MAX, f64::min)
    }

    pub fn max_current(&self) -> f64 {
        self.entries.iter().map(|e| e.current).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::invalid("bias table has no entries"));
        }
        for e in &self.entries {
            if !e.current.is_finite() || e.current <= 0.0 {
                return Err(Error::invalid(format!(
                    "bias ({}, {}) has non-positive current {}",
                    e.coarse, e.fine, e.current
                )));
            }
        }
        let mut band_low: BTreeMap<u8, f64> = BTreeMap::new();
        let mut band_high: BTreeMap<u8, f64> = BTreeMap::new();
        for pair in self.entries.windows(2) {
            if pair[0].coarse == pair[1].coarse {
                if pair[0].fine == pair[1].fine {
                    return Err(Error::invalid(format!(
                        "duplicate bias code ({}, {})",
                        pair[0].coarse, pair[0].fine
                    )));
                }
                if pair[1].current <= pair[0].current {
                    return Err(Error::invalid(format!(
                        "bias current must grow with the fine code in coarse band {}",
                        pair[0].coarse
                    )));
                }
            }
        }
        for e in &self.entries {
            let lo = band_low.entry(e.coarse).or_insert(f64::MAX);
            *lo = lo.min(e.current);
            let hi = band_high.entry(e.coarse).or_insert(0.0);
            *hi = hi.max(e.current);
        }
        let lows: Vec<f64> = band_low.values().copied().collect();
        let highs: Vec<f64> = band_high.values().copied().collect();
        if lows.windows(2).any(|p| p[1] < p[0]) || highs.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::invalid(
                "coarse bands must be ordered by current (overlap at the edges is fine)",
            ));
        }
        Ok(())
    }

    pub fn code_to_current(&self, coarse: u8, fine: u8) -> Result<f64> {
        self.entries
            .iter()
            .find(|e| e.coarse == coarse && e.fine == fine)
            .map(|e| e.current)
            .ok_or_else(|| Error::invalid(format!("bias code ({coarse}, {fine}) is not calibrated")))
    }

    /// The code whose current is nearest in the log domain. Distances
    /// within a relative 1e-12 count as ties and resolve to the lower
    /// coarse code, then the lower fine code. Currents outside the table
    /// range are refused (they cannot be silently produced on the device).
    pub fn current_to_code(&self, current: f64) -> Result<(u8, u8)> {
        if !current.is_finite() || current <= 0.0 {
            return Err(Error::invalid(format!(
                "only positive currents have bias codes, got {current}"
            )));
        }
        let (min, max) = (self.min_current(), self.max_current());
        if current < min || current > max {
            let nearest = if current < min { min } else { max };
            return Err(Error::BiasRange { requested: current, min, max, nearest });
        }
        let target = current.ln();
        let mut best: Option<(f64, u8, u8)> = None;
        for e in &self.entries {
            let d = (e.current.ln() - target).abs();
            match best {
                Some((bd, _, _)) if d >= bd - 1e-12 => {}
                _ => best = Some((d, e.coarse, e.fine)),
            }
        }
        let (_, c, f) = best.expect("the table is nonempty");
        Ok((c, f))
    }

    /// The current the device will actually produce for a request: the
    /// value of the nearest representable code.
    pub fn snap(&self, current: f64) -> Result<f64> {
        let (c, f) = self.current_to_code(current)?;
        self.code_to_current(c, f)
    }

    /// Serializes as `coarse,fine,current_ampere` CSV, amperes in scientific
    /// notation, entries in code order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("coarse,fine,current_ampere\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{:e}\n", e.coarse, e.fine, e.current));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { what: "bias table", line: 1, detail: "empty file".into() })?;
        if header.trim() != "coarse,fine,current_ampere" {
            return Err(Error::Parse {
                what: "bias table",
                line: 1,
                detail: format!("expected header 'coarse,fine,current_ampere', got '{header}'"),
            });
        }
        let mut entries = Vec::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let mut next = |what: &'static str| {
                cols.next().ok_or(Error::Parse {
                    what: "bias table",
                    line: idx + 1,
                    detail: format!("missing column {what}"),
                })
            };
            let coarse = next("coarse")?;
            let fine = next("fine")?;
            let current = next("current")?;
            let parse_err = |detail: String| Error::Parse { what: "bias table", line: idx + 1, detail };
            entries.push(BiasEntry {
                coarse: coarse.trim().parse().map_err(|e| parse_err(format!("coarse: {e}")))?,
                fine: fine.trim().parse().map_err(|e| parse_err(format!("fine: {e}")))?,
                current: current.trim().parse().map_err(|e| parse_err(format!("current: {e}")))?,
            });
            if cols.next().is_some() {
                return Err(parse_err("too many columns".into()));
            }
        }
        BiasTable::new(entries)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        BiasTable::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// A coarse/fine code pair as stored in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasCode {
    pub coarse: u8,
    pub fine: u8,
}

/// Where a CAM entry listens: an external input channel or another
/// on-chip neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "tag", rename_all = "snake_case")]
pub enum EventSource {
    Virtual(u32),
    Neuron(u32),
}

/// One content-addressable-memory slot: when an event from `source`
/// arrives, the masked subset of the core's base weights is summed into
/// the selected synapse circuit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CamEntry {
    pub source: EventSource,
    pub synapse: Synapse,
    pub mask: u8,
}

/// Per-neuron programming: input matches and output routing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NeuronConfig {
    pub cams: Vec<CamEntry>,
    /// Cores this neuron's spikes are broadcast to, sorted.
    pub destinations: Vec<CoreId>,
}

/// Per-core programming: bias codes shared by all neurons on the core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreConfig {
    /// One code per analog parameter, keyed by the [`SimParams`] field
    /// name.
    pub biases: BTreeMap<String, BiasCode>,
    /// Codes of the four shared base weight currents, ascending.
    pub iw_base: [BiasCode; 4],
    /// Weight-unit scaling of this core, amperes per unit.
    pub iw_scale: f64,
    /// Neuron programming keyed by hardware tag.
    pub neurons: BTreeMap<u32, NeuronConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChipConfig {
    pub cores: BTreeMap<u8, CoreConfig>,
}

/// A complete device configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    /// Simulation step the deployment assumed, seconds.
    pub dt: f64,
    /// Number of external input channels.
    pub n_virtual: u32,
    pub chips: BTreeMap<u8, ChipConfig>,
    /// Cores each external input channel is broadcast to, sorted.
    pub input_fanout: BTreeMap<u32, Vec<CoreId>>,
}

impl DeviceConfig {
    /// Canonical JSON: maps are ordered and floats round-trip, so
    /// parse-then-serialize is the identity on these bytes.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.canonical_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let config: DeviceConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    /// All neurons in the config as `(tag, chip, core)` in tag order.
    pub fn neuron_index(&self) -> Result<Vec<(u32, u8, u8)>> {
        let mut index = Vec::new();
        for (&chip, chip_cfg) in &self.chips {
            for (&core, core_cfg) in &chip_cfg.cores {
                for &tag in core_cfg.neurons.keys() {
                    index.push((tag, chip, core));
                }
            }
        }
        index.sort_unstable();
        for pair in index.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Config(format!(
                    "neuron tag {} is programmed on two cores",
                    pair[0].0
                )));
            }
        }
        Ok(index)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 || !self.dt.is_finite() {
            return Err(Error::Config("dt must be positive".into()));
        }
        let index = self.neuron_index()?;
        if index.is_empty() {
            return Err(Error::Config("the config programs no neurons".into()));
        }
        let known: std::collections::BTreeSet<u32> = index.iter().map(|&(t, _, _)| t).collect();
        for (&chip, chip_cfg) in &self.chips {
            for (&core, core_cfg) in &chip_cfg.cores {
                let at = |what: &str| format!("chip {chip} core {core}: {what}");
                if core_cfg.iw_scale <= 0.0 || !core_cfg.iw_scale.is_finite() {
                    return Err(Error::Config(at("iw_scale must be positive")));
                }
                for name in SimParams::MISMATCH_FIELDS {
                    if !core_cfg.biases.contains_key(name) {
                        return Err(Error::Config(at(&format!("missing bias '{name}'"))));
                    }
                }
                for name in core_cfg.biases.keys() {
                    if !SimParams::MISMATCH_FIELDS.contains(&name.as_str()) {
                        return Err(Error::Config(at(&format!("unknown bias '{name}'"))));
                    }
                }
                for (&tag, neuron) in &core_cfg.neurons {
                    let at = |what: &str| {
                        format!("chip {chip} core {core} neuron {tag}: {what}")
                    };
                    for cam in &neuron.cams {
                        if cam.mask == 0 || cam.mask > 15 {
                            return Err(Error::Config(at("CAM masks must be 1..=15")));
                        }
                        if !matches!(cam.synapse, Synapse::Ampa | Synapse::Gaba) {
                            return Err(Error::Config(at(
                                "CAM entries must target the AMPA or GABA circuit",
                            )));
                        }
                        match cam.source {
                            EventSource::Virtual(v) if v >= self.n_virtual => {
                                return Err(Error::Config(at(&format!(
                                    "virtual source {v} is outside the {} input channels",
                                    self.n_virtual
                                ))));
                            }
                            EventSource::Neuron(n) if !known.contains(&n) => {
                                return Err(Error::Config(at(&format!(
                                    "neuron source {n} is not programmed anywhere"
                                ))));
                            }
                            _ => {}
                        }
                    }
                    if neuron.destinations.windows(2).any(|p| p[1] <= p[0]) {
                        return Err(Error::Config(at("destinations must be sorted and unique")));
                    }
                }
            }
        }
        for (&v, fanout) in &self.input_fanout {
            if v >= self.n_virtual {
                return Err(Error::Config(format!(
                    "input fanout lists channel {v} outside the {} input channels",
                    self.n_virtual
                )));
            }
            if fanout.windows(2).any(|p| p[1] <= p[0]) {
                return Err(Error::Config(format!("fanout of channel {v} must be sorted and unique")));
            }
        }
        Ok(())
    }
}

/// Encodes a mapped and quantized network as a device configuration:
/// parameters and base weights become bias codes (each current snaps to
/// its nearest table entry), weights become CAM entries, spike routing
/// becomes destination lists. Unused base weights (exact zero) are coded
/// as the smallest calibrated current; no mask refers to them.
pub fn config_from_specification(
    spec: &HardwareSpec,
    quant: &QuantizedSpec,
    table: &BiasTable,
) -> Result<DeviceConfig> {
    table.validate()?;
    if quant.n_virtual != spec.n_virtual || quant.n_hw != spec.n_hw() {
        return Err(Error::dim(
            "quantized spec shape",
            format!("{}x{}", spec.n_virtual, spec.n_hw()),
            format!("{}x{}", quant.n_virtual, quant.n_hw),
        ));
    }
    if quant.clusters.len() != spec.clusters.len()
        || quant
            .clusters
            .iter()
            .zip(spec.clusters.iter())
            .any(|(q, s)| q.neurons != s.neurons)
    {
        return Err(Error::invalid(
            "the quantization does not cover the same clusters as the mapping",
        ));
    }

    let min_code = {
        let min = table.min_current();
        let (c, f) = table.current_to_code(min)?;
        BiasCode { coarse: c, fine: f }
    };

    let mut chips: BTreeMap<u8, ChipConfig> = BTreeMap::new();
    let mut input_fanout: BTreeMap<u32, Vec<CoreId>> = BTreeMap::new();

    for (cluster, cq) in spec.clusters.iter().zip(quant.clusters.iter()) {
        let p = cluster.params;
        let mut biases = BTreeMap::new();
        for name in SimParams::MISMATCH_FIELDS {
            let value = p.field(name).expect("field names come from the canonical list");
            let (coarse, fine) = table.current_to_code(value)?;
            biases.insert(name.to_string(), BiasCode { coarse, fine });
        }
        let mut iw_base = [min_code; 4];
        for (k, &amp) in cq.base_amperes.iter().enumerate() {
            if amp > 0.0 {
                let (coarse, fine) = table.current_to_code(amp)?;
                iw_base[k] = BiasCode { coarse, fine };
            }
        }

        for (col, &j) in cq.neurons.iter().enumerate() {
            let core_id = spec.core_of_neuron[j];
            let mut cams = Vec::new();
            for i in 0..quant.n_virtual {
                let mask = cq.mask_in[[i, col]];
                if mask == 0 {
                    continue;
                }
                let synapse =
                    if cq.sign_in[[i, col]] < 0 { Synapse::Gaba } else { Synapse::Ampa };
                cams.push(CamEntry { source: EventSource::Virtual(i as u32), synapse, mask });
                input_fanout.entry(i as u32).or_default().push(core_id);
            }
            for k in 0..quant.n_hw {
                let mask = cq.mask_rec[[k, col]];
                if mask == 0 {
                    continue;
                }
                let synapse =
                    if cq.sign_rec[[k, col]] < 0 { Synapse::Gaba } else { Synapse::Ampa };
                cams.push(CamEntry { source: EventSource::Neuron(k as u32), synapse, mask });
            }
            if cams.len() > spec.limits.synapses_per_neuron {
                return Err(Error::Mapping {
                    limit: "synapses per neuron",
                    detail: format!(
                        "neuron {} needs {} CAM entries, the core provides {}",
                        j,
                        cams.len(),
                        spec.limits.synapses_per_neuron
                    ),
                });
            }
            let core_cfg = chips
                .entry(core_id.chip)
                .or_default()
                .cores
                .entry(core_id.core)
                .or_insert_with(|| CoreConfig {
                    biases: biases.clone(),
                    iw_base,
                    iw_scale: p.iw_scale,
                    neurons: BTreeMap::new(),
                });
            core_cfg.neurons.insert(j as u32, NeuronConfig { cams, destinations: Vec::new() });
        }
    }

    // Destination routing: neuron k broadcasts to every core holding a
    // neuron that listens to it.
    let mut destinations: BTreeMap<u32, Vec<CoreId>> = BTreeMap::new();
    for chip_cfg in chips.values() {
        for core_cfg in chip_cfg.cores.values() {
            for (&tag, neuron) in &core_cfg.neurons {
                for cam in &neuron.cams {
                    if let EventSource::Neuron(src) = cam.source {
                        destinations
                            .entry(src)
                            .or_default()
                            .push(spec.core_of_neuron[tag as usize]);
                    }
                }
            }
        }
    }
    for chip_cfg in chips.values_mut() {
        for core_cfg in chip_cfg.cores.values_mut() {
            for (&tag, neuron) in &mut core_cfg.neurons {
                if let Some(dests) = destinations.remove(&tag) {
                    let mut dests = dests;
                    dests.sort_unstable();
                    dests.dedup();
                    neuron.destinations = dests;
                }
            }
        }
    }
    for fanout in input_fanout.values_mut() {
        fanout.sort_unstable();
        fanout.dedup();
    }

    let config = DeviceConfig {
        dt: spec.dt,
        n_virtual: spec.n_virtual as u32,
        chips,
        input_fanout,
    };
    config.validate()?;
    Ok(config)
}

/// A network decoded from a device configuration. Neuron `j` of the
/// matrices is `hw_tags[j]`; parameters are per neuron because each core
/// decodes its own biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedNet {
    pub w_in: Array2<f64>,
    pub w_rec: Array2<f64>,
    pub params: Vec<SimParams>,
    pub hw_tags: Vec<u32>,
    pub n_virtual: usize,
}

impl DecodedNet {
    pub fn n_neurons(&self) -> usize {
        self.hw_tags.len()
    }

    pub fn evolve(
        &self,
        input: &SpikeRaster,
        constants: &PhysicalConstants,
    ) -> Result<SpikeRaster> {
        evolve_hetero(&self.w_in, &self.w_rec, &self.params, input, constants)
    }

    pub fn evolve_recorded(
        &self,
        input: &SpikeRaster,
        constants: &PhysicalConstants,
    ) -> Result<(SpikeRaster, StateTrace)> {
        evolve_hetero_recorded(&self.w_in, &self.w_rec, &self.params, input, constants)
    }
}

/// Decodes a configuration back into simulatable form: bias codes become
/// currents, CAM entries become signed weights (mask sum of the core's
/// base currents divided by its `iw_scale`). Several CAM entries for the
/// same source accumulate, as they do on the device.
pub fn net_from_config(
    config: &DeviceConfig,
    table: &BiasTable,
    constants: &PhysicalConstants,
) -> Result<DecodedNet> {
    config.validate()?;
    table.validate()?;
    let index = config.neuron_index()?;
    let n = index.len();
    let n_virtual = config.n_virtual as usize;
    let col_of_tag: BTreeMap<u32, usize> =
        index.iter().enumerate().map(|(col, &(tag, _, _))| (tag, col)).collect();

    let mut w_in = Array2::zeros((n_virtual, n));
    let mut w_rec = Array2::zeros((n, n));
    let mut params = Vec::with_capacity(n);

    for &(tag, chip, core) in &index {
        let core_cfg = &config.chips[&chip].cores[&core];
        let mut p = SimParams::default();
        p.dt = config.dt;
        p.iw_scale = core_cfg.iw_scale;
        for (name, code) in &core_cfg.biases {
            p.set_field(name, table.code_to_current(code.coarse, code.fine)?)?;
        }
        let mut base = [0.0f64; 4];
        for (k, code) in core_cfg.iw_base.iter().enumerate() {
            base[k] = table.code_to_current(code.coarse, code.fine)?;
        }
        p.iw_base = base;
        p.validate(constants)?;
        params.push(p);

        let col = col_of_tag[&tag];
        let neuron = &core_cfg.neurons[&tag];
        for cam in &neuron.cams {
            let mut amp = 0.0;
            for (k, &b) in base.iter().enumerate() {
                if cam.mask & (1 << k) != 0 {
                    amp += b;
                }
            }
            let weight = match cam.synapse {
                Synapse::Gaba => -amp / core_cfg.iw_scale,
                _ => amp / core_cfg.iw_scale,
            };
            match cam.source {
                EventSource::Virtual(v) => w_in[[v as usize, col]] += weight,
                EventSource::Neuron(src) => {
                    let row = *col_of_tag.get(&src).ok_or_else(|| {
                        Error::Config(format!("CAM source neuron {src} is not programmed"))
                    })?;
                    w_rec[[row, col]] += weight;
                }
            }
        }
    }

    Ok(DecodedNet {
        w_in,
        w_rec,
        params,
        hw_tags: index.iter().map(|&(t, _, _)| t).collect(),
        n_virtual,
    })
}
