//! Run configuration files and reproducibility manifests.
//!
//! A [`RunConfig`] gathers every knob of the pipeline (task, neuron
//! parameters, training, quantization, hardware limits) into one TOML file
//! so a whole experiment is reproducible from a single artifact. Any subset
//! of keys may be given; missing ones take the defaults. A [`Manifest`]
//! records SHA-256 digests of the files a run produced, so a later rerun
//! can prove it regenerated the same bytes.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::experiment::FrozenNoiseParams;
use crate::mapper::HardwareLimits;
use crate::network::Network;
use crate::params::SimParams;
use crate::quantizer::QuantizeConfig;
use crate::training::TrainConfig;

/// Everything a pipeline run depends on, in one (TOML-serializable) place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Seed for the initial weight draw. Task data and training mismatch
    /// have their own seeds under `data` and `train.mismatch`.
    pub seed: u64,
    /// Standard deviation of the zero-mean Gaussian initial weights.
    pub init_weight_std: f64,
    /// Hidden/output neurons of the single recurrent layer. The task reads
    /// out the first two as class channels.
    pub n_neurons: usize,
    pub constants: PhysicalConstants,
    pub params: SimParams,
    pub data: FrozenNoiseParams,
    pub train: TrainConfig,
    pub quantize: QuantizeConfig,
    pub limits: HardwareLimits,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            init_weight_std: 0.3,
            n_neurons: 2,
            constants: PhysicalConstants::default(),
            params: SimParams::default(),
            data: FrozenNoiseParams::default(),
            train: TrainConfig::default(),
            quantize: QuantizeConfig::default(),
            limits: HardwareLimits::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.init_weight_std.is_finite() || self.init_weight_std < 0.0 {
            return Err(Error::invalid(format!(
                "init_weight_std must be finite and non-negative, got {}",
                self.init_weight_std
            )));
        }
        if self.n_neurons < 2 {
            return Err(Error::invalid(format!(
                "the task needs at least the 2 class neurons, got {}",
                self.n_neurons
            )));
        }
        self.constants.validate()?;
        self.params.validate(&self.constants)?;
        self.data.validate()?;
        self.train.validate()?;
        self.quantize.validate()?;
        self.limits.validate()?;
        if self.params.dt != self.data.dt {
            return Err(Error::invalid(format!(
                "params.dt ({}) and data.dt ({}) must agree",
                self.params.dt, self.data.dt
            )));
        }
        Ok(())
    }

    /// The untrained network for this config: `n_channels -> n_neurons`
    /// with Gaussian weights drawn deterministically from `seed`.
    pub fn initial_network(&self) -> Result<Network> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let std = self.init_weight_std;
        let mut draw = |shape: (usize, usize)| {
            Array2::from_shape_simple_fn(shape, || {
                let z: f64 = rng.sample(StandardNormal);
                std * z
            })
        };
        let w_in = draw((self.data.n_channels, self.n_neurons));
        let w_rec = draw((self.n_neurons, self.n_neurons));
        Network::new(w_in, w_rec, self.params)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("cannot serialize run config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// A trained network with everything needed to reproduce or continue the
/// run: parameters, weights, the training configuration that produced
/// them, and the loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: SimParams,
    pub w_in: Array2<f64>,
    pub w_rec: Array2<f64>,
    pub train: TrainConfig,
    pub loss_curve: Vec<f64>,
}

impl Checkpoint {
    pub fn new(net: &Network, train: &TrainConfig, loss_curve: Vec<f64>) -> Self {
        Checkpoint {
            params: net.params,
            w_in: net.w_in.clone(),
            w_rec: net.w_rec.clone(),
            train: train.clone(),
            loss_curve,
        }
    }

    pub fn network(&self) -> Result<Network> {
        Network::new(self.w_in.clone(), self.w_rec.clone(), self.params)
    }

    /// The loss curve as `epoch,loss` CSV.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (epoch, loss) in self.loss_curve.iter().enumerate() {
            out.push_str(&format!("{epoch},{loss:e}\n"));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// SHA-256 of a byte slice as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// SHA-256 of a file's contents as lowercase hex.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Digest record of a run's artifacts, keyed by file name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub seed: u64,
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(seed: u64) -> Self {
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            files: BTreeMap::new(),
        }
    }

    /// Hashes `path` and records it under its file name.
    pub fn record(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let name = path
            .file_name()
            .ok_or_else(|| Error::invalid(format!("no file name in '{}'", path.display())))?
            .to_string_lossy()
            .into_owned();
        let digest = sha256_file(path)?;
        self.files.insert(name, digest);
        Ok(())
    }

    /// Rehashes every recorded file against `dir` and returns the names
    /// whose digests changed or that are missing. Empty means reproduced.
    pub fn verify(&self, dir: impl AsRef<Path>) -> Result<Vec<String>> {
        let dir = dir.as_ref();
        let mut bad = Vec::new();
        for (name, digest) in &self.files {
            let path = dir.join(name);
            match sha256_file(&path) {
                Ok(found) if &found == digest => {}
                _ => bad.push(name.clone()),
            }
        }
        Ok(bad)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = RunConfig::from_toml(
            "seed = 7\n\n[data]\nn_channels = 12\n\n[train]\nepochs = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.data.n_channels, 12);
        assert_eq!(cfg.train.epochs, 10);
        assert_eq!(cfg.init_weight_std, RunConfig::default().init_weight_std);
        assert_eq!(cfg.limits, HardwareLimits::default());
    }

    #[test]
    fn validation_catches_inconsistencies() {
        let mut cfg = RunConfig::default();
        cfg.init_weight_std = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.n_neurons = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.data.dt = cfg.params.dt * 2.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn initial_network_is_deterministic_and_shaped() {
        let cfg = RunConfig { n_neurons: 3, ..RunConfig::default() };
        let a = cfg.initial_network().unwrap();
        let b = cfg.initial_network().unwrap();
        assert_eq!(a.w_in, b.w_in);
        assert_eq!(a.w_rec, b.w_rec);
        assert_eq!(a.w_in.dim(), (60, 3));
        assert_eq!(a.w_rec.dim(), (3, 3));
        let other = RunConfig { seed: 1, n_neurons: 3, ..RunConfig::default() };
        assert_ne!(other.initial_network().unwrap().w_in, a.w_in);
        // Zero std gives an exactly silent start.
        let zero = RunConfig { init_weight_std: 0.0, ..RunConfig::default() };
        assert!(zero.initial_network().unwrap().w_in.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn checkpoint_round_trips_and_rebuilds_the_network() {
        let net = RunConfig::default().initial_network().unwrap();
        let ck = Checkpoint::new(&net, &TrainConfig::default(), vec![0.5, 0.4]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let rebuilt = back.network().unwrap();
        assert_eq!(rebuilt.w_in, net.w_in);
        assert_eq!(rebuilt.w_rec, net.w_rec);
        assert_eq!(ck.loss_csv(), "epoch,loss\n0,5e-1\n1,4e-1\n");
    }

    #[test]
    fn manifest_records_and_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("net.json");
        std::fs::write(&file, b"abc").unwrap();
        let mut m = Manifest::new(3);
        m.record(&file).unwrap();
        assert_eq!(
            m.files["net.json"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert!(m.verify(dir.path()).unwrap().is_empty());
        std::fs::write(&file, b"abd").unwrap();
        assert_eq!(m.verify(dir.path()).unwrap(), vec!["net.json".to_string()]);
        std::fs::remove_file(&file).unwrap();
        assert_eq!(m.verify(dir.path()).unwrap().len(), 1);

        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        assert_eq!(Manifest::load(&path).unwrap(), m);
    }
}
