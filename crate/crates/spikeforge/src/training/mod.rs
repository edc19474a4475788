//! Mismatch-aware training of spiking networks.
//!
//! Each epoch simulates the full training set on a mismatch-perturbed copy
//! of the network (frozen Gaussian draw, refreshed every
//! `refresh_period` epochs), backpropagates the mean spike-train MSE
//! through time with a surrogate spike derivative, and applies one Adam
//! update to the nominal weights. Training against a moving ensemble of
//! perturbed devices is what makes the resulting weights deployable on
//! analog hardware without per-die calibration.

mod adam;
mod bptt;

pub use adam::Adam;
pub use bptt::{
    backward, forward, loss_and_gradients, surrogate_derivative, surrogate_spike, Differentiation,
    ForwardPass, LossGrads,
};

use std::collections::BTreeSet;

use ndarray::Array2;
use rayon::prelude::*;

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::mismatch::{
    adversarial_perturb, draw_index_for_epoch, sample_mismatch, MismatchSpec, PerturbedNet,
};
use crate::network::Network;
use crate::raster::SpikeRaster;
use serde::{Deserialize, Serialize};

/// Mean-squared error between two spike rasters, normalized by
/// `n_steps * n_channels`. A silent network against a one-hot target over
/// two channels scores 0.5.
pub fn mse_spike_loss(a: &SpikeRaster, b: &SpikeRaster) -> Result<f64> {
    if a.n_steps() != b.n_steps() || a.n_channels() != b.n_channels() {
        return Err(Error::dim(
            "spike loss",
            format!("{}x{}", a.n_steps(), a.n_channels()),
            format!("{}x{}", b.n_steps(), b.n_channels()),
        ));
    }
    Ok(bptt::mse_arrays(&a.to_f64(), &b.to_f64()))
}

/// One-hot target raster: the class channel fires on every step, all other
/// channels stay silent.
pub fn make_target(class: usize, n_steps: usize, n_classes: usize, dt: f64) -> Result<SpikeRaster> {
    if class >= n_classes {
        return Err(Error::invalid(format!("class {class} out of range for {n_classes} classes")));
    }
    let mut r = SpikeRaster::zeros(n_steps, n_classes, dt)?;
    for t in 0..n_steps {
        r.set(t, class, true);
    }
    Ok(r)
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub surrogate_slope: f64,
    /// Which tensors receive updates; any subset of {"w_in", "w_rec"}.
    pub trainable: BTreeSet<String>,
    pub mismatch: MismatchSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// The preset that solves the two-pattern task: long low-rate descent
    /// (the loss only has to move a few hundredths), a moderate surrogate
    /// slope so subthreshold steps still receive gradient, refreshed
    /// mismatch every 100 epochs.
    fn default() -> Self {
        TrainConfig {
            epochs: 100_000,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            surrogate_slope: 5.0,
            trainable: ["w_in", "w_rec"].iter().map(|s| s.to_string()).collect(),
            mismatch: MismatchSpec::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.mismatch.validate()?;
        if self.trainable.is_empty() {
            return Err(Error::invalid("trainable set must not be empty"));
        }
        for t in &self.trainable {
            if t != "w_in" && t != "w_rec" {
                return Err(Error::invalid(format!(
                    "unsupported trainable parameter '{t}'; only w_in and w_rec can be trained"
                )));
            }
        }
        if !self.surrogate_slope.is_finite() || self.surrogate_slope <= 0.0 {
            return Err(Error::invalid(format!(
                "surrogate slope must be positive, got {}",
                self.surrogate_slope
            )));
        }
        Ok(())
    }
}

/// Training outcome: the per-epoch loss curve and the trained network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossRecord {
    pub per_epoch: Vec<f64>,
    pub net: Network,
}

/// Trains `net` on `(input, target)` raster pairs and returns the loss
/// curve together with the updated network. Deterministic for a fixed
/// config.
pub fn train(
    net: &Network,
    data: &[(SpikeRaster, SpikeRaster)],
    cfg: &TrainConfig,
    constants: &PhysicalConstants,
) -> Result<LossRecord> {
    cfg.validate()?;
    net.params.validate(constants)?;
    if data.is_empty() {
        return Err(Error::invalid("training set must not be empty"));
    }
    let n = net.n_neurons();
    let targets: Vec<Array2<f64>> = data
        .iter()
        .map(|(input, target)| {
            if target.n_steps() != input.n_steps() || target.n_channels() != n {
                return Err(Error::dim(
                    "training target",
                    format!("{}x{}", input.n_steps(), n),
                    format!("{}x{}", target.n_steps(), target.n_channels()),
                ));
            }
            Ok(target.to_f64())
        })
        .collect::<Result<_>>()?;

    let train_in = cfg.trainable.contains("w_in");
    let train_rec = cfg.trainable.contains("w_rec");
    let n_in_params = if train_in { net.w_in.len() } else { 0 };
    let n_rec_params = if train_rec { net.w_rec.len() } else { 0 };
    let mut adam = Adam::new(
        n_in_params + n_rec_params,
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.epsilon,
    )?;

    let mut current = net.clone();
    let mode = Differentiation::SurrogateHard { slope: cfg.surrogate_slope };
    let mut per_epoch = Vec::with_capacity(cfg.epochs as usize);
    let mut prev_g_in: Option<Array2<f64>> = None;
    let mut prev_g_rec: Option<Array2<f64>> = None;
    let adv = cfg.mismatch.adversarial_step;

    for epoch in 0..cfg.epochs {
        let draw = draw_index_for_epoch(epoch, cfg.mismatch.refresh_period);
        let mut pert = sample_mismatch(&current, &cfg.mismatch, draw, constants)?;

        // On non-refresh epochs an optional gradient-sign perturbation is
        // layered on top of the frozen Gaussian draw.
        let is_refresh = epoch % cfg.mismatch.refresh_period == 0;
        if adv > 0.0 && !is_refresh {
            if let (Some(gi), Some(gr)) = (&prev_g_in, &prev_g_rec) {
                pert.w_in = adversarial_perturb(&pert.w_in, gi, adv)?;
                pert.w_rec = adversarial_perturb(&pert.w_rec, gr, adv)?;
            }
        }

        let (loss, g_in_pert, g_rec_pert) =
            batch_loss_and_grads(&pert, data, &targets, mode, constants)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        per_epoch.push(loss);

        // Chain through the multiplicative mismatch: dL/dw_nominal =
        // dL/dw_perturbed * (w_perturbed / w_nominal). An entry whose factor
        // clamped to zero is locally dead and gets no gradient.
        let g_in = chain_factor(&g_in_pert, &pert.w_in, &current.w_in);
        let g_rec = chain_factor(&g_rec_pert, &pert.w_rec, &current.w_rec);

        let mut flat_p = Vec::with_capacity(n_in_params + n_rec_params);
        let mut flat_g = Vec::with_capacity(n_in_params + n_rec_params);
        if train_in {
            flat_p.extend(current.w_in.iter());
            flat_g.extend(g_in.iter());
        }
        if train_rec {
            flat_p.extend(current.w_rec.iter());
            flat_g.extend(g_rec.iter());
        }
        adam.step(&mut flat_p, &flat_g)?;
        let mut offset = 0;
        if train_in {
            current
                .w_in
                .iter_mut()
                .zip(&flat_p[..n_in_params])
                .for_each(|(w, v)| *w = *v);
            offset = n_in_params;
        }
        if train_rec {
            current
                .w_rec
                .iter_mut()
                .zip(&flat_p[offset..])
                .for_each(|(w, v)| *w = *v);
        }

        prev_g_in = Some(g_in);
        prev_g_rec = Some(g_rec);
    }

    Ok(LossRecord { per_epoch, net: current })
}

/// Mean loss and gradients over a batch, samples evaluated in parallel and
/// reduced in index order so the result is deterministic.
fn batch_loss_and_grads(
    pert: &PerturbedNet,
    data: &[(SpikeRaster, SpikeRaster)],
    targets: &[Array2<f64>],
    mode: Differentiation,
    constants: &PhysicalConstants,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let results: Vec<LossGrads> = data
        .par_iter()
        .zip(targets.par_iter())
        .map(|((input, _), target)| {
            loss_and_gradients(&pert.w_in, &pert.w_rec, &pert.params, input, target, mode, constants)
        })
        .collect::<Result<_>>()?;
    let k = results.len() as f64;
    let mut loss = 0.0;
    let mut g_in = Array2::zeros(pert.w_in.dim());
    let mut g_rec = Array2::zeros(pert.w_rec.dim());
    for r in results {
        loss += r.loss;
        g_in += &r.g_w_in;
        g_rec += &r.g_w_rec;
    }
    Ok((loss / k, g_in / k, g_rec / k))
}

fn chain_factor(g_pert: &Array2<f64>, w_pert: &Array2<f64>, w_nom: &Array2<f64>) -> Array2<f64> {
    let mut g = g_pert.clone();
    for ((g, &wp), &wn) in g.iter_mut().zip(w_pert.iter()).zip(w_nom.iter()) {
        if wn != 0.0 {
            *g *= wp / wn;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::SimParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spike_loss_counts_disagreements() {
        let a = SpikeRaster::from_events(&[(0, 0), (1, 1)], 2, 2, 1e-3).unwrap();
        let b = SpikeRaster::from_events(&[(0, 0)], 2, 2, 1e-3).unwrap();
        assert_eq!(mse_spike_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_spike_loss(&a, &b).unwrap(), 0.25);
        let silent = SpikeRaster::zeros(10, 2, 1e-3).unwrap();
        let target = make_target(0, 10, 2, 1e-3).unwrap();
        assert_eq!(mse_spike_loss(&silent, &target).unwrap(), 0.5);
        let short = SpikeRaster::zeros(9, 2, 1e-3).unwrap();
        assert!(mse_spike_loss(&short, &target).is_err());
    }

    #[test]
    fn target_is_one_hot_over_time() {
        let t = make_target(1, 5, 3, 1e-3).unwrap();
        assert_eq!(t.channel_count(0), 0);
        assert_eq!(t.channel_count(1), 5);
        assert_eq!(t.channel_count(2), 0);
        assert!(make_target(3, 5, 3, 1e-3).is_err());
    }

    fn toy_task(seed: u64) -> (Network, Vec<(SpikeRaster, SpikeRaster)>) {
        // Two input patterns, two output neurons; each class should drive
        // its own neuron. 40 steps is enough for the loss to move.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_in = 6;
        let n_steps = 40;
        let mut p = SimParams::default();
        p.i_spkthr = 3e-14;
        let w_in =
            Array2::from_shape_fn((n_in, 2), |_| rng.gen_range(-0.3..0.6));
        let w_rec = Array2::from_shape_fn((2, 2), |_| rng.gen_range(-0.1..0.1));
        let net = Network::new(w_in, w_rec, p).unwrap();
        let mut data = Vec::new();
        for class in 0..2usize {
            let mut r = SpikeRaster::zeros(n_steps, n_in, p.dt).unwrap();
            for t in 0..n_steps {
                for ch in 0..n_in {
                    // class 0 drives the low channels, class 1 the high ones
                    let active = if class == 0 { ch < 3 } else { ch >= 3 };
                    if active && rng.gen_bool(0.6) {
                        r.set(t, ch, true);
                    }
                }
            }
            data.push((r, make_target(class, n_steps, 2, p.dt).unwrap()));
        }
        (net, data)
    }

    #[test]
    fn training_reduces_loss_without_mismatch() {
        let c = PhysicalConstants::default();
        let (net, data) = toy_task(11);
        let cfg = TrainConfig {
            epochs: 150,
            learning_rate: 5e-3,
            mismatch: MismatchSpec::off(),
            ..TrainConfig::default()
        };
        let rec = train(&net, &data, &cfg, &c).unwrap();
        assert_eq!(rec.per_epoch.len(), 150);
        let first = rec.per_epoch[0];
        let last = rec.per_epoch[rec.per_epoch.len() - 1];
        assert!(
            last < first,
            "loss should fall: first {first}, last {last}"
        );
    }

    #[test]
    fn training_reduces_loss_with_mismatch() {
        let c = PhysicalConstants::default();
        let (net, data) = toy_task(13);
        let mismatch = MismatchSpec { refresh_period: 25, ..MismatchSpec::default() };
        let cfg = TrainConfig {
            epochs: 120,
            learning_rate: 5e-3,
            mismatch,
            ..TrainConfig::default()
        };
        let rec = train(&net, &data, &cfg, &c).unwrap();
        let first = rec.per_epoch[0];
        let tail: f64 =
            rec.per_epoch[rec.per_epoch.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail <= first, "mismatched loss should not grow: first {first}, tail {tail}");
    }

    #[test]
    fn training_is_deterministic() {
        let c = PhysicalConstants::default();
        let (net, data) = toy_task(17);
        let cfg = TrainConfig { epochs: 30, ..TrainConfig::default() };
        let a = train(&net, &data, &cfg, &c).unwrap();
        let b = train(&net, &data, &cfg, &c).unwrap();
        assert_eq!(a.per_epoch, b.per_epoch);
        assert_eq!(a.net.w_in, b.net.w_in);
        assert_eq!(a.net.w_rec, b.net.w_rec);
    }

    #[test]
    fn frozen_w_rec_stays_frozen() {
        let c = PhysicalConstants::default();
        let (net, data) = toy_task(19);
        let cfg = TrainConfig {
            epochs: 20,
            trainable: ["w_in".to_string()].into_iter().collect(),
            mismatch: MismatchSpec::off(),
            ..TrainConfig::default()
        };
        let rec = train(&net, &data, &cfg, &c).unwrap();
        assert_eq!(rec.net.w_rec, net.w_rec);
        assert_ne!(rec.net.w_in, net.w_in);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        cfg.trainable.insert("itau_mem".into());
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { trainable: BTreeSet::new(), ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { surrogate_slope: 0.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        let c = PhysicalConstants::default();
        let (net, _) = toy_task(23);
        assert!(train(&net, &[], &TrainConfig::default(), &c).is_err());
    }
}
