//! Fabrication-mismatch model: frozen multiplicative Gaussian noise.
//!
//! Analog neuromorphic cores realize every bias current with a per-neuron
//! transistor, so nominally identical parameters differ from neuron to
//! neuron. This module samples that spread: each targeted parameter `p`
//! becomes `max(p * (1 + sigma_rel * z), i_floor)` with `z ~ N(0,1)` drawn
//! independently per neuron and parameter. Weight matrices are perturbed
//! per connection with the factor clamped at zero, so a synapse can fade
//! out but never flip sign (that would change its synapse type).
//!
//! Draws are deterministic in `(seed, draw_index)`: the RNG is keyed by the
//! seed and the draw index selects an independent stream, so draw `k` can
//! be reproduced without generating draws `0..k`.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::network::{evolve_hetero, evolve_hetero_recorded, Network, StateTrace};
use crate::params::SimParams;
use crate::raster::SpikeRaster;

/// Valid weight-matrix target names.
pub const WEIGHT_TARGETS: [&str; 2] = ["w_in", "w_rec"];

/// Mismatch injection policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MismatchSpec {
    /// Relative standard deviation of the parameter spread.
    pub sigma_rel: f64,
    /// A fresh draw is taken every this many training epochs.
    pub refresh_period: u32,
    /// RNG key; independent from every other seed in a run.
    pub seed: u64,
    /// Parameter names to perturb: any of [`SimParams::MISMATCH_FIELDS`]
    /// plus `"w_in"` / `"w_rec"`.
    pub targets: BTreeSet<String>,
    /// Step size of gradient-sign (adversarial) weight perturbation applied
    /// on non-refresh epochs; 0 disables it.
    pub adversarial_step: f64,
}

impl Default for MismatchSpec {
    fn default() -> Self {
        MismatchSpec {
            sigma_rel: 0.2,
            refresh_period: 100,
            seed: 0,
            targets: Self::all_targets(),
            adversarial_step: 0.0,
        }
    }
}

impl MismatchSpec {
    /// Every perturbable parameter: all bias currents plus both weight
    /// matrices.
    pub fn all_targets() -> BTreeSet<String> {
        SimParams::MISMATCH_FIELDS
            .iter()
            .map(|s| s.to_string())
            .chain(WEIGHT_TARGETS.iter().map(|s| s.to_string()))
            .collect()
    }

    /// Disabled mismatch (sigma 0, no adversarial step).
    pub fn off() -> Self {
        MismatchSpec { sigma_rel: 0.0, adversarial_step: 0.0, ..MismatchSpec::default() }
    }

    pub fn with_sigma(mut self, sigma_rel: f64) -> Self {
        self.sigma_rel = sigma_rel;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn is_off(&self) -> bool {
        self.sigma_rel == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma_rel.is_finite() || self.sigma_rel < 0.0 {
            return Err(Error::invalid(format!(
                "mismatch sigma_rel must be finite and non-negative, got {}",
                self.sigma_rel
            )));
        }
        if self.refresh_period == 0 {
            return Err(Error::invalid("mismatch refresh_period must be at least 1"));
        }
        if !self.adversarial_step.is_finite() || self.adversarial_step < 0.0 {
            return Err(Error::invalid(format!(
                "adversarial_step must be finite and non-negative, got {}",
                self.adversarial_step
            )));
        }
        for t in &self.targets {
            let known = SimParams::MISMATCH_FIELDS.contains(&t.as_str())
                || WEIGHT_TARGETS.contains(&t.as_str());
            if !known {
                return Err(Error::invalid(format!("unknown mismatch target '{t}'")));
            }
        }
        Ok(())
    }
}

/// One frozen mismatch draw: per-neuron parameters plus perturbed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedNet {
    pub w_in: Array2<f64>,
    pub w_rec: Array2<f64>,
    pub params: Vec<SimParams>,
}

impl PerturbedNet {
    pub fn evolve(&self, input: &SpikeRaster, constants: &PhysicalConstants) -> Result<SpikeRaster> {
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

/// Epoch-to-draw schedule: epoch `e` uses draw `floor(e / refresh_period)`.
pub fn draw_index_for_epoch(epoch: u32, refresh_period: u32) -> u64 {
    (epoch / refresh_period.max(1)) as u64
}

/// Samples one frozen mismatch draw for a network.
///
/// One standard normal is consumed per neuron and parameter field and per
/// weight entry regardless of the target set, so the draw a given
/// `(seed, draw_index)` assigns to a parameter does not depend on which
/// other parameters are targeted.
pub fn sample_mismatch(
    net: &Network,
    spec: &MismatchSpec,
    draw_index: u64,
    constants: &PhysicalConstants,
) -> Result<PerturbedNet> {
    spec.validate()?;
    net.params.validate(constants)?;
    let n_neurons = net.n_neurons();
    if spec.is_off() {
        return Ok(PerturbedNet {
            w_in: net.w_in.clone(),
            w_rec: net.w_rec.clone(),
            params: vec![net.params; n_neurons],
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(draw_index);
    let sigma = spec.sigma_rel;

    let mut params = Vec::with_capacity(n_neurons);
    for _ in 0..n_neurons {
        params.push(perturb_params(&net.params, &spec.targets, sigma, constants.i_floor, &mut rng));
    }
    let w_in = perturb_weights(&net.w_in, spec.targets.contains("w_in"), sigma, &mut rng);
    let w_rec = perturb_weights(&net.w_rec, spec.targets.contains("w_rec"), sigma, &mut rng);

    Ok(PerturbedNet { w_in, w_rec, params })
}

/// One neuron's parameter draw. Consumes one standard normal per field in
/// [`SimParams::MISMATCH_FIELDS`] whether or not the field is targeted, so
/// the value a field receives never depends on which other fields are
/// enabled.
pub(crate) fn perturb_params(
    base: &SimParams,
    targets: &BTreeSet<String>,
    sigma: f64,
    i_floor: f64,
    rng: &mut ChaCha8Rng,
) -> SimParams {
    let mut p = *base;
    for name in SimParams::MISMATCH_FIELDS {
        let z: f64 = rng.sample(StandardNormal);
        if targets.contains(name) {
            let nominal = p.field(name).expect("listed field");
            let v = (nominal * (1.0 + sigma * z)).max(i_floor);
            p.set_field(name, v).expect("listed field");
        }
    }
    p
}

/// One weight-matrix draw; the factor clamps at zero so entries keep their
/// sign and exact zeros stay zero. Consumes one standard normal per entry
/// whether or not the matrix is targeted.
pub(crate) fn perturb_weights(
    w: &Array2<f64>,
    enabled: bool,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    w.mapv(|v| {
        let z: f64 = rng.sample(StandardNormal);
        if enabled {
            v * (1.0 + sigma * z).max(0.0)
        } else {
            v
        }
    })
}

/// Worst-case parameter perturbation: scales each entry by
/// `(1 + step_size * sign(gradient * value))`, the direction that increases
/// the loss to first order. For positive parameters this reduces to the
/// gradient-sign rule `p * (1 + step * sign(dL/dp))`. Zero entries and zero
/// gradients are left untouched.
pub fn adversarial_perturb(
    values: &Array2<f64>,
    gradient: &Array2<f64>,
    step_size: f64,
) -> Result<Array2<f64>> {
    if values.dim() != gradient.dim() {
        return Err(Error::dim(
            "adversarial perturbation",
            format!("{:?}", values.dim()),
            format!("{:?}", gradient.dim()),
        ));
    }
    if !step_size.is_finite() || step_size < 0.0 {
        return Err(Error::invalid(format!(
            "adversarial step size must be finite and non-negative, got {step_size}"
        )));
    }
    let mut out = values.clone();
    out.zip_mut_with(gradient, |v, &g| {
        *v *= 1.0 + step_size * (g * *v).signum_or_zero();
    });
    Ok(out)
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_net() -> Network {
        Network::new(
            array![[1.0, -0.5], [0.0, 2.0]],
            array![[0.0, 0.3], [-0.2, 0.0]],
            SimParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn draws_are_deterministic_per_seed_and_index() {
        let c = PhysicalConstants::default();
        let net = toy_net();
        let spec = MismatchSpec::default().with_seed(7);
        let a = sample_mismatch(&net, &spec, 3, &c).unwrap();
        let b = sample_mismatch(&net, &spec, 3, &c).unwrap();
        assert_eq!(a, b);
        let other_draw = sample_mismatch(&net, &spec, 4, &c).unwrap();
        assert_ne!(a.params[0].itau_mem, other_draw.params[0].itau_mem);
        let other_seed = sample_mismatch(&net, &spec.clone().with_seed(8), 3, &c).unwrap();
        assert_ne!(a.params[0].itau_mem, other_seed.params[0].itau_mem);
    }

    #[test]
    fn sample_statistics_match_the_model() {
        // Mean within 1% of nominal, std within 5% of sigma*nominal over
        // 1e5 independent draws; no sampled current below the floor.
        let c = PhysicalConstants::default();
        let net = Network::new(array![[1.0]], array![[0.0]], SimParams::default()).unwrap();
        let spec = MismatchSpec::default().with_sigma(0.2).with_seed(42);
        let nominal = net.params.itau_mem;
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for draw in 0..n {
            let p = sample_mismatch(&net, &spec, draw, &c).unwrap().params[0];
            assert!(p.itau_mem >= c.i_floor);
            sum += p.itau_mem;
            sum_sq += p.itau_mem * p.itau_mem;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let std = var.sqrt();
        assert!((mean / nominal - 1.0).abs() < 0.01, "mean {mean:e} vs nominal {nominal:e}");
        assert!(
            (std / (0.2 * nominal) - 1.0).abs() < 0.05,
            "std {std:e} vs expected {:e}",
            0.2 * nominal
        );
    }

    #[test]
    fn weights_keep_sign_and_zeros_stay_zero() {
        let c = PhysicalConstants::default();
        let net = toy_net();
        // Large sigma forces many factors onto the clamp at zero.
        let spec = MismatchSpec::default().with_sigma(3.0);
        for draw in 0..50 {
            let p = sample_mismatch(&net, &spec, draw, &c).unwrap();
            for (orig, pert) in net.w_in.iter().zip(p.w_in.iter()) {
                assert!(orig.signum() == pert.signum() || *pert == 0.0);
                if *orig == 0.0 {
                    assert_eq!(*pert, 0.0);
                }
            }
            // At this sigma some draws clamp all the way down; the sampler
            // guarantees the floor, not full config sanity.
            for p in &p.params {
                for name in SimParams::MISMATCH_FIELDS {
                    assert!(p.field(name).unwrap() >= c.i_floor);
                }
            }
        }
    }

    #[test]
    fn untargeted_parameters_are_untouched() {
        let c = PhysicalConstants::default();
        let net = toy_net();
        let mut spec = MismatchSpec::default();
        spec.targets = ["itau_mem".to_string()].into_iter().collect();
        let p = sample_mismatch(&net, &spec, 0, &c).unwrap();
        assert_ne!(p.params[0].itau_mem, net.params.itau_mem);
        assert_eq!(p.params[0].igain_mem, net.params.igain_mem);
        assert_eq!(p.w_in, net.w_in);
        assert_eq!(p.w_rec, net.w_rec);
    }

    #[test]
    fn target_independent_draws() {
        // The z a given parameter receives must not depend on whether other
        // parameters are targeted.
        let c = PhysicalConstants::default();
        let net = toy_net();
        let all = MismatchSpec::default();
        let mut only_gain = MismatchSpec::default();
        only_gain.targets = ["igain_mem".to_string()].into_iter().collect();
        let a = sample_mismatch(&net, &all, 5, &c).unwrap();
        let b = sample_mismatch(&net, &only_gain, 5, &c).unwrap();
        assert_eq!(a.params[1].igain_mem, b.params[1].igain_mem);
    }

    #[test]
    fn unknown_targets_and_bad_spec_rejected() {
        let mut spec = MismatchSpec::default();
        spec.targets.insert("resistance".into());
        assert!(spec.validate().is_err());
        let spec = MismatchSpec { sigma_rel: -0.1, ..MismatchSpec::default() };
        assert!(spec.validate().is_err());
        let spec = MismatchSpec { refresh_period: 0, ..MismatchSpec::default() };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn off_spec_is_identity() {
        let c = PhysicalConstants::default();
        let net = toy_net();
        let p = sample_mismatch(&net, &MismatchSpec::off(), 9, &c).unwrap();
        assert_eq!(p.w_in, net.w_in);
        assert_eq!(p.w_rec, net.w_rec);
        assert!(p.params.iter().all(|q| *q == net.params));
    }

    #[test]
    fn epoch_schedule() {
        assert_eq!(draw_index_for_epoch(0, 100), 0);
        assert_eq!(draw_index_for_epoch(99, 100), 0);
        assert_eq!(draw_index_for_epoch(100, 100), 1);
        assert_eq!(draw_index_for_epoch(250, 100), 2);
    }

    #[test]
    fn adversarial_step_increases_linear_loss() {
        // For L(w) = sum(g * w) the rule must never decrease the loss,
        // whatever the signs of w and g.
        let w = array![[1.0, -2.0], [0.5, -0.25]];
        let g = array![[3.0, 1.0], [-2.0, -4.0]];
        let w2 = adversarial_perturb(&w, &g, 0.1).unwrap();
        let loss = |w: &Array2<f64>| (w * &g).sum();
        assert!(loss(&w2) >= loss(&w));
        // Positive parameter, positive gradient: the spec'd scale-up rule.
        let p = array![[2.0]];
        let gp = array![[1.0]];
        assert_eq!(adversarial_perturb(&p, &gp, 0.1).unwrap()[[0, 0]], 2.0 * 1.1);
        // Zero entries stay put.
        let z = array![[0.0]];
        assert_eq!(adversarial_perturb(&z, &gp, 0.1).unwrap()[[0, 0]], 0.0);
        // Shape mismatch is rejected.
        assert!(adversarial_perturb(&w, &p, 0.1).is_err());
    }
}
