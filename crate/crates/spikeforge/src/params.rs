//! Bias-current parameter set of a simulated neuron core.
//!
//! All dynamic quantities are expressed as subthreshold bias currents in
//! amperes, mirroring how the target device is programmed: time constants,
//! pulse widths and refractory periods are derived from capacitances and
//! these currents (see [`crate::constants`]), never stored directly.

use serde::{Deserialize, Serialize};

use crate::constants::{current_for_time_constant, derive_time_constant, PhysicalConstants};
use crate::error::{Error, Result};

/// Synapse circuits of a neuron. The first four receive events; AHP is
/// driven by the neuron's own spikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Synapse {
    Ampa,
    Gaba,
    Nmda,
    Shunt,
    Ahp,
}

impl Synapse {
    /// The four event-driven synapse circuits, in routing order.
    pub const EVENT_DRIVEN: [Synapse; 4] = [Synapse::Ampa, Synapse::Gaba, Synapse::Nmda, Synapse::Shunt];
}

/// Per-core simulation parameters.
///
/// `dt` is the simulation step in seconds and `iw_scale` the conversion
/// between dimensionless simulation weights and synaptic weight currents
/// (amperes per weight unit); both are conventions of the toolchain, not
/// chip biases. Everything else is a bias current in amperes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Membrane leak current (sets tau_mem).
    pub itau_mem: f64,
    /// Membrane gain current; steady-state gain is igain_mem / itau_mem.
    pub igain_mem: f64,
    /// Spike threshold on the membrane current.
    pub i_spkthr: f64,
    /// Membrane current value after a spike.
    pub i_reset: f64,
    /// Constant background input current.
    pub i_dc: f64,
    /// Refractory-period bias (sets t_ref through c_ref).
    pub i_ref: f64,
    /// Pulse-extender bias (sets t_pulse through c_pulse).
    pub i_pulse: f64,
    pub itau_ampa: f64,
    pub igain_ampa: f64,
    pub itau_gaba: f64,
    pub igain_gaba: f64,
    pub itau_nmda: f64,
    pub igain_nmda: f64,
    pub itau_shunt: f64,
    pub igain_shunt: f64,
    pub itau_ahp: f64,
    pub igain_ahp: f64,
    /// Weight current of the spike-frequency-adaptation (AHP) synapse.
    pub iw_ahp: f64,
    /// The four shared base weight currents, ascending.
    pub iw_base: [f64; 4],
    /// Amperes per dimensionless simulation weight unit.
    pub iw_scale: f64,
    /// Simulation step in seconds.
    pub dt: f64,
}

impl Default for SimParams {
    /// Deployable preset: every bias current sits inside the range of the
    /// synthetic bias table, with round time constants under the default
    /// [`PhysicalConstants`] (tau_mem 20 ms, tau_syn 10 ms, tau_ahp 50 ms,
    /// t_pulse 10 us, t_ref 2 ms).
    fn default() -> Self {
        SimParams {
            itau_mem: 5.357142857142857e-12,
            igain_mem: 2.1428571428571428e-11,
            i_spkthr: 5e-14,
            i_reset: 1e-15,
            i_dc: 1e-15,
            i_ref: 2.6785714285714285e-11,
            i_pulse: 1.7857142857142855e-9,
            itau_ampa: 8.928571428571428e-12,
            igain_ampa: 3.571428571428571e-11,
            itau_gaba: 8.928571428571428e-12,
            igain_gaba: 3.571428571428571e-11,
            itau_nmda: 8.928571428571428e-12,
            igain_nmda: 3.571428571428571e-11,
            itau_shunt: 8.928571428571428e-12,
            igain_shunt: 3.571428571428571e-11,
            itau_ahp: 1.7857142857142857e-12,
            igain_ahp: 7.142857142857143e-12,
            iw_ahp: 1e-12,
            iw_base: [5e-13, 1e-12, 2e-12, 4e-12],
            iw_scale: 1e-12,
            dt: 1e-3,
        }
    }
}

impl SimParams {
    /// Scale-free variant with a 1 uA spike threshold. Convenient for
    /// dimensionless experiments, but not translatable to device biases
    /// (the threshold exceeds every bias table's range).
    pub fn scale_free() -> Self {
        SimParams {
            i_spkthr: 1e-6,
            ..SimParams::default()
        }
    }

    /// Names of the bias-current fields, in a fixed order that mismatch
    /// sampling and bias translation both rely on.
    pub const CURRENT_FIELDS: [&'static str; 17] = [
        "itau_mem",
        "igain_mem",
        "i_spkthr",
        "i_reset",
        "i_dc",
        "i_ref",
        "i_pulse",
        "itau_ampa",
        "igain_ampa",
        "itau_gaba",
        "igain_gaba",
        "itau_nmda",
        "igain_nmda",
        "itau_shunt",
        "igain_shunt",
        "itau_ahp",
        "igain_ahp",
    ];

    /// Bias-current fields plus the AHP weight current. These are the
    /// fields subject to device mismatch and bias-code translation
    /// (`iw_base` is handled per entry by the quantizer/deployment path;
    /// `iw_scale` and `dt` are conventions, not biases).
    pub const MISMATCH_FIELDS: [&'static str; 18] = [
        "itau_mem",
        "igain_mem",
        "i_spkthr",
        "i_reset",
        "i_dc",
        "i_ref",
        "i_pulse",
        "itau_ampa",
        "igain_ampa",
        "itau_gaba",
        "igain_gaba",
        "itau_nmda",
        "igain_nmda",
        "itau_shunt",
        "igain_shunt",
        "itau_ahp",
        "igain_ahp",
        "iw_ahp",
    ];

    /// Reads a current field by name. Returns `None` for unknown names.
    pub fn field(&self, name: &str) -> Option<f64> {
        Some(match name {
            "itau_mem" => self.itau_mem,
            "igain_mem" => self.igain_mem,
            "i_spkthr" => self.i_spkthr,
            "i_reset" => self.i_reset,
            "i_dc" => self.i_dc,
            "i_ref" => self.i_ref,
            "i_pulse" => self.i_pulse,
            "itau_ampa" => self.itau_ampa,
            "igain_ampa" => self.igain_ampa,
            "itau_gaba" => self.itau_gaba,
            "igain_gaba" => self.igain_gaba,
            "itau_nmda" => self.itau_nmda,
            "igain_nmda" => self.igain_nmda,
            "itau_shunt" => self.itau_shunt,
            "igain_shunt" => self.igain_shunt,
            "itau_ahp" => self.itau_ahp,
            "igain_ahp" => self.igain_ahp,
            "iw_ahp" => self.iw_ahp,
            _ => return None,
        })
    }

    /// Writes a current field by name. Returns an error for unknown names.
    pub fn set_field(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "itau_mem" => &mut self.itau_mem,
            "igain_mem" => &mut self.igain_mem,
            "i_spkthr" => &mut self.i_spkthr,
            "i_reset" => &mut self.i_reset,
            "i_dc" => &mut self.i_dc,
            "i_ref" => &mut self.i_ref,
            "i_pulse" => &mut self.i_pulse,
            "itau_ampa" => &mut self.itau_ampa,
            "igain_ampa" => &mut self.igain_ampa,
            "itau_gaba" => &mut self.itau_gaba,
            "igain_gaba" => &mut self.igain_gaba,
            "itau_nmda" => &mut self.itau_nmda,
            "igain_nmda" => &mut self.igain_nmda,
            "itau_shunt" => &mut self.itau_shunt,
            "igain_shunt" => &mut self.igain_shunt,
            "itau_ahp" => &mut self.itau_ahp,
            "igain_ahp" => &mut self.igain_ahp,
            "iw_ahp" => &mut self.iw_ahp,
            _ => return Err(Error::invalid(format!("unknown parameter field '{name}'"))),
        };
        *slot = value;
        Ok(())
    }

    /// Leak current field for a synapse circuit.
    pub fn itau_syn(&self, s: Synapse) -> f64 {
        match s {
            Synapse::Ampa => self.itau_ampa,
            Synapse::Gaba => self.itau_gaba,
            Synapse::Nmda => self.itau_nmda,
            Synapse::Shunt => self.itau_shunt,
            Synapse::Ahp => self.itau_ahp,
        }
    }

    /// Gain current field for a synapse circuit.
    pub fn igain_syn(&self, s: Synapse) -> f64 {
        match s {
            Synapse::Ampa => self.igain_ampa,
            Synapse::Gaba => self.igain_gaba,
            Synapse::Nmda => self.igain_nmda,
            Synapse::Shunt => self.igain_shunt,
            Synapse::Ahp => self.igain_ahp,
        }
    }

    fn c_syn(s: Synapse, constants: &PhysicalConstants) -> f64 {
        match s {
            Synapse::Ampa => constants.c_ampa,
            Synapse::Gaba => constants.c_gaba,
            Synapse::Nmda => constants.c_nmda,
            Synapse::Shunt => constants.c_shunt,
            Synapse::Ahp => constants.c_ahp,
        }
    }

    /// Membrane time constant in seconds.
    pub fn tau_mem(&self, constants: &PhysicalConstants) -> Result<f64> {
        derive_time_constant(self.itau_mem, constants.c_mem, constants)
    }

    /// Time constant of a synapse circuit in seconds.
    pub fn tau_syn(&self, s: Synapse, constants: &PhysicalConstants) -> Result<f64> {
        derive_time_constant(self.itau_syn(s), Self::c_syn(s, constants), constants)
    }

    /// Width of the synaptic current pulse in seconds.
    pub fn t_pulse(&self, constants: &PhysicalConstants) -> Result<f64> {
        derive_time_constant(self.i_pulse, constants.c_pulse, constants)
    }

    /// Refractory period in seconds.
    pub fn t_ref(&self, constants: &PhysicalConstants) -> Result<f64> {
        derive_time_constant(self.i_ref, constants.c_ref, constants)
    }

    /// Refractory period in whole simulation steps: round(t_ref / dt),
    /// exact halves rounding up.
    pub fn refractory_steps(&self, constants: &PhysicalConstants) -> Result<u32> {
        let t_ref = self.t_ref(constants)?;
        Ok(steps_for_interval(t_ref, self.dt))
    }

    /// Builder-style override of the spike threshold.
    pub fn with_threshold(mut self, i_spkthr: f64) -> Self {
        self.i_spkthr = i_spkthr;
        self
    }

    /// Builder-style override of the step size.
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    /// Checks invariants: every current finite and positive, a spike
    /// threshold above the state floor, ascending base weights, positive
    /// `dt` and `iw_scale`.
    pub fn validate(&self, constants: &PhysicalConstants) -> Result<()> {
        // Bias currents must be positive; they may sit below the state
        // floor (the simulation clips state, not biases, and a calibrated
        // code can land slightly under the clip).
        for name in Self::MISMATCH_FIELDS {
            let v = self.field(name).expect("listed field");
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(format!(
                    "parameter {name} = {v:e} A must be finite and positive"
                )));
            }
        }
        // The threshold is the one bias compared against clipped state: at
        // or below the floor a resting neuron would fire on every step.
        if self.i_spkthr <= constants.i_floor {
            return Err(Error::invalid(format!(
                "spike threshold {:e} A must exceed the state floor ({:e} A)",
                self.i_spkthr, constants.i_floor
            )));
        }
        // Base weights are deployment targets, not simulated state, so
        // they may sit below the dynamic floor (a calibrated table can
        // reach further down than the simulation clips).
        for (k, &b) in self.iw_base.iter().enumerate() {
            if !b.is_finite() || b < 0.0 {
                return Err(Error::invalid(format!(
                    "base weight {k} = {b:e} A must be finite and nonnegative"
                )));
            }
        }
        if !(self.iw_base[0] <= self.iw_base[1]
            && self.iw_base[1] <= self.iw_base[2]
            && self.iw_base[2] <= self.iw_base[3])
        {
            return Err(Error::invalid(format!(
                "base weights must be ascending, got {:?}",
                self.iw_base
            )));
        }
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::invalid(format!("dt must be finite and positive, got {}", self.dt)));
        }
        if !self.iw_scale.is_finite() || self.iw_scale <= 0.0 {
            return Err(Error::invalid(format!(
                "iw_scale must be finite and positive, got {}",
                self.iw_scale
            )));
        }
        Ok(())
    }

    /// Convenience constructor that picks leak currents for the requested
    /// time constants and leaves everything else at the preset.
    pub fn with_time_constants(
        tau_mem: f64,
        tau_syn: f64,
        constants: &PhysicalConstants,
    ) -> Result<Self> {
        let mut p = SimParams::default();
        let gain_ratio_mem = p.igain_mem / p.itau_mem;
        let gain_ratio_syn = p.igain_ampa / p.itau_ampa;
        p.itau_mem = current_for_time_constant(tau_mem, constants.c_mem, constants)?;
        p.igain_mem = gain_ratio_mem * p.itau_mem;
        for s in Synapse::EVENT_DRIVEN {
            let itau = current_for_time_constant(tau_syn, Self::c_syn(s, constants), constants)?;
            let (t, g) = match s {
                Synapse::Ampa => (&mut p.itau_ampa, &mut p.igain_ampa),
                Synapse::Gaba => (&mut p.itau_gaba, &mut p.igain_gaba),
                Synapse::Nmda => (&mut p.itau_nmda, &mut p.igain_nmda),
                Synapse::Shunt => (&mut p.itau_shunt, &mut p.igain_shunt),
                Synapse::Ahp => unreachable!(),
            };
            *t = itau;
            *g = gain_ratio_syn * itau;
        }
        Ok(p)
    }
}

/// Number of whole steps covering an interval: round(t / dt), exact halves
/// rounding up.
pub(crate) fn steps_for_interval(t: f64, dt: f64) -> u32 {
    let steps = (t / dt + 0.5).floor();
    if steps < 0.0 {
        0
    } else {
        steps as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_params_validate() {
        SimParams::default().validate(&PhysicalConstants::default()).unwrap();
        SimParams::scale_free().validate(&PhysicalConstants::default()).unwrap();
    }

    #[test]
    fn preset_time_constants_are_round() {
        let c = PhysicalConstants::default();
        let p = SimParams::default();
        assert_relative_eq!(p.tau_mem(&c).unwrap(), 20e-3, max_relative = 1e-12);
        assert_relative_eq!(p.tau_syn(Synapse::Ampa, &c).unwrap(), 10e-3, max_relative = 1e-12);
        assert_relative_eq!(p.tau_syn(Synapse::Gaba, &c).unwrap(), 10e-3, max_relative = 1e-12);
        assert_relative_eq!(p.tau_syn(Synapse::Ahp, &c).unwrap(), 50e-3, max_relative = 1e-12);
        assert_relative_eq!(p.t_pulse(&c).unwrap(), 10e-6, max_relative = 1e-12);
        assert_relative_eq!(p.t_ref(&c).unwrap(), 2e-3, max_relative = 1e-12);
        assert_eq!(p.refractory_steps(&c).unwrap(), 2);
    }

    #[test]
    fn interval_rounding_ties_go_up() {
        assert_eq!(steps_for_interval(0.625, 0.25), 3); // 2.5 steps, binary-exact
        assert_eq!(steps_for_interval(0.5, 0.25), 2);
        assert_eq!(steps_for_interval(0.624, 0.25), 2);
        assert_eq!(steps_for_interval(0.0, 0.25), 0);
    }

    #[test]
    fn field_access_round_trips() {
        let mut p = SimParams::default();
        for name in SimParams::MISMATCH_FIELDS {
            let v = p.field(name).unwrap();
            p.set_field(name, v * 2.0).unwrap();
            assert_eq!(p.field(name).unwrap(), v * 2.0, "{name}");
        }
        assert!(p.field("no_such_field").is_none());
        assert!(p.set_field("no_such_field", 1.0).is_err());
    }

    #[test]
    fn validate_rejects_nonpositive_currents() {
        let c = PhysicalConstants::default();
        let mut p = SimParams::default();
        p.i_dc = 0.0;
        assert!(p.validate(&c).is_err());
        let mut p = SimParams::default();
        p.i_dc = 1e-16; // below the state floor is fine for a bias
        assert!(p.validate(&c).is_ok());
        let mut p = SimParams::default();
        p.itau_mem = f64::NAN;
        assert!(p.validate(&c).is_err());
        let mut p = SimParams::default();
        p.iw_base = [1e-12, 5e-13, 2e-12, 4e-12];
        assert!(p.validate(&c).is_err());
    }

    #[test]
    fn requested_time_constants_are_honored() {
        let c = PhysicalConstants::default();
        let p = SimParams::with_time_constants(33e-3, 7e-3, &c).unwrap();
        assert_relative_eq!(p.tau_mem(&c).unwrap(), 33e-3, max_relative = 1e-12);
        assert_relative_eq!(p.tau_syn(Synapse::Shunt, &c).unwrap(), 7e-3, max_relative = 1e-12);
        // Gain ratios preserved from the preset.
        assert_relative_eq!(p.igain_mem / p.itau_mem, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn serde_round_trip() {
        let p = SimParams::default();
        let json = serde_json::to_string(&p).unwrap();
        let q: SimParams = serde_json::from_str(&json).unwrap();
        assert_eq!(p, q);
    }
}
