//! Physical constants of the transistor-level neuron model.
//!
//! Every time constant in the simulator comes from the translinear relation
//! of a differential pair integrator: a capacitance `C` charged through a
//! subthreshold leak current `Itau` integrates with
//!
//! ```text
//! tau = C * U_T / (kappa * Itau)
//! ```
//!
//! where `U_T` is the thermal voltage and `kappa` the subthreshold slope
//! factor. The same relation converts pulse and refractory bias currents to
//! pulse widths and refractory periods.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transistor and capacitor constants shared by all neurons.
///
/// Values are silicon-plausible defaults, not a calibration of any specific
/// die; every field can be overridden from a run config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicalConstants {
    /// Thermal voltage U_T in volts.
    pub thermal_voltage: f64,
    /// Subthreshold slope factor kappa (dimensionless).
    pub kappa: f64,
    /// Membrane capacitance in farads.
    pub c_mem: f64,
    /// Synapse capacitances in farads, one per synapse circuit.
    pub c_ampa: f64,
    pub c_gaba: f64,
    pub c_nmda: f64,
    pub c_shunt: f64,
    pub c_ahp: f64,
    /// Capacitance of the refractory-period circuit in farads.
    pub c_ref: f64,
    /// Capacitance of the pulse-extender circuit in farads.
    pub c_pulse: f64,
    /// Leakage floor in amperes; every current in the model is clipped here.
    pub i_floor: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            thermal_voltage: 25e-3,
            kappa: 0.7,
            c_mem: 3e-12,
            c_ampa: 2.5e-12,
            c_gaba: 2.5e-12,
            c_nmda: 2.5e-12,
            c_shunt: 2.5e-12,
            c_ahp: 2.5e-12,
            c_ref: 1.5e-12,
            c_pulse: 0.5e-12,
            i_floor: 1e-15,
        }
    }
}

impl PhysicalConstants {
    /// Checks that every constant is finite and strictly positive.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("thermal_voltage", self.thermal_voltage),
            ("kappa", self.kappa),
            ("c_mem", self.c_mem),
            ("c_ampa", self.c_ampa),
            ("c_gaba", self.c_gaba),
            ("c_nmda", self.c_nmda),
            ("c_shunt", self.c_shunt),
            ("c_ahp", self.c_ahp),
            ("c_ref", self.c_ref),
            ("c_pulse", self.c_pulse),
            ("i_floor", self.i_floor),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(format!(
                    "physical constant {name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Time constant of a capacitance `c_cap` leaked by `itau`:
/// `tau = c_cap * U_T / (kappa * itau)`.
///
/// Errors if `itau` is not finite and positive.
pub fn derive_time_constant(itau: f64, c_cap: f64, constants: &PhysicalConstants) -> Result<f64> {
    if !itau.is_finite() || itau <= 0.0 {
        return Err(Error::invalid(format!(
            "leak current must be finite and positive to derive a time constant, got {itau}"
        )));
    }
    if !c_cap.is_finite() || c_cap <= 0.0 {
        return Err(Error::invalid(format!(
            "capacitance must be finite and positive, got {c_cap}"
        )));
    }
    Ok(c_cap * constants.thermal_voltage / (constants.kappa * itau))
}

/// Inverse of [`derive_time_constant`]: the leak current that realizes `tau`.
pub fn current_for_time_constant(tau: f64, c_cap: f64, constants: &PhysicalConstants) -> Result<f64> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::invalid(format!(
            "time constant must be finite and positive, got {tau}"
        )));
    }
    Ok(c_cap * constants.thermal_voltage / (constants.kappa * tau))
}
