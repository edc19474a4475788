//! Discrete-time dynamics of one differential-pair-integrator neuron.
//!
//! Every state variable is a strictly positive current, clipped from below
//! at the leakage floor. One step applies, in order:
//!
//! 1. synaptic decay plus weighted event injection (AMPA, GABA, NMDA,
//!    SHUNT), AHP decay;
//! 2. input aggregation `Iin = max(Iampa + Inmda + Idc - Igaba - Ishunt
//!    - Iahp, floor)`;
//! 3. membrane update by exponential Euler
//!    `Imem' = Imem*a + (1-a)*(Igain_mem/Itau_mem)*Iin`,
//!    `a = exp(-dt/tau_mem)`, unless the neuron is refractory;
//! 4. threshold compare, reset to `i_reset`, AHP self-injection and
//!    refractory arming on a spike.
//!
//! Synaptic injection per presynaptic event of weight `w` is
//! `w * iw_scale * (Igain_s/Itau_s) * (1 - exp(-t_pulse/tau_s))`: the
//! charge a `t_pulse`-wide pulse of the weight current deposits on the
//! synapse capacitor, amplified by the circuit gain.

use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::params::{SimParams, Synapse};

/// Dynamic state of a single neuron. All currents in amperes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub i_mem: f64,
    pub i_ampa: f64,
    pub i_gaba: f64,
    pub i_nmda: f64,
    pub i_shunt: f64,
    pub i_ahp: f64,
    /// Remaining refractory steps; the neuron cannot spike while > 0.
    pub refractory_remaining: u32,
    /// Whether the neuron spiked on the most recent step.
    pub spiked: bool,
}

impl NeuronState {
    /// Resting state: every current at the leakage floor.
    pub fn resting(constants: &PhysicalConstants) -> Self {
        let f = constants.i_floor;
        NeuronState {
            i_mem: f,
            i_ampa: f,
            i_gaba: f,
            i_nmda: f,
            i_shunt: f,
            i_ahp: f,
            refractory_remaining: 0,
            spiked: false,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.i_mem.is_finite()
            && self.i_ampa.is_finite()
            && self.i_gaba.is_finite()
            && self.i_nmda.is_finite()
            && self.i_shunt.is_finite()
            && self.i_ahp.is_finite()
    }
}

/// Weighted presynaptic event counts arriving at one neuron in one step,
/// already routed per synapse type. Non-negative.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SynapticInput {
    pub ampa: f64,
    pub gaba: f64,
    pub nmda: f64,
    pub shunt: f64,
}

impl SynapticInput {
    fn is_valid(&self) -> bool {
        [self.ampa, self.gaba, self.nmda, self.shunt]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Step coefficients precomputed from [`SimParams`]; building them once per
/// neuron keeps the inner simulation loop free of exponentials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronCoeffs {
    pub(crate) decay_mem: f64,
    pub(crate) gain_mem: f64,
    /// exp(-dt/tau_s) for AMPA, GABA, NMDA, SHUNT.
    pub(crate) decay_syn: [f64; 4],
    pub(crate) decay_ahp: f64,
    /// Current injected per unit weight for AMPA, GABA, NMDA, SHUNT.
    pub(crate) jump_syn: [f64; 4],
    /// Current injected into the AHP synapse by one output spike.
    pub(crate) jump_ahp: f64,
    pub(crate) i_spkthr: f64,
    pub(crate) i_reset: f64,
    pub(crate) i_dc: f64,
    pub(crate) i_floor: f64,
    pub(crate) n_ref: u32,
}

impl NeuronCoeffs {
    pub fn new(params: &SimParams, constants: &PhysicalConstants) -> Result<Self> {
        params.validate(constants)?;
        constants.validate()?;
        let dt = params.dt;
        let tau_mem = params.tau_mem(constants)?;
        let t_pulse = params.t_pulse(constants)?;

        let mut decay_syn = [0.0; 4];
        let mut jump_syn = [0.0; 4];
        for (i, s) in Synapse::EVENT_DRIVEN.iter().enumerate() {
            let tau = params.tau_syn(*s, constants)?;
            decay_syn[i] = (-dt / tau).exp();
            jump_syn[i] = params.iw_scale
                * (params.igain_syn(*s) / params.itau_syn(*s))
                * (-(-t_pulse / tau).exp_m1());
        }
        let tau_ahp = params.tau_syn(Synapse::Ahp, constants)?;
        let jump_ahp = params.iw_ahp
            * (params.igain_ahp / params.itau_ahp)
            * (-(-t_pulse / tau_ahp).exp_m1());

        Ok(NeuronCoeffs {
            decay_mem: (-dt / tau_mem).exp(),
            gain_mem: params.igain_mem / params.itau_mem,
            decay_syn,
            decay_ahp: (-dt / tau_ahp).exp(),
            jump_ahp,
            jump_syn,
            i_spkthr: params.i_spkthr,
            i_reset: params.i_reset,
            i_dc: params.i_dc,
            i_floor: constants.i_floor,
            n_ref: params.refractory_steps(constants)?,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.i_spkthr
    }

    /// Synaptic current injected per unit weight on the given circuit.
    pub fn unit_jump(&self, s: Synapse) -> f64 {
        match s {
            Synapse::Ampa => self.jump_syn[0],
            Synapse::Gaba => self.jump_syn[1],
            Synapse::Nmda => self.jump_syn[2],
            Synapse::Shunt => self.jump_syn[3],
            Synapse::Ahp => self.jump_ahp,
        }
    }
}

/// Clip-event flags recorded per step; the backward pass uses them to gate
/// gradients through the max() operations and the refractory branch.
pub(crate) mod flag {
    pub const REFRACTORY: u8 = 1 << 0;
    pub const MEM_FLOOR: u8 = 1 << 1;
    pub const IIN_FLOOR: u8 = 1 << 2;
    pub const AMPA_FLOOR: u8 = 1 << 3;
    pub const GABA_FLOOR: u8 = 1 << 4;
    pub const NMDA_FLOOR: u8 = 1 << 5;
    pub const SHUNT_FLOOR: u8 = 1 << 6;
    pub const AHP_FLOOR: u8 = 1 << 7;
}

/// Spike nonlinearity used by the forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum StepMode {
    /// Hard threshold; spikes are 0/1. Production dynamics.
    Hard,
    /// Smoothed spike with the given surrogate slope; refractory dynamics
    /// disabled and resets blended. Only used to verify gradients against
    /// finite differences, where a differentiable forward is required.
    Smoothed { slope: f64 },
}

pub(crate) struct StepResult {
    pub state: NeuronState,
    /// Spike value: 0/1 in hard mode, sigma(x) in smoothed mode.
    pub o: f64,
    /// Membrane current after integration, before reset.
    pub mint: f64,
    pub flags: u8,
}

/// Smoothed spike value for `x = Imem/Ispkthr - 1`; its derivative in `x`
/// is the surrogate gradient `(slope/4) / (1 + slope*|x|)^2`.
pub(crate) fn smoothed_spike(x: f64, slope: f64) -> f64 {
    0.5 + 0.25 * slope * x / (1.0 + slope * x.abs())
}

#[inline]
fn floored(v: f64, floor: f64, flag_bit: u8, flags: &mut u8) -> f64 {
    if v > floor {
        v
    } else {
        *flags |= flag_bit;
        floor
    }
}

/// One dynamics step. Shared by inference and training forward passes.
#[inline]
pub(crate) fn step_core(
    prev: &NeuronState,
    input: &SynapticInput,
    k: &NeuronCoeffs,
    mode: StepMode,
) -> StepResult {
    let mut flags = 0u8;

    // 1. Synaptic decay and event injection; AHP decays before its own
    //    spike-driven jump so the membrane sees the pre-spike value.
    let i_ampa = floored(
        prev.i_ampa * k.decay_syn[0] + input.ampa * k.jump_syn[0],
        k.i_floor,
        flag::AMPA_FLOOR,
        &mut flags,
    );
    let i_gaba = floored(
        prev.i_gaba * k.decay_syn[1] + input.gaba * k.jump_syn[1],
        k.i_floor,
        flag::GABA_FLOOR,
        &mut flags,
    );
    let i_nmda = floored(
        prev.i_nmda * k.decay_syn[2] + input.nmda * k.jump_syn[2],
        k.i_floor,
        flag::NMDA_FLOOR,
        &mut flags,
    );
    let i_shunt = floored(
        prev.i_shunt * k.decay_syn[3] + input.shunt * k.jump_syn[3],
        k.i_floor,
        flag::SHUNT_FLOOR,
        &mut flags,
    );
    let ahp_decayed = floored(prev.i_ahp * k.decay_ahp, k.i_floor, flag::AHP_FLOOR, &mut flags);

    // 2. Aggregate input current.
    let i_in = floored(
        i_ampa + i_nmda + k.i_dc - i_gaba - i_shunt - ahp_decayed,
        k.i_floor,
        flag::IIN_FLOOR,
        &mut flags,
    );

    // 3 + 4. Membrane integration, threshold, reset.
    match mode {
        StepMode::Hard => {
            if prev.refractory_remaining > 0 {
                flags |= flag::REFRACTORY;
                return StepResult {
                    state: NeuronState {
                        i_mem: k.i_reset,
                        i_ampa,
                        i_gaba,
                        i_nmda,
                        i_shunt,
                        i_ahp: ahp_decayed,
                        refractory_remaining: prev.refractory_remaining - 1,
                        spiked: false,
                    },
                    o: 0.0,
                    mint: k.i_reset,
                    flags,
                };
            }
            let mint = floored(
                prev.i_mem * k.decay_mem + (1.0 - k.decay_mem) * k.gain_mem * i_in,
                k.i_floor,
                flag::MEM_FLOOR,
                &mut flags,
            );
            let spiked = mint >= k.i_spkthr;
            let (i_mem, i_ahp, refractory_remaining) = if spiked {
                (
                    k.i_reset,
                    floored(ahp_decayed + k.jump_ahp, k.i_floor, 0, &mut flags),
                    k.n_ref,
                )
            } else {
                (mint, ahp_decayed, 0)
            };
            StepResult {
                state: NeuronState {
                    i_mem,
                    i_ampa,
                    i_gaba,
                    i_nmda,
                    i_shunt,
                    i_ahp,
                    refractory_remaining,
                    spiked,
                },
                o: spiked as u8 as f64,
                mint,
                flags,
            }
        }
        StepMode::Smoothed { slope } => {
            let mint = floored(
                prev.i_mem * k.decay_mem + (1.0 - k.decay_mem) * k.gain_mem * i_in,
                k.i_floor,
                flag::MEM_FLOOR,
                &mut flags,
            );
            let o = smoothed_spike(mint / k.i_spkthr - 1.0, slope);
            let i_mem = o * k.i_reset + (1.0 - o) * mint;
            let i_ahp = ahp_decayed + o * k.jump_ahp;
            StepResult {
                state: NeuronState {
                    i_mem,
                    i_ampa,
                    i_gaba,
                    i_nmda,
                    i_shunt,
                    i_ahp,
                    refractory_remaining: 0,
                    spiked: o >= 0.5,
                },
                o,
                mint,
                flags,
            }
        }
    }
}

/// Advances one neuron by one step. Returns the new state and whether it
/// spiked. Errors on non-finite state, negative or non-finite input, or
/// invalid parameters.
pub fn step(
    state: &NeuronState,
    input: &SynapticInput,
    params: &SimParams,
    constants: &PhysicalConstants,
) -> Result<(NeuronState, bool)> {
    let k = NeuronCoeffs::new(params, constants)?;
    if !state.is_finite() {
        return Err(Error::NonFinite { what: "neuron state", step: 0, neuron: 0 });
    }
    if !input.is_valid() {
        return Err(Error::invalid(format!(
            "synaptic input must be finite and non-negative, got {input:?}"
        )));
    }
    let out = step_core(state, input, &k, StepMode::Hard);
    if !out.state.is_finite() {
        return Err(Error::NonFinite { what: "neuron state", step: 0, neuron: 0 });
    }
    Ok((out.state, out.state.spiked))
}
