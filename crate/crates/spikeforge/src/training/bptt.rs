//! Backpropagation through time over the spiking dynamics.
//!
//! The forward pass runs the exact inference dynamics (hard threshold) and
//! records, per step and neuron, the pre-reset membrane current, the spike
//! value and the clip/branch flags. The backward pass walks the tape in
//! reverse, carrying one adjoint per state current.
//!
//! Spikes are non-differentiable, so the backward pass substitutes the
//! surrogate derivative
//!
//! ```text
//! d spike / d x = (slope/4) / (1 + slope*|x|)^2,   x = Imem/Ispkthr - 1
//! ```
//!
//! In hard mode the reset, the refractory arming and the AHP self-jump are
//! detached: spike gradients flow only into the loss and into the next
//! step's synaptic gathers. The smoothed mode replaces the threshold with
//! the surrogate's primitive `sigma(x) = 1/2 + (slope/4) x / (1+slope|x|)`,
//! blends the reset (`M = o*Ireset + (1-o)*Mint`), scales the AHP jump by
//! `o` and disables the refractory branch: the forward pass becomes a
//! differentiable function whose exact derivative the backward pass
//! computes, which is what lets finite differences verify the machinery.

use ndarray::Array2;

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::network::{gather_inputs, validate_weights};
use crate::neuron::{flag, step_core, NeuronCoeffs, NeuronState, StepMode, SynapticInput};
use crate::params::SimParams;
use crate::raster::SpikeRaster;

/// Surrogate derivative of the spike nonlinearity at `x = ratio - 1`.
pub fn surrogate_derivative(x: f64, slope: f64) -> f64 {
    let d = 1.0 + slope * x.abs();
    0.25 * slope / (d * d)
}

/// Spike output and surrogate derivative at a membrane-to-threshold ratio.
/// The forward value is the hard step; the derivative is taken with respect
/// to the ratio.
pub fn surrogate_spike(ratio: f64, slope: f64) -> (f64, f64) {
    let x = ratio - 1.0;
    ((x >= 0.0) as u8 as f64, surrogate_derivative(x, slope))
}

/// Which forward/backward pair to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Differentiation {
    /// Hard-threshold forward, surrogate backward. Production training.
    SurrogateHard { slope: f64 },
    /// Smoothed forward, exact backward. Gradient verification only.
    Smoothed { slope: f64 },
}

impl Differentiation {
    fn step_mode(self) -> StepMode {
        match self {
            Differentiation::SurrogateHard { .. } => StepMode::Hard,
            Differentiation::Smoothed { slope } => StepMode::Smoothed { slope },
        }
    }

    fn slope(self) -> f64 {
        match self {
            Differentiation::SurrogateHard { slope } | Differentiation::Smoothed { slope } => slope,
        }
    }
}

/// Everything the backward pass needs from a forward run.
pub struct ForwardPass {
    /// Spike values, `(n_steps, n_neurons)`: 0/1 in hard mode, smoothed
    /// spike values otherwise.
    pub outputs: Array2<f64>,
    /// Pre-reset membrane current per step and neuron.
    mint: Array2<f64>,
    /// Clip and branch flags per step and neuron.
    flags: Array2<u8>,
}

/// Loss, weight gradients and the forward outputs for one sample.
pub struct LossGrads {
    pub loss: f64,
    pub g_w_in: Array2<f64>,
    pub g_w_rec: Array2<f64>,
    pub outputs: Array2<f64>,
}

fn build_coeffs(params: &[SimParams], n_neurons: usize, constants: &PhysicalConstants) -> Result<Vec<NeuronCoeffs>> {
    if params.len() != n_neurons {
        return Err(Error::dim(
            "per-neuron parameters",
            format!("{n_neurons} sets"),
            format!("{} sets", params.len()),
        ));
    }
    params.iter().map(|p| NeuronCoeffs::new(p, constants)).collect()
}

/// Forward pass with tape recording.
pub fn forward(
    w_in: &Array2<f64>,
    w_rec: &Array2<f64>,
    params: &[SimParams],
    input: &SpikeRaster,
    mode: Differentiation,
    constants: &PhysicalConstants,
) -> Result<ForwardPass> {
    validate_weights(w_in, w_rec)?;
    let n = w_rec.nrows();
    if input.n_channels() != w_in.nrows() {
        return Err(Error::dim(
            "input raster",
            format!("{} channels", w_in.nrows()),
            format!("{} channels", input.n_channels()),
        ));
    }
    let coeffs = build_coeffs(params, n, constants)?;
    let t_steps = input.n_steps();
    let step_mode = mode.step_mode();

    let mut outputs = Array2::zeros((t_steps, n));
    let mut mint = Array2::zeros((t_steps, n));
    let mut flags = Array2::zeros((t_steps, n));
    let mut states = vec![NeuronState::resting(constants); n];
    let mut prev_out = vec![0.0f64; n];
    let mut ain = vec![0.0f64; n];
    let mut gin = vec![0.0f64; n];

    for t in 0..t_steps {
        gather_inputs(w_in, w_rec, input.data().row(t), &prev_out, &mut ain, &mut gin);
        for j in 0..n {
            let inp = SynapticInput { ampa: ain[j], gaba: gin[j], nmda: 0.0, shunt: 0.0 };
            let res = step_core(&states[j], &inp, &coeffs[j], step_mode);
            states[j] = res.state;
            if !states[j].is_finite() {
                return Err(Error::NonFinite { what: "neuron state", step: t, neuron: j });
            }
            outputs[[t, j]] = res.o;
            mint[[t, j]] = res.mint;
            flags[[t, j]] = res.flags;
            prev_out[j] = res.o;
        }
    }
    Ok(ForwardPass { outputs, mint, flags })
}

/// Backward pass: gradients of a scalar loss with respect to both weight
/// matrices, given `d_out = dL/d outputs`.
pub fn backward(
    w_in: &Array2<f64>,
    w_rec: &Array2<f64>,
    params: &[SimParams],
    input: &SpikeRaster,
    fwd: &ForwardPass,
    d_out: &Array2<f64>,
    mode: Differentiation,
    constants: &PhysicalConstants,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = w_rec.nrows();
    let t_steps = input.n_steps();
    if d_out.dim() != (t_steps, n) || fwd.outputs.dim() != (t_steps, n) {
        return Err(Error::dim(
            "output adjoints",
            format!("{t_steps}x{n}"),
            format!("{:?}", d_out.dim()),
        ));
    }
    let coeffs = build_coeffs(params, n, constants)?;
    let slope = mode.slope();
    let smoothed = matches!(mode, Differentiation::Smoothed { .. });

    // Gradients with respect to the positive (AMPA) and negative (GABA)
    // routes of each weight; combined by the entry's sign at the end.
    let mut g_pin = Array2::<f64>::zeros(w_in.dim());
    let mut g_qin = Array2::<f64>::zeros(w_in.dim());
    let mut g_prec = Array2::<f64>::zeros(w_rec.dim());
    let mut g_qrec = Array2::<f64>::zeros(w_rec.dim());

    // Adjoints of the state after step t (start at zero beyond the horizon).
    let mut lam_a = vec![0.0f64; n];
    let mut lam_g = vec![0.0f64; n];
    let mut lam_n = vec![0.0f64; n];
    let mut lam_s = vec![0.0f64; n];
    let mut lam_h = vec![0.0f64; n];
    let mut lam_m = vec![0.0f64; n];
    // Adjoints of the aggregated synaptic drives of step t+1, already
    // multiplied by the per-unit jump; these carry spike gradients one hop.
    let mut lam_ain_next = vec![0.0f64; n];
    let mut lam_gin_next = vec![0.0f64; n];

    let mut lam_ain = vec![0.0f64; n];
    let mut lam_gin = vec![0.0f64; n];

    for t in (0..t_steps).rev() {
        for j in 0..n {
            let k = &coeffs[j];
            let fl = fwd.flags[[t, j]];
            let o = fwd.outputs[[t, j]];
            let mint = fwd.mint[[t, j]];

            // Spike adjoint: loss plus the next step's synaptic gathers.
            let mut go = d_out[[t, j]];
            for jp in 0..n {
                let w = w_rec[[j, jp]];
                if w > 0.0 {
                    go += w * lam_ain_next[jp];
                } else if w < 0.0 {
                    go += -w * lam_gin_next[jp];
                }
            }

            // Membrane adjoint (pre-reset value Mint).
            let refractory = fl & flag::REFRACTORY != 0;
            let mut lam_mint = if refractory {
                0.0 // membrane pinned at reset; branch is locally constant
            } else {
                let x = mint / k.i_spkthr - 1.0;
                let sd = surrogate_derivative(x, slope) / k.i_spkthr;
                if smoothed {
                    let full_go = go + lam_m[j] * (k.i_reset - mint) + lam_h[j] * k.jump_ahp;
                    full_go * sd + lam_m[j] * (1.0 - o)
                } else {
                    go * sd + lam_m[j] * (1.0 - o)
                }
            };
            if fl & flag::MEM_FLOOR != 0 {
                lam_mint = 0.0;
            }

            // Aggregated input adjoint.
            let mut lam_iin = lam_mint * (1.0 - k.decay_mem) * k.gain_mem;
            if fl & flag::IIN_FLOOR != 0 {
                lam_iin = 0.0;
            }

            // Post-clip state adjoints at step t, gated to pre-clip values.
            let gate = |bit: u8, v: f64| if fl & bit != 0 { 0.0 } else { v };
            let u_a = gate(flag::AMPA_FLOOR, lam_a[j] + lam_iin);
            let u_g = gate(flag::GABA_FLOOR, lam_g[j] - lam_iin);
            let u_n = gate(flag::NMDA_FLOOR, lam_n[j] + lam_iin);
            let u_s = gate(flag::SHUNT_FLOOR, lam_s[j] - lam_iin);
            let u_h = gate(flag::AHP_FLOOR, lam_h[j] - lam_iin);

            // Propagate to the state after step t-1.
            lam_a[j] = u_a * k.decay_syn[0];
            lam_g[j] = u_g * k.decay_syn[1];
            lam_n[j] = u_n * k.decay_syn[2];
            lam_s[j] = u_s * k.decay_syn[3];
            lam_h[j] = u_h * k.decay_ahp;
            lam_m[j] = lam_mint * k.decay_mem;

            // Event-drive adjoints feeding weight gradients and the
            // previous step's spike adjoints.
            lam_ain[j] = u_a * k.jump_syn[0];
            lam_gin[j] = u_g * k.jump_syn[1];
        }

        // Weight gradients from this step's gathers.
        for (i, &s) in input.data().row(t).iter().enumerate() {
            if s == 0 {
                continue;
            }
            let count = s as f64;
            for j in 0..n {
                g_pin[[i, j]] += lam_ain[j] * count;
                g_qin[[i, j]] += lam_gin[j] * count;
            }
        }
        if t > 0 {
            for kk in 0..n {
                let o_prev = fwd.outputs[[t - 1, kk]];
                if o_prev == 0.0 {
                    continue;
                }
                for j in 0..n {
                    g_prec[[kk, j]] += lam_ain[j] * o_prev;
                    g_qrec[[kk, j]] += lam_gin[j] * o_prev;
                }
            }
        }

        std::mem::swap(&mut lam_ain_next, &mut lam_ain);
        std::mem::swap(&mut lam_gin_next, &mut lam_gin);
    }

    // Route by sign: positive entries live on the AMPA path, negative on
    // GABA (as -w). Entries at exactly zero take the AMPA (right) derivative.
    let combine = |w: &Array2<f64>, p: Array2<f64>, q: Array2<f64>| {
        let mut g = p;
        g.zip_mut_with(w, |gv, &wv| {
            if wv < 0.0 {
                *gv = 0.0;
            }
        });
        let mut gq = q;
        gq.zip_mut_with(w, |gv, &wv| {
            if wv >= 0.0 {
                *gv = 0.0;
            }
        });
        g - gq
    };
    Ok((combine(w_in, g_pin, g_qin), combine(w_rec, g_prec, g_qrec)))
}

/// Mean-squared spike loss between two equally shaped rasters (or spike
/// value matrices), normalized by steps times channels.
pub(crate) fn mse_arrays(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc / n as f64
}

/// Runs forward and backward for one (input, target) sample and returns the
/// loss together with both weight gradients.
pub fn loss_and_gradients(
    w_in: &Array2<f64>,
    w_rec: &Array2<f64>,
    params: &[SimParams],
    input: &SpikeRaster,
    target: &Array2<f64>,
    mode: Differentiation,
    constants: &PhysicalConstants,
) -> Result<LossGrads> {
    let fwd = forward(w_in, w_rec, params, input, mode, constants)?;
    if target.dim() != fwd.outputs.dim() {
        return Err(Error::dim(
            "target",
            format!("{:?}", fwd.outputs.dim()),
            format!("{:?}", target.dim()),
        ));
    }
    let loss = mse_arrays(&fwd.outputs, target);
    let n_total = fwd.outputs.len().max(1) as f64;
    let d_out = (&fwd.outputs - target) * (2.0 / n_total);
    let (g_w_in, g_w_rec) = backward(w_in, w_rec, params, input, &fwd, &d_out, mode, constants)?;
    Ok(LossGrads { loss, g_w_in, g_w_rec, outputs: fwd.outputs })
}
