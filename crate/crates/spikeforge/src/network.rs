//! Recurrent network simulation on top of the single-neuron dynamics.
//!
//! Weights are dimensionless and signed: positive entries deliver events to
//! the AMPA synapse of the target neuron, negative entries to the GABA
//! synapse (scaled by `iw_scale` inside the neuron step). Recurrent
//! connections carry the spikes of the previous step, so a spike needs one
//! full step to travel one hop.

use ndarray::{Array2, ArrayView1};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::neuron::{step_core, NeuronCoeffs, NeuronState, StepMode, SynapticInput};
use crate::params::SimParams;
use crate::raster::SpikeRaster;
use serde::{Deserialize, Serialize};

/// A recurrently connected pool of neurons sharing one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    /// Input weights, `(n_inputs, n_neurons)`.
    pub w_in: Array2<f64>,
    /// Recurrent weights, `(n_neurons, n_neurons)`; the diagonal is
    /// self-feedback.
    pub w_rec: Array2<f64>,
    pub params: SimParams,
}

/// Dense per-step record of every state current, `(n_steps, n_neurons)`.
#[derive(Debug, Clone)]
pub struct StateTrace {
    pub i_mem: Array2<f64>,
    pub i_ampa: Array2<f64>,
    pub i_gaba: Array2<f64>,
    pub i_nmda: Array2<f64>,
    pub i_shunt: Array2<f64>,
    pub i_ahp: Array2<f64>,
}

impl StateTrace {
    fn empty(n_steps: usize, n_neurons: usize) -> Self {
        let z = || Array2::zeros((n_steps, n_neurons));
        StateTrace { i_mem: z(), i_ampa: z(), i_gaba: z(), i_nmda: z(), i_shunt: z(), i_ahp: z() }
    }
}

impl Network {
    pub fn new(w_in: Array2<f64>, w_rec: Array2<f64>, params: SimParams) -> Result<Self> {
        validate_weights(&w_in, &w_rec)?;
        Ok(Network { w_in, w_rec, params })
    }

    pub fn n_inputs(&self) -> usize {
        self.w_in.nrows()
    }

    pub fn n_neurons(&self) -> usize {
        self.w_rec.nrows()
    }

    /// Simulates the network over an input raster and returns the output
    /// spike raster, `(n_steps, n_neurons)`.
    pub fn evolve(&self, input: &SpikeRaster, constants: &PhysicalConstants) -> Result<SpikeRaster> {
        let coeffs = vec![NeuronCoeffs::new(&self.params, constants)?; self.n_neurons()];
        let (out, _) =
            evolve_engine(&self.w_in, &self.w_rec, &coeffs, self.params.dt, input, constants, false)?;
        Ok(out)
    }

    /// Like [`Network::evolve`], additionally recording every state current.
    pub fn evolve_recorded(
        &self,
        input: &SpikeRaster,
        constants: &PhysicalConstants,
    ) -> Result<(SpikeRaster, StateTrace)> {
        let coeffs = vec![NeuronCoeffs::new(&self.params, constants)?; self.n_neurons()];
        let (out, trace) =
            evolve_engine(&self.w_in, &self.w_rec, &coeffs, self.params.dt, input, constants, true)?;
        Ok((out, trace.expect("recording was requested")))
    }
}

/// A feed-forward stack of recurrent pools. Layer `k + 1` receives the
/// spikes of layer `k` across a one-step axonal delay, the same timing a
/// merged single-matrix deployment produces, so a layered simulation and
/// its flattened hardware image emit identical spike trains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredNet {
    pub layers: Vec<Network>,
}

impl LayeredNet {
    pub fn new(layers: Vec<Network>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a layered network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[1].n_inputs() != pair[0].n_neurons() {
                return Err(Error::dim(
                    "layer input count",
                    pair[0].n_neurons().to_string(),
                    pair[1].n_inputs().to_string(),
                ));
            }
            if pair[1].params.dt != pair[0].params.dt {
                return Err(Error::invalid("all layers must share the same dt"));
            }
        }
        Ok(LayeredNet { layers })
    }

    pub fn single(net: Network) -> Self {
        LayeredNet { layers: vec![net] }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_inputs()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().expect("layers is nonempty").n_neurons()
    }

    pub fn n_neurons_total(&self) -> usize {
        self.layers.iter().map(|l| l.n_neurons()).sum()
    }

    /// Simulates every layer and returns one raster per layer, first to
    /// last. Layer `k + 1` is driven by the one-step-delayed raster of
    /// layer `k`.
    pub fn evolve_all(
        &self,
        input: &SpikeRaster,
        constants: &PhysicalConstants,
    ) -> Result<Vec<SpikeRaster>> {
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut drive = input.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let out = layer.evolve(&drive, constants)?;
            if k + 1 < self.layers.len() {
                drive = out.delay_one_step();
            }
            outputs.push(out);
        }
        Ok(outputs)
    }

    /// Simulates the stack and returns the raster of the last layer.
    pub fn evolve(&self, input: &SpikeRaster, constants: &PhysicalConstants) -> Result<SpikeRaster> {
        Ok(self.evolve_all(input, constants)?.pop().expect("layers is nonempty"))
    }
}

/// Simulates a network whose neurons have individual parameter sets (device
/// mismatch, per-core bias decoding). `params[j]` drives neuron `j`; all
/// sets must share `dt`.
pub fn evolve_hetero(
    w_in: &Array2<f64>,
    w_rec: &Array2<f64>,
    params: &[SimParams],
    input: &SpikeRaster,
    constants: &PhysicalConstants,
) -> Result<SpikeRaster> {
    let (out, _) = evolve_hetero_recorded_impl(w_in, w_rec, params, input, constants, false)?;
    Ok(out)
}

/// [`evolve_hetero`] with state recording.
pub fn evolve_hetero_recorded(
    w_in: &Array2<f64>,
    w_rec: &Array2<f64>,
    params: &[SimParams],
    input: &SpikeRaster,
    constants: &PhysicalConstants,
) -> Result<(SpikeRaster, StateTrace)> {
    let (out, trace) = evolve_hetero_recorded_impl(w_in, w_rec, params, input, constants, true)?;
    Ok((out, trace.expect("recording was requested")))
}

fn evolve_hetero_recorded_impl(
    w_in: &Array2<f64>,
    w_rec: &Array2<f64>,
    params: &[SimParams],
    input: &SpikeRaster,
    constants: &PhysicalConstants,
    record: bool,
) -> Result<(SpikeRaster, Option<StateTrace>)> {
    validate_weights(w_in, w_rec)?;
    if params.len() != w_rec.nrows() {
        return Err(Error::dim(
            "per-neuron parameters",
            format!("{} sets", w_rec.nrows()),
            format!("{} sets", params.len()),
        ));
    }
    let dt = params.first().map(|p| p.dt).unwrap_or(input.dt());
    if params.iter().any(|p| p.dt != dt) {
        return Err(Error::invalid("all per-neuron parameter sets must share dt"));
    }
    let coeffs = params
        .iter()
        .map(|p| NeuronCoeffs::new(p, constants))
        .collect::<Result<Vec<_>>>()?;
    evolve_engine(w_in, w_rec, &coeffs, dt, input, constants, record)
}

pub(crate) fn validate_weights(w_in: &Array2<f64>, w_rec: &Array2<f64>) -> Result<()> {
    if w_rec.nrows() != w_rec.ncols() {
        return Err(Error::dim(
            "recurrent weights",
            "square matrix",
            format!("{}x{}", w_rec.nrows(), w_rec.ncols()),
        ));
    }
    if w_in.ncols() != w_rec.nrows() {
        return Err(Error::dim(
            "input weights",
            format!("n_inputs x {}", w_rec.nrows()),
            format!("{}x{}", w_in.nrows(), w_in.ncols()),
        ));
    }
    if w_in.iter().chain(w_rec.iter()).any(|w| !w.is_finite()) {
        return Err(Error::invalid("weights must be finite"));
    }
    Ok(())
}

/// Accumulates the AMPA/GABA drive for every neuron: positive weights route
/// to AMPA, negative to GABA, zero entries contribute nothing. Shared by
/// inference and the training forward pass so both see bit-identical sums.
pub(crate) fn gather_inputs(
    w_in: &Array2<f64>,
    w_rec: &Array2<f64>,
    input_row: ArrayView1<u8>,
    prev_out: &[f64],
    ain: &mut [f64],
    gin: &mut [f64],
) {
    ain.fill(0.0);
    gin.fill(0.0);
    for (i, &s) in input_row.iter().enumerate() {
        if s == 0 {
            continue;
        }
        let count = s as f64;
        for (j, &w) in w_in.row(i).iter().enumerate() {
            if w > 0.0 {
                ain[j] += w * count;
            } else if w < 0.0 {
                gin[j] -= w * count;
            }
        }
    }
    for (k, &o) in prev_out.iter().enumerate() {
        if o == 0.0 {
            continue;
        }
        for (j, &w) in w_rec.row(k).iter().enumerate() {
            if w > 0.0 {
                ain[j] += w * o;
            } else if w < 0.0 {
                gin[j] -= w * o;
            }
        }
    }
}

fn evolve_engine(
    w_in: &Array2<f64>,
    w_rec: &Array2<f64>,
    coeffs: &[NeuronCoeffs],
    dt: f64,
    input: &SpikeRaster,
    constants: &PhysicalConstants,
    record: bool,
) -> Result<(SpikeRaster, Option<StateTrace>)> {
    let n_neurons = w_rec.nrows();
    if input.n_channels() != w_in.nrows() {
        return Err(Error::dim(
            "input raster",
            format!("{} channels", w_in.nrows()),
            format!("{} channels", input.n_channels()),
        ));
    }
    let rel = ((input.dt() - dt) / dt).abs();
    if rel > 1e-9 {
        return Err(Error::invalid(format!(
            "input raster dt {} does not match simulation dt {}",
            input.dt(),
            dt
        )));
    }
    let n_steps = input.n_steps();

    let mut states = vec![NeuronState::resting(constants); n_neurons];
    let mut prev_out = vec![0.0f64; n_neurons];
    let mut ain = vec![0.0f64; n_neurons];
    let mut gin = vec![0.0f64; n_neurons];
    let mut out = SpikeRaster::zeros(n_steps, n_neurons, dt)?;
    let mut trace = record.then(|| StateTrace::empty(n_steps, n_neurons));

    for t in 0..n_steps {
        gather_inputs(w_in, w_rec, input.data().row(t), &prev_out, &mut ain, &mut gin);
        for j in 0..n_neurons {
            let inp = SynapticInput { ampa: ain[j], gaba: gin[j], nmda: 0.0, shunt: 0.0 };
            let res = step_core(&states[j], &inp, &coeffs[j], StepMode::Hard);
            states[j] = res.state;
            if !states[j].is_finite() {
                return Err(Error::NonFinite { what: "neuron state", step: t, neuron: j });
            }
            prev_out[j] = res.o;
            if states[j].spiked {
                out.set(t, j, true);
            }
            if let Some(tr) = trace.as_mut() {
                tr.i_mem[[t, j]] = states[j].i_mem;
                tr.i_ampa[[t, j]] = states[j].i_ampa;
                tr.i_gaba[[t, j]] = states[j].i_gaba;
                tr.i_nmda[[t, j]] = states[j].i_nmda;
                tr.i_shunt[[t, j]] = states[j].i_shunt;
                tr.i_ahp[[t, j]] = states[j].i_ahp;
            }
        }
    }
    Ok((out, trace))
}
