//! Dynamics of a single current-mode neuron: a short input burst charges
//! the excitatory synapse, the membrane integrates it, fires, and resets.
//! The second part sweeps the leak bias to show how it sets the membrane
//! time constant and with it the firing rate.
//!
//! Run with `cargo run --example neuron_dynamics`.

use ndarray::Array2;

use spikeforge::constants::PhysicalConstants;
use spikeforge::network::evolve_hetero_recorded;
use spikeforge::params::{SimParams, Synapse};
use spikeforge::raster::SpikeRaster;

fn main() -> spikeforge::error::Result<()> {
    let constants = PhysicalConstants::default();

    // One neuron, one input channel, simulated at 0.1 ms so the synapse
    // rise is visible. Threshold 20 fA so a short burst can reach it.
    let mut params = SimParams::default().with_threshold(2e-14);
    params.dt = 1e-4;
    let w_in = Array2::from_elem((1, 1), 2.0);
    let w_rec = Array2::zeros((1, 1));

    let n_steps = 300;
    let burst: Vec<(usize, usize)> = (0..8).map(|k| (20 + 10 * k, 0)).collect();
    let input = SpikeRaster::from_events(&burst, n_steps, 1, params.dt)?;

    let (spikes, trace) = evolve_hetero_recorded(&w_in, &w_rec, &[params], &input, &constants)?;
    println!(
        "tau_mem {:.1} ms, tau_ampa {:.1} ms, threshold {:.0} fA, 8 input spikes at 1 ms",
        params.tau_mem(&constants)? * 1e3,
        params.tau_syn(Synapse::Ampa, &constants)? * 1e3,
        params.i_spkthr * 1e15
    );
    println!("\n  t_ms   i_ampa_fA  i_mem_fA  membrane");
    let scale = 50.0 / params.i_spkthr;
    for step in (0..n_steps).step_by(5) {
        let window: Vec<usize> =
            (step..(step + 5).min(n_steps)).filter(|&t| spikes.get(t, 0) > 0).collect();
        let i_mem = trace.i_mem[[step, 0]];
        let bar = "#".repeat(((i_mem * scale) as usize).min(70));
        let marker = if window.is_empty() { String::new() } else { " spike".to_string() };
        println!(
            "{:>6.1}  {:>9.2}  {:>8.2}  {bar}{marker}",
            step as f64 * params.dt * 1e3,
            trace.i_ampa[[step, 0]] * 1e15,
            i_mem * 1e15,
        );
    }
    println!(
        "\n{} input spikes -> {} output spikes (reset and refractory period after each)",
        input.total_count(),
        spikes.total_count()
    );

    // Leak sweep under a steady 200 Hz drive. The gain is the fixed
    // igain/itau ratio, so the steady-state drive level is the same for
    // all three; a smaller tau climbs back to it faster after each reset
    // and fires more.
    println!("\nleak bias vs firing rate (same 200 Hz drive, 0.5 s):");
    let drive: Vec<(usize, usize)> = (0..100).map(|k| (k * 50, 0)).collect();
    let input = SpikeRaster::from_events(&drive, 5000, 1, 1e-4)?;
    for tau_ms in [5.0, 20.0, 80.0] {
        let mut p = SimParams::with_time_constants(tau_ms * 1e-3, 10e-3, &constants)?
            .with_threshold(2e-14);
        p.dt = 1e-4;
        let (out, _) = evolve_hetero_recorded(&w_in, &w_rec, &[p], &input, &constants)?;
        println!(
            "  tau_mem {:>4.0} ms (itau_mem {:>5.2} pA) -> {:>5.1} Hz",
            tau_ms,
            p.itau_mem * 1e12,
            out.total_count() as f64 / 0.5
        );
    }
    Ok(())
}
