//! Deployment and its inverse: a mapped and quantized network becomes a
//! device configuration (CAM entries, bias codes, routing), and the
//! configuration decodes back into a simulatable network. Weights survive
//! the round trip exactly; analog biases land within one fine code step.
//!
//! Run with `cargo run --example deploy_and_reverse`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spikeforge::constants::PhysicalConstants;
use spikeforge::graph::as_graph;
use spikeforge::hwconfig::{config_from_specification, net_from_config, BiasTable};
use spikeforge::mapper::{map_graph, HardwareLimits};
use spikeforge::network::{LayeredNet, Network};
use spikeforge::params::SimParams;
use spikeforge::quantizer::{quantize_spec, QuantizeConfig};

fn main() -> spikeforge::error::Result<()> {
    let constants = PhysicalConstants::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut draw = |shape: (usize, usize)| {
        Array2::from_shape_simple_fn(shape, || {
            let z: f64 = rng.sample(StandardNormal);
            0.8 * z
        })
    };
    let net = Network::new(draw((3, 2)), draw((2, 2)), SimParams::default())?;

    let spec = map_graph(
        &as_graph(&LayeredNet::single(net))?,
        &HardwareLimits::default(),
        &constants,
    )?;
    let quant = quantize_spec(&spec, &QuantizeConfig::default())?;
    let table = BiasTable::synthetic();
    let config = config_from_specification(&spec, &quant, &table)?;

    let core = &config.chips[&0].cores[&0];
    println!("core (0, 0) programming:");
    println!(
        "  iw_base codes: {:?}",
        core.iw_base.iter().map(|b| (b.coarse, b.fine)).collect::<Vec<_>>()
    );
    for name in ["itau_mem", "igain_mem", "i_spkthr"] {
        let code = &core.biases[name];
        println!("  bias {name}: coarse {}, fine {}", code.coarse, code.fine);
    }
    for (tag, neuron) in &core.neurons {
        println!("  neuron {tag}: {} CAM entries, first: {:?}", neuron.cams.len(), neuron.cams[0]);
    }
    println!("  input fanout: {} channels broadcast to this chip", config.input_fanout.len());

    // Reverse mapping: codes back to currents, CAM masks back to weights.
    // Masks and signs are lossless; the four base currents snap to the
    // nearest bias code at deployment, so the decoded weights equal the
    // quantized ones with snapped bases.
    let decoded = net_from_config(&config, &table, &constants)?;
    let mut snapped = quant.clone();
    for cl in &mut snapped.clusters {
        for b in &mut cl.base_amperes {
            if *b > 0.0 {
                *b = table.snap(*b)?;
            }
        }
    }
    let (s_in, s_rec) = snapped.reconstruct_weights()?;
    println!("\nround trip:");
    for (cl, scl) in quant.clusters.iter().zip(&snapped.clusters) {
        println!(
            "  cluster {} bases: requested {:?}",
            cl.cluster,
            cl.base_amperes.map(|b| format!("{b:.3e}"))
        );
        println!(
            "               on the code grid {:?}",
            scl.base_amperes.map(|b| format!("{b:.3e}"))
        );
    }
    println!(
        "  weights exact against snapped bases: {}",
        decoded.w_in == s_in && decoded.w_rec == s_rec
    );
    let requested = spec.params_per_neuron();
    let mut worst = 0.0f64;
    for (dec, req) in decoded.params.iter().zip(&requested) {
        for name in SimParams::MISMATCH_FIELDS {
            let ratio = dec.field(name).unwrap() / req.field(name).unwrap();
            worst = worst.max(ratio.ln().abs());
        }
    }
    let widest_step = table
        .entries()
        .windows(2)
        .map(|w| (w[1].current / w[0].current).ln())
        .fold(0.0f64, f64::max);
    println!(
        "  worst bias log error: {:.4} (widest code step on the synthetic table: {:.4})",
        worst, widest_step
    );
    Ok(())
}
