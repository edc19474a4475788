//! From a layered network to hardware placement: extract the dataflow
//! graph, merge the layers into one weight matrix per connection type,
//! assign neurons to cores and chips, and check that the mapped network
//! spikes exactly like the original.
//!
//! Run with `cargo run --example graph_and_mapping`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spikeforge::constants::PhysicalConstants;
use spikeforge::graph::{as_graph, GraphNode};
use spikeforge::mapper::{map_graph, HardwareLimits};
use spikeforge::network::{LayeredNet, Network};
use spikeforge::params::SimParams;
use spikeforge::raster::SpikeRaster;

fn main() -> spikeforge::error::Result<()> {
    let constants = PhysicalConstants::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut draw = |shape: (usize, usize)| {
        Array2::from_shape_simple_fn(shape, || {
            let z: f64 = rng.sample(StandardNormal);
            0.7 * z
        })
    };

    // Two layers with different adaptation settings: parameter sets are
    // per core, so the mapper must keep them on separate cores.
    let mut p1 = SimParams::default().with_threshold(1e-14);
    let mut p2 = p1;
    p1.itau_ahp = 1e-12;
    p2.itau_ahp = 4e-12;
    let layers = LayeredNet::new(vec![
        Network::new(draw((4, 3)), draw((3, 3)), p1)?,
        Network::new(draw((3, 2)), draw((2, 2)), p2)?,
    ])?;

    let graph = as_graph(&layers)?;
    println!("graph: {} input channels, {} nodes", graph.n_inputs, graph.nodes.len());
    for (i, node) in graph.nodes.iter().enumerate() {
        match node {
            GraphNode::LinearWeights(w) => println!(
                "  node {i}: weights {}x{} {} tags {:?} -> {:?}",
                w.weights.nrows(),
                w.weights.ncols(),
                if w.recurrent { "(recurrent)" } else { "" },
                w.source_tags,
                w.dest_tags
            ),
            GraphNode::Neurons(n) => println!("  node {i}: neuron pool, tags {:?}", n.tags),
        }
    }
    println!("  edges: {:?}", graph.edges);

    let limits = HardwareLimits { neurons_per_core: 4, ..HardwareLimits::default() };
    let spec = map_graph(&graph, &limits, &constants)?;
    println!(
        "\nmapped: {} virtual inputs, {} hardware neurons, merged w_in {}x{}, w_rec {}x{}",
        spec.n_virtual,
        spec.n_hw(),
        spec.w_in.nrows(),
        spec.w_in.ncols(),
        spec.w_rec.nrows(),
        spec.w_rec.ncols()
    );
    for (c, cluster) in spec.clusters.iter().enumerate() {
        println!(
            "  cluster {c}: layers {:?}, neurons {:?}, cores {:?}",
            cluster.layers, cluster.neurons, cluster.cores
        );
    }

    // Equivalence: the merged single matrix imposes one step of delay per
    // layer hop, which is exactly how the layered reference is simulated.
    let mut input = SpikeRaster::zeros(200, 4, p1.dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for t in 0..200 {
        for ch in 0..4 {
            if rng.gen_bool(0.25) {
                input.set(t, ch, true);
            }
        }
    }
    let reference = layers.evolve_all(&input, &constants)?;
    let merged = spec.evolve(&input, &constants)?;
    let mut identical = true;
    for (layer, raster) in reference.iter().enumerate() {
        let cols: Vec<usize> =
            (0..spec.n_hw()).filter(|&j| spec.layer_of_neuron[j] == layer).collect();
        for t in 0..200 {
            for (k, &col) in cols.iter().enumerate() {
                identical &= raster.get(t, k) == merged.get(t, col);
            }
        }
    }
    println!(
        "\nlayered vs mapped, 200 steps: spike-for-spike identical = {identical} \
         ({} spikes)",
        merged.total_count()
    );
    Ok(())
}
