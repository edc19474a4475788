//! Placement of a network graph onto the chip's resource grid.
//!
//! The mapper flattens a layered graph into one merged weight pair: every
//! hardware neuron gets a column in a single recurrent matrix whose
//! off-diagonal blocks carry the feed-forward weights between layers and
//! whose diagonal blocks carry each layer's own recurrence. Because
//! recurrent connections deliver spikes one step late, the merged system
//! reproduces the layered simulation spike for spike (the layer hop delay
//! is already part of the layered semantics, see
//! [`crate::network::LayeredNet`]).
//!
//! Placement obeys three hard limits: neurons per core, cores per chip, and
//! synapses (CAM slots) per neuron. Neuron parameters are per-core on the
//! device, so layers with identical parameter sets merge into one cluster
//! and clusters claim whole cores, first fit in layer order.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};
use crate::graph::{net_from_graph, NetGraph};
use crate::network::evolve_hetero;
use crate::params::SimParams;
use crate::raster::SpikeRaster;

/// Resource limits of the target device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardwareLimits {
    pub neurons_per_core: usize,
    pub cores_per_chip: usize,
    /// CAM slots per neuron: the maximum number of distinct presynaptic
    /// sources (virtual or hardware) with nonzero weight.
    pub synapses_per_neuron: usize,
    pub chips: usize,
}

impl Default for HardwareLimits {
    fn default() -> Self {
        HardwareLimits {
            neurons_per_core: 256,
            cores_per_chip: 4,
            synapses_per_neuron: 64,
            chips: 1,
        }
    }
}

impl HardwareLimits {
    pub fn total_cores(&self) -> usize {
        self.chips * self.cores_per_chip
    }

    pub fn total_neurons(&self) -> usize {
        self.total_cores() * self.neurons_per_core
    }

    pub fn validate(&self) -> Result<()> {
        if self.neurons_per_core == 0
            || self.cores_per_chip == 0
            || self.synapses_per_neuron == 0
            || self.chips == 0
        {
            return Err(Error::invalid("hardware limits must all be positive"));
        }
        if self.cores_per_chip > 256 || self.chips > 256 {
            return Err(Error::invalid("core and chip counts must fit in a u8 address"));
        }
        Ok(())
    }
}

/// Physical core address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoreId {
    pub chip: u8,
    pub core: u8,
}

/// A group of layers sharing one parameter set, placed on dedicated cores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareCluster {
    pub params: SimParams,
    /// Layer indices merged into this cluster, ascending.
    pub layers: Vec<usize>,
    /// Cores claimed by the cluster, in assignment order.
    pub cores: Vec<CoreId>,
    /// Hardware neuron indices in the cluster, ascending.
    pub neurons: Vec<usize>,
}

/// A mapped network: merged weights plus the placement that realizes them.
///
/// Hardware neuron `j` is the column `j` of both matrices and corresponds
/// to graph tag `n_virtual + j` (layers are merged in tag order). Virtual
/// input channel `i` is row `i` of `w_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareSpec {
    pub limits: HardwareLimits,
    pub n_virtual: usize,
    /// `(n_virtual, n_hw)` input weights.
    pub w_in: Array2<f64>,
    /// `(n_hw, n_hw)` merged recurrent weights; entry `(k, j)` connects
    /// neuron `k`'s spikes to neuron `j`.
    pub w_rec: Array2<f64>,
    pub clusters: Vec<HardwareCluster>,
    pub core_of_neuron: Vec<CoreId>,
    pub cluster_of_neuron: Vec<usize>,
    pub layer_of_neuron: Vec<usize>,
    pub dt: f64,
}

impl HardwareSpec {
    pub fn n_hw(&self) -> usize {
        self.w_rec.nrows()
    }

    /// Per-neuron parameter sets, resolved through the cluster table.
    pub fn params_per_neuron(&self) -> Vec<SimParams> {
        self.cluster_of_neuron.iter().map(|&c| self.clusters[c].params).collect()
    }

    /// Hardware indices of the output layer (the highest layer index).
    pub fn output_neurons(&self) -> Vec<usize> {
        let last = self.layer_of_neuron.iter().copied().max().unwrap_or(0);
        (0..self.n_hw()).filter(|&j| self.layer_of_neuron[j] == last).collect()
    }

    /// Simulates the merged system; the output raster has one channel per
    /// hardware neuron.
    pub fn evolve(
        &self,
        input: &SpikeRaster,
        constants: &PhysicalConstants,
    ) -> Result<SpikeRaster> {
        evolve_hetero(&self.w_in, &self.w_rec, &self.params_per_neuron(), input, constants)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Maps a graph onto the device, producing merged weights and a placement.
pub fn map_graph(
    graph: &NetGraph,
    limits: &HardwareLimits,
    constants: &PhysicalConstants,
) -> Result<HardwareSpec> {
    limits.validate()?;
    let net = net_from_graph(graph, constants)?;
    let n_virtual = net.n_inputs();
    let n_hw = net.n_neurons_total();

    if n_hw > limits.total_neurons() {
        return Err(Error::Mapping {
            limit: "total neuron capacity",
            detail: format!(
                "{} neurons requested, {} available ({} chips x {} cores x {})",
                n_hw,
                limits.total_neurons(),
                limits.chips,
                limits.cores_per_chip,
                limits.neurons_per_core
            ),
        });
    }

    // Merge the layers into one recurrent system. Layer k occupies the
    // contiguous index block [offset_k, offset_k + n_k).
    let mut offsets = Vec::with_capacity(net.layers.len());
    let mut acc = 0usize;
    for layer in &net.layers {
        offsets.push(acc);
        acc += layer.n_neurons();
    }
    let mut w_in = Array2::zeros((n_virtual, n_hw));
    let mut w_rec = Array2::zeros((n_hw, n_hw));
    let mut layer_of_neuron = vec![0usize; n_hw];
    for (k, layer) in net.layers.iter().enumerate() {
        let o = offsets[k];
        let n = layer.n_neurons();
        for j in 0..n {
            layer_of_neuron[o + j] = k;
        }
        if k == 0 {
            for i in 0..n_virtual {
                for j in 0..n {
                    w_in[[i, o + j]] = layer.w_in[[i, j]];
                }
            }
        } else {
            let po = offsets[k - 1];
            for i in 0..layer.n_inputs() {
                for j in 0..n {
                    w_rec[[po + i, o + j]] = layer.w_in[[i, j]];
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                w_rec[[o + i, o + j]] = layer.w_rec[[i, j]];
            }
        }
    }

    // Fan-in: one CAM slot per nonzero presynaptic source.
    for j in 0..n_hw {
        let fan_in = (0..n_virtual).filter(|&i| w_in[[i, j]] != 0.0).count()
            + (0..n_hw).filter(|&k| w_rec[[k, j]] != 0.0).count();
        if fan_in > limits.synapses_per_neuron {
            return Err(Error::Mapping {
                limit: "synapses per neuron",
                detail: format!(
                    "neuron {} (graph tag {}) has fan-in {}, limit {}",
                    j,
                    n_virtual + j,
                    fan_in,
                    limits.synapses_per_neuron
                ),
            });
        }
    }

    // Cluster layers by parameter equality, first appearance wins.
    let mut clusters: Vec<HardwareCluster> = Vec::new();
    let mut cluster_of_layer = Vec::with_capacity(net.layers.len());
    for (k, layer) in net.layers.iter().enumerate() {
        let found = clusters.iter().position(|c| c.params == layer.params);
        let idx = match found {
            Some(i) => i,
            None => {
                clusters.push(HardwareCluster {
                    params: layer.params,
                    layers: Vec::new(),
                    cores: Vec::new(),
                    neurons: Vec::new(),
                });
                clusters.len() - 1
            }
        };
        clusters[idx].layers.push(k);
        clusters[idx].neurons.extend(offsets[k]..offsets[k] + layer.n_neurons());
        cluster_of_layer.push(idx);
    }

    // First-fit core assignment: each cluster claims whole cores.
    let mut next_core = 0usize;
    for (ci, cluster) in clusters.iter_mut().enumerate() {
        let needed = cluster.neurons.len().div_ceil(limits.neurons_per_core);
        if next_core + needed > limits.total_cores() {
            return Err(Error::Mapping {
                limit: "core count",
                detail: format!(
                    "cluster {} needs {} more core(s); all {} cores are claimed \
                     (clusters cannot share a core because parameters are per-core)",
                    ci,
                    needed,
                    limits.total_cores()
                ),
            });
        }
        for c in next_core..next_core + needed {
            cluster.cores.push(CoreId {
                chip: (c / limits.cores_per_chip) as u8,
                core: (c % limits.cores_per_chip) as u8,
            });
        }
        next_core += needed;
    }

    let mut core_of_neuron = vec![CoreId { chip: 0, core: 0 }; n_hw];
    let mut cluster_of_neuron = vec![0usize; n_hw];
    for (ci, cluster) in clusters.iter().enumerate() {
        for (pos, &j) in cluster.neurons.iter().enumerate() {
            core_of_neuron[j] = cluster.cores[pos / limits.neurons_per_core];
            cluster_of_neuron[j] = ci;
        }
    }

    Ok(HardwareSpec {
        limits: *limits,
        n_virtual,
        w_in,
        w_rec,
        clusters,
        core_of_neuron,
        cluster_of_neuron,
        layer_of_neuron,
        dt: net.layers[0].params.dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::as_graph;
    use crate::network::{LayeredNet, Network};
    use ndarray::array;

    fn drive_params() -> SimParams {
        let mut p = SimParams::default();
        p.i_spkthr = 1e-14;
        p
    }

    fn two_layer_net(p1: SimParams, p2: SimParams) -> LayeredNet {
        let first = Network::new(
            array![[9.0, 0.0, -3.0], [0.0, 8.0, 2.0]],
            array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.5], [0.5, 0.0, 0.0]],
            p1,
        )
        .unwrap();
        let second = Network::new(
            array![[7.0, 0.0], [0.0, 7.5], [2.0, -2.0]],
            array![[0.0, -0.5], [1.0, 0.0]],
            p2,
        )
        .unwrap();
        LayeredNet::new(vec![first, second]).unwrap()
    }

    #[test]
    fn merged_matrices_have_block_structure() {
        let c = PhysicalConstants::default();
        let p = drive_params();
        let net = two_layer_net(p, p);
        let graph = as_graph(&net).unwrap();
        let spec = map_graph(&graph, &HardwareLimits::default(), &c).unwrap();

        assert_eq!(spec.n_virtual, 2);
        assert_eq!(spec.n_hw(), 5);
        // Input block drives only layer 1.
        assert_eq!(spec.w_in.slice(ndarray::s![.., 0..3]), net.layers[0].w_in);
        assert_eq!(spec.w_in.slice(ndarray::s![.., 3..5]), Array2::<f64>::zeros((2, 2)));
        // Diagonal blocks are the layer recurrences, the off-diagonal block
        // is the feed-forward matrix, and the lower-left block stays zero.
        assert_eq!(spec.w_rec.slice(ndarray::s![0..3, 0..3]), net.layers[0].w_rec);
        assert_eq!(spec.w_rec.slice(ndarray::s![0..3, 3..5]), net.layers[1].w_in);
        assert_eq!(spec.w_rec.slice(ndarray::s![3..5, 3..5]), net.layers[1].w_rec);
        assert_eq!(spec.w_rec.slice(ndarray::s![3..5, 0..3]), Array2::<f64>::zeros((2, 3)));
        assert_eq!(spec.layer_of_neuron, vec![0, 0, 0, 1, 1]);
        assert_eq!(spec.output_neurons(), vec![3, 4]);
    }

    /// The merged system must reproduce the layered simulation spike for
    /// spike, bit-exact, on every layer.
    #[test]
    fn merged_simulation_matches_layered_exactly() {
        let c = PhysicalConstants::default();
        let mut p2 = drive_params();
        p2.i_spkthr = 2e-14;
        let net = two_layer_net(drive_params(), p2);
        let graph = as_graph(&net).unwrap();
        let spec = map_graph(&graph, &HardwareLimits::default(), &c).unwrap();

        let input = SpikeRaster::from_events(
            &[(0, 0), (1, 1), (3, 0), (5, 1), (9, 0), (9, 1), (14, 0), (20, 1)],
            60,
            2,
            drive_params().dt,
        )
        .unwrap();

        let layered = net.evolve_all(&input, &c).unwrap();
        let merged = spec.evolve(&input, &c).unwrap();
        assert!(merged.total_count() > 0, "the drive must elicit spikes");

        for t in 0..60 {
            for j in 0..3 {
                assert_eq!(merged.get(t, j), layered[0].get(t, j), "layer 1 step {t} neuron {j}");
            }
            for j in 0..2 {
                assert_eq!(
                    merged.get(t, 3 + j),
                    layered[1].get(t, j),
                    "layer 2 step {t} neuron {j}"
                );
            }
        }
    }

    #[test]
    fn identical_params_share_a_cluster_and_core() {
        let c = PhysicalConstants::default();
        let p = drive_params();
        let net = two_layer_net(p, p);
        let spec = map_graph(&as_graph(&net).unwrap(), &HardwareLimits::default(), &c).unwrap();
        assert_eq!(spec.clusters.len(), 1);
        assert_eq!(spec.clusters[0].layers, vec![0, 1]);
        assert_eq!(spec.clusters[0].cores, vec![CoreId { chip: 0, core: 0 }]);
        assert!(spec.core_of_neuron.iter().all(|&c| c == CoreId { chip: 0, core: 0 }));
    }

    #[test]
    fn distinct_params_claim_distinct_cores() {
        let c = PhysicalConstants::default();
        let mut p2 = drive_params();
        p2.itau_ahp = 2e-12;
        let net = two_layer_net(drive_params(), p2);
        let spec = map_graph(&as_graph(&net).unwrap(), &HardwareLimits::default(), &c).unwrap();
        assert_eq!(spec.clusters.len(), 2);
        assert_eq!(spec.clusters[0].cores, vec![CoreId { chip: 0, core: 0 }]);
        assert_eq!(spec.clusters[1].cores, vec![CoreId { chip: 0, core: 1 }]);
        assert_eq!(spec.core_of_neuron[0], CoreId { chip: 0, core: 0 });
        assert_eq!(spec.core_of_neuron[3], CoreId { chip: 0, core: 1 });
    }

    #[test]
    fn neuron_capacity_violation_names_the_limit() {
        let c = PhysicalConstants::default();
        let tiny = HardwareLimits {
            neurons_per_core: 2,
            cores_per_chip: 1,
            synapses_per_neuron: 64,
            chips: 1,
        };
        let net = two_layer_net(drive_params(), drive_params());
        let err = map_graph(&as_graph(&net).unwrap(), &tiny, &c).unwrap_err();
        match err {
            Error::Mapping { limit, .. } => assert_eq!(limit, "total neuron capacity"),
            other => panic!("expected a mapping error, got {other}"),
        }
    }

    #[test]
    fn fan_in_violation_names_the_neuron() {
        let c = PhysicalConstants::default();
        let tight = HardwareLimits { synapses_per_neuron: 2, ..HardwareLimits::default() };
        // Neuron 2 of layer 1 collects 2 input weights plus 1 recurrent
        // one, one over the limit of 2.
        let net = two_layer_net(drive_params(), drive_params());
        let err = map_graph(&as_graph(&net).unwrap(), &tight, &c).unwrap_err();
        match err {
            Error::Mapping { limit, detail } => {
                assert_eq!(limit, "synapses per neuron");
                assert!(detail.contains("fan-in 3"), "{detail}");
            }
            other => panic!("expected a mapping error, got {other}"),
        }
    }

    #[test]
    fn core_exhaustion_names_the_limit() {
        let c = PhysicalConstants::default();
        // Three layers with three distinct parameter sets on a two-core
        // device: the third cluster finds no free core.
        let mut p2 = drive_params();
        p2.itau_ahp = 2e-12;
        let mut p3 = drive_params();
        p3.itau_ahp = 3e-12;
        let l1 = Network::new(array![[1.0]], array![[0.0]], drive_params()).unwrap();
        let l2 = Network::new(array![[1.0]], array![[0.0]], p2).unwrap();
        let l3 = Network::new(array![[1.0]], array![[0.0]], p3).unwrap();
        let net = LayeredNet::new(vec![l1, l2, l3]).unwrap();
        let limits = HardwareLimits {
            neurons_per_core: 4,
            cores_per_chip: 2,
            synapses_per_neuron: 8,
            chips: 1,
        };
        let err = map_graph(&as_graph(&net).unwrap(), &limits, &c).unwrap_err();
        match err {
            Error::Mapping { limit, .. } => assert_eq!(limit, "core count"),
            other => panic!("expected a mapping error, got {other}"),
        }
    }

    #[test]
    fn mapping_is_deterministic() {
        let c = PhysicalConstants::default();
        let net = two_layer_net(drive_params(), drive_params());
        let graph = as_graph(&net).unwrap();
        let a = map_graph(&graph, &HardwareLimits::default(), &c).unwrap();
        let b = map_graph(&graph, &HardwareLimits::default(), &c).unwrap();
        assert_eq!(a, b);
    }
}
