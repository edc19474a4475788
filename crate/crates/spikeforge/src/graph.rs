//! Portable graph representation of a network.
//!
//! The graph is the hand-off format between training and hardware mapping:
//! weight matrices and neuron pools become explicit nodes with integer tags,
//! so the mapper can reason about connectivity without knowing how the
//! network was produced. Tags are dense and assigned input-first: external
//! input channels take `0..n_inputs`, then each layer's neurons take the
//! next contiguous block.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::constants::{current_for_time_constant, PhysicalConstants};
use crate::error::{Error, Result};
use crate::network::{LayeredNet, Network};
use crate::params::SimParams;

/// Neuron behavior attached to a pool of tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NeuronModel {
    /// Full analog parameter set, simulated as-is.
    Analog { params: SimParams },
    /// Abstract leaky integrate-and-fire description. It is lowered onto
    /// the analog model by matching the membrane time constant and spike
    /// threshold; every other parameter keeps its preset value.
    Lif { tau_mem: f64, threshold: f64, dt: f64 },
}

impl NeuronModel {
    /// The analog parameter set this model lowers to.
    pub fn to_analog(&self, constants: &PhysicalConstants) -> Result<SimParams> {
        match *self {
            NeuronModel::Analog { params } => {
                params.validate(constants)?;
                Ok(params)
            }
            NeuronModel::Lif { tau_mem, threshold, dt } => {
                let mut p = SimParams::default();
                p.itau_mem = current_for_time_constant(tau_mem, constants.c_mem, constants)?;
                // Preserve the preset gain-to-leak ratio so the DC gain of
                // the membrane stays at its calibrated value.
                p.igain_mem = 4.0 * p.itau_mem;
                p.i_spkthr = threshold;
                p.dt = dt;
                p.validate(constants)?;
                Ok(p)
            }
        }
    }
}

/// A signed weight matrix connecting one tag set to another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearWeightsNode {
    /// `(sources, destinations)` weight matrix; rows follow `source_tags`,
    /// columns follow `dest_tags`.
    pub weights: Array2<f64>,
    pub source_tags: Vec<usize>,
    pub dest_tags: Vec<usize>,
    /// True when the matrix feeds a pool back onto itself. Recurrent nodes
    /// are the only place a cycle may pass through.
    pub recurrent: bool,
}

/// A pool of neurons sharing one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronsNode {
    pub tags: Vec<usize>,
    pub model: NeuronModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphNode {
    LinearWeights(LinearWeightsNode),
    Neurons(NeuronsNode),
}

impl GraphNode {
    fn kind_name(&self) -> &'static str {
        match self {
            GraphNode::LinearWeights(_) => "linear_weights",
            GraphNode::Neurons(_) => "neurons",
        }
    }
}

/// A validated network graph: nodes plus directed edges between node
/// indices. External input channels own tags `0..n_inputs` and have no
/// node of their own; a weight node whose sources are input tags is a
/// graph entry point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetGraph {
    pub n_inputs: usize,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<(usize, usize)>,
}

impl NetGraph {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let graph: NetGraph = serde_json::from_str(&text)?;
        graph.validate()?;
        Ok(graph)
    }

    pub fn n_neurons(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                GraphNode::Neurons(p) => p.tags.len(),
                GraphNode::LinearWeights(_) => 0,
            })
            .sum()
    }

    /// Checks the structural invariants:
    /// tags are dense, input-first, and owned by exactly one pool; weight
    /// shapes match their tag lists; edges alternate between weight and
    /// neuron nodes and agree with the tag lists; recurrence is confined
    /// to weight nodes flagged `recurrent`, and removing those nodes
    /// leaves the graph acyclic.
    pub fn validate(&self) -> Result<()> {
        if self.n_inputs == 0 {
            return Err(Error::Graph("a graph needs at least one input channel".into()));
        }
        if self.nodes.is_empty() {
            return Err(Error::Graph("a graph needs at least one node".into()));
        }

        // Tag ownership: every neuron tag appears in exactly one pool and
        // the union is the dense range just above the input tags.
        let mut seen = BTreeSet::new();
        let mut total = 0usize;
        for (i, node) in self.nodes.iter().enumerate() {
            if let GraphNode::Neurons(pool) = node {
                if pool.tags.is_empty() {
                    return Err(Error::Graph(format!("neuron node {i} has no tags")));
                }
                for &t in &pool.tags {
                    if t < self.n_inputs {
                        return Err(Error::Graph(format!(
                            "tag {t} in neuron node {i} collides with the input tags"
                        )));
                    }
                    if !seen.insert(t) {
                        return Err(Error::Graph(format!("tag {t} is owned by two neuron nodes")));
                    }
                }
                total += pool.tags.len();
            }
        }
        if total == 0 {
            return Err(Error::Graph("a graph needs at least one neuron node".into()));
        }
        let expect: BTreeSet<usize> = (self.n_inputs..self.n_inputs + total).collect();
        if seen != expect {
            return Err(Error::Graph(format!(
                "neuron tags must densely cover {}..{}",
                self.n_inputs,
                self.n_inputs + total
            )));
        }

        // Per-node shape checks.
        for (i, node) in self.nodes.iter().enumerate() {
            if let GraphNode::LinearWeights(lw) = node {
                if lw.weights.nrows() != lw.source_tags.len()
                    || lw.weights.ncols() != lw.dest_tags.len()
                {
                    return Err(Error::Graph(format!(
                        "weight node {i} is {}x{} but has {} source and {} dest tags",
                        lw.weights.nrows(),
                        lw.weights.ncols(),
                        lw.source_tags.len(),
                        lw.dest_tags.len()
                    )));
                }
                if lw.weights.iter().any(|w| !w.is_finite()) {
                    return Err(Error::Graph(format!("weight node {i} has non-finite entries")));
                }
                if lw.recurrent && lw.source_tags != lw.dest_tags {
                    return Err(Error::Graph(format!(
                        "recurrent weight node {i} must map a tag set onto itself"
                    )));
                }
                let virtual_sources = lw.source_tags.iter().any(|&t| t < self.n_inputs);
                if virtual_sources && !lw.source_tags.iter().all(|&t| t < self.n_inputs) {
                    return Err(Error::Graph(format!(
                        "weight node {i} mixes input tags with neuron tags"
                    )));
                }
            }
        }

        // Edge checks: indices in range, endpoints alternate, tag lists of
        // connected nodes agree element for element.
        for &(a, b) in &self.edges {
            if a >= self.nodes.len() || b >= self.nodes.len() {
                return Err(Error::Graph(format!("edge ({a}, {b}) leaves the node range")));
            }
            match (&self.nodes[a], &self.nodes[b]) {
                (GraphNode::LinearWeights(lw), GraphNode::Neurons(pool)) => {
                    if lw.dest_tags != pool.tags {
                        return Err(Error::Graph(format!(
                            "edge ({a}, {b}): weight destinations do not match the pool tags"
                        )));
                    }
                }
                (GraphNode::Neurons(pool), GraphNode::LinearWeights(lw)) => {
                    if lw.source_tags != pool.tags {
                        return Err(Error::Graph(format!(
                            "edge ({a}, {b}): weight sources do not match the pool tags"
                        )));
                    }
                }
                _ => {
                    return Err(Error::Graph(format!(
                        "edge ({a}, {b}) connects {} to {}; edges must alternate \
                         between weight and neuron nodes",
                        self.nodes[a].kind_name(),
                        self.nodes[b].kind_name()
                    )));
                }
            }
        }

        self.check_acyclic_outside_recurrence()?;
        Ok(())
    }

    /// Kahn's algorithm over the subgraph without recurrent weight nodes.
    fn check_acyclic_outside_recurrence(&self) -> Result<()> {
        let n = self.nodes.len();
        let skip: Vec<bool> = self
            .nodes
            .iter()
            .map(|node| matches!(node, GraphNode::LinearWeights(lw) if lw.recurrent))
            .collect();
        let mut indegree = vec![0usize; n];
        let mut out = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            if skip[a] || skip[b] {
                continue;
            }
            out[a].push(b);
            indegree[b] += 1;
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| !skip[i] && indegree[i] == 0).collect();
        let mut visited = 0;
        while let Some(i) = queue.pop() {
            visited += 1;
            for &j in &out[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    queue.push(j);
                }
            }
        }
        let live = skip.iter().filter(|&&s| !s).count();
        if visited != live {
            return Err(Error::Graph(
                "cycle through non-recurrent nodes; feedback must go through a \
                 weight node flagged recurrent"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Extracts the graph of a layered network. Each layer contributes a
/// feed-forward weight node, a neuron pool, and a recurrent weight node
/// (emitted even when all-zero, so the recurrence slot is always explicit).
pub fn as_graph(net: &LayeredNet) -> Result<NetGraph> {
    let n_inputs = net.n_inputs();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut prev_tags: Vec<usize> = (0..n_inputs).collect();
    let mut prev_pool: Option<usize> = None;
    let mut next_tag = n_inputs;

    for layer in &net.layers {
        let tags: Vec<usize> = (next_tag..next_tag + layer.n_neurons()).collect();
        next_tag += layer.n_neurons();

        let ff = nodes.len();
        nodes.push(GraphNode::LinearWeights(LinearWeightsNode {
            weights: layer.w_in.clone(),
            source_tags: prev_tags.clone(),
            dest_tags: tags.clone(),
            recurrent: false,
        }));
        let pool = nodes.len();
        nodes.push(GraphNode::Neurons(NeuronsNode {
            tags: tags.clone(),
            model: NeuronModel::Analog { params: layer.params },
        }));
        let rec = nodes.len();
        nodes.push(GraphNode::LinearWeights(LinearWeightsNode {
            weights: layer.w_rec.clone(),
            source_tags: tags.clone(),
            dest_tags: tags.clone(),
            recurrent: true,
        }));

        if let Some(p) = prev_pool {
            edges.push((p, ff));
        }
        edges.push((ff, pool));
        edges.push((pool, rec));
        edges.push((rec, pool));

        prev_tags = tags;
        prev_pool = Some(pool);
    }

    let graph = NetGraph { n_inputs, nodes, edges };
    graph.validate()?;
    Ok(graph)
}

/// Rebuilds a layered network from a graph. The graph must be a linear
/// chain: one entry weight node fed by the input tags, then alternating
/// pools and feed-forward weights, with at most one recurrent weight node
/// per pool.
pub fn net_from_graph(graph: &NetGraph, constants: &PhysicalConstants) -> Result<LayeredNet> {
    graph.validate()?;

    // Index the wiring around each neuron pool.
    let mut ff_into = vec![None; graph.nodes.len()]; // pool index -> feed-forward LW index
    let mut rec_into = vec![None; graph.nodes.len()]; // pool index -> recurrent LW index
    let mut pool_after = vec![None; graph.nodes.len()]; // LW index -> pool it feeds
    for &(a, b) in &graph.edges {
        if let (GraphNode::LinearWeights(lw), GraphNode::Neurons(_)) =
            (&graph.nodes[a], &graph.nodes[b])
        {
            pool_after[a] = Some(b);
            let slot = if lw.recurrent { &mut rec_into[b] } else { &mut ff_into[b] };
            if slot.replace(a).is_some() {
                let kind = if lw.recurrent { "recurrent" } else { "feed-forward" };
                return Err(Error::Graph(format!("pool node {b} has two {kind} weight nodes")));
            }
        }
    }

    // Entry point: the unique non-recurrent weight node sourced from the
    // input tags.
    let mut entries = graph.nodes.iter().enumerate().filter_map(|(i, node)| match node {
        GraphNode::LinearWeights(lw)
            if !lw.recurrent && lw.source_tags.iter().all(|&t| t < graph.n_inputs) =>
        {
            Some(i)
        }
        _ => None,
    });
    let entry = entries
        .next()
        .ok_or_else(|| Error::Graph("no weight node is fed by the input tags".into()))?;
    if entries.next().is_some() {
        return Err(Error::Graph("two weight nodes are fed by the input tags".into()));
    }
    if let GraphNode::LinearWeights(lw) = &graph.nodes[entry] {
        let expect: Vec<usize> = (0..graph.n_inputs).collect();
        if lw.source_tags != expect {
            return Err(Error::Graph(
                "the entry weight node must list the input tags in order".into(),
            ));
        }
    }

    // Walk the chain.
    let mut layers = Vec::new();
    let mut cursor = Some(entry);
    let mut pools_used = 0usize;
    while let Some(lw_idx) = cursor {
        let pool_idx = pool_after[lw_idx].ok_or_else(|| {
            Error::Graph(format!("weight node {lw_idx} does not feed a neuron pool"))
        })?;
        let GraphNode::Neurons(pool) = &graph.nodes[pool_idx] else { unreachable!() };
        let GraphNode::LinearWeights(ff) = &graph.nodes[lw_idx] else { unreachable!() };

        let params = pool.model.to_analog(constants)?;
        let w_rec = match rec_into[pool_idx] {
            Some(r) => {
                let GraphNode::LinearWeights(rw) = &graph.nodes[r] else { unreachable!() };
                rw.weights.clone()
            }
            None => Array2::zeros((pool.tags.len(), pool.tags.len())),
        };
        layers.push(Network::new(ff.weights.clone(), w_rec, params)?);
        pools_used += 1;

        // The next feed-forward weight node sourced from this pool, if any.
        let mut nexts = graph.edges.iter().filter_map(|&(a, b)| {
            if a != pool_idx {
                return None;
            }
            match &graph.nodes[b] {
                GraphNode::LinearWeights(lw) if !lw.recurrent => Some(b),
                _ => None,
            }
        });
        cursor = nexts.next();
        if nexts.next().is_some() {
            return Err(Error::Graph(format!(
                "pool node {pool_idx} fans out to two feed-forward weight nodes; \
                 only linear chains can be rebuilt into a network"
            )));
        }
    }

    let pools_total =
        graph.nodes.iter().filter(|n| matches!(n, GraphNode::Neurons(_))).count();
    if pools_used != pools_total {
        return Err(Error::Graph(format!(
            "{} of {} neuron pools are reachable from the input; the graph is not \
             a single chain",
            pools_used, pools_total
        )));
    }

    LayeredNet::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::derive_time_constant;
    use ndarray::array;

    fn two_layer_net() -> LayeredNet {
        let p = SimParams::default();
        let mut q = SimParams::default();
        q.i_spkthr = 2e-14;
        let first = Network::new(
            array![[1.0, -0.5, 0.25], [0.0, 2.0, 0.0]],
            array![[0.0, 0.5, 0.0], [0.0, 0.0, -1.5], [0.25, 0.0, 0.0]],
            p,
        )
        .unwrap();
        let second =
            Network::new(array![[3.0, 0.0], [0.5, -2.0], [0.0, 1.0]], array![[0.0, 1.0], [0.0, 0.0]], q)
                .unwrap();
        LayeredNet::new(vec![first, second]).unwrap()
    }

    #[test]
    fn graph_round_trip_preserves_the_network() {
        let c = PhysicalConstants::default();
        let net = two_layer_net();
        let graph = as_graph(&net).unwrap();
        assert_eq!(graph.n_inputs, 2);
        assert_eq!(graph.n_neurons(), 5);
        assert_eq!(graph.nodes.len(), 6);
        let back = net_from_graph(&graph, &c).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn graph_serde_round_trip_is_exact() {
        let net = two_layer_net();
        let graph = as_graph(&net).unwrap();
        let text = serde_json::to_string(&graph).unwrap();
        let parsed: NetGraph = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, graph);
        assert!(text.contains("\"kind\":\"linear_weights\""));
        assert!(text.contains("\"kind\":\"neurons\""));
    }

    #[test]
    fn unknown_node_kind_is_rejected() {
        let text = r#"{
            "n_inputs": 1,
            "nodes": [{"kind": "convolution", "taps": [1.0]}],
            "edges": []
        }"#;
        assert!(serde_json::from_str::<NetGraph>(text).is_err());
    }

    #[test]
    fn missing_recurrent_node_becomes_zero_feedback() {
        let c = PhysicalConstants::default();
        let p = SimParams::default();
        let graph = NetGraph {
            n_inputs: 2,
            nodes: vec![
                GraphNode::LinearWeights(LinearWeightsNode {
                    weights: array![[1.0], [2.0]],
                    source_tags: vec![0, 1],
                    dest_tags: vec![2],
                    recurrent: false,
                }),
                GraphNode::Neurons(NeuronsNode {
                    tags: vec![2],
                    model: NeuronModel::Analog { params: p },
                }),
            ],
            edges: vec![(0, 1)],
        };
        let net = net_from_graph(&graph, &c).unwrap();
        assert_eq!(net.layers.len(), 1);
        assert_eq!(net.layers[0].w_rec, Array2::<f64>::zeros((1, 1)));
    }

    #[test]
    fn lif_model_lowers_to_matching_time_constant() {
        let c = PhysicalConstants::default();
        let model = NeuronModel::Lif { tau_mem: 35e-3, threshold: 4e-14, dt: 1e-3 };
        let p = model.to_analog(&c).unwrap();
        let tau = derive_time_constant(p.itau_mem, c.c_mem, &c).unwrap();
        assert!((tau - 35e-3).abs() / 35e-3 < 1e-12);
        assert_eq!(p.i_spkthr, 4e-14);
        assert_eq!(p.igain_mem, 4.0 * p.itau_mem);
    }

    #[test]
    fn validation_rejects_duplicate_and_sparse_tags() {
        let p = SimParams::default();
        let pool = |tags: Vec<usize>| {
            GraphNode::Neurons(NeuronsNode { tags, model: NeuronModel::Analog { params: p } })
        };
        // Duplicate ownership of tag 1.
        let dup = NetGraph {
            n_inputs: 1,
            nodes: vec![pool(vec![1]), pool(vec![1])],
            edges: vec![],
        };
        assert!(matches!(dup.validate(), Err(Error::Graph(_))));
        // A hole in the tag range.
        let sparse = NetGraph { n_inputs: 1, nodes: vec![pool(vec![3])], edges: vec![] };
        assert!(matches!(sparse.validate(), Err(Error::Graph(_))));
    }

    #[test]
    fn validation_rejects_cycles_outside_recurrent_nodes() {
        let p = SimParams::default();
        let lw = |src: Vec<usize>, dst: Vec<usize>| {
            GraphNode::LinearWeights(LinearWeightsNode {
                weights: Array2::<f64>::zeros((src.len(), dst.len())),
                source_tags: src,
                dest_tags: dst,
                recurrent: false,
            })
        };
        // Two pools wired into a loop with non-recurrent weight nodes.
        let graph = NetGraph {
            n_inputs: 1,
            nodes: vec![
                GraphNode::Neurons(NeuronsNode {
                    tags: vec![1],
                    model: NeuronModel::Analog { params: p },
                }),
                lw(vec![1], vec![2]),
                GraphNode::Neurons(NeuronsNode {
                    tags: vec![2],
                    model: NeuronModel::Analog { params: p },
                }),
                lw(vec![2], vec![1]),
            ],
            edges: vec![(0, 1), (1, 2), (2, 3), (3, 0)],
        };
        let err = graph.validate().unwrap_err();
        assert!(err.to_string().contains("recurrent"), "{err}");
    }

    #[test]
    fn validation_rejects_mismatched_edge_tags() {
        let p = SimParams::default();
        let graph = NetGraph {
            n_inputs: 1,
            nodes: vec![
                GraphNode::LinearWeights(LinearWeightsNode {
                    weights: array![[1.0]],
                    source_tags: vec![0],
                    dest_tags: vec![1],
                    recurrent: false,
                }),
                GraphNode::Neurons(NeuronsNode {
                    tags: vec![1, 2],
                    model: NeuronModel::Analog { params: p },
                }),
            ],
            edges: vec![(0, 1)],
        };
        assert!(graph.validate().is_err());
    }
}
