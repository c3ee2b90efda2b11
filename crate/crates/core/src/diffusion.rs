//! Independent Cascade and Linear Threshold simulation in synchronous
//! discrete time steps, and the filtered synthetic dataset generator.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, StaticGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiffusionModel {
    #[serde(rename = "IC")]
    IndependentCascade,
    #[serde(rename = "LT")]
    LinearThreshold,
}

impl fmt::Display for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiffusionModel::IndependentCascade => "IC",
            DiffusionModel::LinearThreshold => "LT",
        })
    }
}

impl FromStr for DiffusionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "IC" => Ok(DiffusionModel::IndependentCascade),
            "LT" => Ok(DiffusionModel::LinearThreshold),
            _ => Err(Error::InvalidParameter(format!("unknown diffusion model {s:?}"))),
        }
    }
}

/// Per-edge activation probabilities, aligned with `StaticGraph::edges()`.
#[derive(Debug, Clone)]
pub struct IcParams {
    pub edge_weight: Vec<f64>,
}

/// Per-edge weights aligned with `StaticGraph::edges()` and per-node thresholds.
#[derive(Debug, Clone)]
pub struct LtParams {
    pub edge_weight: Vec<f64>,
    pub node_threshold: Vec<f64>,
}

/// Uniform draw strictly inside (0, `upper`), `upper <= 1`.
fn open_unit<R: Rng + ?Sized>(rng: &mut R, upper: f64) -> f64 {
    loop {
        let x: f64 = rng.gen();
        if x > 0.0 {
            return x * upper;
        }
    }
}

impl IcParams {
    /// Weights uniform in (0, `weight_scale`).
    pub fn random<R: Rng + ?Sized>(g: &StaticGraph, weight_scale: f64, rng: &mut R) -> Self {
        Self {
            edge_weight: (0..g.edge_count()).map(|_| open_unit(rng, weight_scale)).collect(),
        }
    }

    pub fn uniform(g: &StaticGraph, w: f64) -> Self {
        Self {
            edge_weight: vec![w; g.edge_count()],
        }
    }
}

impl LtParams {
    /// Weights uniform in (0, `weight_scale`), thresholds uniform in (0, 1).
    pub fn random<R: Rng + ?Sized>(g: &StaticGraph, weight_scale: f64, rng: &mut R) -> Self {
        let edge_weight = (0..g.edge_count()).map(|_| open_unit(rng, weight_scale)).collect();
        let node_threshold = (0..g.node_count()).map(|_| open_unit(rng, 1.0)).collect();
        Self {
            edge_weight,
            node_threshold,
        }
    }
}

/// One simulated cascade: `(node, step)` in activation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeRecord {
    pub activations: Vec<(NodeId, u32)>,
    pub model: DiffusionModel,
    pub seed_node: NodeId,
}

impl CascadeRecord {
    pub fn len(&self) -> usize {
        self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }

    /// Number of distinct time steps, seed step included.
    pub fn step_count(&self) -> usize {
        self.activations.last().map_or(0, |&(_, t)| t as usize + 1)
    }
}

/// IC run that also reports how many Bernoulli trials each edge received.
pub fn simulate_ic_traced<R: Rng + ?Sized>(
    g: &StaticGraph,
    params: &IcParams,
    seed_node: NodeId,
    rng: &mut R,
) -> Result<(CascadeRecord, Vec<u32>)> {
    check_node(g, seed_node)?;
    let mut active = vec![false; g.node_count()];
    let mut trials = vec![0u32; g.edge_count()];
    active[seed_node] = true;
    let mut activations = vec![(seed_node, 0)];
    let mut frontier = vec![seed_node];
    let mut step = 0u32;
    while !frontier.is_empty() {
        step += 1;
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in g.out_neighbors(u) {
                if active[v] {
                    continue;
                }
                let e = g.edge_index(u, v).expect("adjacency and edge list agree");
                trials[e] += 1;
                if rng.gen::<f64>() < params.edge_weight[e] {
                    active[v] = true;
                    next.push(v);
                }
            }
        }
        next.sort_unstable();
        activations.extend(next.iter().map(|&v| (v, step)));
        frontier = next;
    }
    Ok((
        CascadeRecord {
            activations,
            model: DiffusionModel::IndependentCascade,
            seed_node,
        },
        trials,
    ))
}

pub fn simulate_ic<R: Rng + ?Sized>(
    g: &StaticGraph,
    params: &IcParams,
    seed_node: NodeId,
    rng: &mut R,
) -> Result<CascadeRecord> {
    simulate_ic_traced(g, params, seed_node, rng).map(|(record, _)| record)
}

/// LT run to the fixed point. A node activates at step `t + 1` when the
/// summed weight of its in-edges from nodes active by step `t` reaches its
/// threshold. Deterministic given the parameters.
pub fn simulate_lt(g: &StaticGraph, params: &LtParams, seed_node: NodeId) -> Result<CascadeRecord> {
    check_node(g, seed_node)?;
    let mut active = vec![false; g.node_count()];
    let mut pressure = vec![0.0f64; g.node_count()];
    active[seed_node] = true;
    let mut activations = vec![(seed_node, 0)];
    let mut frontier = vec![seed_node];
    let mut step = 0u32;
    while !frontier.is_empty() {
        step += 1;
        let mut touched = Vec::new();
        for &u in &frontier {
            for &v in g.out_neighbors(u) {
                if active[v] {
                    continue;
                }
                let e = g.edge_index(u, v).expect("adjacency and edge list agree");
                pressure[v] += params.edge_weight[e];
                touched.push(v);
            }
        }
        touched.sort_unstable();
        touched.dedup();
        let next: Vec<NodeId> = touched
            .into_iter()
            .filter(|&v| pressure[v] >= params.node_threshold[v])
            .collect();
        for &v in &next {
            active[v] = true;
        }
        activations.extend(next.iter().map(|&v| (v, step)));
        frontier = next;
    }
    Ok(CascadeRecord {
        activations,
        model: DiffusionModel::LinearThreshold,
        seed_node,
    })
}

fn check_node(g: &StaticGraph, node: NodeId) -> Result<()> {
    if g.contains(node) {
        Ok(())
    } else {
        Err(Error::UnknownNode {
            node,
            node_count: g.node_count(),
        })
    }
}

/// Settings for [`generate_dataset`].
///
/// `weight_scale` is the upper end of the uniform edge-weight draw. With
/// 1.0, cascades on a sparse scale-free graph saturate most of the network;
/// the default keeps the kept cascades at a few tens of nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub min_nodes: usize,
    pub min_steps: usize,
    pub max_attempts: usize,
    pub weight_scale: f64,
}

pub const DEFAULT_WEIGHT_SCALE: f64 = 0.28;

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            min_nodes: 10,
            min_steps: 3,
            max_attempts: 10_000_000,
            weight_scale: DEFAULT_WEIGHT_SCALE,
        }
    }
}

/// Draw fresh parameters and a uniform seed node per attempt, simulate, and
/// keep cascades passing the filter until `count` are kept.
pub fn generate_dataset<R: Rng + ?Sized>(
    g: &StaticGraph,
    model: DiffusionModel,
    count: usize,
    filter: GenerationConfig,
    rng: &mut R,
) -> Result<Vec<CascadeRecord>> {
    if !(filter.weight_scale > 0.0 && filter.weight_scale <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "weight scale {} not in (0, 1]",
            filter.weight_scale
        )));
    }
    if count == 0 {
        return Err(Error::InvalidParameter("cascade count must be positive".into()));
    }
    if g.node_count() == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut kept = Vec::with_capacity(count);
    let mut attempts = 0;
    while kept.len() < count {
        if attempts >= filter.max_attempts {
            return Err(Error::GaveUp {
                attempts,
                kept: kept.len(),
                wanted: count,
            });
        }
        attempts += 1;
        let seed_node = rng.gen_range(0..g.node_count());
        let record = match model {
            DiffusionModel::IndependentCascade => {
                let params = IcParams::random(g, filter.weight_scale, rng);
                simulate_ic(g, &params, seed_node, rng)?
            }
            DiffusionModel::LinearThreshold => {
                let params = LtParams::random(g, filter.weight_scale, rng);
                simulate_lt(g, &params, seed_node)?
            }
        };
        if record.len() >= filter.min_nodes && record.step_count() >= filter.min_steps {
            kept.push(record);
        }
    }
    Ok(kept)
}
