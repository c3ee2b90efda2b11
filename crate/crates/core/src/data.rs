//! Cascades, snapshot sequences and labeled examples.
//!
//! A cascade file holds one cascade per line:
//!
//! ```text
//! cascade_id<TAB>label<TAB>node:t,node:t,...
//! ```
//!
//! `label` is `IC`, `LT` or `-`; `t` is an integer step or a real timestamp.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diffusion::{CascadeRecord, DiffusionModel};
use crate::error::{Error, Result};
use crate::graph::{NodeId, StaticGraph};
use crate::seed;

/// Activation sequence of one message over the global graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    pub id: String,
    pub label: Option<DiffusionModel>,
    /// `(global node, timestamp)`, timestamps non-decreasing.
    pub activations: Vec<(NodeId, f64)>,
}

impl Cascade {
    pub fn from_record(id: impl Into<String>, record: &CascadeRecord) -> Self {
        Self {
            id: id.into(),
            label: Some(record.model),
            activations: record.activations.iter().map(|&(v, t)| (v, f64::from(t))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        self.activations.iter().map(|a| a.0).collect()
    }

    /// Cut the cascade at the first inter-activation gap longer than `max_gap`.
    pub fn truncate_at_gap(&mut self, max_gap: f64) {
        let cut = self
            .activations
            .windows(2)
            .position(|w| w[1].1 - w[0].1 > max_gap)
            .map_or(self.activations.len(), |i| i + 1);
        self.activations.truncate(cut);
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.activations.windows(2).any(|w| w[1].1 < w[0].1) {
            return Err("timestamps decrease".into());
        }
        let mut nodes = self.nodes();
        nodes.sort_unstable();
        if let Some(w) = nodes.windows(2).find(|w| w[0] == w[1]) {
            return Err(format!("node {} activated twice", w[0]));
        }
        Ok(())
    }
}

pub fn format_cascade_line(c: &Cascade) -> String {
    let mut line = String::new();
    let label = c.label.map_or_else(|| "-".to_string(), |m| m.to_string());
    let _ = write!(line, "{}\t{}\t", c.id, label);
    for (i, (v, t)) in c.activations.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        let _ = write!(line, "{v}:{t}");
    }
    line
}

pub fn write_cascades(path: &Path, cascades: &[Cascade]) -> Result<()> {
    let mut text = String::new();
    for c in cascades {
        text.push_str(&format_cascade_line(c));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parse a cascade file without graph validation. Activations are sorted by
/// timestamp (stable, so ties keep file order).
pub fn read_cascades(path: &Path) -> Result<Vec<Cascade>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cascade = parse_cascade_line(line).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        })?;
        out.push(cascade);
    }
    Ok(out)
}

fn parse_cascade_line(line: &str) -> std::result::Result<Cascade, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [id, label, body] = fields[..] else {
        return Err(format!("expected 3 tab-separated fields, got {}", fields.len()));
    };
    let label = match label.trim() {
        "-" | "" => None,
        other => Some(other.parse::<DiffusionModel>().map_err(|e| e.to_string())?),
    };
    let mut activations = Vec::new();
    for item in body.split(',').filter(|s| !s.trim().is_empty()) {
        let (node, t) = item
            .split_once(':')
            .ok_or_else(|| format!("expected node:time, got {item:?}"))?;
        let node: NodeId = node.trim().parse().map_err(|e| format!("bad node {node:?}: {e}"))?;
        let t: f64 = t.trim().parse().map_err(|e| format!("bad time {t:?}: {e}"))?;
        if !t.is_finite() {
            return Err(format!("non-finite time {t}"));
        }
        activations.push((node, t));
    }
    activations.sort_by(|a, b| a.1.total_cmp(&b.1));
    let cascade = Cascade {
        id: id.to_string(),
        label,
        activations,
    };
    cascade.validate()?;
    Ok(cascade)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// End a cascade at the first silence longer than this (same unit as timestamps).
    pub max_gap: Option<f64>,
}

/// Read, validate against `graph`, sort and optionally gap-truncate.
pub fn ingest_cascades(path: &Path, graph: &StaticGraph, options: IngestOptions) -> Result<Vec<Cascade>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let mut cascade = parse_cascade_line(line).map_err(err)?;
        if let Some(&(node, _)) = cascade.activations.iter().find(|a| !graph.contains(a.0)) {
            return Err(err(format!(
                "node {node} is not in the graph ({} nodes)",
                graph.node_count()
            )));
        }
        if let Some(gap) = options.max_gap {
            cascade.truncate_at_gap(gap);
        }
        out.push(cascade);
    }
    Ok(out)
}

/// Observed cascade graph: local node `i` is the `i`-th activated node.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeGraph {
    pub graph: StaticGraph,
    /// Global id of each local node.
    pub nodes: Vec<NodeId>,
    /// Activation time of each local node, non-decreasing.
    pub times: Vec<f64>,
}

impl CascadeGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// Induced subgraph of `global` over the activated nodes, in activation order.
pub fn build_cascade_graph(cascade: &Cascade, global: &StaticGraph) -> Result<CascadeGraph> {
    let sub = global.induced_subgraph(&cascade.nodes())?;
    Ok(CascadeGraph {
        graph: sub.graph,
        nodes: sub.nodes,
        times: cascade.activations.iter().map(|a| a.1).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampling {
    /// Snapshots at activation counts `1, 1+q, 1+2q, ...` plus the full set.
    Increment(usize),
    /// One snapshot at the end of each distinct timestamp.
    PerTimestamp,
}

/// One state vector over a fixed topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<'a> {
    pub graph: &'a StaticGraph,
    pub state: Vec<f64>,
}

/// Snapshots of one cascade graph. Because local nodes are numbered in
/// activation order, each state is a prefix of ones, stored as its length.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSequence {
    pub cascade: CascadeGraph,
    pub active_counts: Vec<usize>,
}

impl SnapshotSequence {
    pub fn len(&self) -> usize {
        self.active_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active_counts.is_empty()
    }

    pub fn state(&self, k: usize) -> Vec<f64> {
        let n = self.cascade.node_count();
        let active = self.active_counts[k];
        (0..n).map(|i| if i < active { 1.0 } else { 0.0 }).collect()
    }

    pub fn snapshot(&self, k: usize) -> Snapshot<'_> {
        Snapshot {
            graph: &self.cascade.graph,
            state: self.state(k),
        }
    }

    pub fn snapshots(&self) -> impl Iterator<Item = Snapshot<'_>> {
        (0..self.len()).map(|k| self.snapshot(k))
    }
}

/// `K = 1 + ceil((n - 1) / q)`.
pub fn snapshot_count(n: usize, q: usize) -> usize {
    1 + (n - 1).div_ceil(q)
}

pub fn sample_snapshots(cascade: CascadeGraph, sampling: Sampling) -> Result<SnapshotSequence> {
    let n = cascade.node_count();
    if n == 0 {
        return Err(Error::EmptyCascade);
    }
    let active_counts = match sampling {
        Sampling::Increment(0) => {
            return Err(Error::InvalidParameter("snapshot increment q must be >= 1".into()));
        }
        Sampling::Increment(q) => {
            let mut counts: Vec<usize> = (1..=n).step_by(q).collect();
            if *counts.last().expect("n >= 1") != n {
                counts.push(n);
            }
            counts
        }
        Sampling::PerTimestamp => {
            let t = &cascade.times;
            (1..=n).filter(|&c| c == n || t[c] != t[c - 1]).collect()
        }
    };
    Ok(SnapshotSequence {
        cascade,
        active_counts,
    })
}

/// Observation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObservationMode {
    /// Observe up to `last - horizon`; predict the rest.
    Trailing { horizon: f64 },
    /// Observe `[t0, t0 + window]`; predict `(t0 + window, t0 + window + horizon]`.
    Fixed { window: f64, horizon: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedCascade {
    pub observed: Cascade,
    pub growth: usize,
}

/// Why a cascade produced no example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    NoObservation,
    TooSmall,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAudit {
    pub kept: usize,
    pub no_observation: usize,
    pub too_small: usize,
}

impl SplitAudit {
    pub fn record(&mut self, outcome: &std::result::Result<ObservedCascade, SkipReason>) {
        match outcome {
            Ok(_) => self.kept += 1,
            Err(SkipReason::NoObservation) => self.no_observation += 1,
            Err(SkipReason::TooSmall) => self.too_small += 1,
        }
    }
}

impl ObservationMode {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ObservationMode::Trailing { horizon } => horizon > 0.0,
            ObservationMode::Fixed { window, horizon } => window >= 0.0 && horizon > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("non-positive horizon in {self:?}")))
        }
    }
}

/// Split one cascade into its observed prefix and growth size. Ties at the
/// cutoff belong to the observation; the trailing cutoff never precedes the
/// first activation.
pub fn split_observation(
    cascade: &Cascade,
    mode: ObservationMode,
    min_observed: usize,
) -> std::result::Result<ObservedCascade, SkipReason> {
    let Some(&(_, t0)) = cascade.activations.first() else {
        return Err(SkipReason::NoObservation);
    };
    let (cutoff, end) = match mode {
        ObservationMode::Trailing { horizon } => {
            let last = cascade.activations.last().expect("non-empty").1;
            // the first timestamp is always observed
            ((last - horizon).max(t0), f64::INFINITY)
        }
        ObservationMode::Fixed { window, horizon } => (t0 + window, t0 + window + horizon),
    };
    let observed_len = cascade.activations.partition_point(|a| a.1 <= cutoff);
    if observed_len == 0 {
        return Err(SkipReason::NoObservation);
    }
    if observed_len < min_observed {
        return Err(SkipReason::TooSmall);
    }
    let growth = cascade.activations[observed_len..]
        .iter()
        .take_while(|a| a.1 <= end)
        .count();
    Ok(ObservedCascade {
        observed: Cascade {
            id: cascade.id.clone(),
            label: cascade.label,
            activations: cascade.activations[..observed_len].to_vec(),
        },
        growth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Growth(usize),
    Class(DiffusionModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub sequence: SnapshotSequence,
    pub growth: usize,
    pub label: Option<DiffusionModel>,
}

impl LabeledExample {
    pub fn target(&self, classification: bool) -> Target {
        match (classification, self.label) {
            (true, Some(label)) => Target::Class(label),
            _ => Target::Growth(self.growth),
        }
    }

    /// Regression target in log space, `log2(growth + 1)`.
    pub fn log_target(&self) -> f64 {
        log_growth(self.growth)
    }
}

pub fn log_growth(growth: usize) -> f64 {
    (growth as f64 + 1.0).log2()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub mode: ObservationMode,
    pub sampling: Sampling,
    pub min_observed: usize,
}

/// Turn raw cascades into labeled examples, skipping (and counting)
/// cascades with no or too-small observation.
pub fn build_examples(
    cascades: &[Cascade],
    global: &StaticGraph,
    config: &DatasetConfig,
) -> Result<(Vec<LabeledExample>, SplitAudit)> {
    config.mode.validate()?;
    let mut audit = SplitAudit::default();
    let mut examples = Vec::new();
    for cascade in cascades {
        let outcome = split_observation(cascade, config.mode, config.min_observed);
        audit.record(&outcome);
        let Ok(observed) = outcome else { continue };
        let graph = build_cascade_graph(&observed.observed, global)?;
        examples.push(LabeledExample {
            id: cascade.id.clone(),
            sequence: sample_snapshots(graph, config.sampling)?,
            growth: observed.growth,
            label: cascade.label,
        });
    }
    Ok((examples, audit))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random disjoint partition with sizes `round(n*train)`, `round(n*val)`
/// and the remainder.
pub fn split_indices(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| *r < 0.0) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let n_train = ((n as f64) * tr).round() as usize;
    let n_val = (((n as f64) * va).round() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(SplitIndices { train: idx, val, test })
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.7, 0.1, 0.2);

#[derive(Debug, Clone)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

pub fn split_dataset<T: Clone>(items: &[T], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit<T>> {
    let idx = split_indices(items.len(), ratios, seed)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| items[i].clone()).collect();
    Ok(DatasetSplit {
        train: pick(&idx.train),
        val: pick(&idx.val),
        test: pick(&idx.test),
    })
}
