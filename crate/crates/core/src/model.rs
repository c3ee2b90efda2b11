//! The cascade growth network.
//!
//! Every snapshot of a cascade shares one local graph. Node features
//! `[in_degree, out_degree, state]` pass through a two-layer GCN, an
//! aggregator collapses each snapshot to one vector, a temporal stage
//! summarizes the sequence and an MLP head emits a scalar.
//!
//! All `K` snapshots of an example are stacked into one `K*n` row matrix so
//! each stage runs as a handful of tape operations.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledExample, Sampling, Snapshot, SnapshotSequence};
use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::graph::StaticGraph;
use crate::nn::{self, Checkpoint, Mat, ParamStore, SoftmaxAxis, Tape, Var};
use crate::seed::{self, Rng};

pub const FEATURES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Routing,
    Mean,
    MultiHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Temporal {
    Lstm,
    Average,
}

/// The named model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Mean,
    #[serde(rename = "mh")]
    MultiHead,
    #[serde(rename = "nolstm")]
    NoLstm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Mean, Variant::MultiHead, Variant::NoLstm];

    pub fn aggregator(self) -> Aggregator {
        match self {
            Variant::Full | Variant::NoLstm => Aggregator::Routing,
            Variant::Mean => Aggregator::Mean,
            Variant::MultiHead => Aggregator::MultiHead,
        }
    }

    pub fn temporal(self) -> Temporal {
        match self {
            Variant::NoLstm => Temporal::Average,
            _ => Temporal::Lstm,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Mean => "mean",
            Variant::MultiHead => "mh",
            Variant::NoLstm => "nolstm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown variant {s:?} (full|mean|mh|nolstm)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub aggregator: Aggregator,
    pub temporal: Temporal,
    pub sampling: Sampling,
    /// Dynamic routing iterations `r`.
    pub routing_iterations: usize,
    /// Fixed learning rate; `None` searches the training grid.
    pub learning_rate: Option<f64>,
}

impl VariantConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            aggregator: variant.aggregator(),
            temporal: variant.temporal(),
            sampling: Sampling::PerTimestamp,
            routing_iterations: 3,
            learning_rate: None,
        }
    }
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self::new(Variant::Full)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Head output is `log2(growth + 1)`.
    Regression,
    /// Head output is the logit of `P(IC)`.
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: VariantConfig,
    pub task: Task,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub lstm_layers: usize,
    pub heads: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: VariantConfig::default(),
            task: Task::Regression,
            hidden: 32,
            mlp_hidden: 16,
            lstm_layers: 2,
            heads: 4,
            dropout: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.hidden == 0 || self.mlp_hidden == 0 {
            return bad("layer widths must be positive");
        }
        if self.variant.routing_iterations == 0 {
            return bad("routing iterations r must be >= 1");
        }
        if let Sampling::Increment(0) = self.variant.sampling {
            return bad("snapshot increment q must be >= 1");
        }
        if self.variant.temporal == Temporal::Lstm && self.lstm_layers == 0 {
            return bad("LSTM needs at least one layer");
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return bad("hidden width must split evenly across heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout rate must be in [0, 1)");
        }
        if let Some(lr) = self.variant.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("learning rate must be positive");
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }
}

/// Rows `[in_degree, out_degree, state]` over the local cascade graph.
pub fn feature_matrix(snapshot: &Snapshot<'_>) -> Mat {
    let degrees = snapshot.graph.degrees();
    let n = snapshot.graph.node_count();
    let mut h = Array2::zeros((n, FEATURES));
    for i in 0..n {
        h[[i, 0]] = degrees.in_degree[i] as f64;
        h[[i, 1]] = degrees.out_degree[i] as f64;
        h[[i, 2]] = snapshot.state[i];
    }
    h
}

/// Feature matrices of every snapshot stacked into `K*n x 3`.
pub fn stacked_features(sequence: &SnapshotSequence) -> Mat {
    let graph = &sequence.cascade.graph;
    let n = graph.node_count();
    let degrees = graph.degrees();
    let mut h = Array2::zeros((sequence.len() * n, FEATURES));
    for (k, &active) in sequence.active_counts.iter().enumerate() {
        for i in 0..n {
            let row = k * n + i;
            h[[row, 0]] = degrees.in_degree[i] as f64;
            h[[row, 1]] = degrees.out_degree[i] as f64;
            h[[row, 2]] = if i < active { 1.0 } else { 0.0 };
        }
    }
    h
}

/// The parameter-independent part of an example.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    pub nodes: usize,
    pub steps: usize,
    pub laplacian: Mat,
    pub features: Mat,
    pub log_target: f64,
    pub label: Option<DiffusionModel>,
}

impl PreparedExample {
    pub fn new(example: &LabeledExample) -> Self {
        Self::from_sequence(&example.sequence, example.log_target(), example.label)
    }

    pub fn from_sequence(sequence: &SnapshotSequence, log_target: f64, label: Option<DiffusionModel>) -> Self {
        Self {
            nodes: sequence.cascade.node_count(),
            steps: sequence.len(),
            laplacian: sequence.cascade.graph.symmetric_normalized_laplacian(),
            features: stacked_features(sequence),
            log_target,
            label,
        }
    }

    /// Explicit Laplacian and stacked features, for tests and custom inputs.
    pub fn from_parts(laplacian: Mat, features: Mat, log_target: f64) -> Result<Self> {
        let n = laplacian.nrows();
        if n == 0 || !laplacian.is_square() || features.ncols() != FEATURES || features.nrows() % n != 0 {
            return Err(Error::ShapeMismatch {
                op: "prepared_example",
                lhs: laplacian.dim(),
                rhs: features.dim(),
            });
        }
        Ok(Self {
            nodes: n,
            steps: features.nrows() / n,
            laplacian,
            features,
            log_target,
            label: None,
        })
    }

    pub fn from_graph(graph: &StaticGraph, features: Mat, log_target: f64) -> Result<Self> {
        Self::from_parts(graph.symmetric_normalized_laplacian(), features, log_target)
    }

    /// Classification target: 1 for IC, 0 for LT.
    pub fn class_target(&self) -> Result<f64> {
        match self.label {
            Some(DiffusionModel::IndependentCascade) => Ok(1.0),
            Some(DiffusionModel::LinearThreshold) => Ok(0.0),
            None => Err(Error::InvalidParameter("example has no diffusion-model label".into())),
        }
    }
}

/// `relu(L X W^T + b)` per layer, with `L` applied to each block of `n` rows.
pub fn gcn_forward(tape: &mut Tape, laplacian: &Mat, h: Var, layers: &[(Var, Var)]) -> Result<Var> {
    let mut x = h;
    for &(w, b) in layers {
        let lx = tape.block_left_mul(laplacian.clone(), x)?;
        let y = tape.matmul_nt(lx, w)?;
        let y = tape.add_row(y, b)?;
        x = tape.relu(y);
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct Routing {
    /// `K x d`, one aggregated vector per snapshot.
    pub output: Var,
    /// Per-iteration node weights, each `K*n x 1`.
    pub weights: Vec<Var>,
    /// Per-iteration aggregates `v_j`, each `K x d`.
    pub iterates: Vec<Var>,
}

/// Dynamic routing over blocks of `nodes` rows of `h`, with `U = h W^T`.
pub fn dynamic_routing(tape: &mut Tape, h: Var, w: Var, iterations: usize, nodes: usize) -> Result<Routing> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("routing iterations r must be >= 1".into()));
    }
    if nodes == 0 || tape.dim(h).0 == 0 {
        return Err(Error::EmptyInput("dynamic_routing"));
    }
    let u = tape.matmul_nt(h, w)?;
    let rows = tape.dim(u).0;
    let uniform = tape.input(Array2::from_elem((rows, 1), 1.0 / nodes as f64));
    let mut v = tape.segment_mean(u, nodes)?;
    let mut weights = vec![uniform];
    let mut iterates = vec![v];
    for _ in 1..iterations {
        let b = tape.segment_cosine(u, v, nodes)?;
        let c = tape.segment_softmax(b, nodes)?;
        v = tape.segment_weighted_sum(c, u, nodes)?;
        weights.push(c);
        iterates.push(v);
    }
    Ok(Routing {
        output: v,
        weights,
        iterates,
    })
}

pub fn mean_aggregate(tape: &mut Tape, h: Var, nodes: usize) -> Result<Var> {
    if nodes == 0 || tape.dim(h).0 == 0 {
        return Err(Error::EmptyInput("mean_aggregate"));
    }
    tape.segment_mean(h, nodes)
}

#[derive(Debug, Clone)]
pub struct Attention {
    /// `K x d`.
    pub output: Var,
    /// Row-stochastic `n x n` attention, indexed `[snapshot * heads + head]`.
    pub weights: Vec<Var>,
}

/// Scaled dot-product self-attention per head over the nodes of each
/// snapshot; heads are concatenated and the result mean-pooled over nodes.
pub fn multihead_aggregate(
    tape: &mut Tape,
    h: Var,
    projections: [Var; 3],
    heads: usize,
    nodes: usize,
) -> Result<Attention> {
    if nodes == 0 || tape.dim(h).0 == 0 {
        return Err(Error::EmptyInput("multihead_aggregate"));
    }
    let [wq, wk, wv] = projections;
    let q = tape.matmul_nt(h, wq)?;
    let k = tape.matmul_nt(h, wk)?;
    let v = tape.matmul_nt(h, wv)?;
    let width = tape.dim(q).1;
    if heads == 0 || width % heads != 0 {
        return Err(Error::InvalidParameter(format!("{width} columns do not split into {heads} heads")));
    }
    let head_dim = width / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let steps = tape.dim(h).0 / nodes;
    let mut pooled = Vec::with_capacity(steps);
    let mut weights = Vec::with_capacity(steps * heads);
    for s in 0..steps {
        let rows = (s * nodes, (s + 1) * nodes);
        let qs = tape.slice_rows(q, rows.0, rows.1)?;
        let ks = tape.slice_rows(k, rows.0, rows.1)?;
        let vs = tape.slice_rows(v, rows.0, rows.1)?;
        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let cols = (hd * head_dim, (hd + 1) * head_dim);
            let qh = tape.slice_cols(qs, cols.0, cols.1)?;
            let kh = tape.slice_cols(ks, cols.0, cols.1)?;
            let vh = tape.slice_cols(vs, cols.0, cols.1)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let a = tape.softmax(scores, SoftmaxAxis::Cols);
            weights.push(a);
            outs.push(tape.matmul(a, vh)?);
        }
        let joined = tape.concat_cols(&outs)?;
        pooled.push(tape.mean_rows(joined)?);
    }
    Ok(Attention {
        output: tape.concat_rows(&pooled)?,
        weights,
    })
}

/// One LSTM layer: gate weights over `[x || h]` and gate biases, in the
/// order candidate `z`, input `z^m`, forget `z^f`, output `z^o`.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayer {
    pub weights: [Var; 4],
    pub biases: [Var; 4],
}

#[derive(Debug, Clone, Copy)]
pub struct LstmStep {
    pub gates: [Var; 4],
    pub cell: Var,
    pub hidden: Var,
}

#[derive(Debug, Clone)]
pub struct LstmOutput {
    /// `sigmoid(W' h)` at the final step, `1 x d`.
    pub y: Var,
    /// Steps of the top layer.
    pub steps: Vec<LstmStep>,
}

/// Stacked LSTM over the rows of `xs` (`K x d_in`) from zero state. Dropout
/// with `rate` is applied between layers when `rng` is given.
pub fn lstm_forward(
    tape: &mut Tape,
    xs: Var,
    layers: &[LstmLayer],
    w_out: Var,
    rate: f64,
    mut rng: Option<&mut Rng>,
) -> Result<LstmOutput> {
    let steps = tape.dim(xs).0;
    if steps == 0 {
        return Err(Error::EmptyInput("lstm_forward"));
    }
    if layers.is_empty() {
        return Err(Error::EmptyInput("lstm layers"));
    }
    let mut input = xs;
    let mut trace = Vec::new();
    for (li, layer) in layers.iter().enumerate() {
        if li > 0 {
            if let Some(r) = rng.as_deref_mut() {
                input = nn::dropout(tape, input, rate, true, r)?;
            }
        }
        let in_dim = tape.dim(input).1;
        let width = tape.dim(layer.weights[0]).0;
        check_lstm_shapes(tape, layer, in_dim, width)?;
        // Input contributions of all steps at once: X Wx^T + b, K x 4d.
        let w_all = tape.concat_rows(&layer.weights)?;
        let b_all = tape.concat_cols(&layer.biases)?;
        let wx = tape.slice_cols(w_all, 0, in_dim)?;
        let wh = tape.slice_cols(w_all, in_dim, in_dim + width)?;
        let pre_x = tape.matmul_nt(input, wx)?;
        let pre_x = tape.add_row(pre_x, b_all)?;

        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        let mut outputs = Vec::with_capacity(steps);
        trace.clear();
        for t in 0..steps {
            let mut pre = tape.slice_rows(pre_x, t, t + 1)?;
            if let Some(h_prev) = h {
                let rec = tape.matmul_nt(h_prev, wh)?;
                pre = tape.add(pre, rec)?;
            }
            let z = tape.slice_cols(pre, 0, width)?;
            let z = tape.tanh(z);
            let zm = tape.slice_cols(pre, width, 2 * width)?;
            let zm = tape.sigmoid(zm);
            let zf = tape.slice_cols(pre, 2 * width, 3 * width)?;
            let zf = tape.sigmoid(zf);
            let zo = tape.slice_cols(pre, 3 * width, 4 * width)?;
            let zo = tape.sigmoid(zo);
            let fresh = tape.mul(zm, z)?;
            let cell = match c {
                Some(c_prev) => {
                    let kept = tape.mul(zf, c_prev)?;
                    tape.add(kept, fresh)?
                }
                None => fresh,
            };
            let squashed = tape.tanh(cell);
            let hidden = tape.mul(zo, squashed)?;
            trace.push(LstmStep {
                gates: [z, zm, zf, zo],
                cell,
                hidden,
            });
            outputs.push(hidden);
            h = Some(hidden);
            c = Some(cell);
        }
        input = tape.concat_rows(&outputs)?;
    }
    let last = trace.last().expect("steps >= 1").hidden;
    let y = tape.matmul_nt(last, w_out)?;
    let y = tape.sigmoid(y);
    Ok(LstmOutput { y, steps: trace })
}

fn check_lstm_shapes(tape: &Tape, layer: &LstmLayer, in_dim: usize, width: usize) -> Result<()> {
    for (&w, &b) in layer.weights.iter().zip(&layer.biases) {
        let (wd, bd) = (tape.dim(w), tape.dim(b));
        if wd != (width, in_dim + width) || bd != (1, width) {
            return Err(Error::ShapeMismatch {
                op: "lstm_layer",
                lhs: wd,
                rhs: bd,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct LstmIds {
    weights: [usize; 4],
    biases: [usize; 4],
}

#[derive(Debug, Clone)]
struct ParamIds {
    gcn: Vec<(usize, usize)>,
    route: Option<usize>,
    attention: Option<[usize; 3]>,
    lstm: Vec<LstmIds>,
    lstm_out: Option<usize>,
    head: [usize; 4],
}

const GATES: [&str; 4] = ["z", "m", "f", "o"];

/// Network parameters laid out for `config`.
fn build_params(config: &ModelConfig, rng: &mut Rng) -> (ParamStore, ParamIds) {
    let d = config.hidden;
    let mut p = ParamStore::new();
    let mut gcn = Vec::new();
    for (layer, fan_in) in [(1, FEATURES), (2, d)] {
        let w = p.add_glorot(format!("gcn.w{layer}"), d, fan_in, rng);
        let b = p.add_zeros(format!("gcn.b{layer}"), 1, d);
        gcn.push((w, b));
    }
    let route = (config.variant.aggregator == Aggregator::Routing).then(|| p.add_glorot("route.w", d, d, rng));
    let attention = (config.variant.aggregator == Aggregator::MultiHead)
        .then(|| ["q", "k", "v"].map(|name| p.add_glorot(format!("attn.w{name}"), d, d, rng)));
    let mut lstm = Vec::new();
    let mut lstm_out = None;
    if config.variant.temporal == Temporal::Lstm {
        for layer in 0..config.lstm_layers {
            let weights = GATES.map(|g| p.add_glorot(format!("lstm{layer}.w_{g}"), d, 2 * d, rng));
            let biases = GATES.map(|g| p.add_zeros(format!("lstm{layer}.b_{g}"), 1, d));
            lstm.push(LstmIds { weights, biases });
        }
        lstm_out = Some(p.add_glorot("lstm.w_out", d, d, rng));
    }
    let m = config.mlp_hidden;
    let head = [
        p.add_glorot("head.w1", m, d, rng),
        p.add_zeros("head.b1", 1, m),
        p.add_glorot("head.w2", 1, m, rng),
        p.add_zeros("head.b2", 1, 1),
    ];
    (
        p,
        ParamIds {
            gcn,
            route,
            attention,
            lstm,
            lstm_out,
            head,
        },
    )
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// GCN output, `K*n x d`.
    pub embeddings: Var,
    /// Per-snapshot vectors, `K x d`.
    pub sequence: Var,
    /// Cascade representation fed to the head, `1 x d`.
    pub representation: Var,
    /// Head output, `1 x 1`.
    pub output: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    ids: ParamIds,
}

impl Model {
    /// Glorot-initialized weights and zero biases drawn from `init_seed`.
    pub fn new(config: ModelConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(init_seed);
        let (params, ids) = build_params(&config, &mut rng);
        Ok(Self { config, params, ids })
    }

    pub fn from_checkpoint(config: ModelConfig, checkpoint: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.load_checkpoint(checkpoint)?;
        Ok(model)
    }

    /// Full forward pass with explicit parameters. Dropout is active only
    /// when `rng` is given.
    pub fn trace(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        ex: &PreparedExample,
        mut rng: Option<&mut Rng>,
    ) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let ids = &self.ids;
        let gcn: Vec<(Var, Var)> = ids.gcn.iter().map(|&(w, b)| (params.bind(tape, w), params.bind(tape, b))).collect();
        let h = tape.input(ex.features.clone());
        let embeddings = gcn_forward(tape, &ex.laplacian, h, &gcn)?;

        let sequence = match cfg.variant.aggregator {
            Aggregator::Routing => {
                let w = params.bind(tape, ids.route.expect("routing parameters"));
                dynamic_routing(tape, embeddings, w, cfg.variant.routing_iterations, ex.nodes)?.output
            }
            Aggregator::Mean => mean_aggregate(tape, embeddings, ex.nodes)?,
            Aggregator::MultiHead => {
                let w = ids.attention.expect("attention parameters").map(|id| params.bind(tape, id));
                multihead_aggregate(tape, embeddings, w, cfg.heads, ex.nodes)?.output
            }
        };

        let representation = match cfg.variant.temporal {
            Temporal::Lstm => {
                let layers: Vec<LstmLayer> = ids
                    .lstm
                    .iter()
                    .map(|l| LstmLayer {
                        weights: l.weights.map(|id| params.bind(tape, id)),
                        biases: l.biases.map(|id| params.bind(tape, id)),
                    })
                    .collect();
                let w_out = params.bind(tape, ids.lstm_out.expect("lstm parameters"));
                lstm_forward(tape, sequence, &layers, w_out, cfg.dropout, rng.as_deref_mut())?.y
            }
            Temporal::Average => tape.mean_rows(sequence)?,
        };

        let [w1, b1, w2, b2] = ids.head.map(|id| params.bind(tape, id));
        let hidden = tape.matmul_nt(representation, w1)?;
        let hidden = tape.add_row(hidden, b1)?;
        let mut hidden = tape.relu(hidden);
        if let Some(r) = rng {
            hidden = nn::dropout(tape, hidden, cfg.dropout, true, r)?;
        }
        let output = tape.matmul_nt(hidden, w2)?;
        let output = tape.add_row(output, b2)?;
        Ok(ForwardTrace {
            embeddings,
            sequence,
            representation,
            output,
        })
    }

    /// Head output: predicted `log2(growth + 1)` for regression, the IC
    /// logit for classification.
    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, ex: &PreparedExample, rng: Option<&mut Rng>) -> Result<Var> {
        Ok(self.trace(tape, params, ex, rng)?.output)
    }

    /// Probability that the cascade came from the IC model.
    pub fn classify_forward(&self, tape: &mut Tape, params: &ParamStore, ex: &PreparedExample) -> Result<Var> {
        let logit = self.forward(tape, params, ex, None)?;
        Ok(tape.sigmoid(logit))
    }

    /// Per-example loss on top of [`Model::forward`]: squared error in log
    /// space for regression, binary cross-entropy for classification.
    pub fn loss(&self, tape: &mut Tape, output: Var, ex: &PreparedExample) -> Result<Var> {
        match self.config.task {
            Task::Regression => {
                let shifted = tape.add_scalar(output, -ex.log_target);
                tape.mul(shifted, shifted)
            }
            Task::Classification => {
                let y = ex.class_target()?;
                let sp = tape.softplus(output);
                let yz = tape.scale(output, y);
                tape.sub(sp, yz)
            }
        }
    }

    /// Evaluation-mode prediction: log-space growth for regression, IC
    /// probability for classification.
    pub fn predict(&self, ex: &PreparedExample) -> Result<f64> {
        let mut tape = Tape::new();
        let out = match self.config.task {
            Task::Regression => self.forward(&mut tape, &self.params, ex, None)?,
            Task::Classification => self.classify_forward(&mut tape, &self.params, ex)?,
        };
        Ok(tape.scalar(out))
    }

    /// Loss and parameter gradients of one example, training mode when
    /// `rng` is given.
    pub fn example_gradients(&self, ex: &PreparedExample, rng: Option<&mut Rng>) -> Result<(f64, Vec<Mat>)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &self.params, ex, rng)?;
        let loss = self.loss(&mut tape, out, ex)?;
        let value = tape.scalar(loss);
        let grads = tape.backward(loss);
        let mut acc: Vec<Option<Mat>> = vec![None; self.params.len()];
        for (id, g) in tape.take_param_grads(grads) {
            match &mut acc[id] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }
        let acc = acc
            .into_iter()
            .enumerate()
            .map(|(id, g)| g.unwrap_or_else(|| Array2::zeros(self.params.get(id).value.dim())))
            .collect();
        Ok((value, acc))
    }

    /// Number of snapshot GCN evaluations for one forward pass.
    pub fn snapshot_work(ex: &PreparedExample) -> usize {
        ex.steps
    }
}
