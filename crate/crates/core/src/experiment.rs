//! Experiment runners behind the command-line tool.
//!
//! A dataset directory holds `graph.tsv`, `cascades.tsv` and
//! `manifest.json`. The manifest fixes the train/validation/test split at
//! the cascade level, so every run on one dataset sees the same partition
//! whatever the variant, horizon or training seed.
//!
//! Runs write under the output directory:
//!
//! - `spec.json`: the experiment spec;
//! - `<command>.csv`: one row per run, each carrying the spec hash;
//! - `runs/<tag>/metrics.json`: full report with learning curves;
//! - `runs/<tag>/model.json` and `runs/<tag>/checkpoint.json`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    self, build_examples, Cascade, DatasetConfig, DatasetSplit, IngestOptions, LabeledExample, ObservationMode,
    Sampling, SplitAudit, DEFAULT_SPLIT,
};
use crate::diffusion::{generate_dataset, DiffusionModel, GenerationConfig, DEFAULT_WEIGHT_SCALE};
use crate::error::{Error, Result};
use crate::graph::{ba_generate, StaticGraph};
use crate::model::{ModelConfig, Task, Variant, VariantConfig};
use crate::seed;
use crate::train::{self, feature_linear_baseline, MetricsReport, TrainConfig, L2_GRID, LEARNING_RATES};

/// Overrides the worker thread count.
pub const WORKERS_ENV: &str = "CASSEQGCN_WORKERS";

pub const GRAPH_FILE: &str = "graph.tsv";
pub const CASCADES_FILE: &str = "cascades.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Size the global rayon pool from [`WORKERS_ENV`], if set. Returns the
/// thread count in effect.
pub fn configure_workers() -> Result<usize> {
    if let Ok(value) = std::env::var(WORKERS_ENV) {
        let n: usize = value
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidParameter(format!("{WORKERS_ENV}={value:?} is not a positive integer")))?;
        // a second call finds the pool already built; keep that one
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    GenData,
    Ingest,
    Train,
    Ablate,
    Sweep,
    Classify,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Ingest => "ingest",
            Command::Train => "train",
            Command::Ablate => "ablate",
            Command::Sweep => "sweep",
            Command::Classify => "classify",
        }
    }

    fn needs_dataset(self) -> bool {
        !matches!(self, Command::GenData | Command::Ingest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Trailing,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Q,
    R,
    DropEdge,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q" => Ok(SweepParam::Q),
            "r" => Ok(SweepParam::R),
            "dropedge" => Ok(SweepParam::DropEdge),
            _ => Err(Error::InvalidParameter(format!("unknown sweep parameter {s:?} (q|r|dropedge)"))),
        }
    }
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Q => "q",
            SweepParam::R => "r",
            SweepParam::DropEdge => "dropedge",
        }
    }
}

/// Synthetic data protocol: BA graph, then IC and LT cascades.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateSpec {
    pub nodes: usize,
    /// BA edges per new node.
    pub attach: usize,
    pub ic_cascades: usize,
    pub lt_cascades: usize,
    pub weight_scale: f64,
    pub min_nodes: usize,
    pub min_steps: usize,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        Self {
            nodes: 880,
            attach: 2,
            ic_cascades: 500,
            lt_cascades: 500,
            weight_scale: DEFAULT_WEIGHT_SCALE,
            min_nodes: 10,
            min_steps: 3,
        }
    }
}

/// External edge list plus cascade file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSpec {
    pub graph: PathBuf,
    pub cascades: PathBuf,
    pub max_gap: Option<f64>,
    /// Cascades shorter than this are dropped; 0 disables the filter.
    pub min_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    pub learning_rates: Vec<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub dropout: f64,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            learning_rates: LEARNING_RATES.to_vec(),
            max_epochs: 100,
            patience: 10,
            batch_size: 32,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub command: Command,
    /// Dataset directory read by train, ablate, sweep and classify.
    pub data: Option<PathBuf>,
    pub generate: GenerateSpec,
    pub ingest: Option<IngestSpec>,
    pub mode: ModeKind,
    /// Prediction horizon `T_p`.
    pub tp: f64,
    /// Observation window `T`, fixed mode only.
    pub t: Option<f64>,
    pub variant: Variant,
    /// Variants compared by `ablate`.
    pub variants: Vec<Variant>,
    /// Snapshot increment; `None` takes one snapshot per timestamp.
    pub q: Option<usize>,
    /// Routing iterations.
    pub r: usize,
    /// Fraction of graph edges removed before building cascade graphs.
    pub drop_edges: f64,
    pub sweep: Option<SweepParam>,
    pub sweep_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub min_observed: usize,
    pub training: TrainingSpec,
    /// Not part of the spec hash.
    #[serde(skip)]
    pub out: PathBuf,
}

impl ExperimentSpec {
    pub fn new(command: Command, out: impl Into<PathBuf>) -> Self {
        Self {
            command,
            data: None,
            generate: GenerateSpec::default(),
            ingest: None,
            mode: ModeKind::Trailing,
            tp: 2.0,
            t: None,
            variant: Variant::Full,
            variants: Variant::ALL.to_vec(),
            q: None,
            r: 3,
            drop_edges: 0.0,
            sweep: None,
            sweep_values: Vec::new(),
            seeds: vec![0],
            min_observed: 10,
            training: TrainingSpec::default(),
            out: out.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.tp > 0.0 && self.tp.is_finite()) {
            return bad(format!("T_p must be positive, got {}", self.tp));
        }
        match (self.mode, self.t) {
            (ModeKind::Fixed, None) => return bad("fixed mode needs both --t and --tp".into()),
            (ModeKind::Fixed, Some(t)) if !(t >= 0.0 && t.is_finite()) => {
                return bad(format!("observation window T must be non-negative, got {t}"))
            }
            (ModeKind::Trailing, Some(_)) => return bad("--t only applies to fixed mode".into()),
            _ => {}
        }
        if self.q == Some(0) {
            return bad("q must be >= 1".into());
        }
        if self.r == 0 {
            return bad("r must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.drop_edges) {
            return bad(format!("edge drop fraction {} not in [0, 1)", self.drop_edges));
        }
        if self.command.needs_dataset() && self.data.is_none() {
            return bad(format!("{} needs a dataset directory", self.command.as_str()));
        }
        match self.command {
            Command::Ingest if self.ingest.is_none() => return bad("ingest needs graph and cascade files".into()),
            Command::Ablate if self.variants.is_empty() => return bad("ablate needs at least one variant".into()),
            Command::Sweep if self.sweep.is_none() || self.sweep_values.is_empty() => {
                return bad("sweep needs a parameter and at least one value".into())
            }
            _ => {}
        }
        if let (Command::Sweep, Some(param)) = (self.command, self.sweep) {
            for &v in &self.sweep_values {
                let ok = match param {
                    SweepParam::Q | SweepParam::R => v >= 1.0 && v.fract() == 0.0,
                    SweepParam::DropEdge => (0.0..1.0).contains(&v),
                };
                if !ok {
                    return bad(format!("invalid {} value {v}", param.as_str()));
                }
            }
        }
        self.train_config(0).validate()
    }

    /// SHA-256 over the canonical JSON of the spec (output path excluded).
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn observation(&self) -> ObservationMode {
        match (self.mode, self.t) {
            (ModeKind::Fixed, Some(window)) => ObservationMode::Fixed {
                window,
                horizon: self.tp,
            },
            _ => ObservationMode::Trailing { horizon: self.tp },
        }
    }

    pub fn sampling(&self) -> Sampling {
        sampling_for(self.q)
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rates: self.training.learning_rates.clone(),
            max_epochs: self.training.max_epochs,
            patience: self.training.patience,
            batch_size: self.training.batch_size,
            seed,
            ..TrainConfig::default()
        }
    }

    fn model_config(&self, variant: Variant, q: Option<usize>, r: usize, task: Task) -> ModelConfig {
        let mut v = VariantConfig::new(variant);
        v.sampling = sampling_for(q);
        v.routing_iterations = r;
        ModelConfig {
            variant: v,
            task,
            dropout: self.training.dropout,
            ..ModelConfig::default()
        }
    }

    fn write(&self) -> Result<()> {
        create_dir(&self.out)?;
        write_json(&self.out.join("spec.json"), self)
    }
}

fn sampling_for(q: Option<usize>) -> Sampling {
    q.map_or(Sampling::PerTimestamp, Sampling::Increment)
}

/// Cascade ids of each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub source: String,
    pub generate: Option<GenerateSpec>,
    pub nodes: usize,
    /// Undirected links.
    pub links: usize,
    pub cascades: usize,
    pub ic_cascades: usize,
    pub lt_cascades: usize,
    pub graph_sha256: String,
    pub cascades_sha256: String,
    pub split: SplitManifest,
}

impl DatasetManifest {
    /// Short content id used in metric rows.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(&Sha256::digest(&json)[..6])
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: StaticGraph,
    pub cascades: Vec<Cascade>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    /// Fix a seeded cascade-level split and fill in the manifest.
    pub fn assemble(
        graph: StaticGraph,
        cascades: Vec<Cascade>,
        seed: u64,
        source: &str,
        generate: Option<GenerateSpec>,
    ) -> Result<Self> {
        let idx = data::split_indices(cascades.len(), DEFAULT_SPLIT, seed::derive(seed, &["splits"]))?;
        let ids = |is: &[usize]| is.iter().map(|&i| cascades[i].id.clone()).collect();
        let count = |m| cascades.iter().filter(|c| c.label == Some(m)).count();
        let manifest = DatasetManifest {
            seed,
            source: source.to_string(),
            generate,
            nodes: graph.node_count(),
            links: graph.undirected_edges().len(),
            cascades: cascades.len(),
            ic_cascades: count(DiffusionModel::IndependentCascade),
            lt_cascades: count(DiffusionModel::LinearThreshold),
            graph_sha256: String::new(),
            cascades_sha256: String::new(),
            split: SplitManifest {
                train: ids(&idx.train),
                val: ids(&idx.val),
                test: ids(&idx.test),
            },
        };
        Ok(Self {
            graph,
            cascades,
            manifest,
        })
    }

    pub fn save(&mut self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        let graph_path = dir.join(GRAPH_FILE);
        let cascades_path = dir.join(CASCADES_FILE);
        self.graph.save_edge_list(&graph_path)?;
        data::write_cascades(&cascades_path, &self.cascades)?;
        self.manifest.graph_sha256 = file_sha256(&graph_path)?;
        self.manifest.cascades_sha256 = file_sha256(&cascades_path)?;
        write_json(&dir.join(MANIFEST_FILE), &self.manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Err(Error::InvalidParameter(format!(
                "no dataset at {} (missing {MANIFEST_FILE}; run gen-data or ingest first)",
                dir.display()
            )));
        }
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        let graph = StaticGraph::load(&dir.join(GRAPH_FILE))?;
        let cascades = data::ingest_cascades(&dir.join(CASCADES_FILE), &graph, IngestOptions::default())?;
        if cascades.len() != manifest.cascades {
            return Err(Error::InvalidParameter(format!(
                "manifest lists {} cascades, file has {}",
                manifest.cascades,
                cascades.len()
            )));
        }
        Ok(Self {
            graph,
            cascades,
            manifest,
        })
    }

    /// Labeled examples per manifest split. Edges are dropped from the
    /// global graph (seeded by `seed`) before cascade graphs are built.
    pub fn examples(
        &self,
        config: &DatasetConfig,
        drop_edges: f64,
        seed: u64,
    ) -> Result<(DatasetSplit<LabeledExample>, SplitAudit)> {
        let dropped;
        let graph = if drop_edges > 0.0 {
            dropped = self.graph.drop_edges(drop_edges, seed::derive(seed, &["dropedge"]))?;
            &dropped
        } else {
            &self.graph
        };
        let by_id: HashMap<&str, &Cascade> = self.cascades.iter().map(|c| (c.id.as_str(), c)).collect();
        let mut audit = SplitAudit::default();
        let mut part = |ids: &[String]| -> Result<Vec<LabeledExample>> {
            let cascades: Vec<Cascade> = ids
                .iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|c| (*c).clone())
                        .ok_or_else(|| Error::InvalidParameter(format!("manifest names unknown cascade {id:?}")))
                })
                .collect::<Result<_>>()?;
            let (examples, a) = build_examples(&cascades, graph, config)?;
            audit.kept += a.kept;
            audit.no_observation += a.no_observation;
            audit.too_small += a.too_small;
            Ok(examples)
        };
        let split = DatasetSplit {
            train: part(&self.manifest.split.train)?,
            val: part(&self.manifest.split.val)?,
            test: part(&self.manifest.split.test)?,
        };
        Ok((split, audit))
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Simulate the synthetic dataset: BA graph reduced to its largest
/// component, then IC and LT cascades, each from its own seed stream.
pub fn generate(spec: &GenerateSpec, seed: u64) -> Result<Dataset> {
    let ba = ba_generate(spec.nodes, spec.attach, seed::derive(seed, &["graph"]))?;
    let graph = ba.largest_connected_component()?.graph;
    let filter = GenerationConfig {
        min_nodes: spec.min_nodes,
        min_steps: spec.min_steps,
        weight_scale: spec.weight_scale,
        ..GenerationConfig::default()
    };
    let mut cascades = Vec::with_capacity(spec.ic_cascades + spec.lt_cascades);
    for (model, count, tag) in [
        (DiffusionModel::IndependentCascade, spec.ic_cascades, "ic"),
        (DiffusionModel::LinearThreshold, spec.lt_cascades, "lt"),
    ] {
        if count == 0 {
            continue;
        }
        let mut rng = seed::stream(seed::derive(seed, &["weights"]), tag);
        let records = generate_dataset(&graph, model, count, filter, &mut rng)?;
        cascades.extend(
            records
                .iter()
                .enumerate()
                .map(|(i, r)| Cascade::from_record(format!("{tag}-{i:06}"), r)),
        );
    }
    if cascades.is_empty() {
        return Err(Error::InvalidParameter("no cascades requested".into()));
    }
    Dataset::assemble(graph, cascades, seed, "generate", Some(*spec))
}

/// Write graph, cascades and manifest to the output directory.
pub fn cmd_gen_data(spec: &ExperimentSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut dataset = generate(&spec.generate, spec.seeds[0])?;
    dataset.save(&spec.out)?;
    log::info!(
        "generated {} cascades ({} IC, {} LT) on {} nodes / {} links",
        dataset.manifest.cascades,
        dataset.manifest.ic_cascades,
        dataset.manifest.lt_cascades,
        dataset.manifest.nodes,
        dataset.manifest.links
    );
    Ok(dataset)
}

/// Read external files, truncate at inactivity gaps, drop short cascades
/// and write the result in the generated-dataset layout.
pub fn cmd_ingest(spec: &ExperimentSpec) -> Result<Dataset> {
    spec.validate()?;
    let ingest = spec.ingest.as_ref().expect("validated");
    let graph = StaticGraph::load(&ingest.graph)?;
    let cascades = data::ingest_cascades(
        &ingest.cascades,
        &graph,
        IngestOptions {
            max_gap: ingest.max_gap,
        },
    )?;
    let total = cascades.len();
    let cascades: Vec<Cascade> = cascades.into_iter().filter(|c| c.len() >= ingest.min_nodes.max(1)).collect();
    log::info!("ingested {} of {total} cascades", cascades.len());
    if cascades.is_empty() {
        return Err(Error::EmptyInput("ingested cascades"));
    }
    let mut dataset = Dataset::assemble(graph, cascades, spec.seeds[0], "ingest", None)?;
    dataset.save(&spec.out)?;
    Ok(dataset)
}

/// One CSV row: one trained model on one dataset, horizon and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub spec_hash: String,
    pub command: String,
    pub dataset: String,
    pub variant: String,
    pub task: String,
    pub mode: String,
    pub tp: f64,
    pub t: Option<f64>,
    pub q: Option<usize>,
    pub r: usize,
    pub drop_edges: f64,
    pub seed: u64,
    pub train_examples: usize,
    pub val_examples: usize,
    pub test_examples: usize,
    pub test_msle: Option<f64>,
    pub baseline_msle: Option<f64>,
    pub auc: Option<f64>,
    pub val_loss: f64,
    pub learning_rate: f64,
    pub best_epoch: usize,
    /// Snapshots in one pass over all splits.
    pub snapshots_per_pass: u64,
    pub snapshot_evaluations: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub tag: String,
    pub row: MetricsRow,
    pub audit: SplitAudit,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Copy)]
struct RunParams {
    variant: Variant,
    q: Option<usize>,
    r: usize,
    drop_edges: f64,
    seed: u64,
    task: Task,
    shuffle_labels: bool,
}

impl RunParams {
    fn from_spec(spec: &ExperimentSpec, seed: u64) -> Self {
        Self {
            variant: spec.variant,
            q: spec.q,
            r: spec.r,
            drop_edges: spec.drop_edges,
            seed,
            task: Task::Regression,
            shuffle_labels: false,
        }
    }

    fn tag(&self, spec: &ExperimentSpec) -> String {
        let mut tag = format!("{}-{}-tp{}", self.variant, spec.mode_tag(), spec.tp);
        if let Some(q) = self.q {
            tag.push_str(&format!("-q{q}"));
        }
        tag.push_str(&format!("-r{}", self.r));
        if self.drop_edges > 0.0 {
            tag.push_str(&format!("-drop{}", self.drop_edges));
        }
        if self.task == Task::Classification {
            tag.push_str(if self.shuffle_labels { "-cls-shuffled" } else { "-cls" });
        }
        tag.push_str(&format!("-s{}", self.seed));
        tag
    }
}

impl ExperimentSpec {
    fn mode_tag(&self) -> String {
        match (self.mode, self.t) {
            (ModeKind::Fixed, Some(t)) => format!("fixed-t{t}"),
            _ => "trailing".into(),
        }
    }
}

/// Permute labels across all examples; the null for classification.
fn shuffle_labels(split: &mut DatasetSplit<LabeledExample>, seed: u64) {
    let mut labels: Vec<_> = split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .map(|e| e.label)
        .collect();
    labels.shuffle(&mut seed::stream(seed, "shuffle-labels"));
    let mut it = labels.into_iter();
    for e in split.train.iter_mut().chain(&mut split.val).chain(&mut split.test) {
        e.label = it.next().expect("same length");
    }
}

fn run_one(spec: &ExperimentSpec, dataset: &Dataset, p: RunParams) -> Result<RunRecord> {
    let data_config = DatasetConfig {
        mode: spec.observation(),
        sampling: sampling_for(p.q),
        min_observed: spec.min_observed,
    };
    let (mut split, audit) = dataset.examples(&data_config, p.drop_edges, dataset.manifest.seed)?;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "dataset leaves an empty split after filtering ({audit:?})"
        )));
    }
    if p.shuffle_labels {
        shuffle_labels(&mut split, p.seed);
    }
    let baseline = match p.task {
        Task::Regression => Some(feature_linear_baseline(&split, &L2_GRID)?.msle),
        Task::Classification => None,
    };
    let prepared = train::prepare_split(&split);
    let snapshots_per_pass = prepared
        .train
        .iter()
        .chain(&prepared.val)
        .chain(&prepared.test)
        .map(|e| e.steps as u64)
        .sum();
    let config = spec.model_config(p.variant, p.q, p.r, p.task);
    let tag = p.tag(spec);
    log::info!("{tag}: {} train / {} val / {} test", split.train.len(), split.val.len(), split.test.len());
    let outcome = train::train(&config, &prepared, &spec.train_config(p.seed))?;
    let report = outcome.report;
    let row = MetricsRow {
        spec_hash: spec.hash(),
        command: spec.command.as_str().into(),
        dataset: dataset.manifest.digest(),
        variant: p.variant.to_string(),
        task: match (p.task, p.shuffle_labels) {
            (Task::Regression, _) => "regression".into(),
            (Task::Classification, false) => "classification".into(),
            (Task::Classification, true) => "classification-shuffled".into(),
        },
        mode: spec.mode_tag(),
        tp: spec.tp,
        t: spec.t,
        q: p.q,
        r: p.r,
        drop_edges: p.drop_edges,
        seed: p.seed,
        train_examples: split.train.len(),
        val_examples: split.val.len(),
        test_examples: split.test.len(),
        test_msle: report.msle,
        baseline_msle: baseline,
        auc: report.auc,
        val_loss: report.val_loss,
        learning_rate: report.learning_rate,
        best_epoch: report.best_epoch,
        snapshots_per_pass,
        snapshot_evaluations: report.snapshot_evaluations,
    };
    let dir = spec.out.join("runs").join(&tag);
    create_dir(&dir)?;
    config.save(&dir.join("model.json"))?;
    write_json(&dir.join("checkpoint.json"), &outcome.model.params.to_checkpoint())?;
    let record = RunRecord {
        tag,
        row,
        audit,
        report,
    };
    write_json(&dir.join("metrics.json"), &record)?;
    Ok(record)
}

fn write_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn run_all(spec: &ExperimentSpec, runs: Vec<RunParams>) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let dataset = Dataset::load(spec.data.as_deref().expect("validated"))?;
    spec.write()?;
    let records: Vec<RunRecord> = runs
        .into_par_iter()
        .map(|p| run_one(spec, &dataset, p))
        .collect::<Result<_>>()?;
    let rows: Vec<MetricsRow> = records.iter().map(|r| r.row.clone()).collect();
    write_csv(&spec.out.join(format!("{}.csv", spec.command.as_str())), &rows)?;
    Ok(records)
}

/// Train the chosen variant once per seed.
pub fn cmd_train(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    let runs = spec.seeds.iter().map(|&s| RunParams::from_spec(spec, s)).collect();
    run_all(spec, runs)
}

/// Every requested variant for every seed, on the same split.
pub fn cmd_ablate(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    let mut runs = Vec::new();
    for &seed in &spec.seeds {
        for &variant in &spec.variants {
            runs.push(RunParams {
                variant,
                ..RunParams::from_spec(spec, seed)
            });
        }
    }
    run_all(spec, runs)
}

/// One run per value of `q`, `r` or the edge drop fraction, per seed.
pub fn cmd_sweep(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let param = spec.sweep.expect("validated");
    let mut runs = Vec::new();
    for &seed in &spec.seeds {
        for &v in &spec.sweep_values {
            let mut p = RunParams::from_spec(spec, seed);
            match param {
                SweepParam::Q => p.q = Some(v as usize),
                SweepParam::R => p.r = v as usize,
                SweepParam::DropEdge => p.drop_edges = v,
            }
            runs.push(p);
        }
    }
    run_all(spec, runs)
}

/// IC-vs-LT prediction, plus the same run with shuffled labels, per seed.
pub fn cmd_classify(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    let mut runs = Vec::new();
    for &seed in &spec.seeds {
        for shuffle_labels in [false, true] {
            runs.push(RunParams {
                task: Task::Classification,
                shuffle_labels,
                ..RunParams::from_spec(spec, seed)
            });
        }
    }
    run_all(spec, runs)
}
