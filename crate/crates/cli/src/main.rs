use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use casseqgcn::experiment::{
    self, cmd_ablate, cmd_classify, cmd_gen_data, cmd_ingest, cmd_sweep, cmd_train, Command, ExperimentSpec,
    IngestSpec, ModeKind, RunRecord, SweepParam,
};
use casseqgcn::model::Variant;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "casseqgcn", version, about = "Cascade growth prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a BA graph with IC and LT cascades.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 880)]
        nodes: usize,
        /// BA edges per new node.
        #[arg(long, default_value_t = 2)]
        attach: usize,
        /// IC cascades to keep.
        #[arg(long, default_value_t = 500)]
        ic: usize,
        /// LT cascades to keep.
        #[arg(long, default_value_t = 500)]
        lt: usize,
        /// Edge weights are drawn from U(0, scale).
        #[arg(long)]
        weight_scale: Option<f64>,
    },
    /// Convert an edge list and cascade file into a dataset directory.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        cascades: PathBuf,
        /// Cut cascades at the first silence longer than this.
        #[arg(long)]
        max_gap: Option<f64>,
        /// Drop cascades with fewer nodes; 0 disables.
        #[arg(long, default_value_t = 10)]
        min_nodes: usize,
    },
    /// Train one variant per seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
    },
    /// Train several variants on one split.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[arg(long, value_delimiter = ',', default_value = "full,mean,mh,nolstm")]
        variants: Vec<String>,
    },
    /// One training run per parameter value.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[arg(long, value_enum)]
        param: Param,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// IC vs LT prediction with a shuffled-label control.
    Classify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Trailing,
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Q,
    R,
    Dropedge,
}

#[derive(Args)]
struct Common {
    #[arg(long, value_enum, default_value = "trailing")]
    mode: Mode,
    /// Prediction horizon in time steps.
    #[arg(long, default_value_t = 2.0)]
    tp: f64,
    /// Observation window, fixed mode only.
    #[arg(long)]
    t: Option<f64>,
    /// full, mean, mh or nolstm.
    #[arg(long, default_value = "full")]
    variant: String,
    /// Snapshot increment; one snapshot per timestamp when absent.
    #[arg(long)]
    q: Option<usize>,
    /// Dynamic routing iterations.
    #[arg(long, default_value_t = 3)]
    r: usize,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Dataset directory written by gen-data or ingest.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fraction of graph edges to drop.
    #[arg(long, default_value_t = 0.0)]
    drop_edges: f64,
}

#[derive(Args)]
struct Training {
    /// Learning-rate grid.
    #[arg(long, value_delimiter = ',')]
    lr: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
}

fn base_spec(command: Command, c: Common) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::new(command, c.out);
    spec.data = c.data;
    spec.mode = match c.mode {
        Mode::Trailing => ModeKind::Trailing,
        Mode::Fixed => ModeKind::Fixed,
    };
    spec.tp = c.tp;
    spec.t = c.t;
    spec.variant = c.variant.parse()?;
    spec.q = c.q;
    spec.r = c.r;
    spec.seeds = c.seed;
    spec.drop_edges = c.drop_edges;
    Ok(spec)
}

fn apply_training(spec: &mut ExperimentSpec, t: Training) {
    if let Some(lr) = t.lr {
        spec.training.learning_rates = lr;
    }
    spec.training.max_epochs = t.epochs;
    spec.training.patience = t.patience;
    spec.training.batch_size = t.batch;
    spec.training.dropout = t.dropout;
}

fn print_runs(runs: &[RunRecord]) {
    for run in runs {
        let r = &run.row;
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{}\tmsle {}\tbaseline {}\tauc {}\tlr {}\tepoch {}",
            run.tag,
            fmt(r.test_msle),
            fmt(r.baseline_msle),
            fmt(r.auc),
            r.learning_rate,
            r.best_epoch
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    let workers = experiment::configure_workers()?;
    log::info!("{workers} worker threads");
    match cli.command {
        Cmd::GenData {
            common,
            nodes,
            attach,
            ic,
            lt,
            weight_scale,
        } => {
            let mut spec = base_spec(Command::GenData, common)?;
            spec.generate.nodes = nodes;
            spec.generate.attach = attach;
            spec.generate.ic_cascades = ic;
            spec.generate.lt_cascades = lt;
            if let Some(w) = weight_scale {
                spec.generate.weight_scale = w;
            }
            let dataset = cmd_gen_data(&spec)?;
            let m = &dataset.manifest;
            println!(
                "{}: {} nodes, {} links, {} cascades ({} IC, {} LT)",
                spec.out.display(),
                m.nodes,
                m.links,
                m.cascades,
                m.ic_cascades,
                m.lt_cascades
            );
        }
        Cmd::Ingest {
            common,
            graph,
            cascades,
            max_gap,
            min_nodes,
        } => {
            let mut spec = base_spec(Command::Ingest, common)?;
            spec.ingest = Some(IngestSpec {
                graph,
                cascades,
                max_gap,
                min_nodes,
            });
            let dataset = cmd_ingest(&spec)?;
            println!("{}: {} cascades", spec.out.display(), dataset.manifest.cascades);
        }
        Cmd::Train { common, training } => {
            let mut spec = base_spec(Command::Train, common)?;
            apply_training(&mut spec, training);
            print_runs(&cmd_train(&spec)?);
        }
        Cmd::Ablate {
            common,
            training,
            variants,
        } => {
            let mut spec = base_spec(Command::Ablate, common)?;
            apply_training(&mut spec, training);
            spec.variants = variants
                .iter()
                .map(|v| v.parse::<Variant>())
                .collect::<casseqgcn::Result<_>>()?;
            print_runs(&cmd_ablate(&spec)?);
        }
        Cmd::Sweep {
            common,
            training,
            param,
            values,
        } => {
            let mut spec = base_spec(Command::Sweep, common)?;
            apply_training(&mut spec, training);
            spec.sweep = Some(match param {
                Param::Q => SweepParam::Q,
                Param::R => SweepParam::R,
                Param::Dropedge => SweepParam::DropEdge,
            });
            spec.sweep_values = values;
            print_runs(&cmd_sweep(&spec)?);
        }
        Cmd::Classify { common, training } => {
            let mut spec = base_spec(Command::Classify, common)?;
            apply_training(&mut spec, training);
            print_runs(&cmd_classify(&spec)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()).context("casseqgcn failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
