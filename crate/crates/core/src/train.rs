//! Loss, metrics, the training loop and the feature-based linear baseline.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{log_growth, DatasetSplit, LabeledExample};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, PreparedExample, Task};
use crate::nn::{Mat, Optimizer};
use crate::seed;

pub const LEARNING_RATES: [f64; 4] = [0.005, 0.01, 0.03, 0.05];
pub const L2_GRID: [f64; 6] = [1.0, 0.5, 0.1, 0.01, 0.001, 0.0005];

/// Mean squared error between log-space predictions and `log2(growth + 1)`.
pub fn msle(predictions: &[f64], growth: &[usize]) -> Result<f64> {
    let targets: Vec<f64> = growth.iter().map(|&g| log_growth(g)).collect();
    msle_log(predictions, &targets)
}

/// [`msle`] with targets already in log space.
pub fn msle_log(predictions: &[f64], log_targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("msle"));
    }
    if predictions.len() != log_targets.len() {
        return Err(Error::ShapeMismatch {
            op: "msle",
            lhs: (predictions.len(), 1),
            rhs: (log_targets.len(), 1),
        });
    }
    let total: f64 = predictions
        .iter()
        .zip(log_targets)
        .map(|(p, t)| {
            let d = p - t;
            d * d
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Rank-based (Mann-Whitney) AUC with tied scores sharing their average rank.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "auc",
            lhs: (scores.len(), 1),
            rhs: (labels.len(), 1),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidParameter("auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based: i+1 ..= j+1
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rates: Vec<f64>,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Examples per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rates: LEARNING_RATES.to_vec(),
            max_epochs: 100,
            patience: 10,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.learning_rates.is_empty() || self.learning_rates.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return bad("learning rates must be positive and non-empty");
        }
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return bad("epochs, patience and batch size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
    /// Set when the run hit a non-finite loss and was abandoned.
    pub diverged: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean test loss: MSLE for regression, cross-entropy for classification.
    pub test_loss: f64,
    pub msle: Option<f64>,
    pub auc: Option<f64>,
    pub val_loss: f64,
    pub learning_rate: f64,
    pub best_epoch: usize,
    pub grid: Vec<GridPoint>,
    /// Snapshot GCN evaluations over the whole run.
    pub snapshot_evaluations: u64,
    pub wall_clock_secs: f64,
}

impl MetricsReport {
    pub fn curve(&self) -> &[EpochRecord] {
        self.grid
            .iter()
            .find(|g| g.learning_rate == self.learning_rate)
            .map(|g| g.curve.as_slice())
            .unwrap_or(&[])
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub report: MetricsReport,
}

/// Evaluation-mode predictions, in example order.
pub fn predict_all(model: &Model, examples: &[PreparedExample]) -> Result<Vec<f64>> {
    examples.par_iter().map(|ex| model.predict(ex)).collect()
}

/// Mean per-example loss in evaluation mode: MSLE for regression,
/// cross-entropy for classification.
pub fn mean_loss(model: &Model, examples: &[PreparedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("mean_loss"));
    }
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let mut tape = crate::nn::Tape::new();
            let out = model.forward(&mut tape, &model.params, ex, None)?;
            let loss = model.loss(&mut tape, out, ex)?;
            Ok(tape.scalar(loss))
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / examples.len() as f64)
}

/// Test-set MSLE of a regression model.
pub fn evaluate_msle(model: &Model, examples: &[PreparedExample]) -> Result<f64> {
    let preds = predict_all(model, examples)?;
    let targets: Vec<f64> = examples.iter().map(|e| e.log_target).collect();
    msle_log(&preds, &targets)
}

/// Test-set AUC of a classification model, IC as the positive class.
pub fn evaluate_auc(model: &Model, examples: &[PreparedExample]) -> Result<f64> {
    let scores = predict_all(model, examples)?;
    let labels: Vec<bool> = examples.iter().map(|e| e.class_target().map(|y| y == 1.0)).collect::<Result<_>>()?;
    auc(&scores, &labels)
}

struct RunResult {
    point: GridPoint,
    best_params: Option<Vec<Mat>>,
    evaluations: u64,
}

/// One learning rate: mini-batch training with early stopping on the
/// validation loss. Returns the best parameters seen.
fn train_one(
    config: &ModelConfig,
    split: &DatasetSplit<PreparedExample>,
    train: &TrainConfig,
    lr: f64,
    grid_index: usize,
) -> Result<RunResult> {
    let mut model = Model::new(*config, seed::derive(train.seed, &["init"]))?;
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut point = GridPoint {
        learning_rate: lr,
        best_val_loss: f64::INFINITY,
        best_epoch: 0,
        curve: Vec::new(),
        diverged: None,
    };
    let mut best_params = None;
    let mut since_best = 0;
    let mut evaluations = 0u64;
    let gi = grid_index as u64;

    for epoch in 1..=train.max_epochs {
        order.shuffle(&mut seed::indexed(train.seed, "shuffle", &[gi, epoch as u64]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train.batch_size) {
            let results: Vec<(f64, Vec<Mat>)> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = seed::indexed(train.seed, "dropout", &[gi, epoch as u64, i as u64]);
                    model.example_gradients(&split.train[i], Some(&mut rng))
                })
                .collect::<Result<_>>()?;
            model.params.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for (&i, (loss, grads)) in batch.iter().zip(&results) {
                epoch_loss += loss;
                evaluations += split.train[i].steps as u64;
                model.params.add_grads(grads);
            }
            for p in model.params.iter_mut() {
                p.grad *= scale;
            }
            if !epoch_loss.is_finite() || !model.params.grads_finite() {
                point.diverged = Some(format!("non-finite loss in epoch {epoch}"));
                log::warn!("learning rate {lr}: diverged in epoch {epoch}");
                return Ok(RunResult {
                    point,
                    best_params,
                    evaluations,
                });
            }
            train.optimizer.step(&mut model.params, lr);
        }
        let val_loss = mean_loss(&model, &split.val)?;
        evaluations += split.val.iter().map(|e| e.steps as u64).sum::<u64>();
        let train_loss = epoch_loss / split.train.len() as f64;
        log::debug!("lr {lr} epoch {epoch}: train {train_loss:.4} val {val_loss:.4}");
        point.curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if !val_loss.is_finite() {
            point.diverged = Some(format!("non-finite validation loss in epoch {epoch}"));
            break;
        }
        if val_loss < point.best_val_loss {
            point.best_val_loss = val_loss;
            point.best_epoch = epoch;
            best_params = Some(model.params.values());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train.patience {
                break;
            }
        }
    }
    Ok(RunResult {
        point,
        best_params,
        evaluations,
    })
}

/// Train one model per learning rate, keep the one with the lowest
/// validation loss and report its test metrics.
pub fn train(config: &ModelConfig, split: &DatasetSplit<PreparedExample>, train_config: &TrainConfig) -> Result<TrainOutcome> {
    train_config.validate()?;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    let started = Instant::now();
    let rates = match config.variant.learning_rate {
        Some(lr) => vec![lr],
        None => train_config.learning_rates.clone(),
    };
    let mut best: Option<(usize, Vec<Mat>)> = None;
    let mut grid: Vec<GridPoint> = Vec::new();
    let mut evaluations = 0;
    for (gi, &lr) in rates.iter().enumerate() {
        let run = train_one(config, split, train_config, lr, gi)?;
        evaluations += run.evaluations;
        log::info!(
            "lr {lr}: best validation loss {:.5} at epoch {}",
            run.point.best_val_loss,
            run.point.best_epoch
        );
        if let Some(params) = run.best_params {
            let better = match &best {
                Some((bi, _)) => run.point.best_val_loss < grid[*bi].best_val_loss,
                None => true,
            };
            if better {
                best = Some((gi, params));
            }
        }
        grid.push(run.point);
    }
    let Some((bi, params)) = best else {
        return Err(Error::Diverged {
            epoch: 0,
            lr: rates[0],
        });
    };
    let mut model = Model::new(*config, 0)?;
    model.params.set_values(&params);
    let test_loss = mean_loss(&model, &split.test)?;
    let (msle, auc) = match config.task {
        Task::Regression => (Some(evaluate_msle(&model, &split.test)?), None),
        Task::Classification => (None, Some(evaluate_auc(&model, &split.test)?)),
    };
    evaluations += split.test.iter().map(|e| e.steps as u64).sum::<u64>();
    let report = MetricsReport {
        test_loss,
        msle,
        auc,
        val_loss: grid[bi].best_val_loss,
        learning_rate: grid[bi].learning_rate,
        best_epoch: grid[bi].best_epoch,
        grid,
        snapshot_evaluations: evaluations,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { model, report })
}

pub fn prepare(examples: &[LabeledExample]) -> Vec<PreparedExample> {
    examples.par_iter().map(PreparedExample::new).collect()
}

pub fn prepare_split(split: &DatasetSplit<LabeledExample>) -> DatasetSplit<PreparedExample> {
    DatasetSplit {
        train: prepare(&split.train),
        val: prepare(&split.val),
        test: prepare(&split.test),
    }
}

pub const BASELINE_FEATURES: [&str; 6] = [
    "avg_in_degree",
    "avg_out_degree",
    "nodes",
    "leaf_nodes",
    "edges",
    "avg_activation_time",
];

/// Hand-crafted cascade-graph features: average in- and out-degree, node,
/// leaf (out-degree 0) and edge counts, and the average activation time,
/// the mean over nodes of `(t_i - t_1) / i` with `i` the 1-based
/// activation rank.
pub fn cascade_features(example: &LabeledExample) -> [f64; 6] {
    let cg = &example.sequence.cascade;
    let g = &cg.graph;
    let n = g.node_count() as f64;
    let degrees = g.degrees();
    let edges = g.edge_count() as f64;
    let leaves = degrees.out_degree.iter().filter(|&&d| d == 0).count() as f64;
    let t0 = cg.times.first().copied().unwrap_or(0.0);
    let avg_time = cg
        .times
        .iter()
        .enumerate()
        .map(|(i, t)| (t - t0) / (i + 1) as f64)
        .sum::<f64>()
        / n;
    let avg_in = degrees.in_degree.iter().sum::<usize>() as f64 / n;
    let avg_out = degrees.out_degree.iter().sum::<usize>() as f64 / n;
    [avg_in, avg_out, n, leaves, edges, avg_time]
}

/// Ridge regression on standardized features with an unpenalized
/// intercept: minimizes `|y - b - Xw|^2 + l2 |w|^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l2: f64,
}

impl RidgeModel {
    pub fn fit(rows: &[Vec<f64>], targets: &[f64], l2: f64) -> Result<Self> {
        let n = rows.len();
        if n == 0 || n != targets.len() {
            return Err(Error::EmptyInput("ridge fit"));
        }
        if !(l2 >= 0.0) {
            return Err(Error::InvalidParameter("l2 must be non-negative".into()));
        }
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n as f64;
            }
        }
        let mut scale = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                scale[j] += (r[j] - mean[j]).powi(2) / n as f64;
            }
        }
        // constant columns keep unit scale and standardize to zero
        let scale: Vec<f64> = scale.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        let x = DMatrix::from_fn(n, d, |i, j| (rows[i][j] - mean[j]) / scale[j]);
        let y_mean = targets.iter().sum::<f64>() / n as f64;
        let y = DVector::from_iterator(n, targets.iter().map(|t| t - y_mean));
        let mut gram = x.transpose() * &x;
        for j in 0..d {
            gram[(j, j)] += l2;
        }
        let rhs = x.transpose() * y;
        let weights = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            // l2 = 0 on collinear features: minimum-norm least squares
            None => gram
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?
                * rhs,
        };
        Ok(Self {
            mean,
            scale,
            weights: weights.iter().copied().collect(),
            intercept: y_mean,
            l2,
        })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept
            + row
                .iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .zip(&self.weights)
                .map(|(((x, m), s), w)| (x - m) / s * w)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub msle: f64,
    pub val_msle: f64,
    pub l2: f64,
    pub model: RidgeModel,
    /// Validation MSLE per candidate `l2`.
    pub grid: Vec<(f64, f64)>,
}

/// Ridge baseline in log space over [`cascade_features`], `l2` chosen on
/// the validation split.
pub fn feature_linear_baseline(split: &DatasetSplit<LabeledExample>, l2_grid: &[f64]) -> Result<BaselineReport> {
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::EmptyInput("baseline split"));
    }
    if l2_grid.is_empty() {
        return Err(Error::EmptyInput("l2 grid"));
    }
    let rows = |xs: &[LabeledExample]| -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            xs.iter().map(|e| cascade_features(e).to_vec()).collect(),
            xs.iter().map(|e| e.log_target()).collect(),
        )
    };
    let (xtr, ytr) = rows(&split.train);
    let (xva, yva) = rows(&split.val);
    let (xte, yte) = rows(&split.test);
    let mut best: Option<(RidgeModel, f64)> = None;
    let mut grid = Vec::new();
    for &l2 in l2_grid {
        let model = RidgeModel::fit(&xtr, &ytr, l2)?;
        let preds: Vec<f64> = xva.iter().map(|r| model.predict(r)).collect();
        let val = msle_log(&preds, &yva)?;
        grid.push((l2, val));
        if best.as_ref().is_none_or(|(_, b)| val < *b) {
            best = Some((model, val));
        }
    }
    let (model, val_msle) = best.expect("grid non-empty");
    let preds: Vec<f64> = xte.iter().map(|r| model.predict(r)).collect();
    Ok(BaselineReport {
        msle: msle_log(&preds, &yte)?,
        val_msle,
        l2: model.l2,
        model,
        grid,
    })
}
