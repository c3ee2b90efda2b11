//! Dense float64 tensors with reverse-mode gradients, activations,
//! initialization, optimizers and a finite-difference gradient checker.

mod optim;
mod param;
mod tape;

pub use optim::{adam_step, sgd_step, Optimizer};
pub use param::{Checkpoint, ParamStore, Parameter, StoredTensor, CHECKPOINT_VERSION};
pub use tape::{Gradients, Mat, SoftmaxAxis, Tape, Var};

use ndarray::Array2;
use rand::Rng;

use crate::error::Result;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu * nv)
    }
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(dim: (usize, usize), rate: f64, rng: &mut R) -> Mat {
    let keep = 1.0 - rate;
    Array2::from_shape_fn(dim, |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

/// Inverted dropout; identity when not training or when `rate == 0`.
pub fn dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let mask = dropout_mask(tape.dim(x), rate, rng);
    tape.mul_const(x, mask)
}

/// Worst disagreement between reverse-mode and central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: (usize, usize),
    pub checked: usize,
}

/// Denominator floor so near-zero gradients compare absolutely.
const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compare the reverse-mode gradient of the scalar built by `f` against
/// central differences, for every entry of every parameter in `params`.
pub fn grad_check<F>(f: F, params: &ParamStore, epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    grad_check_with(f, params, epsilon, |_, analytic| analytic.to_vec())
}

/// As [`grad_check`], with a hook that may rewrite the analytic gradients
/// (used to verify the checker catches corrupted gradients).
pub fn grad_check_with<F, H>(f: F, params: &ParamStore, epsilon: f64, hook: H) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
    H: Fn(&ParamStore, &[Mat]) -> Vec<Mat>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    let grads = tape.backward(out);
    let mut analytic = params.zero_grads_like();
    for (id, g) in tape.param_grads(&grads) {
        analytic[id] += g;
    }
    let analytic = hook(params, &analytic);

    let eval = |p: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let out = f(&mut t, p)?;
        Ok(t.scalar(out))
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: (0, 0),
        checked: 0,
    };
    for id in 0..params.len() {
        let (rows, cols) = params.get(id).value.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = params.get(id).value[[r, c]];
                probe.get_mut(id).value[[r, c]] = orig + epsilon;
                let plus = eval(&probe)?;
                probe.get_mut(id).value[[r, c]] = orig - epsilon;
                let minus = eval(&probe)?;
                probe.get_mut(id).value[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * epsilon);
                let err = relative_error(analytic[id][[r, c]], numeric);
                report.checked += 1;
                if err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst_param = params.get(id).name.clone();
                    report.worst_index = (r, c);
                }
            }
        }
    }
    Ok(report)
}
