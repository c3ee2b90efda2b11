use serde::{Deserialize, Serialize};

use super::param::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Optimizer {
    pub fn step(&self, params: &mut ParamStore, lr: f64) {
        match *self {
            Optimizer::Adam { beta1, beta2, eps } => adam_step(params, lr, beta1, beta2, eps),
            Optimizer::Sgd => sgd_step(params, lr),
        }
    }
}

pub fn sgd_step(params: &mut ParamStore, lr: f64) {
    params.step += 1;
    for p in params.iter_mut() {
        p.value.scaled_add(-lr, &p.grad);
    }
}

/// Bias-corrected Adam update from the accumulated gradients.
pub fn adam_step(params: &mut ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) {
    params.step += 1;
    let t = params.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for p in params.iter_mut() {
        ndarray::Zip::from(&mut p.value)
            .and(&mut p.m)
            .and(&mut p.v)
            .and(&p.grad)
            .for_each(|w, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn one_param(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", arr2(&[[x]]));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = one_param(1.5);
        sgd_step(&mut s, 0.1);
        assert_eq!(s.get(0).value[[0, 0]], 1.5);
        Optimizer::default().step(&mut s, 0.1);
        assert_eq!(s.get(0).value[[0, 0]], 1.5);
    }

    #[test]
    fn gradient_descent_on_quadratic_bowl() {
        // f(x) = x^2, x_{k+1} = (1 - 2 lr) x_k
        let lr = 0.1;
        let mut s = one_param(1.0);
        let mut prev = 1.0f64;
        for k in 1..=20 {
            s.zero_grad();
            let x = s.get(0).value[[0, 0]];
            s.get_mut(0).grad[[0, 0]] = 2.0 * x;
            sgd_step(&mut s, lr);
            let now = s.get(0).value[[0, 0]];
            assert!(now.abs() < prev.abs());
            assert!((now - 0.8f64.powi(k)).abs() < 1e-12);
            prev = now;
        }

        let mut a = one_param(1.0);
        for _ in 0..200 {
            a.zero_grad();
            let x = a.get(0).value[[0, 0]];
            a.get_mut(0).grad[[0, 0]] = 2.0 * x;
            Optimizer::default().step(&mut a, 0.05);
        }
        assert!(a.get(0).value[[0, 0]].abs() < 0.05);
    }

    #[test]
    fn runs_are_bitwise_identical() {
        let run = || {
            let mut s = one_param(0.3);
            for i in 0..50 {
                s.zero_grad();
                let x = s.get(0).value[[0, 0]];
                s.get_mut(0).grad[[0, 0]] = (x * 3.0).sin() + i as f64 * 1e-3;
                Optimizer::default().step(&mut s, 0.01);
            }
            s.get(0).value[[0, 0]].to_bits()
        };
        assert_eq!(run(), run());
    }
}
