//! Limited-memory BFGS with Armijo backtracking.
//!
//! The objective writes its gradient into the provided buffer. Linear
//! equality constraints are handled by the caller: if every gradient handed
//! back lies in a subspace and the start point is feasible, all iterates stay
//! feasible because search directions are combinations of those gradients.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iterations: usize,
    pub memory: usize,
    /// Stop once the max-norm of the gradient drops below this.
    pub gradient_tolerance: f64,
    /// Stop once a step improves the objective by less than this (relative).
    pub relative_decrease: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            memory: 8,
            gradient_tolerance: 1e-9,
            relative_decrease: 1e-15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn minimize<F>(mut objective: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut value = objective(&x, &mut grad);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut direction = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory];
    let mut stalled = 0;

    for iteration in 0..opts.max_iterations {
        if !value.is_finite() {
            return Minimum { x, value, iterations: iteration, converged: false };
        }
        if max_abs(&grad) <= opts.gradient_tolerance {
            return Minimum { x, value, iterations: iteration, converged: true };
        }

        // two-loop recursion
        direction.copy_from_slice(&grad);
        for (m, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &direction);
            alpha[m] = a;
            for (d, yv) in direction.iter_mut().zip(y) {
                *d -= a * yv;
            }
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for d in direction.iter_mut() {
                *d *= gamma;
            }
        } else {
            let scale = 1.0 / max_abs(&grad).max(1.0);
            for d in direction.iter_mut() {
                *d *= scale;
            }
        }
        for (m, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &direction);
            for (d, sv) in direction.iter_mut().zip(s) {
                *d += (alpha[m] - b) * sv;
            }
        }
        for d in direction.iter_mut() {
            *d = -*d;
        }
        let mut slope = dot(&grad, &direction);
        if !(slope < 0.0) {
            history.clear();
            let scale = 1.0 / max_abs(&grad).max(1.0);
            for (d, g) in direction.iter_mut().zip(&grad) {
                *d = -g * scale;
            }
            slope = dot(&grad, &direction);
        }

        let mut step = 1.0;
        let mut accepted = false;
        let mut trial_value = value;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = x[i] + step * direction[i];
            }
            trial_value = objective(&trial, &mut trial_grad);
            if trial_value.is_finite() && trial_value <= value + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Minimum { x, value, iterations: iteration, converged: false };
        }

        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let decrease = value - trial_value;
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        value = trial_value;
        if decrease <= opts.relative_decrease * value.abs().max(1e-300) {
            stalled += 1;
            if stalled >= 4 {
                return Minimum { x, value, iterations: iteration + 1, converged: true };
            }
        } else {
            stalled = 0;
        }
    }
    let converged = max_abs(&grad) <= opts.gradient_tolerance;
    Minimum { x, value, iterations: opts.max_iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let m = minimize(f, vec![-1.2, 1.0], &LbfgsOptions::default());
        assert!((m.x[0] - 1.0).abs() < 1e-6, "{:?}", m);
        assert!((m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn projected_gradients_keep_linear_constraint() {
        // minimize Σ (x_i - i)^2 subject to Σ x_i = 1
        let n = 5;
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..n {
                g[i] = 2.0 * (x[i] - i as f64);
                v += (x[i] - i as f64).powi(2);
            }
            let mean = g.iter().sum::<f64>() / n as f64;
            g.iter_mut().for_each(|gi| *gi -= mean);
            v
        };
        let m = minimize(f, vec![0.2; n], &LbfgsOptions::default());
        assert!((m.x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // optimum: x_i = i - (10 - 1)/5
        for i in 0..n {
            assert!((m.x[i] - (i as f64 - 1.8)).abs() < 1e-7);
        }
    }
}
