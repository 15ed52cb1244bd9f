//! Entropic optimal transport between empirical measures, the explicit
//! adapted coupling of a drifted Brownian motion, and transport–entropy
//! verdicts.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::cc_metric::{cost_matrix, CcMetric, CostMatrix};
use crate::error::{Error, Result};
use crate::group::{CarnotStructure, GroupElement};
use crate::path::{cameron_martin_cost, lift, ExtendedCost};
use crate::rng;
use crate::sampling::{apply_drift, entropy_estimate, map_brownian, DriftSpec, SampleConfig};
use crate::stats::{self, mean_estimate, MeanEstimate};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SinkhornOptions {
    /// Fixed regularization; `None` runs the geometric schedule from
    /// `start_factor · median(C)` down to `end_factor · median(C)`.
    pub epsilon: Option<f64>,
    pub start_factor: f64,
    pub end_factor: f64,
    pub decay: f64,
    pub max_iterations: usize,
    /// Target L1 violation of the row marginal.
    pub tolerance: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            epsilon: None,
            start_factor: 0.05,
            end_factor: 1e-3,
            decay: 0.7,
            max_iterations: 10_000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SinkhornResult {
    /// Row-major coupling.
    pub plan: Vec<f64>,
    /// `⟨P, C⟩`.
    pub transport_cost: f64,
    /// `⟨P, C⟩ + ε KL(P ‖ a⊗b)`, evaluated through the dual potentials.
    pub entropic_cost: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub marginal_violation: f64,
    pub converged: bool,
    #[serde(skip)]
    pub source_potential: Vec<f64>,
    #[serde(skip)]
    pub target_potential: Vec<f64>,
}

fn check_weights(w: &[f64], n: usize, what: &str) -> Result<()> {
    if w.len() != n {
        return Err(Error::Dimension(format!("{what} has {} weights for {n} points", w.len())));
    }
    if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Input(format!("{what} weights must be positive and finite")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::Input(format!("{what} weights sum to {s}, not 1")));
    }
    Ok(())
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// `log Σ_j exp(u_j − k_j)`, stabilized by `hint` (a guess of the result)
/// and falling back to the running maximum when the guess is off.
fn log_sum_exp(k: &[f64], u: &[f64], hint: f64) -> f64 {
    // terms below e^-40 relative to the hint cannot move the sum
    let s: f64 = k
        .iter()
        .zip(u)
        .map(|(k, u)| {
            let d = u - k - hint;
            if d > -40.0 {
                d.exp()
            } else {
                0.0
            }
        })
        .sum();
    if s > 1e-100 && s < 1e100 {
        return hint + s.ln();
    }
    let m = k.iter().zip(u).map(|(k, u)| u - k).fold(f64::NEG_INFINITY, f64::max);
    m + k.iter().zip(u).map(|(k, u)| (u - k - m).exp()).sum::<f64>().ln()
}

/// One soft-min sweep: `out_i = −ε log Σ_j w_j exp((p_j − c_ij)/ε)` with
/// `k = c/ε` row-major and `prev` the previous value of `out`.
fn soft_min_sweep(k: &[f64], cols: usize, p: &[f64], log_w: &[f64], eps: f64, prev: &[f64], out: &mut [f64]) {
    let u: Vec<f64> = p.iter().zip(log_w).map(|(p, w)| w + p / eps).collect();
    out.par_iter_mut()
        .enumerate()
        .for_each(|(i, o)| *o = -eps * log_sum_exp(&k[i * cols..(i + 1) * cols], &u, -prev[i] / eps));
}

/// Regularization values visited by the solver for cost matrix `c`.
pub fn epsilon_schedule(c: &CostMatrix, opts: &SinkhornOptions) -> Result<Vec<f64>> {
    match opts.epsilon {
        Some(e) if e > 0.0 => Ok(vec![e]),
        Some(e) => Err(Error::Domain(format!("epsilon must be positive, got {e}"))),
        None => {
            let med = stats::median(&c.values);
            let scale = if med > 0.0 { med } else { c.values.iter().cloned().fold(0.0, f64::max).max(1.0) };
            let (mut e, end) = (opts.start_factor * scale, opts.end_factor * scale);
            let mut s = Vec::new();
            while e > end {
                s.push(e);
                e *= opts.decay;
            }
            s.push(end);
            Ok(s)
        }
    }
}

fn check_costs(costs: &CostMatrix) -> Result<()> {
    if costs.rows == 0 || costs.cols == 0 {
        return Err(Error::Input("empty cost matrix".into()));
    }
    if costs.values.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::Input("costs must be finite and non-negative".into()));
    }
    Ok(())
}

fn stage_target(opts: &SinkhornOptions, stage: usize, schedule: &[f64]) -> f64 {
    if stage + 1 == schedule.len() {
        opts.tolerance
    } else {
        opts.tolerance.max(1e-3)
    }
}

/// Log-domain Sinkhorn iterations on a `rows × cols` cost matrix.
pub fn sinkhorn(costs: &CostMatrix, a: &[f64], b: &[f64], opts: &SinkhornOptions) -> Result<SinkhornResult> {
    let schedule = epsilon_schedule(costs, opts)?;
    sinkhorn_scheduled(costs, a, b, opts, &schedule, None)
}

fn sinkhorn_scheduled(
    costs: &CostMatrix,
    a: &[f64],
    b: &[f64],
    opts: &SinkhornOptions,
    schedule: &[f64],
    init: Option<(Vec<f64>, Vec<f64>)>,
) -> Result<SinkhornResult> {
    let (n, m) = (costs.rows, costs.cols);
    check_costs(costs)?;
    check_weights(a, n, "source")?;
    check_weights(b, m, "target")?;
    let c = &costs.values;
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();

    let (mut f, mut g) = init.unwrap_or_else(|| (vec![0.0; n], vec![0.0; m]));
    let mut f_next = f.clone();
    let mut g_prev = g.clone();
    let mut k = vec![0.0; n * m];
    let mut kt = vec![0.0; n * m];
    let mut iterations = 0;
    let mut eps = schedule[0];
    for (stage, &e) in schedule.iter().enumerate() {
        eps = e;
        for i in 0..n {
            for j in 0..m {
                let v = c[i * m + j] / eps;
                k[i * m + j] = v;
                kt[j * n + i] = v;
            }
        }
        let target = stage_target(opts, stage, schedule);
        while iterations < opts.max_iterations {
            g_prev.copy_from_slice(&g);
            soft_min_sweep(&kt, n, &f, &log_a, eps, &g_prev, &mut g);
            // row sums of the current plan are a_i·exp((f_i − f̃_i)/ε) with f̃ the next update
            soft_min_sweep(&k, m, &g, &log_b, eps, &f, &mut f_next);
            let violation: f64 = (0..n).map(|i| a[i] * ((f[i] - f_next[i]) / eps).exp_m1().abs()).sum();
            std::mem::swap(&mut f, &mut f_next);
            iterations += 1;
            if violation <= target {
                break;
            }
        }
    }
    let plan: Vec<f64> = (0..n * m)
        .map(|idx| {
            let (i, j) = (idx / m, idx % m);
            (log_a[i] + log_b[j] + (f[i] + g[j] - c[idx]) / eps).exp()
        })
        .collect();
    let mut col = vec![0.0; m];
    let mut row_violation = 0.0;
    for i in 0..n {
        let r = &plan[i * m..(i + 1) * m];
        row_violation += (r.iter().sum::<f64>() - a[i]).abs();
        col.iter_mut().zip(r).for_each(|(s, p)| *s += p);
    }
    let col_violation: f64 = col.iter().zip(b).map(|(s, w)| (s - w).abs()).sum();
    let violation = row_violation.max(col_violation);
    let transport_cost = plan.iter().zip(c).map(|(p, cc)| p * cc).sum();
    let entropic_cost = a.iter().zip(&f).map(|(x, y)| x * y).sum::<f64>() + b.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>();
    Ok(SinkhornResult {
        plan,
        transport_cost,
        entropic_cost,
        epsilon: eps,
        iterations,
        marginal_violation: violation,
        converged: violation <= opts.tolerance,
        source_potential: f,
        target_potential: g,
    })
}

/// `OT_ε(a, a)` on a symmetric cost matrix via the averaged fixed-point
/// update `f ← ½(f + T_ε f)`.
struct SymmetricSolution {
    entropic_cost: f64,
    violation: f64,
    converged: bool,
    potential: Vec<f64>,
}

fn symmetric_ot(costs: &CostMatrix, a: &[f64], opts: &SinkhornOptions, schedule: &[f64], init: Option<Vec<f64>>) -> Result<SymmetricSolution> {
    let n = costs.rows;
    if costs.cols != n {
        return Err(Error::Dimension(format!("self-cost matrix is {}x{}", n, costs.cols)));
    }
    check_costs(costs)?;
    check_weights(a, n, "self")?;
    let c = &costs.values;
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let mut f = init.unwrap_or_else(|| vec![0.0; n]);
    let mut t = f.clone();
    let mut k = vec![0.0; n * n];
    let mut iterations = 0;
    let mut eps = schedule[0];
    for (stage, &e) in schedule.iter().enumerate() {
        eps = e;
        k.iter_mut().zip(c).for_each(|(k, c)| *k = c / eps);
        let target = stage_target(opts, stage, schedule);
        while iterations < opts.max_iterations {
            soft_min_sweep(&k, n, &f, &log_a, eps, &f, &mut t);
            let violation: f64 = (0..n).map(|i| a[i] * ((f[i] - t[i]) / eps).exp_m1().abs()).sum();
            f.iter_mut().zip(&t).for_each(|(f, t)| *f = 0.5 * (*f + t));
            iterations += 1;
            if violation <= target {
                break;
            }
        }
    }
    let violation: f64 = (0..n)
        .map(|i| {
            let row: f64 = (0..n).map(|j| (log_a[i] + log_a[j] + (f[i] + f[j] - c[i * n + j]) / eps).exp()).sum();
            (row - a[i]).abs()
        })
        .sum();
    Ok(SymmetricSolution {
        entropic_cost: 2.0 * a.iter().zip(&f).map(|(x, y)| x * y).sum::<f64>(),
        violation,
        converged: violation <= opts.tolerance,
        potential: f,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Divergence {
    /// `OT_ε(a,b) − ½OT_ε(a,a) − ½OT_ε(b,b)`.
    pub value: f64,
    pub cross: SinkhornResult,
    pub marginal_violation: f64,
    pub converged: bool,
    #[serde(skip)]
    self_potentials: (Vec<f64>, Vec<f64>),
}

/// Debiased Sinkhorn divergence. `c_xx` and `c_yy` are the self-cost
/// matrices of the two supports; all three problems share the
/// regularization schedule of `c_xy`.
pub fn sinkhorn_divergence(
    c_xy: &CostMatrix,
    c_xx: &CostMatrix,
    c_yy: &CostMatrix,
    a: &[f64],
    b: &[f64],
    opts: &SinkhornOptions,
) -> Result<Divergence> {
    let schedule = epsilon_schedule(c_xy, opts)?;
    divergence_scheduled(c_xy, c_xx, c_yy, a, b, opts, &schedule, None)
}

type WarmStart = ((Vec<f64>, Vec<f64>), (Vec<f64>, Vec<f64>));

#[allow(clippy::too_many_arguments)]
fn divergence_scheduled(
    c_xy: &CostMatrix,
    c_xx: &CostMatrix,
    c_yy: &CostMatrix,
    a: &[f64],
    b: &[f64],
    opts: &SinkhornOptions,
    schedule: &[f64],
    init: Option<WarmStart>,
) -> Result<Divergence> {
    let (cross_init, (sa_init, sb_init)) = match init {
        Some((c, s)) => (Some(c), (Some(s.0), Some(s.1))),
        None => (None, (None, None)),
    };
    let cross = sinkhorn_scheduled(c_xy, a, b, opts, schedule, cross_init)?;
    let sa = symmetric_ot(c_xx, a, opts, schedule, sa_init)?;
    let sb = symmetric_ot(c_yy, b, opts, schedule, sb_init)?;
    let violation = cross.marginal_violation.max(sa.violation).max(sb.violation);
    let converged = cross.converged && sa.converged && sb.converged;
    Ok(Divergence {
        value: cross.entropic_cost - 0.5 * sa.entropic_cost - 0.5 * sb.entropic_cost,
        cross,
        marginal_violation: violation,
        converged,
        self_potentials: (sa.potential, sb.potential),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct W2Estimate {
    pub w2_squared: f64,
    /// `√(solver² + bootstrap²)`.
    pub error: f64,
    pub solver_error: f64,
    pub bootstrap_std: f64,
    pub converged: bool,
}

pub const BOOTSTRAP_RESAMPLES: usize = 16;
const REPLICATE_TOLERANCE: f64 = 1e-4;

fn sub_matrix(c: &CostMatrix, rows: &[usize], cols: &[usize]) -> CostMatrix {
    let mut values = Vec::with_capacity(rows.len() * cols.len());
    for &i in rows {
        values.extend(cols.iter().map(|&j| c.get(i, j)));
    }
    CostMatrix { rows: rows.len(), cols: cols.len(), values }
}

/// Distinct indices of a bootstrap resample and their multiplicity weights.
fn resample_support(idx: &[usize], n: usize) -> (Vec<usize>, Vec<f64>) {
    let mut counts = vec![0usize; n];
    idx.iter().for_each(|&i| counts[i] += 1);
    let support: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
    let weights = support.iter().map(|&i| counts[i] as f64 / idx.len() as f64).collect();
    (support, weights)
}

/// Debiased entropic estimate of `W₂²` between two equal-weight point
/// clouds under `metric`, with a bootstrap spread over resampled clouds.
pub fn w2_empirical(
    xs: &[GroupElement],
    ys: &[GroupElement],
    metric: &dyn CcMetric,
    opts: &SinkhornOptions,
    seed: u64,
) -> Result<W2Estimate> {
    let c_xy = cost_matrix(metric, xs, ys, true, seed)?;
    let c_xx = cost_matrix(metric, xs, xs, true, seed)?;
    let c_yy = cost_matrix(metric, ys, ys, true, seed)?;
    w2_from_costs(&c_xy, &c_xx, &c_yy, opts, seed)
}

/// [`w2_empirical`] on precomputed squared-cost matrices.
pub fn w2_from_costs(c_xy: &CostMatrix, c_xx: &CostMatrix, c_yy: &CostMatrix, opts: &SinkhornOptions, seed: u64) -> Result<W2Estimate> {
    let (n, m) = (c_xy.rows, c_xy.cols);
    let schedule = epsilon_schedule(c_xy, opts)?;
    let full = divergence_scheduled(c_xy, c_xx, c_yy, &uniform_weights(n), &uniform_weights(m), opts, &schedule, None)?;
    let max_cost = c_xy.values.iter().cloned().fold(0.0, f64::max);
    let solver_error = full.marginal_violation * max_cost;

    // replicates only need to resolve the bootstrap spread
    let replicate_opts = SinkhornOptions { tolerance: opts.tolerance.max(REPLICATE_TOLERANCE), ..*opts };
    let mut replicates = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for r in 0..BOOTSTRAP_RESAMPLES {
        let mut s = rng::stream(rng::mix(seed, 0xb007), r as u64);
        let ix: Vec<usize> = (0..n).map(|_| ((rng::uniform(&mut s) * n as f64) as usize).min(n - 1)).collect();
        let iy: Vec<usize> = (0..m).map(|_| ((rng::uniform(&mut s) * m as f64) as usize).min(m - 1)).collect();
        let (sx, wx) = resample_support(&ix, n);
        let (sy, wy) = resample_support(&iy, m);
        let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let warm = (
            (pick(&full.cross.source_potential, &sx), pick(&full.cross.target_potential, &sy)),
            (pick(&full.self_potentials.0, &sx), pick(&full.self_potentials.1, &sy)),
        );
        let d = divergence_scheduled(
            &sub_matrix(c_xy, &sx, &sy),
            &sub_matrix(c_xx, &sx, &sx),
            &sub_matrix(c_yy, &sy, &sy),
            &normalize(wx),
            &normalize(wy),
            &replicate_opts,
            &schedule[schedule.len() - 1..],
            Some(warm),
        )?;
        replicates.push(d.value);
    }
    let bootstrap_std = stats::variance_estimate(&replicates).mean.sqrt();
    Ok(W2Estimate {
        w2_squared: full.value,
        error: solver_error.hypot(bootstrap_std),
        solver_error,
        bootstrap_std,
        converged: full.converged,
    })
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Satisfied,
    Violated,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportReport {
    pub cost_squared: ExtendedCost,
    pub entropy: f64,
    pub bound: f64,
    pub alpha: f64,
    pub verdict: Verdict,
    pub mc_error: f64,
    pub metadata: BTreeMap<String, String>,
}

impl TransportReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Compares `cost²` with `2H/α`. Differences within `3·mc_error` are
/// inconclusive; otherwise the sign decides. An infinite cost violates.
pub fn talagrand_verdict(cost_squared: ExtendedCost, entropy: f64, alpha: f64, mc_error: f64) -> Result<TransportReport> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let bound = 2.0 * entropy / alpha;
    let verdict = match cost_squared {
        ExtendedCost::Infinite => Verdict::Violated,
        ExtendedCost::Finite(c) => {
            let band = 3.0 * mc_error.abs();
            if (c - bound).abs() <= band {
                Verdict::Inconclusive
            } else if c < bound {
                Verdict::Satisfied
            } else {
                Verdict::Violated
            }
        }
    };
    Ok(TransportReport { cost_squared, entropy, bound, alpha, verdict, mc_error, metadata: BTreeMap::new() })
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptedCheck {
    /// Mean of `C_H(Ψ(B), Ψ(B + ∫b))²` over the explicit coupling.
    pub mean_ch_squared: MeanEstimate,
    /// `2Ĥ` from an independent batch.
    pub two_h: MeanEstimate,
    /// `(mean C_H² − 2Ĥ)` in combined standard errors.
    pub gap_sigma: f64,
    /// Pairs whose cost came out infinite (should be none).
    pub infinite_pairs: usize,
}

/// Evaluates the adapted coupling `(Ψ(B), Ψ(B + ∫b))` path by path and
/// compares the mean squared cost with twice the relative entropy,
/// estimated on an independent seed.
pub fn adapted_cost_check(g: &CarnotStructure, drift: &DriftSpec, cfg: &SampleConfig) -> Result<AdaptedCheck> {
    let costs = map_brownian(g, cfg, |_, b| {
        let base = lift(g, b, cfg.level)?;
        let drifted = apply_drift(g, b, drift)?;
        Ok(cameron_martin_cost(&base, &drifted.path, None)?.squared())
    })?;
    let infinite_pairs = costs.iter().filter(|c| !c.is_finite()).count();
    let finite: Vec<f64> = costs.iter().filter_map(|c| c.finite()).collect();
    let mean_ch_squared = mean_estimate(&finite);

    let independent = SampleConfig { seed: rng::mix(cfg.seed, 0x2a), ..*cfg };
    let h = entropy_estimate(g, drift, &independent)?;
    let two_h = MeanEstimate { mean: 2.0 * h.mean, std_error: 2.0 * h.std_error, count: h.count };
    let diff = mean_ch_squared.mean - two_h.mean;
    let se = mean_ch_squared.std_error.hypot(two_h.std_error);
    let gap_sigma = if se > 0.0 {
        diff / se
    } else if diff.abs() < 1e-12 {
        0.0
    } else {
        f64::INFINITY * diff.signum()
    };
    Ok(AdaptedCheck { mean_ch_squared, two_h, gap_sigma, infinite_pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> CostMatrix {
        CostMatrix { rows, cols, values }
    }

    fn sq_costs(x: &[f64], y: &[f64]) -> CostMatrix {
        let values = x.iter().flat_map(|a| y.iter().map(move |b| (a - b).powi(2))).collect();
        matrix(x.len(), y.len(), values)
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn assignment(c: &CostMatrix) -> f64 {
        let n = c.rows;
        permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn two_point_identity_coupling() {
        let c = matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let r = sinkhorn(&c, &[0.5, 0.5], &[0.5, 0.5], &SinkhornOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.transport_cost < 1e-12);
        assert!((r.plan[0] - 0.5).abs() < 1e-9 && r.plan[1] < 1e-12);
    }

    #[test]
    fn marginals_match() {
        let x = [0.0, 0.3, 0.7, 1.2];
        let y = [0.1, 0.5, 0.9];
        let a = [0.1, 0.2, 0.3, 0.4];
        let b = [0.5, 0.25, 0.25];
        let r = sinkhorn(&sq_costs(&x, &y), &a, &b, &SinkhornOptions::default()).unwrap();
        assert!(r.converged);
        for i in 0..4 {
            let s: f64 = r.plan[i * 3..(i + 1) * 3].iter().sum();
            assert!((s - a[i]).abs() <= 1e-12);
        }
        for j in 0..3 {
            let s: f64 = (0..4).map(|i| r.plan[i * 3 + j]).sum();
            assert!((s - b[j]).abs() <= 1e-6);
        }
    }

    /// Distinct points of the 0.1-lattice in `[shift, shift + 2]`; distinct
    /// supports make the optimal assignment unique.
    fn distinct_lattice(s: &mut rng::Stream, n: usize, shift: f64) -> Vec<f64> {
        let mut ticks: Vec<i64> = Vec::new();
        while ticks.len() < n {
            let t = (rng::uniform(s) * 20.0).round() as i64;
            if !ticks.contains(&t) {
                ticks.push(t);
            }
        }
        ticks.iter().map(|&t| t as f64 / 10.0 + shift).collect()
    }

    #[test]
    fn agrees_with_enumeration_on_lattice_instances() {
        let mut s = rng::stream(17, 0);
        for n in 2..=6 {
            for _ in 0..5 {
                let x = distinct_lattice(&mut s, n, 0.0);
                let y = distinct_lattice(&mut s, n, 0.3);
                let exact = assignment(&sq_costs(&x, &y));
                let opts = SinkhornOptions::default();
                let w = uniform_weights(n);
                let d = sinkhorn_divergence(&sq_costs(&x, &y), &sq_costs(&x, &x), &sq_costs(&y, &y), &w, &w, &opts).unwrap();
                assert!(d.converged, "{x:?} {y:?} viol {} iters {}", d.marginal_violation, d.cross.iterations);
                assert!((d.cross.transport_cost - exact).abs() < 1e-6, "{x:?} {y:?}: {} vs {exact}", d.cross.transport_cost);
                assert!((d.value - exact).abs() < 1e-4, "{x:?} {y:?}: {} vs {exact}", d.value);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let c = matrix(1, 2, vec![0.0, f64::NAN]);
        assert!(matches!(sinkhorn(&c, &[1.0], &[0.5, 0.5], &SinkhornOptions::default()), Err(Error::Input(_))));
        let c = matrix(1, 2, vec![0.0, 1.0]);
        assert!(matches!(sinkhorn(&c, &[1.0], &[0.6, 0.5], &SinkhornOptions::default()), Err(Error::Input(_))));
    }

    #[test]
    fn verdict_examples() {
        let v = |c, h, a, e| talagrand_verdict(ExtendedCost::Finite(c), h, a, e).unwrap().verdict;
        assert_eq!(v(0.8, 0.5, 1.0, 0.01), Verdict::Satisfied);
        assert_eq!(v(1.2, 0.5, 1.0, 0.01), Verdict::Violated);
        assert_eq!(v(1.0, 0.5, 1.0, 0.05), Verdict::Inconclusive);
        let r = talagrand_verdict(ExtendedCost::Infinite, 0.5, 1.0, 0.0).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
        assert!(r.to_json().unwrap().contains("\"violated\""));
        assert!(talagrand_verdict(ExtendedCost::Finite(1.0), 0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn adapted_zero_and_line() {
        let g = CarnotStructure::heisenberg(1);
        let cfg = SampleConfig::new(5, 50, 3).unwrap();
        let z = adapted_cost_check(&g, &DriftSpec::Zero, &cfg).unwrap();
        assert_eq!((z.mean_ch_squared.mean, z.two_h.mean, z.gap_sigma), (0.0, 0.0, 0.0));
        let l = adapted_cost_check(&g, &DriftSpec::named("line", 2).unwrap(), &cfg).unwrap();
        assert!((l.mean_ch_squared.mean - 1.0).abs() < 1e-12);
        assert!((l.two_h.mean - 1.0).abs() < 1e-12);
        assert_eq!(l.infinite_pairs, 0);
    }
}
