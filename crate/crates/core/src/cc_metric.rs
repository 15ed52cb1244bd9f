//! Carnot–Carathéodory distance.
//!
//! Three evaluators share the [`CcMetric`] trait:
//!
//! * [`HeisenbergMetric`]: closed form on `H^n` through the one-parameter
//!   family of circular-arc geodesics,
//! * [`OracleMetric`]: direct minimization over piecewise-linear horizontal
//!   curves, valid for any step-2 structure,
//! * [`GaugeMetric`]: the homogeneous gauge, exact when `d2 = 0`.
//!
//! All of them are left-invariant, so they only ever evaluate the norm of
//! the increment `a⁻¹b`.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::{dilate_unchecked, norm, CarnotStructure, GroupElement};
use crate::optim::{self, LbfgsOptions};
use crate::rng;

/// Below this horizontal radius the vertical branch of the closed form is used.
pub const VERTICAL_BRANCH_RADIUS: f64 = 1e-12;

pub trait CcMetric: Sync {
    fn structure(&self) -> &CarnotStructure;

    /// Distance from the identity to `c`. `stream` selects the random
    /// restarts of stochastic evaluators and is ignored by exact ones.
    fn norm_with_stream(&self, c: &GroupElement, stream: u64) -> Result<f64>;

    fn norm(&self, c: &GroupElement) -> Result<f64> {
        self.norm_with_stream(c, 0)
    }

    fn distance_with_stream(&self, a: &GroupElement, b: &GroupElement, stream: u64) -> Result<f64> {
        let c = self.structure().increment(a, b)?;
        self.norm_with_stream(&c, stream)
    }

    fn distance(&self, a: &GroupElement, b: &GroupElement) -> Result<f64> {
        self.distance_with_stream(a, b, 0)
    }
}

/// Picks the cheapest exact evaluator available for `g`, falling back to
/// the variational oracle.
pub fn metric_for(g: &CarnotStructure, opts: GeodesicSolverOptions) -> Result<Box<dyn CcMetric>> {
    if g.heisenberg_rank().is_some() {
        Ok(Box::new(HeisenbergMetric::new(g.clone())?))
    } else if g.d2() == 0 {
        Ok(Box::new(GaugeMetric::new(g.clone())))
    } else {
        Ok(Box::new(OracleMetric::new(g.clone(), opts)?))
    }
}

// ---------------------------------------------------------------------------
// Heisenberg closed form

#[derive(Debug, Clone)]
pub struct HeisenbergMetric {
    g: CarnotStructure,
}

impl HeisenbergMetric {
    pub fn new(g: CarnotStructure) -> Result<Self> {
        if g.heisenberg_rank().is_none() {
            return Err(Error::UnsupportedStructure(format!(
                "closed-form distance needs a Heisenberg structure, got {}",
                g.name()
            )));
        }
        Ok(Self { g })
    }

    pub fn h1() -> Self {
        Self { g: CarnotStructure::heisenberg(1) }
    }
}

impl CcMetric for HeisenbergMetric {
    fn structure(&self) -> &CarnotStructure {
        &self.g
    }

    fn norm_with_stream(&self, c: &GroupElement, _stream: u64) -> Result<f64> {
        self.g.check_element(c)?;
        heisenberg_norm(norm(&c.x1), c.x2[0])
    }
}

/// Closed-form CC distance on `H^n` between `a` and `b`.
pub fn cc_distance_heisenberg(g: &CarnotStructure, a: &GroupElement, b: &GroupElement) -> Result<f64> {
    HeisenbergMetric::new(g.clone())?.distance(a, b)
}

/// `φ − sin φ`, accurate for small `φ`.
fn phi_minus_sin(phi: f64) -> f64 {
    if phi.abs() < 1e-2 {
        let p2 = phi * phi;
        phi * p2 / 6.0 * (1.0 - p2 / 20.0 * (1.0 - p2 / 42.0 * (1.0 - p2 / 72.0)))
    } else {
        phi - phi.sin()
    }
}

/// Arc parameter of the geodesic with vertical-to-horizontal ratio `t`:
/// solves `(φ − sin φ) / (8 sin²(φ/2)) = t` for `φ ∈ [0, 2π)`.
/// Returns `(φ, sin(φ/2))`, the sine evaluated without cancellation.
fn arc_parameter(t: f64) -> Result<(f64, f64)> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Numerical(format!("arc parameter root-find got ratio {t}")));
    }
    if t == 0.0 {
        return Ok((0.0, 0.0));
    }
    // μ is increasing on (0, 2π) and μ(π) = π/8.
    if t <= PI / 8.0 {
        let mu = |phi: f64| phi_minus_sin(phi) / (8.0 * (phi / 2.0).sin().powi(2));
        let phi = bisect_increasing(mu, t, 0.0, PI)?;
        Ok((phi, (phi / 2.0).sin()))
    } else {
        // ψ = 2π − φ ∈ (0, π); μ decreasing in ψ.
        let mu = |psi: f64| (2.0 * PI - psi + psi.sin()) / (8.0 * (psi / 2.0).sin().powi(2));
        let psi = bisect_increasing(|p| -mu(p), -t, 0.0, PI)?;
        Ok((2.0 * PI - psi, (psi / 2.0).sin()))
    }
}

/// Root of `f(x) = target` for increasing `f` on the open interval `(lo, hi)`.
fn bisect_increasing<F: Fn(f64) -> f64>(f: F, target: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    for _ in 0..4000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let v = f(mid);
        if !v.is_finite() {
            return Err(Error::Numerical(format!(
                "arc parameter root-find produced {v} at {mid} (bracket [{lo}, {hi}], target {target})"
            )));
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 2.0 * f64::EPSILON * hi {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(Error::Numerical(format!(
        "arc parameter root-find did not converge: bracket [{lo}, {hi}], target {target}"
    )))
}

/// CC norm on `H^n` of a point with horizontal radius `r` and vertical
/// coordinate `z`.
pub fn heisenberg_norm(r: f64, z: f64) -> Result<f64> {
    if !r.is_finite() || !z.is_finite() {
        return Err(Error::Numerical(format!("non-finite input r = {r}, z = {z}")));
    }
    let z = z.abs();
    if z == 0.0 {
        return Ok(r);
    }
    if r < VERTICAL_BRANCH_RADIUS {
        return Ok((2.0 * (PI * z).sqrt()).max(r));
    }
    let (phi, half_sin) = arc_parameter(z / (r * r))?;
    if phi == 0.0 {
        return Ok(r);
    }
    Ok(r * phi / (2.0 * half_sin))
}

/// Points `γ(t_i)`, `t_i = i / samples`, of a CC geodesic from `a` to `b`
/// on `H^n` (constant speed).
pub fn heisenberg_geodesic(
    g: &CarnotStructure,
    a: &GroupElement,
    b: &GroupElement,
    samples: usize,
) -> Result<Vec<GroupElement>> {
    let n = g.heisenberg_rank().ok_or_else(|| {
        Error::UnsupportedStructure(format!("geodesic family needs a Heisenberg structure, got {}", g.name()))
    })?;
    let c = g.increment(a, b)?;
    let r = norm(&c.x1);
    let z = c.x2[0];
    let samples = samples.max(1);

    // initial velocity per complex plane and signed arc parameter λ
    let mut v = vec![(0.0, 0.0); n];
    let lambda;
    if z != 0.0 && r < VERTICAL_BRANCH_RADIUS {
        lambda = 2.0 * PI * z.signum();
        v[0] = (heisenberg_norm(r, z)?, 0.0);
    } else {
        let phi = if z == 0.0 { 0.0 } else { arc_parameter(z.abs() / (r * r))?.0 };
        lambda = phi * z.signum();
        for (m, vm) in v.iter_mut().enumerate() {
            let cm = (c.x1[2 * m], c.x1[2 * m + 1]);
            *vm = if lambda.abs() < 1e-9 {
                cm
            } else {
                // v = c · iλ / (e^{iλ} − 1)
                let den = (lambda.cos() - 1.0, lambda.sin());
                let num = cmul(cm, (0.0, lambda));
                cdiv(num, den)
            };
        }
    }
    let speed2: f64 = v.iter().map(|&(p, q)| p * p + q * q).sum();

    let mut out = Vec::with_capacity(samples + 1);
    for i in 0..=samples {
        let t = i as f64 / samples as f64;
        let mut x1 = vec![0.0; 2 * n];
        let lt = lambda * t;
        // (e^{iλt} − 1) / (iλ)
        let f = if lambda.abs() < 1e-9 {
            (t, 0.0)
        } else {
            cdiv((lt.cos() - 1.0, lt.sin()), (0.0, lambda))
        };
        for m in 0..n {
            let h = cmul(v[m], f);
            x1[2 * m] = h.0;
            x1[2 * m + 1] = h.1;
        }
        let x2 = if lambda.abs() < 1e-9 {
            0.0
        } else {
            speed2 / (2.0 * lambda * lambda) * phi_minus_sin(lt)
        };
        let local = GroupElement::new(x1, vec![x2]);
        out.push(g.product(a, &local)?);
    }
    Ok(out)
}

fn cmul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn cdiv(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let d = b.0 * b.0 + b.1 * b.1;
    ((a.0 * b.0 + a.1 * b.1) / d, (a.1 * b.0 - a.0 * b.1) / d)
}

// ---------------------------------------------------------------------------
// Gauge

#[derive(Debug, Clone)]
pub struct GaugeMetric {
    g: CarnotStructure,
}

impl GaugeMetric {
    pub fn new(g: CarnotStructure) -> Self {
        Self { g }
    }
}

impl CcMetric for GaugeMetric {
    fn structure(&self) -> &CarnotStructure {
        &self.g
    }

    fn norm_with_stream(&self, c: &GroupElement, _stream: u64) -> Result<f64> {
        self.g.check_element(c)?;
        Ok(self.g.gauge_norm(c))
    }
}

// ---------------------------------------------------------------------------
// Variational oracle

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GeodesicSolverOptions {
    pub segments: usize,
    pub penalty_start: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    pub restarts: usize,
    /// L-BFGS iteration cap per penalty stage.
    pub max_iterations: usize,
    /// Gauge residual a candidate endpoint must reach to count as feasible.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GeodesicSolverOptions {
    fn default() -> Self {
        Self {
            segments: 256,
            penalty_start: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e6,
            restarts: 8,
            max_iterations: 2000,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl GeodesicSolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Domain(format!("geodesic solver: {what}")));
        if self.segments < 16 {
            return bad("segments must be at least 16");
        }
        if !(self.penalty_start > 0.0) || !(self.penalty_growth > 1.0) || !(self.penalty_max >= self.penalty_start) {
            return bad("penalties must be positive with growth > 1 and max >= start");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        Ok(())
    }
}

/// Best horizontal polygon found by the oracle.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub length: f64,
    /// Gauge distance between the polygon's lifted endpoint and the target.
    pub residual: f64,
    /// Restarts that ended feasible.
    pub feasible_restarts: usize,
    /// Vertices of the lifted polygon, translated to start at `a`.
    pub vertices: Vec<GroupElement>,
}

#[derive(Debug, Clone)]
pub struct OracleMetric {
    g: CarnotStructure,
    opts: GeodesicSolverOptions,
}

impl OracleMetric {
    pub fn new(g: CarnotStructure, opts: GeodesicSolverOptions) -> Result<Self> {
        opts.validate()?;
        Ok(Self { g, opts })
    }

    pub fn options(&self) -> &GeodesicSolverOptions {
        &self.opts
    }
}

impl CcMetric for OracleMetric {
    fn structure(&self) -> &CarnotStructure {
        &self.g
    }

    fn norm_with_stream(&self, c: &GroupElement, stream: u64) -> Result<f64> {
        let id = self.g.identity();
        Ok(solve_oracle(&self.g, &id, c, &self.opts, stream)?.length)
    }
}

/// Upper bound on `d_cc(a, b)` by minimizing over `K`-segment horizontal
/// polygons whose lift ends at `a⁻¹b`.
pub fn cc_distance_oracle(
    g: &CarnotStructure,
    a: &GroupElement,
    b: &GroupElement,
    opts: &GeodesicSolverOptions,
) -> Result<f64> {
    Ok(geodesic_oracle(g, a, b, opts)?.length)
}

pub fn geodesic_oracle(
    g: &CarnotStructure,
    a: &GroupElement,
    b: &GroupElement,
    opts: &GeodesicSolverOptions,
) -> Result<OracleSolution> {
    opts.validate()?;
    let c = g.increment(a, b)?;
    solve_oracle(g, a, &c, opts, 0)
}

fn solve_oracle(
    g: &CarnotStructure,
    start: &GroupElement,
    c: &GroupElement,
    opts: &GeodesicSolverOptions,
    stream: u64,
) -> Result<OracleSolution> {
    g.check_element(c)?;
    if !c.is_finite() {
        return Err(Error::Input("non-finite target".into()));
    }
    let scale = g.gauge_norm(c);
    let k = opts.segments;
    let d1 = g.d1();
    if scale == 0.0 {
        return Ok(OracleSolution {
            length: 0.0,
            residual: 0.0,
            feasible_restarts: opts.restarts,
            vertices: vec![start.clone(); k + 1],
        });
    }
    let target = dilate_unchecked(1.0 / scale, c);
    let problem = Problem { g, k, target: &target };

    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut feasible = 0;
    for restart in 0..opts.restarts {
        let mut rs = rng::stream(opts.seed, rng::mix(stream, restart as u64));
        let x0 = problem.initial_guess(restart, &mut rs);
        let x = problem.augmented_lagrangian(x0, opts);
        let residual = problem.gauge_residual(&x);
        if !(residual < opts.tolerance) {
            continue;
        }
        feasible += 1;
        let length: f64 = x.chunks(d1).map(norm).sum();
        if best.as_ref().map_or(true, |(l, _, _)| length < *l) {
            best = Some((length, residual, x));
        }
    }
    let (length, residual, x) = best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no restart reached gauge residual {} at penalty {}",
            opts.tolerance, opts.penalty_max
        ))
    })?;

    let mut vertices = Vec::with_capacity(k + 1);
    let mut p = GroupElement::identity(d1, g.d2());
    vertices.push(g.product_unchecked(start, &p));
    for delta in x.chunks(d1) {
        let step = GroupElement::new(delta.to_vec(), vec![0.0; g.d2()]);
        p = g.product_unchecked(&p, &step);
        vertices.push(g.product_unchecked(start, &dilate_unchecked(scale, &p)));
    }
    Ok(OracleSolution {
        length: length * scale,
        residual: residual * scale,
        feasible_restarts: feasible,
        vertices,
    })
}

/// Polygon increments `Δ_0..Δ_{K-1}` stored flat, `K · d1` entries, with
/// `ΣΔ` pinned to the horizontal target.
struct Problem<'a> {
    g: &'a CarnotStructure,
    k: usize,
    target: &'a GroupElement,
}

impl Problem<'_> {
    fn d1(&self) -> usize {
        self.g.d1()
    }

    fn vertical(&self, x: &[f64]) -> Vec<f64> {
        let d1 = self.d1();
        let mut p = vec![0.0; d1];
        let mut z = vec![0.0; self.g.d2()];
        for delta in x.chunks(d1) {
            self.g.bracket_add(&p, delta, 0.5, &mut z);
            for (pi, di) in p.iter_mut().zip(delta) {
                *pi += di;
            }
        }
        z
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.vertical(x).iter().zip(&self.target.x2).map(|(a, b)| a - b).collect()
    }

    fn gauge_residual(&self, x: &[f64]) -> f64 {
        let d1 = self.d1();
        let mut sum = vec![0.0; d1];
        for delta in x.chunks(d1) {
            for (s, d) in sum.iter_mut().zip(delta) {
                *s += d;
            }
        }
        let horizontal: Vec<f64> = sum.iter().zip(&self.target.x1).map(|(a, b)| a - b).collect();
        norm(&horizontal) + norm(&self.residual(x)).sqrt()
    }

    /// Adds `Σ_m μ_m ∂z_m/∂Δ_j` into `grad`, where
    /// `∂z_m/∂Δ_j = ½ G^m(A_j − P_j)` with `P_j`, `A_j` the sums of the
    /// increments before and after `j`.
    fn add_constraint_gradient(&self, x: &[f64], mu: &[f64], grad: &mut [f64]) {
        let d1 = self.d1();
        let mut total = vec![0.0; d1];
        for delta in x.chunks(d1) {
            for (t, d) in total.iter_mut().zip(delta) {
                *t += d;
            }
        }
        let mut prefix = vec![0.0; d1];
        let mut s = vec![0.0; d1];
        for (delta, g) in x.chunks(d1).zip(grad.chunks_mut(d1)) {
            for i in 0..d1 {
                s[i] = total[i] - delta[i] - 2.0 * prefix[i];
            }
            for &(a, b, m, w) in self.g.upper_entries() {
                let c = 0.5 * mu[m] * w;
                g[a] += c * s[b];
                g[b] -= c * s[a];
            }
            for i in 0..d1 {
                prefix[i] += delta[i];
            }
        }
    }

    fn project(&self, grad: &mut [f64]) {
        let d1 = self.d1();
        let mut mean = vec![0.0; d1];
        for g in grad.chunks(d1) {
            for (m, v) in mean.iter_mut().zip(g) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= self.k as f64);
        for g in grad.chunks_mut(d1) {
            for (v, m) in g.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
    }

    fn initial_guess(&self, restart: usize, rs: &mut rng::Stream) -> Vec<f64> {
        let d1 = self.d1();
        let k = self.k;
        let c1 = &self.target.x1;
        let c2 = &self.target.x2;
        let c2_norm = norm(c2);

        let mut curve: Vec<Box<dyn Fn(f64, &mut [f64])>> = Vec::new();
        let line = c1.clone();
        curve.push(Box::new(move |t, out: &mut [f64]| {
            for (o, c) in out.iter_mut().zip(&line) {
                *o += c * t;
            }
        }));

        if restart % 2 == 0 && c2_norm > 1e-14 {
            // loop in the plane (u, J_c u), J_c = Σ c2_k J(e_k)
            let mut jc = vec![0.0; d1 * d1];
            for (kk, ck) in c2.iter().enumerate() {
                for (acc, v) in jc.iter_mut().zip(self.g.j_map(kk)) {
                    *acc += ck * v;
                }
            }
            let mut u: Vec<f64> = (0..d1).map(|_| rng::normal(rs)).collect();
            let un = norm(&u);
            u.iter_mut().for_each(|v| *v /= un);
            let mut v: Vec<f64> = (0..d1).map(|r| (0..d1).map(|col| jc[r * d1 + col] * u[col]).sum()).collect();
            let jn = norm(&v);
            if jn > 1e-12 {
                v.iter_mut().for_each(|x| *x /= jn);
                let radius = c2_norm / (PI * jn).sqrt();
                curve.push(Box::new(move |t, out: &mut [f64]| {
                    let th = 2.0 * PI * t;
                    for i in 0..out.len() {
                        out[i] += radius * ((th.cos() - 1.0) * u[i] + th.sin() * v[i]);
                    }
                }));
            }
        }

        let amplitude = if restart % 2 == 0 { 0.05 } else { 0.5 };
        if restart > 0 {
            let coeffs: Vec<f64> = (0..3 * d1).map(|_| amplitude * rng::normal(rs)).collect();
            curve.push(Box::new(move |t, out: &mut [f64]| {
                for f in 0..3 {
                    let s = (PI * (f + 1) as f64 * t).sin();
                    for i in 0..out.len() {
                        out[i] += coeffs[f * out.len() + i] * s;
                    }
                }
            }));
        }

        let eval = |t: f64| {
            let mut out = vec![0.0; d1];
            for c in &curve {
                c(t, &mut out);
            }
            out
        };
        let mut x = Vec::with_capacity(k * d1);
        let mut prev = eval(0.0);
        for j in 1..=k {
            let next = eval(j as f64 / k as f64);
            x.extend(next.iter().zip(&prev).map(|(a, b)| a - b));
            prev = next;
        }
        // loop and noise terms vanish at both ends up to rounding; pin ΣΔ = c1
        let last = &mut x[(k - 1) * d1..];
        let sum_before: Vec<f64> = (0..d1).map(|i| prev[i] - last[i]).collect();
        for i in 0..d1 {
            last[i] = c1[i] - sum_before[i];
        }
        let total: Vec<f64> = (0..d1).map(|i| x.iter().skip(i).step_by(d1).sum::<f64>()).collect();
        for i in 0..d1 {
            let fix = (c1[i] - total[i]) / k as f64;
            x.iter_mut().skip(i).step_by(d1).for_each(|v| *v += fix);
        }
        x
    }

    fn augmented_lagrangian(&self, mut x: Vec<f64>, opts: &GeodesicSolverOptions) -> Vec<f64> {
        let d2 = self.g.d2();
        let kf = self.k as f64;
        let mut lambda = vec![0.0; d2];
        let mut rho = opts.penalty_start;
        let lbfgs = LbfgsOptions {
            max_iterations: opts.max_iterations,
            gradient_tolerance: 1e-10,
            ..LbfgsOptions::default()
        };
        let mut previous = f64::INFINITY;
        for _ in 0..40 {
            let lam = lambda.clone();
            let objective = |x: &[f64], grad: &mut [f64]| {
                let r = self.residual(x);
                let mu: Vec<f64> = lam.iter().zip(&r).map(|(l, rv)| l + rho * rv).collect();
                let mut value = 0.0;
                for (gi, xi) in grad.iter_mut().zip(x) {
                    *gi = 2.0 * kf * xi;
                    value += kf * xi * xi;
                }
                for (l, rv) in lam.iter().zip(&r) {
                    value += l * rv + 0.5 * rho * rv * rv;
                }
                self.add_constraint_gradient(x, &mu, grad);
                self.project(grad);
                value
            };
            x = optim::minimize(objective, x, &lbfgs).x;
            let r = self.residual(&x);
            let rn = norm(&r);
            if rn < 1e-10 {
                break;
            }
            for (l, rv) in lambda.iter_mut().zip(&r) {
                *l += rho * rv;
            }
            if rn > 0.25 * previous {
                if rho >= opts.penalty_max {
                    break;
                }
                rho = (rho * opts.penalty_growth).min(opts.penalty_max);
            }
            previous = rn;
        }
        self.polish(&mut x);
        x
    }

    /// Minimal-norm Gauss–Newton steps onto `z(Δ) = c2` inside `ΣΔ = c1`.
    fn polish(&self, x: &mut [f64]) {
        let d2 = self.g.d2();
        if d2 == 0 {
            return;
        }
        let n = x.len();
        for _ in 0..20 {
            let r = self.residual(x);
            if norm(&r) < 1e-15 {
                return;
            }
            let mut jac = vec![0.0; d2 * n];
            for m in 0..d2 {
                let mut e = vec![0.0; d2];
                e[m] = 1.0;
                let row = &mut jac[m * n..(m + 1) * n];
                self.add_constraint_gradient(x, &e, row);
                self.project(row);
            }
            let mut gram = vec![0.0; d2 * d2];
            for p in 0..d2 {
                for q in 0..d2 {
                    gram[p * d2 + q] = jac[p * n..(p + 1) * n].iter().zip(&jac[q * n..(q + 1) * n]).map(|(a, b)| a * b).sum();
                }
            }
            let Some(y) = solve_dense(&mut gram, r, d2) else { return };
            for m in 0..d2 {
                for (xi, ji) in x.iter_mut().zip(&jac[m * n..(m + 1) * n]) {
                    *xi -= ji * y[m];
                }
            }
        }
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_dense(a: &mut [f64], mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&p, &q| a[p * n + col].abs().total_cmp(&a[q * n + col].abs()))?;
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(pivot * n + j, col * n + j);
            }
            b.swap(pivot, col);
        }
        for row in (col + 1)..n {
            let f = a[row * n + col] / a[col * n + col];
            for j in col..n {
                a[row * n + j] -= f * a[col * n + j];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let s: f64 = ((col + 1)..n).map(|j| a[col * n + j] * b[j]).sum();
        b[col] = (b[col] - s) / a[col * n + col];
    }
    Some(b)
}

// ---------------------------------------------------------------------------
// Sandwich probe

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct SandwichEstimate {
    /// `max d_g / d_cc` over the sampled pairs.
    pub kappa_low: f64,
    /// `max d_cc / d_g` over the sampled pairs.
    pub kappa_high: f64,
    pub kappa: f64,
    pub samples: usize,
}

/// Uniform point of the unit gauge ball by rejection from the unit cube.
pub fn sample_gauge_ball(g: &CarnotStructure, rs: &mut rng::Stream) -> GroupElement {
    loop {
        let x1: Vec<f64> = (0..g.d1()).map(|_| 2.0 * rng::uniform(rs) - 1.0).collect();
        let x2: Vec<f64> = (0..g.d2()).map(|_| 2.0 * rng::uniform(rs) - 1.0).collect();
        let p = GroupElement::new(x1, x2);
        if g.gauge_norm(&p) <= 1.0 {
            return p;
        }
    }
}

/// Empirical constants of the equivalence between `d_cc` and `d_g` on
/// random pairs from the unit gauge ball. An empty sample gives `(1, 1)`.
pub fn equivalence_sandwich_probe(g: &CarnotStructure, samples: usize, seed: u64) -> Result<SandwichEstimate> {
    let metric = HeisenbergMetric::new(g.clone())?;
    let mut rs = rng::stream(seed, 0);
    let (mut low, mut high) = (1.0f64, 1.0f64);
    let mut used = 0;
    for _ in 0..samples {
        let a = sample_gauge_ball(g, &mut rs);
        let b = sample_gauge_ball(g, &mut rs);
        let dg = g.gauge_distance(&a, &b)?;
        let dc = metric.distance(&a, &b)?;
        if dg == 0.0 || dc == 0.0 {
            continue;
        }
        low = low.max(dg / dc);
        high = high.max(dc / dg);
        used += 1;
    }
    if used == 0 {
        return Ok(SandwichEstimate { kappa_low: 1.0, kappa_high: 1.0, kappa: 1.0, samples: 0 });
    }
    Ok(SandwichEstimate { kappa_low: low, kappa_high: high, kappa: low.max(high), samples: used })
}

// ---------------------------------------------------------------------------
// Cost matrices

/// Row-major matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CostMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["i", "j", "value"])?;
        for i in 0..self.rows {
            for j in 0..self.cols {
                w.write_record([i.to_string(), j.to_string(), format!("{:e}", self.get(i, j))])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        for rec in r.deserialize() {
            let (i, j, v): (usize, usize, f64) = rec?;
            entries.push((i, j, v));
        }
        let rows = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
        let cols = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        if entries.len() != rows * cols {
            return Err(Error::Input(format!("cost CSV has {} entries for a {rows}x{cols} matrix", entries.len())));
        }
        let mut values = vec![0.0; rows * cols];
        for (i, j, v) in entries {
            values[i * cols + j] = v;
        }
        Ok(Self { rows, cols, values })
    }
}

/// Pairwise distances `d(x_i, y_j)` (or their squares). Entries are
/// evaluated in parallel; entry `(i, j)` uses random stream `(seed, i, j)`.
pub fn cost_matrix(
    metric: &dyn CcMetric,
    xs: &[GroupElement],
    ys: &[GroupElement],
    squared: bool,
    seed: u64,
) -> Result<CostMatrix> {
    let rows: Vec<Vec<f64>> = xs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            ys.iter()
                .enumerate()
                .map(|(j, y)| {
                    let d = metric.distance_with_stream(x, y, rng::mix(rng::mix(seed, i as u64), j as u64))?;
                    Ok(if squared { d * d } else { d })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(CostMatrix { rows: xs.len(), cols: ys.len(), values: rows.concat() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h1() -> CarnotStructure {
        CarnotStructure::heisenberg(1)
    }

    fn pt(x: f64, y: f64, z: f64) -> GroupElement {
        GroupElement::new(vec![x, y], vec![z])
    }

    #[test]
    fn closed_form_examples() {
        let g = h1();
        let o = g.identity();
        assert!((cc_distance_heisenberg(&g, &o, &pt(1.0, 0.0, 0.0)).unwrap() - 1.0).abs() < 1e-15);
        let v = cc_distance_heisenberg(&g, &o, &pt(0.0, 0.0, 1.0)).unwrap();
        assert!((v - 2.0 * PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_is_continuous_toward_vertical_axis() {
        let v = heisenberg_norm(0.0, 1.0).unwrap();
        for r in [1e-3, 1e-6, 1e-9, 1e-11] {
            let d = heisenberg_norm(r, 1.0).unwrap();
            assert!((d - v).abs() < 10.0 * r + 1e-9, "r={r}: {d} vs {v}");
        }
        let tiny = heisenberg_norm(1.0, 1e-14).unwrap();
        assert!((tiny - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_heisenberg_rejected() {
        let g = CarnotStructure::free(3);
        let o = g.identity();
        assert!(matches!(cc_distance_heisenberg(&g, &o, &o), Err(Error::UnsupportedStructure(_))));
        assert!(matches!(equivalence_sandwich_probe(&g, 3, 0), Err(Error::UnsupportedStructure(_))));
    }

    #[test]
    fn geodesic_points_hit_target_with_right_length() {
        let g = CarnotStructure::heisenberg(2);
        let a = GroupElement::new(vec![0.3, -0.2, 0.1, 0.4], vec![0.2]);
        let b = GroupElement::new(vec![-0.5, 0.6, 0.2, -0.1], vec![-0.7]);
        let pts = heisenberg_geodesic(&g, &a, &b, 2000).unwrap();
        let end = pts.last().unwrap();
        for (p, q) in end.coords().iter().zip(b.coords()) {
            assert!((p - q).abs() < 1e-12, "{end:?} vs {b:?}");
        }
        // horizontal length of the sampled curve approximates the distance
        let len: f64 = pts.windows(2).map(|w| norm(&g.increment(&w[0], &w[1]).unwrap().x1)).sum();
        let d = cc_distance_heisenberg(&g, &a, &b).unwrap();
        assert!((len - d).abs() < 1e-5 * d, "{len} vs {d}");
    }

    #[test]
    fn vertical_geodesic_closes_up() {
        let g = h1();
        let o = g.identity();
        let pts = heisenberg_geodesic(&g, &o, &pt(0.0, 0.0, -2.0), 64).unwrap();
        let end = pts.last().unwrap();
        assert!(end.x1.iter().all(|v| v.abs() < 1e-12));
        assert!((end.x2[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_examples() {
        let g = h1();
        let o = g.identity();
        let opts = GeodesicSolverOptions { segments: 128, restarts: 4, ..Default::default() };
        let d = cc_distance_oracle(&g, &o, &pt(1.0, 0.0, 0.0), &opts).unwrap();
        assert!((d - 1.0).abs() < 0.01, "{d}");
        let sol = geodesic_oracle(&g, &o, &pt(0.0, 0.0, 1.0), &opts).unwrap();
        assert!((sol.length - 3.5449).abs() < 0.04, "{}", sol.length);
        assert!(sol.residual < opts.tolerance);
        let end = sol.vertices.last().unwrap();
        assert!((end.x2[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn oracle_handles_free_group() {
        let g = CarnotStructure::free(3);
        let o = g.identity();
        let target = GroupElement::new(vec![0.2, 0.0, -0.1], vec![0.3, -0.2, 0.1]);
        let opts = GeodesicSolverOptions { segments: 64, restarts: 4, ..Default::default() };
        let d = cc_distance_oracle(&g, &o, &target, &opts).unwrap();
        assert!(d.is_finite() && d > g.gauge_norm(&target) * 0.2);
    }

    #[test]
    fn options_validation() {
        let bad = GeodesicSolverOptions { segments: 8, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GeodesicSolverOptions { restarts: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(GeodesicSolverOptions::default().validate().is_ok());
    }

    #[test]
    fn sandwich_conventions() {
        let g = h1();
        let e = equivalence_sandwich_probe(&g, 0, 1).unwrap();
        assert_eq!((e.kappa_low, e.kappa_high), (1.0, 1.0));
        let a = pt(0.1, 0.2, 0.0);
        let b = pt(0.4, -0.3, 0.0);
        let m = HeisenbergMetric::h1();
        // along a horizontal line the increment is purely horizontal
        let c = g.increment(&a, &b).unwrap();
        let horiz = GroupElement::new(c.x1.clone(), vec![0.0]);
        let ratio = m.norm(&horiz).unwrap() / g.gauge_norm(&horiz);
        assert_eq!(ratio, 1.0);
        let r1 = equivalence_sandwich_probe(&g, 500, 9).unwrap();
        let r2 = equivalence_sandwich_probe(&g, 500, 9).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.kappa.is_finite() && r1.kappa >= 1.0);
    }

    #[test]
    fn cost_matrix_csv_roundtrip() {
        let g = h1();
        let m = HeisenbergMetric::new(g).unwrap();
        let xs = vec![pt(0.0, 0.0, 0.0), pt(1.0, 0.0, 0.0)];
        let ys = vec![pt(0.0, 1.0, 0.0), pt(0.0, 0.0, 1.0), pt(1.0, 1.0, 1.0)];
        let c = cost_matrix(&m, &xs, &ys, true, 3).unwrap();
        assert_eq!((c.rows, c.cols), (2, 3));
        assert!((c.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((c.get(0, 1) - 4.0 * PI).abs() < 1e-12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        c.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("i,j,value\n"));
        assert_eq!(CostMatrix::read_csv(&path).unwrap(), c);
    }

    #[test]
    fn dense_solver() {
        let mut a = vec![0.0, 2.0, 1.0, 1.0];
        let x = solve_dense(&mut a, vec![4.0, 3.0], 2).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }
}
