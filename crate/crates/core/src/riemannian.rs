//! Riemannian approximations `M_ε` of the first Heisenberg group: the frame
//! `(X, Y, εZ)` is declared orthonormal, giving distances `d_ε ↑ d_cc` as
//! `ε → 0`.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::Serialize;

use crate::cc_metric::{
    cc_distance_heisenberg, heisenberg_geodesic, sample_gauge_ball, CcMetric, GeodesicSolverOptions, HeisenbergMetric,
};
use crate::error::{Error, Result};
use crate::gamma::{growth_exponent, RESOLUTION_MARGIN};
use crate::group::{dilate_unchecked, CarnotStructure, GroupElement};
use crate::optim::{self, LbfgsOptions};
use crate::path::{cc_cost_n, lift, DyadicGroupPath, HorizontalPath};
use crate::rng;
use crate::sampling::brownian_driver;
use crate::stats::{mean_estimate, LinearFit, MeanEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonSpace {
    epsilon: f64,
}

impl EpsilonSpace {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Solver defaults for [`d_eps`]: 128 segments, 4 restarts.
    pub fn default_options() -> GeodesicSolverOptions {
        GeodesicSolverOptions { segments: 128, restarts: 4, ..GeodesicSolverOptions::default() }
    }
}

/// Squared length of the linear segment `p → q`. The twisted vertical
/// velocity `ż − ½(xẏ − ẋy)` is constant along a segment, so this is exact.
fn segment_sq(inv_eps2: f64, p: &[f64], q: &[f64]) -> (f64, f64) {
    let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
    let r = q[2] - p[2] - 0.5 * (p[0] * q[1] - q[0] * p[1]);
    (dx * dx + dy * dy + inv_eps2 * r * r, r)
}

/// Length of the polygon through `points` (coordinates `(x, y, z)`).
pub fn riemann_length(space: &EpsilonSpace, points: &[[f64; 3]]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Domain("a path needs at least one segment".into()));
    }
    let inv = space.epsilon.powi(-2);
    Ok(points.windows(2).map(|w| segment_sq(inv, &w[0], &w[1]).0.sqrt()).sum())
}

fn polygon_length(inv_eps2: f64, pts: &[f64]) -> f64 {
    pts.chunks(3).collect::<Vec<_>>().windows(2).map(|w| segment_sq(inv_eps2, w[0], w[1]).0.sqrt()).sum()
}

/// `d_ε(a, b)`, minimizing the discrete path energy over `K`-segment
/// polygons with fixed endpoints.
pub fn d_eps(space: &EpsilonSpace, a: &GroupElement, b: &GroupElement, opts: &GeodesicSolverOptions) -> Result<f64> {
    EpsMetric::new(*space, *opts)?.distance(a, b)
}

/// [`CcMetric`] implementation of `d_ε` (left-invariant on `H^1`).
#[derive(Debug, Clone)]
pub struct EpsMetric {
    space: EpsilonSpace,
    opts: GeodesicSolverOptions,
    g: CarnotStructure,
}

impl EpsMetric {
    pub fn new(space: EpsilonSpace, opts: GeodesicSolverOptions) -> Result<Self> {
        opts.validate()?;
        Ok(Self { space, opts, g: CarnotStructure::heisenberg(1) })
    }
}

impl CcMetric for EpsMetric {
    fn structure(&self) -> &CarnotStructure {
        &self.g
    }

    fn norm_with_stream(&self, c: &GroupElement, stream: u64) -> Result<f64> {
        self.g.check_element(c)?;
        // d_ε(0, δ_s x) = s · d_{ε/s}(0, x): solve at unit gauge scale
        let s = self.g.gauge_norm(c);
        if s == 0.0 {
            return Ok(0.0);
        }
        let unit = dilate_unchecked(1.0 / s, c);
        let eps = self.space.epsilon / s;
        Ok(s * minimize_polygon(&self.g, eps, &unit, &self.opts, stream)?)
    }
}

fn minimize_polygon(g: &CarnotStructure, eps: f64, target: &GroupElement, opts: &GeodesicSolverOptions, stream: u64) -> Result<f64> {
    let k = opts.segments;
    let inv = eps.powi(-2);
    let end = [target.x1[0], target.x1[1], target.x2[0]];

    let straight: Vec<f64> = (0..=k).flat_map(|j| end.map(|c| c * j as f64 / k as f64)).collect();
    let geodesic: Vec<f64> = heisenberg_geodesic(g, &g.identity(), target, k)?
        .iter()
        .flat_map(|p| [p.x1[0], p.x1[1], p.x2[0]])
        .collect();

    let mut best = polygon_length(inv, &straight).min(polygon_length(inv, &geodesic));
    let lbfgs = LbfgsOptions { max_iterations: opts.max_iterations, gradient_tolerance: 1e-12, ..LbfgsOptions::default() };
    let kf = k as f64;
    for restart in 0..opts.restarts {
        let mut start = if restart % 2 == 0 { geodesic.clone() } else { straight.clone() };
        if restart >= 2 {
            let mut rs = rng::stream(opts.seed, rng::mix(stream, restart as u64));
            let amp: Vec<f64> = (0..3).map(|_| 0.1 * rng::normal(&mut rs)).collect();
            for j in 1..k {
                let bump = (std::f64::consts::PI * j as f64 / kf).sin();
                for c in 0..3 {
                    start[3 * j + c] += amp[c] * bump;
                }
            }
        }
        let x0 = start[3..3 * k].to_vec();
        let energy = |x: &[f64], grad: &mut [f64]| {
            grad.iter_mut().for_each(|v| *v = 0.0);
            let vertex = |j: usize| -> [f64; 3] {
                if j == 0 {
                    [0.0; 3]
                } else if j == k {
                    end
                } else {
                    [x[3 * (j - 1)], x[3 * (j - 1) + 1], x[3 * (j - 1) + 2]]
                }
            };
            let mut total = 0.0;
            for j in 1..=k {
                let (p, q) = (vertex(j - 1), vertex(j));
                let (l2, r) = segment_sq(inv, &p, &q);
                total += kf * l2;
                let rr = kf * 2.0 * inv * r;
                let (dx, dy) = (2.0 * kf * (q[0] - p[0]), 2.0 * kf * (q[1] - p[1]));
                if j > 1 {
                    let o = 3 * (j - 2);
                    grad[o] += -dx - 0.5 * rr * q[1];
                    grad[o + 1] += -dy + 0.5 * rr * q[0];
                    grad[o + 2] += -rr;
                }
                if j < k {
                    let o = 3 * (j - 1);
                    grad[o] += dx + 0.5 * rr * p[1];
                    grad[o + 1] += dy - 0.5 * rr * p[0];
                    grad[o + 2] += rr;
                }
            }
            total
        };
        let result = optim::minimize(energy, x0, &lbfgs);
        let mut pts = Vec::with_capacity(3 * (k + 1));
        pts.extend([0.0; 3]);
        pts.extend_from_slice(&result.x);
        pts.extend(end);
        let len = polygon_length(inv, &pts);
        if len.is_finite() {
            best = best.min(len);
        }
    }
    if !best.is_finite() {
        return Err(Error::Numerical(format!("d_eps minimization diverged for target {target:?}, eps {eps}")));
    }
    Ok(best)
}

/// `Ψ^ε(ω) = (0, εω³) · Ψ(ω¹, ω²)` for a three-component driver.
pub fn lift_eps(space: &EpsilonSpace, omega: &HorizontalPath, out_level: u32) -> Result<DyadicGroupPath> {
    let (planar, vertical) = split_driver(omega)?;
    let base = lift(&CarnotStructure::heisenberg(1), &planar, out_level)?;
    let v = vertical.at_level(out_level);
    add_scaled_vertical(&base, &v, space.epsilon)
}

/// `T^ε_h X = (0, εh³) · T_{(h¹, h²)} X`.
pub fn shift_eps(space: &EpsilonSpace, x: &DyadicGroupPath, h: &HorizontalPath) -> Result<DyadicGroupPath> {
    let (planar, vertical) = split_driver(h)?;
    let shifted = crate::path::shift(x, &planar)?;
    let v = vertical.at_level(x.level());
    add_scaled_vertical(&shifted, &v, space.epsilon)
}

fn split_driver(omega: &HorizontalPath) -> Result<(HorizontalPath, HorizontalPath)> {
    if omega.d1() != 3 {
        return Err(Error::Dimension(format!("epsilon driver needs 3 components, got {}", omega.d1())));
    }
    let n = omega.len();
    let mut planar = Vec::with_capacity(2 * n);
    let mut vertical = Vec::with_capacity(n);
    for k in 0..n {
        let p = omega.point(k);
        planar.extend_from_slice(&p[..2]);
        vertical.push(p[2]);
    }
    Ok((HorizontalPath::new(omega.level(), 2, planar)?, HorizontalPath::new(omega.level(), 1, vertical)?))
}

fn add_scaled_vertical(x: &DyadicGroupPath, v: &HorizontalPath, eps: f64) -> Result<DyadicGroupPath> {
    let mut points = x.points();
    for (k, p) in points.iter_mut().enumerate() {
        p.x2[0] += eps * v.point(k)[0];
    }
    DyadicGroupPath::from_points(x.structure(), x.level(), &points)
}

/// `C^ε_n(X, Y)`.
pub fn eps_cost_n(x: &DyadicGroupPath, y: &DyadicGroupPath, n: u32, metric: &EpsMetric) -> Result<f64> {
    cc_cost_n(x, y, n, metric)
}

#[derive(Debug, Clone, Serialize)]
pub struct SandwichRow {
    pub pair: usize,
    pub epsilon: f64,
    pub d_eps: f64,
    pub d_cc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SandwichResult {
    pub epsilons: Vec<f64>,
    /// Smallest `c` with `d_cc ≤ d_ε + cε` on every sampled pair.
    pub fitted_c: f64,
    /// Largest `d_ε − d_cc` (positive values are solver excess).
    pub max_excess: f64,
    /// Largest `d_{ε₀} − d_{ε₁}` over `ε₁ < ε₀`.
    pub max_monotonicity_gap: f64,
    /// `d_ε(0, (0,0,1))` per ε.
    pub vertical: Vec<f64>,
    /// Largest `κ̄` with `κ̄(1 − ε) ≤ d_ε(0, (0,0,1))` on the grid.
    pub kappa_bar: f64,
    #[serde(skip)]
    pub rows: Vec<SandwichRow>,
}

/// `d_ε` against the closed-form `d_cc` on random pairs of the unit gauge
/// ball, for each ε in `epsilons`. Pair `k` is drawn from stream
/// `(seed, k)`.
pub fn sandwich_experiment(epsilons: &[f64], pairs: usize, seed: u64, opts: &GeodesicSolverOptions) -> Result<SandwichResult> {
    if epsilons.is_empty() || pairs == 0 {
        return Err(Error::Domain("sandwich experiment needs epsilons and pairs".into()));
    }
    let g = CarnotStructure::heisenberg(1);
    let metrics: Vec<EpsMetric> = epsilons
        .iter()
        .map(|&e| EpsMetric::new(EpsilonSpace::new(e)?, *opts))
        .collect::<Result<_>>()?;
    let per_pair: Vec<Vec<SandwichRow>> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut rs = rng::stream(seed, k as u64);
            let a = sample_gauge_ball(&g, &mut rs);
            let b = sample_gauge_ball(&g, &mut rs);
            let d_cc = cc_distance_heisenberg(&g, &a, &b)?;
            metrics
                .iter()
                .zip(epsilons)
                .map(|(m, &epsilon)| Ok(SandwichRow { pair: k, epsilon, d_eps: m.distance_with_stream(&a, &b, k as u64)?, d_cc }))
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<SandwichRow> = per_pair.concat();

    let fitted_c = rows.iter().map(|r| (r.d_cc - r.d_eps) / r.epsilon).fold(0.0, f64::max);
    let max_excess = rows.iter().map(|r| r.d_eps - r.d_cc).fold(f64::NEG_INFINITY, f64::max);
    let mut max_monotonicity_gap = f64::NEG_INFINITY;
    for pair in &per_pair {
        for p in pair {
            for q in pair.iter().filter(|q| q.epsilon < p.epsilon) {
                max_monotonicity_gap = max_monotonicity_gap.max(p.d_eps - q.d_eps);
            }
        }
    }
    let top = GroupElement::new(vec![0.0, 0.0], vec![1.0]);
    let vertical: Vec<f64> = metrics.iter().map(|m| m.norm(&top)).collect::<Result<_>>()?;
    let kappa_bar = vertical
        .iter()
        .zip(epsilons)
        .filter(|(_, e)| **e < 1.0)
        .map(|(d, e)| d / (1.0 - e))
        .fold(f64::INFINITY, f64::min);
    Ok(SandwichResult { epsilons: epsilons.to_vec(), fitted_c, max_excess, max_monotonicity_gap, vertical, kappa_bar, rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct ContrastRow {
    pub epsilon: f64,
    pub n: u32,
    pub seed: u64,
    pub c_eps_n: f64,
    pub c_subriemannian_n: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContrastResult {
    pub epsilon: f64,
    pub levels: Vec<u32>,
    pub mean_eps_sq: Vec<MeanEstimate>,
    pub mean_cc_sq: Vec<MeanEstimate>,
    /// Growth exponent of `mean (C^ε_n)² − ‖h‖²_H`.
    pub eps_fit: LinearFit,
    pub eps_ci: (f64, f64),
    /// Growth exponent of `mean C_n² − ‖h‖²_H` on the planar part.
    pub cc_fit: LinearFit,
    pub cc_ci: (f64, f64),
    /// `max_n mean C^ε_n`.
    pub sup_mean_eps: f64,
    #[serde(skip)]
    pub rows: Vec<ContrastRow>,
}

/// `C^ε_n(𝐁^ε, T^ε_h 𝐁^ε)` against `C_n(𝐁, T_h 𝐁)` on shared drivers:
/// trial `i` draws a three-component driver from stream `(seed, i)`, and
/// the sub-Riemannian run uses its planar part.
pub fn contrast_experiment(
    space: &EpsilonSpace,
    h: &HorizontalPath,
    levels: RangeInclusive<u32>,
    trials: usize,
    seed: u64,
    opts: &GeodesicSolverOptions,
) -> Result<ContrastResult> {
    let lv: Vec<u32> = levels.collect();
    if lv.is_empty() {
        return Err(Error::Domain("contrast experiment needs levels".into()));
    }
    let (h_planar, _) = split_driver(h)?;
    let sim = lv[lv.len() - 1] + RESOLUTION_MARGIN;
    let g = CarnotStructure::heisenberg(1);
    let eps_metric = EpsMetric::new(*space, *opts)?;
    let cc = HeisenbergMetric::h1();
    let costs: Vec<Vec<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let omega = brownian_driver(3, sim, seed, i as u64);
            let x_eps = lift_eps(space, &omega, sim)?;
            let y_eps = shift_eps(space, &x_eps, h)?;
            let (planar, _) = split_driver(&omega)?;
            let x = lift(&g, &planar, sim)?;
            let y = crate::path::shift(&x, &h_planar)?;
            lv.iter()
                .map(|&n| Ok((eps_cost_n(&x_eps, &y_eps, n, &eps_metric)?, cc_cost_n(&x, &y, n, &cc)?)))
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(lv.len() * trials);
    for (li, &n) in lv.iter().enumerate() {
        for (i, t) in costs.iter().enumerate() {
            rows.push(ContrastRow { epsilon: space.epsilon, n, seed: i as u64, c_eps_n: t[li].0, c_subriemannian_n: t[li].1 });
        }
    }
    let sq = |pick: fn(&(f64, f64)) -> f64| -> Vec<Vec<f64>> {
        costs.iter().map(|t| t.iter().map(|c| pick(c).powi(2)).collect()).collect()
    };
    let eps_sq = sq(|c| c.0);
    let cc_sq = sq(|c| c.1);
    let column = |m: &[Vec<f64>], li: usize| mean_estimate(&m.iter().map(|t| t[li]).collect::<Vec<_>>());
    let mean_eps_sq: Vec<MeanEstimate> = (0..lv.len()).map(|li| column(&eps_sq, li)).collect();
    let mean_cc_sq: Vec<MeanEstimate> = (0..lv.len()).map(|li| column(&cc_sq, li)).collect();
    let sup_mean_eps = (0..lv.len())
        .map(|li| costs.iter().map(|t| t[li].0).sum::<f64>() / trials as f64)
        .fold(0.0, f64::max);
    let energy = h.cm_norm_sq();
    let (eps_fit, eps_ci) = growth_exponent(&lv, &eps_sq, energy, seed)?;
    let (cc_fit, cc_ci) = growth_exponent(&lv, &cc_sq, h_planar.cm_norm_sq(), seed)?;
    Ok(ContrastResult {
        epsilon: space.epsilon,
        levels: lv,
        mean_eps_sq,
        mean_cc_sq,
        eps_fit,
        eps_ci,
        cc_fit,
        cc_ci,
        sup_mean_eps,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cc_metric::HeisenbergMetric;

    fn pt(x: f64, y: f64, z: f64) -> GroupElement {
        GroupElement::new(vec![x, y], vec![z])
    }

    #[test]
    fn length_examples() {
        let sp = EpsilonSpace::new(0.3).unwrap();
        let vertical = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.5], [0.0, 0.0, 2.0]];
        assert!((riemann_length(&sp, &vertical).unwrap() - 2.0 / 0.3).abs() < 1e-12);
        assert!((riemann_length(&sp, &[[0.0; 3], [1.0, 0.0, 0.0]]).unwrap() - 1.0).abs() < 1e-15);
        assert!(riemann_length(&sp, &[[0.0; 3]]).is_err());
        // lifted horizontal square: vertical residual cancels on every side
        let sq = lift(
            &CarnotStructure::heisenberg(1),
            &HorizontalPath::new(2, 2, vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap(),
            4,
        )
        .unwrap();
        let pts: Vec<[f64; 3]> = sq.points().iter().map(|p| [p.x1[0], p.x1[1], p.x2[0]]).collect();
        assert!((riemann_length(&sp, &pts).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn distance_examples() {
        let opts = GeodesicSolverOptions { segments: 64, restarts: 2, ..EpsilonSpace::default_options() };
        let o = pt(0.0, 0.0, 0.0);
        for eps in [0.5, 0.2, 0.1] {
            let sp = EpsilonSpace::new(eps).unwrap();
            assert!((d_eps(&sp, &o, &pt(1.0, 0.0, 0.0), &opts).unwrap() - 1.0).abs() < 0.01);
            let v = d_eps(&sp, &o, &pt(0.0, 0.0, 1.0), &opts).unwrap();
            assert!(v <= (1.0 / eps).min(2.0 * std::f64::consts::PI.sqrt()) + 1e-9, "eps {eps}: {v}");
        }
    }

    #[test]
    fn monotone_in_epsilon_and_below_cc() {
        let opts = GeodesicSolverOptions { segments: 64, restarts: 2, ..EpsilonSpace::default_options() };
        let a = pt(0.2, -0.1, 0.3);
        let b = pt(-0.3, 0.4, -0.2);
        let dcc = HeisenbergMetric::h1().distance(&a, &b).unwrap();
        let mut prev = 0.0;
        for eps in [1.0, 0.5, 0.2, 0.1, 0.05] {
            let d = d_eps(&EpsilonSpace::new(eps).unwrap(), &a, &b, &opts).unwrap();
            assert!(d <= dcc + 1e-6, "{d} vs {dcc}");
            assert!(d >= prev - 1e-6, "eps {eps}: {d} < {prev}");
            prev = d;
        }
        assert!(dcc - prev < 0.1 * dcc);
    }

    #[test]
    fn eps_lift_and_shift() {
        let sp = EpsilonSpace::new(0.2).unwrap();
        let g = CarnotStructure::heisenberg(1);
        let up = HorizontalPath::linear(3, &[0.0, 0.0, 1.0]);
        let l = lift_eps(&sp, &up, 3).unwrap();
        let end = l.point(8);
        assert_eq!(end.x1, vec![0.0, 0.0]);
        assert!((end.x2[0] - 0.2).abs() < 1e-15);

        let w = HorizontalPath::from_fn(3, 3, |t| vec![t.sin(), t * t, 0.0]).unwrap();
        let planar = HorizontalPath::from_fn(3, 2, |t| vec![t.sin(), t * t]).unwrap();
        assert_eq!(lift_eps(&sp, &w, 3).unwrap(), lift(&g, &planar, 3).unwrap());

        let h = HorizontalPath::from_fn(3, 3, |t| vec![t, -t, 0.5 * t * t]).unwrap();
        let zero = DyadicGroupPath::constant(&g, 3);
        let a = shift_eps(&sp, &zero, &h).unwrap();
        let b = lift_eps(&sp, &h, 3).unwrap();
        for k in 0..a.len() {
            for (p, q) in a.coords(k).iter().zip(b.coords(k)) {
                assert!((p - q).abs() < 1e-14);
            }
        }
        let lw = lift_eps(&sp, &w, 3).unwrap();
        let lhs = shift_eps(&sp, &lw, &h).unwrap();
        let rhs = lift_eps(&sp, &w.add(&h).unwrap(), 3).unwrap();
        for k in 0..lhs.len() {
            for (p, q) in lhs.coords(k).iter().zip(rhs.coords(k)) {
                assert!((p - q).abs() < 1e-13);
            }
        }
    }
}
