//! Discretized costs along shifted Brownian paths: the blow-up of
//! `C_n(B, T_h B)`, its recovery by a vertical correction, and the
//! resulting transport-cost table.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::Serialize;

use crate::cc_metric::CcMetric;
use crate::error::{Error, Result};
use crate::group::{CarnotStructure, GroupElement};
use crate::path::{cc_cost_n, cc_cost_n_squared, lift, shift, uniform_distance, DyadicGroupPath, HorizontalPath};
use crate::sampling::brownian_driver;
use crate::stats::{self, mean_estimate, LinearFit, MeanEstimate};

/// Levels kept between the evaluation level `n` and the simulation level.
pub const RESOLUTION_MARGIN: u32 = 2;

#[derive(Debug, Clone)]
pub struct RecoveryOutput {
    /// `ω̃ⁿ = T_h ω · (ϑⁿ)⁻¹`.
    pub corrected_path: DyadicGroupPath,
    /// `ϑⁿ` at every grid point of `ω`.
    pub correction: Vec<Vec<f64>>,
    /// `C_n(ω, ω̃ⁿ)`.
    pub cost_at_n: f64,
    /// `d_∞(ω̃ⁿ, T_h ω)`.
    pub uniform_gap: f64,
    /// Largest deviation in `d(ω_{s,t}, ω̃ⁿ_{s,t}) = d(0, Ψ(h)_{s,t})` over
    /// the level-`n` blocks.
    pub identity_error: f64,
}

/// Recovery sequence for the shift `T_h ω`: on each level-`n` block the
/// non-commutativity error accumulated since the block start is removed
/// from the vertical layer.
pub fn recovery_path(omega: &DyadicGroupPath, h: &HorizontalPath, n: u32, metric: &dyn CcMetric) -> Result<RecoveryOutput> {
    if n + RESOLUTION_MARGIN > omega.level() {
        return Err(Error::Domain(format!(
            "recovery level {n} needs a path of level at least {}, got {}",
            n + RESOLUTION_MARGIN,
            omega.level()
        )));
    }
    let g = omega.structure();
    let (d1, d2) = (g.d1(), g.d2());
    let shifted = shift(omega, h)?;
    let hr = h.at_level(omega.level());
    let stride = 1usize << (omega.level() - n);

    let mut correction = vec![vec![0.0; d2]; omega.len()];
    let mut theta = vec![0.0; d2];
    let mut mid = vec![0.0; d1];
    let mut dx = vec![0.0; d1];
    for block in 0..(1usize << n) {
        let s = block * stride;
        let base = correction[s].clone();
        theta.iter_mut().for_each(|v| *v = 0.0);
        let hs = hr.point(s).to_vec();
        for t in (s + 1)..=(s + stride) {
            let (ha, hb) = (hr.point(t - 1), hr.point(t));
            let (xa, xb) = (omega.x1(t - 1), omega.x1(t));
            for i in 0..d1 {
                mid[i] = 0.5 * (ha[i] + hb[i]) - hs[i];
                dx[i] = xb[i] - xa[i];
            }
            g.bracket_add(&mid, &dx, 1.0, &mut theta);
            correction[t] = base.iter().zip(&theta).map(|(a, b)| a + b).collect();
        }
    }

    let mut points = shifted.points();
    for (p, c) in points.iter_mut().zip(&correction) {
        for (z, v) in p.x2.iter_mut().zip(c) {
            *z -= v;
        }
    }
    let corrected_path = DyadicGroupPath::from_points(g, omega.level(), &points)?;

    let lifted_h = lift(g, &hr, omega.level())?;
    let mut identity_error: f64 = 0.0;
    for block in 0..(1usize << n) {
        let (s, t) = (block * stride, (block + 1) * stride);
        let lhs = metric.distance_with_stream(&omega.increment(s, t), &corrected_path.increment(s, t), block as u64)?;
        let rhs = metric.norm_with_stream(&lifted_h.increment(s, t), block as u64)?;
        identity_error = identity_error.max((lhs - rhs).abs());
    }
    if identity_error > 1e-9 {
        return Err(Error::Numerical(format!("recovery increment identity off by {identity_error:e}")));
    }

    Ok(RecoveryOutput {
        cost_at_n: cc_cost_n(omega, &corrected_path, n, metric)?,
        uniform_gap: uniform_distance(&corrected_path, &shifted, metric)?,
        corrected_path,
        correction,
        identity_error,
    })
}

/// Perturbation applied to each Brownian path in [`blowup_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    /// `T_h B`.
    Shift(HorizontalPath),
    /// `B_t · (0, t·θ₀)`.
    Vertical(Vec<f64>),
}

impl Perturbation {
    fn apply(&self, x: &DyadicGroupPath) -> Result<DyadicGroupPath> {
        match self {
            Self::Shift(h) => shift(x, h),
            Self::Vertical(theta) => x.add_vertical(|t| theta.iter().map(|v| v * t).collect()),
        }
    }

    /// The horizontal part `‖h‖²_H` subtracted before the log-fit.
    pub fn horizontal_energy(&self) -> f64 {
        match self {
            Self::Shift(h) => h.cm_norm_sq(),
            Self::Vertical(_) => 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub n: u32,
    pub mean_cost_sq: MeanEstimate,
    /// `mean C_n² − ‖h‖²_H`.
    pub excess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlowupResult {
    pub levels: Vec<LevelSummary>,
    /// Fit of `log₂(mean C_n² − ‖h‖²_H)` against `n`.
    pub fit: LinearFit,
    /// 95% percentile-bootstrap interval for the slope over trials.
    pub slope_ci: (f64, f64),
    pub trials: usize,
    pub simulation_level: u32,
    /// `costs[trial][level index]` holds `C_n²`.
    #[serde(skip)]
    pub costs: Vec<Vec<f64>>,
}

const BOOTSTRAP_FITS: usize = 200;

fn check_levels(levels: &RangeInclusive<u32>) -> Result<Vec<u32>> {
    let v: Vec<u32> = levels.clone().collect();
    if v.len() < 3 {
        return Err(Error::Domain(format!("slope fit needs at least 3 levels, got {}", v.len())));
    }
    Ok(v)
}

fn fit_excess(levels: &[u32], costs: &[Vec<f64>], idx: &[usize], offset: f64) -> Option<LinearFit> {
    let mut x = Vec::with_capacity(levels.len());
    let mut y = Vec::with_capacity(levels.len());
    for (li, &n) in levels.iter().enumerate() {
        let mean = idx.iter().map(|&t| costs[t][li]).sum::<f64>() / idx.len() as f64;
        let excess = mean - offset;
        if !(excess > 0.0) {
            return None;
        }
        x.push(n as f64);
        y.push(excess.log2());
    }
    Some(stats::linear_fit(&x, &y))
}

/// Slope of `log₂(mean cost − offset)` against `n`, with a 95%
/// percentile-bootstrap interval over trials. `costs[trial][level index]`.
pub fn growth_exponent(levels: &[u32], costs: &[Vec<f64>], offset: f64, seed: u64) -> Result<(LinearFit, (f64, f64))> {
    if levels.len() < 3 {
        return Err(Error::Domain(format!("slope fit needs at least 3 levels, got {}", levels.len())));
    }
    if costs.len() < 2 || costs.iter().any(|c| c.len() != levels.len()) {
        return Err(Error::Domain("growth fit needs at least 2 complete trials".into()));
    }
    let all: Vec<usize> = (0..costs.len()).collect();
    let fit = fit_excess(levels, costs, &all, offset)
        .ok_or_else(|| Error::Numerical("mean cost does not exceed the offset at every level".into()))?;
    let boot = stats::bootstrap(costs.len(), BOOTSTRAP_FITS, seed ^ 0x5eed, |idx| {
        fit_excess(levels, costs, idx, offset).map_or(f64::NAN, |f| f.slope)
    });
    let finite: Vec<f64> = boot.into_iter().filter(|v| v.is_finite()).collect();
    let ci = if finite.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (stats::quantile(&finite, 0.025), stats::quantile(&finite, 0.975))
    };
    Ok((fit, ci))
}

/// Monte Carlo mean of `C_n²(B, P(B))` per level and the growth exponent
/// of its excess over `‖h‖²_H`. Brownian paths are simulated at level
/// `max(levels) + 2`; trial `i` uses stream `(seed, i)`.
pub fn blowup_experiment(
    g: &CarnotStructure,
    perturbation: &Perturbation,
    levels: RangeInclusive<u32>,
    trials: usize,
    seed: u64,
    metric: &dyn CcMetric,
) -> Result<BlowupResult> {
    let lv = check_levels(&levels)?;
    if trials < 2 {
        return Err(Error::Domain("blow-up experiment needs at least 2 trials".into()));
    }
    let sim = lv[lv.len() - 1] + RESOLUTION_MARGIN;
    let costs: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let x = lift(g, &brownian_driver(g.d1(), sim, seed, i as u64), sim)?;
            let y = perturbation.apply(&x)?;
            lv.iter().map(|&n| cc_cost_n_squared(&x, &y, n, metric)).collect()
        })
        .collect::<Result<_>>()?;

    let offset = perturbation.horizontal_energy();
    let summaries: Vec<LevelSummary> = lv
        .iter()
        .enumerate()
        .map(|(li, &n)| {
            let m = mean_estimate(&costs.iter().map(|c| c[li]).collect::<Vec<_>>());
            LevelSummary { n, excess: m.mean - offset, mean_cost_sq: m }
        })
        .collect();
    let (fit, slope_ci) = growth_exponent(&lv, &costs, offset, seed)?;
    Ok(BlowupResult { levels: summaries, fit, slope_ci, trials, simulation_level: sim, costs })
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryRow {
    pub n: u32,
    pub trial: usize,
    pub naive: f64,
    pub recovery: f64,
    pub uniform_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryLevel {
    pub n: u32,
    pub mean_naive_sq: MeanEstimate,
    pub mean_recovery_sq: MeanEstimate,
    pub max_recovery: f64,
    pub median_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryTable {
    pub limit: f64,
    pub levels: Vec<RecoveryLevel>,
    /// Ratios of consecutive median gaps.
    pub gap_ratios: Vec<f64>,
    #[serde(skip)]
    pub rows: Vec<RecoveryRow>,
}

/// Costs of the naive coupling `(B, T_h B)` and of the recovery coupling
/// `(B, ω̃ⁿ)` per level, against the limit `‖h‖²_H`.
pub fn transport_recovery_experiment(
    g: &CarnotStructure,
    h: &HorizontalPath,
    levels: RangeInclusive<u32>,
    trials: usize,
    seed: u64,
    metric: &dyn CcMetric,
) -> Result<RecoveryTable> {
    let lv: Vec<u32> = levels.collect();
    if lv.is_empty() || trials == 0 {
        return Err(Error::Domain("recovery experiment needs levels and trials".into()));
    }
    let sim = lv[lv.len() - 1] + RESOLUTION_MARGIN;
    let per_trial: Vec<Vec<RecoveryRow>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let x = lift(g, &brownian_driver(g.d1(), sim, seed, i as u64), sim)?;
            let y = shift(&x, h)?;
            lv.iter()
                .map(|&n| {
                    let r = recovery_path(&x, h, n, metric)?;
                    Ok(RecoveryRow { n, trial: i, naive: cc_cost_n(&x, &y, n, metric)?, recovery: r.cost_at_n, uniform_gap: r.uniform_gap })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<RecoveryRow> = lv
        .iter()
        .enumerate()
        .flat_map(|(li, _)| per_trial.iter().map(move |t| t[li].clone()))
        .collect();
    let levels: Vec<RecoveryLevel> = lv
        .iter()
        .map(|&n| {
            let at: Vec<&RecoveryRow> = rows.iter().filter(|r| r.n == n).collect();
            let naive: Vec<f64> = at.iter().map(|r| r.naive * r.naive).collect();
            let rec: Vec<f64> = at.iter().map(|r| r.recovery * r.recovery).collect();
            let gaps: Vec<f64> = at.iter().map(|r| r.uniform_gap).collect();
            RecoveryLevel {
                n,
                mean_naive_sq: mean_estimate(&naive),
                mean_recovery_sq: mean_estimate(&rec),
                max_recovery: at.iter().map(|r| r.recovery).fold(0.0, f64::max),
                median_gap: stats::median(&gaps),
            }
        })
        .collect();
    let gap_ratios = levels.windows(2).map(|w| w[1].median_gap / w[0].median_gap).collect();
    Ok(RecoveryTable { limit: h.cm_norm_sq(), levels, gap_ratios, rows })
}

/// `(0, θ)` as a group element, for vertical-only comparisons.
pub fn vertical_element(g: &CarnotStructure, theta: &[f64]) -> GroupElement {
    GroupElement::new(vec![0.0; g.d1()], theta.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cc_metric::HeisenbergMetric;
    use crate::path::noncomm_error;

    fn h1() -> CarnotStructure {
        CarnotStructure::heisenberg(1)
    }

    #[test]
    fn zero_path_recovers_lift_of_h() {
        let g = h1();
        let m = HeisenbergMetric::h1();
        let h = HorizontalPath::from_fn(3, 2, |t| vec![t, (3.0 * t).sin()]).unwrap();
        let zero = DyadicGroupPath::constant(&g, 6);
        let r = recovery_path(&zero, &h, 4, &m).unwrap();
        assert!(r.correction.iter().all(|c| c[0] == 0.0));
        let lifted = lift(&g, &h, 6).unwrap();
        for k in 0..zero.len() {
            for (a, b) in r.corrected_path.coords(k).iter().zip(lifted.coords(k)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        assert!(r.uniform_gap < 1e-6);
        assert!(r.cost_at_n <= h.cm_norm() + 1e-9);
    }

    #[test]
    fn correction_matches_noncomm_error_and_is_vertical() {
        let g = h1();
        let m = HeisenbergMetric::h1();
        let x = lift(&g, &brownian_driver(2, 8, 4, 0), 8).unwrap();
        let h = HorizontalPath::from_fn(2, 2, |t| vec![t, t * t]).unwrap();
        let n = 3;
        let r = recovery_path(&x, &h, n, &m).unwrap();
        let stride = 1 << (8 - n);
        for block in 0..(1 << n) {
            let s = block * stride;
            for t in [s + 1, s + stride / 2, s + stride] {
                let th = noncomm_error(&x, &h, s, t).unwrap();
                let expect = r.correction[s][0] + th[0];
                assert!((r.correction[t][0] - expect).abs() < 1e-14);
            }
        }
        let shifted = shift(&x, &h).unwrap();
        for k in 0..x.len() {
            assert_eq!(r.corrected_path.x1(k), shifted.x1(k));
        }
        assert!(r.identity_error <= 1e-9);
        assert!(r.cost_at_n <= h.cm_norm() + 1e-9);
    }

    #[test]
    fn straight_shift_costs_exactly_its_norm() {
        let g = h1();
        let m = HeisenbergMetric::h1();
        let x = lift(&g, &brownian_driver(2, 9, 5, 0), 9).unwrap();
        let h = HorizontalPath::linear(0, &[1.0, 0.0]);
        for n in 2..=7 {
            let r = recovery_path(&x, &h, n, &m).unwrap();
            assert!((r.cost_at_n - 1.0).abs() < 1e-9, "n={n}: {}", r.cost_at_n);
        }
        assert!(recovery_path(&x, &h, 8, &m).is_err());
    }

    #[test]
    fn vertical_perturbation_is_exactly_linear_in_two_to_n() {
        let g = h1();
        let m = HeisenbergMetric::h1();
        let res = blowup_experiment(&g, &Perturbation::Vertical(vec![0.5]), 2..=6, 3, 1, &m).unwrap();
        assert!((res.fit.slope - 1.0).abs() < 1e-9);
        for l in &res.levels {
            let expected = 4.0 * std::f64::consts::PI * 0.5 * (1u64 << l.n) as f64;
            assert!((l.mean_cost_sq.mean - expected).abs() < 1e-9 * expected);
        }
        assert!(blowup_experiment(&g, &Perturbation::Vertical(vec![0.5]), 2..=3, 3, 1, &m).is_err());
    }
}
