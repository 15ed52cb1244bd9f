//! Brownian motion on a step-2 group, Girsanov drifts, entropy estimates,
//! heat-kernel samples and a Monte Carlo probe of the heat-semigroup
//! gradient bound.
//!
//! Path `i` of a run with seed `s` draws its Gaussian increments from
//! stream `(s, i)` in step order, so every path is a pure function of
//! `(s, i, N)` and batches can be generated in any order or in parallel.
//! Brownian motion at level `N` is the exact lift of the piecewise-linear
//! interpolation of the level-`N` random walk.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::{CarnotStructure, GroupElement};
use crate::path::{lift, shift, DyadicGroupPath, HorizontalPath};
use crate::rng;
use crate::stats::{mean_estimate, MeanEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleConfig {
    pub level: u32,
    pub count: usize,
    pub seed: u64,
}

impl SampleConfig {
    pub fn new(level: u32, count: usize, seed: u64) -> Result<Self> {
        let cfg = Self { level, count, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.level == 0 || self.level > 24 {
            return Err(Error::Domain(format!("grid level must be in 1..=24, got {}", self.level)));
        }
        if self.count == 0 {
            return Err(Error::Domain("sample count must be positive".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        1 << self.level
    }
}

/// Gaussian increments of path `index`, variance `time / 2^level` per
/// coordinate, flattened step-major.
pub fn brownian_increments(d1: usize, level: u32, time: f64, seed: u64, index: u64) -> Vec<f64> {
    let steps = 1usize << level;
    let sd = (time / steps as f64).sqrt();
    let mut s = rng::stream(seed, index);
    (0..steps * d1).map(|_| sd * rng::normal(&mut s)).collect()
}

/// First level of Brownian path `index` on `[0, 1]`.
pub fn brownian_driver(d1: usize, level: u32, seed: u64, index: u64) -> HorizontalPath {
    let inc = brownian_increments(d1, level, 1.0, seed, index);
    let mut values = vec![0.0; d1];
    let mut acc = vec![0.0; d1];
    for step in inc.chunks(d1) {
        for (a, d) in acc.iter_mut().zip(step) {
            *a += d;
        }
        values.extend_from_slice(&acc);
    }
    HorizontalPath::new(level, d1, values).expect("finite Gaussian path")
}

/// Applies `f(index, driver)` to every Brownian driver of the run, in
/// parallel, returning results in index order.
pub fn map_brownian<T, F>(g: &CarnotStructure, cfg: &SampleConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &HorizontalPath) -> Result<T> + Sync,
{
    cfg.validate()?;
    let d1 = g.d1();
    (0..cfg.count)
        .into_par_iter()
        .map(|i| f(i, &brownian_driver(d1, cfg.level, cfg.seed, i as u64)))
        .collect()
}

/// Lifted Brownian paths `Ψ(B)` at level `cfg.level`.
pub fn sample_bm(g: &CarnotStructure, cfg: &SampleConfig) -> Result<Vec<DyadicGroupPath>> {
    map_brownian(g, cfg, |_, b| lift(g, b, cfg.level))
}

/// Names accepted by [`DriftSpec::named`].
pub const DRIFT_NAMES: [&str; 3] = ["zero", "line", "feedback"];

/// Adapted drift `b_t` defining the shifted law `Law(B + ∫b)`.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftSpec {
    Zero,
    /// `b = ḣ` for a Cameron–Martin path `h`.
    Deterministic(HorizontalPath),
    /// `b_t = A·B_t` evaluated on the driving Brownian motion at the left
    /// endpoint of each step; `A` row-major `d1 × d1`.
    LinearFeedback { matrix: Vec<f64> },
}

impl DriftSpec {
    /// `zero`, `line` (`h_t = (t, 0, …)`) or `feedback` (`b_t = −B_t`).
    pub fn named(name: &str, d1: usize) -> Result<Self> {
        match name {
            "zero" => Ok(Self::Zero),
            "line" => {
                let mut v = vec![0.0; d1];
                v[0] = 1.0;
                Ok(Self::Deterministic(HorizontalPath::linear(0, &v)))
            }
            "feedback" => {
                let mut m = vec![0.0; d1 * d1];
                (0..d1).for_each(|i| m[i * d1 + i] = -1.0);
                Ok(Self::LinearFeedback { matrix: m })
            }
            other => Err(Error::Input(format!("unknown drift {other:?}; expected zero, line or feedback"))),
        }
    }

    fn validate(&self, d1: usize, level: u32) -> Result<()> {
        match self {
            Self::Zero => Ok(()),
            Self::Deterministic(h) => {
                if h.d1() != d1 {
                    return Err(Error::Dimension(format!("drift path in R^{} for d1 = {d1}", h.d1())));
                }
                if h.level() > level {
                    return Err(Error::Domain(format!("drift path level {} exceeds grid level {level}", h.level())));
                }
                Ok(())
            }
            Self::LinearFeedback { matrix } => {
                if matrix.len() != d1 * d1 {
                    return Err(Error::Dimension(format!("feedback matrix has {} entries, expected {}", matrix.len(), d1 * d1)));
                }
                if matrix.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical("feedback matrix has non-finite entries".into()));
                }
                Ok(())
            }
        }
    }
}

/// One sample of the drifted law together with its Girsanov data.
#[derive(Debug, Clone)]
pub struct DriftedSample {
    /// `Ψ(B + ∫b)`.
    pub path: DyadicGroupPath,
    /// `∫b` on the grid.
    pub drift_path: HorizontalPath,
    /// `log dν/dμ` at the shifted path: `Σ b·ΔB + ½ Σ |b|² 2^{−N}`.
    pub log_density: f64,
    /// `½ Σ |b|² 2^{−N}`.
    pub half_energy: f64,
}

/// Drives `drift` with the Brownian first level `driver`.
pub fn apply_drift(g: &CarnotStructure, driver: &HorizontalPath, drift: &DriftSpec) -> Result<DriftedSample> {
    let level = driver.level();
    let d1 = g.d1();
    drift.validate(d1, level)?;
    let dt = 1.0 / (1u64 << level) as f64;
    let n = driver.len();

    let b_at = |k: usize, out: &mut [f64], h: Option<&HorizontalPath>| match drift {
        DriftSpec::Zero => out.iter_mut().for_each(|v| *v = 0.0),
        DriftSpec::Deterministic(_) => {
            let h = h.expect("refined drift path");
            for i in 0..d1 {
                out[i] = (h.point(k + 1)[i] - h.point(k)[i]) / dt;
            }
        }
        DriftSpec::LinearFeedback { matrix } => {
            let bk = driver.point(k);
            for i in 0..d1 {
                out[i] = (0..d1).map(|j| matrix[i * d1 + j] * bk[j]).sum();
            }
        }
    };

    let refined = match drift {
        DriftSpec::Deterministic(h) => Some(h.at_level(level)),
        _ => None,
    };
    let mut integral = vec![0.0; d1];
    let mut values = vec![0.0; d1];
    let mut b = vec![0.0; d1];
    let (mut dot, mut energy) = (0.0, 0.0);
    for k in 0..(n - 1) {
        b_at(k, &mut b, refined.as_ref());
        let (p, q) = (driver.point(k), driver.point(k + 1));
        for i in 0..d1 {
            if !b[i].is_finite() {
                return Err(Error::Numerical(format!("drift is non-finite at step {k}")));
            }
            dot += b[i] * (q[i] - p[i]);
            energy += b[i] * b[i] * dt;
            integral[i] += b[i] * dt;
        }
        values.extend_from_slice(&integral);
    }
    let drift_path = match refined {
        Some(h) => h,
        None => HorizontalPath::new(level, d1, values)?,
    };
    let path = match drift {
        DriftSpec::Zero => lift(g, driver, level)?,
        DriftSpec::Deterministic(_) => shift(&lift(g, driver, level)?, &drift_path)?,
        DriftSpec::LinearFeedback { .. } => lift(g, &driver.add(&drift_path)?, level)?,
    };
    Ok(DriftedSample { path, drift_path, log_density: dot + 0.5 * energy, half_energy: 0.5 * energy })
}

/// Monte Carlo estimate of `H(ν‖μ) = ½ E_ν ∫|b|² dt`.
pub fn entropy_estimate(g: &CarnotStructure, drift: &DriftSpec, cfg: &SampleConfig) -> Result<MeanEstimate> {
    let values = map_brownian(g, cfg, |_, b| Ok(apply_drift(g, b, drift)?.half_energy))?;
    Ok(mean_estimate(&values))
}

/// `E_μ exp(∫ḣ dω − ½∫|ḣ|²)`, which equals 1 for every Cameron–Martin `h`.
pub fn girsanov_martingale_check(g: &CarnotStructure, h: &HorizontalPath, cfg: &SampleConfig) -> Result<MeanEstimate> {
    if h.level() > cfg.level || h.d1() != g.d1() {
        return Err(Error::Domain("drift path incompatible with the sampling grid".into()));
    }
    let hr = h.at_level(cfg.level);
    let scale = (1u64 << cfg.level) as f64;
    let half = 0.5 * hr.cm_norm_sq();
    let values = map_brownian(g, cfg, |_, w| {
        let mut s = 0.0;
        for k in 0..(w.len() - 1) {
            for i in 0..g.d1() {
                let slope = (hr.point(k + 1)[i] - hr.point(k)[i]) * scale;
                s += slope * (w.point(k + 1)[i] - w.point(k)[i]);
            }
        }
        Ok((s - half).exp())
    })?;
    Ok(mean_estimate(&values))
}

/// Endpoint of the lifted random walk on `[0, time]`.
pub fn bm_endpoint(g: &CarnotStructure, level: u32, time: f64, seed: u64, index: u64) -> GroupElement {
    let d1 = g.d1();
    let inc = brownian_increments(d1, level, time, seed, index);
    let mut p = vec![0.0; d1];
    let mut z = vec![0.0; g.d2()];
    let mut q = vec![0.0; d1];
    for step in inc.chunks(d1) {
        for i in 0..d1 {
            q[i] = p[i] + step[i];
        }
        // same operation order as `lift`
        g.bracket_add(&p, &q, 0.5, &mut z);
        std::mem::swap(&mut p, &mut q);
    }
    GroupElement::new(p, z)
}

/// Samples of the heat kernel measure `μ_t = Law(B_t)`.
pub fn heat_kernel_samples(g: &CarnotStructure, t: f64, cfg: &SampleConfig) -> Result<Vec<GroupElement>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("heat kernel time must be positive, got {t}")));
    }
    cfg.validate()?;
    Ok((0..cfg.count)
        .into_par_iter()
        .map(|i| bm_endpoint(g, cfg.level, t, cfg.seed, i as u64))
        .collect())
}

pub fn write_endpoints_csv(g: &CarnotStructure, points: &[GroupElement], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["index".to_string()];
    header.extend((1..=g.d1()).map(|i| format!("x1_{i}")));
    header.extend((1..=g.d2()).map(|i| format!("x2_{i}")));
    w.write_record(&header)?;
    for (i, p) in points.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(p.coords().iter().map(|v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A moment of two samples that should agree in distribution.
#[derive(Debug, Clone, Serialize)]
pub struct MomentComparison {
    pub moment: String,
    pub left: MeanEstimate,
    pub right: MeanEstimate,
    /// Difference in units of the combined standard error.
    pub z_score: f64,
}

fn compare_moments(name: String, a: &[f64], b: &[f64]) -> MomentComparison {
    let left = mean_estimate(a);
    let right = mean_estimate(b);
    let se = (left.std_error.powi(2) + right.std_error.powi(2)).sqrt();
    let z_score = if se > 0.0 { (left.mean - right.mean) / se } else { 0.0 };
    MomentComparison { moment: name, left, right, z_score }
}

/// Compares first and second moments of `μ_{s²}` with `δ_s` applied to
/// samples of `μ_1` (independent streams `seed` and `seed + 1`).
pub fn scaling_moment_check(g: &CarnotStructure, s: f64, cfg: &SampleConfig) -> Result<Vec<MomentComparison>> {
    let direct = heat_kernel_samples(g, s * s, cfg)?;
    let other = SampleConfig { seed: cfg.seed.wrapping_add(1), ..*cfg };
    let dilated: Vec<GroupElement> = heat_kernel_samples(g, 1.0, &other)?
        .iter()
        .map(|p| g.dilate(s, p))
        .collect::<Result<_>>()?;
    let d1 = g.d1();
    let mut out = Vec::new();
    for c in 0..(d1 + g.d2()) {
        let label = if c < d1 { format!("x1_{}", c + 1) } else { format!("x2_{}", c - d1 + 1) };
        let pick = |v: &[GroupElement], f: &dyn Fn(f64) -> f64| v.iter().map(|p| f(p.coords()[c])).collect::<Vec<_>>();
        out.push(compare_moments(format!("E[{label}]"), &pick(&direct, &|x| x), &pick(&dilated, &|x| x)));
        out.push(compare_moments(format!("E[{label}^2]"), &pick(&direct, &|x| x * x), &pick(&dilated, &|x| x * x)));
    }
    Ok(out)
}

/// Test functions on `H^1` for [`gradient_bound_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TestFunction {
    /// `f = x`.
    Linear,
    /// `f = z`.
    Vertical,
    /// `f = exp(−((x − ½)² + y² + (z − ¼)²))`.
    Bump,
}

impl TestFunction {
    pub const ALL: [TestFunction; 3] = [Self::Linear, Self::Vertical, Self::Bump];

    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Vertical => "vertical",
            Self::Bump => "bump",
        }
    }

    pub fn eval(self, p: &GroupElement) -> f64 {
        let (x, y, z) = (p.x1[0], p.x1[1], p.x2[0]);
        match self {
            Self::Linear => x,
            Self::Vertical => z,
            Self::Bump => (-((x - 0.5).powi(2) + y * y + (z - 0.25).powi(2))).exp(),
        }
    }

    /// Horizontal gradient `(V₁f, V₂f)` for the left-invariant fields of
    /// the group law, `V₁ = ∂x − ½y∂z`, `V₂ = ∂y + ½x∂z`.
    pub fn horizontal_gradient(self, p: &GroupElement) -> [f64; 2] {
        let (x, y, z) = (p.x1[0], p.x1[1], p.x2[0]);
        let (fx, fy, fz) = match self {
            Self::Linear => (1.0, 0.0, 0.0),
            Self::Vertical => (0.0, 0.0, 1.0),
            Self::Bump => {
                let f = self.eval(p);
                (-2.0 * (x - 0.5) * f, -2.0 * y * f, -2.0 * (z - 0.25) * f)
            }
        };
        [fx - 0.5 * y * fz, fy + 0.5 * x * fz]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientProbe {
    pub function: &'static str,
    pub time: f64,
    /// `|∇_G P_t f|(e)`.
    pub lhs: f64,
    pub lhs_std_error: f64,
    /// `P_t |∇_G f| (e)`.
    pub rhs: f64,
    pub rhs_std_error: f64,
    pub ratio: f64,
    pub ratio_std_error: f64,
    /// Either standard error exceeds 20% of `rhs`.
    pub inconclusive: bool,
    /// `√((3 d1 + 5)/(3 d1 + 1))`, the known lower bound on the best
    /// constant for H-type groups.
    pub h_type_lower_bound: f64,
    pub samples: usize,
}

/// Finite-difference step for the probe.
pub const PROBE_STEP: f64 = 1e-2;

/// Estimates both sides of `|∇_G P_t f| ≤ K P_t |∇_G f|` at the identity of
/// `H^1`. Derivatives of `P_t f(x) = E f(x·B_t)` use central differences
/// along `exp(±s e_i)` with the same Brownian sample at both base points.
pub fn gradient_bound_probe(g: &CarnotStructure, f: TestFunction, t: f64, cfg: &SampleConfig) -> Result<GradientProbe> {
    if g.heisenberg_rank() != Some(1) {
        return Err(Error::UnsupportedStructure(format!("gradient probe runs on heisenberg-1, got {}", g.name())));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    cfg.validate()?;
    let s = PROBE_STEP;
    let rows: Vec<[f64; 3]> = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let b = bm_endpoint(g, cfg.level, t, cfg.seed, i as u64);
            let mut d = [0.0; 2];
            for (axis, slot) in d.iter_mut().enumerate() {
                let mut e = vec![0.0; 2];
                e[axis] = s;
                let plus = g.product_unchecked(&GroupElement::new(e.clone(), vec![0.0]), &b);
                e[axis] = -s;
                let minus = g.product_unchecked(&GroupElement::new(e, vec![0.0]), &b);
                *slot = (f.eval(&plus) - f.eval(&minus)) / (2.0 * s);
            }
            let grad = f.horizontal_gradient(&b);
            [d[0], d[1], (grad[0] * grad[0] + grad[1] * grad[1]).sqrt()]
        })
        .collect();
    let col = |c: usize| mean_estimate(&rows.iter().map(|r| r[c]).collect::<Vec<_>>());
    let (d1e, d2e, re) = (col(0), col(1), col(2));
    let lhs = d1e.mean.hypot(d2e.mean);
    let lhs_std_error = if lhs > 0.0 {
        (((d1e.mean * d1e.std_error).powi(2) + (d2e.mean * d2e.std_error).powi(2)) / (lhs * lhs)).sqrt()
    } else {
        d1e.std_error.hypot(d2e.std_error)
    };
    let rhs = re.mean;
    let rhs_std_error = re.std_error;
    let ratio = lhs / rhs;
    let ratio_std_error = if lhs > 0.0 {
        ratio * ((lhs_std_error / lhs).powi(2) + (rhs_std_error / rhs).powi(2)).sqrt()
    } else {
        lhs_std_error / rhs
    };
    let d1 = g.d1() as f64;
    Ok(GradientProbe {
        function: f.name(),
        time: t,
        lhs,
        lhs_std_error,
        rhs,
        rhs_std_error,
        ratio,
        ratio_std_error,
        inconclusive: rhs_std_error > 0.2 * rhs || lhs_std_error > 0.2 * rhs,
        h_type_lower_bound: ((3.0 * d1 + 5.0) / (3.0 * d1 + 1.0)).sqrt(),
        samples: cfg.count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::cameron_martin_cost;
    use crate::stats::variance_estimate;

    fn h1() -> CarnotStructure {
        CarnotStructure::heisenberg(1)
    }

    #[test]
    fn config_validation() {
        assert!(SampleConfig::new(0, 10, 1).is_err());
        assert!(SampleConfig::new(4, 0, 1).is_err());
        assert_eq!(SampleConfig::new(4, 1, 1).unwrap().steps(), 16);
    }

    #[test]
    fn paths_are_reproducible_and_start_at_identity() {
        let g = h1();
        let cfg = SampleConfig::new(6, 5, 11).unwrap();
        let a = sample_bm(&g, &cfg).unwrap();
        let b = sample_bm(&g, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].point(0), g.identity());
        assert_ne!(a[0], a[1]);
        let end = bm_endpoint(&g, 6, 1.0, 11, 3);
        assert_eq!(end, a[3].point(a[3].len() - 1));
    }

    #[test]
    fn zero_drift_is_identity() {
        let g = h1();
        let b = brownian_driver(2, 5, 1, 0);
        let s = apply_drift(&g, &b, &DriftSpec::Zero).unwrap();
        assert_eq!(s.path, lift(&g, &b, 5).unwrap());
        assert_eq!(s.log_density, 0.0);
        let e = entropy_estimate(&g, &DriftSpec::Zero, &SampleConfig::new(5, 20, 1).unwrap()).unwrap();
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn deterministic_drift_matches_shift() {
        let g = h1();
        let b = brownian_driver(2, 7, 2, 0);
        let drift = DriftSpec::named("line", 2).unwrap();
        let s = apply_drift(&g, &b, &drift).unwrap();
        let h = HorizontalPath::linear(7, &[1.0, 0.0]);
        assert_eq!(s.path, shift(&lift(&g, &b, 7).unwrap(), &h).unwrap());
        assert!((s.half_energy - 0.5).abs() < 1e-12);
        let lifted_sum = lift(&g, &b.add(&h).unwrap(), 7).unwrap();
        for k in 0..lifted_sum.len() {
            for (p, q) in lifted_sum.coords(k).iter().zip(s.path.coords(k)) {
                assert!((p - q).abs() < 1e-12);
            }
        }
        let base = lift(&g, &b, 7).unwrap();
        let c = cameron_martin_cost(&base, &s.path, None).unwrap();
        assert!((c.finite().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feedback_drift_is_adapted() {
        let g = h1();
        let b = brownian_driver(2, 6, 3, 0);
        let drift = DriftSpec::named("feedback", 2).unwrap();
        let s = apply_drift(&g, &b, &drift).unwrap();
        // first step uses B_0 = 0, so no drift yet
        assert_eq!(s.drift_path.point(1), &[0.0, 0.0]);
        let expected: Vec<f64> = b.point(1).iter().map(|v| -v / 64.0).collect();
        for (p, q) in s.drift_path.point(2).iter().zip(expected) {
            assert!((p - q).abs() < 1e-15);
        }
        assert!(DriftSpec::named("nope", 2).is_err());
    }

    #[test]
    fn levy_area_variance_is_a_quarter() {
        let g = h1();
        let cfg = SampleConfig::new(8, 4000, 5).unwrap();
        let z: Vec<f64> = heat_kernel_samples(&g, 1.0, &cfg).unwrap().iter().map(|p| p.x2[0]).collect();
        let v = variance_estimate(&z);
        let expected = 0.25 * (1.0 - 1.0 / 256.0);
        assert!((v.mean - expected).abs() < 4.0 * v.std_error, "{v:?}");
    }

    #[test]
    fn linear_probe_ratio_is_one() {
        let g = h1();
        let cfg = SampleConfig::new(4, 200, 1).unwrap();
        let p = gradient_bound_probe(&g, TestFunction::Linear, 1.0, &cfg).unwrap();
        assert!((p.ratio - 1.0).abs() < 1e-12, "{p:?}");
        assert!(!p.inconclusive);
    }

    #[test]
    fn bump_gradient_matches_finite_differences() {
        let p = GroupElement::new(vec![0.3, -0.4], vec![0.2]);
        let g = h1();
        let grad = TestFunction::Bump.horizontal_gradient(&p);
        for (axis, expected) in grad.iter().enumerate() {
            let mut e = vec![0.0; 2];
            let h = 1e-6;
            e[axis] = h;
            let plus = g.product(&p, &GroupElement::new(e.clone(), vec![0.0])).unwrap();
            e[axis] = -h;
            let minus = g.product(&p, &GroupElement::new(e, vec![0.0])).unwrap();
            let fd = (TestFunction::Bump.eval(&plus) - TestFunction::Bump.eval(&minus)) / (2.0 * h);
            assert!((fd - expected).abs() < 1e-8, "axis {axis}: {fd} vs {expected}");
        }
    }
}
