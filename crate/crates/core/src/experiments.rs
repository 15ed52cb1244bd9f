//! Named experiments. Each run composes the library operations, writes
//! deterministic CSV tables plus a JSON manifest into the output directory,
//! and reports a list of pass/fail checks.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cc_metric::{
    cc_distance_heisenberg, equivalence_sandwich_probe, sample_gauge_ball, CcMetric, GaugeMetric, GeodesicSolverOptions,
    HeisenbergMetric, OracleMetric,
};
use crate::error::{Error, Result};
use crate::gamma::{blowup_experiment, transport_recovery_experiment, Perturbation};
use crate::group::{CarnotStructure, GroupElement};
use crate::path::{lift, noncomm_error, shift, ExtendedCost, HorizontalPath};
use crate::riemannian::{contrast_experiment, sandwich_experiment, EpsilonSpace};
use crate::rng;
use crate::sampling::{
    entropy_estimate, gradient_bound_probe, heat_kernel_samples, map_brownian, scaling_moment_check,
    DriftSpec, SampleConfig, DRIFT_NAMES, TestFunction,
};
use crate::stats::{mean_estimate, variance_estimate, MeanEstimate};
use crate::transport::{adapted_cost_check, talagrand_verdict, w2_empirical, SinkhornOptions, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    GroupCertify,
    CcCertify,
    Blowup,
    Recovery,
    AdaptedEquality,
    MarginalT2,
    RiemannSandwich,
    RiemannNoblowup,
    GradientBound,
    ScalingCheck,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Self::GroupCertify,
        Self::CcCertify,
        Self::Blowup,
        Self::Recovery,
        Self::AdaptedEquality,
        Self::MarginalT2,
        Self::RiemannSandwich,
        Self::RiemannNoblowup,
        Self::GradientBound,
        Self::ScalingCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GroupCertify => "group-certify",
            Self::CcCertify => "cc-certify",
            Self::Blowup => "blowup",
            Self::Recovery => "recovery",
            Self::AdaptedEquality => "adapted-equality",
            Self::MarginalT2 => "marginal-t2",
            Self::RiemannSandwich => "riemann-sandwich",
            Self::RiemannNoblowup => "riemann-noblowup",
            Self::GradientBound => "gradient-bound",
            Self::ScalingCheck => "scaling-check",
        }
    }

    /// The mathematical statement the run probes.
    pub fn claim(self) -> &'static str {
        match self {
            Self::GroupCertify => "step-2 group law: associativity, inverses, dilation homomorphism, antisymmetric bracket; exact lift/shift compatibility",
            Self::CcCertify => "Heisenberg closed-form CC distance agrees with the variational definition; homogeneity and left-invariance",
            Self::Blowup => "C_n(B, T_h B) diverges almost surely, with mean excess growing like 2^(n/2); vertical perturbations grow like 2^n",
            Self::Recovery => "recovery sequence: C_n(B, corrected path) <= |h|_H and converges to |h|_H while the corrected path approaches T_h B uniformly",
            Self::AdaptedEquality => "adapted transport under C_H attains equality with twice the relative entropy via the Follmer coupling",
            Self::MarginalT2 => "Talagrand T2 bound projected to time-1 marginals under d_cc, against the bound 2H(nu|mu)/alpha",
            Self::RiemannSandwich => "d_eps <= d_cc <= d_eps + c*eps on the Riemannian approximations of the Heisenberg group",
            Self::RiemannNoblowup => "Riemannian discretized costs stay bounded under shifts while sub-Riemannian ones blow up",
            Self::GradientBound => "heat semigroup gradient bound |grad P_t f| <= K P_t |grad f| on the Heisenberg group",
            Self::ScalingCheck => "Brownian motion on the group: marginal moments, Levy area variance, non-commutativity variance, dilation scaling of the heat kernel",
        }
    }

    fn file_stem(self) -> String {
        self.name().replace('-', "_")
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown experiment '{s}'")))
    }
}

/// Inclusive level range written `a..b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelRange {
    pub start: u32,
    pub end: u32,
}

impl FromStr for LevelRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("level range must look like 4..10, got '{s}'"));
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        let start: u32 = a.trim().parse().map_err(|_| bad())?;
        let end: u32 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if start > end || end > 20 {
            return Err(Error::Input(format!("level range {s} must satisfy start <= end <= 20")));
        }
        Ok(Self { start, end })
    }
}

impl fmt::Display for LevelRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

impl Serialize for LevelRange {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LevelRange {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Optional parameters; each experiment documents which ones it reads.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<LevelRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub overrides: Overrides,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        Self { experiment, seed, output_dir: output_dir.into(), overrides: Overrides::default() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("invalid config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.overrides;
        if o.trials == Some(0) {
            return Err(Error::Input("trials must be positive".into()));
        }
        if let Some(e) = o.epsilon {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::Input(format!("epsilon must be positive, got {e}")));
            }
        }
        if let Some(a) = o.alpha {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Input(format!("alpha must be positive, got {a}")));
            }
        }
        if let Some(d) = &o.drift {
            if !DRIFT_NAMES.contains(&d.as_str()) {
                return Err(Error::Input(format!("unknown drift '{d}', expected one of {:?}", DRIFT_NAMES)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub target: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, value: f64, target: impl Into<String>) -> Self {
        Self { name: name.into(), passed, value, target: target.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub experiment: Experiment,
    pub claim: &'static str,
    pub summary: Value,
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
    pub wall_time_seconds: f64,
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ASSERTION: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_PASS
        } else {
            EXIT_ASSERTION
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Exit status for a run that ended in an error.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Numerical(_) | Error::Infeasible(_) => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

pub fn manifest_path(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join(format!("{}.manifest.json", config.experiment.file_stem()))
}

fn versions() -> Value {
    json!({ "carnot-core": env!("CARGO_PKG_VERSION") })
}

/// Machine-readable record for a run that failed before producing results.
pub fn write_failure(config: &ExperimentConfig, err: &Error) -> Result<PathBuf> {
    fs::create_dir_all(&config.output_dir)?;
    let path = manifest_path(config);
    let record = json!({
        "experiment": config.experiment,
        "claim": config.experiment.claim(),
        "config": config,
        "seed": config.seed,
        "versions": versions(),
        "status": "error",
        "exit_code": exit_code_for(err),
        "error": err.to_string(),
    });
    fs::write(&path, serde_json::to_string_pretty(&record)?)?;
    Ok(path)
}

/// Runs inside a dedicated pool of `threads` workers (all cores if `None`).
pub fn run_with_threads(config: &ExperimentConfig, threads: Option<usize>) -> Result<RunOutcome> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Input("threads must be positive".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::Input(format!("thread pool: {e}")))?;
    pool.install(|| run(config))
}

pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let start = Instant::now();
    let mut out = Artifacts { dir: config.output_dir.clone(), stem: config.experiment.file_stem(), files: Vec::new() };
    let (summary, checks) = match config.experiment {
        Experiment::GroupCertify => group_certify(config, &mut out)?,
        Experiment::CcCertify => cc_certify(config, &mut out)?,
        Experiment::Blowup => blowup(config, &mut out)?,
        Experiment::Recovery => recovery(config, &mut out)?,
        Experiment::AdaptedEquality => adapted_equality(config, &mut out)?,
        Experiment::MarginalT2 => marginal_t2(config, &mut out)?,
        Experiment::RiemannSandwich => riemann_sandwich(config, &mut out)?,
        Experiment::RiemannNoblowup => riemann_noblowup(config, &mut out)?,
        Experiment::GradientBound => gradient_bound(config, &mut out)?,
        Experiment::ScalingCheck => scaling_check(config, &mut out)?,
    };
    let outcome = RunOutcome {
        experiment: config.experiment,
        claim: config.experiment.claim(),
        summary,
        checks,
        files: out.files,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let manifest = json!({
        "experiment": outcome.experiment,
        "claim": outcome.claim,
        "config": config,
        "seed": config.seed,
        "versions": versions(),
        "status": if outcome.passed() { "pass" } else { "fail" },
        "exit_code": outcome.exit_code(),
        "checks": outcome.checks,
        "summary": outcome.summary,
        "files": outcome.files,
        "wall_time_seconds": outcome.wall_time_seconds,
    });
    fs::write(manifest_path(config), serde_json::to_string_pretty(&manifest)?)?;
    Ok(outcome)
}

struct Artifacts {
    dir: PathBuf,
    stem: String,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn csv<T: Serialize>(&mut self, suffix: Option<&str>, rows: &[T]) -> Result<()> {
        let name = match suffix {
            Some(s) => format!("{}_{s}.csv", self.stem),
            None => format!("{}.csv", self.stem),
        };
        let path = self.dir.join(name);
        write_rows(&path, rows)?;
        self.files.push(path);
        Ok(())
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

type Outcome = (Value, Vec<Check>);

fn within_sigma(estimate: &MeanEstimate, target: f64, k: f64) -> (bool, f64) {
    let diff = estimate.mean - target;
    if estimate.std_error > 0.0 {
        let z = diff / estimate.std_error;
        (z.abs() <= k, z)
    } else {
        (diff.abs() <= 1e-12, if diff == 0.0 { 0.0 } else { f64::INFINITY })
    }
}

fn unit_shift() -> HorizontalPath {
    HorizontalPath::linear(0, &[1.0, 0.0])
}

// ---------------------------------------------------------------- group-certify

#[derive(Serialize)]
struct PropertyRow {
    structure: String,
    property: &'static str,
    instances: usize,
    max_error: f64,
}

fn random_element(g: &CarnotStructure, s: &mut rng::Stream) -> GroupElement {
    GroupElement::new((0..g.d1()).map(|_| rng::normal(s)).collect(), (0..g.d2()).map(|_| rng::normal(s)).collect())
}

fn max_abs_diff(a: &GroupElement, b: &GroupElement) -> f64 {
    a.coords().iter().zip(b.coords()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_path(d1: usize, level: u32, s: &mut rng::Stream) -> Result<HorizontalPath> {
    let mut values = vec![0.0; d1];
    let mut cur = vec![0.0; d1];
    let scale = (1u64 << level) as f64;
    for _ in 0..(1usize << level) {
        for c in cur.iter_mut() {
            *c += rng::normal(s) / scale.sqrt();
        }
        values.extend_from_slice(&cur);
    }
    HorizontalPath::new(level, d1, values)
}

const GROUP_TOLERANCE: f64 = 1e-12;
const THETA_TOLERANCE: f64 = 1e-10;

/// `trials`: random instances per preset (default 1000).
fn group_certify(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Outcome> {
    let instances = cfg.overrides.trials.unwrap_or(1000);
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (gi, g) in CarnotStructure::presets().into_iter().enumerate() {
        let mut s = rng::stream(cfg.seed, gi as u64);
        let (mut assoc, mut inv, mut dil, mut anti) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for _ in 0..instances {
            let a = random_element(&g, &mut s);
            let b = random_element(&g, &mut s);
            let c = random_element(&g, &mut s);
            let left = g.product(&g.product(&a, &b)?, &c)?;
            let right = g.product(&a, &g.product(&b, &c)?)?;
            assoc = assoc.max(max_abs_diff(&left, &right));
            let ai = g.inverse(&a)?;
            inv = inv.max(max_abs_diff(&g.product(&a, &ai)?, &g.identity()));
            inv = inv.max(max_abs_diff(&g.product(&ai, &a)?, &g.identity()));
            let r = 0.1 + 2.9 * rng::uniform(&mut s);
            let lhs = g.dilate(r, &g.product(&a, &b)?)?;
            let rhs = g.product(&g.dilate(r, &a)?, &g.dilate(r, &b)?)?;
            dil = dil.max(max_abs_diff(&lhs, &rhs));
            let uv = g.bracket(&a.x1, &b.x1);
            let vu = g.bracket(&b.x1, &a.x1);
            anti = anti.max(uv.iter().zip(&vu).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max));
        }
        for (property, err) in [("associativity", assoc), ("inverse", inv), ("dilation", dil), ("antisymmetry", anti)] {
            checks.push(Check::new(format!("{} {property}", g.name()), err <= GROUP_TOLERANCE, err, "<= 1e-12"));
            rows.push(PropertyRow { structure: g.name().to_string(), property, instances, max_error: err });
        }
    }
    let mut h_type = BTreeMap::new();
    for (g, expected) in [(CarnotStructure::heisenberg(1), true), (CarnotStructure::heisenberg(2), true), (CarnotStructure::free(3), false)] {
        let report = g.h_type_check();
        checks.push(Check::new(
            format!("{} h-type = {expected}", g.name()),
            report.is_h_type == expected,
            report.max_violation,
            expected.to_string(),
        ));
        h_type.insert(g.name().to_string(), report.is_h_type);
    }

    // lift/shift exactness and the non-commutativity identity
    let pairs = (instances / 10).max(1);
    let (mut lift_err, mut theta_err) = (0.0f64, 0.0f64);
    for g in CarnotStructure::presets() {
        let mut s = rng::stream(cfg.seed, rng::mix(0x11f7, g.d1() as u64 * 10 + g.d2() as u64));
        for _ in 0..pairs {
            let level = 4 + (rng::uniform(&mut s) * 3.0) as u32;
            let h_level = (rng::uniform(&mut s) * (level + 1) as f64) as u32;
            let x = random_path(g.d1(), level, &mut s)?;
            let h = random_path(g.d1(), h_level.min(level), &mut s)?;
            let lx = lift(&g, &x, level)?;
            let shifted = shift(&lx, &h)?;
            let direct = lift(&g, &x.add(&h.at_level(level))?, level)?;
            for k in 0..lx.len() {
                let e = shifted.coords(k).iter().zip(direct.coords(k)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                lift_err = lift_err.max(e);
            }
            let n = lx.len() - 1;
            let i = (rng::uniform(&mut s) * n as f64) as usize;
            let j = (i + 1 + (rng::uniform(&mut s) * (n - i) as f64) as usize).min(n);
            let theta = noncomm_error(&lx, &h, i, j)?;
            let lh = lift(&g, &h, level)?;
            let group = g.product(&g.inverse(&lh.increment(i, j))?, &g.product(&g.inverse(&lx.increment(i, j))?, &shifted.increment(i, j))?)?;
            let e = theta.iter().zip(&group.x2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            theta_err = theta_err.max(e);
        }
    }
    rows.push(PropertyRow { structure: "all".into(), property: "lift-shift", instances: pairs * 4, max_error: lift_err });
    rows.push(PropertyRow { structure: "all".into(), property: "noncomm-identity", instances: pairs * 4, max_error: theta_err });
    checks.push(Check::new("shift(lift(x),h) = lift(x+h)", lift_err <= GROUP_TOLERANCE, lift_err, "<= 1e-12"));
    checks.push(Check::new("noncomm identity", theta_err <= THETA_TOLERANCE, theta_err, "<= 1e-10"));
    out.csv(None, &rows)?;
    Ok((json!({ "instances_per_preset": instances, "h_type": h_type, "lift_shift_error": lift_err, "noncomm_error": theta_err }), checks))
}

// ---------------------------------------------------------------- cc-certify

#[derive(Serialize)]
struct CertifyRow {
    pair: usize,
    a_x: f64,
    a_y: f64,
    a_z: f64,
    b_x: f64,
    b_y: f64,
    b_z: f64,
    closed_form: f64,
    oracle: f64,
    relative_error: f64,
}

/// `trials`: random pairs (default 200).
fn cc_certify(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Outcome> {
    use rayon::prelude::*;
    let pairs = cfg.overrides.trials.unwrap_or(200);
    let g = CarnotStructure::heisenberg(1);
    let opts = GeodesicSolverOptions { seed: cfg.seed, ..GeodesicSolverOptions::default() };
    let oracle = OracleMetric::new(g.clone(), opts)?;
    let closed = HeisenbergMetric::h1();
    let rows: Vec<(CertifyRow, f64, f64)> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut s = rng::stream(cfg.seed, k as u64);
            let a = sample_gauge_ball(&g, &mut s);
            let b = sample_gauge_ball(&g, &mut s);
            let c = cc_distance_heisenberg(&g, &a, &b)?;
            let o = oracle.distance_with_stream(&a, &b, k as u64)?;
            // homogeneity and left-invariance of the closed form
            let r = 0.2 + 2.8 * rng::uniform(&mut s);
            let hom = (closed.distance(&g.dilate(r, &a)?, &g.dilate(r, &b)?)? - r * c).abs() / (r * c).max(1.0);
            let t = random_element(&g, &mut s);
            let inv = (closed.distance(&g.product(&t, &a)?, &g.product(&t, &b)?)? - c).abs() / c.max(1.0);
            let row = CertifyRow {
                pair: k,
                a_x: a.x1[0],
                a_y: a.x1[1],
                a_z: a.x2[0],
                b_x: b.x1[0],
                b_y: b.x1[1],
                b_z: b.x2[0],
                closed_form: c,
                oracle: o,
                relative_error: (o - c).abs() / c,
            };
            Ok((row, hom, inv))
        })
        .collect::<Result<_>>()?;
    let worst = rows.iter().map(|r| r.0.relative_error).fold(0.0, f64::max);
    let hom = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let inv = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let top = GroupElement::new(vec![0.0, 0.0], vec![1.0]);
    let vertical = closed.norm(&top)?;
    let vertical_oracle = oracle.norm(&top)?;
    let target = 2.0 * std::f64::consts::PI.sqrt();
    let kappa = equivalence_sandwich_probe(&g, 1000, cfg.seed)?;
    let checks = vec![
        Check::new("oracle agreement", worst <= 0.01, worst, "relative <= 1%"),
        Check::new("vertical distance (closed form)", (vertical - 3.5449).abs() <= 0.04, vertical, "3.5449 +- 0.04"),
        Check::new("vertical distance (oracle)", (vertical_oracle - 3.5449).abs() <= 0.04, vertical_oracle, "3.5449 +- 0.04"),
        Check::new("homogeneity", hom <= 1e-9, hom, "<= 1e-9"),
        Check::new("left invariance", inv <= 1e-9, inv, "<= 1e-9"),
    ];
    let table: Vec<CertifyRow> = rows.into_iter().map(|r| r.0).collect();
    out.csv(None, &table)?;
    Ok((
        json!({
            "pairs": pairs,
            "max_relative_error": worst,
            "vertical_closed_form": vertical,
            "vertical_oracle": vertical_oracle,
            "vertical_target": target,
            "homogeneity_error": hom,
            "left_invariance_error": inv,
            "gauge_equivalence": kappa,
            "oracle_options": opts,
        }),
        checks,
    ))
}

// ---------------------------------------------------------------- blowup

#[derive(Serialize)]
struct BlowupRow {
    kind: &'static str,
    n: u32,
    trial: usize,
    cost_squared: f64,
}

/// `levels` (default 4..10), `trials` (default 200).
fn blowup(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Outcome> {
    let levels = cfg.overrides.levels.unwrap_or(LevelRange { start: 4, end: 10 });
    let trials = cfg.overrides.trials.unwrap_or(200);
    let g = CarnotStructure::heisenberg(1);
    let metric = HeisenbergMetric::h1();
    let range = levels.start..=levels.end;
    let shift_run = blowup_experiment(&g, &Perturbation::Shift(unit_shift()), range.clone(), trials, cfg.seed, &metric)?;
    let vertical_run = blowup_experiment(&g, &Perturbation::Vertical(vec![1.0]), range, trials, cfg.seed, &metric)?;
    let mut rows = Vec::new();
    for (kind, run) in [("shift", &shift_run), ("vertical", &vertical_run)] {
        for (li, l) in run.levels.iter().enumerate() {
            for (trial, c) in run.costs.iter().enumerate() {
                rows.push(BlowupRow { kind, n: l.n, trial, cost_squared: c[li] });
            }
        }
    }
    out.csv(None, &rows)?;
    let slope = shift_run.fit.slope;
    let checks = vec![
        Check::new("shift growth exponent", (0.35..=0.65).contains(&slope), slope, "in [0.35, 0.65]"),
        Check::new("vertical growth exponent", vertical_run.fit.slope >= 0.9, vertical_run.fit.slope, ">= 0.9"),
    ];
    Ok((json!({ "levels": levels, "trials": trials, "shift": shift_run, "vertical": vertical_run }), checks))
}

// ---------------------------------------------------------------- recovery

#[derive(Serialize)]
struct RecoveryCsvRow {
    n: u32,
    trial: usize,
    #[serde(rename = "C_n_naive")]
    naive: f64,
    #[serde(rename = "C_n_recovery")]
    recovery: f64,
    uniform_gap: f64,
}

/// `levels` (default 4..9), `trials` (default 200).
fn recovery(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Outcome> {
    let levels = cfg.overrides.levels.unwrap_or(LevelRange { start: 4, end: 9 });
    let trials = cfg.overrides.trials.unwrap_or(200);
    let g = CarnotStructure::heisenberg(1);
    let h = unit_shift();
    let table = transport_recovery_experiment(&g, &h, levels.start..=levels.end, trials, cfg.seed, &HeisenbergMetric::h1())?;
    let rows: Vec<RecoveryCsvRow> = table
        .rows
        .iter()
        .map(|r| RecoveryCsvRow { n: r.n, trial: r.trial, naive: r.naive, recovery: r.recovery, uniform_gap: r.uniform_gap })
        .collect();
    out.csv(None, &rows)?;
    let limit = table.limit;
    let max_recovery = table.levels.iter().map(|l| l.max_recovery).fold(0.0, f64::max);
    let last = table.levels.last().expect("levels are non-empty");
    let rel = (last.mean_recovery_sq.mean - limit).abs() / limit;
    let monotone = table.levels.windows(2).all(|w| w[1].median_gap < w[0].median_gap);
    let (lo, hi) = table.gap_ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
    let mut checks = vec![
        Check::new("recovery cost <= |h|_H", max_recovery <= limit.sqrt() + 1e-9, max_recovery, "<= 1 + 1e-9"),
        Check::new(format!("recovery mean C_n^2 at n={} within 2%", last.n), rel <= 0.02, rel, "<= 0.02"),
        Check::new("median gap decreasing", monotone, table.gap_ratios.iter().cloned().fold(0.0, f64::max), "ratios < 1"),
        Check::new("gap halving ratios in (0.4, 0.9)", lo > 0.4 && hi < 0.9, hi, "(0.4, 0.9)"),
    ];
    if let Some(l8) = table.levels.iter().find(|l| l.n == 8) {
        checks.push(Check::new("naive mean C_8^2 > 2", l8.mean_naive_sq.mean > 2.0, l8.mean_naive_sq.mean, "> 2"));
    }
    Ok((json!({ "levels": levels, "trials": trials, "table": table }), checks))
}

// ---------------------------------------------------------------- adapted-equality

#[derive(Serialize)]
struct AdaptedRow {
    drift: String,
    mean_ch_squared: f64,
    ch_std_error: f64,
    two_h: f64,
    two_h_std_error: f64,
    gap_sigma: f64,
    infinite_pairs: usize,
    verdict: Verdict,
}

/// `drift` (default: both `line` and `feedback`), `trials`: paths
/// (default 10⁴), `alpha` (default 1).
fn adapted_equality(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Outcome> {
    let g = CarnotStructure::heisenberg(1);
    let count = cfg.overrides.trials.unwrap_or(10_000);
    let alpha = cfg.overrides.alpha.unwrap_or(1.0);
    let sample = SampleConfig::new(10, count, cfg.seed)?;
    let drifts: Vec<String> = match &cfg.overrides.drift {
        Some(d) => vec![d.clone()],
        None => vec!["line".into(), "feedback".into()],
    };
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut reports = BTreeMap::new();
    for name in drifts {
        let drift = DriftSpec::named(&name, 2)?;
        let r = adapted_cost_check(&g, &drift, &sample)?;
        let report = talagrand_verdict(
            ExtendedCost::Finite(r.mean_ch_squared.mean),
            0.5 * r.two_h.mean,
            alpha,
            r.mean_ch_squared.std_error.hypot(r.two_h.std_error),
        )?;
        checks.push(Check::new(format!("{name}: no infinite pairs"), r.infinite_pairs == 0, r.infinite_pairs as f64, "0"));
        match name.as_str() {
            "line" => {
                let e = (r.mean_ch_squared.mean - 1.0).abs();
                checks.push(Check::new("line: mean C_H^2 = 1", e <= 1e-9, r.mean_ch_squared.mean, "1 exactly"));
                let (ok, z) = within_sigma(&r.two_h, 1.0, 3.0);
                checks.push(Check::new("line: 2H = 1", ok, z, "|z| <= 3"));
            }
            "zero" => {
                let ok = r.mean_ch_squared.mean == 0.0 && r.two_h.mean == 0.0;
                checks.push(Check::new("zero: all costs vanish", ok, r.mean_ch_squared.mean, "0"));
            }
            _ => {}
        }
        checks.push(Check::new(format!("{name}: |mean C_H^2 - 2H| < 3 sigma"), r.gap_sigma.abs() < 3.0, r.gap_sigma, "< 3"));
        rows.push(AdaptedRow {
            drift: name.clone(),
            mean_ch_squared: r.mean_ch_squared.mean,
            ch_std_error: r.mean_ch_squared.std_error,
            two_h: r.two_h.mean,
            two_h_std_error: r.two_h.std_error,
            gap_sigma: r.gap_sigma,
            infinite_pairs: r.infinite_pairs,
            verdict: report.verdict,
        });
        reports.insert(name, json!({ "check": r, "talagrand": report }));
    }
    out.csv(None, &rows)?;
    Ok((json!({ "paths": count, "level": 10, "alpha": alpha, "drifts": reports }), checks))
}

// ---------------------------------------------------------------- marginal-t2

#[derive(Serialize)]
struct MarginalRow {
    instance: &'static str,
    samples: usize,
    w2_squared: f64,
    error: f64,
    bound: f64,
    verdict: Option<Verdict>,
}

const EUCLIDEAN_END_FACTOR: f64 = 1e-2;

/// `trials`: samples per side (default 1024), `alpha` (default 1),
/// `epsilon`: fixed Sinkhorn regularization instead of the schedule.
fn marginal_t2(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Outcome> {
    let n = cfg.overrides.trials.unwrap_or(1024);
    let alpha = cfg.overrides.alpha.unwrap_or(1.0);
    let opts = SinkhornOptions { epsilon: cfg.overrides.epsilon, ..SinkhornOptions::default() };
    let g = CarnotStructure::heisenberg(1);
    let h = unit_shift();
    let level = 10;

    let clock = Instant::now();
    let xs = heat_kernel_samples(&g, 1.0, &SampleConfig::new(level, n, cfg.seed)?)?;
    let shifted_cfg = SampleConfig::new(level, n, rng::mix(cfg.seed, 1))?;
    let ys: Vec<GroupElement> = map_brownian(&g, &shifted_cfg, |_, b| Ok(shift(&lift(&g, b, level)?, &h)?.point(1 << level)))?;
    let w2 = w2_empirical(&xs, &ys, &HeisenbergMetric::h1(), &opts, cfg.seed)?;
    let entropy = entropy_estimate(&g, &DriftSpec::Deterministic(h.clone()), &shifted_cfg)?;
    let report = talagrand_verdict(ExtendedCost::Finite(w2.w2_squared), entropy.mean, alpha, w2.error)?;
    let heisenberg_seconds = clock.elapsed().as_secs_f64();

    // Euclidean sanity instance: N(0, I) against N((1,0), I); a coarser
    // schedule end suffices for the 15% check
    let clock = Instant::now();
    let coarse = SinkhornOptions { end_factor: opts.end_factor.max(EUCLIDEAN_END_FACTOR), ..opts };
    let e = CarnotStructure::euclidean(2);
    let gauss = |stream: u64, mean: f64| -> Vec<GroupElement> {
        (0..n)
            .map(|i| {
                let mut s = rng::stream(rng::mix(cfg.seed, stream), i as u64);
                GroupElement::new(vec![mean + rng::normal(&mut s), rng::normal(&mut s)], vec![])
            })
            .collect()
    };
    let euclid = w2_empirical(&gauss(2, 0.0), &gauss(3, 1.0), &GaugeMetric::new(e), &coarse, cfg.seed)?;
    let euclidean_seconds = clock.elapsed().as_secs_f64();
    let euclid_rel = (euclid.w2_squared - 1.0).abs();

    let rows = vec![
        MarginalRow { instance: "heisenberg-1", samples: n, w2_squared: w2.w2_squared, error: w2.error, bound: report.bound, verdict: Some(report.verdict) },
        MarginalRow { instance: "euclidean-2", samples: n, w2_squared: euclid.w2_squared, error: euclid.error, bound: 1.0, verdict: None },
    ];
    out.csv(None, &rows)?;
    let upper = report.bound + 3.0 * w2.error;
    let checks = vec![
        Check::new("marginal W2^2 <= 2H/alpha + error band", w2.w2_squared <= upper, w2.w2_squared, format!("<= {upper:.4}")),
        Check::new("euclidean W2^2 within 15% of |m|^2", euclid_rel <= 0.15, euclid.w2_squared, "1 +- 0.15"),
    ];
    Ok((
        json!({
            "samples": n,
            "alpha": alpha,
            "sinkhorn": opts,
            "heisenberg": w2,
            "entropy": entropy,
            "report": report,
            "euclidean": euclid,
            "euclidean_sinkhorn": coarse,
            "timing_seconds": { "heisenberg": heisenberg_seconds, "euclidean": euclidean_seconds },
        }),
        checks,
    ))
}

// ---------------------------------------------------------------- riemann-sandwich

const RIEMANN_SLACK: f64 = 1e-3;

/// `trials`: pairs (default 100), `epsilon`: single ε instead of the grid
/// {0.5, 0.2, 0.1}.
fn riemann_sandwich(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Outcome> {
    let pairs = cfg.overrides.trials.unwrap_or(100);
    let epsilons = match cfg.overrides.epsilon {
        Some(e) => vec![e],
        None => vec![0.5, 0.2, 0.1],
    };
    let opts = GeodesicSolverOptions { seed: cfg.seed, ..EpsilonSpace::default_options() };
    let res = sandwich_experiment(&epsilons, pairs, cfg.seed, &opts)?;
    out.csv(None, &res.rows)?;
    let root_pi = 2.0 * std::f64::consts::PI.sqrt();
    let vertical_ok = res.vertical.iter().zip(&epsilons).all(|(d, e)| *d <= (1.0 / e).min(root_pi) + RIEMANN_SLACK);
    let checks = vec![
        Check::new("d_eps <= d_cc", res.max_excess <= RIEMANN_SLACK, res.max_excess, "<= 1e-3"),
        Check::new("monotone in epsilon", res.max_monotonicity_gap <= 2.0 * RIEMANN_SLACK, res.max_monotonicity_gap, "<= 2e-3"),
        Check::new("single sandwich constant", res.fitted_c.is_finite(), res.fitted_c, "finite c"),
        Check::new("vertical upper bound", vertical_ok, res.vertical.iter().cloned().fold(0.0, f64::max), "<= min(1/eps, 2 sqrt(pi))"),
    ];
    Ok((json!({ "pairs": pairs, "solver": opts, "result": res }), checks))
}

// ---------------------------------------------------------------- riemann-noblowup

/// `epsilon` (default 0.2), `levels` (default 4..9), `trials` (default 50).
fn riemann_noblowup(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Outcome> {
    let eps = cfg.overrides.epsilon.unwrap_or(0.2);
    let levels = cfg.overrides.levels.unwrap_or(LevelRange { start: 4, end: 9 });
    let trials = cfg.overrides.trials.unwrap_or(50);
    let opts = GeodesicSolverOptions { segments: 32, restarts: 2, seed: cfg.seed, ..EpsilonSpace::default_options() };
    let h = HorizontalPath::linear(0, &[1.0, 0.0, 0.0]);
    let res = contrast_experiment(&EpsilonSpace::new(eps)?, &h, levels.start..=levels.end, trials, cfg.seed, &opts)?;
    out.csv(None, &res.rows)?;
    let checks = vec![
        Check::new("riemannian growth exponent", res.eps_fit.slope < 0.1, res.eps_fit.slope, "< 0.1"),
        Check::new("sub-riemannian growth exponent", res.cc_fit.slope > 0.35, res.cc_fit.slope, "> 0.35"),
    ];
    let bounded = res.sup_mean_eps <= h.cm_norm() + 0.2;
    Ok((
        json!({
            "epsilon": eps,
            "levels": levels,
            "trials": trials,
            "solver": opts,
            "result": res,
            "diagnostics": { "sup_mean_c_eps": res.sup_mean_eps, "within_norm_plus_0.2": bounded },
        }),
        checks,
    ))
}

// ---------------------------------------------------------------- gradient-bound

#[derive(Serialize)]
struct GradientRow {
    function: &'static str,
    lhs: f64,
    lhs_std_error: f64,
    rhs: f64,
    rhs_std_error: f64,
    ratio: f64,
    ratio_std_error: f64,
    inconclusive: bool,
}

/// `trials`: samples (default 10⁵); paths are simulated at level 8, t = 1.
fn gradient_bound(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Outcome> {
    let count = cfg.overrides.trials.unwrap_or(100_000);
    let g = CarnotStructure::heisenberg(1);
    let sample = SampleConfig::new(8, count, cfg.seed)?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut probes = Vec::new();
    for f in TestFunction::ALL {
        let p = gradient_bound_probe(&g, f, 1.0, &sample)?;
        match f {
            TestFunction::Linear => {
                let tol = (2.0 * p.ratio_std_error).max(1e-9);
                checks.push(Check::new("x1: ratio = 1", (p.ratio - 1.0).abs() <= tol, p.ratio, "1 +- 2 sigma"));
            }
            _ => checks.push(Check::new(format!("{}: ratio <= 2", p.function), p.ratio <= 2.0, p.ratio, "<= 2")),
        }
        rows.push(GradientRow {
            function: p.function,
            lhs: p.lhs,
            lhs_std_error: p.lhs_std_error,
            rhs: p.rhs,
            rhs_std_error: p.rhs_std_error,
            ratio: p.ratio,
            ratio_std_error: p.ratio_std_error,
            inconclusive: p.inconclusive,
        });
        probes.push(p);
    }
    out.csv(None, &rows)?;
    Ok((json!({ "samples": count, "level": 8, "time": 1.0, "probes": probes }), checks))
}

// ---------------------------------------------------------------- scaling-check

#[derive(Serialize)]
struct MomentRow {
    quantity: String,
    estimate: f64,
    std_error: f64,
    target: f64,
    z_score: f64,
}

/// `trials`: paths (default 10⁴) at level 10.
fn scaling_check(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Outcome> {
    let count = cfg.overrides.trials.unwrap_or(10_000);
    let g = CarnotStructure::heisenberg(1);
    let level = 10;
    let sample = SampleConfig::new(level, count, cfg.seed)?;
    let h = unit_shift();
    let per_path: Vec<[f64; 5]> = map_brownian(&g, &sample, |_, b| {
        let x = lift(&g, b, level)?;
        let end = x.point(1 << level);
        let theta = noncomm_error(&x, &h, 0, 1 << level)?;
        Ok([end.x1[0], end.x1[1], end.x1[0].powi(2) + end.x1[1].powi(2), end.x2[0], theta[0]])
    })?;
    let col = |c: usize| per_path.iter().map(|r| r[c]).collect::<Vec<_>>();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut push = |quantity: &str, est: MeanEstimate, target: f64, rows: &mut Vec<MomentRow>| {
        let (ok, z) = within_sigma(&est, target, 3.0);
        checks.push(Check::new(quantity, ok, z, format!("{target} +- 3 sigma")));
        rows.push(MomentRow { quantity: quantity.to_string(), estimate: est.mean, std_error: est.std_error, target, z_score: z });
    };
    push("E[B1_x]", mean_estimate(&col(0)), 0.0, &mut rows);
    push("E[B1_y]", mean_estimate(&col(1)), 0.0, &mut rows);
    push("E|B1|^2", mean_estimate(&col(2)), 2.0, &mut rows);
    push("E[levy area]", mean_estimate(&col(3)), 0.0, &mut rows);
    push("Var(levy area)", variance_estimate(&col(3)), 0.25, &mut rows);
    push("Var(theta_01)", variance_estimate(&col(4)), 1.0 / 3.0, &mut rows);
    let moments = scaling_moment_check(&g, 0.5, &sample)?;
    for m in &moments {
        let ok = m.z_score.abs() <= 3.0;
        checks.push(Check::new(format!("scaling {}", m.moment), ok, m.z_score, "|z| <= 3"));
        rows.push(MomentRow { quantity: format!("scaling {}", m.moment), estimate: m.left.mean - m.right.mean, std_error: m.left.std_error.hypot(m.right.std_error), target: 0.0, z_score: m.z_score });
    }
    out.csv(None, &rows)?;
    Ok((json!({ "paths": count, "level": level, "scaling": moments }), checks))
}
