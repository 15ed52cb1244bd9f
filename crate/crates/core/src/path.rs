//! Paths on dyadic grids: horizontal (first-level) paths, group-valued
//! paths, the canonical lift, the shift map and the transport costs.
//!
//! A path of level `n` is stored at the `2ⁿ + 1` points `k / 2ⁿ` and
//! interpreted as piecewise linear in between, which makes every iterated
//! integral below an exact finite sum.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::cc_metric::CcMetric;
use crate::error::{Error, Result};
use crate::group::{CarnotStructure, GroupElement};

fn points_at(level: u32) -> usize {
    (1usize << level) + 1
}

/// First-level path `h: [0,1] → R^{d1}`, `h_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalPath {
    level: u32,
    d1: usize,
    values: Vec<f64>,
}

impl HorizontalPath {
    /// `values` holds `2^level + 1` rows of `d1` coordinates, flattened.
    pub fn new(level: u32, d1: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != points_at(level) * d1 {
            return Err(Error::Dimension(format!(
                "level {level} path in R^{d1} needs {} values, got {}",
                points_at(level) * d1,
                values.len()
            )));
        }
        if values[..d1].iter().any(|v| *v != 0.0) {
            return Err(Error::Input("horizontal path must start at 0".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("horizontal path has non-finite entries".into()));
        }
        Ok(Self { level, d1, values })
    }

    pub fn zero(level: u32, d1: usize) -> Self {
        Self { level, d1, values: vec![0.0; points_at(level) * d1] }
    }

    /// Samples `f` on the grid; `f(0)` must be the origin.
    pub fn from_fn<F: Fn(f64) -> Vec<f64>>(level: u32, d1: usize, f: F) -> Result<Self> {
        let n = points_at(level);
        let mut values = Vec::with_capacity(n * d1);
        for k in 0..n {
            let v = f(k as f64 / (n - 1) as f64);
            if v.len() != d1 {
                return Err(Error::Dimension(format!("path function returned {} coordinates, expected {d1}", v.len())));
            }
            values.extend(v);
        }
        Self::new(level, d1, values)
    }

    /// The ray `t ↦ t·v`.
    pub fn linear(level: u32, v: &[f64]) -> Self {
        let n = points_at(level);
        let mut values = Vec::with_capacity(n * v.len());
        for k in 0..n {
            let t = k as f64 / (n - 1) as f64;
            values.extend(v.iter().map(|c| c * t));
        }
        Self { level, d1: v.len(), values }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn len(&self) -> usize {
        points_at(self.level)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.values[k * self.d1..(k + 1) * self.d1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation to a finer grid, or subsampling to a coarser one.
    pub fn at_level(&self, level: u32) -> Self {
        if level == self.level {
            return self.clone();
        }
        let d1 = self.d1;
        let n = points_at(level);
        let mut values = Vec::with_capacity(n * d1);
        if level < self.level {
            let stride = 1usize << (self.level - level);
            for k in 0..n {
                values.extend_from_slice(self.point(k * stride));
            }
        } else {
            let sub = 1usize << (level - self.level);
            for seg in 0..(self.len() - 1) {
                let (p, q) = (self.point(seg), self.point(seg + 1));
                for j in 0..sub {
                    let s = j as f64 / sub as f64;
                    values.extend(p.iter().zip(q).map(|(a, b)| a + s * (b - a)));
                }
            }
            values.extend_from_slice(self.point(self.len() - 1));
        }
        Self { level, d1, values }
    }

    /// `‖h‖²_H = 2ⁿ Σ |Δ_k h|²`, exact for piecewise-linear `h`.
    pub fn cm_norm_sq(&self) -> f64 {
        let mut s = 0.0;
        for k in 0..(self.len() - 1) {
            for (a, b) in self.point(k).iter().zip(self.point(k + 1)) {
                s += (b - a) * (b - a);
            }
        }
        s * (1u64 << self.level) as f64
    }

    pub fn cm_norm(&self) -> f64 {
        self.cm_norm_sq().sqrt()
    }

    /// Pointwise sum on the finer of the two grids.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(other, -1.0)
    }

    fn combine(&self, other: &Self, sign: f64) -> Result<Self> {
        if self.d1 != other.d1 {
            return Err(Error::Dimension(format!("paths in R^{} and R^{}", self.d1, other.d1)));
        }
        let level = self.level.max(other.level);
        let a = self.at_level(level);
        let b = other.at_level(level);
        let values = a.values.iter().zip(&b.values).map(|(x, y)| x + sign * y).collect();
        Ok(Self { level, d1: self.d1, values })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { level: self.level, d1: self.d1, values: self.values.iter().map(|v| v * s).collect() }
    }
}

/// Group-valued path sampled at the dyadic points of level `N`, starting at
/// the identity. Coordinates are stored flat, `d1 + d2` per point.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadicGroupPath {
    structure: CarnotStructure,
    level: u32,
    data: Vec<f64>,
}

impl DyadicGroupPath {
    pub fn from_points(structure: &CarnotStructure, level: u32, points: &[GroupElement]) -> Result<Self> {
        if points.len() != points_at(level) {
            return Err(Error::Dimension(format!(
                "level {level} path needs {} points, got {}",
                points_at(level),
                points.len()
            )));
        }
        let mut data = Vec::with_capacity(points.len() * (structure.d1() + structure.d2()));
        for p in points {
            structure.check_element(p)?;
            data.extend_from_slice(&p.x1);
            data.extend_from_slice(&p.x2);
        }
        Self::from_flat(structure, level, data)
    }

    pub fn from_flat(structure: &CarnotStructure, level: u32, data: Vec<f64>) -> Result<Self> {
        let width = structure.d1() + structure.d2();
        if data.len() != points_at(level) * width {
            return Err(Error::Dimension(format!(
                "level {level} path needs {} coordinates, got {}",
                points_at(level) * width,
                data.len()
            )));
        }
        if data[..width].iter().any(|v| *v != 0.0) {
            return Err(Error::Input("group path must start at the identity".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("group path has non-finite entries".into()));
        }
        Ok(Self { structure: structure.clone(), level, data })
    }

    /// The path sitting at the identity.
    pub fn constant(structure: &CarnotStructure, level: u32) -> Self {
        let width = structure.d1() + structure.d2();
        Self { structure: structure.clone(), level, data: vec![0.0; points_at(level) * width] }
    }

    pub fn structure(&self) -> &CarnotStructure {
        &self.structure
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn len(&self) -> usize {
        points_at(self.level)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn width(&self) -> usize {
        self.structure.d1() + self.structure.d2()
    }

    pub fn coords(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.data[k * w..(k + 1) * w]
    }

    pub fn x1(&self, k: usize) -> &[f64] {
        &self.coords(k)[..self.structure.d1()]
    }

    pub fn x2(&self, k: usize) -> &[f64] {
        &self.coords(k)[self.structure.d1()..]
    }

    pub fn point(&self, k: usize) -> GroupElement {
        GroupElement::new(self.x1(k).to_vec(), self.x2(k).to_vec())
    }

    pub fn points(&self) -> Vec<GroupElement> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    /// `ω_s⁻¹ ω_t` for grid indices `s, t`.
    pub fn increment(&self, s: usize, t: usize) -> GroupElement {
        self.structure.increment_unchecked(&self.point(s), &self.point(t))
    }

    pub fn first_level(&self) -> HorizontalPath {
        let d1 = self.structure.d1();
        let mut values = Vec::with_capacity(self.len() * d1);
        for k in 0..self.len() {
            values.extend_from_slice(self.x1(k));
        }
        HorizontalPath { level: self.level, d1, values }
    }

    /// Restriction to the coarser grid of level `n`.
    pub fn coarsen(&self, n: u32) -> Result<Self> {
        if n > self.level {
            return Err(Error::Domain(format!(
                "cannot refine a group path from level {} to {n}; refine the generating data instead",
                self.level
            )));
        }
        let stride = 1usize << (self.level - n);
        let mut data = Vec::with_capacity(points_at(n) * self.width());
        for k in 0..points_at(n) {
            data.extend_from_slice(self.coords(k * stride));
        }
        Ok(Self { structure: self.structure.clone(), level: n, data })
    }

    /// `t ↦ ω_t · (0, θ(t))`; the vertical layer is central so this only
    /// adds to second-level coordinates. `θ(0)` must vanish.
    pub fn add_vertical<F: Fn(f64) -> Vec<f64>>(&self, theta: F) -> Result<Self> {
        let d1 = self.structure.d1();
        let d2 = self.structure.d2();
        let w = self.width();
        let mut data = self.data.clone();
        let last = (self.len() - 1) as f64;
        for k in 0..self.len() {
            let th = theta(k as f64 / last);
            if th.len() != d2 {
                return Err(Error::Dimension(format!("vertical perturbation has {} coordinates, expected {d2}", th.len())));
            }
            for (i, v) in th.iter().enumerate() {
                data[k * w + d1 + i] += v;
            }
        }
        Self::from_flat(&self.structure, self.level, data)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.structure.d1()).map(|i| format!("x1_{i}")));
        header.extend((1..=self.structure.d2()).map(|i| format!("x2_{i}")));
        w.write_record(&header)?;
        let last = (self.len() - 1) as f64;
        for k in 0..self.len() {
            let mut row = vec![format!("{}", k as f64 / last)];
            row.extend(self.coords(k).iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(structure: &CarnotStructure, path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let width = structure.d1() + structure.d2();
        let mut data = Vec::new();
        let mut rows = 0usize;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != width + 1 {
                return Err(Error::Dimension(format!("CSV row has {} columns, expected {}", rec.len(), width + 1)));
            }
            for field in rec.iter().skip(1) {
                data.push(field.trim().parse::<f64>().map_err(|e| Error::Input(format!("bad number {field:?}: {e}")))?);
            }
            rows += 1;
        }
        if rows < 2 || !(rows - 1).is_power_of_two() {
            return Err(Error::Input(format!("{rows} rows is not a dyadic grid")));
        }
        Self::from_flat(structure, (rows - 1).trailing_zeros(), data)
    }
}

/// Canonical lift of a piecewise-linear path, evaluated at level `out_level`.
///
/// Over a segment from `p` to `q` the second level gains `½ W(p ⊗ q)`,
/// which is the product `(p, z)·(q − p, 0)`; the lift is therefore the
/// running product of the increments.
pub fn lift(g: &CarnotStructure, h: &HorizontalPath, out_level: u32) -> Result<DyadicGroupPath> {
    if out_level < h.level {
        return Err(Error::Domain(format!("lift level {out_level} is below the path level {}", h.level)));
    }
    if h.d1 != g.d1() {
        return Err(Error::Dimension(format!("path in R^{} for structure with d1 = {}", h.d1, g.d1())));
    }
    let h = h.at_level(out_level);
    let (d1, d2) = (g.d1(), g.d2());
    let n = h.len();
    let mut data = Vec::with_capacity(n * (d1 + d2));
    data.extend(std::iter::repeat(0.0).take(d1 + d2));
    let mut z = vec![0.0; d2];
    for k in 1..n {
        let p = h.point(k - 1);
        let q = h.point(k);
        g.bracket_add(p, q, 0.5, &mut z);
        data.extend_from_slice(q);
        data.extend_from_slice(&z);
    }
    Ok(DyadicGroupPath { structure: g.clone(), level: out_level, data })
}

fn check_compatible(x: &DyadicGroupPath, h: &HorizontalPath) -> Result<()> {
    if h.d1 != x.structure.d1() {
        return Err(Error::Dimension(format!("shift direction in R^{} for d1 = {}", h.d1, x.structure.d1())));
    }
    if h.level > x.level {
        return Err(Error::Domain(format!("shift direction level {} exceeds path level {}", h.level, x.level)));
    }
    Ok(())
}

/// Shift `T_h X`. The first level gains `h`; the second level gains
/// `½ W(∫x⊗dh + ∫h⊗dx + ∫h⊗dh)`, the cross integrals taken exactly for
/// the piecewise-linear interpolations of `x = π₁X` and `h`.
pub fn shift(x: &DyadicGroupPath, h: &HorizontalPath) -> Result<DyadicGroupPath> {
    check_compatible(x, h)?;
    let g = &x.structure;
    let (d1, d2) = (g.d1(), g.d2());
    let h = h.at_level(x.level);
    let n = x.len();
    let mut data = Vec::with_capacity(x.data.len());
    data.extend(std::iter::repeat(0.0).take(d1 + d2));
    let mut cross = vec![0.0; d2];
    let mut mid_x = vec![0.0; d1];
    let mut mid_h = vec![0.0; d1];
    let mut dx = vec![0.0; d1];
    let mut dh = vec![0.0; d1];
    for k in 1..n {
        let (xa, xb) = (x.x1(k - 1), x.x1(k));
        let (ha, hb) = (h.point(k - 1), h.point(k));
        for i in 0..d1 {
            dx[i] = xb[i] - xa[i];
            dh[i] = hb[i] - ha[i];
            mid_x[i] = 0.5 * (xa[i] + xb[i]);
            mid_h[i] = 0.5 * (ha[i] + hb[i]);
        }
        g.bracket_add(&mid_x, &dh, 0.5, &mut cross);
        g.bracket_add(&mid_h, &dx, 0.5, &mut cross);
        g.bracket_add(ha, &dh, 0.5, &mut cross);
        data.extend(xb.iter().zip(hb).map(|(a, b)| a + b));
        data.extend(x.x2(k).iter().zip(&cross).map(|(a, c)| a + c));
    }
    Ok(DyadicGroupPath { structure: g.clone(), level: x.level, data })
}

/// `θ_{s,t} = ∫_s^t W(h_{s,r} ⊗ dX_r)`, the vertical discrepancy between
/// `(T_h X)_{s,t}` and `Ψ(h)_{s,t} · X_{s,t}`.
pub fn noncomm_error(x: &DyadicGroupPath, h: &HorizontalPath, s: usize, t: usize) -> Result<Vec<f64>> {
    check_compatible(x, h)?;
    if s > t || t >= x.len() {
        return Err(Error::Domain(format!("interval ({s}, {t}) outside grid of {} points", x.len())));
    }
    let g = &x.structure;
    let d1 = g.d1();
    let h = h.at_level(x.level);
    let hs = h.point(s).to_vec();
    let mut theta = vec![0.0; g.d2()];
    let mut mid = vec![0.0; d1];
    let mut dx = vec![0.0; d1];
    for k in (s + 1)..=t {
        let (ha, hb) = (h.point(k - 1), h.point(k));
        let (xa, xb) = (x.x1(k - 1), x.x1(k));
        for i in 0..d1 {
            mid[i] = 0.5 * (ha[i] + hb[i]) - hs[i];
            dx[i] = xb[i] - xa[i];
        }
        g.bracket_add(&mid, &dx, 1.0, &mut theta);
    }
    Ok(theta)
}

fn check_pair(x: &DyadicGroupPath, y: &DyadicGroupPath) -> Result<()> {
    if x.structure != y.structure {
        return Err(Error::Dimension(format!(
            "paths on different structures {} and {}",
            x.structure.name(),
            y.structure.name()
        )));
    }
    Ok(())
}

/// `C_n(X, Y)²  = 2ⁿ Σ_k d_cc²(X_{t_{k−1}, t_k}, Y_{t_{k−1}, t_k})` over the
/// level-`n` grid, summed in increasing `k`.
pub fn cc_cost_n_squared(x: &DyadicGroupPath, y: &DyadicGroupPath, n: u32, metric: &dyn CcMetric) -> Result<f64> {
    check_pair(x, y)?;
    if n > x.level || n > y.level {
        return Err(Error::Domain(format!(
            "cost level {n} exceeds path levels ({}, {})",
            x.level, y.level
        )));
    }
    let sx = 1usize << (x.level - n);
    let sy = 1usize << (y.level - n);
    let mut total = 0.0;
    for k in 1..=(1usize << n) {
        let a = x.increment((k - 1) * sx, k * sx);
        let b = y.increment((k - 1) * sy, k * sy);
        let d = metric.distance_with_stream(&a, &b, k as u64)?;
        total += d * d;
    }
    Ok(total * (1u64 << n) as f64)
}

pub fn cc_cost_n(x: &DyadicGroupPath, y: &DyadicGroupPath, n: u32, metric: &dyn CcMetric) -> Result<f64> {
    Ok(cc_cost_n_squared(x, y, n, metric)?.sqrt())
}

/// `c_n(x, y) = (2ⁿ Σ_k |Δ_k(y − x)|²)^{1/2}` on the level-`n` grid;
/// inputs on other grids are interpolated or subsampled.
pub fn euclidean_cost_n(x: &HorizontalPath, y: &HorizontalPath, n: u32) -> Result<f64> {
    Ok(y.sub(x)?.at_level(n).cm_norm())
}

/// A cost in `[0, ∞]` with infinity as its own variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ExtendedCost {
    Finite(f64),
    Infinite,
}

impl ExtendedCost {
    pub fn finite(self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(v),
            Self::Infinite => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Self::Finite(_))
    }

    /// Square of the cost, keeping infinity explicit.
    pub fn squared(self) -> Self {
        match self {
            Self::Finite(v) => Self::Finite(v * v),
            Self::Infinite => Self::Infinite,
        }
    }
}

impl fmt::Display for ExtendedCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(v) => write!(f, "{v}"),
            Self::Infinite => f.write_str("inf"),
        }
    }
}

/// Default shift-detection tolerance for [`cameron_martin_cost`]:
/// `1e−8 · (1 + sup_t |X_t|_gauge)`.
pub fn default_shift_tolerance(x: &DyadicGroupPath) -> f64 {
    let sup = (0..x.len()).map(|k| x.structure.gauge_norm(&x.point(k))).fold(0.0, f64::max);
    1e-8 * (1.0 + sup)
}

/// `C_H(X, Y)`. With `h = π₁Y − π₁X`, the cost is `‖h‖_H` if `T_h X`
/// matches `Y` coordinate-wise within `tol` at every grid point.
pub fn cameron_martin_cost(x: &DyadicGroupPath, y: &DyadicGroupPath, tol: Option<f64>) -> Result<ExtendedCost> {
    check_pair(x, y)?;
    if x.level != y.level {
        return Err(Error::Domain(format!("paths at levels {} and {}", x.level, y.level)));
    }
    let h = y.first_level().sub(&x.first_level())?;
    let shifted = shift(x, &h)?;
    let tol = tol.unwrap_or_else(|| default_shift_tolerance(x));
    let deviation = shifted.data.iter().zip(&y.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(if deviation <= tol {
        ExtendedCost::Finite(h.cm_norm())
    } else {
        ExtendedCost::Infinite
    })
}

/// `max_k d_cc(X_{t_k}, Y_{t_k})` over the common grid.
pub fn uniform_distance(x: &DyadicGroupPath, y: &DyadicGroupPath, metric: &dyn CcMetric) -> Result<f64> {
    check_pair(x, y)?;
    if x.level != y.level {
        return Err(Error::Domain(format!("paths at levels {} and {}", x.level, y.level)));
    }
    let mut sup: f64 = 0.0;
    for k in 0..x.len() {
        sup = sup.max(metric.distance_with_stream(&x.point(k), &y.point(k), k as u64)?);
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cc_metric::HeisenbergMetric;

    fn h1() -> CarnotStructure {
        CarnotStructure::heisenberg(1)
    }

    fn square_loop() -> HorizontalPath {
        HorizontalPath::new(2, 2, vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn lift_examples() {
        let g = h1();
        let ray = lift(&g, &HorizontalPath::linear(3, &[1.0, 0.0]), 3).unwrap();
        for k in 0..ray.len() {
            assert_eq!(ray.x2(k), &[0.0]);
            assert_eq!(ray.x1(k), &[k as f64 / 8.0, 0.0]);
        }
        let sq = lift(&g, &square_loop(), 5).unwrap();
        let end = sq.point(sq.len() - 1);
        assert_eq!(end.x1, vec![0.0, 0.0]);
        assert!((end.x2[0] - 1.0).abs() < 1e-15);
        let diag = lift(&g, &HorizontalPath::linear(0, &[1.0, 1.0]), 0).unwrap();
        assert_eq!(diag.x2(1), &[0.0]);
        assert!(matches!(lift(&g, &square_loop(), 1), Err(Error::Domain(_))));
    }

    #[test]
    fn refinement_preserves_cm_norm() {
        let h = square_loop();
        assert_eq!(h.cm_norm_sq(), 16.0);
        assert!((h.at_level(6).cm_norm_sq() - 16.0).abs() < 1e-12);
        assert_eq!(h.at_level(6).at_level(2), h);
    }

    #[test]
    fn shift_examples() {
        let g = h1();
        let h = square_loop();
        let zero = DyadicGroupPath::constant(&g, 3);
        let lifted = lift(&g, &h, 3).unwrap();
        let s = shift(&zero, &h).unwrap();
        for (a, b) in s.data.iter().zip(&lifted.data) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(shift(&lifted, &HorizontalPath::zero(3, 2)).unwrap(), lifted);
        let back = shift(&shift(&lifted, &h).unwrap(), &h.scale(-1.0)).unwrap();
        for (a, b) in back.data.iter().zip(&lifted.data) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn noncomm_examples() {
        let g = h1();
        let h = HorizontalPath::linear(4, &[1.0, 0.0]);
        let x = lift(&g, &HorizontalPath::linear(4, &[0.0, 1.0]), 4).unwrap();
        let th = noncomm_error(&x, &h, 0, 16).unwrap();
        assert!((th[0] - 0.5).abs() < 1e-14);
        let still = DyadicGroupPath::constant(&g, 4);
        assert_eq!(noncomm_error(&still, &h, 3, 9).unwrap(), vec![0.0]);
        assert!(noncomm_error(&x, &h, 0, 17).is_err());
    }

    #[test]
    fn cost_examples() {
        let g = h1();
        let m = HeisenbergMetric::h1();
        let h = HorizontalPath::linear(6, &[1.0, 0.0]);
        let zero = DyadicGroupPath::constant(&g, 6);
        let lifted = lift(&g, &h, 6).unwrap();
        for n in 0..=6 {
            assert!((cc_cost_n(&zero, &lifted, n, &m).unwrap() - 1.0).abs() < 1e-12);
            assert!((euclidean_cost_n(&zero.first_level(), &h, n).unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(cc_cost_n(&lifted, &lifted, 4, &m).unwrap(), 0.0);
        assert!(cc_cost_n(&zero, &lifted, 7, &m).is_err());
        assert!((uniform_distance(&zero, &lifted, &m).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(uniform_distance(&lifted, &lifted, &m).unwrap(), 0.0);
    }

    #[test]
    fn cameron_martin_cost_examples() {
        let g = h1();
        let h = square_loop().at_level(4);
        let zero = DyadicGroupPath::constant(&g, 4);
        let lifted = lift(&g, &h, 4).unwrap();
        assert_eq!(cameron_martin_cost(&zero, &lifted, None).unwrap(), ExtendedCost::Finite(4.0));
        let bumped = lifted.add_vertical(|t| vec![0.1 * t]).unwrap();
        assert_eq!(cameron_martin_cost(&lifted, &bumped, None).unwrap(), ExtendedCost::Infinite);
        assert_eq!(ExtendedCost::Infinite.to_string(), "inf");
    }

    #[test]
    fn csv_roundtrip() {
        let g = CarnotStructure::heisenberg(2);
        let h = HorizontalPath::from_fn(3, 4, |t| vec![t, t * t, -t, (3.0 * t).sin()]).unwrap();
        let x = lift(&g, &h, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        x.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,x1_1,x1_2,x1_3,x1_4,x2_1\n"));
        assert_eq!(DyadicGroupPath::read_csv(&g, &p).unwrap(), x);
    }

    #[test]
    fn group_paths_cannot_be_refined() {
        let g = h1();
        let x = DyadicGroupPath::constant(&g, 2);
        assert!(matches!(x.coarsen(3), Err(Error::Domain(_))));
        assert_eq!(x.coarsen(1).unwrap().len(), 3);
    }
}
