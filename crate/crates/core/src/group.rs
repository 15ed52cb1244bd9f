//! Step-2 Carnot groups in exponential coordinates.
//!
//! A group is identified with `R^{d1} ⊕ R^{d2}`. The product is the
//! Baker–Campbell–Hausdorff law truncated at step two,
//!
//! ```text
//! (x1, x2) · (y1, y2) = (x1 + y1, x2 + y2 + ½ W(x1 ⊗ y1)),
//! ```
//!
//! where `W A = Σ_ij w_ij A_ij` is built from antisymmetric structure
//! constants `w_ij ∈ R^{d2}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used by [`CarnotStructure::h_type_check`].
pub const H_TYPE_TOLERANCE: f64 = 1e-10;

/// A point of the group: first (horizontal) and second (vertical) layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

impl GroupElement {
    pub fn new(x1: Vec<f64>, x2: Vec<f64>) -> Self {
        Self { x1, x2 }
    }

    pub fn identity(d1: usize, d2: usize) -> Self {
        Self {
            x1: vec![0.0; d1],
            x2: vec![0.0; d2],
        }
    }

    /// Builds an element from a flat coordinate slice `[x1..., x2...]`.
    pub fn from_coords(coords: &[f64], d1: usize) -> Self {
        Self {
            x1: coords[..d1].to_vec(),
            x2: coords[d1..].to_vec(),
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        let mut out = self.x1.clone();
        out.extend_from_slice(&self.x2);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.x1.iter().chain(&self.x2).all(|v| v.is_finite())
    }
}

/// Structure constants of a step-2 Carnot group.
///
/// Only entries with `i < j` are ever supplied; the lower triangle is
/// materialized as the negation, so antisymmetry holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CarnotStructure {
    name: String,
    d1: usize,
    d2: usize,
    /// Dense tensor, index `(i * d1 + j) * d2 + k`.
    w: Vec<f64>,
    /// Nonzero upper-triangular entries `(i, j, k, value)`, `i < j`.
    upper: Vec<(usize, usize, usize, f64)>,
}

/// JSON document form: `{name, d1, d2, w: [[i, j, k, value], ...]}` with
/// zero-based indices and `i < j` entries only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureDocument {
    pub name: String,
    pub d1: usize,
    pub d2: usize,
    pub w: Vec<(usize, usize, usize, f64)>,
}

impl CarnotStructure {
    /// Builds a structure from its strictly upper-triangular entries.
    pub fn from_upper(
        name: impl Into<String>,
        d1: usize,
        d2: usize,
        entries: &[(usize, usize, usize, f64)],
    ) -> Result<Self> {
        if d1 == 0 {
            return Err(Error::Domain("horizontal dimension must be positive".into()));
        }
        let mut w = vec![0.0; d1 * d1 * d2];
        for &(i, j, k, value) in entries {
            if i >= j {
                return Err(Error::Input(format!(
                    "structure constant ({i},{j},{k}) must satisfy i < j"
                )));
            }
            if j >= d1 || k >= d2 {
                return Err(Error::Dimension(format!(
                    "structure constant ({i},{j},{k}) out of range for d1={d1}, d2={d2}"
                )));
            }
            if !value.is_finite() {
                return Err(Error::Input(format!("non-finite structure constant at ({i},{j},{k})")));
            }
            w[(i * d1 + j) * d2 + k] += value;
            w[(j * d1 + i) * d2 + k] -= value;
        }
        let mut upper = Vec::new();
        for i in 0..d1 {
            for j in (i + 1)..d1 {
                for k in 0..d2 {
                    let v = w[(i * d1 + j) * d2 + k];
                    if v != 0.0 {
                        upper.push((i, j, k, v));
                    }
                }
            }
        }
        Ok(Self {
            name: name.into(),
            d1,
            d2,
            w,
            upper,
        })
    }

    /// Heisenberg group `H^n`: `d1 = 2n`, `d2 = 1`, `w_{2m-1,2m} = 1`.
    pub fn heisenberg(n: usize) -> Self {
        assert!(n >= 1, "Heisenberg group needs n >= 1");
        let entries: Vec<_> = (0..n).map(|m| (2 * m, 2 * m + 1, 0, 1.0)).collect();
        Self::from_upper(format!("heisenberg-{n}"), 2 * n, 1, &entries)
            .expect("valid Heisenberg constants")
    }

    /// Free step-2 group on `d1` generators; the vertical basis is indexed by
    /// pairs `i < j` in lexicographic order and the constants are Kronecker
    /// symbols.
    pub fn free(d1: usize) -> Self {
        assert!(d1 >= 2, "free step-2 group needs d1 >= 2");
        let mut entries = Vec::new();
        let mut k = 0;
        for i in 0..d1 {
            for j in (i + 1)..d1 {
                entries.push((i, j, k, 1.0));
                k += 1;
            }
        }
        Self::from_upper(format!("free-{d1}-2"), d1, k, &entries).expect("valid free constants")
    }

    /// Euclidean `R^{d1}` viewed as a group with an empty vertical layer.
    pub fn euclidean(d1: usize) -> Self {
        Self::from_upper(format!("euclidean-{d1}"), d1, 0, &[]).expect("valid abelian structure")
    }

    /// Looks up one of the shipped presets by name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "heisenberg-1" | "H1" => Some(Self::heisenberg(1)),
            "heisenberg-2" | "H2" => Some(Self::heisenberg(2)),
            "free-2-2" | "F22" => Some(Self::free(2)),
            "free-3-2" | "F32" => Some(Self::free(3)),
            _ => None,
        }
    }

    pub fn presets() -> Vec<Self> {
        vec![Self::heisenberg(1), Self::heisenberg(2), Self::free(2), Self::free(3)]
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    /// Homogeneous dimension `Q = d1 + 2 d2`.
    pub fn homogeneous_dimension(&self) -> usize {
        self.d1 + 2 * self.d2
    }

    pub fn w(&self, i: usize, j: usize, k: usize) -> f64 {
        self.w[(i * self.d1 + j) * self.d2 + k]
    }

    pub fn upper_entries(&self) -> &[(usize, usize, usize, f64)] {
        &self.upper
    }

    /// Returns `Some(n)` when the constants are exactly those of `H^n`.
    pub fn heisenberg_rank(&self) -> Option<usize> {
        if self.d2 != 1 || self.d1 % 2 != 0 || self.d1 == 0 {
            return None;
        }
        let n = self.d1 / 2;
        if self.upper.len() != n {
            return None;
        }
        let matches = self
            .upper
            .iter()
            .all(|&(i, j, _, v)| i % 2 == 0 && j == i + 1 && v == 1.0);
        matches.then_some(n)
    }

    pub fn document(&self) -> StructureDocument {
        StructureDocument {
            name: self.name.clone(),
            d1: self.d1,
            d2: self.d2,
            w: self.upper.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: StructureDocument = serde_json::from_str(text)?;
        Self::try_from(doc)
    }

    pub fn check_element(&self, a: &GroupElement) -> Result<()> {
        if a.x1.len() != self.d1 || a.x2.len() != self.d2 {
            return Err(Error::Dimension(format!(
                "element has shape ({}, {}), structure {} expects ({}, {})",
                a.x1.len(),
                a.x2.len(),
                self.name,
                self.d1,
                self.d2
            )));
        }
        Ok(())
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement::identity(self.d1, self.d2)
    }

    /// Adds `W(u ⊗ v)` into `out` without allocating.
    #[inline]
    pub fn bracket_add(&self, u: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        for &(i, j, k, wv) in &self.upper {
            out[k] += scale * wv * (u[i] * v[j] - u[j] * v[i]);
        }
    }

    /// `W(u ⊗ v)` for vectors `u, v ∈ R^{d1}`.
    pub fn bracket(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d2];
        self.bracket_add(u, v, 1.0, &mut out);
        out
    }

    /// `W A` for a row-major `d1 × d1` matrix.
    pub fn w_apply(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.d1 * self.d1 {
            return Err(Error::Dimension(format!(
                "matrix has {} entries, expected {}",
                a.len(),
                self.d1 * self.d1
            )));
        }
        let mut out = vec![0.0; self.d2];
        for &(i, j, k, wv) in &self.upper {
            out[k] += wv * (a[i * self.d1 + j] - a[j * self.d1 + i]);
        }
        Ok(out)
    }

    pub fn product(&self, a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
        self.check_element(a)?;
        self.check_element(b)?;
        Ok(self.product_unchecked(a, b))
    }

    pub(crate) fn product_unchecked(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        let x1 = a.x1.iter().zip(&b.x1).map(|(p, q)| p + q).collect();
        let mut x2: Vec<f64> = a.x2.iter().zip(&b.x2).map(|(p, q)| p + q).collect();
        self.bracket_add(&a.x1, &b.x1, 0.5, &mut x2);
        GroupElement { x1, x2 }
    }

    pub fn inverse(&self, a: &GroupElement) -> Result<GroupElement> {
        self.check_element(a)?;
        Ok(inverse_unchecked(a))
    }

    /// `a^{-1} b`, the increment from `a` to `b`.
    pub fn increment(&self, a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
        self.check_element(a)?;
        self.check_element(b)?;
        Ok(self.increment_unchecked(a, b))
    }

    pub(crate) fn increment_unchecked(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        let x1 = a.x1.iter().zip(&b.x1).map(|(p, q)| q - p).collect();
        let mut x2: Vec<f64> = a.x2.iter().zip(&b.x2).map(|(p, q)| q - p).collect();
        // (-a1, -a2)·(b1, b2): vertical gains ½ W(-a1 ⊗ b1)
        self.bracket_add(&a.x1, &b.x1, -0.5, &mut x2);
        GroupElement { x1, x2 }
    }

    pub fn dilate(&self, s: f64, a: &GroupElement) -> Result<GroupElement> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Domain(format!("dilation factor must be positive, got {s}")));
        }
        self.check_element(a)?;
        Ok(dilate_unchecked(s, a))
    }

    /// Gauge norm `|x1| + |x2|^{1/2}`.
    pub fn gauge_norm(&self, a: &GroupElement) -> f64 {
        norm(&a.x1) + norm(&a.x2).sqrt()
    }

    /// Gauge distance `d_g(a, b) = |(b^{-1}a)_1| + |(b^{-1}a)_2|^{1/2}`.
    pub fn gauge_distance(&self, a: &GroupElement, b: &GroupElement) -> Result<f64> {
        self.check_element(a)?;
        self.check_element(b)?;
        Ok(self.gauge_norm(&self.increment_unchecked(b, a)))
    }

    /// Linear map `J(e_k)` as a row-major `d1 × d1` matrix, with
    /// `J(e_k)[j][i] = w_ij^k` so that `<W(x ⊗ y), e_k> = <J(e_k) x, y>`.
    pub fn j_map(&self, k: usize) -> Vec<f64> {
        let d = self.d1;
        let mut j = vec![0.0; d * d];
        for row in 0..d {
            for col in 0..d {
                j[row * d + col] = self.w(col, row, k);
            }
        }
        j
    }

    /// Tests the H-type condition `J(e_k) J(e_l) + J(e_l) J(e_k) = -2 δ_kl I`.
    pub fn h_type_check(&self) -> HTypeReport {
        if self.d2 == 0 {
            return HTypeReport {
                is_h_type: false,
                max_violation: f64::NAN,
                worst_pair: None,
                reason: Some("abelian vertical layer empty".into()),
            };
        }
        let d = self.d1;
        let maps: Vec<Vec<f64>> = (0..self.d2).map(|k| self.j_map(k)).collect();
        let mut max_violation = 0.0f64;
        let mut worst_pair = (0, 0);
        for k in 0..self.d2 {
            for l in k..self.d2 {
                let kl = matmul(&maps[k], &maps[l], d);
                let lk = matmul(&maps[l], &maps[k], d);
                for r in 0..d {
                    for c in 0..d {
                        let target = if k == l && r == c { -2.0 } else { 0.0 };
                        let v = (kl[r * d + c] + lk[r * d + c] - target).abs();
                        if v > max_violation {
                            max_violation = v;
                            worst_pair = (k, l);
                        }
                    }
                }
            }
        }
        let is_h_type = max_violation <= H_TYPE_TOLERANCE;
        HTypeReport {
            is_h_type,
            max_violation,
            worst_pair: Some(worst_pair),
            reason: (!is_h_type).then(|| {
                format!(
                    "anti-commutation violated by {max_violation:.3e} at pair {worst_pair:?}"
                )
            }),
        }
    }
}

impl TryFrom<StructureDocument> for CarnotStructure {
    type Error = Error;

    fn try_from(doc: StructureDocument) -> Result<Self> {
        Self::from_upper(doc.name, doc.d1, doc.d2, &doc.w)
    }
}

/// Outcome of [`CarnotStructure::h_type_check`].
#[derive(Debug, Clone, Serialize)]
pub struct HTypeReport {
    pub is_h_type: bool,
    pub max_violation: f64,
    pub worst_pair: Option<(usize, usize)>,
    pub reason: Option<String>,
}

pub(crate) fn inverse_unchecked(a: &GroupElement) -> GroupElement {
    GroupElement {
        x1: a.x1.iter().map(|v| -v).collect(),
        x2: a.x2.iter().map(|v| -v).collect(),
    }
}

pub(crate) fn dilate_unchecked(s: f64, a: &GroupElement) -> GroupElement {
    GroupElement {
        x1: a.x1.iter().map(|v| s * v).collect(),
        x2: a.x2.iter().map(|v| s * s * v).collect(),
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for r in 0..d {
        for m in 0..d {
            let arm = a[r * d + m];
            if arm == 0.0 {
                continue;
            }
            for c in 0..d {
                out[r * d + c] += arm * b[m * d + c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h1() -> CarnotStructure {
        CarnotStructure::heisenberg(1)
    }

    fn el(c: &[f64]) -> GroupElement {
        GroupElement::from_coords(c, 2)
    }

    #[test]
    fn heisenberg_product_examples() {
        let g = h1();
        let ab = g.product(&el(&[1.0, 0.0, 0.0]), &el(&[0.0, 1.0, 0.0])).unwrap();
        assert_eq!(ab.coords(), vec![1.0, 1.0, 0.5]);
        let abc = g.product(&ab, &el(&[0.0, 0.0, 1.0])).unwrap();
        assert_eq!(abc.coords(), vec![1.0, 1.0, 1.5]);
    }

    #[test]
    fn inverse_is_negation() {
        let g = h1();
        let a = el(&[1.0, 2.0, 3.0]);
        assert_eq!(g.inverse(&a).unwrap().coords(), vec![-1.0, -2.0, -3.0]);
        assert_eq!(g.inverse(&g.identity()).unwrap(), g.identity());
        let id = g.product(&a, &g.inverse(&a).unwrap()).unwrap();
        assert_eq!(id.coords(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn dilation_examples() {
        let g = h1();
        let a = el(&[1.0, 1.0, 1.0]);
        assert_eq!(g.dilate(2.0, &a).unwrap().coords(), vec![2.0, 2.0, 4.0]);
        assert_eq!(g.dilate(1.0, &a).unwrap(), a);
        assert!(matches!(g.dilate(0.0, &a), Err(Error::Domain(_))));
        assert!(matches!(g.dilate(-1.0, &a), Err(Error::Domain(_))));
    }

    #[test]
    fn w_apply_examples() {
        let g = h1();
        assert_eq!(g.w_apply(&[0.0, 1.0, 0.0, 0.0]).unwrap(), vec![1.0]);
        assert_eq!(g.w_apply(&[0.0, 0.0, 1.0, 0.0]).unwrap(), vec![-1.0]);
        for s in CarnotStructure::presets() {
            let d = s.d1();
            let mut id = vec![0.0; d * d];
            for i in 0..d {
                id[i * d + i] = 1.0;
            }
            assert!(s.w_apply(&id).unwrap().iter().all(|v| *v == 0.0));
        }
        assert!(matches!(g.w_apply(&[1.0; 3]), Err(Error::Dimension(_))));
    }

    #[test]
    fn gauge_distance_examples() {
        let g = h1();
        let o = g.identity();
        assert_eq!(g.gauge_distance(&o, &el(&[0.0, 0.0, 4.0])).unwrap(), 2.0);
        assert_eq!(g.gauge_distance(&o, &el(&[3.0, 4.0, 0.0])).unwrap(), 5.0);
        let a = el(&[0.3, -1.2, 0.7]);
        assert_eq!(g.gauge_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn h_type_presets() {
        assert!(CarnotStructure::heisenberg(1).h_type_check().is_h_type);
        assert!(CarnotStructure::heisenberg(2).h_type_check().is_h_type);
        assert!(CarnotStructure::free(2).h_type_check().is_h_type);
        let f32 = CarnotStructure::free(3).h_type_check();
        assert!(!f32.is_h_type);
        assert!(f32.max_violation > 0.5);
        let e = CarnotStructure::euclidean(2).h_type_check();
        assert!(!e.is_h_type);
        assert_eq!(e.reason.as_deref(), Some("abelian vertical layer empty"));
    }

    #[test]
    fn heisenberg_rank_detection() {
        assert_eq!(CarnotStructure::heisenberg(1).heisenberg_rank(), Some(1));
        assert_eq!(CarnotStructure::heisenberg(2).heisenberg_rank(), Some(2));
        assert_eq!(CarnotStructure::free(2).heisenberg_rank(), Some(1));
        assert_eq!(CarnotStructure::free(3).heisenberg_rank(), None);
        let scaled = CarnotStructure::from_upper("s", 2, 1, &[(0, 1, 0, 2.0)]).unwrap();
        assert_eq!(scaled.heisenberg_rank(), None);
    }

    #[test]
    fn structure_constants_are_antisymmetric() {
        for s in CarnotStructure::presets() {
            for i in 0..s.d1() {
                for j in 0..s.d1() {
                    for k in 0..s.d2() {
                        assert_eq!(s.w(i, j, k), -s.w(j, i, k));
                    }
                }
            }
            assert_eq!(s.homogeneous_dimension(), s.d1() + 2 * s.d2());
        }
    }

    #[test]
    fn rejects_lower_triangular_entries() {
        assert!(CarnotStructure::from_upper("bad", 2, 1, &[(1, 0, 0, 1.0)]).is_err());
        assert!(CarnotStructure::from_upper("bad", 2, 1, &[(0, 2, 0, 1.0)]).is_err());
    }

    #[test]
    fn json_document_roundtrip() {
        let g = CarnotStructure::free(3);
        let text = g.to_json().unwrap();
        assert!(text.contains("\"d1\": 3"));
        assert_eq!(CarnotStructure::from_json(&text).unwrap(), g);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = h1();
        let bad = GroupElement::new(vec![1.0], vec![0.0]);
        assert!(matches!(g.product(&bad, &g.identity()), Err(Error::Dimension(_))));
        assert!(matches!(g.inverse(&bad), Err(Error::Dimension(_))));
    }
}
