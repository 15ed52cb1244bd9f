//! Browser bindings for the demo page in `www/`.
//!
//! All arrays cross the boundary flattened: points as `[x, y, z, x, y, z, …]`
//! and curves as `[n, value, n, value, …]`.

use wasm_bindgen::prelude::*;

use carnot_core::cc_metric::{heisenberg_geodesic, CcMetric, HeisenbergMetric};
use carnot_core::gamma::{blowup_experiment, Perturbation};
use carnot_core::path::{lift, HorizontalPath};
use carnot_core::sampling::brownian_driver;
use carnot_core::{CarnotStructure, GroupElement, Result};

fn js(e: carnot_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn flatten(points: &[GroupElement]) -> Vec<f64> {
    points.iter().flat_map(|p| p.coords()).collect()
}

fn geodesic_points(x: f64, y: f64, z: f64, samples: usize) -> Result<Vec<f64>> {
    let g = CarnotStructure::heisenberg(1);
    let target = GroupElement::new(vec![x, y], vec![z]);
    Ok(flatten(&heisenberg_geodesic(&g, &g.identity(), &target, samples)?))
}

fn brownian_points(level: u32, seed: u64, index: u64) -> Result<Vec<f64>> {
    let g = CarnotStructure::heisenberg(1);
    let level = level.min(14);
    Ok(flatten(&lift(&g, &brownian_driver(2, level, seed, index), level)?.points()))
}

fn blowup_points(max_level: u32, trials: usize, seed: u64) -> Result<Vec<f64>> {
    let g = CarnotStructure::heisenberg(1);
    let shift = Perturbation::Shift(HorizontalPath::linear(0, &[1.0, 0.0]));
    let run = blowup_experiment(&g, &shift, 3..=max_level.clamp(5, 10), trials.max(2), seed, &HeisenbergMetric::h1())?;
    Ok(run.levels.iter().flat_map(|l| [l.n as f64, l.mean_cost_sq.mean]).collect())
}

/// CC distance from the identity to `(x, y, z)` on the Heisenberg group.
#[wasm_bindgen]
pub fn cc_distance(x: f64, y: f64, z: f64) -> std::result::Result<f64, JsError> {
    HeisenbergMetric::h1().norm(&GroupElement::new(vec![x, y], vec![z])).map_err(js)
}

/// `samples + 1` points of a geodesic from the identity to `(x, y, z)`.
#[wasm_bindgen]
pub fn geodesic(x: f64, y: f64, z: f64, samples: usize) -> std::result::Result<Vec<f64>, JsError> {
    geodesic_points(x, y, z, samples).map_err(js)
}

/// A lifted Brownian path at dyadic `level`; the last `z` is the Lévy area.
#[wasm_bindgen]
pub fn brownian_sample(level: u32, seed: u32, index: u32) -> std::result::Result<Vec<f64>, JsError> {
    brownian_points(level, seed.into(), index.into()).map_err(js)
}

/// Mean discretized cost `C_n²(B, T_h B)` for `h = (t, 0)`, `n = 3..=max_level`.
#[wasm_bindgen]
pub fn blowup_curve(max_level: u32, trials: usize, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    blowup_points(max_level, trials, seed.into()).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geodesic_ends_at_target() {
        let p = geodesic_points(0.3, -0.2, 0.5, 32).unwrap();
        assert_eq!(p.len(), 33 * 3);
        assert!(p[..3].iter().all(|v| v.abs() < 1e-12));
        let end = &p[p.len() - 3..];
        assert!((end[0] - 0.3).abs() < 1e-9 && (end[1] + 0.2).abs() < 1e-9 && (end[2] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn brownian_sample_shape_and_determinism() {
        let a = brownian_points(6, 1, 2).unwrap();
        assert_eq!(a.len(), 65 * 3);
        assert_eq!(a, brownian_points(6, 1, 2).unwrap());
        assert_ne!(a, brownian_points(6, 1, 3).unwrap());
    }

    #[test]
    fn blowup_curve_grows() {
        let c = blowup_points(7, 20, 3).unwrap();
        assert_eq!(c.len(), 2 * 5);
        assert!(c[c.len() - 1] > c[1]);
    }
}
