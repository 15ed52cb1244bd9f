//! Monte Carlo summaries and least-squares fits.

use serde::Serialize;

use crate::rng;

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

/// Sample mean and its standard error, summed in index order.
pub fn mean_estimate(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    if n == 0 {
        return MeanEstimate { mean: f64::NAN, std_error: f64::NAN, count: 0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    MeanEstimate { mean, std_error: (var / n as f64).sqrt(), count: n }
}

/// Unbiased sample variance with the standard error of that variance
/// estimate (fourth-moment formula).
pub fn variance_estimate(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    let m = mean_estimate(values).mean;
    let sq: Vec<f64> = values.iter().map(|v| (v - m).powi(2)).collect();
    let var = sq.iter().sum::<f64>() / (n as f64 - 1.0);
    let m4 = sq.iter().map(|s| s * s).sum::<f64>() / n as f64;
    let nf = n as f64;
    let se = ((m4 - var * var * (nf - 3.0) / (nf - 1.0)) / nf).max(0.0).sqrt();
    MeanEstimate { mean: var, std_error: se, count: n }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_std_error = if x.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    LinearFit { slope, intercept, slope_std_error }
}

/// Percentile bootstrap over resampled indices; `statistic` receives the
/// resampled index list. Returns the sorted replicate values.
pub fn bootstrap<F>(n: usize, resamples: usize, seed: u64, mut statistic: F) -> Vec<f64>
where
    F: FnMut(&[usize]) -> f64,
{
    let mut out = Vec::with_capacity(resamples);
    let mut idx = vec![0usize; n];
    for r in 0..resamples {
        let mut s = rng::stream(seed, r as u64);
        for slot in idx.iter_mut() {
            *slot = ((rng::uniform(&mut s) * n as f64) as usize).min(n - 1);
        }
        out.push(statistic(&idx));
    }
    out.sort_by(|a, b| a.total_cmp(b));
    out
}

/// Linear-interpolated quantile of a sorted slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile(&v, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_error() {
        let e = mean_estimate(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.std_error - (1.666_666_666_666_666_7f64 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn exact_line_fit() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v - 1.0).collect();
        let f = linear_fit(&x, &y);
        assert!((f.slope - 0.5).abs() < 1e-14);
        assert!((f.intercept + 1.0).abs() < 1e-14);
    }

    #[test]
    fn quantiles() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.125), 0.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
