//! Compensated sums, jackknife errors and least-squares line fits.

use serde::{Deserialize, Serialize};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn sum(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<NeumaierSum>().value()
}

pub fn mean(xs: &[f64]) -> f64 {
    sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).collect::<NeumaierSum>().value() / (n - 1) as f64
}

/// Standard error of the mean by the delete-one jackknife (identical to
/// s/√n for the mean, computed explicitly for uniformity).
pub fn jackknife_mean_se(xs: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let total = sum(xs);
    let loo: Vec<f64> = xs.iter().map(|x| (total - x) / (n - 1) as f64).collect();
    let m = mean(&loo);
    let ss = loo.iter().map(|v| (v - m) * (v - m)).collect::<NeumaierSum>().value();
    Some(((n - 1) as f64 / n as f64 * ss).sqrt())
}

/// Grouped delete-one jackknife of an arbitrary estimator. Values are split
/// into `groups` contiguous blocks.
pub fn jackknife<F: Fn(&[f64]) -> f64>(xs: &[f64], groups: usize, estimator: F) -> Option<f64> {
    let n = xs.len();
    let g = groups.min(n);
    if g < 2 {
        return None;
    }
    let bounds: Vec<usize> = (0..=g).map(|i| i * n / g).collect();
    let mut reps = Vec::with_capacity(g);
    let mut buf = Vec::with_capacity(n);
    for i in 0..g {
        buf.clear();
        buf.extend_from_slice(&xs[..bounds[i]]);
        buf.extend_from_slice(&xs[bounds[i + 1]..]);
        reps.push(estimator(&buf));
    }
    let m = mean(&reps);
    let ss = reps.iter().map(|v| (v - m) * (v - m)).collect::<NeumaierSum>().value();
    Some(((g - 1) as f64 / g as f64 * ss).sqrt())
}

/// Sample excess kurtosis and its large-sample standard error √(24/n).
pub fn excess_kurtosis(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).collect::<NeumaierSum>().value() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).collect::<NeumaierSum>().value() / n;
    (m4 / (m2 * m2) - 3.0, (24.0 / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub residuals: Vec<f64>,
}

/// Ordinary least squares y = intercept + slope·x.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx = x.iter().map(|v| (v - mx).powi(2)).collect::<NeumaierSum>().value();
    if sxx == 0.0 {
        return None;
    }
    let sxy = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect::<NeumaierSum>().value();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - intercept - slope * a).collect();
    let (slope_se, intercept_se) = if n > 2 {
        let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / (n - 2) as f64;
        ((s2 / sxx).sqrt(), (s2 * (1.0 / n as f64 + mx * mx / sxx)).sqrt())
    } else {
        (0.0, 0.0)
    };
    Some(LineFit { slope, intercept, slope_se, intercept_se, residuals })
}

/// Fit of log10 y against log10 x.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Option<LineFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.log10()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.log10()).collect();
    fit_line(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(&xs), 2.0);
    }

    #[test]
    fn jackknife_mean_matches_formula() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let se = jackknife_mean_se(&xs).unwrap();
        let direct = (variance(&xs) / xs.len() as f64).sqrt();
        assert!((se - direct).abs() < 1e-12 * direct);
        let grouped = jackknife(&xs, xs.len(), mean).unwrap();
        assert!((grouped - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14);
        assert!((f.intercept - 2.0).abs() < 1e-14);
    }
}
