//! Small least-squares helpers shared by the decay and growth fits.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// Root of the fitted line, `None` for a flat fit.
    pub fn root(&self) -> Option<f64> {
        (self.slope != 0.0).then(|| -self.intercept / self.slope)
    }
}

/// Ordinary least squares of `y` on `x`. Returns `None` with fewer than two
/// points or a degenerate abscissa.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // A perfectly flat response is a perfect fit.
    let r_squared = if syy <= f64::EPSILON * f64::EPSILON * nf * (1.0 + my * my) {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Some(LinearFit { slope, intercept, r_squared, points: n })
}

/// Fit `ln |value|` against `ln k` over geometric blocks of `[lo, hi]`.
///
/// `log_abs(k)` returns `ln |u_k|` (or `-inf` for an exact zero). Each block
/// contributes the log of its root-mean-square magnitude, which smooths out
/// the sign alternation typical of two-phase recurrences.
pub fn envelope_power_fit(
    lo: usize,
    hi: usize,
    blocks: usize,
    log_abs: impl Fn(usize) -> f64,
) -> Option<LinearFit> {
    if hi <= lo + blocks || blocks < 2 {
        return None;
    }
    let ratio = (hi as f64 / lo as f64).powf(1.0 / blocks as f64);
    let mut xs = Vec::with_capacity(blocks);
    let mut ys = Vec::with_capacity(blocks);
    let mut start = lo;
    for b in 0..blocks {
        let end = if b + 1 == blocks { hi + 1 } else { ((lo as f64) * ratio.powi(b as i32 + 1)).round() as usize };
        let end = end.max(start + 1);
        let logs: Vec<f64> = (start..end).map(&log_abs).collect();
        let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if peak.is_finite() {
            let mean_sq: f64 = logs.iter().map(|l| (2.0 * (l - peak)).exp()).sum::<f64>() / logs.len() as f64;
            let center = ((start as f64) * ((end - 1) as f64)).sqrt().max(1.0);
            xs.push(center.ln());
            ys.push(peak + 0.5 * mean_sq.ln());
        }
        start = end;
        if start > hi {
            break;
        }
    }
    linear_fit(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_recovered() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v).collect();
        let fit = linear_fit(&x, &y).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-14);
        assert!((fit.intercept - 3.0).abs() < 1e-13);
        assert!((fit.root().unwrap() - 1.5).abs() < 1e-13);
        assert!(fit.r_squared > 0.999_999);
    }

    #[test]
    fn envelope_of_power_law() {
        let fit = envelope_power_fit(100, 1000, 16, |k| -1.5 * (k as f64).ln()).unwrap();
        assert!((fit.slope + 1.5).abs() < 1e-2, "{fit:?}");
    }

    #[test]
    fn envelope_ignores_alternation() {
        let fit = envelope_power_fit(100, 1000, 16, |k| {
            let v = (1.0 + 0.9 * if k % 2 == 0 { 1.0 } else { -1.0 }) / k as f64;
            v.ln()
        })
        .unwrap();
        assert!((fit.slope + 1.0).abs() < 2e-2, "{fit:?}");
        assert!(fit.r_squared > 0.99);
    }
}
