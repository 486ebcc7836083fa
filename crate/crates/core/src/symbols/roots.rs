use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::trig::{circular_offset, wrap_angle, TrigPoly};
use crate::{Error, Result};

/// Tolerances for root finding and order detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootOptions {
    pub root_tol: f64,
    pub derivative_floor: f64,
    pub cluster_gap: f64,
    pub min_samples: usize,
    pub k_max: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self { root_tol: 1e-10, derivative_floor: 1e-8, cluster_gap: 1e-6, min_samples: 4096, k_max: 12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub x: f64,
    /// `a'(x)`.
    pub derivative: f64,
    /// `|a(x)|` after refinement.
    pub residual: f64,
}

/// Order of vanishing at `x`: the smallest `k >= 1` with `|a^{(k)}(x)| > floor`.
fn vanishing_order(a: &TrigPoly, x: f64, opts: &RootOptions) -> Option<usize> {
    (1..=opts.k_max).find(|&k| a.eval_derivative(k, x).abs() > opts.derivative_floor)
}

/// Refine a root candidate. A root of order `k` is a simple root of
/// `a^{(k-1)}`, so Newton is applied there; the order is re-detected after
/// every step because a multiple root looks simple from far away.
fn polish(a: &TrigPoly, mut x: f64, opts: &RootOptions) -> f64 {
    for _ in 0..200 {
        let Some(k) = vanishing_order(a, x, opts) else { break };
        let f = a.eval_derivative(k - 1, x);
        let df = a.eval_derivative(k, x);
        let step = f / df;
        if !step.is_finite() || step.abs() > 1e-2 {
            break;
        }
        let next = x - step;
        // Accept only steps that do not increase the residual of a itself.
        if a.eval(next).abs() > a.eval(x).abs() && k == 1 {
            break;
        }
        x = next;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// All zeros of `a` in `[0, 2 pi)`, sorted.
///
/// Odd-order zeros are bracketed by sign changes of `a` on a dense grid;
/// even-order zeros show up as sign changes of `a'` where `|a|` is below
/// `root_tol`.
pub fn find_zeros(a: &TrigPoly, opts: &RootOptions) -> Result<Vec<Root>> {
    if a.is_zero() {
        return Err(Error::DegenerateSymbol);
    }
    let n = opts.min_samples.max(8 * a.degree());
    let h = TAU / n as f64;
    let da = a.derivative();
    let grid: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
    let fa: Vec<f64> = grid.iter().map(|&x| a.eval(x)).collect();
    let fd: Vec<f64> = grid.iter().map(|&x| da.eval(x)).collect();

    let mut candidates = Vec::new();
    for i in 0..n {
        if fa[i] == 0.0 {
            candidates.push(grid[i]);
        } else if fa[i] * fa[i + 1] < 0.0 {
            candidates.push(bisect(|x| a.eval(x), grid[i], grid[i + 1]));
        }
        if fd[i] * fd[i + 1] < 0.0 {
            let xc = bisect(|x| da.eval(x), grid[i], grid[i + 1]);
            if a.eval(xc).abs() < opts.root_tol {
                candidates.push(xc);
            }
        } else if fd[i] == 0.0 && fa[i].abs() < opts.root_tol {
            candidates.push(grid[i]);
        }
    }

    let mut roots: Vec<Root> = candidates
        .into_iter()
        .map(|x| wrap_angle(polish(a, x, opts)))
        .map(|x| Root { x, derivative: da.eval(x), residual: a.eval(x).abs() })
        .filter(|r| r.residual < opts.root_tol)
        .collect();
    roots.sort_by(|p, q| p.x.total_cmp(&q.x));

    // Merge clusters, circularly, keeping the smallest residual.
    let mut merged: Vec<Root> = Vec::with_capacity(roots.len());
    for r in roots {
        match merged.last_mut() {
            Some(last) if circular_offset(r.x, last.x).abs() < opts.cluster_gap => {
                if r.residual < last.residual {
                    *last = r;
                }
            }
            _ => merged.push(r),
        }
    }
    if merged.len() > 1 {
        let first = merged[0];
        let last = merged[merged.len() - 1];
        if circular_offset(first.x, last.x).abs() < opts.cluster_gap {
            let keep = if first.residual <= last.residual { first } else { last };
            merged.pop();
            merged[0] = keep;
            merged.sort_by(|p, q| p.x.total_cmp(&q.x));
        }
    }
    Ok(merged)
}

/// Smallest `k` with `|a^{(k)}(x0)| > derivative_floor`.
pub fn order_of_vanishing(a: &TrigPoly, x0: f64, opts: &RootOptions) -> Result<usize> {
    vanishing_order(a, x0, opts).ok_or(Error::OrderOverflow { x: x0, k_max: opts.k_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn xs(roots: &[Root]) -> Vec<f64> {
        roots.iter().map(|r| r.x).collect()
    }

    #[test]
    fn sine_roots() {
        let r = find_zeros(&TrigPoly::sin_mode(1, 1.0), &RootOptions::default()).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r[0].x.abs() < 1e-14);
        assert!((r[1].x - PI).abs() < 1e-14);
        assert!((r[0].derivative - 1.0).abs() < 1e-14);
        assert!((r[1].derivative + 1.0).abs() < 1e-14);
    }

    #[test]
    fn elliptic_has_no_roots() {
        let a = TrigPoly::new(vec![2.0], vec![1.0]);
        assert!(find_zeros(&a, &RootOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn sin_two_x() {
        let r = find_zeros(&TrigPoly::sin_mode(2, 1.0), &RootOptions::default()).unwrap();
        let expected = [0.0, PI / 2.0, PI, 1.5 * PI];
        assert_eq!(r.len(), 4, "{:?}", xs(&r));
        for (root, e) in r.iter().zip(expected) {
            assert!((root.x - e).abs() < 1e-13);
        }
        let signs: Vec<bool> = r.iter().map(|r| r.derivative > 0.0).collect();
        assert_eq!(signs, [true, false, true, false]);
    }

    #[test]
    fn double_and_triple_roots_are_found() {
        let opts = RootOptions::default();
        let s = TrigPoly::sin_mode(1, 1.0);
        let r2 = find_zeros(&s.pow(2), &opts).unwrap();
        assert_eq!(r2.len(), 2, "{:?}", xs(&r2));
        assert_eq!(order_of_vanishing(&s.pow(2), r2[0].x, &opts).unwrap(), 2);
        let r3 = find_zeros(&s.pow(3), &opts).unwrap();
        assert_eq!(r3.len(), 2, "{:?}", xs(&r3));
        for root in &r3 {
            assert_eq!(order_of_vanishing(&s.pow(3), root.x, &opts).unwrap(), 3, "{root:?}");
        }
    }

    #[test]
    fn zero_polynomial_is_rejected() {
        assert_eq!(find_zeros(&TrigPoly::constant(0.0), &RootOptions::default()), Err(Error::DegenerateSymbol));
    }

    #[test]
    fn flat_zero_overflows() {
        let opts = RootOptions { k_max: 4, ..RootOptions::default() };
        let a = TrigPoly::sin_mode(1, 1.0).pow(5);
        assert!(matches!(order_of_vanishing(&a, 0.0, &opts), Err(Error::OrderOverflow { .. })));
    }

    #[test]
    fn shifted_roots_off_grid() {
        let opts = RootOptions::default();
        let a = TrigPoly::sin_mode(3, 1.0).shifted(0.123_456_7);
        let r = find_zeros(&a, &opts).unwrap();
        assert_eq!(r.len(), 6);
        for root in &r {
            assert!(a.eval(root.x).abs() < 1e-14);
        }
    }
}
