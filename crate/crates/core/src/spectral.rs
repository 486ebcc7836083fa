//! Fourier-basis matrices, recurrence shooting and truncation spectra.
//!
//! Frequencies are indexed by `k` in `Z`; the basis vector `e_k` is
//! `e^{ikx}` and `A_{jk} = <e_j, A e_k> / 2 pi`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fit::{envelope_power_fit, LinearFit};
use crate::symbols::{find_zeros, japanese, LowerOrderSymbol, PrincipalSymbol, RootOptions, TrigPoly};
use crate::{Complex64, Error, Result};

/// Label attached to spectra of non-elliptic truncations.
pub const NON_CERTIFICATE_LABEL: &str = "truncation diagnostic - not a spectral-type certificate";

/// A banded bi-infinite matrix given entrywise.
pub trait Banded: Sync {
    /// `A_{jk} = 0` whenever `|j - k| > band_width`.
    fn band_width(&self) -> usize;
    fn entry(&self, j: i64, k: i64) -> Complex64;
}

/// An operator on the circle in one of the two supported input forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Operator {
    /// Kohn-Nirenberg quantization of `p + V`, symmetrized as `(A + A^*)/2`.
    Quantized {
        p: PrincipalSymbol,
        #[serde(default)]
        v: Option<LowerOrderSymbol>,
    },
    /// `d/dx (a(x) d/dx) + V`, assembled exactly from the differential
    /// expression. Its principal symbol is `-a(x) xi^2`.
    Divergence {
        a: TrigPoly,
        #[serde(default)]
        v: Option<LowerOrderSymbol>,
    },
}

impl Operator {
    pub fn quantized(p: PrincipalSymbol) -> Self {
        Operator::Quantized { p, v: None }
    }

    pub fn divergence(a: TrigPoly) -> Self {
        Operator::Divergence { a, v: None }
    }

    pub fn principal(&self) -> PrincipalSymbol {
        match self {
            Operator::Quantized { p, .. } => p.clone(),
            Operator::Divergence { a, .. } => PrincipalSymbol {
                m: 2.0,
                a_plus: a.scaled(-1.0),
                a_minus: a.scaled(-1.0),
            },
        }
    }

    pub fn order(&self) -> f64 {
        match self {
            Operator::Quantized { p, .. } => p.m,
            Operator::Divergence { .. } => 2.0,
        }
    }

    pub fn lower_order(&self) -> Option<&LowerOrderSymbol> {
        match self {
            Operator::Quantized { v, .. } | Operator::Divergence { v, .. } => v.as_ref(),
        }
    }

    /// No zeros of `a_+` or `a_-`.
    pub fn is_elliptic(&self) -> Result<bool> {
        let p = self.principal();
        let opts = RootOptions::default();
        Ok(find_zeros(&p.a_plus, &opts)?.is_empty() && find_zeros(&p.a_minus, &opts)?.is_empty())
    }

    /// Unsymmetrized toroidal Kohn-Nirenberg entry `p_hat_{j-k}(k)`.
    pub fn kn_entry(&self, j: i64, k: i64) -> Complex64 {
        self.kn_mode(j - k, k as f64)
    }

    /// `p_hat_l(xi)` at a real frequency; `|0|^m := 0`.
    fn kn_mode(&self, l: i64, xi: f64) -> Complex64 {
        let principal = match self {
            Operator::Quantized { p, .. } => {
                if xi == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    let a = if xi > 0.0 { &p.a_plus } else { &p.a_minus };
                    a.fourier(l) * xi.abs().powf(p.m)
                }
            }
            Operator::Divergence { a, .. } => a.fourier(l) * (-(xi + l as f64) * xi),
        };
        principal + self.lower_kn_mode(l, xi)
    }

    fn lower_kn_mode(&self, l: i64, xi: f64) -> Complex64 {
        let Some(v) = self.lower_order() else {
            return Complex64::new(0.0, 0.0);
        };
        v.fourier(l).into_iter().map(|(power, c)| c * japanese(xi).powf(power)).sum()
    }

    /// Coefficient of `e^{ilx}` in the Kohn-Nirenberg symbol of the
    /// assembled (Hermitian) matrix, at a real frequency: `A_{k+l,k}` is
    /// `mode(l, k)`.
    pub fn mode(&self, l: i64, xi: f64) -> Complex64 {
        match self {
            Operator::Divergence { a, .. } => {
                a.fourier(l) * (-(xi + l as f64) * xi)
                    + 0.5 * (self.lower_kn_mode(l, xi) + self.lower_kn_mode(-l, xi + l as f64).conj())
            }
            Operator::Quantized { .. } => 0.5 * (self.kn_mode(l, xi) + self.kn_mode(-l, xi + l as f64).conj()),
        }
    }

    /// `mode(l, xi)` minus its homogeneous principal part `a_+_hat_l xi^m`,
    /// for `xi > 0`, split as (operator part, `V` part). The difference
    /// `|xi + l|^m - xi^m` is formed without cancellation.
    pub fn lower_mode(&self, l: i64, xi: f64) -> (Complex64, Complex64) {
        let v = 0.5 * (self.lower_kn_mode(l, xi) + self.lower_kn_mode(-l, xi + l as f64).conj());
        let s = match self {
            Operator::Divergence { a, .. } => a.fourier(l) * (-(l as f64) * xi),
            Operator::Quantized { p, .. } => {
                let shifted = xi + l as f64;
                if shifted > 0.0 {
                    let diff = xi.powf(p.m) * (p.m * (l as f64 / xi).ln_1p()).exp_m1();
                    0.5 * p.a_plus.fourier(l) * diff
                } else {
                    let other = if shifted == 0.0 { 0.0 } else { shifted.abs().powf(p.m) };
                    0.5 * (p.a_minus.fourier(l) * other - p.a_plus.fourier(l) * xi.powf(p.m))
                }
            }
        };
        (s, v)
    }

    /// Mirror image under `x -> -x`; `A_{jk}` becomes `A_{-j,-k}`.
    pub fn reflected(&self) -> Self {
        match self {
            Operator::Quantized { p, v } => Operator::Quantized { p: p.reflected(), v: v.as_ref().map(|v| v.reflected()) },
            Operator::Divergence { a, v } => Operator::Divergence { a: a.reflected(), v: v.as_ref().map(|v| v.reflected()) },
        }
    }
}

impl Banded for Operator {
    fn band_width(&self) -> usize {
        let p = self.principal();
        let v = self.lower_order().map_or(0, |v| v.max_frequency());
        p.a_plus.degree().max(p.a_minus.degree()).max(v)
    }

    fn entry(&self, j: i64, k: i64) -> Complex64 {
        if (j - k).unsigned_abs() as usize > self.band_width() {
            return Complex64::new(0.0, 0.0);
        }
        self.mode(j - k, k as f64)
    }
}

/// One Fourier block `epsilon d/dx(sin(ell x) d/dx) - 2 n D_x` of the wave
/// operator on the Lorentzian torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianMode {
    pub epsilon: f64,
    pub ell: i64,
    pub n: i64,
}

impl LorentzianMode {
    fn coefficient(&self) -> TrigPoly {
        let s = TrigPoly::sin_mode(self.ell.unsigned_abs() as usize, self.ell.signum() as f64);
        s.scaled(self.epsilon)
    }
}

impl Banded for LorentzianMode {
    fn band_width(&self) -> usize {
        self.ell.unsigned_abs() as usize
    }

    fn entry(&self, j: i64, k: i64) -> Complex64 {
        let mut e = self.coefficient().fourier(j - k) * (-(j as f64) * k as f64);
        if j == k {
            e -= Complex64::new(2.0 * (self.n * k) as f64, 0.0);
        }
        e
    }
}

/// Truncation of a banded operator to frequencies `-n..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToroidalMatrix {
    pub n: usize,
    pub entries: DMatrix<Complex64>,
    pub symmetrized: bool,
    pub band_width: usize,
}

impl ToroidalMatrix {
    pub fn dim(&self) -> usize {
        2 * self.n + 1
    }

    pub fn get(&self, j: i64, k: i64) -> Complex64 {
        let n = self.n as i64;
        self.entries[((j + n) as usize, (k + n) as usize)]
    }

    /// `max |A - A^*|` entrywise.
    pub fn hermitian_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for c in r..d {
                worst = worst.max((self.entries[(r, c)] - self.entries[(c, r)].conj()).norm());
            }
        }
        worst
    }
}

pub fn assemble_banded(op: &impl Banded, n: usize) -> Result<ToroidalMatrix> {
    build(n, op.band_width(), true, |j, k| op.entry(j, k))
}

/// Truncated matrix of `op`. With `symmetrize = false` a quantized symbol
/// gives the raw Kohn-Nirenberg matrix; divergence forms are exact either way.
pub fn assemble(op: &Operator, n: usize, symmetrize: bool) -> Result<ToroidalMatrix> {
    let band = op.band_width();
    match (op, symmetrize) {
        (Operator::Quantized { .. }, false) => build(n, band, false, |j, k| op.kn_entry(j, k)),
        _ => build(n, band, true, |j, k| op.entry(j, k)),
    }
}

fn build(n: usize, band: usize, symmetrized: bool, f: impl Fn(i64, i64) -> Complex64) -> Result<ToroidalMatrix> {
    if n < 8 {
        return Err(Error::Precondition(format!("truncation half-width {n} < 8")));
    }
    let d = 2 * n + 1;
    let ni = n as i64;
    let mut entries = DMatrix::zeros(d, d);
    for r in 0..d {
        let j = r as i64 - ni;
        let lo = r.saturating_sub(band);
        let hi = (r + band).min(d - 1);
        for c in lo..=hi {
            entries[(r, c)] = f(j, c as i64 - ni);
        }
    }
    Ok(ToroidalMatrix { n, entries, symmetrized, band_width: band })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShootDirection {
    /// Frequencies `k >= 0`.
    Positive,
    /// Frequencies `k <= -1`.
    Negative,
}

impl ShootDirection {
    pub const BOTH: [ShootDirection; 2] = [ShootDirection::Positive, ShootDirection::Negative];

    /// Frequency of half-line index `i`.
    pub fn frequency(self, i: usize) -> i64 {
        match self {
            ShootDirection::Positive => i as i64,
            ShootDirection::Negative => -1 - i as i64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootOptions {
    pub k_max: usize,
    pub fit_blocks: usize,
    /// Summable iff the fitted exponent is below this.
    pub summable_exponent: f64,
    pub min_r_squared: f64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        Self { k_max: 4096, fit_blocks: 16, summable_exponent: -0.5, min_r_squared: 0.95 }
    }
}

/// One basis solution of the half-line recurrence.
///
/// `u_k = coeffs[i] * exp(log_scale[i])` with `k = direction.frequency(i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingSolution {
    pub direction: ShootDirection,
    pub coeffs: Vec<Complex64>,
    pub log_scale: Vec<f64>,
    pub decay_fit: Option<LinearFit>,
    /// Slope of `ln |u_k|` against `ln |k|` over the last decade.
    pub decay_exponent_fit: f64,
    /// Mean `ln |u_k|` increase per unit `k` over the last decade.
    pub growth_rate: f64,
    pub summable: bool,
}

impl ShootingSolution {
    pub fn value(&self, i: usize) -> Complex64 {
        self.coeffs[i] * self.log_scale[i].exp()
    }

    pub fn frequency(&self, i: usize) -> i64 {
        self.direction.frequency(i)
    }

    /// Fitted exponent in `[-0.5 - tol, -0.5)` with poor `R^2`: neither
    /// clearly summable nor clearly not.
    pub fn is_inconclusive(&self, opts: &ShootOptions) -> bool {
        self.decay_exponent_fit < opts.summable_exponent
            && self.decay_fit.map_or(true, |f| f.r_squared < opts.min_r_squared)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shooting {
    pub z: Complex64,
    pub direction: ShootDirection,
    /// Rows whose outermost coefficient vanished and which were used as
    /// linear constraints on the free initial segment instead.
    pub constraint_rows: Vec<i64>,
    pub solutions: Vec<ShootingSolution>,
}

impl Shooting {
    pub fn summable_count(&self) -> usize {
        self.solutions.iter().filter(|s| s.summable).count()
    }
}

/// Solve the rows of `(A - z) u = 0` on one half-line, with `u = 0` on the
/// other half, as a recurrence for the outermost coefficient of each row.
///
/// The free initial segment has `band_width` entries. A row whose outermost
/// coefficient vanishes turns into a linear constraint that eliminates one
/// free parameter, and the skipped coefficient becomes free in its place.
pub fn shoot(op: &impl Banded, z: Complex64, direction: ShootDirection, opts: &ShootOptions) -> Result<Shooting> {
    let d = op.band_width();
    if d == 0 {
        return Err(Error::Precondition("shooting needs a non-diagonal band".into()));
    }
    let k_max = opts.k_max;
    if k_max < 16 * d {
        return Err(Error::Resolution(format!("k_max = {k_max} too small for band width {d}")));
    }
    let e = |i: usize, l: usize| -> Complex64 {
        let (j, k) = (direction.frequency(i), direction.frequency(l));
        let mut v = op.entry(j, k);
        if i == l {
            v -= z;
        }
        v
    };

    // u_i = exp(log_off[i]) * sum_p vals[i][p] * param_p
    let mut params = d;
    let mut vals: Vec<Vec<Complex64>> = Vec::with_capacity(k_max + 1);
    let mut log_off: Vec<f64> = Vec::with_capacity(k_max + 1);
    for i in 0..d {
        let mut v = vec![Complex64::new(0.0, 0.0); d];
        v[i] = Complex64::new(1.0, 0.0);
        vals.push(v);
        log_off.push(0.0);
    }
    let mut constraint_rows = Vec::new();

    for row in 0..=(k_max - d) {
        let lo = row.saturating_sub(d);
        let lead_idx = row + d;
        let reference = log_off[lead_idx - 1];
        let mut r = vec![Complex64::new(0.0, 0.0); params];
        let mut row_scale: f64 = z.norm();
        for l in lo..lead_idx {
            let c = e(row, l);
            row_scale = row_scale.max(c.norm());
            let f = (log_off[l] - reference).exp();
            for (p, v) in vals[l].iter().enumerate() {
                r[p] += c * v * f;
            }
        }
        let lead = e(row, lead_idx);
        row_scale = row_scale.max(lead.norm());
        if lead.norm() > 1e-13 * row_scale {
            let mut next: Vec<Complex64> = r.iter().map(|x| -x / lead).collect();
            let peak = next.iter().map(|x| x.norm()).fold(0.0, f64::max);
            let mut off = reference;
            if peak > 1e100 || (peak > 0.0 && peak < 1e-100) {
                for x in &mut next {
                    *x /= peak;
                }
                off += peak.ln();
            }
            vals.push(next);
            log_off.push(off);
            continue;
        }
        constraint_rows.push(direction.frequency(row));
        let (pivot, size) = r
            .iter()
            .enumerate()
            .map(|(p, x)| (p, x.norm()))
            .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        let window: f64 = (lo..lead_idx)
            .flat_map(|l| vals[l].iter().map(move |v| v.norm()))
            .fold(0.0, f64::max);
        if size <= 1e-13 * row_scale * window.max(f64::MIN_POSITIVE) {
            // Vacuous row: the skipped coefficient is a new free parameter.
            for v in &mut vals {
                v.push(Complex64::new(0.0, 0.0));
            }
            let mut next = vec![Complex64::new(0.0, 0.0); params + 1];
            next[params] = Complex64::new(1.0, 0.0);
            params += 1;
            vals.push(next);
            log_off.push(reference);
            continue;
        }
        // param_pivot = -sum_{q != pivot} r_q / r_pivot param_q
        for v in &mut vals {
            let vp = v[pivot];
            if vp != Complex64::new(0.0, 0.0) {
                for q in 0..params {
                    v[q] -= vp * r[q] / r[pivot];
                }
                v[pivot] = Complex64::new(0.0, 0.0);
            }
        }
        let mut next = vec![Complex64::new(0.0, 0.0); params];
        next[pivot] = Complex64::new(1.0, 0.0);
        vals.push(next);
        log_off.push(reference);
        if constraint_rows.len() > 4 * d + 4 {
            return Err(Error::RecurrenceBreakdown { k: direction.frequency(row) });
        }
    }

    let lo = (k_max / 10).max(1);
    let solutions = (0..params)
        .filter(|&p| vals.iter().any(|v| v[p] != Complex64::new(0.0, 0.0)))
        .map(|p| {
            let coeffs: Vec<Complex64> = vals.iter().map(|v| v[p]).collect();
            // renormalize so that the stored mantissas stay representable
            let mut log_scale = log_off.clone();
            let mut coeffs = coeffs;
            for (c, s) in coeffs.iter_mut().zip(log_scale.iter_mut()) {
                let n = c.norm();
                if n > 1e100 || (n > 0.0 && n < 1e-100) {
                    *c /= n;
                    *s += n.ln();
                }
            }
            let log_abs = |i: usize| coeffs[i].norm().ln() + log_scale[i];
            let idx = |k: usize| match direction {
                ShootDirection::Positive => k,
                ShootDirection::Negative => k - 1,
            };
            let fit = envelope_power_fit(lo, k_max.min(idx_max(direction, k_max)), opts.fit_blocks, |k| log_abs(idx(k)));
            let exponent = fit.map_or(f64::NAN, |f| f.slope);
            let growth = block_log(&log_abs, idx(lo), idx(k_max.min(idx_max(direction, k_max))), |a, b| {
                (b - a) / (k_max - lo) as f64
            });
            let summable = fit.is_some_and(|f| f.slope < opts.summable_exponent && f.r_squared >= opts.min_r_squared);
            ShootingSolution {
                direction,
                coeffs,
                log_scale,
                decay_fit: fit,
                decay_exponent_fit: exponent,
                growth_rate: growth,
                summable,
            }
        })
        .collect();
    Ok(Shooting { z, direction, constraint_rows, solutions })
}

/// Largest `|k|` reached on a half-line with `k_max + 1` stored entries.
fn idx_max(direction: ShootDirection, k_max: usize) -> usize {
    match direction {
        ShootDirection::Positive => k_max,
        ShootDirection::Negative => k_max + 1,
    }
}

/// Compare the log-RMS of short blocks at both ends of `[lo, hi]`.
fn block_log(log_abs: &impl Fn(usize) -> f64, lo: usize, hi: usize, f: impl Fn(f64, f64) -> f64) -> f64 {
    let w = ((hi - lo) / 20).max(1);
    let rms = |a: usize, b: usize| {
        let logs: Vec<f64> = (a..b).map(log_abs).collect();
        let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return peak;
        }
        peak + 0.5 * (logs.iter().map(|l| (2.0 * (l - peak)).exp()).sum::<f64>() / logs.len() as f64).ln()
    };
    f(rms(lo, lo + w), rms(hi + 1 - w, hi + 1))
}

/// Residuals of the rows of `(A - z) u` whose whole stencil lies inside the
/// computed segment, relative to `||u||`. Returns `(max row residual
/// relative to the row's own magnitude, ||(A - z) u|| / ||u||)`.
pub fn interior_residual(op: &impl Banded, z: Complex64, sol: &ShootingSolution) -> (f64, f64) {
    let d = op.band_width();
    let n = sol.coeffs.len();
    let u: Vec<Complex64> = (0..n).map(|i| sol.value(i)).collect();
    let norm_u = u.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let mut worst: f64 = 0.0;
    let mut total = 0.0;
    for row in 0..n.saturating_sub(d) {
        let j = sol.frequency(row);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut mag: f64 = 0.0;
        for l in row.saturating_sub(d)..=(row + d) {
            let mut c = op.entry(j, sol.frequency(l));
            if l == row {
                c -= z;
            }
            acc += c * u[l];
            mag = mag.max((c * u[l]).norm());
        }
        total += acc.norm_sqr();
        if mag > 0.0 {
            worst = worst.max(acc.norm() / mag);
        }
    }
    (worst, total.sqrt() / norm_u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub z: Complex64,
    pub direction: ShootDirection,
    pub constraint_rows: Vec<i64>,
    pub decay_exponents: Vec<f64>,
    pub r_squared: Vec<f64>,
    pub growth_rates: Vec<f64>,
    pub summable: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeficiencyReport {
    pub n_plus_lower_bound: usize,
    pub n_minus_lower_bound: usize,
    pub esa_consistent: bool,
    /// `-m/2`, the decay of the one-sided quasimode at a radial source.
    pub predicted_tail_exponent: f64,
    /// Every summable solution's exponent lies within 0.15 of the prediction.
    pub tail_consistent: bool,
    pub runs: Vec<ProbeRun>,
}

/// Count square-summable solutions of `(A -+ i) u = 0`.
///
/// The full matrix differs from the direct sum of its two half-line
/// compressions by a finite-rank symmetric term, so each deficiency index is
/// the sum of the half-line ones; each half-line contributes the number of
/// summable solutions found there. Counts are lower bounds: absence is only
/// probed up to `k_max`.
pub fn deficiency_probe(op: &impl Banded, m: f64, opts: &ShootOptions) -> Result<DeficiencyReport> {
    let jobs: Vec<(Complex64, ShootDirection)> = [Complex64::new(0.0, 1.0), Complex64::new(0.0, -1.0)]
        .into_iter()
        .flat_map(|z| ShootDirection::BOTH.into_iter().map(move |d| (z, d)))
        .collect();
    let shots: Vec<Shooting> = jobs.par_iter().map(|&(z, d)| shoot(op, z, d, opts)).collect::<Result<_>>()?;
    for s in shots.iter().flat_map(|s| &s.solutions) {
        if s.is_inconclusive(opts) {
            return Err(Error::InconclusiveFit {
                r_squared: s.decay_fit.map_or(0.0, |f| f.r_squared),
                context: format!("decay exponent {:.3} in the {:?} direction", s.decay_exponent_fit, s.direction),
            });
        }
    }
    let count = |im: f64| shots.iter().filter(|s| s.z.im == im).map(Shooting::summable_count).sum::<usize>();
    let (n_plus, n_minus) = (count(1.0), count(-1.0));
    let predicted = -m / 2.0;
    let tail_consistent = shots
        .iter()
        .flat_map(|s| &s.solutions)
        .filter(|s| s.summable)
        .all(|s| (s.decay_exponent_fit - predicted).abs() <= 0.15);
    let runs = shots
        .iter()
        .map(|s| ProbeRun {
            z: s.z,
            direction: s.direction,
            constraint_rows: s.constraint_rows.clone(),
            decay_exponents: s.solutions.iter().map(|x| x.decay_exponent_fit).collect(),
            r_squared: s.solutions.iter().map(|x| x.decay_fit.map_or(f64::NAN, |f| f.r_squared)).collect(),
            growth_rates: s.solutions.iter().map(|x| x.growth_rate).collect(),
            summable: s.solutions.iter().map(|x| x.summable).collect(),
        })
        .collect();
    Ok(DeficiencyReport {
        n_plus_lower_bound: n_plus,
        n_minus_lower_bound: n_minus,
        esa_consistent: n_plus == 0 && n_minus == 0,
        predicted_tail_exponent: predicted,
        tail_consistent,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOptions {
    pub n_list: Vec<usize>,
    /// Eigenvalues of smallest modulus compared across truncations.
    pub tracked: usize,
    /// Shift for the rectangular `sigma_min` trace.
    pub z: Complex64,
    /// Skip the `sigma_min` trace above this half-width.
    pub sigma_min_limit: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { n_list: vec![64, 128, 256], tracked: 10, z: Complex64::new(0.0, 1.0), sigma_min_limit: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyStep {
    pub n_from: usize,
    pub n_to: usize,
    /// `|lambda_i(n_to) - lambda_i(n_from)| / max(1, |lambda_i(n_to)|)` for
    /// the tracked eigenvalues, ordered by modulus.
    pub relative_differences: Vec<f64>,
    pub max_relative_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingStats {
    pub n: usize,
    /// Mean of `min(s_i, s_{i+1}) / max(s_i, s_{i+1})` over the central half
    /// of the spectrum.
    pub mean_spacing_ratio: f64,
    pub window: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub n_list: Vec<usize>,
    pub elliptic: bool,
    pub label: Option<String>,
    /// Sorted ascending, one list per truncation.
    pub eigenvalues: Vec<Vec<f64>>,
    pub max_imaginary_defect: f64,
    pub cauchy: Vec<CauchyStep>,
    pub spacing: Vec<SpacingStats>,
    /// Smallest singular value of the columns `|k| <= n - band` of the
    /// truncated `A - z`, per truncation (`None` above the size limit).
    pub sigma_min: Vec<Option<f64>>,
}

pub fn eigenvalues(matrix: &ToroidalMatrix) -> Result<Vec<f64>> {
    if !matrix.symmetrized {
        return Err(Error::Precondition("eigenvalues need a Hermitian truncation".into()));
    }
    let eig = SymmetricEigen::try_new(matrix.entries.clone(), 1e-15, 0).ok_or_else(|| {
        Error::Eigen(format!("no convergence at n = {} (hermitian defect {:e})", matrix.n, matrix.hermitian_defect()))
    })?;
    let mut ev: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

pub fn spectrum(op: &Operator, opts: &SpectrumOptions) -> Result<SpectrumReport> {
    let elliptic = op.is_elliptic()?;
    let mut n_list = opts.n_list.clone();
    n_list.sort_unstable();
    n_list.dedup();
    let per_n: Vec<(Vec<f64>, f64, Option<f64>)> = n_list
        .par_iter()
        .map(|&n| {
            let a = assemble(op, n, true)?;
            let ev = eigenvalues(&a)?;
            let sigma = (n <= opts.sigma_min_limit).then(|| rectangular_sigma_min(&a, opts.z));
            Ok((ev, a.hermitian_defect(), sigma))
        })
        .collect::<Result<_>>()?;

    let by_modulus = |ev: &[f64]| {
        let mut v = ev.to_vec();
        v.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
        v.truncate(opts.tracked);
        v
    };
    let cauchy = if elliptic {
        n_list
            .windows(2)
            .zip(per_n.windows(2))
            .map(|(ns, evs)| {
                let (a, b) = (by_modulus(&evs[0].0), by_modulus(&evs[1].0));
                let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (y - x).abs() / y.abs().max(1.0)).collect();
                CauchyStep {
                    n_from: ns[0],
                    n_to: ns[1],
                    max_relative_difference: diffs.iter().cloned().fold(0.0, f64::max),
                    relative_differences: diffs,
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let spacing = n_list.iter().zip(&per_n).map(|(&n, (ev, _, _))| spacing_stats(n, ev)).collect();
    Ok(SpectrumReport {
        n_list: n_list.clone(),
        elliptic,
        label: (!elliptic).then(|| NON_CERTIFICATE_LABEL.to_string()),
        max_imaginary_defect: per_n.iter().map(|x| x.1).fold(0.0, f64::max),
        sigma_min: per_n.iter().map(|x| x.2).collect(),
        eigenvalues: per_n.into_iter().map(|x| x.0).collect(),
        cauchy,
        spacing,
    })
}

fn spacing_stats(n: usize, ev: &[f64]) -> SpacingStats {
    let len = ev.len();
    let (lo, hi) = (len / 4, 3 * len / 4);
    let s: Vec<f64> = ev[lo..hi].windows(2).map(|w| w[1] - w[0]).collect();
    let ratios: Vec<f64> = s
        .windows(2)
        .filter(|w| w[0].max(w[1]) > 0.0)
        .map(|w| w[0].min(w[1]) / w[0].max(w[1]))
        .collect();
    let mean = if ratios.is_empty() { f64::NAN } else { ratios.iter().sum::<f64>() / ratios.len() as f64 };
    SpacingStats { n, mean_spacing_ratio: mean, window: (ev[lo], ev[hi - 1]) }
}

fn rectangular_sigma_min(a: &ToroidalMatrix, z: Complex64) -> f64 {
    let d = a.dim();
    let b = a.band_width.min(a.n);
    let mut m = a.entries.columns(b, d - 2 * b).into_owned();
    for c in 0..(d - 2 * b) {
        m[(c + b, c)] -= z;
    }
    m.singular_values().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Per-mode truncations `P_n` for `n` in `n_range`.
pub fn lorentzian_modes(
    epsilon: f64,
    ell: i64,
    n_range: std::ops::RangeInclusive<i64>,
    n: usize,
) -> Result<Vec<(i64, ToroidalMatrix)>> {
    if epsilon == 0.0 || ell == 0 {
        return Err(Error::Precondition("lorentzian modes need epsilon != 0 and ell != 0".into()));
    }
    n_range
        .map(|mode| Ok((mode, assemble_banded(&LorentzianMode { epsilon, ell, n: mode }, n)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzianWitness {
    pub epsilon: f64,
    pub ell: i64,
    pub k_max: usize,
    pub decay_exponent: f64,
    /// `||(P_0 - i) u|| / ||u||` over interior rows.
    pub relative_residual: f64,
}

/// The `n = 0` summable solution of `(P_0 - i) u = 0`, lifted to
/// `w(x, y) = u(x)`.
pub fn lorentzian_witness(epsilon: f64, ell: i64, k_max: usize) -> Result<(LorentzianWitness, ShootingSolution)> {
    let mode = LorentzianMode { epsilon, ell, n: 0 };
    let z = Complex64::new(0.0, 1.0);
    let opts = ShootOptions { k_max, ..Default::default() };
    let shot = shoot(&mode, z, ShootDirection::Positive, &opts)?;
    let sol = shot
        .solutions
        .into_iter()
        .find(|s| s.summable)
        .ok_or_else(|| Error::Precondition("no summable n = 0 solution".into()))?;
    let (_, rel) = interior_residual(&mode, z, &sol);
    Ok((
        LorentzianWitness { epsilon, ell, k_max, decay_exponent: sol.decay_exponent_fit, relative_residual: rel },
        sol,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sin_div() -> Operator {
        Operator::divergence(TrigPoly::sin_mode(1, 1.0))
    }

    #[test]
    fn divergence_entries() {
        let a = assemble(&sin_div(), 16, true).unwrap();
        for k in -14i64..14 {
            let kf = k as f64;
            assert_eq!(a.get(k + 1, k), c(0.0, kf * (kf + 1.0) / 2.0));
            assert_eq!(a.get(k - 1, k), c(0.0, -kf * (kf - 1.0) / 2.0));
            assert_eq!(a.get(k, k), c(0.0, 0.0));
        }
        assert_eq!(a.get(2, 1), c(0.0, 1.0));
        assert_eq!(a.get(0, 1), c(0.0, 0.0));
        assert_eq!(a.hermitian_defect(), 0.0);

        let flat = assemble(&Operator::divergence(TrigPoly::constant(1.0)), 8, true).unwrap();
        for k in -8i64..=8 {
            assert_eq!(flat.get(k, k), c(-(k * k) as f64, 0.0));
        }
    }

    #[test]
    fn symmetrization_defect_is_at_most_linear() {
        let op = Operator::quantized(PrincipalSymbol::symmetric(2.0, TrigPoly::sin_mode(1, 1.0)).unwrap());
        let defect = |n| assemble(&op, n, false).unwrap().hermitian_defect();
        let (d1, d2) = (defect(32), defect(64));
        assert!(d2 <= 2.0 * d1 * 1.05 + 1e-12, "{d1} {d2}");
        let sym = assemble(&op, 32, true).unwrap();
        assert_eq!(sym.hermitian_defect(), 0.0);
    }

    #[test]
    fn nesting() {
        let op = Operator::quantized(PrincipalSymbol::symmetric(1.5, TrigPoly::new(vec![2.0, 0.3], vec![1.0])).unwrap());
        let (small, big) = (assemble(&op, 10, true).unwrap(), assemble(&op, 20, true).unwrap());
        for j in -10..=10 {
            for k in -10..=10 {
                assert_eq!(small.get(j, k), big.get(j, k));
            }
        }
    }

    #[test]
    fn divergence_shooting_rational_start() {
        let z = c(0.0, 1.0);
        let shot = shoot(&sin_div(), z, ShootDirection::Positive, &ShootOptions::default()).unwrap();
        assert_eq!(shot.constraint_rows, vec![0]);
        assert_eq!(shot.solutions.len(), 1);
        let s = &shot.solutions[0];
        assert_eq!(s.value(0), c(0.0, 0.0));
        assert_eq!(s.value(1), c(1.0, 0.0));
        assert_eq!(s.value(2), c(-1.0, 0.0));
        assert!((s.value(3) - c(2.0 / 3.0, 0.0)).norm() < 1e-15);
        assert!(s.summable);
        assert!((s.decay_exponent_fit + 1.0).abs() < 0.1, "{}", s.decay_exponent_fit);
        let (row, _) = interior_residual(&sin_div(), z, s);
        assert!(row < 1e-12, "{row}");
    }

    #[test]
    fn elliptic_has_no_summable_solution() {
        let op = Operator::divergence(TrigPoly::new(vec![2.0], vec![1.0]));
        let r = deficiency_probe(&op, 2.0, &ShootOptions::default()).unwrap();
        assert_eq!((r.n_plus_lower_bound, r.n_minus_lower_bound), (0, 0));
        assert!(r.esa_consistent);
        assert!(r.runs.iter().all(|run| run.growth_rates.iter().all(|g| *g > 0.1)));
    }

    #[test]
    fn divergence_sine_is_deficient() {
        let r = deficiency_probe(&sin_div(), 2.0, &ShootOptions::default()).unwrap();
        assert!(r.n_plus_lower_bound >= 1 && r.n_minus_lower_bound >= 1);
        assert!(!r.esa_consistent);
        assert!(r.tail_consistent);
    }

    #[test]
    fn mirror_maps_plus_to_minus() {
        // u(-x) turns (P - i) u = 0 into (P + i) v = 0 for d/dx(sin x d/dx)
        let opts = ShootOptions::default();
        let plus = shoot(&sin_div(), c(0.0, 1.0), ShootDirection::Negative, &opts).unwrap();
        let minus = shoot(&sin_div(), c(0.0, -1.0), ShootDirection::Positive, &opts).unwrap();
        let (a, b) = (&plus.solutions[0], &minus.solutions[0]);
        let scale = b.value(1) / a.value(0);
        for i in 0..200 {
            assert!((a.value(i) * scale - b.value(i + 1)).norm() < 1e-12 * b.value(i + 1).norm().max(1e-300));
        }
    }

    #[test]
    fn quantized_first_order_is_consistent_with_esa() {
        let op = Operator::quantized(PrincipalSymbol::symmetric(1.0, TrigPoly::sin_mode(1, 1.0)).unwrap());
        let r = deficiency_probe(&op, 1.0, &ShootOptions::default()).unwrap();
        assert!(r.esa_consistent, "{r:?}");
    }

    #[test]
    fn flat_spectrum_is_exact() {
        let op = Operator::quantized(PrincipalSymbol::symmetric(2.0, TrigPoly::constant(1.0)).unwrap());
        let rep = spectrum(&op, &SpectrumOptions { n_list: vec![8, 16], ..Default::default() }).unwrap();
        let mut expect: Vec<f64> = (-16i64..=16).map(|k| (k * k) as f64).collect();
        expect.sort_by(|a, b| a.total_cmp(b));
        for (x, y) in rep.eigenvalues[1].iter().zip(&expect) {
            assert!((x - y).abs() < 1e-10 * y.max(1.0));
        }
        assert!(rep.label.is_none());
    }

    #[test]
    fn non_elliptic_spectrum_is_labelled() {
        let op = Operator::quantized(PrincipalSymbol::symmetric(2.0, TrigPoly::sin_mode(1, 1.0)).unwrap());
        let rep = spectrum(&op, &SpectrumOptions { n_list: vec![16, 32], ..Default::default() }).unwrap();
        assert_eq!(rep.label.as_deref(), Some(NON_CERTIFICATE_LABEL));
        assert!(rep.cauchy.is_empty());
    }

    #[test]
    fn lorentzian_blocks() {
        let modes = lorentzian_modes(0.5, 1, -2..=2, 12).unwrap();
        let base = assemble(&sin_div(), 12, true).unwrap();
        let (_, p0) = &modes[2];
        for j in -12..=12 {
            for k in -12..=12 {
                assert_eq!(p0.get(j, k), base.get(j, k) * 0.5);
            }
        }
        for (n, pn) in &modes {
            for j in -12i64..=12 {
                for k in -12i64..=12 {
                    let shift = if j == k { c(-2.0 * (*n * k) as f64, 0.0) } else { c(0.0, 0.0) };
                    assert_eq!(pn.get(j, k) - p0.get(j, k), shift);
                }
            }
        }
        let (w, _) = lorentzian_witness(1.0, 1, 2048).unwrap();
        assert!(w.relative_residual < 1e-6, "{w:?}");
    }
}
