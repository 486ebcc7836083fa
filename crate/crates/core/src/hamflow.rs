//! Hamilton flow of `p = a_+-(x) |xi|^m`, its fiber-compactified rescaling,
//! and the completeness probe at fiber infinity.
//!
//! The fiber variable is integrated as `s = ln |xi|` with its sign frozen
//! (the sign of `xi` is conserved by the flow). In these variables
//!
//! ```text
//! x' =  sign * m * a(x)  * e^{(m-1) s}
//! s' = -sign *     a'(x) * e^{(m-1) s}
//! ```
//!
//! so the blow-up regime stays well inside floating-point range.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fit::{linear_fit, LinearFit};
use crate::symbols::{
    circular_offset, find_zeros, order_of_vanishing, radial_sets, survey, wrap_angle, Completeness, Fiber,
    PrincipalSymbol, RootOptions, TrigPoly,
};
use crate::{Error, Result};

/// A point `(x, xi)` of the cotangent bundle; `xi` may be `+-inf` for the
/// rescaled flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub x: f64,
    pub xi: f64,
}

pub type PhasePoint = Seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    /// Per-step error tolerance, used as both relative and absolute tolerance.
    pub tol: f64,
    pub blowup_threshold: f64,
    pub horizon: f64,
    /// Blow-up is declared when `d ln|xi'| / d ln|xi|` exceeds this value.
    /// Finite-time blow-up needs a growth exponent above zero; exponential
    /// growth sits at exactly zero.
    pub growth_exponent_threshold: f64,
    pub max_steps: usize,
    pub fiber_floor: f64,
    /// Past this `|xi|`, with every growth check at or below the exponent
    /// threshold, the orbit is growing at most exponentially and cannot blow
    /// up; integration stops there and reports `ReachedHorizon`. Beyond it
    /// `a(x) ~ |xi|^{-m}` would leave floating-point range.
    pub growth_ceiling: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            blowup_threshold: 1e8,
            horizon: 50.0,
            growth_exponent_threshold: 0.25,
            max_steps: 2_000_000,
            fiber_floor: 1.0,
            growth_ceiling: 1e100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub xi: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    ReachedHorizon,
    BlowUp,
    FiberFloor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOutcome {
    pub kind: OutcomeKind,
    pub blowup_time: Option<f64>,
    pub direction: Direction,
    /// Last measured `d ln|xi'| / d ln|xi|`.
    pub growth_exponent: Option<f64>,
    /// RMS residual of the affine fit behind `blowup_time`.
    pub fit_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub outcome: FlowOutcome,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least the seed")
    }

    /// Largest `|p - p(seed)| / (1 + |p(seed)|)` over samples with `|xi| <= xi_cap`.
    pub fn energy_drift(&self, xi_cap: f64) -> f64 {
        let p0 = self.samples[0].p_value;
        self.samples
            .iter()
            .filter(|s| s.xi.abs() <= xi_cap)
            .map(|s| (s.p_value - p0).abs() / (1.0 + p0.abs()))
            .fold(0.0, f64::max)
    }

    /// Largest `|p - p(seed)|` relative to the size of `p`'s own term,
    /// `max(|p(seed)|, sum|coeffs of a_+-| |xi|^m)`, over samples with
    /// `|xi| <= xi_cap`.
    ///
    /// Near blow-up `x` sits on a zero of `a` while `|xi|^m` is huge, so `p`
    /// is a cancellation and one ulp in `x` moves it by `ulp * |xi|^m`. This
    /// normalization measures the integrator rather than that floor.
    pub fn scaled_energy_drift(&self, p: &PrincipalSymbol, xi_cap: f64) -> f64 {
        let p0 = self.samples[0].p_value;
        let bound = |fiber: Fiber| {
            let a = p.a(fiber);
            a.cos_coeffs().iter().chain(a.sin_coeffs()).map(|c| c.abs()).sum::<f64>()
        };
        self.samples
            .iter()
            .filter(|s| s.xi.abs() <= xi_cap)
            .map(|s| {
                let size = p0.abs().max(bound(Fiber::of(s.xi)) * s.xi.abs().powf(p.m));
                if size > 0.0 { (s.p_value - p0).abs() / size } else { 0.0 }
            })
            .fold(0.0, f64::max)
    }
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

type State = [f64; 2];

/// Adaptive Dormand-Prince stepper for autonomous systems.
///
/// `scale(y)` gives the per-component error scale; a step is accepted when
/// the embedded error is below `tol * max(scale(y), scale(y_new))`.
#[derive(Clone, Copy)]
struct Stepper<const N: usize> {
    tol: f64,
    h: f64,
    k1: [f64; N],
}

impl<const N: usize> Stepper<N> {
    fn new(field: &dyn Fn(&[f64; N]) -> [f64; N], y0: &[f64; N], tol: f64) -> Self {
        let k1 = field(y0);
        let size = k1.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        Self { tol, h: 1e-2 / size, k1 }
    }

    /// One accepted step from `y`, never beyond `h_max`. Returns the step taken.
    fn step(
        &mut self,
        field: &dyn Fn(&[f64; N]) -> [f64; N],
        scale: &dyn Fn(&[f64; N]) -> [f64; N],
        y: &mut [f64; N],
        h_max: f64,
        h_min: f64,
    ) -> std::result::Result<f64, ()> {
        loop {
            let h = self.h.min(h_max);
            if !(h >= h_min) {
                return Err(());
            }
            let mut k = [[0.0; N]; 7];
            k[0] = self.k1;
            for i in 1..7 {
                let mut yi = *y;
                for (j, kj) in k.iter().enumerate().take(i) {
                    for d in 0..N {
                        yi[d] += h * A[i][j] * kj[d];
                    }
                }
                k[i] = field(&yi);
            }
            let mut y_new = *y;
            for d in 0..N {
                y_new[d] += h * (0..6).map(|j| A[6][j] * k[j][d]).sum::<f64>();
            }
            k[6] = field(&y_new);
            let mut err: f64 = 0.0;
            let (s0, s1) = (scale(y), scale(&y_new));
            for d in 0..N {
                let e = h * (0..7).map(|j| E[j] * k[j][d]).sum::<f64>();
                err = err.max(e.abs() / (self.tol * s0[d].max(s1[d])));
            }
            let finite = y_new.iter().chain(&k[6]).all(|v| v.is_finite());
            if finite && err <= 1.0 {
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                *y = y_new;
                self.k1 = k[6];
                self.h = h * factor;
                return Ok(h);
            }
            let factor = if finite { (0.9 * err.powf(-0.2)).clamp(0.1, 0.5) } else { 0.1 };
            self.h = h * factor;
        }
    }
}

const TAYLOR_DEGREE: usize = 28;

/// The coefficient `a` with accurate evaluation next to its zeros.
///
/// In Fourier form a multiple zero is a cancellation (`sin^2 x = (1 - cos 2x)/2`)
/// and loses all relative accuracy once `|a|` nears rounding level, while
/// orbits next to it reach `|a| ~ |xi|^{-m}`. Positions are therefore carried
/// as offsets from the nearest zero, and `a` is summed from its Taylor series
/// there with the coefficients below the order of the zero set to zero.
struct Anchored {
    a: TrigPoly,
    da: TrigPoly,
    dda: TrigPoly,
    zeros: Vec<f64>,
    taylor: Vec<Vec<f64>>,
    radius: f64,
}

impl Anchored {
    fn new(a: &TrigPoly) -> Self {
        let opts = RootOptions::default();
        let zeros: Vec<f64> = if a.is_zero() {
            Vec::new()
        } else {
            find_zeros(a, &opts).map(|r| r.into_iter().map(|r| r.x).collect()).unwrap_or_default()
        };
        let taylor = zeros
            .iter()
            .map(|&x0| {
                let k = order_of_vanishing(a, x0, &opts).unwrap_or(opts.k_max + 1);
                let mut fact = 1.0;
                (0..=TAYLOR_DEGREE)
                    .map(|j| {
                        if j > 0 {
                            fact *= j as f64;
                        }
                        if j < k {
                            0.0
                        } else {
                            a.eval_derivative(j, x0) / fact
                        }
                    })
                    .collect()
            })
            .collect();
        let da = a.derivative();
        let dda = da.derivative();
        Self { a: a.clone(), da, dda, zeros, taylor, radius: 0.5 / a.degree().max(1) as f64 }
    }

    fn nearest(&self, x: f64) -> Option<usize> {
        (0..self.zeros.len()).min_by(|&i, &j| {
            circular_offset(x, self.zeros[i]).abs().total_cmp(&circular_offset(x, self.zeros[j]).abs())
        })
    }

    fn position(&self, anchor: Option<usize>, y: f64) -> f64 {
        anchor.map_or(y, |i| self.zeros[i] + y)
    }

    /// `(a, a', a'')` at offset `y` from the anchor.
    fn jet(&self, anchor: Option<usize>, y: f64) -> [f64; 3] {
        match anchor {
            Some(i) if y.abs() < self.radius => {
                let t = &self.taylor[i];
                let (mut v, mut d, mut dd) = (0.0, 0.0, 0.0);
                for j in (0..=TAYLOR_DEGREE).rev() {
                    v = v * y + t[j];
                    if j >= 1 {
                        d = d * y + j as f64 * t[j];
                    }
                    if j >= 2 {
                        dd = dd * y + (j * (j - 1)) as f64 * t[j];
                    }
                }
                [v, d, dd]
            }
            _ => {
                let x = self.position(anchor, y);
                [self.a.eval(x), self.da.eval(x), self.dda.eval(x)]
            }
        }
    }

    /// Re-express the offset relative to the nearest zero once it leaves the
    /// Taylor disc.
    fn reanchor(&self, anchor: &mut Option<usize>, y: &mut f64) {
        if anchor.is_some() && y.abs() < self.radius {
            return;
        }
        let x = self.position(*anchor, *y);
        if let Some(b) = self.nearest(x) {
            *y = circular_offset(x, self.zeros[b]);
            *anchor = Some(b);
        }
    }

    fn start(&self, x: f64) -> (Option<usize>, f64) {
        let mut anchor = None;
        let mut y = x;
        self.reanchor(&mut anchor, &mut y);
        (anchor, y)
    }
}

/// Error scale for `(y, s, ...)`. The fiber equation `s' = -a'(x) |xi|^{m-1}`
/// has relative sensitivity `|a''/a'|` to errors in `x`, so the position is
/// controlled relative to `|a'/a''|`. Next to a multiple zero this is the
/// distance to the zero, which orbits approach like `|xi|^{-m/k}`.
fn error_scale<const N: usize>(jet: [f64; 3], y: &[f64; N]) -> [f64; N] {
    let dist = (jet[1] / jet[2]).abs();
    let sx = (1.0 + y[0].abs()).min(dist.max(1e-300));
    let mut out = [0.0; N];
    out[0] = if sx.is_nan() { 1.0 + y[0].abs() } else { sx };
    for d in 1..N {
        out[d] = 1.0 + y[d].abs();
    }
    out
}

/// Integrate the Hamilton flow from `seed` for time `t_end` (negative for
/// backward integration).
///
/// Terminates with `BlowUp` once `|xi|` passes `blowup_threshold` while
/// growing faster than exponentially, and with `FiberFloor` when `|xi|`
/// drops below the floor.
///
/// The integration variable is `sigma` with `d sigma = |xi|^{m-1} dt`, in
/// which the field reads `x' = sign m a(x)`, `s' = -sign a'(x)` and the
/// physical time `tau' = |xi|^{1-m}` is carried as a third component. Near a
/// blow-up `tau` converges while `sigma` keeps a well-resolved step size.
pub fn integrate_flow(p: &PrincipalSymbol, seed: Seed, t_end: f64, opts: &FlowOptions) -> Result<Trajectory> {
    if !(seed.xi != 0.0 && seed.xi.is_finite() && seed.x.is_finite()) {
        return Err(Error::Precondition(format!("seed xi must be finite and nonzero, got {}", seed.xi)));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Precondition("tol must be positive".into()));
    }
    let direction = if t_end < 0.0 { Direction::Backward } else { Direction::Forward };
    let dir = direction.sign();
    let fiber = Fiber::of(seed.xi);
    let sign = fiber.sign();
    let coef = Anchored::new(p.a(fiber));
    let m = p.m;
    let outcome = |kind, blowup_time, growth_exponent, fit_residual| FlowOutcome {
        kind,
        blowup_time,
        direction,
        growth_exponent,
        fit_residual,
    };

    let (mut anchor, y0) = coef.start(seed.x);
    let mut y = [y0, seed.xi.abs().ln(), 0.0];
    let sample = |anchor: Option<usize>, y: &[f64; 3]| Sample {
        t: dir * y[2],
        x: wrap_angle(coef.position(anchor, y[0])),
        xi: sign * y[1].exp(),
        p_value: coef.jet(anchor, y[0])[0] * (m * y[1]).exp(),
    };
    let mut samples = vec![sample(anchor, &y)];
    let floor = opts.fiber_floor.ln();
    if y[1] < floor {
        return Ok(Trajectory { samples, outcome: outcome(OutcomeKind::FiberFloor, None, None, None) });
    }

    let field_at = |anchor: Option<usize>, y: &[f64; 3]| {
        let j = coef.jet(anchor, y[0]);
        [dir * sign * m * j[0], -dir * sign * j[1], (-(m - 1.0) * y[1]).exp()]
    };
    // |ds/dt| along the trajectory, used for the growth exponent.
    let speed = |anchor: Option<usize>, y: &[f64; 3]| coef.jet(anchor, y[0])[1].abs() * ((m - 1.0) * y[1]).exp();

    let duration = t_end.abs();
    let mut stepper = Stepper::new(&|y| field_at(anchor, y), &y, opts.tol);
    let s_threshold = opts.blowup_threshold.ln();
    let decades = 2.0 * std::f64::consts::LN_10;
    let mut next_check = s_threshold;
    let mut log_speed: Vec<(f64, f64)> = vec![(y[1], speed(anchor, &y).ln())];
    let mut sigma: f64 = 0.0;
    let mut last_gamma = None;
    let reached = |tau: f64| tau >= duration - 1e-12 * duration.max(1.0);
    for _ in 0..opts.max_steps {
        if reached(y[2]) {
            return Ok(Trajectory {
                samples,
                outcome: outcome(OutcomeKind::ReachedHorizon, None, last_gamma, None),
            });
        }
        let h_min = 1e-13 * sigma.max(1.0);
        let field = |y: &[f64; 3]| field_at(anchor, y);
        let scale = |y: &[f64; 3]| error_scale(coef.jet(anchor, y[0]), y);
        // Cap the step so that physical time lands on the horizon.
        let mut h_max = f64::INFINITY;
        let (y_prev, stepper_prev) = (y, stepper);
        loop {
            match stepper.step(&field, &scale, &mut y, h_max, h_min) {
                Ok(h) => {
                    if y[2] > duration * (1.0 + 1e-12) {
                        let rate = field(&y_prev)[2].max(field(&y)[2]);
                        h_max = (h * 0.5).min((duration - y_prev[2]) / rate);
                        y = y_prev;
                        stepper = Stepper { h: h_max, ..stepper_prev };
                        continue;
                    }
                    if y[2] > duration || reached(y[2]) {
                        y[2] = duration;
                    }
                    sigma += h;
                    break;
                }
                Err(()) => {
                    return Err(Error::Stiffness {
                        t: dir * y_prev[2],
                        x: wrap_angle(coef.position(anchor, y_prev[0])),
                        xi: sign * y_prev[1].exp(),
                    })
                }
            }
        }
        coef.reanchor(&mut anchor, &mut y[0]);
        samples.push(sample(anchor, &y));
        log_speed.push((y[1], speed(anchor, &y).ln()));
        if y[1] < floor {
            return Ok(Trajectory { samples, outcome: outcome(OutcomeKind::FiberFloor, None, last_gamma, None) });
        }
        if y[1] >= next_check {
            let gamma = growth_exponent(&log_speed, y[1] - decades);
            last_gamma = gamma;
            if gamma.is_some_and(|g| g > opts.growth_exponent_threshold) {
                let (t_star, residual) = extrapolate_blowup(&samples, m, y[1] - std::f64::consts::LN_10);
                return Ok(Trajectory {
                    samples,
                    outcome: outcome(OutcomeKind::BlowUp, t_star, gamma, residual),
                });
            }
            next_check = y[1] + decades;
            if y[1] >= opts.growth_ceiling.ln() {
                return Ok(Trajectory {
                    samples,
                    outcome: outcome(OutcomeKind::ReachedHorizon, None, last_gamma, None),
                });
            }
        }
    }
    let last = samples.last().copied().unwrap_or(samples[0]);
    Err(Error::Stiffness { t: last.t, x: last.x, xi: last.xi })
}

/// Slope of `ln|s'|` against `s` over samples with `s >= s_from`.
fn growth_exponent(log_speed: &[(f64, f64)], s_from: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> =
        log_speed.iter().filter(|(s, g)| *s >= s_from && g.is_finite()).copied().collect();
    if pts.len() < 3 {
        pts = log_speed.iter().rev().filter(|(_, g)| g.is_finite()).take(5).copied().collect();
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    linear_fit(&xs, &ys).map(|f| f.slope)
}

/// Fit `|xi|^{1-m}` as an affine function of `t` over samples with
/// `ln|xi| >= s_from` and return its root.
fn extrapolate_blowup(samples: &[Sample], m: f64, s_from: f64) -> (Option<f64>, Option<f64>) {
    let mut pts: Vec<&Sample> = samples.iter().filter(|s| s.xi.abs().ln() >= s_from).collect();
    if pts.len() < 3 {
        pts = samples.iter().rev().take(3).collect();
    }
    let ts: Vec<f64> = pts.iter().map(|s| s.t).collect();
    let ws: Vec<f64> = pts.iter().map(|s| s.xi.abs().powf(1.0 - m)).collect();
    match linear_fit(&ts, &ws) {
        Some(fit) => (fit.root(), Some(rms_residual(&fit, &ts, &ws))),
        None => (None, None),
    }
}

fn rms_residual(fit: &LinearFit, xs: &[f64], ys: &[f64]) -> f64 {
    let ss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - fit.predict(*x)).powi(2)).sum();
    (ss / xs.len().max(1) as f64).sqrt()
}

/// Blow-up time along `direction` within `opts.horizon`, if any.
pub fn detect_blowup(p: &PrincipalSymbol, seed: Seed, direction: Direction, opts: &FlowOptions) -> Result<Option<f64>> {
    let traj = integrate_flow(p, seed, direction.sign() * opts.horizon, opts)?;
    Ok(match traj.outcome.kind {
        OutcomeKind::BlowUp => traj.outcome.blowup_time,
        _ => None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeVerdict {
    Complete,
    Incomplete,
    Unresolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowUpWitness {
    pub seed: Seed,
    pub direction: Direction,
    pub blowup_time: Option<f64>,
    pub growth_exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFailure {
    pub seed: Seed,
    pub direction: Direction,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub verdict: ProbeVerdict,
    pub analytic: Completeness,
    pub agrees: bool,
    pub seeds: usize,
    pub reached_horizon: usize,
    pub fiber_floor: usize,
    pub witnesses: Vec<BlowUpWitness>,
    pub failures: Vec<ProbeFailure>,
}

/// Seeds on every characteristic fiber at `|xi| in {1, 4, 16}`, next to
/// every characteristic point, and on a uniform grid in `x`.
pub fn default_seed_grid(p: &PrincipalSymbol, opts: &RootOptions) -> Result<Vec<Seed>> {
    const MAGNITUDES: [f64; 3] = [1.0, 4.0, 16.0];
    const OFFSETS: [f64; 4] = [-0.2, -0.05, 0.05, 0.2];
    const UNIFORM: usize = 16;
    let mut seeds = Vec::new();
    for fiber in Fiber::BOTH {
        let sign = fiber.sign();
        for r in find_zeros(p.a(fiber), opts)? {
            for mag in MAGNITUDES {
                seeds.push(Seed { x: r.x, xi: sign * mag });
                for off in OFFSETS {
                    seeds.push(Seed { x: wrap_angle(r.x + off), xi: sign * mag });
                }
            }
        }
        for i in 0..UNIFORM {
            for mag in [1.0, 4.0] {
                seeds.push(Seed { x: TAU * (i as f64 + 0.5) / UNIFORM as f64, xi: sign * mag });
            }
        }
    }
    Ok(seeds)
}

/// Run every seed in both time directions and compare the outcome with the
/// analytic rule (`m <= k` at every characteristic point).
pub fn completeness_probe(
    p: &PrincipalSymbol,
    seeds: &[Seed],
    flow: &FlowOptions,
    roots: &RootOptions,
) -> Result<ProbeReport> {
    let analytic = survey(p, roots)?.completeness_verdict;
    let jobs: Vec<(Seed, Direction)> = seeds
        .iter()
        .flat_map(|&s| [(s, Direction::Forward), (s, Direction::Backward)])
        .collect();
    let results: Vec<(Seed, Direction, Result<Trajectory>)> = jobs
        .par_iter()
        .map(|&(seed, dir)| (seed, dir, integrate_flow(p, seed, dir.sign() * flow.horizon, flow)))
        .collect();

    let mut witnesses = Vec::new();
    let mut failures = Vec::new();
    let (mut reached, mut floor) = (0, 0);
    for (seed, direction, res) in results {
        match res {
            Ok(traj) => match traj.outcome.kind {
                OutcomeKind::BlowUp => witnesses.push(BlowUpWitness {
                    seed,
                    direction,
                    blowup_time: traj.outcome.blowup_time,
                    growth_exponent: traj.outcome.growth_exponent,
                }),
                OutcomeKind::ReachedHorizon => reached += 1,
                OutcomeKind::FiberFloor => floor += 1,
            },
            Err(e) => failures.push(ProbeFailure { seed, direction, error: e.to_string() }),
        }
    }
    let key = |s: &Seed, d: &Direction| (s.x.to_bits(), s.xi.to_bits(), *d);
    witnesses.sort_by_key(|w| key(&w.seed, &w.direction));
    failures.sort_by_key(|f| key(&f.seed, &f.direction));

    let verdict = if !witnesses.is_empty() {
        ProbeVerdict::Incomplete
    } else if !failures.is_empty() {
        ProbeVerdict::Unresolved
    } else {
        ProbeVerdict::Complete
    };
    let agrees = matches!(
        (verdict, analytic),
        (ProbeVerdict::Complete, Completeness::Complete) | (ProbeVerdict::Incomplete, Completeness::Incomplete)
    );
    Ok(ProbeReport {
        verdict,
        analytic,
        agrees,
        seeds: seeds.len(),
        reached_horizon: reached,
        fiber_floor: floor,
        witnesses,
        failures,
    })
}

/// Flow of the rescaled field `<xi>^{1-m} H_p`, which extends smoothly to
/// fiber infinity. A seed with infinite `xi` evolves by `z' = m a_+-(z)`.
pub fn rescaled_flow(p: &PrincipalSymbol, seed: Seed, t_end: f64, opts: &FlowOptions) -> Result<Trajectory> {
    if !(seed.xi.abs() > 1.0) || seed.xi.is_nan() {
        return Err(Error::Precondition(format!("rescaled flow needs |xi| > 1, got {}", seed.xi)));
    }
    let direction = if t_end < 0.0 { Direction::Backward } else { Direction::Forward };
    let dir = direction.sign();
    let fiber = Fiber::of(seed.xi);
    let sign = fiber.sign();
    let coef = Anchored::new(p.a(fiber));
    let m = p.m;
    let at_infinity = seed.xi.is_infinite();

    // r^{m-1} with r = |zeta| / <zeta>, written in terms of sigma = ln|zeta|.
    let damping = move |sigma: f64| (-(m - 1.0) * 0.5 * (-2.0 * sigma).exp().ln_1p()).exp();
    let field_at = |anchor: Option<usize>, y: &State| {
        let j = coef.jet(anchor, y[0]);
        if at_infinity {
            [dir * sign * m * j[0], 0.0]
        } else {
            let w = dir * sign * damping(y[1]);
            [w * m * j[0], -w * j[1]]
        }
    };
    let sample = |anchor: Option<usize>, tau: f64, y: &State| {
        let xi = if at_infinity { sign * f64::INFINITY } else { sign * y[1].exp() };
        let p_value = if at_infinity { f64::NAN } else { coef.jet(anchor, y[0])[0] * (m * y[1]).exp() };
        Sample { t: dir * tau, x: wrap_angle(coef.position(anchor, y[0])), xi, p_value }
    };

    let (mut anchor, y0) = coef.start(seed.x);
    let mut y: State = [y0, if at_infinity { 0.0 } else { seed.xi.abs().ln() }];
    let mut samples = vec![sample(anchor, 0.0, &y)];
    let mut stepper = Stepper::new(&|y| field_at(anchor, y), &y, opts.tol);
    let duration = t_end.abs();
    let mut tau = 0.0;
    for _ in 0..opts.max_steps {
        if tau >= duration {
            let outcome = FlowOutcome {
                kind: OutcomeKind::ReachedHorizon,
                blowup_time: None,
                direction,
                growth_exponent: None,
                fit_residual: None,
            };
            return Ok(Trajectory { samples, outcome });
        }
        let h_min = 1e-13 * tau.max(1.0);
        let y_prev = y;
        let field = |y: &State| field_at(anchor, y);
        let scale = |y: &State| error_scale(coef.jet(anchor, y[0]), y);
        match stepper.step(&field, &scale, &mut y, duration - tau, h_min) {
            Ok(h) => tau = if duration - tau <= h { duration } else { tau + h },
            Err(()) => {
                return Err(Error::Stiffness {
                    t: dir * tau,
                    x: wrap_angle(coef.position(anchor, y_prev[0])),
                    xi: sign * y_prev[1].exp(),
                })
            }
        }
        coef.reanchor(&mut anchor, &mut y[0]);
        samples.push(sample(anchor, tau, &y));
    }
    let last = samples.last().copied().unwrap_or(samples[0]);
    Err(Error::Stiffness { t: last.t, x: last.x, xi: last.xi })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceAsymptotics {
    /// Backward growth rate of `ln zeta` in `|t|`.
    pub theta_fit: f64,
    pub theta_residual: f64,
    /// Backward decay rate of `ln |z - x0|` in `|t|`; `None` when `z` sits on `x0`.
    pub spatial_decay_fit: Option<f64>,
    pub spatial_residual: Option<f64>,
    pub max_offset: f64,
}

/// Backward asymptotics of the rescaled flow from a seed near a radial source.
pub fn source_asymptotics(
    p: &PrincipalSymbol,
    x0: f64,
    fiber: Fiber,
    seed: Seed,
    eps: f64,
    xi0: f64,
    t_back: f64,
    opts: &FlowOptions,
    roots: &RootOptions,
) -> Result<SourceAsymptotics> {
    let rs = radial_sets(p, roots)?;
    if !rs.is_source(x0, fiber, 1e-9) {
        return Err(Error::Precondition(format!("({x0}, {fiber}) is not a radial source")));
    }
    if circular_offset(seed.x, x0).abs() >= eps || !(fiber.sign() * seed.xi > xi0) {
        return Err(Error::Precondition(format!(
            "seed ({}, {}) lies outside |x - x0| < {eps}, {fiber}xi > {xi0}",
            seed.x, seed.xi
        )));
    }
    let traj = rescaled_flow(p, seed, -t_back.abs(), opts)?;
    let tail: Vec<&Sample> = traj.samples.iter().filter(|s| s.t.abs() >= 0.5 * t_back.abs()).collect();
    let ts: Vec<f64> = tail.iter().map(|s| s.t.abs()).collect();
    let ln_zeta: Vec<f64> = tail.iter().map(|s| s.xi.abs().ln()).collect();
    let theta = linear_fit(&ts, &ln_zeta)
        .ok_or_else(|| Error::Precondition("backward window too short for a fit".into()))?;
    let offsets: Vec<f64> = tail.iter().map(|s| circular_offset(s.x, x0).abs()).collect();
    let max_offset = traj.samples.iter().map(|s| circular_offset(s.x, x0).abs()).fold(0.0, f64::max);
    let (spatial_decay_fit, spatial_residual) = if offsets.iter().all(|&d| d > 0.0) {
        let ln_off: Vec<f64> = offsets.iter().map(|d| d.ln()).collect();
        match linear_fit(&ts, &ln_off) {
            Some(f) => (Some(-f.slope), Some(rms_residual(&f, &ts, &ln_off))),
            None => (None, None),
        }
    } else {
        (None, None)
    };
    Ok(SourceAsymptotics {
        theta_fit: theta.slope,
        theta_residual: rms_residual(&theta, &ts, &ln_zeta),
        spatial_decay_fit,
        spatial_residual,
        max_offset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sym(m: f64, a: TrigPoly) -> PrincipalSymbol {
        PrincipalSymbol::symmetric(m, a).unwrap()
    }

    fn sine() -> TrigPoly {
        TrigPoly::sin_mode(1, 1.0)
    }

    #[test]
    fn frozen_fiber_closed_form() {
        let p = sym(2.0, sine());
        let opts = FlowOptions::default();
        let traj = integrate_flow(&p, Seed { x: PI, xi: 1.0 }, 0.9, &opts).unwrap();
        for s in &traj.samples {
            assert!(circular_offset(s.x, PI).abs() < 1e-12);
            assert!((s.xi - 1.0 / (1.0 - s.t)).abs() <= 1e-7 * s.xi, "{s:?}");
        }
        let t = detect_blowup(&p, Seed { x: PI, xi: 1.0 }, Direction::Forward, &opts).unwrap().unwrap();
        assert!((t - 1.0).abs() < 1e-3, "{t}");
    }

    #[test]
    fn source_fiber_decays_forward_and_blows_up_backward() {
        let p = sym(2.0, sine());
        let opts = FlowOptions::default();
        assert_eq!(detect_blowup(&p, Seed { x: 0.0, xi: 1.0 }, Direction::Forward, &opts).unwrap(), None);
        let t = detect_blowup(&p, Seed { x: 0.0, xi: 1.0 }, Direction::Backward, &opts).unwrap().unwrap();
        assert!((t + 1.0).abs() < 1e-3, "{t}");
    }

    #[test]
    fn first_order_never_blows_up() {
        let p = sym(1.0, sine());
        let opts = FlowOptions::default();
        let traj = integrate_flow(&p, Seed { x: PI, xi: 1.0 }, 50.0, &opts).unwrap();
        assert_eq!(traj.outcome.kind, OutcomeKind::ReachedHorizon);
        assert!(traj.last().xi > 1e20);
    }

    #[test]
    fn elliptic_bound() {
        let p = sym(2.0, TrigPoly::new(vec![2.0], vec![1.0]));
        let opts = FlowOptions { horizon: 10.0, ..FlowOptions::default() };
        for (i, xi) in [1.0, -3.0, 7.5].into_iter().enumerate() {
            let seed = Seed { x: 0.7 * i as f64, xi };
            let traj = integrate_flow(&p, seed, 10.0, &opts).unwrap();
            let sup = traj.samples.iter().map(|s| s.xi.abs()).fold(0.0, f64::max);
            assert!(sup <= 3f64.sqrt() * xi.abs() * (1.0 + 1e-8));
            assert!(traj.energy_drift(f64::INFINITY) < 1e-6);
        }
    }

    #[test]
    fn scaled_drift_survives_blowup() {
        let p = sym(3.0, TrigPoly::cos_mode(2, 1.0));
        let traj = integrate_flow(&p, Seed { x: 0.5, xi: 4.0 }, -5.0, &FlowOptions::default()).unwrap();
        assert_eq!(traj.outcome.kind, OutcomeKind::BlowUp);
        assert!(traj.scaled_energy_drift(&p, 1e8) < 1e-6);
    }

    #[test]
    fn energy_drift_off_fiber() {
        let p = sym(2.0, sine());
        let opts = FlowOptions { tol: 1e-10, ..FlowOptions::default() };
        let traj = integrate_flow(&p, Seed { x: PI / 2.0, xi: 1.0 }, 0.5, &opts).unwrap();
        for s in &traj.samples {
            assert!((s.p_value - 1.0).abs() < 1e-8, "{s:?}");
        }
    }

    #[test]
    fn threshold_halving_is_consistent() {
        let p = sym(2.0, sine());
        let full = FlowOptions::default();
        let half = FlowOptions { blowup_threshold: 0.5e8, ..full };
        let seed = Seed { x: PI, xi: 2.0 };
        let t1 = detect_blowup(&p, seed, Direction::Forward, &full).unwrap().unwrap();
        let t2 = detect_blowup(&p, seed, Direction::Forward, &half).unwrap().unwrap();
        assert!((t1 - t2).abs() < 1e-4);
        assert!((t1 - 0.5).abs() < 1e-3);
    }

    #[test]
    fn probe_examples() {
        let roots = RootOptions::default();
        let flow = FlowOptions::default();
        let cases = [
            (sym(2.0, sine().pow(2)), ProbeVerdict::Complete),
            (sym(3.0, sine().pow(2)), ProbeVerdict::Incomplete),
            (sym(2.0, TrigPoly::new(vec![2.0], vec![1.0])), ProbeVerdict::Complete),
            (sym(2.0, sine()), ProbeVerdict::Incomplete),
        ];
        for (p, expected) in cases {
            let seeds = default_seed_grid(&p, &roots).unwrap();
            let report = completeness_probe(&p, &seeds, &flow, &roots).unwrap();
            assert_eq!(report.verdict, expected, "{p:?}: {:?}", report.failures);
            assert!(report.agrees);
        }
    }

    #[test]
    fn rescaled_flow_fixed_points_and_boundary() {
        let p = sym(2.0, sine());
        let opts = FlowOptions::default();
        let traj = rescaled_flow(&p, Seed { x: 0.0, xi: 10.0 }, -5.0, &opts).unwrap();
        assert!(traj.samples.iter().all(|s| s.x == 0.0));
        let traj = rescaled_flow(&p, Seed { x: 0.1, xi: 50.0 }, -5.0, &opts).unwrap();
        assert!(traj.samples.windows(2).all(|w| w[1].xi > w[0].xi));
        // z' = 2 sin z has the closed form tan(z/2) = tan(z0/2) e^{2t}.
        let traj = rescaled_flow(&p, Seed { x: 0.1, xi: f64::INFINITY }, 1.0, &opts).unwrap();
        for s in &traj.samples {
            let exact = 2.0 * ((0.05f64).tan() * (2.0 * s.t).exp()).atan();
            assert!((s.x - exact).abs() < 1e-7);
        }
    }

    #[test]
    fn source_fits() {
        let p = sym(2.0, sine());
        let (flow, roots) = (FlowOptions::default(), RootOptions::default());
        let fit = source_asymptotics(&p, 0.0, Fiber::Plus, Seed { x: 0.1, xi: 10.0 }, 0.5, 1.0, 10.0, &flow, &roots)
            .unwrap();
        assert!((fit.theta_fit - 1.0).abs() < 0.05, "{fit:?}");
        assert!((fit.spatial_decay_fit.unwrap() - 2.0).abs() < 0.1, "{fit:?}");
        let on = source_asymptotics(&p, 0.0, Fiber::Plus, Seed { x: 0.0, xi: 10.0 }, 0.5, 1.0, 10.0, &flow, &roots)
            .unwrap();
        assert_eq!(on.max_offset, 0.0);
        assert!(on.spatial_decay_fit.is_none());
        assert!(source_asymptotics(&p, PI, Fiber::Plus, Seed { x: PI, xi: 10.0 }, 0.5, 1.0, 10.0, &flow, &roots)
            .is_err());
        assert!(source_asymptotics(&p, 0.0, Fiber::Plus, Seed { x: 0.7, xi: 10.0 }, 0.5, 1.0, 10.0, &flow, &roots)
            .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn time_reversal(x in 0.0..TAU, xi in 1.0..4.0f64, t in 0.05..0.4f64, neg in any::<bool>()) {
            let p = sym(2.0, TrigPoly::new(vec![0.5], vec![1.0]));
            let opts = FlowOptions { tol: 1e-11, ..FlowOptions::default() };
            let xi = if neg { -xi } else { xi };
            let fwd = integrate_flow(&p, Seed { x, xi }, t, &opts).unwrap();
            prop_assume!(fwd.outcome.kind == OutcomeKind::ReachedHorizon);
            let end = fwd.last();
            let back = integrate_flow(&p, Seed { x: end.x, xi: end.xi }, -t, &opts).unwrap();
            prop_assume!(back.outcome.kind == OutcomeKind::ReachedHorizon);
            let b = back.last();
            prop_assert!(circular_offset(b.x, x).abs() < 1e-6);
            prop_assert!((b.xi - xi).abs() < 1e-6 * xi.abs());
        }
    }
}
