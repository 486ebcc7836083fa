//! Escape functions over the radial sets and grid checks of the symbol
//! inequalities `H_p(e log<xi>) <= -C <xi>^{m-1}` and `H_p sigma >= c`.

use std::f64::consts::{LN_2, PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::symbols::{
    circular_offset, find_zeros, japanese, zero_sets, Fiber, PrincipalSymbol, RootOptions, ZeroSets,
};
use crate::{Error, Result};

/// Smooth step: 1 for `u <= 0`, 0 for `u >= 1`, built from the standard
/// mollifier `exp(-1/(1-u^2))`.
pub fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        return 1.0;
    }
    if u >= 1.0 {
        return 0.0;
    }
    let (a, b) = (bump(u), bump(1.0 - u));
    a / (a + b)
}

pub fn smooth_step_derivative(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        return 0.0;
    }
    let (a, b) = (bump(u), bump(1.0 - u));
    let (da, db) = (bump_derivative(u), bump_derivative(1.0 - u));
    let sum = a + b;
    (da * b + a * db) / (sum * sum)
}

fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

fn bump_derivative(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let q = 1.0 - u * u;
    bump(u) * (-2.0 * u / (q * q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeCenter {
    pub x: f64,
    pub fiber: Fiber,
    /// `+1` over a source, `-1` over a sink.
    pub sign: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeFunction {
    pub eps: f64,
    pub r: f64,
    pub zero_sets: ZeroSets,
    pub centers: Vec<EscapeCenter>,
}

/// `(e, de/dx, de/dxi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeJet {
    pub value: f64,
    pub dx: f64,
    pub dxi: f64,
}

impl EscapeFunction {
    fn chi_x(&self, d: f64) -> (f64, f64) {
        let u = 2.0 * d.abs() / self.eps - 1.0;
        (smooth_step(u), smooth_step_derivative(u) * 2.0 / self.eps * d.signum())
    }

    fn chi_xi(&self, xi: f64) -> (f64, f64) {
        let u = (xi.abs() / self.r).ln() / LN_2;
        (1.0 - smooth_step(u), -smooth_step_derivative(u) / (LN_2 * xi))
    }

    pub fn jet(&self, x: f64, xi: f64) -> EscapeJet {
        let mut jet = EscapeJet { value: 0.0, dx: 0.0, dxi: 0.0 };
        if xi.abs() <= self.r {
            return jet;
        }
        let fiber = Fiber::of(xi);
        let (cf, dcf) = self.chi_xi(xi);
        for c in self.centers.iter().filter(|c| c.fiber == fiber) {
            let d = circular_offset(x, c.x);
            if d.abs() >= self.eps {
                continue;
            }
            let (cx, dcx) = self.chi_x(d);
            jet.value += c.sign * cx * cf;
            jet.dx += c.sign * dcx * cf;
            jet.dxi += c.sign * cx * dcf;
        }
        jet
    }

    pub fn value(&self, x: f64, xi: f64) -> f64 {
        self.jet(x, xi).value
    }

    pub fn sources(&self) -> impl Iterator<Item = &EscapeCenter> {
        self.centers.iter().filter(|c| c.sign > 0.0)
    }

    pub fn sinks(&self) -> impl Iterator<Item = &EscapeCenter> {
        self.centers.iter().filter(|c| c.sign < 0.0)
    }

    /// Inside `U_{eps * frac, r_factor * R}` of some center.
    pub fn in_region(&self, x: f64, xi: f64, frac: f64, r_factor: f64) -> bool {
        xi.abs() > r_factor * self.r
            && self
                .centers
                .iter()
                .any(|c| c.fiber == Fiber::of(xi) && circular_offset(x, c.x).abs() < frac * self.eps)
    }
}

/// Distance from `x` to the nearest zero of `a'`, or `pi` if there is none.
fn derivative_free_radius(p: &PrincipalSymbol, fiber: Fiber, x: f64, opts: &RootOptions) -> Result<f64> {
    let da = p.a(fiber).derivative();
    if da.is_zero() {
        return Ok(PI);
    }
    Ok(find_zeros(&da, opts)?.iter().map(|r| circular_offset(r.x, x).abs()).fold(PI, f64::min))
}

/// A quarter of the smallest gap between zeros on a common fiber, capped by
/// the radius on which `a'` keeps its sign.
pub fn default_eps(p: &PrincipalSymbol, opts: &RootOptions) -> Result<f64> {
    let zs = zero_sets(p, opts)?;
    let mut eps = PI / 4.0;
    for fiber in Fiber::BOTH {
        let z = zs.all(fiber);
        for (i, &x) in z.iter().enumerate() {
            if z.len() > 1 {
                let next = z[(i + 1) % z.len()];
                let gap = if z.len() == 2 && i == 1 { TAU - circular_offset(next, x).abs() } else { circular_offset(next, x).abs() };
                eps = eps.min(gap.min(TAU - gap) / 4.0);
            }
            eps = eps.min(derivative_free_radius(p, fiber, x, opts)?);
        }
    }
    Ok(eps * (1.0 - 1e-9))
}

/// Escape function `+1` near sources and `-1` near sinks for `|xi| >= 2R`.
pub fn build_escape(p: &PrincipalSymbol, eps: f64, r: f64, opts: &RootOptions) -> Result<EscapeFunction> {
    if !(eps > 0.0 && r > 0.0) {
        return Err(Error::Precondition(format!("need eps > 0 and R > 0, got {eps}, {r}")));
    }
    let zs = zero_sets(p, opts)?;
    let mut centers = Vec::new();
    for fiber in Fiber::BOTH {
        let z = zs.all(fiber);
        for (i, &x) in z.iter().enumerate() {
            for &y in &z[i + 1..] {
                if circular_offset(x, y).abs() < 4.0 * eps {
                    return Err(Error::Separation {
                        fiber,
                        first: x,
                        second: y,
                        reason: format!("2eps-balls overlap for eps = {eps}"),
                    });
                }
            }
            let da = p.a(fiber).derivative();
            let s0 = da.eval(x).signum();
            for k in -63..=63 {
                let xk = x + eps * k as f64 / 64.0;
                let v = da.eval(xk);
                if v.signum() != s0 || v.abs() <= opts.derivative_floor {
                    return Err(Error::Separation {
                        fiber,
                        first: x,
                        second: xk,
                        reason: format!("a' vanishes within eps = {eps}"),
                    });
                }
            }
        }
        for &x in zs.by_slope(fiber, fiber) {
            centers.push(EscapeCenter { x, fiber, sign: 1.0 });
        }
        let other = if fiber == Fiber::Plus { Fiber::Minus } else { Fiber::Plus };
        for &x in zs.by_slope(fiber, other) {
            centers.push(EscapeCenter { x, fiber, sign: -1.0 });
        }
    }
    Ok(EscapeFunction { eps, r, zero_sets: zs, centers })
}

/// `H_p f = p_xi f_x - p_x f_xi` for `f = e log<xi>`.
pub fn hp_escape(p: &PrincipalSymbol, e: &EscapeFunction, x: f64, xi: f64) -> f64 {
    let jet = e.jet(x, xi);
    let l = japanese(xi).ln();
    let dl = xi / (1.0 + xi * xi);
    p.dxi(x, xi) * jet.dx * l - p.dx(x, xi) * (jet.dxi * l + jet.value * dl)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeGrid {
    pub nx: usize,
    pub nxi: usize,
    pub xi_max: f64,
}

impl Default for EscapeGrid {
    fn default() -> Self {
        Self { nx: 256, nxi: 128, xi_max: 1e4 }
    }
}

impl EscapeGrid {
    /// Nodes of `U_{eps/2, 2R}` around `center`, plateau edges included.
    fn inner_nodes(&self, e: &EscapeFunction, center: &EscapeCenter) -> Vec<(f64, f64)> {
        let xi_lo = 2.0 * e.r;
        let mut out = Vec::with_capacity(self.nx * self.nxi);
        for i in 0..self.nx {
            let x = center.x + 0.5 * e.eps * (-1.0 + 2.0 * i as f64 / (self.nx - 1) as f64);
            for j in 0..self.nxi {
                let xi = xi_lo * (self.xi_max / xi_lo).powf(j as f64 / (self.nxi - 1) as f64);
                out.push((x, center.fiber.sign() * xi));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationSummary {
    /// Nodes of the full `|xi| >= 1` scan where a compensating `b^2` is needed.
    pub nodes_needing_b: usize,
    /// Of those, how many lie in the quarter-size regions (must be zero).
    pub inside_quarter_regions: usize,
    pub max_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub region: String,
    pub grid: EscapeGrid,
    pub nodes: usize,
    /// Extreme of the normalized quantity over the grid; `None` on an empty region.
    pub worst_ratio: Option<f64>,
    /// `C = -worst_ratio` for the escape estimate, `c = worst_ratio` for the commutator.
    pub constant: Option<f64>,
    pub location: Option<(f64, f64)>,
    pub vacuous: bool,
    pub compensation: Option<CompensationSummary>,
}

fn extreme_over_centers(
    e: &EscapeFunction,
    grid: &EscapeGrid,
    f: impl Fn(f64, f64) -> f64 + Sync,
    take_max: bool,
) -> (usize, Option<(f64, f64, f64)>) {
    let per_center: Vec<(usize, Option<(f64, f64, f64)>)> = e
        .centers
        .par_iter()
        .map(|c| {
            let nodes = grid.inner_nodes(e, c);
            let mut best: Option<(f64, f64, f64)> = None;
            for &(x, xi) in &nodes {
                let v = f(x, xi);
                let better = match best {
                    None => true,
                    Some((b, _, _)) => (take_max && v > b) || (!take_max && v < b),
                };
                if better {
                    best = Some((v, x, xi));
                }
            }
            (nodes.len(), best)
        })
        .collect();
    let nodes = per_center.iter().map(|(n, _)| n).sum();
    let best = per_center.into_iter().filter_map(|(_, b)| b).fold(None, |acc: Option<(f64, f64, f64)>, b| match acc {
        None => Some(b),
        Some(a) if (take_max && b.0 > a.0) || (!take_max && b.0 < a.0) => Some(b),
        Some(a) => Some(a),
    });
    (nodes, best)
}

/// Grid maximum of `H_p(e log<xi>) / <xi>^{m-1}` over the inner regions.
pub fn escape_derivative_check(p: &PrincipalSymbol, e: &EscapeFunction, grid: &EscapeGrid) -> Result<EstimateReport> {
    let m = p.m;
    let ratio = |x: f64, xi: f64| hp_escape(p, e, x, xi) / japanese(xi).powf(m - 1.0);
    let (nodes, best) = extreme_over_centers(e, grid, ratio, true);
    let region = format!("U(eps/2 = {}, 2R = {}) over {} radial points", e.eps / 2.0, 2.0 * e.r, e.centers.len());
    let Some((worst, x, xi)) = best else {
        return Ok(EstimateReport {
            region,
            grid: *grid,
            nodes,
            worst_ratio: None,
            constant: None,
            location: None,
            vacuous: true,
            compensation: None,
        });
    };
    let constant = -worst;
    if !(constant > 0.0) {
        return Err(Error::EstimateFailure { constant, x, xi });
    }
    let compensation = compensation_scan(p, e, grid, constant);
    Ok(EstimateReport {
        region,
        grid: *grid,
        nodes,
        worst_ratio: Some(worst),
        constant: Some(constant),
        location: Some((x, xi)),
        vacuous: false,
        compensation: Some(compensation),
    })
}

/// Where `H_p(e log<xi>) + C <xi>^{m-1} > 0` on the full phase space, i.e.
/// where a compensating `b^2` term is needed.
fn compensation_scan(p: &PrincipalSymbol, e: &EscapeFunction, grid: &EscapeGrid, constant: f64) -> CompensationSummary {
    let rows: Vec<(usize, usize, f64)> = (0..grid.nx)
        .into_par_iter()
        .map(|i| {
            let x = TAU * i as f64 / grid.nx as f64;
            let (mut need, mut inside, mut excess) = (0, 0, 0.0f64);
            for fiber in Fiber::BOTH {
                for j in 0..grid.nxi {
                    let xi = fiber.sign() * grid.xi_max.powf(j as f64 / (grid.nxi - 1) as f64);
                    let w = japanese(xi).powf(p.m - 1.0);
                    let v = (hp_escape(p, e, x, xi) + constant * w) / w;
                    if v > 1e-12 {
                        need += 1;
                        excess = excess.max(v);
                        if e.in_region(x, xi, 0.25, 4.0) {
                            inside += 1;
                        }
                    }
                }
            }
            (need, inside, excess)
        })
        .collect();
    rows.into_iter().fold(
        CompensationSummary { nodes_needing_b: 0, inside_quarter_regions: 0, max_excess: 0.0 },
        |acc, (n, i, x)| CompensationSummary {
            nodes_needing_b: acc.nodes_needing_b + n,
            inside_quarter_regions: acc.inside_quarter_regions + i,
            max_excess: acc.max_excess.max(x),
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSample {
    pub x: f64,
    pub xi: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSamples {
    pub t: f64,
    pub samples: Vec<ShiftSample>,
    /// Largest `value / <xi>^{m-1}`; at most `-C t` on the inner regions.
    pub max_normalized: Option<f64>,
}

/// Samples of `t H_p(e log<xi>)` over the inner regions.
pub fn conjugated_shift(p: &PrincipalSymbol, t: f64, e: &EscapeFunction, grid: &EscapeGrid) -> ShiftSamples {
    let mut samples = Vec::new();
    let mut max_normalized: Option<f64> = None;
    for c in &e.centers {
        for (x, xi) in grid.inner_nodes(e, c) {
            let value = t * hp_escape(p, e, x, xi);
            let n = value / japanese(xi).powf(p.m - 1.0);
            max_normalized = Some(max_normalized.map_or(n, |m| m.max(n)));
            samples.push(ShiftSample { x, xi, value });
        }
    }
    ShiftSamples { t, samples, max_normalized }
}

/// `H_p sigma` for `sigma = -e <xi>^{1-m}` (`m < 1`) or `-e log<xi>` (`m = 1`).
pub fn hp_mourre(p: &PrincipalSymbol, e: &EscapeFunction, x: f64, xi: f64) -> f64 {
    let jet = e.jet(x, xi);
    let jp = japanese(xi);
    let (g, dg) = if p.m == 1.0 {
        (jp.ln(), xi / (1.0 + xi * xi))
    } else {
        (jp.powf(1.0 - p.m), (1.0 - p.m) * jp.powf(-1.0 - p.m) * xi)
    };
    let sx = -jet.dx * g;
    let sxi = -(jet.dxi * g + jet.value * dg);
    p.dxi(x, xi) * sx - p.dx(x, xi) * sxi
}

/// Grid minimum of `H_p sigma` on `{dist(x, Z) <= eps/2, |xi| >= 2R}`.
pub fn mourre_symbol_check(p: &PrincipalSymbol, e: &EscapeFunction, grid: &EscapeGrid) -> Result<EstimateReport> {
    if !(p.m > 0.0 && p.m <= 1.0) {
        return Err(Error::UnsupportedInput(format!("commutator symbol needs 0 < m <= 1, got {}", p.m)));
    }
    if e.centers.is_empty() {
        return Err(Error::UnsupportedInput("elliptic symbol has no radial points".into()));
    }
    let (nodes, best) = extreme_over_centers(e, grid, |x, xi| hp_mourre(p, e, x, xi), false);
    let (c, x, xi) = best.expect("non-empty region");
    if !(c > 0.0) {
        return Err(Error::EstimateFailure { constant: c, x, xi });
    }
    Ok(EstimateReport {
        region: format!("dist(x, Z) <= {}, |xi| >= {}", e.eps / 2.0, 2.0 * e.r),
        grid: *grid,
        nodes,
        worst_ratio: Some(c),
        constant: Some(c),
        location: Some((x, xi)),
        vacuous: false,
        compensation: None,
    })
}

/// Variable-order weight `<xi>^{(m-1)/2 + t e(x, xi)}`.
pub fn weight_eval(e: &EscapeFunction, t: f64, m: f64, x: f64, xi: f64) -> f64 {
    japanese(xi).powf(0.5 * (m - 1.0) + t * e.value(x, xi))
}

/// `(x, xi, e, H_p(e log<xi>))` on a full `nx x 2 nxi` grid, for dumps.
pub fn scan_field(p: &PrincipalSymbol, e: &EscapeFunction, grid: &EscapeGrid) -> Vec<[f64; 4]> {
    let mut out = Vec::with_capacity(grid.nx * grid.nxi * 2);
    for i in 0..grid.nx {
        let x = TAU * i as f64 / grid.nx as f64;
        for fiber in Fiber::BOTH {
            for j in 0..grid.nxi {
                let xi = fiber.sign() * grid.xi_max.powf(j as f64 / (grid.nxi - 1) as f64);
                out.push([x, xi, e.value(x, xi), hp_escape(p, e, x, xi)]);
            }
        }
    }
    out
}
