//! Homogeneous symbols `a_+-(x) |xi|^m`, their zero sets and the pointwise
//! classification rules.

mod roots;
mod trig;

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use roots::{find_zeros, order_of_vanishing, Root, RootOptions};
pub use trig::{circular_offset, wrap_angle, TrigPoly};

use crate::hamflow::{Direction, Seed};
use crate::{Error, Result};

/// Sign of the fiber variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Fiber {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Fiber {
    pub const BOTH: [Fiber; 2] = [Fiber::Plus, Fiber::Minus];

    pub fn sign(self) -> f64 {
        match self {
            Fiber::Plus => 1.0,
            Fiber::Minus => -1.0,
        }
    }

    pub fn of(xi: f64) -> Fiber {
        if xi < 0.0 {
            Fiber::Minus
        } else {
            Fiber::Plus
        }
    }
}

impl fmt::Display for Fiber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fiber::Plus => "+",
            Fiber::Minus => "-",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalSymbol {
    pub m: f64,
    pub a_plus: TrigPoly,
    pub a_minus: TrigPoly,
}

impl PrincipalSymbol {
    pub fn new(m: f64, a_plus: TrigPoly, a_minus: TrigPoly) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::UnsupportedOrder { m });
        }
        Ok(Self { m, a_plus, a_minus })
    }

    /// Same coefficient on both fibers.
    pub fn symmetric(m: f64, a: TrigPoly) -> Result<Self> {
        Self::new(m, a.clone(), a)
    }

    pub fn a(&self, fiber: Fiber) -> &TrigPoly {
        match fiber {
            Fiber::Plus => &self.a_plus,
            Fiber::Minus => &self.a_minus,
        }
    }

    pub fn eval(&self, x: f64, xi: f64) -> f64 {
        if xi == 0.0 {
            return 0.0;
        }
        self.a(Fiber::of(xi)).eval(x) * xi.abs().powf(self.m)
    }

    /// `d p / d x`.
    pub fn dx(&self, x: f64, xi: f64) -> f64 {
        if xi == 0.0 {
            return 0.0;
        }
        self.a(Fiber::of(xi)).eval_derivative(1, x) * xi.abs().powf(self.m)
    }

    /// `d p / d xi`.
    pub fn dxi(&self, x: f64, xi: f64) -> f64 {
        if xi == 0.0 {
            return 0.0;
        }
        self.m * self.a(Fiber::of(xi)).eval(x) * xi.abs().powf(self.m - 1.0) * xi.signum()
    }

    /// Mirror image under `(x, xi) -> (-x, -xi)`.
    pub fn reflected(&self) -> Self {
        Self { m: self.m, a_plus: self.a_minus.reflected(), a_minus: self.a_plus.reflected() }
    }

    pub fn shifted(&self, h: f64) -> Self {
        Self { m: self.m, a_plus: self.a_plus.shifted(h), a_minus: self.a_minus.shifted(h) }
    }
}

/// One Fourier mode of a lower-order perturbation. It contributes
/// `Re((re + i im) e^{ijx}) <xi>^power`, so the symbol is real.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerOrderTerm {
    pub j: u32,
    pub power: f64,
    pub re: f64,
    pub im: f64,
}

impl LowerOrderTerm {
    pub fn coefficient(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerOrderSymbol {
    pub kappa: f64,
    pub terms: Vec<LowerOrderTerm>,
}

pub fn japanese(xi: f64) -> f64 {
    (1.0 + xi * xi).sqrt()
}

impl LowerOrderSymbol {
    pub fn validate(&self, m: f64) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::Kappa { kappa: self.kappa, reason: "0 < kappa <= 1".into() });
        }
        for t in &self.terms {
            if t.power > m - self.kappa + 1e-12 {
                return Err(Error::Kappa {
                    kappa: self.kappa,
                    reason: format!("term j = {} has power {} > m - kappa = {}", t.j, t.power, m - self.kappa),
                });
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: f64, xi: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| (t.coefficient() * Complex64::from_polar(1.0, t.j as f64 * x)).re * japanese(xi).powf(t.power))
            .sum()
    }

    /// `d^alpha V / dx^alpha (x0, .)` as a list of `(power, coefficient)`.
    pub fn x_derivative_profile(&self, alpha: usize, x0: f64) -> Vec<(f64, f64)> {
        self.terms
            .iter()
            .map(|t| {
                let ij = Complex64::new(0.0, t.j as f64);
                let c = t.coefficient() * ij.powu(alpha as u32) * Complex64::from_polar(1.0, t.j as f64 * x0);
                (t.power, c.re)
            })
            .collect()
    }

    /// Coefficient of `e^{ilx}` as a list of `(power, coefficient)`.
    pub fn fourier(&self, l: i64) -> Vec<(f64, Complex64)> {
        let mut out = Vec::new();
        for t in &self.terms {
            let j = t.j as i64;
            let c = t.coefficient();
            if j == 0 && l == 0 {
                out.push((t.power, Complex64::new(c.re, 0.0)));
            } else if j != 0 && l == j {
                out.push((t.power, 0.5 * c));
            } else if j != 0 && l == -j {
                out.push((t.power, 0.5 * c.conj()));
            }
        }
        out
    }

    pub fn max_frequency(&self) -> usize {
        self.terms.iter().map(|t| t.j as usize).max().unwrap_or(0)
    }

    /// Mirror image under `(x, xi) -> (-x, -xi)`; `<xi>` is even.
    pub fn reflected(&self) -> Self {
        let terms = self.terms.iter().map(|t| LowerOrderTerm { im: -t.im, ..*t }).collect();
        Self { kappa: self.kappa, terms }
    }

    pub fn shifted(&self, h: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let c = t.coefficient() * Complex64::from_polar(1.0, t.j as f64 * h);
                LowerOrderTerm { re: c.re, im: c.im, ..*t }
            })
            .collect();
        Self { kappa: self.kappa, terms }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub fiber: Fiber,
    pub x: f64,
    pub derivative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalTypeCheck {
    pub ok: bool,
    pub witness: Option<Witness>,
}

pub fn is_real_principal_type(p: &PrincipalSymbol, opts: &RootOptions) -> Result<PrincipalTypeCheck> {
    for fiber in Fiber::BOTH {
        for r in find_zeros(p.a(fiber), opts)? {
            if r.derivative.abs() <= opts.derivative_floor {
                return Ok(PrincipalTypeCheck {
                    ok: false,
                    witness: Some(Witness { fiber, x: r.x, derivative: r.derivative }),
                });
            }
        }
    }
    Ok(PrincipalTypeCheck { ok: true, witness: None })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ZeroSets {
    pub z_plus: Vec<f64>,
    pub z_minus: Vec<f64>,
    pub z_pp: Vec<f64>,
    pub z_pm: Vec<f64>,
    pub z_mp: Vec<f64>,
    pub z_mm: Vec<f64>,
}

impl ZeroSets {
    pub fn all(&self, fiber: Fiber) -> &[f64] {
        match fiber {
            Fiber::Plus => &self.z_plus,
            Fiber::Minus => &self.z_minus,
        }
    }

    /// Zeros of `a_fiber` with `a_fiber'` of sign `slope`.
    pub fn by_slope(&self, fiber: Fiber, slope: Fiber) -> &[f64] {
        match (fiber, slope) {
            (Fiber::Plus, Fiber::Plus) => &self.z_pp,
            (Fiber::Plus, Fiber::Minus) => &self.z_pm,
            (Fiber::Minus, Fiber::Plus) => &self.z_mp,
            (Fiber::Minus, Fiber::Minus) => &self.z_mm,
        }
    }

    pub fn balanced(&self) -> bool {
        self.z_pp.len() == self.z_pm.len() && self.z_mp.len() == self.z_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_plus.is_empty() && self.z_minus.is_empty()
    }
}

pub fn zero_sets(p: &PrincipalSymbol, opts: &RootOptions) -> Result<ZeroSets> {
    let mut zs = ZeroSets::default();
    for fiber in Fiber::BOTH {
        for r in find_zeros(p.a(fiber), opts)? {
            if r.derivative.abs() <= opts.derivative_floor {
                return Err(Error::NotPrincipalType { fiber, x: r.x, derivative: r.derivative });
            }
            let (all, pos, neg) = match fiber {
                Fiber::Plus => (&mut zs.z_plus, &mut zs.z_pp, &mut zs.z_pm),
                Fiber::Minus => (&mut zs.z_minus, &mut zs.z_mp, &mut zs.z_mm),
            };
            all.push(r.x);
            if r.derivative > 0.0 {
                pos.push(r.x);
            } else {
                neg.push(r.x);
            }
        }
    }
    Ok(zs)
}

pub fn characteristic_order(p: &PrincipalSymbol, x0: f64, fiber: Fiber, opts: &RootOptions) -> Result<usize> {
    let value = p.a(fiber).eval(x0);
    if value.abs() >= opts.root_tol {
        return Err(Error::NotCharacteristic { fiber, x: x0, value: value.abs() });
    }
    order_of_vanishing(p.a(fiber), x0, opts)
}

/// A point of the boundary at fiber infinity, `(x, sign * infinity)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialPoint {
    pub x: f64,
    pub fiber: Fiber,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RadialSets {
    pub sources: Vec<RadialPoint>,
    pub sinks: Vec<RadialPoint>,
}

impl RadialSets {
    pub fn from_zero_sets(zs: &ZeroSets) -> Self {
        fn pts(xs: &[f64], fiber: Fiber) -> impl Iterator<Item = RadialPoint> + '_ {
            xs.iter().map(move |&x| RadialPoint { x, fiber })
        }
        let sources = pts(&zs.z_pp, Fiber::Plus).chain(pts(&zs.z_mm, Fiber::Minus)).collect();
        let sinks = pts(&zs.z_pm, Fiber::Plus).chain(pts(&zs.z_mp, Fiber::Minus)).collect();
        Self { sources, sinks }
    }

    pub fn is_source(&self, x: f64, fiber: Fiber, gap: f64) -> bool {
        self.sources.iter().any(|s| s.fiber == fiber && circular_offset(s.x, x).abs() < gap)
    }
}

pub fn radial_sets(p: &PrincipalSymbol, opts: &RootOptions) -> Result<RadialSets> {
    if !(p.m > 0.0) {
        return Err(Error::UnsupportedOrder { m: p.m });
    }
    Ok(RadialSets::from_zero_sets(&zero_sets(p, opts)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EsaVerdict {
    #[serde(rename = "ESA")]
    Esa,
    #[serde(rename = "NotESA")]
    NotEsa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EsaBranch {
    Order,
    Elliptic,
    NonElliptic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Completeness {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharPoint {
    pub fiber: Fiber,
    pub x: f64,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub m: f64,
    pub is_principal_type: bool,
    pub principal_type_witness: Option<Witness>,
    pub is_elliptic: bool,
    pub char_orders: Vec<CharPoint>,
    /// `None` unless the symbol is of real principal type.
    pub esa_verdict: Option<EsaVerdict>,
    pub esa_branch: Option<EsaBranch>,
    pub completeness_verdict: Completeness,
    /// A seed whose trajectory reaches fiber infinity in finite time.
    pub completeness_witness: Option<(Seed, Direction)>,
    pub near_threshold: Vec<String>,
}

/// Offset used for the witness seed next to a higher-order zero.
const WITNESS_OFFSET: f64 = 0.05;

/// Classification without the principal-type precondition: zero orders,
/// ellipticity and the flow-completeness rule `m <= k` at every zero.
pub fn survey(p: &PrincipalSymbol, opts: &RootOptions) -> Result<ClassificationReport> {
    let check = is_real_principal_type(p, opts)?;
    let mut char_orders = Vec::new();
    let mut near_threshold = Vec::new();
    let mut witness = None;
    for fiber in Fiber::BOTH {
        let a = p.a(fiber);
        for r in find_zeros(a, opts)? {
            let order = order_of_vanishing(a, r.x, opts)?;
            char_orders.push(CharPoint { fiber, x: r.x, order });
            let d = r.derivative.abs();
            if d > opts.derivative_floor && d <= 10.0 * opts.derivative_floor {
                near_threshold.push(format!("|a_{fiber}'({:.6})| = {d:e} within 10x of derivative_floor", r.x));
            }
            if r.residual > 0.1 * opts.root_tol {
                near_threshold.push(format!("|a_{fiber}({:.6})| = {:e} within 10x of root_tol", r.x, r.residual));
            }
            if (order as f64) < p.m && witness.is_none() {
                witness = Some(blowup_seed(a, fiber, r.x, order));
            }
        }
    }
    let is_elliptic = char_orders.is_empty();
    let completeness_verdict = if witness.is_some() { Completeness::Incomplete } else { Completeness::Complete };
    let (esa_verdict, esa_branch) = if check.ok {
        let (v, b) = if is_elliptic {
            (EsaVerdict::Esa, EsaBranch::Elliptic)
        } else if p.m <= 1.0 {
            (EsaVerdict::Esa, EsaBranch::Order)
        } else {
            (EsaVerdict::NotEsa, EsaBranch::NonElliptic)
        };
        (Some(v), Some(b))
    } else {
        (None, None)
    };
    Ok(ClassificationReport {
        m: p.m,
        is_principal_type: check.ok,
        principal_type_witness: check.witness,
        is_elliptic,
        char_orders,
        esa_verdict,
        esa_branch,
        completeness_verdict,
        completeness_witness: witness,
        near_threshold,
    })
}

/// Seed and time direction along which `|xi|` grows near a zero of order `k`.
fn blowup_seed(a: &TrigPoly, fiber: Fiber, x0: f64, order: usize) -> (Seed, Direction) {
    let x = if order == 1 { x0 } else { wrap_angle(x0 + WITNESS_OFFSET) };
    // d|xi|/dt = -sign * a'(x) |xi|^m
    let slope = fiber.sign() * a.eval_derivative(1, x);
    let direction = if slope < 0.0 { Direction::Forward } else { Direction::Backward };
    (Seed { x, xi: fiber.sign() }, direction)
}

/// The essential self-adjointness rule for `P + V`.
pub fn classify_esa(
    p: &PrincipalSymbol,
    v: Option<&LowerOrderSymbol>,
    opts: &RootOptions,
) -> Result<ClassificationReport> {
    if let Some(v) = v {
        v.validate(p.m)?;
    }
    let report = survey(p, opts)?;
    if let Some(w) = report.principal_type_witness {
        return Err(Error::NotPrincipalType { fiber: w.fiber, x: w.x, derivative: w.derivative });
    }
    Ok(report)
}
