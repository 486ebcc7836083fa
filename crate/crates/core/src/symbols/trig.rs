use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Finite real Fourier series
/// `sum_j cos[j] cos(jx) + sum_{j>=1} sin[j-1] sin(jx)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrigPoly {
    #[serde(rename = "cos", default)]
    cos_coeffs: Vec<f64>,
    #[serde(rename = "sin", default)]
    sin_coeffs: Vec<f64>,
}

impl TrigPoly {
    /// `cos_coeffs[j]` multiplies `cos(jx)`, `sin_coeffs[j - 1]` multiplies `sin(jx)`.
    pub fn new(cos_coeffs: Vec<f64>, sin_coeffs: Vec<f64>) -> Self {
        let mut poly = Self { cos_coeffs, sin_coeffs };
        poly.trim();
        poly
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c], vec![])
    }

    /// `coef * cos(jx)`.
    pub fn cos_mode(j: usize, coef: f64) -> Self {
        let mut cos = vec![0.0; j + 1];
        cos[j] = coef;
        Self::new(cos, vec![])
    }

    /// `coef * sin(jx)`, `j >= 1`.
    pub fn sin_mode(j: usize, coef: f64) -> Self {
        assert!(j >= 1, "sin mode needs j >= 1");
        let mut sin = vec![0.0; j];
        sin[j - 1] = coef;
        Self::new(vec![], sin)
    }

    /// Build from complex Fourier coefficients `f[j + n]`, `j = -n..=n`,
    /// keeping the real part of the resulting function.
    pub fn from_fourier(f: &[Complex64]) -> Self {
        assert!(f.len() % 2 == 1);
        let n = f.len() / 2;
        let mut cos = vec![0.0; n + 1];
        let mut sin = vec![0.0; n];
        cos[0] = f[n].re;
        for j in 1..=n {
            let fp = f[n + j];
            let fm = f[n - j];
            // f_j e^{ijx} + f_{-j} e^{-ijx}
            cos[j] = fp.re + fm.re;
            sin[j - 1] = fm.im - fp.im;
        }
        Self::new(cos, sin)
    }

    fn trim(&mut self) {
        while self.cos_coeffs.last() == Some(&0.0) {
            self.cos_coeffs.pop();
        }
        while self.sin_coeffs.last() == Some(&0.0) {
            self.sin_coeffs.pop();
        }
    }

    pub fn cos_coeffs(&self) -> &[f64] {
        &self.cos_coeffs
    }

    pub fn sin_coeffs(&self) -> &[f64] {
        &self.sin_coeffs
    }

    /// Highest frequency present.
    pub fn degree(&self) -> usize {
        self.cos_coeffs.len().saturating_sub(1).max(self.sin_coeffs.len())
    }

    pub fn is_zero(&self) -> bool {
        self.cos_coeffs.iter().chain(&self.sin_coeffs).all(|c| *c == 0.0)
    }

    /// Largest coefficient magnitude.
    pub fn scale(&self) -> f64 {
        self.cos_coeffs.iter().chain(&self.sin_coeffs).fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut sum = self.cos_coeffs.first().copied().unwrap_or(0.0);
        for j in 1..=self.degree() {
            let (s, c) = (j as f64 * x).sin_cos();
            sum += self.cos_j(j) * c + self.sin_j(j) * s;
        }
        sum
    }

    fn cos_j(&self, j: usize) -> f64 {
        self.cos_coeffs.get(j).copied().unwrap_or(0.0)
    }

    fn sin_j(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.sin_coeffs.get(j - 1).copied().unwrap_or(0.0)
        }
    }

    /// Complex Fourier coefficient of `e^{ijx}`.
    pub fn fourier(&self, j: i64) -> Complex64 {
        let k = j.unsigned_abs() as usize;
        if k == 0 {
            return Complex64::new(self.cos_j(0), 0.0);
        }
        let c = self.cos_j(k);
        let s = self.sin_j(k);
        if j > 0 {
            Complex64::new(0.5 * c, -0.5 * s)
        } else {
            Complex64::new(0.5 * c, 0.5 * s)
        }
    }

    pub fn derivative(&self) -> Self {
        let n = self.degree();
        let mut cos = vec![0.0; n + 1];
        let mut sin = vec![0.0; n];
        for j in 1..=n {
            let jf = j as f64;
            cos[j] = jf * self.sin_j(j);
            sin[j - 1] = -jf * self.cos_j(j);
        }
        Self::new(cos, sin)
    }

    pub fn nth_derivative(&self, k: usize) -> Self {
        (0..k).fold(self.clone(), |p, _| p.derivative())
    }

    /// Value of the `k`-th derivative at `x`, without building intermediate polynomials.
    pub fn eval_derivative(&self, k: usize, x: f64) -> f64 {
        if k == 0 {
            return self.eval(x);
        }
        let mut sum = 0.0;
        for j in 1..=self.degree() {
            let jf = j as f64;
            let (s, c) = (jf * x).sin_cos();
            let (a, b) = (self.cos_j(j), self.sin_j(j));
            // d^k/dx^k of a cos + b sin rotates by a quarter turn per derivative.
            let v = match k % 4 {
                0 => a * c + b * s,
                1 => b * c - a * s,
                2 => -(a * c + b * s),
                _ => a * s - b * c,
            };
            sum += jf.powi(k as i32) * v;
        }
        sum
    }

    pub fn add(&self, other: &Self) -> Self {
        let nc = self.cos_coeffs.len().max(other.cos_coeffs.len());
        let ns = self.sin_coeffs.len().max(other.sin_coeffs.len());
        let cos = (0..nc).map(|j| self.cos_j(j) + other.cos_j(j)).collect();
        let sin = (1..=ns).map(|j| self.sin_j(j) + other.sin_j(j)).collect();
        Self::new(cos, sin)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(
            self.cos_coeffs.iter().map(|c| c * s).collect(),
            self.sin_coeffs.iter().map(|c| c * s).collect(),
        )
    }

    pub fn mul(&self, other: &Self) -> Self {
        let (n1, n2) = (self.degree() as i64, other.degree() as i64);
        let n = n1 + n2;
        let mut f = vec![Complex64::new(0.0, 0.0); (2 * n + 1) as usize];
        for j in -n1..=n1 {
            let fj = self.fourier(j);
            for k in -n2..=n2 {
                f[(j + k + n) as usize] += fj * other.fourier(k);
            }
        }
        Self::from_fourier(&f)
    }

    pub fn pow(&self, k: u32) -> Self {
        (0..k).fold(Self::constant(1.0), |acc, _| acc.mul(self))
    }

    /// `x -> self(x + shift)`.
    pub fn shifted(&self, shift: f64) -> Self {
        let n = self.degree();
        let mut cos = vec![0.0; n + 1];
        let mut sin = vec![0.0; n];
        cos[0] = self.cos_j(0);
        for j in 1..=n {
            let (s, c) = (j as f64 * shift).sin_cos();
            let (a, b) = (self.cos_j(j), self.sin_j(j));
            // a cos(j(x+h)) + b sin(j(x+h))
            cos[j] = a * c + b * s;
            sin[j - 1] = b * c - a * s;
        }
        Self::new(cos, sin)
    }

    /// `x -> self(-x)`.
    pub fn reflected(&self) -> Self {
        Self::new(self.cos_coeffs.clone(), self.sin_coeffs.iter().map(|s| -s).collect())
    }
}

/// Representative of `x` in `[0, 2 pi)`.
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Signed offset `x - y` reduced to `[-pi, pi)`.
pub fn circular_offset(x: f64, y: f64) -> f64 {
    let d = (x - y + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI;
    if d >= std::f64::consts::PI {
        d - TAU
    } else {
        d
    }
}
