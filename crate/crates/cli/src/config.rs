//! Operator configs.
//!
//! ```json
//! {"m": 2.0, "a_plus": {"cos": [0], "sin": [1]}, "a_minus": {"cos": [0], "sin": [1]}}
//! {"m": 2.0, "a": {"sin": [1]}, "V": {"kappa": 1.0, "terms": [{"j": 1, "power": 1.0, "re": 1.0, "im": 0.0}]}}
//! {"form": "divergence", "a": {"sin": [1]}}
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use cml_core::spectral::Operator;
use cml_core::symbols::{LowerOrderSymbol, PrincipalSymbol, TrigPoly};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    #[default]
    Quantized,
    Divergence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolConfig {
    #[serde(default)]
    pub form: Form,
    #[serde(default)]
    pub m: Option<f64>,
    /// Shorthand for `a_plus = a_minus = a`; the coefficient for the
    /// divergence form.
    #[serde(default)]
    pub a: Option<TrigPoly>,
    #[serde(default)]
    pub a_plus: Option<TrigPoly>,
    #[serde(default)]
    pub a_minus: Option<TrigPoly>,
    #[serde(rename = "V", default)]
    pub v: Option<LowerOrderSymbol>,
    /// Source point for `wkb`.
    #[serde(default)]
    pub x0: Option<f64>,
    /// Seeds `[x, xi]` for `flow`.
    #[serde(default)]
    pub seeds: Option<Vec<[f64; 2]>>,
}

impl SymbolConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SymbolConfig = serde_json::from_str(text).context("invalid symbol config")?;
        cfg.operator()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let text = std::str::from_utf8(&bytes).context("config is not UTF-8")?;
        Ok((Self::parse(text)?, bytes))
    }

    pub fn operator(&self) -> Result<Operator> {
        if let Some(v) = &self.v {
            if !(v.kappa > 0.0 && v.kappa <= 1.0) {
                bail!("V.kappa = {} outside (0, 1]", v.kappa);
            }
        }
        match self.form {
            Form::Divergence => {
                if self.a_plus.is_some() || self.a_minus.is_some() {
                    bail!("the divergence form takes a single coefficient `a`");
                }
                if let Some(m) = self.m {
                    if m != 2.0 {
                        bail!("the divergence form has order 2, config says m = {m}");
                    }
                }
                let a = self.a.clone().context("divergence form needs `a`")?;
                if a.is_zero() {
                    bail!("coefficient `a` is identically zero");
                }
                Ok(Operator::Divergence { a, v: self.v.clone() })
            }
            Form::Quantized => {
                let m = self.m.context("quantized form needs `m`")?;
                let (plus, minus) = match (&self.a, &self.a_plus, &self.a_minus) {
                    (Some(a), None, None) => (a.clone(), a.clone()),
                    (None, Some(p), Some(q)) => (p.clone(), q.clone()),
                    (Some(_), _, _) => bail!("give either `a` or `a_plus`/`a_minus`, not both"),
                    _ => bail!("quantized form needs `a` or both `a_plus` and `a_minus`"),
                };
                if plus.is_zero() || minus.is_zero() {
                    bail!("a symbol coefficient is identically zero");
                }
                let p = PrincipalSymbol::new(m, plus, minus)?;
                if let Some(v) = &self.v {
                    v.validate(m)?;
                }
                Ok(Operator::Quantized { p, v: self.v.clone() })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shorthand_and_split_forms() {
        let a = SymbolConfig::parse(r#"{"m": 2, "a": {"sin": [1]}}"#).unwrap().operator().unwrap();
        let b = SymbolConfig::parse(r#"{"m": 2, "a_plus": {"sin": [1]}, "a_minus": {"sin": [1]}}"#)
            .unwrap()
            .operator()
            .unwrap();
        assert_eq!(a, b);
        let d = SymbolConfig::parse(r#"{"form": "divergence", "a": {"sin": [1]}}"#).unwrap();
        assert_eq!(d.operator().unwrap().order(), 2.0);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            r#"{"m": 2}"#,
            r#"{"a": {"sin": [1]}}"#,
            r#"{"m": 2, "a": {"sin": [1]}, "a_plus": {"sin": [1]}}"#,
            r#"{"m": -1, "a": {"sin": [1]}}"#,
            r#"{"m": 2, "a": {"sin": [0]}}"#,
            r#"{"form": "divergence", "m": 3, "a": {"sin": [1]}}"#,
            r#"{"m": 2, "a": {"sin": [1]}, "bogus": 1}"#,
            r#"{"m": 2, "a": {"sin": [1]}, "V": {"kappa": 1.5, "terms": []}}"#,
        ] {
            assert!(SymbolConfig::parse(text).is_err(), "{text}");
        }
    }
}
