//! The regression targets.
//!
//! `f1`–`f3` name their arguments `x1..xk`; `f4`–`f6` use `x0` for the first
//! argument in their bodies. Each body is implemented as written, mapping
//! argument `k` (0-based) to the name used by that body.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::special::{gamma_fn, lambert_w};
use crate::{Error, Result};

/// A one-variable expression in `x`, e.g. `sin(3*x) + exp(-20*x^2)`.
#[derive(Clone)]
pub struct Expression {
    source: String,
    expr: meval::Expr,
}

impl Expression {
    pub fn parse(source: &str) -> Result<Self> {
        let expr: meval::Expr = source
            .parse()
            .map_err(|e| Error::Expression(format!("`{source}`: {e}")))?;
        let e = Self {
            source: source.to_string(),
            expr,
        };
        // Surface unknown variables or functions at parse time.
        e.eval(0.5)?;
        Ok(e)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let mut ctx = meval::Context::new();
        ctx.var("x", x);
        self.expr
            .eval_with_context(ctx)
            .map_err(|e| Error::Expression(format!("`{}`: {e}", self.source)))
    }
}

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Expression").field(&self.source).finish()
    }
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetFunction {
    F1,
    F2,
    F3,
    F4,
    F5,
    F6,
    Custom1d(Expression),
}

impl TargetFunction {
    pub fn arity(&self) -> usize {
        match self {
            TargetFunction::F1 => 5,
            TargetFunction::F3 => 3,
            TargetFunction::F2 | TargetFunction::F4 | TargetFunction::F5 | TargetFunction::F6 => 4,
            TargetFunction::Custom1d(_) => 1,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            TargetFunction::F1 => "f1",
            TargetFunction::F2 => "f2",
            TargetFunction::F3 => "f3",
            TargetFunction::F4 => "f4",
            TargetFunction::F5 => "f5",
            TargetFunction::F6 => "f6",
            TargetFunction::Custom1d(_) => "custom_1d",
        }
    }
}

impl fmt::Display for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetFunction::Custom1d(e) => write!(f, "custom_1d:{}", e.source()),
            other => f.write_str(other.id()),
        }
    }
}

impl FromStr for TargetFunction {
    type Err = Error;

    /// `f1`..`f6`, or `custom_1d:<expression in x>`.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "f1" => TargetFunction::F1,
            "f2" => TargetFunction::F2,
            "f3" => TargetFunction::F3,
            "f4" => TargetFunction::F4,
            "f5" => TargetFunction::F5,
            "f6" => TargetFunction::F6,
            _ => match s.strip_prefix("custom_1d:") {
                Some(src) => TargetFunction::Custom1d(Expression::parse(src)?),
                None => {
                    return Err(Error::InvalidInput(format!(
                        "unknown target `{s}` (expected f1..f6 or custom_1d:<expr>)"
                    )))
                }
            },
        })
    }
}

impl Serialize for TargetFunction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TargetFunction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Evaluates the target on one input of length `fun.arity()`.
pub fn eval_target(fun: &TargetFunction, x: &[f64]) -> Result<f64> {
    if x.len() != fun.arity() {
        return Err(Error::dim("target arguments", fun.arity(), x.len()));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite target argument {v}")));
    }
    Ok(match fun {
        TargetFunction::F1 => {
            let s: f64 = x.iter().map(|&v| (PI * v / 2.0).sin().powi(2)).sum();
            (s / 5.0).exp()
        }
        TargetFunction::F2 => {
            let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
            x1.abs().ln_1p() + (x2 * x2 - x2) + x3.sin() - x4.exp()
        }
        TargetFunction::F3 => {
            let (x1, x2, x3) = (x[0], x[1], x[2]);
            x1 * x2 - x3
        }
        TargetFunction::F4 => {
            let (x0, x1, x2, x3) = (x[0], x[1], x[2], x[3]);
            x0 * x1.sin() + x2.cos() - 0.5 * x3
        }
        TargetFunction::F5 => {
            let (x0, x1, x2, x3) = (x[0], x[1], x[2], x[3]);
            x0 * x0 / (1.0 + x1.abs()) - x2.exp() + x3.tanh() + (x0 * x2).abs().sqrt()
        }
        TargetFunction::F6 => {
            let (x0, x1, x2, x3) = (x[0], x[1], x[2], x[3]);
            let softplus = x3.exp().ln_1p();
            lambert_w(x0 * x1)? + x2 / softplus - gamma_fn(x1)? / (1.0 + x0.abs())
        }
        TargetFunction::Custom1d(e) => e.eval(x[0])?,
    })
}
