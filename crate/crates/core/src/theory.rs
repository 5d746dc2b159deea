//! Closed-form bounds with every suppressed `O(·)`/`Ω(·)` constant made
//! explicit as `big_o_constant`.
//!
//! These numbers are order-of-magnitude guidance only; nothing here gates a
//! training run. Logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Label attached to every printed theory number.
pub const ORDER_OF_MAGNITUDE_NOTE: &str = "order-of-magnitude (hidden constants unknown)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    /// Failure probability, in `(0, 0.1)`.
    pub delta: f64,
    /// `λ_min(H*)`.
    pub lambda: f64,
    pub eta: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub big_o_constant: f64,
}

impl TheoryParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("theory parameter {what}")));
        if self.n == 0 || self.d == 0 || self.m == 0 {
            return bad("n, d and m must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 0.1) {
            return bad("delta must lie in (0, 0.1)");
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return bad("kappa must lie in (0, 1]");
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("eta", self.eta),
            ("epsilon", self.epsilon),
            ("big_o_constant", self.big_o_constant),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// `max{C·√ln(ratio), 1}`.
pub fn log_factor_bound(ratio: f64, big_o_constant: f64) -> f64 {
    (big_o_constant * ratio.ln().max(0.0).sqrt()).max(1.0)
}

/// `D = max{C·√ln(m·d/δ), 1}`.
pub fn bound_d(p: &TheoryParams) -> Result<f64> {
    p.validate()?;
    Ok(log_factor_bound(p.m as f64 * p.d as f64 / p.delta, p.big_o_constant))
}

/// `L(t) = (1 − ηλ/2)^t · L0` for `t = 0..=t_max`.
pub fn predicted_loss_curve(l0: f64, eta: f64, lambda: f64, t_max: usize) -> Result<Vec<f64>> {
    let rate = eta * lambda / 2.0;
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "ηλ/2 = {rate} is outside (0, 1]; the decay bound does not apply"
        )));
    }
    if !(l0 >= 0.0 && l0.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "initial loss {l0} must be finite and nonnegative"
        )));
    }
    let factor = 1.0 - rate;
    let mut out = Vec::with_capacity(t_max + 1);
    let mut cur = l0;
    for _ in 0..=t_max {
        out.push(cur);
        cur *= factor;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    /// `C·λ⁻⁸ n¹² d⁸ / (δε)⁴`.
    pub m_min: f64,
    /// `C·λδ / (κ² n² d D)`.
    pub eta_max: f64,
    /// `C·(ηλ)⁻¹ ln(n d D² / ε)`, with the configured `η`.
    pub t_min: f64,
}

pub fn recommend_hyperparams(p: &TheoryParams) -> Result<Recommendation> {
    let big_d = bound_d(p)?;
    recommend_hyperparams_with_bound(p, big_d)
}

/// As [`recommend_hyperparams`] with an explicit value for `D`.
pub fn recommend_hyperparams_with_bound(p: &TheoryParams, big_d: f64) -> Result<Recommendation> {
    p.validate()?;
    let c = p.big_o_constant;
    let (n, d) = (p.n as f64, p.d as f64);
    let m_min = c * p.lambda.powi(-8) * n.powi(12) * d.powi(8) / (p.delta * p.epsilon).powi(4);
    let eta_max = c * p.lambda * p.delta / (p.kappa * p.kappa * n * n * d * big_d);
    let t_min = c / (p.eta * p.lambda) * (n * d * big_d * big_d / p.epsilon).ln();
    Ok(Recommendation { m_min, eta_max, t_min })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingTerms {
    /// `D³ d^2.25 / (λ² N^0.25)`.
    pub capacity: f64,
    /// `α / exp(ηλC)` with `α = D·d·ln(m d / δ)`.
    pub compute: f64,
}

impl ScalingTerms {
    pub fn value(&self) -> f64 {
        self.capacity.max(self.compute)
    }

    pub fn capacity_dominates(&self) -> bool {
        self.capacity >= self.compute
    }
}

/// Both branches of the scaling-law estimate. `data_size` is the dataset
/// size, distinct from the log factor returned by [`bound_d`].
pub fn scaling_law_terms(params: f64, data_size: f64, compute: f64, p: &TheoryParams) -> Result<ScalingTerms> {
    p.validate()?;
    for (name, v) in [("N", params), ("D", data_size), ("C", compute)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidConfig(format!("scaling input {name} must be positive")));
        }
    }
    let d = p.d as f64;
    let alpha = data_size * d * (p.m as f64 * d / p.delta).ln();
    Ok(ScalingTerms {
        capacity: data_size.powi(3) * d.powf(2.25) / (p.lambda * p.lambda * params.powf(0.25)),
        compute: alpha / (p.eta * p.lambda * compute).exp(),
    })
}

pub fn scaling_law_prediction(params: f64, data_size: f64, compute: f64, p: &TheoryParams) -> Result<f64> {
    Ok(scaling_law_terms(params, data_size, compute, p)?.value())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> TheoryParams {
        TheoryParams {
            n: 10,
            d: 3,
            m: 100,
            delta: 0.01,
            lambda: 1.0,
            eta: 0.01,
            kappa: 1.0,
            epsilon: 0.1,
            big_o_constant: 1.0,
        }
    }

    #[test]
    fn bound_d_cases() {
        assert_eq!(log_factor_bound(std::f64::consts::E, 1.0), 1.0);
        let p = TheoryParams {
            m: 100,
            d: 10,
            delta: 0.01,
            ..params()
        };
        let v = bound_d(&p).unwrap();
        assert!((v - (1e5f64).ln().sqrt()).abs() < 1e-15);
        assert!((v - 3.3932).abs() < 1e-3);
        let small = TheoryParams {
            big_o_constant: 0.1,
            ..p
        };
        assert_eq!(bound_d(&small).unwrap(), 1.0);
        assert!(bound_d(&TheoryParams { delta: 0.1, ..p }).is_err());
        assert!(bound_d(&TheoryParams { delta: 0.0, ..p }).is_err());
    }

    #[test]
    fn bound_d_monotone() {
        let p = params();
        let base = bound_d(&p).unwrap();
        assert!(bound_d(&TheoryParams { m: 1000, ..p }).unwrap() >= base);
        assert!(bound_d(&TheoryParams { d: 7, ..p }).unwrap() >= base);
        assert!(bound_d(&TheoryParams { delta: 0.001, ..p }).unwrap() >= base);
    }

    #[test]
    fn loss_curve_cases() {
        let c = predicted_loss_curve(8.0, 1.0, 1.0, 3).unwrap();
        assert_eq!(c, vec![8.0, 4.0, 2.0, 1.0]);
        assert_eq!(predicted_loss_curve(5.0, 0.2, 10.0, 4).unwrap()[1], 0.0);
        assert_eq!(predicted_loss_curve(5.0, 0.01, 1.0, 0).unwrap(), vec![5.0]);
        assert!(predicted_loss_curve(1.0, 3.0, 1.0, 3).is_err());
        let c = predicted_loss_curve(3.0, 0.3, 0.7, 50).unwrap();
        assert!(c.windows(2).all(|w| w[1] <= w[0] && w[1] >= 0.0));
    }

    #[test]
    fn recommendation_cases() {
        let p = params();
        let r = recommend_hyperparams_with_bound(&p, 3.0).unwrap();
        assert!((r.eta_max - 0.01 / 900.0).abs() < 1e-18);
        assert!((r.eta_max - 1.111e-5).abs() < 1e-8);

        let doubled = recommend_hyperparams(&TheoryParams { n: 20, ..p }).unwrap();
        let base = recommend_hyperparams(&p).unwrap();
        assert!((doubled.m_min / base.m_min - 4096.0).abs() < 1e-9);

        let loose = recommend_hyperparams(&TheoryParams { epsilon: 1.0, ..p }).unwrap();
        assert!(loose.t_min < base.t_min);
    }

    #[test]
    fn scaling_law_cases() {
        let p = TheoryParams {
            d: 2,
            m: 10_000,
            delta: 0.01,
            lambda: 1.0,
            eta: 0.01,
            ..params()
        };
        let terms = scaling_law_terms(1e6, 100.0, 1e4, &p).unwrap();
        let capacity = 100f64.powi(3) * 2f64.powf(2.25) / 1e6f64.powf(0.25);
        let compute = 100.0 * 2.0 * (2e6f64).ln() / 100f64.exp();
        assert!((terms.capacity - capacity).abs() <= 1e-9 * capacity);
        assert!((terms.compute - compute).abs() <= 1e-9 * compute);
        assert!(terms.capacity_dominates());
        assert!((terms.capacity - 150_424.0).abs() < 1.0);
        assert_eq!(scaling_law_prediction(1e6, 100.0, 1e4, &p).unwrap(), terms.capacity);

        assert!(scaling_law_prediction(2e6, 100.0, 1e4, &p).unwrap() < terms.value());

        // Compute branch dominant: tiny data, short compute.
        let q = TheoryParams {
            lambda: 1.0,
            eta: 1.0,
            ..p
        };
        let a = scaling_law_terms(1e12, 1.0, 1.0, &q).unwrap();
        let b = scaling_law_terms(1e12, 1.0, 1.0 + 2f64.ln(), &q).unwrap();
        assert!(!a.capacity_dominates() && !b.capacity_dominates());
        assert!((b.value() - a.value() / 2.0).abs() < 1e-12 * a.value());

        assert!(scaling_law_prediction(0.0, 1.0, 1.0, &p).is_err());
    }
}
