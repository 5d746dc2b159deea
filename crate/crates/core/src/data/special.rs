//! Special functions needed by the `f6` target.

use std::f64::consts::{E, PI};

use crate::{Error, Result};

const BRANCH_POINT: f64 = -1.0 / E;

/// Principal branch `W₀(z)` of the Lambert W function, `z ≥ −1/e`.
///
/// Starting point: the branch-point series `−1 + p − p²/3 + 11p³/72` with
/// `p = √(2(ez + 1))` for `z < −0.25`, `ln(1 + z)` up to `z = 3`, and
/// `ln z − ln ln z` beyond. Halley's iteration then converges in a handful
/// of steps.
pub fn lambert_w(z: f64) -> Result<f64> {
    if z.is_nan() {
        return Err(Error::InvalidInput("lambert_w of NaN".into()));
    }
    if z < BRANCH_POINT {
        // Values within rounding of −1/e are treated as the branch point.
        if BRANCH_POINT - z <= 4.0 * f64::EPSILON * BRANCH_POINT.abs() {
            return Ok(-1.0);
        }
        return Err(Error::Domain(z));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if z == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let mut w = if z < -0.25 {
        let p = (2.0 * (E * z + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if z <= 3.0 {
        z.ln_1p()
    } else {
        let l = z.ln();
        l - l.ln()
    };
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 || f == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `Γ(z)` by the Lanczos approximation (`g = 7`, 9 terms), with the
/// reflection formula below `z = 0.5`.
pub fn gamma_fn(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::InvalidInput(format!("gamma of non-finite {z}")));
    }
    if z <= 0.0 && z == z.floor() {
        return Err(Error::Pole(z));
    }
    if z < 0.5 {
        return Ok(PI / ((PI * z).sin() * gamma_fn(1.0 - z)?));
    }
    let z = z - 1.0;
    let t = z + LANCZOS_G + 0.5;
    let series = LANCZOS_COEF[1..]
        .iter()
        .enumerate()
        .fold(LANCZOS_COEF[0], |acc, (k, c)| acc + c / (z + (k + 1) as f64));
    // t^(z+0.5) split in two to delay overflow.
    let half = t.powf((z + 0.5) / 2.0);
    Ok((2.0 * PI).sqrt() * half * (half * (-t).exp()) * series)
}
