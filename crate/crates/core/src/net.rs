//! The two-layer model `f(x) = κ/√m · Σ_r a_r · ReLU(z_r(x))` in three
//! flavours that differ only in the pre-activation `z_r` and the gate:
//!
//! | mode            | gate                     | value passed on            |
//! |-----------------|--------------------------|----------------------------|
//! | one-bit         | `dq(⟨w̃_r, x⟩) ≥ 0`       | `dq(⟨w̃_r, x⟩)`              |
//! | full precision  | `⟨w_r, x⟩ ≥ 0`           | `⟨w_r, x⟩`                  |
//! | straight-through| `dq(⟨w̃_r, x⟩) ≥ 0`       | `⟨w_r, x⟩`                  |
//!
//! A pre-activation of exactly zero counts as active. Quantization is
//! recomputed from the live weights on every call.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binq::{self, BinaryVector};
use crate::{rng, Error, Matrix, Result, WeightMatrix};

/// Which pre-activation drives the ReLU gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OneBit,
    FullPrecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardMode {
    OneBit,
    FullPrecision,
    /// 1-bit gate, full-precision value.
    Ste,
}

impl From<Mode> for ForwardMode {
    fn from(mode: Mode) -> Self {
        match mode {
            Mode::OneBit => ForwardMode::OneBit,
            Mode::FullPrecision => ForwardMode::FullPrecision,
        }
    }
}

/// Hidden weights `W` (`d × m`), frozen output signs `a` and the output
/// scale `κ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    weights: WeightMatrix,
    signs: Vec<i8>,
    kappa: f64,
    sigma: f64,
}

impl NetworkState {
    /// Assembles a network from explicit parts.
    pub fn new(weights: WeightMatrix, signs: Vec<i8>, kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        if signs.len() != weights.m() {
            return Err(Error::dim("output signs", weights.m(), signs.len()));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidInput("output signs must be ±1".into()));
        }
        if weights.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite hidden weight".into()));
        }
        Ok(Self {
            weights,
            signs,
            kappa,
            sigma: 1.0,
        })
    }

    pub fn d(&self) -> usize {
        self.weights.d()
    }

    pub fn m(&self) -> usize {
        self.weights.m()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Standard deviation used at initialization.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    /// Same `W` and `a`, different `κ`.
    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        Ok(Self { kappa, ..self.clone() })
    }

    /// One gradient-descent step `W ← W − η·ΔW`.
    pub fn step(&mut self, eta: f64, gradient: &WeightMatrix) -> Result<()> {
        self.weights.sub_scaled(eta, gradient)
    }

    fn output_scale(&self) -> f64 {
        (self.m() as f64).sqrt()
    }

    fn finish(&self, sum: f64) -> f64 {
        self.kappa * (sum / self.output_scale())
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("kappa {kappa} is outside (0, 1]")))
    }
}

/// `W` entries i.i.d. `N(0, 1)`, `a` entries uniform on `{−1, +1}`.
pub fn init_network(d: usize, m: usize, kappa: f64, seed: u64) -> Result<NetworkState> {
    init_network_with_sigma(d, m, kappa, 1.0, seed)
}

/// Like [`init_network`] with hidden weights drawn from `N(0, sigma²)`.
///
/// The generator draws the `d·m` weights column by column, then the `m`
/// output signs.
pub fn init_network_with_sigma(d: usize, m: usize, kappa: f64, sigma: f64, seed: u64) -> Result<NetworkState> {
    check_kappa(kappa)?;
    if d == 0 || m == 0 {
        return Err(Error::InvalidConfig(format!(
            "network shape must be positive, got d={d}, m={m}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma {sigma} must be positive")));
    }
    let mut rng = rng::seeded(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let data: Vec<f64> = (0..d * m).map(|_| normal.sample(&mut rng)).collect();
    let signs: Vec<i8> = (0..m).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
    Ok(NetworkState {
        weights: WeightMatrix::from_raw(d, m, data),
        signs,
        kappa,
        sigma,
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Small input widths dominate the experiments; fixed lengths unroll.
    match a.len() {
        1 => dot_fixed::<1>(a, b),
        2 => dot_fixed::<2>(a, b),
        3 => dot_fixed::<3>(a, b),
        4 => dot_fixed::<4>(a, b),
        5 => dot_fixed::<5>(a, b),
        6 => dot_fixed::<6>(a, b),
        _ => dot_any(a, b),
    }
}

#[inline(always)]
fn dot_fixed<const D: usize>(a: &[f64], b: &[f64]) -> f64 {
    let a: &[f64; D] = a.try_into().expect("caller matched the length");
    let b: &[f64; D] = b[..D].try_into().expect("equal lengths");
    let mut acc = 0.0;
    for k in 0..D {
        acc += a[k] * b[k];
    }
    acc
}

fn dot_any(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `v` when `open`, else zero. Gates are close to coin flips, and LLVM turns
/// scalar selects (even `v·0/1`) into branches that mispredict half the
/// time. A vector AND with a lane mask is left alone.
#[cfg(target_arch = "x86_64")]
#[inline(always)]
pub(crate) fn gated(open: bool, v: f64) -> f64 {
    use std::arch::x86_64::{_mm_and_pd, _mm_castsi128_pd, _mm_cvtsd_f64, _mm_cvtsi64_si128, _mm_set_sd};
    // SAFETY: SSE2 is part of the x86_64 baseline.
    unsafe {
        let mask = _mm_castsi128_pd(_mm_cvtsi64_si128(-i64::from(open)));
        _mm_cvtsd_f64(_mm_and_pd(mask, _mm_set_sd(v)))
    }
}

#[cfg(not(target_arch = "x86_64"))]
#[inline(always)]
pub(crate) fn gated(open: bool, v: f64) -> f64 {
    if open {
        v
    } else {
        0.0
    }
}

#[inline]
fn relu(z: f64) -> f64 {
    gated(z >= 0.0, z)
}

fn check_input(x: &[f64], net: &NetworkState) -> Result<()> {
    if x.len() != net.d() {
        return Err(Error::dim("network input", net.d(), x.len()));
    }
    Ok(())
}

fn check_batch(x: &Matrix, net: &NetworkState) -> Result<()> {
    if x.cols() != net.d() {
        return Err(Error::dim("network input batch", net.d(), x.cols()));
    }
    Ok(())
}

/// The 1-bit network output for one input.
pub fn forward_1bit(x: &[f64], net: &NetworkState) -> Result<f64> {
    forward(x, net, ForwardMode::OneBit)
}

/// The full-precision twin output for one input.
pub fn forward_fp(x: &[f64], net: &NetworkState) -> Result<f64> {
    forward(x, net, ForwardMode::FullPrecision)
}

/// The straight-through surrogate: 1-bit gates, full-precision values.
pub fn forward_ste(x: &[f64], net: &NetworkState) -> Result<f64> {
    forward(x, net, ForwardMode::Ste)
}

pub fn forward(x: &[f64], net: &NetworkState, mode: ForwardMode) -> Result<f64> {
    check_input(x, net)?;
    let x_sum: f64 = x.iter().sum();
    let mut sum = 0.0;
    for r in 0..net.m() {
        let w = net.weights.column(r);
        let a = f64::from(net.signs[r]);
        let term = match mode {
            ForwardMode::FullPrecision => relu(dot(w, x)),
            ForwardMode::OneBit => {
                let q = binq::quantize_finite(w);
                relu(binq::dequantize_dot_with_sum(&q, x, x_sum))
            }
            ForwardMode::Ste => {
                let q = binq::quantize_finite(w);
                gated(binq::dequantize_dot_with_sum(&q, x, x_sum) >= 0.0, dot(w, x))
            }
        };
        sum += a * term;
    }
    Ok(net.finish(sum))
}

/// Outputs for every row of `x`; bit-identical to calling [`forward`] row by row.
pub fn batch_forward(x: &Matrix, net: &NetworkState, mode: ForwardMode) -> Result<Vec<f64>> {
    Ok(evaluate(x, net, mode)?.outputs)
}

/// Per-sample gates `g[i][r]`, packed one bitset of length `m` per sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationPattern {
    rows: Vec<BinaryVector>,
    m: usize,
    pub step: usize,
    pub mode: Mode,
}

impl ActivationPattern {
    pub fn from_fn(n: usize, m: usize, mode: Mode, mut active: impl FnMut(usize, usize) -> bool) -> Self {
        let rows = (0..n).map(|i| BinaryVector::from_fn(m, |r| active(i, r))).collect();
        Self { rows, m, step: 0, mode }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn is_active(&self, i: usize, r: usize) -> bool {
        self.rows[i].is_positive(r)
    }

    /// Packed gates of sample `i`, 64 neurons per word.
    pub fn row_words(&self, i: usize) -> &[u64] {
        self.rows[i].words()
    }

    pub fn active_count(&self, i: usize) -> usize {
        self.rows[i].count_positive()
    }

    pub fn with_step(mut self, step: usize) -> Self {
        self.step = step;
        self
    }

    /// Bitwise complement of every gate.
    pub fn negated(&self) -> Self {
        Self {
            rows: self.rows.iter().map(BinaryVector::negated).collect(),
            ..self.clone()
        }
    }
}

/// Gate indicators for every (sample, neuron) pair.
pub fn activation_pattern(x: &Matrix, net: &NetworkState, mode: Mode) -> Result<ActivationPattern> {
    Ok(evaluate(x, net, mode.into())?.pattern)
}

/// Batch outputs together with the gate pattern that produced them.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub outputs: Vec<f64>,
    pub pattern: ActivationPattern,
}

pub(crate) fn evaluate(x: &Matrix, net: &NetworkState, mode: ForwardMode) -> Result<Evaluation> {
    check_batch(x, net)?;
    Ok(match net.d() {
        1 => evaluate_fixed::<1>(x, net, mode),
        2 => evaluate_fixed::<2>(x, net, mode),
        3 => evaluate_fixed::<3>(x, net, mode),
        4 => evaluate_fixed::<4>(x, net, mode),
        5 => evaluate_fixed::<5>(x, net, mode),
        6 => evaluate_fixed::<6>(x, net, mode),
        _ => evaluate_fixed::<0>(x, net, mode),
    })
}

/// `⟨w, x⟩` for a width known at compile time, `D = 0` meaning any width.
#[inline(always)]
fn dot_n<const D: usize>(w: &[f64], x: &[f64]) -> f64 {
    if D == 0 {
        dot_any(w, x)
    } else {
        dot_fixed::<D>(w, x)
    }
}

/// Batch evaluation specialised on the input width. Per sample the neuron
/// sum runs in index order, so outputs match [`forward`] exactly.
fn evaluate_fixed<const D: usize>(x: &Matrix, net: &NetworkState, mode: ForwardMode) -> Evaluation {
    let m = net.m();
    let d = net.d();
    let w = net.weights.as_slice();
    let signs: Vec<f64> = net.signs.iter().map(|&a| f64::from(a)).collect();
    let quant = match mode {
        ForwardMode::FullPrecision => None,
        _ => Some(binq::QuantizedColumns::of(&net.weights)),
    };
    let use_table = D > 0 && D <= binq::QuantizedColumns::TABLE_MAX_DIM;
    let mut outputs = Vec::with_capacity(x.rows());
    let mut rows = Vec::with_capacity(x.rows());
    for xi in x.iter_rows() {
        let x_sum: f64 = xi.iter().sum();
        let mut gates = vec![0u64; m.div_ceil(64)];
        let sum = match (&quant, mode) {
            (None, _) => sweep_fp::<D>(w, d, xi, &signs, &mut gates),
            (Some(q), ForwardMode::OneBit) if use_table => {
                let table = binq::QuantizedColumns::sign_table(xi);
                sweep_1bit(&signs, &mut gates, |r| {
                    q.scale(r) * table[q.word(r) as usize] + q.mean(r) * x_sum
                })
            }
            (Some(q), ForwardMode::OneBit) => sweep_1bit(&signs, &mut gates, |r| q.dot(r, xi, x_sum)),
            (Some(q), _) if use_table => {
                let table = binq::QuantizedColumns::sign_table(xi);
                sweep_ste::<D>(w, d, xi, &signs, &mut gates, |r| {
                    q.scale(r) * table[q.word(r) as usize] + q.mean(r) * x_sum
                })
            }
            (Some(q), _) => sweep_ste::<D>(w, d, xi, &signs, &mut gates, |r| q.dot(r, xi, x_sum)),
        };
        outputs.push(net.finish(sum));
        rows.push(BinaryVector::from_words(gates, m));
    }
    let mode = match mode {
        ForwardMode::FullPrecision => Mode::FullPrecision,
        _ => Mode::OneBit,
    };
    Evaluation {
        outputs,
        pattern: ActivationPattern { rows, m, step: 0, mode },
    }
}

// The sweeps below add `a_r·gated(gate_r, value_r)` over the neurons in
// index order and pack the gates one 64-neuron block at a time.

fn sweep_fp<const D: usize>(w: &[f64], d: usize, xi: &[f64], signs: &[f64], gates: &mut [u64]) -> f64 {
    let mut sum = 0.0;
    for ((word, a_block), w_block) in gates.iter_mut().zip(signs.chunks(64)).zip(w.chunks(64 * d)) {
        let mut bits = 0u64;
        for (k, (&a, col)) in a_block.iter().zip(w_block.chunks_exact(d)).enumerate() {
            let z = dot_n::<D>(col, xi);
            let open = z >= 0.0;
            bits |= u64::from(open) << k;
            sum += a * gated(open, z);
        }
        *word = bits;
    }
    sum
}

#[inline(always)]
fn sweep_1bit(signs: &[f64], gates: &mut [u64], dq: impl Fn(usize) -> f64) -> f64 {
    let mut sum = 0.0;
    for (block, (word, a_block)) in gates.iter_mut().zip(signs.chunks(64)).enumerate() {
        let mut bits = 0u64;
        for (k, &a) in a_block.iter().enumerate() {
            let z = dq(block * 64 + k);
            let open = z >= 0.0;
            bits |= u64::from(open) << k;
            sum += a * gated(open, z);
        }
        *word = bits;
    }
    sum
}

#[inline(always)]
fn sweep_ste<const D: usize>(
    w: &[f64],
    d: usize,
    xi: &[f64],
    signs: &[f64],
    gates: &mut [u64],
    dq: impl Fn(usize) -> f64,
) -> f64 {
    let mut sum = 0.0;
    for (block, ((word, a_block), w_block)) in gates.iter_mut().zip(signs.chunks(64)).zip(w.chunks(64 * d)).enumerate()
    {
        let mut bits = 0u64;
        for (k, (&a, col)) in a_block.iter().zip(w_block.chunks_exact(d)).enumerate() {
            let open = dq(block * 64 + k) >= 0.0;
            bits |= u64::from(open) << k;
            sum += a * gated(open, dot_n::<D>(col, xi));
        }
        *word = bits;
    }
    sum
}
