//! Sign quantization of weight vectors.
//!
//! A real vector `w ∈ R^d` is summarised by its mean `E(w)`, its population
//! standard deviation `√V(w)` and one sign bit per entry of `w − E(w)`.
//! Inner products against the packed signs need only additions and
//! subtractions; the affine correction `√V·⟨w̃, x⟩ + E·⟨1, x⟩` then
//! reproduces `⟨w, x⟩ + ⟨u(w), x⟩` where `u(w)` is the quantization error
//! vector.
//!
//! Bits are packed 64 per word, little-endian within a word (symbol `k`
//! lives in bit `k % 64` of word `k / 64`). A set bit is `+1`, a clear bit
//! is `−1`. Padding bits past the logical length are always zero.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const WORD: usize = 64;

/// Packed ±1 vector of logical length `len`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryVector {
    words: Vec<u64>,
    len: usize,
}

impl BinaryVector {
    /// All-`+1` vector.
    pub fn ones(len: usize) -> Self {
        let mut v = Self {
            words: vec![u64::MAX; len.div_ceil(WORD)],
            len,
        };
        v.clear_padding();
        v
    }

    /// Packs a slice of signs. Any value `>= 0` is treated as `+1`.
    pub fn pack(signs: &[i8]) -> Self {
        Self::from_fn(signs.len(), |k| signs[k] >= 0)
    }

    /// Builds from a predicate giving `true` for `+1`.
    pub fn from_fn(len: usize, mut positive: impl FnMut(usize) -> bool) -> Self {
        let mut words = vec![0u64; len.div_ceil(WORD)];
        for k in 0..len {
            if positive(k) {
                words[k / WORD] |= 1u64 << (k % WORD);
            }
        }
        Self { words, len }
    }

    /// Wraps packed words; bits past `len` must be zero.
    pub(crate) fn from_words(words: Vec<u64>, len: usize) -> Self {
        debug_assert_eq!(words.len(), len.div_ceil(WORD));
        debug_assert!(len.is_multiple_of(WORD) || words.last().is_none_or(|w| w >> (len % WORD) == 0));
        Self { words, len }
    }

    pub fn unpack(&self) -> Vec<i8> {
        (0..self.len).map(|k| self.sign(k)).collect()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_positive(&self, k: usize) -> bool {
        assert!(k < self.len, "bit index {k} out of range {}", self.len);
        self.words[k / WORD] >> (k % WORD) & 1 == 1
    }

    pub fn sign(&self, k: usize) -> i8 {
        if self.is_positive(k) {
            1
        } else {
            -1
        }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Number of `+1` symbols.
    pub fn count_positive(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Element-wise negation (padding stays zero).
    pub fn negated(&self) -> Self {
        let mut v = Self {
            words: self.words.iter().map(|w| !w).collect(),
            len: self.len,
        };
        v.clear_padding();
        v
    }

    fn clear_padding(&mut self) {
        let tail = self.len % WORD;
        if tail != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
    }
}

/// Mean and scale of a quantized vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantScale {
    pub mean: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedVector {
    pub bits: BinaryVector,
    pub stats: QuantScale,
}

impl QuantizedVector {
    pub fn dim(&self) -> usize {
        self.bits.len()
    }

    /// `scale·bits + mean·1`, the dequantized reconstruction of `w`.
    pub fn reconstruct(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.stats.scale * f64::from(self.bits.sign(k)) + self.stats.mean)
            .collect()
    }
}

/// Quantizes `w` into sign bits of `w − E(w)` plus `(E(w), √V(w))`.
///
/// `V` carries the `1/d` factor. A constant vector has `V = 0`; its bits are
/// all `+1` and the reconstruction is exact.
pub fn quantize(w: &[f64]) -> Result<QuantizedVector> {
    let d = w.len();
    if d == 0 {
        return Err(Error::InvalidInput("cannot quantize an empty vector".into()));
    }
    if let Some(k) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite weight {} at index {k}", w[k])));
    }
    Ok(quantize_finite(w))
}

/// [`quantize`] without the input checks; `w` must be non-empty and finite.
pub(crate) fn quantize_finite(w: &[f64]) -> QuantizedVector {
    let stats = column_stats(w);
    let mut words = vec![0u64; w.len().div_ceil(WORD)];
    pack_signs(w, stats.mean, &mut words);
    QuantizedVector {
        bits: BinaryVector::from_words(words, w.len()),
        stats,
    }
}

/// A constant vector keeps its value as the mean, so it dequantizes exactly.
#[inline]
fn column_stats(w: &[f64]) -> QuantScale {
    let d = w.len();
    let first = w[0];
    if w.iter().all(|&v| v == first) {
        return QuantScale {
            mean: first,
            scale: 0.0,
        };
    }
    let mean = w.iter().sum::<f64>() / d as f64;
    let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    QuantScale {
        mean,
        scale: var.sqrt(),
    }
}

/// Sets bit `k` iff `w_k − mean ≥ 0`; `out` must start zeroed.
#[inline]
fn pack_signs(w: &[f64], mean: f64, out: &mut [u64]) {
    for (word, chunk) in out.iter_mut().zip(w.chunks(WORD)) {
        for (k, &v) in chunk.iter().enumerate() {
            *word |= u64::from(v - mean >= 0.0) << k;
        }
    }
}

/// `Σ_k s_k·x_k` for packed signs `s`, using only additions and subtractions.
pub fn binary_dot(b: &BinaryVector, x: &[f64]) -> Result<f64> {
    if b.len() != x.len() {
        return Err(Error::dim("binary_dot", b.len(), x.len()));
    }
    Ok(binary_dot_unchecked(b, x))
}

pub(crate) fn binary_dot_unchecked(b: &BinaryVector, x: &[f64]) -> f64 {
    signed_sum(b.words(), x)
}

#[inline]
fn signed_sum(words: &[u64], x: &[f64]) -> f64 {
    match x.len() {
        2 => signed_sum_fixed::<2>(words[0], x),
        3 => signed_sum_fixed::<3>(words[0], x),
        4 => signed_sum_fixed::<4>(words[0], x),
        5 => signed_sum_fixed::<5>(words[0], x),
        6 => signed_sum_fixed::<6>(words[0], x),
        _ => signed_sum_any(words, x),
    }
}

/// `x_k` or `−x_k` by the low bit. Flipping the IEEE sign keeps the sum
/// add-only and branch-free.
#[inline(always)]
fn flip_unless(bit_set: u64, xk: f64) -> f64 {
    f64::from_bits(xk.to_bits() ^ ((!bit_set & 1) << 63))
}

#[inline(always)]
fn signed_sum_fixed<const D: usize>(word: u64, x: &[f64]) -> f64 {
    let x: &[f64; D] = x.try_into().expect("caller matched the length");
    let mut acc = 0.0;
    for (k, &xk) in x.iter().enumerate() {
        acc += flip_unless(word >> k, xk);
    }
    acc
}

fn signed_sum_any(words: &[u64], x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (chunk, &word) in x.chunks(WORD).zip(words) {
        for (k, &xk) in chunk.iter().enumerate() {
            acc += flip_unless(word >> k, xk);
        }
    }
    acc
}

/// The columns of a weight matrix quantized into flat arrays, for batch
/// evaluation.
pub(crate) struct QuantizedColumns {
    means: Vec<f64>,
    scales: Vec<f64>,
    words: Vec<u64>,
    words_per_column: usize,
}

impl QuantizedColumns {
    pub(crate) fn of(w: &crate::WeightMatrix) -> Self {
        let words_per_column = w.d().div_ceil(WORD);
        let mut out = Self {
            means: Vec::with_capacity(w.m()),
            scales: Vec::with_capacity(w.m()),
            words: Vec::with_capacity(w.m() * words_per_column),
            words_per_column,
        };
        out.words.resize(w.m() * words_per_column, 0);
        for (col, words) in w.columns().zip(out.words.chunks_exact_mut(words_per_column)) {
            let stats = column_stats(col);
            pack_signs(col, stats.mean, words);
            out.means.push(stats.mean);
            out.scales.push(stats.scale);
        }
        out
    }

    /// Largest input width served by [`Self::sign_table`].
    pub(crate) const TABLE_MAX_DIM: usize = 6;

    /// `⟨s, x⟩` for every sign pattern `s` of `x.len() ≤ 6` coordinates,
    /// indexed by the packed pattern word. Entry `bits(r)` equals the binary
    /// dot of column `r` bit for bit.
    pub(crate) fn sign_table(x: &[f64]) -> Vec<f64> {
        debug_assert!(x.len() <= Self::TABLE_MAX_DIM);
        (0..1u64 << x.len()).map(|p| signed_sum(&[p], x)).collect()
    }

    /// Packed sign word of column `r` when `d ≤ 64`.
    #[inline]
    pub(crate) fn word(&self, r: usize) -> u64 {
        self.words[r * self.words_per_column]
    }

    #[inline]
    pub(crate) fn mean(&self, r: usize) -> f64 {
        self.means[r]
    }

    #[inline]
    pub(crate) fn scale(&self, r: usize) -> f64 {
        self.scales[r]
    }

    /// Same value as [`dequantize_dot_with_sum`] on column `r`.
    #[inline]
    pub(crate) fn dot(&self, r: usize, x: &[f64], x_sum: f64) -> f64 {
        let words = &self.words[r * self.words_per_column..(r + 1) * self.words_per_column];
        self.scales[r] * signed_sum(words, x) + self.means[r] * x_sum
    }
}

/// `√V·⟨w̃, x⟩ + E·⟨1, x⟩`.
pub fn dequantize_dot(qv: &QuantizedVector, x: &[f64]) -> Result<f64> {
    if qv.dim() != x.len() {
        return Err(Error::dim("dequantize_dot", qv.dim(), x.len()));
    }
    Ok(dequantize_dot_with_sum(qv, x, x.iter().sum()))
}

/// Dequantized product when `Σ_k x_k` is already known.
#[inline]
pub(crate) fn dequantize_dot_with_sum(qv: &QuantizedVector, x: &[f64], x_sum: f64) -> f64 {
    qv.stats.scale * binary_dot_unchecked(&qv.bits, x) + qv.stats.mean * x_sum
}

/// `u(w) = √V·w̃ + E·1 − w`.
pub fn quant_error_vector(w: &[f64]) -> Result<Vec<f64>> {
    let qv = quantize(w)?;
    Ok(error_vector_of(&qv, w))
}

pub(crate) fn error_vector_of(qv: &QuantizedVector, w: &[f64]) -> Vec<f64> {
    qv.reconstruct().into_iter().zip(w).map(|(r, wk)| r - wk).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn quantize_symmetric_vector() {
        let q = quantize(&[3.0, 1.0, -1.0, -3.0]).unwrap();
        assert_eq!(q.stats.mean, 0.0);
        assert!((q.stats.scale - 5f64.sqrt()).abs() < 1e-15);
        assert_eq!(q.bits.unpack(), vec![1, 1, -1, -1]);
    }

    #[test]
    fn quantize_tie_maps_to_plus_one() {
        let q = quantize(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(q.stats.mean, 4.0);
        assert!((q.stats.scale - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((q.stats.scale - 1.63299).abs() < 1e-5);
        assert_eq!(q.bits.unpack(), vec![-1, 1, 1]);
    }

    #[test]
    fn quantize_constant_vector() {
        for c in [0.1, -7.25, 0.0, 1e300] {
            let q = quantize(&[c; 5]).unwrap();
            assert_eq!(q.stats.mean, c);
            assert_eq!(q.stats.scale, 0.0);
            assert_eq!(q.bits.count_positive(), 5);
            assert_eq!(quant_error_vector(&[c; 5]).unwrap(), vec![0.0; 5]);
        }
    }

    #[test]
    fn quantize_rejects_bad_input() {
        assert!(matches!(quantize(&[]), Err(Error::InvalidInput(_))));
        assert!(matches!(quantize(&[1.0, f64::NAN]), Err(Error::InvalidInput(_))));
        assert!(matches!(quantize(&[f64::INFINITY, 1.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn binary_dot_examples() {
        let b = BinaryVector::pack(&[1, -1, 1]);
        assert_eq!(binary_dot(&b, &[0.5, 0.25, -0.125]).unwrap(), 0.125);
        let x = [0.3, -1.7, 2.5, 9.0];
        assert_eq!(binary_dot(&BinaryVector::ones(4), &x).unwrap(), x.iter().sum::<f64>());
        assert!(matches!(binary_dot(&b, &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn binary_dot_matches_expanded_float_dot() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let signs: Vec<i8> = (0..64).map(|_| if rng.gen() { 1 } else { -1 }).collect();
            let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let expanded: Vec<f64> = signs.iter().map(|&s| f64::from(s)).collect();
            let got = binary_dot(&BinaryVector::pack(&signs), &x).unwrap();
            assert!((got - dot(&expanded, &x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn dequantize_examples() {
        let q = quantize(&[3.0, 1.0, -1.0, -3.0]).unwrap();
        let v = dequantize_dot(&q, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((v - 2.23607).abs() < 1e-5);
        assert_eq!(dequantize_dot(&q, &[1.0; 4]).unwrap(), 0.0);

        let c = 1.75;
        let w = [c; 6];
        let x = [0.1, -0.4, 2.0, 0.0, 3.3, -1.0];
        let q = quantize(&w).unwrap();
        let got = dequantize_dot(&q, &x).unwrap();
        assert!((got - c * x.iter().sum::<f64>()).abs() < 1e-14);
        assert!((got - dot(&w, &x)).abs() < 1e-14);
        assert!(dequantize_dot(&q, &[1.0]).is_err());
    }

    #[test]
    fn error_vector_example() {
        let u = quant_error_vector(&[3.0, 1.0, -1.0, -3.0]).unwrap();
        let s5 = 5f64.sqrt();
        let want = [s5 - 3.0, s5 - 1.0, 1.0 - s5, 3.0 - s5];
        for (a, b) in u.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((u[0] + 0.76393).abs() < 1e-5);
        assert!((u[1] - 1.23607).abs() < 1e-5);
    }

    #[test]
    fn error_vector_identity_on_random_unit_inputs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let w: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dot(&x, &x).sqrt();
            x.iter_mut().for_each(|v| *v /= norm);
            let u = quant_error_vector(&w).unwrap();
            let lhs = dot(&u, &x);
            let rhs = dequantize_dot(&quantize(&w).unwrap(), &x).unwrap() - dot(&w, &x);
            assert!((lhs - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn padding_is_masked() {
        let b = BinaryVector::ones(70);
        assert_eq!(b.words().len(), 2);
        assert_eq!(b.words()[1], (1 << 6) - 1);
        assert_eq!(b.negated().count_positive(), 0);
        assert_eq!(b.count_positive(), 70);
    }

    fn finite_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1e3f64..1e3, 1..max_len)
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(signs in proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], 0..200)) {
            prop_assert_eq!(BinaryVector::pack(&signs).unpack(), signs);
        }

        #[test]
        fn reconstruction_identity((w, x) in (1usize..65).prop_flat_map(|d| (
            proptest::collection::vec(-1e3f64..1e3, d),
            proptest::collection::vec(-1e3f64..1e3, d),
        ))) {
            let q = quantize(&w).unwrap();
            let u = error_vector_of(&q, &w);
            let lhs = dequantize_dot(&q, &x).unwrap();
            let wx = dot(&w, &x);
            let ux = dot(&u, &x);
            let scale = 1f64.max(lhs.abs()).max(wx.abs()).max(ux.abs());
            prop_assert!((lhs - wx - ux).abs() <= 1e-12 * scale * w.len() as f64);
        }

        #[test]
        fn bits_are_scale_invariant(w in finite_vec(40), c in 1e-3f64..1e3) {
            let scaled: Vec<f64> = w.iter().map(|v| c * v).collect();
            let a = quantize(&w).unwrap();
            let b = quantize(&scaled).unwrap();
            // Rounding can move entries sitting within an ulp of the mean.
            let centered_min = w.iter().map(|v| (v - a.stats.mean).abs()).fold(f64::INFINITY, f64::min);
            prop_assume!(centered_min > 1e-9 * (1.0 + a.stats.mean.abs()));
            prop_assert_eq!(a.bits, b.bits);
        }

        #[test]
        fn bits_antisymmetric_off_ties(w in finite_vec(40)) {
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            let centered: Vec<f64> = w.iter().map(|v| v - mean).collect();
            let negated: Vec<f64> = centered.iter().map(|v| -v).collect();
            let a = quantize(&centered).unwrap();
            let b = quantize(&negated).unwrap();
            prop_assume!(centered.iter().all(|v| (v - a.stats.mean).abs() > 1e-9));
            prop_assume!(a.stats.scale > 0.0);
            prop_assert_eq!(a.bits.negated(), b.bits);
        }
    }
}
