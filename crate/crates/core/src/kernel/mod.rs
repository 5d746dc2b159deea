//! Empirical neural tangent kernel.
//!
//! `H_ij = κ²/m · ⟨x_i, x_j⟩ · #{r : g_ir ∧ g_jr}` where `g` is the gate
//! pattern of the chosen mode. Co-activation counts are exact integers
//! (popcount over the packed gate rows), so an entry depends on the order
//! of nothing and parallel evaluation reproduces serial evaluation.

mod jacobi;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use jacobi::symmetric_eigenvalues;

use crate::net::{self, ActivationPattern, Mode, NetworkState};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    pub entries: Matrix,
    pub step: usize,
    pub mode: Mode,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.entries.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub drift_from_init: f64,
    pub flip_counts: Vec<usize>,
}

/// `H(t)` for the network's current weights.
pub fn gram_matrix(x: &Matrix, net: &NetworkState, mode: Mode) -> Result<GramMatrix> {
    let pattern = net::activation_pattern(x, net, mode)?;
    gram_from_pattern(x, &pattern, net.kappa())
}

/// `H` from a precomputed gate pattern.
pub fn gram_from_pattern(x: &Matrix, pattern: &ActivationPattern, kappa: f64) -> Result<GramMatrix> {
    let n = x.rows();
    if pattern.n() != n {
        return Err(Error::dim("gram pattern rows", n, pattern.n()));
    }
    let scale = kappa * kappa / pattern.m() as f64;
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| {
                    let count: u32 = pattern
                        .row_words(i)
                        .iter()
                        .zip(pattern.row_words(j))
                        .map(|(a, b)| (a & b).count_ones())
                        .sum();
                    scale * net::dot(x.row(i), x.row(j)) * f64::from(count)
                })
                .collect()
        })
        .collect();
    let mut entries = Matrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            entries[(i, i + off)] = v;
            entries[(i + off, i)] = v;
        }
    }
    Ok(GramMatrix {
        entries,
        step: pattern.step,
        mode: pattern.mode,
    })
}

/// Pattern-changing kernel: row `i` sums only over `flip_sets[i]`.
///
/// The restriction is indexed by the row, so the result is generally not
/// symmetric.
pub fn gram_flipped(x: &Matrix, net: &NetworkState, flip_sets: &[Vec<usize>]) -> Result<GramMatrix> {
    let n = x.rows();
    let m = net.m();
    if flip_sets.len() != n {
        return Err(Error::dim("flip sets", n, flip_sets.len()));
    }
    for (i, set) in flip_sets.iter().enumerate() {
        if let Some(&r) = set.iter().find(|&&r| r >= m) {
            return Err(Error::InvalidInput(format!(
                "flip set {i} contains neuron {r}, width is {m}"
            )));
        }
    }
    let pattern = net::activation_pattern(x, net, Mode::OneBit)?;
    let scale = net.kappa() * net.kappa() / m as f64;
    let mut entries = Matrix::zeros(n, n);
    for (i, set) in flip_sets.iter().enumerate() {
        for j in 0..n {
            let count = set
                .iter()
                .filter(|&&r| pattern.is_active(i, r) && pattern.is_active(j, r))
                .count();
            entries[(i, j)] = scale * net::dot(x.row(i), x.row(j)) * count as f64;
        }
    }
    Ok(GramMatrix {
        entries,
        step: pattern.step,
        mode: Mode::OneBit,
    })
}

/// `(λ_min, λ_max)` by cyclic Jacobi.
pub fn min_max_eigenvalues(g: &GramMatrix) -> Result<(f64, f64)> {
    let eig = symmetric_eigenvalues(&g.entries)?;
    Ok((eig[0], eig[eig.len() - 1]))
}

/// `‖G_t − G_0‖_F`.
pub fn gram_drift(g_t: &GramMatrix, g_0: &GramMatrix) -> Result<f64> {
    if g_t.n() != g_0.n() {
        return Err(Error::dim("gram drift", g_0.n(), g_t.n()));
    }
    Ok(g_t
        .entries
        .as_slice()
        .iter()
        .zip(g_0.entries.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Number of neurons whose gate on sample `i` differs between the patterns.
pub fn pattern_flip_counts(p0: &ActivationPattern, pt: &ActivationPattern) -> Result<Vec<usize>> {
    if p0.n() != pt.n() {
        return Err(Error::dim("pattern rows", p0.n(), pt.n()));
    }
    if p0.m() != pt.m() {
        return Err(Error::dim("pattern width", p0.m(), pt.m()));
    }
    if p0.mode != pt.mode {
        return Err(Error::InvalidInput(format!(
            "pattern modes differ: {:?} vs {:?}",
            p0.mode, pt.mode
        )));
    }
    Ok((0..p0.n())
        .map(|i| {
            p0.row_words(i)
                .iter()
                .zip(pt.row_words(i))
                .map(|(a, b)| (a ^ b).count_ones() as usize)
                .sum()
        })
        .collect())
}

/// Spectrum, drift from `g_0` and flip counts in one record.
pub fn kernel_report(
    g_t: &GramMatrix,
    g_0: &GramMatrix,
    p0: &ActivationPattern,
    pt: &ActivationPattern,
) -> Result<KernelReport> {
    let (lambda_min, lambda_max) = min_max_eigenvalues(g_t)?;
    Ok(KernelReport {
        lambda_min,
        lambda_max,
        drift_from_init: gram_drift(g_t, g_0)?,
        flip_counts: pattern_flip_counts(p0, pt)?,
    })
}
