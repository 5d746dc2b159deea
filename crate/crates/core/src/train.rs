//! Losses, gradients and the synchronized twin training loop.
//!
//! Both branches start from the same `W(0)` and the same output signs. The
//! 1-bit branch descends along the straight-through gradient
//!
//! ```text
//! ΔW[:, r] = Σ_i (F_i − y_i) · κ/√m · a_r · 1{dq(⟨w̃_r, x_i⟩) ≥ 0} · x_i
//! ```
//!
//! where `F` is the 1-bit output; the full-precision branch uses the exact
//! gradient of its own loss.

use serde::{Deserialize, Serialize};

use crate::binq;
use crate::data::Dataset;
use crate::kernel::{self, GramMatrix};
use crate::net::{self, ActivationPattern, ForwardMode, Mode, NetworkState};
use crate::{Error, Matrix, Result, WeightMatrix};

/// Losses above this are treated as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e12;
/// Learning rate used by [`LearningRate::Auto`] when no kernel is probed.
pub const FALLBACK_ETA: f64 = 0.1;

/// `½ Σ_i (F_i − y_i)²`.
pub fn loss(outputs: &[f64], targets: &[f64]) -> Result<f64> {
    if outputs.len() != targets.len() {
        return Err(Error::dim("loss", targets.len(), outputs.len()));
    }
    Ok(0.5 * outputs.iter().zip(targets).map(|(f, y)| (f - y) * (f - y)).sum::<f64>())
}

fn residuals(outputs: &[f64], targets: &[f64]) -> Vec<f64> {
    outputs.iter().zip(targets).map(|(f, y)| f - y).collect()
}

fn check_targets(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::dim("targets", x.rows(), y.len()));
    }
    Ok(())
}

/// Straight-through gradient of the 1-bit loss.
pub fn ste_gradient(x: &Matrix, y: &[f64], net: &NetworkState) -> Result<WeightMatrix> {
    check_targets(x, y)?;
    let eval = net::evaluate(x, net, ForwardMode::OneBit)?;
    Ok(gated_gradient(x, &residuals(&eval.outputs, y), &eval.pattern, net))
}

/// Exact gradient of the full-precision loss (off pattern boundaries).
pub fn fp_gradient(x: &Matrix, y: &[f64], net: &NetworkState) -> Result<WeightMatrix> {
    check_targets(x, y)?;
    let eval = net::evaluate(x, net, ForwardMode::FullPrecision)?;
    Ok(gated_gradient(x, &residuals(&eval.outputs, y), &eval.pattern, net))
}

/// `ΔW[:, r] = κ/√m · a_r · Σ_i ρ_i g_ir x_i`.
fn gated_gradient(x: &Matrix, residuals: &[f64], pattern: &ActivationPattern, net: &NetworkState) -> WeightMatrix {
    match net.d() {
        1 => gated_gradient_fixed::<1>(x, residuals, pattern, net),
        2 => gated_gradient_fixed::<2>(x, residuals, pattern, net),
        3 => gated_gradient_fixed::<3>(x, residuals, pattern, net),
        4 => gated_gradient_fixed::<4>(x, residuals, pattern, net),
        5 => gated_gradient_fixed::<5>(x, residuals, pattern, net),
        6 => gated_gradient_fixed::<6>(x, residuals, pattern, net),
        _ => gated_gradient_fixed::<0>(x, residuals, pattern, net),
    }
}

/// `D` is the input width when known at compile time, 0 otherwise.
fn gated_gradient_fixed<const D: usize>(
    x: &Matrix,
    residuals: &[f64],
    pattern: &ActivationPattern,
    net: &NetworkState,
) -> WeightMatrix {
    let d = net.d();
    let m = net.m();
    let base = net.kappa() / (m as f64).sqrt();
    let mut grad = vec![0.0; d * m];
    // Sample-major so that the gate bits are read sequentially; each column
    // still accumulates over samples in index order.
    for (i, &rho) in residuals.iter().enumerate() {
        let xi = x.row(i);
        let words = pattern.row_words(i);
        for (r, col) in grad.chunks_exact_mut(d).enumerate() {
            let open = words[r / 64] >> (r % 64) & 1 == 1;
            let g = net::gated(open, rho);
            if D == 0 {
                for (acc, &xk) in col.iter_mut().zip(xi) {
                    *acc += g * xk;
                }
            } else {
                for k in 0..D {
                    col[k] += g * xi[k];
                }
            }
        }
    }
    for (col, &a) in grad.chunks_exact_mut(d).zip(net.signs()) {
        let coef = base * f64::from(a);
        col.iter_mut().for_each(|v| *v *= coef);
    }
    WeightMatrix::from_raw(d, m, grad)
}

/// `max_r ‖w_r(t) − w_r(0)‖₂`.
pub fn weight_drift(initial: &NetworkState, current: &NetworkState) -> Result<f64> {
    let (w0, wt) = (initial.weights(), current.weights());
    if w0.d() != wt.d() || w0.m() != wt.m() {
        return Err(Error::dim("weight drift", w0.d() * w0.m(), wt.d() * wt.m()));
    }
    Ok((0..w0.m())
        .map(|r| {
            w0.column(r)
                .iter()
                .zip(wt.column(r))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max))
}

/// Per-sample split of the neurons into a stable set `S_i` and a flipped
/// set `S_i^⊥`. Stored as membership bits of `S_i^⊥`, so every value is a
/// disjoint cover of `[m]` by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipPartition {
    flipped: ActivationPattern,
}

impl FlipPartition {
    /// Every neuron stable for every sample.
    pub fn all_stable(n: usize, m: usize) -> Self {
        Self {
            flipped: ActivationPattern::from_fn(n, m, Mode::OneBit, |_, _| false),
        }
    }

    /// `S_i^⊥ = {r : gate (i, r) differs between the two patterns}`.
    pub fn from_patterns(initial: &ActivationPattern, current: &ActivationPattern) -> Result<Self> {
        // Reuses the shape/mode validation.
        kernel::pattern_flip_counts(initial, current)?;
        Ok(Self {
            flipped: ActivationPattern::from_fn(initial.n(), initial.m(), initial.mode, |i, r| {
                initial.is_active(i, r) != current.is_active(i, r)
            }),
        })
    }

    /// Explicit sets; each `stable[i]`, `flipped[i]` pair must partition `0..m`.
    pub fn from_sets(stable: &[Vec<usize>], flipped: &[Vec<usize>], m: usize) -> Result<Self> {
        if stable.len() != flipped.len() {
            return Err(Error::dim("flip partition", stable.len(), flipped.len()));
        }
        let mut member = vec![vec![false; m]; stable.len()];
        for (i, (s, f)) in stable.iter().zip(flipped).enumerate() {
            let mut seen = vec![false; m];
            for &r in s.iter().chain(f) {
                if r >= m || seen[r] {
                    return Err(Error::InvalidInput(format!(
                        "partition {i} is not a disjoint cover of 0..{m} (neuron {r})"
                    )));
                }
                seen[r] = true;
            }
            if seen.iter().any(|v| !v) {
                return Err(Error::InvalidInput(format!("partition {i} does not cover 0..{m}")));
            }
            for &r in f {
                member[i][r] = true;
            }
        }
        Ok(Self {
            flipped: ActivationPattern::from_fn(stable.len(), m, Mode::OneBit, |i, r| member[i][r]),
        })
    }

    pub fn is_flipped(&self, i: usize, r: usize) -> bool {
        self.flipped.is_active(i, r)
    }

    pub fn flipped_count(&self, i: usize) -> usize {
        self.flipped.active_count(i)
    }

    pub fn n(&self) -> usize {
        self.flipped.n()
    }

    pub fn m(&self) -> usize {
        self.flipped.m()
    }
}

/// The four terms of `L(t+1) = L(t) + C1 + C2 + C3 + C4`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Decomposition {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.c1 + self.c2 + self.c3 + self.c4
    }
}

/// Per (sample, neuron) quantities of the 1-bit network needed by the
/// decomposition: gate, `⟨w_r, x_i⟩` and `⟨u(w_r), x_i⟩`.
struct NeuronTerms {
    gate: Vec<bool>,
    value: Vec<f64>,
    error: Vec<f64>,
}

impl NeuronTerms {
    fn new(x: &Matrix, net: &NetworkState) -> Self {
        let (n, m) = (x.rows(), net.m());
        let mut gate = vec![false; n * m];
        let mut value = vec![0.0; n * m];
        let mut error = vec![0.0; n * m];
        for r in 0..m {
            let w = net.weights().column(r);
            let q = binq::quantize_finite(w);
            let u = binq::error_vector_of(&q, w);
            for i in 0..n {
                let xi = x.row(i);
                let k = i * m + r;
                gate[k] = binq::dequantize_dot_with_sum(&q, xi, xi.iter().sum()) >= 0.0;
                value[k] = net::dot(w, xi);
                error[k] = net::dot(&u, xi);
            }
        }
        Self { gate, value, error }
    }

    fn gated(&self, k: usize) -> (f64, f64) {
        if self.gate[k] {
            (self.value[k], self.error[k])
        } else {
            (0.0, 0.0)
        }
    }
}

/// Splits the one-step loss change of the 1-bit network into stable-set,
/// flipped-set, quantization-error and second-order terms.
pub fn loss_decomposition(
    state_t: &NetworkState,
    state_t1: &NetworkState,
    x: &Matrix,
    y: &[f64],
    partition: &FlipPartition,
) -> Result<Decomposition> {
    check_targets(x, y)?;
    if state_t.d() != state_t1.d() || state_t.m() != state_t1.m() {
        return Err(Error::dim("decomposition states", state_t.m(), state_t1.m()));
    }
    if partition.n() != x.rows() || partition.m() != state_t.m() {
        return Err(Error::dim("decomposition partition", x.rows(), partition.n()));
    }
    let f_t = net::batch_forward(x, state_t, ForwardMode::OneBit)?;
    let f_t1 = net::batch_forward(x, state_t1, ForwardMode::OneBit)?;
    let now = NeuronTerms::new(x, state_t);
    let next = NeuronTerms::new(x, state_t1);

    let m = state_t.m();
    let prefactor = state_t.kappa() / (m as f64).sqrt();
    let mut out = Decomposition::default();
    for (i, (&fi, &yi)) in f_t.iter().zip(y).enumerate() {
        let rho = fi - yi;
        let (mut stable, mut flipped, mut quant) = (0.0, 0.0, 0.0);
        for r in 0..m {
            let a = f64::from(state_t.signs()[r]);
            let k = i * m + r;
            let (v0, e0) = now.gated(k);
            let (v1, e1) = next.gated(k);
            if partition.is_flipped(i, r) {
                flipped += a * (v0 - v1);
            } else {
                stable += a * (v0 - v1);
            }
            quant += a * (e0 - e1);
        }
        out.c1 -= prefactor * stable * rho;
        out.c2 -= prefactor * flipped * rho;
        out.c3 -= prefactor * quant * rho;
    }
    out.c4 = 0.5 * f_t.iter().zip(&f_t1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRate {
    Fixed(f64),
    /// `min(cap, 1/λ_max(H(0)))` with the 1-bit kernel on the training set,
    /// or `min(cap, FALLBACK_ETA)` when kernel probing is off.
    Auto {
        cap: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub eta: LearningRate,
    pub steps: usize,
    pub kappa: f64,
    pub seed: u64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let eta_ok = match self.eta {
            // Zero is allowed: it freezes both branches.
            LearningRate::Fixed(eta) => eta >= 0.0 && eta.is_finite(),
            LearningRate::Auto { cap } => cap > 0.0 && cap.is_finite(),
        };
        if !eta_ok {
            return Err(Error::InvalidConfig(format!(
                "learning rate {:?} must be finite and nonnegative",
                self.eta
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::InvalidConfig(format!("kappa {} is outside (0, 1]", self.kappa)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Probe the 1-bit kernel every `stride` steps (and at the last step).
    pub probe_stride: Option<usize>,
    /// Record the exact loss decomposition at every step.
    pub decomposition: bool,
}

impl Diagnostics {
    /// Probes at `max(1, steps / 100)`, no decomposition.
    pub fn default_for(steps: usize) -> Self {
        Self {
            probe_stride: Some((steps / 100).max(1)),
            decomposition: false,
        }
    }

    pub fn none() -> Self {
        Self {
            probe_stride: None,
            decomposition: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss_1bit: f64,
    pub loss_fp: f64,
    /// `max_r ‖w_r(t) − w_r(0)‖` of the 1-bit branch.
    pub weight_drift: f64,
    pub weight_drift_fp: f64,
    /// Mean over samples of the fraction of 1-bit gates flipped since step 0.
    pub flip_fraction: f64,
    /// `max_i |F_i − F'_i|` on the training inputs.
    pub max_train_diff: f64,
    /// Same on the test inputs.
    pub max_test_diff: f64,
    /// Terms for the transition `t → t+1`; absent on the last step.
    pub decomposition: Option<Decomposition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelProbe {
    pub step: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub gram_drift: f64,
    /// `‖H(t) − H(0)‖_F / ‖H(0)‖_F`.
    pub relative_gram_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrajectory {
    pub width: usize,
    pub seed: u64,
    /// Learning rate actually used.
    pub eta: f64,
    pub records: Vec<StepRecord>,
    pub probes: Vec<KernelProbe>,
    pub initial: NetworkState,
    pub final_one_bit: NetworkState,
    pub final_fp: NetworkState,
}

impl TrainTrajectory {
    pub fn initial_record(&self) -> &StepRecord {
        &self.records[0]
    }

    pub fn final_record(&self) -> &StepRecord {
        self.records.last().expect("trajectory has at least one record")
    }

    pub fn min_loss_1bit(&self) -> f64 {
        self.records.iter().map(|r| r.loss_1bit).fold(f64::INFINITY, f64::min)
    }

    pub fn min_loss_fp(&self) -> f64 {
        self.records.iter().map(|r| r.loss_fp).fold(f64::INFINITY, f64::min)
    }

    pub fn record_at(&self, step: usize) -> Option<&StepRecord> {
        self.records.get(step).filter(|r| r.step == step)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check_loss(step: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LOSS {
        return Err(Error::Divergence { step, loss });
    }
    Ok(())
}

fn probe(step: usize, x: &Matrix, pattern: &ActivationPattern, kappa: f64, h0: &GramMatrix) -> Result<KernelProbe> {
    let g = kernel::gram_from_pattern(x, &pattern.clone().with_step(step), kappa)?;
    let (lambda_min, lambda_max) = kernel::min_max_eigenvalues(&g)?;
    let gram_drift = kernel::gram_drift(&g, h0)?;
    let base = h0.entries.frobenius();
    Ok(KernelProbe {
        step,
        lambda_min,
        lambda_max,
        gram_drift,
        relative_gram_drift: if base > 0.0 { gram_drift / base } else { 0.0 },
    })
}

/// Trains the 1-bit network and its full-precision twin from one shared
/// initialization of width `m`, for `hp.steps` full-batch steps.
///
/// The trajectory holds `steps + 1` records, for `t = 0..=steps`.
pub fn train_twin(
    train: &Dataset,
    test: &Dataset,
    m: usize,
    hp: &Hyperparams,
    diagnostics: &Diagnostics,
) -> Result<TrainTrajectory> {
    hp.validate()?;
    let d = train.d();
    if test.d() != d {
        return Err(Error::dim("test inputs", d, test.d()));
    }
    if let Some(0) = diagnostics.probe_stride {
        return Err(Error::InvalidConfig("probe stride must be positive".into()));
    }
    let (x, y) = (&train.x, &train.y);
    let initial = net::init_network(d, m, hp.kappa, hp.seed)?;
    let mut one_bit = initial.clone();
    let mut fp = initial.clone();

    let eval0 = net::evaluate(x, &one_bit, ForwardMode::OneBit)?;
    let pattern0 = eval0.pattern.clone();
    let h0 = match diagnostics.probe_stride {
        Some(_) => Some(kernel::gram_from_pattern(x, &pattern0, hp.kappa)?),
        None => None,
    };
    let eta = match (hp.eta, &h0) {
        (LearningRate::Fixed(eta), _) => eta,
        (LearningRate::Auto { cap }, Some(h0)) => {
            let (_, lambda_max) = kernel::min_max_eigenvalues(h0)?;
            if lambda_max > 0.0 {
                cap.min(1.0 / lambda_max)
            } else {
                cap
            }
        }
        (LearningRate::Auto { cap }, None) => cap.min(FALLBACK_ETA),
    };

    let mut records = Vec::with_capacity(hp.steps + 1);
    let mut probes = Vec::new();
    let mut eval_1bit = eval0;
    let n = x.rows() as f64;
    for t in 0..=hp.steps {
        let eval_fp = net::evaluate(x, &fp, ForwardMode::FullPrecision)?;
        let loss_1bit = loss(&eval_1bit.outputs, y)?;
        let loss_fp = loss(&eval_fp.outputs, y)?;
        check_loss(t, loss_1bit)?;
        check_loss(t, loss_fp)?;

        let test_1bit = net::batch_forward(&test.x, &one_bit, ForwardMode::OneBit)?;
        let test_fp = net::batch_forward(&test.x, &fp, ForwardMode::FullPrecision)?;
        let flips = kernel::pattern_flip_counts(&pattern0, &eval_1bit.pattern)?;
        let flip_fraction = flips.iter().sum::<usize>() as f64 / (n * m as f64);

        if let (Some(stride), Some(h0)) = (diagnostics.probe_stride, &h0) {
            if t % stride == 0 || t == hp.steps {
                probes.push(probe(t, x, &eval_1bit.pattern, hp.kappa, h0)?);
            }
        }

        records.push(StepRecord {
            step: t,
            loss_1bit,
            loss_fp,
            weight_drift: weight_drift(&initial, &one_bit)?,
            weight_drift_fp: weight_drift(&initial, &fp)?,
            flip_fraction,
            max_train_diff: max_abs_diff(&eval_1bit.outputs, &eval_fp.outputs),
            max_test_diff: max_abs_diff(&test_1bit, &test_fp),
            decomposition: None,
        });
        if t == hp.steps {
            break;
        }

        let grad_1bit = gated_gradient(x, &residuals(&eval_1bit.outputs, y), &eval_1bit.pattern, &one_bit);
        let grad_fp = gated_gradient(x, &residuals(&eval_fp.outputs, y), &eval_fp.pattern, &fp);
        let before = diagnostics.decomposition.then(|| one_bit.clone());
        one_bit.step(eta, &grad_1bit)?;
        fp.step(eta, &grad_fp)?;
        if one_bit.weights().as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: t + 1,
                loss: f64::NAN,
            });
        }
        if let Some(before) = before {
            let partition = FlipPartition::from_patterns(&pattern0, &eval_1bit.pattern)?;
            let terms = loss_decomposition(&before, &one_bit, x, y, &partition)?;
            records[t].decomposition = Some(terms);
        }
        eval_1bit = net::evaluate(x, &one_bit, ForwardMode::OneBit)?;
    }

    Ok(TrainTrajectory {
        width: m,
        seed: hp.seed,
        eta,
        records,
        probes,
        initial,
        final_one_bit: one_bit,
        final_fp: fp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GenerationMode, TargetFunction};
    use crate::net::init_network;
    use rand::{Rng, SeedableRng};

    fn unit_batch(n: usize, d: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = net::dot(&v, &v).sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let y = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 0.0);
        assert_eq!(loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(loss(&[1.0], &[1.0, 2.0]).is_err());

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let f: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut oracle = 0.0;
        for k in 0..10 {
            oracle += (f[k] - y[k]) * (f[k] - y[k]) / 2.0;
        }
        assert!((loss(&f, &y).unwrap() - oracle).abs() <= 1e-14);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let net = init_network(3, 20, 1.0, 1).unwrap();
        let (x, _) = unit_batch(5, 3, 2);
        let f = net::batch_forward(&x, &net, ForwardMode::OneBit).unwrap();
        assert!(ste_gradient(&x, &f, &net).unwrap().as_slice().iter().all(|&g| g == 0.0));
        let f = net::batch_forward(&x, &net, ForwardMode::FullPrecision).unwrap();
        assert!(fp_gradient(&x, &f, &net).unwrap().as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn closed_gate_column_is_zero() {
        // Second neuron is w = -(first); on x = e1 its dq is negative.
        let cols = vec![vec![3.0, 1.0, -1.0, -3.0], vec![-3.0, -1.0, 1.0, 3.0]];
        let net = NetworkState::new(WeightMatrix::from_columns(&cols).unwrap(), vec![1, 1], 1.0).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let g = ste_gradient(&x, &[0.0], &net).unwrap();
        assert!(g.column(1).iter().all(|&v| v == 0.0));
        assert!(g.column(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn single_active_neuron_fp_gradient() {
        let cols = vec![vec![0.5, 0.2, 0.1], vec![-0.5, -0.2, -0.1]];
        let net = NetworkState::new(WeightMatrix::from_columns(&cols).unwrap(), vec![-1, 1], 0.6).unwrap();
        let x = [0.6, 0.0, 0.8];
        let xm = Matrix::from_rows(&[x.to_vec()]).unwrap();
        let y = [0.25];
        let rho = net::forward_fp(&x, &net).unwrap() - y[0];
        let g = fp_gradient(&xm, &y, &net).unwrap();
        let coef = -(rho * 0.6 / 2f64.sqrt());
        for (k, xk) in x.iter().enumerate() {
            assert!((g.get(k, 0) - coef * xk).abs() < 1e-15);
            assert_eq!(g.get(k, 1), 0.0);
        }
    }

    #[test]
    fn weight_drift_cases() {
        let net = init_network(3, 10, 1.0, 3).unwrap();
        assert_eq!(weight_drift(&net, &net).unwrap(), 0.0);
        let (x, y) = unit_batch(6, 3, 4);
        let g = ste_gradient(&x, &y, &net).unwrap();
        let step = |eta: f64| {
            let mut next = net.clone();
            next.step(eta, &g).unwrap();
            weight_drift(&net, &next).unwrap()
        };
        let oracle = (0..10).map(|r| 0.125 * g.column_norm(r)).fold(0.0, f64::max);
        assert!((step(0.125) - oracle).abs() < 1e-15);
        assert!((step(0.25) - 2.0 * step(0.125)).abs() < 1e-15);
        let other = init_network(3, 11, 1.0, 3).unwrap();
        assert!(weight_drift(&net, &other).is_err());
    }

    #[test]
    fn column_gradient_bound() {
        for seed in 0..5 {
            let net = init_network(4, 64, 0.7, seed).unwrap();
            let (x, y) = unit_batch(12, 4, 10 + seed);
            let f = net::batch_forward(&x, &net, ForwardMode::OneBit).unwrap();
            let res_norm = f.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let bound = 0.7 * (12.0f64 / 64.0).sqrt() * res_norm;
            let g = ste_gradient(&x, &y, &net).unwrap();
            for r in 0..64 {
                assert!(g.column_norm(r) <= bound + 1e-9);
            }
        }
    }

    #[test]
    fn partition_validation() {
        assert!(FlipPartition::from_sets(&[vec![0, 1]], &[vec![2]], 3).is_ok());
        assert!(FlipPartition::from_sets(&[vec![0, 1]], &[vec![1, 2]], 3).is_err());
        assert!(FlipPartition::from_sets(&[vec![0]], &[vec![2]], 3).is_err());
        assert!(FlipPartition::from_sets(&[vec![0, 1, 3]], &[vec![2]], 3).is_err());
        let p = FlipPartition::from_sets(&[vec![2], vec![0, 1, 2]], &[vec![0, 1], vec![]], 3).unwrap();
        assert!(p.is_flipped(0, 1) && !p.is_flipped(0, 2) && p.flipped_count(1) == 0);
    }

    #[test]
    fn decomposition_frozen_step_is_zero() {
        let net = init_network(4, 30, 1.0, 5).unwrap();
        let (x, y) = unit_batch(7, 4, 6);
        let d = loss_decomposition(&net, &net, &x, &y, &FlipPartition::all_stable(7, 30)).unwrap();
        assert_eq!(d, Decomposition::default());
    }

    #[test]
    fn decomposition_identity_for_any_partition() {
        let mut net = init_network(4, 128, 1.0, 7).unwrap();
        let (x, y) = unit_batch(16, 4, 8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let g = ste_gradient(&x, &y, &net).unwrap();
            let mut next = net.clone();
            next.step(0.5, &g).unwrap();
            let l0 = loss(&net::batch_forward(&x, &net, ForwardMode::OneBit).unwrap(), &y).unwrap();
            let l1 = loss(&net::batch_forward(&x, &next, ForwardMode::OneBit).unwrap(), &y).unwrap();
            let mut sums = Vec::new();
            for _ in 0..3 {
                let flipped: Vec<Vec<usize>> = (0..16)
                    .map(|_| (0..128).filter(|_| rng.gen_bool(0.3)).collect())
                    .collect();
                let stable: Vec<Vec<usize>> = flipped
                    .iter()
                    .map(|f| (0..128).filter(|r| !f.contains(r)).collect())
                    .collect();
                let part = FlipPartition::from_sets(&stable, &flipped, 128).unwrap();
                let c = loss_decomposition(&net, &next, &x, &y, &part).unwrap();
                assert!(c.c4 >= 0.0);
                assert!((l1 - l0 - c.total()).abs() <= 1e-8 * l0.max(1.0));
                sums.push(c.c1 + c.c2);
            }
            assert!((sums[0] - sums[1]).abs() < 1e-10 && (sums[1] - sums[2]).abs() < 1e-10);
            net = next;
        }
    }

    fn small_data(seed: u64) -> (Dataset, Dataset) {
        let train = generate_dataset(&TargetFunction::F3, 10, seed, GenerationMode::UnitNorm).unwrap();
        let test = generate_dataset(&TargetFunction::F3, 5, seed + 1, GenerationMode::UnitNorm).unwrap();
        (train, test)
    }

    #[test]
    fn frozen_training() {
        let (train, test) = small_data(1);
        let hp = Hyperparams {
            eta: LearningRate::Fixed(0.0),
            steps: 5,
            kappa: 1.0,
            seed: 3,
        };
        let traj = train_twin(&train, &test, 32, &hp, &Diagnostics::default_for(5)).unwrap();
        assert_eq!(traj.records.len(), 6);
        assert_eq!(traj.final_one_bit, traj.initial);
        assert_eq!(traj.final_fp, traj.initial);
        let r0 = traj.initial_record();
        for r in &traj.records {
            assert_eq!(r.weight_drift, 0.0);
            assert_eq!(r.flip_fraction, 0.0);
            assert_eq!(r.max_train_diff, r0.max_train_diff);
            assert_eq!(r.max_test_diff, r0.max_test_diff);
        }
        assert!(traj.probes.iter().all(|p| p.gram_drift == 0.0));
    }

    #[test]
    fn training_is_deterministic_and_shares_init() {
        let (train, test) = small_data(2);
        let hp = Hyperparams {
            eta: LearningRate::Auto { cap: 0.1 },
            steps: 30,
            kappa: 1.0,
            seed: 4,
        };
        let diag = Diagnostics {
            probe_stride: Some(7),
            decomposition: true,
        };
        let a = train_twin(&train, &test, 64, &hp, &diag).unwrap();
        let b = train_twin(&train, &test, 64, &hp, &diag).unwrap();
        assert_eq!(a, b);
        assert!(a.eta > 0.0 && a.eta <= 0.1);
        assert_eq!(a.records[0].max_train_diff, {
            let f1 = net::batch_forward(&train.x, &a.initial, ForwardMode::OneBit).unwrap();
            let f2 = net::batch_forward(&train.x, &a.initial, ForwardMode::FullPrecision).unwrap();
            max_abs_diff(&f1, &f2)
        });
        let steps: Vec<usize> = a.probes.iter().map(|p| p.step).collect();
        assert_eq!(steps, vec![0, 7, 14, 21, 28, 30]);
        for (t, r) in a.records.iter().enumerate() {
            assert_eq!(r.step, t);
            assert!(r.loss_1bit >= 0.0 && r.loss_fp >= 0.0);
            if t < 30 {
                let c = r.decomposition.unwrap();
                let delta = a.records[t + 1].loss_1bit - r.loss_1bit;
                assert!((delta - c.total()).abs() <= 1e-8 * r.loss_1bit.max(1.0));
            } else {
                assert!(r.decomposition.is_none());
            }
        }
    }

    #[test]
    fn divergence_is_reported() {
        let (train, test) = small_data(3);
        let hp = Hyperparams {
            eta: LearningRate::Fixed(1e6),
            steps: 50,
            kappa: 1.0,
            seed: 5,
        };
        match train_twin(&train, &test, 16, &hp, &Diagnostics::none()) {
            Err(Error::Divergence { step, .. }) => assert!(step > 0 && step <= 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn hyperparam_validation() {
        let (train, test) = small_data(4);
        let bad = [
            Hyperparams {
                eta: LearningRate::Fixed(-1.0),
                steps: 5,
                kappa: 1.0,
                seed: 0,
            },
            Hyperparams {
                eta: LearningRate::Fixed(0.1),
                steps: 0,
                kappa: 1.0,
                seed: 0,
            },
            Hyperparams {
                eta: LearningRate::Fixed(0.1),
                steps: 5,
                kappa: 1.2,
                seed: 0,
            },
            Hyperparams {
                eta: LearningRate::Auto { cap: 0.0 },
                steps: 5,
                kappa: 1.0,
                seed: 0,
            },
        ];
        for hp in bad {
            assert!(matches!(
                train_twin(&train, &test, 8, &hp, &Diagnostics::none()),
                Err(Error::InvalidConfig(_))
            ));
        }
    }
}
