//! Datasets: target functions, sampling, splitting and persistence.

mod io;
pub mod special;
mod targets;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub(crate) use io::format_f64;
pub use io::{load_dataset, persist_dataset, sidecar_path};
pub use special::{gamma_fn, lambert_w};
pub use targets::{eval_target, Expression, TargetFunction};

use crate::{rng, Error, Matrix, Result};

/// How inputs are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Entries i.i.d. uniform on `[−1, 1]`.
    Box,
    /// Box samples rescaled to unit norm; targets divided by `max |y|`.
    UnitNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub target: String,
    pub seed: u64,
    pub mode: GenerationMode,
    pub n: usize,
    pub d: usize,
    /// Rows redrawn because the target was undefined there.
    pub rejections: usize,
    /// Divisor applied to the raw targets (1 in box mode).
    #[serde(default = "one")]
    pub y_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// Builds from explicit inputs and targets.
    pub fn from_parts(x: Matrix, y: Vec<f64>, meta: DatasetMeta) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::dim("dataset targets", x.rows(), y.len()));
        }
        if meta.n != y.len() || meta.d != x.cols() {
            return Err(Error::InvalidInput(format!(
                "metadata says {}×{}, data is {}×{}",
                meta.n,
                meta.d,
                x.rows(),
                x.cols()
            )));
        }
        Ok(Self { x, y, meta })
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| self.x.row(i).to_vec()).collect();
        let x = if rows.is_empty() {
            Matrix::zeros(0, self.d())
        } else {
            Matrix::from_rows(&rows).expect("rows share the dataset width")
        };
        Self {
            x,
            y: idx.iter().map(|&i| self.y[i]).collect(),
            meta: DatasetMeta {
                n: idx.len(),
                ..self.meta.clone()
            },
        }
    }
}

/// Raw samples before target normalization.
struct RawSamples {
    rows: Vec<Vec<f64>>,
    y: Vec<f64>,
    rejections: usize,
}

fn sample_raw(fun: &TargetFunction, n: usize, seed: u64, mode: GenerationMode) -> Result<RawSamples> {
    let d = fun.arity();
    let mut rng = rng::seeded(seed);
    let max_attempts = 100 * n;
    let (mut rows, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut attempts = 0;
    while rows.len() < n {
        if attempts >= max_attempts {
            return Err(Error::Numerical(format!(
                "target {fun} undefined on too many samples ({attempts} attempts for {n} rows)"
            )));
        }
        attempts += 1;
        let mut row: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if mode == GenerationMode::UnitNorm {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        match eval_target(fun, &row) {
            Ok(v) if v.is_finite() => {
                rows.push(row);
                y.push(v);
            }
            Ok(_) | Err(Error::Domain(_)) | Err(Error::Pole(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(RawSamples {
        rows,
        y,
        rejections: attempts - n,
    })
}

fn assemble(fun: &TargetFunction, seed: u64, mode: GenerationMode, raw: RawSamples, y_scale: f64) -> Result<Dataset> {
    let n = raw.rows.len();
    let d = fun.arity();
    let y: Vec<f64> = if y_scale == 1.0 {
        raw.y
    } else {
        raw.y.into_iter().map(|v| v / y_scale).collect()
    };
    Dataset::from_parts(
        Matrix::from_rows(&raw.rows)?,
        y,
        DatasetMeta {
            target: fun.to_string(),
            seed,
            mode,
            n,
            d,
            rejections: raw.rejections,
            y_scale,
        },
    )
}

/// Samples `n` inputs and evaluates the target on them.
///
/// Rows on which the target is undefined (the Lambert W domain or a Gamma
/// pole) are redrawn, up to `100·n` draws in total.
pub fn generate_dataset(fun: &TargetFunction, n: usize, seed: u64, mode: GenerationMode) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidInput("dataset size must be positive".into()));
    }
    let raw = sample_raw(fun, n, seed, mode)?;
    let y_scale = match mode {
        GenerationMode::Box => 1.0,
        GenerationMode::UnitNorm => {
            let max = raw.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if max > 0.0 {
                max
            } else {
                1.0
            }
        }
    };
    assemble(fun, seed, mode, raw, y_scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Fresh draws of the same target under a derived seed; the training
    /// set is returned unchanged.
    Independent,
    /// A random holdout of `n_test` existing rows.
    Holdout,
}

/// Produces `(train, test)`.
///
/// Independent test targets are divided by the training set's `y_scale` so
/// both sets share one normalization.
pub fn split(ds: &Dataset, n_test: usize, seed: u64, mode: SplitMode) -> Result<(Dataset, Dataset)> {
    if n_test == 0 {
        return Err(Error::InvalidInput("test size must be positive".into()));
    }
    match mode {
        SplitMode::Holdout => {
            if n_test >= ds.n() {
                return Err(Error::InvalidInput(format!(
                    "holdout of {n_test} rows leaves no training data (n = {})",
                    ds.n()
                )));
            }
            let mut idx: Vec<usize> = (0..ds.n()).collect();
            idx.shuffle(&mut rng::seeded(rng::derive(seed, rng::SHUFFLE_TAG)));
            let (test, train) = idx.split_at_mut(n_test);
            test.sort_unstable();
            train.sort_unstable();
            Ok((ds.subset(train), ds.subset(test)))
        }
        SplitMode::Independent => {
            let fun: TargetFunction = ds.meta.target.parse()?;
            let test_seed = rng::derive(seed, rng::TEST_SPLIT_TAG);
            let raw = sample_raw(&fun, n_test, test_seed, ds.meta.mode)?;
            let test = assemble(&fun, test_seed, ds.meta.mode, raw, ds.meta.y_scale)?;
            Ok((ds.clone(), test))
        }
    }
}
