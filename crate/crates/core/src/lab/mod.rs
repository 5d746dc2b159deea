//! Experiment harness: each command reads one [`ExperimentConfig`], runs
//! its cells and writes CSV tables plus a `meta.json` sidecar.
//!
//! Sweep cells share the dataset drawn from their seed; the network of the
//! cell `(width, seed)` is initialized from [`cell_seed`]. Cells run on a
//! rayon pool of `workers` threads and rows are sorted by `(width, seed)`
//! before writing, so the tables do not depend on scheduling.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{parse_config, parse_config_with_overrides, parse_override, Command, EtaSetting, ExperimentConfig};
pub use report::{emit_report, read_report, run_records, Format, RunRecord, Table, RUN_HEADER};
pub use serde_json::Value as JsonValue;

use crate::data::{self, Dataset, DatasetMeta, Expression, GenerationMode};
use crate::net::{self, ForwardMode};
use crate::train::{self, Diagnostics, TrainTrajectory};
use crate::{kernel, rng, Error, Matrix, Result};

/// Network seed of a sweep cell: `derive(seed, width)`.
pub fn cell_seed(seed: u64, width: usize) -> u64 {
    rng::derive(seed, width as u64)
}

/// Train and test sets for one data seed. Under a holdout split `n` counts
/// both sets.
pub fn datasets(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let ds = data::generate_dataset(&cfg.target, cfg.n, seed, cfg.mode)?;
    data::split(&ds, cfg.n_test, seed, cfg.split)
}

/// Result of one `(width, seed)` cell.
#[derive(Debug)]
pub struct Cell {
    pub width: usize,
    pub seed: u64,
    pub d: usize,
    pub outcome: std::result::Result<TrainTrajectory, Error>,
}

impl Cell {
    pub fn param_count(&self) -> usize {
        self.d * self.width + self.width
    }

    pub fn failed(&self) -> bool {
        self.outcome.is_err()
    }
}

/// Runs every `(width, seed)` cell of the config, sorted by `(width, seed)`.
pub fn run_cells(cfg: &ExperimentConfig, diagnostics: &Diagnostics) -> Result<Vec<Cell>> {
    let mut data_by_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        data_by_seed.push((seed, datasets(cfg, seed)?));
    }
    let mut jobs = Vec::new();
    for &width in &cfg.widths {
        for (k, _) in cfg.seeds.iter().enumerate() {
            jobs.push((width, k));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let mut cells: Vec<Cell> = pool.install(|| {
        jobs.par_iter()
            .map(|&(width, k)| {
                let (seed, (train_ds, test_ds)) = &data_by_seed[k];
                let hp = cfg.hyperparams(cell_seed(*seed, width));
                Cell {
                    width,
                    seed: *seed,
                    d: train_ds.d(),
                    outcome: train::train_twin(train_ds, test_ds, width, &hp, diagnostics),
                }
            })
            .collect()
    });
    cells.sort_by_key(|c| (c.width, c.seed));
    Ok(cells)
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Median of `metric` over the successful cells of one width.
pub fn median_over_seeds(cells: &[Cell], width: usize, metric: impl Fn(&TrainTrajectory) -> f64) -> f64 {
    let mut v: Vec<f64> = cells
        .iter()
        .filter(|c| c.width == width)
        .filter_map(|c| c.outcome.as_ref().ok())
        .map(metric)
        .collect();
    median(&mut v)
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, report::num)
}

pub const SWEEP_HEADER: [&str; 12] = [
    "width",
    "seed",
    "min_loss_1bit",
    "min_loss_fp",
    "param_count",
    "failed",
    "eta",
    "final_loss_1bit",
    "final_loss_fp",
    "relative_gram_drift",
    "max_train_diff",
    "max_test_diff",
];

pub const SUMMARY_HEADER: [&str; 8] = [
    "width",
    "param_count",
    "cells",
    "failed",
    "median_min_loss_1bit",
    "median_min_loss_fp",
    "median_relative_gram_drift",
    "median_max_test_diff",
];

fn final_relative_drift(t: &TrainTrajectory) -> f64 {
    t.probes.last().map_or(f64::NAN, |p| p.relative_gram_drift)
}

/// `sweep.csv`: one row per cell. Failed cells keep their row with empty
/// metrics.
pub fn sweep_table(cells: &[Cell]) -> Table {
    let mut table = Table::new(&SWEEP_HEADER);
    for c in cells {
        let t = c.outcome.as_ref().ok();
        let last = t.map(|t| t.final_record());
        table.row([
            c.width.to_string(),
            c.seed.to_string(),
            opt_num(t.map(|t| t.min_loss_1bit())),
            opt_num(t.map(|t| t.min_loss_fp())),
            c.param_count().to_string(),
            u8::from(c.failed()).to_string(),
            opt_num(t.map(|t| t.eta)),
            opt_num(last.map(|r| r.loss_1bit)),
            opt_num(last.map(|r| r.loss_fp)),
            opt_num(t.map(final_relative_drift)),
            opt_num(last.map(|r| r.max_train_diff)),
            opt_num(last.map(|r| r.max_test_diff)),
        ]);
    }
    table
}

/// `sweep_summary.csv`: medians per width over successful cells.
pub fn sweep_summary_table(cells: &[Cell], widths: &[usize]) -> Table {
    let mut table = Table::new(&SUMMARY_HEADER);
    let mut widths = widths.to_vec();
    widths.sort_unstable();
    widths.dedup();
    for w in widths {
        let of_width: Vec<&Cell> = cells.iter().filter(|c| c.width == w).collect();
        let failed = of_width.iter().filter(|c| c.failed()).count();
        let param_count = of_width.first().map_or(0, |c| c.param_count());
        table.row([
            w.to_string(),
            param_count.to_string(),
            of_width.len().to_string(),
            failed.to_string(),
            report::num(median_over_seeds(cells, w, TrainTrajectory::min_loss_1bit)),
            report::num(median_over_seeds(cells, w, TrainTrajectory::min_loss_fp)),
            report::num(median_over_seeds(cells, w, final_relative_drift)),
            report::num(median_over_seeds(cells, w, |t| t.final_record().max_test_diff)),
        ]);
    }
    table
}

/// What a command produced: the tables written and a one-line summary.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

#[derive(Serialize)]
struct Meta<'a> {
    command: Command,
    config: &'a ExperimentConfig,
    crate_version: &'static str,
    rustc_target_arch: &'static str,
    files: Vec<String>,
    wall_time_seconds: f64,
    summary: &'a str,
}

/// Runs the configured command, writing its tables into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let command = cfg.command()?;
    std::fs::create_dir_all(out)?;
    let started = Instant::now();
    let outcome = match command {
        Command::Train => run_train(cfg, out)?,
        Command::SweepWidth => run_sweep(cfg, out)?,
        Command::Similarity => run_similarity(cfg, out)?,
        Command::KernelProbe => run_kernel_probe(cfg, out)?,
        Command::GenerateData => run_generate(cfg, out)?,
        Command::Compare1d => run_compare_1d(cfg, out)?,
    };
    let meta = Meta {
        command,
        config: cfg,
        crate_version: env!("CARGO_PKG_VERSION"),
        rustc_target_arch: std::env::consts::ARCH,
        files: outcome
            .files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        summary: &outcome.summary,
    };
    std::fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(outcome)
}

fn write(table: &Table, out: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = out.join(name);
    table.write(&path)?;
    files.push(path);
    Ok(())
}

/// Divergence in a single run is an error, unlike in sweeps.
fn first_failure(cells: Vec<Cell>) -> Result<Vec<((usize, u64), TrainTrajectory)>> {
    cells.into_iter().map(|c| Ok(((c.width, c.seed), c.outcome?))).collect()
}

fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let cells = first_failure(run_cells(cfg, &cfg.diagnostics())?)?;
    let mut files = Vec::new();
    let single = cells.len() == 1;
    let mut summary = Vec::new();
    for ((width, seed), t) in &cells {
        let stem = if single {
            "run".to_string()
        } else {
            format!("run_w{}_s{}", width, seed)
        };
        let records = run_records(t);
        let mut text = String::new();
        report::write_run_csv(&records, &mut text);
        let csv_path = out.join(format!("{stem}.csv"));
        std::fs::write(&csv_path, text)?;
        files.push(csv_path);
        let json_path = out.join(format!("{stem}.json"));
        emit_report(&records, Format::Json, &json_path)?;
        files.push(json_path);
        if cfg.decomposition {
            let mut table = Table::new(&["step", "loss_delta", "c1", "c2", "c3", "c4", "residual"]);
            for pair in t.records.windows(2) {
                if let Some(dec) = &pair[0].decomposition {
                    let delta = pair[1].loss_1bit - pair[0].loss_1bit;
                    table.row([
                        pair[0].step.to_string(),
                        report::num(delta),
                        report::num(dec.c1),
                        report::num(dec.c2),
                        report::num(dec.c3),
                        report::num(dec.c4),
                        report::num(delta - dec.total()),
                    ]);
                }
            }
            write(&table, out, &format!("{stem}_decomposition.csv"), &mut files)?;
        }
        let last = t.final_record();
        summary.push(format!(
            "m={} seed={} eta={:.4e} loss_1bit {:.4e} -> {:.4e}, loss_fp {:.4e} -> {:.4e}",
            width,
            seed,
            t.eta,
            t.initial_record().loss_1bit,
            last.loss_1bit,
            t.initial_record().loss_fp,
            last.loss_fp
        ));
    }
    Ok(Outcome {
        files,
        summary: summary.join("\n"),
    })
}

fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let cells = run_cells(cfg, &cfg.diagnostics())?;
    let mut files = Vec::new();
    write(&sweep_table(&cells), out, "sweep.csv", &mut files)?;
    write(
        &sweep_summary_table(&cells, &cfg.widths),
        out,
        "sweep_summary.csv",
        &mut files,
    )?;
    let failed = cells.iter().filter(|c| c.failed()).count();
    Ok(Outcome {
        files,
        summary: format!("{} cells, {failed} failed", cells.len()),
    })
}

pub const SIMILARITY_HEADER: [&str; 8] = [
    "width",
    "seed",
    "kappa",
    "step",
    "max_train_diff",
    "max_test_diff",
    "loss_1bit",
    "loss_fp",
];

/// Train/test twin gaps per cell at every probed step.
fn run_similarity(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let diagnostics = Diagnostics {
        probe_stride: None,
        decomposition: false,
    };
    let stride = cfg.probe_stride();
    let cells = first_failure(run_cells(cfg, &diagnostics)?)?;
    let mut table = Table::new(&SIMILARITY_HEADER);
    for ((width, seed), t) in &cells {
        for r in t.records.iter().filter(|r| r.step % stride == 0 || r.step == cfg.steps) {
            table.row([
                width.to_string(),
                seed.to_string(),
                report::num(cfg.kappa),
                r.step.to_string(),
                report::num(r.max_train_diff),
                report::num(r.max_test_diff),
                report::num(r.loss_1bit),
                report::num(r.loss_fp),
            ]);
        }
    }
    let mut files = Vec::new();
    write(&table, out, "similarity.csv", &mut files)?;
    let widest = cfg.widths.iter().copied().max().unwrap_or(0);
    let mut gaps: Vec<f64> = cells
        .iter()
        .filter(|((w, _), _)| *w == widest)
        .map(|(_, t)| t.final_record().max_test_diff)
        .collect();
    let gap = median(&mut gaps);
    Ok(Outcome {
        files,
        summary: format!("median final test gap at m={widest}: {gap:.4e}"),
    })
}

pub const KERNEL_HEADER: [&str; 8] = [
    "width",
    "seed",
    "step",
    "lambda_min",
    "lambda_max",
    "gram_drift",
    "relative_gram_drift",
    "flip_fraction",
];

/// Spectrum and drift of the 1-bit kernel along training.
fn run_kernel_probe(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let cells = first_failure(run_cells(cfg, &cfg.diagnostics())?)?;
    let mut table = Table::new(&KERNEL_HEADER);
    let mut init = Table::new(&["width", "seed", "i", "j", "h"]);
    for ((width, seed), t) in &cells {
        for p in &t.probes {
            let flip = t.record_at(p.step).map_or(f64::NAN, |r| r.flip_fraction);
            table.row([
                width.to_string(),
                seed.to_string(),
                p.step.to_string(),
                report::num(p.lambda_min),
                report::num(p.lambda_max),
                report::num(p.gram_drift),
                report::num(p.relative_gram_drift),
                report::num(flip),
            ]);
        }
        let (train_ds, _) = datasets(cfg, *seed)?;
        let h0 = kernel::gram_matrix(&train_ds.x, &t.initial, net::Mode::OneBit)?;
        for i in 0..h0.n() {
            for j in 0..h0.n() {
                init.row([
                    width.to_string(),
                    seed.to_string(),
                    i.to_string(),
                    j.to_string(),
                    report::num(h0.get(i, j)),
                ]);
            }
        }
    }
    let mut files = Vec::new();
    write(&table, out, "kernel.csv", &mut files)?;
    write(&init, out, "kernel_init.csv", &mut files)?;
    Ok(Outcome {
        files,
        summary: format!("{} probed runs", cells.len()),
    })
}

fn run_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let mut files = Vec::new();
    for &seed in &cfg.seeds {
        let (train_ds, test_ds) = datasets(cfg, seed)?;
        let suffix = if cfg.seeds.len() == 1 {
            String::new()
        } else {
            format!("_s{seed}")
        };
        for (name, ds) in [("train", &train_ds), ("test", &test_ds)] {
            let path = out.join(format!("{name}{suffix}.csv"));
            data::persist_dataset(ds, &path)?;
            files.push(path.clone());
            files.push(data::sidecar_path(&path));
        }
    }
    Ok(Outcome {
        files,
        summary: format!("{} target on {} seed(s)", cfg.target, cfg.seeds.len()),
    })
}

/// Built-in 1-D target with sharp spikes on `[−π, π]`.
pub const SPIKY_PRESET: &str = "sin(3*x) + 0.5*cos(7*x) + 2*exp(-40*(x-1)^2) - 1.5*exp(-60*(x+1.5)^2)";

/// Number of evenly spaced training points on `[−π, π]`.
pub const COMPARE_TRAIN_POINTS: usize = 100;

/// Lifts a scalar into `embed_dim` inputs: `x/π`, a constant 1, then zeros.
///
/// Two coordinates alone would make sign quantization lossless, so the
/// default embedding is three-dimensional.
pub fn embed_1d(x: f64, embed_dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; embed_dim];
    v[0] = x / std::f64::consts::PI;
    v[1] = 1.0;
    v
}

pub const COMPARE_HEADER: [&str; 4] = ["x", "y_true", "y_1bit", "y_fp"];

/// The table of `compare1d.csv`: the dense grid first, then the test points.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<[f64; 4]>,
    pub grid: usize,
    pub eta: f64,
    pub final_loss_1bit: f64,
    pub final_loss_fp: f64,
}

impl Comparison {
    pub fn test_rows(&self) -> &[[f64; 4]] {
        &self.rows[self.grid..]
    }

    pub fn max_test_gap(&self) -> f64 {
        self.test_rows().iter().map(|r| (r[2] - r[3]).abs()).fold(0.0, f64::max)
    }
}

fn dataset_1d(xs: &[f64], expr: &Expression, embed_dim: usize, seed: u64) -> Result<Dataset> {
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| embed_1d(x, embed_dim)).collect();
    let y = xs.iter().map(|&x| expr.eval(x)).collect::<Result<Vec<f64>>>()?;
    Dataset::from_parts(
        Matrix::from_rows(&rows)?,
        y,
        DatasetMeta {
            target: format!("custom_1d:{}", expr.source()),
            seed,
            mode: GenerationMode::Box,
            n: xs.len(),
            d: embed_dim,
            rejections: 0,
            y_scale: 1.0,
        },
    )
}

/// Trains both twins on 100 evenly spaced points of `[−π, π]` and evaluates
/// them on a dense grid and on `n_test` uniform random points. Uses the
/// first width and seed of the config.
pub fn compare_1d(cfg: &ExperimentConfig) -> Result<Comparison> {
    use rand::Rng as _;
    let src = cfg.expression.as_deref().unwrap_or(SPIKY_PRESET);
    let expr = Expression::parse(src).map_err(|e| Error::config("expression", e.to_string()))?;
    let seed = cfg.seeds[0];
    let width = cfg.widths[0];
    let pi = std::f64::consts::PI;
    let spaced = |count: usize| -> Vec<f64> {
        if count == 1 {
            return vec![0.0];
        }
        (0..count)
            .map(|k| -pi + 2.0 * pi * k as f64 / (count - 1) as f64)
            .collect()
    };
    let train_x = spaced(COMPARE_TRAIN_POINTS);
    let mut test_rng = rng::seeded(rng::derive(seed, rng::TEST_SPLIT_TAG));
    let test_x: Vec<f64> = (0..cfg.n_test).map(|_| test_rng.gen_range(-pi..=pi)).collect();
    let train_ds = dataset_1d(&train_x, &expr, cfg.embed_dim, seed)?;
    let test_ds = dataset_1d(&test_x, &expr, cfg.embed_dim, seed)?;
    let traj = train::train_twin(
        &train_ds,
        &test_ds,
        width,
        &cfg.hyperparams(cell_seed(seed, width)),
        &Diagnostics {
            probe_stride: matches!(cfg.eta, EtaSetting::Auto).then_some(cfg.steps.max(1)),
            decomposition: false,
        },
    )?;
    let grid_x = spaced(cfg.grid);
    let mut rows = Vec::with_capacity(grid_x.len() + test_x.len());
    for &x in grid_x.iter().chain(&test_x) {
        let z = embed_1d(x, cfg.embed_dim);
        rows.push([
            x,
            expr.eval(x)?,
            net::forward(&z, &traj.final_one_bit, ForwardMode::OneBit)?,
            net::forward(&z, &traj.final_fp, ForwardMode::FullPrecision)?,
        ]);
    }
    let last = traj.final_record();
    Ok(Comparison {
        rows,
        grid: grid_x.len(),
        eta: traj.eta,
        final_loss_1bit: last.loss_1bit,
        final_loss_fp: last.loss_fp,
    })
}

fn run_compare_1d(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let cmp = compare_1d(cfg)?;
    let mut table = Table::new(&COMPARE_HEADER);
    for r in &cmp.rows {
        table.row(r.iter().map(|&v| report::num(v)));
    }
    let mut files = Vec::new();
    write(&table, out, "compare1d.csv", &mut files)?;
    Ok(Outcome {
        files,
        summary: format!(
            "eta={:.4e} final loss 1-bit {:.4e}, fp {:.4e}; max test gap {:.4e}",
            cmp.eta,
            cmp.final_loss_1bit,
            cmp.final_loss_fp,
            cmp.max_test_gap()
        ),
    })
}
