//! Plot-ready tables. Floats are written in a fixed round-trippable format
//! so identical runs give identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::format_f64;
use crate::train::TrainTrajectory;
use crate::{Error, Result};

pub const RUN_HEADER: [&str; 10] = [
    "step",
    "loss_1bit",
    "loss_fp",
    "lambda_min",
    "lambda_max",
    "gram_drift",
    "max_train_diff",
    "max_test_diff",
    "flip_fraction",
    "weight_drift",
];

/// One row per probed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: usize,
    pub loss_1bit: f64,
    pub loss_fp: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub gram_drift: f64,
    pub max_train_diff: f64,
    pub max_test_diff: f64,
    pub flip_fraction: f64,
    pub weight_drift: f64,
}

impl RunRecord {
    fn values(&self) -> [f64; 9] {
        [
            self.loss_1bit,
            self.loss_fp,
            self.lambda_min,
            self.lambda_max,
            self.gram_drift,
            self.max_train_diff,
            self.max_test_diff,
            self.flip_fraction,
            self.weight_drift,
        ]
    }
}

/// Joins step records with the kernel probes taken at the same steps.
pub fn run_records(traj: &TrainTrajectory) -> Vec<RunRecord> {
    traj.probes
        .iter()
        .filter_map(|p| {
            let r = traj.record_at(p.step)?;
            Some(RunRecord {
                step: p.step,
                loss_1bit: r.loss_1bit,
                loss_fp: r.loss_fp,
                lambda_min: p.lambda_min,
                lambda_max: p.lambda_max,
                gram_drift: p.gram_drift,
                max_train_diff: r.max_train_diff,
                max_test_diff: r.max_test_diff,
                flip_fraction: r.flip_fraction,
                weight_drift: r.weight_drift,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

pub fn emit_report(records: &[RunRecord], format: Format, path: &Path) -> Result<()> {
    match format {
        Format::Csv => {
            let mut out = String::new();
            write_run_csv(records, &mut out);
            std::fs::write(path, out)?;
        }
        Format::Json => {
            let w = BufWriter::new(File::create(path)?);
            serde_json::to_writer_pretty(w, records)?;
        }
    }
    Ok(())
}

pub fn write_run_csv(records: &[RunRecord], out: &mut String) {
    out.push_str(&RUN_HEADER.join(","));
    out.push('\n');
    for r in records {
        out.push_str(&r.step.to_string());
        for v in r.values() {
            out.push(',');
            out.push_str(&format_f64(v));
        }
        out.push('\n');
    }
}

pub fn read_report(path: &Path, format: Format) -> Result<Vec<RunRecord>> {
    match format {
        Format::Json => Ok(serde_json::from_reader(File::open(path)?)?),
        Format::Csv => {
            let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
            let header = reader.headers().map_err(|e| csv_error(path, e))?;
            if header.iter().ne(RUN_HEADER) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: "unexpected run header".into(),
                });
            }
            reader
                .deserialize()
                .map(|row| row.map_err(|e| csv_error(path, e)))
                .collect()
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// A small CSV builder: a fixed header, rows of preformatted cells.
#[derive(Debug, Clone, Default)]
pub struct Table {
    text: String,
    columns: usize,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self {
            text,
            columns: header.len(),
        }
    }

    pub fn row<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut n = 0;
        for (k, c) in cells.into_iter().enumerate() {
            if k > 0 {
                self.text.push(',');
            }
            self.text.push_str(c.as_ref());
            n += 1;
        }
        debug_assert_eq!(n, self.columns);
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(self.text.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

pub fn num(v: f64) -> String {
    format_f64(v)
}
