//! Dataset CSV (`x0,...,x{d-1},y`) plus a JSON metadata sidecar next to it
//! (`train.csv` → `train.json`). Values are written with 17 significant
//! digits so a reload reproduces every bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Dataset, DatasetMeta};
use crate::{Error, Matrix, Result};

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn persist_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let d = ds.d();
    let mut out = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..d).map(|k| format!("x{k}")).chain(["y".to_string()]).collect();
    writeln!(out, "{}", header.join(","))?;
    for (row, y) in ds.x.iter_rows().zip(&ds.y) {
        let fields: Vec<String> = row.iter().chain([y]).map(|&v| format_f64(v)).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    let meta = serde_json::to_string_pretty(&ds.meta)?;
    std::fs::write(sidecar_path(path), meta + "\n")?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let mut records = reader.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "empty file, expected header x0,...,y".into())),
    };
    let cols = header.len();
    let expected: Vec<String> = (0..cols.saturating_sub(1))
        .map(|k| format!("x{k}"))
        .chain(["y".to_string()])
        .collect();
    if cols < 2 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(
            1,
            format!(
                "header mismatch: expected `{}`, found `{}`",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let d = cols - 1;

    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != cols {
            return Err(parse_err(
                line,
                format!("row has {} columns, header has {cols}", rec.len()),
            ));
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("column {k}: `{field}` is not a number")))?;
            if k < d {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }

    let side = sidecar_path(path);
    let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(&side)?).map_err(|e| Error::Parse {
        path: side.clone(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let n = ys.len();
    Dataset::from_parts(Matrix::from_vec(n, d, xs)?, ys, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GenerationMode, TargetFunction};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (fun, mode) in [
            (TargetFunction::F6, GenerationMode::Box),
            (TargetFunction::F2, GenerationMode::UnitNorm),
        ] {
            let ds = generate_dataset(&fun, 40, 9, mode).unwrap();
            let path = dir.path().join(format!("{}.csv", fun.id()));
            persist_dataset(&ds, &path).unwrap();
            let back = load_dataset(&path).unwrap();
            assert_eq!(back, ds);
            assert!(sidecar_path(&path).exists());
        }
    }

    fn write_pair(dir: &Path, csv: &str) -> PathBuf {
        let ds = generate_dataset(&TargetFunction::F3, 2, 1, GenerationMode::Box).unwrap();
        let path = dir.join("data.csv");
        persist_dataset(&ds, &path).unwrap();
        std::fs::write(&path, csv).unwrap();
        path
    }

    #[test]
    fn header_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_pair(dir.path(), "a,b,c,y\n1,2,3,4\n");
        match load_dataset(&path) {
            Err(Error::Parse { line: 1, message, .. }) => assert!(message.contains("header")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_row_names_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_pair(dir.path(), "x0,x1,x2,y\n1,2,3,4\n5,6\n");
        match load_dataset(&path) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("2 columns"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_pair(dir.path(), "x0,x1,x2,y\n1,2,3,4\n1,zz,3,4\n");
        assert!(matches!(load_dataset(&path), Err(Error::Parse { line: 3, .. })));
    }
}
