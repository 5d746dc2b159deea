//! Browser bindings. Every export takes plain numbers or strings and
//! returns a JSON string, so the page needs no glue beyond `JSON.parse`.

use bitkernel::data::{self, GenerationMode, TargetFunction};
use bitkernel::lab;
use bitkernel::{binq, kernel, net};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn to_js(result: Result<Value, String>) -> Result<String, JsError> {
    result.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

/// Quantizes a comma- or space-separated weight vector and dots it with `x`.
pub fn quantize_report(weights: &str, x: &str) -> Result<Value, String> {
    let parse = |s: &str| -> Result<Vec<f64>, String> {
        s.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
            .collect()
    };
    let w = parse(weights)?;
    let x = parse(x)?;
    let q = binq::quantize(&w).map_err(|e| e.to_string())?;
    let mut out = json!({
        "mean": q.stats.mean,
        "scale": q.stats.scale,
        "bits": q.bits.unpack(),
        "reconstruction": q.reconstruct(),
        "error": binq::quant_error_vector(&w).map_err(|e| e.to_string())?,
    });
    if !x.is_empty() {
        let exact: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        out["exact_dot"] = json!(exact);
        out["binary_dot"] = json!(binq::binary_dot(&q.bits, &x).map_err(|e| e.to_string())?);
        out["dequantized_dot"] = json!(binq::dequantize_dot(&q, &x).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

/// Trains both twins on a 1-D expression in `x` (empty for the spiky preset).
pub fn train_1d_report(expression: &str, width: usize, steps: usize, eta: f64, seed: u64) -> Result<Value, String> {
    let mut cfg = json!({
        "command": "compare-1d",
        "widths": [width],
        "steps": steps,
        "seeds": [seed],
        "n_test": 50,
        "grid": 200,
    });
    if eta > 0.0 {
        cfg["eta"] = json!(eta);
    }
    if !expression.trim().is_empty() {
        cfg["expression"] = json!(expression.trim());
    }
    let cfg = lab::parse_config(&cfg.to_string()).map_err(|e| e.to_string())?;
    let cmp = lab::compare_1d(&cfg).map_err(|e| e.to_string())?;
    let grid = &cmp.rows[..cmp.grid];
    let column = |k: usize| grid.iter().map(|r| r[k]).collect::<Vec<f64>>();
    Ok(json!({
        "x": column(0),
        "y_true": column(1),
        "y_1bit": column(2),
        "y_fp": column(3),
        "eta": cmp.eta,
        "final_loss_1bit": cmp.final_loss_1bit,
        "final_loss_fp": cmp.final_loss_fp,
        "max_test_gap": cmp.max_test_gap(),
    }))
}

/// Extreme eigenvalues of the initial 1-bit and full-precision kernels on
/// `n` unit-norm `f3` inputs, for each width.
pub fn spectrum_report(widths: &[usize], n: usize, seed: u64) -> Result<Value, String> {
    let ds =
        data::generate_dataset(&TargetFunction::F3, n, seed, GenerationMode::UnitNorm).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for &m in widths {
        let state = net::init_network(ds.d(), m, 1.0, lab::cell_seed(seed, m)).map_err(|e| e.to_string())?;
        let mut entry = json!({ "width": m });
        for (name, mode) in [("one_bit", net::Mode::OneBit), ("fp", net::Mode::FullPrecision)] {
            let g = kernel::gram_matrix(&ds.x, &state, mode).map_err(|e| e.to_string())?;
            let (lo, hi) = kernel::min_max_eigenvalues(&g).map_err(|e| e.to_string())?;
            entry[name] = json!({ "lambda_min": lo, "lambda_max": hi });
        }
        rows.push(entry);
    }
    Ok(Value::Array(rows))
}

#[wasm_bindgen]
pub fn quantize(weights: &str, x: &str) -> Result<String, JsError> {
    to_js(quantize_report(weights, x))
}

#[wasm_bindgen]
pub fn train_1d(expression: &str, width: usize, steps: usize, eta: f64, seed: u32) -> Result<String, JsError> {
    to_js(train_1d_report(expression, width, steps, eta, u64::from(seed)))
}

#[wasm_bindgen]
pub fn kernel_spectrum(widths: &[u32], n: usize, seed: u32) -> Result<String, JsError> {
    let widths: Vec<usize> = widths.iter().map(|&w| w as usize).collect();
    to_js(spectrum_report(&widths, n, u64::from(seed)))
}
