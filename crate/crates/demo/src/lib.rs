//! WebAssembly bindings for the browser demo. Every export takes a small
//! ratings grid as text (one user per line, `-` for a missing rating) and
//! returns JSON, or throws a string on bad input.

use cfkit::factorization::{train_mf_observed, TrainConfig};
use cfkit::fixtures::from_cells;
use cfkit::neighborhood::predict_user_based;
use cfkit::ratings::{impute_item_means, RatingsMatrix};
use cfkit::similarity::{build_similarity_model, Metric, Orientation};
use cfkit::svd::jacobi_svd;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_SIDE: usize = 40;

/// Parse the grid. Cells are whitespace separated; `-`, `?` and `.` mark a
/// missing rating.
pub fn parse_grid(text: &str) -> Result<RatingsMatrix, String> {
    let rows: Vec<Vec<&str>> = text
        .lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>())
        .filter(|r| !r.is_empty())
        .collect();
    let width = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || width == 0 {
        return Err("the grid is empty".into());
    }
    if rows.len() > MAX_SIDE || width > MAX_SIDE {
        return Err(format!("keep the grid within {MAX_SIDE} × {MAX_SIDE}"));
    }
    let mut cells = Vec::new();
    for (u, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(format!("row {} has {} cells, expected {width}", u + 1, row.len()));
        }
        for (i, cell) in row.iter().enumerate() {
            if matches!(*cell, "-" | "?" | ".") {
                continue;
            }
            let r: f64 = cell
                .parse()
                .map_err(|_| format!("row {}, column {}: {cell:?} is not a rating", u + 1, i + 1))?;
            if !(1.0..=5.0).contains(&r) {
                return Err(format!("row {}, column {}: rating {r} outside 1..5", u + 1, i + 1));
            }
            cells.push((u, i, r));
        }
    }
    if cells.is_empty() {
        return Err("the grid has no ratings".into());
    }
    Ok(from_cells(rows.len(), width, &cells))
}

fn finite(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

/// User-user weights for every pair, the target user's neighbors and the
/// user-based prediction for `(user, item)` (1-based).
pub fn similarity_view(grid: &str, metric: &str, k: usize, user: usize, item: usize) -> Result<String, String> {
    let m = parse_grid(grid)?;
    let metric: Metric = metric.parse().map_err(|e: cfkit::Error| e.to_string())?;
    if user == 0 || user > m.n_users() || item == 0 || item > m.n_items() {
        return Err(format!("user must be in 1..={} and item in 1..={}", m.n_users(), m.n_items()));
    }
    let (u, i) = (user - 1, item - 1);
    let k = if k == 0 { usize::MAX } else { k };
    let sims = build_similarity_model(&m, Orientation::UserUser, metric, k, metric.default_min_overlap())
        .map_err(|e| e.to_string())?;
    let weights: Vec<Vec<Value>> = (0..m.n_users())
        .map(|a| {
            (0..m.n_users())
                .map(|b| if a == b { Value::Null } else { sims.weight(a, b).map_or(Value::Null, finite) })
                .collect()
        })
        .collect();
    let neighbors: Vec<Value> = sims
        .neighbors(u)
        .iter()
        .map(|&(v, w)| json!({ "user": v + 1, "weight": w, "rated_item": m.has_rated(v, i) }))
        .collect();
    let p = predict_user_based(&m, &sims, u, i).map_err(|e| e.to_string())?;
    Ok(json!({
        "weights": weights,
        "neighbors": neighbors,
        "prediction": p.score,
        "raw": p.raw,
        "support": p.support,
        "fallback": p.fallback_used,
        "already_rated": m.rating(u, i),
    })
    .to_string())
}

/// Singular values of the item-mean imputed grid and the Frobenius error
/// of each rank-k truncation.
pub fn svd_spectrum(grid: &str) -> Result<String, String> {
    let m = parse_grid(grid)?;
    let dense = impute_item_means(&m);
    let svd = jacobi_svd(&dense);
    let errors: Vec<f64> = (1..=svd.s.len())
        .map(|k| svd.s[k..].iter().map(|s| s * s).sum::<f64>().sqrt())
        .collect();
    Ok(json!({ "singular_values": svd.s, "truncation_error": errors }).to_string())
}

/// Per-epoch training MAE and RMSE of SGD matrix factorization.
pub fn mf_curve(grid: &str, k: usize, epochs: usize, alpha: f64, lambda: f64, normalize: bool, seed: u32) -> Result<String, String> {
    let m = parse_grid(grid)?;
    if epochs > 5000 {
        return Err("at most 5000 epochs".into());
    }
    let cfg = TrainConfig {
        k,
        epochs,
        alpha,
        lambda_p: lambda,
        lambda_q: lambda,
        seed: seed as u64,
        ..TrainConfig::default()
    };
    let mut mae = Vec::with_capacity(epochs);
    let mut rmse = Vec::with_capacity(epochs);
    let model = train_mf_observed(&m, &cfg, normalize, &mut |_, model| {
        let (mut abs, mut sq) = (0.0, 0.0);
        for (u, i, r) in m.triples() {
            let e = model.predict_raw(u, i) - r;
            abs += e.abs();
            sq += e * e;
        }
        let n = m.nnz() as f64;
        mae.push(abs / n);
        rmse.push((sq / n).sqrt());
    })
    .map_err(|e| e.to_string())?;
    let filled: Vec<Vec<f64>> = (0..m.n_users())
        .map(|u| (0..m.n_items()).map(|i| model.predict_raw(u, i).clamp(1.0, 5.0)).collect())
        .collect();
    Ok(json!({ "mae": mae, "rmse": rmse, "predictions": filled }).to_string())
}

#[wasm_bindgen(js_name = similarityView)]
pub fn similarity_view_js(grid: &str, metric: &str, k: usize, user: usize, item: usize) -> Result<String, JsValue> {
    similarity_view(grid, metric, k, user, item).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = svdSpectrum)]
pub fn svd_spectrum_js(grid: &str) -> Result<String, JsValue> {
    svd_spectrum(grid).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = mfCurve)]
pub fn mf_curve_js(
    grid: &str,
    k: usize,
    epochs: usize,
    alpha: f64,
    lambda: f64,
    normalize: bool,
    seed: u32,
) -> Result<String, JsValue> {
    mf_curve(grid, k, epochs, alpha, lambda, normalize, seed).map_err(|e| JsValue::from_str(&e))
}
