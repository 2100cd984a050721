//! Browser bindings for the `www/` demo page.
//!
//! Each export takes plain strings and numbers and returns a JSON string.
//! The `*_json` functions hold the logic so they can be tested natively.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use mtforge::metrics::Tokenize;
use mtforge::moe_router::{self, RouterConfig};
use mtforge::rerank::{self, DevSet, NBestList, RerankWeights};
use mtforge::subword;

fn js_err(e: String) -> JsValue {
    JsValue::from_str(&e)
}

/// `sizes` is a JSON object from language to line count.
pub fn temperature_json(sizes: &str, temperature: f64) -> Result<String, String> {
    let sizes: BTreeMap<String, u64> =
        serde_json::from_str(sizes).map_err(|e| format!("sizes: {e}"))?;
    let probs = subword::temperature_probs(&sizes, temperature).map_err(|e| e.to_string())?;
    let total: u64 = sizes.values().sum();
    let rows: Vec<Value> = probs
        .iter()
        .map(|(lang, p)| {
            json!({
                "lang": lang,
                "lines": sizes[lang],
                "share": sizes[lang] as f64 / total as f64,
                "prob": p,
            })
        })
        .collect();
    Ok(Value::Array(rows).to_string())
}

fn parse_matrix(text: &str) -> Result<Array2<f64>, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(['\t', ',', ' '])
            .filter(|s| !s.is_empty())
            .map(|v| v.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1)))
            .collect::<Result<Vec<f64>, String>>()?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return Err("logits must be a non-empty rectangular matrix".into());
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| e.to_string())
}

/// Routes one row of gate logits per token.
pub fn route_json(logits: &str, capacity_factor: f64) -> Result<String, String> {
    let logits = parse_matrix(logits)?;
    let mut cfg = RouterConfig::new(logits.ncols());
    cfg.capacity_factor = capacity_factor;
    let r = moe_router::route(logits.view(), &cfg).map_err(|e| e.to_string())?;
    let tokens: Vec<Value> = r
        .assignments
        .iter()
        .enumerate()
        .map(|(t, a)| {
            json!({
                "top1": r.top1[t],
                "top2": r.top2[t],
                "dropped": r.dropped[t],
                "assign": a.iter().map(|x| json!([x.expert, x.weight])).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(json!({
        "capacity": r.capacity,
        "load": r.expert_load,
        "aux_loss": r.aux_loss,
        "tokens": tokens,
    })
    .to_string())
}

/// Reranks an n-best list under the given weights and scores the result.
pub fn rerank_json(
    nbest: &str,
    refs: &str,
    lambda1: f64,
    lambda2: f64,
    length_penalty: f64,
) -> Result<String, String> {
    let list = NBestList::parse(nbest).map_err(|e| e.to_string())?;
    let refs: Vec<&str> = refs.lines().collect();
    let dev = DevSet::new(&list, &refs, Tokenize::Intl).map_err(|e| e.to_string())?;
    let w = RerankWeights::new(lambda1, lambda2, length_penalty);
    Ok(json!({
        "bleu": dev.bleu(&list, &w),
        "baseline_bleu": dev.bleu(&list, &RerankWeights::default()),
        "best": rerank::rerank(&list, &w),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn temperature(sizes: &str, temperature: f64) -> Result<String, JsValue> {
    temperature_json(sizes, temperature).map_err(js_err)
}

#[wasm_bindgen]
pub fn route(logits: &str, capacity_factor: f64) -> Result<String, JsValue> {
    route_json(logits, capacity_factor).map_err(js_err)
}

#[wasm_bindgen]
pub fn rerank_nbest(
    nbest: &str,
    refs: &str,
    lambda1: f64,
    lambda2: f64,
    length_penalty: f64,
) -> Result<String, JsValue> {
    rerank_json(nbest, refs, lambda1, lambda2, length_penalty).map_err(js_err)
}
