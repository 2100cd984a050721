//! Top-2 sparsely gated mixture-of-experts routing with per-expert capacity,
//! token dropping and the auxiliary load-balancing loss.
//!
//! For `T` tokens and `E` experts each expert accepts at most
//! `C = ceil(capacity_factor * T / E)` assignments. Placement runs in two
//! passes: first every token's top-1 expert in token order, then the top-2
//! experts, serving tokens whose top-1 choice overflowed before the others.
//! A token that loses both choices is dropped.
//!
//! The balancing loss is `l_aux = E * Σ_e f_e * mean_t(gates[t, e])`, where
//! `f_e` is the fraction of tokens whose top-1 expert is `e`. `f_e` is
//! piecewise constant, so gradients flow only through the gate means.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOP_K: usize = 2;
pub const DEFAULT_CAPACITY_FACTOR: f64 = 2.0;
pub const DEFAULT_GATE_LOSS_WEIGHT: f64 = 0.01;
/// MoE layers replace the feed-forward block of every second layer.
pub const DEFAULT_LAYER_INTERVAL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterConfig {
    pub num_experts: usize,
    pub top_k: usize,
    pub capacity_factor: f64,
    pub gate_loss_weight: f64,
    pub layer_interval: usize,
}

impl RouterConfig {
    pub fn new(num_experts: usize) -> Self {
        Self {
            num_experts,
            top_k: TOP_K,
            capacity_factor: DEFAULT_CAPACITY_FACTOR,
            gate_loss_weight: DEFAULT_GATE_LOSS_WEIGHT,
            layer_interval: DEFAULT_LAYER_INTERVAL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_experts < 2 {
            return Err(Error::config("num_experts must be >= 2"));
        }
        if self.top_k != TOP_K {
            return Err(Error::config(format!(
                "only top-2 gating is supported, got top_k = {}",
                self.top_k
            )));
        }
        if !(self.capacity_factor > 0.0 && self.capacity_factor.is_finite()) {
            return Err(Error::config("capacity_factor must be > 0"));
        }
        if !(self.gate_loss_weight >= 0.0 && self.gate_loss_weight.is_finite()) {
            return Err(Error::config("gate_loss_weight must be >= 0"));
        }
        if self.layer_interval < 1 {
            return Err(Error::config("layer_interval must be >= 1"));
        }
        Ok(())
    }

    /// Per-expert capacity for a batch of `tokens`.
    pub fn capacity(&self, tokens: usize) -> usize {
        (self.capacity_factor * tokens as f64 / self.num_experts as f64).ceil() as usize
    }

    /// Whether transformer layer `layer` (0-based) carries an MoE block.
    pub fn is_moe_layer(&self, layer: usize) -> bool {
        layer % self.layer_interval == self.layer_interval - 1
    }

    /// What the balancing loss adds to the training objective.
    pub fn weighted_loss(&self, aux_loss: f64) -> f64 {
        self.gate_loss_weight * aux_loss
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub expert: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteResult {
    pub gates: Array2<f64>,
    pub top1: Vec<usize>,
    pub top2: Vec<usize>,
    /// Surviving assignments per token, top-1 first, weights summing to 1.
    pub assignments: Vec<Vec<Assignment>>,
    pub dropped: Vec<bool>,
    pub expert_load: Vec<usize>,
    pub capacity: usize,
    pub aux_loss: f64,
}

pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Best and second-best experts; ties resolve to the lower expert index.
fn top_two(row: ndarray::ArrayView1<'_, f64>) -> (usize, usize) {
    let mut first = 0;
    for (e, &g) in row.iter().enumerate() {
        if g > row[first] {
            first = e;
        }
    }
    let mut second = usize::MAX;
    for (e, &g) in row.iter().enumerate() {
        if e != first && (second == usize::MAX || g > row[second]) {
            second = e;
        }
    }
    (first, second)
}

fn check_logits(logits: ArrayView2<'_, f64>, experts: Option<usize>) -> Result<()> {
    if logits.nrows() < 1 {
        return Err(Error::invalid("routing needs at least one token"));
    }
    if let Some(e) = experts {
        if logits.ncols() != e {
            return Err(Error::invalid(format!(
                "logits have {} columns for {e} experts",
                logits.ncols()
            )));
        }
    }
    if logits.ncols() < 2 {
        return Err(Error::invalid("routing needs at least two experts"));
    }
    if let Some(((t, e), _)) = logits.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite logit at token {t}, expert {e}"
        )));
    }
    Ok(())
}

pub fn route(logits: ArrayView2<'_, f64>, cfg: &RouterConfig) -> Result<RouteResult> {
    cfg.validate()?;
    check_logits(logits, Some(cfg.num_experts))?;
    let tokens = logits.nrows();
    let gates = softmax_rows(logits);
    let (top1, top2): (Vec<usize>, Vec<usize>) = gates.rows().into_iter().map(top_two).unzip();
    let capacity = cfg.capacity(tokens);

    let mut load = vec![0usize; cfg.num_experts];
    let mut keep_first = vec![false; tokens];
    let mut keep_second = vec![false; tokens];
    for t in 0..tokens {
        if load[top1[t]] < capacity {
            load[top1[t]] += 1;
            keep_first[t] = true;
        }
    }
    let second_order = (0..tokens)
        .filter(|&t| !keep_first[t])
        .chain((0..tokens).filter(|&t| keep_first[t]));
    for t in second_order {
        if load[top2[t]] < capacity {
            load[top2[t]] += 1;
            keep_second[t] = true;
        }
    }

    let mut assignments = Vec::with_capacity(tokens);
    let mut dropped = Vec::with_capacity(tokens);
    for t in 0..tokens {
        let mut kept = Vec::with_capacity(2);
        if keep_first[t] {
            kept.push((top1[t], gates[[t, top1[t]]]));
        }
        if keep_second[t] {
            kept.push((top2[t], gates[[t, top2[t]]]));
        }
        let total: f64 = kept.iter().map(|(_, g)| g).sum();
        dropped.push(kept.is_empty());
        assignments.push(
            kept.into_iter()
                .map(|(expert, g)| Assignment {
                    expert,
                    weight: g / total,
                })
                .collect(),
        );
    }

    let aux_loss = gate_loss(gates.view(), &top1)?;
    Ok(RouteResult {
        gates,
        top1,
        top2,
        assignments,
        dropped,
        expert_load: load,
        capacity,
        aux_loss,
    })
}

/// Fraction of tokens whose top-1 expert is each `e`.
fn top1_fractions(top1: &[usize], experts: usize) -> Vec<f64> {
    let mut f = vec![0.0; experts];
    for &e in top1 {
        f[e] += 1.0;
    }
    let n = top1.len() as f64;
    f.iter_mut().for_each(|x| *x /= n);
    f
}

pub fn gate_loss(gates: ArrayView2<'_, f64>, top1: &[usize]) -> Result<f64> {
    let (tokens, experts) = gates.dim();
    if tokens == 0 || top1.len() != tokens {
        return Err(Error::invalid(format!(
            "{} top-1 entries for {tokens} tokens",
            top1.len()
        )));
    }
    if let Some(&e) = top1.iter().find(|&&e| e >= experts) {
        return Err(Error::invalid(format!("top-1 expert {e} out of range")));
    }
    let f = top1_fractions(top1, experts);
    let mean_gates = gates.mean_axis(Axis(0)).expect("non-empty");
    Ok(experts as f64
        * f.iter()
            .zip(mean_gates.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>())
}

/// Analytic `∂l_aux/∂logits` with the top-1 fractions held fixed:
/// `(E/T) g_tj (f_j - Σ_e f_e g_te)`.
pub fn gate_loss_grad(logits: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_logits(logits, None)?;
    let (tokens, experts) = logits.dim();
    let gates = softmax_rows(logits);
    let top1: Vec<usize> = gates.rows().into_iter().map(|r| top_two(r).0).collect();
    let f = top1_fractions(&top1, experts);
    let scale = experts as f64 / tokens as f64;
    let mut grad = Array2::zeros((tokens, experts));
    for t in 0..tokens {
        let row = gates.row(t);
        let mixed: f64 = row.iter().zip(&f).map(|(g, fe)| g * fe).sum();
        for j in 0..experts {
            grad[[t, j]] = scale * row[j] * (f[j] - mixed);
        }
    }
    Ok(grad)
}

/// Top-1 expert per token for the given logits (ties to the lower index).
pub fn top1_experts(logits: ArrayView2<'_, f64>) -> Vec<usize> {
    logits.rows().into_iter().map(|r| top_two(r).0).collect()
}
