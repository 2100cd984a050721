//! In-domain data selection by cross-entropy difference (Moore-Lewis).
//!
//! A sentence's score is `H_in(s) - H_general(s)`: negative when the
//! in-domain model finds it easier than the general one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ngram_lm::{tokenize, NGramModel};

pub const DEFAULT_THRESHOLD: f64 = 0.01;

/// Which side of the threshold is retained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Keep `score < -threshold`: sentences that look in-domain.
    #[default]
    InDomain,
    /// Keep `score > threshold`, the inequality exactly as written in the
    /// original system description.
    Literal,
}

impl Orientation {
    pub fn keeps(self, score: f64, threshold: f64) -> bool {
        match self {
            Orientation::InDomain => score < -threshold,
            Orientation::Literal => score > threshold,
        }
    }
}

pub struct SelectionConfig<'a> {
    pub threshold: f64,
    pub orientation: Orientation,
    pub in_domain_lm: &'a NGramModel,
    pub general_lm: &'a NGramModel,
}

impl<'a> SelectionConfig<'a> {
    pub fn new(in_domain_lm: &'a NGramModel, general_lm: &'a NGramModel) -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            orientation: Orientation::InDomain,
            in_domain_lm,
            general_lm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // +inf is allowed: it selects nothing.
        if self.threshold.is_nan() || self.threshold == f64::NEG_INFINITY {
            return Err(Error::config(format!(
                "selection threshold must be a number, got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn keeps(&self, sentence: &[&str]) -> bool {
        self.orientation
            .keeps(ml_score(self, sentence), self.threshold)
    }
}

pub fn ml_score(cfg: &SelectionConfig<'_>, sentence: &[&str]) -> f64 {
    cfg.in_domain_lm.cross_entropy(sentence) - cfg.general_lm.cross_entropy(sentence)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SelectionStats {
    pub selected: usize,
    pub total: usize,
}

impl SelectionStats {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.selected as f64 / self.total as f64
        }
    }

    /// `selected=<n> total=<m> frac=<f>` log line.
    pub fn log_line(&self) -> String {
        format!(
            "selected={} total={} frac={:.6}",
            self.selected,
            self.total,
            self.fraction()
        )
    }
}

/// Order-preserving selection over whitespace-tokenized lines.
pub fn select<S: AsRef<str> + Sync>(
    cfg: &SelectionConfig<'_>,
    corpus: &[S],
) -> Result<(Vec<usize>, SelectionStats)> {
    cfg.validate()?;
    let keep = crate::par_map(corpus, |line| cfg.keeps(&tokenize(line.as_ref())));
    let selected: Vec<usize> = keep
        .iter()
        .enumerate()
        .filter_map(|(i, &k)| k.then_some(i))
        .collect();
    let stats = SelectionStats {
        selected: selected.len(),
        total: corpus.len(),
    };
    Ok((selected, stats))
}
