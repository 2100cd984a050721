//! Corpus-level BLEU (single reference, 4-gram, no smoothing) and the two
//! tokenizers it is computed over.

use std::collections::HashMap;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenize {
    /// Split on whitespace after isolating every Unicode punctuation mark.
    #[default]
    Intl,
    /// One token per non-whitespace character, for zh/ja.
    Char,
}

impl FromStr for Tokenize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intl" => Ok(Tokenize::Intl),
            "char" => Ok(Tokenize::Char),
            other => Err(Error::config(format!(
                "unknown tokenizer `{other}` (expected intl or char)"
            ))),
        }
    }
}

impl Tokenize {
    pub fn name(self) -> &'static str {
        match self {
            Tokenize::Intl => "intl",
            Tokenize::Char => "char",
        }
    }
}

fn is_punct(c: char) -> bool {
    c.general_category_group() == GeneralCategoryGroup::Punctuation
}

pub fn tokenize(text: &str, scheme: Tokenize) -> Vec<String> {
    match scheme {
        Tokenize::Char => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect(),
        Tokenize::Intl => {
            let mut spaced = String::with_capacity(text.len() + 8);
            for c in text.chars() {
                if is_punct(c) {
                    spaced.push(' ');
                    spaced.push(c);
                    spaced.push(' ');
                } else {
                    spaced.push(c);
                }
            }
            spaced.split_whitespace().map(str::to_string).collect()
        }
    }
}

/// Sufficient statistics of one segment; additive across segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl Add for BleuStats {
    type Output = BleuStats;

    fn add(mut self, rhs: BleuStats) -> BleuStats {
        self += rhs;
        self
    }
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, rhs: BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += rhs.matches[n];
            self.totals[n] += rhs.totals[n];
        }
        self.hyp_len += rhs.hyp_len;
        self.ref_len += rhs.ref_len;
    }
}

impl std::iter::Sum for BleuStats {
    fn sum<I: Iterator<Item = BleuStats>>(iter: I) -> BleuStats {
        iter.fold(BleuStats::default(), Add::add)
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts
            .entry(w.iter().map(AsRef::as_ref).collect())
            .or_default() += 1;
    }
    counts
}

/// Clipped n-gram matches of `hyp` against a single reference.
pub fn bleu_stats<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], reference: &[R]) -> BleuStats {
    let mut stats = BleuStats {
        hyp_len: hyp.len() as u64,
        ref_len: reference.len() as u64,
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let ref_counts = ngram_counts(reference, n);
        let hyp_counts = ngram_counts(hyp, n);
        stats.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
        stats.matches[n - 1] = hyp_counts
            .iter()
            .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
            .sum();
    }
    stats
}

/// Precision per order, `0` where the hypothesis has no n-grams.
pub fn precisions(stats: &BleuStats) -> [f64; MAX_ORDER] {
    std::array::from_fn(|n| {
        if stats.totals[n] > 0 {
            stats.matches[n] as f64 / stats.totals[n] as f64
        } else {
            0.0
        }
    })
}

pub fn brevity_penalty(hyp_len: u64, ref_len: u64) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// BLEU of already-summed statistics, in `[0, 100]`.
pub fn bleu_from_stats(stats: &BleuStats) -> f64 {
    if stats.hyp_len == 0 {
        return 0.0;
    }
    let p = precisions(stats);
    if p.contains(&0.0) {
        return 0.0;
    }
    let log_mean = p.iter().map(|x| x.ln()).sum::<f64>() / MAX_ORDER as f64;
    100.0 * brevity_penalty(stats.hyp_len, stats.ref_len) * log_mean.exp()
}

pub fn corpus_bleu(stats: &[BleuStats]) -> f64 {
    bleu_from_stats(&stats.iter().copied().sum())
}

/// Tokenizes and scores parallel hypothesis / reference lines.
pub fn corpus_bleu_text<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    scheme: Tokenize,
) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let stats: Vec<BleuStats> = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| bleu_stats(&tokenize(h.as_ref(), scheme), &tokenize(r.as_ref(), scheme)))
        .collect();
    Ok(corpus_bleu(&stats))
}

/// `BLEU = <value>` with two decimals.
pub fn format_bleu(score: f64) -> String {
    format!("BLEU = {score:.2}")
}
