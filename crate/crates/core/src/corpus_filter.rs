//! Bitext and monolingual cleaning: language identification, punctuation
//! normalization and length / length-ratio rules.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_LEN: usize = 250;
pub const DEFAULT_MAX_RATIO: f64 = 3.0;
pub const DEFAULT_LID_ALPHA: f64 = 0.1;
/// Character n-gram orders used by the language identifier.
pub const LID_MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub text: String,
    pub lang: String,
    pub origin: String,
    pub line_no: u64,
}

impl SentenceRecord {
    pub fn new(
        text: impl Into<String>,
        lang: impl Into<String>,
        origin: impl Into<String>,
        line_no: u64,
    ) -> Result<Self> {
        let text = text.into();
        if text.contains(['\n', '\r']) {
            return Err(Error::RejectedRecord(format!(
                "line {line_no}: text contains a line break"
            )));
        }
        Ok(Self {
            text,
            lang: lang.into(),
            origin: origin.into(),
            line_no,
        })
    }

    /// Number of whitespace-delimited tokens.
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelRecord {
    pub src: SentenceRecord,
    pub tgt: SentenceRecord,
    pub score: Option<f64>,
}

impl ParallelRecord {
    pub fn new(src: SentenceRecord, tgt: SentenceRecord, score: Option<f64>) -> Result<Self> {
        if src.lang == tgt.lang {
            return Err(Error::RejectedRecord(format!(
                "line {}: source and target share language `{}`",
                src.line_no, src.lang
            )));
        }
        if let Some(s) = score {
            if !s.is_finite() {
                return Err(Error::RejectedRecord(format!(
                    "line {}: non-finite score",
                    src.line_no
                )));
            }
        }
        Ok(Self { src, tgt, score })
    }

    /// Parses one `src TAB tgt [TAB score]` line.
    pub fn from_tsv(
        line: &str,
        line_no: u64,
        src_lang: &str,
        tgt_lang: &str,
        origin: &str,
    ) -> Result<Self> {
        let parse_err = |reason: String| Error::Parse {
            what: "parallel TSV",
            line: line_no as usize + 1,
            reason,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let score = match fields.len() {
            2 => None,
            3 => Some(
                fields[2]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(e.to_string()))?,
            ),
            n => return Err(parse_err(format!("expected 2 or 3 fields, found {n}"))),
        };
        let src = SentenceRecord::new(fields[0], src_lang, origin, line_no)?;
        let tgt = SentenceRecord::new(fields[1], tgt_lang, origin, line_no)?;
        Self::new(src, tgt, score)
    }

    pub fn to_tsv(&self) -> String {
        match self.score {
            Some(s) => format!("{}\t{}\t{}", self.src.text, self.tgt.text, s),
            None => format!("{}\t{}", self.src.text, self.tgt.text),
        }
    }
}

// ---------------------------------------------------------------------------
// Language identification

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidClass {
    pub log_prior: f64,
    /// Smoothed log-probabilities of n-grams seen in this class.
    pub log_probs: BTreeMap<String, f64>,
    /// Log-probability of an n-gram in the shared event space that this
    /// class never produced.
    pub log_unseen: f64,
}

/// Multinomial Naive Bayes over character 1..=4-grams with add-alpha smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidModel {
    pub max_order: usize,
    pub alpha: f64,
    pub vocab: BTreeSet<String>,
    pub classes: BTreeMap<String, LidClass>,
}

/// All character n-grams of `text` with orders 1..=`max_order`.
pub fn char_ngrams(text: &str, max_order: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    for n in 1..=max_order {
        for window in chars.windows(n) {
            out.push(window.iter().collect());
        }
    }
    out
}

pub fn lid_train(labeled: &[SentenceRecord], alpha: f64) -> Result<LidModel> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!("lid alpha must be > 0, got {alpha}")));
    }
    let mut docs: BTreeMap<&str, u64> = BTreeMap::new();
    let mut counts: BTreeMap<&str, HashMap<String, u64>> = BTreeMap::new();
    for rec in labeled {
        if rec.text.is_empty() {
            return Err(Error::RejectedRecord(format!(
                "line {}: empty training text for `{}`",
                rec.line_no, rec.lang
            )));
        }
        *docs.entry(&rec.lang).or_default() += 1;
        let table = counts.entry(&rec.lang).or_default();
        for g in char_ngrams(&rec.text, LID_MAX_ORDER) {
            *table.entry(g).or_default() += 1;
        }
    }
    if docs.len() < 2 {
        return Err(Error::config(format!(
            "language identification needs at least 2 classes, got {}",
            docs.len()
        )));
    }

    let vocab: BTreeSet<String> = counts.values().flat_map(|t| t.keys().cloned()).collect();
    let v = vocab.len() as f64;
    let n_docs: u64 = docs.values().sum();
    let classes = counts
        .into_iter()
        .map(|(lang, table)| {
            let total: u64 = table.values().sum();
            let denom = total as f64 + alpha * v;
            let log_probs = table
                .into_iter()
                .map(|(g, c)| (g, ((c as f64 + alpha) / denom).ln()))
                .collect();
            let class = LidClass {
                log_prior: (docs[lang] as f64 / n_docs as f64).ln(),
                log_probs,
                log_unseen: (alpha / denom).ln(),
            };
            (lang.to_string(), class)
        })
        .collect();

    Ok(LidModel {
        max_order: LID_MAX_ORDER,
        alpha,
        vocab,
        classes,
    })
}

impl LidModel {
    pub fn has_class(&self, lang: &str) -> bool {
        self.classes.contains_key(lang)
    }

    /// Unnormalized log posterior per class. N-grams outside the training
    /// event space carry no evidence and are skipped.
    pub fn log_scores(&self, text: &str) -> BTreeMap<&str, f64> {
        let grams: Vec<String> = char_ngrams(text, self.max_order)
            .into_iter()
            .filter(|g| self.vocab.contains(g))
            .collect();
        self.classes
            .iter()
            .map(|(lang, class)| {
                let ll: f64 = grams
                    .iter()
                    .map(|g| *class.log_probs.get(g).unwrap_or(&class.log_unseen))
                    .sum();
                (lang.as_str(), class.log_prior + ll)
            })
            .collect()
    }

    /// Argmax class; ties resolve to the lexicographically smallest tag.
    pub fn predict(&self, text: &str) -> &str {
        let mut best: Option<(&str, f64)> = None;
        for (lang, score) in self.log_scores(text) {
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((lang, score));
            }
        }
        best.map(|(l, _)| l)
            .expect("model has at least two classes")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: LidModel = serde_json::from_str(text)?;
        if model.classes.len() < 2 || !(model.alpha > 0.0) {
            return Err(Error::Format {
                what: "language-id model",
                reason: "needs >= 2 classes and alpha > 0".into(),
            });
        }
        Ok(model)
    }
}

/// Keeps records whose predicted language is `expected_lang`, in input order.
/// With `bypass` every record passes untouched (used where the identifier is
/// unreliable for a language).
pub fn lid_filter<'m, I>(
    records: I,
    model: &'m LidModel,
    expected_lang: &'m str,
    bypass: bool,
) -> Result<impl Iterator<Item = SentenceRecord> + 'm>
where
    I: IntoIterator<Item = SentenceRecord>,
    I::IntoIter: 'm,
{
    if !bypass && !model.has_class(expected_lang) {
        return Err(Error::config(format!(
            "language `{expected_lang}` is not a class of the language-id model"
        )));
    }
    Ok(records
        .into_iter()
        .filter(move |r| bypass || model.predict(&r.text) == expected_lang))
}

// ---------------------------------------------------------------------------
// Punctuation normalization

fn map_punct(c: char) -> char {
    match c {
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{00AB}' | '\u{00BB}' => '"',
        '\u{2018}' | '\u{2019}' => '\'',
        '\u{2013}' | '\u{2014}' | '\u{2212}' => '-',
        '\u{00A0}' | '\u{2009}' | '\u{202F}' => ' ',
        other => other,
    }
}

/// The fixed normalization table as `(from, to)` codepoint pairs.
pub const PUNCT_TABLE: &[(char, char)] = &[
    ('\u{201C}', '"'),
    ('\u{201D}', '"'),
    ('\u{201E}', '"'),
    ('\u{00AB}', '"'),
    ('\u{00BB}', '"'),
    ('\u{2018}', '\''),
    ('\u{2019}', '\''),
    ('\u{2013}', '-'),
    ('\u{2014}', '-'),
    ('\u{2212}', '-'),
    ('\u{00A0}', ' '),
    ('\u{2009}', ' '),
    ('\u{202F}', ' '),
];

/// Maps quote, dash and space variants to ASCII, collapses runs of spaces
/// and trims leading/trailing spaces. Idempotent.
pub fn normalize_punct(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars().map(map_punct) {
        if c == ' ' && (out.is_empty() || out.ends_with(' ')) {
            continue;
        }
        out.push(c);
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

// ---------------------------------------------------------------------------
// Length rules

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthRule {
    pub max_len: usize,
    pub max_ratio: f64,
}

impl Default for LengthRule {
    fn default() -> Self {
        Self {
            max_len: DEFAULT_MAX_LEN,
            max_ratio: DEFAULT_MAX_RATIO,
        }
    }
}

impl LengthRule {
    pub fn new(max_len: usize, max_ratio: f64) -> Result<Self> {
        if max_len < 1 {
            return Err(Error::config("max_len must be >= 1"));
        }
        if !(max_ratio >= 1.0) {
            return Err(Error::config(format!(
                "max_ratio must be >= 1, got {max_ratio}"
            )));
        }
        Ok(Self { max_len, max_ratio })
    }

    /// Token-count test; "exceeding" is strict, an empty side always fails.
    pub fn keeps_lengths(&self, src_len: usize, tgt_len: usize) -> bool {
        if src_len > self.max_len || tgt_len > self.max_len {
            return false;
        }
        let (lo, hi) = (src_len.min(tgt_len), src_len.max(tgt_len));
        if lo == 0 {
            return false;
        }
        hi as f64 / lo as f64 <= self.max_ratio
    }

    pub fn keeps(&self, pair: &ParallelRecord) -> bool {
        self.keeps_lengths(pair.src.word_count(), pair.tgt.word_count())
    }
}

pub fn length_ratio_filter<I>(pairs: I, rule: LengthRule) -> impl Iterator<Item = ParallelRecord>
where
    I: IntoIterator<Item = ParallelRecord>,
{
    pairs.into_iter().filter(move |p| rule.keeps(p))
}
