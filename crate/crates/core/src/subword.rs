//! Shared multilingual subword vocabulary: temperature-balanced corpus
//! sampling and byte-pair-encoding merges over whitespace-split words.
//!
//! Non-final pieces of a word carry the continuation marker (`@@` by
//! default), so `"abab"` under the single merge `a b` encodes as
//! `ab@@ ab`. Every symbol therefore owns two vocabulary entries, its
//! marked and its final form.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_TEMPERATURE: f64 = 5.0;
pub const DEFAULT_MARKER: &str = "@@";

pub const UNK_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const PAD_ID: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<unk>", "<s>", "</s>", "<pad>"];
/// Decoded stand-in for characters the model has never seen.
pub const REPLACEMENT: char = '\u{FFFD}';

const HEADER_PREFIX: &str = "MTFG-BPE v1 marker=";

// ---------------------------------------------------------------------------
// Temperature sampling

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub sizes: BTreeMap<String, u64>,
    pub temperature: f64,
    pub probs: BTreeMap<String, f64>,
}

impl SamplingPlan {
    pub fn new(sizes: BTreeMap<String, u64>, temperature: f64) -> Result<Self> {
        let probs = temperature_probs(&sizes, temperature)?;
        Ok(Self {
            sizes,
            temperature,
            probs,
        })
    }
}

/// `p_l ∝ (D_l / ΣD)^(1/T)`.
pub fn temperature_probs(
    sizes: &BTreeMap<String, u64>,
    temperature: f64,
) -> Result<BTreeMap<String, f64>> {
    if !(temperature >= 1.0) || !temperature.is_finite() {
        return Err(Error::config(format!(
            "temperature must be a finite value >= 1, got {temperature}"
        )));
    }
    if sizes.is_empty() {
        return Err(Error::invalid("no languages to sample from"));
    }
    if let Some((lang, _)) = sizes.iter().find(|(_, &n)| n == 0) {
        return Err(Error::invalid(format!("language `{lang}` has zero lines")));
    }
    let total: f64 = sizes.values().map(|&n| n as f64).sum();
    let scaled: Vec<f64> = sizes
        .values()
        .map(|&n| (n as f64 / total).powf(1.0 / temperature))
        .collect();
    let norm: f64 = scaled.iter().sum();
    Ok(sizes
        .keys()
        .cloned()
        .zip(scaled.into_iter().map(|s| s / norm))
        .collect())
}

/// Draws `budget` lines: each draw picks a language from the plan, then the
/// next line of that language's seeded permutation. A language that runs
/// out starts a fresh permutation, i.e. it is resampled with replacement.
pub fn sample_corpus(
    corpora: &BTreeMap<String, Vec<String>>,
    plan: &SamplingPlan,
    budget: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if budget < 1 {
        return Err(Error::config("sampling budget must be >= 1"));
    }
    let langs: Vec<(&str, f64, &[String])> = plan
        .probs
        .iter()
        .map(|(lang, &p)| {
            let lines = corpora
                .get(lang)
                .ok_or_else(|| Error::invalid(format!("no corpus for language `{lang}`")))?;
            if lines.is_empty() && p > 0.0 {
                return Err(Error::EmptyCorpus(format!("language `{lang}`")));
            }
            Ok((lang.as_str(), p, lines.as_slice()))
        })
        .collect::<Result<_>>()?;

    let mut chooser = rng::stream(seed, 0);
    let mut streams: Vec<_> = (0..langs.len())
        .map(|i| rng::stream(seed, i as u64 + 1))
        .collect();
    let mut orders: Vec<Vec<usize>> = vec![Vec::new(); langs.len()];
    let mut cursors = vec![0usize; langs.len()];

    let mut out = Vec::with_capacity(budget);
    for _ in 0..budget {
        let u: f64 = chooser.gen();
        let mut acc = 0.0;
        let mut pick = langs.len() - 1;
        for (i, (_, p, _)) in langs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = i;
                break;
            }
        }
        let lines = langs[pick].2;
        if cursors[pick] == orders[pick].len() {
            let mut perm: Vec<usize> = (0..lines.len()).collect();
            perm.shuffle(&mut streams[pick]);
            orders[pick] = perm;
            cursors[pick] = 0;
        }
        out.push(lines[orders[pick][cursors[pick]]].clone());
        cursors[pick] += 1;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// BPE model

#[derive(Debug, Clone, PartialEq)]
pub struct SubwordModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    tokens: Vec<String>,
    vocab: HashMap<String, u32>,
    alphabet: BTreeSet<char>,
    marker: String,
}

impl SubwordModel {
    fn empty(alphabet: BTreeSet<char>, marker: &str) -> Self {
        let mut model = Self {
            merges: Vec::new(),
            ranks: HashMap::new(),
            tokens: Vec::new(),
            vocab: HashMap::new(),
            alphabet: BTreeSet::new(),
            marker: marker.to_string(),
        };
        for s in SPECIALS {
            model.push_token(s.to_string());
        }
        for &c in &alphabet {
            model.add_symbol(&c.to_string());
        }
        model.alphabet = alphabet;
        model
    }

    fn push_token(&mut self, token: String) {
        if !self.vocab.contains_key(&token) {
            self.vocab.insert(token.clone(), self.tokens.len() as u32);
            self.tokens.push(token);
        }
    }

    fn add_symbol(&mut self, symbol: &str) {
        self.push_token(format!("{symbol}{}", self.marker));
        self.push_token(symbol.to_string());
    }

    fn has_symbol(&self, symbol: &str) -> bool {
        self.vocab.contains_key(symbol)
    }

    fn push_merge(&mut self, left: String, right: String) {
        let joined = format!("{left}{right}");
        self.add_symbol(&joined);
        self.ranks
            .insert((left.clone(), right.clone()), self.merges.len());
        self.merges.push((left, right));
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn alphabet(&self) -> &BTreeSet<char> {
        &self.alphabet
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }

    /// Pieces of one word after replaying merges in learned order; `None`
    /// stands for a character outside the alphabet.
    fn segment(&self, word: &str) -> Vec<Option<String>> {
        let mut symbols: Vec<Option<String>> = word
            .chars()
            .map(|c| self.alphabet.contains(&c).then(|| c.to_string()))
            .collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| match (&w[0], &w[1]) {
                    (Some(l), Some(r)) => self.ranks.get(&(l.clone(), r.clone())).copied(),
                    _ => None,
                })
                .min();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                let hit = i + 1 < symbols.len()
                    && symbols[i].as_deref() == Some(left.as_str())
                    && symbols[i + 1].as_deref() == Some(right.as_str());
                if hit {
                    merged.push(Some(format!("{left}{right}")));
                    i += 2;
                } else {
                    merged.push(symbols[i].take());
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    /// Whitespace separates words; unknown characters become `<unk>`.
    /// Text containing the marker string itself is not round-trip safe.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            let pieces = self.segment(word);
            let last = pieces.len() - 1;
            for (i, piece) in pieces.into_iter().enumerate() {
                let id = match piece {
                    None => UNK_ID,
                    Some(p) if i == last => self.vocab[&p],
                    Some(p) => self.vocab[&format!("{p}{}", self.marker)],
                };
                ids.push(id);
            }
        }
        ids
    }

    /// Inverse of [`encode`](Self::encode) for text over the alphabet with
    /// single spaces between words. `<unk>` decodes to U+FFFD and never ends
    /// a word; other specials are skipped.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        let mut need_space = false;
        for &id in ids {
            let token = self.token(id).ok_or_else(|| {
                Error::invalid(format!(
                    "token id {id} outside vocabulary of {}",
                    self.tokens.len()
                ))
            })?;
            if matches!(id, BOS_ID | EOS_ID | PAD_ID) {
                continue;
            }
            if need_space {
                out.push(' ');
            }
            if id == UNK_ID {
                out.push(REPLACEMENT);
                need_space = false;
            } else if let Some(stem) = token.strip_suffix(self.marker.as_str()) {
                out.push_str(stem);
                need_space = false;
            } else {
                out.push_str(token);
                need_space = true;
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER_PREFIX}{}\n", self.marker);
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        for (id, token) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{token}\t{id}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "subword model",
            reason,
        };
        let mut lines = text.lines();
        let marker = lines
            .next()
            .and_then(|h| h.strip_prefix(HEADER_PREFIX))
            .filter(|m| !m.is_empty())
            .ok_or_else(|| bad("missing `MTFG-BPE v1 marker=` header".into()))?;

        let mut merges = Vec::new();
        let mut entries = Vec::new();
        for line in lines {
            if let Some((token, id)) = line.rsplit_once('\t') {
                let id: u32 = id.parse().map_err(|_| bad(format!("bad id in `{line}`")))?;
                entries.push((token.to_string(), id));
            } else if entries.is_empty() {
                let (l, r) = line
                    .split_once(' ')
                    .ok_or_else(|| bad(format!("bad merge line `{line}`")))?;
                merges.push((l.to_string(), r.to_string()));
            } else {
                return Err(bad(format!("merge after vocabulary: `{line}`")));
            }
        }
        let alphabet: BTreeSet<char> = entries
            .iter()
            .filter(|(_, id)| *id >= SPECIALS.len() as u32)
            .filter_map(|(t, _)| {
                let mut cs = t.chars();
                match (cs.next(), cs.next()) {
                    (Some(c), None) => Some(c),
                    _ => None,
                }
            })
            .collect();

        let mut model = Self::empty(alphabet, marker);
        for (l, r) in merges {
            if !model.has_symbol(&l) || !model.has_symbol(&r) {
                return Err(bad(format!("merge `{l} {r}` uses an undefined symbol")));
            }
            if model.ranks.contains_key(&(l.clone(), r.clone())) {
                return Err(bad(format!("duplicate merge `{l} {r}`")));
            }
            model.push_merge(l, r);
        }
        let rebuilt: Vec<(String, u32)> = model
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        if rebuilt != entries {
            return Err(bad("vocabulary does not match the merge list".into()));
        }
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// BPE learning

struct Learner {
    symbols: Vec<String>,
    interned: HashMap<String, u32>,
}

impl Learner {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.interned.get(s) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(s.to_string());
        self.interned.insert(s.to_string(), id);
        id
    }
}

fn add_pairs(
    word: &[u32],
    freq: i64,
    idx: usize,
    counts: &mut HashMap<(u32, u32), i64>,
    locations: Option<&mut HashMap<(u32, u32), HashSet<usize>>>,
) {
    for w in word.windows(2) {
        *counts.entry((w[0], w[1])).or_default() += freq;
    }
    if let Some(loc) = locations {
        for w in word.windows(2) {
            loc.entry((w[0], w[1])).or_default().insert(idx);
        }
    }
}

/// Greedy BPE: repeatedly merges the most frequent adjacent pair (ties go to
/// the lexicographically smallest `(left, right)`), until the vocabulary
/// reaches `vocab_size` or no pair occurs at least twice.
pub fn bpe_learn<S: AsRef<str>>(sample: &[S], vocab_size: usize) -> Result<SubwordModel> {
    bpe_learn_with_marker(sample, vocab_size, DEFAULT_MARKER)
}

pub fn bpe_learn_with_marker<S: AsRef<str>>(
    sample: &[S],
    vocab_size: usize,
    marker: &str,
) -> Result<SubwordModel> {
    if marker.is_empty() || marker.contains(char::is_whitespace) {
        return Err(Error::config(
            "continuation marker must be non-empty without spaces",
        ));
    }
    let mut word_freq: HashMap<&str, i64> = HashMap::new();
    for line in sample {
        for w in line.as_ref().split_whitespace() {
            *word_freq.entry(w).or_default() += 1;
        }
    }
    let alphabet: BTreeSet<char> = word_freq.keys().flat_map(|w| w.chars()).collect();
    let base = SPECIALS.len() + 2 * alphabet.len();
    if vocab_size <= base {
        return Err(Error::config(format!(
            "vocab size {vocab_size} cannot hold the {} specials and {} base characters in both forms (need > {base})",
            SPECIALS.len(),
            alphabet.len()
        )));
    }

    let mut model = SubwordModel::empty(alphabet, marker);
    let mut learner = Learner {
        symbols: Vec::new(),
        interned: HashMap::new(),
    };
    let mut sorted_words: Vec<(&str, i64)> = word_freq.into_iter().collect();
    sorted_words.sort_unstable();
    let mut words: Vec<Vec<u32>> = Vec::with_capacity(sorted_words.len());
    let mut freqs: Vec<i64> = Vec::with_capacity(sorted_words.len());
    for (w, f) in sorted_words {
        let syms = w.chars().map(|c| learner.intern(&c.to_string())).collect();
        words.push(syms);
        freqs.push(f);
    }

    let mut counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut locations: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (i, w) in words.iter().enumerate() {
        add_pairs(w, freqs[i], i, &mut counts, Some(&mut locations));
    }

    while model.vocab_size() < vocab_size {
        let best = counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .max_by(|(a, ca), (b, cb)| {
                ca.cmp(cb).then_with(|| {
                    let ka = (
                        &learner.symbols[a.0 as usize],
                        &learner.symbols[a.1 as usize],
                    );
                    let kb = (
                        &learner.symbols[b.0 as usize],
                        &learner.symbols[b.1 as usize],
                    );
                    kb.cmp(&ka)
                })
            })
            .map(|(&p, &c)| (p, c));
        let Some(((left, right), freq)) = best else {
            break;
        };
        if freq < 2 {
            break;
        }
        let left_s = learner.symbols[left as usize].clone();
        let right_s = learner.symbols[right as usize].clone();
        let joined = format!("{left_s}{right_s}");
        let growth = if model.has_symbol(&joined) { 0 } else { 2 };
        if model.vocab_size() + growth > vocab_size {
            break;
        }
        let new_sym = learner.intern(&joined);
        model.push_merge(left_s, right_s);

        let mut affected: Vec<usize> = locations
            .remove(&(left, right))
            .unwrap_or_default()
            .into_iter()
            .collect();
        affected.sort_unstable();
        for idx in affected {
            let word = &words[idx];
            if !word.windows(2).any(|w| w[0] == left && w[1] == right) {
                continue;
            }
            let f = freqs[idx];
            add_pairs(word, -f, idx, &mut counts, None);
            let mut next = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == left && word[i + 1] == right {
                    next.push(new_sym);
                    i += 2;
                } else {
                    next.push(word[i]);
                    i += 1;
                }
            }
            add_pairs(&next, f, idx, &mut counts, Some(&mut locations));
            words[idx] = next;
        }
        counts.retain(|_, c| *c != 0);
    }
    Ok(model)
}
