//! Word-level n-gram language models with interpolated Kneser-Ney smoothing.
//!
//! A single absolute discount `D` is used at every order. Highest-order
//! n-grams (and n-grams anchored at the sentence start) use raw counts; all
//! other orders use continuation counts, i.e. the number of distinct words
//! seen to their left. The base distribution is uniform over the vocabulary
//! plus `</s>` and `<unk>`, which is where unseen words get their mass.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::ByteReader;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const BOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;

pub const DEFAULT_ORDER: usize = 5;
pub const DEFAULT_DISCOUNT: f64 = 0.75;
pub const MAX_ORDER: usize = 8;

const MAGIC: &[u8] = b"MTFG-NGLM";
const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
struct Context {
    /// Interpolation weight handed to the next-shorter context.
    backoff: f64,
    /// Fully interpolated probabilities of words observed after this context.
    probs: HashMap<u32, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    discount: f64,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    /// p(w) for every id; `<s>` is never predicted and holds 0.
    unigram: Vec<f64>,
    contexts: HashMap<Vec<u32>, Context>,
}

/// Splits a line the same way for training and scoring.
pub fn tokenize(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

/// Adjusted count total and `(word, adjusted count)` followers of a context.
type ContextStats = (u64, Vec<(u32, u64)>);

pub fn lm_train<I, S>(corpus: I, order: usize, discount: f64) -> Result<NGramModel>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::config(format!(
            "n-gram order must be in 1..={MAX_ORDER}, got {order}"
        )));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::config(format!(
            "discount must be in (0, 1), got {discount}"
        )));
    }

    let lines: Vec<S> = corpus.into_iter().collect();
    if lines.is_empty() {
        return Err(Error::EmptyCorpus("language model training corpus".into()));
    }

    let mut words: Vec<&str> = lines
        .iter()
        .flat_map(|l| tokenize(l.as_ref()))
        .filter(|w| ![BOS, EOS, UNK].contains(w))
        .collect();
    words.sort_unstable();
    words.dedup();
    let vocab: Vec<String> = [BOS, EOS, UNK]
        .into_iter()
        .chain(words)
        .map(str::to_string)
        .collect();
    let index: HashMap<String, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i as u32))
        .collect();

    // Raw counts of every n-gram ending at a predicted position.
    let mut raw: HashMap<Vec<u32>, u64> = HashMap::new();
    for line in &lines {
        let ids: Vec<u32> = std::iter::once(BOS_ID)
            .chain(tokenize(line.as_ref()).into_iter().map(|w| index[w]))
            .chain(std::iter::once(EOS_ID))
            .collect();
        for end in 1..ids.len() {
            for n in 1..=order.min(end + 1) {
                *raw.entry(ids[end + 1 - n..=end].to_vec()).or_default() += 1;
            }
        }
    }

    let mut continuation: HashMap<&[u32], u64> = HashMap::new();
    for gram in raw.keys() {
        if gram.len() >= 2 {
            *continuation.entry(&gram[1..]).or_default() += 1;
        }
    }

    // Per context: total adjusted count, number of distinct followers and the
    // follower list.
    let mut stats: HashMap<&[u32], ContextStats> = HashMap::new();
    for (gram, &count) in &raw {
        let adjusted = if gram.len() == order || gram[0] == BOS_ID {
            count
        } else {
            continuation[gram.as_slice()]
        };
        let (ctx, word) = gram.split_at(gram.len() - 1);
        let entry = stats.entry(ctx).or_default();
        entry.0 += adjusted;
        entry.1.push((word[0], adjusted));
    }

    let floor = 1.0 / (vocab.len() - 1) as f64;
    let (uni_total, uni_followers) = &stats[&[][..]];
    let uni_total = *uni_total as f64;
    let uni_backoff = discount * uni_followers.len() as f64 / uni_total;
    let mut unigram = vec![uni_backoff * floor; vocab.len()];
    unigram[BOS_ID as usize] = 0.0;
    for &(w, c) in uni_followers {
        unigram[w as usize] += (c as f64 - discount) / uni_total;
    }

    let mut model = NGramModel {
        order,
        discount,
        vocab,
        index,
        unigram,
        contexts: HashMap::new(),
    };

    let mut ordered: Vec<(&[u32], ContextStats)> = stats
        .into_iter()
        .filter(|(ctx, _)| !ctx.is_empty())
        .collect();
    ordered.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then(a.0.cmp(b.0)));
    for (ctx, (total, followers)) in ordered {
        let total = total as f64;
        let backoff = discount * followers.len() as f64 / total;
        let probs = followers
            .iter()
            .map(|&(w, c)| {
                let lower = model.prob_ids(&ctx[1..], w);
                (w, (c as f64 - discount) / total + backoff * lower)
            })
            .collect();
        model
            .contexts
            .insert(ctx.to_vec(), Context { backoff, probs });
    }
    Ok(model)
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Id → word, with `<s>`, `</s>`, `<unk>` at ids 0..3.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Base-distribution probability every predictable word is interpolated with.
    pub fn unigram_floor(&self) -> f64 {
        1.0 / (self.vocab.len() - 1) as f64
    }

    pub fn word_id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    /// Contexts with at least one observed follower (excluding the empty one).
    pub fn observed_contexts(&self) -> Vec<Vec<u32>> {
        let mut out: Vec<Vec<u32>> = self.contexts.keys().cloned().collect();
        out.sort();
        out
    }

    pub fn stored_entries(&self) -> usize {
        self.contexts.values().map(|c| c.probs.len()).sum::<usize>() + self.vocab.len() - 1
    }

    /// p(word | context); only the last `order - 1` context ids are used.
    pub fn prob_ids(&self, context: &[u32], word: u32) -> f64 {
        let keep = self.order - 1;
        let ctx = &context[context.len().saturating_sub(keep)..];
        self.lookup(ctx, word)
    }

    fn lookup(&self, ctx: &[u32], word: u32) -> f64 {
        if ctx.is_empty() {
            return self.unigram[word as usize];
        }
        match self.contexts.get(ctx) {
            Some(c) => match c.probs.get(&word) {
                Some(&p) => p,
                None => c.backoff * self.lookup(&ctx[1..], word),
            },
            None => self.lookup(&ctx[1..], word),
        }
    }

    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let ctx: Vec<u32> = context.iter().map(|w| self.context_id(w)).collect();
        self.prob_ids(&ctx, self.word_id(word))
    }

    fn context_id(&self, w: &str) -> u32 {
        if w == BOS {
            BOS_ID
        } else {
            self.word_id(w)
        }
    }

    /// Word-normalized cross entropy in nats: the mean negative log
    /// probability over the tokens plus the closing `</s>` transition.
    pub fn cross_entropy(&self, sentence: &[&str]) -> f64 {
        let ids: Vec<u32> = std::iter::once(BOS_ID)
            .chain(sentence.iter().map(|w| self.word_id(w)))
            .chain(std::iter::once(EOS_ID))
            .collect();
        let log_prob: f64 = (1..ids.len())
            .map(|i| self.prob_ids(&ids[..i], ids[i]).ln())
            .sum();
        -log_prob / (ids.len() - 1) as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.order as u32).to_le_bytes());
        out.extend_from_slice(&self.discount.to_le_bytes());

        out.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for w in &self.vocab {
            out.extend_from_slice(&(w.len() as u32).to_le_bytes());
            out.extend_from_slice(w.as_bytes());
        }

        // Context 0 is the empty context; its backoff is unused.
        let contexts = self.observed_contexts();
        out.extend_from_slice(&(contexts.len() as u32 + 1).to_le_bytes());
        out.push(0);
        out.extend_from_slice(&0f64.to_le_bytes());
        for ctx in &contexts {
            out.push(ctx.len() as u8);
            for id in ctx {
                out.extend_from_slice(&id.to_le_bytes());
            }
            out.extend_from_slice(&self.contexts[ctx].backoff.to_le_bytes());
        }

        let mut triples: Vec<(u32, u32, f64)> = (1..self.vocab.len() as u32)
            .map(|w| (0, w, self.unigram[w as usize]))
            .collect();
        for (i, ctx) in contexts.iter().enumerate() {
            let mut probs: Vec<(&u32, &f64)> = self.contexts[ctx].probs.iter().collect();
            probs.sort_by_key(|(w, _)| **w);
            triples.extend(probs.into_iter().map(|(&w, &p)| (i as u32 + 1, w, p)));
        }
        out.extend_from_slice(&(triples.len() as u64).to_le_bytes());
        for (c, w, p) in triples {
            out.extend_from_slice(&c.to_le_bytes());
            out.extend_from_slice(&w.to_le_bytes());
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "n-gram model");
        r.expect_magic(MAGIC)?;
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(r.fail(format!("unsupported version {version}")));
        }
        let order = r.u32()? as usize;
        let discount = r.f64()?;
        if !(1..=MAX_ORDER).contains(&order) || !(discount > 0.0 && discount < 1.0) {
            return Err(r.fail("order or discount out of range".into()));
        }

        let n_vocab = r.u32()? as usize;
        if n_vocab < 3 {
            return Err(r.fail("vocabulary lacks reserved tokens".into()));
        }
        let mut vocab = Vec::with_capacity(n_vocab);
        for _ in 0..n_vocab {
            let len = r.u32()? as usize;
            vocab.push(r.string(len)?);
        }
        if vocab[..3] != [BOS, EOS, UNK] {
            return Err(r.fail("reserved tokens out of place".into()));
        }

        let n_ctx = r.u32()? as usize;
        let mut ctx_keys = Vec::with_capacity(n_ctx);
        let mut contexts = HashMap::new();
        for _ in 0..n_ctx {
            let len = r.u8()? as usize;
            let ids = (0..len).map(|_| r.u32()).collect::<Result<Vec<u32>>>()?;
            let backoff = r.f64()?;
            if !ids.is_empty() {
                contexts.insert(
                    ids.clone(),
                    Context {
                        backoff,
                        probs: HashMap::new(),
                    },
                );
            }
            ctx_keys.push(ids);
        }
        if ctx_keys.first().is_none_or(|k| !k.is_empty()) {
            return Err(r.fail("missing empty context".into()));
        }

        let mut unigram = vec![0.0; n_vocab];
        let n_triples = r.u64()?;
        for _ in 0..n_triples {
            let (c, w, p) = (r.u32()? as usize, r.u32()?, r.f64()?);
            if c >= ctx_keys.len() || w as usize >= n_vocab {
                return Err(r.fail("triple references unknown id".into()));
            }
            if c == 0 {
                unigram[w as usize] = p;
            } else {
                contexts
                    .get_mut(&ctx_keys[c])
                    .expect("non-empty context registered")
                    .probs
                    .insert(w, p);
            }
        }
        if !r.is_empty() {
            return Err(r.fail("trailing bytes".into()));
        }

        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Ok(Self {
            order,
            discount,
            vocab,
            index,
            unigram,
            contexts,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Convenience wrapper matching the free-function style of the other stages.
pub fn lm_cross_entropy(model: &NGramModel, sentence: &[&str]) -> f64 {
    model.cross_entropy(sentence)
}
