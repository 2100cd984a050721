//! Noisy-channel reranking of n-best lists and random-search tuning of the
//! combination weights.
//!
//! A hypothesis scores
//! `log P(tgt|src) + λ1 log P(src|tgt) + λ2 log P(tgt) + lp * length`.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{bleu_from_stats, bleu_stats, tokenize, BleuStats, Tokenize};
use crate::rng;

pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_BOUNDS: Bounds = Bounds { lo: 0.0, hi: 2.0 };

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub text: String,
    /// log P(tgt | src)
    pub direct: f64,
    /// log P(src | tgt)
    pub channel: f64,
    /// log P(tgt)
    pub lm: f64,
    pub length: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub seg_id: u64,
    pub source: Option<String>,
    pub hypotheses: Vec<Hypothesis>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NBestList {
    pub segments: Vec<Segment>,
}

impl NBestList {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        for seg in &segments {
            if seg.hypotheses.is_empty() {
                return Err(Error::invalid(format!(
                    "segment {} has no hypotheses",
                    seg.seg_id
                )));
            }
            for h in &seg.hypotheses {
                if ![h.direct, h.channel, h.lm].iter().all(|s| s.is_finite()) {
                    return Err(Error::invalid(format!(
                        "segment {} has a non-finite score",
                        seg.seg_id
                    )));
                }
            }
        }
        Ok(Self { segments })
    }

    /// Parses `seg_id ||| hypothesis ||| direct channel lm length` lines.
    /// Segments come out in ascending id order, hypotheses in file order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut grouped: BTreeMap<u64, Vec<Hypothesis>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse {
                what: "n-best list",
                line: i + 1,
                reason,
            };
            let fields: Vec<&str> = line.split("|||").collect();
            if fields.len() != 3 {
                return Err(err(format!(
                    "expected 3 `|||` fields, found {}",
                    fields.len()
                )));
            }
            let seg_id: u64 = fields[0]
                .trim()
                .parse()
                .map_err(|e| err(format!("segment id: {e}")))?;
            let scores: Vec<&str> = fields[2].split_whitespace().collect();
            if scores.len() != 4 {
                return Err(err(format!("expected 4 scores, found {}", scores.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| err(format!("score `{s}`: {e}")))
            };
            let length = scores[3]
                .parse::<u32>()
                .map_err(|e| err(format!("length `{}`: {e}", scores[3])))?;
            grouped.entry(seg_id).or_default().push(Hypothesis {
                text: fields[1].trim().to_string(),
                direct: num(scores[0])?,
                channel: num(scores[1])?,
                lm: num(scores[2])?,
                length,
            });
        }
        Self::new(
            grouped
                .into_iter()
                .map(|(seg_id, hypotheses)| Segment {
                    seg_id,
                    source: None,
                    hypotheses,
                })
                .collect(),
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            for h in &seg.hypotheses {
                out.push_str(&format!(
                    "{} ||| {} ||| {} {} {} {}\n",
                    seg.seg_id, h.text, h.direct, h.channel, h.lm, h.length
                ));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub length_penalty: f64,
}

impl RerankWeights {
    pub fn new(lambda1: f64, lambda2: f64, length_penalty: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            length_penalty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config(format!("invalid search bounds [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

impl FromStr for Bounds {
    type Err = Error;

    /// `lo:hi`
    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| Error::config(format!("bounds `{s}` must look like lo:hi")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad bound `{v}`")))
        };
        Bounds::new(parse(lo)?, parse(hi)?)
    }
}

pub fn combined_score(h: &Hypothesis, w: &RerankWeights) -> f64 {
    h.direct + w.lambda1 * h.channel + w.lambda2 * h.lm + w.length_penalty * h.length as f64
}

/// Index of the best hypothesis of a segment; ties keep the earliest.
pub fn best_index(seg: &Segment, w: &RerankWeights) -> usize {
    let mut best = 0;
    let mut best_score = combined_score(&seg.hypotheses[0], w);
    for (i, h) in seg.hypotheses.iter().enumerate().skip(1) {
        let s = combined_score(h, w);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

pub fn rerank<'a>(nbest: &'a NBestList, w: &RerankWeights) -> Vec<&'a str> {
    nbest
        .segments
        .iter()
        .map(|seg| seg.hypotheses[best_index(seg, w)].text.as_str())
        .collect()
}

/// Weights sampled for `trial`, a pure function of `(seed, trial)`.
pub fn trial_weights(seed: u64, trial: usize, bounds: Bounds) -> RerankWeights {
    let mut r = rng::stream(seed, trial as u64);
    let mut draw = || {
        if bounds.lo == bounds.hi {
            bounds.lo
        } else {
            r.gen_range(bounds.lo..=bounds.hi)
        }
    };
    let lambda1 = draw();
    let lambda2 = draw();
    let length_penalty = draw();
    RerankWeights::new(lambda1, lambda2, length_penalty)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneConfig {
    pub trials: usize,
    pub bounds: Bounds,
    pub seed: u64,
    pub tokenize: Tokenize,
}

impl TuneConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            bounds: DEFAULT_BOUNDS,
            seed,
            tokenize: Tokenize::Intl,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub weights: RerankWeights,
    pub bleu: f64,
    pub trial: usize,
    /// Every sampled weight triple with its dev BLEU, in trial order.
    pub history: Vec<(RerankWeights, f64)>,
}

/// Segment-level BLEU statistics of every hypothesis, computed once so each
/// trial is only an argmax and a sum.
pub struct DevSet {
    stats: Vec<Vec<BleuStats>>,
}

impl DevSet {
    pub fn new<S: AsRef<str>>(nbest: &NBestList, refs: &[S], scheme: Tokenize) -> Result<Self> {
        if refs.len() != nbest.len() {
            return Err(Error::invalid(format!(
                "{} references for {} n-best segments",
                refs.len(),
                nbest.len()
            )));
        }
        let stats = nbest
            .segments
            .iter()
            .zip(refs)
            .map(|(seg, r)| {
                let ref_toks = tokenize(r.as_ref(), scheme);
                seg.hypotheses
                    .iter()
                    .map(|h| bleu_stats(&tokenize(&h.text, scheme), &ref_toks))
                    .collect()
            })
            .collect();
        Ok(Self { stats })
    }

    pub fn bleu(&self, nbest: &NBestList, w: &RerankWeights) -> f64 {
        let total: BleuStats = nbest
            .segments
            .iter()
            .zip(&self.stats)
            .map(|(seg, stats)| stats[best_index(seg, w)])
            .sum();
        bleu_from_stats(&total)
    }
}

/// Random search: samples `trials` weight triples uniformly from
/// `bounds³`, scores corpus BLEU of the reranked dev output and keeps the
/// best (earliest trial on ties). Trials run on the current rayon pool.
pub fn tune<S: AsRef<str>>(nbest: &NBestList, refs: &[S], cfg: &TuneConfig) -> Result<TuneResult> {
    if cfg.trials < 1 {
        return Err(Error::config("tuning needs at least one trial"));
    }
    let dev = DevSet::new(nbest, refs, cfg.tokenize)?;
    let trials: Vec<usize> = (0..cfg.trials).collect();
    let history: Vec<(RerankWeights, f64)> = crate::par_map(&trials, |&t| {
        let w = trial_weights(cfg.seed, t, cfg.bounds);
        (w, dev.bleu(nbest, &w))
    });
    let mut best = 0;
    for (t, (_, bleu)) in history.iter().enumerate() {
        if *bleu > history[best].1 {
            best = t;
        }
    }
    Ok(TuneResult {
        weights: history[best].0,
        bleu: history[best].1,
        trial: best,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyp(text: &str, direct: f64, channel: f64, lm: f64, length: u32) -> Hypothesis {
        Hypothesis {
            text: text.into(),
            direct,
            channel,
            lm,
            length,
        }
    }

    #[test]
    fn combined_score_examples() {
        let h = hyp("x", -1.0, -2.0, -3.0, 4);
        assert_eq!(combined_score(&h, &RerankWeights::default()), -1.0);
        assert_eq!(combined_score(&h, &RerankWeights::new(1.0, 1.0, 0.5)), -4.0);
    }

    #[test]
    fn rerank_picks_argmax_with_early_ties() {
        let nbest = NBestList::new(vec![
            Segment {
                seg_id: 0,
                source: None,
                hypotheses: vec![hyp("a", -1.0, -2.0, -3.0, 4), hyp("b", -1.5, -0.5, -3.0, 4)],
            },
            Segment {
                seg_id: 1,
                source: None,
                hypotheses: vec![hyp("c", -1.0, -1.0, -1.0, 1), hyp("d", -1.0, -1.0, -1.0, 1)],
            },
            Segment {
                seg_id: 2,
                source: None,
                hypotheses: vec![hyp("only", -9.0, -9.0, -9.0, 1)],
            },
        ])
        .unwrap();
        // (1,1,0.5): a = -4, b = -1.5 - 0.5 - 3 + 2 = -3.
        assert_eq!(
            rerank(&nbest, &RerankWeights::new(1.0, 1.0, 0.5)),
            ["b", "c", "only"]
        );
        assert_eq!(
            rerank(&nbest, &RerankWeights::default()),
            ["a", "c", "only"]
        );
    }

    #[test]
    fn parses_nbest_format() {
        let text = "1 ||| second seg ||| -1 -2 -3 2\n0 ||| first ||| -0.5 -1.5 -2.5 1\n0 ||| first alt ||| -0.7 -1 -2 2\n";
        let nb = NBestList::parse(text).unwrap();
        assert_eq!(nb.len(), 2);
        assert_eq!(nb.segments[0].seg_id, 0);
        assert_eq!(nb.segments[0].hypotheses[1].text, "first alt");
        assert_eq!(nb.segments[1].hypotheses[0].length, 2);
        assert_eq!(NBestList::parse(&nb.to_text()).unwrap(), nb);
        assert!(NBestList::parse("0 ||| x ||| -1 -2 -3").is_err());
        assert!(NBestList::parse("0 ||| x ||| -1 -2 nan 3").is_err());
        assert!(NBestList::parse("zero ||| x ||| -1 -2 -3 3").is_err());
    }

    #[test]
    fn bounds_parse() {
        assert_eq!("0:2".parse::<Bounds>().unwrap(), DEFAULT_BOUNDS);
        assert!("2:0".parse::<Bounds>().is_err());
        assert!("02".parse::<Bounds>().is_err());
    }

    #[test]
    fn single_trial_returns_its_sample() {
        let nbest = NBestList::new(vec![Segment {
            seg_id: 0,
            source: None,
            hypotheses: vec![hyp("a b c d", -1.0, -1.0, -1.0, 4)],
        }])
        .unwrap();
        let cfg = TuneConfig {
            trials: 1,
            ..TuneConfig::new(5)
        };
        let r = tune(&nbest, &["a b c d"], &cfg).unwrap();
        assert_eq!(r.weights, trial_weights(5, 0, DEFAULT_BOUNDS));
        assert_eq!(r.bleu, 100.0);
        assert!(tune(&nbest, &["a", "b"], &cfg).is_err());
    }

    #[test]
    fn sampled_weights_stay_in_bounds() {
        for t in 0..200 {
            let w = trial_weights(17, t, DEFAULT_BOUNDS);
            assert!([w.lambda1, w.lambda2, w.length_penalty]
                .iter()
                .all(|&x| DEFAULT_BOUNDS.contains(x)));
        }
        assert_eq!(
            trial_weights(17, 3, DEFAULT_BOUNDS),
            trial_weights(17, 3, DEFAULT_BOUNDS)
        );
    }
}
