//! Pipeline configuration: one JSON document with a section per stage.
//!
//! Every key is optional and falls back to its default; unknown keys are
//! rejected at every nesting level. Stochastic stages have no default seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus_filter::{DEFAULT_LID_ALPHA, DEFAULT_MAX_LEN, DEFAULT_MAX_RATIO};
use crate::data_select::Orientation;
use crate::error::{Error, Result};
use crate::metrics::Tokenize;
use crate::moe_router::{
    RouterConfig, DEFAULT_CAPACITY_FACTOR, DEFAULT_GATE_LOSS_WEIGHT, DEFAULT_LAYER_INTERVAL, TOP_K,
};
use crate::rerank::{Bounds, DEFAULT_BOUNDS, DEFAULT_TRIALS};
use crate::{checkpoint, data_select, mine, ngram_lm, subword};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub filter: FilterSection,
    pub lm: LmSection,
    pub select: SelectSection,
    pub subword: SubwordSection,
    pub mine: MineSection,
    pub shard: ShardSection,
    pub moe: MoeSection,
    pub ckpt: CkptSection,
    pub rerank: RerankSection,
    pub bleu: BleuSection,
    pub postprocess: PostprocessSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub max_len: usize,
    pub max_ratio: f64,
    pub lid_alpha: f64,
    /// Languages whose records skip language identification.
    pub no_lid: Vec<String>,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            max_len: DEFAULT_MAX_LEN,
            max_ratio: DEFAULT_MAX_RATIO,
            lid_alpha: DEFAULT_LID_ALPHA,
            no_lid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub order: usize,
    pub discount: f64,
}

impl Default for LmSection {
    fn default() -> Self {
        Self {
            order: ngram_lm::DEFAULT_ORDER,
            discount: ngram_lm::DEFAULT_DISCOUNT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub select_threshold: f64,
    pub literal_paper_inequality: bool,
}

impl Default for SelectSection {
    fn default() -> Self {
        Self {
            select_threshold: data_select::DEFAULT_THRESHOLD,
            literal_paper_inequality: false,
        }
    }
}

impl SelectSection {
    pub fn orientation(&self) -> Orientation {
        if self.literal_paper_inequality {
            Orientation::Literal
        } else {
            Orientation::InDomain
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubwordSection {
    #[serde(rename = "T")]
    pub temperature: f64,
    /// No default: the vocabulary size is a per-system choice.
    pub vocab_size: Option<usize>,
    /// Lines drawn for BPE learning; defaults to the total corpus size.
    pub sample_budget: Option<usize>,
    pub seed: Option<u64>,
}

impl Default for SubwordSection {
    fn default() -> Self {
        Self {
            temperature: subword::DEFAULT_TEMPERATURE,
            vocab_size: None,
            sample_budget: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineSection {
    pub k: usize,
    pub threshold: f64,
}

impl Default for MineSection {
    fn default() -> Self {
        Self {
            k: mine::DEFAULT_K,
            threshold: mine::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShardSection {
    pub base: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoeSection {
    pub num_experts: Option<usize>,
    pub top_k: usize,
    pub capacity_factor: f64,
    pub gate_loss_weight: f64,
    pub layer_interval: usize,
}

impl Default for MoeSection {
    fn default() -> Self {
        Self {
            num_experts: None,
            top_k: TOP_K,
            capacity_factor: DEFAULT_CAPACITY_FACTOR,
            gate_loss_weight: DEFAULT_GATE_LOSS_WEIGHT,
            layer_interval: DEFAULT_LAYER_INTERVAL,
        }
    }
}

impl MoeSection {
    pub fn router(&self, num_experts: usize) -> Result<RouterConfig> {
        let cfg = RouterConfig {
            num_experts,
            top_k: self.top_k,
            capacity_factor: self.capacity_factor,
            gate_loss_weight: self.gate_loss_weight,
            layer_interval: self.layer_interval,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CkptSection {
    pub avg_last: usize,
}

impl Default for CkptSection {
    fn default() -> Self {
        Self {
            avg_last: checkpoint::DEFAULT_AVG_LAST,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankSection {
    pub tune_trials: usize,
    pub tune_bounds: [f64; 2],
    pub seed: Option<u64>,
}

impl Default for RerankSection {
    fn default() -> Self {
        Self {
            tune_trials: DEFAULT_TRIALS,
            tune_bounds: [DEFAULT_BOUNDS.lo, DEFAULT_BOUNDS.hi],
            seed: None,
        }
    }
}

impl RerankSection {
    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(self.tune_bounds[0], self.tune_bounds[1])
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BleuSection {
    pub tokenize: Tokenize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessSection {
    pub lang: Option<String>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("pipeline config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Pretty JSON with a trailing newline; the output of `config-dump`.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if self.filter.max_len == 0 {
            return Err(Error::config("filter.max_len must be >= 1"));
        }
        if !(positive(self.filter.max_ratio) && self.filter.max_ratio >= 1.0) {
            return Err(Error::config(
                "filter.max_ratio must be a finite value >= 1",
            ));
        }
        if !positive(self.filter.lid_alpha) {
            return Err(Error::config("filter.lid_alpha must be > 0"));
        }
        if !(1..=ngram_lm::MAX_ORDER).contains(&self.lm.order) {
            return Err(Error::config(format!(
                "lm.order must be in 1..={}",
                ngram_lm::MAX_ORDER
            )));
        }
        if !(self.lm.discount > 0.0 && self.lm.discount < 1.0) {
            return Err(Error::config("lm.discount must be in (0, 1)"));
        }
        if self.select.select_threshold.is_nan() {
            return Err(Error::config("select.select_threshold must be a number"));
        }
        if !positive(self.subword.temperature) {
            return Err(Error::config("subword.T must be > 0"));
        }
        if self.mine.k == 0 {
            return Err(Error::config("mine.k must be >= 1"));
        }
        if !self.mine.threshold.is_finite() {
            return Err(Error::config("mine.threshold must be finite"));
        }
        if let Some(e) = self.moe.num_experts {
            self.moe.router(e)?;
        } else {
            self.moe.router(2)?;
        }
        if self.ckpt.avg_last == 0 {
            return Err(Error::config("ckpt.avg_last must be >= 1"));
        }
        if self.rerank.tune_trials == 0 {
            return Err(Error::config("rerank.tune_trials must be >= 1"));
        }
        self.rerank.bounds()?;
        Ok(())
    }
}

/// A seed for a stochastic stage: the flag wins, then the config, and a
/// missing seed is a configuration error.
pub fn require_seed(flag: Option<u64>, config: Option<u64>, stage: &str) -> Result<u64> {
    flag.or(config)
        .ok_or_else(|| Error::config(format!("{stage} needs a seed (--seed or config)")))
}
