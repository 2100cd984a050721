use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mtforge::checkpoint::{self, TensorBundle};
use mtforge::config::{require_seed, PipelineConfig};
use mtforge::corpus_filter::{self, LengthRule, LidModel, ParallelRecord, SentenceRecord};
use mtforge::data_select::{self, SelectionConfig};
use mtforge::io::{read_lines, read_lines_from, write_lines};
use mtforge::metrics::{self, Tokenize};
use mtforge::mine::{self, EmbeddingSet};
use mtforge::moe_router;
use mtforge::ngram_lm::{self, NGramModel};
use mtforge::postprocess::{postprocess, PunctTable};
use mtforge::rerank::{self, Bounds, NBestList, RerankWeights, TuneConfig};
use mtforge::shard::{self, ShardPlan};
use mtforge::subword::{self, SamplingPlan, SubwordModel};
use mtforge::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mtforge",
    version,
    about = "Machine-translation data and systems toolkit"
)]
struct Cli {
    /// Pipeline configuration (JSON); command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize punctuation, then drop pairs failing the length/ratio or language-id rules.
    Filter(FilterArgs),
    /// Train the character n-gram language identifier from `lang<TAB>text` lines.
    LidTrain(LidTrainArgs),
    /// Train an interpolated Kneser-Ney language model.
    LmTrain(LmTrainArgs),
    /// Cross-entropy difference selection of in-domain-like sentences.
    Select(SelectArgs),
    /// Learn a BPE model from a temperature-sampled multilingual corpus.
    SpmTrain(SpmTrainArgs),
    /// Encode lines to subword ids.
    SpmEncode(SpmArgs),
    /// Decode lines of subword ids.
    SpmDecode(SpmArgs),
    /// Mine parallel sentences from embeddings with the ratio margin.
    Mine(MineArgs),
    /// Compute per-corpus shard counts relative to a base corpus.
    ShardPlan(ShardPlanArgs),
    /// Split a corpus into the shard files of a plan.
    ShardWrite(ShardWriteArgs),
    /// Route token gate logits to experts with top-2 gating.
    MoeRoute(MoeRouteArgs),
    /// Average the last checkpoints.
    CkptAvg(CkptAvgArgs),
    /// Average a finetuned model with its base; keep the average only if it validates better.
    CkptFinetune(CkptFinetuneArgs),
    /// Pick the best hypothesis per segment under fixed weights.
    Rerank(RerankArgs),
    /// Random-search the reranking weights against references.
    RerankTune(RerankTuneArgs),
    /// Corpus BLEU of hypotheses against references.
    Bleu(BleuArgs),
    /// Apply language-specific output punctuation (stdin to stdout).
    Postprocess(PostprocessArgs),
    /// Print the effective pipeline configuration.
    ConfigDump,
}

#[derive(Args)]
struct FilterArgs {
    /// `src<TAB>tgt[<TAB>score]` lines.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    expected_src: String,
    #[arg(long)]
    expected_tgt: String,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    max_ratio: Option<f64>,
    /// Language-id model; without it only the length rules apply.
    #[arg(long)]
    lid_model: Option<PathBuf>,
    /// Skip language identification for this language (repeatable).
    #[arg(long)]
    no_lid: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LidTrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LmTrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    discount: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    news_lm: PathBuf,
    #[arg(long)]
    gen_lm: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    /// Keep `H_in - H_gen > threshold` instead of `< -threshold`.
    #[arg(long)]
    literal_paper_inequality: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpmTrainArgs {
    /// JSON map from language to corpus path.
    #[arg(long)]
    sizes: PathBuf,
    #[arg(long = "T")]
    temperature: Option<f64>,
    #[arg(long)]
    vocab: Option<usize>,
    /// Lines to sample; defaults to the total number of lines.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpmArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input lines; stdin when omitted.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MineArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Rescale rows to unit norm instead of rejecting unnormalized files.
    #[arg(long)]
    renormalize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ShardPlanArgs {
    /// JSON map from corpus name to line count.
    #[arg(long)]
    sizes: PathBuf,
    #[arg(long)]
    base: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ShardWriteArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    corpus: String,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MoeRouteArgs {
    /// One token per line, tab-separated gate logits.
    #[arg(long)]
    logits: PathBuf,
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    capacity_factor: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CkptAvgArgs {
    #[arg(long)]
    last: Option<usize>,
    #[arg(required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CkptFinetuneArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    finetuned: PathBuf,
    /// Shell command printing the validation score of the checkpoint at `$1`.
    #[arg(long)]
    metric_cmd: String,
    #[arg(long)]
    lower_is_better: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long)]
    nbest: PathBuf,
    /// JSON object with lambda1, lambda2 and length_penalty.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RerankTuneArgs {
    #[arg(long)]
    nbest: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    /// Search interval for every weight, as `lo:hi`.
    #[arg(long)]
    bounds: Option<Bounds>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tokenize: Option<Tokenize>,
    /// Where to write the tuned weights (JSON); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BleuArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    tokenize: Option<Tokenize>,
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long)]
    lang: Option<String>,
    /// Print the punctuation table for the language as TSV and exit.
    #[arg(long)]
    print_table: bool,
}

fn log(stage: &str, fields: &[(&str, String)]) {
    let mut line = format!("stage={stage}");
    for (k, v) in fields {
        line.push_str(&format!(" {k}={v}"));
    }
    eprintln!("{line}");
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn input_lines(path: Option<&Path>) -> Result<Vec<String>> {
    match path {
        Some(p) => read_lines(p),
        None => read_lines_from(io::stdin().lock()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn finish(mut out: Box<dyn Write>) -> Result<()> {
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Filter(a) => filter(&cfg, a),
        Command::LidTrain(a) => lid_train(&cfg, a),
        Command::LmTrain(a) => lm_train(&cfg, a),
        Command::Select(a) => select(&cfg, a),
        Command::SpmTrain(a) => spm_train(&cfg, a),
        Command::SpmEncode(a) => spm_encode(a),
        Command::SpmDecode(a) => spm_decode(a),
        Command::Mine(a) => mine_cmd(&cfg, a),
        Command::ShardPlan(a) => shard_plan(&cfg, a),
        Command::ShardWrite(a) => shard_write(a),
        Command::MoeRoute(a) => moe_route(&cfg, a),
        Command::CkptAvg(a) => ckpt_avg(&cfg, a),
        Command::CkptFinetune(a) => ckpt_finetune(a),
        Command::Rerank(a) => rerank_cmd(a),
        Command::RerankTune(a) => rerank_tune(&cfg, a),
        Command::Bleu(a) => bleu(&cfg, a),
        Command::Postprocess(a) => postprocess_cmd(&cfg, a),
        Command::ConfigDump => {
            print!("{}", cfg.to_json());
            Ok(())
        }
    }
}

fn filter(cfg: &PipelineConfig, a: FilterArgs) -> Result<()> {
    let rule = LengthRule::new(
        a.max_len.unwrap_or(cfg.filter.max_len),
        a.max_ratio.unwrap_or(cfg.filter.max_ratio),
    )?;
    let mut no_lid = cfg.filter.no_lid.clone();
    no_lid.extend(a.no_lid);
    let lid = match &a.lid_model {
        Some(p) => Some(LidModel::from_json(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let origin = a.pairs.display().to_string();
    let lines = read_lines(&a.pairs)?;
    let mut pairs = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let mut p =
            ParallelRecord::from_tsv(line, i as u64, &a.expected_src, &a.expected_tgt, &origin)?;
        p.src.text = corpus_filter::normalize_punct(&p.src.text);
        p.tgt.text = corpus_filter::normalize_punct(&p.tgt.text);
        pairs.push(p);
    }
    let read = pairs.len();
    let mut kept: Vec<ParallelRecord> = corpus_filter::length_ratio_filter(pairs, rule).collect();
    let after_length = kept.len();
    if let Some(model) = &lid {
        for (lang, is_src) in [(&a.expected_src, true), (&a.expected_tgt, false)] {
            let bypass = no_lid.contains(lang);
            let side: Vec<SentenceRecord> = kept
                .iter()
                .map(|p| if is_src { p.src.clone() } else { p.tgt.clone() })
                .collect();
            let keep_lines: std::collections::BTreeSet<u64> =
                corpus_filter::lid_filter(side, model, lang, bypass)?
                    .map(|r| r.line_no)
                    .collect();
            kept.retain(|p| keep_lines.contains(&p.src.line_no));
        }
    }
    let mut out = output(a.out.as_deref())?;
    let rows: Vec<String> = kept.iter().map(ParallelRecord::to_tsv).collect();
    write_lines(&mut out, &rows)?;
    finish(out)?;
    log(
        "filter",
        &[
            ("read", read.to_string()),
            ("after_length", after_length.to_string()),
            ("kept", kept.len().to_string()),
        ],
    );
    Ok(())
}

fn lid_train(cfg: &PipelineConfig, a: LidTrainArgs) -> Result<()> {
    let origin = a.input.display().to_string();
    let mut labeled = Vec::new();
    for (i, line) in read_lines(&a.input)?.iter().enumerate() {
        let (lang, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
            what: "labeled text",
            line: i + 1,
            reason: "expected `lang<TAB>text`".into(),
        })?;
        labeled.push(SentenceRecord::new(text, lang, origin.as_str(), i as u64)?);
    }
    let model = corpus_filter::lid_train(&labeled, a.alpha.unwrap_or(cfg.filter.lid_alpha))?;
    std::fs::write(&a.out, model.to_json()?)?;
    log(
        "lid-train",
        &[
            ("records", labeled.len().to_string()),
            ("classes", model.classes.len().to_string()),
        ],
    );
    Ok(())
}

fn lm_train(cfg: &PipelineConfig, a: LmTrainArgs) -> Result<()> {
    let lines = read_lines(&a.input)?;
    let model = ngram_lm::lm_train(
        &lines,
        a.order.unwrap_or(cfg.lm.order),
        a.discount.unwrap_or(cfg.lm.discount),
    )?;
    model.save(&a.out)?;
    log(
        "lm-train",
        &[
            ("sentences", lines.len().to_string()),
            ("vocab", model.vocab().len().to_string()),
            ("entries", model.stored_entries().to_string()),
        ],
    );
    Ok(())
}

fn select(cfg: &PipelineConfig, a: SelectArgs) -> Result<()> {
    let corpus = read_lines(&a.input)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "{} has no lines",
            a.input.display()
        )));
    }
    let news = NGramModel::load(&a.news_lm)?;
    let general = NGramModel::load(&a.gen_lm)?;
    let mut sel = SelectionConfig::new(&news, &general);
    sel.threshold = a.threshold.unwrap_or(cfg.select.select_threshold);
    sel.orientation = if a.literal_paper_inequality {
        data_select::Orientation::Literal
    } else {
        cfg.select.orientation()
    };
    let (indices, stats) = data_select::select(&sel, &corpus)?;
    let mut out = output(a.out.as_deref())?;
    let kept: Vec<&str> = indices.iter().map(|&i| corpus[i].as_str()).collect();
    write_lines(&mut out, &kept)?;
    finish(out)?;
    eprintln!("{}", stats.log_line());
    Ok(())
}

fn spm_train(cfg: &PipelineConfig, a: SpmTrainArgs) -> Result<()> {
    let seed = require_seed(a.seed, cfg.subword.seed, "spm-train")?;
    let vocab_size = a
        .vocab
        .or(cfg.subword.vocab_size)
        .ok_or_else(|| Error::config("spm-train needs a vocabulary size (--vocab or config)"))?;
    let paths: BTreeMap<String, PathBuf> = read_json(&a.sizes)?;
    let base = a.sizes.parent().unwrap_or(Path::new("."));
    let mut corpora = BTreeMap::new();
    for (lang, path) in paths {
        let lines = read_lines(&base.join(path))?;
        corpora.insert(lang, lines);
    }
    let sizes = corpora
        .iter()
        .map(|(l, v)| (l.clone(), v.len() as u64))
        .collect();
    let plan = SamplingPlan::new(sizes, a.temperature.unwrap_or(cfg.subword.temperature))?;
    let total: usize = corpora.values().map(Vec::len).sum();
    let budget = a.budget.or(cfg.subword.sample_budget).unwrap_or(total);
    let sample = subword::sample_corpus(&corpora, &plan, budget, seed)?;
    let model = subword::bpe_learn(&sample, vocab_size)?;
    std::fs::write(&a.out, model.to_text())?;
    let mut fields = vec![
        ("sampled", sample.len().to_string()),
        ("merges", model.merges().len().to_string()),
        ("vocab", model.vocab_size().to_string()),
    ];
    for (lang, p) in &plan.probs {
        fields.push(("p", format!("{lang}:{p:.6}")));
    }
    log("spm-train", &fields);
    Ok(())
}

fn load_subword(path: &Path) -> Result<SubwordModel> {
    SubwordModel::from_text(&std::fs::read_to_string(path)?)
}

fn spm_encode(a: SpmArgs) -> Result<()> {
    let model = load_subword(&a.model)?;
    let rows: Vec<String> = input_lines(a.input.as_deref())?
        .iter()
        .map(|line| {
            let ids: Vec<String> = model.encode(line).iter().map(u32::to_string).collect();
            ids.join(" ")
        })
        .collect();
    let mut out = output(a.out.as_deref())?;
    write_lines(&mut out, &rows)?;
    finish(out)
}

fn spm_decode(a: SpmArgs) -> Result<()> {
    let model = load_subword(&a.model)?;
    let mut rows = Vec::new();
    for (i, line) in input_lines(a.input.as_deref())?.iter().enumerate() {
        let ids = line
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>().map_err(|e| Error::Parse {
                    what: "subword ids",
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        rows.push(model.decode(&ids)?);
    }
    let mut out = output(a.out.as_deref())?;
    write_lines(&mut out, &rows)?;
    finish(out)
}

fn mine_cmd(cfg: &PipelineConfig, a: MineArgs) -> Result<()> {
    let src = EmbeddingSet::load(&a.src, "src", a.renormalize)?;
    let tgt = EmbeddingSet::load(&a.tgt, "tgt", a.renormalize)?;
    let pairs = mine::mine_pairs(
        &src,
        &tgt,
        a.k.unwrap_or(cfg.mine.k),
        a.threshold.unwrap_or(cfg.mine.threshold),
    )?;
    let rows: Vec<String> = pairs.iter().map(mine::MinedPair::to_tsv).collect();
    let mut out = output(a.out.as_deref())?;
    write_lines(&mut out, &rows)?;
    finish(out)?;
    log(
        "mine",
        &[
            ("src", src.len().to_string()),
            ("tgt", tgt.len().to_string()),
            ("pairs", pairs.len().to_string()),
        ],
    );
    Ok(())
}

fn shard_plan(cfg: &PipelineConfig, a: ShardPlanArgs) -> Result<()> {
    let sizes: BTreeMap<String, u64> = read_json(&a.sizes)?;
    let base = a
        .base
        .or_else(|| cfg.shard.base.clone())
        .ok_or_else(|| Error::config("shard-plan needs a base corpus (--base or config)"))?;
    let plan = shard::plan_shards(&sizes, &base)?;
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "{}", plan.to_json()?)?;
    finish(out)?;
    let total: u64 = plan.corpora.values().map(|c| c.shards).sum();
    log(
        "shard-plan",
        &[
            ("corpora", plan.corpora.len().to_string()),
            ("shards", total.to_string()),
        ],
    );
    Ok(())
}

fn shard_write(a: ShardWriteArgs) -> Result<()> {
    let plan = ShardPlan::from_json(&std::fs::read_to_string(&a.plan)?)?;
    let shards = plan
        .shard_count(&a.corpus)
        .ok_or_else(|| Error::config(format!("corpus `{}` is not in the plan", a.corpus)))?;
    std::fs::create_dir_all(&a.out_dir)?;
    let lines = read_lines(&a.input)?;
    let files = shard::write_shards(&lines, &a.corpus, shards, &a.out_dir)?;
    log(
        "shard-write",
        &[
            ("lines", lines.len().to_string()),
            ("files", files.len().to_string()),
        ],
    );
    Ok(())
}

fn moe_route(cfg: &PipelineConfig, a: MoeRouteArgs) -> Result<()> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in read_lines(&a.logits)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split('\t')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    what: "logits TSV",
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let experts = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != experts) {
        return Err(Error::invalid(
            "logits must be a non-empty rectangular matrix",
        ));
    }
    let num_experts = a.experts.or(cfg.moe.num_experts).unwrap_or(experts);
    if num_experts != experts {
        return Err(Error::invalid(format!(
            "logits have {experts} columns but {num_experts} experts were configured"
        )));
    }
    let mut router = cfg.moe.router(num_experts)?;
    if let Some(cf) = a.capacity_factor {
        router.capacity_factor = cf;
        router.validate()?;
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let logits = ndarray::Array2::from_shape_vec((flat.len() / experts, experts), flat)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let result = moe_router::route(logits.view(), &router)?;
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "token\texpert\tweight")?;
    for (t, assigned) in result.assignments.iter().enumerate() {
        if assigned.is_empty() {
            writeln!(out, "{t}\tdropped\t0")?;
        }
        for asg in assigned {
            writeln!(out, "{t}\t{}\t{:.9}", asg.expert, asg.weight)?;
        }
    }
    finish(out)?;
    log(
        "moe-route",
        &[
            ("tokens", result.assignments.len().to_string()),
            ("capacity", result.capacity.to_string()),
            (
                "dropped",
                result.dropped.iter().filter(|&&d| d).count().to_string(),
            ),
            ("aux_loss", format!("{:.9}", result.aux_loss)),
            (
                "weighted_aux_loss",
                format!("{:.9}", router.weighted_loss(result.aux_loss)),
            ),
        ],
    );
    Ok(())
}

fn ckpt_avg(cfg: &PipelineConfig, a: CkptAvgArgs) -> Result<()> {
    let ordered = checkpoint::order_checkpoints(a.checkpoints);
    let window = checkpoint::last_k(&ordered, a.last.unwrap_or(cfg.ckpt.avg_last))?;
    let bundles = window
        .iter()
        .map(|p| TensorBundle::load(p))
        .collect::<Result<Vec<_>>>()?;
    let avg = checkpoint::average(&bundles)?;
    avg.save(&a.out)?;
    let names: Vec<String> = window.iter().map(|p| p.display().to_string()).collect();
    log(
        "ckpt-avg",
        &[
            ("averaged", window.len().to_string()),
            ("params", avg.num_params().to_string()),
            ("inputs", names.join(",")),
        ],
    );
    Ok(())
}

fn run_metric(cmd: &str, checkpoint: &Path) -> Result<f64> {
    let out = std::process::Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .arg("mtforge")
        .arg(checkpoint)
        .output()?;
    let text = String::from_utf8_lossy(&out.stdout);
    if !out.status.success() {
        return Err(Error::invalid(format!(
            "metric command failed on {}: {}",
            checkpoint.display(),
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    text.trim().parse::<f64>().map_err(|e| {
        Error::invalid(format!(
            "metric command printed {:?} for {}: {e}",
            text.trim(),
            checkpoint.display()
        ))
    })
}

fn ckpt_finetune(a: CkptFinetuneArgs) -> Result<()> {
    let base = TensorBundle::load(&a.base)?;
    let finetuned = TensorBundle::load(&a.finetuned)?;
    let (mut averaged_score, mut finetuned_score) = (f64::NAN, f64::NAN);
    let (chosen, pick) = checkpoint::finetune_select(
        &base,
        &finetuned,
        |bundle| {
            if std::ptr::eq(bundle, &finetuned) {
                finetuned_score = run_metric(&a.metric_cmd, &a.finetuned)?;
                Ok(finetuned_score)
            } else {
                // The candidate goes to --out so the metric command can load it.
                bundle.save(&a.out)?;
                averaged_score = run_metric(&a.metric_cmd, &a.out)?;
                Ok(averaged_score)
            }
        },
        !a.lower_is_better,
    )?;
    chosen.save(&a.out)?;
    log(
        "ckpt-finetune",
        &[
            ("averaged_score", averaged_score.to_string()),
            ("finetuned_score", finetuned_score.to_string()),
            (
                "selected",
                match pick {
                    checkpoint::Selected::Averaged => "averaged",
                    checkpoint::Selected::Finetuned => "finetuned",
                }
                .to_string(),
            ),
        ],
    );
    Ok(())
}

fn rerank_cmd(a: RerankArgs) -> Result<()> {
    let nbest = NBestList::parse(&std::fs::read_to_string(&a.nbest)?)?;
    let weights: RerankWeights = read_json(&a.weights)?;
    let best = rerank::rerank(&nbest, &weights);
    let mut out = output(a.out.as_deref())?;
    write_lines(&mut out, &best)?;
    finish(out)
}

fn rerank_tune(cfg: &PipelineConfig, a: RerankTuneArgs) -> Result<()> {
    let seed = require_seed(a.seed, cfg.rerank.seed, "rerank-tune")?;
    let nbest = NBestList::parse(&std::fs::read_to_string(&a.nbest)?)?;
    let refs = read_lines(&a.refs)?;
    let tune_cfg = TuneConfig {
        trials: a.trials.unwrap_or(cfg.rerank.tune_trials),
        bounds: match a.bounds {
            Some(b) => b,
            None => cfg.rerank.bounds()?,
        },
        seed,
        tokenize: a.tokenize.unwrap_or(cfg.bleu.tokenize),
    };
    let result = rerank::tune(&nbest, &refs, &tune_cfg)?;
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "{}", serde_json::to_string_pretty(&result.weights)?)?;
    finish(out)?;
    let w = &result.weights;
    log(
        "rerank-tune",
        &[
            ("trials", tune_cfg.trials.to_string()),
            ("best_trial", result.trial.to_string()),
            ("bleu", format!("{:.4}", result.bleu)),
            ("lambda1", w.lambda1.to_string()),
            ("lambda2", w.lambda2.to_string()),
            ("length_penalty", w.length_penalty.to_string()),
        ],
    );
    Ok(())
}

fn bleu(cfg: &PipelineConfig, a: BleuArgs) -> Result<()> {
    let hyps = read_lines(&a.hyp)?;
    let refs = read_lines(&a.reference)?;
    let score = metrics::corpus_bleu_text(&hyps, &refs, a.tokenize.unwrap_or(cfg.bleu.tokenize))?;
    println!("{}", metrics::format_bleu(score));
    Ok(())
}

fn postprocess_cmd(cfg: &PipelineConfig, a: PostprocessArgs) -> Result<()> {
    let lang = a
        .lang
        .or_else(|| cfg.postprocess.lang.clone())
        .ok_or_else(|| Error::config("postprocess needs --lang"))?;
    let mut out = output(None)?;
    if a.print_table {
        write!(out, "{}", PunctTable::for_lang(&lang).to_tsv())?;
        return finish(out);
    }
    let mut text = String::new();
    io::stdin().lock().read_to_string(&mut text)?;
    for line in text.lines() {
        writeln!(out, "{}", postprocess(line, &lang))?;
    }
    finish(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(cli)),
        Err(e) => Err(Error::config(format!("thread pool: {e}"))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error={} message={:?}", e.tag(), e.to_string());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
