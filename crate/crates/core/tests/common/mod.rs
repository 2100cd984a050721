//! Reference implementations used as test oracles. They favour the plainest
//! possible code over speed and share nothing with the library beyond its
//! public types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(rel)
}

// ---------------------------------------------------------------------------
// Interpolated Kneser-Ney, computed on demand from raw n-gram counts.

pub struct KnOracle {
    order: usize,
    d: f64,
    words: BTreeSet<String>,
    /// Raw counts of every n-gram of length 1..=order ending at a predicted
    /// token of a `<s>`-padded, `</s>`-terminated sentence.
    counts: BTreeMap<Vec<String>, u64>,
    /// Number of distinct one-word left extensions of each n-gram.
    left_ext: BTreeMap<Vec<String>, u64>,
    /// Observed n-grams grouped by their context (all but the last word).
    by_context: BTreeMap<Vec<String>, Vec<Vec<String>>>,
}

impl KnOracle {
    pub fn train(lines: &[&str], order: usize, d: f64) -> Self {
        let mut counts = BTreeMap::new();
        let mut words = BTreeSet::new();
        for line in lines {
            let mut toks = vec!["<s>".to_string()];
            for w in line.split_whitespace() {
                words.insert(w.to_string());
                toks.push(w.to_string());
            }
            toks.push("</s>".to_string());
            for end in 1..toks.len() {
                for start in (0..=end).rev() {
                    if end - start + 1 > order {
                        break;
                    }
                    *counts.entry(toks[start..=end].to_vec()).or_insert(0) += 1;
                }
            }
        }
        let mut left_ext = BTreeMap::new();
        let mut by_context: BTreeMap<Vec<String>, Vec<Vec<String>>> = BTreeMap::new();
        for g in counts.keys() {
            if g.len() > 1 {
                *left_ext.entry(g[1..].to_vec()).or_insert(0) += 1;
            }
            by_context
                .entry(g[..g.len() - 1].to_vec())
                .or_default()
                .push(g.clone());
        }
        Self {
            order,
            d,
            words,
            counts,
            left_ext,
            by_context,
        }
    }

    /// Vocabulary that can be predicted: every word, `</s>` and `<unk>`.
    pub fn predictable(&self) -> Vec<String> {
        let mut v: Vec<String> = self.words.iter().cloned().collect();
        v.push("</s>".into());
        v.push("<unk>".into());
        v
    }

    fn adjusted(&self, gram: &[String]) -> u64 {
        if gram.len() == self.order || gram[0] == "<s>" {
            return self.counts.get(gram).copied().unwrap_or(0);
        }
        self.left_ext.get(gram).copied().unwrap_or(0)
    }

    fn followers(&self, ctx: &[String]) -> Vec<Vec<String>> {
        self.by_context.get(ctx).cloned().unwrap_or_default()
    }

    fn norm_word(&self, w: &str) -> String {
        if w == "</s>" || self.words.contains(w) {
            w.to_string()
        } else {
            "<unk>".to_string()
        }
    }

    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let mut ctx: Vec<String> = context
            .iter()
            .map(|w| {
                if *w == "<s>" {
                    w.to_string()
                } else {
                    self.norm_word(w)
                }
            })
            .collect();
        let keep = self.order - 1;
        if ctx.len() > keep {
            ctx.drain(..ctx.len() - keep);
        }
        self.interp(&ctx, &self.norm_word(word))
    }

    fn interp(&self, ctx: &[String], word: &str) -> f64 {
        let followers = self.followers(ctx);
        if followers.is_empty() {
            if ctx.is_empty() {
                unreachable!("non-empty corpora always have unigrams");
            }
            return self.interp(&ctx[1..], word);
        }
        let total: u64 = followers.iter().map(|g| self.adjusted(g)).sum();
        let total = total as f64;
        let mut gram = ctx.to_vec();
        gram.push(word.to_string());
        let c = if self.counts.contains_key(&gram) {
            self.adjusted(&gram) as f64
        } else {
            0.0
        };
        let gamma = self.d * followers.len() as f64 / total;
        let lower = if ctx.is_empty() {
            1.0 / (self.words.len() + 2) as f64
        } else {
            self.interp(&ctx[1..], word)
        };
        (c - self.d).max(0.0) / total + gamma * lower
    }

    pub fn cross_entropy(&self, sentence: &[&str]) -> f64 {
        let mut toks: Vec<&str> = vec!["<s>"];
        toks.extend_from_slice(sentence);
        toks.push("</s>");
        let mut nll = 0.0;
        for i in 1..toks.len() {
            nll -= self.prob(&toks[..i], toks[i]).ln();
        }
        nll / (toks.len() - 1) as f64
    }
}

// ---------------------------------------------------------------------------
// BLEU over pre-tokenized text.

fn grams(toks: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for i in 0..=toks.len() - n {
            *m.entry(&toks[i..i + n]).or_insert(0) += 1;
        }
    }
    m
}

pub fn oracle_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let mut matched = [0u64; 4];
    let mut total = [0u64; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            let hg = grams(h, n);
            let rg = grams(rf, n);
            for (g, cnt) in &hg {
                matched[n - 1] += (*cnt).min(*rg.get(g).unwrap_or(&0));
                total[n - 1] += cnt;
            }
        }
    }
    if c == 0 || matched.contains(&0) {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 0..4 {
        log_p += (matched[n] as f64 / total[n] as f64).ln() / 4.0;
    }
    let bp = if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    100.0 * bp * log_p.exp()
}

// ---------------------------------------------------------------------------
// Margin mining by brute force over the full similarity matrix.

pub fn oracle_mine(
    src: &Array2<f64>,
    src_ids: &[String],
    tgt: &Array2<f64>,
    tgt_ids: &[String],
    k: usize,
    threshold: f64,
) -> Vec<(String, String, f64)> {
    let (n, m) = (src.nrows(), tgt.nrows());
    let mut sim = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            sim[i][j] = (0..src.ncols()).map(|c| src[[i, c]] * tgt[[j, c]]).sum();
        }
    }
    let top = |row: Vec<(usize, f64)>| -> Vec<(usize, f64)> {
        let mut row = row;
        row.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        row.truncate(k);
        row
    };
    let fwd: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| top((0..m).map(|j| (j, sim[i][j])).collect()))
        .collect();
    let bwd: Vec<Vec<(usize, f64)>> = (0..m)
        .map(|j| top((0..n).map(|i| (i, sim[i][j])).collect()))
        .collect();
    let mean = |l: &Vec<(usize, f64)>| l.iter().map(|x| x.1).sum::<f64>() / (2 * k) as f64;

    let mut cands = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let in_fwd = fwd[i].iter().any(|x| x.0 == j);
            let in_bwd = bwd[j].iter().any(|x| x.0 == i);
            if in_fwd || in_bwd {
                let margin = sim[i][j] / (mean(&fwd[i]) + mean(&bwd[j]));
                cands.push((margin, i, j));
            }
        }
    }
    cands.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(src_ids[a.1].cmp(&src_ids[b.1]))
            .then(tgt_ids[a.2].cmp(&tgt_ids[b.2]))
    });
    let mut used_s = BTreeSet::new();
    let mut used_t = BTreeSet::new();
    let mut out = Vec::new();
    for (margin, i, j) in cands {
        if margin < threshold {
            break;
        }
        if used_s.contains(&i) || used_t.contains(&j) {
            continue;
        }
        used_s.insert(i);
        used_t.insert(j);
        out.push((src_ids[i].clone(), tgt_ids[j].clone(), margin));
    }
    out
}

pub fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    let mut a: Array2<f64> = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
    for mut row in a.rows_mut() {
        let norm: f64 = row.dot(&row).sqrt();
        row /= norm;
    }
    a
}

// ---------------------------------------------------------------------------
// Sentence generators.

pub fn sentence(rng: &mut ChaCha8Rng, vocab: &[&str], min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n)
        .map(|_| vocab[rng.gen_range(0..vocab.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn lcm(a: u64, b: u64) -> u64 {
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

// ---------------------------------------------------------------------------
// Two-domain selection fixture.

pub const NEWS_VOCAB: &[&str] = &[
    "minister",
    "parliament",
    "election",
    "budget",
    "vote",
    "policy",
    "economy",
    "president",
    "report",
    "crisis",
    "official",
    "tax",
];
pub const WEB_VOCAB: &[&str] = &[
    "recipe", "garden", "holiday", "football", "music", "movie", "weekend", "beach", "guitar",
    "painting", "pizza", "puppy",
];

pub struct TwoDomain {
    pub news_lm_text: Vec<String>,
    pub general_lm_text: Vec<String>,
    pub corpus: Vec<String>,
    pub is_news: Vec<bool>,
}

/// In-domain LM text from the news generator, general LM text from the web
/// generator, and a `size`-line corpus drawn half from each.
pub fn two_domain(seed: u64, size: usize) -> TwoDomain {
    let mut r = mtforge::rng::stream(seed, 0);
    let news_lm_text = (0..300)
        .map(|_| sentence(&mut r, NEWS_VOCAB, 3, 9))
        .collect();
    let general_lm_text = (0..300)
        .map(|_| sentence(&mut r, WEB_VOCAB, 3, 9))
        .collect();
    let mut corpus = Vec::with_capacity(size);
    let mut is_news = Vec::with_capacity(size);
    for i in 0..size {
        let news = (i * 7919 + seed as usize).is_multiple_of(2);
        corpus.push(sentence(
            &mut r,
            if news { NEWS_VOCAB } else { WEB_VOCAB },
            2,
            10,
        ));
        is_news.push(news);
    }
    TwoDomain {
        news_lm_text,
        general_lm_text,
        corpus,
        is_news,
    }
}

// ---------------------------------------------------------------------------
// End-to-end CLI pipeline over the bundled fixtures.

pub struct CliRun {
    pub status: i32,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

pub fn mtforge(args: &[&str], stdin: Option<&[u8]>) -> CliRun {
    use std::io::Write;
    use std::process::{Command, Stdio};
    let mut child = Command::new(env!("CARGO_BIN_EXE_mtforge"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn mtforge");
    {
        let mut pipe = child.stdin.take().unwrap();
        if let Some(bytes) = stdin {
            pipe.write_all(bytes).unwrap();
        }
    }
    let out = child.wait_with_output().unwrap();
    CliRun {
        status: out.status.code().unwrap_or(-1),
        stdout: out.stdout,
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Writes embedding and checkpoint inputs that have no text fixture.
fn binary_inputs(dir: &std::path::Path) {
    use mtforge::checkpoint::{Tensor, TensorBundle};
    use mtforge::mine::EmbeddingSet;
    let mut r = mtforge::rng::stream(2024, 0);
    let src = random_unit_rows(&mut r, 40, 16);
    let mut tgt = random_unit_rows(&mut r, 35, 16);
    for j in 0..20 {
        for c in 0..16 {
            tgt[[j, c]] = src[[2 * j, c]] + r.gen_range(-0.1..0.1);
        }
    }
    let ids = |n: usize, p: &str| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    EmbeddingSet::new(ids(40, "de-"), src, "de")
        .unwrap()
        .save(&dir.join("src.emb"))
        .unwrap();
    EmbeddingSet::normalized(ids(35, "en-"), tgt, "en")
        .unwrap()
        .save(&dir.join("tgt.emb"))
        .unwrap();
    for step in [1000, 2000, 3000, 4000, 5000, 6000, 7000] {
        let mut t = |shape: Vec<usize>| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let bundle = TensorBundle::new(vec![
            ("encoder.w".into(), t(vec![8, 4])),
            ("encoder.b".into(), t(vec![4])),
        ])
        .unwrap();
        bundle
            .save(&dir.join(format!("checkpoint{step}.bin")))
            .unwrap();
    }
}

/// Runs every stage into `dir` and returns each artifact (written files and
/// captured stdout) by name. Panics on a failing stage.
pub fn run_pipeline(dir: &std::path::Path, workers: usize) -> BTreeMap<String, Vec<u8>> {
    let fx = |rel: &str| fixture(rel).to_string_lossy().into_owned();
    let out = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let w = workers.to_string();
    binary_inputs(dir);
    let mut stdout_of = BTreeMap::new();
    let mut step = |name: &str, args: Vec<String>, stdin: Option<Vec<u8>>| {
        let mut full = vec!["--workers".to_string(), w.clone()];
        full.extend(args);
        let refs: Vec<&str> = full.iter().map(String::as_str).collect();
        let run = mtforge(&refs, stdin.as_deref());
        assert_eq!(run.status, 0, "{name} failed: {}", run.stderr);
        stdout_of.insert(format!("{name}.stdout"), run.stdout);
    };
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();

    step(
        "lid-train",
        s(&[
            "lid-train",
            "--in",
            &fx("pipeline/lid_train.tsv"),
            "--out",
            &out("lid.json"),
        ]),
        None,
    );
    step(
        "filter",
        s(&[
            "filter",
            "--pairs",
            &fx("pipeline/pairs.tsv"),
            "--lid-model",
            &out("lid.json"),
            "--expected-src",
            "de",
            "--expected-tgt",
            "en",
            "--out",
            &out("filtered.tsv"),
        ]),
        None,
    );
    step(
        "lm-news",
        s(&[
            "lm-train",
            "--in",
            &fx("pipeline/news.txt"),
            "--order",
            "3",
            "--out",
            &out("news.bin"),
        ]),
        None,
    );
    step(
        "lm-gen",
        s(&[
            "lm-train",
            "--in",
            &fx("pipeline/general.txt"),
            "--order",
            "3",
            "--out",
            &out("gen.bin"),
        ]),
        None,
    );
    step(
        "select",
        s(&[
            "select",
            "--in",
            &fx("pipeline/cc.txt"),
            "--news-lm",
            &out("news.bin"),
            "--gen-lm",
            &out("gen.bin"),
            "--out",
            &out("selected.txt"),
        ]),
        None,
    );
    step(
        "spm-train",
        s(&[
            "spm-train",
            "--sizes",
            &fx("pipeline/spm/sizes.json"),
            "--vocab",
            "200",
            "--seed",
            "5",
            "--out",
            &out("bpe.txt"),
        ]),
        None,
    );
    step(
        "spm-encode",
        s(&[
            "spm-encode",
            "--model",
            &out("bpe.txt"),
            "--in",
            &fx("pipeline/spm/de.txt"),
            "--out",
            &out("ids.txt"),
        ]),
        None,
    );
    step(
        "spm-decode",
        s(&[
            "spm-decode",
            "--model",
            &out("bpe.txt"),
            "--in",
            &out("ids.txt"),
            "--out",
            &out("decoded.txt"),
        ]),
        None,
    );
    step(
        "mine",
        s(&[
            "mine",
            "--src",
            &out("src.emb"),
            "--tgt",
            &out("tgt.emb"),
            "--out",
            &out("mined.tsv"),
        ]),
        None,
    );
    std::fs::write(dir.join("sizes.json"), r#"{"cc": 80, "ha": 5}"#).unwrap();
    step(
        "shard-plan",
        s(&[
            "shard-plan",
            "--sizes",
            &out("sizes.json"),
            "--base",
            "ha",
            "--out",
            &out("plan.json"),
        ]),
        None,
    );
    step(
        "shard-write",
        s(&[
            "shard-write",
            "--plan",
            &out("plan.json"),
            "--corpus",
            "cc",
            "--in",
            &fx("pipeline/cc.txt"),
            "--out-dir",
            &out("shards"),
        ]),
        None,
    );
    step(
        "moe-route",
        s(&[
            "moe-route",
            "--logits",
            &fx("pipeline/logits.tsv"),
            "--out",
            &out("route.tsv"),
        ]),
        None,
    );
    let mut ckpt = s(&["ckpt-avg", "--out", &out("avg.bin")]);
    for step in [3000, 7000, 1000, 5000, 2000, 6000, 4000] {
        ckpt.push(out(&format!("checkpoint{step}.bin")));
    }
    step("ckpt-avg", ckpt, None);
    step(
        "rerank-tune",
        s(&[
            "rerank-tune",
            "--nbest",
            &fx("rerank/nbest.txt"),
            "--refs",
            &fx("rerank/refs.txt"),
            "--seed",
            "17",
            "--out",
            &out("weights.json"),
        ]),
        None,
    );
    step(
        "rerank",
        s(&[
            "rerank",
            "--nbest",
            &fx("rerank/nbest.txt"),
            "--weights",
            &out("weights.json"),
            "--out",
            &out("best.txt"),
        ]),
        None,
    );
    step(
        "bleu",
        s(&[
            "bleu",
            "--hyp",
            &out("best.txt"),
            "--ref",
            &fx("rerank/refs.txt"),
        ]),
        None,
    );
    step(
        "postprocess",
        s(&["postprocess", "--lang", "zh"]),
        Some(std::fs::read(fixture("bleu/hyp.txt")).unwrap()),
    );
    step("config-dump", s(&["config-dump"]), None);

    let mut artifacts = stdout_of;
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                artifacts.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    artifacts
}
