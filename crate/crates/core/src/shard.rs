//! Epoch sharding: large and synthetic corpora are split into more shards
//! than the base (lowest-resource) bitext so that each epoch sees one shard
//! of each, which downsamples them to roughly the base corpus size.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusShards {
    pub lines: u64,
    pub shards: u64,
}

/// Serialized as `{corpus: {lines, shards}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShardPlan {
    pub corpora: BTreeMap<String, CorpusShards>,
}

/// `s_c = max(1, ceil(size_c / size_base))`, so the base corpus gets one shard.
pub fn plan_shards(sizes: &BTreeMap<String, u64>, base_corpus: &str) -> Result<ShardPlan> {
    if sizes.is_empty() {
        return Err(Error::invalid("no corpora to shard"));
    }
    if let Some((name, _)) = sizes.iter().find(|(_, &n)| n == 0) {
        return Err(Error::invalid(format!("corpus `{name}` is empty")));
    }
    let base = *sizes
        .get(base_corpus)
        .ok_or_else(|| Error::config(format!("base corpus `{base_corpus}` not among the sizes")))?;
    let corpora = sizes
        .iter()
        .map(|(name, &lines)| {
            let shards = lines.div_ceil(base).max(1);
            (name.clone(), CorpusShards { lines, shards })
        })
        .collect();
    Ok(ShardPlan { corpora })
}

impl ShardPlan {
    pub fn shard_count(&self, corpus: &str) -> Option<u64> {
        self.corpora.get(corpus).map(|c| c.shards)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: ShardPlan = serde_json::from_str(text)?;
        if plan.corpora.values().any(|c| c.shards == 0) {
            return Err(Error::Format {
                what: "shard plan",
                reason: "shard counts must be >= 1".into(),
            });
        }
        Ok(plan)
    }
}

/// Which shard each corpus contributes in `epoch`: `epoch mod s_c`.
pub fn epoch_manifest(plan: &ShardPlan, epoch: u64) -> BTreeMap<String, u64> {
    plan.corpora
        .iter()
        .map(|(name, c)| (name.clone(), epoch % c.shards))
        .collect()
}

/// Shard index of line `line_no` (round-robin).
pub fn shard_of(line_no: u64, shards: u64) -> u64 {
    line_no % shards
}

/// Splits `lines` round-robin into `shards` in-memory buckets.
pub fn split_lines<T: Clone>(lines: &[T], shards: u64) -> Result<Vec<Vec<T>>> {
    if shards < 1 {
        return Err(Error::config("shard count must be >= 1"));
    }
    let mut out = vec![Vec::new(); shards as usize];
    for (i, line) in lines.iter().enumerate() {
        out[shard_of(i as u64, shards) as usize].push(line.clone());
    }
    Ok(out)
}

pub fn shard_file_name(corpus: &str, shard: u64) -> String {
    format!("{corpus}.shard{shard}.txt")
}

/// Writes `<corpus>.shard<k>.txt` files under `out_dir`, line `i` going to
/// shard `i mod shards`. All shard files are created, even empty ones.
pub fn write_shards<I, S>(
    corpus: I,
    name: &str,
    shards: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if shards < 1 {
        return Err(Error::config("shard count must be >= 1"));
    }
    let paths: Vec<PathBuf> = (0..shards)
        .map(|k| out_dir.join(shard_file_name(name, k)))
        .collect();
    let mut writers = paths
        .iter()
        .map(|p| File::create(p).map(BufWriter::new))
        .collect::<std::io::Result<Vec<_>>>()?;
    for (i, line) in corpus.into_iter().enumerate() {
        let w = &mut writers[shard_of(i as u64, shards) as usize];
        w.write_all(line.as_ref().as_bytes())?;
        w.write_all(b"\n")?;
    }
    for mut w in writers {
        w.flush()?;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(n, s)| (n.to_string(), *s)).collect()
    }

    #[test]
    fn table_one_fixture() {
        let plan = plan_shards(
            &sizes(&[("de-bitext", 571_000_000), ("ha-bitext", 1_700_000)]),
            "ha-bitext",
        )
        .unwrap();
        assert_eq!(plan.shard_count("de-bitext"), Some(336));
        assert_eq!(plan.shard_count("ha-bitext"), Some(1));
        assert_eq!(epoch_manifest(&plan, 336)["de-bitext"], 0);
        assert_eq!(epoch_manifest(&plan, 337)["de-bitext"], 1);
    }

    #[test]
    fn degenerate_plans() {
        let single = plan_shards(&sizes(&[("a", 12)]), "a").unwrap();
        assert_eq!(single.shard_count("a"), Some(1));
        let equal = plan_shards(&sizes(&[("a", 10), ("b", 10)]), "a").unwrap();
        assert_eq!(equal.shard_count("b"), Some(1));
        let smaller = plan_shards(&sizes(&[("a", 10), ("b", 3)]), "a").unwrap();
        assert_eq!(smaller.shard_count("b"), Some(1));
        assert!(plan_shards(&sizes(&[("a", 10), ("b", 0)]), "a").is_err());
        assert!(matches!(
            plan_shards(&sizes(&[("a", 10)]), "zz"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn manifest_cycles() {
        let plan = plan_shards(&sizes(&[("base", 10), ("big", 30)]), "base").unwrap();
        let seq: Vec<u64> = (0..6).map(|e| epoch_manifest(&plan, e)["big"]).collect();
        assert_eq!(seq, [0, 1, 2, 0, 1, 2]);
        assert!((0..6).all(|e| epoch_manifest(&plan, e)["base"] == 0));
    }

    #[test]
    fn split_sizes() {
        let ten: Vec<u32> = (0..10).collect();
        let two = split_lines(&ten, 2).unwrap();
        assert_eq!(two[0], [0, 2, 4, 6, 8]);
        assert_eq!(two[1], [1, 3, 5, 7, 9]);
        let seven: Vec<u32> = (0..7).collect();
        let lens: Vec<usize> = split_lines(&seven, 3)
            .unwrap()
            .iter()
            .map(Vec::len)
            .collect();
        assert_eq!(lens, [3, 2, 2]);
        assert_eq!(split_lines(&seven, 1).unwrap(), vec![seven.clone()]);
        assert!(split_lines(&seven, 0).is_err());
    }

    #[test]
    fn plan_json_shape() {
        let plan = plan_shards(&sizes(&[("a", 10), ("b", 25)]), "a").unwrap();
        let json = plan.to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["b"]["lines"], 25);
        assert_eq!(value["b"]["shards"], 3);
        assert_eq!(ShardPlan::from_json(&json).unwrap(), plan);
    }

    #[test]
    fn writes_shard_files() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<String> = (0..7).map(|i| format!("line {i}")).collect();
        let paths = write_shards(&lines, "cc", 3, dir.path()).unwrap();
        assert_eq!(paths[1].file_name().unwrap(), "cc.shard1.txt");
        let read: Vec<Vec<String>> = paths
            .iter()
            .map(|p| crate::io::read_lines(p).unwrap())
            .collect();
        assert_eq!(read[0], ["line 0", "line 3", "line 6"]);
        assert_eq!(read[2], ["line 2", "line 5"]);
    }
}
