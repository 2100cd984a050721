//! Checkpoint averaging: elementwise means over parameter bundles, last-k
//! window selection and the finetuned/base merge with validation fallback.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::ByteReader;

pub const DEFAULT_AVG_LAST: usize = 5;

const MAGIC: &[u8] = b"MTFG-CKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }
}

/// Named tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorBundle {
    entries: Vec<(String, Tensor)>,
}

impl TensorBundle {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate tensor name `{name}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.data.len()).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| {
                    (
                        n.clone(),
                        Tensor {
                            shape: t.shape.clone(),
                            data: t.data.iter().map(|&x| f(x)).collect(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Same names in the same order with identical shapes.
    pub fn check_compatible(&self, other: &TensorBundle) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            let missing = self
                .entries
                .iter()
                .map(|(n, _)| n)
                .chain(other.entries.iter().map(|(n, _)| n))
                .find(|n| self.get(n).is_none() || other.get(n).is_none())
                .cloned()
                .unwrap_or_default();
            return Err(Error::IncompatibleTensor {
                name: missing,
                reason: format!(
                    "bundles hold {} and {} tensors",
                    self.entries.len(),
                    other.entries.len()
                ),
            });
        }
        for ((a_name, a), (b_name, b)) in self.entries.iter().zip(&other.entries) {
            if a_name != b_name {
                return Err(Error::IncompatibleTensor {
                    name: a_name.clone(),
                    reason: format!("paired with `{b_name}`"),
                });
            }
            if a.shape != b.shape {
                return Err(Error::IncompatibleTensor {
                    name: a_name.clone(),
                    reason: format!("shape {:?} vs {:?}", a.shape, b.shape),
                });
            }
        }
        Ok(())
    }

    /// `MTFG-CKPT`, u32 tensor count, then per tensor: u32 name length,
    /// UTF-8 name, u8 rank, u64 dims, little-endian f32 values.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + 4 * self.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            let rank = u8::try_from(t.shape.len())
                .map_err(|_| Error::invalid(format!("tensor `{name}` has rank > 255")))?;
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "checkpoint");
        r.expect_magic(MAGIC)?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = r.string(len)?;
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| r.f32().map(f64::from))
                .collect::<Result<Vec<_>>>()?;
            entries.push((name, Tensor { shape, data }));
        }
        if !r.is_empty() {
            return Err(r.fail("trailing bytes".into()));
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

/// Elementwise sum by pairwise (tree) reduction over the bundle list.
fn pairwise_sum(data: &[&[f64]]) -> Vec<f64> {
    match data {
        [only] => only.to_vec(),
        _ => {
            let (lo, hi) = data.split_at(data.len() / 2);
            let mut acc = pairwise_sum(lo);
            for (a, b) in acc.iter_mut().zip(pairwise_sum(hi)) {
                *a += b;
            }
            acc
        }
    }
}

/// Elementwise arithmetic mean of compatible bundles, in the first bundle's
/// name order.
pub fn average(bundles: &[TensorBundle]) -> Result<TensorBundle> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::invalid("nothing to average"))?;
    for b in &bundles[1..] {
        first.check_compatible(b)?;
    }
    let k = bundles.len() as f64;
    let entries = first
        .entries
        .iter()
        .enumerate()
        .map(|(i, (name, t))| {
            let views: Vec<&[f64]> = bundles
                .iter()
                .map(|b| b.entries[i].1.data.as_slice())
                .collect();
            let mut data = pairwise_sum(&views);
            data.iter_mut().for_each(|x| *x /= k);
            (
                name.clone(),
                Tensor {
                    shape: t.shape.clone(),
                    data,
                },
            )
        })
        .collect();
    Ok(TensorBundle { entries })
}

/// The last `min(k, n)` checkpoints, in their original order.
pub fn last_k<T: Clone>(paths: &[T], k: usize) -> Result<Vec<T>> {
    if paths.is_empty() {
        return Err(Error::invalid("no checkpoints given"));
    }
    if k < 1 {
        return Err(Error::config("averaging window must be >= 1"));
    }
    Ok(paths[paths.len().saturating_sub(k)..].to_vec())
}

/// Sorts checkpoint paths the way training runs name them: by the last
/// integer in the file name, then lexically.
pub fn order_checkpoints(mut paths: Vec<PathBuf>) -> Vec<PathBuf> {
    fn step(p: &Path) -> Option<u64> {
        let name = p.file_name()?.to_str()?;
        name.split(|c: char| !c.is_ascii_digit())
            .rfind(|s| !s.is_empty())?
            .parse()
            .ok()
    }
    paths.sort_by(|a, b| step(a).cmp(&step(b)).then_with(|| a.cmp(b)));
    paths
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selected {
    Averaged,
    Finetuned,
}

/// Averages `base` with `finetuned` and keeps the average only if it scores
/// strictly better than `finetuned` on the validation metric.
pub fn finetune_select<F>(
    base: &TensorBundle,
    finetuned: &TensorBundle,
    mut valid_metric: F,
    higher_is_better: bool,
) -> Result<(TensorBundle, Selected)>
where
    F: FnMut(&TensorBundle) -> Result<f64>,
{
    let candidate = average(&[base.clone(), finetuned.clone()])?;
    let cand_score = valid_metric(&candidate)?;
    let ft_score = valid_metric(finetuned)?;
    let better = if higher_is_better {
        cand_score > ft_score
    } else {
        cand_score < ft_score
    };
    Ok(if better {
        (candidate, Selected::Averaged)
    } else {
        (finetuned.clone(), Selected::Finetuned)
    })
}
