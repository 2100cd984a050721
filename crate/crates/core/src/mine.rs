//! Margin-based parallel sentence mining over precomputed sentence
//! embeddings.
//!
//! Candidates come from exact k-nearest-neighbor lists in both directions.
//! Each candidate is scored with the ratio margin
//!
//! ```text
//! margin(x, y) = cos(x, y) / (Σ nn_k(x) / 2k + Σ nn_k(y) / 2k)
//! ```
//!
//! and pairs are matched greedily one-to-one in descending margin order.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::io::ByteReader;

pub const DEFAULT_K: usize = 4;
pub const DEFAULT_THRESHOLD: f64 = 1.06;

const MAGIC: &[u8] = b"MTFG-EMB";
/// Rows loaded from disk may deviate this much from unit norm unless the
/// caller explicitly asks for renormalization.
pub const LOAD_NORM_TOLERANCE: f64 = 0.01;
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    vectors: Array2<f64>,
    lang: String,
}

impl EmbeddingSet {
    /// Rows must already be unit length (within 1e-6) and ids unique.
    pub fn new(ids: Vec<String>, vectors: Array2<f64>, lang: impl Into<String>) -> Result<Self> {
        if vectors.nrows() == 0 || vectors.ncols() == 0 {
            return Err(Error::invalid(
                "embedding set must have at least one row and column",
            ));
        }
        if ids.len() != vectors.nrows() {
            return Err(Error::invalid(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                vectors.nrows()
            )));
        }
        let unique: HashSet<&String> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::invalid("embedding ids are not unique"));
        }
        for (i, row) in vectors.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > UNIT_TOLERANCE || !norm.is_finite() {
                return Err(Error::invalid(format!(
                    "row `{}` has norm {norm}, expected unit length",
                    ids[i]
                )));
            }
        }
        Ok(Self {
            ids,
            vectors,
            lang: lang.into(),
        })
    }

    /// Scales every row to unit length first; zero rows are rejected.
    pub fn normalized(
        ids: Vec<String>,
        mut vectors: Array2<f64>,
        lang: impl Into<String>,
    ) -> Result<Self> {
        for (i, mut row) in vectors.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::invalid(format!("row {i} cannot be normalized")));
            }
            row /= norm;
        }
        Self::new(ids, vectors, lang)
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn lang(&self) -> &str {
        &self.lang
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    /// `MTFG-EMB`, u32 n, u32 d, n·d little-endian f32, then n ids separated
    /// by newlines.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.vectors.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.vectors.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend_from_slice(self.ids.join("\n").as_bytes());
        out.push(b'\n');
        out
    }

    /// Parses the binary container. Without `renormalize`, any row whose
    /// stored norm is off by more than 0.01 is an error; accepted rows are
    /// always rescaled to exact unit length.
    pub fn from_bytes(bytes: &[u8], lang: &str, renormalize: bool) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "embedding");
        r.expect_magic(MAGIC)?;
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        let count = n
            .checked_mul(d)
            .ok_or_else(|| r.fail("dimensions overflow".into()))?;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(r.f32()? as f64);
        }
        let ids_text = std::str::from_utf8(r.rest()).map_err(|e| r.fail(e.to_string()))?;
        let ids: Vec<String> = ids_text
            .strip_suffix('\n')
            .unwrap_or(ids_text)
            .split('\n')
            .map(str::to_string)
            .collect();
        if ids.len() != n {
            return Err(r.fail(format!("{n} rows but {} ids", ids.len())));
        }
        let vectors = Array2::from_shape_vec((n, d), data).map_err(|e| r.fail(e.to_string()))?;
        if !renormalize {
            for (i, row) in vectors.rows().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if !((norm - 1.0).abs() <= LOAD_NORM_TOLERANCE) {
                    return Err(r.fail(format!(
                        "row `{}` has norm {norm:.4}; pass renormalize to accept it",
                        ids[i]
                    )));
                }
            }
        }
        Self::normalized(ids, vectors, lang)
    }

    pub fn load(path: &Path, lang: &str, renormalize: bool) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, lang, renormalize)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub cosine: f64,
}

fn by_similarity(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.cosine
        .total_cmp(&a.cosine)
        .then_with(|| a.index.cmp(&b.index))
}

/// Exact top-k neighbors of every query row among the index rows, by cosine
/// (rows are unit vectors). Ties go to the lower index row.
pub fn knn(query: &EmbeddingSet, index: &EmbeddingSet, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    if k < 1 || k > index.len() {
        return Err(Error::invalid(format!(
            "k = {k} must be in 1..={} (index size)",
            index.len()
        )));
    }
    if query.dim() != index.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            query.dim(),
            index.dim()
        )));
    }
    let rows: Vec<usize> = (0..query.len()).collect();
    Ok(crate::par_map(&rows, |&q| {
        let x = query.row(q);
        let mut all: Vec<Neighbor> = index
            .vectors
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, y)| Neighbor {
                index: i,
                cosine: x.dot(&y),
            })
            .collect();
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, by_similarity);
            all.truncate(k);
        }
        all.sort_by(by_similarity);
        all
    }))
}

fn margin_from_sums(cos: f64, sum_x: f64, sum_y: f64, k: usize) -> Result<f64> {
    let two_k = 2.0 * k as f64;
    let denom = sum_x / two_k + sum_y / two_k;
    if denom == 0.0 {
        if cos == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::invalid("margin denominator is zero"));
    }
    Ok(cos / denom)
}

/// Ratio margin of a candidate pair given each side's k neighbor cosines.
pub fn margin_score(cos_xy: f64, nn_x: &[f64], nn_y: &[f64], k: usize) -> Result<f64> {
    if k < 1 || nn_x.len() != k || nn_y.len() != k {
        return Err(Error::invalid(format!(
            "expected {k} neighbor cosines per side, got {} and {}",
            nn_x.len(),
            nn_y.len()
        )));
    }
    margin_from_sums(cos_xy, nn_x.iter().sum(), nn_y.iter().sum(), k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedPair {
    pub src_id: String,
    pub tgt_id: String,
    pub margin: f64,
}

impl MinedPair {
    pub fn to_tsv(&self) -> String {
        format!("{}\t{}\t{:.6}", self.src_id, self.tgt_id, self.margin)
    }
}

/// Scores every candidate from the forward and backward neighbor lists and
/// keeps a greedy one-to-one matching with margin >= `threshold`, in
/// non-increasing margin order. Equal margins are ordered by ids so the
/// result does not depend on input row order.
pub fn mine_pairs(
    src: &EmbeddingSet,
    tgt: &EmbeddingSet,
    k: usize,
    threshold: f64,
) -> Result<Vec<MinedPair>> {
    let forward = knn(src, tgt, k)?;
    let backward = knn(tgt, src, k)?;
    let sum = |list: &Vec<Neighbor>| list.iter().map(|n| n.cosine).sum::<f64>();
    let src_sums: Vec<f64> = forward.iter().map(sum).collect();
    let tgt_sums: Vec<f64> = backward.iter().map(sum).collect();

    let mut candidates: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (i, list) in forward.iter().enumerate() {
        candidates.extend(list.iter().map(|n| (i, n.index)));
    }
    for (j, list) in backward.iter().enumerate() {
        candidates.extend(list.iter().map(|n| (n.index, j)));
    }

    let mut scored = Vec::with_capacity(candidates.len());
    for (i, j) in candidates {
        let cos = src.row(i).dot(&tgt.row(j));
        let margin = margin_from_sums(cos, src_sums[i], tgt_sums[j], k)?;
        scored.push((margin, i, j));
    }
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| src.ids[a.1].cmp(&src.ids[b.1]))
            .then_with(|| tgt.ids[a.2].cmp(&tgt.ids[b.2]))
    });

    let mut used_src = vec![false; src.len()];
    let mut used_tgt = vec![false; tgt.len()];
    let mut out = Vec::new();
    for (margin, i, j) in scored {
        if !(margin >= threshold) {
            break;
        }
        if used_src[i] || used_tgt[j] {
            continue;
        }
        used_src[i] = true;
        used_tgt[j] = true;
        out.push(MinedPair {
            src_id: src.ids[i].clone(),
            tgt_id: tgt.ids[j].clone(),
            margin,
        });
    }
    Ok(out)
}
