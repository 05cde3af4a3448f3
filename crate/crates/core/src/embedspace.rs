//! Exact cosine range search over unit-normalized document embeddings.
//!
//! Scores are dot products of `f32` rows accumulated in `f64` in coordinate
//! order, so a pair's score does not depend on how the search is tiled or
//! scheduled.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, Document, NormalizationConfig};
use crate::error::{Error, Result};
use crate::hash::hash_bytes;
use crate::overlap::{Metric, ScoredPair};
use crate::par;
use crate::sketch::{read_u16, read_u32, read_u64};

const EMBED_MAGIC: &[u8; 4] = b"EMBD";
const EMBED_VERSION: u32 = 1;

/// Rows whose norm is within this of 1 are stored as given.
pub const NORM_TOLERANCE: f64 = 1e-3;
/// Rows within this of 1 (but outside [`NORM_TOLERANCE`]) are renormalized;
/// anything further out is rejected.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-2;
/// Pairs scoring within this below the threshold are still kept.
pub const THRESHOLD_SLACK: f64 = 1e-6;

const BLOCK: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    model_tag: String,
    renormalized: usize,
}

impl EmbeddingMatrix {
    /// Validates and (within tolerance) renormalizes `n x dim` row-major data.
    pub fn new(
        ids: Vec<String>,
        dim: usize,
        mut data: Vec<f32>,
        model_tag: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::format("embedding", "dimension must be positive"));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::format(
                "embedding",
                format!(
                    "{} values for {} rows of dimension {dim}",
                    data.len(),
                    ids.len()
                ),
            ));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let mut renormalized = 0;
        for (id, row) in ids.iter().zip(data.chunks_exact_mut(dim)) {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::BadVector {
                    id: id.clone(),
                    message: "non-finite value".into(),
                });
            }
            let norm = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            let off = (norm - 1.0).abs();
            if off > RENORMALIZE_TOLERANCE {
                return Err(Error::BadVector {
                    id: id.clone(),
                    message: format!("norm {norm} is not within {RENORMALIZE_TOLERANCE} of 1"),
                });
            }
            if off > NORM_TOLERANCE {
                for x in row.iter_mut() {
                    *x = (*x as f64 / norm) as f32;
                }
                renormalized += 1;
            }
        }
        if renormalized > 0 {
            log::warn!("renormalized {renormalized} embedding rows");
        }
        Ok(EmbeddingMatrix {
            ids,
            dim,
            data,
            model_tag: model_tag.into(),
            renormalized,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    /// Rows that needed renormalization when the matrix was built.
    pub fn renormalized_rows(&self) -> usize {
        self.renormalized
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        dot(self.row(i), self.row(j))
    }

    /// Reorders rows to follow `ids`, which must be a permutation of this
    /// matrix's ids.
    pub fn aligned_to<S: AsRef<str>>(&self, ids: &[S]) -> Result<EmbeddingMatrix> {
        let pos: std::collections::HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let i = *pos.get(id.as_ref()).ok_or_else(|| {
                Error::format(
                    "embedding",
                    format!("no vector for document {:?}", id.as_ref()),
                )
            })?;
            data.extend_from_slice(self.row(i));
        }
        if ids.len() != self.ids.len() {
            return Err(Error::format(
                "embedding",
                format!("{} vectors for {} documents", self.ids.len(), ids.len()),
            ));
        }
        Ok(EmbeddingMatrix {
            ids: ids.iter().map(|s| s.as_ref().to_owned()).collect(),
            dim: self.dim,
            data,
            model_tag: self.model_tag.clone(),
            renormalized: self.renormalized,
        })
    }
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    ExactRange,
    KnnThenFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeSearchConfig {
    /// Cosine similarity lower bound.
    pub threshold: f64,
    pub knn_k: usize,
    pub mode: SearchMode,
}

impl Default for RangeSearchConfig {
    fn default() -> Self {
        RangeSearchConfig {
            threshold: 0.92,
            knn_k: 900,
            mode: SearchMode::ExactRange,
        }
    }
}

impl RangeSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::config(format!(
                "cosine threshold {} outside [-1, 1]",
                self.threshold
            )));
        }
        if self.mode == SearchMode::KnnThenFilter && self.knn_k == 0 {
            return Err(Error::config("knn_k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub knn_k: usize,
    pub truncated_count: usize,
    /// Documents whose `knn_k`-th neighbor still clears the threshold.
    pub truncated_ids: Vec<String>,
}

pub fn range_search(m: &EmbeddingMatrix, cfg: &RangeSearchConfig) -> Result<Vec<ScoredPair>> {
    cfg.validate()?;
    Ok(match cfg.mode {
        SearchMode::ExactRange => exact_range(m, cfg.threshold),
        SearchMode::KnnThenFilter => knn_search(m, cfg.threshold, cfg.knn_k).0,
    })
}

pub fn knn_truncation_report(
    m: &EmbeddingMatrix,
    cfg: &RangeSearchConfig,
) -> Result<TruncationReport> {
    cfg.validate()?;
    if cfg.mode != SearchMode::KnnThenFilter {
        return Err(Error::config(
            "truncation report needs knn_then_filter mode",
        ));
    }
    Ok(knn_search(m, cfg.threshold, cfg.knn_k).1)
}

/// kNN-then-filter search together with its truncation report.
pub fn knn_range_search(
    m: &EmbeddingMatrix,
    cfg: &RangeSearchConfig,
) -> Result<(Vec<ScoredPair>, TruncationReport)> {
    cfg.validate()?;
    Ok(knn_search(m, cfg.threshold, cfg.knn_k))
}

fn exact_range(m: &EmbeddingMatrix, threshold: f64) -> Vec<ScoredPair> {
    let n = m.len();
    let cut = threshold - THRESHOLD_SLACK;
    let blocks = n.div_ceil(BLOCK);
    let per_block = par::map_range(0..blocks, |blk| {
        let rows = blk * BLOCK..((blk + 1) * BLOCK).min(n);
        let mut out = Vec::new();
        let mut tile = rows.start;
        while tile < n {
            let cols = tile..(tile + BLOCK).min(n);
            for i in rows.clone() {
                let qi = m.row(i);
                for j in cols.clone().filter(|&j| j > i) {
                    let s = dot(qi, m.row(j));
                    if s >= cut {
                        out.push(ScoredPair {
                            a: i as u32,
                            b: j as u32,
                            score: s,
                            metric: Metric::Cosine,
                        });
                    }
                }
            }
            tile += BLOCK;
        }
        out.sort_unstable_by_key(|p| (p.a, p.b));
        out
    });
    per_block.into_iter().flatten().collect()
}

fn knn_search(
    m: &EmbeddingMatrix,
    threshold: f64,
    k: usize,
) -> (Vec<ScoredPair>, TruncationReport) {
    let n = m.len();
    let cut = threshold - THRESHOLD_SLACK;
    let per_query = par::map_range_init(0..n, Vec::<(f64, u32)>::new, |scores, i| {
        scores.clear();
        let qi = m.row(i);
        scores.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (dot(qi, m.row(j)), j as u32)),
        );
        let by_rank = |x: &(f64, u32), y: &(f64, u32)| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1));
        let kk = k.min(scores.len());
        if kk < scores.len() {
            scores.select_nth_unstable_by(kk, by_rank);
            scores.truncate(kk);
        }
        scores.sort_unstable_by(by_rank);
        let truncated = scores.len() == k && scores.last().is_some_and(|s| s.0 >= cut);
        let hits: Vec<ScoredPair> = scores
            .iter()
            .take_while(|s| s.0 >= cut)
            .map(|&(s, j)| ScoredPair::new(i as u32, j, s, Metric::Cosine))
            .collect();
        (hits, truncated)
    });
    let mut pairs = Vec::new();
    let mut truncated_ids = Vec::new();
    for (i, (hits, truncated)) in per_query.into_iter().enumerate() {
        pairs.extend(hits);
        if truncated {
            truncated_ids.push(m.ids[i].clone());
        }
    }
    par::sort_unstable_by(&mut pairs, |p, q| (p.a, p.b).cmp(&(q.a, q.b)));
    pairs.dedup_by_key(|p| (p.a, p.b));
    if !truncated_ids.is_empty() {
        log::warn!(
            "{} documents have at least {k} neighbors above the threshold; results may be truncated",
            truncated_ids.len()
        );
    }
    (
        pairs,
        TruncationReport {
            knn_k: k,
            truncated_count: truncated_ids.len(),
            truncated_ids,
        },
    )
}

/// Deterministic character-trigram hashing vectorizer.
///
/// Stands in for a neural encoder in fixtures and smoke runs: documents that
/// share most of their characters get high cosine similarity.
pub fn hashing_embed(
    docs: &[Document],
    dim: usize,
    cfg: &NormalizationConfig,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    if dim == 0 {
        return Err(Error::config("embedding dimension must be positive"));
    }
    let rows = par::map(docs, |d| {
        let text: Vec<char> = format!(" {} ", normalize(&d.text, cfg)).chars().collect();
        let mut v = vec![0f64; dim];
        let mut buf = String::new();
        for w in text.windows(3) {
            buf.clear();
            buf.extend(w);
            let h = hash_bytes(buf.as_bytes(), seed);
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        Some(
            v.into_iter()
                .map(|x| (x / norm) as f32)
                .collect::<Vec<f32>>(),
        )
    });
    let mut data = Vec::with_capacity(docs.len() * dim);
    for (d, row) in docs.iter().zip(rows) {
        let row = row.ok_or_else(|| Error::BadVector {
            id: d.id.clone(),
            message: "empty document has no embedding".into(),
        })?;
        data.extend(row);
    }
    EmbeddingMatrix::new(
        docs.iter().map(|d| d.id.clone()).collect(),
        dim,
        data,
        format!("char3-hash-{dim}"),
    )
}

pub fn write_embeddings_to<W: Write>(m: &EmbeddingMatrix, writer: W) -> Result<()> {
    let io = |e| Error::io("<embeddings>", e);
    let mut w = BufWriter::new(writer);
    let tag = m.model_tag.as_bytes();
    let tag_len =
        u16::try_from(tag.len()).map_err(|_| Error::format("embedding", "model tag too long"))?;
    w.write_all(EMBED_MAGIC).map_err(io)?;
    w.write_all(&EMBED_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(m.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(m.dim as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&tag_len.to_le_bytes()).map_err(io)?;
    w.write_all(tag).map_err(io)?;
    for id in &m.ids {
        let len = u16::try_from(id.len())
            .map_err(|_| Error::format("embedding", format!("id {id:?} too long")))?;
        w.write_all(&len.to_le_bytes()).map_err(io)?;
        w.write_all(id.as_bytes()).map_err(io)?;
    }
    for x in &m.data {
        w.write_all(&x.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_embeddings_to(m, file)
}

pub fn read_embeddings<R: Read>(reader: R) -> Result<EmbeddingMatrix> {
    let mut r = BufReader::new(reader);
    let bad = |m: String| Error::format("embedding", m);
    let trunc = || bad("truncated header".into());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| trunc())?;
    if &magic != EMBED_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = read_u32(&mut r).ok_or_else(trunc)?;
    if version != EMBED_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = read_u64(&mut r).ok_or_else(trunc)? as usize;
    let dim = read_u32(&mut r).ok_or_else(trunc)? as usize;
    let tag_len = read_u16(&mut r).ok_or_else(trunc)? as usize;
    let mut tag = vec![0u8; tag_len];
    r.read_exact(&mut tag).map_err(|_| trunc())?;
    let tag = String::from_utf8(tag).map_err(|_| bad("model tag not UTF-8".into()))?;
    let mut ids = Vec::with_capacity(n.min(1 << 24));
    for i in 0..n {
        let len = read_u16(&mut r).ok_or_else(|| bad(format!("truncated id table at row {i}")))?;
        let mut id = vec![0u8; len as usize];
        r.read_exact(&mut id)
            .map_err(|_| bad(format!("truncated id table at row {i}")))?;
        ids.push(String::from_utf8(id).map_err(|_| bad(format!("row {i}: id not UTF-8")))?);
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io("<embeddings>", e))?;
    if bytes.len() != n * dim * 4 {
        return Err(bad(format!(
            "expected {} bytes of vector data for n={n} d={dim}, found {}",
            n * dim * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingMatrix::new(ids, dim, data, tag)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("d{i}")).collect()
    }

    #[test]
    fn loads_unit_rows() {
        let m = EmbeddingMatrix::new(ids(3), 2, vec![1., 0., 0., 1., 0.6, 0.8], "t").unwrap();
        assert_eq!(m.len(), 3);
        for i in 0..3 {
            assert!((dot(m.row(i), m.row(i)) - 1.0).abs() <= 1e-3);
        }
        assert_eq!(m.renormalized_rows(), 0);
    }

    #[test]
    fn slightly_off_rows_are_renormalized() {
        let m = EmbeddingMatrix::new(ids(1), 2, vec![0.995, 0.0], "t").unwrap();
        assert_eq!(m.renormalized_rows(), 1);
        assert!((dot(m.row(0), m.row(0)).sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bad_rows_are_rejected_by_id() {
        match EmbeddingMatrix::new(ids(2), 2, vec![1., 0., 0.5, 0.], "t") {
            Err(Error::BadVector { id, .. }) => assert_eq!(id, "d1"),
            other => panic!("unexpected {other:?}"),
        }
        match EmbeddingMatrix::new(ids(2), 2, vec![f32::NAN, 0., 1., 0.], "t") {
            Err(Error::BadVector { id, .. }) => assert_eq!(id, "d0"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(EmbeddingMatrix::new(ids(2), 2, vec![1., 0., 1.], "t").is_err());
        assert!(matches!(
            EmbeddingMatrix::new(vec!["x".into(), "x".into()], 1, vec![1., 1.], "t"),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn identical_and_orthogonal_vectors() {
        let m = EmbeddingMatrix::new(ids(3), 2, vec![1., 0., 1., 0., 0., 1.], "t").unwrap();
        let cfg = RangeSearchConfig {
            threshold: 0.9,
            ..Default::default()
        };
        let pairs = range_search(&m, &cfg).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].a, pairs[0].b, pairs[0].score), (0, 1, 1.0));

        let orth = EmbeddingMatrix::new(ids(2), 2, vec![1., 0., 0., 1.], "t").unwrap();
        let cfg = RangeSearchConfig {
            threshold: 0.5,
            ..Default::default()
        };
        assert!(range_search(&orth, &cfg).unwrap().is_empty());
    }

    #[test]
    fn pigeonhole_truncation() {
        let n = 901;
        let m = EmbeddingMatrix::new(ids(n), 2, [1f32, 0.].repeat(n), "t").unwrap();
        let cfg = RangeSearchConfig {
            threshold: 0.9,
            knn_k: 900,
            mode: SearchMode::KnnThenFilter,
        };
        let report = knn_truncation_report(&m, &cfg).unwrap();
        assert!(report.truncated_count >= 1);
        assert!(knn_truncation_report(&m, &RangeSearchConfig::default()).is_err());
    }

    #[test]
    fn small_clusters_are_never_truncated() {
        // 50 groups of 4 identical basis vectors, k well above the group size.
        let dim = 64;
        let mut data = Vec::new();
        for g in 0..50 {
            for _ in 0..4 {
                let mut row = vec![0f32; dim];
                row[g] = 1.0;
                data.extend(row);
            }
        }
        let m = EmbeddingMatrix::new(ids(200), dim, data, "t").unwrap();
        let cfg = RangeSearchConfig {
            threshold: 0.99,
            knn_k: 10,
            mode: SearchMode::KnnThenFilter,
        };
        let (knn, report) = knn_range_search(&m, &cfg).unwrap();
        assert_eq!(report.truncated_count, 0);
        let exact = range_search(
            &m,
            &RangeSearchConfig {
                mode: SearchMode::ExactRange,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(knn, exact);
        assert_eq!(exact.len(), 50 * 6);
    }

    #[test]
    fn embedding_file_round_trip_and_errors() {
        let m = EmbeddingMatrix::new(ids(2), 3, vec![1., 0., 0., 0., 0.6, 0.8], "tag-x").unwrap();
        let mut buf = Vec::new();
        write_embeddings_to(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"EMBD");
        assert_eq!(read_embeddings(buf.as_slice()).unwrap(), m);
        assert!(read_embeddings(&buf[..buf.len() - 2]).is_err());

        let mut bad = buf.clone();
        let tail = bad.len() - 4;
        bad[tail..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        match read_embeddings(bad.as_slice()) {
            Err(Error::BadVector { id, .. }) => assert_eq!(id, "d1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hashing_embed_is_deterministic_and_unit() {
        let docs = vec![
            Document::new("a", "the quick brown fox"),
            Document::new("b", "the quick brown fox"),
            Document::new("c", "entirely different words here"),
        ];
        let cfg = NormalizationConfig::default();
        let m = hashing_embed(&docs, 128, &cfg, 1).unwrap();
        assert_eq!(m, hashing_embed(&docs, 128, &cfg, 1).unwrap());
        assert!((m.cosine(0, 1) - 1.0).abs() < 1e-6);
        assert!(m.cosine(0, 2) < 0.5);
        assert!(hashing_embed(&[Document::new("e", "")], 8, &cfg, 0).is_err());
    }

    #[test]
    fn alignment_follows_requested_order() {
        let m = EmbeddingMatrix::new(ids(2), 2, vec![1., 0., 0., 1.], "t").unwrap();
        let flipped = m.aligned_to(&["d1", "d0"]).unwrap();
        assert_eq!(flipped.row(0), &[0., 1.]);
        assert!(m.aligned_to(&["d1", "zz"]).is_err());
        assert!(m.aligned_to(&["d1"]).is_err());
    }
}
