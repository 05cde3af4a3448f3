//! Exact N-gram overlap: inverted-index candidate generation and
//! min-normalized overlap / Jaccard scoring.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::ShingleSet;
use crate::error::{Error, Result};
use crate::par;

/// Postings lists longer than this are skipped by default.
pub const DEFAULT_HOT_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    OverlapMin,
    Jaccard,
    Cosine,
    CollisionsFraction,
    External,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::OverlapMin => "overlap_min",
            Metric::Jaccard => "jaccard",
            Metric::Cosine => "cosine",
            Metric::CollisionsFraction => "collisions_fraction",
            Metric::External => "external",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "overlap_min" => Metric::OverlapMin,
            "jaccard" => Metric::Jaccard,
            "cosine" => Metric::Cosine,
            "collisions_fraction" => Metric::CollisionsFraction,
            "external" => Metric::External,
            other => return Err(Error::config(format!("unknown metric {other:?}"))),
        })
    }
}

/// A scored document pair, by position in the corpus slice it was computed
/// from. `a < b` always.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub a: u32,
    pub b: u32,
    pub score: f64,
    pub metric: Metric,
}

impl ScoredPair {
    pub fn new(x: u32, y: u32, score: f64, metric: Metric) -> Self {
        debug_assert_ne!(x, y);
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        ScoredPair {
            a,
            b,
            score,
            metric,
        }
    }
}

/// An edge addressed by document ids, as stored in edge files.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub id_a: String,
    pub id_b: String,
    pub score: f64,
    pub metric: Metric,
}

pub fn overlap_min(a: &ShingleSet, b: &ShingleSet) -> f64 {
    overlap_from_counts(a.intersection_size(b), a.count(), b.count())
}

pub fn jaccard(a: &ShingleSet, b: &ShingleSet) -> f64 {
    jaccard_from_counts(a.intersection_size(b), a.count(), b.count())
}

#[inline]
pub fn overlap_from_counts(shared: usize, count_a: usize, count_b: usize) -> f64 {
    let denom = count_a.min(count_b);
    if denom == 0 {
        0.0
    } else {
        shared as f64 / denom as f64
    }
}

#[inline]
pub fn jaccard_from_counts(shared: usize, count_a: usize, count_b: usize) -> f64 {
    let union = count_a + count_b - shared;
    if union == 0 {
        0.0
    } else {
        shared as f64 / union as f64
    }
}

/// Key → sorted postings of document positions, stored as flat arrays.
///
/// Also keeps each document's key slots so that pair counting can walk a
/// document's keys without a hash lookup.
#[derive(Debug, Clone)]
pub struct InvertedIndex<K> {
    keys: Vec<K>,
    key_offsets: Vec<usize>,
    postings: Vec<u32>,
    doc_offsets: Vec<usize>,
    doc_slots: Vec<u32>,
}

impl<K: Ord + Copy + Send + Sync> InvertedIndex<K> {
    /// Builds the index from one key list per document. Repeated keys
    /// within a document count once.
    pub fn build<T, F>(docs: &[T], keys_of: F) -> Self
    where
        T: Sync,
        F: Fn(&T) -> Vec<K> + Sync + Send,
    {
        let per_doc = par::map(docs, |d| {
            let mut ks = keys_of(d);
            ks.sort_unstable();
            ks.dedup();
            ks
        });
        let total: usize = per_doc.iter().map(Vec::len).sum();
        let mut entries: Vec<(K, u32)> = Vec::with_capacity(total);
        for (doc, ks) in per_doc.iter().enumerate() {
            entries.extend(ks.iter().map(|&k| (k, doc as u32)));
        }
        drop(per_doc);
        par::sort_unstable(&mut entries);

        let mut keys = Vec::new();
        let mut key_offsets = vec![0];
        let mut postings = Vec::with_capacity(entries.len());
        let mut doc_counts = vec![0usize; docs.len()];
        for (k, doc) in &entries {
            if keys.last() != Some(k) {
                if !keys.is_empty() {
                    key_offsets.push(postings.len());
                }
                keys.push(*k);
            }
            postings.push(*doc);
            doc_counts[*doc as usize] += 1;
        }
        key_offsets.push(postings.len());
        if keys.is_empty() {
            key_offsets.truncate(1);
        }

        let mut doc_offsets = Vec::with_capacity(docs.len() + 1);
        doc_offsets.push(0);
        for c in &doc_counts {
            doc_offsets.push(doc_offsets.last().unwrap() + c);
        }
        let mut fill = doc_offsets.clone();
        let mut doc_slots = vec![0u32; postings.len()];
        for slot in 0..keys.len() {
            for &doc in &postings[key_offsets[slot]..key_offsets[slot + 1]] {
                doc_slots[fill[doc as usize]] = slot as u32;
                fill[doc as usize] += 1;
            }
        }

        InvertedIndex {
            keys,
            key_offsets,
            postings,
            doc_offsets,
            doc_slots,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.doc_offsets.len() - 1
    }

    pub fn num_keys(&self) -> usize {
        self.keys.len()
    }

    pub fn key(&self, slot: usize) -> K {
        self.keys[slot]
    }

    pub fn postings(&self, slot: usize) -> &[u32] {
        &self.postings[self.key_offsets[slot]..self.key_offsets[slot + 1]]
    }

    /// Postings for `key`, empty when absent.
    pub fn lookup(&self, key: &K) -> &[u32] {
        match self.keys.binary_search(key) {
            Ok(slot) => self.postings(slot),
            Err(_) => &[],
        }
    }

    /// Number of distinct keys of document `doc`.
    pub fn doc_count(&self, doc: usize) -> usize {
        self.doc_offsets[doc + 1] - self.doc_offsets[doc]
    }

    fn doc_slots(&self, doc: usize) -> &[u32] {
        &self.doc_slots[self.doc_offsets[doc]..self.doc_offsets[doc + 1]]
    }
}

impl InvertedIndex<u64> {
    pub fn from_shingles(sets: &[ShingleSet]) -> Self {
        Self::build(sets, |s| s.shingles().to_vec())
    }
}

/// Unordered document pairs with their exact shared-key counts.
#[derive(Debug, Clone, Default)]
pub struct Candidates {
    /// `(a, b, shared)` with `a < b`, sorted.
    pub pairs: Vec<(u32, u32, u32)>,
    /// Keys whose postings exceeded the cap and were ignored.
    pub hot_keys_skipped: usize,
}

/// Emits every document pair sharing at least `min_shared` keys, once, with
/// the exact shared count. Keys with more than `hot_cap` postings are skipped,
/// which undercounts pairs that share them.
pub fn candidate_pairs<K: Ord + Copy + Send + Sync>(
    index: &InvertedIndex<K>,
    min_shared: u32,
    hot_cap: Option<usize>,
) -> Candidates {
    assert!(min_shared >= 1, "min_shared must be at least 1");
    let n = index.num_docs();
    let is_hot = |slot: usize| hot_cap.is_some_and(|cap| index.postings(slot).len() > cap);
    let hot_keys_skipped = (0..index.num_keys()).filter(|&s| is_hot(s)).count();
    if hot_keys_skipped > 0 {
        log::warn!(
            "skipped {hot_keys_skipped} hot keys with more than {} postings",
            hot_cap.unwrap_or(0)
        );
    }

    let per_doc = par::map_range_init(
        0..n,
        || (vec![0u32; n], Vec::<u32>::new()),
        |(counts, touched), a| {
            for &slot in index.doc_slots(a) {
                let slot = slot as usize;
                if is_hot(slot) {
                    continue;
                }
                let post = index.postings(slot);
                let start = post.partition_point(|&d| d as usize <= a);
                for &b in &post[start..] {
                    let c = &mut counts[b as usize];
                    if *c == 0 {
                        touched.push(b);
                    }
                    *c += 1;
                }
            }
            touched.sort_unstable();
            let mut out = Vec::new();
            for &b in touched.iter() {
                let c = std::mem::take(&mut counts[b as usize]);
                if c >= min_shared {
                    out.push((a as u32, b, c));
                }
            }
            touched.clear();
            out
        },
    );
    Candidates {
        pairs: per_doc.into_iter().flatten().collect(),
        hot_keys_skipped,
    }
}

/// Scores candidate pairs and keeps those with `score >= threshold`.
pub fn score_edges(
    pairs: &[(u32, u32, u32)],
    sets: &[ShingleSet],
    metric: Metric,
    threshold: f64,
) -> Result<Vec<ScoredPair>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let score_fn: fn(usize, usize, usize) -> f64 = match metric {
        Metric::OverlapMin => overlap_from_counts,
        Metric::Jaccard => jaccard_from_counts,
        other => {
            return Err(Error::config(format!(
                "metric {other} cannot score shingle pairs"
            )))
        }
    };
    Ok(pairs
        .iter()
        .filter_map(|&(a, b, shared)| {
            let score = score_fn(
                shared as usize,
                sets[a as usize].count(),
                sets[b as usize].count(),
            );
            (score >= threshold).then(|| ScoredPair::new(a, b, score, metric))
        })
        .collect())
}

/// Resolves positions to ids, orienting each edge so `id_a < id_b`, sorted.
pub fn to_records<S: AsRef<str>>(pairs: &[ScoredPair], ids: &[S]) -> Vec<EdgeRecord> {
    let mut out: Vec<EdgeRecord> = pairs
        .iter()
        .map(|p| {
            let (x, y) = (ids[p.a as usize].as_ref(), ids[p.b as usize].as_ref());
            let (id_a, id_b) = if x < y { (x, y) } else { (y, x) };
            EdgeRecord {
                id_a: id_a.to_owned(),
                id_b: id_b.to_owned(),
                score: p.score,
                metric: p.metric,
            }
        })
        .collect();
    out.sort_by(|p, q| (&p.id_a, &p.id_b).cmp(&(&q.id_a, &q.id_b)));
    out
}

pub fn write_edges_to<W: Write>(records: &[EdgeRecord], writer: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        writeln!(w, "{}\t{}\t{}\t{}", r.id_a, r.id_b, r.score, r.metric)?;
    }
    w.flush()
}

pub fn write_edges(records: &[EdgeRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_edges_to(records, file).map_err(|e| Error::io(path, e))
}

pub fn read_edges<R: Read>(reader: R) -> Result<Vec<EdgeRecord>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let bad = |message: String| Error::Malformed {
            line: line_no,
            message,
        };
        let line = line.map_err(|e| bad(e.to_string()))?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad(format!(
                "expected 4 tab-separated fields, got {}",
                fields.len()
            )));
        }
        let score: f64 = fields[2]
            .parse()
            .map_err(|_| bad(format!("bad score {:?}", fields[2])))?;
        let metric: Metric = fields[3].parse().map_err(|e: Error| bad(e.to_string()))?;
        out.push(EdgeRecord {
            id_a: fields[0].to_owned(),
            id_b: fields[1].to_owned(),
            score,
            metric,
        });
    }
    Ok(out)
}

pub fn load_edges(path: impl AsRef<Path>) -> Result<Vec<EdgeRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_edges(file)
}
