//! MinHash signatures, collision-count LSH, banded LSH and S-curve analytics.
//!
//! Coordinate `i` of a signature is `min over shingles x of mix64(x ^ key_i)`
//! where `key_i` is the `i`-th SplitMix64 key derived from the global seed.
//! Because `mix64` is a bijection, each coordinate is the minimum of a
//! seeded pseudo-random permutation of the shingle hashes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ShingleSet;
use crate::error::{Error, Result};
use crate::hash::{derive_key, hash_u64s, mix64};
use crate::overlap::{candidate_pairs, InvertedIndex, Metric, ScoredPair};
use crate::par;

pub const EMPTY_SENTINEL: u64 = u64::MAX;

/// Seed for re-hashing band contents into bucket keys.
const BAND_SEED: u64 = 0x4d48_5347_4241_4e44;

const SIGNATURE_MAGIC: &[u8; 4] = b"MHSG";
const SIGNATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub doc_id: String,
    pub minima: Vec<u64>,
    pub seed: u64,
}

impl MinHashSignature {
    pub fn k(&self) -> usize {
        self.minima.len()
    }

    /// True for the signature of an empty shingle set.
    pub fn is_empty(&self) -> bool {
        self.minima.iter().all(|&m| m == EMPTY_SENTINEL)
    }

    pub fn agreement(&self, other: &MinHashSignature) -> usize {
        self.minima
            .iter()
            .zip(&other.minima)
            .filter(|(x, y)| x == y)
            .count()
    }

    /// Fraction of coordinates on which the two signatures agree.
    pub fn collision_fraction(&self, other: &MinHashSignature) -> f64 {
        self.agreement(other) as f64 / self.k() as f64
    }
}

/// Precomputed hash family for one `(k, seed)`.
#[derive(Debug, Clone)]
pub struct MinHasher {
    keys: Vec<u64>,
    seed: u64,
}

impl MinHasher {
    pub fn new(k: usize, seed: u64) -> Self {
        assert!(k >= 1, "a signature needs at least one hash function");
        MinHasher {
            keys: (0..k as u64).map(|i| derive_key(seed, i)).collect(),
            seed,
        }
    }

    pub fn k(&self) -> usize {
        self.keys.len()
    }

    pub fn sign(&self, set: &ShingleSet) -> MinHashSignature {
        let mut minima = vec![EMPTY_SENTINEL; self.keys.len()];
        for &x in set.shingles() {
            for (m, &key) in minima.iter_mut().zip(&self.keys) {
                let h = mix64(x ^ key);
                if h < *m {
                    *m = h;
                }
            }
        }
        MinHashSignature {
            doc_id: set.doc_id.clone(),
            minima,
            seed: self.seed,
        }
    }
}

pub fn minhash(set: &ShingleSet, k: usize, seed: u64) -> MinHashSignature {
    MinHasher::new(k, seed).sign(set)
}

pub fn sign_corpus(sets: &[ShingleSet], k: usize, seed: u64) -> Vec<MinHashSignature> {
    let hasher = MinHasher::new(k, seed);
    par::map(sets, |s| hasher.sign(s))
}

fn common_shape(sigs: &[MinHashSignature]) -> Result<Option<(usize, u64)>> {
    let Some(first) = sigs.first() else {
        return Ok(None);
    };
    let (k, seed) = (first.k(), first.seed);
    if let Some(bad) = sigs.iter().find(|s| s.k() != k || s.seed != seed) {
        return Err(Error::config(format!(
            "signature {:?} has k={} seed={}, expected k={k} seed={seed}",
            bad.doc_id,
            bad.k(),
            bad.seed
        )));
    }
    Ok(Some((k, seed)))
}

/// Pairs agreeing on at least `min_collisions` coordinates, scored by the
/// agreeing fraction. Empty-document signatures never pair.
pub fn collision_lsh(sigs: &[MinHashSignature], min_collisions: usize) -> Result<Vec<ScoredPair>> {
    let Some((k, _)) = common_shape(sigs)? else {
        return Ok(Vec::new());
    };
    if min_collisions < 1 || min_collisions > k {
        return Err(Error::config(format!(
            "min_collisions {min_collisions} outside 1..={k}"
        )));
    }
    let index = InvertedIndex::build(sigs, |s| {
        if s.is_empty() {
            Vec::new()
        } else {
            s.minima
                .iter()
                .enumerate()
                .map(|(i, &m)| (i as u32, m))
                .collect()
        }
    });
    let cands = candidate_pairs(&index, min_collisions as u32, None);
    Ok(cands
        .pairs
        .into_iter()
        .map(|(a, b, shared)| {
            ScoredPair::new(a, b, shared as f64 / k as f64, Metric::CollisionsFraction)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandingConfig {
    pub bands: usize,
    pub rows: usize,
}

impl Default for BandingConfig {
    fn default() -> Self {
        BandingConfig { bands: 15, rows: 2 }
    }
}

impl BandingConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.bands == 0 || self.rows == 0 {
            return Err(Error::config("bands and rows must be positive"));
        }
        if self.bands * self.rows > k {
            return Err(Error::config(format!(
                "{} bands x {} rows exceeds signature length {k}",
                self.bands, self.rows
            )));
        }
        Ok(())
    }

    pub fn signature_len(&self) -> usize {
        self.bands * self.rows
    }
}

/// `(band index, band hash)` bucket keys of one signature.
pub fn band_keys(sig: &MinHashSignature, cfg: &BandingConfig) -> Vec<(u32, u64)> {
    sig.minima[..cfg.signature_len()]
        .chunks_exact(cfg.rows)
        .enumerate()
        .map(|(b, rows)| (b as u32, hash_u64s(rows, BAND_SEED)))
        .collect()
}

/// Pairs sharing at least one band bucket, each once, scored by the
/// fraction of shared bands. Empty-document signatures never pair.
pub fn banded_lsh(sigs: &[MinHashSignature], cfg: &BandingConfig) -> Result<Vec<ScoredPair>> {
    let Some((k, _)) = common_shape(sigs)? else {
        return Ok(Vec::new());
    };
    cfg.validate(k)?;
    let index = InvertedIndex::build(sigs, |s| {
        if s.is_empty() {
            Vec::new()
        } else {
            band_keys(s, cfg)
        }
    });
    let cands = candidate_pairs(&index, 1, None);
    Ok(cands
        .pairs
        .into_iter()
        .map(|(a, b, shared)| {
            ScoredPair::new(
                a,
                b,
                shared as f64 / cfg.bands as f64,
                Metric::CollisionsFraction,
            )
        })
        .collect())
}

/// Probability that banded LSH pairs two documents of Jaccard similarity `s`.
pub fn s_curve(s: f64, cfg: &BandingConfig) -> f64 {
    1.0 - (1.0 - s.powi(cfg.rows as i32)).powi(cfg.bands as i32)
}

pub fn write_signatures_to<W: Write>(sigs: &[MinHashSignature], writer: W) -> Result<()> {
    let (k, seed) = common_shape(sigs)?.unwrap_or((0, 0));
    let io = |e| Error::io("<signatures>", e);
    let mut w = BufWriter::new(writer);
    w.write_all(SIGNATURE_MAGIC).map_err(io)?;
    w.write_all(&SIGNATURE_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(k as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&seed.to_le_bytes()).map_err(io)?;
    w.write_all(&(sigs.len() as u64).to_le_bytes())
        .map_err(io)?;
    for s in sigs {
        let id = s.doc_id.as_bytes();
        let len = u16::try_from(id.len())
            .map_err(|_| Error::format("signature", format!("id {:?} too long", s.doc_id)))?;
        w.write_all(&len.to_le_bytes()).map_err(io)?;
        w.write_all(id).map_err(io)?;
        for m in &s.minima {
            w.write_all(&m.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_signatures(sigs: &[MinHashSignature], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_signatures_to(sigs, file)
}

pub fn read_signatures<R: Read>(reader: R) -> Result<Vec<MinHashSignature>> {
    let mut r = BufReader::new(reader);
    let bad = |m: &str| Error::format("signature", m);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != SIGNATURE_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut r).ok_or_else(|| bad("truncated header"))?;
    if version != SIGNATURE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let k = read_u32(&mut r).ok_or_else(|| bad("truncated header"))? as usize;
    let seed = read_u64(&mut r).ok_or_else(|| bad("truncated header"))?;
    let count = read_u64(&mut r).ok_or_else(|| bad("truncated header"))?;
    let mut sigs = Vec::new();
    for i in 0..count {
        let truncated = || bad(&format!("truncated at record {i}"));
        let len = read_u16(&mut r).ok_or_else(truncated)? as usize;
        let mut id = vec![0u8; len];
        r.read_exact(&mut id).map_err(|_| truncated())?;
        let doc_id =
            String::from_utf8(id).map_err(|_| bad(&format!("record {i}: id not UTF-8")))?;
        let minima = (0..k)
            .map(|_| read_u64(&mut r))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        sigs.push(MinHashSignature {
            doc_id,
            minima,
            seed,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)
        .map_err(|e| Error::io("<signatures>", e))?
        != 0
    {
        return Err(bad("trailing bytes after last record"));
    }
    Ok(sigs)
}

pub fn load_signatures(path: impl AsRef<Path>) -> Result<Vec<MinHashSignature>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_signatures(file)
}

pub(crate) fn read_u16<R: Read>(r: &mut R) -> Option<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).ok()?;
    Some(u16::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Option<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).ok()?;
    Some(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(id: &str, hashes: impl IntoIterator<Item = u64>) -> ShingleSet {
        ShingleSet::from_hashes(id, 3, hashes.into_iter().collect())
    }

    #[test]
    fn empty_set_gives_sentinels() {
        let s = minhash(&set("e", []), 8, 1);
        assert_eq!(s.minima, vec![EMPTY_SENTINEL; 8]);
        assert!(s.is_empty());
    }

    #[test]
    fn identical_sets_identical_signatures() {
        let a = minhash(&set("a", 0..50), 16, 9);
        let b = minhash(&set("b", 0..50), 16, 9);
        assert_eq!(a.minima, b.minima);
        assert_ne!(a.minima, minhash(&set("a", 0..50), 16, 10).minima);
    }

    #[test]
    fn disjoint_large_sets_rarely_collide() {
        let a = minhash(&set("a", 0..2000), 256, 3);
        let b = minhash(&set("b", 10_000..12_000), 256, 3);
        assert!(a.collision_fraction(&b) <= 0.05);
    }

    #[test]
    fn identical_docs_emitted_by_both_lsh_variants() {
        let sigs = sign_corpus(
            &[set("a", 0..40), set("b", 0..40), set("c", 500..540)],
            30,
            5,
        );
        for m in 1..=30 {
            let pairs = collision_lsh(&sigs, m).unwrap();
            assert_eq!(pairs.len(), 1);
            assert_eq!((pairs[0].a, pairs[0].b, pairs[0].score), (0, 1, 1.0));
        }
        let banded = banded_lsh(&sigs, &BandingConfig::default()).unwrap();
        assert_eq!(banded.len(), 1);
        assert_eq!(banded[0].score, 1.0);
    }

    #[test]
    fn empty_documents_never_pair() {
        let sigs = sign_corpus(&[set("a", []), set("b", [])], 10, 0);
        assert!(collision_lsh(&sigs, 1).unwrap().is_empty());
        assert!(banded_lsh(&sigs, &BandingConfig { bands: 5, rows: 2 })
            .unwrap()
            .is_empty());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let sigs = sign_corpus(&[set("a", 0..5)], 10, 0);
        assert!(collision_lsh(&sigs, 0).is_err());
        assert!(collision_lsh(&sigs, 11).is_err());
        assert!(banded_lsh(&sigs, &BandingConfig::default()).is_err());
        let mixed = vec![sigs[0].clone(), minhash(&set("b", 0..5), 12, 0)];
        assert!(collision_lsh(&mixed, 1).is_err());
    }

    #[test]
    fn s_curve_values() {
        let cfg = BandingConfig::default();
        assert_eq!(s_curve(0.0, &cfg), 0.0);
        assert_eq!(s_curve(1.0, &cfg), 1.0);
        assert!((s_curve(0.5, &cfg) - (1.0 - 0.75f64.powi(15))).abs() < 1e-15);
        assert!((s_curve(0.5, &cfg) - 0.98664).abs() < 1e-5);
        let grid: Vec<f64> = (0..=100).map(|i| s_curve(i as f64 / 100.0, &cfg)).collect();
        assert!(grid.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn signature_file_rejects_corruption() {
        let sigs = sign_corpus(&[set("a", 0..5), set("b", 3..9)], 4, 2);
        let mut buf = Vec::new();
        write_signatures_to(&sigs, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"MHSG");
        assert_eq!(read_signatures(buf.as_slice()).unwrap(), sigs);
        assert!(read_signatures(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_signatures(extra.as_slice()).is_err());
        buf[0] = b'X';
        assert!(read_signatures(buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn signature_file_round_trip(ids in prop::collection::vec("[a-z]{1,12}", 0..8), k in 1usize..12, seed in any::<u64>()) {
            let sigs: Vec<_> = ids.iter().enumerate()
                .map(|(i, id)| minhash(&set(id, (i as u64)..(i as u64 + 7)), k, seed))
                .collect();
            let mut buf = Vec::new();
            write_signatures_to(&sigs, &mut buf).unwrap();
            prop_assert_eq!(read_signatures(buf.as_slice()).unwrap(), sigs);
        }
    }
}
