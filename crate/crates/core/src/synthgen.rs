//! Synthetic corpora with known duplicate clusters.
//!
//! Each source article is drawn from a Zipf-weighted pseudo-word vocabulary
//! and reproduced a random number of times. Every reproduction passes through
//! a noise channel: prefix abridgement, word drops and OCR-style character
//! substitutions, deletions and insertions, with a per-copy severity factor so
//! that some copies come out clean and others badly garbled.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{shingle_corpus, Document, NormalizationConfig};
use crate::error::{Error, Result};
use crate::hash::{derive_key, mix64};
use crate::overlap::overlap_min;
use crate::par;

/// Hard cap on how many times one article is reproduced.
pub const MAX_REPRODUCTIONS: usize = 200;

/// Shingle orders reported by [`noise_report`].
pub const REPORT_ORDERS: [usize; 5] = [3, 4, 5, 10, 15];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub char_sub_rate: f64,
    pub char_del_rate: f64,
    pub char_ins_rate: f64,
    pub word_drop_rate: f64,
    pub abridge_prob: f64,
    /// Fraction of leading words kept by an abridged copy, drawn uniformly.
    pub abridge_keep_frac_range: (f64, f64),
    /// Log-scale spread of the per-copy severity multiplier applied to the
    /// character and word rates (mean multiplier 1). Zero gives every copy
    /// the same rates.
    pub severity_sigma: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel {
            char_sub_rate: 0.0,
            char_del_rate: 0.0,
            char_ins_rate: 0.0,
            word_drop_rate: 0.0,
            abridge_prob: 0.0,
            abridge_keep_frac_range: (1.0, 1.0),
            severity_sigma: 0.0,
        }
    }

    pub fn ocr_light() -> Self {
        NoiseModel {
            char_sub_rate: 0.004,
            char_del_rate: 0.001,
            char_ins_rate: 0.001,
            word_drop_rate: 0.002,
            abridge_prob: 0.3,
            abridge_keep_frac_range: (0.4, 1.0),
            severity_sigma: 0.5,
        }
    }

    /// Calibrated so duplicate pairs look like heavily OCR'd newswire: mean
    /// 3-gram overlap near 0.56 and roughly a fifth of duplicate pairs
    /// sharing no 10-gram.
    pub fn ocr_heavy() -> Self {
        NoiseModel {
            char_sub_rate: 0.015,
            char_del_rate: 0.0033,
            char_ins_rate: 0.0033,
            word_drop_rate: 0.01,
            abridge_prob: 0.5,
            abridge_keep_frac_range: (0.3, 1.0),
            severity_sigma: 1.1,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "none" => Ok(Self::none()),
            "ocr-light" => Ok(Self::ocr_light()),
            "ocr-heavy" => Ok(Self::ocr_heavy()),
            other => Err(Error::config(format!(
                "unknown noise preset {other:?} (expected none, ocr-light, ocr-heavy)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("char_sub_rate", self.char_sub_rate),
            ("char_del_rate", self.char_del_rate),
            ("char_ins_rate", self.char_ins_rate),
            ("word_drop_rate", self.word_drop_rate),
            ("abridge_prob", self.abridge_prob),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::config(format!("{name} = {r} outside [0, 1]")));
            }
        }
        let (lo, hi) = self.abridge_keep_frac_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::config(format!(
                "abridge_keep_frac_range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"
            )));
        }
        if !(self.severity_sigma >= 0.0 && self.severity_sigma.is_finite()) {
            return Err(Error::config(
                "severity_sigma must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Number of source articles; ignored when `target_docs` is set.
    pub n_sources: usize,
    /// Stop drawing sources once this many documents exist, trimming the
    /// last source's copies to hit the count exactly.
    pub target_docs: Option<usize>,
    /// Probability a source is never reproduced.
    pub singleton_fraction: f64,
    /// Mean number of appearances of a reproduced (count >= 2) source.
    pub mean_reproduction: f64,
    /// Explicit vocabulary; when empty a pseudo-word vocabulary of
    /// `vocab_size` words is generated from the seed.
    pub vocab: Vec<String>,
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    pub words_per_article_range: (usize, usize),
    pub n_newspapers: usize,
    pub date: Option<String>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_sources: 1000,
            target_docs: None,
            singleton_fraction: 0.85,
            mean_reproduction: 6.3,
            vocab: Vec::new(),
            vocab_size: 50_000,
            zipf_exponent: 0.8,
            words_per_article_range: (60, 400),
            n_newspapers: 973,
            date: None,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// Default settings sized to produce exactly `n_docs` documents.
    pub fn with_target_docs(n_docs: usize, seed: u64) -> Self {
        GeneratorConfig {
            n_sources: usize::MAX,
            target_docs: Some(n_docs),
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.singleton_fraction) {
            return Err(Error::config("singleton_fraction outside [0, 1]"));
        }
        if !(self.mean_reproduction >= 2.0 && self.mean_reproduction < 100.0) {
            return Err(Error::config(format!(
                "mean_reproduction {} must lie in [2, 100)",
                self.mean_reproduction
            )));
        }
        let (lo, hi) = self.words_per_article_range;
        if lo == 0 || lo > hi {
            return Err(Error::config(
                "words_per_article_range must satisfy 1 <= min <= max",
            ));
        }
        if self.vocab.is_empty() && self.vocab_size == 0 {
            return Err(Error::config("vocabulary is empty"));
        }
        if self.n_newspapers == 0 {
            return Err(Error::config("n_newspapers must be positive"));
        }
        if self.target_docs.is_none() && self.n_sources == usize::MAX {
            return Err(Error::config("set n_sources or target_docs"));
        }
        Ok(())
    }
}

/// Generator settings plus a noise model, as read from a synth config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub generator: GeneratorConfig,
    pub noise_preset: String,
    /// Explicit noise rates; overrides `noise_preset` when present.
    pub noise: Option<NoiseModel>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            generator: GeneratorConfig::default(),
            noise_preset: "ocr-heavy".into(),
            noise: None,
        }
    }
}

impl SynthSpec {
    pub fn noise_model(&self) -> Result<NoiseModel> {
        match self.noise {
            Some(m) => Ok(m),
            None => NoiseModel::preset(&self.noise_preset),
        }
    }
}

/// Probability of each reproduction count `1..=200` (index 0 is count 1).
///
/// Count 1 has probability `singleton_fraction`; counts `2..=200` follow a
/// truncated geometric law whose ratio is solved so the conditional mean is
/// exactly `mean_reproduction`.
pub fn reproduction_distribution(cfg: &GeneratorConfig) -> Vec<f64> {
    let target = cfg.mean_reproduction;
    let tail = |q: f64| -> (Vec<f64>, f64) {
        let w: Vec<f64> = (0..MAX_REPRODUCTIONS - 1)
            .map(|i| q.powi(i as i32))
            .collect();
        let z: f64 = w.iter().sum();
        let mean = w
            .iter()
            .enumerate()
            .map(|(i, x)| (i + 2) as f64 * x)
            .sum::<f64>()
            / z;
        (w, mean)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid).1 < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (w, _) = tail(0.5 * (lo + hi));
    let z: f64 = w.iter().sum();
    let mut probs = Vec::with_capacity(MAX_REPRODUCTIONS);
    probs.push(cfg.singleton_fraction);
    probs.extend(w.iter().map(|x| (1.0 - cfg.singleton_fraction) * x / z));
    probs
}

/// Reproduction counts per source, drawn sequentially from the seed.
pub fn draw_reproduction_counts(cfg: &GeneratorConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let probs = reproduction_distribution(cfg);
    let dist = WeightedIndex::new(&probs).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_key(cfg.seed, 0));
    let mut counts = Vec::new();
    let mut total = 0usize;
    loop {
        let done = match cfg.target_docs {
            Some(t) => total >= t,
            None => counts.len() >= cfg.n_sources,
        };
        if done {
            break;
        }
        let mut c = dist.sample(&mut rng) + 1;
        if let Some(t) = cfg.target_docs {
            c = c.min(t - total);
        }
        total += c;
        counts.push(c);
    }
    Ok(counts)
}

const ONSETS: [&str; 20] = [
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "br",
    "st", "tr",
];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ea"];
const CODAS: [&str; 8] = ["", "", "n", "r", "s", "t", "l", "nd"];

/// Deterministic pseudo-word vocabulary; shorter words come first so the
/// Zipf head is made of short words.
pub fn pseudo_vocabulary(size: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_key(seed, 1));
    let mut seen = HashSet::with_capacity(size);
    let mut words = Vec::with_capacity(size);
    let mut syllables = 1;
    let mut attempts = 0;
    while words.len() < size {
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
            w.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
        }
        attempts += 1;
        if seen.insert(w.clone()) {
            words.push(w);
        }
        // move on to longer words once short ones are exhausted
        if attempts > 40 * (words.len() + 1) || attempts > 200_000 {
            syllables += 1;
            attempts = 0;
        }
    }
    words
}

const CONFUSIONS: [(char, &str); 14] = [
    ('e', "co"),
    ('c', "eo"),
    ('o', "0ce"),
    ('l', "1it"),
    ('i', "l1j"),
    ('t', "lf"),
    ('a', "oe"),
    ('s', "58"),
    ('n', "mh"),
    ('m', "n"),
    ('h', "bn"),
    ('b', "h6"),
    ('r', "n"),
    ('u', "vn"),
];

fn confusable(c: char, pick: u32) -> char {
    let lower = c.to_ascii_lowercase();
    if let Some((_, alts)) = CONFUSIONS.iter().find(|(k, _)| *k == lower) {
        let alts: Vec<char> = alts.chars().collect();
        return alts[pick as usize % alts.len()];
    }
    let alt = (b'a' + (pick % 26) as u8) as char;
    if alt == lower {
        (b'a' + ((pick + 1) % 26) as u8) as char
    } else {
        alt
    }
}

/// Standard normal draw by Box-Muller.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Passes one reproduction of `text` through the noise channel.
pub fn apply_noise<R: Rng>(text: &str, noise: &NoiseModel, rng: &mut R) -> String {
    let mut words: Vec<&str> = text.split(' ').collect();
    let severity = if noise.severity_sigma > 0.0 {
        let s = noise.severity_sigma;
        (s * standard_normal(rng) - 0.5 * s * s).exp()
    } else {
        1.0
    };
    let scaled = |r: f64| (r * severity).min(1.0);

    if rng.gen::<f64>() < noise.abridge_prob {
        let (lo, hi) = noise.abridge_keep_frac_range;
        let frac = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let keep = ((words.len() as f64 * frac).ceil() as usize).clamp(1, words.len());
        words.truncate(keep);
    }
    let drop_rate = scaled(noise.word_drop_rate);
    if drop_rate > 0.0 {
        let kept: Vec<&str> = words
            .iter()
            .copied()
            .filter(|_| rng.gen::<f64>() >= drop_rate)
            .collect();
        if !kept.is_empty() {
            words = kept;
        }
    }

    let (del, sub, ins) = (
        scaled(noise.char_del_rate),
        scaled(noise.char_sub_rate),
        scaled(noise.char_ins_rate),
    );
    let joined = words.join(" ");
    if del + sub + ins == 0.0 {
        return joined;
    }
    let mut out = String::with_capacity(joined.len() + 8);
    for c in joined.chars() {
        // Fixed draws per character keep the stream aligned across rates.
        let (op, extra, pick): (f64, f64, u32) = (rng.gen(), rng.gen(), rng.gen());
        if op < del {
            // dropped
        } else if op < del + sub {
            out.push(if c == ' ' { '.' } else { confusable(c, pick) });
        } else {
            out.push(c);
        }
        if extra < ins {
            out.push((b'a' + (pick >> 8) as u8 % 26) as char);
        }
    }
    if out.trim().is_empty() {
        joined
    } else {
        out
    }
}

fn source_text<R: Rng>(
    rng: &mut R,
    vocab: &[String],
    dist: &WeightedIndex<f64>,
    len: usize,
) -> String {
    let mut out = String::new();
    let mut capitalize = true;
    for i in 0..len {
        if i > 0 {
            out.push(' ');
        }
        let w = &vocab[dist.sample(rng)];
        if capitalize {
            let mut chars = w.chars();
            if let Some(first) = chars.next() {
                out.extend(first.to_uppercase());
                out.push_str(chars.as_str());
            }
            capitalize = false;
        } else {
            out.push_str(w);
        }
        let r: f64 = rng.gen();
        if i + 1 == len || r < 0.06 {
            out.push('.');
            capitalize = true;
        } else if r < 0.11 {
            out.push(',');
        }
    }
    out
}

fn doc_id(seed: u64, source: usize, copy: usize) -> String {
    let key = derive_key(seed ^ 0x05ee_d1d5, ((source as u64) << 8) | copy as u64);
    format!("{:016x}", mix64(key))
}

/// Generates the corpus, sorted by document id, with `gold_cluster` set.
pub fn generate(cfg: &GeneratorConfig, noise: &NoiseModel) -> Result<Vec<Document>> {
    noise.validate()?;
    let counts = draw_reproduction_counts(cfg)?;
    let vocab = if cfg.vocab.is_empty() {
        pseudo_vocabulary(cfg.vocab_size, cfg.seed)
    } else {
        cfg.vocab.clone()
    };
    let weights: Vec<f64> = (1..=vocab.len())
        .map(|r| (r as f64).powf(-cfg.zipf_exponent))
        .collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::config(e.to_string()))?;
    let (lo, hi) = cfg.words_per_article_range;

    let per_source = par::map_range(0..counts.len(), |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_key(cfg.seed, s as u64 + 2));
        let len = rng.gen_range(lo..=hi);
        let text = source_text(&mut rng, &vocab, &dist, len);
        let newspapers: Vec<usize> = (0..counts[s])
            .map(|_| rng.gen_range(0..cfg.n_newspapers))
            .collect();
        let gold = format!("g{s:07}");
        (0..counts[s])
            .map(|c| {
                let body = if c == 0 {
                    text.clone()
                } else {
                    apply_noise(&text, noise, &mut rng)
                };
                Document {
                    id: doc_id(cfg.seed, s, c),
                    text: body,
                    date: cfg.date.clone(),
                    source: Some(format!("paper-{:03}", newspapers[c])),
                    gold_cluster: Some(gold.clone()),
                }
            })
            .collect::<Vec<_>>()
    });
    let mut docs: Vec<Document> = per_source.into_iter().flatten().collect();
    docs.sort_unstable_by(|a, b| a.id.cmp(&b.id));
    if docs.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::Invariant("generated document ids collided".into()));
    }
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramNoise {
    pub n: usize,
    /// Mean min-normalized overlap over gold duplicate pairs.
    pub mean_overlap: f64,
    /// Fraction of gold duplicate pairs sharing no N-gram.
    pub zero_shared_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub duplicate_pairs: usize,
    /// Set when the corpus has no gold duplicate pairs; `per_n` is then empty.
    pub no_duplicates: bool,
    pub per_n: Vec<NgramNoise>,
}

/// All unordered pairs of documents sharing a gold cluster, by position.
pub fn gold_pairs(docs: &[Document]) -> Result<Vec<(u32, u32)>> {
    let mut by_cluster: std::collections::BTreeMap<&str, Vec<u32>> = Default::default();
    for (i, d) in docs.iter().enumerate() {
        let g = d
            .gold_cluster
            .as_deref()
            .ok_or_else(|| Error::Unlabeled(d.id.clone()))?;
        by_cluster.entry(g).or_default().push(i as u32);
    }
    let mut pairs = Vec::new();
    for members in by_cluster.values() {
        for (k, &a) in members.iter().enumerate() {
            for &b in &members[k + 1..] {
                pairs.push((a, b));
            }
        }
    }
    Ok(pairs)
}

/// N-gram overlap statistics of gold duplicate pairs, for calibrating a
/// noise model against observed corpora.
pub fn noise_report(
    docs: &[Document],
    cfg: &NormalizationConfig,
    seed: u64,
) -> Result<NoiseReport> {
    let pairs = gold_pairs(docs)?;
    if pairs.is_empty() {
        return Ok(NoiseReport {
            duplicate_pairs: 0,
            no_duplicates: true,
            per_n: Vec::new(),
        });
    }
    let mut per_n = Vec::new();
    for n in REPORT_ORDERS {
        let sets = shingle_corpus(docs, n, cfg, seed);
        let scored = par::map(&pairs, |&(a, b)| {
            let (x, y) = (&sets[a as usize], &sets[b as usize]);
            (overlap_min(x, y), x.intersection_size(y) == 0)
        });
        let mean = scored.iter().map(|s| s.0).sum::<f64>() / pairs.len() as f64;
        let zero = scored.iter().filter(|s| s.1).count() as f64 / pairs.len() as f64;
        per_n.push(NgramNoise {
            n,
            mean_overlap: mean,
            zero_shared_fraction: zero,
        });
    }
    Ok(NoiseReport {
        duplicate_pairs: pairs.len(),
        no_duplicates: false,
        per_n,
    })
}
