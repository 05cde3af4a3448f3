//! Documents, corpus files, normalization and word N-gram shingling.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};
use crate::hash::hash_bytes;
use crate::par;

/// One text unit: an article, a page, a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_cluster: Option<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            date: None,
            source: None,
            gold_cluster: None,
        }
    }

    pub fn with_gold(mut self, cluster: impl Into<String>) -> Self {
        self.gold_cluster = Some(cluster.into());
        self
    }
}

/// Punctuation kept by the default normalization.
pub const KEPT_PUNCTUATION: [char; 6] = ['.', ',', '\'', '"', '-', '?'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationConfig {
    pub lowercase: bool,
    /// Codepoints deleted from the text, stored as a string.
    #[serde(with = "char_set")]
    pub punctuation_strip_set: BTreeSet<char>,
    pub collapse_whitespace: bool,
}

impl Default for NormalizationConfig {
    /// Lowercase, collapse whitespace, and delete every Unicode punctuation
    /// codepoint except `. , ' " - ?`.
    fn default() -> Self {
        NormalizationConfig {
            lowercase: true,
            punctuation_strip_set: uncommon_punctuation(),
            collapse_whitespace: true,
        }
    }
}

impl NormalizationConfig {
    /// No case folding and no deletions; whitespace is still collapsed.
    pub fn minimal() -> Self {
        NormalizationConfig {
            lowercase: false,
            punctuation_strip_set: BTreeSet::new(),
            collapse_whitespace: true,
        }
    }
}

/// All codepoints in the Unicode punctuation categories, minus
/// [`KEPT_PUNCTUATION`].
pub fn uncommon_punctuation() -> BTreeSet<char> {
    static SET: OnceLock<BTreeSet<char>> = OnceLock::new();
    SET.get_or_init(|| {
        (0..=char::MAX as u32)
            .filter_map(char::from_u32)
            .filter(|c| is_punctuation(*c) && !KEPT_PUNCTUATION.contains(c))
            .collect()
    })
    .clone()
}

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

mod char_set {
    use std::collections::BTreeSet;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(set: &BTreeSet<char>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&set.iter().collect::<String>())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeSet<char>, D::Error> {
        Ok(String::deserialize(d)?.chars().collect())
    }
}

pub fn normalize(text: &str, cfg: &NormalizationConfig) -> String {
    let folded;
    let text = if cfg.lowercase {
        folded = text.to_lowercase();
        folded.as_str()
    } else {
        text
    };
    let stripped: String = if cfg.punctuation_strip_set.is_empty() {
        text.to_owned()
    } else {
        let mut ascii = [false; 128];
        for &c in cfg.punctuation_strip_set.range('\0'..'\u{80}') {
            ascii[c as usize] = true;
        }
        text.chars()
            .filter(|&c| {
                if c.is_ascii() {
                    !ascii[c as usize]
                } else {
                    !cfg.punctuation_strip_set.contains(&c)
                }
            })
            .collect()
    };
    if cfg.collapse_whitespace {
        let mut out = String::with_capacity(stripped.len());
        for word in stripped.split_whitespace() {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(word);
        }
        out
    } else {
        stripped
    }
}

/// The set of hashed word N-grams of one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    pub doc_id: String,
    pub n: usize,
    /// Sorted, deduplicated 64-bit shingle hashes.
    shingles: Vec<u64>,
}

impl ShingleSet {
    /// Builds a set from arbitrary hashes; duplicates collapse.
    pub fn from_hashes(doc_id: impl Into<String>, n: usize, mut hashes: Vec<u64>) -> Self {
        hashes.sort_unstable();
        hashes.dedup();
        ShingleSet {
            doc_id: doc_id.into(),
            n,
            shingles: hashes,
        }
    }

    pub fn shingles(&self) -> &[u64] {
        &self.shingles
    }

    pub fn count(&self) -> usize {
        self.shingles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shingles.is_empty()
    }

    pub fn contains(&self, hash: u64) -> bool {
        self.shingles.binary_search(&hash).is_ok()
    }

    /// |A ∩ B| by merging the sorted hash lists.
    pub fn intersection_size(&self, other: &ShingleSet) -> usize {
        let (a, b) = (&self.shingles, &other.shingles);
        let (mut i, mut j, mut shared) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    shared += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        shared
    }
}

/// Hashes every `n`-word window of already-normalized text.
pub fn shingle_text(normalized: &str, n: usize, seed: u64) -> Vec<u64> {
    assert!(n >= 1, "shingle order must be at least 1");
    let words: Vec<&str> = normalized.split_whitespace().collect();
    if words.len() < n {
        return Vec::new();
    }
    let mut buf = String::new();
    let mut out = Vec::with_capacity(words.len() + 1 - n);
    for window in words.windows(n) {
        buf.clear();
        for (k, w) in window.iter().enumerate() {
            if k > 0 {
                buf.push(' ');
            }
            buf.push_str(w);
        }
        out.push(hash_bytes(buf.as_bytes(), seed));
    }
    out
}

pub fn shingle(doc: &Document, n: usize, cfg: &NormalizationConfig, seed: u64) -> ShingleSet {
    let hashes = shingle_text(&normalize(&doc.text, cfg), n, seed);
    ShingleSet::from_hashes(doc.id.clone(), n, hashes)
}

/// Shingles a whole corpus, in corpus order.
pub fn shingle_corpus(
    docs: &[Document],
    n: usize,
    cfg: &NormalizationConfig,
    seed: u64,
) -> Vec<ShingleSet> {
    par::map(docs, |d| shingle(d, n, cfg, seed))
}

/// Rejects documents whose text normalizes to nothing.
pub fn check_admissible(docs: &[Document], cfg: &NormalizationConfig) -> Result<()> {
    for d in docs {
        if normalize(&d.text, cfg).is_empty() {
            return Err(Error::EmptyDocument(d.id.clone()));
        }
    }
    Ok(())
}

pub fn read_corpus<R: Read>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if doc.id.is_empty() {
            return Err(Error::Malformed {
                line: line_no,
                message: "empty id".into(),
            });
        }
        if !seen.insert(doc.id.clone()) {
            return Err(Error::DuplicateId(doc.id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(file)
}

pub fn write_corpus_to<W: Write>(docs: &[Document], writer: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_corpus(docs: &[Document], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus_to(docs, file).map_err(|e| Error::io(path, e))
}

/// Returns the documents sorted by id.
pub fn sorted_by_id(mut docs: Vec<Document>) -> Vec<Document> {
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    docs
}
