//! End-to-end runs: method selection, re-ranking, tuning, evaluation,
//! scaling benchmarks and run manifests.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    check_admissible, read_corpus, shingle_corpus, sorted_by_id, Document, NormalizationConfig,
    ShingleSet,
};
use crate::embedspace::{
    hashing_embed, knn_range_search, range_search, read_embeddings, EmbeddingMatrix,
    RangeSearchConfig, SearchMode, THRESHOLD_SLACK,
};
use crate::error::{Error, Result};
use crate::evalkit::{
    collision_grid, cosine_grid, evaluate, overlap_grid, tune_against, EvalReport, TuneResult,
};
use crate::graph::{
    cluster_stats, connected_components, louvain, ClusterStats, Clustering, LouvainConfig,
    SimilarityGraph,
};
use crate::hash::derive_key;
use crate::overlap::{
    candidate_pairs, jaccard, load_edges, overlap_min, score_edges, to_records, write_edges,
    InvertedIndex, Metric, ScoredPair, DEFAULT_HOT_CAP,
};
use crate::par;
use crate::sketch::{banded_lsh, collision_lsh, sign_corpus, BandingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NgramOverlap,
    LshCollision,
    LshBanded,
    EmbedCluster,
    Rerank,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::NgramOverlap,
        Method::LshCollision,
        Method::LshBanded,
        Method::EmbedCluster,
        Method::Rerank,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::NgramOverlap => "ngram_overlap",
            Method::LshCollision => "lsh_collision",
            Method::LshBanded => "lsh_banded",
            Method::EmbedCluster => "embed_cluster",
            Method::Rerank => "rerank",
        }
    }

    fn uses_embeddings(self) -> bool {
        matches!(self, Method::EmbedCluster | Method::Rerank)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    Components,
    Louvain,
}

impl FromStr for ClusterMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "components" => Ok(ClusterMethod::Components),
            "louvain" => Ok(ClusterMethod::Louvain),
            _ => Err(Error::config(format!(
                "unknown clustering {s:?} (expected components or louvain)"
            ))),
        }
    }
}

impl ClusterMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ClusterMethod::Components => "components",
            ClusterMethod::Louvain => "louvain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShingleStage {
    pub n: usize,
    pub normalization: NormalizationConfig,
}

impl Default for ShingleStage {
    fn default() -> Self {
        ShingleStage {
            n: 3,
            normalization: NormalizationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlapStage {
    /// Minimum min-normalized overlap for an edge.
    pub threshold: f64,
    pub min_shared: u32,
    /// `None` disables the hot-shingle cap.
    pub hot_cap: Option<usize>,
}

impl Default for OverlapStage {
    fn default() -> Self {
        // tuned on a synthetic ocr-heavy validation corpus
        OverlapStage {
            threshold: 0.03,
            min_shared: 1,
            hot_cap: Some(DEFAULT_HOT_CAP),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollisionStage {
    pub num_hashes: usize,
    pub min_collisions: usize,
}

impl Default for CollisionStage {
    fn default() -> Self {
        CollisionStage {
            num_hashes: 10,
            min_collisions: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandedStage {
    pub bands: usize,
    pub rows: usize,
    /// Minimum number of shared band buckets; 1 keeps every bucket pair.
    pub min_shared_bands: usize,
}

impl Default for BandedStage {
    fn default() -> Self {
        BandedStage {
            bands: 15,
            rows: 2,
            min_shared_bands: 1,
        }
    }
}

impl BandedStage {
    pub fn banding(&self) -> BandingConfig {
        BandingConfig {
            bands: self.bands,
            rows: self.rows,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedStage {
    /// EMBD file with one row per corpus document.
    pub embeddings: Option<PathBuf>,
    /// Without an embeddings file, embed with the character-trigram hashing
    /// vectorizer at this dimension.
    pub hashing_dim: Option<usize>,
    pub search: RangeSearchConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    OverlapMin,
    Jaccard,
    ExternalScoresFile,
}

/// Second-stage scorer applied to range-search candidates by `rerank`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairScorer {
    pub kind: ScorerKind,
    pub threshold: f64,
    /// Edge-format file of externally computed pair scores.
    pub scores: Option<PathBuf>,
}

impl Default for PairScorer {
    fn default() -> Self {
        PairScorer {
            kind: ScorerKind::OverlapMin,
            threshold: 0.0,
            scores: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterStage {
    pub method: ClusterMethod,
    pub resolution: f64,
    pub weighted: bool,
    /// Visit Louvain nodes in a seeded random order instead of id order.
    pub shuffle: bool,
}

impl Default for ClusterStage {
    fn default() -> Self {
        ClusterStage {
            method: ClusterMethod::Louvain,
            resolution: 1.0,
            weighted: false,
            shuffle: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSpec {
    pub method: Method,
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// `None` evaluates when every document carries a gold label;
    /// `Some(true)` makes unlabeled input an error.
    pub evaluate: Option<bool>,
    pub shingle: ShingleStage,
    pub overlap: OverlapStage,
    pub collision: CollisionStage,
    pub banded: BandedStage,
    pub embed: EmbedStage,
    pub rerank: PairScorer,
    pub cluster: ClusterStage,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        PipelineSpec {
            method: Method::LshBanded,
            seed: 0,
            input: None,
            output_dir: None,
            evaluate: None,
            shingle: ShingleStage::default(),
            overlap: OverlapStage::default(),
            collision: CollisionStage::default(),
            banded: BandedStage::default(),
            embed: EmbedStage::default(),
            rerank: PairScorer::default(),
            cluster: ClusterStage::default(),
        }
    }
}

impl PipelineSpec {
    pub fn new(method: Method) -> Self {
        PipelineSpec {
            method,
            ..Default::default()
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        read_config(path.as_ref())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.shingle.n == 0 {
            return Err(Error::config("shingle n must be at least 1"));
        }
        let unit = |name: &str, t: f64| {
            if (0.0..=1.0).contains(&t) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} {t} outside [0, 1]")))
            }
        };
        unit("overlap threshold", self.overlap.threshold)?;
        if self.overlap.min_shared == 0 {
            return Err(Error::config("min_shared must be at least 1"));
        }
        let k = self.collision.num_hashes;
        if k == 0 || !(1..=k).contains(&self.collision.min_collisions) {
            return Err(Error::config(format!(
                "min_collisions {} must lie in 1..={k}",
                self.collision.min_collisions
            )));
        }
        let b = self.banded.banding();
        b.validate(b.signature_len())?;
        if !(1..=b.bands).contains(&self.banded.min_shared_bands) {
            return Err(Error::config(format!(
                "min_shared_bands {} must lie in 1..={}",
                self.banded.min_shared_bands, b.bands
            )));
        }
        self.embed.search.validate()?;
        unit("scorer threshold", self.rerank.threshold)?;
        if self.method == Method::Rerank
            && self.rerank.kind == ScorerKind::ExternalScoresFile
            && self.rerank.scores.is_none()
        {
            return Err(Error::config(
                "external_scores_file scorer needs a scores path",
            ));
        }
        if !(self.cluster.resolution > 0.0 && self.cluster.resolution.is_finite()) {
            return Err(Error::config("louvain resolution must be positive"));
        }
        Ok(())
    }

    /// Seed of the shingle hash.
    pub fn shingle_seed(&self) -> u64 {
        self.seed
    }

    /// Seed of the MinHash permutations.
    pub fn minhash_seed(&self) -> u64 {
        derive_key(self.seed, 1)
    }

    fn louvain_config(&self) -> LouvainConfig {
        LouvainConfig {
            resolution: self.cluster.resolution,
            weighted: self.cluster.weighted,
            seed: self.cluster.shuffle.then(|| derive_key(self.seed, 2)),
        }
    }

    /// The knob tuned for this method and its default search grid.
    pub fn tuning_grid(&self) -> (&'static str, Vec<f64>) {
        match self.method {
            Method::NgramOverlap => ("overlap.threshold", overlap_grid()),
            Method::LshCollision => (
                "collision.min_collisions",
                collision_grid(self.collision.num_hashes),
            ),
            Method::LshBanded => ("banded.min_shared_bands", collision_grid(self.banded.bands)),
            Method::EmbedCluster => ("embed.search.threshold", cosine_grid()),
            Method::Rerank => ("rerank.threshold", overlap_grid()),
        }
    }

    /// Copy of this pipeline config with the tuned knob set to `t`.
    pub fn with_threshold(&self, t: f64) -> Self {
        let mut s = self.clone();
        match s.method {
            Method::NgramOverlap => s.overlap.threshold = t,
            Method::LshCollision => s.collision.min_collisions = t.round() as usize,
            Method::LshBanded => s.banded.min_shared_bands = t.round() as usize,
            Method::EmbedCluster => s.embed.search.threshold = t,
            Method::Rerank => s.rerank.threshold = t,
        }
        s
    }

    /// Score below which a pooled candidate is dropped at knob value `t`.
    fn score_cut(&self, t: f64) -> f64 {
        match self.method {
            Method::NgramOverlap | Method::Rerank => t,
            Method::LshCollision => t.round() / self.collision.num_hashes as f64,
            Method::LshBanded => t.round() / self.banded.bands as f64,
            Method::EmbedCluster => t - THRESHOLD_SLACK,
        }
    }

    fn current_knob(&self) -> f64 {
        match self.method {
            Method::NgramOverlap => self.overlap.threshold,
            Method::LshCollision => self.collision.min_collisions as f64,
            Method::LshBanded => self.banded.min_shared_bands as f64,
            Method::EmbedCluster => self.embed.search.threshold,
            Method::Rerank => self.rerank.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
    /// Work done outside this run, such as precomputed embeddings.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub external: bool,
}

#[derive(Debug)]
struct StageClock {
    stages: Vec<StageTiming>,
}

impl StageClock {
    fn new() -> Self {
        StageClock { stages: Vec::new() }
    }

    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        let seconds = start.elapsed().as_secs_f64();
        match self.stages.iter_mut().find(|s| s.name == name) {
            Some(s) => s.seconds += seconds,
            None => self.stages.push(StageTiming {
                name: name.to_owned(),
                seconds,
                external: false,
            }),
        }
        out
    }

    fn external(&mut self, name: &str) {
        self.stages.push(StageTiming {
            name: name.to_owned(),
            seconds: 0.0,
            external: true,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub spec: PipelineSpec,
    pub seed: u64,
    pub threads: usize,
    pub parallel: bool,
    pub inputs: Vec<InputDigest>,
    pub stages: Vec<StageTiming>,
    pub counters: BTreeMap<String, u64>,
    pub wall_seconds: f64,
    pub peak_rss_bytes: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub clustering: Clustering,
    pub edges: Vec<ScoredPair>,
    pub report: Option<EvalReport>,
    pub manifest: Manifest,
}

/// Documents plus, for embedding methods, their aligned vectors.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub docs: Vec<Document>,
    pub embeddings: Option<EmbeddingMatrix>,
}

/// Reads a TOML or JSON config file; `.json` files are parsed as JSON and
/// everything else as TOML.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn digest_of(role: &str, path: &Path, bytes: &[u8]) -> InputDigest {
    InputDigest {
        role: role.to_owned(),
        path: path.to_owned(),
        bytes: bytes.len() as u64,
        sha256: sha256_hex(bytes),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Peak resident set size of this process, where the platform reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Loads the corpus (and embeddings when the method needs them) named by
/// `spec`, recording input digests.
pub fn load_inputs(spec: &PipelineSpec) -> Result<(Inputs, Vec<InputDigest>)> {
    let path = spec
        .input
        .as_deref()
        .ok_or_else(|| Error::config("no input corpus given"))?;
    let bytes = read_file(path)?;
    let mut digests = vec![digest_of("corpus", path, &bytes)];
    let docs = read_corpus(&bytes[..])?;
    let mut embeddings = None;
    if spec.method.uses_embeddings() {
        if let Some(p) = &spec.embed.embeddings {
            let bytes = read_file(p)?;
            digests.push(digest_of("embeddings", p, &bytes));
            embeddings = Some(read_embeddings(&bytes[..])?);
        }
    }
    if spec.method == Method::Rerank && spec.rerank.kind == ScorerKind::ExternalScoresFile {
        if let Some(p) = &spec.rerank.scores {
            digests.push(digest_of("scores", p, &read_file(p)?));
        }
    }
    Ok((Inputs { docs, embeddings }, digests))
}

/// Embeddings aligned to `docs`, from the given matrix or the hashing
/// vectorizer.
fn resolve_embeddings(
    spec: &PipelineSpec,
    docs: &[Document],
    given: Option<&EmbeddingMatrix>,
) -> Result<EmbeddingMatrix> {
    let ids: Vec<&str> = docs.iter().map(|d| d.id.as_str()).collect();
    match (given, spec.embed.hashing_dim) {
        (Some(m), _) => m.aligned_to(&ids),
        (None, Some(dim)) => hashing_embed(docs, dim, &spec.shingle.normalization, spec.seed),
        (None, None) => Err(Error::config(format!(
            "method {} needs embeddings: set embed.embeddings or embed.hashing_dim",
            spec.method
        ))),
    }
}

fn external_scores(path: &Path) -> Result<HashMap<(String, String), f64>> {
    Ok(load_edges(path)?
        .into_iter()
        .map(|e| {
            let key = if e.id_a <= e.id_b {
                (e.id_a, e.id_b)
            } else {
                (e.id_b, e.id_a)
            };
            (key, e.score)
        })
        .collect())
}

/// Scores range-search candidates with the second-stage scorer, keeping
/// every candidate.
fn rescore(
    spec: &PipelineSpec,
    docs: &[Document],
    candidates: &[ScoredPair],
    clock: &mut StageClock,
) -> Result<Vec<ScoredPair>> {
    match spec.rerank.kind {
        ScorerKind::OverlapMin | ScorerKind::Jaccard => {
            let sets = clock.time("shingle", || shingle_sets(spec, docs));
            let (metric, f): (Metric, fn(&ShingleSet, &ShingleSet) -> f64) =
                if spec.rerank.kind == ScorerKind::OverlapMin {
                    (Metric::OverlapMin, overlap_min)
                } else {
                    (Metric::Jaccard, jaccard)
                };
            Ok(clock.time("rerank", || {
                par::map(candidates, |p| {
                    let s = f(&sets[p.a as usize], &sets[p.b as usize]);
                    ScoredPair::new(p.a, p.b, s, metric)
                })
            }))
        }
        ScorerKind::ExternalScoresFile => {
            let path =
                spec.rerank.scores.as_deref().ok_or_else(|| {
                    Error::config("external_scores_file scorer needs a scores path")
                })?;
            let table = clock.time("load", || external_scores(path))?;
            clock.time("rerank", || {
                candidates
                    .iter()
                    .map(|p| {
                        let (x, y) = (&docs[p.a as usize].id, &docs[p.b as usize].id);
                        let key = if x <= y {
                            (x.clone(), y.clone())
                        } else {
                            (y.clone(), x.clone())
                        };
                        table
                            .get(&key)
                            .map(|&s| ScoredPair::new(p.a, p.b, s, Metric::External))
                            .ok_or_else(|| Error::MissingScore(key.0.clone(), key.1.clone()))
                    })
                    .collect()
            })
        }
    }
}

fn shingle_sets(spec: &PipelineSpec, docs: &[Document]) -> Vec<ShingleSet> {
    shingle_corpus(
        docs,
        spec.shingle.n,
        &spec.shingle.normalization,
        spec.shingle_seed(),
    )
}

/// All candidates of the method scored at its loosest setting; the edges of
/// knob value `t` are exactly the pooled pairs scoring at least
/// `spec.score_cut(t)`.
fn candidate_pool(
    spec: &PipelineSpec,
    docs: &[Document],
    embeddings: Option<&EmbeddingMatrix>,
    loosest: f64,
    clock: &mut StageClock,
    counters: &mut BTreeMap<String, u64>,
) -> Result<Vec<ScoredPair>> {
    let pool = match spec.method {
        Method::NgramOverlap => {
            let sets = clock.time("shingle", || shingle_sets(spec, docs));
            let cands = clock.time("similarity", || {
                let index = InvertedIndex::from_shingles(&sets);
                candidate_pairs(&index, spec.overlap.min_shared, spec.overlap.hot_cap)
            });
            counters.insert("candidate_pairs".into(), cands.pairs.len() as u64);
            counters.insert("hot_keys_skipped".into(), cands.hot_keys_skipped as u64);
            clock.time("similarity", || {
                score_edges(
                    &cands.pairs,
                    &sets,
                    Metric::OverlapMin,
                    loosest.clamp(0.0, 1.0),
                )
            })?
        }
        Method::LshCollision => {
            let sets = clock.time("shingle", || shingle_sets(spec, docs));
            let sigs = clock.time("minhash", || {
                sign_corpus(&sets, spec.collision.num_hashes, spec.minhash_seed())
            });
            let min = (loosest.round() as usize).clamp(1, spec.collision.num_hashes);
            clock.time("similarity", || collision_lsh(&sigs, min))?
        }
        Method::LshBanded => {
            let sets = clock.time("shingle", || shingle_sets(spec, docs));
            let banding = spec.banded.banding();
            let sigs = clock.time("minhash", || {
                sign_corpus(&sets, banding.signature_len(), spec.minhash_seed())
            });
            clock.time("similarity", || banded_lsh(&sigs, &banding))?
        }
        Method::EmbedCluster | Method::Rerank => {
            let m = match embeddings {
                Some(m) => {
                    clock.external("embed");
                    resolve_embeddings(spec, docs, Some(m))?
                }
                None => clock.time("embed", || resolve_embeddings(spec, docs, None))?,
            };
            counters.insert("renormalized_rows".into(), m.renormalized_rows() as u64);
            let mut search = spec.embed.search;
            if spec.method == Method::EmbedCluster {
                search.threshold = loosest;
            }
            let pairs = clock.time("similarity", || -> Result<Vec<ScoredPair>> {
                if search.mode == SearchMode::KnnThenFilter {
                    let (pairs, report) = knn_range_search(&m, &search)?;
                    counters.insert("knn_truncated_docs".into(), report.truncated_count as u64);
                    Ok(pairs)
                } else {
                    range_search(&m, &search)
                }
            })?;
            counters.insert("candidate_pairs".into(), pairs.len() as u64);
            if spec.method == Method::Rerank {
                rescore(spec, docs, &pairs, clock)?
            } else {
                pairs
            }
        }
    };
    Ok(pool)
}

fn cut_pool(pool: &[ScoredPair], cut: f64) -> Vec<ScoredPair> {
    pool.iter().copied().filter(|p| p.score >= cut).collect()
}

fn cluster_edges(
    spec: &PipelineSpec,
    ids: &[String],
    edges: Vec<ScoredPair>,
) -> Result<Clustering> {
    let mut graph = SimilarityGraph::from_pairs(ids.to_vec(), edges)?;
    graph.weighted = spec.cluster.weighted;
    cluster_graph(spec, &graph)
}

fn cluster_graph(spec: &PipelineSpec, graph: &SimilarityGraph) -> Result<Clustering> {
    let mut c = match spec.cluster.method {
        ClusterMethod::Components => connected_components(graph),
        ClusterMethod::Louvain => louvain(graph, &spec.louvain_config())?,
    };
    c.method_tag = format!("{}+{}", spec.method, spec.cluster.method.as_str());
    Ok(c)
}

fn wants_evaluation(spec: &PipelineSpec, docs: &[Document]) -> bool {
    match spec.evaluate {
        Some(flag) => flag,
        None => !docs.is_empty() && docs.iter().all(|d| d.gold_cluster.is_some()),
    }
}

/// Runs the pipeline on in-memory inputs. Writes nothing.
pub fn run_on(spec: &PipelineSpec, inputs: Inputs) -> Result<RunOutput> {
    run_inner(spec, inputs, Vec::new(), Instant::now(), StageClock::new())
}

/// Loads the inputs named in `spec`, runs it, and writes the clustering,
/// edges, report and manifest into `output_dir` when one is set.
pub fn run(spec: &PipelineSpec) -> Result<RunOutput> {
    let start = Instant::now();
    spec.validate()?;
    let mut clock = StageClock::new();
    let (inputs, digests) = clock.time("load", || load_inputs(spec))?;
    let mut out = run_inner(spec, inputs, digests, start, clock)?;
    if let Some(dir) = &spec.output_dir {
        let write_start = Instant::now();
        write_outputs(dir, &out)?;
        out.manifest.stages.push(StageTiming {
            name: "write".into(),
            seconds: write_start.elapsed().as_secs_f64(),
            external: false,
        });
        out.manifest.wall_seconds = start.elapsed().as_secs_f64();
        write_json(&dir.join("manifest.json"), &out.manifest)?;
    }
    Ok(out)
}

fn run_inner(
    spec: &PipelineSpec,
    inputs: Inputs,
    digests: Vec<InputDigest>,
    start: Instant,
    mut clock: StageClock,
) -> Result<RunOutput> {
    spec.validate()?;
    let mut counters = BTreeMap::new();
    let docs = clock.time("load", || sorted_by_id(inputs.docs));
    clock.time("load", || {
        check_admissible(&docs, &spec.shingle.normalization)
    })?;
    let evaluate_run = wants_evaluation(spec, &docs);
    let gold = if evaluate_run {
        Some(clock.time("evaluate", || Clustering::gold(&docs))?)
    } else {
        None
    };
    counters.insert("documents".into(), docs.len() as u64);

    let knob = spec.current_knob();
    let pool = candidate_pool(
        spec,
        &docs,
        inputs.embeddings.as_ref(),
        knob,
        &mut clock,
        &mut counters,
    )?;
    let edges = clock.time("similarity", || cut_pool(&pool, spec.score_cut(knob)));
    drop(pool);
    counters.insert("edges".into(), edges.len() as u64);

    let ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
    drop(docs);
    let mut graph = clock.time("build_graph", || {
        SimilarityGraph::from_pairs(ids, edges.clone())
    })?;
    graph.weighted = spec.cluster.weighted;
    let clustering = clock.time("cluster", || cluster_graph(spec, &graph))?;
    counters.insert("clusters".into(), clustering.num_clusters() as u64);

    let report = match gold {
        Some(g) => Some(clock.time("evaluate", || evaluate(&clustering, &g))?),
        None => None,
    };

    let manifest = Manifest {
        tool: "noisydedup".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        spec: spec.clone(),
        seed: spec.seed,
        threads: par::current_threads(),
        parallel: cfg!(feature = "parallel"),
        inputs: digests,
        stages: clock.stages,
        counters,
        wall_seconds: start.elapsed().as_secs_f64(),
        peak_rss_bytes: peak_rss_bytes(),
    };
    Ok(RunOutput {
        clustering,
        edges,
        report,
        manifest,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes to JSON");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes `clusters.tsv`, `edges.tsv` and, when evaluated, `report.json`.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    out.clustering.write(dir.join("clusters.tsv"))?;
    write_edges(
        &to_records(&out.edges, out.clustering.ids()),
        dir.join("edges.tsv"),
    )?;
    if let Some(r) = &out.report {
        write_json(&dir.join("report.json"), r)?;
    }
    Ok(())
}

/// Runs `rerank` and returns its clustering.
pub fn rerank(spec: &PipelineSpec, inputs: Inputs) -> Result<Clustering> {
    let spec = PipelineSpec {
        method: Method::Rerank,
        ..spec.clone()
    };
    Ok(run_on(&spec, inputs)?.clustering)
}

/// Tunes the method's knob on labeled validation inputs. Candidates are
/// computed once at the loosest grid value; each grid point then thresholds,
/// builds the graph, clusters and scores ARI.
pub fn tune(spec: &PipelineSpec, validation: Inputs, grid: Option<Vec<f64>>) -> Result<TuneResult> {
    spec.validate()?;
    let grid = grid.unwrap_or_else(|| spec.tuning_grid().1);
    if grid.is_empty() {
        return Err(Error::config("tuning grid is empty"));
    }
    let docs = sorted_by_id(validation.docs);
    check_admissible(&docs, &spec.shingle.normalization)?;
    let gold = Clustering::gold(&docs)?;
    let loosest = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let probe = spec.with_threshold(loosest);
    probe.validate()?;
    let mut clock = StageClock::new();
    let mut counters = BTreeMap::new();
    let pool = candidate_pool(
        &probe,
        &docs,
        validation.embeddings.as_ref(),
        loosest,
        &mut clock,
        &mut counters,
    )?;
    let ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
    tune_against(
        |t| cluster_edges(spec, &ids, cut_pool(&pool, spec.score_cut(t))),
        &gold,
        &grid,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub method: Method,
    pub scale_n: usize,
    pub threads: usize,
    pub parallel: bool,
    /// Stages in the order embed/hash, similarity, graph build, community
    /// detection, statistics.
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
    pub peak_rss_bytes: Option<u64>,
    pub edges: usize,
    pub stats: ClusterStats,
    pub gold_stats: Option<ClusterStats>,
}

impl BenchReport {
    pub fn to_table(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "method {}  docs {}  threads {}",
            self.method, self.scale_n, self.threads
        );
        for st in &self.stages {
            if st.external {
                let _ = writeln!(s, "{:<22} external", st.name);
            } else {
                let _ = writeln!(s, "{:<22} {:>10.3} s", st.name, st.seconds);
            }
        }
        let _ = writeln!(s, "{:<22} {:>10.3} s", "total", self.total_seconds);
        if let Some(rss) = self.peak_rss_bytes {
            let _ = writeln!(s, "{:<22} {:>10.1} MiB", "peak rss", rss as f64 / 1048576.0);
        }
        let _ = writeln!(s, "{:<22} {:>10}", "edges", self.edges);
        let _ = writeln!(
            s,
            "{:<22} {:>10.3}",
            "mean times reproduced", self.stats.mean_times_reproduced
        );
        if let Some(g) = &self.gold_stats {
            let _ = writeln!(s, "{:<22} {:>10.3}", "  gold", g.mean_times_reproduced);
        }
        s
    }
}

/// Times the pipeline stages on `inputs` and reports peak memory and the
/// predicted clustering's statistics. Embedding time is marked external
/// when vectors are supplied.
pub fn bench(spec: &PipelineSpec, inputs: Inputs) -> Result<BenchReport> {
    spec.validate()?;
    let start = Instant::now();
    let mut clock = StageClock::new();
    let mut counters = BTreeMap::new();
    let docs = sorted_by_id(inputs.docs);
    let scale_n = docs.len();
    let gold_stats = docs
        .iter()
        .all(|d| d.gold_cluster.is_some())
        .then(|| Clustering::gold(&docs).map(|g| cluster_stats(&g)))
        .transpose()?;
    let knob = spec.current_knob();
    let pool = candidate_pool(
        spec,
        &docs,
        inputs.embeddings.as_ref(),
        knob,
        &mut clock,
        &mut counters,
    )?;
    let edges = clock.time("similarity", || cut_pool(&pool, spec.score_cut(knob)));
    drop(pool);
    let n_edges = edges.len();
    let ids: Vec<String> = docs.into_iter().map(|d| d.id).collect();
    let mut graph = clock.time("build_graph", || SimilarityGraph::from_pairs(ids, edges))?;
    graph.weighted = spec.cluster.weighted;
    let clustering = clock.time("community_detection", || cluster_graph(spec, &graph))?;
    let stats = clock.time("stats", || cluster_stats(&clustering));
    let mut stages = clock.stages;
    // hashing stages of the LSH and overlap paths stand in for embedding
    for s in stages.iter_mut() {
        if s.name == "shingle" || s.name == "minhash" {
            s.name = format!("embed:{}", s.name);
        }
    }
    Ok(BenchReport {
        method: spec.method,
        scale_n,
        threads: par::current_threads(),
        parallel: cfg!(feature = "parallel"),
        stages,
        total_seconds: start.elapsed().as_secs_f64(),
        peak_rss_bytes: peak_rss_bytes(),
        edges: n_edges,
        stats,
        gold_stats,
    })
}
