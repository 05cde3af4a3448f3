use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use noisydedup::corpus::{load_corpus, shingle_corpus, NormalizationConfig};
use noisydedup::embedspace::{
    hashing_embed, knn_range_search, load_embeddings, range_search, write_embeddings,
    RangeSearchConfig, SearchMode,
};
use noisydedup::evalkit::{evaluate, grid};
use noisydedup::graph::{build_graph, connected_components, louvain, Clustering, LouvainConfig};
use noisydedup::overlap::{
    candidate_pairs, load_edges, score_edges, to_records, write_edges, InvertedIndex, Metric,
    DEFAULT_HOT_CAP,
};
use noisydedup::pipeline::{
    self, read_config, ClusterMethod, Inputs, Method, PipelineSpec, ScorerKind,
};
use noisydedup::sketch::{
    banded_lsh, collision_lsh, load_signatures, sign_corpus, write_signatures, BandingConfig,
};
use noisydedup::synthgen::{generate, noise_report, GeneratorConfig, SynthSpec};
use noisydedup::{par, Error};

#[derive(Parser, Debug)]
#[command(
    name = "noisydedup",
    version,
    about = "Near-duplicate detection for noisy text corpora"
)]
struct Cli {
    /// Seed for every random choice (hashing, sketching, generation).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// TOML or JSON config file; flags override its values.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,

    /// Log progress (-v info, -vv debug).
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic corpus.
    Synth(SynthArgs),
    /// Write each document's hashed word N-grams as JSON lines.
    Shingle(ShingleArgs),
    /// Write MinHash signatures.
    Minhash(MinhashArgs),
    /// Emit scored candidate pairs as an edge file.
    Pairs(PairsArgs),
    /// Cosine range search over embeddings, emitting an edge file.
    EmbedSearch(EmbedSearchArgs),
    /// Cluster a corpus from an edge file.
    Cluster(ClusterArgs),
    /// Score a clustering against gold labels.
    Eval(EvalArgs),
    /// Tune a pipeline threshold on a labeled validation corpus.
    Tune(TuneArgs),
    /// Run a full pipeline and write clusters, edges, report and manifest.
    Run(RunArgs),
    /// Time the pipeline stages on a synthetic or given corpus.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, short = 'o')]
    output: PathBuf,
    /// Generate exactly this many documents.
    #[arg(long, conflicts_with = "sources")]
    docs: Option<usize>,
    /// Generate this many source articles.
    #[arg(long)]
    sources: Option<usize>,
    /// none, ocr-light or ocr-heavy.
    #[arg(long)]
    noise: Option<String>,
    /// Also write the duplicate-pair N-gram noise report here (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ShingleOpts {
    /// Words per shingle.
    #[arg(long, short = 'n', default_value_t = 3)]
    n: usize,
    /// Keep case and all punctuation.
    #[arg(long)]
    raw: bool,
}

impl ShingleOpts {
    fn normalization(&self) -> NormalizationConfig {
        if self.raw {
            NormalizationConfig::minimal()
        } else {
            NormalizationConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct ShingleArgs {
    #[arg(long, short = 'i')]
    input: PathBuf,
    #[arg(long, short = 'o')]
    output: PathBuf,
    #[command(flatten)]
    shingle: ShingleOpts,
}

#[derive(Args, Debug)]
struct MinhashArgs {
    #[arg(long, short = 'i')]
    input: PathBuf,
    #[arg(long, short = 'o')]
    output: PathBuf,
    /// Signature length.
    #[arg(long, short = 'k', default_value_t = 10)]
    hashes: usize,
    #[command(flatten)]
    shingle: ShingleOpts,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum PairsMethod {
    Overlap,
    Jaccard,
    Collision,
    Banded,
}

#[derive(Args, Debug)]
struct PairsArgs {
    #[arg(long, value_enum, default_value = "overlap")]
    method: PairsMethod,
    /// Corpus for overlap and jaccard scoring.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Signature file for collision and banded LSH.
    #[arg(long)]
    signatures: Option<PathBuf>,
    #[arg(long, short = 'o')]
    output: PathBuf,
    /// Minimum overlap or Jaccard score.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Minimum shared shingles for a candidate pair.
    #[arg(long, default_value_t = 1)]
    min_shared: u32,
    /// Skip shingles in more than this many documents.
    #[arg(long, default_value_t = DEFAULT_HOT_CAP)]
    hot_cap: usize,
    /// Count every shingle, however common.
    #[arg(long)]
    no_hot_cap: bool,
    #[arg(long, default_value_t = 1)]
    min_collisions: usize,
    #[arg(long, default_value_t = 15)]
    bands: usize,
    #[arg(long, default_value_t = 2)]
    rows: usize,
    #[command(flatten)]
    shingle: ShingleOpts,
}

#[derive(Args, Debug)]
struct EmbedSearchArgs {
    /// EMBD embedding file.
    #[arg(long, short = 'e')]
    embeddings: Option<PathBuf>,
    /// Embed this corpus with the hashing vectorizer instead.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    hashing_dim: usize,
    /// Save the hashing-vectorizer embeddings as an EMBD file.
    #[arg(long)]
    write_embeddings: Option<PathBuf>,
    #[arg(long, short = 'o')]
    output: PathBuf,
    #[arg(long, default_value_t = 0.92)]
    threshold: f64,
    /// Take the top k neighbours per document, then filter.
    #[arg(long)]
    knn: Option<usize>,
    /// Write the kNN truncation report here (JSON).
    #[arg(long)]
    truncation_report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    /// Corpus whose documents are the graph nodes.
    #[arg(long, short = 'i')]
    corpus: PathBuf,
    #[arg(long, short = 'e')]
    edges: PathBuf,
    #[arg(long, short = 'o')]
    output: PathBuf,
    #[arg(long, default_value = "louvain")]
    method: String,
    #[arg(long, default_value_t = 1.0)]
    resolution: f64,
    /// Use edge scores as Louvain weights.
    #[arg(long)]
    weighted: bool,
    /// Seeded random Louvain visit order instead of id order.
    #[arg(long)]
    shuffle: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted clustering file.
    #[arg(long, short = 'p')]
    pred: PathBuf,
    /// Corpus with gold_cluster labels.
    #[arg(long, conflicts_with = "gold_clusters")]
    gold: Option<PathBuf>,
    /// Gold clustering file instead of a labeled corpus.
    #[arg(long)]
    gold_clusters: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct SpecOverrides {
    #[arg(long)]
    method: Option<String>,
    #[arg(long, short = 'i')]
    input: Option<PathBuf>,
    /// Shingle order.
    #[arg(long, short = 'n')]
    ngram: Option<usize>,
    /// Value of the method's tuned knob: overlap or scorer threshold,
    /// minimum collisions, minimum shared bands, or cosine threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// components or louvain.
    #[arg(long)]
    clustering: Option<String>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    hashing_dim: Option<usize>,
    /// External pair-score file for rerank.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[command(flatten)]
    spec: SpecOverrides,
    /// Grid as start:stop:step; defaults to the method's grid.
    #[arg(long)]
    grid: Option<String>,
    /// Write the threshold,ari curve here (CSV).
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Write the tuned pipeline config here (TOML).
    #[arg(long)]
    write_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    spec: SpecOverrides,
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
    /// Fail unless the corpus carries gold labels, and report scores.
    #[arg(long)]
    evaluate: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    spec: SpecOverrides,
    /// Generate a synthetic corpus of this many documents.
    #[arg(long)]
    docs: Option<usize>,
    #[arg(long, default_value = "ocr-heavy")]
    noise: String,
    /// Write the report here (JSON).
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        par::set_threads(t);
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    e.chain()
        .find_map(|c| c.downcast_ref::<Error>())
        .map_or(1, Error::exit_code)
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Shingle(a) => shingle(cli, a),
        Command::Minhash(a) => minhash(cli, a),
        Command::Pairs(a) => pairs(cli, a),
        Command::EmbedSearch(a) => embed_search(cli, a),
        Command::Cluster(a) => cluster(cli, a),
        Command::Eval(a) => eval(a),
        Command::Tune(a) => tune(cli, a),
        Command::Run(a) => run(cli, a),
        Command::Bench(a) => bench(cli, a),
    }
}

fn seed(cli: &Cli) -> u64 {
    cli.seed.unwrap_or(0)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).map_err(|e| io_error(path, e))?;
    Ok(BufWriter::new(f))
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source: e,
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| io_error(path, e))?;
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> anyhow::Result<()> {
    let mut spec: SynthSpec = match &cli.config {
        Some(p) => read_config(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.generator.seed = s;
    }
    if let Some(n) = a.docs {
        spec.generator.target_docs = Some(n);
        spec.generator.n_sources = usize::MAX;
    }
    if let Some(n) = a.sources {
        spec.generator.n_sources = n;
        spec.generator.target_docs = None;
    }
    if let Some(p) = &a.noise {
        spec.noise_preset = p.clone();
        spec.noise = None;
    }
    let noise = spec.noise_model()?;
    let docs = generate(&spec.generator, &noise)?;
    noisydedup::corpus::write_corpus(&docs, &a.output)?;
    log::info!("wrote {} documents to {}", docs.len(), a.output.display());
    if let Some(p) = &a.report {
        let r = noise_report(&docs, &NormalizationConfig::default(), spec.generator.seed)?;
        write_json(p, &r)?;
    }
    Ok(())
}

fn shingle(cli: &Cli, a: &ShingleArgs) -> anyhow::Result<()> {
    if a.shingle.n == 0 {
        return Err(Error::Config("-n must be at least 1".into()).into());
    }
    let docs = load_corpus(&a.input)?;
    let sets = shingle_corpus(&docs, a.shingle.n, &a.shingle.normalization(), seed(cli));
    let mut w = create(&a.output)?;
    for s in &sets {
        let line = serde_json::json!({
            "id": s.doc_id,
            "n": s.n,
            "count": s.count(),
            "shingles": s.shingles(),
        });
        writeln!(w, "{line}").map_err(|e| io_error(&a.output, e))?;
    }
    w.flush().map_err(|e| io_error(&a.output, e))?;
    Ok(())
}

fn minhash(cli: &Cli, a: &MinhashArgs) -> anyhow::Result<()> {
    if a.hashes == 0 || a.shingle.n == 0 {
        return Err(Error::Config("-k and -n must be at least 1".into()).into());
    }
    let docs = load_corpus(&a.input)?;
    let sets = shingle_corpus(&docs, a.shingle.n, &a.shingle.normalization(), seed(cli));
    let sigs = sign_corpus(&sets, a.hashes, noisydedup::hash::derive_key(seed(cli), 1));
    write_signatures(&sigs, &a.output)?;
    Ok(())
}

fn pairs(cli: &Cli, a: &PairsArgs) -> anyhow::Result<()> {
    let records = match a.method {
        PairsMethod::Overlap | PairsMethod::Jaccard => {
            let Some(corpus) = &a.corpus else {
                return Err(
                    Error::Config("--corpus is required for overlap scoring".into()).into(),
                );
            };
            if a.min_shared == 0 {
                return Err(Error::Config("--min-shared must be at least 1".into()).into());
            }
            let docs = load_corpus(corpus)?;
            let sets = shingle_corpus(&docs, a.shingle.n, &a.shingle.normalization(), seed(cli));
            let index = InvertedIndex::from_shingles(&sets);
            let cap = (!a.no_hot_cap).then_some(a.hot_cap);
            let cands = candidate_pairs(&index, a.min_shared, cap);
            let metric = if a.method == PairsMethod::Overlap {
                Metric::OverlapMin
            } else {
                Metric::Jaccard
            };
            let scored = score_edges(&cands.pairs, &sets, metric, a.threshold)?;
            let ids: Vec<&str> = docs.iter().map(|d| d.id.as_str()).collect();
            to_records(&scored, &ids)
        }
        PairsMethod::Collision | PairsMethod::Banded => {
            let Some(path) = &a.signatures else {
                return Err(Error::Config("--signatures is required for LSH".into()).into());
            };
            let sigs = load_signatures(path)?;
            let scored = if a.method == PairsMethod::Collision {
                collision_lsh(&sigs, a.min_collisions)?
            } else {
                banded_lsh(
                    &sigs,
                    &BandingConfig {
                        bands: a.bands,
                        rows: a.rows,
                    },
                )?
            };
            let ids: Vec<&str> = sigs.iter().map(|s| s.doc_id.as_str()).collect();
            to_records(&scored, &ids)
        }
    };
    write_edges(&records, &a.output)?;
    log::info!("wrote {} edges", records.len());
    Ok(())
}

fn embed_search(cli: &Cli, a: &EmbedSearchArgs) -> anyhow::Result<()> {
    let m = match (&a.embeddings, &a.corpus) {
        (Some(p), _) => load_embeddings(p)?,
        (None, Some(c)) => {
            let docs = load_corpus(c)?;
            let m = hashing_embed(
                &docs,
                a.hashing_dim,
                &NormalizationConfig::default(),
                seed(cli),
            )?;
            if let Some(out) = &a.write_embeddings {
                write_embeddings(&m, out)?;
            }
            m
        }
        (None, None) => {
            return Err(Error::Config("give --embeddings or --corpus".into()).into());
        }
    };
    if m.renormalized_rows() > 0 {
        log::warn!("renormalized {} embedding rows", m.renormalized_rows());
    }
    let cfg = RangeSearchConfig {
        threshold: a.threshold,
        knn_k: a.knn.unwrap_or(900),
        mode: if a.knn.is_some() {
            SearchMode::KnnThenFilter
        } else {
            SearchMode::ExactRange
        },
    };
    let found = if cfg.mode == SearchMode::KnnThenFilter {
        let (found, report) = knn_range_search(&m, &cfg)?;
        if report.truncated_count > 0 {
            log::warn!(
                "{} documents may have lost neighbours to the k cap",
                report.truncated_count
            );
        }
        if let Some(p) = &a.truncation_report {
            write_json(p, &report)?;
        }
        found
    } else {
        if a.truncation_report.is_some() {
            bail!(Error::Config("--truncation-report needs --knn".into()));
        }
        range_search(&m, &cfg)?
    };
    write_edges(&to_records(&found, m.ids()), &a.output)?;
    Ok(())
}

fn cluster(cli: &Cli, a: &ClusterArgs) -> anyhow::Result<()> {
    let docs = load_corpus(&a.corpus)?;
    let ids: Vec<&str> = docs.iter().map(|d| d.id.as_str()).collect();
    let edges = load_edges(&a.edges)?;
    let mut g = build_graph(&ids, &edges)?;
    g.weighted = a.weighted;
    let clustering = match a.method.parse::<ClusterMethod>()? {
        ClusterMethod::Components => connected_components(&g),
        ClusterMethod::Louvain => louvain(
            &g,
            &LouvainConfig {
                resolution: a.resolution,
                weighted: a.weighted,
                seed: a
                    .shuffle
                    .then(|| noisydedup::hash::derive_key(seed(cli), 2)),
            },
        )?,
    };
    clustering.write(&a.output)?;
    Ok(())
}

fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let pred = Clustering::load(&a.pred, "predicted")?;
    let gold = match (&a.gold, &a.gold_clusters) {
        (Some(p), _) => Clustering::gold(&load_corpus(p)?)?,
        (None, Some(p)) => Clustering::load(p, "gold")?,
        (None, None) => bail!(Error::Config("give --gold or --gold-clusters".into())),
    };
    let report = evaluate(&pred, &gold)?;
    print!("{}", report.to_table());
    if let Some(p) = &a.output {
        write_json(p, &report)?;
    }
    Ok(())
}

fn load_spec(cli: &Cli, o: &SpecOverrides) -> anyhow::Result<PipelineSpec> {
    let mut spec = match &cli.config {
        Some(p) => PipelineSpec::from_path(p)?,
        None => PipelineSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if let Some(m) = &o.method {
        spec.method = m.parse::<Method>()?;
    }
    if let Some(p) = &o.input {
        spec.input = Some(p.clone());
    }
    if let Some(n) = o.ngram {
        spec.shingle.n = n;
    }
    if let Some(t) = o.threshold {
        spec = spec.with_threshold(t);
    }
    if let Some(c) = &o.clustering {
        spec.cluster.method = c.parse()?;
    }
    if let Some(p) = &o.embeddings {
        spec.embed.embeddings = Some(p.clone());
    }
    if let Some(d) = o.hashing_dim {
        spec.embed.hashing_dim = Some(d);
    }
    if let Some(p) = &o.scores {
        spec.rerank.kind = ScorerKind::ExternalScoresFile;
        spec.rerank.scores = Some(p.clone());
    }
    spec.validate()?;
    Ok(spec)
}

fn parse_grid(s: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad grid {s:?}, expected start:stop:step")))?;
    match parts[..] {
        [start, stop, step] if step > 0.0 && stop >= start => Ok(grid(start, stop, step)),
        _ => bail!(Error::Config(format!(
            "bad grid {s:?}, expected start:stop:step"
        ))),
    }
}

fn tune(cli: &Cli, a: &TuneArgs) -> anyhow::Result<()> {
    let spec = load_spec(cli, &a.spec)?;
    let grid = a.grid.as_deref().map(parse_grid).transpose()?;
    let (inputs, _) = pipeline::load_inputs(&spec).context("loading validation corpus")?;
    let result = pipeline::tune(&spec, inputs, grid)?;
    let (knob, _) = spec.tuning_grid();
    println!(
        "{knob} = {}  (validation ARI {:.4})",
        result.best_threshold, result.best_ari
    );
    if let Some(p) = &a.curve {
        fs::write(p, result.curve_csv()).map_err(|e| io_error(p, e))?;
    }
    if let Some(p) = &a.write_config {
        let tuned = spec.with_threshold(result.best_threshold);
        fs::write(p, tuned.to_toml()).map_err(|e| io_error(p, e))?;
    }
    Ok(())
}

fn run(cli: &Cli, a: &RunArgs) -> anyhow::Result<()> {
    let mut spec = load_spec(cli, &a.spec)?;
    if let Some(d) = &a.output_dir {
        spec.output_dir = Some(d.clone());
    }
    if a.evaluate {
        spec.evaluate = Some(true);
    }
    let out = pipeline::run(&spec)?;
    if let Some(r) = &out.report {
        print!("{}", r.to_table());
    } else {
        println!(
            "{} documents, {} clusters, {} edges",
            out.clustering.len(),
            out.clustering.num_clusters(),
            out.edges.len()
        );
    }
    Ok(())
}

fn bench(cli: &Cli, a: &BenchArgs) -> anyhow::Result<()> {
    let spec = load_spec(cli, &a.spec)?;
    let inputs = match a.docs {
        Some(n) => {
            let noise = noisydedup::synthgen::NoiseModel::preset(&a.noise)?;
            let docs = generate(&GeneratorConfig::with_target_docs(n, spec.seed), &noise)?;
            Inputs {
                docs,
                embeddings: None,
            }
        }
        None => pipeline::load_inputs(&spec)?.0,
    };
    let report = pipeline::bench(&spec, inputs)?;
    print!("{}", report.to_table());
    if let Some(p) = &a.output {
        write_json(p, &report)?;
    }
    Ok(())
}
