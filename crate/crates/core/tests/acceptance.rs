//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without a test harness so the lines print in order.

mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use noisydedup::corpus::{load_corpus, normalize, shingle, Document, NormalizationConfig};
use noisydedup::embedspace::{
    knn_range_search, range_search, EmbeddingMatrix, RangeSearchConfig, SearchMode,
};
use noisydedup::evalkit::adjusted_rand_index;
use noisydedup::graph::SimilarityGraph;
use noisydedup::graph::{connected_components, louvain, two_cliques_with_bridge, LouvainConfig};
use noisydedup::overlap::{
    candidate_pairs, overlap_from_counts, overlap_min, score_edges, InvertedIndex, Metric,
    ScoredPair,
};
use noisydedup::pipeline::{self, ClusterMethod, Inputs, Method, PipelineSpec};
use noisydedup::sketch::{banded_lsh, minhash, s_curve, BandingConfig};
use noisydedup::synthgen::{generate, GeneratorConfig, NoiseModel};
use rand::Rng;

use common::*;

type Criterion = (&'static str, fn() -> Outcome);

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn minhash_unbiasedness() -> Outcome {
    let start = Instant::now();
    let k = 256;
    let mut rng = rng(11);
    let mut signed = 0.0;
    let mut within = 0;
    let trials = 1000;
    for i in 0..trials {
        let union = rng.gen_range(100..=400);
        let target = i as f64 / (trials - 1) as f64;
        let shared = (target * union as f64).round() as usize;
        let (a, b) = set_pair(&mut rng, union, shared);
        let j = exact_jaccard(&a, &b);
        let est = minhash(&a, k, i as u64).collision_fraction(&minhash(&b, k, i as u64));
        let err = est - j;
        signed += err;
        if err.abs() <= 3.0 * (j * (1.0 - j) / k as f64).sqrt() + 1e-12 {
            within += 1;
        }
    }
    let mean = signed / trials as f64;
    let frac = within as f64 / trials as f64;
    let secs = start.elapsed().as_secs_f64();
    check(
        mean.abs() <= 0.01 && frac >= 0.99 && secs < 30.0,
        format!(
            "mean signed error {mean:+.5}, {:.1}% within 3 sigma, {secs:.1} s",
            frac * 100.0
        ),
    )
}

fn s_curve_conformance() -> Outcome {
    let start = Instant::now();
    let cfg = BandingConfig { bands: 15, rows: 2 };
    let trials = 2000;
    let mut rng = rng(12);
    let mut worst: f64 = 0.0;
    let mut rates = Vec::new();
    for s in [0.3, 0.5, 0.7, 0.9] {
        let union = 200;
        let shared = (s * union as f64).round() as usize;
        let mut hits = 0;
        for t in 0..trials {
            let (a, b) = set_pair(&mut rng, union, shared);
            let seed = (s * 1000.0) as u64 * 100_000 + t as u64;
            let sigs = [minhash(&a, 30, seed), minhash(&b, 30, seed)];
            if !banded_lsh(&sigs, &cfg).unwrap().is_empty() {
                hits += 1;
            }
        }
        let rate = hits as f64 / trials as f64;
        worst = worst.max((rate - s_curve(s, &cfg)).abs());
        rates.push(format!("s={s}: {rate:.3} vs {:.3}", s_curve(s, &cfg)));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 0.05 && secs < 60.0,
        format!(
            "{}; max deviation {worst:.4}, {secs:.1} s",
            rates.join(", ")
        ),
    )
}

fn ari_oracle() -> Outcome {
    let mut rng = rng(13);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=12);
        let kp = rng.gen_range(1..=n);
        let kg = rng.gen_range(1..=n);
        let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kp)).collect();
        let g: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kg)).collect();
        let got = adjusted_rand_index(
            &clustering_from_labels(&p, "p"),
            &clustering_from_labels(&g, "g"),
        )
        .unwrap();
        worst = worst.max((got - brute_ari(&p, &g)).abs());
    }
    let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
    let identity = adjusted_rand_index(
        &clustering_from_labels(&labels, "p"),
        &clustering_from_labels(&labels, "g"),
    )
    .unwrap();
    let singletons: Vec<usize> = (0..10).collect();
    let one = vec![0; 10];
    let degenerate = adjusted_rand_index(
        &clustering_from_labels(&singletons, "p"),
        &clustering_from_labels(&one, "g"),
    )
    .unwrap();
    check(
        worst <= 1e-9 && identity == 1.0 && degenerate == 0.0,
        format!(
            "max |ARI - oracle| {worst:.2e}, identity {identity}, singletons vs one {degenerate}"
        ),
    )
}

fn candidate_exactness() -> Outcome {
    let mut rng = rng(14);
    let cfg = NormalizationConfig::default();
    let mut total_edges = 0;
    for c in 0..20 {
        let n_docs = rng.gen_range(20..=300);
        let vocab = rng.gen_range(20..200);
        let docs = random_corpus(&mut rng, n_docs, vocab);
        let n = rng.gen_range(1..=4);
        let threshold = [0.01, 0.1, 0.3, 0.5, 0.9, 1.0][c % 6];
        let sets: Vec<_> = docs.iter().map(|d| shingle(d, n, &cfg, 0)).collect();
        let index = InvertedIndex::from_shingles(&sets);
        let cands = candidate_pairs(&index, 1, None);
        let got: Vec<(u32, u32, f64)> =
            score_edges(&cands.pairs, &sets, Metric::OverlapMin, threshold)
                .unwrap()
                .into_iter()
                .map(|p| (p.a, p.b, p.score))
                .collect();
        let mut want = Vec::new();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                let shared = shared_count(&sets[i], &sets[j]);
                let score = overlap_from_counts(shared, sets[i].count(), sets[j].count());
                if shared > 0 && score >= threshold {
                    want.push((i as u32, j as u32, score));
                }
            }
        }
        if got != want {
            return Outcome::Fail(format!(
                "corpus {c}: {} indexed edges vs {} brute-force edges",
                got.len(),
                want.len()
            ));
        }
        total_edges += want.len();
    }
    Outcome::Pass(format!(
        "20 corpora, {total_edges} edges identical to all-pairs scoring"
    ))
}

fn substring_invariance() -> Outcome {
    let cfg = GeneratorConfig {
        n_sources: 100,
        singleton_fraction: 1.0,
        seed: 15,
        ..Default::default()
    };
    let docs = generate(&cfg, &NoiseModel::ocr_heavy()).unwrap();
    let norm = NormalizationConfig::default();
    let mut checked = 0;
    for d in docs.iter().take(100) {
        let words: Vec<&str> = d.text.split_whitespace().collect();
        for n in [3, 5] {
            for keep in [n, n + 1, words.len() / 3, words.len() / 2, words.len()] {
                if keep < n || keep > words.len() {
                    continue;
                }
                let t = Document::new("t", words[..keep].join(" "));
                if normalize(&t.text, &norm).split(' ').count() < n {
                    continue;
                }
                let o = overlap_min(&shingle(d, n, &norm, 0), &shingle(&t, n, &norm, 0));
                if o != 1.0 {
                    return Outcome::Fail(format!(
                        "{} truncated to {keep} words: overlap {o}",
                        d.id
                    ));
                }
                checked += 1;
            }
        }
    }
    Outcome::Pass(format!(
        "{checked} prefix truncations of 100 documents all score 1.0"
    ))
}

fn range_exactness() -> Outcome {
    let mut rng = rng(16);
    let (ids, data) = clustered_vectors(&mut rng, 32, 800, 5, 1000, 0.03);
    let m = EmbeddingMatrix::new(ids, 32, data, "fixture").unwrap();
    let exact_cfg = RangeSearchConfig {
        threshold: 0.92,
        knn_k: 900,
        mode: SearchMode::ExactRange,
    };
    let knn_cfg = RangeSearchConfig {
        mode: SearchMode::KnnThenFilter,
        ..exact_cfg
    };
    let exact = range_search(&m, &exact_cfg).unwrap();
    let (knn, report) = knn_range_search(&m, &knn_cfg).unwrap();
    let key = |v: &[ScoredPair]| -> Vec<(u32, u32, u64)> {
        v.iter().map(|p| (p.a, p.b, p.score.to_bits())).collect()
    };
    let mut oracle = Vec::new();
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            let s = oracle_dot(m.row(i), m.row(j));
            if s >= 0.92 - 1e-6 {
                oracle.push((i as u32, j as u32, s.to_bits()));
            }
        }
    }
    let knn_ok = report.truncated_count > 0 || key(&knn) == key(&exact);
    let oracle_ok = key(&exact) == oracle;
    check(
        knn_ok && oracle_ok && report.truncated_count == 0 && !exact.is_empty(),
        format!(
            "{} vectors, {} pairs >= 0.92; knn matches exact: {}, exact matches oracle bitwise: {oracle_ok}, truncated docs {}",
            m.len(),
            exact.len(),
            key(&knn) == key(&exact),
            report.truncated_count
        ),
    )
}

fn false_positive_control() -> Outcome {
    let g = two_cliques_with_bridge(20);
    let comps = connected_components(&g).num_clusters();
    let louv = louvain(&g, &LouvainConfig::default())
        .unwrap()
        .num_clusters();
    let mut rng = rng(17);
    let mut refined = 0;
    for t in 0..1000 {
        let n = rng.gen_range(2..80);
        let edges = random_graph(&mut rng, n);
        let ids: Vec<String> = (0..n).map(|i| format!("v{i:03}")).collect();
        let pairs = edges
            .iter()
            .map(|&(a, b)| ScoredPair::new(a, b, 1.0, Metric::External))
            .collect();
        let g = SimilarityGraph::from_pairs(ids, pairs).unwrap();
        let cfg = LouvainConfig {
            seed: (t % 2 == 1).then_some(t as u64),
            ..Default::default()
        };
        let c = connected_components(&g);
        let l = louvain(&g, &cfg).unwrap();
        let cl: Vec<usize> = c.labels().iter().map(|&x| x as usize).collect();
        let ll: Vec<usize> = l.labels().iter().map(|&x| x as usize).collect();
        if refines(&ll, &cl) {
            refined += 1;
        }
    }
    check(
        comps == 1 && louv == 2 && refined == 1000,
        format!("two cliques: components {comps}, louvain {louv}; louvain refines components on {refined}/1000 random graphs"),
    )
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let noise = NoiseModel::ocr_heavy();
    let val = generate(&GeneratorConfig::with_target_docs(10_000, 1001), &noise).unwrap();
    let test = generate(&GeneratorConfig::with_target_docs(10_000, 2002), &noise).unwrap();
    let inputs = |docs: &Vec<Document>| Inputs {
        docs: docs.clone(),
        embeddings: None,
    };
    let mut lines = Vec::new();
    let mut ok = true;
    for method in [
        Method::NgramOverlap,
        Method::LshBanded,
        Method::LshCollision,
    ] {
        let spec = PipelineSpec::new(method);
        let tuned = pipeline::tune(&spec, inputs(&val), None).unwrap();
        let best = spec.with_threshold(tuned.best_threshold);
        let with_cd = pipeline::run_on(&best, inputs(&test))
            .unwrap()
            .report
            .unwrap()
            .ari;
        let mut no_cd_spec = best.clone();
        no_cd_spec.cluster.method = ClusterMethod::Components;
        let no_cd = pipeline::run_on(&no_cd_spec, inputs(&test))
            .unwrap()
            .report
            .unwrap()
            .ari;
        let (knob, _) = spec.tuning_grid();
        lines.push(format!(
            "{method} ({knob}={}) ARI {with_cd:.3}, without community detection {no_cd:.3}",
            tuned.best_threshold
        ));
        // (a) overlap and banded LSH reach 0.6; (b) Louvain never loses to components for LSH
        if method != Method::LshCollision && with_cd < 0.6 {
            ok = false;
        }
        if method != Method::NgramOverlap && no_cd > with_cd {
            ok = false;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    lines.push(format!("{secs:.1} s"));
    check(ok && secs < 600.0, lines.join("; "))
}

fn scaling_smoke() -> Outcome {
    let docs = generate(
        &GeneratorConfig::with_target_docs(100_000, 7),
        &NoiseModel::ocr_heavy(),
    )
    .unwrap();
    let report = pipeline::bench(
        &PipelineSpec::new(Method::LshBanded),
        Inputs {
            docs,
            embeddings: None,
        },
    )
    .unwrap();
    let gold = report.gold_stats.as_ref().unwrap().mean_times_reproduced;
    let pred = report.stats.mean_times_reproduced;
    let rel = (pred - gold) / gold;
    let rss = report.peak_rss_bytes;
    let rss_ok = rss.is_some_and(|b| b < 8 << 30);
    check(
        report.total_seconds < 600.0 && rss_ok && rel.abs() <= 0.10,
        format!(
            "100000 docs in {:.1} s, peak RSS {}, mean times reproduced {pred:.3} vs gold {gold:.3} ({:+.1}%)",
            report.total_seconds,
            rss.map_or("unavailable".to_string(), |b| format!("{:.0} MiB", b as f64 / 1048576.0)),
            rel * 100.0
        ),
    )
}

fn news_copy() -> Outcome {
    let Some(dir) = std::env::var_os("NEWS_COPY_DIR").map(PathBuf::from) else {
        return Outcome::Skip(
            "set NEWS_COPY_DIR to a directory with validation.jsonl and test.jsonl".into(),
        );
    };
    let load = |name: &str| load_corpus(dir.join(name));
    let (val, test) = match (load("validation.jsonl"), load("test.jsonl")) {
        (Ok(v), Ok(t)) => (v, t),
        (Err(e), _) | (_, Err(e)) => return Outcome::Skip(format!("dataset unreadable: {e}")),
    };
    let mut spec = PipelineSpec::new(Method::LshCollision);
    spec.shingle.n = 3;
    spec.collision.num_hashes = 10;
    let tuned = pipeline::tune(
        &spec,
        Inputs {
            docs: val,
            embeddings: None,
        },
        None,
    )
    .unwrap();
    let best = spec.with_threshold(tuned.best_threshold);
    let ari = pipeline::run_on(
        &best,
        Inputs {
            docs: test,
            embeddings: None,
        },
    )
    .unwrap()
    .report
    .unwrap()
    .ari;
    check(
        (ari * 100.0 - 73.7).abs() <= 3.0,
        format!(
            "min_collisions {} -> test ARI {:.1} (target 73.7 +/- 3)",
            tuned.best_threshold,
            ari * 100.0
        ),
    )
}

fn main() {
    // accept and ignore libtest flags such as --nocapture
    let filter: BTreeSet<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [Criterion; 10] = [
        ("minhash_unbiasedness", minhash_unbiasedness),
        ("s_curve_conformance", s_curve_conformance),
        ("ari_oracle_equivalence", ari_oracle),
        ("candidate_generation_exactness", candidate_exactness),
        ("substring_invariance", substring_invariance),
        ("range_search_exactness", range_exactness),
        ("false_positive_control", false_positive_control),
        ("end_to_end_synthetic_benchmark", end_to_end),
        ("scaling_smoke_100k", scaling_smoke),
        ("news_copy_lsh_ari", news_copy),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let (tag, detail) = match f() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag}  {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
