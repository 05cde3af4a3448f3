//! Brute-force oracles and fixture builders shared by the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use noisydedup::corpus::{Document, ShingleSet};
use noisydedup::graph::Clustering;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two random sets whose Jaccard similarity is `shared / union` exactly.
pub fn set_pair(rng: &mut ChaCha8Rng, union: usize, shared: usize) -> (ShingleSet, ShingleSet) {
    let mut seen = HashSet::with_capacity(union);
    let mut elems = Vec::with_capacity(union);
    while elems.len() < union {
        let x: u64 = rng.gen();
        if seen.insert(x) {
            elems.push(x);
        }
    }
    let rest = union - shared;
    let only_a = rest / 2;
    let a: Vec<u64> = elems[..shared + only_a].to_vec();
    let mut b: Vec<u64> = elems[..shared].to_vec();
    b.extend_from_slice(&elems[shared + only_a..]);
    (
        ShingleSet::from_hashes("a", 1, a),
        ShingleSet::from_hashes("b", 1, b),
    )
}

pub fn exact_jaccard(a: &ShingleSet, b: &ShingleSet) -> f64 {
    let x: HashSet<u64> = a.shingles().iter().copied().collect();
    let y: HashSet<u64> = b.shingles().iter().copied().collect();
    let union = x.union(&y).count();
    if union == 0 {
        0.0
    } else {
        x.intersection(&y).count() as f64 / union as f64
    }
}

pub fn shared_count(a: &ShingleSet, b: &ShingleSet) -> usize {
    let x: HashSet<u64> = a.shingles().iter().copied().collect();
    b.shingles().iter().filter(|h| x.contains(h)).count()
}

/// ARI by enumerating every pair of items.
pub fn brute_ari(pred: &[usize], gold: &[usize]) -> f64 {
    let n = pred.len();
    let (mut both, mut p_only, mut g_only, mut pairs) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1.0;
            let sp = pred[i] == pred[j];
            let sg = gold[i] == gold[j];
            match (sp, sg) {
                (true, true) => both += 1.0,
                (true, false) => p_only += 1.0,
                (false, true) => g_only += 1.0,
                _ => {}
            }
        }
    }
    if pairs == 0.0 {
        return 1.0;
    }
    let sp = both + p_only;
    let sg = both + g_only;
    let expected = sp * sg / pairs;
    let max = (sp + sg) / 2.0;
    if max - expected == 0.0 {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

pub fn clustering_from_labels(labels: &[usize], tag: &str) -> Clustering {
    Clustering::from_assignment(
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("i{i:03}"), format!("c{l}"))),
        tag,
    )
    .unwrap()
}

/// Component label of every node by breadth-first search.
pub fn bfs_components(n: usize, edges: &[(u32, u32)]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a as usize].push(b as usize);
        adj[b as usize].push(a as usize);
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = next;
        let mut queue = vec![s];
        while let Some(v) = queue.pop() {
            for &u in &adj[v] {
                if label[u] == usize::MAX {
                    label[u] = next;
                    queue.push(u);
                }
            }
        }
        next += 1;
    }
    label
}

/// Whether two labelings of the same items induce the same partition.
pub fn same_partition(x: &[usize], y: &[usize]) -> bool {
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    x.iter()
        .zip(y)
        .all(|(a, b)| *fwd.entry(a).or_insert(b) == b && *back.entry(b).or_insert(a) == a)
}

/// Whether every block of `fine` lies inside one block of `coarse`.
pub fn refines(fine: &[usize], coarse: &[usize]) -> bool {
    let mut map = HashMap::new();
    fine.iter()
        .zip(coarse)
        .all(|(f, c)| *map.entry(f).or_insert(c) == c)
}

/// Random graph over `n` nodes: a few dense groups plus sparse noise edges.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Vec<(u32, u32)> {
    let groups = rng.gen_range(1..=(n / 3).max(1));
    let group: Vec<usize> = (0..n).map(|_| rng.gen_range(0..groups)).collect();
    let p_in = rng.gen_range(0.2..0.9);
    let p_out = rng.gen_range(0.0..0.05);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if group[i] == group[j] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((i as u32, j as u32));
            }
        }
    }
    edges
}

/// Random documents over a small vocabulary so many pairs share N-grams.
pub fn random_corpus(rng: &mut ChaCha8Rng, n_docs: usize, vocab: usize) -> Vec<Document> {
    let words: Vec<String> = (0..vocab).map(|i| format!("w{i}")).collect();
    let mut docs: Vec<Document> = Vec::with_capacity(n_docs);
    for d in 0..n_docs {
        let text = if d > 0 && rng.gen_bool(0.3) {
            // a truncated or spliced copy of an earlier document
            let src: Vec<&str> = docs[rng.gen_range(0..d)].text.split(' ').collect();
            let cut = rng.gen_range(0..=src.len());
            let mut t: Vec<String> = src[..cut].iter().map(|s| s.to_string()).collect();
            for _ in 0..rng.gen_range(0..10) {
                t.push(words.choose(rng).unwrap().clone());
            }
            t.join(" ")
        } else {
            let len = rng.gen_range(0..40);
            (0..len)
                .map(|_| words.choose(rng).unwrap().as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };
        docs.push(Document::new(format!("d{d:04}"), text));
    }
    docs
}

pub fn oracle_dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

/// Unit vectors in `groups` tight clusters of `per_group`, plus `loners`
/// isolated vectors.
pub fn clustered_vectors(
    rng: &mut ChaCha8Rng,
    dim: usize,
    groups: usize,
    per_group: usize,
    loners: usize,
    spread: f64,
) -> (Vec<String>, Vec<f32>) {
    let gauss = |rng: &mut ChaCha8Rng| -> f64 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let unit = |v: Vec<f64>| -> Vec<f32> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| (x / norm) as f32).collect()
    };
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for g in 0..groups {
        let center: Vec<f64> = (0..dim).map(|_| gauss(rng)).collect();
        let cn = center.iter().map(|x| x * x).sum::<f64>().sqrt();
        for m in 0..per_group {
            let v: Vec<f64> = center
                .iter()
                .map(|c| c / cn + spread * gauss(rng))
                .collect();
            ids.push(format!("g{g:05}m{m}"));
            data.extend(unit(v));
        }
    }
    for l in 0..loners {
        let v: Vec<f64> = (0..dim).map(|_| gauss(rng)).collect();
        ids.push(format!("l{l:05}"));
        data.extend(unit(v));
    }
    (ids, data)
}
