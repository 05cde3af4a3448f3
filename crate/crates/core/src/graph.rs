//! Similarity graphs and their partition into duplicate clusters.
//!
//! Connected components give single-linkage clusters. Louvain modularity
//! optimization runs inside each component to cut weak bridges between
//! otherwise separate groups, so its output always refines the components.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::overlap::{EdgeRecord, Metric, ScoredPair};
use crate::par;

#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    ids: Vec<String>,
    edges: Vec<ScoredPair>,
    pub weighted: bool,
}

impl SimilarityGraph {
    /// Graph over `ids` from position-addressed pairs. Duplicate edges
    /// collapse to one, keeping the highest score.
    pub fn from_pairs(ids: Vec<String>, mut pairs: Vec<ScoredPair>) -> Result<Self> {
        let n = ids.len();
        for p in &pairs {
            if p.a as usize >= n || p.b as usize >= n {
                return Err(Error::Invariant(format!(
                    "edge ({}, {}) outside {n} nodes",
                    p.a, p.b
                )));
            }
            if p.a == p.b {
                return Err(Error::SelfLoop(ids[p.a as usize].clone()));
            }
        }
        for p in pairs.iter_mut() {
            if p.a > p.b {
                std::mem::swap(&mut p.a, &mut p.b);
            }
        }
        par::sort_unstable_by(&mut pairs, |p, q| {
            (p.a, p.b)
                .cmp(&(q.a, q.b))
                .then(q.score.total_cmp(&p.score))
        });
        pairs.dedup_by_key(|p| (p.a, p.b));
        Ok(SimilarityGraph {
            ids,
            edges: pairs,
            weighted: false,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edges(&self) -> &[ScoredPair] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn edge_weight(&self, p: &ScoredPair) -> f64 {
        if self.weighted {
            p.score
        } else {
            1.0
        }
    }
}

/// Builds a graph over every corpus document from id-addressed edges.
pub fn build_graph<S: AsRef<str>>(doc_ids: &[S], edges: &[EdgeRecord]) -> Result<SimilarityGraph> {
    let ids: Vec<String> = doc_ids.iter().map(|s| s.as_ref().to_owned()).collect();
    let pos: HashMap<&str, u32> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i as u32))
        .collect();
    let lookup = |id: &str| {
        pos.get(id)
            .copied()
            .ok_or_else(|| Error::UnknownEndpoint(id.to_owned()))
    };
    let mut pairs = Vec::with_capacity(edges.len());
    for e in edges {
        let (a, b) = (lookup(&e.id_a)?, lookup(&e.id_b)?);
        if a == b {
            return Err(Error::SelfLoop(e.id_a.clone()));
        }
        pairs.push(ScoredPair::new(a, b, e.score, e.metric));
    }
    drop(pos);
    SimilarityGraph::from_pairs(ids, pairs)
}

/// A total assignment of documents to clusters.
///
/// Documents are held sorted by id; `labels[i]` indexes `names`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    ids: Vec<String>,
    labels: Vec<u32>,
    names: Vec<String>,
    pub method_tag: String,
}

impl Clustering {
    /// Builds a clustering from `(doc id, cluster name)` pairs.
    pub fn from_assignment<I, A, B>(pairs: I, method_tag: impl Into<String>) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut rows: Vec<(String, String)> = pairs
            .into_iter()
            .map(|(a, b)| (a.into(), b.into()))
            .collect();
        rows.sort_unstable();
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateId(w[0].0.clone()));
        }
        let mut name_to_label: HashMap<String, u32> = HashMap::new();
        let mut names = Vec::new();
        let mut ids = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for (id, name) in rows {
            let next = names.len() as u32;
            let label = *name_to_label.entry(name.clone()).or_insert_with(|| {
                names.push(name);
                next
            });
            ids.push(id);
            labels.push(label);
        }
        Ok(Clustering {
            ids,
            labels,
            names,
            method_tag: method_tag.into(),
        })
    }

    /// Clusters named by their lexicographically smallest member.
    fn from_groups(ids: &[String], group_of: &[u32], method_tag: &str) -> Self {
        let mut rep: HashMap<u32, &str> = HashMap::new();
        for (id, &g) in ids.iter().zip(group_of) {
            rep.entry(g)
                .and_modify(|r| {
                    if id.as_str() < *r {
                        *r = id.as_str();
                    }
                })
                .or_insert(id.as_str());
        }
        Self::from_assignment(
            ids.iter()
                .zip(group_of)
                .map(|(id, g)| (id.clone(), rep[g].to_owned())),
            method_tag,
        )
        .expect("graph node ids are unique")
    }

    /// The gold partition recorded in the documents' `gold_cluster` fields.
    pub fn gold(docs: &[Document]) -> Result<Self> {
        let mut pairs = Vec::with_capacity(docs.len());
        for d in docs {
            let g = d
                .gold_cluster
                .as_ref()
                .ok_or_else(|| Error::Unlabeled(d.id.clone()))?;
            pairs.push((d.id.clone(), g.clone()));
        }
        Self::from_assignment(pairs, "gold")
    }

    pub fn all_singletons<S: AsRef<str>>(ids: &[S], method_tag: &str) -> Self {
        Self::from_assignment(
            ids.iter()
                .map(|s| (s.as_ref().to_owned(), s.as_ref().to_owned())),
            method_tag,
        )
        .expect("ids must be unique")
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Sorted document ids.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Dense cluster label per document, aligned with [`Self::ids`].
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.names.len()
    }

    pub fn cluster_name(&self, label: u32) -> &str {
        &self.names[label as usize]
    }

    pub fn cluster_of(&self, doc_id: &str) -> Option<&str> {
        let i = self.ids.binary_search_by(|x| x.as_str().cmp(doc_id)).ok()?;
        Some(self.cluster_name(self.labels[i]))
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.names.len()];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    pub fn write_to<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        for (id, &l) in self.ids.iter().zip(&self.labels) {
            writeln!(w, "{}\t{}", id, self.names[l as usize])?;
        }
        w.flush()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(file).map_err(|e| Error::io(path, e))
    }

    pub fn read_from<R: Read>(reader: R, method_tag: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let bad = |message: String| Error::Malformed {
                line: idx + 1,
                message,
            };
            let line = line.map_err(|e| bad(e.to_string()))?;
            let (id, cluster) = line
                .split_once('\t')
                .filter(|(a, b)| !a.is_empty() && !b.is_empty() && !b.contains('\t'))
                .ok_or_else(|| bad("expected `doc_id<TAB>cluster_id`".into()))?;
            pairs.push((id.to_owned(), cluster.to_owned()));
        }
        Self::from_assignment(pairs, method_tag)
    }

    pub fn load(path: impl AsRef<Path>, method_tag: &str) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file, method_tag)
    }
}

struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
    }
}

fn component_roots(g: &SimilarityGraph) -> Vec<u32> {
    let mut uf = UnionFind::new(g.node_count());
    for e in &g.edges {
        uf.union(e.a, e.b);
    }
    (0..g.node_count() as u32).map(|i| uf.find(i)).collect()
}

/// Single-linkage clusters: one per connected component.
pub fn connected_components(g: &SimilarityGraph) -> Clustering {
    Clustering::from_groups(&g.ids, &component_roots(g), "components")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LouvainConfig {
    pub resolution: f64,
    /// Use pair scores as edge weights instead of 1.
    pub weighted: bool,
    /// Shuffle the node visit order with this seed; `None` visits nodes in
    /// id order.
    pub seed: Option<u64>,
}

impl Default for LouvainConfig {
    fn default() -> Self {
        LouvainConfig {
            resolution: 1.0,
            weighted: false,
            seed: None,
        }
    }
}

/// Weighted undirected graph in adjacency-list form. `self_loops[i]` holds
/// the weight of edges folded into node `i` by aggregation.
#[derive(Debug, Clone)]
struct LocalGraph {
    adj: Vec<Vec<(u32, f64)>>,
    self_loops: Vec<f64>,
}

impl LocalGraph {
    fn degrees(&self) -> Vec<f64> {
        self.adj
            .iter()
            .zip(&self.self_loops)
            .map(|(nbrs, s)| nbrs.iter().map(|e| e.1).sum::<f64>() + 2.0 * s)
            .collect()
    }
}

/// Modularity of `labels` on the graph given as an edge list over `n` nodes,
/// `Q = sum_c [ in_c / m - resolution * (tot_c / 2m)^2 ]`.
pub fn modularity(n: usize, edges: &[(u32, u32, f64)], labels: &[u32], resolution: f64) -> f64 {
    let m: f64 = edges.iter().map(|e| e.2).sum();
    if m == 0.0 {
        return 0.0;
    }
    let clusters = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut inside = vec![0.0; clusters];
    let mut tot = vec![0.0; clusters];
    let mut deg = vec![0.0; n];
    for &(a, b, w) in edges {
        deg[a as usize] += w;
        deg[b as usize] += w;
        if labels[a as usize] == labels[b as usize] {
            inside[labels[a as usize] as usize] += w;
        }
    }
    for (i, d) in deg.iter().enumerate() {
        tot[labels[i] as usize] += d;
    }
    inside
        .iter()
        .zip(&tot)
        .map(|(i, t)| i / m - resolution * (t / (2.0 * m)).powi(2))
        .sum()
}

/// Louvain community detection, run independently inside every connected
/// component against the modularity of the whole graph, which matches a
/// single pass over all components. Isolated nodes stay singletons.
pub fn louvain(g: &SimilarityGraph, cfg: &LouvainConfig) -> Result<Clustering> {
    if cfg.resolution.is_nan() || cfg.resolution <= 0.0 {
        return Err(Error::config(format!(
            "louvain resolution {} must be positive",
            cfg.resolution
        )));
    }
    let n = g.node_count();
    let roots = component_roots(g);
    let mut members: HashMap<u32, Vec<u32>> = HashMap::new();
    for (i, &r) in roots.iter().enumerate() {
        members.entry(r).or_default().push(i as u32);
    }
    let mut components: Vec<Vec<u32>> = members.into_values().filter(|m| m.len() > 1).collect();
    for c in components.iter_mut() {
        c.sort_unstable_by(|&x, &y| g.ids[x as usize].cmp(&g.ids[y as usize]));
    }
    components.sort_unstable_by(|x, y| g.ids[x[0] as usize].cmp(&g.ids[y[0] as usize]));

    let mut local_pos = vec![0u32; n];
    for c in &components {
        for (k, &node) in c.iter().enumerate() {
            local_pos[node as usize] = k as u32;
        }
    }
    let mut incident: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for e in &g.edges {
        let w = g.edge_weight(e);
        incident[e.a as usize].push((e.b, w));
        incident[e.b as usize].push((e.a, w));
    }
    let two_m: f64 = g.edges.iter().map(|e| 2.0 * g.edge_weight(e)).sum();

    let partitions = par::map(&components, |nodes| {
        let local = LocalGraph {
            adj: nodes
                .iter()
                .map(|&v| {
                    incident[v as usize]
                        .iter()
                        .map(|&(u, w)| (local_pos[u as usize], w))
                        .collect()
                })
                .collect(),
            self_loops: vec![0.0; nodes.len()],
        };
        let seed = cfg
            .seed
            .map(|s| s ^ crate::hash::hash_bytes(g.ids[nodes[0] as usize].as_bytes(), 0));
        louvain_local(local, cfg.resolution, seed, two_m)
    });

    let mut group_of: Vec<u32> = (0..n as u32).collect();
    for (nodes, part) in components.iter().zip(partitions) {
        for (k, &v) in nodes.iter().enumerate() {
            group_of[v as usize] = nodes[part[k] as usize];
        }
    }
    Ok(Clustering::from_groups(&g.ids, &group_of, "louvain"))
}

/// Returns, for every node of `graph`, the local index of a representative
/// node of its final community.
fn louvain_local(
    mut graph: LocalGraph,
    resolution: f64,
    seed: Option<u64>,
    two_m: f64,
) -> Vec<u32> {
    let n0 = graph.adj.len();
    // node_comm[v] = community (at the current level) containing original v
    let mut membership: Vec<u32> = (0..n0 as u32).collect();
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    loop {
        let comm = local_moving(&graph, resolution, two_m, rng.as_mut());
        let (renumbered, count) = renumber(&comm);
        if count == graph.adj.len() {
            break;
        }
        for m in membership.iter_mut() {
            *m = renumbered[*m as usize];
        }
        graph = aggregate(&graph, &renumbered, count);
    }
    // Represent each community by its first original member.
    let mut first: HashMap<u32, u32> = HashMap::new();
    membership
        .iter()
        .enumerate()
        .map(|(v, c)| *first.entry(*c).or_insert(v as u32))
        .collect()
}

/// `two_m` is twice the edge weight of the whole graph, so gains match a
/// Louvain pass over all components at once.
fn local_moving(
    graph: &LocalGraph,
    resolution: f64,
    two_m: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Vec<u32> {
    let n = graph.adj.len();
    let degree = graph.degrees();
    let mut comm: Vec<u32> = (0..n as u32).collect();
    let mut tot: Vec<f64> = degree.clone();
    if degree.iter().sum::<f64>() == 0.0 {
        return comm;
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    let mut links: Vec<f64> = vec![0.0; n];
    let mut touched: Vec<u32> = Vec::new();
    loop {
        let mut moved = false;
        for &v in &order {
            let v = v as usize;
            let own = comm[v];
            let kv = degree[v];
            for &(u, w) in &graph.adj[v] {
                let c = comm[u as usize];
                if links[c as usize] == 0.0 {
                    touched.push(c);
                }
                links[c as usize] += w;
            }
            tot[own as usize] -= kv;
            let gain = |c: u32, links: &[f64]| {
                links[c as usize] - resolution * tot[c as usize] * kv / two_m
            };
            let mut best = own;
            let mut best_gain = gain(own, &links);
            let stay_gain = best_gain;
            touched.sort_unstable();
            touched.dedup();
            for &c in &touched {
                let g = gain(c, &links);
                if g > best_gain {
                    best = c;
                    best_gain = g;
                }
            }
            if best != own && best_gain - stay_gain <= 1e-12 * two_m.max(1.0) {
                best = own;
            }
            tot[best as usize] += kv;
            if best != own {
                comm[v] = best;
                moved = true;
            }
            for &c in &touched {
                links[c as usize] = 0.0;
            }
            touched.clear();
        }
        if !moved {
            break;
        }
    }
    comm
}

fn renumber(comm: &[u32]) -> (Vec<u32>, usize) {
    let mut map = vec![u32::MAX; comm.len()];
    let mut next = 0u32;
    let out = comm
        .iter()
        .map(|&c| {
            if map[c as usize] == u32::MAX {
                map[c as usize] = next;
                next += 1;
            }
            map[c as usize]
        })
        .collect();
    (out, next as usize)
}

fn aggregate(graph: &LocalGraph, comm: &[u32], count: usize) -> LocalGraph {
    let mut self_loops = vec![0.0; count];
    let mut weights: Vec<HashMap<u32, f64>> = vec![HashMap::new(); count];
    for (v, nbrs) in graph.adj.iter().enumerate() {
        let cv = comm[v];
        self_loops[cv as usize] += graph.self_loops[v];
        for &(u, w) in nbrs {
            let cu = comm[u as usize];
            if cu == cv {
                // each internal edge is seen from both ends
                self_loops[cv as usize] += w / 2.0;
            } else {
                *weights[cv as usize].entry(cu).or_insert(0.0) += w;
            }
        }
    }
    let adj = weights
        .into_iter()
        .map(|m| {
            let mut v: Vec<(u32, f64)> = m.into_iter().collect();
            v.sort_unstable_by_key(|e| e.0);
            v
        })
        .collect();
    LocalGraph { adj, self_loops }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub documents: usize,
    pub clusters: usize,
    pub non_singleton_clusters: usize,
    /// Documents in non-singleton clusters.
    pub reproduced_articles: usize,
    pub singletons: usize,
    /// Mean size of non-singleton clusters: the mean number of times a
    /// reproduced article appears. Zero when undefined.
    pub mean_times_reproduced: f64,
    pub mean_defined: bool,
    pub max_cluster_size: usize,
}

pub fn cluster_stats(c: &Clustering) -> ClusterStats {
    let sizes = c.cluster_sizes();
    let big: Vec<usize> = sizes.iter().copied().filter(|&s| s > 1).collect();
    let reproduced: usize = big.iter().sum();
    ClusterStats {
        documents: c.len(),
        clusters: sizes.len(),
        non_singleton_clusters: big.len(),
        reproduced_articles: reproduced,
        singletons: sizes.len() - big.len(),
        mean_times_reproduced: if big.is_empty() {
            0.0
        } else {
            reproduced as f64 / big.len() as f64
        },
        mean_defined: !big.is_empty(),
        max_cluster_size: sizes.iter().copied().max().unwrap_or(0),
    }
}

/// Converts a graph to position-addressed id edges, for writing.
pub fn graph_records(g: &SimilarityGraph) -> Vec<EdgeRecord> {
    crate::overlap::to_records(&g.edges, &g.ids)
}

/// Two cliques of `size` nodes joined by a single bridge edge.
pub fn two_cliques_with_bridge(size: usize) -> SimilarityGraph {
    let ids: Vec<String> = (0..2 * size).map(|i| format!("n{i:04}")).collect();
    let mut pairs = Vec::new();
    for block in [0, size] {
        for i in block..block + size {
            for j in i + 1..block + size {
                pairs.push(ScoredPair::new(i as u32, j as u32, 1.0, Metric::External));
            }
        }
    }
    pairs.push(ScoredPair::new(
        (size - 1) as u32,
        size as u32,
        1.0,
        Metric::External,
    ));
    SimilarityGraph::from_pairs(ids, pairs).expect("valid construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n)
            .map(|i| format!("{}", (b'a' + i as u8) as char))
            .collect()
    }

    fn rec(a: &str, b: &str) -> EdgeRecord {
        EdgeRecord {
            id_a: a.into(),
            id_b: b.into(),
            score: 1.0,
            metric: Metric::OverlapMin,
        }
    }

    #[test]
    fn isolated_nodes_are_kept() {
        let g = build_graph(&ids(5), &[]).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (5, 0));
        let c = connected_components(&g);
        assert_eq!(c.num_clusters(), 5);
        assert_eq!(
            louvain(&g, &LouvainConfig::default())
                .unwrap()
                .num_clusters(),
            5
        );
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = build_graph(&ids(3), &[rec("a", "b"), rec("b", "a"), rec("a", "b")]).unwrap();
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn unknown_endpoint_is_named() {
        match build_graph(&ids(2), &[rec("a", "ghost")]) {
            Err(Error::UnknownEndpoint(id)) => assert_eq!(id, "ghost"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            build_graph(&ids(2), &[rec("a", "a")]),
            Err(Error::SelfLoop(_))
        ));
    }

    #[test]
    fn path_is_one_component_named_by_smallest_id() {
        let g = build_graph(&["c", "b", "a", "z"], &[rec("c", "b"), rec("b", "a")]).unwrap();
        let c = connected_components(&g);
        assert_eq!(c.num_clusters(), 2);
        for id in ["a", "b", "c"] {
            assert_eq!(c.cluster_of(id), Some("a"));
        }
        assert_eq!(c.cluster_of("z"), Some("z"));
    }

    #[test]
    fn clique_is_one_community() {
        let n = 5;
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                pairs.push(ScoredPair::new(i, j, 1.0, Metric::External));
            }
        }
        let g = SimilarityGraph::from_pairs(ids(n as usize), pairs).unwrap();
        assert_eq!(
            louvain(&g, &LouvainConfig::default())
                .unwrap()
                .num_clusters(),
            1
        );
    }

    #[test]
    fn bridge_between_cliques_is_cut() {
        let g = two_cliques_with_bridge(20);
        assert_eq!(connected_components(&g).num_clusters(), 1);
        let c = louvain(&g, &LouvainConfig::default()).unwrap();
        assert_eq!(c.num_clusters(), 2);
        assert_eq!(c.cluster_sizes(), vec![20, 20]);
        let seeded = louvain(
            &g,
            &LouvainConfig {
                seed: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(seeded.cluster_sizes(), vec![20, 20]);
    }

    #[test]
    fn bad_resolution_is_rejected() {
        let g = build_graph(&ids(2), &[]).unwrap();
        let cfg = LouvainConfig {
            resolution: 0.0,
            ..Default::default()
        };
        assert!(louvain(&g, &cfg).is_err());
    }

    #[test]
    fn aggregation_preserves_modularity() {
        let g = two_cliques_with_bridge(6);
        let n = g.node_count();
        let local = LocalGraph {
            adj: (0..n)
                .map(|v| {
                    g.edges()
                        .iter()
                        .filter_map(|e| {
                            if e.a as usize == v {
                                Some((e.b, 1.0))
                            } else if e.b as usize == v {
                                Some((e.a, 1.0))
                            } else {
                                None
                            }
                        })
                        .collect()
                })
                .collect(),
            self_loops: vec![0.0; n],
        };
        let comm: Vec<u32> = (0..n as u32).map(|v| v / 6).collect();
        let agg = aggregate(&local, &comm, 2);
        assert_eq!(agg.self_loops, vec![15.0, 15.0]);
        assert_eq!(agg.adj[0], vec![(1, 1.0)]);
        assert_eq!(agg.degrees().iter().sum::<f64>(), 62.0);
    }

    #[test]
    fn stats_of_small_clusterings() {
        let c = Clustering::from_assignment([("a", "x"), ("b", "x"), ("c", "y")], "t").unwrap();
        let s = cluster_stats(&c);
        assert_eq!(
            (
                s.non_singleton_clusters,
                s.singletons,
                s.reproduced_articles
            ),
            (1, 1, 2)
        );
        assert_eq!(s.mean_times_reproduced, 2.0);
        let s = cluster_stats(&Clustering::all_singletons(&ids(4), "t"));
        assert_eq!(s.non_singleton_clusters, 0);
        assert!(!s.mean_defined);
        assert_eq!(s.mean_times_reproduced, 0.0);
    }

    #[test]
    fn clustering_file_round_trip() {
        let c =
            Clustering::from_assignment([("b", "g2"), ("a", "g1"), ("c", "g1")], "gold").unwrap();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "a\tg1\nb\tg2\nc\tg1\n"
        );
        assert_eq!(Clustering::read_from(buf.as_slice(), "gold").unwrap(), c);
        assert!(Clustering::read_from("a\n".as_bytes(), "x").is_err());
        assert!(matches!(
            Clustering::from_assignment([("a", "1"), ("a", "2")], "x"),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn gold_requires_labels() {
        let docs = vec![
            Document::new("a", "x").with_gold("g"),
            Document::new("b", "y"),
        ];
        assert!(matches!(Clustering::gold(&docs), Err(Error::Unlabeled(id)) if id == "b"));
    }
}
