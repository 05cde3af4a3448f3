//! Clustering evaluation against gold labels and validation-set threshold
//! tuning.
//!
//! Pair counts come from the contingency table, never from enumerating
//! document pairs, so evaluation stays linear in corpus size.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::graph::{cluster_stats, ClusterStats, Clustering};
use crate::par;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `(predicted label, gold label) -> count`, nonzero cells only.
    pub cells: HashMap<(u32, u32), u64>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

impl ContingencyTable {
    pub fn new(pred: &Clustering, gold: &Clustering) -> Result<Self> {
        check_same_docs(pred, gold)?;
        let mut cells = HashMap::new();
        let mut row_sums = vec![0u64; pred.num_clusters()];
        let mut col_sums = vec![0u64; gold.num_clusters()];
        for (&p, &g) in pred.labels().iter().zip(gold.labels()) {
            *cells.entry((p, g)).or_insert(0) += 1;
            row_sums[p as usize] += 1;
            col_sums[g as usize] += 1;
        }
        Ok(ContingencyTable {
            cells,
            row_sums,
            col_sums,
            total: pred.len() as u64,
        })
    }

    /// Same-cluster pair counts: (both, predicted, gold, all pairs).
    pub fn pair_counts(&self) -> PairCounts {
        PairCounts {
            both: self.cells.values().map(|&c| choose2(c)).sum(),
            predicted: self.row_sums.iter().map(|&c| choose2(c)).sum(),
            gold: self.col_sums.iter().map(|&c| choose2(c)).sum(),
            all: choose2(self.total),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub both: u128,
    pub predicted: u128,
    pub gold: u128,
    pub all: u128,
}

fn choose2(x: u64) -> u128 {
    let x = x as u128;
    x * x.saturating_sub(1) / 2
}

fn check_same_docs(pred: &Clustering, gold: &Clustering) -> Result<()> {
    if pred.ids() == gold.ids() {
        return Ok(());
    }
    let (mut i, mut j) = (0, 0);
    let (a, b) = (pred.ids(), gold.ids());
    let (mut only_pred, mut only_gold) = (Vec::new(), Vec::new());
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) if x == y => {
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x < y => {
                only_pred.push(x.clone());
                i += 1;
            }
            (Some(_), Some(y)) => {
                only_gold.push(y.clone());
                j += 1;
            }
            (Some(x), None) => {
                only_pred.push(x.clone());
                i += 1;
            }
            (None, Some(y)) => {
                only_gold.push(y.clone());
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    Err(Error::DocSetMismatch {
        only_pred,
        only_gold,
    })
}

/// Hubert-Arabie adjusted Rand index. Defined as 1 when the chance-corrected
/// denominator vanishes, which only happens for identical partitions.
pub fn adjusted_rand_index(pred: &Clustering, gold: &Clustering) -> Result<f64> {
    Ok(ari_from_counts(
        ContingencyTable::new(pred, gold)?.pair_counts(),
    ))
}

pub fn ari_from_counts(c: PairCounts) -> f64 {
    // ARI = (index - sa*sb/N) / ((sa+sb)/2 - sa*sb/N), scaled by 2N to stay
    // in exact integer arithmetic until the final division.
    let (index, sa, sb, all) = (
        c.both as i128,
        c.predicted as i128,
        c.gold as i128,
        c.all as i128,
    );
    let num = 2 * all * index - 2 * sa * sb;
    let den = all * (sa + sb) - 2 * sa * sb;
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positive_pairs: u64,
    pub false_positive_pairs: u64,
    pub false_negative_pairs: u64,
}

/// Pair-level precision, recall and F1. Precision is 1 when nothing is
/// predicted as duplicate; recall is 1 when gold has no duplicates.
pub fn pairwise_prf(pred: &Clustering, gold: &Clustering) -> Result<PairwiseScores> {
    Ok(prf_from_counts(
        ContingencyTable::new(pred, gold)?.pair_counts(),
    ))
}

pub fn prf_from_counts(c: PairCounts) -> PairwiseScores {
    let precision = if c.predicted == 0 {
        1.0
    } else {
        c.both as f64 / c.predicted as f64
    };
    let recall = if c.gold == 0 {
        1.0
    } else {
        c.both as f64 / c.gold as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PairwiseScores {
        precision,
        recall,
        f1,
        true_positive_pairs: c.both as u64,
        false_positive_pairs: (c.predicted - c.both) as u64,
        false_negative_pairs: (c.gold - c.both) as u64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub ari: f64,
    pub f1_variant: String,
    pub pairwise_precision: f64,
    pub pairwise_recall: f64,
    pub pairwise_f1: f64,
    pub true_positive_pairs: u64,
    pub false_positive_pairs: u64,
    pub false_negative_pairs: u64,
    pub predicted: ClusterStats,
    pub gold: ClusterStats,
}

pub fn evaluate(pred: &Clustering, gold: &Clustering) -> Result<EvalReport> {
    let counts = ContingencyTable::new(pred, gold)?.pair_counts();
    let prf = prf_from_counts(counts);
    Ok(EvalReport {
        method: pred.method_tag.clone(),
        ari: ari_from_counts(counts),
        f1_variant: "pairwise".into(),
        pairwise_precision: prf.precision,
        pairwise_recall: prf.recall,
        pairwise_f1: prf.f1,
        true_positive_pairs: prf.true_positive_pairs,
        false_positive_pairs: prf.false_positive_pairs,
        false_negative_pairs: prf.false_negative_pairs,
        predicted: cluster_stats(pred),
        gold: cluster_stats(gold),
    })
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method                {}", self.method);
        let _ = writeln!(s, "ARI                   {:.4}", self.ari);
        let _ = writeln!(s, "pairwise precision    {:.4}", self.pairwise_precision);
        let _ = writeln!(s, "pairwise recall       {:.4}", self.pairwise_recall);
        let _ = writeln!(s, "pairwise F1           {:.4}", self.pairwise_f1);
        let _ = writeln!(
            s,
            "TP / FP / FN pairs    {} / {} / {}",
            self.true_positive_pairs, self.false_positive_pairs, self.false_negative_pairs
        );
        let _ = writeln!(s, "                      predicted    gold");
        let _ = writeln!(
            s,
            "clusters              {:<12} {}",
            self.predicted.clusters, self.gold.clusters
        );
        let _ = writeln!(
            s,
            "reproduced articles   {:<12} {}",
            self.predicted.reproduced_articles, self.gold.reproduced_articles
        );
        let _ = writeln!(
            s,
            "mean times reproduced {:<12.3} {:.3}",
            self.predicted.mean_times_reproduced, self.gold.mean_times_reproduced
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_threshold: f64,
    pub best_ari: f64,
    /// `(threshold, ARI)` for every grid point, in grid order.
    pub curve: Vec<(f64, f64)>,
}

impl TuneResult {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("threshold,ari\n");
        for (t, a) in &self.curve {
            let _ = writeln!(s, "{t},{a}");
        }
        s
    }
}

/// Runs `runner` at every grid point and scores its clustering against the
/// gold labels of `validation`. Ties go to the smallest threshold.
pub fn tune_threshold<F>(runner: F, validation: &[Document], grid: &[f64]) -> Result<TuneResult>
where
    F: Fn(f64) -> Result<Clustering> + Sync + Send,
{
    let gold = Clustering::gold(validation)?;
    tune_against(runner, &gold, grid)
}

pub fn tune_against<F>(runner: F, gold: &Clustering, grid: &[f64]) -> Result<TuneResult>
where
    F: Fn(f64) -> Result<Clustering> + Sync + Send,
{
    if grid.is_empty() {
        return Err(Error::config("tuning grid is empty"));
    }
    let aris = par::map(grid, |&t| {
        runner(t).and_then(|c| adjusted_rand_index(&c, gold))
    });
    let mut curve = Vec::with_capacity(grid.len());
    for (&t, ari) in grid.iter().zip(aris) {
        curve.push((t, ari?));
    }
    let &(best_threshold, best_ari) = curve
        .iter()
        .reduce(|best, cur| {
            if cur.1 > best.1 || (cur.1 == best.1 && cur.0 < best.0) {
                cur
            } else {
                best
            }
        })
        .expect("grid is nonempty");
    Ok(TuneResult {
        best_threshold,
        best_ari,
        curve,
    })
}

/// Inclusive grid `start, start + step, ..., stop`, rounded to 1e-9.
pub fn grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0, "grid step must be positive");
    let steps = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=steps)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

pub fn overlap_grid() -> Vec<f64> {
    grid(0.01, 1.0, 0.01)
}

pub fn cosine_grid() -> Vec<f64> {
    grid(0.80, 0.99, 0.005)
}

pub fn collision_grid(k: usize) -> Vec<f64> {
    (1..=k).map(|c| c as f64).collect()
}
