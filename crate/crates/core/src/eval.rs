//! Corpus evaluation: per-graph physical statistics, histogram KL
//! comparison between corpora, semantic-validity rates, and
//! link-prediction scoring.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{betti0, betti1, check_omega, OmegaMatrix, SpatialGraph};

/// Physical features of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub degrees: Vec<usize>,
    pub edge_count: usize,
    /// Euclidean edge lengths.
    pub lengths: Vec<f64>,
    /// Angles between incident edge pairs at each node, in degrees.
    pub angles_deg: Vec<f64>,
    pub betti0: usize,
    pub betti1: usize,
    /// Edges with coincident endpoints, excluded from angle statistics.
    pub zero_length_edges: usize,
}

/// Which scalar feature of [`GraphStats`] to histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Degree,
    EdgeCount,
    EdgeLength,
    EdgeAngle,
}

impl Feature {
    fn is_discrete(self) -> bool {
        matches!(self, Feature::Degree | Feature::EdgeCount)
    }
}

pub fn graph_stats(g: &SpatialGraph) -> GraphStats {
    let n = g.node_count();
    let degrees: Vec<usize> = (0..n).map(|v| g.degree(v).unwrap()).collect();

    let mut lengths = Vec::with_capacity(g.edge_count());
    let mut zero_length_edges = 0usize;
    for e in g.edges() {
        let len = dist(g.coords()[e.i], g.coords()[e.j]);
        if len < 1e-12 {
            zero_length_edges += 1;
        }
        lengths.push(len);
    }

    let mut angles_deg = Vec::new();
    for v in 0..n {
        let inc = g.incident(v).unwrap();
        for x in 0..inc.len() {
            for y in (x + 1)..inc.len() {
                let da = direction(g.coords()[v], g.coords()[inc[x].0]);
                let db = direction(g.coords()[v], g.coords()[inc[y].0]);
                if let (Some(ua), Some(ub)) = (da, db) {
                    let dot = (ua[0] * ub[0] + ua[1] * ub[1] + ua[2] * ub[2]).clamp(-1.0, 1.0);
                    angles_deg.push(dot.acos().to_degrees());
                }
            }
        }
    }

    GraphStats {
        degrees,
        edge_count: g.edge_count(),
        lengths,
        angles_deg,
        betti0: betti0(g),
        betti1: betti1(g),
        zero_length_edges,
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn direction(from: [f64; 3], to: [f64; 3]) -> Option<[f64; 3]> {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if len < 1e-12 {
        None
    } else {
        Some([d[0] / len, d[1] / len, d[2] / len])
    }
}

fn feature_values(stats: &[GraphStats], feature: Feature) -> Vec<f64> {
    match feature {
        Feature::Degree => {
            stats.iter().flat_map(|s| s.degrees.iter().map(|&d| d as f64)).collect()
        }
        Feature::EdgeCount => stats.iter().map(|s| s.edge_count as f64).collect(),
        Feature::EdgeLength => stats.iter().flat_map(|s| s.lengths.iter().copied()).collect(),
        Feature::EdgeAngle => stats.iter().flat_map(|s| s.angles_deg.iter().copied()).collect(),
    }
}

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let idx = if width <= 0.0 {
            0
        } else {
            (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize
        };
        counts[idx] += 1;
    }
    counts
}

/// Histogram KL divergence `KL(reference || generated)` in nats.
///
/// Bins span the reference range; generated values outside it are
/// clamped into the end bins. Discrete features (degree, edge count) use
/// unit-width integer bins and ignore `bins`. Both histograms receive
/// Laplace smoothing of one count per bin, so identical corpora give
/// exactly zero and disjoint supports stay finite.
pub fn kl_feature(
    reference: &[GraphStats],
    generated: &[GraphStats],
    feature: Feature,
    bins: usize,
) -> f64 {
    let ref_values = feature_values(reference, feature);
    let gen_values = feature_values(generated, feature);
    let range_source = if !ref_values.is_empty() { &ref_values } else { &gen_values };
    if range_source.is_empty() {
        return 0.0;
    }
    let lo = range_source.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = range_source.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));

    let n_bins = if feature.is_discrete() {
        (hi - lo) as usize + 1
    } else if hi > lo {
        bins.max(1)
    } else {
        1
    };
    let (lo, hi) = if feature.is_discrete() { (lo - 0.5, hi + 0.5) } else { (lo, hi) };

    let p_counts = histogram(&ref_values, lo, hi, n_bins);
    let q_counts = histogram(&gen_values, lo, hi, n_bins);
    let p_total = ref_values.len() + n_bins;
    let q_total = gen_values.len() + n_bins;

    let mut kl = 0.0;
    for (pc, qc) in p_counts.iter().zip(&q_counts) {
        let p = (pc + 1) as f64 / p_total as f64;
        let q = (qc + 1) as f64 / q_total as f64;
        kl += p * (p / q).ln();
    }
    kl.max(0.0)
}

/// Percentage of graphs with no semantic violations (and, when
/// `structural` is set, no cycles).
pub fn validity_rate(
    graphs: &[SpatialGraph],
    omega: Option<&OmegaMatrix>,
    structural: bool,
) -> f64 {
    if graphs.is_empty() {
        return 0.0;
    }
    let valid = graphs
        .iter()
        .filter(|g| {
            let semantic_ok = match omega {
                Some(om) => check_omega(g, om).map(|r| r.is_empty()).unwrap_or(false),
                None => true,
            };
            semantic_ok && (!structural || betti1(g) == 0)
        })
        .count();
    valid as f64 / graphs.len() as f64 * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkPredMetrics {
    /// Mean per-class recall over classes present in the held-out truth,
    /// in percent.
    pub balanced_accuracy: f64,
    /// Unweighted mean F1 over classes present in truth or prediction,
    /// in [0, 1].
    pub macro_f1: f64,
}

/// Scores a completed graph against the ground truth, restricted to
/// canonical pairs that carried no edge in `input`. The no-edge class 0
/// participates as an ordinary class.
pub fn link_pred_metrics(
    predicted: &SpatialGraph,
    truth: &SpatialGraph,
    input: &SpatialGraph,
) -> Result<LinkPredMetrics> {
    let n = truth.node_count();
    if predicted.node_count() != n || input.node_count() != n {
        return Err(Error::ShapeMismatch(format!(
            "node sets differ: predicted {}, truth {}, input {}",
            predicted.node_count(),
            n,
            input.node_count()
        )));
    }
    for e in input.edges() {
        if !truth.contains_pair(e.i, e.j) {
            return Err(Error::InvalidConfig(format!(
                "input edge ({}, {}) is absent from the ground truth",
                e.i, e.j
            )));
        }
    }

    let class_of = |g: &SpatialGraph, i: usize, j: usize| {
        g.incident(i)
            .unwrap()
            .iter()
            .find(|&&(u, _)| u == j)
            .map(|&(_, l)| l)
            .unwrap_or(0)
    };

    let mut class_universe = BTreeSet::new();
    let mut confusion: Vec<(usize, usize)> = Vec::new(); // (true, predicted)
    for i in 0..n {
        for j in (i + 1)..n {
            if input.contains_pair(i, j) {
                continue;
            }
            let t = class_of(truth, i, j);
            let p = class_of(predicted, i, j);
            class_universe.insert(t);
            class_universe.insert(p);
            confusion.push((t, p));
        }
    }

    let mut recalls = Vec::new();
    let mut f1s = Vec::new();
    for &class in &class_universe {
        let tp = confusion.iter().filter(|&&(t, p)| t == class && p == class).count();
        let fn_ = confusion.iter().filter(|&&(t, p)| t == class && p != class).count();
        let fp = confusion.iter().filter(|&&(t, p)| t != class && p == class).count();
        if tp + fn_ > 0 {
            recalls.push(tp as f64 / (tp + fn_) as f64);
        }
        if 2 * tp + fp + fn_ > 0 {
            f1s.push(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
        }
    }
    let balanced_accuracy = if recalls.is_empty() {
        0.0
    } else {
        recalls.iter().sum::<f64>() / recalls.len() as f64 * 100.0
    };
    let macro_f1 =
        if f1s.is_empty() { 0.0 } else { f1s.iter().sum::<f64>() / f1s.len() as f64 };
    Ok(LinkPredMetrics { balanced_accuracy, macro_f1 })
}

/// Table-style corpus comparison; KL values are scaled by 1000.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusComparison {
    pub kl_degree_x1e3: f64,
    pub kl_edge_count_x1e3: f64,
    pub kl_edge_length_x1e3: f64,
    pub kl_edge_angle_x1e3: f64,
    /// Absolute difference of corpus-mean Betti numbers.
    pub beta0_mean_abs_diff: f64,
    pub beta1_mean_abs_diff: f64,
    pub semantic_validity_pct: f64,
}

pub fn compare_corpora(
    reference: &[SpatialGraph],
    generated: &[SpatialGraph],
    omega: Option<&OmegaMatrix>,
    structural: bool,
    bins: usize,
) -> CorpusComparison {
    let ref_stats: Vec<GraphStats> = reference.iter().map(graph_stats).collect();
    let gen_stats: Vec<GraphStats> = generated.iter().map(graph_stats).collect();
    let mean = |xs: &[GraphStats], f: &dyn Fn(&GraphStats) -> f64| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().map(f).sum::<f64>() / xs.len() as f64
        }
    };
    CorpusComparison {
        kl_degree_x1e3: kl_feature(&ref_stats, &gen_stats, Feature::Degree, bins) * 1e3,
        kl_edge_count_x1e3: kl_feature(&ref_stats, &gen_stats, Feature::EdgeCount, bins) * 1e3,
        kl_edge_length_x1e3: kl_feature(&ref_stats, &gen_stats, Feature::EdgeLength, bins) * 1e3,
        kl_edge_angle_x1e3: kl_feature(&ref_stats, &gen_stats, Feature::EdgeAngle, bins) * 1e3,
        beta0_mean_abs_diff: (mean(&ref_stats, &|s| s.betti0 as f64)
            - mean(&gen_stats, &|s| s.betti0 as f64))
        .abs(),
        beta1_mean_abs_diff: (mean(&ref_stats, &|s| s.betti1 as f64)
            - mean(&gen_stats, &|s| s.betti1 as f64))
        .abs(),
        semantic_validity_pct: validity_rate(generated, omega, structural),
    }
}
