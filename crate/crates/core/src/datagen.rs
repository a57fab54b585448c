//! Synthetic training corpora: hierarchy-labeled airway-style trees and
//! template-based ring-plus-branch graphs, plus corpus I/O.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{check_omega, OmegaMatrix, SpatialGraph};
use crate::io::{load_graph, read_json, save_graph, write_json_atomic};

/// Label-hierarchy constraint used by the tree generator: labels are
/// levels, and two labels may meet at a node only when their levels
/// differ by at most one.
pub fn hierarchy_omega(levels: usize) -> OmegaMatrix {
    OmegaMatrix::from_fn(levels, |a, b| a.abs_diff(b) >= 2).expect("valid hierarchy")
}

/// Grows a random spatial tree with depth-based edge labels.
///
/// Nodes attach to a parent chosen preferentially among nodes with
/// spare child slots; positions continue the parent direction with
/// angular noise; the edge to a child is labeled with the parent's
/// level clamped to 1..=4. Levels increase by at most one per
/// generation, so every output satisfies [`hierarchy_omega`] and is a
/// tree by construction.
pub fn gen_airway_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SpatialGraph {
    assert!(n >= 2, "a tree needs at least 2 nodes");

    let mut coords: Vec<[f64; 3]> = vec![[0.0; 3]];
    let mut level: Vec<usize> = vec![1];
    let mut children: Vec<usize> = vec![0];
    let mut incoming: Vec<[f64; 3]> = vec![random_unit(rng)];
    let mut edges: Vec<(usize, usize, usize)> = Vec::with_capacity(n - 1);

    for child in 1..n {
        // prefer extending leaves over branching off mid-tree nodes
        let weights: Vec<f64> = (0..child)
            .map(|v| match children[v] {
                0 => 3.0,
                1 => 1.0,
                _ => 0.0,
            })
            .collect();
        let parent = crate::rng::sample_categorical(rng, &weights);

        let deflect = 0.55;
        let mut dir = incoming[parent];
        for d in dir.iter_mut() {
            let eps: f64 = StandardNormal.sample(rng);
            *d += deflect * eps;
        }
        let dir = normalize(dir);
        let len = 0.9 * 0.88f64.powi(level[parent] as i32 - 1) * (0.75 + 0.5 * rng.random::<f64>());
        let pos = [
            coords[parent][0] + len * dir[0],
            coords[parent][1] + len * dir[1],
            coords[parent][2] + len * dir[2],
        ];

        let label = level[parent].min(4);
        edges.push((parent, child, label));
        children[parent] += 1;

        let child_level = level[parent] + usize::from(rng.random::<f64>() < 0.35);
        coords.push(pos);
        level.push(child_level);
        children.push(0);
        incoming.push(dir);
    }

    SpatialGraph::new(coords, edges).expect("construction yields a valid tree")
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-6 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
    [v[0] / norm, v[1] / norm, v[2] / norm]
}

/// A labeled template graph with perturbation knobs for variable-
/// topology ring-and-branch corpora.
#[derive(Debug, Clone)]
pub struct TemplateSpec {
    pub graph: SpatialGraph,
    pub omega: OmegaMatrix,
    /// Standard deviation of per-coordinate Gaussian jitter.
    pub jitter: f64,
    /// Independent removal probability per edge.
    pub dropout: f64,
}

/// Ring of six nodes with three two-segment branches; six edge labels.
/// The omega matrix allows exactly the label adjacencies the template
/// itself exhibits.
pub fn default_cow_template(jitter: f64, dropout: f64) -> TemplateSpec {
    let mut coords: Vec<[f64; 3]> = (0..6)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 6.0;
            [a.cos(), a.sin(), 0.0]
        })
        .collect();
    let mut edges = vec![(0, 1, 1), (1, 2, 1), (2, 3, 2), (3, 4, 2), (4, 5, 3), (5, 0, 3)];
    for (slot, (anchor, label)) in [(0usize, 4usize), (2, 5), (4, 6)].iter().enumerate() {
        let base = coords[*anchor];
        let lower = 6 + 2 * slot;
        coords.push([base[0], base[1], 0.8]);
        coords.push([base[0], base[1], 1.6]);
        edges.push((*anchor, lower, *label));
        edges.push((lower, lower + 1, *label));
    }
    let graph = SpatialGraph::new(coords, edges).expect("valid template");

    let mut allowed = std::collections::BTreeSet::new();
    for v in 0..graph.node_count() {
        let inc = graph.incident(v).unwrap();
        for x in 0..inc.len() {
            for y in x..inc.len() {
                let (a, b) = (inc[x].1, inc[y].1);
                allowed.insert((a.min(b), a.max(b)));
            }
        }
    }
    for l in 1..=6 {
        allowed.insert((l, l));
    }
    let omega = OmegaMatrix::from_fn(6, |a, b| !allowed.contains(&(a.min(b), a.max(b))))
        .expect("symmetric by construction");

    TemplateSpec { graph, omega, jitter, dropout }
}

/// Samples one graph from a template: coordinate jitter plus stochastic
/// edge drop-out. Drop-out can only delete edges, so outputs remain
/// valid under the template's omega.
pub fn gen_cow_like<R: Rng + ?Sized>(spec: &TemplateSpec, rng: &mut R) -> Result<SpatialGraph> {
    let report = check_omega(&spec.graph, &spec.omega)?;
    if !report.is_empty() {
        return Err(Error::ConstraintViolated(format!(
            "template violates its own omega: {}",
            report.violations[0]
        )));
    }
    let coords: Vec<[f64; 3]> = spec
        .graph
        .coords()
        .iter()
        .map(|p| {
            let mut q = *p;
            for d in q.iter_mut() {
                let eps: f64 = StandardNormal.sample(rng);
                *d += spec.jitter * eps;
            }
            q
        })
        .collect();
    let edges: Vec<(usize, usize, usize)> = spec
        .graph
        .edges()
        .iter()
        .filter(|_| rng.random::<f64>() >= spec.dropout)
        .map(|e| (e.i, e.j, e.label))
        .collect();
    SpatialGraph::new(coords, edges)
}

/// A set of graphs plus the optional label alphabet they share.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub graphs: Vec<SpatialGraph>,
    pub labels: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct CorpusManifest {
    format: String,
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

const CORPUS_FORMAT: &str = "graphdiff-corpus-v1";

fn graph_file_name(index: usize) -> String {
    format!("graph_{index:05}.json")
}

/// Writes one JSON file per graph plus a manifest carrying the label
/// alphabet.
pub fn save_corpus(
    graphs: &[SpatialGraph],
    labels: Option<&[String]>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (k, g) in graphs.iter().enumerate() {
        save_graph(g, &dir.join(graph_file_name(k)))?;
    }
    let manifest = CorpusManifest {
        format: CORPUS_FORMAT.to_string(),
        count: graphs.len(),
        labels: labels.map(|l| l.to_vec()),
    };
    write_json_atomic(&dir.join("corpus.json"), &manifest)
}

/// Loads a corpus directory. A missing manifest is tolerated (all
/// `graph_*.json` files are read); an empty directory yields an empty
/// corpus. When the manifest carries a label alphabet, edge labels are
/// checked against it and offending files are named in the error.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    if !dir.is_dir() {
        return Err(Error::FileRead {
            path: dir.to_path_buf(),
            reason: "not a directory".into(),
        });
    }
    let manifest_path = dir.join("corpus.json");
    let labels = if manifest_path.exists() {
        let manifest: CorpusManifest = read_json(&manifest_path)?;
        if manifest.format != CORPUS_FORMAT {
            return Err(Error::FileRead {
                path: manifest_path,
                reason: format!("unknown corpus format '{}'", manifest.format),
            });
        }
        manifest.labels
    } else {
        None
    };

    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("graph_") && n.ends_with(".json"))
        })
        .collect();
    files.sort();

    let mut graphs = Vec::with_capacity(files.len());
    for path in files {
        let g = load_graph(&path)?;
        if let Some(labels) = &labels {
            if let Some(e) = g.edges().iter().find(|e| e.label > labels.len()) {
                return Err(Error::FileRead {
                    path,
                    reason: format!(
                        "edge ({}, {}) has label {} but alphabet has {} labels",
                        e.i,
                        e.j,
                        e.label,
                        labels.len()
                    ),
                });
            }
        }
        graphs.push(g);
    }
    Ok(Corpus { graphs, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{betti1, neighbors};
    use crate::rng::substream;

    #[test]
    fn trees_are_valid_by_construction() {
        let omega = hierarchy_omega(4);
        for seed in 0..40 {
            let mut rng = substream(seed, "tree", 0);
            let n = 2 + (seed as usize * 7) % 60;
            let g = gen_airway_tree(n, &mut rng);
            assert_eq!(g.node_count(), n);
            assert_eq!(g.edge_count(), n - 1);
            assert_eq!(betti1(&g), 0);
            assert!(check_omega(&g, &omega).unwrap().is_empty());
        }
    }

    #[test]
    fn two_node_tree_is_a_single_level_one_edge() {
        let mut rng = substream(1, "tree", 0);
        let g = gen_airway_tree(2, &mut rng);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges()[0].label, 1);
    }

    #[test]
    fn tree_degrees_are_dominated_by_low_branching() {
        let mut low = 0usize;
        let mut total = 0usize;
        for seed in 0..60 {
            let mut rng = substream(2, "tree", seed);
            let g = gen_airway_tree(60, &mut rng);
            for v in 0..g.node_count() {
                total += 1;
                if neighbors(&g, v).unwrap().len() <= 3 {
                    low += 1;
                }
            }
        }
        assert!(low as f64 / total as f64 > 0.95, "{low}/{total}");
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let a = gen_airway_tree(30, &mut substream(3, "tree", 7));
        let b = gen_airway_tree(30, &mut substream(3, "tree", 7));
        assert_eq!(a, b);
        let spec = default_cow_template(0.05, 0.2);
        let c = gen_cow_like(&spec, &mut substream(3, "cow", 7)).unwrap();
        let d = gen_cow_like(&spec, &mut substream(3, "cow", 7)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn template_with_no_perturbation_is_identity() {
        let spec = default_cow_template(0.0, 0.0);
        let mut rng = substream(4, "cow", 0);
        let g = gen_cow_like(&spec, &mut rng).unwrap();
        assert_eq!(g, spec.graph);
    }

    #[test]
    fn dropout_keeps_omega_validity_and_hits_binomial_mean() {
        let spec = default_cow_template(0.02, 0.3);
        let mut rng = substream(5, "cow", 0);
        let samples = 1000;
        let mut total_edges = 0usize;
        for _ in 0..samples {
            let g = gen_cow_like(&spec, &mut rng).unwrap();
            assert!(check_omega(&g, &spec.omega).unwrap().is_empty());
            total_edges += g.edge_count();
        }
        let e_template = spec.graph.edge_count() as f64;
        let mean = total_edges as f64 / samples as f64;
        let expected = 0.7 * e_template;
        let sigma = (e_template * 0.3 * 0.7 / samples as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * sigma, "{mean} vs {expected}");
    }

    #[test]
    fn invalid_template_is_rejected() {
        let mut spec = default_cow_template(0.0, 0.0);
        // forbid a label pair the template uses
        spec.omega = OmegaMatrix::from_fn(6, |a, b| a != b).unwrap();
        let mut rng = substream(6, "cow", 0);
        assert!(matches!(
            gen_cow_like(&spec, &mut rng),
            Err(Error::ConstraintViolated(_))
        ));
    }

    #[test]
    fn corpus_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let graphs: Vec<SpatialGraph> = (0..20)
            .map(|k| gen_airway_tree(10 + k % 5, &mut substream(7, "tree", k as u64)))
            .collect();
        let labels: Vec<String> = (1..=4).map(|k| format!("level{k}")).collect();
        save_corpus(&graphs, Some(&labels), dir.path()).unwrap();
        let corpus = load_corpus(dir.path()).unwrap();
        assert_eq!(corpus.graphs, graphs);
        assert_eq!(corpus.labels.as_deref(), Some(labels.as_slice()));
    }

    #[test]
    fn empty_directory_is_an_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = load_corpus(dir.path()).unwrap();
        assert!(corpus.graphs.is_empty());
        assert!(corpus.labels.is_none());
    }

    #[test]
    fn out_of_alphabet_label_names_the_offending_file() {
        let dir = tempfile::tempdir().unwrap();
        let g = SpatialGraph::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0]],
            vec![(0, 1, 9)],
        )
        .unwrap();
        save_corpus(&[g], Some(&["a".into(), "b".into()]), dir.path()).unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("graph_00000.json"), "{msg}");
        assert!(msg.contains("label 9"), "{msg}");
    }
}
