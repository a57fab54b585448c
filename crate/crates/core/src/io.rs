//! JSON file formats: graphs, omega matrices, and generic helpers.
//!
//! Graph files are objects with `nodes` (array of `[x, y, z]` triples),
//! `edges` (array of `[i, j, label]` triples, labels starting at 1) and
//! an optional free-form `meta` object. Omega files carry `labels` and a
//! square 0/1 `matrix`. Loaders reject non-finite coordinates,
//! out-of-range indices, labels below 1 and duplicate edges.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{OmegaMatrix, SpatialGraph};

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<[f64; 3]>,
    edges: Vec<(usize, usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct OmegaFile {
    labels: Vec<String>,
    matrix: Vec<Vec<u8>>,
}

fn read_error(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::FileRead { path: path.to_path_buf(), reason: reason.to_string() }
}

fn write_error(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::FileWrite { path: path.to_path_buf(), reason: reason.to_string() }
}

/// Reads and deserializes a JSON file.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| read_error(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| read_error(path, e))
}

/// Serializes `value` and writes it atomically: the full payload lands
/// in a sibling temp file first, then renames over the target.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| write_error(path, e))?;
    bytes.push(b'\n');
    let tmp = path.with_extension(format!(
        "tmp.{}",
        std::process::id()
    ));
    fs::write(&tmp, &bytes).map_err(|e| write_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| write_error(path, e))?;
    Ok(())
}

pub fn save_graph(g: &SpatialGraph, path: &Path) -> Result<()> {
    let file = GraphFile {
        nodes: g.coords().to_vec(),
        edges: g.edges().iter().map(|e| (e.i, e.j, e.label)).collect(),
        meta: None,
    };
    write_json_atomic(path, &file)
}

pub fn load_graph(path: &Path) -> Result<SpatialGraph> {
    let file: GraphFile = read_json(path)?;
    SpatialGraph::new(file.nodes, file.edges)
        .map_err(|e| read_error(path, format!("invalid graph: {e}")))
}

pub fn save_omega(omega: &OmegaMatrix, path: &Path) -> Result<()> {
    let file = OmegaFile { labels: omega.labels().to_vec(), matrix: omega.matrix() };
    write_json_atomic(path, &file)
}

pub fn load_omega(path: &Path) -> Result<OmegaMatrix> {
    let file: OmegaFile = read_json(path)?;
    OmegaMatrix::new(file.labels, file.matrix)
        .map_err(|e| read_error(path, format!("invalid omega matrix: {e}")))
}
