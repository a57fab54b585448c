//! Core graph representation and constraint primitives.
//!
//! A [`SpatialGraph`] is a set of 3D node coordinates plus an undirected,
//! labeled edge set stored in canonical `(i < j)` form. Edge labels start
//! at 1; label 0 is reserved for "no edge" and never stored here.
//!
//! An [`OmegaMatrix`] encodes which label pairs may meet at a shared
//! node: entry 0 means the pair is allowed, 1 means forbidden. A graph
//! is semantically valid when no node has two incident edges whose
//! labels form a forbidden pair.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// An undirected labeled edge in canonical form (`i < j`, `label >= 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub label: usize,
}

impl Edge {
    pub fn new(i: usize, j: usize, label: usize) -> Self {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        Edge { i, j, label }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, L{})", self.i, self.j, self.label)
    }
}

/// A 3D spatial graph with labeled undirected edges.
///
/// Immutable after construction; adjacency is precomputed so neighbor
/// queries and incremental validity checks are O(degree).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    coords: Vec<[f64; 3]>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, usize)>>, // per node: (neighbor, label)
}

impl SpatialGraph {
    /// Builds a graph, canonicalizing edges and validating invariants:
    /// finite coordinates, no self-loops, indices in range, labels >= 1,
    /// no duplicate node pairs.
    pub fn new(coords: Vec<[f64; 3]>, edges: Vec<(usize, usize, usize)>) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(Error::InvalidGraph("graph must have at least one node".into()));
        }
        for (idx, c) in coords.iter().enumerate() {
            if !c.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidGraph(format!(
                    "node {idx} has non-finite coordinates {c:?}"
                )));
            }
        }
        let mut canon: Vec<Edge> = Vec::with_capacity(edges.len());
        for &(i, j, label) in &edges {
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::NodeOutOfRange { index: i.max(j), nodes: n });
            }
            if label == 0 {
                return Err(Error::LabelOutOfRange { label: 0, max: usize::MAX });
            }
            canon.push(Edge::new(i, j, label));
        }
        canon.sort();
        for w in canon.windows(2) {
            if w[0].i == w[1].i && w[0].j == w[1].j {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge ({}, {})",
                    w[0].i, w[0].j
                )));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for e in &canon {
            adjacency[e.i].push((e.j, e.label));
            adjacency[e.j].push((e.i, e.label));
        }
        Ok(SpatialGraph { coords, edges: canon, adjacency })
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Incident `(neighbor, label)` pairs of `v`.
    pub fn incident(&self, v: usize) -> Result<&[(usize, usize)]> {
        self.adjacency
            .get(v)
            .map(|a| a.as_slice())
            .ok_or(Error::NodeOutOfRange { index: v, nodes: self.node_count() })
    }

    pub fn degree(&self, v: usize) -> Result<usize> {
        Ok(self.incident(v)?.len())
    }

    pub fn contains_pair(&self, i: usize, j: usize) -> bool {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.edges.binary_search_by(|e| (e.i, e.j).cmp(&(i, j))).is_ok()
    }

    /// Returns a copy with `edge` added. Fails if the pair is present.
    pub fn with_edge(&self, i: usize, j: usize, label: usize) -> Result<Self> {
        if self.contains_pair(i, j) {
            let (i, j) = if i < j { (i, j) } else { (j, i) };
            return Err(Error::EdgeExists { i, j });
        }
        let mut edges: Vec<(usize, usize, usize)> =
            self.edges.iter().map(|e| (e.i, e.j, e.label)).collect();
        edges.push((i, j, label));
        SpatialGraph::new(self.coords.clone(), edges)
    }
}

/// The set of neighbors of `v`.
pub fn neighbors(g: &SpatialGraph, v: usize) -> Result<BTreeSet<usize>> {
    Ok(g.incident(v)?.iter().map(|&(u, _)| u).collect())
}

/// Binary label-adjacency constraint table over edge labels `1..=size`.
///
/// `forbidden(a, b)` answers whether labels `a` and `b` may share a node.
/// The matrix is required to be symmetric; asymmetric input is rejected
/// rather than silently symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaMatrix {
    labels: Vec<String>,
    forbidden: Vec<bool>, // size x size, row-major, 0-based internally
}

impl OmegaMatrix {
    /// Builds from label names and a 0/1 matrix. Rejects non-square or
    /// asymmetric input.
    pub fn new(labels: Vec<String>, matrix: Vec<Vec<u8>>) -> Result<Self> {
        let c = labels.len();
        if c == 0 {
            return Err(Error::InvalidOmega("label set must be non-empty".into()));
        }
        if matrix.len() != c || matrix.iter().any(|r| r.len() != c) {
            return Err(Error::InvalidOmega(format!(
                "matrix must be {c}x{c} to match {c} labels"
            )));
        }
        let mut forbidden = vec![false; c * c];
        for (a, row) in matrix.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => forbidden[a * c + b] = true,
                    _ => {
                        return Err(Error::InvalidOmega(format!(
                            "entry [{a}][{b}] = {v}; entries must be 0 or 1"
                        )))
                    }
                }
            }
        }
        for a in 0..c {
            for b in (a + 1)..c {
                if forbidden[a * c + b] != forbidden[b * c + a] {
                    return Err(Error::InvalidOmega(format!(
                        "matrix is asymmetric at [{a}][{b}]"
                    )));
                }
            }
        }
        Ok(OmegaMatrix { labels, forbidden })
    }

    /// Builds a matrix of `size` anonymous labels from a predicate over
    /// 1-based labels (`true` = forbidden).
    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let labels = (1..=size).map(|k| format!("L{k}")).collect();
        let matrix = (1..=size)
            .map(|a| (1..=size).map(|b| u8::from(f(a, b))).collect())
            .collect();
        Self::new(labels, matrix)
    }

    /// Number of real edge classes covered by the matrix.
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Whether labels `a` and `b` (1-based) are forbidden from meeting
    /// at a shared node.
    pub fn is_forbidden(&self, a: usize, b: usize) -> bool {
        let c = self.size();
        debug_assert!(a >= 1 && a <= c && b >= 1 && b <= c);
        self.forbidden[(a - 1) * c + (b - 1)]
    }

    pub fn matrix(&self) -> Vec<Vec<u8>> {
        let c = self.size();
        (0..c)
            .map(|a| (0..c).map(|b| u8::from(self.forbidden[a * c + b])).collect())
            .collect()
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label == 0 || label > self.size() {
            Err(Error::LabelOutOfRange { label, max: self.size() })
        } else {
            Ok(())
        }
    }
}

/// One forbidden incident pair: edges `(first, second)` meet at `center`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OmegaViolation {
    pub center: usize,
    pub first: Edge,
    pub second: Edge,
}

impl fmt::Display for OmegaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "labels L{} and L{} meet at node {} via {} and {}",
            self.first.label, self.second.label, self.center, self.first, self.second
        )
    }
}

/// Outcome of a validity check; empty iff the graph satisfies the
/// requested constraints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViolationReport {
    pub violations: Vec<OmegaViolation>,
    /// Edges participating in at least one cycle; populated only when a
    /// structural check was requested.
    pub cycle_edges: Vec<Edge>,
}

impl ViolationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty() && self.cycle_edges.is_empty()
    }
}

/// Evaluates the semantic validity predicate.
///
/// Each forbidden incident pair is reported exactly once per unordered
/// pair of edges around the shared node. The report is empty iff the
/// graph is valid under `omega`.
pub fn check_omega(g: &SpatialGraph, omega: &OmegaMatrix) -> Result<ViolationReport> {
    for e in g.edges() {
        omega.check_label(e.label)?;
    }
    let mut violations = Vec::new();
    for v in 0..g.node_count() {
        let inc = g.incident(v)?;
        for x in 0..inc.len() {
            for y in (x + 1)..inc.len() {
                let (u, a) = inc[x];
                let (w, b) = inc[y];
                if omega.is_forbidden(a, b) {
                    violations.push(OmegaViolation {
                        center: v,
                        first: Edge::new(v, u, a),
                        second: Edge::new(v, w, b),
                    });
                }
            }
        }
    }
    Ok(ViolationReport { violations, cycle_edges: Vec::new() })
}

/// Incremental form of the validity predicate: would adding
/// `(i, j, label)` to a currently valid graph create a forbidden
/// incident pair at `i` or `j`? Runs in O(deg(i) + deg(j)).
pub fn would_violate(
    g: &SpatialGraph,
    i: usize,
    j: usize,
    label: usize,
    omega: &OmegaMatrix,
) -> Result<bool> {
    if g.contains_pair(i, j) {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        return Err(Error::EdgeExists { i, j });
    }
    omega.check_label(label)?;
    for &endpoint in &[i, j] {
        for &(_, b) in g.incident(endpoint)? {
            if omega.is_forbidden(label, b) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Disjoint-set forest with path compression and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
    components: usize,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), size: vec![1; n], components: n }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Merges the sets containing `a` and `b`; returns false if they
    /// were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        self.components -= 1;
        true
    }

    pub fn connected(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Seeds the forest with a graph's edges.
    pub fn from_graph(g: &SpatialGraph) -> Self {
        let mut uf = UnionFind::new(g.node_count());
        for e in g.edges() {
            uf.union(e.i, e.j);
        }
        uf
    }
}

/// Number of connected components (isolated nodes count).
pub fn betti0(g: &SpatialGraph) -> usize {
    UnionFind::from_graph(g).components()
}

/// Independent cycle count of the graph viewed as a 1-complex:
/// `betti1 = |E| - n + betti0`.
pub fn betti1(g: &SpatialGraph) -> usize {
    g.edge_count() + betti0(g) - g.node_count()
}

/// True iff `i` and `j` already lie in the same connected component,
/// i.e. adding the edge would close a cycle.
pub fn creates_cycle(g: &SpatialGraph, i: usize, j: usize) -> Result<bool> {
    if g.contains_pair(i, j) {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        return Err(Error::EdgeExists { i, j });
    }
    let n = g.node_count();
    if i >= n || j >= n {
        return Err(Error::NodeOutOfRange { index: i.max(j), nodes: n });
    }
    Ok(UnionFind::from_graph(g).connected(i, j))
}

/// Edges participating in at least one cycle (the non-bridge edges),
/// found with a DFS lowlink pass.
pub fn cycle_edges(g: &SpatialGraph) -> Vec<Edge> {
    let n = g.node_count();
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0usize;
    let mut is_bridge = vec![false; g.edge_count()];

    // edge ids alongside adjacency so parallel edges are impossible to
    // confuse with the tree edge back to the parent
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (id, e) in g.edges().iter().enumerate() {
        adj[e.i].push((e.j, id));
        adj[e.j].push((e.i, id));
    }

    for start in 0..n {
        if disc[start] != usize::MAX {
            continue;
        }
        // iterative DFS: (node, parent edge id, next adjacency index)
        let mut stack: Vec<(usize, usize, usize)> = vec![(start, usize::MAX, 0)];
        disc[start] = timer;
        low[start] = timer;
        timer += 1;
        while !stack.is_empty() {
            let top = stack.len() - 1;
            let (v, pe, next) = stack[top];
            if next < adj[v].len() {
                stack[top].2 += 1;
                let (u, id) = adj[v][next];
                if id == pe {
                    continue;
                }
                if disc[u] == usize::MAX {
                    disc[u] = timer;
                    low[u] = timer;
                    timer += 1;
                    stack.push((u, id, 0));
                } else {
                    low[v] = low[v].min(disc[u]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[v]);
                    if low[v] > disc[p] {
                        is_bridge[pe] = true;
                    }
                }
            }
        }
    }

    g.edges()
        .iter()
        .enumerate()
        .filter(|(id, _)| !is_bridge[*id])
        .map(|(_, e)| *e)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hierarchy_omega(levels: usize) -> OmegaMatrix {
        OmegaMatrix::from_fn(levels, |a, b| a.abs_diff(b) >= 2).unwrap()
    }

    fn graph(n: usize, edges: &[(usize, usize, usize)]) -> SpatialGraph {
        let coords = (0..n).map(|k| [k as f64, 0.0, 0.0]).collect();
        SpatialGraph::new(coords, edges.to_vec()).unwrap()
    }

    // ---- independent oracles -------------------------------------------

    /// BFS-based component count, independent of the union-find path.
    fn betti0_bfs(g: &SpatialGraph) -> usize {
        let n = g.node_count();
        let mut seen = vec![false; n];
        let mut components = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            components += 1;
            let mut queue = vec![s];
            seen[s] = true;
            while let Some(v) = queue.pop() {
                for &(u, _) in g.incident(v).unwrap() {
                    if !seen[u] {
                        seen[u] = true;
                        queue.push(u);
                    }
                }
            }
        }
        components
    }

    /// Cycle-space rank via explicit BFS spanning-forest construction:
    /// the non-forest edges are exactly the independent cycles.
    fn betti1_forest(g: &SpatialGraph) -> usize {
        let n = g.node_count();
        let mut seen = vec![false; n];
        let mut forest_edges = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            let mut queue = std::collections::VecDeque::from([s]);
            seen[s] = true;
            while let Some(v) = queue.pop_front() {
                for &(u, _) in g.incident(v).unwrap() {
                    if !seen[u] {
                        seen[u] = true;
                        forest_edges += 1;
                        queue.push_back(u);
                    }
                }
            }
        }
        g.edge_count() - forest_edges
    }

    // ---- neighbors ------------------------------------------------------

    #[test]
    fn neighbors_of_triangle() {
        let g = graph(3, &[(0, 1, 1), (1, 2, 1), (0, 2, 1)]);
        assert_eq!(neighbors(&g, 0).unwrap(), BTreeSet::from([1, 2]));
    }

    #[test]
    fn neighbors_of_isolated_node() {
        let g = graph(3, &[(0, 1, 1)]);
        assert!(neighbors(&g, 2).unwrap().is_empty());
    }

    #[test]
    fn neighbors_of_path_midpoint() {
        let g = graph(3, &[(0, 1, 1), (1, 2, 1)]);
        assert_eq!(neighbors(&g, 1).unwrap(), BTreeSet::from([0, 2]));
    }

    #[test]
    fn neighbors_rejects_out_of_range() {
        let g = graph(2, &[]);
        assert!(neighbors(&g, 5).is_err());
    }

    // ---- check_omega ----------------------------------------------------

    #[test]
    fn empty_edge_set_is_valid() {
        let g = graph(4, &[]);
        assert!(check_omega(&g, &hierarchy_omega(4)).unwrap().is_empty());
    }

    #[test]
    fn level_gap_two_is_one_violation_at_shared_node() {
        let g = graph(3, &[(0, 1, 1), (1, 2, 3)]);
        let report = check_omega(&g, &hierarchy_omega(4)).unwrap();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].center, 1);
    }

    #[test]
    fn adjacent_levels_are_allowed() {
        let g = graph(3, &[(0, 1, 1), (1, 2, 2)]);
        assert!(check_omega(&g, &hierarchy_omega(4)).unwrap().is_empty());
    }

    #[test]
    fn check_omega_rejects_label_outside_matrix() {
        let g = graph(2, &[(0, 1, 9)]);
        assert!(matches!(
            check_omega(&g, &hierarchy_omega(4)),
            Err(Error::LabelOutOfRange { label: 9, .. })
        ));
    }

    // ---- would_violate ---------------------------------------------------

    #[test]
    fn empty_graph_never_violates() {
        let g = graph(3, &[]);
        assert!(!would_violate(&g, 0, 1, 4, &hierarchy_omega(4)).unwrap());
    }

    #[test]
    fn star_gap_two_violates() {
        let g = graph(3, &[(0, 1, 1)]);
        assert!(would_violate(&g, 0, 2, 3, &hierarchy_omega(4)).unwrap());
    }

    #[test]
    fn star_adjacent_level_is_fine() {
        let g = graph(3, &[(0, 1, 1)]);
        assert!(!would_violate(&g, 0, 2, 2, &hierarchy_omega(4)).unwrap());
    }

    #[test]
    fn would_violate_rejects_existing_edge() {
        let g = graph(3, &[(0, 1, 1)]);
        assert!(matches!(
            would_violate(&g, 1, 0, 2, &hierarchy_omega(4)),
            Err(Error::EdgeExists { i: 0, j: 1 })
        ));
    }

    // ---- betti numbers ----------------------------------------------------

    #[test]
    fn betti0_all_isolated() {
        assert_eq!(betti0(&graph(5, &[])), 5);
    }

    #[test]
    fn betti0_spanning_tree() {
        let edges: Vec<_> = (1..7).map(|k| (k - 1, k, 1)).collect();
        assert_eq!(betti0(&graph(7, &edges)), 1);
    }

    #[test]
    fn betti0_two_disjoint_triangles() {
        let g = graph(6, &[(0, 1, 1), (1, 2, 1), (0, 2, 1), (3, 4, 1), (4, 5, 1), (3, 5, 1)]);
        assert_eq!(betti0(&g), 2);
        assert_eq!(betti0(&g), betti0_bfs(&g));
    }

    #[test]
    fn betti1_forest_is_zero() {
        let g = graph(6, &[(0, 1, 1), (1, 2, 1), (3, 4, 1)]);
        assert_eq!(betti1(&g), 0);
    }

    #[test]
    fn betti1_triangle_is_one() {
        assert_eq!(betti1(&graph(3, &[(0, 1, 1), (1, 2, 1), (0, 2, 1)])), 1);
    }

    #[test]
    fn betti1_bowtie_is_two() {
        let g = graph(
            5,
            &[(0, 1, 1), (1, 2, 1), (0, 2, 1), (2, 3, 1), (3, 4, 1), (2, 4, 1)],
        );
        assert_eq!(betti1(&g), 2);
        assert_eq!(betti1(&g), betti1_forest(&g));
    }

    // ---- creates_cycle ----------------------------------------------------

    #[test]
    fn closing_a_path_creates_cycle() {
        let g = graph(3, &[(0, 1, 1), (1, 2, 1)]);
        assert!(creates_cycle(&g, 0, 2).unwrap());
    }

    #[test]
    fn bridging_components_does_not() {
        let g = graph(4, &[(0, 1, 1), (2, 3, 1)]);
        assert!(!creates_cycle(&g, 1, 2).unwrap());
    }

    #[test]
    fn new_edge_within_tree_always_cycles() {
        let edges: Vec<_> = (1..10).map(|k| (k / 2, k, 1)).collect();
        let g = graph(10, &edges);
        for i in 0..10 {
            for j in (i + 1)..10 {
                if g.contains_pair(i, j) {
                    continue;
                }
                assert!(creates_cycle(&g, i, j).unwrap());
                let aug = g.with_edge(i, j, 1).unwrap();
                assert_eq!(betti1(&aug), betti1(&g) + 1);
            }
        }
    }

    // ---- cycle_edges -------------------------------------------------------

    #[test]
    fn bridges_are_not_cycle_edges() {
        // triangle with a pendant edge
        let g = graph(4, &[(0, 1, 1), (1, 2, 1), (0, 2, 1), (2, 3, 1)]);
        let cyc = cycle_edges(&g);
        assert_eq!(cyc.len(), 3);
        assert!(!cyc.contains(&Edge::new(2, 3, 1)));
    }

    #[test]
    fn forest_has_no_cycle_edges() {
        let g = graph(5, &[(0, 1, 1), (1, 2, 1), (3, 4, 1)]);
        assert!(cycle_edges(&g).is_empty());
    }

    // ---- construction validation -------------------------------------------

    #[test]
    fn construction_rejects_bad_input() {
        assert!(SpatialGraph::new(vec![[0.0; 3]; 2], vec![(0, 0, 1)]).is_err());
        assert!(SpatialGraph::new(vec![[0.0; 3]; 2], vec![(0, 5, 1)]).is_err());
        assert!(SpatialGraph::new(vec![[0.0; 3]; 2], vec![(0, 1, 0)]).is_err());
        assert!(SpatialGraph::new(vec![[0.0; 3]; 2], vec![(0, 1, 1), (1, 0, 2)]).is_err());
        assert!(SpatialGraph::new(vec![[f64::NAN, 0.0, 0.0]], vec![]).is_err());
    }

    #[test]
    fn omega_rejects_asymmetric_matrix() {
        let m = vec![vec![0, 1], vec![0, 0]];
        assert!(OmegaMatrix::new(vec!["a".into(), "b".into()], m).is_err());
    }

    #[test]
    fn omega_diagonal_may_forbid_same_label() {
        let omega = OmegaMatrix::from_fn(2, |a, b| a == 1 && b == 1).unwrap();
        let g = graph(3, &[(0, 1, 1), (1, 2, 1)]);
        assert_eq!(check_omega(&g, &omega).unwrap().violations.len(), 1);
    }

    // ---- properties ----------------------------------------------------------

    fn arbitrary_graph() -> impl Strategy<Value = (SpatialGraph, usize)> {
        // n in 2..=9, omega size 4, random candidate edges
        (2usize..=9, proptest::collection::vec((0usize..9, 0usize..9, 1usize..=4), 0..24))
            .prop_map(|(n, raw)| {
                let mut seen = std::collections::BTreeSet::new();
                let mut edges = Vec::new();
                for (i, j, l) in raw {
                    let (i, j) = (i % n, j % n);
                    if i == j {
                        continue;
                    }
                    let key = (i.min(j), i.max(j));
                    if seen.insert(key) {
                        edges.push((key.0, key.1, l));
                    }
                }
                (graph(n, &edges), n)
            })
    }

    /// Largest valid-by-the-full-predicate prefix of a random graph.
    fn valid_graph() -> impl Strategy<Value = SpatialGraph> {
        arbitrary_graph().prop_map(|(g, _)| {
            let omega = hierarchy_omega(4);
            let mut kept: Vec<(usize, usize, usize)> = Vec::new();
            for e in g.edges() {
                let mut trial = kept.clone();
                trial.push((e.i, e.j, e.label));
                let cand = SpatialGraph::new(g.coords().to_vec(), trial.clone()).unwrap();
                if check_omega(&cand, &omega).unwrap().is_empty() {
                    kept = trial;
                }
            }
            SpatialGraph::new(g.coords().to_vec(), kept).unwrap()
        })
    }

    fn absent_pairs(g: &SpatialGraph) -> Vec<(usize, usize)> {
        let n = g.node_count();
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| !g.contains_pair(i, j))
            .collect()
    }

    proptest! {
        #[test]
        fn euler_relation_holds((g, _) in arbitrary_graph()) {
            prop_assert_eq!(betti1(&g), g.edge_count() + betti0(&g) - g.node_count());
            prop_assert_eq!(betti0(&g), betti0_bfs(&g));
            prop_assert_eq!(betti1(&g), betti1_forest(&g));
        }

        #[test]
        fn incremental_check_matches_full_check(g in valid_graph(),
                                                pick in 0usize..1024,
                                                label in 1usize..=4) {
            let omega = hierarchy_omega(4);
            let absent = absent_pairs(&g);
            prop_assume!(!absent.is_empty());
            let (i, j) = absent[pick % absent.len()];
            // incremental answer must agree with the full predicate on the
            // augmented graph, given a valid base graph
            let fast = would_violate(&g, i, j, label, &omega).unwrap();
            let aug = g.with_edge(i, j, label).unwrap();
            let full = !check_omega(&aug, &omega).unwrap().is_empty();
            prop_assert_eq!(fast, full);
        }

        #[test]
        fn deleting_edges_preserves_validity(g in valid_graph(), keep_mask in proptest::collection::vec(any::<bool>(), 24)) {
            let omega = hierarchy_omega(4);
            let kept: Vec<_> = g
                .edges()
                .iter()
                .enumerate()
                .filter(|(k, _)| *(keep_mask.get(*k).unwrap_or(&true)))
                .map(|(_, e)| (e.i, e.j, e.label))
                .collect();
            let sub = SpatialGraph::new(g.coords().to_vec(), kept).unwrap();
            prop_assert!(check_omega(&sub, &omega).unwrap().is_empty());
        }

        #[test]
        fn creates_cycle_matches_betti1((g, _) in arbitrary_graph(), pick in 0usize..1024) {
            let absent = absent_pairs(&g);
            prop_assume!(!absent.is_empty());
            let (i, j) = absent[pick % absent.len()];
            let closes = creates_cycle(&g, i, j).unwrap();
            let aug = g.with_edge(i, j, 1).unwrap();
            prop_assert_eq!(closes, betti1(&aug) == betti1(&g) + 1);
        }
    }
}
