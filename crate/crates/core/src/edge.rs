//! Discrete diffusion over edge labels.
//!
//! Edges live in a dense state over all canonical node pairs; class 0
//! means "no edge". The forward process perturbs each pair independently
//! with a transition kernel `Q^t = alpha_t I + (1 - alpha_t) 1 m^T`,
//! where `m` is the target distribution of the noise: a one-hot on the
//! no-edge class for the absorbing (edge-deletion) kernel, or a
//! uniform/marginal distribution for the baselines. Reverse sampling
//! draws each pair from the closed-form posterior combining the current
//! state with the denoiser's clean-state prediction.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::rng::sample_categorical;
use crate::schedule::DiffusionSchedule;

/// Number of canonical pairs `(i < j)` among `n` nodes.
pub fn pair_count(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Dense index of pair `(i, j)` with `i < j`, row-major over the upper
/// triangle.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// Iterates canonical pairs in dense index order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
}

/// Class assignment for every canonical pair of an `n`-node graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeState {
    n: usize,
    classes: Vec<usize>,
}

impl EdgeState {
    /// All pairs at class 0 (empty graph).
    pub fn empty(n: usize) -> Self {
        EdgeState { n, classes: vec![0; pair_count(n)] }
    }

    /// Dense state of a sparse graph; stored labels become classes.
    pub fn from_graph(g: &SpatialGraph) -> Self {
        let n = g.node_count();
        let mut state = EdgeState::empty(n);
        for e in g.edges() {
            state.classes[pair_index(n, e.i, e.j)] = e.label;
        }
        state
    }

    /// Drops class-0 pairs and rebuilds the sparse graph.
    pub fn to_graph(&self, coords: Vec<[f64; 3]>) -> Result<SpatialGraph> {
        if coords.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinate rows for an edge state over {} nodes",
                coords.len(),
                self.n
            )));
        }
        let edges = pairs(self.n)
            .zip(&self.classes)
            .filter(|(_, &c)| c != 0)
            .map(|((i, j), &c)| (i, j, c))
            .collect();
        SpatialGraph::new(coords, edges)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn class(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.classes[pair_index(self.n, i, j)]
    }

    pub fn set_class(&mut self, i: usize, j: usize, class: usize) {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.classes[pair_index(self.n, i, j)] = class;
    }

    /// Dense class slice in pair-index order.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn edge_count(&self) -> usize {
        self.classes.iter().filter(|&&c| c != 0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisingKind {
    Absorbing,
    Uniform,
    Marginal,
}

impl std::str::FromStr for NoisingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absorbing" => Ok(NoisingKind::Absorbing),
            "uniform" => Ok(NoisingKind::Uniform),
            "marginal" => Ok(NoisingKind::Marginal),
            other => Err(Error::InvalidConfig(format!(
                "unknown noising kind '{other}' (expected absorbing, uniform or marginal)"
            ))),
        }
    }
}

/// A family of per-step transition kernels `Q^t = a I + (1 - a) 1 m^T`.
///
/// Because `m` is constant across steps, the cumulative kernel has the
/// same shape with the cumulative retention in place of `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    kind: NoisingKind,
    classes: usize,
    m: Vec<f64>,
}

impl TransitionModel {
    /// Edge-deletion kernel: noise collapses every pair onto class 0.
    pub fn absorbing(classes: usize) -> Result<Self> {
        Self::check_classes(classes)?;
        let mut m = vec![0.0; classes];
        m[0] = 1.0;
        Ok(TransitionModel { kind: NoisingKind::Absorbing, classes, m })
    }

    /// Uniform noise over all classes, no-edge included.
    pub fn uniform(classes: usize) -> Result<Self> {
        Self::check_classes(classes)?;
        Ok(TransitionModel {
            kind: NoisingKind::Uniform,
            classes,
            m: vec![1.0 / classes as f64; classes],
        })
    }

    /// Marginal kernel from explicit class frequencies (which must sum
    /// to 1); used when rebuilding from a checkpoint.
    pub fn marginal(m: Vec<f64>) -> Result<Self> {
        Self::check_classes(m.len())?;
        let total: f64 = m.iter().sum();
        if (total - 1.0).abs() > 1e-9 || m.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "marginal frequencies must form a distribution (sum {total})"
            )));
        }
        Ok(TransitionModel { kind: NoisingKind::Marginal, classes: m.len(), m })
    }

    /// Noise targeting the empirical class frequencies of a corpus,
    /// measured over dense pair states.
    pub fn marginal_from_states(classes: usize, states: &[EdgeState]) -> Result<Self> {
        Self::check_classes(classes)?;
        let mut counts = vec![0usize; classes];
        for s in states {
            for &c in s.classes() {
                if c >= classes {
                    return Err(Error::LabelOutOfRange { label: c, max: classes - 1 });
                }
                counts[c] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidConfig("marginal noise needs a non-empty corpus".into()));
        }
        // Laplace smoothing so every class stays reachable.
        let m = counts
            .iter()
            .map(|&k| (k as f64 + 1.0) / (total as f64 + classes as f64))
            .collect();
        Ok(TransitionModel { kind: NoisingKind::Marginal, classes, m })
    }

    pub fn of_kind(kind: NoisingKind, classes: usize, states: &[EdgeState]) -> Result<Self> {
        match kind {
            NoisingKind::Absorbing => Self::absorbing(classes),
            NoisingKind::Uniform => Self::uniform(classes),
            NoisingKind::Marginal => Self::marginal_from_states(classes, states),
        }
    }

    fn check_classes(classes: usize) -> Result<()> {
        if classes < 2 {
            Err(Error::InvalidConfig("need at least 2 classes (no-edge plus one label)".into()))
        } else {
            Ok(())
        }
    }

    pub fn kind(&self) -> NoisingKind {
        self.kind
    }

    /// Total class count, including the no-edge class 0.
    pub fn class_count(&self) -> usize {
        self.classes
    }

    /// The noise target distribution `m`.
    pub fn target(&self) -> &[f64] {
        &self.m
    }

    fn kernel(&self, retention: f64) -> Array2<f64> {
        let c = self.classes;
        let mut q = Array2::zeros((c, c));
        for k in 0..c {
            for l in 0..c {
                q[(k, l)] = (1.0 - retention) * self.m[l] + if k == l { retention } else { 0.0 };
            }
        }
        q
    }

    /// Single-step kernel `Q^t` (rows: from-class, columns: to-class).
    pub fn transition_matrix(&self, t: usize, sched: &DiffusionSchedule) -> Array2<f64> {
        self.kernel(sched.alpha(t))
    }

    /// Cumulative kernel `Qbar^t = Q^1 ... Q^t`; `t = 0` yields the
    /// identity.
    pub fn cumulative_transition(&self, t: usize, sched: &DiffusionSchedule) -> Array2<f64> {
        self.kernel(sched.alpha_bar(t))
    }
}

/// Samples the fully noised boundary state `E^T`: every pair drawn
/// independently from `m`.
pub fn sample_terminal_state<R: Rng + ?Sized>(
    n: usize,
    tm: &TransitionModel,
    rng: &mut R,
) -> EdgeState {
    let mut state = EdgeState::empty(n);
    for idx in 0..pair_count(n) {
        state.classes[idx] = sample_categorical(rng, tm.target());
    }
    state
}

/// Forward noising via the closed-form marginal: each pair's class is
/// drawn from row `e0[pair]` of `Qbar^t`. `t = 0` returns `e0` exactly.
pub fn forward_noise_edges<R: Rng + ?Sized>(
    e0: &EdgeState,
    t: usize,
    tm: &TransitionModel,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<EdgeState> {
    let c = tm.class_count();
    if let Some(&bad) = e0.classes().iter().find(|&&cl| cl >= c) {
        return Err(Error::LabelOutOfRange { label: bad, max: c - 1 });
    }
    let qbar = tm.cumulative_transition(t, sched);
    let mut out = e0.clone();
    let mut row = vec![0.0; c];
    for idx in 0..out.classes.len() {
        let from = out.classes[idx];
        for l in 0..c {
            row[l] = qbar[(from, l)];
        }
        out.classes[idx] = sample_categorical(rng, &row);
    }
    Ok(out)
}

/// Posterior over `e^{t-1}` for one pair, from raw schedule values.
///
/// `posterior[k] = Q^t[k, e_t] * (p0_hat Qbar^{t-1})[k] / (p0_hat Qbar^t)[e_t]`,
/// evaluated with the rank-one kernel structure. The output is written
/// into `out` and normalized.
pub fn posterior_from_values(
    e_t: usize,
    p0_hat: &[f64],
    alpha_t: f64,
    alpha_bar_prev: f64,
    alpha_bar_t: f64,
    m: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let c = m.len();
    if p0_hat.len() != c || out.len() != c || e_t >= c {
        return Err(Error::ShapeMismatch(format!(
            "posterior over {c} classes got p0_hat of length {} and state {e_t}",
            p0_hat.len()
        )));
    }
    let mass: f64 = p0_hat.iter().sum();
    if (mass - 1.0).abs() > 1e-6 || p0_hat.iter().any(|&p| p < 0.0) {
        return Err(Error::ShapeMismatch(format!(
            "p0_hat must be a probability vector (sum was {mass})"
        )));
    }

    let denom = alpha_bar_t * p0_hat[e_t] + (1.0 - alpha_bar_t) * m[e_t];
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::ZeroPosteriorMass { class: e_t, step: 0 });
    }

    let mut total = 0.0;
    for k in 0..c {
        let step_back = (1.0 - alpha_t) * m[e_t] + if k == e_t { alpha_t } else { 0.0 };
        let reach = alpha_bar_prev * p0_hat[k] + (1.0 - alpha_bar_prev) * m[k];
        out[k] = step_back * reach / denom;
        total += out[k];
    }
    // denom equals the sum analytically; renormalize away the last ulps
    for v in out.iter_mut() {
        *v /= total;
    }
    Ok(())
}

/// Mean cross-entropy between per-row class distributions and target
/// classes, with probabilities clamped at 1e-30.
pub fn cross_entropy_vs_classes(probs: &Array2<f64>, targets: &[usize]) -> f64 {
    assert_eq!(probs.nrows(), targets.len(), "one target per row");
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(r, &t)| -probs[(r, t)].max(crate::nn::tape::CE_PROB_FLOOR).ln())
        .sum();
    total / targets.len() as f64
}

/// Training objective of the edge stage: cross-entropy between the true
/// clean classes and the denoiser's prediction on a freshly noised state.
pub fn edge_ce_loss<R: Rng + ?Sized>(
    model: &crate::nn::EdgeDenoiser,
    e0: &EdgeState,
    coords: &Array2<f64>,
    t: usize,
    tm: &TransitionModel,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<f64> {
    let et = forward_noise_edges(e0, t, tm, sched, rng)?;
    let probs = model.forward(&et, coords, t as f64 / sched.steps() as f64)?;
    Ok(cross_entropy_vs_classes(&probs, e0.classes()))
}

/// Posterior over `e^{t-1}` given the current class and the denoiser's
/// clean-state distribution for one pair.
pub fn posterior(
    e_t: usize,
    p0_hat: &[f64],
    t: usize,
    tm: &TransitionModel,
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; tm.class_count()];
    posterior_from_values(
        e_t,
        p0_hat,
        sched.alpha(t),
        sched.alpha_bar(t - 1),
        sched.alpha_bar(t),
        tm.target(),
        &mut out,
    )
    .map_err(|e| match e {
        Error::ZeroPosteriorMass { class, .. } => Error::ZeroPosteriorMass { class, step: t },
        other => other,
    })?;
    Ok(out)
}
