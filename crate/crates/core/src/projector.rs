//! Constrained reverse sampling.
//!
//! Under edge-deletion noising the reverse chain only inserts edges, so
//! any constraint that survives deletion can be enforced exactly during
//! sampling: each step's newly proposed edges pass through a projection
//! that accepts, repairs (by resampling the label up to `k` times from
//! the pair's posterior), or rejects them. Every intermediate state --
//! and therefore the final graph -- satisfies the configured semantic
//! and structural constraints.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coord::PointCloud;
use crate::edge::{
    pairs, posterior_from_values, sample_terminal_state, EdgeState, NoisingKind,
    TransitionModel,
};
use crate::error::{Error, Result};
use crate::graph::{betti1, check_omega, OmegaMatrix, UnionFind};
use crate::nn::EdgeDenoiser;
use crate::rng::sample_categorical;
use crate::schedule::DiffusionSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuralConstraint {
    #[default]
    None,
    /// Acyclicity: proposed edges that would close a cycle are rejected.
    Forest,
}

impl std::str::FromStr for StructuralConstraint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(StructuralConstraint::None),
            "forest" => Ok(StructuralConstraint::Forest),
            other => Err(Error::InvalidConfig(format!(
                "unknown structural constraint '{other}' (expected none or forest)"
            ))),
        }
    }
}

/// What the projector enforces and how hard it tries to repair labels.
#[derive(Debug, Clone, Default)]
pub struct ProjectorConfig {
    pub omega: Option<OmegaMatrix>,
    pub structural: StructuralConstraint,
    /// Label resampling budget per rejected candidate; counts draws, not
    /// distinct labels.
    pub k: usize,
}

impl ProjectorConfig {
    pub fn unconstrained() -> Self {
        ProjectorConfig::default()
    }

    pub fn new(omega: Option<OmegaMatrix>, structural: StructuralConstraint, k: usize) -> Self {
        ProjectorConfig { omega, structural, k }
    }

    pub fn is_constraining(&self) -> bool {
        self.omega.is_some() || self.structural != StructuralConstraint::None
    }
}

/// Per-sample projection counters.
///
/// Every candidate ends up in exactly one bucket, so
/// `accepted + fixed + rejected == candidates`. The intervention rate is
/// the fraction of generated candidates the projector had to touch:
/// `(fixed + rejected) / candidates`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionLog {
    pub candidates: u64,
    pub accepted: u64,
    pub fixed: u64,
    pub rejected: u64,
}

impl InterventionLog {
    pub fn merge(&mut self, other: &InterventionLog) {
        self.candidates += other.candidates;
        self.accepted += other.accepted;
        self.fixed += other.fixed;
        self.rejected += other.rejected;
    }

    pub fn intervention_rate(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            (self.fixed + self.rejected) as f64 / self.candidates as f64
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.accepted + self.fixed + self.rejected == self.candidates
    }
}

/// A proposed insertion: pair `(i, j)` currently empty, sampled `class`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub i: usize,
    pub j: usize,
    pub class: usize,
}

/// Applies one projection step.
///
/// Candidates are processed in a fresh uniformly random order. Each one
/// is (1) rejected outright if it would close a cycle in forest mode,
/// (2) accepted if its sampled label passes the incremental semantic
/// check, or (3) repaired by drawing up to `k` labels from its posterior
/// restricted to edge classes, accepting the first that passes, and
/// rejected if none does. Accepted edges constrain later candidates
/// within the same step.
pub fn project_step<R: Rng + ?Sized>(
    e_t: &EdgeState,
    candidates: &[Candidate],
    posterior_rows: &[Vec<f64>],
    cfg: &ProjectorConfig,
    rng: &mut R,
) -> Result<(EdgeState, InterventionLog)> {
    if candidates.len() != posterior_rows.len() {
        return Err(Error::InvalidConfig(format!(
            "{} candidates but {} posterior rows",
            candidates.len(),
            posterior_rows.len()
        )));
    }
    let n = e_t.node_count();

    // incremental context: per-node incident labels and a component forest
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut forest = UnionFind::new(n);
    for (i, j) in pairs(n) {
        let class = e_t.class(i, j);
        if class != 0 {
            if let Some(omega) = &cfg.omega {
                if class > omega.size() {
                    return Err(Error::LabelOutOfRange { label: class, max: omega.size() });
                }
            }
            adj[i].push(class);
            adj[j].push(class);
            forest.union(i, j);
        }
    }

    for c in candidates {
        if c.i >= n || c.j >= n || c.i == c.j {
            return Err(Error::InvalidGraph(format!("candidate pair ({}, {})", c.i, c.j)));
        }
        if e_t.class(c.i, c.j) != 0 {
            return Err(Error::EdgeExists { i: c.i.min(c.j), j: c.i.max(c.j) });
        }
        if c.class == 0 {
            return Err(Error::InvalidConfig("candidate with no-edge class".into()));
        }
    }

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(rng);

    let mut out = e_t.clone();
    let mut log = InterventionLog::default();

    let label_ok = |adj: &[Vec<usize>], omega: &OmegaMatrix, i: usize, j: usize, class: usize| {
        adj[i].iter().chain(adj[j].iter()).all(|&b| !omega.is_forbidden(class, b))
    };

    for idx in order {
        let cand = candidates[idx];
        log.candidates += 1;

        if cfg.structural == StructuralConstraint::Forest && forest.connected(cand.i, cand.j) {
            // a cycle cannot be repaired by relabeling
            log.rejected += 1;
            continue;
        }

        let mut chosen: Option<(usize, bool)> = None;
        match &cfg.omega {
            None => chosen = Some((cand.class, false)),
            Some(omega) => {
                if cand.class > omega.size() {
                    return Err(Error::LabelOutOfRange { label: cand.class, max: omega.size() });
                }
                if label_ok(&adj, omega, cand.i, cand.j, cand.class) {
                    chosen = Some((cand.class, false));
                } else {
                    let weights = &posterior_rows[idx][1..];
                    if weights.iter().sum::<f64>() > 0.0 {
                        for _ in 0..cfg.k {
                            let label = sample_categorical(rng, weights) + 1;
                            if label <= omega.size()
                                && label_ok(&adj, omega, cand.i, cand.j, label)
                            {
                                chosen = Some((label, true));
                                break;
                            }
                        }
                    }
                }
            }
        }

        match chosen {
            Some((label, was_fixed)) => {
                out.set_class(cand.i, cand.j, label);
                adj[cand.i].push(label);
                adj[cand.j].push(label);
                forest.union(cand.i, cand.j);
                if was_fixed {
                    log.fixed += 1;
                } else {
                    log.accepted += 1;
                }
            }
            None => log.rejected += 1,
        }
    }

    debug_assert!(log.is_consistent());
    Ok((out, log))
}

fn check_state_against(
    state: &EdgeState,
    coords: &PointCloud,
    cfg: &ProjectorConfig,
) -> Result<()> {
    let graph = state.to_graph(
        coords.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect(),
    )?;
    if let Some(omega) = &cfg.omega {
        let report = check_omega(&graph, omega)?;
        if !report.is_empty() {
            return Err(Error::ConstraintViolated(format!(
                "{} semantic violations, first: {}",
                report.violations.len(),
                report.violations[0]
            )));
        }
    }
    if cfg.structural == StructuralConstraint::Forest && betti1(&graph) != 0 {
        return Err(Error::ConstraintViolated(format!(
            "graph has {} independent cycles",
            betti1(&graph)
        )));
    }
    Ok(())
}

/// Runs the reverse chain from `t_start` down to 1 on `state`.
fn run_chain<R: Rng + ?Sized, F: FnMut(usize, &EdgeState)>(
    model: &EdgeDenoiser,
    coords: &PointCloud,
    mut state: EdgeState,
    t_start: usize,
    tm: &TransitionModel,
    sched: &DiffusionSchedule,
    cfg: &ProjectorConfig,
    rng_chain: &mut R,
    rng_proj: &mut R,
    mut on_step: F,
) -> Result<(EdgeState, InterventionLog)> {
    if cfg.is_constraining() && tm.kind() != NoisingKind::Absorbing {
        return Err(Error::InvalidConfig(
            "projection requires the absorbing (edge-deletion) noising kernel".into(),
        ));
    }
    let n = state.node_count();
    let c = tm.class_count();
    let steps = sched.steps();
    let mut log = InterventionLog::default();
    if n < 2 {
        return Ok((state, log));
    }
    if coords.dim() != (n, 3) {
        return Err(Error::ShapeMismatch(format!(
            "coords {:?} for a chain over {n} nodes",
            coords.dim()
        )));
    }

    let absorbing = tm.kind() == NoisingKind::Absorbing;
    let mut row_buf = vec![0.0; c];

    for t in (1..=t_start).rev() {
        let probs = model.forward(&state, coords, t as f64 / steps as f64)?;
        let alpha_t = sched.alpha(t);
        let abar_prev = sched.alpha_bar(t - 1);
        let abar_t = sched.alpha_bar(t);

        if absorbing {
            // present pairs persist (their posterior is one-hot); empty
            // pairs may propose an insertion
            let mut candidates = Vec::new();
            let mut rows = Vec::new();
            for (idx, (i, j)) in pairs(n).enumerate() {
                if state.classes()[idx] != 0 {
                    continue;
                }
                let p_row = probs.row(idx);
                let p_slice = p_row.as_slice().expect("contiguous row");
                posterior_from_values(0, p_slice, alpha_t, abar_prev, abar_t, tm.target(), &mut row_buf)
                    .map_err(|e| match e {
                        Error::ZeroPosteriorMass { class, .. } => {
                            Error::ZeroPosteriorMass { class, step: t }
                        }
                        other => other,
                    })?;
                let sampled = sample_categorical(rng_chain, &row_buf);
                if sampled != 0 {
                    candidates.push(Candidate { i, j, class: sampled });
                    rows.push(row_buf.clone());
                }
            }
            let (next, delta) = project_step(&state, &candidates, &rows, cfg, rng_proj)?;
            state = next;
            log.merge(&delta);
        } else {
            let mut next = state.clone();
            for (idx, (i, j)) in pairs(n).enumerate() {
                let p_row = probs.row(idx);
                let p_slice = p_row.as_slice().expect("contiguous row");
                posterior_from_values(
                    state.classes()[idx],
                    p_slice,
                    alpha_t,
                    abar_prev,
                    abar_t,
                    tm.target(),
                    &mut row_buf,
                )?;
                next.set_class(i, j, sample_categorical(rng_chain, &row_buf));
            }
            state = next;
        }
        on_step(t, &state);
    }
    Ok((state, log))
}

/// Generates one edge set over fixed coordinates, starting from the
/// fully noised boundary state and projecting every step. The output is
/// guaranteed to satisfy `cfg`; under absorbing noising the edge set
/// grows monotonically along the chain.
pub fn reverse_sample<R: Rng + ?Sized>(
    model: &EdgeDenoiser,
    coords: &PointCloud,
    tm: &TransitionModel,
    sched: &DiffusionSchedule,
    cfg: &ProjectorConfig,
    rng_chain: &mut R,
    rng_proj: &mut R,
) -> Result<(EdgeState, InterventionLog)> {
    reverse_sample_with(model, coords, tm, sched, cfg, rng_chain, rng_proj, |_, _| {})
}

/// [`reverse_sample`] with a per-step observer; `on_step(t, state)` sees
/// the state `e^{t-1}` produced by processing step `t`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_sample_with<R: Rng + ?Sized, F: FnMut(usize, &EdgeState)>(
    model: &EdgeDenoiser,
    coords: &PointCloud,
    tm: &TransitionModel,
    sched: &DiffusionSchedule,
    cfg: &ProjectorConfig,
    rng_chain: &mut R,
    rng_proj: &mut R,
    on_step: F,
) -> Result<(EdgeState, InterventionLog)> {
    let state = sample_terminal_state(coords.nrows(), tm, rng_chain);
    run_chain(model, coords, state, sched.steps(), tm, sched, cfg, rng_chain, rng_proj, on_step)
}

/// Completes a partially observed graph by running the last `steps`
/// reverse steps from the observed edge set. Observed edges are
/// preserved verbatim; the output edge set is a superset of the input
/// and satisfies `cfg`.
#[allow(clippy::too_many_arguments)]
pub fn link_predict<R: Rng + ?Sized>(
    model: &EdgeDenoiser,
    partial: &EdgeState,
    coords: &PointCloud,
    tm: &TransitionModel,
    sched: &DiffusionSchedule,
    cfg: &ProjectorConfig,
    steps: usize,
    rng_chain: &mut R,
    rng_proj: &mut R,
) -> Result<(EdgeState, InterventionLog)> {
    if tm.kind() != NoisingKind::Absorbing {
        return Err(Error::InvalidConfig(
            "link prediction requires the absorbing noising kernel".into(),
        ));
    }
    if steps == 0 || steps > sched.steps() {
        return Err(Error::InvalidConfig(format!(
            "link prediction steps {steps} outside 1..={}",
            sched.steps()
        )));
    }
    check_state_against(partial, coords, cfg)?;
    run_chain(
        model,
        coords,
        partial.clone(),
        steps,
        tm,
        sched,
        cfg,
        rng_chain,
        rng_proj,
        |_, _| {},
    )
}
