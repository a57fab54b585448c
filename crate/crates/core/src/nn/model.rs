//! The two denoisers: a per-point coordinate noise predictor and a
//! message-passing edge-class predictor.
//!
//! Both are permutation equivariant by construction: every learned map
//! acts per point or per pair, and all cross-item context flows through
//! symmetric aggregation (mean pooling, endpoint-symmetric pair features,
//! incident-pair sums).

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::edge::{pair_count, pairs, EdgeState};
use crate::error::{Error, Result};
use crate::nn::params::{bind_params, BoundParams, ParamSet};
use crate::nn::tape::{Tape, TensorId};
use crate::rng::substream;

pub const TIME_EMBED_DIM: usize = 16;

/// Per-pair geometric columns fed to the pair update: the endpoint
/// distance at three length scales.
pub const PAIR_GEOM_DIM: usize = 3;

/// Endpoint-symmetric geometry features for every canonical pair:
/// `[d, exp(-d), exp(-4 d^2)]` where `d` is the Euclidean distance in
/// normalized coordinates.
fn pair_geometry(coords: &Array2<f64>) -> Array2<f64> {
    let n = coords.nrows();
    let mut geom = Array2::zeros((pair_count(n), PAIR_GEOM_DIM));
    for (row, (i, j)) in pairs(n).enumerate() {
        let mut d2 = 0.0;
        for c in 0..3 {
            let diff = coords[(i, c)] - coords[(j, c)];
            d2 += diff * diff;
        }
        let d = d2.sqrt();
        geom[(row, 0)] = d;
        geom[(row, 1)] = (-d).exp();
        geom[(row, 2)] = (-4.0 * d2).exp();
    }
    geom
}

/// Sinusoidal embedding of normalized time `t/T` as a 1-row matrix.
pub fn time_embedding(time: f64) -> Array2<f64> {
    let mut emb = Array2::zeros((1, TIME_EMBED_DIM));
    for k in 0..TIME_EMBED_DIM / 2 {
        let freq = (2.0f64).powi(k as i32) * std::f64::consts::TAU;
        emb[(0, 2 * k)] = (freq * time).sin();
        emb[(0, 2 * k + 1)] = (freq * time).cos();
    }
    emb
}

fn he_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, gain: f64) -> Array2<f64> {
    let std = gain * (2.0 / rows as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid normal");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

fn linear(tape: &mut Tape, bound: &BoundParams, x: TensorId, name: &str) -> TensorId {
    let w = bound.id(&format!("{name}.w"));
    let b = bound.id(&format!("{name}.b"));
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

/// Coordinate noise predictor.
///
/// A per-point encoder is mean-pooled into a global context vector; the
/// main head maps `[point, time, context]` through two hidden layers to
/// a 3D noise estimate per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordDenoiser {
    pub hidden: usize,
    pub params: ParamSet,
}

impl CoordDenoiser {
    fn build(hidden: usize, mut init: impl FnMut(usize, usize, f64) -> Array2<f64>) -> Self {
        let input = 3 + TIME_EMBED_DIM;
        let mut params = ParamSet::new();
        params.push("enc.w", init(input, hidden, 1.0));
        params.push("enc.b", Array2::zeros((1, hidden)));
        params.push("l1.w", init(input + hidden, hidden, 1.0));
        params.push("l1.b", Array2::zeros((1, hidden)));
        params.push("l2.w", init(hidden, hidden, 1.0));
        params.push("l2.b", Array2::zeros((1, hidden)));
        params.push("out.w", init(hidden, 3, 0.1));
        params.push("out.b", Array2::zeros((1, 3)));
        CoordDenoiser { hidden, params }
    }

    pub fn init(hidden: usize, seed: u64) -> Self {
        let mut rng = substream(seed, "init.coord", 0);
        Self::build(hidden, |r, c, gain| he_normal(&mut rng, r, c, gain))
    }

    pub fn zeros(hidden: usize) -> Self {
        Self::build(hidden, |r, c, _| Array2::zeros((r, c)))
    }

    /// Builds the forward pass on `tape`; returns the n x 3 prediction.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        xt: TensorId,
        time: f64,
    ) -> TensorId {
        let n = tape.shape(xt).0;
        let t_emb = tape.leaf(time_embedding(time));
        let t_rows = tape.broadcast_rows(t_emb, n);

        let enc_in = tape.concat_cols(&[xt, t_rows]);
        let enc_lin = linear(tape, bound, enc_in, "enc");
        let enc = tape.silu(enc_lin);
        let context = tape.mean_rows(enc);
        let ctx_rows = tape.broadcast_rows(context, n);

        let main_in = tape.concat_cols(&[xt, t_rows, ctx_rows]);
        let h1_lin = linear(tape, bound, main_in, "l1");
        let h1 = tape.silu(h1_lin);
        let h2_lin = linear(tape, bound, h1, "l2");
        let h2 = tape.silu(h2_lin);
        linear(tape, bound, h2, "out")
    }

    /// Predicted noise for the noised points `xt` at normalized time
    /// `t/T`.
    pub fn forward(&self, xt: &Array2<f64>, time: f64) -> Result<Array2<f64>> {
        if xt.ncols() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "coordinate input must be n x 3, got {:?}",
                xt.dim()
            )));
        }
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &self.params);
        let x = tape.leaf(xt.clone());
        let out = self.forward_on_tape(&mut tape, &bound, x, time);
        let value = tape.value(out).clone();
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("coordinate denoiser output".into()));
        }
        Ok(value)
    }
}

/// Pair-class predictor for the edge stage.
///
/// Node embeddings come from clean coordinates plus the time embedding.
/// Each message-passing block recomputes pair features from symmetric
/// endpoint combinations plus the current pair class one-hot, then
/// refreshes node features from the mean of incident pair features. The
/// head maps final pair features to one logit per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDenoiser {
    pub hidden: usize,
    pub blocks: usize,
    pub classes: usize,
    pub params: ParamSet,
}

impl EdgeDenoiser {
    fn build(
        hidden: usize,
        blocks: usize,
        classes: usize,
        mut init: impl FnMut(usize, usize, f64) -> Array2<f64>,
    ) -> Self {
        // pair input: symmetric endpoint combinations, endpoint distance
        // features, and the current class one-hot
        let pair_in = 2 * hidden + PAIR_GEOM_DIM + classes;
        let mut params = ParamSet::new();
        params.push("embed.w", init(3 + TIME_EMBED_DIM, hidden, 1.0));
        params.push("embed.b", Array2::zeros((1, hidden)));
        for k in 0..blocks {
            params.push(format!("blk{k}.pair.w"), init(pair_in, hidden, 1.0));
            params.push(format!("blk{k}.pair.b"), Array2::zeros((1, hidden)));
            params.push(format!("blk{k}.node.w"), init(2 * hidden, hidden, 1.0));
            params.push(format!("blk{k}.node.b"), Array2::zeros((1, hidden)));
        }
        let head_in = if blocks == 0 { pair_in } else { hidden };
        params.push("head.w", init(head_in, classes, 0.1));
        params.push("head.b", Array2::zeros((1, classes)));
        EdgeDenoiser { hidden, blocks, classes, params }
    }

    pub fn init(hidden: usize, blocks: usize, classes: usize, seed: u64) -> Self {
        let mut rng = substream(seed, "init.edge", 0);
        Self::build(hidden, blocks, classes, |r, c, gain| he_normal(&mut rng, r, c, gain))
    }

    pub fn zeros(hidden: usize, blocks: usize, classes: usize) -> Self {
        Self::build(hidden, blocks, classes, |r, c, _| Array2::zeros((r, c)))
    }

    /// One-hot matrix of the current pair classes, pair-index order.
    fn class_one_hot(&self, state: &EdgeState) -> Array2<f64> {
        let p = pair_count(state.node_count());
        let mut one_hot = Array2::zeros((p, self.classes));
        for (idx, &c) in state.classes().iter().enumerate() {
            one_hot[(idx, c)] = 1.0;
        }
        one_hot
    }

    /// Builds the forward pass on `tape`; returns P x c logits in
    /// pair-index order.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        coords: TensorId,
        state: &EdgeState,
        time: f64,
    ) -> TensorId {
        let n = state.node_count();
        assert!(n >= 2, "edge denoiser needs at least two nodes");
        assert_eq!(tape.shape(coords), (n, 3), "coords must be n x 3");

        let idx_i: Arc<Vec<usize>> = Arc::new(pairs(n).map(|(i, _)| i).collect());
        let idx_j: Arc<Vec<usize>> = Arc::new(pairs(n).map(|(_, j)| j).collect());
        let one_hot = tape.leaf(self.class_one_hot(state));
        let geometry = tape.leaf(pair_geometry(tape.value(coords)));

        let t_emb = tape.leaf(time_embedding(time));
        let t_rows = tape.broadcast_rows(t_emb, n);
        let embed_in = tape.concat_cols(&[coords, t_rows]);
        let embed_lin = linear(tape, bound, embed_in, "embed");
        let mut node_feat = tape.silu(embed_lin);

        let pair_input = |tape: &mut Tape, node_feat: TensorId| {
            let gi = tape.gather_rows(node_feat, idx_i.clone());
            let gj = tape.gather_rows(node_feat, idx_j.clone());
            let sum = tape.add(gi, gj);
            let prod = tape.mul(gi, gj);
            tape.concat_cols(&[sum, prod, geometry, one_hot])
        };

        let mut pair_feat = pair_input(tape, node_feat);
        for k in 0..self.blocks {
            let pair_lin = linear(tape, bound, pair_feat, &format!("blk{k}.pair"));
            let pair_act = tape.silu(pair_lin);

            // mean over the n-1 pairs incident to each node
            let agg_i = tape.segment_sum_rows(pair_act, idx_i.clone(), n);
            let agg_j = tape.segment_sum_rows(pair_act, idx_j.clone(), n);
            let agg_sum = tape.add(agg_i, agg_j);
            let agg = tape.scale(agg_sum, 1.0 / (n - 1) as f64);

            let node_in = tape.concat_cols(&[node_feat, agg]);
            let node_lin = linear(tape, bound, node_in, &format!("blk{k}.node"));
            node_feat = tape.silu(node_lin);

            pair_feat = if k + 1 == self.blocks {
                pair_act
            } else {
                pair_input(tape, node_feat)
            };
        }
        linear(tape, bound, pair_feat, "head")
    }

    /// Per-pair class distributions (rows sum to 1) for the noised state
    /// `state` conditioned on clean coordinates, in pair-index order.
    pub fn forward(
        &self,
        state: &EdgeState,
        coords: &Array2<f64>,
        time: f64,
    ) -> Result<Array2<f64>> {
        if coords.nrows() != state.node_count() || coords.ncols() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "coords {:?} do not match an edge state over {} nodes",
                coords.dim(),
                state.node_count()
            )));
        }
        if let Some(&bad) = state.classes().iter().find(|&&c| c >= self.classes) {
            return Err(Error::LabelOutOfRange { label: bad, max: self.classes - 1 });
        }
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &self.params);
        let c = tape.leaf(coords.clone());
        let logits = self.forward_on_tape(&mut tape, &bound, c, state, time);
        let probs = tape.softmax_rows(logits);
        let value = tape.value(probs).clone();
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("edge denoiser output".into()));
        }
        Ok(value)
    }
}
