//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! Operations record onto a [`Tape`]; calling [`Tape::backward`] on a
//! scalar (1x1) node propagates exact gradients to every node, in
//! particular to the parameter leaves. The op set is the minimal basis
//! the denoisers need: dense affine maps, smooth activations, column
//! concatenation, row gather/segment-sum for message passing, softmax,
//! and two fused losses.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

enum Op {
    Leaf,
    /// C = A . B
    MatMul(TensorId, TensorId),
    /// elementwise sum, same shape
    Add(TensorId, TensorId),
    /// elementwise product, same shape
    Mul(TensorId, TensorId),
    /// x (r x c) plus a (1 x c) row broadcast over rows
    AddRow(TensorId, TensorId),
    Scale(TensorId, f64),
    Silu(TensorId),
    /// horizontal concatenation; widths cached for the backward split
    ConcatCols(Vec<TensorId>, Vec<usize>),
    /// out[r] = x[indices[r]]
    GatherRows(TensorId, Arc<Vec<usize>>),
    /// out[s] = sum of rows r with segments[r] == s
    SegmentSumRows(TensorId, Arc<Vec<usize>>),
    /// column means, r x c -> 1 x c
    MeanRows(TensorId),
    /// 1 x c -> r x c
    BroadcastRows(TensorId),
    SoftmaxRows(TensorId),
    /// mean squared error against a constant target
    MseLoss(TensorId, Arc<Array2<f64>>),
    /// mean over rows of -log softmax(logits)[target]
    CrossEntropyRows(TensorId, Arc<Vec<usize>>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Records a computation for later backpropagation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Probabilities below this are clamped inside the cross-entropy loss to
/// keep the value finite.
pub const CE_PROB_FLOOR: f64 = 1e-30;

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> TensorId {
        self.nodes.push(Node { value, op });
        TensorId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> TensorId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: TensorId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        self.nodes[id.0].value.dim()
    }

    /// Scalar payload of a 1x1 node.
    pub fn scalar(&self, id: TensorId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar() on a {:?} node", v.dim());
        v[(0, 0)]
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul shape mismatch ({ar}x{ac}) . ({br}x{bc})");
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    /// Adds a 1-row bias to every row of `x`.
    pub fn add_row(&mut self, x: TensorId, row: TensorId) -> TensorId {
        let (_, c) = self.shape(x);
        assert_eq!(self.shape(row), (1, c), "bias must be 1x{c}");
        let value = self.value(x) + &self.value(row).row(0);
        self.push(value, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: TensorId, factor: f64) -> TensorId {
        let value = self.value(x) * factor;
        self.push(value, Op::Scale(x, factor))
    }

    pub fn silu(&mut self, x: TensorId) -> TensorId {
        let value = self.value(x).mapv(|v| v * sigmoid(v));
        self.push(value, Op::Silu(x))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.shape(p);
                assert_eq!(r, rows, "concat_cols row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut value = Array2::zeros((rows, total));
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            value.slice_mut(s![.., offset..offset + w]).assign(self.value(p));
            offset += w;
        }
        self.push(value, Op::ConcatCols(parts.to_vec(), widths))
    }

    pub fn gather_rows(&mut self, x: TensorId, indices: Arc<Vec<usize>>) -> TensorId {
        let (rows, cols) = self.shape(x);
        let mut value = Array2::zeros((indices.len(), cols));
        for (r, &src) in indices.iter().enumerate() {
            assert!(src < rows, "gather index {src} out of {rows} rows");
            value.row_mut(r).assign(&self.value(x).row(src));
        }
        self.push(value, Op::GatherRows(x, indices))
    }

    pub fn segment_sum_rows(
        &mut self,
        x: TensorId,
        segments: Arc<Vec<usize>>,
        n_segments: usize,
    ) -> TensorId {
        let (rows, cols) = self.shape(x);
        assert_eq!(segments.len(), rows, "one segment id per row");
        let mut value = Array2::zeros((n_segments, cols));
        for (r, &seg) in segments.iter().enumerate() {
            assert!(seg < n_segments);
            let src = self.value(x).row(r).to_owned();
            value.row_mut(seg).scaled_add(1.0, &src);
        }
        self.push(value, Op::SegmentSumRows(x, segments))
    }

    pub fn mean_rows(&mut self, x: TensorId) -> TensorId {
        let (rows, _) = self.shape(x);
        let value = self
            .value(x)
            .mean_axis(Axis(0))
            .expect("mean over zero rows")
            .insert_axis(Axis(0));
        let _ = rows;
        self.push(value, Op::MeanRows(x))
    }

    pub fn broadcast_rows(&mut self, row: TensorId, rows: usize) -> TensorId {
        let (r, c) = self.shape(row);
        assert_eq!(r, 1, "broadcast_rows takes a 1-row tensor");
        let mut value = Array2::zeros((rows, c));
        for mut out_row in value.rows_mut() {
            out_row.assign(&self.value(row).row(0));
        }
        self.push(value, Op::BroadcastRows(row))
    }

    pub fn softmax_rows(&mut self, x: TensorId) -> TensorId {
        let mut value = self.value(x).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        self.push(value, Op::SoftmaxRows(x))
    }

    pub fn mse_loss(&mut self, x: TensorId, target: Arc<Array2<f64>>) -> TensorId {
        assert_eq!(self.shape(x), target.dim(), "mse target shape mismatch");
        let diff = self.value(x) - target.as_ref();
        let loss = diff.mapv(|d| d * d).mean().unwrap();
        self.push(Array2::from_elem((1, 1), loss), Op::MseLoss(x, target))
    }

    pub fn cross_entropy_rows(&mut self, logits: TensorId, targets: Arc<Vec<usize>>) -> TensorId {
        let (rows, cols) = self.shape(logits);
        assert_eq!(targets.len(), rows, "one target class per row");
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < cols, "target class {t} out of {cols}");
            let row = self.value(logits).row(r);
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = row.fold(0.0, |acc, &v| acc + (v - max).exp()).ln() + max;
            let log_prob = (row[t] - lse).max(CE_PROB_FLOOR.ln());
            total -= log_prob;
        }
        let loss = total / rows as f64;
        self.push(Array2::from_elem((1, 1), loss), Op::CrossEntropyRows(logits, targets))
    }

    /// Propagates gradients from a scalar root back to every node.
    pub fn backward(&self, root: TensorId) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[b.0].value.t());
                    let gb = self.nodes[a.0].value.t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b.0].value;
                    let gb = &g * &self.nodes[a.0].value;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(x, row) => {
                    let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *row, grow);
                }
                Op::Scale(x, f) => accumulate(&mut grads, *x, &g * *f),
                Op::Silu(x) => {
                    let gx = ndarray::Zip::from(&g)
                        .and(&self.nodes[x.0].value)
                        .map_collect(|&go, &v| {
                            let s = sigmoid(v);
                            go * (s + v * s * (1.0 - s))
                        });
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts, widths) => {
                    let mut offset = 0;
                    for (&p, &w) in parts.iter().zip(widths) {
                        let gp = g.slice(s![.., offset..offset + w]).to_owned();
                        accumulate(&mut grads, p, gp);
                        offset += w;
                    }
                }
                Op::GatherRows(x, indices) => {
                    let (rows, cols) = self.nodes[x.0].value.dim();
                    let mut gx = Array2::zeros((rows, cols));
                    for (r, &src) in indices.iter().enumerate() {
                        gx.row_mut(src).scaled_add(1.0, &g.row(r));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SegmentSumRows(x, segments) => {
                    let (rows, cols) = self.nodes[x.0].value.dim();
                    let mut gx = Array2::zeros((rows, cols));
                    for (r, &seg) in segments.iter().enumerate() {
                        gx.row_mut(r).assign(&g.row(seg));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanRows(x) => {
                    let rows = self.nodes[x.0].value.nrows();
                    let scaled = &g / rows as f64;
                    let mut gx = Array2::zeros(self.nodes[x.0].value.dim());
                    for mut row in gx.rows_mut() {
                        row.assign(&scaled.row(0));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::BroadcastRows(row) => {
                    let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, grow);
                }
                Op::SoftmaxRows(x) => {
                    let y = &self.nodes[idx].value;
                    let mut gx = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        let mut out = gx.row_mut(r);
                        for c in 0..yr.len() {
                            out[c] = (gr[c] - dot) * yr[c];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MseLoss(x, target) => {
                    let scale = g[(0, 0)] * 2.0 / self.nodes[x.0].value.len() as f64;
                    let gx = (&self.nodes[x.0].value - target.as_ref()) * scale;
                    accumulate(&mut grads, *x, gx);
                }
                Op::CrossEntropyRows(logits, targets) => {
                    let value = &self.nodes[logits.0].value;
                    let (rows, cols) = value.dim();
                    let scale = g[(0, 0)] / rows as f64;
                    let mut gx = Array2::zeros((rows, cols));
                    for r in 0..rows {
                        let row = value.row(r);
                        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                        let mut exps: Array1<f64> = row.mapv(|v| (v - max).exp());
                        let sum = exps.sum();
                        exps.mapv_inplace(|v| v / sum);
                        let mut out = gx.row_mut(r);
                        for c in 0..cols {
                            out[c] = scale * (exps[c] - if c == targets[r] { 1.0 } else { 0.0 });
                        }
                    }
                    accumulate(&mut grads, *logits, gx);
                }
            }
        }

        Gradients { grads }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn accumulate(grads: &mut [Option<Array2<f64>>], id: TensorId, g: Array2<f64>) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Gradients keyed by the tape node they belong to.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `id`; zero-shaped nodes that the loss
    /// never touched return `None`.
    pub fn get(&self, id: TensorId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    /// Central finite differences of a scalar function of one matrix.
    fn finite_diff(
        input: &Array2<f64>,
        f: &dyn Fn(&Array2<f64>) -> f64,
        step: f64,
    ) -> Array2<f64> {
        let mut grad = Array2::zeros(input.dim());
        for idx in 0..input.len() {
            let (r, c) = (idx / input.ncols(), idx % input.ncols());
            let mut plus = input.clone();
            plus[(r, c)] += step;
            let mut minus = input.clone();
            minus[(r, c)] -= step;
            grad[(r, c)] = (f(&plus) - f(&minus)) / (2.0 * step);
        }
        grad
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, label: &str) {
        for (x, y) in a.iter().zip(b.iter()) {
            let err = (x - y).abs() / x.abs().max(y.abs()).max(1.0);
            assert!(err < 1e-4, "{label}: {x} vs {y} (rel err {err})");
        }
    }

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let x0 = Array2::from_shape_vec((2, 2), vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let sq = tape.mul(x, x);
        let rowsum = tape.mean_rows(sq); // 1x2 column means
        let total = tape.mse_loss(x, Arc::new(Array2::zeros((2, 2))));
        let _ = rowsum;
        let grads = tape.backward(total);
        // d/dx mean(x^2) = 2x / len
        let expected = &x0 * (2.0 / 4.0);
        assert_close(grads.get(x).unwrap(), &expected, "sum of squares");
    }

    #[test]
    fn constant_loss_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::from_elem((2, 3), 1.5));
        let c = tape.leaf(Array2::from_elem((1, 1), 42.0));
        let grads = tape.backward(c);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = substream(21, "gradcheck", 0);
        for trial in 0..30 {
            let r = 2 + trial % 3;
            let c = 2 + trial % 2;
            let x0 = random_matrix(&mut rng, r, c);
            let w0 = random_matrix(&mut rng, c, 3);
            let b0 = random_matrix(&mut rng, 1, 3);
            let target = Arc::new(random_matrix(&mut rng, r, 3));
            let gather: Arc<Vec<usize>> =
                Arc::new((0..r + 2).map(|k| k % r).collect());
            let segments: Arc<Vec<usize>> =
                Arc::new((0..r + 2).map(|k| k % 2).collect());
            let classes: Arc<Vec<usize>> = Arc::new((0..2).map(|k| k % 3).collect());

            // a composite touching every op
            let run = |x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>| -> (f64, Tape, TensorId, TensorId, TensorId) {
                let mut tape = Tape::new();
                let xi = tape.leaf(x.clone());
                let wi = tape.leaf(w.clone());
                let bi = tape.leaf(b.clone());
                let lin = tape.matmul(xi, wi);
                let biased = tape.add_row(lin, bi);
                let act = tape.silu(biased);
                let gathered = tape.gather_rows(act, gather.clone());
                let segs = tape.segment_sum_rows(gathered, segments.clone(), 2);
                let scaled = tape.scale(segs, 0.5);
                let soft = tape.softmax_rows(scaled);
                let both = tape.concat_cols(&[scaled, soft]);
                let mean = tape.mean_rows(both);
                let spread = tape.broadcast_rows(mean, 2);
                let half = tape.scale(spread, 1.0);
                let sum2 = tape.add(half, spread);
                let prod = tape.mul(sum2, spread);
                let ce = tape.cross_entropy_rows(prod, classes.clone());
                let mse_in = tape.matmul(xi, wi);
                let mse = tape.mse_loss(mse_in, target.clone());
                let loss = tape.add(ce, mse);
                let v = tape.scalar(loss);
                (v, tape, xi, wi, bi)
            };

            let (_, tape, xi, wi, bi) = run(&x0, &w0, &b0);
            let ce_id = TensorId(tape.nodes.len() - 1);
            let grads = tape.backward(ce_id);

            let fx = finite_diff(&x0, &|x| run(x, &w0, &b0).0, 1e-5);
            let fw = finite_diff(&w0, &|w| run(&x0, w, &b0).0, 1e-5);
            let fb = finite_diff(&b0, &|b| run(&x0, &w0, b).0, 1e-5);
            assert_close(grads.get(xi).unwrap(), &fx, "x");
            assert_close(grads.get(wi).unwrap(), &fw, "w");
            assert_close(grads.get(bi).unwrap(), &fb, "b");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = substream(22, "softmax", 0);
        let mut tape = Tape::new();
        let x = tape.leaf(random_matrix(&mut rng, 5, 7));
        let y = tape.softmax_rows(x);
        for row in tape.value(y).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_c() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Array2::zeros((4, 5)));
        let ce = tape.cross_entropy_rows(logits, Arc::new(vec![0, 1, 2, 3]));
        assert!((tape.scalar(ce) - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = mse(x, 0) + mse(x, 0) -> grad = 2 * 2x/len
        let x0 = Array2::from_shape_vec((1, 2), vec![3.0, -1.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let z = Arc::new(Array2::zeros((1, 2)));
        let a = tape.mse_loss(x, z.clone());
        let b = tape.mse_loss(x, z);
        let loss = tape.add(a, b);
        let grads = tape.backward(loss);
        let expected = &x0 * 2.0;
        assert_close(grads.get(x).unwrap(), &expected, "fan out");
    }
}
