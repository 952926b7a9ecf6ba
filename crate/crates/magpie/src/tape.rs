//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] is an append-only arena of operations. Values are computed
//! eagerly on construction; [`Tape::backward`] walks the arena in reverse and
//! accumulates gradients for every node that (transitively) depends on a
//! tracked leaf. Constants never receive gradients, which is what makes
//! stop-gradient contracts checkable exactly: detaching a value re-enters it
//! as a fresh constant leaf, so nothing upstream of the detach point can see
//! any gradient at all.
//!
//! The op set is deliberately graph-shaped: besides the usual dense algebra
//! there are gather/replace row ops for mask tokens, per-destination edge
//! softmax and weighted neighbor sums for attention aggregation, and a
//! guarded row-wise cosine for the reconstruction losses.

use crate::mat::Mat;
use crate::Scalar;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapKind {
    Relu,
    /// Leaky ReLU with the given negative-side slope.
    LeakyRelu(f64),
    Elu,
    Tanh,
    Ln,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    /// `[n x d] + [1 x d]`, broadcast over rows.
    AddRow(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId, T),
    Map(NodeId, MapKind),
    /// Elementwise `x^e` for constant `e` (inputs are kept in `x >= 0` by
    /// every call site; `0^0 = 1`).
    PowScalar(NodeId, T),
    /// `[n x d] -> [n x 1]` row sums.
    RowSum(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// Softmax independently over each row.
    SoftmaxRows(NodeId),
    /// `out[i] = x[idx[i]]`; scatter-adds gradients, so repeated indices are fine.
    GatherRows(NodeId, Vec<usize>),
    /// Copy of `x` with the rows in `idx` replaced by the single row `row`.
    ReplaceRows {
        x: NodeId,
        row: NodeId,
        idx: Vec<usize>,
    },
    /// Softmax over edge scores, grouped by destination node.
    EdgeSoftmax {
        logits: NodeId,
        dst: Vec<usize>,
        num_nodes: usize,
    },
    /// `out[dst_e] += alpha_e * feats[src_e]`, differentiable in both.
    WeightedNeighborSum {
        alpha: NodeId,
        feats: NodeId,
        edges: Vec<(usize, usize)>,
    },
    /// `out[dst_e] += w_e * x[src_e]` with constant weights.
    NeighborSum {
        x: NodeId,
        edges: Vec<(usize, usize)>,
        weights: Vec<T>,
    },
    ConcatCols(Vec<NodeId>),
    /// `out_i = <a_i, b_i>` per row, `[n x 1]`.
    RowDot(NodeId, NodeId),
    /// Guarded row-wise cosine similarity: rows whose norm falls below `eps`
    /// yield cosine 0 and pass no gradient.
    RowCosine { a: NodeId, b: NodeId, eps: T },
}

struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward pass, indexed by node id.
pub struct Grads<T> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of the loss with respect to a node, if any reached it.
    pub fn get(&self, id: NodeId) -> Option<&Mat<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient with zeros substituted when no gradient flowed.
    pub fn get_or_zeros(&self, id: NodeId, shape: (usize, usize)) -> Mat<T> {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Mat::zeros(shape.0, shape.1),
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat<T> {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id].value.shape()
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    /// Tracked leaf: a parameter or any input gradients should reach.
    pub fn leaf(&mut self, value: Mat<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked leaf: data, targets, detached values.
    pub fn constant(&mut self, value: Mat<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Re-enters the value of `x` as a constant, severing gradient flow.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x].value.clone();
        self.constant(v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).transpose();
        let ng = self.needs(x);
        self.push(v, Op::Transpose(x), ng)
    }

    /// Adds a `1 x d` row to every row of an `n x d` matrix.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let xv = self.value(x);
        let rv = self.value(row);
        assert_eq!(rv.rows(), 1, "add_row: row operand must be 1 x d");
        assert_eq!(xv.cols(), rv.cols(), "add_row: width mismatch");
        let mut v = xv.clone();
        for i in 0..v.rows() {
            for (d, &r) in v.row_mut(i).iter_mut().zip(rv.row(0)) {
                *d = *d + r;
            }
        }
        let ng = self.needs(x) || self.needs(row);
        self.push(v, Op::AddRow(x, row), ng)
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let v = self.value(x).map(|e| e * c);
        let ng = self.needs(x);
        self.push(v, Op::Scale(x, c), ng)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: T) -> NodeId {
        let v = self.value(x).map(|e| e + c);
        let ng = self.needs(x);
        self.push(v, Op::AddScalar(x, c), ng)
    }

    pub fn map(&mut self, x: NodeId, kind: MapKind) -> NodeId {
        let v = self.value(x).map(|e| apply_map(e, kind));
        let ng = self.needs(x);
        self.push(v, Op::Map(x, kind), ng)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.map(x, MapKind::Relu)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        self.map(x, MapKind::Ln)
    }

    pub fn pow_scalar(&mut self, x: NodeId, e: T) -> NodeId {
        let v = self.value(x).map(|b| b.powf(e));
        let ng = self.needs(x);
        self.push(v, Op::PowScalar(x, e), ng)
    }

    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut v = Mat::zeros(xv.rows(), 1);
        for i in 0..xv.rows() {
            let mut s = T::zero();
            for &e in xv.row(i) {
                s = s + e;
            }
            v[(i, 0)] = s;
        }
        let ng = self.needs(x);
        self.push(v, Op::RowSum(x), ng)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let mut s = T::zero();
        for &e in self.value(x).data() {
            s = s + e;
        }
        let ng = self.needs(x);
        self.push(Mat::scalar(s), Op::SumAll(x), ng)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len();
        assert!(n > 0, "mean_all over empty matrix");
        let mut s = T::zero();
        for &e in self.value(x).data() {
            s = s + e;
        }
        let v = s / T::from_f64(n as f64);
        let ng = self.needs(x);
        self.push(Mat::scalar(v), Op::MeanAll(x), ng)
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut v = xv.clone();
        for i in 0..v.rows() {
            softmax_in_place(v.row_mut(i));
        }
        let ng = self.needs(x);
        self.push(v, Op::SoftmaxRows(x), ng)
    }

    /// Softmax over all entries of a column vector `[n x 1]`.
    pub fn softmax_col(&mut self, x: NodeId) -> NodeId {
        assert_eq!(self.value(x).cols(), 1, "softmax_col expects n x 1");
        let t = self.transpose(x);
        let s = self.softmax_rows(t);
        self.transpose(s)
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let xv = self.value(x);
        let mut v = Mat::zeros(idx.len(), xv.cols());
        for (i, &r) in idx.iter().enumerate() {
            assert!(r < xv.rows(), "gather_rows index out of range");
            v.row_mut(i).copy_from_slice(xv.row(r));
        }
        let ng = self.needs(x);
        self.push(v, Op::GatherRows(x, idx.to_vec()), ng)
    }

    /// Copy of `x` with every row in `idx` replaced by the `1 x d` `row`.
    pub fn replace_rows(&mut self, x: NodeId, row: NodeId, idx: &[usize]) -> NodeId {
        let rv = self.value(row);
        assert_eq!(rv.rows(), 1, "replace_rows: replacement must be 1 x d");
        assert_eq!(
            rv.cols(),
            self.value(x).cols(),
            "replace_rows: width mismatch"
        );
        let row_data: Vec<T> = rv.row(0).to_vec();
        let mut v = self.value(x).clone();
        for &r in idx {
            assert!(r < v.rows(), "replace_rows index out of range");
            v.row_mut(r).copy_from_slice(&row_data);
        }
        let ng = self.needs(x) || self.needs(row);
        self.push(
            v,
            Op::ReplaceRows {
                x,
                row,
                idx: idx.to_vec(),
            },
            ng,
        )
    }

    /// Per-destination softmax over edge logits `[e x 1]`.
    pub fn edge_softmax(&mut self, logits: NodeId, dst: &[usize], num_nodes: usize) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.cols(), 1, "edge_softmax expects e x 1 logits");
        assert_eq!(lv.rows(), dst.len(), "edge_softmax: dst length mismatch");
        let v = edge_softmax_values(lv, dst, num_nodes);
        let ng = self.needs(logits);
        self.push(
            v,
            Op::EdgeSoftmax {
                logits,
                dst: dst.to_vec(),
                num_nodes,
            },
            ng,
        )
    }

    /// `out[dst_e] += alpha_e * feats[src_e]` over the edge list.
    pub fn weighted_neighbor_sum(
        &mut self,
        alpha: NodeId,
        feats: NodeId,
        edges: &[(usize, usize)],
        num_nodes: usize,
    ) -> NodeId {
        let av = self.value(alpha);
        assert_eq!(av.cols(), 1, "weighted_neighbor_sum expects e x 1 weights");
        assert_eq!(av.rows(), edges.len(), "weight/edge count mismatch");
        let fv = self.value(feats);
        let mut v = Mat::zeros(num_nodes, fv.cols());
        for (e, &(src, dst)) in edges.iter().enumerate() {
            let a = av[(e, 0)];
            let src_row: Vec<T> = fv.row(src).to_vec();
            for (d, &s) in v.row_mut(dst).iter_mut().zip(&src_row) {
                *d = *d + a * s;
            }
        }
        let ng = self.needs(alpha) || self.needs(feats);
        self.push(
            v,
            Op::WeightedNeighborSum {
                alpha,
                feats,
                edges: edges.to_vec(),
            },
            ng,
        )
    }

    /// `out[dst_e] += w_e * x[src_e]` with fixed weights.
    pub fn neighbor_sum(
        &mut self,
        x: NodeId,
        edges: &[(usize, usize)],
        weights: &[T],
        num_nodes: usize,
    ) -> NodeId {
        assert_eq!(edges.len(), weights.len(), "weight/edge count mismatch");
        let xv = self.value(x);
        let mut v = Mat::zeros(num_nodes, xv.cols());
        for (e, &(src, dst)) in edges.iter().enumerate() {
            let w = weights[e];
            let src_row: Vec<T> = xv.row(src).to_vec();
            for (d, &s) in v.row_mut(dst).iter_mut().zip(&src_row) {
                *d = *d + w * s;
            }
        }
        let ng = self.needs(x);
        self.push(
            v,
            Op::NeighborSum {
                x,
                edges: edges.to_vec(),
                weights: weights.to_vec(),
            },
            ng,
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Mat::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols: row count mismatch");
            for i in 0..rows {
                v.row_mut(i)[off..off + pv.cols()].copy_from_slice(pv.row(i));
            }
            off += pv.cols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Row-wise inner products, `[n x 1]`.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "row_dot shape mismatch");
        let mut v = Mat::zeros(av.rows(), 1);
        for i in 0..av.rows() {
            let mut s = T::zero();
            for (&x, &y) in av.row(i).iter().zip(bv.row(i)) {
                s = s + x * y;
            }
            v[(i, 0)] = s;
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::RowDot(a, b), ng)
    }

    /// Row-wise cosine similarity with an epsilon guard: if either row norm
    /// is below `eps` the cosine is defined as 0 (and passes no gradient).
    pub fn row_cosine(&mut self, a: NodeId, b: NodeId, eps: T) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "row_cosine shape mismatch");
        let mut v = Mat::zeros(av.rows(), 1);
        for i in 0..av.rows() {
            v[(i, 0)] = guarded_cosine(av.row(i), bv.row(i), eps).0;
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::RowCosine { a, b, eps }, ng)
    }

    /// Reverse pass from a scalar (`1 x 1`) loss node.
    pub fn backward(&self, loss: NodeId) -> Grads<T> {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward requires a scalar loss"
        );
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Mat::scalar(T::one()));

        for id in (0..=loss).rev() {
            if !self.nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Grads { grads }
    }

    fn accumulate(&self, id: NodeId, g: &Mat<T>, grads: &mut [Option<Mat<T>>]) {
        let add_to = |grads: &mut [Option<Mat<T>>], tape: &Self, target: NodeId, delta: Mat<T>| {
            if !tape.needs(target) {
                return;
            }
            match &mut grads[target] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };

        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(grads, self, *a, g.clone());
                add_to(grads, self, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, self, *a, g.clone());
                add_to(grads, self, *b, g.map(|e| -e));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    add_to(grads, self, *a, g.zip(self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    add_to(grads, self, *b, g.zip(self.value(*a), |x, y| x * y));
                }
            }
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    add_to(grads, self, *a, g.matmul(&self.value(*b).transpose()));
                }
                if self.needs(*b) {
                    add_to(grads, self, *b, self.value(*a).transpose().matmul(g));
                }
            }
            Op::Transpose(x) => add_to(grads, self, *x, g.transpose()),
            Op::AddRow(x, row) => {
                add_to(grads, self, *x, g.clone());
                if self.needs(*row) {
                    let mut rg = Mat::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, &e) in rg.row_mut(0).iter_mut().zip(g.row(i)) {
                            *d = *d + e;
                        }
                    }
                    add_to(grads, self, *row, rg);
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                add_to(grads, self, *x, g.map(|e| e * c));
            }
            Op::AddScalar(x, _) => add_to(grads, self, *x, g.clone()),
            Op::Map(x, kind) => {
                let xv = self.value(*x);
                let kind = *kind;
                let mut dx = g.clone();
                for (d, &input) in dx.data_mut().iter_mut().zip(xv.data()) {
                    *d = *d * map_derivative(input, kind);
                }
                add_to(grads, self, *x, dx);
            }
            Op::PowScalar(x, e) => {
                let xv = self.value(*x);
                let e = *e;
                let mut dx = g.clone();
                for (d, &input) in dx.data_mut().iter_mut().zip(xv.data()) {
                    let slope = if e == T::one() {
                        T::one()
                    } else {
                        e * input.powf(e - T::one())
                    };
                    *d = *d * slope;
                }
                add_to(grads, self, *x, dx);
            }
            Op::RowSum(x) => {
                let xv = self.value(*x);
                let mut dx = Mat::zeros(xv.rows(), xv.cols());
                for i in 0..xv.rows() {
                    let gi = g[(i, 0)];
                    for d in dx.row_mut(i) {
                        *d = gi;
                    }
                }
                add_to(grads, self, *x, dx);
            }
            Op::SumAll(x) => {
                let xv = self.value(*x);
                let gi = g.item();
                add_to(grads, self, *x, Mat::zeros(xv.rows(), xv.cols()).map(|_| gi));
            }
            Op::MeanAll(x) => {
                let xv = self.value(*x);
                let gi = g.item() / T::from_f64(xv.len() as f64);
                add_to(grads, self, *x, Mat::zeros(xv.rows(), xv.cols()).map(|_| gi));
            }
            Op::SoftmaxRows(x) => {
                let sv = &self.nodes[id].value;
                let mut dx = Mat::zeros(sv.rows(), sv.cols());
                for i in 0..sv.rows() {
                    let mut dot = T::zero();
                    for (&s, &gi) in sv.row(i).iter().zip(g.row(i)) {
                        dot = dot + s * gi;
                    }
                    for ((d, &s), &gi) in dx.row_mut(i).iter_mut().zip(sv.row(i)).zip(g.row(i)) {
                        *d = s * (gi - dot);
                    }
                }
                add_to(grads, self, *x, dx);
            }
            Op::GatherRows(x, idx) => {
                let xv = self.value(*x);
                let mut dx = Mat::zeros(xv.rows(), xv.cols());
                for (i, &r) in idx.iter().enumerate() {
                    for (d, &e) in dx.row_mut(r).iter_mut().zip(g.row(i)) {
                        *d = *d + e;
                    }
                }
                add_to(grads, self, *x, dx);
            }
            Op::ReplaceRows { x, row, idx } => {
                if self.needs(*x) {
                    let mut dx = g.clone();
                    for &r in idx {
                        for d in dx.row_mut(r) {
                            *d = T::zero();
                        }
                    }
                    add_to(grads, self, *x, dx);
                }
                if self.needs(*row) {
                    let mut dr = Mat::zeros(1, g.cols());
                    for &r in idx {
                        for (d, &e) in dr.row_mut(0).iter_mut().zip(g.row(r)) {
                            *d = *d + e;
                        }
                    }
                    add_to(grads, self, *row, dr);
                }
            }
            Op::EdgeSoftmax {
                logits,
                dst,
                num_nodes,
            } => {
                let alpha = &self.nodes[id].value;
                // dot_v = sum over edges into v of alpha_e * g_e
                let mut dot = vec![T::zero(); *num_nodes];
                for (e, &d) in dst.iter().enumerate() {
                    dot[d] = dot[d] + alpha[(e, 0)] * g[(e, 0)];
                }
                let mut dl = Mat::zeros(alpha.rows(), 1);
                for (e, &d) in dst.iter().enumerate() {
                    dl[(e, 0)] = alpha[(e, 0)] * (g[(e, 0)] - dot[d]);
                }
                add_to(grads, self, *logits, dl);
            }
            Op::WeightedNeighborSum { alpha, feats, edges } => {
                let av = self.value(*alpha);
                let fv = self.value(*feats);
                if self.needs(*alpha) {
                    let mut da = Mat::zeros(av.rows(), 1);
                    for (e, &(src, dst)) in edges.iter().enumerate() {
                        let mut s = T::zero();
                        for (&gd, &f) in g.row(dst).iter().zip(fv.row(src)) {
                            s = s + gd * f;
                        }
                        da[(e, 0)] = s;
                    }
                    add_to(grads, self, *alpha, da);
                }
                if self.needs(*feats) {
                    let mut df = Mat::zeros(fv.rows(), fv.cols());
                    for (e, &(src, dst)) in edges.iter().enumerate() {
                        let a = av[(e, 0)];
                        for (d, &gd) in df.row_mut(src).iter_mut().zip(g.row(dst)) {
                            *d = *d + a * gd;
                        }
                    }
                    add_to(grads, self, *feats, df);
                }
            }
            Op::NeighborSum { x, edges, weights } => {
                let xv = self.value(*x);
                let mut dx = Mat::zeros(xv.rows(), xv.cols());
                for (e, &(src, dst)) in edges.iter().enumerate() {
                    let w = weights[e];
                    for (d, &gd) in dx.row_mut(src).iter_mut().zip(g.row(dst)) {
                        *d = *d + w * gd;
                    }
                }
                add_to(grads, self, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.needs(p) {
                        let mut dp = Mat::zeros(g.rows(), pc);
                        for i in 0..g.rows() {
                            dp.row_mut(i).copy_from_slice(&g.row(i)[off..off + pc]);
                        }
                        add_to(grads, self, p, dp);
                    }
                    off += pc;
                }
            }
            Op::RowDot(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.needs(*a) {
                    let mut da = Mat::zeros(av.rows(), av.cols());
                    for i in 0..av.rows() {
                        let gi = g[(i, 0)];
                        for (d, &bb) in da.row_mut(i).iter_mut().zip(bv.row(i)) {
                            *d = gi * bb;
                        }
                    }
                    add_to(grads, self, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Mat::zeros(bv.rows(), bv.cols());
                    for i in 0..bv.rows() {
                        let gi = g[(i, 0)];
                        for (d, &aa) in db.row_mut(i).iter_mut().zip(av.row(i)) {
                            *d = gi * aa;
                        }
                    }
                    add_to(grads, self, *b, db);
                }
            }
            Op::RowCosine { a, b, eps } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let eps = *eps;
                let mut da = Mat::zeros(av.rows(), av.cols());
                let mut db = Mat::zeros(bv.rows(), bv.cols());
                for i in 0..av.rows() {
                    let (c, guarded) = guarded_cosine(av.row(i), bv.row(i), eps);
                    if guarded {
                        continue;
                    }
                    let gi = g[(i, 0)];
                    let na = row_norm(av.row(i));
                    let nb = row_norm(bv.row(i));
                    let inv = T::one() / (na * nb);
                    for j in 0..av.cols() {
                        let x = av.row(i)[j];
                        let y = bv.row(i)[j];
                        da.row_mut(i)[j] = gi * (y * inv - c * x / (na * na));
                        db.row_mut(i)[j] = gi * (x * inv - c * y / (nb * nb));
                    }
                }
                if self.needs(*a) {
                    add_to(grads, self, *a, da);
                }
                if self.needs(*b) {
                    add_to(grads, self, *b, db);
                }
            }
        }
    }
}

fn apply_map<T: Scalar>(x: T, kind: MapKind) -> T {
    match kind {
        MapKind::Relu => {
            if x > T::zero() {
                x
            } else {
                T::zero()
            }
        }
        MapKind::LeakyRelu(slope) => {
            if x > T::zero() {
                x
            } else {
                x * T::from_f64(slope)
            }
        }
        MapKind::Elu => {
            if x > T::zero() {
                x
            } else {
                x.exp() - T::one()
            }
        }
        MapKind::Tanh => x.tanh(),
        MapKind::Ln => x.ln(),
    }
}

fn map_derivative<T: Scalar>(x: T, kind: MapKind) -> T {
    match kind {
        // Subgradient 0 at the kink: hinge terms sitting exactly on the
        // margin contribute nothing.
        MapKind::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        MapKind::LeakyRelu(slope) => {
            if x > T::zero() {
                T::one()
            } else {
                T::from_f64(slope)
            }
        }
        MapKind::Elu => {
            if x > T::zero() {
                T::one()
            } else {
                x.exp()
            }
        }
        MapKind::Tanh => {
            let t = x.tanh();
            T::one() - t * t
        }
        MapKind::Ln => T::one() / x,
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let mut max = T::neg_infinity();
    for &x in row.iter() {
        if x > max {
            max = x;
        }
    }
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

fn edge_softmax_values<T: Scalar>(logits: &Mat<T>, dst: &[usize], num_nodes: usize) -> Mat<T> {
    let mut max = vec![T::neg_infinity(); num_nodes];
    for (e, &d) in dst.iter().enumerate() {
        if logits[(e, 0)] > max[d] {
            max[d] = logits[(e, 0)];
        }
    }
    let mut sum = vec![T::zero(); num_nodes];
    let mut out = Mat::zeros(logits.rows(), 1);
    for (e, &d) in dst.iter().enumerate() {
        let v = (logits[(e, 0)] - max[d]).exp();
        out[(e, 0)] = v;
        sum[d] = sum[d] + v;
    }
    for (e, &d) in dst.iter().enumerate() {
        out[(e, 0)] = out[(e, 0)] / sum[d];
    }
    out
}

fn row_norm<T: Scalar>(row: &[T]) -> T {
    let mut s = T::zero();
    for &x in row {
        s = s + x * x;
    }
    s.sqrt()
}

/// Cosine of two rows; `(0, true)` when either norm is under `eps`.
/// Clamped to [-1, 1] so rounding can never push downstream losses out of
/// their documented ranges.
fn guarded_cosine<T: Scalar>(a: &[T], b: &[T], eps: T) -> (T, bool) {
    let na = row_norm(a);
    let nb = row_norm(b);
    if na < eps || nb < eps {
        return (T::zero(), true);
    }
    let mut dot = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
    }
    let c = dot / (na * nb);
    (c.min(T::one()).max(-T::one()), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::central_diff;

    // Finite-difference check of a scalar expression built from `params`.
    fn check_grads(
        params: &[Mat<f64>],
        build: impl Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
        tol: f64,
    ) {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &ids);
        let grads = tape.backward(loss);

        for (pi, p) in params.iter().enumerate() {
            let analytic = grads.get_or_zeros(ids[pi], p.shape());
            for k in 0..p.len() {
                let fd = central_diff(
                    |x| {
                        let mut perturbed = params.to_vec();
                        perturbed[pi].data_mut()[k] = x;
                        let mut t = Tape::new();
                        let ids: Vec<NodeId> =
                            perturbed.iter().map(|p| t.leaf(p.clone())).collect();
                        let l = build(&mut t, &ids);
                        t.value(l).item()
                    },
                    p.data()[k],
                    1e-5,
                );
                let a = analytic.data()[k];
                assert!(
                    (a - fd).abs() <= tol * (1.0 + fd.abs()),
                    "param {pi} entry {k}: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
        // Small deterministic LCG; values in (-1, 1).
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            data.push(((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0);
        }
        Mat::from_vec(rows, cols, data)
    }

    #[test]
    fn dense_chain_matches_finite_differences() {
        let w = rand_mat(3, 4, 1);
        let b = rand_mat(1, 4, 2);
        let x = rand_mat(5, 3, 3);
        check_grads(
            &[w, b, x],
            |t, ids| {
                let h = t.matmul(ids[2], ids[0]);
                let h = t.add_row(h, ids[1]);
                let h = t.map(h, MapKind::Tanh);
                t.mean_all(h)
            },
            1e-6,
        );
    }

    #[test]
    fn softmax_rows_matches_finite_differences() {
        let x = rand_mat(4, 6, 7);
        check_grads(
            &[x],
            |t, ids| {
                let s = t.softmax_rows(ids[0]);
                let l = t.ln(s);
                let w = rand_mat(4, 6, 9);
                let c = t.constant(w);
                let p = t.mul(l, c);
                t.sum_all(p)
            },
            1e-6,
        );
    }

    #[test]
    fn edge_ops_match_finite_differences() {
        let edges = vec![(0, 1), (1, 0), (2, 1), (1, 2), (0, 0)];
        let dst: Vec<usize> = edges.iter().map(|&(_, d)| d).collect();
        let logits = rand_mat(5, 1, 11);
        let feats = rand_mat(3, 4, 12);
        check_grads(
            &[logits, feats],
            |t, ids| {
                let alpha = t.edge_softmax(ids[0], &dst, 3);
                let out = t.weighted_neighbor_sum(alpha, ids[1], &edges, 3);
                let sq = t.mul(out, out);
                t.sum_all(sq)
            },
            1e-6,
        );
    }

    #[test]
    fn neighbor_sum_matches_finite_differences() {
        let edges = vec![(0, 1), (1, 2), (2, 0), (2, 2)];
        let weights = vec![0.5, -1.25, 2.0, 0.75];
        let x = rand_mat(3, 3, 21);
        check_grads(
            &[x],
            |t, ids| {
                let out = t.neighbor_sum(ids[0], &edges, &weights, 3);
                let out = t.map(out, MapKind::Elu);
                t.mean_all(out)
            },
            1e-6,
        );
    }

    #[test]
    fn gather_replace_concat_match_finite_differences() {
        let x = rand_mat(4, 3, 31);
        let row = rand_mat(1, 3, 32);
        check_grads(
            &[x, row],
            |t, ids| {
                let replaced = t.replace_rows(ids[0], ids[1], &[1, 3]);
                let picked = t.gather_rows(replaced, &[0, 1, 1, 3]);
                let both = t.concat_cols(&[picked, picked]);
                let p = t.pow_scalar(both, 2.0);
                t.sum_all(p)
            },
            1e-6,
        );
    }

    #[test]
    fn row_cosine_matches_finite_differences() {
        let a = rand_mat(5, 4, 41);
        let b = rand_mat(5, 4, 42);
        check_grads(
            &[a, b],
            |t, ids| {
                let c = t.row_cosine(ids[0], ids[1], 1e-8);
                let one_minus = t.scale(c, -1.0);
                let one_minus = t.add_scalar(one_minus, 1.0);
                let powed = t.pow_scalar(one_minus, 3.0);
                t.mean_all(powed)
            },
            1e-6,
        );
    }

    #[test]
    fn row_cosine_zero_norm_guard_is_flat() {
        let mut tape = Tape::new();
        let a = tape.leaf(Mat::from_vec(2, 2, vec![0.0, 0.0, 1.0, 2.0]));
        let b = tape.leaf(Mat::from_vec(2, 2, vec![3.0, 4.0, 1.0, 2.0]));
        let c = tape.row_cosine(a, b, 1e-8);
        assert_eq!(tape.value(c)[(0, 0)], 0.0);
        assert!((tape.value(c)[(1, 0)] - 1.0f64).abs() < 1e-12);
        let s = tape.sum_all(c);
        let grads = tape.backward(s);
        let da = grads.get(a).unwrap();
        assert_eq!(da.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn detach_blocks_gradients() {
        let mut tape = Tape::new();
        let w = tape.leaf(Mat::scalar(3.0));
        let y = tape.mul(w, w);
        let d = tape.detach(y);
        let z = tape.mul(d, w);
        let grads = tape.backward(z);
        // z = detach(w^2) * w, so dz/dw = 9 (not 27).
        assert_eq!(grads.get(w).unwrap().item(), 9.0);
    }

    #[test]
    fn constants_never_get_gradients() {
        let mut tape = Tape::new();
        let c = tape.constant(Mat::scalar(5.0));
        let w = tape.leaf(Mat::scalar(2.0));
        let y = tape.mul(c, w);
        let grads = tape.backward(y);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(w).unwrap().item(), 5.0);
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(Mat::from_vec(2, 1, vec![1.0, 2.0]));
        let gathered = tape.gather_rows(x, &[0, 0, 1]);
        let s = tape.sum_all(gathered);
        let grads = tape.backward(s);
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 1.0]);
    }
}
