//! Reverse-mode automatic differentiation over small dense f64 matrices.
//!
//! Forward evaluation is eager: each operation computes its value when
//! recorded, so inference can use the same code path as training and simply
//! skip `backward`. Vectors are represented as 1-by-d or m-by-1 matrices.

use ndarray::{Array2, Axis};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Broadcast-add a 1-by-d row vector to every row.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    MatMul(NodeId, NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Sqrt(NodeId),
    Recip(NodeId),
    Clamp(NodeId, f64, f64),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    SumAll(NodeId),
    SumRows(NodeId),
    GatherRows(NodeId, Vec<usize>),
    /// Row r of the input is added into row `idx[r]` of a zeroed output.
    ScatterAddRows(NodeId, Vec<usize>),
    /// Element-wise max over each inclusive row range; argmax rows recorded
    /// at forward time for the backward pass.
    PoolMax {
        src: NodeId,
        argmax: Vec<usize>,
    },
    PoolMean(NodeId, Vec<(usize, usize)>),
    ConcatCols(NodeId, NodeId),
    /// Rows shifted down by `offset` (negative shifts up); vacated rows zero.
    ShiftRows(NodeId, isize),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `id`, zero-filled if the node
    /// does not influence the root.
    pub fn wrt(&self, tape: &Tape, id: NodeId) -> Array2<f64> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(tape.value(id).raw_dim()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar() on non-1x1 node");
        v[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> NodeId {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.binary_same_shape(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.binary_same_shape(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.binary_same_shape(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    fn binary_same_shape(
        &self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
    ) -> Array2<f64> {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "shape mismatch in elementwise op");
        f(va, vb)
    }

    pub fn add_row(&mut self, m: NodeId, row: NodeId) -> NodeId {
        let (vm, vr) = (self.value(m), self.value(row));
        assert_eq!(vr.nrows(), 1, "add_row expects a 1-by-d row vector");
        assert_eq!(vm.ncols(), vr.ncols(), "add_row width mismatch");
        let v = vm + &vr.broadcast(vm.raw_dim()).unwrap();
        self.push(v, Op::AddRow(m, row))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) + c;
        self.push(v, Op::AddConst(a))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul inner dimension mismatch");
        let v = va.dot(vb);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::recip);
        self.push(v, Op::Recip(a))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let sums = self.value(a).sum_axis(Axis(1));
        let m = sums.len();
        let v = sums.into_shape_with_order((m, 1)).unwrap();
        self.push(v, Op::SumRows(a))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> NodeId {
        let va = self.value(a);
        for &i in &idx {
            assert!(i < va.nrows(), "gather index {i} out of bounds");
        }
        let v = va.select(Axis(0), &idx);
        self.push(v, Op::GatherRows(a, idx))
    }

    /// `out[idx[r]] += a[r]` into a fresh `out_rows`-by-d matrix.
    pub fn scatter_add_rows(&mut self, a: NodeId, idx: Vec<usize>, out_rows: usize) -> NodeId {
        let va = self.value(a);
        assert_eq!(va.nrows(), idx.len(), "scatter index count mismatch");
        let mut v = Array2::zeros((out_rows, va.ncols()));
        for (r, &target) in idx.iter().enumerate() {
            assert!(target < out_rows, "scatter index {target} out of bounds");
            let row = va.row(r);
            let mut out_row = v.row_mut(target);
            out_row += &row;
        }
        self.push(v, Op::ScatterAddRows(a, idx))
    }

    /// Element-wise max over each inclusive row range of `a`.
    pub fn pool_max(&mut self, a: NodeId, ranges: Vec<(usize, usize)>) -> NodeId {
        let va = self.value(a);
        let d = va.ncols();
        let mut v = Array2::zeros((ranges.len(), d));
        let mut argmax = vec![0usize; ranges.len() * d];
        for (out_r, &(start, end)) in ranges.iter().enumerate() {
            assert!(start <= end && end < va.nrows(), "bad pool range");
            for c in 0..d {
                let mut best_row = start;
                let mut best = va[[start, c]];
                for r in start + 1..=end {
                    if va[[r, c]] > best {
                        best = va[[r, c]];
                        best_row = r;
                    }
                }
                v[[out_r, c]] = best;
                argmax[out_r * d + c] = best_row;
            }
        }
        self.push(v, Op::PoolMax { src: a, argmax })
    }

    /// Element-wise mean over each inclusive row range of `a`.
    pub fn pool_mean(&mut self, a: NodeId, ranges: Vec<(usize, usize)>) -> NodeId {
        let va = self.value(a);
        let mut v = Array2::zeros((ranges.len(), va.ncols()));
        for (out_r, &(start, end)) in ranges.iter().enumerate() {
            assert!(start <= end && end < va.nrows(), "bad pool range");
            let len = (end - start + 1) as f64;
            let mut acc = v.row_mut(out_r);
            for r in start..=end {
                acc += &va.row(r);
            }
            acc /= len;
        }
        self.push(v, Op::PoolMean(a, ranges))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.nrows(), vb.nrows(), "concat_cols row mismatch");
        let v = ndarray::concatenate(Axis(1), &[va.view(), vb.view()]).unwrap();
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn shift_rows(&mut self, a: NodeId, offset: isize) -> NodeId {
        let va = self.value(a);
        let (m, d) = va.dim();
        let mut v = Array2::zeros((m, d));
        for r in 0..m as isize {
            let src = r - offset;
            if src >= 0 && (src as usize) < m {
                v.row_mut(r as usize).assign(&va.row(src as usize));
            }
        }
        self.push(v, Op::ShiftRows(a, offset))
    }

    /// Reverse sweep from a scalar root. Returns per-node gradients.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be 1x1");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=root.0).rev() {
            // Inputs always precede their consumers, so taking the slot and
            // restoring it after propagation never aliases an input's slot.
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, gy.clone());
                    acc(&mut grads, *b, gy.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, gy.clone());
                    acc(&mut grads, *b, -&gy);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &gy * self.value(*b));
                    acc(&mut grads, *b, &gy * self.value(*a));
                }
                Op::AddRow(m, row) => {
                    acc(&mut grads, *m, gy.clone());
                    let col_sums = gy.sum_axis(Axis(0));
                    let d = col_sums.len();
                    acc(
                        &mut grads,
                        *row,
                        col_sums.into_shape_with_order((1, d)).unwrap(),
                    );
                }
                Op::Scale(a, c) => acc(&mut grads, *a, &gy * *c),
                Op::AddConst(a) => acc(&mut grads, *a, gy.clone()),
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, gy.dot(&self.value(*b).t()));
                    acc(&mut grads, *b, self.value(*a).t().dot(&gy));
                }
                Op::Exp(a) => acc(&mut grads, *a, &gy * &node.value),
                Op::Ln(a) => acc(&mut grads, *a, &gy / self.value(*a)),
                Op::Tanh(a) => {
                    acc(&mut grads, *a, &gy * &node.value.mapv(|y| 1.0 - y * y));
                }
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, &gy * &mask);
                }
                Op::Sqrt(a) => {
                    // Subgradient 0 at the origin keeps degenerate distances finite.
                    let dydx = node
                        .value
                        .mapv(|y| if y > 1e-150 { 0.5 / y } else { 0.0 });
                    acc(&mut grads, *a, &gy * &dydx);
                }
                Op::Recip(a) => {
                    acc(&mut grads, *a, -&(&gy * &node.value.mapv(|y| y * y)));
                }
                Op::Clamp(a, lo, hi) => {
                    let mask = self
                        .value(*a)
                        .mapv(|x| if x > *lo && x < *hi { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, &gy * &mask);
                }
                Op::SoftmaxRows(a) => {
                    // dx = y * (gy - sum(gy * y) per row)
                    let y = &node.value;
                    let mut gx = &gy * y;
                    for (mut gx_row, y_row) in gx.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = gx_row.sum();
                        gx_row.scaled_add(-dot, &y_row);
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::LogSoftmaxRows(a) => {
                    // dx = gy - softmax(x) * rowsum(gy); softmax = exp(output)
                    let p = node.value.mapv(f64::exp);
                    let mut gx = gy.clone();
                    for (mut gx_row, p_row) in gx.rows_mut().into_iter().zip(p.rows()) {
                        let s: f64 = gx_row.sum();
                        gx_row.scaled_add(-s, &p_row);
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::SumAll(a) => {
                    let shape = self.value(*a).raw_dim();
                    acc(&mut grads, *a, Array2::from_elem(shape, gy[[0, 0]]));
                }
                Op::SumRows(a) => {
                    let va = self.value(*a);
                    let mut gx = Array2::zeros(va.raw_dim());
                    for (r, mut row) in gx.rows_mut().into_iter().enumerate() {
                        row.fill(gy[[r, 0]]);
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::GatherRows(a, idx) => {
                    let mut gx = Array2::zeros(self.value(*a).raw_dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut row = gx.row_mut(src);
                        row += &gy.row(r);
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::ScatterAddRows(a, idx) => {
                    let mut gx = Array2::zeros(self.value(*a).raw_dim());
                    for (r, &target) in idx.iter().enumerate() {
                        gx.row_mut(r).assign(&gy.row(target));
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::PoolMax { src, argmax } => {
                    let d = node.value.ncols();
                    let mut gx = Array2::zeros(self.value(*src).raw_dim());
                    for r in 0..node.value.nrows() {
                        for c in 0..d {
                            gx[[argmax[r * d + c], c]] += gy[[r, c]];
                        }
                    }
                    acc(&mut grads, *src, gx);
                }
                Op::PoolMean(a, ranges) => {
                    let mut gx = Array2::zeros(self.value(*a).raw_dim());
                    for (out_r, &(start, end)) in ranges.iter().enumerate() {
                        let w = 1.0 / (end - start + 1) as f64;
                        for r in start..=end {
                            let mut row = gx.row_mut(r);
                            row.scaled_add(w, &gy.row(out_r));
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).ncols();
                    acc(&mut grads, *a, gy.slice(ndarray::s![.., ..ca]).to_owned());
                    acc(&mut grads, *b, gy.slice(ndarray::s![.., ca..]).to_owned());
                }
                Op::ShiftRows(a, offset) => {
                    let va = self.value(*a);
                    let m = va.nrows() as isize;
                    let mut gx = Array2::zeros(va.raw_dim());
                    for r in 0..m {
                        let src = r - offset;
                        if src >= 0 && src < m {
                            gx.row_mut(src as usize).assign(&gy.row(r as usize));
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
            }
            grads[i] = Some(gy);
        }
        Gradients { grads }
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_rel_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.5..1.5))
    }

    /// Finite-difference check of `build` (a scalar function of one matrix
    /// input recorded on the tape) against the tape's backward pass.
    fn check_op(
        name: &str,
        input: &Array2<f64>,
        build: impl Fn(&mut Tape, NodeId) -> NodeId,
    ) {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let out = build(&mut tape, x);
        let root = tape.sum_all(out);
        let grads = tape.backward(root);
        let analytic = grads.wrt(&tape, x);

        let numeric = central_difference(input, 1e-5, |perturbed| {
            let mut t = Tape::new();
            let x = t.leaf(perturbed.clone());
            let out = build(&mut t, x);
            let root = t.sum_all(out);
            t.scalar(root)
        });

        let err = max_rel_error(&analytic, &numeric);
        assert!(err <= 1e-6, "{name}: max relative error {err}");
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 4, 3);
        let b = random_matrix(&mut rng, 4, 3);

        check_op("add", &a, |t, x| {
            let c = t.leaf(b.clone());
            t.add(x, c)
        });
        check_op("sub", &a, |t, x| {
            let c = t.leaf(b.clone());
            t.sub(c, x)
        });
        check_op("mul", &a, |t, x| {
            let c = t.leaf(b.clone());
            t.mul(x, c)
        });
        check_op("scale", &a, |t, x| t.scale(x, -2.5));
        check_op("add_const", &a, |t, x| t.add_const(x, 0.7));
        check_op("exp", &a, |t, x| t.exp(x));
        check_op("tanh", &a, |t, x| t.tanh(x));
        check_op("recip", &a.mapv(|x| x + 3.0), |t, x| t.recip(x));
        check_op("ln", &a.mapv(|x| x.abs() + 0.5), |t, x| t.ln(x));
        check_op("sqrt", &a.mapv(|x| x.abs() + 0.5), |t, x| t.sqrt(x));
        // Keep values away from the clamp kinks and the relu kink.
        check_op("clamp", &a, |t, x| t.clamp(x, -10.0, 10.0));
        check_op("relu", &a.mapv(|x| x + 5.0), |t, x| t.relu(x));
    }

    #[test]
    fn matmul_and_row_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_matrix(&mut rng, 4, 3);
        let w = random_matrix(&mut rng, 3, 5);
        let row = random_matrix(&mut rng, 1, 3);

        check_op("matmul_lhs", &a, |t, x| {
            let wn = t.leaf(w.clone());
            t.matmul(x, wn)
        });
        check_op("matmul_rhs", &w, |t, x| {
            let an = t.leaf(a.clone());
            t.matmul(an, x)
        });
        check_op("add_row_mat", &a, |t, x| {
            let r = t.leaf(row.clone());
            t.add_row(x, r)
        });
        check_op("add_row_vec", &row, |t, x| {
            let m = t.leaf(a.clone());
            t.add_row(m, x)
        });
    }

    #[test]
    fn softmax_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_matrix(&mut rng, 5, 4);
        // Weight the outputs so the check is not fooled by row-sum invariants.
        let w = random_matrix(&mut rng, 5, 4);

        check_op("softmax_rows", &a, |t, x| {
            let s = t.softmax_rows(x);
            let wn = t.leaf(w.clone());
            t.mul(s, wn)
        });
        check_op("log_softmax_rows", &a, |t, x| {
            let s = t.log_softmax_rows(x);
            let wn = t.leaf(w.clone());
            t.mul(s, wn)
        });
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = random_matrix(&mut rng, 6, 3);
        let b = random_matrix(&mut rng, 6, 2);
        let ranges = vec![(0, 2), (1, 4), (5, 5)];
        let idx = vec![4, 0, 0, 2, 5];

        check_op("sum_rows", &a, |t, x| {
            let s = t.sum_rows(x);
            t.mul(s, s) // square to break linearity
        });
        check_op("gather_rows", &a, |t, x| {
            let g = t.gather_rows(x, idx.clone());
            t.mul(g, g)
        });
        check_op("scatter_add_rows", &a.slice(ndarray::s![..5, ..]).to_owned(), |t, x| {
            let s = t.scatter_add_rows(x, idx.clone(), 7);
            t.mul(s, s)
        });
        check_op("pool_mean", &a, |t, x| {
            let p = t.pool_mean(x, ranges.clone());
            t.mul(p, p)
        });
        check_op("pool_max", &a, |t, x| {
            let p = t.pool_max(x, ranges.clone());
            t.mul(p, p)
        });
        check_op("concat_cols_lhs", &a, |t, x| {
            let bn = t.leaf(b.clone());
            let c = t.concat_cols(x, bn);
            t.mul(c, c)
        });
        check_op("concat_cols_rhs", &b, |t, x| {
            let an = t.leaf(a.clone());
            let c = t.concat_cols(an, x);
            t.mul(c, c)
        });
        check_op("shift_rows_down", &a, |t, x| {
            let s = t.shift_rows(x, 1);
            t.mul(s, s)
        });
        check_op("shift_rows_up", &a, |t, x| {
            let s = t.shift_rows(x, -2);
            t.mul(s, s)
        });
    }

    #[test]
    fn gradient_accumulates_across_multiple_uses() {
        // f(x) = sum(x*x + x) -> df/dx = 2x + 1
        let x_val = Array2::from_shape_vec((2, 2), vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(x_val.clone());
        let sq = tape.mul(x, x);
        let s = tape.add(sq, x);
        let root = tape.sum_all(s);
        let grads = tape.backward(root);
        let expected = x_val.mapv(|v| 2.0 * v + 1.0);
        let got = grads.wrt(&tape, x);
        assert!(max_rel_error(&got, &expected) < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a = random_matrix(&mut rng, 7, 5);
        let mut tape = Tape::new();
        let x = tape.leaf(a);
        let s = tape.softmax_rows(x);
        for row in tape.value(s).rows() {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::from_elem((2, 2), 1.0));
        let y = tape.leaf(Array2::from_elem((1, 1), 3.0));
        let root = tape.sum_all(y);
        let grads = tape.backward(root);
        let zero: Array2<f64> = Array2::zeros((2, 2));
        assert_eq!(grads.wrt(&tape, x), zero);
    }
}
