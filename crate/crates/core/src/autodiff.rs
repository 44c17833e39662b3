//! A small reverse-mode automatic differentiation tape over [`Matrix`] values.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse, accumulating gradients for every node that
//! depends on a gradient-tracking leaf. All arithmetic is `f64`, which keeps
//! central finite differences usable as a gradient oracle.

use crate::tensor::{sigmoid, softplus, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Hstack(Vec<Var>),
    Vstack(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    LogSumExpRows(Var),
    LogSoftmaxRows(Var),
    PickPerRow(Var, Vec<usize>),
    Transpose(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every tracked node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when the root does not depend on `var`.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Matrix> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.scalar()
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let tracked = self.tracked(&[a]);
        self.push(value, op, tracked)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let tracked = self.tracked(&[a, b]);
        self.push(value, Op::MatMul(a, b), tracked)
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        let tracked = self.tracked(&[a, b]);
        self.push(value, Op::MatMulT(a, b), tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let tracked = self.tracked(&[a, b]);
        self.push(value, Op::Add(a, b), tracked)
    }

    /// Adds the `1 x cols` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(r));
        assert_eq!(rv.rows(), 1, "add_row expects a row vector");
        assert_eq!(av.cols(), rv.cols(), "add_row column mismatch");
        let mut value = av.clone();
        for i in 0..value.rows() {
            for (x, y) in value.row_mut(i).iter_mut().zip(rv.data()) {
                *x += y;
            }
        }
        let tracked = self.tracked(&[a, r]);
        self.push(value, Op::AddRow(a, r), tracked)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let tracked = self.tracked(&[a, b]);
        self.push(value, Op::Sub(a, b), tracked)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let tracked = self.tracked(&[a, b]);
        self.push(value, Op::Mul(a, b), tracked)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y);
        let tracked = self.tracked(&[a, b]);
        self.push(value, Op::Div(a, b), tracked)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Column-wise concatenation; all parts share a row count.
    pub fn hstack(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "hstack of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let pv = self.value(*p);
                assert_eq!(pv.rows(), rows, "hstack row mismatch");
                value.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
                offset += pv.cols();
            }
        }
        let tracked = self.tracked(parts);
        self.push(value, Op::Hstack(parts.to_vec()), tracked)
    }

    /// Row-wise concatenation; all parts share a column count.
    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "vstack of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols(), cols, "vstack column mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let tracked = self.tracked(parts);
        self.push(Matrix::from_vec(rows, cols, data), Op::Vstack(parts.to_vec()), tracked)
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let av = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * av.cols());
        for &i in indices {
            data.extend_from_slice(av.row(i));
        }
        let value = Matrix::from_vec(indices.len(), av.cols(), data);
        let tracked = self.tracked(&[a]);
        self.push(value, Op::GatherRows(a, indices.to_vec()), tracked)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::from_vec(1, 1, vec![self.value(a).sum()]);
        let tracked = self.tracked(&[a]);
        self.push(value, Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let value = Matrix::from_vec(1, 1, vec![av.sum() / av.len() as f64]);
        let tracked = self.tracked(&[a]);
        self.push(value, Op::Mean(a), tracked)
    }

    /// Sums each row: `n x c -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        let value = Matrix::from_vec(av.rows(), 1, data);
        let tracked = self.tracked(&[a]);
        self.push(value, Op::SumCols(a), tracked)
    }

    /// Row-wise log-sum-exp: `n x c -> n x 1`.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows())
            .map(|r| crate::tensor::log_sum_exp(av.row(r)))
            .collect();
        let value = Matrix::from_vec(av.rows(), 1, data);
        let tracked = self.tracked(&[a]);
        self.push(value, Op::LogSumExpRows(a), tracked)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let lse = crate::tensor::log_sum_exp(value.row(r));
            for x in value.row_mut(r) {
                *x -= lse;
            }
        }
        let tracked = self.tracked(&[a]);
        self.push(value, Op::LogSoftmaxRows(a), tracked)
    }

    /// Selects `a[r, cols[r]]` for every row: `n x c -> n x 1`.
    pub fn pick_per_row(&mut self, a: Var, cols: &[usize]) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows(), cols.len(), "pick_per_row length mismatch");
        let data = cols.iter().enumerate().map(|(r, &c)| av.get(r, c)).collect();
        let value = Matrix::from_vec(cols.len(), 1, data);
        let tracked = self.tracked(&[a]);
        self.push(value, Op::PickPerRow(a, cols.to_vec()), tracked)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let tracked = self.tracked(&[a]);
        self.push(value, Op::Transpose(a), tracked)
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = Matrix::from_vec(rows, cols, self.value(a).data().to_vec());
        let tracked = self.tracked(&[a]);
        self.push(value, Op::Reshape(a), tracked)
    }

    /// Reverse sweep from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.value(root).shape(),
            (1, 1),
            "backward root must be a scalar"
        );
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn accumulate<'g>(&self, grads: &'g mut [Option<Matrix>], v: Var) -> Option<&'g mut Matrix> {
        if !self.nodes[v.0].tracked {
            return None;
        }
        let (r, c) = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c)))
    }

    fn backprop_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.add_assign(&g.matmul_t(bv));
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    gb.add_assign(&av.t_matmul(g));
                }
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.add_assign(&g.matmul(bv));
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    gb.add_assign(&g.t_matmul(av));
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    gb.add_assign(g);
                }
            }
            Op::AddRow(a, r) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gr) = self.accumulate(grads, *r) {
                    for i in 0..g.rows() {
                        for (x, y) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    gb.scaled_add_assign(-1.0, g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.add_assign(&g.zip_map(bv, |x, y| x * y));
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    gb.add_assign(&g.zip_map(av, |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.add_assign(&g.zip_map(bv, |x, y| x / y));
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    // d(a/b)/db = -(a/b)/b
                    let ratio = out.zip_map(bv, |q, y| -q / y);
                    gb.add_assign(&g.zip_map(&ratio, |x, y| x * y));
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.scaled_add_assign(*s, g);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    for (x, y) in ga.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
            Op::Tanh(a) => self.elementwise(grads, *a, g, |i| 1.0 - out.data()[i].powi(2)),
            Op::Sigmoid(a) => {
                self.elementwise(grads, *a, g, |i| out.data()[i] * (1.0 - out.data()[i]))
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                self.elementwise(grads, *a, g, |i| sigmoid(x.data()[i]))
            }
            Op::Exp(a) => self.elementwise(grads, *a, g, |i| out.data()[i]),
            Op::Log(a) => {
                let x = self.value(*a);
                self.elementwise(grads, *a, g, |i| 1.0 / x.data()[i])
            }
            Op::Square(a) => {
                let x = self.value(*a);
                self.elementwise(grads, *a, g, |i| 2.0 * x.data()[i])
            }
            Op::Hstack(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = self.value(*p).cols();
                    if let Some(gp) = self.accumulate(grads, *p) {
                        for r in 0..g.rows() {
                            for (x, y) in gp
                                .row_mut(r)
                                .iter_mut()
                                .zip(&g.row(r)[offset..offset + cols])
                            {
                                *x += y;
                            }
                        }
                    }
                    offset += cols;
                }
            }
            Op::Vstack(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    if let Some(gp) = self.accumulate(grads, *p) {
                        let cols = g.cols();
                        let slice = &g.data()[offset * cols..(offset + rows) * cols];
                        for (x, y) in gp.data_mut().iter_mut().zip(slice) {
                            *x += y;
                        }
                    }
                    offset += rows;
                }
            }
            Op::GatherRows(a, indices) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    for (r, &src) in indices.iter().enumerate() {
                        for (x, y) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let s = g.scalar();
                if let Some(ga) = self.accumulate(grads, *a) {
                    for x in ga.data_mut() {
                        *x += s;
                    }
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let s = g.scalar() / n;
                if let Some(ga) = self.accumulate(grads, *a) {
                    for x in ga.data_mut() {
                        *x += s;
                    }
                }
            }
            Op::SumCols(a) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    for r in 0..ga.rows() {
                        let s = g.get(r, 0);
                        for x in ga.row_mut(r) {
                            *x += s;
                        }
                    }
                }
            }
            Op::LogSumExpRows(a) => {
                let x = self.value(*a);
                if let Some(ga) = self.accumulate(grads, *a) {
                    for r in 0..x.rows() {
                        let (gr, lse) = (g.get(r, 0), out.get(r, 0));
                        for (dst, &xv) in ga.row_mut(r).iter_mut().zip(x.row(r)) {
                            *dst += gr * (xv - lse).exp();
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    for r in 0..out.rows() {
                        let gsum: f64 = g.row(r).iter().sum();
                        for ((dst, &y), &gv) in
                            ga.row_mut(r).iter_mut().zip(out.row(r)).zip(g.row(r))
                        {
                            *dst += gv - y.exp() * gsum;
                        }
                    }
                }
            }
            Op::PickPerRow(a, cols) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    for (r, &c) in cols.iter().enumerate() {
                        let v = ga.get(r, c) + g.get(r, 0);
                        ga.set(r, c, v);
                    }
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.add_assign(&g.transpose());
                }
            }
        }
    }

    fn elementwise(
        &self,
        grads: &mut [Option<Matrix>],
        a: Var,
        g: &Matrix,
        local: impl Fn(usize) -> f64,
    ) {
        if let Some(ga) = self.accumulate(grads, a) {
            for (i, (dst, gv)) in ga.data_mut().iter_mut().zip(g.data()).enumerate() {
                *dst += gv * local(i);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central differences of `f` at `x`, the oracle for every op below.
    fn numeric_grad(x: &Matrix, f: &dyn Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-6;
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            out.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn check(shape: (usize, usize), build: impl Fn(&mut Tape, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Matrix::uniform(shape.0, shape.1, 0.9, &mut rng).map(|v| v + 1.2);
        let eval = |m: &Matrix| {
            let mut t = Tape::new();
            let v = t.constant(m.clone());
            let out = build(&mut t, v);
            t.scalar(out)
        };
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let root = build(&mut tape, v);
        let grads = tape.backward(root);
        let analytic = grads.get(v).expect("gradient").clone();
        let numeric = numeric_grad(&x, &eval);
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            assert!(
                (a - n).abs() <= 1e-6 * (1.0 + n.abs()),
                "analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn elementwise_ops() {
        check((2, 3), |t, x| {
            let a = t.tanh(x);
            let b = t.sigmoid(x);
            let c = t.softplus(x);
            let d = t.mul(a, b);
            let e = t.div(d, c);
            let f = t.ln(x);
            let g = t.exp(e);
            let h = t.square(f);
            let s = t.sub(g, h);
            let k = t.scale(s, 0.3);
            let k = t.add_scalar(k, 2.0);
            t.sum(k)
        });
    }

    #[test]
    fn matrix_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Matrix::uniform(3, 4, 1.0, &mut rng);
        let bias = Matrix::uniform(1, 4, 1.0, &mut rng);
        check((2, 3), move |t, x| {
            let wv = t.constant(w.clone());
            let bv = t.constant(bias.clone());
            let y = t.matmul(x, wv);
            let y = t.add_row(y, bv);
            let z = t.matmul_t(y, y);
            let zt = t.transpose(z);
            let z = t.add(z, zt);
            let ls = t.log_softmax_rows(z);
            let p = t.pick_per_row(ls, &[1, 0]);
            let lse = t.log_sum_exp_rows(y);
            let both = t.vstack(&[p, lse]);
            t.mean(both)
        });
    }

    #[test]
    fn structural_ops() {
        check((3, 2), |t, x| {
            let g = t.gather_rows(x, &[2, 0, 2]);
            let h = t.hstack(&[g, g, x]);
            let r = t.reshape(h, 2, 9);
            let s = t.sum_cols(r);
            let sq = t.square(s);
            t.sum(sq)
        });
    }

    #[test]
    fn untracked_inputs_get_no_gradient() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::filled(1, 1, 2.0));
        let b = t.param(Matrix::filled(1, 1, 3.0));
        let c = t.mul(a, b);
        let grads = t.backward(c);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().scalar(), 2.0);
    }
}
