//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only record of primitive operations. Because a
//! node can only reference nodes created before it, insertion order is a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//!
//! Shape errors are contract violations and panic with the offending shapes.

use rand::Rng;

use super::tensor::Tensor;

/// Clamp applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    SumAll(Var),
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Transpose(Var),
    Dropout(Var, Vec<f64>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The differentiation graph of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
///
/// A node that no path from the loss reaches has no entry.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(
            x.shape(),
            y.shape(),
            "add shape mismatch: {:?} + {:?}",
            x.shape(),
            y.shape()
        );
        let mut value = x.clone();
        value.add_assign(y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds a `1 × c` row to every row of an `r × c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, b) = (self.value(a), self.value(row));
        assert!(
            b.rows() == 1 && b.cols() == x.cols(),
            "add_row shape mismatch: {:?} + row {:?}",
            x.shape(),
            b.shape()
        );
        let mut value = x.clone();
        let cols = x.cols();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += b.data()[i % cols];
        }
        let rg = self.rg(&[a, row]);
        self.push(value, Op::AddRow(a, row), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(
            x.shape(),
            y.shape(),
            "mul shape mismatch: {:?} * {:?}",
            x.shape(),
            y.shape()
        );
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.rows(), x.cols(), data);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v + c);
        let rg = self.rg(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(
                t.cols(),
                cols,
                "concat_rows shape mismatch: {:?} vs {cols} columns",
                t.shape()
            );
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = self.rg(parts);
        self.push(Tensor::new(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(
                t.rows(),
                rows,
                "concat_cols shape mismatch: {:?} vs {rows} rows",
                t.shape()
            );
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = self.rg(parts);
        self.push(Tensor::new(rows, cols, data), Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(
            start < end && end <= x.rows(),
            "slice_rows {start}..{end} out of range for {:?}",
            x.shape()
        );
        let cols = x.cols();
        let value = Tensor::new(end - start, cols, x.data()[start * cols..end * cols].to_vec());
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceRows(a, start), rg)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(
            start < end && end <= x.cols(),
            "slice_cols {start}..{end} out of range for {:?}",
            x.shape()
        );
        let mut data = Vec::with_capacity(x.rows() * (end - start));
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row_slice(r)[start..end]);
        }
        let value = Tensor::new(x.rows(), end - start, data);
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    /// Stacks the listed rows (repeats allowed); the embedding lookup.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let x = self.value(a);
        assert!(!indices.is_empty(), "gather_rows with no indices");
        let mut data = Vec::with_capacity(indices.len() * x.cols());
        for &i in indices {
            assert!(
                i < x.rows(),
                "gather_rows index {i} out of range for {:?}",
                x.shape()
            );
            data.extend_from_slice(x.row_slice(i));
        }
        let value = Tensor::new(indices.len(), x.cols(), data);
        let rg = self.rg(&[a]);
        self.push(value, Op::GatherRows(a, indices.to_vec()), rg)
    }

    /// Mean over the row axis: `r × c → 1 × c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.rows() as f64;
        let mut out = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (o, v) in out.iter_mut().zip(x.row_slice(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n);
        let rg = self.rg(&[a]);
        self.push(Tensor::row(out), Op::MeanRows(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// Numerically stable `log Σ exp` of each row: `r × c → r × 1`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = (0..x.rows()).map(|r| logsumexp(x.row_slice(r))).collect::<Vec<_>>();
        let value = Tensor::new(x.rows(), 1, out);
        let rg = self.rg(&[a]);
        self.push(value, Op::LogSumExpRows(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(value, Op::Exp(a), rg)
    }

    /// `ln(max(x, LOG_EPS))`; the gradient is zero inside the clamp.
    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(LOG_EPS).ln());
        let rg = self.rg(&[a]);
        self.push(value, Op::Log(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Inverted dropout: entries are zeroed with probability `p` and the
    /// survivors scaled by `1 / (1 - p)`. `p == 0` is the identity and draws
    /// nothing from `rng`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout rate {p} outside [0, 1)");
        if p == 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let x = self.value(a);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(x.rows(), x.cols(), data);
        let rg = self.rg(&[a]);
        self.push(value, Op::Dropout(a, mask), rg)
    }

    /// Reverse sweep from a `1 × 1` loss.
    pub fn backward(&self, loss: Var) -> Gradients {
        let shape = self.shape(loss);
        assert_eq!(shape, [1, 1], "backward needs a scalar loss, got shape {shape:?}");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, dy.matmul_t(bv));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, av.t_matmul(dy));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, dy.clone());
                if self.requires_grad(*row) {
                    let cols = dy.cols();
                    let mut s = vec![0.0; cols];
                    for r in 0..dy.rows() {
                        for (o, v) in s.iter_mut().zip(dy.row_slice(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::row(s));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, zip(dy, bv, |g, q| g * q));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, zip(dy, av, |g, p| g * p));
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, dy.map(|g| g * f)),
            Op::AddScalar(a) => self.accumulate(grads, *a, dy.clone()),
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.requires_grad(p) {
                        let cols = dy.cols();
                        let g = dy.data()[start * cols..(start + rows) * cols].to_vec();
                        self.accumulate(grads, p, Tensor::new(rows, cols, g));
                    }
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut g = Vec::with_capacity(dy.rows() * cols);
                        for r in 0..dy.rows() {
                            g.extend_from_slice(&dy.row_slice(r)[start..start + cols]);
                        }
                        self.accumulate(grads, p, Tensor::new(dy.rows(), cols, g));
                    }
                    start += cols;
                }
            }
            Op::SliceRows(a, start) => {
                let x = self.value(*a);
                let mut g = Tensor::zeros(x.rows(), x.cols());
                let cols = x.cols();
                g.data_mut()[start * cols..start * cols + dy.len()].copy_from_slice(dy.data());
                self.accumulate(grads, *a, g);
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut g = Tensor::zeros(x.rows(), x.cols());
                for r in 0..dy.rows() {
                    for (c, v) in dy.row_slice(r).iter().enumerate() {
                        g.set(r, start + c, *v);
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::GatherRows(a, indices) => {
                let x = self.value(*a);
                let mut g = Tensor::zeros(x.rows(), x.cols());
                let cols = x.cols();
                for (k, &i) in indices.iter().enumerate() {
                    let src = dy.row_slice(k);
                    let dst = &mut g.data_mut()[i * cols..(i + 1) * cols];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::MeanRows(a) => {
                let x = self.value(*a);
                let n = x.rows() as f64;
                let mut g = Vec::with_capacity(x.len());
                for _ in 0..x.rows() {
                    g.extend(dy.data().iter().map(|v| v / n));
                }
                self.accumulate(grads, *a, Tensor::new(x.rows(), x.cols(), g));
            }
            Op::SumAll(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, Tensor::filled(x.rows(), x.cols(), dy.item()));
            }
            Op::SoftmaxRows(a) => {
                let mut g = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), dy.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for c in 0..y.cols() {
                        g.set(r, c, yr[c] * (gr[c] - dot));
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::LogSumExpRows(a) => {
                let x = self.value(*a);
                let mut g = softmax_rows(x);
                for r in 0..g.rows() {
                    let s = dy.get(r, 0);
                    for c in 0..g.cols() {
                        g.set(r, c, g.get(r, c) * s);
                    }
                }
                self.accumulate(grads, *a, g);
            }
            Op::Sigmoid(a) => self.accumulate(grads, *a, zip(dy, y, |g, s| g * s * (1.0 - s))),
            Op::Tanh(a) => self.accumulate(grads, *a, zip(dy, y, |g, t| g * (1.0 - t * t))),
            Op::Relu(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip(dy, x, |g, v| if v > 0.0 { g } else { 0.0 }));
            }
            Op::Exp(a) => self.accumulate(grads, *a, zip(dy, y, |g, e| g * e)),
            Op::Log(a) => {
                let x = self.value(*a);
                self.accumulate(
                    grads,
                    *a,
                    zip(dy, x, |g, v| if v > LOG_EPS { g / v } else { 0.0 }),
                );
            }
            Op::Transpose(a) => self.accumulate(grads, *a, dy.transpose()),
            Op::Dropout(a, mask) => {
                let data = dy.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *a, Tensor::new(dy.rows(), dy.cols(), data));
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::new(a.rows(), a.cols(), data)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row_slice(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (c, e) in exps.iter().enumerate() {
            out.set(r, c, e / z);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of `f` at `x`.
    fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-5;
        let mut g = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn max_rel_err(a: &Tensor, n: &Tensor) -> f64 {
        a.data()
            .iter()
            .zip(n.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    /// Reduces the op output to a scalar through a fixed random projection so
    /// every output entry contributes to the checked gradient.
    fn check_unary(name: &str, build: &dyn Fn(&mut Graph, Var) -> Var, rows: usize, cols: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = random(&mut rng, rows, cols);
            let probe_shape = {
                let mut g = Graph::new();
                let v = g.constant(x.clone());
                let out = build(&mut g, v);
                g.shape(out)
            };
            let w = random(&mut rng, probe_shape[0], probe_shape[1]);
            let f = |t: &Tensor| {
                let mut g = Graph::new();
                let v = g.constant(t.clone());
                let out = build(&mut g, v);
                g.value(out).data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut g = Graph::new();
            let v = g.param(x.clone());
            let out = build(&mut g, v);
            let wv = g.constant(w.clone());
            let prod = g.mul(out, wv);
            let loss = g.sum_all(prod);
            let grads = g.backward(loss);
            let analytic = grads.get(v).cloned().unwrap_or(Tensor::zeros(rows, cols));
            worst = worst.max(max_rel_err(&analytic, &numeric_grad(&x, &f)));
        }
        assert!(worst < 1e-6, "{name}: max relative error {worst:e}");
    }

    #[test]
    fn unary_primitives_match_finite_differences() {
        check_unary("softmax", &|g, v| g.softmax_rows(v), 3, 4);
        check_unary("logsumexp", &|g, v| g.logsumexp_rows(v), 3, 4);
        check_unary("sigmoid", &|g, v| g.sigmoid(v), 2, 3);
        check_unary("tanh", &|g, v| g.tanh(v), 2, 3);
        check_unary("relu", &|g, v| g.relu(v), 2, 3);
        check_unary("exp", &|g, v| g.exp(v), 2, 3);
        check_unary("log", &|g, v| { let e = g.exp(v); g.log(e) }, 2, 3);
        check_unary("transpose", &|g, v| g.transpose(v), 2, 3);
        check_unary("scale", &|g, v| g.scale(v, -2.5), 2, 3);
        check_unary("add_scalar", &|g, v| g.add_scalar(v, 0.3), 2, 3);
        check_unary("mean_rows", &|g, v| g.mean_rows(v), 4, 3);
        check_unary("sum_all", &|g, v| g.sum_all(v), 4, 3);
        check_unary("slice_rows", &|g, v| g.slice_rows(v, 1, 3), 4, 3);
        check_unary("slice_cols", &|g, v| g.slice_cols(v, 1, 2), 4, 3);
        check_unary("gather_rows", &|g, v| g.gather_rows(v, &[2, 0, 2]), 3, 2);
        check_unary("self_mul", &|g, v| g.mul(v, v), 2, 3);
        check_unary("concat_rows", &|g, v| g.concat_rows(&[v, v]), 2, 3);
        check_unary("concat_cols", &|g, v| g.concat_cols(&[v, v]), 2, 3);
        check_unary("self_matmul", &|g, v| { let t = g.transpose(v); g.matmul(v, t) }, 3, 2);
        check_unary("add_row", &|g, v| { let r = g.slice_rows(v, 0, 1); g.add_row(v, r) }, 3, 2);
    }

    #[test]
    fn matmul_gradient_is_upstream_times_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let w = random(&mut rng, 3, 2);
        let mut g = Graph::new();
        let (av, bv, wv) = (g.param(a.clone()), g.param(b.clone()), g.constant(w.clone()));
        let c = g.matmul(av, bv);
        let p = g.mul(c, wv);
        let loss = g.sum_all(p);
        let grads = g.backward(loss);
        // ∂loss/∂C = w, so ∂loss/∂A = w·Bᵀ.
        let expected = w.matmul(&b.transpose());
        assert!(grads.get(av).unwrap().max_abs_diff(&expected) < 1e-14);
        let f = |t: &Tensor| t.matmul(&b).data().iter().zip(w.data()).map(|(x, y)| x * y).sum();
        assert!(max_rel_err(grads.get(av).unwrap(), &numeric_grad(&a, &f)) < 1e-6);
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x);
        let grads = g.backward(y);
        assert_eq!(g.value(y).item(), 9.0);
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_probs_minus_onehot() {
        let logits = Tensor::row(vec![0.3, -1.2, 0.8, 0.1]);
        let target = 2;
        let mut g = Graph::new();
        let x = g.param(logits.clone());
        let p = g.softmax_rows(x);
        let lp = g.log(p);
        let pick = g.slice_cols(lp, target, target + 1);
        let loss = g.scale(pick, -1.0);
        let grads = g.backward(loss);
        let probs = softmax_rows(&logits);
        let mut expected = probs.clone();
        expected.data_mut()[target] -= 1.0;
        assert!(grads.get(x).unwrap().max_abs_diff(&expected) < 1e-12);
        let f = |t: &Tensor| -softmax_rows(t).data()[target].ln();
        assert!(max_rel_err(&expected, &numeric_grad(&logits, &f)) < 1e-6);
    }

    #[test]
    fn softmax_symmetry_and_identity_matmul() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::row(vec![0.0, 0.0]));
        let s = g.softmax_rows(z);
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
        let x = Tensor::from_rows(&[vec![1.5, -2.0], vec![0.25, 4.0]]);
        assert_eq!(Tensor::identity(2).matmul(&x), x);
    }

    #[test]
    fn unreached_and_constant_nodes_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::scalar(2.0));
        let unused = g.param(Tensor::scalar(5.0));
        let c = g.constant(Tensor::scalar(4.0));
        let y = g.mul(a, c);
        let grads = g.backward(y);
        assert_eq!(grads.get(a).unwrap().item(), 4.0);
        assert!(grads.get(unused).is_none());
        assert!(grads.get(c).is_none());
    }

    #[test]
    #[should_panic(expected = "backward needs a scalar loss, got shape [1, 2]")]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let a = g.param(Tensor::row(vec![1.0, 2.0]));
        g.backward(a);
    }

    #[test]
    #[should_panic(expected = "add shape mismatch: [1, 2] + [2, 1]")]
    fn shape_mismatch_names_shapes() {
        let mut g = Graph::new();
        let a = g.param(Tensor::row(vec![1.0, 2.0]));
        let b = g.param(Tensor::new(2, 1, vec![1.0, 2.0]));
        g.add(a, b);
    }

    #[test]
    fn dropout_is_inverted_and_seeded() {
        let x = Tensor::filled(10, 10, 1.0);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::new();
            let v = g.param(x.clone());
            let d = g.dropout(v, 0.5, &mut rng);
            g.value(d).clone()
        };
        let a = run(1);
        assert_eq!(a, run(1));
        assert!(a.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let v = g.param(x.clone());
        assert_eq!(g.dropout(v, 0.0, &mut rng), v);
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, 4, 5);
        let b = random(&mut rng, 5, 3);
        let run = || {
            let mut g = Graph::new();
            let (av, bv) = (g.param(a.clone()), g.param(b.clone()));
            let c = g.matmul(av, bv);
            let t = g.tanh(c);
            let s = g.softmax_rows(t);
            let l = g.log(s);
            let loss = g.sum_all(l);
            let grads = g.backward(loss);
            (grads.get(av).unwrap().clone(), grads.get(bv).unwrap().clone())
        };
        let (x1, y1) = run();
        let (x2, y2) = run();
        assert_eq!(x1.data(), x2.data());
        assert_eq!(y1.data(), y2.data());
    }
}
