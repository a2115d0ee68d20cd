//! Dense reverse-mode automatic differentiation over f64 matrices.
//!
//! A [`Graph`] is a tape: every op appends a node whose inputs all precede it,
//! so walking the tape backwards is a reverse topological order. Trainable
//! tensors live in a [`ParamStore`] outside the graph; a graph reads them when
//! it is built, and [`Graph::backward`] returns gradients that the caller adds
//! to the store afterwards. Graphs are rebuilt for every batch.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}, {:?})", self.rows, self.cols, self.data)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn column(data: Vec<f64>) -> Self {
        let n = data.len();
        Matrix::from_vec(n, 1, data)
    }

    pub fn scalar(x: f64) -> Self {
        Matrix::from_vec(1, 1, vec![x])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
        Matrix::from_vec(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, x: f64) {
        self.data[r * self.cols + c] = x;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar");
        self.data[0]
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }

    pub fn fill(&mut self, x: f64) {
        self.data.iter_mut().for_each(|v| *v = x);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    m: Matrix,
    v: Matrix,
    step: u64,
}

impl Parameter {
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Named trainable tensors together with their Adam state.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let (r, c) = value.shape();
        self.params.push(Parameter {
            name,
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            step: 0,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        assert_eq!(grads.per_param.len(), self.params.len(), "gradient layout");
        for (p, g) in self.params.iter_mut().zip(&grads.per_param) {
            if let Some(g) = g {
                p.grad.add_assign(g);
            }
        }
    }

    /// Overwrites the gradient of one parameter.
    pub fn set_grad(&mut self, id: ParamId, grad: Matrix) {
        assert_eq!(grad.shape(), self.params[id.0].value.shape());
        self.params[id.0].grad = grad;
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.scale(factor);
        }
    }

    /// Copies of all values, for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<Matrix> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Matrix]) {
        assert_eq!(snapshot.len(), self.params.len());
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value.clone_from(v);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter, then zeroes gradients.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) {
    for p in &mut store.params {
        p.step += 1;
        let t = p.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..p.value.data.len() {
            let g = p.grad.data[i];
            let m = cfg.beta1 * p.m.data[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * p.v.data[i] + (1.0 - cfg.beta2) * g * g;
            p.m.data[i] = m;
            p.v.data[i] = v;
            p.value.data[i] -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
        }
        p.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Gradient rule for [`Graph::custom`]: given the output gradient and the
/// input values, returns one gradient per input.
pub type BackwardFn = Box<dyn Fn(&Matrix, &[&Matrix]) -> Vec<Matrix>>;

enum Op {
    Constant,
    Param(ParamId),
    ParamRows { param: ParamId, rows: Vec<usize> },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Relu(NodeId),
    MeanRows(NodeId),
    ConcatRows(Vec<NodeId>),
    SliceRows { input: NodeId, start: usize },
    Scale(NodeId, f64),
    Reshape(NodeId),
    SoftmaxCrossEntropy { logits: NodeId, gold: usize, probs: Vec<f64> },
    SigmoidBce { logits: NodeId, targets: Vec<f64> },
    Custom { inputs: Vec<NodeId>, backward: BackwardFn },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// A define-by-run computation tape.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    // one node per parameter per graph
    param_nodes: Vec<Option<NodeId>>,
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.param_nodes[id.0] {
            return node;
        }
        let value = self.store.value(id).clone();
        let node = self.push(value, Op::Param(id));
        self.param_nodes[id.0] = Some(node);
        node
    }

    /// Selected rows of a parameter matrix, stacked. Gradients scatter back
    /// into the chosen rows only.
    pub fn param_rows(&mut self, id: ParamId, rows: &[usize]) -> NodeId {
        let src = self.store.value(id);
        let mut value = Matrix::zeros(rows.len(), src.cols());
        for (i, &r) in rows.iter().enumerate() {
            value.row_mut(i).copy_from_slice(src.row(r));
        }
        self.push(
            value,
            Op::ParamRows {
                param: id,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va, vb));
        }
        let mut value = va.clone();
        value.add_assign(vb);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// Smallest distance of any ReLU input from zero on this tape.
    pub fn relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(self.nodes[a.0].value.data.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Column-wise mean over rows: `n x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.rows() == 0 {
            return Err(Error::Shape {
                op: "mean_rows",
                left: va.shape(),
                right: (1, va.cols()),
            });
        }
        let mut value = Matrix::zeros(1, va.cols());
        for r in 0..va.rows() {
            value
                .data
                .iter_mut()
                .zip(va.row(r))
                .for_each(|(o, x)| *o += x);
        }
        value.scale(1.0 / va.rows() as f64);
        Ok(self.push(value, Op::MeanRows(a)))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().map(|&p| self.value(p)).ok_or(Error::Shape {
            op: "concat_rows",
            left: (0, 0),
            right: (0, 0),
        })?;
        let cols = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(shape_err("concat_rows", first, v));
            }
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        Ok(self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec())))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = self.value(a);
        if start + len > va.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                left: va.shape(),
                right: (start + len, va.cols()),
            });
        }
        let cols = va.cols();
        let value = Matrix::from_vec(len, cols, va.data[start * cols..(start + len) * cols].to_vec());
        Ok(self.push(value, Op::SliceRows { input: a, start }))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let mut value = self.value(a).clone();
        value.scale(factor);
        self.push(value, Op::Scale(a, factor))
    }

    /// Row-major reinterpretation with the same number of entries.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let va = self.value(a);
        if va.len() != rows * cols {
            return Err(Error::Shape {
                op: "reshape",
                left: va.shape(),
                right: (rows, cols),
            });
        }
        let value = Matrix::from_vec(rows, cols, va.data.clone());
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, items: &[NodeId]) -> Result<NodeId> {
        let mut iter = items.iter();
        let mut acc = *iter.next().ok_or(Error::Shape {
            op: "sum",
            left: (0, 0),
            right: (1, 1),
        })?;
        for &x in iter {
            acc = self.add(acc, x)?;
        }
        Ok(acc)
    }

    /// `-log softmax(logits)[gold]` for a `C x 1` column, via log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, gold: usize) -> Result<NodeId> {
        let vl = self.value(logits);
        if vl.cols() != 1 || vl.rows() < 2 || gold >= vl.rows() {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                left: vl.shape(),
                right: (gold, 1),
            });
        }
        let probs = softmax(vl.data());
        let max = vl.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + vl.data.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = (lse - vl.data[gold]).max(0.0);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                gold,
                probs,
            },
        ))
    }

    /// Summed binary cross-entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn sigmoid_bce(&mut self, logits: NodeId, targets: &[f64]) -> Result<NodeId> {
        let vl = self.value(logits);
        if vl.len() != targets.len() {
            return Err(Error::Shape {
                op: "sigmoid_bce",
                left: vl.shape(),
                right: (targets.len(), 1),
            });
        }
        // log(1 + e^x) - t x, written to stay finite for large |x|
        let loss: f64 = vl
            .data
            .iter()
            .zip(targets)
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        Ok(self.push(
            Matrix::scalar(loss),
            Op::SigmoidBce {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// An op with a caller-supplied gradient rule.
    pub fn custom(&mut self, inputs: &[NodeId], value: Matrix, backward: BackwardFn) -> NodeId {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
        )
    }

    /// Backpropagates from the scalar `loss` and returns the parameter
    /// gradients. Add them to the store with [`ParamStore::accumulate`] once
    /// the graph is dropped.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let mut grads = Gradients::new(self.store);
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: lv.shape(),
                right: (1, 1),
            });
        }
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::scalar(1.0));

        fn accumulate(adj: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
            match &mut adj[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => grads.slot(*id).add_assign(&g),
                Op::ParamRows { param, rows } => {
                    let target = grads.slot(*param);
                    for (i, &r) in rows.iter().enumerate() {
                        target
                            .row_mut(r)
                            .iter_mut()
                            .zip(g.row(i))
                            .for_each(|(t, x)| *t += x);
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    let gb = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    for (gx, &x) in ga.data.iter_mut().zip(&self.value(*a).data) {
                        if x <= 0.0 {
                            *gx = 0.0;
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::MeanRows(a) => {
                    let va = self.value(*a);
                    let n = va.rows() as f64;
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    for r in 0..va.rows() {
                        ga.row_mut(r)
                            .iter_mut()
                            .zip(g.data())
                            .for_each(|(o, x)| *o = x / n);
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.value(p).shape();
                        let part = Matrix::from_vec(r, c, g.data[offset..offset + r * c].to_vec());
                        offset += r * c;
                        accumulate(&mut adj, p, part);
                    }
                }
                Op::SliceRows { input, start } => {
                    let (r, c) = self.value(*input).shape();
                    let mut ga = Matrix::zeros(r, c);
                    ga.data[start * c..start * c + g.len()].copy_from_slice(g.data());
                    accumulate(&mut adj, *input, ga);
                }
                Op::Scale(a, factor) => {
                    let mut ga = g;
                    ga.scale(*factor);
                    accumulate(&mut adj, *a, ga);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut adj, *a, Matrix::from_vec(r, c, g.data));
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    gold,
                    probs,
                } => {
                    let upstream = g.item();
                    let mut gl = Matrix::column(probs.clone());
                    gl.data[*gold] -= 1.0;
                    gl.scale(upstream);
                    accumulate(&mut adj, *logits, gl);
                }
                Op::SigmoidBce { logits, targets } => {
                    let upstream = g.item();
                    let vl = self.value(*logits);
                    let data = vl
                        .data
                        .iter()
                        .zip(targets)
                        .map(|(&x, &t)| upstream * (sigmoid(x) - t))
                        .collect();
                    accumulate(&mut adj, *logits, Matrix::from_vec(vl.rows(), vl.cols(), data));
                }
                Op::Custom { inputs, backward } => {
                    let values: Vec<&Matrix> = inputs.iter().map(|&i| self.value(i)).collect();
                    let input_grads = backward(&g, &values);
                    for (&i, gi) in inputs.iter().zip(input_grads) {
                        accumulate(&mut adj, i, gi);
                    }
                }
            }
        }
        Ok(grads)
    }
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    shapes: Vec<(usize, usize)>,
    per_param: Vec<Option<Matrix>>,
}

impl Gradients {
    fn new(store: &ParamStore) -> Self {
        Gradients {
            shapes: store.params.iter().map(|p| p.value.shape()).collect(),
            per_param: vec![None; store.params.len()],
        }
    }

    fn slot(&mut self, id: ParamId) -> &mut Matrix {
        let (r, c) = self.shapes[id.0];
        self.per_param[id.0].get_or_insert_with(|| Matrix::zeros(r, c))
    }

    /// `None` when the parameter did not take part in the graph.
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.per_param[id.0].as_ref()
    }

    /// Entry `i` of the gradient for `id`, zero when untouched.
    pub fn entry(&self, id: ParamId, i: usize) -> f64 {
        self.get(id).map_or(0.0, |m| m.data[i])
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

/// Compares reverse-mode gradients against central differences.
///
/// `loss_fn` builds the loss graph from the given store and returns the loss
/// node; it must be deterministic. Up to `max_coords` coordinates are
/// sampled (all of them when there are fewer). The relative error per
/// coordinate is `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn grad_check<F>(
    store: &mut ParamStore,
    epsilon: f64,
    max_coords: usize,
    seed: u64,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let grads = {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };

    let coords: Vec<(usize, usize)> = store
        .params
        .iter()
        .enumerate()
        .flat_map(|(p, param)| (0..param.value.len()).map(move |i| (p, i)))
        .collect();
    let chosen: Vec<(usize, usize)> = if coords.len() <= max_coords {
        coords
    } else {
        let mut rng = Rng::new(seed);
        rng.sample_indices(coords.len(), max_coords)
            .into_iter()
            .map(|i| coords[i])
            .collect()
    };

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        Ok(g.value(loss).item())
    };

    let mut max_rel: f64 = 0.0;
    for &(p, i) in &chosen {
        let original = store.params[p].value.data[i];
        store.params[p].value.data[i] = original + epsilon;
        let plus = eval(store)?;
        store.params[p].value.data[i] = original - epsilon;
        let minus = eval(store)?;
        store.params[p].value.data[i] = original;
        let fd = (plus - minus) / (2.0 * epsilon);
        let ad = grads.entry(ParamId(p), i);
        let rel = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        coords_checked: chosen.len(),
    })
}
