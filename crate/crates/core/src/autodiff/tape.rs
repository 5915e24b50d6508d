use std::sync::Arc;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Param(ParamId),
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Arc<[f64]>),
    MulCol(Var, Var),
    Column(Var, usize),
    Sigmoid(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    SegmentMax(Var, Vec<Option<usize>>),
    Mean(Var),
    Sum(Var),
    BceLogits(Var, Arc<[f64]>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for reverse-mode differentiation. Nodes are
/// appended in evaluation order, which is a topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers a trainable parameter as a leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Const, "constant")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.rows(), x.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |p, q| p + q)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |p, q| p - q)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "hadamard", |p, q| p * q)?;
        self.push(out, Op::Hadamard(a, b), "hadamard")
    }

    /// Adds a `1 x c` row (a bias) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(row));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(shape_err("add_row", format!("{:?} + row {:?}", x.shape(), b.shape())));
        }
        let mut out = x.clone();
        let c = x.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += b.data()[i % c];
        }
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * s).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        self.push(out, Op::Scale(a, s), "scale")
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Arc<[f64]>) -> Result<Var> {
        let x = self.value(a);
        if factors.len() != x.rows() {
            return Err(shape_err(
                "scale_rows",
                format!("{} factors for {} rows", factors.len(), x.rows()),
            ));
        }
        let c = x.cols();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= factors[i / c.max(1)];
        }
        self.push(out, Op::ScaleRows(a, factors), "scale_rows")
    }

    /// Multiplies row `i` of `a` (n x d) by `col[i]` of an `n x 1` variable.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (x, c) = (self.value(a), self.value(col));
        if c.cols() != 1 || c.rows() != x.rows() {
            return Err(shape_err(
                "mul_col",
                format!("{:?} by column {:?}", x.shape(), c.shape()),
            ));
        }
        let w = x.cols();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= c.data()[i / w.max(1)];
        }
        self.push(out, Op::MulCol(a, col), "mul_col")
    }

    /// Column `j` of `a` as an `n x 1` variable.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let x = self.value(a);
        if j >= x.cols() {
            return Err(shape_err("column", format!("column {j} of {:?}", x.shape())));
        }
        let data = (0..x.rows()).map(|i| x.get(i, j)).collect();
        let out = Tensor::from_vec(x.rows(), 1, data)?;
        self.push(out, Op::Column(a, j), "column")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| sigmoid(v)).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat_cols", "no inputs".into()))?;
        let rows = self.value(*first).rows();
        if let Some(bad) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
            return Err(shape_err(
                "concat_cols",
                format!("{} rows vs {}", self.value(*bad).rows(), rows),
            ));
        }
        let width: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * width);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_vec(rows, width, data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Row `k` of the result is row `index[k]` of `a` (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= x.rows()) {
            return Err(shape_err("gather_rows", format!("row {bad} of {:?}", x.shape())));
        }
        let mut data = Vec::with_capacity(index.len() * x.cols());
        for &i in index.iter() {
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::from_vec(index.len(), x.cols(), data)?;
        self.push(out, Op::GatherRows(a, index), "gather_rows")
    }

    fn check_segments(&self, a: Var, segments: &[usize], n: usize, op: &'static str) -> Result<()> {
        let x = self.value(a);
        if segments.len() != x.rows() {
            return Err(shape_err(
                op,
                format!("{} segment ids for {} rows", segments.len(), x.rows()),
            ));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= n) {
            return Err(shape_err(op, format!("segment id {bad} >= {n}")));
        }
        Ok(())
    }

    /// Sums rows of `a` into `n` output rows by `segments[row]`.
    pub fn segment_sum(&mut self, a: Var, segments: Arc<[usize]>, n: usize) -> Result<Var> {
        self.check_segments(a, &segments, n, "segment_sum")?;
        let x = self.value(a);
        let c = x.cols();
        let mut out = Tensor::zeros(n, c);
        for (k, &s) in segments.iter().enumerate() {
            let src = x.row(k);
            let dst = &mut out.data_mut()[s * c..(s + 1) * c];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v;
            }
        }
        self.push(out, Op::SegmentSum(a, segments), "segment_sum")
    }

    /// Column-wise max of the rows in each segment; empty segments are zero.
    pub fn segment_max(&mut self, a: Var, segments: Arc<[usize]>, n: usize) -> Result<Var> {
        self.check_segments(a, &segments, n, "segment_max")?;
        let x = self.value(a);
        let c = x.cols();
        let mut argmax: Vec<Option<usize>> = vec![None; n * c];
        for (k, &s) in segments.iter().enumerate() {
            for j in 0..c {
                let slot = &mut argmax[s * c + j];
                match *slot {
                    Some(best) if x.get(best, j) >= x.get(k, j) => {}
                    _ => *slot = Some(k),
                }
            }
        }
        let data = argmax
            .iter()
            .enumerate()
            .map(|(idx, a)| a.map_or(0.0, |k| x.get(k, idx % c)))
            .collect();
        let out = Tensor::from_vec(n, c, data)?;
        self.push(out, Op::SegmentMax(a, argmax), "segment_max")
    }

    /// Mean of all entries, as a `1 x 1` variable.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let n = x.data().len().max(1) as f64;
        let out = Tensor::scalar(x.data().iter().sum::<f64>() / n);
        self.push(out, Op::Mean(a), "mean")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(out, Op::Sum(a), "sum")
    }

    /// Mean binary cross-entropy of `n x 1` logits against 0/1 labels, in the
    /// stable form `max(z,0) - z*y + ln(1 + e^-|z|)`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if z.cols() != 1 || z.rows() != labels.len() {
            return Err(shape_err(
                "bce",
                format!("{:?} logits for {} labels", z.shape(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidArgument(format!("label {bad} outside {{0,1}}")));
        }
        let n = labels.len().max(1) as f64;
        let total: f64 = z.data().iter().zip(labels).map(|(&z, &y)| bce_term(z, y)).sum();
        let out = Tensor::scalar(total / n);
        self.push(out, Op::BceLogits(logits, labels.into()), "bce")
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(shape_err(
                "backward",
                format!("loss shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { by_node: grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Param(_) | Op::Const => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul(&self.value(*b).transpose())?;
                let gb = self.value(*a).transpose().matmul(g)?;
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, map(g, |v| -v));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                let c = g.cols();
                let mut gr = Tensor::zeros(1, c);
                for (k, v) in g.data().iter().enumerate() {
                    gr.data_mut()[k % c] += v;
                }
                accumulate(grads, *row, gr);
            }
            Op::Hadamard(a, b) => {
                accumulate(grads, *a, zip(g, self.value(*b), |p, q| p * q));
                accumulate(grads, *b, zip(g, self.value(*a), |p, q| p * q));
            }
            Op::Scale(a, s) => accumulate(grads, *a, map(g, |v| v * s)),
            Op::ScaleRows(a, factors) => {
                let c = g.cols().max(1);
                let mut ga = g.clone();
                for (k, v) in ga.data_mut().iter_mut().enumerate() {
                    *v *= factors[k / c];
                }
                accumulate(grads, *a, ga);
            }
            Op::MulCol(a, col) => {
                let (x, cv) = (self.value(*a), self.value(*col));
                let w = x.cols().max(1);
                let mut ga = g.clone();
                let mut gc = Tensor::zeros(cv.rows(), 1);
                for (k, v) in ga.data_mut().iter_mut().enumerate() {
                    gc.data_mut()[k / w] += *v * x.data()[k];
                    *v *= cv.data()[k / w];
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *col, gc);
            }
            Op::Column(a, j) => {
                let x = self.value(*a);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    ga.set(r, *j, g.get(r, 0));
                }
                accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => accumulate(grads, *a, zip(g, out, |gv, y| gv * y * (1.0 - y))),
            Op::Relu(a) => {
                accumulate(
                    grads,
                    *a,
                    zip(g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
                );
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut gp = Tensor::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        gp.data_mut()[r * w..(r + 1) * w].copy_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    offset += w;
                    accumulate(grads, p, gp);
                }
            }
            Op::GatherRows(a, index) => {
                let x = self.value(*a);
                let c = x.cols();
                let mut ga = Tensor::zeros(x.rows(), c);
                for (k, &src) in index.iter().enumerate() {
                    let dst = &mut ga.data_mut()[src * c..(src + 1) * c];
                    for (d, v) in dst.iter_mut().zip(g.row(k)) {
                        *d += v;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SegmentSum(a, segments) => {
                let c = g.cols();
                let mut data = Vec::with_capacity(segments.len() * c);
                for &s in segments.iter() {
                    data.extend_from_slice(g.row(s));
                }
                accumulate(grads, *a, Tensor::from_vec(segments.len(), c, data)?);
            }
            Op::SegmentMax(a, argmax) => {
                let x = self.value(*a);
                let c = x.cols();
                let mut ga = Tensor::zeros(x.rows(), c);
                for (idx, am) in argmax.iter().enumerate() {
                    if let Some(k) = am {
                        let j = idx % c;
                        let v = ga.get(*k, j) + g.data()[idx];
                        ga.set(*k, j, v);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let n = x.data().len().max(1) as f64;
                accumulate(grads, *a, Tensor::filled(x.rows(), x.cols(), g.get(0, 0) / n));
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, Tensor::filled(x.rows(), x.cols(), g.get(0, 0)));
            }
            Op::BceLogits(a, labels) => {
                let z = self.value(*a);
                let n = labels.len().max(1) as f64;
                let scale = g.get(0, 0) / n;
                let data = z
                    .data()
                    .iter()
                    .zip(labels.iter())
                    .map(|(&z, &y)| (sigmoid(z) - y) * scale)
                    .collect();
                accumulate(grads, *a, Tensor::from_vec(z.rows(), 1, data)?);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::from_vec(t.rows(), t.cols(), data).expect("same shape")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn bce_term(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Gradients of one backward pass, indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }

    /// One gradient per parameter in `store`, summed over every registration
    /// of that parameter on `tape`; zero for parameters the loss never touched.
    pub fn for_params(&self, tape: &Tape, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store
            .ids()
            .map(|id| {
                let (r, c) = store.get(id).shape();
                Tensor::zeros(r, c)
            })
            .collect();
        for (i, node) in tape.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &self.by_node[i]) {
                out[id.0].add_assign(g);
            }
        }
        out
    }
}
