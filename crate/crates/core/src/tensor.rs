//! Dense float64 tensors and a single-use reverse-mode gradient tape.
//!
//! [`Tensor`] is a plain value: shape plus row-major data. Differentiable
//! computation happens through [`Var`] handles into a [`Tape`]; every op on a
//! `Var` evaluates the same kernel as the plain `Tensor` method and records
//! itself so [`Tape::backward`] can replay the chain rule in reverse.
//!
//! Everything is rank 0 (scalar, shape `[]`) or rank 2 (`[rows, cols]`).

use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        if !matches!(shape.len(), 0 | 2) {
            return Err(Error::dim("Tensor::new", format!("unsupported rank {}", shape.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(
                    "Tensor::from_rows",
                    format!("row {i} has {} values, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Tensor::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        let c = self.cols().max(1);
        self.data.chunks(c)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![idx.len(), c],
            data,
        }
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data,
        }
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.cols() != other.rows() {
            return Err(Error::dim("matmul", format!("{:?} x {:?}", self.shape, other.shape)));
        }
        let (m, k, n) = (self.rows(), self.cols(), other.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Adds a `1 x cols` bias to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        if bias.rows() != 1 || bias.cols() != self.cols() || self.shape.len() != 2 {
            return Err(Error::dim(
                "add_row",
                format!("{:?} + row {:?}", self.shape, bias.shape),
            ));
        }
        let c = self.cols();
        let mut data = self.data.clone();
        for row in data.chunks_mut(c) {
            for (v, &b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        Ok(self.zip(other, |a, b| a - b))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        Ok(self.zip(other, |a, b| a * b))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    /// Natural log of `max(x, floor)`.
    pub fn log_floor(&self, floor: f64) -> Tensor {
        self.map(|v| v.max(floor).ln())
    }

    pub fn exp(&self) -> Tensor {
        self.map(f64::exp)
    }

    pub fn sqrt(&self) -> Tensor {
        self.map(f64::sqrt)
    }

    pub fn sum(&self) -> Tensor {
        Tensor::scalar(self.data.iter().sum())
    }

    pub fn mean(&self) -> Tensor {
        Tensor::scalar(self.data.iter().sum::<f64>() / self.data.len() as f64)
    }

    /// Per-row maximum as an `n x 1` column.
    pub fn row_max(&self) -> Tensor {
        let data = self.row_iter().map(|r| r[argmax(r)]).collect::<Vec<_>>();
        Tensor {
            shape: vec![self.rows(), 1],
            data,
        }
    }

    /// Per-row argmax, ties resolved to the lowest index.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.row_iter().map(argmax).collect()
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&self) -> Result<Tensor> {
        if !self.all_finite() {
            return Err(Error::NonFinite("softmax"));
        }
        if self.shape.len() != 2 || self.cols() == 0 {
            return Err(Error::dim("softmax", format!("shape {:?}", self.shape)));
        }
        let c = self.cols();
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut total = 0.0;
            for &v in row {
                let e = (v - m).exp();
                total += e;
                data.push(e);
            }
            for v in &mut data[start..] {
                *v /= total;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Picks `self[r, index[r]]` for every row; returns an `n x 1` column.
    pub fn gather(&self, index: &[usize]) -> Result<Tensor> {
        if index.len() != self.rows() {
            return Err(Error::dim(
                "gather",
                format!("{} indices for {} rows", index.len(), self.rows()),
            ));
        }
        let c = self.cols();
        let mut data = Vec::with_capacity(index.len());
        for (r, &i) in index.iter().enumerate() {
            if i >= c {
                return Err(Error::dim("gather", format!("index {i} out of range for {c} columns")));
            }
            data.push(self.data[r * c + i]);
        }
        Ok(Tensor {
            shape: vec![index.len(), 1],
            data,
        })
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Log(usize, f64),
    Exp(usize),
    Sqrt(usize),
    Sum(usize),
    Mean(usize),
    RowMax(usize),
    Softmax(usize),
    Gather(usize, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    grad: Option<Tensor>,
}

/// Records differentiable operations for one backward pass.
///
/// A tape accepts new nodes until [`Tape::backward`] is called; after that it
/// is consumed and both recording and a second backward pass are usage errors.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a tensor registered on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, *self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed.get()
    }

    /// Registers an input tensor (parameter or constant) on the tape.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
            .expect("leaf registration on a consumed tape")
    }

    fn push(&self, value: Tensor, op: Op) -> Result<Var<'_>> {
        if self.consumed.get() {
            return Err(Error::Usage("tape already consumed by backward()".into()));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, grad: None });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Reverse pass from a scalar root. Populates the gradient of every node
    /// on the tape (zeros for nodes the root does not depend on).
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        if !std::ptr::eq(root.tape, self) {
            return Err(Error::Usage("root belongs to a different tape".into()));
        }
        if self.consumed.replace(true) {
            return Err(Error::Usage("backward() called twice on one tape".into()));
        }
        let mut nodes = self.nodes.borrow_mut();
        if !nodes[root.id].value.is_scalar() {
            self.consumed.set(false);
            return Err(Error::Usage(format!(
                "backward() root must be scalar, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(nodes[root.id].value.map(|_| 1.0));

        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        for (node, g) in nodes.iter_mut().zip(grads) {
            node.grad = Some(g.unwrap_or_else(|| node.value.map(|_| 0.0)));
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let ga = g.matmul(&val(b).transpose()).expect("matmul grad shape");
            let gb = val(a).transpose().matmul(g).expect("matmul grad shape");
            accumulate(grads, a, ga);
            accumulate(grads, b, gb);
        }
        &Op::AddRow(x, b) => {
            let c = g.cols();
            let mut gb = vec![0.0; c];
            for row in g.data.chunks(c) {
                for (acc, &v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            accumulate(grads, x, g.clone());
            accumulate(
                grads,
                b,
                Tensor {
                    shape: val(b).shape.clone(),
                    data: gb,
                },
            );
        }
        &Op::Add(a, b) => {
            accumulate(grads, a, g.clone());
            accumulate(grads, b, g.clone());
        }
        &Op::Sub(a, b) => {
            accumulate(grads, a, g.clone());
            accumulate(grads, b, g.scale(-1.0));
        }
        &Op::Mul(a, b) => {
            accumulate(grads, a, g.zip(val(b), |g, y| g * y));
            accumulate(grads, b, g.zip(val(a), |g, x| g * x));
        }
        &Op::Scale(x, c) => accumulate(grads, x, g.scale(c)),
        &Op::Relu(x) => accumulate(grads, x, g.zip(val(x), |g, x| if x > 0.0 { g } else { 0.0 })),
        &Op::Log(x, floor) => accumulate(grads, x, g.zip(val(x), |g, x| if x > floor { g / x } else { 0.0 })),
        &Op::Exp(x) => accumulate(grads, x, g.zip(out, |g, y| g * y)),
        &Op::Sqrt(x) => accumulate(grads, x, g.zip(out, |g, y| g * 0.5 / y)),
        &Op::Sum(x) => accumulate(grads, x, val(x).map(|_| g.data[0])),
        &Op::Mean(x) => {
            let n = val(x).len() as f64;
            accumulate(grads, x, val(x).map(|_| g.data[0] / n))
        }
        &Op::RowMax(x) => {
            let input = val(x);
            let c = input.cols();
            let mut gx = input.map(|_| 0.0);
            for (r, row) in input.data.chunks(c).enumerate() {
                gx.data[r * c + argmax(row)] = g.data[r];
            }
            accumulate(grads, x, gx);
        }
        &Op::Softmax(x) => {
            let c = out.cols();
            let mut gx = Vec::with_capacity(out.len());
            for (y, gy) in out.data.chunks(c).zip(g.data.chunks(c)) {
                let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                gx.extend(y.iter().zip(gy).map(|(&yi, &gi)| yi * (gi - dot)));
            }
            accumulate(
                grads,
                x,
                Tensor {
                    shape: out.shape.clone(),
                    data: gx,
                },
            );
        }
        Op::Gather(x, index) => {
            let input = val(*x);
            let c = input.cols();
            let mut gx = input.map(|_| 0.0);
            for (r, &i) in index.iter().enumerate() {
                gx.data[r * c + i] = g.data[r];
            }
            accumulate(grads, *x, gx);
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    /// Gradient of the backward root with respect to this tensor; `None`
    /// before [`Tape::backward`] has run.
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    fn unary(self, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let out = f(&self.value())?;
        self.tape.push(out, op)
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        if !std::ptr::eq(self.tape, other.tape) {
            return Err(Error::Usage("operands live on different tapes".into()));
        }
        let out = f(&self.value(), &other.value())?;
        self.tape.push(out, op)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul(self.id, other.id), Tensor::matmul)
    }

    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.binary(bias, Op::AddRow(self.id, bias.id), Tensor::add_row)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), Tensor::add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), Tensor::sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), Tensor::mul)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, c), |x| Ok(x.scale(c)))
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(Op::Relu(self.id), |x| Ok(x.relu()))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_floor(self, floor: f64) -> Result<Var<'t>> {
        self.unary(Op::Log(self.id, floor), |x| Ok(x.log_floor(floor)))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(Op::Exp(self.id), |x| Ok(x.exp()))
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(Op::Sqrt(self.id), |x| Ok(x.sqrt()))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.unary(Op::Sum(self.id), |x| Ok(x.sum()))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.unary(Op::Mean(self.id), |x| {
            if x.is_empty() {
                Err(Error::Empty("mean of empty tensor"))
            } else {
                Ok(x.mean())
            }
        })
    }

    pub fn row_max(self) -> Result<Var<'t>> {
        self.unary(Op::RowMax(self.id), |x| Ok(x.row_max()))
    }

    pub fn softmax(self) -> Result<Var<'t>> {
        self.unary(Op::Softmax(self.id), Tensor::softmax)
    }

    pub fn gather(self, index: &[usize]) -> Result<Var<'t>> {
        self.unary(Op::Gather(self.id, index.to_vec()), |x| x.gather(index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(rng: &mut SplitMix64, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap()
    }

    fn triple_loop(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.data_mut()[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let eye = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[[5.0, 6.0], [7.0, 8.0]]).unwrap();
        assert_eq!(eye.matmul(&b).unwrap(), b);

        let a = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let c = Tensor::from_rows(&[[3.0], [4.0]]).unwrap();
        assert_eq!(a.matmul(&c).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SplitMix64::new(42);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let got = a.matmul(&b).unwrap();
        let want = triple_loop(&a, &b);
        for (x, y) in got.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_exact_on_integers() {
        let mut rng = SplitMix64::new(9);
        let int = |rng: &mut SplitMix64, r, c| {
            Tensor::matrix(r, c, (0..r * c).map(|_| rng.below(21) as f64 - 10.0).collect()).unwrap()
        };
        let a = int(&mut rng, 5, 7);
        let b = int(&mut rng, 7, 3);
        assert_eq!(a.matmul(&b).unwrap(), triple_loop(&a, &b));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn softmax_examples() {
        let p = Tensor::from_rows(&[[0.0, 0.0]]).unwrap().softmax().unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        let p = Tensor::from_rows(&[[1000.0, 1000.0]]).unwrap().softmax().unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        let p = Tensor::from_rows(&[[3f64.ln(), 0.0]]).unwrap().softmax().unwrap();
        assert!((p.data()[0] - 0.75).abs() < 1e-15);
        assert!((p.data()[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let t = Tensor::from_rows(&[[f64::NAN, 0.0]]).unwrap();
        assert!(matches!(t.softmax(), Err(Error::NonFinite(_))));
        let t = Tensor::from_rows(&[[f64::INFINITY, 0.0]]).unwrap();
        assert!(matches!(t.softmax(), Err(Error::NonFinite(_))));
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.mul(x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(x.grad().unwrap().item(), 6.0);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let tape = Tape::new();
        let l = tape.leaf(Tensor::from_rows(&[[0.3, -1.2, 2.0], [0.0, 0.5, 0.1]]).unwrap());
        let s = l.softmax().unwrap().sum().unwrap();
        tape.backward(s).unwrap();
        for g in l.grad().unwrap().data() {
            assert!(g.abs() < 1e-15, "{g}");
        }
    }

    #[test]
    fn backward_usage_errors() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
        let s = x.sum().unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Usage(_))));
        assert!(matches!(x.relu(), Err(Error::Usage(_))));
    }

    #[test]
    fn every_node_gets_a_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[[1.0, -2.0]]).unwrap());
        let unused = tape.leaf(Tensor::from_rows(&[[4.0]]).unwrap());
        let s = a.relu().unwrap().sum().unwrap();
        let after = s.scale(2.0).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(a.grad().unwrap().data(), &[1.0, 0.0]);
        assert_eq!(unused.grad().unwrap().data(), &[0.0]);
        assert_eq!(after.grad().unwrap().data(), &[0.0]);
    }

    #[test]
    fn row_max_and_argmax_break_ties_low() {
        let t = Tensor::from_rows(&[[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]]).unwrap();
        assert_eq!(t.row_argmax(), vec![1, 0]);
        let tape = Tape::new();
        let x = tape.leaf(t);
        let m = x.row_max().unwrap().sum().unwrap();
        tape.backward(m).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }
}
