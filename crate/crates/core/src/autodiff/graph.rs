//! Dynamic computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so the node list is already a topological order and
//! the backward pass is a single reverse sweep.

use super::array::Array;
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tags accepted by [`Graph::record`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpTag {
    Add,
    Sub,
    Mul,
    Div,
    Matmul,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Sum,
    SumAxis { axis: usize },
    Mean,
    MeanAxis { axis: usize },
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Relu,
    Softplus,
    Softmax { axis: usize },
    Square,
    Sqrt,
    Abs,
    Transpose,
    Broadcast { rows: usize, cols: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Relu,
    Softplus,
    Square,
    Sqrt,
    Abs,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Relu => "relu",
            Unary::Softplus => "softplus",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::Abs => "abs",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::Softplus => softplus(x),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Abs => x.abs(),
        }
    }

    /// d(out)/d(in) given input `x` and output `y`.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Softplus => sigmoid(x),
            Unary::Square => 2.0 * x,
            Unary::Sqrt => 0.5 / y,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
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

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { src: Var, axis: usize, start: usize },
    Sum(Var),
    SumAxis(Var, usize),
    Unary(Var, Unary),
    Softmax(Var, usize),
    Broadcast(Var),
}

struct Node {
    value: Array,
    op: Op,
}

/// Records array operations and differentiates scalar results.
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    num_params: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::with_capacity(1024), param_nodes: Vec::new(), num_params: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let s = self.shape(v);
        (s[0], s[1])
    }

    fn push(&mut self, value: Array, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn require_matrix(&self, op: &'static str, v: Var) -> Result<()> {
        if self.value(v).rank() != 2 {
            return Err(Error::shape(op, format!("expected a matrix, got {:?}", self.shape(v))));
        }
        Ok(())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    /// A constant leaf; gradients flowing into it are discarded.
    pub fn constant(&mut self, value: Array) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.num_params = self.num_params.max(store.len());
        if self.param_nodes.len() <= id.0 {
            self.param_nodes.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node { value: store.value(id).clone(), op: Op::Param });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Generic dispatcher over the tagged operation set.
    pub fn record(&mut self, tag: OpTag, inputs: &[Var]) -> Result<Var> {
        let arity = match tag {
            OpTag::Add | OpTag::Sub | OpTag::Mul | OpTag::Div | OpTag::Matmul => 2,
            OpTag::Concat { .. } => {
                return self.concat(inputs, match tag {
                    OpTag::Concat { axis } => axis,
                    _ => unreachable!(),
                })
            }
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::shape(
                "record",
                format!("{tag:?} takes {arity} inputs, got {}", inputs.len()),
            ));
        }
        let a = inputs[0];
        match tag {
            OpTag::Add => self.add(a, inputs[1]),
            OpTag::Sub => self.sub(a, inputs[1]),
            OpTag::Mul => self.mul(a, inputs[1]),
            OpTag::Div => self.div(a, inputs[1]),
            OpTag::Matmul => self.matmul(a, inputs[1]),
            OpTag::Concat { .. } => unreachable!(),
            OpTag::Slice { axis, start, len } => self.slice(a, axis, start, len),
            OpTag::Sum => self.sum(a),
            OpTag::SumAxis { axis } => self.sum_axis(a, axis),
            OpTag::Mean => self.mean(a),
            OpTag::MeanAxis { axis } => self.mean_axis(a, axis),
            OpTag::Exp => self.exp(a),
            OpTag::Log => self.log(a),
            OpTag::Tanh => self.tanh(a),
            OpTag::Sigmoid => self.sigmoid(a),
            OpTag::Relu => self.relu(a),
            OpTag::Softplus => self.softplus(a),
            OpTag::Softmax { axis } => self.softmax(a, axis),
            OpTag::Square => self.square(a),
            OpTag::Sqrt => self.sqrt(a),
            OpTag::Abs => self.abs(a),
            OpTag::Transpose => self.transpose(a),
            OpTag::Broadcast { rows, cols } => self.broadcast(a, rows, cols),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(v, Op::Div(a, b), "div")
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), "scale")
    }

    /// Addition of a constant.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::Offset(a), "offset")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.require_matrix("matmul", a)?;
        self.require_matrix("matmul", b)?;
        let (_, k) = self.dims(a);
        let (k2, _) = self.dims(b);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::Matmul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.require_matrix("transpose", a)?;
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a), "transpose")
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self
            .value(a)
            .reshaped(vec![rows, cols])
            .map_err(|_| Error::shape("reshape", format!("{:?} -> [{rows}, {cols}]", self.shape(a))))?;
        self.push(v, Op::Reshape(a), "reshape")
    }

    /// Concatenation of matrices along `axis` (0 = stack rows, 1 = join columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::shape("concat", format!("{} parts on axis {axis}", parts.len())));
        }
        for &p in parts {
            self.require_matrix("concat", p)?;
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let shapes: Vec<(usize, usize)> = parts.iter().map(|&p| self.dims(p)).collect();
        let v = if axis == 0 {
            let cols = shapes[0].1;
            if shapes.iter().any(|s| s.1 != cols) {
                return Err(Error::shape("concat", format!("row-stacking shapes {shapes:?}")));
            }
            let rows = shapes.iter().map(|s| s.0).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Array::matrix(rows, cols, data)?
        } else {
            let rows = shapes[0].0;
            if shapes.iter().any(|s| s.0 != rows) {
                return Err(Error::shape("concat", format!("column-joining shapes {shapes:?}")));
            }
            let cols: usize = shapes.iter().map(|s| s.1).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row_slice(r));
                }
            }
            Array::matrix(rows, cols, data)?
        };
        self.push(v, Op::Concat { parts: parts.to_vec(), axis }, "concat")
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.require_matrix("slice", a)?;
        let (rows, cols) = self.dims(a);
        let extent = if axis == 0 { rows } else { cols };
        if axis > 1 || len == 0 || start + len > extent {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, self.shape(a)),
            ));
        }
        let src = self.value(a);
        let v = if axis == 0 {
            Array::matrix(len, cols, src.data()[start * cols..(start + len) * cols].to_vec())?
        } else {
            let mut data = Vec::with_capacity(rows * len);
            for r in 0..rows {
                data.extend_from_slice(&src.row_slice(r)[start..start + len]);
            }
            Array::matrix(rows, len, data)?
        };
        self.push(v, Op::Slice { src: a, axis, start }, "slice")
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Array::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Sum along `axis`: axis 0 gives `1 x cols`, axis 1 gives `rows x 1`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.require_matrix("sum_axis", a)?;
        let (rows, cols) = self.dims(a);
        let src = self.value(a);
        let v = match axis {
            0 => {
                let mut out = vec![0.0; cols];
                for r in 0..rows {
                    for (o, x) in out.iter_mut().zip(src.row_slice(r)) {
                        *o += x;
                    }
                }
                Array::matrix(1, cols, out)?
            }
            1 => Array::matrix(rows, 1, (0..rows).map(|r| src.row_slice(r).iter().sum()).collect())?,
            _ => return Err(Error::shape("sum_axis", format!("axis {axis}"))),
        };
        self.push(v, Op::SumAxis(a, axis), "sum_axis")
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.require_matrix("mean_axis", a)?;
        let (rows, cols) = self.dims(a);
        let n = if axis == 0 { rows } else { cols };
        let s = self.sum_axis(a, axis)?;
        self.scale(s, 1.0 / n as f64)
    }

    fn unary(&mut self, a: Var, f: Unary) -> Result<Var> {
        let v = self.value(a).map(|x| f.apply(x));
        self.push(v, Op::Unary(a, f), f.name())
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Softplus)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Square)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sqrt)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Abs)
    }

    /// Softmax along `axis` (1 = within each row, 0 = within each column).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.require_matrix("softmax", a)?;
        if axis > 1 {
            return Err(Error::shape("softmax", format!("axis {axis}")));
        }
        let src = if axis == 0 { self.value(a).transpose() } else { self.value(a).clone() };
        let mut out = src;
        let cols = out.cols();
        for row in out.data_mut().chunks_mut(cols) {
            let m = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let v = if axis == 0 { out.transpose() } else { out };
        self.push(v, Op::Softmax(a, axis), "softmax")
    }

    /// Explicit broadcast of a `1 x c`, `r x 1` or `1 x 1` node to `rows x cols`.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        self.require_matrix("broadcast", a)?;
        let (r, c) = self.dims(a);
        if (r != 1 && r != rows) || (c != 1 && c != cols) || rows == 0 || cols == 0 {
            return Err(Error::shape("broadcast", format!("[{r}, {c}] -> [{rows}, {cols}]")));
        }
        if r == rows && c == cols {
            return Ok(a);
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let ri = if r == 1 { 0 } else { i };
            for j in 0..cols {
                let cj = if c == 1 { 0 } else { j };
                data.push(src.data()[ri * c + cj]);
            }
        }
        let v = Array::matrix(rows, cols, data)?;
        self.push(v, Op::Broadcast(a), "broadcast")
    }

    /// Broadcast a row vector over `rows` rows.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let cols = self.shape(a)[1];
        self.broadcast(a, rows, cols)
    }

    fn check_loss(&self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `loss`; returns the adjoint of every node.
    /// Marks nodes that depend on at least one parameter.
    fn param_dependent(&self, upto: usize) -> Vec<bool> {
        let mut dep = vec![false; upto + 1];
        for i in 0..=upto {
            let d = &mut |v: &Var| dep[v.0];
            dep[i] = match &self.nodes[i].op {
                Op::Leaf => false,
                Op::Param => true,
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Matmul(a, b) => d(a) || d(b),
                Op::Scale(a, _)
                | Op::Offset(a)
                | Op::Transpose(a)
                | Op::Reshape(a)
                | Op::Sum(a)
                | Op::SumAxis(a, _)
                | Op::Unary(a, _)
                | Op::Softmax(a, _)
                | Op::Broadcast(a) => d(a),
                Op::Slice { src, .. } => d(src),
                Op::Concat { parts, .. } => parts.iter().any(|p| d(p)),
            };
        }
        dep
    }

    /// Reverse sweep from `loss`. With `params_only`, adjoints are only
    /// propagated into nodes that depend on a parameter.
    fn adjoints(&self, loss: Var, params_only: bool) -> Result<Vec<Option<Array>>> {
        self.check_loss(loss)?;
        let want = if params_only { self.param_dependent(loss.0) } else { vec![true; loss.0 + 1] };
        let mut grads: Vec<Option<Array>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array::full(1, 1, 1.0).reshaped(self.shape(loss).to_vec())?);

        let acc = |grads: &mut [Option<Array>], v: Var, g: Array| {
            if !want[v.0] {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param => {
                    grads[i] = Some(g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if want[b.0] {
                        acc(&mut grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                    }
                    if want[a.0] {
                        acc(&mut grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                    }
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let ga = g.zip_map(bv, |x, y| x / y);
                    let gb = g.zip_map(&node.value, |x, q| x * q).zip_map(bv, |x, y| -x / y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::Offset(a) => acc(&mut grads, *a, g),
                Op::Matmul(a, b) => {
                    if want[a.0] {
                        acc(&mut grads, *a, g.matmul_nt(self.value(*b)));
                    }
                    if want[b.0] {
                        acc(&mut grads, *b, self.value(*a).matmul_tn(&g));
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Reshape(a) => {
                    let shape = self.shape(*a).to_vec();
                    acc(&mut grads, *a, g.reshaped(shape)?);
                }
                Op::Concat { parts, axis } => {
                    let mut offset = 0;
                    for &p in parts {
                        let (pr, pc) = self.dims(p);
                        let piece = if *axis == 0 {
                            let cols = g.cols();
                            Array::matrix(pr, pc, g.data()[offset * cols..(offset + pr) * cols].to_vec())?
                        } else {
                            let mut data = Vec::with_capacity(pr * pc);
                            for r in 0..pr {
                                data.extend_from_slice(&g.row_slice(r)[offset..offset + pc]);
                            }
                            Array::matrix(pr, pc, data)?
                        };
                        offset += if *axis == 0 { pr } else { pc };
                        acc(&mut grads, p, piece);
                    }
                }
                Op::Slice { src, axis, start } => {
                    let (sr, sc) = self.dims(*src);
                    let mut full = Array::zeros(sr, sc);
                    let (gr, gc) = (g.rows(), g.cols());
                    let fd = full.data_mut();
                    for r in 0..gr {
                        for c in 0..gc {
                            let (tr, tc) = if *axis == 0 { (r + start, c) } else { (r, c + start) };
                            fd[tr * sc + tc] = g.data()[r * gc + c];
                        }
                    }
                    acc(&mut grads, *src, full);
                }
                Op::Sum(a) => {
                    let s = g.item();
                    let shape = self.shape(*a).to_vec();
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, Array::new(shape, vec![s; n])?);
                }
                Op::SumAxis(a, axis) => {
                    let (r, c) = self.dims(*a);
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        for j in 0..c {
                            data.push(if *axis == 0 { g.data()[j] } else { g.data()[i] });
                        }
                    }
                    acc(&mut grads, *a, Array::matrix(r, c, data)?);
                }
                Op::Unary(a, f) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut out = g;
                    for ((o, &xi), &yi) in out.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                        *o *= f.deriv(xi, yi);
                    }
                    acc(&mut grads, *a, out);
                }
                Op::Softmax(a, axis) => {
                    let y = &node.value;
                    let (yt, gt) = if *axis == 0 {
                        (y.transpose(), g.transpose())
                    } else {
                        (y.clone(), g)
                    };
                    let cols = yt.cols();
                    let mut out = gt;
                    for (orow, yrow) in out.data_mut().chunks_mut(cols).zip(yt.data().chunks(cols)) {
                        let dot: f64 = orow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for (o, &yv) in orow.iter_mut().zip(yrow) {
                            *o = yv * (*o - dot);
                        }
                    }
                    let out = if *axis == 0 { out.transpose() } else { out };
                    acc(&mut grads, *a, out);
                }
                Op::Broadcast(a) => {
                    let (r, c) = self.dims(*a);
                    let (gr, gc) = (g.rows(), g.cols());
                    let mut out = Array::zeros(r, c);
                    let od = out.data_mut();
                    for i in 0..gr {
                        let ri = if r == 1 { 0 } else { i };
                        for j in 0..gc {
                            let cj = if c == 1 { 0 } else { j };
                            od[ri * c + cj] += g.data()[i * gc + j];
                        }
                    }
                    acc(&mut grads, *a, out);
                }
            }
        }
        Ok(grads)
    }

    /// Backpropagates from a scalar loss and returns the gradient of every
    /// parameter that was bound into this graph.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut adj = self.adjoints(loss, true)?;
        let mut by_param = vec![None; self.num_params];
        for (pid, slot) in self.param_nodes.iter().enumerate() {
            if let Some(v) = slot {
                if v.0 < adj.len() {
                    by_param[pid] = adj[v.0].take();
                }
            }
        }
        Ok(Gradients { by_param })
    }

    /// Gradients of a scalar loss with respect to arbitrary nodes
    /// (zeros for nodes the loss does not depend on).
    pub fn grad_wrt(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Array>> {
        let adj = self.adjoints(loss, false)?;
        Ok(wrt
            .iter()
            .map(|v| {
                adj.get(v.0)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Array::zeros_like(self.value(*v)))
            })
            .collect())
    }
}
