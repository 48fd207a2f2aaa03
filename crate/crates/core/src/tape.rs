//! Recorded computation graph and reverse-mode gradients.
//!
//! Every primitive appends one node holding its output value; inputs always
//! refer to earlier nodes, so a single reverse sweep over the node list
//! visits the graph in reverse topological order. The primitive set is
//! closed and every gradient is written out by hand.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::params::ParamStore;
use crate::tensor::{gemm, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pointwise {
    Add,
    Sub,
    Mul,
    Max,
    Min,
    Relu,
    Sigmoid,
    Tanh,
    Ln,
    Scale(f64),
}

impl Pointwise {
    /// Looks a primitive up by name; `factor` is only read by `scale`.
    pub fn from_name(name: &str, factor: f64) -> Result<Self, TensorError> {
        Ok(match name {
            "add" => Self::Add,
            "sub" => Self::Sub,
            "mul" => Self::Mul,
            "max" => Self::Max,
            "min" => Self::Min,
            "relu" => Self::Relu,
            "sigmoid" => Self::Sigmoid,
            "tanh" => Self::Tanh,
            "ln" => Self::Ln,
            "scale" => Self::Scale(factor),
            other => return Err(TensorError::UnsupportedPrimitive(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Sub => "sub",
            Self::Mul => "mul",
            Self::Max => "max",
            Self::Min => "min",
            Self::Relu => "relu",
            Self::Sigmoid => "sigmoid",
            Self::Tanh => "tanh",
            Self::Ln => "ln",
            Self::Scale(_) => "scale",
        }
    }

    fn is_binary(&self) -> bool {
        matches!(
            self,
            Self::Add | Self::Sub | Self::Mul | Self::Max | Self::Min
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeOp {
    ConcatLast,
    ReduceSumLast,
    ReduceMeanLast,
    SoftmaxLast,
}

impl ShapeOp {
    pub fn from_name(name: &str) -> Result<Self, TensorError> {
        Ok(match name {
            "concat_last" => Self::ConcatLast,
            "reduce_sum_last" => Self::ReduceSumLast,
            "reduce_mean_last" => Self::ReduceMeanLast,
            "softmax_last" => Self::SoftmaxLast,
            other => return Err(TensorError::UnsupportedPrimitive(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::ConcatLast => "concat_last",
            Self::ReduceSumLast => "reduce_sum_last",
            Self::ReduceMeanLast => "reduce_mean_last",
            Self::SoftmaxLast => "softmax_last",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param {
        id: String,
    },
    Matmul,
    Gather {
        indices: Vec<usize>,
    },
    Pointwise(Pointwise),
    Shape(ShapeOp),
    Reshape,
    RowMatmul {
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Arc<Tensor>,
    needs_grad: bool,
}

/// Gradients of a scalar loss keyed by trainable parameter id.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: &str) -> Option<&Tensor> {
        self.map.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.map.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn insert(&mut self, id: impl Into<String>, grad: Tensor) {
        self.map.insert(id.into(), grad);
    }
}

/// Append-only record of primitive applications.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, op: Op, inputs: Vec<usize>, value: Tensor) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value: Arc::new(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            inputs: Vec::new(),
            value: Arc::new(value),
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a parameter leaf read from `store`.
    pub fn param(&mut self, store: &ParamStore, id: &str) -> Result<Var, TensorError> {
        let p = store
            .get(id)
            .ok_or_else(|| TensorError::UnknownParameter(id.to_string()))?;
        self.nodes.push(Node {
            op: Op::Param { id: p.id.clone() },
            inputs: Vec::new(),
            value: Arc::clone(&p.tensor),
            needs_grad: p.trainable,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a parameter leaf that is not backed by a store.
    pub fn param_leaf(&mut self, id: impl Into<String>, value: Tensor, trainable: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Param { id: id.into() },
            inputs: Vec::new(),
            value: Arc::new(value),
            needs_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::DimensionMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let out = finite("matmul", Tensor::matrix(m, n, out)?)?;
        Ok(self.push(Op::Matmul, vec![a.0, b.0], out))
    }

    /// Selects table rows; the gradient scatter-adds back into the table.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(TensorError::Contract(format!(
                "embedding_gather: table must be a matrix, got shape {:?}",
                t.shape()
            )));
        }
        if indices.is_empty() {
            return Err(TensorError::Arity {
                op: "embedding_gather",
                expected: "at least one index",
                got: 0,
            });
        }
        let (vocab, dim) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(indices.len() * dim);
        for (row, &idx) in indices.iter().enumerate() {
            if idx >= vocab {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding_gather",
                    row,
                    index: idx,
                    bound: vocab,
                });
            }
            out.extend_from_slice(t.row(idx));
        }
        let out = Tensor::matrix(indices.len(), dim, out)?;
        Ok(self.push(
            Op::Gather {
                indices: indices.to_vec(),
            },
            vec![table.0],
            out,
        ))
    }

    pub fn pointwise(&mut self, op: Pointwise, inputs: &[Var]) -> Result<Var, TensorError> {
        let expected = if op.is_binary() { 2 } else { 1 };
        if inputs.len() != expected {
            return Err(TensorError::Arity {
                op: op.name(),
                expected: if op.is_binary() { "2" } else { "1" },
                got: inputs.len(),
            });
        }
        let x = self.value(inputs[0]);
        let out = if op.is_binary() {
            let y = self.value(inputs[1]);
            if x.shape() != y.shape() {
                return Err(TensorError::DimensionMismatch {
                    op: op.name(),
                    left: x.shape().to_vec(),
                    right: y.shape().to_vec(),
                });
            }
            match op {
                Pointwise::Add => x.zip(y, |a, b| a + b),
                Pointwise::Sub => x.zip(y, |a, b| a - b),
                Pointwise::Mul => x.zip(y, |a, b| a * b),
                Pointwise::Max => x.zip(y, f64::max),
                Pointwise::Min => x.zip(y, f64::min),
                _ => unreachable!(),
            }
        } else {
            match op {
                Pointwise::Relu => x.map(|v| v.max(0.0)),
                Pointwise::Sigmoid => x.map(sigmoid),
                Pointwise::Tanh => x.map(f64::tanh),
                Pointwise::Ln => x.map(f64::ln),
                Pointwise::Scale(c) => x.map(|v| v * c),
                _ => unreachable!(),
            }
        };
        let out = finite(op.name(), out)?;
        Ok(self.push(Op::Pointwise(op), inputs.iter().map(|v| v.0).collect(), out))
    }

    pub fn shape_op(&mut self, op: ShapeOp, inputs: &[Var]) -> Result<Var, TensorError> {
        if inputs.is_empty() {
            return Err(TensorError::Arity {
                op: op.name(),
                expected: "at least 1",
                got: 0,
            });
        }
        if op != ShapeOp::ConcatLast && inputs.len() != 1 {
            return Err(TensorError::Arity {
                op: op.name(),
                expected: "1",
                got: inputs.len(),
            });
        }
        let out = match op {
            ShapeOp::ConcatLast => {
                let first = self.value(inputs[0]);
                let axes = first.shape().len();
                let rows = first.rows();
                for &v in &inputs[1..] {
                    let t = self.value(v);
                    if t.shape().len() != axes || t.rows() != rows {
                        return Err(TensorError::DimensionMismatch {
                            op: "concat_last",
                            left: first.shape().to_vec(),
                            right: t.shape().to_vec(),
                        });
                    }
                }
                let width: usize = inputs.iter().map(|&v| self.value(v).cols()).sum();
                let mut data = Vec::with_capacity(rows * width);
                for r in 0..rows {
                    for &v in inputs {
                        data.extend_from_slice(self.value(v).row(r));
                    }
                }
                if axes == 1 {
                    Tensor::vector(data)?
                } else {
                    Tensor::matrix(rows, width, data)?
                }
            }
            ShapeOp::ReduceSumLast | ShapeOp::ReduceMeanLast => {
                let x = self.value(inputs[0]);
                let n = x.cols() as f64;
                let mean = op == ShapeOp::ReduceMeanLast;
                let data: Vec<f64> = (0..x.rows())
                    .map(|r| {
                        let s: f64 = x.row(r).iter().sum();
                        if mean {
                            s / n
                        } else {
                            s
                        }
                    })
                    .collect();
                keep_axes(x, data, 1)?
            }
            ShapeOp::SoftmaxLast => {
                let x = self.value(inputs[0]);
                let mut data = Vec::with_capacity(x.len());
                for r in 0..x.rows() {
                    let row = x.row(r);
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let start = data.len();
                    data.extend(row.iter().map(|&v| (v - m).exp()));
                    let z: f64 = data[start..].iter().sum();
                    for v in &mut data[start..] {
                        *v /= z;
                    }
                }
                keep_axes(x, data, x.cols())?
            }
        };
        let out = finite(op.name(), out)?;
        Ok(self.push(Op::Shape(op), inputs.iter().map(|v| v.0).collect(), out))
    }

    /// Reinterprets the row-major data under a new shape of equal size.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return Err(TensorError::DimensionMismatch {
                op: "reshape",
                left: t.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let out = t.reshape(shape.to_vec())?;
        Ok(self.push(Op::Reshape, vec![x.0], out))
    }

    /// Per-row matrix product.
    ///
    /// Row `r` of `a` is read as an `m × k` matrix and row `r` of `b` as
    /// `k × n` (or `n × k` when `trans_b`, in which case its transpose is
    /// used). Row `r` of the `batch × (m·n)` output is their product.
    pub fn row_matmul(
        &mut self,
        a: Var,
        b: Var,
        (m, k, n): (usize, usize, usize),
        trans_b: bool,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ok = ta.shape().len() == 2
            && tb.shape().len() == 2
            && ta.rows() == tb.rows()
            && ta.cols() == m * k
            && tb.cols() == k * n;
        if !ok {
            return Err(TensorError::DimensionMismatch {
                op: "row_matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let rows = ta.rows();
        let mut out = vec![0.0; rows * m * n];
        for r in 0..rows {
            gemm(
                m,
                k,
                n,
                ta.row(r),
                false,
                tb.row(r),
                trans_b,
                &mut out[r * m * n..(r + 1) * m * n],
                false,
            );
        }
        let out = finite("row_matmul", Tensor::matrix(rows, m * n, out)?)?;
        Ok(self.push(Op::RowMatmul { m, k, n, trans_b }, vec![a.0, b.0], out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.pointwise(Pointwise::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.pointwise(Pointwise::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.pointwise(Pointwise::Mul, &[a, b])
    }

    pub fn max(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.pointwise(Pointwise::Max, &[a, b])
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.pointwise(Pointwise::Min, &[a, b])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.pointwise(Pointwise::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.pointwise(Pointwise::Sigmoid, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.pointwise(Pointwise::Tanh, &[x])
    }

    pub fn ln(&mut self, x: Var) -> Result<Var, TensorError> {
        self.pointwise(Pointwise::Ln, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        self.pointwise(Pointwise::Scale(factor), &[x])
    }

    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var, TensorError> {
        self.shape_op(ShapeOp::ConcatLast, inputs)
    }

    pub fn sum_last(&mut self, x: Var) -> Result<Var, TensorError> {
        self.shape_op(ShapeOp::ReduceSumLast, &[x])
    }

    pub fn mean_last(&mut self, x: Var) -> Result<Var, TensorError> {
        self.shape_op(ShapeOp::ReduceMeanLast, &[x])
    }

    pub fn softmax_last(&mut self, x: Var) -> Result<Var, TensorError> {
        self.shape_op(ShapeOp::SoftmaxLast, &[x])
    }

    /// Gradients of the one-element `loss` w.r.t. every trainable parameter
    /// leaf that contributed to it.
    pub fn backprop(&self, loss: Var) -> Result<Gradients, TensorError> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "loss must be a one-element tensor, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(root.value.shape(), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param { id } => match out.map.get_mut(id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.map.insert(id.clone(), g);
                    }
                },
                Op::Matmul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    if self.nodes[a].needs_grad {
                        let mut ga = vec![0.0; m * k];
                        gemm(m, n, k, g.data(), false, tb.data(), true, &mut ga, false);
                        accumulate(&mut grads, a, Tensor::matrix(m, k, ga)?);
                    }
                    if self.nodes[b].needs_grad {
                        let mut gb = vec![0.0; k * n];
                        gemm(k, m, n, ta.data(), true, g.data(), false, &mut gb, false);
                        accumulate(&mut grads, b, Tensor::matrix(k, n, gb)?);
                    }
                }
                Op::Gather { indices } => {
                    let t = node.inputs[0];
                    let table = &self.nodes[t].value;
                    let dim = table.cols();
                    let mut gt = grads[t]
                        .take()
                        .unwrap_or_else(|| Tensor::zeros(table.shape()));
                    let buf = gt.data_mut();
                    for (row, &idx) in indices.iter().enumerate() {
                        let src = g.row(row);
                        for (d, s) in buf[idx * dim..(idx + 1) * dim].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    grads[t] = Some(gt);
                }
                Op::Pointwise(op) => self.pointwise_grad(*op, node, &g, &mut grads),
                Op::Shape(op) => self.shape_grad(*op, node, &g, &mut grads)?,
                Op::Reshape => {
                    let inp = node.inputs[0];
                    let shape = self.nodes[inp].value.shape().to_vec();
                    accumulate(&mut grads, inp, g.reshape(shape)?);
                }
                &Op::RowMatmul { m, k, n, trans_b } => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
                    let rows = ta.rows();
                    if self.nodes[a].needs_grad {
                        let mut ga = vec![0.0; rows * m * k];
                        for r in 0..rows {
                            gemm(
                                m,
                                n,
                                k,
                                g.row(r),
                                false,
                                tb.row(r),
                                !trans_b,
                                &mut ga[r * m * k..(r + 1) * m * k],
                                false,
                            );
                        }
                        accumulate(&mut grads, a, Tensor::matrix(rows, m * k, ga)?);
                    }
                    if self.nodes[b].needs_grad {
                        let mut gb = vec![0.0; rows * k * n];
                        for r in 0..rows {
                            let dst = &mut gb[r * k * n..(r + 1) * k * n];
                            if trans_b {
                                gemm(n, m, k, g.row(r), true, ta.row(r), false, dst, false);
                            } else {
                                gemm(k, m, n, ta.row(r), true, g.row(r), false, dst, false);
                            }
                        }
                        accumulate(&mut grads, b, Tensor::matrix(rows, k * n, gb)?);
                    }
                }
            }
        }
        Ok(out)
    }

    fn pointwise_grad(&self, op: Pointwise, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let x = &self.nodes[node.inputs[0]].value;
        let y = &node.value;
        let mut send = |slot: usize, t: Tensor| {
            if self.nodes[node.inputs[slot]].needs_grad {
                accumulate(grads, node.inputs[slot], t);
            }
        };
        match op {
            Pointwise::Add => {
                send(0, g.clone());
                send(1, g.clone());
            }
            Pointwise::Sub => {
                send(0, g.clone());
                send(1, g.map(|v| -v));
            }
            Pointwise::Mul => {
                let b = &self.nodes[node.inputs[1]].value;
                send(0, g.zip(b, |g, b| g * b));
                send(1, g.zip(x, |g, a| g * a));
            }
            Pointwise::Max | Pointwise::Min => {
                let b = &self.nodes[node.inputs[1]].value;
                let first_wins = |a: f64, b: f64| match op {
                    Pointwise::Max => a >= b,
                    _ => a <= b,
                };
                let mut ga = g.clone();
                let mut gb = g.clone();
                for (i, (&a, &bv)) in x.data().iter().zip(b.data()).enumerate() {
                    if first_wins(a, bv) {
                        gb.data_mut()[i] = 0.0;
                    } else {
                        ga.data_mut()[i] = 0.0;
                    }
                }
                send(0, ga);
                send(1, gb);
            }
            Pointwise::Relu => send(0, g.zip(x, |g, x| if x > 0.0 { g } else { 0.0 })),
            Pointwise::Sigmoid => send(0, g.zip(y, |g, y| g * y * (1.0 - y))),
            Pointwise::Tanh => send(0, g.zip(y, |g, y| g * (1.0 - y * y))),
            Pointwise::Ln => send(0, g.zip(x, |g, x| g / x)),
            Pointwise::Scale(c) => send(0, g.map(|g| g * c)),
        }
    }

    fn shape_grad(
        &self,
        op: ShapeOp,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), TensorError> {
        match op {
            ShapeOp::ConcatLast => {
                let rows = g.rows();
                let mut offset = 0;
                for &inp in &node.inputs {
                    let t = &self.nodes[inp].value;
                    let w = t.cols();
                    if self.nodes[inp].needs_grad {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        accumulate(grads, inp, Tensor::new(t.shape().to_vec(), data)?);
                    }
                    offset += w;
                }
            }
            ShapeOp::ReduceSumLast | ShapeOp::ReduceMeanLast => {
                let inp = node.inputs[0];
                let x = &self.nodes[inp].value;
                let n = x.cols();
                let f = if op == ShapeOp::ReduceMeanLast {
                    1.0 / n as f64
                } else {
                    1.0
                };
                let data: Vec<f64> = g
                    .data()
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * f, n))
                    .collect();
                accumulate(grads, inp, Tensor::new(x.shape().to_vec(), data)?);
            }
            ShapeOp::SoftmaxLast => {
                let inp = node.inputs[0];
                let y = &node.value;
                let mut data = Vec::with_capacity(y.len());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    data.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
                }
                accumulate(grads, inp, Tensor::new(y.shape().to_vec(), data)?);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], slot: usize, g: Tensor) {
    match &mut grads[slot] {
        Some(acc) => acc.add_assign(&g),
        empty => *empty = Some(g),
    }
}

fn keep_axes(x: &Tensor, data: Vec<f64>, cols: usize) -> Result<Tensor, TensorError> {
    if x.shape().len() == 2 {
        Tensor::matrix(x.rows(), cols, data)
    } else {
        Tensor::vector(data)
    }
}

fn finite(op: &'static str, t: Tensor) -> Result<Tensor, TensorError> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(TensorError::NonFinite { op })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = tape.constant(Tensor::identity(2));
        let out = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(out), &m(&[&[1.0, 2.0], &[3.0, 4.0]]));

        let ones = tape.constant(m(&[&[1.0], &[1.0]]));
        let out = tape.matmul(a, ones).unwrap();
        assert_eq!(tape.value(out), &m(&[&[3.0], &[7.0]]));

        let row = tape.constant(m(&[&[1.0, 2.0]]));
        let zeros = tape.constant(m(&[&[0.0], &[0.0]]));
        let out = tape.matmul(row, zeros).unwrap();
        assert_eq!(tape.value(out), &m(&[&[0.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::DimensionMismatch {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn gather_selects_rows_and_scatter_adds() {
        let mut tape = Tape::new();
        let table = tape.param_leaf("t", m(&[&[1.0, 2.0], &[3.0, 4.0]]), true);
        let out = tape.gather(table, &[1, 0]).unwrap();
        assert_eq!(tape.value(out), &m(&[&[3.0, 4.0], &[1.0, 2.0]]));

        let dup = tape.gather(table, &[0, 0]).unwrap();
        let s = tape.sum_last(dup).unwrap();
        let s = tape.concat(&[s]).unwrap();
        let ones = tape.constant(m(&[&[1.0, 1.0]]));
        let loss = tape.matmul(ones, s).unwrap();
        let g = tape.backprop(loss).unwrap();
        assert_eq!(g.get("t").unwrap(), &m(&[&[2.0, 2.0], &[0.0, 0.0]]));

        let err = tape.gather(table, &[0, 2]).unwrap_err();
        assert!(matches!(
            err,
            TensorError::IndexOutOfRange {
                row: 1,
                index: 2,
                ..
            }
        ));

        let mut tape = Tape::new();
        let single = tape.constant(m(&[&[5.0, 5.0]]));
        let out = tape.gather(single, &[0]).unwrap();
        assert_eq!(tape.value(out), &m(&[&[5.0, 5.0]]));
    }

    #[test]
    fn pointwise_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::vector(vec![3.0, 4.0]).unwrap());
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data(), &[4.0, 6.0]);

        let z = tape.constant(Tensor::vector(vec![0.0]).unwrap());
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);

        let r = tape.constant(Tensor::vector(vec![-1.0, 2.0]).unwrap());
        let r = tape.relu(r).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);

        let c = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        assert!(matches!(
            tape.add(a, c),
            Err(TensorError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            Pointwise::from_name("cosh", 1.0),
            Err(TensorError::UnsupportedPrimitive(_))
        ));
    }

    #[test]
    fn ln_of_zero_is_surfaced() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0]).unwrap());
        assert_eq!(tape.ln(z), Err(TensorError::NonFinite { op: "ln" }));
    }

    #[test]
    fn shape_op_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(m(&[&[1.0, 2.0]]));
        let b = tape.constant(m(&[&[3.0]]));
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c), &m(&[&[1.0, 2.0, 3.0]]));

        let z = tape.constant(m(&[&[0.0, 0.0]]));
        let s = tape.softmax_last(z).unwrap();
        assert_eq!(tape.value(s), &m(&[&[0.5, 0.5]]));

        let s = tape.sum_last(c).unwrap();
        assert_eq!(tape.value(s), &m(&[&[6.0]]));

        assert!(matches!(
            tape.shape_op(ShapeOp::ConcatLast, &[]),
            Err(TensorError::Arity { .. })
        ));
    }

    #[test]
    fn backprop_examples() {
        let mut tape = Tape::new();
        let p = tape.param_leaf("p", Tensor::vector(vec![1.0, 2.0]).unwrap(), true);
        let loss = tape.sum_last(p).unwrap();
        let g = tape.backprop(loss).unwrap();
        assert_eq!(g.get("p").unwrap().data(), &[1.0, 1.0]);

        let mut tape = Tape::new();
        let p = tape.param_leaf("p", Tensor::vector(vec![3.0]).unwrap(), true);
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum_last(sq).unwrap();
        let g = tape.backprop(loss).unwrap();
        assert_eq!(g.get("p").unwrap().data(), &[6.0]);
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut tape = Tape::new();
        let p = tape.param_leaf("p", Tensor::vector(vec![1.0]).unwrap(), true);
        let q = tape.param_leaf("q", Tensor::vector(vec![2.0]).unwrap(), false);
        let s = tape.mul(p, q).unwrap();
        let loss = tape.sum_last(s).unwrap();
        let g = tape.backprop(loss).unwrap();
        assert_eq!(g.get("p").unwrap().data(), &[2.0]);
        assert!(!g.contains("q"));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let p = tape.param_leaf("p", Tensor::vector(vec![1.0, 2.0]).unwrap(), true);
        assert!(matches!(tape.backprop(p), Err(TensorError::Contract(_))));
    }
}
