use std::collections::HashMap;

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use super::DiffError;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    /// Differentiable parameter vector (`1 x len`).
    Param,
    /// Data input; gradients may still be requested but usually are not.
    Input,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf {
        name: String,
        kind: LeafKind,
        rows: usize,
        cols: usize,
    },
    Const(Tensor),
    /// Reshaped view of a contiguous range of a flattened source.
    Slice {
        src: NodeId,
        offset: usize,
        rows: usize,
        cols: usize,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Neg(NodeId),
    MatMul(NodeId, NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Abs(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    /// One column per row, giving an `m x 1` result.
    Pick(NodeId, Vec<usize>),
    Sum(NodeId),
    Concat(NodeId, NodeId),
    Transpose(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Const(_) => "const",
            Op::Slice { .. } => "slice",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Neg(_) => "neg",
            Op::MatMul(..) => "matmul",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Abs(_) => "abs",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Pick(..) => "pick",
            Op::Sum(_) => "sum",
            Op::Concat(..) => "concat",
            Op::Transpose(_) => "transpose",
        }
    }

    fn inputs(&self) -> (Option<NodeId>, Option<NodeId>) {
        use Op::*;
        match self {
            Leaf { .. } | Const(_) => (None, None),
            Slice { src, .. } => (Some(*src), None),
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | Concat(a, b) => (Some(*a), Some(*b)),
            Scale(a, _)
            | Neg(a)
            | Tanh(a)
            | Relu(a)
            | Sigmoid(a)
            | Exp(a)
            | Log(a)
            | Abs(a)
            | Softmax(a)
            | LogSoftmax(a)
            | Pick(a, _)
            | Sum(a)
            | Transpose(a) => (Some(*a), None),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    label: Option<String>,
}

/// Operation DAG over dense matrices. Nodes are appended in topological
/// order: every node's inputs have smaller ids.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Leaf values for one evaluation.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    values: HashMap<NodeId, Tensor>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, leaf: NodeId, value: Tensor) -> &mut Self {
        self.values.insert(leaf, value);
        self
    }

    pub fn with(mut self, leaf: NodeId, value: Tensor) -> Self {
        self.values.insert(leaf, value);
        self
    }
}

/// Result of [`Graph::eval`]: one tensor per node.
#[derive(Clone, Debug)]
pub struct Values {
    tensors: Vec<Tensor>,
}

impl Values {
    pub fn get(&self, node: NodeId) -> &Tensor {
        &self.tensors[node.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

/// Adjoints from one reverse sweep.
#[derive(Debug)]
pub struct Adjoints {
    adj: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
}

impl Adjoints {
    /// Gradient with respect to `node`; zeros when no path exists.
    pub fn wrt(&self, node: NodeId) -> Vec<f64> {
        match &self.adj[node.0] {
            Some(v) => v.clone(),
            None => vec![0.0; self.sizes[node.0]],
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let (a, b) = op.inputs();
        debug_assert!(a.is_none_or(|a| a.0 < self.nodes.len()));
        debug_assert!(b.is_none_or(|b| b.0 < self.nodes.len()));
        self.nodes.push(Node { op, label: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Attaches a human-readable name used in error messages.
    pub fn set_label(&mut self, node: NodeId, label: impl Into<String>) {
        self.nodes[node.0].label = Some(label.into());
    }

    pub fn describe(&self, node: NodeId) -> String {
        let n = &self.nodes[node.0];
        match (&n.label, &n.op) {
            (Some(l), _) => format!("{l} (#{})", node.0),
            (None, Op::Leaf { name, .. }) => format!("{name} (#{})", node.0),
            (None, op) => format!("{}#{}", op.name(), node.0),
        }
    }

    /// Flat parameter leaf of shape `1 x len`.
    pub fn param(&mut self, name: impl Into<String>, len: usize) -> NodeId {
        self.push(Op::Leaf {
            name: name.into(),
            kind: LeafKind::Param,
            rows: 1,
            cols: len,
        })
    }

    pub fn input(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> NodeId {
        self.push(Op::Leaf {
            name: name.into(),
            kind: LeafKind::Input,
            rows,
            cols,
        })
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const(value))
    }

    pub fn slice(&mut self, src: NodeId, offset: usize, rows: usize, cols: usize) -> NodeId {
        self.push(Op::Slice {
            src,
            offset,
            rows,
            cols,
        })
    }

    /// Elementwise sum; `b` may broadcast as a row, column or scalar.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Neg(a))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Abs(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softmax(a))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSoftmax(a))
    }

    pub fn pick(&mut self, a: NodeId, cols: Vec<usize>) -> NodeId {
        self.push(Op::Pick(a, cols))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Concat(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose(a))
    }

    pub fn leaf_kind(&self, node: NodeId) -> Option<LeafKind> {
        match &self.nodes[node.0].op {
            Op::Leaf { kind, .. } => Some(*kind),
            _ => None,
        }
    }

    /// Structural reachability: does `node` depend on `leaf`?
    pub fn depends_on(&self, node: NodeId, leaf: NodeId) -> bool {
        if node.0 < leaf.0 {
            return false;
        }
        self.dependency_mask(leaf)[node.0]
    }

    fn dependency_mask(&self, leaf: NodeId) -> Vec<bool> {
        let mut dep = vec![false; self.nodes.len()];
        dep[leaf.0] = true;
        for i in leaf.0 + 1..self.nodes.len() {
            let (a, b) = self.nodes[i].op.inputs();
            dep[i] = a.is_some_and(|a| dep[a.0]) || b.is_some_and(|b| dep[b.0]);
        }
        dep
    }

    /// Forward evaluation. Pure function of the bindings.
    pub fn eval(&self, bindings: &Bindings) -> Result<Values, DiffError> {
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let id = NodeId(i);
            let t = self.eval_node(id, &node.op, &vals, bindings)?;
            if !t.is_finite() {
                return Err(DiffError::NumericOverflow {
                    node: self.describe(id),
                });
            }
            vals.push(t);
        }
        Ok(Values { tensors: vals })
    }

    fn shape_err(&self, id: NodeId, detail: String) -> DiffError {
        DiffError::ShapeMismatch {
            node: self.describe(id),
            detail,
        }
    }

    fn eval_node(
        &self,
        id: NodeId,
        op: &Op,
        vals: &[Tensor],
        bindings: &Bindings,
    ) -> Result<Tensor, DiffError> {
        let v = |n: &NodeId| &vals[n.0];
        Ok(match op {
            Op::Leaf {
                name, rows, cols, ..
            } => {
                let t = bindings
                    .values
                    .get(&id)
                    .ok_or_else(|| DiffError::UnboundLeaf { leaf: name.clone() })?;
                if t.shape() != (*rows, *cols) {
                    return Err(self.shape_err(
                        id,
                        format!("bound {:?}, declared {}x{}", t.shape(), rows, cols),
                    ));
                }
                t.clone()
            }
            Op::Const(t) => t.clone(),
            Op::Slice {
                src,
                offset,
                rows,
                cols,
            } => {
                let s = v(src);
                let end = offset + rows * cols;
                if end > s.len() {
                    return Err(self.shape_err(
                        id,
                        format!("slice [{offset}, {end}) exceeds source length {}", s.len()),
                    ));
                }
                Tensor::new(*rows, *cols, s.data()[*offset..end].to_vec())
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (x, y) = (v(a), v(b));
                check_broadcast(x, y).map_err(|d| self.shape_err(id, d))?;
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add(..) => |p, q| p + q,
                    Op::Sub(..) => |p, q| p - q,
                    _ => |p, q| p * q,
                };
                let (m, n) = x.shape();
                let mut out = Vec::with_capacity(m * n);
                for r in 0..m {
                    for c in 0..n {
                        out.push(f(x.get(r, c), y.data()[bidx(y, r, c)]));
                    }
                }
                Tensor::new(m, n, out)
            }
            Op::Scale(a, c) => map(v(a), |x| x * c),
            Op::Neg(a) => map(v(a), |x| -x),
            Op::MatMul(a, b) => {
                let (x, y) = (v(a), v(b));
                if x.cols() != y.rows() {
                    return Err(self.shape_err(id, format!("{:?} x {:?}", x.shape(), y.shape())));
                }
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                let mut out = vec![0.0; m * n];
                matmul_acc(x.data(), y.data(), &mut out, m, k, n);
                Tensor::new(m, n, out)
            }
            Op::Tanh(a) => map(v(a), f64::tanh),
            Op::Relu(a) => map(v(a), |x| if x > 0.0 { x } else { 0.0 }),
            Op::Sigmoid(a) => map(v(a), sigmoid),
            Op::Exp(a) => map(v(a), f64::exp),
            Op::Log(a) => map(v(a), f64::ln),
            Op::Abs(a) => map(v(a), f64::abs),
            Op::Softmax(a) => {
                let x = v(a);
                let mut out = x.clone();
                for r in 0..x.rows() {
                    softmax_in_place(&mut out.data_mut()[r * x.cols()..(r + 1) * x.cols()]);
                }
                out
            }
            Op::LogSoftmax(a) => {
                let x = v(a);
                let mut out = x.clone();
                for r in 0..x.rows() {
                    let row = &mut out.data_mut()[r * x.cols()..(r + 1) * x.cols()];
                    let lse = log_sum_exp(row);
                    row.iter_mut().for_each(|z| *z -= lse);
                }
                out
            }
            Op::Pick(a, cols) => {
                let x = v(a);
                if cols.len() != x.rows() {
                    return Err(
                        self.shape_err(id, format!("{} indices for {} rows", cols.len(), x.rows()))
                    );
                }
                let mut out = Vec::with_capacity(cols.len());
                for (r, &c) in cols.iter().enumerate() {
                    if c >= x.cols() {
                        return Err(self.shape_err(id, format!("column {c} out of {}", x.cols())));
                    }
                    out.push(x.get(r, c));
                }
                Tensor::new(cols.len(), 1, out)
            }
            Op::Sum(a) => Tensor::scalar(v(a).data().iter().sum()),
            Op::Concat(a, b) => {
                let (x, y) = (v(a), v(b));
                if x.rows() != y.rows() {
                    return Err(
                        self.shape_err(id, format!("row counts {} and {}", x.rows(), y.rows()))
                    );
                }
                let mut out = Vec::with_capacity(x.len() + y.len());
                for r in 0..x.rows() {
                    out.extend_from_slice(x.row_slice(r));
                    out.extend_from_slice(y.row_slice(r));
                }
                Tensor::new(x.rows(), x.cols() + y.cols(), out)
            }
            Op::Transpose(a) => {
                let x = v(a);
                let (m, n) = x.shape();
                let mut out = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        out[c * m + r] = x.get(r, c);
                    }
                }
                Tensor::new(n, m, out)
            }
        })
    }

    /// Reverse sweep from `output` seeded with `seed` (same shape as output).
    /// Only nodes on a path from some leaf in `wrt` are visited.
    pub fn backward(
        &self,
        values: &Values,
        output: NodeId,
        seed: &Tensor,
        wrt: &[NodeId],
    ) -> Result<Adjoints, DiffError> {
        let out_shape = values.get(output).shape();
        if seed.shape() != out_shape {
            return Err(DiffError::Contract(format!(
                "seed shape {:?} does not match output {} shape {:?}",
                seed.shape(),
                self.describe(output),
                out_shape
            )));
        }
        let n = output.0 + 1;
        let mut live = vec![false; n];
        for &w in wrt {
            if w.0 < n {
                let mask = self.dependency_mask(w);
                for i in 0..n {
                    live[i] |= mask[i];
                }
            }
        }
        let sizes: Vec<usize> = values.tensors.iter().map(Tensor::len).collect();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !live[output.0] {
            return Ok(Adjoints { adj, sizes });
        }
        adj[output.0] = Some(seed.data().to_vec());

        for i in (0..n).rev() {
            if !live[i] {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(&node.op, NodeId(i), &g, values, &live, &mut adj);
            adj[i] = Some(g);
        }
        Ok(Adjoints { adj, sizes })
    }

    fn propagate(
        &self,
        op: &Op,
        id: NodeId,
        g: &[f64],
        values: &Values,
        live: &[bool],
        adj: &mut [Option<Vec<f64>>],
    ) {
        let val = |n: NodeId| values.get(n);
        let y = values.get(id);
        macro_rules! acc {
            ($node:expr) => {{
                let nid: NodeId = $node;
                let len = values.get(nid).len();
                adj[nid.0].get_or_insert_with(|| vec![0.0; len])
            }};
        }
        match op {
            Op::Leaf { .. } | Op::Const(_) => {}
            Op::Slice { src, offset, .. } => {
                if live[src.0] {
                    let d = acc!(*src);
                    for (k, gv) in g.iter().enumerate() {
                        d[offset + k] += gv;
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if live[a.0] {
                    let d = acc!(*a);
                    d.iter_mut().zip(g).for_each(|(x, gv)| *x += gv);
                }
                if live[b.0] {
                    let (m, n) = val(*a).shape();
                    let yb = val(*b);
                    let d = acc!(*b);
                    for r in 0..m {
                        for c in 0..n {
                            d[bidx(yb, r, c)] += sign * g[r * n + c];
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                let (m, n) = xa.shape();
                if live[a.0] {
                    let d = acc!(*a);
                    for r in 0..m {
                        for c in 0..n {
                            d[r * n + c] += g[r * n + c] * xb.data()[bidx(xb, r, c)];
                        }
                    }
                }
                if live[b.0] {
                    let d = acc!(*b);
                    for r in 0..m {
                        for c in 0..n {
                            d[bidx(xb, r, c)] += g[r * n + c] * xa.get(r, c);
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if live[a.0] {
                    let d = acc!(*a);
                    d.iter_mut().zip(g).for_each(|(x, gv)| *x += c * gv);
                }
            }
            Op::Neg(a) => {
                if live[a.0] {
                    let d = acc!(*a);
                    d.iter_mut().zip(g).for_each(|(x, gv)| *x -= gv);
                }
            }
            Op::MatMul(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                let (m, k, n) = (xa.rows(), xa.cols(), xb.cols());
                if live[a.0] {
                    let d = acc!(*a);
                    // dA = G * B^T
                    matmul_bt_acc(g, xb.data(), d, m, n, k);
                }
                if live[b.0] {
                    let d = acc!(*b);
                    // dB = A^T * G
                    matmul_at_acc(xa.data(), g, d, m, k, n);
                }
            }
            Op::Tanh(a) => unary(
                adj,
                live,
                *a,
                values,
                g,
                |_, yv, gv| gv * (1.0 - yv * yv),
                y,
            ),
            Op::Relu(a) => unary(
                adj,
                live,
                *a,
                values,
                g,
                |x, _, gv| if x > 0.0 { gv } else { 0.0 },
                y,
            ),
            Op::Sigmoid(a) => unary(
                adj,
                live,
                *a,
                values,
                g,
                |_, yv, gv| gv * yv * (1.0 - yv),
                y,
            ),
            Op::Exp(a) => unary(adj, live, *a, values, g, |_, yv, gv| gv * yv, y),
            Op::Log(a) => unary(adj, live, *a, values, g, |x, _, gv| gv / x, y),
            Op::Abs(a) => unary(
                adj,
                live,
                *a,
                values,
                g,
                |x, _, gv| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                },
                y,
            ),
            Op::Softmax(a) => {
                if live[a.0] {
                    let n = y.cols();
                    let d = acc!(*a);
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..n {
                            d[r * n + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if live[a.0] {
                    let n = y.cols();
                    let d = acc!(*a);
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = &g[r * n..(r + 1) * n];
                        let gsum: f64 = gr.iter().sum();
                        for c in 0..n {
                            d[r * n + c] += gr[c] - yr[c].exp() * gsum;
                        }
                    }
                }
            }
            Op::Pick(a, cols) => {
                if live[a.0] {
                    let n = val(*a).cols();
                    let d = acc!(*a);
                    for (r, &c) in cols.iter().enumerate() {
                        d[r * n + c] += g[r];
                    }
                }
            }
            Op::Sum(a) => {
                if live[a.0] {
                    let d = acc!(*a);
                    d.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Concat(a, b) => {
                let (na, nb) = (val(*a).cols(), val(*b).cols());
                let rows = val(*a).rows();
                if live[a.0] {
                    let d = acc!(*a);
                    for r in 0..rows {
                        for c in 0..na {
                            d[r * na + c] += g[r * (na + nb) + c];
                        }
                    }
                }
                if live[b.0] {
                    let d = acc!(*b);
                    for r in 0..rows {
                        for c in 0..nb {
                            d[r * nb + c] += g[r * (na + nb) + na + c];
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if live[a.0] {
                    let (m, n) = val(*a).shape();
                    let d = acc!(*a);
                    for r in 0..m {
                        for c in 0..n {
                            d[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
        }
    }

    /// Gradient of a scalar `output` with respect to `wrt`. Zero vector when
    /// the output does not depend on `wrt`.
    pub fn grad(
        &self,
        values: &Values,
        output: NodeId,
        wrt: NodeId,
    ) -> Result<Vec<f64>, DiffError> {
        if values.get(output).shape() != (1, 1) {
            return Err(DiffError::Contract(format!(
                "gradient requested of non-scalar output {} with shape {:?}",
                self.describe(output),
                values.get(output).shape()
            )));
        }
        Ok(self
            .backward(values, output, &Tensor::scalar(1.0), &[wrt])?
            .wrt(wrt))
    }

    /// Gradient of `loss` with respect to `wrt` where `loss` consumes the
    /// parameter-update expressions in `updates`. Every update must be a graph
    /// expression of `wrt` and must feed `loss`; a detached update would
    /// silently produce a zero gradient, so it is rejected.
    pub fn grad_through_update(
        &self,
        values: &Values,
        loss: NodeId,
        updates: &[NodeId],
        wrt: NodeId,
    ) -> Result<Vec<f64>, DiffError> {
        if updates.is_empty() {
            return Err(DiffError::Contract("no update expressions given".into()));
        }
        let from_wrt = self.dependency_mask(wrt);
        for &u in updates {
            if !from_wrt[u.0] {
                return Err(DiffError::DetachedUpdate {
                    update: self.describe(u),
                    wrt: self.describe(wrt),
                });
            }
            if !self.dependency_mask(u)[loss.0] {
                return Err(DiffError::DetachedUpdate {
                    update: format!(
                        "loss {} does not consume {}",
                        self.describe(loss),
                        self.describe(u)
                    ),
                    wrt: self.describe(wrt),
                });
            }
        }
        self.grad(values, loss, wrt)
    }
}

fn unary(
    adj: &mut [Option<Vec<f64>>],
    live: &[bool],
    a: NodeId,
    values: &Values,
    g: &[f64],
    f: impl Fn(f64, f64, f64) -> f64,
    y: &Tensor,
) {
    if !live[a.0] {
        return;
    }
    let x = values.get(a);
    let d = adj[a.0].get_or_insert_with(|| vec![0.0; x.len()]);
    for k in 0..x.len() {
        d[k] += f(x.data()[k], y.data()[k], g[k]);
    }
}

fn check_broadcast(a: &Tensor, b: &Tensor) -> Result<(), String> {
    let ok_r = b.rows() == a.rows() || b.rows() == 1;
    let ok_c = b.cols() == a.cols() || b.cols() == 1;
    if ok_r && ok_c {
        Ok(())
    } else {
        Err(format!(
            "cannot broadcast {:?} onto {:?}",
            b.shape(),
            a.shape()
        ))
    }
}

#[inline]
fn bidx(b: &Tensor, r: usize, c: usize) -> usize {
    let rr = if b.rows() == 1 { 0 } else { r };
    let cc = if b.cols() == 1 { 0 } else { c };
    rr * b.cols() + cc
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.rows(), t.cols(), t.data().iter().map(|&x| f(x)).collect())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    xs.iter_mut().for_each(|x| *x /= s);
}
