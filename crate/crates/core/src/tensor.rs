//! Dense tensor graph with reverse-mode automatic differentiation.
//!
//! A `Graph` is a Wengert tape: ops append nodes during the forward pass
//! and `backward` walks the tape in reverse, accumulating gradients into
//! every leaf created with `requires_grad = true`. One graph is built per
//! batch and dropped afterwards; parameters live outside the graph and
//! are bound as leaves each step.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;

/// Handle to a node in a `Graph`. Only meaningful for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Train/eval switch; controls dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Sigmoid,
    Tanh,
    Relu,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Hadamard,
}

enum Op<T> {
    Leaf,
    Matmul(Var, Var),
    /// W[m,k] * x[k] -> [m]
    MatVec(Var, Var),
    Concat(Vec<Var>, usize),
    /// n vectors of length d stacked as columns of a [d, n] matrix.
    StackCols(Vec<Var>),
    RowMax {
        input: Var,
        argmax: Vec<usize>,
    },
    Unary(UnaryKind, Var),
    Binary(BinaryKind, Var, Var),
    Scale(Var, T),
    Slice {
        input: Var,
        start: usize,
    },
    /// One row of a [v, d] matrix.
    Row {
        table: Var,
        index: usize,
    },
    SoftmaxCe {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
}

struct Node<T> {
    data: Vec<T>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, data: Vec<T>, shape: Vec<usize>, requires_grad: bool, op: Op<T>) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node { data, shape, requires_grad, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(Error::Dimension {
                op: "leaf",
                detail: format!("shape {:?} implies {} elements, got {}", shape, numel(&shape), data.len()),
            });
        }
        Ok(self.push(data, shape, requires_grad, Op::Leaf))
    }

    pub fn constant(&mut self, data: Vec<T>, shape: Vec<usize>) -> Result<Var> {
        self.leaf(data, shape, false)
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Var {
        let n = numel(&shape);
        self.push(vec![T::zero(); n], shape, false, Op::Leaf)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.push(vec![v], vec![1], false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// NaN/Inf detection; values are never silently propagated past a call site
    /// that checks this.
    pub fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        if self.nodes[v.0].data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value in {what}")));
        }
        Ok(())
    }

    // ---- ops ---------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                detail: format!("lhs shape {:?} incompatible with rhs shape {:?}", sa, sb),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        {
            let da = &self.nodes[a.0].data;
            let db = &self.nodes[b.0].data;
            for i in 0..m {
                for p in 0..k {
                    let aip = da[i * k + p];
                    for j in 0..n {
                        out[i * n + j] += aip * db[p * n + j];
                    }
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, vec![m, n], rg, Op::Matmul(a, b)))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (sw, sx) = (self.shape(w).to_vec(), self.shape(x).to_vec());
        if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
            return Err(Error::Dimension {
                op: "matvec",
                detail: format!("matrix shape {:?} incompatible with vector shape {:?}", sw, sx),
            });
        }
        let (m, k) = (sw[0], sw[1]);
        let mut out = vec![T::zero(); m];
        {
            let dw = &self.nodes[w.0].data;
            let dx = &self.nodes[x.0].data;
            for i in 0..m {
                let row = &dw[i * k..(i + 1) * k];
                let mut acc = T::zero();
                for j in 0..k {
                    acc += row[j] * dx[j];
                }
                out[i] = acc;
            }
        }
        let rg = self.rg(w) || self.rg(x);
        Ok(self.push(out, vec![m], rg, Op::MatVec(w, x)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension { op: "concat", detail: "empty part list".into() });
        }
        let rank = self.shape(parts[0]).len();
        if axis >= rank {
            return Err(Error::Dimension {
                op: "concat",
                detail: format!("axis {axis} out of range for rank {rank}"),
            });
        }
        let mut out_shape = self.shape(parts[0]).to_vec();
        let mut axis_total = 0usize;
        for &p in parts {
            let sp = self.shape(p);
            if sp.len() != rank {
                return Err(Error::Dimension {
                    op: "concat",
                    detail: format!("rank mismatch: {:?} vs {:?}", out_shape, sp),
                });
            }
            for d in 0..rank {
                if d != axis && sp[d] != out_shape[d] {
                    return Err(Error::Dimension {
                        op: "concat",
                        detail: format!("part shape {:?} differs from {:?} off the concat axis", sp, out_shape),
                    });
                }
            }
            axis_total += sp[axis];
        }
        out_shape[axis] = axis_total;

        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut out = vec![T::zero(); numel(&out_shape)];
        let out_stride = axis_total * inner;
        let mut offset = 0usize;
        for &p in parts {
            let pa = self.shape(p)[axis];
            let block = pa * inner;
            let data = &self.nodes[p.0].data;
            for o in 0..outer {
                let src = &data[o * block..(o + 1) * block];
                let dst_start = o * out_stride + offset * inner;
                out[dst_start..dst_start + block].copy_from_slice(src);
            }
            offset += pa;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, out_shape, rg, Op::Concat(parts.to_vec(), axis)))
    }

    pub fn stack_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension { op: "stack_cols", detail: "empty part list".into() });
        }
        let d = self.shape(parts[0])[0];
        for &p in parts {
            let sp = self.shape(p);
            if sp.len() != 1 || sp[0] != d {
                return Err(Error::Dimension {
                    op: "stack_cols",
                    detail: format!("expected vectors of length {d}, got shape {:?}", sp),
                });
            }
        }
        let n = parts.len();
        let mut out = vec![T::zero(); d * n];
        for (t, &p) in parts.iter().enumerate() {
            let data = &self.nodes[p.0].data;
            for j in 0..d {
                out[j * n + t] = data[j];
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, vec![d, n], rg, Op::StackCols(parts.to_vec())))
    }

    /// Row-wise max over the first `valid_len` columns of a [d, n] matrix.
    /// Returns the pooled vector and the (0-based) earliest argmax column
    /// per row; the backward pass routes gradient only to those positions.
    pub fn row_max(&mut self, h: Var, valid_len: usize) -> Result<(Var, Vec<usize>)> {
        let sh = self.shape(h).to_vec();
        if sh.len() != 2 {
            return Err(Error::Dimension {
                op: "row_max",
                detail: format!("expected matrix, got shape {:?}", sh),
            });
        }
        let (d, n) = (sh[0], sh[1]);
        if valid_len == 0 {
            return Err(Error::EmptySequence("row_max over zero valid time steps"));
        }
        if valid_len > n {
            return Err(Error::Dimension {
                op: "row_max",
                detail: format!("valid_len {valid_len} exceeds {n} columns"),
            });
        }
        let mut out = vec![T::zero(); d];
        let mut argmax = vec![0usize; d];
        {
            let data = &self.nodes[h.0].data;
            for j in 0..d {
                let mut best = data[j * n];
                let mut best_t = 0usize;
                for t in 1..valid_len {
                    let v = data[j * n + t];
                    if v > best {
                        best = v;
                        best_t = t;
                    }
                }
                out[j] = best;
                argmax[j] = best_t;
            }
        }
        let rg = self.rg(h);
        let var = self.push(out, vec![d], rg, Op::RowMax { input: h, argmax: argmax.clone() });
        Ok((var, argmax))
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let out: Vec<T> = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| match kind {
                UnaryKind::Sigmoid => T::one() / (T::one() + (-v).exp()),
                UnaryKind::Tanh => v.tanh(),
                UnaryKind::Relu => {
                    if v > T::zero() {
                        v
                    } else {
                        T::zero()
                    }
                }
                UnaryKind::Abs => v.abs(),
            })
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(x);
        self.push(out, shape, rg, Op::Unary(kind, x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh_act(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn abs_act(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Abs, x)
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op: match kind {
                    BinaryKind::Add => "add",
                    BinaryKind::Sub => "sub",
                    BinaryKind::Hadamard => "hadamard",
                },
                detail: format!("lhs shape {:?} vs rhs shape {:?}", self.shape(a), self.shape(b)),
            });
        }
        let out: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(self.nodes[b.0].data.iter())
            .map(|(&x, &y)| match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Hadamard => x * y,
            })
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, shape, rg, Op::Binary(kind, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Hadamard, a, b)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out: Vec<T> = self.nodes[x.0].data.iter().map(|&v| v * c).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(x);
        self.push(out, shape, rg, Op::Scale(x, c))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 1 || start + len > sx[0] {
            return Err(Error::Dimension {
                op: "slice",
                detail: format!("range {start}..{} out of shape {:?}", start + len, sx),
            });
        }
        let out = self.nodes[x.0].data[start..start + len].to_vec();
        let rg = self.rg(x);
        Ok(self.push(out, vec![len], rg, Op::Slice { input: x, start }))
    }

    pub fn row(&mut self, table: Var, index: usize) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(Error::Dimension {
                op: "row",
                detail: format!("expected matrix, got shape {:?}", st),
            });
        }
        let (v, d) = (st[0], st[1]);
        if index >= v {
            return Err(Error::Index {
                op: "row",
                detail: format!("row {index} out of {v}"),
            });
        }
        let out = self.nodes[table.0].data[index * d..(index + 1) * d].to_vec();
        let rg = self.rg(table);
        Ok(self.push(out, vec![d], rg, Op::Row { table, index }))
    }

    /// Numerically stable cross-entropy of softmax(logits) against a class
    /// index. Scalar output; backward is softmax(logits) - onehot(label).
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let sx = self.shape(logits);
        if sx.len() != 1 {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                detail: format!("expected vector of logits, got shape {:?}", sx),
            });
        }
        let c = sx[0];
        if label >= c {
            return Err(Error::Index {
                op: "softmax_cross_entropy",
                detail: format!("label {label} out of {c} classes"),
            });
        }
        let data = &self.nodes[logits.0].data;
        let max = data.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut probs: Vec<T> = data.iter().map(|&v| (v - max).exp()).collect();
        let sum = probs.iter().cloned().fold(T::zero(), |a, b| a + b);
        for p in probs.iter_mut() {
            *p /= sum;
        }
        let loss = -(data[label] - max - sum.ln());
        let rg = self.rg(logits);
        Ok(self.push(vec![loss], vec![1], rg, Op::SoftmaxCe { logits, label, probs }))
    }

    /// Inverted dropout: train mode zeroes each element with probability
    /// `rate` and scales survivors by 1/(1-rate); eval mode is the identity.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} must be in [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.nodes[x.0].data.len())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep_scale })
            .collect();
        let out: Vec<T> = self.nodes[x.0].data.iter().zip(mask.iter()).map(|(&v, &m)| v * m).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(x);
        Ok(self.push(out, shape, rg, Op::Dropout { input: x, mask }))
    }

    // ---- backward ----------------------------------------------------

    pub fn zero_grads(&mut self) {
        for g in self.grads.iter_mut() {
            *g = None;
        }
    }

    fn accumulate(&mut self, v: Var, delta: &[T]) {
        let slot = &mut self.grads[v.0];
        match slot {
            Some(g) => {
                for (gi, &di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Reverse sweep from a scalar root. Gradients accumulate (sum) into
    /// every node with `requires_grad`; read them with `grad`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].data.len() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                detail: format!("root must be scalar, got shape {:?}", self.shape(root)),
            });
        }
        self.grads[root.0] = Some(vec![T::one()]);
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let upstream = match self.grads[idx].clone() {
                Some(g) => g,
                None => continue,
            };
            // Temporarily take the op to appease the borrow checker.
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.backprop_node(idx, &op, &upstream);
            self.nodes[idx].op = op;
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, op: &Op<T>, dy: &[T]) {
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.rg(*a) {
                    let db = &self.nodes[b.0].data;
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = dy[i * n + j];
                            for p in 0..k {
                                da[i * k + p] += g * db[p * n + j];
                            }
                        }
                    }
                    self.accumulate(*a, &da);
                }
                if self.rg(*b) {
                    let da_ = &self.nodes[a.0].data;
                    let mut dbg = vec![T::zero(); k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = da_[i * k + p];
                            for j in 0..n {
                                dbg[p * n + j] += aip * dy[i * n + j];
                            }
                        }
                    }
                    self.accumulate(*b, &dbg);
                }
            }
            Op::MatVec(w, x) => {
                let (m, k) = (self.nodes[w.0].shape[0], self.nodes[w.0].shape[1]);
                if self.rg(*w) {
                    let dx_ = &self.nodes[x.0].data;
                    let mut dw = vec![T::zero(); m * k];
                    for i in 0..m {
                        let g = dy[i];
                        for j in 0..k {
                            dw[i * k + j] = g * dx_[j];
                        }
                    }
                    self.accumulate(*w, &dw);
                }
                if self.rg(*x) {
                    let dw_ = &self.nodes[w.0].data;
                    let mut dxg = vec![T::zero(); k];
                    for i in 0..m {
                        let g = dy[i];
                        for j in 0..k {
                            dxg[j] += dw_[i * k + j] * g;
                        }
                    }
                    self.accumulate(*x, &dxg);
                }
            }
            Op::Concat(parts, axis) => {
                let out_shape = self.nodes[idx].shape.clone();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let out_stride = out_shape[*axis] * inner;
                let mut offset = 0usize;
                for &p in parts {
                    let pa = self.nodes[p.0].shape[*axis];
                    let block = pa * inner;
                    if self.rg(p) {
                        let mut dp = vec![T::zero(); self.nodes[p.0].data.len()];
                        for o in 0..outer {
                            let src_start = o * out_stride + offset * inner;
                            dp[o * block..(o + 1) * block]
                                .copy_from_slice(&dy[src_start..src_start + block]);
                        }
                        self.accumulate(p, &dp);
                    }
                    offset += pa;
                }
            }
            Op::StackCols(parts) => {
                let d = self.nodes[parts[0].0].shape[0];
                let n = parts.len();
                for (t, &p) in parts.iter().enumerate() {
                    if self.rg(p) {
                        let mut dp = vec![T::zero(); d];
                        for j in 0..d {
                            dp[j] = dy[j * n + t];
                        }
                        self.accumulate(p, &dp);
                    }
                }
            }
            Op::RowMax { input, argmax } => {
                if self.rg(*input) {
                    let n = self.nodes[input.0].shape[1];
                    let mut di = vec![T::zero(); self.nodes[input.0].data.len()];
                    for (j, &t) in argmax.iter().enumerate() {
                        di[j * n + t] = dy[j];
                    }
                    self.accumulate(*input, &di);
                }
            }
            Op::Unary(kind, x) => {
                if self.rg(*x) {
                    let y = &self.nodes[idx].data;
                    let xin = &self.nodes[x.0].data;
                    let dx: Vec<T> = match kind {
                        UnaryKind::Sigmoid => y
                            .iter()
                            .zip(dy)
                            .map(|(&s, &g)| g * s * (T::one() - s))
                            .collect(),
                        UnaryKind::Tanh => y
                            .iter()
                            .zip(dy)
                            .map(|(&t, &g)| g * (T::one() - t * t))
                            .collect(),
                        UnaryKind::Relu => xin
                            .iter()
                            .zip(dy)
                            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                            .collect(),
                        // sign(0) := 0
                        UnaryKind::Abs => xin
                            .iter()
                            .zip(dy)
                            .map(|(&v, &g)| {
                                if v > T::zero() {
                                    g
                                } else if v < T::zero() {
                                    -g
                                } else {
                                    T::zero()
                                }
                            })
                            .collect(),
                    };
                    self.accumulate(*x, &dx);
                }
            }
            Op::Binary(kind, a, b) => {
                match kind {
                    BinaryKind::Add => {
                        if self.rg(*a) {
                            self.accumulate(*a, dy);
                        }
                        if self.rg(*b) {
                            self.accumulate(*b, dy);
                        }
                    }
                    BinaryKind::Sub => {
                        if self.rg(*a) {
                            self.accumulate(*a, dy);
                        }
                        if self.rg(*b) {
                            let neg: Vec<T> = dy.iter().map(|&g| -g).collect();
                            self.accumulate(*b, &neg);
                        }
                    }
                    BinaryKind::Hadamard => {
                        if self.rg(*a) {
                            let db = &self.nodes[b.0].data;
                            let da: Vec<T> = dy.iter().zip(db).map(|(&g, &v)| g * v).collect();
                            self.accumulate(*a, &da);
                        }
                        if self.rg(*b) {
                            let da_ = &self.nodes[a.0].data;
                            let dbg: Vec<T> = dy.iter().zip(da_).map(|(&g, &v)| g * v).collect();
                            self.accumulate(*b, &dbg);
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                if self.rg(*x) {
                    let dx: Vec<T> = dy.iter().map(|&g| g * *c).collect();
                    self.accumulate(*x, &dx);
                }
            }
            Op::Slice { input, start } => {
                if self.rg(*input) {
                    let mut di = vec![T::zero(); self.nodes[input.0].data.len()];
                    di[*start..*start + dy.len()].copy_from_slice(dy);
                    self.accumulate(*input, &di);
                }
            }
            Op::Row { table, index } => {
                if self.rg(*table) {
                    let d = self.nodes[table.0].shape[1];
                    let mut dt = vec![T::zero(); self.nodes[table.0].data.len()];
                    dt[*index * d..(*index + 1) * d].copy_from_slice(dy);
                    self.accumulate(*table, &dt);
                }
            }
            Op::SoftmaxCe { logits, label, probs } => {
                if self.rg(*logits) {
                    let g = dy[0];
                    let dl: Vec<T> = probs
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| {
                            let onehot = if i == *label { T::one() } else { T::zero() };
                            g * (p - onehot)
                        })
                        .collect();
                    self.accumulate(*logits, &dl);
                }
            }
            Op::Dropout { input, mask } => {
                if self.rg(*input) {
                    let di: Vec<T> = dy.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                    self.accumulate(*input, &di);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_identity() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2], false).unwrap();
        let b = g.leaf(vec![2.0, 3.0], vec![2, 1], false).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[2.0, 3.0]);
    }

    #[test]
    fn matmul_hand() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(vec![1.0, 2.0], vec![1, 2], false).unwrap();
        let b = g.leaf(vec![3.0, 4.0], vec![2, 1], false).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(vec![0.0; 6], vec![2, 3], false).unwrap();
        let b = g.leaf(vec![0.0; 4], vec![2, 2], false).unwrap();
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn concat_last_axis() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(vec![1.0, 2.0], vec![1, 2], false).unwrap();
        let b = g.leaf(vec![3.0], vec![1, 1], false).unwrap();
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c), &[1.0, 2.0, 3.0]);
        assert_eq!(g.shape(c), &[1, 3]);
    }

    #[test]
    fn concat_single_is_identity() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(vec![1.0, 2.0, 3.0], vec![3], false).unwrap();
        let c = g.concat(&[a], 0).unwrap();
        assert_eq!(g.value(c), g.value(a));
    }

    #[test]
    fn concat_dim_arithmetic() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.zeros(vec![300]);
        let b = g.zeros(vec![1024]);
        let c = g.zeros(vec![2048]);
        let out = g.concat(&[a, b, c], 0).unwrap();
        assert_eq!(g.shape(out), &[3372]);
    }

    #[test]
    fn concat_empty_list_errors() {
        let mut g: Graph<f64> = Graph::new();
        assert!(g.concat(&[], 0).is_err());
    }

    #[test]
    fn row_max_hand() {
        let mut g: Graph<f64> = Graph::new();
        let h = g.leaf(vec![1.0, 5.0, 3.0, 4.0, 2.0, 0.0], vec![2, 3], false).unwrap();
        let (v, argmax) = g.row_max(h, 3).unwrap();
        assert_eq!(g.value(v), &[5.0, 4.0]);
        assert_eq!(argmax, vec![1, 0]);
    }

    #[test]
    fn row_max_masked() {
        let mut g: Graph<f64> = Graph::new();
        let h = g.leaf(vec![1.0, 5.0, 3.0, 4.0, 2.0, 0.0], vec![2, 3], false).unwrap();
        let (v, _) = g.row_max(h, 1).unwrap();
        assert_eq!(g.value(v), &[1.0, 4.0]);
    }

    #[test]
    fn row_max_zero_len_errors() {
        let mut g: Graph<f64> = Graph::new();
        let h = g.zeros(vec![2, 3]);
        assert!(g.row_max(h, 0).is_err());
    }

    #[test]
    fn row_max_permutation_invariant() {
        let mut g: Graph<f64> = Graph::new();
        let h1 = g.leaf(vec![1.0, 5.0, 3.0], vec![1, 3], false).unwrap();
        let h2 = g.leaf(vec![3.0, 1.0, 5.0], vec![1, 3], false).unwrap();
        let (v1, _) = g.row_max(h1, 3).unwrap();
        let (v2, _) = g.row_max(h2, 3).unwrap();
        assert_eq!(g.value(v1), g.value(v2));
    }

    #[test]
    fn relu_and_hadamard_hand() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(vec![-1.0, 2.0], vec![2], false).unwrap();
        let r = g.relu(x);
        assert_eq!(g.value(r), &[0.0, 2.0]);
        let a = g.leaf(vec![1.0, 2.0], vec![2], false).unwrap();
        let b = g.leaf(vec![3.0, 1.0], vec![2], false).unwrap();
        let h = g.hadamard(a, b).unwrap();
        assert_eq!(g.value(h), &[3.0, 2.0]);
    }

    #[test]
    fn softmax_ce_uniform() {
        let mut g: Graph<f64> = Graph::new();
        let l = g.leaf(vec![0.0, 0.0, 0.0], vec![3], false).unwrap();
        let loss = g.softmax_cross_entropy(l, 0).unwrap();
        assert!((g.value(loss)[0] - 3.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_stable_for_large_logits() {
        let mut g: Graph<f64> = Graph::new();
        let l = g.leaf(vec![1000.0, 0.0, 0.0], vec![3], false).unwrap();
        let loss = g.softmax_cross_entropy(l, 0).unwrap();
        assert!(g.value(loss)[0].is_finite());
        assert!(g.value(loss)[0] < 1e-6);
        let l2 = g.leaf(vec![1e4, -1e4, 0.0], vec![3], false).unwrap();
        let loss2 = g.softmax_cross_entropy(l2, 1).unwrap();
        assert!(g.value(loss2)[0].is_finite());
    }

    #[test]
    fn softmax_ce_label_out_of_range() {
        let mut g: Graph<f64> = Graph::new();
        let l = g.zeros(vec![3]);
        assert!(g.softmax_cross_entropy(l, 3).is_err());
    }

    #[test]
    fn dropout_rate_zero_and_eval_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(vec![1.0, 2.0, 3.0], vec![3], false).unwrap();
        let a = g.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(a, x);
        let b = g.dropout(x, 0.9, Mode::Eval, &mut rng).unwrap();
        assert_eq!(b, x);
    }

    #[test]
    fn dropout_rate_one_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g: Graph<f64> = Graph::new();
        let x = g.zeros(vec![3]);
        assert!(g.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_empirical_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g: Graph<f64> = Graph::new();
        let n = 100_000;
        let x = g.leaf(vec![1.0; n], vec![n], false).unwrap();
        let y = g.dropout(x, 0.1, Mode::Train, &mut rng).unwrap();
        let zeros = g.value(y).iter().filter(|&&v| v == 0.0).count();
        let frac = zeros as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.01, "zero fraction {frac}");
    }

    #[test]
    fn gradient_accumulates_over_shared_paths() {
        // f = x*x + x  => df/dx = 2x + 1 through two paths into the same leaf
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(vec![3.0], vec![1], true).unwrap();
        let sq = g.hadamard(x, x).unwrap();
        let f = g.add(sq, x).unwrap();
        g.backward(f).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[7.0]);
    }

    #[test]
    fn concat_backward_splits_gradient() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(vec![1.0, 2.0], vec![2], true).unwrap();
        let b = g.leaf(vec![3.0], vec![1], true).unwrap();
        let c = g.concat(&[a, b], 0).unwrap();
        let w = g.leaf(vec![10.0, 20.0, 30.0], vec![3], false).unwrap();
        let p = g.hadamard(c, w).unwrap();
        let ones = g.leaf(vec![1.0, 1.0, 1.0], vec![1, 3], false).unwrap();
        let col = g.stack_cols(&[p]).unwrap(); // [3,1]
        let s = g.matmul(ones, col).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[10.0, 20.0]);
        assert_eq!(g.grad(b).unwrap(), &[30.0]);
    }
}
