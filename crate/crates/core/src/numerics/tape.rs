//! Reverse-mode differentiation over row-major matrices.
//!
//! Every value on the tape is a matrix (vectors are `1 × n` rows). Nodes are
//! appended in evaluation order, so the node list is already topologically
//! sorted and backward is a single reverse sweep.

use std::collections::BTreeMap;

use rand::Rng;

use super::kernels::{gelu, gelu_grad, mm, mm_at, mm_bt};
use super::{NumericsError, ParamId, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    Dropout(NodeId, Vec<T>),
    Softmax(NodeId),
    LayerNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    GatherRows(NodeId, Vec<usize>),
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    NllPick(NodeId, Vec<(usize, usize)>),
    Sum(NodeId),
    SumSquares(NodeId),
    LowRankFrobenius {
        b: NodeId,
        a: NodeId,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients keyed by parameter id, in ascending id order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients<T> {
    by_param: BTreeMap<ParamId, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn new() -> Self {
        Self {
            by_param: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.by_param.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> + '_ {
        self.by_param.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Element-wise accumulate; parameters absent on one side are copied.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (id, g) in &other.by_param {
            match self.by_param.get_mut(id) {
                Some(mine) => {
                    for (m, &o) in mine.iter_mut().zip(g) {
                        *m = *m + o;
                    }
                }
                None => {
                    self.by_param.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn insert(&mut self, id: ParamId, grad: Vec<T>) {
        self.by_param.insert(id, grad);
    }
}

/// Recording of one forward computation.
#[derive(Debug, Clone)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn dims(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn shape_vec(&self, id: NodeId) -> Vec<usize> {
        let (r, c) = self.dims(id);
        vec![r, c]
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Result<NodeId, NumericsError> {
        if rows * cols != value.len() || rows == 0 || cols == 0 {
            return Err(NumericsError::Dimension {
                op: "constant",
                left: vec![rows, cols],
                right: vec![value.len()],
            });
        }
        Ok(self.push(rows, cols, value, Op::Constant, false))
    }

    /// Loads a parameter. It participates in backward only if the tensor
    /// has `requires_grad` set.
    pub fn param(&mut self, id: ParamId, tensor: &Tensor<T>) -> NodeId {
        let (r, c) = tensor.matrix_dims();
        self.push(r, c, tensor.data().to_vec(), Op::Param(id), tensor.requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(NumericsError::Dimension {
                op: "matmul",
                left: self.shape_vec(a),
                right: self.shape_vec(b),
            });
        }
        let out = mm(self.value(a), m, k, self.value(b), n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(NumericsError::Dimension {
                op: "matmul_bt",
                left: self.shape_vec(a),
                right: self.shape_vec(b),
            });
        }
        let out = mm_bt(self.value(a), m, k, self.value(b), n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(m, n, out, Op::MatMulBt(a, b), ng))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.dims(x);
        let v = self.value(x);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let ng = self.needs(x);
        self.push(c, r, out, Op::Transpose(x), ng)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), NumericsError> {
        if self.dims(a) != self.dims(b) {
            return Err(NumericsError::Dimension {
                op,
                left: self.shape_vec(a),
                right: self.shape_vec(b),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let (r, c) = self.dims(a);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, out, Op::Add(a, b), ng))
    }

    /// Adds a `1 × n` row to every row of an `m × n` matrix.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId, NumericsError> {
        let (m, n) = self.dims(x);
        if self.dims(row) != (1, n) {
            return Err(NumericsError::Dimension {
                op: "add_row",
                left: self.shape_vec(x),
                right: self.shape_vec(row),
            });
        }
        let rv = self.value(row);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + rv[i % n])
            .collect();
        let ng = self.needs(x) || self.needs(row);
        Ok(self.push(m, n, out, Op::AddRow(x, row), ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let (r, c) = self.dims(a);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let f = T::from_f64_lossy(factor);
        let out = self.value(x).iter().map(|&v| v * f).collect();
        let (r, c) = self.dims(x);
        let ng = self.needs(x);
        self.push(r, c, out, Op::Scale(x, factor), ng)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).iter().map(|&v| gelu(v)).collect();
        let (r, c) = self.dims(x);
        let ng = self.needs(x);
        self.push(r, c, out, Op::Gelu(x), ng)
    }

    /// Inverted dropout. With `rng == None` (evaluation) this is the identity
    /// and returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: NodeId,
        p: f64,
        rng: Option<&mut R>,
    ) -> Result<NodeId, NumericsError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::Config(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        let Some(rng) = rng else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let (r, c) = self.dims(x);
        let ng = self.needs(x);
        Ok(self.push(r, c, out, Op::Dropout(x, mask), ng))
    }

    /// Row-wise softmax with max subtraction. Rejects non-finite input.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        if self.value(x).iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite("softmax_rows"));
        }
        self.masked_softmax_rows(x, None)
    }

    /// Row-wise softmax where columns with `valid[j] == false` receive exactly
    /// zero probability regardless of their input value.
    pub fn masked_softmax_rows(
        &mut self,
        x: NodeId,
        valid: Option<&[bool]>,
    ) -> Result<NodeId, NumericsError> {
        let (r, c) = self.dims(x);
        if let Some(v) = valid {
            if v.len() != c {
                return Err(NumericsError::Dimension {
                    op: "masked_softmax_rows",
                    left: vec![r, c],
                    right: vec![v.len()],
                });
            }
            if !v.iter().any(|&b| b) {
                return Err(NumericsError::Contract(
                    "softmax mask leaves no valid column".into(),
                ));
            }
        }
        let is_valid = |j: usize| valid.is_none_or(|v| v[j]);
        let xv = self.value(x);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if is_valid(j) {
                    if !v.is_finite() {
                        return Err(NumericsError::NonFinite("masked_softmax_rows"));
                    }
                    max = max.max(v.as_f64());
                }
            }
            let mut total = 0.0f64;
            let mut exps = vec![0.0f64; c];
            for (j, &v) in row.iter().enumerate() {
                if is_valid(j) {
                    let e = (v.as_f64() - max).exp();
                    exps[j] = e;
                    total += e;
                }
            }
            for j in 0..c {
                out[i * c + j] = T::from_f64_lossy(exps[j] / total);
            }
        }
        let ng = self.needs(x);
        Ok(self.push(r, c, out, Op::Softmax(x), ng))
    }

    /// Per-row normalisation to zero mean and unit variance followed by the
    /// affine map `gamma * x̂ + beta`. Statistics accumulate in `f64`.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId, NumericsError> {
        let (m, d) = self.dims(x);
        if self.dims(gamma) != (1, d) || self.dims(beta) != (1, d) {
            return Err(NumericsError::Dimension {
                op: "layer_norm",
                left: self.shape_vec(x),
                right: self.shape_vec(gamma),
            });
        }
        if eps <= 0.0 {
            return Err(NumericsError::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = vec![T::zero(); m * d];
        let mut inv_std = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * d];
        for i in 0..m {
            let row = &xv[i * d..(i + 1) * d];
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
            let var = row
                .iter()
                .map(|v| {
                    let c = v.as_f64() - mean;
                    c * c
                })
                .sum::<f64>()
                / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = T::from_f64_lossy(is);
            for j in 0..d {
                let h = T::from_f64_lossy((row[j].as_f64() - mean) * is);
                xhat[i * d + j] = h;
                out[i * d + j] = g[j] * h + b[j];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            m,
            d,
            out,
            Op::LayerNorm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Selects rows by index; rows may repeat. Used for embedding lookup.
    pub fn gather_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId, NumericsError> {
        let (r, c) = self.dims(x);
        if rows.is_empty() {
            return Err(NumericsError::Contract("gather_rows needs at least one row".into()));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(NumericsError::Index { index: i, len: r });
            }
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let ng = self.needs(x);
        Ok(self.push(rows.len(), c, out, Op::GatherRows(x, rows.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, NumericsError> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > c {
            return Err(NumericsError::Index {
                index: start + len,
                len: c,
            });
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        let ng = self.needs(x);
        Ok(self.push(r, len, out, Op::SliceCols(x, start), ng))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        let Some(&first) = parts.first() else {
            return Err(NumericsError::Contract("concat_cols needs at least one part".into()));
        };
        let r = self.dims(first).0;
        if let Some(&bad) = parts.iter().find(|&&p| self.dims(p).0 != r) {
            return Err(NumericsError::Dimension {
                op: "concat_cols",
                left: self.shape_vec(first),
                right: self.shape_vec(bad),
            });
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(r, total, out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// `−ln p[index]` for a single probability row.
    pub fn nll_pick(&mut self, p: NodeId, index: usize) -> Result<NodeId, NumericsError> {
        let (r, _) = self.dims(p);
        if r != 1 {
            return Err(NumericsError::Dimension {
                op: "nll_pick",
                left: self.shape_vec(p),
                right: vec![1],
            });
        }
        self.nll_pick_rows(p, &[index])
    }

    /// `Σ_i −ln p[i, targets[i]]` over the rows of a probability matrix.
    pub fn nll_pick_rows(&mut self, p: NodeId, targets: &[usize]) -> Result<NodeId, NumericsError> {
        let (r, c) = self.dims(p);
        if targets.len() != r {
            return Err(NumericsError::Dimension {
                op: "nll_pick_rows",
                left: self.shape_vec(p),
                right: vec![targets.len()],
            });
        }
        let pv = self.value(p);
        let mut picks = Vec::with_capacity(r);
        let mut total = 0.0f64;
        for (i, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(NumericsError::Index { index: t, len: c });
            }
            total -= pv[i * c + t].as_f64().ln();
            picks.push((i, t));
        }
        let ng = self.needs(p);
        Ok(self.push(1, 1, vec![T::from_f64_lossy(total)], Op::NllPick(p, picks), ng))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).iter().map(|v| v.as_f64()).sum();
        let ng = self.needs(x);
        self.push(1, 1, vec![T::from_f64_lossy(total)], Op::Sum(x), ng)
    }

    /// `Σ x²`.
    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self
            .value(x)
            .iter()
            .map(|v| {
                let f = v.as_f64();
                f * f
            })
            .sum();
        let ng = self.needs(x);
        self.push(1, 1, vec![T::from_f64_lossy(total)], Op::SumSquares(x), ng)
    }

    /// `‖B·Aᵀ‖_F²` with closed-form gradients `2·B·(AᵀA)` and `2·A·(BᵀB)`.
    pub fn low_rank_frobenius(&mut self, b: NodeId, a: NodeId) -> Result<NodeId, NumericsError> {
        let (d, r) = self.dims(b);
        let (k, r2) = self.dims(a);
        if r != r2 {
            return Err(NumericsError::Dimension {
                op: "low_rank_frobenius",
                left: self.shape_vec(b),
                right: self.shape_vec(a),
            });
        }
        let prod = mm_bt(self.value(b), d, r, self.value(a), k);
        let total: f64 = prod.iter().map(|v| v.as_f64() * v.as_f64()).sum();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            1,
            1,
            vec![T::from_f64_lossy(total)],
            Op::LowRankFrobenius { b, a },
            ng,
        ))
    }

    /// Sums scalar nodes in order.
    pub fn add_scalars(&mut self, terms: &[NodeId]) -> Result<NodeId, NumericsError> {
        let Some((&first, rest)) = terms.split_first() else {
            return Err(NumericsError::Contract("add_scalars needs at least one term".into()));
        };
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from a `1 × 1` loss node. Returns gradients for every
    /// parameter node that was loaded with `requires_grad`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, NumericsError> {
        if self.dims(loss) != (1, 1) {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape_vec(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => {
                    let mut single = Gradients::new();
                    single.insert(*pid, g);
                    out.accumulate(&single);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = node.cols;
                    if self.needs(*a) {
                        let ga = mm_bt(&g, m, n, self.value(*b), k);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = mm_at(self.value(*a), m, k, &g, n);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::MatMulBt(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = node.cols;
                    if self.needs(*a) {
                        let ga = mm(&g, m, n, self.value(*b), k);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = mm_at(&g, m, n, self.value(*a), k);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Transpose(x) => {
                    let (r, c) = self.dims(*x);
                    let mut gx = vec![T::zero(); r * c];
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] = g[j * r + i];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(x, row) => {
                    let n = node.cols;
                    if self.needs(*row) {
                        let mut gr = vec![T::zero(); n];
                        for (i, &v) in g.iter().enumerate() {
                            gr[i % n] = gr[i % n] + v;
                        }
                        accumulate(&mut grads, *row, gr);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.iter().zip(self.value(*b)).map(|(&u, &v)| u * v).collect();
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = g.iter().zip(self.value(*a)).map(|(&u, &v)| u * v).collect();
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Scale(x, f) => {
                    let f = T::from_f64_lossy(*f);
                    accumulate(&mut grads, *x, g.iter().map(|&u| u * f).collect());
                }
                Op::Gelu(x) => {
                    let gx = g
                        .iter()
                        .zip(self.value(*x))
                        .map(|(&u, &v)| u * gelu_grad(v))
                        .collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Dropout(x, mask) => {
                    let gx = g.iter().zip(mask).map(|(&u, &m)| u * m).collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    let (r, c) = (node.rows, node.cols);
                    let y = &node.value;
                    let mut gx = vec![T::zero(); r * c];
                    for i in 0..r {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: f64 = yr
                            .iter()
                            .zip(gr)
                            .map(|(&a, &b)| a.as_f64() * b.as_f64())
                            .sum();
                        let dot = T::from_f64_lossy(dot);
                        for j in 0..c {
                            gx[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (m, d) = (node.rows, node.cols);
                    let gv = self.value(*gamma);
                    if self.needs(*gamma) {
                        let mut gg = vec![T::zero(); d];
                        for i in 0..m {
                            for j in 0..d {
                                gg[j] = gg[j] + g[i * d + j] * xhat[i * d + j];
                            }
                        }
                        accumulate(&mut grads, *gamma, gg);
                    }
                    if self.needs(*beta) {
                        let mut gb = vec![T::zero(); d];
                        for i in 0..m {
                            for j in 0..d {
                                gb[j] = gb[j] + g[i * d + j];
                            }
                        }
                        accumulate(&mut grads, *beta, gb);
                    }
                    if self.needs(*input) {
                        let mut gx = vec![T::zero(); m * d];
                        for i in 0..m {
                            let mut mean_dy = 0.0f64;
                            let mut mean_dy_xhat = 0.0f64;
                            for j in 0..d {
                                let dy = (g[i * d + j] * gv[j]).as_f64();
                                mean_dy += dy;
                                mean_dy_xhat += dy * xhat[i * d + j].as_f64();
                            }
                            mean_dy /= d as f64;
                            mean_dy_xhat /= d as f64;
                            let is = inv_std[i].as_f64();
                            for j in 0..d {
                                let dy = (g[i * d + j] * gv[j]).as_f64();
                                let h = xhat[i * d + j].as_f64();
                                gx[i * d + j] =
                                    T::from_f64_lossy(is * (dy - mean_dy - h * mean_dy_xhat));
                            }
                        }
                        accumulate(&mut grads, *input, gx);
                    }
                }
                Op::GatherRows(x, rows) => {
                    let (r, c) = self.dims(*x);
                    let mut gx = vec![T::zero(); r * c];
                    for (k, &src) in rows.iter().enumerate() {
                        for j in 0..c {
                            gx[src * c + j] = gx[src * c + j] + g[k * c + j];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceCols(x, start) => {
                    let (r, c) = self.dims(*x);
                    let len = node.cols;
                    let mut gx = vec![T::zero(); r * c];
                    for i in 0..r {
                        gx[i * c + start..i * c + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let (r, total) = (node.rows, node.cols);
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.dims(p).1;
                        if self.needs(p) {
                            let mut gp = Vec::with_capacity(r * c);
                            for i in 0..r {
                                gp.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                            }
                            accumulate(&mut grads, p, gp);
                        }
                        offset += c;
                    }
                }
                Op::NllPick(p, picks) => {
                    let (r, c) = self.dims(*p);
                    let pv = self.value(*p);
                    let mut gp = vec![T::zero(); r * c];
                    for &(i, t) in picks {
                        let idx = i * c + t;
                        gp[idx] = gp[idx] - g[0] / pv[idx];
                    }
                    accumulate(&mut grads, *p, gp);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
                Op::SumSquares(x) => {
                    let two = T::from_f64_lossy(2.0);
                    let gx = self.value(*x).iter().map(|&v| two * v * g[0]).collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::LowRankFrobenius { b, a } => {
                    let (d, r) = self.dims(*b);
                    let (k, _) = self.dims(*a);
                    let scale = T::from_f64_lossy(2.0) * g[0];
                    if self.needs(*b) {
                        let ata = mm_at(self.value(*a), k, r, self.value(*a), r);
                        let gb = mm(self.value(*b), d, r, &ata, r)
                            .into_iter()
                            .map(|v| v * scale)
                            .collect();
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.needs(*a) {
                        let btb = mm_at(self.value(*b), d, r, self.value(*b), r);
                        let ga = mm(self.value(*a), k, r, &btb, r)
                            .into_iter()
                            .map(|v| v * scale)
                            .collect();
                        accumulate(&mut grads, *a, ga);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], id: NodeId, g: Vec<T>) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(g) {
                *e = *e + v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
