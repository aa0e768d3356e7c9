//! Tape-recorded dense tensors with reverse-mode differentiation.
//!
//! A [`Graph`] records one forward pass. Every operation appends a node
//! holding its value, and [`Graph::backward`] walks the nodes in reverse
//! creation order, which is a valid topological order because a node can
//! only consume nodes created before it. Tensors are 2-D and row-major;
//! vectors are `1 x n` rows and scalars are `1 x 1`.
//!
//! Trainable weights live outside the graph in [`Param`]s. Reading a
//! param into a graph creates a leaf tagged with the param's id, and
//! [`Param::accumulate`] folds the leaf gradients back after backward.

use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::sync::atomic::{AtomicU64, Ordering};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point type a graph computes in.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable")
}

static NEXT_PARAM: AtomicU64 = AtomicU64::new(1);
static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

/// A trainable weight block with its accumulated gradient.
///
/// Every `Param` gets a process-unique id, including clones, so two
/// networks can never share a block through the tape.
#[derive(Debug)]
pub struct Param<T> {
    id: ParamId,
    name: String,
    rows: usize,
    cols: usize,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, value: Vec<T>) -> Result<Self> {
        let name = name.into();
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "param `{name}` must have positive shape, got {rows}x{cols}"
            )));
        }
        if value.len() != rows * cols {
            return Err(Error::dim("Param::new", rows * cols, value.len()));
        }
        Ok(Param {
            id: ParamId(NEXT_PARAM.fetch_add(1, Ordering::Relaxed)),
            name,
            rows,
            cols,
            grad: vec![T::zero(); value.len()],
            value,
        })
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Result<Self> {
        Self::new(name, rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Adds the gradient this param received in `graph` into `self.grad`.
    pub fn accumulate(&mut self, graph: &Graph<T>) {
        if let Some(g) = graph.param_grad(self.id) {
            for (acc, d) in self.grad.iter_mut().zip(g) {
                *acc = *acc + d;
            }
        }
    }
}

impl<T: Real> Clone for Param<T> {
    fn clone(&self) -> Self {
        Param {
            id: ParamId(NEXT_PARAM.fetch_add(1, Ordering::Relaxed)),
            name: self.name.clone(),
            rows: self.rows,
            cols: self.cols,
            value: self.value.clone(),
            grad: self.grad.clone(),
        }
    }
}

/// Anything that owns trainable params in a fixed declared order.
pub trait Parameterized<T> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn zero_grads(&mut self)
    where
        T: Real,
    {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn accumulate_grads(&mut self, graph: &Graph<T>)
    where
        T: Real,
    {
        for p in self.params_mut() {
            p.accumulate(graph);
        }
    }

    fn num_params(&self) -> usize
    where
        T: Real,
    {
        self.params().iter().map(|p| p.len()).sum()
    }
}

impl<T> Parameterized<T> for Vec<Param<T>> {
    fn params(&self) -> Vec<&Param<T>> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.iter_mut().collect()
    }
}

/// Handle to a node of one particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    idx: usize,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Linear { x: usize, w: usize, b: usize },
    Relu(usize),
    Sigmoid(usize),
    Add(usize, usize),
    Scale(usize, T),
    ConcatCols(usize, usize),
    PairConcat(usize, usize),
    Reshape(usize),
    GatherRows { table: usize, ids: Vec<usize> },
    CosineRows { a: usize, b: usize, eps: T },
    SoftmaxRows(usize),
    Bce { scores: usize, targets: Vec<usize>, positive_only: bool, eps: T },
    Nll { probs: usize, targets: Vec<usize>, eps: T },
    Mean(usize),
    Sum(usize),
    Dot(usize, usize),
}

#[derive(Debug, Clone)]
struct Meta<T> {
    rows: usize,
    cols: usize,
    op: Op<T>,
    requires_grad: bool,
}

/// One recorded forward pass.
#[derive(Debug)]
pub struct Graph<T> {
    id: u64,
    record: bool,
    meta: Vec<Meta<T>>,
    values: Vec<Vec<T>>,
    grads: Vec<Vec<T>>,
    param_leaves: HashMap<ParamId, Vec<usize>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// A graph that records gradients.
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            record: true,
            meta: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    /// A graph for inference: nothing requires grad and backward fails.
    pub fn inference() -> Self {
        Graph {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.idx >= self.meta.len() {
            return Err(Error::InvalidArgument(
                "variable does not belong to this graph".into(),
            ));
        }
        Ok(v.idx)
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        let idx = self.meta.len();
        self.meta.push(Meta {
            rows,
            cols,
            op,
            requires_grad: requires_grad && self.record,
        });
        self.values.push(value);
        self.grads.push(Vec::new());
        Var { graph: self.id, idx }
    }

    fn rg(&self, i: usize) -> bool {
        self.meta[i].requires_grad
    }

    pub fn shape(&self, v: Var) -> Result<(usize, usize)> {
        let i = self.idx(v)?;
        Ok((self.meta[i].rows, self.meta[i].cols))
    }

    pub fn value(&self, v: Var) -> Result<&[T]> {
        let i = self.idx(v)?;
        Ok(&self.values[i])
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> Result<T> {
        let i = self.idx(v)?;
        if self.values[i].len() != 1 {
            return Err(Error::dim("scalar", "1x1", format!("{}x{}", self.meta[i].rows, self.meta[i].cols)));
        }
        Ok(self.values[i][0])
    }

    /// Gradient of a node after backward; zeros if it received none.
    pub fn grad(&self, v: Var) -> Result<Vec<T>> {
        let i = self.idx(v)?;
        if self.grads[i].is_empty() {
            Ok(vec![T::zero(); self.values[i].len()])
        } else {
            Ok(self.grads[i].clone())
        }
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.rg(self.idx(v)?))
    }

    /// Summed gradient of every leaf that read `id`, if any did.
    pub fn param_grad(&self, id: ParamId) -> Option<Vec<T>> {
        let leaves = self.param_leaves.get(&id)?;
        let mut out: Option<Vec<T>> = None;
        for &l in leaves {
            if self.grads[l].is_empty() {
                continue;
            }
            match &mut out {
                None => out = Some(self.grads[l].clone()),
                Some(acc) => acc.iter_mut().zip(&self.grads[l]).for_each(|(a, g)| *a = *a + *g),
            }
        }
        out
    }

    /// Leaf that does not require grad.
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Result<Var> {
        if value.len() != rows * cols {
            return Err(Error::dim("constant", rows * cols, value.len()));
        }
        Ok(self.push(rows, cols, value, Op::Leaf, false))
    }

    /// Leaf that requires grad but is not tied to a [`Param`].
    pub fn variable(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Result<Var> {
        if value.len() != rows * cols {
            return Err(Error::dim("variable", rows * cols, value.len()));
        }
        Ok(self.push(rows, cols, value, Op::Leaf, true))
    }

    /// Reads a param into the graph.
    pub fn param(&mut self, p: &Param<T>) -> Var {
        let v = self.push(p.rows, p.cols, p.value.clone(), Op::Leaf, true);
        self.param_leaves.entry(p.id).or_default().push(v.idx);
        v
    }

    /// Copy of `v` with the gradient path cut.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let i = self.idx(v)?;
        let (r, c) = (self.meta[i].rows, self.meta[i].cols);
        let value = self.values[i].clone();
        Ok(self.push(r, c, value, Op::Leaf, false))
    }

    /// `x · wᵀ + b` for `x: B×in`, `w: out×in`, `b: 1×out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (rows, inp) = (self.meta[xi].rows, self.meta[xi].cols);
        let (out, w_in) = (self.meta[wi].rows, self.meta[wi].cols);
        if w_in != inp {
            return Err(Error::dim("linear", format!("input width {w_in}"), format!("input width {inp}")));
        }
        if self.meta[bi].rows * self.meta[bi].cols != out {
            return Err(Error::dim("linear", format!("bias length {out}"), self.values[bi].len()));
        }
        let (xv, wv, bv) = (&self.values[xi], &self.values[wi], &self.values[bi]);
        let mut y = Vec::with_capacity(rows * out);
        for r in 0..rows {
            let xr = &xv[r * inp..(r + 1) * inp];
            for o in 0..out {
                let wr = &wv[o * inp..(o + 1) * inp];
                let mut acc = bv[o];
                for (a, b) in xr.iter().zip(wr) {
                    acc = acc + *a * *b;
                }
                y.push(acc);
            }
        }
        let rg = self.rg(xi) || self.rg(wi) || self.rg(bi);
        Ok(self.push(rows, out, y, Op::Linear { x: xi, w: wi, b: bi }, rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let y = self.values[ai].iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let (r, c) = (self.meta[ai].rows, self.meta[ai].cols);
        Ok(self.push(r, c, y, Op::Relu(ai), self.rg(ai)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let y = self.values[ai].iter().map(|&v| sigmoid(v)).collect();
        let (r, c) = (self.meta[ai].rows, self.meta[ai].cols);
        Ok(self.push(r, c, y, Op::Sigmoid(ai), self.rg(ai)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let sa = (self.meta[ai].rows, self.meta[ai].cols);
        let sb = (self.meta[bi].rows, self.meta[bi].cols);
        if sa != sb {
            return Err(Error::dim("add", format!("{}x{}", sa.0, sa.1), format!("{}x{}", sb.0, sb.1)));
        }
        let y = self.values[ai].iter().zip(&self.values[bi]).map(|(x, y)| *x + *y).collect();
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(sa.0, sa.1, y, Op::Add(ai, bi), rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let ai = self.idx(a)?;
        let y = self.values[ai].iter().map(|&v| v * factor).collect();
        let (r, c) = (self.meta[ai].rows, self.meta[ai].cols);
        Ok(self.push(r, c, y, Op::Scale(ai, factor), self.rg(ai)))
    }

    /// Row-wise concatenation `[a | b]` of `B×p` and `B×q`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (rows, p) = (self.meta[ai].rows, self.meta[ai].cols);
        let (rb, q) = (self.meta[bi].rows, self.meta[bi].cols);
        if rows != rb {
            return Err(Error::dim("concat_cols", format!("{rows} rows"), format!("{rb} rows")));
        }
        let mut y = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            y.extend_from_slice(&self.values[ai][r * p..(r + 1) * p]);
            y.extend_from_slice(&self.values[bi][r * q..(r + 1) * q]);
        }
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(rows, p + q, y, Op::ConcatCols(ai, bi), rg))
    }

    /// Every pairing of a row of `a: B×p` with a row of `c: K×q`.
    ///
    /// Output is `(B·K)×(p+q)` with row `b·K + k` equal to `[a_b | c_k]`.
    pub fn pair_concat(&mut self, a: Var, c: Var) -> Result<Var> {
        let (ai, ci) = (self.idx(a)?, self.idx(c)?);
        let (nb, p) = (self.meta[ai].rows, self.meta[ai].cols);
        let (nk, q) = (self.meta[ci].rows, self.meta[ci].cols);
        let mut y = Vec::with_capacity(nb * nk * (p + q));
        for b in 0..nb {
            let ar = &self.values[ai][b * p..(b + 1) * p];
            for k in 0..nk {
                y.extend_from_slice(ar);
                y.extend_from_slice(&self.values[ci][k * q..(k + 1) * q]);
            }
        }
        let rg = self.rg(ai) || self.rg(ci);
        Ok(self.push(nb * nk, p + q, y, Op::PairConcat(ai, ci), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let ai = self.idx(a)?;
        if rows * cols != self.values[ai].len() {
            return Err(Error::dim("reshape", self.values[ai].len(), rows * cols));
        }
        let y = self.values[ai].clone();
        Ok(self.push(rows, cols, y, Op::Reshape(ai), self.rg(ai)))
    }

    /// Selects rows `ids` of `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let ti = self.idx(table)?;
        let (rows, cols) = (self.meta[ti].rows, self.meta[ti].cols);
        let mut y = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::dim("gather_rows", format!("row < {rows}"), id));
            }
            y.extend_from_slice(&self.values[ti][id * cols..(id + 1) * cols]);
        }
        let rg = self.rg(ti);
        Ok(self.push(ids.len(), cols, y, Op::GatherRows { table: ti, ids: ids.to_vec() }, rg))
    }

    /// Cosine similarity of every row of `a: B×d` with every row of `b: K×d`.
    ///
    /// `cos = a·b / (‖a‖‖b‖ + eps)`, so zero rows give 0 rather than NaN.
    pub fn cosine_rows(&mut self, a: Var, b: Var, eps: T) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (na, d) = (self.meta[ai].rows, self.meta[ai].cols);
        let (nb, db) = (self.meta[bi].rows, self.meta[bi].cols);
        if d != db {
            return Err(Error::dim("cosine", format!("width {d}"), format!("width {db}")));
        }
        let av = &self.values[ai];
        let bv = &self.values[bi];
        let a_norm: Vec<T> = (0..na).map(|r| norm(&av[r * d..(r + 1) * d])).collect();
        let b_norm: Vec<T> = (0..nb).map(|r| norm(&bv[r * d..(r + 1) * d])).collect();
        let mut y = Vec::with_capacity(na * nb);
        for i in 0..na {
            let ar = &av[i * d..(i + 1) * d];
            for j in 0..nb {
                let br = &bv[j * d..(j + 1) * d];
                y.push(dot(ar, br) / (a_norm[i] * b_norm[j] + eps));
            }
        }
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(na, nb, y, Op::CosineRows { a: ai, b: bi, eps }, rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let (rows, cols) = (self.meta[ai].rows, self.meta[ai].cols);
        let av = &self.values[ai];
        if av.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("softmax input is not finite".into()));
        }
        let mut y = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = &av[r * cols..(r + 1) * cols];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = y.len();
            let mut z = T::zero();
            for &v in row {
                let e = (v - m).exp();
                z = z + e;
                y.push(e);
            }
            y[start..].iter_mut().for_each(|e| *e = *e / z);
        }
        Ok(self.push(rows, cols, y, Op::SoftmaxRows(ai), self.rg(ai)))
    }

    /// Per-row binary cross-entropy of independent class scores.
    ///
    /// For row `r` with true class `t` over `k` classes:
    /// `(−log s_t − Σ_{i≠t} log(1 − s_i)) / k`, or just `−log s_t` when
    /// `positive_only`. Scores are clamped to `[eps, 1 − eps]`; clamped
    /// entries pass no gradient. Output is `B×1`.
    pub fn bce_rows(&mut self, scores: Var, targets: &[usize], positive_only: bool, eps: T) -> Result<Var> {
        let si = self.idx(scores)?;
        let (rows, k) = (self.meta[si].rows, self.meta[si].cols);
        check_targets("bce_rows", rows, k, targets)?;
        let sv = &self.values[si];
        let kt: T = lit(k as f64);
        let hi = T::one() - eps;
        let y = (0..rows)
            .map(|r| {
                let row = &sv[r * k..(r + 1) * k];
                let t = targets[r];
                let pos = -row[t].max(eps).min(hi).ln();
                if positive_only {
                    pos
                } else {
                    let neg: T = row
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != t)
                        .map(|(_, s)| -(T::one() - s.max(eps).min(hi)).ln())
                        .sum();
                    (pos + neg) / kt
                }
            })
            .collect();
        let op = Op::Bce { scores: si, targets: targets.to_vec(), positive_only, eps };
        Ok(self.push(rows, 1, y, op, self.rg(si)))
    }

    /// Per-row `−log p_t` with `p_t` clamped to `[eps, 1]`. Output is `B×1`.
    pub fn nll_rows(&mut self, probs: Var, targets: &[usize], eps: T) -> Result<Var> {
        let pi = self.idx(probs)?;
        let (rows, k) = (self.meta[pi].rows, self.meta[pi].cols);
        check_targets("nll_rows", rows, k, targets)?;
        let pv = &self.values[pi];
        let y = (0..rows).map(|r| -pv[r * k + targets[r]].max(eps).min(T::one()).ln()).collect();
        let op = Op::Nll { probs: pi, targets: targets.to_vec(), eps };
        Ok(self.push(rows, 1, y, op, self.rg(pi)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let n: T = lit(self.values[ai].len() as f64);
        let s: T = self.values[ai].iter().copied().sum();
        Ok(self.push(1, 1, vec![s / n], Op::Mean(ai), self.rg(ai)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let s: T = self.values[ai].iter().copied().sum();
        Ok(self.push(1, 1, vec![s], Op::Sum(ai), self.rg(ai)))
    }

    /// Inner product of two same-shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        if self.values[ai].len() != self.values[bi].len() {
            return Err(Error::dim("dot", self.values[ai].len(), self.values[bi].len()));
        }
        let s = dot(&self.values[ai], &self.values[bi]);
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(1, 1, vec![s], Op::Dot(ai, bi), rg))
    }

    /// Back-propagates from the scalar `loss`.
    ///
    /// Intermediate gradients are recomputed on each call; leaf gradients
    /// (including param leaves) accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.graph != self.id || loss.idx >= self.meta.len() {
            return Err(Error::Backward("loss was not recorded on this graph".into()));
        }
        if !self.record {
            return Err(Error::Backward("graph was built without gradient recording".into()));
        }
        let li = loss.idx;
        if self.values[li].len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got {}x{}",
                self.meta[li].rows, self.meta[li].cols
            )));
        }
        if !self.meta[li].requires_grad {
            return Err(Error::Backward("loss does not depend on any differentiable input".into()));
        }
        for i in 0..self.meta.len() {
            if !matches!(self.meta[i].op, Op::Leaf) {
                self.grads[i].clear();
            }
        }
        self.accum(li, |g| g[0] = g[0] + T::one());

        for i in (0..=li).rev() {
            if !self.meta[i].requires_grad || self.grads[i].is_empty() || matches!(self.meta[i].op, Op::Leaf) {
                continue;
            }
            let gy = std::mem::take(&mut self.grads[i]);
            let op = self.meta[i].op.clone();
            self.backprop(i, &op, &gy);
            self.grads[i] = gy;
        }
        Ok(())
    }

    fn accum(&mut self, i: usize, f: impl FnOnce(&mut [T])) {
        if !self.meta[i].requires_grad {
            return;
        }
        if self.grads[i].is_empty() {
            self.grads[i] = vec![T::zero(); self.values[i].len()];
        }
        f(&mut self.grads[i]);
    }

    fn backprop(&mut self, node: usize, op: &Op<T>, gy: &[T]) {
        match *op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (rows, inp) = (self.meta[x].rows, self.meta[x].cols);
                let out = self.meta[w].rows;
                if self.rg(x) {
                    let wv = self.values[w].clone();
                    self.accum(x, |gx| {
                        for r in 0..rows {
                            for o in 0..out {
                                let g = gy[r * out + o];
                                if g == T::zero() {
                                    continue;
                                }
                                let wr = &wv[o * inp..(o + 1) * inp];
                                for (d, wi) in gx[r * inp..(r + 1) * inp].iter_mut().zip(wr) {
                                    *d = *d + g * *wi;
                                }
                            }
                        }
                    });
                }
                if self.rg(w) {
                    let xv = self.values[x].clone();
                    self.accum(w, |gw| {
                        for r in 0..rows {
                            let xr = &xv[r * inp..(r + 1) * inp];
                            for o in 0..out {
                                let g = gy[r * out + o];
                                if g == T::zero() {
                                    continue;
                                }
                                for (d, xi) in gw[o * inp..(o + 1) * inp].iter_mut().zip(xr) {
                                    *d = *d + g * *xi;
                                }
                            }
                        }
                    });
                }
                self.accum(b, |gb| {
                    for r in 0..rows {
                        for o in 0..out {
                            gb[o] = gb[o] + gy[r * out + o];
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.values[a].clone();
                self.accum(a, |ga| {
                    for ((d, x), g) in ga.iter_mut().zip(&av).zip(gy) {
                        if *x > T::zero() {
                            *d = *d + *g;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yv = self.values[node].clone();
                self.accum(a, |ga| {
                    for ((d, y), g) in ga.iter_mut().zip(&yv).zip(gy) {
                        *d = *d + *g * *y * (T::one() - *y);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accum(a, |ga| ga.iter_mut().zip(gy).for_each(|(d, g)| *d = *d + *g));
                self.accum(b, |gb| gb.iter_mut().zip(gy).for_each(|(d, g)| *d = *d + *g));
            }
            Op::Scale(a, f) => {
                self.accum(a, |ga| ga.iter_mut().zip(gy).for_each(|(d, g)| *d = *d + *g * f));
            }
            Op::ConcatCols(a, b) => {
                let rows = self.meta[a].rows;
                let (p, q) = (self.meta[a].cols, self.meta[b].cols);
                self.accum(a, |ga| {
                    for r in 0..rows {
                        for j in 0..p {
                            ga[r * p + j] = ga[r * p + j] + gy[r * (p + q) + j];
                        }
                    }
                });
                self.accum(b, |gb| {
                    for r in 0..rows {
                        for j in 0..q {
                            gb[r * q + j] = gb[r * q + j] + gy[r * (p + q) + p + j];
                        }
                    }
                });
            }
            Op::PairConcat(a, c) => {
                let (nb, p) = (self.meta[a].rows, self.meta[a].cols);
                let (nk, q) = (self.meta[c].rows, self.meta[c].cols);
                let w = p + q;
                self.accum(a, |ga| {
                    for b in 0..nb {
                        for k in 0..nk {
                            let row = &gy[(b * nk + k) * w..(b * nk + k) * w + p];
                            for (d, g) in ga[b * p..(b + 1) * p].iter_mut().zip(row) {
                                *d = *d + *g;
                            }
                        }
                    }
                });
                self.accum(c, |gc| {
                    for b in 0..nb {
                        for k in 0..nk {
                            let row = &gy[(b * nk + k) * w + p..(b * nk + k + 1) * w];
                            for (d, g) in gc[k * q..(k + 1) * q].iter_mut().zip(row) {
                                *d = *d + *g;
                            }
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                self.accum(a, |ga| ga.iter_mut().zip(gy).for_each(|(d, g)| *d = *d + *g));
            }
            Op::GatherRows { table, ref ids } => {
                let cols = self.meta[table].cols;
                self.accum(table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..cols {
                            gt[id * cols + j] = gt[id * cols + j] + gy[r * cols + j];
                        }
                    }
                });
            }
            Op::CosineRows { a, b, eps } => {
                let (na, d) = (self.meta[a].rows, self.meta[a].cols);
                let nb = self.meta[b].rows;
                let av = self.values[a].clone();
                let bv = self.values[b].clone();
                let a_norm: Vec<T> = (0..na).map(|r| norm(&av[r * d..(r + 1) * d])).collect();
                let b_norm: Vec<T> = (0..nb).map(|r| norm(&bv[r * d..(r + 1) * d])).collect();
                // d cos / d a = b/D − (a·b)·‖b‖·a / (‖a‖ D²), D = ‖a‖‖b‖ + eps
                let mut ga = vec![T::zero(); av.len()];
                let mut gb = vec![T::zero(); bv.len()];
                for i in 0..na {
                    let ar = &av[i * d..(i + 1) * d];
                    for j in 0..nb {
                        let g = gy[i * nb + j];
                        if g == T::zero() {
                            continue;
                        }
                        let br = &bv[j * d..(j + 1) * d];
                        let den = a_norm[i] * b_norm[j] + eps;
                        let num = dot(ar, br);
                        let ca = if a_norm[i] > T::zero() {
                            num * b_norm[j] / (a_norm[i] * den * den)
                        } else {
                            T::zero()
                        };
                        let cb = if b_norm[j] > T::zero() {
                            num * a_norm[i] / (b_norm[j] * den * den)
                        } else {
                            T::zero()
                        };
                        for k in 0..d {
                            ga[i * d + k] = ga[i * d + k] + g * (br[k] / den - ca * ar[k]);
                            gb[j * d + k] = gb[j * d + k] + g * (ar[k] / den - cb * br[k]);
                        }
                    }
                }
                self.accum(a, |acc| acc.iter_mut().zip(&ga).for_each(|(d, g)| *d = *d + *g));
                self.accum(b, |acc| acc.iter_mut().zip(&gb).for_each(|(d, g)| *d = *d + *g));
            }
            Op::SoftmaxRows(a) => {
                let (rows, cols) = (self.meta[a].rows, self.meta[a].cols);
                let yv = self.values[node].clone();
                self.accum(a, |ga| {
                    for r in 0..rows {
                        let y = &yv[r * cols..(r + 1) * cols];
                        let g = &gy[r * cols..(r + 1) * cols];
                        let s: T = y.iter().zip(g).map(|(a, b)| *a * *b).sum();
                        for j in 0..cols {
                            ga[r * cols + j] = ga[r * cols + j] + y[j] * (g[j] - s);
                        }
                    }
                });
            }
            Op::Bce { scores, ref targets, positive_only, eps } => {
                let (rows, k) = (self.meta[scores].rows, self.meta[scores].cols);
                let sv = self.values[scores].clone();
                let hi = T::one() - eps;
                let scale = if positive_only { T::one() } else { T::one() / lit::<T>(k as f64) };
                self.accum(scores, |gs| {
                    for r in 0..rows {
                        let t = targets[r];
                        for i in 0..k {
                            let s = sv[r * k + i];
                            if s < eps || s > hi {
                                continue;
                            }
                            let d = if i == t {
                                -T::one() / s
                            } else if positive_only {
                                continue;
                            } else {
                                T::one() / (T::one() - s)
                            };
                            gs[r * k + i] = gs[r * k + i] + gy[r] * scale * d;
                        }
                    }
                });
            }
            Op::Nll { probs, ref targets, eps } => {
                let k = self.meta[probs].cols;
                let pv = self.values[probs].clone();
                self.accum(probs, |gp| {
                    for (r, &t) in targets.iter().enumerate() {
                        let p = pv[r * k + t];
                        if p >= eps && p <= T::one() {
                            gp[r * k + t] = gp[r * k + t] - gy[r] / p;
                        }
                    }
                });
            }
            Op::Mean(a) => {
                let n: T = lit(self.values[a].len() as f64);
                self.accum(a, |ga| ga.iter_mut().for_each(|d| *d = *d + gy[0] / n));
            }
            Op::Sum(a) => {
                self.accum(a, |ga| ga.iter_mut().for_each(|d| *d = *d + gy[0]));
            }
            Op::Dot(a, b) => {
                let av = self.values[a].clone();
                let bv = self.values[b].clone();
                self.accum(a, |ga| ga.iter_mut().zip(&bv).for_each(|(d, x)| *d = *d + gy[0] * *x));
                self.accum(b, |gb| gb.iter_mut().zip(&av).for_each(|(d, x)| *d = *d + gy[0] * *x));
            }
        }
    }
}

fn check_targets(op: &'static str, rows: usize, k: usize, targets: &[usize]) -> Result<()> {
    if targets.len() != rows {
        return Err(Error::dim(op, format!("{rows} targets"), targets.len()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument(format!("{op}: zero classes")));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::InvalidArgument(format!("{op}: target {t} out of range for {k} classes")));
    }
    Ok(())
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

#[inline]
fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
