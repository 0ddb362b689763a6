//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Node ids double as a topological order: an op node is always pushed after
//! its inputs, so the backward sweep simply walks ids in decreasing order.
//! Only the handful of ops the localization losses need are provided.

use crate::error::{Result, XplError};
use crate::tensor::{matmul_raw, transpose_raw, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Reduction axis for [`Graph::reduce_max`] and [`Graph::log_sum_exp`].
///
/// `Dim(0)` collapses rows (one result per column), `Dim(1)` collapses columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    All,
    Dim(usize),
}

#[derive(Debug, Clone)]
enum Op {
    Param,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    CosineSim(Var, Var),
    CosineRows(Var, Var),
    NormalizeRows(Var),
    Transpose(Var),
    ReduceMax { input: Var, argmax: Vec<usize> },
    LogSumExp { input: Var, axis: Axis },
    Sum(Var),
    Mean(Var),
    Diag(Var),
    StackRows(Vec<Var>),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param => "param",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::ScalarMul(..) => "scalar_mul",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Log(..) => "log",
            Op::Exp(..) => "exp",
            Op::Clamp(..) => "clamp",
            Op::CosineSim(..) => "cosine_sim",
            Op::CosineRows(..) => "cosine_rows",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::Transpose(..) => "transpose",
            Op::ReduceMax { .. } => "reduce_max",
            Op::LogSumExp { .. } => "log_sum_exp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Diag(..) => "diag",
            Op::StackRows(..) => "stack_rows",
            Op::Reshape(..) => "reshape",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// The tape. Build one per forward pass and drop it after `backward`.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to the graph's parameter leaves.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a parameter leaf; `None` for constants, non-leaves, or
    /// leaves the root does not depend on.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but returns zeros shaped like `like` when absent.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    /// Ids of every node that received a gradient.
    pub fn leaf_ids(&self) -> Vec<usize> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|_| i))
            .collect()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> XplError {
    XplError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_lse(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Param, value)
    }

    /// A leaf excluded from differentiation (stop-gradient targets, inputs).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(Op::ScalarMul(a, c), out)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), out)
    }

    /// `m×k · k×n`. Both operands must be 2-D.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (ta.shape(), tb.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(mismatch("matmul", ta, tb)),
        };
        let out = Tensor::from_parts(vec![m, n], matmul_raw(ta.values(), tb.values(), m, k, n));
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// Adds the length-n vector `bias` to every row of the `m×n` matrix `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = match (tx.shape(), tb.shape()) {
            ([_, n], [nb]) if n == nb => *n,
            _ => return Err(mismatch("add_bias", tx, tb)),
        };
        let mut out = tx.values().to_vec();
        for row in out.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(tb.values()) {
                *o += b;
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), out);
        Ok(self.push(Op::AddBias(x, bias), out))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), out)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if let Some(&bad) = t.values().iter().find(|&&v| v <= 0.0) {
            return Err(XplError::domain("log", format!("non-positive input {bad}")));
        }
        let out = t.map(f64::ln);
        Ok(self.push(Op::Log(x), out))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::exp);
        if let Some(index) = out.values().iter().position(|v| !v.is_finite()) {
            return Err(XplError::NonFinite { index });
        }
        Ok(self.push(Op::Exp(x), out))
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp(x, lo, hi), out)
    }

    /// Cosine similarity of two equal-length vectors, clamped to `[-1, 1]`.
    pub fn cosine_sim(&mut self, u: Var, v: Var) -> Result<Var> {
        let (tu, tv) = (self.value(u), self.value(v));
        if tu.numel() != tv.numel() {
            return Err(mismatch("cosine_sim", tu, tv));
        }
        let (nu, nv) = (tu.norm(), tv.norm());
        if nu == 0.0 || nv == 0.0 {
            return Err(XplError::ZeroNorm { op: "cosine_sim" });
        }
        let c = (dot(tu.values(), tv.values()) / (nu * nv)).clamp(-1.0, 1.0);
        Ok(self.push(Op::CosineSim(u, v), Tensor::from_parts(vec![1], vec![c])))
    }

    /// Cosine similarity between every row of the `m×d` matrix `x` and the
    /// length-d vector `u`; returns a length-m vector.
    pub fn cosine_rows(&mut self, x: Var, u: Var) -> Result<Var> {
        let (tx, tu) = (self.value(x), self.value(u));
        let (m, d) = match tx.shape() {
            [m, d] if *d == tu.numel() => (*m, *d),
            _ => return Err(mismatch("cosine_rows", tx, tu)),
        };
        let nu = tu.norm();
        if nu == 0.0 {
            return Err(XplError::ZeroNorm { op: "cosine_rows" });
        }
        let mut out = Vec::with_capacity(m);
        for row in tx.values().chunks(d) {
            let nr = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nr == 0.0 {
                return Err(XplError::ZeroNorm { op: "cosine_rows" });
            }
            out.push((dot(row, tu.values()) / (nr * nu)).clamp(-1.0, 1.0));
        }
        Ok(self.push(Op::CosineRows(x, u), Tensor::from_parts(vec![m], out)))
    }

    /// L2-normalizes each row of a 2-D tensor.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, d) = tx
            .dims2()
            .ok_or_else(|| XplError::domain("normalize_rows", "expected 1-D or 2-D input"))?;
        let mut out = tx.values().to_vec();
        for row in out.chunks_mut(d) {
            let nr = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nr == 0.0 {
                return Err(XplError::ZeroNorm { op: "normalize_rows" });
            }
            row.iter_mut().for_each(|v| *v /= nr);
        }
        let out = Tensor::from_parts(vec![m, d], out);
        Ok(self.push(Op::NormalizeRows(x), out))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx
            .dims2()
            .ok_or_else(|| XplError::domain("transpose", "expected 1-D or 2-D input"))?;
        let out = Tensor::from_parts(vec![n, m], transpose_raw(tx.values(), m, n));
        Ok(self.push(Op::Transpose(x), out))
    }

    /// Max along an axis. The subgradient goes to the first (lowest flat
    /// index) maximizer.
    pub fn reduce_max(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let tx = self.value(x);
        let groups = reduction_groups(tx, axis, "reduce_max")?;
        let vals = tx.values();
        let mut out = Vec::with_capacity(groups.len());
        let mut argmax = Vec::with_capacity(groups.len());
        for group in &groups {
            let mut best = group[0];
            for &i in &group[1..] {
                if vals[i] > vals[best] {
                    best = i;
                }
            }
            argmax.push(best);
            out.push(vals[best]);
        }
        let shape = vec![out.len()];
        Ok(self.push(Op::ReduceMax { input: x, argmax }, Tensor::from_parts(shape, out)))
    }

    /// Max-shifted `log Σ exp` along an axis.
    pub fn log_sum_exp(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let tx = self.value(x);
        let groups = reduction_groups(tx, axis, "log_sum_exp")?;
        let vals = tx.values();
        let out: Vec<f64> = groups
            .iter()
            .map(|g| stable_lse(g.iter().map(|&i| vals[i])))
            .collect();
        let shape = vec![out.len()];
        Ok(self.push(Op::LogSumExp { input: x, axis }, Tensor::from_parts(shape, out)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Op::Sum(x), Tensor::from_parts(vec![1], vec![s]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.sum() / t.numel() as f64;
        self.push(Op::Mean(x), Tensor::from_parts(vec![1], vec![m]))
    }

    /// Main diagonal of a square matrix.
    pub fn diag(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let n = match tx.shape() {
            [r, c] if r == c => *r,
            _ => return Err(XplError::domain("diag", format!("not square: {:?}", tx.shape()))),
        };
        let out = (0..n).map(|i| tx.values()[i * n + i]).collect();
        Ok(self.push(Op::Diag(x), Tensor::from_parts(vec![n], out)))
    }

    /// Stacks equal-length vectors into an `n×d` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows
            .first()
            .ok_or_else(|| XplError::domain("stack_rows", "no rows"))?;
        let d = self.value(*first).numel();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let t = self.value(r);
            if t.numel() != d {
                return Err(mismatch("stack_rows", self.value(*first), t));
            }
            out.extend_from_slice(t.values());
        }
        let out = Tensor::from_parts(vec![rows.len(), d], out);
        Ok(self.push(Op::StackRows(rows.to_vec()), out))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(Op::Reshape(x), out))
    }

    /// Reverse sweep from a scalar root. Parameter leaves the root depends on
    /// get an entry; constants never do.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if !root_val.is_scalar() {
            return Err(XplError::NonScalarRoot(root_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Param => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Constant => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                    let ga: Vec<f64> = g.iter().zip(vb).map(|(g, y)| g * y).collect();
                    let gb: Vec<f64> = g.iter().zip(va).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::ScalarMul(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|v| v * c).collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::AddScalar(a) | Op::Reshape(a) => accumulate(&mut grads, *a, &g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    // dA = G·Bᵀ, dB = Aᵀ·G
                    let bt = transpose_raw(tb.values(), k, n);
                    let ga = matmul_raw(&g, &bt, m, n, k);
                    let at = transpose_raw(ta.values(), m, k);
                    let gb = matmul_raw(&at, &g, k, m, n);
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::AddBias(x, bias) => {
                    let n = self.value(*bias).numel();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, &g);
                    accumulate(&mut grads, *bias, &gb);
                }
                Op::Relu(x) => {
                    let vx = self.value(*x).values();
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(vx)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.values();
                    let gx: Vec<f64> = g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Log(x) => {
                    let vx = self.value(*x).values();
                    let gx: Vec<f64> = g.iter().zip(vx).map(|(g, v)| g / v).collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Exp(x) => {
                    let y = node.value.values();
                    let gx: Vec<f64> = g.iter().zip(y).map(|(g, e)| g * e).collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Clamp(x, lo, hi) => {
                    let vx = self.value(*x).values();
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(vx)
                        .map(|(g, v)| if v < lo || v > hi { 0.0 } else { *g })
                        .collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::CosineSim(u, v) => {
                    let (tu, tv) = (self.value(*u), self.value(*v));
                    let (gu, gv) = cosine_grads(tu.values(), tv.values(), g[0]);
                    accumulate(&mut grads, *u, &gu);
                    accumulate(&mut grads, *v, &gv);
                }
                Op::CosineRows(x, u) => {
                    let (tx, tu) = (self.value(*x), self.value(*u));
                    let d = tu.numel();
                    let mut gx = Vec::with_capacity(tx.numel());
                    let mut gu = vec![0.0; d];
                    for (row, &gi) in tx.values().chunks(d).zip(&g) {
                        let (grow, gvec) = cosine_grads(row, tu.values(), gi);
                        gx.extend(grow);
                        for (o, v) in gu.iter_mut().zip(gvec) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, &gx);
                    accumulate(&mut grads, *u, &gu);
                }
                Op::NormalizeRows(x) => {
                    let tx = self.value(*x);
                    let d = node.value.shape()[1];
                    let mut gx = Vec::with_capacity(tx.numel());
                    for ((row, y), gr) in tx
                        .values()
                        .chunks(d)
                        .zip(node.value.values().chunks(d))
                        .zip(g.chunks(d))
                    {
                        let nr = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let yg = dot(y, gr);
                        gx.extend(gr.iter().zip(y).map(|(gv, yv)| (gv - yv * yg) / nr));
                    }
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Transpose(x) => {
                    let (r, c) = node.value.dims2().expect("transpose output is 2-D");
                    accumulate(&mut grads, *x, &transpose_raw(&g, r, c));
                }
                Op::ReduceMax { input, argmax } => {
                    let mut gx = vec![0.0; self.value(*input).numel()];
                    for (&i, gv) in argmax.iter().zip(&g) {
                        gx[i] += gv;
                    }
                    accumulate(&mut grads, *input, &gx);
                }
                Op::LogSumExp { input, axis } => {
                    let tx = self.value(*input);
                    let groups = reduction_groups(tx, *axis, "log_sum_exp")?;
                    let mut gx = vec![0.0; tx.numel()];
                    for ((group, lse), gv) in groups.iter().zip(node.value.values()).zip(&g) {
                        for &i in group {
                            gx[i] += gv * (tx.values()[i] - lse).exp();
                        }
                    }
                    accumulate(&mut grads, *input, &gx);
                }
                Op::Sum(x) => {
                    let gx = vec![g[0]; self.value(*x).numel()];
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).numel();
                    let gx = vec![g[0] / n as f64; n];
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Diag(x) => {
                    let n = g.len();
                    let mut gx = vec![0.0; n * n];
                    for (i, gv) in g.iter().enumerate() {
                        gx[i * n + i] = *gv;
                    }
                    accumulate(&mut grads, *x, &gx);
                }
                Op::StackRows(rows) => {
                    let d = node.value.shape()[1];
                    for (r, gr) in rows.iter().zip(g.chunks(d)) {
                        accumulate(&mut grads, *r, gr);
                    }
                }
            }
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.map(|g| Tensor::from_parts(self.nodes[id].value.shape().to_vec(), g))
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Name of the op that produced `var`, for diagnostics.
    pub fn op_name(&self, var: Var) -> &'static str {
        self.nodes[var.0].op.name()
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, g: &[f64]) {
    match &mut grads[var.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// d cos(u, v) / du and / dv, scaled by `upstream`.
fn cosine_grads(u: &[f64], v: &[f64], upstream: f64) -> (Vec<f64>, Vec<f64>) {
    let nu2: f64 = u.iter().map(|x| x * x).sum();
    let nv2: f64 = v.iter().map(|x| x * x).sum();
    let (nu, nv) = (nu2.sqrt(), nv2.sqrt());
    let inv = 1.0 / (nu * nv);
    let c = dot(u, v) * inv;
    let gu = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| upstream * (vi * inv - c * ui / nu2))
        .collect();
    let gv = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| upstream * (ui * inv - c * vi / nv2))
        .collect();
    (gu, gv)
}

/// Flat-index groups reduced together, in output order.
fn reduction_groups(t: &Tensor, axis: Axis, op: &'static str) -> Result<Vec<Vec<usize>>> {
    let n = t.numel();
    match (axis, t.shape()) {
        (Axis::All, _) => Ok(vec![(0..n).collect()]),
        (Axis::Dim(0), [_]) => Ok(vec![(0..n).collect()]),
        (Axis::Dim(0), [r, c]) => Ok((0..*c).map(|j| (0..*r).map(|i| i * c + j).collect()).collect()),
        (Axis::Dim(1), [r, c]) => Ok((0..*r).map(|i| (i * c..(i + 1) * c).collect()).collect()),
        _ => Err(XplError::domain(op, format!("axis {axis:?} invalid for shape {:?}", t.shape()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_forward() {
        let mut g = Graph::new();
        let a = g.constant(vec_t(&[1.0, 2.0]));
        let b = g.constant(vec_t(&[3.0, 4.0]));
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).values(), &[4.0, 6.0]);
        let z = g.constant(Tensor::zeros(&[2]));
        let p = g.mul(a, z).unwrap();
        assert_eq!(g.value(p).values(), &[0.0, 0.0]);
        let c = g.constant(vec_t(&[1.0, 2.0, 3.0]));
        assert!(matches!(g.add(a, c), Err(XplError::ShapeMismatch { .. })));
    }

    #[test]
    fn matmul_forward() {
        let mut g = Graph::new();
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let i = g.constant(Tensor::identity(3));
        let xv = g.constant(x.clone());
        let y = g.matmul(i, xv).unwrap();
        assert_eq!(g.value(y), &x);
        let a = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let ab = g.matmul(a, b).unwrap();
        assert_eq!(g.value(ab).values(), &[11.0]);
        assert!(g.matmul(a, a).is_err());
    }

    #[test]
    fn unary_values_and_sigmoid_grad() {
        let mut g = Graph::new();
        let x = g.param(vec_t(&[0.0]));
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).item(), 0.5);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 0.25);

        let r = g.constant(vec_t(&[-1.0, 2.0]));
        let rr = g.relu(r);
        assert_eq!(g.value(rr).values(), &[0.0, 2.0]);

        let bad = g.constant(vec_t(&[1.0, 0.0]));
        assert!(matches!(g.log(bad), Err(XplError::Domain { op: "log", .. })));
    }

    #[test]
    fn cosine_cases() {
        let mut g = Graph::new();
        let x = g.constant(vec_t(&[0.3, -1.2, 2.0]));
        let c = g.cosine_sim(x, x).unwrap();
        assert!((g.value(c).item() - 1.0).abs() < 1e-15);
        let e1 = g.constant(vec_t(&[1.0, 0.0]));
        let e2 = g.constant(vec_t(&[0.0, 1.0]));
        let o = g.cosine_sim(e1, e2).unwrap();
        assert_eq!(g.value(o).item(), 0.0);
        let z = g.constant(Tensor::zeros(&[2]));
        assert!(matches!(g.cosine_sim(e1, z), Err(XplError::ZeroNorm { .. })));
    }

    #[test]
    fn reduce_max_cases() {
        let mut g = Graph::new();
        let x = g.param(Tensor::matrix(2, 2, vec![1.0, 5.0, 3.0, 2.0]).unwrap());
        let m = g.reduce_max(x, Axis::All).unwrap();
        assert_eq!(g.value(m).item(), 5.0);
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(x).unwrap().values(), &[0.0, 1.0, 0.0, 0.0]);

        let cols = g.reduce_max(x, Axis::Dim(0)).unwrap();
        assert_eq!(g.value(cols).values(), &[3.0, 5.0]);
        let rows = g.reduce_max(x, Axis::Dim(1)).unwrap();
        assert_eq!(g.value(rows).values(), &[5.0, 3.0]);

        let c = g.param(Tensor::filled(&[3], 2.5));
        let mc = g.reduce_max(c, Axis::All).unwrap();
        assert_eq!(g.value(mc).item(), 2.5);
        // ties go to the lowest flat index
        let grads = g.backward(mc).unwrap();
        assert_eq!(grads.get(c).unwrap().values(), &[1.0, 0.0, 0.0]);
        assert!(g.reduce_max(c, Axis::Dim(1)).is_err());
    }

    #[test]
    fn log_sum_exp_cases() {
        let mut g = Graph::new();
        let one = g.constant(vec_t(&[-3.25]));
        let l1 = g.log_sum_exp(one, Axis::All).unwrap();
        assert_eq!(g.value(l1).item(), -3.25);
        let zz = g.constant(vec_t(&[0.0, 0.0]));
        let l2 = g.log_sum_exp(zz, Axis::All).unwrap();
        assert!((g.value(l2).item() - 2f64.ln()).abs() < 1e-15);
        let big = g.constant(vec_t(&[700.0, 701.0, 699.5]));
        let l3 = g.log_sum_exp(big, Axis::All).unwrap();
        let manual = 701.0 + ((-1.0f64).exp() + 1.0 + (-1.5f64).exp()).ln();
        assert!(g.value(l3).item().is_finite());
        assert!((g.value(l3).item() - manual).abs() < 1e-12);
    }

    #[test]
    fn backward_basics() {
        let mut g = Graph::new();
        let x = g.param(vec_t(&[3.0]));
        let sq = g.mul(x, x).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);

        let mut g = Graph::new();
        let x = g.param(vec_t(&[3.0]));
        let k = g.constant(vec_t(&[2.0]));
        let grads = g.backward(k).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get_or_zeros(x, g.value(x)).item(), 0.0);

        let mut g = Graph::new();
        let v = g.param(vec_t(&[1.0, 2.0]));
        assert!(matches!(g.backward(v), Err(XplError::NonScalarRoot(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let p = g.param(vec_t(&[0.2, 0.4]));
        let t = g.constant(vec_t(&[1.0, 0.0]));
        let prod = g.mul(p, t).unwrap();
        let s = g.sum(prod);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(t).is_none());
        assert_eq!(grads.leaf_ids(), vec![p.id()]);
    }
}
