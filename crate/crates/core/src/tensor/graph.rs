use std::fmt;

use super::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kinds, used for reporting and for gradient-fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    MatMulNt,
    AddBias,
    Add,
    Mul,
    Scale,
    Transpose,
    Reshape,
    SliceRows,
    SliceCols,
    ConcatRows,
    ConcatCols,
    LayerNorm,
    Softmax,
    Gelu,
    Sum,
    Mean,
    CrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 19] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::MatMulNt,
        OpKind::AddBias,
        OpKind::Add,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Transpose,
        OpKind::Reshape,
        OpKind::SliceRows,
        OpKind::SliceCols,
        OpKind::ConcatRows,
        OpKind::ConcatCols,
        OpKind::LayerNorm,
        OpKind::Softmax,
        OpKind::Gelu,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::MatMulNt => "matmul_nt",
            OpKind::AddBias => "add_bias",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Transpose => "transpose",
            OpKind::Reshape => "reshape",
            OpKind::SliceRows => "slice_rows",
            OpKind::SliceCols => "slice_cols",
            OpKind::ConcatRows => "concat_rows",
            OpKind::ConcatCols => "concat_cols",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Softmax => "softmax_rows",
            OpKind::Gelu => "gelu",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    Gelu(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulNt(..) => OpKind::MatMulNt,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Reshape(..) => OpKind::Reshape,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Softmax(..) => OpKind::Softmax,
            Op::Gelu(..) => OpKind::Gelu,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Execution record for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the record is always
/// topologically sorted.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

/// Gradients of one scalar loss, indexed by [`Var`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

const GELU_INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * GELU_INV_SQRT2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * GELU_INV_SQRT2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test hook: corrupts the backward rule of one primitive kind so that
    /// gradient checks can demonstrate they catch a wrong rule.
    #[doc(hidden)]
    pub fn inject_gradient_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node so the graph can be reused.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn op_kind(&self, var: Var) -> OpKind {
        self.nodes[var.0].op.kind()
    }

    /// Records a leaf; it takes part in differentiation iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        let mut value = tensor;
        value.clear_grad();
        self.push(value, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn variable(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn dims2(&self, op: &'static str, var: Var) -> Result<(usize, usize)> {
        match self.shape(var) {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::shape(op, format!("expected a matrix, got {other:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions differ: {:?} x {:?}", [m, k], [k2, n]),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul_nt", a)?;
        let (n, k2) = self.dims2("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("inner dimensions differ: {:?} x {:?}^T", [m, k], [n, k2]),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMulNt(a, b), needs))
    }

    /// Adds a length-`d` bias to every row of an `n×d` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.dims2("add_bias", x)?;
        if self.value(bias).numel() != d {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} does not match {:?}", self.shape(bias), [n, d]),
            ));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(d) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        let needs = self.needs(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), needs))
    }

    /// `x · w + b` with the bias broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out).expect("same shape");
        let needs = self.needs(&[x]);
        self.push(value, Op::Scale(x, factor), needs)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::Transpose(x), needs))
    }

    /// Reinterprets the row-major buffer under a new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape).map_err(|_| {
            Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape(x)),
            )
        })?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), needs))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.dims2("slice_rows", x)?;
        if len == 0 || start + len > n {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} out of {n}", start + len),
            ));
        }
        let out = self.value(x).data()[start * d..(start + len) * d].to_vec();
        let value = Tensor::new(vec![len, d], out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::SliceRows { x, start }, needs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.dims2("slice_cols", x)?;
        if len == 0 || start + len > d {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} out of {d}", start + len),
            ));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len);
        for row in src.chunks(d) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let value = Tensor::new(vec![n, len], out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::SliceCols { x, start }, needs))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let (_, d) = self.dims2("concat_rows", first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2("concat_rows", p)?;
            if c != d {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column count {c} differs from {d}"),
                ));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, d], out)?;
        let needs = self.needs(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let (n, _) = self.dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2("concat_cols", p)?;
            if r != n {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row count {r} differs from {n}"),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(vec![n, total], out)?;
        let needs = self.needs(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Per-row normalisation with population variance, then `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.dims2("layer_norm", x)?;
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "affine params {:?}/{:?} do not match width {d}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        if eps <= 0.0 {
            return Err(Error::Usage(format!("layer_norm eps must be positive, got {eps}")));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normalized = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            inv_std[i] = rstd;
            for j in 0..d {
                let xh = (row[j] - mean) * rstd;
                normalized[i * d + j] = xh;
                out[i * d + j] = g[j] * xh + b[j];
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        let needs = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            needs,
        ))
    }

    /// Row-wise softmax, stabilised by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims2("softmax_rows", x)?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        let value = Tensor::new(vec![n, d], out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::Softmax(x), needs))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).data().iter().map(|&v| gelu(v)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out).expect("same shape");
        let needs = self.needs(&[x]);
        self.push(value, Op::Gelu(x), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), needs)
    }

    /// Mean softmax cross-entropy of `n×c` logits against `n` class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.dims2("cross_entropy", logits)?;
        if labels.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::shape(
                "cross_entropy",
                format!("label {bad} out of range for {c} classes"),
            ));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &label) in probs.chunks_mut(c).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += log_z - row[label];
            softmax_in_place(row);
        }
        let needs = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Reverse sweep from a scalar loss.
    ///
    /// The record is left intact, so calling this twice yields identical
    /// gradients. Every node that requires a gradient gets a buffer, zero if
    /// the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Usage(format!("unknown variable {}", loss.0)))?;
        if loss_value.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let factor = if self.fault == Some(node.op.kind()) {
                1.5
            } else {
                1.0
            };
            self.propagate(node, &g, factor, &mut grads);
            grads[idx] = Some(g);
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if node.needs_grad && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], var: Var) -> Option<&'a mut Vec<f64>> {
        let node = &self.nodes[var.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[var.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
    }

    fn propagate(&self, node: &Node, g: &[f64], factor: f64, grads: &mut [Option<Vec<f64>>]) {
        let add_scaled = |dst: &mut Vec<f64>, src: &[f64]| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += factor * s;
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims(self.value(*a));
                let n = dims(self.value(*b)).1;
                if let Some(ga) = self.slot(grads, *a) {
                    let mut tmp = vec![0.0; m * k];
                    gemm_nt_acc(g, self.value(*b).data(), &mut tmp, m, n, k);
                    add_scaled(ga, &tmp);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let mut tmp = vec![0.0; k * n];
                    gemm_tn_acc(self.value(*a).data(), g, &mut tmp, m, k, n);
                    add_scaled(gb, &tmp);
                }
            }
            Op::MatMulNt(a, b) => {
                // out = a·bᵀ with a: m×k, b: n×k
                let (m, k) = dims(self.value(*a));
                let n = dims(self.value(*b)).0;
                if let Some(ga) = self.slot(grads, *a) {
                    let mut tmp = vec![0.0; m * k];
                    gemm_acc(g, self.value(*b).data(), &mut tmp, m, n, k);
                    add_scaled(ga, &tmp);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let mut tmp = vec![0.0; n * k];
                    gemm_tn_acc(g, self.value(*a).data(), &mut tmp, m, n, k);
                    add_scaled(gb, &tmp);
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_scaled(gx, g);
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    let d = gb.len();
                    for row in g.chunks(d) {
                        add_scaled(gb, row);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_scaled(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    add_scaled(gb, g);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let tmp: Vec<f64> =
                        g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    add_scaled(ga, &tmp);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let tmp: Vec<f64> =
                        g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    add_scaled(gb, &tmp);
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let tmp: Vec<f64> = g.iter().map(|v| v * c).collect();
                    add_scaled(gx, &tmp);
                }
            }
            Op::Transpose(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let (r, c) = dims(self.value(*x));
                    // g is c×r
                    let mut tmp = vec![0.0; r * c];
                    for i in 0..c {
                        for j in 0..r {
                            tmp[j * c + i] = g[i * r + j];
                        }
                    }
                    add_scaled(gx, &tmp);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_scaled(gx, g);
                }
            }
            Op::SliceRows { x, start } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let d = dims(self.value(*x)).1;
                    let dst = &mut gx[start * d..start * d + g.len()];
                    for (o, v) in dst.iter_mut().zip(g) {
                        *o += factor * v;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let d = dims(self.value(*x)).1;
                    let len = dims(&node.value).1;
                    for (i, row) in g.chunks(len).enumerate() {
                        for (j, v) in row.iter().enumerate() {
                            gx[i * d + start + j] += factor * v;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    if let Some(gp) = self.slot(grads, *p) {
                        add_scaled(gp, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = dims(&node.value).1;
                let mut offset = 0;
                for p in parts {
                    let w = dims(self.value(*p)).1;
                    if let Some(gp) = self.slot(grads, *p) {
                        for (i, row) in g.chunks(total).enumerate() {
                            for j in 0..w {
                                gp[i * w + j] += factor * row[offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let d = self.value(*gamma).numel();
                let gam = self.value(*gamma).data();
                if let Some(gg) = self.slot(grads, *gamma) {
                    for (grow, xrow) in g.chunks(d).zip(normalized.chunks(d)) {
                        for j in 0..d {
                            gg[j] += factor * grow[j] * xrow[j];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    for grow in g.chunks(d) {
                        add_scaled(gb, grow);
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    for (i, (grow, xrow)) in g.chunks(d).zip(normalized.chunks(d)).enumerate() {
                        let dxhat: Vec<f64> = grow.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx =
                            dxhat.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gx[i * d + j] +=
                                factor * inv_std[i] * (dxhat[j] - mean_d - xrow[j] * mean_dx);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let d = dims(&node.value).1;
                    let y = node.value.data();
                    for (i, (grow, yrow)) in g.chunks(d).zip(y.chunks(d)).enumerate() {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            gx[i * d + j] += factor * yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let tmp: Vec<f64> = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(gv, &xv)| gv * gelu_grad(xv))
                        .collect();
                    add_scaled(gx, &tmp);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|v| *v += factor * g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let scale = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|v| *v += factor * scale);
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if let Some(gl) = self.slot(grads, *logits) {
                    let n = labels.len();
                    let c = probs.len() / n;
                    let scale = g[0] / n as f64;
                    for (i, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let target = if j == label { 1.0 } else { 0.0 };
                            gl[i * c + j] += factor * scale * (probs[i * c + j] - target);
                        }
                    }
                }
            }
        }
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        [r, c] => (*r, *c),
        [n] => (1, *n),
        _ => (1, t.numel()),
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}
