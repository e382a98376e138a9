use std::borrow::Cow;
use std::rc::Rc;

use super::gemm::gemm;
use super::{GradStore, ParamId, ParamStore, Tensor, TensorError};

/// Additive-mask value for a hidden entry.
pub const MASK_NEG: f64 = -1.0e9;

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    Embedding { table: Var, ids: Vec<usize> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    SoftmaxMasked(Var),
    NormalizeRows { a: Var, norms: Vec<f64> },
    Sum(Var),
    Mean(Var),
    Mse { pred: Var, target: Vec<f64> },
    SiLog { pred: Var, d: Vec<f64>, lambda: f64 },
    CrossEntropy { logits: Var, class: usize, probs: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Embedding { .. } => "embedding",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(_) => "gelu",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::SoftmaxMasked(_) => "softmax_masked",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Mse { .. } => "mse_loss",
            Op::SiLog { .. } => "silog_loss",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so the
/// node list is always topologically sorted.
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<'p>>,
    grads: Vec<Option<Vec<f64>>>,
    checked: bool,
}

impl Default for Tape<'static> {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape<'static> {
    pub fn new() -> Self {
        Tape {
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
            grads: Vec::new(),
            checked: true,
        }
    }
}

impl<'p> Tape<'p> {
    pub fn with_params(params: &'p ParamStore) -> Self {
        Tape {
            params: Some(params),
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
            grads: Vec::new(),
            checked: true,
        }
    }

    /// Toggles the non-finite check performed after every op.
    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass(es) with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var, TensorError> {
        if self.checked && !value.all_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Places a parameter on the tape (once per tape; later calls reuse the node).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(id.0).copied().flatten() {
            return v;
        }
        let params = self.params.expect("tape was created without a parameter store");
        self.nodes.push(Node {
            value: Cow::Borrowed(params.get(id)),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn mat_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize), TensorError> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(TensorError::Rank {
                op,
                expected: 2,
                shape: s.to_vec(),
            });
        }
        Ok((s[0], s[1]))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let op = if trans_b { "matmul_nt" } else { "matmul" };
        let (m, k) = self.mat_dims(a, op)?;
        let (br, bc) = self.mat_dims(b, op)?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(self.mismatch(op, a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            trans_b,
            &mut out,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b, trans_b }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// Adds a length-`n` row vector to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (m, n) = self.mat_dims(a, "add_row")?;
        if self.value(row).numel() != n {
            return Err(self.mismatch("add_row", a, row));
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (x, b) in data[i * n..(i + 1) * n].iter_mut().zip(r) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(Tensor::new(&[m, n], data)?, Op::AddRow(a, row), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        let data = self.value(a).data().iter().map(|x| x * s).collect();
        let t = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.mat_dims(a, "transpose")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::new(&[n, m], data)?, Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        self.push(t, Op::Reshape(a), rg)
    }

    /// Stacks 2-D tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or_else(|| {
            TensorError::Invalid("concat_rows of an empty list".into())
        })?;
        let (_, n) = self.mat_dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (m, c) = self.mat_dims(p, "concat_rows")?;
            if c != n {
                return Err(self.mismatch("concat_rows", first, p));
            }
            rows += m;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::new(&[rows, n], data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    /// Joins 2-D tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or_else(|| {
            TensorError::Invalid("concat_cols of an empty list".into())
        })?;
        let (m, _) = self.mat_dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.mat_dims(p, "concat_cols")?;
            if r != m {
                return Err(self.mismatch("concat_cols", first, p));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut data = vec![0.0; m * n];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..m {
                data[i * n + off..i * n + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::new(&[m, n], data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (m, n) = self.mat_dims(a, "slice_rows")?;
        if start > end || end > m {
            return Err(TensorError::Slice {
                op: "slice_rows",
                start,
                end,
                shape: vec![m, n],
            });
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        let rg = self.rg(a);
        self.push(
            Tensor::new(&[end - start, n], data)?,
            Op::SliceRows { a, start },
            rg,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (m, n) = self.mat_dims(a, "slice_cols")?;
        if start > end || end > n {
            return Err(TensorError::Slice {
                op: "slice_cols",
                start,
                end,
                shape: vec![m, n],
            });
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let rg = self.rg(a);
        self.push(Tensor::new(&[m, w], data)?, Op::SliceCols { a, start }, rg)
    }

    /// Gathers rows of `table` (`vocab × d`).
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (v, d) = self.mat_dims(table, "embedding")?;
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Invalid(format!(
                    "embedding index {id} out of range for table with {v} rows"
                )));
            }
            data.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        self.push(
            Tensor::new(&[ids.len(), d], data)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` of length `n`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let (m, n) = self.mat_dims(x, "layer_norm")?;
        if self.value(gamma).numel() != n {
            return Err(self.mismatch("layer_norm", x, gamma));
        }
        if self.value(beta).numel() != n {
            return Err(self.mismatch("layer_norm", x, beta));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Tensor::new(&[m, n], out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, TensorError> {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// Row-wise softmax of `logits + mask`. Entries whose mask is at or below
    /// `MASK_NEG / 2` get probability exactly zero; a row with every entry
    /// masked yields all zeros.
    pub fn softmax_masked(&mut self, logits: Var, mask: &Rc<[f64]>) -> Result<Var, TensorError> {
        let (m, n) = self.mat_dims(logits, "softmax_masked")?;
        if mask.len() != m * n {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_masked",
                lhs: vec![m, n],
                rhs: vec![mask.len()],
            });
        }
        let src = self.value(logits).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mrow = &mask[i * n..(i + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if mrow[j] > MASK_NEG / 2.0 {
                    max = max.max(row[j] + mrow[j]);
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            let mut z = 0.0;
            for j in 0..n {
                if mrow[j] > MASK_NEG / 2.0 {
                    let e = (row[j] + mrow[j] - max).exp();
                    orow[j] = e;
                    z += e;
                }
            }
            for o in orow.iter_mut() {
                *o /= z;
            }
        }
        let rg = self.rg(logits);
        self.push(Tensor::new(&[m, n], out)?, Op::SoftmaxMasked(logits), rg)
    }

    /// Scales every row of a matrix to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.mat_dims(a, "normalize_rows")?;
        let src = self.value(a).data();
        let mut norms = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let s = (row.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
            norms[i] = s;
            for j in 0..n {
                out[i * n + j] = row[j] / s;
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::new(&[m, n], out)?,
            Op::NormalizeRows { a, norms },
            rg,
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Mean squared difference against a fixed target.
    pub fn mse_loss(&mut self, pred: Var, target: &[f64]) -> Result<Var, TensorError> {
        let p = self.value(pred);
        if p.numel() != target.len() {
            return Err(TensorError::ShapeMismatch {
                op: "mse_loss",
                lhs: p.shape().to_vec(),
                rhs: vec![target.len()],
            });
        }
        let n = target.len().max(1) as f64;
        let l = p
            .data()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let rg = self.rg(pred);
        self.push(
            Tensor::scalar(l),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            rg,
        )
    }

    /// Scale-invariant log loss `mean(d²) − λ·mean(d)²`, `d = ln pred − ln target`.
    pub fn silog_loss(&mut self, pred: Var, target: &[f64], lambda: f64) -> Result<Var, TensorError> {
        let p = self.value(pred);
        if p.numel() != target.len() {
            return Err(TensorError::ShapeMismatch {
                op: "silog_loss",
                lhs: p.shape().to_vec(),
                rhs: vec![target.len()],
            });
        }
        if let Some(bad) = p.data().iter().chain(target).find(|v| !(**v > 0.0)) {
            return Err(TensorError::NonPositive {
                op: "silog_loss",
                value: *bad,
            });
        }
        let d = silog_residuals(p.data(), target);
        let l = silog_value(&d, lambda);
        let rg = self.rg(pred);
        self.push(Tensor::scalar(l), Op::SiLog { pred, d, lambda }, rg)
    }

    /// Negative log-softmax of `logits` (a vector or `1 × n`) at `class`.
    pub fn cross_entropy(&mut self, logits: Var, class: usize) -> Result<Var, TensorError> {
        let z = self.value(logits).data();
        if class >= z.len() {
            return Err(TensorError::Invalid(format!(
                "class {class} out of range for {} logits",
                z.len()
            )));
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        let probs: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
        let l = lse - z[class];
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(l),
            Op::CrossEntropy {
                logits,
                class,
                probs,
            },
            rg,
        )
    }

    /// Accumulates d(loss)/d(node) into the tape's node gradients and into
    /// `grads` for every parameter reached. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var, grads: &mut GradStore) -> Result<(), TensorError> {
        self.backward_scaled(loss, 1.0, grads)
    }

    /// As [`Tape::backward`] with the seed gradient set to `scale`.
    pub fn backward_scaled(
        &mut self,
        loss: Var,
        scale: f64,
        grads: &mut GradStore,
    ) -> Result<(), TensorError> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let n = self.nodes.len();
        let mut local: Vec<Option<Vec<f64>>> = vec![None; n];
        local[loss.0] = Some(vec![scale]);
        for i in (0..=loss.0).rev() {
            let Some(g) = local[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            backprop_node(&self.nodes, i, &g, &mut local, grads);
            let slot = self.grads_slot(i);
            if let Some(acc) = slot.as_mut() {
                add_assign(acc, &g);
            } else {
                *slot = Some(g);
            }
        }
        Ok(())
    }

    fn grads_slot(&mut self, i: usize) -> &mut Option<Vec<f64>> {
        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), None);
        }
        &mut self.grads[i]
    }
}

fn ensure<'a>(local: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut [f64]> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(local[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
}

fn backprop_node(
    nodes: &[Node],
    i: usize,
    g: &[f64],
    local: &mut [Option<Vec<f64>>],
    grads: &mut GradStore,
) {
    let node = &nodes[i];
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Param(id) => grads.accumulate(*id, g, 1.0),
        Op::MatMul { a, b, trans_b } => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = node.value.shape()[1];
            if let Some(ga) = ensure(local, nodes, *a) {
                // dA = dC · Bᵀ  (or dC · B when B was used transposed)
                gemm(m, n, k, g, false, bv.data(), !trans_b, ga, true);
            }
            if let Some(gb) = ensure(local, nodes, *b) {
                if *trans_b {
                    // B is n × k: dB = dCᵀ · A
                    gemm(n, m, k, g, true, av.data(), false, gb, true);
                } else {
                    // dB = Aᵀ · dC
                    gemm(k, m, n, av.data(), true, g, false, gb, true);
                }
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(gv) = ensure(local, nodes, *v) {
                    add_assign(gv, g);
                }
            }
        }
        Op::AddRow(a, row) => {
            if let Some(ga) = ensure(local, nodes, *a) {
                add_assign(ga, g);
            }
            let n = node.value.cols();
            if let Some(gr) = ensure(local, nodes, *row) {
                for chunk in g.chunks(n) {
                    add_assign(gr, chunk);
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            if let Some(ga) = ensure(local, nodes, *a) {
                for ((x, gi), y) in ga.iter_mut().zip(g).zip(bv) {
                    *x += gi * y;
                }
            }
            if let Some(gb) = ensure(local, nodes, *b) {
                for ((x, gi), y) in gb.iter_mut().zip(g).zip(av) {
                    *x += gi * y;
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(ga) = ensure(local, nodes, *a) {
                for (x, gi) in ga.iter_mut().zip(g) {
                    *x += s * gi;
                }
            }
        }
        Op::Transpose(a) => {
            let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
            if let Some(ga) = ensure(local, nodes, *a) {
                // output is m × n, input n × m
                for r in 0..m {
                    for c in 0..n {
                        ga[c * m + r] += g[r * n + c];
                    }
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(ga) = ensure(local, nodes, *a) {
                add_assign(ga, g);
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for p in parts {
                let len = nodes[p.0].value.numel();
                if let Some(gp) = ensure(local, nodes, *p) {
                    add_assign(gp, &g[off..off + len]);
                }
                off += len;
            }
        }
        Op::ConcatCols(parts) => {
            let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
            let mut off = 0;
            for p in parts {
                let w = nodes[p.0].value.shape()[1];
                if let Some(gp) = ensure(local, nodes, *p) {
                    for r in 0..m {
                        add_assign(&mut gp[r * w..(r + 1) * w], &g[r * n + off..r * n + off + w]);
                    }
                }
                off += w;
            }
        }
        Op::SliceRows { a, start } => {
            let n = node.value.cols();
            if let Some(ga) = ensure(local, nodes, *a) {
                add_assign(&mut ga[start * n..start * n + g.len()], g);
            }
        }
        Op::SliceCols { a, start } => {
            let (m, w) = (node.value.shape()[0], node.value.shape()[1]);
            let n = nodes[a.0].value.shape()[1];
            if let Some(ga) = ensure(local, nodes, *a) {
                for r in 0..m {
                    add_assign(
                        &mut ga[r * n + start..r * n + start + w],
                        &g[r * w..(r + 1) * w],
                    );
                }
            }
        }
        Op::Embedding { table, ids } => {
            let d = node.value.cols();
            if let Some(gt) = ensure(local, nodes, *table) {
                for (r, &id) in ids.iter().enumerate() {
                    add_assign(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let n = node.value.cols();
            let m = node.value.rows();
            let gv = nodes[gamma.0].value.data();
            if let Some(gg) = ensure(local, nodes, *gamma) {
                for r in 0..m {
                    for j in 0..n {
                        gg[j] += g[r * n + j] * xhat[r * n + j];
                    }
                }
            }
            if let Some(gb) = ensure(local, nodes, *beta) {
                for chunk in g.chunks(n) {
                    add_assign(gb, chunk);
                }
            }
            if let Some(gx) = ensure(local, nodes, *x) {
                let nf = n as f64;
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        s1 += dh;
                        s2 += dh * hr[j];
                    }
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        gx[r * n + j] += rstd[r] / nf * (nf * dh - s1 - hr[j] * s2);
                    }
                }
            }
        }
        Op::Gelu(a) => {
            let av = nodes[a.0].value.data();
            if let Some(ga) = ensure(local, nodes, *a) {
                for ((x, gi), &v) in ga.iter_mut().zip(g).zip(av) {
                    *x += gi * gelu_grad(v);
                }
            }
        }
        Op::Relu(a) => {
            let av = nodes[a.0].value.data();
            if let Some(ga) = ensure(local, nodes, *a) {
                for ((x, gi), &v) in ga.iter_mut().zip(g).zip(av) {
                    if v > 0.0 {
                        *x += gi;
                    }
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(ga) = ensure(local, nodes, *a) {
                for ((x, gi), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x += gi * y * (1.0 - y);
                }
            }
        }
        Op::Softplus(a) => {
            let av = nodes[a.0].value.data();
            if let Some(ga) = ensure(local, nodes, *a) {
                for ((x, gi), &v) in ga.iter_mut().zip(g).zip(av) {
                    *x += gi * sigmoid(v);
                }
            }
        }
        Op::SoftmaxMasked(a) => {
            let n = node.value.cols();
            if let Some(ga) = ensure(local, nodes, *a) {
                for (r, (yr, gr)) in out.chunks(n).zip(g.chunks(n)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, d)| y * d).sum();
                    for j in 0..n {
                        ga[r * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::NormalizeRows { a, norms } => {
            let n = node.value.cols();
            if let Some(ga) = ensure(local, nodes, *a) {
                for (r, (yr, gr)) in out.chunks(n).zip(g.chunks(n)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, d)| y * d).sum();
                    for j in 0..n {
                        ga[r * n + j] += (gr[j] - yr[j] * dot) / norms[r];
                    }
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = ensure(local, nodes, *a) {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }
        }
        Op::Mean(a) => {
            if let Some(ga) = ensure(local, nodes, *a) {
                let s = g[0] / ga.len().max(1) as f64;
                for x in ga.iter_mut() {
                    *x += s;
                }
            }
        }
        Op::Mse { pred, target } => {
            let pv = nodes[pred.0].value.data();
            if let Some(gp) = ensure(local, nodes, *pred) {
                let s = 2.0 * g[0] / target.len().max(1) as f64;
                for ((x, p), t) in gp.iter_mut().zip(pv).zip(target) {
                    *x += s * (p - t);
                }
            }
        }
        Op::SiLog { pred, d, lambda } => {
            let pv = nodes[pred.0].value.data();
            if let Some(gp) = ensure(local, nodes, *pred) {
                let n = d.len() as f64;
                let mean_d = d.iter().sum::<f64>() / n;
                for ((x, p), di) in gp.iter_mut().zip(pv).zip(d) {
                    *x += g[0] * (2.0 * di / n - 2.0 * lambda * mean_d / n) / p;
                }
            }
        }
        Op::CrossEntropy {
            logits,
            class,
            probs,
        } => {
            if let Some(gl) = ensure(local, nodes, *logits) {
                for (j, (x, p)) in gl.iter_mut().zip(probs).enumerate() {
                    let onehot = if j == *class { 1.0 } else { 0.0 };
                    *x += g[0] * (p - onehot);
                }
            }
        }
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn silog_residuals(pred: &[f64], target: &[f64]) -> Vec<f64> {
    pred.iter().zip(target).map(|(p, t)| p.ln() - t.ln()).collect()
}

pub(crate) fn silog_value(d: &[f64], lambda: f64) -> f64 {
    let n = d.len() as f64;
    let mean_sq = d.iter().map(|v| v * v).sum::<f64>() / n;
    let mean = d.iter().sum::<f64>() / n;
    mean_sq - lambda * mean * mean
}
