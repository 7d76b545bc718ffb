//! Eager operation recording and the reverse sweep.
//!
//! A [`Graph`] is built fresh for each forward pass and never reused
//! across steps. Recording order is the topological order, so backward is
//! a single reverse iteration that touches each node at most once.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::{NumericsError, Result, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

/// Boundary handling for convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Mirror without repeating the edge sample: index -1 maps to 1.
    Reflect,
    Zero,
}

/// Recorded operation. Variants carry input ids plus whatever constants
/// the backward pass needs.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Neg(TensorId),
    Scale(TensorId, f64),
    AddConst(TensorId, f64),
    Ln(TensorId),
    Abs(TensorId),
    HuberElem(TensorId, f64),
    Gelu(TensorId),
    Relu(TensorId),
    Matmul(TensorId, TensorId),
    Transpose(TensorId),
    Reshape(TensorId),
    Softmax { x: TensorId, axis: usize },
    LayerNorm { x: TensorId, gain: TensorId, bias: TensorId, eps: f64 },
    MeanAll(TensorId),
    SumAll(TensorId),
    GatherRows { x: TensorId, idx: Vec<usize> },
    ScatterRows { x: TensorId, idx: Vec<usize>, n_rows: usize },
    PlaceRow { row: TensorId, idx: Vec<usize>, n_rows: usize },
    ColSlice { x: TensorId, start: usize, len: usize },
    ConcatCols(Vec<TensorId>),
    AddRowVec { x: TensorId, v: TensorId },
    AddScalarNode { x: TensorId, s: TensorId },
    AffineCols { x: TensorId, scale: Vec<f64>, shift: Vec<f64> },
    Conv2d { img: TensorId, ker: TensorId, pad: PadMode },
    Conv2dMc { x: TensorId, w: TensorId, b: TensorId },
    UpsampleNearest { x: TensorId, factor: usize },
    CrossEntropyMean { logits: TensorId, labels: Vec<usize> },
}

struct Node {
    op: Op,
    value: Tensor,
    rg: bool,
}

/// Per-pass computation graph.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn reflect(i: isize, len: isize) -> isize {
    if len == 1 {
        return 0;
    }
    let mut i = i;
    while i < 0 || i >= len {
        if i < 0 {
            i = -i;
        }
        if i >= len {
            i = 2 * (len - 1) - i;
        }
    }
    i
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: TensorId) -> Result<f64> {
        self.nodes[id.0].value.item()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].rg
    }

    /// Register an input tensor. Gradient tracking follows
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> TensorId {
        let rg = tensor.requires_grad();
        self.push(Op::Leaf, tensor, rg)
    }

    fn push(&mut self, op: Op, value: Tensor, rg: bool) -> TensorId {
        self.nodes.push(Node { op, value, rg });
        TensorId(self.nodes.len() - 1)
    }

    fn out(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>, rg: bool, name: &'static str) -> Result<TensorId> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(NumericsError::NonFinite { op: name });
        }
        let value = Tensor { shape, data: Arc::new(data), requires_grad: false };
        Ok(self.push(op, value, rg))
    }

    fn binary_same_shape(&self, a: TensorId, b: TensorId, name: &'static str) -> Result<()> {
        let (sa, sb) = (self.tensor(a).shape(), self.tensor(b).shape());
        if sa != sb {
            return Err(NumericsError::ShapeMismatch {
                op: name,
                detail: format!("{:?} vs {:?}", sa, sb),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "add")?;
        let data: Vec<f64> = self
            .tensor(a)
            .data()
            .iter()
            .zip(self.tensor(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.tensor(a).shape().to_vec();
        let rg = self.nodes[a.0].rg || self.nodes[b.0].rg;
        self.out(Op::Add(a, b), shape, data, rg, "add")
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "sub")?;
        let data: Vec<f64> = self
            .tensor(a)
            .data()
            .iter()
            .zip(self.tensor(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.tensor(a).shape().to_vec();
        let rg = self.nodes[a.0].rg || self.nodes[b.0].rg;
        self.out(Op::Sub(a, b), shape, data, rg, "sub")
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "mul")?;
        let data: Vec<f64> = self
            .tensor(a)
            .data()
            .iter()
            .zip(self.tensor(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.tensor(a).shape().to_vec();
        let rg = self.nodes[a.0].rg || self.nodes[b.0].rg;
        self.out(Op::Mul(a, b), shape, data, rg, "mul")
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape(a, b, "div")?;
        let data: Vec<f64> = self
            .tensor(a)
            .data()
            .iter()
            .zip(self.tensor(b).data())
            .map(|(x, y)| x / y)
            .collect();
        let shape = self.tensor(a).shape().to_vec();
        let rg = self.nodes[a.0].rg || self.nodes[b.0].rg;
        self.out(Op::Div(a, b), shape, data, rg, "div")
    }

    pub fn neg(&mut self, a: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.tensor(a).data().iter().map(|x| -x).collect();
        let shape = self.tensor(a).shape().to_vec();
        let rg = self.nodes[a.0].rg;
        self.out(Op::Neg(a), shape, data, rg, "neg")
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let data: Vec<f64> = self.tensor(a).data().iter().map(|x| x * c).collect();
        let shape = self.tensor(a).shape().to_vec();
        let rg = self.nodes[a.0].rg;
        self.out(Op::Scale(a, c), shape, data, rg, "scale")
    }

    pub fn add_const(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let data: Vec<f64> = self.tensor(a).data().iter().map(|x| x + c).collect();
        let shape = self.tensor(a).shape().to_vec();
        let rg = self.nodes[a.0].rg;
        self.out(Op::AddConst(a, c), shape, data, rg, "add_const")
    }

    pub fn ln(&mut self, a: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.tensor(a).data().iter().map(|x| libm::log(*x)).collect();
        let shape = self.tensor(a).shape().to_vec();
        let rg = self.nodes[a.0].rg;
        self.out(Op::Ln(a), shape, data, rg, "ln")
    }

    pub fn abs(&mut self, a: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.tensor(a).data().iter().map(|x| libm::fabs(*x)).collect();
        let shape = self.tensor(a).shape().to_vec();
        let rg = self.nodes[a.0].rg;
        self.out(Op::Abs(a), shape, data, rg, "abs")
    }

    /// Elementwise Huber: `d^2/2` for |d| <= delta, else `delta(|d| - delta/2)`.
    pub fn huber_elem(&mut self, a: TensorId, delta: f64) -> Result<TensorId> {
        if delta <= 0.0 {
            return Err(NumericsError::InvalidArgument {
                op: "huber_elem",
                detail: format!("delta must be positive, got {delta}"),
            });
        }
        let data: Vec<f64> = self
            .tensor(a)
            .data()
            .iter()
            .map(|&d| {
                let ad = libm::fabs(d);
                if ad <= delta {
                    0.5 * d * d
                } else {
                    delta * (ad - 0.5 * delta)
                }
            })
            .collect();
        let shape = self.tensor(a).shape().to_vec();
        let rg = self.nodes[a.0].rg;
        self.out(Op::HuberElem(a, delta), shape, data, rg, "huber_elem")
    }

    /// Exact GELU: `0.5 x (1 + erf(x / sqrt(2)))`.
    pub fn gelu(&mut self, a: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self
            .tensor(a)
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + libm::erf(x / core::f64::consts::SQRT_2)))
            .collect();
        let shape = self.tensor(a).shape().to_vec();
        let rg = self.nodes[a.0].rg;
        self.out(Op::Gelu(a), shape, data, rg, "gelu")
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.tensor(a).data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let shape = self.tensor(a).shape().to_vec();
        let rg = self.nodes[a.0].rg;
        self.out(Op::Relu(a), shape, data, rg, "relu")
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.tensor(a).shape().to_vec(), self.tensor(b).shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", sa, sb),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let da = self.tensor(a).data();
        let db = self.tensor(b).data();
        let mut data = vec![0.0; m * n];
        // i-k-j loop order keeps the inner walk contiguous in both b and out.
        for i in 0..m {
            for p in 0..k {
                let av = da[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &db[p * n..(p + 1) * n];
                let orow = &mut data[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        let rg = self.nodes[a.0].rg || self.nodes[b.0].rg;
        self.out(Op::Matmul(a, b), vec![m, n], data, rg, "matmul")
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let s = self.tensor(a).shape().to_vec();
        if s.len() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op: "transpose",
                detail: format!("expected rank 2, got {:?}", s),
            });
        }
        let (r, c) = (s[0], s[1]);
        let d = self.tensor(a).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = d[i * c + j];
            }
        }
        let rg = self.nodes[a.0].rg;
        self.out(Op::Transpose(a), vec![c, r], data, rg, "transpose")
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.tensor(a).numel() {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.tensor(a).shape(), shape),
            });
        }
        let data = self.tensor(a).data().to_vec();
        let rg = self.nodes[a.0].rg;
        self.out(Op::Reshape(a), shape, data, rg, "reshape")
    }

    /// Softmax along `axis`. Output sums to 1 along that axis.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.tensor(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::InvalidArgument {
                op: "softmax",
                detail: format!("axis {axis} out of range for shape {:?}", shape),
            });
        }
        let lane = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let d = self.tensor(x).data();
        let mut data = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * lane * inner + i;
                let mut max = f64::NEG_INFINITY;
                for l in 0..lane {
                    max = max.max(d[base + l * inner]);
                }
                let mut sum = 0.0;
                for l in 0..lane {
                    let e = libm::exp(d[base + l * inner] - max);
                    data[base + l * inner] = e;
                    sum += e;
                }
                for l in 0..lane {
                    data[base + l * inner] /= sum;
                }
            }
        }
        let rg = self.nodes[x.0].rg;
        self.out(Op::Softmax { x, axis }, shape, data, rg, "softmax")
    }

    /// Layer normalization over the last axis, then affine with `gain`/`bias`.
    ///
    /// Variance is floored by `eps`, so a constant lane maps to zeros
    /// rather than dividing by zero.
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId, eps: f64) -> Result<TensorId> {
        let shape = self.tensor(x).shape().to_vec();
        let dim = *shape.last().ok_or(NumericsError::ShapeMismatch {
            op: "layer_norm",
            detail: format!("rank-0 input"),
        })?;
        if self.tensor(gain).numel() != dim || self.tensor(bias).numel() != dim {
            return Err(NumericsError::ShapeMismatch {
                op: "layer_norm",
                detail: format!(
                    "gain/bias length {}/{} vs lane {dim}",
                    self.tensor(gain).numel(),
                    self.tensor(bias).numel()
                ),
            });
        }
        let d = self.tensor(x).data();
        let g = self.tensor(gain).data().to_vec();
        let b = self.tensor(bias).data().to_vec();
        let rows = d.len() / dim;
        let mut data = vec![0.0; d.len()];
        for r in 0..rows {
            let row = &d[r * dim..(r + 1) * dim];
            let mean = row.iter().sum::<f64>() / dim as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
            let inv = 1.0 / libm::sqrt(var + eps);
            for j in 0..dim {
                data[r * dim + j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        let rg = self.nodes[x.0].rg || self.nodes[gain.0].rg || self.nodes[bias.0].rg;
        self.out(Op::LayerNorm { x, gain, bias, eps }, shape, data, rg, "layer_norm")
    }

    pub fn mean_all(&mut self, a: TensorId) -> Result<TensorId> {
        let d = self.tensor(a).data();
        let n = d.len().max(1);
        let mean = d.iter().sum::<f64>() / n as f64;
        let rg = self.nodes[a.0].rg;
        self.out(Op::MeanAll(a), vec![], vec![mean], rg, "mean_all")
    }

    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let sum = self.tensor(a).data().iter().sum::<f64>();
        let rg = self.nodes[a.0].rg;
        self.out(Op::SumAll(a), vec![], vec![sum], rg, "sum_all")
    }

    /// Select rows of a `(rows, cols)` tensor. Indices may repeat.
    pub fn gather_rows(&mut self, x: TensorId, idx: &[usize]) -> Result<TensorId> {
        let s = self.tensor(x).shape().to_vec();
        if s.len() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op: "gather_rows",
                detail: format!("expected rank 2, got {:?}", s),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::InvalidArgument {
                op: "gather_rows",
                detail: format!("row index {bad} out of range for {rows} rows"),
            });
        }
        let d = self.tensor(x).data();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(&d[i * cols..(i + 1) * cols]);
        }
        let rg = self.nodes[x.0].rg;
        self.out(Op::GatherRows { x, idx: idx.to_vec() }, vec![idx.len(), cols], data, rg, "gather_rows")
    }

    /// Place the rows of `x` at positions `idx` of an otherwise-zero
    /// `(n_rows, cols)` tensor.
    pub fn scatter_rows(&mut self, x: TensorId, idx: &[usize], n_rows: usize) -> Result<TensorId> {
        let s = self.tensor(x).shape().to_vec();
        if s.len() != 2 || s[0] != idx.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "scatter_rows",
                detail: format!("rows {:?} vs {} indices", s, idx.len()),
            });
        }
        let cols = s[1];
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_rows) {
            return Err(NumericsError::InvalidArgument {
                op: "scatter_rows",
                detail: format!("row index {bad} out of range for {n_rows} rows"),
            });
        }
        let d = self.tensor(x).data();
        let mut data = vec![0.0; n_rows * cols];
        for (k, &i) in idx.iter().enumerate() {
            data[i * cols..(i + 1) * cols].copy_from_slice(&d[k * cols..(k + 1) * cols]);
        }
        let rg = self.nodes[x.0].rg;
        self.out(Op::ScatterRows { x, idx: idx.to_vec(), n_rows }, vec![n_rows, cols], data, rg, "scatter_rows")
    }

    /// Broadcast a single row vector to positions `idx` of an
    /// otherwise-zero `(n_rows, cols)` tensor.
    pub fn place_row(&mut self, row: TensorId, idx: &[usize], n_rows: usize) -> Result<TensorId> {
        let cols = self.tensor(row).numel();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_rows) {
            return Err(NumericsError::InvalidArgument {
                op: "place_row",
                detail: format!("row index {bad} out of range for {n_rows} rows"),
            });
        }
        let d = self.tensor(row).data().to_vec();
        let mut data = vec![0.0; n_rows * cols];
        for &i in idx {
            data[i * cols..(i + 1) * cols].copy_from_slice(&d);
        }
        let rg = self.nodes[row.0].rg;
        self.out(Op::PlaceRow { row, idx: idx.to_vec(), n_rows }, vec![n_rows, cols], data, rg, "place_row")
    }

    /// Columns `[start, start+len)` of a `(rows, cols)` tensor.
    pub fn col_slice(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let s = self.tensor(x).shape().to_vec();
        if s.len() != 2 || start + len > s[1] {
            return Err(NumericsError::ShapeMismatch {
                op: "col_slice",
                detail: format!("cols [{start}, {}) of {:?}", start + len, s),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let d = self.tensor(x).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&d[r * cols + start..r * cols + start + len]);
        }
        let rg = self.nodes[x.0].rg;
        self.out(Op::ColSlice { x, start, len }, vec![rows, len], data, rg, "col_slice")
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(NumericsError::InvalidArgument {
                op: "concat_cols",
                detail: format!("no parts"),
            });
        }
        let rows = self.tensor(parts[0]).shape()[0];
        let mut total = 0;
        for &p in parts {
            let s = self.tensor(p).shape();
            if s.len() != 2 || s[0] != rows {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("part shape {:?} vs {} rows", s, rows),
                });
            }
            total += s[1];
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let c = self.tensor(p).shape()[1];
                let d = self.tensor(p).data();
                data.extend_from_slice(&d[r * c..(r + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.nodes[p.0].rg);
        self.out(Op::ConcatCols(parts.to_vec()), vec![rows, total], data, rg, "concat_cols")
    }

    /// `(rows, cols) + (cols,)` broadcast add (bias).
    pub fn add_row_vec(&mut self, x: TensorId, v: TensorId) -> Result<TensorId> {
        let s = self.tensor(x).shape().to_vec();
        let cols = *s.last().unwrap_or(&0);
        if self.tensor(v).numel() != cols {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row_vec",
                detail: format!("{:?} + vec of {}", s, self.tensor(v).numel()),
            });
        }
        let d = self.tensor(x).data();
        let vd = self.tensor(v).data().to_vec();
        let data: Vec<f64> = d.iter().enumerate().map(|(i, x)| x + vd[i % cols]).collect();
        let rg = self.nodes[x.0].rg || self.nodes[v.0].rg;
        self.out(Op::AddRowVec { x, v }, s, data, rg, "add_row_vec")
    }

    /// Add a scalar node to every element.
    pub fn add_scalar_node(&mut self, x: TensorId, s: TensorId) -> Result<TensorId> {
        let sv = self.tensor(s).item()?;
        let shape = self.tensor(x).shape().to_vec();
        let data: Vec<f64> = self.tensor(x).data().iter().map(|v| v + sv).collect();
        let rg = self.nodes[x.0].rg || self.nodes[s.0].rg;
        self.out(Op::AddScalarNode { x, s }, shape, data, rg, "add_scalar_node")
    }

    /// Per-column constant affine `x * scale + shift` on a `(rows, cols)`
    /// tensor. Used to map normalized values back to reflectance.
    pub fn affine_cols(&mut self, x: TensorId, scale: &[f64], shift: &[f64]) -> Result<TensorId> {
        let s = self.tensor(x).shape().to_vec();
        let cols = *s.last().unwrap_or(&0);
        if scale.len() != cols || shift.len() != cols {
            return Err(NumericsError::ShapeMismatch {
                op: "affine_cols",
                detail: format!("{} scales / {} shifts vs {} cols", scale.len(), shift.len(), cols),
            });
        }
        let d = self.tensor(x).data();
        let data: Vec<f64> = d
            .iter()
            .enumerate()
            .map(|(i, v)| v * scale[i % cols] + shift[i % cols])
            .collect();
        let rg = self.nodes[x.0].rg;
        self.out(
            Op::AffineCols { x, scale: scale.to_vec(), shift: shift.to_vec() },
            s,
            data,
            rg,
            "affine_cols",
        )
    }

    /// Per-channel cross-correlation of a `(C, H, W)` or `(H, W)` image
    /// with one `(kh, kw)` kernel, same-size output.
    pub fn conv2d(&mut self, img: TensorId, ker: TensorId, pad: PadMode) -> Result<TensorId> {
        let si = self.tensor(img).shape().to_vec();
        let sk = self.tensor(ker).shape().to_vec();
        let (c, h, w) = match si.len() {
            2 => (1, si[0], si[1]),
            3 => (si[0], si[1], si[2]),
            _ => {
                return Err(NumericsError::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("image rank {:?}", si),
                })
            }
        };
        if sk.len() != 2 || sk[0] % 2 == 0 || sk[1] % 2 == 0 {
            return Err(NumericsError::InvalidArgument {
                op: "conv2d",
                detail: format!("kernel must be rank 2 with odd sides, got {:?}", sk),
            });
        }
        let (kh, kw) = (sk[0], sk[1]);
        let (ch, cw) = (kh as isize / 2, kw as isize / 2);
        let di = self.tensor(img).data();
        let dk = self.tensor(ker).data();
        let mut data = vec![0.0; c * h * w];
        for cc in 0..c {
            let plane = &di[cc * h * w..(cc + 1) * h * w];
            for i in 0..h as isize {
                for j in 0..w as isize {
                    let mut acc = 0.0;
                    for u in 0..kh as isize {
                        for v in 0..kw as isize {
                            let (ii, jj) = (i + u - ch, j + v - cw);
                            let src = match pad {
                                PadMode::Reflect => {
                                    let ri = reflect(ii, h as isize);
                                    let rj = reflect(jj, w as isize);
                                    plane[ri as usize * w + rj as usize]
                                }
                                PadMode::Zero => {
                                    if ii < 0 || ii >= h as isize || jj < 0 || jj >= w as isize {
                                        0.0
                                    } else {
                                        plane[ii as usize * w + jj as usize]
                                    }
                                }
                            };
                            acc += src * dk[(u * kw as isize + v) as usize];
                        }
                    }
                    data[cc * h * w + (i as usize) * w + j as usize] = acc;
                }
            }
        }
        let rg = self.nodes[img.0].rg || self.nodes[ker.0].rg;
        self.out(Op::Conv2d { img, ker, pad }, si, data, rg, "conv2d")
    }

    /// Multi-channel convolution for the downstream heads:
    /// `(Cin, H, W) * (Cout, Cin, kh, kw) + (Cout,)`, zero same-padding.
    pub fn conv2d_mc(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let sx = self.tensor(x).shape().to_vec();
        let sw = self.tensor(w).shape().to_vec();
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "conv2d_mc",
                detail: format!("x {:?} w {:?}", sx, sw),
            });
        }
        if sw[2] % 2 == 0 || sw[3] % 2 == 0 {
            return Err(NumericsError::InvalidArgument {
                op: "conv2d_mc",
                detail: format!("kernel sides must be odd, got {:?}", &sw[2..]),
            });
        }
        let (cin, h, wd) = (sx[0], sx[1], sx[2]);
        let (cout, kh, kw) = (sw[0], sw[2], sw[3]);
        if self.tensor(b).numel() != cout {
            return Err(NumericsError::ShapeMismatch {
                op: "conv2d_mc",
                detail: format!("bias {} vs {} out channels", self.tensor(b).numel(), cout),
            });
        }
        let (ch, cw) = (kh as isize / 2, kw as isize / 2);
        let dx = self.tensor(x).data();
        let dw = self.tensor(w).data();
        let db = self.tensor(b).data();
        let mut data = vec![0.0; cout * h * wd];
        for o in 0..cout {
            for i in 0..h as isize {
                for j in 0..wd as isize {
                    let mut acc = db[o];
                    for ci in 0..cin {
                        for u in 0..kh as isize {
                            for v in 0..kw as isize {
                                let (ii, jj) = (i + u - ch, j + v - cw);
                                if ii < 0 || ii >= h as isize || jj < 0 || jj >= wd as isize {
                                    continue;
                                }
                                acc += dx[ci * h * wd + ii as usize * wd + jj as usize]
                                    * dw[((o * cin + ci) * kh + u as usize) * kw + v as usize];
                            }
                        }
                    }
                    data[o * h * wd + i as usize * wd + j as usize] = acc;
                }
            }
        }
        let rg = self.nodes[x.0].rg || self.nodes[w.0].rg || self.nodes[b.0].rg;
        self.out(Op::Conv2dMc { x, w, b }, vec![cout, h, wd], data, rg, "conv2d_mc")
    }

    /// Nearest-neighbor upsample of `(C, H, W)` by an integer factor.
    pub fn upsample_nearest(&mut self, x: TensorId, factor: usize) -> Result<TensorId> {
        let s = self.tensor(x).shape().to_vec();
        if s.len() != 3 || factor == 0 {
            return Err(NumericsError::InvalidArgument {
                op: "upsample_nearest",
                detail: format!("shape {:?}, factor {factor}", s),
            });
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h * factor, w * factor);
        let d = self.tensor(x).data();
        let mut data = vec![0.0; c * oh * ow];
        for cc in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    data[cc * oh * ow + i * ow + j] = d[cc * h * w + (i / factor) * w + j / factor];
                }
            }
        }
        let rg = self.nodes[x.0].rg;
        self.out(Op::UpsampleNearest { x, factor }, vec![c, oh, ow], data, rg, "upsample_nearest")
    }

    /// Mean softmax cross-entropy of `(rows, classes)` logits against one
    /// label per row.
    pub fn cross_entropy_mean(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let s = self.tensor(logits).shape().to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy_mean",
                detail: format!("logits {:?} vs {} labels", s, labels.len()),
            });
        }
        let (rows, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(NumericsError::InvalidArgument {
                op: "cross_entropy_mean",
                detail: format!("label {bad} out of range for {k} classes"),
            });
        }
        let d = self.tensor(logits).data();
        let mut total = 0.0;
        for r in 0..rows {
            let row = &d[r * k..(r + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|&v| libm::exp(v - max)).sum::<f64>());
            total += lse - row[labels[r]];
        }
        let rg = self.nodes[logits.0].rg;
        self.out(
            Op::CrossEntropyMean { logits, labels: labels.to_vec() },
            vec![],
            vec![total / rows as f64],
            rg,
            "cross_entropy_mean",
        )
    }

    /// Reverse sweep from a scalar root. Returns one gradient buffer per
    /// node (populated only where gradients flow).
    pub fn backward(&self, root: TensorId) -> Result<Vec<Option<Vec<f64>>>> {
        if !self.tensor(root).is_scalar() {
            return Err(NumericsError::NonScalarOutput { op: "backward" });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            if grads[id].is_none() || !self.nodes[id].rg {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.accumulate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(grads)
    }

    fn add_into(&self, grads: &mut Vec<Option<Vec<f64>>>, id: TensorId, contrib: impl Iterator<Item = f64>) {
        if !self.nodes[id.0].rg {
            return;
        }
        let buf = grads[id.0].get_or_insert_with(|| vec![0.0; self.tensor(id).numel()]);
        for (slot, v) in buf.iter_mut().zip(contrib) {
            *slot += v;
        }
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate(&self, id: usize, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) -> Result<()> {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_into(grads, *a, g.iter().cloned());
                self.add_into(grads, *b, g.iter().cloned());
            }
            Op::Sub(a, b) => {
                self.add_into(grads, *a, g.iter().cloned());
                self.add_into(grads, *b, g.iter().map(|v| -v));
            }
            Op::Mul(a, b) => {
                let da = self.tensor(*a).data();
                let db = self.tensor(*b).data();
                self.add_into(grads, *a, g.iter().zip(db).map(|(g, b)| g * b));
                self.add_into(grads, *b, g.iter().zip(da).map(|(g, a)| g * a));
            }
            Op::Div(a, b) => {
                let da = self.tensor(*a).data();
                let db = self.tensor(*b).data();
                self.add_into(grads, *a, g.iter().zip(db).map(|(g, b)| g / b));
                self.add_into(
                    grads,
                    *b,
                    g.iter().zip(da.iter().zip(db)).map(|(g, (a, b))| -g * a / (b * b)),
                );
            }
            Op::Neg(a) => self.add_into(grads, *a, g.iter().map(|v| -v)),
            Op::Scale(a, c) => {
                let c = *c;
                self.add_into(grads, *a, g.iter().map(move |v| v * c));
            }
            Op::AddConst(a, _) => self.add_into(grads, *a, g.iter().cloned()),
            Op::Ln(a) => {
                let da = self.tensor(*a).data();
                self.add_into(grads, *a, g.iter().zip(da).map(|(g, a)| g / a));
            }
            Op::Abs(a) => {
                let da = self.tensor(*a).data();
                self.add_into(
                    grads,
                    *a,
                    g.iter().zip(da).map(|(g, a)| if *a > 0.0 { *g } else if *a < 0.0 { -*g } else { 0.0 }),
                );
            }
            Op::HuberElem(a, delta) => {
                let (da, delta) = (self.tensor(*a).data(), *delta);
                self.add_into(
                    grads,
                    *a,
                    g.iter().zip(da).map(move |(g, d)| {
                        g * if libm::fabs(*d) <= delta { *d } else { delta * if *d > 0.0 { 1.0 } else { -1.0 } }
                    }),
                );
            }
            Op::Gelu(a) => {
                let da = self.tensor(*a).data();
                self.add_into(
                    grads,
                    *a,
                    g.iter().zip(da).map(|(g, &x)| {
                        let cdf = 0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2));
                        let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
                        g * (cdf + x * pdf)
                    }),
                );
            }
            Op::Relu(a) => {
                let da = self.tensor(*a).data();
                self.add_into(grads, *a, g.iter().zip(da).map(|(g, a)| if *a > 0.0 { *g } else { 0.0 }));
            }
            Op::Matmul(a, b) => {
                let sa = self.tensor(*a).shape();
                let sb = self.tensor(*b).shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let da = self.tensor(*a).data();
                let db = self.tensor(*b).data();
                if self.nodes[a.0].rg {
                    // dA = dC . B^T
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                ga[i * k + p] += gv * db[p * n + j];
                            }
                        }
                    }
                    self.add_into(grads, *a, ga.into_iter());
                }
                if self.nodes[b.0].rg {
                    // dB = A^T . dC
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = da[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                    self.add_into(grads, *b, gb.into_iter());
                }
            }
            Op::Transpose(a) => {
                let s = self.tensor(*a).shape();
                let (r, c) = (s[0], s[1]);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                self.add_into(grads, *a, ga.into_iter());
            }
            Op::Reshape(a) => self.add_into(grads, *a, g.iter().cloned()),
            Op::Softmax { x, axis } => {
                let shape = self.tensor(TensorId(id)).shape();
                let y = self.tensor(TensorId(id)).data();
                let lane = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * lane * inner + i;
                        let mut dot = 0.0;
                        for l in 0..lane {
                            dot += g[base + l * inner] * y[base + l * inner];
                        }
                        for l in 0..lane {
                            let k = base + l * inner;
                            gx[k] = (g[k] - dot) * y[k];
                        }
                    }
                }
                self.add_into(grads, *x, gx.into_iter());
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let d = self.tensor(*x).data();
                let gn = self.tensor(*gain).data();
                let dim = self.tensor(*gain).numel();
                let rows = d.len() / dim;
                let mut gx = vec![0.0; d.len()];
                let mut gg = vec![0.0; dim];
                let mut gb = vec![0.0; dim];
                for r in 0..rows {
                    let row = &d[r * dim..(r + 1) * dim];
                    let gr = &g[r * dim..(r + 1) * dim];
                    let mean = row.iter().sum::<f64>() / dim as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
                    let inv = 1.0 / libm::sqrt(var + eps);
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..dim {
                        let xhat = (row[j] - mean) * inv;
                        let dxhat = gr[j] * gn[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        gg[j] += gr[j] * xhat;
                        gb[j] += gr[j];
                    }
                    for j in 0..dim {
                        let xhat = (row[j] - mean) * inv;
                        let dxhat = gr[j] * gn[j];
                        gx[r * dim + j] =
                            inv * (dxhat - sum_dxhat / dim as f64 - xhat * sum_dxhat_xhat / dim as f64);
                    }
                }
                self.add_into(grads, *x, gx.into_iter());
                self.add_into(grads, *gain, gg.into_iter());
                self.add_into(grads, *bias, gb.into_iter());
            }
            Op::MeanAll(a) => {
                let n = self.tensor(*a).numel().max(1) as f64;
                let gv = g[0] / n;
                self.add_into(grads, *a, core::iter::repeat(gv).take(self.tensor(*a).numel()));
            }
            Op::SumAll(a) => {
                let gv = g[0];
                self.add_into(grads, *a, core::iter::repeat(gv).take(self.tensor(*a).numel()));
            }
            Op::GatherRows { x, idx } => {
                let cols = self.tensor(*x).shape()[1];
                let mut gx = vec![0.0; self.tensor(*x).numel()];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..cols {
                        gx[i * cols + j] += g[k * cols + j];
                    }
                }
                self.add_into(grads, *x, gx.into_iter());
            }
            Op::ScatterRows { x, idx, .. } => {
                let cols = self.tensor(*x).shape()[1];
                let mut gx = vec![0.0; self.tensor(*x).numel()];
                for (k, &i) in idx.iter().enumerate() {
                    gx[k * cols..(k + 1) * cols].copy_from_slice(&g[i * cols..(i + 1) * cols]);
                }
                self.add_into(grads, *x, gx.into_iter());
            }
            Op::PlaceRow { row, idx, .. } => {
                let cols = self.tensor(*row).numel();
                let mut gr = vec![0.0; cols];
                for &i in idx {
                    for j in 0..cols {
                        gr[j] += g[i * cols + j];
                    }
                }
                self.add_into(grads, *row, gr.into_iter());
            }
            Op::ColSlice { x, start, len } => {
                let s = self.tensor(*x).shape();
                let (rows, cols) = (s[0], s[1]);
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    for j in 0..*len {
                        gx[r * cols + start + j] = g[r * len + j];
                    }
                }
                self.add_into(grads, *x, gx.into_iter());
            }
            Op::ConcatCols(parts) => {
                let rows = self.tensor(TensorId(id)).shape()[0];
                let total = self.tensor(TensorId(id)).shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let c = self.tensor(p).shape()[1];
                    if self.nodes[p.0].rg {
                        let mut gp = vec![0.0; rows * c];
                        for r in 0..rows {
                            gp[r * c..(r + 1) * c].copy_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        self.add_into(grads, p, gp.into_iter());
                    }
                    offset += c;
                }
            }
            Op::AddRowVec { x, v } => {
                self.add_into(grads, *x, g.iter().cloned());
                let cols = self.tensor(*v).numel();
                let mut gv = vec![0.0; cols];
                for (i, gg) in g.iter().enumerate() {
                    gv[i % cols] += gg;
                }
                self.add_into(grads, *v, gv.into_iter());
            }
            Op::AddScalarNode { x, s } => {
                self.add_into(grads, *x, g.iter().cloned());
                self.add_into(grads, *s, core::iter::once(g.iter().sum::<f64>()));
            }
            Op::AffineCols { x, scale, .. } => {
                let cols = scale.len();
                self.add_into(grads, *x, g.iter().enumerate().map(|(i, g)| g * scale[i % cols]));
            }
            Op::Conv2d { img, ker, pad } => {
                let si = self.tensor(*img).shape();
                let (c, h, w) = match si.len() {
                    2 => (1, si[0], si[1]),
                    _ => (si[0], si[1], si[2]),
                };
                let sk = self.tensor(*ker).shape();
                let (kh, kw) = (sk[0], sk[1]);
                let (ch, cw) = (kh as isize / 2, kw as isize / 2);
                let di = self.tensor(*img).data();
                let dk = self.tensor(*ker).data();
                let mut gi = vec![0.0; di.len()];
                let mut gk = vec![0.0; dk.len()];
                for cc in 0..c {
                    for i in 0..h as isize {
                        for j in 0..w as isize {
                            let gv = g[cc * h * w + i as usize * w + j as usize];
                            if gv == 0.0 {
                                continue;
                            }
                            for u in 0..kh as isize {
                                for v in 0..kw as isize {
                                    let (ii, jj) = (i + u - ch, j + v - cw);
                                    let src_idx = match pad {
                                        PadMode::Reflect => {
                                            let ri = reflect(ii, h as isize);
                                            let rj = reflect(jj, w as isize);
                                            Some(cc * h * w + ri as usize * w + rj as usize)
                                        }
                                        PadMode::Zero => {
                                            if ii < 0 || ii >= h as isize || jj < 0 || jj >= w as isize {
                                                None
                                            } else {
                                                Some(cc * h * w + ii as usize * w + jj as usize)
                                            }
                                        }
                                    };
                                    if let Some(s) = src_idx {
                                        let kidx = (u * kw as isize + v) as usize;
                                        gi[s] += gv * dk[kidx];
                                        gk[kidx] += gv * di[s];
                                    }
                                }
                            }
                        }
                    }
                }
                self.add_into(grads, *img, gi.into_iter());
                self.add_into(grads, *ker, gk.into_iter());
            }
            Op::Conv2dMc { x, w, b } => {
                let sx = self.tensor(*x).shape();
                let sw = self.tensor(*w).shape();
                let (cin, h, wd) = (sx[0], sx[1], sx[2]);
                let (cout, kh, kw) = (sw[0], sw[2], sw[3]);
                let (ch, cw) = (kh as isize / 2, kw as isize / 2);
                let dx = self.tensor(*x).data();
                let dw = self.tensor(*w).data();
                let mut gx = vec![0.0; dx.len()];
                let mut gw = vec![0.0; dw.len()];
                let mut gb = vec![0.0; cout];
                for o in 0..cout {
                    for i in 0..h as isize {
                        for j in 0..wd as isize {
                            let gv = g[o * h * wd + i as usize * wd + j as usize];
                            if gv == 0.0 {
                                continue;
                            }
                            gb[o] += gv;
                            for ci in 0..cin {
                                for u in 0..kh as isize {
                                    for v in 0..kw as isize {
                                        let (ii, jj) = (i + u - ch, j + v - cw);
                                        if ii < 0 || ii >= h as isize || jj < 0 || jj >= wd as isize {
                                            continue;
                                        }
                                        let xi = ci * h * wd + ii as usize * wd + jj as usize;
                                        let wi = ((o * cin + ci) * kh + u as usize) * kw + v as usize;
                                        gx[xi] += gv * dw[wi];
                                        gw[wi] += gv * dx[xi];
                                    }
                                }
                            }
                        }
                    }
                }
                self.add_into(grads, *x, gx.into_iter());
                self.add_into(grads, *w, gw.into_iter());
                self.add_into(grads, *b, gb.into_iter());
            }
            Op::UpsampleNearest { x, factor } => {
                let s = self.tensor(*x).shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h * factor, w * factor);
                let mut gx = vec![0.0; c * h * w];
                for cc in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            gx[cc * h * w + (i / factor) * w + j / factor] += g[cc * oh * ow + i * ow + j];
                        }
                    }
                }
                self.add_into(grads, *x, gx.into_iter());
            }
            Op::CrossEntropyMean { logits, labels } => {
                let s = self.tensor(*logits).shape();
                let (rows, k) = (s[0], s[1]);
                let d = self.tensor(*logits).data();
                let mut gl = vec![0.0; rows * k];
                let gv = g[0] / rows as f64;
                for r in 0..rows {
                    let row = &d[r * k..(r + 1) * k];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|&v| libm::exp(v - max)).sum();
                    for j in 0..k {
                        let p = libm::exp(row[j] - max) / sum;
                        gl[r * k + j] = gv * (p - if labels[r] == j { 1.0 } else { 0.0 });
                    }
                }
                self.add_into(grads, *logits, gl.into_iter());
            }
        }
        Ok(())
    }
}
