use super::gemm::{gemm, Layout};
use super::{axis_extents, strides, Result, Tensor, TensorError};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Add(Var, Var, Option<Vec<usize>>),
    Sub(Var, Var, Option<Vec<usize>>),
    Mul(Var, Var, Option<Vec<usize>>),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: Option<usize>,
        probs: Vec<f64>,
        count: usize,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so gradients can be pulled back through it.
///
/// Nodes are appended in creation order, so every input index is smaller than
/// the index of the node that consumes it and a single reverse sweep visits
/// each operation once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Tape::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        let shape = self.shape(v).to_vec();
        self.grad(v).map(|g| Tensor::from_parts(shape, g.to_vec()))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    // ---- linear algebra -------------------------------------------------

    /// `[p, q] x [q, r] -> [p, r]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; p * r];
        gemm(
            self.data(a),
            Layout::row_major(p, q),
            self.data(b),
            Layout::row_major(q, r),
            0.0,
            &mut out,
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![p, r], out), Op::MatMul(a, b), rg))
    }

    /// Batched product `[n, p, q] x [n, q, r] -> [n, p, r]`.
    ///
    /// With `transpose_b`, `b` is stored as `[n, r, q]` and each slice is
    /// transposed before multiplying.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bad = || TensorError::Shape {
            op: "bmm",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (n, p, q) = (sa[0], sa[1], sa[2]);
        let (bq, r) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if bq != q {
            return Err(bad());
        }
        let lb = if transpose_b {
            Layout::transposed(r, q)
        } else {
            Layout::row_major(q, r)
        };
        let mut out = vec![0.0; n * p * r];
        let (ad, bd) = (self.data(a), self.data(b));
        for i in 0..n {
            gemm(
                &ad[i * p * q..(i + 1) * p * q],
                Layout::row_major(p, q),
                &bd[i * q * r..(i + 1) * q * r],
                lb,
                0.0,
                &mut out[i * p * r..(i + 1) * p * r],
            );
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(vec![n, p, r], out),
            Op::BatchMatMul { a, b, transpose_b },
            rg,
        ))
    }

    // ---- elementwise ----------------------------------------------------

    /// `a + b`, with `b` broadcast into the shape of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    /// `a - b`, with `b` broadcast into the shape of `a`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    /// Elementwise `a * b`, with `b` broadcast into the shape of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(Var, Var, Option<Vec<usize>>) -> Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b));
        let map = broadcast_map(&sa, sb).ok_or_else(|| TensorError::Shape {
            op: name,
            lhs: sa.clone(),
            rhs: sb.to_vec(),
        })?;
        let (ad, bd) = (self.data(a), self.data(b));
        let out: Vec<f64> = match &map {
            None => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Some(m) => ad.iter().zip(m).map(|(&x, &j)| f(x, bd[j])).collect(),
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(sa, out), op(a, b, map), rg))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, |x| Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.affine(x, factor, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(Var) -> Op) -> Var {
        let value = &self.nodes[x.0].value;
        let out = value.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::from_parts(value.shape().to_vec(), out);
        let rg = self.any_grad(&[x]);
        self.push(t, op(x), rg)
    }

    // ---- normalisation --------------------------------------------------

    /// Softmax over `axis`, shifted by the slice maximum for stability.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis { axis, shape });
        }
        let (outer, n, inner) = axis_extents(&shape, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let idx = |k: usize| base + k * inner;
                let max = (0..n).map(|k| xd[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..n {
                    let e = (xd[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    out[idx(k)] /= total;
                }
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { x, axis }, rg))
    }

    /// Layer normalisation over the last dimension, then `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&1);
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let (xd, gd, bd) = (self.data(x), self.data(gamma), self.data(beta));
        let rows = xd.len() / d;
        let mut xhat = vec![0.0; xd.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = gd[c] * h + bd[c];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    // ---- lookup and loss ------------------------------------------------

    /// Gathers rows of a `[rows, d]` table: output row `i` is `table[ids[i]]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(TensorError::Shape {
                op: "embedding",
                lhs: shape.to_vec(),
                rhs: vec![ids.len()],
            });
        }
        if ids.is_empty() {
            return Err(TensorError::Contract("embedding lookup of zero ids".into()));
        }
        let (rows, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Index {
                index: bad,
                len: rows,
            });
        }
        let td = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let rg = self.any_grad(&[table]);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)`.
    ///
    /// Rows whose target equals `ignore_index` contribute to neither the sum
    /// nor the count.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore_index: Option<usize>,
    ) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                lhs: shape.to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let (m, v) = (shape[0], shape[1]);
        let ld = self.data(logits);
        let mut probs = vec![0.0; m * v];
        let mut total = 0.0;
        let mut count = 0;
        for (r, &t) in targets.iter().enumerate() {
            if Some(t) == ignore_index {
                continue;
            }
            if t >= v {
                return Err(TensorError::Index { index: t, len: v });
            }
            let row = &ld[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + sum.ln();
            for c in 0..v {
                probs[r * v + c] = (row[c] - lse).exp();
            }
            total += lse - row[t];
            count += 1;
        }
        if count == 0 {
            return Err(TensorError::Degenerate(
                "every target position is ignored".into(),
            ));
        }
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / count as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore: ignore_index,
                probs,
                count,
            },
            rg,
        ))
    }

    // ---- reductions and layout ------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = &self.nodes[x.0].value;
        if shape.iter().product::<usize>() != value.len() || shape.contains(&0) {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: value.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let t = Tensor::from_parts(shape.to_vec(), value.data().to_vec());
        let rg = self.any_grad(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `k` is input axis `perm[k]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm
                .iter()
                .all(|&p| p < shape.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(TensorError::Shape {
                op: "permute",
                lhs: shape,
                rhs: perm.to_vec(),
            });
        }
        let in_strides = strides(&shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let map = gather_index(&out_shape, &src_strides);
        let xd = self.data(x);
        let out = map.iter().map(|&j| xd[j]).collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Permute(x, map), rg))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Axis { axis, shape: base });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(k, (a, b))| k == axis || a == b);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_extents(&out_shape, axis);
        let mut out = vec![0.0; outer * total * inner];
        let mut offset = 0;
        for &v in inputs {
            let n = self.shape(v)[axis];
            let src = self.data(v);
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                out[dst..dst + n * inner].copy_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
            offset += n;
        }
        let rg = self.any_grad(inputs);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `len` consecutive entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis { axis, shape });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::Shape {
                op: "slice",
                lhs: shape,
                rhs: vec![start, len],
            });
        }
        let (outer, n, inner) = axis_extents(&shape, axis);
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Slice { x, axis, start },
            rg,
        ))
    }

    // ---- reverse pass ---------------------------------------------------

    /// Fills the gradient of every grad-requiring node reachable from `loss`.
    ///
    /// Gradients from a previous call are discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let value = &self.nodes[loss.0].value;
        if value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                value.shape()
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            propagate(&self.nodes, &mut self.grads, i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// For each flat index of `out_shape`, the flat source offset given per-axis
/// source strides.
fn gather_index(out_shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let n: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..n {
        map.push(offset);
        for k in (0..out_shape.len()).rev() {
            idx[k] += 1;
            offset += src_strides[k];
            if idx[k] < out_shape[k] {
                break;
            }
            offset -= src_strides[k] * out_shape[k];
            idx[k] = 0;
        }
    }
    map
}

/// `Ok(None)` when shapes are equal, `Ok(Some(map))` when `b` broadcasts
/// into `a`, `None` when incompatible.
fn broadcast_map(a: &[usize], b: &[usize]) -> Option<Option<Vec<usize>>> {
    if a == b {
        return Some(None);
    }
    if b.len() > a.len() {
        return None;
    }
    let pad = a.len() - b.len();
    let padded: Vec<usize> = std::iter::repeat_n(1, pad).chain(b.iter().copied()).collect();
    if padded.iter().zip(a).any(|(&pb, &pa)| pb != pa && pb != 1) {
        return None;
    }
    let bs = strides(&padded);
    let src: Vec<usize> = padded
        .iter()
        .zip(&bs)
        .zip(a)
        .map(|((&pb, &s), &pa)| if pb == pa { s } else { 0 })
        .collect();
    Some(Some(gather_index(a, &src)))
}

fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let node = &nodes[i];
    let val = |v: Var| nodes[v.0].value.data();
    let shp = |v: Var| nodes[v.0].value.shape();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (p, q, r) = (shp(*a)[0], shp(*a)[1], shp(*b)[1]);
            let gl = Layout::row_major(p, r);
            if let Some(ga) = slot(nodes, grads, *a) {
                gemm(g, gl, val(*b), Layout::transposed(q, r), 1.0, ga);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                gemm(val(*a), Layout::transposed(p, q), g, gl, 1.0, gb);
            }
        }
        Op::BatchMatMul { a, b, transpose_b } => {
            let (n, p, q) = (shp(*a)[0], shp(*a)[1], shp(*a)[2]);
            let r = node.value.shape()[2];
            let gl = Layout::row_major(p, r);
            if let Some(ga) = slot(nodes, grads, *a) {
                let lb = if *transpose_b {
                    Layout::row_major(r, q)
                } else {
                    Layout::transposed(q, r)
                };
                for k in 0..n {
                    gemm(
                        &g[k * p * r..(k + 1) * p * r],
                        gl,
                        &val(*b)[k * q * r..(k + 1) * q * r],
                        lb,
                        1.0,
                        &mut ga[k * p * q..(k + 1) * p * q],
                    );
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for k in 0..n {
                    let gk = &g[k * p * r..(k + 1) * p * r];
                    let ak = &val(*a)[k * p * q..(k + 1) * p * q];
                    let out = &mut gb[k * q * r..(k + 1) * q * r];
                    if *transpose_b {
                        gemm(gk, Layout::transposed(p, r), ak, Layout::row_major(p, q), 1.0, out);
                    } else {
                        gemm(ak, Layout::transposed(p, q), gk, gl, 1.0, out);
                    }
                }
            }
        }
        Op::Add(a, b, map) | Op::Sub(a, b, map) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                match map {
                    None => gb.iter_mut().zip(g).for_each(|(x, y)| *x += sign * y),
                    Some(m) => m.iter().zip(g).for_each(|(&j, y)| gb[j] += sign * y),
                }
            }
        }
        Op::Mul(a, b, map) => {
            let (ad, bd) = (val(*a), val(*b));
            let bj = |k: usize| map.as_ref().map_or(k, |m| m[k]);
            if let Some(ga) = slot(nodes, grads, *a) {
                for k in 0..g.len() {
                    ga[k] += g[k] * bd[bj(k)];
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for k in 0..g.len() {
                    gb[bj(k)] += g[k] * ad[k];
                }
            }
        }
        Op::Affine(x, s) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(d, y)| *d += s * y);
            }
        }
        Op::Sigmoid(x) => {
            let y = node.value.data();
            if let Some(gx) = slot(nodes, grads, *x) {
                for k in 0..g.len() {
                    gx[k] += g[k] * y[k] * (1.0 - y[k]);
                }
            }
        }
        Op::Tanh(x) => {
            let y = node.value.data();
            if let Some(gx) = slot(nodes, grads, *x) {
                for k in 0..g.len() {
                    gx[k] += g[k] * (1.0 - y[k] * y[k]);
                }
            }
        }
        Op::Relu(x) => {
            let xd = val(*x);
            if let Some(gx) = slot(nodes, grads, *x) {
                for k in 0..g.len() {
                    if xd[k] > 0.0 {
                        gx[k] += g[k];
                    }
                }
            }
        }
        Op::Softmax { x, axis } => {
            let y = node.value.data();
            let (outer, n, inner) = axis_extents(node.value.shape(), *axis);
            if let Some(gx) = slot(nodes, grads, *x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let dot: f64 = (0..n).map(|k| g[base + k * inner] * y[base + k * inner]).sum();
                        for k in 0..n {
                            let j = base + k * inner;
                            gx[j] += y[j] * (g[j] - dot);
                        }
                    }
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
            let d = val(*gamma).len();
            let rows = xhat.len() / d;
            if let Some(gg) = slot(nodes, grads, *gamma) {
                for r in 0..rows {
                    for c in 0..d {
                        gg[c] += g[r * d + c] * xhat[r * d + c];
                    }
                }
            }
            if let Some(gbeta) = slot(nodes, grads, *beta) {
                for r in 0..rows {
                    for c in 0..d {
                        gbeta[c] += g[r * d + c];
                    }
                }
            }
            let gamma_d = val(*gamma);
            if let Some(gx) = slot(nodes, grads, *x) {
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let h = &xhat[r * d..(r + 1) * d];
                    for c in 0..d {
                        dxhat[c] = g[r * d + c] * gamma_d[c];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dh = dxhat.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for c in 0..d {
                        gx[r * d + c] += rstd[r] * (dxhat[c] - mean_d - h[c] * mean_dh);
                    }
                }
            }
        }
        Op::Embedding { table, ids } => {
            let d = shp(*table)[1];
            if let Some(gt) = slot(nodes, grads, *table) {
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut gt[id * d..(id + 1) * d];
                    dst.iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(a, b)| *a += b);
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            ignore,
            probs,
            count,
        } => {
            let v = shp(*logits)[1];
            let scale = g[0] / *count as f64;
            if let Some(gl) = slot(nodes, grads, *logits) {
                for (r, &t) in targets.iter().enumerate() {
                    if Some(t) == *ignore {
                        continue;
                    }
                    for c in 0..v {
                        gl[r * v + c] += scale * probs[r * v + c];
                    }
                    gl[r * v + t] -= scale;
                }
            }
        }
        Op::Sum(x) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(x) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let s = g[0] / gx.len() as f64;
                gx.iter_mut().for_each(|d| *d += s);
            }
        }
        Op::Reshape(x) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(d, y)| *d += y);
            }
        }
        Op::Permute(x, map) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                map.iter().zip(g).for_each(|(&j, y)| gx[j] += y);
            }
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = axis_extents(node.value.shape(), *axis);
            let mut offset = 0;
            for &v in inputs {
                let n = shp(v)[*axis];
                if let Some(gv) = slot(nodes, grads, v) {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        gv[o * n * inner..(o + 1) * n * inner]
                            .iter_mut()
                            .zip(&g[src..src + n * inner])
                            .for_each(|(d, y)| *d += y);
                    }
                }
                offset += n;
            }
        }
        Op::Slice { x, axis, start } => {
            let (outer, n, inner) = axis_extents(shp(*x), *axis);
            let len = node.value.shape()[*axis];
            if let Some(gx) = slot(nodes, grads, *x) {
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    gx[dst..dst + len * inner]
                        .iter_mut()
                        .zip(&g[o * len * inner..(o + 1) * len * inner])
                        .for_each(|(d, y)| *d += y);
                }
            }
        }
    }
}
