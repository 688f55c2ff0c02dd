//! Operation tape for reverse-mode differentiation.
//!
//! Forward ops read their inputs as `f64`, compute in `f64`, and round the
//! result to the storage precision `T`; the backward pass accumulates
//! gradients purely in `f64` buffers. Reverse traversal visits each recorded
//! operation exactly once (tape order is topological by construction).
//!
//! Every op validates operand shapes and scans its output for non-finite
//! values; NaN production is an error, never a silent state.

use super::kernels::{self, DftPlan};
use super::{numel_of, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(f64),
    /// rhs shape is a suffix of lhs shape; broadcast over the leading dims.
    AddBroadcast,
    Matmul {
        m: usize,
        k: usize,
        n: usize,
        ta: bool,
        tb: bool,
    },
    Bmm {
        nb: usize,
        m: usize,
        k: usize,
        n: usize,
        tb: bool,
    },
    Conv1d {
        b: usize,
        cin: usize,
        cout: usize,
        l: usize,
        ksize: usize,
    },
    MaxPool1d {
        arg: Vec<usize>,
    },
    Relu,
    Gelu,
    LayerNorm {
        rows: usize,
        width: usize,
    },
    Softmax {
        axis: usize,
    },
    MeanAxis {
        axis: usize,
    },
    MaxAxis {
        arg: Vec<usize>,
    },
    SelectIndex {
        axis: usize,
        index: usize,
    },
    SumAll,
    Concat {
        axis: usize,
    },
    Permute {
        axes: Vec<usize>,
    },
    Reshape,
    FrequencyFilter {
        channels: usize,
        l: usize,
    },
    RowNormalize,
    LseLastAxis {
        temp: f64,
    },
    CrossEntropy {
        labels: Vec<usize>,
    },
    Dropout {
        mask: Vec<f64>,
    },
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    shape: Vec<usize>,
    value: Vec<f64>,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by node id, in 64-bit.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn has(&self, id: NodeId) -> bool {
        self.get(id).is_some()
    }
}

pub struct Tape<T: Element> {
    nodes: Vec<Node>,
    _storage: std::marker::PhantomData<T>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), _storage: std::marker::PhantomData }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a tensor as a leaf; gradient participation follows its
    /// `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            shape: t.shape().to_vec(),
            value: t.data().iter().map(|v| v.to_f64()).collect(),
            needs_grad: t.requires_grad(),
        });
        id
    }

    /// Leaf that never receives gradient (prototypes, positional tables,
    /// identity targets).
    pub fn constant_f64(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<NodeId> {
        if numel_of(&shape) != data.len() {
            return Err(Error::InvalidShape { shape, len: data.len() });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            shape,
            value: data,
            needs_grad: false,
        });
        Ok(id)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Node values accumulate in 64-bit regardless of the storage type.
    pub fn value_f64(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Scalar value of a single-element node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    /// Snapshot a node's value at storage precision.
    pub fn value_tensor(&self, id: NodeId) -> Tensor<T> {
        Tensor::from_f64_vec(self.shape(id).to_vec(), self.nodes[id.0].value.clone())
            .expect("node shape/value consistent")
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    fn push(
        &mut self,
        op_name: &'static str,
        op: Op,
        inputs: Vec<NodeId>,
        shape: Vec<usize>,
        value: Vec<f64>,
    ) -> Result<NodeId> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(op_name, "non-finite value in output"));
        }
        let needs_grad = self.needs(&inputs);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, shape, value, needs_grad });
        Ok(id)
    }

    // ── elementwise ────────────────────────────────────────────────

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let out = {
            let (av, bv) = (self.value_f64(a), self.value_f64(b));
            av.iter().zip(bv).map(|(x, y)| x + y).collect()
        };
        self.push("add", Op::Add, vec![a, b], self.shape(a).to_vec(), out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        let out = {
            let (av, bv) = (self.value_f64(a), self.value_f64(b));
            av.iter().zip(bv).map(|(x, y)| x - y).collect()
        };
        self.push("sub", Op::Sub, vec![a, b], self.shape(a).to_vec(), out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let out = {
            let (av, bv) = (self.value_f64(a), self.value_f64(b));
            av.iter().zip(bv).map(|(x, y)| x * y).collect()
        };
        self.push("mul", Op::Mul, vec![a, b], self.shape(a).to_vec(), out)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let out: Vec<f64> = self.value_f64(a).iter().map(|x| x * c).collect();
        self.push("scale", Op::Scale(c), vec![a], self.shape(a).to_vec(), out)
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s shape (broadcast over
    /// the leading dimensions). Covers bias rows and positional tables.
    pub fn add_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
            return Err(Error::ShapeMismatch { op: "add_broadcast", lhs: sa, rhs: sb });
        }
        let out = {
            let (av, bv) = (self.value_f64(a), self.value_f64(b));
            let mut out = av.to_vec();
            for chunk in out.chunks_mut(bv.len()) {
                for (x, y) in chunk.iter_mut().zip(bv) {
                    *x += y;
                }
            }
            out
        };
        self.push("add_broadcast", Op::AddBroadcast, vec![a, b], sa, out)
    }

    // ── linear algebra ─────────────────────────────────────────────

    /// 2-D matmul with optional transposes of the stored operands.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (kb, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let out = kernels::matmul(self.value_f64(a), self.value_f64(b), m, k, n, ta, tb);
        self.push("matmul", Op::Matmul { m, k, n, ta, tb }, vec![a, b], vec![m, n], out)
    }

    /// Batched matmul over a shared leading dimension; `b` optionally stored
    /// transposed per batch.
    pub fn bmm(&mut self, a: NodeId, b: NodeId, tb: bool) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::ShapeMismatch { op: "bmm", lhs: sa, rhs: sb });
        }
        let (nb, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(Error::ShapeMismatch { op: "bmm", lhs: sa, rhs: sb });
        }
        let out = kernels::bmm(self.value_f64(a), self.value_f64(b), nb, m, k, n, tb);
        self.push("bmm", Op::Bmm { nb, m, k, n, tb }, vec![a, b], vec![nb, m, n], out)
    }

    /// 1-D convolution, stride 1, zero padding preserving temporal length
    /// (odd kernel sizes only, which the residual formulation requires).
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(Error::ShapeMismatch { op: "conv1d", lhs: sx, rhs: sw });
        }
        let (b, cin, l) = (sx[0], sx[1], sx[2]);
        let (cout, ksize) = (sw[0], sw[2]);
        if ksize % 2 == 0 {
            return Err(Error::invalid("conv1d", format!("kernel size {ksize} must be odd")));
        }
        if self.shape(bias) != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: self.shape(bias).to_vec(),
                rhs: vec![cout],
            });
        }
        let out = kernels::conv1d_forward(
            self.value_f64(x),
            self.value_f64(w),
            Some(self.value_f64(bias)),
            b,
            cin,
            cout,
            l,
            ksize,
        );
        self.push(
            "conv1d",
            Op::Conv1d { b, cin, cout, l, ksize },
            vec![x, w, bias],
            vec![b, cout, l],
            out,
        )
    }

    pub fn maxpool1d(&mut self, x: NodeId, window: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(Error::invalid("maxpool1d", format!("expected 3-d input, got {sx:?}")));
        }
        if window % 2 == 0 {
            return Err(Error::invalid("maxpool1d", format!("window {window} must be odd")));
        }
        let l = sx[2];
        let rows = sx[0] * sx[1];
        let (out, arg) = kernels::maxpool1d_forward(self.value_f64(x), rows, l, window);
        self.push("maxpool1d", Op::MaxPool1d { arg }, vec![x], sx, out)
    }

    // ── activations & normalization ────────────────────────────────

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let out: Vec<f64> = self.value_f64(x).iter().map(|&v| v.max(0.0)).collect();
        self.push("relu", Op::Relu, vec![x], self.shape(x).to_vec(), out)
    }

    /// tanh-form GELU.
    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        let out: Vec<f64> = self
            .value_f64(x)
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        self.push("gelu", Op::Gelu, vec![x], self.shape(x).to_vec(), out)
    }

    /// Layer normalization over the last axis with learnable scale/shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let width = *sx.last().ok_or_else(|| Error::invalid("layer_norm", "empty shape"))?;
        if self.shape(gamma) != [width] || self.shape(beta) != [width] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: sx,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let rows = numel_of(&sx) / width;
        let xv = self.value_f64(x);
        let gv = self.value_f64(gamma);
        let bv = self.value_f64(beta);
        let mut out = vec![0.0f64; xv.len()];
        for r in 0..rows {
            let xrow = &xv[r * width..(r + 1) * width];
            let mean = xrow.iter().sum::<f64>() / width as f64;
            let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            let orow = &mut out[r * width..(r + 1) * width];
            for j in 0..width {
                orow[j] = (xrow[j] - mean) * rstd * gv[j] + bv[j];
            }
        }
        self.push("layer_norm", Op::LayerNorm { rows, width }, vec![x, gamma, beta], sx, out)
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(Error::invalid("softmax", format!("axis {axis} out of range for {sx:?}")));
        }
        let (outer, len, inner) = lane_dims(&sx, axis);
        let mut v = self.value_f64(x).to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut m = f64::NEG_INFINITY;
                for j in 0..len {
                    m = m.max(v[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (v[base + j * inner] - m).exp();
                    v[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    v[base + j * inner] /= sum;
                }
            }
        }
        self.push("softmax", Op::Softmax { axis }, vec![x], sx, v)
    }

    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(Error::invalid("mean_axis", format!("axis {axis} out of range for {sx:?}")));
        }
        let (outer, len, inner) = lane_dims(&sx, axis);
        let xv = self.value_f64(x);
        let mut out = vec![0.0f64; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0.0;
                for j in 0..len {
                    acc += xv[o * len * inner + j * inner + i];
                }
                out[o * inner + i] = acc / len as f64;
            }
        }
        let mut shape = sx.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.push("mean_axis", Op::MeanAxis { axis }, vec![x], shape, out)
    }

    pub fn max_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(Error::invalid("max_axis", format!("axis {axis} out of range for {sx:?}")));
        }
        let (outer, len, inner) = lane_dims(&sx, axis);
        let xv = self.value_f64(x);
        let mut out = vec![0.0f64; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = f64::NEG_INFINITY;
                let mut bj = 0;
                for j in 0..len {
                    let v = xv[o * len * inner + j * inner + i];
                    if v > best {
                        best = v;
                        bj = j;
                    }
                }
                out[o * inner + i] = best;
                arg[o * inner + i] = o * len * inner + bj * inner + i;
            }
        }
        let mut shape = sx.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.push("max_axis", Op::MaxAxis { arg }, vec![x], shape, out)
    }

    /// Select one index along an axis, dropping that axis.
    pub fn select_index(&mut self, x: NodeId, axis: usize, index: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || index >= sx[axis] {
            return Err(Error::invalid(
                "select_index",
                format!("axis {axis} index {index} out of range for {sx:?}"),
            ));
        }
        let (outer, len, inner) = lane_dims(&sx, axis);
        let xv = self.value_f64(x);
        let mut out = vec![0.0f64; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                out[o * inner + i] = xv[o * len * inner + index * inner + i];
            }
        }
        let mut shape = sx.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.push("select_index", Op::SelectIndex { axis, index }, vec![x], shape, out)
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let total: f64 = self.value_f64(x).iter().sum();
        self.push("sum_all", Op::SumAll, vec![x], vec![1], vec![total])
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::invalid("concat", "no inputs"));
        }
        let s0 = self.shape(inputs[0]).to_vec();
        if axis >= s0.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {s0:?}")));
        }
        let mut total_axis = 0;
        for &id in inputs {
            let s = self.shape(id);
            if s.len() != s0.len()
                || s.iter().zip(&s0).enumerate().any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: s0.clone(),
                    rhs: s.to_vec(),
                });
            }
            total_axis += s[axis];
        }
        let mut shape = s0.clone();
        shape[axis] = total_axis;
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut out = vec![0.0f64; numel_of(&shape)];
        let out_block = total_axis * inner;
        let mut offset = 0;
        for &id in inputs {
            let len = self.shape(id)[axis];
            let v = self.value_f64(id);
            for o in 0..outer {
                let src = &v[o * len * inner..(o + 1) * len * inner];
                let dst = &mut out[o * out_block + offset * inner..];
                dst[..len * inner].copy_from_slice(src);
            }
            offset += len;
        }
        self.push("concat", Op::Concat { axis }, inputs.to_vec(), shape, out)
    }

    pub fn permute(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let mut seen = vec![false; sx.len()];
        if axes.len() != sx.len() || axes.iter().any(|&a| a >= sx.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::invalid("permute", format!("invalid axes {axes:?} for {sx:?}")));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| sx[a]).collect();
        let xv = self.value_f64(x);
        let out = permute_data(&xv, &sx, axes);
        self.push("permute", Op::Permute { axes: axes.to_vec() }, vec![x], out_shape, out)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if numel_of(&shape) != self.nodes[x.0].value.len() {
            return Err(Error::InvalidShape { shape, len: self.nodes[x.0].value.len() });
        }
        let out = self.value_f64(x).to_vec();
        self.push("reshape", Op::Reshape, vec![x], shape, out)
    }

    // ── model-specific fused ops ───────────────────────────────────

    /// `irfft(mask ⊙ rfft(x))` along the temporal axis; differentiable in
    /// both the signal and the mask. `x` is `(b, c, l)`, `mask` is
    /// `(c, l/2 + 1)`.
    pub fn frequency_filter(&mut self, x: NodeId, mask: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sm = self.shape(mask).to_vec();
        if sx.len() != 3 || sm.len() != 2 || sm[0] != sx[1] || sm[1] != sx[2] / 2 + 1 {
            return Err(Error::ShapeMismatch { op: "frequency_filter", lhs: sx, rhs: sm });
        }
        let (b, c, l) = (sx[0], sx[1], sx[2]);
        let plan = DftPlan::new(l);
        let nf = plan.nf;
        let xv = self.value_f64(x);
        let mv = self.value_f64(mask);
        let mut out = vec![0.0f64; xv.len()];
        let mut re = vec![0.0f64; nf];
        let mut im = vec![0.0f64; nf];
        for bi in 0..b {
            for ci in 0..c {
                let row = (bi * c + ci) * l;
                plan.rfft_row(&xv[row..row + l], &mut re, &mut im);
                for f in 0..nf {
                    let w = mv[ci * nf + f];
                    re[f] *= w;
                    im[f] *= w;
                }
                plan.irfft_row(&re, &im, &mut out[row..row + l]);
            }
        }
        self.push(
            "frequency_filter",
            Op::FrequencyFilter { channels: c, l },
            vec![x, mask],
            sx,
            out,
        )
    }

    /// Normalize each row of a 2-D tensor to unit Euclidean norm.
    pub fn row_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(Error::invalid("row_normalize", format!("expected 2-d input, got {sx:?}")));
        }
        let width = sx[1];
        let xv = self.value_f64(x);
        let mut out = vec![0.0f64; xv.len()];
        for (orow, xrow) in out.chunks_mut(width).zip(xv.chunks(width)) {
            let norm = xrow.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::numeric("row_normalize", "zero-norm row (cosine undefined)"));
            }
            for (o, &v) in orow.iter_mut().zip(xrow) {
                *o = v / norm;
            }
        }
        self.push("row_normalize", Op::RowNormalize, vec![x], sx, out)
    }

    /// Stabilized `log sum exp(x / temp)` over the last axis.
    pub fn lse_last_axis(&mut self, x: NodeId, temp: f64) -> Result<NodeId> {
        if temp <= 0.0 {
            return Err(Error::invalid("lse_last_axis", format!("temperature {temp} must be > 0")));
        }
        let sx = self.shape(x).to_vec();
        let len = *sx.last().ok_or_else(|| Error::invalid("lse_last_axis", "empty shape"))?;
        if len == 0 {
            return Err(Error::invalid("lse_last_axis", "empty reduction axis"));
        }
        let xv = self.value_f64(x);
        let rows = xv.len() / len;
        let mut out = vec![0.0f64; rows];
        for (o, lane) in out.iter_mut().zip(xv.chunks(len)) {
            let m = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / temp;
            let mut acc = 0.0;
            for &v in lane {
                acc += (v / temp - m).exp();
            }
            *o = m + acc.ln();
        }
        let mut shape = sx.clone();
        shape.pop();
        if shape.is_empty() {
            shape.push(1);
        }
        self.push("lse_last_axis", Op::LseLastAxis { temp }, vec![x], shape, out)
    }

    /// Mean cross-entropy of `softmax(scores)` against integer labels.
    pub fn cross_entropy(&mut self, scores: NodeId, labels: &[usize]) -> Result<NodeId> {
        let sx = self.shape(scores).to_vec();
        if sx.len() != 2 || sx[0] != labels.len() {
            return Err(Error::invalid(
                "cross_entropy",
                format!("scores {sx:?} vs {} labels", labels.len()),
            ));
        }
        let c = sx[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::invalid("cross_entropy", format!("label {bad} out of range 0..{c}")));
        }
        let xv = self.value_f64(scores);
        let mut total = 0.0;
        for (row, &y) in xv.chunks(c).zip(labels) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let loss = total / labels.len() as f64;
        self.push(
            "cross_entropy",
            Op::CrossEntropy { labels: labels.to_vec() },
            vec![scores],
            vec![1],
            vec![loss],
        )
    }

    /// Inverted dropout with a caller-provided mask of `{0, 1/keep}` values
    /// (the caller draws the mask so RNG consumption order stays fixed).
    pub fn dropout(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        if mask.len() != self.nodes[x.0].value.len() {
            return Err(Error::invalid("dropout", "mask length mismatch"));
        }
        let out = self.value_f64(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.push("dropout", Op::Dropout { mask }, vec![x], self.shape(x).to_vec(), out)
    }

    // ── reverse pass ───────────────────────────────────────────────

    /// Reverse accumulation from a scalar loss node. Returns 64-bit
    /// gradients; every `requires_grad` leaf reachable from the loss has an
    /// entry.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let dy = grads[idx].take().unwrap();
            self.backprop_node(idx, &dy, &mut grads)?;
            // leaves keep their accumulated gradient
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(dy);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, contrib: Vec<f64>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(&contrib) {
                    *e += c;
                }
            }
            slot => *slot = Some(contrib),
        }
    }

    fn backprop_node(
        &self,
        idx: usize,
        dy: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let node = &self.nodes[idx];
        let ins = &node.inputs;
        match &node.op {
            Op::Leaf => {}
            Op::Add => {
                self.accumulate(grads, ins[0], dy.to_vec());
                self.accumulate(grads, ins[1], dy.to_vec());
            }
            Op::Sub => {
                self.accumulate(grads, ins[0], dy.to_vec());
                self.accumulate(grads, ins[1], dy.iter().map(|g| -g).collect());
            }
            Op::Mul => {
                if self.nodes[ins[0].0].needs_grad {
                    let bv = self.value_f64(ins[1]);
                    self.accumulate(grads, ins[0], dy.iter().zip(bv).map(|(g, v)| g * v).collect());
                }
                if self.nodes[ins[1].0].needs_grad {
                    let av = self.value_f64(ins[0]);
                    self.accumulate(grads, ins[1], dy.iter().zip(av).map(|(g, v)| g * v).collect());
                }
            }
            Op::Scale(c) => {
                self.accumulate(grads, ins[0], dy.iter().map(|g| g * c).collect());
            }
            Op::AddBroadcast => {
                self.accumulate(grads, ins[0], dy.to_vec());
                if self.nodes[ins[1].0].needs_grad {
                    let block = self.nodes[ins[1].0].value.len();
                    let mut db = vec![0.0f64; block];
                    for chunk in dy.chunks(block) {
                        for (d, g) in db.iter_mut().zip(chunk) {
                            *d += g;
                        }
                    }
                    self.accumulate(grads, ins[1], db);
                }
            }
            Op::Matmul { m, k, n, ta, tb } => {
                let (m, k, n) = (*m, *k, *n);
                if self.nodes[ins[0].0].needs_grad {
                    let bv = self.value_f64(ins[1]);
                    // dA(logical m x k) = dY (m x n) * B^T; map back to storage
                    let da = if *tb {
                        kernels::matmul(dy, bv, m, n, k, false, false)
                    } else {
                        kernels::matmul(dy, bv, m, n, k, false, true)
                    };
                    let da = if *ta { transpose2(&da, m, k) } else { da };
                    self.accumulate(grads, ins[0], da);
                }
                if self.nodes[ins[1].0].needs_grad {
                    let av = self.value_f64(ins[0]);
                    // dB(logical k x n) = A^T * dY
                    let db = if *ta {
                        kernels::matmul(av, dy, k, m, n, false, false)
                    } else {
                        kernels::matmul(av, dy, k, m, n, true, false)
                    };
                    let db = if *tb { transpose2(&db, k, n) } else { db };
                    self.accumulate(grads, ins[1], db);
                }
            }
            Op::Bmm { nb, m, k, n, tb } => {
                let (nb, m, k, n) = (*nb, *m, *k, *n);
                if self.nodes[ins[0].0].needs_grad {
                    let bv = self.value_f64(ins[1]);
                    // per batch: dA = dY * opB(B)^T
                    let da = if *tb {
                        kernels::bmm(dy, bv, nb, m, n, k, false)
                    } else {
                        // need B^T per batch: dA = dY (m x n) x B^T (n x k)
                        let mut bt = vec![0.0f64; bv.len()];
                        for bi in 0..nb {
                            let src = &bv[bi * k * n..(bi + 1) * k * n];
                            let dst = &mut bt[bi * k * n..(bi + 1) * k * n];
                            dst.copy_from_slice(&transpose2(src, k, n));
                        }
                        kernels::bmm(dy, &bt, nb, m, n, k, false)
                    };
                    self.accumulate(grads, ins[0], da);
                }
                if self.nodes[ins[1].0].needs_grad {
                    let av = self.value_f64(ins[0]);
                    // logical dB = A^T dY (k x n) per batch
                    let mut at = vec![0.0f64; av.len()];
                    for bi in 0..nb {
                        let src = &av[bi * m * k..(bi + 1) * m * k];
                        let dst = &mut at[bi * m * k..(bi + 1) * m * k];
                        dst.copy_from_slice(&transpose2(src, m, k));
                    }
                    let db = kernels::bmm(&at, dy, nb, k, m, n, false);
                    let db = if *tb {
                        // stored B is (n x k) per batch
                        let mut out = vec![0.0f64; db.len()];
                        for bi in 0..nb {
                            let src = &db[bi * k * n..(bi + 1) * k * n];
                            let dst = &mut out[bi * k * n..(bi + 1) * k * n];
                            dst.copy_from_slice(&transpose2(src, k, n));
                        }
                        out
                    } else {
                        db
                    };
                    self.accumulate(grads, ins[1], db);
                }
            }
            Op::Conv1d { b, cin, cout, l, ksize } => {
                let (b, cin, cout, l, ksize) = (*b, *cin, *cout, *l, *ksize);
                if self.nodes[ins[0].0].needs_grad {
                    let wv = self.value_f64(ins[1]);
                    let dx = kernels::conv1d_backward_input(dy, wv, b, cin, cout, l, ksize);
                    self.accumulate(grads, ins[0], dx);
                }
                if self.nodes[ins[1].0].needs_grad || self.nodes[ins[2].0].needs_grad {
                    let xv = self.value_f64(ins[0]);
                    let (dw, db) = kernels::conv1d_backward_weights(dy, xv, b, cin, cout, l, ksize);
                    self.accumulate(grads, ins[1], dw);
                    self.accumulate(grads, ins[2], db);
                }
            }
            Op::MaxPool1d { arg } => {
                let dx = kernels::maxpool1d_backward(dy, arg, self.nodes[ins[0].0].value.len());
                self.accumulate(grads, ins[0], dx);
            }
            Op::Relu => {
                let xv = self.value_f64(ins[0]);
                self.accumulate(
                    grads,
                    ins[0],
                    dy.iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect(),
                );
            }
            Op::Gelu => {
                let xv = self.value_f64(ins[0]);
                let dx = dy
                    .iter()
                    .zip(xv)
                    .map(|(g, &v)| {
                        let inner = GELU_C * (v + GELU_A * v * v * v);
                        let t = inner.tanh();
                        let dtanh = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        g * (0.5 * (1.0 + t) + 0.5 * v * dtanh)
                    })
                    .collect();
                self.accumulate(grads, ins[0], dx);
            }
            Op::LayerNorm { rows, width } => {
                self.backprop_layer_norm(ins, *rows, *width, dy, grads);
            }
            Op::Softmax { axis } => {
                let sy = &node.shape;
                let (outer, len, inner) = lane_dims(sy, *axis);
                let yv = self.value_f64(NodeId(idx));
                let mut dx = vec![0.0f64; yv.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = 0.0;
                        for j in 0..len {
                            dot += dy[base + j * inner] * yv[base + j * inner];
                        }
                        for j in 0..len {
                            let p = base + j * inner;
                            dx[p] = yv[p] * (dy[p] - dot);
                        }
                    }
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::MeanAxis { axis } => {
                let sx = &self.nodes[ins[0].0].shape;
                let (outer, len, inner) = lane_dims(sx, *axis);
                let mut dx = vec![0.0f64; numel_of(sx)];
                let inv = 1.0 / len as f64;
                for o in 0..outer {
                    for i in 0..inner {
                        let g = dy[o * inner + i] * inv;
                        for j in 0..len {
                            dx[o * len * inner + j * inner + i] = g;
                        }
                    }
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::MaxAxis { arg } => {
                let mut dx = vec![0.0f64; self.nodes[ins[0].0].value.len()];
                for (&g, &a) in dy.iter().zip(arg) {
                    dx[a] += g;
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::SelectIndex { axis, index } => {
                let sx = &self.nodes[ins[0].0].shape;
                let (outer, len, inner) = lane_dims(sx, *axis);
                let mut dx = vec![0.0f64; numel_of(sx)];
                for o in 0..outer {
                    for i in 0..inner {
                        dx[o * len * inner + index * inner + i] = dy[o * inner + i];
                    }
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::SumAll => {
                let g = dy[0];
                let n = self.nodes[ins[0].0].value.len();
                self.accumulate(grads, ins[0], vec![g; n]);
            }
            Op::Concat { axis } => {
                let sy = &node.shape;
                let outer: usize = sy[..*axis].iter().product();
                let inner: usize = sy[*axis + 1..].iter().product();
                let out_block = sy[*axis] * inner;
                let mut offset = 0;
                for &inp in ins {
                    let len = self.nodes[inp.0].shape[*axis];
                    if self.nodes[inp.0].needs_grad {
                        let mut dx = vec![0.0f64; self.nodes[inp.0].value.len()];
                        for o in 0..outer {
                            let src = &dy[o * out_block + offset * inner..][..len * inner];
                            dx[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
                        }
                        self.accumulate(grads, inp, dx);
                    }
                    offset += len;
                }
            }
            Op::Permute { axes } => {
                // gradient flows through the inverse permutation
                let mut inverse = vec![0usize; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let dx = permute_data(dy, &node.shape, &inverse);
                self.accumulate(grads, ins[0], dx);
            }
            Op::Reshape => {
                self.accumulate(grads, ins[0], dy.to_vec());
            }
            Op::FrequencyFilter { channels, l } => {
                self.backprop_frequency_filter(ins, *channels, *l, dy, grads)?;
            }
            Op::RowNormalize => {
                let sx = &self.nodes[ins[0].0].shape;
                let width = sx[1];
                let xv = self.value_f64(ins[0]);
                let mut dx = vec![0.0f64; xv.len()];
                for ((dxrow, xrow), dyrow) in
                    dx.chunks_mut(width).zip(xv.chunks(width)).zip(dy.chunks(width))
                {
                    let norm = xrow.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let y: Vec<f64> = xrow.iter().map(|&v| v / norm).collect();
                    let dot: f64 = y.iter().zip(dyrow).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &g) in dxrow.iter_mut().zip(&y).zip(dyrow) {
                        *d = (g - yv * dot) / norm;
                    }
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::LseLastAxis { temp } => {
                let sx = &self.nodes[ins[0].0].shape;
                let len = *sx.last().unwrap();
                let xv = self.value_f64(ins[0]);
                let mut dx = vec![0.0f64; xv.len()];
                for ((dxlane, lane), &g) in dx.chunks_mut(len).zip(xv.chunks(len)).zip(dy) {
                    let m = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / temp;
                    let mut sum = 0.0;
                    for (d, &v) in dxlane.iter_mut().zip(lane) {
                        let e = (v / temp - m).exp();
                        *d = e;
                        sum += e;
                    }
                    for d in dxlane.iter_mut() {
                        *d *= g / (sum * temp);
                    }
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::CrossEntropy { labels } => {
                let c = self.nodes[ins[0].0].shape[1];
                let xv = self.value_f64(ins[0]);
                let g = dy[0] / labels.len() as f64;
                let mut dx = vec![0.0f64; xv.len()];
                for ((dxrow, row), &y) in dx.chunks_mut(c).zip(xv.chunks(c)).zip(labels) {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|&v| (v - m).exp()).sum();
                    for (j, (d, &v)) in dxrow.iter_mut().zip(row).enumerate() {
                        let p = (v - m).exp() / sum;
                        *d = g * (p - if j == y { 1.0 } else { 0.0 });
                    }
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::Dropout { mask } => {
                self.accumulate(grads, ins[0], dy.iter().zip(mask).map(|(g, m)| g * m).collect());
            }
        }
        Ok(())
    }

    fn backprop_layer_norm(
        &self,
        ins: &[NodeId],
        rows: usize,
        width: usize,
        dy: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let xv = self.value_f64(ins[0]);
        let gv = self.value_f64(ins[1]);
        let needs_x = self.nodes[ins[0].0].needs_grad;
        let needs_g = self.nodes[ins[1].0].needs_grad;
        let needs_b = self.nodes[ins[2].0].needs_grad;
        let mut dx = vec![0.0f64; xv.len()];
        let mut dgamma = vec![0.0f64; width];
        let mut dbeta = vec![0.0f64; width];
        for r in 0..rows {
            let xrow = &xv[r * width..(r + 1) * width];
            let dyrow = &dy[r * width..(r + 1) * width];
            let mean = xrow.iter().sum::<f64>() / width as f64;
            let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            let xhat: Vec<f64> = xrow.iter().map(|&v| (v - mean) * rstd).collect();
            if needs_g || needs_b {
                for j in 0..width {
                    dgamma[j] += dyrow[j] * xhat[j];
                    dbeta[j] += dyrow[j];
                }
            }
            if needs_x {
                // dl/dxhat = dy * gamma
                let dxhat: Vec<f64> = dyrow.iter().zip(gv).map(|(g, w)| g * w).collect();
                let mean_dxhat = dxhat.iter().sum::<f64>() / width as f64;
                let mean_dxhat_xhat =
                    dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / width as f64;
                let dxrow = &mut dx[r * width..(r + 1) * width];
                for j in 0..width {
                    dxrow[j] = rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                }
            }
        }
        if needs_x {
            self.accumulate(grads, ins[0], dx);
        }
        if needs_g {
            self.accumulate(grads, ins[1], dgamma);
        }
        if needs_b {
            self.accumulate(grads, ins[2], dbeta);
        }
    }

    fn backprop_frequency_filter(
        &self,
        ins: &[NodeId],
        channels: usize,
        l: usize,
        dy: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let plan = DftPlan::new(l);
        let nf = plan.nf;
        let xv = self.value_f64(ins[0]);
        let mv = self.value_f64(ins[1]);
        let b = xv.len() / (channels * l);
        let needs_x = self.nodes[ins[0].0].needs_grad;
        let needs_m = self.nodes[ins[1].0].needs_grad;
        let mut dx = vec![0.0f64; xv.len()];
        let mut dm = vec![0.0f64; mv.len()];
        let mut gre = vec![0.0f64; nf];
        let mut gim = vec![0.0f64; nf];
        let mut ure = vec![0.0f64; nf];
        let mut uim = vec![0.0f64; nf];
        let mut wre = vec![0.0f64; nf];
        let mut wim = vec![0.0f64; nf];
        for bi in 0..b {
            for ci in 0..channels {
                let row = (bi * channels + ci) * l;
                plan.irfft_adjoint_row(&dy[row..row + l], &mut gre, &mut gim);
                if needs_m {
                    plan.rfft_row(&xv[row..row + l], &mut ure, &mut uim);
                    for f in 0..nf {
                        dm[ci * nf + f] += gre[f] * ure[f] + gim[f] * uim[f];
                    }
                }
                if needs_x {
                    for f in 0..nf {
                        let w = mv[ci * nf + f];
                        wre[f] = gre[f] * w;
                        wim[f] = gim[f] * w;
                    }
                    plan.rfft_adjoint_row(&wre, &wim, &mut dx[row..row + l]);
                }
            }
        }
        if needs_x {
            self.accumulate(grads, ins[0], dx);
        }
        if needs_m {
            self.accumulate(grads, ins[1], dm);
        }
        Ok(())
    }
}

/// (outer, len, inner) decomposition of `shape` around `axis`.
fn lane_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn transpose2(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn permute_data(data: &[f64], in_shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let nd = in_shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    // stride in the output for each *input* dimension
    let mut out_strides_for_in = vec![0usize; nd];
    {
        let mut stride = 1;
        for d in (0..nd).rev() {
            out_strides_for_in[axes[d]] = stride;
            stride *= out_shape[d];
        }
    }
    let mut out = vec![0.0f64; data.len()];
    let mut coord = vec![0usize; nd];
    for &v in data {
        let mut oi = 0;
        for d in 0..nd {
            oi += coord[d] * out_strides_for_in[d];
        }
        out[oi] = v;
        // odometer increment in input order
        for d in (0..nd).rev() {
            coord[d] += 1;
            if coord[d] < in_shape[d] {
                break;
            }
            coord[d] = 0;
        }
    }
    out
}
