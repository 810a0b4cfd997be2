//! Dense f64 tensors with a reverse-mode autodiff tape.
//!
//! A [`Tensor`] is a row-major buffer plus shape. Operations on plain
//! tensors just compute values; operations where any operand is registered
//! on a [`Graph`] also record a tape entry so [`Tensor::backward`] can run
//! reverse-mode accumulation later. Inference therefore pays nothing for
//! the machinery: no history is saved unless a graph is involved.
//!
//! Conventions:
//! * scalars are rank-0 tensors (`shape == []`, one element);
//! * elementwise binary ops broadcast right-aligned, numpy style;
//! * gradients accumulate into graph leaves and persist across `backward`
//!   calls until [`Graph::zero_grads`].

pub mod fastmath;
pub mod gradcheck;
pub(crate) mod kernels;

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::rng::SeedRng;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: unsupported shape {shape:?} ({reason})")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
    #[error("shape {shape:?} overflows the addressable element count")]
    Overflow { shape: Vec<usize> },
    #[error("operands belong to different graphs")]
    GraphMismatch,
    #[error("axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange { axis: usize, shape: Vec<usize> },
    #[error("{0}")]
    Invalid(String),
}

pub type TensorResult<T> = Result<T, TensorError>;

/// Initialization recipe for [`Tensor::create`].
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform on `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
}

fn checked_numel(shape: &[usize]) -> TensorResult<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n.checked_mul(8).is_some())
        .ok_or(TensorError::Overflow {
            shape: shape.to_vec(),
        })
}

// ---------------------------------------------------------------------------
// Broadcasting helpers
// ---------------------------------------------------------------------------

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> TensorResult<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let ad = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let bd = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = if ad == bd || bd == 1 {
            ad
        } else if ad == 1 {
            bd
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

/// Element strides of `shape` right-aligned into a frame of rank
/// `frame_rank`, with zero stride on broadcast (size-1 or missing) axes.
fn aligned_strides(shape: &[usize], frame: &[usize]) -> Vec<usize> {
    let rank = frame.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1usize;
    for i in (0..shape.len()).rev() {
        let fi = rank - shape.len() + i;
        strides[fi] = if shape[i] == 1 { 0 } else { s };
        s *= shape[i];
    }
    strides
}

fn is_suffix(shape: &[usize], frame: &[usize]) -> bool {
    shape.len() <= frame.len() && shape == &frame[frame.len() - shape.len()..]
}

fn broadcast_apply(
    a: &[f64],
    ashape: &[usize],
    b: &[f64],
    bshape: &[usize],
    oshape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    if ashape == oshape && bshape == oshape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    if b.len() == 1 {
        return a.iter().map(|&x| f(x, b[0])).collect();
    }
    if a.len() == 1 {
        return b.iter().map(|&y| f(a[0], y)).collect();
    }
    if ashape == oshape && is_suffix(bshape, oshape) {
        let bn = b.len();
        return a.iter().enumerate().map(|(i, &x)| f(x, b[i % bn])).collect();
    }
    if bshape == oshape && is_suffix(ashape, oshape) {
        let an = a.len();
        return b.iter().enumerate().map(|(i, &y)| f(a[i % an], y)).collect();
    }
    // General case: odometer walk with per-axis strides.
    let rank = oshape.len();
    let astr = aligned_strides(ashape, oshape);
    let bstr = aligned_strides(bshape, oshape);
    let numel: usize = oshape.iter().product();
    let mut out = Vec::with_capacity(numel);
    let mut coords = vec![0usize; rank];
    let (mut ai, mut bi) = (0usize, 0usize);
    for _ in 0..numel {
        out.push(f(a[ai], b[bi]));
        for ax in (0..rank).rev() {
            coords[ax] += 1;
            ai += astr[ax];
            bi += bstr[ax];
            if coords[ax] < oshape[ax] {
                break;
            }
            coords[ax] = 0;
            ai -= astr[ax] * oshape[ax];
            bi -= bstr[ax] * oshape[ax];
        }
    }
    out
}

/// Sum `g` (of shape `gshape`) down to `tshape` (right-aligned broadcast
/// inverse). Used to push gradients through broadcasting ops.
fn reduce_to(g: &[f64], gshape: &[usize], tshape: &[usize]) -> Vec<f64> {
    if gshape == tshape {
        return g.to_vec();
    }
    let tn: usize = tshape.iter().product();
    let mut out = vec![0.0; tn];
    if is_suffix(tshape, gshape) && tn > 0 {
        for (i, &v) in g.iter().enumerate() {
            out[i % tn] += v;
        }
        return out;
    }
    let rank = gshape.len();
    let tstr = aligned_strides(tshape, gshape);
    let mut coords = vec![0usize; rank];
    let mut ti = 0usize;
    for &v in g {
        out[ti] += v;
        for ax in (0..rank).rev() {
            coords[ax] += 1;
            ti += tstr[ax];
            if coords[ax] < gshape[ax] {
                break;
            }
            coords[ax] = 0;
            ti -= tstr[ax] * gshape[ax];
        }
    }
    out
}

/// Split `shape` at `axis` into `(pre, dim, post)` block sizes.
fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let pre: usize = shape[..axis].iter().product();
    let dim = shape[axis];
    let post: usize = shape[axis + 1..].iter().product();
    (pre, dim, post)
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Exp(usize),
    Sigmoid(usize),
    Silu(usize),
    Softplus(usize),
    Matmul(usize, usize),
    Conv1d {
        x: usize,
        w: usize,
        stride: usize,
        padding: usize,
    },
    DwConv1d {
        x: usize,
        w: usize,
        pad_left: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        stats: Vec<f64>,
    },
    Scan {
        u: usize,
        delta: usize,
        a: usize,
        b: usize,
        c: usize,
        hist: Vec<f64>,
    },
    Reshape(usize),
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    Reverse {
        x: usize,
        axis: usize,
    },
    Transpose(usize),
    SumAll(usize),
    MeanAll(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Neg(..) => "neg",
            Op::Exp(..) => "exp",
            Op::Sigmoid(..) => "sigmoid",
            Op::Silu(..) => "silu",
            Op::Softplus(..) => "softplus",
            Op::Matmul(..) => "matmul",
            Op::Conv1d { .. } => "conv1d",
            Op::DwConv1d { .. } => "dwconv1d",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Scan { .. } => "scan",
            Op::Reshape(..) => "reshape",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Reverse { .. } => "reverse",
            Op::Transpose(..) => "transpose",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![*a, *b],
            Op::Neg(x)
            | Op::Exp(x)
            | Op::Sigmoid(x)
            | Op::Silu(x)
            | Op::Softplus(x)
            | Op::Reshape(x)
            | Op::Transpose(x)
            | Op::SumAll(x)
            | Op::MeanAll(x) => vec![*x],
            Op::Conv1d { x, w, .. } | Op::DwConv1d { x, w, .. } => vec![*x, *w],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Scan { u, delta, a, b, c, .. } => vec![*u, *delta, *a, *b, *c],
            Op::Slice { x, .. } | Op::Reverse { x, .. } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
        }
    }
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Rc<[f64]>,
    /// Persistent gradient; populated on registered leaves by `backward`.
    grad: Option<Vec<f64>>,
    keep_grad: bool,
}

/// Snapshot of a tape entry for inspection (op audits in tests and tooling).
#[derive(Debug, Clone)]
pub struct NodeInfo {
    pub id: usize,
    pub op: &'static str,
    pub inputs: Vec<usize>,
    pub shape: Vec<usize>,
}

/// A reverse-mode tape. Cheap to clone (shared handle).
#[derive(Clone, Default)]
pub struct Graph {
    inner: Rc<RefCell<Vec<Node>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn same_as(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn push(&self, op: Op, shape: Vec<usize>, value: Rc<[f64]>, keep_grad: bool) -> usize {
        let mut nodes = self.inner.borrow_mut();
        nodes.push(Node {
            op,
            shape,
            value,
            grad: None,
            keep_grad,
        });
        nodes.len() - 1
    }

    /// Register `t`'s data as a differentiable leaf: gradients will be
    /// accumulated for it on `backward`.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        let id = self.push(Op::Leaf, t.shape.clone(), t.data.clone(), true);
        Tensor {
            shape: t.shape.clone(),
            data: t.data.clone(),
            node: Some((self.clone(), id)),
        }
    }

    /// Register `t` as a non-differentiable input (no gradient kept).
    pub fn constant(&self, t: &Tensor) -> Tensor {
        let id = self.push(Op::Leaf, t.shape.clone(), t.data.clone(), false);
        Tensor {
            shape: t.shape.clone(),
            data: t.data.clone(),
            node: Some((self.clone(), id)),
        }
    }

    /// Number of tape entries.
    pub fn len(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Clear accumulated leaf gradients.
    pub fn zero_grads(&self) {
        for node in self.inner.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Tape contents for auditing: ids, op names, input ids, shapes.
    pub fn nodes_info(&self) -> Vec<NodeInfo> {
        self.inner
            .borrow()
            .iter()
            .enumerate()
            .map(|(id, n)| NodeInfo {
                id,
                op: n.op.name(),
                inputs: n.op.inputs(),
                shape: n.shape.clone(),
            })
            .collect()
    }

    /// Value of a tape entry as a fresh untracked tensor.
    pub fn node_value(&self, id: usize) -> Option<Tensor> {
        let nodes = self.inner.borrow();
        let n = nodes.get(id)?;
        Some(Tensor {
            shape: n.shape.clone(),
            data: n.value.clone(),
            node: None,
        })
    }

    fn run_backward(&self, seed_id: usize) {
        let mut nodes = self.inner.borrow_mut();
        let mut temp: Vec<Option<Vec<f64>>> = (0..=seed_id).map(|_| None).collect();
        temp[seed_id] = Some(vec![1.0]);

        fn accumulate(temp: &mut [Option<Vec<f64>>], id: usize, contrib: Vec<f64>) {
            match &mut temp[id] {
                Some(buf) => {
                    for (o, c) in buf.iter_mut().zip(&contrib) {
                        *o += *c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        }

        for i in (0..=seed_id).rev() {
            let Some(g) = temp[i].take() else { continue };
            // Deposit into the persistent slot on registered leaves.
            if nodes[i].keep_grad {
                match &mut nodes[i].grad {
                    Some(buf) => {
                        for (o, c) in buf.iter_mut().zip(&g) {
                            *o += *c;
                        }
                    }
                    slot @ None => *slot = Some(g.clone()),
                }
            }
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    let oshape = nodes[i].shape.clone();
                    let ga = reduce_to(&g, &oshape, &nodes[a].shape);
                    let gb = reduce_to(&g, &oshape, &nodes[b].shape);
                    accumulate(&mut temp, a, ga);
                    accumulate(&mut temp, b, gb);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let oshape = nodes[i].shape.clone();
                    let (av, ash) = (nodes[a].value.clone(), nodes[a].shape.clone());
                    let (bv, bsh) = (nodes[b].value.clone(), nodes[b].shape.clone());
                    let ga_full = broadcast_apply(&g, &oshape, &bv, &bsh, &oshape, |x, y| x * y);
                    let gb_full = broadcast_apply(&g, &oshape, &av, &ash, &oshape, |x, y| x * y);
                    accumulate(&mut temp, a, reduce_to(&ga_full, &oshape, &ash));
                    accumulate(&mut temp, b, reduce_to(&gb_full, &oshape, &bsh));
                }
                Op::Neg(x) => {
                    let x = *x;
                    accumulate(&mut temp, x, g.iter().map(|v| -v).collect());
                }
                Op::Exp(x) => {
                    let x = *x;
                    let y = nodes[i].value.clone();
                    accumulate(&mut temp, x, g.iter().zip(y.iter()).map(|(gv, yv)| gv * yv).collect());
                }
                Op::Sigmoid(x) => {
                    let x = *x;
                    let y = nodes[i].value.clone();
                    accumulate(
                        &mut temp,
                        x,
                        g.iter().zip(y.iter()).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect(),
                    );
                }
                Op::Silu(x) => {
                    let x = *x;
                    let xv = nodes[x].value.clone();
                    accumulate(
                        &mut temp,
                        x,
                        g.iter()
                            .zip(xv.iter())
                            .map(|(gv, &x)| {
                                let s = fastmath::sigmoid(x);
                                gv * s * (1.0 + x * (1.0 - s))
                            })
                            .collect(),
                    );
                }
                Op::Softplus(x) => {
                    let x = *x;
                    let xv = nodes[x].value.clone();
                    accumulate(
                        &mut temp,
                        x,
                        g.iter()
                            .zip(xv.iter())
                            .map(|(gv, &x)| gv * fastmath::sigmoid(x))
                            .collect(),
                    );
                }
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (m, k) = (nodes[a].shape[0], nodes[a].shape[1]);
                    let n = nodes[b].shape[1];
                    let av = nodes[a].value.clone();
                    let bv = nodes[b].value.clone();
                    // dA = g B^T, dB = A^T g
                    let bt = kernels::transpose2d(&bv, k, n);
                    let mut ga = vec![0.0; m * k];
                    kernels::matmul_acc(&g, &bt, &mut ga, m, n, k);
                    let at = kernels::transpose2d(&av, m, k);
                    let mut gb = vec![0.0; k * n];
                    kernels::matmul_acc(&at, &g, &mut gb, k, m, n);
                    accumulate(&mut temp, a, ga);
                    accumulate(&mut temp, b, gb);
                }
                Op::Conv1d { x, w, stride, padding } => {
                    let (x, w, stride, padding) = (*x, *w, *stride, *padding);
                    let xv = nodes[x].value.clone();
                    let wv = nodes[w].value.clone();
                    let (c_in, l_in) = (nodes[x].shape[0], nodes[x].shape[1]);
                    let (c_out, kernel) = (nodes[w].shape[0], nodes[w].shape[2]);
                    let mut dx = vec![0.0; xv.len()];
                    let mut dw = vec![0.0; wv.len()];
                    kernels::conv1d_bwd(
                        &g, &xv, &wv, c_in, l_in, c_out, kernel, stride, padding, &mut dx, &mut dw,
                    );
                    accumulate(&mut temp, x, dx);
                    accumulate(&mut temp, w, dw);
                }
                Op::DwConv1d { x, w, pad_left } => {
                    let (x, w, pad_left) = (*x, *w, *pad_left);
                    let xv = nodes[x].value.clone();
                    let wv = nodes[w].value.clone();
                    let (channels, l_in) = (nodes[x].shape[0], nodes[x].shape[1]);
                    let kernel = nodes[w].shape[1];
                    let mut dx = vec![0.0; xv.len()];
                    let mut dw = vec![0.0; wv.len()];
                    kernels::dwconv1d_bwd(
                        &g, &xv, &wv, channels, l_in, kernel, pad_left, &mut dx, &mut dw,
                    );
                    accumulate(&mut temp, x, dx);
                    accumulate(&mut temp, w, dw);
                }
                Op::LayerNorm { x, gain, bias, stats } => {
                    let (x, gain, bias) = (*x, *gain, *bias);
                    let xv = nodes[x].value.clone();
                    let gv = nodes[gain].value.clone();
                    let d = *nodes[x].shape.last().unwrap();
                    let mut dx = vec![0.0; xv.len()];
                    let mut dgain = vec![0.0; gv.len()];
                    let mut dbias = vec![0.0; gv.len()];
                    kernels::layer_norm_bwd(&g, &xv, &gv, stats, d, &mut dx, &mut dgain, &mut dbias);
                    accumulate(&mut temp, x, dx);
                    accumulate(&mut temp, gain, dgain);
                    accumulate(&mut temp, bias, dbias);
                }
                Op::Scan { u, delta, a, b, c, hist } => {
                    let (u, delta, a, b, c) = (*u, *delta, *a, *b, *c);
                    let uv = nodes[u].value.clone();
                    let dv = nodes[delta].value.clone();
                    let av = nodes[a].value.clone();
                    let bv = nodes[b].value.clone();
                    let cv = nodes[c].value.clone();
                    let (l, d) = (nodes[u].shape[0], nodes[u].shape[1]);
                    let n = nodes[a].shape[1];
                    let mut du = vec![0.0; uv.len()];
                    let mut ddelta = vec![0.0; dv.len()];
                    let mut da = vec![0.0; av.len()];
                    let mut db = vec![0.0; bv.len()];
                    let mut dc = vec![0.0; cv.len()];
                    kernels::scan_bwd(
                        &g, &uv, &dv, &av, &bv, &cv, hist, l, d, n, &mut du, &mut ddelta,
                        &mut da, &mut db, &mut dc,
                    );
                    accumulate(&mut temp, u, du);
                    accumulate(&mut temp, delta, ddelta);
                    accumulate(&mut temp, a, da);
                    accumulate(&mut temp, b, db);
                    accumulate(&mut temp, c, dc);
                }
                Op::Reshape(x) => {
                    let x = *x;
                    accumulate(&mut temp, x, g);
                }
                Op::Slice { x, axis, start } => {
                    let (x, axis, start) = (*x, *axis, *start);
                    let xsh = nodes[x].shape.clone();
                    let osh = nodes[i].shape.clone();
                    let (pre, dim, post) = axis_blocks(&xsh, axis);
                    let len = osh[axis];
                    let mut dx = vec![0.0; pre * dim * post];
                    for p in 0..pre {
                        for j in 0..len {
                            let src = (p * len + j) * post;
                            let dst = (p * dim + start + j) * post;
                            dx[dst..dst + post].copy_from_slice(&g[src..src + post]);
                        }
                    }
                    accumulate(&mut temp, x, dx);
                }
                Op::Concat { xs, axis } => {
                    let xs = xs.clone();
                    let axis = *axis;
                    let osh = nodes[i].shape.clone();
                    let (pre, odim, post) = axis_blocks(&osh, axis);
                    let mut offset = 0usize;
                    for &xid in &xs {
                        let xdim = nodes[xid].shape[axis];
                        let mut dx = vec![0.0; pre * xdim * post];
                        for p in 0..pre {
                            for j in 0..xdim {
                                let src = (p * odim + offset + j) * post;
                                let dst = (p * xdim + j) * post;
                                dx[dst..dst + post].copy_from_slice(&g[src..src + post]);
                            }
                        }
                        offset += xdim;
                        accumulate(&mut temp, xid, dx);
                    }
                }
                Op::Reverse { x, axis } => {
                    let (x, axis) = (*x, *axis);
                    let sh = nodes[i].shape.clone();
                    accumulate(&mut temp, x, reverse_axis(&g, &sh, axis));
                }
                Op::Transpose(x) => {
                    let x = *x;
                    let osh = nodes[i].shape.clone();
                    accumulate(&mut temp, x, kernels::transpose2d(&g, osh[0], osh[1]));
                }
                Op::SumAll(x) => {
                    let x = *x;
                    let n = nodes[x].value.len();
                    accumulate(&mut temp, x, vec![g[0]; n]);
                }
                Op::MeanAll(x) => {
                    let x = *x;
                    let n = nodes[x].value.len();
                    accumulate(&mut temp, x, vec![g[0] / n as f64; n]);
                }
            }
        }
    }
}

fn reverse_axis(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (pre, dim, post) = axis_blocks(shape, axis);
    let mut out = vec![0.0; x.len()];
    for p in 0..pre {
        for j in 0..dim {
            let src = (p * dim + j) * post;
            let dst = (p * dim + (dim - 1 - j)) * post;
            out[dst..dst + post].copy_from_slice(&x[src..src + post]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<[f64]>,
    node: Option<(Graph, usize)>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("tracked", &self.node.is_some())
            .field(
                "data",
                &if self.data.len() <= 8 {
                    format!("{:?}", &self.data[..])
                } else {
                    format!("[{} elements]", self.data.len())
                },
            )
            .finish()
    }
}

impl Tensor {
    // -- constructors -------------------------------------------------------

    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> TensorResult<Tensor> {
        let numel = checked_numel(shape)?;
        if data.len() != numel {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Rc::from(data),
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> TensorResult<Tensor> {
        let numel = checked_numel(shape)?;
        Tensor::from_vec(vec![0.0; numel], shape)
    }

    pub fn full(shape: &[usize], v: f64) -> TensorResult<Tensor> {
        let numel = checked_numel(shape)?;
        Tensor::from_vec(vec![v; numel], shape)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![v], &[]).expect("scalar shape is always valid")
    }

    /// Build a tensor from an initialization recipe. The RNG is consumed
    /// only by the random variants, but passing it unconditionally keeps
    /// call sites uniform and deterministic.
    pub fn create(shape: &[usize], init: Init, rng: &mut SeedRng) -> TensorResult<Tensor> {
        let numel = checked_numel(shape)?;
        let data = match init {
            Init::Zeros => vec![0.0; numel],
            Init::Const(v) => vec![v; numel],
            Init::Uniform { lo, hi } => {
                if !(lo <= hi) {
                    return Err(TensorError::Invalid(format!(
                        "uniform bounds out of order: [{lo}, {hi})"
                    )));
                }
                (0..numel).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect()
            }
            Init::Normal { mean, std } => {
                let dist = Normal::new(mean, std)
                    .map_err(|e| TensorError::Invalid(format!("normal init: {e}")))?;
                (0..numel).map(|_| dist.sample(rng)).collect()
            }
        };
        Tensor::from_vec(data, shape)
    }

    // -- accessors ----------------------------------------------------------

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    /// The single element of a rank-0/one-element tensor.
    pub fn item(&self) -> TensorResult<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::BadShape {
                op: "item",
                shape: self.shape.clone(),
                reason: "expected exactly one element",
            })
        }
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Tape entry id when tracked.
    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    /// Forget tape membership; the values are shared, not copied.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    /// Accumulated gradient for a registered leaf, if backward has run.
    pub fn grad(&self) -> Option<Tensor> {
        let (graph, id) = self.node.as_ref()?;
        let nodes = graph.inner.borrow();
        let g = nodes[*id].grad.as_ref()?;
        Some(Tensor {
            shape: self.shape.clone(),
            data: Rc::from(g.clone()),
            node: None,
        })
    }

    // -- graph plumbing -----------------------------------------------------

    fn graph_of(ts: &[&Tensor]) -> TensorResult<Option<Graph>> {
        let mut found: Option<Graph> = None;
        for t in ts {
            if let Some((g, _)) = &t.node {
                match &found {
                    None => found = Some(g.clone()),
                    Some(f) if f.same_as(g) => {}
                    Some(_) => return Err(TensorError::GraphMismatch),
                }
            }
        }
        Ok(found)
    }

    /// Node id of `self` in `graph`, interning untracked operands as
    /// constants.
    fn id_in(&self, graph: &Graph) -> usize {
        match &self.node {
            Some((_, id)) => *id,
            None => graph.push(Op::Leaf, self.shape.clone(), self.data.clone(), false),
        }
    }

    fn emit(graph: Option<Graph>, op: impl FnOnce(&Graph) -> Op, shape: Vec<usize>, value: Vec<f64>) -> Tensor {
        let data: Rc<[f64]> = Rc::from(value);
        match graph {
            None => Tensor {
                shape,
                data,
                node: None,
            },
            Some(g) => {
                let op = op(&g);
                let id = g.push(op, shape.clone(), data.clone(), false);
                Tensor {
                    shape,
                    data,
                    node: Some((g, id)),
                }
            }
        }
    }

    // -- elementwise --------------------------------------------------------

    pub fn add(&self, other: &Tensor) -> TensorResult<Tensor> {
        let oshape = broadcast_shape("add", &self.shape, &other.shape)?;
        let graph = Tensor::graph_of(&[self, other])?;
        let value = broadcast_apply(&self.data, &self.shape, &other.data, &other.shape, &oshape, |a, b| a + b);
        Ok(Tensor::emit(
            graph,
            |g| Op::Add(self.id_in(g), other.id_in(g)),
            oshape,
            value,
        ))
    }

    pub fn sub(&self, other: &Tensor) -> TensorResult<Tensor> {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Tensor) -> TensorResult<Tensor> {
        let oshape = broadcast_shape("mul", &self.shape, &other.shape)?;
        let graph = Tensor::graph_of(&[self, other])?;
        let value = broadcast_apply(&self.data, &self.shape, &other.data, &other.shape, &oshape, |a, b| a * b);
        Ok(Tensor::emit(
            graph,
            |g| Op::Mul(self.id_in(g), other.id_in(g)),
            oshape,
            value,
        ))
    }

    /// Multiply by a plain scalar constant.
    pub fn scale(&self, c: f64) -> Tensor {
        self.mul(&Tensor::scalar(c)).expect("scalar broadcast cannot fail")
    }

    /// Add a plain scalar constant.
    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.add(&Tensor::scalar(c)).expect("scalar broadcast cannot fail")
    }

    fn unary(&self, make: impl Fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Tensor {
        let value: Vec<f64> = self.data.iter().map(|&x| f(x)).collect();
        let graph = self.node.as_ref().map(|(g, _)| g.clone());
        Tensor::emit(graph, |g| make(self.id_in(g)), self.shape.clone(), value)
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Op::Neg, |x| -x)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Op::Exp, fastmath::exp)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Op::Sigmoid, fastmath::sigmoid)
    }

    pub fn silu(&self) -> Tensor {
        self.unary(Op::Silu, fastmath::silu)
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(Op::Softplus, fastmath::softplus)
    }

    // -- linear algebra -----------------------------------------------------

    pub fn matmul(&self, other: &Tensor) -> TensorResult<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let n = other.shape[1];
        let graph = Tensor::graph_of(&[self, other])?;
        let value = kernels::matmul(&self.data, &other.data, m, k, n);
        Ok(Tensor::emit(
            graph,
            |g| Op::Matmul(self.id_in(g), other.id_in(g)),
            vec![m, n],
            value,
        ))
    }

    /// Strided dense convolution. `self: [c_in, l]`, `w: [c_out, c_in, k]`,
    /// zero padding on both ends.
    pub fn conv1d(&self, w: &Tensor, stride: usize, padding: usize) -> TensorResult<Tensor> {
        if self.shape.len() != 2 || w.shape.len() != 3 || w.shape[1] != self.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: self.shape.clone(),
                rhs: w.shape.clone(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid("conv1d: stride must be positive".into()));
        }
        let (c_in, l_in) = (self.shape[0], self.shape[1]);
        let (c_out, kernel) = (w.shape[0], w.shape[2]);
        let l_out = kernels::conv1d_out_len(l_in, kernel, stride, padding);
        if l_out == 0 {
            return Err(TensorError::Invalid(format!(
                "conv1d: kernel {kernel} does not fit input of length {l_in} with padding {padding}"
            )));
        }
        let graph = Tensor::graph_of(&[self, w])?;
        let value = kernels::conv1d_fwd(&self.data, &w.data, c_in, l_in, c_out, kernel, stride, padding);
        Ok(Tensor::emit(
            graph,
            |g| Op::Conv1d {
                x: self.id_in(g),
                w: w.id_in(g),
                stride,
                padding,
            },
            vec![c_out, l_out],
            value,
        ))
    }

    /// Depthwise convolution with explicit left padding and unit stride.
    /// `self: [c, l]`, `w: [c, k]`; `pad_left = k - 1` makes it causal with
    /// unchanged length.
    pub fn dwconv1d(&self, w: &Tensor, pad_left: usize) -> TensorResult<Tensor> {
        if self.shape.len() != 2 || w.shape.len() != 2 || w.shape[0] != self.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "dwconv1d",
                lhs: self.shape.clone(),
                rhs: w.shape.clone(),
            });
        }
        let (channels, l_in) = (self.shape[0], self.shape[1]);
        let kernel = w.shape[1];
        if l_in + pad_left + 1 <= kernel {
            return Err(TensorError::Invalid(format!(
                "dwconv1d: kernel {kernel} does not fit input of length {l_in} with pad_left {pad_left}"
            )));
        }
        let l_out = l_in + pad_left + 1 - kernel;
        let graph = Tensor::graph_of(&[self, w])?;
        let value = kernels::dwconv1d_fwd(&self.data, &w.data, channels, l_in, kernel, pad_left);
        Ok(Tensor::emit(
            graph,
            |g| Op::DwConv1d {
                x: self.id_in(g),
                w: w.id_in(g),
                pad_left,
            },
            vec![channels, l_out],
            value,
        ))
    }

    /// Layer normalization over the last axis with learnable gain and bias.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> TensorResult<Tensor> {
        let Some(&d) = self.shape.last() else {
            return Err(TensorError::BadShape {
                op: "layer_norm",
                shape: self.shape.clone(),
                reason: "rank must be at least 1",
            });
        };
        if gain.shape != [d] || bias.shape != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape.clone(),
                rhs: gain.shape.clone(),
            });
        }
        let graph = Tensor::graph_of(&[self, gain, bias])?;
        let (value, stats) = kernels::layer_norm_fwd(&self.data, &gain.data, &bias.data, d, eps);
        Ok(Tensor::emit(
            graph,
            |g| Op::LayerNorm {
                x: self.id_in(g),
                gain: gain.id_in(g),
                bias: bias.id_in(g),
                stats,
            },
            self.shape.clone(),
            value,
        ))
    }

    /// Fused selective scan. `self` is the input sequence `u: [l, d]`;
    /// `delta: [l, d]` per-step sizes, `a: [d, n]` state matrix (diagonal
    /// per channel), `b, c: [l, n]` input/output projections. Output `[l, d]`.
    pub fn scan(&self, delta: &Tensor, a: &Tensor, b: &Tensor, c: &Tensor) -> TensorResult<Tensor> {
        if self.shape.len() != 2 {
            return Err(TensorError::BadShape {
                op: "scan",
                shape: self.shape.clone(),
                reason: "u must be [l, d]",
            });
        }
        let (l, d) = (self.shape[0], self.shape[1]);
        if delta.shape != [l, d] {
            return Err(TensorError::ShapeMismatch {
                op: "scan",
                lhs: self.shape.clone(),
                rhs: delta.shape.clone(),
            });
        }
        if a.shape.len() != 2 || a.shape[0] != d {
            return Err(TensorError::ShapeMismatch {
                op: "scan",
                lhs: self.shape.clone(),
                rhs: a.shape.clone(),
            });
        }
        let n = a.shape[1];
        if b.shape != [l, n] || c.shape != [l, n] {
            return Err(TensorError::ShapeMismatch {
                op: "scan",
                lhs: b.shape.clone(),
                rhs: c.shape.clone(),
            });
        }
        let graph = Tensor::graph_of(&[self, delta, a, b, c])?;
        let save_h = graph.is_some();
        let (value, hist) = kernels::scan_fwd(&self.data, &delta.data, &a.data, &b.data, &c.data, l, d, n, save_h);
        Ok(Tensor::emit(
            graph,
            |g| Op::Scan {
                u: self.id_in(g),
                delta: delta.id_in(g),
                a: a.id_in(g),
                b: b.id_in(g),
                c: c.id_in(g),
                hist,
            },
            vec![l, d],
            value,
        ))
    }

    // -- shape ops ----------------------------------------------------------

    pub fn reshape(&self, shape: &[usize]) -> TensorResult<Tensor> {
        let numel = checked_numel(shape)?;
        if numel != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let graph = self.node.as_ref().map(|(g, _)| g.clone());
        Ok(Tensor::emit(
            graph,
            |g| Op::Reshape(self.id_in(g)),
            shape.to_vec(),
            self.data.to_vec(),
        ))
    }

    /// Contiguous sub-range `start..start+len` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> TensorResult<Tensor> {
        if axis >= self.shape.len() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                shape: self.shape.clone(),
            });
        }
        let (pre, dim, post) = axis_blocks(&self.shape, axis);
        if start + len > dim || len == 0 {
            return Err(TensorError::Invalid(format!(
                "slice: range {start}..{} out of bounds for axis of size {dim}",
                start + len
            )));
        }
        let mut oshape = self.shape.clone();
        oshape[axis] = len;
        let mut value = Vec::with_capacity(pre * len * post);
        for p in 0..pre {
            let base = (p * dim + start) * post;
            value.extend_from_slice(&self.data[base..base + len * post]);
        }
        let graph = self.node.as_ref().map(|(g, _)| g.clone());
        Ok(Tensor::emit(
            graph,
            |g| Op::Slice {
                x: self.id_in(g),
                axis,
                start,
            },
            oshape,
            value,
        ))
    }

    /// Concatenate tensors along `axis`; all other axes must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> TensorResult<Tensor> {
        let Some(first) = parts.first() else {
            return Err(TensorError::Invalid("concat: no inputs".into()));
        };
        if axis >= first.shape.len() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                shape: first.shape.clone(),
            });
        }
        let mut odim = 0usize;
        for p in parts {
            if p.shape.len() != first.shape.len()
                || p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .any(|(ax, (a, b))| ax != axis && a != b)
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            odim += p.shape[axis];
        }
        let mut oshape = first.shape.clone();
        oshape[axis] = odim;
        let (pre, _, post) = axis_blocks(&oshape, axis);
        let mut value = vec![0.0; pre * odim * post];
        let mut offset = 0usize;
        for p in parts {
            let pdim = p.shape[axis];
            for row in 0..pre {
                let src = row * pdim * post;
                let dst = (row * odim + offset) * post;
                value[dst..dst + pdim * post].copy_from_slice(&p.data[src..src + pdim * post]);
            }
            offset += pdim;
        }
        let graph = Tensor::graph_of(parts)?;
        Ok(Tensor::emit(
            graph,
            |g| Op::Concat {
                xs: parts.iter().map(|p| p.id_in(g)).collect(),
                axis,
            },
            oshape,
            value,
        ))
    }

    /// Flip along `axis`.
    pub fn reverse(&self, axis: usize) -> TensorResult<Tensor> {
        if axis >= self.shape.len() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                shape: self.shape.clone(),
            });
        }
        let value = reverse_axis(&self.data, &self.shape, axis);
        let graph = self.node.as_ref().map(|(g, _)| g.clone());
        Ok(Tensor::emit(
            graph,
            |g| Op::Reverse {
                x: self.id_in(g),
                axis,
            },
            self.shape.clone(),
            value,
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> TensorResult<Tensor> {
        if self.shape.len() != 2 {
            return Err(TensorError::BadShape {
                op: "transpose",
                shape: self.shape.clone(),
                reason: "rank must be 2",
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let value = kernels::transpose2d(&self.data, r, c);
        let graph = self.node.as_ref().map(|(g, _)| g.clone());
        Ok(Tensor::emit(
            graph,
            |g| Op::Transpose(self.id_in(g)),
            vec![c, r],
            value,
        ))
    }

    // -- reductions ---------------------------------------------------------

    pub fn sum_all(&self) -> Tensor {
        let value = vec![self.data.iter().sum::<f64>()];
        let graph = self.node.as_ref().map(|(g, _)| g.clone());
        Tensor::emit(graph, |g| Op::SumAll(self.id_in(g)), vec![], value)
    }

    pub fn mean_all(&self) -> Tensor {
        let value = vec![self.data.iter().sum::<f64>() / self.data.len() as f64];
        let graph = self.node.as_ref().map(|(g, _)| g.clone());
        Tensor::emit(graph, |g| Op::MeanAll(self.id_in(g)), vec![], value)
    }

    // -- autodiff -----------------------------------------------------------

    /// Reverse-mode sweep seeded with 1 at `self`, which must be a tracked
    /// one-element tensor. Gradients accumulate into registered leaves.
    pub fn backward(&self) -> TensorResult<()> {
        let Some((graph, id)) = &self.node else {
            return Err(TensorError::Invalid(
                "backward: tensor is not attached to a graph".into(),
            ));
        };
        if self.data.len() != 1 {
            return Err(TensorError::BadShape {
                op: "backward",
                shape: self.shape.clone(),
                reason: "seed must have exactly one element",
            });
        }
        graph.run_backward(*id);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn construction_and_accessors() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        assert_eq!(x.shape(), &[2, 3]);
        assert_eq!(x.numel(), 6);
        assert!(!x.is_tracked());
        assert!(Tensor::from_vec(vec![1.0; 5], &[2, 3]).is_err());
        assert_eq!(Tensor::scalar(4.5).item().unwrap(), 4.5);
        assert!(t(&[1.0, 2.0], &[2]).item().is_err());
        assert!(Tensor::zeros(&[usize::MAX, 2]).is_err());
    }

    #[test]
    fn create_is_seed_deterministic() {
        let mut r1 = rng_from_seed(11);
        let mut r2 = rng_from_seed(11);
        let a = Tensor::create(&[3, 4], Init::Uniform { lo: -1.0, hi: 1.0 }, &mut r1).unwrap();
        let b = Tensor::create(&[3, 4], Init::Uniform { lo: -1.0, hi: 1.0 }, &mut r2).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|&v| (-1.0..1.0).contains(&v)));
        let n = Tensor::create(&[1000], Init::Normal { mean: 2.0, std: 0.5 }, &mut r1).unwrap();
        let mean = n.data().iter().sum::<f64>() / 1000.0;
        assert!((mean - 2.0).abs() < 0.1);
    }

    #[test]
    fn broadcast_add_and_mul() {
        let a = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let row = t(&[10.0, 20.0, 30.0], &[3]);
        let y = a.add(&row).unwrap();
        assert_eq!(y.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let col = t(&[10.0, 100.0], &[2, 1]);
        let y = a.mul(&col).unwrap();
        assert_eq!(y.data(), &[10.0, 20.0, 30.0, 400.0, 500.0, 600.0]);
        // [2,1] x [1,3] -> [2,3]
        let u = t(&[1.0, 2.0], &[2, 1]);
        let v = t(&[3.0, 4.0, 5.0], &[1, 3]);
        let y = u.mul(&v).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(y.data(), &[3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
        assert!(a.add(&t(&[1.0, 2.0], &[2])).is_err());
    }

    #[test]
    fn shape_ops_roundtrip() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let r = x.reshape(&[3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), x.data());
        assert!(x.reshape(&[4, 2]).is_err());

        let s = x.slice(1, 1, 2).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[2.0, 3.0, 5.0, 6.0]);
        assert!(x.slice(1, 2, 2).is_err());
        assert!(x.slice(3, 0, 1).is_err());

        let c = Tensor::concat(&[&x, &x], 0).unwrap();
        assert_eq!(c.shape(), &[4, 3]);
        let c2 = Tensor::concat(&[&x, &x], 1).unwrap();
        assert_eq!(c2.shape(), &[2, 6]);
        assert_eq!(c2.data()[..6], [1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);

        let rev = x.reverse(1).unwrap();
        assert_eq!(rev.data(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
        assert_eq!(rev.reverse(1).unwrap().data(), x.data());

        let tr = x.transpose().unwrap();
        assert_eq!(tr.shape(), &[3, 2]);
        assert_eq!(tr.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn reductions() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        assert_eq!(x.sum_all().item().unwrap(), 10.0);
        assert_eq!(x.mean_all().item().unwrap(), 2.5);
        assert_eq!(x.sum_all().shape(), &[] as &[usize]);
    }

    #[test]
    fn untracked_ops_stay_untracked() {
        let x = t(&[1.0, -2.0], &[2]);
        let y = x.silu().add(&x.exp()).unwrap().sum_all();
        assert!(!y.is_tracked());
        assert!(y.backward().is_err());
    }

    #[test]
    fn graph_mismatch_is_an_error() {
        let g1 = Graph::new();
        let g2 = Graph::new();
        let a = g1.leaf(&t(&[1.0], &[1]));
        let b = g2.leaf(&t(&[2.0], &[1]));
        assert!(matches!(a.add(&b), Err(TensorError::GraphMismatch)));
    }

    #[test]
    fn backward_through_composite_matches_finite_difference() {
        // f(x, w) = mean(silu(x matmul w) + softplus(x matmul w) * sigmoid(x))... keep it
        // representative: mix matmul, broadcasting, activations, reductions.
        let g = Graph::new();
        let x0 = [0.3, -0.7, 1.1, 0.4, -0.2, 0.9];
        let w0 = [0.5, -0.3, 0.8, 0.1, -0.6, 0.4];
        let x = g.leaf(&t(&x0, &[2, 3]));
        let w = g.leaf(&t(&w0, &[3, 2]));
        let bias = g.leaf(&t(&[0.1, -0.2], &[2]));

        let f = |xd: &[f64], wd: &[f64], bd: &[f64]| -> f64 {
            let x = t(xd, &[2, 3]);
            let w = t(wd, &[3, 2]);
            let b = t(bd, &[2]);
            let h = x.matmul(&w).unwrap().add(&b).unwrap();
            h.silu().add(&h.softplus().mul(&h.sigmoid()).unwrap()).unwrap().mean_all().item().unwrap()
        };

        let h = x.matmul(&w).unwrap().add(&bias).unwrap();
        let y = h.silu().add(&h.softplus().mul(&h.sigmoid()).unwrap()).unwrap().mean_all();
        y.backward().unwrap();

        let gx = x.grad().unwrap();
        let gw = w.grad().unwrap();
        let gb = bias.grad().unwrap();

        let b0 = [0.1, -0.2];
        let num_gx = gradcheck::central_diff(&mut |xs| f(xs, &w0, &b0), &x0, 1e-5);
        let num_gw = gradcheck::central_diff(&mut |ws| f(&x0, ws, &b0), &w0, 1e-5);
        let num_gb = gradcheck::central_diff(&mut |bs| f(&x0, &w0, bs), &b0, 1e-5);
        for (got, want) in gx.data().iter().zip(&num_gx) {
            assert!((got - want).abs() < 1e-6 * (1.0 + want.abs()), "{got} vs {want}");
        }
        for (got, want) in gw.data().iter().zip(&num_gw) {
            assert!((got - want).abs() < 1e-6 * (1.0 + want.abs()), "{got} vs {want}");
        }
        for (got, want) in gb.data().iter().zip(&num_gb) {
            assert!((got - want).abs() < 1e-6 * (1.0 + want.abs()), "{got} vs {want}");
        }
    }

    #[test]
    fn backward_through_shape_ops_matches_finite_difference() {
        let g = Graph::new();
        let x0: Vec<f64> = (0..12).map(|i| (i as f64) * 0.31 - 1.7).collect();
        let x = g.leaf(&t(&x0, &[3, 4]));

        let build = |x: &Tensor| -> Tensor {
            let s = x.slice(1, 1, 3).unwrap();
            let r = s.reverse(0).unwrap();
            let c = Tensor::concat(&[&s, &r], 1).unwrap();
            let tr = c.transpose().unwrap();
            tr.reshape(&[18]).unwrap().exp().sum_all()
        };
        build(&x).backward().unwrap();
        let got = x.grad().unwrap();
        let num = gradcheck::central_diff(
            &mut |xs| build(&t(xs, &[3, 4])).item().unwrap(),
            &x0,
            1e-6,
        );
        for (g, w) in got.data().iter().zip(&num) {
            assert!((g - w).abs() < 1e-5 * (1.0 + w.abs()));
        }
    }

    #[test]
    fn broadcast_gradients_reduce_correctly() {
        let g = Graph::new();
        let a = g.leaf(&t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]));
        let b = g.leaf(&t(&[10.0, 20.0, 30.0], &[3]));
        a.mul(&b).unwrap().sum_all().backward().unwrap();
        // d/da = b broadcast; d/db = column sums of a.
        assert_eq!(a.grad().unwrap().data(), &[10.0, 20.0, 30.0, 10.0, 20.0, 30.0]);
        assert_eq!(b.grad().unwrap().data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let g = Graph::new();
        let x = g.leaf(&t(&[2.0], &[]));
        let y = x.mul(&x).unwrap(); // dy/dx = 4
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().item().unwrap(), 4.0);
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().item().unwrap(), 8.0);
        g.zero_grads();
        assert!(x.grad().is_none());
    }

    #[test]
    fn duplicated_operand_gets_both_contributions() {
        let g = Graph::new();
        let x = g.leaf(&t(&[3.0], &[]));
        // x*x: gradient 2x = 6.
        x.mul(&x).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let g = Graph::new();
        let x = g.leaf(&t(&[1.0, 2.0], &[2]));
        let y = x.neg();
        assert!(y.backward().is_err());
    }

    #[test]
    fn tape_audit_reports_ops() {
        let g = Graph::new();
        let x = g.leaf(&t(&[1.0, 2.0], &[2]));
        let y = x.silu().sum_all();
        let info = g.nodes_info();
        assert_eq!(info.len(), 3);
        assert_eq!(info[0].op, "leaf");
        assert_eq!(info[1].op, "silu");
        assert_eq!(info[2].op, "sum_all");
        assert_eq!(info[2].inputs, vec![1]);
        assert_eq!(y.node_id(), Some(2));
        assert_eq!(g.node_value(1).unwrap().numel(), 2);
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let g = Graph::new();
        let x = g.leaf(&t(&[2.0], &[]));
        let y = x.detach().mul(&x).unwrap(); // only one path tracked
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().item().unwrap(), 2.0);
    }
}
