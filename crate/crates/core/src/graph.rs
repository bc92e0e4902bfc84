//! Taped automatic differentiation.
//!
//! A [`Graph`] records primitive operations eagerly during a forward pass.
//! Gradients come from a reverse sweep ([`Graph::vjp_sweep`]) and directional
//! derivatives from a forward tangent sweep ([`Graph::jvp_sweep`]); both
//! replay the same recording, so one forward pass supports arbitrarily many
//! Jacobian-vector and vector-Jacobian products.
//!
//! A graph is confined to one thread per forward/backward pass; tensors
//! themselves are plain values and safe to share.

use crate::scalar::Scalar;
use crate::tensor::{concat_rows, Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite value produced by op `{op}`")]
    NonFinite { op: &'static str },
    #[error("gradient target must be scalar, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("seed shape {seed:?} does not match output shape {out:?}")]
    SeedShapeMismatch { seed: Vec<usize>, out: Vec<usize> },
    #[error("{op}: invalid configuration: {msg}")]
    BadOp { op: &'static str, msg: String },
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Padding behavior for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pad {
    /// Wrap-around indexing (periodic domain).
    Periodic,
    /// Out-of-range taps contribute zero.
    Zero,
}

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    Leaf { differentiable: bool },
    Add,
    Sub,
    Mul,
    Neg,
    Scale(S),
    AddScalar(S),
    Matmul,
    Affine,
    RowScale,
    Tanh,
    Gelu,
    Sum,
    Mean,
    SliceRows { start: usize },
    ConcatRows,
    IndexSelect { indices: Vec<usize> },
    Reshape,
    Conv1d { stride: usize, pad: Pad },
    Conv2d { stride: usize, pad: Pad },
    BiasChan,
    Upsample2d { factor: usize },
}

impl<S: Scalar> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Matmul => "matmul",
            Op::Affine => "affine",
            Op::RowScale => "row_scale",
            Op::Tanh => "tanh",
            Op::Gelu => "gelu",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatRows => "concat_rows",
            Op::IndexSelect { .. } => "index_select",
            Op::Reshape => "reshape",
            Op::Conv1d { .. } => "conv1d",
            Op::Conv2d { .. } => "conv2d",
            Op::BiasChan => "bias_chan",
            Op::Upsample2d { .. } => "upsample2d",
        }
    }
}

struct Node<S: Scalar> {
    op: Op<S>,
    inputs: Vec<Var>,
    value: Tensor<S>,
    needs_grad: bool,
}

/// Cotangents produced by a reverse sweep, indexed by [`Var`].
pub struct Adjoints<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Adjoints<S> {
    /// Cotangent accumulated at `v`; `None` means no gradient flowed there.
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads[v.0].as_ref()
    }

    /// Cotangent at `v`, or zeros of the given shape.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<S> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Tangents produced by a forward sweep, indexed by [`Var`].
pub struct Tangents<S: Scalar> {
    tans: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Tangents<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.tans[v.0].as_ref()
    }

    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<S> {
        self.tans[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Recording of one forward computation.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Differentiable input (parameter or state the caller wants gradients for).
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf {
                differentiable: true,
            },
            inputs: vec![],
            value,
            needs_grad: true,
        });
        Var(id)
    }

    /// Non-differentiable input; gradients never flow into it.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf {
                differentiable: false,
            },
            inputs: vec![],
            value,
            needs_grad: false,
        });
        Var(id)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<S>, inputs: Vec<Var>, value: Tensor<S>) -> Result<Var, GraphError> {
        if !value.all_finite() {
            return Err(GraphError::NonFinite { op: op.name() });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            inputs,
            value,
            needs_grad,
        });
        Ok(Var(id))
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let v = self.value(a).add(self.value(b))?;
        self.push(Op::Add, vec![a, b], v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(Op::Sub, vec![a, b], v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let v = self.value(a).mul(self.value(b))?;
        self.push(Op::Mul, vec![a, b], v)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, GraphError> {
        let v = self.value(a).neg();
        self.push(Op::Neg, vec![a], v)
    }

    pub fn scale(&mut self, a: Var, s: S) -> Result<Var, GraphError> {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(s), vec![a], v)
    }

    pub fn add_scalar(&mut self, a: Var, s: S) -> Result<Var, GraphError> {
        let v = self.value(a).map(|x| x + s);
        self.push(Op::AddScalar(s), vec![a], v)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, GraphError> {
        let v = self.value(a).map(|x| x.tanh());
        self.push(Op::Tanh, vec![a], v)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, GraphError> {
        let v = self.value(a).map(gelu);
        self.push(Op::Gelu, vec![a], v)
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Result<Var, GraphError> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum, vec![a], v)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, GraphError> {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(Op::Mean, vec![a], v)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Op::Matmul, vec![a, b], v)
    }

    /// `x [b, i] * w [i, o] + bias [o]`, bias broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, bias: Var) -> Result<Var, GraphError> {
        let (bn, _i) = self.value(x).dims2("affine")?;
        let (_wi, o) = self.value(w).dims2("affine")?;
        if self.value(bias).shape() != [o] {
            return Err(GraphError::BadOp {
                op: "affine",
                msg: format!(
                    "bias shape {:?} does not match output width {}",
                    self.value(bias).shape(),
                    o
                ),
            });
        }
        let mut v = self.value(x).matmul(self.value(w))?;
        {
            let bdat: Vec<S> = self.value(bias).data().to_vec();
            let vd = v.data_mut();
            for r in 0..bn {
                for c in 0..o {
                    vd[r * o + c] += bdat[c];
                }
            }
        }
        self.push(Op::Affine, vec![x, w, bias], v)
    }

    /// `y[r, c] = x[r, c] * s[r]` with `x [b, i]` and `s [b]`.
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var, GraphError> {
        let (b, i) = self.value(x).dims2("row_scale")?;
        if self.value(s).shape() != [b] {
            return Err(GraphError::BadOp {
                op: "row_scale",
                msg: format!(
                    "scale shape {:?} does not match row count {}",
                    self.value(s).shape(),
                    b
                ),
            });
        }
        let sd: Vec<S> = self.value(s).data().to_vec();
        let mut v = self.value(x).clone();
        {
            let vd = v.data_mut();
            for r in 0..b {
                for c in 0..i {
                    vd[r * i + c] *= sd[r];
                }
            }
        }
        self.push(Op::RowScale, vec![x, s], v)
    }

    // ---- shape ----

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, GraphError> {
        let v = self.value(a).clone().reshaped(shape)?;
        self.push(Op::Reshape, vec![a], v)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, GraphError> {
        let v = self.value(a).slice_rows(start, len)?;
        self.push(Op::SliceRows { start }, vec![a], v)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, GraphError> {
        let tensors: Vec<&Tensor<S>> = parts.iter().map(|v| self.value(*v)).collect();
        let v = concat_rows(&tensors)?;
        self.push(Op::ConcatRows, parts.to_vec(), v)
    }

    /// Gather `indices` from the flattened input into a vector `[indices.len()]`.
    pub fn index_select(&mut self, a: Var, indices: Vec<usize>) -> Result<Var, GraphError> {
        let src = self.value(a);
        let n = src.numel();
        for &ix in &indices {
            if ix >= n {
                return Err(GraphError::Tensor(TensorError::IndexOutOfBounds {
                    op: "index_select",
                    index: ix,
                    len: n,
                }));
            }
        }
        let data: Vec<S> = indices.iter().map(|&ix| src.data()[ix]).collect();
        let v = Tensor::from_vec(vec![indices.len()], data)?;
        self.push(Op::IndexSelect { indices }, vec![a], v)
    }

    // ---- convolutions ----

    /// `x [b, c, l] * k [o, c, kl] -> [b, o, l / stride]`, kl odd.
    pub fn conv1d(&mut self, x: Var, k: Var, stride: usize, pad: Pad) -> Result<Var, GraphError> {
        let xs = dims_n::<3, S>(self.value(x), "conv1d")?;
        let ks = dims_n::<3, S>(self.value(k), "conv1d")?;
        check_conv(&[xs[2]], &[ks[2]], xs[1], ks[1], stride, "conv1d")?;
        let v = conv1d_fwd(self.value(x), xs, self.value(k), ks, stride, pad);
        self.push(Op::Conv1d { stride, pad }, vec![x, k], v)
    }

    /// `x [b, c, h, w] * k [o, c, kh, kw] -> [b, o, h / stride, w / stride]`, kh and kw odd.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: Pad) -> Result<Var, GraphError> {
        let xs = dims_n::<4, S>(self.value(x), "conv2d")?;
        let ks = dims_n::<4, S>(self.value(k), "conv2d")?;
        check_conv(&[xs[2], xs[3]], &[ks[2], ks[3]], xs[1], ks[1], stride, "conv2d")?;
        let v = conv2d_fwd(self.value(x), xs, self.value(k), ks, stride, pad);
        self.push(Op::Conv2d { stride, pad }, vec![x, k], v)
    }

    /// Add a per-channel bias `[c]` to `x [b, c, ...]`.
    pub fn bias_chan(&mut self, x: Var, bias: Var) -> Result<Var, GraphError> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() < 2 || self.value(bias).shape() != [xs[1]] {
            return Err(GraphError::BadOp {
                op: "bias_chan",
                msg: format!(
                    "bias shape {:?} incompatible with input {:?}",
                    self.value(bias).shape(),
                    xs
                ),
            });
        }
        let spatial: usize = xs[2..].iter().product();
        let bdat: Vec<S> = self.value(bias).data().to_vec();
        let mut v = self.value(x).clone();
        {
            let vd = v.data_mut();
            for b in 0..xs[0] {
                for c in 0..xs[1] {
                    let base = (b * xs[1] + c) * spatial;
                    for p in 0..spatial {
                        vd[base + p] += bdat[c];
                    }
                }
            }
        }
        self.push(Op::BiasChan, vec![x, bias], v)
    }

    /// Nearest-neighbor upsampling of `x [b, c, h, w]` by an integer factor.
    pub fn upsample2d(&mut self, x: Var, factor: usize) -> Result<Var, GraphError> {
        let xs = dims_n::<4, S>(self.value(x), "upsample2d")?;
        if factor == 0 {
            return Err(GraphError::BadOp {
                op: "upsample2d",
                msg: "factor must be >= 1".into(),
            });
        }
        let v = upsample2d_fwd(self.value(x), xs, factor);
        self.push(Op::Upsample2d { factor }, vec![x], v)
    }

    // ---- sweeps ----

    /// Reverse sweep from a scalar output seeded with 1.
    pub fn backward(&self, out: Var) -> Result<Adjoints<S>, GraphError> {
        let shape = self.value(out).shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(GraphError::NonScalarOutput {
                shape: shape.to_vec(),
            });
        }
        let seed = Tensor::full(shape, S::one());
        self.vjp_sweep(out, &seed)
    }

    /// Reverse sweep: propagate the cotangent `seed` at `out` to every node.
    pub fn vjp_sweep(&self, out: Var, seed: &Tensor<S>) -> Result<Adjoints<S>, GraphError> {
        if seed.shape() != self.value(out).shape() {
            return Err(GraphError::SeedShapeMismatch {
                seed: seed.shape().to_vec(),
                out: self.value(out).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed.clone());
        // Reverse topological order is just reverse recording order; each node
        // is visited exactly once.
        for id in (0..=out.0).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let cot = grads[id].take().unwrap();
            self.backprop_node(id, &cot, &mut grads)?;
            grads[id] = Some(cot);
        }
        Ok(Adjoints { grads })
    }

    /// Forward tangent sweep: given tangents at some leaves, compute the
    /// directional derivative carried by every downstream node.
    pub fn jvp_sweep(&self, seeds: &[(Var, Tensor<S>)]) -> Result<Tangents<S>, GraphError> {
        let mut tans: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        for (v, t) in seeds {
            if t.shape() != self.value(*v).shape() {
                return Err(GraphError::SeedShapeMismatch {
                    seed: t.shape().to_vec(),
                    out: self.value(*v).shape().to_vec(),
                });
            }
            tans[v.0] = Some(t.clone());
        }
        for id in 0..self.nodes.len() {
            if matches!(self.nodes[id].op, Op::Leaf { .. }) {
                continue;
            }
            if let Some(t) = self.tangent_of(id, &tans)? {
                tans[id] = Some(t);
            }
        }
        Ok(Tangents { tans })
    }

    fn accumulate(
        grads: &mut [Option<Tensor<S>>],
        v: Var,
        delta: Tensor<S>,
    ) -> Result<(), GraphError> {
        match &mut grads[v.0] {
            Some(g) => *g = g.add(&delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        id: usize,
        cot: &Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
    ) -> Result<(), GraphError> {
        let node = &self.nodes[id];
        let ins = &node.inputs;
        let needs = |v: &Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add => {
                if needs(&ins[0]) {
                    Self::accumulate(grads, ins[0], cot.clone())?;
                }
                if needs(&ins[1]) {
                    Self::accumulate(grads, ins[1], cot.clone())?;
                }
            }
            Op::Sub => {
                if needs(&ins[0]) {
                    Self::accumulate(grads, ins[0], cot.clone())?;
                }
                if needs(&ins[1]) {
                    Self::accumulate(grads, ins[1], cot.neg())?;
                }
            }
            Op::Mul => {
                if needs(&ins[0]) {
                    Self::accumulate(grads, ins[0], cot.mul(self.value(ins[1]))?)?;
                }
                if needs(&ins[1]) {
                    Self::accumulate(grads, ins[1], cot.mul(self.value(ins[0]))?)?;
                }
            }
            Op::Neg => {
                if needs(&ins[0]) {
                    Self::accumulate(grads, ins[0], cot.neg())?;
                }
            }
            Op::Scale(s) => {
                if needs(&ins[0]) {
                    Self::accumulate(grads, ins[0], cot.scale(*s))?;
                }
            }
            Op::AddScalar(_) => {
                if needs(&ins[0]) {
                    Self::accumulate(grads, ins[0], cot.clone())?;
                }
            }
            Op::Tanh => {
                if needs(&ins[0]) {
                    let y = &node.value;
                    let d = cot.zip_map(y, "tanh_vjp", |c, yv| c * (S::one() - yv * yv))?;
                    Self::accumulate(grads, ins[0], d)?;
                }
            }
            Op::Gelu => {
                if needs(&ins[0]) {
                    let x = self.value(ins[0]);
                    let d = cot.zip_map(x, "gelu_vjp", |c, xv| c * gelu_deriv(xv))?;
                    Self::accumulate(grads, ins[0], d)?;
                }
            }
            Op::Sum => {
                if needs(&ins[0]) {
                    let c = cot.data()[0];
                    Self::accumulate(grads, ins[0], Tensor::full(self.value(ins[0]).shape(), c))?;
                }
            }
            Op::Mean => {
                if needs(&ins[0]) {
                    let n = self.value(ins[0]).numel();
                    let c = cot.data()[0] / S::of(n as f64);
                    Self::accumulate(grads, ins[0], Tensor::full(self.value(ins[0]).shape(), c))?;
                }
            }
            Op::Matmul => {
                let a = self.value(ins[0]);
                let b = self.value(ins[1]);
                if needs(&ins[0]) {
                    Self::accumulate(grads, ins[0], cot.matmul(&b.transpose2()?)?)?;
                }
                if needs(&ins[1]) {
                    Self::accumulate(grads, ins[1], a.transpose2()?.matmul(cot)?)?;
                }
            }
            Op::Affine => {
                let x = self.value(ins[0]);
                let w = self.value(ins[1]);
                let (bn, o) = node.value.dims2("affine_vjp")?;
                if needs(&ins[0]) {
                    Self::accumulate(grads, ins[0], cot.matmul(&w.transpose2()?)?)?;
                }
                if needs(&ins[1]) {
                    Self::accumulate(grads, ins[1], x.transpose2()?.matmul(cot)?)?;
                }
                if needs(&ins[2]) {
                    let mut db = vec![S::zero(); o];
                    for r in 0..bn {
                        for c in 0..o {
                            db[c] += cot.data()[r * o + c];
                        }
                    }
                    Self::accumulate(grads, ins[2], Tensor::from_vec(vec![o], db)?)?;
                }
            }
            Op::RowScale => {
                let x = self.value(ins[0]);
                let s = self.value(ins[1]);
                let (b, i) = x.dims2("row_scale_vjp")?;
                if needs(&ins[0]) {
                    let mut dx = cot.clone();
                    let dd = dx.data_mut();
                    for r in 0..b {
                        for c in 0..i {
                            dd[r * i + c] *= s.data()[r];
                        }
                    }
                    Self::accumulate(grads, ins[0], dx)?;
                }
                if needs(&ins[1]) {
                    let mut ds = vec![S::zero(); b];
                    for r in 0..b {
                        for c in 0..i {
                            ds[r] += cot.data()[r * i + c] * x.data()[r * i + c];
                        }
                    }
                    Self::accumulate(grads, ins[1], Tensor::from_vec(vec![b], ds)?)?;
                }
            }
            Op::Reshape => {
                if needs(&ins[0]) {
                    let d = cot
                        .clone()
                        .reshaped(self.value(ins[0]).shape().to_vec())?;
                    Self::accumulate(grads, ins[0], d)?;
                }
            }
            Op::SliceRows { start } => {
                if needs(&ins[0]) {
                    let src_shape = self.value(ins[0]).shape();
                    let row: usize = src_shape[1..].iter().product();
                    let mut d = Tensor::zeros(src_shape);
                    let off = start * row;
                    d.data_mut()[off..off + cot.numel()].copy_from_slice(cot.data());
                    Self::accumulate(grads, ins[0], d)?;
                }
            }
            Op::ConcatRows => {
                let mut off = 0;
                for v in ins {
                    let n = self.value(*v).numel();
                    if needs(v) {
                        let d = Tensor::from_vec(
                            self.value(*v).shape().to_vec(),
                            cot.data()[off..off + n].to_vec(),
                        )?;
                        Self::accumulate(grads, *v, d)?;
                    }
                    off += n;
                }
            }
            Op::IndexSelect { indices } => {
                if needs(&ins[0]) {
                    let mut d = Tensor::zeros(self.value(ins[0]).shape());
                    let dd = d.data_mut();
                    for (j, &ix) in indices.iter().enumerate() {
                        dd[ix] += cot.data()[j];
                    }
                    Self::accumulate(grads, ins[0], d)?;
                }
            }
            Op::Conv1d { stride, pad } => {
                let xs = dims_n::<3, S>(self.value(ins[0]), "conv1d")?;
                let ks = dims_n::<3, S>(self.value(ins[1]), "conv1d")?;
                if needs(&ins[0]) {
                    let d = conv1d_vjp_input(cot, xs, self.value(ins[1]), ks, *stride, *pad);
                    Self::accumulate(grads, ins[0], d)?;
                }
                if needs(&ins[1]) {
                    let d = conv1d_vjp_kernel(cot, self.value(ins[0]), xs, ks, *stride, *pad);
                    Self::accumulate(grads, ins[1], d)?;
                }
            }
            Op::Conv2d { stride, pad } => {
                let xs = dims_n::<4, S>(self.value(ins[0]), "conv2d")?;
                let ks = dims_n::<4, S>(self.value(ins[1]), "conv2d")?;
                if needs(&ins[0]) {
                    let d = conv2d_vjp_input(cot, xs, self.value(ins[1]), ks, *stride, *pad);
                    Self::accumulate(grads, ins[0], d)?;
                }
                if needs(&ins[1]) {
                    let d = conv2d_vjp_kernel(cot, self.value(ins[0]), xs, ks, *stride, *pad);
                    Self::accumulate(grads, ins[1], d)?;
                }
            }
            Op::BiasChan => {
                let xs = self.value(ins[0]).shape().to_vec();
                let spatial: usize = xs[2..].iter().product();
                if needs(&ins[0]) {
                    Self::accumulate(grads, ins[0], cot.clone())?;
                }
                if needs(&ins[1]) {
                    let mut db = vec![S::zero(); xs[1]];
                    for b in 0..xs[0] {
                        for c in 0..xs[1] {
                            let base = (b * xs[1] + c) * spatial;
                            for p in 0..spatial {
                                db[c] += cot.data()[base + p];
                            }
                        }
                    }
                    Self::accumulate(grads, ins[1], Tensor::from_vec(vec![xs[1]], db)?)?;
                }
            }
            Op::Upsample2d { factor } => {
                if needs(&ins[0]) {
                    let xs = dims_n::<4, S>(self.value(ins[0]), "upsample2d")?;
                    let d = upsample2d_vjp(cot, xs, *factor);
                    Self::accumulate(grads, ins[0], d)?;
                }
            }
        }
        Ok(())
    }

    fn tangent_of(
        &self,
        id: usize,
        tans: &[Option<Tensor<S>>],
    ) -> Result<Option<Tensor<S>>, GraphError> {
        let node = &self.nodes[id];
        let ins = &node.inputs;
        let tan = |v: &Var| tans[v.0].as_ref();
        let any = ins.iter().any(|v| tan(v).is_some());
        if !any {
            return Ok(None);
        }
        let zeros_like = |v: &Var| Tensor::zeros(self.value(*v).shape());
        let t_or_zero =
            |v: &Var| tan(v).cloned().unwrap_or_else(|| zeros_like(v));
        let out = match &node.op {
            Op::Leaf { .. } => return Ok(None),
            Op::Add => t_or_zero(&ins[0]).add(&t_or_zero(&ins[1]))?,
            Op::Sub => t_or_zero(&ins[0]).sub(&t_or_zero(&ins[1]))?,
            Op::Mul => {
                let a = self.value(ins[0]);
                let b = self.value(ins[1]);
                let mut acc = Tensor::zeros(node.value.shape());
                if let Some(da) = tan(&ins[0]) {
                    acc = acc.add(&da.mul(b)?)?;
                }
                if let Some(db) = tan(&ins[1]) {
                    acc = acc.add(&a.mul(db)?)?;
                }
                acc
            }
            Op::Neg => t_or_zero(&ins[0]).neg(),
            Op::Scale(s) => t_or_zero(&ins[0]).scale(*s),
            Op::AddScalar(_) => t_or_zero(&ins[0]),
            Op::Tanh => {
                let y = &node.value;
                t_or_zero(&ins[0]).zip_map(y, "tanh_jvp", |t, yv| t * (S::one() - yv * yv))?
            }
            Op::Gelu => {
                let x = self.value(ins[0]);
                t_or_zero(&ins[0]).zip_map(x, "gelu_jvp", |t, xv| t * gelu_deriv(xv))?
            }
            Op::Sum => Tensor::scalar(t_or_zero(&ins[0]).sum()),
            Op::Mean => Tensor::scalar(t_or_zero(&ins[0]).mean()),
            Op::Matmul => {
                let a = self.value(ins[0]);
                let b = self.value(ins[1]);
                let mut acc = Tensor::zeros(node.value.shape());
                if let Some(da) = tan(&ins[0]) {
                    acc = acc.add(&da.matmul(b)?)?;
                }
                if let Some(db) = tan(&ins[1]) {
                    acc = acc.add(&a.matmul(db)?)?;
                }
                acc
            }
            Op::Affine => {
                let x = self.value(ins[0]);
                let w = self.value(ins[1]);
                let (bn, o) = node.value.dims2("affine_jvp")?;
                let mut acc = Tensor::zeros(node.value.shape());
                if let Some(dx) = tan(&ins[0]) {
                    acc = acc.add(&dx.matmul(w)?)?;
                }
                if let Some(dw) = tan(&ins[1]) {
                    acc = acc.add(&x.matmul(dw)?)?;
                }
                if let Some(db) = tan(&ins[2]) {
                    let ad = acc.data_mut();
                    for r in 0..bn {
                        for c in 0..o {
                            ad[r * o + c] += db.data()[c];
                        }
                    }
                }
                acc
            }
            Op::RowScale => {
                let x = self.value(ins[0]);
                let s = self.value(ins[1]);
                let (b, i) = x.dims2("row_scale_jvp")?;
                let mut acc = Tensor::zeros(node.value.shape());
                let ad = acc.data_mut();
                if let Some(dx) = tan(&ins[0]) {
                    for r in 0..b {
                        for c in 0..i {
                            ad[r * i + c] += dx.data()[r * i + c] * s.data()[r];
                        }
                    }
                }
                if let Some(ds) = tan(&ins[1]) {
                    for r in 0..b {
                        for c in 0..i {
                            ad[r * i + c] += x.data()[r * i + c] * ds.data()[r];
                        }
                    }
                }
                acc
            }
            Op::Reshape => t_or_zero(&ins[0]).reshaped(node.value.shape().to_vec())?,
            Op::SliceRows { start } => {
                let len = node.value.shape()[0];
                t_or_zero(&ins[0]).slice_rows(*start, len)?
            }
            Op::ConcatRows => {
                let parts: Vec<Tensor<S>> = ins.iter().map(t_or_zero).collect();
                let refs: Vec<&Tensor<S>> = parts.iter().collect();
                concat_rows(&refs)?
            }
            Op::IndexSelect { indices } => {
                let t = t_or_zero(&ins[0]);
                let data: Vec<S> = indices.iter().map(|&ix| t.data()[ix]).collect();
                Tensor::from_vec(vec![indices.len()], data)?
            }
            Op::Conv1d { stride, pad } => {
                let xs = dims_n::<3, S>(self.value(ins[0]), "conv1d")?;
                let ks = dims_n::<3, S>(self.value(ins[1]), "conv1d")?;
                let mut acc = Tensor::zeros(node.value.shape());
                if let Some(dx) = tan(&ins[0]) {
                    acc = acc.add(&conv1d_fwd(dx, xs, self.value(ins[1]), ks, *stride, *pad))?;
                }
                if let Some(dk) = tan(&ins[1]) {
                    acc = acc.add(&conv1d_fwd(self.value(ins[0]), xs, dk, ks, *stride, *pad))?;
                }
                acc
            }
            Op::Conv2d { stride, pad } => {
                let xs = dims_n::<4, S>(self.value(ins[0]), "conv2d")?;
                let ks = dims_n::<4, S>(self.value(ins[1]), "conv2d")?;
                let mut acc = Tensor::zeros(node.value.shape());
                if let Some(dx) = tan(&ins[0]) {
                    acc = acc.add(&conv2d_fwd(dx, xs, self.value(ins[1]), ks, *stride, *pad))?;
                }
                if let Some(dk) = tan(&ins[1]) {
                    acc = acc.add(&conv2d_fwd(self.value(ins[0]), xs, dk, ks, *stride, *pad))?;
                }
                acc
            }
            Op::BiasChan => {
                let xs = self.value(ins[0]).shape().to_vec();
                let spatial: usize = xs[2..].iter().product();
                let mut acc = t_or_zero(&ins[0]);
                if let Some(db) = tan(&ins[1]) {
                    let ad = acc.data_mut();
                    for b in 0..xs[0] {
                        for c in 0..xs[1] {
                            let base = (b * xs[1] + c) * spatial;
                            for p in 0..spatial {
                                ad[base + p] += db.data()[c];
                            }
                        }
                    }
                }
                acc
            }
            Op::Upsample2d { factor } => {
                let xs = dims_n::<4, S>(self.value(ins[0]), "upsample2d")?;
                upsample2d_fwd(&t_or_zero(&ins[0]), xs, *factor)
            }
        };
        Ok(Some(out))
    }
}

// ---- convenience wrappers ----

/// Gradient of a scalar-valued function of `params`.
///
/// Returns the value of `f` and one gradient tensor per parameter (zeros for
/// parameters the output does not depend on).
pub fn grad<S: Scalar>(
    params: &[Tensor<S>],
    f: impl FnOnce(&mut Graph<S>, &[Var]) -> Result<Var, GraphError>,
) -> Result<(S, Vec<Tensor<S>>), GraphError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let out_shape = g.value(out).shape();
    if out_shape.iter().product::<usize>() != 1 {
        return Err(GraphError::NonScalarOutput {
            shape: out_shape.to_vec(),
        });
    }
    let val = g.value(out).data()[0];
    let adj = g.backward(out)?;
    let grads = vars
        .iter()
        .zip(params)
        .map(|(v, p)| adj.get_or_zeros(*v, p.shape()))
        .collect();
    Ok((val, grads))
}

/// Jacobian-vector product `J_f(x) * v` via a forward tangent sweep.
pub fn jvp<S: Scalar>(
    x: &Tensor<S>,
    v: &Tensor<S>,
    f: impl FnOnce(&mut Graph<S>, Var) -> Result<Var, GraphError>,
) -> Result<Tensor<S>, GraphError> {
    if v.shape() != x.shape() {
        return Err(GraphError::SeedShapeMismatch {
            seed: v.shape().to_vec(),
            out: x.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let out = f(&mut g, xv)?;
    let tans = g.jvp_sweep(&[(xv, v.clone())])?;
    Ok(tans.get_or_zeros(out, g.value(out).shape()))
}

/// Vector-Jacobian product `J_f(x)^T * u` via a reverse sweep.
pub fn vjp<S: Scalar>(
    x: &Tensor<S>,
    u: &Tensor<S>,
    f: impl FnOnce(&mut Graph<S>, Var) -> Result<Var, GraphError>,
) -> Result<Tensor<S>, GraphError> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let out = f(&mut g, xv)?;
    if u.shape() != g.value(out).shape() {
        return Err(GraphError::SeedShapeMismatch {
            seed: u.shape().to_vec(),
            out: g.value(out).shape().to_vec(),
        });
    }
    let adj = g.vjp_sweep(out, u)?;
    Ok(adj.get_or_zeros(xv, x.shape()))
}

// ---- scalar nonlinearities ----

fn gelu<S: Scalar>(x: S) -> S {
    // tanh approximation
    let c = S::of(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = S::of(0.044_715);
    let half = S::of(0.5);
    half * x * (S::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_deriv<S: Scalar>(x: S) -> S {
    let c = S::of(0.797_884_560_802_865_4);
    let a = S::of(0.044_715);
    let half = S::of(0.5);
    let three = S::of(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (S::one() + three * a * x * x);
    half * (S::one() + t) + half * x * (S::one() - t * t) * du
}

// ---- conv helpers ----

fn dims_n<const N: usize, S: Scalar>(
    t: &Tensor<S>,
    op: &'static str,
) -> Result<[usize; N], GraphError> {
    if t.shape().len() != N {
        return Err(GraphError::Tensor(TensorError::RankMismatch {
            op,
            expected: N,
            shape: t.shape().to_vec(),
        }));
    }
    let mut out = [0usize; N];
    out.copy_from_slice(t.shape());
    Ok(out)
}

fn check_conv(
    spatial: &[usize],
    kernel: &[usize],
    in_ch: usize,
    k_in_ch: usize,
    stride: usize,
    op: &'static str,
) -> Result<(), GraphError> {
    if in_ch != k_in_ch {
        return Err(GraphError::BadOp {
            op,
            msg: format!("input channels {in_ch} != kernel channels {k_in_ch}"),
        });
    }
    if stride == 0 {
        return Err(GraphError::BadOp {
            op,
            msg: "stride must be >= 1".into(),
        });
    }
    for (&n, &k) in spatial.iter().zip(kernel) {
        if k % 2 == 0 {
            return Err(GraphError::BadOp {
                op,
                msg: format!("kernel size {k} must be odd"),
            });
        }
        if n % stride != 0 {
            return Err(GraphError::BadOp {
                op,
                msg: format!("spatial size {n} not divisible by stride {stride}"),
            });
        }
    }
    Ok(())
}

fn tap(i: isize, n: usize, pad: Pad) -> Option<usize> {
    match pad {
        Pad::Periodic => Some(i.rem_euclid(n as isize) as usize),
        Pad::Zero => {
            if i < 0 || i >= n as isize {
                None
            } else {
                Some(i as usize)
            }
        }
    }
}

fn conv1d_fwd<S: Scalar>(
    x: &Tensor<S>,
    [bn, cin, l]: [usize; 3],
    k: &Tensor<S>,
    [cout, _, kl]: [usize; 3],
    stride: usize,
    pad: Pad,
) -> Tensor<S> {
    let lo = l / stride;
    let half = (kl / 2) as isize;
    let xd = x.data();
    let kd = k.data();
    let mut out = vec![S::zero(); bn * cout * lo];
    for b in 0..bn {
        for o in 0..cout {
            let obase = (b * cout + o) * lo;
            for i in 0..lo {
                let mut acc = S::zero();
                for c in 0..cin {
                    let xbase = (b * cin + c) * l;
                    let kbase = (o * cin + c) * kl;
                    for p in 0..kl {
                        if let Some(ix) = tap((i * stride) as isize + p as isize - half, l, pad) {
                            acc += xd[xbase + ix] * kd[kbase + p];
                        }
                    }
                }
                out[obase + i] = acc;
            }
        }
    }
    Tensor::from_vec(vec![bn, cout, lo], out).expect("conv1d shape")
}

fn conv1d_vjp_input<S: Scalar>(
    cot: &Tensor<S>,
    [bn, cin, l]: [usize; 3],
    k: &Tensor<S>,
    [cout, _, kl]: [usize; 3],
    stride: usize,
    pad: Pad,
) -> Tensor<S> {
    let lo = l / stride;
    let half = (kl / 2) as isize;
    let cd = cot.data();
    let kd = k.data();
    let mut dx = vec![S::zero(); bn * cin * l];
    for b in 0..bn {
        for o in 0..cout {
            let obase = (b * cout + o) * lo;
            for i in 0..lo {
                let g = cd[obase + i];
                for c in 0..cin {
                    let xbase = (b * cin + c) * l;
                    let kbase = (o * cin + c) * kl;
                    for p in 0..kl {
                        if let Some(ix) = tap((i * stride) as isize + p as isize - half, l, pad) {
                            dx[xbase + ix] += g * kd[kbase + p];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![bn, cin, l], dx).expect("conv1d vjp shape")
}

fn conv1d_vjp_kernel<S: Scalar>(
    cot: &Tensor<S>,
    x: &Tensor<S>,
    [bn, cin, l]: [usize; 3],
    [cout, _, kl]: [usize; 3],
    stride: usize,
    pad: Pad,
) -> Tensor<S> {
    let lo = l / stride;
    let half = (kl / 2) as isize;
    let cd = cot.data();
    let xd = x.data();
    let mut dk = vec![S::zero(); cout * cin * kl];
    for b in 0..bn {
        for o in 0..cout {
            let obase = (b * cout + o) * lo;
            for i in 0..lo {
                let g = cd[obase + i];
                for c in 0..cin {
                    let xbase = (b * cin + c) * l;
                    let kbase = (o * cin + c) * kl;
                    for p in 0..kl {
                        if let Some(ix) = tap((i * stride) as isize + p as isize - half, l, pad) {
                            dk[kbase + p] += g * xd[xbase + ix];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![cout, cin, kl], dk).expect("conv1d vjp shape")
}

fn conv2d_fwd<S: Scalar>(
    x: &Tensor<S>,
    [bn, cin, h, w]: [usize; 4],
    k: &Tensor<S>,
    [cout, _, kh, kw]: [usize; 4],
    stride: usize,
    pad: Pad,
) -> Tensor<S> {
    let (ho, wo) = (h / stride, w / stride);
    let (hh, hw) = ((kh / 2) as isize, (kw / 2) as isize);
    let xd = x.data();
    let kd = k.data();
    let mut out = vec![S::zero(); bn * cout * ho * wo];

    // Independent output planes; fixed inner accumulation order keeps the
    // result identical whether or not this fans out over threads.
    let plane = |b: usize, o: usize, dst: &mut [S]| {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = S::zero();
                for c in 0..cin {
                    let xbase = (b * cin + c) * h * w;
                    let kbase = (o * cin + c) * kh * kw;
                    for p in 0..kh {
                        let yy = tap((i * stride) as isize + p as isize - hh, h, pad);
                        if let Some(y) = yy {
                            for q in 0..kw {
                                if let Some(xcol) =
                                    tap((j * stride) as isize + q as isize - hw, w, pad)
                                {
                                    acc += xd[xbase + y * w + xcol] * kd[kbase + p * kw + q];
                                }
                            }
                        }
                    }
                }
                dst[i * wo + j] = acc;
            }
        }
    };

    if bn * cout > 1 && bn * cout * ho * wo * cin * kh * kw >= 1 << 16 {
        use rayon::prelude::*;
        out.par_chunks_mut(ho * wo).enumerate().for_each(|(ix, dst)| {
            plane(ix / cout, ix % cout, dst);
        });
    } else {
        for b in 0..bn {
            for o in 0..cout {
                let base = (b * cout + o) * ho * wo;
                plane(b, o, &mut out[base..base + ho * wo]);
            }
        }
    }
    Tensor::from_vec(vec![bn, cout, ho, wo], out).expect("conv2d shape")
}

fn conv2d_vjp_input<S: Scalar>(
    cot: &Tensor<S>,
    [bn, cin, h, w]: [usize; 4],
    k: &Tensor<S>,
    [cout, _, kh, kw]: [usize; 4],
    stride: usize,
    pad: Pad,
) -> Tensor<S> {
    let (ho, wo) = (h / stride, w / stride);
    let (hh, hw) = ((kh / 2) as isize, (kw / 2) as isize);
    let cd = cot.data();
    let kd = k.data();
    let mut dx = vec![S::zero(); bn * cin * h * w];
    for b in 0..bn {
        for o in 0..cout {
            let obase = (b * cout + o) * ho * wo;
            for i in 0..ho {
                for j in 0..wo {
                    let g = cd[obase + i * wo + j];
                    for c in 0..cin {
                        let xbase = (b * cin + c) * h * w;
                        let kbase = (o * cin + c) * kh * kw;
                        for p in 0..kh {
                            if let Some(y) = tap((i * stride) as isize + p as isize - hh, h, pad) {
                                for q in 0..kw {
                                    if let Some(xc) =
                                        tap((j * stride) as isize + q as isize - hw, w, pad)
                                    {
                                        dx[xbase + y * w + xc] += g * kd[kbase + p * kw + q];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![bn, cin, h, w], dx).expect("conv2d vjp shape")
}

fn conv2d_vjp_kernel<S: Scalar>(
    cot: &Tensor<S>,
    x: &Tensor<S>,
    [bn, cin, h, w]: [usize; 4],
    [cout, _, kh, kw]: [usize; 4],
    stride: usize,
    pad: Pad,
) -> Tensor<S> {
    let (ho, wo) = (h / stride, w / stride);
    let (hh, hw) = ((kh / 2) as isize, (kw / 2) as isize);
    let cd = cot.data();
    let xd = x.data();
    let mut dk = vec![S::zero(); cout * cin * kh * kw];
    for b in 0..bn {
        for o in 0..cout {
            let obase = (b * cout + o) * ho * wo;
            for i in 0..ho {
                for j in 0..wo {
                    let g = cd[obase + i * wo + j];
                    for c in 0..cin {
                        let xbase = (b * cin + c) * h * w;
                        let kbase = (o * cin + c) * kh * kw;
                        for p in 0..kh {
                            if let Some(y) = tap((i * stride) as isize + p as isize - hh, h, pad) {
                                for q in 0..kw {
                                    if let Some(xc) =
                                        tap((j * stride) as isize + q as isize - hw, w, pad)
                                    {
                                        dk[kbase + p * kw + q] += g * xd[xbase + y * w + xc];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![cout, cin, kh, kw], dk).expect("conv2d vjp shape")
}

fn upsample2d_fwd<S: Scalar>(
    x: &Tensor<S>,
    [bn, c, h, w]: [usize; 4],
    f: usize,
) -> Tensor<S> {
    let (ho, wo) = (h * f, w * f);
    let xd = x.data();
    let mut out = vec![S::zero(); bn * c * ho * wo];
    for b in 0..bn {
        for ch in 0..c {
            let xbase = (b * c + ch) * h * w;
            let obase = (b * c + ch) * ho * wo;
            for i in 0..ho {
                for j in 0..wo {
                    out[obase + i * wo + j] = xd[xbase + (i / f) * w + (j / f)];
                }
            }
        }
    }
    Tensor::from_vec(vec![bn, c, ho, wo], out).expect("upsample shape")
}

fn upsample2d_vjp<S: Scalar>(
    cot: &Tensor<S>,
    [bn, c, h, w]: [usize; 4],
    f: usize,
) -> Tensor<S> {
    let (ho, wo) = (h * f, w * f);
    let cd = cot.data();
    let mut dx = vec![S::zero(); bn * c * h * w];
    for b in 0..bn {
        for ch in 0..c {
            let xbase = (b * c + ch) * h * w;
            let obase = (b * c + ch) * ho * wo;
            for i in 0..ho {
                for j in 0..wo {
                    dx[xbase + (i / f) * w + (j / f)] += cd[obase + i * wo + j];
                }
            }
        }
    }
    Tensor::from_vec(vec![bn, c, h, w], dx).expect("upsample vjp shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        // f(x) = x^2 at x = 3 -> df/dx = 6
        let x = Tensor::scalar(3.0f64);
        let (val, grads) = grad(&[x], |g, vars| {
            let y = g.mul(vars[0], vars[0])?;
            g.sum(y)
        })
        .unwrap();
        assert_eq!(val, 9.0);
        assert_eq!(grads[0].data(), &[6.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64);
        let (_, grads) = grad(&[x], |g, vars| g.sum(vars[0])).unwrap();
        assert_eq!(grads[0].data(), &[1.0; 6]);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let x = Tensor::<f64>::ones(&[3]);
        let err = grad(&[x], |g, vars| g.neg(vars[0])).unwrap_err();
        assert!(matches!(err, GraphError::NonScalarOutput { .. }));
    }

    #[test]
    fn nan_in_forward_names_op() {
        let x = Tensor::scalar(1.0e308f64);
        let err = grad(&[x], |g, vars| {
            let y = g.mul(vars[0], vars[0])?; // overflows to inf
            g.sum(y)
        })
        .unwrap_err();
        match err {
            GraphError::NonFinite { op } => assert_eq!(op, "mul"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn jvp_of_linear_map_is_two_v() {
        let x = Tensor::<f64>::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let v = Tensor::<f64>::from_vec(vec![3], vec![1.0, 0.0, 0.0]).unwrap();
        let out = jvp(&x, &v, |g, xv| g.scale(xv, 2.0)).unwrap();
        assert_eq!(out.data(), &[2.0, 0.0, 0.0]);
    }

    #[test]
    fn grad_skips_constant_subtrees() {
        let x = Tensor::scalar(2.0f64);
        let (_, grads) = grad(&[x], |g, vars| {
            let c = g.constant(Tensor::scalar(5.0));
            let y = g.mul(vars[0], c)?;
            g.sum(y)
        })
        .unwrap();
        assert_eq!(grads[0].data(), &[5.0]);
    }
}
