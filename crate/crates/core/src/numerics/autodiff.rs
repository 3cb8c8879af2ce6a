//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value and the parents it was computed from. [`Tape::backward`] walks
//! the nodes in reverse order, so the recorded graph is acyclic by
//! construction. Trainable tensors live in a [`ParamStore`]; binding a
//! parameter with [`Tape::param`] records a leaf that remembers its
//! [`ParamId`], and [`Gradients::collect`] returns one gradient per stored
//! parameter (zeros for parameters the loss does not reach).
//!
//! Only first derivatives are supported. A tape is single-writer: build one
//! per training step.
//!
//! ```
//! use sinkgraph_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item(), 6.0);
//! ```

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, shape_err, Error, Result};
use crate::numerics::kernels::{self, ConvDims};
use crate::numerics::tensor::{matmul_nt_into, matmul_tn_into, Tensor};

/// Marks a padded slot in a [`Tape::gather`] index map.
pub const PAD: usize = usize::MAX;

/// Handle to a trainable tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named registry of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(
            self.values[id.0].shape(),
            value.shape(),
            "parameter shape change"
        );
        self.values[id.0] = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}

/// A node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    ScaleBy(Var, Var),
    ShiftBy(Var, Var),
    Log(Var),
    Exp(Var),
    Abs(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumAxis {
        x: Var,
        pre: usize,
        len: usize,
        post: usize,
    },
    SoftmaxLast(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
    },
    BoxMean {
        x: Var,
        planes: usize,
        h: usize,
        w: usize,
        win: usize,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Reshape(Var),
    Concat {
        parts: Vec<Var>,
        pre: usize,
        post: usize,
    },
    MinMaxRows {
        x: Var,
        arg: Vec<Option<(usize, usize, f64)>>,
    },
    External {
        x: Var,
        grad: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: BTreeMap<ParamId, Var>,
}

/// Gradients of a scalar with respect to the leaves of a tape.
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    bound: BTreeMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient with respect to a leaf; zeros if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.leaves.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.bound.get(&id).and_then(|v| self.leaves[v.0].as_ref())
    }

    /// One gradient per parameter of `store`, in id order, with zeros for
    /// parameters that were not bound or not reached.
    pub fn collect(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .ids()
            .map(|id| match self.param(id) {
                Some(g) => g.clone(),
                None => Tensor::zeros(store.get(id).shape()),
            })
            .collect()
    }

    /// Gradients of `ids` in the given order, zeros where unreached.
    pub fn collect_ids(&self, store: &ParamStore, ids: &[ParamId]) -> Vec<Tensor> {
        ids.iter()
            .map(|&id| match self.param(id) {
                Some(g) => g.clone(),
                None => Tensor::zeros(store.get(id).shape()),
            })
            .collect()
    }
}

fn strides_around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let pre = shape[..axis].iter().product();
    let post = shape[axis + 1..].iter().product();
    (pre, shape[axis], post)
}

fn ensure_finite(t: &Tensor, context: &'static str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context,
            iteration: 0,
        })
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor. Its gradient is available from [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Alias of [`Tape::leaf`] for values that are not differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        Ok(self.push(value, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("div", va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x / y)
            .collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        ensure_finite(&value, "div")?;
        Ok(self.push(value, Op::Div(a, b)))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// Adds a bias vector of length `n` to every row of a tensor whose last axis is `n`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let n = *vx.shape().last().unwrap();
        if vb.numel() != n {
            return Err(shape_err("add_row_bias", vx.shape(), vb.shape()));
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(vb.data()) {
                *v += b;
            }
        }
        let value = Tensor::from_parts(vx.shape().to_vec(), data);
        Ok(self.push(value, Op::AddRowBias(x, bias)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        Ok(self.push(value, Op::Scale(a, s)))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v + s);
        Ok(self.push(value, Op::Shift(a)))
    }

    /// Multiplies every element by a one-element node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.scalar_of(s, "scale_by")?;
        let value = self.value(a).scale(sv);
        Ok(self.push(value, Op::ScaleBy(a, s)))
    }

    /// Adds a one-element node to every element.
    pub fn shift_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.scalar_of(s, "shift_by")?;
        let value = self.value(a).map(|v| v + sv);
        Ok(self.push(value, Op::ShiftBy(a, s)))
    }

    fn scalar_of(&self, s: Var, op: &'static str) -> Result<f64> {
        let t = self.value(s);
        if !t.is_scalar() {
            return Err(shape_err(op, t.shape(), &[1]));
        }
        Ok(t.item())
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(libm::log);
        ensure_finite(&value, "log")?;
        Ok(self.push(value, Op::Log(a)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(libm::exp);
        ensure_finite(&value, "exp")?;
        Ok(self.push(value, Op::Exp(a)))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::abs);
        Ok(self.push(value, Op::Abs(a)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(0.0));
        Ok(self.push(value, Op::Relu(a)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        Ok(self.push(value, Op::LeakyRelu(a, slope)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        Ok(self.push(value, Op::Sigmoid(a)))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        Ok(self.push(value, Op::Clamp(a, lo, hi)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        Ok(self.push(value, Op::Sum(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).mean());
        Ok(self.push(value, Op::Mean(a)))
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(contract(format!(
                "sum_axis: axis {axis} out of range for {shape:?}"
            )));
        }
        let (pre, len, post) = strides_around(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; pre * post];
        for p in 0..pre {
            for i in 0..len {
                let row = &src[(p * len + i) * post..(p * len + i + 1) * post];
                for (o, v) in out[p * post..(p + 1) * post].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        let mut oshape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != axis)
            .map(|(_, &d)| d)
            .collect();
        if oshape.is_empty() {
            oshape.push(1);
        }
        let value = Tensor::from_parts(oshape, out);
        Ok(self.push(
            value,
            Op::SumAxis {
                x: a,
                pre,
                len,
                post,
            },
        ))
    }

    /// Max-subtracted softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let n = *v.shape().last().unwrap();
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = libm::exp(*x - m);
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        let value = Tensor::from_parts(v.shape().to_vec(), data);
        Ok(self.push(value, Op::SoftmaxLast(a)))
    }

    /// Stride-1 convolution with zero padding that preserves the spatial size.
    ///
    /// `x` is `[B, C_in, H, W]`, `w` is `[C_out, C_in, kh, kw]` with odd kernel
    /// sides and `b` (optional) is `[C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (&[batch, c_in, height, width], &[c_out, wc_in, kh, kw]) =
            (xs.as_slice(), ws.as_slice())
        else {
            return Err(shape_err("conv2d", &xs, &ws));
        };
        if wc_in != c_in || kh % 2 == 0 || kw % 2 == 0 {
            return Err(shape_err("conv2d", &xs, &ws));
        }
        if let Some(b) = b {
            if self.value(b).numel() != c_out {
                return Err(shape_err("conv2d bias", self.shape(b), &[c_out]));
            }
        }
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            height,
            width,
            kh,
            kw,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            dims,
        );
        let value = Tensor::from_parts(vec![batch, c_out, height, width], out);
        Ok(self.push(value, Op::Conv2d { x, w, b, dims }))
    }

    /// Mean over every `win×win` window lying inside the last two axes.
    pub fn box_mean(&mut self, x: Var, win: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(contract(format!(
                "box_mean needs at least 2 axes, got {shape:?}"
            )));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if win == 0 || win > h || win > w {
            return Err(contract(format!("window {win} larger than image {h}x{w}")));
        }
        let planes = shape[..shape.len() - 2].iter().product::<usize>();
        let out = kernels::box_mean_forward(self.value(x).data(), planes, h, w, win);
        let mut oshape = shape.clone();
        let r = oshape.len();
        oshape[r - 2] = h - win + 1;
        oshape[r - 1] = w - win + 1;
        let value = Tensor::from_parts(oshape, out);
        Ok(self.push(
            value,
            Op::BoxMean {
                x,
                planes,
                h,
                w,
                win,
            },
        ))
    }

    /// `out[k] = x[index[k]]`, or zero where `index[k] == PAD`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x);
        if shape.iter().product::<usize>() != index.len() || shape.contains(&0) {
            return Err(shape_err("gather", &[index.len()], shape));
        }
        if let Some(&bad) = index.iter().find(|&&i| i != PAD && i >= src.numel()) {
            return Err(contract(format!(
                "gather index {bad} out of range for {} elements",
                src.numel()
            )));
        }
        let data = index
            .iter()
            .map(|&i| if i == PAD { 0.0 } else { src.data()[i] })
            .collect();
        let value = Tensor::from_parts(shape.to_vec(), data);
        Ok(self.push(value, Op::Gather { x, index }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| contract("concat of nothing"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(contract(format!(
                "concat: axis {axis} out of range for {first:?}"
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let same = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(shape_err("concat", &first, s));
            }
            total += s[axis];
        }
        let pre: usize = first[..axis].iter().product();
        let post: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(pre * total * post);
        for o in 0..pre {
            for &p in parts {
                let v = self.value(p);
                let chunk = v.shape()[axis] * post;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::from_parts(shape, data);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                pre,
                post,
            },
        ))
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(contract(format!(
                "slice {start}..{} on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (pre, n, post) = strides_around(&shape, axis);
        let mut index = Vec::with_capacity(pre * len * post);
        for p in 0..pre {
            for i in start..start + len {
                let base = (p * n + i) * post;
                index.extend(base..base + post);
            }
        }
        let mut oshape = shape;
        oshape[axis] = len;
        self.gather(x, index, &oshape)
    }

    /// Min-max normalises each row of a matrix into `[0, 1]`.
    ///
    /// Rows whose range is below `1e-12` map to zeros and pass no gradient.
    pub fn min_max_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = v.dims2()?;
        let mut data = vec![0.0; r * c];
        let mut arg = Vec::with_capacity(r);
        for i in 0..r {
            let row = v.row(i);
            let (mut lo, mut hi) = (0, 0);
            for (j, &val) in row.iter().enumerate() {
                if val < row[lo] {
                    lo = j;
                }
                if val > row[hi] {
                    hi = j;
                }
            }
            let range = row[hi] - row[lo];
            if range < 1e-12 {
                arg.push(None);
                continue;
            }
            for j in 0..c {
                data[i * c + j] = (row[j] - row[lo]) / range;
            }
            arg.push(Some((lo, hi, range)));
        }
        let value = Tensor::from_parts(vec![r, c], data);
        Ok(self.push(value, Op::MinMaxRows { x, arg }))
    }

    /// A scalar node whose value and gradient with respect to `x` were
    /// computed outside the tape (e.g. by a Danskin argument).
    pub fn external(&mut self, x: Var, value: f64, grad: Tensor) -> Result<Var> {
        if grad.shape() != self.shape(x) {
            return Err(shape_err("external", self.shape(x), grad.shape()));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: "external value",
                iteration: 0,
            });
        }
        Ok(self.push(Tensor::scalar(value), Op::External { x, grad }))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        let mut leaves: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf | Op::Param => leaves[i] = Some(g),
                _ => self.propagate(i, g, &mut grads),
            }
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients {
            leaves,
            shapes,
            bound: self.bound.clone(),
        })
    }

    fn propagate(&self, i: usize, g: Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param => unreachable!(),
            Op::MatMul(a, b) => {
                let (va, vb) = (val(a), val(b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let nn = vb.shape()[1];
                let mut ga = vec![0.0; m * k];
                matmul_nt_into(g.data(), vb.data(), &mut ga, m, nn, k);
                let mut gb = vec![0.0; k * nn];
                matmul_tn_into(va.data(), g.data(), &mut gb, m, k, nn);
                acc(grads, *a, Tensor::from_parts(vec![m, k], ga));
                acc(grads, *b, Tensor::from_parts(vec![k, nn], gb));
            }
            Op::Transpose(a) => acc(grads, *a, g.transpose().expect("rank 2")),
            Op::Add(a, b) => {
                acc(grads, *b, g.clone());
                acc(grads, *a, g);
            }
            Op::Sub(a, b) => {
                acc(grads, *b, g.scale(-1.0));
                acc(grads, *a, g);
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g.hadamard(val(b)).unwrap());
                acc(grads, *b, g.hadamard(val(a)).unwrap());
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(a), val(b));
                let ga = zip3(&g, vb, vb, |g, b, _| g / b);
                let gb = zip3(&g, va, vb, |g, a, b| -g * a / (b * b));
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::AddRowBias(x, bias) => {
                let nb = val(bias).numel();
                let mut gb = vec![0.0; nb];
                for row in g.data().chunks(nb) {
                    for (s, v) in gb.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                acc(
                    grads,
                    *bias,
                    Tensor::from_parts(val(bias).shape().to_vec(), gb),
                );
                acc(grads, *x, g);
            }
            Op::Scale(a, s) => acc(grads, *a, g.scale(*s)),
            Op::Shift(a) => acc(grads, *a, g),
            Op::ScaleBy(a, s) => {
                let sv = val(s).item();
                let gs: f64 = g.data().iter().zip(val(a).data()).map(|(g, x)| g * x).sum();
                acc(
                    grads,
                    *s,
                    Tensor::from_parts(val(s).shape().to_vec(), vec![gs]),
                );
                acc(grads, *a, g.scale(sv));
            }
            Op::ShiftBy(a, s) => {
                acc(
                    grads,
                    *s,
                    Tensor::from_parts(val(s).shape().to_vec(), vec![g.sum()]),
                );
                acc(grads, *a, g);
            }
            Op::Log(a) => acc(grads, *a, zip3(&g, val(a), val(a), |g, x, _| g / x)),
            Op::Exp(a) => acc(grads, *a, g.hadamard(y).unwrap()),
            Op::Abs(a) => acc(grads, *a, zip3(&g, val(a), val(a), |g, x, _| g * sign(x))),
            Op::Relu(a) => acc(
                grads,
                *a,
                zip3(&g, val(a), val(a), |g, x, _| if x > 0.0 { g } else { 0.0 }),
            ),
            Op::LeakyRelu(a, s) => acc(
                grads,
                *a,
                zip3(
                    &g,
                    val(a),
                    val(a),
                    |g, x, _| if x > 0.0 { g } else { s * g },
                ),
            ),
            Op::Sigmoid(a) => acc(grads, *a, zip3(&g, y, y, |g, s, _| g * s * (1.0 - s))),
            Op::Clamp(a, lo, hi) => acc(
                grads,
                *a,
                zip3(&g, val(a), val(a), |g, x, _| {
                    if x >= *lo && x <= *hi {
                        g
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Sum(a) => acc(grads, *a, Tensor::full(val(a).shape(), g.item())),
            Op::Mean(a) => {
                let n = val(a).numel() as f64;
                acc(grads, *a, Tensor::full(val(a).shape(), g.item() / n));
            }
            Op::SumAxis { x, pre, len, post } => {
                let mut gx = vec![0.0; pre * len * post];
                for p in 0..*pre {
                    let grow = &g.data()[p * post..(p + 1) * post];
                    for i in 0..*len {
                        gx[(p * len + i) * post..(p * len + i + 1) * post].copy_from_slice(grow);
                    }
                }
                acc(grads, *x, Tensor::from_parts(val(x).shape().to_vec(), gx));
            }
            Op::SoftmaxLast(a) => {
                let n = *y.shape().last().unwrap();
                let mut gx = vec![0.0; y.numel()];
                for ((gr, yr), out) in g
                    .data()
                    .chunks(n)
                    .zip(y.data().chunks(n))
                    .zip(gx.chunks_mut(n))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                acc(grads, *a, Tensor::from_parts(y.shape().to_vec(), gx));
            }
            Op::Conv2d { x, w, b, dims } => {
                let (vx, vw) = (val(x), val(w));
                let mut gx = vec![0.0; vx.numel()];
                let mut gw = vec![0.0; vw.numel()];
                let mut gb = b.map(|_| vec![0.0; dims.c_out]);
                kernels::conv2d_backward(
                    vx.data(),
                    vw.data(),
                    g.data(),
                    *dims,
                    &mut gx,
                    &mut gw,
                    gb.as_deref_mut(),
                );
                acc(grads, *x, Tensor::from_parts(vx.shape().to_vec(), gx));
                acc(grads, *w, Tensor::from_parts(vw.shape().to_vec(), gw));
                if let (Some(b), Some(gb)) = (b, gb) {
                    acc(grads, *b, Tensor::from_parts(val(b).shape().to_vec(), gb));
                }
            }
            Op::BoxMean {
                x,
                planes,
                h,
                w,
                win,
            } => {
                let mut gx = vec![0.0; val(x).numel()];
                kernels::box_mean_backward(g.data(), &mut gx, *planes, *h, *w, *win);
                acc(grads, *x, Tensor::from_parts(val(x).shape().to_vec(), gx));
            }
            Op::Gather { x, index } => {
                let mut gx = vec![0.0; val(x).numel()];
                for (&k, &gv) in index.iter().zip(g.data()) {
                    if k != PAD {
                        gx[k] += gv;
                    }
                }
                acc(grads, *x, Tensor::from_parts(val(x).shape().to_vec(), gx));
            }
            Op::Reshape(x) => acc(
                grads,
                *x,
                Tensor::from_parts(val(x).shape().to_vec(), g.into_data()),
            ),
            Op::Concat { parts, pre, post } => {
                let axis_total: usize = parts.iter().map(|p| val(p).numel() / (pre * post)).sum();
                let mut offset = 0;
                for p in parts {
                    let vp = val(p);
                    let len = vp.numel() / (pre * post);
                    let mut gp = Vec::with_capacity(vp.numel());
                    for o in 0..*pre {
                        let start = (o * axis_total + offset) * post;
                        gp.extend_from_slice(&g.data()[start..start + len * post]);
                    }
                    acc(grads, *p, Tensor::from_parts(vp.shape().to_vec(), gp));
                    offset += len;
                }
            }
            Op::MinMaxRows { x, arg } => {
                let c = y.shape()[1];
                let mut gx = vec![0.0; y.numel()];
                for (i, a) in arg.iter().enumerate() {
                    let Some((lo, hi, range)) = *a else { continue };
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let yr = y.row(i);
                    let s1: f64 = gr.iter().sum();
                    let s2: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    let out = &mut gx[i * c..(i + 1) * c];
                    for (o, &gv) in out.iter_mut().zip(gr) {
                        *o = gv / range;
                    }
                    out[lo] += (s2 - s1) / range;
                    out[hi] -= s2 / range;
                }
                acc(grads, *x, Tensor::from_parts(y.shape().to_vec(), gx));
            }
            Op::External { x, grad } => acc(grads, *x, grad.scale(g.item())),
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

fn zip3(g: &Tensor, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(a.data())
        .zip(b.data())
        .map(|((&g, &a), &b)| f(g, a, b))
        .collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}

/// Runs `f` on a fresh tape with `inputs` as leaves and returns the output value.
pub fn evaluate(
    inputs: &[Tensor],
    f: impl FnOnce(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_gradients, FD_STEP};
    use crate::rng;

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.square(x).unwrap();
        assert_eq!(tape.backward(y).unwrap().wrt(x).item(), 6.0);
    }

    #[test]
    fn softmax_sum_is_constant() {
        let mut r = rng::stream(3, 0);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::randn(&[1, 6], &mut r));
        let s = tape.softmax(x).unwrap();
        let total = tape.sum(s).unwrap();
        let g = tape.backward(total).unwrap().wrt(x);
        assert!(g.max_abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut r = rng::stream(4, 0);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::randn(&[5, 7], &mut r).scale(10.0));
        let s = tape.softmax(x).unwrap();
        let v = tape.value(s);
        for i in 0..5 {
            assert!((v.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(v.row(i).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_params_get_zero_gradients() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(2.0));
        let b = store.add("b", Tensor::ones(&[2, 3]));
        let mut tape = Tape::new();
        let va = tape.param(&store, a);
        let _ = tape.param(&store, b);
        let y = tape.square(va).unwrap();
        let grads = tape.backward(y).unwrap().collect(&store);
        assert_eq!(grads[0].item(), 4.0);
        assert_eq!(grads[1], Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn reused_param_accumulates() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let x1 = tape.param(&store, a);
        let x2 = tape.param(&store, a);
        assert_eq!(x1, x2);
        let y = tape.mul(x1, x2).unwrap();
        let z = tape.add(y, x1).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.param(a).unwrap().item(), 7.0);
    }

    #[test]
    fn two_layer_network_matches_finite_differences() {
        for seed in 0..5u64 {
            let mut r = rng::stream(seed, 5);
            let inputs = [
                Tensor::randn(&[4, 3], &mut r),
                Tensor::randn(&[3, 5], &mut r),
                Tensor::randn(&[5], &mut r),
                Tensor::randn(&[5, 2], &mut r),
            ];
            let rep = check_gradients(&inputs, FD_STEP, |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let h = t.add_row_bias(h, v[2])?;
                let h = t.leaky_relu(h, 0.2)?;
                let o = t.matmul(h, v[3])?;
                let o = t.square(o)?;
                t.mean(o)
            })
            .unwrap();
            assert!(rep.max_rel_err <= 1e-4, "{rep:?}");
        }
    }
}
