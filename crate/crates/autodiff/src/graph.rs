use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;
use std::fmt;
use std::ops;

use cab_core::kinematics::{cos_moment, sin_moment};

use crate::error::AdError;
use crate::params::ParameterSet;
use crate::tensor::{numel, Tensor};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    Neg,
    Scale(f64),
    AddScalar(f64),
    MinScalar(f64),
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Ln,
    Sin,
    Cos,
    Square,
    Sqrt,
    CosMoment(u32),
    SinMoment(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Unary { kind: Unary, a: usize },
    Binary { kind: Binary, a: usize, b: usize },
    MatMul { a: usize, b: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { a: usize, axis: usize, start: usize },
    Reshape { a: usize },
    Sum { a: usize },
    SumAxis { a: usize, axis: usize },
    Softmax { a: usize },
    LogSoftmax { a: usize },
    LogSumExp { a: usize },
    Conv2d { x: usize, w: usize, b: usize, stride: usize, pad: usize },
    Gather { a: usize, idx: Vec<usize> },
    Gauss2 { diff: usize, cov: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of eagerly evaluated operations.
///
/// Parameters are bound lazily from an optional [`ParameterSet`]; binding the
/// same name twice returns the same leaf, so gradients from every use of a
/// shared tensor meet in one place.
pub struct Graph<'p> {
    nodes: RefCell<Vec<Node>>,
    params: Option<&'p ParameterSet>,
    bound: RefCell<BTreeMap<String, usize>>,
    error: RefCell<Option<AdError>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    g: &'g Graph<'g>,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'g> Graph<'g> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: None,
            bound: RefCell::new(BTreeMap::new()),
            error: RefCell::new(None),
        }
    }

    pub fn with_params(params: &'g ParameterSet) -> Self {
        Self { params: Some(params), ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First error recorded while building the graph, if any.
    pub fn error(&self) -> Option<AdError> {
        self.error.borrow().clone()
    }

    fn push(&'g self, value: Tensor, op: Op, needs_grad: bool) -> Var<'g> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Var { g: self, id: nodes.len() - 1 }
    }

    fn fail(&'g self, err: AdError, shape: &[usize]) -> Var<'g> {
        let mut slot = self.error.borrow_mut();
        if slot.is_none() {
            *slot = Some(err);
        }
        drop(slot);
        self.push(Tensor::full(shape, f64::NAN), Op::Leaf, false)
    }

    fn shape_err(&'g self, op: &'static str, detail: String, shape: &[usize]) -> Var<'g> {
        self.fail(AdError::Shape { op, detail }, shape)
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// A value that never receives gradient.
    pub fn constant(&'g self, t: Tensor) -> Var<'g> {
        self.push(t, Op::Leaf, false)
    }

    pub fn scalar(&'g self, v: f64) -> Var<'g> {
        self.constant(Tensor::scalar(v))
    }

    /// A free differentiable input, not tied to a parameter set.
    pub fn leaf(&'g self, t: Tensor) -> Var<'g> {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a named tensor from the graph's parameter set.
    pub fn param(&'g self, name: &str) -> Var<'g> {
        if let Some(&id) = self.bound.borrow().get(name) {
            return Var { g: self, id };
        }
        let Some(p) = self.params.and_then(|ps| ps.get(name)) else {
            return self.fail(AdError::UnknownParam(name.to_string()), &[]);
        };
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.bound.borrow_mut().insert(name.to_string(), v.id);
        v
    }

    pub fn concat(&'g self, parts: &[Var<'g>], axis: usize) -> Var<'g> {
        let Some(first) = parts.first() else {
            return self.shape_err("concat", "no inputs".into(), &[0]);
        };
        let base = first.shape();
        if axis >= base.len() {
            return self.shape_err("concat", format!("axis {axis} out of range for {base:?}"), &base);
        }
        let mut total = 0;
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return self.shape_err("concat", format!("{s:?} vs {base:?} on axis {axis}"), &base);
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = vec![0.0; numel(&out_shape)];
        let mut offset = 0;
        let mut needs = false;
        for p in parts {
            let v = self.value(p.id);
            let len = v.shape()[axis];
            let block = len * inner;
            for o in 0..outer {
                let dst = o * total * inner + offset * inner;
                data[dst..dst + block].copy_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
            offset += len;
            needs |= self.needs(p.id);
        }
        let ids = parts.iter().map(|p| p.id).collect();
        self.push(Tensor::raw(out_shape, data), Op::Concat { parts: ids, axis }, needs)
    }

    /// Row-wise log-density of 2-D Gaussians.
    ///
    /// `diff` is `[N, 2]` (sample minus mean) and `cov` is `[N, 3]` holding
    /// `(σxx, σxy, σyy)`. Evaluated through the Cholesky factor; a
    /// non-positive-definite row poisons the graph.
    pub fn gaussian2_log_density(&'g self, diff: Var<'g>, cov: Var<'g>) -> Var<'g> {
        let (ds, cs) = (diff.shape(), cov.shape());
        if ds.len() != 2 || ds[1] != 2 || cs.len() != 2 || cs[1] != 3 || cs[0] != ds[0] {
            return self.shape_err("gaussian2_log_density", format!("diff {ds:?}, cov {cs:?}"), &[ds.first().copied().unwrap_or(0)]);
        }
        let n = ds[0];
        let mut out = vec![0.0; n];
        {
            let d = self.value(diff.id);
            let c = self.value(cov.id);
            for i in 0..n {
                let (dx, dy) = (d.data()[2 * i], d.data()[2 * i + 1]);
                let (sxx, sxy, syy) = (c.data()[3 * i], c.data()[3 * i + 1], c.data()[3 * i + 2]);
                if !(sxx > 0.0) {
                    drop((d, c));
                    return self.fail(AdError::NotPositiveDefinite { row: i }, &[n]);
                }
                let l11 = sxx.sqrt();
                let l21 = sxy / l11;
                let t = syy - l21 * l21;
                if !(t > 0.0) {
                    drop((d, c));
                    return self.fail(AdError::NotPositiveDefinite { row: i }, &[n]);
                }
                let l22 = t.sqrt();
                let z1 = dx / l11;
                let z2 = (dy - l21 * z1) / l22;
                out[i] = -LN_2PI - (l11.ln() + l22.ln()) - 0.5 * (z1 * z1 + z2 * z2);
            }
        }
        let needs = self.needs(diff.id) || self.needs(cov.id);
        self.push(Tensor::raw(vec![n], out), Op::Gauss2 { diff: diff.id, cov: cov.id }, needs)
    }

    /// Which side of its breakpoint every element of every piecewise op
    /// (`relu`, `min_scalar`) fell on. Two evaluations with equal patterns lie
    /// on the same smooth piece.
    pub fn branches(&self) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        let mut out = Vec::new();
        for n in nodes.iter() {
            if let Op::Unary { kind, a } = n.op {
                let x = nodes[a].value.data();
                match kind {
                    Unary::Relu => out.extend(x.iter().map(|&v| v > 0.0)),
                    Unary::MinScalar(c) => out.extend(x.iter().map(|&v| v < c)),
                    _ => {}
                }
            }
        }
        out
    }

    /// Value of `root`, or the first error recorded while building the graph.
    pub fn forward(&self, root: Var<'_>) -> Result<Tensor, AdError> {
        if let Some(e) = self.error() {
            return Err(e);
        }
        Ok(self.value(root.id).clone())
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients, AdError> {
        if let Some(e) = self.error() {
            return Err(e);
        }
        let nodes = self.nodes.borrow();
        let rshape = nodes[root.id].value.shape().to_vec();
        if numel(&rshape) != 1 || !rshape.iter().all(|&d| d == 1) {
            return Err(AdError::NonScalarRoot(rshape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::full(&rshape, 1.0));
        for id in (0..=root.id).rev() {
            let (lo, hi) = grads.split_at_mut(id);
            let Some(g) = hi[0].as_ref() else { continue };
            if !nodes[id].needs_grad {
                continue;
            }
            backprop(&nodes, id, g, lo);
        }
        Ok(Gradients { grads, params: self.bound.borrow().clone() })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, t: Tensor) {
    match &mut grads[id] {
        Some(g) => g.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

/// Gradients of a scalar root with respect to every node of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, usize>,
}

impl Gradients {
    /// Gradient of `v`; exactly zero when `v` is not on a differentiable path
    /// to the root.
    pub fn get(&self, v: Var<'_>) -> Tensor {
        match &self.grads[v.id] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&v.shape()),
        }
    }

    /// Whether any gradient reached `v`.
    pub fn reached(&self, v: Var<'_>) -> bool {
        self.grads[v.id].is_some()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|&id| self.grads[id].as_ref())
    }

    /// Gradients for every parameter bound in the graph; unreached ones are
    /// zero-filled.
    pub fn param_grads(&self, params: &ParameterSet) -> BTreeMap<String, Tensor> {
        params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(name, p)| {
                let g = self.param(name).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// broadcasting

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` laid against `out`, zero on broadcast dimensions.
fn bcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let r = out.len();
    let mut strides = vec![0; r];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + r - shape.len();
        strides[oi] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

fn for_each_bcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel(out);
    if n == 0 {
        return;
    }
    let r = out.len();
    let mut idx = vec![0usize; r];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..n {
        f(o, ia, ib);
        for d in (0..r).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn binary_apply(kind: Binary, x: f64, y: f64) -> f64 {
    match kind {
        Binary::Add => x + y,
        Binary::Sub => x - y,
        Binary::Mul => x * y,
        Binary::Div => x / y,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary_apply(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Neg => -x,
        Unary::Scale(c) => c * x,
        Unary::AddScalar(c) => x + c,
        Unary::MinScalar(c) => x.min(c),
        Unary::Tanh => x.tanh(),
        Unary::Sigmoid => sigmoid(x),
        Unary::Relu => x.max(0.0),
        Unary::Exp => x.exp(),
        Unary::Ln => x.ln(),
        Unary::Sin => x.sin(),
        Unary::Cos => x.cos(),
        Unary::Square => x * x,
        Unary::Sqrt => x.sqrt(),
        Unary::CosMoment(n) => cos_moment(n, x),
        Unary::SinMoment(n) => sin_moment(n, x),
    }
}

/// d(output)/d(input) given input `x` and output `y`.
fn unary_deriv(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Neg => -1.0,
        Unary::Scale(c) => c,
        Unary::AddScalar(_) => 1.0,
        Unary::MinScalar(c) => {
            if x < c {
                1.0
            } else {
                0.0
            }
        }
        Unary::Tanh => 1.0 - y * y,
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::Exp => y,
        Unary::Ln => 1.0 / x,
        Unary::Sin => x.cos(),
        Unary::Cos => -x.sin(),
        Unary::Square => 2.0 * x,
        Unary::Sqrt => 0.5 / y,
        Unary::CosMoment(n) => -sin_moment(n + 1, x),
        Unary::SinMoment(n) => cos_moment(n + 1, x),
    }
}

fn last_axis_rows(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().unwrap_or(&1);
    (numel(shape) / cols.max(1), cols)
}

fn conv_out(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (len + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

// ---------------------------------------------------------------------------
// backward

fn backprop(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let node = &nodes[id];
    let gd = g.data();
    match &node.op {
        Op::Leaf => {}
        Op::Unary { kind, a } => {
            if !nodes[*a].needs_grad {
                return;
            }
            let x = nodes[*a].value.data();
            let y = node.value.data();
            let data = gd.iter().zip(x).zip(y).map(|((g, &x), &y)| g * unary_deriv(*kind, x, y)).collect();
            accumulate(grads, *a, Tensor::raw(nodes[*a].value.shape().to_vec(), data));
        }
        Op::Binary { kind, a, b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let out = node.value.shape();
            let sa = bcast_strides(av.shape(), out);
            let sb = bcast_strides(bv.shape(), out);
            let (na, nb) = (nodes[*a].needs_grad, nodes[*b].needs_grad);
            let mut ga = vec![0.0; av.numel()];
            let mut gb = vec![0.0; bv.numel()];
            let (x, y) = (av.data(), bv.data());
            for_each_bcast(out, &sa, &sb, |o, ia, ib| {
                let go = gd[o];
                let (dx, dy) = match kind {
                    Binary::Add => (go, go),
                    Binary::Sub => (go, -go),
                    Binary::Mul => (go * y[ib], go * x[ia]),
                    Binary::Div => (go / y[ib], -go * x[ia] / (y[ib] * y[ib])),
                };
                ga[ia] += dx;
                gb[ib] += dy;
            });
            if na {
                accumulate(grads, *a, Tensor::raw(av.shape().to_vec(), ga));
            }
            if nb {
                accumulate(grads, *b, Tensor::raw(bv.shape().to_vec(), gb));
            }
        }
        Op::MatMul { a, b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            if nodes[*a].needs_grad {
                let mut ga = vec![0.0; m * k];
                let bd = bv.data();
                for i in 0..m {
                    let grow = &gd[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let brow = &bd[kk * n..(kk + 1) * n];
                        ga[i * k + kk] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                accumulate(grads, *a, Tensor::raw(vec![m, k], ga));
            }
            if nodes[*b].needs_grad {
                let mut gb = vec![0.0; k * n];
                let ad = av.data();
                for i in 0..m {
                    let grow = &gd[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let aik = ad[i * k + kk];
                        if aik == 0.0 {
                            continue;
                        }
                        let dst = &mut gb[kk * n..(kk + 1) * n];
                        for (d, g) in dst.iter_mut().zip(grow) {
                            *d += aik * g;
                        }
                    }
                }
                accumulate(grads, *b, Tensor::raw(vec![k, n], gb));
            }
        }
        Op::Concat { parts, axis } => {
            let out = node.value.shape();
            let total = out[*axis];
            let outer: usize = out[..*axis].iter().product();
            let inner: usize = out[axis + 1..].iter().product();
            let mut offset = 0;
            for &p in parts {
                let ps = nodes[p].value.shape();
                let len = ps[*axis];
                if nodes[p].needs_grad {
                    let block = len * inner;
                    let mut data = vec![0.0; numel(ps)];
                    for o in 0..outer {
                        let src = o * total * inner + offset * inner;
                        data[o * block..(o + 1) * block].copy_from_slice(&gd[src..src + block]);
                    }
                    accumulate(grads, p, Tensor::raw(ps.to_vec(), data));
                }
                offset += len;
            }
        }
        Op::Slice { a, axis, start } => {
            if !nodes[*a].needs_grad {
                return;
            }
            let ashape = nodes[*a].value.shape();
            let out = node.value.shape();
            let outer: usize = ashape[..*axis].iter().product();
            let inner: usize = ashape[axis + 1..].iter().product();
            let (full, len) = (ashape[*axis], out[*axis]);
            let mut data = vec![0.0; numel(ashape)];
            for o in 0..outer {
                let dst = (o * full + start) * inner;
                data[dst..dst + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            accumulate(grads, *a, Tensor::raw(ashape.to_vec(), data));
        }
        Op::Reshape { a } => {
            if nodes[*a].needs_grad {
                accumulate(grads, *a, Tensor::raw(nodes[*a].value.shape().to_vec(), gd.to_vec()));
            }
        }
        Op::Sum { a } => {
            if nodes[*a].needs_grad {
                accumulate(grads, *a, Tensor::full(nodes[*a].value.shape(), gd[0]));
            }
        }
        Op::SumAxis { a, axis } => {
            if !nodes[*a].needs_grad {
                return;
            }
            let ashape = nodes[*a].value.shape();
            let outer: usize = ashape[..*axis].iter().product();
            let inner: usize = ashape[axis + 1..].iter().product();
            let len = ashape[*axis];
            let mut data = vec![0.0; numel(ashape)];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        data[(o * len + l) * inner + i] = gd[o * inner + i];
                    }
                }
            }
            accumulate(grads, *a, Tensor::raw(ashape.to_vec(), data));
        }
        Op::Softmax { a } => {
            if !nodes[*a].needs_grad {
                return;
            }
            let y = node.value.data();
            let (rows, cols) = last_axis_rows(node.value.shape());
            let mut data = vec![0.0; rows * cols];
            for r in 0..rows {
                let s = r * cols;
                let dot: f64 = (0..cols).map(|j| gd[s + j] * y[s + j]).sum();
                for j in 0..cols {
                    data[s + j] = y[s + j] * (gd[s + j] - dot);
                }
            }
            accumulate(grads, *a, Tensor::raw(node.value.shape().to_vec(), data));
        }
        Op::LogSoftmax { a } => {
            if !nodes[*a].needs_grad {
                return;
            }
            let y = node.value.data();
            let (rows, cols) = last_axis_rows(node.value.shape());
            let mut data = vec![0.0; rows * cols];
            for r in 0..rows {
                let s = r * cols;
                let gsum: f64 = gd[s..s + cols].iter().sum();
                for j in 0..cols {
                    data[s + j] = gd[s + j] - y[s + j].exp() * gsum;
                }
            }
            accumulate(grads, *a, Tensor::raw(node.value.shape().to_vec(), data));
        }
        Op::LogSumExp { a } => {
            if !nodes[*a].needs_grad {
                return;
            }
            let av = &nodes[*a].value;
            let x = av.data();
            let y = node.value.data();
            let (rows, cols) = last_axis_rows(av.shape());
            let mut data = vec![0.0; rows * cols];
            for r in 0..rows {
                for j in 0..cols {
                    data[r * cols + j] = gd[r] * (x[r * cols + j] - y[r]).exp();
                }
            }
            accumulate(grads, *a, Tensor::raw(av.shape().to_vec(), data));
        }
        Op::Conv2d { x, w, b, stride, pad } => conv2d_backward(nodes, node, g, grads, *x, *w, *b, *stride, *pad),
        Op::Gather { a, idx } => {
            if !nodes[*a].needs_grad {
                return;
            }
            let ashape = nodes[*a].value.shape();
            let row = numel(&ashape[1..]);
            let mut data = vec![0.0; numel(ashape)];
            for (k, &r) in idx.iter().enumerate() {
                for (d, s) in data[r * row..(r + 1) * row].iter_mut().zip(&gd[k * row..(k + 1) * row]) {
                    *d += s;
                }
            }
            accumulate(grads, *a, Tensor::raw(ashape.to_vec(), data));
        }
        Op::Gauss2 { diff, cov } => {
            let d = nodes[*diff].value.data();
            let c = nodes[*cov].value.data();
            let n = gd.len();
            let mut gdiff = vec![0.0; 2 * n];
            let mut gcov = vec![0.0; 3 * n];
            for i in 0..n {
                let (dx, dy) = (d[2 * i], d[2 * i + 1]);
                let (sxx, sxy, syy) = (c[3 * i], c[3 * i + 1], c[3 * i + 2]);
                let det = sxx * syy - sxy * sxy;
                let u1 = (syy * dx - sxy * dy) / det;
                let u2 = (sxx * dy - sxy * dx) / det;
                let go = gd[i];
                gdiff[2 * i] = -go * u1;
                gdiff[2 * i + 1] = -go * u2;
                gcov[3 * i] = go * (-0.5 * syy / det + 0.5 * u1 * u1);
                gcov[3 * i + 1] = go * (sxy / det + u1 * u2);
                gcov[3 * i + 2] = go * (-0.5 * sxx / det + 0.5 * u2 * u2);
            }
            if nodes[*diff].needs_grad {
                accumulate(grads, *diff, Tensor::raw(vec![n, 2], gdiff));
            }
            if nodes[*cov].needs_grad {
                accumulate(grads, *cov, Tensor::raw(vec![n, 3], gcov));
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    nodes: &[Node],
    node: &Node,
    g: &Tensor,
    grads: &mut [Option<Tensor>],
    x: usize,
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
) {
    let (xv, wv) = (&nodes[x].value, &nodes[w].value);
    let (xs, ws, os) = (xv.shape(), wv.shape(), node.value.shape());
    let geo = ConvGeom { cin: xs[1], ih: xs[2], iw: xs[3], k: ws[2], stride, pad, oh: os[2], ow: os[3] };
    let (bsz, cout) = (xs[0], ws[0]);
    let (plane, rows, isz) = (geo.oh * geo.ow, geo.rows(), geo.cin * geo.ih * geo.iw);
    let gd = g.data();
    let (xd, wd) = (xv.data(), wv.data());

    if nodes[b].needs_grad {
        let mut gb = vec![0.0; cout];
        for bi in 0..bsz {
            for (co, gbv) in gb.iter_mut().enumerate() {
                let base = (bi * cout + co) * plane;
                *gbv += gd[base..base + plane].iter().sum::<f64>();
            }
        }
        accumulate(grads, b, Tensor::raw(vec![cout], gb));
    }
    let need_w = nodes[w].needs_grad;
    let need_x = nodes[x].needs_grad;
    if !need_w && !need_x {
        return;
    }
    let mut gw = vec![0.0; if need_w { wd.len() } else { 0 }];
    let mut gx = vec![0.0; if need_x { xd.len() } else { 0 }];
    let mut cols = vec![0.0; rows * plane];
    for bi in 0..bsz {
        let gb = &gd[bi * cout * plane..(bi + 1) * cout * plane];
        if need_w {
            geo.im2col(&xd[bi * isz..(bi + 1) * isz], &mut cols);
            for co in 0..cout {
                let gp = &gb[co * plane..(co + 1) * plane];
                for j in 0..rows {
                    gw[co * rows + j] += dot(gp, &cols[j * plane..(j + 1) * plane]);
                }
            }
        }
        if need_x {
            cols.fill(0.0);
            for co in 0..cout {
                let gp = &gb[co * plane..(co + 1) * plane];
                for j in 0..rows {
                    let wv = wd[co * rows + j];
                    if wv != 0.0 {
                        axpy(&mut cols[j * plane..(j + 1) * plane], wv, gp);
                    }
                }
            }
            geo.col2im(&cols, &mut gx[bi * isz..(bi + 1) * isz]);
        }
    }
    if need_w {
        accumulate(grads, w, Tensor::raw(ws.to_vec(), gw));
    }
    if need_x {
        accumulate(grads, x, Tensor::raw(xs.to_vec(), gx));
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// Geometry of one convolution; columns are indexed `(ci, ky, kx)` by
/// output pixel, matching the `[Cout, Cin, K, K]` weight layout.
struct ConvGeom {
    cin: usize,
    ih: usize,
    iw: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Calls `f(col offset, input offset, n)` for every run of `n` in-bounds
    /// taps; within a run both offsets advance, the input by `stride`.
    fn runs(&self, mut f: impl FnMut(usize, usize, usize)) {
        let plane = self.oh * self.ow;
        let (s, p) = (self.stride, self.pad);
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let lo = if p > kx { (p - kx).div_ceil(s) } else { 0 };
                    let hi = (self.iw + p).saturating_sub(kx).div_ceil(s).min(self.ow);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..self.oh {
                        let iy = oy * s + ky;
                        if iy < p || iy - p >= self.ih {
                            continue;
                        }
                        let xrow = (ci * self.ih + iy - p) * self.iw;
                        f(row * plane + oy * self.ow + lo, xrow + lo * s + kx - p, hi - lo);
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        cols.fill(0.0);
        let s = self.stride;
        self.runs(|c, i, n| {
            for (j, d) in cols[c..c + n].iter_mut().enumerate() {
                *d = x[i + j * s];
            }
        });
    }

    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        let s = self.stride;
        self.runs(|c, i, n| {
            for (j, v) in cols[c..c + n].iter().enumerate() {
                gx[i + j * s] += v;
            }
        });
    }
}

// ---------------------------------------------------------------------------
// Var API

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<'g> {
        self.g
    }

    pub fn shape(&self) -> Vec<usize> {
        self.g.value(self.id).shape().to_vec()
    }

    pub fn value(&self) -> Tensor {
        self.g.value(self.id).clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.g.value(self.id))
    }

    /// The single value of a one-element node.
    pub fn item(&self) -> f64 {
        self.g.value(self.id).data()[0]
    }

    fn unary(self, kind: Unary) -> Var<'g> {
        let t = {
            let v = self.g.value(self.id);
            Tensor::raw(v.shape().to_vec(), v.data().iter().map(|&x| unary_apply(kind, x)).collect())
        };
        self.g.push(t, Op::Unary { kind, a: self.id }, self.g.needs(self.id))
    }

    fn binary(self, other: Var<'g>, kind: Binary, op: &'static str) -> Var<'g> {
        let g = self.g;
        let (sa, sb) = (self.shape(), other.shape());
        let Some(out) = broadcast_shape(&sa, &sb) else {
            return g.shape_err(op, format!("cannot broadcast {sa:?} with {sb:?}"), &sa);
        };
        let data = {
            let (a, b) = (g.value(self.id), g.value(other.id));
            let (x, y) = (a.data(), b.data());
            if sa == sb {
                x.iter().zip(y).map(|(&p, &q)| binary_apply(kind, p, q)).collect()
            } else {
                let mut d = vec![0.0; numel(&out)];
                let (ta, tb) = (bcast_strides(&sa, &out), bcast_strides(&sb, &out));
                for_each_bcast(&out, &ta, &tb, |o, ia, ib| d[o] = binary_apply(kind, x[ia], y[ib]));
                d
            }
        };
        let needs = g.needs(self.id) || g.needs(other.id);
        g.push(Tensor::raw(out, data), Op::Binary { kind, a: self.id, b: other.id }, needs)
    }

    pub fn add(self, o: Var<'g>) -> Var<'g> {
        self.binary(o, Binary::Add, "add")
    }
    pub fn sub(self, o: Var<'g>) -> Var<'g> {
        self.binary(o, Binary::Sub, "sub")
    }
    pub fn mul(self, o: Var<'g>) -> Var<'g> {
        self.binary(o, Binary::Mul, "mul")
    }
    pub fn div(self, o: Var<'g>) -> Var<'g> {
        self.binary(o, Binary::Div, "div")
    }

    pub fn neg(self) -> Var<'g> {
        self.unary(Unary::Neg)
    }
    pub fn scale(self, c: f64) -> Var<'g> {
        self.unary(Unary::Scale(c))
    }
    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.unary(Unary::AddScalar(c))
    }
    /// Element-wise `min(x, c)`; no gradient where the cap is active.
    pub fn min_scalar(self, c: f64) -> Var<'g> {
        self.unary(Unary::MinScalar(c))
    }
    pub fn tanh(self) -> Var<'g> {
        self.unary(Unary::Tanh)
    }
    pub fn sigmoid(self) -> Var<'g> {
        self.unary(Unary::Sigmoid)
    }
    pub fn relu(self) -> Var<'g> {
        self.unary(Unary::Relu)
    }
    pub fn exp(self) -> Var<'g> {
        self.unary(Unary::Exp)
    }
    pub fn ln(self) -> Var<'g> {
        self.unary(Unary::Ln)
    }
    pub fn sin(self) -> Var<'g> {
        self.unary(Unary::Sin)
    }
    pub fn cos(self) -> Var<'g> {
        self.unary(Unary::Cos)
    }
    pub fn square(self) -> Var<'g> {
        self.unary(Unary::Square)
    }
    pub fn sqrt(self) -> Var<'g> {
        self.unary(Unary::Sqrt)
    }
    /// `∫_0^1 s^n cos(x s) ds`, element-wise.
    pub fn cos_moment(self, n: u32) -> Var<'g> {
        self.unary(Unary::CosMoment(n))
    }
    /// `∫_0^1 s^n sin(x s) ds`, element-wise.
    pub fn sin_moment(self, n: u32) -> Var<'g> {
        self.unary(Unary::SinMoment(n))
    }

    /// Same value, treated as a constant by the backward pass.
    pub fn stop_gradient(self) -> Var<'g> {
        let t = self.value();
        self.g.push(t, Op::Leaf, false)
    }

    pub fn matmul(self, other: Var<'g>) -> Var<'g> {
        let g = self.g;
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return g.shape_err("matmul", format!("{sa:?} x {sb:?}"), &[sa.first().copied().unwrap_or(1), *sb.last().unwrap_or(&1)]);
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        {
            let (a, b) = (g.value(self.id), g.value(other.id));
            let (ad, bd) = (a.data(), b.data());
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for kk in 0..k {
                    let aik = ad[i * k + kk];
                    if aik == 0.0 {
                        continue;
                    }
                    for (o, bv) in orow.iter_mut().zip(&bd[kk * n..(kk + 1) * n]) {
                        *o += aik * bv;
                    }
                }
            }
        }
        let needs = g.needs(self.id) || g.needs(other.id);
        g.push(Tensor::raw(vec![m, n], out), Op::MatMul { a: self.id, b: other.id }, needs)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let s = self.shape();
        if numel(&s) != numel(shape) {
            return self.g.shape_err("reshape", format!("{s:?} -> {shape:?}"), shape);
        }
        let t = self.value().reshaped(shape.to_vec());
        self.g.push(t, Op::Reshape { a: self.id }, self.g.needs(self.id))
    }

    /// `[start, end)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Var<'g> {
        let s = self.shape();
        if axis >= s.len() || start > end || end > s[axis] {
            return self.g.shape_err("slice", format!("{s:?} axis {axis} [{start}, {end})"), &s);
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let len = end - start;
        let mut out_shape = s.clone();
        out_shape[axis] = len;
        let data = {
            let v = self.g.value(self.id);
            let mut d = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let src = (o * s[axis] + start) * inner;
                d.extend_from_slice(&v.data()[src..src + len * inner]);
            }
            d
        };
        self.g.push(Tensor::raw(out_shape, data), Op::Slice { a: self.id, axis, start }, self.g.needs(self.id))
    }

    /// Column `j` of a `[N, C]` matrix, as a `[N]` vector.
    pub fn col(self, j: usize) -> Var<'g> {
        let s = self.shape();
        let rows = s.first().copied().unwrap_or(0);
        self.slice(1, j, j + 1).reshape(&[rows])
    }

    pub fn sum(self) -> Var<'g> {
        let v = self.with_value(|t| t.data().iter().sum());
        self.g.push(Tensor::scalar(v), Op::Sum { a: self.id }, self.g.needs(self.id))
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.with_value(|t| t.numel()).max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(self, axis: usize) -> Var<'g> {
        let s = self.shape();
        if axis >= s.len() {
            return self.g.shape_err("sum_axis", format!("axis {axis} for {s:?}"), &s);
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let len = s[axis];
        let data = {
            let v = self.g.value(self.id);
            let mut d = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        d[o * inner + i] += v.data()[(o * len + l) * inner + i];
                    }
                }
            }
            d
        };
        let mut out_shape = s;
        out_shape.remove(axis);
        self.g.push(Tensor::raw(out_shape, data), Op::SumAxis { a: self.id, axis }, self.g.needs(self.id))
    }

    fn row_op(self, f: impl Fn(&[f64], &mut Vec<f64>)) -> Option<(Vec<usize>, Vec<f64>)> {
        let s = self.shape();
        if s.is_empty() || s[s.len() - 1] == 0 {
            return None;
        }
        let (rows, cols) = last_axis_rows(&s);
        let v = self.g.value(self.id);
        let mut out = Vec::with_capacity(v.numel());
        for r in 0..rows {
            f(&v.data()[r * cols..(r + 1) * cols], &mut out);
        }
        Some((s, out))
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'g> {
        match self.row_op(|row, out| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            out.extend(row.iter().map(|x| (x - m).exp() / z));
        }) {
            Some((s, d)) => self.g.push(Tensor::raw(s, d), Op::Softmax { a: self.id }, self.g.needs(self.id)),
            None => self.g.shape_err("softmax", format!("{:?}", self.shape()), &self.shape()),
        }
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(self) -> Var<'g> {
        match self.row_op(|row, out| {
            let lse = logsumexp(row);
            out.extend(row.iter().map(|x| x - lse));
        }) {
            Some((s, d)) => self.g.push(Tensor::raw(s, d), Op::LogSoftmax { a: self.id }, self.g.needs(self.id)),
            None => self.g.shape_err("log_softmax", format!("{:?}", self.shape()), &self.shape()),
        }
    }

    /// `log Σ exp` over the last axis, computed with the max shift.
    pub fn logsumexp(self) -> Var<'g> {
        match self.row_op(|row, out| out.push(logsumexp(row))) {
            Some((mut s, d)) => {
                s.pop();
                self.g.push(Tensor::raw(s, d), Op::LogSumExp { a: self.id }, self.g.needs(self.id))
            }
            None => self.g.shape_err("logsumexp", format!("{:?}", self.shape()), &[]),
        }
    }

    /// 2-D convolution. `self` is `[B, Cin, H, W]`, `w` is
    /// `[Cout, Cin, K, K]`, `b` is `[Cout]`.
    pub fn conv2d(self, w: Var<'g>, b: Var<'g>, stride: usize, pad: usize) -> Var<'g> {
        let g = self.g;
        let (xs, ws, bs) = (self.shape(), w.shape(), b.shape());
        let valid = xs.len() == 4
            && ws.len() == 4
            && ws[1] == xs[1]
            && ws[2] == ws[3]
            && bs == [ws[0]]
            && stride >= 1;
        let dims = if valid {
            conv_out(xs[2], ws[2], stride, pad).zip(conv_out(xs[3], ws[3], stride, pad))
        } else {
            None
        };
        let Some((oh, ow)) = dims else {
            return g.shape_err("conv2d", format!("x {xs:?}, w {ws:?}, b {bs:?}, stride {stride}, pad {pad}"), &[0]);
        };
        let geo = ConvGeom { cin: xs[1], ih: xs[2], iw: xs[3], k: ws[2], stride, pad, oh, ow };
        let (bsz, cout) = (xs[0], ws[0]);
        let (plane, rows) = (oh * ow, geo.rows());
        let mut out = vec![0.0; bsz * cout * plane];
        {
            let (xv, wv, bv) = (g.value(self.id), g.value(w.id), g.value(b.id));
            let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
            let mut cols = vec![0.0; rows * plane];
            for bi in 0..bsz {
                geo.im2col(&xd[bi * geo.cin * geo.ih * geo.iw..(bi + 1) * geo.cin * geo.ih * geo.iw], &mut cols);
                for co in 0..cout {
                    let o = &mut out[(bi * cout + co) * plane..(bi * cout + co + 1) * plane];
                    o.iter_mut().for_each(|v| *v = bd[co]);
                    for (j, &wv) in wd[co * rows..(co + 1) * rows].iter().enumerate() {
                        if wv != 0.0 {
                            axpy(o, wv, &cols[j * plane..(j + 1) * plane]);
                        }
                    }
                }
            }
        }
        let needs = g.needs(self.id) || g.needs(w.id) || g.needs(b.id);
        g.push(
            Tensor::raw(vec![bsz, cout, oh, ow], out),
            Op::Conv2d { x: self.id, w: w.id, b: b.id, stride, pad },
            needs,
        )
    }

    /// Selects rows along axis 0; indices may repeat.
    pub fn gather_rows(self, idx: &[usize]) -> Var<'g> {
        let s = self.shape();
        if s.is_empty() || idx.iter().any(|&i| i >= s[0]) {
            return self.g.shape_err("gather_rows", format!("{s:?} with indices up to {:?}", idx.iter().max()), &s);
        }
        let row = numel(&s[1..]);
        let data = {
            let v = self.g.value(self.id);
            let mut d = Vec::with_capacity(idx.len() * row);
            for &i in idx {
                d.extend_from_slice(&v.data()[i * row..(i + 1) * row]);
            }
            d
        };
        let mut out_shape = s;
        out_shape[0] = idx.len();
        self.g.push(Tensor::raw(out_shape, data), Op::Gather { a: self.id, idx: idx.to_vec() }, self.g.needs(self.id))
    }
}

pub fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

macro_rules! var_binop {
    ($tr:ident, $m:ident, $method:ident) => {
        impl<'g> ops::$tr<Var<'g>> for Var<'g> {
            type Output = Var<'g>;
            fn $m(self, rhs: Var<'g>) -> Var<'g> {
                Var::$method(self, rhs)
            }
        }
    };
}
var_binop!(Add, add, add);
var_binop!(Sub, sub, sub);
var_binop!(Mul, mul, mul);
var_binop!(Div, div, div);

impl<'g> ops::Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        Var::neg(self)
    }
}

impl<'g> ops::Add<f64> for Var<'g> {
    type Output = Var<'g>;
    fn add(self, c: f64) -> Var<'g> {
        self.add_scalar(c)
    }
}

impl<'g> ops::Sub<f64> for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, c: f64) -> Var<'g> {
        self.add_scalar(-c)
    }
}

impl<'g> ops::Mul<f64> for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, c: f64) -> Var<'g> {
        self.scale(c)
    }
}

impl<'g> ops::Mul<Var<'g>> for f64 {
    type Output = Var<'g>;
    fn mul(self, v: Var<'g>) -> Var<'g> {
        v.scale(self)
    }
}
