//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in execution
//! order. [`Tape::backward`] walks the record once, newest first, and hands
//! back a [`Gradients`] table. Nodes that cannot reach a trainable leaf are
//! skipped entirely.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{dim_err, Result, TensorError};
use crate::kernels::{self, Activation, ConvGeometry, PoolGeometry};
use crate::{ParamId, ParamSet, Tensor};

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MulConst(usize, Rc<Tensor>),
    AddRow(usize, usize),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    MatVec(usize, usize),
    Act(usize, Activation),
    Softmax(usize),
    LogSoftmax(usize),
    Conv2d { x: usize, k: usize, geom: ConvGeometry },
    ConvTranspose2d { x: usize, k: usize, geom: ConvGeometry },
    AvgPool { x: usize, geom: PoolGeometry },
    Concat(Vec<usize>),
    Reshape(usize),
    Sum(usize),
    Dot(usize, usize),
    Index(usize, usize),
    Column(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Operation record for one forward pass. Not `Sync`; a tape belongs to a
/// single thread of execution.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, needs_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// A value that is never differentiated.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// A free leaf whose gradient is tracked but which is not a parameter.
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf { param: None }, true)
    }

    /// Record the current value of a parameter as a trainable leaf.
    pub fn param(&self, params: &ParamSet, id: ParamId) -> Var<'_> {
        self.push(params.get(id).value.clone(), Op::Leaf { param: Some(id) }, true)
    }

    /// Record a parameter whose gradient is not wanted (e.g. a frozen model).
    pub fn frozen_param(&self, params: &ParamSet, id: ParamId) -> Var<'_> {
        self.constant(params.get(id).value.clone())
    }

    fn unary(&self, a: usize, value: Tensor, op: Op) -> Var<'_> {
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    fn binary(&self, a: usize, b: usize, value: Tensor, op: Op) -> Var<'_> {
        let needs = self.needs(a) || self.needs(b);
        self.push(value, op, needs)
    }

    pub fn concat(&self, parts: &[Var<'_>]) -> Result<Var<'_>> {
        if parts.is_empty() {
            return dim_err("concat of zero tensors");
        }
        let mut data = Vec::new();
        let mut needs = false;
        for p in parts {
            assert!(std::ptr::eq(p.tape, self), "vars from different tapes");
            data.extend_from_slice(p.value().data());
            needs |= self.needs(p.id);
        }
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Tensor::vector(data), Op::Concat(ids), needs))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(p) } => Some((p, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g).expect("gradient shape mismatch"),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let needs = |i: usize| nodes[i].needs_grad;
    match &nodes[id].op {
        Op::Leaf { .. } => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                accumulate(nodes, grads, *a, g.zip_map(val(*b), |x, y| x * y)?);
            }
            if needs(*b) {
                accumulate(nodes, grads, *b, g.zip_map(val(*a), |x, y| x * y)?);
            }
        }
        Op::Scale(a, s) => accumulate(nodes, grads, *a, g.map(|v| v * s)),
        Op::AddScalar(a) => accumulate(nodes, grads, *a, g.clone()),
        Op::MulConst(a, c) => accumulate(nodes, grads, *a, g.zip_map(c, |x, y| x * y)?),
        Op::AddRow(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            if needs(*b) {
                let n = val(*b).len();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                }
                accumulate(nodes, grads, *b, Tensor::new(val(*b).shape(), gb)?);
            }
        }
        Op::MatMul { a, b, ta, tb } => {
            let (av, bv) = (val(*a), val(*b));
            if needs(*a) {
                let ga = if *ta {
                    kernels::matmul(bv, *tb, g, true)?
                } else {
                    kernels::matmul(g, false, bv, !*tb)?
                };
                accumulate(nodes, grads, *a, ga);
            }
            if needs(*b) {
                let gb = if *tb {
                    kernels::matmul(g, true, av, *ta)?
                } else {
                    kernels::matmul(av, !*ta, g, false)?
                };
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::MatVec(w, x) => {
            let (wv, xv) = (val(*w), val(*x));
            let n = xv.len();
            if needs(*w) {
                let mut gw = vec![0.0; wv.len()];
                for (row, gi) in gw.chunks_exact_mut(n).zip(g.data()) {
                    row.iter_mut().zip(xv.data()).for_each(|(r, xj)| *r = gi * xj);
                }
                accumulate(nodes, grads, *w, Tensor::new(wv.shape(), gw)?);
            }
            if needs(*x) {
                let mut gx = vec![0.0; n];
                for (row, gi) in wv.data().chunks_exact(n).zip(g.data()) {
                    gx.iter_mut().zip(row).for_each(|(s, wij)| *s += gi * wij);
                }
                accumulate(nodes, grads, *x, Tensor::vector(gx));
            }
        }
        Op::Act(a, kind) => {
            let y = &nodes[id].value;
            let ga = g.zip_map(y, |gv, yv| gv * kind.derivative_from_output(yv))?;
            accumulate(nodes, grads, *a, ga);
        }
        Op::Softmax(a) => {
            let y = &nodes[id].value;
            let inner = g.dot(y)?;
            accumulate(nodes, grads, *a, g.zip_map(y, |gv, yv| yv * (gv - inner))?);
        }
        Op::LogSoftmax(a) => {
            let y = &nodes[id].value;
            let total = g.sum();
            accumulate(nodes, grads, *a, g.zip_map(y, |gv, yv| gv - yv.exp() * total)?);
        }
        Op::Conv2d { x, k, geom } => {
            if needs(*x) {
                let gx = geom.adjoint(g.data(), val(*k).data());
                accumulate(nodes, grads, *x, Tensor::new(&geom.input_shape(), gx)?);
            }
            if needs(*k) {
                let gk = geom.kernel_grad(val(*x).data(), g.data());
                accumulate(nodes, grads, *k, Tensor::new(val(*k).shape(), gk)?);
            }
        }
        Op::ConvTranspose2d { x, k, geom } => {
            if needs(*x) {
                let gx = geom.forward(g.data(), val(*k).data());
                accumulate(nodes, grads, *x, Tensor::new(&geom.output_shape(), gx)?);
            }
            if needs(*k) {
                let gk = geom.kernel_grad(g.data(), val(*x).data());
                accumulate(nodes, grads, *k, Tensor::new(val(*k).shape(), gk)?);
            }
        }
        Op::AvgPool { x, geom } => {
            let gx = geom.backward(g.data());
            accumulate(nodes, grads, *x, Tensor::new(val(*x).shape(), gx)?);
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let shape = val(p).shape();
                let n = val(p).len();
                if needs(p) {
                    let part = Tensor::new(shape, g.data()[offset..offset + n].to_vec())?;
                    accumulate(nodes, grads, p, part);
                }
                offset += n;
            }
        }
        Op::Reshape(a) => accumulate(nodes, grads, *a, g.clone().reshape(val(*a).shape())?),
        Op::Sum(a) => accumulate(nodes, grads, *a, Tensor::full(val(*a).shape(), g.item())),
        Op::Dot(a, b) => {
            let s = g.item();
            if needs(*a) {
                accumulate(nodes, grads, *a, val(*b).map(|v| v * s));
            }
            if needs(*b) {
                accumulate(nodes, grads, *b, val(*a).map(|v| v * s));
            }
        }
        Op::Index(a, i) => {
            let mut ga = Tensor::zeros(val(*a).shape());
            ga.data_mut()[*i] = g.item();
            accumulate(nodes, grads, *a, ga);
        }
        Op::Column(a, j) => {
            let av = val(*a);
            let cols = av.shape()[1];
            let mut ga = Tensor::zeros(av.shape());
            for (r, gv) in g.data().iter().enumerate() {
                ga.data_mut()[r * cols + j] = *gv;
            }
            accumulate(nodes, grads, *a, ga);
        }
    }
    Ok(())
}

/// Result of a reverse pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads[var.id].as_ref()
    }

    /// Add every parameter leaf's gradient into `params[..].grad`.
    pub fn accumulate_into(&self, params: &mut ParamSet) -> Result<()> {
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                params.get_mut(pid).grad.add_assign(g)?;
            }
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a one-element var.
    pub fn item(self) -> f64 {
        self.value().item()
    }

    fn same_tape(self, other: Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn elementwise(self, other: Var<'t>, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var<'t>> {
        self.same_tape(other);
        let v = self.value().zip_map(&other.value(), f)?;
        Ok(self.tape.binary(self.id, other.id, v, op))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let v = self.value().map(|x| x * s);
        self.tape.unary(self.id, v, Op::Scale(self.id, s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        let v = self.value().map(|x| x + s);
        self.tape.unary(self.id, v, Op::AddScalar(self.id))
    }

    /// `1 − self`
    pub fn one_minus(self) -> Var<'t> {
        self.scale(-1.0).add_scalar(1.0)
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(self, c: Tensor) -> Result<Var<'t>> {
        let v = self.value().zip_map(&c, |a, b| a * b)?;
        Ok(self.tape.unary(self.id, v, Op::MulConst(self.id, Rc::new(c))))
    }

    /// Adds vector `b` to every trailing-axis row of `self`.
    pub fn add_row(self, b: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(b);
        let (a, bv) = (self.value(), b.value());
        let n = bv.len();
        if bv.ndim() != 1 || *a.shape().last().unwrap() != n {
            return dim_err(format!("add_row {:?} + {:?}", a.shape(), bv.shape()));
        }
        let mut out = a.as_ref().clone();
        for row in out.data_mut().chunks_exact_mut(n) {
            row.iter_mut().zip(bv.data()).for_each(|(x, y)| *x += y);
        }
        Ok(self.tape.binary(self.id, b.id, out, Op::AddRow(self.id, b.id)))
    }

    pub fn matmul(self, other: Var<'t>, ta: bool, tb: bool) -> Result<Var<'t>> {
        self.same_tape(other);
        let v = kernels::matmul(&self.value(), ta, &other.value(), tb)?;
        Ok(self.tape.binary(self.id, other.id, v, Op::MatMul { a: self.id, b: other.id, ta, tb }))
    }

    /// `self · x` where `self` is a matrix and `x` a vector.
    pub fn matvec(self, x: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(x);
        let v = kernels::matvec(&self.value(), &x.value())?;
        Ok(self.tape.binary(self.id, x.id, v, Op::MatVec(self.id, x.id)))
    }

    /// `W·self + b`.
    pub fn affine(self, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        w.matvec(self)?.add(b)
    }

    pub fn activation(self, kind: Activation) -> Var<'t> {
        let v = kernels::activation(&self.value(), kind);
        self.tape.unary(self.id, v, Op::Act(self.id, kind))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.activation(Activation::Sigmoid)
    }

    pub fn tanh(self) -> Var<'t> {
        self.activation(Activation::Tanh)
    }

    pub fn stanh(self) -> Var<'t> {
        self.activation(Activation::Stanh)
    }

    pub fn softmax(self) -> Var<'t> {
        let v = kernels::softmax(&self.value());
        self.tape.unary(self.id, v, Op::Softmax(self.id))
    }

    pub fn log_softmax(self) -> Var<'t> {
        let v = kernels::log_softmax(&self.value());
        self.tape.unary(self.id, v, Op::LogSoftmax(self.id))
    }

    pub fn conv2d(self, kernel: Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        self.same_tape(kernel);
        let (x, k) = (self.value(), kernel.value());
        let geom = ConvGeometry::conv(x.shape(), k.shape(), stride, pad)?;
        let out = Tensor::new(&geom.output_shape(), geom.forward(x.data(), k.data()))?;
        Ok(self.tape.binary(self.id, kernel.id, out, Op::Conv2d { x: self.id, k: kernel.id, geom }))
    }

    pub fn conv_transpose2d(self, kernel: Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        self.same_tape(kernel);
        let (x, k) = (self.value(), kernel.value());
        let geom = ConvGeometry::conv_transpose(x.shape(), k.shape(), stride, pad)?;
        let out = Tensor::new(&geom.input_shape(), geom.adjoint(x.data(), k.data()))?;
        Ok(self.tape.binary(
            self.id,
            kernel.id,
            out,
            Op::ConvTranspose2d { x: self.id, k: kernel.id, geom },
        ))
    }

    pub fn avg_pool2d(self, kh: usize, kw: usize, stride: usize) -> Result<Var<'t>> {
        let x = self.value();
        let geom = PoolGeometry::new(x.shape(), kh, kw, stride)?;
        let out = Tensor::new(&geom.output_shape(x.ndim()), geom.forward(x.data()))?;
        Ok(self.tape.unary(self.id, out, Op::AvgPool { x: self.id, geom }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().as_ref().clone().reshape(shape)?;
        Ok(self.tape.unary(self.id, v, Op::Reshape(self.id)))
    }

    pub fn flatten(self) -> Var<'t> {
        let n = self.value().len();
        self.reshape(&[n]).expect("flatten cannot fail")
    }

    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.tape.unary(self.id, v, Op::Sum(self.id))
    }

    pub fn dot(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let v = Tensor::scalar(self.value().dot(&other.value())?);
        Ok(self.tape.binary(self.id, other.id, v, Op::Dot(self.id, other.id)))
    }

    /// Squared ℓ2 norm.
    pub fn sum_squares(self) -> Var<'t> {
        self.dot(self).expect("same shape")
    }

    /// Entry `i` of the flattened value, as a one-element var.
    pub fn index(self, i: usize) -> Result<Var<'t>> {
        let v = self.value();
        if i >= v.len() {
            return dim_err(format!("index {i} out of range for {:?}", v.shape()));
        }
        let out = Tensor::scalar(v.data()[i]);
        Ok(self.tape.unary(self.id, out, Op::Index(self.id, i)))
    }

    /// Column `j` of a matrix.
    pub fn column(self, j: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.ndim() != 2 || j >= v.shape()[1] {
            return dim_err(format!("column {j} of {:?}", v.shape()));
        }
        let cols = v.shape()[1];
        let data = v.data().iter().skip(j).step_by(cols).copied().collect();
        Ok(self.tape.unary(self.id, Tensor::vector(data), Op::Column(self.id, j)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.variable(Tensor::scalar(3.0));
        let y = x.mul(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn unused_parameter_has_zero_gradient() {
        let mut params = ParamSet::new();
        let a = params.add("a", Tensor::scalar(2.0), true);
        let b = params.add("b", Tensor::scalar(5.0), true);
        let tape = Tape::new();
        let va = tape.param(&params, a);
        let _vb = tape.param(&params, b);
        let loss = va.mul(va).unwrap();
        tape.backward(loss).unwrap().accumulate_into(&mut params).unwrap();
        assert_eq!(params.get(a).grad.item(), 4.0);
        assert_eq!(params.get(b).grad.item(), 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TensorError::Contract(_))));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let tape = Tape::new();
        let x = tape.variable(Tensor::scalar(2.0));
        let y = x.scale(3.0);
        let z = y.add(y).unwrap().add(x).unwrap(); // 7x
        let g = tape.backward(z).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 7.0);
    }
}
