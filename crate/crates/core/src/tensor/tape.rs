use std::collections::HashMap;
use std::rc::Rc;

use super::kernels::{self, ConvPlan, ConvSaved, Elementwise};
use super::{Conv2dGeometry, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Elementwise {
        op: Elementwise,
        a: Var,
        b: Option<Var>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv {
        x: Var,
        k: Var,
        b: Var,
        saved: Box<ConvSaved>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape {
        x: Var,
    },
    PixelShuffle {
        x: Var,
        r: usize,
    },
    PixelUnshuffle {
        x: Var,
        r: usize,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Sqrt {
        x: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    is_param: bool,
}

/// Linear record of every operation applied during a forward pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and [`Tape::backward`] simply walks it in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Kernels restricted to active taps, shared by every convolution that
    /// reuses the same kernel on the same geometry (a recurrent cell).
    gathered: HashMap<GatherKey, Rc<Vec<f64>>>,
}

/// Kernel variable plus the active rows and columns of taps.
type GatherKey = (usize, Vec<usize>, Vec<usize>);
/// Kernel gradients accumulated in gathered layout, scattered once per kernel.
type PendingKernelGrads = HashMap<GatherKey, (ConvPlan, Vec<f64>)>;

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` requires a gradient.
    /// Every parameter gets an entry; parameters the loss does not reach get zeros.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
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

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool, is_param: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            is_param,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, requires_grad, false)
    }

    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let value = op.apply(self.value(a), b.map(|b| self.value(b)))?;
        let inputs: Vec<Var> = std::iter::once(a).chain(b).collect();
        Ok(self.push(value, Op::Elementwise { op, a, b }, &inputs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Sub, a, Some(b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Mul, a, Some(b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.elementwise(Elementwise::Scale(s), a, None)
            .expect("unary op cannot fail")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.elementwise(Elementwise::Sigmoid, a, None)
            .expect("unary op cannot fail")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.elementwise(Elementwise::Tanh, a, None)
            .expect("unary op cannot fail")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.elementwise(Elementwise::Relu, a, None)
            .expect("unary op cannot fail")
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let value = kernels::dense(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(value, Op::Dense { x, w, b }, &[x, w, b]))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, geom: Conv2dGeometry) -> Result<Var> {
        let plan = ConvPlan::new(self.shape(x), self.shape(k), self.shape(b), geom)?;
        let (taps_h, taps_w) = plan.kernel_key();
        let kernel = match self.gathered.get(&(k.0, taps_h.clone(), taps_w.clone())) {
            Some(g) => Rc::clone(g),
            None => {
                let g = Rc::new(plan.gather_kernel(self.value(k).data()));
                self.gathered.insert((k.0, taps_h, taps_w), Rc::clone(&g));
                g
            }
        };
        let (value, saved) = kernels::conv2d_planned(plan, self.value(x), kernel, self.value(b))?;
        let op = Op::Conv {
            x,
            k,
            b,
            saved: Box::new(saved),
        };
        Ok(self.push(value, op, &[x, k, b]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let value = kernels::concat(&values, axis)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = kernels::narrow(self.value(x), axis, start, len)?;
        Ok(self.push(value, Op::Narrow { x, axis, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let value = kernels::pixel_shuffle(self.value(x), r)?;
        Ok(self.push(value, Op::PixelShuffle { x, r }, &[x]))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let value = kernels::pixel_unshuffle(self.value(x), r)?;
        Ok(self.push(value, Op::PixelUnshuffle { x, r }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(value, Op::Mean { x }, &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::sqrt);
        self.push(value, Op::Sqrt { x }, &[x])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        let mut pending = PendingKernelGrads::new();
        for i in (0..=loss.0).rev() {
            flush_kernel_grads(&mut pending, Some(i), &mut grads);
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads, &mut pending);
        }
        flush_kernel_grads(&mut pending, None, &mut grads);
        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let g = grads.get_mut(i).and_then(Option::take);
            out.push(match g {
                Some(g) => Some(Tensor::new(node.value.shape().to_vec(), g)?),
                None if node.is_param => Some(Tensor::zeros(node.value.shape())),
                None => None,
            });
        }
        Ok(Gradients { grads: out })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>], pending: &mut PendingKernelGrads) {
        let mut acc = |v: Var, contribution: Vec<f64>| match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(&contribution) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Elementwise { op, a, b } => {
                let (a, b) = (*a, *b);
                let y = node.value.data();
                match op {
                    Elementwise::Add | Elementwise::Sub => {
                        if self.wants(a) {
                            acc(a, g.to_vec());
                        }
                        let b = b.unwrap();
                        if self.wants(b) {
                            let sign = if *op == Elementwise::Sub { -1.0 } else { 1.0 };
                            acc(b, g.iter().map(|v| sign * v).collect());
                        }
                    }
                    Elementwise::Mul => {
                        let b = b.unwrap();
                        if self.wants(a) {
                            let bv = self.value(b).data();
                            acc(a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                        }
                        if self.wants(b) {
                            let av = self.value(a).data();
                            acc(b, g.iter().zip(av).map(|(g, a)| g * a).collect());
                        }
                    }
                    Elementwise::Scale(s) => {
                        if self.wants(a) {
                            acc(a, g.iter().map(|v| s * v).collect());
                        }
                    }
                    Elementwise::Sigmoid => {
                        if self.wants(a) {
                            acc(a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
                        }
                    }
                    Elementwise::Tanh => {
                        if self.wants(a) {
                            acc(a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect());
                        }
                    }
                    Elementwise::Relu => {
                        if self.wants(a) {
                            let av = self.value(a).data();
                            acc(
                                a,
                                g.iter().zip(av).map(|(g, a)| if *a > 0.0 { *g } else { 0.0 }).collect(),
                            );
                        }
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let need = [self.wants(*x), self.wants(*w), self.wants(*b)];
                let d = kernels::dense_backward(self.value(*x), self.value(*w), g, need);
                for (v, grad) in [(*x, d.x), (*w, d.w), (*b, d.b)] {
                    if let Some(grad) = grad {
                        acc(v, grad);
                    }
                }
            }
            Op::Conv { x, k, b, saved } => {
                let dk = self.wants(*k).then(|| {
                    let (taps_h, taps_w) = saved.plan.kernel_key();
                    let entry = pending
                        .entry((k.0, taps_h, taps_w))
                        .or_insert_with(|| (saved.plan.clone(), vec![0.0; saved.plan.gathered_len()]));
                    entry.1.as_mut_slice()
                });
                let d = kernels::conv2d_backward(saved, g, self.wants(*x), self.wants(*b), dk);
                for (v, grad) in [(*x, d.x), (*b, d.b)] {
                    if let Some(grad) = grad {
                        acc(v, grad);
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let out_shape = node.value.shape();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let outer: usize = out_shape[..*axis].iter().product();
                let total = out_shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis] * inner;
                    if self.wants(p) {
                        let mut part = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            part.extend_from_slice(&g[o * total + offset..][..len]);
                        }
                        acc(p, part);
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                if self.wants(*x) {
                    let full = self.value(*x);
                    let mut dx = vec![0.0; full.len()];
                    kernels::narrow_backward(&mut dx, full.shape(), *axis, *start, g);
                    acc(*x, dx);
                }
            }
            Op::Reshape { x } => {
                if self.wants(*x) {
                    acc(*x, g.to_vec());
                }
            }
            Op::PixelShuffle { x, r } => {
                if self.wants(*x) {
                    let gt =
                        Tensor::new(node.value.shape().to_vec(), g.to_vec()).expect("gradient matches value shape");
                    acc(*x, kernels::pixel_unshuffle(&gt, *r).unwrap().into_data());
                }
            }
            Op::PixelUnshuffle { x, r } => {
                if self.wants(*x) {
                    let gt =
                        Tensor::new(node.value.shape().to_vec(), g.to_vec()).expect("gradient matches value shape");
                    acc(*x, kernels::pixel_shuffle(&gt, *r).unwrap().into_data());
                }
            }
            Op::Sum { x } => {
                if self.wants(*x) {
                    acc(*x, vec![g[0]; self.value(*x).len()]);
                }
            }
            Op::Mean { x } => {
                if self.wants(*x) {
                    let n = self.value(*x).len();
                    acc(*x, vec![g[0] / n as f64; n]);
                }
            }
            Op::Sqrt { x } => {
                if self.wants(*x) {
                    let y = node.value.data();
                    acc(*x, g.iter().zip(y).map(|(g, y)| g / (2.0 * y)).collect());
                }
            }
        }
    }
}

/// Scatters pending gathered kernel gradients for `node` (all of them when
/// `node` is `None`) into the full gradient buffers.
fn flush_kernel_grads(pending: &mut PendingKernelGrads, node: Option<usize>, grads: &mut [Option<Vec<f64>>]) {
    if pending.is_empty() {
        return;
    }
    let mut keys: Vec<GatherKey> = pending
        .keys()
        .filter(|key| node.is_none_or(|n| key.0 == n))
        .cloned()
        .collect();
    // fixed order keeps the floating-point sums reproducible
    keys.sort();
    for key in keys {
        let (plan, g) = pending.remove(&key).expect("key just listed");
        let slot = grads[key.0].get_or_insert_with(|| vec![0.0; plan.kernel_len()]);
        plan.scatter_add_kernel(&g, slot);
    }
}
