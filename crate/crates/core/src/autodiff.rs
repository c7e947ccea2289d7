//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are appended
//! in evaluation order, so walking the node list backwards is a valid reverse
//! topological order. Calling [`Graph::backward`] accumulates `∂loss/∂leaf`
//! into the `grad` buffer of every leaf created with `requires_grad`. Repeated
//! calls accumulate; the caller zeroes with [`Graph::zero_grad`]. The graph is
//! meant to be dropped once the gradients have been read.

use crate::error::{dim_err, Result, WdmError};
use crate::tensor::{matmul_nt_into, matmul_tn_into, silu_grad, BinaryOp, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary { a: Var, b: Var, op: BinaryOp, broadcast: bool },
    MatMul { a: Var, b: Var },
    AddRow { a: Var, row: Var },
    Silu { a: Var },
    Scale { a: Var, c: f64 },
    Sum { a: Var },
    Mean { a: Var },
    Mse { pred: Var, target: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// True when some `requires_grad` leaf is upstream of this node.
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Records a leaf; it is differentiated iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let tracked = t.requires_grad();
        self.push(t, Op::Leaf, tracked)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad())
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated on a leaf, or `None` if backward never reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Gradient as a tensor of the leaf's shape; zeros when none was accumulated.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let value = &self.nodes[v.0].value;
        match value.grad() {
            Some(g) => Tensor::new(value.shape().to_vec(), g.to_vec()).expect("grad shape"),
            None => Tensor::zeros(value.shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn elementwise(&mut self, a: Var, b: Var, op: BinaryOp) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let broadcast = va.shape() != vb.shape();
        let out = va.elementwise(vb, op)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Binary { a, b, op, broadcast }, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Mul)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::MatMul { a, b }, tracked))
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.value(a).add_row(self.value(row))?;
        let tracked = self.tracked(a) || self.tracked(row);
        Ok(self.push(out, Op::AddRow { a, row }, tracked))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).silu();
        let tracked = self.tracked(a);
        self.push(out, Op::Silu { a }, tracked)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        let tracked = self.tracked(a);
        self.push(out, Op::Scale { a, c }, tracked)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let tracked = self.tracked(a);
        self.push(out, Op::Sum { a }, tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).mean());
        let tracked = self.tracked(a);
        self.push(out, Op::Mean { a }, tracked)
    }

    /// Mean of squared element differences; differentiable in both arguments.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        p.check_same_shape(t)?;
        let n = p.len() as f64;
        let v = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let tracked = self.tracked(pred) || self.tracked(target);
        Ok(self.push(Tensor::scalar(v), Op::Mse { pred, target }, tracked))
    }

    /// Propagates `∂loss/∂·` back to every tracked leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(WdmError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.tracked {
            return Err(WdmError::Contract(
                "loss does not depend on any leaf that requires a gradient".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {
                    if !g.iter().all(|v| v.is_finite()) {
                        return Err(WdmError::Numeric(format!(
                            "non-finite gradient reached leaf {i}"
                        )));
                    }
                    self.nodes[i].value.accumulate_grad(&g);
                }
                Op::Binary { a, b, op, broadcast } => {
                    let (ga, gb) = self.binary_grads(&g, a, b, op, broadcast);
                    self.send(&mut grads, a, ga);
                    self.send(&mut grads, b, gb);
                }
                Op::MatMul { a, b } => {
                    let (m, k) = self.value(a).dims2()?;
                    let (_, n) = self.value(b).dims2()?;
                    if self.tracked(a) {
                        let mut ga = vec![0.0; m * k];
                        matmul_nt_into(&g, self.value(b).data(), &mut ga, m, k, n);
                        self.send(&mut grads, a, ga);
                    }
                    if self.tracked(b) {
                        let mut gb = vec![0.0; k * n];
                        matmul_tn_into(self.value(a).data(), &g, &mut gb, m, k, n);
                        self.send(&mut grads, b, gb);
                    }
                }
                Op::AddRow { a, row } => {
                    if self.tracked(row) {
                        let c = self.value(row).len();
                        let mut gr = vec![0.0; c];
                        for chunk in g.chunks(c) {
                            gr.iter_mut().zip(chunk).for_each(|(s, v)| *s += v);
                        }
                        self.send(&mut grads, row, gr);
                    }
                    self.send(&mut grads, a, g);
                }
                Op::Silu { a } => {
                    let ga = g
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(gv, &x)| gv * silu_grad(x))
                        .collect();
                    self.send(&mut grads, a, ga);
                }
                Op::Scale { a, c } => {
                    self.send(&mut grads, a, g.iter().map(|v| v * c).collect());
                }
                Op::Sum { a } => {
                    let n = self.value(a).len();
                    self.send(&mut grads, a, vec![g[0]; n]);
                }
                Op::Mean { a } => {
                    let n = self.value(a).len();
                    self.send(&mut grads, a, vec![g[0] / n as f64; n]);
                }
                Op::Mse { pred, target } => {
                    let (p, t) = (self.value(pred), self.value(target));
                    let c = 2.0 * g[0] / p.len() as f64;
                    let d: Vec<f64> = p.data().iter().zip(t.data()).map(|(a, b)| c * (a - b)).collect();
                    if self.tracked(target) {
                        self.send(&mut grads, target, d.iter().map(|v| -v).collect());
                    }
                    self.send(&mut grads, pred, d);
                }
            }
        }
        Ok(())
    }

    fn binary_grads(
        &self,
        g: &[f64],
        a: Var,
        b: Var,
        op: BinaryOp,
        broadcast: bool,
    ) -> (Vec<f64>, Vec<f64>) {
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let bval = |i: usize| if broadcast { vb[0] } else { vb[i] };
        let ga: Vec<f64> = match op {
            BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
            BinaryOp::Mul => g.iter().enumerate().map(|(i, gv)| gv * bval(i)).collect(),
        };
        let per_elem: Vec<f64> = match op {
            BinaryOp::Add => g.to_vec(),
            BinaryOp::Sub => g.iter().map(|v| -v).collect(),
            BinaryOp::Mul => g.iter().zip(va).map(|(gv, av)| gv * av).collect(),
        };
        let gb = if broadcast {
            vec![per_elem.iter().sum()]
        } else {
            per_elem
        };
        (ga, gb)
    }

    fn send(&self, grads: &mut [Option<Vec<f64>>], to: Var, g: Vec<f64>) {
        if !self.tracked(to) {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Central finite-difference gradient of a scalar function of one tensor.
pub fn finite_difference<F>(x: &Tensor, h: f64, mut f: F) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    if out.iter().any(|v| !v.is_finite()) {
        return dim_err("finite difference produced non-finite values");
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Relative error `|a-b| / max(|a|, |b|, floor)` maximised over elements.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
