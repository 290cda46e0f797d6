//! Reverse-mode differentiation over a linear record of tensor ops.
//!
//! Every op computes its value eagerly and appends a node; [`Tape::backward`]
//! walks the nodes in reverse and accumulates vector-Jacobian products.
//! Parameters enter through [`Tape::param`], which deduplicates by id so a
//! weight used several times (e.g. a GRU cell unrolled K steps) receives the
//! summed gradient. A tape reads parameters from a single [`ParamSet`]; frozen
//! values from elsewhere should enter as constants.

use std::collections::HashMap;

use super::tensor::{matmul_into, Activation, ConvGeometry};
use super::{ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulOrderFree(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Offset(Var, f64),
    Act(Var, Activation),
    Softmax {
        x: Var,
        axis: usize,
        mask: Option<Vec<bool>>,
    },
    Abs(Var),
    Sum(Var),
    Mean(Var),
    MeanAxis(Var, usize),
    Reshape(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SelectRows(Var, Vec<usize>),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a parameter, `None` when it did not influence the loss.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|v| self.wrt(*v))
    }

    /// Gradients aligned with `params`, one slot per parameter.
    pub fn for_params(&self, params: &ParamSet) -> Vec<Option<Tensor>> {
        params.ids().map(|id| self.param(id).cloned()).collect()
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

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = self.evaluate(&op, |v| &self.nodes[v.0].value)?;
        Ok(self.push(op, value))
    }

    /// A value that never needs a gradient (images, targets, frozen features).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }

    /// A differentiable input that is not a parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(Op::Param, params.get(id).clone());
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    /// As [`Tape::matmul`] with an order-independent reduction over the shared axis.
    pub fn matmul_order_free(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMulOrderFree(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }

    /// `x[r, c] + b[c]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.record(Op::AddBias(x, b))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.record(Op::Scale(x, k)).expect("scale is infallible")
    }

    pub fn offset(&mut self, x: Var, k: f64) -> Var {
        self.record(Op::Offset(x, k)).expect("offset is infallible")
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.offset(neg, 1.0)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        self.record(Op::Act(x, kind)).expect("activation is infallible")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.record(Op::Softmax { x, axis, mask: None })
    }

    pub fn masked_softmax(&mut self, x: Var, axis: usize, mask: Vec<bool>) -> Result<Var> {
        self.record(Op::Softmax {
            x,
            axis,
            mask: Some(mask),
        })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.record(Op::Abs(x)).expect("abs is infallible")
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.record(Op::Sum(x)).expect("sum is infallible")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        self.record(Op::Mean(x)).expect("mean is infallible")
    }

    /// Mean of a rank-2 tensor along `axis`; the reduced axis is dropped.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.record(Op::MeanAxis(x, axis))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(Op::Reshape(x), value))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Transpose(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.record(Op::SliceCols(x, start, len))
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        self.record(Op::SelectRows(x, rows))
    }

    /// `x[c, h, w]`, `w[o, c*k*k]`, `b[o]` → `[o, oh, ow]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        self.record(Op::Conv2d { x, w, b, geom })
    }

    /// Weighted mean of per-row cross-entropy between `logits[n, c]` and class targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>, weights: Vec<f64>) -> Result<Var> {
        self.record(Op::CrossEntropy {
            logits,
            targets,
            weights,
        })
    }

    /// Recomputes every node from the recorded leaves in tape order.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Constant | Op::Leaf | Op::Param => node.value.clone(),
                Op::Reshape(x) => values[x.0].reshape(node.value.shape())?,
                ref op => self.evaluate(op, |v| &values[v.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    fn evaluate<'a>(&self, op: &Op, val: impl Fn(Var) -> &'a Tensor) -> Result<Tensor>
    where
        Self: 'a,
    {
        Ok(match op {
            Op::Constant | Op::Leaf | Op::Param | Op::Reshape(_) => {
                unreachable!("leaves and reshapes are not re-evaluated")
            }
            Op::MatMul(a, b) => val(*a).matmul(val(*b))?,
            Op::MatMulOrderFree(a, b) => val(*a).matmul_order_free(val(*b))?,
            Op::Add(a, b) => val(*a).add(val(*b))?,
            Op::Sub(a, b) => val(*a).sub(val(*b))?,
            Op::Mul(a, b) => val(*a).mul(val(*b))?,
            Op::AddBias(x, b) => {
                let (x, b) = (val(*x), val(*b));
                if x.rank() != 2 || b.len() != x.shape()[1] {
                    return Err(Error::shape("add_bias", x.shape(), b.shape()));
                }
                let c = x.shape()[1];
                let data = x
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v + b.data()[i % c])
                    .collect();
                Tensor::from_parts(x.shape().to_vec(), data)
            }
            Op::Scale(x, k) => val(*x).scale(*k),
            Op::Offset(x, k) => val(*x).map(|v| v + k),
            Op::Act(x, kind) => val(*x).activation(*kind),
            Op::Softmax { x, axis, mask } => val(*x).masked_softmax(*axis, mask.as_deref())?,
            Op::Abs(x) => val(*x).map(f64::abs),
            Op::Sum(x) => Tensor::scalar(val(*x).sum()),
            Op::Mean(x) => {
                let x = val(*x);
                Tensor::scalar(x.sum() / x.len() as f64)
            }
            Op::MeanAxis(x, axis) => {
                let x = val(*x);
                if x.rank() != 2 || *axis > 1 {
                    return Err(Error::invalid(format!(
                        "mean_axis({axis}) needs rank 2, got {:?}",
                        x.shape()
                    )));
                }
                let (r, c) = (x.shape()[0], x.shape()[1]);
                if *axis == 0 {
                    let mut out = vec![0.0; c];
                    for i in 0..r {
                        for (o, v) in out.iter_mut().zip(x.row(i)) {
                            *o += v;
                        }
                    }
                    out.iter_mut().for_each(|o| *o /= r as f64);
                    Tensor::from_parts(vec![c], out)
                } else {
                    let out = (0..r).map(|i| x.row(i).iter().sum::<f64>() / c as f64).collect();
                    Tensor::from_parts(vec![r], out)
                }
            }
            Op::Transpose(x) => val(*x).transpose()?,
            Op::ConcatCols(parts) => {
                let rows = val(parts[0]).rows();
                if parts.iter().any(|p| val(*p).rows() != rows) {
                    return Err(Error::shape(
                        "concat_cols",
                        val(parts[0]).shape(),
                        val(*parts.iter().find(|p| val(**p).rows() != rows).unwrap()).shape(),
                    ));
                }
                let total: usize = parts.iter().map(|p| val(*p).cols()).sum();
                let mut out = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for p in parts {
                        out.extend_from_slice(val(*p).row(r));
                    }
                }
                Tensor::from_parts(vec![rows, total], out)
            }
            Op::ConcatRows(parts) => {
                let cols = val(parts[0]).cols();
                if let Some(bad) = parts.iter().find(|p| val(**p).cols() != cols) {
                    return Err(Error::shape("concat_rows", val(parts[0]).shape(), val(*bad).shape()));
                }
                let rows: usize = parts.iter().map(|p| val(*p).len() / cols).sum();
                let mut out = Vec::with_capacity(rows * cols);
                for p in parts {
                    out.extend_from_slice(val(*p).data());
                }
                Tensor::from_parts(vec![rows, cols], out)
            }
            Op::SliceCols(x, start, len) => {
                let x = val(*x);
                if x.rank() != 2 || start + len > x.shape()[1] || *len == 0 {
                    return Err(Error::invalid(format!(
                        "slice_cols({start}, {len}) out of range for {:?}",
                        x.shape()
                    )));
                }
                let mut out = Vec::with_capacity(x.rows() * len);
                for r in 0..x.rows() {
                    out.extend_from_slice(&x.row(r)[*start..start + len]);
                }
                Tensor::from_parts(vec![x.rows(), *len], out)
            }
            Op::SelectRows(x, rows) => {
                let x = val(*x);
                if rows.is_empty() || rows.iter().any(|&r| r >= x.rows()) {
                    return Err(Error::invalid(format!(
                        "select_rows {rows:?} out of range for {:?}",
                        x.shape()
                    )));
                }
                let mut out = Vec::with_capacity(rows.len() * x.cols());
                for &r in rows {
                    out.extend_from_slice(x.row(r));
                }
                let mut shape = x.shape().to_vec();
                shape[0] = rows.len();
                Tensor::from_parts(shape, out)
            }
            Op::Conv2d { x, w, b, geom } => {
                let (w, b) = (val(*w), val(*b));
                let cols = val(*x).im2col(geom)?;
                if w.rank() != 2 || w.shape()[1] != geom.patch_len() || b.len() != w.shape()[0] {
                    return Err(Error::shape("conv2d", w.shape(), b.shape()));
                }
                let o = w.shape()[0];
                let n = cols.shape()[1];
                let mut out = vec![0.0; o * n];
                for (i, bias) in b.data().iter().enumerate() {
                    out[i * n..(i + 1) * n].fill(*bias);
                }
                matmul_into(w.data(), cols.data(), &mut out, o, geom.patch_len(), n);
                Tensor::from_parts(vec![o, geom.out_height(), geom.out_width()], out)
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
            } => {
                let l = val(*logits);
                check_ce(l, targets, weights)?;
                let p = l.softmax(1)?;
                let wsum: f64 = weights.iter().sum();
                let loss: f64 = targets
                    .iter()
                    .zip(weights)
                    .enumerate()
                    .map(|(i, (&t, &w))| -w * p.at(i, t).max(f64::MIN_POSITIVE).ln())
                    .sum();
                Tensor::scalar(loss / wsum)
            }
        })
    }

    /// Accumulates d(loss)/d(node) for every node reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) | Op::MatMulOrderFree(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, g.matmul(&bv.transpose()?)?);
                acc(*b, av.transpose()?.matmul(g)?);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                acc(*a, g.mul(val(*b))?);
                acc(*b, g.mul(val(*a))?);
            }
            Op::AddBias(x, b) => {
                acc(*x, g.clone());
                let c = g.shape()[1];
                let mut gb = vec![0.0; c];
                for r in 0..g.rows() {
                    for (o, v) in gb.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*b, Tensor::from_parts(val(*b).shape().to_vec(), gb));
            }
            Op::Scale(x, k) => acc(*x, g.scale(*k)),
            Op::Offset(x, _) => acc(*x, g.clone()),
            Op::Act(x, kind) => {
                let xv = val(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data().iter().zip(node.value.data()))
                    .map(|(gi, (&xi, &yi))| gi * kind.derivative(xi, yi))
                    .collect();
                acc(*x, Tensor::from_parts(xv.shape().to_vec(), data));
            }
            Op::Softmax { x, axis, .. } => {
                let y = &node.value;
                let (outer, len, inner) = y.axis_split(*axis);
                let mut out = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g.data()[idx(j)] * y.data()[idx(j)]).sum();
                        for j in 0..len {
                            out[idx(j)] = y.data()[idx(j)] * (g.data()[idx(j)] - dot);
                        }
                    }
                }
                acc(*x, Tensor::from_parts(y.shape().to_vec(), out));
            }
            Op::Abs(x) => {
                let xv = val(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(gi, xi)| if *xi > 0.0 { *gi } else if *xi < 0.0 { -gi } else { 0.0 })
                    .collect();
                acc(*x, Tensor::from_parts(xv.shape().to_vec(), data));
            }
            Op::Sum(x) => acc(*x, Tensor::full(val(*x).shape(), g.item())),
            Op::Mean(x) => {
                let xv = val(*x);
                acc(*x, Tensor::full(xv.shape(), g.item() / xv.len() as f64));
            }
            Op::MeanAxis(x, axis) => {
                let xv = val(*x);
                let (r, c) = (xv.shape()[0], xv.shape()[1]);
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[i * c + j] = if *axis == 0 {
                            g.data()[j] / r as f64
                        } else {
                            g.data()[i] / c as f64
                        };
                    }
                }
                acc(*x, Tensor::from_parts(vec![r, c], out));
            }
            Op::Reshape(x) => acc(*x, g.reshape(val(*x).shape())?),
            Op::Transpose(x) => acc(*x, g.transpose()?),
            Op::ConcatCols(parts) => {
                let total = g.shape()[1];
                let mut start = 0;
                for p in parts {
                    let pv = val(*p);
                    let w = pv.cols();
                    let mut out = Vec::with_capacity(pv.len());
                    for r in 0..g.rows() {
                        out.extend_from_slice(&g.data()[r * total + start..r * total + start + w]);
                    }
                    acc(*p, Tensor::from_parts(pv.shape().to_vec(), out));
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = val(*p);
                    let n = pv.len();
                    acc(
                        *p,
                        Tensor::from_parts(pv.shape().to_vec(), g.data()[offset..offset + n].to_vec()),
                    );
                    offset += n;
                }
            }
            Op::SliceCols(x, start, len) => {
                let xv = val(*x);
                let c = xv.shape()[1];
                let mut out = vec![0.0; xv.len()];
                for r in 0..xv.rows() {
                    out[r * c + start..r * c + start + len].copy_from_slice(g.row(r));
                }
                acc(*x, Tensor::from_parts(xv.shape().to_vec(), out));
            }
            Op::SelectRows(x, rows) => {
                let xv = val(*x);
                let c = xv.cols();
                let mut out = vec![0.0; xv.len()];
                for (k, &r) in rows.iter().enumerate() {
                    for (o, v) in out[r * c..(r + 1) * c].iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*x, Tensor::from_parts(xv.shape().to_vec(), out));
            }
            Op::Conv2d { x, w, b, geom } => {
                let wv = val(*w);
                let o = wv.shape()[0];
                let n = geom.out_height() * geom.out_width();
                let g2 = Tensor::from_parts(vec![o, n], g.data().to_vec());
                let cols = val(*x).im2col(geom)?;
                acc(*w, g2.matmul(&cols.transpose()?)?);
                let gb = (0..o).map(|i| g2.row(i).iter().sum()).collect();
                acc(*b, Tensor::from_parts(val(*b).shape().to_vec(), gb));
                if !matches!(self.nodes[x.0].op, Op::Constant) {
                    let gcols = wv.transpose()?.matmul(&g2)?;
                    acc(*x, gcols.col2im(geom));
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
            } => {
                let l = val(*logits);
                let mut p = l.softmax(1)?;
                let wsum: f64 = weights.iter().sum();
                let c = l.shape()[1];
                let scale = g.item() / wsum;
                for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    let row = &mut p.data_mut()[i * c..(i + 1) * c];
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= w * scale);
                }
                acc(*logits, p);
            }
        }
        Ok(())
    }
}

fn check_ce(logits: &Tensor, targets: &[usize], weights: &[f64]) -> Result<()> {
    if logits.rank() != 2 || targets.len() != logits.shape()[0] || weights.len() != targets.len() {
        return Err(Error::shape("cross_entropy", logits.shape(), &[targets.len()]));
    }
    if targets.iter().any(|&t| t >= logits.shape()[1]) {
        return Err(Error::invalid("cross_entropy target out of range"));
    }
    if weights.iter().any(|&w| w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid("cross_entropy weights must be non-negative with positive sum"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_vars, finite_difference};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        let y = t.tanh(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 1.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[2]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn shared_param_accumulates() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::scalar(2.0));
        let mut t = Tape::new();
        let a = t.param(&ps, id);
        let b = t.param(&ps, id);
        assert_eq!(a, b);
        let y = t.mul(a, b).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.param(id).unwrap().item(), 4.0);
    }

    /// Every differentiable op against central differences, many seeds.
    #[test]
    fn every_op_matches_finite_differences() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a0 = rand_tensor(&mut rng, &[3, 4]);
            let b0 = rand_tensor(&mut rng, &[4, 2]);
            let c0 = rand_tensor(&mut rng, &[3, 4]);
            let bias0 = rand_tensor(&mut rng, &[2]);
            let img0 = rand_tensor(&mut rng, &[2, 5, 5]);
            let kw0 = rand_tensor(&mut rng, &[3, 2 * 9]);
            let kb0 = rand_tensor(&mut rng, &[3]);
            let inputs = vec![a0, b0, c0, bias0, img0, kw0, kb0];
            let mask = vec![true, false, true, true];
            let build = |t: &mut Tape, v: &[Var]| -> Var {
                let (a, b, c, bias, img, kw, kb) = (v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
                let m = t.matmul(a, b).unwrap();
                let m = t.add_bias(m, bias).unwrap();
                let m = t.tanh(m);
                let ac = t.mul(a, c).unwrap();
                let ac = t.sub(ac, c).unwrap();
                let ac = t.sigmoid(ac);
                let s = t.softmax(ac, 1).unwrap();
                let s0 = t.masked_softmax(ac, 1, mask.clone()).unwrap();
                let s = t.add(s, s0).unwrap();
                let tr = t.transpose(s).unwrap();
                let tm = t.matmul_order_free(tr, m).unwrap();
                let sl = t.slice_cols(tm, 1, 1).unwrap();
                let cat = t.concat_cols(&[tm, sl]).unwrap();
                let rows = t.select_rows(cat, vec![3, 0, 3]).unwrap();
                let stacked = t.concat_rows(&[rows, cat]).unwrap();
                let ma = t.mean_axis(stacked, 0).unwrap();
                let mb = t.mean_axis(stacked, 1).unwrap();
                let geom = ConvGeometry {
                    in_channels: 2,
                    height: 5,
                    width: 5,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                };
                let conv = t.conv2d(img, kw, kb, geom).unwrap();
                let conv = t.relu(conv);
                let conv = t.reshape(conv, &[3, 9]).unwrap();
                let ce = t.cross_entropy(conv, vec![2, 0, 7], vec![1.0, 0.1, 0.5]).unwrap();
                let ab = t.abs(ma);
                let sa = t.sum(ab);
                let sb = t.mean(mb);
                let sb = t.scale(sb, 1.7);
                let sb = t.offset(sb, 0.3);
                let sb = t.one_minus(sb);
                let sum = t.add(sa, sb).unwrap();
                let convm = t.mean(conv);
                let tot = t.add(sum, convm).unwrap();
                t.add(tot, ce).unwrap()
            };
            let report = check_vars(&inputs, &build, 1e-5);
            assert!(
                report.max_rel_error < 1e-4,
                "seed {seed}: rel err {} at {:?}",
                report.max_rel_error,
                report.worst
            );
        }
    }

    #[test]
    fn order_free_matmul_ignores_inner_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = rand_tensor(&mut rng, &[3, 5]);
        let b = rand_tensor(&mut rng, &[5, 2]);
        let perm = [4, 1, 3, 0, 2];
        let ap = Tensor::from_rows(&(0..3).map(|r| perm.iter().map(|&p| a.at(r, p)).collect()).collect::<Vec<_>>()).unwrap();
        let bp = Tensor::from_rows(&perm.iter().map(|&p| b.row(p).to_vec()).collect::<Vec<_>>()).unwrap();
        assert_eq!(a.matmul_order_free(&b).unwrap(), ap.matmul_order_free(&bp).unwrap());
        let plain = a.matmul(&b).unwrap();
        for (x, y) in plain.data().iter().zip(a.matmul_order_free(&b).unwrap().data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = Tape::new();
        let a = t.constant(rand_tensor(&mut rng, &[3, 4]));
        let b = t.constant(rand_tensor(&mut rng, &[4, 4]));
        let m = t.matmul(a, b).unwrap();
        let m = t.tanh(m);
        let r = t.reshape(m, &[4, 3]).unwrap();
        let s = t.softmax(r, 0).unwrap();
        let _ = t.sum(s);
        let replayed = t.replay().unwrap();
        for (i, v) in replayed.iter().enumerate() {
            let orig = t.value(Var(i));
            assert_eq!(orig.shape(), v.shape());
            assert!(orig.data().iter().zip(v.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn finite_difference_helper_on_quadratic() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let g = finite_difference(&[2.0, 1.0], f, 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }
}
