//! Reverse-mode differentiation over a reference-counted expression graph.
//!
//! A [`Var`] owns its forward value and, when any input requires a gradient,
//! the operation that produced it. Nodes whose inputs are all constants keep
//! no parents, so evaluation without gradients frees intermediates as soon as
//! they go out of scope.

use alloc::collections::BTreeSet;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::error::{config_err, Result};
use crate::kernels::conv::{self, ConvOptions};
use crate::kernels::norm::{self, BatchStats};
use crate::kernels::{pointwise, resample, shuffle};
use crate::tensor::Tensor;

/// A node in the differentiation graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
    grad: RefCell<Option<Tensor>>,
}

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, opts: ConvOptions },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, stride: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Elu { x: Var, alpha: f64 },
    Add { a: Var, b: Var },
    Concat { parts: Vec<Var> },
    ResizeNearest { x: Var },
    ResizeBilinear { x: Var },
    PixelShuffle { x: Var, r: usize },
    Softmax { x: Var },
    /// Scalar function of `x` whose gradient was computed with the value.
    Reduce { x: Var, dx: Tensor },
    Sum { terms: Vec<Var> },
}

impl Op {
    fn parents(&self) -> Vec<&Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } => {
                let mut v = vec![x, w];
                v.extend(b.as_ref());
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Add { a, b } => vec![a, b],
            Op::Concat { parts } => parts.iter().collect(),
            Op::Sum { terms } => terms.iter().collect(),
            Op::Elu { x, .. }
            | Op::ResizeNearest { x }
            | Op::ResizeBilinear { x }
            | Op::PixelShuffle { x, .. }
            | Op::Softmax { x }
            | Op::Reduce { x, .. } => vec![x],
        }
    }
}

impl core::fmt::Debug for Var {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("value", &self.0.value)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    fn from_op(value: Tensor, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        let op = if requires_grad { op } else { Op::Leaf };
        Var(Rc::new(Node { value, requires_grad, op, grad: RefCell::new(None) }))
    }

    /// A graph input. Gradients accumulate on it when `requires_grad` is set.
    pub fn leaf(value: Tensor, requires_grad: bool) -> Var {
        Var(Rc::new(Node { value, requires_grad, op: Op::Leaf, grad: RefCell::new(None) }))
    }

    pub fn constant(value: Tensor) -> Var {
        Var::leaf(value, false)
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> [usize; 4] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Accumulated gradient (leaves only, after [`Var::backward`]).
    pub fn grad(&self) -> Option<Tensor> {
        self.0.grad.borrow().clone()
    }

    pub fn take_grad(&self) -> Option<Tensor> {
        self.0.grad.borrow_mut().take()
    }

    fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    fn accumulate(&self, g: Tensor) {
        if !self.requires_grad() {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.add_scaled(&g, 1.0).expect("gradient shape matches value"),
            None => *slot = Some(g),
        }
    }

    /// Back-propagate from this scalar node into every leaf that requires a
    /// gradient.
    pub fn backward(&self) -> Result<()> {
        if self.0.value.len() != 1 {
            return Err(config_err!("backward needs a scalar, got {:?}", self.shape()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        self.accumulate(Tensor::scalar(1.0));
        for node in order.iter().rev() {
            let is_leaf = matches!(node.0.op, Op::Leaf);
            if is_leaf {
                continue;
            }
            let Some(g) = node.0.grad.borrow_mut().take() else { continue };
            node.propagate(&g)?;
        }
        Ok(())
    }

    /// Nodes reachable through gradient-carrying edges, parents first.
    fn topo_order(&self) -> Vec<Var> {
        let mut seen = BTreeSet::new();
        let mut order = Vec::new();
        // (node, children already pushed)
        let mut stack = vec![(self.clone(), false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                order.push(v);
                continue;
            }
            if !seen.insert(v.id()) {
                continue;
            }
            stack.push((v.clone(), true));
            for p in v.0.op.parents() {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    fn propagate(&self, g: &Tensor) -> Result<()> {
        match &self.0.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, opts } => {
                let (dx, dw) = conv::conv2d_backward(x.value(), w.value(), g, opts, x.requires_grad())?;
                if let Some(dx) = dx {
                    x.accumulate(dx);
                }
                w.accumulate(dw);
                if let Some(b) = b {
                    b.accumulate(conv::bias_grad(g));
                }
            }
            Op::ConvTranspose2d { x, w, b, stride } => {
                let (dx, dw) =
                    conv::conv_transpose2d_backward(x.value(), w.value(), g, *stride, x.requires_grad())?;
                if let Some(dx) = dx {
                    x.accumulate(dx);
                }
                w.accumulate(dw);
                if let Some(b) = b {
                    b.accumulate(conv::bias_grad(g));
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, inv_std, batch_stats } => {
                let (dx, dgamma, dbeta) =
                    norm::batch_norm_backward(x.value(), gamma.value(), g, mean, inv_std, *batch_stats);
                x.accumulate(dx);
                gamma.accumulate(dgamma.reshape(gamma.shape())?);
                beta.accumulate(dbeta.reshape(beta.shape())?);
            }
            Op::Elu { x, alpha } => x.accumulate(pointwise::elu_backward(x.value(), g, *alpha)),
            Op::Add { a, b } => {
                a.accumulate(g.clone());
                b.accumulate(g.clone());
            }
            Op::Concat { parts } => {
                let sizes: Vec<usize> = parts.iter().map(|p| p.value().channels()).collect();
                for (p, gp) in parts.iter().zip(pointwise::split_channels(g, &sizes)) {
                    p.accumulate(gp);
                }
            }
            Op::ResizeNearest { x } => x.accumulate(resample::resize_nearest_backward(x.shape(), g)),
            Op::ResizeBilinear { x } => x.accumulate(resample::resize_bilinear_backward(x.shape(), g)),
            Op::PixelShuffle { x, r } => x.accumulate(shuffle::pixel_unshuffle(g, *r)?),
            Op::Softmax { x } => x.accumulate(pointwise::softmax_channels_backward(self.value(), g)),
            Op::Reduce { x, dx } => {
                let mut d = dx.clone();
                d.scale(g.data()[0]);
                x.accumulate(d);
            }
            Op::Sum { terms } => {
                for t in terms {
                    t.accumulate(g.clone());
                }
            }
        }
        Ok(())
    }

    // ---- operations -------------------------------------------------------

    pub fn conv2d(&self, w: &Var, b: Option<&Var>, opts: ConvOptions) -> Result<Var> {
        self.value().ensure_finite("conv2d input")?;
        let y = conv::conv2d(self.value(), w.value(), b.map(Var::value), &opts)?;
        Ok(Var::from_op(y, Op::Conv2d { x: self.clone(), w: w.clone(), b: b.cloned(), opts }))
    }

    pub fn conv_transpose2d(&self, w: &Var, b: Option<&Var>, stride: usize) -> Result<Var> {
        self.value().ensure_finite("conv_transpose2d input")?;
        let y = conv::conv_transpose2d(self.value(), w.value(), b.map(Var::value), stride)?;
        Ok(Var::from_op(y, Op::ConvTranspose2d { x: self.clone(), w: w.clone(), b: b.cloned(), stride }))
    }

    /// Batch normalization with batch statistics; returns the statistics for
    /// the caller's running-average update.
    pub fn batch_norm_train(&self, gamma: &Var, beta: &Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (y, stats) = norm::batch_norm_train(self.value(), gamma.value(), beta.value(), eps)?;
        let op = Op::BatchNorm {
            x: self.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            mean: stats.mean.clone(),
            inv_std: stats.inv_std.clone(),
            batch_stats: true,
        };
        Ok((Var::from_op(y, op), stats))
    }

    /// Batch normalization with fixed running statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Var,
        beta: &Var,
        running_mean: &Tensor,
        running_var: &Tensor,
        eps: f64,
    ) -> Result<Var> {
        let y = norm::batch_norm_eval(self.value(), gamma.value(), beta.value(), running_mean, running_var, eps)?;
        let inv_std = running_var.data().iter().map(|v| 1.0 / libm::sqrt(v.max(0.0) + eps)).collect();
        let op = Op::BatchNorm {
            x: self.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            mean: running_mean.data().to_vec(),
            inv_std,
            batch_stats: false,
        };
        Ok(Var::from_op(y, op))
    }

    pub fn elu(&self, alpha: f64) -> Var {
        Var::from_op(pointwise::elu(self.value(), alpha), Op::Elu { x: self.clone(), alpha })
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        let y = self.value().zip_map(other.value(), |a, b| a + b)?;
        Ok(Var::from_op(y, Op::Add { a: self.clone(), b: other.clone() }))
    }

    pub fn concat_channels(parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0].clone());
        }
        let values: Vec<&Tensor> = parts.iter().map(Var::value).collect();
        let y = pointwise::concat_channels(&values)?;
        Ok(Var::from_op(y, Op::Concat { parts: parts.to_vec() }))
    }

    pub fn resize_nearest(&self, out_h: usize, out_w: usize) -> Result<Var> {
        let y = resample::resize_nearest(self.value(), out_h, out_w)?;
        Ok(Var::from_op(y, Op::ResizeNearest { x: self.clone() }))
    }

    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Var> {
        let y = resample::resize_bilinear(self.value(), out_h, out_w)?;
        Ok(Var::from_op(y, Op::ResizeBilinear { x: self.clone() }))
    }

    pub fn pixel_shuffle(&self, r: usize) -> Result<Var> {
        let y = shuffle::pixel_shuffle(self.value(), r)?;
        Ok(Var::from_op(y, Op::PixelShuffle { x: self.clone(), r }))
    }

    pub fn softmax_channels(&self) -> Var {
        Var::from_op(pointwise::softmax_channels(self.value()), Op::Softmax { x: self.clone() })
    }

    /// Scalar node `value` depending on `self` with known gradient `dx`.
    pub fn reduce_with_grad(&self, value: f64, dx: Tensor) -> Result<Var> {
        dx.expect_shape(self.shape())?;
        Ok(Var::from_op(Tensor::scalar(value), Op::Reduce { x: self.clone(), dx }))
    }

    /// `sum(weights * self)`; handy as a probe functional in gradient checks.
    pub fn weighted_sum(&self, weights: &Tensor) -> Result<Var> {
        let value = self.value().data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        self.reduce_with_grad(value, weights.clone())
    }

    /// Sum of scalar nodes.
    pub fn sum_scalars(terms: &[Var]) -> Result<Var> {
        if terms.iter().any(|t| t.value().len() != 1) {
            return Err(config_err!("sum_scalars expects scalar terms"));
        }
        let value = terms.iter().map(|t| t.value().data()[0]).sum();
        Ok(Var::from_op(Tensor::scalar(value), Op::Sum { terms: terms.to_vec() }))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::SeededRng;

    pub(crate) fn random(shape: [usize; 4], rng: &mut SeededRng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    /// Central-difference check of every element of every input.
    pub(crate) fn check_gradients(inputs: &[Tensor], f: impl Fn(&[Var]) -> Var) {
        let vars: Vec<Var> = inputs.iter().map(|t| Var::leaf(t.clone(), true)).collect();
        f(&vars).backward().unwrap();
        let h = 1e-4;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = vars[k].grad().expect("input reached by backward");
            for i in 0..input.len() {
                let eval = |delta: f64| {
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, t)| {
                            let mut t = t.clone();
                            if j == k {
                                t.data_mut()[i] += delta;
                            }
                            Var::constant(t)
                        })
                        .collect();
                    f(&vs).value().data()[0]
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.data()[i];
                let scale = a.abs().max(numeric.abs()).max(1e-6);
                assert!((a - numeric).abs() / scale <= 1e-3, "input {k} elem {i}: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = SeededRng::new(21);
        let x = random([2, 2, 5, 5], &mut rng);
        let w = random([3, 2, 3, 3], &mut rng);
        let b = random([1, 3, 1, 1], &mut rng);
        let probe = random([2, 3, 3, 3], &mut rng);
        check_gradients(&[x.clone(), w, b], |v| {
            v[0].conv2d(&v[1], Some(&v[2]), ConvOptions::same().stride(2)).unwrap().weighted_sum(&probe).unwrap()
        });
        let dw = random([2, 1, 3, 3], &mut rng);
        let probe = random([2, 2, 5, 5], &mut rng);
        check_gradients(&[x, dw], |v| {
            v[0].conv2d(&v[1], None, ConvOptions::same().dilation(2, 1).depthwise())
                .unwrap()
                .weighted_sum(&probe)
                .unwrap()
        });
    }

    #[test]
    fn conv_transpose_gradients() {
        let mut rng = SeededRng::new(22);
        let x = random([1, 2, 3, 3], &mut rng);
        let w = random([2, 3, 2, 2], &mut rng);
        let b = random([1, 3, 1, 1], &mut rng);
        let probe = random([1, 3, 6, 6], &mut rng);
        check_gradients(&[x, w, b], |v| {
            v[0].conv_transpose2d(&v[1], Some(&v[2]), 2).unwrap().weighted_sum(&probe).unwrap()
        });
    }

    #[test]
    fn batch_norm_gradients_both_modes() {
        let mut rng = SeededRng::new(23);
        let x = random([2, 3, 2, 2], &mut rng);
        let gamma = random([1, 3, 1, 1], &mut rng);
        let beta = random([1, 3, 1, 1], &mut rng);
        let probe = random([2, 3, 2, 2], &mut rng);
        check_gradients(&[x.clone(), gamma.clone(), beta.clone()], |v| {
            v[0].batch_norm_train(&v[1], &v[2], 1e-5).unwrap().0.weighted_sum(&probe).unwrap()
        });
        let rm = random([1, 3, 1, 1], &mut rng);
        let rv = Tensor::full([1, 3, 1, 1], 0.7);
        check_gradients(&[x, gamma, beta], |v| {
            v[0].batch_norm_eval(&v[1], &v[2], &rm, &rv, 1e-5).unwrap().weighted_sum(&probe).unwrap()
        });
    }

    #[test]
    fn pointwise_and_resampling_gradients() {
        let mut rng = SeededRng::new(24);
        let x = random([1, 4, 3, 3], &mut rng);
        let y = random([1, 4, 3, 3], &mut rng);
        let p6 = random([1, 4, 6, 7], &mut rng);
        let p2 = random([1, 1, 6, 6], &mut rng);
        let p3 = random([1, 8, 3, 3], &mut rng);
        check_gradients(&[x.clone(), y.clone()], |v| {
            let s = v[0].elu(1.0).add(&v[1]).unwrap();
            Var::concat_channels(&[s, v[1].clone()]).unwrap().softmax_channels().weighted_sum(&p3).unwrap()
        });
        check_gradients(&[x.clone()], |v| v[0].resize_nearest(6, 7).unwrap().weighted_sum(&p6).unwrap());
        check_gradients(&[x.clone()], |v| v[0].resize_bilinear(6, 7).unwrap().weighted_sum(&p6).unwrap());
        check_gradients(&[x], |v| v[0].pixel_shuffle(2).unwrap().resize_nearest(6, 6).unwrap().weighted_sum(&p2).unwrap());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let x = Var::leaf(Tensor::full([1, 1, 1, 1], 3.0), true);
        let y = x.add(&x).unwrap();
        let z = y.weighted_sum(&Tensor::scalar(1.0)).unwrap();
        z.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0]);
    }

    #[test]
    fn constants_keep_no_parents() {
        let x = Var::constant(Tensor::full([1, 1, 2, 2], 1.0));
        let y = x.elu(1.0);
        assert!(!y.requires_grad());
        assert!(matches!(y.0.op, Op::Leaf));
    }

    #[test]
    fn backward_rejects_non_scalars() {
        let x = Var::leaf(Tensor::zeros([1, 1, 2, 2]), true);
        assert!(x.elu(1.0).backward().is_err());
    }

    #[test]
    fn non_finite_input_is_a_numeric_error() {
        let mut t = Tensor::zeros([1, 1, 3, 3]);
        t.data_mut()[4] = f64::INFINITY;
        let w = Var::constant(Tensor::full([1, 1, 3, 3], 1.0));
        let err = Var::constant(t).conv2d(&w, None, ConvOptions::default()).unwrap_err();
        assert!(matches!(err, crate::Error::Numeric(_)));
    }
}
