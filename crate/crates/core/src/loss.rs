//! Class weighting and the Dice + weighted cross-entropy training loss.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{config_err, data_err, Result};
use crate::tensor::Tensor;

/// Smoothing term of the Dice ratio.
pub const DICE_EPS: f64 = 1e-7;
/// Floor inside the logarithm of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

/// Pixel counts, frequencies and normalized inverse-frequency weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub counts: Vec<u64>,
    pub frequencies: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn class_weights(counts: &[u64]) -> Result<ClassStats> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(data_err!("class statistics over zero pixels"));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(data_err!("class {c} never occurs; its inverse frequency is undefined"));
    }
    let frequencies: Vec<f64> = counts.iter().map(|&n| n as f64 / total as f64).collect();
    Ok(ClassStats { counts: counts.to_vec(), weights: weights_from_frequencies(&frequencies), frequencies })
}

/// `(1/f_i) / sum_j (1/f_j)`.
pub fn weights_from_frequencies(frequencies: &[f64]) -> Vec<f64> {
    let inv: Vec<f64> = frequencies.iter().map(|f| 1.0 / f).collect();
    let norm: f64 = inv.iter().sum();
    inv.into_iter().map(|v| v / norm).collect()
}

/// Label map `(n, 1, h, w)` of class indices to a one-hot `(n, classes, h, w)`.
pub fn one_hot(labels: &[u8], shape: [usize; 3], classes: usize) -> Result<Tensor> {
    let [n, h, w] = shape;
    if labels.len() != n * h * w {
        return Err(config_err!("label map has {} pixels, expected {}", labels.len(), n * h * w));
    }
    let mut out = Tensor::zeros([n, classes, h, w]);
    let plane = h * w;
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= classes {
            return Err(data_err!("label value {l} outside [0, {classes})"));
        }
        let (b, p) = (i / plane, i % plane);
        out.data_mut()[(b * classes + l) * plane + p] = 1.0;
    }
    Ok(out)
}

fn check_pair(probs: &Var, onehot: &Tensor) -> Result<()> {
    if probs.shape() != onehot.shape() {
        return Err(config_err!("probabilities {:?} and targets {:?} differ in shape", probs.shape(), onehot.shape()));
    }
    Ok(())
}

/// `mean_c [1 - (2 sum p_c y_c + eps) / (sum p_c + sum y_c + eps)]`, sums over
/// batch and pixels.
pub fn dice_loss(probs: &Var, onehot: &Tensor) -> Result<Var> {
    check_pair(probs, onehot)?;
    let p = probs.value();
    let [n, c, _, _] = p.shape();
    let (mut inter, mut psum, mut ysum) = (vec![0.0; c], vec![0.0; c], vec![0.0; c]);
    for b in 0..n {
        for ci in 0..c {
            for (&pv, &yv) in p.plane(b, ci).iter().zip(onehot.plane(b, ci)) {
                inter[ci] += pv * yv;
                psum[ci] += pv;
                ysum[ci] += yv;
            }
        }
    }
    let mut loss = 0.0;
    let mut coef = vec![(0.0, 0.0); c];
    for ci in 0..c {
        let num = 2.0 * inter[ci] + DICE_EPS;
        let den = psum[ci] + ysum[ci] + DICE_EPS;
        loss += 1.0 - num / den;
        // d/dp = -(2y den - num) / den^2 / C
        coef[ci] = (-2.0 / (den * c as f64), num / (den * den * c as f64));
    }
    loss /= c as f64;
    let mut dx = Tensor::zeros(p.shape());
    for b in 0..n {
        for ci in 0..c {
            let (a, k) = coef[ci];
            let y = onehot.plane(b, ci);
            for (i, g) in dx.plane_mut(b, ci).iter_mut().enumerate() {
                *g = a * y[i] + k;
            }
        }
    }
    probs.reduce_with_grad(loss, dx)
}

/// Mean over pixels of `-sum_c w_c y_c ln(p_c + eps)`.
pub fn weighted_ce(probs: &Var, onehot: &Tensor, weights: &[f64]) -> Result<Var> {
    check_pair(probs, onehot)?;
    let p = probs.value();
    let [n, c, h, w] = p.shape();
    if weights.len() != c {
        return Err(config_err!("{} class weights for {c} classes", weights.len()));
    }
    let pixels = (n * h * w) as f64;
    let mut loss = 0.0;
    let mut dx = Tensor::zeros(p.shape());
    for b in 0..n {
        for (ci, &wc) in weights.iter().enumerate() {
            let y = onehot.plane(b, ci);
            let pv = p.plane(b, ci);
            let g = dx.plane_mut(b, ci);
            for i in 0..y.len() {
                if y[i] != 0.0 {
                    loss -= wc * y[i] * libm::log(pv[i] + LOG_EPS);
                    g[i] = -wc * y[i] / ((pv[i] + LOG_EPS) * pixels);
                }
            }
        }
    }
    probs.reduce_with_grad(loss / pixels, dx)
}

/// Dice + weighted cross-entropy on probabilities.
pub fn dice_ce(probs: &Var, onehot: &Tensor, weights: &[f64]) -> Result<Var> {
    let d = dice_loss(probs, onehot)?;
    let ce = weighted_ce(probs, onehot, weights)?;
    Var::sum_scalars(&[d, ce])
}

/// Softmax over channels of raw logits, then [`dice_ce`].
pub fn dice_ce_logits(logits: &Var, onehot: &Tensor, weights: &[f64]) -> Result<Var> {
    dice_ce(&logits.softmax_channels(), onehot, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tests::{check_gradients, random};
    use crate::rng::SeededRng;

    fn probs(shape: [usize; 4], data: &[f64]) -> Var {
        Var::constant(Tensor::from_vec(shape, data.to_vec()).unwrap())
    }

    fn value(v: &Var) -> f64 {
        v.value().data()[0]
    }

    #[test]
    fn published_weight_table() {
        let w = weights_from_frequencies(&[0.0086, 0.3314, 0.0646, 0.0162, 0.5792]);
        let published = [0.58794, 0.01520, 0.07797, 0.31017, 0.00869];
        for (a, b) in w.iter().zip(published) {
            assert!((a - b).abs() < 2e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn weight_examples_and_errors() {
        let s = class_weights(&[10, 10]).unwrap();
        assert_eq!(s.weights, vec![0.5, 0.5]);
        let s = class_weights(&[1, 3]).unwrap();
        assert!((s.weights[0] - 0.75).abs() < 1e-15 && (s.weights[1] - 0.25).abs() < 1e-15);
        assert!(class_weights(&[0, 0]).is_err());
        assert!(class_weights(&[5, 0, 3]).is_err());
    }

    #[test]
    fn dice_examples() {
        let y = Tensor::from_vec([1, 2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(value(&dice_loss(&Var::constant(y.clone()), &y).unwrap()).abs() < 1e-6);
        let wrong = probs([1, 2, 1, 2], &[0.0, 1.0, 1.0, 0.0]);
        assert!((value(&dice_loss(&wrong, &y).unwrap()) - 1.0).abs() < 1e-6);
        let half = probs([1, 2, 1, 1], &[0.5, 0.5]);
        let y1 = Tensor::from_vec([1, 2, 1, 1], vec![1.0, 0.0]).unwrap();
        assert!((value(&dice_loss(&half, &y1).unwrap()) - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn ce_examples() {
        let eps = 1e-7;
        let p = probs([1, 2, 1, 1], &[1.0 - eps, eps]);
        let y = Tensor::from_vec([1, 2, 1, 1], vec![1.0, 0.0]).unwrap();
        assert!(value(&weighted_ce(&p, &y, &[1.0, 1.0]).unwrap()) <= 1e-6);

        let u = Var::constant(Tensor::full([2, 5, 3, 3], 0.2));
        let labels: Vec<u8> = (0..18).map(|i| (i % 5) as u8).collect();
        let y = one_hot(&labels, [2, 3, 3], 5).unwrap();
        let l1 = value(&weighted_ce(&u, &y, &[1.0; 5]).unwrap());
        assert!((l1 - libm::log(5.0)).abs() < 1e-6);
        let w = [0.3, 0.1, 0.2, 0.25, 0.15];
        let w2: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
        let a = value(&weighted_ce(&u, &y, &w).unwrap());
        let b = value(&weighted_ce(&u, &y, &w2).unwrap());
        assert!((b - 2.0 * a).abs() < 1e-14);
    }

    #[test]
    fn dice_ce_is_the_sum() {
        let half = probs([1, 2, 1, 1], &[0.5, 0.5]);
        let y = Tensor::from_vec([1, 2, 1, 1], vec![1.0, 0.0]).unwrap();
        let w = [0.7, 0.3];
        let total = value(&dice_ce(&half, &y, &w).unwrap());
        let d = value(&dice_loss(&half, &y).unwrap());
        let ce = value(&weighted_ce(&half, &y, &w).unwrap());
        assert_eq!(total, d + ce);
        assert!((total - (2.0 / 3.0 + 0.7 * libm::log(2.0))).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = Var::constant(Tensor::full([1, 2, 2, 2], 0.5));
        let y = Tensor::zeros([1, 3, 2, 2]);
        assert!(dice_loss(&p, &y).is_err());
        assert!(weighted_ce(&p, &y, &[1.0; 3]).is_err());
        assert!(one_hot(&[0, 7], [1, 1, 2], 5).is_err());
    }

    #[test]
    fn gradient_through_softmax() {
        let mut rng = SeededRng::new(3);
        let logits = random([2, 5, 3, 4], &mut rng);
        let labels: Vec<u8> = (0..24).map(|_| rng.range(0, 5) as u8).collect();
        let y = one_hot(&labels, [2, 3, 4], 5).unwrap();
        let w = [0.4, 0.1, 0.2, 0.2, 0.1];
        check_gradients(&[logits], |v| dice_ce_logits(&v[0], &y, &w).unwrap());
    }
}
