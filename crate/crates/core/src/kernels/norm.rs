//! Per-channel batch normalization.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Statistics of one training-mode normalization, kept for the backward pass
/// and the running-average update.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Elements per channel that contributed.
    pub count: usize,
}

impl BatchStats {
    /// Unbiased variance, as folded into the running estimate.
    pub fn unbiased_var(&self) -> Vec<f64> {
        if self.count < 2 {
            return self.var.clone();
        }
        let k = self.count as f64 / (self.count - 1) as f64;
        self.var.iter().map(|v| v * k).collect()
    }
}

fn check_params(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<()> {
    let c = x.channels();
    if gamma.len() != c || beta.len() != c {
        return Err(config_err!("batch norm over {} channels got {} scales and {} shifts", c, gamma.len(), beta.len()));
    }
    if eps <= 0.0 {
        return Err(config_err!("batch norm epsilon must be positive, got {eps}"));
    }
    Ok(())
}

/// Two-pass per-channel mean and biased variance.
pub fn channel_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let [n, c, _, _] = x.shape();
    let m = (n * x.plane_len()) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let s: f64 = (0..n).map(|b| x.plane(b, ci).iter().sum::<f64>()).sum();
        mean[ci] = s / m;
        let ss: f64 = (0..n)
            .map(|b| x.plane(b, ci).iter().map(|v| (v - mean[ci]) * (v - mean[ci])).sum::<f64>())
            .sum();
        var[ci] = ss / m;
    }
    (mean, var)
}

fn affine(x: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &[f64], inv_std: &[f64]) -> Tensor {
    let [n, c, _, _] = x.shape();
    let mut y = x.clone();
    for b in 0..n {
        for ci in 0..c {
            let (g, bt, mu, is) = (gamma.data()[ci], beta.data()[ci], mean[ci], inv_std[ci]);
            y.plane_mut(b, ci).iter_mut().for_each(|v| *v = g * (*v - mu) * is + bt);
        }
    }
    y
}

/// Normalize with batch statistics.
pub fn batch_norm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, BatchStats)> {
    check_params(x, gamma, beta, eps)?;
    let (mean, var) = channel_moments(x);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
    let y = affine(x, gamma, beta, &mean, &inv_std);
    let count = x.batch() * x.plane_len();
    Ok((y, BatchStats { mean, var, inv_std, count }))
}

/// Normalize with running statistics.
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    check_params(x, gamma, beta, eps)?;
    if running_mean.len() != x.channels() || running_var.len() != x.channels() {
        return Err(config_err!("running statistics do not match {} channels", x.channels()));
    }
    let inv_std: Vec<f64> = running_var.data().iter().map(|v| 1.0 / libm::sqrt(v.max(0.0) + eps)).collect();
    Ok(affine(x, gamma, beta, running_mean.data(), &inv_std))
}

/// Gradients of a normalization with respect to `(x, gamma, beta)`.
///
/// With `batch_stats` set the statistics are treated as functions of `x`
/// (training mode); otherwise `mean`/`inv_std` are constants (eval mode).
pub fn batch_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    grad: &Tensor,
    mean: &[f64],
    inv_std: &[f64],
    batch_stats: bool,
) -> (Tensor, Tensor, Tensor) {
    let [n, c, _, _] = x.shape();
    let m = (n * x.plane_len()) as f64;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ci in 0..c {
        let (mu, is, g) = (mean[ci], inv_std[ci], gamma.data()[ci]);
        let (mut sg, mut sgx) = (0.0, 0.0);
        for b in 0..n {
            for (&gv, &xv) in grad.plane(b, ci).iter().zip(x.plane(b, ci)) {
                sg += gv;
                sgx += gv * (xv - mu) * is;
            }
        }
        dbeta[ci] = sg;
        dgamma[ci] = sgx;
        for b in 0..n {
            let gp = grad.plane(b, ci);
            let xp = x.plane(b, ci);
            let dp = dx.plane_mut(b, ci);
            for i in 0..gp.len() {
                dp[i] = if batch_stats {
                    let xhat = (xp[i] - mu) * is;
                    g * is / m * (m * gp[i] - sg - xhat * sgx)
                } else {
                    g * is * gp[i]
                };
            }
        }
    }
    (dx, Tensor::channel_vector(&dgamma), Tensor::channel_vector(&dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn eval_identity_parameters_are_near_identity() {
        let x = Tensor::from_vec([1, 2, 1, 2], alloc::vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let ones = Tensor::full([1, 2, 1, 1], 1.0);
        let zeros = Tensor::zeros([1, 2, 1, 1]);
        let y = batch_norm_eval(&x, &ones, &zeros, &zeros, &ones, 1e-5).unwrap();
        let scale = 1.0 / libm::sqrt(1.0 + 1e-5);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-15);
        }
    }

    #[test]
    fn train_mode_standardizes_channels() {
        // channel values mean 5, variance 4
        let x = Tensor::from_vec([2, 1, 1, 2], alloc::vec![3.0, 7.0, 3.0, 7.0]).unwrap();
        let (y, stats) =
            batch_norm_train(&x, &Tensor::full([1, 1, 1, 1], 1.0), &Tensor::zeros([1, 1, 1, 1]), 1e-5).unwrap();
        assert!((stats.mean[0] - 5.0).abs() < 1e-12 && (stats.var[0] - 4.0).abs() < 1e-12);
        let (m, v) = channel_moments(&y);
        assert!(m[0].abs() < 1e-5 && (v[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn statistics_match_two_pass_oracle() {
        let mut rng = SeededRng::new(5);
        let x = Tensor::from_vec([3, 2, 4, 4], (0..96).map(|_| 3.0 + 2.0 * rng.normal()).collect()).unwrap();
        let (_, stats) =
            batch_norm_train(&x, &Tensor::full([1, 2, 1, 1], 1.0), &Tensor::zeros([1, 2, 1, 1]), 1e-5).unwrap();
        for c in 0..2 {
            let vals: alloc::vec::Vec<f64> = (0..3).flat_map(|b| x.plane(b, c).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((stats.mean[c] - mean).abs() < 1e-10);
            assert!((stats.var[c] - var).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_variance_channel_is_finite() {
        let x = Tensor::full([2, 1, 2, 2], 4.0);
        let (y, _) =
            batch_norm_train(&x, &Tensor::full([1, 1, 1, 1], 1.0), &Tensor::zeros([1, 1, 1, 1]), 1e-5).unwrap();
        assert!(y.is_finite());
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_nonpositive_epsilon() {
        let x = Tensor::zeros([1, 1, 1, 1]);
        let one = Tensor::full([1, 1, 1, 1], 1.0);
        assert!(batch_norm_train(&x, &one, &one, 0.0).is_err());
    }
}
