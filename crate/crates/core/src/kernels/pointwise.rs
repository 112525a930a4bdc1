//! Elementwise activations, channel concatenation and channel softmax.

use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// `x` if `x > 0`, else `alpha * (exp(x) - 1)`.
pub fn elu(x: &Tensor, alpha: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { alpha * libm::expm1(v) })
}

/// Derivative of [`elu`], taken as 1 at the origin.
pub fn elu_backward(x: &Tensor, grad: &Tensor, alpha: f64) -> Tensor {
    let mut dx = grad.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v < 0.0 {
            *d *= alpha * libm::exp(v);
        }
    }
    dx
}

/// Concatenate along the channel axis; batch and spatial sizes must agree.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| config_err!("concat of zero tensors"))?;
    let [n, _, h, w] = first.shape();
    for p in parts {
        let [pn, _, ph, pw] = p.shape();
        if (pn, ph, pw) != (n, h, w) {
            return Err(config_err!("cannot concatenate {:?} with {:?}", p.shape(), first.shape()));
        }
    }
    let c: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for p in parts {
            data.extend_from_slice(p.sample(b));
        }
    }
    Tensor::from_vec([n, c, h, w], data)
}

/// Split a channel-concatenated gradient back into per-part gradients.
pub fn split_channels(grad: &Tensor, channels: &[usize]) -> Vec<Tensor> {
    let [n, _, h, w] = grad.shape();
    let hw = h * w;
    let mut offset = 0;
    channels
        .iter()
        .map(|&c| {
            let mut data = Vec::with_capacity(n * c * hw);
            for b in 0..n {
                let s = grad.sample(b);
                data.extend_from_slice(&s[offset * hw..(offset + c) * hw]);
            }
            offset += c;
            Tensor::from_vec([n, c, h, w], data).expect("split sizes come from the forward pass")
        })
        .collect()
}

/// Softmax over the channel axis at every pixel.
pub fn softmax_channels(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut y = x.clone();
    for b in 0..n {
        let s = y.sample_mut(b);
        for p in 0..hw {
            let max = (0..c).map(|k| s[k * hw + p]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in 0..c {
                let e = libm::exp(s[k * hw + p] - max);
                s[k * hw + p] = e;
                z += e;
            }
            for k in 0..c {
                s[k * hw + p] /= z;
            }
        }
    }
    y
}

/// Backward of [`softmax_channels`] given its output `y`.
pub fn softmax_channels_backward(y: &Tensor, grad: &Tensor) -> Tensor {
    let [n, c, h, w] = y.shape();
    let hw = h * w;
    let mut dx = Tensor::zeros(y.shape());
    for b in 0..n {
        let ys = y.sample(b);
        let gs = grad.sample(b);
        let ds = dx.sample_mut(b);
        for p in 0..hw {
            let dot: f64 = (0..c).map(|k| ys[k * hw + p] * gs[k * hw + p]).sum();
            for k in 0..c {
                ds[k * hw + p] = ys[k * hw + p] * (gs[k * hw + p] - dot);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elu_reference_points() {
        let x = Tensor::from_vec([1, 1, 1, 3], alloc::vec![0.0, 2.5, -1.0]).unwrap();
        let y = elu(&x, 1.0);
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[1], 2.5);
        assert!((y.data()[2] - (-0.632_120_558_828_557_7)).abs() < 1e-12);
        let d = elu_backward(&x, &Tensor::full([1, 1, 1, 3], 1.0), 1.0);
        assert_eq!(d.data()[0], 1.0);
        assert_eq!(d.data()[1], 1.0);
        assert!((d.data()[2] - libm::exp(-1.0)).abs() < 1e-15);
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = Tensor::from_vec([2, 1, 1, 2], alloc::vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec([2, 2, 1, 2], (10..18).map(f64::from).collect()).unwrap();
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), [2, 3, 1, 2]);
        assert_eq!(cat.sample(0), &[1.0, 2.0, 10.0, 11.0, 12.0, 13.0]);
        let parts = split_channels(&cat, &[1, 2]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::zeros([1, 1, 2, 2]);
        let b = Tensor::zeros([1, 1, 3, 3]);
        assert!(concat_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec([1, 3, 1, 2], alloc::vec![1.0, -1.0, 2.0, 0.0, 1000.0, 0.5]).unwrap();
        let y = softmax_channels(&x);
        for p in 0..2 {
            let s: f64 = (0..3).map(|c| y.at(0, c, 0, p)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(y.is_finite());
    }
}
