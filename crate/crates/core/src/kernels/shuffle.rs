//! Depth-to-space rearrangement.

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// `out[b, c, h*r + i, w*r + j] = in[b, c*r*r + i*r + j, h, w]`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if r == 0 || c % (r * r) != 0 {
        return Err(config_err!("pixel shuffle by {r} needs channels divisible by {}, got {c}", r * r));
    }
    let oc = c / (r * r);
    let mut out = Tensor::zeros([n, oc, h * r, w * r]);
    for b in 0..n {
        for co in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let src = x.plane(b, co * r * r + i * r + j);
                    for y in 0..h {
                        for xx in 0..w {
                            out.set(b, co, y * r + i, xx * r + j, src[y * w + xx]);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`] (space-to-depth).
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(config_err!("pixel unshuffle by {r} needs spatial size divisible by {r}, got {h}x{w}"));
    }
    let (ih, iw) = (h / r, w / r);
    let mut out = Tensor::zeros([n, c * r * r, ih, iw]);
    for b in 0..n {
        for co in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let ch = co * r * r + i * r + j;
                    for y in 0..ih {
                        for xx in 0..iw {
                            let v = x.at(b, co, y * r + i, xx * r + j);
                            out.set(b, ch, y, xx, v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
