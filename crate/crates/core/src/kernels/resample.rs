//! Nearest and bilinear spatial resizing.

use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Source index for destination `dst` under `src = floor(dst * in / out)`.
#[inline]
pub fn nearest_index(dst: usize, input: usize, output: usize) -> usize {
    dst * input / output
}

fn check_target(out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(config_err!("resize target must be positive, got {out_h}x{out_w}"));
    }
    Ok(())
}

/// Nearest-neighbour resize; works for both up- and down-sampling.
pub fn resize_nearest(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    check_target(out_h, out_w)?;
    let [n, c, h, w] = x.shape();
    let rows: Vec<usize> = (0..out_h).map(|y| nearest_index(y, h, out_h)).collect();
    let cols: Vec<usize> = (0..out_w).map(|v| nearest_index(v, w, out_w)).collect();
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for b in 0..n {
        for ci in 0..c {
            let src = x.plane(b, ci);
            let dst = out.plane_mut(b, ci);
            for (oy, &sy) in rows.iter().enumerate() {
                for (ox, &sx) in cols.iter().enumerate() {
                    dst[oy * out_w + ox] = src[sy * w + sx];
                }
            }
        }
    }
    Ok(out)
}

pub fn resize_nearest_backward(input_shape: [usize; 4], grad: &Tensor) -> Tensor {
    let [n, c, h, w] = input_shape;
    let [_, _, out_h, out_w] = grad.shape();
    let mut dx = Tensor::zeros(input_shape);
    for b in 0..n {
        for ci in 0..c {
            let g = grad.plane(b, ci);
            let d = dx.plane_mut(b, ci);
            for oy in 0..out_h {
                let sy = nearest_index(oy, h, out_h);
                for ox in 0..out_w {
                    d[sy * w + nearest_index(ox, w, out_w)] += g[oy * out_w + ox];
                }
            }
        }
    }
    dx
}

/// Two taps and the weight of the upper one along one axis, half-pixel
/// centres, no corner alignment, edges clamped.
fn linear_taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel centres (no corner alignment).
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    check_target(out_h, out_w)?;
    let [n, c, h, w] = x.shape();
    let ty = linear_taps(out_h, h);
    let tx = linear_taps(out_w, w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for b in 0..n {
        for ci in 0..c {
            let src = x.plane(b, ci);
            let dst = out.plane_mut(b, ci);
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                    let bot = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                    dst[oy * out_w + ox] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
    }
    Ok(out)
}

pub fn resize_bilinear_backward(input_shape: [usize; 4], grad: &Tensor) -> Tensor {
    let [n, c, h, w] = input_shape;
    let [_, _, out_h, out_w] = grad.shape();
    let ty = linear_taps(out_h, h);
    let tx = linear_taps(out_w, w);
    let mut dx = Tensor::zeros(input_shape);
    for b in 0..n {
        for ci in 0..c {
            let g = grad.plane(b, ci);
            let d = dx.plane_mut(b, ci);
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let gv = g[oy * out_w + ox];
                    d[y0 * w + x0] += gv * (1.0 - ly) * (1.0 - lx);
                    d[y0 * w + x1] += gv * (1.0 - ly) * lx;
                    d[y1 * w + x0] += gv * ly * (1.0 - lx);
                    d[y1 * w + x1] += gv * ly * lx;
                }
            }
        }
    }
    dx
}

/// Box average over each output pixel's footprint, source rows
/// `[floor(o*in/out), floor((o+1)*in/out))` (at least one). Downsampling only.
pub fn downsample_area(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    check_target(out_h, out_w)?;
    let [n, c, h, w] = x.shape();
    if out_h > h || out_w > w {
        return Err(config_err!("area downsampling cannot enlarge {h}x{w} to {out_h}x{out_w}"));
    }
    let span = |o: usize, input: usize, output: usize| {
        let lo = o * input / output;
        let hi = ((o + 1) * input / output).max(lo + 1);
        lo..hi
    };
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for b in 0..n {
        for ci in 0..c {
            let src = x.plane(b, ci);
            let dst = out.plane_mut(b, ci);
            for oy in 0..out_h {
                let rows = span(oy, h, out_h);
                for ox in 0..out_w {
                    let cols = span(ox, w, out_w);
                    let mut acc = 0.0;
                    for y in rows.clone() {
                        acc += src[y * w + cols.start..y * w + cols.end].iter().sum::<f64>();
                    }
                    dst[oy * out_w + ox] = acc / (rows.len() * cols.len()) as f64;
                }
            }
        }
    }
    Ok(out)
}
