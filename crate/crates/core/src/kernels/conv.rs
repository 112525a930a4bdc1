//! Cross-correlation and transposed convolution, forward and backward.
//!
//! Dense convolutions go through im2col + GEMM, processed in bands of output
//! rows so the column buffer stays bounded for large inputs. Depthwise
//! convolutions use direct loops.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::gemm::{gemm_ld, MatRef};
use crate::tensor::Tensor;

/// Upper bound on column-buffer elements per band (32 MiB of f64).
const COL_BUDGET: usize = 1 << 22;

/// Padding request, resolved against a concrete input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Padding {
    /// No padding.
    Valid,
    /// Output size `ceil(in / stride)`; odd totals put the extra pad at the
    /// bottom/right.
    Same,
    /// Symmetric padding of the given amount on all sides.
    Symmetric(usize),
}

/// Concrete pads on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pads {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

/// Options for [`conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvOptions {
    pub stride: usize,
    pub padding: Padding,
    pub dilation: (usize, usize),
    /// One filter per input channel (`groups == channels`, multiplier 1).
    pub depthwise: bool,
}

impl Default for ConvOptions {
    fn default() -> Self {
        Self { stride: 1, padding: Padding::Valid, dilation: (1, 1), depthwise: false }
    }
}

impl ConvOptions {
    pub fn same() -> Self {
        Self { padding: Padding::Same, ..Self::default() }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn dilation(mut self, rows: usize, cols: usize) -> Self {
        self.dilation = (rows, cols);
        self
    }

    pub fn depthwise(mut self) -> Self {
        self.depthwise = true;
        self
    }
}

fn same_pads(input: usize, kernel_extent: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel_extent).saturating_sub(input);
    (total / 2, total - total / 2)
}

/// Sliding-window geometry shared by im2col, col2im and the direct kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pads: Pads,
    pub dil_h: usize,
    pub dil_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    pub fn new(
        channels: usize,
        (in_h, in_w): (usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        padding: Padding,
        (dil_h, dil_w): (usize, usize),
    ) -> Result<Self> {
        if stride == 0 || dil_h == 0 || dil_w == 0 || kh == 0 || kw == 0 {
            return Err(config_err!("stride, dilation and kernel size must be positive"));
        }
        let ext_h = dil_h * (kh - 1) + 1;
        let ext_w = dil_w * (kw - 1) + 1;
        let pads = match padding {
            Padding::Valid => Pads::default(),
            Padding::Symmetric(p) => Pads { top: p, bottom: p, left: p, right: p },
            Padding::Same => {
                let (top, bottom) = same_pads(in_h, ext_h, stride);
                let (left, right) = same_pads(in_w, ext_w, stride);
                Pads { top, bottom, left, right }
            }
        };
        let ph = in_h + pads.top + pads.bottom;
        let pw = in_w + pads.left + pads.right;
        if ph < ext_h || pw < ext_w {
            return Err(config_err!(
                "effective kernel {}x{} exceeds padded input {}x{}",
                ext_h,
                ext_w,
                ph,
                pw
            ));
        }
        Ok(Self {
            channels,
            in_h,
            in_w,
            kh,
            kw,
            stride,
            pads,
            dil_h,
            dil_w,
            out_h: (ph - ext_h) / stride + 1,
            out_w: (pw - ext_w) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn band_rows(&self) -> usize {
        (COL_BUDGET / (self.col_rows() * self.out_w).max(1)).clamp(1, self.out_h)
    }

    /// Input row for output row `oy` and kernel row `ky`, if inside the image.
    #[inline]
    fn src_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.stride + ky * self.dil_h).checked_sub(self.pads.top).filter(|&y| y < self.in_h)
    }

    #[inline]
    fn src_col(&self, ox: usize, kx: usize) -> Option<usize> {
        (ox * self.stride + kx * self.dil_w).checked_sub(self.pads.left).filter(|&x| x < self.in_w)
    }

    /// Fill `col` (`col_rows x (rows.len() * out_w)`) from one sample.
    fn im2col(&self, x: &[f64], rows: core::ops::Range<usize>, col: &mut [f64]) {
        let n = rows.len() * self.out_w;
        let plane = self.in_h * self.in_w;
        for c in 0..self.channels {
            let xc = &x[c * plane..(c + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut col[r * n..(r + 1) * n];
                    for (i, oy) in rows.clone().enumerate() {
                        let d = &mut dst[i * self.out_w..(i + 1) * self.out_w];
                        match self.src_row(oy, ky) {
                            None => d.fill(0.0),
                            Some(y) => {
                                for (ox, v) in d.iter_mut().enumerate() {
                                    *v = self.src_col(ox, kx).map_or(0.0, |sx| xc[y * self.in_w + sx]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add `col` back onto one sample (adjoint of [`Self::im2col`]).
    fn col2im_add(&self, col: &[f64], rows: core::ops::Range<usize>, x: &mut [f64]) {
        let n = rows.len() * self.out_w;
        let plane = self.in_h * self.in_w;
        for c in 0..self.channels {
            let xc = &mut x[c * plane..(c + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (c * self.kh + ky) * self.kw + kx;
                    let src = &col[r * n..(r + 1) * n];
                    for (i, oy) in rows.clone().enumerate() {
                        let Some(y) = self.src_row(oy, ky) else { continue };
                        for ox in 0..self.out_w {
                            if let Some(sx) = self.src_col(ox, kx) {
                                xc[y * self.in_w + sx] += src[i * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn bands(g: &Geometry) -> impl Iterator<Item = core::ops::Range<usize>> + '_ {
    let step = g.band_rows();
    (0..g.out_h).step_by(step).map(move |r0| r0..(r0 + step).min(g.out_h))
}

/// Validate shapes and build the geometry of a convolution.
pub fn conv_geometry(x: &Tensor, w: &Tensor, opts: &ConvOptions) -> Result<Geometry> {
    let [_, c, h, wd] = x.shape();
    let [o, ci, kh, kw] = w.shape();
    if opts.depthwise {
        if ci != 1 || o != c {
            return Err(config_err!("depthwise kernel {:?} does not fit {} input channels", w.shape(), c));
        }
    } else if ci != c {
        return Err(config_err!("kernel {:?} expects {} input channels, input has {}", w.shape(), ci, c));
    }
    Geometry::new(c, (h, wd), (kh, kw), opts.stride, opts.padding, opts.dilation)
}

fn check_bias(bias: Option<&Tensor>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => {
            Err(config_err!("bias has {} entries, expected {}", b.len(), channels))
        }
        _ => Ok(()),
    }
}

fn add_bias(out: &mut Tensor, bias: Option<&Tensor>) {
    let Some(b) = bias else { return };
    let [n, c, _, _] = out.shape();
    for bi in 0..n {
        for ci in 0..c {
            let v = b.data()[ci];
            out.plane_mut(bi, ci).iter_mut().for_each(|o| *o += v);
        }
    }
}

/// Sum of `grad` over batch and space, per channel.
pub fn bias_grad(grad: &Tensor) -> Tensor {
    let [n, c, _, _] = grad.shape();
    let mut out = vec![0.0; c];
    for b in 0..n {
        for (ci, o) in out.iter_mut().enumerate() {
            *o += grad.plane(b, ci).iter().sum::<f64>();
        }
    }
    Tensor::channel_vector(&out)
}

/// 2-D cross-correlation. `w` is `(out, in, kh, kw)`, or `(channels, 1, kh,
/// kw)` when depthwise.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, opts: &ConvOptions) -> Result<Tensor> {
    let g = conv_geometry(x, w, opts)?;
    let out_c = w.shape()[0];
    check_bias(bias, out_c)?;
    let n = x.batch();
    let mut out = Tensor::zeros([n, out_c, g.out_h, g.out_w]);
    if opts.depthwise {
        depthwise_forward(&g, x, w, &mut out);
    } else {
        let krows = g.col_rows();
        let mut col = Vec::new();
        let ohw = g.out_h * g.out_w;
        for b in 0..n {
            let xs = x.sample(b);
            let os = out.sample_mut(b);
            for rows in bands(&g) {
                let cols = rows.len() * g.out_w;
                col.resize(krows * cols, 0.0);
                g.im2col(xs, rows.clone(), &mut col);
                gemm_ld(
                    1.0,
                    MatRef::new(w.data(), out_c, krows),
                    MatRef::new(&col, krows, cols),
                    0.0,
                    &mut os[rows.start * g.out_w..],
                    ohw,
                );
            }
        }
    }
    add_bias(&mut out, bias);
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input and kernel.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad: &Tensor,
    opts: &ConvOptions,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let g = conv_geometry(x, w, opts)?;
    let out_c = w.shape()[0];
    grad.expect_shape([x.batch(), out_c, g.out_h, g.out_w])?;
    let mut dw = Tensor::zeros(w.shape());
    let mut dx = need_input.then(|| Tensor::zeros(x.shape()));
    if opts.depthwise {
        depthwise_backward(&g, x, w, grad, dx.as_mut(), &mut dw);
        return Ok((dx, dw));
    }
    let krows = g.col_rows();
    let ohw = g.out_h * g.out_w;
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    for b in 0..x.batch() {
        let gs = grad.sample(b);
        for rows in bands(&g) {
            let cols = rows.len() * g.out_w;
            let gband = &gs[rows.start * g.out_w..];
            col.resize(krows * cols, 0.0);
            g.im2col(x.sample(b), rows.clone(), &mut col);
            // dW[o, k] += sum_j grad[o, j] * col[k, j]
            gemm_ld(
                1.0,
                MatRef::with_row_stride(gband, out_c, cols, ohw),
                MatRef::t(&col, cols, krows),
                1.0,
                dw.data_mut(),
                krows,
            );
            if let Some(dx) = dx.as_mut() {
                dcol.resize(krows * cols, 0.0);
                gemm_ld(
                    1.0,
                    MatRef::t(w.data(), krows, out_c),
                    MatRef::with_row_stride(gband, out_c, cols, ohw),
                    0.0,
                    &mut dcol,
                    cols,
                );
                g.col2im_add(&dcol, rows, dx.sample_mut(b));
            }
        }
    }
    Ok((dx, dw))
}

fn depthwise_forward(g: &Geometry, x: &Tensor, w: &Tensor, out: &mut Tensor) {
    for b in 0..x.batch() {
        for c in 0..g.channels {
            let xp = x.plane(b, c);
            let k = &w.data()[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
            let op = out.plane_mut(b, c);
            for oy in 0..g.out_h {
                for ky in 0..g.kh {
                    let Some(y) = g.src_row(oy, ky) else { continue };
                    let row = &xp[y * g.in_w..(y + 1) * g.in_w];
                    for kx in 0..g.kw {
                        let wv = k[ky * g.kw + kx];
                        for ox in 0..g.out_w {
                            if let Some(sx) = g.src_col(ox, kx) {
                                op[oy * g.out_w + ox] += wv * row[sx];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward(
    g: &Geometry,
    x: &Tensor,
    w: &Tensor,
    grad: &Tensor,
    mut dx: Option<&mut Tensor>,
    dw: &mut Tensor,
) {
    let kk = g.kh * g.kw;
    for b in 0..x.batch() {
        for c in 0..g.channels {
            let xp = x.plane(b, c);
            let gp = grad.plane(b, c);
            for oy in 0..g.out_h {
                for ky in 0..g.kh {
                    let Some(y) = g.src_row(oy, ky) else { continue };
                    for kx in 0..g.kw {
                        let wv = w.data()[c * kk + ky * g.kw + kx];
                        let mut acc = 0.0;
                        for ox in 0..g.out_w {
                            if let Some(sx) = g.src_col(ox, kx) {
                                let gv = gp[oy * g.out_w + ox];
                                acc += gv * xp[y * g.in_w + sx];
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx.plane_mut(b, c)[y * g.in_w + sx] += gv * wv;
                                }
                            }
                        }
                        dw.data_mut()[c * kk + ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
}

/// Geometry of the convolution whose adjoint is the transposed convolution of
/// `x` by `w` (`(in, out, kh, kw)`, PyTorch layout) at `stride`, no padding.
fn transpose_geometry(x: &Tensor, w: &Tensor, stride: usize) -> Result<Geometry> {
    let [_, c, h, wd] = x.shape();
    let [ci, co, kh, kw] = w.shape();
    if ci != c {
        return Err(config_err!("transposed kernel {:?} expects {} input channels, input has {}", w.shape(), ci, c));
    }
    if stride == 0 {
        return Err(config_err!("stride must be positive"));
    }
    let out_h = (h - 1) * stride + kh;
    let out_w = (wd - 1) * stride + kw;
    let g = Geometry::new(co, (out_h, out_w), (kh, kw), stride, Padding::Valid, (1, 1))?;
    debug_assert_eq!((g.out_h, g.out_w), (h, wd));
    Ok(g)
}

/// Transposed convolution (no padding). Output spatial size is
/// `(in - 1) * stride + k`, i.e. exactly `2 * in` for a 2x2 kernel at stride 2.
pub fn conv_transpose2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize) -> Result<Tensor> {
    let g = transpose_geometry(x, w, stride)?;
    let in_c = x.channels();
    check_bias(bias, g.channels)?;
    let krows = g.col_rows();
    let hw = g.out_h * g.out_w;
    let mut out = Tensor::zeros([x.batch(), g.channels, g.in_h, g.in_w]);
    let mut col = Vec::new();
    for b in 0..x.batch() {
        let xs = x.sample(b);
        for rows in bands(&g) {
            let cols = rows.len() * g.out_w;
            col.resize(krows * cols, 0.0);
            // col[k, j] = sum_c w[c, k] * x[c, j]
            gemm_ld(
                1.0,
                MatRef::t(w.data(), krows, in_c),
                MatRef::with_row_stride(&xs[rows.start * g.out_w..], in_c, cols, hw),
                0.0,
                &mut col,
                cols,
            );
            g.col2im_add(&col, rows, out.sample_mut(b));
        }
    }
    add_bias(&mut out, bias);
    Ok(out)
}

/// Gradients of [`conv_transpose2d`] with respect to input and kernel.
pub fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad: &Tensor,
    stride: usize,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let g = transpose_geometry(x, w, stride)?;
    grad.expect_shape([x.batch(), g.channels, g.in_h, g.in_w])?;
    let in_c = x.channels();
    let krows = g.col_rows();
    let hw = g.out_h * g.out_w;
    let mut dw = Tensor::zeros(w.shape());
    let mut dx = need_input.then(|| Tensor::zeros(x.shape()));
    let mut col = Vec::new();
    for b in 0..x.batch() {
        let xs = x.sample(b);
        for rows in bands(&g) {
            let cols = rows.len() * g.out_w;
            col.resize(krows * cols, 0.0);
            g.im2col(grad.sample(b), rows.clone(), &mut col);
            // dW[c, k] += sum_j x[c, j] * col[k, j]
            gemm_ld(
                1.0,
                MatRef::with_row_stride(&xs[rows.start * g.out_w..], in_c, cols, hw),
                MatRef::t(&col, cols, krows),
                1.0,
                dw.data_mut(),
                krows,
            );
            if let Some(dx) = dx.as_mut() {
                gemm_ld(
                    1.0,
                    MatRef::new(w.data(), in_c, krows),
                    MatRef::new(&col, krows, cols),
                    0.0,
                    &mut dx.sample_mut(b)[rows.start * g.out_w..],
                    hw,
                );
            }
        }
    }
    Ok((dx, dw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random(shape: [usize; 4], rng: &mut SeededRng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    /// Direct quadruple loop over (out channel, out row, out col, taps).
    fn direct_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, opts: &ConvOptions) -> Tensor {
        let g = conv_geometry(x, w, opts).unwrap();
        let [o, ci, kh, kw] = w.shape();
        let mut out = Tensor::zeros([x.batch(), o, g.out_h, g.out_w]);
        for n in 0..x.batch() {
            for oc in 0..o {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = b.map_or(0.0, |b| b.data()[oc]);
                        for ic in 0..ci {
                            let xc = if opts.depthwise { oc } else { ic };
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let y = (oy * g.stride + ky * g.dil_h) as isize - g.pads.top as isize;
                                    let xx = (ox * g.stride + kx * g.dil_w) as isize - g.pads.left as isize;
                                    if y >= 0 && xx >= 0 && (y as usize) < g.in_h && (xx as usize) < g.in_w {
                                        acc += w.at(oc, ic, ky, kx) * x.at(n, xc, y as usize, xx as usize);
                                    }
                                }
                            }
                        }
                        out.set(n, oc, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    /// Scatter each input pixel through the kernel into the output.
    fn scatter_transpose(x: &Tensor, w: &Tensor, s: usize) -> Tensor {
        let [n, ci, h, wd] = x.shape();
        let [_, co, kh, kw] = w.shape();
        let mut out = Tensor::zeros([n, co, (h - 1) * s + kh, (wd - 1) * s + kw]);
        for b in 0..n {
            for c in 0..ci {
                for y in 0..h {
                    for xx in 0..wd {
                        for o in 0..co {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let i = out.index(b, o, y * s + ky, xx * s + kx);
                                    out.data_mut()[i] += x.at(b, c, y, xx) * w.at(c, o, ky, kx);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_on_ones_sums_to_nine() {
        let x = Tensor::full([1, 1, 3, 3], 1.0);
        let w = Tensor::full([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, &ConvOptions::default()).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn stride_two_halves_output() {
        let x = Tensor::full([1, 1, 4, 4], 1.0);
        let w = Tensor::full([1, 1, 2, 2], 1.0);
        let y = conv2d(&x, &w, None, &ConvOptions::default().stride(2)).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 2]);
    }

    #[test]
    fn dense_conv_matches_direct_loop() {
        let mut rng = SeededRng::new(11);
        let x = random([1, 2, 5, 5], &mut rng);
        let w = random([3, 2, 3, 3], &mut rng);
        let b = random([1, 3, 1, 1], &mut rng);
        for opts in [
            ConvOptions::default(),
            ConvOptions::same(),
            ConvOptions::same().stride(2),
            ConvOptions::same().dilation(2, 1),
        ] {
            let fast = conv2d(&x, &w, Some(&b), &opts).unwrap();
            let slow = direct_conv(&x, &w, Some(&b), &opts);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow) < 1e-12, "{opts:?}");
        }
    }

    #[test]
    fn depthwise_matches_direct_loop() {
        let mut rng = SeededRng::new(12);
        let x = random([2, 3, 6, 5], &mut rng);
        let w = random([3, 1, 3, 3], &mut rng);
        let opts = ConvOptions::same().dilation(2, 2).depthwise();
        let fast = conv2d(&x, &w, None, &opts).unwrap();
        let slow = direct_conv(&x, &w, None, &opts);
        assert!(fast.max_abs_diff(&slow) < 1e-12);
    }

    #[test]
    fn same_padding_for_2x2_pads_bottom_right() {
        let g = Geometry::new(1, (5, 5), (2, 2), 1, Padding::Same, (1, 1)).unwrap();
        assert_eq!(g.pads, Pads { top: 0, bottom: 1, left: 0, right: 1 });
        assert_eq!((g.out_h, g.out_w), (5, 5));
    }

    #[test]
    fn transposed_conv_copies_into_disjoint_blocks() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::full([1, 1, 2, 2], 1.0);
        let y = conv_transpose2d(&x, &w, None, 2).unwrap();
        assert_eq!(y.shape(), [1, 1, 4, 4]);
        #[rustfmt::skip]
        let expect = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), &expect);

        let z = conv_transpose2d(&Tensor::zeros([1, 1, 3, 3]), &w, Some(&Tensor::channel_vector(&[0.0])), 2).unwrap();
        assert_eq!(z.shape(), [1, 1, 6, 6]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transposed_conv_matches_scatter_oracle() {
        let mut rng = SeededRng::new(13);
        let x = random([1, 2, 4, 4], &mut rng);
        let w = random([2, 3, 2, 2], &mut rng);
        let fast = conv_transpose2d(&x, &w, None, 2).unwrap();
        let slow = scatter_transpose(&x, &w, 2);
        assert!(fast.max_abs_diff(&slow) < 1e-12);
        // overlapping windows exercise the accumulate path
        let w3 = random([2, 3, 3, 3], &mut rng);
        let fast = conv_transpose2d(&x, &w3, None, 2).unwrap();
        assert!(fast.max_abs_diff(&scatter_transpose(&x, &w3, 2)) < 1e-12);
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(y), x> == <y, convT(x)> for matching geometry
        let mut rng = SeededRng::new(14);
        let y = random([1, 3, 6, 6], &mut rng);
        let w = random([2, 3, 2, 2], &mut rng);
        let x = random([1, 2, 3, 3], &mut rng);
        let cy = conv2d(&y, &w, None, &ConvOptions::default().stride(2)).unwrap();
        let tx = conv_transpose2d(&x, &w, None, 2).unwrap();
        let lhs: f64 = cy.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = y.data().iter().zip(tx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::zeros([1, 2, 4, 4]);
        let w = Tensor::zeros([1, 3, 3, 3]);
        assert!(conv2d(&x, &w, None, &ConvOptions::default()).is_err());
        assert!(conv2d(&Tensor::zeros([1, 2, 2, 2]), &Tensor::zeros([1, 2, 5, 5]), None, &ConvOptions::default()).is_err());
    }
}
