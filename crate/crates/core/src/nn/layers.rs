use super::{join, BnUpdate, Init, Mode, ParamId, Registry, Session, BN_EPS, BN_MOMENTUM};
use crate::autodiff::Var;
use crate::error::Result;
use crate::kernels::conv::ConvOptions;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub opts: ConvOptions,
    pub out_channels: usize,
}

impl Conv2d {
    pub fn new(
        reg: &mut Registry,
        path: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        opts: ConvOptions,
        bias: bool,
    ) -> Self {
        let (kh, kw) = kernel;
        let (shape, fan_in) = if opts.depthwise {
            ([in_channels, 1, kh, kw], kh * kw)
        } else {
            ([out_channels, in_channels, kh, kw], in_channels * kh * kw)
        };
        let out_channels = if opts.depthwise { in_channels } else { out_channels };
        let weight = reg.param(join(path, "weight"), shape, Init::KaimingNormal { fan_in });
        let bias = bias.then(|| reg.param(join(path, "bias"), [1, out_channels, 1, 1], Init::Zeros));
        Self { weight, bias, opts, out_channels }
    }

    pub fn forward(&self, s: &Session, x: &Var) -> Result<Var> {
        x.conv2d(s.var(self.weight), self.bias.map(|b| s.var(b)), self.opts)
    }
}

/// Transposed convolution, weights `(in, out, kh, kw)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
}

impl ConvTranspose2d {
    pub fn new(
        reg: &mut Registry,
        path: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        // taps landing on one output pixel
        let fan_in = in_channels * (kernel * kernel).div_ceil(stride * stride);
        let weight = reg.param(
            join(path, "weight"),
            [in_channels, out_channels, kernel, kernel],
            Init::KaimingNormal { fan_in },
        );
        let bias = bias.then(|| reg.param(join(path, "bias"), [1, out_channels, 1, 1], Init::Zeros));
        Self { weight, bias, stride }
    }

    pub fn forward(&self, s: &Session, x: &Var) -> Result<Var> {
        x.conv_transpose2d(s.var(self.weight), self.bias.map(|b| s.var(b)), self.stride)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new(reg: &mut Registry, path: &str, channels: usize) -> Self {
        let shape = [1, channels, 1, 1];
        Self {
            gamma: reg.param(join(path, "gamma"), shape, Init::Ones),
            beta: reg.param(join(path, "beta"), shape, Init::Zeros),
            running_mean: reg.buffer(join(path, "running_mean"), shape, Init::Zeros),
            running_var: reg.buffer(join(path, "running_var"), shape, Init::Ones),
        }
    }

    pub fn forward(&self, s: &mut Session, x: &Var) -> Result<Var> {
        let (gamma, beta) = (s.var(self.gamma).clone(), s.var(self.beta).clone());
        match s.mode() {
            Mode::Train => {
                let (y, stats) = x.batch_norm_train(&gamma, &beta, BN_EPS)?;
                s.record_bn(BnUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    stats,
                    momentum: BN_MOMENTUM,
                });
                Ok(y)
            }
            Mode::Eval => {
                let rm = s.var(self.running_mean).value().clone();
                let rv = s.var(self.running_var).value().clone();
                x.batch_norm_eval(&gamma, &beta, &rm, &rv, BN_EPS)
            }
        }
    }
}

/// Depthwise 3x3 (optionally strided / dilated) followed by a pointwise 1x1.
#[derive(Debug, Clone)]
pub struct SeparableConv {
    pub depthwise: Conv2d,
    pub pointwise: Conv2d,
}

impl SeparableConv {
    pub fn new(
        reg: &mut Registry,
        path: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        dilation: (usize, usize),
    ) -> Self {
        let dw_opts = ConvOptions::same().stride(stride).dilation(dilation.0, dilation.1).depthwise();
        Self {
            depthwise: Conv2d::new(reg, &join(path, "depthwise"), in_channels, in_channels, (3, 3), dw_opts, false),
            pointwise: Conv2d::new(
                reg,
                &join(path, "pointwise"),
                in_channels,
                out_channels,
                (1, 1),
                ConvOptions::default(),
                false,
            ),
        }
    }

    pub fn forward(&self, s: &Session, x: &Var) -> Result<Var> {
        self.pointwise.forward(s, &self.depthwise.forward(s, x)?)
    }
}
