//! Upsampling stages, satellite-branch upsamplers and the multi-rate atrous
//! refinement head.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{join, BatchNorm2d, Conv2d, ConvTranspose2d, Registry, SeparableConv, Session, ELU_ALPHA};
use crate::autodiff::Var;
use crate::error::{config_err, Result};
use crate::kernels::conv::ConvOptions;

/// Spatial arithmetic of the satellite branch: a `sat_size` input is resized
/// to `pre_size`, then doubled `n_stages` times to reach `target_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialPlan {
    pub sat_size: usize,
    pub pre_size: usize,
    pub n_stages: usize,
    pub target_size: usize,
}

impl SpatialPlan {
    /// 26 px crops brought to 128 px through 16 -> 32 -> 64 -> 128.
    pub const REFERENCE: SpatialPlan = SpatialPlan { sat_size: 26, pre_size: 16, n_stages: 3, target_size: 128 };

    pub fn new(sat_size: usize, pre_size: usize, n_stages: usize, target_size: usize) -> Result<Self> {
        let plan = Self { sat_size, pre_size, n_stages, target_size };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sat_size == 0 || self.pre_size == 0 {
            return Err(config_err!("spatial plan sizes must be positive: {self:?}"));
        }
        if self.pre_size.checked_shl(self.n_stages as u32) != Some(self.target_size) || self.n_stages >= 32 {
            return Err(config_err!(
                "spatial plan {:?}: pre_size {} x 2^{} != target {}",
                self,
                self.pre_size,
                self.n_stages,
                self.target_size
            ));
        }
        Ok(())
    }

    /// Pixel-shuffle factor `target / pre`.
    pub fn shuffle_factor(&self) -> usize {
        self.target_size / self.pre_size
    }
}

/// Convolution applied after the transposed convolution of an
/// [`UpConvTStage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpsampleConv {
    /// Pointwise, as in the aerial decoder.
    Pointwise,
    /// 2x2 with same-size padding (extra row/column at bottom/right), as in
    /// the satellite branch.
    Same2x2,
}

/// `ELU(BN(Conv(ConvTranspose2x2/2(x))))`: exactly doubles height and width.
#[derive(Debug, Clone)]
pub struct UpConvTStage {
    pub up: ConvTranspose2d,
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl UpConvTStage {
    pub fn new(reg: &mut Registry, path: &str, in_channels: usize, out_channels: usize, flavor: UpsampleConv) -> Self {
        let (kernel, opts) = match flavor {
            UpsampleConv::Pointwise => ((1, 1), ConvOptions::default()),
            UpsampleConv::Same2x2 => ((2, 2), ConvOptions::same()),
        };
        Self {
            up: ConvTranspose2d::new(reg, &join(path, "up"), in_channels, out_channels, 2, 2, true),
            conv: Conv2d::new(reg, &join(path, "conv"), out_channels, out_channels, kernel, opts, false),
            bn: BatchNorm2d::new(reg, &join(path, "bn"), out_channels),
        }
    }

    pub fn forward(&self, s: &mut Session, x: &Var) -> Result<Var> {
        let y = self.up.forward(s, x)?;
        let y = self.conv.forward(s, &y)?;
        Ok(self.bn.forward(s, &y)?.elu(ELU_ALPHA))
    }
}

/// Channel counts of the doubling stages: geometric from `from` to `to`.
pub fn geometric_schedule(from: usize, to: usize, stages: usize) -> Vec<usize> {
    (1..=stages)
        .map(|i| {
            if i == stages {
                to
            } else {
                let ratio = to as f64 / from as f64;
                let c = from as f64 * libm::pow(ratio, i as f64 / stages as f64);
                (libm::round(c) as usize).max(1)
            }
        })
        .collect()
}

/// Transposed-convolution upsampler for the satellite input.
///
/// Entry sub-block `BN(Conv2x2(DWConv3x3(x)))` widens the bands to
/// `entry_channels`, a nearest resize brings the map to `plan.pre_size`, and
/// `plan.n_stages` [`UpConvTStage`]s (2x2 flavor) reach `plan.target_size`.
#[derive(Debug, Clone)]
pub struct TclUpsampler {
    pub plan: SpatialPlan,
    pub in_channels: usize,
    pub dwconv: Conv2d,
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub stages: Vec<UpConvTStage>,
}

impl TclUpsampler {
    /// Entry depth derived from the band count.
    pub fn entry_channels(in_channels: usize) -> usize {
        8 * in_channels
    }

    pub fn new(reg: &mut Registry, path: &str, in_channels: usize, out_channels: usize, plan: SpatialPlan) -> Result<Self> {
        plan.validate()?;
        let entry = Self::entry_channels(in_channels);
        let dwconv = Conv2d::new(
            reg,
            &join(path, "dwconv"),
            in_channels,
            in_channels,
            (3, 3),
            ConvOptions::same().depthwise(),
            false,
        );
        let conv = Conv2d::new(reg, &join(path, "conv"), in_channels, entry, (2, 2), ConvOptions::same(), false);
        let bn = BatchNorm2d::new(reg, &join(path, "bn"), entry);
        let mut stages = Vec::with_capacity(plan.n_stages);
        let mut c_in = entry;
        for (i, c_out) in geometric_schedule(entry, out_channels, plan.n_stages).into_iter().enumerate() {
            stages.push(UpConvTStage::new(
                reg,
                &join(path, &alloc::format!("stage{i}")),
                c_in,
                c_out,
                UpsampleConv::Same2x2,
            ));
            c_in = c_out;
        }
        Ok(Self { plan, in_channels, dwconv, conv, bn, stages })
    }

    pub fn forward(&self, s: &mut Session, x: &Var) -> Result<Var> {
        check_input(x, self.in_channels, self.plan.sat_size)?;
        let y = self.dwconv.forward(s, x)?;
        let y = self.conv.forward(s, &y)?;
        let y = self.bn.forward(s, &y)?;
        let mut y = y.resize_nearest(self.plan.pre_size, self.plan.pre_size)?;
        for stage in &self.stages {
            y = stage.forward(s, &y)?;
        }
        Ok(y)
    }
}

/// Sub-pixel upsampler: `PS(Conv1x1(Conv3x3(resize(ConvT2x2(x)))))`.
///
/// The transposed convolution doubles the input, a nearest resize brings it
/// to `plan.pre_size`, two convolutions produce `out * r^2` channels, and the
/// pixel shuffle by `r = target / pre` yields `(out, target, target)`.
#[derive(Debug, Clone)]
pub struct PsUpsampler {
    pub plan: SpatialPlan,
    pub in_channels: usize,
    pub up: ConvTranspose2d,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl PsUpsampler {
    pub fn new(reg: &mut Registry, path: &str, in_channels: usize, out_channels: usize, plan: SpatialPlan) -> Result<Self> {
        plan.validate()?;
        let r = plan.shuffle_factor();
        let mid = out_channels;
        Ok(Self {
            plan,
            in_channels,
            up: ConvTranspose2d::new(reg, &join(path, "up"), in_channels, mid, 2, 2, true),
            conv1: Conv2d::new(reg, &join(path, "conv1"), mid, mid, (3, 3), ConvOptions::same(), true),
            conv2: Conv2d::new(reg, &join(path, "conv2"), mid, out_channels * r * r, (1, 1), ConvOptions::default(), true),
        })
    }

    /// Map fed to the pixel shuffle, `(out * r^2, pre, pre)`.
    pub fn pre_shuffle(&self, s: &mut Session, x: &Var) -> Result<Var> {
        check_input(x, self.in_channels, self.plan.sat_size)?;
        let y = self.up.forward(s, x)?;
        let y = y.resize_nearest(self.plan.pre_size, self.plan.pre_size)?;
        let y = self.conv1.forward(s, &y)?;
        self.conv2.forward(s, &y)
    }

    pub fn forward(&self, s: &mut Session, x: &Var) -> Result<Var> {
        self.pre_shuffle(s, x)?.pixel_shuffle(self.plan.shuffle_factor())
    }
}

fn check_input(x: &Var, channels: usize, size: usize) -> Result<()> {
    let [_, c, h, w] = x.shape();
    if c != channels || h != size || w != size {
        return Err(config_err!("expected ({channels}, {size}, {size}) input, got ({c}, {h}, {w})"));
    }
    Ok(())
}

/// One branch of the atrous refinement head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpcBranchSpec {
    /// `None` reads the backbone features, `Some(i)` the output of branch `i`
    /// (which must come earlier).
    pub input: Option<usize>,
    /// Dilation rate (rows, cols) of the separable 3x3 convolution.
    pub rate: (usize, usize),
}

impl DpcBranchSpec {
    pub const fn new(input: Option<usize>, rate: (usize, usize)) -> Self {
        Self { input, rate }
    }
}

/// Branch topology of the dense prediction cell searched for semantic
/// segmentation: five separable atrous convolutions, four of them fed by the
/// first.
pub const DPC_REFERENCE_BRANCHES: [DpcBranchSpec; 5] = [
    DpcBranchSpec::new(None, (1, 6)),
    DpcBranchSpec::new(Some(0), (18, 15)),
    DpcBranchSpec::new(Some(0), (6, 3)),
    DpcBranchSpec::new(Some(0), (1, 1)),
    DpcBranchSpec::new(Some(3), (6, 21)),
];

#[derive(Debug, Clone)]
struct DpcBranch {
    spec: DpcBranchSpec,
    conv: SeparableConv,
    bn: BatchNorm2d,
}

/// Atrous branches over a topology, channel-concatenated and projected by a
/// 1x1 convolution (+BN, ELU). Spatial size is preserved.
#[derive(Debug, Clone)]
pub struct DpcHead {
    branches: Vec<DpcBranch>,
    project: Conv2d,
    bn: BatchNorm2d,
    pub out_channels: usize,
}

impl DpcHead {
    pub fn new(
        reg: &mut Registry,
        path: &str,
        in_channels: usize,
        branch_channels: usize,
        out_channels: usize,
        specs: &[DpcBranchSpec],
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(config_err!("atrous head needs at least one branch"));
        }
        let mut branches = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            if matches!(spec.input, Some(j) if j >= i) {
                return Err(config_err!("branch {i} reads branch {:?}, which is not earlier", spec.input));
            }
            if spec.rate.0 == 0 || spec.rate.1 == 0 {
                return Err(config_err!("branch {i} has a zero dilation rate"));
            }
            let c_in = if spec.input.is_none() { in_channels } else { branch_channels };
            let p = join(path, &alloc::format!("branch{i}"));
            branches.push(DpcBranch {
                spec: *spec,
                conv: SeparableConv::new(reg, &join(&p, "sep"), c_in, branch_channels, 1, spec.rate),
                bn: BatchNorm2d::new(reg, &join(&p, "bn"), branch_channels),
            });
        }
        let project = Conv2d::new(
            reg,
            &join(path, "project"),
            branch_channels * specs.len(),
            out_channels,
            (1, 1),
            ConvOptions::default(),
            false,
        );
        let bn = BatchNorm2d::new(reg, &join(path, "project_bn"), out_channels);
        Ok(Self { branches, project, bn, out_channels })
    }

    pub fn forward(&self, s: &mut Session, x: &Var) -> Result<Var> {
        let [_, _, h, w] = x.shape();
        let mut outs: Vec<Var> = Vec::with_capacity(self.branches.len());
        for (i, b) in self.branches.iter().enumerate() {
            let (rh, rw) = b.spec.rate;
            // every off-centre tap would read padding
            if rh >= h || rw >= w {
                return Err(config_err!(
                    "branch {i}: dilation {:?} gives a {}x{} kernel, larger than the {h}x{w} feature map allows",
                    b.spec.rate,
                    2 * rh + 1,
                    2 * rw + 1
                ));
            }
            let input = match b.spec.input {
                None => x,
                Some(j) => &outs[j],
            };
            let y = b.conv.forward(s, input)?;
            let y = b.bn.forward(s, &y)?.elu(ELU_ALPHA);
            outs.push(y);
        }
        let cat = Var::concat_channels(&outs)?;
        let y = self.project.forward(s, &cat)?;
        Ok(self.bn.forward(s, &y)?.elu(ELU_ALPHA))
    }
}

/// Nearest-neighbour upsampling of a raw raster to `target` (no parameters).
pub fn nearest_upsample(x: &Var, target: usize) -> Result<Var> {
    check_upsample_target(x, target)?;
    x.resize_nearest(target, target)
}

/// Bilinear upsampling of a raw raster to `target` (half-pixel centres).
pub fn bilinear_upsample(x: &Var, target: usize) -> Result<Var> {
    check_upsample_target(x, target)?;
    x.resize_bilinear(target, target)
}

fn check_upsample_target(x: &Var, target: usize) -> Result<()> {
    let [_, _, h, w] = x.shape();
    if target == 0 {
        return Err(config_err!("upsample target must be positive"));
    }
    if target < h || target < w {
        return Err(config_err!("upsample target {target} is smaller than input {h}x{w}"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels;
    use crate::nn::{Mode, ParamSpec};
    use crate::rng::SeededRng;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn init(specs: &[ParamSpec], seed: u64) -> Vec<Tensor> {
        let mut rng = SeededRng::new(seed);
        specs.iter().map(|s| s.initialize(&mut rng)).collect()
    }

    fn random(shape: [usize; 4], rng: &mut SeededRng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn plan_arithmetic() {
        assert!(SpatialPlan::REFERENCE.validate().is_ok());
        assert_eq!(SpatialPlan::REFERENCE.shuffle_factor(), 8);
        assert!(SpatialPlan::new(26, 16, 2, 128).is_err());
        assert!(SpatialPlan::new(8, 4, 1, 8).is_ok());
    }

    #[test]
    fn geometric_schedule_ends_at_target() {
        assert_eq!(geometric_schedule(56, 48, 3), vec![53, 51, 48]);
        assert_eq!(geometric_schedule(16, 4, 2), vec![8, 4]);
    }

    #[test]
    fn up_stage_doubles_and_zero_maps_to_zero() {
        let mut reg = Registry::new();
        let stage = UpConvTStage::new(&mut reg, "s", 2, 3, UpsampleConv::Same2x2);
        let specs = reg.into_specs();
        let tensors = init(&specs, 1);
        let mut s = Session::new(&specs, &tensors, Mode::Eval, false);
        let y = stage.forward(&mut s, &Var::constant(Tensor::zeros([1, 2, 3, 5]))).unwrap();
        assert_eq!(y.shape(), [1, 3, 6, 10]);
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn up_stage_matches_primitive_composition() {
        let mut reg = Registry::new();
        let stage = UpConvTStage::new(&mut reg, "s", 2, 2, UpsampleConv::Pointwise);
        let specs = reg.into_specs();
        let mut rng = SeededRng::new(2);
        let tensors: Vec<Tensor> = specs.iter().map(|sp| random(sp.shape, &mut rng).map(libm::fabs)).collect();
        let x = random([1, 2, 3, 3], &mut rng);
        let mut s = Session::new(&specs, &tensors, Mode::Eval, false);
        let got = stage.forward(&mut s, &Var::constant(x.clone())).unwrap();

        let t = |id: crate::nn::ParamId| &tensors[id.0];
        let y = kernels::conv_transpose2d(&x, t(stage.up.weight), stage.up.bias.map(t), 2).unwrap();
        let y = kernels::conv2d(&y, t(stage.conv.weight), None, &ConvOptions::default()).unwrap();
        let y = kernels::batch_norm_eval(
            &y,
            t(stage.bn.gamma),
            t(stage.bn.beta),
            t(stage.bn.running_mean),
            t(stage.bn.running_var),
            crate::nn::BN_EPS,
        )
        .unwrap();
        let expect = kernels::elu(&y, 1.0);
        assert!(got.value().max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn tcl_and_ps_reach_target() {
        let plan = SpatialPlan::new(8, 4, 1, 8).unwrap();
        let mut reg = Registry::new();
        let tcl = TclUpsampler::new(&mut reg, "tcl", 2, 3, plan).unwrap();
        let ps = PsUpsampler::new(&mut reg, "ps", 2, 3, plan).unwrap();
        let specs = reg.into_specs();
        let tensors = init(&specs, 3);
        let mut s = Session::new(&specs, &tensors, Mode::Train, false);
        let x = Var::constant(random([2, 2, 8, 8], &mut SeededRng::new(4)));
        assert_eq!(tcl.forward(&mut s, &x).unwrap().shape(), [2, 3, 8, 8]);
        assert_eq!(ps.pre_shuffle(&mut s, &x).unwrap().shape(), [2, 12, 4, 4]);
        assert_eq!(ps.forward(&mut s, &x).unwrap().shape(), [2, 3, 8, 8]);
        let wrong = Var::constant(Tensor::zeros([1, 2, 9, 9]));
        assert!(tcl.forward(&mut s, &wrong).is_err());
    }

    #[test]
    fn dpc_projects_to_configured_width() {
        let mut reg = Registry::new();
        let specs = [DpcBranchSpec::new(None, (1, 1)), DpcBranchSpec::new(None, (2, 2))];
        let head = DpcHead::new(&mut reg, "dpc", 4, 3, 6, &specs).unwrap();
        let ps = reg.into_specs();
        let tensors = init(&ps, 5);
        let mut s = Session::new(&ps, &tensors, Mode::Train, false);
        let x = Var::constant(random([2, 4, 4, 4], &mut SeededRng::new(6)));
        assert_eq!(head.forward(&mut s, &x).unwrap().shape(), [2, 6, 4, 4]);
        let tiny = Var::constant(random([2, 4, 2, 2], &mut SeededRng::new(6)));
        assert!(matches!(head.forward(&mut s, &tiny), Err(crate::Error::Config(_))));
    }

    #[test]
    fn dpc_rejects_forward_references() {
        let mut reg = Registry::new();
        let specs = [DpcBranchSpec::new(Some(0), (1, 1))];
        assert!(DpcHead::new(&mut reg, "dpc", 4, 3, 6, &specs).is_err());
    }

    #[test]
    fn upsample_targets_are_checked() {
        let x = Var::constant(Tensor::zeros([1, 1, 4, 4]));
        assert!(nearest_upsample(&x, 0).is_err());
        assert!(nearest_upsample(&x, 3).is_err());
        assert_eq!(bilinear_upsample(&x, 9).unwrap().shape(), [1, 1, 9, 9]);
    }
}
