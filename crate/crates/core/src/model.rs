//! The full fusion network: encoder, aerial decoder, satellite branch and
//! final decoder, with variant switching for every ablation configuration.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{config_err, Result};
use crate::kernels::conv::ConvOptions;
use crate::nn::blocks::{self, DPC_REFERENCE_BRANCHES};
use crate::nn::{
    apply_bn_updates, join, BatchNorm2d, BnUpdate, Conv2d, DpcBranchSpec, DpcHead, Mode, ParamSpec, PsUpsampler,
    Registry, SeparableConv, Session, TclUpsampler, UpConvTStage, UpsampleConv, ELU_ALPHA,
};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub use crate::nn::SpatialPlan;

/// How the second input is brought to the fusion resolution, or which input
/// is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Transposed-convolution upsampler.
    UpConvT,
    /// Nearest-neighbour resize of the raw raster.
    UpNearest,
    /// Bilinear resize of the raw raster.
    UpBilinear,
    /// Convolutions + pixel shuffle.
    UpPS,
    /// Aerial branch only; no second input.
    AerialOnly,
    /// Satellite branch (transposed-convolution upsampler) only.
    SatOnly,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::UpConvT,
        Variant::UpNearest,
        Variant::UpBilinear,
        Variant::UpPS,
        Variant::AerialOnly,
        Variant::SatOnly,
    ];

    pub fn uses_aerial(self) -> bool {
        self != Variant::SatOnly
    }

    pub fn uses_second(self) -> bool {
        self != Variant::AerialOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::UpConvT => "UpConvT",
            Variant::UpNearest => "UpNearest",
            Variant::UpBilinear => "UpBilinear",
            Variant::UpPS => "UpPS",
            Variant::AerialOnly => "AerialOnly",
            Variant::SatOnly => "SatOnly",
        }
    }
}

/// Where the second input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SecondInput {
    /// Multiband satellite crop.
    Satellite,
    /// The aerial tile itself, box-averaged down to the satellite size.
    DownsampledAerial,
}

/// Channel widths of the compact residual separable-conv backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    /// Stride-2 stem.
    pub stem: usize,
    /// Stride-4 block; these are the low-level features.
    pub llf: usize,
    /// Stride-8 block.
    pub mid: usize,
    /// Stride-16 block feeding the atrous head.
    pub deep: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpcSpec {
    pub branch_channels: usize,
    pub branches: Vec<DpcBranchSpec>,
}

/// Complete description of one network instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifdConfig {
    pub variant: Variant,
    pub num_classes: usize,
    /// Aerial tile size `k`.
    pub aerial_size: usize,
    pub sat_plan: SpatialPlan,
    /// Aerial channels `C1`.
    pub aerial_channels: usize,
    /// Second-input channels `C2` (band count, or 3 for downsampled aerial).
    pub sat_channels: usize,
    pub backbone: BackboneSpec,
    pub dpc: DpcSpec,
    pub llf1_channels: usize,
    pub hlf_channels: usize,
    pub llf2_channels: usize,
    /// Final decoder widths: conv3x3, conv3x3, conv1x1, up stage, up stage.
    pub decoder_channels: [usize; 5],
    pub second_input: SecondInput,
}

impl DifdConfig {
    /// Full-size network: 512 px tiles, 26 px crops, 48/256/48 fusion
    /// widths, decoder 352 -> 256 -> 256 -> 256 -> 128 -> 64 -> classes.
    pub fn reference(variant: Variant, sat_channels: usize) -> Self {
        Self {
            variant,
            num_classes: crate::NUM_CLASSES,
            aerial_size: 512,
            sat_plan: SpatialPlan::REFERENCE,
            aerial_channels: 3,
            sat_channels,
            backbone: BackboneSpec { stem: 32, llf: 128, mid: 256, deep: 512 },
            dpc: DpcSpec { branch_channels: 256, branches: DPC_REFERENCE_BRANCHES.to_vec() },
            llf1_channels: 48,
            hlf_channels: 256,
            llf2_channels: 48,
            decoder_channels: [256, 256, 256, 128, 64],
            second_input: SecondInput::Satellite,
        }
    }

    /// Desk-scale network: 64 px tiles, 4 px crops.
    pub fn toy(variant: Variant, sat_channels: usize) -> Self {
        Self {
            variant,
            num_classes: crate::NUM_CLASSES,
            aerial_size: 64,
            sat_plan: SpatialPlan { sat_size: 4, pre_size: 4, n_stages: 2, target_size: 16 },
            aerial_channels: 3,
            sat_channels,
            backbone: BackboneSpec { stem: 8, llf: 16, mid: 24, deep: 32 },
            dpc: DpcSpec {
                branch_channels: 16,
                branches: vec![
                    DpcBranchSpec::new(None, (1, 2)),
                    DpcBranchSpec::new(Some(0), (3, 3)),
                    DpcBranchSpec::new(Some(0), (2, 1)),
                    DpcBranchSpec::new(Some(0), (1, 1)),
                    DpcBranchSpec::new(Some(3), (2, 3)),
                ],
            },
            llf1_channels: 8,
            hlf_channels: 32,
            llf2_channels: 8,
            decoder_channels: [32, 32, 32, 16, 16],
            second_input: SecondInput::Satellite,
        }
    }

    /// Smallest configuration used for end-to-end gradient checks: 32 px
    /// tiles, plan (8, 2, 2, 8).
    pub fn tiny(variant: Variant, sat_channels: usize) -> Self {
        Self {
            aerial_size: 32,
            sat_plan: SpatialPlan { sat_size: 8, pre_size: 2, n_stages: 2, target_size: 8 },
            backbone: BackboneSpec { stem: 4, llf: 6, mid: 6, deep: 8 },
            dpc: DpcSpec {
                branch_channels: 4,
                branches: vec![DpcBranchSpec::new(None, (1, 1)), DpcBranchSpec::new(Some(0), (1, 1))],
            },
            llf1_channels: 4,
            hlf_channels: 6,
            llf2_channels: 4,
            decoder_channels: [6, 6, 6, 4, 4],
            ..Self::toy(variant, sat_channels)
        }
    }

    pub fn with_second_input(mut self, source: SecondInput) -> Self {
        self.second_input = source;
        if source == SecondInput::DownsampledAerial {
            self.sat_channels = self.aerial_channels;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.aerial_size;
        if k == 0 || k % 16 != 0 {
            return Err(config_err!("aerial size {k} must be a positive multiple of 16 (output stride)"));
        }
        self.sat_plan.validate()?;
        if self.sat_plan.target_size != k / 4 {
            return Err(config_err!(
                "satellite plan reaches {} px but the fusion resolution is k/4 = {}",
                self.sat_plan.target_size,
                k / 4
            ));
        }
        if self.num_classes < 2 {
            return Err(config_err!("need at least two classes"));
        }
        let widths = [
            self.aerial_channels,
            self.sat_channels,
            self.backbone.stem,
            self.backbone.llf,
            self.backbone.mid,
            self.backbone.deep,
            self.dpc.branch_channels,
            self.llf1_channels,
            self.hlf_channels,
            self.llf2_channels,
        ];
        if widths.iter().chain(&self.decoder_channels).any(|&c| c == 0) {
            return Err(config_err!("channel widths must be positive"));
        }
        match (self.variant, self.second_input) {
            (Variant::AerialOnly, SecondInput::DownsampledAerial) => {
                return Err(config_err!("AerialOnly has no second input to source"))
            }
            (Variant::SatOnly, SecondInput::DownsampledAerial) => {
                return Err(config_err!("SatOnly cannot take its only input from the aerial tile"))
            }
            (_, SecondInput::DownsampledAerial) if self.sat_channels != self.aerial_channels => {
                return Err(config_err!(
                    "downsampled-aerial second input has {} channels, config says {}",
                    self.aerial_channels,
                    self.sat_channels
                ))
            }
            _ => {}
        }
        Ok(())
    }

    /// Channels of `llf2` as produced by the second branch.
    pub fn llf2_width(&self) -> usize {
        match self.variant {
            Variant::UpNearest | Variant::UpBilinear => self.sat_channels,
            _ => self.llf2_channels,
        }
    }

    /// Channels entering the final decoder.
    pub fn fused_channels(&self) -> usize {
        let aerial = if self.variant.uses_aerial() { self.llf1_channels + self.hlf_channels } else { 0 };
        let second = if self.variant.uses_second() { self.llf2_width() } else { 0 };
        aerial + second
    }

    /// Stable 64-bit FNV-1a digest of every architectural field.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.write(self.variant.name().as_bytes());
        for v in [
            self.num_classes,
            self.aerial_size,
            self.sat_plan.sat_size,
            self.sat_plan.pre_size,
            self.sat_plan.n_stages,
            self.sat_plan.target_size,
            self.aerial_channels,
            self.sat_channels,
            self.backbone.stem,
            self.backbone.llf,
            self.backbone.mid,
            self.backbone.deep,
            self.dpc.branch_channels,
            self.llf1_channels,
            self.hlf_channels,
            self.llf2_channels,
        ] {
            h.write_u64(v as u64);
        }
        for b in &self.dpc.branches {
            h.write_u64(b.input.map_or(u64::MAX, |i| i as u64));
            h.write_u64(b.rate.0 as u64);
            h.write_u64(b.rate.1 as u64);
        }
        for c in self.decoder_channels {
            h.write_u64(c as u64);
        }
        h.write(match self.second_input {
            SecondInput::Satellite => b"satellite",
            SecondInput::DownsampledAerial => b"downsampled-aerial",
        });
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
        // length terminator keeps adjacent fields from aliasing
        self.0 ^= bytes.len() as u64;
        self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
    }
    fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// Residual block: two separable convs on the main path, strided 1x1 on
/// the skip path.
#[derive(Debug, Clone)]
struct ResidualBlock {
    sep1: SeparableConv,
    bn1: BatchNorm2d,
    sep2: SeparableConv,
    bn2: BatchNorm2d,
    skip: Conv2d,
    skip_bn: BatchNorm2d,
}

impl ResidualBlock {
    fn new(reg: &mut Registry, path: &str, c_in: usize, c_out: usize, stride: usize) -> Self {
        Self {
            sep1: SeparableConv::new(reg, &join(path, "sep1"), c_in, c_out, stride, (1, 1)),
            bn1: BatchNorm2d::new(reg, &join(path, "bn1"), c_out),
            sep2: SeparableConv::new(reg, &join(path, "sep2"), c_out, c_out, 1, (1, 1)),
            bn2: BatchNorm2d::new(reg, &join(path, "bn2"), c_out),
            skip: Conv2d::new(
                reg,
                &join(path, "skip"),
                c_in,
                c_out,
                (1, 1),
                ConvOptions::default().stride(stride),
                false,
            ),
            skip_bn: BatchNorm2d::new(reg, &join(path, "skip_bn"), c_out),
        }
    }

    fn forward(&self, s: &mut Session, x: &Var) -> Result<Var> {
        let y = self.sep1.forward(s, x)?;
        let y = self.bn1.forward(s, &y)?.elu(ELU_ALPHA);
        let y = self.sep2.forward(s, &y)?;
        let y = self.bn2.forward(s, &y)?;
        let skip = self.skip.forward(s, x)?;
        let skip = self.skip_bn.forward(s, &skip)?;
        Ok(y.add(&skip)?.elu(ELU_ALPHA))
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    block1: ResidualBlock,
    block2: ResidualBlock,
    block3: ResidualBlock,
    dpc: DpcHead,
}

#[derive(Debug, Clone)]
struct AerialDecoder {
    llf_proj: Conv2d,
    hlf_stages: [UpConvTStage; 2],
}

#[derive(Debug, Clone)]
enum SecondBranch {
    Tcl(TclUpsampler),
    Ps(PsUpsampler),
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone)]
struct FinalDecoder {
    convs: [(Conv2d, BatchNorm2d); 3],
    ups: [UpConvTStage; 2],
    classifier: Conv2d,
}

/// The assembled network: layer structure only, parameters live in
/// [`ModelState`].
#[derive(Debug, Clone)]
pub struct Difd {
    cfg: DifdConfig,
    encoder: Option<Encoder>,
    decoder: Option<AerialDecoder>,
    second: Option<SecondBranch>,
    head: FinalDecoder,
}

impl Difd {
    /// Build the layer structure, registering every tensor in `reg`.
    pub fn new(cfg: &DifdConfig, reg: &mut Registry) -> Result<Self> {
        cfg.validate()?;
        let (encoder, decoder) = if cfg.variant.uses_aerial() {
            let bb = cfg.backbone;
            let encoder = Encoder {
                stem: Conv2d::new(
                    reg,
                    "encoder.stem",
                    cfg.aerial_channels,
                    bb.stem,
                    (3, 3),
                    ConvOptions::same().stride(2),
                    false,
                ),
                stem_bn: BatchNorm2d::new(reg, "encoder.stem_bn", bb.stem),
                block1: ResidualBlock::new(reg, "encoder.block1", bb.stem, bb.llf, 2),
                block2: ResidualBlock::new(reg, "encoder.block2", bb.llf, bb.mid, 2),
                block3: ResidualBlock::new(reg, "encoder.block3", bb.mid, bb.deep, 2),
                dpc: DpcHead::new(
                    reg,
                    "encoder.dpc",
                    bb.deep,
                    cfg.dpc.branch_channels,
                    cfg.hlf_channels,
                    &cfg.dpc.branches,
                )?,
            };
            let decoder = AerialDecoder {
                llf_proj: Conv2d::new(
                    reg,
                    "decoder.llf1",
                    bb.llf,
                    cfg.llf1_channels,
                    (1, 1),
                    ConvOptions::default(),
                    true,
                ),
                hlf_stages: [
                    UpConvTStage::new(reg, "decoder.hlf0", cfg.hlf_channels, cfg.hlf_channels, UpsampleConv::Pointwise),
                    UpConvTStage::new(reg, "decoder.hlf1", cfg.hlf_channels, cfg.hlf_channels, UpsampleConv::Pointwise),
                ],
            };
            (Some(encoder), Some(decoder))
        } else {
            (None, None)
        };

        let second = match cfg.variant {
            Variant::AerialOnly => None,
            Variant::UpConvT | Variant::SatOnly => Some(SecondBranch::Tcl(TclUpsampler::new(
                reg,
                "second.tcl",
                cfg.sat_channels,
                cfg.llf2_channels,
                cfg.sat_plan,
            )?)),
            Variant::UpPS => Some(SecondBranch::Ps(PsUpsampler::new(
                reg,
                "second.ps",
                cfg.sat_channels,
                cfg.llf2_channels,
                cfg.sat_plan,
            )?)),
            Variant::UpNearest => Some(SecondBranch::Nearest),
            Variant::UpBilinear => Some(SecondBranch::Bilinear),
        };

        let d = cfg.decoder_channels;
        let conv_bn = |reg: &mut Registry, name: &str, c_in: usize, c_out: usize, k: usize| {
            let opts = if k == 1 { ConvOptions::default() } else { ConvOptions::same() };
            (
                Conv2d::new(reg, &join("head", name), c_in, c_out, (k, k), opts, false),
                BatchNorm2d::new(reg, &join("head", &alloc::format!("{name}_bn")), c_out),
            )
        };
        let head = FinalDecoder {
            convs: [
                conv_bn(reg, "conv0", cfg.fused_channels(), d[0], 3),
                conv_bn(reg, "conv1", d[0], d[1], 3),
                conv_bn(reg, "conv2", d[1], d[2], 1),
            ],
            ups: [
                UpConvTStage::new(reg, "head.up0", d[2], d[3], UpsampleConv::Pointwise),
                UpConvTStage::new(reg, "head.up1", d[3], d[4], UpsampleConv::Pointwise),
            ],
            classifier: Conv2d::new(reg, "head.classifier", d[4], cfg.num_classes, (3, 3), ConvOptions::same(), true),
        };
        Ok(Self { cfg: cfg.clone(), encoder, decoder, second, head })
    }

    pub fn config(&self) -> &DifdConfig {
        &self.cfg
    }

    /// Aerial tile -> (LLF at stride 4, HLF at stride 16 refined by the
    /// atrous head).
    pub fn encoder_forward(&self, s: &mut Session, input1: &Var) -> Result<(Var, Var)> {
        let enc = self.encoder.as_ref().ok_or_else(|| config_err!("{} has no aerial encoder", self.cfg.variant.name()))?;
        let [_, c, h, w] = input1.shape();
        if h % 16 != 0 || w % 16 != 0 {
            return Err(config_err!("aerial input {h}x{w} is not divisible by the output stride 16"));
        }
        let k = self.cfg.aerial_size;
        if c != self.cfg.aerial_channels || h != k || w != k {
            return Err(config_err!("aerial input ({c}, {h}, {w}) does not match ({}, {k}, {k})", self.cfg.aerial_channels));
        }
        let x = enc.stem.forward(s, input1)?;
        let x = enc.stem_bn.forward(s, &x)?.elu(ELU_ALPHA);
        let llf = enc.block1.forward(s, &x)?;
        let x = enc.block2.forward(s, &llf)?;
        let x = enc.block3.forward(s, &x)?;
        let hlf = enc.dpc.forward(s, &x)?;
        Ok((llf, hlf))
    }

    /// (LLF, HLF) -> (llf1, hlf), both at stride 4.
    pub fn decoder_forward(&self, s: &mut Session, llf: &Var, hlf: &Var) -> Result<(Var, Var)> {
        let dec = self.decoder.as_ref().ok_or_else(|| config_err!("{} has no aerial decoder", self.cfg.variant.name()))?;
        let llf1 = dec.llf_proj.forward(s, llf)?.elu(ELU_ALPHA);
        let h = dec.hlf_stages[0].forward(s, hlf)?;
        let h = dec.hlf_stages[1].forward(s, &h)?;
        Ok((llf1, h))
    }

    /// Second input -> llf2 at stride 4.
    pub fn second_branch(&self, s: &mut Session, input2: &Var) -> Result<Var> {
        let plan = self.cfg.sat_plan;
        let [_, c, h, w] = input2.shape();
        if c != self.cfg.sat_channels || h != plan.sat_size || w != plan.sat_size {
            return Err(config_err!(
                "second input ({c}, {h}, {w}) does not match ({}, {}, {})",
                self.cfg.sat_channels,
                plan.sat_size,
                plan.sat_size
            ));
        }
        match self.second.as_ref() {
            None => Err(config_err!("{} takes no second input", self.cfg.variant.name())),
            Some(SecondBranch::Tcl(t)) => t.forward(s, input2),
            Some(SecondBranch::Ps(p)) => p.forward(s, input2),
            Some(SecondBranch::Nearest) => blocks::nearest_upsample(input2, plan.target_size),
            Some(SecondBranch::Bilinear) => blocks::bilinear_upsample(input2, plan.target_size),
        }
    }

    /// Concatenate the present stride-4 features and decode to per-class
    /// logits at full resolution.
    pub fn fuse_and_decode(&self, s: &mut Session, llf1: Option<&Var>, hlf: Option<&Var>, llf2: Option<&Var>) -> Result<Var> {
        let parts: Vec<Var> = [llf1, hlf, llf2].into_iter().flatten().cloned().collect();
        let Some(first) = parts.first() else {
            return Err(config_err!("nothing to decode"));
        };
        let [n, _, h, w] = first.shape();
        if parts.iter().any(|p| {
            let [pn, _, ph, pw] = p.shape();
            (pn, ph, pw) != (n, h, w)
        }) {
            let shapes: Vec<[usize; 4]> = parts.iter().map(Var::shape).collect();
            return Err(config_err!("fusion inputs disagree spatially: {shapes:?}"));
        }
        let x = Var::concat_channels(&parts)?;
        if x.shape()[1] != self.cfg.fused_channels() {
            return Err(config_err!("fused map has {} channels, decoder expects {}", x.shape()[1], self.cfg.fused_channels()));
        }
        let mut y = x;
        for (conv, bn) in &self.head.convs {
            y = conv.forward(s, &y)?;
            y = bn.forward(s, &y)?.elu(ELU_ALPHA);
        }
        for up in &self.head.ups {
            y = up.forward(s, &y)?;
        }
        self.head.classifier.forward(s, &y)
    }

    /// End-to-end forward; raw logits `(batch, classes, k, k)`.
    ///
    /// For the downsampled-aerial source `input2` may be omitted and is
    /// derived from `input1`.
    pub fn forward(&self, s: &mut Session, input1: Option<&Var>, input2: Option<&Var>) -> Result<Var> {
        let variant = self.cfg.variant;
        let (llf1, hlf) = if variant.uses_aerial() {
            let x1 = input1.ok_or_else(|| config_err!("{} needs the aerial input", variant.name()))?;
            let (llf, hlf) = self.encoder_forward(s, x1)?;
            let (llf1, hlf) = self.decoder_forward(s, &llf, &hlf)?;
            (Some(llf1), Some(hlf))
        } else {
            (None, None)
        };
        let llf2 = if variant.uses_second() {
            let derived;
            let x2 = match (input2, self.cfg.second_input, input1) {
                (Some(x2), _, _) => x2,
                (None, SecondInput::DownsampledAerial, Some(x1)) => {
                    let size = self.cfg.sat_plan.sat_size;
                    derived = Var::constant(crate::kernels::resample::downsample_area(x1.value(), size, size)?);
                    &derived
                }
                _ => return Err(config_err!("{} needs the second input", variant.name())),
            };
            Some(self.second_branch(s, x2)?)
        } else {
            None
        };
        self.fuse_and_decode(s, llf1.as_ref(), hlf.as_ref(), llf2.as_ref())
    }
}

/// Every tensor of a network instance plus the metadata needed to rebuild it.
#[derive(Debug, Clone)]
pub struct ModelState {
    net: Difd,
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor>,
    seed: u64,
}

impl ModelState {
    /// Kaiming-initialized weights, zero biases, unit BN scales.
    pub fn init(cfg: &DifdConfig, seed: u64) -> Result<Self> {
        let mut reg = Registry::new();
        let net = Difd::new(cfg, &mut reg)?;
        let specs = reg.into_specs();
        let mut rng = SeededRng::new(seed);
        let tensors = specs.iter().map(|s| s.initialize(&mut rng)).collect();
        Ok(Self { net, specs, tensors, seed })
    }

    /// Rebuild from named tensors (e.g. a checkpoint). Every registered name
    /// must be present with its registered shape.
    pub fn from_named(cfg: &DifdConfig, seed: u64, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut reg = Registry::new();
        let net = Difd::new(cfg, &mut reg)?;
        let specs = reg.into_specs();
        let mut slots: Vec<Option<Tensor>> = vec![None; specs.len()];
        for (name, t) in named {
            let i = specs
                .iter()
                .position(|s| s.name == name)
                .ok_or_else(|| config_err!("unexpected tensor {name:?} for this configuration"))?;
            if t.shape() != specs[i].shape {
                return Err(config_err!("tensor {name:?} has shape {:?}, expected {:?}", t.shape(), specs[i].shape));
            }
            slots[i] = Some(t);
        }
        let tensors = slots
            .into_iter()
            .zip(&specs)
            .map(|(t, s)| t.ok_or_else(|| config_err!("missing tensor {:?}", s.name)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { net, specs, tensors, seed })
    }

    pub fn config(&self) -> &DifdConfig {
        self.net.config()
    }

    pub fn network(&self) -> &Difd {
        &self.net
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fingerprint(&self) -> u64 {
        self.config().fingerprint()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.specs.iter().map(|s| s.name.as_str()).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.specs.iter().position(|s| s.name == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.specs.iter().position(|s| s.name == name).map(move |i| &mut self.tensors[i])
    }

    /// Trainable scalar count.
    pub fn count_parameters(&self) -> usize {
        self.specs.iter().filter(|s| s.trainable).map(ParamSpec::numel).sum()
    }

    pub fn session(&self, mode: Mode, grad: bool) -> Session {
        Session::new(&self.specs, &self.tensors, mode, grad)
    }

    pub fn forward(&self, s: &mut Session, input1: Option<&Var>, input2: Option<&Var>) -> Result<Var> {
        self.net.forward(s, input1, input2)
    }

    /// Eval-mode logits without gradient tracking.
    pub fn infer(&self, input1: Option<&Tensor>, input2: Option<&Tensor>) -> Result<Tensor> {
        let mut s = self.session(Mode::Eval, false);
        let x1 = input1.cloned().map(Var::constant);
        let x2 = input2.cloned().map(Var::constant);
        let y = self.forward(&mut s, x1.as_ref(), x2.as_ref())?;
        Ok(y.value().clone())
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) -> Result<()> {
        apply_bn_updates(&mut self.tensors, updates)
    }
}

/// Free-function form of [`ModelState::count_parameters`].
pub fn count_parameters(state: &ModelState) -> usize {
    state.count_parameters()
}
