//! Parameterized layers and the building blocks of the network.
//!
//! Layers hold [`ParamId`]s into a flat parameter table registered at
//! construction time; a [`Session`] binds that table to graph variables for
//! one forward pass.

pub mod blocks;
mod layers;

use alloc::string::String;
use alloc::vec::Vec;

pub use blocks::{DpcBranchSpec, DpcHead, PsUpsampler, SpatialPlan, TclUpsampler, UpConvTStage, UpsampleConv};
pub use layers::{BatchNorm2d, Conv2d, ConvTranspose2d, SeparableConv};

use crate::autodiff::Var;
use crate::error::Result;
use crate::kernels::norm::BatchStats;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Batch-norm running-average momentum.
pub const BN_MOMENTUM: f64 = 0.1;
/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;
/// ELU negative-side scale.
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    KaimingNormal { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: [usize; 4],
    pub init: Init,
    /// `false` for running statistics, which are state but not optimized.
    pub trainable: bool,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn initialize(&self, rng: &mut SeededRng) -> Tensor {
        let mut t = match self.init {
            Init::Zeros => Tensor::zeros(self.shape),
            Init::Ones => Tensor::full(self.shape, 1.0),
            Init::KaimingNormal { fan_in } => {
                let std = libm::sqrt(2.0 / fan_in as f64);
                let mut t = Tensor::zeros(self.shape);
                t.data_mut().iter_mut().for_each(|v| *v = std * rng.normal());
                t
            }
        };
        t.round_to_f32();
        t
    }
}

/// Index of a registered tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Collects parameter specs while a network is constructed.
#[derive(Debug, Default)]
pub struct Registry {
    specs: Vec<ParamSpec>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn param(&mut self, name: String, shape: [usize; 4], init: Init) -> ParamId {
        self.push(ParamSpec { name, shape, init, trainable: true })
    }

    pub fn buffer(&mut self, name: String, shape: [usize; 4], init: Init) -> ParamId {
        self.push(ParamSpec { name, shape, init, trainable: false })
    }

    fn push(&mut self, spec: ParamSpec) -> ParamId {
        debug_assert!(self.specs.iter().all(|s| s.name != spec.name), "duplicate parameter {}", spec.name);
        self.specs.push(spec);
        ParamId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn into_specs(self) -> Vec<ParamSpec> {
        self.specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running averages are updated after the pass.
    Train,
    /// Running statistics.
    Eval,
}

/// Pending running-average update from one training-mode normalization.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub stats: BatchStats,
    pub momentum: f64,
}

/// One forward pass: parameter table bound to graph leaves.
pub struct Session {
    vars: Vec<Var>,
    mode: Mode,
    updates: Vec<BnUpdate>,
}

impl Session {
    /// Bind `tensors` (aligned with `specs`). With `grad` set, trainable
    /// tensors become gradient-carrying leaves.
    pub fn new(specs: &[ParamSpec], tensors: &[Tensor], mode: Mode, grad: bool) -> Self {
        assert_eq!(specs.len(), tensors.len(), "parameter table does not match its specs");
        let vars = specs
            .iter()
            .zip(tensors)
            .map(|(s, t)| Var::leaf(t.clone(), grad && s.trainable))
            .collect();
        Self { vars, mode, updates: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn var(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub(crate) fn record_bn(&mut self, update: BnUpdate) {
        self.updates.push(update);
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        core::mem::take(&mut self.updates)
    }

    /// Gradients of every trainable tensor (zeros where unreached).
    pub fn gradients(&self, specs: &[ParamSpec]) -> Vec<Option<Tensor>> {
        self.vars
            .iter()
            .zip(specs)
            .map(|(v, s)| s.trainable.then(|| v.grad().unwrap_or_else(|| Tensor::zeros(s.shape))))
            .collect()
    }
}

/// Fold batch statistics into running averages, rounded to `f32`.
pub fn apply_bn_updates(tensors: &mut [Tensor], updates: &[BnUpdate]) -> Result<()> {
    for u in updates {
        let unbiased = u.stats.unbiased_var();
        let m = u.momentum;
        for (r, &b) in tensors[u.running_mean.0].data_mut().iter_mut().zip(&u.stats.mean) {
            *r = ((1.0 - m) * *r + m * b) as f32 as f64;
        }
        for (r, &b) in tensors[u.running_var.0].data_mut().iter_mut().zip(&unbiased) {
            *r = ((1.0 - m) * *r + m * b) as f32 as f64;
        }
    }
    Ok(())
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        alloc::format!("{prefix}.{name}")
    }
}
