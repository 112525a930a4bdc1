//! JSON run configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use difd_core::bands::BandSelection;
use difd_core::model::{DifdConfig, SecondInput, Variant};
use difd_core::optim::AdamWConfig;
use difd_core::synth::SynthSpec;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const DEFAULT_SEED: u64 = 3407;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 64 px tiles, batch 4.
    Toy,
    /// 512 px tiles, batch 26.
    Paper,
}

impl Profile {
    pub fn model(self, variant: Variant, bands: BandSelection) -> DifdConfig {
        match self {
            Profile::Toy => DifdConfig::toy(variant, bands.channels()),
            Profile::Paper => DifdConfig::reference(variant, bands.channels()),
        }
    }

    pub fn batch_size(self) -> usize {
        match self {
            Profile::Toy => 4,
            Profile::Paper => 26,
        }
    }

    pub fn synth(self) -> SynthSpec {
        match self {
            Profile::Toy => SynthSpec::toy(),
            Profile::Paper => SynthSpec::paper(),
        }
    }
}

impl FromStr for Profile {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Profile::Toy),
            "paper" => Ok(Profile::Paper),
            _ => Err(AppError::config(format!("unknown profile {s:?}, expected toy or paper"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Toy => "toy",
            Profile::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub model: DifdConfig,
    pub bands: BandSelection,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Evaluation threads; results do not depend on it.
    pub workers: usize,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn new(profile: Profile, variant: Variant, bands: BandSelection) -> Self {
        Self {
            run_id: format!("{}-{}", variant.name(), bands.name()),
            model: profile.model(variant, bands),
            bands,
            optimizer: AdamWConfig::default(),
            batch_size: profile.batch_size(),
            max_epochs: 100,
            patience: 15,
            seed: DEFAULT_SEED,
            workers: 1,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
        }
    }

    /// Dual input where the second input is the downsampled aerial tile.
    pub fn rgb_rgb(profile: Profile) -> Self {
        let mut cfg = Self::new(profile, Variant::UpConvT, BandSelection::B4);
        cfg.model = cfg.model.with_second_input(SecondInput::DownsampledAerial);
        cfg.run_id = "UpConvT-RGB+RGB".into();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(AppError::config("batch size must be at least 1"));
        }
        if self.patience == 0 {
            return Err(AppError::config("patience must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(AppError::config("max epochs must be at least 1"));
        }
        if self.workers == 0 {
            return Err(AppError::config("worker count must be at least 1"));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(AppError::config(format!("run id {:?} is not a valid directory name", self.run_id)));
        }
        if self.model.second_input == SecondInput::Satellite && self.model.sat_channels != self.bands.channels() {
            return Err(AppError::config(format!(
                "model expects {} satellite channels but {} provides {}",
                self.model.sat_channels,
                self.bands.name(),
                self.bands.channels()
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| AppError::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for p in [Profile::Toy, Profile::Paper] {
            for v in Variant::ALL {
                for b in BandSelection::ALL {
                    let c = RunConfig::new(p, v, b);
                    c.validate().unwrap();
                    let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
                    assert_eq!(back, c);
                }
            }
        }
        RunConfig::rgb_rgb(Profile::Toy).validate().unwrap();
    }

    #[test]
    fn invalid_values_are_rejected() {
        let base = RunConfig::new(Profile::Toy, Variant::UpConvT, BandSelection::B7);
        let mut c = base.clone();
        c.patience = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.optimizer.lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = base;
        c.bands = BandSelection::B10;
        assert!(c.validate().is_err());
    }
}
