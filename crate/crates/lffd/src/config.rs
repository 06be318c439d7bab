//! TOML run configuration. Every section is optional; missing keys take the
//! defaults of the corresponding core types.

use std::fs;
use std::path::Path;

use lffd_core::net::NetworkConfig;
use lffd_core::synth::SyntheticSpec;
use lffd_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Reference,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub variant: Variant,
    /// Channel count of every desk layer; ignored for the reference network.
    pub width: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            variant: Variant::Reference,
            width: 16,
        }
    }
}

impl NetworkSection {
    pub fn build(&self) -> Result<NetworkConfig> {
        let net = match self.variant {
            Variant::Reference => NetworkConfig::reference(),
            Variant::Desk if self.width == 0 => return Err(Error::Config("desk width must be positive".into())),
            Variant::Desk => NetworkConfig::desk(self.width),
        };
        net.validate()?;
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_drop_iters: Vec<u64>,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_iters: u64,
    pub crop: usize,
    pub seed: u64,
    /// Write a loss-log row every this many iterations.
    pub log_every: u64,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            lr0: t.lr0,
            lr_drop_iters: t.lr_drop_iters,
            lr_drop_factor: t.lr_drop_factor,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            total_iters: t.total_iters,
            crop: t.crop,
            seed: t.seed,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr0: self.lr0,
            lr_drop_iters: self.lr_drop_iters.clone(),
            lr_drop_factor: self.lr_drop_factor,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            total_iters: self.total_iters,
            crop: self.crop,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub width: usize,
    pub height: usize,
    /// Images generated for training when no annotation file is given.
    pub count: usize,
    pub seed: u64,
    pub faces_min: usize,
    pub faces_max: usize,
    /// `[lo, hi, weight]` triples.
    pub size_bands: Vec<[f32; 3]>,
    pub distractor_only: f32,
    pub noise: f32,
    pub clutter_min: usize,
    pub clutter_max: usize,
    pub distractors_min: usize,
    pub distractors_max: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SyntheticSpec::desk(192);
        Self {
            width: s.width,
            height: s.height,
            count: 2000,
            seed: 1,
            faces_min: s.faces_per_image.0,
            faces_max: s.faces_per_image.1,
            size_bands: s.size_bands.iter().map(|&(a, b, c)| [a, b, c]).collect(),
            distractor_only: s.distractor_only,
            noise: s.noise,
            clutter_min: s.clutter.0,
            clutter_max: s.clutter.1,
            distractors_min: s.distractors.0,
            distractors_max: s.distractors.1,
        }
    }
}

impl SynthSection {
    pub fn spec(&self) -> Result<SyntheticSpec> {
        let base = SyntheticSpec::desk(self.width.min(self.height).max(1));
        let spec = SyntheticSpec {
            width: self.width,
            height: self.height,
            faces_per_image: (self.faces_min, self.faces_max),
            size_bands: self.size_bands.iter().map(|b| (b[0], b[1], b[2])).collect(),
            distractor_only: self.distractor_only,
            noise: self.noise,
            clutter: (self.clutter_min, self.clutter_max),
            distractors: (self.distractors_min, self.distractors_max),
            ..base
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkSection,
    pub train: TrainSection,
    pub synth: SynthSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
