//! Training configuration with flat `key = value` files and flag overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::AudioConfig;
use crate::error::{Error, Result};
use crate::generative::{LossKind, ScheduleKind, Variant};
use crate::model::ModelConfig;
use crate::unet::FimVariant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    /// 256 x 256 grids from Hann 1022 / hop 256.
    Full,
    /// 64 x 64 grids from Hann 254 / hop 64.
    Desk,
}

impl Geometry {
    pub fn audio(self) -> AudioConfig {
        match self {
            Self::Full => AudioConfig::default(),
            Self::Desk => AudioConfig::desk(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub loss: LossKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub geometry: Geometry,
    pub base_channels: usize,
    pub fim: FimVariant,
    pub tf_attention: bool,
    pub time_attention: bool,
    /// Visual frames per clip.
    pub frames: usize,
    pub diffusion_steps: usize,
    /// DDPM variance schedule.
    #[serde(default)]
    pub schedule: ScheduleKind,
    /// Seed of the toy category encoder.
    pub encoder_seed: u64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Ddpm,
            loss: LossKind::L1,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 4,
            steps: 1000,
            seed: 0,
            geometry: Geometry::Desk,
            base_channels: 32,
            fim: FimVariant::LocalGlobal,
            tf_attention: true,
            time_attention: true,
            frames: 3,
            diffusion_steps: 1000,
            schedule: ScheduleKind::default(),
            encoder_seed: 1234,
            checkpoint_every: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::invalid(format!("{key} = {value}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::invalid(format!("{key} = {value}: expected a boolean"))),
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "variant",
        "loss",
        "lr",
        "beta1",
        "beta2",
        "batch_size",
        "steps",
        "seed",
        "geometry",
        "base_channels",
        "fim",
        "tf_attention",
        "time_attention",
        "frames",
        "diffusion_steps",
        "schedule",
        "encoder_seed",
        "checkpoint_every",
    ];

    /// Sets one key; names use underscores or dashes interchangeably.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "variant" => self.variant = value.trim().parse()?,
            "loss" => self.loss = value.trim().parse()?,
            "lr" => self.lr = parse(&key, value)?,
            "beta1" => self.beta1 = parse(&key, value)?,
            "beta2" => self.beta2 = parse(&key, value)?,
            "batch_size" => self.batch_size = parse(&key, value)?,
            "steps" => self.steps = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "geometry" => {
                self.geometry = match value.trim() {
                    "full" => Geometry::Full,
                    "desk" => Geometry::Desk,
                    v => return Err(Error::invalid(format!("geometry = {v}: expected full or desk"))),
                }
            }
            "base_channels" => self.base_channels = parse(&key, value)?,
            "fim" => self.fim = value.trim().parse()?,
            "tf_attention" => self.tf_attention = parse_bool(&key, value)?,
            "time_attention" => self.time_attention = parse_bool(&key, value)?,
            "frames" => self.frames = parse(&key, value)?,
            "diffusion_steps" => self.diffusion_steps = parse(&key, value)?,
            "schedule" => self.schedule = value.trim().parse()?,
            "encoder_seed" => self.encoder_seed = parse(&key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(&key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key {key}"))),
        }
        Ok(())
    }

    /// Applies every key of an INI-style file; section headers are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let ini = ini::Ini::load_from_file(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        for (_, props) in ini.iter() {
            for (k, v) in props.iter() {
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid("lr must be positive"));
        }
        if self.batch_size == 0 || self.frames == 0 || self.diffusion_steps == 0 {
            return Err(Error::invalid("batch_size, frames and diffusion_steps must be positive"));
        }
        self.model().unet.validate()?;
        self.audio().validate()
    }

    pub fn audio(&self) -> AudioConfig {
        self.geometry.audio()
    }

    pub fn model(&self) -> ModelConfig {
        let mut m = ModelConfig::with_base(self.base_channels);
        m.unet.fim = self.fim;
        m.unet.tf_attention = self.tf_attention;
        m.unet.time_attention = self.time_attention;
        m.aggregator.max_frames = m.aggregator.max_frames.max(self.frames);
        m
    }
}
