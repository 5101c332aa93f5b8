//! Training configuration: two presets (desk and full-scale) with JSON
//! overrides for individual fields.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryVariant;
use crate::dtit::{DecoderVariant, DtitConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: Preset,
    pub image_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub decoder_variant: DecoderVariant,
    pub boundary_variant: BoundaryVariant,
    /// Training-time augmentation (flip/crop/rotate). On by default; off is
    /// useful for memorization-style fitting checks.
    pub augment: bool,
}

/// JSON overlay: any subset of the config keys; the rest comes from the
/// preset.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Overrides {
    preset: Option<Preset>,
    image_size: Option<usize>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    data_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    decoder_variant: Option<DecoderVariant>,
    boundary_variant: Option<BoundaryVariant>,
    augment: Option<bool>,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            preset: Preset::Desk,
            image_size: 64,
            batch_size: 1,
            epochs: 100,
            lr: 1e-4,
            seed: 0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            decoder_variant: DecoderVariant::Dtit,
            boundary_variant: BoundaryVariant::Minus,
            augment: true,
        }
    }

    /// Full-scale settings as published: lr 6e-5, batch 4, 100 epochs,
    /// 256x256 input. Recorded for completeness; training it needs days of
    /// CPU time.
    pub fn paper() -> Self {
        TrainConfig {
            preset: Preset::Paper,
            image_size: 256,
            batch_size: 4,
            epochs: 100,
            lr: 6e-5,
            ..Self::desk()
        }
    }

    pub fn from_preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    /// Parse a JSON overlay on top of its preset (key `preset`, default
    /// desk).
    pub fn from_json(text: &str) -> Result<Self> {
        let ov: Overrides = serde_json::from_str(text)?;
        let mut cfg = Self::from_preset(ov.preset.unwrap_or(Preset::Desk));
        if let Some(v) = ov.image_size {
            cfg.image_size = v;
        }
        if let Some(v) = ov.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = ov.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = ov.lr {
            cfg.lr = v;
        }
        if let Some(v) = ov.seed {
            cfg.seed = v;
        }
        if let Some(v) = ov.data_dir {
            cfg.data_dir = v;
        }
        if let Some(v) = ov.out_dir {
            cfg.out_dir = v;
        }
        if let Some(v) = ov.decoder_variant {
            cfg.decoder_variant = v;
        }
        if let Some(v) = ov.boundary_variant {
            cfg.boundary_variant = v;
        }
        if let Some(v) = ov.augment {
            cfg.augment = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be positive and finite"));
        }
        self.model_config().validate()
    }

    /// The model architecture implied by this training config.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = match self.preset {
            Preset::Desk => ModelConfig::desk(),
            Preset::Paper => ModelConfig::paper(),
        };
        m.image_size = self.image_size;
        m.decoder_variant = self.decoder_variant;
        m.boundary_variant = self.boundary_variant;
        if self.preset == Preset::Paper {
            m.dtit = DtitConfig::paper();
        }
        m
    }
}
