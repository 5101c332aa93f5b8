//! Full model: twin encoders, boundary generation, dual aggregation, and
//! the transformer decoder, with checkpointing. One forward pass processes
//! a single [3 x H x W] image (batching is gradient accumulation upstream).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agg::{agg_pipeline, reg_agg};
use crate::backbone::{encode, reg_backbone, stream_head, BackboneConfig};
use crate::boundary::{boundary_features, boundary_level_head, reg_boundary, BoundaryVariant};
use crate::dtit::{decode, reg_dtit, DecoderVariant, DtitConfig};
use crate::error::{Error, Result};
use crate::nn::reg_conv;
use crate::params::{Forward, ParamStore};
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub backbone: BackboneConfig,
    pub c_f: usize,
    pub dtit: DtitConfig,
    pub decoder_variant: DecoderVariant,
    pub boundary_variant: BoundaryVariant,
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            image_size: 64,
            backbone: BackboneConfig::default(),
            c_f: 32,
            dtit: DtitConfig::desk(),
            decoder_variant: DecoderVariant::Dtit,
            boundary_variant: BoundaryVariant::Minus,
        }
    }

    /// Full-scale configuration for reference; training it is out of scope
    /// here (the encoder stays at desk width since the published pre-trained
    /// weights are unavailable to a from-scratch build).
    pub fn paper() -> Self {
        ModelConfig { image_size: 256, dtit: DtitConfig::paper(), ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.dtit.validate()?;
        if self.image_size % 32 != 0 {
            return Err(Error::invalid("image_size must be divisible by 32"));
        }
        if (self.image_size / 4) % self.dtit.p != 0 {
            return Err(Error::invalid("patch size must divide the fused grid"));
        }
        Ok(())
    }

    /// Token count of the fused feature grid.
    pub fn n_tokens(&self) -> usize {
        let g = self.image_size / 4 / self.dtit.p;
        g * g
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
}

/// All supervised outputs of one forward pass.
pub struct Outputs {
    pub s_obj: Var,
    /// Final boundary map; absent in the EarlyFuse/LateFuse ablations.
    pub s_bnd: Option<Var>,
    pub head_fg: Var,
    pub head_bg: Var,
    pub head_bnd: [Var; 4],
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ch = cfg.backbone.stage_channels;
        reg_backbone(&mut store, &mut rng, "fg", &cfg.backbone);
        reg_backbone(&mut store, &mut rng, "bg", &cfg.backbone);
        let bnd_in = match cfg.boundary_variant {
            BoundaryVariant::Minus => {
                reg_boundary(&mut store, &mut rng, &ch, cfg.c_f);
                [cfg.c_f; 4]
            }
            BoundaryVariant::BoundaryEncoding => {
                // a dedicated boundary encoder replaces the minus operation
                reg_backbone(&mut store, &mut rng, "be", &cfg.backbone);
                for i in 0..4 {
                    reg_conv(&mut store, &mut rng, &format!("bnd.level{}.head", i + 1), 1, ch[i], 1);
                }
                ch
            }
        };
        reg_agg(&mut store, &mut rng, "obj", &ch, cfg.c_f);
        reg_agg(&mut store, &mut rng, "bnd", &bnd_in, cfg.c_f);
        reg_dtit(&mut store, &mut rng, &cfg.dtit, cfg.c_f, cfg.n_tokens(), cfg.decoder_variant);
        Ok(Model { cfg, store })
    }

    pub fn forward(&self, fwd: &mut Forward, image: Var) -> Result<Outputs> {
        let shape = fwd.tape.value(image).shape().to_vec();
        let target = (shape[1], shape[2]);
        let fo = encode(fwd, "fg", &self.cfg.backbone, image)?;
        let fb = encode(fwd, "bg", &self.cfg.backbone, image)?;
        let fe = match self.cfg.boundary_variant {
            BoundaryVariant::Minus => boundary_features(fwd, &fo, &fb)?,
            BoundaryVariant::BoundaryEncoding => encode(fwd, "be", &self.cfg.backbone, image)?,
        };
        let mut head_bnd = [fe[0]; 4];
        for i in 0..4 {
            head_bnd[i] = boundary_level_head(fwd, i + 1, fe[i], target)?;
        }
        let f_obj = agg_pipeline(fwd, "obj", &fo)?;
        let f_bnd = agg_pipeline(fwd, "bnd", &fe)?;
        let (s_obj, s_bnd) = decode(fwd, &self.cfg.dtit, self.cfg.decoder_variant, f_obj, f_bnd)?;
        let head_fg = stream_head(fwd, "fg", fo[3], target)?;
        let head_bg = stream_head(fwd, "bg", fb[3], target)?;
        Ok(Outputs { s_obj, s_bnd, head_fg, head_bg, head_bnd })
    }

    /// Eval-mode inference. Returns (S^o, S^e); S^e is the object map again
    /// in the single-output ablations.
    pub fn predict(&self, image: &Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let mut fwd = Forward::new(&self.store, false);
        let img = fwd.input(image.clone());
        let out = self.forward(&mut fwd, img)?;
        let so = fwd.tape.value(out.s_obj).clone();
        let se = out.s_bnd.map(|v| fwd.tape.value(v).clone()).unwrap_or_else(|| so.clone());
        Ok((so, se))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.store.save(dir, &serde_json::to_value(&self.cfg)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (store, cfg_json) = ParamStore::load(dir)?;
        let cfg: ModelConfig = serde_json::from_value(cfg_json)?;
        Ok(Model { cfg, store })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            image_size: 64,
            backbone: BackboneConfig {
                stage_channels: [4, 8, 8, 8],
                heads: [1, 2, 2, 2],
                mlp_ratio: 2,
                ..Default::default()
            },
            c_f: 8,
            dtit: DtitConfig { l: 1, d: 8, h: 2, p: 2, mlp_ratio: 2 },
            decoder_variant: DecoderVariant::Dtit,
            boundary_variant: BoundaryVariant::Minus,
        }
    }

    fn image(n: usize) -> Tensor<f64> {
        Tensor::from_fn(&[3, n, n], |i| ((i % 53) as f64) / 52.0)
    }

    #[test]
    fn forward_produces_all_supervision_maps() {
        let m = Model::new(tiny_cfg(), 0).unwrap();
        let mut fwd = Forward::new(&m.store, false);
        let img = fwd.input(image(64));
        let out = m.forward(&mut fwd, img).unwrap();
        for v in [out.s_obj, out.s_bnd.unwrap(), out.head_fg, out.head_bg] {
            let t = fwd.tape.value(v);
            assert_eq!(t.shape(), &[1, 64, 64]);
            assert!(t.data().iter().all(|&p| p > 0.0 && p < 1.0));
        }
        for v in out.head_bnd {
            assert_eq!(fwd.tape.value(v).shape(), &[1, 64, 64]);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Model::new(tiny_cfg(), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = Model::load(dir.path()).unwrap();
        let img = image(64);
        let (a, _) = m.predict(&img).unwrap();
        let (b, _) = back.predict(&img).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn boundary_encoding_variant_runs() {
        let cfg = ModelConfig { boundary_variant: BoundaryVariant::BoundaryEncoding, ..tiny_cfg() };
        let m = Model::new(cfg, 1).unwrap();
        let (so, _) = m.predict(&image(64)).unwrap();
        assert_eq!(so.shape(), &[1, 64, 64]);
    }

    #[test]
    fn ablation_decoders_run() {
        for variant in [DecoderVariant::EarlyFuse, DecoderVariant::LateFuse] {
            let cfg = ModelConfig { decoder_variant: variant, ..tiny_cfg() };
            let m = Model::new(cfg, 2).unwrap();
            let mut fwd = Forward::new(&m.store, false);
            let img = fwd.input(image(64));
            let out = m.forward(&mut fwd, img).unwrap();
            assert!(out.s_bnd.is_none());
            assert_eq!(fwd.tape.value(out.s_obj).shape(), &[1, 64, 64]);
        }
    }

    #[test]
    fn predict_is_deterministic() {
        let m = Model::new(tiny_cfg(), 3).unwrap();
        let img = image(64);
        let (a, _) = m.predict(&img).unwrap();
        let (b, _) = m.predict(&img).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
