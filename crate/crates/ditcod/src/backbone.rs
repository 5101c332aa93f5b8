//! Twin hierarchical encoders: four stages of overlapping patch merging
//! followed by blocks of sequence-reduction self-attention and a MixFFN
//! (MLP with a depthwise-conv token mixer), pre-norm residuals, LN only.
//! The foreground and background streams share this code with independent
//! parameter sets under the `fg.`/`bg.` prefixes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, linear, reg_conv, reg_linear, reg_ln};
use crate::params::{Forward, ParamStore};
use crate::tape::{Tape, Var};


#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stage_channels: [usize; 4],
    pub stage_depths: [usize; 4],
    pub patch_kernel: [usize; 4],
    pub patch_stride: [usize; 4],
    pub sr_ratios: [usize; 4],
    pub heads: [usize; 4],
    pub mlp_ratio: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stage_channels: [16, 32, 64, 128],
            stage_depths: [1, 1, 1, 1],
            patch_kernel: [7, 3, 3, 3],
            patch_stride: [4, 2, 2, 2],
            sr_ratios: [8, 4, 2, 1],
            heads: [1, 2, 4, 8],
            mlp_ratio: 4,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_stride.iter().product::<usize>() != 32 {
            return Err(Error::invalid("stage strides must multiply to 32"));
        }
        for i in 0..4 {
            if self.patch_kernel[i] <= self.patch_stride[i] {
                return Err(Error::invalid(format!(
                    "stage {}: patch kernel must exceed stride for overlap",
                    i + 1
                )));
            }
            if self.stage_channels[i] % self.heads[i] != 0 {
                return Err(Error::invalid(format!("stage {} channels not divisible by heads", i + 1)));
            }
            if self.stage_depths[i] == 0 || self.sr_ratios[i] == 0 {
                return Err(Error::invalid("stage depths and sr ratios must be >= 1"));
            }
        }
        Ok(())
    }
}

/// CHW map -> [N x C] token matrix (row-major over the grid).
pub fn to_tokens(tape: &mut Tape<f64>, x: Var) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    let flat = tape.reshape(x, &[s[0], s[1] * s[2]])?;
    tape.transpose2d(flat)
}

/// [N x C] token matrix -> CHW map on an h x w grid.
pub fn to_grid(tape: &mut Tape<f64>, x: Var, h: usize, w: usize) -> Result<Var> {
    let c = tape.value(x).shape()[1];
    let t = tape.transpose2d(x)?;
    tape.reshape(t, &[c, h, w])
}

fn reg_attention(store: &mut ParamStore, rng: &mut impl Rng, p: &str, d: usize, sr: usize) {
    reg_linear(store, rng, &format!("{p}.q"), d, d, true);
    reg_linear(store, rng, &format!("{p}.k"), d, d, true);
    reg_linear(store, rng, &format!("{p}.v"), d, d, true);
    reg_linear(store, rng, &format!("{p}.proj"), d, d, true);
    if sr > 1 {
        reg_conv(store, rng, &format!("{p}.sr"), d, d, sr);
        reg_ln(store, &format!("{p}.srln"), d);
    }
}

fn reg_mixffn(store: &mut ParamStore, rng: &mut impl Rng, p: &str, d: usize, ratio: usize) {
    let e = d * ratio;
    reg_linear(store, rng, &format!("{p}.fc1"), d, e, true);
    reg_conv(store, rng, &format!("{p}.dw"), e, 1, 3);
    reg_linear(store, rng, &format!("{p}.fc2"), e, d, true);
}

/// Register one encoder stream's parameters under `prefix` (`fg` or `bg`).
pub fn reg_backbone(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, cfg: &BackboneConfig) {
    let mut cin = 3;
    for i in 0..4 {
        let d = cfg.stage_channels[i];
        let sp = format!("{prefix}.stage{}", i + 1);
        reg_conv(store, rng, &format!("{sp}.patch.conv"), d, cin, cfg.patch_kernel[i]);
        reg_ln(store, &format!("{sp}.patch.ln"), d);
        for j in 0..cfg.stage_depths[i] {
            let bp = format!("{sp}.block{j}");
            reg_ln(store, &format!("{bp}.ln1"), d);
            reg_attention(store, rng, &format!("{bp}.attn"), d, cfg.sr_ratios[i]);
            reg_ln(store, &format!("{bp}.ln2"), d);
            reg_mixffn(store, rng, &format!("{bp}.mlp"), d, cfg.mlp_ratio);
        }
        reg_ln(store, &format!("{sp}.ln"), d);
        cin = d;
    }
    // level-4 supervision head: 1x1 conv to a single channel
    reg_conv(store, rng, &format!("{prefix}.head"), 1, cfg.stage_channels[3], 1);
}

/// Multi-head self-attention over [N x D] tokens; K/V come from `kv_tokens`
/// (the sequence-reduced grid, or the tokens themselves at ratio 1).
pub fn attention(fwd: &mut Forward, p: &str, tokens: Var, kv_tokens: Var, heads: usize) -> Result<Var> {
    let d = fwd.tape.value(tokens).shape()[1];
    let dh = d / heads;
    let q = linear(fwd, &format!("{p}.q"), tokens)?;
    let k = linear(fwd, &format!("{p}.k"), kv_tokens)?;
    let v = linear(fwd, &format!("{p}.v"), kv_tokens)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for hh in 0..heads {
        let qh = fwd.tape.narrow_cols(q, hh * dh, dh)?;
        let kh = fwd.tape.narrow_cols(k, hh * dh, dh)?;
        let vh = fwd.tape.narrow_cols(v, hh * dh, dh)?;
        let kt = fwd.tape.transpose2d(kh)?;
        let logits = fwd.tape.matmul(qh, kt)?;
        let scaled = fwd.tape.scale(logits, scale);
        let att = fwd.tape.softmax_rows(scaled)?;
        outs.push(fwd.tape.matmul(att, vh)?);
    }
    let joined = fwd.tape.concat_cols(&outs)?;
    linear(fwd, &format!("{p}.proj"), joined)
}

fn sr_attention(
    fwd: &mut Forward,
    p: &str,
    tokens: Var,
    grid: (usize, usize),
    heads: usize,
    sr: usize,
) -> Result<Var> {
    let kv = if sr > 1 {
        let g = to_grid(&mut fwd.tape, tokens, grid.0, grid.1)?;
        let reduced = nn::conv(fwd, &format!("{p}.sr"), g, sr, 0, 1)?;
        let t = to_tokens(&mut fwd.tape, reduced)?;
        nn::layernorm(fwd, &format!("{p}.srln"), t)?
    } else {
        tokens
    };
    attention(fwd, p, tokens, kv, heads)
}

fn mixffn(fwd: &mut Forward, p: &str, tokens: Var, grid: (usize, usize)) -> Result<Var> {
    let h1 = linear(fwd, &format!("{p}.fc1"), tokens)?;
    let e = fwd.tape.value(h1).shape()[1];
    let g = to_grid(&mut fwd.tape, h1, grid.0, grid.1)?;
    let mixed = nn::conv(fwd, &format!("{p}.dw"), g, 1, 1, e)?;
    let t = to_tokens(&mut fwd.tape, mixed)?;
    let a = fwd.tape.gelu(t);
    linear(fwd, &format!("{p}.fc2"), a)
}

/// Asymmetric padding for the overlapping patch merge: nominal k/2 on the
/// leading side, trailing side trimmed to floor-division output semantics
/// (extent/stride for the strides used here).
fn merge_pad(extent: usize, k: usize, s: usize) -> (usize, usize) {
    let p = k / 2;
    let out = (extent + 2 * p - k) / s + 1;
    let total = s * (out - 1) + k;
    (p, total - extent - p)
}

/// Encode an image into the 4-level feature pyramid (/4, /8, /16, /32).
pub fn encode(fwd: &mut Forward, prefix: &str, cfg: &BackboneConfig, image: Var) -> Result<[Var; 4]> {
    let shape = fwd.tape.value(image).shape().to_vec();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::shape(format!("encoder wants [3 x H x W], got {shape:?}")));
    }
    if shape[1] % 32 != 0 || shape[2] % 32 != 0 {
        return Err(Error::shape(format!("image extents must be divisible by 32, got {shape:?}")));
    }
    let mut x = image;
    let mut levels = [x; 4];
    for i in 0..4 {
        let sp = format!("{prefix}.stage{}", i + 1);
        let (k, s) = (cfg.patch_kernel[i], cfg.patch_stride[i]);
        let xs = fwd.tape.value(x).shape().to_vec();
        let (pt, pb) = merge_pad(xs[1], k, s);
        let (pl, pr) = merge_pad(xs[2], k, s);
        let padded = fwd.tape.pad2d(x, pt, pb, pl, pr)?;
        let merged = nn::conv(fwd, &format!("{sp}.patch.conv"), padded, s, 0, 1)?;
        let ms = fwd.tape.value(merged).shape().to_vec();
        let grid = (ms[1], ms[2]);
        let mut t = to_tokens(&mut fwd.tape, merged)?;
        t = nn::layernorm(fwd, &format!("{sp}.patch.ln"), t)?;
        for j in 0..cfg.stage_depths[i] {
            let bp = format!("{sp}.block{j}");
            let n1 = nn::layernorm(fwd, &format!("{bp}.ln1"), t)?;
            let a = sr_attention(fwd, &format!("{bp}.attn"), n1, grid, cfg.heads[i], cfg.sr_ratios[i])?;
            t = fwd.tape.add(t, a)?;
            let n2 = nn::layernorm(fwd, &format!("{bp}.ln2"), t)?;
            let m = mixffn(fwd, &format!("{bp}.mlp"), n2, grid)?;
            t = fwd.tape.add(t, m)?;
        }
        t = nn::layernorm(fwd, &format!("{sp}.ln"), t)?;
        x = to_grid(&mut fwd.tape, t, grid.0, grid.1)?;
        levels[i] = x;
    }
    Ok(levels)
}

/// Level-4 supervision map: 1x1 conv, bilinear upsample to the input size,
/// sigmoid. Training-only output.
pub fn stream_head(fwd: &mut Forward, prefix: &str, f4: Var, target: (usize, usize)) -> Result<Var> {
    let logit = nn::conv(fwd, &format!("{prefix}.head"), f4, 1, 0, 1)?;
    let s = fwd.tape.value(logit).shape().to_vec();
    if target.0 % s[1] != 0 || target.1 % s[2] != 0 {
        return Err(Error::shape(format!("target {target:?} not a multiple of {s:?}")));
    }
    let up = fwd.tape.upsample_bilinear(logit, target.0 / s[1])?;
    Ok(fwd.tape.sigmoid(up))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> BackboneConfig {
        BackboneConfig {
            stage_channels: [4, 8, 8, 8],
            heads: [1, 2, 2, 2],
            mlp_ratio: 2,
            ..Default::default()
        }
    }

    fn test_image(n: usize) -> Tensor<f64> {
        Tensor::from_fn(&[3, n, n], |i| ((i % 97) as f64 / 96.0) - 0.5)
    }

    #[test]
    fn pyramid_shapes() {
        let cfg = tiny_cfg();
        cfg.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        reg_backbone(&mut store, &mut rng, "fg", &cfg);
        let mut fwd = Forward::new(&store, false);
        let img = fwd.input(test_image(64));
        let levels = encode(&mut fwd, "fg", &cfg, img).unwrap();
        for (i, (&lv, sz)) in levels.iter().zip([16usize, 8, 4, 2]).enumerate() {
            let s = fwd.tape.value(lv).shape();
            assert_eq!(s, &[cfg.stage_channels[i], sz, sz], "level {}", i + 1);
            assert!(fwd.tape.value(lv).all_finite());
        }
    }

    #[test]
    fn streams_differ() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        reg_backbone(&mut store, &mut rng, "fg", &cfg);
        reg_backbone(&mut store, &mut rng, "bg", &cfg);
        let mut fwd = Forward::new(&store, false);
        let img = fwd.input(test_image(32));
        let fo = encode(&mut fwd, "fg", &cfg, img).unwrap();
        let fb = encode(&mut fwd, "bg", &cfg, img).unwrap();
        let a = fwd.tape.value(fo[3]);
        let b = fwd.tape.value(fb[3]);
        assert_eq!(a.shape(), b.shape());
        assert!(a.data() != b.data());
    }

    #[test]
    fn head_shape_and_range() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        reg_backbone(&mut store, &mut rng, "fg", &cfg);
        let mut fwd = Forward::new(&store, false);
        let img = fwd.input(test_image(64));
        let levels = encode(&mut fwd, "fg", &cfg, img).unwrap();
        let map = stream_head(&mut fwd, "fg", levels[3], (64, 64)).unwrap();
        let v = fwd.tape.value(map);
        assert_eq!(v.shape(), &[1, 64, 64]);
        assert!(v.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn bad_configs_rejected() {
        let mut cfg = tiny_cfg();
        cfg.patch_kernel = [4, 3, 3, 3]; // kernel == stride: no overlap
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.patch_stride = [2, 2, 2, 2];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn indivisible_image_rejected() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        reg_backbone(&mut store, &mut rng, "fg", &cfg);
        let mut fwd = Forward::new(&store, false);
        let img = fwd.input(Tensor::ones(&[3, 48, 48]));
        assert!(encode(&mut fwd, "fg", &cfg, img).is_err());
    }

    #[test]
    fn sr_ratio_one_is_standard_attention() {
        // with sr = 1 the attention consumes the tokens directly; verify by
        // running the same parameters through `attention` explicitly
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        reg_attention(&mut store, &mut rng, "a", 8, 1);
        let t = Tensor::from_fn(&[6, 8], |i| (i as f64 * 0.37).sin());
        let mut fwd = Forward::new(&store, false);
        let x = fwd.input(t.clone());
        let via_sr = sr_attention(&mut fwd, "a", x, (2, 3), 2, 1).unwrap();
        let direct = attention(&mut fwd, "a", x, x, 2).unwrap();
        assert_eq!(fwd.tape.value(via_sr).data(), fwd.tape.value(direct).data());
    }
}
