//! Dual-task interactive transformer: the fused object and boundary maps
//! are patch-embedded into token sequences, run through L layers of cross
//! multi-head self-attention (queries from one branch, keys/values from the
//! patch-concatenation of both) plus MLP with residuals, and decoded back
//! into full-resolution maps. Ablation variants replace the interaction
//! with early fusion (sum, single transformer) or late fusion (two
//! independent transformers combined before the head).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{attention, to_grid};
use crate::error::{Error, Result};
use crate::nn::{self, linear, reg_bconv, reg_conv, reg_linear, reg_ln};
use crate::params::{trunc_normal, Forward, ParamStore};
use crate::tape::Var;

pub const HEAD_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DtitConfig {
    pub l: usize,
    pub d: usize,
    pub h: usize,
    pub p: usize,
    pub mlp_ratio: usize,
}

impl DtitConfig {
    /// Full-scale hyper-parameters (recorded for documentation; not trained
    /// at desk scale).
    pub fn paper() -> Self {
        DtitConfig { l: 6, d: 768, h: 12, p: 2, mlp_ratio: 4 }
    }

    pub fn desk() -> Self {
        DtitConfig { l: 2, d: 64, h: 4, p: 2, mlp_ratio: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d % self.h != 0 {
            return Err(Error::invalid(format!("D={} not divisible by h={}", self.d, self.h)));
        }
        if self.l == 0 || self.p == 0 || self.mlp_ratio == 0 {
            return Err(Error::invalid("L, P, mlp_ratio must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderVariant {
    Dtit,
    EarlyFuse,
    LateFuse,
}

fn reg_layer(store: &mut ParamStore, rng: &mut impl Rng, p: &str, cfg: &DtitConfig) {
    reg_ln(store, &format!("{p}.ln1"), cfg.d);
    reg_linear(store, rng, &format!("{p}.attn.q"), cfg.d, cfg.d, true);
    reg_linear(store, rng, &format!("{p}.attn.k"), cfg.d, cfg.d, true);
    reg_linear(store, rng, &format!("{p}.attn.v"), cfg.d, cfg.d, true);
    reg_linear(store, rng, &format!("{p}.attn.proj"), cfg.d, cfg.d, true);
    reg_ln(store, &format!("{p}.ln2"), cfg.d);
    reg_linear(store, rng, &format!("{p}.mlp.fc1"), cfg.d, cfg.d * cfg.mlp_ratio, true);
    reg_linear(store, rng, &format!("{p}.mlp.fc2"), cfg.d * cfg.mlp_ratio, cfg.d, true);
}

fn reg_branch(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    br: &str,
    cfg: &DtitConfig,
    c_f: usize,
    n_tokens: usize,
) {
    reg_linear(store, rng, &format!("dtit.{br}.embed"), cfg.p * cfg.p * c_f, cfg.d, true);
    store.insert(format!("dtit.{br}.pos"), trunc_normal(rng, &[n_tokens, cfg.d], 0.02));
    for i in 0..cfg.l {
        reg_layer(store, rng, &format!("dtit.{br}.layer{i}"), cfg);
    }
    reg_bconv(store, rng, &format!("dtit.{br}.head.bconv"), cfg.d, HEAD_WIDTH, 3);
    reg_conv(store, rng, &format!("dtit.{br}.head.conv"), 1, HEAD_WIDTH, 3);
}

/// Register the decoder. `n_tokens` is HW/P^2 of the fused feature grid.
pub fn reg_dtit(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    cfg: &DtitConfig,
    c_f: usize,
    n_tokens: usize,
    variant: DecoderVariant,
) {
    reg_branch(store, rng, "obj", cfg, c_f, n_tokens);
    if variant != DecoderVariant::EarlyFuse {
        reg_branch(store, rng, "bnd", cfg, c_f, n_tokens);
    }
    if variant == DecoderVariant::LateFuse {
        reg_conv(store, rng, "dtit.late.combine", cfg.d, 2 * cfg.d, 1);
    }
}

/// Patch-embed a fused CHW feature into [N x D] tokens plus the learned
/// position embedding. Returns the token grid layout.
pub fn embed(fwd: &mut Forward, br: &str, f: Var, cfg: &DtitConfig) -> Result<(Var, (usize, usize))> {
    let s = fwd.tape.value(f).shape().to_vec();
    if s.len() != 3 || s[1] % cfg.p != 0 || s[2] % cfg.p != 0 {
        return Err(Error::shape(format!("patch size {} does not divide {s:?}", cfg.p)));
    }
    let grid = (s[1] / cfg.p, s[2] / cfg.p);
    let patches = fwd.tape.patchify(f, cfg.p)?;
    let z = linear(fwd, &format!("dtit.{br}.embed"), patches)?;
    let pos = fwd.var(&format!("dtit.{br}.pos"));
    Ok((fwd.tape.add(z, pos)?, grid))
}

/// Cross multi-head self-attention: queries from the own branch, keys and
/// values from the patch-concatenation of both branches (own rows first),
/// all after the layer's LN. K/V length is 2N.
pub fn cmsa(fwd: &mut Forward, prefix: &str, z_own: Var, z_other: Var, heads: usize) -> Result<Var> {
    let so = fwd.tape.value(z_own).shape().to_vec();
    let st = fwd.tape.value(z_other).shape().to_vec();
    if so != st {
        return Err(Error::shape(format!("cmsa sequences {so:?} vs {st:?}")));
    }
    let n_own = nn::layernorm(fwd, &format!("{prefix}.ln1"), z_own)?;
    let n_oth = nn::layernorm(fwd, &format!("{prefix}.ln1"), z_other)?;
    let kv = fwd.tape.concat_rows(n_own, n_oth)?;
    attention(fwd, &format!("{prefix}.attn"), n_own, kv, heads)
}

/// Standard (non-interactive) self-attention sublayer; K/V length N.
fn self_attn(fwd: &mut Forward, prefix: &str, z: Var, heads: usize) -> Result<Var> {
    let n = nn::layernorm(fwd, &format!("{prefix}.ln1"), z)?;
    attention(fwd, &format!("{prefix}.attn"), n, n, heads)
}

fn mlp_sublayer(fwd: &mut Forward, prefix: &str, u: Var) -> Result<Var> {
    let n = nn::layernorm(fwd, &format!("{prefix}.ln2"), u)?;
    let h1 = linear(fwd, &format!("{prefix}.mlp.fc1"), n)?;
    let a = fwd.tape.gelu(h1);
    let m = linear(fwd, &format!("{prefix}.mlp.fc2"), a)?;
    fwd.tape.add(u, m)
}

/// One interactive layer. Both branches read the same pre-layer states
/// (synchronous update).
pub fn dtit_layer(fwd: &mut Forward, cfg: &DtitConfig, i: usize, z_o: Var, z_e: Var) -> Result<(Var, Var)> {
    let po = format!("dtit.obj.layer{i}");
    let pe = format!("dtit.bnd.layer{i}");
    let ao = cmsa(fwd, &po, z_o, z_e, cfg.h)?;
    let ae = cmsa(fwd, &pe, z_e, z_o, cfg.h)?;
    let uo = fwd.tape.add(z_o, ao)?;
    let ue = fwd.tape.add(z_e, ae)?;
    Ok((mlp_sublayer(fwd, &po, uo)?, mlp_sublayer(fwd, &pe, ue)?))
}

fn self_layer(fwd: &mut Forward, br: &str, cfg: &DtitConfig, i: usize, z: Var) -> Result<Var> {
    let p = format!("dtit.{br}.layer{i}");
    let a = self_attn(fwd, &p, z, cfg.h)?;
    let u = fwd.tape.add(z, a)?;
    mlp_sublayer(fwd, &p, u)
}

/// Decode a D x gh x gw grid into a full-resolution map: BConv to the head
/// width, 3x3 conv to one channel, bilinear upsample by 4P, sigmoid.
fn head_on_grid(fwd: &mut Forward, br: &str, g: Var, p: usize) -> Result<Var> {
    let b = nn::bconv(fwd, &format!("dtit.{br}.head.bconv"), g, 1, 1)?;
    let logit = nn::conv(fwd, &format!("dtit.{br}.head.conv"), b, 1, 1, 1)?;
    let up = fwd.tape.upsample_bilinear(logit, 4 * p)?;
    Ok(fwd.tape.sigmoid(up))
}

/// Tokens [N x D] back to the patch grid and through the prediction head.
pub fn predict_head(
    fwd: &mut Forward,
    br: &str,
    z: Var,
    grid: (usize, usize),
    cfg: &DtitConfig,
) -> Result<Var> {
    let s = fwd.tape.value(z).shape().to_vec();
    if s[0] != grid.0 * grid.1 {
        return Err(Error::shape(format!("{} tokens do not fill a {grid:?} grid", s[0])));
    }
    let g = to_grid(&mut fwd.tape, z, grid.0, grid.1)?;
    head_on_grid(fwd, br, g, cfg.p)
}

/// Run the configured decoder on the fused object/boundary features.
/// Returns S^o and, in DTIT mode, S^e.
pub fn decode(
    fwd: &mut Forward,
    cfg: &DtitConfig,
    variant: DecoderVariant,
    f_o: Var,
    f_e: Var,
) -> Result<(Var, Option<Var>)> {
    match variant {
        DecoderVariant::Dtit => {
            let (mut zo, grid) = embed(fwd, "obj", f_o, cfg)?;
            let (mut ze, _) = embed(fwd, "bnd", f_e, cfg)?;
            for i in 0..cfg.l {
                (zo, ze) = dtit_layer(fwd, cfg, i, zo, ze)?;
            }
            let so = predict_head(fwd, "obj", zo, grid, cfg)?;
            let se = predict_head(fwd, "bnd", ze, grid, cfg)?;
            Ok((so, Some(se)))
        }
        DecoderVariant::EarlyFuse => {
            // parameter-free combination (sum) so the variant's parameter
            // set is exactly the object branch
            let f = fwd.tape.add(f_o, f_e)?;
            let (mut z, grid) = embed(fwd, "obj", f, cfg)?;
            for i in 0..cfg.l {
                z = self_layer(fwd, "obj", cfg, i, z)?;
            }
            Ok((predict_head(fwd, "obj", z, grid, cfg)?, None))
        }
        DecoderVariant::LateFuse => {
            let (mut zo, grid) = embed(fwd, "obj", f_o, cfg)?;
            let (mut ze, _) = embed(fwd, "bnd", f_e, cfg)?;
            for i in 0..cfg.l {
                zo = self_layer(fwd, "obj", cfg, i, zo)?;
                ze = self_layer(fwd, "bnd", cfg, i, ze)?;
            }
            let go = to_grid(&mut fwd.tape, zo, grid.0, grid.1)?;
            let ge = to_grid(&mut fwd.tape, ze, grid.0, grid.1)?;
            let cat = fwd.tape.concat_channel(go, ge)?;
            let combined = nn::conv(fwd, "dtit.late.combine", cat, 1, 0, 1)?;
            Ok((head_on_grid(fwd, "obj", combined, cfg.p)?, None))
        }
    }
}
