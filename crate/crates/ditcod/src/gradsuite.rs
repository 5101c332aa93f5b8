//! The full finite-difference verification suite over every differentiable
//! op and the model composites, shared by the test harness and the
//! `gradcheck` CLI subcommand. Three fixed seeds per check, central
//! differences at eps 1e-5, rel-err tolerance 1e-4 in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agg::{agg_pipeline, reg_agg};
use crate::backbone::{encode, reg_backbone, BackboneConfig};
use crate::boundary::{boundary_features, reg_boundary};
use crate::dtit::{dtit_layer, embed, predict_head, reg_dtit, DecoderVariant, DtitConfig};
use crate::gradcheck::{gradcheck, gradcheck_composite, GradReport};
use crate::loss::{bce_loss, ppa_loss};
use crate::nn::{bconv, reg_bconv};
use crate::params::{Forward, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Result;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: [u64; 3] = [0, 1, 2];

/// One suite entry: check name (with seed) and its report.
pub type SuiteResult = (String, GradReport);

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduce a map to a scalar with a fixed non-uniform projection so sign
/// errors cannot cancel.
fn project(t: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let r = t.constant(Tensor::from_fn(&shape, |i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.5));
    let p = t.mul(y, r)?;
    Ok(t.sum(p))
}

fn check_op<F>(out: &mut Vec<SuiteResult>, name: &str, shape: &[usize], lo: f64, hi: f64, f: F)
where
    F: Fn(&mut Tape<f64>, Var, &mut ChaCha8Rng) -> Result<Var>,
{
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = rand_tensor(&mut rng, shape, lo, hi);
        // rebuild the same constants on every probe by reseeding
        let rep = gradcheck(
            |t, x| {
                let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                f(t, x, &mut r)
            },
            &x0,
            EPS,
            TOL,
        )
        .expect("gradcheck harness failure");
        out.push((format!("{name}[seed {seed}]"), rep));
    }
}

pub fn elementwise_ops() -> Vec<SuiteResult> {
    let mut out = Vec::new();
    check_op(&mut out, "add", &[2, 3], -1.0, 1.0, |t, x, r| {
        let b = t.constant(rand_tensor(r, &[2, 3], -1.0, 1.0));
        let y = t.add(x, b)?;
        project(t, y)
    });
    check_op(&mut out, "sub", &[2, 3], -1.0, 1.0, |t, x, r| {
        let b = t.constant(rand_tensor(r, &[2, 3], -1.0, 1.0));
        let y = t.sub(x, b)?;
        project(t, y)
    });
    check_op(&mut out, "mul", &[2, 3], -1.0, 1.0, |t, x, r| {
        let b = t.constant(rand_tensor(r, &[2, 3], -1.0, 1.0));
        let y = t.mul(x, b)?;
        project(t, y)
    });
    check_op(&mut out, "div", &[2, 3], -1.0, 1.0, |t, x, r| {
        let b = t.constant(rand_tensor(r, &[2, 3], 0.5, 2.0));
        let y = t.div(x, b)?;
        project(t, y)
    });
    check_op(&mut out, "div_denominator", &[2, 3], 0.5, 2.0, |t, x, r| {
        let a = t.constant(rand_tensor(r, &[2, 3], -1.0, 1.0));
        let y = t.div(a, x)?;
        project(t, y)
    });
    check_op(&mut out, "scale", &[4], -2.0, 2.0, |t, x, _| {
        let y = t.scale(x, -1.7);
        project(t, y)
    });
    check_op(&mut out, "add_scalar", &[4], -2.0, 2.0, |t, x, _| {
        let y = t.add_scalar(x, 0.3);
        project(t, y)
    });
    check_op(&mut out, "neg", &[4], -2.0, 2.0, |t, x, _| {
        let y = t.neg(x);
        project(t, y)
    });
    // keep relu/clamp probes away from their kinks
    check_op(&mut out, "relu_positive", &[6], 0.2, 2.0, |t, x, _| {
        let y = t.relu(x);
        project(t, y)
    });
    check_op(&mut out, "relu_negative", &[6], -2.0, -0.2, |t, x, _| {
        let y = t.relu(x);
        project(t, y)
    });
    check_op(&mut out, "sigmoid", &[6], -3.0, 3.0, |t, x, _| {
        let y = t.sigmoid(x);
        project(t, y)
    });
    check_op(&mut out, "gelu", &[6], -3.0, 3.0, |t, x, _| {
        let y = t.gelu(x);
        project(t, y)
    });
    check_op(&mut out, "ln", &[6], 0.2, 3.0, |t, x, _| {
        let y = t.ln(x);
        project(t, y)
    });
    check_op(&mut out, "clamp_interior", &[6], -0.4, 0.4, |t, x, _| {
        let y = t.clamp(x, -0.5, 0.5);
        project(t, y)
    });
    check_op(&mut out, "sum", &[2, 5], -1.0, 1.0, |t, x, _| Ok(t.sum(x)));
    check_op(&mut out, "mean", &[2, 5], -1.0, 1.0, |t, x, _| Ok(t.mean(x)));
    out
}

pub fn linalg_ops() -> Vec<SuiteResult> {
    let mut out = Vec::new();
    check_op(&mut out, "matmul_lhs", &[3, 4], -1.0, 1.0, |t, x, r| {
        let b = t.constant(rand_tensor(r, &[4, 2], -1.0, 1.0));
        let y = t.matmul(x, b)?;
        project(t, y)
    });
    check_op(&mut out, "matmul_rhs", &[4, 2], -1.0, 1.0, |t, x, r| {
        let a = t.constant(rand_tensor(r, &[3, 4], -1.0, 1.0));
        let y = t.matmul(a, x)?;
        project(t, y)
    });
    check_op(&mut out, "transpose2d", &[3, 4], -1.0, 1.0, |t, x, _| {
        let y = t.transpose2d(x)?;
        project(t, y)
    });
    check_op(&mut out, "reshape", &[3, 4], -1.0, 1.0, |t, x, _| {
        let y = t.reshape(x, &[2, 6])?;
        project(t, y)
    });
    check_op(&mut out, "add_row_bias", &[3, 4], -1.0, 1.0, |t, x, r| {
        let b = t.constant(rand_tensor(r, &[4], -1.0, 1.0));
        let y = t.add_row_bias(x, b)?;
        project(t, y)
    });
    check_op(&mut out, "add_row_bias_wrt_bias", &[4], -1.0, 1.0, |t, x, r| {
        let a = t.constant(rand_tensor(r, &[3, 4], -1.0, 1.0));
        let y = t.add_row_bias(a, x)?;
        project(t, y)
    });
    check_op(&mut out, "narrow_cols", &[3, 6], -1.0, 1.0, |t, x, _| {
        let y = t.narrow_cols(x, 2, 3)?;
        project(t, y)
    });
    check_op(&mut out, "concat_rows", &[2, 3], -1.0, 1.0, |t, x, r| {
        let b = t.constant(rand_tensor(r, &[4, 3], -1.0, 1.0));
        let y = t.concat_rows(x, b)?;
        project(t, y)
    });
    check_op(&mut out, "concat_cols", &[3, 2], -1.0, 1.0, |t, x, r| {
        let b = t.constant(rand_tensor(r, &[3, 4], -1.0, 1.0));
        let y = t.concat_cols(&[x, b, x])?;
        project(t, y)
    });
    check_op(&mut out, "concat_channel", &[2, 3, 3], -1.0, 1.0, |t, x, r| {
        let b = t.constant(rand_tensor(r, &[3, 3, 3], -1.0, 1.0));
        let y = t.concat_channel(x, b)?;
        project(t, y)
    });
    check_op(&mut out, "patchify", &[3, 4, 4], -1.0, 1.0, |t, x, _| {
        let y = t.patchify(x, 2)?;
        project(t, y)
    });
    check_op(&mut out, "pad2d", &[2, 3, 4], -1.0, 1.0, |t, x, _| {
        let y = t.pad2d(x, 1, 2, 0, 3)?;
        project(t, y)
    });
    out
}

pub fn conv_and_norm_ops() -> Vec<SuiteResult> {
    let mut out = Vec::new();
    // the documented reference case: 2x5x5 input, 3x2x3x3 kernel
    check_op(&mut out, "conv2d_x", &[2, 5, 5], -1.0, 1.0, |t, x, r| {
        let w = t.constant(rand_tensor(r, &[3, 2, 3, 3], -1.0, 1.0));
        let b = t.constant(rand_tensor(r, &[3], -1.0, 1.0));
        let y = t.conv2d(x, w, b, 1, 1, 1)?;
        project(t, y)
    });
    check_op(&mut out, "conv2d_w", &[3, 2, 3, 3], -1.0, 1.0, |t, x, r| {
        let i = t.constant(rand_tensor(r, &[2, 5, 5], -1.0, 1.0));
        let b = t.constant(rand_tensor(r, &[3], -1.0, 1.0));
        let y = t.conv2d(i, x, b, 1, 1, 1)?;
        project(t, y)
    });
    check_op(&mut out, "conv2d_b", &[3], -1.0, 1.0, |t, x, r| {
        let i = t.constant(rand_tensor(r, &[2, 5, 5], -1.0, 1.0));
        let w = t.constant(rand_tensor(r, &[3, 2, 3, 3], -1.0, 1.0));
        let y = t.conv2d(i, w, x, 1, 1, 1)?;
        project(t, y)
    });
    check_op(&mut out, "conv2d_strided", &[2, 7, 7], -1.0, 1.0, |t, x, r| {
        let w = t.constant(rand_tensor(r, &[4, 2, 3, 3], -1.0, 1.0));
        let b = t.constant(rand_tensor(r, &[4], -1.0, 1.0));
        let y = t.conv2d(x, w, b, 2, 1, 1)?;
        project(t, y)
    });
    check_op(&mut out, "conv2d_grouped_x", &[4, 5, 5], -1.0, 1.0, |t, x, r| {
        let w = t.constant(rand_tensor(r, &[4, 1, 3, 3], -1.0, 1.0));
        let b = t.constant(rand_tensor(r, &[4], -1.0, 1.0));
        let y = t.conv2d(x, w, b, 1, 1, 4)?;
        project(t, y)
    });
    check_op(&mut out, "conv2d_grouped_w", &[4, 1, 3, 3], -1.0, 1.0, |t, x, r| {
        let i = t.constant(rand_tensor(r, &[4, 5, 5], -1.0, 1.0));
        let b = t.constant(rand_tensor(r, &[4], -1.0, 1.0));
        let y = t.conv2d(i, x, b, 1, 1, 4)?;
        project(t, y)
    });
    check_op(&mut out, "conv2d_nopad_stride", &[3, 8, 8], -1.0, 1.0, |t, x, r| {
        let w = t.constant(rand_tensor(r, &[2, 3, 4, 4], -1.0, 1.0));
        let b = t.constant(rand_tensor(r, &[2], -1.0, 1.0));
        let y = t.conv2d(x, w, b, 4, 0, 1)?;
        project(t, y)
    });
    check_op(&mut out, "batchnorm_eval_x", &[3, 4, 4], -1.0, 1.0, |t, x, r| {
        let g = t.constant(rand_tensor(r, &[3], 0.5, 1.5));
        let b = t.constant(rand_tensor(r, &[3], -0.5, 0.5));
        let m = t.constant(rand_tensor(r, &[3], -0.2, 0.2));
        let v = t.constant(rand_tensor(r, &[3], 0.5, 1.5));
        let y = t.batchnorm_eval(x, g, b, m, v, 1e-5)?;
        project(t, y)
    });
    check_op(&mut out, "batchnorm_train_x", &[3, 4, 4], -1.0, 1.0, |t, x, r| {
        let g = t.constant(rand_tensor(r, &[3], 0.5, 1.5));
        let b = t.constant(rand_tensor(r, &[3], -0.5, 0.5));
        let y = t.batchnorm_train(x, g, b, 1e-5)?;
        project(t, y)
    });
    check_op(&mut out, "batchnorm_train_gamma", &[3], 0.5, 1.5, |t, x, r| {
        let i = t.constant(rand_tensor(r, &[3, 4, 4], -1.0, 1.0));
        let b = t.constant(rand_tensor(r, &[3], -0.5, 0.5));
        let y = t.batchnorm_train(i, x, b, 1e-5)?;
        project(t, y)
    });
    check_op(&mut out, "layernorm_z", &[4, 6], -1.0, 1.0, |t, x, r| {
        let g = t.constant(rand_tensor(r, &[6], 0.5, 1.5));
        let b = t.constant(rand_tensor(r, &[6], -0.5, 0.5));
        let y = t.layernorm(x, g, b, 1e-5)?;
        project(t, y)
    });
    check_op(&mut out, "layernorm_gamma", &[6], 0.5, 1.5, |t, x, r| {
        let z = t.constant(rand_tensor(r, &[4, 6], -1.0, 1.0));
        let b = t.constant(rand_tensor(r, &[6], -0.5, 0.5));
        let y = t.layernorm(z, x, b, 1e-5)?;
        project(t, y)
    });
    check_op(&mut out, "softmax_rows", &[3, 5], -2.0, 2.0, |t, x, _| {
        let y = t.softmax_rows(x)?;
        project(t, y)
    });
    check_op(&mut out, "upsample_bilinear", &[2, 3, 3], -1.0, 1.0, |t, x, _| {
        let y = t.upsample_bilinear(x, 2)?;
        project(t, y)
    });
    check_op(&mut out, "upsample_bilinear_x4", &[1, 2, 2], -1.0, 1.0, |t, x, _| {
        let y = t.upsample_bilinear(x, 4)?;
        project(t, y)
    });
    out
}

fn check_composite<F>(
    out: &mut Vec<SuiteResult>,
    name: &str,
    seed: u64,
    store: &ParamStore,
    input: &Tensor<f64>,
    build: F,
) where
    F: Fn(&mut Forward, Var) -> Result<Var>,
{
    let reports =
        gradcheck_composite(store, input, EPS, TOL, 24, build).expect("gradcheck harness failure");
    for (tensor, rep) in reports {
        out.push((format!("{name}[seed {seed}] / {tensor}"), rep));
    }
}

pub fn composites() -> Vec<SuiteResult> {
    let mut out = Vec::new();

    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        reg_bconv(&mut store, &mut rng, "t", 2, 3, 3);
        // non-trivial running stats so eval-mode BN has real structure
        store.set("t.bn.rmean", rand_tensor(&mut rng, &[3], -0.2, 0.2));
        store.set("t.bn.rvar", rand_tensor(&mut rng, &[3], 0.5, 1.5));
        let x = rand_tensor(&mut rng, &[2, 5, 5], -1.0, 1.0);
        check_composite(&mut out, "bconv", seed, &store, &x, |fwd, x| bconv(fwd, "t", x, 1, 1));
    }

    // single-block encoder stage at small width
    let bcfg = BackboneConfig {
        stage_channels: [4, 4, 4, 4],
        heads: [2, 2, 2, 2],
        mlp_ratio: 2,
        ..Default::default()
    };
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        reg_backbone(&mut store, &mut rng, "fg", &bcfg);
        let x = rand_tensor(&mut rng, &[3, 32, 32], 0.0, 1.0);
        check_composite(&mut out, "backbone_stage1", seed, &store, &x, |fwd, x| {
            Ok(encode(fwd, "fg", &bcfg, x)?[0])
        });
    }

    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        reg_boundary(&mut store, &mut rng, &[3, 3, 3, 3], 4);
        // perturb the shared input; both pyramids derive from it so the
        // minus path is exercised with correlated operands
        let x = rand_tensor(&mut rng, &[3, 4, 4], -1.0, 1.0);
        let shift = rand_tensor(&mut rng, &[3, 4, 4], 0.1, 0.5);
        check_composite(&mut out, "boundary_level", seed, &store, &x, |fwd, x| {
            let s = fwd.input(shift.clone());
            let fb = fwd.tape.add(x, s)?;
            let fe = boundary_features(fwd, &[x; 4], &[fb; 4])?;
            Ok(fe[0])
        });
    }

    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        reg_agg(&mut store, &mut rng, "obj", &[3, 3, 3, 3], 4);
        let x = rand_tensor(&mut rng, &[3, 8, 8], -1.0, 1.0);
        let l2 = rand_tensor(&mut rng, &[3, 4, 4], -1.0, 1.0);
        let l3 = rand_tensor(&mut rng, &[3, 2, 2], -1.0, 1.0);
        let l4 = rand_tensor(&mut rng, &[3, 1, 1], -1.0, 1.0);
        check_composite(&mut out, "agg_pipeline", seed, &store, &x, |fwd, x| {
            let f2 = fwd.input(l2.clone());
            let f3 = fwd.input(l3.clone());
            let f4 = fwd.input(l4.clone());
            agg_pipeline(fwd, "obj", &[x, f2, f3, f4])
        });
    }

    let dcfg = DtitConfig { l: 1, d: 6, h: 2, p: 2, mlp_ratio: 2 };
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        reg_dtit(&mut store, &mut rng, &dcfg, 4, 4, DecoderVariant::Dtit);
        let zo = rand_tensor(&mut rng, &[4, 6], -1.0, 1.0);
        let ze = rand_tensor(&mut rng, &[4, 6], -1.0, 1.0);
        check_composite(&mut out, "dtit_layer", seed, &store, &zo, |fwd, x| {
            let e = fwd.input(ze.clone());
            let (o, _) = dtit_layer(fwd, &dcfg, 0, x, e)?;
            Ok(o)
        });
        // and w.r.t. the other branch's tokens (they enter through the
        // cross-attention keys and values)
        check_composite(&mut out, "dtit_layer_other", seed, &store, &ze, |fwd, x| {
            let o = fwd.input(zo.clone());
            let (uo, _) = dtit_layer(fwd, &dcfg, 0, o, x)?;
            Ok(uo)
        });
    }

    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        reg_dtit(&mut store, &mut rng, &dcfg, 4, 4, DecoderVariant::Dtit);
        let z = rand_tensor(&mut rng, &[4, 6], -1.0, 1.0);
        check_composite(&mut out, "predict_head", seed, &store, &z, |fwd, x| {
            predict_head(fwd, "obj", x, (2, 2), &dcfg)
        });
    }

    // end to end: embed -> L layers -> head, w.r.t. the fused feature map
    let dcfg2 = DtitConfig { l: 2, d: 6, h: 2, p: 2, mlp_ratio: 2 };
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        reg_dtit(&mut store, &mut rng, &dcfg2, 4, 4, DecoderVariant::Dtit);
        let fo = rand_tensor(&mut rng, &[4, 4, 4], -1.0, 1.0);
        let fe = rand_tensor(&mut rng, &[4, 4, 4], -1.0, 1.0);
        check_composite(&mut out, "embed_layers_head", seed, &store, &fo, |fwd, x| {
            let (mut zo, grid) = embed(fwd, "obj", x, &dcfg2)?;
            let e = fwd.input(fe.clone());
            let (mut ze, _) = embed(fwd, "bnd", e, &dcfg2)?;
            for i in 0..dcfg2.l {
                (zo, ze) = dtit_layer(fwd, &dcfg2, i, zo, ze)?;
            }
            predict_head(fwd, "obj", zo, grid, &dcfg2)
        });
    }

    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = Tensor::from_fn(&[1, 6, 6], |i| if (i / 6 + i % 6) % 3 == 0 { 1.0 } else { 0.0 });
        let pred = rand_tensor(&mut rng, &[1, 6, 6], 0.2, 0.8);
        let store = ParamStore::new();
        check_composite(&mut out, "ppa_loss", seed, &store, &pred, |fwd, x| {
            ppa_loss(fwd, x, &gt, 5)
        });
        check_composite(&mut out, "bce_loss", seed, &store, &pred, |fwd, x| {
            bce_loss(fwd, x, &gt)
        });
    }
    out
}

/// Run everything; returns all results in a stable order.
pub fn full_suite() -> Vec<SuiteResult> {
    let mut all = elementwise_ops();
    all.extend(linalg_ops());
    all.extend(conv_and_norm_ops());
    all.extend(composites());
    all
}
