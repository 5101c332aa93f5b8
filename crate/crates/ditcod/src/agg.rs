//! Feature aggregation, applied identically (with independent parameters)
//! to the object pyramid and the boundary pyramid: enhance each level with
//! the Hadamard product of all upsampled higher levels, aggregate top-down
//! by channel concatenation, and fuse level 1 into the single map fed to
//! the transformer decoder.
//!
//! Channel bookkeeping: levels are pre-projected to a common width `c_f`;
//! aggregation concatenates without re-projection, so q_i carries
//! c_f * (5 - i) channels and the fuse step projects 4*c_f back to c_f.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{bconv, reg_bconv};
use crate::params::{Forward, ParamStore};
use crate::tape::Var;

/// Register one branch ("obj" or "bnd"). `in_channels` are the raw per-level
/// widths before pre-projection.
pub fn reg_agg(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    branch: &str,
    in_channels: &[usize; 4],
    c_f: usize,
) {
    for i in 1..=4 {
        reg_bconv(store, rng, &format!("agg.{branch}.pre.level{i}"), in_channels[i - 1], c_f, 3);
    }
    // enhance: one BConv per (target level i, source level j > i)
    for i in 1..=3 {
        for j in i + 1..=4 {
            reg_bconv(store, rng, &format!("agg.{branch}.enh.level{i}.from{j}"), c_f, c_f, 3);
        }
    }
    // aggregate: one channel-preserving BConv per upsampled q
    for i in 1..=3 {
        let ch = c_f * (4 - i);
        reg_bconv(store, rng, &format!("agg.{branch}.agg.level{i}"), ch, ch, 3);
    }
    reg_bconv(store, rng, &format!("agg.{branch}.fuse"), 4 * c_f, c_f, 3);
}

/// Project raw pyramid levels to the common width.
pub fn project_levels(fwd: &mut Forward, branch: &str, levels: &[Var; 4]) -> Result<[Var; 4]> {
    let mut out = [levels[0]; 4];
    for i in 0..4 {
        out[i] = bconv(fwd, &format!("agg.{branch}.pre.level{}", i + 1), levels[i], 1, 1)?;
    }
    Ok(out)
}

fn check_nested(fwd: &Forward, f: &[Var; 4]) -> Result<()> {
    for i in 0..3 {
        let a = fwd.tape.value(f[i]).shape().to_vec();
        let b = fwd.tape.value(f[i + 1]).shape().to_vec();
        if a[1] != 2 * b[1] || a[2] != 2 * b[2] {
            return Err(Error::shape(format!(
                "levels {} and {} not nested by factor 2: {a:?} vs {b:?}",
                i + 1,
                i + 2
            )));
        }
    }
    Ok(())
}

/// g_4 = f_4; g_i = f_i (*) prod_{j>i} BConv(Up(f_j)), each f_j upsampled
/// straight to level-i size (factors ascend in j).
pub fn enhance(fwd: &mut Forward, branch: &str, f: &[Var; 4]) -> Result<[Var; 4]> {
    check_nested(fwd, f)?;
    let mut g = [f[0]; 4];
    g[3] = f[3];
    for i in 0..3 {
        let mut prod: Option<Var> = None;
        for j in i + 1..4 {
            let up = fwd.tape.upsample_bilinear(f[j], 1 << (j - i))?;
            let t = bconv(fwd, &format!("agg.{branch}.enh.level{}.from{}", i + 1, j + 1), up, 1, 1)?;
            prod = Some(match prod {
                None => t,
                Some(p) => fwd.tape.mul(p, t)?,
            });
        }
        g[i] = fwd.tape.mul(f[i], prod.expect("levels above i"))?;
    }
    Ok(g)
}

/// q_4 = g_4; q_i = Concat_channel(g_i, BConv(Up(q_{i+1}))).
pub fn aggregate(fwd: &mut Forward, branch: &str, g: &[Var; 4]) -> Result<[Var; 4]> {
    let mut q = [g[0]; 4];
    q[3] = g[3];
    for i in (0..3).rev() {
        let up = fwd.tape.upsample_bilinear(q[i + 1], 2)?;
        let t = bconv(fwd, &format!("agg.{branch}.agg.level{}", i + 1), up, 1, 1)?;
        q[i] = fwd.tape.concat_channel(g[i], t)?;
    }
    Ok(q)
}

/// F^l = BConv(q_1), the tensor handed to the transformer decoder.
pub fn fuse(fwd: &mut Forward, branch: &str, q1: Var) -> Result<Var> {
    bconv(fwd, &format!("agg.{branch}.fuse"), q1, 1, 1)
}

/// Full pipeline: pre-projection, enhance, aggregate, fuse.
pub fn agg_pipeline(fwd: &mut Forward, branch: &str, raw_levels: &[Var; 4]) -> Result<Var> {
    let f = project_levels(fwd, branch, raw_levels)?;
    let g = enhance(fwd, branch, &f)?;
    let q = aggregate(fwd, branch, &g)?;
    fuse(fwd, branch, q[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const CF: usize = 4;

    fn store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut s = ParamStore::new();
        reg_agg(&mut s, &mut rng, "obj", &[CF; 4], CF);
        s
    }

    fn const_pyramid(fwd: &mut Forward, vals: [f64; 4]) -> [Var; 4] {
        let sizes = [16usize, 8, 4, 2];
        let mut out = [Var(0); 4];
        for i in 0..4 {
            out[i] = fwd.input(Tensor::full(&[CF, sizes[i], sizes[i]], vals[i]));
        }
        out
    }

    #[test]
    fn identity_constant_ones() {
        let s = store();
        let mut fwd = Forward::new(&s, false);
        fwd.identity_bconv = true;
        let f = const_pyramid(&mut fwd, [1.0; 4]);
        let g = enhance(&mut fwd, "obj", &f).unwrap();
        for &v in &g {
            assert!(fwd.tape.value(v).data().iter().all(|&x| (x - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn identity_hand_product() {
        // f1=2, f2=3, f3=f4=1 -> g1 = 2*3*1*1 = 6 (constants survive
        // bilinear upsampling exactly)
        let s = store();
        let mut fwd = Forward::new(&s, false);
        fwd.identity_bconv = true;
        let f = const_pyramid(&mut fwd, [2.0, 3.0, 1.0, 1.0]);
        let g = enhance(&mut fwd, "obj", &f).unwrap();
        assert!(fwd.tape.value(g[0]).data().iter().all(|&x| (x - 6.0).abs() < 1e-10));
        // g4 is f4 bit-exactly
        assert_eq!(fwd.tape.value(g[3]).data(), fwd.tape.value(f[3]).data());
    }

    #[test]
    fn aggregate_channel_recurrence() {
        let s = store();
        let mut fwd = Forward::new(&s, false);
        let raw = const_pyramid(&mut fwd, [0.5, 1.0, -0.3, 0.7]);
        let f = project_levels(&mut fwd, "obj", &raw).unwrap();
        let g = enhance(&mut fwd, "obj", &f).unwrap();
        let q = aggregate(&mut fwd, "obj", &g).unwrap();
        let expect = [4 * CF, 3 * CF, 2 * CF, CF];
        let sizes = [16usize, 8, 4, 2];
        for i in 0..4 {
            assert_eq!(fwd.tape.value(q[i]).shape(), &[expect[i], sizes[i], sizes[i]]);
        }
        let fused = fuse(&mut fwd, "obj", q[0]).unwrap();
        assert_eq!(fwd.tape.value(fused).shape(), &[CF, 16, 16]);
    }

    #[test]
    fn non_nested_rejected() {
        let s = store();
        let mut fwd = Forward::new(&s, false);
        let mut f = const_pyramid(&mut fwd, [1.0; 4]);
        f[1] = fwd.input(Tensor::ones(&[CF, 6, 6]));
        assert!(enhance(&mut fwd, "obj", &f).is_err());
    }
}
