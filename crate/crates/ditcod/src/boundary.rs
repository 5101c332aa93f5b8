//! Boundary feature generation: per pyramid level, project both streams to
//! a common width and subtract, so certain pixels land near +/-1 and
//! uncertain (transition) pixels near 0, then refine with one more BConv.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{bconv, conv, reg_bconv, reg_conv};
use crate::params::{Forward, ParamStore};
use crate::tape::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryVariant {
    /// The minus operation between the foreground and background streams.
    Minus,
    /// Ablation: a dedicated third encoder supervised on boundary GT stands
    /// in for the subtraction (its pyramid arrives as `fb` here).
    BoundaryEncoding,
}

/// Register per-level parameters: projections a (foreground) and b
/// (background) to `c_f` channels, and refinement c.
pub fn reg_boundary(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    stage_channels: &[usize; 4],
    c_f: usize,
) {
    for i in 0..4 {
        let p = format!("bnd.level{}", i + 1);
        reg_bconv(store, rng, &format!("{p}.a"), stage_channels[i], c_f, 3);
        reg_bconv(store, rng, &format!("{p}.b"), stage_channels[i], c_f, 3);
        reg_bconv(store, rng, &format!("{p}.c"), c_f, c_f, 3);
        // per-level supervision head (1x1 conv to one channel)
        reg_conv(store, rng, &format!("{p}.head"), 1, c_f, 1);
    }
}

/// f_i^e = BConv_c(BConv_a(f_i^o) - BConv_b(f_i^b)) for each level.
pub fn boundary_features(fwd: &mut Forward, fo: &[Var; 4], fb: &[Var; 4]) -> Result<[Var; 4]> {
    let mut out = [fo[0]; 4];
    for i in 0..4 {
        let so = fwd.tape.value(fo[i]).shape().to_vec();
        let sb = fwd.tape.value(fb[i]).shape().to_vec();
        if so != sb {
            return Err(Error::shape(format!("level {}: {so:?} vs {sb:?}", i + 1)));
        }
        let p = format!("bnd.level{}", i + 1);
        let a = bconv(fwd, &format!("{p}.a"), fo[i], 1, 1)?;
        let b = bconv(fwd, &format!("{p}.b"), fb[i], 1, 1)?;
        let d = fwd.tape.sub(a, b)?;
        out[i] = bconv(fwd, &format!("{p}.c"), d, 1, 1)?;
    }
    Ok(out)
}

/// Per-level boundary supervision map at the target (input) resolution.
pub fn boundary_level_head(
    fwd: &mut Forward,
    level: usize,
    fe: Var,
    target: (usize, usize),
) -> Result<Var> {
    let logit = conv(fwd, &format!("bnd.level{level}.head"), fe, 1, 0, 1)?;
    let s = fwd.tape.value(logit).shape().to_vec();
    if target.0 % s[1] != 0 {
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

    fn store(c_f: usize) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = ParamStore::new();
        reg_boundary(&mut s, &mut rng, &[4, 8, 8, 8], c_f);
        s
    }

    fn pyramid(fwd: &mut Forward, chans: [usize; 4], scale: f64) -> [Var; 4] {
        let sizes = [16usize, 8, 4, 2];
        let mut out = [Var(0); 4];
        for i in 0..4 {
            out[i] = fwd.input(Tensor::from_fn(&[chans[i], sizes[i], sizes[i]], |k| {
                ((k as f64) * 0.19).cos() * scale
            }));
        }
        out
    }

    #[test]
    fn identity_mode_equal_pyramids_cancel() {
        let s = store(8);
        let mut fwd = Forward::new(&s, false);
        fwd.identity_bconv = true;
        let fo = pyramid(&mut fwd, [4, 8, 8, 8], 1.0);
        let fe = boundary_features(&mut fwd, &fo, &fo).unwrap();
        for &v in &fe {
            assert!(fwd.tape.value(v).data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn identity_mode_antisymmetric() {
        let s = store(8);
        let mut fwd = Forward::new(&s, false);
        fwd.identity_bconv = true;
        let fo = pyramid(&mut fwd, [4, 8, 8, 8], 1.0);
        let fb = pyramid(&mut fwd, [4, 8, 8, 8], -0.7);
        let ab = boundary_features(&mut fwd, &fo, &fb).unwrap();
        let ba = boundary_features(&mut fwd, &fb, &fo).unwrap();
        for (&x, &y) in ab.iter().zip(&ba) {
            let (xv, yv) = (fwd.tape.value(x), fwd.tape.value(y));
            for (a, b) in xv.data().iter().zip(yv.data()) {
                assert!((a + b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn output_shapes_projected_to_common_width() {
        let s = store(8);
        let mut fwd = Forward::new(&s, false);
        let fo = pyramid(&mut fwd, [4, 8, 8, 8], 1.0);
        let fb = pyramid(&mut fwd, [4, 8, 8, 8], 0.5);
        let fe = boundary_features(&mut fwd, &fo, &fb).unwrap();
        let sizes = [16usize, 8, 4, 2];
        for (i, &v) in fe.iter().enumerate() {
            assert_eq!(fwd.tape.value(v).shape(), &[8, sizes[i], sizes[i]]);
        }
    }

    #[test]
    fn four_heads_at_input_size() {
        let s = store(8);
        let mut fwd = Forward::new(&s, false);
        let fo = pyramid(&mut fwd, [4, 8, 8, 8], 1.0);
        let fb = pyramid(&mut fwd, [4, 8, 8, 8], 0.5);
        let fe = boundary_features(&mut fwd, &fo, &fb).unwrap();
        for (i, &v) in fe.iter().enumerate() {
            let m = boundary_level_head(&mut fwd, i + 1, v, (64, 64)).unwrap();
            let t = fwd.tape.value(m);
            assert_eq!(t.shape(), &[1, 64, 64]);
            assert!(t.data().iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn level_shape_mismatch_rejected() {
        let s = store(8);
        let mut fwd = Forward::new(&s, false);
        let fo = pyramid(&mut fwd, [4, 8, 8, 8], 1.0);
        let mut fb = fo;
        fb[2] = fwd.input(Tensor::ones(&[8, 8, 8]));
        assert!(boundary_features(&mut fwd, &fo, &fb).is_err());
    }

    #[test]
    fn certain_vs_uncertain_difference_map() {
        // fo saturates to 1 inside the object, fb = 1 - fo, with a blurred
        // transition band: |fo - fb| is near 1 where the streams are certain
        // and near 0 in the band
        let n = 16;
        let fo_t = Tensor::from_fn(&[1, n, n], |i| {
            let x = (i % n) as f64;
            1.0 / (1.0 + (-(x - 8.0)).exp()) // sharp-ish sigmoid along x
        });
        let fb_t = fo_t.map(|v| 1.0 - v);
        let s = store(1);
        let mut fwd = Forward::new(&s, false);
        fwd.identity_bconv = true;
        let fo = [fwd.input(fo_t); 4];
        let fb = [fwd.input(fb_t); 4];
        let fe = boundary_features(&mut fwd, &fo, &fb).unwrap();
        let d = fwd.tape.value(fe[0]);
        for y in 0..n {
            assert!(d.at3(0, y, 8).abs() < 0.01, "transition band should be near 0");
            assert!(d.at3(0, y, 0).abs() > 0.99 && d.at3(0, y, 15).abs() > 0.99);
        }
    }
}
