//! Brute-force oracle implementations of all four metrics (see
//! tests/common/mod.rs), compared against the library on the exhaustive set
//! of 4x4 binary ground truths paired with a fixed set of 50 random
//! predictions.

mod common;

use common::{oracle_e_measure, oracle_mae, oracle_s_measure, oracle_weighted_f, predictions_4x4};
use ditcod::metrics::{e_measure_mean, mae, pr_curve, s_measure, weighted_f};
use ditcod::tensor::Tensor;

#[test]
fn exhaustive_4x4_matches_oracles() {
    let preds = predictions_4x4();
    for mask in 0u32..65536 {
        let g: Vec<f64> = (0..16).map(|b| f64::from(mask >> b & 1 == 1)).collect();
        let s = &preds[mask as usize % preds.len()];
        let st = Tensor::new(vec![4, 4], s.clone()).unwrap();
        let gt = Tensor::new(vec![4, 4], g.clone()).unwrap();
        let pairs = [
            ("mae", mae(&st, &gt).unwrap(), oracle_mae(s, &g)),
            ("s_measure", s_measure(&st, &gt).unwrap(), oracle_s_measure(s, &g, 4, 4)),
            ("e_measure", e_measure_mean(&st, &gt).unwrap(), oracle_e_measure(s, &g)),
            ("weighted_f", weighted_f(&st, &gt).unwrap(), oracle_weighted_f(s, &g, 4, 4)),
        ];
        for (name, got, want) in pairs {
            assert!(
                (got - want).abs() < 1e-9,
                "{name} mismatch on GT {mask:#06x}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn pr_matches_direct_counting_on_samples() {
    let preds = predictions_4x4();
    for (k, mask) in [(0usize, 0x0f0fu32), (7, 0xffff), (21, 0x0001), (49, 0x8421)] {
        let g: Vec<f64> = (0..16).map(|b| f64::from(mask >> b & 1 == 1)).collect();
        let s = &preds[k];
        let st = Tensor::new(vec![4, 4], s.clone()).unwrap();
        let gt = Tensor::new(vec![4, 4], g.clone()).unwrap();
        let curve = pr_curve(&st, &gt).unwrap();
        assert_eq!(curve.len(), 256);
        for (t, &(p, r)) in curve.iter().enumerate() {
            let thr = t as f64 / 255.0;
            let tp = (0..16).filter(|&i| s[i] > thr && g[i] > 0.5).count() as f64;
            let fp = (0..16).filter(|&i| s[i] > thr && g[i] <= 0.5).count() as f64;
            let fnn = (0..16).filter(|&i| s[i] <= thr && g[i] > 0.5).count() as f64;
            let wp = if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) };
            let wr = if tp + fnn == 0.0 { 1.0 } else { tp / (tp + fnn) };
            assert!((p - wp).abs() < 1e-12 && (r - wr).abs() < 1e-12);
        }
    }
}

#[test]
fn perfect_prediction_identities() {
    // S = G (binary): all similarity metrics 1, MAE 0, within 1e-6
    let masks: [u32; 5] = [0x0001, 0x00ff, 0x5a5a, 0x7fff, 0x0f60];
    for mask in masks {
        let g: Vec<f64> = (0..16).map(|b| f64::from(mask >> b & 1 == 1)).collect();
        let t = Tensor::new(vec![4, 4], g).unwrap();
        assert!(mae(&t, &t).unwrap() < 1e-6);
        assert!((s_measure(&t, &t).unwrap() - 1.0).abs() < 1e-6, "S on {mask:#06x}");
        assert!((e_measure_mean(&t, &t).unwrap() - 1.0).abs() < 1e-6, "E on {mask:#06x}");
        assert!((weighted_f(&t, &t).unwrap() - 1.0).abs() < 1e-6, "Fw on {mask:#06x}");
    }
}

#[test]
fn degrading_a_perfect_prediction_never_raises_weighted_f() {
    // flip k = 1..8 pixels of a fixed mask; F must not increase with k
    for mask in [0x0ff0u32, 0x00ffu32] {
        let g: Vec<f64> = (0..16).map(|b| f64::from(mask >> b & 1 == 1)).collect();
        let gt = Tensor::new(vec![4, 4], g.clone()).unwrap();
        let mut prev = weighted_f(&gt, &gt).unwrap();
        let mut s = g;
        for k in 0..8 {
            let i = (k * 5 + 2) % 16; // scattered flips
            s[i] = 1.0 - s[i];
            let f = weighted_f(&Tensor::new(vec![4, 4], s.clone()).unwrap(), &gt).unwrap();
            assert!(f <= prev + 1e-9, "flip {} raised F: {prev} -> {f}", k + 1);
            prev = f;
        }
    }
}
