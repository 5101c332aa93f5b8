//! Supervision objectives: pixel position aware loss (weighted BCE +
//! weighted IoU, emphasizing pixels near mask transitions), plain BCE, and
//! the five-point total objective with unit weights.

use crate::error::{Error, Result};
use crate::model::Outputs;
use crate::ops::mean_pool_same;
use crate::params::Forward;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const BCE_CLAMP: f64 = 1e-7;

fn check_binary(gt: &Tensor<f64>, what: &str) -> Result<()> {
    if !gt.data().iter().all(|&v| v == 0.0 || v == 1.0) {
        return Err(Error::invalid(format!("{what} must be binary")));
    }
    Ok(())
}

/// Elementwise -[g ln p + (1-g) ln(1-p)] with p clamped to
/// [BCE_CLAMP, 1-BCE_CLAMP]; `g` is a constant on the tape.
fn bce_map(tape: &mut Tape<f64>, pred: Var, g: Var) -> Result<Var> {
    let p = tape.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP);
    let lnp = tape.ln(p);
    let negp = tape.neg(p);
    let omp = tape.add_scalar(negp, 1.0);
    let lnomp = tape.ln(omp);
    let t1 = tape.mul(g, lnp)?;
    let negg = tape.neg(g);
    let omg = tape.add_scalar(negg, 1.0);
    let t2 = tape.mul(omg, lnomp)?;
    let s = tape.add(t1, t2)?;
    Ok(tape.neg(s))
}

/// Mean binary cross-entropy.
pub fn bce_loss(fwd: &mut Forward, pred: Var, gt: &Tensor<f64>) -> Result<Var> {
    check_binary(gt, "BCE target")?;
    if fwd.tape.value(pred).shape() != gt.shape() {
        return Err(Error::shape(format!(
            "bce: pred {:?} vs gt {:?}",
            fwd.tape.value(pred).shape(),
            gt.shape()
        )));
    }
    let g = fwd.input(gt.clone());
    let m = bce_map(&mut fwd.tape, pred, g)?;
    Ok(fwd.tape.mean(m))
}

/// Window of the transition-weight mean pool: 31 at full scale, 15 at desk
/// scale (proportionate to resolution).
pub fn ppa_window(height: usize) -> usize {
    if height >= 256 {
        31
    } else {
        15
    }
}

/// Pixel position aware loss: omega-weighted BCE plus omega-weighted IoU,
/// omega = 1 + 5 |meanpool_k(gt) - gt|.
pub fn ppa_loss(fwd: &mut Forward, pred: Var, gt: &Tensor<f64>, k: usize) -> Result<Var> {
    check_binary(gt, "PPA target")?;
    if fwd.tape.value(pred).shape() != gt.shape() {
        return Err(Error::shape(format!(
            "ppa: pred {:?} vs gt {:?}",
            fwd.tape.value(pred).shape(),
            gt.shape()
        )));
    }
    let pooled = mean_pool_same(gt, k);
    let omega_t = pooled.zip(gt, |m, g| 1.0 + 5.0 * (m - g).abs())?;
    let omega_sum: f64 = omega_t.sum();
    let w = fwd.input(omega_t);
    let g = fwd.input(gt.clone());

    // weighted BCE
    let bm = bce_map(&mut fwd.tape, pred, g)?;
    let wb = fwd.tape.mul(w, bm)?;
    let wb_sum = fwd.tape.sum(wb);
    let wbce = fwd.tape.scale(wb_sum, 1.0 / omega_sum);

    // weighted IoU: 1 - (sum w p g + 1) / (sum w (p + g - p g) + 1)
    let pg = fwd.tape.mul(pred, g)?;
    let wpg = fwd.tape.mul(w, pg)?;
    let inter = fwd.tape.sum(wpg);
    let num = fwd.tape.add_scalar(inter, 1.0);
    let s1 = fwd.tape.add(pred, g)?;
    let s2 = fwd.tape.sub(s1, pg)?;
    let wu = fwd.tape.mul(w, s2)?;
    let union = fwd.tape.sum(wu);
    let den = fwd.tape.add_scalar(union, 1.0);
    let ratio = fwd.tape.div(num, den)?;
    let nr = fwd.tape.neg(ratio);
    let wiou = fwd.tape.add_scalar(nr, 1.0);

    fwd.tape.add(wbce, wiou)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossReport {
    pub ppa_final: f64,
    pub ce_final: f64,
    pub ppa_fg: f64,
    pub ppa_bg: f64,
    pub ce_bnd: [f64; 4],
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str =
        "step,ppa_final,ce_final,ppa_fg,ppa_bg,ce_b1,ce_b2,ce_b3,ce_b4,total";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8}",
            step,
            self.ppa_final,
            self.ce_final,
            self.ppa_fg,
            self.ppa_bg,
            self.ce_bnd[0],
            self.ce_bnd[1],
            self.ce_bnd[2],
            self.ce_bnd[3],
            self.total
        )
    }

    pub fn add(&mut self, o: &LossReport) {
        self.ppa_final += o.ppa_final;
        self.ce_final += o.ce_final;
        self.ppa_fg += o.ppa_fg;
        self.ppa_bg += o.ppa_bg;
        for i in 0..4 {
            self.ce_bnd[i] += o.ce_bnd[i];
        }
        self.total += o.total;
    }

    pub fn scale(&mut self, f: f64) {
        self.ppa_final *= f;
        self.ce_final *= f;
        self.ppa_fg *= f;
        self.ppa_bg *= f;
        for v in &mut self.ce_bnd {
            *v *= f;
        }
        self.total *= f;
    }
}

/// The five supervision points with unit weights. Ablations without a final
/// boundary map contribute 0 for that component.
pub fn total_loss(
    fwd: &mut Forward,
    out: &Outputs,
    gt: &Tensor<f64>,
    bnd: &Tensor<f64>,
) -> Result<(Var, LossReport)> {
    let k = ppa_window(gt.shape()[1]);
    let inv_gt = gt.map(|v| 1.0 - v);

    let l_obj = ppa_loss(fwd, out.s_obj, gt, k)?;
    let l_fg = ppa_loss(fwd, out.head_fg, gt, k)?;
    let l_bg = ppa_loss(fwd, out.head_bg, &inv_gt, k)?;
    let mut total = fwd.tape.add(l_obj, l_fg)?;
    total = fwd.tape.add(total, l_bg)?;

    let ce_final = match out.s_bnd {
        Some(se) => {
            let l = bce_loss(fwd, se, bnd)?;
            total = fwd.tape.add(total, l)?;
            fwd.tape.value(l).item()
        }
        None => 0.0,
    };

    let mut ce_bnd = [0.0; 4];
    for i in 0..4 {
        let l = bce_loss(fwd, out.head_bnd[i], bnd)?;
        total = fwd.tape.add(total, l)?;
        ce_bnd[i] = fwd.tape.value(l).item();
    }

    let report = LossReport {
        ppa_final: fwd.tape.value(l_obj).item(),
        ce_final,
        ppa_fg: fwd.tape.value(l_fg).item(),
        ppa_bg: fwd.tape.value(l_bg).item(),
        ce_bnd,
        total: fwd.tape.value(total).item(),
    };
    if !report.total.is_finite() {
        return Err(Error::NonFinite(format!("total loss is {}", report.total)));
    }
    Ok((total, report))
}
