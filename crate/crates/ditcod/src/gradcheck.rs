//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_coord: usize,
    pub coords: usize,
    pub tol: f64,
}

impl GradReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Checks the tape gradient of a scalar-valued closure at `x0` against
/// central differences, one coordinate at a time. The closure must be
/// deterministic (eval-mode normalization, no RNG).
pub fn gradcheck<S, F>(f: F, x0: &Tensor<S>, eps: f64, tol: f64) -> Result<GradReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone(), true);
    let y = f(&mut tape, x)?;
    if tape.value(y).len() != 1 {
        return Err(Error::invalid("gradcheck closure must produce a scalar"));
    }
    if !tape.value(y).all_finite() {
        return Err(Error::NonFinite("gradcheck forward value".into()));
    }
    let grads = tape.backward(y)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x0.shape()));

    let eval = |xt: Tensor<S>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(xt, false);
        let y = f(&mut t, v)?;
        let val = t.value(y).item().to_real();
        if !val.is_finite() {
            return Err(Error::NonFinite("gradcheck probe".into()));
        }
        Ok(val)
    };

    let mut report = GradReport { max_rel_err: 0.0, max_abs_err: 0.0, worst_coord: 0, coords: x0.len(), tol };
    for i in 0..x0.len() {
        let base = x0.data()[i].to_real();
        let mut plus = x0.clone();
        plus.data_mut()[i] = S::from_real(base + eps);
        let mut minus = x0.clone();
        minus.data_mut()[i] = S::from_real(base - eps);
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i].to_real();
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(1.0);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_coord = i;
        }
        report.max_abs_err = report.max_abs_err.max(abs);
    }
    Ok(report)
}

/// Deterministic pseudo-random projection weight for coordinate `i`: a fixed
/// non-uniform reduction keeps sign errors from cancelling inside a plain
/// mean.
fn probe_weight(i: usize) -> f64 {
    ((i.wrapping_mul(2654435761) % 1000) as f64) / 1000.0 - 0.5
}

/// Finite-difference verification of a composite built on a parameter store,
/// w.r.t. the input map and every trainable parameter. The composite's output
/// map is reduced to a scalar through a fixed pseudo-random projection. Per
/// tensor at most `max_coords` evenly spaced coordinates are probed. Runs in
/// eval mode (deterministic normalization).
pub fn gradcheck_composite<F>(
    store: &crate::params::ParamStore,
    input: &Tensor<f64>,
    eps: f64,
    tol: f64,
    max_coords: usize,
    build: F,
) -> Result<Vec<(String, GradReport)>>
where
    F: Fn(&mut crate::params::Forward, Var) -> Result<Var>,
{
    use crate::params::Forward;

    let run = |store: &crate::params::ParamStore, input: &Tensor<f64>| -> Result<(Forward, Var, Var)> {
        let mut fwd = Forward::new(store, false);
        let x = fwd.tape.leaf(input.clone(), true);
        let y = build(&mut fwd, x)?;
        let yv = fwd.tape.value(y).clone();
        if !yv.all_finite() {
            return Err(Error::NonFinite("gradcheck composite forward".into()));
        }
        let r = fwd.input(Tensor::from_fn(yv.shape(), |i| probe_weight(i)));
        let prod = fwd.tape.mul(y, r)?;
        let root = fwd.tape.sum(prod);
        Ok((fwd, root, x))
    };

    let eval = |store: &crate::params::ParamStore, input: &Tensor<f64>| -> Result<f64> {
        let (fwd, root, _) = run(store, input)?;
        Ok(fwd.tape.value(root).item())
    };

    let (fwd, root, x_leaf) = run(store, input)?;
    let grads = fwd.tape.backward(root)?;
    let names: Vec<String> = store.trainable_names().cloned().collect();

    let coords = |len: usize| -> Vec<usize> {
        if len <= max_coords {
            (0..len).collect()
        } else {
            (0..max_coords).map(|j| j * len / max_coords).collect()
        }
    };

    let mut out = Vec::new();
    let analytic_in =
        grads.get(x_leaf).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
    let mut rep = GradReport { max_rel_err: 0.0, max_abs_err: 0.0, worst_coord: 0, coords: 0, tol };
    for i in coords(input.len()) {
        let base = input.data()[i];
        let fd = |e: f64| -> Result<f64> {
            let mut plus = input.clone();
            plus.data_mut()[i] = base + e;
            let mut minus = input.clone();
            minus.data_mut()[i] = base - e;
            Ok((eval(store, &plus)? - eval(store, &minus)?) / (2.0 * e))
        };
        let numeric = shrinking_fd(fd, eps, tol, analytic_in.data()[i])?;
        record(&mut rep, i, analytic_in.data()[i], numeric);
    }
    out.push(("input".to_string(), rep));

    for name in names {
        let p0 = store.get(&name).clone();
        let analytic = fwd
            .grad_of(&grads, &name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p0.shape()));
        let mut rep = GradReport { max_rel_err: 0.0, max_abs_err: 0.0, worst_coord: 0, coords: 0, tol };
        for i in coords(p0.len()) {
            let base = p0.data()[i];
            let fd = |e: f64| -> Result<f64> {
                let mut s = store.clone();
                let mut plus = p0.clone();
                plus.data_mut()[i] = base + e;
                s.set(&name, plus);
                let up = eval(&s, input)?;
                let mut minus = p0.clone();
                minus.data_mut()[i] = base - e;
                s.set(&name, minus);
                Ok((up - eval(&s, input)?) / (2.0 * e))
            };
            let numeric = shrinking_fd(fd, eps, tol, analytic.data()[i])?;
            record(&mut rep, i, analytic.data()[i], numeric);
        }
        out.push((name, rep));
    }
    Ok(out)
}

/// Central difference with step shrinking: composites route through ReLU, so
/// a probe can straddle a kink that sits within `eps` of the base point. A
/// kink crossing disappears once the step drops below the crossing distance,
/// while a genuinely wrong analytic gradient disagrees at every step size.
fn shrinking_fd<F>(fd: F, eps: f64, tol: f64, analytic: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut best = f64::MAX;
    let mut best_numeric = 0.0;
    for halvings in 0..4 {
        let numeric = fd(eps / f64::powi(2.0, halvings))?;
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
        if rel < best {
            best = rel;
            best_numeric = numeric;
        }
        if rel < tol {
            break;
        }
    }
    Ok(best_numeric)
}

fn record(rep: &mut GradReport, i: usize, analytic: f64, numeric: f64) {
    let abs = (analytic - numeric).abs();
    let rel = abs / analytic.abs().max(numeric.abs()).max(1.0);
    if rel > rep.max_rel_err {
        rep.max_rel_err = rel;
        rep.worst_coord = i;
    }
    rep.max_abs_err = rep.max_abs_err.max(abs);
    rep.coords += 1;
}
