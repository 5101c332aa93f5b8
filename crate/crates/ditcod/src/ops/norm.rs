use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

impl<S: Scalar> Tape<S> {
    /// Per-row layer norm of z [N x D] with affine gamma/beta [D].
    pub fn layernorm(&mut self, z: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let zv = self.value(z).clone();
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        if zv.rank() != 2 {
            return Err(Error::shape(format!("layernorm on rank {}", zv.rank())));
        }
        let (n, d) = (zv.shape()[0], zv.shape()[1]);
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::shape(format!(
                "layernorm affine {:?}/{:?} vs width {d}",
                gv.shape(),
                bv.shape()
            )));
        }
        let dn = S::from_real(d as f64);
        let mut xhat = vec![S::zero(); n * d];
        let mut inv_sigma = vec![S::zero(); n];
        for r in 0..n {
            let row = &zv.data()[r * d..(r + 1) * d];
            let mu = row.iter().fold(S::zero(), |a, &b| a + b) / dn;
            let var = row.iter().fold(S::zero(), |a, &b| a + (b - mu) * (b - mu)) / dn;
            let is = S::one() / (var + eps).sqrt();
            inv_sigma[r] = is;
            for c in 0..d {
                xhat[r * d + c] = (row[c] - mu) * is;
            }
        }
        let out = Tensor::from_fn(&[n, d], |i| gv.data()[i % d] * xhat[i] + bv.data()[i % d]);
        let needs = self.needs_grad(&[z, gamma, beta]);
        let (zi, gi, bi) = (z.0, gamma.0, beta.0);
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut gz = vec![S::zero(); n * d];
                let mut gg = vec![S::zero(); d];
                let mut gb = vec![S::zero(); d];
                for r in 0..n {
                    let mut sum_h = S::zero();
                    let mut sum_hx = S::zero();
                    for c in 0..d {
                        let i = r * d + c;
                        let h = g.data()[i] * gv.data()[c];
                        sum_h += h;
                        sum_hx += h * xhat[i];
                        gg[c] += g.data()[i] * xhat[i];
                        gb[c] += g.data()[i];
                    }
                    let mean_h = sum_h / dn;
                    let mean_hx = sum_hx / dn;
                    for c in 0..d {
                        let i = r * d + c;
                        let h = g.data()[i] * gv.data()[c];
                        gz[i] = inv_sigma[r] * (h - mean_h - xhat[i] * mean_hx);
                    }
                }
                vec![
                    (zi, Tensor::new(vec![n, d], gz).unwrap()),
                    (gi, Tensor::new(vec![d], gg).unwrap()),
                    (bi, Tensor::new(vec![d], gb).unwrap()),
                ]
            })),
            needs,
        ))
    }

    /// Max-shifted softmax over each row of a [R x S] matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a).clone();
        if av.rank() != 2 {
            return Err(Error::shape(format!("softmax_rows on rank {}", av.rank())));
        }
        let (r, s) = (av.shape()[0], av.shape()[1]);
        let mut out = vec![S::zero(); r * s];
        for i in 0..r {
            let row = &av.data()[i * s..(i + 1) * s];
            let mx = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
            let mut z = S::zero();
            for c in 0..s {
                let e = (row[c] - mx).exp();
                out[i * s + c] = e;
                z += e;
            }
            for c in 0..s {
                out[i * s + c] = out[i * s + c] / z;
            }
        }
        let y = Tensor::new(vec![r, s], out)?;
        let yv = y.clone();
        let needs = self.needs_grad(&[a]);
        let ai = a.0;
        Ok(self.push(
            y,
            Some(Box::new(move |g| {
                let mut ga = vec![S::zero(); r * s];
                for i in 0..r {
                    let mut dot = S::zero();
                    for c in 0..s {
                        dot += g.data()[i * s + c] * yv.data()[i * s + c];
                    }
                    for c in 0..s {
                        ga[i * s + c] = yv.data()[i * s + c] * (g.data()[i * s + c] - dot);
                    }
                }
                vec![(ai, Tensor::new(vec![r, s], ga).unwrap())]
            })),
            needs,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_and_closed_form() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(vec![2, 2], vec![3.0, 3.0, 0.0, 3.0_f64.ln()]).unwrap());
        let y = tape.softmax_rows(a).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] - 0.5).abs() < 1e-12);
        assert!((d[2] - 0.25).abs() < 1e-12 && (d[3] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(vec![1, 3], vec![0.1, -0.4, 2.0]).unwrap());
        let b = tape.constant(Tensor::new(vec![1, 3], vec![100.1, 99.6, 102.0]).unwrap());
        let ya = tape.softmax_rows(a).unwrap();
        let yb = tape.softmax_rows(b).unwrap();
        for (x, y) in tape.value(ya).data().iter().zip(tape.value(yb).data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn layernorm_hand_row() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let g = tape.constant(Tensor::<f64>::ones(&[3]));
        let b = tape.constant(Tensor::<f64>::zeros(&[3]));
        let y = tape.layernorm(z, g, b, 1e-5).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] + 1.2247).abs() < 1e-3, "{d:?}");
        assert!(d[1].abs() < 1e-9);
        assert!((d[2] - 1.2247).abs() < 1e-3);
    }

    #[test]
    fn layernorm_constant_row_zeros() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::<f64>::full(&[1, 4], 9.0));
        let g = tape.constant(Tensor::<f64>::ones(&[4]));
        let b = tape.constant(Tensor::<f64>::zeros(&[4]));
        let y = tape.layernorm(z, g, b, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-9));
    }
}
