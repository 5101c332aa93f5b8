use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn matmul_raw<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![S::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        for p in 0..k {
            let aip = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

fn transpose_raw<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let ad = a.data();
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out).unwrap()
}

impl<S: Scalar> Tape<S> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::shape(format!(
                "matmul {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let out = matmul_raw(&av, &bv);
        let needs = self.needs_grad(&[a, b]);
        let (ai, bi) = (a.0, b.0);
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let ga = matmul_raw(g, &transpose_raw(&bv));
                let gb = matmul_raw(&transpose_raw(&av), g);
                vec![(ai, ga), (bi, gb)]
            })),
            needs,
        ))
    }

    pub fn transpose2d(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a).clone();
        if av.rank() != 2 {
            return Err(Error::shape(format!("transpose2d on rank {}", av.rank())));
        }
        let out = transpose_raw(&av);
        let needs = self.needs_grad(&[a]);
        let ai = a.0;
        Ok(self.push(
            out,
            Some(Box::new(move |g| vec![(ai, transpose_raw(g))])),
            needs,
        ))
    }

    /// Same data, new shape. Gradient is reshaped back.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let av = self.value(a).clone();
        let out = av.reshape(shape)?;
        let needs = self.needs_grad(&[a]);
        let old = av.shape().to_vec();
        let ai = a.0;
        Ok(self.push(
            out,
            Some(Box::new(move |g| vec![(ai, g.reshape(&old).unwrap())])),
            needs,
        ))
    }

    /// a[N x D] + bias[D] broadcast over rows.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(bias).clone();
        if av.rank() != 2 || bv.rank() != 1 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::shape(format!(
                "add_row_bias {:?} + {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (n, d) = (av.shape()[0], av.shape()[1]);
        let out = Tensor::from_fn(&[n, d], |i| av.data()[i] + bv.data()[i % d]);
        let needs = self.needs_grad(&[a, bias]);
        let (ai, bi) = (a.0, bias.0);
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut gb = vec![S::zero(); d];
                for r in 0..n {
                    for c in 0..d {
                        gb[c] += g.data()[r * d + c];
                    }
                }
                vec![(ai, g.clone()), (bi, Tensor::new(vec![d], gb).unwrap())]
            })),
            needs,
        ))
    }

    /// Contiguous column slice of a 2-D tensor.
    pub fn narrow_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a).clone();
        if av.rank() != 2 || start + len > av.shape()[1] {
            return Err(Error::shape(format!(
                "narrow_cols [{}, {}) of {:?}",
                start,
                start + len,
                av.shape()
            )));
        }
        let (n, d) = (av.shape()[0], av.shape()[1]);
        let out = Tensor::from_fn(&[n, len], |i| {
            let (r, c) = (i / len, i % len);
            av.data()[r * d + start + c]
        });
        let needs = self.needs_grad(&[a]);
        let ai = a.0;
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut ga = vec![S::zero(); n * d];
                for r in 0..n {
                    for c in 0..len {
                        ga[r * d + start + c] = g.data()[r * len + c];
                    }
                }
                vec![(ai, Tensor::new(vec![n, d], ga).unwrap())]
            })),
            needs,
        ))
    }

    /// Row-stack two token sequences, `a`'s rows first.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[1] {
            return Err(Error::shape(format!(
                "concat_rows {:?} ++ {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (na, nb, d) = (av.shape()[0], bv.shape()[0], av.shape()[1]);
        let mut data = Vec::with_capacity((na + nb) * d);
        data.extend_from_slice(av.data());
        data.extend_from_slice(bv.data());
        let out = Tensor::new(vec![na + nb, d], data)?;
        let needs = self.needs_grad(&[a, b]);
        let (ai, bi) = (a.0, b.0);
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let ga = Tensor::new(vec![na, d], g.data()[..na * d].to_vec()).unwrap();
                let gb = Tensor::new(vec![nb, d], g.data()[na * d..].to_vec()).unwrap();
                vec![(ai, ga), (bi, gb)]
            })),
            needs,
        ))
    }

    /// Column-stack 2-D tensors with equal row counts (re-joins attention heads).
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols of zero tensors"));
        }
        let vals: Vec<Tensor<S>> = parts.iter().map(|&v| self.value(v).clone()).collect();
        let n = vals[0].shape()[0];
        for v in &vals {
            if v.rank() != 2 || v.shape()[0] != n {
                return Err(Error::shape(format!("concat_cols row mismatch {:?}", v.shape())));
            }
        }
        let widths: Vec<usize> = vals.iter().map(|v| v.shape()[1]).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![S::zero(); n * total];
        let mut off = 0;
        for (v, &w) in vals.iter().zip(&widths) {
            for r in 0..n {
                data[r * total + off..r * total + off + w]
                    .copy_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let out = Tensor::new(vec![n, total], data)?;
        let needs = self.needs_grad(parts);
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut grads = Vec::with_capacity(ids.len());
                let mut off = 0;
                for (idx, &w) in ids.iter().zip(&widths) {
                    let mut part = vec![S::zero(); n * w];
                    for r in 0..n {
                        part[r * w..(r + 1) * w]
                            .copy_from_slice(&g.data()[r * total + off..r * total + off + w]);
                    }
                    grads.push((*idx, Tensor::new(vec![n, w], part).unwrap()));
                    off += w;
                }
                grads
            })),
            needs,
        ))
    }

    /// Channel-stack two CHW tensors.
    pub fn concat_channel(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        if av.rank() != 3
            || bv.rank() != 3
            || av.shape()[1..] != bv.shape()[1..]
        {
            return Err(Error::shape(format!(
                "concat_channel {:?} ++ {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (ca, cb) = (av.shape()[0], bv.shape()[0]);
        let (h, w) = (av.shape()[1], av.shape()[2]);
        let mut data = Vec::with_capacity((ca + cb) * h * w);
        data.extend_from_slice(av.data());
        data.extend_from_slice(bv.data());
        let out = Tensor::new(vec![ca + cb, h, w], data)?;
        let needs = self.needs_grad(&[a, b]);
        let (ai, bi) = (a.0, b.0);
        let na = ca * h * w;
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let ga = Tensor::new(vec![ca, h, w], g.data()[..na].to_vec()).unwrap();
                let gb = Tensor::new(vec![cb, h, w], g.data()[na..].to_vec()).unwrap();
                vec![(ai, ga), (bi, gb)]
            })),
            needs,
        ))
    }

    /// Non-overlapping PxP patches of a CHW map, row-major over the patch
    /// grid, each flattened channel-major to a row of length P*P*C.
    pub fn patchify(&mut self, x: Var, p: usize) -> Result<Var> {
        let xv = self.value(x).clone();
        if xv.rank() != 3 {
            return Err(Error::shape(format!("patchify on rank {}", xv.rank())));
        }
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::shape(format!(
                "patch size {} does not divide {}x{}",
                p, h, w
            )));
        }
        let (gh, gw) = (h / p, w / p);
        let n = gh * gw;
        let d = p * p * c;
        let src = move |t: usize, f: usize| -> (usize, usize, usize) {
            let (py, px) = (t / gw, t % gw);
            let ch = f / (p * p);
            let dy = (f / p) % p;
            let dx = f % p;
            (ch, py * p + dy, px * p + dx)
        };
        let out = Tensor::from_fn(&[n, d], |i| {
            let (ch, y, xx) = src(i / d, i % d);
            xv.data()[(ch * h + y) * w + xx]
        });
        let needs = self.needs_grad(&[x]);
        let xi = x.0;
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut gx = vec![S::zero(); c * h * w];
                for i in 0..n * d {
                    let (ch, y, xx) = src(i / d, i % d);
                    gx[(ch * h + y) * w + xx] += g.data()[i];
                }
                vec![(xi, Tensor::new(vec![c, h, w], gx).unwrap())]
            })),
            needs,
        ))
    }
}
