use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn out_extent(input: usize, pad: usize, k: usize, stride: usize) -> Result<usize> {
    let span = input + 2 * pad;
    if span < k || (span - k) % stride != 0 {
        return Err(Error::shape(format!(
            "conv extent: input {input}, pad {pad}, kernel {k}, stride {stride} has no integer output"
        )));
    }
    Ok((span - k) / stride + 1)
}

impl<S: Scalar> Tape<S> {
    /// Zero padding of a CHW map, possibly asymmetric (used by the
    /// overlapping patch merge, whose stride does not divide the padded
    /// extent symmetrically).
    pub fn pad2d(&mut self, x: Var, top: usize, bottom: usize, left: usize, right: usize) -> Result<Var> {
        let xv = self.value(x).clone();
        if xv.rank() != 3 {
            return Err(Error::shape(format!("pad2d on rank {}", xv.rank())));
        }
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (ho, wo) = (h + top + bottom, w + left + right);
        let mut out = vec![S::zero(); c * ho * wo];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[(ch * ho + y + top) * wo + xx + left] = xv.data()[(ch * h + y) * w + xx];
                }
            }
        }
        let needs = self.needs_grad(&[x]);
        let xi = x.0;
        Ok(self.push(
            Tensor::new(vec![c, ho, wo], out)?,
            Some(Box::new(move |g| {
                let mut gx = vec![S::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[(ch * h + y) * w + xx] =
                                g.data()[(ch * ho + y + top) * wo + xx + left];
                        }
                    }
                }
                vec![(xi, Tensor::new(vec![c, h, w], gx).unwrap())]
            })),
            needs,
        ))
    }

    /// 2-D cross-correlation. x: [C_in, H, W], w: [C_out, C_in/groups, k, k],
    /// b: [C_out].
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let bv = self.value(b).clone();
        if xv.rank() != 3 || wv.rank() != 4 || bv.rank() != 1 {
            return Err(Error::shape(format!(
                "conv2d ranks: x {:?}, w {:?}, b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let (cin, h, win) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (cout, cin_g, kh, kw) = (wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]);
        if kh != kw {
            return Err(Error::shape(format!("non-square kernel {kh}x{kw}")));
        }
        let k = kh;
        if groups == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return Err(Error::shape(format!(
                "conv2d channels: x has {cin}, w is {:?}, groups {groups}",
                wv.shape()
            )));
        }
        if bv.shape()[0] != cout {
            return Err(Error::shape(format!("bias has {} channels, want {cout}", bv.shape()[0])));
        }
        let ho = out_extent(h, pad, k, stride)?;
        let wo = out_extent(win, pad, k, stride)?;
        let cout_g = cout / groups;

        // valid output range for one kernel offset: o*stride + kq - pad in
        // [0, extent)
        let valid = move |kq: usize, extent: usize, n_out: usize| -> (usize, usize) {
            let lo = if kq >= pad { 0 } else { (pad - kq).div_ceil(stride) };
            let hi_in = extent + pad;
            if hi_in <= kq {
                return (1, 0);
            }
            let hi = ((hi_in - 1 - kq) / stride + 1).min(n_out);
            (lo, hi)
        };

        let forward = |xd: &[S], wd: &[S], bd: &[S]| -> Vec<S> {
            let mut out = vec![S::zero(); cout * ho * wo];
            for oc in 0..cout {
                out[oc * ho * wo..(oc + 1) * ho * wo].fill(bd[oc]);
            }
            for g in 0..groups {
                for ocl in 0..cout_g {
                    let oc = g * cout_g + ocl;
                    for icl in 0..cin_g {
                        let ic = g * cin_g + icl;
                        for ky in 0..k {
                            let (ylo, yhi) = valid(ky, h, ho);
                            for kx in 0..k {
                                let (xlo, xhi) = valid(kx, win, wo);
                                if xlo >= xhi {
                                    continue;
                                }
                                let wk = wd[((oc * cin_g + icl) * k + ky) * k + kx];
                                for oy in ylo..yhi {
                                    let iy = oy * stride + ky - pad;
                                    let xrow = (ic * h + iy) * win + kx;
                                    let orow = (oc * ho + oy) * wo;
                                    if stride == 1 {
                                        let xs = &xd[xrow + xlo - pad..xrow + xhi - pad];
                                        let os = &mut out[orow + xlo..orow + xhi];
                                        for (o, &xi) in os.iter_mut().zip(xs) {
                                            *o += wk * xi;
                                        }
                                    } else {
                                        for ox in xlo..xhi {
                                            out[orow + ox] +=
                                                wk * xd[xrow + ox * stride - pad];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            out
        };

        let out = Tensor::new(vec![cout, ho, wo], forward(xv.data(), wv.data(), bv.data()))?;
        let needs = self.needs_grad(&[x, w, b]);
        let (xi, wi, bi) = (x.0, w.0, b.0);
        Ok(self.push(
            out,
            Some(Box::new(move |gout| {
                let gd = gout.data();
                let xd = xv.data();
                let wd = wv.data();
                let mut gx = vec![S::zero(); cin * h * win];
                let mut gw = vec![S::zero(); cout * cin_g * k * k];
                let mut gb = vec![S::zero(); cout];
                for oc in 0..cout {
                    gb[oc] = gd[oc * ho * wo..(oc + 1) * ho * wo]
                        .iter()
                        .fold(S::zero(), |a, &b| a + b);
                }
                for g in 0..groups {
                    for ocl in 0..cout_g {
                        let oc = g * cout_g + ocl;
                        for icl in 0..cin_g {
                            let ic = g * cin_g + icl;
                            for ky in 0..k {
                                let (ylo, yhi) = valid(ky, h, ho);
                                for kx in 0..k {
                                    let (xlo, xhi) = valid(kx, win, wo);
                                    if xlo >= xhi {
                                        continue;
                                    }
                                    let widx = ((oc * cin_g + icl) * k + ky) * k + kx;
                                    let wk = wd[widx];
                                    let mut acc = S::zero();
                                    for oy in ylo..yhi {
                                        let iy = oy * stride + ky - pad;
                                        let xrow = (ic * h + iy) * win + kx;
                                        let orow = (oc * ho + oy) * wo;
                                        if stride == 1 {
                                            let gs = &gd[orow + xlo..orow + xhi];
                                            let lo = xrow + xlo - pad;
                                            for (i, &go) in gs.iter().enumerate() {
                                                gx[lo + i] += go * wk;
                                                acc += go * xd[lo + i];
                                            }
                                        } else {
                                            for ox in xlo..xhi {
                                                let go = gd[orow + ox];
                                                let xi = xrow + ox * stride - pad;
                                                gx[xi] += go * wk;
                                                acc += go * xd[xi];
                                            }
                                        }
                                    }
                                    gw[widx] += acc;
                                }
                            }
                        }
                    }
                }
                vec![
                    (xi, Tensor::new(vec![cin, h, win], gx).unwrap()),
                    (wi, Tensor::new(vec![cout, cin_g, k, k], gw).unwrap()),
                    (bi, Tensor::new(vec![cout], gb).unwrap()),
                ]
            })),
            needs,
        ))
    }

    /// Eval-mode batch norm over a CHW map using frozen running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        rmean: Var,
        rvar: Var,
        eps: S,
    ) -> Result<Var> {
        let xv = self.value(x).clone();
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        let mv = self.value(rmean).clone();
        let vv = self.value(rvar).clone();
        let c = check_bn_shapes(&xv, &gv, &bv)?;
        let (h, w) = (xv.shape()[1], xv.shape()[2]);
        let hw = h * w;
        let inv_sigma: Vec<S> = (0..c).map(|i| S::one() / (vv.data()[i] + eps).sqrt()).collect();
        let out = Tensor::from_fn(xv.shape(), |i| {
            let ch = i / hw;
            gv.data()[ch] * (xv.data()[i] - mv.data()[ch]) * inv_sigma[ch] + bv.data()[ch]
        });
        let needs = self.needs_grad(&[x, gamma, beta]);
        let (xi, gi, bi) = (x.0, gamma.0, beta.0);
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut gx = vec![S::zero(); c * hw];
                let mut gg = vec![S::zero(); c];
                let mut gb = vec![S::zero(); c];
                for i in 0..c * hw {
                    let ch = i / hw;
                    let xhat = (xv.data()[i] - mv.data()[ch]) * inv_sigma[ch];
                    gx[i] = g.data()[i] * gv.data()[ch] * inv_sigma[ch];
                    gg[ch] += g.data()[i] * xhat;
                    gb[ch] += g.data()[i];
                }
                vec![
                    (xi, Tensor::new(vec![c, h, w], gx).unwrap()),
                    (gi, Tensor::new(vec![c], gg).unwrap()),
                    (bi, Tensor::new(vec![c], gb).unwrap()),
                ]
            })),
            needs,
        ))
    }

    /// Train-mode batch norm: per-channel statistics over the spatial extent,
    /// gradients flow through them. Running-stat updates are the caller's job
    /// (see [`channel_stats`]).
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let xv = self.value(x).clone();
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        let c = check_bn_shapes(&xv, &gv, &bv)?;
        let (h, w) = (xv.shape()[1], xv.shape()[2]);
        let hw = h * w;
        let (mu, var) = channel_stats(&xv);
        let inv_sigma: Vec<S> = (0..c).map(|i| S::one() / (var.data()[i] + eps).sqrt()).collect();
        let xhat: Vec<S> = (0..c * hw)
            .map(|i| (xv.data()[i] - mu.data()[i / hw]) * inv_sigma[i / hw])
            .collect();
        let out = Tensor::from_fn(xv.shape(), |i| gv.data()[i / hw] * xhat[i] + bv.data()[i / hw]);
        let needs = self.needs_grad(&[x, gamma, beta]);
        let (xi, gi, bi) = (x.0, gamma.0, beta.0);
        let n = S::from_real(hw as f64);
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut gx = vec![S::zero(); c * hw];
                let mut gg = vec![S::zero(); c];
                let mut gb = vec![S::zero(); c];
                for ch in 0..c {
                    let rows = ch * hw..(ch + 1) * hw;
                    let mut sum_g = S::zero();
                    let mut sum_gx = S::zero();
                    for i in rows.clone() {
                        sum_g += g.data()[i];
                        sum_gx += g.data()[i] * xhat[i];
                    }
                    gg[ch] = sum_gx;
                    gb[ch] = sum_g;
                    let mean_g = sum_g / n;
                    let mean_gx = sum_gx / n;
                    for i in rows {
                        gx[i] = gv.data()[ch] * inv_sigma[ch]
                            * (g.data()[i] - mean_g - xhat[i] * mean_gx);
                    }
                }
                vec![
                    (xi, Tensor::new(vec![c, h, w], gx).unwrap()),
                    (gi, Tensor::new(vec![c], gg).unwrap()),
                    (bi, Tensor::new(vec![c], gb).unwrap()),
                ]
            })),
            needs,
        ))
    }
}

fn check_bn_shapes<S: Scalar>(x: &Tensor<S>, gamma: &Tensor<S>, beta: &Tensor<S>) -> Result<usize> {
    if x.rank() != 3 {
        return Err(Error::shape(format!("batchnorm on rank {}", x.rank())));
    }
    let c = x.shape()[0];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!(
            "batchnorm affine {:?}/{:?} vs {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(c)
}

/// Per-channel mean and biased variance of a CHW map.
pub fn channel_stats<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let hw = h * w;
    let n = S::from_real(hw as f64);
    let mut mu = vec![S::zero(); c];
    let mut var = vec![S::zero(); c];
    for ch in 0..c {
        let slice = &x.data()[ch * hw..(ch + 1) * hw];
        let m = slice.iter().fold(S::zero(), |a, &b| a + b) / n;
        mu[ch] = m;
        var[ch] = slice.iter().fold(S::zero(), |a, &b| a + (b - m) * (b - m)) / n;
    }
    (Tensor::new(vec![c], mu).unwrap(), Tensor::new(vec![c], var).unwrap())
}

/// Mean pooling with a k x k window and same-size zero-free padding: the
/// window is clipped at the border and the mean taken over in-bounds pixels.
pub fn mean_pool_same<S: Scalar>(x: &Tensor<S>, k: usize) -> Tensor<S> {
    assert!(k % 2 == 1, "mean_pool_same wants an odd window, got {k}");
    let (_c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let r = (k - 1) / 2;
    Tensor::from_fn(x.shape(), |i| {
        let ch = i / (h * w);
        let y = (i / w) % h;
        let xx = i % w;
        let y0 = y.saturating_sub(r);
        let y1 = (y + r).min(h - 1);
        let x0 = xx.saturating_sub(r);
        let x1 = (xx + r).min(w - 1);
        let mut acc = S::zero();
        for yy in y0..=y1 {
            for xc in x0..=x1 {
                acc += x.data()[(ch * h + yy) * w + xc];
            }
        }
        acc / S::from_real(((y1 - y0 + 1) * (x1 - x0 + 1)) as f64)
    })
}
