use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Bilinear sample taps for one output coordinate, align-corners=false.
fn taps<S: Scalar>(o: usize, factor: usize, extent: usize) -> (usize, usize, S) {
    let f = factor as f64;
    let src = ((o as f64 + 0.5) / f - 0.5).clamp(0.0, (extent - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(extent - 1);
    let frac = S::from_real(src - i0 as f64);
    (i0, i1, frac)
}

impl<S: Scalar> Tape<S> {
    /// Bilinear upsampling of a CHW map by an integer factor.
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let xv = self.value(x).clone();
        if xv.rank() != 3 {
            return Err(Error::shape(format!("upsample on rank {}", xv.rank())));
        }
        if factor < 1 {
            return Err(Error::invalid("upsample factor must be >= 1"));
        }
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (ho, wo) = (h * factor, w * factor);
        let ytaps: Vec<(usize, usize, S)> = (0..ho).map(|o| taps(o, factor, h)).collect();
        let xtaps: Vec<(usize, usize, S)> = (0..wo).map(|o| taps(o, factor, w)).collect();
        let out = Tensor::from_fn(&[c, ho, wo], |i| {
            let ch = i / (ho * wo);
            let (y0, y1, fy) = ytaps[(i / wo) % ho];
            let (x0, x1, fx) = xtaps[i % wo];
            let v00 = xv.data()[(ch * h + y0) * w + x0];
            let v01 = xv.data()[(ch * h + y0) * w + x1];
            let v10 = xv.data()[(ch * h + y1) * w + x0];
            let v11 = xv.data()[(ch * h + y1) * w + x1];
            let one = S::one();
            (one - fy) * ((one - fx) * v00 + fx * v01) + fy * ((one - fx) * v10 + fx * v11)
        });
        let needs = self.needs_grad(&[x]);
        let xi = x.0;
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let one = S::one();
                let mut gx = vec![S::zero(); c * h * w];
                for ch in 0..c {
                    for oy in 0..ho {
                        let (y0, y1, fy) = ytaps[oy];
                        for ox in 0..wo {
                            let (x0, x1, fx) = xtaps[ox];
                            let go = g.data()[(ch * ho + oy) * wo + ox];
                            gx[(ch * h + y0) * w + x0] += go * (one - fy) * (one - fx);
                            gx[(ch * h + y0) * w + x1] += go * (one - fy) * fx;
                            gx[(ch * h + y1) * w + x0] += go * fy * (one - fx);
                            gx[(ch * h + y1) * w + x1] += go * fy * fx;
                        }
                    }
                }
                vec![(xi, Tensor::new(vec![c, h, w], gx).unwrap())]
            })),
            needs,
        ))
    }
}
