use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

impl<S: Scalar> Tape<S> {
    fn binary(
        &mut self,
        a: Var,
        b: Var,
        fwd: impl Fn(S, S) -> S,
        back: impl Fn(&Tensor<S>, &Tensor<S>, &Tensor<S>) -> (Tensor<S>, Tensor<S>) + 'static,
    ) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let out = av.zip(&bv, fwd)?;
        let needs = self.needs_grad(&[a, b]);
        let (ai, bi) = (a.0, b.0);
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let (ga, gb) = back(g, &av, &bv);
                vec![(ai, ga), (bi, gb)]
            })),
            needs,
        ))
    }

    fn unary(
        &mut self,
        a: Var,
        fwd: impl Fn(S) -> S,
        dfdx: impl Fn(S) -> S + 'static,
    ) -> Var {
        let av = self.value(a).clone();
        let out = av.map(fwd);
        let needs = self.needs_grad(&[a]);
        let ai = a.0;
        self.push(
            out,
            Some(Box::new(move |g| {
                vec![(ai, g.zip(&av.map(&dfdx), |gi, d| gi * d).unwrap())]
            })),
            needs,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, |g, _, _| (g.clone(), g.clone()))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, |g, _, _| (g.clone(), g.map(|v| -v)))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            a,
            b,
            |x, y| x * y,
            |g, av, bv| (g.zip(bv, |x, y| x * y).unwrap(), g.zip(av, |x, y| x * y).unwrap()),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            a,
            b,
            |x, y| x / y,
            |g, av, bv| {
                let ga = g.zip(bv, |x, y| x / y).unwrap();
                let gb = g
                    .zip(av, |x, y| x * y)
                    .unwrap()
                    .zip(bv, |x, y| -(x / (y * y)))
                    .unwrap();
                (ga, gb)
            },
        )
    }

    pub fn scale(&mut self, a: Var, k: S) -> Var {
        self.unary(a, move |x| x * k, move |_| k)
    }

    pub fn add_scalar(&mut self, a: Var, k: S) -> Var {
        self.unary(a, move |x| x + k, |_| S::one())
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -S::one())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x > S::zero() { x } else { S::zero() },
            |x| if x > S::zero() { S::one() } else { S::zero() },
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| S::one() / (S::one() + (-x).exp()),
            |x| {
                let s = S::one() / (S::one() + (-x).exp());
                s * (S::one() - s)
            },
        )
    }

    /// tanh-form GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = S::from_real((2.0 / std::f64::consts::PI).sqrt());
        let k = S::from_real(0.044715);
        let half = S::from_real(0.5);
        let three = S::from_real(3.0);
        self.unary(
            a,
            move |x| half * x * (S::one() + (c * (x + k * x * x * x)).tanh()),
            move |x| {
                let u = c * (x + k * x * x * x);
                let t = u.tanh();
                half * (S::one() + t)
                    + half * x * (S::one() - t * t) * c * (S::one() + three * k * x * x)
            },
        )
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), |x| S::one() / x)
    }

    /// Gradient is passed through strictly inside the interval, zero outside.
    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Var {
        self.unary(
            a,
            move |x| x.max(lo).min(hi),
            move |x| if x > lo && x < hi { S::one() } else { S::zero() },
        )
    }

    /// Sum of all elements, as a 1-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let av = self.value(a).clone();
        let out = Tensor::scalar(av.sum());
        let needs = self.needs_grad(&[a]);
        let shape = av.shape().to_vec();
        let ai = a.0;
        self.push(
            out,
            Some(Box::new(move |g| vec![(ai, Tensor::full(&shape, g.item()))])),
            needs,
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, S::one() / S::from_real(n as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn add_mul_backward() {
        // f = sum((a + b) * a) ; df/da = 2a + b, df/db = a
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[1.0, 2.0]), true);
        let b = tape.leaf(t(&[3.0, 5.0]), true);
        let s = tape.add(a, b).unwrap();
        let p = tape.mul(s, a).unwrap();
        let f = tape.sum(p);
        let g = tape.backward(f).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[5.0, 9.0]);
        assert_eq!(g.get(b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[1.0, 2.0]), true);
        let b = tape.leaf(t(&[1.0, 2.0, 3.0]), true);
        assert!(tape.add(a, b).is_err());
    }

    #[test]
    fn relu_nonnegative() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[-2.0, 0.0, 3.0]), false);
        let r = tape.relu(a);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn mean_backward_uniform() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[1.0, 2.0, 3.0, 4.0]), true);
        let m = tape.mean(a);
        assert_eq!(tape.value(m).item(), 2.5);
        let g = tape.backward(m).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn clamp_blocks_gradient_outside() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[0.5, 2.0]), true);
        let c = tape.clamp(a, 0.0, 1.0);
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 0.0]);
    }
}
