//! Layer helpers built on the tape: linear, conv, BConv (conv + BN + ReLU),
//! layer norm, and their parameter registration.

use rand::Rng;

use crate::error::Result;
use crate::params::{kaiming_uniform, trunc_normal, Forward, ParamStore, BN_EPS, LN_EPS};
use crate::tape::Var;
use crate::tensor::Tensor;

pub fn reg_linear(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, din: usize, dout: usize, bias: bool) {
    store.insert(format!("{prefix}.w"), trunc_normal(rng, &[din, dout], 0.02));
    if bias {
        store.insert(format!("{prefix}.b"), Tensor::zeros(&[dout]));
    }
}

pub fn reg_conv(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, cout: usize, cin_g: usize, k: usize) {
    store.insert(format!("{prefix}.w"), kaiming_uniform(rng, &[cout, cin_g, k, k]));
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[cout]));
}

pub fn reg_bconv(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, cin: usize, cout: usize, k: usize) {
    reg_conv(store, rng, &format!("{prefix}.conv"), cout, cin, k);
    store.insert(format!("{prefix}.bn.gamma"), Tensor::ones(&[cout]));
    store.insert(format!("{prefix}.bn.beta"), Tensor::zeros(&[cout]));
    store.insert_frozen(format!("{prefix}.bn.rmean"), Tensor::zeros(&[cout]));
    store.insert_frozen(format!("{prefix}.bn.rvar"), Tensor::ones(&[cout]));
}

pub fn reg_ln(store: &mut ParamStore, prefix: &str, d: usize) {
    store.insert(format!("{prefix}.g"), Tensor::ones(&[d]));
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[d]));
}

/// x [N x Din] -> x W + b.
pub fn linear(fwd: &mut Forward, prefix: &str, x: Var) -> Result<Var> {
    let w = fwd.var(&format!("{prefix}.w"));
    let y = fwd.tape.matmul(x, w)?;
    fwd.tape.add_row_bias(y, fwd.var(&format!("{prefix}.b")))
}

pub fn linear_nobias(fwd: &mut Forward, prefix: &str, x: Var) -> Result<Var> {
    let w = fwd.var(&format!("{prefix}.w"));
    fwd.tape.matmul(x, w)
}

pub fn conv(fwd: &mut Forward, prefix: &str, x: Var, stride: usize, pad: usize, groups: usize) -> Result<Var> {
    let w = fwd.var(&format!("{prefix}.w"));
    let b = fwd.var(&format!("{prefix}.b"));
    fwd.tape.conv2d(x, w, b, stride, pad, groups)
}

/// BConv: convolution, batch norm, ReLU. In train mode BN uses batch
/// statistics and queues a running-stat update; in eval mode it uses the
/// stored running statistics. With `identity_bconv` set the whole block is
/// skipped (wiring tests).
pub fn bconv(fwd: &mut Forward, prefix: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    if fwd.identity_bconv {
        return Ok(x);
    }
    let c = conv(fwd, &format!("{prefix}.conv"), x, stride, pad, 1)?;
    let gamma = fwd.var(&format!("{prefix}.bn.gamma"));
    let beta = fwd.var(&format!("{prefix}.bn.beta"));
    let n = if fwd.train {
        let (m, v) = crate::ops::channel_stats(fwd.tape.value(c));
        fwd.bn_updates.push((format!("{prefix}.bn"), m, v));
        fwd.tape.batchnorm_train(c, gamma, beta, BN_EPS)?
    } else {
        let rmean = fwd.var(&format!("{prefix}.bn.rmean"));
        let rvar = fwd.var(&format!("{prefix}.bn.rvar"));
        fwd.tape.batchnorm_eval(c, gamma, beta, rmean, rvar, BN_EPS)?
    };
    Ok(fwd.tape.relu(n))
}

pub fn layernorm(fwd: &mut Forward, prefix: &str, z: Var) -> Result<Var> {
    let g = fwd.var(&format!("{prefix}.g"));
    let b = fwd.var(&format!("{prefix}.b"));
    fwd.tape.layernorm(z, g, b, LN_EPS)
}
