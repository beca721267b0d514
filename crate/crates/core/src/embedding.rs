//! Lifts the normalised window into model space and stretches it to the
//! full `N_p + N_f` horizon.
//!
//! `X = Align · (PE + VE)` where `PE` is a fixed sinusoidal position code,
//! `VE` a length-3 temporal convolution over the input channels, and
//! `Align` a learned `(N_p+N_f)×N_p` map shared by every model channel.

use rand::Rng;

use crate::autodiff::{Tape, Var, GATHER_ZERO};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Temporal taps of the value-encoding convolution.
pub const VALUE_KERNEL_LEN: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    /// `[3 × in_channels × d_model]`.
    pub value_kernel: ParamId,
    /// `[(N_p+N_f) × N_p]`.
    pub align: ParamId,
    pub in_channels: usize,
    pub d_model: usize,
    pub n_p: usize,
    pub n_f: usize,
}

impl EmbeddingParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        in_channels: usize,
        d_model: usize,
        n_p: usize,
        n_f: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if d_model == 0 || d_model % 2 != 0 {
            return Err(Error::Config(format!("d_model must be even, got {d_model}")));
        }
        let value_kernel = store.add_uniform(
            "embed.value_kernel",
            &[VALUE_KERNEL_LEN, in_channels, d_model],
            VALUE_KERNEL_LEN * in_channels,
            rng,
        );
        let align = store.add_uniform("embed.align", &[n_p + n_f, n_p], n_p, rng);
        Ok(EmbeddingParams {
            value_kernel,
            align,
            in_channels,
            d_model,
            n_p,
            n_f,
        })
    }
}

/// Sinusoidal position code with base `2·N_p`: channel `2j` holds
/// `sin(pos / (2N_p)^{2j/d})`, channel `2j+1` the cosine, `pos = 1..=N_p`.
pub fn positional_encoding<S: Scalar>(n_p: usize, d_model: usize) -> Result<Tensor<S>> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::Config(format!("d_model must be even, got {d_model}")));
    }
    let base = 2.0 * n_p as f64;
    let mut data = Vec::with_capacity(n_p * d_model);
    for pos in 1..=n_p {
        for j in 0..d_model / 2 {
            let angle = pos as f64 / base.powf(2.0 * j as f64 / d_model as f64);
            data.push(S::lit(angle.sin()));
            data.push(S::lit(angle.cos()));
        }
    }
    Tensor::new(&[n_p, d_model], data)
}

/// Im2col for a same-padded length-3 temporal convolution:
/// row `t` holds `x[t-1], x[t], x[t+1]` (zeros past either end).
fn im2col_index(n: usize, c: usize) -> Vec<usize> {
    let half = VALUE_KERNEL_LEN / 2;
    let mut index = Vec::with_capacity(n * VALUE_KERNEL_LEN * c);
    for t in 0..n {
        for tap in 0..VALUE_KERNEL_LEN {
            let src = (t + tap).checked_sub(half).filter(|&s| s < n);
            for ch in 0..c {
                index.push(src.map_or(GATHER_ZERO, |s| s * c + ch));
            }
        }
    }
    index
}

/// Value encoding on the tape: `f1d[N_p×Cin] → [N_p×d_model]`.
pub fn value_encoding_var<S: Scalar>(tape: &mut Tape<S>, f1d: Var, kernel: Var) -> Result<Var> {
    let (n, c) = match *tape.shape(f1d) {
        [n, c] => (n, c),
        _ => return Err(Error::Contract(format!("value encoding expects N_p×C, got {:?}", tape.shape(f1d)))),
    };
    let ks = tape.shape(kernel).to_vec();
    if ks.len() != 3 || ks[0] != VALUE_KERNEL_LEN || ks[1] != c {
        return Err(Error::dim("value_encoding", &[n, c], &ks));
    }
    let cols = tape.gather(f1d, im2col_index(n, c), &[n, VALUE_KERNEL_LEN * c])?;
    let flat = tape.reshape(kernel, &[VALUE_KERNEL_LEN * c, ks[2]])?;
    tape.matmul(cols, flat)
}

/// Plain-tensor value encoding with an explicit kernel `[3×Cin×d]`.
pub fn value_encoding<S: Scalar>(f1d: &Tensor<S>, kernel: &Tensor<S>) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let x = tape.constant(f1d.clone());
    let k = tape.constant(kernel.clone());
    let out = value_encoding_var(&mut tape, x, k)?;
    Ok(tape.value(out).clone())
}

/// Concatenates the normalised window with the context channels.
pub fn input_features<S: Scalar>(window_norm: &Tensor<S>, context: Option<&Tensor<S>>) -> Result<Tensor<S>> {
    let Some(ctx) = context else {
        return Ok(window_norm.clone());
    };
    let (n, c) = (window_norm.shape()[0], window_norm.shape()[1]);
    if ctx.rank() != 2 || ctx.shape()[0] != n {
        return Err(Error::dim("input_features", window_norm.shape(), ctx.shape()));
    }
    let nc = ctx.shape()[1];
    let mut data = Vec::with_capacity(n * (c + nc));
    for r in 0..n {
        data.extend_from_slice(&window_norm.data()[r * c..(r + 1) * c]);
        data.extend_from_slice(&ctx.data()[r * nc..(r + 1) * nc]);
    }
    Tensor::new(&[n, c + nc], data)
}

/// Full embedding on the tape: returns `X[(N_p+N_f) × d_model]`.
pub fn embed_var<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ParamVars,
    params: &EmbeddingParams,
    f1d: &Tensor<S>,
) -> Result<Var> {
    if f1d.shape() != [params.n_p, params.in_channels] {
        return Err(Error::dim("embed", f1d.shape(), &[params.n_p, params.in_channels]));
    }
    let x = tape.constant(f1d.clone());
    let ve = value_encoding_var(tape, x, vars.var(params.value_kernel))?;
    let pe = tape.constant(positional_encoding(params.n_p, params.d_model)?);
    let sum = tape.add(pe, ve)?;
    tape.matmul(vars.var(params.align), sum)
}

/// Plain-tensor embedding of a normalised window plus optional context.
pub fn embed<S: Scalar>(
    store: &ParamStore<S>,
    params: &EmbeddingParams,
    window_norm: &Tensor<S>,
    context: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    let f1d = input_features(window_norm, context)?;
    let mut tape = Tape::new();
    let vars = store.register_frozen(&mut tape);
    let out = embed_var(&mut tape, &vars, params, &f1d)?;
    Ok(tape.value(out).clone())
}
