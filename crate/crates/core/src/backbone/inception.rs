//! Two-layer multi-kernel convolution over a period grid.
//!
//! Each layer runs `num_kernels` square kernels of sizes `1, 3, 5, …` in
//! parallel and sums the results; a GELU sits between the layers. Because
//! convolution is linear in the kernel, the parallel sum is computed as a
//! single convolution with the kernels zero-padded to the largest size and
//! added together.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct InceptionParams {
    /// `layers[l][i]` is the `(2i+1)×(2i+1)×d×d` kernel of layer `l`.
    pub layers: [Vec<ParamId>; 2],
    pub channels: usize,
}

/// Kernel sizes `1, 3, …, 2n−1`.
pub fn kernel_sizes(num_kernels: usize) -> Vec<usize> {
    (0..num_kernels).map(|i| 2 * i + 1).collect()
}

impl InceptionParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        channels: usize,
        num_kernels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if num_kernels == 0 {
            return Err(Error::Config("inception needs at least one kernel".into()));
        }
        let mut layer = |l: usize, rng: &mut _| {
            kernel_sizes(num_kernels)
                .into_iter()
                .map(|k| {
                    store.add_uniform(
                        format!("{prefix}.inception.l{l}.k{k}"),
                        &[k, k, channels, channels],
                        k * k * channels,
                        rng,
                    )
                })
                .collect::<Vec<_>>()
        };
        let l0 = layer(0, rng);
        let l1 = layer(1, rng);
        Ok(InceptionParams {
            layers: [l0, l1],
            channels,
        })
    }

    /// Sums each layer's kernels into one kernel of the largest size.
    pub fn prepare<S: Scalar>(&self, tape: &mut Tape<S>, vars: &ParamVars) -> Result<[Var; 2]> {
        let mut out = [Var(0); 2];
        for (l, ids) in self.layers.iter().enumerate() {
            let k_big = tape.shape(vars.var(*ids.last().expect("non-empty")))[0];
            let mut acc: Option<Var> = None;
            for id in ids {
                let k = vars.var(*id);
                let big = if tape.shape(k)[0] == k_big { k } else { tape.embed_kernel(k, k_big)? };
                acc = Some(match acc {
                    Some(a) => tape.add(a, big)?,
                    None => big,
                });
            }
            out[l] = acc.expect("non-empty");
        }
        Ok(out)
    }
}

/// Runs the prepared two-layer block on `grid[r×p×d]`.
pub fn inception_forward<S: Scalar>(tape: &mut Tape<S>, kernels: &[Var; 2], grid: Var) -> Result<Var> {
    let d = tape.shape(kernels[0])[2];
    if tape.shape(grid).len() != 3 || tape.shape(grid)[2] != d {
        return Err(Error::dim("inception_forward", tape.shape(grid), &[d]));
    }
    let h = tape.conv2d_same(grid, kernels[0])?;
    let h = tape.gelu(h);
    tape.conv2d_same(h, kernels[1])
}
