//! Shape-preserving 2-D feature extractors applied to period grids.

pub mod inception;
pub mod swin;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamStore, ParamVars};
use crate::period::Grid2D;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use inception::{inception_forward, kernel_sizes, InceptionParams};
pub use swin::{
    build_shift_masks, swin_forward, window_attention, window_attention_detailed, window_masks,
    AttentionParams, ShiftMask, SwinLayerParams, SwinParams, MASK_VALUE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    #[default]
    Inception,
    Swin,
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneKind::Inception => "inception",
            BackboneKind::Swin => "swin",
        })
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inception" | "cnn" => Ok(BackboneKind::Inception),
            "swin" => Ok(BackboneKind::Swin),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

/// Hyper-parameters a backbone needs at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub channels: usize,
    pub num_kernels: usize,
    pub window: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackboneParams {
    Inception(InceptionParams),
    Swin(SwinParams),
}

/// Per-forward state shared by every branch of a block.
#[derive(Debug, Clone, Copy)]
pub enum Prepared {
    Inception([Var; 2]),
    Swin,
}

impl BackboneParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        spec: &BackboneSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(match spec.kind {
            BackboneKind::Inception => BackboneParams::Inception(InceptionParams::init(
                store,
                prefix,
                spec.channels,
                spec.num_kernels,
                rng,
            )?),
            BackboneKind::Swin => BackboneParams::Swin(SwinParams::init(
                store,
                prefix,
                spec.channels,
                spec.window,
                spec.heads,
                rng,
            )?),
        })
    }

    pub fn kind(&self) -> BackboneKind {
        match self {
            BackboneParams::Inception(_) => BackboneKind::Inception,
            BackboneParams::Swin(_) => BackboneKind::Swin,
        }
    }

    pub fn prepare<S: Scalar>(&self, tape: &mut Tape<S>, vars: &ParamVars) -> Result<Prepared> {
        match self {
            BackboneParams::Inception(p) => p.prepare(tape, vars).map(Prepared::Inception),
            BackboneParams::Swin(_) => Ok(Prepared::Swin),
        }
    }

    /// Runs the backbone on `grid[rows×cols×d]`.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        vars: &ParamVars,
        prepared: &Prepared,
        grid: Var,
    ) -> Result<Var> {
        match (self, prepared) {
            (BackboneParams::Inception(_), Prepared::Inception(k)) => inception_forward(tape, k, grid),
            (BackboneParams::Swin(p), Prepared::Swin) => swin_forward(tape, vars, p, grid),
            _ => Err(Error::Contract("backbone prepared for a different kind".into())),
        }
    }

    /// Plain-tensor forward on a grid.
    pub fn apply<S: Scalar>(&self, store: &ParamStore<S>, grid: &Grid2D<S>) -> Result<Grid2D<S>> {
        let mut tape = Tape::new();
        let vars = store.register_frozen(&mut tape);
        let prepared = self.prepare(&mut tape, &vars)?;
        let g = tape.constant(grid.data.clone());
        let out = self.forward(&mut tape, &vars, &prepared, g)?;
        let data: Tensor<S> = tape.value(out).clone();
        Ok(Grid2D {
            data,
            ..grid.clone()
        })
    }
}
