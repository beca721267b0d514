//! The full forecaster: normalise, embed, stacked period blocks, output head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::backbone::{BackboneKind, BackboneParams, BackboneSpec};
use crate::embedding::{input_features, EmbeddingParams};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::period::{detect_periods, fold_index, grid_rows, unfold_index, PeriodDecomposition};
use crate::sample::{SequenceSample, CONTEXT_CHANNELS, DELAY_CHANNEL, FEATURE_CHANNELS};
use crate::scalar::Scalar;
use crate::stationarize::{normalize, NormStats};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub num_blocks: usize,
    pub top_k: usize,
    pub num_kernels: usize,
    pub n_p: usize,
    pub n_f: usize,
    pub window_size: usize,
    pub backbone: BackboneKind,
    pub learning_rate: f64,
    pub context_enabled: bool,
    pub num_heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 16,
            num_blocks: 2,
            top_k: 3,
            num_kernels: 6,
            n_p: 10,
            n_f: 5,
            window_size: 2,
            backbone: BackboneKind::Inception,
            learning_rate: 0.001,
            context_enabled: true,
            num_heads: 1,
        }
    }
}

impl ModelConfig {
    /// Full sequence length `N_p + N_f`.
    pub fn horizon(&self) -> usize {
        self.n_p + self.n_f
    }

    pub fn in_channels(&self) -> usize {
        FEATURE_CHANNELS + if self.context_enabled { CONTEXT_CHANNELS } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_p < 2 {
            return fail(format!("n_p must be >= 2, got {}", self.n_p));
        }
        if self.n_f < 1 {
            return fail("n_f must be >= 1".into());
        }
        if self.horizon() < 4 {
            return fail(format!("n_p + n_f must be >= 4, got {}", self.horizon()));
        }
        if self.top_k < 1 || self.top_k > self.horizon() / 2 {
            return fail(format!("top_k must lie in 1..={}, got {}", self.horizon() / 2, self.top_k));
        }
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return fail(format!("d_model must be a positive even number, got {}", self.d_model));
        }
        if self.num_blocks == 0 || self.num_kernels == 0 || self.window_size == 0 {
            return fail("num_blocks, num_kernels and window_size must be >= 1".into());
        }
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return fail(format!("num_heads {} must divide d_model {}", self.num_heads, self.d_model));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        Ok(())
    }

    pub fn backbone_spec(&self) -> BackboneSpec {
        BackboneSpec {
            kind: self.backbone,
            channels: self.d_model,
            num_kernels: self.num_kernels,
            window: self.window_size,
            heads: self.num_heads,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalNet<S> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    pub embedding: EmbeddingParams,
    pub blocks: Vec<BackboneParams>,
    /// `[d_model × 1]`.
    pub head_weight: ParamId,
    /// `[1]`.
    pub head_bias: ParamId,
}

/// Normalised input ready for the tape.
#[derive(Debug, Clone)]
pub struct PreparedInput<S> {
    /// `[N_p × in_channels]`.
    pub features: Tensor<S>,
    pub stats: NormStats<S>,
}

/// Intermediate tape variables of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub embedded: Var,
    /// Output of the last block, `[T × d_model]`.
    pub representation: Var,
    /// Normalised delay forecast `[N_f]`.
    pub output: Var,
    pub periods: Vec<PeriodDecomposition>,
    /// Softmaxed amplitude weights of each block, `[k]`.
    pub weights: Vec<Var>,
}

impl<S: Scalar> ArrivalNet<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let embedding = EmbeddingParams::init(
            &mut store,
            config.in_channels(),
            config.d_model,
            config.n_p,
            config.n_f,
            &mut rng,
        )?;
        let spec = config.backbone_spec();
        let blocks = (0..config.num_blocks)
            .map(|b| BackboneParams::init(&mut store, &format!("block{b}"), &spec, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head_weight = store.add_zeros("head.weight", &[config.d_model, 1]);
        let head_bias = store.add_zeros("head.bias", &[1]);
        Ok(ArrivalNet {
            config,
            store,
            embedding,
            blocks,
            head_weight,
            head_bias,
        })
    }

    /// Rebuilds a model around externally loaded parameters. Names and
    /// shapes must match what `config` produces.
    pub fn from_store(config: ModelConfig, store: ParamStore<S>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if store.len() != model.store.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter blocks, found {}",
                model.store.len(),
                store.len()
            )));
        }
        for ((want_name, want), (name, t)) in model.store.iter().zip(store.iter()) {
            if want_name != name || want.shape() != t.shape() {
                return Err(Error::Contract(format!(
                    "parameter `{name}` {:?} does not match `{want_name}` {:?}",
                    t.shape(),
                    want.shape()
                )));
            }
        }
        model.store = store;
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    pub fn cast<T: Scalar>(&self) -> ArrivalNet<T> {
        ArrivalNet {
            config: self.config.clone(),
            store: self.store.cast(),
            embedding: self.embedding.clone(),
            blocks: self.blocks.clone(),
            head_weight: self.head_weight,
            head_bias: self.head_bias,
        }
    }

    fn check_sample(&self, sample: &SequenceSample) -> Result<()> {
        if sample.n_p() != self.config.n_p {
            return Err(Error::Contract(format!(
                "sample has {} past stops, model expects {}",
                sample.n_p(),
                self.config.n_p
            )));
        }
        Ok(())
    }

    pub fn prepare(&self, sample: &SequenceSample) -> Result<PreparedInput<S>> {
        self.check_sample(sample)?;
        let (norm, stats) = normalize(&sample.window::<S>())?;
        let ctx = sample.context::<S>();
        let features = input_features(&norm, self.config.context_enabled.then_some(&ctx))?;
        Ok(PreparedInput { features, stats })
    }

    /// Normalised target for the delay channel.
    pub fn normalized_target(&self, sample: &SequenceSample, stats: &NormStats<S>) -> Result<Tensor<S>> {
        if sample.n_f() != self.config.n_f {
            return Err(Error::Contract(format!(
                "sample has {} future stops, model expects {}",
                sample.n_f(),
                self.config.n_f
            )));
        }
        let raw: Vec<S> = sample.future_delays.iter().map(|&v| S::lit(v)).collect();
        Tensor::new(&[self.config.n_f], stats.normalize_channel(&raw, DELAY_CHANNEL)?)
    }

    /// One residual period block on `x[T×d]`.
    pub fn block_var(
        &self,
        tape: &mut Tape<S>,
        vars: &ParamVars,
        block: usize,
        x: Var,
    ) -> Result<(Var, PeriodDecomposition, Var)> {
        let bb = self
            .blocks
            .get(block)
            .ok_or(Error::Index { index: block, len: self.blocks.len() })?;
        let (t, d) = match *tape.shape(x) {
            [t, d] => (t, d),
            _ => return Err(Error::Contract(format!("block expects T×d, got {:?}", tape.shape(x)))),
        };
        let dec = detect_periods(tape.value(x), self.config.top_k)?;
        let amps = tape.amplitude(x, &dec.frequencies())?;
        let weights = tape.softmax(amps, 0)?;
        let prepared = bb.prepare(tape, vars)?;
        let mut branches = Vec::with_capacity(dec.entries.len());
        for p in dec.periods() {
            let g = tape.gather(x, fold_index(t, p, d), &[grid_rows(t, p), p, d])?;
            let y = bb.forward(tape, vars, &prepared, g)?;
            branches.push(tape.gather(y, unfold_index(t, d), &[t, d])?);
        }
        let agg = tape.weighted_sum(&branches, weights)?;
        Ok((tape.add(agg, x)?, dec, weights))
    }

    /// Records the forward pass of prepared input on `tape`.
    pub fn forward_var(&self, tape: &mut Tape<S>, vars: &ParamVars, input: &PreparedInput<S>) -> Result<ForwardTrace> {
        let embedded = crate::embedding::embed_var(tape, vars, &self.embedding, &input.features)?;
        let mut x = embedded;
        let mut periods = Vec::with_capacity(self.blocks.len());
        let mut weights = Vec::with_capacity(self.blocks.len());
        for b in 0..self.blocks.len() {
            let (y, dec, w) = self.block_var(tape, vars, b, x)?;
            x = y;
            periods.push(dec);
            weights.push(w);
        }
        let h = tape.matmul(x, vars.var(self.head_weight))?;
        let h = tape.add_bias(h, vars.var(self.head_bias))?;
        let (t, nf) = (self.config.horizon(), self.config.n_f);
        let output = tape.gather(h, (t - nf..t).collect(), &[nf])?;
        Ok(ForwardTrace {
            embedded,
            representation: x,
            output,
            periods,
            weights,
        })
    }

    /// Normalised-space squared error of one sample, on the tape.
    pub fn loss_var(&self, tape: &mut Tape<S>, vars: &ParamVars, sample: &SequenceSample) -> Result<Var> {
        let input = self.prepare(sample)?;
        let target = self.normalized_target(sample, &input.stats)?;
        let trace = self.forward_var(tape, vars, &input)?;
        let target = tape.constant(target);
        tape.mse(trace.output, target)
    }

    fn frozen_trace(&self, sample: &SequenceSample) -> Result<(Tape<S>, ForwardTrace, NormStats<S>)> {
        let input = self.prepare(sample)?;
        let mut tape = Tape::new();
        let vars = self.store.register_frozen(&mut tape);
        let trace = self.forward_var(&mut tape, &vars, &input)?;
        Ok((tape, trace, input.stats))
    }

    /// Predicted delays in seconds for the next `N_f` stops.
    pub fn forward(&self, sample: &SequenceSample) -> Result<Tensor<S>> {
        let (tape, trace, stats) = self.frozen_trace(sample)?;
        let out = crate::stationarize::denormalize(tape.value(trace.output), &stats, DELAY_CHANNEL)?;
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("forecast for trip {}", sample.trip_id)));
        }
        Ok(out)
    }

    /// Predicted arrival times: delay plus scheduled arrival.
    pub fn predict_arrivals(&self, sample: &SequenceSample) -> Result<Tensor<S>> {
        let delays = self.forward(sample)?;
        arrivals_from_delays(&delays, &sample.future_scheduled)
    }

    /// Embedding output and last-block representation, both `[T×d]`.
    pub fn representations(&self, sample: &SequenceSample) -> Result<(Tensor<S>, Tensor<S>)> {
        let (tape, trace, _) = self.frozen_trace(sample)?;
        Ok((tape.value(trace.embedded).clone(), tape.value(trace.representation).clone()))
    }

    /// Period decomposition chosen by each block for `sample`.
    pub fn inspect_periods(&self, sample: &SequenceSample) -> Result<Vec<PeriodDecomposition>> {
        Ok(self.frozen_trace(sample)?.1.periods)
    }

    /// Applies block `block` to a plain `[T×d]` tensor.
    pub fn block_forward(&self, block: usize, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let vars = self.store.register_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let (y, _, _) = self.block_var(&mut tape, &vars, block, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Zeroes every backbone parameter of every block.
    pub fn zero_blocks(&mut self) {
        let names: Vec<bool> = self.store.iter().map(|(n, _)| n.starts_with("block")).collect();
        for (t, is_block) in self.store.tensors_mut().iter_mut().zip(names) {
            if is_block {
                t.data_mut().fill(S::zero());
            }
        }
    }
}

/// Elementwise `delay + schedule`.
pub fn arrivals_from_delays<S: Scalar>(delays: &Tensor<S>, scheduled: &[f64]) -> Result<Tensor<S>> {
    if scheduled.len() != delays.numel() {
        return Err(Error::Contract(format!(
            "need {} scheduled arrivals, got {}",
            delays.numel(),
            scheduled.len()
        )));
    }
    let data = delays
        .data()
        .iter()
        .zip(scheduled)
        .map(|(&d, &s)| d + S::lit(s))
        .collect();
    Tensor::new(delays.shape(), data)
}
