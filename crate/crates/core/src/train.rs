//! Training, evaluation, baselines and link-delay export.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{ArrivalNet, ModelConfig};
use crate::optim::Adam;
use crate::sample::{link_delays, SequenceSample};
use crate::scalar::Scalar;

/// Share of samples used for training.
pub const TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many test evaluations without improvement.
    pub patience: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 32,
            epochs: 10,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    /// Parameters from the epoch with the lowest test loss.
    pub model: ArrivalNet<S>,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Seeded random split into training and test indices.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_train = (TRAIN_FRACTION * n as f64).round() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let test = idx.split_off(n_train.min(n));
    (idx, test)
}

/// Mean normalised-space squared error over `batch`, as a tape loss.
fn batch_loss<S: Scalar>(
    model: &ArrivalNet<S>,
    tape: &mut Tape<S>,
    vars: &crate::params::ParamVars,
    batch: &[&SequenceSample],
) -> Result<crate::autodiff::Var> {
    let mut total = None;
    for s in batch {
        let l = model.loss_var(tape, vars, s)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("empty batch".into()))?;
    Ok(tape.scale(total, S::one() / S::lit(batch.len() as f64)))
}

/// One optimiser step on `batch`; returns the batch loss before the step.
pub fn train_step<S: Scalar>(model: &mut ArrivalNet<S>, adam: &mut Adam<S>, batch: &[&SequenceSample]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = model.store.register(&mut tape);
    let loss = batch_loss(model, &mut tape, &vars, batch)?;
    let value = tape.value(loss).data()[0].to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss {value} on a batch of {}", batch.len())));
    }
    let mut grads = tape.backward(loss)?;
    let g = model.store.collect_grads(&vars, &mut grads);
    adam.step(model.store.tensors_mut(), &g);
    Ok(value)
}

/// Mean normalised-space loss without gradients.
pub fn mean_loss<S: Scalar>(model: &ArrivalNet<S>, samples: &[&SequenceSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for s in samples {
        let mut tape = Tape::new();
        let vars = model.store.register_frozen(&mut tape);
        let l = model.loss_var(&mut tape, &vars, s)?;
        sum += tape.value(l).data()[0].to_f64_lossy();
    }
    Ok(sum / samples.len() as f64)
}

/// Mini-batch training with per-epoch shuffling and best-on-test selection.
pub fn fit<S: Scalar>(
    mut model: ArrivalNet<S>,
    train: &[&SequenceSample],
    test: &[&SequenceSample],
    opts: &TrainOptions,
    seed: u64,
) -> Result<(ArrivalNet<S>, Vec<EpochLog>, usize)> {
    if train.is_empty() || opts.batch_size == 0 {
        return Err(Error::Contract("training needs samples and a positive batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut adam = Adam::new(model.config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::INFINITY, model.clone(), 0);
    let mut stale = 0;
    let mut history = Vec::new();
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<&SequenceSample> = chunk.iter().map(|&i| train[i]).collect();
            sum += train_step(&mut model, &mut adam, &batch)? * batch.len() as f64;
        }
        let train_loss = sum / train.len() as f64;
        let test_loss = if test.is_empty() { train_loss } else { mean_loss(&model, test)? };
        log::info!("epoch {epoch}: train {train_loss:.5} test {test_loss:.5}");
        history.push(EpochLog { epoch, train_loss, test_loss });
        if test_loss < best.0 {
            best = (test_loss, model.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= opts.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    Ok((best.1, history, best.2))
}

/// Seeded split, initialisation and training.
pub fn train<S: Scalar>(
    config: &ModelConfig,
    samples: &[SequenceSample],
    seed: u64,
    opts: &TrainOptions,
) -> Result<TrainOutcome<S>> {
    if samples.len() < 2 {
        return Err(Error::Contract(format!("need at least 2 samples, got {}", samples.len())));
    }
    let (train_idx, test_idx) = split_indices(samples.len(), seed);
    let model = ArrivalNet::new(config.clone(), seed)?;
    let tr: Vec<&SequenceSample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let te: Vec<&SequenceSample> = test_idx.iter().map(|&i| &samples[i]).collect();
    let (model, history, best_epoch) = fit(model, &tr, &te, opts, seed)?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        train_idx,
        test_idx,
    })
}

fn check_windows<S: Scalar>(model: &ArrivalNet<S>, samples: &[&SequenceSample]) -> Result<()> {
    let c = &model.config;
    if let Some(s) = samples.iter().find(|s| s.n_p() != c.n_p || s.n_f() != c.n_f) {
        return Err(Error::Contract(format!(
            "sample windows {}→{} do not match model {}→{}",
            s.n_p(),
            s.n_f(),
            c.n_p,
            c.n_f
        )));
    }
    Ok(())
}

/// Predicted arrival times of every sample.
pub fn predict_all<S: Scalar>(model: &ArrivalNet<S>, samples: &[&SequenceSample]) -> Result<Vec<Vec<f64>>> {
    check_windows(model, samples)?;
    samples
        .iter()
        .map(|s| Ok(model.predict_arrivals(s)?.to_f64_vec()))
        .collect()
}

pub fn evaluate<S: Scalar>(model: &ArrivalNet<S>, samples: &[&SequenceSample]) -> Result<MetricsReport> {
    let pred = predict_all(model, samples)?;
    let truth: Vec<Vec<f64>> = samples.iter().map(|s| s.future_arrivals()).collect();
    compute_metrics(&pred, &truth)
}

/// Arrivals that carry the last observed delay to every future stop.
pub fn persistence_arrivals(sample: &SequenceSample) -> Vec<f64> {
    let d = sample.last_delay();
    sample.future_scheduled.iter().map(|s| s + d).collect()
}

pub fn evaluate_persistence(samples: &[&SequenceSample]) -> Result<MetricsReport> {
    let pred: Vec<Vec<f64>> = samples.iter().map(|s| persistence_arrivals(s)).collect();
    let truth: Vec<Vec<f64>> = samples.iter().map(|s| s.future_arrivals()).collect();
    compute_metrics(&pred, &truth)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkDelayRow {
    pub link_id: String,
    pub n: usize,
    pub gt_mean_s: f64,
    pub pred_mean_s: f64,
}

/// Per-link mean true and predicted link delays. Link `route:j` ends at
/// stop `j`; each forecast is differenced against the last observed delay.
/// Samples without a route id are skipped and counted.
pub fn link_delay_export<S: Scalar>(
    model: &ArrivalNet<S>,
    samples: &[&SequenceSample],
) -> Result<(Vec<LinkDelayRow>, usize)> {
    check_windows(model, samples)?;
    let mut acc: BTreeMap<(String, usize), (usize, f64, f64)> = BTreeMap::new();
    let mut skipped = 0;
    for s in samples {
        if s.route_id.is_empty() {
            skipped += 1;
            continue;
        }
        let pred = model.forward(s)?.to_f64_vec();
        let gt = link_delays(&s.future_delays, s.last_delay());
        let pr = link_delays(&pred, s.last_delay());
        for h in 0..s.n_f() {
            let e = acc.entry((s.route_id.clone(), s.offset + s.n_p() + h)).or_default();
            e.0 += 1;
            e.1 += gt[h];
            e.2 += pr[h];
        }
    }
    let rows = acc
        .into_iter()
        .map(|((route, stop), (n, g, p))| LinkDelayRow {
            link_id: format!("{route}:{stop}"),
            n,
            gt_mean_s: g / n as f64,
            pred_mean_s: p / n as f64,
        })
        .collect();
    Ok((rows, skipped))
}

pub fn write_link_csv(rows: &[LinkDelayRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "link_id,n,gt_mean_s,pred_mean_s")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.link_id, r.n, r.gt_mean_s, r.pred_mean_s)?;
    }
    Ok(())
}
