//! Arrival-time error metrics.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// Ground-truth arrivals closer to zero than this are left out of MAPE.
pub const MAPE_MIN_TRUTH_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    /// Linear-interpolated quartiles; all zeros for empty input.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Quartiles { min: 0.0, q1: 0.0, median: 0.0, q3: 0.0, max: 0.0 };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Quartiles { min: v[0], q1: q(0.25), median: q(0.5), q3: q(0.75), max: v[v.len() - 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    /// 1-based horizon step.
    pub step: usize,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub abs_error: Quartiles,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub samples: usize,
    /// Mean over samples of the per-sample horizon RMSE (s).
    pub rmse: f64,
    pub mae: f64,
    /// Percent.
    pub mape: f64,
    /// Horizon steps left out of MAPE for a near-zero truth.
    pub mape_excluded: usize,
    pub steps: Vec<StepMetrics>,
}

fn check_mae_rmse(mae: f64, rmse: f64) {
    assert!(mae <= rmse * (1.0 + 1e-12) + 1e-12, "MAE {mae} exceeds RMSE {rmse}");
}

/// Metrics of predicted vs. true arrival times, `[samples][N_f]`.
/// Each sample's errors are averaged over the horizon before averaging
/// over samples.
pub fn compute_metrics(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(Error::dim("compute_metrics", &[pred.len()], &[truth.len()]));
    }
    let n_f = truth.first().map_or(0, Vec::len);
    for (p, t) in pred.iter().zip(truth) {
        if p.len() != n_f || t.len() != n_f {
            return Err(Error::dim("compute_metrics", &[p.len()], &[t.len()]));
        }
    }
    let n = pred.len();
    let (mut rmse, mut mae, mut mape) = (0.0, 0.0, 0.0);
    let (mut mape_samples, mut mape_excluded) = (0usize, 0usize);
    let mut step_sq = vec![0.0; n_f];
    let mut step_abs = vec![Vec::with_capacity(n); n_f];
    let mut step_pct = vec![(0.0, 0usize); n_f];
    for (p, t) in pred.iter().zip(truth) {
        let (mut sq, mut ab, mut pct, mut kept) = (0.0, 0.0, 0.0, 0usize);
        for h in 0..n_f {
            let e = t[h] - p[h];
            sq += e * e;
            ab += e.abs();
            step_sq[h] += e * e;
            step_abs[h].push(e.abs());
            if t[h].abs() >= MAPE_MIN_TRUTH_S {
                let r = (e / t[h]).abs();
                pct += r;
                kept += 1;
                step_pct[h].0 += r;
                step_pct[h].1 += 1;
            } else {
                mape_excluded += 1;
            }
        }
        if n_f > 0 {
            rmse += (sq / n_f as f64).sqrt();
            mae += ab / n_f as f64;
        }
        if kept > 0 {
            mape += 100.0 * pct / kept as f64;
            mape_samples += 1;
        }
    }
    let nn = n.max(1) as f64;
    let report = MetricsReport {
        samples: n,
        rmse: rmse / nn,
        mae: mae / nn,
        mape: mape / mape_samples.max(1) as f64,
        mape_excluded,
        steps: (0..n_f)
            .map(|h| StepMetrics {
                step: h + 1,
                rmse: (step_sq[h] / nn).sqrt(),
                mae: step_abs[h].iter().sum::<f64>() / nn,
                mape: 100.0 * step_pct[h].0 / step_pct[h].1.max(1) as f64,
                abs_error: Quartiles::of(&step_abs[h]),
            })
            .collect(),
    };
    check_mae_rmse(report.mae, report.rmse);
    for s in &report.steps {
        check_mae_rmse(s.mae, s.rmse);
    }
    Ok(report)
}

impl MetricsReport {
    /// `step,rmse_s,mae_s,mape_pct` rows followed by an `aggregate` row.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "step,rmse_s,mae_s,mape_pct")?;
        for s in &self.steps {
            writeln!(w, "{},{},{},{}", s.step, s.rmse, s.mae, s.mape)?;
        }
        writeln!(w, "aggregate,{},{},{}", self.rmse, self.mae, self.mape)?;
        Ok(())
    }
}
