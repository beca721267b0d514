//! Per-stop records, trips and fixed-length training windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Channels per stop: distance, scheduled time, delay, signal flag, mean time.
pub const FEATURE_CHANNELS: usize = 5;
/// Broadcast context channels: peak flag, weekday flag.
pub const CONTEXT_CHANNELS: usize = 2;
/// Index of the delay channel inside a stop's feature vector.
pub const DELAY_CHANNEL: usize = 2;

/// Features of the link ending at one stop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRecord {
    /// Link distance in km.
    pub s_km: f64,
    /// Scheduled link travel time in seconds.
    pub t_sched_s: f64,
    /// Cumulative delay at this stop in seconds; negative means early.
    pub delay_s: f64,
    /// 1 if a traffic signal sits on the link.
    pub signal: u8,
    /// Historical mean link travel time in seconds.
    pub t_mean_s: f64,
}

impl StopRecord {
    pub fn features(&self) -> [f64; FEATURE_CHANNELS] {
        [self.s_km, self.t_sched_s, self.delay_s, f64::from(self.signal), self.t_mean_s]
    }

    pub fn validate(&self) -> Result<()> {
        if !self.features().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("stop record {self:?}")));
        }
        if self.signal > 1 {
            return Err(Error::Dataset(format!("signal flag must be 0 or 1, got {}", self.signal)));
        }
        if self.s_km <= 0.0 || self.t_sched_s <= 0.0 {
            return Err(Error::Dataset("link distance and scheduled time must be positive".into()));
        }
        Ok(())
    }
}

/// One observed trip: a dataset line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trip {
    pub route_id: String,
    pub trip_id: String,
    /// Route index of the stop described by `stops[0]`.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub first_stop: usize,
    pub stops: Vec<StopRecord>,
    pub peak: u8,
    pub weekday: u8,
    /// Scheduled arrival at each stop, seconds since trip start.
    pub sched_arrivals_s: Vec<f64>,
}

impl Trip {
    pub fn validate(&self) -> Result<()> {
        if self.stops.len() != self.sched_arrivals_s.len() {
            return Err(Error::Dataset(format!(
                "{} stops but {} scheduled arrivals",
                self.stops.len(),
                self.sched_arrivals_s.len()
            )));
        }
        if self.peak > 1 || self.weekday > 1 {
            return Err(Error::Dataset("peak and weekday flags must be 0 or 1".into()));
        }
        for (j, s) in self.stops.iter().enumerate() {
            s.validate().map_err(|e| Error::Dataset(format!("stop {j}: {e}")))?;
        }
        if !self.sched_arrivals_s.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("scheduled arrivals".into()));
        }
        if self.sched_arrivals_s.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Dataset("scheduled arrivals must be non-decreasing".into()));
        }
        Ok(())
    }

    pub fn delays(&self) -> Vec<f64> {
        self.stops.iter().map(|s| s.delay_s).collect()
    }
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

/// Model input and target for one position along a trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub past: Vec<StopRecord>,
    pub peak: bool,
    pub weekday: bool,
    pub future_delays: Vec<f64>,
    /// Scheduled arrival of each future stop, seconds since trip start.
    pub future_scheduled: Vec<f64>,
    pub route_id: String,
    pub trip_id: String,
    /// Route index of the first past stop.
    pub offset: usize,
}

impl SequenceSample {
    pub fn n_p(&self) -> usize {
        self.past.len()
    }

    pub fn n_f(&self) -> usize {
        self.future_delays.len()
    }

    /// Past features `[N_p × 5]`.
    pub fn window<S: Scalar>(&self) -> Tensor<S> {
        let data = self
            .past
            .iter()
            .flat_map(|r| r.features())
            .map(S::lit)
            .collect();
        Tensor::new(&[self.past.len(), FEATURE_CHANNELS], data).expect("consistent shape")
    }

    /// Context flags broadcast over the past window `[N_p × 2]`.
    pub fn context<S: Scalar>(&self) -> Tensor<S> {
        let flags = [f64::from(u8::from(self.peak)), f64::from(u8::from(self.weekday))];
        let data = (0..self.past.len()).flat_map(|_| flags).map(S::lit).collect();
        Tensor::new(&[self.past.len(), CONTEXT_CHANNELS], data).expect("consistent shape")
    }

    pub fn past_delays(&self) -> Vec<f64> {
        self.past.iter().map(|r| r.delay_s).collect()
    }

    pub fn last_delay(&self) -> f64 {
        self.past.last().map_or(0.0, |r| r.delay_s)
    }

    /// Ground-truth arrival times of the future stops.
    pub fn future_arrivals(&self) -> Vec<f64> {
        self.future_delays
            .iter()
            .zip(&self.future_scheduled)
            .map(|(d, s)| d + s)
            .collect()
    }
}

/// Sliding windows (stride 1) over every trip. Returns the samples and the
/// number of trips too short to yield one.
pub fn build_windows(trips: &[Trip], n_p: usize, n_f: usize) -> (Vec<SequenceSample>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for trip in trips {
        let len = trip.stops.len();
        if len < n_p + n_f || n_p == 0 || n_f == 0 {
            skipped += 1;
            continue;
        }
        for start in 0..=len - n_p - n_f {
            let fut = start + n_p..start + n_p + n_f;
            out.push(SequenceSample {
                past: trip.stops[start..start + n_p].to_vec(),
                peak: trip.peak == 1,
                weekday: trip.weekday == 1,
                future_delays: trip.stops[fut.clone()].iter().map(|s| s.delay_s).collect(),
                future_scheduled: trip.sched_arrivals_s[fut].to_vec(),
                route_id: trip.route_id.clone(),
                trip_id: trip.trip_id.clone(),
                offset: trip.first_stop + start,
            });
        }
    }
    (out, skipped)
}

/// Successive differences of cumulative delays, starting from `initial`.
pub fn link_delays(cumulative: &[f64], initial: f64) -> Vec<f64> {
    let mut prev = initial;
    cumulative
        .iter()
        .map(|&d| {
            let link = d - prev;
            prev = d;
            link
        })
        .collect()
}
