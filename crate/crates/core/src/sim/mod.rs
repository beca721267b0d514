//! Synthetic transit-delay data.
//!
//! A network of routes with lognormal link lengths and signalised links is
//! driven by a cumulative delay process: each link adds drift, a per-trip
//! congestion trend, noise, red-light waits and peak-hour slowdowns, while
//! early vehicles hold at stops to recover. Vehicles emit door and passage
//! events from which per-stop arrival delays are extracted.

mod network;

pub use network::{generate_network, Link, Network, NetworkParams, Profile, Route, WAYPOINT_SPACING_M};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{StopRecord, Trip};

pub const SECONDS_PER_HOUR: f64 = 3600.0;

/// Morning and evening rush windows on weekdays, as clock hours.
pub const PEAK_WINDOWS_H: [(f64, f64); 2] = [(7.0, 9.0), (16.0, 19.0)];

/// Weekday departures inside a rush window are peak trips.
pub fn is_peak(weekday: bool, departure_clock_s: f64) -> bool {
    let h = departure_clock_s.rem_euclid(24.0 * SECONDS_PER_HOUR) / SECONDS_PER_HOUR;
    weekday && PEAK_WINDOWS_H.iter().any(|&(a, b)| h >= a && h < b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    /// Departure delay at the first stop (s).
    pub initial_delay_mean_s: f64,
    pub initial_delay_std_s: f64,
    /// Mean delay added per link (s).
    pub drift_s: f64,
    /// Std of the per-trip congestion trend added to every link (s).
    pub trend_std_s: f64,
    /// Std of independent per-link noise (s).
    pub noise_std_s: f64,
    /// Probability of stopping at a signalised link's light.
    pub red_prob: f64,
    /// Red waits are uniform in `[0, red_max_s]`.
    pub red_max_s: f64,
    /// Extra delay per average-length link in rush windows (s).
    pub peak_penalty_s: f64,
    /// Fraction of a negative delay recovered at the next stop.
    pub recovery: f64,
    /// Probability a stop is passed without opening doors.
    pub skip_prob: f64,
    /// Probability doors open only after the next trigger point is passed.
    pub late_door_prob: f64,
    /// Probability a stop's events are lost.
    pub missing_prob: f64,
    pub first_departure_s: f64,
    pub last_departure_s: f64,
    pub headway_s: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            initial_delay_mean_s: 0.0,
            initial_delay_std_s: 45.0,
            drift_s: 1.0,
            trend_std_s: 3.0,
            noise_std_s: 9.0,
            red_prob: 0.5,
            red_max_s: 40.0,
            peak_penalty_s: 8.0,
            recovery: 0.4,
            skip_prob: 0.06,
            late_door_prob: 0.1,
            missing_prob: 0.003,
            first_departure_s: 5.5 * SECONDS_PER_HOUR,
            last_departure_s: 22.5 * SECONDS_PER_HOUR,
            headway_s: 900.0,
        }
    }
}

/// Rough share of all trips that fall in rush windows.
const PEAK_SHARE: f64 = 0.2;

impl SimParams {
    /// Average delay increment on a link, mixing peak and off-peak trips.
    pub fn expected_increment(&self, signal: bool, distance_km: f64) -> f64 {
        let red = if signal { self.red_prob * self.red_max_s / 2.0 } else { 0.0 };
        self.drift_s + red + PEAK_SHARE * self.peak_penalty_s * distance_km / 0.4702
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.red_prob, self.skip_prob, self.late_door_prob, self.missing_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("simulation probabilities must lie in [0,1]".into()));
        }
        if self.headway_s <= 0.0 || self.last_departure_s < self.first_departure_s {
            return Err(Error::Config("invalid departure schedule".into()));
        }
        if self.noise_std_s < 0.0 || self.trend_std_s < 0.0 || self.initial_delay_std_s < 0.0 {
            return Err(Error::Config("standard deviations must be >= 0".into()));
        }
        Ok(())
    }
}

/// Vehicle events at one stop. Times are seconds since midnight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopEvent {
    pub stop: usize,
    /// Time the vehicle leaves the stop point; `None` if lost.
    pub passage_s: Option<f64>,
    /// Door opening, if doors opened.
    pub door_open_s: Option<f64>,
    /// Doors opened only after the next trigger point was passed.
    pub after_trigger: bool,
}

impl StopEvent {
    /// Observed arrival: door opening if any (before or after the trigger
    /// point), otherwise the stop-point passage.
    pub fn arrival_s(&self) -> Option<f64> {
        self.passage_s?;
        self.door_open_s.or(self.passage_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripLog {
    pub route: usize,
    pub trip_id: String,
    pub day: u32,
    pub weekday: bool,
    /// Scheduled departure from stop 0, seconds since midnight.
    pub departure_s: f64,
    /// Events for stops `1..n`, in route order.
    pub events: Vec<StopEvent>,
    /// Simulator delay state at every stop `0..n`.
    pub true_delays: Vec<f64>,
}

impl TripLog {
    pub fn peak(&self) -> bool {
        is_peak(self.weekday, self.departure_s)
    }
}

fn trip_rng(seed: u64, day: u32, route: usize, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((day as u64) << 40) | ((route as u64) << 20) | k as u64);
    rng
}

/// Simulates every scheduled trip of one day.
pub fn simulate_day(net: &Network, seed: u64, day: u32, weekday: bool, params: &SimParams) -> Result<Vec<TripLog>> {
    params.validate()?;
    let noise = Normal::new(0.0, params.noise_std_s).map_err(|e| Error::Config(e.to_string()))?;
    let trend_dist = Normal::new(0.0, params.trend_std_s).map_err(|e| Error::Config(e.to_string()))?;
    let init = Normal::new(params.initial_delay_mean_s, params.initial_delay_std_s)
        .map_err(|e| Error::Config(e.to_string()))?;
    let departures: Vec<f64> = (0..)
        .map(|k| params.first_departure_s + k as f64 * params.headway_s)
        .take_while(|&t| t <= params.last_departure_s)
        .collect();
    let mut logs = Vec::with_capacity(net.routes.len() * departures.len());
    for (r, route) in net.routes.iter().enumerate() {
        let sched = route.sched_arrivals();
        for (k, &dep) in departures.iter().enumerate() {
            let mut rng = trip_rng(seed, day, r, k);
            let peak = is_peak(weekday, dep);
            let trend = trend_dist.sample(&mut rng);
            let mut d: f64 = init.sample(&mut rng);
            let mut true_delays = vec![d];
            let mut events = Vec::with_capacity(route.links.len());
            for (j, link) in route.links.iter().enumerate() {
                let mut inc = params.drift_s + trend + noise.sample(&mut rng);
                if link.signal && rng.random_bool(params.red_prob) {
                    inc += rng.random_range(0.0..=params.red_max_s);
                }
                if peak {
                    inc += params.peak_penalty_s * link.distance_km / 0.4702;
                }
                if d < 0.0 {
                    inc -= params.recovery * d;
                }
                d += inc;
                true_delays.push(d);

                let arrival = dep + sched[j + 1] + d;
                let stop = j + 1;
                let event = if rng.random_bool(params.missing_prob) {
                    StopEvent { stop, passage_s: None, door_open_s: None, after_trigger: false }
                } else if rng.random_bool(params.skip_prob) {
                    StopEvent { stop, passage_s: Some(arrival), door_open_s: None, after_trigger: false }
                } else {
                    let dwell = net.params.dwell_s * rng.random_range(0.5..1.5);
                    StopEvent {
                        stop,
                        passage_s: Some(arrival + dwell),
                        door_open_s: Some(arrival),
                        after_trigger: rng.random_bool(params.late_door_prob),
                    }
                };
                events.push(event);
            }
            logs.push(TripLog {
                route: r,
                trip_id: format!("{}-d{day}-{k:03}", route.id),
                day,
                weekday,
                departure_s: dep,
                events,
                true_delays,
            });
        }
    }
    Ok(logs)
}

/// Contiguous run of extracted delays.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySegment {
    pub first_stop: usize,
    pub delays: Vec<f64>,
}

/// Per-stop delays of a trip, split wherever events are missing. Also
/// returns how many stops were dropped.
pub fn extract_delays(log: &TripLog, net: &Network) -> Result<(Vec<DelaySegment>, usize)> {
    let route = net
        .routes
        .get(log.route)
        .ok_or(Error::Index { index: log.route, len: net.routes.len() })?;
    let sched = route.sched_arrivals();
    if log.events.windows(2).any(|w| w[1].stop <= w[0].stop) {
        return Err(Error::Dataset(format!("events of {} are not in route order", log.trip_id)));
    }
    let mut segments: Vec<DelaySegment> = Vec::new();
    let mut dropped = 0;
    let mut prev_stop = None;
    for ev in &log.events {
        let Some(&s) = sched.get(ev.stop) else {
            return Err(Error::Index { index: ev.stop, len: sched.len() });
        };
        let Some(arrival) = ev.arrival_s() else {
            dropped += 1;
            prev_stop = None;
            continue;
        };
        let delay = arrival - (log.departure_s + s);
        match segments.last_mut() {
            Some(seg) if prev_stop == Some(ev.stop - 1) => seg.delays.push(delay),
            _ => segments.push(DelaySegment { first_stop: ev.stop, delays: vec![delay] }),
        }
        prev_stop = Some(ev.stop);
    }
    Ok((segments, dropped))
}

/// Counters collected while converting logs to trips.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractStats {
    pub logs: usize,
    pub segments: usize,
    pub dropped_stops: usize,
}

/// Converts logs into dataset trips. Every segment becomes one trip whose
/// records describe the link ending at each stop.
pub fn logs_to_trips(net: &Network, logs: &[TripLog], clip_negative: bool) -> Result<(Vec<Trip>, ExtractStats)> {
    let mut trips = Vec::new();
    let mut stats = ExtractStats { logs: logs.len(), ..Default::default() };
    for log in logs {
        let route = &net.routes[log.route];
        let sched = route.sched_arrivals();
        let (segments, dropped) = extract_delays(log, net)?;
        stats.dropped_stops += dropped;
        for (n, seg) in segments.into_iter().enumerate() {
            stats.segments += 1;
            let stops = seg
                .delays
                .iter()
                .enumerate()
                .map(|(i, &d)| {
                    let link = &route.links[seg.first_stop + i - 1];
                    StopRecord {
                        s_km: link.distance_km,
                        t_sched_s: link.sched_s,
                        delay_s: if clip_negative { d.max(0.0) } else { d },
                        signal: u8::from(link.signal),
                        t_mean_s: link.mean_s,
                    }
                })
                .collect::<Vec<_>>();
            let len = stops.len();
            trips.push(Trip {
                route_id: route.id.clone(),
                trip_id: if n == 0 { log.trip_id.clone() } else { format!("{}#{n}", log.trip_id) },
                first_stop: seg.first_stop,
                stops,
                peak: u8::from(log.peak()),
                weekday: u8::from(log.weekday),
                sched_arrivals_s: sched[seg.first_stop..seg.first_stop + len].to_vec(),
            });
        }
    }
    Ok((trips, stats))
}

/// Days 0..n with days 5 and 6 of every week as weekend.
pub fn is_weekday(day: u32) -> bool {
    day % 7 < 5
}

/// Network plus the trips of `days` simulated days.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub network: Network,
    pub logs: Vec<TripLog>,
    pub trips: Vec<Trip>,
    pub stats: ExtractStats,
}

pub fn simulate(
    seed: u64,
    net_params: &NetworkParams,
    params: &SimParams,
    days: u32,
    clip_negative: bool,
) -> Result<SimOutput> {
    let network = generate_network(seed, net_params)?;
    let mut logs = Vec::new();
    for day in 0..days {
        logs.extend(simulate_day(&network, seed.wrapping_add(1), day, is_weekday(day), params)?);
    }
    let (trips, stats) = logs_to_trips(&network, &logs, clip_negative)?;
    Ok(SimOutput { network, logs, trips, stats })
}

/// Share of negative-delay stops whose next stop has a positive delay.
pub fn negative_to_positive_fraction<'a>(sequences: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    let (mut neg, mut flips) = (0usize, 0usize);
    for seq in sequences {
        for w in seq.windows(2) {
            if w[0] < 0.0 {
                neg += 1;
                flips += usize::from(w[1] > 0.0);
            }
        }
    }
    if neg == 0 {
        0.0
    } else {
        flips as f64 / neg as f64
    }
}
