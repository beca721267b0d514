use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::SimParams;
use crate::error::{Error, Result};

/// Vehicle class; sets link length and speed statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Tram,
    Bus,
}

impl Profile {
    /// Mean link distance in metres.
    pub fn mean_distance_m(self) -> f64 {
        match self {
            Profile::Tram => 470.2,
            Profile::Bus => 460.0,
        }
    }

    /// Scheduled cruising speed in m/s.
    pub fn speed_mps(self) -> f64 {
        match self {
            Profile::Tram => 6.5,
            Profile::Bus => 7.6,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tram" => Ok(Profile::Tram),
            "bus" => Ok(Profile::Bus),
            other => Err(Error::Config(format!("unknown profile `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkParams {
    pub profile: Profile,
    pub n_routes: usize,
    pub stops_per_route: usize,
    /// Share of links that get a signal placed on them.
    pub signal_fraction: f64,
    /// Links within this distance of a signal are signalised (m).
    pub signal_threshold_m: f64,
    /// Coefficient of variation of link distances.
    pub distance_cv: f64,
    /// Scheduled dwell per stop (s).
    pub dwell_s: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams {
            profile: Profile::Tram,
            n_routes: 4,
            stops_per_route: 30,
            signal_fraction: 0.3,
            signal_threshold_m: 20.0,
            distance_cv: 0.45,
            dwell_s: 20.0,
        }
    }
}

/// Spacing of the polyline points used for the signal proximity rule (m).
pub const WAYPOINT_SPACING_M: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub distance_km: f64,
    pub sched_s: f64,
    pub mean_s: f64,
    pub signal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub id: String,
    /// Stop coordinates in metres.
    pub stops: Vec<[f64; 2]>,
    /// `links[j]` runs from stop `j` to stop `j+1`.
    pub links: Vec<Link>,
}

impl Route {
    /// Evenly spaced points along link `j`, endpoints included.
    pub fn waypoints(&self, j: usize) -> Vec<[f64; 2]> {
        let (a, b) = (self.stops[j], self.stops[j + 1]);
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let n = (len / WAYPOINT_SPACING_M).ceil().max(1.0) as usize;
        (0..=n)
            .map(|i| {
                let f = i as f64 / n as f64;
                [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
            })
            .collect()
    }

    /// Scheduled arrival at every stop, seconds after departure from stop 0.
    pub fn sched_arrivals(&self) -> Vec<f64> {
        let mut acc = 0.0;
        std::iter::once(0.0)
            .chain(self.links.iter().map(|l| {
                acc += l.sched_s;
                acc
            }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub params: NetworkParams,
    pub routes: Vec<Route>,
    /// Signal positions in metres.
    pub signals: Vec<[f64; 2]>,
}

impl Network {
    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.routes.iter().flat_map(|r| &r.links)
    }

    /// Nearest signal distance to any waypoint of link `j` of `route`.
    pub fn signal_distance(&self, route: usize, j: usize) -> f64 {
        let pts = self.routes[route].waypoints(j);
        self.signals
            .iter()
            .flat_map(|s| pts.iter().map(move |p| ((p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2)).sqrt()))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn generate_network(seed: u64, params: &NetworkParams) -> Result<Network> {
    if params.n_routes == 0 || params.stops_per_route < 2 {
        return Err(Error::Config(format!(
            "need at least one route of two stops, got {} routes of {}",
            params.n_routes, params.stops_per_route
        )));
    }
    if !(0.0..=1.0).contains(&params.signal_fraction) || params.signal_threshold_m <= 0.0 {
        return Err(Error::Config("signal fraction must lie in [0,1] with a positive threshold".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = params.profile.mean_distance_m();
    let sigma2 = (1.0 + params.distance_cv.powi(2)).ln();
    let dist = LogNormal::new(mean.ln() - sigma2 / 2.0, sigma2.sqrt())
        .map_err(|e| Error::Config(format!("distance distribution: {e}")))?;
    let jitter = Normal::new(0.0, 4.0).expect("valid normal");
    let speed = params.profile.speed_mps();

    let mut routes = Vec::with_capacity(params.n_routes);
    let mut signals = Vec::new();
    for r in 0..params.n_routes {
        let mut pos = [r as f64 * 20_000.0, 0.0];
        let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
        let mut stops = vec![pos];
        let mut links = Vec::with_capacity(params.stops_per_route - 1);
        for _ in 1..params.stops_per_route {
            let d: f64 = dist.sample(&mut rng).max(80.0);
            heading += rng.random_range(-0.6..0.6);
            let next = [pos[0] + d * heading.cos(), pos[1] + d * heading.sin()];
            if rng.random_bool(params.signal_fraction) {
                let f = rng.random_range(0.25..0.75);
                let off = rng.random_range(-0.6..0.6) * params.signal_threshold_m;
                signals.push([
                    pos[0] + f * (next[0] - pos[0]) - off * heading.sin(),
                    pos[1] + f * (next[1] - pos[1]) + off * heading.cos(),
                ]);
            }
            let sched = params.dwell_s + d / speed + jitter.sample(&mut rng);
            links.push(Link {
                distance_km: d / 1000.0,
                sched_s: sched.max(params.dwell_s + 5.0),
                mean_s: 0.0,
                signal: false,
            });
            stops.push(next);
            pos = next;
        }
        routes.push(Route {
            id: format!("R{r}"),
            stops,
            links,
        });
    }
    let hist = SimParams::default();
    let mut net = Network {
        params: params.clone(),
        routes,
        signals,
    };
    for r in 0..net.routes.len() {
        for j in 0..net.routes[r].links.len() {
            let flag = net.signal_distance(r, j) <= params.signal_threshold_m;
            let link = &mut net.routes[r].links[j];
            link.signal = flag;
            link.mean_s = link.sched_s + hist.expected_increment(flag, link.distance_km) + jitter.sample(&mut rng);
        }
    }
    Ok(net)
}
