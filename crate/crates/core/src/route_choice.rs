//! Route choice: per-vehicle CPT valuation of two routes, logit choice
//! probabilities, and aggregation into the class split `alpha`.
//!
//! Each route's utility is `Z = sum(a_i S_i) + k1 T + k2` where the alert
//! signals `S_i` are shared by every vehicle and `T` is a truncated-normal
//! travel time. Vehicles differ only through their own travel-time draws;
//! vehicle `k` draws from ChaCha stream `k` of the scenario seed, so the
//! outcome does not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cpt::{CptParams, cpt_value_empirical};
use crate::{Error, Result};

pub const DEFAULT_SAMPLES_PER_VEHICLE: usize = 256;

/// Stream reserved for drawing Poisson-driven alert signals.
const ALERT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    One,
    Two,
}

impl Route {
    pub fn index(self) -> usize {
        match self {
            Route::One => 0,
            Route::Two => 1,
        }
    }
}

/// One traffic alert. Either a fixed binary `signal`, or a Poisson arrival
/// `rate` over a unit window, in which case the signal is 1 with probability
/// `1 - exp(-rate)` (at least one arrival).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alert {
    pub trust: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormal {
    /// Inverse-CDF draw restricted to `[lower, upper]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let lo = normal.cdf((self.lower - self.mean) / self.std);
        let hi = normal.cdf((self.upper - self.mean) / self.std);
        let u: f64 = rng.gen();
        let q = lo + u * (hi - lo);
        let z = if q <= 0.0 || q >= 1.0 || hi <= lo {
            // bounds sit far in one tail; the draw is pinned to the nearer bound
            if self.mean < self.lower { f64::NEG_INFINITY } else { f64::INFINITY }
        } else {
            normal.inverse_cdf(q)
        };
        (self.mean + self.std * z).clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    #[serde(default)]
    pub alerts: Vec<Alert>,
    pub travel_time: TruncatedNormal,
    pub k2: f64,
}

/// The social-signal vector for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocialScenario {
    pub num_vehicles: usize,
    #[serde(default = "default_samples")]
    pub samples_per_vehicle: usize,
    pub k1: f64,
    pub routes: [RouteSpec; 2],
    pub cpt: CptParams,
    #[serde(skip)]
    pub rng_seed: u64,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES_PER_VEHICLE
}

impl SocialScenario {
    /// Every violated constraint as `path: message`, paths relative to `prefix`.
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_vehicles < 2 {
            out.push(format!("{prefix}.num_vehicles: must be >= 2"));
        }
        if self.samples_per_vehicle < 1 {
            out.push(format!("{prefix}.samples_per_vehicle: must be >= 1"));
        }
        if !self.k1.is_finite() {
            out.push(format!("{prefix}.k1: must be finite"));
        }
        for (r, spec) in self.routes.iter().enumerate() {
            let path = format!("{prefix}.routes[{r}]");
            let tt = &spec.travel_time;
            if !(tt.std > 0.0 && tt.std.is_finite()) {
                out.push(format!("{path}.travel_time.std: must be > 0"));
            }
            if !(tt.lower < tt.upper) {
                out.push(format!("{path}.travel_time: lower must be < upper"));
            }
            if !tt.mean.is_finite() {
                out.push(format!("{path}.travel_time.mean: must be finite"));
            }
            if !spec.k2.is_finite() {
                out.push(format!("{path}.k2: must be finite"));
            }
            for (i, alert) in spec.alerts.iter().enumerate() {
                let apath = format!("{path}.alerts[{i}]");
                match (alert.signal, alert.rate) {
                    (Some(s), None) if s > 1 => {
                        out.push(format!("{apath}.signal: must be 0 or 1"))
                    }
                    (None, Some(r)) if !(r >= 0.0 && r.is_finite()) => {
                        out.push(format!("{apath}.rate: must be >= 0"))
                    }
                    (Some(_), None) | (None, Some(_)) => {}
                    _ => out.push(format!("{apath}: exactly one of signal, rate is required")),
                }
                if !alert.trust.is_finite() {
                    out.push(format!("{apath}.trust: must be finite"));
                }
            }
        }
        out.extend(
            self.cpt
                .violations()
                .into_iter()
                .map(|v| format!("{prefix}.cpt.{v}")),
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations("social");
        if v.is_empty() { Ok(()) } else { Err(Error::Validation(v)) }
    }

    /// Binary alert signals per route. Rate-driven alerts are drawn once per
    /// scenario from a dedicated stream of the seed.
    pub fn resolved_signals(&self) -> [Vec<u8>; 2] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(ALERT_STREAM);
        let mut resolve = |spec: &RouteSpec| -> Vec<u8> {
            spec.alerts
                .iter()
                .map(|a| match (a.signal, a.rate) {
                    (Some(s), _) => s,
                    (None, Some(rate)) => u8::from(rng.gen::<f64>() < 1.0 - (-rate).exp()),
                    (None, None) => 0,
                })
                .collect()
        };
        let first = resolve(&self.routes[0]);
        let second = resolve(&self.routes[1]);
        [first, second]
    }

    /// The utility law of one route with its alert term fixed.
    pub fn utility_law(&self, route: Route) -> UtilityLaw {
        let signals = self.resolved_signals();
        self.law_with_signals(route, &signals[route.index()])
    }

    fn law_with_signals(&self, route: Route, signals: &[u8]) -> UtilityLaw {
        let spec = &self.routes[route.index()];
        let alert_term = spec
            .alerts
            .iter()
            .zip(signals)
            .map(|(a, &s)| a.trust * f64::from(s))
            .sum();
        UtilityLaw {
            alert_term,
            k1: self.k1,
            k2: spec.k2,
            travel_time: spec.travel_time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityLaw {
    pub alert_term: f64,
    pub k1: f64,
    pub k2: f64,
    pub travel_time: TruncatedNormal,
}

impl UtilityLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.alert_term + self.k1 * self.travel_time.sample(rng) + self.k2
    }
}

/// One draw of the utility of `route`.
pub fn sample_route_utility<R: Rng + ?Sized>(
    scenario: &SocialScenario,
    route: Route,
    rng: &mut R,
) -> f64 {
    scenario.utility_law(route).sample(rng)
}

/// Logit choice probabilities `(p1, p2)`.
pub fn route_probabilities(u1: f64, u2: f64, phi: f64) -> (f64, f64) {
    let p1 = 1.0 / (1.0 + (phi * (u2 - u1)).exp());
    let p2 = 1.0 / (1.0 + (phi * (u1 - u2)).exp());
    (p1, p2)
}

/// Fraction of vehicles on route 1.
pub fn compute_alpha(m1: usize, m2: usize) -> Result<f64> {
    if m1 == 0 || m2 == 0 {
        return Err(Error::DegenerateSplit { m1, m2 });
    }
    Ok(m1 as f64 / (m1 + m2) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleChoice {
    pub cpt_values: [f64; 2],
    pub probabilities: [f64; 2],
    pub route: Route,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteChoiceOutcome {
    pub m1: usize,
    pub m2: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub vehicles: Vec<VehicleChoice>,
}

/// Per-vehicle choices without the degenerate-split check.
pub fn vehicle_choices(scenario: &SocialScenario) -> Result<Vec<VehicleChoice>> {
    scenario.validate()?;
    let signals = scenario.resolved_signals();
    let laws = [
        scenario.law_with_signals(Route::One, &signals[0]),
        scenario.law_with_signals(Route::Two, &signals[1]),
    ];
    let n = scenario.samples_per_vehicle;
    let mut buf = vec![0.0; n];
    let mut out = Vec::with_capacity(scenario.num_vehicles);
    for k in 0..scenario.num_vehicles {
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);
        rng.set_stream(k as u64);
        let mut values = [0.0; 2];
        for (value, law) in values.iter_mut().zip(&laws) {
            for slot in buf.iter_mut() {
                *slot = law.sample(&mut rng);
            }
            *value = cpt_value_empirical(&buf, &scenario.cpt)?;
        }
        let (p1, p2) = route_probabilities(values[0], values[1], scenario.cpt.phi);
        // ties go to route 1
        let route = if p1 >= p2 { Route::One } else { Route::Two };
        out.push(VehicleChoice {
            cpt_values: values,
            probabilities: [p1, p2],
            route,
        });
    }
    Ok(out)
}

/// Assigns every vehicle to its most probable route and returns the split.
pub fn choose_routes(scenario: &SocialScenario) -> Result<RouteChoiceOutcome> {
    let vehicles = vehicle_choices(scenario)?;
    let m1 = vehicles.iter().filter(|v| v.route == Route::One).count();
    let m2 = vehicles.len() - m1;
    let alpha = compute_alpha(m1, m2)?;
    Ok(RouteChoiceOutcome {
        m1,
        m2,
        alpha,
        kappa: alpha / (1.0 - alpha),
        vehicles,
    })
}
