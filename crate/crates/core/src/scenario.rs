//! JSON scenario files.
//!
//! A scenario supplies the class split either directly (`alpha`) or through
//! a social route-choice experiment (`social`), never both. Everything else
//! describes the road geometry, the operating point, the solver and the
//! analysis settings.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::analysis::{DEFAULT_MU_POINTS, DEFAULT_NOISE_FLOOR, DEFAULT_TAIL_FRACTION, default_mu_grid};
use crate::model::{ModelParams, OperatingPoint};
use crate::route_choice::{RouteChoiceOutcome, SocialScenario, choose_routes};
use crate::solver::{Perturbation, Scheme, SolverConfig};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub social: Option<SocialScenario>,
    /// Class split used directly instead of a route-choice experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub geometry: Geometry,
    pub operating_point: OperatingPoint,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    /// Upstream end `A` and far end of the routes.
    pub domain: [f64; 2],
    /// Junction position; omitted or equal to `domain[1]` for the main road alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub junction: Option<f64>,
}

impl Default for Geometry {
    fn default() -> Self {
        Self { domain: [0.0, 1.0], junction: None }
    }
}

impl Geometry {
    pub fn junction(&self) -> f64 {
        self.junction.unwrap_or(self.domain[1])
    }
}

/// A boundary matrix given either as a multiple of the identity or in full.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundaryMatrix {
    Scalar(f64),
    Full([[f64; 4]; 4]),
}

impl Default for BoundaryMatrix {
    fn default() -> Self {
        BoundaryMatrix::Scalar(0.0)
    }
}

impl BoundaryMatrix {
    pub fn matrix(&self) -> Matrix4<f64> {
        match self {
            BoundaryMatrix::Scalar(s) => Matrix4::identity() * *s,
            BoundaryMatrix::Full(rows) => Matrix4::from_fn(|r, c| rows[r][c]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub cells: usize,
    pub cfl: f64,
    pub t_end: f64,
    pub output_interval: f64,
    pub scheme: Scheme,
    pub g_b: BoundaryMatrix,
    pub g_c: BoundaryMatrix,
    pub perturbation: Perturbation,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            cells: 200,
            cfl: 0.9,
            t_end: 50.0,
            output_interval: 0.5,
            scheme: Scheme::LocalLaxFriedrichs,
            g_b: BoundaryMatrix::default(),
            g_c: BoundaryMatrix::default(),
            perturbation: Perturbation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSettings {
    pub mu_points: usize,
    pub tail_fraction: f64,
    pub noise_floor: f64,
    /// Class splits for a sweep; empty means the scenario's own split only.
    pub sweep: Vec<f64>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            mu_points: DEFAULT_MU_POINTS,
            tail_fraction: DEFAULT_TAIL_FRACTION,
            noise_floor: DEFAULT_NOISE_FLOOR,
            sweep: Vec::new(),
        }
    }
}

impl AnalysisSettings {
    pub fn mu_grid(&self) -> Vec<f64> {
        default_mu_grid(self.mu_points)
    }
}

/// Which optional artifacts to write.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub states: bool,
    pub norms: bool,
    pub vehicles: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Self { states: true, norms: true, vehicles: true }
    }
}

/// The class split and, when it came from a route-choice experiment, its outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedAlpha {
    pub alpha: f64,
    pub choice: Option<RouteChoiceOutcome>,
}

impl Scenario {
    /// Parses and validates a scenario.
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Every violated constraint, each prefixed with its field path.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema != SCHEMA_VERSION {
            out.push(format!("schema: expected {SCHEMA_VERSION}, found {}", self.schema));
        }
        if self.name.is_empty()
            || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            out.push("name: must be non-empty and contain only [A-Za-z0-9_-]".into());
        }
        match (&self.social, self.alpha) {
            (Some(_), Some(_)) => out.push("alpha: give either alpha or social, not both".into()),
            (None, None) => out.push("alpha: one of alpha or social is required".into()),
            (Some(s), None) => out.extend(s.violations("social")),
            (None, Some(a)) => {
                if !(a > 0.0 && a < 1.0) {
                    out.push("alpha: alpha must lie in (0,1)".into());
                }
            }
        }
        // alpha itself is checked above; use a placeholder for the geometry checks
        let geometry = ModelParams {
            alpha: 0.5,
            domain: self.geometry.domain,
            junction: self.geometry.junction(),
        };
        out.extend(geometry.violations("geometry"));
        out.extend(self.operating_point.violations("operating_point"));
        if self.operating_point.violations("operating_point").is_empty() {
            out.extend(self.solver_config().violations("solver"));
        }
        let a = &self.analysis;
        if a.mu_points < 2 {
            out.push("analysis.mu_points: must be >= 2".into());
        }
        if !(a.tail_fraction > 0.0 && a.tail_fraction <= 1.0) {
            out.push("analysis.tail_fraction: must lie in (0,1]".into());
        }
        if !(a.noise_floor >= 0.0 && a.noise_floor < 1.0) {
            out.push("analysis.noise_floor: must lie in [0,1)".into());
        }
        for (i, v) in a.sweep.iter().enumerate() {
            if !(*v > 0.0 && *v < 1.0) {
                out.push(format!("analysis.sweep[{i}]: alpha must lie in (0,1)"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() { Ok(()) } else { Err(Error::Validation(v)) }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            cells: s.cells,
            cfl: s.cfl,
            t_end: s.t_end,
            output_interval: s.output_interval,
            scheme: s.scheme,
            g_b: s.g_b.matrix(),
            g_c: s.g_c.matrix(),
            operating_point: self.operating_point,
            perturbation: s.perturbation,
            domain: self.geometry.domain,
            junction: self.geometry.junction(),
        }
    }

    /// Main road `[A, x_B]`.
    pub fn main_road(&self) -> [f64; 2] {
        [self.geometry.domain[0], self.geometry.junction()]
    }

    /// The class split: given directly, or from the route-choice experiment seeded by `seed`.
    pub fn resolve_alpha(&self) -> Result<ResolvedAlpha> {
        match (&self.social, self.alpha) {
            (None, Some(alpha)) => Ok(ResolvedAlpha { alpha, choice: None }),
            (Some(social), None) => {
                let mut social = social.clone();
                social.rng_seed = self.seed;
                let outcome = choose_routes(&social)?;
                Ok(ResolvedAlpha { alpha: outcome.alpha, choice: Some(outcome) })
            }
            _ => Err(Error::Validation(self.violations())),
        }
    }

    /// The same scenario with a directly specified split.
    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self { alpha: Some(alpha), social: None, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "schema": 1,
  "name": "minimal",
  "alpha": 0.45,
  "operating_point": { "rho1": 0.85, "u1": 0.09, "rho2": 0.75, "u2": 0.095 }
}"#;

    const SOCIAL: &str = r#"{
  "schema": 1,
  "name": "social",
  "seed": 7,
  "social": {
    "num_vehicles": 200,
    "samples_per_vehicle": 64,
    "k1": 1.0,
    "routes": [
      { "alerts": [{ "trust": 0.8, "signal": 1 }], "travel_time": { "mean": 1.0, "std": 0.2, "lower": 0.0, "upper": 2.0 }, "k2": 1.0 },
      { "alerts": [{ "trust": 0.8, "signal": 1 }], "travel_time": { "mean": 1.0, "std": 0.2, "lower": 0.0, "upper": 2.0 }, "k2": 1.0 }
    ],
    "cpt": { "reference": 0.0, "beta_plus": 0.88, "beta_minus": 0.88, "lambda": 2.25, "gamma": 0.61, "phi": 1.0 }
  },
  "operating_point": { "rho1": 0.85, "u1": 0.06, "rho2": 0.75, "u2": 0.07 }
}"#;

    #[test]
    fn defaults_fill_in() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.solver, SolverSettings::default());
        assert_eq!(s.geometry.junction(), 1.0);
        let cfg = s.solver_config();
        assert_eq!(cfg.cells, 200);
        assert_eq!(cfg.g_b, Matrix4::zeros());
        assert_eq!(s.resolve_alpha().unwrap().alpha, 0.45);
    }

    #[test]
    fn round_trip() {
        let mut s = Scenario::from_json(MINIMAL).unwrap();
        s.solver.g_b = BoundaryMatrix::Full([[0.1, 0.0, 0.0, 0.2], [0.0; 4], [0.0; 4], [0.0, 0.0, 0.3, 0.0]]);
        s.analysis.sweep = vec![0.35, 0.45];
        s.geometry.junction = Some(0.8);
        s.geometry.domain = [0.0, 1.6];
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let social = Scenario::from_json(SOCIAL).unwrap();
        assert_eq!(Scenario::from_json(&social.to_json()).unwrap(), social);
    }

    #[test]
    fn scalar_boundary_matrix() {
        let text = MINIMAL.replace("\"alpha\": 0.45,", "\"alpha\": 0.45, \"solver\": { \"g_b\": 0.5 },");
        let s = Scenario::from_json(&text).unwrap();
        assert_eq!(s.solver_config().g_b, Matrix4::identity() * 0.5);
    }

    #[test]
    fn social_split_is_seeded() {
        let s = Scenario::from_json(SOCIAL).unwrap();
        let a = s.resolve_alpha().unwrap();
        let b = s.resolve_alpha().unwrap();
        assert_eq!(a, b);
        let outcome = a.choice.unwrap();
        assert_eq!(outcome.m1 + outcome.m2, 200);
    }

    #[test]
    fn parse_errors_carry_position() {
        let text = MINIMAL.replace("\"alpha\"", "\"alpah\"");
        match Scenario::from_json(&text) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 4);
                assert!(column > 0);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(Scenario::from_json("{"), Err(Error::Parse { .. })));
    }

    #[test]
    fn validation_lists_every_problem() {
        let text = MINIMAL
            .replace("\"alpha\": 0.45", "\"alpha\": 1.5")
            .replace("\"u1\": 0.09", "\"u1\": -0.09")
            .replace("\"schema\": 1", "\"schema\": 2");
        match Scenario::from_json(&text) {
            Err(Error::Validation(v)) => {
                assert!(v.iter().any(|m| m.starts_with("schema")), "{v:?}");
                assert!(v.iter().any(|m| m == "alpha: alpha must lie in (0,1)"), "{v:?}");
                assert!(v.iter().any(|m| m.starts_with("operating_point.u1")), "{v:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exactly_one_source_of_alpha() {
        let both = SOCIAL.replace("\"seed\": 7,", "\"seed\": 7, \"alpha\": 0.4,");
        assert!(matches!(Scenario::from_json(&both), Err(Error::Validation(_))));
        let neither = MINIMAL.replace("\"alpha\": 0.45,", "");
        assert!(matches!(Scenario::from_json(&neither), Err(Error::Validation(_))));
    }
}
