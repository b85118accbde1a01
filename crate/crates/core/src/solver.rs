//! Finite-volume time integration of the two-class model.
//!
//! Two first-order schemes are provided: local Lax-Friedrichs for the
//! nonlinear conservation law, and characteristic upwinding for the system
//! linearized about an operating point. Under strict hyperbolicity every
//! characteristic speed is negative, so information enters a segment at its
//! downstream (right) end. There the ghost state is tied to the upstream
//! trace through a boundary matrix `G`, in deviation variables:
//! `eta(right) = eta* + G (eta(left) - eta*)`. The left end is an outflow
//! boundary with zero-gradient extrapolation.
//!
//! When the geometry has routes beyond the junction, the route segment is
//! stepped with unit couplings and its inflow density fluxes are rescaled so
//! that vehicle flux is conserved across the junction.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::analysis::check_hyperbolicity;
use crate::model::{CellGrid, OperatingPoint, TrafficState, flux_with_coupling, jacobian};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    LocalLaxFriedrichs,
    UpwindLinearized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    #[default]
    GaussianBump,
    Sinusoid,
}

/// Initial deviation from the operating point on the main road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    #[serde(default)]
    pub shape: Shape,
    /// Amplitude per component `(rho1, u1, rho2, u2)`.
    pub amplitude: [f64; 4],
    /// Bump centre; defaults to the middle of the main road.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    /// Bump standard deviation, or sinusoid wavelength; defaults to 10% of the main road.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            shape: Shape::GaussianBump,
            amplitude: [0.01, 0.0, 0.01, 0.0],
            center: None,
            width: None,
        }
    }
}

impl Perturbation {
    pub fn none() -> Self {
        Self {
            amplitude: [0.0; 4],
            ..Self::default()
        }
    }

    /// Deviation at `x` for a main road `[start, end]`.
    pub fn at(&self, x: f64, start: f64, end: f64) -> [f64; 4] {
        let center = self.center.unwrap_or(0.5 * (start + end));
        let width = self.width.unwrap_or(0.1 * (end - start));
        let profile = match self.shape {
            Shape::GaussianBump => (-0.5 * ((x - center) / width).powi(2)).exp(),
            Shape::Sinusoid => (2.0 * std::f64::consts::PI * (x - center) / width).sin(),
        };
        self.amplitude.map(|a| a * profile)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub cells: usize,
    pub cfl: f64,
    pub t_end: f64,
    pub output_interval: f64,
    pub scheme: Scheme,
    pub g_b: Matrix4<f64>,
    pub g_c: Matrix4<f64>,
    pub operating_point: OperatingPoint,
    pub perturbation: Perturbation,
    /// `[A, B_end]`.
    pub domain: [f64; 2],
    /// Junction position; equal to `domain[1]` when there are no routes.
    pub junction: f64,
}

impl SolverConfig {
    /// Absorbing boundaries, a 0.01 density bump, 200 cells on `[0, 1]`, `t_end = 50`.
    pub fn new(operating_point: OperatingPoint) -> Self {
        Self {
            cells: 200,
            cfl: 0.9,
            t_end: 50.0,
            output_interval: 0.5,
            scheme: Scheme::LocalLaxFriedrichs,
            g_b: Matrix4::zeros(),
            g_c: Matrix4::zeros(),
            operating_point,
            perturbation: Perturbation::default(),
            domain: [0.0, 1.0],
            junction: 1.0,
        }
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.cells < 16 {
            out.push(format!("{prefix}.cells: must be >= 16"));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            out.push(format!("{prefix}.cfl: must lie in (0,1)"));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            out.push(format!("{prefix}.t_end: must be > 0"));
        }
        if !(self.output_interval > 0.0 && self.output_interval.is_finite()) {
            out.push(format!("{prefix}.output_interval: must be > 0"));
        }
        let op = self.operating_point;
        if op.rho1 - self.perturbation.amplitude[0].abs() <= 0.0
            || op.rho2 - self.perturbation.amplitude[2].abs() <= 0.0
        {
            out.push(format!(
                "{prefix}.perturbation.amplitude: densities must stay positive initially"
            ));
        }
        if self.perturbation.amplitude.iter().any(|a| !a.is_finite()) {
            out.push(format!("{prefix}.perturbation.amplitude: must be finite"));
        }
        if let Some(w) = self.perturbation.width {
            if !(w > 0.0) {
                out.push(format!("{prefix}.perturbation.width: must be > 0"));
            }
        }
        if self.g_b.iter().chain(self.g_c.iter()).any(|v| !v.is_finite()) {
            out.push(format!("{prefix}.boundary: matrices must be finite"));
        }
        if self.has_routes() && self.scheme == Scheme::UpwindLinearized {
            out.push(format!(
                "{prefix}.scheme: upwind-linearized supports the main road only"
            ));
        }
        out
    }

    pub fn has_routes(&self) -> bool {
        self.junction < self.domain[1]
    }

    /// Cell grids of the main road and, if present, the route segment.
    /// The junction is snapped to the nearest cell face.
    pub fn grids(&self) -> (CellGrid, Option<CellGrid>) {
        let [a, b] = self.domain;
        let dx = (b - a) / self.cells as f64;
        if !self.has_routes() {
            return (CellGrid { x_min: a, x_max: b, cells: self.cells }, None);
        }
        let main_cells = (((self.junction - a) / dx).round() as usize).clamp(1, self.cells - 1);
        let xb = a + main_cells as f64 * dx;
        (
            CellGrid { x_min: a, x_max: xb, cells: main_cells },
            Some(CellGrid { x_min: xb, x_max: b, cells: self.cells - main_cells }),
        )
    }
}

/// Ghost-state rule at the ends of a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    /// Outflow on the left; right ghost `reference + G (left trace - reference)`.
    Linear { g: Matrix4<f64>, reference: [f64; 4] },
    /// Mirror ghosts with reversed velocities; no density flux crosses either end.
    Reflecting,
}

/// Downstream ghost state from the upstream trace, in deviation variables.
pub fn apply_boundary(upstream_trace: [f64; 4], g: &Matrix4<f64>, reference: &[f64; 4]) -> [f64; 4] {
    let mut out = *reference;
    for (r, slot) in out.iter_mut().enumerate() {
        for c in 0..4 {
            *slot += g[(r, c)] * (upstream_trace[c] - reference[c]);
        }
    }
    out
}

fn mirror(s: [f64; 4]) -> [f64; 4] {
    [s[0], -s[1], s[2], -s[3]]
}

fn ghosts(cells: &[[f64; 4]], boundary: &Boundary) -> ([f64; 4], [f64; 4]) {
    let first = cells[0];
    let last = cells[cells.len() - 1];
    match boundary {
        Boundary::Linear { g, reference } => (first, apply_boundary(first, g, reference)),
        Boundary::Reflecting => (mirror(first), mirror(last)),
    }
}

/// Largest characteristic speed magnitude of one class block at a state.
fn block_speed(rho: f64, u: f64, c: f64) -> f64 {
    let trace = 2.0 * u - c * rho;
    let disc = trace * trace - 4.0 * u * u;
    if disc >= 0.0 {
        0.5 * (trace.abs() + disc.sqrt())
    } else {
        // complex pair: modulus sqrt(det) = |u|
        u.abs().max(0.5 * trace.abs())
    }
}

fn local_speed(s: &[f64; 4], c: [f64; 2]) -> f64 {
    block_speed(s[0], s[1], c[0]).max(block_speed(s[2], s[3], c[1]))
}

fn max_speed(cells: &[[f64; 4]], c: [f64; 2]) -> f64 {
    cells.iter().map(|s| local_speed(s, c)).fold(0.0, f64::max)
}

/// Local Lax-Friedrichs face fluxes, `cells.len() + 1` of them.
fn llf_faces(cells: &[[f64; 4]], left: [f64; 4], right: [f64; 4], c: [f64; 2]) -> Vec<[f64; 4]> {
    let n = cells.len();
    let state = |i: usize| -> [f64; 4] {
        if i == 0 {
            left
        } else if i == n + 1 {
            right
        } else {
            cells[i - 1]
        }
    };
    (0..=n)
        .map(|f| {
            let (l, r) = (state(f), state(f + 1));
            let (fl, fr) = (flux_with_coupling(l, c), flux_with_coupling(r, c));
            let a = local_speed(&l, c).max(local_speed(&r, c));
            std::array::from_fn(|k| 0.5 * (fl[k] + fr[k]) - 0.5 * a * (r[k] - l[k]))
        })
        .collect()
}

/// Conservative update; floors negative densities at zero and returns how many were floored.
fn apply_faces(cells: &mut [[f64; 4]], faces: &[[f64; 4]], ratio: f64) -> Result<usize> {
    let mut floored = 0;
    for (i, cell) in cells.iter_mut().enumerate() {
        for k in 0..4 {
            cell[k] -= ratio * (faces[i + 1][k] - faces[i][k]);
        }
        if cell.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { cell: i });
        }
        for k in [0, 2] {
            if cell[k] < 0.0 {
                cell[k] = 0.0;
                floored += 1;
            }
        }
    }
    Ok(floored)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: TrafficState,
    /// Density values floored at zero during the step.
    pub floored: usize,
    /// Face fluxes at the left and right ends of the segment.
    pub boundary_flux: [[f64; 4]; 2],
}

/// Largest characteristic speed over the main-road cells and their ghosts.
pub fn max_wave_speed(state: &TrafficState, alpha: f64, boundary: &Boundary) -> f64 {
    let c = [alpha, 1.0 - alpha];
    let (left, right) = ghosts(&state.cells, boundary);
    max_speed(&state.cells, c)
        .max(local_speed(&left, c))
        .max(local_speed(&right, c))
}

/// One local Lax-Friedrichs step of `eta_t + Q(eta)_x = 0` on the main road.
pub fn step_nonlinear(state: &TrafficState, dt: f64, alpha: f64, boundary: &Boundary) -> Result<StepOutcome> {
    step_segment(state, dt, [alpha, 1.0 - alpha], boundary)
}

fn step_segment(state: &TrafficState, dt: f64, c: [f64; 2], boundary: &Boundary) -> Result<StepOutcome> {
    let (left, right) = ghosts(&state.cells, boundary);
    let dx = state.grid.dx();
    let speed = max_speed(&state.cells, c)
        .max(local_speed(&left, c))
        .max(local_speed(&right, c));
    check_cfl(dt, dx, speed)?;
    let faces = llf_faces(&state.cells, left, right, c);
    let mut next = state.clone();
    let floored = apply_faces(&mut next.cells, &faces, dt / dx)?;
    Ok(StepOutcome {
        state: next,
        floored,
        boundary_flux: [faces[0], faces[faces.len() - 1]],
    })
}

fn check_cfl(dt: f64, dx: f64, speed: f64) -> Result<()> {
    let limit = if speed > 0.0 { dx / speed } else { f64::INFINITY };
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, limit });
    }
    Ok(())
}

/// Eigen-decomposition `A = R diag(l) R^{-1}` of a strictly hyperbolic 2x2 block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicBlock {
    pub speeds: [f64; 2],
    pub right: [[f64; 2]; 2],
    pub left: [[f64; 2]; 2],
}

impl CharacteristicBlock {
    pub fn new(m: [[f64; 2]; 2]) -> Result<Self> {
        let [[a, b], [c, d]] = m;
        let trace = a + d;
        let disc = (a - d) * (a - d) + 4.0 * b * c;
        if !(disc > 0.0) {
            return Err(Error::NotHyperbolic(format!(
                "block [[{a}, {b}], [{c}, {d}]] has no distinct real eigenvalues"
            )));
        }
        let s = disc.sqrt();
        let speeds = [0.5 * (trace + s), 0.5 * (trace - s)];
        let vec = |l: f64| -> [f64; 2] {
            if b.abs() >= c.abs() && b != 0.0 {
                [b, l - a]
            } else if c != 0.0 {
                [l - d, c]
            } else if (l - a).abs() <= (l - d).abs() {
                [1.0, 0.0]
            } else {
                [0.0, 1.0]
            }
        };
        let (v0, v1) = (vec(speeds[0]), vec(speeds[1]));
        // columns are eigenvectors
        let right = [[v0[0], v1[0]], [v0[1], v1[1]]];
        let det = right[0][0] * right[1][1] - right[0][1] * right[1][0];
        let left = [
            [right[1][1] / det, -right[0][1] / det],
            [-right[1][0] / det, right[0][0] / det],
        ];
        Ok(Self { speeds, right, left })
    }

    pub fn to_characteristic(&self, e: [f64; 2]) -> [f64; 2] {
        [
            self.left[0][0] * e[0] + self.left[0][1] * e[1],
            self.left[1][0] * e[0] + self.left[1][1] * e[1],
        ]
    }

    pub fn from_characteristic(&self, w: [f64; 2]) -> [f64; 2] {
        [
            self.right[0][0] * w[0] + self.right[0][1] * w[1],
            self.right[1][0] * w[0] + self.right[1][1] * w[1],
        ]
    }
}

/// Splits a block-diagonal 4x4 Jacobian into its characteristic blocks.
pub fn characteristic_blocks(jac: &Matrix4<f64>) -> Result<[CharacteristicBlock; 2]> {
    for r in 0..2 {
        for c in 2..4 {
            if jac[(r, c)] != 0.0 || jac[(c, r)] != 0.0 {
                return Err(Error::InvalidParameter(
                    "linearized stepping expects a block-diagonal Jacobian".into(),
                ));
            }
        }
    }
    let block = |o: usize| [[jac[(o, o)], jac[(o, o + 1)]], [jac[(o + 1, o)], jac[(o + 1, o + 1)]]];
    Ok([CharacteristicBlock::new(block(0))?, CharacteristicBlock::new(block(2))?])
}

/// One characteristic-upwind step of `E_t + J E_x = 0` for deviations `E = eta - eta*`.
///
/// `boundary` supplies the ghost rule; a `Linear` boundary's reference is the
/// operating point the Jacobian was evaluated at.
pub fn step_linearized(
    state: &TrafficState,
    dt: f64,
    jac: &Matrix4<f64>,
    boundary: &Boundary,
) -> Result<TrafficState> {
    let blocks = characteristic_blocks(jac)?;
    let reference = match boundary {
        Boundary::Linear { reference, .. } => *reference,
        Boundary::Reflecting => [0.0; 4],
    };
    let dx = state.grid.dx();
    let speed = blocks
        .iter()
        .flat_map(|b| b.speeds)
        .fold(0.0_f64, |m, l| m.max(l.abs()));
    check_cfl(dt, dx, speed)?;
    let ratio = dt / dx;
    let (left, right) = ghosts(&state.cells, boundary);
    let n = state.cells.len();
    let dev = |s: &[f64; 4]| -> [f64; 4] { std::array::from_fn(|k| s[k] - reference[k]) };
    let mut extended = Vec::with_capacity(n + 2);
    extended.push(dev(&left));
    extended.extend(state.cells.iter().map(dev));
    extended.push(dev(&right));

    let mut next = state.clone();
    for (b, block) in blocks.iter().enumerate() {
        let o = 2 * b;
        let w: Vec<[f64; 2]> = extended
            .iter()
            .map(|e| block.to_characteristic([e[o], e[o + 1]]))
            .collect();
        for i in 0..n {
            let j = i + 1;
            let mut wn = w[j];
            for (m, &l) in block.speeds.iter().enumerate() {
                let diff = if l < 0.0 { w[j + 1][m] - w[j][m] } else { w[j][m] - w[j - 1][m] };
                wn[m] -= ratio * l * diff;
            }
            let e = block.from_characteristic(wn);
            next.cells[i][o] = reference[o] + e[0];
            next.cells[i][o + 1] = reference[o + 1] + e[1];
        }
    }
    if let Some(i) = next.cells.iter().position(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite { cell: i });
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JunctionFlux {
    /// Class density fluxes entering the routes after correction.
    pub outgoing: [f64; 2],
    /// `alpha q1 + (1 - alpha) q2` arriving from the main road.
    pub incoming: f64,
    /// Incoming minus outgoing total before correction.
    pub residual: f64,
    /// The same after correction; zero up to rounding.
    pub corrected_residual: f64,
}

/// Rescales route-side class fluxes so their sum matches the weighted main-road flux.
pub fn couple_fluxes(main: [f64; 2], route: [f64; 2], alpha: f64) -> Result<JunctionFlux> {
    let incoming = alpha * main[0] + (1.0 - alpha) * main[1];
    let total = route[0] + route[1];
    let residual = incoming - total;
    let outgoing = if residual == 0.0 {
        route
    } else if total == 0.0 {
        if incoming == 0.0 {
            [0.0, 0.0]
        } else {
            return Err(Error::JunctionBlocked { incoming });
        }
    } else {
        let scale = incoming / total;
        let first = scale * route[0];
        // second class takes the remainder so the sum is exact
        [first, incoming - first]
    };
    Ok(JunctionFlux {
        outgoing,
        incoming,
        residual,
        corrected_residual: incoming - (outgoing[0] + outgoing[1]),
    })
}

/// Flux balance at the junction from the states on either side.
pub fn junction_flux(left: [f64; 4], right: [f64; 4], alpha: f64) -> Result<JunctionFlux> {
    couple_fluxes(
        [left[0] * left[1], left[2] * left[3]],
        [right[0] * right[1], right[2] * right[3]],
        alpha,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub main: Vec<[f64; 4]>,
    pub route: Option<Vec<[f64; 4]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub alpha: f64,
    pub main_grid: CellGrid,
    pub route_grid: Option<CellGrid>,
    pub operating_point: OperatingPoint,
    pub snapshots: Vec<Snapshot>,
    /// Per-class L2 deviation from the operating point on the main road.
    pub norms: Vec<[f64; 2]>,
    pub steps: usize,
    pub floored: usize,
    /// Largest post-correction junction residual over the run.
    pub junction_residual: f64,
    /// Smallest per-class hyperbolicity margin `c - 4u/rho` seen in any cell.
    pub min_margin: [f64; 2],
    /// First time a cell left the strictly hyperbolic region.
    pub hyperbolicity_lost_at: Option<f64>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn class_norms(&self, class: usize) -> Vec<f64> {
        self.norms.iter().map(|n| n[class]).collect()
    }

    pub fn states_csv(&self) -> String {
        let mut out = String::from("t,x,rho1,u1,rho2,u2\n");
        for snap in &self.snapshots {
            let main = snap
                .main
                .iter()
                .enumerate()
                .map(|(i, s)| (self.main_grid.center(i), s));
            let route = snap.route.iter().flat_map(|cells| {
                let grid = self.route_grid.expect("route grid");
                cells.iter().enumerate().map(move |(i, s)| (grid.center(i), s))
            });
            for (x, s) in main.chain(route) {
                out.push_str(&format!("{},{},{},{},{},{}\n", snap.t, x, s[0], s[1], s[2], s[3]));
            }
        }
        out
    }

    pub fn norms_csv(&self) -> String {
        let mut out = String::from("t,norm_class1,norm_class2\n");
        for (snap, n) in self.snapshots.iter().zip(&self.norms) {
            out.push_str(&format!("{},{},{}\n", snap.t, n[0], n[1]));
        }
        out
    }
}

/// Smallest per-class margin `c - 4u/rho` over the cells; a cell is strictly
/// hyperbolic when both are positive. Vacuum cells count as `-inf`.
pub fn local_margins(cells: &[[f64; 4]], c: [f64; 2]) -> [f64; 2] {
    let margin = |rho: f64, u: f64, c: f64| if rho > 0.0 { c - 4.0 * u / rho } else { f64::NEG_INFINITY };
    cells.iter().fold([f64::INFINITY; 2], |m, s| {
        [m[0].min(margin(s[0], s[1], c[0])), m[1].min(margin(s[2], s[3], c[1]))]
    })
}

/// Per-class L2 norms of `cells - reference`.
pub fn deviation_norms(cells: &[[f64; 4]], reference: &[f64; 4], dx: f64) -> [f64; 2] {
    let mut sums = [0.0; 2];
    for c in cells {
        sums[0] += (c[0] - reference[0]).powi(2) + (c[1] - reference[1]).powi(2);
        sums[1] += (c[2] - reference[2]).powi(2) + (c[3] - reference[3]).powi(2);
    }
    sums.map(|s| (s * dx).sqrt())
}

/// Initial state: the operating point plus the configured perturbation on the main road.
pub fn initial_state(config: &SolverConfig) -> (TrafficState, Option<TrafficState>) {
    let (main_grid, route_grid) = config.grids();
    let reference = config.operating_point.as_array();
    let cells = (0..main_grid.cells)
        .map(|i| {
            let d = config
                .perturbation
                .at(main_grid.center(i), main_grid.x_min, main_grid.x_max);
            std::array::from_fn(|k| reference[k] + d[k])
        })
        .collect();
    let main = TrafficState { grid: main_grid, cells };
    let route = route_grid.map(|g| TrafficState::uniform(g, reference));
    (main, route)
}

/// Integrates the configured scenario to `t_end`.
pub fn run_simulation(config: &SolverConfig, alpha: f64) -> Result<Trajectory> {
    let problems = config.violations("solver");
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} must lie in (0,1)")));
    }
    let op = config.operating_point;
    let reference = op.as_array();
    let mut warnings = Vec::new();
    let h = check_hyperbolicity(&op, alpha);
    if !h.hyperbolic {
        warnings.push(format!(
            "operating point is not strictly hyperbolic at alpha = {alpha} (margins {:.6}, {:.6})",
            h.margins[0], h.margins[1]
        ));
    }

    let (mut main, mut route) = initial_state(config);
    let route_c = [1.0, 1.0];
    let main_bc = Boundary::Linear { g: config.g_b, reference };
    let route_bc = Boundary::Linear { g: config.g_c, reference };
    let jac = jacobian(&op, alpha);
    let linear_speed = match config.scheme {
        Scheme::UpwindLinearized => Some(
            characteristic_blocks(&jac)?
                .iter()
                .flat_map(|b| b.speeds)
                .fold(0.0_f64, |m, l| m.max(l.abs())),
        ),
        Scheme::LocalLaxFriedrichs => None,
    };
    let dx = main.grid.dx();

    let mut snapshots = vec![Snapshot { t: 0.0, main: main.cells.clone(), route: route.as_ref().map(|r| r.cells.clone()) }];
    let mut norms = vec![deviation_norms(&main.cells, &reference, dx)];
    let mut t = 0.0;
    let mut next_output = config.output_interval.min(config.t_end);
    let mut steps = 0;
    let mut floored = 0;
    let mut junction_residual: f64 = 0.0;
    let nonlinear = config.scheme == Scheme::LocalLaxFriedrichs;
    let margins_now = |main: &TrafficState, route: &Option<TrafficState>| {
        let m = local_margins(&main.cells, [alpha, 1.0 - alpha]);
        match route {
            Some(r) => {
                let q = local_margins(&r.cells, [1.0, 1.0]);
                [m[0].min(q[0]), m[1].min(q[1])]
            }
            None => m,
        }
    };
    let mut min_margin = if nonlinear { margins_now(&main, &route) } else { h.margins };
    let mut hyperbolicity_lost_at = None;

    while t < config.t_end {
        let speed = match linear_speed {
            Some(s) => s,
            None => {
                let mut s = max_wave_speed(&main, alpha, &main_bc);
                if let Some(r) = &route {
                    s = s.max(max_speed(&r.cells, route_c));
                }
                s
            }
        };
        let mut dt = if speed > 0.0 { config.cfl * dx / speed } else { config.output_interval };
        let mut hit_output = false;
        if t + dt >= next_output {
            dt = next_output - t;
            hit_output = true;
        }
        if dt <= 0.0 {
            break;
        }

        match config.scheme {
            Scheme::UpwindLinearized => {
                main = step_linearized(&main, dt, &jac, &main_bc)?;
            }
            Scheme::LocalLaxFriedrichs => match route.as_mut() {
                None => {
                    let out = step_nonlinear(&main, dt, alpha, &main_bc)?;
                    floored += out.floored;
                    main = out.state;
                }
                Some(r) => {
                    let (m_next, r_next, fl, resid) =
                        step_network(&main, r, dt, alpha, &main_bc, &route_bc)?;
                    floored += fl;
                    junction_residual = junction_residual.max(resid.abs());
                    main = m_next;
                    *r = r_next;
                }
            },
        }
        steps += 1;
        t = if hit_output { next_output } else { t + dt };
        if nonlinear {
            let m = margins_now(&main, &route);
            min_margin = [min_margin[0].min(m[0]), min_margin[1].min(m[1])];
            if hyperbolicity_lost_at.is_none() && (m[0] <= 0.0 || m[1] <= 0.0) {
                hyperbolicity_lost_at = Some(t);
            }
        }

        if hit_output {
            snapshots.push(Snapshot { t, main: main.cells.clone(), route: route.as_ref().map(|r| r.cells.clone()) });
            norms.push(deviation_norms(&main.cells, &reference, dx));
            if next_output >= config.t_end {
                break;
            }
            next_output = (next_output + config.output_interval).min(config.t_end);
        }
    }

    if let (true, Some(at)) = (h.hyperbolic, hyperbolicity_lost_at) {
        warnings.push(format!(
            "state left the strictly hyperbolic region at t = {at:.3} (min margins {:.4}, {:.4}); \
             results there depend on numerical diffusion and may not converge under refinement",
            min_margin[0], min_margin[1]
        ));
    }

    Ok(Trajectory {
        alpha,
        main_grid: main.grid,
        route_grid: route.as_ref().map(|r| r.grid),
        operating_point: op,
        snapshots,
        norms,
        steps,
        floored,
        junction_residual,
        min_margin,
        hyperbolicity_lost_at,
        warnings,
    })
}

/// One step of the main road and route segment coupled at the junction.
fn step_network(
    main: &TrafficState,
    route: &TrafficState,
    dt: f64,
    alpha: f64,
    main_bc: &Boundary,
    route_bc: &Boundary,
) -> Result<(TrafficState, TrafficState, usize, f64)> {
    let main_c = [alpha, 1.0 - alpha];
    let route_c = [1.0, 1.0];
    let dx = main.grid.dx();
    let speed = max_wave_speed(main, alpha, main_bc).max(max_speed(&route.cells, route_c));
    check_cfl(dt, dx, speed)?;

    let (ml, mr) = ghosts(&main.cells, main_bc);
    let main_faces = llf_faces(&main.cells, ml, mr, main_c);

    // route: its own right-end rule, zero-gradient at the junction side
    let (_, rr) = ghosts(&route.cells, route_bc);
    let mut route_faces = llf_faces(&route.cells, route.cells[0], rr, route_c);
    let at_junction = main_faces[main_faces.len() - 1];
    let coupled = couple_fluxes(
        [at_junction[0], at_junction[2]],
        [route_faces[0][0], route_faces[0][2]],
        alpha,
    )?;
    route_faces[0][0] = coupled.outgoing[0];
    route_faces[0][2] = coupled.outgoing[1];

    let mut m_next = main.clone();
    let mut r_next = route.clone();
    let mut floored = apply_faces(&mut m_next.cells, &main_faces, dt / dx)?;
    floored += apply_faces(&mut r_next.cells, &route_faces, dt / route.grid.dx())?;
    Ok((m_next, r_next, floored, coupled.corrected_residual))
}
