//! Macroscopic model: driving-cost functionals, their convex conjugate,
//! the resulting velocity law, the conservation-law flux and its Jacobian.
//!
//! All quantities are normalized: free-flow velocity 1 and jam density 1.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Starting penalty added to the optimal cost. Fixed at zero.
pub const STARTING_PENALTY: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    /// Shared road upstream of the junction.
    Main,
    /// Class-specific route downstream of the junction.
    Route,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    One,
    Two,
}

/// Weight of a class's own density in its cost, `c` in `u^2/2 - u + c u rho`.
pub fn coupling(class: Class, region: Region, alpha: f64) -> f64 {
    match (region, class) {
        (Region::Route, _) => 1.0,
        (Region::Main, Class::One) => alpha,
        (Region::Main, Class::Two) => 1.0 - alpha,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub alpha: f64,
    /// Upstream end `A` and far end of the routes.
    pub domain: [f64; 2],
    /// Junction position `x_B`. Equal to `domain[1]` when only the main
    /// road is modelled.
    pub junction: f64,
}

impl ModelParams {
    pub fn main_only(alpha: f64, start: f64, end: f64) -> Self {
        Self {
            alpha,
            domain: [start, end],
            junction: end,
        }
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            out.push(format!("{prefix}.alpha: alpha must lie in (0,1)"));
        }
        let [a, b] = self.domain;
        if !(a.is_finite() && b.is_finite() && self.junction.is_finite()) {
            out.push(format!("{prefix}.domain: must be finite"));
        } else if !(a < self.junction && self.junction <= b) {
            out.push(format!("{prefix}.junction: need domain[0] < junction <= domain[1]"));
        }
        out
    }

    /// The region indicator: main road on `[A, x_B)`, routes beyond.
    pub fn region(&self, x: f64) -> Region {
        if x < self.junction { Region::Main } else { Region::Route }
    }

    pub fn has_routes(&self) -> bool {
        self.junction < self.domain[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingPoint {
    pub rho1: f64,
    pub u1: f64,
    pub rho2: f64,
    pub u2: f64,
}

impl OperatingPoint {
    pub fn new(rho1: f64, u1: f64, rho2: f64, u2: f64) -> Result<Self> {
        let op = Self { rho1, u1, rho2, u2 };
        let v = op.violations("operating_point");
        if v.is_empty() {
            Ok(op)
        } else {
            Err(Error::InvalidParameter(v.join("; ")))
        }
    }

    pub fn violations(&self, prefix: &str) -> Vec<String> {
        [("rho1", self.rho1), ("u1", self.u1), ("rho2", self.rho2), ("u2", self.u2)]
            .into_iter()
            .filter(|(_, v)| !(*v > 0.0 && v.is_finite()))
            .map(|(name, _)| format!("{prefix}.{name}: must be > 0"))
            .collect()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.rho1, self.u1, self.rho2, self.u2]
    }
}

/// Uniform cell-centred grid on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub cells: usize,
}

impl CellGrid {
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }
}

/// Discretized `eta = (rho1, u1, rho2, u2)` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficState {
    pub grid: CellGrid,
    pub cells: Vec<[f64; 4]>,
}

impl TrafficState {
    pub fn uniform(grid: CellGrid, value: [f64; 4]) -> Self {
        Self {
            grid,
            cells: vec![value; grid.cells],
        }
    }

    pub fn component(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.cells.iter().map(move |c| c[k])
    }

    /// `sum_i q_i dx` for component `k`.
    pub fn total(&self, k: usize) -> f64 {
        self.component(k).sum::<f64>() * self.grid.dx()
    }
}

/// Spatial gradient of each class's optimal cost, per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CostGradientField {
    pub dh1dx: Vec<f64>,
    pub dh2dx: Vec<f64>,
}

impl CostGradientField {
    /// The equilibrium field.
    pub fn zero(cells: usize) -> Self {
        Self {
            dh1dx: vec![0.0; cells],
            dh2dx: vec![0.0; cells],
        }
    }

    /// Optimal velocities of both classes given per-cell densities on the main road.
    pub fn velocities(&self, rho1: &[f64], rho2: &[f64], alpha: f64) -> (Vec<f64>, Vec<f64>) {
        let u1 = self
            .dh1dx
            .iter()
            .zip(rho1)
            .map(|(g, r)| optimal_velocity(*g, alpha * r))
            .collect();
        let u2 = self
            .dh2dx
            .iter()
            .zip(rho2)
            .map(|(g, r)| optimal_velocity(*g, (1.0 - alpha) * r))
            .collect();
        (u1, u2)
    }
}

/// Driving cost of one class: kinetic energy, efficiency and a safety term
/// in the class's own density.
pub fn cost_functional(u: f64, rho_own: f64, alpha: f64, class: Class, region: Region) -> f64 {
    0.5 * u * u - u + coupling(class, region, alpha) * u * rho_own
}

/// A convex cost in one variable. `slope` defaults to a central difference.
pub trait ConvexCost {
    fn value(&self, u: f64) -> f64;

    fn slope(&self, u: f64) -> f64 {
        let h = 1e-6 * u.abs().max(1.0);
        (self.value(u + h) - self.value(u - h)) / (2.0 * h)
    }
}

impl<F: Fn(f64) -> f64> ConvexCost for F {
    fn value(&self, u: f64) -> f64 {
        self(u)
    }
}

/// `u^2/2 - u + c_rho u`, with `c_rho` the weighted own density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCost {
    pub c_rho: f64,
}

impl ConvexCost for QuadraticCost {
    fn value(&self, u: f64) -> f64 {
        0.5 * u * u - u + self.c_rho * u
    }

    fn slope(&self, u: f64) -> f64 {
        u - 1.0 + self.c_rho
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conjugate {
    pub value: f64,
    pub minimizer: f64,
}

const BRACKET_LIMIT: f64 = 1e12;

/// `min_u { cost(u) - u p }` over the real line, and its minimizer.
///
/// The minimizer is the root of `cost'(u) - p`, bracketed by doubling and
/// refined by bisection. A slope that decreases anywhere along the way means
/// the cost is not convex; a slope that never reaches `p` means the
/// conjugate is unbounded below.
pub fn legendre_fenchel<C: ConvexCost + ?Sized>(cost: &C, p: f64) -> Result<Conjugate> {
    let g = |u: f64| cost.slope(u) - p;
    let nonconvex = |a: f64, b: f64| {
        Error::NonConvex(format!("slope decreases between u = {a} and u = {b}"))
    };

    let (mut lo, mut hi) = (-1.0, 1.0);
    let (mut g_lo, mut g_hi) = (g(lo), g(hi));
    if g_lo > g_hi {
        return Err(nonconvex(lo, hi));
    }
    while g_hi < 0.0 {
        let next = hi * 2.0;
        if next > BRACKET_LIMIT {
            return Err(Error::Unbounded(p));
        }
        let g_next = g(next);
        if g_next < g_hi {
            return Err(nonconvex(hi, next));
        }
        lo = hi;
        g_lo = g_hi;
        hi = next;
        g_hi = g_next;
    }
    while g_lo > 0.0 {
        let next = lo * 2.0;
        if next < -BRACKET_LIMIT {
            return Err(Error::Unbounded(p));
        }
        let g_next = g(next);
        if g_next > g_lo {
            return Err(nonconvex(next, lo));
        }
        hi = lo;
        g_hi = g_lo;
        lo = next;
        g_lo = g_next;
    }

    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g_mid = g(mid);
        if g_mid < g_lo || g_mid > g_hi {
            return Err(nonconvex(lo, hi));
        }
        if g_mid < 0.0 {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
            g_hi = g_mid;
        }
        if hi - lo <= 1e-14 * mid.abs().max(1.0) {
            break;
        }
    }
    let u = 0.5 * (lo + hi);
    Ok(Conjugate {
        value: cost.value(u) - u * p,
        minimizer: u,
    })
}

/// Velocity law `u = 1 + dH/dx - d`, clamped to `[0, 1 + dH/dx]`.
pub fn optimal_velocity(dhdx: f64, d: f64) -> f64 {
    let u_max = 1.0 + dhdx;
    (u_max - d).clamp(0.0, u_max.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdRow {
    pub dhdx: f64,
    pub d: f64,
    pub u: f64,
}

pub fn fundamental_diagram(dhdx: &[f64], d_grid: &[f64]) -> Vec<FdRow> {
    dhdx.iter()
        .flat_map(|&g| {
            d_grid.iter().map(move |&d| FdRow {
                dhdx: g,
                d,
                u: optimal_velocity(g, d),
            })
        })
        .collect()
}

/// `n` evenly spaced effective densities on `[0, 1 + max dH/dx]`.
pub fn fd_density_grid(dhdx: &[f64], n: usize) -> Vec<f64> {
    let top = 1.0 + dhdx.iter().copied().fold(0.0_f64, f64::max);
    let n = n.max(2);
    (0..n).map(|i| top * i as f64 / (n - 1) as f64).collect()
}

pub fn fd_to_csv(rows: &[FdRow]) -> String {
    let mut out = String::from("dHdx,d,u\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.dhdx, r.d, r.u));
    }
    out
}

/// Flux with explicit own-density couplings `c = (c1, c2)`.
pub fn flux_with_coupling(eta: [f64; 4], c: [f64; 2]) -> [f64; 4] {
    let [r1, u1, r2, u2] = eta;
    [
        r1 * u1,
        0.5 * u1 * u1 - c[0] * r1 * u1,
        r2 * u2,
        0.5 * u2 * u2 - c[1] * r2 * u2,
    ]
}

/// Conservation-law flux on the main road.
pub fn flux(eta: [f64; 4], alpha: f64) -> [f64; 4] {
    flux_with_coupling(eta, [alpha, 1.0 - alpha])
}

/// One 2x2 block `[[u, rho], [-c u, u - c rho]]` of the flux Jacobian.
pub fn jacobian_block(rho: f64, u: f64, c: f64) -> [[f64; 2]; 2] {
    [[u, rho], [-c * u, u - c * rho]]
}

/// Flux Jacobian at an operating point, block diagonal by class.
pub fn jacobian(op: &OperatingPoint, alpha: f64) -> Matrix4<f64> {
    jacobian_with_coupling(op, [alpha, 1.0 - alpha])
}

pub fn jacobian_with_coupling(op: &OperatingPoint, c: [f64; 2]) -> Matrix4<f64> {
    let a = jacobian_block(op.rho1, op.u1, c[0]);
    let b = jacobian_block(op.rho2, op.u2, c[1]);
    let mut j = Matrix4::zeros();
    for r in 0..2 {
        for s in 0..2 {
            j[(r, s)] = a[r][s];
            j[(r + 2, s + 2)] = b[r][s];
        }
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn reference_point() -> OperatingPoint {
        OperatingPoint::new(0.85, 0.09, 0.75, 0.095).unwrap()
    }

    #[test]
    fn cost_examples() {
        assert_eq!(cost_functional(0.0, 0.7, 0.45, Class::One, Region::Route), 0.0);
        assert_eq!(cost_functional(0.0, 0.7, 0.45, Class::Two, Region::Route), 0.0);
        assert_abs_diff_eq!(
            cost_functional(1.0, 0.0, 0.45, Class::One, Region::Main),
            -0.5,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            cost_functional(0.09, 0.85, 0.45, Class::One, Region::Main),
            0.00405 - 0.09 + 0.034425,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            cost_functional(0.09, 0.85, 0.45, Class::One, Region::Main),
            -0.051525,
            epsilon = 1e-15
        );
        // class 2 on the main road weighs its density by 1 - alpha
        assert_abs_diff_eq!(
            cost_functional(0.5, 0.4, 0.3, Class::Two, Region::Main),
            0.125 - 0.5 + 0.7 * 0.5 * 0.4,
            epsilon = 1e-15
        );
    }

    #[test]
    fn costs_are_strictly_convex() {
        // second difference of a quadratic with leading coefficient 1/2 is h^2
        let h = 1e-3;
        for class in [Class::One, Class::Two] {
            for region in [Region::Main, Region::Route] {
                for &u in &[-0.5, 0.0, 0.3, 1.2] {
                    let f = |v: f64| cost_functional(v, 0.6, 0.45, class, region);
                    let second = (f(u + h) - 2.0 * f(u) + f(u - h)) / (h * h);
                    assert_abs_diff_eq!(second, 1.0, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn conjugate_examples() {
        let c = legendre_fenchel(&QuadraticCost { c_rho: 1.0 }, 0.0).unwrap();
        assert_abs_diff_eq!(c.minimizer, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.value, 0.0, epsilon = 1e-12);

        let c = legendre_fenchel(&QuadraticCost { c_rho: 0.3825 }, 0.2).unwrap();
        assert_abs_diff_eq!(c.minimizer, 0.8175, epsilon = 1e-10);
        assert_abs_diff_eq!(c.value, -0.8175 * 0.8175 / 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(c.value, -0.33415, epsilon = 1e-5);

        let c = legendre_fenchel(&|u: f64| u * u, 2.0).unwrap();
        assert_abs_diff_eq!(c.minimizer, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(c.value, -1.0, epsilon = 1e-8);
    }

    #[test]
    fn conjugate_errors() {
        // linear cost: slope never reaches p
        assert!(matches!(legendre_fenchel(&|u: f64| u, 2.0), Err(Error::Unbounded(_))));
        // concave cost
        assert!(matches!(
            legendre_fenchel(&|u: f64| -u * u, 0.5),
            Err(Error::NonConvex(_))
        ));
        // concave far from the origin
        assert!(matches!(
            legendre_fenchel(&|u: f64| (u - 3.0).powi(2) - (u / 4.0).powi(4), 50.0),
            Err(Error::NonConvex(_))
        ));
    }

    #[test]
    fn velocity_examples() {
        assert_eq!(optimal_velocity(0.0, 0.0), 1.0);
        assert_abs_diff_eq!(optimal_velocity(0.0, 0.3), 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(optimal_velocity(0.2, 0.0), 1.2, epsilon = 1e-15);
        assert_eq!(optimal_velocity(0.0, 1.4), 0.0);
    }

    #[test]
    fn velocity_field_from_gradients() {
        let field = CostGradientField::zero(3);
        let (u1, u2) = field.velocities(&[0.0, 0.5, 1.0], &[0.2, 0.2, 0.2], 0.4);
        assert_abs_diff_eq!(u1[1], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(u2[0], 1.0 - 0.6 * 0.2, epsilon = 1e-15);
    }

    #[test]
    fn fundamental_diagram_examples() {
        let d: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let rows = fundamental_diagram(&[0.0], &d);
        assert_eq!(rows.first().unwrap().u, 1.0);
        assert_abs_diff_eq!(rows.last().unwrap().u, 0.0, epsilon = 1e-15);

        let slices = [-0.2, 0.0, 0.2];
        let grid = fd_density_grid(&slices, 61);
        assert_abs_diff_eq!(*grid.last().unwrap(), 1.2, epsilon = 1e-15);
        let rows = fundamental_diagram(&slices, &grid);
        for &g in &slices {
            let slice: Vec<&FdRow> = rows.iter().filter(|r| r.dhdx == g).collect();
            assert_abs_diff_eq!(slice[0].u, 1.0 + g, epsilon = 1e-15);
            // zero crossing at d = 1 + dHdx, clamped beyond
            for r in &slice {
                if r.d >= 1.0 + g {
                    assert_eq!(r.u, 0.0);
                }
            }
            for w in slice.windows(2) {
                if w[1].u > 0.0 {
                    let slope = (w[1].u - w[0].u) / (w[1].d - w[0].d);
                    assert_abs_diff_eq!(slope, -1.0, epsilon = 1e-9);
                }
            }
        }
        assert!(fd_to_csv(&rows).starts_with("dHdx,d,u\n"));
    }

    #[test]
    fn flux_examples() {
        assert_eq!(flux([0.0; 4], 0.45), [0.0; 4]);
        let f = flux([0.85, 0.09, 0.75, 0.095], 0.45);
        let want = [0.0765, -0.030375, 0.07125, -0.034675];
        for (a, b) in f.iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let g = flux([1.7, 0.09, 0.75, 0.095], 0.45);
        assert_abs_diff_eq!(g[0], 2.0 * f[0], epsilon = 1e-15);
        assert_abs_diff_eq!(g[1] - 0.5 * 0.09 * 0.09, 2.0 * (f[1] - 0.5 * 0.09 * 0.09), epsilon = 1e-15);
    }

    #[test]
    fn jacobian_examples() {
        let j = jacobian(&reference_point(), 0.45);
        for r in 0..2 {
            for s in 2..4 {
                assert_eq!(j[(r, s)], 0.0);
                assert_eq!(j[(s, r)], 0.0);
            }
        }
        let want = [[0.09, 0.85], [-0.0405, -0.2925]];
        for r in 0..2 {
            for s in 0..2 {
                assert_abs_diff_eq!(j[(r, s)], want[r][s], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let op = reference_point();
        let j = jacobian(&op, 0.45);
        let eta = op.as_array();
        let h = 1e-6;
        for col in 0..4 {
            let mut up = eta;
            let mut dn = eta;
            up[col] += h;
            dn[col] -= h;
            let (fu, fd) = (flux(up, 0.45), flux(dn, 0.45));
            for row in 0..4 {
                assert_abs_diff_eq!((fu[row] - fd[row]) / (2.0 * h), j[(row, col)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn model_params_validation() {
        assert!(ModelParams::main_only(0.45, 0.0, 1.0).violations("m").is_empty());
        assert_eq!(ModelParams::main_only(1.2, 0.0, 1.0).violations("m").len(), 1);
        let bad = ModelParams { alpha: 0.5, domain: [0.0, 1.0], junction: 0.0 };
        assert_eq!(bad.violations("m").len(), 1);
        let net = ModelParams { alpha: 0.5, domain: [0.0, 2.0], junction: 1.0 };
        assert!(net.has_routes());
        assert_eq!(net.region(0.5), Region::Main);
        assert_eq!(net.region(1.5), Region::Route);
        assert!(OperatingPoint::new(0.85, 0.0, 0.75, 0.095).is_err());
    }

    proptest! {
        #[test]
        fn numeric_conjugate_matches_analytic(p in -0.5f64..0.5, c_rho in 0.0f64..1.0) {
            let c = legendre_fenchel(&QuadraticCost { c_rho }, p).unwrap();
            let u = 1.0 + p - c_rho;
            prop_assert!((c.minimizer - u).abs() < 1e-8);
            prop_assert!((c.value + u * u / 2.0).abs() < 1e-8);
            // conjugate minimizer and velocity law agree
            if u >= 0.0 {
                prop_assert!((optimal_velocity(p, c_rho) - c.minimizer).abs() < 1e-8);
            }
        }

        #[test]
        fn block_identities(rho in 0.01f64..1.0, u in 0.01f64..1.0, c in 0.01f64..1.0) {
            let [[a, b], [cc, d]] = jacobian_block(rho, u, c);
            prop_assert!((a + d - (2.0 * u - c * rho)).abs() < 1e-15);
            prop_assert!((a * d - b * cc - u * u).abs() < 1e-15);
        }

        #[test]
        fn fd_slope_is_minus_one(g in -0.5f64..0.5, d1 in 0.0f64..0.5, d2 in 0.0f64..0.5) {
            prop_assume!((d1 - d2).abs() > 1e-6);
            let s = (optimal_velocity(g, d2) - optimal_velocity(g, d1)) / (d2 - d1);
            prop_assert!((s + 1.0).abs() < 1e-9);
        }
    }
}
