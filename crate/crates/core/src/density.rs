//! Parzen-Rosenblatt kernel density estimation on a uniform 1-D node grid.

use std::f64::consts::PI;

use crate::{Error, Result};

/// Minimum distance, in bandwidths, between any position and the grid ends.
pub const MARGIN_BANDWIDTHS: f64 = 6.0;

/// Uniform node grid `x_i = x_min + i * dx`, `i = 0..nodes`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub nodes: usize,
}

impl NodeGrid {
    pub fn new(x_min: f64, x_max: f64, nodes: usize) -> Result<Self> {
        if !(x_min < x_max) || nodes < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs x_min < x_max and at least 2 nodes (got [{x_min}, {x_max}], {nodes})"
            )));
        }
        Ok(Self { x_min, x_max, nodes })
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nodes - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.nodes).map(|i| self.x(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: NodeGrid,
    pub values: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityField {
    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        let n = self.values.len();
        let inner: f64 = self.values[1..n - 1].iter().sum();
        self.grid.dx() * (inner + 0.5 * (self.values[0] + self.values[n - 1]))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,value\n");
        for (x, v) in self.grid.points().zip(&self.values) {
            out.push_str(&format!("{x},{v}\n"));
        }
        out
    }
}

pub fn gaussian_kernel(x: f64, a: f64) -> f64 {
    (-(x * x) / (2.0 * a * a)).exp() / ((2.0 * PI).sqrt() * a)
}

/// Smoothed density `(1/M) sum_k Phi_a(x - x_k)` at the grid nodes.
///
/// Positions closer than [`MARGIN_BANDWIDTHS`] bandwidths to either end of
/// the grid are rejected, since the field would then lose mass off the grid.
pub fn kde_density(positions: &[f64], a: f64, grid: NodeGrid) -> Result<DensityField> {
    if positions.is_empty() {
        return Err(Error::InvalidParameter("no positions".into()));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidParameter(format!("bandwidth {a} must be > 0")));
    }
    let (lo, hi) = positions
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let margin = MARGIN_BANDWIDTHS * a;
    if lo - grid.x_min < margin || grid.x_max - hi < margin {
        return Err(Error::InsufficientMargin(format!(
            "positions span [{lo}, {hi}] but grid [{}, {}] needs {margin} clearance on each side",
            grid.x_min, grid.x_max
        )));
    }
    let inv_m = 1.0 / positions.len() as f64;
    let values = grid
        .points()
        .map(|x| inv_m * positions.iter().map(|&xk| gaussian_kernel(x - xk, a)).sum::<f64>())
        .collect();
    Ok(DensityField {
        grid,
        values,
        bandwidth: a,
    })
}

/// Effective density `alpha rho1 + (1 - alpha) rho2`.
pub fn mix_densities(rho1: &DensityField, rho2: &DensityField, alpha: f64) -> Result<DensityField> {
    if rho1.grid != rho2.grid {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", rho1.grid, rho2.grid)));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} must lie in (0,1)")));
    }
    let values = rho1
        .values
        .iter()
        .zip(&rho2.values)
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect();
    Ok(DensityField {
        grid: rho1.grid,
        values,
        bandwidth: rho1.bandwidth,
    })
}
