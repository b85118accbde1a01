//! Browser bindings for the demo page in `www/`.
//!
//! Each exported function returns a flat row-major `Float64Array`; the row
//! layout is given in its doc comment. The plain-Rust versions are public so
//! they can be tested natively.

use nalgebra::Matrix4;
use sociotraffic::analysis::{DEFAULT_NOISE_FLOOR, DEFAULT_TAIL_FRACTION, block_eigenvalues, check_hyperbolicity, fit_decay};
use sociotraffic::model::{OperatingPoint, fd_density_grid, fundamental_diagram};
use sociotraffic::solver::{SolverConfig, run_simulation};
use wasm_bindgen::prelude::*;

/// Rows `[dHdx, d, u]`, `points` rows per gradient.
pub fn fd_rows(dhdx: &[f64], points: usize) -> Vec<f64> {
    let d = fd_density_grid(dhdx, points);
    fundamental_diagram(dhdx, &d)
        .into_iter()
        .flat_map(|r| [r.dhdx, r.d, r.u])
        .collect()
}

/// Rows `[alpha, l1, l2, l3, l4, margin1, margin2]` for `n` splits spanning
/// `[alpha_min, alpha_max]`. Eigenvalues of a block without distinct real
/// roots are NaN.
pub fn eigen_rows(op: [f64; 4], alpha_min: f64, alpha_max: f64, n: usize) -> Result<Vec<f64>, String> {
    let op = operating_point(op)?;
    if !(0.0 < alpha_min && alpha_min < alpha_max && alpha_max < 1.0) || n < 2 {
        return Err("need 0 < alpha_min < alpha_max < 1 and n >= 2".into());
    }
    let mut out = Vec::with_capacity(7 * n);
    for i in 0..n {
        let alpha = alpha_min + (alpha_max - alpha_min) * i as f64 / (n - 1) as f64;
        let spectrum = block_eigenvalues(&op, alpha);
        let pair = |r: sociotraffic::analysis::BlockRoots| r.real().map_or([f64::NAN; 2], |(a, b)| [a, b]);
        let h = check_hyperbolicity(&op, alpha);
        out.push(alpha);
        out.extend(pair(spectrum.class1));
        out.extend(pair(spectrum.class2));
        out.extend(h.margins);
    }
    Ok(out)
}

/// Rows `[t, norm1, norm2]`, followed by one trailing row
/// `[NaN, epsilon1, epsilon2]` holding the fitted decay rates (NaN if no fit).
pub fn norm_rows(
    op: [f64; 4],
    alpha: f64,
    amplitude: f64,
    boundary_gain: f64,
    t_end: f64,
    cells: usize,
) -> Result<Vec<f64>, String> {
    let mut config = SolverConfig::new(operating_point(op)?);
    config.perturbation.amplitude = [amplitude, 0.0, amplitude, 0.0];
    config.g_b = Matrix4::identity() * boundary_gain;
    config.t_end = t_end;
    config.cells = cells;
    let traj = run_simulation(&config, alpha).map_err(|e| e.to_string())?;
    let times = traj.times();
    let mut out: Vec<f64> = times
        .iter()
        .zip(&traj.norms)
        .flat_map(|(t, n)| [*t, n[0], n[1]])
        .collect();
    out.push(f64::NAN);
    for k in 0..2 {
        let eps = fit_decay(&times, &traj.class_norms(k), DEFAULT_TAIL_FRACTION, DEFAULT_NOISE_FLOOR)
            .map_or(f64::NAN, |f| f.epsilon);
        out.push(eps);
    }
    Ok(out)
}

fn operating_point(op: [f64; 4]) -> Result<OperatingPoint, String> {
    OperatingPoint::new(op[0], op[1], op[2], op[3]).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = fundamentalDiagram)]
pub fn fundamental_diagram_js(dhdx: &[f64], points: usize) -> Vec<f64> {
    fd_rows(dhdx, points)
}

#[wasm_bindgen(js_name = eigenvaluesVsAlpha)]
pub fn eigenvalues_vs_alpha_js(
    rho1: f64,
    u1: f64,
    rho2: f64,
    u2: f64,
    alpha_min: f64,
    alpha_max: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    eigen_rows([rho1, u1, rho2, u2], alpha_min, alpha_max, n).map_err(|e| JsError::new(&e))
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen(js_name = simulateNorms)]
pub fn simulate_norms_js(
    rho1: f64,
    u1: f64,
    rho2: f64,
    u2: f64,
    alpha: f64,
    amplitude: f64,
    boundary_gain: f64,
    t_end: f64,
    cells: usize,
) -> Result<Vec<f64>, JsError> {
    norm_rows([rho1, u1, rho2, u2], alpha, amplitude, boundary_gain, t_end, cells).map_err(|e| JsError::new(&e))
}
