//! Hyperbolicity, boundary-certificate and decay-rate analysis of the
//! linearized two-class model.

use nalgebra::{Matrix4, SymmetricEigen};

use crate::model::{OperatingPoint, jacobian};
use crate::{Error, Result};

/// Roots of one block's characteristic polynomial `l^2 - tr l + det`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockRoots {
    /// Real roots, the less negative first.
    Real(f64, f64),
    /// Complex pair `re +/- i im`, or a repeated real root when `im == 0`.
    NotStrictlyHyperbolic { re: f64, im: f64 },
}

impl BlockRoots {
    /// Roots of a block with trace `2u - c rho` and determinant `u^2`.
    pub fn solve(rho: f64, u: f64, c: f64) -> Self {
        let c_rho = c * rho;
        let trace = 2.0 * u - c_rho;
        // trace^2 - 4 det factors as c_rho (c_rho - 4u)
        let disc = c_rho * (c_rho - 4.0 * u);
        if disc > 0.0 {
            let s = disc.sqrt();
            // the larger-magnitude root avoids cancellation; Vieta gives the other
            let big = if trace <= 0.0 { 0.5 * (trace - s) } else { 0.5 * (trace + s) };
            let small = if big == 0.0 { 0.0 } else { u * u / big };
            let (a, b) = if small >= big { (small, big) } else { (big, small) };
            BlockRoots::Real(a, b)
        } else {
            BlockRoots::NotStrictlyHyperbolic {
                re: 0.5 * trace,
                im: 0.5 * (-disc).sqrt(),
            }
        }
    }

    pub fn real(&self) -> Option<(f64, f64)> {
        match *self {
            BlockRoots::Real(a, b) => Some((a, b)),
            BlockRoots::NotStrictlyHyperbolic { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSpectrum {
    pub class1: BlockRoots,
    pub class2: BlockRoots,
}

impl BlockSpectrum {
    /// All four eigenvalues when both blocks are strictly hyperbolic.
    pub fn eigenvalues(&self) -> Option<[f64; 4]> {
        let (a, b) = self.class1.real()?;
        let (c, d) = self.class2.real()?;
        Some([a, b, c, d])
    }
}

pub fn block_eigenvalues(op: &OperatingPoint, alpha: f64) -> BlockSpectrum {
    BlockSpectrum {
        class1: BlockRoots::solve(op.rho1, op.u1, alpha),
        class2: BlockRoots::solve(op.rho2, op.u2, 1.0 - alpha),
    }
}

/// Normalized discriminants `1 - 4u/(c rho)` of both blocks.
pub fn discriminants(op: &OperatingPoint, alpha: f64) -> [f64; 2] {
    [
        1.0 - 4.0 * op.u1 / (alpha * op.rho1),
        1.0 - 4.0 * op.u2 / ((1.0 - alpha) * op.rho2),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperbolicity {
    pub hyperbolic: bool,
    /// `alpha - 4u1/rho1` and `(1 - alpha) - 4u2/rho2`.
    pub margins: [f64; 2],
}

/// Strict hyperbolicity holds iff `4u1/rho1 < alpha` and `4u2/rho2 < 1 - alpha`.
pub fn check_hyperbolicity(op: &OperatingPoint, alpha: f64) -> Hyperbolicity {
    let margins = [
        alpha - 4.0 * op.u1 / op.rho1,
        (1.0 - alpha) - 4.0 * op.u2 / op.rho2,
    ];
    Hyperbolicity {
        hyperbolic: margins[0] > 0.0 && margins[1] > 0.0,
        margins,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateRow {
    pub mu: f64,
    /// Extreme eigenvalues of the symmetric part of the certificate matrix.
    pub min_eig: f64,
    pub max_eig: f64,
    pub positive_definite: bool,
    pub negative_definite: bool,
    /// Every eigenvalue of the (non-symmetric) matrix has negative real part.
    pub spectrum_negative: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    /// First grid `mu` at which the matrix is positive definite.
    pub mu: Option<f64>,
    /// The matrix at `mu`, or at the first grid point when none qualifies.
    pub matrix: Matrix4<f64>,
    pub positive_definite: bool,
    /// Whether the negated matrix is positive definite for some grid `mu`.
    pub also_negative_definite: bool,
    pub table: Vec<CertificateRow>,
}

/// `n` log-spaced values in `(0, 1)`, from `1e-3` up to `1 - 1/n`-ish.
pub fn default_mu_grid(n: usize) -> Vec<f64> {
    let n = n.max(1);
    let (lo, hi) = (1e-3_f64.ln(), 0.99_f64.ln());
    (0..n)
        .map(|i| {
            let t = if n == 1 { 1.0 } else { i as f64 / (n - 1) as f64 };
            (lo + t * (hi - lo)).exp()
        })
        .collect()
}

pub const DEFAULT_MU_POINTS: usize = 64;

/// `J - G^T J G exp(mu (A - B))` for each `mu`, judged by the symmetric part.
pub fn lyapunov_certificate(
    jac: &Matrix4<f64>,
    g_b: &Matrix4<f64>,
    a: f64,
    b: f64,
    mu_grid: &[f64],
) -> Certificate {
    let build = |mu: f64| jac - g_b.transpose() * jac * g_b * (mu * (a - b)).exp();
    let mut table = Vec::with_capacity(mu_grid.len());
    let mut first_pd = None;
    for &mu in mu_grid {
        let m = build(mu);
        let sym = 0.5 * (m + m.transpose());
        let eig = SymmetricEigen::new(sym).eigenvalues;
        let min_eig = eig.min();
        let max_eig = eig.max();
        let spectrum_negative = m.complex_eigenvalues().iter().all(|z| z.re < 0.0);
        let row = CertificateRow {
            mu,
            min_eig,
            max_eig,
            positive_definite: min_eig > 0.0,
            negative_definite: max_eig < 0.0,
            spectrum_negative,
        };
        if row.positive_definite && first_pd.is_none() {
            first_pd = Some(mu);
        }
        table.push(row);
    }
    let shown = first_pd.or(mu_grid.first().copied()).unwrap_or(0.0);
    Certificate {
        mu: first_pd,
        matrix: build(shown),
        positive_definite: first_pd.is_some(),
        also_negative_definite: table.iter().any(|r| r.negative_definite),
        table,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub epsilon: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    /// Number of samples in the fitted window.
    pub samples: usize,
}

pub const DEFAULT_TAIL_FRACTION: f64 = 0.5;

/// Norms below this fraction of the initial norm are treated as round-off.
pub const DEFAULT_NOISE_FLOOR: f64 = 1e-10;

pub const MIN_FIT_SAMPLES: usize = 10;

/// Least-squares fit of `log norm = log(M norm(0)) - epsilon t` over the last
/// `tail_fraction` of the samples.
///
/// Sampling stops at the first norm below `noise_floor * norm(0)`: past that
/// point the deviation is round-off and carries no rate information.
pub fn fit_decay(times: &[f64], norms: &[f64], tail_fraction: f64, noise_floor: f64) -> Result<DecayFit> {
    if times.len() != norms.len() {
        return Err(Error::Fit("times and norms differ in length".into()));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Fit(format!("tail fraction {tail_fraction} must lie in (0,1]")));
    }
    let n0 = *norms.first().ok_or_else(|| Error::Fit("no samples".into()))?;
    if !(n0 > 0.0) {
        return Err(Error::Fit("initial norm must be positive".into()));
    }
    if norms.iter().any(|n| !(*n >= 0.0) || !n.is_finite()) {
        return Err(Error::Fit("norms must be finite and non-negative".into()));
    }
    let floor = noise_floor * n0;
    let usable = norms.iter().position(|&n| n < floor).unwrap_or(norms.len());
    let start = usable - ((usable as f64 * tail_fraction).round() as usize).min(usable);
    let window = start..usable;
    if window.len() < MIN_FIT_SAMPLES {
        return Err(Error::Fit(format!(
            "{} samples in the tail window, need at least {MIN_FIT_SAMPLES}",
            window.len()
        )));
    }
    if norms[window.clone()].iter().any(|&n| !(n > 0.0)) {
        return Err(Error::Fit("non-positive norm in the fit window".into()));
    }
    let t = &times[window.clone()];
    let y: Vec<f64> = norms[window].iter().map(|n| n.ln()).collect();
    let k = t.len() as f64;
    let t_mean = t.iter().sum::<f64>() / k;
    let y_mean = y.iter().sum::<f64>() / k;
    let sxx: f64 = t.iter().map(|ti| (ti - t_mean).powi(2)).sum();
    let sxy: f64 = t.iter().zip(&y).map(|(ti, yi)| (ti - t_mean) * (yi - y_mean)).sum();
    let syy: f64 = y.iter().map(|yi| (yi - y_mean).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all samples at the same time".into()));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    // constant data fits perfectly with zero rate
    let r_squared = if syy <= f64::EPSILON * y_mean.abs().max(1.0) * k {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok(DecayFit {
        epsilon: -slope,
        prefactor: intercept.exp() / n0,
        r_squared,
        samples: t.len(),
    })
}

/// Everything known about an operating point's linear stability.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub alpha: f64,
    pub operating_point: OperatingPoint,
    pub jacobian: Matrix4<f64>,
    pub spectrum: BlockSpectrum,
    pub discriminants: [f64; 2],
    pub hyperbolicity: Hyperbolicity,
    pub certificate: Certificate,
    pub decay: Option<[DecayFit; 2]>,
}

impl StabilityReport {
    pub fn new(
        op: &OperatingPoint,
        alpha: f64,
        g_b: &Matrix4<f64>,
        domain: [f64; 2],
        mu_grid: &[f64],
    ) -> Self {
        let jac = jacobian(op, alpha);
        Self {
            alpha,
            operating_point: *op,
            jacobian: jac,
            spectrum: block_eigenvalues(op, alpha),
            discriminants: discriminants(op, alpha),
            hyperbolicity: check_hyperbolicity(op, alpha),
            certificate: lyapunov_certificate(&jac, g_b, domain[0], domain[1], mu_grid),
            decay: None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let op = &self.operating_point;
        s.push_str(&format!("alpha: {}\n", self.alpha));
        s.push_str(&format!(
            "operating point (rho1, u1, rho2, u2): ({}, {}, {}, {})\n",
            op.rho1, op.u1, op.rho2, op.u2
        ));
        s.push_str("jacobian:\n");
        for r in 0..4 {
            let row: Vec<String> = (0..4).map(|c| format!("{:>12.6}", self.jacobian[(r, c)])).collect();
            s.push_str(&format!("  [{}]\n", row.join(" ")));
        }
        for (name, roots) in [("class 1", self.spectrum.class1), ("class 2", self.spectrum.class2)] {
            match roots {
                BlockRoots::Real(a, b) => {
                    s.push_str(&format!("eigenvalues {name}: {a:.6}, {b:.6}\n"))
                }
                BlockRoots::NotStrictlyHyperbolic { re, im } => s.push_str(&format!(
                    "eigenvalues {name}: {re:.6} +/- {im:.6}i (not strictly hyperbolic)\n"
                )),
            }
        }
        s.push_str(&format!(
            "discriminants: {:.6}, {:.6}\n",
            self.discriminants[0], self.discriminants[1]
        ));
        s.push_str(&format!(
            "strictly hyperbolic: {} (margins {:.6}, {:.6})\n",
            self.hyperbolicity.hyperbolic, self.hyperbolicity.margins[0], self.hyperbolicity.margins[1]
        ));
        let c = &self.certificate;
        s.push_str(&format!(
            "boundary certificate positive definite: {}{}\n",
            c.positive_definite,
            c.mu.map(|m| format!(" (mu = {m:.6})")).unwrap_or_default()
        ));
        s.push_str(&format!(
            "negated certificate positive definite: {}\n",
            c.also_negative_definite
        ));
        s.push_str(&format!(
            "certificate spectrum negative at every mu: {}\n",
            c.table.iter().all(|r| r.spectrum_negative)
        ));
        if let Some(fits) = &self.decay {
            for (k, f) in fits.iter().enumerate() {
                s.push_str(&format!(
                    "decay class {}: epsilon = {:.6}, M = {:.6}, r^2 = {:.4}\n",
                    k + 1,
                    f.epsilon,
                    f.prefactor,
                    f.r_squared
                ));
            }
        }
        s
    }

    pub fn eigenvalues_csv(&self) -> String {
        let mut s = String::from("class,index,re,im\n");
        for (k, roots) in [self.spectrum.class1, self.spectrum.class2].iter().enumerate() {
            let rows = match *roots {
                BlockRoots::Real(a, b) => [(a, 0.0), (b, 0.0)],
                BlockRoots::NotStrictlyHyperbolic { re, im } => [(re, im), (re, -im)],
            };
            for (i, (re, im)) in rows.iter().enumerate() {
                s.push_str(&format!("{},{},{},{}\n", k + 1, 2 * k + i + 1, re, im));
            }
        }
        s
    }

    pub fn certificate_csv(&self) -> String {
        let mut s = String::from(
            "mu,min_eig,max_eig,positive_definite,negated_positive_definite,spectrum_negative\n",
        );
        for r in &self.certificate.table {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.mu, r.min_eig, r.max_eig, r.positive_definite, r.negative_definite, r.spectrum_negative
            ));
        }
        s
    }

    pub const SWEEP_HEADER: &'static str = "alpha,lambda1,lambda2,lambda3,lambda4,delta1,delta2,margin1,margin2,hyperbolic,certificate_pd,negated_certificate_pd\n";

    /// One row for an alpha sweep; non-real eigenvalues are written as NaN.
    pub fn sweep_row(&self) -> String {
        let l = self.spectrum.eigenvalues().unwrap_or([f64::NAN; 4]);
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            self.alpha,
            l[0],
            l[1],
            l[2],
            l[3],
            self.discriminants[0],
            self.discriminants[1],
            self.hyperbolicity.margins[0],
            self.hyperbolicity.margins[1],
            self.hyperbolicity.hyperbolic,
            self.certificate.positive_definite,
            self.certificate.also_negative_definite
        )
    }
}
