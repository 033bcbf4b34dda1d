//! Output quadrature covariances and the three entanglement measures:
//! the Duan sum, Reid's inferred-variance (EPR) products and the logarithmic
//! negativity.
//!
//! Quadratures are `Xᶿ = a e^{−iθ} + a† e^{iθ}` and `Yᶿ = X^{θ+π/2}`, so the
//! vacuum variance is 1 and `V(X)V(Y) ≥ 1`. Covariances are ordered
//! `(X₁, Y₁, X₂, Y₂)`.

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fluct::{CMatrix4, FluctError, FluctuationModel, SpectralMatrix};
use crate::model::FrequencyGrid;

/// Largest tolerated imaginary part of the symmetrised quadrature spectrum,
/// relative to its largest entry.
pub const IMAG_RESIDUE_TOLERANCE: f64 = 1e-9;

/// Relative size below which a negative radicand is attributed to rounding
/// and evaluated as zero.
pub const RADICAND_ROUNDING_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CriteriaError {
    #[error(transparent)]
    Fluct(#[from] FluctError),
    #[error("quadrature spectrum has imaginary residue {relative:e} (relative)")]
    ComplexResidue { relative: f64 },
    #[error("Duan weight b must be non-zero and finite")]
    BadWeight,
    #[error("inferring variance {which} is not positive ({value})")]
    NonPositiveVariance { which: &'static str, value: f64 },
    #[error("negative radicand in {which}: {value:e} (degenerate or invalid covariance)")]
    NegativeRadicand { which: &'static str, value: f64 },
}

/// Output spectral (co)variances of `(X₁, Y₁, X₂, Y₂)` at one `(θ, ω)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureCovariance {
    /// Radians.
    pub theta: f64,
    pub omega: f64,
    pub c: Matrix4<f64>,
    /// Relative imaginary part discarded from the symmetrised spectrum.
    pub imag_residue: f64,
}

impl QuadratureCovariance {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.c[(row, col)]
    }
}

/// Rows map `(δα₁, δα₁⁺, δα₂, δα₂⁺)` onto `(δX₁, δY₁, δX₂, δY₂)`.
pub fn quadrature_transform(theta: f64) -> CMatrix4 {
    let x = Complex64::from_polar(1.0, -theta);
    let y = Complex64::from_polar(1.0, -(theta + std::f64::consts::FRAC_PI_2));
    let z = Complex64::new(0.0, 0.0);
    #[rustfmt::skip]
    let t = CMatrix4::new(
        x, x.conj(), z, z,
        y, y.conj(), z, z,
        z, z, x, x.conj(),
        z, z, y, y.conj(),
    );
    t
}

/// Input–output relation: `C = 1 + 2γ · Re[(M + Mᵀ)/2]` with `M = T S Tᵀ`.
pub fn covariance_from_spectrum(
    spectrum: &SpectralMatrix,
    gamma: f64,
    theta: f64,
) -> Result<QuadratureCovariance, CriteriaError> {
    let t = quadrature_transform(theta);
    let m = t * spectrum.s * t.transpose();
    let sym = (m + m.transpose()) * Complex64::new(0.5, 0.0);
    let largest = sym.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let imag = sym.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let imag_residue = if largest > 0.0 { imag / largest } else { 0.0 };
    if imag_residue > IMAG_RESIDUE_TOLERANCE {
        return Err(CriteriaError::ComplexResidue {
            relative: imag_residue,
        });
    }
    let c = Matrix4::identity() + sym.map(|z| z.re) * (2.0 * gamma);
    Ok(QuadratureCovariance {
        theta,
        omega: spectrum.omega,
        c,
        imag_residue,
    })
}

/// Output covariance of the linearised model at `(θ, ω)`; θ in radians.
pub fn output_covariance(
    model: &FluctuationModel,
    theta: f64,
    omega: f64,
) -> Result<QuadratureCovariance, CriteriaError> {
    let s = model.spectral_matrix(omega)?;
    covariance_from_spectrum(&s, model.params.gamma1, theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuanSum {
    pub value: f64,
    pub bound: f64,
}

impl DuanSum {
    pub fn violated(&self) -> bool {
        self.value < self.bound
    }
}

/// `V(X₋) + V(Y₊)` with `X± = |b|X₁ ± X₂/|b|`, against `2(b² + 1/b²)`.
pub fn duan_sum(cov: &QuadratureCovariance, b: f64) -> Result<DuanSum, CriteriaError> {
    if b == 0.0 || !b.is_finite() {
        return Err(CriteriaError::BadWeight);
    }
    let c = &cov.c;
    let b2 = b * b;
    let vx_minus = b2 * c[(0, 0)] + c[(2, 2)] / b2 - 2.0 * c[(0, 2)];
    let vy_plus = b2 * c[(1, 1)] + c[(3, 3)] / b2 + 2.0 * c[(1, 3)];
    Ok(DuanSum {
        value: vx_minus + vy_plus,
        bound: 2.0 * (b2 + 1.0 / b2),
    })
}

/// Inferred-variance products `(V^inf(X₁)V^inf(Y₁), V^inf(X₂)V^inf(Y₂))`.
/// A product below 1 demonstrates the EPR paradox.
pub fn epr_products(cov: &QuadratureCovariance) -> Result<(f64, f64), CriteriaError> {
    let c = &cov.c;
    for (which, value) in [
        ("V(X1)", c[(0, 0)]),
        ("V(Y1)", c[(1, 1)]),
        ("V(X2)", c[(2, 2)]),
        ("V(Y2)", c[(3, 3)]),
    ] {
        if value <= 0.0 || !value.is_finite() {
            return Err(CriteriaError::NonPositiveVariance { which, value });
        }
    }
    let (xx, yy) = (c[(0, 2)], c[(1, 3)]);
    let inf_x1 = c[(0, 0)] - xx * xx / c[(2, 2)];
    let inf_y1 = c[(1, 1)] - yy * yy / c[(3, 3)];
    let inf_x2 = c[(2, 2)] - xx * xx / c[(0, 0)];
    let inf_y2 = c[(3, 3)] - yy * yy / c[(1, 1)];
    Ok((inf_x1 * inf_y1, inf_x2 * inf_y2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNegativity {
    pub xi: f64,
    /// `max(0, −log₂ ξ)`.
    pub logneg: f64,
    /// Smallest symplectic eigenvalue of the partially transposed covariance.
    pub nu_tilde: f64,
}

fn checked_sqrt(which: &'static str, value: f64, scale: f64) -> Result<f64, CriteriaError> {
    if value >= 0.0 {
        Ok(value.sqrt())
    } else if -value <= RADICAND_ROUNDING_FLOOR * scale {
        Ok(0.0)
    } else {
        Err(CriteriaError::NegativeRadicand { which, value })
    }
}

fn det2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    a * d - b * c
}

/// `ξ` exactly as the block-determinant expression
/// `√((det C₁ − det C₁₂) − √((det C₂ − det C₁₂)² − det C))`, together with the
/// standard PPT symplectic value `ν̃` as a cross-check.
///
/// Near vacuum both square roots act on differences of O(1) determinants, so
/// `ξ` (and hence the log-negativity) carries errors of order `√ε ≈ 1e-8`;
/// `ν̃` comes from a symmetric eigenproblem and stays accurate to `O(ε)`.
pub fn log_negativity(cov: &QuadratureCovariance) -> Result<LogNegativity, CriteriaError> {
    let c = &cov.c;
    let det_c1 = det2(c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]);
    let det_c2 = det2(c[(2, 2)], c[(2, 3)], c[(3, 2)], c[(3, 3)]);
    let det_c12 = det2(c[(0, 2)], c[(0, 3)], c[(1, 2)], c[(1, 3)]);
    let det_c = c.determinant();

    let inner_term = det_c2 - det_c12;
    let inner = checked_sqrt(
        "inner root of xi",
        inner_term * inner_term - det_c,
        inner_term * inner_term + det_c.abs(),
    )?;
    let outer_term = det_c1 - det_c12;
    let xi = checked_sqrt(
        "outer root of xi",
        outer_term - inner,
        outer_term.abs() + inner,
    )?;

    let nu_tilde = min_symplectic_eigenvalue(c)?;

    let logneg = if xi < 1.0 { -xi.log2() } else { 0.0 };
    Ok(LogNegativity {
        xi,
        logneg,
        nu_tilde,
    })
}

/// Smallest symplectic eigenvalue of the partial transpose `Ṽ = PCP`,
/// `P = diag(1, 1, 1, −1)`: the square root of the smallest eigenvalue of
/// `KᵀK` with `K = Ṽ^{1/2} Ω Ṽ^{1/2}`.
fn min_symplectic_eigenvalue(c: &Matrix4<f64>) -> Result<f64, CriteriaError> {
    let flip = Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 1.0, -1.0));
    let vt = flip * c * flip;
    let eig = SymmetricEigen::new((vt + vt.transpose()) * 0.5);
    let smallest = eig.eigenvalues.min();
    if smallest.is_nan() || smallest <= 0.0 {
        return Err(CriteriaError::NonPositiveVariance {
            which: "partially transposed covariance",
            value: smallest,
        });
    }
    let root = eig.eigenvectors
        * Matrix4::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
        * eig.eigenvectors.transpose();
    #[rustfmt::skip]
    let omega = Matrix4::new(
        0.0, 1.0, 0.0, 0.0,
        -1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
        0.0, 0.0, -1.0, 0.0,
    );
    let k = root * omega * root;
    let nu_squared = SymmetricEigen::new(k.transpose() * k).eigenvalues.min();
    Ok(nu_squared.max(0.0).sqrt())
}

/// All three measures at a single `(θ, ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntanglementReport {
    /// Radians.
    pub theta: f64,
    pub omega: f64,
    pub b: f64,
    pub duan_sum: f64,
    pub duan_bound: f64,
    pub epr_product_1: f64,
    pub epr_product_2: f64,
    pub xi: f64,
    pub logneg: f64,
    pub nu_tilde: f64,
}

impl EntanglementReport {
    pub fn from_covariance(cov: &QuadratureCovariance, b: f64) -> Result<Self, CriteriaError> {
        let duan = duan_sum(cov, b)?;
        let (epr_product_1, epr_product_2) = epr_products(cov)?;
        let ln = log_negativity(cov)?;
        Ok(Self {
            theta: cov.theta,
            omega: cov.omega,
            b,
            duan_sum: duan.value,
            duan_bound: duan.bound,
            epr_product_1,
            epr_product_2,
            xi: ln.xi,
            logneg: ln.logneg,
            nu_tilde: ln.nu_tilde,
        })
    }
}

/// Spectral matrices for every grid frequency, in grid order.
pub fn spectral_matrices(
    model: &FluctuationModel,
    grid: &FrequencyGrid,
) -> Result<Vec<SpectralMatrix>, CriteriaError> {
    grid.values()
        .par_iter()
        .map(|&w| model.spectral_matrix(w).map_err(CriteriaError::from))
        .collect()
}

/// Entanglement measures along a frequency grid at fixed θ (radians).
pub fn spectrum_reports(
    model: &FluctuationModel,
    theta: f64,
    grid: &FrequencyGrid,
    b: f64,
) -> Result<Vec<EntanglementReport>, CriteriaError> {
    let gamma = model.params.gamma1;
    grid.values()
        .par_iter()
        .map(|&w| {
            let s = model.spectral_matrix(w)?;
            let cov = covariance_from_spectrum(&s, gamma, theta)?;
            EntanglementReport::from_covariance(&cov, b)
        })
        .collect()
}

fn duan_b1(s: &SpectralMatrix, gamma: f64, theta: f64) -> Result<f64, CriteriaError> {
    Ok(duan_sum(&covariance_from_spectrum(s, gamma, theta)?, 1.0)?.value)
}

/// Angle minimising the b = 1 Duan sum at one frequency, found from the exact
/// `a + p cos 2θ + q sin 2θ` dependence. Returns `(θ radians in [0, π), value)`.
pub fn optimal_duan_angle(s: &SpectralMatrix, gamma: f64) -> Result<(f64, f64), CriteriaError> {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
    let f0 = duan_b1(s, gamma, 0.0)?;
    let f45 = duan_b1(s, gamma, FRAC_PI_4)?;
    let f90 = duan_b1(s, gamma, FRAC_PI_2)?;
    let a = 0.5 * (f0 + f90);
    let p = 0.5 * (f0 - f90);
    let q = f45 - a;
    let amplitude = p.hypot(q);
    let theta = (0.5 * (q.atan2(p) + PI)).rem_euclid(PI);
    Ok((theta, a - amplitude))
}

/// Result of a quadrature-angle search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleScan {
    /// Degrees in [0, 180).
    pub theta_deg: f64,
    pub omega: f64,
    pub duan_sum: f64,
    pub violated: bool,
}

/// `0°, 1°, …, 179°`.
pub fn default_theta_grid() -> Vec<f64> {
    (0..180).map(f64::from).collect()
}

/// One point of a quadrature-angle landscape: the smallest b = 1 Duan sum
/// over the frequency grid at a fixed angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaPoint {
    pub theta_deg: f64,
    pub min_duan_sum: f64,
    pub omega_at_min: f64,
}

/// Smallest b = 1 Duan sum over `omega_grid` for each angle (degrees).
pub fn theta_landscape(
    model: &FluctuationModel,
    omega_grid: &FrequencyGrid,
    theta_grid_deg: &[f64],
) -> Result<Vec<ThetaPoint>, CriteriaError> {
    let spectra = spectral_matrices(model, omega_grid)?;
    let gamma = model.params.gamma1;
    theta_grid_deg
        .par_iter()
        .map(|&theta_deg| {
            let mut best = ThetaPoint {
                theta_deg,
                min_duan_sum: f64::INFINITY,
                omega_at_min: f64::NAN,
            };
            for s in &spectra {
                let v = duan_b1(s, gamma, theta_deg.to_radians())?;
                if v < best.min_duan_sum {
                    best.min_duan_sum = v;
                    best.omega_at_min = s.omega;
                }
            }
            Ok(best)
        })
        .collect()
}

/// Global minimiser of the b = 1 Duan sum over `omega_grid × theta_grid_deg`,
/// with θ refined by golden-section search to 0.01°.
pub fn angle_scan(
    model: &FluctuationModel,
    omega_grid: &FrequencyGrid,
    theta_grid_deg: &[f64],
) -> Result<AngleScan, CriteriaError> {
    let spectra = spectral_matrices(model, omega_grid)?;
    let gamma = model.params.gamma1;
    let best_over_omega = |theta_deg: f64| -> Result<(f64, f64), CriteriaError> {
        let theta = theta_deg.to_radians();
        let mut best = (f64::INFINITY, 0.0);
        for s in &spectra {
            let v = duan_b1(s, gamma, theta)?;
            if v < best.0 {
                best = (v, s.omega);
            }
        }
        Ok(best)
    };

    let coarse: Vec<(f64, (f64, f64))> = theta_grid_deg
        .par_iter()
        .map(|&t| best_over_omega(t).map(|r| (t, r)))
        .collect::<Result<_, _>>()?;
    let Some(&(theta0, (value0, omega0))) = coarse.iter().min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
    else {
        return Ok(AngleScan {
            theta_deg: 0.0,
            omega: omega_grid.values()[0],
            duan_sum: f64::NAN,
            violated: false,
        });
    };

    let step = theta_grid_deg
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max)
        .max(0.01);
    let (mut lo, mut hi) = (theta0 - step, theta0 + step);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = best_over_omega(x1)?;
    let mut f2 = best_over_omega(x2)?;
    while hi - lo > 0.01 {
        if f1.0 < f2.0 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = best_over_omega(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = best_over_omega(x2)?;
        }
    }
    let (theta, (value, omega)) = [(theta0, (value0, omega0)), (x1, f1), (x2, f2)]
        .into_iter()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .expect("non-empty");
    Ok(AngleScan {
        theta_deg: theta.rem_euclid(180.0),
        omega,
        duan_sum: value,
        violated: value < 4.0,
    })
}
