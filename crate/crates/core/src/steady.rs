//! Classical steady states of the noiseless coupler equations.
//!
//! For symmetric parameters the common intensity `I = |α|²` solves the cubic
//!
//! ```text
//! 4χ²I³ + 4(Δ−J)χI² + [γ² + (Δ−J)²]I − |ε|² = 0
//! ```
//!
//! whose coefficients routinely span eighteen orders of magnitude. The roots
//! are found as eigenvalues of the companion matrix of the rescaled monic
//! polynomial, classified by its discriminant, and polished with Newton steps.
//! Asymmetric parameters go through a damped Newton solver on the four real
//! components of `(α₁, α₂)`.

use nalgebra::{Matrix3, Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CouplerParams, ParamError, SymmetricValues};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Discriminant band, relative to the magnitude of its terms, inside which the
/// cubic is treated as having a double root. A few hundred ulps: wide enough
/// to absorb rounding, narrow enough that root counts flip within ~1e-10
/// relative pump power of the true fold.
pub const FOLD_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SteadyError {
    #[error(transparent)]
    InvalidParams(#[from] ParamError),
    #[error(
        "operation requires symmetric parameters (eps, gamma, delta, chi equal for both modes)"
    )]
    NotSymmetric,
    #[error("closed form requires delta == J (got delta = {delta}, J = {j})")]
    DetuningMismatch { delta: f64, j: f64 },
    #[error("intensity must be finite and non-negative (got {0})")]
    BadIntensity(f64),
    #[error("steady-state solver did not converge after {iterations} iterations (best residual {best_residual:e})")]
    NoConvergence {
        iterations: usize,
        best_residual: f64,
    },
}

/// A classical fixed point of the two-mode equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub alpha1: Complex64,
    pub alpha2: Complex64,
    pub intensity1: f64,
    pub intensity2: f64,
    /// Max modulus of the right-hand side of the classical equations.
    pub residual: f64,
}

impl SteadyState {
    pub fn from_amplitudes(params: &CouplerParams, alpha1: Complex64, alpha2: Complex64) -> Self {
        let (f1, f2) = classical_rhs(params, alpha1, alpha2);
        Self {
            alpha1,
            alpha2,
            intensity1: alpha1.norm_sqr(),
            intensity2: alpha2.norm_sqr(),
            residual: f1.norm().max(f2.norm()),
        }
    }

    /// Both modes at the symmetric amplitude belonging to intensity `intensity`.
    pub fn symmetric(params: &CouplerParams, intensity: f64) -> Result<Self, SteadyError> {
        let alpha = steady_amplitude(params, intensity)?;
        Ok(Self::from_amplitudes(params, alpha, alpha))
    }

    /// `(α₁ + α₂, α₁ − α₂)`.
    pub fn sum_difference(&self) -> (Complex64, Complex64) {
        sum_difference(self.alpha1, self.alpha2)
    }
}

pub fn sum_difference(alpha1: Complex64, alpha2: Complex64) -> (Complex64, Complex64) {
    (alpha1 + alpha2, alpha1 - alpha2)
}

/// Right-hand side of the classical (noiseless) equations of motion.
pub fn classical_rhs(p: &CouplerParams, a1: Complex64, a2: Complex64) -> (Complex64, Complex64) {
    let f1 =
        p.eps1 - Complex64::new(p.gamma1, p.delta1) * a1 - 2.0 * I * p.chi1 * a1.norm_sqr() * a1
            + I * p.j * a2;
    let f2 =
        p.eps2 - Complex64::new(p.gamma2, p.delta2) * a2 - 2.0 * I * p.chi2 * a2.norm_sqr() * a2
            + I * p.j * a1;
    (f1, f2)
}

fn require_symmetric(params: &CouplerParams) -> Result<SymmetricValues, SteadyError> {
    params.validate()?;
    params.symmetric_values().ok_or(SteadyError::NotSymmetric)
}

/// Coefficients `[c3, c2, c1, c0]` of the intensity cubic for pump power `eps2`.
pub fn cubic_coefficients(v: &SymmetricValues, eps2: f64) -> [f64; 4] {
    let dj = v.delta - v.j;
    [
        4.0 * v.chi * v.chi,
        4.0 * dj * v.chi,
        v.gamma * v.gamma + dj * dj,
        -eps2,
    ]
}

/// The cubic evaluated at `intensity`, relative to the pump power.
pub fn cubic_relative_residual(v: &SymmetricValues, eps2: f64, intensity: f64) -> f64 {
    let [c3, c2, c1, c0] = cubic_coefficients(v, eps2);
    let value = ((c3 * intensity + c2) * intensity + c1) * intensity + c0;
    let scale = if eps2 > 0.0 {
        eps2
    } else {
        c1 * intensity.abs().max(f64::MIN_POSITIVE)
    };
    value.abs() / scale
}

/// All real non-negative intensities of the symmetric steady state, ascending.
/// Double roots at fold points are repeated.
pub fn symmetric_intensities(params: &CouplerParams) -> Result<Vec<f64>, SteadyError> {
    let v = require_symmetric(params)?;
    Ok(intensity_roots(&v, v.eps.norm_sqr()))
}

/// Intensity roots for an arbitrary pump power (used by pump sweeps).
pub fn intensity_roots(v: &SymmetricValues, eps2: f64) -> Vec<f64> {
    if eps2 == 0.0 {
        return vec![0.0];
    }
    let [c3, c2, c1, c0] = cubic_coefficients(v, eps2);
    if c3 == 0.0 {
        return vec![eps2 / c1];
    }
    let monic = [c2 / c3, c1 / c3, c0 / c3];
    let mut roots = monic_cubic_real_roots(monic);
    roots.retain(|r| *r >= 0.0);
    roots.sort_by(f64::total_cmp);
    roots
}

/// Real roots of `x³ + b x² + c x + d`, with multiplicity at a double root.
pub fn monic_cubic_real_roots([b, c, d]: [f64; 3]) -> Vec<f64> {
    let scale = [b.abs(), c.abs().sqrt(), d.abs().cbrt()]
        .into_iter()
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return vec![0.0; 3];
    }
    let (sb, sc, sd) = (b / scale, c / scale.powi(2), d / scale.powi(3));
    let terms = [
        18.0 * sb * sc * sd,
        -4.0 * sb.powi(3) * sd,
        sb * sb * sc * sc,
        -4.0 * sc.powi(3),
        -27.0 * sd * sd,
    ];
    let disc: f64 = terms.iter().sum();
    let magnitude: f64 = terms.iter().map(|t| t.abs()).sum();

    let scaled: Vec<f64> = if disc.abs() <= FOLD_TOLERANCE * magnitude {
        let gap = sb * sb - 3.0 * sc;
        if gap.abs() <= FOLD_TOLERANCE.sqrt() * (sb * sb + 3.0 * sc.abs()) {
            vec![-sb / 3.0; 3]
        } else {
            let double = (9.0 * sd - sb * sc) / (2.0 * gap);
            let simple = (4.0 * sb * sc - 9.0 * sd - sb.powi(3)) / gap;
            vec![double, double, simple]
        }
    } else {
        let companion = Matrix3::new(0.0, 0.0, -sd, 1.0, 0.0, -sc, 0.0, 1.0, -sb);
        let eig = companion.complex_eigenvalues();
        if disc > 0.0 {
            eig.iter().map(|z| polish(z.re, [sb, sc, sd])).collect()
        } else {
            let real = eig
                .iter()
                .min_by(|a, b| a.im.abs().total_cmp(&b.im.abs()))
                .expect("three eigenvalues");
            vec![polish(real.re, [sb, sc, sd])]
        }
    };
    scaled.into_iter().map(|u| u * scale).collect()
}

fn polish(mut u: f64, [b, c, d]: [f64; 3]) -> f64 {
    let eval = |u: f64| ((u + b) * u + c) * u + d;
    for _ in 0..3 {
        let f = eval(u);
        let df = (3.0 * u + 2.0 * b) * u + c;
        if f == 0.0 || df == 0.0 {
            break;
        }
        let next = u - f / df;
        if eval(next).abs() >= f.abs() {
            break;
        }
        u = next;
    }
    u
}

/// Closed-form intensity for Δ = J.
///
/// Evaluated in the rationalised form
/// `3^{4/3} ε² R^{2/3} / (R^{4/3} + 3^{1/3}γ²R^{2/3} + 3^{2/3}γ⁴)` with
/// `R = 9|χ|ε² + √(3(γ⁶ + 27ε⁴χ²))`, which is algebraically identical to the
/// textbook radical expression but free of cancellation as χε² → 0.
pub fn closed_form_intensity(params: &CouplerParams) -> Result<f64, SteadyError> {
    let v = require_symmetric(params)?;
    if v.delta != v.j {
        return Err(SteadyError::DetuningMismatch {
            delta: v.delta,
            j: v.j,
        });
    }
    Ok(closed_form_from(v.gamma, v.chi, v.eps.norm_sqr()))
}

pub(crate) fn closed_form_from(gamma: f64, chi: f64, eps2: f64) -> f64 {
    if eps2 == 0.0 {
        return 0.0;
    }
    let chi = chi.abs();
    let g2 = gamma * gamma;
    let r = 9.0 * chi * eps2 + (3.0 * (g2 * g2 * g2 + 27.0 * eps2 * eps2 * chi * chi)).sqrt();
    let r23 = r.cbrt().powi(2);
    let c13 = 3f64.cbrt();
    3.0 * c13 * eps2 * r23 / (r23 * r23 + c13 * g2 * r23 + c13 * c13 * g2 * g2)
}

/// `α = ε / [γ + i(Δ − J + 2χI)]` for a symmetric parameter set.
pub fn steady_amplitude(params: &CouplerParams, intensity: f64) -> Result<Complex64, SteadyError> {
    let v = require_symmetric(params)?;
    if !intensity.is_finite() || intensity < 0.0 {
        return Err(SteadyError::BadIntensity(intensity));
    }
    Ok(v.eps / Complex64::new(v.gamma, v.delta - v.j + 2.0 * v.chi * intensity))
}

/// Turning-point analysis of the symmetric intensity cubic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BistabilityAnalysis {
    pub possible: bool,
    /// Smaller turning intensity `r₋`, when both turning points are positive.
    pub lower_turning: Option<f64>,
    /// Larger turning intensity `r₊`.
    pub upper_turning: Option<f64>,
    gamma: f64,
    delta: f64,
    chi: f64,
    j: f64,
}

impl BistabilityAnalysis {
    fn values(&self, eps2: f64) -> SymmetricValues {
        SymmetricValues {
            eps: Complex64::new(eps2.max(0.0).sqrt(), 0.0),
            gamma: self.gamma,
            delta: self.delta,
            chi: self.chi,
            j: self.j,
        }
    }

    /// Number of non-negative intensity roots (with multiplicity) at pump power `eps2`.
    pub fn root_count_at(&self, eps2: f64) -> usize {
        intensity_roots(&self.values(eps2), eps2).len()
    }

    /// Pump power on the S-curve at intensity `intensity`.
    pub fn pump_power_at(&self, intensity: f64) -> f64 {
        let [c3, c2, c1, _] = cubic_coefficients(&self.values(0.0), 0.0);
        ((c3 * intensity + c2) * intensity + c1) * intensity
    }

    /// Pump-power window `(low, high)` containing three steady states.
    pub fn pump_window(&self) -> Option<(f64, f64)> {
        let (lo, hi) = (self.lower_turning?, self.upper_turning?);
        let (a, b) = (self.pump_power_at(lo), self.pump_power_at(hi));
        Some((a.min(b), a.max(b)))
    }
}

pub fn bistability(params: &CouplerParams) -> Result<BistabilityAnalysis, SteadyError> {
    let v = require_symmetric(params)?;
    let detune = v.j - v.delta;
    let radicand = detune * detune - 3.0 * v.gamma * v.gamma;
    let (lower, upper) = if v.chi != 0.0 && radicand > 0.0 {
        let root = radicand.sqrt();
        let a = (2.0 * detune - root) / (6.0 * v.chi);
        let b = (2.0 * detune + root) / (6.0 * v.chi);
        let (lo, hi) = (a.min(b), a.max(b));
        if lo > 0.0 {
            (Some(lo), Some(hi))
        } else {
            (None, None)
        }
    } else {
        (None, None)
    };
    Ok(BistabilityAnalysis {
        possible: lower.is_some(),
        lower_turning: lower,
        upper_turning: upper,
        gamma: v.gamma,
        delta: v.delta,
        chi: v.chi,
        j: v.j,
    })
}

/// Budgets for the general steady-state solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub max_halvings: u32,
    /// Relaxation time for the integration fallback, in units of `1/min γ`.
    pub relax_time: f64,
    pub relative_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            max_halvings: 40,
            relax_time: 50.0,
            relative_tolerance: 1e-10,
        }
    }
}

fn pack(a1: Complex64, a2: Complex64) -> Vector4<f64> {
    Vector4::new(a1.re, a1.im, a2.re, a2.im)
}

fn unpack(x: &Vector4<f64>) -> (Complex64, Complex64) {
    (Complex64::new(x[0], x[1]), Complex64::new(x[2], x[3]))
}

fn tolerance(p: &CouplerParams, a1: Complex64, a2: Complex64, rel: f64) -> f64 {
    let scale = [
        p.eps1.norm(),
        p.eps2.norm(),
        p.gamma1 * a1.norm(),
        p.gamma2 * a2.norm(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    rel * scale
}

// Real 4×4 Jacobian built from the Wirtinger derivatives ∂F/∂α and ∂F/∂α*.
fn jacobian(p: &CouplerParams, a1: Complex64, a2: Complex64) -> Matrix4<f64> {
    let mut jac = Matrix4::zeros();
    let blocks = [
        // (row mode, column mode, dF/dz, dF/dz*)
        (
            0,
            0,
            -Complex64::new(p.gamma1, p.delta1) - 4.0 * I * p.chi1 * a1.norm_sqr(),
            -2.0 * I * p.chi1 * a1 * a1,
        ),
        (0, 1, I * p.j, Complex64::new(0.0, 0.0)),
        (1, 0, I * p.j, Complex64::new(0.0, 0.0)),
        (
            1,
            1,
            -Complex64::new(p.gamma2, p.delta2) - 4.0 * I * p.chi2 * a2.norm_sqr(),
            -2.0 * I * p.chi2 * a2 * a2,
        ),
    ];
    for (r, c, dz, dzc) in blocks {
        let dx = dz + dzc;
        let dy = I * (dz - dzc);
        jac[(2 * r, 2 * c)] = dx.re;
        jac[(2 * r + 1, 2 * c)] = dx.im;
        jac[(2 * r, 2 * c + 1)] = dy.re;
        jac[(2 * r + 1, 2 * c + 1)] = dy.im;
    }
    jac
}

fn residual_vec(p: &CouplerParams, x: &Vector4<f64>) -> Vector4<f64> {
    let (a1, a2) = unpack(x);
    let (f1, f2) = classical_rhs(p, a1, a2);
    pack(f1, f2)
}

fn max_residual(p: &CouplerParams, x: &Vector4<f64>) -> f64 {
    let (a1, a2) = unpack(x);
    let (f1, f2) = classical_rhs(p, a1, a2);
    f1.norm().max(f2.norm())
}

enum NewtonOutcome {
    Converged(Vector4<f64>),
    Stalled(Vector4<f64>),
}

fn damped_newton(
    p: &CouplerParams,
    mut x: Vector4<f64>,
    opts: &SolverOptions,
    iterations: &mut usize,
    best: &mut f64,
) -> NewtonOutcome {
    loop {
        let res = max_residual(p, &x);
        *best = best.min(res);
        let (a1, a2) = unpack(&x);
        if res <= tolerance(p, a1, a2, opts.relative_tolerance) {
            return NewtonOutcome::Converged(x);
        }
        if *iterations >= opts.max_iterations {
            return NewtonOutcome::Stalled(x);
        }
        *iterations += 1;
        let f = residual_vec(p, &x);
        let Some(step) = jacobian(p, a1, a2).lu().solve(&(-f)) else {
            return NewtonOutcome::Stalled(x);
        };
        let merit = f.norm();
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = x + step * lambda;
            if residual_vec(p, &trial).norm() < merit {
                accepted = Some(trial);
                break;
            }
            lambda *= 0.5;
        }
        match accepted {
            Some(next) => x = next,
            None => return NewtonOutcome::Stalled(x),
        }
    }
}

/// Fourth-order Runge–Kutta relaxation of the classical equations.
fn relax(
    p: &CouplerParams,
    mut a1: Complex64,
    mut a2: Complex64,
    duration: f64,
) -> (Complex64, Complex64) {
    let mut t = 0.0;
    while t < duration {
        let rate = p.gamma1.max(p.gamma2)
            + p.delta1.abs().max(p.delta2.abs())
            + p.j.abs()
            + 4.0 * (p.chi1.abs() * a1.norm_sqr()).max(p.chi2.abs() * a2.norm_sqr());
        let h = (0.05 / rate).min(duration - t);
        let (k1a, k1b) = classical_rhs(p, a1, a2);
        let (k2a, k2b) = classical_rhs(p, a1 + k1a * (h / 2.0), a2 + k1b * (h / 2.0));
        let (k3a, k3b) = classical_rhs(p, a1 + k2a * (h / 2.0), a2 + k2b * (h / 2.0));
        let (k4a, k4b) = classical_rhs(p, a1 + k3a * h, a2 + k3b * h);
        a1 += (k1a + 2.0 * k2a + 2.0 * k3a + k4a) * (h / 6.0);
        a2 += (k1b + 2.0 * k2b + 2.0 * k3b + k4b) * (h / 6.0);
        t += h;
        if !(a1.norm().is_finite() && a2.norm().is_finite()) {
            break;
        }
    }
    (a1, a2)
}

/// Steady amplitudes of the linear (χ = 0) coupler, a natural starting guess
/// for [`general_steady_state`].
pub fn linear_solution(p: &CouplerParams) -> (Complex64, Complex64) {
    let d1 = Complex64::new(p.gamma1, p.delta1);
    let d2 = Complex64::new(p.gamma2, p.delta2);
    let ij = I * p.j;
    let det = d1 * d2 + p.j * p.j;
    (
        (p.eps1 * d2 + ij * p.eps2) / det,
        (p.eps2 * d1 + ij * p.eps1) / det,
    )
}

/// Fixed point of the classical equations for arbitrary (validated) parameters.
///
/// Damped Newton from `guess`; when Newton stalls, the equations are
/// integrated for `relax_time / min γ` and Newton is restarted once.
pub fn general_steady_state(
    params: &CouplerParams,
    guess: (Complex64, Complex64),
    opts: &SolverOptions,
) -> Result<SteadyState, SteadyError> {
    params.validate()?;
    let mut iterations = 0;
    let mut best = f64::INFINITY;
    let start = pack(guess.0, guess.1);
    let stalled = match damped_newton(params, start, opts, &mut iterations, &mut best) {
        NewtonOutcome::Converged(x) => {
            let (a1, a2) = unpack(&x);
            return Ok(SteadyState::from_amplitudes(params, a1, a2));
        }
        NewtonOutcome::Stalled(x) => x,
    };
    let (a1, a2) = unpack(&stalled);
    let (r1, r2) = relax(
        params,
        a1,
        a2,
        opts.relax_time / params.gamma1.min(params.gamma2),
    );
    let restart_budget = SolverOptions {
        max_iterations: iterations + opts.max_iterations,
        ..*opts
    };
    match damped_newton(
        params,
        pack(r1, r2),
        &restart_budget,
        &mut iterations,
        &mut best,
    ) {
        NewtonOutcome::Converged(x) => {
            let (a1, a2) = unpack(&x);
            Ok(SteadyState::from_amplitudes(params, a1, a2))
        }
        NewtonOutcome::Stalled(_) => Err(SteadyError::NoConvergence {
            iterations,
            best_residual: best,
        }),
    }
}
