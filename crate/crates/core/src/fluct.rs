//! Linearised (Ornstein–Uhlenbeck) fluctuations around the symmetric steady
//! state and their intracavity spectral matrix.
//!
//! Basis order throughout: `(δα₁, δα₁⁺, δα₂, δα₂⁺)`. The fluctuations obey
//! `d(δα)/dt = −A δα + B η` with diffusion `D = BBᵀ`, and the stationary
//! spectrum is `S(ω) = (A + iω)⁻¹ D (Aᵀ − iω)⁻¹`.

use nalgebra::Matrix4;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CouplerParams, ParamError, SymmetricValues};
use crate::steady::SteadyState;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub type CMatrix4 = Matrix4<Complex64>;

/// Relative band around zero in which an eigenvalue real part counts as marginal.
pub const MARGINAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FluctError {
    #[error(transparent)]
    InvalidParams(#[from] ParamError),
    #[error("linearisation is only defined for symmetric parameters")]
    NotSymmetric,
    #[error("steady state is not mode-symmetric (alpha1 = {alpha1}, alpha2 = {alpha2})")]
    AsymmetricState {
        alpha1: Complex64,
        alpha2: Complex64,
    },
    #[error(
        "linearisation invalid: drift eigenvalue real parts {min_real_part:e} <= 0 ({stability:?})"
    )]
    InvalidLinearization {
        min_real_part: f64,
        stability: Stability,
    },
    #[error("A + i*omega is numerically singular at omega = {omega}")]
    NearSingular { omega: f64 },
    #[error("numeric eigenvalue decomposition of the drift matrix failed")]
    Eigen,
}

/// Sign classification of the smallest drift eigenvalue real part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Stable,
    Marginal,
    Unstable,
}

impl Stability {
    pub fn classify(eigenvalues: &[Complex64]) -> Self {
        let scale = eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
        let min_re = min_real_part(eigenvalues);
        if min_re.abs() <= MARGINAL_TOLERANCE * scale {
            Stability::Marginal
        } else if min_re > 0.0 {
            Stability::Stable
        } else {
            Stability::Unstable
        }
    }
}

pub fn min_real_part(eigenvalues: &[Complex64]) -> f64 {
    eigenvalues
        .iter()
        .map(|l| l.re)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationModel {
    pub params: CouplerParams,
    pub alpha: Complex64,
    pub drift: CMatrix4,
    /// Diagonal diffusion `BBᵀ` (complex; not positive definite).
    pub diffusion: CMatrix4,
    pub eigenvalues: [Complex64; 4],
    pub stability: Stability,
    pub valid: bool,
}

fn symmetric_values(params: &CouplerParams) -> Result<SymmetricValues, FluctError> {
    params.validate()?;
    params.symmetric_values().ok_or(FluctError::NotSymmetric)
}

/// Drift matrix for the symmetric amplitude `alpha`.
pub fn drift_matrix(v: &SymmetricValues, alpha: Complex64) -> CMatrix4 {
    let zero = Complex64::new(0.0, 0.0);
    let d = Complex64::new(v.gamma, v.delta + 4.0 * v.chi * alpha.norm_sqr());
    let pump = 2.0 * I * v.chi * alpha * alpha;
    let pump_c = -2.0 * I * v.chi * alpha.conj() * alpha.conj();
    let ij = I * v.j;
    #[rustfmt::skip]
    let m = CMatrix4::new(
        d,      pump,    -ij,    zero,
        pump_c, d.conj(), zero,  ij,
        -ij,    zero,     d,     pump,
        zero,   ij,       pump_c, d.conj(),
    );
    m
}

/// Diagonal diffusion `(−2iχα², 2iχα*², −2iχα², 2iχα*²)`.
pub fn diffusion_matrix(v: &SymmetricValues, alpha: Complex64) -> CMatrix4 {
    let a = -2.0 * I * v.chi * alpha * alpha;
    let b = 2.0 * I * v.chi * alpha.conj() * alpha.conj();
    CMatrix4::from_diagonal(&nalgebra::Vector4::new(a, b, a, b))
}

/// Eigenvalues of a complex 4×4 matrix via the complex Schur form.
pub fn numeric_eigenvalues(m: &CMatrix4) -> Result<[Complex64; 4], FluctError> {
    // Complex Schur form: the eigenvalues sit on the diagonal of T once the
    // iteration has converged (subdiagonal entries are merely negligible).
    let schur = m.try_schur(f64::EPSILON, 10_000).ok_or(FluctError::Eigen)?;
    let (_, t) = schur.unpack();
    let values = [t[(0, 0)], t[(1, 1)], t[(2, 2)], t[(3, 3)]];
    if values
        .iter()
        .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(FluctError::Eigen);
    }
    Ok(values)
}

/// Closed-form drift eigenvalues of the symmetric system at intensity `intensity`,
/// in the published form.
///
/// The second pair is exact for [`drift_matrix`]; the first pair is not (it
/// agrees only when `χI = 0`). [`mode_block_eigenvalues`] gives the exact
/// values of the drift matrix.
pub fn eigenvalues_analytic(
    params: &CouplerParams,
    intensity: f64,
) -> Result<[Complex64; 4], FluctError> {
    let v = symmetric_values(params)?;
    let k = v.chi * intensity;
    let first = Complex64::new(
        4.0 * k * (3.0 * k + 2.0 * (v.delta - v.j)) - (v.j + v.delta).powi(2),
        0.0,
    )
    .sqrt();
    let second = Complex64::new(
        4.0 * k * (2.0 * (v.j - v.delta) - 3.0 * k) - (v.j - v.delta).powi(2),
        0.0,
    )
    .sqrt();
    let g = Complex64::new(v.gamma, 0.0);
    Ok([g + first, g - first, g + second, g - second])
}

/// Exact eigenvalues of [`drift_matrix`]: in the sum/difference basis the
/// drift splits into two 2×2 blocks with diagonal `γ ± i(Δ ∓ J + 4χI)` and
/// off-diagonal product `4χ²I²`, giving `γ ± √(4χ²I² − (Δ ∓ J + 4χI)²)`.
pub fn mode_block_eigenvalues(
    params: &CouplerParams,
    intensity: f64,
) -> Result<[Complex64; 4], FluctError> {
    let v = symmetric_values(params)?;
    let k = v.chi * intensity;
    let root = |detuning: f64| {
        let shifted = detuning + 4.0 * k;
        Complex64::new((2.0 * k - shifted) * (2.0 * k + shifted), 0.0).sqrt()
    };
    let difference = root(v.delta + v.j);
    let sum = root(v.delta - v.j);
    let g = Complex64::new(v.gamma, 0.0);
    Ok([g + difference, g - difference, g + sum, g - sum])
}

/// Strictly positive real parts for every eigenvalue of the published closed
/// form; for Δ = J this is the intensity bound
/// [`matched_detuning_intensity_bound`]. [`FluctuationModel::valid`] instead
/// uses the numeric eigenvalues of the drift matrix.
pub fn linearization_valid(params: &CouplerParams, intensity: f64) -> Result<bool, FluctError> {
    Ok(stability_at(params, intensity)? == Stability::Stable)
}

pub fn stability_at(params: &CouplerParams, intensity: f64) -> Result<Stability, FluctError> {
    Ok(Stability::classify(&eigenvalues_analytic(
        params, intensity,
    )?))
}

/// Δ = J validity bound on the intensity, `√((γ² + 4J²)/(12χ²))`.
pub fn matched_detuning_intensity_bound(gamma: f64, j: f64, chi: f64) -> f64 {
    ((gamma * gamma + 4.0 * j * j) / (12.0 * chi * chi)).sqrt()
}

/// Smallest max-abs distance between two 4-element multisets over all pairings.
pub fn multiset_distance(a: &[Complex64; 4], b: &[Complex64; 4]) -> f64 {
    let mut best = f64::INFINITY;
    let mut perm = [0usize, 1, 2, 3];
    // Heap's algorithm over the 24 orderings of `b`.
    let mut c = [0usize; 4];
    let mut eval = |perm: &[usize; 4]| {
        let d = (0..4)
            .map(|i| (a[i] - b[perm[i]]).norm())
            .fold(0.0, f64::max);
        best = best.min(d);
    };
    eval(&perm);
    let mut i = 1;
    while i < 4 {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            eval(&perm);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

impl FluctuationModel {
    /// Linearises around the symmetric steady state `ss`.
    pub fn build(params: &CouplerParams, ss: &SteadyState) -> Result<Self, FluctError> {
        symmetric_values(params)?;
        let scale = ss.alpha1.norm().max(ss.alpha2.norm());
        if (ss.alpha1 - ss.alpha2).norm() > 1e-8 * scale {
            return Err(FluctError::AsymmetricState {
                alpha1: ss.alpha1,
                alpha2: ss.alpha2,
            });
        }
        Self::from_amplitude(params, ss.alpha1)
    }

    pub fn from_amplitude(params: &CouplerParams, alpha: Complex64) -> Result<Self, FluctError> {
        let v = symmetric_values(params)?;
        let drift = drift_matrix(&v, alpha);
        let diffusion = diffusion_matrix(&v, alpha);
        let eigenvalues = numeric_eigenvalues(&drift)?;
        let stability = Stability::classify(&eigenvalues);
        Ok(Self {
            params: *params,
            alpha,
            drift,
            diffusion,
            eigenvalues,
            stability,
            valid: stability == Stability::Stable,
        })
    }

    pub fn intensity(&self) -> f64 {
        self.alpha.norm_sqr()
    }

    pub fn min_real_part(&self) -> f64 {
        min_real_part(&self.eigenvalues)
    }

    /// `S(ω)` from two LU solves; no explicit inverse is formed.
    pub fn spectral_matrix(&self, omega: f64) -> Result<SpectralMatrix, FluctError> {
        if !self.valid {
            return Err(FluctError::InvalidLinearization {
                min_real_part: self.min_real_part(),
                stability: self.stability,
            });
        }
        let shift = CMatrix4::identity() * (I * omega);
        let left = (self.drift + shift).lu();
        if near_singular(&left) {
            return Err(FluctError::NearSingular { omega });
        }
        // (A + iω) X = D
        let x = left
            .solve(&self.diffusion)
            .ok_or(FluctError::NearSingular { omega })?;
        // S (Aᵀ − iω) = X  ⇔  (A − iω) Sᵀ = Xᵀ
        let right = (self.drift - shift).lu();
        if near_singular(&right) {
            return Err(FluctError::NearSingular { omega });
        }
        let st = right
            .solve(&x.transpose())
            .ok_or(FluctError::NearSingular { omega })?;
        Ok(SpectralMatrix {
            omega,
            s: st.transpose(),
        })
    }

    /// `‖(A + iω)S(Aᵀ − iω) − D‖ / ‖D‖` (absolute when `D = 0`).
    pub fn defining_residual(&self, spectrum: &SpectralMatrix) -> f64 {
        let shift = CMatrix4::identity() * (I * spectrum.omega);
        let back = (self.drift + shift) * spectrum.s * (self.drift.transpose() - shift);
        let err = (back - self.diffusion).norm();
        let scale = self.diffusion.norm();
        if scale > 0.0 {
            err / scale
        } else {
            err
        }
    }
}

fn near_singular(lu: &nalgebra::LU<Complex64, nalgebra::U4, nalgebra::U4>) -> bool {
    let u = lu.u();
    let pivots: Vec<f64> = (0..4).map(|i| u[(i, i)].norm()).collect();
    let max = pivots.iter().cloned().fold(0.0, f64::max);
    let min = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
    max == 0.0 || min <= 1e-14 * max
}

/// Intracavity spectral correlation matrix at one analysis frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMatrix {
    pub omega: f64,
    pub s: CMatrix4,
}

/// JSON shape of a spectral matrix: 16 row-major `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMatrixRecord {
    pub omega: f64,
    pub entries: Vec<[f64; 2]>,
}

impl From<&SpectralMatrix> for SpectralMatrixRecord {
    fn from(m: &SpectralMatrix) -> Self {
        let entries = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| [m.s[(r, c)].re, m.s[(r, c)].im])
            .collect();
        Self {
            omega: m.omega,
            entries,
        }
    }
}

impl TryFrom<&SpectralMatrixRecord> for SpectralMatrix {
    type Error = String;

    fn try_from(rec: &SpectralMatrixRecord) -> Result<Self, Self::Error> {
        if rec.entries.len() != 16 {
            return Err(format!("expected 16 entries, got {}", rec.entries.len()));
        }
        let s = CMatrix4::from_fn(|r, c| {
            let [re, im] = rec.entries[4 * r + c];
            Complex64::new(re, im)
        });
        Ok(Self {
            omega: rec.omega,
            s,
        })
    }
}
