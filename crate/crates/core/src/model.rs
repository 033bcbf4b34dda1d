//! Physical parameters of the coupler and the frequency grids used for spectra.
//!
//! All rates are measured in units of `gamma1`, so canonical runs set
//! `gamma1 = 1`; analysis frequencies use the same unit.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single violated parameter invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{field} must be positive (got {value})")]
    NonPositive { field: &'static str, value: f64 },
    #[error("{field} must be a finite real number (got {value})")]
    NonFinite { field: &'static str, value: f64 },
    #[error("{field} must have finite real and imaginary parts (got {value})")]
    NonFiniteComplex {
        field: &'static str,
        value: Complex64,
    },
    #[error("invalid parameters: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Multiple(Vec<ParamError>),
}

/// Pumps, damping, detuning, Kerr strength and coupling for both modes.
///
/// Pumps are complex; everything else is real.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplerParams {
    pub eps1: Complex64,
    pub eps2: Complex64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub chi1: f64,
    pub chi2: f64,
    #[serde(rename = "J")]
    pub j: f64,
}

impl CouplerParams {
    /// Both modes share the same pump, damping, detuning and nonlinearity.
    pub fn symmetric_set(eps: Complex64, gamma: f64, delta: f64, chi: f64, j: f64) -> Self {
        Self {
            eps1: eps,
            eps2: eps,
            gamma1: gamma,
            gamma2: gamma,
            delta1: delta,
            delta2: delta,
            chi1: chi,
            chi2: chi,
            j,
        }
    }

    /// The operating point used throughout the figures: ε = 10³, γ = 1,
    /// Δ = J = 10, with the given Kerr strength.
    pub fn canonical(chi: f64) -> Self {
        Self::symmetric_set(Complex64::new(1.0e3, 0.0), 1.0, 10.0, chi, 10.0)
    }

    /// Checks every invariant and returns the parameters unchanged when they
    /// all hold. Each violation is reported by field name.
    pub fn validate(self) -> Result<Self, ParamError> {
        let mut errors = Vec::new();
        for (field, value) in [("gamma1", self.gamma1), ("gamma2", self.gamma2)] {
            if !value.is_finite() {
                errors.push(ParamError::NonFinite { field, value });
            } else if value <= 0.0 {
                errors.push(ParamError::NonPositive { field, value });
            }
        }
        for (field, value) in [
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("chi1", self.chi1),
            ("chi2", self.chi2),
            ("J", self.j),
        ] {
            if !value.is_finite() {
                errors.push(ParamError::NonFinite { field, value });
            }
        }
        for (field, value) in [("eps1", self.eps1), ("eps2", self.eps2)] {
            if !value.re.is_finite() || !value.im.is_finite() {
                errors.push(ParamError::NonFiniteComplex { field, value });
            }
        }
        match errors.len() {
            0 => Ok(self),
            1 => Err(errors.pop().unwrap()),
            _ => Err(ParamError::Multiple(errors)),
        }
    }

    /// Exact (not tolerance-based) equality of the per-mode parameters.
    pub fn is_symmetric(&self) -> bool {
        self.eps1 == self.eps2
            && self.gamma1 == self.gamma2
            && self.delta1 == self.delta2
            && self.chi1 == self.chi2
    }

    /// Relabels mode 1 as mode 2 and vice versa.
    pub fn swapped(&self) -> Self {
        Self {
            eps1: self.eps2,
            eps2: self.eps1,
            gamma1: self.gamma2,
            gamma2: self.gamma1,
            delta1: self.delta2,
            delta2: self.delta1,
            chi1: self.chi2,
            chi2: self.chi1,
            j: self.j,
        }
    }

    /// Shared (ε, γ, Δ, χ) of a symmetric parameter set.
    pub fn symmetric_values(&self) -> Option<SymmetricValues> {
        self.is_symmetric().then_some(SymmetricValues {
            eps: self.eps1,
            gamma: self.gamma1,
            delta: self.delta1,
            chi: self.chi1,
            j: self.j,
        })
    }
}

/// The common values of a symmetric parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricValues {
    pub eps: Complex64,
    pub gamma: f64,
    pub delta: f64,
    pub chi: f64,
    pub j: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("frequency grid is empty")]
    Empty,
    #[error("frequency grid value at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("frequency grid is not strictly increasing at index {index}")]
    NotIncreasing { index: usize },
    #[error("frequency grid needs at least two points for a range")]
    TooFewPoints,
}

/// Strictly increasing, finite analysis frequencies (units of `gamma1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FrequencyGrid(Vec<f64>);

impl FrequencyGrid {
    pub const DEFAULT_MAX: f64 = 30.0;
    pub const DEFAULT_POINTS: usize = 600;

    pub fn new(values: Vec<f64>) -> Result<Self, GridError> {
        if values.is_empty() {
            return Err(GridError::Empty);
        }
        for (index, w) in values.iter().enumerate() {
            if !w.is_finite() {
                return Err(GridError::NonFinite { index });
            }
            if index > 0 && *w <= values[index - 1] {
                return Err(GridError::NotIncreasing { index });
            }
        }
        Ok(Self(values))
    }

    /// `points` evenly spaced values from `start` to `end` inclusive.
    pub fn linspace(start: f64, end: f64, points: usize) -> Result<Self, GridError> {
        if points < 2 {
            return Err(GridError::TooFewPoints);
        }
        let step = (end - start) / (points - 1) as f64;
        Self::new((0..points).map(|i| start + step * i as f64).collect())
    }

    /// 600 points over [0, 30].
    pub fn default_grid() -> Self {
        Self::linspace(0.0, Self::DEFAULT_MAX, Self::DEFAULT_POINTS).expect("static grid is valid")
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Largest spacing between neighbouring points.
    pub fn max_step(&self) -> f64 {
        self.0.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for FrequencyGrid {
    type Error = GridError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<FrequencyGrid> for Vec<f64> {
    fn from(grid: FrequencyGrid) -> Self {
        grid.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_damping_is_rejected_by_name() {
        let mut p = CouplerParams::canonical(1e-6);
        p.gamma1 = 0.0;
        let err = p.validate().unwrap_err();
        assert_eq!(err.to_string(), "gamma1 must be positive (got 0)");
    }

    #[test]
    fn every_violation_is_reported() {
        let mut p = CouplerParams::canonical(1e-6);
        p.gamma1 = -1.0;
        p.gamma2 = 0.0;
        p.j = f64::NAN;
        match p.validate().unwrap_err() {
            ParamError::Multiple(errs) => {
                assert_eq!(errs.len(), 3);
                let text = ParamError::Multiple(errs).to_string();
                assert!(text.contains("gamma1"));
                assert!(text.contains("gamma2"));
                assert!(text.contains("J must be a finite real"));
            }
            other => panic!("expected several errors, got {other:?}"),
        }
    }

    #[test]
    fn canonical_set_is_accepted_and_symmetric() {
        let p = CouplerParams::canonical(1e-6);
        assert_eq!(p.validate(), Ok(p));
        assert!(p.is_symmetric());
        assert_eq!(p.eps1, Complex64::new(1e3, 0.0));
        assert_eq!(p.j, 10.0);
        assert_eq!(p.delta1, 10.0);
    }

    #[test]
    fn vacuum_drive_is_legal() {
        let mut p = CouplerParams::canonical(1e-6);
        p.eps1 = Complex64::new(0.0, 0.0);
        p.eps2 = Complex64::new(0.0, 0.0);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn symmetry_is_exact() {
        let mut p = CouplerParams::canonical(1e-6);
        p.eps2 = p.eps1 * 2.0;
        assert!(!p.is_symmetric());

        let mut q = CouplerParams::canonical(1e-6);
        q.chi2 = q.chi1 + 1e-15;
        assert!(!q.is_symmetric());
    }

    #[test]
    fn grid_rejects_bad_values() {
        assert_eq!(FrequencyGrid::new(vec![]), Err(GridError::Empty));
        assert_eq!(
            FrequencyGrid::new(vec![0.0, 1.0, 1.0]),
            Err(GridError::NotIncreasing { index: 2 })
        );
        assert_eq!(
            FrequencyGrid::new(vec![0.0, f64::INFINITY]),
            Err(GridError::NonFinite { index: 1 })
        );
        let g = FrequencyGrid::default_grid();
        assert_eq!(g.len(), 600);
        assert_eq!(g.values()[0], 0.0);
        assert!((g.values()[599] - 30.0).abs() < 1e-12);
    }

    #[test]
    fn grid_json_round_trip_revalidates() {
        let g = FrequencyGrid::linspace(0.0, 2.0, 5).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<FrequencyGrid>(&text).unwrap(), g);
        assert!(serde_json::from_str::<FrequencyGrid>("[1.0, 0.5]").is_err());
    }

    fn arb_params() -> impl Strategy<Value = CouplerParams> {
        (
            (-1e3..1e3f64, -1e3..1e3f64),
            (-1e3..1e3f64, -1e3..1e3f64),
            -2.0..2.0f64,
            -2.0..2.0f64,
            -20.0..20.0f64,
            -20.0..20.0f64,
            -1e-4..1e-4f64,
            -1e-4..1e-4f64,
            -20.0..20.0f64,
        )
            .prop_map(|(e1, e2, g1, g2, d1, d2, c1, c2, j)| CouplerParams {
                eps1: Complex64::new(e1.0, e1.1),
                eps2: Complex64::new(e2.0, e2.1),
                gamma1: g1,
                gamma2: g2,
                delta1: d1,
                delta2: d2,
                chi1: c1,
                chi2: c2,
                j,
            })
    }

    proptest! {
        #[test]
        fn validate_is_idempotent(p in arb_params()) {
            let once = p.validate();
            let twice = once.clone().and_then(CouplerParams::validate);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn symmetry_survives_mode_swap(p in arb_params(), make_sym in any::<bool>()) {
            let p = if make_sym {
                CouplerParams { eps2: p.eps1, gamma2: p.gamma1, delta2: p.delta1, chi2: p.chi1, ..p }
            } else {
                p
            };
            prop_assert_eq!(p.is_symmetric(), p.swapped().is_symmetric());
        }
    }
}
