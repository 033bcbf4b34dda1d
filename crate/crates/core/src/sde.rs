//! Positive-P stochastic integration of the full nonlinear coupler equations.
//!
//! Each trajectory evolves the four independent complex variables
//! `(α₁, α₁⁺, α₂, α₂⁺)` under the Itô equations
//!
//! ```text
//! dα₁  = [ε₁  − (γ₁+iΔ₁)α₁  − 2iχ₁α₁⁺α₁²  + iJα₂ ] dt + √(−2iχ₁α₁²)  dW₁
//! dα₁⁺ = [ε₁* − (γ₁−iΔ₁)α₁⁺ + 2iχ₁α₁⁺²α₁  − iJα₂⁺] dt + √( 2iχ₁α₁⁺²) dW₂
//! ```
//!
//! and likewise for mode 2. Ensemble averages of these variables give
//! normally ordered quantum averages.
//!
//! Noise comes from one ChaCha8 stream per trajectory (stream index =
//! trajectory index), so results never depend on how trajectories are
//! scheduled across threads. Ensemble moments are reduced in trajectory
//! order with compensated summation; the spectrum estimator accumulates per
//! partition, so its output is fixed by `(seed, partitions)`.

use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::QuadratureCovariance;
use crate::fluct::{FluctError, FluctuationModel};
use crate::model::{CouplerParams, FrequencyGrid, ParamError};
use crate::steady::{
    general_steady_state, linear_solution, steady_amplitude, symmetric_intensities, SolverOptions,
    SteadyError,
};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Midpoint iterations per semi-implicit step.
const MIDPOINT_ITERATIONS: usize = 3;

/// Record length required by the spectrum estimator, in correlation times.
pub const MIN_RECORD_CORRELATION_TIMES: f64 = 20.0;

/// Lag-window half-width of the spectrum estimator, in correlation times.
pub const LAG_WINDOW_CORRELATION_TIMES: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdeError {
    #[error(transparent)]
    InvalidParams(#[from] ParamError),
    #[error("invalid SDE configuration: {0}")]
    Config(String),
    #[error("could not build the classical starting state: {0}")]
    Steady(#[from] SteadyError),
    #[error(transparent)]
    Fluct(#[from] FluctError),
    #[error(
        "only {survivors} of {n_traj} trajectories stayed bounded; statistics need at least 2"
    )]
    TooManyDiverged { survivors: usize, n_traj: usize },
    #[error(
        "record length {record} is shorter than {required} \
         ({MIN_RECORD_CORRELATION_TIMES} correlation times of {correlation_time})"
    )]
    RecordTooShort {
        record: f64,
        required: f64,
        correlation_time: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Stratonovich midpoint with fixed-point iteration (Itô drift corrected).
    SemiImplicit,
    /// Explicit Euler–Maruyama on the Itô equations.
    Euler,
}

/// Sign convention for the noise amplitudes `√(∓2iχα²)`.
///
/// Both branches give identically distributed ensembles because the Wiener
/// increments are symmetric; the choice is exposed so that can be tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseBranch {
    Principal,
    Negated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Classical steady state (root `root_index` for symmetric parameters).
    Classical,
    Vacuum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdeConfig {
    /// Time step, units of `1/γ₁`.
    pub dt: f64,
    pub t_end: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// Time discarded before statistics are gathered.
    pub burn_in: f64,
    pub scheme: Scheme,
    /// Trajectory batches; fixes the spectrum reduction order and its error bars.
    pub partitions: usize,
    /// Spacing of recorded samples; a whole number of steps.
    pub sample_interval: f64,
    /// Amplitude magnitude beyond which a trajectory counts as diverged.
    /// Defaults to `10⁶ · max(1, |ε_j|/γ_j)`.
    pub divergence_bound: Option<f64>,
    pub noise_branch: NoiseBranch,
    /// Each step's Wiener increment is the sum of this many independent
    /// sub-increments. A run at `(dt, 2)` follows the same Brownian path as
    /// one at `(dt/2, 1)` with the same seed.
    pub noise_substeps: u32,
    pub initial: InitialState,
    /// Which classical root to start from (ascending intensity).
    pub root_index: usize,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 60.0,
            n_traj: 10_000,
            seed: 42,
            burn_in: 20.0,
            scheme: Scheme::SemiImplicit,
            partitions: 20,
            sample_interval: 0.01,
            divergence_bound: None,
            noise_branch: NoiseBranch::Principal,
            noise_substeps: 1,
            initial: InitialState::Classical,
            root_index: 0,
        }
    }
}

/// Step counts derived from a validated configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepLayout {
    pub burn_steps: u64,
    pub stride: u64,
    /// Recorded samples per trajectory, at `burn_in + m · sample_interval`.
    pub samples: usize,
}

impl StepLayout {
    pub fn total_steps(&self) -> u64 {
        self.burn_steps + (self.samples as u64 - 1) * self.stride
    }
}

fn whole_steps(name: &str, span: f64, dt: f64) -> Result<u64, SdeError> {
    let steps = (span / dt).round();
    if (steps * dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(SdeError::Config(format!(
            "{name} ({span}) is not a whole number of steps of {dt}"
        )));
    }
    Ok(steps as u64)
}

impl SdeConfig {
    pub fn validate(&self) -> Result<StepLayout, SdeError> {
        let fail = |msg: String| Err(SdeError::Config(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("dt must be positive (got {})", self.dt));
        }
        if !(self.burn_in >= 0.0 && self.burn_in.is_finite()) {
            return fail(format!(
                "burn_in must be non-negative (got {})",
                self.burn_in
            ));
        }
        if !(self.t_end > self.burn_in && self.t_end.is_finite()) {
            return fail(format!(
                "t_end ({}) must exceed burn_in ({})",
                self.t_end, self.burn_in
            ));
        }
        if self.n_traj < 2 {
            return fail(format!("n_traj must be at least 2 (got {})", self.n_traj));
        }
        if self.partitions == 0 || self.partitions > self.n_traj {
            return fail(format!(
                "partitions must lie in 1..=n_traj (got {})",
                self.partitions
            ));
        }
        if self.noise_substeps == 0 {
            return fail("noise_substeps must be at least 1".into());
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return fail(format!(
                "sample_interval must be positive (got {})",
                self.sample_interval
            ));
        }
        if let Some(b) = self.divergence_bound {
            if b.is_nan() || b <= 0.0 {
                return fail(format!("divergence_bound must be positive (got {b})"));
            }
        }
        let burn_steps = whole_steps("burn_in", self.burn_in, self.dt)?;
        let stride = whole_steps("sample_interval", self.sample_interval, self.dt)?.max(1);
        let record = self.t_end - self.burn_in;
        let samples = (record / self.sample_interval + 1e-9).floor() as usize;
        if samples < 2 {
            return fail(format!(
                "record length {record} holds fewer than two samples of {}",
                self.sample_interval
            ));
        }
        Ok(StepLayout {
            burn_steps,
            stride,
            samples,
        })
    }

    fn bound_for(&self, params: &CouplerParams) -> f64 {
        self.divergence_bound.unwrap_or_else(|| {
            let scale = (params.eps1.norm() / params.gamma1)
                .max(params.eps2.norm() / params.gamma2)
                .max(1.0);
            1e6 * scale
        })
    }
}

/// Independent standard-normal Wiener increments for one trajectory.
pub struct NoiseStream {
    rng: ChaCha8Rng,
    scale: f64,
    substeps: u32,
}

impl NoiseStream {
    pub fn new(seed: u64, trajectory: u64, dt: f64, substeps: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trajectory);
        Self {
            rng,
            scale: (dt / f64::from(substeps)).sqrt(),
            substeps,
        }
    }

    /// Four increments of variance `dt`.
    pub fn increments(&mut self) -> [f64; 4] {
        let mut dw = [0.0; 4];
        for _ in 0..self.substeps {
            for w in &mut dw {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *w += z * self.scale;
            }
        }
        dw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementCheck {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    /// `|mean| < 4 √(dt/N)`.
    pub mean_ok: bool,
    /// Variance within 1 % of `dt`.
    pub variance_ok: bool,
}

/// Draws `count` increments from trajectory 0's stream and checks their
/// first two moments.
pub fn increment_self_test(seed: u64, dt: f64, count: usize) -> IncrementCheck {
    let mut stream = NoiseStream::new(seed, 0, dt, 1);
    let mut sum = Compensated::default();
    let mut sum_sq = Compensated::default();
    let mut drawn = 0;
    while drawn < count {
        for w in stream.increments().into_iter().take(count - drawn) {
            sum.add(w);
            sum_sq.add(w * w);
            drawn += 1;
        }
    }
    let n = count as f64;
    let mean = sum.value() / n;
    let variance = (sum_sq.value() - n * mean * mean) / (n - 1.0);
    IncrementCheck {
        count,
        mean,
        variance,
        mean_ok: mean.abs() < 4.0 * (dt / n).sqrt(),
        variance_ok: (variance / dt - 1.0).abs() < 0.01,
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

type State = [Complex64; 4];

/// Per-step constants of the equations of motion.
struct Kernel {
    eps: [Complex64; 2],
    decay: [Complex64; 2],
    chi: [f64; 2],
    j: f64,
    noise: [Complex64; 2],
    noise_plus: [Complex64; 2],
    scheme: Scheme,
    negate: bool,
}

/// Principal branch of `√(c α²)` given `root = √c` (principal): `±root·α`.
#[inline]
fn principal_product(root: Complex64, alpha: Complex64, negate: bool) -> Complex64 {
    let s = root * alpha;
    let flip = s.re < 0.0 || (s.re == 0.0 && s.im < 0.0);
    if flip != negate {
        -s
    } else {
        s
    }
}

impl Kernel {
    fn new(params: &CouplerParams, config: &SdeConfig) -> Self {
        let chi = [params.chi1, params.chi2];
        Self {
            eps: [params.eps1, params.eps2],
            decay: [
                Complex64::new(params.gamma1, params.delta1),
                Complex64::new(params.gamma2, params.delta2),
            ],
            chi,
            j: params.j,
            noise: chi.map(|c| (-2.0 * I * c).sqrt()),
            noise_plus: chi.map(|c| (2.0 * I * c).sqrt()),
            scheme: config.scheme,
            negate: config.noise_branch == NoiseBranch::Negated,
        }
    }

    /// Itô drift, plus the Stratonovich correction `±iχ` when `stratonovich`.
    #[inline]
    fn drift(&self, x: &State, stratonovich: bool) -> State {
        let ij = I * self.j;
        let mut out = [ZERO; 4];
        for m in 0..2 {
            let (a, p) = (x[2 * m], x[2 * m + 1]);
            let (a_o, p_o) = (x[2 * (1 - m)], x[2 * (1 - m) + 1]);
            let kerr = 2.0 * I * self.chi[m] * a * p;
            let mut da = self.eps[m] - self.decay[m] * a - kerr * a + ij * a_o;
            let mut dp = self.eps[m].conj() - self.decay[m].conj() * p + kerr * p - ij * p_o;
            if stratonovich {
                let corr = I * self.chi[m];
                da += corr * a;
                dp -= corr * p;
            }
            out[2 * m] = da;
            out[2 * m + 1] = dp;
        }
        out
    }

    #[inline]
    fn diffusion(&self, x: &State) -> State {
        [
            principal_product(self.noise[0], x[0], self.negate),
            principal_product(self.noise_plus[0], x[1], self.negate),
            principal_product(self.noise[1], x[2], self.negate),
            principal_product(self.noise_plus[1], x[3], self.negate),
        ]
    }

    #[inline]
    fn step(&self, x: &State, dw: &[f64; 4], dt: f64) -> State {
        match self.scheme {
            Scheme::Euler => {
                let a = self.drift(x, false);
                let b = self.diffusion(x);
                std::array::from_fn(|k| x[k] + a[k] * dt + b[k] * dw[k])
            }
            Scheme::SemiImplicit => {
                let mut mid = *x;
                for _ in 0..MIDPOINT_ITERATIONS {
                    let a = self.drift(&mid, true);
                    let b = self.diffusion(&mid);
                    mid = std::array::from_fn(|k| x[k] + 0.5 * (a[k] * dt + b[k] * dw[k]));
                }
                std::array::from_fn(|k| 2.0 * mid[k] - x[k])
            }
        }
    }
}

/// A trajectory that left the bounded region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub trajectory: usize,
    pub time: f64,
}

struct Runner<'a> {
    kernel: Kernel,
    config: &'a SdeConfig,
    layout: StepLayout,
    start: State,
    bound: f64,
}

impl<'a> Runner<'a> {
    fn new(params: &CouplerParams, config: &'a SdeConfig) -> Result<Self, SdeError> {
        let params = params.validate()?;
        let layout = config.validate()?;
        let (a1, a2) = initial_amplitudes(&params, config)?;
        Ok(Self {
            kernel: Kernel::new(&params, config),
            config,
            layout,
            start: [a1, a1.conj(), a2, a2.conj()],
            bound: config.bound_for(&params),
        })
    }

    /// Integrates trajectory `index`, calling `on_sample(m, state)` at each
    /// recorded time. Returns the divergence time if the trajectory escapes.
    fn run<F: FnMut(usize, &State)>(&self, index: usize, mut on_sample: F) -> Result<(), f64> {
        let dt = self.config.dt;
        let mut noise = NoiseStream::new(
            self.config.seed,
            index as u64,
            dt,
            self.config.noise_substeps,
        );
        let mut x = self.start;
        let (burn, stride) = (self.layout.burn_steps, self.layout.stride);
        if burn == 0 {
            on_sample(0, &x);
        }
        for n in 1..=self.layout.total_steps() {
            let dw = noise.increments();
            x = self.kernel.step(&x, &dw, dt);
            if x.iter().any(|z| z.norm().is_nan() || z.norm() > self.bound) {
                return Err(n as f64 * dt);
            }
            if n >= burn && (n - burn) % stride == 0 {
                on_sample(((n - burn) / stride) as usize, &x);
            }
        }
        Ok(())
    }
}

/// Lowest-order classical amplitudes used as the initial condition.
fn initial_amplitudes(
    params: &CouplerParams,
    config: &SdeConfig,
) -> Result<(Complex64, Complex64), SdeError> {
    if config.initial == InitialState::Vacuum {
        return Ok((ZERO, ZERO));
    }
    if params.is_symmetric() {
        let roots = symmetric_intensities(params)?;
        let Some(&intensity) = roots.get(config.root_index) else {
            return Err(SdeError::Config(format!(
                "root_index {} out of range ({} classical roots)",
                config.root_index,
                roots.len()
            )));
        };
        let alpha = steady_amplitude(params, intensity)?;
        return Ok((alpha, alpha));
    }
    let guess = linear_solution(params);
    let ss = general_steady_state(params, guess, &SolverOptions::default())?;
    Ok((ss.alpha1, ss.alpha2))
}

/// Time averages of one trajectory: `α₁, α₁⁺, α₂, α₂⁺, α₁⁺α₁, α₂⁺α₂`.
type Moments = [Complex64; 6];

fn accumulate_moments(acc: &mut Moments, x: &State) {
    for k in 0..4 {
        acc[k] += x[k];
    }
    acc[4] += x[1] * x[0];
    acc[5] += x[3] * x[2];
}

/// Ensemble means (normally ordered) with standard errors from the
/// trajectory-to-trajectory scatter of per-trajectory time averages.
///
/// Complex standard errors carry the error of the real part in `re` and of
/// the imaginary part in `im`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub mean_alpha1: Complex64,
    pub mean_alpha1_plus: Complex64,
    pub mean_alpha2: Complex64,
    pub mean_alpha2_plus: Complex64,
    pub se_alpha1: Complex64,
    pub se_alpha1_plus: Complex64,
    pub se_alpha2: Complex64,
    pub se_alpha2_plus: Complex64,
    /// `Re⟨α₁⁺α₁⟩`.
    pub mean_intensity1: f64,
    pub mean_intensity2: f64,
    pub se_intensity1: f64,
    pub se_intensity2: f64,
    pub n_traj: usize,
    /// Trajectories that stayed bounded and entered the averages.
    pub n_effective: f64,
    pub diverged: Vec<Divergence>,
    pub partitions: usize,
    pub samples_per_trajectory: usize,
    pub seed: u64,
}

impl EnsembleStats {
    pub fn divergence_fraction(&self) -> f64 {
        self.diverged.len() as f64 / self.n_traj as f64
    }

    fn reduce(
        outcomes: &[Result<Moments, f64>],
        config: &SdeConfig,
        layout: &StepLayout,
    ) -> Result<Self, SdeError> {
        let diverged: Vec<Divergence> = outcomes
            .iter()
            .enumerate()
            .filter_map(|(trajectory, o)| o.err().map(|time| Divergence { trajectory, time }))
            .collect();
        let kept: Vec<&Moments> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
        if kept.len() < 2 {
            return Err(SdeError::TooManyDiverged {
                survivors: kept.len(),
                n_traj: outcomes.len(),
            });
        }
        let n = kept.len() as f64;
        // Mean and standard error of one real component, in trajectory order.
        let stat = |get: &dyn Fn(&Moments) -> f64| {
            let mut sum = Compensated::default();
            kept.iter().for_each(|m| sum.add(get(m)));
            let mean = sum.value() / n;
            let mut sq = Compensated::default();
            kept.iter().for_each(|m| {
                let d = get(m) - mean;
                sq.add(d * d)
            });
            (mean, (sq.value() / (n - 1.0) / n).sqrt())
        };
        let complex_stat = |k: usize| {
            let (re, se_re) = stat(&|m| m[k].re);
            let (im, se_im) = stat(&|m| m[k].im);
            (Complex64::new(re, im), Complex64::new(se_re, se_im))
        };
        let (mean_alpha1, se_alpha1) = complex_stat(0);
        let (mean_alpha1_plus, se_alpha1_plus) = complex_stat(1);
        let (mean_alpha2, se_alpha2) = complex_stat(2);
        let (mean_alpha2_plus, se_alpha2_plus) = complex_stat(3);
        let (mean_intensity1, se_intensity1) = stat(&|m| m[4].re);
        let (mean_intensity2, se_intensity2) = stat(&|m| m[5].re);
        Ok(Self {
            mean_alpha1,
            mean_alpha1_plus,
            mean_alpha2,
            mean_alpha2_plus,
            se_alpha1,
            se_alpha1_plus,
            se_alpha2,
            se_alpha2_plus,
            mean_intensity1,
            mean_intensity2,
            se_intensity1,
            se_intensity2,
            n_traj: outcomes.len(),
            n_effective: n,
            diverged,
            partitions: config.partitions,
            samples_per_trajectory: layout.samples,
            seed: config.seed,
        })
    }
}

/// Integrates the ensemble and returns normally ordered steady-state moments.
pub fn integrate(params: &CouplerParams, config: &SdeConfig) -> Result<EnsembleStats, SdeError> {
    let runner = Runner::new(params, config)?;
    let samples = runner.layout.samples as f64;
    let outcomes: Vec<Result<Moments, f64>> = (0..config.n_traj)
        .into_par_iter()
        .map(|index| {
            let mut acc = [ZERO; 6];
            runner.run(index, |_, x| accumulate_moments(&mut acc, x))?;
            Ok(acc.map(|z| z / samples))
        })
        .collect();
    EnsembleStats::reduce(&outcomes, config, &runner.layout)
}

/// One recorded point of a single trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub alpha1: Complex64,
    pub alpha1_plus: Complex64,
    pub alpha2: Complex64,
    pub alpha2_plus: Complex64,
}

/// Recorded samples of trajectory `index` (debugging aid). Stops early, with
/// the divergence reported, if the trajectory escapes.
pub fn trajectory_dump(
    params: &CouplerParams,
    config: &SdeConfig,
    index: usize,
) -> Result<(Vec<TrajectorySample>, Option<Divergence>), SdeError> {
    let runner = Runner::new(params, config)?;
    let mut out = Vec::with_capacity(runner.layout.samples);
    let result = runner.run(index, |m, x| {
        out.push(TrajectorySample {
            t: config.burn_in + m as f64 * config.sample_interval,
            alpha1: x[0],
            alpha1_plus: x[1],
            alpha2: x[2],
            alpha2_plus: x[3],
        })
    });
    let divergence = result.err().map(|time| Divergence {
        trajectory: index,
        time,
    });
    Ok((out, divergence))
}

/// Index pairs `(i, j)`, `i ≤ j`, of the four quadratures.
const PAIRS: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];

fn pair_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    PAIRS.iter().position(|&p| p == (i, j)).expect("valid pair")
}

/// Sums over the trajectories of one partition.
struct BatchSums {
    count: f64,
    /// `Σ_t q_i(t+k) q_j(t)` for `k ∈ [−K, K]`, per pair.
    lagged: Vec<Vec<Complex64>>,
    /// Prefix sums `Σ_{s<m} q_i(s)`, `m = 0..=M`.
    prefix: [Vec<Complex64>; 4],
    moments: Vec<Result<Moments, f64>>,
}

struct Estimator {
    samples: usize,
    max_lag: usize,
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Estimator {
    fn new(samples: usize, max_lag: usize) -> Self {
        let len = (2 * samples).next_power_of_two();
        let mut planner = FftPlanner::new();
        Self {
            samples,
            max_lag,
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    fn empty_batch(&self) -> BatchSums {
        BatchSums {
            count: 0.0,
            lagged: vec![vec![ZERO; 2 * self.max_lag + 1]; PAIRS.len()],
            prefix: std::array::from_fn(|_| vec![ZERO; self.samples + 1]),
            moments: Vec::new(),
        }
    }

    /// Adds one trajectory's quadrature records `series[i][t]`.
    fn add(
        &self,
        batch: &mut BatchSums,
        series: &[Vec<Complex64>; 4],
        scratch: &mut Vec<Complex64>,
    ) {
        let (m, k_max, len) = (self.samples, self.max_lag, self.len);
        let spectra: Vec<Vec<Complex64>> = series
            .iter()
            .map(|q| {
                let mut buf = vec![ZERO; len];
                buf[..m].copy_from_slice(q);
                self.forward.process(&mut buf);
                buf
            })
            .collect();
        for (p, &(i, j)) in PAIRS.iter().enumerate() {
            scratch.clear();
            scratch.extend((0..len).map(|f| spectra[i][f] * spectra[j][(len - f) % len]));
            self.inverse.process(scratch);
            let row = &mut batch.lagged[p];
            for (slot, k) in row.iter_mut().zip(-(k_max as isize)..=(k_max as isize)) {
                *slot += scratch[k.rem_euclid(len as isize) as usize] / len as f64;
            }
        }
        for (i, q) in series.iter().enumerate() {
            let mut run = ZERO;
            let prefix = &mut batch.prefix[i];
            for (t, v) in q.iter().enumerate() {
                run += v;
                prefix[t + 1] += run;
            }
        }
        batch.count += 1.0;
    }

    /// Mean-corrected correlation `ĉ_ij(k)` from summed records, using the
    /// global quadrature means `c`.
    fn correlation(
        &self,
        sums: &BatchSums,
        c: &[Complex64; 4],
        i: usize,
        j: usize,
        k: isize,
    ) -> Complex64 {
        let m = self.samples as isize;
        let (raw, lead_i, lag_j) = if i <= j {
            let raw = sums.lagged[pair_index(i, j)][(k + self.max_lag as isize) as usize];
            (raw, i, j)
        } else {
            let raw = sums.lagged[pair_index(j, i)][(self.max_lag as isize - k) as usize];
            (raw, i, j)
        };
        let p_i = &sums.prefix[lead_i];
        let p_j = &sums.prefix[lag_j];
        let overlap = (m - k.abs()) as usize;
        let k_abs = k.unsigned_abs();
        let (sum_i, sum_j) = if k >= 0 {
            (p_i[self.samples] - p_i[k_abs], p_j[overlap])
        } else {
            (p_i[overlap], p_j[self.samples] - p_j[k_abs])
        };
        let pairs = sums.count * overlap as f64;
        (raw - c[j] * sum_i - c[i] * sum_j + c[i] * c[j] * pairs) / pairs
    }

    /// Output covariance `δ_ij + 2√(γ_iγ_j) Re[(S_ij + S_ji)/2]` at `omega`.
    fn covariance(
        &self,
        sums: &BatchSums,
        c: &[Complex64; 4],
        gammas: &[f64; 4],
        phases: &[Complex64],
        ds: f64,
    ) -> [[f64; 4]; 4] {
        let k_max = self.max_lag as isize;
        let mut out = [[0.0; 4]; 4];
        for &(i, j) in &PAIRS {
            let mut s_ij = ZERO;
            let mut s_ji = ZERO;
            for (k, phase) in (-k_max..=k_max).zip(phases) {
                s_ij += self.correlation(sums, c, i, j, k) * phase;
                if i != j {
                    s_ji += self.correlation(sums, c, j, i, k) * phase;
                }
            }
            let sym = if i == j { s_ij } else { 0.5 * (s_ij + s_ji) };
            let value =
                2.0 * (gammas[i] * gammas[j]).sqrt() * sym.re * ds + if i == j { 1.0 } else { 0.0 };
            out[i][j] = value;
            out[j][i] = value;
        }
        out
    }
}

fn merge(into: &mut BatchSums, from: &BatchSums) {
    into.count += from.count;
    for (a, b) in into.lagged.iter_mut().zip(&from.lagged) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
    for (a, b) in into.prefix.iter_mut().zip(&from.prefix) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

/// One frequency of an SDE-estimated output spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeSpectrumRow {
    pub omega: f64,
    /// Output covariance of `(X₁, Y₁, X₂, Y₂)`.
    pub covariance: [[f64; 4]; 4],
    pub covariance_se: [[f64; 4]; 4],
    pub duan_sum: f64,
    pub duan_se: f64,
    pub duan_bound: f64,
}

impl SdeSpectrumRow {
    pub fn as_covariance(&self, theta: f64) -> QuadratureCovariance {
        QuadratureCovariance {
            theta,
            omega: self.omega,
            c: nalgebra::Matrix4::from_fn(|i, j| self.covariance[i][j]),
            imag_residue: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeSpectrum {
    pub stats: EnsembleStats,
    /// Radians.
    pub theta: f64,
    pub b: f64,
    pub correlation_time: f64,
    /// Largest lag kept by the estimator.
    pub lag_window: f64,
    pub sample_interval: f64,
    pub rows: Vec<SdeSpectrumRow>,
}

/// Slowest linear relaxation time at the starting state: `1/min Re λ` when
/// the symmetric linearisation is stable there, otherwise `1/min γ`.
pub fn correlation_time(params: &CouplerParams, config: &SdeConfig) -> Result<f64, SdeError> {
    let params = params.validate()?;
    let fallback = 1.0 / params.gamma1.min(params.gamma2);
    if !params.is_symmetric() {
        return Ok(fallback);
    }
    let (alpha, _) = initial_amplitudes(&params, config)?;
    let model = FluctuationModel::from_amplitude(&params, alpha)?;
    Ok(if model.valid {
        1.0 / model.min_real_part()
    } else {
        fallback
    })
}

fn weighted_se(values: &[(f64, f64)], mean: f64, total: f64) -> f64 {
    let b = values.len() as f64;
    if b < 2.0 {
        return f64::NAN;
    }
    let sum: f64 = values
        .iter()
        .map(|&(x, n)| {
            let w = n / total;
            w * w * (x - mean) * (x - mean)
        })
        .sum();
    (sum * b / (b - 1.0)).sqrt()
}

/// Output quadrature spectra at angle `theta` (radians) estimated from
/// stationary records of the full stochastic equations.
///
/// Quadrature records (relative to the starting amplitudes) are correlated
/// per trajectory by FFT, normalised without bias by the overlap length,
/// corrected with the global ensemble mean, truncated at
/// [`LAG_WINDOW_CORRELATION_TIMES`] and Fourier transformed. Error bars come
/// from the scatter between partitions. Works whether or not the
/// linearisation is valid.
pub fn stationary_spectrum(
    params: &CouplerParams,
    config: &SdeConfig,
    theta: f64,
    grid: &FrequencyGrid,
    b: f64,
) -> Result<SdeSpectrum, SdeError> {
    if config.partitions < 2 {
        return Err(SdeError::Config(
            "the spectrum estimator needs at least 2 partitions for error bars".into(),
        ));
    }
    if b == 0.0 || !b.is_finite() {
        return Err(SdeError::Config(
            "Duan weight b must be non-zero and finite".into(),
        ));
    }
    let runner = Runner::new(params, config)?;
    let layout = runner.layout;
    let tau = correlation_time(params, config)?;
    let ds = layout.stride as f64 * config.dt;
    let record = (layout.samples - 1) as f64 * ds;
    let required = MIN_RECORD_CORRELATION_TIMES * tau;
    if record < required {
        return Err(SdeError::RecordTooShort {
            record,
            required,
            correlation_time: tau,
        });
    }
    let max_lag =
        ((LAG_WINDOW_CORRELATION_TIMES * tau / ds).round() as usize).min(layout.samples - 1);
    let estimator = Estimator::new(layout.samples, max_lag);

    let x_phase = Complex64::from_polar(1.0, -theta);
    let y_phase = Complex64::from_polar(1.0, -(theta + std::f64::consts::FRAC_PI_2));
    let reference = runner.start;
    let n = config.n_traj;
    let parts = config.partitions;

    let batches: Vec<BatchSums> = (0..parts)
        .into_par_iter()
        .map(|part| {
            let (lo, hi) = (part * n / parts, (part + 1) * n / parts);
            let mut batch = estimator.empty_batch();
            let mut series: [Vec<Complex64>; 4] =
                std::array::from_fn(|_| vec![ZERO; layout.samples]);
            let mut scratch = Vec::with_capacity(estimator.len);
            for index in lo..hi {
                let mut acc = [ZERO; 6];
                let outcome = runner.run(index, |t, x| {
                    accumulate_moments(&mut acc, x);
                    let d: State = std::array::from_fn(|k| x[k] - reference[k]);
                    let x1 = x_phase * d[0] + x_phase.conj() * d[1];
                    let y1 = y_phase * d[0] + y_phase.conj() * d[1];
                    let x2 = x_phase * d[2] + x_phase.conj() * d[3];
                    let y2 = y_phase * d[2] + y_phase.conj() * d[3];
                    series[0][t] = x1;
                    series[1][t] = y1;
                    series[2][t] = x2;
                    series[3][t] = y2;
                });
                match outcome {
                    Ok(()) => {
                        estimator.add(&mut batch, &series, &mut scratch);
                        batch
                            .moments
                            .push(Ok(acc.map(|z| z / layout.samples as f64)));
                    }
                    Err(time) => batch.moments.push(Err(time)),
                }
            }
            batch
        })
        .collect();

    let outcomes: Vec<Result<Moments, f64>> = batches
        .iter()
        .flat_map(|b| b.moments.iter().copied())
        .collect();
    let stats = EnsembleStats::reduce(&outcomes, config, &layout)?;

    let mut total = estimator.empty_batch();
    for batch in &batches {
        merge(&mut total, batch);
    }
    let per_sample = total.count * layout.samples as f64;
    let c: [Complex64; 4] = std::array::from_fn(|i| total.prefix[i][layout.samples] / per_sample);
    let p = params.validate()?;
    let gammas = [p.gamma1, p.gamma1, p.gamma2, p.gamma2];
    let live: Vec<&BatchSums> = batches.iter().filter(|b| b.count > 0.0).collect();

    let duan = |cov: &[[f64; 4]; 4]| {
        let b2 = b * b;
        b2 * cov[0][0] + cov[2][2] / b2 - 2.0 * cov[0][2]
            + b2 * cov[1][1]
            + cov[3][3] / b2
            + 2.0 * cov[1][3]
    };

    let rows = grid
        .values()
        .par_iter()
        .map(|&omega| {
            let phases: Vec<Complex64> = (-(max_lag as isize)..=max_lag as isize)
                .map(|k| Complex64::from_polar(1.0, -omega * k as f64 * ds))
                .collect();
            let covariance = estimator.covariance(&total, &c, &gammas, &phases, ds);
            let per_batch: Vec<([[f64; 4]; 4], f64)> = live
                .iter()
                .map(|b| (estimator.covariance(b, &c, &gammas, &phases, ds), b.count))
                .collect();
            let mut covariance_se = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    let values: Vec<(f64, f64)> =
                        per_batch.iter().map(|(m, n)| (m[i][j], *n)).collect();
                    covariance_se[i][j] = weighted_se(&values, covariance[i][j], total.count);
                }
            }
            let duan_sum = duan(&covariance);
            let duan_values: Vec<(f64, f64)> =
                per_batch.iter().map(|(m, n)| (duan(m), *n)).collect();
            SdeSpectrumRow {
                omega,
                covariance,
                covariance_se,
                duan_sum,
                duan_se: weighted_se(&duan_values, duan_sum, total.count),
                duan_bound: 2.0 * (b * b + 1.0 / (b * b)),
            }
        })
        .collect();

    Ok(SdeSpectrum {
        stats,
        theta,
        b,
        correlation_time: tau,
        lag_window: max_lag as f64 * ds,
        sample_interval: ds,
        rows,
    })
}
