//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use kerr_coupler::criteria::{
    covariance_from_spectrum, default_theta_grid, log_negativity, optimal_duan_angle,
    output_covariance, spectral_matrices, spectrum_reports, EntanglementReport,
};
use kerr_coupler::fluct::{
    eigenvalues_analytic, mode_block_eigenvalues, multiset_distance, FluctuationModel,
};
use kerr_coupler::steady::{
    closed_form_intensity, cubic_relative_residual, symmetric_intensities, SteadyState,
};
use kerr_coupler::{CouplerParams, FrequencyGrid};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

/// Nominal quadrature angles (degrees) for the three nonlinearities.
const SETTINGS: [(f64, f64); 3] = [(1e-5, 80.0), (1e-6, 122.0), (1e-7, 14.0)];
const ANGLE_TOLERANCE_DEG: i32 = 5;

fn canonical_model(chi: f64) -> FluctuationModel {
    let p = CouplerParams::canonical(chi);
    let i = symmetric_intensities(&p).unwrap()[0];
    FluctuationModel::build(&p, &SteadyState::symmetric(&p, i).unwrap()).unwrap()
}

fn angle_window(nominal: f64) -> impl Iterator<Item = f64> {
    (-ANGLE_TOLERANCE_DEG..=ANGLE_TOLERANCE_DEG).map(move |d| nominal + f64::from(d))
}

fn min_by_key<T: Copy>(items: &[T], key: impl Fn(&T) -> f64) -> (T, f64) {
    items
        .iter()
        .map(|x| (*x, key(x)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

fn reports(model: &FluctuationModel, theta_deg: f64) -> Vec<EntanglementReport> {
    spectrum_reports(
        model,
        theta_deg.to_radians(),
        &FrequencyGrid::default_grid(),
        1.0,
    )
    .unwrap()
}

fn steady_anchor() -> Outcome {
    let p = CouplerParams::canonical(1e-6);
    let roots = symmetric_intensities(&p).map_err(|e| e.to_string())?;
    if roots.len() != 1 {
        return Err(format!("{} roots", roots.len()));
    }
    let i = roots[0];
    let v = p.symmetric_values().unwrap();
    let residual = cubic_relative_residual(&v, p.eps1.norm_sqr(), i);
    let rel = (i - 5e5).abs() / 5e5;
    let detail = format!("I = {i}, |I/5e5 - 1| = {rel:.2e}, cubic residual {residual:.2e}");
    if residual < 1e-9 && rel < 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn closed_form_consistency() -> Outcome {
    let log_grid = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (n - 1) as f64))
            .collect()
    };
    let mut worst = (0.0f64, 0.0, 0.0);
    let mut count = 0;
    for &chi in &log_grid(-8.0, -4.0, 20) {
        for &eps in &log_grid(0.0, 4.0, 20) {
            let p = CouplerParams::symmetric_set(Complex64::new(eps, 0.0), 1.0, 10.0, chi, 10.0);
            let closed = closed_form_intensity(&p).map_err(|e| e.to_string())?;
            let roots = symmetric_intensities(&p).map_err(|e| e.to_string())?;
            if roots.len() != 1 {
                return Err(format!("chi {chi}, eps {eps}: {} roots", roots.len()));
            }
            let rel = (closed - roots[0]).abs() / roots[0];
            if rel > worst.0 {
                worst = (rel, chi, eps);
            }
            count += 1;
        }
    }
    let detail = format!(
        "{count} points, worst relative gap {:.2e} at chi {:.1e}, eps {:.1e}",
        worst.0, worst.1, worst.2
    );
    if worst.0 < 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bistability_window() -> Outcome {
    let params = |eps2: f64, j: f64| {
        CouplerParams::symmetric_set(Complex64::new(eps2.sqrt(), 0.0), 1.0, 0.0, 1e-6, j)
    };
    let count = |eps2: f64, j: f64| symmetric_intensities(&params(eps2, j)).unwrap().len();
    // Pump power on the S-curve at the fold intensities r± = (20 ± √97)/(6χ).
    let fold_pump = |r: f64| r * (1.0 + (-10.0 + 2e-6 * r).powi(2));
    let r_minus = (20.0 - 97f64.sqrt()) / 6e-6;
    let r_plus = (20.0 + 97f64.sqrt()) / 6e-6;
    let (lo_expected, hi_expected) = (fold_pump(r_plus), fold_pump(r_minus));

    let bisect = |mut a: f64, mut b: f64| {
        let ca = count(a, 10.0);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if count(m, 10.0) == ca {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    let inside = 0.5 * (lo_expected + hi_expected);
    if count(inside, 10.0) != 3 {
        return Err("J = 10 has no three-root point inside the fold window".into());
    }
    let lo = bisect(0.0, inside);
    let hi = bisect(inside, 10.0 * hi_expected);
    let lo_err = (lo / lo_expected - 1.0).abs();
    let hi_err = (hi / hi_expected - 1.0).abs();

    let sweep: Vec<f64> = (0..400).map(|k| 4e7 * k as f64 / 399.0).collect();
    let three_in_sweep = sweep.iter().filter(|&&e| count(e, 10.0) == 3).count();
    let single_j1 = sweep.iter().all(|&e| count(e, 1.0) == 1);
    let detail = format!(
        "J=10 window ({lo:.6e}, {hi:.6e}) vs folds ({lo_expected:.6e}, {hi_expected:.6e}), \
         rel errs {lo_err:.1e}/{hi_err:.1e}; {three_in_sweep} three-root sweep points; \
         J=1 single root everywhere: {single_j1}"
    );
    if lo_err < 1e-6 && hi_err < 1e-6 && three_in_sweep > 0 && single_j1 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn eigenvalue_equivalence() -> Outcome {
    let mut rng = rand::rngs::StdRng::seed_from_u64(20240607);
    let mut worst_published = 0.0f64;
    let mut worst_block = 0.0f64;
    let mut mismatched = 0;
    for _ in 0..1000 {
        let eps = 10f64.powf(rng.random_range(0.0..4.0));
        let gamma = rng.random_range(0.5..2.0);
        let delta = rng.random_range(-20.0..20.0);
        let j = rng.random_range(-20.0..20.0);
        let chi = 10f64.powf(rng.random_range(-8.0..-4.0));
        let p = CouplerParams::symmetric_set(Complex64::new(eps, 0.0), gamma, delta, chi, j);
        let i = symmetric_intensities(&p).map_err(|e| e.to_string())?[0];
        let model = FluctuationModel::build(&p, &SteadyState::symmetric(&p, i).unwrap())
            .map_err(|e| e.to_string())?;
        let published =
            multiset_distance(&model.eigenvalues, &eigenvalues_analytic(&p, i).unwrap());
        let block = multiset_distance(&model.eigenvalues, &mode_block_eigenvalues(&p, i).unwrap());
        mismatched += usize::from(published > 1e-8);
        worst_published = worst_published.max(published);
        worst_block = worst_block.max(block);
    }
    let detail = format!(
        "published closed form: {mismatched}/1000 sets off by > 1e-8 (worst {worst_published:.3e}); \
         exact sum/difference block form worst {worst_block:.3e}"
    );
    if mismatched == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn shot_noise_baseline() -> Outcome {
    let mut rng = rand::rngs::StdRng::seed_from_u64(5);
    let model = canonical_model(0.0);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let omega = rng.random_range(0.0..30.0);
        let cov = output_covariance(&model, theta, omega).map_err(|e| e.to_string())?;
        let r = EntanglementReport::from_covariance(&cov, 1.0).map_err(|e| e.to_string())?;
        worst.0 = worst.0.max((r.duan_sum - 4.0).abs());
        worst.1 = worst
            .1
            .max((r.epr_product_1 - 1.0).abs())
            .max((r.epr_product_2 - 1.0).abs());
        worst.2 = worst.2.max(r.logneg.abs());
    }
    let detail = format!(
        "20 random (theta, omega): |duan - 4| <= {:.1e}, |epr - 1| <= {:.1e}, logneg <= {:.1e}",
        worst.0, worst.1, worst.2
    );
    if worst.0 <= 1e-9 && worst.1 <= 1e-9 && worst.2 == 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Minimum Duan sum over ω at each angle in the tolerance window.
fn duan_violations() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (chi, nominal) in SETTINGS {
        let model = canonical_model(chi);
        let mut worst: f64 = 0.0;
        for theta in angle_window(nominal) {
            let (r, v) = min_by_key(&reports(&model, theta), |r| r.duan_sum);
            worst = worst.max(v);
            ok &= v < 4.0;
            if theta == nominal && chi == 1e-5 {
                ok &= r.omega > 0.0;
                lines.push(format!(
                    "chi 1e-5 at {nominal} deg minimised at omega {:.3}",
                    r.omega
                ));
            }
        }
        lines.push(format!(
            "chi {chi:.0e}: max over {nominal}±5 deg of min duan = {worst:.4}"
        ));
    }
    if ok {
        Ok(lines.join("; "))
    } else {
        Err(lines.join("; "))
    }
}

fn epr_violations() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (chi, nominal) in SETTINGS {
        let model = canonical_model(chi);
        let mut worst: f64 = 0.0;
        for theta in angle_window(nominal) {
            let (_, v) = min_by_key(&reports(&model, theta), |r| {
                r.epr_product_1.min(r.epr_product_2)
            });
            worst = worst.max(v);
            ok &= v < 1.0;
        }
        lines.push(format!(
            "chi {chi:.0e}: max over {nominal}±5 deg of min epr = {worst:.4}"
        ));
    }
    if ok {
        Ok(lines.join("; "))
    } else {
        Err(lines.join("; "))
    }
}

/// Band where a boolean holds, compared index by index: a disagreement is
/// tolerated only next to an edge of the other band.
fn bands_match(a: &[bool], b: &[bool]) -> bool {
    let edge = |band: &[bool], k: usize| {
        (k > 0 && band[k - 1] != band[k]) || (k + 1 < band.len() && band[k + 1] != band[k])
    };
    (0..a.len()).all(|k| a[k] == b[k] || (edge(a, k) && edge(b, k)))
}

fn logneg_band() -> Outcome {
    let grid = FrequencyGrid::default_grid();
    let mut lines = Vec::new();
    let mut ok = true;
    for (chi, _) in SETTINGS {
        let model = canonical_model(chi);
        let gamma = model.params.gamma1;
        let spectra = spectral_matrices(&model, &grid).map_err(|e| e.to_string())?;
        let mut duan_band = Vec::new();
        let mut neg_band = Vec::new();
        let mut spread: f64 = 0.0;
        for s in &spectra {
            let (_, best_duan) = optimal_duan_angle(s, gamma).map_err(|e| e.to_string())?;
            duan_band.push(best_duan < 4.0);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for theta in default_theta_grid() {
                let cov = covariance_from_spectrum(s, gamma, theta.to_radians())
                    .map_err(|e| e.to_string())?;
                let ln = log_negativity(&cov).map_err(|e| e.to_string())?.logneg;
                lo = lo.min(ln);
                hi = hi.max(ln);
            }
            neg_band.push(lo > 0.0);
            spread = spread.max(hi - lo);
        }
        let matched = bands_match(&duan_band, &neg_band);
        let mismatches = duan_band
            .iter()
            .zip(&neg_band)
            .filter(|(a, b)| a != b)
            .count();
        let width = neg_band.iter().filter(|&&x| x).count();
        ok &= matched && spread < 1e-9 && width > 0;
        lines.push(format!(
            "chi {chi:.0e}: band {width} pts, {mismatches} edge mismatches, logneg spread {spread:.1e}"
        ));
    }
    if ok {
        Ok(lines.join("; "))
    } else {
        Err(lines.join("; "))
    }
}

fn uncertainty_products() -> Outcome {
    let mut count = 0usize;
    let mut worst = f64::INFINITY;
    for (chi, nominal) in SETTINGS {
        let model = canonical_model(chi);
        let spectra = spectral_matrices(&model, &FrequencyGrid::default_grid()).unwrap();
        let thetas: Vec<f64> = angle_window(nominal).chain(default_theta_grid()).collect();
        for s in &spectra {
            for &theta in &thetas {
                let cov = covariance_from_spectrum(s, model.params.gamma1, theta.to_radians())
                    .map_err(|e| e.to_string())?;
                let p1 = cov.get(0, 0) * cov.get(1, 1);
                let p2 = cov.get(2, 2) * cov.get(3, 3);
                worst = worst.min(p1).min(p2);
                count += 1;
            }
        }
    }
    let detail = format!("{count} (chi, theta, omega) points, smallest product {worst:.12}");
    if worst >= 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct SdeRun {
    data: Vec<u8>,
    omega: f64,
    theta: f64,
}

/// Runs the criterion-10 command in `dir`. The data file names its manifest,
/// so repeated runs use the same file name in separate directories.
fn sde_command(dir: &Path, omega: f64, theta: f64) -> Result<Vec<u8>, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let out = dir.join("sde.json");
    let o = Command::new(env!("CARGO_BIN_EXE_kerr-coupler"))
        .args([
            "sde", "--chi", "1e-7", "--ntraj", "10000", "--dt", "1e-3", "--seed", "42",
        ])
        .args(["--theta", &theta.to_string(), "--omega", &omega.to_string()])
        .arg("--out")
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!(
            "kerr-coupler sde exited with {}: {}",
            o.status,
            String::from_utf8_lossy(&o.stderr)
        ));
    }
    std::fs::read(out).map_err(|e| e.to_string())
}

fn sde_oracle(dir: &Path) -> (Outcome, Option<SdeRun>) {
    let (chi, theta) = SETTINGS[2];
    let model = canonical_model(chi);
    let (linear, _) = min_by_key(&reports(&model, theta), |r| r.duan_sum);
    let intensity = model.intensity();
    let start = Instant::now();
    let data = match sde_command(&dir.join("first"), linear.omega, theta) {
        Ok(d) => d,
        Err(e) => return (Err(e), None),
    };
    let doc: serde_json::Value = match serde_json::from_slice(&data) {
        Ok(d) => d,
        Err(e) => return (Err(e.to_string()), None),
    };
    let stats = &doc["stats"];
    let row = &doc["spectrum"][0];
    let f = |v: &serde_json::Value| v.as_f64().unwrap_or(f64::NAN);
    let z = |mean: f64, se: f64, target: f64| (mean - target).abs() / se;
    let z1 = z(
        f(&stats["mean_intensity1"]),
        f(&stats["se_intensity1"]),
        intensity,
    );
    let z2 = z(
        f(&stats["mean_intensity2"]),
        f(&stats["se_intensity2"]),
        intensity,
    );
    let zd = z(f(&row["duan_sum"]), f(&row["duan_se"]), linear.duan_sum);
    let detail = format!(
        "I: classical {intensity:.3}, SDE {:.3} ± {:.3} / {:.3} ± {:.3} (z {z1:.2}, {z2:.2}); \
         duan at omega {:.4}: linear {:.5}, SDE {:.5} ± {:.5} (z {zd:.2}); {} diverged; {:.0} s",
        f(&stats["mean_intensity1"]),
        f(&stats["se_intensity1"]),
        f(&stats["mean_intensity2"]),
        f(&stats["se_intensity2"]),
        linear.omega,
        linear.duan_sum,
        f(&row["duan_sum"]),
        f(&row["duan_se"]),
        stats["diverged"].as_array().map_or(0, Vec::len),
        start.elapsed().as_secs_f64(),
    );
    let outcome = if z1 <= 3.0 && z2 <= 3.0 && zd <= 3.0 {
        Ok(detail)
    } else {
        Err(detail)
    };
    (
        outcome,
        Some(SdeRun {
            data,
            omega: linear.omega,
            theta,
        }),
    )
}

fn determinism(dir: &Path, first: Option<&SdeRun>) -> Outcome {
    let first = first.ok_or("criterion 10 produced no output to compare")?;
    let again = sde_command(&dir.join("second"), first.omega, first.theta)?;
    if again == first.data {
        Ok(format!("{} bytes identical across two runs", again.len()))
    } else {
        Err("outputs differ".into())
    }
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut failures = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let line = match &outcome {
            Ok(d) => format!("PASS criterion {n:>2} {name} ({secs:.1} s): {d}"),
            Err(d) => {
                failures += 1;
                format!("FAIL criterion {n:>2} {name} ({secs:.1} s): {d}")
            }
        };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    };
    report(1, "steady-state anchor", &mut steady_anchor);
    report(2, "closed-form consistency", &mut closed_form_consistency);
    report(3, "bistability window", &mut bistability_window);
    report(4, "eigenvalue equivalence", &mut eigenvalue_equivalence);
    report(5, "shot-noise baseline", &mut shot_noise_baseline);
    report(6, "duan violation", &mut duan_violations);
    report(7, "epr violation", &mut epr_violations);
    report(8, "logneg band", &mut logneg_band);
    report(9, "uncertainty products", &mut uncertainty_products);
    let mut run = None;
    report(10, "sde oracle", &mut || {
        let (outcome, r) = sde_oracle(dir.path());
        run = r;
        outcome
    });
    report(11, "determinism", &mut || {
        determinism(dir.path(), run.as_ref())
    });
    println!("{failures} of 11 criteria failed");
    if failures > 0 {
        std::process::exit(1);
    }
}
