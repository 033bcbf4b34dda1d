use std::path::Path;

use kerr_coupler::criteria::{
    angle_scan, default_theta_grid, spectrum_reports, theta_landscape, CriteriaError,
};
use kerr_coupler::fluct::{
    eigenvalues_analytic, linearization_valid, matched_detuning_intensity_bound,
    mode_block_eigenvalues, FluctError, FluctuationModel,
};
use kerr_coupler::sde::{integrate, stationary_spectrum, trajectory_dump, SdeError};
use kerr_coupler::steady::{
    bistability, general_steady_state, linear_solution, steady_amplitude, symmetric_intensities,
    SolverOptions, SteadyError,
};
use kerr_coupler::CouplerParams;
use num_complex::Complex64;
use serde_json::json;

use crate::config::{Measure, Settings};
use crate::output::{write_outputs, Cell, Report, Table};
use crate::CliError;

impl From<SteadyError> for CliError {
    fn from(e: SteadyError) -> Self {
        match e {
            SteadyError::NoConvergence { .. } => CliError::NoConvergence(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<FluctError> for CliError {
    fn from(e: FluctError) -> Self {
        match e {
            FluctError::InvalidLinearization { .. } => CliError::Linearization(format!(
                "{e}; use the `sde` subcommand for this operating point"
            )),
            FluctError::NearSingular { .. } | FluctError::Eigen => CliError::Failed(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<CriteriaError> for CliError {
    fn from(e: CriteriaError) -> Self {
        match e {
            CriteriaError::Fluct(f) => f.into(),
            CriteriaError::BadWeight => CliError::Invalid(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<SdeError> for CliError {
    fn from(e: SdeError) -> Self {
        match e {
            SdeError::Steady(s) => s.into(),
            SdeError::Fluct(f) => f.into(),
            SdeError::TooManyDiverged { .. } => CliError::Divergence(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

/// Runs `operation` and writes its outputs when `settings.out` is set.
pub fn execute(operation: &str, settings: &Settings) -> Result<(), CliError> {
    let (report, pending) = match operation {
        "steady" => (steady(settings)?, None),
        "stability" => (stability(settings)?, None),
        "spectrum" => (spectrum(settings)?, None),
        "scan-theta" => (scan_theta(settings)?, None),
        "sde" => sde(settings)?,
        other => return Err(CliError::Invalid(format!("unknown operation {other:?}"))),
    };
    match &settings.out {
        Some(out) => {
            let manifest = write_outputs(operation, settings, &report, out)?;
            println!("wrote {} and {}", out.display(), manifest.display());
        }
        None => print!("{}", report.table.render()),
    }
    // Divergence is reported after the results are on disk.
    pending.map_or(Ok(()), Err)
}

fn fmt_c(z: Complex64) -> String {
    format!("{:.6e}{:+.6e}i", z.re, z.im)
}

fn chosen_root(params: &CouplerParams, index: usize) -> Result<(f64, Complex64), CliError> {
    let roots = symmetric_intensities(params)?;
    let intensity = *roots.get(index).ok_or_else(|| {
        CliError::Invalid(format!(
            "--root-index {index} out of range: {} classical root(s)",
            roots.len()
        ))
    })?;
    Ok((intensity, steady_amplitude(params, intensity)?))
}

fn steady(s: &Settings) -> Result<Report, CliError> {
    let p = &s.params;
    if let Some(sweep) = s.sweep_eps2 {
        if !p.is_symmetric() {
            return Err(CliError::Invalid(
                "--sweep-eps2 needs symmetric parameters".into(),
            ));
        }
        let phase = if p.eps1.norm() > 0.0 {
            p.eps1 / p.eps1.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let mut table = Table::new(["eps2", "n_roots", "root", "intensity", "stability"]);
        let mut three = 0usize;
        for eps2 in sweep.values() {
            let q =
                CouplerParams::symmetric_set(phase * eps2.sqrt(), p.gamma1, p.delta1, p.chi1, p.j);
            let roots = symmetric_intensities(&q)?;
            three += usize::from(roots.len() == 3);
            for (k, &intensity) in roots.iter().enumerate() {
                let model = FluctuationModel::from_amplitude(&q, steady_amplitude(&q, intensity)?)?;
                table.push(vec![
                    eps2.into(),
                    roots.len().into(),
                    k.into(),
                    intensity.into(),
                    format!("{:?}", model.stability)
                        .to_lowercase()
                        .as_str()
                        .into(),
                ]);
            }
        }
        println!(
            "pump sweep: {} points, {three} with three roots",
            sweep.points
        );
        let analysis = bistability(p)?;
        return Ok(Report::new(table).with("bistability", &bistability_json(&analysis)));
    }

    if !p.is_symmetric() {
        let ss = general_steady_state(p, linear_solution(p), &SolverOptions::default())?;
        println!("asymmetric steady state (residual {:.3e})", ss.residual);
        println!("  alpha1 = {}  I1 = {}", fmt_c(ss.alpha1), ss.intensity1);
        println!("  alpha2 = {}  I2 = {}", fmt_c(ss.alpha2), ss.intensity2);
        let mut table = Table::new(["mode", "intensity", "alpha_re", "alpha_im"]);
        table.push(vec![
            1usize.into(),
            ss.intensity1.into(),
            ss.alpha1.re.into(),
            ss.alpha1.im.into(),
        ]);
        table.push(vec![
            2usize.into(),
            ss.intensity2.into(),
            ss.alpha2.re.into(),
            ss.alpha2.im.into(),
        ]);
        return Ok(Report::new(table).with("residual", &ss.residual));
    }

    let roots = symmetric_intensities(p)?;
    let analysis = bistability(p)?;
    println!("{} classical root(s) of the intensity cubic", roots.len());
    let mut table = Table::new([
        "root",
        "intensity",
        "alpha_re",
        "alpha_im",
        "stability",
        "published_valid",
    ]);
    for (k, &intensity) in roots.iter().enumerate() {
        let alpha = steady_amplitude(p, intensity)?;
        let model = FluctuationModel::from_amplitude(p, alpha)?;
        table.push(vec![
            k.into(),
            intensity.into(),
            alpha.re.into(),
            alpha.im.into(),
            format!("{:?}", model.stability)
                .to_lowercase()
                .as_str()
                .into(),
            linearization_valid(p, intensity)?.into(),
        ]);
    }
    match (analysis.possible, analysis.pump_window()) {
        (true, Some((lo, hi))) => println!(
            "bistable: turning intensities {:.6e}, {:.6e}; three roots for eps^2 in ({lo:.6e}, {hi:.6e})",
            analysis.lower_turning.unwrap_or(f64::NAN),
            analysis.upper_turning.unwrap_or(f64::NAN),
        ),
        _ => println!("no bistability for these parameters"),
    }
    Ok(Report::new(table).with("bistability", &bistability_json(&analysis)))
}

fn bistability_json(a: &kerr_coupler::steady::BistabilityAnalysis) -> serde_json::Value {
    json!({
        "possible": a.possible,
        "lower_turning": a.lower_turning,
        "upper_turning": a.upper_turning,
        "pump_window": a.pump_window(),
    })
}

fn stability(s: &Settings) -> Result<Report, CliError> {
    let p = &s.params;
    if !p.is_symmetric() {
        return Err(CliError::Invalid(
            "linear stability is only defined for symmetric parameters".into(),
        ));
    }
    let (intensity, alpha) = chosen_root(p, s.root_index)?;
    let model = FluctuationModel::from_amplitude(p, alpha)?;
    let published = eigenvalues_analytic(p, intensity)?;
    let exact = mode_block_eigenvalues(p, intensity)?;
    let published_valid = linearization_valid(p, intensity)?;
    println!(
        "root {} : I = {intensity}, alpha = {}",
        s.root_index,
        fmt_c(alpha)
    );
    println!(
        "drift matrix: {:?} (min Re lambda = {:.6e})",
        model.stability,
        model.min_real_part()
    );
    println!(
        "published closed-form criterion: {}",
        if published_valid { "valid" } else { "invalid" }
    );
    let bound = (p.delta1 == p.j && p.chi1 != 0.0)
        .then(|| matched_detuning_intensity_bound(p.gamma1, p.j, p.chi1));
    if let Some(b) = bound {
        println!("matched-detuning intensity bound: {b:.6e}");
    }
    let mut table = Table::new(["kind", "index", "re", "im"]);
    for (kind, values) in [
        ("numeric", model.eigenvalues),
        ("block", exact),
        ("published", published),
    ] {
        for (k, z) in values.iter().enumerate() {
            table.push(vec![kind.into(), k.into(), z.re.into(), z.im.into()]);
        }
    }
    Ok(Report::new(table)
        .with("intensity", &intensity)
        .with("stability", &model.stability)
        .with("valid", &model.valid)
        .with("published_valid", &published_valid)
        .with("intensity_bound", &bound))
}

fn valid_model(s: &Settings) -> Result<(FluctuationModel, f64), CliError> {
    let p = &s.params;
    if !p.is_symmetric() {
        return Err(CliError::Invalid(
            "spectra from the linearisation need symmetric parameters; use `sde`".into(),
        ));
    }
    let (intensity, alpha) = chosen_root(p, s.root_index)?;
    let model = FluctuationModel::from_amplitude(p, alpha)?;
    if !model.valid {
        return Err(FluctError::InvalidLinearization {
            min_real_part: model.min_real_part(),
            stability: model.stability,
        }
        .into());
    }
    Ok((model, intensity))
}

fn spectrum(s: &Settings) -> Result<Report, CliError> {
    let (model, intensity) = valid_model(s)?;
    let grid = s.grid()?;
    let scan = if s.optimize_theta {
        Some(angle_scan(&model, &grid, &default_theta_grid())?)
    } else {
        None
    };
    let theta_deg = scan.map(|a| a.theta_deg).or(s.theta).unwrap_or(0.0);
    let reports = spectrum_reports(&model, theta_deg.to_radians(), &grid, s.b)?;

    let mut columns = vec!["omega"];
    let want = |m: Measure| s.measure == m || s.measure == Measure::All;
    if want(Measure::Duan) {
        columns.extend(["duan_sum", "duan_bound"]);
    }
    if want(Measure::Epr) {
        columns.extend(["epr_product_1", "epr_product_2"]);
    }
    if want(Measure::Logneg) {
        columns.extend(["xi", "logneg", "nu_tilde"]);
    }
    let mut table = Table::new(columns);
    for r in &reports {
        let mut row: Vec<Cell> = vec![r.omega.into()];
        if want(Measure::Duan) {
            row.extend([r.duan_sum.into(), r.duan_bound.into()]);
        }
        if want(Measure::Epr) {
            row.extend([r.epr_product_1.into(), r.epr_product_2.into()]);
        }
        if want(Measure::Logneg) {
            row.extend([r.xi.into(), r.logneg.into(), r.nu_tilde.into()]);
        }
        table.push(row);
    }

    let min_by = |f: fn(&kerr_coupler::criteria::EntanglementReport) -> f64| {
        reports
            .iter()
            .min_by(|a, b| f(a).total_cmp(&f(b)))
            .map(|r| (f(r), r.omega))
            .unwrap_or((f64::NAN, f64::NAN))
    };
    let (duan, duan_w) = min_by(|r| r.duan_sum);
    let (epr, epr_w) = min_by(|r| r.epr_product_1.min(r.epr_product_2));
    let (neg_logneg, ln_w) = min_by(|r| -r.logneg);
    println!("I = {intensity}, theta = {theta_deg:.2} deg, b = {}", s.b);
    println!(
        "min duan sum {duan:.6} at omega {duan_w:.4} (bound {})",
        2.0 * (s.b * s.b + 1.0 / (s.b * s.b))
    );
    println!("min EPR product {epr:.6} at omega {epr_w:.4}");
    println!("max logneg {:.6} at omega {ln_w:.4}", -neg_logneg);
    Ok(Report::new(table)
        .with("theta_deg", &theta_deg)
        .with("b", &s.b)
        .with("intensity", &intensity)
        .with("angle_scan", &scan))
}

fn scan_theta(s: &Settings) -> Result<Report, CliError> {
    let (model, _) = valid_model(s)?;
    let grid = s.grid()?;
    let thetas = default_theta_grid();
    let landscape = theta_landscape(&model, &grid, &thetas)?;
    let best = angle_scan(&model, &grid, &thetas)?;
    println!(
        "optimal theta {:.2} deg: duan sum {:.6} at omega {:.4} ({})",
        best.theta_deg,
        best.duan_sum,
        best.omega,
        if best.violated {
            "violated"
        } else {
            "not violated"
        }
    );
    let mut table = Table::new(["theta_deg", "min_duan_sum", "omega_at_min"]);
    for pt in &landscape {
        table.push(vec![
            pt.theta_deg.into(),
            pt.min_duan_sum.into(),
            pt.omega_at_min.into(),
        ]);
    }
    Ok(Report::new(table).with("best", &best))
}

fn sde(s: &Settings) -> Result<(Report, Option<CliError>), CliError> {
    let p = &s.params;
    let cfg = &s.sde;
    eprintln!(
        "integrating {} trajectories to t = {} (dt = {}, seed = {}, partitions = {})",
        cfg.n_traj, cfg.t_end, cfg.dt, cfg.seed, cfg.partitions
    );
    let (report, stats) = match s.theta {
        Some(theta_deg) => {
            let grid = s.grid()?;
            let spec = stationary_spectrum(p, cfg, theta_deg.to_radians(), &grid, s.b)?;
            let mut table = Table::new([
                "omega",
                "duan_sum",
                "duan_se",
                "duan_bound",
                "v_x1",
                "v_y1",
                "v_x2",
                "v_y2",
                "c_x1x2",
                "c_y1y2",
                "v_x1_se",
                "v_y1_se",
                "c_x1x2_se",
                "c_y1y2_se",
            ]);
            for r in &spec.rows {
                let (c, e) = (&r.covariance, &r.covariance_se);
                table.push(vec![
                    r.omega.into(),
                    r.duan_sum.into(),
                    r.duan_se.into(),
                    r.duan_bound.into(),
                    c[0][0].into(),
                    c[1][1].into(),
                    c[2][2].into(),
                    c[3][3].into(),
                    c[0][2].into(),
                    c[1][3].into(),
                    e[0][0].into(),
                    e[1][1].into(),
                    e[0][2].into(),
                    e[1][3].into(),
                ]);
            }
            let report = Report::new(table)
                .with("theta_deg", &theta_deg)
                .with("b", &s.b)
                .with("correlation_time", &spec.correlation_time)
                .with("lag_window", &spec.lag_window)
                .with("stats", &spec.stats)
                .with("spectrum", &spec.rows);
            (report, spec.stats)
        }
        None => {
            let stats = integrate(p, cfg)?;
            let mut table = Table::new(["quantity", "mean_re", "mean_im", "se_re", "se_im"]);
            for (name, m, e) in [
                ("alpha1", stats.mean_alpha1, stats.se_alpha1),
                ("alpha1_plus", stats.mean_alpha1_plus, stats.se_alpha1_plus),
                ("alpha2", stats.mean_alpha2, stats.se_alpha2),
                ("alpha2_plus", stats.mean_alpha2_plus, stats.se_alpha2_plus),
            ] {
                table.push(vec![
                    name.into(),
                    m.re.into(),
                    m.im.into(),
                    e.re.into(),
                    e.im.into(),
                ]);
            }
            for (name, m, e) in [
                ("intensity1", stats.mean_intensity1, stats.se_intensity1),
                ("intensity2", stats.mean_intensity2, stats.se_intensity2),
            ] {
                table.push(vec![
                    name.into(),
                    m.into(),
                    0.0.into(),
                    e.into(),
                    0.0.into(),
                ]);
            }
            (Report::new(table).with("stats", &stats), stats)
        }
    };
    println!(
        "mean intensity1 {} +- {}, intensity2 {} +- {}",
        stats.mean_intensity1, stats.se_intensity1, stats.mean_intensity2, stats.se_intensity2
    );
    if let Some(row) = report
        .extra
        .get("spectrum")
        .and_then(|v| v.as_array())
        .and_then(|r| {
            r.iter().min_by(|a, b| {
                a["duan_sum"]
                    .as_f64()
                    .unwrap_or(f64::INFINITY)
                    .total_cmp(&b["duan_sum"].as_f64().unwrap_or(f64::INFINITY))
            })
        })
    {
        println!(
            "min duan sum {} +- {} at omega {}",
            row["duan_sum"], row["duan_se"], row["omega"]
        );
    }
    let fraction = stats.divergence_fraction();
    if !stats.diverged.is_empty() {
        eprintln!(
            "warning: {} of {} trajectories diverged and were excluded (first: #{} at t = {})",
            stats.diverged.len(),
            stats.n_traj,
            stats.diverged[0].trajectory,
            stats.diverged[0].time
        );
    }
    let pending = (fraction > s.max_divergence).then(|| {
        CliError::Divergence(format!(
            "divergence rate {fraction:.4} exceeds --max-divergence {}",
            s.max_divergence
        ))
    });
    Ok((report, pending))
}

/// Writes one trajectory's samples as CSV.
pub fn dump(settings: &Settings, index: usize, path: &Path) -> Result<(), CliError> {
    let (samples, divergence) = trajectory_dump(&settings.params, &settings.sde, index)?;
    let mut body = String::from(
        "t,alpha1_re,alpha1_im,alpha1_plus_re,alpha1_plus_im,alpha2_re,alpha2_im,alpha2_plus_re,alpha2_plus_im\n",
    );
    for x in &samples {
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            x.t,
            x.alpha1.re,
            x.alpha1.im,
            x.alpha1_plus.re,
            x.alpha1_plus.im,
            x.alpha2.re,
            x.alpha2.im,
            x.alpha2_plus.re,
            x.alpha2_plus.im
        ));
    }
    crate::output::write_file(path, &body)?;
    if let Some(d) = divergence {
        eprintln!("trajectory {index} diverged at t = {}", d.time);
    }
    Ok(())
}
