use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kerr-coupler"));
    cmd.env("KERR_COUPLER_THREADS", "1");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn steady_matched_detuning_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("steady.json");
    let o = run(&[
        "steady",
        "--eps",
        "1000",
        "--gamma",
        "1",
        "--delta",
        "10",
        "--J",
        "10",
        "--chi",
        "1e-6",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&out);
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    let i = rows[0]["intensity"].as_f64().unwrap();
    assert!((i - 5e5).abs() < 5e5 * 1e-10, "{i}");
    assert_eq!(doc["manifest"], "steady.json.manifest.json");
}

#[test]
fn zero_pump_gives_empty_cavities() {
    let o = run(&[
        "steady", "--eps", "0", "--gamma", "1", "--delta", "10", "--J", "10", "--chi", "1e-6",
    ]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    let last = text.lines().last().unwrap();
    let intensity: f64 = last.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert_eq!(intensity, 0.0);
}

#[test]
fn invalid_parameters_exit_2() {
    assert_eq!(code(&run(&["steady", "--gamma", "-1"])), 2);
    assert_eq!(code(&run(&["steady", "--gamma", "nan"])), 2);
    assert_eq!(code(&run(&["stability", "--root-index", "7"])), 2);
    assert_eq!(code(&run(&["spectrum", "--b", "0"])), 2);
    assert_eq!(code(&run(&["sde", "--dt", "0"])), 2);
}

#[test]
fn invalid_linearisation_exits_4() {
    // The middle branch of the bistable window is unstable.
    let o = run(&[
        "spectrum",
        "--eps",
        "4472.13595499958",
        "--gamma",
        "1",
        "--delta",
        "0",
        "--J",
        "10",
        "--chi",
        "1e-6",
        "--root-index",
        "1",
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sde"));
}

#[test]
fn excessive_divergence_exits_5_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sde.json");
    // Strong nonlinearity: a few positive-P trajectories escape.
    let args = [
        "sde",
        "--ntraj",
        "40",
        "--dt",
        "0.01",
        "--t-end",
        "20",
        "--burn-in",
        "1",
        "--partitions",
        "2",
        "--chi",
        "0.3",
        "--eps",
        "3",
        "--out",
        out.to_str().unwrap(),
    ];
    let o = run(&args);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&out);
    let diverged = doc["stats"]["diverged"].as_array().unwrap().len();
    assert!(diverged > 0 && diverged < 40);
    assert!(dir.path().join("sde.json.manifest.json").exists());

    let o = bin()
        .args(args)
        .args(["--max-divergence", "0.5"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
}

#[test]
fn total_divergence_exits_5() {
    // An explicit Euler step this coarse is unstable for a strong nonlinearity.
    let o = run(&[
        "sde",
        "--ntraj",
        "8",
        "--dt",
        "0.5",
        "--t-end",
        "40",
        "--burn-in",
        "1",
        "--sample-interval",
        "0.5",
        "--partitions",
        "2",
        "--scheme",
        "euler",
        "--chi",
        "5",
        "--eps",
        "20",
    ]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn linear_system_has_vacuum_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lin.csv");
    let o = run(&[
        "spectrum",
        "--chi",
        "0",
        "--omega-points",
        "11",
        "--omega-max",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("# manifest: lin.csv.manifest.json run_id: "));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 11);
    for r in &rows {
        assert!((r[col("duan_sum")] - 4.0).abs() < 1e-12);
        assert!((r[col("epr_product_1")] - 1.0).abs() < 1e-12);
        assert!(r[col("logneg")].abs() < 1e-12);
    }
}

#[test]
fn manifests_replay_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.csv");
    let second = dir.path().join("b.csv");
    let args = ["spectrum", "--theta", "80", "--omega-points", "50"];
    let o = bin().args(args).arg("--out").arg(&first).output().unwrap();
    assert_eq!(code(&o), 0);
    let manifest = dir.path().join("a.csv.manifest.json");
    let m = json(&manifest);
    assert_eq!(m["operation"], "spectrum");
    assert_eq!(m["settings"]["theta"], 80.0);

    let o = bin().args(args).arg("--out").arg(&second).output().unwrap();
    assert_eq!(code(&o), 0);
    let body = |p: &Path| {
        let t = std::fs::read_to_string(p).unwrap();
        t.split_once('\n').unwrap().1.to_string()
    };
    let head = |p: &Path| {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(body(&first), body(&second));
    assert_eq!(
        head(&first).rsplit_once(' ').unwrap().1,
        head(&second).rsplit_once(' ').unwrap().1,
        "run ids agree"
    );

    let replayed = dir.path().join("a_replay.csv");
    let o = bin()
        .args(["replay"])
        .arg(&manifest)
        .arg("--out")
        .arg(&replayed)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(body(&first), body(&replayed));
}

#[test]
fn sde_runs_replay_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sde.json");
    let o = run(&[
        "sde",
        "--chi",
        "1e-3",
        "--eps",
        "30",
        "--ntraj",
        "16",
        "--t-end",
        "4",
        "--burn-in",
        "2",
        "--partitions",
        "4",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let before = std::fs::read(&out).unwrap();
    let manifest = dir.path().join("sde.json.manifest.json");
    let again = dir.path().join("again.json");
    let o = bin()
        .arg("replay")
        .arg(&manifest)
        .arg("--out")
        .arg(&again)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let a = json(&out);
    let b: serde_json::Value = serde_json::from_slice(&std::fs::read(&again).unwrap()).unwrap();
    assert_eq!(a["rows"], b["rows"]);
    assert_eq!(a["run_id"], b["run_id"]);
    // Thread count never changes the numbers.
    let third = dir.path().join("third.json");
    let o = bin()
        .env("KERR_COUPLER_THREADS", "3")
        .arg("replay")
        .arg(&manifest)
        .arg("--out")
        .arg(&third)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let c: serde_json::Value = serde_json::from_slice(&std::fs::read(&third).unwrap()).unwrap();
    assert_eq!(a["rows"], c["rows"]);
    assert!(!before.is_empty());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "eps = 1000\ngamma = 1\ndelta = 10\nJ = 10\nchi = 2e-6\n",
    )
    .unwrap();
    let out = dir.path().join("s.json");
    let o = bin()
        .args(["steady", "--config"])
        .arg(&config)
        .args(["--chi", "1e-6", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&dir.path().join("s.json.manifest.json"));
    assert_eq!(m["settings"]["params"]["chi1"], 1e-6);
    assert_eq!(m["settings"]["params"]["gamma1"], 1.0);
    let i = json(&out)["rows"][0]["intensity"].as_f64().unwrap();
    assert!((i - 5e5).abs() < 1e-4);

    std::fs::write(&config, "eps = 1000\nbogus = 1\n").unwrap();
    let o = bin()
        .args(["steady", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn pump_sweep_finds_a_bistable_region() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = run(&[
        "steady",
        "--gamma",
        "1",
        "--delta",
        "0",
        "--J",
        "10",
        "--chi",
        "1e-6",
        "--sweep-eps2",
        "0:4e7:400",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text
        .lines()
        .skip(2)
        .any(|l| l.split(',').nth(1) == Some("3")));
}

#[test]
fn trajectory_dump_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("traj.csv");
    let o = bin()
        .args([
            "sde",
            "--chi",
            "1e-3",
            "--eps",
            "30",
            "--ntraj",
            "4",
            "--t-end",
            "2",
            "--burn-in",
            "1",
            "--partitions",
            "2",
            "--dump",
        ])
        .arg(&dump)
        .args(["--dump-index", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&dump).unwrap();
    assert!(text.starts_with("t,alpha1_re"));
    assert!(text.lines().count() > 10);
}
