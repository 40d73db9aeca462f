use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stiffkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stiffkit"))
        .args(args)
        .env_remove("STIFFKIT_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(text: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no {key} in\n{text}"));
    line[key.len()..].trim().parse().unwrap()
}

#[test]
fn analyze_scalar_closed_form() {
    let o = stiffkit(&["analyze", "--builtin", "scalar", "--lambda", "-2", "--T", "10"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!((field(&text, "sigma") - 20.0).abs() < 1e-5, "{text}");
    assert!(text.contains("stiff         no"));
}

#[test]
fn analyze_kreiss_is_stiff() {
    let o = stiffkit(&["analyze", "--builtin", "kreiss", "--eps", "1e-6"]);
    assert_eq!(o.status.code(), Some(10));
    assert!(stdout(&o).contains("stiff         yes"));
}

#[test]
fn growing_mode_is_ill_conditioned() {
    let o = stiffkit(&["analyze", "--builtin", "scalar", "--lambda", "2", "--T", "10"]);
    assert_eq!(o.status.code(), Some(11));
    assert!(stdout(&o).contains("ill-cond.     yes"));
}

#[test]
fn missing_problem_file_is_an_error() {
    let o = stiffkit(&["analyze", "missing.prob"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn unknown_parameter_is_an_error() {
    let o = stiffkit(&["analyze", "--builtin", "vdp", "--eps", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn problem_file_is_analyzed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decay.toml");
    fs::write(&path, "name = \"decay\"\ninterval = [0.0, 10.0]\nrhs = [\"-lambda*y1\"]\neta = [1.0]\n\n[params]\nlambda = 2.0\n").unwrap();
    let o = stiffkit(&["analyze", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("problem       decay (ivp"));
    assert!((field(&text, "sigma") - 20.0).abs() < 1e-5);
}

#[test]
fn explicit_euler_on_a_stiff_decay_is_not_represented() {
    let o = stiffkit(&["check-discrete", "--builtin", "scalar", "--lambda", "-1000", "--T", "1", "--method", "explicit-euler", "--n", "100"]);
    assert_eq!(o.status.code(), Some(12));
    let text = stdout(&o);
    assert!(text.contains("wr1 (kappa)   fail"));
    assert!(field(&text, "kappa_d") >= 1e50);
}

#[test]
fn implicit_euler_keeps_kappa_and_reports_its_verdict() {
    let o = stiffkit(&["check-discrete", "--builtin", "scalar", "--lambda", "-1000", "--T", "1", "--method", "implicit-euler", "--n", "100"]);
    let text = stdout(&o);
    assert!(text.contains("wr1 (kappa)   pass"));
    let kd = field(&text, "kappa_d");
    assert!((0.9..=1.1).contains(&kd));
    let pass = text.contains("wr2 (gamma)   pass");
    assert_eq!(o.status.code(), Some(if pass { 0 } else { 12 }));
}

#[test]
fn trapezoidal_on_a_mild_decay_is_represented() {
    let o = stiffkit(&["check-discrete", "--builtin", "scalar", "--lambda", "-1", "--T", "1", "--method", "trapezoidal", "--n", "100"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn mesh_file_drives_check_discrete() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("mesh.txt");
    let nodes: Vec<String> = (0..=100).map(|k| format!("{}", k as f64 / 100.0)).collect();
    fs::write(&mesh, nodes.join("\n")).unwrap();
    let o = stiffkit(&["check-discrete", "--builtin", "scalar", "--lambda", "-1", "--T", "1", "--method", "trapezoidal", "--mesh", mesh.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("(N = 100)"));
}

#[test]
fn sweep_writes_csv_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = stiffkit(&["sweep", "kreiss", "--grid", "1e-1:1e-3", "-o", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("param,kappa,gamma,sigma,eta_star_1,eta_star_2,status\n"));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn troesch_sweep_reports_the_last_point() {
    let o = stiffkit(&["sweep", "troesch", "--jobs", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("50.0,"), "{last}");
    assert!(last.ends_with(",ok") || last.contains("stalled"), "{last}");
}

#[test]
fn mesh_select_writes_mesh_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("mesh.txt");
    let hist = dir.path().join("history.csv");
    let o = stiffkit(&[
        "mesh-select", "--builtin", "turning-point", "--eps", "1e-6",
        "-o", mesh.to_str().unwrap(), "--history", hist.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let h = fs::read_to_string(&hist).unwrap();
    assert!(h.starts_with("round,N,kappa_d,gamma_d,sigma_d,verdict\n"));
    assert!(h.trim_end().ends_with(",pass"));
    let nodes = fs::read_to_string(&mesh).unwrap();
    assert!(nodes.starts_with("0.0\n") && nodes.trim_end().ends_with("2.0"));
}

#[test]
fn zero_rounds_echo_the_initial_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("mesh.txt");
    let hist = dir.path().join("history.csv");
    let o = stiffkit(&[
        "mesh-select", "--builtin", "smooth", "--n", "8", "--max-rounds", "0",
        "-o", mesh.to_str().unwrap(), "--history", hist.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(12));
    assert!(stdout(&o).contains("converged     no"));
    assert_eq!(fs::read_to_string(&mesh).unwrap().lines().count(), 9);
    assert_eq!(fs::read_to_string(&hist).unwrap().lines().count(), 1);
}

#[test]
fn smooth_mesh_selection_is_quick() {
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("history.csv");
    let o = stiffkit(&[
        "mesh-select", "--builtin", "smooth", "--n", "16",
        "-o", dir.path().join("m.txt").to_str().unwrap(), "--history", hist.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(fs::read_to_string(&hist).unwrap().lines().count() <= 3);
}

#[test]
fn list_problems_names_every_case() {
    let o = stiffkit(&["list-problems"]);
    let text = stdout(&o);
    for name in stiffkit::suite::CASES {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name}");
    }
}

#[test]
fn seed_comes_from_the_environment() {
    let run = |seed: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_stiffkit"))
            .args(["analyze", "--builtin", "diag2", "--json"])
            .env("STIFFKIT_SEED", seed)
            .output()
            .unwrap();
        String::from_utf8(o.stdout).unwrap()
    };
    assert_eq!(run("7"), run("7"));
    assert_ne!(run("7"), run("8"));
    let flag = stiffkit(&["--seed", "7", "analyze", "--builtin", "diag2", "--json"]);
    assert_eq!(stdout(&flag), run("7"));
}

#[test]
fn norm_option_changes_the_report() {
    let o = stiffkit(&["analyze", "--builtin", "diag2", "--norm", "2", "--json"]);
    assert!(stdout(&o).contains("\"norm\": \"two\""), "{}", stdout(&o));
}

fn scalar_goldens(dir: &Path) {
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../goldens");
    let manifest = fs::read_to_string(shipped.join("manifest.toml")).unwrap();
    let scalar: String = manifest.split("\n\n").filter(|b| b.contains("case = \"scalar\"")).collect();
    fs::write(dir.join("manifest.toml"), scalar).unwrap();
    fs::copy(shipped.join("scalar.csv"), dir.join("scalar.csv")).unwrap();
}

#[test]
fn verify_goldens_passes_then_catches_corruption() {
    let dir = tempfile::tempdir().unwrap();
    scalar_goldens(dir.path());
    let d = dir.path().to_str().unwrap();
    let o = stiffkit(&["verify-goldens", "--dir", d]);
    assert!(stdout(&o).starts_with("PASS   scalar-decay"), "{}", stdout(&o));

    let csv = dir.path().join("scalar.csv");
    let text = fs::read_to_string(&csv).unwrap().replace("19.999999", "29.999999");
    fs::write(&csv, text).unwrap();
    let o = stiffkit(&["verify-goldens", "--dir", d]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("scalar-decay row 1 sigma: expected 2.99999"), "{}", stdout(&o));
}
