use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nlnr"))
}

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut c = bin();
    c.args(args).env_remove("NLNR_THREADS");
    if let Some(t) = threads {
        c.env("NLNR_THREADS", t);
    }
    c.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

struct XorShift(u64);

impl XorShift {
    fn unif(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    fn gauss(&mut self) -> f64 {
        let (a, b) = (self.unif().max(1e-300), self.unif());
        (-2.0 * a.ln()).sqrt() * (std::f64::consts::TAU * b).cos()
    }

    fn row(&mut self, p: usize, dup: bool) -> Vec<f64> {
        let mut z: Vec<f64> = (0..p).map(|_| self.gauss()).collect();
        for k in 1..p {
            z[k] += 0.5 * z[k - 1];
        }
        if dup {
            z[1] = z[0];
        }
        z
    }
}

/// Small deterministic dataset: AR(1)-style columns, y = 2 x0 − 1.5 x3 + noise.
fn write_data(dir: &Path, p: usize, n: usize, n_unl: usize, dup: bool) -> (PathBuf, PathBuf) {
    let mut rng = XorShift(0x9e37_79b9_7f4a_7c15);
    let header: Vec<String> = (0..p).map(|k| format!("x{k}")).collect();
    let mut lab = header.join(",") + ",y\n";
    for _ in 0..n {
        let x = rng.row(p, dup);
        let y = 2.0 * x[0] - 1.5 * x[3] + 0.5 * rng.gauss();
        for v in &x {
            write!(lab, "{v},").unwrap();
        }
        writeln!(lab, "{y}").unwrap();
    }
    let mut unl = header.join(",") + "\n";
    for _ in 0..n_unl {
        let x = rng.row(p, dup);
        let line: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        unl += &(line.join(",") + "\n");
    }
    let (a, b) = (dir.join("data.csv"), dir.join("unlabeled.csv"));
    std::fs::write(&a, lab).unwrap();
    std::fs::write(&b, unl).unwrap();
    (a, b)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sha(path: &Path) -> String {
    Sha256::digest(std::fs::read(path).unwrap())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn infer_smoke_writes_one_row_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, u) = write_data(tmp.path(), 8, 120, 300, false);
    let out = tmp.path().join("out");
    let o = run(
        &[
            "infer", "--data", s(&d), "--unlabeled", s(&u), "--response", "y", "--target", "3", "--method",
            "boosted-full", "--alpha", "0.05", "--seed", "7", "--out", s(&out),
        ],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("inference.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("3,x3,boosted-full,"));

    let m = manifest(&out);
    assert_eq!(m["command"], "infer");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 16);
    for entry in m["inputs"].as_array().unwrap().iter().chain(m["outputs"].as_array().unwrap()) {
        let path = PathBuf::from(entry["path"].as_str().unwrap());
        assert_eq!(entry["sha256"].as_str().unwrap(), sha(&path));
    }
}

#[test]
fn identical_invocations_give_identical_results() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, u) = write_data(tmp.path(), 10, 150, 400, false);
    let mut files = Vec::new();
    for (k, threads) in ["1", "4"].iter().enumerate() {
        let out = tmp.path().join(format!("o{k}"));
        let o = run(
            &["select", "--data", s(&d), "--unlabeled", s(&u), "--rule", "pvalue", "--alpha-tau", "0.01", "--adjust", "holm-sidak", "--out", s(&out)],
            Some(threads),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(manifest(&out)["threads"].as_u64().unwrap().to_string(), *threads);
        files.push(out);
    }
    for name in ["selection.csv", "inference.csv", "neighborhoods.csv"] {
        assert_eq!(
            std::fs::read(files[0].join(name)).unwrap(),
            std::fs::read(files[1].join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn unknown_flag_exits_one_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, _) = write_data(tmp.path(), 5, 40, 0, false);
    let out = tmp.path().join("never");
    let o = run(&["infer", "--data", s(&d), "--bogus", "--out", s(&out)], None);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert!(!out.exists());
}

#[test]
fn validation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, _) = write_data(tmp.path(), 5, 40, 0, false);
    let out = tmp.path().join("o");
    let missing = tmp.path().join("missing.csv");
    assert_eq!(code(&run(&["infer", "--data", s(&missing), "--out", s(&out)], None)), 1);
    assert_eq!(code(&run(&["infer", "--data", s(&d), "--target", "nope", "--out", s(&out)], None)), 1);
    assert_eq!(code(&run(&["infer", "--data", s(&d), "--method", "magic", "--out", s(&out)], None)), 1);
    assert_eq!(code(&run(&["prescreen", "--data", s(&d), "--top-m", "0", "--out", s(&out)], None)), 1);
    assert_eq!(code(&run(&["--threads", "0", "prescreen", "--data", s(&d), "--top-m", "1"], None)), 1);
    assert!(!out.exists());
}

#[test]
fn singular_working_set_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, _) = write_data(tmp.path(), 6, 80, 0, true);
    let out = tmp.path().join("o");
    let o = run(&["joint", "--data", s(&d), "--targets", "x0,x1", "--out", s(&out)], None);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn supervised_path_without_unlabeled_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, _) = write_data(tmp.path(), 6, 100, 0, false);
    let out = tmp.path().join("o");
    let o = run(&["infer", "--data", s(&d), "--out", s(&out)], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("inference.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn joint_prescreen_and_baselines_write_results() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, u) = write_data(tmp.path(), 8, 150, 200, false);
    let out = tmp.path().join("joint");
    let o = run(&["joint", "--data", s(&d), "--unlabeled", s(&u), "--targets", "x0,x3", "--out", s(&out)], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j: Value = serde_json::from_str(&std::fs::read_to_string(out.join("joint.json")).unwrap()).unwrap();
    assert_eq!(j["df"], 2);
    assert_eq!(j["covariance"].as_array().unwrap().len(), 4);

    let out = tmp.path().join("pre");
    let o = run(&["prescreen", "--data", s(&d), "--unlabeled", s(&u), "--top-m", "3", "--write-data", "--out", s(&out)], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let kept = std::fs::read_to_string(out.join("prescreen.csv")).unwrap();
    assert_eq!(kept.lines().count(), 4);
    assert!(kept.contains(",x0,") && kept.contains(",x3,"));
    let header = std::fs::read_to_string(out.join("reduced.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap().split(',').count(), 4);
    assert!(out.join("reduced_unlabeled.csv").exists());

    for method in ["lasso", "dlasso"] {
        let out = tmp.path().join(method);
        let o = run(&["baseline", "--data", s(&d), "--method", method, "--out", s(&out)], None);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let csv = std::fs::read_to_string(out.join("baseline.csv")).unwrap();
        assert_eq!(csv.lines().count(), 9);
    }
}

#[test]
fn cross_validated_selection_writes_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, u) = write_data(tmp.path(), 8, 120, 200, false);
    let out = tmp.path().join("o");
    let o = run(
        &["select", "--data", s(&d), "--unlabeled", s(&u), "--rule", "studentized", "--cv-grid", "0,2,4,8", "--out", s(&out)],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(out.join("cv_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 4 * 5);
}

const SIM_A: &str = r#"
methods = ["nlnr", "boosted"]
alpha = 0.05

[design]
p = 40
rho = 0.5
n = 100
n_unlabeled = 300
beta_structure = "sparse"
replicates = 3
base_seed = 11

[selection]
rule = "p-value"
alpha_tau = 0.001
adjust = "holm-sidak"
"#;

/// Same settings as `SIM_A` with fields and tables reordered.
const SIM_B: &str = r#"
alpha = 0.05
methods = ["nlnr", "boosted"]

[selection]
adjust = "holm-sidak"
alpha_tau = 0.001
rule = "p-value"

[design]
base_seed = 11
replicates = 3
beta_structure = "sparse"
n_unlabeled = 300
n = 100
rho = 0.5
p = 40
"#;

#[test]
fn simulate_writes_reports_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.toml");
    let b = tmp.path().join("b.toml");
    std::fs::write(&a, SIM_A).unwrap();
    std::fs::write(&b, SIM_B).unwrap();
    let mut outs = Vec::new();
    for (k, (cfg, threads)) in [(&a, "1"), (&a, "4"), (&b, "8")].into_iter().enumerate() {
        let out = tmp.path().join(format!("r{k}"));
        let o = run(&["simulate", "--config", s(cfg), "--out", s(&out)], Some(threads));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["per_signal.csv", "selection.csv", "provenance.json", "manifest.json"] {
            assert!(out.join(f).exists(), "{f}");
        }
        outs.push(out);
    }
    for f in ["per_signal.csv", "selection.csv"] {
        let first = std::fs::read(outs[0].join(f)).unwrap();
        for o in &outs[1..] {
            assert_eq!(first, std::fs::read(o.join(f)).unwrap(), "{f}");
        }
    }
    let h: Vec<Value> = outs.iter().map(|o| manifest(o)["config_hash"].clone()).collect();
    assert_eq!(h[0], h[2]);
    let per_signal = std::fs::read_to_string(outs[0].join("per_signal.csv")).unwrap();
    assert_eq!(per_signal.lines().count(), 1 + 2 * 10);
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"], None);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["infer", "select", "joint", "prescreen", "simulate", "baseline"] {
        assert!(text.contains(sub), "{sub}");
    }
}
