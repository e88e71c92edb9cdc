use std::path::Path;
use std::process::{Command, Output};

fn bbm_lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbm-lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("BBM_LAB_WORKERS")
        .output()
        .expect("binary runs")
}

fn manifest_hash(dir: &Path) -> String {
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    m["manifest_hash"].as_str().unwrap().to_string()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn minimal_simulate_succeeds() {
    let d = tempfile::tempdir().unwrap();
    let o = bbm_lab(&["simulate", "--t", "2", "--reps", "3"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    for f in ["manifest.json", "config.toml", "run_stats.json", "stopping_line.csv", "snapshots/rep00002_t2.bbmsnap"] {
        assert!(d.path().join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(d.path().join("stopping_line.csv")).unwrap();
    assert!(csv.starts_with("# format: bbm-stopping-line/1"));
}

#[test]
fn non_positive_dt_is_a_usage_error_naming_the_field() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.toml");
    std::fs::write(&cfg, "format = \"bbm-config/1\"\n[simulate]\ndt = 0.0\n").unwrap();
    let o = bbm_lab(&["simulate", "--config", cfg.to_str().unwrap()], &d.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("simulate.dt"), "{}", text(&o));
}

#[test]
fn usage_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(bbm_lab(&["verify", "--suite", "nope"], d.path()).status.code(), Some(2));
    assert_eq!(bbm_lab(&["constants", "--reps", "3"], d.path()).status.code(), Some(2));
    assert_eq!(bbm_lab(&["simulate", "--seed", "x"], d.path()).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_bbm-lab"))
        .args(["simulate", "--t", "1"])
        .arg("--out")
        .arg(d.path())
        .env("BBM_LAB_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn population_budget_is_a_resource_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("small.toml");
    std::fs::write(&cfg, "[simulate]\nmax_particles = 50\nhorizon = 12.0\n").unwrap();
    let o = bbm_lab(&["simulate", "--config", cfg.to_str().unwrap()], &d.path().join("out"));
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
}

#[test]
fn failing_check_exits_one() {
    let d = tempfile::tempdir().unwrap();
    // The second-order expansion is exact for x², so its Richardson ratio is undefined.
    let o = bbm_lab(&["verify", "--suite", "g-expansion"], d.path());
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("verdicts.json")).unwrap()).unwrap();
    assert_eq!(v["format"], "bbm-verify/1");
    assert_eq!(v["pass"], false);
}

#[test]
fn reruns_reproduce_the_manifest_hash() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let args = ["simulate", "--t", "3", "--reps", "4", "--seed", "9"];
    assert_eq!(bbm_lab(&args, &a).status.code(), Some(0));
    assert_eq!(bbm_lab(&[&args[..], &["--workers", "1"]].concat(), &b).status.code(), Some(0));
    assert_eq!(manifest_hash(&a), manifest_hash(&b));

    // The written config reproduces the run on its own.
    let c = d.path().join("c");
    let cfg = a.join("config.toml");
    assert_eq!(bbm_lab(&["simulate", "--config", cfg.to_str().unwrap()], &c).status.code(), Some(0));
    assert_eq!(manifest_hash(&a), manifest_hash(&c));

    let e = d.path().join("e");
    assert_eq!(bbm_lab(&["simulate", "--t", "3", "--reps", "4", "--seed", "10"], &e).status.code(), Some(0));
    assert_ne!(manifest_hash(&a), manifest_hash(&e));
}

#[test]
fn fluctuation_samples_repeat_under_the_same_seed() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let args = ["fluctuations", "--t", "3", "--reps", "60", "--seed", "4"];
    let oa = bbm_lab(&args, &a);
    let ob = bbm_lab(&[&args[..], &["--workers", "1"]].concat(), &b);
    assert!(matches!(oa.status.code(), Some(0 | 1)), "{}", text(&oa));
    assert_eq!(oa.status.code(), ob.status.code());
    let sa = std::fs::read(a.join("samples.csv")).unwrap();
    assert_eq!(sa, std::fs::read(b.join("samples.csv")).unwrap());
    assert!(sa.starts_with(b"# format: bbm-samples/1\n"));
    assert_eq!(manifest_hash(&a), manifest_hash(&b));
}

#[test]
fn constants_for_catalog_functionals() {
    let d = tempfile::tempdir().unwrap();
    let o = bbm_lab(&["constants"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.path().join("constants.json")).unwrap()).unwrap();
    assert_eq!(v["format"], "bbm-constants-table/1");
    let entries = v["entries"].as_array().unwrap();
    let get = |key: &str, field: &str| {
        entries.iter().find(|e| e["functional"] == key).unwrap()[field].as_f64().unwrap()
    };
    for f in ["c1", "c2", "c3"] {
        assert_eq!(get("one", f), 0.0);
    }
    assert!((get("inv_x", "c2") - 1.0).abs() < 1e-8);
    assert!((get("inv_x", "c1") - 2.0 / std::f64::consts::PI).abs() < 1e-8);
    let csv = std::fs::read_to_string(d.path().join("constants.csv")).unwrap();
    assert!(csv.starts_with("# format: bbm-constants-table/1"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn stopping_line_matches_closed_form() {
    let d = tempfile::tempdir().unwrap();
    let o = bbm_lab(&["stopping-line", "--reps", "3000"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.path().join("stopping_line.json")).unwrap()).unwrap();
    assert!((v["closed_form"].as_f64().unwrap() - (-1f64).exp()).abs() < 1e-10);
}

#[test]
fn help_documents_the_config() {
    let d = tempfile::tempdir().unwrap();
    let o = bbm_lab(&["--help"], d.path());
    assert_eq!(o.status.code(), Some(0));
    let h = String::from_utf8_lossy(&o.stdout);
    for needle in ["[stopping_line]", "prune_ceiling = 40.0", "mu_z = 0.0", "BBM_LAB_WORKERS", "Exit codes"] {
        assert!(h.contains(needle), "help lacks {needle}");
    }
}
