//! End-to-end runs of the `phimaps` binary on the committed configs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phimaps::cli::artifact::RunArtifact;
use phimaps::cli::RunConfig;
use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn phimaps(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_phimaps"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn csv_header(out: &Path) -> String {
    std::fs::read_to_string(out.join("series.csv")).unwrap().lines().next().unwrap().to_string()
}

fn run_ok(args: &[&str], cfg: &str) -> (tempfile::TempDir, Value) {
    let dir = tempfile::tempdir().unwrap();
    let o = phimaps(args, Some(&config(cfg)), dir.path());
    assert_eq!(o.status.code(), Some(0), "{cfg}: {}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    let s = summary(dir.path());
    assert_eq!(s["pass"], Value::Bool(true));
    (dir, s)
}

#[test]
fn every_committed_config_runs() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        let args: &[&str] = match name.split('_').next().unwrap() {
            "energy" => &["energy"],
            "variation" => &["variation", "verify"],
            "ssu" => &["ssu", "check"],
            "liouville" => &["liouville"],
            "flow" => &["flow"],
            "suite" => &["verify-suite"],
            other => panic!("no command for config prefix {other}"),
        };
        let (_, s) = run_ok(args, &name);
        assert_eq!(s["experiment"], Value::String(RunConfig::load(&path).unwrap().0.run.name));
    }
}

#[test]
fn ssu_sphere7_is_certified() {
    let (dir, s) = run_ok(&["ssu", "check"], "ssu_sphere7.toml");
    assert!((s["value"].as_f64().unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(s["criterion"], "sphere");
    assert!(!dir.path().join("series.csv").exists());
}

#[test]
fn sphere_family_table() {
    let (dir, _) = run_ok(&["ssu", "check"], "ssu_sphere_family.toml");
    let text = std::fs::read_to_string(dir.path().join("series.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "m,max_eigenvalue,ssu,expected");
    assert_eq!(rows.len(), 20);
    for row in &rows[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        let m: f64 = cells[0].parse().unwrap();
        assert!((cells[1].parse::<f64>().unwrap() - (6.0 - m)).abs() < 1e-10);
        assert_eq!(cells[2], cells[3]);
    }
}

#[test]
fn constant_map_energy_is_zero_and_artifact_round_trips() {
    let (dir, s) = run_ok(&["energy"], "energy_constant.toml");
    assert_eq!(s["energy"].as_f64().unwrap(), 0.0);
    assert_eq!(csv_header(dir.path()), "k,energy");

    let art = RunArtifact::read(&dir.path().join("artifact.map")).unwrap();
    let (cfg, hash) = RunConfig::load(&config("energy_constant.toml")).unwrap();
    assert_eq!(art.header.config_hash, hash);
    let map = cfg.build_map(1).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&art.values), bits(map.values()));
    assert_eq!(bits(&art.derivatives), bits(map.derivatives()));
    let again = RunArtifact::from_bytes(&art.to_bytes().unwrap()).unwrap();
    assert_eq!(again, art);
}

#[test]
fn artifact_feeds_a_later_run() {
    let (first, s1) = run_ok(&["energy"], "energy_sphere_identity.toml");
    let path = first.path().join("artifact.map");
    let text = format!("[run]\nname = \"reload\"\n\n[map]\nkind = \"artifact\"\npath = {:?}\n", path.to_str().unwrap());
    let cfg_dir = tempfile::tempdir().unwrap();
    let cfg = cfg_dir.path().join("reload.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = tempfile::tempdir().unwrap();
    let o = phimaps(&["energy"], Some(&cfg), out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s2 = summary(out.path());
    let (e1, e2) = (s1["energy"].as_f64().unwrap(), s2["energy"].as_f64().unwrap());
    assert_eq!(e1, e2);
    let a = RunArtifact::read(&path).unwrap();
    let b = RunArtifact::read(&out.path().join("artifact.map")).unwrap();
    assert_eq!(a.values, b.values);
}

#[test]
fn missing_target_is_an_error_naming_the_section() {
    let text = std::fs::read_to_string(config("energy_constant.toml")).unwrap();
    let broken = text.replace("[target]\nkind = \"sphere\"\ndim = 2\n", "");
    assert_ne!(broken, text);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.toml");
    std::fs::write(&cfg, broken).unwrap();
    let o = phimaps(&["energy"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("target"));
}

#[test]
fn parse_and_validation_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("[run]\nname = \"x\"\n[ssu]\ncriterion = 7\n", "criterion"),
        ("[run]\nname = \"x\"\n[flow]\ninitial_step = -1.0\n", "flow.initial_step"),
        ("[run]\nname = \"x\"\n[variation]\nfd_tolerance = 0.0\n", "variation.fd_tolerance"),
        ("[run]\nname = \"x\"\nbogus = 1\n", "bogus"),
        ("[run]\nname = \"x\"\n[domain]\nmodel = \"flat_torus\"\ndim = 2\n", "nodes"),
    ];
    for (i, (text, field)) in cases.iter().enumerate() {
        let cfg = dir.path().join(format!("c{i}.toml"));
        std::fs::write(&cfg, text).unwrap();
        let o = phimaps(&["ssu", "check"], Some(&cfg), &dir.path().join("out"));
        assert_eq!(o.status.code(), Some(1), "{text}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(field), "{field} not in {err}");
    }
}

#[test]
fn identical_configs_give_identical_summaries() {
    let (a, _) = run_ok(&["variation", "verify"], "variation_torus.toml");
    let (b, _) = run_ok(&["variation", "verify"], "variation_torus.toml");
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&a, "summary.json"), read(&b, "summary.json"));
    assert_eq!(read(&a, "series.csv"), read(&b, "series.csv"));

    let dir = tempfile::tempdir().unwrap();
    let o = phimaps(&["variation", "verify", "--seed", "99"], Some(&config("variation_torus.toml")), dir.path());
    assert_eq!(o.status.code(), Some(0));
    let s = summary(dir.path());
    assert_eq!(s["seed"], 99);
    assert_ne!(std::fs::read(dir.path().join("series.csv")).unwrap(), read(&a, "series.csv"));
}

#[test]
fn summaries_print_seventeen_digits() {
    let (dir, _) = run_ok(&["energy"], "energy_sphere_identity.toml");
    let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let line = text.lines().find(|l| l.contains("\"energy\"")).unwrap();
    let number = line.split(':').nth(1).unwrap().trim().trim_end_matches(',');
    let mantissa = number.split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17, "{number}");
}

#[test]
fn flow_outputs() {
    let (dir, s) = run_ok(&["flow"], "flow_shrink.toml");
    assert_eq!(csv_header(dir.path()), "step,energy,residual,ratio");
    let rho = s["empirical_rho"].as_f64().unwrap();
    assert!(rho < 1.0);
    assert!(s["predicted_rho"].as_f64().unwrap() < 1.0);
    assert!(s["final_energy"].as_f64().unwrap() < s["initial_energy"].as_f64().unwrap());
    assert!(dir.path().join("artifact.map").exists());

    let (dir, s) = run_ok(&["flow", "--workers", "1"], "flow_gradient.toml");
    assert_eq!(csv_header(dir.path()), "step,energy,residual,ratio");
    assert!(s["predicted_rho"].is_null());
}

#[test]
fn liouville_outputs() {
    let (dir, s) = run_ok(&["liouville"], "liouville_flat.toml");
    assert_eq!(s["lambda"].as_f64().unwrap(), 1.0);
    assert_eq!(csv_header(dir.path()), "r,lambda_min,lambda_max,condition");
    assert_eq!(s["monotonicity"]["pass"], Value::Bool(true));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("steep.toml");
    std::fs::write(&cfg, "[run]\nname = \"steep\"\n[liouville]\nm = 8\nprofile = \"pinched_negative\"\nmax_rate = 1.0\nmin_rate = 0.5\n").unwrap();
    let o = phimaps(&["liouville"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let s = summary(&dir.path().join("out"));
    assert!(s["lambda"].is_null());
    assert!(s["hypotheses_unmet"].is_string());
}

#[test]
fn verify_suite_reports_mutations_as_failures() {
    let dir = tempfile::tempdir().unwrap();
    let o = phimaps(&["verify-suite", "--mutation", "flip_tension"], None, dir.path());
    assert_eq!(o.status.code(), Some(2));
    let s = summary(dir.path());
    let failed: Vec<&str> = s["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["pass"] == Value::Bool(false))
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"conservation_order"), "{failed:?}");

    let o = phimaps(&["verify-suite", "--mutation", "nonsense"], None, &dir.path().join("x"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn commands_without_config_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = phimaps(&["energy"], None, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
    let o = Command::new(env!("CARGO_BIN_EXE_phimaps")).arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}
