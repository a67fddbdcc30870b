use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FREE: &str = "[solver]\ncutoff = 2.0\n\n[orbit]\ne0 = 0.09\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bloch-beam"))
}

fn run_cli(dir: &Path, command: &str, config: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = dir.join(format!("{command}.toml"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(format!("out-{command}"));
    let output = bin()
        .arg(command)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    (output, out)
}

fn csv_rows(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn levels_reproduce_landau_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let (out, path) = run_cli(dir.path(), "levels", FREE, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&path.join("levels.csv"));
    assert_eq!(header, "k3,n,eps_n,gamma,theta_b,theta_rw,N_M");
    assert_eq!(rows.len(), 6);
    for (n, want) in [(0.0, 0.09), (1.0, 0.03), (2.0, 0.018)] {
        let row = rows.iter().find(|r| r[1] == n).unwrap();
        assert!((row[2] - want).abs() <= 1e-6 * want, "{row:?}");
        assert_eq!(row[3], 0.5);
        assert_eq!(row[6], 1.0);
    }
    let summary = json(&path.join("summary.json"));
    assert_eq!(summary["command"], "levels");
    assert!(summary["conventions"]["gamma_rule"].is_string());
    assert!(summary["conventions"]["symplectic_form"].is_string());
    assert!(summary["conventions"]["theta_rw_sign"].is_string());
    assert_eq!(summary["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(summary["config"]["orbit"]["e0"], 0.09);
    assert!(path.join("config.effective.toml").exists());
}

#[test]
fn identical_configs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    let (_, pa) = run_cli(&a, "levels", FREE, &[]);
    let (_, pb) = run_cli(&b, "levels", FREE, &[]);
    for f in ["levels.csv", "summary.json", "config.effective.toml"] {
        assert_eq!(fs::read(pa.join(f)).unwrap(), fs::read(pb.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn orbit_writes_samples_and_area() {
    let dir = tempfile::tempdir().unwrap();
    let (out, path) = run_cli(dir.path(), "orbit", FREE, &["--json"]);
    assert!(out.status.success());
    let (header, rows) = csv_rows(&path.join("orbit.csv"));
    assert_eq!(header, "s,k1,k2,vy1,vy2");
    assert_eq!(rows.len(), 256);
    for r in &rows {
        assert!((r[1].hypot(r[2]) - 0.3).abs() < 1e-8);
    }
    let (header, rows) = csv_rows(&path.join("area.csv"));
    assert_eq!(header, "k3,S");
    assert!((rows[0][1] - 0.09 * std::f64::consts::PI).abs() < 1e-9);
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["command"], "orbit");
}

#[test]
fn zone_boundary_orbit_exits_with_assumption_code() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = run_cli(dir.path(), "orbit", "[solver]\ncutoff = 2.0\n\n[orbit]\ne0 = 0.25\n", &["--json"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["exit_code"], 2);
}

#[test]
fn unknown_key_exits_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = run_cli(dir.path(), "levels", "[orbit]\ne0 = 0.09\nmue = 2\n", &[]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("mue") && msg.contains("line 3"), "{msg}");
}

#[test]
fn missing_partner_exits_naming_the_triple() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[orbit]\ne0 = 0.09\n\n[[lattice.potential]]\ng = [0, 1, 0]\nre = 0.05\n";
    let (out, _) = run_cli(dir.path(), "levels", cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[0, -1, 0]"));
}

#[test]
fn verify_reports_four_residuals_and_a_slope() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{FREE}\n[residual]\neps_list = [3.125e-4, 1.5625e-4, 7.8125e-5, 3.90625e-5]\n");
    let (out, path) = run_cli(dir.path(), "verify", &cfg, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&path.join("residual.csv"));
    assert_eq!(header, "eps,sup_residual");
    assert_eq!(rows.len(), 4);
    let report = json(&path.join("verify.json"));
    let slope = report["residual"]["slope"].as_f64().unwrap();
    assert!((slope - 1.5).abs() <= 0.15);
    assert_eq!(report["eikonal_passed"], true);
}

#[test]
fn failed_verification_still_writes_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let (out, path) = run_cli(dir.path(), "verify", FREE, &[]);
    assert_eq!(out.status.code(), Some(3));
    let report = json(&path.join("verify.json"));
    assert_eq!(report["slope_within_target"], false);
    assert!(path.join("residual.csv").exists() && path.join("summary.json").exists());
}

#[test]
fn beam_reports_frame_and_maslov_index() {
    let dir = tempfile::tempdir().unwrap();
    let (out, path) = run_cli(dir.path(), "beam", FREE, &[]);
    assert!(out.status.success());
    let (header, rows) = csv_rows(&path.join("frame.csv"));
    assert!(header.starts_with("s,Y11_re,Y11_im,") && header.ends_with(",abs_det_Y,arg_det_Y"));
    assert_eq!(rows.len(), 257);
    let arg = |r: &Vec<f64>| r[r.len() - 1];
    let winding = (arg(rows.last().unwrap()) - arg(&rows[0])) / std::f64::consts::TAU;
    assert!((winding - 1.0).abs() < 1e-6);
    let m = json(&path.join("maslov.json"));
    assert_eq!(m["maslov_index"], 1);
}

#[test]
fn phases_and_bands_commands() {
    let dir = tempfile::tempdir().unwrap();
    let (out, path) = run_cli(dir.path(), "phases", FREE, &[]);
    assert!(out.status.success());
    let p = json(&path.join("phases.json"));
    assert_eq!(p["ledger"]["n_m"], 1);
    assert!(p["ledger"]["theta_b"].as_f64().unwrap().abs() < 1e-8);

    let (out, path) = run_cli(dir.path(), "bands", FREE, &[]);
    assert!(out.status.success());
    let (header, rows) = csv_rows(&path.join("bands.csv"));
    assert_eq!(header, "t,k1,k2,k3,E_1,E_2,E_3,E_4");
    assert_eq!(&rows[0][4..], &[0.0, 1.0, 1.0, 1.0]);
}

#[test]
fn sweep_writes_density_and_mirrors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[solver]\ncutoff = 2.0\n\n[orbit]\ne0 = 0.09\nk3_grid = [-0.1, -0.05, 0.0, 0.05, 0.1]\n\n[output]\ndat = true\n";
    let (out, path) = run_cli(dir.path(), "sweep", cfg, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&path.join("density.csv"));
    assert_eq!(header, "eps_bin,count");
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().map(|r| r[1]).sum::<f64>() > 0.0);
    assert!(path.join("density.dat").exists());
    let s = json(&path.join("sweep.json"));
    assert_eq!(s["peak_k3"], 0.0);
}

#[test]
fn unwritable_output_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, FREE).unwrap();
    let out = bin()
        .args(["levels", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(blocker.join("sub"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}
