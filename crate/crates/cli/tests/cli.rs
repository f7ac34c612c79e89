use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn afc_ocp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afc-ocp"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, solver: &str) -> String {
    let text = format!(
        r#"
[problem]
name = "convergence"
horizon = 0.2

[mesh]
sizes = [4, 8]

[time]
k_factor = 0.2

[solver]
{solver}

[output]
directory = "out"
"#
    );
    let path = dir.join("cfg.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn convergence_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = afc_ocp(&["convergence", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/state.csv")).unwrap();
    assert!(csv.starts_with("h0,err_L2,order_L2,err_H1,order_H1\n"));
    assert_eq!(csv.lines().count(), 3);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["levels"].as_array().unwrap().len(), 2);
}

#[test]
fn run_writes_snapshots_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scheme = \"galerkin\"");
    let out = afc_ocp(&["run", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let vtk = fs::read_to_string(dir.path().join("out/galerkin_m8_final.vtk")).unwrap();
    for name in ["state", "costate", "control"] {
        assert!(vtk.contains(&format!("SCALARS {name} double 1")));
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/layer_report.json")).unwrap()).unwrap();
    assert_eq!(report["runs"][0]["scheme"], "galerkin");
}

#[test]
fn limiter_dump_writes_four_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = afc_ocp(&["limiter-dump", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for kind in ["state_diffusion", "state_mass", "adjoint_diffusion", "adjoint_mass"] {
        let csv = fs::read_to_string(dir.path().join(format!("out/factors_{kind}.csv"))).unwrap();
        assert!(csv.starts_with("i,j,flux,a_ij\n"));
    }
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(afc_ocp(&["run", "missing.toml"], dir.path()).status.code(), Some(1));
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[problem]\nname = \"convergence\"\n[mesh]\nsizes = [1]\n[time]\nk = 0.1\n").unwrap();
    let out = afc_ocp(&["convergence", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));

    let cfg = write_config(dir.path(), "");
    let out = Command::new(env!("CARGO_BIN_EXE_afc-ocp"))
        .args(["convergence", &cfg])
        .current_dir(dir.path())
        .env("AFC_OCP_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn outer_non_convergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "max_outer = 1");
    let out = afc_ocp(&["convergence", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let mut tables = Vec::new();
    for workers in ["1", "3"] {
        let out = Command::new(env!("CARGO_BIN_EXE_afc-ocp"))
            .args(["convergence", &cfg])
            .current_dir(dir.path())
            .env("AFC_OCP_WORKERS", workers)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        tables.push(fs::read_to_string(dir.path().join("out/costate.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
}
