use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oseen-spectral")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

struct Vtk {
    points: Vec<[f64; 2]>,
    pressure_re: Vec<f64>,
    velocity_im: Vec<f64>,
}

fn parse_vtk(path: &Path) -> Vtk {
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# vtk DataFile Version 3.0");
    assert_eq!(lines[2], "ASCII");
    assert_eq!(lines[3], "DATASET UNSTRUCTURED_GRID");
    let np: usize = lines[4].split_whitespace().nth(1).unwrap().parse().unwrap();
    let points = lines[5..5 + np]
        .iter()
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|t| t.parse().unwrap()).collect();
            [v[0], v[1]]
        })
        .collect();
    let block = |name: &str, skip: usize| -> Vec<f64> {
        let start = lines.iter().position(|l| l.starts_with(name)).unwrap_or_else(|| panic!("{name} missing")) + skip;
        lines[start..start + np]
            .iter()
            .flat_map(|l| l.split_whitespace().map(|t| t.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .collect()
    };
    let ct = lines.iter().position(|l| l.starts_with("CELL_TYPES")).unwrap();
    let nc: usize = lines[ct].split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(lines[ct + 1..ct + 1 + nc].iter().all(|l| *l == "5"));
    Vtk {
        points,
        pressure_re: block("SCALARS pressure_re", 2),
        velocity_im: block("VECTORS velocity_im", 1),
    }
}

#[test]
fn solve_writes_eigenvalues_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["solve", "--n", "20", "--out", out]);
    let v = json(&dir.path().join("eigenvalues.json"));
    let first = v["eigenvalues"][0]["re"].as_f64().unwrap();
    assert!((first - 13.7800).abs() / 13.7800 < 5e-3, "{first}");
    assert_eq!(v["eigenvalues"].as_array().unwrap().len(), 4);
    for key in ["nu", "beta", "element", "dof", "tol", "seed"] {
        assert!(!v["metadata"][key].is_null(), "metadata.{key}");
    }
    assert_eq!(v["metadata"]["dof"], 2924);
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "solve");
    assert!(manifest["outputs"].as_array().unwrap().iter().any(|o| o == "mode1.vtk"));
}

#[test]
fn stokes_solve_is_real_with_zero_imaginary_velocity() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["solve", "--n", "10", "--beta", "0,0", "--out", dir.path().to_str().unwrap()]);
    let v = json(&dir.path().join("eigenvalues.json"));
    for e in v["eigenvalues"].as_array().unwrap() {
        assert!(e["im"].as_f64().unwrap().abs() <= 1e-9, "{e}");
    }
    let vtk = parse_vtk(&dir.path().join("mode1.vtk"));
    assert!(vtk.velocity_im.iter().all(|v| *v == 0.0));
}

#[test]
fn lshape_pressure_peaks_at_reentrant_corner() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["solve", "--domain", "lshape", "--n", "8", "--nev", "1", "--out", dir.path().to_str().unwrap()]);
    let vtk = parse_vtk(&dir.path().join("mode1.vtk"));
    let (i, _) = vtk
        .pressure_re
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap();
    // P1 pressure changes sign across the corner, so the peak sits on the first vertex ring.
    let h_cell = 2.0f64.sqrt() / 8.0;
    let p = vtk.points[i];
    assert!(p[0].hypot(p[1]) <= h_cell + 1e-12, "peak at {p:?}");
}

#[test]
fn missing_mesh_file_is_a_config_error() {
    let out = run(&["solve", "--domain", "/definitely/missing.mesh"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"]["message"].as_str().unwrap().contains("/definitely/missing.mesh"));
}

#[test]
fn bad_flag_value_is_a_config_error() {
    assert_eq!(run(&["solve", "--nu", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["solve", "--element", "p3"]).status.code(), Some(2));
    assert_eq!(run(&["solve", "--nev", "abc"]).status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_with_write_code() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("f");
    std::fs::write(&blocker, "x").unwrap();
    let out = run(&["mesh", "--n", "2", "--out", blocker.join("d").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn mesh_command_round_trips_through_file_domain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    run_ok(&["mesh", "--n", "10", "--out", out.to_str().unwrap()]);
    let file = out.join("mesh.txt");
    assert!(std::fs::read_to_string(&file).unwrap().starts_with("oseen-mesh 1\n121 200\n"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["solve", "--n", "10", "--out", a.to_str().unwrap()]);
    run_ok(&["solve", "--domain", file.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    let ea = json(&a.join("eigenvalues.json"));
    let eb = json(&b.join("eigenvalues.json"));
    assert_eq!(ea["eigenvalues"], eb["eigenvalues"]);
}

#[test]
fn uniform_csv_has_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["uniform", "--levels", "20,30,40,50", "--out", dir.path().to_str().unwrap()]);
    let (header, rows) = csv_rows(&dir.path().join("uniform.csv"));
    assert_eq!(header.join(","), "N,h,dof,lambda_re,lambda_im,err,eta2,etastar2,eff,effstar");
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[4][0], "extr");
    let extr: f64 = rows[4][3].parse().unwrap();
    assert!((extr - 13.6107).abs() / 13.6107 < 5e-3, "{extr}");
    let fit = json(&dir.path().join("uniform_fit.json"));
    assert_eq!(fit["fits"].as_array().unwrap().len(), 4);
}

#[test]
fn stokes_limit_groups_and_monotone_gaps() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["stokes-limit", "--n", "40", "--exponents", "0,1,2,3,4,5,6,7,8", "--out", dir.path().to_str().unwrap()]);
    let (header, rows) = csv_rows(&dir.path().join("stokes_limit.csv"));
    assert_eq!(header.join(","), "i,beta_norm,k,lambda_re,lambda_im,stokes_re,gap");
    let mut groups: Vec<i32> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    groups.dedup();
    assert_eq!(groups.len(), 9);
    let max_gap = |i: i32| -> f64 {
        rows.iter().filter(|r| r[0] == i.to_string()).map(|r| r[6].parse::<f64>().unwrap()).fold(0.0, f64::max)
    };
    for i in 1..9 {
        assert!(max_gap(i) <= max_gap(i - 1) + 1e-10, "gap rises at i = {i}");
    }
}

#[test]
fn adapt_lshape_reduces_error_hundredfold() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["adapt", "--domain", "lshape", "--estimator", "eta", "--iterations", "15", "--dump-meshes", "--out", out]);
    let (header, rows) = csv_rows(&dir.path().join("adapt.csv"));
    assert_eq!(header.join(","), "iter,dof,lambda_re,lambda_im,err,R,D,J,eta2,eff");
    assert_eq!(rows.len(), 15);
    let err = |r: &Vec<String>| r[4].parse::<f64>().unwrap();
    assert!(err(&rows[14]) * 100.0 < err(&rows[0]), "{} -> {}", err(&rows[0]), err(&rows[14]));
    assert!(dir.path().join("meshes/iter_15.mesh").exists());
    assert!(dir.path().join("meshes/iter_15.vtk").exists());
}

#[test]
fn reruns_and_manifest_replays_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let args = ["uniform", "--levels", "4,6,8", "--nev", "2", "--beta", "0.5,0.25"];
    run_ok(&[&args[..], &["--out", a.to_str().unwrap()]].concat());
    run_ok(&[&args[..], &["--out", b.to_str().unwrap()]].concat());
    let manifest = a.join("manifest.json");
    run_ok(&["uniform", "--config", manifest.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    for name in ["uniform.csv", "uniform_fit.json"] {
        let first = std::fs::read(a.join(name)).unwrap();
        assert_eq!(first, std::fs::read(b.join(name)).unwrap(), "{name}");
        assert_eq!(first, std::fs::read(c.join(name)).unwrap(), "{name} via manifest");
    }
}

#[test]
fn matrix_market_export_parses() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["solve", "--n", "4", "--export-matrices", "--out", dir.path().to_str().unwrap()]);
    let k = std::fs::read_to_string(dir.path().join("K.mtx")).unwrap();
    assert!(k.starts_with("%%MatrixMarket matrix coordinate real general"));
    let parsed = oseen_core::sparse::CsrMatrix::from_matrix_market(&k).unwrap();
    assert_eq!(parsed.nrows(), parsed.ncols());
}
