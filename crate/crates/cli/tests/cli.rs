use std::path::Path;
use std::process::{Command, Output};

use cochlea_tl::lut::FilterLut;
use cochlea_tl::ModelParams;

fn cochlea(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cochlea"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn small_params(dir: &Path) -> String {
    let p = ModelParams {
        n: 100,
        ..Default::default()
    };
    let path = dir.join("params.toml");
    std::fs::write(&path, p.to_toml_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn tone_runs_are_written_and_analyzed_identically_twice() {
    let dir = tempfile::tempdir().unwrap();
    let params = small_params(dir.path());
    let mut runs = Vec::new();
    for (level, fmt) in [("20", "csv"), ("70", "bin")] {
        let out = dir.path().join(format!("run{level}"));
        let o = cochlea(&[
            "sim", "--mode", "v1d", "--params", &params, "--level", level, "--duration", "0.02", "--format", fmt,
            "--out", s(&out), "--seed", "3",
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join(format!("trace.{fmt}")).exists());
        let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
        assert!(manifest.contains("\"seed\": 3") && manifest.contains("sha256"));
        runs.push(out);
    }
    let a = cochlea(&["analyze", s(&runs[0]), s(&runs[1])]);
    let b = cochlea(&["analyze", s(&runs[1]), s(&runs[0])]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("level_db,response_db,gain_db\n20,"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn click_and_chirp_runs_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let params = small_params(dir.path());
    let click = dir.path().join("click");
    let o = cochlea(&[
        "sim", "--mode", "v1d", "--params", &params, "--stimulus", "click", "--duration", "0.005", "--out", s(&click),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let spec = cochlea(&["analyze", s(&click)]);
    assert!(String::from_utf8(spec.stdout).unwrap().starts_with("freq_hz,re_pa_db\n"));

    let chirp = dir.path().join("chirp");
    let o = cochlea(&[
        "sim", "--mode", "v1d", "--params", &params, "--stimulus", "chirp", "--duration", "0.05", "--level", "20",
        "--decimation", "2", "--out", s(&chirp),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let resp = cochlea(&["analyze", s(&chirp), "--sigma", "0.001", "--points", "50"]);
    assert_eq!(code(&resp), 0, "{}", String::from_utf8_lossy(&resp.stderr));
    let text = String::from_utf8(resp.stdout).unwrap();
    assert!(text.contains("# Q10"));
    assert_eq!(text.lines().count(), 52);
}

#[test]
fn vstar_needs_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let params = small_params(dir.path());
    let o = cochlea(&["sim", "--mode", "vstar", "--params", &params, "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn vstar_runs_with_a_pass_through_table() {
    let dir = tempfile::tempdir().unwrap();
    let params = small_params(dir.path());
    let p = ModelParams::load(&params).unwrap();
    let lut = dir.path().join("id.blut");
    FilterLut::identity(p.n, 30, p.k, p.g_min, p.g_max).write(&lut).unwrap();
    let out = dir.path().join("run");
    let o = cochlea(&[
        "sim", "--mode", "vstar", "--params", &params, "--lut", s(&lut), "--duration", "0.01", "--update-period", "12",
        "--record", "10,40", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"update_period\": 12"));
    assert!(manifest.contains("lut_checksum"));
    let header = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(header.starts_with("t,v_10,v_40,y_10,y_40,g_10,g_40\n"));
}

#[test]
fn lut_verify_reports_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.blut");
    FilterLut::identity(20, 30, 4, 0.0, 1.3).write(&path).unwrap();
    assert_eq!(code(&cochlea(&["lut", "verify", "--lut", s(&path)])), 0);
    let inspect = cochlea(&["lut", "inspect", "--lut", s(&path), "--section", "2", "--g-index", "5"]);
    assert_eq!(String::from_utf8(inspect.stdout).unwrap().lines().count(), 6);

    let mut bytes = std::fs::read(&path).unwrap();
    let i = bytes.len() / 2;
    bytes[i] ^= 0x40;
    std::fs::write(&path, bytes).unwrap();
    let o = cochlea(&["lut", "verify", "--lut", s(&path)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
}

#[test]
fn bad_inputs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "N = \"many\"\n").unwrap();
    assert_eq!(code(&cochlea(&["sim", "--mode", "v1d", "--params", s(&bad)])), 2);
    assert_eq!(code(&cochlea(&["sim", "--mode", "v1d", "--update-period", "5"])), 2);
    assert_eq!(code(&cochlea(&["verify", "--net", s(&dir.path().join("missing.json"))])), 2);
    assert_eq!(code(&cochlea(&["analyze", s(dir.path())])), 2);
    let params = small_params(dir.path());
    let o = cochlea(&["sim", "--mode", "v1d", "--params", &params, "--stimulus", "tone", "--freq", "150000"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn fit_writes_filters_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let o = cochlea(&["fit", "--cf", "20000", "--g", "0.3", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let diag = std::fs::read_to_string(dir.path().join("fit_diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 2);
    let filters: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("filters.json")).unwrap()).unwrap();
    assert_eq!(filters[0]["b"].as_array().unwrap().len(), 32);
}

#[test]
fn seeded_training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut nets = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        let o = cochlea(&[
            "train", "--seed", "11", "--stage1-steps", "3", "--stage2-steps", "1", "--out", s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        nets.push(std::fs::read(out).unwrap());
    }
    assert_eq!(nets[0], nets[1]);
}
