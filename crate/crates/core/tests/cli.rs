use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cns_floquet::cli_io::{read_field_bin, read_json};
use cns_floquet::config_params::RunConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cns-floquet"))
}

fn scratch(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = RunConfig::desk(0.5);
    cfg.grid.nh = vec![7];
    cfg.grid.nz = 11;
    cfg.grid.nt = 16;
    cfg.solver.decay_periods = 6;
    let p = dir.join("small.toml");
    fs::write(&p, cfg.to_toml()).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("CNS_FLOQUET_THREADS", "1").output().unwrap()
}

#[test]
fn full_run_is_deterministic_and_complete() {
    let dir = scratch("cli_run");
    let cfg = small_config(&dir);
    let (a, b) = (dir.join("a"), dir.join("b"));
    for out in [&a, &b] {
        let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"]);
        let text = String::from_utf8_lossy(&o.stdout);
        assert!(text.contains("kernel_exponent"), "stdout: {text}\nstderr: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["sweep.csv", "coeffs.json", "floquet/spectrum_0.csv", "state/energy.csv", "state/field.bin", "dispersion.svg"] {
        let x = fs::read(a.join(f)).unwrap();
        let y = fs::read(b.join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
    let m = read_json(&a.join("manifest.json")).unwrap();
    assert_eq!(m["seed"].as_u64(), Some(3));
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let files: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert!(files.contains(&"coeffs.json") && files.contains(&"verify.json"), "{files:?}");
    let (shape, data) = read_field_bin(&a.join("state/field.bin")).unwrap();
    assert_eq!(shape, vec![16, 7 * 11 + 2 * 7 * 9]);
    assert_eq!(data.len(), shape.iter().product::<usize>());

    // verify is a pure function of the artifacts
    let before = fs::read(a.join("verify.json")).unwrap();
    run(&["verify", "--out", a.to_str().unwrap()]);
    assert_eq!(before, fs::read(a.join("verify.json")).unwrap());

    // a damaged artifact is reported by name
    fs::write(a.join("coeffs.json"), "{ not json").unwrap();
    let o = run(&["verify", "--out", a.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("coeffs.json"));
}

#[test]
fn invalid_config_is_rejected() {
    let dir = scratch("cli_bad");
    let p = dir.join("bad.toml");
    fs::write(&p, RunConfig::desk(0.5).to_toml().replace("nt = 64", "nt = 7")).unwrap();
    let o = run(&["state", "--config", p.to_str().unwrap(), "--out", dir.join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nt"));
    let o = run(&["verify", "--out", dir.join("missing").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing artifact"));
}

#[test]
fn default_config_round_trips() {
    let o = run(&["default-config"]);
    assert!(o.status.success());
    let cfg = RunConfig::from_toml(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert_eq!(cfg, RunConfig::desk(0.5));
}
