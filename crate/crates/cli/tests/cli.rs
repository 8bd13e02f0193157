use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn snp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_FIT: &str = r#"
kind = "fit"
methods = ["siren", "snp-uniform"]

[model]
width = 8
hidden_layers = 2

[fit]
iterations = 5
record_every = 5
lr = 1e-3

[pretrain]
signals = 2
iterations = 3

[data]
count = 2
height = 16
width = 16
channels = 1
"#;

#[test]
fn gen_noise_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.toml", "kind = \"gen-noise\"\n[noise]\ncount = 2\n[data]\nheight = 16\nwidth = 16\n");
    let out = dir.path().join("run");
    let o = snp(&["gen-noise", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "4", "-q"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("noise/uniform_0001.png").exists());
    let resolved = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(resolved.contains("seed = 4"));
}

#[test]
fn fit_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "f.toml", SMALL_FIT);
    let out = dir.path().join("run");
    let o = snp(&["fit", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "2", "-q"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("snp-uniform"));
    let r = snp(&["report", "--out", out.to_str().unwrap()]);
    assert!(r.status.success());
    assert!(String::from_utf8_lossy(&r.stdout).contains("siren"));
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "kind = \"fit\"\n[fit]\niterations = \"abc\"\n");
    let o = snp(&["fit", "--config", &cfg, "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("fit.iterations") && err.contains("line 3"), "{err}");

    let o = snp(&["denoise", "--config", &cfg.replace("bad", "nope")]);
    assert_eq!(o.status.code(), Some(4));

    let wrong = write(dir.path(), "w.toml", "kind = \"ntk\"\n");
    let o = snp(&["fit", "--config", &wrong, "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_4_with_sentinel() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL_FIT}images = \"{}\"\n", dir.path().join("absent").display());
    let cfg = write(dir.path(), "f.toml", &text);
    let out = dir.path().join("run");
    let o = snp(&["fit", "--config", &cfg, "--out", out.to_str().unwrap(), "-q"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(out.join("FAILED").exists());
}

#[test]
fn runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "f.toml", SMALL_FIT);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = snp(&["fit", "--config", &cfg, "--out", out.to_str().unwrap(), "-q"]);
        assert!(o.status.success());
    }
    let list = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert_eq!(list, fs::read_to_string(b.join("manifest.txt")).unwrap());
    for f in list.lines() {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
