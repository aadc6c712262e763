use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const KEY: &str = "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f";

fn forge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrng-forge"))
        .args(args)
        .env("QRNG_FORGE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_deterministic_and_close_to_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[source]\nduration_s = 0.2\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = forge(&["simulate", "--config", &cfg, "--seed", "3", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ra, rb) = (json(&a.join("simulate.json")), json(&b.join("simulate.json")));
    assert_eq!(ra["digest"], rb["digest"]);
    assert_eq!(fs::read(a.join("tags.qtt")).unwrap(), fs::read(b.join("tags.qtt")).unwrap());
    for ch in ra["channels"].as_array().unwrap() {
        let z = (ch["measured_hz"].as_f64().unwrap() - ch["expected_hz"].as_f64().unwrap())
            / ch["sigma_hz"].as_f64().unwrap();
        assert!(z.abs() <= 4.0, "{ch}");
    }
}

#[test]
fn zero_duration_gives_an_empty_tag_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[source]\nduration_s = 0.0\n");
    let out = dir.path().join("o");
    assert_eq!(code(&forge(&["simulate", "--config", &cfg, "--out", s(&out)])), 0);
    let r = json(&out.join("simulate.json"));
    assert_eq!(r["n_tags"], 0);
    let stream = qrng_forge::pipeline::read_tags(&out.join("tags.qtt")).unwrap();
    assert!(stream.is_empty());
}

#[test]
fn exit_codes_for_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "[source]\npump_power_mw = -1.0\n");
    assert_eq!(code(&forge(&["simulate", "--config", &bad])), 2);
    let unknown = write_config(dir.path(), "u.toml", "[source]\nnot_a_key = 1\n");
    assert_eq!(code(&forge(&["simulate", "--config", &unknown])), 2);
    let missing = dir.path().join("missing.bin");
    assert_eq!(code(&forge(&["test", s(&missing)])), 3);
    assert_eq!(code(&forge(&["simulate", "--config", s(&dir.path().join("nope.toml"))])), 3);
    assert_eq!(code(&forge(&["sweep", "--param", "alpha", "--values", "0.5"])), 2);
    assert_eq!(code(&forge(&["sweep", "--param", "colour", "--values", "0.5,0.6"])), 2);

    let o = Command::new(env!("CARGO_BIN_EXE_qrng-forge"))
        .args(["simulate", "--out", s(&dir.path().join("t"))])
        .env("QRNG_FORGE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

const SMALL_RUN: &str = "
[source]
duration_s = 0.3
[certifier]
block = 20000
[extractor]
n_block = 100000
seed_key = \"KEY\"
[battery]
n_sequences = 2
seq_len = 100000
";

#[test]
fn run_then_rerun_from_manifest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &SMALL_RUN.replace("KEY", KEY));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = forge(&["run", "--config", &cfg, "--out", s(&a)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("Mbps") && stdout.contains("CERTIFIED_BELL"), "{stdout}");

    let o = forge(&["run", "--manifest", s(&a.join("manifest.json")), "--out", s(&b)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (ma, mb) = (json(&a.join("manifest.json")), json(&b.join("manifest.json")));
    assert_eq!(ma["outputs"], mb["outputs"]);
    for f in ["raw_bits.bin", "extracted.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    assert_eq!(ma["certified_output"], true);
    assert_eq!(ma["config"]["extractor"]["seed_key"], KEY);
}

#[test]
fn unseeded_run_records_its_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &SMALL_RUN.replace("seed_key = \"KEY\"\n", ""));
    let a = dir.path().join("a");
    assert_eq!(code(&forge(&["run", "--config", &cfg, "--out", s(&a)])), 0);
    let m = json(&a.join("manifest.json"));
    let key = m["config"]["extractor"]["seed_key"].as_str().unwrap();
    assert_eq!(key.len(), 64);
}

#[test]
fn dark_only_run_is_refused_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "dark.toml",
        &format!(
            "[source]\npair_rate_coeff = 0.0\ndark_rate_hz = 2.0e6\nduration_s = 1.0\n\
             [certifier]\nblock = 4000\n[extractor]\nn_block = 10000\nseed_key = \"{KEY}\"\n"
        ),
    );
    let a = dir.path().join("a");
    let o = forge(&["run", "--config", &cfg, "--out", s(&a)]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!a.join("extracted.bin").exists());
    let cert = json(&a.join("certification.json"));
    assert_eq!(cert["verdict"], "UNCERTIFIED");

    let o = forge(&["run", "--config", &cfg, "--out", s(&a), "--force"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["certified_output"], false);
    assert_eq!(m["forced"], true);
    assert!(a.join("extracted.bin").exists());

    // the standalone extract command applies the same policy
    let raw = a.join("raw_bits.bin");
    let cert_path = a.join("certification.json");
    let x = dir.path().join("x");
    let args = ["extract", s(&raw), "--config", &cfg, "--certification", s(&cert_path), "--out", s(&x)];
    assert_eq!(code(&forge(&args)), 4);
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&forge(&forced)), 0);
}

#[test]
fn product_state_certifies_g2_and_still_extracts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "hh.toml",
        &format!(
            "[source]\nalpha = 1.0\nduration_s = 0.3\n[certifier]\nblock = 20000\n\
             [extractor]\nn_block = 100000\nseed_key = \"{KEY}\"\n"
        ),
    );
    let a = dir.path().join("a");
    let o = forge(&["run", "--config", &cfg, "--out", s(&a)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["certification"]["verdict"], "CERTIFIED_G2");
    let s_val = m["certification"]["S"].as_f64().unwrap();
    assert!((s_val - std::f64::consts::SQRT_2).abs() < 0.1, "S {s_val}");
    assert!(m["certification"]["g2"].as_f64().unwrap() > 2.0);
    assert!(m["bit_rate"]["extracted_bits"].as_u64().unwrap() > 0);
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!(
            "[source]\nduration_s = 0.2\n[certifier]\nblock = 10000\n\
             [extractor]\nn_block = 100000\nseed_key = \"{KEY}\"\n[battery]\nn_sequences = 1\n"
        ),
    );
    let out = dir.path().join("o");
    let run = |args: &[&str]| {
        let o = forge(args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    run(&["simulate", "--config", &cfg, "--out", s(&out)]);
    let tags = out.join("tags.qtt");
    run(&["coincide", s(&tags), "--config", &cfg, "--out", s(&out)]);
    let cert = run(&["certify", s(&tags), "--config", &cfg, "--out", s(&out)]);
    assert!(cert.contains("CERTIFIED_BELL"), "{cert}");
    run(&[
        "extract",
        s(&out.join("raw_bits.bin")),
        "--config",
        &cfg,
        "--seconds",
        "0.2",
        "--certification",
        s(&out.join("certification.json")),
        "--out",
        s(&out),
    ]);
    let ratio = json(&out.join("extraction.json"));
    assert!(ratio["ratio"].as_f64().unwrap() > 0.97);
    run(&["test", s(&out.join("extracted.bin")), "--config", &cfg, "--out", s(&out)]);
    assert!(out.join("battery.json").exists());

    let ascii = dir.path().join("bits.txt");
    run(&["export", s(&out.join("extracted.bin")), "--format", "ascii01", "--output", s(&ascii)]);
    let text = fs::read_to_string(&ascii).unwrap();
    let n = ratio["bits_out"].as_u64().unwrap() as usize;
    assert_eq!(text.trim_end().len(), n);
    assert!(text.trim_end().bytes().all(|b| b == b'0' || b == b'1'));
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("[source]\nduration_s = 0.2\n[certifier]\nblock = 10000\n[extractor]\nn_block = 100000\nseed_key = \"{KEY}\"\n"),
    );
    let csv = dir.path().join("sweep.csv");
    let o = forge(&["sweep", "--config", &cfg, "--param", "alpha", "--values", "0.3,0.7071,1.0", "--csv", s(&csv)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "alpha,S,S_stderr,V,H_min,mbps,verdict,error");
    assert_eq!(lines.len(), 4);
    let s_col: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(s_col[1] > s_col[0] && s_col[1] > s_col[2], "{s_col:?}");
}
