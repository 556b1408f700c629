use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_squeezeformer")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["presets"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["flops", "--seconds", "0"])), 1);
    assert_eq!(code(&run(&["flops", "--seconds", "-2"])), 1);
    assert_eq!(code(&run(&["flops", "--preset", "squeezeformer-xxl"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nbogus = 1\n").unwrap();
    let o = run(&["config", "--config", p(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    std::fs::write(&bad, "[model]\nheads = 5\n").unwrap();
    assert_eq!(code(&run(&["params", "--config", p(&bad)])), 2);
    std::fs::write(&bad, "not toml [").unwrap();
    assert_eq!(code(&run(&["params", "--config", p(&bad)])), 2);

    let missing = dir.path().join("missing.ckpt");
    let feats = dir.path().join("missing.bin");
    assert_eq!(code(&run(&["decode", "--checkpoint", p(&missing), "--input", p(&feats)])), 3);
}

#[test]
fn flops_report_values() {
    let o = run(&["flops", "--preset", "squeezeformer-sm", "--format", "json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema"], "squeezeformer.flops");
    let total = v["total_flops"].as_f64().unwrap();
    let summed: f64 = v["entries"].as_array().unwrap().iter().map(|e| e["flops"].as_f64().unwrap()).sum();
    assert_eq!(total, summed);
    assert!((total / 1e9 - 44.46).abs() < 0.01, "{total}");

    let tsv = stdout(&run(&["flops", "--preset", "conformer-ctc-m", "--format", "tsv"]));
    assert!(tsv.lines().next().unwrap().contains('\t'));
    let text = stdout(&run(&["flops", "--preset", "conformer-ctc-m", "--seconds", "15"]));
    assert!(text.contains("1500 frames"), "{text}");
}

#[test]
fn ladder_and_params() {
    let o = run(&["ladder", "--size", "m", "--format", "json"]);
    assert_eq!(code(&o), 0);
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0]["change"], "baseline");
    let g: Vec<f64> = rows.iter().map(|r| r["gflops"].as_f64().unwrap()).collect();
    assert!(g[5] < g[0]);

    let o = run(&["params", "--preset", "squeezeformer-xs", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let total = v["total"].as_u64().unwrap() as f64;
    assert!((total / 1e6 - 9.0).abs() / 9.0 < 0.05, "{total}");
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        assert_eq!(code(&run(&["flops", "--preset", "squeezeformer-l", "--format", "json", "-o", p(out)])), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn config_overrides_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "preset = \"tiny-conformer\"\n[model]\nnum_blocks = 3\n[train]\nsteps = 7\n").unwrap();
    let dump = stdout(&run(&["config", "--config", p(&cfg)]));
    assert!(dump.contains("preset = \"tiny-conformer\""), "{dump}");
    assert!(dump.contains("num_blocks = 3"));
    assert!(dump.contains("steps = 7"));

    let again = dir.path().join("again.toml");
    std::fs::write(&again, &dump).unwrap();
    assert_eq!(stdout(&run(&["config", "--config", p(&again)])), dump);

    let flag = stdout(&run(&["config", "--config", p(&cfg), "--preset", "tiny"]));
    assert!(flag.contains("block_structure = \"mf-cf\""));
}

#[test]
fn train_decode_profile_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ckpt = d.join("m.ckpt");
    let log = d.join("log.jsonl");
    let curve = d.join("curve.tsv");
    let acc = d.join("acc.tsv");
    let ckdir = d.join("ckpts");
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, "[train]\neval_every = 5\neval_examples = 4\nbatch_size = 2\n").unwrap();
    let args = [
        "train", "--config", p(&cfg), "--steps", "10", "--seed", "4", "--log", p(&log), "--curve", p(&curve),
        "--accuracy-curve", p(&acc), "--checkpoint", p(&ckpt), "--checkpoint-dir", p(&ckdir), "--checkpoint-every", "5",
    ];
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("final accuracy"));
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 10);
    assert_eq!(std::fs::read_to_string(&curve).unwrap().lines().count(), 11);
    assert_eq!(std::fs::read_to_string(&acc).unwrap().lines().count(), 3);
    assert!(ckdir.join("step-000005.ckpt").exists());
    assert!(ckdir.join("step-000010.ckpt").exists());

    let first_log = std::fs::read(&log).unwrap();
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(std::fs::read(&log).unwrap(), first_log);

    let feats = d.join("f.bin");
    let labels = stdout(&run(&["synth", "--features", p(&feats), "--seed", "2"]));
    assert!(labels.trim().split(' ').all(|t| t.parse::<usize>().unwrap() < 8));
    let o = run(&["decode", "--checkpoint", p(&ckpt), "--input", p(&feats)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).trim().split(' ').filter(|t| !t.is_empty()).all(|t| t.parse::<usize>().unwrap() < 8));

    let o = run(&["profile", "--checkpoint", p(&ckpt), "--inputs", "2", "--frames", "40", "--distances", "1,2"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["blocks"].as_array().unwrap().len(), 2);
    let o = run(&["profile", "--checkpoint", p(&ckpt), "--features", p(&feats), "--format", "tsv"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("layer\tdistance\tsimilarity"));
}
