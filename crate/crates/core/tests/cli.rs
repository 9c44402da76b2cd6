use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn melmo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_melmo"))
        .current_dir(dir)
        .env("MELMO_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = melmo(dir, args);
    assert!(
        out.status.success(),
        "melmo {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn manifests(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join("melmo-runs.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// A generated corpus and a tiny model trained on it for two epochs.
struct Trained {
    dir: TempDir,
}

impl Trained {
    fn new(epochs: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        ok(dir.path(), &["synth", "--tokens", "4000", "--seed", "3", "--out", "data"]);
        ok(
            dir.path(),
            &[
                "pretrain", "--corpus", "data/corpus.txt", "--vocab", "data/vocab.txt", "--holdout-docs", "2",
                "--seq-len", "16", "--batch", "4", "--epochs", epochs, "--width", "8", "--hidden", "16",
                "--out", "m.ckpt", "--metrics", "metrics.jsonl",
            ],
        );
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }
}

#[test]
fn pretrain_writes_checkpoint_metrics_and_manifest() {
    let t = Trained::new("2");
    assert!(t.path().join("m.ckpt").exists());
    let metrics = std::fs::read_to_string(t.path().join("metrics.jsonl")).unwrap();
    let records: Vec<Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    for key in ["epoch", "train_loss", "dev_perplexity", "tokens_per_sec"] {
        assert!(records[1].get(key).is_some(), "missing {key}");
    }
    let m = manifests(t.path());
    assert_eq!(m.len(), 2, "one manifest per run");
    let p = &m[1];
    assert_eq!(p["command"], "pretrain");
    assert_eq!(p["status"], "ok");
    assert_eq!(p["seed"], 1);
    assert_eq!(p["config"]["seq_len"], 16);
    assert_eq!(p["paths"]["vocab"], "data/vocab.txt");
    for key in ["build", "started_unix", "finished_unix"] {
        assert!(p.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn eval_reproduces_the_final_holdout_number_bitwise() {
    let t = Trained::new("2");
    let out = ok(t.path(), &["eval", "--checkpoint", "m.ckpt", "--corpus", "data/corpus.txt", "--vocab", "data/vocab.txt"]);
    let m = manifests(t.path());
    let trained = m[1]["metrics"]["final_dev_perplexity"].as_f64().unwrap();
    let eval = m[2]["metrics"]["perplexity"].as_f64().unwrap();
    assert_eq!(trained.to_bits(), eval.to_bits());
    assert!(out.contains(&format!("perplexity {eval}")));
    assert!(out.contains("predicted "));
}

#[test]
fn pretrain_is_deterministic_apart_from_timestamps() {
    let a = Trained::new("1");
    let b = Trained::new("1");
    let strip = |mut v: Value| {
        let o = v.as_object_mut().unwrap();
        o.remove("started_unix");
        o.remove("finished_unix");
        v
    };
    let ma = strip(manifests(a.path()).remove(1));
    let mb = strip(manifests(b.path()).remove(1));
    assert_eq!(ma, mb);
    let ca = std::fs::read(a.path().join("m.ckpt")).unwrap();
    let cb = std::fs::read(b.path().join("m.ckpt")).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn random_init_checkpoint_scores_near_the_vocabulary_size() {
    let t = Trained::new("0");
    let out = ok(t.path(), &["eval", "--checkpoint", "m.ckpt", "--corpus", "data/corpus.txt", "--vocab", "data/vocab.txt", "--holdout-docs", "0"]);
    let v = std::fs::read_to_string(t.path().join("data/vocab.txt")).unwrap().lines().count() as f64;
    let ppl: f64 = out.lines().find_map(|l| l.strip_prefix("perplexity ")).unwrap().parse().unwrap();
    assert!((ppl / v - 1.0).abs() < 0.05, "perplexity {ppl} vs V {v}");
}

#[test]
fn bad_input_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--tokens", "500", "--out", "data"]);

    let out = melmo(d, &["pretrain", "--corpus", "data/corpus.txt", "--vocab", "missing.vocab"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.vocab"));

    let out = melmo(d, &["pretrain", "--corpus", "data/corpus.txt", "--vocab", "data/vocab.txt", "--mask-accum", "7", "--mask-rate", "0.15"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("masking"));

    assert_eq!(melmo(d, &["pretrain", "--corpus"]).status.code(), Some(2));
    assert_eq!(melmo(d, &["no-such-command"]).status.code(), Some(2));
    assert_eq!(melmo(d, &["pretrain", "--corpus", "data/corpus.txt", "--vocab", "data/vocab.txt", "--width", "7"]).status.code(), Some(2));

    std::fs::write(d.join("junk.ckpt"), b"not a checkpoint").unwrap();
    let out = melmo(d, &["eval", "--checkpoint", "junk.ckpt", "--corpus", "data/corpus.txt", "--vocab", "data/vocab.txt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));

    // failures still leave a manifest record
    let m = manifests(d);
    assert!(m.iter().any(|r| r["status"] == "failed"));
}

fn parse_extract(text: &str) -> (Vec<usize>, Vec<(u32, String, Vec<f64>)>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(' ').map(|x| x.parse().unwrap()).collect();
    let rows = lines
        .map(|l| {
            let mut f = l.split(' ');
            let id = f.next().unwrap().parse().unwrap();
            let layer = f.next().unwrap().to_string();
            (id, layer, f.map(|x| x.parse().unwrap()).collect())
        })
        .collect();
    (header, rows)
}

#[test]
fn extract_emits_every_layer_and_the_mix() {
    let t = Trained::new("1");
    let d = t.path();
    // whole-word vocabulary entries are single pieces
    let vocab = std::fs::read_to_string(d.join("data/vocab.txt")).unwrap();
    let words: Vec<&str> = vocab.lines().filter(|w| w.len() > 3 && w.chars().all(|c| c.is_ascii_lowercase())).take(5).collect();
    assert_eq!(words.len(), 5);
    std::fs::write(d.join("in.txt"), words.join(" ")).unwrap();
    let args = ["extract", "--checkpoint", "m.ckpt", "--vocab", "data/vocab.txt", "--input", "in.txt"];

    let all = ok(d, &[&args[..], &["--layers", "all"]].concat());
    let (header, rows) = parse_extract(&all);
    assert_eq!(header, vec![5, 2, 8]);
    assert_eq!(rows.len(), 15);
    assert!(rows.iter().all(|r| r.2.len() == 8));
    assert_eq!(all, ok(d, &[&args[..], &["--layers", "all"]].concat()), "identical input gives identical bytes");

    let mixed = ok(d, &[&args[..], &["--mix", "uniform", "--gamma", "1.0"]].concat());
    let (_, mix_rows) = parse_extract(&mixed);
    assert_eq!(mix_rows.len(), 5);
    for (k, (_, layer, v)) in mix_rows.iter().enumerate() {
        assert_eq!(layer, "mix");
        for j in 0..8 {
            let avg = (0..3).map(|l| rows[3 * k + l].2[j]).sum::<f64>() / 3.0;
            assert!((v[j] - avg).abs() < 1e-12);
        }
    }

    let some = ok(d, &[&args[..], &["--layers", "2"]].concat());
    assert_eq!(parse_extract(&some).1.len(), 5);
    let out = melmo(d, &[&args[..], &["--layers", "3"]].concat());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown layer index 3"));
}

#[test]
fn gradcheck_runs_one_op_and_reports_faults() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--op", "lstmp_step_b"]);
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("PASS lstmp_step_b"));

    let out = melmo(dir.path(), &["gradcheck", "--op", "matmul", "--inject-fault", "matmul"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("FAIL matmul"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("matmul"));

    assert_eq!(melmo(dir.path(), &["gradcheck", "--op", "nonsense"]).status.code(), Some(2));
}

#[test]
fn ablation_tables_have_the_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--tokens", "8000", "--out", "data"]);
    let common = [
        "ablate", "--corpus", "data/corpus.txt", "--vocab", "data/vocab.txt", "--holdout-docs", "1", "--epochs", "1",
        "--width", "8", "--hidden", "16", "--mask-accum", "1",
    ];
    let seqlen = ok(d, &[&common[..], &["--grid", "seqlen", "--seeds", "1"]].concat());
    let table: Vec<&str> = seqlen.lines().skip_while(|l| !l.starts_with("config")).collect();
    assert_eq!(table.len(), 4, "{seqlen}");
    assert!(table[0].contains("train") && table[0].contains("dev") && table[0].contains("test"));

    let bt = ok(d, &[&common[..], &["--grid", "btbptt", "--seeds", "1,2,3", "--metrics", "ab.jsonl"]].concat());
    let rows: Vec<&str> = bt.lines().skip_while(|l| !l.starts_with("config")).skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.matches('±').count() == 3), "{bt}");
    let records = std::fs::read_to_string(d.join("ab.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 6);
}

#[test]
fn single_cell_ablation_matches_pretrain_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--tokens", "3000", "--out", "data"]);
    let model = ["--width", "8", "--hidden", "16", "--epochs", "1", "--mask-accum", "2"];
    let ab = ok(
        d,
        &[&["ablate", "--corpus", "data/corpus.txt", "--vocab", "data/vocab.txt", "--holdout-docs", "1", "--cell", "16:4:on", "--seeds", "5", "--metrics", "ab.jsonl"][..], &model].concat(),
    );
    let rec: Value = serde_json::from_str(std::fs::read_to_string(d.join("ab.jsonl")).unwrap().trim()).unwrap();
    assert!(ab.contains("N=16 B=4 btbptt=on"));

    // the same run by hand: train on everything but the last two documents,
    // evaluate the second-to-last one
    let text = std::fs::read_to_string(d.join("data/corpus.txt")).unwrap();
    let docs: Vec<&str> = text.split("\n\n").collect();
    let n = docs.len();
    std::fs::write(d.join("train.txt"), docs[..n - 2].join("\n\n")).unwrap();
    std::fs::write(d.join("dev.txt"), docs[n - 2]).unwrap();
    ok(
        d,
        &[&["pretrain", "--corpus", "train.txt", "--vocab", "data/vocab.txt", "--holdout", "dev.txt", "--seq-len", "16", "--batch", "4", "--seed", "5", "--out", "c.ckpt"][..], &model].concat(),
    );
    let m = manifests(d);
    let dev = m.last().unwrap()["metrics"]["final_dev_perplexity"].as_f64().unwrap();
    assert_eq!(dev.to_bits(), rec["dev_perplexity"].as_f64().unwrap().to_bits());
}

#[test]
fn bench_and_synth_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["bench-cell", "--steps", "1000", "--reps", "1", "--width", "8", "--hidden", "16", "--batch", "2"]);
    assert!(out.contains("speed-up of b over a"));
    assert_eq!(melmo(dir.path(), &["bench-cell", "--steps", "10"]).status.code(), Some(2));
    let out = ok(dir.path(), &["synth", "--tokens", "1000", "--out", "s"]);
    assert!(out.contains("corpus.txt"));
    let p: PathBuf = dir.path().join("s/vocab.txt");
    assert!(p.exists());
}
