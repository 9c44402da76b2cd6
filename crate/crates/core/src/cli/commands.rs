use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use crate::corpus::{load_corpus, segment_stream, DocumentSet, Segment};
use crate::model::{represent, scalar_mix, CellVariant, ModelParams};
use crate::numkernel::OpKind;
use crate::synth::{generate, SynthConfig};
use crate::trainer::{
    compare_variants, eval_perplexity, load_checkpoint, pretrain, save_checkpoint, Checkpoint, EpochReport,
    EvalSettings, OptimState, TrainRunConfig,
};
use crate::wordpiece::{load_vocab, tokenize, Vocab};

use super::ablate::{format_table, run_grid, AblationCell, Splits};
use super::gradcheck::{check_names, run_suite};
use super::manifest::{append_jsonl, unix_now, RunManifest};
use super::{
    AblateArgs, BenchArgs, Cli, CliError, Command, EvalArgs, ExtractArgs, GradcheckArgs, PretrainArgs, SynthArgs,
};

type Out<'a> = &'a mut dyn Write;

fn io_out(e: std::io::Error) -> CliError {
    CliError::Internal(format!("writing output: {e}"))
}

fn config_value<T: Serialize>(args: &T) -> Value {
    serde_json::to_value(args).unwrap_or(Value::Null)
}

pub(super) fn dispatch(cli: &Cli, out: Out) -> Result<(), CliError> {
    let (name, config) = match &cli.command {
        Command::Pretrain(a) => ("pretrain", config_value(a)),
        Command::Eval(a) => ("eval", config_value(a)),
        Command::Extract(a) => ("extract", config_value(a)),
        Command::Gradcheck(a) => ("gradcheck", config_value(a)),
        Command::Ablate(a) => ("ablate", config_value(a)),
        Command::BenchCell(a) => ("bench-cell", config_value(a)),
        Command::Synth(a) => ("synth", config_value(a)),
    };
    let mut m = RunManifest::start(name, config);
    let result = match &cli.command {
        Command::Pretrain(a) => cmd_pretrain(a, &mut m, out),
        Command::Eval(a) => cmd_eval(a, &mut m, out),
        Command::Extract(a) => cmd_extract(a, &mut m, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, &mut m, out),
        Command::Ablate(a) => cmd_ablate(a, &mut m, out),
        Command::BenchCell(a) => cmd_bench(a, &mut m, out),
        Command::Synth(a) => cmd_synth(a, &mut m, out),
    };
    m.status = match &result {
        Ok(()) => "ok".into(),
        Err(e) => {
            m.metric("error", e.to_string());
            "failed".into()
        }
    };
    m.finished_unix = unix_now();
    let written = append_jsonl(&cli.manifest, &m);
    result.and(written)
}

fn documents(path: &Path, vocab: &Vocab) -> Result<DocumentSet, CliError> {
    Ok(load_corpus(path, vocab)?)
}

fn segments(ds: &DocumentSet, seq_len: usize, vocab: &Vocab) -> Result<Arc<[Segment]>, CliError> {
    Ok(segment_stream(ds, seq_len, vocab.special().pad)?.into())
}

#[derive(Serialize)]
struct EpochRecord {
    epoch: usize,
    train_loss: f64,
    train_perplexity: f64,
    dev_perplexity: Option<f64>,
    dev_predicted: Option<usize>,
    predicted: usize,
    batches: usize,
    tokens: usize,
    tokens_per_sec: f64,
    lr: f64,
    empty_passes: usize,
}

impl From<&EpochReport> for EpochRecord {
    fn from(r: &EpochReport) -> Self {
        Self {
            epoch: r.epoch,
            train_loss: r.train_loss,
            train_perplexity: r.train_loss.exp(),
            dev_perplexity: r.dev.as_ref().map(|d| d.perplexity),
            dev_predicted: r.dev.as_ref().map(|d| d.predicted),
            predicted: r.predicted,
            batches: r.batches,
            tokens: r.tokens,
            tokens_per_sec: r.tokens_per_sec,
            lr: r.lr,
            empty_passes: r.empty_passes,
        }
    }
}

fn cmd_pretrain(a: &PretrainArgs, m: &mut RunManifest, out: Out) -> Result<(), CliError> {
    m.seed = Some(a.seed);
    m.path("corpus", &a.corpus);
    m.path("vocab", &a.vocab);
    m.path("checkpoint", &a.out);
    let run = TrainRunConfig {
        seq_len: a.seq_len,
        batch: a.batch,
        btbptt: a.btbptt,
        seed: a.seed,
        eval_every: a.eval_every,
        ..a.optim.run_config()
    };
    run.validate()?;
    let vocab = load_vocab(&a.vocab)?;
    let model = a.model.config(vocab.len())?;
    let docs = documents(&a.corpus, &vocab)?;
    let (train, dev) = match (&a.holdout, a.holdout_docs) {
        (Some(p), _) => {
            m.path("holdout", p);
            (docs, Some(documents(p, &vocab)?))
        }
        (None, Some(k)) if k > 0 => {
            if k >= docs.len() {
                return Err(CliError::Input(format!("holdout of {k} documents leaves none of {} to train on", docs.len())));
            }
            let (t, d) = docs.split_tail(k);
            (t, Some(d))
        }
        _ => (docs, None),
    };
    let dev = dev.map(|d| segments(&d, run.seq_len, &vocab)).transpose()?;
    let mut params = ModelParams::init(&model, run.seed)?;
    let mut opt = OptimState::new(params.tensors(), run.lr, run.decay);

    writeln!(out, "{:>5} {:>11} {:>10} {:>10} {:>10}", "epoch", "train_loss", "train_ppl", "dev_ppl", "tok/s").map_err(io_out)?;
    let mut sink_err = None;
    let reports = pretrain(&mut params, &mut opt, &train, dev, &vocab, &run, |r| {
        let dev = r.dev.as_ref().map_or_else(|| "-".to_string(), |d| format!("{:.3}", d.perplexity));
        let line = format!("{:>5} {:>11.5} {:>10.3} {:>10} {:>10.0}", r.epoch + 1, r.train_loss, r.train_loss.exp(), dev, r.tokens_per_sec);
        let res = writeln!(out, "{line}").map_err(io_out).and_then(|_| match &a.metrics {
            Some(p) => append_jsonl(p, &EpochRecord::from(r)),
            None => Ok(()),
        });
        if let (Err(e), None) = (res, &sink_err) {
            sink_err = Some(e);
        }
    })?;
    if let Some(e) = sink_err {
        return Err(e);
    }

    let mut meta = BTreeMap::new();
    meta.insert("seq_len".into(), run.seq_len.to_string());
    meta.insert("batch".into(), run.batch.to_string());
    meta.insert("mask_rate".into(), run.mask_rate.to_string());
    meta.insert("btbptt".into(), run.btbptt.to_string());
    meta.insert("eval_seed".into(), run.eval_seed.to_string());
    meta.insert("seed".into(), run.seed.to_string());
    if let (None, Some(k)) = (&a.holdout, a.holdout_docs) {
        meta.insert("holdout_docs".into(), k.to_string());
    }
    let ck = Checkpoint { params, optim: Some(opt), meta };
    save_checkpoint(&ck, &a.out)?;

    if let Some(last) = reports.last() {
        m.metric("epochs", reports.len());
        m.metric("final_train_loss", last.train_loss);
        if let Some(d) = reports.iter().rev().find_map(|r| r.dev.as_ref()) {
            m.metric("final_dev_perplexity", d.perplexity);
            m.metric("final_dev_predicted", d.predicted);
        }
    }
    m.metric("parameters", model.param_count().total());
    writeln!(out, "checkpoint written to {}", a.out.display()).map_err(io_out)
}

fn meta_or<T: std::str::FromStr>(ck: &Checkpoint, key: &str, flag: Option<T>, default: T) -> Result<T, CliError> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match ck.meta.get(key) {
        Some(s) => s.parse().map_err(|_| CliError::Input(format!("checkpoint metadata {key}={s:?} is malformed"))),
        None => Ok(default),
    }
}

fn checked_vocab(ck: &Checkpoint, path: &Path) -> Result<Vocab, CliError> {
    let vocab = load_vocab(path)?;
    if vocab.len() != ck.params.config.vocab {
        return Err(CliError::Input(format!(
            "{} has {} tokens but the checkpoint was trained with {}",
            path.display(),
            vocab.len(),
            ck.params.config.vocab
        )));
    }
    Ok(vocab)
}

fn cmd_eval(a: &EvalArgs, m: &mut RunManifest, out: Out) -> Result<(), CliError> {
    m.path("checkpoint", &a.checkpoint);
    m.path("corpus", &a.corpus);
    m.path("vocab", &a.vocab);
    let ck = load_checkpoint(&a.checkpoint)?;
    let vocab = checked_vocab(&ck, &a.vocab)?;
    let d = TrainRunConfig::default();
    let seq_len = meta_or(&ck, "seq_len", a.seq_len, d.seq_len)?;
    let settings = EvalSettings {
        mask_rate: meta_or(&ck, "mask_rate", a.mask_rate, d.mask_rate)?,
        batch: meta_or(&ck, "batch", a.batch, d.batch)?,
        btbptt: meta_or(&ck, "btbptt", a.btbptt, d.btbptt)?,
        seed: meta_or(&ck, "eval_seed", a.eval_seed, d.eval_seed)?,
    };
    m.seed = Some(settings.seed);
    let holdout = a.holdout_docs.or(ck.meta.get("holdout_docs").and_then(|s| s.parse().ok()));
    let mut docs = documents(&a.corpus, &vocab)?;
    if let Some(k) = holdout.filter(|&k| k > 0) {
        docs = docs.split_tail(k).1;
    }
    let report = eval_perplexity(segments(&docs, seq_len, &vocab)?, &ck.params, &vocab, &settings)?;
    m.config["resolved"] = json!({
        "seq_len": seq_len, "batch": settings.batch, "mask_rate": settings.mask_rate,
        "btbptt": settings.btbptt, "eval_seed": settings.seed, "holdout_docs": holdout,
    });
    m.metric("perplexity", report.perplexity);
    m.metric("mean_nll", report.mean_nll);
    m.metric("predicted", report.predicted);
    m.metric("segments", report.segments);
    writeln!(out, "perplexity {}", report.perplexity).map_err(io_out)?;
    writeln!(out, "predicted {}", report.predicted).map_err(io_out)
}

fn parse_layers(spec: &str, count: usize) -> Result<Vec<usize>, CliError> {
    if spec == "all" {
        return Ok((0..count).collect());
    }
    spec.split(',')
        .map(|s| {
            let l: usize = s.trim().parse().map_err(|_| CliError::Input(format!("bad layer index {s:?}")))?;
            if l >= count {
                return Err(CliError::Input(format!("unknown layer index {l} (model has layers 0..={})", count - 1)));
            }
            Ok(l)
        })
        .collect()
}

fn parse_mix(spec: &str, count: usize) -> Result<Vec<f64>, CliError> {
    if spec == "uniform" {
        return Ok(vec![0.0; count]);
    }
    let w: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| CliError::Input(format!("bad mix weight {s:?}"))))
        .collect::<Result<_, _>>()?;
    if w.len() != count {
        return Err(CliError::Input(format!("{} mix weights for {count} layers", w.len())));
    }
    Ok(w)
}

fn write_vector(s: &mut String, token: u32, layer: &str, v: &[f64]) {
    use std::fmt::Write as _;
    let _ = write!(s, "{token} {layer}");
    for x in v {
        let _ = write!(s, " {x}");
    }
    s.push('\n');
}

fn cmd_extract(a: &ExtractArgs, m: &mut RunManifest, out: Out) -> Result<(), CliError> {
    m.path("checkpoint", &a.checkpoint);
    m.path("vocab", &a.vocab);
    m.path("input", &a.input);
    let ck = load_checkpoint(&a.checkpoint)?;
    let vocab = checked_vocab(&ck, &a.vocab)?;
    let text = fs::read_to_string(&a.input)
        .map_err(|e| CliError::Input(format!("cannot read input {}: {e}", a.input.display())))?;
    let ids = tokenize(&text, &vocab);
    if ids.is_empty() {
        return Err(CliError::Input(format!("{} contains no tokens", a.input.display())));
    }
    let cfg = &ck.params.config;
    let count = cfg.layers + 1;
    let layers = parse_layers(&a.layers, count)?;
    let reps = represent(&ck.params, &ids)?;
    let mut s = format!("{} {} {}\n", ids.len(), cfg.layers, cfg.width);
    match &a.mix {
        Some(spec) => {
            let mixed = scalar_mix(&reps, &parse_mix(spec, count)?, a.gamma)?;
            for (k, &id) in ids.iter().enumerate() {
                write_vector(&mut s, id, "mix", mixed.row(k));
            }
        }
        None => {
            for (k, &id) in ids.iter().enumerate() {
                for &l in &layers {
                    write_vector(&mut s, id, &l.to_string(), reps.layers[l].row(k));
                }
            }
        }
    }
    m.metric("tokens", ids.len());
    match &a.out {
        Some(p) => {
            m.path("output", p);
            fs::write(p, s).map_err(|e| CliError::Input(format!("cannot write {}: {e}", p.display())))
        }
        None => out.write_all(s.as_bytes()).map_err(io_out),
    }
}

fn cmd_gradcheck(a: &GradcheckArgs, m: &mut RunManifest, out: Out) -> Result<(), CliError> {
    if let Some(op) = &a.op {
        if !check_names().contains(&op.as_str()) {
            return Err(CliError::Input(format!("unknown check {op:?}; available: {}", check_names().join(", "))));
        }
    }
    let fault = match &a.inject_fault {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| CliError::Input(format!("unknown op kind {name:?}")))?),
        None => None,
    };
    let outcomes = run_suite(a.op.as_deref(), fault)?;
    let mut failed = Vec::new();
    for o in &outcomes {
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        writeln!(
            out,
            "{verdict} {:<14} max_rel_error {:.3e} (tol {:.0e}, {} seeds)",
            o.name, o.max_rel_error, o.tol, o.seeds
        )
        .map_err(io_out)?;
        m.metric(o.name, o.max_rel_error);
        if !o.passed {
            failed.push(o.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Internal(format!("gradient check failed for {}", failed.join(", "))))
    }
}

#[derive(Serialize)]
struct AblationRecord {
    seq_len: usize,
    batch: usize,
    btbptt: bool,
    seed: u64,
    train_perplexity: f64,
    dev_perplexity: f64,
    test_perplexity: Option<f64>,
}

fn cmd_ablate(a: &AblateArgs, m: &mut RunManifest, out: Out) -> Result<(), CliError> {
    m.path("corpus", &a.corpus);
    m.path("vocab", &a.vocab);
    let mut cells: Vec<AblationCell> = a.grid.iter().flat_map(|g| g.cells()).collect();
    for c in &a.cell {
        cells.push(c.parse().map_err(CliError::Input)?);
    }
    cells.dedup();
    if cells.is_empty() {
        return Err(CliError::Input("no cells: pass --grid and/or --cell".into()));
    }
    if a.seeds.is_empty() {
        return Err(CliError::Input("at least one seed is required".into()));
    }
    let base = a.optim.run_config();
    for c in &cells {
        TrainRunConfig { seq_len: c.seq_len, batch: c.batch, ..base.clone() }.validate()?;
    }
    let vocab = load_vocab(&a.vocab)?;
    let model = a.model.config(vocab.len())?;
    let docs = documents(&a.corpus, &vocab)?;
    if 2 * a.holdout_docs >= docs.len() || a.holdout_docs == 0 {
        return Err(CliError::Input(format!(
            "--holdout-docs {} must be positive and leave training documents out of {}",
            a.holdout_docs,
            docs.len()
        )));
    }
    let splits = Splits::from_tail(docs, a.holdout_docs);
    let mut sink_err = None;
    let rows = run_grid(&splits, &vocab, &model, &base, &cells, &a.seeds, |r| {
        let res = writeln!(
            out,
            "{} seed {}: train {:.3} dev {:.3} test {}",
            r.cell,
            r.seed,
            r.train,
            r.dev,
            r.test.map_or("-".into(), |t| format!("{t:.3}"))
        )
        .map_err(io_out)
        .and_then(|_| match &a.metrics {
            Some(p) => append_jsonl(
                p,
                &AblationRecord {
                    seq_len: r.cell.seq_len,
                    batch: r.cell.batch,
                    btbptt: r.cell.btbptt,
                    seed: r.seed,
                    train_perplexity: r.train,
                    dev_perplexity: r.dev,
                    test_perplexity: r.test,
                },
            ),
            None => Ok(()),
        });
        if let (Err(e), None) = (res, &sink_err) {
            sink_err = Some(e);
        }
    })?;
    if let Some(e) = sink_err {
        return Err(e);
    }
    write!(out, "{}", format_table(&rows)).map_err(io_out)?;
    let summary: Vec<Value> = rows
        .iter()
        .map(|s| {
            json!({
                "cell": s.cell.to_string(),
                "train": [s.train().0, s.train().1],
                "dev": [s.dev().0, s.dev().1],
                "test": s.test().map(|t| vec![t.0, t.1]),
            })
        })
        .collect();
    m.metric("cells", summary);
    Ok(())
}

fn cmd_bench(a: &BenchArgs, m: &mut RunManifest, out: Out) -> Result<(), CliError> {
    m.seed = Some(a.seed);
    if a.reps == 0 {
        return Err(CliError::Input("--reps must be positive".into()));
    }
    let cfg = a.model.config(16)?;
    let cmp = compare_variants(a.steps, &cfg, a.batch, a.reps, a.seed)?;
    for (name, v, xs) in [
        ("clip-before-output", CellVariant::ClipBeforeOutput, &cmp.clip_before),
        ("clip-after-output", CellVariant::ClipAfterOutput, &cmp.clip_after),
    ] {
        let runs: Vec<String> = xs.iter().map(|x| format!("{x:.0}")).collect();
        writeln!(out, "variant {v} ({name}): tokens/sec {}", runs.join(" ")).map_err(io_out)?;
    }
    let (sa, sb) = cmp.std_devs();
    writeln!(out, "median a {:.0} (sd {sa:.0})  median b {:.0} (sd {sb:.0})", cmp.median_before(), cmp.median_after())
        .map_err(io_out)?;
    writeln!(out, "speed-up of b over a: {:+.1}%", 100.0 * cmp.speedup()).map_err(io_out)?;
    m.metric("median_tokens_per_sec_a", cmp.median_before());
    m.metric("median_tokens_per_sec_b", cmp.median_after());
    m.metric("speedup", cmp.speedup());
    Ok(())
}

fn cmd_synth(a: &SynthArgs, m: &mut RunManifest, out: Out) -> Result<(), CliError> {
    m.seed = Some(a.seed);
    m.path("out", &a.out);
    fs::create_dir_all(&a.out).map_err(|e| CliError::Input(format!("cannot create {}: {e}", a.out.display())))?;
    let corpus = generate(&SynthConfig::new(a.tokens, a.seed));
    let (c, v) = corpus
        .write(&a.out)
        .map_err(|e| CliError::Input(format!("cannot write into {}: {e}", a.out.display())))?;
    m.metric("tokens", corpus.token_count());
    m.metric("documents", corpus.documents.len());
    m.metric("vocab", corpus.vocab.len());
    writeln!(out, "{} ({} tokens, {} documents)", c.display(), corpus.token_count(), corpus.documents.len()).map_err(io_out)?;
    writeln!(out, "{} ({} entries)", v.display(), corpus.vocab.len()).map_err(io_out)
}
