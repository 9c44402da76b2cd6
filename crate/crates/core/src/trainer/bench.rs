use std::time::Instant;

use crate::corpus::Direction;
use crate::model::{run_direction, CellVariant, CellVars, ModelConfig, ModelParams, StateVars};
use crate::numkernel::{Tape, Tensor};
use crate::rng::{substream, tag, uniform_tensor};

use super::TrainError;

/// Positions per tape; states are carried across chunks.
const CHUNK: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub variant: CellVariant,
    pub steps: usize,
    pub batch: usize,
    pub seconds: f64,
    pub tokens_per_sec: f64,
}

/// Forward throughput of one direction of layer 0 over `steps` positions
/// for `batch` rows.
pub fn bench_cell(
    variant: CellVariant,
    steps: usize,
    config: &ModelConfig,
    batch: usize,
    seed: u64,
) -> Result<BenchReport, TrainError> {
    if steps < 1000 {
        return Err(TrainError::Config(format!("bench needs at least 1000 steps, got {steps}")));
    }
    if batch == 0 {
        return Err(TrainError::Config("bench batch must be positive".into()));
    }
    let cfg = ModelConfig { variant, ..config.clone() };
    let params = ModelParams::init(&cfg, seed)?;
    let dir = &params.layers[0].forward;
    let mut rng = substream(seed, &[tag::INIT, 99]);
    let inputs = uniform_tensor(&mut rng, &[batch * CHUNK, cfg.width], 1.0);
    let mut h = Tensor::zeros(&[batch, cfg.proj]);
    let mut c = Tensor::zeros(&[batch, cfg.hidden]);
    let start = Instant::now();
    let mut done = 0;
    while done < steps {
        let n = CHUNK.min(steps - done);
        let mut tape = Tape::new();
        let x = if n == CHUNK {
            tape.constant(inputs.clone())
        } else {
            tape.constant(Tensor::matrix(batch * n, cfg.width, inputs.data()[..batch * n * cfg.width].to_vec())?)
        };
        let cell = CellVars {
            w_in: tape.constant(dir.w_in.clone()),
            w_rec: tape.constant(dir.w_rec.clone()),
            bias: tape.constant(dir.bias.clone()),
            w_proj: tape.constant(dir.w_proj.clone()),
        };
        let init = StateVars { h: tape.constant(h), c: tape.constant(c) };
        let (_, fin) = run_direction(&mut tape, x, batch, n, init, &cell, Direction::Forward, &cfg)?;
        h = tape.value(fin.h).clone();
        c = tape.value(fin.c).clone();
        done += n;
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(BenchReport {
        variant,
        steps,
        batch,
        seconds,
        tokens_per_sec: (steps * batch) as f64 / seconds.max(1e-9),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantComparison {
    /// Tokens/sec per repetition.
    pub clip_before: Vec<f64>,
    pub clip_after: Vec<f64>,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn spread(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

impl VariantComparison {
    pub fn median_before(&self) -> f64 {
        median(&self.clip_before)
    }

    pub fn median_after(&self) -> f64 {
        median(&self.clip_after)
    }

    /// `median(after) / median(before) − 1`.
    pub fn speedup(&self) -> f64 {
        self.median_after() / self.median_before() - 1.0
    }

    /// Sample standard deviations `(before, after)` of the throughputs.
    pub fn std_devs(&self) -> (f64, f64) {
        (spread(&self.clip_before), spread(&self.clip_after))
    }
}

/// Interleaves `reps` runs of both variants (alternating which goes first)
/// so slow drift in machine speed affects both equally.
pub fn compare_variants(
    steps: usize,
    config: &ModelConfig,
    batch: usize,
    reps: usize,
    seed: u64,
) -> Result<VariantComparison, TrainError> {
    let mut out = VariantComparison { clip_before: Vec::new(), clip_after: Vec::new() };
    // warm caches and the allocator once before timing
    bench_cell(CellVariant::ClipAfterOutput, 1000, config, batch, seed)?;
    for r in 0..reps {
        let order = if r % 2 == 0 {
            [CellVariant::ClipBeforeOutput, CellVariant::ClipAfterOutput]
        } else {
            [CellVariant::ClipAfterOutput, CellVariant::ClipBeforeOutput]
        };
        for v in order {
            let rep = bench_cell(v, steps, config, batch, seed)?;
            match v {
                CellVariant::ClipBeforeOutput => out.clip_before.push(rep.tokens_per_sec),
                CellVariant::ClipAfterOutput => out.clip_after.push(rep.tokens_per_sec),
            }
        }
    }
    Ok(out)
}
