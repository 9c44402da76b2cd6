//! Sequence-length and BTBPTT ablation grids.

use std::fmt;
use std::sync::Arc;

use crate::corpus::{segment_stream, DocumentSet, Segment};
use crate::model::{ModelConfig, ModelParams};
use crate::trainer::{eval_perplexity, pretrain, EvalSettings, OptimState, TrainError, TrainRunConfig};
use crate::wordpiece::Vocab;

/// One configuration of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationCell {
    pub seq_len: usize,
    pub batch: usize,
    pub btbptt: bool,
}

impl fmt::Display for AblationCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N={} B={} btbptt={}", self.seq_len, self.batch, if self.btbptt { "on" } else { "off" })
    }
}

impl std::str::FromStr for AblationCell {
    type Err = String;

    /// `N:B` or `N:B:on|off`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.parse::<usize>().map_err(|_| format!("bad number {p:?} in cell {s:?}"));
        let btbptt = match parts.get(2).copied() {
            None | Some("on") => true,
            Some("off") => false,
            Some(o) => return Err(format!("bad btbptt flag {o:?} in cell {s:?} (expected on or off)")),
        };
        if !(2..=3).contains(&parts.len()) {
            return Err(format!("cell {s:?} is not N:B[:on|off]"));
        }
        Ok(Self { seq_len: num(parts[0])?, batch: num(parts[1])?, btbptt })
    }
}

/// Predefined grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    /// Equal words per minibatch at two sequence lengths, plus the small batch.
    Seqlen,
    /// N=20, B=20 with and without reversed rows.
    Btbptt,
}

impl Grid {
    pub fn cells(self) -> Vec<AblationCell> {
        let c = |seq_len, batch, btbptt| AblationCell { seq_len, batch, btbptt };
        match self {
            Grid::Seqlen => vec![c(20, 128, true), c(20, 20, true), c(128, 20, true)],
            Grid::Btbptt => vec![c(20, 20, true), c(20, 20, false)],
        }
    }
}

/// Train, dev and test documents.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: DocumentSet,
    pub dev: DocumentSet,
    pub test: DocumentSet,
}

impl Splits {
    /// Takes the last `held` documents as test and the `held` before them as dev.
    pub fn from_tail(docs: DocumentSet, held: usize) -> Self {
        let (rest, test) = docs.split_tail(held);
        let (train, dev) = rest.split_tail(held);
        Self { train, dev, test }
    }
}

/// Outcome of one (cell, seed) run.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRun {
    pub cell: AblationCell,
    pub seed: u64,
    /// `exp` of the last epoch's mean training loss.
    pub train: f64,
    pub dev: f64,
    pub test: Option<f64>,
}

/// Trains a fresh model under `cell` and evaluates dev (and test, if any)
/// at the cell's sequence length.
pub fn run_cell(
    splits: &Splits,
    vocab: &Vocab,
    model: &ModelConfig,
    base: &TrainRunConfig,
    cell: AblationCell,
    seed: u64,
) -> Result<CellRun, TrainError> {
    let run = TrainRunConfig { seq_len: cell.seq_len, batch: cell.batch, btbptt: cell.btbptt, seed, ..base.clone() };
    let pad = vocab.special().pad;
    let segments = |ds: &DocumentSet| -> Result<Arc<[Segment]>, TrainError> {
        Ok(segment_stream(ds, cell.seq_len, pad)?.into())
    };
    let mut params = ModelParams::init(model, seed)?;
    let mut opt = OptimState::new(params.tensors(), run.lr, run.decay);
    let dev = segments(&splits.dev)?;
    let reports = pretrain(&mut params, &mut opt, &splits.train, None, vocab, &run, |_| {})?;
    let train = reports.last().map_or(f64::NAN, |r| r.train_loss.exp());
    let settings = EvalSettings::from_run(&run);
    let dev = eval_perplexity(dev, &params, vocab, &settings)?.perplexity;
    let test = if splits.test.is_empty() {
        None
    } else {
        Some(eval_perplexity(segments(&splits.test)?, &params, vocab, &settings)?.perplexity)
    };
    Ok(CellRun { cell, seed, train, dev, test })
}

/// Sample mean and standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// All seeds of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub cell: AblationCell,
    pub runs: Vec<CellRun>,
}

impl CellSummary {
    pub fn train(&self) -> (f64, f64) {
        mean_std(&self.runs.iter().map(|r| r.train).collect::<Vec<_>>())
    }

    pub fn dev(&self) -> (f64, f64) {
        mean_std(&self.runs.iter().map(|r| r.dev).collect::<Vec<_>>())
    }

    pub fn test(&self) -> Option<(f64, f64)> {
        let xs: Option<Vec<f64>> = self.runs.iter().map(|r| r.test).collect();
        xs.map(|xs| mean_std(&xs))
    }
}

/// Runs every cell for every seed, reporting each finished run.
pub fn run_grid(
    splits: &Splits,
    vocab: &Vocab,
    model: &ModelConfig,
    base: &TrainRunConfig,
    cells: &[AblationCell],
    seeds: &[u64],
    mut on_run: impl FnMut(&CellRun),
) -> Result<Vec<CellSummary>, TrainError> {
    cells
        .iter()
        .map(|&cell| {
            let runs = seeds
                .iter()
                .map(|&seed| {
                    let r = run_cell(splits, vocab, model, base, cell, seed)?;
                    on_run(&r);
                    Ok(r)
                })
                .collect::<Result<Vec<_>, TrainError>>()?;
            Ok(CellSummary { cell, runs })
        })
        .collect()
}

fn pm((mean, std): (f64, f64)) -> String {
    format!("{mean:.2} ± {std:.2}")
}

/// Plain-text table with one row per cell.
pub fn format_table(rows: &[CellSummary]) -> String {
    let mut out = format!("{:<28} {:>16} {:>16} {:>16}\n", "config", "train", "dev", "test");
    for s in rows {
        let test = s.test().map_or_else(|| "-".to_string(), pm);
        out += &format!("{:<28} {:>16} {:>16} {:>16}\n", s.cell.to_string(), pm(s.train()), pm(s.dev()), test);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_syntax() {
        assert_eq!("20:128".parse(), Ok(AblationCell { seq_len: 20, batch: 128, btbptt: true }));
        assert_eq!("20:20:off".parse(), Ok(AblationCell { seq_len: 20, batch: 20, btbptt: false }));
        assert!("20".parse::<AblationCell>().is_err());
        assert!("20:x".parse::<AblationCell>().is_err());
        assert!("20:20:maybe".parse::<AblationCell>().is_err());
    }

    #[test]
    fn grids_mirror_the_table_shapes() {
        assert_eq!(Grid::Seqlen.cells().len(), 3);
        assert!(Grid::Seqlen.cells().iter().all(|c| c.btbptt));
        let bt = Grid::Btbptt.cells();
        assert_eq!(bt.len(), 2);
        assert!(bt[0].btbptt && !bt[1].btbptt);
    }

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_std(&[21.0, 21.5, 21.5]);
        assert!((m - 64.0 / 3.0).abs() < 1e-12);
        // deviations −1/3, 1/6, 1/6: sum of squares 1/6, over n − 1 = 2
        assert!((s - (1.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn tail_splits_are_disjoint() {
        let docs = DocumentSet::new((1..=10).map(|i| vec![i as u32; 3]).collect());
        let s = Splits::from_tail(docs, 2);
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (6, 2, 2));
        assert_eq!(s.dev.documents[0][0], 7);
        assert_eq!(s.test.documents[0][0], 9);
    }
}
