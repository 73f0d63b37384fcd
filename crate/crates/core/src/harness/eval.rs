use std::fmt::Write as _;
use std::io::BufReader;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::load_checkpoint;
use crate::autodiff::ParamStore;
use crate::data::{read_jsonl, TaskSequence};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::parallel::{self, ExecMode};

/// Per-task-step mean target NLL over sequences, with its standard error.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub sequences: usize,
    pub samples: usize,
}

impl EvalReport {
    pub fn overall_mean(&self) -> f64 {
        self.mean.iter().sum::<f64>() / self.mean.len() as f64
    }

    /// Mean over the 1-based steps `from..=to`.
    pub fn mean_over(&self, from: usize, to: usize) -> f64 {
        let s = &self.mean[from - 1..to];
        s.iter().sum::<f64>() / s.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task_step,mean_nll,stderr\n");
        for (t, (m, s)) in self.mean.iter().zip(&self.stderr).enumerate() {
            let _ = writeln!(out, "{},{m},{s}", t + 1);
        }
        out
    }
}

/// `n` seeds from an independent stream of `base`.
pub(crate) fn seed_stream(base: u64, stream: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    (0..n).map(|_| rng.next_u64()).collect()
}

const EVAL_STREAM: u64 = 11;

/// Scores every sequence with prior rollouts. Sequence `i` uses its own
/// noise seed derived from `seed`, so results do not depend on scheduling.
pub fn evaluate_model(
    model: &Model,
    store: &ParamStore,
    seqs: &[TaskSequence],
    samples: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<EvalReport> {
    let first = seqs.first().ok_or_else(|| Error::Invalid("no sequences to evaluate".into()))?;
    let len = first.len();
    for (i, s) in seqs.iter().enumerate() {
        if (s.x_dim(), s.y_dim()) != (model.cfg.d_x, model.cfg.d_y) {
            return Err(Error::Config(format!(
                "sequence {i} has widths ({}, {}) but the model expects ({}, {})",
                s.x_dim(),
                s.y_dim(),
                model.cfg.d_x,
                model.cfg.d_y
            )));
        }
        if s.len() != len {
            return Err(Error::Invalid(format!("sequence {i} has {} steps, expected {len}", s.len())));
        }
    }
    let seeds = seed_stream(seed, EVAL_STREAM, seqs.len());
    let curves = parallel::map(mode, seqs, |i, s| model.target_nll(store, s, samples, seeds[i]));
    let n = seqs.len() as f64;
    let mut sum = vec![0.0; len];
    let mut sq = vec![0.0; len];
    for c in curves {
        for (t, v) in c?.into_iter().enumerate() {
            sum[t] += v;
            sq[t] += v * v;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr = if seqs.len() < 2 {
        vec![0.0; len]
    } else {
        mean.iter().zip(&sq).map(|(m, q)| ((q - n * m * m).max(0.0) / (n - 1.0) / n).sqrt()).collect()
    };
    Ok(EvalReport { mean, stderr, sequences: seqs.len(), samples })
}

/// Loads a checkpoint and a JSON-lines dataset and scores the first
/// `n_sequences` sequences (all of them when `None`).
pub fn evaluate(
    checkpoint: &Path,
    data: &Path,
    n_sequences: Option<usize>,
    samples: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<EvalReport> {
    let (model, store) = load_checkpoint(checkpoint, None)?;
    let file = std::fs::File::open(data).map_err(|e| Error::Format(format!("{}: {e}", data.display())))?;
    let mut seqs = read_jsonl(BufReader::new(file)).map_err(|e| Error::Format(format!("{}: {e}", data.display())))?;
    if let Some(n) = n_sequences {
        if n > seqs.len() {
            return Err(Error::Invalid(format!("{} holds {} sequences, {n} requested", data.display(), seqs.len())));
        }
        seqs.truncate(n);
    }
    evaluate_model(&model, &store, &seqs, samples, seed, mode)
}
