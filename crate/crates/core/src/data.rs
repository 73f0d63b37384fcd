//! Context sets, task sequences and the JSON-lines dataset format.
//!
//! One line per sequence:
//!
//! ```text
//! {"seed": 7, "regime": "sparse_context", "steps": [{"t": 1, "cx": [[..]], "cy": [[..]], "tx": [[..]], "ty": [[..]]}, ...], "meta": {...}}
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::error::{Error, Result};

/// Unordered set of `(input, output)` pairs; may be empty.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSet {
    x_dim: usize,
    y_dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl ContextSet {
    pub fn empty(x_dim: usize, y_dim: usize) -> Self {
        ContextSet { x_dim, y_dim, xs: Vec::new(), ys: Vec::new() }
    }

    pub fn from_rows(x_dim: usize, y_dim: usize, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Invalid(format!("{} inputs but {} outputs", xs.len(), ys.len())));
        }
        let mut set = ContextSet::empty(x_dim, y_dim);
        for (x, y) in xs.iter().zip(ys) {
            set.push(x, y)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != self.x_dim || y.len() != self.y_dim {
            return Err(Error::Invalid(format!(
                "pair widths ({}, {}) do not match set widths ({}, {})",
                x.len(),
                y.len(),
                self.x_dim,
                self.y_dim
            )));
        }
        self.xs.extend_from_slice(x);
        self.ys.extend_from_slice(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.x_dim == 0 {
            0
        } else {
            self.xs.len() / self.x_dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn y_dim(&self) -> usize {
        self.y_dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.x_dim..(i + 1) * self.x_dim]
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.ys[i * self.y_dim..(i + 1) * self.y_dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        (0..self.len()).map(move |i| (self.x(i), self.y(i)))
    }

    /// New set with pairs reordered by `order` (a permutation of `0..len`).
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut out = ContextSet::empty(self.x_dim, self.y_dim);
        for &i in order {
            out.xs.extend_from_slice(self.x(i));
            out.ys.extend_from_slice(self.y(i));
        }
        out
    }

    pub fn union(&self, other: &ContextSet) -> Self {
        let mut out = self.clone();
        out.xs.extend_from_slice(&other.xs);
        out.ys.extend_from_slice(&other.ys);
        out
    }

    /// Inputs as an `n x x_dim` matrix, `None` when empty.
    pub fn x_matrix(&self) -> Option<Array> {
        (!self.is_empty()).then(|| Array::matrix(self.len(), self.x_dim, self.xs.clone()).expect("consistent"))
    }

    /// Outputs as an `n x y_dim` matrix, `None` when empty.
    pub fn y_matrix(&self) -> Option<Array> {
        (!self.is_empty()).then(|| Array::matrix(self.len(), self.y_dim, self.ys.clone()).expect("consistent"))
    }

    fn rows(data: &[f64], width: usize) -> Vec<Vec<f64>> {
        data.chunks(width.max(1)).map(|c| c.to_vec()).collect()
    }
}

/// Context and target sets of one task-step (`t` is 1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct TaskStep {
    pub t: usize,
    pub context: ContextSet,
    pub targets: ContextSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSequence {
    pub seed: u64,
    pub regime: String,
    pub steps: Vec<TaskStep>,
    pub meta: serde_json::Value,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.targets.x_dim())
    }

    pub fn y_dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.targets.y_dim())
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&SequenceRecord::from(self))?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let rec: SequenceRecord = serde_json::from_str(line)?;
        rec.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    t: usize,
    cx: Vec<Vec<f64>>,
    cy: Vec<Vec<f64>>,
    tx: Vec<Vec<f64>>,
    ty: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SequenceRecord {
    seed: u64,
    regime: String,
    steps: Vec<StepRecord>,
    #[serde(default)]
    meta: serde_json::Value,
    /// Widths are carried so that empty context sets round-trip.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dims: Option<(usize, usize)>,
}

impl From<&TaskSequence> for SequenceRecord {
    fn from(seq: &TaskSequence) -> Self {
        let steps = seq
            .steps
            .iter()
            .map(|s| StepRecord {
                t: s.t,
                cx: ContextSet::rows(&s.context.xs, s.context.x_dim),
                cy: ContextSet::rows(&s.context.ys, s.context.y_dim),
                tx: ContextSet::rows(&s.targets.xs, s.targets.x_dim),
                ty: ContextSet::rows(&s.targets.ys, s.targets.y_dim),
            })
            .collect();
        SequenceRecord {
            seed: seq.seed,
            regime: seq.regime.clone(),
            steps,
            meta: seq.meta.clone(),
            dims: Some((seq.x_dim(), seq.y_dim())),
        }
    }
}

impl TryFrom<SequenceRecord> for TaskSequence {
    type Error = Error;

    fn try_from(rec: SequenceRecord) -> Result<Self> {
        let (x_dim, y_dim) = match rec.dims {
            Some(d) => d,
            None => rec
                .steps
                .iter()
                .find_map(|s| s.tx.first().zip(s.ty.first()).map(|(x, y)| (x.len(), y.len())))
                .ok_or_else(|| Error::Format("cannot infer input/output widths".into()))?,
        };
        let steps = rec
            .steps
            .into_iter()
            .map(|s| {
                Ok(TaskStep {
                    t: s.t,
                    context: ContextSet::from_rows(x_dim, y_dim, &s.cx, &s.cy)?,
                    targets: ContextSet::from_rows(x_dim, y_dim, &s.tx, &s.ty)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TaskSequence { seed: rec.seed, regime: rec.regime, steps, meta: rec.meta })
    }
}

pub fn write_jsonl<W: Write>(mut w: W, seqs: &[TaskSequence]) -> Result<()> {
    for s in seqs {
        writeln!(w, "{}", s.to_json_line()?)?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TaskSequence>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            TaskSequence::from_json_line(&line)
                .map_err(|e| Error::Format(format!("dataset line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
