use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelKind};
use crate::parallel::ExecMode;
use crate::rmr::Ablation;
use crate::taskgen::{RegimeName, RegimeSpec, TaskDim};

/// Problem size of the generated regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    /// `T = 10`.
    Desk,
    /// `T = 50` (sparse context) or `T = 20` (transfer prediction).
    Full,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(Error::Config(format!("unknown scale {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub regime: RegimeSpec,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub steps: usize,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    /// A metrics row (and checkpoint) is written every this many steps and
    /// after the last step.
    pub eval_every: usize,
    /// Size of the fixed held-out set scored in each metrics row.
    pub eval_sequences: usize,
    pub eval_samples: usize,
    /// When false the wall-clock column is written as zero, making metrics
    /// files byte-comparable across runs.
    pub record_wall_clock: bool,
    pub exec: ExecMode,
    /// Directory of `.pgm` sprites; the bundled glyphs when unset.
    pub sprites: Option<PathBuf>,
}

const TRAIN_KEYS: &[&str] = &[
    "regime",
    "dim",
    "scale",
    "len",
    "batch_size",
    "lr",
    "clip_norm",
    "steps",
    "seed",
    "checkpoint",
    "metrics",
    "eval_every",
    "eval_sequences",
    "eval_samples",
    "record_wall_clock",
    "exec",
    "sprites",
];

fn dims(dim: TaskDim) -> (usize, usize) {
    match dim {
        TaskDim::One => (1, 1),
        TaskDim::Two => (2, 1),
    }
}

impl TrainConfig {
    /// Desk-scale defaults: batch 16, learning rate 1e-4, clipping at 10.
    pub fn desk(kind: ModelKind, regime: RegimeName, dim: TaskDim) -> Self {
        let (d_x, d_y) = dims(dim);
        TrainConfig {
            model: ModelConfig::new(kind, d_x, d_y),
            regime: RegimeSpec::desk(regime, dim),
            batch_size: 16,
            lr: 1e-4,
            clip_norm: Some(10.0),
            steps: 5000,
            seed: 0,
            checkpoint: None,
            metrics: None,
            eval_every: 100,
            eval_sequences: 16,
            eval_samples: 1,
            record_wall_clock: true,
            exec: ExecMode::Parallel,
            sprites: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.regime.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if self.eval_every == 0 || self.eval_sequences == 0 || self.eval_samples == 0 {
            return bad("eval_every, eval_sequences and eval_samples must be >= 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.clip_norm.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        if (self.model.d_x, self.model.d_y) != dims(self.regime.dim) {
            return Err(Error::Config(format!(
                "model widths ({}, {}) do not match {} tasks",
                self.model.d_x, self.model.d_y, self.regime.dim
            )));
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment. Unknown and repeated
    /// keys are rejected. The model widths follow from `dim`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: String| Error::Config(format!("line {}: {m}", i + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| at(format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(at(format!("duplicate key {k:?}")));
            }
            pairs.push((i + 1, k.to_string(), v.to_string()));
        }
        let get = |key: &str| pairs.iter().find(|(_, k, _)| k == key).map(|(_, _, v)| v.as_str());

        let kind: ModelKind = get("kind").unwrap_or("asnp_rmr").parse()?;
        let regime: RegimeName = get("regime").unwrap_or("sparse_context").parse()?;
        let dim: TaskDim = get("dim").unwrap_or("1d").parse()?;
        let scale: Scale = get("scale").unwrap_or("desk").parse()?;
        let mut cfg = TrainConfig::desk(kind, regime, dim);
        if scale == Scale::Full {
            cfg.regime = RegimeSpec::full(regime, dim);
        }

        for (line, k, v) in &pairs {
            let at = |e: Error| Error::Config(format!("line {line}: {e}"));
            if matches!(k.as_str(), "kind" | "regime" | "dim" | "scale") {
                continue;
            }
            if k == "d_x" || k == "d_y" {
                return Err(at(Error::Config(format!("{k} is derived from dim"))));
            }
            if cfg.model.apply_kv(k, v).map_err(at)? {
                continue;
            }
            if !TRAIN_KEYS.contains(&k.as_str()) {
                return Err(at(Error::Config(format!("unknown key {k:?}"))));
            }
            cfg.apply_train_kv(k, v).map_err(at)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        TrainConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn apply_train_kv(&mut self, key: &str, v: &str) -> Result<()> {
        let num = |v: &str| v.parse::<usize>().map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}")));
        let real = |v: &str| v.parse::<f64>().map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")));
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "len" => self.regime = self.regime.with_len(num(v)?)?,
            "batch_size" => self.batch_size = num(v)?,
            "lr" => self.lr = real(v)?,
            "clip_norm" => self.clip_norm = if v == "none" { None } else { Some(real(v)?) },
            "steps" => self.steps = num(v)?,
            "seed" => {
                self.seed = v.parse().map_err(|_| Error::Config(format!("seed: expected an integer, got {v:?}")))?
            }
            "checkpoint" => self.checkpoint = path(v),
            "metrics" => self.metrics = path(v),
            "eval_every" => self.eval_every = num(v)?,
            "eval_sequences" => self.eval_sequences = num(v)?,
            "eval_samples" => self.eval_samples = num(v)?,
            "record_wall_clock" => {
                self.record_wall_clock =
                    v.parse().map_err(|_| Error::Config(format!("{key}: expected true or false, got {v:?}")))?
            }
            "exec" => {
                self.exec = match v {
                    "parallel" => ExecMode::Parallel,
                    "sequential" => ExecMode::Sequential,
                    _ => return Err(Error::Config(format!("exec: expected parallel or sequential, got {v:?}"))),
                }
            }
            "sprites" => self.sprites = path(v),
            _ => unreachable!("checked against TRAIN_KEYS"),
        }
        Ok(())
    }

    /// Copy of this config with an RMR ablation engaged and output paths
    /// suffixed by the variant name.
    pub fn ablated(&self, variant: Ablation) -> Result<Self> {
        if self.model.kind != ModelKind::AsnpRmr {
            return Err(Error::Config(format!("ablations need an asnp_rmr base, got {}", self.model.kind)));
        }
        if variant == Ablation::None {
            return Err(Error::Config("ablation variant must be no_tracking or no_interaction".into()));
        }
        let mut cfg = self.clone();
        cfg.model.ablation = variant;
        let suffix = |p: &Option<PathBuf>| {
            p.as_ref().map(|p| {
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let name = match p.extension() {
                    Some(ext) => format!("{stem}_{variant}.{}", ext.to_string_lossy()),
                    None => format!("{stem}_{variant}"),
                };
                p.with_file_name(name)
            })
        };
        cfg.checkpoint = suffix(&self.checkpoint);
        cfg.metrics = suffix(&self.metrics);
        cfg.validate()?;
        Ok(cfg)
    }
}
