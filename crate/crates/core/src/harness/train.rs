use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use super::checkpoint::save_checkpoint;
use super::config::TrainConfig;
use super::eval::{evaluate_model, seed_stream};
use crate::autodiff::ParamStore;
use crate::data::TaskSequence;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::optim::Adam;
use crate::parallel;
use crate::taskgen::{bundled_sprites, generate_sequence, load_pgm, sprite::SPRITE, RegimeSpec, Sprite};

/// One metrics row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub wall_clock_s: f64,
    /// Batch ELBO of this step's training batch.
    pub elbo: f64,
    pub kl: f64,
    pub recon: f64,
    /// Held-out target NLL per task-step.
    pub nll: Vec<f64>,
}

pub fn metrics_header(len: usize) -> String {
    let mut h = String::from("step,wall_clock_s,elbo,kl,recon");
    for t in 1..=len {
        let _ = write!(h, ",nll_t{t}");
    }
    h
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        let mut row = format!("{},{},{},{},{}", self.step, self.wall_clock_s, self.elbo, self.kl, self.recon);
        for v in &self.nll {
            let _ = write!(row, ",{v}");
        }
        row
    }

    pub fn mean_nll(&self) -> f64 {
        self.nll.iter().sum::<f64>() / self.nll.len() as f64
    }
}

pub struct TrainReport {
    pub model: Model,
    pub store: ParamStore,
    pub records: Vec<MetricsRecord>,
    /// Sequences scored in every metrics row.
    pub validation: Vec<TaskSequence>,
    /// Smallest per-step KL seen on any training batch.
    pub min_step_kl: f64,
}

const TRAIN_STREAM: u64 = 1;
const VALIDATION_STREAM: u64 = 2;
const VALIDATION_NOISE_STREAM: u64 = 3;

/// Sprites from a directory of `.pgm` files (sorted by name), or the
/// bundled glyphs.
pub fn load_sprites(dir: Option<&Path>) -> Result<Vec<Sprite>> {
    let Some(dir) = dir else {
        return Ok(bundled_sprites());
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no .pgm sprites in {}", dir.display())));
    }
    paths.iter().map(|p| load_pgm(p, SPRITE)).collect()
}

/// `count` sequences with seeds `seed, seed + 1, ...`.
pub fn generate_dataset(spec: &RegimeSpec, count: usize, seed: u64, sprites: &[Sprite]) -> Result<Vec<TaskSequence>> {
    spec.validate()?;
    (0..count as u64).map(|i| generate_sequence(seed.wrapping_add(i), spec, sprites)).collect()
}

pub fn train(cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(cfg, |_| {})
}

/// Trains from scratch, calling `on_record` after each metrics row.
///
/// Every batch is freshly generated from seeds drawn off the run seed. A
/// non-finite loss or gradient aborts with the step index; the checkpoint
/// on disk is then the one from the last metrics row.
pub fn train_with(cfg: &TrainConfig, mut on_record: impl FnMut(&MetricsRecord)) -> Result<TrainReport> {
    cfg.validate()?;
    let sprites = load_sprites(cfg.sprites.as_deref())?;
    let (model, mut store) = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.lr);
    adam.clip_norm = cfg.clip_norm;

    let validation_seeds = seed_stream(cfg.seed, VALIDATION_STREAM, cfg.eval_sequences);
    let validation = parallel::map(cfg.exec, &validation_seeds, |_, &s| generate_sequence(s, &cfg.regime, &sprites))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let eval_seed = seed_stream(cfg.seed, VALIDATION_NOISE_STREAM, 1)[0];

    let mut metrics = match &cfg.metrics {
        Some(p) => {
            let mut w = csv::Writer::from_path(p).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
            w.write_record(metrics_header(cfg.regime.len).split(','))
                .and_then(|_| w.flush().map_err(Into::into))
                .map_err(|e| Error::Format(e.to_string()))?;
            Some(w)
        }
        None => None,
    };

    let per_step = 2 * cfg.batch_size;
    let all_seeds = seed_stream(cfg.seed, TRAIN_STREAM, per_step * cfg.steps);
    let start = Instant::now();
    let mut records = Vec::new();
    let mut min_step_kl = f64::INFINITY;
    for step in 1..=cfg.steps {
        let fail = |e: Error| Error::TrainStep { step, source: Box::new(e) };
        let seeds = &all_seeds[(step - 1) * per_step..step * per_step];
        let (data_seeds, noise_seeds) = seeds.split_at(cfg.batch_size);
        let batch = parallel::map(cfg.exec, data_seeds, |_, &s| generate_sequence(s, &cfg.regime, &sprites))
            .into_iter()
            .collect::<Result<Vec<_>>>()
            .map_err(fail)?;
        let stats = model.batch_elbo(&store, &batch, Some(noise_seeds), true, cfg.exec).map_err(fail)?;
        if !stats.loss.is_finite() {
            return Err(fail(Error::NonFinite { op: "loss" }));
        }
        min_step_kl = stats.kl_per_step.iter().copied().fold(min_step_kl, f64::min);
        store.accumulate(stats.grads.as_ref().expect("requested gradients"), 1.0);
        if !store.grad_norm().is_finite() {
            return Err(fail(Error::NonFinite { op: "gradient" }));
        }
        adam.step(&mut store);

        if step % cfg.eval_every == 0 || step == cfg.steps {
            let report = evaluate_model(&model, &store, &validation, cfg.eval_samples, eval_seed, cfg.exec).map_err(fail)?;
            let record = MetricsRecord {
                step,
                wall_clock_s: if cfg.record_wall_clock { start.elapsed().as_secs_f64() } else { 0.0 },
                elbo: stats.elbo,
                kl: stats.kl,
                recon: stats.recon,
                nll: report.mean,
            };
            if let Some(w) = &mut metrics {
                w.write_record(record.to_csv_row().split(','))
                    .and_then(|_| w.flush().map_err(Into::into))
                    .map_err(|e| fail(Error::Format(e.to_string())))?;
            }
            if let Some(p) = &cfg.checkpoint {
                save_checkpoint(p, &model.cfg, &store).map_err(fail)?;
            }
            on_record(&record);
            records.push(record);
        }
    }
    Ok(TrainReport { model, store, records, validation, min_step_kl })
}
