//! Training, evaluation, ablation runs, checkpoints and plot export.

mod checkpoint;
mod config;
mod eval;
mod plot;
mod train;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint};
pub use config::{Scale, TrainConfig};
pub use eval::{evaluate, evaluate_model, EvalReport};
pub use plot::{export_plot_data, read_series, task_step_table, wall_clock_path, wall_clock_table, PlotSeries};
pub use train::{generate_dataset, load_sprites, metrics_header, train, train_with, MetricsRecord, TrainReport};

use crate::error::Result;
use crate::rmr::Ablation;

/// Trains `base` with an RMR ablation engaged. Output paths get the variant
/// name appended.
pub fn ablate(base: &TrainConfig, variant: Ablation) -> Result<TrainReport> {
    train(&base.ablated(variant)?)
}
