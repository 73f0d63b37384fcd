use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use npl_core::data::write_jsonl;
use npl_core::harness::{self, MetricsRecord, Scale, TrainConfig};
use npl_core::parallel::ExecMode;
use npl_core::rmr::Ablation;
use npl_core::taskgen::{RegimeName, RegimeSpec, TaskDim};
use npl_core::Result;

#[derive(Parser)]
#[command(name = "npl", version, about = "Sequential neural processes with recurrent memory reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Do not print metrics rows.
        #[arg(long)]
        quiet: bool,
    },
    /// Score a checkpoint on a JSON-lines dataset with prior rollouts.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        /// Use only the first N sequences.
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the curve as CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Write a JSON-lines dataset of generated task sequences.
    GenerateData {
        #[arg(long)]
        regime: RegimeName,
        #[arg(long)]
        dim: TaskDim,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "desk")]
        scale: Scale,
        /// Override the sequence length.
        #[arg(long)]
        len: Option<usize>,
        /// Directory of .pgm sprites for 2d tasks.
        #[arg(long)]
        sprites: Option<PathBuf>,
    },
    /// Train an RMR ablation of an asnp_rmr config.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: Ablation,
        #[arg(long)]
        quiet: bool,
    },
    /// Merge metrics or evaluation CSVs into plot-ready tables.
    Plot {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated column labels; file stems by default.
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
    },
}

fn print_record(r: &MetricsRecord) {
    println!(
        "step {:>6}  {:>8.1}s  elbo {:>10.4}  kl {:>8.4}  mean nll {:.4}",
        r.step,
        r.wall_clock_s,
        r.elbo,
        r.kl,
        r.mean_nll()
    );
}

fn run_training(cfg: &TrainConfig, quiet: bool) -> Result<()> {
    let report = harness::train_with(cfg, |r| {
        if !quiet {
            print_record(r)
        }
    })?;
    if let Some(last) = report.records.last() {
        println!("final mean held-out nll {:.6}", last.mean_nll());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, quiet } => run_training(&TrainConfig::load(&config)?, quiet),
        Command::Ablate { config, variant, quiet } => {
            run_training(&TrainConfig::load(&config)?.ablated(variant)?, quiet)
        }
        Command::Eval { checkpoint, data, samples, sequences, seed, out, sequential } => {
            let mode = if sequential { ExecMode::Sequential } else { ExecMode::Parallel };
            let report = harness::evaluate(&checkpoint, &data, sequences, samples, seed, mode)?;
            match out {
                Some(p) => std::fs::write(p, report.to_csv())?,
                None => print!("{}", report.to_csv()),
            }
            Ok(())
        }
        Command::GenerateData { regime, dim, count, seed, out, scale, len, sprites } => {
            let mut spec = match scale {
                Scale::Desk => RegimeSpec::desk(regime, dim),
                Scale::Full => RegimeSpec::full(regime, dim),
            };
            if let Some(len) = len {
                spec = spec.with_len(len)?;
            }
            let sprites = harness::load_sprites(sprites.as_deref())?;
            let seqs = harness::generate_dataset(&spec, count, seed, &sprites)?;
            let f = std::io::BufWriter::new(std::fs::File::create(&out)?);
            write_jsonl(f, &seqs)
        }
        Command::Plot { inputs, out, labels } => {
            for p in harness::export_plot_data(&inputs, labels.as_deref(), &out)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
