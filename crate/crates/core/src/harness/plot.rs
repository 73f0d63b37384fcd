//! Plot-ready tables from metrics and evaluation CSV files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One parsed input: a training metrics file or an evaluation curve.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    /// NLL per task-step (final metrics row, or the evaluation mean).
    pub per_step: Vec<f64>,
    /// `(wall_clock_s, mean NLL over steps)` per metrics row; empty for
    /// evaluation curves.
    pub wall_clock: Vec<(f64, f64)>,
}

fn malformed(path: &Path, line: u64, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}:{line}: {msg}", path.display()))
}

pub fn read_series(path: &Path, label: &str) -> Result<PlotSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(r) => r.map_err(|e| malformed(path, 1, e))?,
        None => return Err(malformed(path, 1, "empty file")),
    };
    let cols: Vec<&str> = header.iter().collect();
    let is_metrics = cols.len() > 5 && cols[..5] == ["step", "wall_clock_s", "elbo", "kl", "recon"];
    let is_eval = cols == ["task_step", "mean_nll", "stderr"];
    if is_metrics {
        for (i, c) in cols[5..].iter().enumerate() {
            if *c != format!("nll_t{}", i + 1) {
                return Err(malformed(path, 1, format!("unexpected column {c:?}")));
            }
        }
    } else if !is_eval {
        return Err(malformed(path, 1, "header is neither a metrics nor an evaluation header"));
    }

    let mut series = PlotSeries { label: label.to_string(), per_step: Vec::new(), wall_clock: Vec::new() };
    let mut last_step = None;
    for rec in rows {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != cols.len() {
            return Err(malformed(path, line, format!("expected {} fields, found {}", cols.len(), rec.len())));
        }
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| malformed(path, line, format!("not a number: {f:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        if is_metrics {
            let step = vals[0];
            if last_step.is_some_and(|s| step <= s) {
                return Err(malformed(path, line, "steps are not increasing"));
            }
            last_step = Some(step);
            let nll = vals[5..].to_vec();
            let mean = nll.iter().sum::<f64>() / nll.len() as f64;
            series.wall_clock.push((vals[1], mean));
            series.per_step = nll;
        } else {
            if vals[0] != (series.per_step.len() + 1) as f64 {
                return Err(malformed(path, line, "task steps must run 1, 2, ..."));
            }
            series.per_step.push(vals[1]);
        }
    }
    if series.per_step.is_empty() {
        return Err(malformed(path, 2, "no data rows"));
    }
    Ok(series)
}

pub fn task_step_table(series: &[PlotSeries]) -> Result<String> {
    let len = series.first().map_or(0, |s| s.per_step.len());
    if let Some(s) = series.iter().find(|s| s.per_step.len() != len) {
        return Err(Error::Invalid(format!("{} has {} task-steps, expected {len}", s.label, s.per_step.len())));
    }
    let mut out = String::from("task_step");
    for s in series {
        let _ = write!(out, ",{}", s.label);
    }
    out.push('\n');
    for t in 0..len {
        let _ = write!(out, "{}", t + 1);
        for s in series {
            let _ = write!(out, ",{}", s.per_step[t]);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Paired `<label>_wall_clock_s,<label>` columns, one row per metrics row;
/// shorter runs leave trailing cells empty.
pub fn wall_clock_table(series: &[PlotSeries]) -> String {
    let with: Vec<&PlotSeries> = series.iter().filter(|s| !s.wall_clock.is_empty()).collect();
    let header: Vec<String> = with.iter().map(|s| format!("{0}_wall_clock_s,{0}", s.label)).collect();
    let mut out = header.join(",");
    out.push('\n');
    let rows = with.iter().map(|s| s.wall_clock.len()).max().unwrap_or(0);
    for r in 0..rows {
        let cells: Vec<String> = with
            .iter()
            .map(|s| s.wall_clock.get(r).map_or_else(|| ",".to_string(), |(w, v)| format!("{w},{v}")))
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Path of the wall-clock companion of `out`: `<stem>_wallclock.csv`.
pub fn wall_clock_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_wallclock.csv"))
}

/// Writes the task-step table to `out` and, when any input is a metrics
/// file, the wall-clock table next to it. Labels default to file stems.
/// Returns the paths written.
pub fn export_plot_data(inputs: &[PathBuf], labels: Option<&[String]>, out: &Path) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(Error::Invalid("no input files".into()));
    }
    if let Some(l) = labels {
        if l.len() != inputs.len() {
            return Err(Error::Invalid(format!("{} labels for {} inputs", l.len(), inputs.len())));
        }
    }
    let mut series = Vec::with_capacity(inputs.len());
    for (i, p) in inputs.iter().enumerate() {
        let label = match labels {
            Some(l) => l[i].clone(),
            None => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("series{i}")),
        };
        if label.contains(',') || series.iter().any(|s: &PlotSeries| s.label == label) {
            return Err(Error::Invalid(format!("label {label:?} is repeated or contains a comma")));
        }
        series.push(read_series(p, &label)?);
    }
    std::fs::write(out, task_step_table(&series)?)?;
    let mut written = vec![out.to_path_buf()];
    if series.iter().any(|s| !s.wall_clock.is_empty()) {
        let wc = wall_clock_path(out);
        std::fs::write(&wc, wall_clock_table(&series))?;
        written.push(wc);
    }
    Ok(written)
}
