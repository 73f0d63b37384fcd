//! Central finite-difference gradient checks.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Result of [`finite_difference_report`].
#[derive(Clone, Debug, Default)]
pub struct FdReport {
    /// Max over named parameters of
    /// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`, with `|.|`
    /// the Euclidean norm over the parameter's entries.
    pub max_rel_error: f64,
    pub param: String,
    /// Worst single entry under the same formula applied per scalar. Entries
    /// whose true gradient is below the finite-difference resolution
    /// (about `1e-16 |f| / eps`) are dominated by roundoff here.
    pub worst_entry: FdEntry,
    pub entries_checked: usize,
}

#[derive(Clone, Debug, Default)]
pub struct FdEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

fn rel_error(diff: f64, scale: f64) -> f64 {
    diff / scale.max(1e-8)
}

/// Max over named parameters of `|analytic - numeric| / max(1e-8,
/// |analytic| + |numeric|)` using central differences.
///
/// `f` must build a deterministic scalar loss from the store (noise inputs
/// fixed).
pub fn finite_difference_check<F>(store: &ParamStore, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Graph) -> Result<Var>,
{
    finite_difference_report(store, eps, f).map(|r| r.max_rel_error)
}

pub fn finite_difference_report<F>(store: &ParamStore, eps: f64, f: F) -> Result<FdReport>
where
    F: Fn(&ParamStore, &mut Graph) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(s, &mut g)?;
        let v = g.value(loss);
        if v.len() != 1 {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        let v = v.item();
        if !v.is_finite() {
            return Err(Error::NonFinite { op: "finite_difference_check" });
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let loss = f(store, &mut g)?;
    let grads = g.backward(loss)?;
    drop(g);

    let mut work = store.clone();
    let mut report = FdReport::default();
    for id in store.ids() {
        let n = store.value(id).len();
        let (mut d2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let orig = store.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            d2 += (analytic - numeric).powi(2);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
            let rel = rel_error((analytic - numeric).abs(), analytic.abs() + numeric.abs());
            report.entries_checked += 1;
            if rel > report.worst_entry.rel_error || report.worst_entry.param.is_empty() {
                report.worst_entry =
                    FdEntry { param: store.name(id).to_string(), index: i, analytic, numeric, rel_error: rel };
            }
        }
        let rel = rel_error(d2.sqrt(), a2.sqrt() + n2.sqrt());
        if rel > report.max_rel_error || report.param.is_empty() {
            report.max_rel_error = rel;
            report.param = store.name(id).to_string();
        }
    }
    Ok(report)
}
