//! Diagonal Gaussian beliefs: heads, sampling, KL and log-likelihood.

use std::f64::consts::PI;

use super::init::ParamBuilder;
use super::linear::Linear;
use crate::autodiff::{Array, Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Lower bound added to every predicted variance.
pub const VARIANCE_FLOOR: f64 = 1e-4;

/// Diagonal Gaussian with per-entry mean and variance nodes of equal shape.
#[derive(Clone, Copy, Debug)]
pub struct GaussianBelief {
    pub mean: Var,
    pub var: Var,
}

/// `hidden = relu(linear(x))`, `mean = linear(hidden)`,
/// `var = softplus(linear(hidden)) + 1e-4`.
#[derive(Clone, Debug)]
pub struct GaussianHead {
    pub hidden: Linear,
    pub mean: Linear,
    pub var: Linear,
}

impl GaussianHead {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, input: usize, hidden: usize, out: usize) -> Result<Self> {
        Ok(GaussianHead {
            hidden: Linear::new(pb, &format!("{name}.hidden"), input, hidden)?,
            mean: Linear::new(pb, &format!("{name}.mean"), hidden, out)?,
            var: Linear::new(pb, &format!("{name}.var"), hidden, out)?,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.mean.out_dim
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<GaussianBelief> {
        let h = self.hidden.forward(g, store, x)?;
        let h = g.relu(h)?;
        let mean = self.mean.forward(g, store, h)?;
        let raw = self.var.forward(g, store, h)?;
        let sp = g.softplus(raw)?;
        let var = g.offset(sp, VARIANCE_FLOOR)?;
        Ok(GaussianBelief { mean, var })
    }
}

/// `mean + sqrt(var) * noise`, differentiable in mean and variance.
pub fn reparameterize(g: &mut Graph, b: GaussianBelief, noise: Array) -> Result<Var> {
    if g.shape(b.mean) != noise.shape() {
        return Err(Error::shape(
            "reparameterize",
            format!("belief {:?}, noise {:?}", g.shape(b.mean), noise.shape()),
        ));
    }
    let eps = g.constant(noise);
    let sd = g.sqrt(b.var)?;
    let scaled = g.mul(sd, eps)?;
    g.add(b.mean, scaled)
}

/// Closed-form `KL(q || p)` summed over all entries.
pub fn kl_diag_gaussian(g: &mut Graph, q: GaussianBelief, p: GaussianBelief) -> Result<Var> {
    if g.shape(q.mean) != g.shape(p.mean) {
        return Err(Error::shape(
            "kl_diag_gaussian",
            format!("q {:?}, p {:?}", g.shape(q.mean), g.shape(p.mean)),
        ));
    }
    let log_vp = g.log(p.var)?;
    let log_vq = g.log(q.var)?;
    let log_ratio = g.sub(log_vp, log_vq)?;
    let diff = g.sub(q.mean, p.mean)?;
    let diff2 = g.square(diff)?;
    let num = g.add(q.var, diff2)?;
    let frac = g.div(num, p.var)?;
    let t = g.add(log_ratio, frac)?;
    let t = g.offset(t, -1.0)?;
    let s = g.sum(t)?;
    g.scale(s, 0.5)
}

/// Diagonal Gaussian log density of `y` summed over all entries.
pub fn gaussian_log_likelihood(g: &mut Graph, y: Var, b: GaussianBelief) -> Result<Var> {
    if g.shape(y) != g.shape(b.mean) {
        return Err(Error::shape(
            "gaussian_log_likelihood",
            format!("y {:?}, belief {:?}", g.shape(y), g.shape(b.mean)),
        ));
    }
    let n = g.value(y).len() as f64;
    let log_v = g.log(b.var)?;
    let diff = g.sub(y, b.mean)?;
    let diff2 = g.square(diff)?;
    let maha = g.div(diff2, b.var)?;
    let t = g.add(log_v, maha)?;
    let s = g.sum(t)?;
    let s = g.scale(s, -0.5)?;
    g.offset(s, -0.5 * n * (2.0 * PI).ln())
}
