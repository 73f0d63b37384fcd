//! Squared-exponential GP draws with drifting hyperparameters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

/// Diagonal jitter added to every kernel matrix; also the observation
/// noise assumed by [`gp_predictive_nll`].
pub const JITTER: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-4;
pub const PARAM_NOISE_STD: f64 = 0.1;
pub const PARAM_FLOOR: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpParams {
    pub l: f64,
    pub sigma: f64,
    pub dl: f64,
    pub dsigma: f64,
}

/// `sigma^2 exp(-(x1 - x2)^2 / (2 l^2))`.
pub fn gp_kernel(x1: f64, x2: f64, p: &GpParams) -> f64 {
    let d = x1 - x2;
    p.sigma * p.sigma * (-d * d / (2.0 * p.l * p.l)).exp()
}

pub fn kernel_matrix(a: &[f64], b: &[f64], p: &GpParams) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| gp_kernel(a[i], b[j], p))
}

/// Cholesky factor of `K(xs, xs) + jitter I`, escalating the jitter tenfold
/// up to [`MAX_JITTER`]. Returns the factor and the number of escalations.
pub fn kernel_cholesky(xs: &[f64], p: &GpParams) -> Result<(Cholesky<f64, Dyn>, usize)> {
    let k = kernel_matrix(xs, xs, p);
    let mut jitter = JITTER;
    let mut escalations = 0;
    loop {
        let mut kj = k.clone();
        for i in 0..xs.len() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok((c, escalations));
        }
        jitter *= 10.0;
        escalations += 1;
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::LinAlg(format!(
                "kernel matrix of {} points not positive definite (l = {}, sigma = {})",
                xs.len(),
                p.l,
                p.sigma
            )));
        }
    }
}

/// One draw of `f(xs)` from the zero-mean GP. Also returns the number of
/// jitter escalations that were needed.
pub fn sample_gp_function<R: Rng + ?Sized>(rng: &mut R, xs: &[f64], p: &GpParams) -> Result<(Vec<f64>, usize)> {
    if xs.is_empty() {
        return Ok((Vec::new(), 0));
    }
    let (chol, escalations) = kernel_cholesky(xs, p)?;
    let z = DVector::from_fn(xs.len(), |_, _| StandardNormal.sample(rng));
    let ys = chol.l() * z;
    Ok((ys.iter().copied().collect(), escalations))
}

/// Drift plus the given noise, clamped at [`PARAM_FLOOR`].
pub fn evolve_with(p: &GpParams, eps_l: f64, eps_sigma: f64) -> GpParams {
    GpParams {
        l: (p.l + p.dl + eps_l).max(PARAM_FLOOR),
        sigma: (p.sigma + p.dsigma + eps_sigma).max(PARAM_FLOOR),
        ..*p
    }
}

pub fn evolve_gp_params<R: Rng + ?Sized>(rng: &mut R, p: &GpParams) -> GpParams {
    let n = Normal::new(0.0, PARAM_NOISE_STD).expect("valid std");
    let eps_l = n.sample(rng);
    let eps_sigma = n.sample(rng);
    evolve_with(p, eps_l, eps_sigma)
}

/// Mean over targets of the exact GP predictive NLL given the context,
/// with observation noise [`JITTER`].
pub fn gp_predictive_nll(cx: &[f64], cy: &[f64], tx: &[f64], ty: &[f64], p: &GpParams) -> Result<f64> {
    if cx.len() != cy.len() || tx.len() != ty.len() {
        return Err(Error::Invalid("input and output counts differ".into()));
    }
    if tx.is_empty() {
        return Err(Error::Invalid("no targets to score".into()));
    }
    let prior_var = p.sigma * p.sigma + JITTER;
    let (means, vars) = if cx.is_empty() {
        (vec![0.0; tx.len()], vec![prior_var; tx.len()])
    } else {
        let mut k = kernel_matrix(cx, cx, p);
        for i in 0..cx.len() {
            k[(i, i)] += JITTER;
        }
        let chol = Cholesky::new(k).ok_or_else(|| Error::LinAlg("context kernel not positive definite".into()))?;
        let alpha = chol.solve(&DVector::from_column_slice(cy));
        let ks = kernel_matrix(cx, tx, p);
        let v = chol.solve(&ks);
        let means = (ks.transpose() * alpha).iter().copied().collect();
        let vars = (0..tx.len())
            .map(|j| (prior_var - ks.column(j).dot(&v.column(j))).max(1e-12))
            .collect();
        (means, vars)
    };
    let mut total = 0.0;
    for ((y, m), v) in ty.iter().zip(&means).zip(&vars) {
        total += 0.5 * (2.0 * std::f64::consts::PI * v).ln() + (y - m) * (y - m) / (2.0 * v);
    }
    Ok(total / tx.len() as f64)
}
