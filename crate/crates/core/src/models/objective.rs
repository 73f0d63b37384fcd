//! Training objective and evaluation metric.

use super::model::{Model, Noise};
use crate::autodiff::{Gradients, Graph, ParamStore, Var};
use crate::data::TaskSequence;
use crate::error::{Error, Result};
use crate::layers::gaussian_log_likelihood;
use crate::parallel::{self, ExecMode};

/// Per-sequence ELBO terms as graph nodes.
#[derive(Clone, Debug)]
pub struct SequenceElbo {
    /// `-(sum_t recon_t - sum_t kl_t)`
    pub loss: Var,
    /// Mean log-likelihood over the targets of each step.
    pub recon: Vec<Var>,
    pub kl: Vec<Var>,
}

/// Batch-averaged ELBO statistics.
#[derive(Clone, Debug)]
pub struct ElboStats {
    pub loss: f64,
    pub elbo: f64,
    /// Summed over steps, averaged over the batch.
    pub kl: f64,
    pub recon: f64,
    pub recon_per_step: Vec<f64>,
    pub kl_per_step: Vec<f64>,
    /// Gradient of `loss` averaged over the batch, when requested.
    pub grads: Option<Gradients>,
}

impl Model {
    /// Builds the negative ELBO of one sequence on `g`.
    pub fn sequence_elbo(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        seq: &TaskSequence,
        noise: &mut Noise,
    ) -> Result<SequenceElbo> {
        let (steps, ys) = self.prepare(seq)?;
        let outs = self.rollout_posterior(g, store, &steps, &ys, noise)?;
        let mut recon = Vec::with_capacity(outs.len());
        let mut kl = Vec::with_capacity(outs.len());
        let mut total: Option<Var> = None;
        for (o, y) in outs.iter().zip(&ys) {
            let t = o.t;
            let mut step_terms = || -> Result<(Var, Var, Var)> {
                let yv = g.constant(y.clone());
                let ll = gaussian_log_likelihood(g, yv, o.prediction)?;
                let r = g.scale(ll, 1.0 / y.rows() as f64)?;
                let k = o.kl.ok_or_else(|| Error::Invalid("posterior rollout produced no KL".into()))?;
                let term = g.sub(r, k)?;
                Ok((r, k, term))
            };
            let (r, k, term) = step_terms().map_err(|e| e.at_step(t))?;
            recon.push(r);
            kl.push(k);
            total = Some(match total {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
        let loss = g.scale(total.expect("nonempty sequence"), -1.0)?;
        Ok(SequenceElbo { loss, recon, kl })
    }

    /// ELBO over a batch, one graph per sequence. `seeds[i]` drives the
    /// latent noise of sequence `i`; `None` uses zero noise.
    pub fn batch_elbo(
        &self,
        store: &ParamStore,
        batch: &[TaskSequence],
        seeds: Option<&[u64]>,
        with_grads: bool,
        mode: ExecMode,
    ) -> Result<ElboStats> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        if let Some(s) = seeds {
            if s.len() != batch.len() {
                return Err(Error::Invalid(format!("{} seeds for {} sequences", s.len(), batch.len())));
            }
        }
        let per_seq = parallel::map(mode, batch, |i, seq| -> Result<_> {
            let mut noise = seeds.map_or(Noise::Zero, |s| Noise::seeded(s[i]));
            let mut g = Graph::new();
            let e = self.sequence_elbo(&mut g, store, seq, &mut noise)?;
            let recon: Vec<f64> = e.recon.iter().map(|v| g.value(*v).item()).collect();
            let kl: Vec<f64> = e.kl.iter().map(|v| g.value(*v).item()).collect();
            let loss = g.value(e.loss).item();
            let grads = if with_grads { Some(g.backward(e.loss)?) } else { None };
            Ok((loss, recon, kl, grads))
        });
        let n = batch.len() as f64;
        let len = batch[0].len();
        let mut stats = ElboStats {
            loss: 0.0,
            elbo: 0.0,
            kl: 0.0,
            recon: 0.0,
            recon_per_step: vec![0.0; len],
            kl_per_step: vec![0.0; len],
            grads: None,
        };
        for r in per_seq {
            let (loss, recon, kl, grads) = r?;
            stats.loss += loss / n;
            for (t, (r, k)) in recon.iter().zip(&kl).enumerate() {
                if t < len {
                    stats.recon_per_step[t] += r / n;
                    stats.kl_per_step[t] += k / n;
                }
            }
            if let Some(gr) = grads {
                match &mut stats.grads {
                    Some(acc) => acc.merge(gr),
                    None => stats.grads = Some(gr),
                }
            }
        }
        if let Some(gr) = &mut stats.grads {
            gr.scale(1.0 / n);
        }
        stats.recon = stats.recon_per_step.iter().sum();
        stats.kl = stats.kl_per_step.iter().sum();
        stats.elbo = -stats.loss;
        Ok(stats)
    }

    /// Per-step target NLL under prior rollouts: `-(1/S) sum_s (1/m) sum_j
    /// log p(y_j | x_j, z_t^s, C_{<=t})`.
    pub fn target_nll(&self, store: &ParamStore, seq: &TaskSequence, samples: usize, seed: u64) -> Result<Vec<f64>> {
        if samples == 0 {
            return Err(Error::Invalid("need at least one sample".into()));
        }
        let (steps, ys) = self.prepare(seq)?;
        let mut nll = vec![0.0; steps.len()];
        let mut noise = Noise::seeded(seed);
        for _ in 0..samples {
            let mut g = Graph::new();
            let outs = self.rollout_prior(&mut g, store, &steps, &mut noise)?;
            for ((o, y), acc) in outs.iter().zip(&ys).zip(nll.iter_mut()) {
                let yv = g.constant(y.clone());
                let ll = gaussian_log_likelihood(&mut g, yv, o.prediction).map_err(|e| e.at_step(o.t))?;
                *acc -= g.value(ll).item() / y.rows() as f64 / samples as f64;
            }
        }
        Ok(nll)
    }
}
