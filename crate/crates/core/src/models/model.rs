use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ModelConfig, ModelKind};
use crate::autodiff::{Array, Graph, ParamId, ParamStore, Var};
use crate::data::{ContextSet, TaskSequence};
use crate::error::{Error, Result};
use crate::layers::{
    reparameterize, Attention, GaussianBelief, GaussianHead, Lstm, LstmState, Mlp, MlpSpec, ParamBuilder,
};
use crate::rmr::{ImaginaryMemory, RealPairs, Rmr, RmrConfig};

/// Source of standard-normal draws for the reparameterized samples.
pub enum Noise {
    Seeded(Box<ChaCha8Rng>),
    /// Every draw is zero, so samples equal belief means.
    Zero,
}

impl Noise {
    pub fn seeded(seed: u64) -> Self {
        Noise::Seeded(Box::new(ChaCha8Rng::seed_from_u64(seed)))
    }

    pub fn normal(&mut self, rows: usize, cols: usize) -> Array {
        match self {
            Noise::Seeded(rng) => {
                let data = (0..rows * cols).map(|_| StandardNormal.sample(rng.as_mut())).collect();
                Array::matrix(rows, cols, data).expect("positive dims")
            }
            Noise::Zero => Array::zeros(rows, cols),
        }
    }
}

/// Task-step code `e_t = 0.25 + 0.5 t / T` appended to inputs.
pub fn task_step_code(t: usize, len: usize) -> Result<f64> {
    if t == 0 || t > len {
        return Err(Error::Invalid(format!("task-step {t} outside 1..={len}")));
    }
    Ok(0.25 + 0.5 * t as f64 / len as f64)
}

/// `(x, e_t)`.
pub fn augment_query(x: &[f64], t: usize, len: usize) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    out.push(task_step_code(t, len)?);
    Ok(out)
}

/// One task-step as the model consumes it. Target outputs are kept
/// elsewhere so that prior-mode rollouts cannot see them.
#[derive(Clone, Debug)]
pub struct StepInputs {
    pub t: usize,
    /// Context inputs (`n x x_width`) and outputs (`n x d_y`).
    pub context: Option<(Array, Array)>,
    /// Target inputs, `m x x_width`.
    pub target_x: Array,
}

/// Graph nodes for one set of pairs.
#[derive(Clone, Copy, Debug)]
pub struct PairVars {
    pub x: Var,
    pub y: Var,
    pub pairs: Var,
}

impl PairVars {
    pub fn new(g: &mut Graph, x: &Array, y: &Array) -> Result<Self> {
        let x = g.constant(x.clone());
        let y = g.constant(y.clone());
        let pairs = g.concat(&[x, y], 1)?;
        Ok(PairVars { x, y, pairs })
    }
}

/// Recurrent state-space state: LSTM state, latent belief and sample.
#[derive(Clone, Copy, Debug)]
pub struct RssmState {
    pub deterministic: LstmState,
    pub belief: GaussianBelief,
    pub sample: Var,
}

/// What the decoder sees besides `(x, z)`.
#[derive(Clone, Copy, Debug)]
pub enum DetPath {
    /// Per-target attention read (`m x h`).
    Read(Var),
    /// Sum-pooled deterministic encoding (`1 x h`).
    Pooled(Var),
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub t: usize,
    /// Predictive belief over every target output (`m x d_y`).
    pub prediction: GaussianBelief,
    pub prior: GaussianBelief,
    pub posterior: Option<GaussianBelief>,
    /// `KL(posterior || prior)`, present in posterior mode.
    pub kl: Option<Var>,
    pub z: Var,
    pub memory: Option<ImaginaryMemory>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub latent_encoder: Mlp,
    pub z_head: GaussianHead,
    pub det_encoder: Mlp,
    pub rssm: Option<Lstm>,
    rssm_h0: Option<ParamId>,
    rssm_c0: Option<ParamId>,
    pub attention: Option<Attention>,
    pub rmr: Option<Rmr>,
    pub decoder: Mlp,
    pub output_head: GaussianHead,
}

struct RolloutState {
    flat_latent: Option<Var>,
    flat_det: Option<Var>,
    blocks: VecDeque<(Var, Var)>,
    prior_lstm: Option<LstmState>,
    post_lstm: Option<LstmState>,
    z_prev: Option<Var>,
    mem: Option<ImaginaryMemory>,
}

impl Model {
    /// Builds the model and a freshly initialized parameter store.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<(Model, ParamStore)> {
        let mut store = ParamStore::new();
        let model = Model::build(cfg, &mut store, seed)?;
        Ok((model, store))
    }

    pub fn build(cfg: ModelConfig, store: &mut ParamStore, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut pb = ParamBuilder::new(store, seed);
        let (h, xw) = (cfg.h, cfg.x_width());
        let pair = xw + cfg.d_y;
        let latent_encoder = Mlp::new(&mut pb, "latent_encoder", MlpSpec::uniform(pair, h, cfg.latent_layers)?)?;
        let z_head = GaussianHead::new(&mut pb, "z_head", h, h, cfg.z_dim)?;
        let det_encoder = Mlp::new(&mut pb, "det_encoder", MlpSpec::uniform(pair, h, cfg.det_layers)?)?;
        let (rssm, rssm_h0, rssm_c0) = if cfg.kind.is_sequential() {
            let input = cfg.z_dim + h + if cfg.kind.has_memory() { h } else { 0 };
            let lstm = Lstm::new(&mut pb, "rssm", input, h)?;
            let h0 = pb.zeros("rssm.init.h", 1, h)?;
            let c0 = pb.zeros("rssm.init.c", 1, h)?;
            (Some(lstm), Some(h0), Some(c0))
        } else {
            (None, None, None)
        };
        let attention = if cfg.kind.has_attention() {
            Some(Attention::new(&mut pb, "attention", cfg.attention, xw, h, h, h)?)
        } else {
            None
        };
        let rmr = if cfg.kind.has_memory() {
            let rc = RmrConfig {
                slots: cfg.k.expect("validated"),
                key_dim: xw,
                y_dim: cfg.d_y,
                hidden: h,
                ablation: cfg.ablation,
            };
            Some(Rmr::new(&mut pb, "rmr", rc)?)
        } else {
            None
        };
        let decoder = Mlp::new(&mut pb, "decoder", MlpSpec::uniform(xw + cfg.z_dim + h, h, 2)?)?;
        let output_head = GaussianHead::new(&mut pb, "output_head", h, h, cfg.d_y)?;
        Ok(Model { cfg, latent_encoder, z_head, det_encoder, rssm, rssm_h0, rssm_c0, attention, rmr, decoder, output_head })
    }

    /// Converts a sequence into model inputs and per-step target outputs,
    /// applying task-step augmentation when enabled.
    pub fn prepare(&self, seq: &TaskSequence) -> Result<(Vec<StepInputs>, Vec<Array>)> {
        if seq.is_empty() {
            return Err(Error::Invalid("sequence has no task-steps".into()));
        }
        if seq.x_dim() != self.cfg.d_x || seq.y_dim() != self.cfg.d_y {
            return Err(Error::Invalid(format!(
                "sequence has (d_x, d_y) = ({}, {}), model expects ({}, {})",
                seq.x_dim(),
                seq.y_dim(),
                self.cfg.d_x,
                self.cfg.d_y
            )));
        }
        let len = seq.len();
        let mut steps = Vec::with_capacity(len);
        let mut ys = Vec::with_capacity(len);
        for (i, step) in seq.steps.iter().enumerate() {
            let t = i + 1;
            if step.targets.is_empty() {
                return Err(Error::Invalid(format!("task-step {t} has no targets")).at_step(t));
            }
            let context = self
                .input_matrix(&step.context, t, len)?
                .zip(step.context.y_matrix());
            let target_x = self.input_matrix(&step.targets, t, len)?.expect("nonempty");
            steps.push(StepInputs { t, context, target_x });
            ys.push(step.targets.y_matrix().expect("nonempty"));
        }
        Ok((steps, ys))
    }

    fn input_matrix(&self, set: &ContextSet, t: usize, len: usize) -> Result<Option<Array>> {
        if set.is_empty() {
            return Ok(None);
        }
        if !self.cfg.task_step_encoding {
            return Ok(set.x_matrix());
        }
        let e = task_step_code(t, len)?;
        let w = self.cfg.x_width();
        let mut data = Vec::with_capacity(set.len() * w);
        for (x, _) in set.iter() {
            data.extend_from_slice(x);
            data.push(e);
        }
        Ok(Some(Array::matrix(set.len(), w, data)?))
    }

    /// Sum-pooled latent-path encoding (`1 x h`); zero for an empty set.
    pub fn latent_pool(&self, g: &mut Graph, store: &ParamStore, pairs: Option<Var>) -> Result<Var> {
        match pairs {
            Some(p) => {
                let e = self.latent_encoder.forward(g, store, p)?;
                g.sum_axis(e, 0)
            }
            None => Ok(g.constant(Array::zeros(1, self.cfg.h))),
        }
    }

    /// Order-invariant belief over the task representation of a context.
    pub fn latent_encoder_belief(&self, g: &mut Graph, store: &ParamStore, pairs: Option<Var>) -> Result<GaussianBelief> {
        let pooled = self.latent_pool(g, store, pairs)?;
        self.z_head.forward(g, store, pooled)
    }

    pub fn initial_rssm(&self, g: &mut Graph, store: &ParamStore) -> Result<RssmState> {
        let (h0, c0) = self.rssm_h0.zip(self.rssm_c0).ok_or_else(|| self.unsupported("recurrent latent"))?;
        let deterministic = LstmState { h: g.param(store, h0), c: g.param(store, c0) };
        let belief = GaussianBelief {
            mean: g.constant(Array::zeros(1, self.cfg.z_dim)),
            var: g.constant(Array::full(1, self.cfg.z_dim, 1.0)),
        };
        let sample = g.constant(Array::zeros(1, self.cfg.z_dim));
        Ok(RssmState { deterministic, belief, sample })
    }

    fn unsupported(&self, what: &'static str) -> Error {
        Error::Unsupported { kind: what, model: self.cfg.kind.to_string() }
    }

    /// LSTM update on `(z_{t-1}, conditioning[, memory summary])` followed by
    /// the latent head.
    fn transition(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prev: LstmState,
        z_prev: Var,
        conditioning: Var,
        mem_summary: Option<Var>,
    ) -> Result<(LstmState, GaussianBelief)> {
        let lstm = self.rssm.as_ref().ok_or_else(|| self.unsupported("recurrent latent"))?;
        let mut parts = vec![z_prev, conditioning];
        match (self.cfg.kind.has_memory(), mem_summary) {
            (true, Some(s)) => parts.push(s),
            (false, None) => {}
            (true, None) => return Err(Error::Invalid("asnp_rmr prior needs a memory summary".into())),
            (false, Some(_)) => return Err(Error::Invalid("memory summary given to a memoryless model".into())),
        }
        let input = g.concat(&parts, 1)?;
        let state = lstm.step(g, store, input, prev)?;
        let belief = self.z_head.forward(g, store, state.h)?;
        Ok((state, belief))
    }

    /// Prior transition `P(z_t | z_{<t}, C_t[, memory])`.
    pub fn prior_step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prev: &RssmState,
        context: Option<&PairVars>,
        mem_summary: Option<Var>,
        noise: &mut Noise,
    ) -> Result<RssmState> {
        if !self.cfg.kind.is_sequential() {
            return Err(self.unsupported("prior_step"));
        }
        let cond = self.latent_pool(g, store, context.map(|c| c.pairs))?;
        let (deterministic, belief) = self.transition(g, store, prev.deterministic, prev.sample, cond, mem_summary)?;
        let sample = reparameterize(g, belief, noise.normal(1, self.cfg.z_dim))?;
        Ok(RssmState { deterministic, belief, sample })
    }

    /// Posterior transition: the same cell with the conditioning encoder
    /// applied to `C_t ∪ D_t`.
    pub fn posterior_step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prev: &RssmState,
        context: Option<&PairVars>,
        targets: Option<&PairVars>,
        mem_summary: Option<Var>,
        noise: &mut Noise,
    ) -> Result<RssmState> {
        if !self.cfg.kind.is_sequential() {
            return Err(self.unsupported("posterior_step"));
        }
        let targets = targets.ok_or_else(|| Error::Invalid("posterior step needs target pairs".into()))?;
        let c = self.latent_pool(g, store, context.map(|c| c.pairs))?;
        let d = self.latent_pool(g, store, Some(targets.pairs))?;
        let cond = g.add(c, d)?;
        let (deterministic, belief) = self.transition(g, store, prev.deterministic, prev.sample, cond, mem_summary)?;
        let sample = reparameterize(g, belief, noise.normal(1, self.cfg.z_dim))?;
        Ok(RssmState { deterministic, belief, sample })
    }

    /// `P(y | x, z, read)` for every row of `x`.
    pub fn decode(&self, g: &mut Graph, store: &ParamStore, x: Var, z: Var, det: DetPath) -> Result<GaussianBelief> {
        let m = g.shape(x)[0];
        let det = match (self.cfg.kind.has_attention(), det) {
            (true, DetPath::Read(r)) => r,
            (false, DetPath::Pooled(p)) => g.broadcast_rows(p, m)?,
            (true, DetPath::Pooled(_)) => {
                return Err(Error::Invalid(format!("{} decodes from an attention read", self.cfg.kind)))
            }
            (false, DetPath::Read(_)) => {
                return Err(Error::Invalid(format!("{} has no attention read", self.cfg.kind)))
            }
        };
        let zb = g.broadcast_rows(z, m)?;
        let input = g.concat(&[x, zb, det], 1)?;
        let hidden = self.decoder.forward(g, store, input)?;
        self.output_head.forward(g, store, hidden)
    }

    /// Prior-mode rollout: latents come from the prior path only and no
    /// target outputs are involved.
    pub fn rollout_prior(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        steps: &[StepInputs],
        noise: &mut Noise,
    ) -> Result<Vec<StepOutput>> {
        self.rollout(g, store, steps, None, noise)
    }

    /// Posterior-mode rollout used for training: latents are sampled from
    /// the posterior, which also conditions on the target pairs.
    pub fn rollout_posterior(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        steps: &[StepInputs],
        target_y: &[Array],
        noise: &mut Noise,
    ) -> Result<Vec<StepOutput>> {
        if target_y.len() != steps.len() {
            return Err(Error::Invalid(format!("{} steps but {} target sets", steps.len(), target_y.len())));
        }
        self.rollout(g, store, steps, Some(target_y), noise)
    }

    fn rollout(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        steps: &[StepInputs],
        target_y: Option<&[Array]>,
        noise: &mut Noise,
    ) -> Result<Vec<StepOutput>> {
        if steps.is_empty() {
            return Err(Error::Invalid("rollout needs at least one task-step".into()));
        }
        let mut state = RolloutState {
            flat_latent: None,
            flat_det: None,
            blocks: VecDeque::new(),
            prior_lstm: None,
            post_lstm: None,
            z_prev: None,
            mem: None,
        };
        if self.cfg.kind.is_sequential() {
            let init = self.initial_rssm(g, store)?;
            state.prior_lstm = Some(init.deterministic);
            state.post_lstm = Some(init.deterministic);
            state.z_prev = Some(init.sample);
        }
        if let Some(rmr) = &self.rmr {
            state.mem = Some(rmr.initial(g, store));
        }
        let mut out = Vec::with_capacity(steps.len());
        for (i, step) in steps.iter().enumerate() {
            let ty = target_y.map(|ys| &ys[i]);
            let o = self.step(g, store, &mut state, step, ty, noise).map_err(|e| e.at_step(step.t))?;
            out.push(o);
        }
        Ok(out)
    }

    fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        st: &mut RolloutState,
        step: &StepInputs,
        ty: Option<&Array>,
        noise: &mut Noise,
    ) -> Result<StepOutput> {
        let ctx = step.context.as_ref().map(|(x, y)| PairVars::new(g, x, y)).transpose()?;
        let tx = g.constant(step.target_x.clone());
        let m = step.target_x.rows();
        let tgt = ty.map(|y| -> Result<Var> {
            let yv = g.constant(y.clone());
            g.concat(&[tx, yv], 1)
        });
        let tgt = tgt.transpose()?;

        let s_c = self.latent_pool(g, store, ctx.map(|c| c.pairs))?;
        let s_d = tgt.map(|p| self.latent_pool(g, store, Some(p))).transpose()?;
        let det_values = ctx.map(|c| self.det_encoder.forward(g, store, c.pairs)).transpose()?;
        let h = self.cfg.h;

        let (prior, posterior, z, det, memory) = match self.cfg.kind {
            ModelKind::Np | ModelKind::Anp => {
                let flat = match st.flat_latent {
                    Some(f) => g.add(f, s_c)?,
                    None => s_c,
                };
                st.flat_latent = Some(flat);
                let prior = self.z_head.forward(g, store, flat)?;
                let posterior = match s_d {
                    Some(d) => {
                        let fd = g.add(flat, d)?;
                        Some(self.z_head.forward(g, store, fd)?)
                    }
                    None => None,
                };
                let z = reparameterize(g, posterior.unwrap_or(prior), noise.normal(1, self.cfg.z_dim))?;
                let det = if self.cfg.kind == ModelKind::Np {
                    if let Some(v) = det_values {
                        let pooled = g.sum_axis(v, 0)?;
                        st.flat_det = Some(match st.flat_det {
                            Some(f) => g.add(f, pooled)?,
                            None => pooled,
                        });
                    }
                    let pooled = st.flat_det.unwrap_or_else(|| g.constant(Array::zeros(1, h)));
                    DetPath::Pooled(pooled)
                } else {
                    if let (Some(c), Some(v)) = (ctx, det_values) {
                        st.blocks.push_back((c.x, v));
                    }
                    DetPath::Read(self.read_blocks(g, store, st, tx, m)?)
                };
                (prior, posterior, z, det, None)
            }
            ModelKind::Snp | ModelKind::AsnpW | ModelKind::AsnpRmr => {
                let real = match (ctx, det_values) {
                    (Some(c), Some(v)) => Some(RealPairs { pairs: c.pairs, keys: c.x, values: v }),
                    _ => None,
                };
                let mut summary = None;
                if let Some(rmr) = &self.rmr {
                    let attn = self.attention.as_ref().expect("asnp_rmr has attention");
                    let mem = rmr.step(g, store, attn, real.as_ref(), st.mem.as_ref().expect("memory"))?;
                    summary = Some(g.mean_axis(mem.values, 0)?);
                    st.mem = Some(mem);
                }
                let z_prev = st.z_prev.expect("sequential state");
                let (p_lstm, prior) =
                    self.transition(g, store, st.prior_lstm.expect("prior path"), z_prev, s_c, summary)?;
                st.prior_lstm = Some(p_lstm);
                let posterior = match s_d {
                    Some(d) => {
                        let cond = g.add(s_c, d)?;
                        let (q_lstm, post) =
                            self.transition(g, store, st.post_lstm.expect("posterior path"), z_prev, cond, summary)?;
                        st.post_lstm = Some(q_lstm);
                        Some(post)
                    }
                    None => None,
                };
                let z = reparameterize(g, posterior.unwrap_or(prior), noise.normal(1, self.cfg.z_dim))?;
                st.z_prev = Some(z);
                let det = match self.cfg.kind {
                    ModelKind::Snp => DetPath::Pooled(match det_values {
                        Some(v) => g.sum_axis(v, 0)?,
                        None => g.constant(Array::zeros(1, h)),
                    }),
                    ModelKind::AsnpW => {
                        if let Some(r) = real {
                            st.blocks.push_back((r.keys, r.values));
                            self.evict(g, st)?;
                        }
                        DetPath::Read(self.read_blocks(g, store, st, tx, m)?)
                    }
                    _ => {
                        let rmr = self.rmr.as_ref().expect("memory");
                        let attn = self.attention.as_ref().expect("attention");
                        let read = rmr.read(g, store, attn, real.as_ref(), st.mem.as_ref().expect("memory"), tx)?;
                        DetPath::Read(read.read)
                    }
                };
                (prior, posterior, z, det, st.mem)
            }
        };
        let prediction = self.decode(g, store, tx, z, det)?;
        let kl = posterior.map(|q| crate::layers::kl_diag_gaussian(g, q, prior)).transpose()?;
        Ok(StepOutput { t: step.t, prediction, prior, posterior, kl, z, memory })
    }

    /// Attention read over stored blocks; zeros when nothing is stored yet.
    fn read_blocks(&self, g: &mut Graph, store: &ParamStore, st: &RolloutState, tx: Var, m: usize) -> Result<Var> {
        if st.blocks.is_empty() {
            return Ok(g.constant(Array::zeros(m, self.cfg.h)));
        }
        let attn = self.attention.as_ref().expect("attentive model");
        let parts: Vec<(Var, Var)> = st.blocks.iter().copied().collect();
        Ok(attn.attend_union(g, store, &parts, tx)?.read)
    }

    /// Keeps only the `K` most recent context points, oldest evicted first.
    fn evict(&self, g: &mut Graph, st: &mut RolloutState) -> Result<()> {
        let Some(cap) = self.cfg.k else { return Ok(()) };
        let mut total: usize = st.blocks.iter().map(|(k, _)| g.shape(*k)[0]).sum();
        while total > cap {
            let (keys, values) = st.blocks.pop_front().expect("nonempty");
            let rows = g.shape(keys)[0];
            let excess = total - cap;
            if rows > excess {
                let keep = rows - excess;
                let k = g.slice(keys, 0, excess, keep)?;
                let v = g.slice(values, 0, excess, keep)?;
                st.blocks.push_front((k, v));
                total = cap;
            } else {
                total -= rows;
            }
        }
        Ok(())
    }

    /// Number of context points currently visible to a window model after
    /// feeding `steps`, for inspection.
    pub fn window_len(&self, g: &mut Graph, store: &ParamStore, steps: &[StepInputs]) -> Result<usize> {
        let mut st = RolloutState {
            flat_latent: None,
            flat_det: None,
            blocks: VecDeque::new(),
            prior_lstm: None,
            post_lstm: None,
            z_prev: None,
            mem: None,
        };
        for s in steps {
            if let Some((x, y)) = &s.context {
                let c = PairVars::new(g, x, y)?;
                let v = self.det_encoder.forward(g, store, c.pairs)?;
                st.blocks.push_back((c.x, v));
                if self.cfg.kind == ModelKind::AsnpW {
                    self.evict(g, &mut st)?;
                }
            }
        }
        Ok(st.blocks.iter().map(|(k, _)| g.shape(*k)[0]).sum())
    }
}
