//! Recurrent memory reconstruction.
//!
//! The memory holds `K` imaginary key-value cells. Every task-step it is
//! rebuilt from its previous state and the current real context:
//!
//! 1. `r_t = sum_n MLP(x_n, y_n)` summarizes the real context.
//! 2. The key-tracker LSTM consumes the flattened previous keys together
//!    with `r_t`; a linear map of its new hidden state gives the new keys.
//! 3. One value-tracker LSTM, shared by all cells, consumes each cell's new
//!    key and previous value. Its hidden state is the cell's proposal.
//! 4. Self-attention over the real pairs plus the proposal pairs, queried by
//!    the new keys and projected, gives the new values.
//!
//! Decoder reads attend over the real pairs together with the imaginary
//! cells, so the read set is never empty.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Array, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::layers::{Attention, AttentionRead, Linear, Lstm, LstmState, Mlp, MlpSpec, ParamBuilder};

/// RMR component switches used by the ablation study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Ablation {
    #[default]
    None,
    /// Proposals are the previous values; no value-tracker RNN.
    NoTracking,
    /// No interaction: values are projected proposals, and `r_t` is fed to
    /// the value tracker instead.
    NoInteraction,
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::None => "none",
            Ablation::NoTracking => "no_tracking",
            Ablation::NoInteraction => "no_interaction",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "no_tracking" | "no-tracking" => Ok(Ablation::NoTracking),
            "no_interaction" | "no-interaction" => Ok(Ablation::NoInteraction),
            other => Err(Error::Config(format!("unknown ablation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RmrConfig {
    /// Number of imaginary cells `K`.
    pub slots: usize,
    /// Width of keys: the (query-augmented) input width.
    pub key_dim: usize,
    /// Output width of the real context pairs.
    pub y_dim: usize,
    /// Width of values, trackers and `r_t`.
    pub hidden: usize,
    pub ablation: Ablation,
}

/// Real context pairs as seen by the memory.
#[derive(Clone, Copy, Debug)]
pub struct RealPairs {
    /// `n x (key_dim + y_dim)` raw pairs, consumed by the context encoder.
    pub pairs: Var,
    /// `n x key_dim`
    pub keys: Var,
    /// `n x hidden`, per-pair deterministic encodings.
    pub values: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ImaginaryMemory {
    /// `K x key_dim`
    pub keys: Var,
    /// `K x hidden`
    pub values: Var,
    pub key_tracker: LstmState,
    /// `K x hidden` per-cell tracker states; absent without value tracking.
    pub value_trackers: Option<LstmState>,
}

#[derive(Clone, Debug)]
pub struct Rmr {
    pub cfg: RmrConfig,
    pub context_encoder: Mlp,
    pub key_tracker: Lstm,
    pub key_proj: Linear,
    pub value_tracker: Option<Lstm>,
    pub value_proj: Linear,
    init_keys: ParamId,
    init_values: ParamId,
    init_key_h: ParamId,
    init_key_c: ParamId,
    init_value_h: Option<ParamId>,
    init_value_c: Option<ParamId>,
}

impl Rmr {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: RmrConfig) -> Result<Self> {
        if cfg.slots == 0 {
            return Err(Error::Invalid("memory needs at least one cell".into()));
        }
        let (k, dk, h) = (cfg.slots, cfg.key_dim, cfg.hidden);
        let context_encoder =
            Mlp::new(pb, &format!("{name}.context_encoder"), MlpSpec::uniform(dk + cfg.y_dim, h, 2)?)?;
        let key_tracker = Lstm::new(pb, &format!("{name}.key_tracker"), k * dk + h, h)?;
        let key_proj = Linear::new(pb, &format!("{name}.key_proj"), h, k * dk)?;
        let (value_tracker, init_value_h, init_value_c) = match cfg.ablation {
            Ablation::NoTracking => (None, None, None),
            ab => {
                let input = dk + h + if ab == Ablation::NoInteraction { h } else { 0 };
                let lstm = Lstm::new(pb, &format!("{name}.value_tracker"), input, h)?;
                let vh = pb.zeros(&format!("{name}.init.value_h"), k, h)?;
                let vc = pb.zeros(&format!("{name}.init.value_c"), k, h)?;
                (Some(lstm), Some(vh), Some(vc))
            }
        };
        let value_proj = Linear::new(pb, &format!("{name}.value_proj"), h, h)?;
        let init_keys = pb.uniform(&format!("{name}.init.keys"), k, dk, 1.0)?;
        let init_values = pb.uniform(&format!("{name}.init.values"), k, h, 0.1)?;
        let init_key_h = pb.zeros(&format!("{name}.init.key_h"), 1, h)?;
        let init_key_c = pb.zeros(&format!("{name}.init.key_c"), 1, h)?;
        Ok(Rmr {
            cfg,
            context_encoder,
            key_tracker,
            key_proj,
            value_tracker,
            value_proj,
            init_keys,
            init_values,
            init_key_h,
            init_key_c,
            init_value_h,
            init_value_c,
        })
    }

    /// The trainable initial memory.
    pub fn initial(&self, g: &mut Graph, store: &ParamStore) -> ImaginaryMemory {
        let key_tracker = LstmState { h: g.param(store, self.init_key_h), c: g.param(store, self.init_key_c) };
        let value_trackers = self
            .init_value_h
            .zip(self.init_value_c)
            .map(|(h, c)| LstmState { h: g.param(store, h), c: g.param(store, c) });
        ImaginaryMemory {
            keys: g.param(store, self.init_keys),
            values: g.param(store, self.init_values),
            key_tracker,
            value_trackers,
        }
    }

    /// `r_t = sum_n MLP(x_n, y_n)`; a zero row for an empty context.
    pub fn encode_context(&self, g: &mut Graph, store: &ParamStore, pairs: Option<Var>) -> Result<Var> {
        match pairs {
            Some(p) => {
                let e = self.context_encoder.forward(g, store, p)?;
                g.sum_axis(e, 0)
            }
            None => Ok(g.constant(Array::zeros(1, self.cfg.hidden))),
        }
    }

    /// New keys (`K x key_dim`) and key-tracker state.
    pub fn generate_keys(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        r_t: Var,
        mem: &ImaginaryMemory,
    ) -> Result<(Var, LstmState)> {
        let (k, dk) = (self.cfg.slots, self.cfg.key_dim);
        let flat = g.reshape(mem.keys, 1, k * dk)?;
        let input = g.concat(&[flat, r_t], 1)?;
        let state = self.key_tracker.step(g, store, input, mem.key_tracker)?;
        let keys = self.key_proj.forward(g, store, state.h)?;
        let keys = g.reshape(keys, k, dk)?;
        Ok((keys, state))
    }

    /// One shared-weight tracker step per cell on `concat(new_key, prev_value[, r_t])`.
    pub fn track_value_flow(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        new_keys: Var,
        prev_values: Var,
        trackers: LstmState,
        r_t: Option<Var>,
    ) -> Result<LstmState> {
        let lstm = self
            .value_tracker
            .as_ref()
            .ok_or_else(|| Error::Invalid("value tracking is disabled for this memory".into()))?;
        let mut parts = vec![new_keys, prev_values];
        if let Some(r) = r_t {
            parts.push(g.broadcast_rows(r, self.cfg.slots)?);
        }
        let input = g.concat(&parts, 1)?;
        lstm.step(g, store, input, trackers)
    }

    /// Self-attention over the real pairs and the proposal cells, queried by
    /// the new keys, then projected to value width.
    pub fn interact(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        attn: &Attention,
        real: Option<&RealPairs>,
        proposals: Var,
        keys: Var,
    ) -> Result<Var> {
        let mut parts = Vec::with_capacity(2);
        if let Some(r) = real {
            parts.push((r.keys, r.values));
        }
        parts.push((keys, proposals));
        let attended = attn.attend_union(g, store, &parts, keys)?;
        self.value_proj.forward(g, store, attended.read)
    }

    /// One reconstruction step; a pure function of its inputs.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        attn: &Attention,
        real: Option<&RealPairs>,
        mem: &ImaginaryMemory,
    ) -> Result<ImaginaryMemory> {
        let r_t = self.encode_context(g, store, real.map(|r| r.pairs))?;
        let (keys, key_tracker) = self.generate_keys(g, store, r_t, mem)?;
        let (values, value_trackers) = match self.cfg.ablation {
            Ablation::None => {
                let tr = mem.value_trackers.expect("value trackers present");
                let tr = self.track_value_flow(g, store, keys, mem.values, tr, None)?;
                (self.interact(g, store, attn, real, tr.h, keys)?, Some(tr))
            }
            Ablation::NoTracking => (self.interact(g, store, attn, real, mem.values, keys)?, None),
            Ablation::NoInteraction => {
                let tr = mem.value_trackers.expect("value trackers present");
                let tr = self.track_value_flow(g, store, keys, mem.values, tr, Some(r_t))?;
                (self.value_proj.forward(g, store, tr.h)?, Some(tr))
            }
        };
        Ok(ImaginaryMemory { keys, values, key_tracker, value_trackers })
    }

    /// Attention read over the extended context (real pairs plus imaginary cells).
    pub fn read(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        attn: &Attention,
        real: Option<&RealPairs>,
        mem: &ImaginaryMemory,
        queries: Var,
    ) -> Result<AttentionRead> {
        let mut parts = Vec::with_capacity(2);
        if let Some(r) = real {
            parts.push((r.keys, r.values));
        }
        parts.push((mem.keys, mem.values));
        attn.attend_union(g, store, &parts, queries)
    }
}
