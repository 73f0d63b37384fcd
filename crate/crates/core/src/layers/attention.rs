//! Attention over key-value sets.
//!
//! Keys are `K x d_k`, values `K x d_v` and queries `Q x d_k`; every query
//! row is answered independently, so [`Attention::attend`] doubles as the
//! self-attention used by memory interaction (queries = imaginary keys).

use std::fmt;
use std::str::FromStr;

use super::init::ParamBuilder;
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

pub const DEFAULT_HEADS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    DotProduct,
    Laplace,
    Multihead { heads: usize },
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttentionKind::DotProduct => write!(f, "dot"),
            AttentionKind::Laplace => write!(f, "laplace"),
            AttentionKind::Multihead { heads } => write!(f, "multihead:{heads}"),
        }
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" | "dot-product" => Ok(AttentionKind::DotProduct),
            "laplace" => Ok(AttentionKind::Laplace),
            "multihead" => Ok(AttentionKind::Multihead { heads: DEFAULT_HEADS }),
            other => match other.strip_prefix("multihead:") {
                Some(n) => n
                    .parse()
                    .map(|heads| AttentionKind::Multihead { heads })
                    .map_err(|_| Error::Config(format!("bad head count in {other:?}"))),
                None => Err(Error::Config(format!("unknown attention kind {other:?}"))),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct MultiheadProjections {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub proj_dim: usize,
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub kind: AttentionKind,
    pub key_dim: usize,
    pub value_dim: usize,
    pub out_dim: usize,
    pub proj: Option<MultiheadProjections>,
}

/// Output of an attention read.
#[derive(Clone, Copy, Debug)]
pub struct AttentionRead {
    /// `Q x out_dim`
    pub read: Var,
    /// `Q x K`; rows are nonnegative and sum to one. For multihead this is
    /// the average over heads.
    pub weights: Var,
}

impl Attention {
    /// `proj_dim` and `out_dim` only matter for multihead; the parameter-free
    /// kinds return reads of width `value_dim`.
    pub fn new(
        pb: &mut ParamBuilder<'_>,
        name: &str,
        kind: AttentionKind,
        key_dim: usize,
        value_dim: usize,
        proj_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let (proj, out_dim) = match kind {
            AttentionKind::Multihead { heads } => {
                if heads == 0 || proj_dim % heads != 0 {
                    return Err(Error::Invalid(format!(
                        "{heads} heads do not divide projection width {proj_dim}"
                    )));
                }
                let p = MultiheadProjections {
                    wq: pb.fan_in_uniform(&format!("{name}.wq"), key_dim, proj_dim)?,
                    wk: pb.fan_in_uniform(&format!("{name}.wk"), key_dim, proj_dim)?,
                    wv: pb.fan_in_uniform(&format!("{name}.wv"), value_dim, proj_dim)?,
                    wo: pb.fan_in_uniform(&format!("{name}.wo"), proj_dim, out_dim)?,
                    heads,
                    proj_dim,
                };
                (Some(p), out_dim)
            }
            _ => (None, value_dim),
        };
        Ok(Attention { kind, key_dim, value_dim, out_dim, proj })
    }

    pub fn attend(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        keys: Var,
        values: Var,
        queries: Var,
    ) -> Result<AttentionRead> {
        let ks = g.shape(keys).to_vec();
        let vs = g.shape(values).to_vec();
        let qs = g.shape(queries).to_vec();
        if ks.len() != 2 || vs.len() != 2 || qs.len() != 2 {
            return Err(Error::shape("attend", "keys, values and queries must be matrices"));
        }
        if ks[0] != vs[0] || ks[1] != self.key_dim || qs[1] != self.key_dim || vs[1] != self.value_dim {
            return Err(Error::shape(
                "attend",
                format!(
                    "keys {ks:?}, values {vs:?}, queries {qs:?}; expected key width {} and value width {}",
                    self.key_dim, self.value_dim
                ),
            ));
        }
        match (&self.kind, &self.proj) {
            (AttentionKind::DotProduct, _) => dot_product(g, keys, values, queries),
            (AttentionKind::Laplace, _) => laplace(g, keys, values, queries),
            (AttentionKind::Multihead { .. }, Some(p)) => multihead(g, store, p, keys, values, queries),
            (AttentionKind::Multihead { .. }, None) => unreachable!("multihead without projections"),
        }
    }

    /// Attends over the union of several `(keys, values)` blocks.
    /// An empty union is an error; callers guard sparse contexts.
    pub fn attend_union(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        parts: &[(Var, Var)],
        queries: Var,
    ) -> Result<AttentionRead> {
        if parts.is_empty() {
            return Err(Error::EmptyAttention);
        }
        let keys: Vec<Var> = parts.iter().map(|p| p.0).collect();
        let values: Vec<Var> = parts.iter().map(|p| p.1).collect();
        let keys = g.concat(&keys, 0)?;
        let values = g.concat(&values, 0)?;
        self.attend(g, store, keys, values, queries)
    }

    /// Self-attention over a key-value set of size `M >= 1`; row `q` of the
    /// result equals `attend(pairs, query q)`.
    pub fn self_attend(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        keys: Var,
        values: Var,
        queries: Var,
    ) -> Result<Var> {
        Ok(self.attend(g, store, keys, values, queries)?.read)
    }
}

/// `softmax(Q K^T / sqrt(d_k)) V`.
fn dot_product(g: &mut Graph, keys: Var, values: Var, queries: Var) -> Result<AttentionRead> {
    let dk = g.shape(keys)[1];
    let kt = g.transpose(keys)?;
    let scores = g.matmul(queries, kt)?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let weights = g.softmax(scores, 1)?;
    let read = g.matmul(weights, values)?;
    Ok(AttentionRead { read, weights })
}

/// `softmax(-|k - q|_1) V`, unscaled.
fn laplace(g: &mut Graph, keys: Var, values: Var, queries: Var) -> Result<AttentionRead> {
    let n_keys = g.shape(keys)[0];
    let n_q = g.shape(queries)[0];
    let mut rows = Vec::with_capacity(n_q);
    for q in 0..n_q {
        let qrow = g.slice(queries, 0, q, 1)?;
        let qb = g.broadcast_rows(qrow, n_keys)?;
        let diff = g.sub(keys, qb)?;
        let dist = g.abs(diff)?;
        let dist = g.sum_axis(dist, 1)?;
        let dist = g.transpose(dist)?;
        rows.push(g.scale(dist, -1.0)?);
    }
    let scores = g.concat(&rows, 0)?;
    let weights = g.softmax(scores, 1)?;
    let read = g.matmul(weights, values)?;
    Ok(AttentionRead { read, weights })
}

fn multihead(
    g: &mut Graph,
    store: &ParamStore,
    p: &MultiheadProjections,
    keys: Var,
    values: Var,
    queries: Var,
) -> Result<AttentionRead> {
    let wq = g.param(store, p.wq);
    let wk = g.param(store, p.wk);
    let wv = g.param(store, p.wv);
    let wo = g.param(store, p.wo);
    let qp = g.matmul(queries, wq)?;
    let kp = g.matmul(keys, wk)?;
    let vp = g.matmul(values, wv)?;
    let hd = p.proj_dim / p.heads;
    let mut reads = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let qh = g.slice(qp, 1, h * hd, hd)?;
        let kh = g.slice(kp, 1, h * hd, hd)?;
        let vh = g.slice(vp, 1, h * hd, hd)?;
        let r = dot_product(g, kh, vh, qh)?;
        reads.push(r.read);
        weights.push(r.weights);
    }
    let joined = g.concat(&reads, 1)?;
    let read = g.matmul(joined, wo)?;
    let mut w = weights[0];
    for &other in &weights[1..] {
        w = g.add(w, other)?;
    }
    let w = g.scale(w, 1.0 / p.heads as f64)?;
    Ok(AttentionRead { read, weights: w })
}
