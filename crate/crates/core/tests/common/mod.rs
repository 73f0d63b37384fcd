#![allow(dead_code)]

use npl_core::autodiff::{Array, Graph, ParamStore, Var};
use npl_core::layers::{Attention, AttentionKind, ParamBuilder};
use npl_core::models::{ModelConfig, ModelKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Array::matrix(rows, cols, data).unwrap()
}

/// Rows of `a` reordered by `order`.
pub fn permute_rows(a: &Array, order: &[usize]) -> Array {
    let mut data = Vec::with_capacity(a.len());
    for &i in order {
        data.extend_from_slice(a.row_slice(i));
    }
    Array::matrix(a.rows(), a.cols(), data).unwrap()
}

pub fn shuffled(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

pub fn attention(kind: AttentionKind, dk: usize, dv: usize, seed: u64) -> (Attention, ParamStore) {
    let mut store = ParamStore::new();
    let mut pb = ParamBuilder::new(&mut store, seed);
    let a = Attention::new(&mut pb, "attn", kind, dk, dv, 8, 6).unwrap();
    (a, store)
}

pub const KINDS: [AttentionKind; 3] =
    [AttentionKind::DotProduct, AttentionKind::Laplace, AttentionKind::Multihead { heads: 2 }];

pub fn max_abs_diff(a: &Array, b: &Array) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn value(g: &Graph, v: Var) -> Array {
    g.value(v).clone()
}

/// Small desk config for fast tests.
pub fn tiny_config(kind: ModelKind, d_x: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(kind, d_x, 1);
    cfg.h = 8;
    cfg.z_dim = 4;
    cfg.k = Some(2);
    cfg.latent_layers = 2;
    cfg.det_layers = 2;
    cfg
}
