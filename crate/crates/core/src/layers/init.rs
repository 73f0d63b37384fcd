use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Array, ParamId, ParamStore};
use crate::error::Result;

/// Registers freshly initialized parameters in a [`ParamStore`].
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        ParamBuilder { store, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Uniform in `[-sqrt(1/fan_in), sqrt(1/fan_in)]`, with `fan_in = rows`.
    pub fn fan_in_uniform(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let bound = (1.0 / rows as f64).sqrt();
        self.uniform(name, rows, cols, bound)
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> Result<ParamId> {
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.store.insert(name, Array::matrix(rows, cols, data)?)
    }

    pub fn constant(&mut self, name: &str, value: Array) -> Result<ParamId> {
        self.store.insert(name, value)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.store.insert(name, Array::zeros(rows, cols))
    }
}
