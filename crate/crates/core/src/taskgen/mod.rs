//! Synthetic task streams: dynamic 1D GP regression and moving-sprite
//! image completion, in the sparse-context and transfer-prediction regimes.
//!
//! Generators are pure functions of `(seed, regime)`.

pub mod gp;
pub mod sprite;

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::data::{ContextSet, TaskSequence, TaskStep};
use crate::error::{Error, Result};
pub use gp::{evolve_gp_params, gp_kernel, gp_predictive_nll, sample_gp_function, GpParams};
pub use sprite::{bundled_sprites, load_pgm, step_sprite, Sprite, SpriteState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegimeName {
    SparseContext,
    TransferPrediction,
}

impl fmt::Display for RegimeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegimeName::SparseContext => "sparse_context",
            RegimeName::TransferPrediction => "transfer_prediction",
        })
    }
}

impl FromStr for RegimeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse_context" | "sparse-context" | "sparse" => Ok(RegimeName::SparseContext),
            "transfer_prediction" | "transfer-prediction" | "transfer" => Ok(RegimeName::TransferPrediction),
            other => Err(Error::Config(format!("unknown regime {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskDim {
    One,
    Two,
}

impl fmt::Display for TaskDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskDim::One => "1d",
            TaskDim::Two => "2d",
        })
    }
}

impl FromStr for TaskDim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1d" | "1" => Ok(TaskDim::One),
            "2d" | "2" => Ok(TaskDim::Two),
            other => Err(Error::Config(format!("unknown task dimension {other:?}"))),
        }
    }
}

/// Which steps receive a nonempty context.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextSteps {
    /// This many steps chosen uniformly at random.
    Random(usize),
    /// The first this-many steps.
    First(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeSpec {
    pub name: RegimeName,
    pub dim: TaskDim,
    pub len: usize,
    pub context_steps: ContextSteps,
    /// Inclusive range of `n` on nonempty steps.
    pub n_range: (usize, usize),
    /// `m` is uniform on `[1, m_total - n]`, with `n = 0` on empty steps.
    pub m_total: usize,
    pub init_l: (f64, f64),
    pub init_sigma: (f64, f64),
    pub drift_l: f64,
    pub drift_sigma: f64,
    pub x_range: (f64, f64),
}

impl RegimeSpec {
    /// Full-length regimes: `T = 50` with 45 random context steps, or
    /// `T = 20` with context on the first 10.
    pub fn full(name: RegimeName, dim: TaskDim) -> Self {
        let (len, steps) = match name {
            RegimeName::SparseContext => (50, ContextSteps::Random(45)),
            RegimeName::TransferPrediction => (20, ContextSteps::First(10)),
        };
        RegimeSpec::with_shape(name, dim, len, steps)
    }

    /// Desk-scale regimes with `T = 10`: 9 random context steps, or context
    /// on the first 5.
    pub fn desk(name: RegimeName, dim: TaskDim) -> Self {
        let (len, steps) = match name {
            RegimeName::SparseContext => (10, ContextSteps::Random(9)),
            RegimeName::TransferPrediction => (10, ContextSteps::First(5)),
        };
        RegimeSpec::with_shape(name, dim, len, steps)
    }

    fn with_shape(name: RegimeName, dim: TaskDim, len: usize, context_steps: ContextSteps) -> Self {
        let (n_range, m_total) = match (name, dim) {
            (RegimeName::SparseContext, TaskDim::One) => ((1, 1), 11),
            (RegimeName::TransferPrediction, TaskDim::One) => ((5, 50), 51),
            (RegimeName::SparseContext, TaskDim::Two) => ((30, 30), 51),
            (RegimeName::TransferPrediction, TaskDim::Two) => ((5, 500), 501),
        };
        let (init_l, init_sigma) = match name {
            RegimeName::SparseContext => ((0.7, 1.2), (1.0, 1.6)),
            RegimeName::TransferPrediction => ((1.2, 1.9), (1.6, 3.1)),
        };
        RegimeSpec {
            name,
            dim,
            len,
            context_steps,
            n_range,
            m_total,
            init_l,
            init_sigma,
            drift_l: 0.03,
            drift_sigma: 0.05,
            x_range: (-2.0, 2.0),
        }
    }

    /// Same regime with a different sequence length; the number of context
    /// steps keeps its proportion.
    pub fn with_len(mut self, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("sequence length must be >= 1".into()));
        }
        let scale = |k: usize| ((k as f64 * len as f64 / self.len as f64).round() as usize).clamp(1, len);
        self.context_steps = match self.context_steps {
            ContextSteps::Random(k) => ContextSteps::Random(scale(k)),
            ContextSteps::First(k) => ContextSteps::First(scale(k)),
        };
        self.len = len;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let k = match self.context_steps {
            ContextSteps::Random(k) | ContextSteps::First(k) => k,
        };
        if self.len == 0 || k > self.len {
            return Err(Error::Config(format!("{k} context steps do not fit T = {}", self.len)));
        }
        if self.n_range.0 > self.n_range.1 || self.n_range.1 >= self.m_total {
            return Err(Error::Config("context range leaves no room for targets".into()));
        }
        Ok(())
    }

    /// Per-step flag: does the step receive context.
    pub fn nonempty_steps<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<bool> {
        let mut mask = vec![false; self.len];
        match self.context_steps {
            ContextSteps::First(k) => mask[..k].iter_mut().for_each(|m| *m = true),
            ContextSteps::Random(k) => sample(rng, self.len, k).into_iter().for_each(|i| mask[i] = true),
        }
        mask
    }

    fn counts<R: Rng + ?Sized>(&self, rng: &mut R, nonempty: bool) -> (usize, usize) {
        let n = if nonempty { rng.random_range(self.n_range.0..=self.n_range.1) } else { 0 };
        let m = rng.random_range(1..=self.m_total - n);
        (n, m)
    }
}

pub fn generate_sequence(seed: u64, spec: &RegimeSpec, sprites: &[Sprite]) -> Result<TaskSequence> {
    match spec.dim {
        TaskDim::One => generate_1d_sequence(seed, spec),
        TaskDim::Two => generate_2d_sequence(seed, spec, sprites),
    }
}

pub fn generate_1d_sequence(seed: u64, spec: &RegimeSpec) -> Result<TaskSequence> {
    if spec.dim != TaskDim::One {
        return Err(Error::Invalid("1D generator given a 2D regime".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = GpParams {
        l: rng.random_range(spec.init_l.0..=spec.init_l.1),
        sigma: rng.random_range(spec.init_sigma.0..=spec.init_sigma.1),
        dl: rng.random_range(-spec.drift_l..=spec.drift_l),
        dsigma: rng.random_range(-spec.drift_sigma..=spec.drift_sigma),
    };
    let mask = spec.nonempty_steps(&mut rng);
    let (mut ls, mut sigmas) = (Vec::with_capacity(spec.len), Vec::with_capacity(spec.len));
    let mut escalations = 0;
    let mut steps = Vec::with_capacity(spec.len);
    for (i, &nonempty) in mask.iter().enumerate() {
        if i > 0 {
            p = evolve_gp_params(&mut rng, &p);
        }
        ls.push(p.l);
        sigmas.push(p.sigma);
        let (n, m) = spec.counts(&mut rng, nonempty);
        let xs: Vec<f64> = (0..n + m).map(|_| rng.random_range(spec.x_range.0..=spec.x_range.1)).collect();
        let (ys, esc) = sample_gp_function(&mut rng, &xs, &p).map_err(|e| e.at_step(i + 1))?;
        escalations += esc;
        let mut context = ContextSet::empty(1, 1);
        let mut targets = ContextSet::empty(1, 1);
        for j in 0..n + m {
            let set = if j < n { &mut context } else { &mut targets };
            set.push(&[xs[j]], &[ys[j]])?;
        }
        steps.push(TaskStep { t: i + 1, context, targets });
    }
    let meta = json!({
        "dim": "1d",
        "l": ls,
        "sigma": sigmas,
        "dl": p.dl,
        "dsigma": p.dsigma,
        "jitter_escalations": escalations,
    });
    Ok(TaskSequence { seed, regime: spec.name.to_string(), steps, meta })
}

/// Kernel parameters per step, as recorded by [`generate_1d_sequence`].
pub fn params_trace(seq: &TaskSequence) -> Result<Vec<GpParams>> {
    let field = |k: &str| -> Result<Vec<f64>> {
        seq.meta
            .get(k)
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Format(format!("sequence {} has no {k} trace", seq.seed)))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| Error::Format(format!("non-numeric {k} entry"))))
            .collect()
    };
    let scalar = |k: &str| seq.meta.get(k).and_then(|v| v.as_f64()).unwrap_or(0.0);
    let (ls, sigmas) = (field("l")?, field("sigma")?);
    if ls.len() != seq.len() || sigmas.len() != seq.len() {
        return Err(Error::Format("parameter trace length differs from sequence length".into()));
    }
    Ok(ls
        .into_iter()
        .zip(sigmas)
        .map(|(l, sigma)| GpParams { l, sigma, dl: scalar("dl"), dsigma: scalar("dsigma") })
        .collect())
}

/// Per-step exact GP predictive NLL of the targets given only that step's
/// context and the true kernel parameters.
pub fn gp_oracle_nll(seq: &TaskSequence, trace: &[GpParams]) -> Result<Vec<f64>> {
    if seq.x_dim() != 1 || seq.y_dim() != 1 {
        return Err(Error::Invalid("GP oracle needs a 1D sequence".into()));
    }
    if trace.len() != seq.len() {
        return Err(Error::Invalid(format!("{} trace entries for {} steps", trace.len(), seq.len())));
    }
    seq.steps
        .iter()
        .zip(trace)
        .map(|(s, p)| {
            let col = |set: &ContextSet, y: bool| -> Vec<f64> {
                set.iter().map(|(x, v)| if y { v[0] } else { x[0] }).collect()
            };
            gp_predictive_nll(
                &col(&s.context, false),
                &col(&s.context, true),
                &col(&s.targets, false),
                &col(&s.targets, true),
                p,
            )
            .map_err(|e| e.at_step(s.t))
        })
        .collect()
}

/// Pixel `(row, col)` scaled to `[0, 1]^2`.
pub fn pixel_coords(index: usize, canvas: usize) -> [f64; 2] {
    let scale = (canvas - 1) as f64;
    [(index / canvas) as f64 / scale, (index % canvas) as f64 / scale]
}

pub fn generate_2d_sequence(seed: u64, spec: &RegimeSpec, sprites: &[Sprite]) -> Result<TaskSequence> {
    if spec.dim != TaskDim::Two {
        return Err(Error::Invalid("2D generator given a 1D regime".into()));
    }
    spec.validate()?;
    if sprites.is_empty() {
        return Err(Error::Invalid("no sprites to draw from".into()));
    }
    let canvas = sprite::CANVAS;
    let pixels = canvas * canvas;
    if spec.m_total - 1 > pixels {
        return Err(Error::Config(format!("regime asks for more than {pixels} pixels")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let which = rng.random_range(0..sprites.len());
    let glyph = &sprites[which];
    let mut state = SpriteState::random(&mut rng, canvas, glyph.size)?;
    let mask = spec.nonempty_steps(&mut rng);
    let mut steps = Vec::with_capacity(spec.len);
    let mut trace = Vec::with_capacity(spec.len);
    for (i, &nonempty) in mask.iter().enumerate() {
        if i > 0 {
            state = step_sprite(&state, &mut rng);
        }
        trace.push(state.pos.to_vec());
        let img = sprite::render(&state, glyph, canvas);
        let (n, m) = spec.counts(&mut rng, nonempty);
        let mut context = ContextSet::empty(2, 1);
        for idx in sample(&mut rng, pixels, n) {
            context.push(&pixel_coords(idx, canvas), &[img[idx]])?;
        }
        let mut targets = ContextSet::empty(2, 1);
        for idx in sample(&mut rng, pixels, m) {
            targets.push(&pixel_coords(idx, canvas), &[img[idx]])?;
        }
        steps.push(TaskStep { t: i + 1, context, targets });
    }
    let meta = json!({ "dim": "2d", "sprite": which, "positions": trace, "velocity": state.vel });
    Ok(TaskSequence { seed, regime: spec.name.to_string(), steps, meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_1d_counts() {
        let spec = RegimeSpec::full(RegimeName::SparseContext, TaskDim::One);
        let seq = generate_1d_sequence(11, &spec).unwrap();
        assert_eq!(seq.len(), 50);
        assert_eq!(seq.steps.iter().filter(|s| s.context.is_empty()).count(), 5);
        for s in &seq.steps {
            if !s.context.is_empty() {
                assert_eq!(s.context.len(), 1);
                assert!((1..=10).contains(&s.targets.len()));
            }
        }
    }

    #[test]
    fn transfer_tail_is_empty() {
        let spec = RegimeSpec::full(RegimeName::TransferPrediction, TaskDim::One);
        let seq = generate_1d_sequence(2, &spec).unwrap();
        assert!(seq.steps[..10].iter().all(|s| (5..=50).contains(&s.context.len())));
        assert!(seq.steps[10..].iter().all(|s| s.context.is_empty()));
    }

    #[test]
    fn desk_shapes() {
        let s = RegimeSpec::desk(RegimeName::SparseContext, TaskDim::One);
        assert_eq!((s.len, s.context_steps), (10, ContextSteps::Random(9)));
        let t = RegimeSpec::desk(RegimeName::TransferPrediction, TaskDim::Two);
        assert_eq!((t.len, t.context_steps), (10, ContextSteps::First(5)));
    }

    #[test]
    fn sprite_queries_sit_on_grid() {
        let spec = RegimeSpec::desk(RegimeName::SparseContext, TaskDim::Two);
        let seq = generate_2d_sequence(5, &spec, &bundled_sprites()).unwrap();
        for s in &seq.steps {
            for (x, y) in s.context.iter().chain(s.targets.iter()) {
                for v in x {
                    let k = v * 41.0;
                    assert!((k - k.round()).abs() < 1e-9 && (0.0..=41.0).contains(&k));
                }
                assert!((0.0..=1.0).contains(&y[0]));
            }
        }
    }

    #[test]
    fn generation_is_repeatable() {
        let spec = RegimeSpec::desk(RegimeName::TransferPrediction, TaskDim::Two);
        let a = generate_2d_sequence(9, &spec, &bundled_sprites()).unwrap();
        let b = generate_2d_sequence(9, &spec, &bundled_sprites()).unwrap();
        assert_eq!(a.to_json_line().unwrap(), b.to_json_line().unwrap());
    }

    #[test]
    fn oracle_reads_trace() {
        let spec = RegimeSpec::desk(RegimeName::SparseContext, TaskDim::One);
        let seq = generate_1d_sequence(3, &spec).unwrap();
        let trace = params_trace(&seq).unwrap();
        let nll = gp_oracle_nll(&seq, &trace).unwrap();
        assert_eq!(nll.len(), 10);
        assert!(nll.iter().all(|v| v.is_finite()));
    }
}
