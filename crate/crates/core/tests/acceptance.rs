//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! `NPL_ACCEPTANCE=1,5,11` restricts the run to the listed criteria.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use nalgebra::{Matrix2, Vector2};
use npl_core::autodiff::{finite_difference_report, Array, Graph, ParamStore, Var};
use npl_core::data::{ContextSet, TaskSequence, TaskStep};
use npl_core::harness::{
    evaluate_model, generate_dataset, parse_checkpoint, checkpoint_bytes, train, EvalReport, TrainConfig,
};
use npl_core::layers::{
    gaussian_log_likelihood, kl_diag_gaussian, AttentionKind, GaussianBelief, GaussianHead, Linear, Lstm, LstmState,
    Mlp, MlpSpec, ParamBuilder,
};
use npl_core::models::{Model, ModelKind, Noise, PairVars};
use npl_core::parallel::ExecMode;
use npl_core::rmr::{Ablation, RealPairs, Rmr, RmrConfig};
use npl_core::taskgen::gp::kernel_matrix;
use npl_core::taskgen::sprite::{step_sprite, SpriteState, CANVAS, SPEED, SPRITE};
use npl_core::taskgen::{
    bundled_sprites, generate_sequence, gp_kernel, gp_oracle_nll, sample_gp_function, ContextSteps, GpParams,
    RegimeName, RegimeSpec, TaskDim,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const INVARIANCE_TOL: f64 = 1e-9;

/// Comparative runs: desk models and regimes, 5000 steps, 3 seeds.
const TRAIN_STEPS: usize = 5000;
const TRAIN_BATCH: usize = 4;
const TRAIN_LR: f64 = 1e-3;
const SEEDS: [u64; 3] = [0, 1, 2];
const HELD_OUT: usize = 200;
const HELD_OUT_SEED: u64 = 1 << 40;
const EVAL_SAMPLES: usize = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn line(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
    let _ = out.flush();
}

// ---------------------------------------------------------------------------
// 1. Gradients

/// `sum(out * w)` with a fixed random `w`, so no entry cancels by symmetry.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> npl_core::Result<Var> {
    let shape = g.shape(out).to_vec();
    let w = random_matrix(&mut rng(seed), shape[0], shape[1], 1.0);
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn fd(store: &ParamStore, f: impl Fn(&ParamStore, &mut Graph) -> npl_core::Result<Var>) -> f64 {
    finite_difference_report(store, FD_EPS, f).unwrap().max_rel_error
}

fn layer_checks() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut r = rng(100);
    let x = random_matrix(&mut r, 3, 4, 1.0);

    let mut store = ParamStore::new();
    let lin = Linear::new(&mut ParamBuilder::new(&mut store, 1), "lin", 4, 3).unwrap();
    out.push((
        "linear".into(),
        fd(&store, |s, g| {
            let xv = g.constant(x.clone());
            let y = lin.forward(g, s, xv)?;
            weighted_sum(g, y, 1)
        }),
    ));

    let mut store = ParamStore::new();
    let mut pb = ParamBuilder::new(&mut store, 2);
    let mlp = Mlp::new(&mut pb, "mlp", MlpSpec::uniform(4, 6, 3).unwrap()).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        // Nonzero biases keep hidden units away from the ReLU kink.
        if store.name(id).ends_with(".b") {
            let v = random_matrix(&mut r, 1, store.value(id).len(), 0.5);
            *store.value_mut(id) = v;
        }
    }
    out.push((
        "mlp".into(),
        fd(&store, |s, g| {
            let xv = g.constant(x.clone());
            let y = mlp.forward(g, s, xv)?;
            weighted_sum(g, y, 2)
        }),
    ));

    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut ParamBuilder::new(&mut store, 3), "lstm", 4, 5).unwrap();
    let h0 = random_matrix(&mut r, 3, 5, 1.0);
    let c0 = random_matrix(&mut r, 3, 5, 1.0);
    out.push((
        "lstm (3 steps)".into(),
        fd(&store, |s, g| {
            let xv = g.constant(x.clone());
            let mut st = LstmState { h: g.constant(h0.clone()), c: g.constant(c0.clone()) };
            for _ in 0..3 {
                st = lstm.step(g, s, xv, st)?;
            }
            let both = g.concat(&[st.h, st.c], 1)?;
            weighted_sum(g, both, 3)
        }),
    ));

    let mut store = ParamStore::new();
    let mut pb = ParamBuilder::new(&mut store, 4);
    let head = GaussianHead::new(&mut pb, "head", 4, 6, 2).unwrap();
    let hb = store.id("head.hidden.b").unwrap();
    *store.value_mut(hb) = random_matrix(&mut r, 1, 6, 0.5);
    out.push((
        "gaussian head".into(),
        fd(&store, |s, g| {
            let xv = g.constant(x.clone());
            let b = head.forward(g, s, xv)?;
            let both = g.concat(&[b.mean, b.var], 1)?;
            weighted_sum(g, both, 4)
        }),
    ));

    for kind in KINDS {
        let (attn, mut store) = attention(kind, 3, 4, 5);
        let keys = store.insert("keys", random_matrix(&mut r, 5, 3, 1.0)).unwrap();
        let values = store.insert("values", random_matrix(&mut r, 5, 4, 1.0)).unwrap();
        let queries = store.insert("queries", random_matrix(&mut r, 2, 3, 1.0)).unwrap();
        out.push((
            format!("attention {kind}"),
            fd(&store, |s, g| {
                let (k, v, q) = (g.param(s, keys), g.param(s, values), g.param(s, queries));
                let read = attn.attend(g, s, k, v, q)?;
                weighted_sum(g, read.read, 5)
            }),
        ));
    }

    let mut store = ParamStore::new();
    let ids: Vec<_> = ["mq", "vq", "mp", "vp", "y"]
        .iter()
        .map(|n| store.insert(*n, random_matrix(&mut r, 2, 3, 1.0)).unwrap())
        .collect();
    let belief = |g: &mut Graph, s: &ParamStore, m, v| -> npl_core::Result<GaussianBelief> {
        let raw = g.param(s, v);
        let var = g.softplus(raw)?;
        let var = g.offset(var, 0.1)?;
        Ok(GaussianBelief { mean: g.param(s, m), var })
    };
    out.push((
        "diagonal gaussian kl".into(),
        fd(&store, |s, g| {
            let q = belief(g, s, ids[0], ids[1])?;
            let p = belief(g, s, ids[2], ids[3])?;
            kl_diag_gaussian(g, q, p)
        }),
    ));
    out.push((
        "gaussian log-likelihood".into(),
        fd(&store, |s, g| {
            let b = belief(g, s, ids[0], ids[1])?;
            let y = g.param(s, ids[4]);
            gaussian_log_likelihood(g, y, b)
        }),
    ));

    for ablation in [Ablation::None, Ablation::NoTracking, Ablation::NoInteraction] {
        let mut store = ParamStore::new();
        let mut pb = ParamBuilder::new(&mut store, 6);
        let cfg = RmrConfig { slots: 2, key_dim: 2, y_dim: 1, hidden: 4, ablation };
        let rmr = Rmr::new(&mut pb, "rmr", cfg).unwrap();
        let (attn, astore) = attention(AttentionKind::DotProduct, 2, 4, 0);
        assert!(astore.is_empty());
        let pairs = random_matrix(&mut r, 3, 3, 1.0);
        let pvals = random_matrix(&mut r, 3, 4, 1.0);
        let queries = random_matrix(&mut r, 2, 2, 1.0);
        out.push((
            format!("memory step ({ablation})"),
            fd(&store, |s, g| {
                let p = g.constant(pairs.clone());
                let keys = g.slice(p, 1, 0, 2)?;
                let values = g.constant(pvals.clone());
                let real = RealPairs { pairs: p, keys, values };
                let mut mem = rmr.initial(g, s);
                mem = rmr.step(g, s, &attn, Some(&real), &mem)?;
                mem = rmr.step(g, s, &attn, None, &mem)?;
                let q = g.constant(queries.clone());
                let read = rmr.read(g, s, &attn, Some(&real), &mem, q)?;
                let all = g.concat(&[read.read, mem.values], 0)?;
                weighted_sum(g, all, 6)
            }),
        ));
    }
    out
}

/// Smallest instance on which every parameter tensor's gradient sits well
/// above the central-difference roundoff floor.
fn elbo_instance(seed: u64) -> (Model, ParamStore, TaskSequence) {
    let mut cfg = tiny_config(ModelKind::AsnpRmr, 1);
    cfg.attention = AttentionKind::DotProduct;
    let (model, store) = Model::new(cfg, seed).unwrap();
    let spec = RegimeSpec::desk(RegimeName::TransferPrediction, TaskDim::One).with_len(2).unwrap();
    let mut seq = generate_sequence(seed + 50, &spec, &[]).unwrap();
    for step in &mut seq.steps {
        step.context = step.context.permuted(&(0..step.context.len().min(2)).collect::<Vec<_>>());
        step.targets = step.targets.permuted(&(0..step.targets.len().min(2)).collect::<Vec<_>>());
    }
    (model, store, seq)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut checks = layer_checks();
    for seed in 0..3 {
        let (model, store, seq) = elbo_instance(seed);
        let report = finite_difference_report(&store, FD_EPS, |s, g| {
            Ok(model.sequence_elbo(g, s, &seq, &mut Noise::seeded(seed + 9))?.loss)
        })
        .unwrap();
        checks.push((format!("asnp_rmr elbo seed {seed} ({})", report.param), report.max_rel_error));
    }
    let secs = start.elapsed().as_secs_f64();
    let (name, worst) = checks.iter().fold((String::new(), 0.0), |acc, (n, e)| if *e > acc.1 { (n.clone(), *e) } else { acc });
    let failing: Vec<&String> = checks.iter().filter(|(_, e)| *e >= FD_TOL).map(|(n, _)| n).collect();
    outcome(
        failing.is_empty() && secs < 120.0,
        format!("{} checks, worst rel err {worst:.2e} ({name}) < {FD_TOL:e}, failing {failing:?}, {secs:.1}s < 120s", checks.len()),
    )
}

// ---------------------------------------------------------------------------
// 2. Attention

fn criterion_2() -> Outcome {
    let mut r = rng(2);
    let (mut sum_dev, mut perm_dev, mut single_dev, mut negative) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for i in 0..1000 {
        let kind = KINDS[i % 3];
        let (dk, dv) = (r.random_range(1..4), r.random_range(1..5));
        let (attn, store) = attention(kind, dk, dv, i as u64);
        let n = r.random_range(1..16);
        let q = r.random_range(1..8);
        let keys = random_matrix(&mut r, n, dk, 2.0);
        let values = random_matrix(&mut r, n, dv, 2.0);
        let queries = random_matrix(&mut r, q, dk, 2.0);
        let order = shuffled(&mut r, n);
        let mut g = Graph::new();
        let (kv, vv, qv) = (g.constant(keys.clone()), g.constant(values.clone()), g.constant(queries));
        let a = attn.attend(&mut g, &store, kv, vv, qv).unwrap();
        let w = g.value(a.weights);
        for row in 0..q {
            negative += w.row_slice(row).iter().filter(|&&x| x < 0.0).count();
            sum_dev = sum_dev.max((w.row_slice(row).iter().sum::<f64>() - 1.0).abs());
        }
        let (kp, vp) = (g.constant(permute_rows(&keys, &order)), g.constant(permute_rows(&values, &order)));
        let b = attn.attend(&mut g, &store, kp, vp, qv).unwrap();
        perm_dev = perm_dev.max(max_abs_diff(g.value(a.read), g.value(b.read)));

        let k1 = g.slice(kv, 0, 0, 1).unwrap();
        let v1 = g.slice(vv, 0, 0, 1).unwrap();
        let single = attn.attend(&mut g, &store, k1, v1, qv).unwrap();
        let one = Array::row(values.row_slice(0).to_vec());
        let expected = match &attn.proj {
            None => one,
            Some(p) => one.matmul(store.value(p.wv)).matmul(store.value(p.wo)),
        };
        for row in 0..q {
            for (x, y) in g.value(single.read).row_slice(row).iter().zip(expected.data()) {
                single_dev = single_dev.max((x - y).abs());
            }
        }
    }
    outcome(
        negative == 0 && sum_dev < 1e-9 && perm_dev < INVARIANCE_TOL && single_dev < 1e-9,
        format!(
            "1000 instances: negative weights {negative}, max |sum-1| {sum_dev:.1e}, permutation dev {perm_dev:.1e}, single-pair dev {single_dev:.1e} (tol 1e-9)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Permutation invariance

fn random_sequence(r: &mut impl Rng, len: usize) -> TaskSequence {
    let steps = (1..=len)
        .map(|t| {
            let n = r.random_range(0..12);
            let m = r.random_range(1..6);
            let set = |r: &mut dyn rand::RngCore, k: usize| {
                let xs: Vec<Vec<f64>> = (0..k).map(|_| vec![r.random_range(-2.0..2.0)]).collect();
                let ys: Vec<Vec<f64>> = (0..k).map(|_| vec![r.random_range(-2.0..2.0)]).collect();
                ContextSet::from_rows(1, 1, &xs, &ys).unwrap()
            };
            TaskStep { t, context: set(r, n), targets: set(r, m) }
        })
        .collect();
    TaskSequence { seed: 0, regime: "random".into(), steps, meta: serde_json::Value::Null }
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let (rmr_model, rmr_store) = Model::new(tiny_config(ModelKind::AsnpRmr, 1), 1).unwrap();
    let rmr = rmr_model.rmr.as_ref().unwrap();
    let np = Model::new(tiny_config(ModelKind::Np, 1), 2).unwrap();
    let snp = Model::new(tiny_config(ModelKind::Snp, 1), 3).unwrap();
    let (mut enc_dev, mut ctx_dev, mut dec_dev) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..1000 {
        let n = r.random_range(1..24);
        let x = random_matrix(&mut r, n, rmr_model.cfg.x_width(), 2.0);
        let y = random_matrix(&mut r, n, 1, 2.0);
        let order = shuffled(&mut r, n);
        let mut g = Graph::new();
        let a = PairVars::new(&mut g, &x, &y).unwrap();
        let b = PairVars::new(&mut g, &permute_rows(&x, &order), &permute_rows(&y, &order)).unwrap();
        let la = rmr_model.latent_encoder_belief(&mut g, &rmr_store, Some(a.pairs)).unwrap();
        let lb = rmr_model.latent_encoder_belief(&mut g, &rmr_store, Some(b.pairs)).unwrap();
        enc_dev = enc_dev.max(max_abs_diff(g.value(la.mean), g.value(lb.mean)));
        enc_dev = enc_dev.max(max_abs_diff(g.value(la.var), g.value(lb.var)));
        let ra = rmr.encode_context(&mut g, &rmr_store, Some(a.pairs)).unwrap();
        let rb = rmr.encode_context(&mut g, &rmr_store, Some(b.pairs)).unwrap();
        ctx_dev = ctx_dev.max(max_abs_diff(g.value(ra), g.value(rb)));

        let seq = random_sequence(&mut r, 3);
        let mut perm = seq.clone();
        for s in &mut perm.steps {
            let o = shuffled(&mut r, s.context.len());
            s.context = s.context.permuted(&o);
        }
        let (model, store) = if i % 2 == 0 { &np } else { &snp };
        let pa = model.target_nll(store, &seq, 1, i as u64).unwrap();
        let pb = model.target_nll(store, &perm, 1, i as u64).unwrap();
        for (u, v) in pa.iter().zip(&pb) {
            dec_dev = dec_dev.max((u - v).abs());
        }
    }
    outcome(
        enc_dev < INVARIANCE_TOL && ctx_dev < INVARIANCE_TOL && dec_dev < INVARIANCE_TOL,
        format!("1000 instances: latent_encoder {enc_dev:.1e}, encode_context {ctx_dev:.1e}, np/snp decode {dec_dev:.1e} (tol 1e-9)"),
    )
}

// ---------------------------------------------------------------------------
// 4. KL

fn criterion_4() -> Outcome {
    let mut min_kl = f64::INFINITY;
    for kind in ModelKind::ALL {
        for regime in [RegimeName::SparseContext, RegimeName::TransferPrediction] {
            let mut cfg = TrainConfig::desk(kind, regime, TaskDim::One);
            cfg.steps = 100;
            cfg.batch_size = TRAIN_BATCH;
            cfg.lr = TRAIN_LR;
            cfg.eval_every = cfg.steps;
            cfg.eval_sequences = 1;
            min_kl = min_kl.min(train(&cfg).unwrap().min_step_kl);
        }
    }

    let mut r = rng(4);
    let normal = StandardNormal;
    let (mut zero_dev, mut mc_dev) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let d = 4;
        let mq = random_matrix(&mut r, 1, d, 1.0);
        let mp = random_matrix(&mut r, 1, d, 1.0);
        let vq = random_matrix(&mut r, 1, d, 1.0).map(|v| 0.3 + v.abs());
        let vp = random_matrix(&mut r, 1, d, 1.0).map(|v| 0.3 + v.abs());
        let mut g = Graph::new();
        let q = GaussianBelief { mean: g.constant(mq.clone()), var: g.constant(vq.clone()) };
        let p = GaussianBelief { mean: g.constant(mp.clone()), var: g.constant(vp.clone()) };
        let same = kl_diag_gaussian(&mut g, q, q).unwrap();
        zero_dev = zero_dev.max(g.value(same).item().abs());
        let kl = kl_diag_gaussian(&mut g, q, p).unwrap();
        let closed = g.value(kl).item();

        let samples = 1_000_000;
        let log_density = |z: f64, m: f64, v: f64| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (z - m).powi(2) / v);
        let mut total = 0.0;
        for _ in 0..samples {
            for j in 0..d {
                let (m1, v1) = (mq.data()[j], vq.data()[j]);
                let e: f64 = normal.sample(&mut r);
                let z = m1 + v1.sqrt() * e;
                total += log_density(z, m1, v1) - log_density(z, mp.data()[j], vp.data()[j]);
            }
        }
        let mc = total / samples as f64;
        mc_dev = mc_dev.max((mc - closed).abs() / closed);
    }
    outcome(
        min_kl >= 0.0 && zero_dev < 1e-12 && mc_dev < 0.01,
        format!(
            "min per-step KL over all training batches {min_kl:.2e} >= 0, |KL(q||q)| {zero_dev:.1e} < 1e-12, Monte-Carlo rel dev {:.3}% < 1% on 20 pairs",
            mc_dev * 100.0
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Regimes

struct Expect {
    label: &'static str,
    spec: RegimeSpec,
    len: usize,
    nonempty: usize,
    first: bool,
    n: (usize, usize),
    m_total: usize,
}

fn criterion_5() -> Outcome {
    use RegimeName::*;
    use TaskDim::*;
    let cases = [
        Expect { label: "1d sparse", spec: RegimeSpec::full(SparseContext, One), len: 50, nonempty: 45, first: false, n: (1, 1), m_total: 11 },
        Expect { label: "1d transfer", spec: RegimeSpec::full(TransferPrediction, One), len: 20, nonempty: 10, first: true, n: (5, 50), m_total: 51 },
        Expect { label: "2d sparse", spec: RegimeSpec::full(SparseContext, Two), len: 50, nonempty: 45, first: false, n: (30, 30), m_total: 51 },
        Expect { label: "2d transfer", spec: RegimeSpec::full(TransferPrediction, Two), len: 20, nonempty: 10, first: true, n: (5, 500), m_total: 501 },
        Expect { label: "desk 1d sparse", spec: RegimeSpec::desk(SparseContext, One), len: 10, nonempty: 9, first: false, n: (1, 1), m_total: 11 },
        Expect { label: "desk 1d transfer", spec: RegimeSpec::desk(TransferPrediction, One), len: 10, nonempty: 5, first: true, n: (5, 50), m_total: 51 },
    ];
    let sprites = bundled_sprites();
    let mut violations = Vec::new();
    for c in &cases {
        let mut bad = 0;
        for seed in 0..1000 {
            let seq = generate_sequence(seed, &c.spec, &sprites).unwrap();
            let mut ok = seq.len() == c.len;
            let nonempty: Vec<bool> = seq.steps.iter().map(|s| !s.context.is_empty()).collect();
            ok &= nonempty.iter().filter(|&&b| b).count() == c.nonempty;
            if c.first {
                ok &= nonempty.iter().take(c.nonempty).all(|&b| b);
            }
            for s in &seq.steps {
                let n = s.context.len();
                let m = s.targets.len();
                if n > 0 {
                    ok &= (c.n.0..=c.n.1).contains(&n);
                }
                ok &= m >= 1 && m <= c.m_total - n;
            }
            if !ok {
                bad += 1;
            }
        }
        if bad > 0 {
            violations.push(format!("{}: {bad}", c.label));
        }
    }
    let sparse_ctx = matches!(cases[0].spec.context_steps, ContextSteps::Random(45));
    outcome(
        violations.is_empty() && sparse_ctx,
        format!("{} regimes x 1000 seeds, violating sequences: {violations:?}", cases.len()),
    )
}

// ---------------------------------------------------------------------------
// 6. Sprites

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let (mut steps, mut out_of_bounds, mut speed_changes, mut bounces) = (0usize, 0usize, 0usize, 0usize);
    while steps < 100_000 {
        let mut s = SpriteState::random(&mut r, CANVAS, SPRITE).unwrap();
        let speed = [s.vel[0].abs(), s.vel[1].abs()];
        assert!((speed[0].hypot(speed[1]) - SPEED).abs() < 1e-12);
        for _ in 0..1000 {
            let next = step_sprite(&s, &mut r);
            for a in 0..2 {
                if !(0.0..=next.bound).contains(&next.pos[a]) || next.pos[a].round() as usize + SPRITE > CANVAS {
                    out_of_bounds += 1;
                }
                if next.vel[a].abs() != speed[a] {
                    speed_changes += 1;
                }
                if next.vel[a] != s.vel[a] {
                    bounces += 1;
                }
            }
            s = next;
            steps += 1;
        }
    }
    outcome(
        out_of_bounds == 0 && speed_changes == 0 && bounces > 0,
        format!("{steps} steps, {bounces} bounces: out-of-bounds {out_of_bounds}, per-axis speed changes {speed_changes}"),
    )
}

// ---------------------------------------------------------------------------
// 7. GP

fn criterion_7() -> Outcome {
    let mut r = rng(7);
    let p = GpParams { l: 0.9, sigma: 1.3, dl: 0.0, dsigma: 0.0 };
    let xs = [-0.4, 0.0, 0.35];
    let draws = 10_000;
    let mut sums = [0.0; 3];
    let mut prods = [[0.0; 3]; 3];
    for _ in 0..draws {
        let (ys, _) = sample_gp_function(&mut r, &xs, &p).unwrap();
        for i in 0..3 {
            sums[i] += ys[i];
            for j in 0..3 {
                prods[i][j] += ys[i] * ys[j];
            }
        }
    }
    let n = draws as f64;
    let mut cov_dev = 0.0f64;
    for i in 0..3 {
        for j in i..3 {
            let emp = (prods[i][j] - sums[i] * sums[j] / n) / (n - 1.0);
            cov_dev = cov_dev.max((emp - gp_kernel(xs[i], xs[j], &p)).abs() / gp_kernel(xs[i], xs[j], &p));
        }
    }

    let mut oracle_dev = 0.0f64;
    for _ in 0..200 {
        let p = GpParams { l: r.random_range(0.3..2.0), sigma: r.random_range(0.5..2.5), dl: 0.0, dsigma: 0.0 };
        let x: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
        // Two context points, one target: condition the trivariate normal by hand.
        let k = kernel_matrix(&x, &x, &p);
        let noise = npl_core::taskgen::gp::JITTER;
        let kcc = Matrix2::new(k[(0, 0)] + noise, k[(0, 1)], k[(1, 0)], k[(1, 1)] + noise);
        let det = kcc[(0, 0)] * kcc[(1, 1)] - kcc[(0, 1)] * kcc[(1, 0)];
        let inv = Matrix2::new(kcc[(1, 1)], -kcc[(0, 1)], -kcc[(1, 0)], kcc[(0, 0)]) / det;
        let kct = Vector2::new(k[(0, 2)], k[(1, 2)]);
        let mean = (kct.transpose() * inv * Vector2::new(y[0], y[1]))[0];
        let var = k[(2, 2)] + noise - (kct.transpose() * inv * kct)[0];
        let brute = 0.5 * (2.0 * std::f64::consts::PI * var).ln() + (y[2] - mean).powi(2) / (2.0 * var);

        let step = TaskStep {
            t: 1,
            context: ContextSet::from_rows(1, 1, &[vec![x[0]], vec![x[1]]], &[vec![y[0]], vec![y[1]]]).unwrap(),
            targets: ContextSet::from_rows(1, 1, &[vec![x[2]]], &[vec![y[2]]]).unwrap(),
        };
        let seq = TaskSequence { seed: 0, regime: "oracle".into(), steps: vec![step], meta: serde_json::Value::Null };
        let got = gp_oracle_nll(&seq, &[p]).unwrap()[0];
        // Near-coincident inputs give NLLs of order 1e6, so compare relative to scale.
        oracle_dev = oracle_dev.max((got - brute).abs() / brute.abs().max(1.0));
    }
    outcome(
        cov_dev < 0.05 && oracle_dev < 1e-8,
        format!("covariance max rel dev {:.2}% < 5% over 10^4 draws; oracle vs brute force scaled dev {oracle_dev:.1e} < 1e-8 on 200 instances", cov_dev * 100.0),
    )
}

// ---------------------------------------------------------------------------
// 8-10. Comparative training runs

fn comparative_config(kind: ModelKind, ablation: Ablation, regime: RegimeName, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk(kind, regime, TaskDim::One);
    cfg.model.ablation = ablation;
    cfg.steps = TRAIN_STEPS;
    cfg.batch_size = TRAIN_BATCH;
    cfg.lr = TRAIN_LR;
    cfg.seed = seed;
    cfg.eval_every = TRAIN_STEPS;
    cfg.eval_sequences = 1;
    cfg
}

fn held_out(regime: RegimeName) -> Vec<TaskSequence> {
    generate_dataset(&RegimeSpec::desk(regime, TaskDim::One), HELD_OUT, HELD_OUT_SEED, &[]).unwrap()
}

fn train_and_score(cfg: &TrainConfig, data: &[TaskSequence]) -> EvalReport {
    let start = Instant::now();
    let report = train(cfg).unwrap();
    let eval = evaluate_model(&report.model, &report.store, data, EVAL_SAMPLES, 0, ExecMode::Parallel).unwrap();
    line(&format!(
        "    {} {} seed {}: mean nll {:.4}, tail nll {:.4} ({:.0}s)",
        cfg.model.kind,
        cfg.model.ablation,
        cfg.seed,
        eval.overall_mean(),
        eval.mean_over(6, 10),
        start.elapsed().as_secs_f64()
    ));
    eval
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_8() -> Outcome {
    let data = held_out(RegimeName::SparseContext);
    let (mut base, mut snp, mut rmr) = (Vec::new(), Vec::new(), Vec::new());
    for seed in SEEDS {
        let cfg = comparative_config(ModelKind::Snp, Ablation::None, RegimeName::SparseContext, seed);
        let (model, store) = Model::new(cfg.model.clone(), seed).unwrap();
        base.push(evaluate_model(&model, &store, &data, EVAL_SAMPLES, 0, ExecMode::Parallel).unwrap().overall_mean());
        snp.push(train_and_score(&cfg, &data).overall_mean());
        let cfg = comparative_config(ModelKind::AsnpRmr, Ablation::None, RegimeName::SparseContext, seed);
        rmr.push(train_and_score(&cfg, &data).overall_mean());
    }
    let (b, s, r) = (mean(&base), mean(&snp), mean(&rmr));
    let drop = (b - s) / b.abs();
    outcome(
        r < s && drop >= 0.30,
        format!("held-out mean nll over 3 seeds: asnp_rmr {r:.4} vs snp {s:.4} (need strictly lower); snp {:.1}% below untrained {b:.4} (need >= 30%)", drop * 100.0),
    )
}

struct TransferRuns {
    rmr: Vec<f64>,
    window: Vec<f64>,
    no_tracking: Vec<f64>,
    no_interaction: Vec<f64>,
}

fn transfer_runs() -> &'static TransferRuns {
    static RUNS: OnceLock<TransferRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let data = held_out(RegimeName::TransferPrediction);
        let tail = |kind, ablation, seed| {
            let cfg = comparative_config(kind, ablation, RegimeName::TransferPrediction, seed);
            train_and_score(&cfg, &data).mean_over(6, 10)
        };
        let mut runs = TransferRuns { rmr: vec![], window: vec![], no_tracking: vec![], no_interaction: vec![] };
        for seed in SEEDS {
            runs.rmr.push(tail(ModelKind::AsnpRmr, Ablation::None, seed));
            runs.window.push(tail(ModelKind::AsnpW, Ablation::None, seed));
            runs.no_tracking.push(tail(ModelKind::AsnpRmr, Ablation::NoTracking, seed));
            runs.no_interaction.push(tail(ModelKind::AsnpRmr, Ablation::NoInteraction, seed));
        }
        runs
    })
}

fn criterion_9() -> Outcome {
    let runs = transfer_runs();
    let (r, w) = (mean(&runs.rmr), mean(&runs.window));
    outcome(r <= w, format!("empty-context tail (steps 6-10) mean nll over 3 seeds: asnp_rmr {r:.4} vs asnp_w {w:.4} (need <=)"))
}

fn criterion_10() -> Outcome {
    let runs = transfer_runs();
    let (r, t, i) = (mean(&runs.rmr), mean(&runs.no_tracking), mean(&runs.no_interaction));
    outcome(
        r <= t && r <= i,
        format!("tail mean nll over 3 seeds: full {r:.4} vs no_tracking {t:.4} and no_interaction {i:.4} (need <= both)"),
    )
}

// ---------------------------------------------------------------------------
// 11. Determinism

fn criterion_11() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let run = |name: &str, exec: ExecMode| {
        let mut cfg = TrainConfig::desk(ModelKind::AsnpRmr, RegimeName::SparseContext, TaskDim::One);
        cfg.steps = 30;
        cfg.batch_size = TRAIN_BATCH;
        cfg.eval_every = 10;
        cfg.eval_sequences = 4;
        cfg.seed = 11;
        cfg.record_wall_clock = false;
        cfg.exec = exec;
        cfg.metrics = Some(dir.path().join(format!("{name}.csv")));
        cfg.checkpoint = Some(dir.path().join(format!("{name}.ckpt")));
        let report = train(&cfg).unwrap();
        (std::fs::read(cfg.metrics.unwrap()).unwrap(), report)
    };
    let (ma, ra) = run("a", ExecMode::Parallel);
    let (mb, _) = run("b", ExecMode::Sequential);
    let metrics_same = ma == mb;

    let data = held_out(RegimeName::SparseContext);
    let before = evaluate_model(&ra.model, &ra.store, &data[..20], 3, 5, ExecMode::Parallel).unwrap();
    let bytes = std::fs::read(dir.path().join("a.ckpt")).unwrap();
    let (model, store) = parse_checkpoint(&bytes).unwrap();
    let after = evaluate_model(&model, &store, &data[..20], 3, 5, ExecMode::Sequential).unwrap();
    let again = checkpoint_bytes(&model.cfg, &store).unwrap();
    let curves_same = before.to_csv() == after.to_csv();
    outcome(
        metrics_same && curves_same && again == bytes,
        format!("metrics files identical: {metrics_same}; checkpoint save/load/eval curves identical: {curves_same}; re-serialized checkpoint identical: {}", again == bytes),
    )
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "gradient correctness", criterion_1),
        (2, "attention properties", criterion_2),
        (3, "permutation invariance", criterion_3),
        (4, "kl normalization", criterion_4),
        (5, "regime contracts", criterion_5),
        (6, "sprite dynamics", criterion_6),
        (7, "gp calibration", criterion_7),
        (8, "sparse-context trend", criterion_8),
        (9, "obsolete-context trend", criterion_9),
        (10, "ablation ordering", criterion_10),
        (11, "determinism and round-trip", criterion_11),
    ];
    let only: Option<Vec<usize>> = std::env::var("NPL_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        line(&format!("criterion {n:>2} {} {name}: {detail} [{secs:.1}s]", if pass { "PASS" } else { "FAIL" }));
        if !pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        line("acceptance: all selected criteria passed");
    } else {
        line(&format!("acceptance: failed criteria {failed:?}"));
        std::process::exit(1);
    }
}
