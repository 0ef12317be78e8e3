//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 1-5 and 10 are computed here and fail the test when they fail.
//! Criteria 6-9 need hours of training; they are read from the run directory
//! produced by `scripts/acceptance_runs.sh` (`GAMEIRL_ACCEPTANCE_RUNS`,
//! default `<workspace>/runs/acceptance`) and are reported without failing
//! the test, since their outcome is an experimental result.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use gameirl::autoenc::{mixture_nll, mixture_nll_grad, MixtureParams};
use gameirl::envs::{Catcher, CatcherConfig};
use gameirl::eval::{read_irl_history, EvalReport, ReconstructionReport};
use gameirl::irl::*;
use gameirl::nets::PolicyNet;
use gameirl::pipeline::{cmd_pipeline, ExpertOutcome, RunConfig, STRICT_ENV};
use gameirl::rl::{gae, ConstantReward, Rollout, RolloutCollector};
use gameirl_nn::gradcheck;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances and budgets, as stated by the criteria.
const C1_LOGIT_TOL: f64 = 1e-6;
const C1_PAIRS: usize = 100_000;
const C1_TIME: Duration = Duration::from_secs(1);
const C2_K1_TOL: f64 = 1e-9;
const C2_K2_PRINTED: f64 = 1.13812;
const C2_K2_TOL: f64 = 1e-4;
const C2_QUAD_TOL: f64 = 1e-4;
const C2_GRAD_TOL: f64 = 1e-4;
const C2_TIME: Duration = Duration::from_secs(30);
const C3_MEAN_TOL: f64 = 1e-6;
const C3_STD_TOL: f64 = 1e-4;
const C3_AFFINE_TOL: f64 = 1e-6;
const C3_TIME: Duration = Duration::from_secs(1);
const C4_TOL: f64 = 1e-5;
const C4_ROLLOUTS: usize = 100;
const C4_MAX_T: usize = 64;
const C4_TIME: Duration = Duration::from_secs(5);
const C5_TIME: Duration = Duration::from_secs(5);
const C6_FRAC: f64 = 0.8;
const C6_STEPS: usize = 1_000_000;
const C7_FRAC: f64 = 0.6;
const C7_ROUNDS: usize = 300;
const C8_SWEEP_K: [usize; 5] = [1, 2, 4, 8, 16];
const C8_INVERSIONS: usize = 1;
const C9_MSE_RATIO: f64 = 1.5;
const C9_FRAMES: usize = 5000;
const SEEDS: [u64; 3] = [0, 1, 2];
const MAJORITY: usize = 2;

struct Line {
    id: usize,
    pass: bool,
    hard: bool,
    detail: String,
}

fn timed<F: FnOnce() -> (bool, String)>(limit: Duration, f: F) -> (bool, String) {
    let t = Instant::now();
    let (ok, detail) = f();
    let dt = t.elapsed();
    (ok && dt <= limit, format!("{detail}; {:.2}s (limit {}s)", dt.as_secs_f64(), limit.as_secs()))
}

fn c1() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..C1_PAIRS {
        let f = rng.random_range(-10.0..10.0);
        let lp = rng.random_range(-10.0..0.0);
        let d = discriminator_output(f, lp);
        worst = worst.max(((d / (1.0 - d)).ln() - (f - lp)).abs());
    }
    let half = discriminator_output(0.0, 0.0);
    (worst <= C1_LOGIT_TOL && half == 0.5, format!("max |logit(D) - (f - log pi)| = {worst:.2e}, D(0,0) = {half}"))
}

/// Returns the overall status by the printed constant and, separately,
/// whether every check against independent oracles held.
fn c2() -> (bool, bool, String) {
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let k1 = mixture_nll(&[0.0], &MixtureParams { mu: vec![0.37], sigma: vec![1.0] }, &[0.37]).unwrap();
    let k1_err = (k1 - half_ln_2pi).abs();

    let k2 = mixture_nll(&[0.0, 0.0], &MixtureParams { mu: vec![0.0, 1.0], sigma: vec![1.0, 1.0] }, &[0.0]).unwrap();
    let phi = |d: f64| (-0.5 * d * d).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let k2_formula = -(0.5 * phi(0.0) + 0.5 * phi(1.0)).ln();
    let k2_printed_err = (k2 - C2_K2_PRINTED).abs();
    let k2_formula_err = (k2 - k2_formula).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut quad_worst = 0.0f64;
    for _ in 0..4 {
        let k = rng.random_range(1..=8);
        let mix = MixtureParams {
            mu: (0..k).map(|_| rng.random_range(-0.5..1.5)).collect(),
            sigma: (0..k).map(|_| rng.random_range(0.05..1.0)).collect(),
        };
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (lo, hi, n) = (-8.0, 9.0, 340_000usize);
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..=n)
            .map(|i| {
                let d = (-mixture_nll(&z, &mix, &[lo + i as f64 * h]).unwrap()).exp();
                if i == 0 || i == n {
                    0.5 * d
                } else {
                    d
                }
            })
            .sum();
        quad_worst = quad_worst.max((total * h - 1.0).abs());
    }

    let mut grad_worst = 0.0f64;
    for _ in 0..50 {
        let k = 3;
        let mix = MixtureParams {
            mu: (0..k).map(|_| rng.random_range(-0.5..1.5)).collect(),
            sigma: (0..k).map(|_| rng.random_range(0.05..1.0)).collect(),
        };
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
        let z: Vec<f64> = (0..4 * k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = mixture_nll_grad(&z, &mix, &x).unwrap();
        let ez = gradcheck::check_vector(&z, &g.dz, 1e-4, 1e-6, |z| mixture_nll(z, &mix, &x).unwrap());
        let em = gradcheck::check_vector(&mix.mu, &g.dmu, 1e-4, 1e-6, |mu| {
            mixture_nll(&z, &MixtureParams { mu: mu.to_vec(), sigma: mix.sigma.clone() }, &x).unwrap()
        });
        let es = gradcheck::check_vector(&mix.sigma, &g.dsigma, 1e-4, 1e-6, |s| {
            mixture_nll(&z, &MixtureParams { mu: mix.mu.clone(), sigma: s.to_vec() }, &x).unwrap()
        });
        grad_worst = grad_worst.max(ez).max(em).max(es);
    }

    let oracle_ok =
        k1_err <= C2_K1_TOL && k2_formula_err <= C2_K2_TOL && quad_worst <= C2_QUAD_TOL && grad_worst <= C2_GRAD_TOL;
    let printed_ok = oracle_ok && k2_printed_err <= C2_K2_TOL;
    let detail = format!(
        "K=1 err {k1_err:.1e}; K=2 = {k2:.7} (printed {C2_K2_PRINTED}: err {k2_printed_err:.2e}; \
         formula {k2_formula:.7}: err {k2_formula_err:.1e}); quadrature err {quad_worst:.1e}; grad rel err {grad_worst:.1e}"
    );
    (printed_ok, oracle_ok, detail)
}

fn c3() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut mean_worst, mut std_worst, mut affine_worst, mut rank_ok) = (0.0f64, 0.0f64, 0.0f64, true);
    for _ in 0..100 {
        let n = rng.random_range(2..512);
        let scale = rng.random_range(0.1..50.0);
        let shift = rng.random_range(-100.0..100.0);
        let f: Vec<f64> = (0..n).map(|_| shift + scale * rng.random_range(-1.0..1.0)).collect();
        let s = NormStats::from_values(&f);
        let z: Vec<f64> = f.iter().map(|&v| s.apply(v)).collect();
        let m = z.iter().sum::<f64>() / n as f64;
        let sd = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        mean_worst = mean_worst.max(m.abs());
        std_worst = std_worst.max((sd - 1.0).abs());
        rank_ok &= spearman(&f, &z) == 1.0;
        let g: Vec<f64> = f.iter().map(|v| 2.0 * v + 3.0).collect();
        let sg = NormStats::from_values(&g);
        for (a, b) in f.iter().zip(&g) {
            affine_worst = affine_worst.max((s.apply(*a) - sg.apply(*b)).abs());
        }
    }
    (
        mean_worst <= C3_MEAN_TOL && std_worst <= C3_STD_TOL && rank_ok && affine_worst <= C3_AFFINE_TOL,
        format!("|mean| {mean_worst:.1e}, |std-1| {std_worst:.1e}, rank corr 1: {rank_ok}, affine err {affine_worst:.1e}"),
    )
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        for &t in &idx[i..=j] {
            r[t] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

/// Pearson correlation of ranks.
fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// `A_t = Σ_l (γλ)^l δ_{t+l}`, cut after the first terminal step.
fn brute_gae(r: &[f64], v: &[f64], d: &[bool], boot: f64, gamma: f64, lam: f64) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|t| {
            let (mut acc, mut w) = (0.0, 1.0);
            for u in t..n {
                let next = if u + 1 < n { v[u + 1] } else { boot };
                let live = if d[u] { 0.0 } else { 1.0 };
                acc += w * (r[u] + gamma * next * live - v[u]);
                if d[u] {
                    break;
                }
                w *= gamma * lam;
            }
            acc
        })
        .collect()
}

fn c4() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut lam_worst = 0.0f64;
    for _ in 0..C4_ROLLOUTS {
        let t = rng.random_range(1..=C4_MAX_T);
        let r: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d: Vec<bool> = (0..t).map(|_| rng.random_bool(0.1)).collect();
        let boot = rng.random_range(-2.0..2.0);
        let gamma = rng.random_range(0.8..=1.0);
        let lam = rng.random_range(0.0..=1.0);
        let (adv, _) = gae(&r, &v, &d, boot, gamma, lam);
        let want = brute_gae(&r, &v, &d, boot, gamma, lam);
        worst = adv.iter().zip(&want).fold(worst, |w, (a, b)| w.max((a - b).abs()));

        // λ = 0: one-step TD residual. λ = 1: discounted return minus value.
        let (a0, _) = gae(&r, &v, &d, boot, gamma, 0.0);
        let (a1, _) = gae(&r, &v, &d, boot, gamma, 1.0);
        let mut g = boot;
        for i in (0..t).rev() {
            let next = if i + 1 < t { v[i + 1] } else { boot };
            let live = if d[i] { 0.0 } else { 1.0 };
            g = r[i] + gamma * g * live;
            lam_worst = lam_worst.max((a0[i] - (r[i] + gamma * next * live - v[i])).abs());
            lam_worst = lam_worst.max((a1[i] - (g - v[i])).abs());
        }
    }
    (worst <= C4_TOL && lam_worst <= C4_TOL, format!("max |recursive - brute force| {worst:.1e}; lambda identities {lam_worst:.1e}"))
}

fn c5() -> (bool, String) {
    let net = PolicyNet::new(4);
    let p = net.init::<f32>(5).unwrap();
    let mut collector = RolloutCollector::new(Catcher::new(CatcherConfig::default()), 5);
    let pool: Vec<Rollout> =
        (0..12).map(|_| collector.collect(&net, &p, 3, &mut ConstantReward(0.0)).unwrap()).collect();
    let demo = DemoSet::new(vec![Trajectory {
        observations: pool[0].observations.clone(),
        actions: pool[0].actions.clone(),
        rewards: None,
        seed: 0,
    }])
    .unwrap();

    let mut runner = TestRunner::new(Config { cases: 32, failure_persistence: None, ..Config::default() });
    let property = runner.run(&(1usize..6, 1usize..13, any::<u64>()), |(k, pushes, seed)| {
        let mut buf = ReplayBuffer::new(k).unwrap();
        for tag in 0..pushes {
            let mut r = pool[tag % pool.len()].clone();
            r.tag = tag;
            buf.push(r);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = build_disc_batch(&buf, &demo, (&net, &p), 12, &mut rng).unwrap();
        for o in &b.origins {
            if let Origin::Generator { tag, .. } = o {
                prop_assert!(*tag + k >= pushes, "tag {} after {} pushes with k = {}", tag, pushes, k);
            }
        }
        Ok(())
    });

    // k = 1 after many pushes samples exactly as a buffer holding only the
    // newest rollout does.
    let mut long = ReplayBuffer::new(1).unwrap();
    pool.iter().cloned().enumerate().for_each(|(i, mut r)| {
        r.tag = i;
        long.push(r)
    });
    let mut fresh = ReplayBuffer::new(1).unwrap();
    let mut last = pool[pool.len() - 1].clone();
    last.tag = pool.len() - 1;
    fresh.push(last);
    let a = build_disc_batch(&long, &demo, (&net, &p), 32, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let b = build_disc_batch(&fresh, &demo, (&net, &p), 32, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let baseline = a.origins == b.origins && a.log_probs == b.log_probs;
    let newest_only =
        a.origins.iter().all(|o| !matches!(o, Origin::Generator { tag, .. } if *tag != pool.len() - 1));

    (
        property.is_ok() && baseline && newest_only,
        format!(
            "no transition older than k rollouts: {}; k=1 matches newest-rollout sampling: {}",
            property.as_ref().map(|_| "held".to_string()).unwrap_or_else(|e| e.to_string()),
            baseline && newest_only
        ),
    )
}

fn collect_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c10() -> (bool, String) {
    std::env::set_var(STRICT_ENV, "1");
    let cli: Vec<(String, String)> = [
        ("episode_length", "90"),
        ("rollout_length", "64"),
        ("ppo_minibatch", "64"),
        ("expert_steps", "128"),
        ("expert_window", "1"),
        ("expert_eval_episodes", "1"),
        ("expert_threshold_frac", "-1"),
        ("demos", "2"),
        ("heldout_demos", "2"),
        ("random_frames", "64"),
        ("heldout_frames", "16"),
        ("ae_epochs", "1"),
        ("ae_classes", "3"),
        ("ae_embed_dim", "4"),
        ("rounds", "2"),
        ("checkpoint_every", "1"),
        ("samples_per_label", "16"),
        ("disc_minibatch", "16"),
        ("eval_episodes", "1"),
        ("recon_grid_frames", "2"),
        ("variant", "encoded"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let cfg = RunConfig::resolve(None, &cli).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_pipeline(&cfg, a.path(), false, true).unwrap();
    cmd_pipeline(&cfg, b.path(), false, true).unwrap();
    let (fa, fb) = (collect_files(a.path()), collect_files(b.path()));
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let n_ckpt = fa.keys().filter(|k| matches!(k.extension().and_then(|e| e.to_str()), Some("bin" | "csv"))).count();
    (
        differing.is_empty() && n_ckpt > 0,
        format!("{} files ({n_ckpt} checkpoints/CSVs) compared over two full pipeline runs; differing: {differing:?}", fa.len()),
    )
}

fn runs_dir() -> PathBuf {
    std::env::var_os("GAMEIRL_ACCEPTANCE_RUNS")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../runs/acceptance"))
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T, String> {
    let text = fs::read_to_string(p).map_err(|e| format!("missing {}: {e}", p.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))
}

fn c6(runs: &Path) -> Result<(bool, String), String> {
    let max = CatcherConfig::default().max_return() as f64;
    let mut passed = 0;
    let mut parts = Vec::new();
    for s in SEEDS {
        let o: ExpertOutcome = read_json(&runs.join(format!("expert_s{s}/expert.json")))?;
        let mean = o.eval.map_or(f64::NAN, |e| e.mean_return);
        let ok = o.reached && mean >= C6_FRAC * max && o.env_steps <= C6_STEPS;
        passed += usize::from(ok);
        parts.push(format!("s{s}: {mean:.2} at {} steps", o.env_steps));
    }
    Ok((passed >= MAJORITY, format!("{passed}/3 seeds reach {:.1}; {}", C6_FRAC * max, parts.join(", "))))
}

fn c7(runs: &Path) -> Result<(bool, String), String> {
    let expert: ExpertOutcome = read_json(&runs.join("expert_s0/expert.json"))?;
    let expert_mean = expert.eval.ok_or("expert_s0 has no gate evaluation")?.mean_return;
    let mut passed = 0;
    let mut parts = Vec::new();
    for s in SEEDS {
        let large: EvalReport = read_json(&runs.join(format!("irl_large_s{s}/eval.json")))?;
        let small: EvalReport = read_json(&runs.join(format!("irl_small_s{s}/eval.json")))?;
        let rounds = read_irl_history(&runs.join(format!("irl_large_s{s}/history.csv")))
            .map_err(|e| e.to_string())?
            .len();
        let ok = rounds >= C7_ROUNDS
            && large.mean_return >= C7_FRAC * expert_mean
            && large.mean_return > small.mean_return;
        passed += usize::from(ok);
        parts.push(format!("s{s}: large {:.2} small {:.2} ({rounds} rounds)", large.mean_return, small.mean_return));
    }
    Ok((
        passed >= MAJORITY,
        format!("{passed}/3 seeds; expert {expert_mean:.2}, target {:.2}; {}", C7_FRAC * expert_mean, parts.join(", ")),
    ))
}

fn c8(runs: &Path) -> Result<(bool, String), String> {
    let hist = |name: &str| read_irl_history(&runs.join(name).join("history.csv")).map_err(|e| e.to_string());
    let mut passed = 0;
    let mut parts = Vec::new();
    for s in SEEDS {
        let small = hist(&format!("irl_small_s{s}"))?;
        let large = hist(&format!("irl_large_s{s}"))?;
        let n = small.len().min(large.len());
        if n == 0 {
            return Err(format!("seed {s}: empty history"));
        }
        let (fs_, fl) = (small[n - 1].fpr_heldout, large[n - 1].fpr_heldout);
        passed += usize::from(fs_ > fl);
        parts.push(format!("s{s} round {}: small {fs_:.3} large {fl:.3}", n - 1));
    }
    let sweep: Vec<f64> = C8_SWEEP_K
        .iter()
        .map(|k| hist(&format!("sweep_k{k}")).map(|h| h.last().map_or(f64::NAN, |r| r.fpr_heldout)))
        .collect::<Result<_, _>>()?;
    let inversions = sweep.windows(2).filter(|w| !(w[1] < w[0])).count();
    let ok = passed >= MAJORITY && inversions <= C8_INVERSIONS;
    Ok((ok, format!("{passed}/3 seeds small > large; {}; sweep {sweep:.3?} ({inversions} inversions)", parts.join(", "))))
}

fn c9(runs: &Path) -> Result<(bool, String), String> {
    let r: ReconstructionReport = read_json(&runs.join("recon/reconstruction.json"))?;
    let (p, c) = (r.pixel_class, r.conventional);
    let ok = r.frames >= C9_FRAMES && p.corpus_mse <= C9_MSE_RATIO * c.corpus_mse && p.block_mae < c.block_mae;
    Ok((
        ok,
        format!(
            "{} frames; MSE pixel-class {:.5} vs conventional {:.5} (ratio {:.2}); block MAE {:.4} vs {:.4}",
            r.frames,
            p.corpus_mse,
            c.corpus_mse,
            p.corpus_mse / c.corpus_mse,
            p.block_mae,
            c.block_mae
        ),
    ))
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; a name filter
    // that does not match this suite skips it.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }

    let mut lines = Vec::new();
    let mut push = |id, hard, (pass, detail): (bool, String)| lines.push(Line { id, pass, hard, detail });
    push(1, true, timed(C1_TIME, c1));

    let t = Instant::now();
    let (printed_ok, oracle_ok, detail) = c2();
    let in_time = t.elapsed() <= C2_TIME;
    let detail = format!("{detail}; {:.2}s (limit {}s)", t.elapsed().as_secs_f64(), C2_TIME.as_secs());
    lines.push(Line { id: 2, pass: printed_ok && in_time, hard: false, detail: detail.clone() });
    lines.push(Line { id: 2, pass: oracle_ok && in_time, hard: true, detail: "independent oracles only (K=2 by formula)".into() });

    let mut push = |id, hard, (pass, detail): (bool, String)| lines.push(Line { id, pass, hard, detail });
    push(3, true, timed(C3_TIME, c3));
    push(4, true, timed(C4_TIME, c4));
    push(5, true, timed(C5_TIME, c5));

    let runs = runs_dir();
    type Heavy = fn(&Path) -> Result<(bool, String), String>;
    for (id, f) in [(6, c6 as Heavy), (7, c7), (8, c8), (9, c9)] {
        let r = f(&runs).unwrap_or_else(|e| (false, format!("no result: {e}")));
        push(id, false, r);
    }
    push(10, true, c10());

    lines.sort_by_key(|l| l.id);
    println!("acceptance (runs: {})", runs.display());
    for l in &lines {
        let tag = if l.hard { "" } else { " (reported)" };
        println!("criterion {:>2}{tag}: {} - {}", l.id, if l.pass { "PASS" } else { "FAIL" }, l.detail);
    }
    let failed: Vec<usize> = lines.iter().filter(|l| l.hard && !l.pass).map(|l| l.id).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
