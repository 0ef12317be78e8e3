use gameirl::envs::{Catcher, CatcherConfig, Environment, Observation, FRAME_H, FRAME_W};
use gameirl::nets::PolicyNet;
use gameirl::rl::*;
use gameirl_nn::gradcheck;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A_t = Σ_{l≥0} (γλ)^l δ_{t+l}, truncated at the first done (inclusive).
fn brute_force_gae(r: &[f64], v: &[f64], d: &[bool], boot: f64, gamma: f64, lam: f64) -> Vec<f64> {
    let n = r.len();
    let value_after = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            let mut w = 1.0;
            for u in t..n {
                let live = if d[u] { 0.0 } else { 1.0 };
                let delta = r[u] + gamma * value_after(u) * live - v[u];
                acc += w * delta;
                if d[u] {
                    break;
                }
                w *= gamma * lam;
            }
            acc
        })
        .collect()
}

fn random_rollout(rng: &mut ChaCha8Rng, t: usize, done_p: f64) -> (Vec<f64>, Vec<f64>, Vec<bool>, f64) {
    let r = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
    let d = (0..t).map(|_| rng.random_bool(done_p)).collect();
    (r, v, d, rng.random_range(-2.0..2.0))
}

#[test]
fn recursive_gae_matches_forward_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let t = rng.random_range(1..=64);
        let (r, v, d, boot) = random_rollout(&mut rng, t, 0.1);
        let gamma = rng.random_range(0.8..=1.0);
        let lam = rng.random_range(0.0..=1.0);
        let (adv, ret) = gae(&r, &v, &d, boot, gamma, lam);
        let want = brute_force_gae(&r, &v, &d, boot, gamma, lam);
        for i in 0..t {
            assert!((adv[i] - want[i]).abs() <= 1e-5, "t={i}: {} vs {}", adv[i], want[i]);
            assert_eq!(ret[i], adv[i] + v[i]);
        }
    }
}

#[test]
fn gae_lambda_zero_is_one_step_td() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (r, v, d, boot) = random_rollout(&mut rng, 40, 0.2);
    let (adv, _) = gae(&r, &v, &d, boot, 0.97, 0.0);
    for t in 0..40 {
        let next = if t + 1 < 40 { v[t + 1] } else { boot };
        let live = if d[t] { 0.0 } else { 1.0 };
        assert!((adv[t] - (r[t] + 0.97 * next * live - v[t])).abs() <= 1e-12);
    }
}

#[test]
fn gae_lambda_one_is_discounted_return_minus_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (r, v, _, boot) = random_rollout(&mut rng, 50, 0.0);
    let d = vec![false; 50];
    let gamma = 0.95;
    let (adv, _) = gae(&r, &v, &d, boot, gamma, 1.0);
    let mut g = boot;
    for t in (0..50).rev() {
        g = r[t] + gamma * g;
        assert!((adv[t] - (g - v[t])).abs() <= 1e-9);
    }
}

proptest! {
    #[test]
    fn normalised_advantages_have_unit_moments(xs in prop::collection::vec(-100.0f64..100.0, 2..300)) {
        let spread = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-3);
        let mut a = xs.clone();
        normalize_advantages(&mut a);
        let m = a.iter().sum::<f64>() / a.len() as f64;
        let s = (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
        prop_assert!(m.abs() <= 1e-6);
        prop_assert!((s - 1.0).abs() <= 1e-4);
    }

    #[test]
    fn clipped_surrogate_never_exceeds_unclipped(ratio in 0.0f64..3.0, adv in -5.0f64..5.0, clip in 0.01f64..0.5) {
        prop_assert!(clipped_surrogate(ratio, adv, clip) <= ratio * adv + 1e-12);
    }
}

fn small_batch<T: gameirl_nn::Scalar>(seed: u64, n: usize) -> (Vec<T>, Vec<usize>) {
    let mut env = Catcher::new(CatcherConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs: Vec<Observation> = vec![env.reset(seed)];
    let mut actions = Vec::new();
    for _ in 0..n {
        let a = rng.random_range(0..3);
        actions.push(a);
        let s = env.step(a).unwrap();
        obs.push(s.obs);
    }
    obs.pop();
    let x: Vec<f32> = gameirl::envs::batch_scalars(obs.iter());
    (x.iter().map(|v| T::lit(*v as f64)).collect(), actions)
}

fn ppo_fixture(seed: u64) -> (PolicyNet, gameirl_nn::ParamSet<f64>, Vec<f64>, Vec<usize>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let net = PolicyNet::new(4);
    let mut params = net.init::<f64>(seed).unwrap();
    // Larger logits so the ratio moves away from 1 and some samples clip.
    for v in params.get_mut("pi.w").unwrap() {
        *v *= 60.0;
    }
    // Zero biases over blank regions put pre-activations exactly on the ReLU kink.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for p in params.iter_mut().filter(|p| p.name.ends_with(".b")) {
        p.data.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
    }
    let (x, actions) = small_batch::<f64>(seed, 6);
    let out = net.forward(&params, &x, 6).unwrap();
    let old: Vec<f64> = out.log_probs(&actions).iter().map(|l| l + rng.random_range(-0.3..0.3)).collect();
    let mut adv: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize_advantages(&mut adv);
    let ret: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    (net, params, x, actions, old, adv, ret)
}

#[test]
fn ppo_loss_gradient_matches_finite_differences() {
    let (net, params, x, actions, old, adv, ret) = ppo_fixture(6);
    let cfg = PpoConfig { clip: 0.1, entropy_coef: 0.05, ..Default::default() };
    let (stats, ratios, grads) = ppo_minibatch_grads(&net, &params, &x, &actions, &old, &adv, &ret, &cfg).unwrap();
    // Keep every ratio clear of the clip boundaries where the loss has kinks.
    for r in &ratios {
        assert!((r - 0.9).abs() > 1e-3 && (r - 1.1).abs() > 1e-3, "ratio {r} near a kink");
    }
    assert!(stats.clip_frac > 0.0, "fixture should exercise the clipped branch");
    let report = gradcheck::check_params(&params, &grads, 1e-6, 3, 1e-6, |p| {
        ppo_minibatch_grads(&net, p, &x, &actions, &old, &adv, &ret, &cfg).unwrap().0.total_loss(&cfg)
    });
    assert!(report.checked > 20);
    assert!(report.max_rel_err <= 1e-4, "{report:?}");
}

#[test]
fn ratio_is_one_when_parameters_are_unchanged() {
    let net = PolicyNet::new(4);
    let params = net.init::<f32>(5).unwrap();
    let (x, actions) = small_batch::<f32>(5, 8);
    let old = net.forward(&params, &x, 8).unwrap().log_probs(&actions);
    let adv = vec![0.5f32; 8];
    let ret = vec![0.0f32; 8];
    let (stats, ratios, _) = ppo_minibatch_grads(&net, &params, &x, &actions, &old, &adv, &ret, &PpoConfig::default()).unwrap();
    assert!(ratios.iter().all(|&r| r == 1.0));
    assert_eq!(stats.clip_frac, 0.0);
}

fn collect_small(seed: u64, n: usize) -> (PolicyNet, gameirl_nn::ParamSet<f32>, Rollout) {
    let net = PolicyNet::new(4);
    let params = net.init::<f32>(seed).unwrap();
    let mut col = RolloutCollector::new(Catcher::new(CatcherConfig::default()), seed);
    let r = col.collect(&net, &params, n, &mut GroundTruth).unwrap();
    (net, params, r)
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    let (net, params, r) = collect_small(6, 64);
    let adv = compute_gae(&r, 0.99, 0.95);
    let cfg = PpoConfig { learning_rate: 0.0, minibatch: 32, epochs: 2, ..Default::default() };
    let mut learner = PpoLearner::new(net, params.clone(), cfg, 0).unwrap();
    learner.update(&r, &adv).unwrap();
    for (a, b) in params.iter().zip(learner.params.iter()) {
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()), "{}", a.name);
    }
}

#[test]
fn zero_advantage_without_auxiliary_terms_leaves_parameters_unchanged() {
    let (net, params, r) = collect_small(7, 64);
    let adv = AdvantageBatch { advantages: vec![0.0; 64], returns: r.values.clone() };
    let cfg = PpoConfig { entropy_coef: 0.0, value_coef: 0.0, minibatch: 32, ..Default::default() };
    let mut learner = PpoLearner::new(net, params.clone(), cfg, 0).unwrap();
    learner.update(&r, &adv).unwrap();
    for (a, b) in params.iter().zip(learner.params.iter()) {
        assert_eq!(a.data, b.data, "{}", a.name);
    }
}

#[test]
fn random_play_loses_reward_on_average() {
    // Oracle: 10k uniform-random steps straight on the environment.
    let mut env = Catcher::new(CatcherConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    env.reset(21);
    let mut total = 0.0f64;
    for _ in 0..10_000 {
        let s = env.step(rng.random_range(0..3)).unwrap();
        total += s.reward as f64;
        if s.done {
            env.reset(rng.random());
        }
    }
    assert!(total / 10_000.0 < 0.0, "oracle mean {}", total / 10_000.0);

    let (_, _, r) = collect_small(8, 2048);
    let mean = r.rewards.iter().map(|&v| v as f64).sum::<f64>() / r.len() as f64;
    assert!(mean < 0.0, "collector mean {mean}");
}

#[test]
fn rollout_arrays_have_the_requested_length() {
    let (_, _, r) = collect_small(9, DEFAULT_ROLLOUT_LENGTH);
    let n = DEFAULT_ROLLOUT_LENGTH;
    assert_eq!(r.observations.len(), n);
    assert_eq!(r.actions.len(), n);
    assert_eq!(r.log_probs.len(), n);
    assert_eq!(r.values.len(), n);
    assert_eq!(r.rewards.len(), n);
    assert_eq!(r.dones.len(), n);
    assert_eq!(r.observations[0].bytes().len(), FRAME_H * FRAME_W * 4);
    assert!(r.completed_returns.len() >= 2);
}

#[test]
fn recorded_log_probs_match_the_collecting_policy() {
    let (net, params, r) = collect_small(10, 32);
    let x: Vec<f32> = gameirl::envs::batch_scalars(r.observations.iter());
    let lp = net.forward(&params, &x, 32).unwrap().log_probs(&r.actions);
    for (a, b) in lp.iter().zip(&r.log_probs) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn constant_zero_source_gives_zero_rewards() {
    let net = PolicyNet::new(4);
    let params = net.init::<f32>(1).unwrap();
    let mut col = RolloutCollector::new(Catcher::new(CatcherConfig::default()), 1);
    let r = col.collect(&net, &params, 600, &mut ConstantReward(0.0)).unwrap();
    assert!(r.rewards.iter().all(|&v| v == 0.0));
    assert!(r.gt_rewards.iter().any(|&v| v != 0.0));
}

#[test]
fn zero_steps_returns_initial_parameters() {
    let init = PolicyNet::new(4).init::<f32>(4).unwrap();
    let (p, h) = train_forward_rl(
        || Catcher::new(CatcherConfig::default()),
        4,
        PpoConfig::default(),
        0,
        1024,
        &mut GroundTruth,
        4,
        &mut |_, _| Ok(Control::Continue),
    )
    .unwrap();
    assert!(h.is_empty());
    assert_eq!(p.to_bytes(), init.to_bytes());
}

#[test]
fn history_has_one_row_per_rollout() {
    let cfg = PpoConfig { epochs: 1, minibatch: 128, ..Default::default() };
    let (_, h) = train_forward_rl(
        || Catcher::new(CatcherConfig::default()),
        4,
        cfg,
        3 * 256,
        256,
        &mut GroundTruth,
        4,
        &mut |_, _| Ok(Control::Continue),
    )
    .unwrap();
    assert_eq!(h.len(), 3);
    assert_eq!(h.iter().map(|r| r.env_steps).collect::<Vec<_>>(), vec![256, 512, 768]);
}

#[test]
fn rejects_budget_that_is_not_a_whole_number_of_rollouts() {
    let r = train_forward_rl(
        || Catcher::new(CatcherConfig::default()),
        4,
        PpoConfig::default(),
        1000,
        1024,
        &mut GroundTruth,
        0,
        &mut |_, _| Ok(Control::Continue),
    );
    assert!(r.is_err());
}
