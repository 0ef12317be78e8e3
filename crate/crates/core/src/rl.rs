//! Forward RL: rollout collection against a pluggable reward source,
//! generalized advantage estimation, and clipped-surrogate PPO updates.

use std::io::Write;
use std::path::Path;

use gameirl_nn::ops;
use gameirl_nn::{Adam, ParamSet, Scalar};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{batch_scalars, Environment, Observation, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::nets::{sample_action, PolicyNet};

pub const DEFAULT_ROLLOUT_LENGTH: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lam: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lam: 0.95,
            clip: 0.1,
            epochs: 4,
            minibatch: 256,
            entropy_coef: 0.01,
            value_coef: 0.5,
            learning_rate: 2.5e-4,
            max_grad_norm: 0.5,
            adam_eps: 1e-5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return Err(Error::Config(format!("lam must be in [0, 1], got {}", self.lam)));
        }
        if self.clip <= 0.0 {
            return Err(Error::Config(format!("clip must be positive, got {}", self.clip)));
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::Config("epochs and minibatch must be positive".into()));
        }
        Ok(())
    }
}

/// One fixed-length slice of experience from a single environment.
#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub observations: Vec<Observation>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f32>,
    pub values: Vec<f32>,
    /// Rewards from the serving reward source.
    pub rewards: Vec<f32>,
    /// Environment rewards, kept for evaluation whatever the source.
    pub gt_rewards: Vec<f32>,
    pub dones: Vec<bool>,
    pub bootstrap_value: f32,
    /// Ground-truth returns of episodes that finished inside this rollout.
    pub completed_returns: Vec<f32>,
    /// Caller-assigned identity (e.g. the IRL round that produced it).
    pub tag: usize,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Maps (observation, action) pairs to the reward the learner sees.
pub trait RewardSource {
    fn rewards(&mut self, obs: &[Observation], actions: &[usize], env_rewards: &[f32]) -> Result<Vec<f32>>;
}

/// The environment's own reward.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruth;

impl RewardSource for GroundTruth {
    fn rewards(&mut self, _obs: &[Observation], _actions: &[usize], env_rewards: &[f32]) -> Result<Vec<f32>> {
        Ok(env_rewards.to_vec())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantReward(pub f32);

impl RewardSource for ConstantReward {
    fn rewards(&mut self, obs: &[Observation], _actions: &[usize], _env_rewards: &[f32]) -> Result<Vec<f32>> {
        Ok(vec![self.0; obs.len()])
    }
}

/// Steps one environment across rollouts, auto-resetting finished episodes.
pub struct RolloutCollector<E: Environment> {
    env: E,
    obs: Observation,
    rng: ChaCha8Rng,
    episode_return: f32,
}

impl<E: Environment> RolloutCollector<E> {
    pub fn new(mut env: E, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = env.reset(rng.random());
        Self { env, obs, rng, episode_return: 0.0 }
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    /// Runs `n_steps` of the policy. Rewards are assigned by `source` once the
    /// slice is complete (sources are per-sample, so batching changes nothing).
    pub fn collect(
        &mut self,
        net: &PolicyNet,
        params: &ParamSet<f32>,
        n_steps: usize,
        source: &mut dyn RewardSource,
    ) -> Result<Rollout> {
        let mut r = Rollout {
            observations: Vec::with_capacity(n_steps),
            actions: Vec::with_capacity(n_steps),
            log_probs: Vec::with_capacity(n_steps),
            values: Vec::with_capacity(n_steps),
            gt_rewards: Vec::with_capacity(n_steps),
            dones: Vec::with_capacity(n_steps),
            ..Default::default()
        };
        let mut input = Vec::with_capacity(net.input_len());
        for _ in 0..n_steps {
            input.clear();
            self.obs.write_scalars(&mut input);
            let out = net.forward(params, &input, 1)?;
            let (action, log_prob) = sample_action(out.logits(0), &mut self.rng)?;
            let step = self.env.step(action)?;
            self.episode_return += step.reward;
            r.observations.push(std::mem::replace(&mut self.obs, step.obs));
            r.actions.push(action);
            r.log_probs.push(log_prob);
            r.values.push(out.state_value[0]);
            r.gt_rewards.push(step.reward);
            r.dones.push(step.done);
            if step.done {
                r.completed_returns.push(self.episode_return);
                self.episode_return = 0.0;
                self.obs = self.env.reset(self.rng.random());
            }
        }
        input.clear();
        self.obs.write_scalars(&mut input);
        r.bootstrap_value = net.forward(params, &input, 1)?.state_value[0];
        r.rewards = source.rewards(&r.observations, &r.actions, &r.gt_rewards)?;
        if r.rewards.len() != n_steps {
            return Err(Error::Shape(format!("reward source returned {} rewards for {n_steps} steps", r.rewards.len())));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    pub advantages: Vec<f32>,
    pub returns: Vec<f32>,
}

/// GAE by reverse recursion over slices.
pub fn gae<T: Scalar>(rewards: &[T], values: &[T], dones: &[bool], bootstrap: T, gamma: T, lam: T) -> (Vec<T>, Vec<T>) {
    let n = rewards.len();
    let mut adv = vec![T::zero(); n];
    let mut next_adv = T::zero();
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { T::zero() } else { T::one() };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lam * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| *a + *v).collect();
    (adv, returns)
}

pub fn compute_gae(rollout: &Rollout, gamma: f64, lam: f64) -> AdvantageBatch {
    let (advantages, returns) = gae(
        &rollout.rewards,
        &rollout.values,
        &rollout.dones,
        rollout.bootstrap_value,
        gamma as f32,
        lam as f32,
    );
    AdvantageBatch { advantages, returns }
}

/// Zero mean, unit (population) variance, with an ε guard on the scale.
pub fn normalize_advantages<T: Scalar>(adv: &mut [T]) {
    let m = ops::mean(adv);
    let s = ops::pop_std(adv);
    let eps = T::lit(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - m) / (s + eps));
}

/// `min(ρA, clip(ρ, 1−c, 1+c)A)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, clip: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - clip, 1.0 + clip) * adv)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
}

impl PpoStats {
    pub fn total_loss(&self, cfg: &PpoConfig) -> f64 {
        self.policy_loss + cfg.value_coef * self.value_loss - cfg.entropy_coef * self.entropy
    }
}

/// Loss pieces and parameter gradients of the PPO objective on one minibatch.
/// Advantages are expected already normalised.
#[allow(clippy::too_many_arguments)]
pub fn ppo_minibatch_grads<T: Scalar>(
    net: &PolicyNet,
    params: &ParamSet<T>,
    x: &[T],
    actions: &[usize],
    old_log_probs: &[T],
    advantages: &[T],
    returns: &[T],
    cfg: &PpoConfig,
) -> Result<(PpoStats, Vec<T>, ParamSet<T>)> {
    let b = actions.len();
    let (out, cache) = net.forward_train(params, x, b)?;
    let bf = T::from_usize(b).unwrap();
    let clip = T::lit(cfg.clip);
    let ent_c = T::lit(cfg.entropy_coef);
    let val_c = T::lit(cfg.value_coef);
    let mut dlogits = vec![T::zero(); b * NUM_ACTIONS];
    let mut dvalue = vec![T::zero(); b];
    let mut stats = PpoStats::default();
    let mut ratios = Vec::with_capacity(b);
    let mut logp = [T::zero(); NUM_ACTIONS];
    for i in 0..b {
        ops::log_softmax(out.logits(i), &mut logp);
        let p: Vec<T> = logp.iter().map(|l| l.exp()).collect();
        let entropy = -p.iter().zip(&logp).map(|(a, b)| *a * *b).sum::<T>();
        let a = actions[i];
        let ratio = (logp[a] - old_log_probs[i]).exp();
        let adv = advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.max(T::one() - clip).min(T::one() + clip) * adv;
        let surr = unclipped.min(clipped);
        let d_logp_a = if unclipped <= clipped { -adv * ratio / bf } else { T::zero() };
        let row = &mut dlogits[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
        for j in 0..NUM_ACTIONS {
            let ind = if j == a { T::one() } else { T::zero() };
            row[j] = d_logp_a * (ind - p[j]) + ent_c / bf * p[j] * (logp[j] + entropy);
        }
        let verr = out.state_value[i] - returns[i];
        dvalue[i] = T::lit(2.0) * val_c * verr / bf;
        stats.policy_loss -= surr.as_f64();
        stats.value_loss += (verr * verr).as_f64();
        stats.entropy += entropy.as_f64();
        let r = ratio.as_f64();
        if (r - 1.0).abs() > cfg.clip {
            stats.clip_frac += 1.0;
        }
        stats.approx_kl += (r - 1.0) - r.ln();
        ratios.push(ratio);
    }
    let n = b as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.clip_frac /= n;
    stats.approx_kl /= n;
    let mut grads = params.zeros_like();
    net.backward(params, &cache, &dlogits, &dvalue, &mut grads)?;
    Ok((stats, ratios, grads))
}

/// Live policy parameters plus their optimiser state.
pub struct PpoLearner {
    pub net: PolicyNet,
    pub params: ParamSet<f32>,
    pub cfg: PpoConfig,
    opt: Adam<f32>,
    rng: ChaCha8Rng,
}

impl PpoLearner {
    pub fn new(net: PolicyNet, params: ParamSet<f32>, cfg: PpoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let opt = Adam::new(&params, cfg.learning_rate as f32, cfg.adam_eps as f32);
        Ok(Self { net, params, cfg, opt, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    /// `cfg.epochs` passes of shuffled minibatches. Each minibatch normalises
    /// its own advantages. Averages the per-minibatch statistics.
    pub fn update(&mut self, rollout: &Rollout, adv: &AdvantageBatch) -> Result<PpoStats> {
        let n = rollout.len();
        if adv.advantages.len() != n || adv.returns.len() != n {
            return Err(Error::Shape("advantage batch length differs from rollout".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut total = PpoStats::default();
        let mut batches = 0usize;
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.cfg.minibatch) {
                let x: Vec<f32> = batch_scalars(chunk.iter().map(|&i| &rollout.observations[i]));
                let actions: Vec<usize> = chunk.iter().map(|&i| rollout.actions[i]).collect();
                let old: Vec<f32> = chunk.iter().map(|&i| rollout.log_probs[i]).collect();
                let mut a: Vec<f32> = chunk.iter().map(|&i| adv.advantages[i]).collect();
                normalize_advantages(&mut a);
                let ret: Vec<f32> = chunk.iter().map(|&i| adv.returns[i]).collect();
                let (stats, _, mut grads) =
                    ppo_minibatch_grads(&self.net, &self.params, &x, &actions, &old, &a, &ret, &self.cfg)?;
                let loss = stats.total_loss(&self.cfg);
                if !loss.is_finite() || !grads.all_finite() {
                    return Err(Error::Divergence(format!("non-finite PPO loss {loss}")));
                }
                grads.clip_global_norm(self.cfg.max_grad_norm as f32);
                self.opt.step(&mut self.params, &grads)?;
                total.policy_loss += stats.policy_loss;
                total.value_loss += stats.value_loss;
                total.entropy += stats.entropy;
                total.clip_frac += stats.clip_frac;
                total.approx_kl += stats.approx_kl;
                batches += 1;
            }
        }
        let k = batches.max(1) as f64;
        Ok(PpoStats {
            policy_loss: total.policy_loss / k,
            value_loss: total.value_loss / k,
            entropy: total.entropy / k,
            clip_frac: total.clip_frac / k,
            approx_kl: total.approx_kl / k,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlHistoryRow {
    pub rollout_index: usize,
    pub env_steps: usize,
    /// Mean ground-truth return of episodes finished in this rollout (NaN if none).
    pub mean_gt_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
}

pub fn mean_or_nan(xs: &[f32]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().map(|&v| v as f64).sum::<f64>() / xs.len() as f64
    }
}

pub fn write_rl_history(path: &Path, rows: &[RlHistoryRow]) -> Result<()> {
    let mut out = String::from("rollout_index,env_steps,mean_gt_return,policy_loss,value_loss,entropy,clip_frac,approx_kl\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.rollout_index,
            r.env_steps,
            fmt_f(r.mean_gt_return),
            fmt_f(r.policy_loss),
            fmt_f(r.value_loss),
            fmt_f(r.entropy),
            fmt_f(r.clip_frac),
            fmt_f(r.approx_kl)
        ));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

/// Shortest round-tripping decimal; empty for NaN.
pub fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Reads a CSV float written by [`fmt_f`]: empty means NaN.
pub fn empty_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    let s = <std::borrow::Cow<'de, str> as Deserialize>::deserialize(d)?;
    if s.is_empty() {
        Ok(f64::NAN)
    } else {
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What to do after each rollout of [`train_forward_rl`].
pub enum Control {
    Continue,
    Stop,
}

/// Collect → GAE → update, `total_steps / rollout_length` times. `on_rollout`
/// sees each history row with the learner and may stop training early.
#[allow(clippy::too_many_arguments)]
pub fn train_forward_rl<E, F>(
    env_factory: F,
    stack: usize,
    cfg: PpoConfig,
    total_steps: usize,
    rollout_length: usize,
    source: &mut dyn RewardSource,
    seed: u64,
    on_rollout: &mut dyn FnMut(&RlHistoryRow, &PpoLearner) -> Result<Control>,
) -> Result<(ParamSet<f32>, Vec<RlHistoryRow>)>
where
    E: Environment,
    F: FnOnce() -> E,
{
    if rollout_length == 0 || total_steps % rollout_length != 0 {
        return Err(Error::InvalidArgument(format!(
            "total_steps {total_steps} must be a multiple of rollout_length {rollout_length}"
        )));
    }
    let net = PolicyNet::new(stack);
    let params = net.init::<f32>(seed)?;
    let mut learner = PpoLearner::new(net, params, cfg, seed.wrapping_add(1))?;
    let mut collector = RolloutCollector::new(env_factory(), seed.wrapping_add(2));
    let mut history = Vec::new();
    for i in 0..total_steps / rollout_length {
        let rollout = collector.collect(&learner.net, &learner.params, rollout_length, source)?;
        let adv = compute_gae(&rollout, cfg.gamma, cfg.lam);
        let stats = learner.update(&rollout, &adv)?;
        let row = RlHistoryRow {
            rollout_index: i,
            env_steps: (i + 1) * rollout_length,
            mean_gt_return: mean_or_nan(&rollout.completed_returns),
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_frac: stats.clip_frac,
            approx_kl: stats.approx_kl,
        };
        history.push(row);
        if let Control::Stop = on_rollout(&row, &learner)? {
            break;
        }
    }
    Ok((learner.params, history))
}
