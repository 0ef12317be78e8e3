//! Adversarial IRL: a discriminator of the form `sigmoid(f − log π)`, a replay
//! buffer of the last k generator rollouts as its negative pool, per-round
//! standardisation of the learned reward, and the alternating training loop.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use gameirl_nn::{ops, Adam, ParamSet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoenc::AEParams;
use crate::envs::{batch_scalars, Environment, Observation, DEFAULT_STACK};
use crate::error::{Error, Result};
use crate::nets::{ActionOneHot, Mode, PolicyNet, RewardNet};
use crate::rl::{compute_gae, fmt_f, mean_or_nan, PpoConfig, PpoLearner, RewardSource, Rollout, RolloutCollector, DEFAULT_ROLLOUT_LENGTH};

pub const DEFAULT_DEMOS: usize = 8;
pub const NORM_EPS: f64 = 1e-8;
/// Forward-pass chunk for reward and policy evaluation over large sample sets.
const EVAL_CHUNK: usize = 256;

/// One recorded episode (rewards optional; demonstrations carry none).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Observation>,
    pub actions: Vec<usize>,
    pub rewards: Option<Vec<f32>>,
    /// Seed the episode was reset with.
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub trajectories: Vec<Trajectory>,
}

impl DemoSet {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        for (i, t) in trajectories.iter().enumerate() {
            if t.observations.len() != t.actions.len() {
                return Err(Error::Shape(format!(
                    "trajectory {i}: {} observations, {} actions",
                    t.observations.len(),
                    t.actions.len()
                )));
            }
        }
        Ok(Self { trajectories })
    }

    pub fn count(&self) -> usize {
        self.trajectories.len()
    }

    pub fn transitions(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// `(trajectory, step)` for every transition, in order.
    pub fn index(&self) -> Vec<(usize, usize)> {
        self.trajectories
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.len()).map(move |s| (i, s)))
            .collect()
    }
}

/// FIFO of the last `k` generator rollouts.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    k: usize,
    rollouts: VecDeque<Rollout>,
}

impl ReplayBuffer {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("replay buffer needs k ≥ 1".into()));
        }
        Ok(Self { k, rollouts: VecDeque::with_capacity(k) })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Appends, evicting the oldest rollout beyond `k`.
    pub fn push(&mut self, rollout: Rollout) {
        self.rollouts.push_back(rollout);
        while self.rollouts.len() > self.k {
            self.rollouts.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    pub fn transitions(&self) -> usize {
        self.rollouts.iter().map(|r| r.len()).sum()
    }

    pub fn capacity_transitions(&self, rollout_length: usize) -> usize {
        self.k * rollout_length
    }

    pub fn rollouts(&self) -> impl Iterator<Item = &Rollout> {
        self.rollouts.iter()
    }

    pub fn tags(&self) -> Vec<usize> {
        self.rollouts.iter().map(|r| r.tag).collect()
    }

    fn get(&self, slot: usize, step: usize) -> (&Observation, usize) {
        let r = &self.rollouts[slot];
        (&r.observations[step], r.actions[step])
    }
}

/// Affine standardisation applied to the learned reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    pub epsilon: f64,
}

impl NormStats {
    /// The round-0 transform: mean 0, std 1.
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0, epsilon: NORM_EPS }
    }

    /// Mean and population standard deviation of `f`.
    pub fn from_values(f: &[f64]) -> Self {
        Self { mean: ops::mean(f), std: ops::pop_std(f), epsilon: NORM_EPS }
    }

    pub fn apply(&self, f: f64) -> f64 {
        normalized_reward(f, self)
    }
}

pub fn normalized_reward(f: f64, stats: &NormStats) -> f64 {
    (f - stats.mean) / (stats.std + stats.epsilon)
}

/// `exp(f) / (exp(f) + π(a|s))`, evaluated as `sigmoid(f − log π)`.
pub fn discriminator_output(f: f64, log_pi: f64) -> f64 {
    ops::sigmoid(f - log_pi)
}

/// Binary cross-entropy of `sigmoid(s)` against `label`, from the logit.
pub fn bce_with_logit(s: f64, label: f64) -> f64 {
    label * ops::softplus(-s) + (1.0 - label) * ops::softplus(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantInput {
    Raw,
    Encoded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    Small,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscInput {
    State,
    StateAction,
}

macro_rules! str_enum {
    ($t:ty, $($v:ident => $s:literal),+) => {
        impl $t {
            pub fn as_str(&self) -> &'static str {
                match self { $(Self::$v => $s),+ }
            }

            pub fn parse(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$v),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($t), " {:?} (expected one of: ", $($s, " "),+, ")"),
                        s
                    ))),
                }
            }
        }

        impl std::fmt::Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

str_enum!(VariantInput, Raw => "raw", Encoded => "encoded");
str_enum!(DatasetMode, Small => "small", Large => "large");
str_enum!(DiscInput, State => "state", StateAction => "state_action");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlConfig {
    pub k: usize,
    /// Discriminator samples per label per round.
    pub samples_per_label: usize,
    pub disc_epochs: usize,
    pub disc_minibatch: usize,
    pub disc_lr: f64,
    pub variant: VariantInput,
    pub disc_input: DiscInput,
    pub rounds: usize,
    pub dataset_mode: DatasetMode,
    pub rollout_length: usize,
    pub stack: usize,
    pub checkpoint_every: usize,
    pub ppo: PpoConfig,
    pub seed: u64,
}

impl IrlConfig {
    /// Defaults for a dataset mode: small keeps only the latest rollout and 512
    /// samples per label; large keeps 8 rollouts and 2048 per label.
    pub fn for_mode(mode: DatasetMode) -> Self {
        let (k, n) = match mode {
            DatasetMode::Small => (1, 512),
            DatasetMode::Large => (8, 2048),
        };
        Self {
            k,
            samples_per_label: n,
            disc_epochs: 4,
            disc_minibatch: 256,
            disc_lr: 1e-4,
            variant: VariantInput::Raw,
            disc_input: DiscInput::StateAction,
            rounds: 300,
            dataset_mode: mode,
            rollout_length: DEFAULT_ROLLOUT_LENGTH,
            stack: DEFAULT_STACK,
            checkpoint_every: 25,
            ppo: PpoConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.dataset_mode {
            DatasetMode::Small if self.k != 1 => {
                return Err(Error::Config(format!("dataset_mode small requires k = 1, got {}", self.k)))
            }
            DatasetMode::Large if self.k < 2 => {
                return Err(Error::Config(format!("dataset_mode large requires k ≥ 2, got {}", self.k)))
            }
            _ => {}
        }
        if self.samples_per_label == 0 || self.disc_minibatch == 0 || self.rollout_length == 0 || self.stack == 0 {
            return Err(Error::Config("sample counts, minibatch, rollout length and stack must be positive".into()));
        }
        if !(self.disc_lr > 0.0 && self.disc_lr.is_finite()) {
            return Err(Error::Config(format!("disc_lr must be positive, got {}", self.disc_lr)));
        }
        self.ppo.validate()
    }
}

impl Default for IrlConfig {
    fn default() -> Self {
        Self::for_mode(DatasetMode::Large)
    }
}

/// Where a discriminator sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Expert { trajectory: usize, step: usize },
    /// `tag` is the rollout's tag; `slot` its position in the buffer at build time.
    Generator { tag: usize, slot: usize, step: usize },
}

/// Equal numbers of expert (label 1) and generator (label 0) samples, with
/// `log π(a|s)` under one policy snapshot. Observations stay in their source
/// containers; `origins` locates them.
#[derive(Debug, Clone)]
pub struct DiscBatch {
    pub origins: Vec<Origin>,
    pub actions: Vec<usize>,
    pub labels: Vec<f32>,
    pub log_probs: Vec<f32>,
}

impl DiscBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn generator_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == 0.0).collect()
    }
}

fn sample_observation<'a>(o: &Origin, buf: &'a ReplayBuffer, demos: &'a DemoSet) -> &'a Observation {
    match *o {
        Origin::Expert { trajectory, step } => &demos.trajectories[trajectory].observations[step],
        Origin::Generator { slot, step, .. } => buf.get(slot, step).0,
    }
}

/// `log π(a|s)` for a list of observations, evaluated in chunks.
pub fn policy_log_probs(net: &PolicyNet, params: &ParamSet<f32>, obs: &[&Observation], actions: &[usize]) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(obs.len());
    for (o, a) in obs.chunks(EVAL_CHUNK).zip(actions.chunks(EVAL_CHUNK)) {
        let x: Vec<f32> = batch_scalars(o.iter().copied());
        out.extend(net.forward(params, &x, o.len())?.log_probs(a));
    }
    Ok(out)
}

/// `n` generator samples uniformly over every buffered transition and `n`
/// expert samples uniformly with replacement, all scored by one policy snapshot.
pub fn build_disc_batch<R: Rng>(
    buf: &ReplayBuffer,
    demos: &DemoSet,
    policy: (&PolicyNet, &ParamSet<f32>),
    n: usize,
    rng: &mut R,
) -> Result<DiscBatch> {
    if buf.is_empty() || buf.transitions() == 0 {
        return Err(Error::EmptyBuffer);
    }
    let demo_index = demos.index();
    if demo_index.is_empty() {
        return Err(Error::InvalidArgument("demonstration set has no transitions".into()));
    }
    let lens: Vec<usize> = buf.rollouts().map(|r| r.len()).collect();
    let total: usize = lens.iter().sum();
    let mut origins = Vec::with_capacity(2 * n);
    let mut actions = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let (t, s) = demo_index[rng.random_range(0..demo_index.len())];
        origins.push(Origin::Expert { trajectory: t, step: s });
        actions.push(demos.trajectories[t].actions[s]);
        labels.push(1.0);
    }
    let tags = buf.tags();
    for _ in 0..n {
        let mut flat = rng.random_range(0..total);
        let mut slot = 0;
        while flat >= lens[slot] {
            flat -= lens[slot];
            slot += 1;
        }
        origins.push(Origin::Generator { tag: tags[slot], slot, step: flat });
        actions.push(buf.get(slot, flat).1);
        labels.push(0.0);
    }
    let obs: Vec<&Observation> = origins.iter().map(|o| sample_observation(o, buf, demos)).collect();
    let log_probs = policy_log_probs(policy.0, policy.1, &obs, &actions)?;
    Ok(DiscBatch { origins, actions, labels, log_probs })
}

/// The reward network plus whatever it needs to turn observations into inputs.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub net: RewardNet,
    pub params: ParamSet<f32>,
    pub ae: Option<AEParams<f32>>,
}

impl Discriminator {
    pub fn new(variant: VariantInput, disc_input: DiscInput, stack: usize, ae: Option<AEParams<f32>>, seed: u64) -> Result<Self> {
        let with_action = disc_input == DiscInput::StateAction;
        let net = match variant {
            VariantInput::Raw => RewardNet::raw(stack, with_action),
            VariantInput::Encoded => {
                let ae = ae.as_ref().ok_or_else(|| Error::Config("encoded variant needs a trained autoencoder".into()))?;
                RewardNet::encoded(ae.embed_dim, with_action)
            }
        };
        let params = net.init::<f32>(seed)?;
        let ae = if variant == VariantInput::Encoded { ae } else { None };
        Ok(Self { net, params, ae })
    }

    /// Network input for a batch: stacked pixels, or the embedding of each
    /// observation's newest frame.
    pub fn inputs(&self, obs: &[&Observation]) -> Result<Vec<f32>> {
        match &self.ae {
            None => Ok(batch_scalars(obs.iter().copied())),
            Some(ae) => {
                let mut x = Vec::with_capacity(obs.len() * crate::envs::FRAME_PIXELS);
                for o in obs {
                    x.extend(o.newest().to_scalars::<f32>());
                }
                ae.encode_batch(&x, obs.len())
            }
        }
    }

    fn one_hot(&self, actions: &[usize]) -> Result<Option<ActionOneHot>> {
        if self.net.with_action() {
            Ok(Some(ActionOneHot::from_actions(actions)?))
        } else {
            Ok(None)
        }
    }

    /// Serve-mode `f` over any number of samples.
    pub fn rewards(&self, obs: &[&Observation], actions: &[usize]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(obs.len());
        for (o, a) in obs.chunks(EVAL_CHUNK).zip(actions.chunks(EVAL_CHUNK)) {
            let x = self.inputs(o)?;
            let oh = self.one_hot(a)?;
            out.extend(self.net.forward(&self.params, &x, o.len(), oh.as_ref(), Mode::Serve)?);
        }
        Ok(out)
    }

    /// One Adam step on the mean BCE of a minibatch; returns the loss.
    /// Batch-norm layers use batch statistics and then fold them into the
    /// running estimates.
    pub fn train_step(&mut self, opt: &mut Adam<f32>, x: &[f32], actions: &[usize], log_probs: &[f32], labels: &[f32]) -> Result<f64> {
        let b = labels.len();
        let oh = self.one_hot(actions)?;
        let (f, cache) = self.net.forward_train(&self.params, x, b, oh.as_ref(), Mode::Train)?;
        let (loss, df) = disc_loss_and_grad(&f, log_probs, labels);
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite discriminator loss {loss}")));
        }
        let mut grads = self.params.zeros_like();
        self.net.backward(&self.params, &cache, &df, &mut grads)?;
        if !grads.all_finite() {
            return Err(Error::Divergence("non-finite discriminator gradient".into()));
        }
        opt.step(&mut self.params, &grads)?;
        self.net.update_running_stats(&mut self.params, &cache)?;
        Ok(loss)
    }
}

/// Mean BCE of `sigmoid(f − log π)` and its gradient with respect to `f`.
pub fn disc_loss_and_grad(f: &[f32], log_probs: &[f32], labels: &[f32]) -> (f64, Vec<f32>) {
    let b = f.len() as f64;
    let mut loss = 0.0;
    let mut df = Vec::with_capacity(f.len());
    for ((&fi, &lp), &y) in f.iter().zip(log_probs).zip(labels) {
        let s = fi as f64 - lp as f64;
        loss += bce_with_logit(s, y as f64);
        df.push(((ops::sigmoid(s) - y as f64) / b) as f32);
    }
    (loss / b, df)
}

/// Mean BCE of a whole batch under the current (serve-mode) discriminator.
pub fn disc_loss(disc: &Discriminator, batch: &DiscBatch, buf: &ReplayBuffer, demos: &DemoSet) -> Result<f64> {
    let obs: Vec<&Observation> = batch.origins.iter().map(|o| sample_observation(o, buf, demos)).collect();
    let f = disc.rewards(&obs, &batch.actions)?;
    let (loss, _) = disc_loss_and_grad(&f, &batch.log_probs, &batch.labels);
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite discriminator loss {loss}")));
    }
    Ok(loss)
}

/// `disc_epochs` passes of shuffled minibatches over `batch`; returns the mean
/// minibatch loss of the final epoch.
pub fn train_discriminator<R: Rng>(
    disc: &mut Discriminator,
    opt: &mut Adam<f32>,
    batch: &DiscBatch,
    buf: &ReplayBuffer,
    demos: &DemoSet,
    epochs: usize,
    minibatch: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut last = f64::NAN;
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(minibatch) {
            let obs: Vec<&Observation> = chunk.iter().map(|&i| sample_observation(&batch.origins[i], buf, demos)).collect();
            let x = disc.inputs(&obs)?;
            let actions: Vec<usize> = chunk.iter().map(|&i| batch.actions[i]).collect();
            let lp: Vec<f32> = chunk.iter().map(|&i| batch.log_probs[i]).collect();
            let y: Vec<f32> = chunk.iter().map(|&i| batch.labels[i]).collect();
            sum += disc.train_step(opt, &x, &actions, &lp, &y)? * chunk.len() as f64;
            count += chunk.len();
        }
        last = sum / count as f64;
    }
    Ok(last)
}

/// Stats of serve-mode `f` over the generator half of a batch.
pub fn update_norm_stats(disc: &Discriminator, batch: &DiscBatch, buf: &ReplayBuffer, demos: &DemoSet) -> Result<NormStats> {
    let idx = batch.generator_indices();
    let obs: Vec<&Observation> = idx.iter().map(|&i| sample_observation(&batch.origins[i], buf, demos)).collect();
    let actions: Vec<usize> = idx.iter().map(|&i| batch.actions[i]).collect();
    let f: Vec<f64> = disc.rewards(&obs, &actions)?.iter().map(|&v| v as f64).collect();
    Ok(NormStats::from_values(&f))
}

/// Generator reward: standardised `f`.
pub struct LearnedReward<'a> {
    pub disc: &'a Discriminator,
    pub stats: NormStats,
}

impl RewardSource for LearnedReward<'_> {
    fn rewards(&mut self, obs: &[Observation], actions: &[usize], _env_rewards: &[f32]) -> Result<Vec<f32>> {
        let refs: Vec<&Observation> = obs.iter().collect();
        let f = self.disc.rewards(&refs, actions)?;
        Ok(f.iter().map(|&v| self.stats.apply(v as f64) as f32).collect())
    }
}

/// Fraction of expert transitions the discriminator calls generated (`D < 0.5`).
pub fn false_positive_rate(disc: &Discriminator, policy: (&PolicyNet, &ParamSet<f32>), demos: &DemoSet) -> Result<(f64, usize)> {
    let index = demos.index();
    if index.is_empty() {
        return Err(Error::InvalidArgument("held-out set has no transitions".into()));
    }
    let obs: Vec<&Observation> = index.iter().map(|&(t, s)| &demos.trajectories[t].observations[s]).collect();
    let actions: Vec<usize> = index.iter().map(|&(t, s)| demos.trajectories[t].actions[s]).collect();
    let lp = policy_log_probs(policy.0, policy.1, &obs, &actions)?;
    let f = disc.rewards(&obs, &actions)?;
    let misses = f.iter().zip(&lp).filter(|(f, l)| discriminator_output(**f as f64, **l as f64) < 0.5).count();
    Ok((misses as f64 / index.len() as f64, index.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlHistoryRow {
    pub round: usize,
    pub env_steps: usize,
    #[serde(deserialize_with = "crate::rl::empty_as_nan")]
    pub mean_gt_return: f64,
    #[serde(deserialize_with = "crate::rl::empty_as_nan")]
    pub disc_loss: f64,
    #[serde(deserialize_with = "crate::rl::empty_as_nan")]
    pub norm_mean: f64,
    #[serde(deserialize_with = "crate::rl::empty_as_nan")]
    pub norm_std: f64,
    #[serde(deserialize_with = "crate::rl::empty_as_nan")]
    pub fpr_heldout: f64,
}

pub const IRL_CONFIG_FILE: &str = "irl_config.json";
pub const IRL_HISTORY_HEADER: &str = "round,env_steps,mean_gt_return,disc_loss,norm_mean,norm_std,fpr_heldout";

impl IrlHistoryRow {
    /// One CSV line in [`IRL_HISTORY_HEADER`] order, without the newline.
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.round,
            self.env_steps,
            fmt_f(self.mean_gt_return),
            fmt_f(self.disc_loss),
            fmt_f(self.norm_mean),
            fmt_f(self.norm_std),
            fmt_f(self.fpr_heldout)
        )
    }
}

pub fn write_irl_history(path: &Path, rows: &[IrlHistoryRow]) -> Result<()> {
    let mut s = String::from(IRL_HISTORY_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Optional extras for [`airl_train`].
#[derive(Default)]
pub struct IrlRun<'a> {
    pub heldout: Option<&'a DemoSet>,
    /// Run directory for the per-round CSV and checkpoints.
    pub out_dir: Option<&'a Path>,
    pub on_round: Option<&'a mut dyn FnMut(&IrlHistoryRow)>,
}

pub struct IrlOutcome {
    pub disc: Discriminator,
    pub policy: ParamSet<f32>,
    pub history: Vec<IrlHistoryRow>,
    pub stats: NormStats,
}

pub fn checkpoint_stem(dir: &Path, round: Option<usize>, what: &str) -> PathBuf {
    match round {
        Some(r) => dir.join("checkpoints").join(format!("round{r:04}_{what}")),
        None => dir.join(what),
    }
}

/// The alternating loop. Each round collects `k` generator rollouts rewarded
/// by the previous round's standardised `f` (identity in round 0), runs one
/// PPO update per rollout, trains the discriminator on a fresh batch from the
/// replay buffer and the demonstrations, then recomputes the reward stats.
///
/// With `out_dir` set, the history CSV is rewritten every round so a
/// divergence leaves the completed rounds on disk.
pub fn airl_train<E, F>(
    cfg: &IrlConfig,
    demos: &DemoSet,
    mut env_factory: F,
    ae: Option<AEParams<f32>>,
    mut run: IrlRun<'_>,
) -> Result<IrlOutcome>
where
    E: Environment,
    F: FnMut() -> E,
{
    cfg.validate()?;
    let mut disc = Discriminator::new(cfg.variant, cfg.disc_input, cfg.stack, ae, cfg.seed)?;
    let policy_net = PolicyNet::new(cfg.stack);
    let policy = policy_net.init::<f32>(cfg.seed.wrapping_add(1))?;
    let mut learner = PpoLearner::new(policy_net, policy, cfg.ppo, cfg.seed.wrapping_add(2))?;
    let mut collector = RolloutCollector::new(env_factory(), cfg.seed.wrapping_add(3));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(4));
    let mut disc_opt = Adam::new(&disc.params, cfg.disc_lr as f32, 1e-8);
    let mut buf = ReplayBuffer::new(cfg.k)?;
    let mut stats = NormStats::identity();
    let mut history = Vec::with_capacity(cfg.rounds);
    let mut rollouts_done = 0usize;
    if let Some(dir) = run.out_dir {
        fs::create_dir_all(dir.join("checkpoints"))?;
        fs::write(dir.join(IRL_CONFIG_FILE), serde_json::to_string_pretty(cfg)?)?;
        write_irl_history(&dir.join("history.csv"), &history)?;
    }
    for round in 0..cfg.rounds {
        let mut returns = Vec::new();
        for _ in 0..cfg.k {
            let mut source = LearnedReward { disc: &disc, stats };
            let mut rollout = collector.collect(&learner.net, &learner.params, cfg.rollout_length, &mut source)?;
            rollout.tag = rollouts_done;
            rollouts_done += 1;
            returns.extend_from_slice(&rollout.completed_returns);
            let adv = compute_gae(&rollout, cfg.ppo.gamma, cfg.ppo.lam);
            learner.update(&rollout, &adv)?;
            buf.push(rollout);
        }
        let batch = build_disc_batch(&buf, demos, (&learner.net, &learner.params), cfg.samples_per_label, &mut rng)?;
        let loss = train_discriminator(&mut disc, &mut disc_opt, &batch, &buf, demos, cfg.disc_epochs, cfg.disc_minibatch, &mut rng)?;
        stats = update_norm_stats(&disc, &batch, &buf, demos)?;
        if !stats.mean.is_finite() || !stats.std.is_finite() {
            return Err(Error::Divergence(format!("non-finite reward statistics at round {round}")));
        }
        let fpr = match run.heldout {
            Some(h) => false_positive_rate(&disc, (&learner.net, &learner.params), h)?.0,
            None => f64::NAN,
        };
        let row = IrlHistoryRow {
            round,
            env_steps: rollouts_done * cfg.rollout_length,
            mean_gt_return: mean_or_nan(&returns),
            disc_loss: loss,
            norm_mean: stats.mean,
            norm_std: stats.std,
            fpr_heldout: fpr,
        };
        history.push(row);
        if let Some(cb) = run.on_round.as_deref_mut() {
            cb(&row);
        }
        if let Some(dir) = run.out_dir {
            write_irl_history(&dir.join("history.csv"), &history)?;
            if cfg.checkpoint_every > 0 && (round + 1) % cfg.checkpoint_every == 0 {
                disc.params.save(&checkpoint_stem(dir, Some(round + 1), "reward"))?;
                learner.params.save(&checkpoint_stem(dir, Some(round + 1), "policy"))?;
            }
        }
    }
    if let Some(dir) = run.out_dir {
        disc.params.save(&checkpoint_stem(dir, None, "reward"))?;
        learner.params.save(&checkpoint_stem(dir, None, "policy"))?;
        fs::write(dir.join("norm_stats.json"), serde_json::to_string_pretty(&stats)?)?;
    }
    Ok(IrlOutcome { disc, policy: learner.params, history, stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discriminator_examples() {
        assert_eq!(discriminator_output(0.0, 0.0), 0.5);
        assert!((discriminator_output(3f64.ln(), 0.0) - 0.75).abs() < 1e-12);
        assert!(discriminator_output(20.0, 0.0) > 1.0 - 1e-8);
    }

    #[test]
    fn loss_at_indifference_is_ln2() {
        let f = [0.3f32, -1.2, 2.0, 0.0];
        let (l, _) = disc_loss_and_grad(&f, &f, &[1.0, 0.0, 1.0, 0.0]);
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn separated_and_flipped_losses() {
        let f = [20.0f32, -20.0];
        let lp = [0.0f32, 0.0];
        let (good, _) = disc_loss_and_grad(&f, &lp, &[1.0, 0.0]);
        let (bad, _) = disc_loss_and_grad(&f, &lp, &[0.0, 1.0]);
        assert!(good < 1e-6);
        assert!((bad - 20.0).abs() < 1e-6);
    }

    #[test]
    fn norm_stats_examples() {
        let s = NormStats::from_values(&[1.0, 2.0, 3.0]);
        assert!((s.mean - 2.0).abs() < 1e-12);
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let z: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|&f| s.apply(f)).collect();
        for (a, b) in z.iter().zip([-1.2247, 0.0, 1.2247]) {
            assert!((a - b).abs() < 1e-4);
        }
        let c = NormStats::from_values(&[5.0, 5.0]);
        assert_eq!(c.std, 0.0);
        assert_eq!(c.apply(5.0), 0.0);
    }

    #[test]
    fn dataset_mode_constraints() {
        assert!(IrlConfig::for_mode(DatasetMode::Small).validate().is_ok());
        assert!(IrlConfig::for_mode(DatasetMode::Large).validate().is_ok());
        assert!(IrlConfig { k: 2, ..IrlConfig::for_mode(DatasetMode::Small) }.validate().is_err());
        assert!(IrlConfig { k: 1, ..IrlConfig::for_mode(DatasetMode::Large) }.validate().is_err());
    }

    #[test]
    fn enum_names_round_trip() {
        for v in [VariantInput::Raw, VariantInput::Encoded] {
            assert_eq!(VariantInput::parse(v.as_str()).unwrap(), v);
        }
        assert_eq!(DiscInput::parse("state_action").unwrap(), DiscInput::StateAction);
        assert!(DatasetMode::parse("medium").is_err());
    }

    #[test]
    fn encoded_variant_requires_autoencoder() {
        assert!(Discriminator::new(VariantInput::Encoded, DiscInput::State, 4, None, 0).is_err());
    }
}
