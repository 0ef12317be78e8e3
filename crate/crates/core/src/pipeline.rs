//! Run configuration, trajectory archives, and the commands behind the CLI:
//! expert training, demonstration and corpus collection, autoencoder and IRL
//! training, evaluation, the FPR probe, the ablation grid, plots, and the
//! end-to-end pipeline.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use gameirl_nn::ParamSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoenc::{train_autoencoder, AEParams, AeConfig, AeHistoryRow, AeMode};
use crate::envs::{collect_random_frames, Catcher, CatcherConfig, FrameCorpus, Observation, FRAME_H, FRAME_W};
use crate::error::{Error, Result};
use crate::eval::{
    compare_reconstructions, emit_plots, evaluate_policy, play_episode, probe_fpr, read_irl_history,
    read_run_irl_config, run_ablation_grid, EvalReport, FPRReport, GridCell, GridRow, PlotOutputs,
    ReconstructionReport, STATUS_OK,
};
use crate::irl::{airl_train, DatasetMode, DemoSet, DiscInput, Discriminator, IrlConfig, IrlRun, Trajectory, VariantInput};
use crate::nets::{PolicyNet, POLICY_ARCH};
use crate::rl::{fmt_f, train_forward_rl, write_rl_history, Control, GroundTruth, PpoConfig};

/// Set to `1` to request the single-threaded, bitwise-reproducible mode.
pub const STRICT_ENV: &str = "GAMEIRL_STRICT";
pub const CONFIG_SNAPSHOT: &str = "config.txt";
pub const ENV_ID: &str = "catcher";

/// Every computation here runs on one thread, so strict mode changes nothing
/// numerically; the flag is still read and recorded with each run.
pub fn strict_mode() -> bool {
    std::env::var(STRICT_ENV).is_ok_and(|v| v == "1")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Bool,
    Text,
    /// An integer or `auto`.
    AutoInt,
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub kind: Kind,
    pub help: &'static str,
}

macro_rules! keys {
    ($($k:literal $d:literal $kind:ident $h:literal;)+) => {
        pub const KEYS: &[KeySpec] = &[$(KeySpec { key: $k, default: $d, kind: Kind::$kind, help: $h }),+];
    };
}

keys! {
    "seed" "0" Int "base seed for every stage";
    "episode_length" "500" Int "Catcher steps per episode";
    "stack" "4" Int "frames per observation";
    "rollout_length" "1024" Int "environment steps per rollout";
    "gamma" "0.99" Float "discount";
    "lam" "0.95" Float "GAE lambda";
    "clip" "0.1" Float "PPO ratio clip";
    "ppo_epochs" "4" Int "PPO epochs per rollout";
    "ppo_minibatch" "256" Int "PPO minibatch size";
    "entropy_coef" "0.01" Float "entropy bonus weight";
    "value_coef" "0.5" Float "value loss weight";
    "learning_rate" "0.00025" Float "PPO Adam learning rate";
    "max_grad_norm" "0.5" Float "global gradient norm clip";
    "adam_eps" "0.00001" Float "PPO Adam epsilon";
    "expert_steps" "1048576" Int "expert environment-step budget";
    "expert_threshold_frac" "0.8" Float "expert gate as a fraction of the maximum return";
    "expert_window" "20" Int "recent episodes averaged before a gate evaluation";
    "expert_eval_episodes" "10" Int "episodes in each expert gate evaluation";
    "demos" "8" Int "training demonstrations";
    "heldout_demos" "8" Int "held-out demonstrations";
    "random_frames" "50000" Int "random-play frames for autoencoder training";
    "heldout_frames" "5000" Int "random-play frames for reconstruction reports";
    "ae_mode" "pixel_class" Text "autoencoder decoder: pixel_class or mse";
    "ae_classes" "8" Int "pixel classes";
    "ae_embed_dim" "32" Int "embedding size";
    "ae_epochs" "20" Int "autoencoder epochs";
    "ae_batch" "64" Int "autoencoder minibatch";
    "ae_learning_rate" "0.001" Float "autoencoder Adam learning rate";
    "variant" "raw" Text "discriminator input: raw or encoded";
    "dataset_mode" "large" Text "small or large";
    "disc_input" "state_action" Text "state or state_action";
    "k" "auto" AutoInt "rollouts in the replay buffer (auto: 1 small, 8 large)";
    "samples_per_label" "auto" AutoInt "discriminator samples per label (auto: 512 small, 2048 large)";
    "disc_epochs" "4" Int "discriminator epochs per round";
    "disc_minibatch" "256" Int "discriminator minibatch";
    "disc_lr" "0.0001" Float "discriminator Adam learning rate";
    "rounds" "300" Int "IRL rounds";
    "checkpoint_every" "25" Int "rounds between IRL checkpoints";
    "eval_episodes" "10" Int "episodes per policy evaluation";
    "greedy" "false" Bool "evaluate with argmax actions";
    "grid_seeds" "0,1,2" Text "comma-separated grid seeds";
    "grid_cells" "all" Text "comma-separated cells such as raw-large-state_action, or all";
    "recon_grid_frames" "8" Int "frames in the reconstruction image grid";
}

pub fn key_spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

fn check_kind(spec: &KeySpec, value: &str) -> Result<()> {
    let ok = match spec.kind {
        Kind::Int => value.parse::<u64>().is_ok(),
        Kind::Float => value.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::Bool => matches!(value, "true" | "false"),
        Kind::Text => true,
        Kind::AutoInt => value == "auto" || value.parse::<u64>().is_ok(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{} expects {:?}, got {value:?}", spec.key, spec.kind)))
    }
}

/// Resolved flat configuration. Precedence: CLI > file > defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|k| (k.key, k.default.to_string())).collect() }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let spec = key_spec(key).ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        let value = value.trim();
        check_kind(spec, value)?;
        self.values.insert(spec.key, value.to_string());
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", i + 1)))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn resolve(file: Option<&Path>, cli: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in Self::parse_text(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in cli {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("config key {key} is not declared"))
    }

    pub fn int(&self, key: &str) -> usize {
        self.get(key).parse().expect("validated on set")
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").parse().expect("validated on set")
    }

    pub fn float(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated on set")
    }

    pub fn flag(&self, key: &str) -> bool {
        self.get(key) == "true"
    }

    fn auto(&self, key: &str) -> Option<usize> {
        match self.get(key) {
            "auto" => None,
            v => Some(v.parse().expect("validated on set")),
        }
    }

    /// Snapshot text in declaration order; parses back to the same config.
    pub fn to_text(&self) -> String {
        let mut s = format!("# resolved configuration ({STRICT_ENV}={})\n", u8::from(strict_mode()));
        for k in KEYS {
            s.push_str(&format!("{} = {}\n", k.key, self.get(k.key)));
        }
        s
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_SNAPSHOT), self.to_text())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.catcher_checked()?;
        self.ppo().validate()?;
        self.ae_mode()?;
        self.irl_config()?;
        self.grid_seeds()?;
        self.grid_cells()?;
        if self.int("rollout_length") == 0 || self.int("expert_steps") % self.int("rollout_length") != 0 {
            return Err(Error::Config("expert_steps must be a positive multiple of rollout_length".into()));
        }
        for key in ["demos", "heldout_demos", "random_frames", "heldout_frames", "eval_episodes", "expert_eval_episodes", "expert_window"] {
            if self.int(key) == 0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        Ok(())
    }

    fn catcher_checked(&self) -> Result<CatcherConfig> {
        let c = self.catcher();
        if c.episode_length == 0 || c.stack == 0 {
            return Err(Error::Config("episode_length and stack must be positive".into()));
        }
        Ok(c)
    }

    pub fn catcher(&self) -> CatcherConfig {
        CatcherConfig { episode_length: self.int("episode_length"), stack: self.int("stack"), ..Default::default() }
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            gamma: self.float("gamma"),
            lam: self.float("lam"),
            clip: self.float("clip"),
            epochs: self.int("ppo_epochs"),
            minibatch: self.int("ppo_minibatch"),
            entropy_coef: self.float("entropy_coef"),
            value_coef: self.float("value_coef"),
            learning_rate: self.float("learning_rate"),
            max_grad_norm: self.float("max_grad_norm"),
            adam_eps: self.float("adam_eps"),
        }
    }

    pub fn ae_mode(&self) -> Result<AeMode> {
        AeMode::parse(self.get("ae_mode"))
    }

    pub fn ae_config(&self, mode: AeMode) -> AeConfig {
        AeConfig {
            mode,
            classes: self.int("ae_classes"),
            embed_dim: self.int("ae_embed_dim"),
            epochs: self.int("ae_epochs"),
            batch: self.int("ae_batch"),
            learning_rate: self.float("ae_learning_rate"),
            seed: self.seed(),
        }
    }

    pub fn irl_config(&self) -> Result<IrlConfig> {
        let mode = DatasetMode::parse(self.get("dataset_mode"))?;
        let base = IrlConfig::for_mode(mode);
        let cfg = IrlConfig {
            k: self.auto("k").unwrap_or(base.k),
            samples_per_label: self.auto("samples_per_label").unwrap_or(base.samples_per_label),
            disc_epochs: self.int("disc_epochs"),
            disc_minibatch: self.int("disc_minibatch"),
            disc_lr: self.float("disc_lr"),
            variant: VariantInput::parse(self.get("variant"))?,
            disc_input: DiscInput::parse(self.get("disc_input"))?,
            rounds: self.int("rounds"),
            dataset_mode: mode,
            rollout_length: self.int("rollout_length"),
            stack: self.int("stack"),
            checkpoint_every: self.int("checkpoint_every"),
            ppo: self.ppo(),
            seed: self.seed(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grid_seeds(&self) -> Result<Vec<u64>> {
        self.get("grid_seeds")
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("grid_seeds: bad seed {s:?}"))))
            .collect()
    }

    pub fn grid_cells(&self) -> Result<Vec<GridCell>> {
        let v = self.get("grid_cells");
        if v == "all" {
            return Ok(GridCell::all());
        }
        v.split(',')
            .map(|label| {
                GridCell::all()
                    .into_iter()
                    .find(|c| c.label() == label.trim())
                    .ok_or_else(|| Error::Config(format!("grid_cells: unknown cell {label:?}")))
            })
            .collect()
    }

    /// Threshold on mean episode return for the expert gate.
    pub fn expert_threshold(&self) -> f64 {
        self.float("expert_threshold_frac") * self.catcher().max_return() as f64
    }
}

/// Exit code for a failed command: 1 usage, 3 divergence, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_divergence() {
        3
    } else if matches!(e.root(), Error::Config(_)) {
        1
    } else {
        2
    }
}

/// Progress lines to stderr and, when attached, a log file.
#[derive(Default)]
pub struct Logger {
    file: Option<(PathBuf, File)>,
    pub quiet: bool,
}

impl Logger {
    pub fn to_file(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(Self { file: Some((path.to_path_buf(), File::create(path)?)), quiet: false })
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|f| f.0.as_path())
    }

    pub fn line(&mut self, msg: impl AsRef<str>) {
        let msg = msg.as_ref();
        if !self.quiet {
            eprintln!("{msg}");
        }
        if let Some((_, f)) = &mut self.file {
            let _ = writeln!(f, "{msg}");
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtypeTags {
    pub observations: String,
    pub actions: String,
    pub rewards: String,
}

impl Default for DtypeTags {
    fn default() -> Self {
        Self { observations: "uint8".into(), actions: "int32".into(), rewards: "float32".into() }
    }
}

/// Manifest of a trajectory archive; the blob holds every observation
/// (trajectory-major, HWC bytes), then every action as i32, then every reward
/// as f32 when present, all little-endian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub n_trajectories: usize,
    pub lengths: Vec<usize>,
    /// Height, width, stacked frames.
    pub obs_shape: [usize; 3],
    pub dtypes: DtypeTags,
    pub env_id: String,
    pub seed: u64,
    pub has_rewards: bool,
    /// Reset seed of each episode.
    pub episode_seeds: Vec<u64>,
}

impl TrajectoryManifest {
    pub fn obs_bytes(&self) -> usize {
        self.obs_shape.iter().product()
    }

    pub fn blob_len(&self) -> usize {
        let n: usize = self.lengths.iter().sum();
        n * self.obs_bytes() + n * 4 + if self.has_rewards { n * 4 } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.len() != self.n_trajectories {
            return Err(Error::format("lengths", format!("{} entries for n_trajectories = {}", self.lengths.len(), self.n_trajectories)));
        }
        if self.episode_seeds.len() != self.n_trajectories {
            return Err(Error::format("episode_seeds", format!("{} entries for n_trajectories = {}", self.episode_seeds.len(), self.n_trajectories)));
        }
        if self.obs_shape[0] != FRAME_H || self.obs_shape[1] != FRAME_W || self.obs_shape[2] == 0 {
            return Err(Error::format("obs_shape", format!("expected [{FRAME_H}, {FRAME_W}, stack], got {:?}", self.obs_shape)));
        }
        let want = DtypeTags::default();
        for (field, got, exp) in [
            ("dtypes.observations", &self.dtypes.observations, &want.observations),
            ("dtypes.actions", &self.dtypes.actions, &want.actions),
            ("dtypes.rewards", &self.dtypes.rewards, &want.rewards),
        ] {
            if got != exp {
                return Err(Error::format(field, format!("expected {exp}, got {got}")));
            }
        }
        Ok(())
    }
}

pub fn save_trajectories(demos: &DemoSet, stem: &Path, seed: u64) -> Result<()> {
    let stack = demos.trajectories.iter().flat_map(|t| t.observations.first()).map(Observation::stack).next().unwrap_or(1);
    let has_rewards = !demos.trajectories.is_empty() && demos.trajectories.iter().all(|t| t.rewards.is_some());
    let manifest = TrajectoryManifest {
        n_trajectories: demos.count(),
        lengths: demos.trajectories.iter().map(Trajectory::len).collect(),
        obs_shape: [FRAME_H, FRAME_W, stack],
        dtypes: DtypeTags::default(),
        env_id: ENV_ID.into(),
        seed,
        has_rewards,
        episode_seeds: demos.trajectories.iter().map(|t| t.seed).collect(),
    };
    let mut blob = Vec::with_capacity(manifest.blob_len());
    for t in &demos.trajectories {
        for o in &t.observations {
            if o.stack() != stack {
                return Err(Error::Shape(format!("observation stack {} differs from {stack}", o.stack())));
            }
            blob.extend_from_slice(o.bytes());
        }
    }
    for t in &demos.trajectories {
        for &a in &t.actions {
            blob.extend_from_slice(&(a as i32).to_le_bytes());
        }
    }
    if has_rewards {
        for t in &demos.trajectories {
            for r in t.rewards.as_deref().unwrap_or_default() {
                blob.extend_from_slice(&r.to_le_bytes());
            }
        }
    }
    debug_assert_eq!(blob.len(), manifest.blob_len());
    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(stem.with_extension("bin"), blob)?;
    Ok(())
}

pub fn load_manifest(stem: &Path) -> Result<TrajectoryManifest> {
    let path = stem.with_extension("json");
    let text = fs::read(&path).map_err(|e| Error::format("manifest", format!("{}: {e}", path.display())))?;
    let m: TrajectoryManifest = serde_json::from_slice(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
    m.validate()?;
    Ok(m)
}

pub fn load_trajectories(stem: &Path) -> Result<DemoSet> {
    let m = load_manifest(stem)?;
    let blob_path = stem.with_extension("bin");
    let on_disk = fs::metadata(&blob_path)?.len() as usize;
    if on_disk != m.blob_len() {
        return Err(Error::format(
            "blob",
            format!("{} holds {on_disk} bytes; lengths, obs_shape and has_rewards require {}", blob_path.display(), m.blob_len()),
        ));
    }
    let blob = fs::read(&blob_path)?;
    let obs_bytes = m.obs_bytes();
    let total: usize = m.lengths.iter().sum();
    let (obs_part, rest) = blob.split_at(total * obs_bytes);
    let (act_part, rew_part) = rest.split_at(total * 4);
    let mut trajectories = Vec::with_capacity(m.n_trajectories);
    let mut offset = 0;
    for (i, &len) in m.lengths.iter().enumerate() {
        let observations = (offset..offset + len)
            .map(|s| Observation::from_bytes(obs_part[s * obs_bytes..(s + 1) * obs_bytes].to_vec(), m.obs_shape[2]))
            .collect::<Result<Vec<_>>>()?;
        let actions = (offset..offset + len)
            .map(|s| {
                let a = i32::from_le_bytes(act_part[s * 4..s * 4 + 4].try_into().expect("4 bytes"));
                usize::try_from(a)
                    .ok()
                    .filter(|&a| a < crate::envs::NUM_ACTIONS)
                    .ok_or_else(|| Error::format("actions", format!("action {a} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        let rewards = m.has_rewards.then(|| {
            (offset..offset + len)
                .map(|s| f32::from_le_bytes(rew_part[s * 4..s * 4 + 4].try_into().expect("4 bytes")))
                .collect()
        });
        trajectories.push(Trajectory { observations, actions, rewards, seed: m.episode_seeds[i] });
        offset += len;
    }
    DemoSet::new(trajectories)
}

fn check_layout(loaded: &ParamSet<f32>, expected: &ParamSet<f32>, what: &str) -> Result<()> {
    let a: Vec<_> = loaded.iter().map(|p| (&p.name, &p.shape)).collect();
    let b: Vec<_> = expected.iter().map(|p| (&p.name, &p.shape)).collect();
    if a != b {
        return Err(Error::format("params", format!("{what} checkpoint layout does not match {}", expected.arch())));
    }
    Ok(())
}

pub fn load_policy(stem: &Path) -> Result<(PolicyNet, ParamSet<f32>)> {
    let p = ParamSet::<f32>::load(stem)?;
    let stack = p
        .arch()
        .strip_prefix(&format!("{POLICY_ARCH}/stack"))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("arch", format!("not a policy checkpoint: {}", p.arch())))?;
    let net = PolicyNet::new(stack);
    check_layout(&p, &net.init(0)?, "policy")?;
    Ok((net, p))
}

/// Reward network, policy, and (encoded variant) autoencoder of an IRL run directory.
pub fn load_irl_run(dir: &Path) -> Result<(IrlConfig, Discriminator, PolicyNet, ParamSet<f32>)> {
    let cfg = read_run_irl_config(dir)?;
    let ae = match cfg.variant {
        VariantInput::Encoded => Some(AEParams::load(&dir.join("ae"))?),
        VariantInput::Raw => None,
    };
    let mut disc = Discriminator::new(cfg.variant, cfg.disc_input, cfg.stack, ae, 0)?;
    let params = ParamSet::<f32>::load(&dir.join("reward"))?;
    check_layout(&params, &disc.params, "reward")?;
    if params.arch() != disc.net.arch_tag() {
        return Err(Error::format("arch", format!("expected {}, got {}", disc.net.arch_tag(), params.arch())));
    }
    disc.params = params;
    let (net, policy) = load_policy(&dir.join("policy"))?;
    Ok((cfg, disc, net, policy))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertOutcome {
    pub env_steps: usize,
    pub threshold: f64,
    pub reached: bool,
    pub eval: Option<EvalReport>,
}

/// PPO on the ground-truth reward until a gate evaluation reaches the
/// threshold or the step budget runs out. Writes `policy.*`, `history.csv`,
/// and `expert.json` to `out`; the checkpoint is kept even when the gate fails.
pub fn train_expert(cfg: &RunConfig, out: &Path, log: &mut Logger) -> Result<ExpertOutcome> {
    cfg.write_snapshot(out)?;
    let env_cfg = cfg.catcher();
    let threshold = cfg.expert_threshold();
    let window = cfg.int("expert_window");
    let eval_episodes = cfg.int("expert_eval_episodes");
    let seed = cfg.seed();
    let mut recent: Vec<f64> = Vec::new();
    let mut outcome = ExpertOutcome { env_steps: 0, threshold, reached: false, eval: None };
    log.line(format!("train-expert: threshold {threshold:.3}, budget {} steps", cfg.int("expert_steps")));
    let mut on_rollout = |row: &crate::rl::RlHistoryRow, learner: &crate::rl::PpoLearner| -> Result<Control> {
        outcome.env_steps = row.env_steps;
        if row.mean_gt_return.is_finite() {
            recent.push(row.mean_gt_return);
        }
        let tail = &recent[recent.len().saturating_sub(window)..];
        let avg = if tail.is_empty() { f64::NAN } else { tail.iter().sum::<f64>() / tail.len() as f64 };
        log.line(format!(
            "steps {} return {} recent {} entropy {:.3}",
            row.env_steps,
            fmt_f(row.mean_gt_return),
            fmt_f(avg),
            row.entropy
        ));
        if tail.len() == window && avg >= threshold {
            let eval_seed = seed ^ 0x5eed_e7a1 ^ row.env_steps as u64;
            let r = evaluate_policy(&learner.net, &learner.params, || Catcher::new(env_cfg), eval_episodes, eval_seed, false)?;
            log.line(format!("gate evaluation: mean {:.3} ± {:.3}", r.mean_return, r.std_return));
            outcome.eval = Some(r);
            if r.mean_return >= threshold {
                outcome.reached = true;
                return Ok(Control::Stop);
            }
        }
        Ok(Control::Continue)
    };
    let (params, history) = train_forward_rl(
        || Catcher::new(env_cfg),
        env_cfg.stack,
        cfg.ppo(),
        cfg.int("expert_steps"),
        cfg.int("rollout_length"),
        &mut GroundTruth,
        seed,
        &mut on_rollout,
    )?;
    params.save(&out.join("policy"))?;
    write_rl_history(&out.join("history.csv"), &history)?;
    write_json(&out.join("expert.json"), &outcome)?;
    if !outcome.reached {
        return Err(Error::ThresholdUnmet(format!(
            "expert did not reach mean return {threshold:.3} within {} steps (checkpoint kept at {})",
            outcome.env_steps,
            out.join("policy").display()
        )));
    }
    Ok(outcome)
}

/// Episode reset seeds: training uses even offsets, held-out odd ones, so the
/// two sets are disjoint for any base seed.
pub fn demo_episode_seed(seed: u64, heldout: bool, i: usize) -> u64 {
    (seed << 20).wrapping_add(2 * i as u64 + u64::from(heldout))
}

pub fn collect_demos(net: &PolicyNet, params: &ParamSet<f32>, env_cfg: CatcherConfig, n: usize, seed: u64, heldout: bool) -> Result<DemoSet> {
    let mut env = Catcher::new(env_cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(u64::from(heldout)).wrapping_mul(0x9e37_79b9));
    let trajs = (0..n)
        .map(|i| play_episode(net, params, &mut env, demo_episode_seed(seed, heldout, i), false, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    DemoSet::new(trajs)
}

/// Writes `train.*` and `heldout.*` archives sampled from the expert.
pub fn cmd_collect_demos(cfg: &RunConfig, expert: &Path, out: &Path, log: &mut Logger) -> Result<()> {
    cfg.write_snapshot(out)?;
    let (net, params) = load_policy(expert)?;
    for (name, heldout, n) in [("train", false, cfg.int("demos")), ("heldout", true, cfg.int("heldout_demos"))] {
        let d = collect_demos(&net, &params, cfg.catcher(), n, cfg.seed(), heldout)?;
        let returns: Vec<f64> = d
            .trajectories
            .iter()
            .map(|t| t.rewards.as_deref().unwrap_or_default().iter().map(|&r| r as f64).sum())
            .collect();
        log.line(format!("collect-demos: {n} {name} episodes, returns {returns:?}"));
        save_trajectories(&d, &out.join(name), cfg.seed())?;
    }
    Ok(())
}

/// Writes `train.*` and `heldout.*` random-play frame corpora.
pub fn cmd_collect_random(cfg: &RunConfig, out: &Path, log: &mut Logger) -> Result<()> {
    cfg.write_snapshot(out)?;
    let env = cfg.catcher();
    let seed = cfg.seed();
    collect_random_frames(cfg.int("random_frames"), seed.wrapping_mul(2).wrapping_add(0x100), &env)?.save(&out.join("train"))?;
    collect_random_frames(cfg.int("heldout_frames"), seed.wrapping_mul(2).wrapping_add(0x101), &env)?.save(&out.join("heldout"))?;
    log.line(format!("collect-random: {} + {} frames", cfg.int("random_frames"), cfg.int("heldout_frames")));
    Ok(())
}

pub fn write_ae_history(path: &Path, rows: &[AeHistoryRow]) -> Result<()> {
    let mut s = String::from("epoch,mean_loss\n");
    for r in rows {
        s.push_str(&format!("{},{}\n", r.epoch, fmt_f(r.mean_loss)));
    }
    fs::write(path, s)?;
    Ok(())
}

/// Trains one autoencoder; writes `model.*` and `history.csv`.
pub fn cmd_train_ae(cfg: &RunConfig, mode: AeMode, corpus: &Path, out: &Path, log: &mut Logger) -> Result<AEParams<f32>> {
    cfg.write_snapshot(out)?;
    let corpus = FrameCorpus::load(corpus)?;
    let ae_cfg = cfg.ae_config(mode);
    let (ae, hist) = train_autoencoder(&corpus, &ae_cfg, &mut |r| {
        log.line(format!("train-ae {}: epoch {} loss {:.6}", mode.as_str(), r.epoch, r.mean_loss))
    })?;
    ae.save(&out.join("model"))?;
    write_ae_history(&out.join("history.csv"), &hist)?;
    Ok(ae)
}

/// Trains the configured IRL variant. The run directory receives the history,
/// checkpoints, `irl_config.json`, and for encoded runs a copy of the autoencoder.
pub fn cmd_train_irl(
    cfg: &RunConfig,
    irl: &IrlConfig,
    demos: &Path,
    heldout: Option<&Path>,
    ae: Option<&Path>,
    out: &Path,
    log: &mut Logger,
) -> Result<crate::irl::IrlOutcome> {
    cfg.write_snapshot(out)?;
    let demos = load_trajectories(demos)?;
    let heldout = heldout.map(load_trajectories).transpose()?;
    let ae = match (irl.variant, ae) {
        (VariantInput::Encoded, Some(p)) => {
            let ae = AEParams::load(p)?;
            ae.save(&out.join("ae"))?;
            Some(ae)
        }
        (VariantInput::Encoded, None) => return Err(Error::Config("encoded variant needs --ae".into())),
        (VariantInput::Raw, _) => None,
    };
    let env_cfg = cfg.catcher();
    let mut cb = |r: &crate::irl::IrlHistoryRow| {
        log.line(format!(
            "train-irl: round {} steps {} return {} disc_loss {:.4} fpr {}",
            r.round,
            r.env_steps,
            fmt_f(r.mean_gt_return),
            r.disc_loss,
            fmt_f(r.fpr_heldout)
        ))
    };
    let run = IrlRun { heldout: heldout.as_ref(), out_dir: Some(out), on_round: Some(&mut cb) };
    airl_train(irl, &demos, || Catcher::new(env_cfg), ae, run)
}

pub fn cmd_evaluate(cfg: &RunConfig, policy: &Path, out: Option<&Path>) -> Result<EvalReport> {
    let (net, params) = load_policy(policy)?;
    let env_cfg = cfg.catcher();
    let r = evaluate_policy(&net, &params, || Catcher::new(env_cfg), cfg.int("eval_episodes"), cfg.seed(), cfg.flag("greedy"))?;
    if let Some(dir) = out {
        cfg.write_snapshot(dir)?;
        write_json(&dir.join("eval.json"), &r)?;
    }
    Ok(r)
}

/// Reconstruction report of both autoencoders on a held-out corpus.
pub fn cmd_compare_ae(cfg: &RunConfig, pixel: &Path, mse: &Path, corpus: &Path, out: Option<&Path>) -> Result<ReconstructionReport> {
    let frames = FrameCorpus::load(corpus)?;
    let pixel = AEParams::load(pixel)?;
    let mse = AEParams::load(mse)?;
    if let Some(dir) = out {
        cfg.write_snapshot(dir)?;
    }
    compare_reconstructions(&pixel, &mse, &frames, &cfg.catcher(), out, cfg.int("recon_grid_frames"))
}

pub fn cmd_probe_fpr(run: &Path, heldout: &Path, out: Option<&Path>) -> Result<FPRReport> {
    let (irl, disc, net, policy) = load_irl_run(run)?;
    let h = load_trajectories(heldout)?;
    let r = probe_fpr(&disc, (&net, &policy), &h, irl.k * irl.rollout_length)?;
    if let Some(dir) = out {
        write_json(&dir.join("fpr.json"), &r)?;
    }
    Ok(r)
}

/// Trains and scores every requested cell; cell runs live under `out/cells`.
pub fn cmd_grid(cfg: &RunConfig, demos: &Path, heldout: &Path, ae: Option<&Path>, out: &Path, log: &mut Logger) -> Result<Vec<GridRow>> {
    cfg.write_snapshot(out)?;
    let base = cfg.irl_config()?;
    let cells = cfg.grid_cells()?;
    let seeds = cfg.grid_seeds()?;
    run_ablation_grid(&out.join("grid.csv"), &cells, &seeds, |cell, seed| {
        let irl = cell.apply(&base, seed);
        let dir = out.join("cells").join(format!("{}_s{seed}", cell.label()));
        log.line(format!("grid: {} seed {seed}", cell.label()));
        match cmd_train_irl(cfg, &irl, demos, Some(heldout), ae, &dir, log) {
            Ok(o) => {
                let env_cfg = cfg.catcher();
                let eval = evaluate_policy(
                    &PolicyNet::new(irl.stack),
                    &o.policy,
                    || Catcher::new(env_cfg),
                    cfg.int("eval_episodes"),
                    seed,
                    cfg.flag("greedy"),
                )?;
                write_json(&dir.join("eval.json"), &eval)?;
                Ok(GridRow {
                    variant_input: cell.variant_input,
                    dataset_mode: cell.dataset_mode,
                    disc_input: cell.disc_input,
                    seed,
                    mean_gt_return: eval.mean_return,
                    std_gt_return: eval.std_return,
                    final_fpr: o.history.last().map_or(f64::NAN, |r| r.fpr_heldout),
                    rounds_completed: o.history.len(),
                    status: STATUS_OK.into(),
                })
            }
            Err(e) => {
                let rounds = read_irl_history(&dir.join("history.csv")).map_or(0, |h| h.len());
                let kind = if e.is_divergence() { "diverged" } else { "failed" };
                log.line(format!("grid: {} seed {seed} {kind}: {e}", cell.label()));
                Ok(GridRow::failed(cell, seed, rounds, format!("{kind}: {e}")))
            }
        }
    })
}

pub fn cmd_plot(runs: &[PathBuf], out: &Path) -> Result<PlotOutputs> {
    emit_plots(runs, out)
}

/// Artifacts of each pipeline stage, relative to the run directory.
pub const STAGES: &[(&str, &[&str])] = &[
    ("train-expert", &["expert/policy.json", "expert/policy.bin"]),
    ("collect-demos", &["demos/train.json", "demos/train.bin", "demos/heldout.json", "demos/heldout.bin"]),
    ("collect-random", &["corpus/train.json", "corpus/train.bin", "corpus/heldout.json", "corpus/heldout.bin"]),
    ("train-ae", &["ae/pixel_class/model.json", "ae/pixel_class/model.bin", "ae/mse/model.json", "ae/mse/model.bin"]),
    ("train-irl", &["irl/reward.json", "irl/policy.json", "irl/history.csv"]),
    ("evaluate", &["eval/eval.json", "eval/reconstruction.json"]),
    ("probe-fpr", &["eval/fpr.json"]),
    ("plot", &["plots/history_merged.csv"]),
];

fn stage_done(root: &Path, stage: &str) -> bool {
    STAGES.iter().find(|s| s.0 == stage).is_some_and(|s| s.1.iter().all(|a| root.join(a).exists()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PipelineReport {
    pub ran: Vec<String>,
    pub skipped: Vec<String>,
}

/// Runs every stage in order under `root`. With `resume`, stages whose
/// artifacts all exist are skipped. A failing stage halts the run with its
/// name and log path.
pub fn cmd_pipeline(cfg: &RunConfig, root: &Path, resume: bool, quiet: bool) -> Result<PipelineReport> {
    cfg.write_snapshot(root)?;
    let mut report = PipelineReport::default();
    let irl = cfg.irl_config()?;
    let stage = |name: &str, report: &mut PipelineReport, f: &mut dyn FnMut(&mut Logger) -> Result<()>| -> Result<()> {
        if resume && stage_done(root, name) {
            report.skipped.push(name.to_string());
            return Ok(());
        }
        let log_path = root.join("logs").join(format!("{name}.log"));
        let mut log = Logger::to_file(&log_path)?;
        log.quiet = quiet;
        f(&mut log).map_err(|e| Error::Stage { stage: name.to_string(), log: log_path, source: Box::new(e) })?;
        report.ran.push(name.to_string());
        Ok(())
    };
    stage("train-expert", &mut report, &mut |log| train_expert(cfg, &root.join("expert"), log).map(|_| ()))?;
    stage("collect-demos", &mut report, &mut |log| cmd_collect_demos(cfg, &root.join("expert/policy"), &root.join("demos"), log))?;
    stage("collect-random", &mut report, &mut |log| cmd_collect_random(cfg, &root.join("corpus"), log))?;
    stage("train-ae", &mut report, &mut |log| {
        for mode in [AeMode::PixelClass, AeMode::Mse] {
            cmd_train_ae(cfg, mode, &root.join("corpus/train"), &root.join("ae").join(mode.as_str()), log)?;
        }
        Ok(())
    })?;
    stage("train-irl", &mut report, &mut |log| {
        let ae = root.join("ae/pixel_class/model");
        cmd_train_irl(cfg, &irl, &root.join("demos/train"), Some(&root.join("demos/heldout")), Some(&ae), &root.join("irl"), log)
            .map(|_| ())
    })?;
    stage("evaluate", &mut report, &mut |log| {
        let r = cmd_evaluate(cfg, &root.join("irl/policy"), Some(&root.join("eval")))?;
        log.line(format!("evaluate: mean return {:.3} ± {:.3}", r.mean_return, r.std_return));
        let rr = cmd_compare_ae(
            cfg,
            &root.join("ae/pixel_class/model"),
            &root.join("ae/mse/model"),
            &root.join("corpus/heldout"),
            Some(&root.join("eval")),
        )?;
        log.line(format!("evaluate: reconstruction {rr:?}"));
        Ok(())
    })?;
    stage("probe-fpr", &mut report, &mut |log| {
        let r = cmd_probe_fpr(&root.join("irl"), &root.join("demos/heldout"), Some(&root.join("eval")))?;
        log.line(format!("probe-fpr: {:.4} over {} samples", r.fpr, r.n_samples));
        Ok(())
    })?;
    stage("plot", &mut report, &mut |_| cmd_plot(&[root.join("irl")], &root.join("plots")).map(|_| ()))?;
    Ok(report)
}
