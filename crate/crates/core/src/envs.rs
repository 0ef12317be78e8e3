//! A deterministic Catcher clone rendered natively as 84×84 grayscale, plus
//! frame stacking and random-exploration frame collection.
//!
//! Frames are stored as quantised luminance (`u8`, value / 255). The renderer
//! only ever emits 0.0 and 1.0, both of which quantise exactly.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use gameirl_nn::Scalar;

use crate::error::{Error, Result};

pub const FRAME_H: usize = 84;
pub const FRAME_W: usize = 84;
pub const FRAME_PIXELS: usize = FRAME_H * FRAME_W;
pub const DEFAULT_STACK: usize = 4;

/// LEFT, NOOP, RIGHT.
pub const NUM_ACTIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Left = 0,
    Noop = 1,
    Right = 2,
}

impl Action {
    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Action::Left),
            1 => Ok(Action::Noop),
            2 => Ok(Action::Right),
            _ => Err(Error::InvalidArgument(format!("action index {i} out of range"))),
        }
    }
}

/// Single-channel 84×84 render.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawFrame {
    pixels: Vec<u8>,
}

impl RawFrame {
    pub fn blank() -> Self {
        Self { pixels: vec![0; FRAME_PIXELS] }
    }

    pub fn from_bytes(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != FRAME_PIXELS {
            return Err(Error::Shape(format!("frame needs {FRAME_PIXELS} pixels, got {}", pixels.len())));
        }
        Ok(Self { pixels })
    }

    /// Quantises luminance values in [0,1].
    pub fn from_luminance(values: &[f32]) -> Result<Self> {
        if values.len() != FRAME_PIXELS {
            return Err(Error::Shape(format!("frame needs {FRAME_PIXELS} pixels, got {}", values.len())));
        }
        Ok(Self {
            pixels: values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
        })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn luminance(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * FRAME_W + col] as f32 / 255.0
    }

    pub fn to_scalars<T: Scalar>(&self) -> Vec<T> {
        let s = T::one() / T::lit(255.0);
        self.pixels.iter().map(|&p| T::from_u8(p).unwrap() * s).collect()
    }
}

/// Stacked frames, HWC layout, newest frame in the last channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    data: Vec<u8>,
    stack: usize,
}

impl Observation {
    pub fn stack(&self) -> usize {
        self.stack
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn from_bytes(data: Vec<u8>, stack: usize) -> Result<Self> {
        if data.len() != FRAME_PIXELS * stack {
            return Err(Error::Shape(format!(
                "observation needs {} bytes, got {}",
                FRAME_PIXELS * stack,
                data.len()
            )));
        }
        Ok(Self { data, stack })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channel(&self, c: usize) -> RawFrame {
        RawFrame {
            pixels: self.data.iter().skip(c).step_by(self.stack).copied().collect(),
        }
    }

    pub fn newest(&self) -> RawFrame {
        self.channel(self.stack - 1)
    }

    /// Appends this observation's luminance values to `out`.
    pub fn write_scalars<T: Scalar>(&self, out: &mut Vec<T>) {
        let s = T::one() / T::lit(255.0);
        out.extend(self.data.iter().map(|&p| T::from_u8(p).unwrap() * s));
    }
}

/// Flattens a batch of observations into network input.
pub fn batch_scalars<'a, T: Scalar, I>(obs: I) -> Vec<T>
where
    I: IntoIterator<Item = &'a Observation>,
{
    let mut out = Vec::new();
    for o in obs {
        o.write_scalars(&mut out);
    }
    out
}

/// Stacks `history` (oldest first, length `stack - 1`) and `raw` (newest).
pub fn preprocess(raw: &RawFrame, history: &[RawFrame], stack: usize) -> Result<Observation> {
    if stack == 0 || history.len() != stack - 1 {
        return Err(Error::Shape(format!(
            "history must hold {} frames, got {}",
            stack.saturating_sub(1),
            history.len()
        )));
    }
    let mut data = vec![0u8; FRAME_PIXELS * stack];
    for (c, frame) in history.iter().chain(std::iter::once(raw)).enumerate() {
        for (px, &v) in frame.pixels.iter().enumerate() {
            data[px * stack + c] = v;
        }
    }
    Ok(Observation { data, stack })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatcherConfig {
    pub paddle_width: usize,
    pub paddle_height: usize,
    pub block_size: usize,
    pub paddle_speed: usize,
    pub episode_length: usize,
    pub stack: usize,
}

impl Default for CatcherConfig {
    fn default() -> Self {
        Self {
            paddle_width: 12,
            paddle_height: 3,
            block_size: 4,
            paddle_speed: 2,
            episode_length: 500,
            stack: DEFAULT_STACK,
        }
    }
}

impl CatcherConfig {
    pub fn paddle_top(&self) -> usize {
        FRAME_H - self.paddle_height
    }

    /// Block row at which its bottom edge reaches the paddle's top row.
    pub fn contact_row(&self) -> usize {
        self.paddle_top() + 1 - self.block_size
    }

    /// Block row at which its bottom edge reaches the bottom of the screen.
    pub fn ground_row(&self) -> usize {
        FRAME_H - self.block_size
    }

    /// Steps from spawn to paddle contact.
    pub fn fall_time(&self) -> usize {
        self.contact_row()
    }

    /// Landings in an episode when every block is caught: the best return.
    pub fn max_return(&self) -> f32 {
        (self.episode_length / self.fall_time()) as f32
    }

    fn max_block_x(&self) -> usize {
        FRAME_W - self.block_size
    }

    fn max_paddle_x(&self) -> usize {
        FRAME_W - self.paddle_width
    }
}

/// Everything the renderer and dynamics depend on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvState {
    pub paddle_x: usize,
    pub block_x: usize,
    pub block_y: usize,
    pub step_count: usize,
    pub rng: ChaCha8Rng,
}

impl EnvState {
    pub fn positions(&self) -> BlockPositions {
        BlockPositions {
            paddle_x: self.paddle_x,
            block_x: self.block_x,
            block_y: self.block_y,
        }
    }
}

/// Object positions without the generator state, kept alongside corpus frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPositions {
    pub paddle_x: usize,
    pub block_x: usize,
    pub block_y: usize,
}

pub fn render(state: &EnvState, cfg: &CatcherConfig) -> RawFrame {
    render_positions(&state.positions(), cfg)
}

pub fn render_positions(pos: &BlockPositions, cfg: &CatcherConfig) -> RawFrame {
    let mut f = RawFrame::blank();
    for r in cfg.paddle_top()..FRAME_H {
        let row = &mut f.pixels[r * FRAME_W..(r + 1) * FRAME_W];
        row[pos.paddle_x..pos.paddle_x + cfg.paddle_width].fill(255);
    }
    for r in pos.block_y..pos.block_y + cfg.block_size {
        let row = &mut f.pixels[r * FRAME_W..(r + 1) * FRAME_W];
        row[pos.block_x..pos.block_x + cfg.block_size].fill(255);
    }
    f
}

/// Pixel mask of the block for the given positions.
pub fn block_mask(pos: &BlockPositions, cfg: &CatcherConfig) -> Vec<bool> {
    let mut m = vec![false; FRAME_PIXELS];
    for r in pos.block_y..pos.block_y + cfg.block_size {
        for c in pos.block_x..pos.block_x + cfg.block_size {
            m[r * FRAME_W + c] = true;
        }
    }
    m
}

#[derive(Debug, Clone)]
pub struct Step {
    pub obs: Observation,
    pub reward: f32,
    pub done: bool,
}

/// Gym-style discrete-action environment.
pub trait Environment {
    fn num_actions(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Observation;
    fn step(&mut self, action: usize) -> Result<Step>;
    fn max_return(&self) -> f32;
}

#[derive(Debug, Clone)]
pub struct Catcher {
    cfg: CatcherConfig,
    state: Option<EnvState>,
    history: VecDeque<RawFrame>,
    done: bool,
}

impl Catcher {
    pub fn new(cfg: CatcherConfig) -> Self {
        Self { cfg, state: None, history: VecDeque::new(), done: false }
    }

    pub fn config(&self) -> &CatcherConfig {
        &self.cfg
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    fn observation(&self) -> Observation {
        let frames: Vec<RawFrame> = self.history.iter().cloned().collect();
        let (newest, older) = frames.split_last().expect("history is never empty after reset");
        preprocess(newest, older, self.cfg.stack).expect("history length maintained")
    }

    fn spawn(cfg: &CatcherConfig, rng: &mut ChaCha8Rng) -> usize {
        rng.random_range(0..=cfg.max_block_x())
    }
}

impl Environment for Catcher {
    fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block_x = Self::spawn(&self.cfg, &mut rng);
        let state = EnvState {
            paddle_x: self.cfg.max_paddle_x() / 2,
            block_x,
            block_y: 0,
            step_count: 0,
            rng,
        };
        let frame = render(&state, &self.cfg);
        self.history = std::iter::repeat_n(frame, self.cfg.stack).collect();
        self.state = Some(state);
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        let action = Action::from_index(action)?;
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let cfg = self.cfg;
        let st = self
            .state
            .as_mut()
            .ok_or_else(|| Error::InvalidArgument("step before reset".into()))?;
        st.paddle_x = match action {
            Action::Left => st.paddle_x.saturating_sub(cfg.paddle_speed),
            Action::Noop => st.paddle_x,
            Action::Right => (st.paddle_x + cfg.paddle_speed).min(cfg.max_paddle_x()),
        };
        st.block_y += 1;
        let mut reward = 0.0;
        if st.block_y == cfg.contact_row() {
            let overlap = st.block_x < st.paddle_x + cfg.paddle_width && st.paddle_x < st.block_x + cfg.block_size;
            if overlap {
                reward = 1.0;
                st.block_y = 0;
                st.block_x = Self::spawn(&cfg, &mut st.rng);
            }
        } else if st.block_y == cfg.ground_row() {
            reward = -1.0;
            st.block_y = 0;
            st.block_x = Self::spawn(&cfg, &mut st.rng);
        }
        st.step_count += 1;
        self.done = st.step_count >= cfg.episode_length;
        let frame = render(st, &cfg);
        self.history.pop_front();
        self.history.push_back(frame);
        Ok(Step { obs: self.observation(), reward, done: self.done })
    }

    fn max_return(&self) -> f32 {
        self.cfg.max_return()
    }
}

/// Single frames gathered under a uniform-random policy.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCorpus {
    pub frames: Vec<RawFrame>,
    /// Ground-truth object positions per frame.
    pub positions: Vec<BlockPositions>,
    pub source_seed: u64,
}

impl FrameCorpus {
    pub fn count(&self) -> usize {
        self.frames.len()
    }

    /// Frames `range` as a new corpus (same seed).
    pub fn slice(&self, range: std::ops::Range<usize>) -> FrameCorpus {
        FrameCorpus {
            frames: self.frames[range.clone()].to_vec(),
            positions: self.positions[range].to_vec(),
            source_seed: self.source_seed,
        }
    }
}

pub fn collect_random_frames(n: usize, seed: u64, cfg: &CatcherConfig) -> Result<FrameCorpus> {
    if n == 0 {
        return Err(Error::InvalidArgument("frame count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Catcher::new(*cfg);
    let mut frames = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    let mut need_reset = true;
    while frames.len() < n {
        let obs = if need_reset {
            need_reset = false;
            env.reset(rng.random())
        } else {
            let step = env.step(rng.random_range(0..NUM_ACTIONS))?;
            need_reset = step.done;
            step.obs
        };
        frames.push(obs.newest());
        positions.push(env.state().expect("reset").positions());
    }
    Ok(FrameCorpus { frames, positions, source_seed: seed })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CorpusManifest {
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
    #[serde(default)]
    positions: Vec<BlockPositions>,
}

impl FrameCorpus {
    /// Writes `<stem>.json` and `<stem>.bin` (u8 luminance × 255, row-major, frame-major).
    pub fn save(&self, stem: &Path) -> Result<()> {
        if let Some(dir) = stem.parent() {
            fs::create_dir_all(dir)?;
        }
        let manifest = CorpusManifest {
            count: self.count(),
            height: FRAME_H,
            width: FRAME_W,
            seed: self.source_seed,
            positions: self.positions.clone(),
        };
        fs::write(stem.with_extension("json"), serde_json::to_vec(&manifest)?)?;
        let mut blob = Vec::with_capacity(self.count() * FRAME_PIXELS);
        for f in &self.frames {
            blob.extend_from_slice(&f.pixels);
        }
        fs::write(stem.with_extension("bin"), blob)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let manifest: CorpusManifest = serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
        if manifest.height != FRAME_H || manifest.width != FRAME_W {
            return Err(Error::format("height", format!("expected {FRAME_H}x{FRAME_W} frames")));
        }
        if manifest.count == 0 {
            return Err(Error::format("count", "corpus must be nonempty"));
        }
        if !manifest.positions.is_empty() && manifest.positions.len() != manifest.count {
            return Err(Error::format("positions", "length differs from count"));
        }
        let blob = fs::read(stem.with_extension("bin"))?;
        if blob.len() != manifest.count * FRAME_PIXELS {
            return Err(Error::format(
                "count",
                format!("blob holds {} bytes, expected {}", blob.len(), manifest.count * FRAME_PIXELS),
            ));
        }
        Ok(FrameCorpus {
            frames: blob.chunks_exact(FRAME_PIXELS).map(|c| RawFrame { pixels: c.to_vec() }).collect(),
            positions: manifest.positions,
            source_seed: manifest.seed,
        })
    }
}
