//! Policy and reward networks with explicit forward/backward passes.
//!
//! The convolutional trunk is the DQN stack (32@8×8/4, 64@4×4/2, 64@3×3/1).
//! The policy uses it with ReLU and shares it between a logits head and a value
//! head. The raw reward network follows each conv with batch norm and leaky ReLU,
//! optionally concatenates a one-hot action, and ends in two dense layers. The
//! encoded reward network is a small MLP over an autoencoder embedding.

use gameirl_nn::layers::{self, BatchNormCache, ConvCache, ConvGeom};
use gameirl_nn::ops;
use gameirl_nn::{init, ParamSet, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{FRAME_H, FRAME_W, NUM_ACTIONS};
use crate::error::{Error, Result};

pub const TRUNK_OUT: usize = 7 * 7 * 64;
pub const POLICY_HIDDEN: usize = 512;
pub const REWARD_HIDDEN: usize = 512;
pub const ENCODED_HIDDEN: usize = 64;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_MOMENTUM: f64 = 0.99;

/// Batch-norm behaviour: batch statistics while fitting the discriminator,
/// running statistics when serving rewards or probing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Serve,
}

pub fn dqn_geoms(in_c: usize) -> [ConvGeom; 3] {
    [
        ConvGeom::new(FRAME_H, FRAME_W, in_c, 32, 8, 4),
        ConvGeom::new(20, 20, 32, 64, 4, 2),
        ConvGeom::new(9, 9, 64, 64, 3, 1),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrunkAct {
    Relu,
    Leaky,
    /// Batch norm then leaky ReLU; convs carry no bias.
    BnLeaky,
}

#[derive(Debug, Clone)]
pub struct ConvTrunk {
    prefix: &'static str,
    geoms: [ConvGeom; 3],
    act: TrunkAct,
}

#[derive(Debug, Clone)]
pub struct TrunkCache<T> {
    batch: usize,
    cols: Vec<ConvCache<T>>,
    outs: Vec<Vec<T>>,
    bn: Vec<Option<BatchNormCache<T>>>,
}

impl ConvTrunk {
    pub fn new(prefix: &'static str, in_c: usize, act: TrunkAct) -> Self {
        Self { prefix, geoms: dqn_geoms(in_c), act }
    }

    pub fn in_len(&self) -> usize {
        self.geoms[0].in_len()
    }

    pub fn geoms(&self) -> &[ConvGeom; 3] {
        &self.geoms
    }

    fn name(&self, layer: usize, what: &str) -> String {
        format!("{}{}.{}", self.prefix, layer + 1, what)
    }

    pub fn init<T: Scalar, R: Rng>(&self, p: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        for (i, g) in self.geoms.iter().enumerate() {
            let [rows, cols] = g.weight_shape();
            p.insert(self.name(i, "w"), &[rows, cols], init::orthogonal(rows, cols, 2f64.sqrt(), rng), true)?;
            if self.act == TrunkAct::BnLeaky {
                let c = g.out_c;
                p.insert(self.name(i, "gamma"), &[c], vec![T::one(); c], true)?;
                p.insert(self.name(i, "beta"), &[c], vec![T::zero(); c], true)?;
                p.insert(self.name(i, "running_mean"), &[c], vec![T::zero(); c], false)?;
                p.insert(self.name(i, "running_var"), &[c], vec![T::one(); c], false)?;
            } else {
                p.insert(self.name(i, "b"), &[g.out_c], vec![T::zero(); g.out_c], true)?;
            }
        }
        Ok(())
    }

    /// Returns flattened features `[batch, TRUNK_OUT]` and, if asked, a cache.
    pub fn forward<T: Scalar>(
        &self,
        p: &ParamSet<T>,
        x: &[T],
        batch: usize,
        mode: Mode,
        keep_cache: bool,
    ) -> Result<(Vec<T>, Option<TrunkCache<T>>)> {
        if x.len() != batch * self.in_len() {
            return Err(Error::Shape(format!(
                "trunk input: expected {}×{}, got {} values",
                batch,
                self.in_len(),
                x.len()
            )));
        }
        let slope = T::lit(LEAKY_SLOPE);
        let mut cache = TrunkCache { batch, cols: vec![], outs: vec![], bn: vec![] };
        let mut h: Vec<T> = x.to_vec();
        for (i, g) in self.geoms.iter().enumerate() {
            let bias = match self.act {
                TrunkAct::BnLeaky => None,
                _ => Some(p.get(&self.name(i, "b"))?),
            };
            let w = p.get(&self.name(i, "w"))?;
            let (mut y, cols) = if i == 0 {
                layers::conv2d_forward_auto(&h, batch, g, w, bias)?
            } else {
                let (y, cols) = layers::conv2d_forward(&h, batch, g, w, bias)?;
                (y, ConvCache::Cols(cols))
            };
            let mut bn_cache = None;
            match self.act {
                TrunkAct::Relu => layers::relu_inplace(&mut y),
                TrunkAct::Leaky => layers::leaky_relu_inplace(&mut y, slope),
                TrunkAct::BnLeaky => {
                    let running = match mode {
                        Mode::Train => None,
                        Mode::Serve => Some((p.get(&self.name(i, "running_mean"))?, p.get(&self.name(i, "running_var"))?)),
                    };
                    let (z, c) = layers::batchnorm_forward(
                        &y,
                        g.out_c,
                        p.get(&self.name(i, "gamma"))?,
                        p.get(&self.name(i, "beta"))?,
                        running,
                    )?;
                    y = z;
                    bn_cache = c;
                    layers::leaky_relu_inplace(&mut y, slope);
                }
            }
            if keep_cache {
                cache.cols.push(cols);
                cache.outs.push(y.clone());
                cache.bn.push(bn_cache);
            }
            h = y;
        }
        Ok((h, keep_cache.then_some(cache)))
    }

    /// Backward from `dout` (`[batch, TRUNK_OUT]`). Input gradients are not
    /// produced: trunks always sit directly on observations.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamSet<T>,
        cache: &TrunkCache<T>,
        dout: Vec<T>,
        grads: &mut ParamSet<T>,
    ) -> Result<()> {
        let slope = T::lit(LEAKY_SLOPE);
        let mut d = dout;
        for i in (0..3).rev() {
            let g = &self.geoms[i];
            match self.act {
                TrunkAct::Relu => layers::relu_backward(&mut d, &cache.outs[i]),
                TrunkAct::Leaky => layers::leaky_relu_backward(&mut d, &cache.outs[i], slope),
                TrunkAct::BnLeaky => {
                    layers::leaky_relu_backward(&mut d, &cache.outs[i], slope);
                    let bn = cache.bn[i]
                        .as_ref()
                        .ok_or_else(|| Error::InvalidArgument("backward through serve-mode batch norm".into()))?;
                    let gamma = p.get(&self.name(i, "gamma"))?.to_vec();
                    let mut dgamma = vec![T::zero(); g.out_c];
                    let mut dbeta = vec![T::zero(); g.out_c];
                    d = layers::batchnorm_backward(&d, bn, &gamma, &mut dgamma, &mut dbeta);
                    add_into(grads.get_mut(&self.name(i, "gamma"))?, &dgamma);
                    add_into(grads.get_mut(&self.name(i, "beta"))?, &dbeta);
                }
            }
            let w = p.get(&self.name(i, "w"))?;
            let mut dw = vec![T::zero(); w.len()];
            let mut db = (self.act != TrunkAct::BnLeaky).then(|| vec![T::zero(); g.out_c]);
            let dx = layers::conv2d_backward_auto(&d, &cache.cols[i], cache.batch, g, w, &mut dw, db.as_deref_mut(), i > 0);
            add_into(grads.get_mut(&self.name(i, "w"))?, &dw);
            if let Some(db) = db {
                add_into(grads.get_mut(&self.name(i, "b"))?, &db);
            }
            if let Some(dx) = dx {
                d = dx;
            }
        }
        Ok(())
    }

    /// Folds the batch statistics of a training pass into the running buffers.
    pub fn update_running_stats<T: Scalar>(&self, p: &mut ParamSet<T>, cache: &TrunkCache<T>) -> Result<()> {
        if self.act != TrunkAct::BnLeaky {
            return Ok(());
        }
        let m = T::lit(BN_MOMENTUM);
        for i in 0..3 {
            if let Some(bn) = &cache.bn[i] {
                layers::update_running(p.get_mut(&self.name(i, "running_mean"))?, &bn.mean, m);
                layers::update_running(p.get_mut(&self.name(i, "running_var"))?, &bn.var, m);
            }
        }
        Ok(())
    }
}

pub(crate) fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += *b);
}

/// Dense layer helper over a `ParamSet` (`<name>.w`, `<name>.b`).
#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self { name: name.to_string(), in_dim, out_dim }
    }

    fn w(&self) -> String {
        format!("{}.w", self.name)
    }

    fn b(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init<T: Scalar, R: Rng>(&self, p: &mut ParamSet<T>, gain: f64, rng: &mut R) -> Result<()> {
        p.insert(self.w(), &[self.in_dim, self.out_dim], init::orthogonal(self.in_dim, self.out_dim, gain, rng), true)?;
        p.insert(self.b(), &[self.out_dim], vec![T::zero(); self.out_dim], true)?;
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, p: &ParamSet<T>, x: &[T], batch: usize) -> Result<Vec<T>> {
        Ok(layers::linear_forward(x, batch, self.in_dim, self.out_dim, p.get(&self.w())?, Some(p.get(&self.b())?))?)
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamSet<T>,
        x: &[T],
        dy: &[T],
        batch: usize,
        grads: &mut ParamSet<T>,
        want_dx: bool,
    ) -> Result<Option<Vec<T>>> {
        let w = p.get(&self.w())?;
        let mut dw = vec![T::zero(); w.len()];
        let mut db = vec![T::zero(); self.out_dim];
        let dx = layers::linear_backward(dy, x, batch, self.in_dim, self.out_dim, w, &mut dw, Some(&mut db), want_dx);
        add_into(grads.get_mut(&self.w())?, &dw);
        add_into(grads.get_mut(&self.b())?, &db);
        Ok(dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput<T = f32> {
    /// `[batch, NUM_ACTIONS]`
    pub action_logits: Vec<T>,
    pub state_value: Vec<T>,
}

impl<T: Scalar> PolicyOutput<T> {
    pub fn batch(&self) -> usize {
        self.state_value.len()
    }

    pub fn logits(&self, i: usize) -> &[T] {
        &self.action_logits[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS]
    }

    /// `log π(a_i | s_i)` for every row.
    pub fn log_probs(&self, actions: &[usize]) -> Vec<T> {
        actions
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let l = self.logits(i);
                l[a] - ops::logsumexp(l)
            })
            .collect()
    }
}

pub struct PolicyCache<T> {
    trunk: TrunkCache<T>,
    features: Vec<T>,
    hidden: Vec<T>,
}

/// Actor-critic network over stacked frames.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub stack: usize,
    trunk: ConvTrunk,
    fc: Dense,
    pi: Dense,
    value: Dense,
}

pub const POLICY_ARCH: &str = "policy-dqn";

impl PolicyNet {
    pub fn new(stack: usize) -> Self {
        Self {
            stack,
            trunk: ConvTrunk::new("conv", stack, TrunkAct::Relu),
            fc: Dense::new("fc", TRUNK_OUT, POLICY_HIDDEN),
            pi: Dense::new("pi", POLICY_HIDDEN, NUM_ACTIONS),
            value: Dense::new("v", POLICY_HIDDEN, 1),
        }
    }

    pub fn input_len(&self) -> usize {
        self.trunk.in_len()
    }

    /// Orthogonal weights (gain √2; 0.01 on the logits head, 1 on the value head), zero biases.
    pub fn init<T: Scalar>(&self, seed: u64) -> Result<ParamSet<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new(format!("{POLICY_ARCH}/stack{}", self.stack));
        self.trunk.init(&mut p, &mut rng)?;
        self.fc.init(&mut p, 2f64.sqrt(), &mut rng)?;
        self.pi.init(&mut p, 0.01, &mut rng)?;
        self.value.init(&mut p, 1.0, &mut rng)?;
        Ok(p)
    }

    pub fn forward<T: Scalar>(&self, p: &ParamSet<T>, x: &[T], batch: usize) -> Result<PolicyOutput<T>> {
        Ok(self.run(p, x, batch, false)?.0)
    }

    pub fn forward_train<T: Scalar>(
        &self,
        p: &ParamSet<T>,
        x: &[T],
        batch: usize,
    ) -> Result<(PolicyOutput<T>, PolicyCache<T>)> {
        let (out, cache) = self.run(p, x, batch, true)?;
        Ok((out, cache.expect("cache requested")))
    }

    fn run<T: Scalar>(
        &self,
        p: &ParamSet<T>,
        x: &[T],
        batch: usize,
        keep: bool,
    ) -> Result<(PolicyOutput<T>, Option<PolicyCache<T>>)> {
        let (features, trunk) = self.trunk.forward(p, x, batch, Mode::Serve, keep)?;
        let mut hidden = self.fc.forward(p, &features, batch)?;
        layers::relu_inplace(&mut hidden);
        let action_logits = self.pi.forward(p, &hidden, batch)?;
        let state_value = self.value.forward(p, &hidden, batch)?;
        let cache = trunk.map(|trunk| PolicyCache { trunk, features, hidden });
        Ok((PolicyOutput { action_logits, state_value }, cache))
    }

    /// Accumulates parameter gradients given `dL/dlogits` and `dL/dvalue`.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamSet<T>,
        cache: &PolicyCache<T>,
        dlogits: &[T],
        dvalue: &[T],
        grads: &mut ParamSet<T>,
    ) -> Result<()> {
        let batch = dvalue.len();
        let mut dh = self.pi.backward(p, &cache.hidden, dlogits, batch, grads, true)?.unwrap();
        let dh2 = self.value.backward(p, &cache.hidden, dvalue, batch, grads, true)?.unwrap();
        add_into(&mut dh, &dh2);
        layers::relu_backward(&mut dh, &cache.hidden);
        let dfeat = self.fc.backward(p, &cache.features, &dh, batch, grads, true)?.unwrap();
        self.trunk.backward(p, &cache.trunk, dfeat, grads)
    }
}

/// One-hot action rows `[batch, NUM_ACTIONS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionOneHot {
    rows: usize,
    data: Vec<f32>,
}

impl ActionOneHot {
    pub fn from_actions(actions: &[usize]) -> Result<Self> {
        let mut data = vec![0.0; actions.len() * NUM_ACTIONS];
        for (i, &a) in actions.iter().enumerate() {
            if a >= NUM_ACTIONS {
                return Err(Error::InvalidArgument(format!("action {a} out of range")));
            }
            data[i * NUM_ACTIONS + a] = 1.0;
        }
        Ok(Self { rows: actions.len(), data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardInputKind {
    /// Stacked frames with this many channels.
    Raw { stack: usize },
    /// Autoencoder embedding of this width.
    Encoded { embed_dim: usize },
}

pub struct RewardCache<T> {
    batch: usize,
    trunk: Option<TrunkCache<T>>,
    /// Inputs to each dense layer, in order.
    dense_inputs: Vec<Vec<T>>,
    /// Post-activation outputs of hidden dense layers.
    hidden_outs: Vec<Vec<T>>,
}

/// `f_θ(s, a)`: the learned reward, raw-pixel or embedding variant.
#[derive(Debug, Clone)]
pub struct RewardNet {
    kind: RewardInputKind,
    with_action: bool,
    trunk: Option<ConvTrunk>,
    dense: Vec<Dense>,
}

pub const REWARD_ARCH: &str = "reward";

impl RewardNet {
    pub fn raw(stack: usize, with_action: bool) -> Self {
        let extra = if with_action { NUM_ACTIONS } else { 0 };
        Self {
            kind: RewardInputKind::Raw { stack },
            with_action,
            trunk: Some(ConvTrunk::new("conv", stack, TrunkAct::BnLeaky)),
            dense: vec![Dense::new("fc1", TRUNK_OUT + extra, REWARD_HIDDEN), Dense::new("fc2", REWARD_HIDDEN, 1)],
        }
    }

    pub fn encoded(embed_dim: usize, with_action: bool) -> Self {
        let extra = if with_action { NUM_ACTIONS } else { 0 };
        Self {
            kind: RewardInputKind::Encoded { embed_dim },
            with_action,
            trunk: None,
            dense: vec![
                Dense::new("fc1", embed_dim + extra, ENCODED_HIDDEN),
                Dense::new("fc2", ENCODED_HIDDEN, ENCODED_HIDDEN),
                Dense::new("fc3", ENCODED_HIDDEN, 1),
            ],
        }
    }

    pub fn kind(&self) -> RewardInputKind {
        self.kind
    }

    pub fn with_action(&self) -> bool {
        self.with_action
    }

    /// Values per sample the network expects.
    pub fn input_len(&self) -> usize {
        match self.kind {
            RewardInputKind::Raw { stack } => FRAME_H * FRAME_W * stack,
            RewardInputKind::Encoded { embed_dim } => embed_dim,
        }
    }

    pub fn arch_tag(&self) -> String {
        let input = if self.with_action { "sa" } else { "s" };
        match self.kind {
            RewardInputKind::Raw { stack } => format!("{REWARD_ARCH}-raw/stack{stack}/{input}"),
            RewardInputKind::Encoded { embed_dim } => format!("{REWARD_ARCH}-encoded/e{embed_dim}/{input}"),
        }
    }

    pub fn init<T: Scalar>(&self, seed: u64) -> Result<ParamSet<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new(self.arch_tag());
        if let Some(t) = &self.trunk {
            t.init(&mut p, &mut rng)?;
        }
        let last = self.dense.len() - 1;
        for (i, d) in self.dense.iter().enumerate() {
            d.init(&mut p, if i == last { 1.0 } else { 2f64.sqrt() }, &mut rng)?;
        }
        Ok(p)
    }

    fn check_actions(&self, actions: Option<&ActionOneHot>, batch: usize) -> Result<()> {
        match (self.with_action, actions) {
            (true, None) => Err(Error::InvalidArgument("state-action reward network needs actions".into())),
            (false, Some(_)) => Err(Error::InvalidArgument("state-only reward network takes no actions".into())),
            (true, Some(a)) if a.rows() != batch => {
                Err(Error::Shape(format!("{} action rows for batch {batch}", a.rows())))
            }
            _ => Ok(()),
        }
    }

    fn concat_actions<T: Scalar>(&self, h: Vec<T>, width: usize, batch: usize, actions: Option<&ActionOneHot>) -> Vec<T> {
        match actions {
            None => h,
            Some(a) => {
                let mut out = Vec::with_capacity(batch * (width + NUM_ACTIONS));
                for i in 0..batch {
                    out.extend_from_slice(&h[i * width..(i + 1) * width]);
                    out.extend(a.row(i).iter().map(|&v| T::lit(v as f64)));
                }
                out
            }
        }
    }

    /// Rewards `f` for a batch. `x` holds `batch * input_len()` values.
    pub fn forward<T: Scalar>(
        &self,
        p: &ParamSet<T>,
        x: &[T],
        batch: usize,
        actions: Option<&ActionOneHot>,
        mode: Mode,
    ) -> Result<Vec<T>> {
        Ok(self.run(p, x, batch, actions, mode, false)?.0)
    }

    pub fn forward_train<T: Scalar>(
        &self,
        p: &ParamSet<T>,
        x: &[T],
        batch: usize,
        actions: Option<&ActionOneHot>,
        mode: Mode,
    ) -> Result<(Vec<T>, RewardCache<T>)> {
        let (f, c) = self.run(p, x, batch, actions, mode, true)?;
        Ok((f, c.expect("cache requested")))
    }

    fn run<T: Scalar>(
        &self,
        p: &ParamSet<T>,
        x: &[T],
        batch: usize,
        actions: Option<&ActionOneHot>,
        mode: Mode,
        keep: bool,
    ) -> Result<(Vec<T>, Option<RewardCache<T>>)> {
        self.check_actions(actions, batch)?;
        if x.len() != batch * self.input_len() {
            return Err(Error::Shape(format!(
                "reward input: expected {}×{}, got {} values",
                batch,
                self.input_len(),
                x.len()
            )));
        }
        let (features, width, trunk) = match &self.trunk {
            Some(t) => {
                let (f, c) = t.forward(p, x, batch, mode, keep)?;
                (f, TRUNK_OUT, c)
            }
            None => (x.to_vec(), self.input_len(), None),
        };
        let mut h = self.concat_actions(features, width, batch, actions);
        let slope = T::lit(LEAKY_SLOPE);
        let mut cache = RewardCache { batch, trunk, dense_inputs: vec![], hidden_outs: vec![] };
        let last = self.dense.len() - 1;
        for (i, d) in self.dense.iter().enumerate() {
            let mut y = d.forward(p, &h, batch)?;
            if i < last {
                layers::leaky_relu_inplace(&mut y, slope);
                if keep {
                    cache.hidden_outs.push(y.clone());
                }
            }
            if keep {
                cache.dense_inputs.push(std::mem::replace(&mut h, y));
            } else {
                h = y;
            }
        }
        Ok((h, keep.then_some(cache)))
    }

    /// Accumulates parameter gradients from `df`. Returns the input gradient for
    /// the encoded variant (raw trunks sit on pixels and produce none).
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamSet<T>,
        cache: &RewardCache<T>,
        df: &[T],
        grads: &mut ParamSet<T>,
    ) -> Result<Option<Vec<T>>> {
        let batch = cache.batch;
        let slope = T::lit(LEAKY_SLOPE);
        let mut d = df.to_vec();
        let last = self.dense.len() - 1;
        for i in (0..self.dense.len()).rev() {
            if i < last {
                layers::leaky_relu_backward(&mut d, &cache.hidden_outs[i], slope);
            }
            d = self.dense[i]
                .backward(p, &cache.dense_inputs[i], &d, batch, grads, true)?
                .expect("dx requested");
        }
        let width = self.dense[0].in_dim - if self.with_action { NUM_ACTIONS } else { 0 };
        let dfeat: Vec<T> = if self.with_action {
            d.chunks_exact(self.dense[0].in_dim).flat_map(|r| r[..width].iter().copied()).collect()
        } else {
            d
        };
        match (&self.trunk, &cache.trunk) {
            (Some(t), Some(tc)) => {
                t.backward(p, tc, dfeat, grads)?;
                Ok(None)
            }
            (None, _) => Ok(Some(dfeat)),
            (Some(_), None) => Err(Error::InvalidArgument("missing trunk cache".into())),
        }
    }

    pub fn update_running_stats<T: Scalar>(&self, p: &mut ParamSet<T>, cache: &RewardCache<T>) -> Result<()> {
        match (&self.trunk, &cache.trunk) {
            (Some(t), Some(tc)) => t.update_running_stats(p, tc),
            _ => Ok(()),
        }
    }
}

/// Draws an action from `softmax(logits)`; returns it with its log-probability.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f32], rng: &mut R) -> Result<(usize, f32)> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite logits {logits:?}")));
    }
    let lse = ops::logsumexp(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0f64;
    let mut chosen = logits.len() - 1;
    for (i, &l) in logits.iter().enumerate() {
        acc += ((l - lse) as f64).exp();
        if u < acc {
            chosen = i;
            break;
        }
    }
    Ok((chosen, logits[chosen] - lse))
}

/// Highest-logit action, ties to the lowest index.
pub fn greedy_action(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best
}
