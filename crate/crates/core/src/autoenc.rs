//! Frame autoencoders: a pixel-class model whose decoder emits per-pixel class
//! logits over a Gaussian mixture with globally shared class means and scales,
//! and a conventional squared-error baseline.
//!
//! Training marginalises the class label inside the log, so the objective is
//! the exact per-pixel mixture likelihood.

use std::path::Path;

use gameirl_nn::layers::{self, ConvGeom};
use gameirl_nn::{init, ops, Adam, ParamSet, Scalar};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{FrameCorpus, RawFrame, FRAME_H, FRAME_PIXELS, FRAME_W};
use crate::error::{Error, Result};
use crate::nets::{add_into, ConvTrunk, Dense, Mode, TrunkAct, TrunkCache, LEAKY_SLOPE, TRUNK_OUT};

pub const SIGMA_MIN: f64 = 1e-3;
pub const DEFAULT_CLASSES: usize = 8;
pub const DEFAULT_EMBED_DIM: usize = 32;
const INIT_SIGMA: f64 = 0.1;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AeMode {
    PixelClass,
    Mse,
}

impl AeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AeMode::PixelClass => "pixel_class",
            AeMode::Mse => "mse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pixel_class" => Ok(AeMode::PixelClass),
            "mse" => Ok(AeMode::Mse),
            _ => Err(Error::Config(format!("unknown autoencoder mode {s:?} (expected pixel_class or mse)"))),
        }
    }
}

/// Class means and standard deviations shared by every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams<T = f64> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
}

impl<T: Scalar> MixtureParams<T> {
    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.is_empty() || self.mu.len() != self.sigma.len() {
            return Err(Error::Shape(format!("mixture: {} means, {} scales", self.mu.len(), self.sigma.len())));
        }
        if self.mu.iter().chain(&self.sigma).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("mixture parameters must be finite".into()));
        }
        if let Some(s) = self.sigma.iter().find(|s| s.as_f64() < SIGMA_MIN) {
            return Err(Error::InvalidArgument(format!("mixture scale {} below {SIGMA_MIN}", s.as_f64())));
        }
        Ok(())
    }
}

/// Per-pixel class logits, `[H, W, K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelClassLogits<T = f32> {
    pub z: Vec<T>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f32>);

/// Gradients of the mean per-pixel NLL of one frame.
#[derive(Debug, Clone)]
pub struct MixtureGrads<T> {
    pub nll: T,
    pub dz: Vec<T>,
    pub dmu: Vec<T>,
    pub dsigma: Vec<T>,
}

fn check_mixture_shapes<T: Scalar>(z: &[T], mix: &MixtureParams<T>, x: &[T]) -> Result<()> {
    mix.validate()?;
    if z.len() != x.len() * mix.k() {
        return Err(Error::Shape(format!(
            "mixture NLL: {} logits for {} pixels and {} classes",
            z.len(),
            x.len(),
            mix.k()
        )));
    }
    Ok(())
}

/// `−(1/n) Σ_pixels log Σ_k softmax(z)_k · N(x; μ_k, σ_k²)`.
pub fn mixture_nll<T: Scalar>(z: &[T], mix: &MixtureParams<T>, x: &[T]) -> Result<T> {
    check_mixture_shapes(z, mix, x)?;
    let k = mix.k();
    let (log_sigma, inv_var) = sigma_terms(mix);
    let mut lsm = vec![T::zero(); k];
    let mut a = vec![T::zero(); k];
    let mut total = T::zero();
    for (zp, &xp) in z.chunks_exact(k).zip(x) {
        ops::log_softmax(zp, &mut lsm);
        for j in 0..k {
            a[j] = lsm[j] + log_normal(xp, mix.mu[j], log_sigma[j], inv_var[j]);
        }
        total -= ops::logsumexp(&a);
    }
    Ok(total / T::from_usize(x.len()).unwrap())
}

fn sigma_terms<T: Scalar>(mix: &MixtureParams<T>) -> (Vec<T>, Vec<T>) {
    let log_sigma = mix.sigma.iter().map(|s| s.ln()).collect();
    let inv_var = mix.sigma.iter().map(|s| T::one() / (*s * *s)).collect();
    (log_sigma, inv_var)
}

#[inline]
fn log_normal<T: Scalar>(x: T, mu: T, log_sigma: T, inv_var: T) -> T {
    let d = x - mu;
    -T::lit(HALF_LN_2PI) - log_sigma - T::lit(0.5) * d * d * inv_var
}

/// NLL and its gradients. With posterior `w_k`:
/// `∂/∂z_k = softmax_k − w_k`, `∂/∂μ_k = −w_k (x−μ_k)/σ_k²`,
/// `∂/∂σ_k = w_k (1/σ_k − (x−μ_k)²/σ_k³)`, all scaled by `1/n`.
pub fn mixture_nll_grad<T: Scalar>(z: &[T], mix: &MixtureParams<T>, x: &[T]) -> Result<MixtureGrads<T>> {
    check_mixture_shapes(z, mix, x)?;
    let k = mix.k();
    let n = T::from_usize(x.len()).unwrap();
    let (log_sigma, inv_var) = sigma_terms(mix);
    let mut dz = vec![T::zero(); z.len()];
    let mut dmu = vec![T::zero(); k];
    let mut dsigma = vec![T::zero(); k];
    let mut lsm = vec![T::zero(); k];
    let mut a = vec![T::zero(); k];
    let mut total = T::zero();
    for (p, (zp, &xp)) in z.chunks_exact(k).zip(x).enumerate() {
        ops::log_softmax(zp, &mut lsm);
        for j in 0..k {
            a[j] = lsm[j] + log_normal(xp, mix.mu[j], log_sigma[j], inv_var[j]);
        }
        let lp = ops::logsumexp(&a);
        total -= lp;
        let dzp = &mut dz[p * k..(p + 1) * k];
        for j in 0..k {
            let w = (a[j] - lp).exp();
            dzp[j] = (lsm[j].exp() - w) / n;
            let d = xp - mix.mu[j];
            dmu[j] -= w * d * inv_var[j];
            dsigma[j] += w * (T::one() / mix.sigma[j] - d * d * inv_var[j] / mix.sigma[j]);
        }
    }
    dmu.iter_mut().chain(dsigma.iter_mut()).for_each(|v| *v /= n);
    Ok(MixtureGrads { nll: total / n, dz, dmu, dsigma })
}

/// Decoder stages: dense to 7×7×64, then transposed convs back to 84×84.
fn decoder_geoms(out_c: usize) -> [ConvGeom; 3] {
    [
        ConvGeom::new(9, 9, 64, 64, 3, 1),
        ConvGeom::new(20, 20, 32, 64, 4, 2),
        ConvGeom::new(FRAME_H, FRAME_W, out_c, 32, 8, 4),
    ]
}

const ARCH_PREFIX: &str = "autoenc";

/// Encoder, decoder and (pixel-class only) mixture parameters in one set.
#[derive(Debug, Clone)]
pub struct AEParams<T: Scalar = f32> {
    pub mode: AeMode,
    pub k: usize,
    pub embed_dim: usize,
    pub params: ParamSet<T>,
}

struct AeNet {
    trunk: ConvTrunk,
    enc_fc: Dense,
    dec_fc: Dense,
    dec: [ConvGeom; 3],
}

struct AeCache<T> {
    trunk: TrunkCache<T>,
    features: Vec<T>,
    embedding: Vec<T>,
    /// Inputs to each transposed conv; entry 0 is the dense output.
    dec_inputs: Vec<Vec<T>>,
    out: Vec<T>,
}

fn dec_name(i: usize, what: &str) -> String {
    format!("dec.t{}.{}", i + 1, what)
}

impl AeNet {
    fn new(mode: AeMode, k: usize, embed_dim: usize) -> Self {
        let out_c = match mode {
            AeMode::PixelClass => k,
            AeMode::Mse => 1,
        };
        Self {
            trunk: ConvTrunk::new("enc.conv", 1, TrunkAct::Leaky),
            enc_fc: Dense::new("enc.fc", TRUNK_OUT, embed_dim),
            dec_fc: Dense::new("dec.fc", embed_dim, TRUNK_OUT),
            dec: decoder_geoms(out_c),
        }
    }

    fn encode<T: Scalar>(&self, p: &ParamSet<T>, x: &[T], batch: usize, keep: bool) -> Result<(Vec<T>, Option<TrunkCache<T>>, Vec<T>)> {
        let (features, cache) = self.trunk.forward(p, x, batch, Mode::Serve, keep)?;
        let e = self.enc_fc.forward(p, &features, batch)?;
        Ok((e, cache, features))
    }

    fn decode<T: Scalar>(&self, p: &ParamSet<T>, e: &[T], batch: usize) -> Result<(Vec<T>, Vec<Vec<T>>)> {
        let slope = T::lit(LEAKY_SLOPE);
        let mut h = self.dec_fc.forward(p, e, batch)?;
        layers::leaky_relu_inplace(&mut h, slope);
        let mut inputs = Vec::with_capacity(3);
        for (i, g) in self.dec.iter().enumerate() {
            let mut y = layers::conv_transpose2d_forward(&h, batch, g, p.get(&dec_name(i, "w"))?, Some(p.get(&dec_name(i, "b"))?))?;
            if i < 2 {
                layers::leaky_relu_inplace(&mut y, slope);
            }
            inputs.push(std::mem::replace(&mut h, y));
        }
        Ok((h, inputs))
    }

    fn forward<T: Scalar>(&self, p: &ParamSet<T>, x: &[T], batch: usize) -> Result<AeCache<T>> {
        let (embedding, trunk, features) = self.encode(p, x, batch, true)?;
        let (out, dec_inputs) = self.decode(p, &embedding, batch)?;
        Ok(AeCache { trunk: trunk.expect("cache requested"), features, embedding, dec_inputs, out })
    }

    fn backward<T: Scalar>(&self, p: &ParamSet<T>, c: &AeCache<T>, dout: Vec<T>, batch: usize, grads: &mut ParamSet<T>) -> Result<()> {
        let slope = T::lit(LEAKY_SLOPE);
        let mut d = dout;
        for i in (0..3).rev() {
            let g = &self.dec[i];
            if i < 2 {
                // The stored input of stage i+1 is the activated output of stage i.
                layers::leaky_relu_backward(&mut d, &c.dec_inputs[i + 1], slope);
            }
            let w = p.get(&dec_name(i, "w"))?;
            let mut dw = vec![T::zero(); w.len()];
            let mut db = vec![T::zero(); g.in_c];
            d = layers::conv_transpose2d_backward(&d, &c.dec_inputs[i], batch, g, w, &mut dw, Some(&mut db), true)
                .expect("dx requested");
            add_into(grads.get_mut(&dec_name(i, "w"))?, &dw);
            add_into(grads.get_mut(&dec_name(i, "b"))?, &db);
        }
        layers::leaky_relu_backward(&mut d, &c.dec_inputs[0], slope);
        let de = self.dec_fc.backward(p, &c.embedding, &d, batch, grads, true)?.expect("dx requested");
        let dfeat = self.enc_fc.backward(p, &c.features, &de, batch, grads, true)?.expect("dx requested");
        self.trunk.backward(p, &c.trunk, dfeat, grads)
    }
}

impl<T: Scalar> AEParams<T> {
    /// Fresh parameters: orthogonal weights, zero biases, μ evenly spaced in
    /// [0, 1] and σ = 0.1 for the pixel-class model.
    pub fn init(mode: AeMode, k: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        if k == 0 || embed_dim == 0 {
            return Err(Error::InvalidArgument("autoencoder needs k ≥ 1 and embed_dim ≥ 1".into()));
        }
        let k = if mode == AeMode::Mse { 1 } else { k };
        let net = AeNet::new(mode, k, embed_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new(arch_tag(mode, k, embed_dim));
        net.trunk.init(&mut p, &mut rng)?;
        net.enc_fc.init(&mut p, 1.0, &mut rng)?;
        net.dec_fc.init(&mut p, 2f64.sqrt(), &mut rng)?;
        for (i, g) in net.dec.iter().enumerate() {
            let [rows, cols] = g.weight_shape();
            let gain = if i < 2 { 2f64.sqrt() } else { 1.0 };
            p.insert(dec_name(i, "w"), &[rows, cols], init::orthogonal(rows, cols, gain, &mut rng), true)?;
            p.insert(dec_name(i, "b"), &[g.in_c], vec![T::zero(); g.in_c], true)?;
        }
        if mode == AeMode::PixelClass {
            let mu: Vec<T> = (0..k)
                .map(|j| T::lit(if k == 1 { 0.5 } else { j as f64 / (k - 1) as f64 }))
                .collect();
            let raw = T::lit(ops::softplus_inv(INIT_SIGMA - SIGMA_MIN));
            p.insert("mix.mu", &[k], mu, true)?;
            p.insert("mix.sigma_raw", &[k], vec![raw; k], true)?;
        }
        Ok(Self { mode, k, embed_dim, params: p })
    }

    fn net(&self) -> AeNet {
        AeNet::new(self.mode, self.k, self.embed_dim)
    }

    /// σ = σ_min + softplus(raw), so the floor holds for any raw value.
    pub fn mixture(&self) -> Result<MixtureParams<T>> {
        if self.mode != AeMode::PixelClass {
            return Err(Error::InvalidArgument("the squared-error autoencoder has no mixture".into()));
        }
        let mu = self.params.get("mix.mu")?.to_vec();
        let sigma = self.params.get("mix.sigma_raw")?.iter().map(|r| T::lit(SIGMA_MIN) + ops::softplus(*r)).collect();
        Ok(MixtureParams { mu, sigma })
    }

    pub fn encode_batch(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        check_frames(x, batch)?;
        Ok(self.net().encode(&self.params, x, batch, false)?.0)
    }

    /// Decoder output for a batch of embeddings: `[batch, H, W, K]` logits in
    /// pixel-class mode, unclamped luminance in squared-error mode.
    pub fn decode_batch(&self, e: &[T], batch: usize) -> Result<Vec<T>> {
        if e.len() != batch * self.embed_dim {
            return Err(Error::Shape(format!("decode: expected {}×{} values, got {}", batch, self.embed_dim, e.len())));
        }
        Ok(self.net().decode(&self.params, e, batch)?.0)
    }

    /// Mean loss over the batch and its parameter gradients.
    pub fn loss_and_grads(&self, x: &[T], batch: usize) -> Result<(T, ParamSet<T>)> {
        check_frames(x, batch)?;
        let net = self.net();
        let cache = net.forward(&self.params, x, batch)?;
        let mut grads = self.params.zeros_like();
        let bf = T::from_usize(batch).unwrap();
        let mut loss = T::zero();
        let mut dout = vec![T::zero(); cache.out.len()];
        match self.mode {
            AeMode::PixelClass => {
                let mix = self.mixture()?;
                let per = FRAME_PIXELS * self.k;
                let mut dmu = vec![T::zero(); self.k];
                let mut dsigma = vec![T::zero(); self.k];
                for b in 0..batch {
                    let g = mixture_nll_grad(
                        &cache.out[b * per..(b + 1) * per],
                        &mix,
                        &x[b * FRAME_PIXELS..(b + 1) * FRAME_PIXELS],
                    )?;
                    loss += g.nll / bf;
                    for (d, v) in dout[b * per..(b + 1) * per].iter_mut().zip(&g.dz) {
                        *d = *v / bf;
                    }
                    add_into(&mut dmu, &g.dmu);
                    add_into(&mut dsigma, &g.dsigma);
                }
                let raw = self.params.get("mix.sigma_raw")?;
                let draw: Vec<T> = dsigma.iter().zip(raw).map(|(d, r)| *d / bf * ops::sigmoid(*r)).collect();
                dmu.iter_mut().for_each(|v| *v /= bf);
                add_into(grads.get_mut("mix.mu")?, &dmu);
                add_into(grads.get_mut("mix.sigma_raw")?, &draw);
            }
            AeMode::Mse => {
                let n = T::from_usize(x.len()).unwrap();
                for ((d, y), t) in dout.iter_mut().zip(&cache.out).zip(x) {
                    let e = *y - *t;
                    loss += e * e / n;
                    *d = T::lit(2.0) * e / n;
                }
            }
        }
        net.backward(&self.params, &cache, dout, batch, &mut grads)?;
        Ok((loss, grads))
    }

    /// Pixel-class mode: each pixel takes the mean of its most likely class
    /// (lowest index on ties). Squared-error mode: decoder output clamped to [0, 1].
    pub fn reconstruct_batch(&self, x: &[T], batch: usize) -> Result<Vec<f32>> {
        let e = self.encode_batch(x, batch)?;
        let out = self.decode_batch(&e, batch)?;
        match self.mode {
            AeMode::PixelClass => {
                let mix = self.mixture()?;
                Ok(out.chunks_exact(self.k).map(|z| mix.mu[argmax(z)].as_f64() as f32).collect())
            }
            AeMode::Mse => Ok(out.iter().map(|v| v.as_f64().clamp(0.0, 1.0) as f32).collect()),
        }
    }
}

impl AEParams<f32> {
    pub fn encode(&self, frame: &RawFrame) -> Result<Embedding> {
        Ok(Embedding(self.encode_batch(&frame.to_scalars::<f32>(), 1)?))
    }

    pub fn decode(&self, e: &Embedding) -> Result<PixelClassLogits<f32>> {
        if self.mode != AeMode::PixelClass {
            return Err(Error::InvalidArgument("decode to class logits needs a pixel-class autoencoder".into()));
        }
        Ok(PixelClassLogits { z: self.decode_batch(&e.0, 1)?, k: self.k })
    }

    /// Stored luminance is quantised to u8, so values off the 1/255 grid round.
    pub fn reconstruct(&self, frame: &RawFrame) -> Result<RawFrame> {
        RawFrame::from_luminance(&self.reconstruct_batch(&frame.to_scalars::<f32>(), 1)?)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        Ok(self.params.save(stem)?)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let params = ParamSet::<f32>::load(stem)?;
        let (mode, k, embed_dim) = parse_arch(params.arch())?;
        let expected = Self::init(mode, k, embed_dim, 0)?;
        for e in expected.params.iter() {
            let got = params.param(&e.name)?;
            if got.shape != e.shape {
                return Err(Error::format(e.name.clone(), format!("shape {:?}, expected {:?}", got.shape, e.shape)));
            }
        }
        if params.len() != expected.params.len() {
            return Err(Error::format("entries", format!("{} entries, expected {}", params.len(), expected.params.len())));
        }
        Ok(Self { mode, k, embed_dim, params })
    }
}

fn argmax<T: Scalar>(z: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

fn check_frames<T>(x: &[T], batch: usize) -> Result<()> {
    if x.len() != batch * FRAME_PIXELS {
        return Err(Error::Shape(format!("autoencoder input: expected {}×{} values, got {}", batch, FRAME_PIXELS, x.len())));
    }
    Ok(())
}

fn arch_tag(mode: AeMode, k: usize, embed_dim: usize) -> String {
    format!("{ARCH_PREFIX}/{}/k{k}/e{embed_dim}", mode.as_str())
}

fn parse_arch(tag: &str) -> Result<(AeMode, usize, usize)> {
    let bad = || Error::format("arch", format!("not an autoencoder checkpoint: {tag:?}"));
    let parts: Vec<&str> = tag.split('/').collect();
    if parts.len() != 4 || parts[0] != ARCH_PREFIX {
        return Err(bad());
    }
    let mode = AeMode::parse(parts[1]).map_err(|_| bad())?;
    let k = parts[2].strip_prefix('k').and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let e = parts[3].strip_prefix('e').and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    Ok((mode, k, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub mode: AeMode,
    pub classes: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            mode: AeMode::PixelClass,
            classes: DEFAULT_CLASSES,
            embed_dim: DEFAULT_EMBED_DIM,
            epochs: 20,
            batch: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeHistoryRow {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Minibatch Adam on the NLL (pixel-class) or mean squared error.
/// `on_epoch` sees each finished epoch.
pub fn train_autoencoder(
    corpus: &FrameCorpus,
    cfg: &AeConfig,
    on_epoch: &mut dyn FnMut(&AeHistoryRow),
) -> Result<(AEParams<f32>, Vec<AeHistoryRow>)> {
    if corpus.count() == 0 {
        return Err(Error::InvalidArgument("empty frame corpus".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("autoencoder batch must be positive".into()));
    }
    let mut ae = AEParams::<f32>::init(cfg.mode, cfg.classes, cfg.embed_dim, cfg.seed)?;
    let mut opt = Adam::new(&ae.params, cfg.learning_rate as f32, 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..corpus.count()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut x = Vec::with_capacity(cfg.batch * FRAME_PIXELS);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            x.clear();
            for &i in chunk {
                x.extend(corpus.frames[i].bytes().iter().map(|&b| b as f32 / 255.0));
            }
            let (loss, grads) = ae.loss_and_grads(&x, chunk.len())?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence(format!("non-finite autoencoder loss at epoch {epoch}")));
            }
            opt.step(&mut ae.params, &grads)?;
            sum += loss as f64;
            batches += 1;
        }
        let row = AeHistoryRow { epoch, mean_loss: sum / batches as f64 };
        on_epoch(&row);
        history.push(row);
    }
    Ok((ae, history))
}
