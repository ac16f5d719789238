//! Trainable MLP score network `s(x, τy, t)` with a learned null token,
//! the masked denoising score-matching loss, and an Adam trainer.
//!
//! The conditioning slot holds `(y, 0, …, 0)` under the identity mask and a
//! learned vector under the null mask, so one trunk serves both the
//! conditional and the unconditional score. The head output is divided by
//! `σ_t`, which keeps the regression target `-z` of order one at every time.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::densities::Sample;
use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::rng::{derive_seed, indexed_stream, seeded};
use crate::schedule::{alpha_sigma_unchecked, DiffusionSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Softplus,
    Silu,
}

impl Activation {
    #[inline]
    fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Relu => u.max(0.0),
            Activation::Softplus => u.max(0.0) + (-u.abs()).exp().ln_1p(),
            Activation::Silu => u / (1.0 + (-u).exp()),
        }
    }

    #[inline]
    fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => 1.0 / (1.0 + (-u).exp()),
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-u).exp());
                s + u * s * (1.0 - s)
            }
        }
    }
}

/// Output bound `M_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClampMode {
    /// `c √(ln N) / σ_t²`
    SigmaSquared,
    /// `c √(ln N) / σ_t`
    Sigma,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMask {
    Null,
    Id,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreNetConfig {
    pub d: usize,
    pub d_y: usize,
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
    pub clamp_mode: ClampMode,
    pub clamp_c: f64,
    /// The `N` inside `√(ln N)` of the clamp.
    pub clamp_n: f64,
    /// Width of the conditioning slot; at least `d_y + 1`.
    pub mask_embedding_dim: usize,
    /// Number of sin/cos pairs of the normalised time.
    pub time_features: usize,
}

impl ScoreNetConfig {
    pub fn new(d: usize, d_y: usize) -> Self {
        Self {
            d,
            d_y,
            width: 64,
            depth: 2,
            activation: Activation::Silu,
            clamp_mode: ClampMode::SigmaSquared,
            clamp_c: 3.0,
            clamp_n: 1e4,
            mask_embedding_dim: d_y + 1,
            time_features: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.d == 0 {
            return bad("network dimension d must be positive");
        }
        if self.width == 0 || self.depth == 0 {
            return bad("width and depth must be at least 1");
        }
        if self.mask_embedding_dim < self.d_y + 1 {
            return bad("mask_embedding_dim must be at least d_y + 1");
        }
        if self.clamp_mode != ClampMode::None && !(self.clamp_c > 0.0 && self.clamp_n > 1.0) {
            return bad("clamp needs c > 0 and N > 1");
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.d + self.mask_embedding_dim + 2 + 2 * self.time_features
    }

    /// `(fan_in, fan_out)` of every affine layer.
    fn layers(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(self.input_dim(), self.width)];
        out.extend((1..self.depth).map(|_| (self.width, self.width)));
        out.push((self.width, self.d));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub t_samples_per_datum: usize,
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub seed: u64,
    /// Probability of the null mask.
    pub mask_rate: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        DiffusionSchedule::new(self.t0, self.t_end)?;
        if self.batch == 0 || self.steps == 0 || self.t_samples_per_datum == 0 {
            return Err(Error::InvalidConfig("batch, steps and t_samples_per_datum must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::InvalidConfig(format!("mask_rate must lie in [0, 1], got {}", self.mask_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet {
    cfg: ScoreNetConfig,
    schedule: DiffusionSchedule,
    /// Layer weights (row-major `out × in`) and biases, then the null token.
    params: Vec<f64>,
}

struct Cache {
    /// Activations entering each layer, input first.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    head: Vec<f64>,
}

const MAGIC: &[u8; 8] = b"DFLNET01";

#[derive(Serialize, Deserialize)]
struct WeightsHeader {
    config: ScoreNetConfig,
    schedule: DiffusionSchedule,
    tensors: Vec<TensorInfo>,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

impl ScoreNet {
    /// Random trunk, zero head, null token `(0, …, 0, 1)`.
    pub fn new(cfg: ScoreNetConfig, schedule: DiffusionSchedule, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(seed);
        let layers = cfg.layers();
        let last = layers.len() - 1;
        let gain = match cfg.activation {
            Activation::Relu => 2.0f64.sqrt(),
            _ => 1.0,
        };
        let mut params = Vec::new();
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let std = gain / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let z: f64 = rng.sample(StandardNormal);
                params.push(if l == last { 0.0 } else { std * z });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        let e = cfg.mask_embedding_dim;
        params.extend((0..e).map(|i| if i + 1 == e { 1.0 } else { 0.0 }));
        Ok(Self { cfg, schedule, params })
    }

    pub fn config(&self) -> &ScoreNetConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> DiffusionSchedule {
        self.schedule
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn null_token(&self) -> &[f64] {
        &self.params[self.token_offset()..]
    }

    fn token_offset(&self) -> usize {
        self.params.len() - self.cfg.mask_embedding_dim
    }

    /// Largest parameter magnitude (κ).
    pub fn max_abs_param(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.abs()))
    }

    /// Number of nonzero parameters (K).
    pub fn nonzero_params(&self) -> usize {
        self.params.iter().filter(|p| **p != 0.0).count()
    }

    /// `M_t`, or infinity when clamping is off.
    pub fn clamp_bound(&self, t: f64) -> f64 {
        let (_, s) = alpha_sigma_unchecked(t);
        let base = self.cfg.clamp_c * self.cfg.clamp_n.ln().sqrt();
        match self.cfg.clamp_mode {
            ClampMode::SigmaSquared => base / (s * s),
            ClampMode::Sigma => base / s,
            ClampMode::None => f64::INFINITY,
        }
    }

    fn check(&self, x: &[f64], mask: GuidanceMask, y: Option<&[f64]>, t: f64) -> Result<()> {
        if x.len() != self.cfg.d {
            return Err(Error::DimensionMismatch { expected: self.cfg.d, got: x.len() });
        }
        match (mask, y) {
            (GuidanceMask::Id, Some(y)) if y.len() != self.cfg.d_y => {
                return Err(Error::DimensionMismatch { expected: self.cfg.d_y, got: y.len() })
            }
            (GuidanceMask::Id, None) => return Err(Error::InvalidConfig("identity mask needs a guidance value".into())),
            (GuidanceMask::Null, Some(_)) => return Err(Error::InvalidConfig("null mask takes no guidance value".into())),
            _ => {}
        }
        let (lo, hi) = (self.schedule.t0, self.schedule.t_end);
        let slack = 1e-12 * hi;
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(Error::TimeOutOfWindow { t, lo, hi });
        }
        Ok(())
    }

    fn input(&self, x: &[f64], y: Option<&[f64]>, t: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.cfg.input_dim());
        v.extend_from_slice(x);
        match y {
            Some(y) => {
                v.extend_from_slice(y);
                v.extend(std::iter::repeat_n(0.0, self.cfg.mask_embedding_dim - y.len()));
            }
            None => v.extend_from_slice(self.null_token()),
        }
        let (a, s) = alpha_sigma_unchecked(t);
        v.push(a);
        v.push(s);
        let tau = (t - self.schedule.t0) / self.schedule.width();
        for k in 1..=self.cfg.time_features {
            let ang = std::f64::consts::PI * k as f64 * tau;
            v.push(ang.sin());
            v.push(ang.cos());
        }
        v
    }

    fn run(&self, input: Vec<f64>) -> Cache {
        let layers = self.cfg.layers();
        let last = layers.len() - 1;
        let mut acts = vec![input];
        let mut pre = Vec::with_capacity(last);
        let mut off = 0;
        let mut head = Vec::new();
        for (l, &(fi, fo)) in layers.iter().enumerate() {
            let w = &self.params[off..off + fi * fo];
            let b = &self.params[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let a = &acts[l];
            let u: Vec<f64> = (0..fo)
                .map(|o| b[o] + w[o * fi..(o + 1) * fi].iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>())
                .collect();
            if l == last {
                head = u;
            } else {
                acts.push(u.iter().map(|&v| self.cfg.activation.apply(v)).collect());
                pre.push(u);
            }
        }
        Cache { acts, pre, head }
    }

    /// Accumulates `∂/∂θ` of a loss with head gradient `dhead` into `grad`;
    /// the null-token slot receives the input gradient when `null` is set.
    fn backprop(&self, cache: &Cache, dhead: &[f64], null: bool, grad: &mut [f64]) {
        let layers = self.cfg.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for &(fi, fo) in &layers {
            offsets.push(off);
            off += fi * fo + fo;
        }
        let mut delta = dhead.to_vec();
        for l in (0..layers.len()).rev() {
            let (fi, fo) = layers[l];
            let o = offsets[l];
            let a = &cache.acts[l];
            for r in 0..fo {
                let dr = delta[r];
                if dr == 0.0 {
                    continue;
                }
                let row = &mut grad[o + r * fi..o + (r + 1) * fi];
                for (g, ai) in row.iter_mut().zip(a) {
                    *g += dr * ai;
                }
                grad[o + fi * fo + r] += dr;
            }
            if l == 0 && !null {
                break;
            }
            let w = &self.params[o..o + fi * fo];
            let mut da = vec![0.0; fi];
            for r in 0..fo {
                let dr = delta[r];
                if dr == 0.0 {
                    continue;
                }
                for (d, wi) in da.iter_mut().zip(&w[r * fi..(r + 1) * fi]) {
                    *d += dr * wi;
                }
            }
            if l == 0 {
                let start = self.cfg.d;
                let tok = self.token_offset();
                for i in 0..self.cfg.mask_embedding_dim {
                    grad[tok + i] += da[start + i];
                }
            } else {
                let pre = &cache.pre[l - 1];
                delta = da.iter().zip(pre).map(|(d, u)| d * self.cfg.activation.derivative(*u)).collect();
            }
        }
    }

    fn output(&self, head: &[f64], t: f64) -> Vec<f64> {
        let (_, s) = alpha_sigma_unchecked(t);
        let m = self.clamp_bound(t);
        head.iter().map(|h| (h / s).clamp(-m, m)).collect()
    }

    pub fn forward(&self, x: &[f64], mask: GuidanceMask, y: Option<&[f64]>, t: f64) -> Result<Vec<f64>> {
        self.check(x, mask, y, t)?;
        let cache = self.run(self.input(x, y, t));
        Ok(self.output(&cache.head, t))
    }

    /// Squared error of one `(x0, y, t, τ, z)` triple against the kernel
    /// score; adds its parameter gradient to `grad` when given.
    fn triple_loss(&self, x0: &[f64], y: Option<&[f64]>, t: f64, z: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let (a, s) = alpha_sigma_unchecked(t);
        let xt: Vec<f64> = x0.iter().zip(z).map(|(x, zi)| a * x + s * zi).collect();
        let cache = self.run(self.input(&xt, y, t));
        let m = self.clamp_bound(t);
        let mut loss = 0.0;
        let mut dhead = vec![0.0; self.cfg.d];
        for i in 0..self.cfg.d {
            let raw = cache.head[i] / s;
            let out = raw.clamp(-m, m);
            let r = out + z[i] / s;
            loss += r * r;
            if raw.abs() <= m {
                dhead[i] = 2.0 * r / s;
            }
        }
        if let Some(g) = grad {
            self.backprop(&cache, &dhead, y.is_none(), g);
        }
        loss
    }

    /// Weights as magic, header length, JSON header and little-endian `f64`s.
    pub fn write_weights<W: Write>(&self, mut out: W) -> Result<()> {
        let mut tensors = Vec::new();
        for (l, &(fi, fo)) in self.cfg.layers().iter().enumerate() {
            tensors.push(TensorInfo { name: format!("layer{l}.weight"), shape: vec![fo, fi] });
            tensors.push(TensorInfo { name: format!("layer{l}.bias"), shape: vec![fo] });
        }
        tensors.push(TensorInfo { name: "null_token".into(), shape: vec![self.cfg.mask_embedding_dim] });
        let header = serde_json::to_vec(&WeightsHeader { config: self.cfg.clone(), schedule: self.schedule, tensors })?;
        out.write_all(MAGIC)?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_weights<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Validation("not a score-network weights file".into()));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        input.read_exact(&mut header)?;
        let header: WeightsHeader = serde_json::from_slice(&header)?;
        let mut net = Self::new(header.config, header.schedule, 0)?;
        let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if expected != net.params.len() {
            return Err(Error::Validation(format!(
                "tensor shapes hold {expected} values, configuration needs {}",
                net.params.len()
            )));
        }
        let mut buf = [0u8; 8];
        for p in net.params.iter_mut() {
            input.read_exact(&mut buf)?;
            *p = f64::from_le_bytes(buf);
        }
        Ok(net)
    }
}

impl ScoreModel for ScoreNet {
    fn dim(&self) -> usize {
        self.cfg.d
    }

    fn score(&self, x: &[f64], y: Option<&[f64]>, t: f64) -> Result<Vec<f64>> {
        let mask = if y.is_some() { GuidanceMask::Id } else { GuidanceMask::Null };
        self.forward(x, mask, y, t)
    }
}

/// Monte Carlo estimate of the masked denoising loss of one datum: mean over
/// `t_draws` draws of `t ~ U[t0, T]`, `τ` (null with probability
/// `mask_rate`) and `x' ~ N(α_t x, σ_t² I)` of `‖s(x', τy, t) - ∇log φ_t(x'|x)‖²`.
pub fn denoising_loss<M: ScoreModel + ?Sized, R: rand::Rng + ?Sized>(
    model: &M,
    x: &[f64],
    y: &[f64],
    schedule: &DiffusionSchedule,
    t_draws: usize,
    mask_rate: f64,
    rng: &mut R,
) -> Result<f64> {
    if t_draws == 0 {
        return Err(Error::InvalidConfig("t_draws must be at least 1".into()));
    }
    let mut acc = 0.0;
    for _ in 0..t_draws {
        let t = schedule.t0 + schedule.width() * rng.random::<f64>();
        let null = rng.random::<f64>() < mask_rate;
        let (a, s) = alpha_sigma_unchecked(t);
        let z: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
        let xt: Vec<f64> = x.iter().zip(&z).map(|(xi, zi)| a * xi + s * zi).collect();
        let out = model.score(&xt, if null { None } else { Some(y) }, t)?;
        acc += out.iter().zip(&z).map(|(o, zi)| (o + zi / s).powi(2)).sum::<f64>();
    }
    Ok(acc / t_draws as f64)
}

/// Mean denoising loss over keyed data; datum `key` always draws from the
/// stream `indexed_stream(seed, key)`.
pub fn empirical_risk_keyed<'a, M, I>(model: &M, data: I, schedule: &DiffusionSchedule, t_draws: usize, mask_rate: f64, seed: u64) -> Result<f64>
where
    M: ScoreModel + ?Sized,
    I: IntoIterator<Item = (u64, &'a Sample)>,
{
    let mut acc = 0.0;
    let mut count = 0usize;
    for (key, s) in data {
        let mut rng = indexed_stream(seed, key);
        acc += denoising_loss(model, &s.x, &s.y, schedule, t_draws, mask_rate, &mut rng)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidConfig("empirical risk of an empty dataset".into()));
    }
    Ok(acc / count as f64)
}

/// Mean denoising loss over the dataset, keyed by position.
pub fn empirical_risk<M: ScoreModel + ?Sized>(model: &M, data: &[Sample], schedule: &DiffusionSchedule, t_draws: usize, mask_rate: f64, seed: u64) -> Result<f64> {
    empirical_risk_keyed(model, data.iter().enumerate().map(|(i, s)| (i as u64, s)), schedule, t_draws, mask_rate, seed)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trained network plus the mean minibatch loss of every step.
#[derive(Debug, Clone)]
pub struct Trained {
    pub net: ScoreNet,
    pub loss_trace: Vec<f64>,
}

/// Adam on the masked denoising loss. Minibatches draw data with
/// replacement; the `batch · t_samples_per_datum` times of a step are
/// stratified over `[t0, T]` and randomly assigned to triples.
pub fn train(data: &[Sample], net_cfg: &ScoreNetConfig, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    if data.iter().any(|s| s.x.len() != net_cfg.d || s.y.len() != net_cfg.d_y) {
        return Err(Error::DimensionMismatch { expected: net_cfg.d, got: data[0].x.len() });
    }
    let schedule = DiffusionSchedule::new(cfg.t0, cfg.t_end)?;
    let mut net = ScoreNet::new(net_cfg.clone(), schedule, derive_seed(cfg.seed, &["init"]))?;
    let mut rng = seeded(derive_seed(cfg.seed, &["batches"]));
    let mut adam = Adam::new(net.params.len());
    let mut grad = vec![0.0; net.params.len()];
    let triples = cfg.batch * cfg.t_samples_per_datum;
    let mut strata: Vec<usize> = (0..triples).collect();
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut z = vec![0.0; net_cfg.d];
    for step in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        strata.shuffle(&mut rng);
        let mut loss = 0.0;
        for b in 0..cfg.batch {
            let datum = &data[rng.random_range(0..data.len())];
            for k in 0..cfg.t_samples_per_datum {
                let j = strata[b * cfg.t_samples_per_datum + k];
                let t = cfg.t0 + (cfg.t_end - cfg.t0) * (j as f64 + rng.random::<f64>()) / triples as f64;
                let null = rng.random::<f64>() < cfg.mask_rate;
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let y = if null { None } else { Some(datum.y.as_slice()) };
                loss += net.triple_loss(&datum.x, y, t, &z, Some(&mut grad));
            }
        }
        let scale = 1.0 / triples as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        loss *= scale;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        trace.push(loss);
        adam.update(&mut net.params, &grad, cfg.lr);
    }
    Ok(Trained { net, loss_trace: trace })
}

/// `step,loss` rows.
pub fn write_loss_trace<W: Write>(trace: &[f64], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["step", "loss"])?;
    for (i, l) in trace.iter().enumerate() {
        wr.write_record([i.to_string(), format!("{l:.16e}")])?;
    }
    wr.flush()?;
    Ok(())
}
