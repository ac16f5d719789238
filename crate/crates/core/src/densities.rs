//! Analytic conditional data laws: Gaussian mixtures whose log-weights and
//! means are affine in the guidance `y ∈ [0,1]^{d_y}`.
//!
//! Mixtures diffuse in closed form under the OU kernel, so the diffused
//! density `p_t(x|y)` and the conditional score `∇ log p_t(x|y)` are exact.
//! They are the ground-truth oracles for every approximation in the crate.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{tensor_nodes, GaussLegendre};
use crate::schedule::{alpha_sigma, alpha_sigma_unchecked};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One mixture component: `log w_k(y) ∝ logit_bias + logit_slope·y`,
/// `μ_k(y) = mean_offset + mean_slope·y`, fixed covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub logit_bias: f64,
    #[serde(default)]
    pub logit_slope: Vec<f64>,
    pub mean_offset: Vec<f64>,
    /// `d` rows of length `d_y`.
    #[serde(default)]
    pub mean_slope: Vec<Vec<f64>>,
    pub cov: Vec<Vec<f64>>,
}

impl ComponentParams {
    /// Component with constant weight logit and mean, covariance `scale² I`.
    pub fn isotropic(mean: Vec<f64>, scale: f64, d_y: usize) -> Self {
        let d = mean.len();
        let cov = (0..d)
            .map(|i| (0..d).map(|j| if i == j { scale * scale } else { 0.0 }).collect())
            .collect();
        Self {
            logit_bias: 0.0,
            logit_slope: vec![0.0; d_y],
            mean_offset: mean,
            mean_slope: vec![vec![0.0; d_y]; d],
            cov,
        }
    }
}

/// Declared Gaussian envelope `p(x|y) ≤ c1 exp(-c2 ‖x‖²/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub c1: f64,
    pub c2: f64,
}

/// JSON document form of a [`ConditionalDensitySpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecDocument {
    pub d: usize,
    pub d_y: usize,
    pub components: Vec<ComponentParams>,
    #[serde(default)]
    pub envelope: Option<Envelope>,
    /// Declared `[λ_min, λ_max]` for every covariance.
    #[serde(default)]
    pub eigen_bounds: Option<[f64; 2]>,
    /// Declared Hölder index (informational).
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Declared Hölder radius (informational).
    #[serde(default = "default_radius")]
    pub holder_radius: f64,
}

fn default_beta() -> f64 {
    2.0
}

fn default_radius() -> f64 {
    1.0
}

#[derive(Debug, Clone)]
struct Eigen {
    /// Column `i` is the `i`-th eigenvector; stored row-major `d×d`.
    vecs: Vec<f64>,
    vals: Vec<f64>,
}

/// Conditional density `p(x|y) = Σ_k w_k(y) N(x; μ_k(y), Σ_k)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SpecDocument", into = "SpecDocument")]
pub struct ConditionalDensitySpec {
    doc: SpecDocument,
    eig: Vec<Eigen>,
}

impl From<ConditionalDensitySpec> for SpecDocument {
    fn from(spec: ConditionalDensitySpec) -> Self {
        spec.doc
    }
}

impl TryFrom<SpecDocument> for ConditionalDensitySpec {
    type Error = Error;

    fn try_from(doc: SpecDocument) -> Result<Self> {
        Self::new(doc)
    }
}

/// A datum `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Law of the guidance variable when generating datasets.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceLaw {
    #[default]
    Uniform,
    Fixed(Vec<f64>),
}

impl ConditionalDensitySpec {
    pub fn new(doc: SpecDocument) -> Result<Self> {
        let (d, d_y) = (doc.d, doc.d_y);
        if d == 0 {
            return Err(Error::InvalidConfig("data dimension must be positive".into()));
        }
        if doc.components.is_empty() {
            return Err(Error::InvalidConfig("mixture needs at least one component".into()));
        }
        let mut eig = Vec::with_capacity(doc.components.len());
        for (k, c) in doc.components.iter().enumerate() {
            let bad = |what: &str| Error::InvalidConfig(format!("component {k}: {what}"));
            if c.logit_slope.len() != d_y {
                return Err(bad("logit_slope length must equal d_y"));
            }
            if c.mean_offset.len() != d {
                return Err(bad("mean_offset length must equal d"));
            }
            if c.mean_slope.len() != d || c.mean_slope.iter().any(|r| r.len() != d_y) {
                return Err(bad("mean_slope must be d x d_y"));
            }
            if c.cov.len() != d || c.cov.iter().any(|r| r.len() != d) {
                return Err(bad("cov must be d x d"));
            }
            let all = std::iter::once(c.logit_bias)
                .chain(c.logit_slope.iter().copied())
                .chain(c.mean_offset.iter().copied())
                .chain(c.mean_slope.iter().flatten().copied())
                .chain(c.cov.iter().flatten().copied());
            if all.into_iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite parameter"));
            }
            let m = DMatrix::from_fn(d, d, |i, j| c.cov[i][j]);
            if (&m - m.transpose()).abs().max() > 1e-12 * (1.0 + m.abs().max()) {
                return Err(bad("cov is not symmetric"));
            }
            let se = SymmetricEigen::new(m);
            let vals: Vec<f64> = se.eigenvalues.iter().copied().collect();
            if vals.iter().any(|&l| l <= 0.0) {
                return Err(Error::NotSpd(format!("component {k} eigenvalues {vals:?}")));
            }
            if let Some([lo, hi]) = doc.eigen_bounds {
                if vals.iter().any(|&l| l < lo * (1.0 - 1e-12) || l > hi * (1.0 + 1e-12)) {
                    return Err(bad(&format!(
                        "eigenvalues {vals:?} outside declared [{lo}, {hi}]"
                    )));
                }
            }
            let mut vecs = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    vecs[i * d + j] = se.eigenvectors[(i, j)];
                }
            }
            eig.push(Eigen { vecs, vals });
        }
        if let Some(env) = doc.envelope {
            if !(env.c1 > 0.0 && env.c2 > 0.0) {
                return Err(Error::InvalidConfig("envelope constants must be positive".into()));
            }
        }
        Ok(Self { doc, eig })
    }

    /// `N(0, I_d)` for every `y`, with the tight envelope `c1 = (2π)^{-d/2}`, `c2 = 1`.
    pub fn standard_normal(d: usize, d_y: usize) -> Self {
        Self::new(SpecDocument {
            d,
            d_y,
            components: vec![ComponentParams::isotropic(vec![0.0; d], 1.0, d_y)],
            envelope: Some(Envelope {
                c1: (-0.5 * d as f64 * LN_2PI).exp(),
                c2: 1.0,
            }),
            eigen_bounds: Some([1.0, 1.0]),
            beta: 2.0,
            holder_radius: 1.0,
        })
        .expect("standard normal spec is valid")
    }

    /// `x | y ~ N(y, scale²)` in one dimension.
    pub fn location_family(scale: f64) -> Result<Self> {
        let v = scale * scale;
        // (x-y)² ≥ x²/2 - y² with y ≤ 1
        let c2 = 0.5 * (1.0f64).min(1.0 / v);
        Self::new(SpecDocument {
            d: 1,
            d_y: 1,
            components: vec![ComponentParams {
                logit_bias: 0.0,
                logit_slope: vec![0.0],
                mean_offset: vec![0.0],
                mean_slope: vec![vec![1.0]],
                cov: vec![vec![v]],
            }],
            envelope: Some(Envelope {
                c1: (-0.5 * LN_2PI).exp() / scale * (1.0 / v).exp(),
                c2,
            }),
            eigen_bounds: Some([v, v]),
            beta: 2.0,
            holder_radius: 1.0,
        })
    }

    pub fn from_components(d: usize, d_y: usize, components: Vec<ComponentParams>) -> Result<Self> {
        Self::new(SpecDocument {
            d,
            d_y,
            components,
            envelope: None,
            eigen_bounds: None,
            beta: 2.0,
            holder_radius: 1.0,
        })
    }

    pub fn with_envelope(mut self, envelope: Envelope) -> Self {
        self.doc.envelope = Some(envelope);
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.doc.beta = beta;
        self
    }

    pub fn document(&self) -> &SpecDocument {
        &self.doc
    }

    pub fn d(&self) -> usize {
        self.doc.d
    }

    pub fn d_y(&self) -> usize {
        self.doc.d_y
    }

    pub fn beta(&self) -> f64 {
        self.doc.beta
    }

    pub fn envelope(&self) -> Option<Envelope> {
        self.doc.envelope
    }

    pub fn components(&self) -> &[ComponentParams] {
        &self.doc.components
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpecDocument = serde_json::from_str(text)?;
        Self::new(doc)
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.doc.d {
            return Err(Error::DimensionMismatch {
                expected: self.doc.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_y(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.doc.d_y {
            return Err(Error::DimensionMismatch {
                expected: self.doc.d_y,
                got: y.len(),
            });
        }
        if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::GuidanceOutOfRange(y.to_vec()));
        }
        Ok(())
    }

    /// Mixture weights at `y` (softmax of the affine logits). Defined for any
    /// real `y`, which finite differences near the cube boundary rely on.
    pub fn weights(&self, y: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .doc
            .components
            .iter()
            .map(|c| c.logit_bias + c.logit_slope.iter().zip(y).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn mean(&self, k: usize, y: &[f64]) -> Vec<f64> {
        let c = &self.doc.components[k];
        c.mean_offset
            .iter()
            .zip(&c.mean_slope)
            .map(|(m0, row)| m0 + row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Log-density and score of component `k` diffused to time `t`, at
    /// `x`, i.e. of `N(α μ_k, α² Σ_k + σ² I)`.
    fn component_log_and_score(&self, k: usize, x: &[f64], y: &[f64], alpha: f64, sigma: f64, score: &mut [f64]) -> f64 {
        let d = self.doc.d;
        let eig = &self.eig[k];
        let mu = self.mean(k, y);
        let diff: Vec<f64> = x.iter().zip(&mu).map(|(xi, m)| xi - alpha * m).collect();
        let mut quad = 0.0;
        let mut logdet = 0.0;
        score.iter_mut().for_each(|s| *s = 0.0);
        for i in 0..d {
            let nu = alpha * alpha * eig.vals[i] + sigma * sigma;
            let proj: f64 = (0..d).map(|r| eig.vecs[r * d + i] * diff[r]).sum();
            quad += proj * proj / nu;
            logdet += nu.ln();
            for (r, s) in score.iter_mut().enumerate() {
                *s -= eig.vecs[r * d + i] * proj / nu;
            }
        }
        -0.5 * (d as f64 * LN_2PI + logdet + quad)
    }

    /// `(log p_t(x|y), ∇ log p_t(x|y))` without range checks on `y`.
    pub(crate) fn log_and_score_raw(&self, x: &[f64], y: &[f64], t: f64) -> (f64, Vec<f64>) {
        let d = self.doc.d;
        let (alpha, sigma) = alpha_sigma_unchecked(t);
        let w = self.weights(y);
        let mut logs = Vec::with_capacity(w.len());
        let mut scores = Vec::with_capacity(w.len());
        for (k, &wk) in w.iter().enumerate() {
            let mut s = vec![0.0; d];
            let l = self.component_log_and_score(k, x, y, alpha, sigma, &mut s);
            logs.push(wk.ln() + l);
            scores.push(s);
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let r: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = r.iter().sum();
        let mut score = vec![0.0; d];
        for (rk, sk) in r.iter().zip(&scores) {
            for (o, v) in score.iter_mut().zip(sk) {
                *o += rk / z * v;
            }
        }
        (m + z.ln(), score)
    }

    pub(crate) fn density_raw(&self, x: &[f64], y: &[f64]) -> f64 {
        self.log_and_score_raw(x, y, 0.0).0.exp()
    }

    pub fn density(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        self.check_y(y)?;
        Ok(self.density_raw(x, y))
    }

    pub fn diffused_density(&self, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
        Ok(self.log_diffused_density(x, y, t)?.exp())
    }

    pub fn log_diffused_density(&self, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
        self.check_x(x)?;
        self.check_y(y)?;
        alpha_sigma(t)?;
        Ok(self.log_and_score_raw(x, y, t).0)
    }

    /// Closed-form conditional score `∇_x log p_t(x|y)`.
    pub fn exact_score(&self, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_x(x)?;
        self.check_y(y)?;
        alpha_sigma(t)?;
        Ok(self.log_and_score_raw(x, y, t).1)
    }

    fn guidance_rule(&self) -> Vec<(Vec<f64>, f64)> {
        let rule = GaussLegendre::new(24);
        let pts: Vec<(f64, f64)> = rule.on(0.0, 1.0).collect();
        tensor_nodes(&pts, self.doc.d_y)
    }

    /// `(p_t(x), ∇ log p_t(x))` of the `y`-marginal under uniform guidance.
    pub fn marginal_log_and_score(&self, x: &[f64], t: f64) -> Result<(f64, Vec<f64>)> {
        self.check_x(x)?;
        alpha_sigma(t)?;
        let d = self.doc.d;
        let nodes = self.guidance_rule();
        let parts: Vec<(f64, Vec<f64>)> = nodes
            .iter()
            .map(|(y, w)| {
                let (l, s) = self.log_and_score_raw(x, y, t);
                (l + w.ln(), s)
            })
            .collect();
        let m = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut grad = vec![0.0; d];
        for (l, s) in &parts {
            let r = (l - m).exp();
            z += r;
            for (g, v) in grad.iter_mut().zip(s) {
                *g += r * v;
            }
        }
        grad.iter_mut().for_each(|g| *g /= z);
        Ok((m + z.ln(), grad))
    }

    /// Exact unconditional score `∇ log p_t(x)` with `y ~ Unif[0,1]^{d_y}`.
    pub fn marginal_score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(self.marginal_log_and_score(x, t)?.1)
    }

    /// Draws `(x, y)` with `y` from `law` and `x ~ p(·|y)`.
    pub fn sample<R: Rng + ?Sized>(&self, law: &GuidanceLaw, rng: &mut R) -> Sample {
        let d = self.doc.d;
        let y: Vec<f64> = match law {
            GuidanceLaw::Uniform => (0..self.doc.d_y).map(|_| rng.random::<f64>()).collect(),
            GuidanceLaw::Fixed(y) => y.clone(),
        };
        let k = self.sample_component(&y, rng);
        let mu = self.mean(k, &y);
        let eig = &self.eig[k];
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let x = (0..d)
            .map(|r| mu[r] + (0..d).map(|i| eig.vecs[r * d + i] * eig.vals[i].sqrt() * z[i]).sum::<f64>())
            .collect();
        Sample { x, y }
    }

    /// Categorical draw of a component index from the weights at `y`.
    pub fn sample_component<R: Rng + ?Sized>(&self, y: &[f64], rng: &mut R) -> usize {
        let w = self.weights(y);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, wi) in w.iter().enumerate() {
            acc += wi;
            if u < acc {
                return i;
            }
        }
        w.len() - 1
    }
}

/// `n` i.i.d. pairs; deterministic given the state of `rng`.
pub fn sample_dataset<R: Rng + ?Sized>(
    spec: &ConditionalDensitySpec,
    n: usize,
    law: &GuidanceLaw,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::InvalidConfig("dataset size must be at least 1".into()));
    }
    if let GuidanceLaw::Fixed(y) = law {
        spec.check_y(y)?;
    }
    Ok((0..n).map(|_| spec.sample(law, rng)).collect())
}

/// A conditional density satisfying the light-tail factorisation
/// `p(x|y) = f(x,y) exp(-c2 ‖x‖²/2)` with `lower ≤ f ≤ upper`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FastRateDensitySpec {
    pub base: ConditionalDensitySpec,
    pub c2: f64,
    pub lower: f64,
    pub upper: f64,
}

impl FastRateDensitySpec {
    pub fn new(base: ConditionalDensitySpec, c2: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(c2 > 0.0 && lower > 0.0 && upper >= lower) {
            return Err(Error::InvalidConfig(format!(
                "need c2 > 0 and 0 < lower <= upper, got c2 = {c2}, lower = {lower}, upper = {upper}"
            )));
        }
        Ok(Self { base, c2, lower, upper })
    }

    /// `f(x, y) = p(x|y) exp(c2 ‖x‖²/2)`, defined for any real `y`.
    pub fn f(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let (lp, _) = self.base.log_and_score_raw(x, y, 0.0);
        (lp + 0.5 * self.c2 * r2).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FastRateReport {
    pub min_f: f64,
    pub max_f: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// `max (p(x|y) - c1 exp(-c2‖x‖²/2))` over the grid; `≤ 0` passes.
    pub envelope_violation: f64,
    pub envelope_pass: bool,
    /// Minimum mixture weight seen on the guidance grid.
    pub min_weight: f64,
    pub max_weight_sum_error: f64,
    pub weights_pass: bool,
    pub fast_rate: Option<FastRateReport>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.envelope_pass && self.weights_pass && self.fast_rate.as_ref().is_none_or(|f| f.pass)
    }
}

fn axis(radius: f64, resolution: usize) -> Vec<f64> {
    if resolution == 1 {
        return vec![0.0];
    }
    (0..resolution)
        .map(|i| -radius + 2.0 * radius * i as f64 / (resolution - 1) as f64)
        .collect()
}

fn unit_axis(resolution: usize) -> Vec<f64> {
    if resolution == 1 {
        return vec![0.5];
    }
    (0..resolution).map(|i| i as f64 / (resolution - 1) as f64).collect()
}

fn product(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for a in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                a.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

fn grids(spec: &ConditionalDensitySpec, radius: f64, resolution: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let xs = product(&vec![axis(radius, resolution); spec.d()]);
    let ys = product(&vec![unit_axis(resolution.min(17)); spec.d_y()]);
    (xs, ys)
}

/// Grid check of the envelope and weight conditions. Failures are reported,
/// never raised.
pub fn validate_assumptions(spec: &ConditionalDensitySpec, radius: f64, resolution: usize) -> ValidationReport {
    let (xs, ys) = grids(spec, radius, resolution.max(1));
    let mut min_weight = f64::INFINITY;
    let mut sum_err: f64 = 0.0;
    for y in &ys {
        let w = spec.weights(y);
        min_weight = min_weight.min(w.iter().cloned().fold(f64::INFINITY, f64::min));
        sum_err = sum_err.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    let (violation, env_pass) = match spec.envelope() {
        Some(env) => {
            let mut worst = f64::NEG_INFINITY;
            for y in &ys {
                for x in &xs {
                    let r2: f64 = x.iter().map(|v| v * v).sum();
                    let bound = env.c1 * (-0.5 * env.c2 * r2).exp();
                    worst = worst.max(spec.density_raw(x, y) - bound);
                }
            }
            // equality cases (e.g. the standard normal) only differ by rounding
            (worst, worst <= 1e-12 * env.c1)
        }
        None => (f64::INFINITY, false),
    };
    ValidationReport {
        envelope_violation: violation,
        envelope_pass: env_pass,
        min_weight,
        max_weight_sum_error: sum_err,
        weights_pass: min_weight > 0.0 && sum_err < 1e-12,
        fast_rate: None,
    }
}

/// [`validate_assumptions`] on the base density plus the bounds on `f`.
pub fn validate_fast_rate(spec: &FastRateDensitySpec, radius: f64, resolution: usize) -> ValidationReport {
    let mut report = validate_assumptions(&spec.base, radius, resolution);
    let (xs, ys) = grids(&spec.base, radius, resolution.max(1));
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for y in &ys {
        for x in &xs {
            let f = spec.f(x, y);
            lo = lo.min(f);
            hi = hi.max(f);
        }
    }
    let tol = 1e-12 * spec.upper;
    report.fast_rate = Some(FastRateReport {
        min_f: lo,
        max_f: hi,
        pass: lo >= spec.lower - tol && hi <= spec.upper + tol,
    });
    report
}
