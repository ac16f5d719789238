//! Experiment manifests: one TOML document per run.

use std::path::{Path, PathBuf};

use difflab::densities::{ComponentParams, Envelope};
use difflab::rng::{derive_seed, SEED_RULE};
use difflab::score_net::{Activation, ClampMode};
use difflab::sampler::TimeGrid;
use difflab::{ConditionalDensitySpec, DiffusionSchedule, Error, FastRateDensitySpec, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ApproxRate,
    TrainRisk,
    TvSweep,
    Inverse,
    Reward,
    Validate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::ApproxRate => "approx-rate",
            Self::TrainRisk => "train-risk",
            Self::TvSweep => "tv-sweep",
            Self::Inverse => "inverse",
            Self::Reward => "reward",
            Self::Validate => "validate",
        }
    }
}

/// Built-in density families, or a JSON spec document on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DensitySource {
    /// `N(0, I_d)` for every `y`.
    StandardNormal { d: usize, d_y: usize },
    /// `x | y ~ N(y, scale²)`, `d = d_y = 1`.
    Location { scale: f64 },
    /// Fixed two-component mixture on the line, no guidance.
    Bimodal,
    /// `0.7 N(0, 1) + 0.3 N(0.5 + 0.5y, 0.36)` with `C2 = 1`, `C1 = B = 0.75`.
    FastMixture,
    /// A JSON spec document; relative paths resolve against the manifest.
    File {
        path: PathBuf,
        #[serde(default)]
        fast: Option<FastParams>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FastParams {
    pub c2: f64,
    pub lower: f64,
    pub upper: f64,
}

/// A resolved density: the spec plus its fast-rate declaration, if any.
#[derive(Debug, Clone)]
pub struct Density {
    pub spec: ConditionalDensitySpec,
    pub fast: Option<FastRateDensitySpec>,
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl DensitySource {
    pub fn resolve(&self, base_dir: &Path) -> Result<Density> {
        let plain = |spec: ConditionalDensitySpec| Density { spec, fast: None };
        Ok(match self {
            Self::StandardNormal { d, d_y } => {
                let c1 = INV_SQRT_2PI.powi(*d as i32);
                plain(ConditionalDensitySpec::standard_normal(*d, *d_y).with_envelope(Envelope { c1, c2: 1.0 }))
            }
            Self::Location { scale } => plain(ConditionalDensitySpec::location_family(*scale)?),
            Self::Bimodal => plain(ConditionalDensitySpec::from_components(
                1,
                0,
                vec![ComponentParams::isotropic(vec![-0.8], 0.6, 0), ComponentParams::isotropic(vec![0.7], 0.5, 0)],
            )?),
            Self::FastMixture => {
                let base = ConditionalDensitySpec::from_components(
                    1,
                    1,
                    vec![
                        ComponentParams::isotropic(vec![0.0], 1.0, 1),
                        ComponentParams {
                            logit_bias: (0.3f64 / 0.7).ln(),
                            logit_slope: vec![0.0],
                            mean_offset: vec![0.5],
                            mean_slope: vec![vec![0.5]],
                            cov: vec![vec![0.36]],
                        },
                    ],
                )?;
                let base = base.with_envelope(Envelope { c1: 0.75, c2: 1.0 });
                let fast = FastRateDensitySpec::new(base.clone(), 1.0, 0.7 * INV_SQRT_2PI, 0.75)?;
                Density { spec: base, fast: Some(fast) }
            }
            Self::File { path, fast } => {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| Error::Manifest(format!("cannot read density spec {}: {e}", full.display())))?;
                let spec = ConditionalDensitySpec::from_json(&text)?;
                let fast = match fast {
                    Some(f) => Some(FastRateDensitySpec::new(spec.clone(), f.c2, f.lower, f.upper)?),
                    None => None,
                };
                Density { spec, fast }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
}

impl ScheduleSection {
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.t0, self.t_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApproxMethod {
    Standard,
    Fast,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxSection {
    /// Resolutions `N`, ascending.
    #[serde(rename = "N")]
    pub n_values: Vec<usize>,
    pub times: Vec<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_method")]
    pub method: ApproxMethod,
    /// Guidance values the error is averaged over; defaults to the cube centre.
    #[serde(default)]
    pub y_grid: Vec<Vec<f64>>,
    /// Times the clipping constants are calibrated over; fixed in advance so
    /// the approximator does not depend on which times are evaluated.
    #[serde(default = "default_calibration_times")]
    pub calibration_times: Vec<f64>,
    #[serde(default = "default_calibration")]
    pub calibration_resolution: usize,
    #[serde(default = "default_panels")]
    pub panels: usize,
}

fn default_beta() -> f64 {
    2.0
}
fn default_method() -> ApproxMethod {
    ApproxMethod::Standard
}
fn default_calibration_times() -> Vec<f64> {
    vec![0.25, 1.0, 3.0]
}
fn default_calibration() -> usize {
    33
}
fn default_panels() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Dataset sizes, ascending.
    pub n: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_clamp_mode")]
    pub clamp_mode: ClampMode,
    #[serde(default = "default_clamp_c")]
    pub clamp_c: f64,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    #[serde(default = "one")]
    pub t_samples_per_datum: usize,
    #[serde(default = "half")]
    pub mask_rate: f64,
    #[serde(default = "default_risk_draws")]
    pub risk_draws: usize,
}

fn default_seeds() -> usize {
    3
}
fn default_width() -> usize {
    64
}
fn default_depth() -> usize {
    2
}
fn default_activation() -> Activation {
    Activation::Silu
}
fn default_clamp_mode() -> ClampMode {
    ClampMode::SigmaSquared
}
fn default_clamp_c() -> f64 {
    3.0
}
fn one() -> usize {
    1
}
fn half() -> f64 {
    0.5
}
fn default_risk_draws() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub grid: TimeGrid,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_steps() -> usize {
    500
}
fn default_samples() -> usize {
    10_000
}

/// What trained samples are compared against in a TV sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TvReference {
    /// Samples from the exact-score sampler (two-sample histogram TV).
    ExactSamples,
    /// Cell masses of the analytic `p(x|y)`.
    Density,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvSection {
    pub y_grid: Vec<Vec<f64>>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Per-axis histogram bounds.
    pub bounds: Vec<(f64, f64)>,
    #[serde(default = "default_reference")]
    pub reference: TvReference,
}

fn default_bins() -> usize {
    64
}
fn default_reference() -> TvReference {
    TvReference::ExactSamples
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodKind {
    /// `y | x_t` under the Gaussian prior; exact for this experiment.
    GaussianPrior,
    /// Flat-prior form `N(Hx/α_t, σ² I + (e^t - 1) HHᵀ)`.
    Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseSection {
    /// Rows of `H`.
    pub h: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub prior_mean: Vec<f64>,
    /// Rows of the prior covariance.
    pub prior_cov: Vec<Vec<f64>>,
    pub observation: Vec<f64>,
    #[serde(default = "default_likelihood")]
    pub likelihood: LikelihoodKind,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_likelihood() -> LikelihoodKind {
    LikelihoodKind::GaussianPrior
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RewardFn {
    /// `clamp(x_0, -bound, bound)`.
    Clamp { bound: f64 },
    Constant { value: f64 },
}

impl RewardFn {
    pub fn bound(&self) -> f64 {
        match *self {
            Self::Clamp { bound } => bound,
            Self::Constant { value } => value.abs(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Self::Clamp { bound } => x[0].clamp(-bound, bound),
            Self::Constant { value } => value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSection {
    /// Target reward values; each is also the guidance value.
    pub targets: Vec<f64>,
    pub reward: RewardFn,
    /// Also sample from a score network trained on `train.n[0]` data.
    #[serde(default)]
    pub trained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_radius() -> f64 {
    6.0
}
fn default_resolution() -> usize {
    41
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default = "default_rule")]
    pub seed_rule: String,
    #[serde(default)]
    pub density: Option<DensitySource>,
    #[serde(default)]
    pub schedule: Option<ScheduleSection>,
    #[serde(default)]
    pub approx: Option<ApproxSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub sampler: Option<SamplerSection>,
    #[serde(default)]
    pub tv: Option<TvSection>,
    #[serde(default)]
    pub inverse: Option<InverseSection>,
    #[serde(default)]
    pub reward: Option<RewardSection>,
    #[serde(default)]
    pub validate: Option<ValidateSection>,
}

fn default_rule() -> String {
    SEED_RULE.to_string()
}

/// A parsed manifest plus the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub manifest: Manifest,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        if m.seed_rule != SEED_RULE {
            return Err(Error::Manifest(format!("unknown seed rule {:?}; this build implements {SEED_RULE:?}", m.seed_rule)));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Loaded> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
        let manifest = Self::parse(&text)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Loaded { manifest, base_dir })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(hex::encode(&digest[..8]))
    }

    /// Seed of a sweep cell, keyed by experiment kind and cell labels.
    pub fn cell_seed(&self, labels: &[&str]) -> u64 {
        let mut all = vec![self.kind.name()];
        all.extend_from_slice(labels);
        derive_seed(self.seed, &all)
    }

    pub fn section<'a, T>(&self, s: &'a Option<T>, name: &str) -> Result<&'a T> {
        s.as_ref().ok_or_else(|| Error::Manifest(format!("{} manifest needs a [{name}] section", self.kind.name())))
    }
}
