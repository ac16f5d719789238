//! Estimators: weighted score risk, histogram total variation, SubOpt,
//! posterior-mean error and log-log rate fits.

use std::io::Write;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::densities::{ConditionalDensitySpec, GuidanceLaw};
use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::quadrature::GaussLegendre;
use crate::rng::indexed_stream;
use crate::schedule::{alpha_sigma_unchecked, DiffusionSchedule};

/// Time strata of the risk estimator.
pub const RISK_STRATA: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub mc_std_error: f64,
    pub t_nodes: usize,
    pub x_draws_per_t: usize,
}

/// Which branch of the candidate is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `s(x, y, t)` against `∇log p_t(x|y)`.
    Conditional,
    /// `s(x, ∅, t)` against `∇log p_t(x)`.
    Unconditional,
}

/// Stratified Monte Carlo estimate of
/// `(1/(T - t0)) ∫ E‖s(x_t, y, t) - ∇log p_t(x_t|y)‖² dt`.
///
/// Draw `i` uses the stream `indexed_stream(seed, i)` and lands in stratum
/// `i mod 32`, so the estimate does not depend on how draws are sharded.
pub fn score_risk<M: ScoreModel + ?Sized>(
    candidate: &M,
    spec: &ConditionalDensitySpec,
    schedule: &DiffusionSchedule,
    law: &GuidanceLaw,
    branch: Branch,
    draws: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if draws == 0 {
        return Err(Error::InvalidConfig("risk needs at least one draw".into()));
    }
    if let GuidanceLaw::Fixed(y) = law {
        spec.check_y(y)?;
    }
    let strata = RISK_STRATA.min(draws);
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); strata];
    for i in 0..draws {
        let mut rng = indexed_stream(seed, i as u64);
        let k = i % strata;
        let t = schedule.t0 + schedule.width() * (k as f64 + rng.random::<f64>()) / strata as f64;
        let sample = spec.sample(law, &mut rng);
        let (a, s) = alpha_sigma_unchecked(t);
        let xt: Vec<f64> = sample.x.iter().map(|x| a * x + s * rng.sample::<f64, _>(StandardNormal)).collect();
        let (cand, truth) = match branch {
            Branch::Conditional => (candidate.score(&xt, Some(&sample.y), t)?, spec.exact_score(&xt, &sample.y, t)?),
            Branch::Unconditional => (candidate.score(&xt, None, t)?, spec.marginal_score(&xt, t)?),
        };
        if cand.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("candidate score at x = {xt:?}, y = {:?}, t = {t}", sample.y)));
        }
        let e: f64 = cand.iter().zip(&truth).map(|(c, o)| (c - o).powi(2)).sum();
        sums[k].0 += e;
        sums[k].1 += e * e;
        sums[k].2 += 1;
    }
    let mut value = 0.0;
    let mut var = 0.0;
    let all_repeat = sums.iter().all(|s| s.2 >= 2);
    for &(s1, s2, n) in &sums {
        let nf = n as f64;
        let mean = s1 / nf;
        value += mean / strata as f64;
        if all_repeat {
            let v = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
            var += v / nf / (strata * strata) as f64;
        }
    }
    if !all_repeat {
        let (s1, s2): (f64, f64) = sums.iter().fold((0.0, 0.0), |acc, s| (acc.0 + s.0, acc.1 + s.1));
        let nf = draws as f64;
        let mean = s1 / nf;
        var = if draws > 1 { ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0) / nf } else { 0.0 };
    }
    Ok(RiskEstimate {
        value,
        mc_std_error: var.sqrt(),
        t_nodes: strata,
        x_draws_per_t: draws / strata,
    })
}

/// Conditional risk `R`, unconditional risk `R₀` and the mixed risk
/// `R⋆ = ½R + ½R₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixedRisk {
    pub conditional: RiskEstimate,
    pub unconditional: RiskEstimate,
    pub mixed: f64,
    pub mixed_std_error: f64,
}

pub fn mixed_score_risk<M: ScoreModel + ?Sized>(
    candidate: &M,
    spec: &ConditionalDensitySpec,
    schedule: &DiffusionSchedule,
    draws: usize,
    seed: u64,
) -> Result<MixedRisk> {
    let law = GuidanceLaw::Uniform;
    let conditional = score_risk(candidate, spec, schedule, &law, Branch::Conditional, draws, seed)?;
    let unconditional = score_risk(candidate, spec, schedule, &law, Branch::Unconditional, draws, seed)?;
    Ok(MixedRisk {
        conditional,
        unconditional,
        mixed: 0.5 * conditional.value + 0.5 * unconditional.value,
        mixed_std_error: 0.5 * (conditional.mc_std_error.powi(2) + unconditional.mc_std_error.powi(2)).sqrt(),
    })
}

/// Weighted L2 error `∫ ‖s(x, y, t) - ∇log p_t(x|y)‖² p_t(x|y) dx` over the
/// box `[-half, half]` by composite Gauss-Legendre (one dimension).
pub fn weighted_l2_error_1d<M: ScoreModel + ?Sized>(candidate: &M, spec: &ConditionalDensitySpec, y: Option<&[f64]>, t: f64, half: f64, panels: usize) -> Result<f64> {
    if spec.d() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: spec.d() });
    }
    let rule = GaussLegendre::new(16);
    let mut acc = 0.0;
    for (x, w) in rule.composite(-half, half, panels) {
        let s = candidate.score(&[x], y, t)?[0];
        let (p, e) = match y {
            Some(y) => (spec.diffused_density(&[x], y, t)?, spec.exact_score(&[x], y, t)?[0]),
            None => {
                let (l, g) = spec.marginal_log_and_score(&[x], t)?;
                (l.exp(), g[0])
            }
        };
        acc += w * (s - e).powi(2) * p;
    }
    Ok(acc)
}

fn cell_of(x: &[f64], bounds: &[(f64, f64)], bins: usize) -> usize {
    let mut idx = 0;
    for (v, &(lo, hi)) in x.iter().zip(bounds).rev() {
        let c = if *v < lo {
            0
        } else if *v >= hi {
            bins + 1
        } else {
            1 + (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
        };
        idx = idx * (bins + 2) + c;
    }
    idx
}

fn histogram(samples: &[Vec<f64>], bounds: &[(f64, f64)], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; (bins + 2).pow(bounds.len() as u32)];
    for s in samples {
        h[cell_of(s, bounds, bins)] += 1.0;
    }
    let n = samples.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

fn check_tv_args(bounds: &[(f64, f64)], bins: usize) -> Result<()> {
    if bounds.is_empty() || bounds.len() > 2 {
        return Err(Error::InvalidConfig(format!("histogram TV supports d in 1..=2, got {}", bounds.len())));
    }
    if bins < 2 {
        return Err(Error::InvalidConfig("histogram TV needs at least 2 bins".into()));
    }
    if bounds.iter().any(|(lo, hi)| !(hi > lo)) {
        return Err(Error::InvalidConfig("histogram bounds must satisfy lo < hi".into()));
    }
    Ok(())
}

fn check_dims(samples: &[Vec<f64>], bounds: &[(f64, f64)]) -> Result<()> {
    match samples.iter().find(|s| s.len() != bounds.len()) {
        Some(s) => Err(Error::DimensionMismatch { expected: bounds.len(), got: s.len() }),
        None => Ok(()),
    }
}

/// Two-sample histogram TV on a regular grid over `bounds`, with one
/// overflow cell per side of every axis.
pub fn tv_histogram(a: &[Vec<f64>], b: &[Vec<f64>], bounds: &[(f64, f64)], bins: usize) -> Result<f64> {
    check_tv_args(bounds, bins)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidConfig("histogram TV needs nonempty sample sets".into()));
    }
    check_dims(a, bounds)?;
    check_dims(b, bounds)?;
    let (ha, hb) = (histogram(a, bounds, bins), histogram(b, bounds, bins));
    Ok(0.5 * ha.iter().zip(&hb).map(|(p, q)| (p - q).abs()).sum::<f64>())
}

/// Histogram TV between samples and a reference density whose cell masses
/// are integrated by Gauss-Legendre. The reference mass outside `bounds` is
/// `1 - inside`, compared against the pooled sample overflow.
pub fn tv_histogram_reference<F: Fn(&[f64]) -> f64>(samples: &[Vec<f64>], density: F, bounds: &[(f64, f64)], bins: usize) -> Result<f64> {
    check_tv_args(bounds, bins)?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("histogram TV needs a nonempty sample set".into()));
    }
    check_dims(samples, bounds)?;
    let hs = histogram(samples, bounds, bins);
    let rule = GaussLegendre::new(8);
    let mut hr = vec![0.0; hs.len()];
    let width: Vec<f64> = bounds.iter().map(|(lo, hi)| (hi - lo) / bins as f64).collect();
    let mut inside = 0.0;
    let cells = bins.pow(bounds.len() as u32);
    for c in 0..cells {
        let mut rem = c;
        let mut ranges = Vec::with_capacity(bounds.len());
        let mut idx = 0;
        let mut stride = 1;
        for (k, &(lo, _)) in bounds.iter().enumerate() {
            let j = rem % bins;
            rem /= bins;
            ranges.push((lo + j as f64 * width[k], lo + (j + 1) as f64 * width[k]));
            idx += (j + 1) * stride;
            stride *= bins + 2;
        }
        let mass = if ranges.len() == 1 {
            rule.on(ranges[0].0, ranges[0].1).map(|(x, w)| w * density(&[x])).sum::<f64>()
        } else {
            let mut m = 0.0;
            for (x0, w0) in rule.on(ranges[0].0, ranges[0].1) {
                for (x1, w1) in rule.on(ranges[1].0, ranges[1].1) {
                    m += w0 * w1 * density(&[x0, x1]);
                }
            }
            m
        };
        hr[idx] = mass;
        inside += mass;
    }
    let inner: f64 = hs
        .iter()
        .zip(&hr)
        .enumerate()
        .filter(|(i, _)| is_inner(*i, bounds.len(), bins))
        .map(|(_, (p, q))| (p - q).abs())
        .sum();
    let sample_outside: f64 = hs.iter().enumerate().filter(|(i, _)| !is_inner(*i, bounds.len(), bins)).map(|(_, p)| p).sum();
    // overflow cells are compared in aggregate
    let outside = (sample_outside - (1.0 - inside).max(0.0)).abs();
    Ok(0.5 * (inner + outside))
}

fn is_inner(mut idx: usize, dims: usize, bins: usize) -> bool {
    for _ in 0..dims {
        let c = idx % (bins + 2);
        if c == 0 || c == bins + 1 {
            return false;
        }
        idx /= bins + 2;
    }
    true
}

/// `a - mean r(x)`; rewards above `bound` in magnitude are a validation
/// failure.
pub fn subopt<F: Fn(&[f64]) -> f64>(samples: &[Vec<f64>], reward: F, bound: f64, a: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("SubOpt needs samples".into()));
    }
    let mut acc = 0.0;
    for x in samples {
        let r = reward(x);
        if !(r.abs() <= bound) {
            return Err(Error::Validation(format!("reward {r} at {x:?} exceeds the declared bound {bound}")));
        }
        acc += r;
    }
    Ok(a - acc / samples.len() as f64)
}

pub fn sample_mean(samples: &[Vec<f64>]) -> Vec<f64> {
    let d = samples.first().map_or(0, |s| s.len());
    let mut m = vec![0.0; d];
    for s in samples {
        for (mi, v) in m.iter_mut().zip(s) {
            *mi += v;
        }
    }
    m.iter_mut().for_each(|v| *v /= samples.len() as f64);
    m
}

pub fn sample_variance(samples: &[Vec<f64>]) -> Vec<f64> {
    let m = sample_mean(samples);
    let n = samples.len() as f64;
    let mut v = vec![0.0; m.len()];
    for s in samples {
        for ((vi, mi), x) in v.iter_mut().zip(&m).zip(s) {
            *vi += (x - mi).powi(2);
        }
    }
    v.iter_mut().for_each(|x| *x /= (n - 1.0).max(1.0));
    v
}

/// `‖mean(samples) - oracle_mean‖`.
pub fn posterior_mean_error(samples: &[Vec<f64>], oracle_mean: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("posterior mean needs samples".into()));
    }
    Ok(sample_mean(samples).iter().zip(oracle_mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line through `(ln size, ln error)`.
pub fn rate_fit(sizes: &[f64], errors: &[f64]) -> Result<RateFit> {
    if sizes.len() != errors.len() || sizes.len() < 3 {
        return Err(Error::InvalidConfig("rate fit needs two equal-length lists of at least 3 values".into()));
    }
    if sizes.iter().chain(errors).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidConfig("rate fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("rate fit needs at least two distinct sizes".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot <= 1e-300 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(RateFit { slope, intercept, r2 })
}

/// One CSV row of an estimator output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub estimator: String,
    pub config_hash: String,
    pub value: f64,
    pub std_error: f64,
    pub draws: usize,
    pub seed: u64,
}

pub fn write_estimate_rows<W: Write>(rows: &[EstimateRow], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["estimator", "config_hash", "value", "std_error", "draws", "seed"])?;
    for r in rows {
        wr.write_record([
            r.estimator.clone(),
            r.config_hash.clone(),
            format!("{:.16e}", r.value),
            format!("{:.16e}", r.std_error),
            r.draws.to_string(),
            r.seed.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
