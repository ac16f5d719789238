//! Euler–Maruyama discretisation of the time-reversed OU SDE with a plug-in
//! score and early stopping at `t0`.

use std::io::Write;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::rng::indexed_stream;

/// Magnitude cap on each score component inside the drift.
pub const SCORE_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeGrid {
    Uniform,
    /// `t_k = T (t0/T)^{k/steps}`, dense near `t0`.
    #[default]
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardConfig {
    #[serde(rename = "T")]
    pub t_end: f64,
    pub t0: f64,
    pub steps: usize,
    #[serde(default)]
    pub grid: TimeGrid,
    pub seed: u64,
}

impl BackwardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("backward sampler needs at least one step".into()));
        }
        if !(self.t0 > 0.0 && self.t0 < self.t_end && self.t_end.is_finite()) {
            return Err(Error::InvalidConfig(format!("need 0 < t0 < T, got t0 = {}, T = {}", self.t0, self.t_end)));
        }
        Ok(())
    }

    /// Reverse-time nodes, `T` first and `t0` last, strictly decreasing.
    pub fn nodes(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.steps;
        let mut v: Vec<f64> = (0..=n)
            .map(|k| {
                let f = k as f64 / n as f64;
                match self.grid {
                    TimeGrid::Uniform => self.t_end + (self.t0 - self.t_end) * f,
                    TimeGrid::Geometric => self.t_end * (self.t0 / self.t_end).powf(f),
                }
            })
            .collect();
        v[0] = self.t_end;
        v[n] = self.t0;
        Ok(v)
    }
}

/// Lockstep state of a group of samples, each with its own stream.
fn run<M: ScoreModel + ?Sized>(model: &M, y: Option<&[f64]>, cfg: &BackwardConfig, first: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    let nodes = cfg.nodes()?;
    let d = model.dim();
    let mut rngs: Vec<_> = (first..first + count).map(|i| indexed_stream(cfg.seed, i as u64)).collect();
    let mut xs: Vec<Vec<f64>> = rngs.iter_mut().map(|r| (0..d).map(|_| r.sample(StandardNormal)).collect()).collect();
    let mut warned = false;
    for k in 0..cfg.steps {
        let (t, dt) = (nodes[k], nodes[k] - nodes[k + 1]);
        let scores = model.score_batch(&xs, y, t)?;
        let sq = dt.sqrt();
        for (j, (x, s)) in xs.iter_mut().zip(&scores).enumerate() {
            for (xi, si) in x.iter_mut().zip(s) {
                let mut si = *si;
                if si.abs() > SCORE_CAP {
                    if !warned {
                        log::warn!("score magnitude {si:e} capped at step {k} (t = {t})");
                        warned = true;
                    }
                    si = si.clamp(-SCORE_CAP, SCORE_CAP);
                }
                let z: f64 = rngs[j].sample(StandardNormal);
                *xi += dt * (0.5 * *xi + si) + sq * z;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalAbort {
                    step: k,
                    sample: first + j,
                    detail: format!("state {x:?} at t = {t}"),
                });
            }
        }
    }
    Ok(xs)
}

/// One reverse-time trajectory started from `N(0, I)`; returns the state at
/// `t0`. Draws come from `rng`.
pub fn backward_sample<M: ScoreModel + ?Sized, R: rand::Rng + ?Sized>(model: &M, y: Option<&[f64]>, cfg: &BackwardConfig, rng: &mut R) -> Result<Vec<f64>> {
    let nodes = cfg.nodes()?;
    let mut x: Vec<f64> = (0..model.dim()).map(|_| rng.sample(StandardNormal)).collect();
    for k in 0..cfg.steps {
        let (t, dt) = (nodes[k], nodes[k] - nodes[k + 1]);
        let s = model.score(&x, y, t)?;
        for (xi, si) in x.iter_mut().zip(&s) {
            let si = si.clamp(-SCORE_CAP, SCORE_CAP);
            let z: f64 = rng.sample(StandardNormal);
            *xi += dt * (0.5 * *xi + si) + dt.sqrt() * z;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalAbort {
                step: k,
                sample: 0,
                detail: format!("state {x:?} at t = {t}"),
            });
        }
    }
    Ok(x)
}

/// Samples `first..first + count`; sample `i` draws from
/// `indexed_stream(cfg.seed, i)`, so any split of the index range yields the
/// same samples.
pub fn batch_sample_range<M: ScoreModel + ?Sized>(model: &M, y: Option<&[f64]>, cfg: &BackwardConfig, first: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::InvalidConfig("sample count must be at least 1".into()));
    }
    run(model, y, cfg, first, count)
}

pub fn batch_sample<M: ScoreModel + ?Sized>(model: &M, y: Option<&[f64]>, cfg: &BackwardConfig, count: usize) -> Result<Vec<Vec<f64>>> {
    batch_sample_range(model, y, cfg, 0, count)
}

/// One row per sample: `y` columns, then `x` columns.
pub fn write_samples_csv<W: Write>(samples: &[Vec<f64>], y: Option<&[f64]>, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    let y = y.unwrap_or(&[]);
    let d = samples.first().map_or(0, |s| s.len());
    let header: Vec<String> = (0..y.len()).map(|j| format!("y{j}")).chain((0..d).map(|i| format!("x{i}"))).collect();
    wr.write_record(&header)?;
    for s in samples {
        let row: Vec<String> = y.iter().chain(s).map(|v| format!("{v:.16e}")).collect();
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}
