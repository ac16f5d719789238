//! One runner per experiment kind. Every runner writes its CSV tables into
//! the output directory; cell seeds come from [`Manifest::cell_seed`], so a
//! cell's numbers do not depend on the sweep order or on `--jobs`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use difflab::densities::{sample_dataset, validate_assumptions, validate_fast_rate, ComponentParams, GuidanceLaw};
use difflab::diffused_poly::{DiffusedPolynomial, PolyApproxConfig};
use difflab::eval::{rate_fit, sample_mean, sample_variance, score_risk, subopt, tv_histogram, tv_histogram_reference, weighted_l2_error_1d, Branch, RiskEstimate};
use difflab::inverse::{gaussian_posterior_oracle, GaussianPriorLikelihood, GuidedScore, Likelihood, LinearMeasurement};
use difflab::model::{ExactScore, ScoreModel};
use difflab::nalgebra::DMatrix;
use difflab::rng::{derive_seed, seeded};
use difflab::sampler::{batch_sample, BackwardConfig};
use difflab::score_net::{train, ScoreNet, ScoreNetConfig, TrainConfig};
use difflab::{ConditionalDensitySpec, DiffusionSchedule, Error, Result};

use crate::manifest::{ApproxMethod, Density, ExperimentKind, LikelihoodKind, Loaded, Manifest, SamplerSection, TrainSection, TvReference};

/// Files written by a run and whether every validation check passed.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub validation_failed: bool,
}

/// `{:.16e}`: 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Writes the table with a leading `manifest_hash` column.
    fn write(&self, dir: &Path, name: &str, hash: &str, report: &mut RunReport) -> Result<()> {
        let path = dir.join(name);
        let mut wr = csv::Writer::from_writer(BufWriter::new(File::create(&path)?));
        let mut header = vec!["manifest_hash"];
        header.extend(&self.header);
        wr.write_record(&header)?;
        for row in &self.rows {
            wr.write_record(std::iter::once(hash).chain(row.iter().map(String::as_str)))?;
        }
        wr.flush()?;
        report.files.push(path);
        Ok(())
    }
}

/// Maps `f` over `0..n` on up to `jobs` threads; results keep index order
/// and the first error by index wins.
pub fn par_map<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if jobs <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("worker panicked").into_iter().map(|r| r.expect("every cell runs")).collect()
}

/// Runs the manifest's experiment into `out`.
pub fn run(loaded: &Loaded, out: &Path, jobs: usize) -> Result<RunReport> {
    std::fs::create_dir_all(out)?;
    let m = &loaded.manifest;
    let hash = m.hash()?;
    let mut report = RunReport::default();
    let resolved = out.join("manifest.resolved.toml");
    std::fs::write(&resolved, m.to_toml()?)?;
    report.files.push(resolved);
    let ctx = Ctx { loaded, out, jobs, hash: &hash };
    match m.kind {
        ExperimentKind::ApproxRate => ctx.approx_rate(&mut report)?,
        ExperimentKind::TrainRisk => ctx.train_risk(&mut report)?,
        ExperimentKind::TvSweep => ctx.tv_sweep(&mut report)?,
        ExperimentKind::Inverse => ctx.inverse(&mut report)?,
        ExperimentKind::Reward => ctx.reward(&mut report)?,
        ExperimentKind::Validate => ctx.validate(&mut report)?,
    }
    Ok(report)
}

struct Ctx<'a> {
    loaded: &'a Loaded,
    out: &'a Path,
    jobs: usize,
    hash: &'a str,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn spread(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn join(y: &[f64]) -> String {
    y.iter().map(|v| num(*v)).collect::<Vec<_>>().join(";")
}

/// Result of one (n, seed) training cell.
struct TrainedCell {
    seed: u64,
    net: Option<ScoreNet>,
    final_loss: f64,
}

impl<'a> Ctx<'a> {
    fn m(&self) -> &'a Manifest {
        &self.loaded.manifest
    }

    fn density(&self) -> Result<Density> {
        self.m().section(&self.m().density, "density")?.resolve(&self.loaded.base_dir)
    }

    fn schedule(&self) -> Result<DiffusionSchedule> {
        self.m().section(&self.m().schedule, "schedule")?.schedule()
    }

    fn backward(&self, s: &SamplerSection, seed: u64) -> Result<BackwardConfig> {
        let sched = self.schedule()?;
        let cfg = BackwardConfig { t_end: sched.t_end, t0: sched.t0, steps: s.steps, grid: s.grid, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    fn train_cell(&self, spec: &ConditionalDensitySpec, tr: &TrainSection, n: usize, seed_index: usize) -> Result<TrainedCell> {
        let sched = self.schedule()?;
        let seed = self.m().cell_seed(&["n", &n.to_string(), "seed", &seed_index.to_string()]);
        let data = sample_dataset(spec, n, &GuidanceLaw::Uniform, &mut seeded(derive_seed(seed, &["data"])))?;
        let mut net_cfg = ScoreNetConfig::new(spec.d(), spec.d_y());
        net_cfg.width = tr.width;
        net_cfg.depth = tr.depth;
        net_cfg.activation = tr.activation;
        net_cfg.clamp_mode = tr.clamp_mode;
        net_cfg.clamp_c = tr.clamp_c;
        let tc = TrainConfig {
            batch: tr.batch,
            steps: tr.steps,
            lr: tr.lr,
            t_samples_per_datum: tr.t_samples_per_datum,
            t0: sched.t0,
            t_end: sched.t_end,
            seed: derive_seed(seed, &["train"]),
            mask_rate: tr.mask_rate,
        };
        match train(&data, &net_cfg, &tc) {
            Ok(t) => Ok(TrainedCell { seed, final_loss: *t.loss_trace.last().unwrap_or(&f64::NAN), net: Some(t.net) }),
            Err(Error::Diverged { step, loss }) => {
                log::warn!("training diverged for n = {n}, seed {seed_index} at step {step} (loss {loss})");
                Ok(TrainedCell { seed, net: None, final_loss: loss })
            }
            Err(e) => Err(e),
        }
    }

    fn checked_sizes(&self, sizes: &[usize], what: &str) -> Result<()> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::Manifest(format!("{what} list must be nonempty and positive")));
        }
        if sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Manifest(format!("{what} list must be strictly ascending")));
        }
        Ok(())
    }

    fn approx_rate(&self, report: &mut RunReport) -> Result<()> {
        let m = self.m();
        let sec = m.section(&m.approx, "approx")?;
        let density = self.density()?;
        let spec = &density.spec;
        self.checked_sizes(&sec.n_values, "N")?;
        if spec.d() != 1 {
            return Err(Error::Manifest("approx-rate measures weighted L2 errors in one dimension (d = 1)".into()));
        }
        let methods: Vec<&str> = match sec.method {
            ApproxMethod::Standard => vec!["standard"],
            ApproxMethod::Fast => vec!["fast"],
            ApproxMethod::Both => vec!["standard", "fast"],
        };
        if methods.contains(&"fast") && density.fast.is_none() {
            return Err(Error::Manifest("the fast method needs a fast-rate density".into()));
        }
        let ys = if sec.y_grid.is_empty() { vec![vec![0.5; spec.d_y()]] } else { sec.y_grid.clone() };
        // cells: (N, method); each returns one error per time
        let cells: Vec<(usize, &str)> = sec.n_values.iter().flat_map(|&n| methods.iter().map(move |&me| (n, me))).collect();
        let results = par_map(self.jobs, cells.len(), |i| {
            let (n, method) = cells[i];
            let poly = match method {
                "standard" => DiffusedPolynomial::build(spec, PolyApproxConfig::new(n, sec.beta))?,
                _ => {
                    let fast = density.fast.as_ref().expect("checked above");
                    DiffusedPolynomial::build_fast(fast, PolyApproxConfig::new_fast(n, sec.beta, fast.c2))?
                }
            }
            .calibrate(&sec.calibration_times, sec.calibration_resolution)?;
            let half = poly.config().half_width();
            sec.times
                .iter()
                .map(|&t| {
                    let errs = ys
                        .iter()
                        .map(|y| weighted_l2_error_1d(&poly, spec, Some(y), t, half, sec.panels))
                        .collect::<Result<Vec<f64>>>()?;
                    Ok((mean(&errs), spread(&errs) / (errs.len() as f64).sqrt()))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut cells_t = Table::new(&["method", "N", "t", "error", "se"]);
        for ((n, method), errs) in cells.iter().zip(&results) {
            for (t, (e, se)) in sec.times.iter().zip(errs) {
                cells_t.push(vec![method.to_string(), n.to_string(), num(*t), num(*e), num(*se)]);
            }
        }
        let mut slopes = Table::new(&["method", "t", "slope", "intercept", "r2"]);
        if sec.n_values.len() >= 3 {
            for &method in &methods {
                for (k, &t) in sec.times.iter().enumerate() {
                    let sizes: Vec<f64> = sec.n_values.iter().map(|&n| n as f64).collect();
                    let errs: Vec<f64> = cells.iter().zip(&results).filter(|((_, me), _)| *me == method).map(|(_, r)| r[k].0).collect();
                    match rate_fit(&sizes, &errs) {
                        Ok(f) => slopes.push(vec![method.to_string(), num(t), num(f.slope), num(f.intercept), num(f.r2)]),
                        Err(e) => log::warn!("no slope for {method} at t = {t}: {e}"),
                    }
                }
            }
        }
        cells_t.write(self.out, "approx_errors.csv", self.hash, report)?;
        if !slopes.rows.is_empty() {
            slopes.write(self.out, "approx_slopes.csv", self.hash, report)?;
        }
        Ok(())
    }

    fn risk(&self, model: &dyn ScoreModel, spec: &ConditionalDensitySpec, draws: usize, branch: Branch) -> Result<RiskEstimate> {
        let seed = self.m().cell_seed(&["risk"]);
        score_risk(model, spec, &self.schedule()?, &GuidanceLaw::Uniform, branch, draws, seed)
    }

    fn train_risk(&self, report: &mut RunReport) -> Result<()> {
        let m = self.m();
        let tr = m.section(&m.train, "train")?;
        let spec = self.density()?.spec;
        self.checked_sizes(&tr.n, "n")?;
        if tr.seeds == 0 {
            return Err(Error::Manifest("train.seeds must be positive".into()));
        }
        let cells: Vec<(usize, usize)> = tr.n.iter().flat_map(|&n| (0..tr.seeds).map(move |s| (n, s))).collect();
        let results = par_map(self.jobs, cells.len(), |i| {
            let (n, s) = cells[i];
            let cell = self.train_cell(&spec, tr, n, s)?;
            let risks = match &cell.net {
                Some(net) => Some((
                    self.risk(net, &spec, tr.risk_draws, Branch::Conditional)?,
                    self.risk(net, &spec, tr.risk_draws, Branch::Unconditional)?,
                )),
                None => None,
            };
            Ok((cell, risks))
        })?;
        let mut t = Table::new(&["n", "seed_index", "cell_seed", "status", "risk", "risk_se", "risk_unconditional", "risk_unconditional_se", "final_loss"]);
        for ((n, s), (cell, risks)) in cells.iter().zip(&results) {
            let mut row = vec![n.to_string(), s.to_string(), cell.seed.to_string()];
            match risks {
                Some((c, u)) => row.extend(["ok".into(), num(c.value), num(c.mc_std_error), num(u.value), num(u.mc_std_error)]),
                None => row.extend(["diverged".into(), String::new(), String::new(), String::new(), String::new()]),
            }
            row.push(num(cell.final_loss));
            t.push(row);
        }
        t.write(self.out, "risk_cells.csv", self.hash, report)?;

        let zero = ScoreNet::new(ScoreNetConfig::new(spec.d(), spec.d_y()), self.schedule()?, 0)?;
        let base = self.risk(&zero, &spec, tr.risk_draws, Branch::Conditional)?;
        let mut summary = Table::new(&["row", "n", "mean_risk", "spread", "cells_ok", "slope", "r2"]);
        summary.push(vec!["baseline".into(), String::new(), num(base.value), num(base.mc_std_error), String::new(), String::new(), String::new()]);
        let mut means = Vec::new();
        for &n in &tr.n {
            let vals: Vec<f64> = cells.iter().zip(&results).filter(|((cn, _), _)| *cn == n).filter_map(|(_, (_, r))| r.map(|r| r.0.value)).collect();
            if vals.is_empty() {
                summary.push(vec!["n".into(), n.to_string(), String::new(), String::new(), "0".into(), String::new(), String::new()]);
                continue;
            }
            means.push((n as f64, mean(&vals)));
            summary.push(vec!["n".into(), n.to_string(), num(mean(&vals)), num(spread(&vals)), vals.len().to_string(), String::new(), String::new()]);
        }
        if means.len() >= 3 {
            let (sizes, errs): (Vec<f64>, Vec<f64>) = means.into_iter().unzip();
            let f = rate_fit(&sizes, &errs)?;
            summary.push(vec!["slope".into(), String::new(), String::new(), String::new(), String::new(), num(f.slope), num(f.r2)]);
        }
        summary.write(self.out, "risk_summary.csv", self.hash, report)?;
        Ok(())
    }

    fn tv_sweep(&self, report: &mut RunReport) -> Result<()> {
        let m = self.m();
        let (tr, sam, tv) = (m.section(&m.train, "train")?, m.section(&m.sampler, "sampler")?, m.section(&m.tv, "tv")?);
        let spec = self.density()?.spec;
        self.checked_sizes(&tr.n, "n")?;
        if tv.y_grid.is_empty() {
            return Err(Error::Manifest("tv.y_grid must not be empty".into()));
        }
        if tv.bounds.len() != spec.d() {
            return Err(Error::Manifest(format!("tv.bounds needs {} axes", spec.d())));
        }
        for y in &tv.y_grid {
            spec.density(&vec![0.0; spec.d()], y)?;
        }
        let exact = ExactScore::new(&spec);
        let controls = par_map(self.jobs, tv.y_grid.len(), |k| {
            let y = &tv.y_grid[k];
            let cfg = self.backward(sam, m.cell_seed(&["exact", &k.to_string()]))?;
            let xs = batch_sample(&exact, Some(y), &cfg, sam.samples)?;
            let d = tv_histogram_reference(&xs, |x| spec.density(x, y).unwrap_or(0.0), &tv.bounds, tv.bins)?;
            Ok((xs, d))
        })?;
        let cells: Vec<(usize, usize)> = tr.n.iter().flat_map(|&n| (0..tr.seeds).map(move |s| (n, s))).collect();
        let trained = par_map(self.jobs, cells.len(), |i| {
            let (n, s) = cells[i];
            let cell = self.train_cell(&spec, tr, n, s)?;
            let Some(net) = cell.net else {
                return Ok((cell.seed, None));
            };
            let tvs = tv
                .y_grid
                .iter()
                .enumerate()
                .map(|(k, y)| {
                    let cfg = self.backward(sam, m.cell_seed(&["samples", &n.to_string(), &s.to_string(), &k.to_string()]))?;
                    let xs = batch_sample(&net, Some(y), &cfg, sam.samples)?;
                    match tv.reference {
                        TvReference::ExactSamples => tv_histogram(&xs, &controls[k].0, &tv.bounds, tv.bins),
                        TvReference::Density => tv_histogram_reference(&xs, |x| spec.density(x, y).unwrap_or(0.0), &tv.bounds, tv.bins),
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((cell.seed, Some(tvs)))
        })?;
        let mut t = Table::new(&["row", "n", "seed_index", "cell_seed", "y", "tv"]);
        for (k, (_, d)) in controls.iter().enumerate() {
            t.push(vec!["control".into(), String::new(), String::new(), String::new(), join(&tv.y_grid[k]), num(*d)]);
        }
        for ((n, s), (seed, tvs)) in cells.iter().zip(&trained) {
            for (k, y) in tv.y_grid.iter().enumerate() {
                let v = tvs.as_ref().map_or(String::new(), |v| num(v[k]));
                t.push(vec!["trained".into(), n.to_string(), s.to_string(), seed.to_string(), join(y), v]);
            }
        }
        t.write(self.out, "tv_cells.csv", self.hash, report)?;

        let mut summary = Table::new(&["row", "n", "mean_tv", "se", "cells_ok", "slope", "r2"]);
        let ctl: Vec<f64> = controls.iter().map(|c| c.1).collect();
        summary.push(vec!["control".into(), String::new(), num(mean(&ctl)), num(spread(&ctl) / (ctl.len() as f64).sqrt()), String::new(), String::new(), String::new()]);
        let mut means = Vec::new();
        for &n in &tr.n {
            // one value per seed: the TV averaged over the y grid
            let per_seed: Vec<f64> = cells.iter().zip(&trained).filter(|((cn, _), _)| *cn == n).filter_map(|(_, (_, v))| v.as_ref().map(|v| mean(v))).collect();
            if per_seed.is_empty() {
                summary.push(vec!["n".into(), n.to_string(), String::new(), String::new(), "0".into(), String::new(), String::new()]);
                continue;
            }
            let mu = mean(&per_seed);
            means.push((n as f64, mu));
            summary.push(vec!["n".into(), n.to_string(), num(mu), num(spread(&per_seed) / (per_seed.len() as f64).sqrt()), per_seed.len().to_string(), String::new(), String::new()]);
        }
        if means.len() >= 3 {
            let (sizes, vals): (Vec<f64>, Vec<f64>) = means.into_iter().unzip();
            let f = rate_fit(&sizes, &vals)?;
            summary.push(vec!["slope".into(), String::new(), String::new(), String::new(), String::new(), num(f.slope), num(f.r2)]);
        }
        summary.write(self.out, "tv_summary.csv", self.hash, report)?;
        Ok(())
    }

    fn inverse(&self, report: &mut RunReport) -> Result<()> {
        let m = self.m();
        let (inv, sam) = (m.section(&m.inverse, "inverse")?, m.section(&m.sampler, "sampler")?);
        let meas = LinearMeasurement::from_rows(&inv.h, inv.sigma2)?;
        meas.eigen_condition();
        let d = meas.d();
        if inv.prior_cov.len() != d || inv.prior_cov.iter().any(|r| r.len() != d) {
            return Err(Error::Manifest(format!("inverse.prior_cov must be {d}×{d}")));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| inv.prior_cov[i][j]);
        let prior = ConditionalDensitySpec::from_components(
            d,
            0,
            vec![ComponentParams { logit_bias: 0.0, logit_slope: vec![], mean_offset: inv.prior_mean.clone(), mean_slope: vec![vec![]; d], cov: inv.prior_cov.clone() }],
        )?;
        let likelihood = match inv.likelihood {
            LikelihoodKind::GaussianPrior => Likelihood::GaussianPrior(GaussianPriorLikelihood::new(meas.clone(), &inv.prior_mean, &cov)?),
            LikelihoodKind::Measurement => Likelihood::Measurement(meas.clone()),
        };
        let guided = GuidedScore { prior: ExactScore::new(&prior), likelihood, observation: inv.observation.clone() };
        let seed = m.cell_seed(&["samples"]);
        let xs = batch_sample(&guided, Some(&[]), &self.backward(sam, seed)?, sam.samples)?;
        let (pm, pc) = gaussian_posterior_oracle(&meas, &inv.prior_mean, &cov, &inv.observation)?;
        let (sm, sv) = (sample_mean(&xs), sample_variance(&xs));
        let mut t = Table::new(&["coord", "oracle_mean", "sample_mean", "abs_error", "se", "oracle_var", "sample_var", "marginal_tv", "samples", "seed"]);
        for i in 0..d {
            let (mu, var) = (pm[i], pc[(i, i)]);
            let sd = var.sqrt();
            let marg: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[i]]).collect();
            let pdf = |x: &[f64]| (-0.5 * ((x[0] - mu) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            let tvi = tv_histogram_reference(&marg, pdf, &[(mu - 6.0 * sd, mu + 6.0 * sd)], inv.bins)?;
            t.push(vec![
                i.to_string(),
                num(mu),
                num(sm[i]),
                num((sm[i] - mu).abs()),
                num((sv[i] / xs.len() as f64).sqrt()),
                num(var),
                num(sv[i]),
                num(tvi),
                xs.len().to_string(),
                seed.to_string(),
            ]);
        }
        t.write(self.out, "inverse.csv", self.hash, report)?;
        Ok(())
    }

    fn reward(&self, report: &mut RunReport) -> Result<()> {
        let m = self.m();
        let (rw, sam) = (m.section(&m.reward, "reward")?, m.section(&m.sampler, "sampler")?);
        let spec = self.density()?.spec;
        if spec.d_y() != 1 {
            return Err(Error::Manifest("reward experiments use scalar guidance (d_y = 1)".into()));
        }
        if rw.targets.is_empty() {
            return Err(Error::Manifest("reward.targets must not be empty".into()));
        }
        let net = if rw.trained {
            let tr = m.section(&m.train, "train")?;
            let n = *tr.n.first().ok_or_else(|| Error::Manifest("train.n must not be empty".into()))?;
            let cell = self.train_cell(&spec, tr, n, 0)?;
            Some(cell.net.ok_or(Error::Diverged { step: tr.steps, loss: cell.final_loss })?)
        } else {
            None
        };
        let exact = ExactScore::new(&spec);
        let mut models: Vec<(&str, &dyn ScoreModel)> = vec![("exact", &exact)];
        if let Some(net) = &net {
            models.push(("trained", net));
        }
        let mut t = Table::new(&["method", "target", "subopt", "se", "samples", "seed"]);
        for (name, model) in models {
            for (k, &a) in rw.targets.iter().enumerate() {
                let seed = m.cell_seed(&["samples", name, &k.to_string()]);
                let xs = batch_sample(model, Some(&[a]), &self.backward(sam, seed)?, sam.samples)?;
                let g = subopt(&xs, |x| rw.reward.eval(x), rw.reward.bound(), a)?;
                let r: Vec<f64> = xs.iter().map(|x| rw.reward.eval(x)).collect();
                t.push(vec![name.into(), num(a), num(g), num(spread(&r) / (r.len() as f64).sqrt()), xs.len().to_string(), seed.to_string()]);
            }
        }
        t.write(self.out, "reward.csv", self.hash, report)?;
        Ok(())
    }

    fn validate(&self, report: &mut RunReport) -> Result<()> {
        let m = self.m();
        let density = self.density()?;
        let (radius, resolution) = m.validate.as_ref().map_or((6.0, 41), |v| (v.radius, v.resolution));
        let rep = match &density.fast {
            Some(f) => validate_fast_rate(f, radius, resolution),
            None => validate_assumptions(&density.spec, radius, resolution),
        };
        let mut t = Table::new(&["check", "value", "pass"]);
        t.push(vec!["envelope_violation".into(), num(rep.envelope_violation), rep.envelope_pass.to_string()]);
        t.push(vec!["min_weight".into(), num(rep.min_weight), rep.weights_pass.to_string()]);
        t.push(vec!["max_weight_sum_error".into(), num(rep.max_weight_sum_error), rep.weights_pass.to_string()]);
        if let Some(f) = &rep.fast_rate {
            t.push(vec!["fast_rate_min_f".into(), num(f.min_f), f.pass.to_string()]);
            t.push(vec!["fast_rate_max_f".into(), num(f.max_f), f.pass.to_string()]);
        }
        t.write(self.out, "validate.csv", self.hash, report)?;
        report.validation_failed = !rep.pass();
        Ok(())
    }
}
