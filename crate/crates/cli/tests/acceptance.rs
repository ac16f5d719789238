//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Built with `harness = false` so the
//! lines reach stdout without `--nocapture`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use difflab::densities::{sample_dataset, ComponentParams, GuidanceLaw};
use difflab::diffused_poly::{g_moment, PolyApproxConfig};
use difflab::eval::{score_risk, tv_histogram_reference, Branch};
use difflab::model::{FnScore, ScoreModel};
use difflab::rng::seeded;
use difflab::sampler::{batch_sample, BackwardConfig, TimeGrid};
use difflab::schedule::alpha_sigma;
use difflab::score_net::{train, ScoreNet, ScoreNetConfig, TrainConfig};
use difflab::{ConditionalDensitySpec, DiffusionSchedule};
use difflab_cli::{run, Manifest};
use rand::Rng;
use tempfile::TempDir;

type Outcome = Result<(bool, String), String>;
type Criterion = Box<dyn FnOnce(&mut Runs) -> Outcome>;

fn manifest_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests").join(format!("{name}.toml"))
}

/// Output directories of the first run of each manifest, reused by the
/// determinism check.
struct Runs {
    root: TempDir,
    dirs: HashMap<String, PathBuf>,
}

impl Runs {
    fn get(&mut self, name: &str) -> Result<PathBuf, String> {
        if let Some(d) = self.dirs.get(name) {
            return Ok(d.clone());
        }
        let dir = self.root.path().join(format!("{name}-1"));
        run_manifest(name, &dir)?;
        self.dirs.insert(name.to_string(), dir.clone());
        Ok(dir)
    }
}

fn run_manifest(name: &str, out: &Path) -> Result<(), String> {
    let loaded = Manifest::load(&manifest_path(name)).map_err(|e| e.to_string())?;
    let report = run(&loaded, out, 1).map_err(|e| format!("{name}: {e}"))?;
    if report.validation_failed {
        return Err(format!("{name}: validation failed"));
    }
    Ok(())
}

type Row = HashMap<String, String>;

fn read_csv(path: &Path) -> Result<Vec<Row>, String> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let header = rd.headers().map_err(|e| e.to_string())?.clone();
    rd.records()
        .map(|r| {
            let r = r.map_err(|e| e.to_string())?;
            Ok(header.iter().zip(r.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        })
        .collect()
}

fn field(row: &Row, key: &str) -> Result<f64, String> {
    row.get(key).ok_or(format!("missing column {key}"))?.parse().map_err(|e| format!("{key}: {e}"))
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn mixture_specs() -> Vec<ConditionalDensitySpec> {
    let comp = |bias: f64, slope: Vec<f64>, mean: Vec<f64>, mean_slope: Vec<Vec<f64>>, cov: Vec<Vec<f64>>| ComponentParams {
        logit_bias: bias,
        logit_slope: slope,
        mean_offset: mean,
        mean_slope,
        cov,
    };
    vec![
        ConditionalDensitySpec::from_components(
            1,
            1,
            vec![
                comp(0.4, vec![-1.2], vec![-1.0], vec![vec![0.9]], vec![vec![0.25]]),
                comp(-0.3, vec![0.8], vec![1.5], vec![vec![-0.4]], vec![vec![0.7]]),
            ],
        )
        .unwrap(),
        ConditionalDensitySpec::from_components(
            2,
            1,
            vec![
                comp(0.0, vec![1.5], vec![0.5, -1.0], vec![vec![0.6], vec![0.3]], vec![vec![0.6, 0.25], vec![0.25, 0.5]]),
                comp(0.3, vec![-0.5], vec![-1.2, 0.8], vec![vec![-0.2], vec![0.7]], vec![vec![0.35, -0.1], vec![-0.1, 0.8]]),
                comp(-0.6, vec![0.2], vec![0.0, 0.0], vec![vec![0.0], vec![0.0]], vec![vec![1.2, 0.0], vec![0.0, 1.2]]),
            ],
        )
        .unwrap(),
        ConditionalDensitySpec::from_components(
            2,
            2,
            vec![
                comp(0.2, vec![1.0, -1.0], vec![1.0, 1.0], vec![vec![0.5, 0.0], vec![0.0, 0.5]], vec![vec![0.3, 0.1], vec![0.1, 0.3]]),
                comp(-0.1, vec![-0.5, 0.7], vec![-1.0, 0.5], vec![vec![0.2, -0.3], vec![0.4, 0.1]], vec![vec![0.9, -0.3], vec![-0.3, 0.5]]),
            ],
        )
        .unwrap(),
    ]
}

/// Exact score against central differences of the log diffused density.
fn criterion_1() -> Outcome {
    let mut rng = seeded(101);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for spec in mixture_specs() {
        for _ in 0..200 {
            let x: Vec<f64> = (0..spec.d()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..spec.d_y()).map(|_| rng.random::<f64>()).collect();
            let t = (rng.random_range(0.05f64.ln()..3.0f64.ln())).exp();
            let s = spec.exact_score(&x, &y, t).map_err(|e| e.to_string())?;
            let mut diff = 0.0;
            let mut norm = 0.0;
            for i in 0..spec.d() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += h;
                xm[i] -= h;
                let lp = spec.log_diffused_density(&xp, &y, t).map_err(|e| e.to_string())?;
                let lm = spec.log_diffused_density(&xm, &y, t).map_err(|e| e.to_string())?;
                let fd = (lp - lm) / (2.0 * h);
                diff += (s[i] - fd).powi(2);
                norm += fd * fd;
            }
            worst = worst.max(diff.sqrt() / norm.sqrt().max(1e-8));
        }
    }
    Ok((worst < 1e-4, format!("max relative error {worst:.2e} over 600 points (tol 1e-4)")))
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1] by
/// Newton iteration on the Legendre recurrence.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            loop {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    (p0, p1) = (p1, ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64);
                }
                let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    return (x, 2.0 / ((1.0 - x * x) * dp * dp));
                }
            }
        })
        .collect()
}

/// Adaptive bisection driven by the disagreement between one panel and
/// its two halves.
fn adaptive_gauss<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, rule: &[(f64, f64)], depth: u32) -> f64 {
    let panel = |lo: f64, hi: f64| {
        let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        rule.iter().map(|&(x, w)| w * f(c + h * x)).sum::<f64>() * h
    };
    let m = 0.5 * (a + b);
    let (whole, halves) = (panel(a, b), panel(a, m) + panel(m, b));
    if depth == 0 || (whole - halves).abs() <= tol {
        halves
    } else {
        adaptive_gauss(f, a, m, 0.5 * tol, rule, depth - 1) + adaptive_gauss(f, m, b, 0.5 * tol, rule, depth - 1)
    }
}

/// The diffused local monomial by direct quadrature over the cell, clipped
/// to the kernel window.
fn g_quadrature(x: f64, n: usize, v: usize, k: usize, t: f64, cfg: &PolyApproxConfig) -> f64 {
    let (a, s) = alpha_sigma(t).unwrap();
    let nf = cfg.n as f64;
    let lo = (cfg.r * ((v - 1) as f64 / nf - 0.5)).max((x - s * cfg.window) / a);
    let hi = (cfg.r * (v as f64 / nf - 0.5)).min((x + s * cfg.window) / a);
    if hi <= lo {
        return 0.0;
    }
    let kf: f64 = (1..=k).map(|i| i as f64).product();
    let integrand = |z: f64| {
        let base = z / cfg.r + 0.5 - v as f64 / nf;
        let e = -(x - a * z).powi(2) / (2.0 * s * s);
        base.powi(n as i32) * e.powi(k as i32) / kf
    };
    let rule = gauss_legendre(16);
    let scale = adaptive_gauss(&integrand, lo, hi, 0.0, &rule, 0).abs();
    adaptive_gauss(&integrand, lo, hi, 1e-12 * scale, &rule, 30) / (s * (2.0 * PI).sqrt())
}

fn criterion_2() -> Outcome {
    let mut rng = seeded(202);
    let mut worst = 0.0f64;
    let mut nonzero = 0;
    for _ in 0..500 {
        let big_n = [4usize, 8, 16, 32][rng.random_range(0..4)];
        let cfg = PolyApproxConfig::new(big_n, 2.0);
        let half = cfg.half_width();
        let x = rng.random_range(-half..half);
        let n = rng.random_range(0..=3);
        let v = rng.random_range(1..=big_n);
        let k = rng.random_range(0..=20);
        let t = (rng.random_range(0.01f64.ln()..5.0f64.ln())).exp();
        let g = g_moment(x, n, v, k, t, &cfg).map_err(|e| e.to_string())?;
        let q = g_quadrature(x, n, v, k, t, &cfg);
        let rel = if q == 0.0 {
            if g == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            nonzero += 1;
            (g - q).abs() / q.abs()
        };
        worst = worst.max(rel);
    }
    Ok((worst < 1e-6, format!("max relative error {worst:.2e} over 500 tuples, {nonzero} with nonzero support (tol 1e-6)")))
}

fn approx_errors(dir: &Path) -> Result<Vec<(String, usize, f64, f64)>, String> {
    read_csv(&dir.join("approx_errors.csv"))?
        .iter()
        .map(|r| Ok((r["method"].clone(), field(r, "N")? as usize, field(r, "t")?, field(r, "error")?)))
        .collect()
}

fn criterion_3(runs: &mut Runs) -> Outcome {
    let rows = approx_errors(&runs.get("approx_rate")?)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for t in [0.25, 1.0, 3.0] {
        let mut by_n: Vec<(usize, f64)> = rows.iter().filter(|r| r.0 == "standard" && r.2 == t).map(|r| (r.1, r.3)).collect();
        by_n.sort_by_key(|r| r.0);
        let ns: Vec<usize> = by_n.iter().map(|r| r.0).collect();
        if ns != [4, 8, 16, 32] {
            return Err(format!("unexpected N list {ns:?} at t = {t}"));
        }
        let errs: Vec<f64> = by_n.iter().map(|r| r.1).collect();
        let ok = strictly_decreasing(&errs) && errs[3] <= errs[0] / 3.0;
        pass &= ok;
        parts.push(format!("t={t}: {:.2e}->{:.2e}", errs[0], errs[3]));
    }
    Ok((pass, format!("{} (strict decrease and N=32 <= N=4/3)", parts.join(", "))))
}

fn criterion_4(runs: &mut Runs) -> Outcome {
    let rows = approx_errors(&runs.get("approx_fast")?)?;
    let pick = |m: &str| rows.iter().find(|r| r.0 == m && r.1 == 16 && r.2 == 1.0).map(|r| r.3).ok_or(format!("no {m} row at N = 16, t = 1"));
    let (std, fast) = (pick("standard")?, pick("fast")?);
    let ratio = fast / std;
    Ok((ratio <= 0.7, format!("fast {fast:.3e} / standard {std:.3e} = {ratio:.3} (tol 0.7)")))
}

fn sanity_net(mask_rate: f64, seed: u64) -> Result<(ConditionalDensitySpec, DiffusionSchedule, ScoreNet), String> {
    let spec = ConditionalDensitySpec::location_family(1.0).map_err(|e| e.to_string())?;
    let schedule = DiffusionSchedule::new(0.05, 3.0).map_err(|e| e.to_string())?;
    let data = sample_dataset(&spec, 10_000, &GuidanceLaw::Uniform, &mut seeded(seed)).map_err(|e| e.to_string())?;
    let mut net_cfg = ScoreNetConfig::new(1, 1);
    net_cfg.width = 32;
    let tc = TrainConfig {
        batch: 256,
        steps: 3000,
        lr: 1e-3,
        t_samples_per_datum: 1,
        t0: schedule.t0,
        t_end: schedule.t_end,
        seed: seed + 1,
        mask_rate,
    };
    let net = train(&data, &net_cfg, &tc).map_err(|e| e.to_string())?.net;
    Ok((spec, schedule, net))
}

fn zero_net() -> impl ScoreModel {
    FnScore::new(1, |_: &[f64], _: Option<&[f64]>, _: f64| vec![0.0])
}

fn criterion_5() -> Outcome {
    let (spec, schedule, net) = sanity_net(0.5, 505)?;
    let law = GuidanceLaw::Uniform;
    let risk = score_risk(&net, &spec, &schedule, &law, Branch::Conditional, 20_000, 506).map_err(|e| e.to_string())?;
    let base = score_risk(&zero_net(), &spec, &schedule, &law, Branch::Conditional, 20_000, 506).map_err(|e| e.to_string())?;
    let mut tvs = Vec::new();
    for k in 1..=9 {
        let y = [k as f64 / 10.0];
        let cfg = BackwardConfig { t_end: schedule.t_end, t0: schedule.t0, steps: 500, grid: TimeGrid::Geometric, seed: 507 + k as u64 };
        let xs = batch_sample(&net, Some(&y), &cfg, 10_000).map_err(|e| e.to_string())?;
        tvs.push(tv_histogram_reference(&xs, |x| spec.density(x, &y).unwrap_or(0.0), &[(-4.0, 5.0)], 64).map_err(|e| e.to_string())?);
    }
    let m = tvs.iter().sum::<f64>() / tvs.len() as f64;
    let sd = (tvs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (tvs.len() - 1) as f64).sqrt();
    let bound = m + 2.0 * sd / (tvs.len() as f64).sqrt();
    let ratio = risk.value / base.value;
    Ok((
        ratio <= 0.1 && bound <= 0.1,
        format!("risk {:.3e} / zero-net {:.3e} = {ratio:.3e} (tol 0.1); mean TV {m:.4} + 2SE = {bound:.4} (tol 0.1)", risk.value, base.value),
    ))
}

fn criterion_6(runs: &mut Runs) -> Outcome {
    let rows = read_csv(&runs.get("inverse")?.join("inverse.csv"))?;
    let mut pass = rows.len() == 2;
    let mut parts = Vec::new();
    for r in &rows {
        let (e, tv) = (field(r, "abs_error")?, field(r, "marginal_tv")?);
        pass &= e <= 0.05 && tv <= 0.08;
        parts.push(format!("x{}: |mean err| {e:.4}, TV {tv:.4}", r["coord"]));
    }
    Ok((pass, format!("{} (tol 0.05, 0.08)", parts.join("; "))))
}

fn criterion_7(runs: &mut Runs) -> Outcome {
    let rows = read_csv(&runs.get("reward")?.join("reward.csv"))?;
    let pick = |m: &str| rows.iter().find(|r| r["method"] == m).ok_or(format!("no {m} row")).and_then(|r| field(r, "subopt"));
    let (exact, trained) = (pick("exact")?, pick("trained")?);
    Ok((exact.abs() < 0.03 && trained.abs() < 0.1, format!("exact {exact:.4} (tol 0.03), trained {trained:.4} (tol 0.1)")))
}

fn criterion_8(runs: &mut Runs) -> Outcome {
    let risk = read_csv(&runs.get("train_risk")?.join("risk_summary.csv"))?;
    let tv = read_csv(&runs.get("tv_sweep")?.join("tv_summary.csv"))?;
    let means = |rows: &[Row], col: &str| -> Result<Vec<f64>, String> { rows.iter().filter(|r| r["row"] == "n").map(|r| field(r, col)).collect() };
    let (rm, tm) = (means(&risk, "mean_risk")?, means(&tv, "mean_tv")?);
    let slope_row = risk.iter().find(|r| r["row"] == "slope").ok_or("no risk slope row")?;
    let (slope, r2) = (field(slope_row, "slope")?, field(slope_row, "r2")?);
    let pass = rm.len() == 3 && tm.len() == 3 && strictly_decreasing(&rm) && strictly_decreasing(&tm) && slope < 0.0 && r2 >= 0.7;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" > ");
    Ok((pass, format!("risk {}; TV {}; risk slope {slope:.3}, r2 {r2:.3} (tol r2 >= 0.7)", fmt(&rm), fmt(&tm))))
}

const MANIFESTS: [&str; 7] = ["approx_rate", "approx_fast", "train_risk", "tv_sweep", "inverse", "reward", "validate"];

fn criterion_9(runs: &mut Runs) -> Outcome {
    let mut compared = 0;
    for name in MANIFESTS {
        let first = runs.get(name)?;
        let second = runs.root.path().join(format!("{name}-2"));
        run_manifest(name, &second)?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&first).map_err(|e| e.to_string())?.map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|x| x == "csv")).collect();
        files.sort();
        if files.is_empty() {
            return Ok((false, format!("{name} wrote no CSV")));
        }
        for f in files {
            let a = std::fs::read(&f).map_err(|e| e.to_string())?;
            let b = std::fs::read(second.join(f.file_name().unwrap())).map_err(|e| e.to_string())?;
            if a != b {
                return Ok((false, format!("{name}: {} differs between runs", f.display())));
            }
            compared += 1;
        }
    }
    Ok((true, format!("{compared} CSV files from {} manifests byte-identical", MANIFESTS.len())))
}

fn criterion_10() -> Outcome {
    let (spec, schedule, net) = sanity_net(1.0, 1010)?;
    let law = GuidanceLaw::Uniform;
    let risk = score_risk(&net, &spec, &schedule, &law, Branch::Unconditional, 20_000, 1011).map_err(|e| e.to_string())?;
    let base = score_risk(&zero_net(), &spec, &schedule, &law, Branch::Unconditional, 20_000, 1011).map_err(|e| e.to_string())?;
    let ratio = risk.value / base.value;
    Ok((ratio <= 0.1, format!("null-branch error {:.3e} / zero-net {:.3e} = {ratio:.3e} (tol 0.1)", risk.value, base.value)))
}

fn main() {
    let mut runs = Runs { root: tempfile::tempdir().expect("temp dir"), dirs: HashMap::new() };
    let criteria: Vec<(&str, Criterion)> = vec![
        ("score oracle vs finite differences", Box::new(|_| criterion_1())),
        ("Gaussian moment closed form vs quadrature", Box::new(|_| criterion_2())),
        ("constructive approximation decreases in N", Box::new(criterion_3)),
        ("fast-rate approximator beats standard", Box::new(criterion_4)),
        ("trainer and sampler sanity", Box::new(|_| criterion_5())),
        ("inverse problem posterior", Box::new(criterion_6)),
        ("reward sub-optimality", Box::new(criterion_7)),
        ("monotone estimation over n", Box::new(criterion_8)),
        ("determinism of manifest re-runs", Box::new(criterion_9)),
        ("null-mask branch learns the marginal score", Box::new(|_| criterion_10())),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = f(&mut runs).unwrap_or_else(|e| (false, format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        println!("{} criterion {:>2} {name}: {detail} [{secs:.1}s]", if pass { "PASS" } else { "FAIL" }, i + 1);
        failed += usize::from(!pass);
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
