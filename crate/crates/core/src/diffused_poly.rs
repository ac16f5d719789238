//! Constructive score approximator built from diffused local polynomials.
//!
//! The data density is rescaled to the unit cube, expanded in local Taylor
//! polynomials on an `N`-per-axis grid, and pushed through the forward
//! Gaussian kernel with a truncated exponential series. Every basis function
//! then reduces to a finite sum of monomial integrals over a clipped
//! interval, evaluated in closed form.
//!
//! Two kernels are supported. The standard one approximates `p_t` and
//! `σ_t ∇p_t` directly. The fast one works with `p = f · exp(-c2‖x‖²/2)`
//! and approximates the smooth ratio part `h` of the score decomposition.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::densities::{ConditionalDensitySpec, FastRateDensitySpec};
use crate::error::{Error, Result};
use crate::schedule::{alpha_sigma, alpha_sigma_unchecked};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Piecewise-linear bump: 1 on `|a| < 1`, `2 - |a|` on `[1, 2]`, 0 beyond.
pub fn trapezoid(a: f64) -> f64 {
    let m = a.abs();
    if m < 1.0 {
        1.0
    } else if m <= 2.0 {
        2.0 - m
    } else {
        0.0
    }
}

/// `(α̂_t, σ̂_t) = (α_t / q, σ_t / √q)` with `q = α_t² + c2 σ_t²`.
pub fn hat_schedule(t: f64, c2: f64) -> Result<(f64, f64)> {
    if !(c2 > 0.0 && c2.is_finite()) {
        return Err(Error::InvalidConfig(format!("envelope rate must be positive, got {c2}")));
    }
    let (a, s) = alpha_sigma(t)?;
    let q = a * a + c2 * s * s;
    Ok((a / q, s / q.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyApproxConfig {
    /// Grid cells per axis.
    pub n: usize,
    /// Taylor order.
    pub s: usize,
    /// Number of exponential-series terms.
    pub p: usize,
    /// Width of the spatial truncation box `[-R/2, R/2]^d`.
    pub r: f64,
    pub eps_low: f64,
    /// Evaluation cube half-width is `cx √(ln N)`.
    pub cx: f64,
    /// Score clamp constant.
    pub c5: f64,
    /// Kernel window half-width in standardised units.
    pub window: f64,
    /// Finite-difference step in rescaled coordinates.
    pub h_fd: f64,
}

impl PolyApproxConfig {
    /// Defaults for smoothness `beta`; `eps_low` and `c5` are placeholders
    /// until calibrated.
    pub fn new(n: usize, beta: f64) -> Self {
        let ln_n = (n.max(2) as f64).ln();
        let c = (2.0 * beta * ln_n).sqrt();
        Self {
            n,
            s: beta.floor() as usize,
            p: ((4.0 * beta * ln_n).ceil() as usize).clamp(1, 60),
            r: 2.0 * c,
            eps_low: (n as f64).powf(-beta),
            cx: (2.0 * beta).sqrt(),
            c5: 1.0,
            window: c,
            h_fd: 1e-3,
        }
    }

    /// As [`PolyApproxConfig::new`], with the truncation box widened so the
    /// tilted kernel window stays inside it for every point of the cube.
    pub fn new_fast(n: usize, beta: f64, c2: f64) -> Self {
        let mut cfg = Self::new(n, beta);
        let ln_n = (n.max(2) as f64).ln();
        cfg.r = 2.0 * ((1.0 / c2).max(1.0) * cfg.cx + (1.0 / c2.sqrt()).max(1.0) * (2.0 * beta).sqrt()) * ln_n.sqrt();
        cfg
    }

    pub fn half_width(&self) -> f64 {
        self.cx * (self.n as f64).ln().sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n < 2 {
            return bad(format!("N must be at least 2, got {}", self.n));
        }
        if self.p < 1 {
            return bad("p must be at least 1".into());
        }
        if self.s > 6 {
            return bad(format!("Taylor order {} too large for finite differences", self.s));
        }
        for (name, v) in [("R", self.r), ("cx", self.cx), ("c5", self.c5), ("window", self.window), ("h_fd", self.h_fd)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.eps_low > 0.0 && self.eps_low < 1.0) {
            return bad(format!("eps_low must lie in (0, 1), got {}", self.eps_low));
        }
        Ok(())
    }
}

/// All multi-indices of length `dim` with entries summing to at most `s`,
/// ordered by total degree and then lexicographically.
pub fn multi_indices(dim: usize, s: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in 0..=s {
        let mut cur = vec![0; dim];
        fill(&mut cur, 0, total, &mut out);
    }
    out
}

fn fill(cur: &mut Vec<usize>, pos: usize, left: usize, out: &mut Vec<Vec<usize>>) {
    if pos + 1 >= cur.len() {
        if let Some(last) = cur.last_mut() {
            *last = left;
            out.push(cur.clone());
        } else if left == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for k in (0..=left).rev() {
        cur[pos] = k;
        fill(cur, pos + 1, left - k, out);
    }
    cur[pos] = 0;
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

/// Mixed partials `∂^m f(center) / m!` for every multi-index `|m| ≤ s`, by
/// tensor-product central differences with step `h`.
pub fn taylor_coeffs<F: Fn(&[f64]) -> f64>(f: F, center: &[f64], s: usize, h: f64) -> Result<Vec<(Vec<usize>, f64)>> {
    let dim = center.len();
    let mut out = Vec::new();
    let mut point = center.to_vec();
    for m in multi_indices(dim, s) {
        let stencils: Vec<Vec<(f64, f64)>> = m
            .iter()
            .map(|&order| {
                (0..=order)
                    .map(|j| {
                        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                        let offset = (order as f64 / 2.0 - j as f64) * h;
                        (offset, sign * binomial(order, j) / h.powi(order as i32))
                    })
                    .collect()
            })
            .collect();
        let mut acc = 0.0;
        let mut idx = vec![0usize; dim];
        loop {
            let mut weight = 1.0;
            for a in 0..dim {
                let (off, w) = stencils[a][idx[a]];
                point[a] = center[a] + off;
                weight *= w;
            }
            acc += weight * f(&point);
            let mut a = 0;
            while a < dim {
                idx[a] += 1;
                if idx[a] < stencils[a].len() {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
            if a == dim {
                break;
            }
        }
        let denom: f64 = m.iter().map(|&k| factorial(k)).product();
        let c = acc / denom;
        if !c.is_finite() {
            return Err(Error::NonFinite(format!("Taylor coefficient {m:?} at {center:?}")));
        }
        out.push((m, c));
    }
    Ok(out)
}

/// `∫_lo^hi w^m dw` for `m = 0..=max_m`.
fn power_integrals(lo: f64, hi: f64, max_m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_m + 1);
    if lo >= 0.0 || hi <= 0.0 {
        // (hi^{m+1} - lo^{m+1}) = (hi - lo) Σ hi^i lo^{m-i}, all terms of one sign
        let width = hi - lo;
        let mut s = 1.0;
        let mut hp = 1.0;
        out.push(width);
        for m in 1..=max_m {
            hp *= hi;
            s = hp + lo * s;
            out.push(width * s / (m + 1) as f64);
        }
    } else {
        let (mut hp, mut lp) = (hi, lo);
        for m in 0..=max_m {
            out.push((hp - lp) / (m + 1) as f64);
            hp *= hi;
            lp *= lo;
        }
    }
    out
}

/// Kernel geometry along one axis: `z(w) = shift + slope · w` with measure
/// `jac · φ(w) dw`, and the sign carried by the gradient moment.
#[derive(Debug, Clone, Copy)]
struct AxisMap {
    shift: f64,
    slope: f64,
    jac: f64,
    grad_sign: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kernel {
    Standard,
    Fast { c2: f64, lower: f64 },
}

fn axis_map(kernel: Kernel, x: f64, t: f64) -> AxisMap {
    let (a, s) = alpha_sigma_unchecked(t);
    match kernel {
        Kernel::Standard => AxisMap {
            shift: x / a,
            slope: -s / a,
            jac: 1.0 / a,
            grad_sign: -1.0,
        },
        Kernel::Fast { c2, .. } => {
            let q = a * a + c2 * s * s;
            AxisMap {
                shift: a / q * x,
                slope: s / q.sqrt(),
                jac: 1.0,
                grad_sign: 1.0,
            }
        }
    }
}

/// Clipped standardised interval of cell `v` (0-based), or `None` if empty.
fn cell_interval(map: &AxisMap, v: usize, cfg: &PolyApproxConfig) -> Option<(f64, f64, f64, f64)> {
    let nf = cfg.n as f64;
    let zl = cfg.r * (v as f64 / nf - 0.5);
    let zh = cfg.r * ((v + 1) as f64 / nf - 0.5);
    let (w1, w2) = ((zl - map.shift) / map.slope, (zh - map.shift) / map.slope);
    let lo = w1.min(w2).max(-cfg.window);
    let hi = w1.max(w2).min(cfg.window);
    if !(hi > lo) {
        return None;
    }
    // base variable z/R + 1/2 - (v+1)/N = a + b w
    let a = map.shift / cfg.r + 0.5 - (v + 1) as f64 / nf;
    let b = map.slope / cfg.r;
    Some((lo, hi, a, b))
}

/// Single clipped Gaussian moment for one axis and one exponential order.
fn moment_term(map: &AxisMap, v: usize, n: usize, k: usize, extra: usize, cfg: &PolyApproxConfig) -> f64 {
    let Some((lo, hi, a, b)) = cell_interval(map, v, cfg) else {
        return 0.0;
    };
    let m = power_integrals(lo, hi, n + 2 * k + extra);
    let mut acc = 0.0;
    for j in 0..=n {
        acc += binomial(n, j) * a.powi((n - j) as i32) * b.powi(j as i32) * m[j + 2 * k + extra];
    }
    let ck = (-0.5f64).powi(k as i32) / factorial(k);
    map.jac * INV_SQRT_2PI * ck * acc
}

/// `g(x, n, v, k)`: the diffused local monomial of order `n` on cell `v`
/// (1-based, as `v ∈ [N]`) with the `k`-th exponential-series term, in
/// closed form. Cells outside `1..=N` or disjoint from the kernel window
/// give 0.
pub fn g_moment(x: f64, n: usize, v: usize, k: usize, t: f64, cfg: &PolyApproxConfig) -> Result<f64> {
    let (_, s) = alpha_sigma(t)?;
    if s == 0.0 {
        return Err(Error::InvalidTime(t));
    }
    if v == 0 || v > cfg.n {
        return Ok(0.0);
    }
    Ok(moment_term(&axis_map(Kernel::Standard, x, t), v - 1, n, k, 0, cfg))
}

/// Per-axis sums `Σ_{k<p} g` for every active cell, without and with the
/// gradient factor.
struct AxisTable {
    cells: Vec<usize>,
    /// `plain[c][n]`, `grad[c][n]`.
    plain: Vec<Vec<f64>>,
    grad: Vec<Vec<f64>>,
}

fn axis_table(map: &AxisMap, cfg: &PolyApproxConfig) -> AxisTable {
    let (s, p) = (cfg.s, cfg.p);
    let ck: Vec<f64> = {
        let mut v = Vec::with_capacity(p);
        let mut c = 1.0;
        for k in 0..p {
            v.push(c);
            c *= -0.5 / (k + 1) as f64;
        }
        v
    };
    let mut table = AxisTable {
        cells: Vec::new(),
        plain: Vec::new(),
        grad: Vec::new(),
    };
    for v in 0..cfg.n {
        let Some((lo, hi, a, b)) = cell_interval(map, v, cfg) else {
            continue;
        };
        let m = power_integrals(lo, hi, s + 2 * (p - 1) + 1);
        // T[e][j] = Σ_k c_k M_{j+2k+e}
        let mut t = [vec![0.0; s + 1], vec![0.0; s + 1]];
        for (e, te) in t.iter_mut().enumerate() {
            for (j, tj) in te.iter_mut().enumerate() {
                *tj = ck.iter().enumerate().map(|(k, c)| c * m[j + 2 * k + e]).sum();
            }
        }
        let pref = map.jac * INV_SQRT_2PI;
        let expand = |te: &[f64]| -> Vec<f64> {
            (0..=s)
                .map(|n| pref * (0..=n).map(|j| binomial(n, j) * a.powi((n - j) as i32) * b.powi(j as i32) * te[j]).sum::<f64>())
                .collect()
        };
        table.cells.push(v);
        table.plain.push(expand(&t[0]));
        table.grad.push(expand(&t[1]).into_iter().map(|g| map.grad_sign * g).collect());
    }
    table
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Source {
    Density(ConditionalDensitySpec),
    Fast(FastRateDensitySpec),
}

/// Coefficient table of a diffused local polynomial plus its source law.
#[derive(Debug, Clone)]
pub struct DiffusedPolynomial {
    cfg: PolyApproxConfig,
    source: Source,
    kernel: Kernel,
    d: usize,
    d_y: usize,
    indices: Vec<Vec<usize>>,
    /// `[(v_flat · W + w_flat) · M + m]`.
    coeffs: Vec<f64>,
}

fn guidance_cells(d_y: usize, n: usize) -> usize {
    (n + 1).pow(d_y as u32)
}

impl DiffusedPolynomial {
    /// Standard kernel: approximates `p_t(x|y)` and `σ_t ∇p_t(x|y)`.
    pub fn build(spec: &ConditionalDensitySpec, cfg: PolyApproxConfig) -> Result<Self> {
        let spec = spec.clone();
        let r = cfg.r;
        Self::assemble(cfg, spec.d(), spec.d_y(), Kernel::Standard, Source::Density(spec.clone()), move |z, y| {
            let x: Vec<f64> = z.iter().map(|&u| r * (u - 0.5)).collect();
            spec.log_and_score_raw(&x, y, 0.0).0.exp()
        })
    }

    /// Fast kernel: approximates `h` and `(σ̂_t/α̂_t) ∇h` from the Taylor
    /// expansion of `f = p · exp(c2‖x‖²/2)`.
    pub fn build_fast(spec: &FastRateDensitySpec, cfg: PolyApproxConfig) -> Result<Self> {
        let fs = spec.clone();
        let r = cfg.r;
        let kernel = Kernel::Fast {
            c2: spec.c2,
            lower: spec.lower,
        };
        Self::assemble(cfg, spec.base.d(), spec.base.d_y(), kernel, Source::Fast(spec.clone()), move |z, y| {
            let x: Vec<f64> = z.iter().map(|&u| r * (u - 0.5)).collect();
            fs.f(&x, y)
        })
    }

    fn assemble<F: Fn(&[f64], &[f64]) -> f64>(cfg: PolyApproxConfig, d: usize, d_y: usize, kernel: Kernel, source: Source, f: F) -> Result<Self> {
        cfg.validate()?;
        if d > 2 || d_y > 1 {
            return Err(Error::InvalidConfig(format!(
                "diffused polynomials support d <= 2 and d_y <= 1, got d = {d}, d_y = {d_y}"
            )));
        }
        let dim = d + d_y;
        let indices = multi_indices(dim, cfg.s);
        let n = cfg.n;
        let n_w = guidance_cells(d_y, n);
        let n_v = n.pow(d as u32);
        let mut coeffs = Vec::with_capacity(n_v * n_w * indices.len());
        let mut center = vec![0.0; dim];
        for vf in 0..n_v {
            for wf in 0..n_w {
                let mut rem = vf;
                for c in center.iter_mut().take(d) {
                    *c = (rem % n + 1) as f64 / n as f64;
                    rem /= n;
                }
                let mut rem = wf;
                for c in center.iter_mut().skip(d) {
                    *c = (rem % (n + 1)) as f64 / n as f64;
                    rem /= n + 1;
                }
                let local = taylor_coeffs(|p: &[f64]| f(&p[..d], &p[d..]), &center, cfg.s, cfg.h_fd)?;
                coeffs.extend(local.into_iter().map(|(_, c)| c));
            }
        }
        Ok(Self {
            cfg,
            source,
            kernel,
            d,
            d_y,
            indices,
            coeffs,
        })
    }

    pub fn config(&self) -> &PolyApproxConfig {
        &self.cfg
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d_y(&self) -> usize {
        self.d_y
    }

    pub fn is_fast(&self) -> bool {
        matches!(self.kernel, Kernel::Fast { .. })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn multi_indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn nonzero_entries(&self) -> usize {
        self.coeffs.iter().filter(|c| **c != 0.0).count()
    }

    /// Replaces every Taylor coefficient with zero.
    pub fn zeroed(mut self) -> Self {
        self.coeffs.iter_mut().for_each(|c| *c = 0.0);
        self
    }

    pub fn with_config(mut self, eps_low: f64, c5: f64) -> Result<Self> {
        self.cfg.eps_low = eps_low;
        self.cfg.c5 = c5;
        self.cfg.validate()?;
        Ok(self)
    }

    fn check(&self, x: &[f64], y: &[f64], t: f64) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: x.len() });
        }
        if y.len() != self.d_y {
            return Err(Error::DimensionMismatch { expected: self.d_y, got: y.len() });
        }
        if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::GuidanceOutOfRange(y.to_vec()));
        }
        let half = self.cfg.half_width();
        if x.iter().any(|v| !(v.abs() <= half * (1.0 + 1e-12))) {
            return Err(Error::OutsideDomain { x: x.to_vec(), half_width: half });
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidTime(t));
        }
        Ok(())
    }

    /// `(f1, f2)` in one sweep over the active cells.
    fn evaluate(&self, x: &[f64], y: &[f64], t: f64) -> (f64, Vec<f64>) {
        let (d, n) = (self.d, self.cfg.n);
        let tables: Vec<AxisTable> = x.iter().map(|&xi| axis_table(&axis_map(self.kernel, xi, t), &self.cfg)).collect();
        let nf = n as f64;
        // guidance cells with a nonzero partition weight
        let mut w_terms: Vec<(usize, f64, Vec<f64>)> = vec![(0, 1.0, Vec::new())];
        for (j, &yj) in y.iter().enumerate() {
            let stride = (n + 1).pow(j as u32);
            let mut next = Vec::new();
            for (wf, psi, offs) in &w_terms {
                for w in 0..=n {
                    let ph = trapezoid(3.0 * nf * (yj - w as f64 / nf));
                    if ph > 0.0 {
                        let mut o = offs.clone();
                        o.push(yj - w as f64 / nf);
                        next.push((wf + w * stride, psi * ph, o));
                    }
                }
            }
            w_terms = next;
        }
        let n_w = guidance_cells(self.d_y, n);
        let m_count = self.indices.len();
        let mut f1 = 0.0;
        let mut f2 = vec![0.0; d];
        if tables.iter().any(|tb| tb.cells.is_empty()) {
            return (f1, f2);
        }
        let mut pick = vec![0usize; d];
        loop {
            let vf: usize = (0..d).map(|i| tables[i].cells[pick[i]] * n.pow(i as u32)).sum();
            for (wf, psi, offs) in &w_terms {
                let base = (vf * n_w + wf) * m_count;
                for (mi, idx) in self.indices.iter().enumerate() {
                    let c = self.coeffs[base + mi];
                    if c == 0.0 {
                        continue;
                    }
                    let mut ypart = psi * c;
                    for (j, off) in offs.iter().enumerate() {
                        ypart *= off.powi(idx[d + j] as i32);
                    }
                    let plain: Vec<f64> = (0..d).map(|i| tables[i].plain[pick[i]][idx[i]]).collect();
                    let prod: f64 = plain.iter().product();
                    f1 += ypart * prod;
                    for (i, out) in f2.iter_mut().enumerate() {
                        let mut g = ypart * tables[i].grad[pick[i]][idx[i]];
                        for (k, pk) in plain.iter().enumerate() {
                            if k != i {
                                g *= pk;
                            }
                        }
                        *out += g;
                    }
                }
            }
            let mut i = 0;
            while i < d {
                pick[i] += 1;
                if pick[i] < tables[i].cells.len() {
                    break;
                }
                pick[i] = 0;
                i += 1;
            }
            if i == d {
                break;
            }
        }
        (f1, f2)
    }

    /// Density approximation `f1`.
    pub fn f1(&self, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
        self.check(x, y, t)?;
        Ok(self.evaluate(x, y, t).0)
    }

    /// Gradient approximation `f2`.
    pub fn f2(&self, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check(x, y, t)?;
        Ok(self.evaluate(x, y, t).1)
    }

    /// Clamp bound `(c5/σ_t²)(cx √(d ln N) + 1)` of the standard score.
    pub fn clamp_bound(&self, t: f64) -> f64 {
        let (_, s) = alpha_sigma_unchecked(t);
        let ln_n = (self.cfg.n as f64).ln();
        self.cfg.c5 / (s * s) * (self.cfg.cx * (self.d as f64 * ln_n).sqrt() + 1.0)
    }

    /// Score approximation: `f2 / (σ_t max(f1, eps_low))` clamped entrywise
    /// for the standard kernel, the linear term plus `(α̂/σ̂) f2 / f1` for
    /// the fast one.
    pub fn score(&self, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check(x, y, t)?;
        let (f1, f2) = self.evaluate(x, y, t);
        let (a, s) = alpha_sigma_unchecked(t);
        Ok(match self.kernel {
            Kernel::Standard => {
                let clip = f1.max(self.cfg.eps_low);
                let m = self.clamp_bound(t);
                f2.iter().map(|g| (g / (s * clip)).clamp(-m, m)).collect()
            }
            Kernel::Fast { c2, lower } => {
                let q = a * a + c2 * s * s;
                let ratio = (a / q) / (s / q.sqrt());
                let clip = f1.max(0.5 * lower);
                x.iter().zip(&f2).map(|(xi, g)| -c2 * xi / q + ratio * g / clip).collect()
            }
        })
    }

    /// Sets `eps_low` to twice the largest `|f1 - p_t|` (or `|f1 - h|`) and
    /// `c5` to 1.5 times the largest `σ_t² ‖∇log p_t‖∞ / (‖x‖ + 1)`, both
    /// over a grid of the evaluation cube at the given times.
    pub fn calibrate(mut self, times: &[f64], resolution: usize) -> Result<Self> {
        let half = self.cfg.half_width();
        let axis: Vec<f64> = (0..resolution).map(|i| -half + 2.0 * half * i as f64 / (resolution - 1).max(1) as f64).collect();
        let ys: Vec<Vec<f64>> = match self.d_y {
            0 => vec![vec![]],
            _ => [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&v| vec![v]).collect(),
        };
        let xs: Vec<Vec<f64>> = match self.d {
            1 => axis.iter().map(|&a| vec![a]).collect(),
            _ => axis.iter().flat_map(|&a| axis.iter().map(move |&b| vec![a, b])).collect(),
        };
        let mut err: f64 = 0.0;
        let mut c5: f64 = 0.0;
        for &t in times {
            let (a, s) = alpha_sigma(t)?;
            for y in &ys {
                for x in &xs {
                    let (f1, _) = self.evaluate(x, y, t);
                    let (truth, score) = match &self.source {
                        Source::Density(spec) => {
                            let (l, g) = spec.log_and_score_raw(x, y, t);
                            (l.exp(), g)
                        }
                        Source::Fast(spec) => {
                            let (l, g) = spec.base.log_and_score_raw(x, y, t);
                            let q = a * a + spec.c2 * s * s;
                            let r2: f64 = x.iter().map(|v| v * v).sum();
                            // p_t = (σ̂/σ)^d exp(-c2‖x‖²/(2q)) h
                            let lh = l + 0.5 * spec.c2 * r2 / q - self.d as f64 * (1.0 / q.sqrt()).ln();
                            (lh.exp(), g)
                        }
                    };
                    err = err.max((f1 - truth).abs());
                    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let inf = score.iter().fold(0.0f64, |m, g| m.max(g.abs()));
                    c5 = c5.max(s * s * inf / (norm + 1.0));
                }
            }
        }
        if !err.is_finite() || !c5.is_finite() {
            return Err(Error::NonFinite("calibration produced a non-finite constant".into()));
        }
        self.cfg.eps_low = (2.0 * err).max(f64::MIN_POSITIVE);
        self.cfg.c5 = (1.5 * c5).max(f64::MIN_POSITIVE);
        self.cfg.validate()?;
        Ok(self)
    }

    /// Writes `v_i…, w_j…, n_i…, n'_j…, coefficient` rows (1-based `v`).
    pub fn write_coefficients_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.d).map(|i| format!("v{i}")).collect();
        header.extend((0..self.d_y).map(|j| format!("w{j}")));
        header.extend((0..self.d).map(|i| format!("n{i}")));
        header.extend((0..self.d_y).map(|j| format!("nprime{j}")));
        header.push("coefficient".into());
        wr.write_record(&header)?;
        let n = self.cfg.n;
        let n_w = guidance_cells(self.d_y, n);
        let m = self.indices.len();
        for (pos, c) in self.coeffs.iter().enumerate() {
            let mi = pos % m;
            let wf = (pos / m) % n_w;
            let vf = pos / (m * n_w);
            let mut row = Vec::with_capacity(header.len());
            let mut rem = vf;
            for _ in 0..self.d {
                row.push((rem % n + 1).to_string());
                rem /= n;
            }
            let mut rem = wf;
            for _ in 0..self.d_y {
                row.push((rem % (n + 1)).to_string());
                rem /= n + 1;
            }
            row.extend(self.indices[mi].iter().map(|k| k.to_string()));
            row.push(format!("{c:.16e}"));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn density_approx_f1(poly: &DiffusedPolynomial, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
    poly.f1(x, y, t)
}

pub fn grad_approx_f2(poly: &DiffusedPolynomial, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
    poly.f2(x, y, t)
}

/// Clipped-ratio score of a standard-kernel polynomial.
pub fn score_approx_f3(poly: &DiffusedPolynomial, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
    if poly.is_fast() {
        return Err(Error::InvalidConfig("score_approx_f3 needs a standard-kernel polynomial".into()));
    }
    poly.score(x, y, t)
}

/// Decomposed score of a fast-kernel polynomial.
pub fn fast_score_approx(poly: &DiffusedPolynomial, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
    if !poly.is_fast() {
        return Err(Error::InvalidConfig("fast_score_approx needs a fast-kernel polynomial".into()));
    }
    poly.score(x, y, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::ComponentParams;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Adaptive Simpson quadrature, the independent oracle for the moments.
    fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                left + right + delta / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
            }
        }
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 48)
    }

    /// Direct quadrature of the defining integral over `z`.
    fn g_oracle(x: f64, n: usize, v: usize, k: usize, t: f64, cfg: &PolyApproxConfig) -> f64 {
        let (a, s) = alpha_sigma(t).unwrap();
        let nf = cfg.n as f64;
        let cell_lo = cfg.r * ((v - 1) as f64 / nf - 0.5);
        let cell_hi = cfg.r * (v as f64 / nf - 0.5);
        let lo = cell_lo.max((x - s * cfg.window) / a);
        let hi = cell_hi.min((x + s * cfg.window) / a);
        if hi <= lo {
            return 0.0;
        }
        let kf: f64 = (1..=k).map(|i| i as f64).product();
        let integrand = |z: f64| {
            let base = z / cfg.r + 0.5 - v as f64 / nf;
            let e = -(x - a * z).powi(2) / (2.0 * s * s);
            base.powi(n as i32) * e.powi(k as i32) / kf
        };
        let scale = adaptive_simpson(&integrand, lo, hi, 1e-3).abs().max(1e-300);
        adaptive_simpson(&integrand, lo, hi, 1e-14 * scale) / (s * (2.0 * PI).sqrt())
    }

    fn normal_pdf(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
    }

    #[test]
    fn trapezoid_examples() {
        assert_eq!(trapezoid(0.0), 1.0);
        assert_eq!(trapezoid(1.5), 0.5);
        assert_eq!(trapezoid(-3.0), 0.0);
        assert_eq!(trapezoid(-1.5), 0.5);
    }

    proptest! {
        #[test]
        fn trapezoid_in_unit_interval(a in -10.0f64..10.0) {
            let v = trapezoid(a);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn guidance_partition_of_unity(y in 0.0f64..=1.0, n in 2usize..40) {
            let nf = n as f64;
            let sum: f64 = (0..=n).map(|w| trapezoid(3.0 * nf * (y - w as f64 / nf))).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn order_zero_coefficient_is_value(c in -2.0f64..2.0, s in 0usize..4) {
            let f = |p: &[f64]| (p[0] * 1.3).sin() + p[0] * p[0];
            let coeffs = taylor_coeffs(f, &[c], s, 1e-3).unwrap();
            prop_assert_eq!(coeffs[0].1, f(&[c]));
        }
    }

    #[test]
    fn hat_schedule_examples() {
        for &t in &[0.0, 0.3, 2.0, 9.0] {
            let (a, s) = alpha_sigma(t).unwrap();
            let (ah, sh) = hat_schedule(t, 1.0).unwrap();
            assert!((ah - a).abs() < 1e-15 && (sh - s).abs() < 1e-15);
        }
        assert_eq!(hat_schedule(0.0, 3.7).unwrap(), (1.0, 0.0));
        let (ah, sh) = hat_schedule(4f64.ln(), 2.0).unwrap();
        assert!((ah - 0.5 / 1.75).abs() < 1e-15);
        assert!((sh - (0.75f64 / 1.75).sqrt()).abs() < 1e-15);
        assert!(hat_schedule(1.0, 0.0).is_err());
    }

    #[test]
    fn taylor_of_square() {
        let c = taylor_coeffs(|p| p[0] * p[0], &[0.0], 2, 1e-3).unwrap();
        let vals: Vec<f64> = c.iter().map(|(_, v)| *v).collect();
        assert_eq!(c.iter().map(|(m, _)| m[0]).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(vals[0].abs() < 1e-15 && vals[1].abs() < 1e-12 && (vals[2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn taylor_of_gaussian() {
        let c = taylor_coeffs(|p| normal_pdf(p[0]), &[0.0], 2, 1e-3).unwrap();
        let phi0 = 1.0 / (2.0 * PI).sqrt();
        assert!((c[0].1 - phi0).abs() < 1e-15);
        assert!(c[1].1.abs() < 1e-12);
        assert!((c[2].1 + 0.5 * phi0).abs() < 1e-6);
    }

    #[test]
    fn mixed_partials_of_product() {
        // f = e^{x} sin(y): ∂x∂y f / 1!1! = e^{x} cos(y)
        let (x0, y0) = (0.3, 0.7);
        let c = taylor_coeffs(|p| p[0].exp() * p[1].sin(), &[x0, y0], 2, 1e-3).unwrap();
        let mixed = c.iter().find(|(m, _)| m == &vec![1, 1]).unwrap().1;
        assert!((mixed - x0.exp() * y0.cos()).abs() < 1e-6);
        let yy = c.iter().find(|(m, _)| m == &vec![0, 2]).unwrap().1;
        assert!((yy + 0.5 * x0.exp() * y0.sin()).abs() < 1e-6);
        assert_eq!(c.len(), 6);
    }

    #[test]
    fn non_finite_taylor_is_reported() {
        assert!(matches!(taylor_coeffs(|p| 1.0 / p[0], &[0.0], 0, 1e-3), Err(Error::NonFinite(_))));
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(1, 2).len(), 3);
        assert_eq!(multi_indices(3, 2).len(), 10);
        assert_eq!(multi_indices(0, 2), vec![Vec::<usize>::new()]);
        assert!(multi_indices(2, 3).iter().all(|m| m.iter().sum::<usize>() <= 3));
    }

    #[test]
    fn power_integrals_match_antiderivatives() {
        for &(lo, hi) in &[(0.5, 2.0), (-3.0, -0.2), (-1.5, 2.5), (-1.0, 1.0)] {
            let m = power_integrals(lo, hi, 25);
            for (k, v) in m.iter().enumerate() {
                let exact = (hi.powi(k as i32 + 1) - lo.powi(k as i32 + 1)) / (k + 1) as f64;
                assert!((v - exact).abs() <= 1e-13 * exact.abs().max(1.0));
            }
        }
    }

    #[test]
    fn g_constant_term_is_interval_length() {
        let cfg = PolyApproxConfig::new(4, 2.0);
        let t = 1.0;
        let (_, s) = alpha_sigma(t).unwrap();
        let width = cfg.r / 4.0;
        for v in 1..=4 {
            let g = g_moment(0.0, 0, v, 0, t, &cfg).unwrap();
            let expected = width / (s * (2.0 * PI).sqrt());
            assert!((g - expected).abs() / expected < 1e-12);
            assert!((g_oracle(0.0, 0, v, 0, t, &cfg) - expected).abs() / expected < 1e-8);
        }
    }

    #[test]
    fn g_generic_matches_quadrature() {
        let cfg = PolyApproxConfig::new(8, 2.0);
        let half = cfg.half_width();
        for (i, &t) in [0.05, 0.4, 1.0, 2.5].iter().enumerate() {
            for v in 1..=8 {
                let x = -half + 2.0 * half * ((i * 8 + v) as f64 * 0.618).fract();
                let g = g_moment(x, 2, v, 3, t, &cfg).unwrap();
                let q = g_oracle(x, 2, v, 3, t, &cfg);
                if q == 0.0 {
                    assert_eq!(g, 0.0);
                } else {
                    assert!((g - q).abs() / q.abs() < 1e-6, "x={x} v={v} t={t}: {g} vs {q}");
                }
            }
        }
    }

    #[test]
    fn g_vanishes_off_window() {
        let cfg = PolyApproxConfig::new(8, 2.0);
        assert_eq!(g_moment(100.0, 1, 3, 2, 0.1, &cfg).unwrap(), 0.0);
        assert_eq!(g_moment(0.0, 1, 0, 2, 0.1, &cfg).unwrap(), 0.0);
        assert!(g_moment(0.0, 1, 1, 2, 0.0, &cfg).is_err());
    }

    fn sup_error<F: Fn(f64) -> f64>(cfg: &PolyApproxConfig, f: F) -> f64 {
        let half = cfg.half_width().min(2.3);
        (0..=60).map(|i| f(-half + 2.0 * half * i as f64 / 60.0)).fold(0.0, f64::max)
    }

    #[test]
    fn f1_improves_with_resolution() {
        let spec = ConditionalDensitySpec::standard_normal(1, 0);
        let t = 0.5;
        let err = |n: usize| {
            let poly = DiffusedPolynomial::build(&spec, PolyApproxConfig::new(n, 2.0)).unwrap();
            sup_error(poly.config(), |x| (poly.f1(&[x], &[], t).unwrap() - spec.diffused_density(&[x], &[], t).unwrap()).abs())
        };
        let (e4, e16) = (err(4), err(16));
        assert!(e16 < e4, "{e16} vs {e4}");
    }

    #[test]
    fn f1_at_large_time_is_standard_normal() {
        let spec = ConditionalDensitySpec::from_components(
            1,
            0,
            vec![ComponentParams::isotropic(vec![-0.8], 0.6, 0), ComponentParams::isotropic(vec![0.7], 0.5, 0)],
        )
        .unwrap();
        let poly = DiffusedPolynomial::build(&spec, PolyApproxConfig::new(16, 2.0)).unwrap();
        let e = sup_error(poly.config(), |x| (poly.f1(&[x], &[], 5.0).unwrap() - normal_pdf(x)).abs());
        // measured ≈ 7e-3; the N^{-β} log N envelope at N = 16 is ≈ 1.1e-2
        assert!(e < 1.5e-2, "{e}");
    }

    #[test]
    fn zero_table_gives_zero() {
        let spec = ConditionalDensitySpec::location_family(1.0).unwrap();
        let poly = DiffusedPolynomial::build(&spec, PolyApproxConfig::new(4, 2.0)).unwrap().zeroed();
        assert_eq!(poly.f1(&[0.3], &[0.5], 1.0).unwrap(), 0.0);
        assert_eq!(poly.f2(&[0.3], &[0.5], 1.0).unwrap(), vec![0.0]);
        assert_eq!(poly.nonzero_entries(), 0);
    }

    #[test]
    fn f1_is_linear_in_the_density() {
        let c1 = ComponentParams::isotropic(vec![-0.5], 0.7, 0);
        let c2 = ComponentParams::isotropic(vec![0.9], 0.4, 0);
        let mut c2w = c2.clone();
        c2w.logit_bias = (0.7f64 / 0.3).ln();
        let mix = ConditionalDensitySpec::from_components(1, 0, vec![c1.clone(), c2w]).unwrap();
        let one = ConditionalDensitySpec::from_components(1, 0, vec![c1]).unwrap();
        let two = ConditionalDensitySpec::from_components(1, 0, vec![c2]).unwrap();
        let cfg = PolyApproxConfig::new(8, 2.0);
        let pm = DiffusedPolynomial::build(&mix, cfg.clone()).unwrap();
        let p1 = DiffusedPolynomial::build(&one, cfg.clone()).unwrap();
        let p2 = DiffusedPolynomial::build(&two, cfg).unwrap();
        for &x in &[-1.2, 0.0, 0.8] {
            let lhs = pm.f1(&[x], &[], 0.7).unwrap();
            let rhs = 0.3 * p1.f1(&[x], &[], 0.7).unwrap() + 0.7 * p2.f1(&[x], &[], 0.7).unwrap();
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn f2_tracks_scaled_gradient() {
        let spec = ConditionalDensitySpec::standard_normal(1, 0);
        let t = 1.0;
        let (_, s) = alpha_sigma(t).unwrap();
        let err = |n: usize| {
            let poly = DiffusedPolynomial::build(&spec, PolyApproxConfig::new(n, 2.0)).unwrap();
            sup_error(poly.config(), |x| (poly.f2(&[x], &[], t).unwrap()[0] + s * x * normal_pdf(x)).abs())
        };
        assert!(err(16) < err(4));
        let poly = DiffusedPolynomial::build(&spec, PolyApproxConfig::new(16, 2.0)).unwrap();
        let env = sup_error(poly.config(), |x| (poly.f2(&[x], &[], t).unwrap()[0] + s * x * normal_pdf(x)).abs());
        assert!(poly.f2(&[0.0], &[], t).unwrap()[0].abs() <= env);
    }

    #[test]
    fn f3_improves_with_resolution() {
        let spec = ConditionalDensitySpec::standard_normal(1, 0);
        let err = |n: usize| {
            let poly = DiffusedPolynomial::build(&spec, PolyApproxConfig::new(n, 2.0)).unwrap().calibrate(&[1.0], 33).unwrap();
            sup_error(poly.config(), |x| (score_approx_f3(&poly, &[x], &[], 1.0).unwrap()[0] + x).abs())
        };
        assert!(err(16) < err(4));
    }

    #[test]
    fn f3_respects_clamp_where_density_is_clipped() {
        let spec = ConditionalDensitySpec::standard_normal(1, 0);
        let poly = DiffusedPolynomial::build(&spec, PolyApproxConfig::new(4, 2.0)).unwrap().calibrate(&[0.25, 1.0], 33).unwrap();
        let half = poly.config().half_width();
        let x = half;
        assert!(poly.f1(&[x], &[], 0.05).unwrap() < poly.config().eps_low);
        let s = poly.score(&[x], &[], 0.05).unwrap()[0];
        assert!(s.abs() <= poly.clamp_bound(0.05));
    }

    #[test]
    fn outside_cube_is_rejected() {
        let spec = ConditionalDensitySpec::standard_normal(1, 0);
        let poly = DiffusedPolynomial::build(&spec, PolyApproxConfig::new(4, 2.0)).unwrap();
        let half = poly.config().half_width();
        assert!(matches!(poly.f1(&[half + 0.1], &[], 1.0), Err(Error::OutsideDomain { .. })));
        assert!(poly.f1(&[half], &[], 1.0).is_ok());
        assert!(poly.f1(&[0.0], &[], 0.0).is_err());
    }

    #[test]
    fn table_size_and_finiteness() {
        let spec = ConditionalDensitySpec::location_family(0.8).unwrap();
        for n in [4usize, 8] {
            let poly = DiffusedPolynomial::build(&spec, PolyApproxConfig::new(n, 2.0)).unwrap();
            let bound = n * (n + 1) * multi_indices(2, 2).len();
            assert_eq!(poly.coefficients().len(), bound);
            assert!(poly.nonzero_entries() <= bound);
            assert!(poly.coefficients().iter().all(|c| c.is_finite()));
        }
    }

    #[test]
    fn two_dimensional_f1_is_close() {
        let spec = ConditionalDensitySpec::from_components(
            2,
            1,
            vec![ComponentParams {
                logit_bias: 0.0,
                logit_slope: vec![0.0],
                mean_offset: vec![0.2, -0.1],
                mean_slope: vec![vec![0.5], vec![0.0]],
                cov: vec![vec![0.8, 0.2], vec![0.2, 0.6]],
            }],
        )
        .unwrap();
        let poly = DiffusedPolynomial::build(&spec, PolyApproxConfig::new(8, 2.0)).unwrap();
        for &(x0, x1, y) in &[(0.0, 0.0, 0.5), (0.7, -0.4, 0.1), (-1.0, 0.5, 0.9)] {
            let a = poly.f1(&[x0, x1], &[y], 0.8).unwrap();
            let b = spec.diffused_density(&[x0, x1], &[y], 0.8).unwrap();
            assert!((a - b).abs() < 5e-3, "{a} vs {b}");
            let g = poly.f2(&[x0, x1], &[y], 0.8).unwrap();
            let (_, s) = alpha_sigma(0.8).unwrap();
            let e = spec.exact_score(&[x0, x1], &[y], 0.8).unwrap();
            for i in 0..2 {
                assert!((g[i] - s * b * e[i]).abs() < 5e-3);
            }
        }
    }

    fn bump_spec() -> FastRateDensitySpec {
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
        )
        .unwrap();
        FastRateDensitySpec::new(base, 1.0, 0.7 / (2.0 * PI).sqrt(), 1.0).unwrap()
    }

    #[test]
    fn fast_constant_f_returns_linear_term() {
        let sn = ConditionalDensitySpec::standard_normal(1, 0);
        let c = 1.0 / (2.0 * PI).sqrt();
        let spec = FastRateDensitySpec::new(sn, 1.0, c, c).unwrap();
        let poly = DiffusedPolynomial::build_fast(&spec, PolyApproxConfig::new_fast(16, 2.0, 1.0)).unwrap();
        let half = poly.config().half_width();
        for i in 0..=20 {
            let x = -half + 2.0 * half * i as f64 / 20.0;
            for &t in &[0.25, 1.0, 3.0] {
                let s = fast_score_approx(&poly, &[x], &[], t).unwrap()[0];
                assert!((s + x).abs() < 1e-3, "x={x} t={t}: {s}");
            }
        }
    }

    #[test]
    fn fast_improves_with_resolution() {
        let spec = bump_spec();
        let y = [0.4];
        let err = |n: usize| {
            let poly = DiffusedPolynomial::build_fast(&spec, PolyApproxConfig::new_fast(n, 2.0, 1.0)).unwrap();
            sup_error(poly.config(), |x| {
                (fast_score_approx(&poly, &[x], &y, 1.0).unwrap()[0] - spec.base.exact_score(&[x], &y, 1.0).unwrap()[0]).abs()
            })
        };
        assert!(err(16) < err(4));
    }

    #[test]
    fn kernels_are_not_interchangeable() {
        let spec = bump_spec();
        let fast = DiffusedPolynomial::build_fast(&spec, PolyApproxConfig::new_fast(4, 2.0, 1.0)).unwrap();
        let std = DiffusedPolynomial::build(&spec.base, PolyApproxConfig::new(4, 2.0)).unwrap();
        assert!(score_approx_f3(&fast, &[0.0], &[0.5], 1.0).is_err());
        assert!(fast_score_approx(&std, &[0.0], &[0.5], 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = PolyApproxConfig::new(4, 2.0);
        assert!(cfg.validate().is_ok());
        assert_eq!((cfg.s, cfg.p), (2, 12));
        cfg.eps_low = 1.5;
        assert!(cfg.validate().is_err());
        assert!(PolyApproxConfig::new(1, 2.0).validate().is_err());
        assert_eq!(PolyApproxConfig::new(1_000_000, 2.0).p, 60);
    }

    #[test]
    fn coefficient_csv_has_one_row_per_entry() {
        let spec = ConditionalDensitySpec::location_family(1.0).unwrap();
        let poly = DiffusedPolynomial::build(&spec, PolyApproxConfig::new(4, 2.0)).unwrap();
        let mut buf = Vec::new();
        poly.write_coefficients_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "v0,w0,n0,nprime0,coefficient");
        assert_eq!(lines.count(), poly.coefficients().len());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn f3_is_bounded_by_clamp(u in 0.0f64..1.0, t in 0.01f64..4.0) {
            let spec = ConditionalDensitySpec::standard_normal(1, 0);
            let poly = DiffusedPolynomial::build(&spec, PolyApproxConfig::new(4, 2.0)).unwrap().with_config(0.01, 1.0).unwrap();
            let half = poly.config().half_width();
            let s = poly.score(&[-half + 2.0 * half * u], &[], t).unwrap()[0];
            prop_assert!(s.abs() <= poly.clamp_bound(t));
        }
    }
}
