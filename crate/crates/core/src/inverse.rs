//! Linear inverse problems `y = Hx + ε`, `ε ~ N(0, σ² I)`: likelihood
//! scores of the noised state, guided scores and the Gaussian posterior
//! oracle.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::schedule::alpha_sigma;

const ORTHO_TOL: f64 = 1e-10;

/// JSON form: `h` as rows, `sigma2` the noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementDoc {
    pub h: Vec<Vec<f64>>,
    pub sigma2: f64,
}

/// `H = Pᵀ [diag(μ), 0] U` with `μ` sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct LinearMeasurement {
    h: DMatrix<f64>,
    sigma2: f64,
    p: DMatrix<f64>,
    mu: Vec<f64>,
    u: DMatrix<f64>,
}

impl LinearMeasurement {
    pub fn new(h: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        let (m, d) = h.shape();
        if m == 0 || d == 0 {
            return Err(Error::InvalidConfig("measurement matrix must be nonempty".into()));
        }
        if m > d {
            return Err(Error::InvalidConfig(format!("overdetermined measurements (m = {m} > d = {d}) are not supported")));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise variance must be positive, got {sigma2}")));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement matrix".into()));
        }
        let svd = h.clone().svd(true, true);
        let (w, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let mu: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let p = DMatrix::from_fn(m, m, |r, c| w[(c, order[r])]);
        let mut u = DMatrix::zeros(d, d);
        for (r, &i) in order.iter().enumerate() {
            u.set_row(r, &vt.row(i));
        }
        if d > m {
            // complete the row space by the unit-eigenvalue eigenvectors of the projector
            let rows = u.rows(0, m).into_owned();
            let proj = DMatrix::identity(d, d) - rows.transpose() * &rows;
            let eig = SymmetricEigen::new(proj);
            let mut r = m;
            for (k, val) in eig.eigenvalues.iter().enumerate() {
                if *val > 0.5 && r < d {
                    u.set_row(r, &eig.eigenvectors.column(k).transpose());
                    r += 1;
                }
            }
            if r != d {
                return Err(Error::Validation("failed to complete the right singular basis".into()));
            }
        }
        let meas = Self { h, sigma2, p, mu, u };
        meas.check_factors()?;
        Ok(meas)
    }

    pub fn from_rows(rows: &[Vec<f64>], sigma2: f64) -> Result<Self> {
        let m = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidConfig("measurement rows have unequal lengths".into()));
        }
        Self::new(DMatrix::from_fn(m, d, |i, j| rows[i][j]), sigma2)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MeasurementDoc = serde_json::from_str(text)?;
        Self::from_rows(&doc.h, doc.sigma2)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = MeasurementDoc {
            h: self.h.row_iter().map(|r| r.iter().copied().collect()).collect(),
            sigma2: self.sigma2,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    fn check_factors(&self) -> Result<()> {
        let (m, d) = self.h.shape();
        let pe = (&self.p * self.p.transpose() - DMatrix::identity(m, m)).abs().max();
        let ue = (&self.u * self.u.transpose() - DMatrix::identity(d, d)).abs().max();
        let re = (self.reconstruct() - &self.h).abs().max();
        let scale = 1.0 + self.h.abs().max();
        if pe > ORTHO_TOL || ue > ORTHO_TOL || re > ORTHO_TOL * scale {
            return Err(Error::Validation(format!(
                "SVD factor check failed: |PPᵀ-I| = {pe:e}, |UUᵀ-I| = {ue:e}, |H - PᵀDU| = {re:e}"
            )));
        }
        Ok(())
    }

    /// `Pᵀ [diag(μ), 0] U`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let (m, d) = self.h.shape();
        let mut dm = DMatrix::zeros(m, d);
        for (i, mu) in self.mu.iter().enumerate() {
            dm[(i, i)] = *mu;
        }
        self.p.transpose() * dm * &self.u
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.mu
    }

    /// `λ_i = μ_i²`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.mu.iter().map(|m| m * m).collect()
    }

    pub fn d(&self) -> usize {
        self.h.ncols()
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    /// Whether each `λ_i` satisfies `σ² ≤ λ_i ≤ σ⁴`; violations are logged,
    /// never rejected.
    pub fn eigen_condition(&self) -> Vec<bool> {
        let s2 = self.sigma2;
        let flags: Vec<bool> = self.eigenvalues().iter().map(|&l| s2 <= l && l <= s2 * s2).collect();
        if flags.iter().any(|f| !f) {
            log::warn!("eigenvalues {:?} outside [σ², σ⁴] = [{s2}, {}]", self.eigenvalues(), s2 * s2);
        }
        flags
    }

    fn check(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != self.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), got: x.len() });
        }
        if y.len() != self.m() {
            return Err(Error::DimensionMismatch { expected: self.m(), got: y.len() });
        }
        Ok(())
    }

    /// `∇_x log N(y; Hx/α_t, σ² I + (e^t - 1) HHᵀ)`, diagonal in the SVD basis.
    pub fn likelihood_score(&self, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check(x, y)?;
        let (a, _) = alpha_sigma(t)?;
        let growth = t.exp_m1();
        let (m, d) = (self.m(), self.d());
        let ux: Vec<f64> = (0..m).map(|i| (0..d).map(|j| self.u[(i, j)] * x[j]).sum()).collect();
        let py: Vec<f64> = (0..m).map(|i| (0..m).map(|j| self.p[(i, j)] * y[j]).sum()).collect();
        let coef: Vec<f64> = (0..m)
            .map(|i| {
                let lam = self.mu[i] * self.mu[i];
                self.mu[i] * (py[i] - self.mu[i] * ux[i] / a) / (a * (self.sigma2 + growth * lam))
            })
            .collect();
        Ok((0..d).map(|j| (0..m).map(|i| self.u[(i, j)] * coef[i]).sum()).collect())
    }

    /// The same gradient by a dense Cholesky solve; cross-check route.
    pub fn likelihood_score_dense(&self, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check(x, y)?;
        let (a, _) = alpha_sigma(t)?;
        let m = self.m();
        let cov = DMatrix::identity(m, m) * self.sigma2 + &self.h * self.h.transpose() * t.exp_m1();
        let chol = Cholesky::new(cov).ok_or_else(|| Error::NotSpd("likelihood covariance".into()))?;
        let resid = DVector::from_column_slice(y) - &self.h * DVector::from_column_slice(x) / a;
        let g = self.h.transpose() * chol.solve(&resid) / a;
        Ok(g.iter().copied().collect())
    }

    /// `log N(y; Hx/α_t, σ² I + (e^t - 1) HHᵀ)`.
    pub fn log_likelihood(&self, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
        self.check(x, y)?;
        let (a, _) = alpha_sigma(t)?;
        let m = self.m();
        let cov = DMatrix::identity(m, m) * self.sigma2 + &self.h * self.h.transpose() * t.exp_m1();
        let chol = Cholesky::new(cov).ok_or_else(|| Error::NotSpd("likelihood covariance".into()))?;
        let resid = DVector::from_column_slice(y) - &self.h * DVector::from_column_slice(x) / a;
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let quad = resid.dot(&chol.solve(&resid));
        Ok(-0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad))
    }
}

/// `likelihood_score + prior_score(x, t)`.
pub fn guided_score<F: Fn(&[f64], f64) -> Vec<f64>>(meas: &LinearMeasurement, prior_score: F, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
    let lik = meas.likelihood_score(x, y, t)?;
    let prior = prior_score(x, t);
    if prior.len() != lik.len() {
        return Err(Error::DimensionMismatch { expected: lik.len(), got: prior.len() });
    }
    Ok(lik.iter().zip(&prior).map(|(a, b)| a + b).collect())
}

fn spd_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if !m.is_square() || (m - m.transpose()).abs().max() > 1e-12 * (1.0 + m.abs().max()) {
        return Err(Error::NotSpd(format!("{what} is not symmetric")));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotSpd(format!("{what} is not positive definite")))
}

/// `Σ_post = (Σ_p⁻¹ + HᵀH/σ²)⁻¹`, `μ_post = Σ_post (Σ_p⁻¹ μ_p + Hᵀy/σ²)`.
pub fn gaussian_posterior_oracle(meas: &LinearMeasurement, prior_mean: &[f64], prior_cov: &DMatrix<f64>, y: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = meas.d();
    if prior_mean.len() != d || prior_cov.shape() != (d, d) {
        return Err(Error::DimensionMismatch { expected: d, got: prior_mean.len() });
    }
    if y.len() != meas.m() {
        return Err(Error::DimensionMismatch { expected: meas.m(), got: y.len() });
    }
    let prior_prec = spd_cholesky(prior_cov, "prior covariance")?.inverse();
    let h = meas.h();
    let post_prec = &prior_prec + h.transpose() * h / meas.sigma2();
    let post_cov = spd_cholesky(&((&post_prec + post_prec.transpose()) * 0.5), "posterior precision")?.inverse();
    let rhs = &prior_prec * DVector::from_column_slice(prior_mean) + h.transpose() * DVector::from_column_slice(y) / meas.sigma2();
    let mean = &post_cov * rhs;
    Ok((mean.iter().copied().collect(), post_cov))
}

/// Likelihood of `y` given the noised state under a Gaussian prior
/// `N(μ_p, Σ_p)`: with `K = (σ_t² Σ_p⁻¹ + α_t² I)⁻¹`, the denoised mean is
/// `m = σ_t² K Σ_p⁻¹ μ_p + α_t K x`, its covariance `σ_t² K`, and
/// `y | x_t ~ N(H m, σ² I + σ_t² H K Hᵀ)`. Reduces to
/// [`LinearMeasurement::likelihood_score`] as `Σ_p → ∞`.
#[derive(Debug, Clone)]
pub struct GaussianPriorLikelihood {
    meas: LinearMeasurement,
    prior_mean: DVector<f64>,
    prior_prec: DMatrix<f64>,
}

impl GaussianPriorLikelihood {
    pub fn new(meas: LinearMeasurement, prior_mean: &[f64], prior_cov: &DMatrix<f64>) -> Result<Self> {
        let d = meas.d();
        if prior_mean.len() != d || prior_cov.shape() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, got: prior_mean.len() });
        }
        let prior_prec = spd_cholesky(prior_cov, "prior covariance")?.inverse();
        Ok(Self {
            meas,
            prior_mean: DVector::from_column_slice(prior_mean),
            prior_prec,
        })
    }

    pub fn measurement(&self) -> &LinearMeasurement {
        &self.meas
    }

    pub fn score(&self, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
        self.meas.check(x, y)?;
        let (a, s) = alpha_sigma(t)?;
        let d = self.meas.d();
        let s2 = s * s;
        let kinv = &self.prior_prec * s2 + DMatrix::identity(d, d) * (a * a);
        let k = spd_cholesky(&((&kinv + kinv.transpose()) * 0.5), "denoiser precision")?.inverse();
        let mean = &k * (&self.prior_prec * &self.prior_mean) * s2 + &k * DVector::from_column_slice(x) * a;
        let h = self.meas.h();
        let m = self.meas.m();
        let cov = DMatrix::identity(m, m) * self.meas.sigma2() + h * &k * h.transpose() * s2;
        let chol = spd_cholesky(&((&cov + cov.transpose()) * 0.5), "measurement covariance")?;
        let resid = DVector::from_column_slice(y) - h * mean;
        let g = &k * h.transpose() * chol.solve(&resid) * a;
        Ok(g.iter().copied().collect())
    }
}

/// Which likelihood term a [`GuidedScore`] adds.
#[derive(Debug, Clone)]
pub enum Likelihood {
    /// Flat-prior form `N(Hx/α_t, σ² I + (e^t - 1) HHᵀ)`.
    Measurement(LinearMeasurement),
    GaussianPrior(GaussianPriorLikelihood),
}

/// Prior score plus likelihood score for a fixed observation.
pub struct GuidedScore<M> {
    pub prior: M,
    pub likelihood: Likelihood,
    pub observation: Vec<f64>,
}

impl<M: ScoreModel> ScoreModel for GuidedScore<M> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// `y` is forwarded to the prior; the observation is fixed at construction.
    fn score(&self, x: &[f64], y: Option<&[f64]>, t: f64) -> Result<Vec<f64>> {
        let prior = self.prior.score(x, y, t)?;
        let lik = match &self.likelihood {
            Likelihood::Measurement(m) => m.likelihood_score(x, &self.observation, t)?,
            Likelihood::GaussianPrior(g) => g.score(x, &self.observation, t)?,
        };
        Ok(prior.iter().zip(&lik).map(|(a, b)| a + b).collect())
    }
}

/// `index, mean, cov_row_0, …` rows of a posterior.
pub fn write_posterior_csv<W: Write>(mean: &[f64], cov: &DMatrix<f64>, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    let d = mean.len();
    let mut header = vec!["index".to_string(), "mean".to_string()];
    header.extend((0..d).map(|j| format!("cov{j}")));
    wr.write_record(&header)?;
    for i in 0..d {
        let mut row = vec![i.to_string(), format!("{:.16e}", mean[i])];
        row.extend((0..d).map(|j| format!("{:.16e}", cov[(i, j)])));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnScore;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_meas(m: usize, d: usize, seed: u64, sigma2: f64) -> LinearMeasurement {
        let mut rng = seeded(seed);
        LinearMeasurement::new(DMatrix::from_fn(m, d, |_, _| rng.random_range(-1.5..1.5)), sigma2).unwrap()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    /// Score of `x_t | y` under prior `N(μ_p, Σ_p)`: Gaussian with mean
    /// `α μ_post` and covariance `α² Σ_post + σ_t² I`.
    fn conditional_gaussian_score(meas: &LinearMeasurement, mu: &[f64], cov: &DMatrix<f64>, y: &[f64], x: &[f64], t: f64) -> Vec<f64> {
        let (a, s) = alpha_sigma(t).unwrap();
        let (pm, pc) = gaussian_posterior_oracle(meas, mu, cov, y).unwrap();
        let d = x.len();
        let c = pc * (a * a) + DMatrix::identity(d, d) * (s * s);
        let r = DVector::from_column_slice(x) - DVector::from_column_slice(&pm) * a;
        let g = -(c.try_inverse().unwrap() * r);
        g.iter().copied().collect()
    }

    #[test]
    fn identity_measurement_at_time_zero() {
        let meas = LinearMeasurement::new(DMatrix::identity(2, 2), 0.3).unwrap();
        let (x, y) = ([0.4, -1.0], [1.1, 0.2]);
        let g = meas.likelihood_score(&x, &y, 1e-8).unwrap();
        let want: Vec<f64> = x.iter().zip(&y).map(|(x, y)| (y - x) / 0.3).collect();
        assert!(rel(&g, &want) < 1e-4);
    }

    #[test]
    fn centered_observation_gives_zero() {
        let meas = random_meas(2, 3, 1, 0.5);
        let x = [0.3, -0.2, 0.9];
        let t = 0.7;
        let (a, _) = alpha_sigma(t).unwrap();
        let y: Vec<f64> = (meas.h() * DVector::from_column_slice(&x) / a).iter().copied().collect();
        assert!(meas.likelihood_score(&x, &y, t).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn likelihood_score_matches_finite_differences_over_time_grid() {
        let meas = random_meas(2, 3, 4, 0.4);
        let mut rng = seeded(8);
        for k in 0..=16 {
            let t = 1e-3 * 1e4f64.powf(k as f64 / 16.0);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = meas.likelihood_score(&x, &y, t).unwrap();
            let fd: Vec<f64> = (0..3)
                .map(|j| {
                    let h = 1e-5 * (1.0 + x[j].abs());
                    let (mut up, mut dn) = (x.clone(), x.clone());
                    up[j] += h;
                    dn[j] -= h;
                    (meas.log_likelihood(&up, &y, t).unwrap() - meas.log_likelihood(&dn, &y, t).unwrap()) / (2.0 * h)
                })
                .collect();
            assert!(rel(&g, &fd) < 1e-5, "t = {t}: {g:?} vs {fd:?}");
        }
    }

    #[test]
    fn gaussian_prior_guidance_matches_conditional_oracle() {
        let meas = random_meas(2, 3, 5, 0.25);
        let mu = [0.0; 3];
        let cov = DMatrix::identity(3, 3);
        let lik = GaussianPriorLikelihood::new(meas.clone(), &mu, &cov).unwrap();
        let y = [0.8, -0.4];
        for &t in &[0.01, 0.3, 1.0, 4.0] {
            let x = [0.2, -0.7, 1.3];
            let lg = lik.score(&x, &y, t).unwrap();
            let total: Vec<f64> = lg.iter().zip(&x).map(|(l, x)| l - x).collect();
            let want = conditional_gaussian_score(&meas, &mu, &cov, &y, &x, t);
            assert!(rel(&total, &want) < 1e-6, "t = {t}");
        }
    }

    #[test]
    fn non_isotropic_prior_guidance_matches_oracle() {
        let meas = random_meas(1, 2, 6, 0.3);
        let mu = [0.5, -0.2];
        let cov = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.6]);
        let lik = GaussianPriorLikelihood::new(meas.clone(), &mu, &cov).unwrap();
        let prior = |x: &[f64], t: f64| -> Vec<f64> {
            let (a, s) = alpha_sigma(t).unwrap();
            let c = &cov * (a * a) + DMatrix::identity(2, 2) * (s * s);
            let r = DVector::from_column_slice(x) - DVector::from_column_slice(&mu) * a;
            (-(c.try_inverse().unwrap() * r)).iter().copied().collect()
        };
        let guided = GuidedScore { prior: FnScore::new(2, |x: &[f64], _: Option<&[f64]>, t: f64| prior(x, t)), likelihood: Likelihood::GaussianPrior(lik), observation: vec![0.9] };
        for &t in &[0.02, 0.5, 2.0] {
            let x = [0.1, 0.6];
            let g = guided.score(&x, None, t).unwrap();
            assert!(rel(&g, &conditional_gaussian_score(&meas, &mu, &cov, &[0.9], &x, t)) < 1e-6);
        }
    }

    #[test]
    fn gaussian_prior_likelihood_flattens_to_measurement_form() {
        let meas = random_meas(2, 3, 7, 0.5);
        let big = DMatrix::identity(3, 3) * 1e8;
        let lik = GaussianPriorLikelihood::new(meas.clone(), &[0.0; 3], &big).unwrap();
        let (x, y) = ([0.3, 0.1, -0.4], [0.5, 1.0]);
        for &t in &[0.05, 1.0] {
            assert!(rel(&lik.score(&x, &y, t).unwrap(), &meas.likelihood_score(&x, &y, t).unwrap()) < 1e-4);
        }
    }

    #[test]
    fn uninformative_and_zero_prior_limits() {
        let meas = random_meas(2, 3, 9, 1e6);
        let (x, y) = ([0.3, 0.1, -0.4], [0.5, 1.0]);
        let g = guided_score(&meas, |x: &[f64], _| x.iter().map(|v| -v).collect(), &x, &y, 0.5).unwrap();
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi + xi).abs() < 1e-4);
        }
        let meas = random_meas(2, 3, 9, 0.5);
        let g = guided_score(&meas, |_: &[f64], _| vec![0.0; 3], &x, &y, 0.5).unwrap();
        assert_eq!(g, meas.likelihood_score(&x, &y, 0.5).unwrap());
    }

    #[test]
    fn posterior_oracle_examples() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let zero = LinearMeasurement::new(DMatrix::zeros(1, 2), 0.5).unwrap();
        let (m, c) = gaussian_posterior_oracle(&zero, &[0.4, -1.0], &cov, &[3.0]).unwrap();
        assert!((m[0] - 0.4).abs() < 1e-12 && (m[1] + 1.0).abs() < 1e-12);
        assert!((c - &cov).abs().max() < 1e-12);

        let id = LinearMeasurement::new(DMatrix::identity(2, 2), 1.0).unwrap();
        let (m, c) = gaussian_posterior_oracle(&id, &[0.0, 0.0], &DMatrix::identity(2, 2), &[1.0, -3.0]).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-12 && (m[1] + 1.5).abs() < 1e-12);
        assert!((c - DMatrix::identity(2, 2) * 0.5).abs().max() < 1e-12);

        let h = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -0.5, 1.0]);
        let sharp = LinearMeasurement::new(h.clone(), 1e-6).unwrap();
        let y = [1.0, 2.0];
        let (m, _) = gaussian_posterior_oracle(&sharp, &[0.0, 0.0], &DMatrix::identity(2, 2), &y).unwrap();
        let inv = h.try_inverse().unwrap() * DVector::from_column_slice(&y);
        assert!((m[0] - inv[0]).abs() < 1e-3 && (m[1] - inv[1]).abs() < 1e-3);
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(LinearMeasurement::new(DMatrix::identity(3, 2), 1.0).is_err());
        assert!(LinearMeasurement::new(DMatrix::identity(2, 2), 0.0).is_err());
        let meas = LinearMeasurement::new(DMatrix::identity(2, 2), 1.0).unwrap();
        let not_spd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(gaussian_posterior_oracle(&meas, &[0.0, 0.0], &not_spd, &[0.0, 0.0]), Err(Error::NotSpd(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        assert!(gaussian_posterior_oracle(&meas, &[0.0, 0.0], &asym, &[0.0, 0.0]).is_err());
        assert!(meas.likelihood_score(&[0.0], &[0.0, 0.0], 1.0).is_err());
        assert!(meas.likelihood_score(&[0.0, 0.0], &[0.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn eigen_condition_flags() {
        let meas = LinearMeasurement::new(DMatrix::from_row_slice(2, 2, &[1.8, 0.0, 0.0, 0.1]), 2.0).unwrap();
        assert_eq!(meas.eigen_condition(), vec![true, false]);
    }

    #[test]
    fn json_and_csv_round_trip() {
        let meas = random_meas(2, 3, 10, 0.7);
        let back = LinearMeasurement::from_json(&meas.to_json().unwrap()).unwrap();
        assert_eq!(back.h(), meas.h());
        assert_eq!(back.sigma2(), 0.7);
        let mut buf = Vec::new();
        write_posterior_csv(&[1.0, 2.0], &DMatrix::identity(2, 2), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "index,mean,cov0,cov1");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn rank_deficient_measurement_completes_basis() {
        let h = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 0.0, 2.0, 4.0, 0.0, 0.0]);
        let meas = LinearMeasurement::new(h, 0.5).unwrap();
        assert!(meas.singular_values()[1].abs() < 1e-12);
        let zero = LinearMeasurement::new(DMatrix::zeros(2, 3), 0.5).unwrap();
        assert_eq!(zero.likelihood_score(&[1.0, 2.0, 3.0], &[1.0, 1.0], 0.3).unwrap(), vec![0.0; 3]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn svd_factors_are_valid(m in 1usize..4, extra in 0usize..3, seed in 0u64..10_000) {
            let meas = random_meas(m, m + extra, seed, 0.5);
            let (d, m) = (meas.d(), meas.m());
            prop_assert!((meas.p() * meas.p().transpose() - DMatrix::identity(m, m)).abs().max() < 1e-10);
            prop_assert!((meas.u() * meas.u().transpose() - DMatrix::identity(d, d)).abs().max() < 1e-10);
            prop_assert!((meas.reconstruct() - meas.h()).abs().max() < 1e-10);
            for w in meas.singular_values().windows(2) {
                prop_assert!(w[0].abs() >= w[1].abs());
            }
        }

        #[test]
        fn svd_route_equals_dense_route(seed in 0u64..10_000, t in 1e-3f64..10.0) {
            let meas = random_meas(2, 3, seed, 0.6);
            let mut rng = seeded(seed + 1);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = meas.likelihood_score(&x, &y, t).unwrap();
            let b = meas.likelihood_score_dense(&x, &y, t).unwrap();
            prop_assert!(rel(&a, &b) < 1e-10, "{:?} vs {:?}", a, b);
        }
    }
}
