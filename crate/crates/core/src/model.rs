//! The score-function interface shared by the sampler, the losses and the
//! evaluators.

use crate::densities::ConditionalDensitySpec;
use crate::diffused_poly::DiffusedPolynomial;
use crate::error::{Error, Result};

/// `s(x, y, t)`; `y = None` requests the unconditional branch.
pub trait ScoreModel {
    fn dim(&self) -> usize;

    fn score(&self, x: &[f64], y: Option<&[f64]>, t: f64) -> Result<Vec<f64>>;

    /// Scores of many points sharing `y` and `t`.
    fn score_batch(&self, xs: &[Vec<f64>], y: Option<&[f64]>, t: f64) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.score(x, y, t)).collect()
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn score(&self, x: &[f64], y: Option<&[f64]>, t: f64) -> Result<Vec<f64>> {
        (**self).score(x, y, t)
    }

    fn score_batch(&self, xs: &[Vec<f64>], y: Option<&[f64]>, t: f64) -> Result<Vec<Vec<f64>>> {
        (**self).score_batch(xs, y, t)
    }
}

/// Closed-form conditional score, or the `y`-marginal score for `None`.
#[derive(Debug, Clone)]
pub struct ExactScore<'a> {
    pub spec: &'a ConditionalDensitySpec,
}

impl<'a> ExactScore<'a> {
    pub fn new(spec: &'a ConditionalDensitySpec) -> Self {
        Self { spec }
    }
}

impl ScoreModel for ExactScore<'_> {
    fn dim(&self) -> usize {
        self.spec.d()
    }

    fn score(&self, x: &[f64], y: Option<&[f64]>, t: f64) -> Result<Vec<f64>> {
        match y {
            Some(y) => self.spec.exact_score(x, y, t),
            None => self.spec.marginal_score(x, t),
        }
    }
}

/// Adapter for plain closures `(x, y, t) -> s`.
pub struct FnScore<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> FnScore<F>
where
    F: Fn(&[f64], Option<&[f64]>, f64) -> Vec<f64>,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> ScoreModel for FnScore<F>
where
    F: Fn(&[f64], Option<&[f64]>, f64) -> Vec<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[f64], y: Option<&[f64]>, t: f64) -> Result<Vec<f64>> {
        Ok((self.f)(x, y, t))
    }
}

impl ScoreModel for DiffusedPolynomial {
    fn dim(&self) -> usize {
        self.d()
    }

    fn score(&self, x: &[f64], y: Option<&[f64]>, t: f64) -> Result<Vec<f64>> {
        match y {
            Some(y) => DiffusedPolynomial::score(self, x, y, t),
            None if self.d_y() == 0 => DiffusedPolynomial::score(self, x, &[], t),
            None => Err(Error::InvalidConfig("diffused polynomial has no unconditional branch".into())),
        }
    }
}
