use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorKind {
    StandardLogistic,
    IsotropicGaussian,
}

impl PriorKind {
    pub fn name(self) -> &'static str {
        match self {
            PriorKind::StandardLogistic => "logistic",
            PriorKind::IsotropicGaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(PriorKind::StandardLogistic),
            "gaussian" => Ok(PriorKind::IsotropicGaussian),
            other => Err(Error::InvalidArgument(format!("unknown prior {other:?}"))),
        }
    }
}

/// Factorized latent density `p(z)` over `R^dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prior {
    pub kind: PriorKind,
    pub dim: usize,
}

fn logistic_logpdf(z: f64) -> f64 {
    // -z - 2 log(1 + e^-z) is symmetric in z; use |z| to avoid overflow.
    let a = z.abs();
    -a - 2.0 * (-a).exp().ln_1p()
}

impl Prior {
    pub fn new(kind: PriorKind, dim: usize) -> Self {
        Prior { kind, dim }
    }

    fn check(&self, z: &Tensor) -> Result<()> {
        if z.rank() != 2 || z.cols() != self.dim {
            return Err(Error::shape(
                "prior",
                format!("expected [n, {}], got {:?}", self.dim, z.shape()),
            ));
        }
        Ok(())
    }

    /// Per-row log density of a `[n, dim]` batch.
    pub fn log_density(&self, z: &Tensor) -> Result<Tensor> {
        self.check(z)?;
        let d = self.dim as f64;
        let out = z
            .data()
            .chunks_exact(self.dim)
            .map(|row| match self.kind {
                PriorKind::IsotropicGaussian => {
                    -0.5 * row.iter().map(|v| v * v).sum::<f64>() - 0.5 * d * (2.0 * PI).ln()
                }
                PriorKind::StandardLogistic => row.iter().map(|&v| logistic_logpdf(v)).sum(),
            })
            .collect();
        Ok(Tensor::vector(out))
    }

    /// Differentiable version of [`Prior::log_density`].
    pub fn log_density_var(&self, z: &Var) -> Result<Var> {
        self.check(z.value())?;
        match self.kind {
            PriorKind::IsotropicGaussian => z
                .square()?
                .sum_axis(1)?
                .scale(-0.5)?
                .shift(-0.5 * self.dim as f64 * (2.0 * PI).ln()),
            PriorKind::StandardLogistic => {
                let neg = z.neg()?;
                neg.sub(&neg.softplus()?.scale(2.0)?)?.sum_axis(1)
            }
        }
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Tensor {
        let data = (0..n * self.dim)
            .map(|_| match self.kind {
                PriorKind::IsotropicGaussian => rng.sample(StandardNormal),
                PriorKind::StandardLogistic => {
                    let u: f64 = loop {
                        let u: f64 = rng.random();
                        if u > 0.0 {
                            break u;
                        }
                    };
                    u.ln() - (-u).ln_1p()
                }
            })
            .collect();
        Tensor::from_parts(vec![n, self.dim], data)
    }

    /// Per-coordinate variance of the prior.
    pub fn variance(&self) -> f64 {
        match self.kind {
            PriorKind::IsotropicGaussian => 1.0,
            PriorKind::StandardLogistic => PI * PI / 3.0,
        }
    }
}

/// Log density of `z` under `prior`, one value per row.
pub fn prior_logpdf(prior: &Prior, z: &Tensor) -> Result<Tensor> {
    prior.log_density(z)
}
