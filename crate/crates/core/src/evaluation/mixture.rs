//! Equal-weight isotropic Gaussian mixtures: the memorizing baseline centered
//! on training points and the Parzen (KDE) estimator centered on samples.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

const CHUNK: usize = 256;

/// `sigma_k = lo * (hi / lo)^(k / n)` for `k = 1..=n`: `n` log-spaced points
/// in `(lo, hi]`.
pub fn bandwidth_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| lo * (hi / lo).powf(k as f64 / n as f64)).collect()
}

fn check(centers: &Tensor, x: &Tensor) -> Result<()> {
    if centers.rank() != 2 || centers.rows() == 0 {
        return Err(Error::InvalidArgument("mixture needs at least one center".into()));
    }
    if x.rank() != 2 || x.cols() != centers.cols() {
        return Err(Error::shape(
            "mixture",
            format!("centers {:?} vs points {:?}", centers.shape(), x.shape()),
        ));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be positive, got {sigma}"
        )));
    }
    Ok(())
}

/// Squared distances from each row of `x` to every center, `[rows, m]`.
fn sq_distances(centers: &Tensor, x: &[f64], d: usize) -> Vec<f64> {
    let m = centers.rows();
    let c = centers.data();
    let mut out = Vec::with_capacity(x.len() / d * m);
    for xi in x.chunks_exact(d) {
        for cj in c.chunks_exact(d) {
            out.push(xi.iter().zip(cj).map(|(a, b)| (a - b) * (a - b)).sum());
        }
    }
    out
}

/// `log (1/m) sum_j N(x; c_j, sigma^2 I)` from one row of squared distances.
fn log_mixture(dist: &[f64], sigma: f64, d: usize) -> f64 {
    let inv = 0.5 / (sigma * sigma);
    let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = dist.iter().map(|&r| (-(r - min) * inv).exp()).sum();
    -min * inv + s.ln() - (dist.len() as f64).ln() - 0.5 * d as f64 * (2.0 * PI * sigma * sigma).ln()
}

/// Per-point log density, in nats, for every bandwidth in `sigmas`:
/// `out[k][i]` belongs to `sigmas[k]` and row `i` of `x`.
pub fn mixture_logpdf_multi(centers: &Tensor, x: &Tensor, sigmas: &[f64]) -> Result<Vec<Vec<f64>>> {
    check(centers, x)?;
    for &s in sigmas {
        check_sigma(s)?;
    }
    let d = centers.cols();
    let per_chunk: Vec<Vec<Vec<f64>>> = x
        .data()
        .par_chunks(CHUNK * d)
        .map(|chunk| {
            let dist = sq_distances(centers, chunk, d);
            sigmas
                .iter()
                .map(|&s| {
                    dist.chunks_exact(centers.rows())
                        .map(|row| log_mixture(row, s, d))
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut out = vec![Vec::with_capacity(x.rows()); sigmas.len()];
    for chunk in per_chunk {
        for (k, vals) in chunk.into_iter().enumerate() {
            out[k].extend(vals);
        }
    }
    Ok(out)
}

/// Log density of each row of `x` under the equal-weight mixture of
/// `N(c, sigma^2 I)` over the rows `c` of `centers`.
pub fn gmm_logpdf(centers: &Tensor, sigma: f64, x: &Tensor) -> Result<Vec<f64>> {
    Ok(mixture_logpdf_multi(centers, x, &[sigma])?.remove(0))
}

/// Parzen estimate of `log p(x)` from generated samples. Same computation as
/// [`gmm_logpdf`] with the samples as centers.
pub fn kde_estimate(samples: &Tensor, x_eval: &Tensor, sigma: f64) -> Result<Vec<f64>> {
    gmm_logpdf(samples, sigma, x_eval)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthSearch {
    pub sigma: f64,
    /// `(sigma, mean validation NLL)` for every grid point, in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Grid point with the lowest mean validation NLL; ties go to the smaller
/// bandwidth.
pub fn gmm_bandwidth_search(centers: &Tensor, val: &Tensor, grid: &[f64]) -> Result<BandwidthSearch> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("bandwidth grid is empty".into()));
    }
    let lls = mixture_logpdf_multi(centers, val, grid)?;
    let curve: Vec<(f64, f64)> = grid
        .iter()
        .zip(&lls)
        .map(|(&s, ll)| (s, -ll.iter().sum::<f64>() / ll.len() as f64))
        .collect();
    let mut best = curve[0];
    for &(s, nll) in &curve[1..] {
        if nll < best.1 || (nll == best.1 && s < best.0) {
            best = (s, nll);
        }
    }
    Ok(BandwidthSearch { sigma: best.0, curve })
}

/// The memorizing baseline: one isotropic component per training point.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmBaseline {
    centers: Tensor,
    sigma: f64,
}

impl GmmBaseline {
    pub fn new(centers: Tensor, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        if centers.rank() != 2 || centers.rows() == 0 {
            return Err(Error::InvalidArgument("mixture needs at least one center".into()));
        }
        Ok(GmmBaseline { centers, sigma })
    }

    pub fn centers(&self) -> &Tensor {
        &self.centers
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn log_density(&self, x: &Tensor) -> Result<Vec<f64>> {
        gmm_logpdf(&self.centers, self.sigma, x)
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let c = self.centers.row(rng.random_range(0..self.centers.rows()));
            for &v in c {
                let e: f64 = rng.sample(StandardNormal);
                data.push(v + self.sigma * e);
            }
        }
        Tensor::from_parts(vec![n, d], data)
    }
}
