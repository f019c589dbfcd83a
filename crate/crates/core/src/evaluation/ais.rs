//! Annealed importance sampling of `log p(x)` for a generator under a
//! Gaussian observation model `x ~ N(G(z), sigma_obs^2 I)`.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::flow::{FlowModel, Prior};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A latent-variable sampler `z -> G(z)` with a prior over `z`.
pub trait Generator {
    fn prior(&self) -> &Prior;
    fn generate_batch(&self, z: &Tensor) -> Result<Tensor>;
}

impl Generator for FlowModel {
    fn prior(&self) -> &Prior {
        FlowModel::prior(self)
    }

    fn generate_batch(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.generate(z)?.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AisSchedule {
    Linear,
    /// Rescaled logistic curve over `[-delta, delta]`, denser near both ends.
    Sigmoid {
        delta: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AisConfig {
    pub n_chains: usize,
    /// Number of annealing steps `T`; the schedule has `T + 1` temperatures.
    pub n_temperatures: usize,
    /// Metropolis-Hastings sweeps per temperature.
    pub sweeps: usize,
    /// Initial standard deviation of the Gaussian random-walk proposal. After
    /// every sweep it is rescaled by `exp(rate - ADAPT_TARGET)` using the
    /// acceptance rate over all chains.
    pub step_size: f64,
    /// Keep the proposal width fixed at `step_size`.
    pub fixed_step: bool,
    pub sigma_obs: f64,
    pub schedule: AisSchedule,
}

impl Default for AisConfig {
    fn default() -> Self {
        AisConfig {
            n_chains: 64,
            n_temperatures: 1000,
            sweeps: 5,
            step_size: 0.05,
            fixed_step: false,
            sigma_obs: 0.1,
            schedule: AisSchedule::Sigmoid { delta: 4.0 },
        }
    }
}

impl AisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_temperatures == 0 {
            return Err(Error::InvalidArgument(
                "AIS needs at least one chain and one step".into(),
            ));
        }
        if !(self.step_size > 0.0) || !(self.sigma_obs > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "AIS step size and sigma_obs must be positive, got {} and {}",
                self.step_size, self.sigma_obs
            )));
        }
        if let AisSchedule::Sigmoid { delta } = self.schedule {
            if !(delta > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "sigmoid delta must be positive, got {delta}"
                )));
            }
        }
        Ok(())
    }

    /// `beta_0 = 0 < ... < beta_T = 1`.
    pub fn betas(&self) -> Vec<f64> {
        let t = self.n_temperatures;
        let mut b: Vec<f64> = match self.schedule {
            AisSchedule::Linear => (0..=t).map(|i| i as f64 / t as f64).collect(),
            AisSchedule::Sigmoid { delta } => {
                let s = |i: usize| 1.0 / (1.0 + (-delta * (2.0 * i as f64 / t as f64 - 1.0)).exp());
                let (lo, hi) = (s(0), s(t));
                (0..=t).map(|i| (s(i) - lo) / (hi - lo)).collect()
            }
        };
        b[0] = 0.0;
        b[t] = 1.0;
        b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AisResult {
    /// Estimated `log p(x)` in nats.
    pub log_p: f64,
    /// Final log importance weight of each chain.
    pub log_weights: Vec<f64>,
    /// Fraction of accepted proposals per chain.
    pub acceptance: Vec<f64>,
    pub warnings: Vec<String>,
}

impl AisResult {
    /// Standard error of the estimate from a bootstrap over chains.
    pub fn bootstrap_stderr(&self, resamples: usize, rng: &mut Rng) -> f64 {
        let n = self.log_weights.len();
        let est: Vec<f64> = (0..resamples)
            .map(|_| {
                let w: Vec<f64> = (0..n).map(|_| self.log_weights[rng.random_range(0..n)]).collect();
                log_mean_exp(&w)
            })
            .collect();
        let mean = est.iter().sum::<f64>() / resamples as f64;
        (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (resamples as f64 - 1.0)).sqrt()
    }
}

/// `log((1/n) sum exp(w_i))`, combined in index order.
pub fn log_mean_exp(w: &[f64]) -> f64 {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = w.iter().map(|v| (v - max).exp()).sum();
    max + s.ln() - (w.len() as f64).ln()
}

/// Acceptance rate the adaptive proposal width steers toward.
pub const ADAPT_TARGET: f64 = 0.44;

fn obs_loglik(x: &[f64], gz: &Tensor, sigma: f64) -> Vec<f64> {
    let d = x.len();
    let norm = -0.5 * d as f64 * (2.0 * PI * sigma * sigma).ln();
    gz.data()
        .chunks_exact(d)
        .map(|g| norm - x.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * sigma * sigma))
        .collect()
}

/// Estimates `log p(x)` for one point with all chains advanced together.
pub fn ais_estimate(gen: &dyn Generator, x: &[f64], cfg: &AisConfig, rng: &mut Rng) -> Result<AisResult> {
    cfg.validate()?;
    let prior = gen.prior();
    let d = prior.dim;
    if x.len() != d || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "AIS target must be a finite vector of length {d}"
        )));
    }
    let c = cfg.n_chains;
    let betas = cfg.betas();
    let mut z = prior.sample(c, rng);
    let mut log_prior = prior.log_density(&z)?.into_data();
    let mut loglik = obs_loglik(x, &gen.generate_batch(&z)?, cfg.sigma_obs);
    let mut logw = vec![0.0; c];
    let mut accepted = vec![0usize; c];
    let mut proposed = 0usize;
    let mut step = cfg.step_size;
    for t in 1..betas.len() {
        let beta = betas[t];
        let db = beta - betas[t - 1];
        for (w, l) in logw.iter_mut().zip(&loglik) {
            *w += db * l;
        }
        for _ in 0..cfg.sweeps {
            let prop: Vec<f64> = z
                .data()
                .iter()
                .map(|&v| v + step * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let prop = Tensor::new(vec![c, d], prop)?;
            let prop_prior = prior.log_density(&prop)?.into_data();
            let prop_ll = obs_loglik(x, &gen.generate_batch(&prop)?, cfg.sigma_obs);
            proposed += 1;
            let mut sweep_accepts = 0usize;
            let zd = z.data_mut();
            for i in 0..c {
                let log_alpha = (prop_prior[i] + beta * prop_ll[i]) - (log_prior[i] + beta * loglik[i]);
                let u: f64 = rng.random();
                if log_alpha >= 0.0 || u.ln() < log_alpha {
                    zd[i * d..(i + 1) * d].copy_from_slice(prop.row(i));
                    log_prior[i] = prop_prior[i];
                    loglik[i] = prop_ll[i];
                    accepted[i] += 1;
                    sweep_accepts += 1;
                }
            }
            if !cfg.fixed_step {
                step *= (sweep_accepts as f64 / c as f64 - ADAPT_TARGET).exp();
            }
        }
    }
    if logw.iter().any(|w| w.is_nan()) {
        return Err(Error::NonFinite { op: "ais" });
    }
    let acceptance: Vec<f64> = accepted.iter().map(|&a| a as f64 / proposed.max(1) as f64).collect();
    let warnings = accepted
        .iter()
        .enumerate()
        .filter(|(_, &a)| a == 0 && proposed > 0)
        .map(|(i, _)| format!("chain {i} accepted no proposals"))
        .collect();
    Ok(AisResult {
        log_p: log_mean_exp(&logw),
        log_weights: logw,
        acceptance,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::PriorKind;
    use crate::rng::{self, Stream};

    fn analytic(x: f64, sigma: f64) -> f64 {
        let v = 1.0 + sigma * sigma;
        -0.5 * (2.0 * PI * v).ln() - x * x / (2.0 * v)
    }

    #[test]
    fn schedules_are_increasing() {
        for schedule in [AisSchedule::Linear, AisSchedule::Sigmoid { delta: 4.0 }] {
            let cfg = AisConfig {
                n_temperatures: 50,
                schedule,
                ..AisConfig::default()
            };
            let b = cfg.betas();
            assert_eq!(b.len(), 51);
            assert_eq!((b[0], b[50]), (0.0, 1.0));
            assert!(b.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn log_mean_exp_of_identical_weights() {
        assert!((log_mean_exp(&[-3.25; 17]) + 3.25).abs() < 1e-12);
    }

    #[test]
    fn single_step_is_prior_importance_sampling() {
        let m = FlowModel::identity(1, PriorKind::IsotropicGaussian);
        let cfg = AisConfig {
            n_temperatures: 1,
            n_chains: 32,
            ..AisConfig::default()
        };
        let x = [0.4];
        let r = ais_estimate(&m, &x, &cfg, &mut rng::stream(1, Stream::Ais)).unwrap();
        let mut rng2 = rng::stream(1, Stream::Ais);
        let z = m.prior().sample(32, &mut rng2);
        let w = obs_loglik(&x, &z, cfg.sigma_obs);
        assert_eq!(r.log_weights, w);
        assert!((r.log_p - log_mean_exp(&w)).abs() < 1e-12);
    }

    #[test]
    fn linear_gaussian_marginal() {
        let m = FlowModel::identity(1, PriorKind::IsotropicGaussian);
        let r = ais_estimate(&m, &[0.0], &AisConfig::default(), &mut rng::stream(2, Stream::Ais)).unwrap();
        assert!(
            (r.log_p - analytic(0.0, 0.1)).abs() < 0.05,
            "{} vs {}",
            r.log_p,
            analytic(0.0, 0.1)
        );
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn within_three_bootstrap_errors_across_noise_levels() {
        let m = FlowModel::identity(1, PriorKind::IsotropicGaussian);
        for (k, sigma) in [0.01, 0.1, 1.0].into_iter().enumerate() {
            let cfg = AisConfig {
                sigma_obs: sigma,
                ..AisConfig::default()
            };
            let x = 0.3;
            let r = ais_estimate(&m, &[x], &cfg, &mut rng::indexed_stream(3, Stream::Ais, k as u32)).unwrap();
            let se = r.bootstrap_stderr(500, &mut rng::indexed_stream(3, Stream::Eval, k as u32));
            let err = (r.log_p - analytic(x, sigma)).abs();
            assert!(err <= 3.0 * se, "sigma {sigma}: error {err} vs stderr {se}");
        }
    }

    #[test]
    fn fixed_step_keeps_proposal_width() {
        let m = FlowModel::identity(1, PriorKind::IsotropicGaussian);
        let cfg = AisConfig {
            n_temperatures: 20,
            fixed_step: true,
            step_size: 1e-9,
            ..AisConfig::default()
        };
        let r = ais_estimate(&m, &[0.0], &cfg, &mut rng::stream(4, Stream::Ais)).unwrap();
        assert!(r.acceptance.iter().all(|&a| a > 0.9));
    }

    #[test]
    fn bad_target_width_is_rejected() {
        let m = FlowModel::identity(2, PriorKind::IsotropicGaussian);
        assert!(ais_estimate(&m, &[0.0], &AisConfig::default(), &mut rng::stream(0, Stream::Ais)).is_err());
    }
}
