use std::f64::consts::LN_2;

use crate::adversarial::{self, BoundCritic, DivergenceKind, DivergenceSpec};
use crate::error::{Error, Result};
use crate::flow::BoundFlow;
use crate::rng::{self, Rng, Stream};
use crate::tensor::Var;

/// Negative mean log-likelihood of the rows of `x`, in nats.
pub fn mle_loss(flow: &BoundFlow, x: &Var) -> Result<Var> {
    if x.shape().first().is_none_or(|&n| n == 0) {
        return Err(Error::InvalidArgument("mle_loss needs a nonempty batch".into()));
    }
    flow.log_likelihood(x)?.mean()?.neg()
}

/// Adversarial generator loss on generated rows `x_fake`.
pub fn adversarial_generator_loss(critic: &BoundCritic, kind: DivergenceKind, x_fake: &Var) -> Result<Var> {
    match kind {
        DivergenceKind::Wgan => adversarial::wgan_generator_loss(critic, x_fake),
        DivergenceKind::Jsd => adversarial::jsd_generator_loss(critic, x_fake),
    }
}

/// Generator objective `adv + lambda * mle`. With `lambda == 0` the
/// adversarial loss is returned as is, so no likelihood term is ever built.
pub fn generator_objective(
    flow: &BoundFlow,
    critic: &BoundCritic,
    kind: DivergenceKind,
    x_real: &Var,
    z: &Var,
    lambda: f64,
) -> Result<Var> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let (x_fake, _) = flow.generate(z)?;
    let adv = adversarial_generator_loss(critic, kind, &x_fake)?;
    if lambda == 0.0 {
        return Ok(adv);
    }
    adv.add(&mle_loss(flow, x_real)?.scale(lambda)?)
}

/// Critic loss on real rows and generated rows treated as data.
pub fn critic_objective(
    critic: &BoundCritic,
    spec: &DivergenceSpec,
    x_real: &Var,
    x_fake: &Var,
    rng: &mut Rng,
) -> Result<Var> {
    match spec.kind {
        DivergenceKind::Wgan => Ok(adversarial::wgan_critic_loss(critic, x_real, x_fake, spec.penalty_coeff, rng)?.0),
        DivergenceKind::Jsd => Ok(adversarial::jsd_losses(critic, x_real, x_fake)?.critic_loss),
    }
}

pub struct HybridLosses {
    pub generator: Var,
    pub critic: Var,
}

/// Hybrid generator loss together with the unmodified critic loss.
pub fn hybrid_loss(
    flow: &BoundFlow,
    critic: &BoundCritic,
    spec: &DivergenceSpec,
    x_real: &Var,
    z: &Var,
    lambda: f64,
    rng: &mut Rng,
) -> Result<HybridLosses> {
    let generator = generator_objective(flow, critic, spec.kind, x_real, z, lambda)?;
    let x_fake = flow.generate(z)?.0.detach();
    let critic = critic_objective(critic, spec, x_real, &x_fake, rng)?;
    Ok(HybridLosses { generator, critic })
}

/// Number of discrete intensity levels per pixel.
pub const PIXEL_LEVELS: u32 = 256;

/// `(x + u) / 256` with `u ~ U[0, 1)` per element.
pub fn dequantize_with(raw: &[i64], rng: &mut Rng) -> Result<Vec<f64>> {
    use rand::Rng as _;
    if let Some(bad) = raw.iter().find(|&&v| !(0..PIXEL_LEVELS as i64).contains(&v)) {
        return Err(Error::InvalidArgument(format!("pixel value {bad} outside 0..=255")));
    }
    Ok(raw
        .iter()
        .map(|&v| (v as f64 + rng.random::<f64>()) / f64::from(PIXEL_LEVELS))
        .collect())
}

/// Dequantizes with the dedicated noise stream of `seed`.
pub fn dequantize_and_scale(raw: &[i64], seed: u64) -> Result<Vec<f64>> {
    dequantize_with(raw, &mut rng::stream(seed, Stream::Dequantize))
}

/// Log-likelihood correction, in nats per example, for data rescaled from
/// 256 levels to the unit interval.
pub fn dequantization_correction(d: usize) -> f64 {
    d as f64 * f64::from(PIXEL_LEVELS).ln()
}

pub fn nats_to_bits_per_dim(nll_nats: f64, d: usize, scale_correction: f64) -> f64 {
    (nll_nats + scale_correction) / (d as f64 * LN_2)
}
