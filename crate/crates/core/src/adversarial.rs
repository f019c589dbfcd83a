//! Critic networks and the Wasserstein and Jensen-Shannon adversarial losses.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::{Activation, BoundMlp, Mlp, Parameterized};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// Bounds applied to critic probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DivergenceKind {
    /// Wasserstein distance with a gradient penalty on the critic.
    Wgan,
    /// The original minimax GAN objective.
    Jsd,
}

impl DivergenceKind {
    pub fn name(self) -> &'static str {
        match self {
            DivergenceKind::Wgan => "wgan",
            DivergenceKind::Jsd => "jsd",
        }
    }
}

impl std::str::FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wgan" => Ok(DivergenceKind::Wgan),
            "jsd" => Ok(DivergenceKind::Jsd),
            other => Err(Error::InvalidArgument(format!("unknown divergence {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
    /// Weight of the gradient penalty; ignored for JSD.
    pub penalty_coeff: f64,
    /// Critic updates per generator update.
    pub n_critic: usize,
}

impl Default for DivergenceSpec {
    fn default() -> Self {
        DivergenceSpec {
            kind: DivergenceKind::Wgan,
            penalty_coeff: 10.0,
            n_critic: 5,
        }
    }
}

impl DivergenceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_coeff >= 0.0) || !self.penalty_coeff.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "penalty coefficient must be >= 0, got {}",
                self.penalty_coeff
            )));
        }
        if self.n_critic == 0 {
            return Err(Error::InvalidArgument("n_critic must be positive".into()));
        }
        Ok(())
    }
}

/// Scalar-valued dense network `D: R^d -> R`.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    net: Mlp,
}

impl Critic {
    pub fn new(dim: usize, hidden: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        let mut widths = vec![dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Ok(Critic {
            net: Mlp::new(&widths, activation, false, rng)?,
        })
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.output_width() != 1 {
            return Err(Error::InvalidArgument(format!(
                "critic must output one value, network outputs {}",
                net.output_width()
            )));
        }
        Ok(Critic { net })
    }

    pub fn dim(&self) -> usize {
        self.net.input_width()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundCritic {
        BoundCritic {
            net: self.net.bind(tape, trainable),
            dim: self.dim(),
        }
    }

    /// Critic output for every row of `x`.
    pub fn value(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let v = self.bind(&tape, false).value(&tape.constant(x.clone()))?;
        Ok(v.value().clone())
    }
}

impl Parameterized for Critic {
    fn parameters(&self) -> Vec<&Tensor> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.parameters_mut()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.net.parameter_names()
    }
}

pub struct BoundCritic {
    net: BoundMlp,
    dim: usize,
}

impl BoundCritic {
    pub fn params(&self) -> Vec<Var> {
        self.net.params()
    }

    /// `[n, d] -> [n]`.
    pub fn value(&self, x: &Var) -> Result<Var> {
        match x.shape() {
            &[n, d] if d == self.dim => self.net.forward(x)?.reshape(&[n]),
            s => Err(Error::shape("critic", format!("expected [n, {}], got {s:?}", self.dim))),
        }
    }
}

/// `ε·x_real + (1−ε)·x_fake` with one `ε ~ U(0,1)` per row pair.
pub fn interpolate(x_real: &Tensor, x_fake: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    if x_real.shape() != x_fake.shape() || x_real.rank() != 2 {
        return Err(Error::shape(
            "interpolate",
            format!("{:?} vs {:?}", x_real.shape(), x_fake.shape()),
        ));
    }
    let d = x_real.cols();
    let mut out = Vec::with_capacity(x_real.numel());
    for (r, f) in x_real.data().chunks_exact(d).zip(x_fake.data().chunks_exact(d)) {
        let eps: f64 = rng.random();
        out.extend(r.iter().zip(f).map(|(a, b)| eps * a + (1.0 - eps) * b));
    }
    Tensor::new(x_real.shape().to_vec(), out)
}

/// Mean over rows of `(‖∇ₓD(x)‖ − 1)²` at the points `x`, expanded as
/// `‖g‖² − 2‖g‖ + 1` so that a zero gradient yields penalty 1 with a zero
/// derivative instead of a division by zero.
///
/// The input gradient is recorded on the tape, so the result can be
/// differentiated with respect to the critic parameters.
pub fn gradient_penalty(critic: &BoundCritic, points: &Tensor, tape: &Tape) -> Result<Var> {
    let x = tape.leaf(points.clone(), true);
    let d = critic.value(&x)?.sum()?;
    let g = tape.grad(&d, &[&x])?.remove(0);
    let sq = g.square()?.sum_axis(1)?;
    let norm = g.row_norm()?;
    sq.sub(&norm.scale(2.0)?)?.shift(1.0)?.mean()
}

pub struct WganLosses {
    /// `mean D(fake) − mean D(real) + coeff · penalty`, minimized by the critic.
    pub critic_loss: Var,
    /// `−mean D(fake)`, minimized by the generator.
    pub generator_loss: Var,
    /// Unweighted gradient penalty.
    pub penalty: Var,
}

/// Critic-side WGAN loss and its penalty term. `x_real` and `x_fake` are
/// treated as data; interpolation weights come from `rng`.
pub fn wgan_critic_loss(
    critic: &BoundCritic,
    x_real: &Var,
    x_fake: &Var,
    penalty_coeff: f64,
    rng: &mut Rng,
) -> Result<(Var, Var)> {
    if x_real.shape().first() == Some(&0) || x_real.shape() != x_fake.shape() {
        return Err(Error::shape(
            "wgan",
            format!("{:?} vs {:?}", x_real.shape(), x_fake.shape()),
        ));
    }
    let tape = x_real.tape();
    let diff = critic.value(x_fake)?.mean()?.sub(&critic.value(x_real)?.mean()?)?;
    let points = interpolate(x_real.value(), x_fake.value(), rng)?;
    let penalty = gradient_penalty(critic, &points, tape)?;
    let loss = diff.add(&penalty.scale(penalty_coeff)?)?;
    Ok((loss, penalty))
}

pub fn wgan_generator_loss(critic: &BoundCritic, x_fake: &Var) -> Result<Var> {
    critic.value(x_fake)?.mean()?.neg()
}

pub fn wgan_losses(
    critic: &BoundCritic,
    x_real: &Var,
    x_fake: &Var,
    penalty_coeff: f64,
    rng: &mut Rng,
) -> Result<WganLosses> {
    let (critic_loss, penalty) = wgan_critic_loss(critic, x_real, x_fake, penalty_coeff, rng)?;
    Ok(WganLosses {
        critic_loss,
        generator_loss: wgan_generator_loss(critic, x_fake)?,
        penalty,
    })
}

pub struct JsdLosses {
    /// `mean log D(real) + mean log(1 − D(fake))`, maximized by the critic.
    pub critic_objective: Var,
    /// Negated objective, for minimization.
    pub critic_loss: Var,
    /// `mean log(1 − D(fake))`, minimized by the generator.
    pub generator_loss: Var,
}

fn probability(critic: &BoundCritic, x: &Var) -> Result<Var> {
    critic.value(x)?.sigmoid()?.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

pub fn jsd_generator_loss(critic: &BoundCritic, x_fake: &Var) -> Result<Var> {
    probability(critic, x_fake)?.neg()?.shift(1.0)?.log()?.mean()
}

pub fn jsd_losses(critic: &BoundCritic, x_real: &Var, x_fake: &Var) -> Result<JsdLosses> {
    if x_real.shape().first() == Some(&0) {
        return Err(Error::shape("jsd", "empty batch"));
    }
    let real = probability(critic, x_real)?.log()?.mean()?;
    let fake = jsd_generator_loss(critic, x_fake)?;
    let critic_objective = real.add(&fake)?;
    Ok(JsdLosses {
        critic_loss: critic_objective.neg()?,
        critic_objective,
        generator_loss: fake,
    })
}
