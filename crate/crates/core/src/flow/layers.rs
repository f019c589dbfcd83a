use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::{BoundMlp, Mlp};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CouplingKind {
    /// Shift only; unit Jacobian determinant.
    Additive,
    /// Log-scale and shift.
    Affine,
}

impl CouplingKind {
    pub fn name(self) -> &'static str {
        match self {
            CouplingKind::Additive => "additive",
            CouplingKind::Affine => "affine",
        }
    }
}

impl std::str::FromStr for CouplingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(CouplingKind::Additive),
            "affine" => Ok(CouplingKind::Affine),
            other => Err(Error::InvalidArgument(format!("unknown coupling kind {other:?}"))),
        }
    }
}

/// Passes the masked coordinates through unchanged and transforms the rest
/// conditioned on them.
///
/// In the generative direction the transformed block becomes
/// `x * exp(s) + t` (affine) or `x + t` (additive), where `(s, t)` come from
/// the conditioner evaluated on the passed block. Raw log-scales are squashed
/// to `clamp * tanh(raw / clamp)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer {
    kind: CouplingKind,
    mask: Vec<bool>,
    conditioner: Mlp,
    log_scale_clamp: f64,
    pass: Vec<usize>,
    change: Vec<usize>,
}

impl CouplingLayer {
    /// `mask[i] == true` marks coordinate `i` as passed through unchanged.
    pub fn new(kind: CouplingKind, mask: Vec<bool>, conditioner: Mlp, log_scale_clamp: f64) -> Result<Self> {
        let pass: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let change: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
        if pass.is_empty() || change.is_empty() {
            return Err(Error::InvalidArgument(
                "coupling mask needs at least one passed and one transformed coordinate".into(),
            ));
        }
        if !(log_scale_clamp > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "log-scale clamp must be positive, got {log_scale_clamp}"
            )));
        }
        let out = match kind {
            CouplingKind::Additive => change.len(),
            CouplingKind::Affine => 2 * change.len(),
        };
        if conditioner.input_width() != pass.len() || conditioner.output_width() != out {
            return Err(Error::shape(
                "coupling",
                format!(
                    "conditioner maps {} -> {}, layer needs {} -> {}",
                    conditioner.input_width(),
                    conditioner.output_width(),
                    pass.len(),
                    out
                ),
            ));
        }
        Ok(CouplingLayer {
            kind,
            mask,
            conditioner,
            log_scale_clamp,
            pass,
            change,
        })
    }

    pub fn kind(&self) -> CouplingKind {
        self.kind
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn conditioner(&self) -> &Mlp {
        &self.conditioner
    }

    pub fn conditioner_mut(&mut self) -> &mut Mlp {
        &mut self.conditioner
    }

    pub fn log_scale_clamp(&self) -> f64 {
        self.log_scale_clamp
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }
}

/// Elementwise scaling by `exp(log_diag)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleLayer {
    pub log_diag: Tensor,
}

impl ScaleLayer {
    pub fn new(log_diag: Vec<f64>) -> Result<Self> {
        if log_diag.is_empty() || log_diag.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("log_diag must be finite and nonempty".into()));
        }
        Ok(ScaleLayer {
            log_diag: Tensor::vector(log_diag),
        })
    }

    pub fn identity(dim: usize) -> Self {
        ScaleLayer {
            log_diag: Tensor::zeros(&[dim]),
        }
    }

    pub fn log_det(&self) -> f64 {
        self.log_diag.data().iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.log_diag.numel()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Coupling(CouplingLayer),
    Scale(ScaleLayer),
}

impl Layer {
    pub fn dim(&self) -> usize {
        match self {
            Layer::Coupling(c) => c.dim(),
            Layer::Scale(s) => s.dim(),
        }
    }

    pub(crate) fn bind(&self, tape: &Tape, trainable: bool) -> BoundLayer {
        match self {
            Layer::Coupling(c) => BoundLayer::Coupling {
                kind: c.kind,
                net: c.conditioner.bind(tape, trainable),
                pass: c.pass.iter().copied().collect(),
                change: c.change.iter().copied().collect(),
                clamp: c.log_scale_clamp,
                dim: c.dim(),
            },
            Layer::Scale(s) => BoundLayer::Scale {
                log_diag: tape.leaf(s.log_diag.clone(), trainable),
            },
        }
    }
}

pub(crate) enum BoundLayer {
    Coupling {
        kind: CouplingKind,
        net: BoundMlp,
        pass: Rc<[usize]>,
        change: Rc<[usize]>,
        clamp: f64,
        dim: usize,
    },
    Scale {
        log_diag: Var,
    },
}

pub(crate) enum Direction {
    Generate,
    Invert,
}

impl BoundLayer {
    pub(crate) fn params(&self) -> Vec<Var> {
        match self {
            BoundLayer::Coupling { net, .. } => net.params(),
            BoundLayer::Scale { log_diag } => vec![log_diag.clone()],
        }
    }

    /// Maps a `[n, d]` batch one way or the other; returns the output and the
    /// per-row log|det| of this layer in that direction (`None` when it is 0).
    pub(crate) fn apply(&self, x: &Var, dir: Direction) -> Result<(Var, Option<Var>)> {
        let n = x.shape()[0];
        match self {
            BoundLayer::Scale { log_diag } => {
                let ld = match dir {
                    Direction::Generate => log_diag.clone(),
                    Direction::Invert => log_diag.neg()?,
                };
                let y = x.mul(&ld.exp()?.broadcast(&[n])?)?;
                let logdet = ld.sum()?.broadcast(&[n])?;
                Ok((y, Some(logdet)))
            }
            BoundLayer::Coupling {
                kind,
                net,
                pass,
                change,
                clamp,
                dim,
            } => {
                let x_pass = x.select_cols(Rc::clone(pass))?;
                let x_change = x.select_cols(Rc::clone(change))?;
                let h = net.forward(&x_pass)?;
                let k = change.len();
                let (y_change, logdet) = match kind {
                    CouplingKind::Additive => {
                        let y = match dir {
                            Direction::Generate => x_change.add(&h)?,
                            Direction::Invert => x_change.sub(&h)?,
                        };
                        (y, None)
                    }
                    CouplingKind::Affine => {
                        let s = h.slice_cols(0, k)?.scale(1.0 / clamp)?.tanh()?.scale(*clamp)?;
                        let t = h.slice_cols(k, 2 * k)?;
                        match dir {
                            Direction::Generate => {
                                let y = x_change.mul(&s.exp()?)?.add(&t)?;
                                (y, Some(s.sum_axis(1)?))
                            }
                            Direction::Invert => {
                                let y = x_change.sub(&t)?.mul(&s.neg()?.exp()?)?;
                                (y, Some(s.sum_axis(1)?.neg()?))
                            }
                        }
                    }
                };
                let y = x_pass
                    .scatter_cols(Rc::clone(pass), *dim)?
                    .add(&y_change.scatter_cols(Rc::clone(change), *dim)?)?;
                Ok((y, logdet))
            }
        }
    }
}
