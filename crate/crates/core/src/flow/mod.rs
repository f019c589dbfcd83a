//! Invertible generators built from coupling and scaling layers.
//!
//! The generative map `G: z -> x` runs the layers in order; the inverse
//! `f = G⁻¹` runs them backwards. Both directions report the log-absolute
//! Jacobian determinant, which turns the prior density into the exact model
//! density `log p(x) = log p(f(x)) + log|det ∂f/∂x|`.

mod layers;
mod prior;

pub use layers::{CouplingKind, CouplingLayer, Layer, ScaleLayer};
pub use prior::{prior_logpdf, Prior, PriorKind};

use layers::{BoundLayer, Direction};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, Parameterized};
use crate::rng::{self, Rng, Stream};
use crate::tensor::{Tape, Tensor, Var};

/// Rows processed per tape when evaluating large batches.
const EVAL_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskScheme {
    /// First half / second half, swapped every layer.
    AlternatingHalves,
    /// Even / odd coordinates, swapped every layer.
    AlternatingParity,
}

impl MaskScheme {
    pub fn name(self) -> &'static str {
        match self {
            MaskScheme::AlternatingHalves => "halves",
            MaskScheme::AlternatingParity => "parity",
        }
    }

    /// Identity-passed coordinates of layer `layer` in a `dim`-wide flow.
    pub fn mask(self, dim: usize, layer: usize) -> Vec<bool> {
        let flip = layer % 2 == 1;
        (0..dim)
            .map(|i| {
                let first = match self {
                    MaskScheme::AlternatingHalves => i < dim / 2,
                    MaskScheme::AlternatingParity => i % 2 == 0,
                };
                first != flip
            })
            .collect()
    }
}

impl std::str::FromStr for MaskScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "halves" => Ok(MaskScheme::AlternatingHalves),
            "parity" => Ok(MaskScheme::AlternatingParity),
            other => Err(Error::InvalidArgument(format!("unknown mask scheme {other:?}"))),
        }
    }
}

/// Architecture of a flow built by [`build_flow`].
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub dim: usize,
    pub n_layers: usize,
    pub kind: CouplingKind,
    /// Hidden widths of each conditioner network.
    pub conditioner_widths: Vec<usize>,
    pub mask_scheme: MaskScheme,
    pub prior: PriorKind,
    pub log_scale_clamp: f64,
    /// Append a diagonal scaling layer after the couplings.
    pub scale_layer: bool,
}

impl FlowSpec {
    pub fn new(dim: usize, n_layers: usize, kind: CouplingKind, prior: PriorKind) -> Self {
        FlowSpec {
            dim,
            n_layers,
            kind,
            conditioner_widths: vec![64, 64],
            mask_scheme: MaskScheme::AlternatingHalves,
            prior,
            log_scale_clamp: 5.0,
            scale_layer: true,
        }
    }
}

/// Builds a flow whose initial map is the identity: every conditioner's
/// output layer and the scaling layer start at zero.
pub fn build_flow(spec: &FlowSpec, seed: u64) -> Result<FlowModel> {
    if spec.dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "coupling masks need dim >= 2, got {}",
            spec.dim
        )));
    }
    if spec.n_layers == 0 {
        return Err(Error::InvalidArgument(
            "a flow needs at least one coupling layer".into(),
        ));
    }
    let mut rng = rng::stream(seed, Stream::Init);
    let mut layers = Vec::with_capacity(spec.n_layers + 1);
    for l in 0..spec.n_layers {
        let mask = spec.mask_scheme.mask(spec.dim, l);
        let n_pass = mask.iter().filter(|&&m| m).count();
        let n_change = spec.dim - n_pass;
        let out = match spec.kind {
            CouplingKind::Additive => n_change,
            CouplingKind::Affine => 2 * n_change,
        };
        let mut widths = vec![n_pass];
        widths.extend_from_slice(&spec.conditioner_widths);
        widths.push(out);
        let net = Mlp::new(&widths, Activation::Tanh, true, &mut rng)?;
        layers.push(Layer::Coupling(CouplingLayer::new(
            spec.kind,
            mask,
            net,
            spec.log_scale_clamp,
        )?));
    }
    if spec.scale_layer {
        layers.push(Layer::Scale(ScaleLayer::identity(spec.dim)));
    }
    FlowModel::new(layers, Prior::new(spec.prior, spec.dim))
}

/// Ordered invertible layers on top of a prior.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    layers: Vec<Layer>,
    prior: Prior,
}

impl FlowModel {
    pub fn new(layers: Vec<Layer>, prior: Prior) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a flow needs at least one layer".into()));
        }
        if let Some((i, l)) = layers.iter().enumerate().find(|(_, l)| l.dim() != prior.dim) {
            return Err(Error::shape(
                "flow",
                format!("layer {i} has width {}, prior has {}", l.dim(), prior.dim),
            ));
        }
        Ok(FlowModel { layers, prior })
    }

    /// A single zero scaling layer: `G` is the identity.
    pub fn identity(dim: usize, prior: PriorKind) -> Self {
        FlowModel {
            layers: vec![Layer::Scale(ScaleLayer::identity(dim))],
            prior: Prior::new(prior, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.prior.dim
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundFlow {
        BoundFlow {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
            prior: self.prior,
        }
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.dim() {
            return Err(Error::shape(
                "flow",
                format!("expected [n, {}], got {:?}", self.dim(), x.shape()),
            ));
        }
        if !x.is_finite() {
            return Err(Error::InvalidArgument("flow input contains non-finite values".into()));
        }
        Ok(())
    }

    fn eval_chunked<F>(&self, x: &Tensor, f: F) -> Result<(Tensor, Tensor)>
    where
        F: Fn(&BoundFlow, &Var) -> Result<(Var, Var)>,
    {
        self.check_batch(x)?;
        let n = x.rows();
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        let mut logdet = Vec::with_capacity(n);
        for start in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let tape = Tape::new();
            let bound = self.bind(&tape, false);
            let (y, ld) = f(&bound, &tape.constant(x.select_rows(&idx)))?;
            out.extend_from_slice(y.value().data());
            logdet.extend_from_slice(ld.value().data());
        }
        Ok((Tensor::from_parts(vec![n, d], out), Tensor::vector(logdet)))
    }

    /// `x = G(z)` together with `log|det ∂G/∂z|` per row.
    pub fn generate(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        self.eval_chunked(z, |b, z| b.generate(z))
    }

    /// `z = f(x)` together with `log|det ∂f/∂x|` per row.
    pub fn invert(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.eval_chunked(x, |b, x| b.invert(x))
    }

    /// Exact log density of each row of `x`, in nats.
    pub fn log_likelihood(&self, x: &Tensor) -> Result<Tensor> {
        let (z, logdet) = self.invert(x)?;
        let prior = self.prior.log_density(&z)?;
        let out: Vec<f64> = prior.data().iter().zip(logdet.data()).map(|(a, b)| a + b).collect();
        let out = Tensor::vector(out);
        if !out.is_finite() {
            return Err(Error::NonFinite { op: "log_likelihood" });
        }
        Ok(out)
    }

    /// Ancestral samples `G(z)`, `z ~ p(z)`.
    pub fn sample_with(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        let z = self.prior.sample(n, rng);
        Ok(self.generate(&z)?.0)
    }

    /// Deterministic per `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Tensor> {
        self.sample_with(n, &mut rng::stream(seed, Stream::Prior))
    }
}

impl Parameterized for FlowModel {
    fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Coupling(c) => c.conditioner().parameters(),
                Layer::Scale(s) => vec![&s.log_diag],
            })
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Coupling(c) => c.conditioner_mut().parameters_mut(),
                Layer::Scale(s) => vec![&mut s.log_diag],
            })
            .collect()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| match l {
                Layer::Coupling(c) => c
                    .conditioner()
                    .parameter_names()
                    .into_iter()
                    .map(|n| format!("layer{i}.{n}"))
                    .collect(),
                Layer::Scale(_) => vec![format!("layer{i}.log_diag")],
            })
            .collect()
    }
}

/// A [`FlowModel`] placed on a tape.
pub struct BoundFlow {
    layers: Vec<BoundLayer>,
    prior: Prior,
}

impl BoundFlow {
    /// Parameter handles in [`Parameterized`] order.
    pub fn params(&self) -> Vec<Var> {
        self.layers.iter().flat_map(BoundLayer::params).collect()
    }

    fn run<'a>(
        &self,
        x: &Var,
        order: impl Iterator<Item = (usize, &'a BoundLayer)>,
        invert: bool,
    ) -> Result<(Var, Var)> {
        let n = x.shape()[0];
        let mut h = x.clone();
        let mut logdet: Option<Var> = None;
        for (i, layer) in order {
            let dir = if invert { Direction::Invert } else { Direction::Generate };
            let (y, ld) = layer.apply(&h, dir).map_err(|e| Error::LayerDiverged {
                layer: i,
                source: Box::new(e),
            })?;
            h = y;
            if let Some(ld) = ld {
                logdet = Some(match logdet {
                    Some(acc) => acc.add(&ld)?,
                    None => ld,
                });
            }
        }
        let logdet = logdet.unwrap_or_else(|| x.tape().constant(Tensor::zeros(&[n])));
        Ok((h, logdet))
    }

    pub fn generate(&self, z: &Var) -> Result<(Var, Var)> {
        self.run(z, self.layers.iter().enumerate(), false)
    }

    pub fn invert(&self, x: &Var) -> Result<(Var, Var)> {
        self.run(x, self.layers.iter().enumerate().rev(), true)
    }

    /// Per-row `log p(x)`, differentiable with respect to the parameters.
    pub fn log_likelihood(&self, x: &Var) -> Result<Var> {
        let (z, logdet) = self.invert(x)?;
        self.prior.log_density_var(&z)?.add(&logdet)
    }
}
