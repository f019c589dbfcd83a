//! Maximum likelihood, adversarial and hybrid training of flow models.

mod adam;
mod metrics;
mod objectives;

use std::time::Instant;

use rand::Rng as _;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use metrics::{MetricLog, MetricRow, METRIC_HEADER};
pub use objectives::{
    adversarial_generator_loss, critic_objective, dequantization_correction, dequantize_and_scale, dequantize_with,
    generator_objective, hybrid_loss, mle_loss, nats_to_bits_per_dim, HybridLosses, PIXEL_LEVELS,
};

use crate::adversarial::{Critic, DivergenceKind, DivergenceSpec};
use crate::error::{Error, Result};
use crate::evaluation::{inception_score_from_probs, mode_score_from_probs, Classifier};
use crate::flow::{build_flow, FlowModel, FlowSpec};
use crate::io::checkpoint::Checkpoint;
use crate::io::Dataset;
use crate::nn::{Activation, Parameterized};
use crate::rng::{self, Rng, RngState, Stream};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    Mle,
    Adv,
    Hybrid { lambda: f64 },
}

impl Objective {
    /// `name` is one of `mle`, `adv`, `hybrid`; `lambda` is used by `hybrid` only.
    pub fn from_name(name: &str, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        match name {
            "mle" => Ok(Objective::Mle),
            "adv" => Ok(Objective::Adv),
            "hybrid" => Ok(Objective::Hybrid { lambda }),
            other => Err(Error::InvalidArgument(format!(
                "unknown objective {other:?} (expected mle, adv or hybrid)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Mle => "mle",
            Objective::Adv => "adv",
            Objective::Hybrid { .. } => "hybrid",
        }
    }

    pub fn is_adversarial(self) -> bool {
        !matches!(self, Objective::Mle)
    }

    /// Weight of the likelihood term in the generator loss, if any.
    pub fn lambda(self) -> f64 {
        match self {
            Objective::Hybrid { lambda } => lambda,
            _ => 0.0,
        }
    }

    pub fn default_adam(self) -> AdamConfig {
        if self.is_adversarial() {
            AdamConfig::adversarial_default()
        } else {
            AdamConfig::likelihood_default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub divergence: DivergenceSpec,
    pub generator_adam: AdamConfig,
    pub critic_adam: AdamConfig,
    pub batch_size: usize,
    /// Generator updates to run.
    pub n_iters: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub dataset: String,
    pub flow: FlowSpec,
    pub critic_hidden: Vec<usize>,
    pub critic_activation: Activation,
    /// Size of the fixed training subsample whose NLL is logged.
    pub train_eval_size: usize,
    /// Generated samples used for the adversarial loss and the scores.
    pub score_samples: usize,
    /// Keep a copy of the model at every evaluation.
    pub keep_snapshots: bool,
    /// Record elapsed seconds; when off the column is 0 and logs are
    /// byte-stable across runs.
    pub log_wallclock: bool,
}

impl TrainConfig {
    pub fn new(objective: Objective, flow: FlowSpec) -> Self {
        TrainConfig {
            objective,
            divergence: DivergenceSpec::default(),
            generator_adam: objective.default_adam(),
            critic_adam: AdamConfig::adversarial_default(),
            batch_size: 128,
            n_iters: 2000,
            eval_every: 500,
            seed: 0,
            dataset: String::new(),
            flow,
            critic_hidden: vec![64, 64],
            critic_activation: Activation::Relu,
            train_eval_size: 1000,
            score_samples: 1000,
            keep_snapshots: false,
            log_wallclock: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.divergence.validate()?;
        self.generator_adam.validate()?;
        self.critic_adam.validate()?;
        Objective::from_name(self.objective.name(), self.objective.lambda())?;
        if self.batch_size == 0 || self.eval_every == 0 || self.train_eval_size == 0 || self.score_samples == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, eval_every, train_eval_size and score_samples must be positive".into(),
            ));
        }
        if self.n_iters > u32::MAX as usize {
            return Err(Error::InvalidArgument("n_iters too large".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Completed,
    Diverged { iteration: usize, reason: String },
}

/// Model state recorded at an evaluation.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub iteration: usize,
    pub model: FlowModel,
}

pub struct TrainOutcome {
    pub model: FlowModel,
    pub critic: Option<Critic>,
    pub log: MetricLog,
    pub snapshots: Vec<Snapshot>,
    pub status: RunStatus,
}

const RNG_DATA: &str = "data_order";
const RNG_PRIOR: &str = "prior";
const RNG_INTERP: &str = "interpolation";

/// Resumable training loop.
///
/// Each source of randomness has its own stream (mini-batch indices, prior
/// draws, interpolation weights); evaluation draws from a stream keyed by the
/// iteration, so logging never perturbs the training trajectory.
pub struct Trainer<'a> {
    config: TrainConfig,
    data: &'a Dataset,
    classifier: Option<&'a Classifier>,
    label_dist: Option<Vec<f64>>,
    train_eval: Tensor,
    model: FlowModel,
    critic: Option<Critic>,
    gen_state: AdamState,
    critic_state: Option<AdamState>,
    data_rng: Rng,
    prior_rng: Rng,
    interp_rng: Rng,
    iteration: usize,
    log: MetricLog,
    snapshots: Vec<Snapshot>,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a Dataset, classifier: Option<&'a Classifier>) -> Result<Self> {
        config.validate()?;
        if config.flow.dim != data.dim() {
            return Err(Error::Setup(format!(
                "flow dimension {} does not match data dimension {}",
                config.flow.dim,
                data.dim()
            )));
        }
        if data.train.is_empty() || data.val.is_empty() {
            return Err(Error::Setup("dataset needs nonempty train and val splits".into()));
        }
        let model = build_flow(&config.flow, config.seed)?;
        let critic = if config.objective.is_adversarial() {
            let mut r = rng::indexed_stream(config.seed, Stream::Init, 1);
            Some(Critic::new(
                data.dim(),
                &config.critic_hidden,
                config.critic_activation,
                &mut r,
            )?)
        } else {
            None
        };
        let gen_state = AdamState::new(&model.parameters());
        let critic_state = critic.as_ref().map(|c| AdamState::new(&c.parameters()));
        let n_sub = config.train_eval_size.min(data.train.len());
        let train_eval = data.train.x.select_rows(&(0..n_sub).collect::<Vec<_>>());
        let label_dist = match classifier {
            Some(c) => {
                let p = data
                    .label_distribution()
                    .ok_or_else(|| Error::Setup("sample scores need a labeled dataset".into()))?;
                if p.len() != c.num_classes() {
                    return Err(Error::Setup(format!(
                        "classifier has {} classes, dataset has {}",
                        c.num_classes(),
                        p.len()
                    )));
                }
                Some(p)
            }
            None => None,
        };
        Ok(Trainer {
            data_rng: rng::stream(config.seed, Stream::DataOrder),
            prior_rng: rng::stream(config.seed, Stream::Prior),
            interp_rng: rng::stream(config.seed, Stream::Interpolation),
            config,
            data,
            classifier,
            label_dist,
            train_eval,
            model,
            critic,
            gen_state,
            critic_state,
            iteration: 0,
            log: MetricLog::new(),
            snapshots: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Rebuilds a trainer from a checkpoint written by [`Trainer::checkpoint`]
    /// under the same configuration.
    pub fn resume(
        config: TrainConfig,
        data: &'a Dataset,
        classifier: Option<&'a Classifier>,
        ckpt: &Checkpoint,
    ) -> Result<Self> {
        let mut t = Trainer::new(config, data, classifier)?;
        ckpt.load_params("flow", &mut t.model)?;
        t.gen_state = load_adam(ckpt, "adam.flow", &t.model.parameters())?;
        if let Some(c) = t.critic.as_mut() {
            ckpt.load_params("critic", c)?;
            t.critic_state = Some(load_adam(ckpt, "adam.critic", &c.parameters())?);
        }
        let rng_of = |name: &str| {
            ckpt.rng(name)
                .map(RngState::restore)
                .ok_or_else(|| Error::Setup(format!("checkpoint has no {name} stream")))
        };
        t.data_rng = rng_of(RNG_DATA)?;
        t.prior_rng = rng_of(RNG_PRIOR)?;
        t.interp_rng = rng_of(RNG_INTERP)?;
        t.iteration = ckpt.iteration as usize;
        t.log = MetricLog::from_csv(&ckpt.log_csv)?;
        Ok(t)
    }

    /// Full training state; `config_text` is echoed into the file verbatim.
    pub fn checkpoint(&self, config_text: &str) -> Checkpoint {
        let mut c = Checkpoint {
            iteration: self.iteration as u64,
            config_text: config_text.to_owned(),
            log_csv: self.log.to_csv(),
            ..Checkpoint::default()
        };
        c.push_params("flow", &self.model);
        push_adam(&mut c, "adam.flow", &self.gen_state);
        if let (Some(critic), Some(st)) = (&self.critic, &self.critic_state) {
            c.push_params("critic", critic);
            push_adam(&mut c, "adam.critic", st);
        }
        c.rng_states = vec![
            (RNG_DATA.into(), RngState::capture(&self.data_rng)),
            (RNG_PRIOR.into(), RngState::capture(&self.prior_rng)),
            (RNG_INTERP.into(), RngState::capture(&self.interp_rng)),
        ];
        c
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn model(&self) -> &FlowModel {
        &self.model
    }

    pub fn critic(&self) -> Option<&Critic> {
        self.critic.as_ref()
    }

    pub fn log(&self) -> &MetricLog {
        &self.log
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    fn batch(&mut self) -> Tensor {
        let n = self.data.train.len();
        let idx: Vec<usize> = (0..self.config.batch_size)
            .map(|_| self.data_rng.random_range(0..n))
            .collect();
        self.data.train.x.select_rows(&idx)
    }

    fn critic_step(&mut self) -> Result<()> {
        let x_real = self.batch();
        let z = self.model.prior().sample(self.config.batch_size, &mut self.prior_rng);
        let x_fake = self.model.generate(&z)?.0;
        let critic = self.critic.as_mut().expect("adversarial objective has a critic");
        let tape = Tape::new();
        let bound = critic.bind(&tape, true);
        let loss = critic_objective(
            &bound,
            &self.config.divergence,
            &tape.constant(x_real),
            &tape.constant(x_fake),
            &mut self.interp_rng,
        )?;
        let grads = gradient_values(&tape, &loss, &bound.params())?;
        let st = self.critic_state.as_mut().expect("critic optimizer state");
        adam_step(critic.parameters_mut(), &grads, st, &self.config.critic_adam)
    }

    fn generator_step(&mut self) -> Result<f64> {
        let x_real = self.batch();
        let tape = Tape::new();
        let flow = self.model.bind(&tape, true);
        let loss = match (&self.critic, self.config.objective) {
            (None, _) => mle_loss(&flow, &tape.constant(x_real))?,
            (Some(critic), objective) => {
                let z = self.model.prior().sample(self.config.batch_size, &mut self.prior_rng);
                generator_objective(
                    &flow,
                    &critic.bind(&tape, false),
                    self.config.divergence.kind,
                    &tape.constant(x_real),
                    &tape.constant(z),
                    objective.lambda(),
                )?
            }
        };
        let grads = gradient_values(&tape, &loss, &flow.params())?;
        adam_step(
            self.model.parameters_mut(),
            &grads,
            &mut self.gen_state,
            &self.config.generator_adam,
        )?;
        Ok(loss.item())
    }

    /// One generator update, preceded by the critic updates for adversarial
    /// objectives. Returns the generator loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let it = self.iteration + 1;
        let wrap = |e: Error| Error::Divergence {
            iteration: it,
            reason: e.to_string(),
        };
        if self.critic.is_some() {
            for _ in 0..self.config.divergence.n_critic {
                self.critic_step().map_err(wrap)?;
            }
        }
        let loss = self.generator_step().map_err(wrap)?;
        self.iteration = it;
        Ok(loss)
    }

    fn nll(&self, x: &Tensor) -> Option<f64> {
        let ll = self.model.log_likelihood(x).ok()?;
        let mean = ll.data().iter().sum::<f64>() / ll.numel() as f64;
        mean.is_finite().then_some(-mean)
    }

    /// Computes the metrics for the current iteration and appends them to
    /// the log.
    pub fn evaluate(&mut self) -> Result<MetricRow> {
        let d = self.data.dim();
        let corr = self.data.scale_correction();
        let train_nll = self.nll(&self.train_eval);
        let val_nll = self.nll(&self.data.val.x);
        let bpd = |v: Option<f64>| v.map(|v| nats_to_bits_per_dim(v, d, corr));
        let needs_samples = self.critic.is_some() || self.classifier.is_some();
        let samples = if needs_samples {
            let mut r = rng::indexed_stream(self.config.seed, Stream::Eval, self.iteration as u32);
            self.model
                .sample_with(self.config.score_samples, &mut r)
                .ok()
                .filter(Tensor::is_finite)
        } else {
            None
        };
        let adv_loss = match (&self.critic, &samples) {
            (Some(c), Some(s)) => adversarial_estimate(c, self.config.divergence.kind, &self.data.val.x, s).ok(),
            _ => None,
        };
        let (mode, inception) = match (self.classifier, &samples, &self.label_dist) {
            (Some(c), Some(s), Some(p)) => {
                let probs = c.predict_proba(s)?;
                (
                    Some(mode_score_from_probs(&probs, p)?),
                    Some(inception_score_from_probs(&probs)?),
                )
            }
            _ => (None, None),
        };
        let row = MetricRow {
            iteration: self.iteration,
            train_nll,
            val_nll,
            train_bpd: bpd(train_nll),
            val_bpd: bpd(val_nll),
            adv_loss,
            mode_score: mode,
            inception_score: inception,
            wallclock_s: if self.config.log_wallclock {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        self.log.push(row.clone())?;
        if self.config.keep_snapshots {
            self.snapshots.push(Snapshot {
                iteration: self.iteration,
                model: self.model.clone(),
            });
        }
        Ok(row)
    }

    fn due(&self) -> bool {
        self.iteration % self.config.eval_every == 0 || self.iteration == self.config.n_iters
    }

    /// Trains until `stop` generator updates have been made (capped at
    /// `n_iters`), evaluating on schedule. A divergence halts the run,
    /// leaves the last good state in place and marks the log.
    pub fn run_until(&mut self, stop: usize) -> Result<RunStatus> {
        let stop = stop.min(self.config.n_iters);
        if self.iteration == 0 && self.log.is_empty() {
            if let Some(status) = self.evaluate_checked()? {
                return Ok(status);
            }
        }
        while self.iteration < stop {
            if let Err(e) = self.step() {
                let it = self.iteration + 1;
                self.log.push(diverged_row(it))?;
                return Ok(RunStatus::Diverged {
                    iteration: it,
                    reason: e.to_string(),
                });
            }
            if self.due() {
                if let Some(status) = self.evaluate_checked()? {
                    return Ok(status);
                }
            }
        }
        Ok(RunStatus::Completed)
    }

    fn evaluate_checked(&mut self) -> Result<Option<RunStatus>> {
        let row = self.evaluate()?;
        if row.val_nll.is_none() || row.train_nll.is_none() {
            return Ok(Some(RunStatus::Diverged {
                iteration: row.iteration,
                reason: "log-likelihood evaluation produced non-finite values".into(),
            }));
        }
        Ok(None)
    }

    pub fn run(&mut self) -> Result<RunStatus> {
        self.run_until(self.config.n_iters)
    }

    pub fn finish(self, status: RunStatus) -> TrainOutcome {
        TrainOutcome {
            model: self.model,
            critic: self.critic,
            log: self.log,
            snapshots: self.snapshots,
            status,
        }
    }
}

/// Runs a full training job from scratch.
pub fn train(config: TrainConfig, data: &Dataset, classifier: Option<&Classifier>) -> Result<TrainOutcome> {
    let mut t = Trainer::new(config, data, classifier)?;
    let status = t.run()?;
    Ok(t.finish(status))
}

fn diverged_row(iteration: usize) -> MetricRow {
    MetricRow {
        iteration,
        train_nll: None,
        val_nll: None,
        train_bpd: None,
        val_bpd: None,
        adv_loss: None,
        mode_score: None,
        inception_score: None,
        wallclock_s: 0.0,
    }
}

/// Critic-based divergence estimate between held-out data and samples,
/// without any penalty: `mean D(fake) − mean D(real)` for WGAN and the
/// critic objective for JSD.
fn adversarial_estimate(critic: &Critic, kind: DivergenceKind, real: &Tensor, fake: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let bound = critic.bind(&tape, false);
    let (r, f) = (tape.constant(real.clone()), tape.constant(fake.clone()));
    let v = match kind {
        DivergenceKind::Wgan => bound.value(&f)?.mean()?.sub(&bound.value(&r)?.mean()?)?,
        DivergenceKind::Jsd => crate::adversarial::jsd_losses(&bound, &r, &f)?.critic_objective,
    };
    Ok(v.item())
}

fn gradient_values(tape: &Tape, loss: &Var, params: &[Var]) -> Result<Vec<Tensor>> {
    let refs: Vec<&Var> = params.iter().collect();
    Ok(tape.grad(loss, &refs)?.into_iter().map(|g| g.value().clone()).collect())
}

fn push_adam(c: &mut Checkpoint, prefix: &str, st: &AdamState) {
    c.push_tensors(&format!("{prefix}.m"), &st.m);
    c.push_tensors(&format!("{prefix}.v"), &st.v);
    c.counters.push((format!("{prefix}.t"), st.t));
}

fn load_adam(c: &Checkpoint, prefix: &str, params: &[&Tensor]) -> Result<AdamState> {
    let shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
    Ok(AdamState {
        m: c.load_tensors(&format!("{prefix}.m"), &shapes)?,
        v: c.load_tensors(&format!("{prefix}.v"), &shapes)?,
        t: c.counter(&format!("{prefix}.t"))
            .ok_or_else(|| Error::Setup(format!("checkpoint has no {prefix}.t counter")))?,
    })
}
