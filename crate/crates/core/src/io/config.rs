//! Flat `key = value` experiment files.
//!
//! Blank lines and text after `#` are ignored. Every key must be known;
//! missing keys keep the defaults listed in [`ExperimentConfig::default`].
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adversarial::{DivergenceKind, DivergenceSpec};
use crate::error::{Error, Result};
use crate::evaluation::{bandwidth_grid, AisConfig};
use crate::flow::{CouplingKind, FlowSpec, MaskScheme, PriorKind};
use crate::io::dataset::{make_synthetic, Dataset};
use crate::io::idx::{idx_dataset, load_idx};
use crate::nn::Activation;
use crate::training::{AdamConfig, Objective, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub objective: String,
    pub lambda: f64,
    pub divergence: DivergenceKind,
    pub penalty_coeff: f64,
    pub n_critic: usize,
    /// Generator learning rate; `None` uses the objective's default.
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_eps: f64,
    pub critic_lr: f64,
    pub critic_beta1: f64,
    pub critic_beta2: f64,
    pub batch_size: usize,
    pub n_iters: usize,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub seed: u64,

    pub dataset: String,
    pub n_samples: usize,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    pub pool14: bool,

    pub n_layers: usize,
    pub coupling: CouplingKind,
    pub conditioner_width: usize,
    pub conditioner_depth: usize,
    pub mask: MaskScheme,
    pub prior: PriorKind,
    pub log_scale_clamp: f64,
    pub scale_layer: bool,

    pub critic_width: usize,
    pub critic_depth: usize,
    pub critic_activation: Activation,

    pub train_eval_size: usize,
    pub score_samples: usize,
    pub classifier: bool,
    pub classifier_steps: usize,

    pub gmm_grid_size: usize,
    pub gmm_sigma_min: f64,
    pub gmm_sigma_max: f64,
    pub kde_samples: usize,
    pub ais_chains: usize,
    pub ais_temperatures: usize,
    pub ais_sweeps: usize,
    pub ais_step: f64,
    pub ais_fixed_step: bool,
    pub ais_sigma_obs: f64,
    pub ais_points: usize,
    pub spectral_nz: usize,
    pub sample_n: usize,

    pub out_dir: PathBuf,
    /// Checkpoint read by the evaluation subcommands.
    pub checkpoint: Option<PathBuf>,
    pub log_wallclock: bool,

    /// The file contents, echoed into checkpoints.
    pub text: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ais = AisConfig::default();
        ExperimentConfig {
            objective: "mle".into(),
            lambda: 1.0,
            divergence: DivergenceKind::Wgan,
            penalty_coeff: 10.0,
            n_critic: 5,
            lr: None,
            beta1: None,
            beta2: None,
            adam_eps: 1e-8,
            critic_lr: 1e-4,
            critic_beta1: 0.5,
            critic_beta2: 0.9,
            batch_size: 128,
            n_iters: 2000,
            eval_every: 500,
            checkpoint_every: 500,
            seed: 0,
            dataset: "ring8".into(),
            n_samples: 10_000,
            idx_images: None,
            idx_labels: None,
            pool14: false,
            n_layers: 4,
            coupling: CouplingKind::Affine,
            conditioner_width: 64,
            conditioner_depth: 2,
            mask: MaskScheme::AlternatingHalves,
            prior: PriorKind::IsotropicGaussian,
            log_scale_clamp: 5.0,
            scale_layer: true,
            critic_width: 64,
            critic_depth: 2,
            critic_activation: Activation::Relu,
            train_eval_size: 1000,
            score_samples: 1000,
            classifier: true,
            classifier_steps: 2000,
            gmm_grid_size: 40,
            gmm_sigma_min: 0.005,
            gmm_sigma_max: 1.0,
            kde_samples: 10_000,
            ais_chains: ais.n_chains,
            ais_temperatures: ais.n_temperatures,
            ais_sweeps: ais.sweeps,
            ais_step: ais.step_size,
            ais_fixed_step: ais.fixed_step,
            ais_sigma_obs: ais.sigma_obs,
            ais_points: 20,
            spectral_nz: 64,
            sample_n: 1000,
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            log_wallclock: false,
            text: String::new(),
        }
    }
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse {v:?}"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn positive<T: PartialOrd + Default + Copy + std::fmt::Display>(v: T) -> std::result::Result<T, String> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

fn probability_below_one(v: f64) -> std::result::Result<f64, String> {
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must lie in [0, 1), got {v}"))
    }
}

fn via<T: FromStr<Err = Error>>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|e| e.to_string())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_str(&text, base, &path.display().to_string())
    }

    /// Parses `text`; `base` anchors relative paths and `label` names the
    /// source in error messages.
    pub fn parse_str(text: &str, base: &Path, label: &str) -> Result<Self> {
        let mut c = ExperimentConfig {
            text: text.to_owned(),
            ..Self::default()
        };
        let mut checkpoint_every_set = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config {
                path: label.to_owned(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            if key == "checkpoint_every" {
                checkpoint_every_set = true;
            }
            c.set(key, value, base).map_err(|m| err(format!("{key}: {m}")))?;
        }
        if !checkpoint_every_set {
            c.checkpoint_every = c.eval_every;
        }
        c.validate().map_err(|e| Error::Config {
            path: label.to_owned(),
            line: 0,
            message: e.to_string(),
        })?;
        Ok(c)
    }

    fn set(&mut self, key: &str, v: &str, base: &Path) -> std::result::Result<(), String> {
        let path = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        match key {
            "objective" => {
                if !["mle", "adv", "hybrid"].contains(&v) {
                    return Err(format!("expected mle, adv or hybrid, got {v:?}"));
                }
                self.objective = v.to_owned();
            }
            "lambda" => {
                let l: f64 = parse(v)?;
                if !(l >= 0.0) || !l.is_finite() {
                    return Err(format!("must be >= 0, got {l}"));
                }
                self.lambda = l;
            }
            "divergence" => self.divergence = via(v)?,
            "penalty_coeff" => {
                let p: f64 = parse(v)?;
                if !(p >= 0.0) {
                    return Err(format!("must be >= 0, got {p}"));
                }
                self.penalty_coeff = p;
            }
            "n_critic" => self.n_critic = positive(parse(v)?)?,
            "lr" => self.lr = Some(positive(parse(v)?)?),
            "beta1" => self.beta1 = Some(probability_below_one(parse(v)?)?),
            "beta2" => self.beta2 = Some(probability_below_one(parse(v)?)?),
            "adam_eps" => self.adam_eps = positive(parse(v)?)?,
            "critic_lr" => self.critic_lr = positive(parse(v)?)?,
            "critic_beta1" => self.critic_beta1 = probability_below_one(parse(v)?)?,
            "critic_beta2" => self.critic_beta2 = probability_below_one(parse(v)?)?,
            "batch_size" => self.batch_size = positive(parse(v)?)?,
            "n_iters" => self.n_iters = parse(v)?,
            "eval_every" => self.eval_every = positive(parse(v)?)?,
            "checkpoint_every" => self.checkpoint_every = positive(parse(v)?)?,
            "seed" => self.seed = parse(v)?,
            "dataset" => {
                if !["ring8", "grid25", "two_moons", "idx"].contains(&v) {
                    return Err(format!("expected ring8, grid25, two_moons or idx, got {v:?}"));
                }
                self.dataset = v.to_owned();
            }
            "n_samples" => self.n_samples = positive(parse(v)?)?,
            "idx_images" => self.idx_images = Some(path(v)),
            "idx_labels" => self.idx_labels = Some(path(v)),
            "pool14" => self.pool14 = parse_bool(v)?,
            "n_layers" => self.n_layers = positive(parse(v)?)?,
            "coupling" => self.coupling = via(v)?,
            "conditioner_width" => self.conditioner_width = positive(parse(v)?)?,
            "conditioner_depth" => self.conditioner_depth = positive(parse(v)?)?,
            "mask" => self.mask = via(v)?,
            "prior" => self.prior = via(v)?,
            "log_scale_clamp" => self.log_scale_clamp = positive(parse(v)?)?,
            "scale_layer" => self.scale_layer = parse_bool(v)?,
            "critic_width" => self.critic_width = positive(parse(v)?)?,
            "critic_depth" => self.critic_depth = positive(parse(v)?)?,
            "critic_activation" => self.critic_activation = via(v)?,
            "train_eval_size" => self.train_eval_size = positive(parse(v)?)?,
            "score_samples" => self.score_samples = positive(parse(v)?)?,
            "classifier" => self.classifier = parse_bool(v)?,
            "classifier_steps" => self.classifier_steps = positive(parse(v)?)?,
            "gmm_grid_size" => self.gmm_grid_size = positive(parse(v)?)?,
            "gmm_sigma_min" => self.gmm_sigma_min = positive(parse(v)?)?,
            "gmm_sigma_max" => self.gmm_sigma_max = positive(parse(v)?)?,
            "kde_samples" => self.kde_samples = positive(parse(v)?)?,
            "ais_chains" => self.ais_chains = positive(parse(v)?)?,
            "ais_temperatures" => self.ais_temperatures = positive(parse(v)?)?,
            "ais_sweeps" => self.ais_sweeps = positive(parse(v)?)?,
            "ais_step" => self.ais_step = positive(parse(v)?)?,
            "ais_fixed_step" => self.ais_fixed_step = parse_bool(v)?,
            "ais_sigma_obs" => self.ais_sigma_obs = positive(parse(v)?)?,
            "ais_points" => self.ais_points = positive(parse(v)?)?,
            "spectral_nz" => self.spectral_nz = positive(parse(v)?)?,
            "sample_n" => self.sample_n = positive(parse(v)?)?,
            "out_dir" => self.out_dir = path(v),
            "checkpoint" => self.checkpoint = Some(path(v)),
            "log_wallclock" => self.log_wallclock = parse_bool(v)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.gmm_sigma_min >= self.gmm_sigma_max || self.gmm_sigma_max > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "bandwidth range ({}, {}] must lie inside (0, 1]",
                self.gmm_sigma_min, self.gmm_sigma_max
            )));
        }
        if self.dataset == "idx" && self.idx_images.is_none() {
            return Err(Error::InvalidArgument("dataset=idx needs idx_images".into()));
        }
        self.train_config()?.validate()?;
        self.ais_config().validate()
    }

    pub fn objective(&self) -> Result<Objective> {
        Objective::from_name(&self.objective, self.lambda)
    }

    pub fn flow_spec(&self, dim: usize) -> FlowSpec {
        FlowSpec {
            conditioner_widths: vec![self.conditioner_width; self.conditioner_depth],
            mask_scheme: self.mask,
            log_scale_clamp: self.log_scale_clamp,
            scale_layer: self.scale_layer,
            ..FlowSpec::new(dim, self.n_layers, self.coupling, self.prior)
        }
    }

    /// Training settings; the flow dimension is filled in from the data by
    /// [`ExperimentConfig::train_config_for`].
    pub fn train_config(&self) -> Result<TrainConfig> {
        self.train_config_for(2)
    }

    pub fn train_config_for(&self, dim: usize) -> Result<TrainConfig> {
        let objective = self.objective()?;
        let base = objective.default_adam();
        let mut t = TrainConfig::new(objective, self.flow_spec(dim));
        t.divergence = DivergenceSpec {
            kind: self.divergence,
            penalty_coeff: self.penalty_coeff,
            n_critic: self.n_critic,
        };
        t.generator_adam = AdamConfig {
            lr: self.lr.unwrap_or(base.lr),
            beta1: self.beta1.unwrap_or(base.beta1),
            beta2: self.beta2.unwrap_or(base.beta2),
            eps: self.adam_eps,
        };
        t.critic_adam = AdamConfig {
            lr: self.critic_lr,
            beta1: self.critic_beta1,
            beta2: self.critic_beta2,
            eps: self.adam_eps,
        };
        t.batch_size = self.batch_size;
        t.n_iters = self.n_iters;
        t.eval_every = self.eval_every;
        t.seed = self.seed;
        t.dataset = self.dataset.clone();
        t.critic_hidden = vec![self.critic_width; self.critic_depth];
        t.critic_activation = self.critic_activation;
        t.train_eval_size = self.train_eval_size;
        t.score_samples = self.score_samples;
        t.log_wallclock = self.log_wallclock;
        Ok(t)
    }

    pub fn ais_config(&self) -> AisConfig {
        AisConfig {
            n_chains: self.ais_chains,
            n_temperatures: self.ais_temperatures,
            sweeps: self.ais_sweeps,
            step_size: self.ais_step,
            fixed_step: self.ais_fixed_step,
            sigma_obs: self.ais_sigma_obs,
            ..AisConfig::default()
        }
    }

    pub fn bandwidth_grid(&self) -> Vec<f64> {
        bandwidth_grid(self.gmm_sigma_min, self.gmm_sigma_max, self.gmm_grid_size)
    }

    /// Loads or generates the configured dataset.
    pub fn dataset(&self) -> Result<Dataset> {
        match self.dataset.as_str() {
            "idx" => {
                let images = self.idx_images.as_deref().expect("validated");
                let data = load_idx(images, self.idx_labels.as_deref())?;
                let provenance = format!(
                    "idx:{}{}",
                    images.display(),
                    self.idx_labels
                        .as_ref()
                        .map(|p| format!(",{}", p.display()))
                        .unwrap_or_default()
                );
                idx_dataset(&data, self.seed, self.pool14, &provenance)
            }
            name => make_synthetic(name, self.n_samples, self.seed),
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("final.ckpt"))
    }
}
