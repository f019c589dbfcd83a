//! Classifier-based sample scores and the surrogate classifier behind them.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::nn::{Activation, Mlp, Parameterized};
use crate::rng::{self, Stream};
use crate::tensor::{Tape, Tensor, Var};
use crate::training::{adam_step, AdamConfig, AdamState};

const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Held-out accuracy the trained classifier must reach.
    pub min_accuracy: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![64, 64],
            steps: 2000,
            batch_size: 128,
            lr: 3e-3,
            min_accuracy: 0.95,
        }
    }
}

/// Dense softmax classifier `x -> p(y | x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    net: Mlp,
}

fn log_softmax(logits: &Var) -> Result<Var> {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let max: Vec<f64> = logits
        .value()
        .data()
        .chunks_exact(k)
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let m = logits.tape().constant(Tensor::vector(max)).broadcast_cols(k)?;
    let shifted = logits.sub(&m)?;
    let lse = shifted.exp()?.sum_axis(1)?.log()?.broadcast_cols(k)?;
    debug_assert_eq!(lse.shape(), [n, k]);
    shifted.sub(&lse)
}

impl Classifier {
    pub fn num_classes(&self) -> usize {
        self.net.output_width()
    }

    pub fn dim(&self) -> usize {
        self.net.input_width()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// `[n, K]` class probabilities; each row sums to 1.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.cols() != self.dim() {
            return Err(Error::shape(
                "classifier",
                format!("expected [n, {}], got {:?}", self.dim(), x.shape()),
            ));
        }
        let tape = Tape::new();
        let logits = self.net.bind(&tape, false).forward(&tape.constant(x.clone()))?;
        let k = self.num_classes();
        let mut p = log_softmax(&logits)?.value().map(f64::exp);
        for row in p.data_mut().chunks_exact_mut(k) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        Ok(p)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok(p.data()
            .chunks_exact(self.num_classes())
            .map(|r| (0..r.len()).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap())
            .collect())
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        if pred.len() != labels.len() {
            return Err(Error::shape("accuracy", "label count differs from rows"));
        }
        Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64)
    }
}

/// Fits a classifier with Adam on mini-batches of cross-entropy. Fails with
/// a configuration error when the held-out accuracy stays below the target.
pub fn fit_classifier(
    x: &Tensor,
    labels: &[usize],
    num_classes: usize,
    held_out: (&Tensor, &[usize]),
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<Classifier> {
    if x.rows() != labels.len() || x.rows() == 0 {
        return Err(Error::InvalidArgument("classifier needs one label per row".into()));
    }
    if num_classes < 2 || labels.iter().any(|&y| y >= num_classes) {
        return Err(Error::InvalidArgument(format!("labels must lie in 0..{num_classes}")));
    }
    let mut rng = rng::stream(seed, Stream::Classifier);
    let mut widths = vec![x.cols()];
    widths.extend_from_slice(&cfg.hidden);
    widths.push(num_classes);
    let mut net = Mlp::new(&widths, Activation::Relu, false, &mut rng)?;
    let mut state = AdamState::new(&net.parameters());
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::likelihood_default()
    };
    for _ in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..x.rows())).collect();
        let mut onehot = vec![0.0; cfg.batch_size * num_classes];
        for (r, &i) in idx.iter().enumerate() {
            onehot[r * num_classes + labels[i]] = 1.0;
        }
        let tape = Tape::new();
        let bound = net.bind(&tape, true);
        let logits = bound.forward(&tape.constant(x.select_rows(&idx)))?;
        let target = tape.constant(Tensor::from_parts(vec![cfg.batch_size, num_classes], onehot));
        let loss = log_softmax(&logits)?
            .mul(&target)?
            .sum()?
            .scale(-1.0 / cfg.batch_size as f64)?;
        let params = bound.params();
        let grads: Vec<Tensor> = tape
            .grad(&loss, &params.iter().collect::<Vec<_>>())?
            .into_iter()
            .map(|g| g.value().clone())
            .collect();
        adam_step(net.parameters_mut(), &grads, &mut state, &adam)?;
    }
    let clf = Classifier { net };
    let acc = clf.accuracy(held_out.0, held_out.1)?;
    if acc < cfg.min_accuracy {
        return Err(Error::Setup(format!(
            "surrogate classifier reached {acc:.4} held-out accuracy, below the required {}",
            cfg.min_accuracy
        )));
    }
    Ok(clf)
}

/// Trains on the training split and checks accuracy on the validation split.
pub fn train_surrogate_classifier(data: &Dataset, cfg: &ClassifierConfig, seed: u64) -> Result<Classifier> {
    let (k, train_y, val_y) = match (data.num_classes, &data.train.labels, &data.val.labels) {
        (Some(k), Some(a), Some(b)) => (k, a, b),
        _ => return Err(Error::Setup("surrogate classifier needs a labeled dataset".into())),
    };
    fit_classifier(&data.train.x, train_y, k, (&data.val.x, val_y), cfg, seed)
}

fn check_probs(probs: &Tensor) -> Result<usize> {
    if probs.rank() != 2 || probs.rows() == 0 {
        return Err(Error::InvalidArgument(
            "scores need a nonempty [n, K] probability table".into(),
        ));
    }
    Ok(probs.cols())
}

fn marginal(probs: &Tensor, k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k];
    for row in probs.data().chunks_exact(k) {
        m.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    let n = probs.rows() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * (a.max(PROB_FLOOR).ln() - b.max(PROB_FLOOR).ln()))
        .sum()
}

fn mean_kl_to(probs: &Tensor, k: usize, q: &[f64]) -> f64 {
    probs.data().chunks_exact(k).map(|r| kl(r, q)).sum::<f64>() / probs.rows() as f64
}

/// `exp(E_x KL(p(y|x) || p(y)))` with `p(y)` the mean conditional.
pub fn inception_score_from_probs(probs: &Tensor) -> Result<f64> {
    let k = check_probs(probs)?;
    let m = marginal(probs, k);
    Ok(mean_kl_to(probs, k, &m).exp())
}

/// `exp(E_x KL(p(y|x) || p*(y)) − KL(p*(y) || p(y)))`.
pub fn mode_score_from_probs(probs: &Tensor, p_star: &[f64]) -> Result<f64> {
    let k = check_probs(probs)?;
    if p_star.len() != k || p_star.iter().any(|&p| !(p >= 0.0)) || (p_star.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "p* must be a distribution over {k} labels"
        )));
    }
    let m = marginal(probs, k);
    Ok((mean_kl_to(probs, k, p_star) - kl(p_star, &m)).exp())
}

pub fn inception_score(classifier: &Classifier, samples: &Tensor) -> Result<f64> {
    inception_score_from_probs(&classifier.predict_proba(samples)?)
}

pub fn mode_score(classifier: &Classifier, samples: &Tensor, p_star: &[f64]) -> Result<f64> {
    mode_score_from_probs(&classifier.predict_proba(samples)?, p_star)
}
