use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// Rows of one split, with optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub x: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub num_classes: Option<usize>,
    /// Values came from discrete pixels and were dequantized.
    pub discrete: bool,
    /// Where the data came from: file paths or generator id and seed.
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        train: Split,
        val: Split,
        test: Split,
        num_classes: Option<usize>,
        discrete: bool,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let d = train.x.cols();
        for (label, s) in [("train", &train), ("val", &val), ("test", &test)] {
            if s.x.rank() != 2 || s.x.cols() != d {
                return Err(Error::shape(
                    "dataset",
                    format!("{label} split has shape {:?}, expected width {d}", s.x.shape()),
                ));
            }
            if let Some(l) = &s.labels {
                if l.len() != s.len() {
                    return Err(Error::shape("dataset", format!("{label} labels do not match rows")));
                }
                if let Some(k) = num_classes {
                    if l.iter().any(|&y| y >= k) {
                        return Err(Error::InvalidArgument(format!("{label} label outside 0..{k}")));
                    }
                }
            }
        }
        Ok(Dataset {
            name: name.into(),
            train,
            val,
            test,
            num_classes,
            discrete,
            provenance: provenance.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.train.x.cols()
    }

    /// Per-example correction, in nats, added to NLLs before converting to
    /// bits per dimension.
    pub fn scale_correction(&self) -> f64 {
        if self.discrete {
            self.dim() as f64 * 256f64.ln()
        } else {
            0.0
        }
    }

    /// Empirical label distribution of the training split.
    pub fn label_distribution(&self) -> Option<Vec<f64>> {
        let k = self.num_classes?;
        let labels = self.train.labels.as_ref()?;
        let mut p = vec![0.0; k];
        for &y in labels {
            p[y] += 1.0;
        }
        let n = labels.len() as f64;
        p.iter_mut().for_each(|v| *v /= n);
        Some(p)
    }
}

/// Shuffles rows with the split stream and cuts them 80/10/10.
pub fn split_rows(x: Tensor, labels: Option<Vec<usize>>, seed: u64) -> Result<(Split, Split, Split)> {
    let n = x.rows();
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 rows to split, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Split));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let part = |ids: &[usize]| Split {
        x: x.select_rows(ids),
        labels: labels.as_ref().map(|l| ids.iter().map(|&i| l[i]).collect()),
    };
    Ok((
        part(&idx[..n_train]),
        part(&idx[n_train..n_train + n_val]),
        part(&idx[n_train + n_val..]),
    ))
}

pub const RING_RADIUS: f64 = 2.0;
pub const RING_STD: f64 = 0.1;
pub const GRID_STD: f64 = 0.1;
pub const MOONS_NOISE: f64 = 0.1;

/// Centers of the 8-component ring.
pub fn ring8_centers() -> Vec<[f64; 2]> {
    (0..8)
        .map(|k| {
            let a = TAU * k as f64 / 8.0;
            [RING_RADIUS * a.cos(), RING_RADIUS * a.sin()]
        })
        .collect()
}

/// Centers of the 5x5 grid on {-4, -2, 0, 2, 4}^2.
pub fn grid25_centers() -> Vec<[f64; 2]> {
    (0..25)
        .map(|k| [-4.0 + 2.0 * (k / 5) as f64, -4.0 + 2.0 * (k % 5) as f64])
        .collect()
}

/// Seeded 2-D toy datasets: `ring8`, `grid25` and `two_moons`.
///
/// Component labels are assigned round-robin and then shuffled, so every
/// class holds `n / K` points (up to one).
pub fn make_synthetic(name: &str, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = rng::stream(seed, Stream::Synthetic);
    let (k, centers, std) = match name {
        "ring8" => (8, Some(ring8_centers()), RING_STD),
        "grid25" => (25, Some(grid25_centers()), GRID_STD),
        "two_moons" => (2, None, MOONS_NOISE),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown synthetic dataset {other:?} (expected ring8, grid25 or two_moons)"
            )))
        }
    };
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(2 * n);
    for &y in &labels {
        let base = match &centers {
            Some(c) => c[y],
            None => {
                let t = rng.random::<f64>() * PI;
                if y == 0 {
                    [t.cos(), t.sin()]
                } else {
                    [1.0 - t.cos(), 0.5 - t.sin()]
                }
            }
        };
        for b in base {
            let e: f64 = StandardNormal.sample(&mut rng);
            data.push(b + std * e);
        }
    }
    let x = Tensor::matrix(n.max(1), 2, data)?;
    let (train, val, test) = split_rows(x, Some(labels), seed)?;
    Dataset::new(
        name,
        train,
        val,
        test,
        Some(k),
        false,
        format!("synthetic:{name}:n={n}:seed={seed}"),
    )
}
