//! Generator Jacobians and their singular value spectra.

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::rng::{self, Stream};
use crate::tensor::{Tape, Tensor};

const MAX_SWEEPS: usize = 100;
const OFF_TOL: f64 = 1e-12;

/// `dG/dz` at `z`, one row per output coordinate.
///
/// All `d` reverse passes are done at once: `z` is replicated into `d` rows,
/// and differentiating `sum_i G(Z)[i, i]` yields row `i` of the Jacobian in
/// row `i` of the input gradient, since rows never interact.
pub fn jacobian(model: &FlowModel, z: &[f64]) -> Result<Tensor> {
    let d = model.dim();
    if z.len() != d || z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "jacobian needs a finite point of length {d}"
        )));
    }
    let tape = Tape::new();
    let zs = tape.leaf(Tensor::from_parts(vec![d, d], z.repeat(d)), true);
    let (x, _) = model.bind(&tape, false).generate(&zs)?;
    let mut eye = vec![0.0; d * d];
    (0..d).for_each(|i| eye[i * d + i] = 1.0);
    let diag_sum = x.mul(&tape.constant(Tensor::from_parts(vec![d, d], eye)))?.sum()?;
    let j = tape.grad(&diag_sum, &[&zs])?.remove(0).value().clone();
    if !j.is_finite() {
        return Err(Error::NonFinite { op: "jacobian" });
    }
    Ok(j)
}

fn square(m: &Tensor) -> Result<usize> {
    match m.shape() {
        &[r, c] if r == c => {
            if !m.is_finite() {
                return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
            }
            Ok(r)
        }
        s => Err(Error::shape(
            "singular_values",
            format!("expected a square matrix, got {s:?}"),
        )),
    }
}

/// Singular values in descending order.
///
/// One-sided Jacobi: cyclic plane rotations of column pairs until all
/// columns are mutually orthogonal, which diagonalizes the Gram matrix
/// `A^T A` without forming it. Working on `A` directly keeps small singular
/// values accurate relative to their own size, which the log-spectrum needs.
pub fn singular_values(m: &Tensor) -> Result<Vec<f64>> {
    let n = square(m)?;
    // Column-major copy.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| m.data()[i * n + j]).collect()).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut off = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        off = 0.0;
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 {
                    continue;
                }
                let rel = gamma.abs() / (alpha * beta).sqrt();
                off = off.max(rel);
                if rel <= f64::EPSILON {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                for (a, b) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (x, y) = (*a, *b);
                    *a = c * x - s * y;
                    *b = s * x + c * y;
                }
            }
        }
        if !rotated {
            let mut sv: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            return Ok(sv);
        }
    }
    Err(Error::Numerical(format!(
        "one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps (largest relative column overlap {off:e})"
    )))
}

/// Eigenvalues of a symmetric matrix in descending order, by cyclic Jacobi
/// rotations until the off-diagonal Frobenius norm drops below 1e-12.
pub fn symmetric_eigenvalues(m: &Tensor) -> Result<Vec<f64>> {
    let n = square(m)?;
    let mut a = m.data().to_vec();
    let at = |i: usize, j: usize| i * n + j;
    for i in 0..n {
        for j in 0..i {
            if (a[at(i, j)] - a[at(j, i)]).abs() > 1e-12 * (a[at(i, j)].abs() + a[at(j, i)].abs()).max(1.0) {
                return Err(Error::InvalidArgument("matrix is not symmetric".into()));
            }
        }
    }
    let off_norm = |a: &[f64]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[at(i, j)] * a[at(i, j)];
                }
            }
        }
        s.sqrt()
    };
    let mut off = off_norm(&a);
    let mut sweeps = 0;
    while off >= OFF_TOL {
        if sweeps == MAX_SWEEPS {
            return Err(Error::Numerical(format!(
                "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps (off-diagonal norm {off:e})"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[at(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[at(q, q)] - a[at(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[at(k, p)], a[at(k, q)]);
                    a[at(k, p)] = c * akp - s * akq;
                    a[at(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[at(p, k)], a[at(q, k)]);
                    a[at(p, k)] = c * apk - s * aqk;
                    a[at(q, k)] = s * apk + c * aqk;
                }
            }
        }
        off = off_norm(&a);
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[at(i, i)]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

/// Singular values from the eigenvalues of the explicit Gram matrix. Loses
/// relative accuracy for singular values below `sqrt(eps) * max`; kept as a
/// cross-check for [`singular_values`].
pub fn gram_singular_values(m: &Tensor) -> Result<Vec<f64>> {
    let n = square(m)?;
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            g[i * n + j] = (0..n).map(|k| m.data()[k * n + i] * m.data()[k * n + j]).sum();
        }
    }
    Ok(symmetric_eigenvalues(&Tensor::from_parts(vec![n, n], g))?
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralReport {
    /// Latent points at which the Jacobian was taken, one per row.
    pub z: Tensor,
    /// Descending singular values for each latent point.
    pub singular_values: Vec<Vec<f64>>,
    /// `sum log sigma` for each latent point.
    pub log_determinants: Vec<f64>,
    /// The flow's own forward log-determinant at each latent point.
    pub flow_log_determinants: Vec<f64>,
    /// Pooled `(log sigma, fraction <= it)`, ascending, last fraction 1.
    pub cdf: Vec<(f64, f64)>,
    pub avg_logdet: f64,
}

impl SpectralReport {
    /// Nearest-rank quantile of the pooled log singular values.
    pub fn log_quantile(&self, q: f64) -> f64 {
        let n = self.cdf.len();
        let k = ((q * n as f64).ceil() as usize).clamp(1, n);
        self.cdf[k - 1].0
    }

    /// `p95 - p5` of the pooled log singular values.
    pub fn log_spread(&self) -> f64 {
        self.log_quantile(0.95) - self.log_quantile(0.05)
    }

    /// Largest disagreement between the spectral and the flow log-determinant.
    pub fn max_logdet_discrepancy(&self) -> f64 {
        self.log_determinants
            .iter()
            .zip(&self.flow_log_determinants)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Spectra at `n_z` prior draws taken from the prior stream of `seed`.
pub fn spectral_report(model: &FlowModel, n_z: usize, seed: u64) -> Result<SpectralReport> {
    if n_z == 0 {
        return Err(Error::InvalidArgument("spectral report needs n_z >= 1".into()));
    }
    let z = model.prior().sample(n_z, &mut rng::stream(seed, Stream::Prior));
    let (_, flow_ld) = model.generate(&z)?;
    let mut svs = Vec::with_capacity(n_z);
    let mut lds = Vec::with_capacity(n_z);
    for i in 0..n_z {
        let sv = singular_values(&jacobian(model, z.row(i))?)?;
        lds.push(sv.iter().map(|s| s.ln()).sum());
        svs.push(sv);
    }
    let mut pooled: Vec<f64> = svs.iter().flatten().map(|s| s.ln()).collect();
    pooled.sort_by(f64::total_cmp);
    let n = pooled.len();
    let cdf = pooled
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, (i + 1) as f64 / n as f64))
        .collect();
    let avg_logdet = lds.iter().sum::<f64>() / n_z as f64;
    Ok(SpectralReport {
        z,
        singular_values: svs,
        log_determinants: lds,
        flow_log_determinants: flow_ld.into_data(),
        cdf,
        avg_logdet,
    })
}
