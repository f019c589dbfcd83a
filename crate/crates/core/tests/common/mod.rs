#![allow(dead_code)]

use flowgan_core::rng::{self, Rng, Stream};
use flowgan_core::tensor::finite_diff_gradient;
use flowgan_core::{Result, Tape, Tensor, Var};
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-5;

/// `|a - b| <= tol * max(|a|, |b|, 1e-3)`: relative, with an absolute floor
/// of `tol * 1e-3` for entries that are essentially zero.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-3)
}

pub fn assert_rel_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!(rel_close(*g, *w, tol), "{what}[{i}]: autodiff {g} vs oracle {w}");
    }
}

pub fn rng(seed: u64) -> Rng {
    rng::stream(seed, Stream::Synthetic)
}

/// Uniform values in `[-2, -0.1] ∪ [0.1, 2]`: away from the kinks of relu,
/// clamp and row norms.
pub fn signed(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..2.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn positive(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap()
}

/// Reduces any output to a scalar with fixed pseudo-random weights so that
/// every output element influences the gradient differently.
fn weighted_sum(out: &Var, tape: &Tape) -> Result<Var> {
    if out.shape().is_empty() {
        return Ok(out.clone());
    }
    let mut r = rng::stream(99, Stream::Eval);
    let w = signed(&mut r, out.shape());
    out.mul(&tape.constant(w))?.sum()
}

fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    Ok(weighted_sum(&f(&vars)?, &tape)?.item())
}

/// Compares the taped gradient of `f` with respect to each input against
/// central differences.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, tol: f64, what: &str)
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = weighted_sum(&f(&vars).unwrap(), &tape).unwrap();
    let refs: Vec<&Var> = vars.iter().collect();
    let grads = tape.grad(&out, &refs).unwrap();
    for (k, input) in inputs.iter().enumerate() {
        let fd = finite_diff_gradient(
            |theta| {
                let mut moved = inputs.to_vec();
                moved[k] = Tensor::new(input.shape().to_vec(), theta.to_vec())?;
                evaluate(&moved, &f)
            },
            input.data(),
            FD_STEP,
        )
        .unwrap();
        assert_rel_close(grads[k].value().data(), &fd, tol, &format!("{what} input {k}"));
    }
}

/// `log |det A|` of a row-major `n x n` matrix by LU with partial pivoting.
pub fn log_abs_det(mut a: Vec<f64>, n: usize) -> f64 {
    let mut acc = 0.0;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))
            .unwrap();
        if p != k {
            for c in 0..n {
                a.swap(k * n + c, p * n + c);
            }
        }
        let pivot = a[k * n + k];
        acc += pivot.abs().ln();
        for i in k + 1..n {
            let f = a[i * n + k] / pivot;
            for c in k..n {
                a[i * n + c] -= f * a[k * n + c];
            }
        }
    }
    acc
}

/// Central-difference Jacobian `J[i][j] = ∂f_i/∂x_j`, row-major.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let m = f(x).len();
    let mut jac = vec![0.0; m * n];
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        let plus = f(&xp);
        xp[j] = x[j] - h;
        let minus = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[i * n + j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// A flow from `spec` with every parameter redrawn from `N(0, scale^2)`, so
/// that no layer is the identity.
pub fn random_flow(spec: &flowgan_core::flow::FlowSpec, seed: u64, scale: f64) -> flowgan_core::FlowModel {
    use flowgan_core::Parameterized;
    let mut model = flowgan_core::flow::build_flow(spec, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let p: Vec<f64> = (0..model.num_parameters())
        .map(|_| scale * r.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    model.set_flat_parameters(&p).unwrap();
    model
}

pub fn gaussian(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect(),
    )
    .unwrap()
}
