//! Forward evaluation of every primitive on plain tensors.

use super::tape::Primitive;
use super::Tensor;
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn rank2(op: &'static str, a: &Tensor) -> Result<(usize, usize)> {
    match a.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `op(a) · op(b)` where `op` optionally transposes.
pub(crate) fn matmul(a: &Tensor, b: &Tensor, lhs_t: bool, rhs_t: bool) -> Result<Tensor> {
    let (ar, ac) = rank2("matmul", a)?;
    let (br, bc) = rank2("matmul", b)?;
    let (m, k) = if lhs_t { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if rhs_t { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!(
                "inner extents differ: {:?}{} x {:?}{}",
                a.shape(),
                if lhs_t { "ᵀ" } else { "" },
                b.shape(),
                if rhs_t { "ᵀ" } else { "" }
            ),
        ));
    }
    let (rsa, csa) = if lhs_t { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if rhs_t { (1, bc as isize) } else { (bc as isize, 1) };
    let mut out = vec![0.0; m * n];
    // SAFETY: the strides above describe in-bounds views of `a` and `b`
    // with the logical shapes (m, k) and (k, n); `out` holds m * n values.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub(crate) fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = rank2("transpose", a)?;
    let src = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Ok(Tensor::from_parts(vec![c, r], out))
}

fn select_cols(op: &'static str, a: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (r, c) = rank2(op, a)?;
    if idx.is_empty() || idx.iter().any(|&j| j >= c) {
        return Err(Error::shape(
            op,
            format!("column indices {idx:?} out of range for {c} columns"),
        ));
    }
    let k = idx.len();
    let mut out = Vec::with_capacity(r * k);
    for row in a.data().chunks_exact(c) {
        out.extend(idx.iter().map(|&j| row[j]));
    }
    Ok(Tensor::from_parts(vec![r, k], out))
}

fn scatter_cols(a: &Tensor, idx: &[usize], width: usize) -> Result<Tensor> {
    let (r, k) = rank2("scatter_cols", a)?;
    if k != idx.len() || idx.iter().any(|&j| j >= width) {
        return Err(Error::shape(
            "scatter_cols",
            format!("{k} columns into indices {idx:?} of width {width}"),
        ));
    }
    let mut out = vec![0.0; r * width];
    for (src, dst) in a.data().chunks_exact(k).zip(out.chunks_exact_mut(width)) {
        for (&v, &j) in src.iter().zip(idx) {
            dst[j] += v;
        }
    }
    Ok(Tensor::from_parts(vec![r, width], out))
}

pub(crate) fn forward(prim: &Primitive, xs: &[&Tensor]) -> Result<Tensor> {
    use Primitive::*;
    let arity = match prim {
        Leaf => 0,
        Add | Sub | Mul | Div | MatMul { .. } | AddRow | ScaleRows => 2,
        Concat => xs.len().max(1),
        _ => 1,
    };
    if xs.len() != arity {
        return Err(Error::shape(
            prim.name(),
            format!("expected {arity} inputs, got {}", xs.len()),
        ));
    }
    let out = match prim {
        Leaf => return Err(Error::InvalidArgument("leaves are not computed".into())),
        Add => {
            same_shape("add", xs[0], xs[1])?;
            zip(xs[0], xs[1], |a, b| a + b)
        }
        Sub => {
            same_shape("sub", xs[0], xs[1])?;
            zip(xs[0], xs[1], |a, b| a - b)
        }
        Mul => {
            same_shape("mul", xs[0], xs[1])?;
            zip(xs[0], xs[1], |a, b| a * b)
        }
        Div => {
            same_shape("div", xs[0], xs[1])?;
            zip(xs[0], xs[1], |a, b| a / b)
        }
        MatMul { lhs_t, rhs_t } => matmul(xs[0], xs[1], *lhs_t, *rhs_t)?,
        Transpose => transpose(xs[0])?,
        Exp => xs[0].map(f64::exp),
        Log => {
            if let Some(v) = xs[0].data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(Error::domain("log", format!("non-positive input {v}")));
            }
            xs[0].map(f64::ln)
        }
        Tanh => xs[0].map(f64::tanh),
        Relu => xs[0].map(|v| v.max(0.0)),
        Sigmoid => xs[0].map(sigmoid),
        Softplus => xs[0].map(softplus),
        Neg => xs[0].map(|v| -v),
        Square => xs[0].map(|v| v * v),
        Sqrt => {
            if let Some(v) = xs[0].data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(Error::domain("sqrt", format!("non-positive input {v}")));
            }
            xs[0].map(f64::sqrt)
        }
        Sum => Tensor::scalar(xs[0].data().iter().sum()),
        Mean => Tensor::scalar(xs[0].data().iter().sum::<f64>() / xs[0].numel() as f64),
        SumAxis(axis) => {
            let (r, c) = rank2("sum_axis", xs[0])?;
            match axis {
                0 => {
                    let mut out = vec![0.0; c];
                    for row in xs[0].data().chunks_exact(c) {
                        for (o, v) in out.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    Tensor::from_parts(vec![c], out)
                }
                1 => Tensor::from_parts(
                    vec![r],
                    xs[0].data().chunks_exact(c).map(|row| row.iter().sum()).collect(),
                ),
                _ => return Err(Error::shape("sum_axis", format!("axis {axis} of a matrix"))),
            }
        }
        Broadcast(lead) => {
            if lead.contains(&0) {
                return Err(Error::shape("broadcast", "zero leading extent"));
            }
            let reps: usize = lead.iter().product();
            let mut shape = lead.clone();
            shape.extend_from_slice(xs[0].shape());
            let mut data = Vec::with_capacity(reps * xs[0].numel());
            for _ in 0..reps {
                data.extend_from_slice(xs[0].data());
            }
            Tensor::from_parts(shape, data)
        }
        Reshape(shape) => xs[0].reshaped(shape.clone())?,
        Slice { start, end } => {
            let idx: Vec<usize> = (*start..*end).collect();
            select_cols("slice", xs[0], &idx)?
        }
        SelectCols(idx) => select_cols("select_cols", xs[0], idx)?,
        ScatterCols { idx, width } => scatter_cols(xs[0], idx, *width)?,
        Concat => {
            let (r, _) = rank2("concat", xs[0])?;
            let mut widths = Vec::with_capacity(xs.len());
            for x in xs {
                let (xr, xc) = rank2("concat", x)?;
                if xr != r {
                    return Err(Error::shape("concat", format!("row counts {r} vs {xr}")));
                }
                widths.push(xc);
            }
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(r * total);
            for i in 0..r {
                for (x, &w) in xs.iter().zip(&widths) {
                    out.extend_from_slice(&x.data()[i * w..(i + 1) * w]);
                }
            }
            Tensor::from_parts(vec![r, total], out)
        }
        AddRow => {
            let (_, c) = rank2("add_row", xs[0])?;
            if xs[1].shape() != [c] {
                return Err(Error::shape(
                    "add_row",
                    format!("{:?} + {:?}", xs[0].shape(), xs[1].shape()),
                ));
            }
            let b = xs[1].data();
            let mut out = xs[0].data().to_vec();
            for row in out.chunks_exact_mut(c) {
                for (o, v) in row.iter_mut().zip(b) {
                    *o += v;
                }
            }
            Tensor::from_parts(xs[0].shape().to_vec(), out)
        }
        ScaleRows => {
            let (r, c) = rank2("scale_rows", xs[0])?;
            if xs[1].shape() != [r] {
                return Err(Error::shape(
                    "scale_rows",
                    format!("{:?} * {:?}", xs[0].shape(), xs[1].shape()),
                ));
            }
            let mut out = xs[0].data().to_vec();
            for (row, s) in out.chunks_exact_mut(c).zip(xs[1].data()) {
                for o in row {
                    *o *= s;
                }
            }
            Tensor::from_parts(xs[0].shape().to_vec(), out)
        }
        Scale(c) => xs[0].map(|v| v * c),
        Shift(c) => xs[0].map(|v| v + c),
        Clamp(lo, hi) => {
            if lo > hi {
                return Err(Error::InvalidArgument(format!("clamp bounds {lo} > {hi}")));
            }
            xs[0].map(|v| v.clamp(*lo, *hi))
        }
        RowNorm => {
            let (r, c) = rank2("row_norm", xs[0])?;
            let data = xs[0]
                .data()
                .chunks_exact(c)
                .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect();
            Tensor::from_parts(vec![r], data)
        }
        SafeRecip => xs[0].map(|v| if v == 0.0 { 0.0 } else { 1.0 / v }),
    };
    if !out.is_finite() {
        return Err(Error::NonFinite { op: prim.name() });
    }
    Ok(out)
}
