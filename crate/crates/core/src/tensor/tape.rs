use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// The operations a [`Tape`] can record.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    /// `op(a) · op(b)` with optional transposition of either operand.
    MatMul {
        lhs_t: bool,
        rhs_t: bool,
    },
    Transpose,
    Exp,
    Log,
    Tanh,
    Relu,
    Sigmoid,
    Softplus,
    Neg,
    Square,
    Sqrt,
    /// Sum of all elements into a scalar.
    Sum,
    /// Mean of all elements into a scalar.
    Mean,
    /// Sum a matrix over axis 0 (giving columns) or axis 1 (giving rows).
    SumAxis(usize),
    /// Prepend leading dimensions by repetition: `s -> lead ++ s`.
    Broadcast(Vec<usize>),
    Reshape(Vec<usize>),
    /// Contiguous column range `start..end` of a matrix.
    Slice {
        start: usize,
        end: usize,
    },
    SelectCols(Rc<[usize]>),
    /// Places the columns of a `[n, k]` matrix at `idx` inside a zero `[n, width]` matrix.
    ScatterCols {
        idx: Rc<[usize]>,
        width: usize,
    },
    /// Column-wise concatenation of matrices with equal row counts.
    Concat,
    /// `[n, d] + [d]`, the bias add of a dense layer.
    AddRow,
    /// `[n, d] * [n]`, scaling each row by its own factor.
    ScaleRows,
    Scale(f64),
    Shift(f64),
    Clamp(f64, f64),
    /// Euclidean norm of each row: `[n, d] -> [n]`.
    RowNorm,
    /// `1/x`, defined as 0 at `x = 0`.
    SafeRecip,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        use Primitive::*;
        match self {
            Leaf => "leaf",
            Add => "add",
            Sub => "sub",
            Mul => "mul",
            Div => "div",
            MatMul { .. } => "matmul",
            Transpose => "transpose",
            Exp => "exp",
            Log => "log",
            Tanh => "tanh",
            Relu => "relu",
            Sigmoid => "sigmoid",
            Softplus => "softplus",
            Neg => "neg",
            Square => "square",
            Sqrt => "sqrt",
            Sum => "sum",
            Mean => "mean",
            SumAxis(_) => "sum_axis",
            Broadcast(_) => "broadcast",
            Reshape(_) => "reshape",
            Slice { .. } => "slice",
            SelectCols(_) => "select_cols",
            ScatterCols { .. } => "scatter_cols",
            Concat => "concat",
            AddRow => "add_row",
            ScaleRows => "scale_rows",
            Scale(_) => "scale",
            Shift(_) => "shift",
            Clamp(..) => "clamp",
            RowNorm => "row_norm",
            SafeRecip => "safe_recip",
        }
    }
}

struct Node {
    prim: Primitive,
    inputs: Vec<usize>,
    value: Rc<Tensor>,
    requires_grad: bool,
}

/// Append-only record of primitive applications.
///
/// Cloning a `Tape` yields another handle to the same record. A tape is
/// single-threaded; independent tapes may live on different threads.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

/// A value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
    value: Rc<Tensor>,
    requires_grad: bool,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, prim: Primitive, inputs: Vec<usize>, value: Tensor, requires_grad: bool) -> Var {
        let value = Rc::new(value);
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            prim,
            inputs,
            value: Rc::clone(&value),
            requires_grad,
        });
        Var {
            tape: self.clone(),
            id,
            value,
            requires_grad,
        }
    }

    /// Places a tensor on the tape. Gradients are tracked only for leaves
    /// created with `requires_grad = true`.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Primitive::Leaf, Vec::new(), value, requires_grad)
    }

    pub fn param(&self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Applies `prim` to `inputs`, recording the result.
    pub fn apply(&self, prim: Primitive, inputs: &[&Var]) -> Result<Var> {
        for v in inputs {
            if !Rc::ptr_eq(&v.tape.nodes, &self.nodes) {
                return Err(Error::InvalidArgument(format!(
                    "{} input lives on a different tape",
                    prim.name()
                )));
            }
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| v.value.as_ref()).collect();
        let out = kernels::forward(&prim, &values)?;
        let requires_grad = inputs.iter().any(|v| v.requires_grad);
        let ids = inputs.iter().map(|v| v.id).collect();
        Ok(self.push(prim, ids, out, requires_grad))
    }

    fn var_at(&self, id: usize) -> Var {
        let nodes = self.nodes.borrow();
        let n = &nodes[id];
        Var {
            tape: self.clone(),
            id,
            value: Rc::clone(&n.value),
            requires_grad: n.requires_grad,
        }
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// The returned gradients are themselves recorded on this tape, so they
    /// can take part in further differentiation. Inputs that `output` does not
    /// depend on receive zero tensors.
    pub fn grad(&self, output: &Var, wrt: &[&Var]) -> Result<Vec<Var>> {
        let grads = self.accumulate(output)?;
        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.id).and_then(Option::as_ref) {
                Some(g) => g.clone(),
                None => self.constant(Tensor::zeros(w.value.shape())),
            })
            .collect())
    }

    /// Backpropagates from `output` to every differentiable leaf.
    pub fn backward(&self, output: &Var) -> Result<Gradients> {
        let grads = self.accumulate(output)?;
        Ok(Gradients {
            tape: self.clone(),
            grads,
        })
    }

    fn accumulate(&self, output: &Var) -> Result<Vec<Option<Var>>> {
        if output.value.numel() != 1 {
            return Err(Error::NonScalar {
                shape: output.value.shape().to_vec(),
            });
        }
        let out_id = output.id;
        let mut needed = vec![false; out_id + 1];
        {
            let nodes = self.nodes.borrow();
            needed[out_id] = nodes[out_id].requires_grad;
            for i in (0..=out_id).rev() {
                if needed[i] {
                    for &j in &nodes[i].inputs {
                        if nodes[j].requires_grad {
                            needed[j] = true;
                        }
                    }
                }
            }
        }
        let mut grads: Vec<Option<Var>> = vec![None; out_id + 1];
        if !needed[out_id] {
            return Ok(grads);
        }
        grads[out_id] = Some(self.constant(Tensor::full(output.value.shape(), 1.0)));
        for i in (0..=out_id).rev() {
            if !needed[i] {
                continue;
            }
            let Some(upstream) = grads[i].clone() else {
                continue;
            };
            let (prim, inputs) = {
                let nodes = self.nodes.borrow();
                (nodes[i].prim.clone(), nodes[i].inputs.clone())
            };
            if inputs.is_empty() {
                continue;
            }
            let input_vars: Vec<Var> = inputs.iter().map(|&j| self.var_at(j)).collect();
            let out_var = self.var_at(i);
            let contributions = backward_rule(&prim, &input_vars, &out_var, &upstream)?;
            for (slot, (&j, contrib)) in inputs.iter().zip(contributions).enumerate() {
                let Some(g) = contrib else { continue };
                if !needed[j] || !input_vars[slot].requires_grad {
                    continue;
                }
                grads[j] = Some(match grads[j].take() {
                    Some(acc) => acc.add(&g)?,
                    None => g,
                });
            }
        }
        Ok(grads)
    }
}

/// Result of [`Tape::backward`]: gradients keyed by the leaf they belong to.
pub struct Gradients {
    tape: Tape,
    grads: Vec<Option<Var>>,
}

impl Gradients {
    /// Gradient for `v` as a taped value; zero when `v` was not reached.
    pub fn var(&self, v: &Var) -> Var {
        match self.grads.get(v.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => self.tape.constant(Tensor::zeros(v.value.shape())),
        }
    }

    pub fn get(&self, v: &Var) -> Tensor {
        self.var(v).value().clone()
    }
}

/// Per-input gradient contributions of one node, expressed with taped
/// primitives so that they remain differentiable.
fn backward_rule(prim: &Primitive, xs: &[Var], out: &Var, g: &Var) -> Result<Vec<Option<Var>>> {
    use Primitive::*;
    let tape = &out.tape;
    Ok(match prim {
        Leaf => Vec::new(),
        Add => vec![Some(g.clone()), Some(g.clone())],
        Sub => vec![Some(g.clone()), Some(g.neg()?)],
        Mul => vec![
            xs[0].requires_grad.then(|| g.mul(&xs[1])).transpose()?,
            xs[1].requires_grad.then(|| g.mul(&xs[0])).transpose()?,
        ],
        Div => vec![
            xs[0].requires_grad.then(|| g.div(&xs[1])).transpose()?,
            xs[1]
                .requires_grad
                .then(|| g.mul(out)?.div(&xs[1])?.neg())
                .transpose()?,
        ],
        MatMul { lhs_t, rhs_t } => {
            let (a, b) = (&xs[0], &xs[1]);
            let (da, db) = match (lhs_t, rhs_t) {
                (false, false) => ((g, b, false, true), (a, g, true, false)),
                (false, true) => ((g, b, false, false), (g, a, true, false)),
                (true, false) => ((b, g, false, true), (a, g, false, false)),
                (true, true) => ((b, g, true, true), (g, a, true, true)),
            };
            vec![
                a.requires_grad.then(|| da.0.matmul_t(da.1, da.2, da.3)).transpose()?,
                b.requires_grad.then(|| db.0.matmul_t(db.1, db.2, db.3)).transpose()?,
            ]
        }
        Transpose => vec![Some(g.transpose()?)],
        Exp => vec![Some(g.mul(out)?)],
        Log => vec![Some(g.div(&xs[0])?)],
        Tanh => vec![Some(g.sub(&g.mul(out)?.mul(out)?)?)],
        Relu => {
            let mask = xs[0].value.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            vec![Some(g.mul(&tape.constant(mask))?)]
        }
        Sigmoid => {
            let one_minus = out.neg()?.shift(1.0)?;
            vec![Some(g.mul(out)?.mul(&one_minus)?)]
        }
        Softplus => vec![Some(g.mul(&xs[0].sigmoid()?)?)],
        Neg => vec![Some(g.neg()?)],
        Square => vec![Some(g.mul(&xs[0])?.scale(2.0)?)],
        Sqrt => vec![Some(g.div(out)?.scale(0.5)?)],
        Sum => vec![Some(g.broadcast(xs[0].value.shape())?)],
        Mean => {
            let n = xs[0].value.numel() as f64;
            vec![Some(g.scale(1.0 / n)?.broadcast(xs[0].value.shape())?)]
        }
        SumAxis(axis) => {
            let shape = xs[0].value.shape();
            let gi = if *axis == 0 {
                g.broadcast(&shape[..1])?
            } else {
                g.broadcast(&shape[1..])?.transpose()?
            };
            vec![Some(gi)]
        }
        Broadcast(lead) => {
            let reps: usize = lead.iter().product();
            let inner = xs[0].value.shape().to_vec();
            let n: usize = inner.iter().product();
            let gi = g.reshape(&[reps, n])?.sum_axis(0)?.reshape(&inner)?;
            vec![Some(gi)]
        }
        Reshape(_) => vec![Some(g.reshape(xs[0].value.shape())?)],
        Slice { start, end } => {
            let idx: Rc<[usize]> = (*start..*end).collect();
            vec![Some(g.scatter_cols(idx, xs[0].value.cols())?)]
        }
        SelectCols(idx) => vec![Some(g.scatter_cols(Rc::clone(idx), xs[0].value.cols())?)],
        ScatterCols { idx, .. } => vec![Some(g.select_cols(Rc::clone(idx))?)],
        Concat => {
            let mut start = 0;
            let mut parts = Vec::with_capacity(xs.len());
            for x in xs {
                let w = x.value.cols();
                parts.push(x.requires_grad.then(|| g.slice_cols(start, start + w)).transpose()?);
                start += w;
            }
            parts
        }
        AddRow => vec![Some(g.clone()), xs[1].requires_grad.then(|| g.sum_axis(0)).transpose()?],
        ScaleRows => vec![
            xs[0].requires_grad.then(|| g.scale_rows(&xs[1])).transpose()?,
            xs[1].requires_grad.then(|| g.mul(&xs[0])?.sum_axis(1)).transpose()?,
        ],
        Scale(c) => vec![Some(g.scale(*c)?)],
        Shift(_) => vec![Some(g.clone())],
        Clamp(lo, hi) => {
            let mask = xs[0].value.map(|v| if v >= *lo && v <= *hi { 1.0 } else { 0.0 });
            vec![Some(g.mul(&tape.constant(mask))?)]
        }
        RowNorm => {
            // d‖a‖/da = a/‖a‖, taken as 0 where the row is zero.
            vec![Some(xs[0].scale_rows(&g.mul(&out.safe_recip()?)?)?)]
        }
        SafeRecip => vec![Some(g.mul(&out.square()?)?.neg()?)],
    })
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> f64 {
        self.value.item()
    }

    fn unary(&self, prim: Primitive) -> Result<Var> {
        self.tape.apply(prim, &[self])
    }

    fn binary(&self, prim: Primitive, other: &Var) -> Result<Var> {
        self.tape.apply(prim, &[self, other])
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary(Primitive::Add, other)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary(Primitive::Sub, other)
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary(Primitive::Mul, other)
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        self.binary(Primitive::Div, other)
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.matmul_t(other, false, false)
    }

    pub fn matmul_t(&self, other: &Var, lhs_t: bool, rhs_t: bool) -> Result<Var> {
        self.binary(Primitive::MatMul { lhs_t, rhs_t }, other)
    }

    pub fn transpose(&self) -> Result<Var> {
        self.unary(Primitive::Transpose)
    }

    pub fn exp(&self) -> Result<Var> {
        self.unary(Primitive::Exp)
    }

    pub fn log(&self) -> Result<Var> {
        self.unary(Primitive::Log)
    }

    pub fn tanh(&self) -> Result<Var> {
        self.unary(Primitive::Tanh)
    }

    pub fn relu(&self) -> Result<Var> {
        self.unary(Primitive::Relu)
    }

    pub fn sigmoid(&self) -> Result<Var> {
        self.unary(Primitive::Sigmoid)
    }

    /// `log(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Result<Var> {
        self.unary(Primitive::Softplus)
    }

    pub fn neg(&self) -> Result<Var> {
        self.unary(Primitive::Neg)
    }

    pub fn square(&self) -> Result<Var> {
        self.unary(Primitive::Square)
    }

    pub fn sqrt(&self) -> Result<Var> {
        self.unary(Primitive::Sqrt)
    }

    pub fn sum(&self) -> Result<Var> {
        self.unary(Primitive::Sum)
    }

    pub fn mean(&self) -> Result<Var> {
        self.unary(Primitive::Mean)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var> {
        self.unary(Primitive::SumAxis(axis))
    }

    pub fn broadcast(&self, lead: &[usize]) -> Result<Var> {
        self.unary(Primitive::Broadcast(lead.to_vec()))
    }

    /// Repeats a `[n]` vector across `width` columns, giving `[n, width]`.
    pub fn broadcast_cols(&self, width: usize) -> Result<Var> {
        self.broadcast(&[width])?.transpose()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        self.unary(Primitive::Reshape(shape.to_vec()))
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var> {
        self.unary(Primitive::Slice { start, end })
    }

    pub fn select_cols(&self, idx: Rc<[usize]>) -> Result<Var> {
        self.unary(Primitive::SelectCols(idx))
    }

    pub fn scatter_cols(&self, idx: Rc<[usize]>, width: usize) -> Result<Var> {
        self.unary(Primitive::ScatterCols { idx, width })
    }

    pub fn concat_cols(parts: &[&Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        first.tape.apply(Primitive::Concat, parts)
    }

    pub fn add_row(&self, row: &Var) -> Result<Var> {
        self.binary(Primitive::AddRow, row)
    }

    pub fn scale_rows(&self, factors: &Var) -> Result<Var> {
        self.binary(Primitive::ScaleRows, factors)
    }

    pub fn scale(&self, c: f64) -> Result<Var> {
        self.unary(Primitive::Scale(c))
    }

    pub fn shift(&self, c: f64) -> Result<Var> {
        self.unary(Primitive::Shift(c))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var> {
        self.unary(Primitive::Clamp(lo, hi))
    }

    pub fn row_norm(&self) -> Result<Var> {
        self.unary(Primitive::RowNorm)
    }

    pub fn safe_recip(&self) -> Result<Var> {
        self.unary(Primitive::SafeRecip)
    }

    /// A copy of this value on the same tape with no gradient history.
    pub fn detach(&self) -> Var {
        self.tape.constant(self.value.as_ref().clone())
    }
}
