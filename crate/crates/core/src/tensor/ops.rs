use super::{BackwardOp, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Neg,
    Square,
    Exp,
    Ln,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarKind {
    Add(f64),
    Mul(f64),
}

#[inline]
fn at<T: Scalar>(t: &Tensor<T>, i: usize) -> T {
    if t.numel() == 1 {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

/// Folds a full-size gradient back onto an operand that was broadcast from a scalar.
fn fold<T: Scalar>(g: Vec<T>, operand: &Tensor<T>) -> Vec<T> {
    if operand.numel() == 1 && g.len() != 1 {
        vec![g.into_iter().sum()]
    } else {
        g
    }
}

struct BinaryOp {
    kind: BinaryKind,
}

impl<T: Scalar> BackwardOp<T> for BinaryOp {
    fn name(&self) -> &'static str {
        "binary"
    }

    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let n = g.len();
        let ga = needs[0].then(|| {
            let full: Vec<T> = match self.kind {
                BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                BinaryKind::Mul => (0..n).map(|i| g[i] * at(b, i)).collect(),
                BinaryKind::Div => (0..n).map(|i| g[i] / at(b, i)).collect(),
            };
            fold(full, a)
        });
        let gb = needs[1].then(|| {
            let full: Vec<T> = match self.kind {
                BinaryKind::Add => g.to_vec(),
                BinaryKind::Sub => g.iter().map(|&v| -v).collect(),
                BinaryKind::Mul => (0..n).map(|i| g[i] * at(a, i)).collect(),
                BinaryKind::Div => (0..n)
                    .map(|i| {
                        let bv = at(b, i);
                        -g[i] * at(a, i) / (bv * bv)
                    })
                    .collect(),
            };
            fold(full, b)
        });
        vec![ga, gb]
    }
}

/// Elementwise binary operation. Shapes must match exactly unless one side holds a
/// single element, which is broadcast.
pub fn binary<T: Scalar>(tape: &mut Tape<T>, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
    let (ta, tb) = (tape.value(a), tape.value(b));
    let shape = if ta.shape() == tb.shape() || tb.numel() == 1 {
        ta.shape().to_vec()
    } else if ta.numel() == 1 {
        tb.shape().to_vec()
    } else {
        return Err(Error::ShapeMismatch {
            op: "elementwise",
            left: ta.shape().to_vec(),
            right: tb.shape().to_vec(),
        });
    };
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|i| {
            let (x, y) = (at(ta, i), at(tb, i));
            match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
                BinaryKind::Div => x / y,
            }
        })
        .collect();
    Ok(tape.push(Tensor::from_parts(shape, data), &[a, b], BinaryOp { kind }))
}

struct UnaryOp {
    kind: UnaryKind,
}

impl<T: Scalar> BackwardOp<T> for UnaryOp {
    fn name(&self) -> &'static str {
        "unary"
    }

    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let x = inputs[0].data();
        let y = out.data();
        let two = T::of(2.0);
        let gx = g
            .iter()
            .enumerate()
            .map(|(i, &gi)| match self.kind {
                UnaryKind::Neg => -gi,
                UnaryKind::Square => gi * two * x[i],
                UnaryKind::Exp => gi * y[i],
                UnaryKind::Ln => gi / x[i],
            })
            .collect();
        vec![Some(gx)]
    }
}

pub fn unary<T: Scalar>(tape: &mut Tape<T>, kind: UnaryKind, x: Var) -> Var {
    let t = tape.value(x);
    let data = t
        .data()
        .iter()
        .map(|&v| match kind {
            UnaryKind::Neg => -v,
            UnaryKind::Square => v * v,
            UnaryKind::Exp => v.exp(),
            UnaryKind::Ln => v.ln(),
        })
        .collect();
    let out = Tensor::from_parts(t.shape().to_vec(), data);
    tape.push(out, &[x], UnaryOp { kind })
}

struct ScalarOp {
    kind: ScalarKind,
}

impl<T: Scalar> BackwardOp<T> for ScalarOp {
    fn name(&self) -> &'static str {
        "scalar"
    }

    fn backward(
        &self,
        g: &[T],
        _inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let gx = match self.kind {
            ScalarKind::Add(_) => g.to_vec(),
            ScalarKind::Mul(c) => g.iter().map(|&v| v * T::of(c)).collect(),
        };
        vec![Some(gx)]
    }
}

/// Tensor-with-constant operation.
pub fn scalar_op<T: Scalar>(tape: &mut Tape<T>, kind: ScalarKind, x: Var) -> Var {
    let t = tape.value(x);
    let data = t
        .data()
        .iter()
        .map(|&v| match kind {
            ScalarKind::Add(c) => v + T::of(c),
            ScalarKind::Mul(c) => v * T::of(c),
        })
        .collect();
    let out = Tensor::from_parts(t.shape().to_vec(), data);
    tape.push(out, &[x], ScalarOp { kind })
}

struct SumOp;

impl<T: Scalar> BackwardOp<T> for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![g[0]; inputs[0].numel()])]
    }
}

/// Sum of all elements, as a one-element tensor.
pub fn sum<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let s: T = tape.value(x).data().iter().copied().sum();
    tape.push(Tensor::scalar(s), &[x], SumOp)
}

struct AddNOp;

impl<T: Scalar> BackwardOp<T> for AddNOp {
    fn name(&self) -> &'static str {
        "add_n"
    }

    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        (0..inputs.len())
            .map(|i| needs[i].then(|| g.to_vec()))
            .collect()
    }
}

/// Sum of several same-shaped tensors.
pub fn add_n<T: Scalar>(tape: &mut Tape<T>, xs: &[Var]) -> Result<Var> {
    let first = xs
        .first()
        .ok_or_else(|| Error::InvalidArgument("add_n of zero tensors".into()))?;
    let shape = tape.shape(*first).to_vec();
    let mut acc = tape.value(*first).data().to_vec();
    for &x in &xs[1..] {
        let t = tape.value(x);
        if t.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "add_n",
                left: shape,
                right: t.shape().to_vec(),
            });
        }
        acc.iter_mut().zip(t.data()).for_each(|(a, &b)| *a += b);
    }
    Ok(tape.push(Tensor::from_parts(shape, acc), xs, AddNOp))
}
