use rand::Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Scalar, Tape, Tensor, Var};

struct DropoutOp<T: Scalar> {
    mask: Vec<T>,
}

impl<T: Scalar> BackwardOp<T> for DropoutOp<T> {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn backward(
        &self,
        g: &[T],
        _inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().zip(&self.mask).map(|(&g, &m)| g * m).collect())]
    }
}

/// Inverted dropout: in training each element is zeroed with probability `p` and the
/// survivors are scaled by `1 / (1 - p)`. Evaluation mode is the identity.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    x: Var,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout rate {p} outside [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x);
    }
    let keep = T::of(1.0 / (1.0 - p));
    let t = tape.value(x);
    let mask: Vec<T> = (0..t.numel())
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
        .collect();
    let out: Vec<T> = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    let out = Tensor::from_parts(t.shape().to_vec(), out);
    Ok(tape.push(out, &[x], DropoutOp { mask }))
}
