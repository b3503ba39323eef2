use serde::{Deserialize, Serialize};

use crate::tensor::{BackwardOp, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Hardswish,
    Relu,
    Sigmoid,
}

/// 0 below -3, identity above +3, `x (x + 3) / 6` in between.
pub fn hardswish<T: Scalar>(x: T) -> T {
    let three = T::of(3.0);
    if x <= -three {
        T::zero()
    } else if x >= three {
        x
    } else {
        x * (x + three) / T::of(6.0)
    }
}

fn hardswish_grad<T: Scalar>(x: T) -> T {
    let three = T::of(3.0);
    if x <= -three {
        T::zero()
    } else if x >= three {
        T::one()
    } else {
        (T::of(2.0) * x + three) / T::of(6.0)
    }
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Hardswish => hardswish(x),
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
        }
    }
}

struct ActivationOp(Activation);

impl<T: Scalar> BackwardOp<T> for ActivationOp {
    fn name(&self) -> &'static str {
        "activation"
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
        let dx = match self.0 {
            Activation::Hardswish => g.iter().zip(x).map(|(&g, &x)| g * hardswish_grad(x)).collect(),
            Activation::Relu => g
                .iter()
                .zip(x)
                .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                .collect(),
            Activation::Sigmoid => g
                .iter()
                .zip(y)
                .map(|(&g, &y)| g * y * (T::one() - y))
                .collect(),
        };
        vec![Some(dx)]
    }
}

pub fn activation<T: Scalar>(tape: &mut Tape<T>, x: Var, kind: Activation) -> Var {
    let t = tape.value(x);
    let data = t.data().iter().map(|&v| kind.apply(v)).collect();
    let out = Tensor::from_parts(t.shape().to_vec(), data);
    tape.push(out, &[x], ActivationOp(kind))
}
