use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Scalar, Tape, Tensor, Var};

struct SoftmaxXentOp<T: Scalar> {
    probs: Vec<T>,
    labels: Vec<usize>,
    k: usize,
}

impl<T: Scalar> BackwardOp<T> for SoftmaxXentOp<T> {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(
        &self,
        g: &[T],
        _inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let b = self.labels.len();
        let scale = g[0] / T::of(b as f64);
        let mut d: Vec<T> = self.probs.iter().map(|&p| p * scale).collect();
        for (row, &y) in self.labels.iter().enumerate() {
            d[row * self.k + y] = d[row * self.k + y] - scale;
        }
        vec![Some(d)]
    }
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`, computed through a
/// max-shifted log-sum-exp. Also returns the probabilities.
pub fn softmax_cross_entropy<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[usize],
) -> Result<(Var, Tensor<T>)> {
    let (b, k) = match *tape.shape(logits) {
        [k] => (1, k),
        [b, k] => (b, k),
        _ => {
            return Err(Error::InvalidShape(format!(
                "logits must be [batch, classes], got {:?}",
                tape.shape(logits)
            )))
        }
    };
    if labels.len() != b {
        return Err(Error::InvalidArgument(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside [0, {k})")));
    }
    let z = tape.value(logits).data();
    let mut probs = vec![T::zero(); b * k];
    let mut loss = T::zero();
    for row in 0..b {
        let zr = &z[row * k..(row + 1) * k];
        let max = zr.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = zr.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        for j in 0..k {
            probs[row * k + j] = (zr[j] - max).exp() / sum;
        }
        loss += lse - zr[labels[row]];
    }
    let loss = loss / T::of(b as f64);
    let probs_t = Tensor::from_parts(tape.shape(logits).to_vec(), probs.clone());
    let op = SoftmaxXentOp { probs, labels: labels.to_vec(), k };
    let l = tape.push(Tensor::scalar(loss), &[logits], op);
    Ok((l, probs_t))
}
