use super::{activation, global_avgpool, Activation, Blc};
use crate::error::{Error, Result};
use crate::tensor::{gemm, BackwardOp, MatRef, Scalar, Tape, Tensor, Var};

struct LinearOp {
    rows: usize,
    cin: usize,
    cout: usize,
}

impl<T: Scalar> BackwardOp<T> for LinearOp {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(
        &self,
        dy: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let (r, ci, co) = (self.rows, self.cin, self.cout);
        let dx = needs[0].then(|| {
            let mut dx = vec![T::zero(); r * ci];
            gemm(r, co, ci, T::one(), MatRef::row_major(dy, 0, co), MatRef::transposed(w, 0, co), T::zero(), &mut dx, 0, ci);
            dx
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![T::zero(); ci * co];
            gemm(ci, r, co, T::one(), MatRef::transposed(x, 0, ci), MatRef::row_major(dy, 0, co), T::zero(), &mut dw, 0, co);
            dw
        });
        let db = needs[2].then(|| {
            let mut db = vec![T::zero(); co];
            for row in dy.chunks(co) {
                db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
            }
            db
        });
        vec![dx, dw, db]
    }
}

/// Fully connected layer `[B, Cin] x [Cin, Cout] + [Cout]`. On a pooled feature vector
/// this is exactly a 1x1 convolution with bias.
pub fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let (rows, cin, batched) = match *tape.shape(x) {
        [c] => (1, c, false),
        [r, c] => (r, c, true),
        _ => {
            return Err(Error::InvalidShape(format!(
                "linear expects [channels] or [batch, channels], got {:?}",
                tape.shape(x)
            )))
        }
    };
    let &[wi, cout] = tape.shape(w) else {
        return Err(Error::InvalidShape(format!("linear weight must be 2-D, got {:?}", tape.shape(w))));
    };
    if wi != cin || tape.shape(b) != [cout] {
        return Err(Error::ShapeMismatch {
            op: "linear",
            left: tape.shape(x).to_vec(),
            right: tape.shape(w).to_vec(),
        });
    }
    let mut out = Vec::with_capacity(rows * cout);
    for _ in 0..rows {
        out.extend_from_slice(tape.value(b).data());
    }
    gemm(
        rows,
        cin,
        cout,
        T::one(),
        MatRef::row_major(tape.value(x).data(), 0, cin),
        MatRef::row_major(tape.value(w).data(), 0, cout),
        T::one(),
        &mut out,
        0,
        cout,
    );
    let shape = if batched { vec![rows, cout] } else { vec![cout] };
    Ok(tape.push(Tensor::from_parts(shape, out), &[x, w, b], LinearOp { rows, cin, cout }))
}

struct ScaleOp {
    b: usize,
    l: usize,
    c: usize,
}

impl<T: Scalar> BackwardOp<T> for ScaleOp {
    fn name(&self) -> &'static str {
        "scale_channels"
    }

    fn backward(
        &self,
        dy: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (x, s) = (inputs[0].data(), inputs[1].data());
        let (l, c) = (self.l, self.c);
        let dx = needs[0].then(|| {
            (0..dy.len())
                .map(|i| dy[i] * s[(i / (l * c)) * c + i % c])
                .collect()
        });
        let ds = needs[1].then(|| {
            let mut ds = vec![T::zero(); self.b * c];
            for i in 0..dy.len() {
                ds[(i / (l * c)) * c + i % c] += dy[i] * x[i];
            }
            ds
        });
        vec![dx, ds]
    }
}

/// `out[b, l, c] = x[b, l, c] * s[b, c]`.
pub fn scale_channels<T: Scalar>(tape: &mut Tape<T>, x: Var, s: Var) -> Result<Var> {
    let xs = Blc::of(tape.shape(x), "scale_channels")?;
    let want: Vec<usize> = if xs.batched { vec![xs.b, xs.c] } else { vec![xs.c] };
    if tape.shape(s) != want.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "scale_channels",
            left: tape.shape(x).to_vec(),
            right: tape.shape(s).to_vec(),
        });
    }
    let (xd, sd) = (tape.value(x).data(), tape.value(s).data());
    let (l, c) = (xs.l, xs.c);
    let out: Vec<T> = (0..xd.len())
        .map(|i| xd[i] * sd[(i / (l * c)) * c + i % c])
        .collect();
    let out = Tensor::from_parts(tape.shape(x).to_vec(), out);
    Ok(tape.push(out, &[x, s], ScaleOp { b: xs.b, l, c }))
}

/// Weights of a squeeze-and-excitation unit: `fc1: C -> C/r`, `fc2: C/r -> C`.
#[derive(Clone, Copy, Debug)]
pub struct SeWeights {
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

/// Squeeze (global average), excite (`sigmoid(fc2(relu(fc1(.))))`) and rescale each
/// channel. Returns the rescaled map and the per-channel gate.
pub fn se_block<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: &SeWeights,
    reduction: usize,
) -> Result<(Var, Var)> {
    let xs = Blc::of(tape.shape(x), "se_block")?;
    if reduction == 0 || xs.c % reduction != 0 {
        return Err(Error::Config(format!(
            "SE reduction {reduction} does not divide {} channels",
            xs.c
        )));
    }
    let hidden = xs.c / reduction;
    if tape.shape(w.fc1_w) != [xs.c, hidden] || tape.shape(w.fc2_w) != [hidden, xs.c] {
        return Err(Error::ShapeMismatch {
            op: "se_block",
            left: tape.shape(w.fc1_w).to_vec(),
            right: vec![xs.c, hidden],
        });
    }
    let squeeze = global_avgpool(tape, x)?;
    let h = linear(tape, squeeze, w.fc1_w, w.fc1_b)?;
    let h = activation(tape, h, Activation::Relu);
    let e = linear(tape, h, w.fc2_w, w.fc2_b)?;
    let gate = activation(tape, e, Activation::Sigmoid);
    let out = scale_channels(tape, x, gate)?;
    Ok((out, gate))
}
