use super::Blc;
use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Scalar, Tape, Tensor, Var};

struct MaxPoolOp {
    /// Flat input index of the selected element for every output element.
    argmax: Vec<usize>,
}

impl<T: Scalar> BackwardOp<T> for MaxPoolOp {
    fn name(&self) -> &'static str {
        "maxpool1d"
    }

    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); inputs[0].numel()];
        for (&src, &gv) in self.argmax.iter().zip(g) {
            dx[src] += gv;
        }
        vec![Some(dx)]
    }
}

/// Per-channel window maxima. Output length is `(L - window) / stride + 1`; trailing
/// positions that do not fill a window are dropped. Gradients go to the first maximum.
pub fn maxpool1d<T: Scalar>(tape: &mut Tape<T>, x: Var, window: usize, stride: usize) -> Result<Var> {
    let s = Blc::of(tape.shape(x), "maxpool1d")?;
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument("maxpool1d: window and stride must be positive".into()));
    }
    if s.l < window {
        return Err(Error::InvalidShape(format!(
            "maxpool1d: length {} is shorter than the window {window}",
            s.l
        )));
    }
    let l_out = (s.l - window) / stride + 1;
    let c = s.c;
    let xd = tape.value(x).data();
    let mut out = Vec::with_capacity(s.b * l_out * c);
    let mut argmax = Vec::with_capacity(s.b * l_out * c);
    for b in 0..s.b {
        for o in 0..l_out {
            let start = b * s.l + o * stride;
            for ch in 0..c {
                let mut best = start * c + ch;
                for p in 1..window {
                    let i = (start + p) * c + ch;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    let out = Tensor::from_parts(s.shape(l_out, c), out);
    Ok(tape.push(out, &[x], MaxPoolOp { argmax }))
}

struct AvgPoolOp {
    b: usize,
    l: usize,
    c: usize,
}

impl<T: Scalar> BackwardOp<T> for AvgPoolOp {
    fn name(&self) -> &'static str {
        "global_avgpool"
    }

    fn backward(
        &self,
        g: &[T],
        _inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let inv = T::one() / T::of(self.l as f64);
        let mut dx = Vec::with_capacity(self.b * self.l * self.c);
        for b in 0..self.b {
            let gb = &g[b * self.c..(b + 1) * self.c];
            for _ in 0..self.l {
                dx.extend(gb.iter().map(|&v| v * inv));
            }
        }
        vec![Some(dx)]
    }
}

/// Mean over the length axis: `[B, L, C] -> [B, C]` (or `[L, C] -> [C]`).
pub fn global_avgpool<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let s = Blc::of(tape.shape(x), "global_avgpool")?;
    let xd = tape.value(x).data();
    let inv = T::one() / T::of(s.l as f64);
    let mut out = vec![T::zero(); s.b * s.c];
    for b in 0..s.b {
        let ob = &mut out[b * s.c..(b + 1) * s.c];
        for row in xd[b * s.l * s.c..(b + 1) * s.l * s.c].chunks(s.c) {
            ob.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
        }
        ob.iter_mut().for_each(|o| *o = *o * inv);
    }
    let shape = if s.batched { vec![s.b, s.c] } else { vec![s.c] };
    Ok(tape.push(Tensor::from_parts(shape, out), &[x], AvgPoolOp { b: s.b, l: s.l, c: s.c }))
}
