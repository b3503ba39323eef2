use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Scalar, Tape, Tensor, Var};

struct EmbeddingOp {
    symbols: Vec<u32>,
    dim: usize,
}

impl<T: Scalar> BackwardOp<T> for EmbeddingOp {
    fn name(&self) -> &'static str {
        "embedding"
    }

    fn backward(
        &self,
        g: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let d = self.dim;
        let mut dt = vec![T::zero(); inputs[0].numel()];
        for (i, &s) in self.symbols.iter().enumerate() {
            let row = &mut dt[s as usize * d..(s as usize + 1) * d];
            row.iter_mut().zip(&g[i * d..(i + 1) * d]).for_each(|(a, &v)| *a += v);
        }
        vec![Some(dt)]
    }
}

/// Row lookup into a `[vocab, dim]` table. `shape` is the shape of `symbols`
/// (`[L]` or `[B, L]`); the output appends `dim`.
pub fn embedding<T: Scalar>(
    tape: &mut Tape<T>,
    table: Var,
    symbols: &[u32],
    shape: &[usize],
) -> Result<Var> {
    let &[vocab, dim] = tape.shape(table) else {
        return Err(Error::InvalidShape(format!(
            "embedding table must be [vocab, dim], got {:?}",
            tape.shape(table)
        )));
    };
    if shape.iter().product::<usize>() != symbols.len() || shape.is_empty() {
        return Err(Error::InvalidShape(format!(
            "symbol shape {shape:?} does not hold {} symbols",
            symbols.len()
        )));
    }
    if let Some(&bad) = symbols.iter().find(|&&s| s as usize >= vocab) {
        return Err(Error::InvalidArgument(format!(
            "symbol {bad} outside [0, {})",
            vocab
        )));
    }
    let t = tape.value(table).data();
    let mut out = Vec::with_capacity(symbols.len() * dim);
    for &s in symbols {
        out.extend_from_slice(&t[s as usize * dim..(s as usize + 1) * dim]);
    }
    let mut out_shape = shape.to_vec();
    out_shape.push(dim);
    let op = EmbeddingOp { symbols: symbols.to_vec(), dim };
    Ok(tape.push(Tensor::from_parts(out_shape, out), &[table], op))
}
