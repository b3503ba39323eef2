//! Finite-difference gradient checking and small deterministic generators shared by the
//! unit, integration and acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared absolutely rather than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// (input index, element index, analytic, numeric) at the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the tape's gradients of `f` against central finite differences on every
/// element of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_gradients_sampled(inputs, usize::MAX, 0, f)
}

/// Like [`check_gradients`] but probes at most `max_per_input` randomly chosen elements
/// of each input.
pub fn check_gradients_sampled<F>(
    inputs: &[Tensor<f64>],
    max_per_input: usize,
    seed: u64,
    f: F,
) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss);
        if value.numel() != 1 {
            return Err(Error::NonScalarLoss(value.shape().to_vec()));
        }
        Ok(value.data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let indices: Vec<usize> = if n <= max_per_input {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, max_per_input).into_vec()
        };
        for j in indices {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = rel_err(analytic[i][j], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err.max(report.max_rel_err);
                report.worst = Some((i, j, analytic[i][j], numeric));
            }
        }
    }
    Ok(report)
}

/// Seeded generator for test tensors.
pub struct Lcg(ChaCha8Rng);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Lcg(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.gen_range(lo..hi)
    }

    pub fn bit(&mut self) -> bool {
        self.0.gen()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.gen_range(0..n)
    }

    pub fn bytes(&mut self, n: usize) -> Vec<u8> {
        (0..n).map(|_| self.0.gen()).collect()
    }

    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    pub fn tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, self.vec(n, lo, hi)).expect("valid shape")
    }

    pub fn tensor_f32(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<f32> {
        self.tensor(shape, lo, hi).cast()
    }
}

/// `sum(y * proj)`: a scalar probe whose gradient exercises the full Jacobian of `y`.
pub fn project(tape: &mut Tape<f64>, y: Var, proj: &Tensor<f64>) -> Result<Var> {
    use crate::tensor::{binary, sum, BinaryKind};
    let p = tape.constant(proj.clone());
    let prod = binary(tape, BinaryKind::Mul, y, p)?;
    Ok(sum(tape, prod))
}
