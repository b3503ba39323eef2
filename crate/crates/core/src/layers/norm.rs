use serde::{Deserialize, Serialize};

use super::{Blc, Mode};
use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Batch,
    Group,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub kind: NormKind,
    pub channels: usize,
    /// Only meaningful for group normalization.
    pub groups: usize,
    pub epsilon: f64,
    /// Running-statistics update rate; batch normalization only.
    pub momentum: f64,
}

impl NormSpec {
    pub fn batch(channels: usize) -> Self {
        NormSpec { kind: NormKind::Batch, channels, groups: 1, epsilon: 1e-5, momentum: 0.1 }
    }

    pub fn group(channels: usize, groups: usize) -> Self {
        NormSpec { kind: NormKind::Group, channels, groups, epsilon: 1e-5, momentum: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.groups == 0 || self.channels % self.groups != 0 {
            return Err(Error::Config(format!(
                "{} groups do not divide {} channels",
                self.groups, self.channels
            )));
        }
        Ok(())
    }
}

/// Batch statistics from a training-mode batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T: Scalar> {
    pub mean: Vec<T>,
    /// Unbiased variance, which is what the running estimate tracks.
    pub var: Vec<T>,
}

impl<T: Scalar> BatchStats<T> {
    pub fn update_running(&self, running_mean: &mut [T], running_var: &mut [T], momentum: f64) {
        let (keep, take) = (T::of(1.0 - momentum), T::of(momentum));
        for c in 0..self.mean.len() {
            running_mean[c] = keep * running_mean[c] + take * self.mean[c];
            running_var[c] = keep * running_var[c] + take * self.var[c];
        }
    }
}

/// Shared backward for affine normalizations. Statistics are taken over sets of
/// positions; `set_of(row, channel)` names the set an element belongs to.
struct NormOp<T: Scalar> {
    rows: usize,
    c: usize,
    /// Normalized input, before the affine transform.
    xhat: Vec<T>,
    /// 1 / sqrt(var + eps) per set.
    inv_std: Vec<T>,
    /// Elements per set.
    set_size: usize,
    layout: SetLayout,
    /// Eval-mode batch norm treats the statistics as constants.
    frozen_stats: bool,
}

#[derive(Clone, Copy)]
enum SetLayout {
    /// One set per channel across all rows.
    PerChannel,
    /// One set per (sample, group); `len` rows per sample, `width` channels per group.
    PerGroup { len: usize, width: usize, groups: usize },
}

impl SetLayout {
    #[inline]
    fn set_of(self, row: usize, c: usize) -> usize {
        match self {
            SetLayout::PerChannel => c,
            SetLayout::PerGroup { len, width, groups } => (row / len) * groups + c / width,
        }
    }
}

impl<T: Scalar> BackwardOp<T> for NormOp<T> {
    fn name(&self) -> &'static str {
        "normalize"
    }

    fn backward(
        &self,
        dy: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let gamma = inputs[1].data();
        let c = self.c;
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for r in 0..self.rows {
            for ch in 0..c {
                let i = r * c + ch;
                dgamma[ch] += dy[i] * self.xhat[i];
                dbeta[ch] += dy[i];
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = vec![T::zero(); self.rows * c];
            if self.frozen_stats {
                for r in 0..self.rows {
                    for ch in 0..c {
                        let i = r * c + ch;
                        dx[i] = dy[i] * gamma[ch] * self.inv_std[ch];
                    }
                }
                return dx;
            }
            let sets = self.inv_std.len();
            let mut sum_d = vec![T::zero(); sets];
            let mut sum_dx = vec![T::zero(); sets];
            for r in 0..self.rows {
                for ch in 0..c {
                    let i = r * c + ch;
                    let s = self.layout.set_of(r, ch);
                    let d = dy[i] * gamma[ch];
                    sum_d[s] += d;
                    sum_dx[s] += d * self.xhat[i];
                }
            }
            let n = T::of(self.set_size as f64);
            for r in 0..self.rows {
                for ch in 0..c {
                    let i = r * c + ch;
                    let s = self.layout.set_of(r, ch);
                    let d = dy[i] * gamma[ch];
                    dx[i] = self.inv_std[s] / n * (n * d - sum_d[s] - self.xhat[i] * sum_dx[s]);
                }
            }
            dx
        });
        vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
    }
}

fn check_affine<T: Scalar>(tape: &Tape<T>, gamma: Var, beta: Var, c: usize, op: &'static str) -> Result<()> {
    for v in [gamma, beta] {
        if tape.shape(v) != [c] {
            return Err(Error::ShapeMismatch { op, left: tape.shape(v).to_vec(), right: vec![c] });
        }
    }
    Ok(())
}

/// Per-channel normalization over batch and length. Training mode uses the batch
/// statistics and returns them so the caller can update its running estimates.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &[T],
    running_var: &[T],
    epsilon: f64,
    mode: Mode,
) -> Result<(Var, Option<BatchStats<T>>)> {
    let s = Blc::of(tape.shape(x), "batch_norm")?;
    let c = s.c;
    check_affine(tape, gamma, beta, c, "batch_norm")?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::ShapeMismatch {
            op: "batch_norm",
            left: vec![running_mean.len(), running_var.len()],
            right: vec![c],
        });
    }
    let rows = s.b * s.l;
    let xd = tape.value(x).data();
    let eps = T::of(epsilon);

    let (mean, var, stats) = match mode {
        Mode::Train => {
            if s.b < 2 {
                return Err(Error::InvalidArgument(
                    "batch normalization in training mode needs a batch of at least 2".into(),
                ));
            }
            let mut mean = vec![T::zero(); c];
            for row in xd.chunks(c) {
                mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
            }
            let nr = T::of(rows as f64);
            mean.iter_mut().for_each(|m| *m = *m / nr);
            let mut var = vec![T::zero(); c];
            for row in xd.chunks(c) {
                for ch in 0..c {
                    let d = row[ch] - mean[ch];
                    var[ch] += d * d;
                }
            }
            let unbiased = var.iter().map(|&v| v / T::of((rows - 1) as f64)).collect();
            var.iter_mut().for_each(|v| *v = *v / nr);
            let stats = BatchStats { mean: mean.clone(), var: unbiased };
            (mean, var, Some(stats))
        }
        Mode::Eval => (running_mean.to_vec(), running_var.to_vec(), None),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let g = tape.value(gamma).data();
    let b = tape.value(beta).data();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for r in 0..rows {
        for ch in 0..c {
            let i = r * c + ch;
            xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
            out[i] = g[ch] * xhat[i] + b[ch];
        }
    }
    let shape = tape.shape(x).to_vec();
    let op = NormOp {
        rows,
        c,
        xhat,
        inv_std,
        set_size: rows,
        layout: SetLayout::PerChannel,
        frozen_stats: mode == Mode::Eval,
    };
    let y = tape.push(Tensor::from_parts(shape, out), &[x, gamma, beta], op);
    Ok((y, stats))
}

/// Per-sample normalization over each group of channels and the full length.
/// Identical in training and evaluation.
pub fn group_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    groups: usize,
    epsilon: f64,
) -> Result<Var> {
    let s = Blc::of(tape.shape(x), "group_norm")?;
    let c = s.c;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Config(format!("{groups} groups do not divide {c} channels")));
    }
    check_affine(tape, gamma, beta, c, "group_norm")?;
    let width = c / groups;
    let layout = SetLayout::PerGroup { len: s.l, width, groups };
    let sets = s.b * groups;
    let set_size = s.l * width;
    let rows = s.b * s.l;
    let xd = tape.value(x).data();
    let eps = T::of(epsilon);

    let mut mean = vec![T::zero(); sets];
    for r in 0..rows {
        for ch in 0..c {
            mean[layout.set_of(r, ch)] += xd[r * c + ch];
        }
    }
    let n = T::of(set_size as f64);
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut var = vec![T::zero(); sets];
    for r in 0..rows {
        for ch in 0..c {
            let st = layout.set_of(r, ch);
            let d = xd[r * c + ch] - mean[st];
            var[st] += d * d;
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v / n + eps).sqrt()).collect();

    let g = tape.value(gamma).data();
    let b = tape.value(beta).data();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for r in 0..rows {
        for ch in 0..c {
            let i = r * c + ch;
            let st = layout.set_of(r, ch);
            xhat[i] = (xd[i] - mean[st]) * inv_std[st];
            out[i] = g[ch] * xhat[i] + b[ch];
        }
    }
    let shape = tape.shape(x).to_vec();
    let op = NormOp { rows, c, xhat, inv_std, set_size, layout, frozen_stats: false };
    Ok(tape.push(Tensor::from_parts(shape, out), &[x, gamma, beta], op))
}
