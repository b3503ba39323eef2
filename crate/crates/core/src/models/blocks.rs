use crate::error::{Error, Result};
use crate::layers::{
    activation, batch_norm, conv1d, depthwise_conv1d, group_norm, maxpool1d, pointwise_conv1d,
    se_block, Activation, BatchStats, Mode, SeWeights,
};
use crate::tensor::{add_n, ParamId, ParamStore, Scalar, Tape, Var};

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Affine parameters of one normalization layer. Batch normalization also owns a pair of
/// running-statistics buffers in the store.
#[derive(Clone, Debug)]
pub struct Norm<H> {
    pub gamma: H,
    pub beta: H,
    pub running: Option<(ParamId, ParamId)>,
}

/// Depthwise `[k, M]` then pointwise `[M, N]`, each followed by a normalization.
#[derive(Clone, Debug)]
pub struct Branch<H> {
    pub dw: H,
    pub dw_norm: Norm<H>,
    pub pw: H,
    pub pw_norm: Norm<H>,
}

#[derive(Clone, Debug)]
pub struct Block<H> {
    pub branches: Vec<Branch<H>>,
    /// Stride-4 1x1 conv weight and bias; absent when the block keeps its width.
    pub shortcut: Option<(H, H)>,
    pub se: Option<[H; 4]>,
}

#[derive(Clone, Debug)]
pub struct Stem<H> {
    /// `[k, M, N]` for a standard stem, `[k, M]` for a depthwise one.
    pub conv: H,
    pub depthwise: bool,
    pub norm: Norm<H>,
}

/// Where each weight of a network lives: `ParamId`s in the store, or `Var`s once bound
/// to a tape.
#[derive(Clone, Debug)]
pub struct Layout<H> {
    pub embedding: H,
    pub stem: Stem<H>,
    pub blocks: Vec<Block<H>>,
    pub head_w: H,
    pub head_b: H,
}

impl<H: Copy> Norm<H> {
    fn map<U>(&self, f: &impl Fn(H) -> U) -> Norm<U> {
        Norm { gamma: f(self.gamma), beta: f(self.beta), running: self.running }
    }
}

impl<H: Copy> Layout<H> {
    pub fn map<U>(&self, f: impl Fn(H) -> U) -> Layout<U> {
        let f = &f;
        Layout {
            embedding: f(self.embedding),
            stem: Stem {
                conv: f(self.stem.conv),
                depthwise: self.stem.depthwise,
                norm: self.stem.norm.map(f),
            },
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    branches: b
                        .branches
                        .iter()
                        .map(|br| Branch {
                            dw: f(br.dw),
                            dw_norm: br.dw_norm.map(f),
                            pw: f(br.pw),
                            pw_norm: br.pw_norm.map(f),
                        })
                        .collect(),
                    shortcut: b.shortcut.map(|(w, bias)| (f(w), f(bias))),
                    se: b.se.map(|w| w.map(f)),
                })
                .collect(),
            head_w: f(self.head_w),
            head_b: f(self.head_b),
        }
    }
}

/// Settings shared by every layer in one forward pass, plus the batch statistics that
/// training-mode batch normalization produced along the way.
pub struct BlockCtx<'a, T: Scalar> {
    pub store: &'a ParamStore<T>,
    pub mode: Mode,
    /// Group norm + ReLU when set, batch norm + hardswish otherwise.
    pub modified: bool,
    pub groups: usize,
    pub se_reduction: usize,
    pub pool_window: usize,
    pub stats: Vec<(ParamId, ParamId, BatchStats<T>)>,
}

impl<T: Scalar> BlockCtx<'_, T> {
    pub fn norm(&mut self, tape: &mut Tape<T>, x: Var, n: &Norm<Var>) -> Result<Var> {
        if self.modified {
            return group_norm(tape, x, n.gamma, n.beta, self.groups, NORM_EPS);
        }
        let (mean_id, var_id) = n
            .running
            .ok_or_else(|| Error::Config("batch norm without running statistics".into()))?;
        let (y, stats) = batch_norm(
            tape,
            x,
            n.gamma,
            n.beta,
            self.store.get(mean_id).data(),
            self.store.get(var_id).data(),
            NORM_EPS,
            self.mode,
        )?;
        if let Some(s) = stats {
            self.stats.push((mean_id, var_id, s));
        }
        Ok(y)
    }

    pub fn act(&self, tape: &mut Tape<T>, x: Var) -> Var {
        let kind = if self.modified { Activation::Relu } else { Activation::Hardswish };
        activation(tape, x, kind)
    }

    /// Normalize then activate.
    pub fn norm_act(&mut self, tape: &mut Tape<T>, x: Var, n: &Norm<Var>) -> Result<Var> {
        let y = self.norm(tape, x, n)?;
        Ok(self.act(tape, y))
    }
}

/// Inception block: parallel depthwise-separable branches summed and max-pooled, plus a
/// stride-4 1x1 shortcut conv (or the pooled input itself when the width is unchanged),
/// optionally followed by squeeze-and-excitation. The modified block is the same graph
/// with group norm and ReLU, selected through `ctx`.
pub fn inception_block_forward<T: Scalar>(
    tape: &mut Tape<T>,
    ctx: &mut BlockCtx<'_, T>,
    x: Var,
    block: &Block<Var>,
) -> Result<Var> {
    let l = tape.shape(x)[tape.shape(x).len() - 2];
    let w = ctx.pool_window;
    if l % w != 0 {
        return Err(Error::InvalidShape(format!(
            "inception block input length {l} is not divisible by {w}"
        )));
    }
    let mut outs = Vec::with_capacity(block.branches.len());
    for br in &block.branches {
        let h = depthwise_conv1d(tape, x, br.dw, 1)?;
        let h = ctx.norm_act(tape, h, &br.dw_norm)?;
        let h = pointwise_conv1d(tape, h, br.pw, None, 1)?;
        outs.push(ctx.norm_act(tape, h, &br.pw_norm)?);
    }
    let sum = add_n(tape, &outs)?;
    let pooled = maxpool1d(tape, sum, w, w)?;
    let shortcut = match block.shortcut {
        Some((sw, sb)) => pointwise_conv1d(tape, x, sw, Some(sb), w)?,
        None => maxpool1d(tape, x, w, w)?,
    };
    let out = add_n(tape, &[pooled, shortcut])?;
    match block.se {
        Some([fc1_w, fc1_b, fc2_w, fc2_b]) => {
            let se = SeWeights { fc1_w, fc1_b, fc2_w, fc2_b };
            Ok(se_block(tape, out, &se, ctx.se_reduction)?.0)
        }
        None => Ok(out),
    }
}

/// Stem convolution followed by normalization and activation.
pub fn stem_forward<T: Scalar>(
    tape: &mut Tape<T>,
    ctx: &mut BlockCtx<'_, T>,
    x: Var,
    stem: &Stem<Var>,
) -> Result<Var> {
    let h = if stem.depthwise {
        depthwise_conv1d(tape, x, stem.conv, 1)?
    } else {
        conv1d(tape, x, stem.conv, None, 1)?
    };
    ctx.norm_act(tape, h, &stem.norm)
}
