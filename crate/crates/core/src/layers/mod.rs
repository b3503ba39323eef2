//! 1D layer zoo over channel-last feature maps.
//!
//! Every layer accepts either a single sample `[length, channels]` or a batch
//! `[batch, length, channels]` and returns a result of the same rank.

mod activation;
mod conv;
mod dropout;
mod embedding;
mod loss;
mod norm;
mod pool;
mod se;

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub use activation::{activation, hardswish, Activation};
pub use conv::{conv1d, depthwise_conv1d, pointwise_conv1d, same_padding};
pub use dropout::dropout;
pub use embedding::embedding;
pub use loss::softmax_cross_entropy;
pub use norm::{batch_norm, group_norm, BatchStats, NormKind, NormSpec};
pub use pool::{global_avgpool, maxpool1d};
pub use se::{linear, scale_channels, se_block, SeWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    Standard,
    Depthwise,
    Pointwise,
}

/// Geometry of one 1D convolution: input length `d_f`, kernel length `d_k`, `m` input and
/// `n` output channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub d_f: usize,
    pub d_k: usize,
    pub m: usize,
    pub n: usize,
    pub stride: usize,
    pub kind: ConvKind,
}

impl ConvLayerSpec {
    pub fn standard(d_f: usize, d_k: usize, m: usize, n: usize, stride: usize) -> Self {
        ConvLayerSpec { d_f, d_k, m, n, stride, kind: ConvKind::Standard }
    }

    pub fn depthwise(d_f: usize, d_k: usize, m: usize, stride: usize) -> Self {
        ConvLayerSpec { d_f, d_k, m, n: m, stride, kind: ConvKind::Depthwise }
    }

    pub fn pointwise(d_f: usize, m: usize, n: usize, stride: usize) -> Self {
        ConvLayerSpec { d_f, d_k: 1, m, n, stride, kind: ConvKind::Pointwise }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::Config(format!("{why}: {self:?}")));
        if self.d_f == 0 || self.d_k == 0 || self.m == 0 || self.n == 0 || self.stride == 0 {
            return bad("conv dimensions must be positive");
        }
        if self.d_k % 2 == 0 {
            return bad("kernel length must be odd");
        }
        match self.kind {
            ConvKind::Depthwise if self.n != self.m => bad("depthwise conv requires N == M"),
            ConvKind::Pointwise if self.d_k != 1 => bad("pointwise conv requires D_K == 1"),
            _ => Ok(()),
        }
    }

    /// Output length under same padding.
    pub fn out_len(&self) -> usize {
        self.d_f.div_ceil(self.stride)
    }

    /// Trainable weight elements (no bias).
    pub fn weight_count(&self) -> usize {
        match self.kind {
            ConvKind::Standard => self.d_k * self.m * self.n,
            ConvKind::Depthwise => self.d_k * self.m,
            ConvKind::Pointwise => self.m * self.n,
        }
    }
}

/// Batch, length and channel extents of a rank-2 or rank-3 feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Blc {
    pub b: usize,
    pub l: usize,
    pub c: usize,
    pub batched: bool,
}

impl Blc {
    pub fn of(shape: &[usize], op: &'static str) -> Result<Blc> {
        match *shape {
            [l, c] => Ok(Blc { b: 1, l, c, batched: false }),
            [b, l, c] => Ok(Blc { b, l, c, batched: true }),
            _ => Err(Error::InvalidShape(format!(
                "{op} expects [length, channels] or [batch, length, channels], got {shape:?}"
            ))),
        }
    }

    pub fn shape(&self, l: usize, c: usize) -> Vec<usize> {
        if self.batched {
            vec![self.b, l, c]
        } else {
            vec![l, c]
        }
    }
}

/// Batch shards reduce in this fixed granularity so that parameter gradients do not
/// depend on the number of worker threads.
pub(crate) const SHARD: usize = 8;

/// Runs `f` over fixed batch shards, each writing into its own zeroed buffer of length
/// `len`, and sums the shard buffers in shard order.
pub(crate) fn sharded_sum<T, F>(batch: usize, len: usize, f: F) -> Vec<T>
where
    T: Scalar,
    F: Fn(Range<usize>, &mut [T]) + Sync,
{
    let shards: Vec<Range<usize>> = (0..batch)
        .step_by(SHARD)
        .map(|s| s..(s + SHARD).min(batch))
        .collect();
    let partials: Vec<Vec<T>> = shards
        .into_par_iter()
        .map(|r| {
            let mut buf = vec![T::zero(); len];
            f(r, &mut buf);
            buf
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut acc = iter.next().unwrap_or_else(|| vec![T::zero(); len]);
    for p in iter {
        acc.iter_mut().zip(&p).for_each(|(a, &b)| *a += b);
    }
    acc
}
