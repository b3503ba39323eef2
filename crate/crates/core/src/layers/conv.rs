use rayon::prelude::*;

use super::{sharded_sum, Blc};
use crate::error::{Error, Result};
use crate::tensor::{gemm, BackwardOp, MatRef, Scalar, Tape, Tensor, Var};

/// Output length and left padding for zero same-padding at the given stride.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(len);
    (out, total / 2)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    b: usize,
    l_in: usize,
    l_out: usize,
    m: usize,
    n: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(x: Blc, k: usize, n: usize, stride: usize) -> Self {
        let (l_out, pad) = same_padding(x.l, k, stride);
        Geometry { b: x.b, l_in: x.l, l_out, m: x.c, n, k, stride, pad }
    }

    /// Output rows `lo..hi` whose tap `tap` lands inside the input, and the first input row.
    fn tap_range(&self, tap: usize) -> Option<(usize, usize, usize)> {
        // input row i = o * stride + tap - pad must satisfy 0 <= i < l_in
        let lo = if self.pad > tap { (self.pad - tap).div_ceil(self.stride) } else { 0 };
        let last_in = self.l_in - 1 + self.pad;
        if last_in < tap {
            return None;
        }
        let hi = ((last_in - tap) / self.stride + 1).min(self.l_out);
        if lo >= hi {
            return None;
        }
        Some((lo, hi, lo * self.stride + tap - self.pad))
    }
}

/// Standard (cross-channel) convolution, also used for pointwise with `k == 1`.
struct ConvOp {
    g: Geometry,
    has_bias: bool,
}

fn conv_forward<T: Scalar>(g: &Geometry, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); g.b * g.l_out * g.n];
    out.par_chunks_mut(g.l_out * g.n)
        .enumerate()
        .for_each(|(b, ob)| {
            if let Some(bias) = bias {
                for row in ob.chunks_mut(g.n) {
                    row.copy_from_slice(bias);
                }
            }
            let x_off = b * g.l_in * g.m;
            for tap in 0..g.k {
                let Some((lo, hi, i0)) = g.tap_range(tap) else { continue };
                gemm(
                    hi - lo,
                    g.m,
                    g.n,
                    T::one(),
                    MatRef {
                        data: x,
                        offset: x_off + i0 * g.m,
                        row_stride: g.stride * g.m,
                        col_stride: 1,
                    },
                    MatRef::row_major(w, tap * g.m * g.n, g.n),
                    T::one(),
                    ob,
                    lo * g.n,
                    g.n,
                );
            }
        });
    out
}

impl<T: Scalar> BackwardOp<T> for ConvOp {
    fn name(&self) -> &'static str {
        "conv1d"
    }

    fn backward(
        &self,
        dy: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let g = self.g;
        let x = inputs[0].data();
        let w = inputs[1].data();

        let dx = needs[0].then(|| {
            let mut dx = vec![T::zero(); g.b * g.l_in * g.m];
            dx.par_chunks_mut(g.l_in * g.m).enumerate().for_each(|(b, dxb)| {
                let y_off = b * g.l_out * g.n;
                for tap in 0..g.k {
                    let Some((lo, hi, i0)) = g.tap_range(tap) else { continue };
                    // dX rows (strided) += dY rows * W[tap]^T
                    gemm(
                        hi - lo,
                        g.n,
                        g.m,
                        T::one(),
                        MatRef::row_major(dy, y_off + lo * g.n, g.n),
                        MatRef::transposed(w, tap * g.m * g.n, g.n),
                        T::one(),
                        dxb,
                        i0 * g.m,
                        g.stride * g.m,
                    );
                }
            });
            dx
        });

        let dw = needs[1].then(|| {
            sharded_sum(g.b, g.k * g.m * g.n, |range, acc| {
                for b in range {
                    let x_off = b * g.l_in * g.m;
                    let y_off = b * g.l_out * g.n;
                    for tap in 0..g.k {
                        let Some((lo, hi, i0)) = g.tap_range(tap) else { continue };
                        gemm(
                            g.m,
                            hi - lo,
                            g.n,
                            T::one(),
                            MatRef {
                                data: x,
                                offset: x_off + i0 * g.m,
                                row_stride: 1,
                                col_stride: g.stride * g.m,
                            },
                            MatRef::row_major(dy, y_off + lo * g.n, g.n),
                            T::one(),
                            acc,
                            tap * g.m * g.n,
                            g.n,
                        );
                    }
                }
            })
        });

        let mut grads = vec![dx, dw];
        if self.has_bias {
            grads.push(needs[2].then(|| {
                let mut db = vec![T::zero(); g.n];
                for row in dy.chunks(g.n) {
                    db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                }
                db
            }));
        }
        grads
    }
}

fn conv_record<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    bias: Option<Var>,
    k: usize,
    n: usize,
    stride: usize,
    op: &'static str,
) -> Result<Var> {
    if stride == 0 {
        return Err(Error::InvalidArgument(format!("{op}: stride must be positive")));
    }
    let xs = Blc::of(tape.shape(x), op)?;
    if let Some(bv) = bias {
        if tape.shape(bv) != [n] {
            return Err(Error::ShapeMismatch {
                op,
                left: tape.shape(bv).to_vec(),
                right: vec![n],
            });
        }
    }
    let g = Geometry::new(xs, k, n, stride);
    let out = conv_forward(
        &g,
        tape.value(x).data(),
        tape.value(w).data(),
        bias.map(|b| tape.value(b).data()),
    );
    let out = Tensor::from_parts(xs.shape(g.l_out, n), out);
    let mut parents = vec![x, w];
    parents.extend(bias);
    Ok(tape.push(out, &parents, ConvOp { g, has_bias: bias.is_some() }))
}

/// Standard 1D cross-correlation with zero same-padding. `w` has shape
/// `[kernel, in_channels, out_channels]`.
pub fn conv1d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    bias: Option<Var>,
    stride: usize,
) -> Result<Var> {
    let xs = Blc::of(tape.shape(x), "conv1d")?;
    let &[k, m, n] = tape.shape(w) else {
        return Err(Error::InvalidShape(format!(
            "conv1d weight must be [kernel, in, out], got {:?}",
            tape.shape(w)
        )));
    };
    if m != xs.c {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            left: tape.shape(x).to_vec(),
            right: tape.shape(w).to_vec(),
        });
    }
    conv_record(tape, x, w, bias, k, n, stride, "conv1d")
}

/// 1x1 convolution: a per-position linear map with weight `[in_channels, out_channels]`.
pub fn pointwise_conv1d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    bias: Option<Var>,
    stride: usize,
) -> Result<Var> {
    let xs = Blc::of(tape.shape(x), "pointwise_conv1d")?;
    let &[m, n] = tape.shape(w) else {
        return Err(Error::InvalidShape(format!(
            "pointwise weight must be [in, out], got {:?}",
            tape.shape(w)
        )));
    };
    if m != xs.c {
        return Err(Error::ShapeMismatch {
            op: "pointwise_conv1d",
            left: tape.shape(x).to_vec(),
            right: tape.shape(w).to_vec(),
        });
    }
    conv_record(tape, x, w, bias, 1, n, stride, "pointwise_conv1d")
}

struct DepthwiseOp {
    g: Geometry,
}

impl<T: Scalar> BackwardOp<T> for DepthwiseOp {
    fn name(&self) -> &'static str {
        "depthwise_conv1d"
    }

    fn backward(
        &self,
        dy: &[T],
        inputs: &[&Tensor<T>],
        _out: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let g = self.g;
        let c = g.m;
        let x = inputs[0].data();
        let w = inputs[1].data();
        let dx = needs[0].then(|| {
            let mut dx = vec![T::zero(); g.b * g.l_in * c];
            dx.par_chunks_mut(g.l_in * c).enumerate().for_each(|(b, dxb)| {
                let dyb = &dy[b * g.l_out * c..(b + 1) * g.l_out * c];
                for tap in 0..g.k {
                    let Some((lo, hi, i0)) = g.tap_range(tap) else { continue };
                    let wt = &w[tap * c..(tap + 1) * c];
                    for (r, o) in (lo..hi).enumerate() {
                        let i = i0 + r * g.stride;
                        let src = &dyb[o * c..(o + 1) * c];
                        let dst = &mut dxb[i * c..(i + 1) * c];
                        for ch in 0..c {
                            dst[ch] += src[ch] * wt[ch];
                        }
                    }
                }
            });
            dx
        });
        let dw = needs[1].then(|| {
            sharded_sum(g.b, g.k * c, |range, acc| {
                for b in range {
                    let xb = &x[b * g.l_in * c..(b + 1) * g.l_in * c];
                    let dyb = &dy[b * g.l_out * c..(b + 1) * g.l_out * c];
                    for tap in 0..g.k {
                        let Some((lo, hi, i0)) = g.tap_range(tap) else { continue };
                        let acc_t = &mut acc[tap * c..(tap + 1) * c];
                        for (r, o) in (lo..hi).enumerate() {
                            let i = i0 + r * g.stride;
                            let xs = &xb[i * c..(i + 1) * c];
                            let ds = &dyb[o * c..(o + 1) * c];
                            for ch in 0..c {
                                acc_t[ch] += xs[ch] * ds[ch];
                            }
                        }
                    }
                }
            })
        });
        vec![dx, dw]
    }
}

/// One filter per channel, no channel mixing. `w` has shape `[kernel, channels]`.
pub fn depthwise_conv1d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    stride: usize,
) -> Result<Var> {
    if stride == 0 {
        return Err(Error::InvalidArgument("depthwise_conv1d: stride must be positive".into()));
    }
    let xs = Blc::of(tape.shape(x), "depthwise_conv1d")?;
    let &[k, c] = tape.shape(w) else {
        return Err(Error::InvalidShape(format!(
            "depthwise weight must be [kernel, channels], got {:?}",
            tape.shape(w)
        )));
    };
    if c != xs.c {
        return Err(Error::ShapeMismatch {
            op: "depthwise_conv1d",
            left: tape.shape(x).to_vec(),
            right: tape.shape(w).to_vec(),
        });
    }
    let g = Geometry::new(xs, k, c, stride);
    let xd = tape.value(x).data();
    let wd = tape.value(w).data();
    let mut out = vec![T::zero(); g.b * g.l_out * c];
    out.par_chunks_mut(g.l_out * c).enumerate().for_each(|(b, ob)| {
        let xb = &xd[b * g.l_in * c..(b + 1) * g.l_in * c];
        for tap in 0..g.k {
            let Some((lo, hi, i0)) = g.tap_range(tap) else { continue };
            let wt = &wd[tap * c..(tap + 1) * c];
            for (r, o) in (lo..hi).enumerate() {
                let i = i0 + r * g.stride;
                let src = &xb[i * c..(i + 1) * c];
                let dst = &mut ob[o * c..(o + 1) * c];
                for ch in 0..c {
                    dst[ch] += src[ch] * wt[ch];
                }
            }
        }
    });
    let out = Tensor::from_parts(xs.shape(g.l_out, c), out);
    Ok(tape.push(out, &[x, w], DepthwiseOp { g }))
}
