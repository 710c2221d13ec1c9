//! 2-D convolution with gradients for input, kernel, and bias.
//!
//! Direct (non-im2col) kernels, accumulated in f64. Work is partitioned
//! over independent output planes, so results are bit-identical for any
//! thread count.

use super::tape::BackwardArgs;
use super::{numel, Tape, Tensor};
use crate::error::{Error, Result};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize) -> Conv2dSpec {
        Conv2dSpec { stride, padding }
    }

    /// Stride-1 "same" padding for an odd kernel size.
    pub fn same(k: usize) -> Conv2dSpec {
        Conv2dSpec {
            stride: 1,
            padding: (k - 1) / 2,
        }
    }
}

#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

/// Inclusive output-column range for which `ox*stride + kx - pad` lands in `[0, w)`.
#[inline]
fn ox_range(d: &Dims, kx: usize) -> Option<(usize, usize)> {
    let lo = if d.pad > kx {
        (d.pad - kx).div_ceil(d.stride)
    } else {
        0
    };
    let hi_num = d.w as isize - 1 + d.pad as isize - kx as isize;
    if hi_num < 0 {
        return None;
    }
    let hi = ((hi_num as usize) / d.stride).min(d.ow - 1);
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

#[inline]
fn in_y(d: &Dims, oy: usize, ky: usize) -> Option<usize> {
    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
    if iy < 0 || iy >= d.h as isize {
        None
    } else {
        Some(iy as usize)
    }
}

fn forward(x: &[f32], wgt: &[f32], bias: Option<&[f32]>, d: Dims) -> Vec<f32> {
    let mut out = vec![0f32; d.n * d.cout * d.oh * d.ow];
    out.par_chunks_mut(d.oh * d.ow)
        .enumerate()
        .for_each(|(plane, oplane)| {
            let ni = plane / d.cout;
            let co = plane % d.cout;
            let mut acc = vec![0f64; d.oh * d.ow];
            for ci in 0..d.cin {
                let xplane = &x[(ni * d.cin + ci) * d.h * d.w..][..d.h * d.w];
                let wbase = (co * d.cin + ci) * d.k * d.k;
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let wv = wgt[wbase + ky * d.k + kx] as f64;
                        let Some((lo, hi)) = ox_range(&d, kx) else { continue };
                        for oy in 0..d.oh {
                            let Some(iy) = in_y(&d, oy, ky) else { continue };
                            let xrow = &xplane[iy * d.w..][..d.w];
                            let arow = &mut acc[oy * d.ow..][..d.ow];
                            if d.stride == 1 {
                                // lo is chosen so lo + kx >= pad.
                                let ix0 = (lo + kx) - d.pad;
                                let len = hi - lo + 1;
                                for (a, &xv) in arow[lo..lo + len].iter_mut().zip(&xrow[ix0..ix0 + len]) {
                                    *a += wv * xv as f64;
                                }
                            } else {
                                for ox in lo..=hi {
                                    let ix = ox * d.stride + kx - d.pad;
                                    arow[ox] += wv * xrow[ix] as f64;
                                }
                            }
                        }
                    }
                }
            }
            let bv = bias.map_or(0f64, |b| b[co] as f64);
            for (o, &a) in oplane.iter_mut().zip(acc.iter()) {
                *o = (a + bv) as f32;
            }
        });
    out
}

fn backward_input(gout: &[f32], wgt: &[f32], d: Dims) -> Vec<f32> {
    let mut gx = vec![0f32; d.n * d.cin * d.h * d.w];
    gx.par_chunks_mut(d.h * d.w)
        .enumerate()
        .for_each(|(plane, gxplane)| {
            let ni = plane / d.cin;
            let ci = plane % d.cin;
            let mut acc = vec![0f64; d.h * d.w];
            for co in 0..d.cout {
                let goplane = &gout[(ni * d.cout + co) * d.oh * d.ow..][..d.oh * d.ow];
                let wbase = (co * d.cin + ci) * d.k * d.k;
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let wv = wgt[wbase + ky * d.k + kx] as f64;
                        let Some((lo, hi)) = ox_range(&d, kx) else { continue };
                        for oy in 0..d.oh {
                            let Some(iy) = in_y(&d, oy, ky) else { continue };
                            let grow = &goplane[oy * d.ow..][..d.ow];
                            let arow = &mut acc[iy * d.w..][..d.w];
                            if d.stride == 1 {
                                let ix0 = (lo + kx) - d.pad;
                                let len = hi - lo + 1;
                                for (a, &gv) in arow[ix0..ix0 + len].iter_mut().zip(&grow[lo..lo + len]) {
                                    *a += wv * gv as f64;
                                }
                            } else {
                                for ox in lo..=hi {
                                    let ix = ox * d.stride + kx - d.pad;
                                    arow[ix] += wv * grow[ox] as f64;
                                }
                            }
                        }
                    }
                }
            }
            for (g, &a) in gxplane.iter_mut().zip(acc.iter()) {
                *g = a as f32;
            }
        });
    gx
}

fn backward_kernel(x: &[f32], gout: &[f32], d: Dims) -> Vec<f32> {
    let mut gw = vec![0f32; d.cout * d.cin * d.k * d.k];
    gw.par_chunks_mut(d.k * d.k)
        .enumerate()
        .for_each(|(block, gwblock)| {
            let co = block / d.cin;
            let ci = block % d.cin;
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let Some((lo, hi)) = ox_range(&d, kx) else { continue };
                    let mut acc = 0f64;
                    for ni in 0..d.n {
                        let xplane = &x[(ni * d.cin + ci) * d.h * d.w..][..d.h * d.w];
                        let goplane = &gout[(ni * d.cout + co) * d.oh * d.ow..][..d.oh * d.ow];
                        for oy in 0..d.oh {
                            let Some(iy) = in_y(&d, oy, ky) else { continue };
                            let xrow = &xplane[iy * d.w..][..d.w];
                            let grow = &goplane[oy * d.ow..][..d.ow];
                            if d.stride == 1 {
                                let ix0 = (lo + kx) - d.pad;
                                let len = hi - lo + 1;
                                for (&gv, &xv) in grow[lo..lo + len].iter().zip(&xrow[ix0..ix0 + len]) {
                                    acc += gv as f64 * xv as f64;
                                }
                            } else {
                                for ox in lo..=hi {
                                    let ix = ox * d.stride + kx - d.pad;
                                    acc += grow[ox] as f64 * xrow[ix] as f64;
                                }
                            }
                        }
                    }
                    gwblock[ky * d.k + kx] = acc as f32;
                }
            }
        });
    gw
}

fn backward_bias(gout: &[f32], d: Dims) -> Vec<f32> {
    let mut gb = vec![0f32; d.cout];
    for co in 0..d.cout {
        let mut acc = 0f64;
        for ni in 0..d.n {
            let plane = &gout[(ni * d.cout + co) * d.oh * d.ow..][..d.oh * d.ow];
            for &g in plane {
                acc += g as f64;
            }
        }
        gb[co] = acc as f32;
    }
    gb
}

/// 2-D convolution of an (N, Cin, H, W) or (Cin, H, W) input with an
/// (Cout, Cin, k, k) kernel and optional per-channel bias.
pub fn conv2d(
    tape: Option<&Tape>,
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    spec: Conv2dSpec,
) -> Result<Tensor> {
    let rank3 = input.shape().len() == 3;
    let in_shape: Vec<usize> = if rank3 {
        let s = input.shape();
        vec![1, s[0], s[1], s[2]]
    } else if input.shape().len() == 4 {
        input.shape().to_vec()
    } else {
        return Err(Error::invalid(
            "conv2d",
            format!("input must be rank 3 or 4, got {:?}", input.shape()),
        ));
    };
    let ks = kernel.shape();
    if ks.len() != 4 || ks[2] != ks[3] {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel must be (Cout, Cin, k, k), got {ks:?}"),
        ));
    }
    if ks[2] % 2 == 0 {
        return Err(Error::invalid("conv2d", format!("kernel size {} must be odd", ks[2])));
    }
    if in_shape[1] != ks[1] {
        return Err(Error::invalid(
            "conv2d",
            format!(
                "channel mismatch: input has {} channels, kernel expects {}",
                in_shape[1], ks[1]
            ),
        ));
    }
    if spec.stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be >= 1"));
    }
    if let Some(b) = bias {
        if b.shape() != [ks[0]] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: b.shape().to_vec(),
                rhs: vec![ks[0]],
            });
        }
    }
    let (h, w, k) = (in_shape[2], in_shape[3], ks[2]);
    let oh = (h + 2 * spec.padding).checked_sub(k).map(|v| v / spec.stride + 1);
    let ow = (w + 2 * spec.padding).checked_sub(k).map(|v| v / spec.stride + 1);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel {k} too large for padded input {h}x{w}"),
        ));
    };
    let d = Dims {
        n: in_shape[0],
        cin: in_shape[1],
        h,
        w,
        cout: ks[0],
        k,
        stride: spec.stride,
        pad: spec.padding,
        oh,
        ow,
    };
    let out = forward(&input.data(), &kernel.data(), bias.map(|b| b.data().clone()).as_deref(), d);
    let out_shape = if rank3 {
        vec![d.cout, oh, ow]
    } else {
        vec![d.n, d.cout, oh, ow]
    };
    debug_assert_eq!(numel(&out_shape), out.len());
    let mut inputs: Vec<Tensor> = vec![input.clone(), kernel.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    let track = tape.is_some() && inputs.iter().any(|t| t.requires_grad());
    let result = Tensor::op_output(out_shape, out, track);
    if track {
        tape.unwrap().record(
            result.clone(),
            inputs,
            Box::new(move |args: &BackwardArgs<'_>| {
                let input = &args.inputs[0];
                let kernel = &args.inputs[1];
                if input.requires_grad() {
                    let gx = backward_input(args.grad, &kernel.data(), d);
                    input.accum_grad(&gx);
                }
                if kernel.requires_grad() {
                    let gw = backward_kernel(&input.data(), args.grad, d);
                    kernel.accum_grad(&gw);
                }
                if let Some(b) = args.inputs.get(2) {
                    if b.requires_grad() {
                        b.accum_grad(&backward_bias(args.grad, d));
                    }
                }
            }),
        );
    }
    Ok(result)
}
