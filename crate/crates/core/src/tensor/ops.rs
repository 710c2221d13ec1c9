//! Differentiable tensor operations.
//!
//! Every function takes `tape: Option<&Tape>`; passing `None` (or inputs
//! that do not require gradients) runs pure forward evaluation.

use super::tape::{BackwardArgs, Tape};
use super::{numel, strides_of, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Softplus,
    Sigmoid,
    Exp,
    Log,
}

fn tracked(tape: Option<&Tape>, inputs: &[&Tensor]) -> bool {
    tape.is_some() && inputs.iter().any(|t| t.requires_grad())
}

/// NumPy-style broadcast of two shapes (trailing alignment, size-1 expands).
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < a.len() { a[a.len() - 1 - i] } else { 1 };
        let db = if i < b.len() { b[b.len() - 1 - i] } else { 1 };
        out[rank - 1 - i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

/// Effective strides of `shape` when broadcast to `out_shape` (0 where expanded).
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let strides = strides_of(shape);
    let rank = out_shape.len();
    let pad = rank - shape.len();
    let mut out = vec![0usize; rank];
    for i in 0..shape.len() {
        out[pad + i] = if shape[i] == 1 { 0 } else { strides[i] };
    }
    out
}

/// Visit every output element of a broadcast binary op with the mapped
/// flat indices into both operands. Amortized O(1) per element.
fn for_each_broadcast2(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = numel(out_shape);
    if n == 0 {
        return;
    }
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let mut idx = vec![0usize; rank];
    let (mut ai, mut bi) = (0usize, 0usize);
    for oi in 0..n {
        f(oi, ai, bi);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ai += sa[d];
            bi += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            ai -= sa[d] * out_shape[d];
            bi -= sb[d] * out_shape[d];
        }
    }
}

/// Elementwise binary op with broadcasting over leading/size-1 axes.
pub fn elementwise(
    tape: Option<&Tape>,
    kind: BinaryKind,
    a: &Tensor,
    b: &Tensor,
) -> Result<Tensor> {
    let op = match kind {
        BinaryKind::Add => "add",
        BinaryKind::Sub => "sub",
        BinaryKind::Mul => "mul",
        BinaryKind::Div => "div",
    };
    let out_shape = broadcast_shape(op, a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0f32; numel(&out_shape)];
    let same = a.shape() == out_shape.as_slice() && b.shape() == out_shape.as_slice();
    let apply = |x: f32, y: f32| -> f32 {
        match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        }
    };
    if same {
        for ((o, &x), &y) in out.iter_mut().zip(ad.iter()).zip(bd.iter()) {
            *o = apply(x, y);
        }
    } else {
        for_each_broadcast2(&out_shape, a.shape(), b.shape(), |oi, ai, bi| {
            out[oi] = apply(ad[ai], bd[bi]);
        });
    }
    drop(ad);
    drop(bd);
    let track = tracked(tape, &[a, b]);
    let result = Tensor::op_output(out_shape.clone(), out, track);
    if track {
        let a_c = a.clone();
        let b_c = b.clone();
        tape.unwrap().record(
            result.clone(),
            vec![a_c, b_c],
            Box::new(move |args: &BackwardArgs<'_>| {
                backward_elementwise(kind, args);
            }),
        );
    }
    Ok(result)
}

fn backward_elementwise(kind: BinaryKind, args: &BackwardArgs<'_>) {
    let a = &args.inputs[0];
    let b = &args.inputs[1];
    let g = args.grad;
    let out_shape = args.output.shape();
    let (na, nb) = (a.numel(), b.numel());
    let mut ga = if a.requires_grad() { Some(vec![0f64; na]) } else { None };
    let mut gb = if b.requires_grad() { Some(vec![0f64; nb]) } else { None };
    {
        let ad = a.data();
        let bd = b.data();
        for_each_broadcast2(out_shape, a.shape(), b.shape(), |oi, ai, bi| {
            let go = g[oi] as f64;
            match kind {
                BinaryKind::Add => {
                    if let Some(ga) = ga.as_mut() {
                        ga[ai] += go;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[bi] += go;
                    }
                }
                BinaryKind::Sub => {
                    if let Some(ga) = ga.as_mut() {
                        ga[ai] += go;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[bi] -= go;
                    }
                }
                BinaryKind::Mul => {
                    if let Some(ga) = ga.as_mut() {
                        ga[ai] += go * bd[bi] as f64;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[bi] += go * ad[ai] as f64;
                    }
                }
                BinaryKind::Div => {
                    let bv = bd[bi] as f64;
                    if let Some(ga) = ga.as_mut() {
                        ga[ai] += go / bv;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[bi] -= go * ad[ai] as f64 / (bv * bv);
                    }
                }
            }
        });
    }
    if let Some(ga) = ga {
        a.accum_grad(&ga.iter().map(|&v| v as f32).collect::<Vec<_>>());
    }
    if let Some(gb) = gb {
        b.accum_grad(&gb.iter().map(|&v| v as f32).collect::<Vec<_>>());
    }
}

pub fn add(tape: Option<&Tape>, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(tape, BinaryKind::Add, a, b)
}

pub fn sub(tape: Option<&Tape>, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(tape, BinaryKind::Sub, a, b)
}

pub fn mul(tape: Option<&Tape>, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(tape, BinaryKind::Mul, a, b)
}

pub fn div(tape: Option<&Tape>, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(tape, BinaryKind::Div, a, b)
}

/// Elementwise `scale * x + shift` with constant coefficients.
pub fn affine(tape: Option<&Tape>, x: &Tensor, scale: f32, shift: f32) -> Tensor {
    let out: Vec<f32> = x.data().iter().map(|&v| scale * v + shift).collect();
    let track = tracked(tape, &[x]);
    let result = Tensor::op_output(x.shape().to_vec(), out, track);
    if track {
        tape.unwrap().record(
            result.clone(),
            vec![x.clone()],
            Box::new(move |args: &BackwardArgs<'_>| {
                let gx: Vec<f32> = args.grad.iter().map(|&g| g * scale).collect();
                args.inputs[0].accum_grad(&gx);
            }),
        );
    }
    result
}

pub fn neg(tape: Option<&Tape>, x: &Tensor) -> Tensor {
    affine(tape, x, -1.0, 0.0)
}

fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe softplus: identity above the threshold, below fp32 exp overflow.
const SOFTPLUS_LINEAR_THRESHOLD: f32 = 20.0;

fn softplus_scalar(x: f32) -> f32 {
    if x > SOFTPLUS_LINEAR_THRESHOLD {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn unary(
    tape: Option<&Tape>,
    x: &Tensor,
    fwd: impl Fn(f32) -> f32,
    // (x, y, g) -> dL/dx
    bwd: impl Fn(f32, f32, f32) -> f32 + 'static,
) -> Tensor {
    let out: Vec<f32> = x.data().iter().map(|&v| fwd(v)).collect();
    let track = tracked(tape, &[x]);
    let result = Tensor::op_output(x.shape().to_vec(), out, track);
    if track {
        tape.unwrap().record(
            result.clone(),
            vec![x.clone()],
            Box::new(move |args: &BackwardArgs<'_>| {
                let xd = args.inputs[0].data();
                let yd = args.output.data();
                let gx: Vec<f32> = args
                    .grad
                    .iter()
                    .zip(xd.iter())
                    .zip(yd.iter())
                    .map(|((&g, &xv), &yv)| bwd(xv, yv, g))
                    .collect();
                drop(xd);
                drop(yd);
                args.inputs[0].accum_grad(&gx);
            }),
        );
    }
    result
}

pub fn exp(tape: Option<&Tape>, x: &Tensor) -> Tensor {
    unary(tape, x, |v| v.exp(), |_, y, g| g * y)
}

pub fn log(tape: Option<&Tape>, x: &Tensor) -> Result<Tensor> {
    if let Some(&bad) = x.data().iter().find(|&&v| v <= 0.0) {
        return Err(Error::domain("log", format!("non-positive input {bad}")));
    }
    Ok(unary(tape, x, |v| v.ln(), |xv, _, g| g / xv))
}

pub fn sqrt(tape: Option<&Tape>, x: &Tensor) -> Result<Tensor> {
    if let Some(&bad) = x.data().iter().find(|&&v| v < 0.0) {
        return Err(Error::domain("sqrt", format!("negative input {bad}")));
    }
    Ok(unary(tape, x, |v| v.sqrt(), |_, y, g| g * 0.5 / y))
}

pub fn sigmoid(tape: Option<&Tape>, x: &Tensor) -> Tensor {
    unary(tape, x, sigmoid_scalar, |_, y, g| g * y * (1.0 - y))
}

pub fn silu(tape: Option<&Tape>, x: &Tensor) -> Tensor {
    unary(
        tape,
        x,
        |v| v * sigmoid_scalar(v),
        |xv, _, g| {
            let s = sigmoid_scalar(xv);
            g * (s + xv * s * (1.0 - s))
        },
    )
}

pub fn softplus(tape: Option<&Tape>, x: &Tensor) -> Tensor {
    unary(tape, x, softplus_scalar, |xv, _, g| g * sigmoid_scalar(xv))
}

pub fn activation(tape: Option<&Tape>, kind: Activation, x: &Tensor) -> Result<Tensor> {
    match kind {
        Activation::Silu => Ok(silu(tape, x)),
        Activation::Softplus => Ok(softplus(tape, x)),
        Activation::Sigmoid => Ok(sigmoid(tape, x)),
        Activation::Exp => Ok(exp(tape, x)),
        Activation::Log => log(tape, x),
    }
}

/// Clamp to [lo, hi]; gradient passes through inside the closed interval.
pub fn clamp(tape: Option<&Tape>, x: &Tensor, lo: f32, hi: f32) -> Tensor {
    unary(
        tape,
        x,
        move |v| v.clamp(lo, hi),
        move |xv, _, g| if xv >= lo && xv <= hi { g } else { 0.0 },
    )
}

fn normalize_axes(op: &'static str, rank: usize, axes: &[usize]) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = Vec::with_capacity(axes.len());
    for &a in axes {
        if a >= rank {
            return Err(Error::invalid(
                op,
                format!("axis {a} out of range for rank {rank}"),
            ));
        }
        if !out.contains(&a) {
            out.push(a);
        }
    }
    out.sort_unstable();
    Ok(out)
}

fn reduce_impl(
    tape: Option<&Tape>,
    op: &'static str,
    x: &Tensor,
    axes: &[usize],
    keepdim: bool,
    mean: bool,
) -> Result<Tensor> {
    let rank = x.shape().len();
    let axes = normalize_axes(op, rank, axes)?;
    // Shape with reduced axes kept as size 1; drives the index mapping both ways.
    let mut kept = x.shape().to_vec();
    let mut count = 1usize;
    for &a in &axes {
        count *= kept[a];
        kept[a] = 1;
    }
    let scale = if mean { 1.0 / count as f64 } else { 1.0 };
    let mut acc = vec![0f64; numel(&kept)];
    {
        let xd = x.data();
        for_each_broadcast2(x.shape(), &kept, x.shape(), |_, ki, xi| {
            acc[ki] += xd[xi] as f64;
        });
    }
    let out_data: Vec<f32> = acc.iter().map(|&v| (v * scale) as f32).collect();
    let out_shape: Vec<usize> = if keepdim {
        kept.clone()
    } else {
        x.shape()
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect()
    };
    let track = tracked(tape, &[x]);
    let result = Tensor::op_output(out_shape, out_data, track);
    if track {
        let kept_shape = kept;
        let x_shape = x.shape().to_vec();
        let scale32 = scale as f32;
        tape.unwrap().record(
            result.clone(),
            vec![x.clone()],
            Box::new(move |args: &BackwardArgs<'_>| {
                let mut gx = vec![0f32; numel(&x_shape)];
                for_each_broadcast2(&x_shape, &kept_shape, &x_shape, |_, ki, xi| {
                    gx[xi] = args.grad[ki] * scale32;
                });
                args.inputs[0].accum_grad(&gx);
            }),
        );
    }
    Ok(result)
}

pub fn sum_axes(tape: Option<&Tape>, x: &Tensor, axes: &[usize], keepdim: bool) -> Result<Tensor> {
    reduce_impl(tape, "sum", x, axes, keepdim, false)
}

pub fn mean_axes(tape: Option<&Tape>, x: &Tensor, axes: &[usize], keepdim: bool) -> Result<Tensor> {
    reduce_impl(tape, "mean", x, axes, keepdim, true)
}

pub fn sum_all(tape: Option<&Tape>, x: &Tensor) -> Tensor {
    let axes: Vec<usize> = (0..x.shape().len()).collect();
    reduce_impl(tape, "sum", x, &axes, false, false).expect("full reduction cannot fail")
}

pub fn mean_all(tape: Option<&Tape>, x: &Tensor) -> Tensor {
    let axes: Vec<usize> = (0..x.shape().len()).collect();
    reduce_impl(tape, "mean", x, &axes, false, true).expect("full reduction cannot fail")
}

fn matmul_raw(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    // out[i][j] = sum_k a[i][p] * b[p][j], accumulated in f64.
    let mut out = vec![0f32; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        let mut acc = vec![0f64; n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            let av = av as f64;
            for (accj, &bv) in acc.iter_mut().zip(brow.iter()) {
                *accj += av * bv as f64;
            }
        }
        for (o, &v) in orow.iter_mut().zip(acc.iter()) {
            *o = v as f32;
        }
    }
    out
}

/// 2-D matrix product (m,k) x (k,n) -> (m,n).
pub fn matmul(tape: Option<&Tape>, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let out = matmul_raw(&a.data(), &b.data(), m, k, n);
    let track = tracked(tape, &[a, b]);
    let result = Tensor::op_output(vec![m, n], out, track);
    if track {
        tape.unwrap().record(
            result.clone(),
            vec![a.clone(), b.clone()],
            Box::new(move |args: &BackwardArgs<'_>| {
                let a = &args.inputs[0];
                let b = &args.inputs[1];
                let g = args.grad;
                if a.requires_grad() {
                    // dA[i][p] = sum_j G[i][j] * B[p][j]
                    let bd = b.data();
                    let mut ga = vec![0f32; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let mut acc = 0f64;
                            for (&gv, &bv) in grow.iter().zip(brow.iter()) {
                                acc += gv as f64 * bv as f64;
                            }
                            ga[i * k + p] = acc as f32;
                        }
                    }
                    drop(bd);
                    a.accum_grad(&ga);
                }
                if b.requires_grad() {
                    // dB[p][j] = sum_i A[i][p] * G[i][j]
                    let ad = a.data();
                    let mut gb = vec![0f64; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let arow = &ad[i * k..(i + 1) * k];
                        for (p, &av) in arow.iter().enumerate() {
                            let av = av as f64;
                            let gbrow = &mut gb[p * n..(p + 1) * n];
                            for (gbj, &gv) in gbrow.iter_mut().zip(grow.iter()) {
                                *gbj += av * gv as f64;
                            }
                        }
                    }
                    drop(ad);
                    b.accum_grad(&gb.iter().map(|&v| v as f32).collect::<Vec<_>>());
                }
            }),
        );
    }
    Ok(result)
}

pub fn reshape(tape: Option<&Tape>, x: &Tensor, new_shape: &[usize]) -> Result<Tensor> {
    if numel(new_shape) != x.numel() {
        return Err(Error::invalid(
            "reshape",
            format!("cannot reshape {:?} to {:?}", x.shape(), new_shape),
        ));
    }
    let track = tracked(tape, &[x]);
    let result = Tensor::op_output(new_shape.to_vec(), x.to_vec(), track);
    if track {
        tape.unwrap().record(
            result.clone(),
            vec![x.clone()],
            Box::new(|args: &BackwardArgs<'_>| {
                args.inputs[0].accum_grad(args.grad);
            }),
        );
    }
    Ok(result)
}

/// Concatenate along `axis`; all other dimensions must match.
pub fn concat(tape: Option<&Tape>, parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::invalid("concat", "no tensors given"));
    }
    let rank = parts[0].shape().len();
    if axis >= rank {
        return Err(Error::invalid(
            "concat",
            format!("axis {axis} out of range for rank {rank}"),
        ));
    }
    let mut out_shape = parts[0].shape().to_vec();
    let mut axis_total = 0usize;
    for p in parts {
        if p.shape().len() != rank {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: parts[0].shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        for d in 0..rank {
            if d != axis && p.shape()[d] != out_shape[d] {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        axis_total += p.shape()[axis];
    }
    out_shape[axis] = axis_total;
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let mut out = vec![0f32; numel(&out_shape)];
    let row = axis_total * inner;
    let mut offset = 0usize;
    let mut part_meta = Vec::with_capacity(parts.len());
    for p in parts {
        let len = p.shape()[axis] * inner;
        let pd = p.data();
        for o in 0..outer {
            out[o * row + offset..o * row + offset + len].copy_from_slice(&pd[o * len..(o + 1) * len]);
        }
        part_meta.push((offset, len));
        offset += len;
    }
    let refs: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
    let track = tape.is_some() && refs.iter().any(|t| t.requires_grad());
    let result = Tensor::op_output(out_shape, out, track);
    if track {
        tape.unwrap().record(
            result.clone(),
            refs,
            Box::new(move |args: &BackwardArgs<'_>| {
                for (p, &(off, len)) in args.inputs.iter().zip(part_meta.iter()) {
                    if !p.requires_grad() {
                        continue;
                    }
                    let mut gp = vec![0f32; p.numel()];
                    for o in 0..outer {
                        gp[o * len..(o + 1) * len]
                            .copy_from_slice(&args.grad[o * row + off..o * row + off + len]);
                    }
                    p.accum_grad(&gp);
                }
            }),
        );
    }
    Ok(result)
}

/// Slice `len` indices starting at `start` along `axis`.
pub fn narrow(
    tape: Option<&Tape>,
    x: &Tensor,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Tensor> {
    let rank = x.shape().len();
    if axis >= rank {
        return Err(Error::invalid(
            "narrow",
            format!("axis {axis} out of range for rank {rank}"),
        ));
    }
    if start + len > x.shape()[axis] {
        return Err(Error::invalid(
            "narrow",
            format!(
                "range {start}..{} exceeds axis size {}",
                start + len,
                x.shape()[axis]
            ),
        ));
    }
    let mut out_shape = x.shape().to_vec();
    out_shape[axis] = len;
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let src_row = x.shape()[axis] * inner;
    let dst_row = len * inner;
    let mut out = vec![0f32; numel(&out_shape)];
    {
        let xd = x.data();
        for o in 0..outer {
            let src = &xd[o * src_row + start * inner..o * src_row + (start + len) * inner];
            out[o * dst_row..(o + 1) * dst_row].copy_from_slice(src);
        }
    }
    let track = tracked(tape, &[x]);
    let result = Tensor::op_output(out_shape, out, track);
    if track {
        tape.unwrap().record(
            result.clone(),
            vec![x.clone()],
            Box::new(move |args: &BackwardArgs<'_>| {
                let x = &args.inputs[0];
                let mut gx = vec![0f32; x.numel()];
                for o in 0..outer {
                    gx[o * src_row + start * inner..o * src_row + (start + len) * inner]
                        .copy_from_slice(&args.grad[o * dst_row..(o + 1) * dst_row]);
                }
                x.accum_grad(&gx);
            }),
        );
    }
    Ok(result)
}

/// Group normalization without affine parameters: per-group mean 0 and
/// variance 1. Accepts (C, H, W) or (N, C, H, W); `groups` must divide C.
pub fn group_normalize(
    tape: Option<&Tape>,
    x: &Tensor,
    groups: usize,
    eps: f32,
) -> Result<Tensor> {
    if eps <= 0.0 {
        return Err(Error::invalid("group_normalize", "eps must be > 0"));
    }
    let s = x.shape().to_vec();
    let (n, c) = match s.len() {
        3 => (1, s[0]),
        4 => (s[0], s[1]),
        _ => {
            return Err(Error::invalid(
                "group_normalize",
                format!("expected rank 3 or 4, got {s:?}"),
            ))
        }
    };
    if groups == 0 || c % groups != 0 {
        return Err(Error::invalid(
            "group_normalize",
            format!("group count {groups} does not divide {c} channels"),
        ));
    }
    let m = numel(&s) / (n * groups);
    let rows = n * groups;
    let xg = reshape(tape, x, &[rows, m])?;
    let mu = mean_axes(tape, &xg, &[1], true)?;
    let xc = sub(tape, &xg, &mu)?;
    let sq = mul(tape, &xc, &xc)?;
    let var = mean_axes(tape, &sq, &[1], true)?;
    let std = sqrt(tape, &affine(tape, &var, 1.0, eps))?;
    let normed = div(tape, &xc, &std)?;
    reshape(tape, &normed, &s)
}

/// Nearest-neighbor 2x spatial upsampling of an (N, C, H, W) tensor.
pub fn upsample_nearest_2x(tape: Option<&Tape>, x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::invalid(
            "upsample_nearest_2x",
            format!("expected rank-4 input, got {:?}", s),
        ));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0f32; n * c * oh * ow];
    {
        let xd = x.data();
        for plane in 0..n * c {
            let src = &xd[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for oy in 0..oh {
                let srow = &src[(oy / 2) * w..(oy / 2 + 1) * w];
                let drow = &mut dst[oy * ow..(oy + 1) * ow];
                for ox in 0..ow {
                    drow[ox] = srow[ox / 2];
                }
            }
        }
    }
    let track = tracked(tape, &[x]);
    let result = Tensor::op_output(vec![n, c, oh, ow], out, track);
    if track {
        tape.unwrap().record(
            result.clone(),
            vec![x.clone()],
            Box::new(move |args: &BackwardArgs<'_>| {
                let mut gx = vec![0f32; n * c * h * w];
                for plane in 0..n * c {
                    let gsrc = &args.grad[plane * oh * ow..(plane + 1) * oh * ow];
                    let gdst = &mut gx[plane * h * w..(plane + 1) * h * w];
                    for oy in 0..oh {
                        let grow = &gsrc[oy * ow..(oy + 1) * ow];
                        let drow = &mut gdst[(oy / 2) * w..(oy / 2 + 1) * w];
                        for ox in 0..ow {
                            drow[ox / 2] += grow[ox];
                        }
                    }
                }
                args.inputs[0].accum_grad(&gx);
            }),
        );
    }
    Ok(result)
}
