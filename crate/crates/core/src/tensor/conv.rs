//! Convolutions and spatial pooling over `[N, C, H, W]` tensors.
//!
//! Dense convolution lowers each sample to an im2col matrix and runs one GEMM;
//! 1×1 stride-1 convolutions skip the lowering entirely.

use super::{matmul_into, Elem, Tensor, Var};
use crate::error::{Error, Result};

/// Output extent of a convolution or pooling window along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn rank4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        &[n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::shape(op, format!("expected [N, C, H, W], got {shape:?}"))),
    }
}

fn geometry(
    op: &'static str,
    input: &[usize],
    weight: &[usize],
    depthwise: bool,
    stride: usize,
    pad: usize,
) -> Result<Geometry> {
    let [n, c, h, w] = rank4(op, input)?;
    let [k, wc, kh, kw] = rank4(op, weight)?;
    let expected_c = if depthwise { 1 } else { c };
    if wc != expected_c || (depthwise && k != c) {
        return Err(Error::ShapeMismatch {
            op,
            left: input.to_vec(),
            right: weight.to_vec(),
        });
    }
    if stride == 0 {
        return Err(Error::invalid(format!("{op}: stride must be >= 1")));
    }
    let (Some(oh), Some(ow)) = (
        conv_out_len(h, kh, stride, pad),
        conv_out_len(w, kw, stride, pad),
    ) else {
        return Err(Error::ShapeMismatch {
            op,
            left: input.to_vec(),
            right: weight.to_vec(),
        });
    };
    Ok(Geometry {
        n,
        c,
        h,
        w,
        k,
        kh,
        kw,
        oh,
        ow,
        stride,
        pad,
    })
}

/// Writes one sample's patches into `col`, whose rows are `ld` wide, starting
/// at column `offset`.
fn im2col<T: Elem>(g: &Geometry, x: &[T], col: &mut [T], ld: usize, offset: usize) {
    let plane = g.out_plane();
    for c in 0..g.c {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut col[((c * g.kh + i) * g.kw + j) * ld + offset..][..plane];
                let xs = tap_range(j, g.pad, g.stride, g.w, g.ow);
                let valid_y = tap_range(i, g.pad, g.stride, g.h, g.oh);
                for oy in 0..g.oh {
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if !valid_y.contains(&oy) || xs.is_empty() {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &xc[(oy * g.stride + i - g.pad) * g.w..][..g.w];
                    dst[..xs.start].fill(T::zero());
                    dst[xs.end..].fill(T::zero());
                    if g.stride == 1 {
                        dst[xs.clone()].copy_from_slice(&src[xs.start + j - g.pad..xs.end + j - g.pad]);
                    } else {
                        for ox in xs.clone() {
                            dst[ox] = src[ox * g.stride + j - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Elem>(g: &Geometry, col: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &col[((c * g.kh + i) * g.kw + j) * plane..][..plane];
                let xs = tap_range(j, g.pad, g.stride, g.w, g.ow);
                for oy in tap_range(i, g.pad, g.stride, g.h, g.oh) {
                    let dst = &mut dxc[(oy * g.stride + i - g.pad) * g.w..][..g.w];
                    let src = &row[oy * g.ow..][..g.ow];
                    for ox in xs.clone() {
                        let ix = ox * g.stride + j - g.pad;
                        dst[ix] = dst[ix] + src[ox];
                    }
                }
            }
        }
    }
}

fn check_bias<T: Elem>(op: &'static str, bias: Option<&Var<T>>, k: usize, weight: &[usize]) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [k] => Err(Error::ShapeMismatch {
            op,
            left: weight.to_vec(),
            right: b.shape().to_vec(),
        }),
        _ => Ok(()),
    }
}

fn bias_grad<T: Elem>(g: &[T], n: usize, k: usize, plane: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; k];
    for s in 0..n {
        for (kk, a) in acc.iter_mut().enumerate() {
            let off = (s * k + kk) * plane;
            *a += g[off..off + plane].iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    acc.into_iter().map(T::from_f64_lossy).collect()
}

/// Output positions along one axis whose input index `o·stride + tap − pad`
/// falls inside `0..input`.
fn tap_range(tap: usize, pad: usize, stride: usize, input: usize, output: usize) -> std::ops::Range<usize> {
    let start = pad.saturating_sub(tap).div_ceil(stride).min(output);
    let end = if input + pad > tap {
        (input + pad - tap).div_ceil(stride).min(output)
    } else {
        0
    };
    start..end.max(start)
}

/// Samples sharing one product in the forward pass, so that small output
/// planes still give the matrix product a wide right-hand side.
fn group_size(plane: usize, n: usize) -> usize {
    const MIN_COLUMNS: usize = 256;
    MIN_COLUMNS.div_ceil(plane).clamp(1, n.max(1))
}

/// 2-D cross-correlation: `input [N,C,H,W]`, `weight [K,C,kh,kw]` → `[N,K,H',W']`
/// with `H' = (H + 2·padding − kh)/stride + 1`.
pub fn conv2d<T: Elem>(
    input: &Var<T>,
    weight: &Var<T>,
    bias: Option<&Var<T>>,
    stride: usize,
    padding: usize,
) -> Result<Var<T>> {
    let g = geometry("conv2d", input.shape(), weight.shape(), false, stride, padding)?;
    check_bias("conv2d bias", bias, g.k, weight.shape())?;
    let plane = g.out_plane();
    let rows = g.col_rows();
    let in_sample = g.c * g.h * g.w;
    let out_sample = g.k * plane;
    let mut out = vec![T::zero(); g.n * out_sample];
    let group = group_size(plane, g.n);
    let mut col = if g.is_pointwise() && group == 1 {
        Vec::new()
    } else {
        vec![T::zero(); rows * plane * group]
    };
    let mut product = vec![T::zero(); if group > 1 { g.k * plane * group } else { 0 }];
    for first in (0..g.n).step_by(group) {
        let count = group.min(g.n - first);
        let width = count * plane;
        for j in 0..count {
            let xs = &input.data()[(first + j) * in_sample..][..in_sample];
            if !g.is_pointwise() {
                im2col(&g, xs, &mut col, width, j * plane);
            } else if count > 1 {
                for (c, src) in xs.chunks(plane).enumerate() {
                    col[c * width + j * plane..][..plane].copy_from_slice(src);
                }
            }
        }
        let src: &[T] = if g.is_pointwise() && count == 1 {
            &input.data()[first * in_sample..][..in_sample]
        } else {
            &col[..rows * width]
        };
        let dst = &mut out[first * out_sample..(first + count) * out_sample];
        if count == 1 {
            matmul_into(weight.data(), false, src, false, g.k, rows, plane, dst, false);
        } else {
            let product = &mut product[..g.k * width];
            matmul_into(weight.data(), false, src, false, g.k, rows, width, product, false);
            for j in 0..count {
                for kk in 0..g.k {
                    dst[(j * g.k + kk) * plane..][..plane].copy_from_slice(&product[kk * width + j * plane..][..plane]);
                }
            }
        }
        if let Some(b) = bias {
            for (chunk, &bv) in dst.chunks_mut(plane).zip(b.data().iter().cycle()) {
                chunk.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    let out = Tensor::from_vec(&[g.n, g.k, g.oh, g.ow], out)?;
    let mut parents = vec![input.clone(), weight.clone()];
    parents.extend(bias.cloned());
    let has_bias = bias.is_some();
    let (xc, wc) = (input.clone(), weight.clone());
    Ok(Var::from_op(out, "conv2d", parents, move |gout| {
        let need_x = xc.requires_grad();
        let need_w = wc.requires_grad();
        let mut gx = need_x.then(|| vec![T::zero(); g.n * in_sample]);
        let mut gw = need_w.then(|| vec![T::zero(); g.k * rows]);
        let mut col = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * plane }];
        for s in 0..g.n {
            let go = &gout[s * out_sample..(s + 1) * out_sample];
            if let Some(gw) = gw.as_mut() {
                let xs = &xc.data()[s * in_sample..(s + 1) * in_sample];
                let src: &[T] = if g.is_pointwise() {
                    xs
                } else {
                    im2col(&g, xs, &mut col, plane, 0);
                    &col
                };
                matmul_into(go, false, src, true, g.k, plane, rows, gw, true);
            }
            if let Some(gx) = gx.as_mut() {
                let dst = &mut gx[s * in_sample..(s + 1) * in_sample];
                if g.is_pointwise() {
                    matmul_into(wc.data(), true, go, false, rows, g.k, plane, dst, false);
                } else {
                    matmul_into(wc.data(), true, go, false, rows, g.k, plane, &mut col, false);
                    col2im_add(&g, &col, dst);
                }
            }
        }
        let mut grads = vec![gx, gw];
        if has_bias {
            grads.push(Some(bias_grad(gout, g.n, g.k, plane)));
        }
        grads
    }))
}

/// Per-channel convolution: `weight [C,1,kh,kw]`, one filter per input channel.
pub fn depthwise_conv2d<T: Elem>(
    input: &Var<T>,
    weight: &Var<T>,
    bias: Option<&Var<T>>,
    stride: usize,
    padding: usize,
) -> Result<Var<T>> {
    let g = geometry("depthwise_conv2d", input.shape(), weight.shape(), true, stride, padding)?;
    check_bias("depthwise_conv2d bias", bias, g.k, weight.shape())?;
    let (in_plane, out_plane, ksz) = (g.h * g.w, g.out_plane(), g.kh * g.kw);
    let mut out = vec![T::zero(); g.n * g.c * out_plane];
    let x = input.data();
    let wt = weight.data();
    for s in 0..g.n {
        for c in 0..g.c {
            let xp = &x[(s * g.c + c) * in_plane..][..in_plane];
            let wk = &wt[c * ksz..(c + 1) * ksz];
            let op = &mut out[(s * g.c + c) * out_plane..][..out_plane];
            op.fill(bias.map_or(T::zero(), |b| b.data()[c]));
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let wv = wk[i * g.kw + j];
                    let xs = tap_range(j, g.pad, g.stride, g.w, g.ow);
                    for oy in tap_range(i, g.pad, g.stride, g.h, g.oh) {
                        let row = &xp[(oy * g.stride + i - g.pad) * g.w..][..g.w];
                        let dst = &mut op[oy * g.ow..][..g.ow];
                        for ox in xs.clone() {
                            dst[ox] = dst[ox] + wv * row[ox * g.stride + j - g.pad];
                        }
                    }
                }
            }
        }
    }
    let out = Tensor::from_vec(&[g.n, g.c, g.oh, g.ow], out)?;
    let mut parents = vec![input.clone(), weight.clone()];
    parents.extend(bias.cloned());
    let has_bias = bias.is_some();
    let (xc, wc) = (input.clone(), weight.clone());
    Ok(Var::from_op(out, "depthwise_conv2d", parents, move |gout| {
        let need_x = xc.requires_grad();
        let need_w = wc.requires_grad();
        let mut gx = vec![T::zero(); if need_x { g.n * g.c * in_plane } else { 0 }];
        let mut gw = vec![T::zero(); if need_w { g.c * ksz } else { 0 }];
        let (x, wt) = (xc.data(), wc.data());
        for s in 0..g.n {
            for c in 0..g.c {
                let base_in = (s * g.c + c) * in_plane;
                let go = &gout[(s * g.c + c) * out_plane..][..out_plane];
                for i in 0..g.kh {
                    for j in 0..g.kw {
                        let wi = c * ksz + i * g.kw + j;
                        let wv = wt[wi];
                        let mut acc = T::zero();
                        let xs = tap_range(j, g.pad, g.stride, g.w, g.ow);
                        for oy in tap_range(i, g.pad, g.stride, g.h, g.oh) {
                            let row = base_in + (oy * g.stride + i - g.pad) * g.w;
                            let grow = &go[oy * g.ow..][..g.ow];
                            for ox in xs.clone() {
                                let xi = row + ox * g.stride + j - g.pad;
                                if need_w {
                                    acc = acc + grow[ox] * x[xi];
                                }
                                if need_x {
                                    gx[xi] = gx[xi] + grow[ox] * wv;
                                }
                            }
                        }
                        if need_w {
                            gw[wi] = gw[wi] + acc;
                        }
                    }
                }
            }
        }
        let mut grads = vec![need_x.then_some(gx), need_w.then_some(gw)];
        if has_bias {
            grads.push(Some(bias_grad(gout, g.n, g.c, out_plane)));
        }
        grads
    }))
}

/// Mean over each `H×W` plane: `[N,C,H,W]` → `[N,C]`.
pub fn global_avg_pool<T: Elem>(input: &Var<T>) -> Result<Var<T>> {
    let [n, c, h, w] = rank4("global_avg_pool", input.shape())?;
    let plane = h * w;
    let out: Vec<T> = input
        .data()
        .chunks(plane)
        .map(|p| T::from_f64_lossy(p.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64))
        .collect();
    let out = Tensor::from_vec(&[n, c], out)?;
    Ok(Var::from_op(out, "global_avg_pool", vec![input.clone()], move |g| {
        let inv = T::from_f64_lossy(1.0 / plane as f64);
        let mut gi = Vec::with_capacity(n * c * plane);
        for &gv in g {
            gi.extend(std::iter::repeat(gv * inv).take(plane));
        }
        vec![Some(gi)]
    }))
}

/// Max pooling with implicit `-inf` padding.
pub fn max_pool2d<T: Elem>(input: &Var<T>, kernel: usize, stride: usize, padding: usize) -> Result<Var<T>> {
    let [n, c, h, w] = rank4("max_pool2d", input.shape())?;
    let (Some(oh), Some(ow)) = (
        conv_out_len(h, kernel, stride, padding),
        conv_out_len(w, kernel, stride, padding),
    ) else {
        return Err(Error::shape("max_pool2d", format!("window {kernel} too large for {:?}", input.shape())));
    };
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = usize::MAX;
                for i in 0..kernel {
                    let iy = (oy * stride + i) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for j in 0..kernel {
                        let ix = (ox * stride + j) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if best_i == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_i = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_i);
            }
        }
    }
    let out = Tensor::from_vec(&[n, c, oh, ow], out)?;
    let total = n * c * h * w;
    Ok(Var::from_op(out, "max_pool2d", vec![input.clone()], move |g| {
        let mut gi = vec![T::zero(); total];
        for (&idx, &gv) in argmax.iter().zip(g) {
            gi[idx] = gi[idx] + gv;
        }
        vec![Some(gi)]
    }))
}

/// Average pooling without padding.
pub fn avg_pool2d<T: Elem>(input: &Var<T>, kernel: usize, stride: usize) -> Result<Var<T>> {
    let [n, c, h, w] = rank4("avg_pool2d", input.shape())?;
    let (Some(oh), Some(ow)) = (conv_out_len(h, kernel, stride, 0), conv_out_len(w, kernel, stride, 0)) else {
        return Err(Error::shape("avg_pool2d", format!("window {kernel} too large for {:?}", input.shape())));
    };
    let x = input.data();
    let inv = 1.0 / (kernel * kernel) as f64;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f64;
                for i in 0..kernel {
                    let row = base + (oy * stride + i) * w + ox * stride;
                    acc += x[row..row + kernel].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                out.push(T::from_f64_lossy(acc * inv));
            }
        }
    }
    let out = Tensor::from_vec(&[n, c, oh, ow], out)?;
    Ok(Var::from_op(out, "avg_pool2d", vec![input.clone()], move |g| {
        let mut gi = vec![T::zero(); n * c * h * w];
        let inv = T::from_f64_lossy(inv);
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = g[(p * oh + oy) * ow + ox] * inv;
                    for i in 0..kernel {
                        let row = base + (oy * stride + i) * w + ox * stride;
                        gi[row..row + kernel].iter_mut().for_each(|v| *v = *v + gv);
                    }
                }
            }
        }
        vec![Some(gi)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::sum;

    fn t(shape: &[usize], data: Vec<f64>) -> Var<f64> {
        Var::parameter(Tensor::from_vec(shape, data).unwrap())
    }

    #[test]
    fn unit_kernel_scales_input() {
        let x = t(&[1, 1, 3, 3], vec![1.0; 9]);
        let w = t(&[1, 1, 1, 1], vec![2.0]);
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn grouped_samples_match_one_at_a_time() {
        let mut state = 7u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let n = 37;
        let x: Vec<f64> = (0..n * 3 * 5 * 5).map(|_| next()).collect();
        for (kh, stride, pad) in [(1, 1, 0), (3, 2, 1), (3, 1, 1)] {
            let w: Vec<f64> = (0..4 * 3 * kh * kh).map(|_| next()).collect();
            let bias = t(&[4], vec![0.1, -0.2, 0.3, 0.0]);
            let weight = t(&[4, 3, kh, kh], w);
            let batched = conv2d(&t(&[n, 3, 5, 5], x.clone()), &weight, Some(&bias), stride, pad).unwrap();
            let per_sample = batched.data().len() / n;
            for (s, image) in x.chunks(75).enumerate() {
                let one = conv2d(&t(&[1, 3, 5, 5], image.to_vec()), &weight, Some(&bias), stride, pad).unwrap();
                for (a, b) in one.data().iter().zip(&batched.data()[s * per_sample..]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let (n, c, h, w, k) = (3, 2, 7, 6, 3);
        let x: Vec<f64> = (0..n * c * h * w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        for (kk, stride, pad) in [(3, 1, 1), (3, 2, 1), (5, 2, 2), (5, 1, 0), (3, 3, 2), (7, 2, 3), (1, 2, 0)] {
            let wt: Vec<f64> = (0..k * c * kk * kk).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
            let xv = t(&[n, c, h, w], x.clone());
            let y = conv2d(&xv, &t(&[k, c, kk, kk], wt.clone()), None, stride, pad).unwrap();
            let (oh, ow) = (y.shape()[2], y.shape()[3]);
            for s in 0..n {
                for o in 0..k {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for ch in 0..c {
                                for i in 0..kk {
                                    for j in 0..kk {
                                        let iy = (oy * stride + i) as isize - pad as isize;
                                        let ix = (ox * stride + j) as isize - pad as isize;
                                        if (0..h as isize).contains(&iy) && (0..w as isize).contains(&ix) {
                                            acc += wt[((o * c + ch) * kk + i) * kk + j]
                                                * x[((s * c + ch) * h + iy as usize) * w + ix as usize];
                                        }
                                    }
                                }
                            }
                            assert_eq!(y.data()[((s * k + o) * oh + oy) * ow + ox], acc);
                        }
                    }
                }
            }
            // Input gradient of the sum: each input counts the weights that touch it.
            sum(&y).backward().unwrap();
            let gx = xv.grad().unwrap();
            for s in 0..n {
                for ch in 0..c {
                    for yy in 0..h {
                        for xx in 0..w {
                            let mut acc = 0.0;
                            for o in 0..k {
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        let i = (yy + pad) as isize - (oy * stride) as isize;
                                        let j = (xx + pad) as isize - (ox * stride) as isize;
                                        if (0..kk as isize).contains(&i) && (0..kk as isize).contains(&j) {
                                            acc += wt[((o * c + ch) * kk + i as usize) * kk + j as usize];
                                        }
                                    }
                                }
                            }
                            assert_eq!(gx[((s * c + ch) * h + yy) * w + xx], acc, "{kk} {stride} {pad}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn depthwise_matches_direct_sum() {
        let (n, c, h, w) = (2, 3, 7, 6);
        let x: Vec<f64> = (0..n * c * h * w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (5, 2, 2), (5, 1, 0), (3, 3, 2)] {
            let wt: Vec<f64> = (0..c * k * k).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
            let y = depthwise_conv2d(&t(&[n, c, h, w], x.clone()), &t(&[c, 1, k, k], wt.clone()), None, stride, pad)
                .unwrap();
            let (oh, ow) = (y.shape()[2], y.shape()[3]);
            for s in 0..n {
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for i in 0..k {
                                for j in 0..k {
                                    let iy = (oy * stride + i) as isize - pad as isize;
                                    let ix = (ox * stride + j) as isize - pad as isize;
                                    if (0..h as isize).contains(&iy) && (0..w as isize).contains(&ix) {
                                        acc += wt[(ch * k + i) * k + j]
                                            * x[((s * c + ch) * h + iy as usize) * w + ix as usize];
                                    }
                                }
                            }
                            assert_eq!(y.data()[((s * c + ch) * oh + oy) * ow + ox], acc);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn stem_shape_follows_floor_formula() {
        let x = Var::<f32>::constant(Tensor::zeros(&[1, 3, 224, 224]));
        let w = Var::constant(Tensor::zeros(&[64, 3, 7, 7]));
        let y = conv2d(&x, &w, None, 2, 3).unwrap();
        assert_eq!(y.shape(), &[1, 64, 112, 112]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = t(&[1, 2, 4, 4], vec![0.0; 32]);
        let w = t(&[3, 4, 3, 3], vec![0.0; 108]);
        let msg = conv2d(&x, &w, None, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[3, 4, 3, 3]"), "{msg}");
    }

    #[test]
    fn pooling_arithmetic() {
        let x = t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.data(), &[2.5]);
        sum(&y).backward().unwrap();
        assert_eq!(*x.grad().unwrap(), vec![0.25; 4]);

        let c = t(&[1, 2, 3, 3], vec![1.75; 18]);
        assert_eq!(global_avg_pool(&c).unwrap().data(), &[1.75, 1.75]);

        let m = max_pool2d(&x, 2, 2, 0).unwrap();
        assert_eq!(m.data(), &[4.0]);
        let a = avg_pool2d(&x, 2, 2).unwrap();
        assert_eq!(a.data(), &[2.5]);
    }
}
