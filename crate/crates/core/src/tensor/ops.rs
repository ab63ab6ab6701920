//! Elementwise, dense and loss ops.

use rand::Rng;

use super::{matmul_into, Elem, Tensor, Var};
use crate::error::{Error, Result};

/// Whether stochastic layers and batch statistics are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Logistic function evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid_scalar<T: Elem>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn new_tensor<T: Elem>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::from_vec(shape, data).expect("op produced inconsistent shape")
}

fn same_shape<T: Elem>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn add<T: Elem>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    let out = new_tensor(a.shape(), data);
    Ok(Var::from_op(out, "add", vec![a.clone(), b.clone()], |g| {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }))
}

pub fn mul<T: Elem>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    let out = new_tensor(a.shape(), data);
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Var::from_op(out, "mul", vec![a.clone(), b.clone()], move |g| {
        let ga = g.iter().zip(bc.data()).map(|(&g, &y)| g * y).collect();
        let gb = g.iter().zip(ac.data()).map(|(&g, &x)| g * x).collect();
        vec![Some(ga), Some(gb)]
    }))
}

pub fn scale<T: Elem>(x: &Var<T>, c: f64) -> Var<T> {
    let c = T::from_f64_lossy(c);
    let out = x.value().map(|v| v * c);
    Var::from_op(out, "scale", vec![x.clone()], move |g| {
        vec![Some(g.iter().map(|&g| g * c).collect())]
    })
}

/// `Σ w_k · x_k` over equally shaped inputs.
pub fn weighted_sum<T: Elem>(xs: &[Var<T>], weights: &[f64]) -> Result<Var<T>> {
    if xs.is_empty() || xs.len() != weights.len() {
        return Err(Error::invalid(format!(
            "weighted_sum: {} inputs with {} weights",
            xs.len(),
            weights.len()
        )));
    }
    for x in &xs[1..] {
        same_shape("weighted_sum", &xs[0], x)?;
    }
    let len = xs[0].value().len();
    let mut acc = vec![0.0f64; len];
    for (x, &w) in xs.iter().zip(weights) {
        acc.iter_mut()
            .zip(x.data())
            .for_each(|(a, &v)| *a += w * v.as_f64());
    }
    let out = new_tensor(xs[0].shape(), acc.into_iter().map(T::from_f64_lossy).collect());
    let ws: Vec<T> = weights.iter().map(|&w| T::from_f64_lossy(w)).collect();
    Ok(Var::from_op(out, "weighted_sum", xs.to_vec(), move |g| {
        ws.iter()
            .map(|&w| Some(g.iter().map(|&g| g * w).collect()))
            .collect()
    }))
}

pub fn sum<T: Elem>(x: &Var<T>) -> Var<T> {
    let total: f64 = x.data().iter().map(|v| v.as_f64()).sum();
    let n = x.value().len();
    Var::from_op(
        Tensor::scalar(T::from_f64_lossy(total)),
        "sum",
        vec![x.clone()],
        move |g| vec![Some(vec![g[0]; n])],
    )
}

pub fn mean<T: Elem>(x: &Var<T>) -> Var<T> {
    let n = x.value().len();
    scale(&sum(x), 1.0 / n as f64)
}

pub fn relu<T: Elem>(x: &Var<T>) -> Var<T> {
    let out = x.value().map(|v| if v > T::zero() { v } else { T::zero() });
    let xc = x.clone();
    Var::from_op(out, "relu", vec![x.clone()], move |g| {
        let gi = g
            .iter()
            .zip(xc.data())
            .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
            .collect();
        vec![Some(gi)]
    })
}

pub fn sigmoid<T: Elem>(x: &Var<T>) -> Var<T> {
    let out = x.value().map(sigmoid_scalar);
    let s = out.data().to_vec();
    Var::from_op(out, "sigmoid", vec![x.clone()], move |g| {
        let gi = g
            .iter()
            .zip(&s)
            .map(|(&g, &s)| g * s * (T::one() - s))
            .collect();
        vec![Some(gi)]
    })
}

/// `x · σ(x)`, the activation used throughout the MBConv family.
pub fn silu<T: Elem>(x: &Var<T>) -> Var<T> {
    let out = x.value().map(|v| v * sigmoid_scalar(v));
    let xc = x.clone();
    Var::from_op(out, "silu", vec![x.clone()], move |g| {
        let gi = g
            .iter()
            .zip(xc.data())
            .map(|(&g, &v)| {
                let s = sigmoid_scalar(v);
                g * s * (T::one() + v * (T::one() - s))
            })
            .collect();
        vec![Some(gi)]
    })
}

pub fn reshape<T: Elem>(x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
    let out = x.to_tensor().reshape(shape)?;
    Ok(Var::from_op(out, "reshape", vec![x.clone()], |g| {
        vec![Some(g.to_vec())]
    }))
}

/// `input · weightᵀ + bias` for `input: [N, D_in]`, `weight: [D_out, D_in]`.
pub fn linear<T: Elem>(input: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
    let (xs, ws) = (input.shape(), weight.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
        return Err(Error::ShapeMismatch {
            op: "linear",
            left: xs.to_vec(),
            right: ws.to_vec(),
        });
    }
    let (n, din, dout) = (xs[0], xs[1], ws[0]);
    if let Some(b) = bias {
        if b.shape() != [dout] {
            return Err(Error::ShapeMismatch {
                op: "linear bias",
                left: ws.to_vec(),
                right: b.shape().to_vec(),
            });
        }
    }
    let mut out = vec![T::zero(); n * dout];
    matmul_into(input.data(), false, weight.data(), true, n, din, dout, &mut out, false);
    if let Some(b) = bias {
        for row in out.chunks_mut(dout) {
            row.iter_mut().zip(b.data()).for_each(|(o, &b)| *o = *o + b);
        }
    }
    let mut parents = vec![input.clone(), weight.clone()];
    parents.extend(bias.cloned());
    let has_bias = bias.is_some();
    let (xc, wc) = (input.clone(), weight.clone());
    Ok(Var::from_op(new_tensor(&[n, dout], out), "linear", parents, move |g| {
        let gx = xc.requires_grad().then(|| {
            let mut gx = vec![T::zero(); n * din];
            matmul_into(g, false, wc.data(), false, n, dout, din, &mut gx, false);
            gx
        });
        let gw = wc.requires_grad().then(|| {
            let mut gw = vec![T::zero(); dout * din];
            matmul_into(g, true, xc.data(), false, dout, n, din, &mut gw, false);
            gw
        });
        let mut grads = vec![gx, gw];
        if has_bias {
            let mut gb = vec![0.0f64; dout];
            for row in g.chunks(dout) {
                gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v.as_f64());
            }
            grads.push(Some(gb.into_iter().map(T::from_f64_lossy).collect()));
        }
        grads
    }))
}

/// Concatenation along axis 1 (features of `[N, d]` or channels of `[N, C, H, W]`).
pub fn concat<T: Elem>(xs: &[Var<T>]) -> Result<Var<T>> {
    if xs.len() < 2 {
        return Err(Error::invalid(format!(
            "concat needs at least two tensors, got {}",
            xs.len()
        )));
    }
    let first = xs[0].shape();
    if first.len() < 2 {
        return Err(Error::shape("concat", format!("rank {} < 2", first.len())));
    }
    for x in &xs[1..] {
        let s = x.shape();
        if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: first.to_vec(),
                right: s.to_vec(),
            });
        }
    }
    let n = first[0];
    let inner: usize = first[2..].iter().product();
    let widths: Vec<usize> = xs.iter().map(|x| x.shape()[1]).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * total * inner);
    for s in 0..n {
        for (x, &w) in xs.iter().zip(&widths) {
            let block = w * inner;
            out.extend_from_slice(&x.data()[s * block..(s + 1) * block]);
        }
    }
    let mut shape = first.to_vec();
    shape[1] = total;
    Ok(Var::from_op(new_tensor(&shape, out), "concat", xs.to_vec(), move |g| {
        let mut grads: Vec<Vec<T>> = widths
            .iter()
            .map(|&w| Vec::with_capacity(n * w * inner))
            .collect();
        let mut off = 0;
        for _ in 0..n {
            for (gk, &w) in grads.iter_mut().zip(&widths) {
                gk.extend_from_slice(&g[off..off + w * inner]);
                off += w * inner;
            }
        }
        grads.into_iter().map(Some).collect()
    }))
}

/// Multiplies each `[H, W]` plane of `x: [N, C, H, W]` by `gate: [N, C]`.
pub fn scale_channels<T: Elem>(x: &Var<T>, gate: &Var<T>) -> Result<Var<T>> {
    let (xs, gs) = (x.shape(), gate.shape());
    if xs.len() != 4 || gs != [xs[0], xs[1]] {
        return Err(Error::ShapeMismatch {
            op: "scale_channels",
            left: xs.to_vec(),
            right: gs.to_vec(),
        });
    }
    let plane = xs[2] * xs[3];
    let mut out = x.data().to_vec();
    for (chunk, &s) in out.chunks_mut(plane).zip(gate.data()) {
        chunk.iter_mut().for_each(|v| *v = *v * s);
    }
    let (xc, gc) = (x.clone(), gate.clone());
    Ok(Var::from_op(new_tensor(xs, out), "scale_channels", vec![x.clone(), gate.clone()], move |g| {
        let gx = xc.requires_grad().then(|| {
            let mut gx = g.to_vec();
            for (chunk, &s) in gx.chunks_mut(plane).zip(gc.data()) {
                chunk.iter_mut().for_each(|v| *v = *v * s);
            }
            gx
        });
        let gg = gc.requires_grad().then(|| {
            g.chunks(plane)
                .zip(xc.data().chunks(plane))
                .map(|(gp, xp)| {
                    let acc: f64 = gp.iter().zip(xp).map(|(&a, &b)| (a * b).as_f64()).sum();
                    T::from_f64_lossy(acc)
                })
                .collect()
        });
        vec![gx, gg]
    }))
}

/// Inverted dropout: in training each element is zeroed with probability `p`
/// and survivors are scaled by `1/(1-p)`; evaluation is the identity.
pub fn dropout<T: Elem, R: Rng + ?Sized>(
    x: &Var<T>,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x.clone());
    }
    let keep_scale = T::from_f64_lossy(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.value().len())
        .map(|_| {
            if rng.gen::<f64>() < p {
                T::zero()
            } else {
                keep_scale
            }
        })
        .collect();
    let out: Vec<T> = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok(Var::from_op(new_tensor(x.shape(), out), "dropout", vec![x.clone()], move |g| {
        vec![Some(g.iter().zip(&mask).map(|(&g, &m)| g * m).collect())]
    }))
}

/// Mean binary cross-entropy on logits, in the overflow-free form
/// `max(z,0) - z·y + ln(1 + e^{-|z|})`.
pub fn bce_with_logits<T: Elem>(logits: &Var<T>, labels: &Tensor<T>) -> Result<Var<T>> {
    let n = logits.value().len();
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "bce_with_logits",
            left: logits.shape().to_vec(),
            right: labels.shape().to_vec(),
        });
    }
    if let Some(bad) = labels.data().iter().find(|&&y| y != T::zero() && y != T::one()) {
        return Err(Error::invalid(format!(
            "bce_with_logits: label {} is not 0 or 1",
            bad.as_f64()
        )));
    }
    let total: f64 = logits
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&z, &y)| bce_term(z.as_f64(), y.as_f64()))
        .sum();
    let loss = Tensor::scalar(T::from_f64_lossy(total / n as f64));
    let (zc, y) = (logits.clone(), labels.data().to_vec());
    Ok(Var::from_op(loss, "bce_with_logits", vec![logits.clone()], move |g| {
        let scale = g[0] / T::from_f64_lossy(n as f64);
        let gz = zc
            .data()
            .iter()
            .zip(&y)
            .map(|(&z, &y)| (sigmoid_scalar(z) - y) * scale)
            .collect();
        vec![Some(gz)]
    }))
}

/// Single-sample stable BCE term.
#[inline]
pub fn bce_term(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}
