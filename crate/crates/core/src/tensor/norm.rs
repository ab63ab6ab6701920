//! Batch normalization.

use super::ops::Mode;
use super::{Elem, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Per-channel running mean/variance owned by a batchnorm layer.
pub struct RunningStats<'a, T: Elem> {
    pub mean: &'a mut [T],
    pub var: &'a mut [T],
}

/// Normalizes each channel of `[N,C,H,W]`. Training uses batch statistics and
/// folds them into `running` with the given momentum; evaluation reads `running`.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d<T: Elem>(
    input: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    running: Option<RunningStats<'_, T>>,
    mode: Mode,
    momentum: f64,
    epsilon: f64,
) -> Result<Var<T>> {
    let shape = input.shape().to_vec();
    let [n, c, h, w] = shape[..] else {
        return Err(Error::shape("batchnorm2d", format!("expected [N, C, H, W], got {shape:?}")));
    };
    for p in [gamma, beta] {
        if p.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "batchnorm2d",
                left: shape.clone(),
                right: p.shape().to_vec(),
            });
        }
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("batchnorm2d epsilon {epsilon} must be > 0")));
    }
    let plane = h * w;
    let count = n * plane;
    let x = input.data();
    let channel = move |ch: usize| (0..n).flat_map(move |s| ((s * c + ch) * plane)..((s * c + ch) * plane + plane));

    let mut mean = vec![0.0f64; c];
    let mut inv_std = vec![0.0f64; c];
    match mode {
        Mode::Train => {
            let mut batch_var = vec![0.0f64; c];
            for ch in 0..c {
                let m = channel(ch).map(|i| x[i].as_f64()).sum::<f64>() / count as f64;
                let v = channel(ch).map(|i| (x[i].as_f64() - m).powi(2)).sum::<f64>() / count as f64;
                mean[ch] = m;
                batch_var[ch] = v;
                inv_std[ch] = 1.0 / (v + epsilon).sqrt();
            }
            if let Some(rs) = running {
                let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
                for ch in 0..c {
                    let rm = rs.mean[ch].as_f64();
                    let rv = rs.var[ch].as_f64();
                    rs.mean[ch] = T::from_f64_lossy((1.0 - momentum) * rm + momentum * mean[ch]);
                    rs.var[ch] = T::from_f64_lossy((1.0 - momentum) * rv + momentum * batch_var[ch] * unbias);
                }
            }
        }
        Mode::Eval => {
            let rs = running.ok_or(Error::MissingRunningStats)?;
            for ch in 0..c {
                mean[ch] = rs.mean[ch].as_f64();
                inv_std[ch] = 1.0 / (rs.var[ch].as_f64() + epsilon).sqrt();
            }
        }
    }

    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for ch in 0..c {
        let (m, is) = (mean[ch], inv_std[ch]);
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for i in channel(ch) {
            let xh = T::from_f64_lossy((x[i].as_f64() - m) * is);
            xhat[i] = xh;
            out[i] = g * xh + b;
        }
    }
    let out = Tensor::from_vec(&shape, out)?;
    let (gc, xc) = (gamma.clone(), input.clone());
    Ok(Var::from_op(
        out,
        "batchnorm2d",
        vec![input.clone(), gamma.clone(), beta.clone()],
        move |gout| {
            let mut sum_dy = vec![0.0f64; c];
            let mut sum_dy_xhat = vec![0.0f64; c];
            for ch in 0..c {
                for i in channel(ch) {
                    let dy = gout[i].as_f64();
                    sum_dy[ch] += dy;
                    sum_dy_xhat[ch] += dy * xhat[i].as_f64();
                }
            }
            let gx = xc.requires_grad().then(|| {
                let mut gx = vec![T::zero(); gout.len()];
                for ch in 0..c {
                    let gscale = gc.data()[ch].as_f64() * inv_std[ch];
                    for i in channel(ch) {
                        let dy = gout[i].as_f64();
                        let v = match mode {
                            Mode::Train => {
                                gscale / count as f64
                                    * (count as f64 * dy - sum_dy[ch] - xhat[i].as_f64() * sum_dy_xhat[ch])
                            }
                            Mode::Eval => gscale * dy,
                        };
                        gx[i] = T::from_f64_lossy(v);
                    }
                }
                gx
            });
            let ggamma = sum_dy_xhat.iter().map(|&v| T::from_f64_lossy(v)).collect();
            let gbeta = sum_dy.iter().map(|&v| T::from_f64_lossy(v)).collect();
            vec![gx, Some(ggamma), Some(gbeta)]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn param(shape: &[usize], data: Vec<f64>) -> Var<f64> {
        Var::parameter(Tensor::from_vec(shape, data).unwrap())
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|_| rng.gen_range(-5.0..9.0)).collect();
        let x = param(&[2, 3, 4, 4], data);
        let y = batchnorm2d(&x, &param(&[3], vec![1.0; 3]), &param(&[3], vec![0.0; 3]), None, Mode::Train, 0.1, 1e-5)
            .unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|s| y.data()[(s * 3 + ch) * 16..(s * 3 + ch + 1) * 16].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / 32.0;
            let v = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 32.0;
            assert!(m.abs() < 1e-4, "mean {m}");
            assert!((v - 1.0).abs() < 1e-4, "var {v}");
        }
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let x = param(&[2, 2, 2, 2], (0..16).map(|i| i as f64 * 0.7 - 3.0).collect());
        let y = batchnorm2d(&x, &param(&[2], vec![0.0; 2]), &param(&[2], vec![0.25, -1.5]), None, Mode::Train, 0.1, 1e-5)
            .unwrap();
        for s in 0..2 {
            assert!(y.data()[s * 8..s * 8 + 4].iter().all(|&v| v == 0.25));
            assert!(y.data()[s * 8 + 4..s * 8 + 8].iter().all(|&v| v == -1.5));
        }
    }

    #[test]
    fn eval_without_running_stats_is_rejected() {
        let x = param(&[1, 1, 2, 2], vec![1.0; 4]);
        let r = batchnorm2d(&x, &param(&[1], vec![1.0]), &param(&[1], vec![0.0]), None, Mode::Eval, 0.1, 1e-5);
        assert!(matches!(r, Err(Error::MissingRunningStats)));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = param(&[1, 1, 1, 2], vec![1.0, 3.0]);
        let (mut m, mut v) = (vec![0.0], vec![1.0]);
        batchnorm2d(
            &x,
            &param(&[1], vec![1.0]),
            &param(&[1], vec![0.0]),
            Some(RunningStats { mean: &mut m, var: &mut v }),
            Mode::Train,
            0.1,
            1e-5,
        )
        .unwrap();
        assert!((m[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance of {1, 3} is 2
        assert!((v[0] - (0.9 + 0.2)).abs() < 1e-12);
    }
}
