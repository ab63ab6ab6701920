//! Shared oracles for the integration tests.

#![allow(dead_code)]

pub mod arch;
pub mod counting;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retina_fusion::fusion::{FusionModel, FusionSpec};
use retina_fusion::nn::{Ctx, EntryKind};
use retina_fusion::tensor::ops::{self, Mode};
use retina_fusion::tensor::{conv, norm};
use retina_fusion::tensor::{Tensor, Var};
use retina_fusion::Result;

pub const STEP: f64 = 1e-6;

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Uniform values in `±[0.05, 1]`, away from the kinks of relu and pooling.
pub fn away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Largest relative error between the backward pass and central differences
/// of `Σ w ⊙ f(inputs)` for fixed random `w`, over every input coordinate.
pub fn op_gradient_error(inputs: &[Tensor<f64>], f: impl Fn(&[Var<f64>]) -> Result<Var<f64>>) -> f64 {
    let vars: Vec<Var<f64>> = inputs.iter().cloned().map(Var::parameter).collect();
    let out = f(&vars).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w = uniform(out.shape(), -1.0, 1.0, &mut rng);
    let loss = ops::sum(&ops::mul(&out, &Var::constant(w.clone())).unwrap());
    loss.backward().unwrap();

    let value = |ins: &[Tensor<f64>]| -> f64 {
        let consts: Vec<Var<f64>> = ins.iter().cloned().map(Var::constant).collect();
        let o = f(&consts).unwrap();
        o.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };
    let mut worst = 0.0f64;
    for (k, var) in vars.iter().enumerate() {
        let analytic = var.grad_vec().unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for j in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= STEP;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[j], numeric, 1e-6));
        }
    }
    worst
}

/// Training-mode BCE loss of `model` on `(x, y)` with a dropout generator
/// reseeded from `seed` on every call.
pub fn model_loss(model: &mut FusionModel<f64>, x: &Tensor<f64>, y: &Tensor<f64>, seed: u64, backward: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = Ctx::train(&mut model.store, &mut rng);
    let logits = model.arch.forward(&mut ctx, &Var::constant(x.clone())).unwrap();
    let loss = ops::bce_with_logits(&logits, y).unwrap();
    let value = loss.data()[0];
    if backward {
        loss.backward().unwrap();
        let bindings = ctx.finish();
        model.store.accumulate_grads(&bindings);
    }
    value
}

pub struct ModelGradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Compares backward gradients of a whole model with central differences at
/// `coords` sampled parameter coordinates (tensor uniformly, then element).
/// Relative errors are floored at 1e-3 of the largest sampled gradient.
pub fn model_gradient_check(spec: &FusionSpec, batch: usize, coords: usize, seed: u64) -> ModelGradCheck {
    let mut model = FusionModel::<f32>::seeded(spec, seed).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let s = model.input_size();
    let x = uniform(&[batch, 3, s, s], -2.0, 2.0, &mut rng);
    let y = Tensor::from_vec(&[batch], (0..batch).map(|i| (i % 2) as f64).collect()).unwrap();
    model.store.zero_grad();
    model_loss(&mut model, &x, &y, seed, true);

    let params: Vec<usize> = model
        .store
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EntryKind::Param)
        .map(|(i, _)| i)
        .collect();
    let mut samples = Vec::with_capacity(coords);
    for _ in 0..coords {
        let p = params[rng.gen_range(0..params.len())];
        let len = model.store.entries()[p].tensor.len();
        let idx = rng.gen_range(0..len);
        let analytic = model.store.entries()[p].tensor.grad().map_or(0.0, |g| g[idx]);
        samples.push((p, idx, analytic));
    }
    let scale = samples.iter().map(|s| s.2.abs()).fold(0.0, f64::max);
    let mut result = ModelGradCheck {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for (p, idx, analytic) in samples {
        let original = model.store.entries()[p].tensor.data()[idx];
        model.store.entries_mut()[p].tensor.data_mut()[idx] = original + STEP;
        let up = model_loss(&mut model, &x, &y, seed, false);
        model.store.entries_mut()[p].tensor.data_mut()[idx] = original - STEP;
        let down = model_loss(&mut model, &x, &y, seed, false);
        model.store.entries_mut()[p].tensor.data_mut()[idx] = original;
        let numeric = (up - down) / (2.0 * STEP);
        let err = rel_err(analytic, numeric, 1e-3 * scale);
        if err > result.max_rel_err {
            result.max_rel_err = err;
            result.worst = format!(
                "{}[{idx}]: analytic {analytic:e}, numeric {numeric:e}",
                model.store.entries()[p].name
            );
        }
        result.checked += 1;
    }
    result
}

type OpCase = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn(&[Var<f64>]) -> Result<Var<f64>>>);

/// Every differentiable op with small random inputs.
pub fn op_cases() -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let r = &mut rng;
    let labels = Tensor::from_vec(&[6], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    vec![
        ("add", vec![uniform(&[2, 3], -1.0, 1.0, r), uniform(&[2, 3], -1.0, 1.0, r)], Box::new(|v| ops::add(&v[0], &v[1]))),
        ("mul", vec![uniform(&[2, 3], -1.0, 1.0, r), uniform(&[2, 3], -1.0, 1.0, r)], Box::new(|v| ops::mul(&v[0], &v[1]))),
        ("scale", vec![uniform(&[4], -1.0, 1.0, r)], Box::new(|v| Ok(ops::scale(&v[0], -2.5)))),
        (
            "weighted_sum",
            vec![uniform(&[5], -1.0, 1.0, r), uniform(&[5], -1.0, 1.0, r), uniform(&[5], -1.0, 1.0, r)],
            Box::new(|v| ops::weighted_sum(v, &[0.2, 0.3, 0.5])),
        ),
        ("sum", vec![uniform(&[3, 2], -1.0, 1.0, r)], Box::new(|v| Ok(ops::sum(&v[0])))),
        ("mean", vec![uniform(&[3, 2], -1.0, 1.0, r)], Box::new(|v| Ok(ops::mean(&v[0])))),
        ("relu", vec![away_from_zero(&[8], r)], Box::new(|v| Ok(ops::relu(&v[0])))),
        ("sigmoid", vec![uniform(&[8], -4.0, 4.0, r)], Box::new(|v| Ok(ops::sigmoid(&v[0])))),
        ("silu", vec![uniform(&[8], -4.0, 4.0, r)], Box::new(|v| Ok(ops::silu(&v[0])))),
        ("reshape", vec![uniform(&[2, 6], -1.0, 1.0, r)], Box::new(|v| ops::reshape(&v[0], &[3, 4]))),
        (
            "linear",
            vec![uniform(&[3, 4], -1.0, 1.0, r), uniform(&[5, 4], -1.0, 1.0, r), uniform(&[5], -1.0, 1.0, r)],
            Box::new(|v| ops::linear(&v[0], &v[1], Some(&v[2]))),
        ),
        (
            "concat_features",
            vec![uniform(&[2, 3], -1.0, 1.0, r), uniform(&[2, 2], -1.0, 1.0, r)],
            Box::new(|v| ops::concat(v)),
        ),
        (
            "concat_channels",
            vec![uniform(&[2, 1, 2, 2], -1.0, 1.0, r), uniform(&[2, 2, 2, 2], -1.0, 1.0, r)],
            Box::new(|v| ops::concat(v)),
        ),
        (
            "scale_channels",
            vec![uniform(&[2, 3, 2, 2], -1.0, 1.0, r), uniform(&[2, 3], 0.0, 1.0, r)],
            Box::new(|v| ops::scale_channels(&v[0], &v[1])),
        ),
        (
            "dropout",
            vec![uniform(&[12], -1.0, 1.0, r)],
            Box::new(|v| ops::dropout(&v[0], 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(5))),
        ),
        (
            "bce_with_logits",
            vec![uniform(&[6], -6.0, 6.0, r)],
            Box::new(move |v| ops::bce_with_logits(&v[0], &labels)),
        ),
        (
            "conv2d_stride1_pad1",
            vec![uniform(&[2, 2, 5, 5], -1.0, 1.0, r), uniform(&[3, 2, 3, 3], -1.0, 1.0, r), uniform(&[3], -1.0, 1.0, r)],
            Box::new(|v| conv::conv2d(&v[0], &v[1], Some(&v[2]), 1, 1)),
        ),
        (
            "conv2d_stride2_pad0",
            vec![uniform(&[1, 2, 6, 6], -1.0, 1.0, r), uniform(&[2, 2, 2, 2], -1.0, 1.0, r)],
            Box::new(|v| conv::conv2d(&v[0], &v[1], None, 2, 0)),
        ),
        (
            "depthwise_conv2d",
            vec![uniform(&[2, 3, 5, 5], -1.0, 1.0, r), uniform(&[3, 1, 3, 3], -1.0, 1.0, r), uniform(&[3], -1.0, 1.0, r)],
            Box::new(|v| conv::depthwise_conv2d(&v[0], &v[1], Some(&v[2]), 2, 1)),
        ),
        ("global_avg_pool", vec![uniform(&[2, 3, 3, 3], -1.0, 1.0, r)], Box::new(|v| conv::global_avg_pool(&v[0]))),
        ("max_pool2d", vec![distinct(&[1, 2, 5, 5], r)], Box::new(|v| conv::max_pool2d(&v[0], 3, 2, 1))),
        ("avg_pool2d", vec![uniform(&[1, 2, 4, 4], -1.0, 1.0, r)], Box::new(|v| conv::avg_pool2d(&v[0], 2, 2))),
        (
            "batchnorm2d_train",
            vec![uniform(&[3, 2, 2, 2], -2.0, 2.0, r), uniform(&[2], 0.5, 1.5, r), uniform(&[2], -0.5, 0.5, r)],
            Box::new(|v| norm::batchnorm2d(&v[0], &v[1], &v[2], None, Mode::Train, 0.1, 1e-5)),
        ),
    ]
}

/// Values with pairwise gaps of at least 0.01, shuffled.
pub fn distinct(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 1.0).collect();
    data.shuffle(rng);
    Tensor::from_vec(shape, data).unwrap()
}
