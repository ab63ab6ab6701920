use rand::RngCore;

use super::{init, Ctx, ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::norm::{self, RunningStats, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use crate::tensor::ops::{self, Mode};
use crate::tensor::{conv, Elem, Tensor, Var};

/// Dense or depthwise 2-D convolution.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: ParamId,
    bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub depthwise: bool,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Elem>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut dyn RngCore,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel, kernel];
        let weight = store.add_param(format!("{name}.weight"), init::conv_weight(&shape, rng));
        let bias = bias.then(|| store.add_param(format!("{name}.bias"), Tensor::zeros(&[out_channels])));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            depthwise: false,
        }
    }

    /// One `kernel×kernel` filter per channel, "same" padding.
    pub fn depthwise<T: Elem>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let shape = [channels, 1, kernel, kernel];
        let weight = store.add_param(format!("{name}.weight"), init::conv_weight(&shape, rng));
        Self {
            weight,
            bias: None,
            in_channels: channels,
            out_channels: channels,
            kernel,
            stride,
            padding: kernel / 2,
            depthwise: true,
        }
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn param_count(&self) -> usize {
        let per_filter = if self.depthwise { 1 } else { self.in_channels };
        self.out_channels * per_filter * self.kernel * self.kernel + self.bias.map_or(0, |_| self.out_channels)
    }

    pub fn forward<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|id| ctx.param(id));
        if self.depthwise {
            conv::depthwise_conv2d(x, &w, b.as_ref(), self.stride, self.padding)
        } else {
            conv::conv2d(x, &w, b.as_ref(), self.stride, self.padding)
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm2d {
    pub fn new<T: Elem>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[channels], T::one())),
            channels,
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn gamma_id(&self) -> ParamId {
        self.gamma
    }

    pub fn beta_id(&self) -> ParamId {
        self.beta
    }

    pub fn running_ids(&self) -> (ParamId, ParamId) {
        (self.running_mean, self.running_var)
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn forward<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let mode = ctx.mode();
        match mode {
            Mode::Train => {
                let running = ctx
                    .buffers_mut(self.running_mean, self.running_var)
                    .map(|(mean, var)| RunningStats { mean, var });
                norm::batchnorm2d(x, &gamma, &beta, running, mode, self.momentum, self.epsilon)
            }
            Mode::Eval => {
                let mut mean = ctx.buffer(self.running_mean).data().to_vec();
                let mut var = ctx.buffer(self.running_var).data().to_vec();
                let running = RunningStats {
                    mean: &mut mean,
                    var: &mut var,
                };
                norm::batchnorm2d(x, &gamma, &beta, Some(running), mode, self.momentum, self.epsilon)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Elem>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let weight = store.add_param(
            format!("{name}.weight"),
            init::uniform_fan_in(&[out_features, in_features], in_features, rng),
        );
        let bias = store.add_param(
            format!("{name}.bias"),
            init::uniform_fan_in(&[out_features], in_features, rng),
        );
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }

    pub fn param_count(&self) -> usize {
        self.out_features * self.in_features + self.out_features
    }

    pub fn forward<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ops::linear(x, &w, Some(&b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
}

impl Activation {
    pub fn apply<T: Elem>(self, x: &Var<T>) -> Var<T> {
        match self {
            Activation::Relu => ops::relu(x),
            Activation::Silu => ops::silu(x),
        }
    }
}

/// Convolution, batchnorm and activation in sequence.
#[derive(Debug, Clone)]
pub struct ConvBnAct {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub act: Option<Activation>,
}

impl ConvBnAct {
    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }

    pub fn forward<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, &y)?;
        Ok(match self.act {
            Some(a) => a.apply(&y),
            None => y,
        })
    }
}
