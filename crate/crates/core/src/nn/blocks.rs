//! The three backbone block families: residual bottleneck, MBConv and dense block.

use rand::RngCore;

use super::layers::{Activation, BatchNorm2d, Conv2d, ConvBnAct, Linear};
use super::{Ctx, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{conv, ops, Elem, Var};

fn conv_bn(
    conv: Conv2d,
    bn: BatchNorm2d,
    act: Option<Activation>,
) -> ConvBnAct {
    ConvBnAct { conv, bn, act }
}

/// 1×1 reduce → 3×3 spatial → 1×1 expand, added to an identity or projected shortcut.
#[derive(Debug, Clone)]
pub struct ResidualBottleneck {
    pub reduce: ConvBnAct,
    pub spatial: ConvBnAct,
    pub expand: ConvBnAct,
    pub projection: Option<ConvBnAct>,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ResidualBottleneck {
    /// Builds a block; a projection shortcut is added whenever the identity
    /// cannot match the output shape.
    pub fn new<T: Elem>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        mid_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let c1 = Conv2d::new(store, &format!("{name}.conv1"), in_channels, mid_channels, 1, 1, 0, false, rng);
        let b1 = BatchNorm2d::new(store, &format!("{name}.bn1"), mid_channels);
        let c2 = Conv2d::new(store, &format!("{name}.conv2"), mid_channels, mid_channels, 3, stride, 1, false, rng);
        let b2 = BatchNorm2d::new(store, &format!("{name}.bn2"), mid_channels);
        let c3 = Conv2d::new(store, &format!("{name}.conv3"), mid_channels, out_channels, 1, 1, 0, false, rng);
        let b3 = BatchNorm2d::new(store, &format!("{name}.bn3"), out_channels);
        let projection = (stride != 1 || in_channels != out_channels).then(|| {
            let c = Conv2d::new(store, &format!("{name}.proj"), in_channels, out_channels, 1, stride, 0, false, rng);
            let b = BatchNorm2d::new(store, &format!("{name}.proj_bn"), out_channels);
            conv_bn(c, b, None)
        });
        Self {
            reduce: conv_bn(c1, b1, Some(Activation::Relu)),
            spatial: conv_bn(c2, b2, Some(Activation::Relu)),
            expand: conv_bn(c3, b3, None),
            projection,
            stride,
            in_channels,
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.projection.is_none() && (self.stride != 1 || self.in_channels != self.out_channels) {
            return Err(Error::invalid(format!(
                "residual block with stride {} and {}→{} channels needs a projection shortcut",
                self.stride, self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.reduce.param_count()
            + self.spatial.param_count()
            + self.expand.param_count()
            + self.projection.as_ref().map_or(0, ConvBnAct::param_count)
    }

    pub fn forward<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        self.validate()?;
        let branch = self.reduce.forward(ctx, x)?;
        let branch = self.spatial.forward(ctx, &branch)?;
        let branch = self.expand.forward(ctx, &branch)?;
        let shortcut = match &self.projection {
            Some(p) => p.forward(ctx, x)?,
            None => x.clone(),
        };
        Ok(ops::relu(&ops::add(&branch, &shortcut)?))
    }
}

/// Channel attention: global pool → reduce (SiLU) → expand (sigmoid) → rescale.
#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub reduce: Linear,
    pub expand: Linear,
}

impl SqueezeExcite {
    pub fn param_count(&self) -> usize {
        self.reduce.param_count() + self.expand.param_count()
    }

    pub fn gate<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let pooled = conv::global_avg_pool(x)?;
        let s = ops::silu(&self.reduce.forward(ctx, &pooled)?);
        Ok(ops::sigmoid(&self.expand.forward(ctx, &s)?))
    }

    pub fn forward<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let g = self.gate(ctx, x)?;
        ops::scale_channels(x, &g)
    }
}

/// Squeeze width used by the MBConv family: a quarter of the block's input channels.
pub const SE_REDUCTION: usize = 4;

/// Inverted bottleneck: expand → depthwise → squeeze-excite → project.
#[derive(Debug, Clone)]
pub struct MbConv {
    pub expand: Option<ConvBnAct>,
    pub depthwise: ConvBnAct,
    pub se: SqueezeExcite,
    pub project: ConvBnAct,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub out_channels: usize,
}

impl MbConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Elem>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        expansion_ratio: usize,
        kernel: usize,
        stride: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if kernel != 3 && kernel != 5 {
            return Err(Error::invalid(format!("MBConv kernel must be 3 or 5, got {kernel}")));
        }
        if expansion_ratio == 0 {
            return Err(Error::invalid("MBConv expansion ratio must be >= 1"));
        }
        let hidden = in_channels * expansion_ratio;
        let expand = (expansion_ratio != 1).then(|| {
            let c = Conv2d::new(store, &format!("{name}.expand"), in_channels, hidden, 1, 1, 0, false, rng);
            let b = BatchNorm2d::new(store, &format!("{name}.expand_bn"), hidden);
            conv_bn(c, b, Some(Activation::Silu))
        });
        let dw = Conv2d::depthwise(store, &format!("{name}.dw"), hidden, kernel, stride, rng);
        let dw_bn = BatchNorm2d::new(store, &format!("{name}.dw_bn"), hidden);
        let squeeze = (in_channels / SE_REDUCTION).max(1);
        let se = SqueezeExcite {
            reduce: Linear::new(store, &format!("{name}.se.reduce"), hidden, squeeze, rng),
            expand: Linear::new(store, &format!("{name}.se.expand"), squeeze, hidden, rng),
        };
        let pc = Conv2d::new(store, &format!("{name}.project"), hidden, out_channels, 1, 1, 0, false, rng);
        let pb = BatchNorm2d::new(store, &format!("{name}.project_bn"), out_channels);
        Ok(Self {
            expand,
            depthwise: conv_bn(dw, dw_bn, Some(Activation::Silu)),
            se,
            project: conv_bn(pc, pb, None),
            kernel,
            stride,
            in_channels,
            hidden_channels: hidden,
            out_channels,
        })
    }

    pub fn has_residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn param_count(&self) -> usize {
        self.expand.as_ref().map_or(0, ConvBnAct::param_count)
            + self.depthwise.param_count()
            + self.se.param_count()
            + self.project.param_count()
    }

    /// Output of the expansion stage (the block input when the ratio is 1).
    pub fn expanded<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        match &self.expand {
            Some(e) => e.forward(ctx, x),
            None => Ok(x.clone()),
        }
    }

    pub fn forward<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let h = self.expanded(ctx, x)?;
        let h = self.depthwise.forward(ctx, &h)?;
        let h = self.se.forward(ctx, &h)?;
        let y = self.project.forward(ctx, &h)?;
        if self.has_residual() {
            ops::add(&y, x)
        } else {
            Ok(y)
        }
    }
}

/// Bottleneck multiplier of the dense family: each layer's 1×1 conv emits `4·g` channels.
pub const DENSE_BOTTLENECK: usize = 4;

/// Pre-activation BN-ReLU-1×1 conv, BN-ReLU-3×3 conv emitting `growth` channels.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub bn1: BatchNorm2d,
    pub conv1: Conv2d,
    pub bn2: BatchNorm2d,
    pub conv2: Conv2d,
    pub in_channels: usize,
}

impl DenseLayer {
    pub fn param_count(&self) -> usize {
        self.bn1.param_count() + self.conv1.param_count() + self.bn2.param_count() + self.conv2.param_count()
    }

    pub fn forward<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let h = ops::relu(&self.bn1.forward(ctx, x)?);
        let h = self.conv1.forward(ctx, &h)?;
        let h = ops::relu(&self.bn2.forward(ctx, &h)?);
        self.conv2.forward(ctx, &h)
    }
}

/// Stack of layers where layer `k` consumes the block input concatenated with
/// every earlier layer's output.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    pub layers: Vec<DenseLayer>,
    pub in_channels: usize,
    pub growth_rate: usize,
}

impl DenseBlock {
    pub fn new<T: Elem>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        layers: usize,
        growth_rate: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if layers == 0 || growth_rate == 0 {
            return Err(Error::invalid(format!(
                "dense block needs layers >= 1 and growth >= 1, got {layers} and {growth_rate}"
            )));
        }
        let bottleneck = DENSE_BOTTLENECK * growth_rate;
        let layers = (0..layers)
            .map(|k| {
                let cin = in_channels + k * growth_rate;
                let p = format!("{name}.layer{k}");
                DenseLayer {
                    bn1: BatchNorm2d::new(store, &format!("{p}.bn1"), cin),
                    conv1: Conv2d::new(store, &format!("{p}.conv1"), cin, bottleneck, 1, 1, 0, false, rng),
                    bn2: BatchNorm2d::new(store, &format!("{p}.bn2"), bottleneck),
                    conv2: Conv2d::new(store, &format!("{p}.conv2"), bottleneck, growth_rate, 3, 1, 1, false, rng),
                    in_channels: cin,
                }
            })
            .collect();
        Ok(Self {
            layers,
            in_channels,
            growth_rate,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels + self.layers.len() * self.growth_rate
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Block output plus each layer's individual `growth`-channel output.
    pub fn forward_with_layers<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<(Var<T>, Vec<Var<T>>)> {
        let mut features = vec![x.clone()];
        for layer in &self.layers {
            let input = if features.len() == 1 {
                x.clone()
            } else {
                ops::concat(&features)?
            };
            debug_assert_eq!(input.shape()[1], layer.in_channels);
            features.push(layer.forward(ctx, &input)?);
        }
        let out = ops::concat(&features)?;
        Ok((out, features.split_off(1)))
    }

    pub fn forward<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        Ok(self.forward_with_layers(ctx, x)?.0)
    }
}

/// BN-ReLU-1×1 conv followed by 2×2 average pooling between dense blocks.
#[derive(Debug, Clone)]
pub struct Transition {
    pub bn: BatchNorm2d,
    pub conv: Conv2d,
}

impl Transition {
    pub fn new<T: Elem>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        Self {
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), in_channels),
            conv: Conv2d::new(store, &format!("{name}.conv"), in_channels, out_channels, 1, 1, 0, false, rng),
        }
    }

    pub fn param_count(&self) -> usize {
        self.bn.param_count() + self.conv.param_count()
    }

    pub fn forward<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let h = ops::relu(&self.bn.forward(ctx, x)?);
        let h = self.conv.forward(ctx, &h)?;
        conv::avg_pool2d(&h, 2, 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn input(shape: &[usize], seed: u64) -> Var<f64> {
        use rand::Rng;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let len = shape.iter().product();
        Var::constant(Tensor::from_vec(shape, (0..len).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap())
    }

    #[test]
    fn strided_residual_with_projection_halves_spatial() {
        let mut store = ParamStore::<f64>::new();
        let b = ResidualBottleneck::new(&mut store, "b", 8, 4, 16, 2, &mut rng());
        let mut ctx = Ctx::eval(&store);
        let y = b.forward(&mut ctx, &input(&[1, 8, 8, 8], 1)).unwrap();
        assert_eq!(y.shape(), &[1, 16, 4, 4]);
        assert_eq!(b.param_count(), store.param_count());
    }

    #[test]
    fn strided_residual_without_projection_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        let mut b = ResidualBottleneck::new(&mut store, "b", 8, 4, 8, 2, &mut rng());
        b.projection = None;
        let mut ctx = Ctx::eval(&store);
        assert!(b.forward(&mut ctx, &input(&[1, 8, 8, 8], 1)).is_err());
    }

    #[test]
    fn mbconv_rejects_other_kernels() {
        let mut store = ParamStore::<f64>::new();
        assert!(MbConv::new(&mut store, "m", 8, 8, 4, 7, 1, &mut rng()).is_err());
    }

    #[test]
    fn mbconv_expansion_and_strided_kernel5() {
        let mut store = ParamStore::<f64>::new();
        let m = MbConv::new(&mut store, "m", 16, 24, 4, 5, 2, &mut rng()).unwrap();
        assert_eq!(m.hidden_channels, 64);
        let mut ctx = Ctx::eval(&store);
        let x = input(&[1, 16, 8, 8], 2);
        assert_eq!(m.expanded(&mut ctx, &x).unwrap().shape()[1], 64);
        assert_eq!(m.forward(&mut ctx, &x).unwrap().shape(), &[1, 24, 4, 4]);
        assert_eq!(m.param_count(), store.param_count());
    }

    #[test]
    fn dense_block_growth_law() {
        let mut store = ParamStore::<f64>::new();
        let d = DenseBlock::new(&mut store, "d", 4, 3, 2, &mut rng()).unwrap();
        for (k, layer) in d.layers.iter().enumerate() {
            assert_eq!(layer.in_channels, 4 + k * 2);
        }
        let mut ctx = Ctx::eval(&store);
        let (y, per_layer) = d.forward_with_layers(&mut ctx, &input(&[2, 4, 5, 5], 3)).unwrap();
        assert_eq!(y.shape(), &[2, 10, 5, 5]);
        assert!(per_layer.iter().all(|v| v.shape()[1] == 2));
        assert_eq!(d.param_count(), store.param_count());
    }
}
