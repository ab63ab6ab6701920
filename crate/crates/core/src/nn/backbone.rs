use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{DenseBlock, MbConv, ResidualBottleneck, Transition};
use super::layers::{Activation, BatchNorm2d, Conv2d, ConvBnAct};
use super::presets::*;
use super::{Ctx, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{conv, Elem, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Residual,
    Mbconv,
    Dense,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Residual, Family::Mbconv, Family::Dense];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Residual => "residual",
            Family::Mbconv => "mbconv",
            Family::Dense => "dense",
        }
    }

    /// Short label used in report columns.
    pub fn short_label(self) -> &'static str {
        match self {
            Family::Residual => "Res",
            Family::Mbconv => "Eff",
            Family::Dense => "Den",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "residual" | "res" => Ok(Family::Residual),
            "mbconv" | "eff" => Ok(Family::Mbconv),
            "dense" | "den" => Ok(Family::Dense),
            other => Err(Error::invalid(format!("unknown backbone family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalePreset {
    Desk,
    Paper,
}

fn default_input_size() -> usize {
    PAPER_INPUT_SIZE
}

/// Declarative backbone description.
///
/// `stage_widths` are the output channels of each stage for the residual and
/// mbconv families, and the input channels of each dense block for the dense
/// family (the first one doubles as the stem width).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub family: Family,
    pub stage_widths: Vec<usize>,
    pub stage_depths: Vec<usize>,
    #[serde(default)]
    pub growth_rate: usize,
    #[serde(default)]
    pub expansion_ratio: usize,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    pub scale_preset: ScalePreset,
}

impl BackboneSpec {
    pub fn desk(family: Family) -> Self {
        let (widths, depths, growth, expansion): (&[usize], &[usize], usize, usize) = match family {
            Family::Residual => (&DESK_RESIDUAL_WIDTHS, &DESK_RESIDUAL_DEPTHS, 0, 0),
            Family::Mbconv => (&DESK_MBCONV_WIDTHS, &DESK_MBCONV_DEPTHS, 0, DESK_MBCONV_EXPANSION),
            Family::Dense => (&DESK_DENSE_WIDTHS, &DESK_DENSE_DEPTHS, DESK_DENSE_GROWTH, 0),
        };
        Self {
            family,
            stage_widths: widths.to_vec(),
            stage_depths: depths.to_vec(),
            growth_rate: growth,
            expansion_ratio: expansion,
            input_size: DESK_INPUT_SIZE,
            scale_preset: ScalePreset::Desk,
        }
    }

    pub fn paper(family: Family) -> Self {
        match family {
            Family::Residual => Self {
                family,
                stage_widths: RESNET50_WIDTHS.to_vec(),
                stage_depths: RESNET50_DEPTHS.to_vec(),
                growth_rate: 0,
                expansion_ratio: 0,
                input_size: PAPER_INPUT_SIZE,
                scale_preset: ScalePreset::Paper,
            },
            Family::Mbconv => Self {
                family,
                stage_widths: EFFICIENTNET_B0_STAGES.iter().map(|s| s.out_channels).collect(),
                stage_depths: EFFICIENTNET_B0_STAGES.iter().map(|s| s.depth).collect(),
                growth_rate: 0,
                expansion_ratio: 6,
                input_size: PAPER_INPUT_SIZE,
                scale_preset: ScalePreset::Paper,
            },
            Family::Dense => Self {
                family,
                stage_widths: DENSENET121_WIDTHS.to_vec(),
                stage_depths: DENSENET121_DEPTHS.to_vec(),
                growth_rate: DENSENET121_GROWTH,
                expansion_ratio: 0,
                input_size: PAPER_INPUT_SIZE,
                scale_preset: ScalePreset::Paper,
            },
        }
    }

    pub fn preset(family: Family, preset: ScalePreset) -> Self {
        match preset {
            ScalePreset::Desk => Self::desk(family),
            ScalePreset::Paper => Self::paper(family),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.stage_depths.len() {
            problems.push(format!(
                "stage_widths ({}) and stage_depths ({}) must have equal non-zero length",
                self.stage_widths.len(),
                self.stage_depths.len()
            ));
        }
        if self.stage_widths.iter().chain(&self.stage_depths).any(|&v| v == 0) {
            problems.push("stage widths and depths must be positive".into());
        }
        match self.family {
            Family::Dense if self.growth_rate == 0 => problems.push("dense family needs growth_rate >= 1".into()),
            Family::Mbconv if self.expansion_ratio == 0 => {
                problems.push("mbconv family needs expansion_ratio >= 1".into())
            }
            Family::Residual if self.stage_widths.iter().any(|w| w % RESIDUAL_EXPANSION != 0) => problems.push(
                format!("residual stage widths must be multiples of {RESIDUAL_EXPANSION}"),
            ),
            _ => {}
        }
        if self.scale_preset == ScalePreset::Paper {
            let frozen = Self::paper(self.family);
            if self.stage_widths != frozen.stage_widths
                || self.stage_depths != frozen.stage_depths
                || self.growth_rate != frozen.growth_rate
                || self.expansion_ratio != frozen.expansion_ratio
            {
                problems.push(format!(
                    "paper preset for {} is frozen; stage lists may not be modified",
                    self.family.as_str()
                ));
            }
        }
        if problems.is_empty() {
            if let Err(e) = self.trace_spatial() {
                problems.push(e);
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    fn paper_stem(&self) -> bool {
        self.scale_preset == ScalePreset::Paper && self.family != Family::Mbconv
    }

    fn stem_width(&self) -> usize {
        match (self.family, self.scale_preset) {
            (Family::Residual, ScalePreset::Paper) => RESNET50_STEM,
            (Family::Mbconv, ScalePreset::Paper) => EFFICIENTNET_B0_STEM,
            _ => self.stage_widths[0],
        }
    }

    /// MBConv stage layout: the frozen table for the paper preset, otherwise
    /// stride 1 then 2, kernel 3 on even and 5 on odd stages.
    fn mb_stages(&self) -> Vec<MbStage> {
        if self.scale_preset == ScalePreset::Paper {
            return EFFICIENTNET_B0_STAGES.to_vec();
        }
        self.stage_widths
            .iter()
            .zip(&self.stage_depths)
            .enumerate()
            .map(|(i, (&out_channels, &depth))| MbStage {
                expansion: self.expansion_ratio,
                kernel: if i % 2 == 1 { 5 } else { 3 },
                stride: if i == 0 { 1 } else { 2 },
                out_channels,
                depth,
            })
            .collect()
    }

    /// Follows the spatial extent through every downsampling step.
    fn trace_spatial(&self) -> Result<usize, String> {
        let step = |s: usize, k: usize, stride: usize, pad: usize, what: &str| {
            conv::conv_out_len(s, k, stride, pad)
                .filter(|&v| v >= 1)
                .ok_or_else(|| format!("input_size {} collapses at {what}", self.input_size))
        };
        let mut s = self.input_size;
        if self.paper_stem() {
            s = step(s, 7, 2, 3, "stem")?;
            s = step(s, 3, 2, 1, "stem pool")?;
        } else {
            s = step(s, 3, 2, 1, "stem")?;
        }
        match self.family {
            Family::Residual => {
                for _ in 1..self.stage_widths.len() {
                    s = step(s, 3, 2, 1, "residual stage")?;
                }
            }
            Family::Mbconv => {
                for st in self.mb_stages() {
                    s = step(s, st.kernel, st.stride, st.kernel / 2, "mbconv stage")?;
                }
            }
            Family::Dense => {
                for _ in 1..self.stage_widths.len() {
                    s = step(s, 2, 2, 0, "transition pool")?;
                }
            }
        }
        Ok(s)
    }

    pub fn feature_dim(&self) -> usize {
        let last = *self.stage_widths.last().unwrap_or(&0);
        match self.family {
            Family::Residual => last,
            Family::Mbconv => last * MBCONV_HEAD_MULTIPLIER,
            Family::Dense => last + self.stage_depths.last().unwrap_or(&0) * self.growth_rate,
        }
    }
}

#[derive(Debug, Clone)]
enum Body {
    Residual(Vec<Vec<ResidualBottleneck>>),
    Mbconv {
        stages: Vec<Vec<MbConv>>,
        head: ConvBnAct,
    },
    Dense {
        blocks: Vec<DenseBlock>,
        transitions: Vec<Transition>,
        final_bn: BatchNorm2d,
    },
}

/// Instantiated feature extractor layout; weights live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct BackboneArch {
    spec: BackboneSpec,
    stem: ConvBnAct,
    stem_pool: bool,
    body: Body,
    feature_dim: usize,
}

impl BackboneArch {
    /// Registers all parameters under `prefix` in `store`.
    pub fn build_into<T: Elem>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: &BackboneSpec,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        spec.validate()?;
        let p = |s: &str| format!("{prefix}.{s}");
        let stem_width = spec.stem_width();
        let (stem_kernel, stem_pad) = if spec.paper_stem() { (7, 3) } else { (3, 1) };
        let stem_act = match spec.family {
            Family::Mbconv => Activation::Silu,
            _ => Activation::Relu,
        };
        let stem = ConvBnAct {
            conv: Conv2d::new(store, &p("stem.conv"), 3, stem_width, stem_kernel, 2, stem_pad, false, rng),
            bn: BatchNorm2d::new(store, &p("stem.bn"), stem_width),
            act: Some(stem_act),
        };

        let body = match spec.family {
            Family::Residual => {
                let mut cin = stem_width;
                let mut stages = Vec::new();
                for (si, (&out, &depth)) in spec.stage_widths.iter().zip(&spec.stage_depths).enumerate() {
                    let mid = out / RESIDUAL_EXPANSION;
                    let blocks = (0..depth)
                        .map(|bi| {
                            let stride = if bi == 0 && si > 0 { 2 } else { 1 };
                            let name = p(&format!("stage{si}.block{bi}"));
                            let b = ResidualBottleneck::new(store, &name, cin, mid, out, stride, rng);
                            cin = out;
                            b
                        })
                        .collect();
                    stages.push(blocks);
                }
                Body::Residual(stages)
            }
            Family::Mbconv => {
                let mut cin = stem_width;
                let mut stages = Vec::new();
                for (si, st) in spec.mb_stages().into_iter().enumerate() {
                    let mut blocks = Vec::with_capacity(st.depth);
                    for bi in 0..st.depth {
                        let stride = if bi == 0 { st.stride } else { 1 };
                        let name = p(&format!("stage{si}.block{bi}"));
                        blocks.push(MbConv::new(store, &name, cin, st.out_channels, st.expansion, st.kernel, stride, rng)?);
                        cin = st.out_channels;
                    }
                    stages.push(blocks);
                }
                let head_width = cin * MBCONV_HEAD_MULTIPLIER;
                let head = ConvBnAct {
                    conv: Conv2d::new(store, &p("head.conv"), cin, head_width, 1, 1, 0, false, rng),
                    bn: BatchNorm2d::new(store, &p("head.bn"), head_width),
                    act: Some(Activation::Silu),
                };
                Body::Mbconv { stages, head }
            }
            Family::Dense => {
                let n = spec.stage_widths.len();
                let mut blocks = Vec::with_capacity(n);
                let mut transitions = Vec::with_capacity(n - 1);
                for (bi, (&cin, &depth)) in spec.stage_widths.iter().zip(&spec.stage_depths).enumerate() {
                    let block = DenseBlock::new(store, &p(&format!("block{bi}")), cin, depth, spec.growth_rate, rng)?;
                    let cout = block.out_channels();
                    blocks.push(block);
                    if bi + 1 < n {
                        let next = spec.stage_widths[bi + 1];
                        transitions.push(Transition::new(store, &p(&format!("transition{bi}")), cout, next, rng));
                    }
                }
                let final_bn = BatchNorm2d::new(store, &p("final_bn"), spec.feature_dim());
                Body::Dense {
                    blocks,
                    transitions,
                    final_bn,
                }
            }
        };

        Ok(Self {
            spec: spec.clone(),
            stem,
            stem_pool: spec.paper_stem(),
            body,
            feature_dim: spec.feature_dim(),
        })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn input_size(&self) -> usize {
        self.spec.input_size
    }

    /// Analytic trainable-parameter count summed over declared layers.
    pub fn param_count(&self) -> usize {
        let body = match &self.body {
            Body::Residual(stages) => stages.iter().flatten().map(ResidualBottleneck::param_count).sum(),
            Body::Mbconv { stages, head } => {
                stages.iter().flatten().map(MbConv::param_count).sum::<usize>() + head.param_count()
            }
            Body::Dense {
                blocks,
                transitions,
                final_bn,
            } => {
                blocks.iter().map(DenseBlock::param_count).sum::<usize>()
                    + transitions.iter().map(Transition::param_count).sum::<usize>()
                    + final_bn.param_count()
            }
        };
        self.stem.param_count() + body
    }

    pub fn residual_blocks(&self) -> Option<&[Vec<ResidualBottleneck>]> {
        match &self.body {
            Body::Residual(s) => Some(s),
            _ => None,
        }
    }

    pub fn mbconv_blocks(&self) -> Option<&[Vec<MbConv>]> {
        match &self.body {
            Body::Mbconv { stages, .. } => Some(stages),
            _ => None,
        }
    }

    pub fn dense_blocks(&self) -> Option<&[DenseBlock]> {
        match &self.body {
            Body::Dense { blocks, .. } => Some(blocks),
            _ => None,
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = self.spec.input_size;
        match shape {
            [_, 3, h, w] if *h == s && *w == s => Ok(()),
            _ => Err(Error::shape(
                "extract_features",
                format!("expected input [N, 3, {s}, {s}], got {shape:?}"),
            )),
        }
    }

    /// `[N, 3, S, S]` → pooled features `[N, feature_dim]`.
    pub fn forward<T: Elem>(&self, ctx: &mut Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        self.check_input(x.shape())?;
        let mut h = self.stem.forward(ctx, x)?;
        if self.stem_pool {
            h = conv::max_pool2d(&h, 3, 2, 1)?;
        }
        match &self.body {
            Body::Residual(stages) => {
                for block in stages.iter().flatten() {
                    h = block.forward(ctx, &h)?;
                }
            }
            Body::Mbconv { stages, head } => {
                for block in stages.iter().flatten() {
                    h = block.forward(ctx, &h)?;
                }
                h = head.forward(ctx, &h)?;
            }
            Body::Dense {
                blocks,
                transitions,
                final_bn,
            } => {
                for (i, block) in blocks.iter().enumerate() {
                    h = block.forward(ctx, &h)?;
                    if let Some(t) = transitions.get(i) {
                        h = t.forward(ctx, &h)?;
                    }
                }
                h = crate::tensor::ops::relu(&final_bn.forward(ctx, &h)?);
            }
        }
        debug_assert_eq!(h.shape()[1], self.feature_dim);
        conv::global_avg_pool(&h)
    }
}

/// A standalone feature extractor with its own parameters.
#[derive(Debug, Clone)]
pub struct Backbone<T: Elem = f32> {
    pub arch: BackboneArch,
    pub store: ParamStore<T>,
}

pub fn build_backbone<T: Elem>(spec: &BackboneSpec, rng: &mut dyn RngCore) -> Result<Backbone<T>> {
    let mut store = ParamStore::new();
    let arch = BackboneArch::build_into(&mut store, "backbone", spec, rng)?;
    Ok(Backbone { arch, store })
}

impl<T: Elem> Backbone<T> {
    pub fn seeded(spec: &BackboneSpec, seed: u64) -> Result<Self> {
        build_backbone(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim()
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Eval-mode features using running batchnorm statistics.
    pub fn extract_features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.arch.check_input(x.shape())?;
        let mut ctx = Ctx::eval(&self.store);
        let f = self.arch.forward(&mut ctx, &Var::constant(x.clone()))?;
        Ok(f.to_tensor())
    }
}
