//! Frozen stage layouts.
//!
//! Paper-scale tables reproduce the published ResNet-50, EfficientNet-B0 and
//! DenseNet-121 feature extractors layer for layer (classification layers
//! removed). Desk-scale tables keep each family's signature mechanism at a
//! size that trains on a CPU in minutes.
//!
//! ResNet-50 (`residual`, paper):
//! stem 7×7/2 conv 3→64, BN, ReLU, 3×3/2 max pool; then bottleneck stages
//! with output channels 256, 512, 1024, 2048 (inner width a quarter of that:
//! 64, 128, 256, 512) and 3, 4, 6, 3 blocks. The first block of every stage
//! carries a 1×1 projection shortcut; stages 2–4 downsample in the 3×3 conv.
//! Feature width 2048.
//!
//! EfficientNet-B0 (`mbconv`, paper):
//! stem 3×3/2 conv 3→32, BN, SiLU; seven MBConv stages (see
//! [`EFFICIENTNET_B0_STAGES`]); 1×1 head conv 320→1280, BN, SiLU. Squeeze
//! width is a quarter of each block's input channels. Feature width 1280.
//! The usual "nine stages" count includes stem and head.
//!
//! DenseNet-121 (`dense`, paper):
//! stem 7×7/2 conv 3→64, BN, ReLU, 3×3/2 max pool; dense blocks of 6, 12, 24,
//! 16 layers with growth 32 and a 4·32 = 128 channel bottleneck; block inputs
//! 64, 128, 256, 512 channels with transitions (BN, ReLU, 1×1 conv halving
//! channels, 2×2 average pool) in between; final BN and ReLU. Feature width
//! 512 + 16·32 = 1024.

/// Output-to-inner width ratio of residual bottleneck blocks.
pub const RESIDUAL_EXPANSION: usize = 4;

pub const RESNET50_STEM: usize = 64;
pub const RESNET50_WIDTHS: [usize; 4] = [256, 512, 1024, 2048];
pub const RESNET50_DEPTHS: [usize; 4] = [3, 4, 6, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MbStage {
    pub expansion: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
    pub depth: usize,
}

const fn mb(expansion: usize, kernel: usize, stride: usize, out_channels: usize, depth: usize) -> MbStage {
    MbStage {
        expansion,
        kernel,
        stride,
        out_channels,
        depth,
    }
}

pub const EFFICIENTNET_B0_STEM: usize = 32;
pub const EFFICIENTNET_B0_STAGES: [MbStage; 7] = [
    mb(1, 3, 1, 16, 1),
    mb(6, 3, 2, 24, 2),
    mb(6, 5, 2, 40, 2),
    mb(6, 3, 2, 80, 3),
    mb(6, 5, 1, 112, 3),
    mb(6, 5, 2, 192, 4),
    mb(6, 3, 1, 320, 1),
];
/// Head conv width as a multiple of the last stage's channels (320·4 = 1280).
pub const MBCONV_HEAD_MULTIPLIER: usize = 4;

pub const DENSENET121_GROWTH: usize = 32;
pub const DENSENET121_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const DENSENET121_DEPTHS: [usize; 4] = [6, 12, 24, 16];

pub const DESK_INPUT_SIZE: usize = 64;
pub const PAPER_INPUT_SIZE: usize = 224;

pub const DESK_RESIDUAL_WIDTHS: [usize; 3] = [16, 32, 64];
pub const DESK_RESIDUAL_DEPTHS: [usize; 3] = [2, 2, 2];

pub const DESK_MBCONV_WIDTHS: [usize; 3] = [16, 24, 40];
pub const DESK_MBCONV_DEPTHS: [usize; 3] = [1, 2, 2];
pub const DESK_MBCONV_EXPANSION: usize = 4;

pub const DESK_DENSE_GROWTH: usize = 12;
/// Block input widths: a 2·growth stem, then transitions halving channels.
pub const DESK_DENSE_WIDTHS: [usize; 3] = [24, 36, 42];
pub const DESK_DENSE_DEPTHS: [usize; 3] = [4, 4, 4];
