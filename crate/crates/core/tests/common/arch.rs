//! Architecture bookkeeping checks shared by the property tests and the
//! acceptance harness. Each returns the first violated expectation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retina_fusion::fusion::{FusionModel, FusionSpec};
use retina_fusion::nn::blocks::{DenseBlock, MbConv, ResidualBottleneck};
use retina_fusion::nn::{BackboneSpec, Ctx, Family, ParamStore, ScalePreset};
use retina_fusion::tensor::{ops, Tensor, Var};

pub type Check = Result<(), String>;

pub const PUBLISHED_COUNTS: [(Family, f64); 3] =
    [(Family::Residual, 24.56e6), (Family::Mbconv, 4.66e6), (Family::Dense, 7.48e6)];

macro_rules! expect_eq {
    ($a:expr, $b:expr) => {{
        match (&$a, &$b) {
            (a, b) if a != b => return Err(format!("{} = {:?}, expected {:?}", stringify!($a), a, b)),
            _ => {}
        }
    }};
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

pub fn input(shape: &[usize], seed: u64, nonnegative: bool) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let lo = if nonnegative { 0.0 } else { -1.0 };
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..1.0)).collect()).unwrap()
}

/// Layer `k` sees `c0 + k * growth` channels, the block emits
/// `c0 + layers * growth`, and the input passes through unchanged.
pub fn dense_block_growth(c0: usize, layers: usize, growth: usize, seed: u64) -> Check {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = DenseBlock::new(&mut store, "b", c0, layers, growth, &mut rng).map_err(err)?;
    expect_eq!(block.out_channels(), c0 + layers * growth);
    for (k, layer) in block.layers.iter().enumerate() {
        expect_eq!(layer.in_channels, c0 + k * growth);
    }
    let x = Var::constant(input(&[1, c0, 4, 4], seed, false));
    let (out, per_layer) = block.forward_with_layers(&mut Ctx::eval(&store), &x).map_err(err)?;
    expect_eq!(out.shape(), &[1, c0 + layers * growth, 4, 4][..]);
    expect_eq!(per_layer.len(), layers);
    expect_eq!(&out.data()[..c0 * 16], x.data());
    Ok(())
}

/// With the last branch normalization scaled to zero, the block reduces to
/// `relu(x)`, which is `x` for nonnegative input.
pub fn residual_zero_branch_identity(c: usize, mid: usize, seed: u64) -> Check {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = ResidualBottleneck::new(&mut store, "r", c, mid, c, 1, &mut rng);
    expect_eq!(block.projection.is_none(), true);
    store.get_mut(block.expand.bn.gamma_id()).data_mut().fill(0.0);
    let x = Var::constant(input(&[2, c, 5, 5], seed, true));
    let y = block.forward(&mut Ctx::eval(&store), &x).map_err(err)?;
    expect_eq!(y.data(), x.data());
    Ok(())
}

pub fn mbconv_arithmetic(cin: usize, cout: usize, ratio: usize, kernel: usize, stride: usize, seed: u64) -> Check {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = MbConv::new(&mut store, "m", cin, cout, ratio, kernel, stride, &mut rng).map_err(err)?;
    expect_eq!(block.hidden_channels, cin * ratio);
    expect_eq!(block.expand.is_some(), ratio != 1);
    expect_eq!(block.has_residual(), stride == 1 && cin == cout);
    let x = Var::constant(input(&[1, cin, 8, 8], seed, false));
    let mut ctx = Ctx::eval(&store);
    expect_eq!(block.expanded(&mut ctx, &x).map_err(err)?.shape()[1], cin * ratio);
    let side = if stride == 1 { 8 } else { 4 };
    let y = block.forward(&mut ctx, &x).map_err(err)?;
    expect_eq!(y.shape(), &[1, cout, side, side][..]);
    Ok(())
}

pub fn concat_then_slice(widths: &[usize], n: usize, seed: u64) -> Check {
    let parts: Vec<Tensor<f32>> =
        widths.iter().enumerate().map(|(i, &w)| input(&[n, w], seed ^ i as u64, false)).collect();
    let vars: Vec<Var<f32>> = parts.iter().cloned().map(Var::constant).collect();
    let joined = ops::concat(&vars).map_err(err)?.to_tensor();
    expect_eq!(joined.shape(), &[n, widths.iter().sum::<usize>()][..]);
    let mut offset = 0;
    for (part, &w) in parts.iter().zip(widths) {
        expect_eq!(joined.narrow_cols(offset, w).map_err(err)?, part.clone());
        offset += w;
    }
    Ok(())
}

/// Fusion parameters are the member extractors plus the reduction layer plus
/// the head. `mask` selects families by bit.
pub fn fusion_additivity(mask: u8, reduced: usize, hidden: usize, seed: u64) -> Check {
    let families: Vec<Family> =
        Family::ALL.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, &f)| f).collect();
    let mut spec = FusionSpec::desk(&families);
    spec.hidden_width = hidden;
    if families.len() > 1 {
        spec.reduced_dim = Some(reduced);
    }
    let model = FusionModel::<f32>::seeded(&spec, seed).map_err(err)?;
    let members: usize =
        (0..families.len()).map(|i| model.store.param_count_with_prefix(&format!("members.{i}."))).sum();
    let extractors: usize = model.arch.members().iter().map(|m| m.param_count()).sum();
    expect_eq!(members, extractors);
    let d = spec.concat_dim();
    let (reduction, head_in) = match spec.reduced_dim {
        Some(r) => (d * r + r, r),
        None => (0, d),
    };
    let head = head_in * hidden + hidden + hidden + 1;
    expect_eq!(model.param_count(), members + reduction + head);
    Ok(())
}

/// Full-scale single backbones within 5% of the published counts, with the
/// published feature widths. Returns the counts.
pub fn full_scale_singles() -> Result<Vec<(Family, usize)>, String> {
    let mut counts = Vec::new();
    for (family, expected) in PUBLISHED_COUNTS {
        let spec = FusionSpec::single(BackboneSpec::preset(family, ScalePreset::Paper));
        let model = FusionModel::<f32>::seeded(&spec, 0).map_err(err)?;
        let count = model.param_count();
        if ((count as f64 - expected) / expected).abs() > 0.05 {
            return Err(format!("{family:?}: {count} vs {expected}"));
        }
        expect_eq!(spec.members[0].feature_dim(), [2048, 1280, 1024][family as usize]);
        counts.push((family, count));
    }
    Ok(counts)
}

/// Full-scale Eff+Den fusion: members plus a 2304-to-r reduction plus the
/// 512-wide head.
pub fn full_scale_fusion_additivity() -> Check {
    let spec = FusionSpec::paper(&[Family::Mbconv, Family::Dense]);
    let model = FusionModel::<f32>::seeded(&spec, 0).map_err(err)?;
    let members: usize = model.arch.members().iter().map(|m| m.param_count()).sum();
    let r = spec.reduced_dim.ok_or("full-scale fusion has no reduction width")?;
    expect_eq!(model.param_count(), members + (2304 * r + r) + (r * 512 + 512) + 513);
    Ok(())
}
