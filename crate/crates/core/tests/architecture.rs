mod common;

use common::arch;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dense_block_growth_law(c0 in 1usize..12, layers in 1usize..5, growth in 1usize..8, seed in any::<u64>()) {
        prop_assert_eq!(arch::dense_block_growth(c0, layers, growth, seed), Ok(()));
    }

    #[test]
    fn residual_block_with_zero_branch_is_identity(c in 1usize..16, mid in 1usize..8, seed in any::<u64>()) {
        prop_assert_eq!(arch::residual_zero_branch_identity(c, mid, seed), Ok(()));
    }

    #[test]
    fn mbconv_expansion_arithmetic(
        cin in 1usize..12,
        cout in 1usize..12,
        ratio in 1usize..7,
        k5 in any::<bool>(),
        stride in 1usize..3,
        seed in any::<u64>(),
    ) {
        let kernel = if k5 { 5 } else { 3 };
        prop_assert_eq!(arch::mbconv_arithmetic(cin, cout, ratio, kernel, stride, seed), Ok(()));
    }

    #[test]
    fn concat_then_slice_is_identity(widths in prop::collection::vec(1usize..6, 2..4), n in 1usize..4, seed in any::<u64>()) {
        prop_assert_eq!(arch::concat_then_slice(&widths, n, seed), Ok(()));
    }

    #[test]
    fn fusion_counts_are_additive(mask in 1u8..8, reduced in 1usize..64, hidden in 1usize..64, seed in any::<u64>()) {
        prop_assert_eq!(arch::fusion_additivity(mask, reduced, hidden, seed), Ok(()));
    }
}

#[test]
fn full_scale_single_models_match_published_counts() {
    arch::full_scale_singles().unwrap();
}

#[test]
fn full_scale_fusion_counts_are_additive() {
    arch::full_scale_fusion_additivity().unwrap();
}
