mod common;

use common::{model_gradient_check, op_cases, op_gradient_error};
use retina_fusion::fusion::FusionSpec;
use retina_fusion::nn::Family;

#[test]
fn every_op_matches_central_differences() {
    let mut failures = Vec::new();
    for (name, inputs, f) in op_cases() {
        let err = op_gradient_error(&inputs, f);
        if !(err < 1e-3) {
            failures.push(format!("{name}: {err:e}"));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn single_backbones_match_central_differences() {
    for family in Family::ALL {
        let r = model_gradient_check(&FusionSpec::desk(&[family]), 2, 40, 11);
        assert!(r.max_rel_err < 1e-2, "{family:?}: {} ({})", r.max_rel_err, r.worst);
    }
}

#[test]
fn three_way_fusion_matches_central_differences() {
    let spec = FusionSpec::desk(&[Family::Residual, Family::Mbconv, Family::Dense]);
    let r = model_gradient_check(&spec, 2, 120, 5);
    assert_eq!(r.checked, 120);
    assert!(r.max_rel_err < 1e-2, "{} ({})", r.max_rel_err, r.worst);
}
