use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use timecf::model::ModelConfig;
use timecf::tensor::{grad_check, primitive_checks, Tape, Tensor};
use timecf::train::{gradcheck_model, GRADCHECK_TOLERANCE};

const STEP: f64 = 1e-5;

fn check_primitive(name: &str, seed: u64) -> Result<(), TestCaseError> {
    let check = primitive_checks()
        .into_iter()
        .find(|c| c.name == name)
        .expect("known primitive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let err = check
        .trial(&mut rng, STEP)
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(err < GRADCHECK_TOLERANCE, "{name}: relative error {err:e}");
    Ok(())
}

macro_rules! primitive_props {
    ($($test:ident => $name:literal),* $(,)?) => {
        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]
            $(
                #[test]
                fn $test(seed in any::<u64>()) {
                    check_primitive($name, seed)?;
                }
            )*
        }
    };
}

primitive_props! {
    add_gradient => "add",
    sub_gradient => "sub",
    mul_gradient => "mul",
    scale_gradient => "scale",
    scale_by_gradient => "scale_by",
    square_gradient => "square",
    sum_gradient => "sum",
    mean_gradient => "mean",
    transpose_gradient => "transpose",
    reshape_gradient => "reshape",
    row_affine_gradient => "row_affine",
    gelu_gradient => "gelu",
    affine_gradient => "affine",
    conv1d_zero_gradient => "conv1d_zero",
    conv1d_circular_gradient => "conv1d_circular",
    depthwise_conv1d_gradient => "depthwise_conv1d",
    avg_pool1d_gradient => "avg_pool1d",
    moving_average_gradient => "moving_average",
    layer_norm_gradient => "layer_norm",
    rfft_gradient => "rfft",
    complex_modulus_gradient => "complex_modulus",
}

#[test]
fn every_primitive_has_a_property() {
    let names: Vec<_> = primitive_checks().iter().map(|c| c.name).collect();
    assert_eq!(names.len(), 21);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn map_with_exact_derivative_passes(xs in prop::collection::vec(-3.0f64..3.0, 1..8)) {
        let err = grad_check(
            |t: &mut Tape, v| {
                let y = t.map(v, f64::tanh, |a| 1.0 - a.tanh().powi(2));
                Ok(t.sum(y))
            },
            &Tensor::vector(xs),
            STEP,
        )
        .unwrap();
        prop_assert!(err < GRADCHECK_TOLERANCE);
    }
}

#[test]
fn tiny_model_loss_gradient() {
    for alpha in [0.0, 0.5, 1.0] {
        let report = gradcheck_model(&ModelConfig::tiny(), alpha, 3, 11).unwrap();
        assert!(report.passed(), "alpha {alpha}: worst {:e}", report.worst());
    }
}

#[test]
fn depthwise_and_fixed_alpha_variants() {
    let mut cfg = ModelConfig::tiny();
    cfg.conv_mode = timecf::model::ConvMode::Depthwise;
    cfg.alpha_mode = timecf::model::AlphaMode::Fixed;
    let report = gradcheck_model(&cfg, 0.5, 3, 5).unwrap();
    assert!(report.passed(), "worst {:e}", report.worst());
    assert!(!report.groups.iter().any(|g| g.group.ends_with("alpha")));
}
