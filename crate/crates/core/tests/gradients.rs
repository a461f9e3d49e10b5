use proptest::prelude::*;
use symflow::models::NodeModel;
use symflow::net::ParamVector;
use symflow::train::{grad_through_flow, gradcheck_batch, gradient_check, tape_loss};
use symflow::{Frame, Geometry, ModelKind};

fn random_model(
    geometry: Geometry,
    kind: ModelKind,
    frame: Frame,
    seed: u64,
    scale: f64,
) -> NodeModel {
    let mut m = NodeModel::new(geometry, kind, &[6, 5], seed);
    m.frame = frame;
    m.coeffs.params_a.0.iter_mut().for_each(|v| *v *= scale);
    m.coeffs.params_b.0.iter_mut().for_each(|v| *v *= scale);
    m
}

#[test]
fn tape_matches_finite_differences_for_every_model_layout() {
    for (geometry, kind, frame) in [
        (Geometry::R2Punctured, ModelKind::Plain, Frame::Position),
        (Geometry::Sphere2, ModelKind::Plain, Frame::Position),
        (Geometry::R2Punctured, ModelKind::Augmented, Frame::Position),
        (Geometry::R2Punctured, ModelKind::Augmented, Frame::Velocity),
        (Geometry::Sphere2, ModelKind::Augmented, Frame::Position),
    ] {
        let m = random_model(geometry, kind, frame, 11, 3.0);
        let (inputs, targets) = gradcheck_batch(&m, 4, 0.1, 5);
        let report = gradient_check(&m, &inputs, &targets, 1e-5).unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "{geometry} {kind} {frame:?}: {} at {}",
            report.max_rel_error,
            report.worst_index
        );
    }
}

/// `theta' = w theta` from a network with no hidden layer, `phi' = 0`.
/// The flow is `theta(1) = e^w theta0`, so
/// `d/dw (theta(1) - c)^2 = 2 (e^w theta0 - c) theta0 e^w`.
#[test]
fn linear_field_gradient_matches_closed_form() {
    let mut m = NodeModel::new(Geometry::Sphere2, ModelKind::Plain, &[], 0);
    let w = 0.4;
    m.coeffs.params_a = ParamVector(vec![w, 0.0]);
    m.coeffs.params_b = ParamVector(vec![0.0, 0.0]);
    let (theta0, c) = (0.5, 0.9);
    let inputs = [[theta0, 1.0]];
    let targets = [[c, 1.0]];
    let g = grad_through_flow(&m, &inputs, &targets).unwrap();
    let analytic = 2.0 * (w.exp() * theta0 - c) * theta0 * w.exp();
    assert!(
        (g.grad_a.0[0] - analytic).abs() < 1e-6,
        "{} vs {analytic}",
        g.grad_a.0[0]
    );
    let (loss, _) = tape_loss(&m, &inputs, &targets).unwrap();
    assert!((loss - (w.exp() * theta0 - c).powi(2)).abs() < 1e-8);
    assert!(g.grad_b.0.iter().all(|v| *v == 0.0));
}

#[test]
fn gradient_leaves_parameters_untouched_and_repeats_bitwise() {
    let m = random_model(
        Geometry::R2Punctured,
        ModelKind::Augmented,
        Frame::Position,
        3,
        2.0,
    );
    let before = m.clone();
    let (inputs, targets) = gradcheck_batch(&m, 8, 0.5, 1);
    let a = grad_through_flow(&m, &inputs, &targets).unwrap();
    let b = grad_through_flow(&m, &inputs, &targets).unwrap();
    assert_eq!(m, before);
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_plain_models_pass_gradcheck(seed in 0u64..10_000, scale in 0.5f64..3.0, sphere: bool) {
        let geometry = if sphere { Geometry::Sphere2 } else { Geometry::R2Punctured };
        let m = random_model(geometry, ModelKind::Plain, Frame::Position, seed, scale);
        let (inputs, targets) = gradcheck_batch(&m, 3, 0.1, seed ^ 7);
        let report = gradient_check(&m, &inputs, &targets, 1e-5).unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
    }
}
