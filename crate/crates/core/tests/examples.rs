#[allow(dead_code)]
mod invariance {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/invariance_check.rs"
    ));
}

#[allow(dead_code)]
mod equivariance {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/model_equivariance.rs"
    ));
}

#[allow(dead_code)]
mod inverse {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/flow_inverse.rs"
    ));
}

#[allow(dead_code)]
mod density {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/density_transform.rs"
    ));
}

#[allow(dead_code)]
mod pushforward {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/vector_pushforward.rs"
    ));
}

#[allow(dead_code)]
mod gradcheck {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/gradient_check.rs"
    ));
}

#[allow(dead_code)]
mod checkpoint {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/checkpoint.rs"
    ));
}

#[test]
fn invariance_example_passes() {
    assert!(invariance::run_example().unwrap());
}

#[test]
fn equivariance_example_stays_below_tolerance() {
    assert!(equivariance::run_example().unwrap() < 1e-5);
}

#[test]
fn inverse_example_round_trips() {
    assert!(inverse::run_example().unwrap() < 1e-6);
}

#[test]
fn density_example_matches_hand_value() {
    let v = density::run_example().unwrap();
    assert!((v - 0.048266).abs() < 1e-4, "{v}");
}

#[test]
fn pushforward_example_is_equivariant() {
    assert!(pushforward::run_example().unwrap() < 1e-4);
}

#[test]
fn gradcheck_example_agrees() {
    assert!(gradcheck::run_example().unwrap() < 1e-4);
}

#[test]
fn checkpoint_example_restores_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let (before, after) = checkpoint::run_example(dir.path()).unwrap();
    assert_eq!(before, after);
}
