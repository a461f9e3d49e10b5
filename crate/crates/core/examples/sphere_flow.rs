// Learns `theta -> e theta`, `phi -> phi + 0.05` on the sphere and compares
// the coefficients with `A = theta`, `B = 0.05`.
//
// `cargo run --release --example sphere_flow [epochs]`

use symflow::train::{coefficient_curves, coefficient_errors, fit, ExampleId, TrainConfig};

fn main() -> symflow::Result<()> {
    let mut config = TrainConfig::new(ExampleId::Sphere);
    if let Some(e) = std::env::args().nth(1) {
        config.epochs = e.parse().expect("epochs must be an integer");
    }
    let (model, history) = fit(&config)?;
    println!("final loss {:.4e}", history.final_loss());
    for [theta, a, b] in coefficient_curves(&model, ExampleId::Sphere)
        .into_iter()
        .step_by(25)
    {
        println!("theta = {theta:.3}  A = {a:.4}  B = {b:.4}");
    }
    let (ea, eb) = coefficient_errors(&model, ExampleId::Sphere).unwrap();
    println!("sup |A - theta| = {ea:.3e}, sup |B - 0.05| = {eb:.3e}");
    Ok(())
}
