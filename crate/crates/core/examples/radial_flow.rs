// Learns the unit radial translation on the punctured plane and compares
// the coefficients with `A(r) = 1/r`, `B(r) = 0`.
//
// `cargo run --release --example radial_flow [epochs]`

use symflow::train::{coefficient_curves, coefficient_errors, fit, ExampleId, TrainConfig};

fn main() -> symflow::Result<()> {
    let mut config = TrainConfig::new(ExampleId::Radial);
    if let Some(e) = std::env::args().nth(1) {
        config.epochs = e.parse().expect("epochs must be an integer");
    }
    let (model, history) = fit(&config)?;
    for e in &history.entries {
        println!("epoch {:>4}  loss {:.4e}", e.epoch, e.loss);
    }
    for [r, a, b] in coefficient_curves(&model, ExampleId::Radial)
        .into_iter()
        .step_by(25)
    {
        println!("r = {r:.3}  A = {a:.4}  1/r = {:.4}  B = {b:.4}", 1.0 / r);
    }
    let (ea, eb) = coefficient_errors(&model, ExampleId::Radial).unwrap();
    println!("sup |A - 1/r| = {ea:.3e}, sup |B| = {eb:.3e}");
    Ok(())
}
