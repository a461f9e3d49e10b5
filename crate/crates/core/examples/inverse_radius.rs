// The map `r -> 1/r` reverses the order of radii, so no plain flow can
// represent it. The tangent-bundle model can.
//
// `cargo run --release --example inverse_radius [epochs]`

use symflow::train::{fit, radial_traces, traces_keep_order, ExampleId, TrainConfig};
use symflow::ModelKind;

fn main() -> symflow::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .map(|e| e.parse().expect("epochs must be an integer"));
    let radii = [0.5, 1.0, 1.5, 2.0];
    for kind in [ModelKind::Plain, ModelKind::Augmented] {
        let mut config = TrainConfig::new(ExampleId::InverseRadius).with_kind(kind);
        if let Some(e) = epochs {
            config.epochs = e;
        }
        let (model, history) = fit(&config)?;
        let traces = radial_traces(&model, &radii, 0.0)?;
        let ends: Vec<String> = traces
            .iter()
            .map(|t| format!("{:.3}", t.last().unwrap()))
            .collect();
        println!(
            "{kind}: final loss {:.4e}, r(1) from {radii:?} = [{}], order kept: {}",
            history.final_loss(),
            ends.join(", "),
            traces_keep_order(&traces)
        );
    }
    Ok(())
}
