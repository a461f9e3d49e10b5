// Compares the tape gradient through the RK4 unroll with central
// differences.

use symflow::train::{gradcheck_batch, gradient_check};
use symflow::{Frame, Geometry, ModelKind, NodeModel};

pub fn run_example() -> symflow::Result<f64> {
    let mut worst = 0.0f64;
    for (geometry, kind, frame) in [
        (Geometry::R2Punctured, ModelKind::Plain, Frame::Position),
        (Geometry::Sphere2, ModelKind::Plain, Frame::Position),
        (Geometry::R2Punctured, ModelKind::Augmented, Frame::Velocity),
    ] {
        let mut model = NodeModel::new(geometry, kind, &[6, 5], 1);
        model.frame = frame;
        let (inputs, targets) = gradcheck_batch(&model, 4, 0.1, 0);
        let r = gradient_check(&model, &inputs, &targets, 1e-5)?;
        println!(
            "{geometry} {kind} {frame:?}: {} params, max rel error {:.2e}",
            r.params, r.max_rel_error
        );
        worst = worst.max(r.max_rel_error);
    }
    Ok(worst)
}

fn main() -> symflow::Result<()> {
    run_example()?;
    Ok(())
}
