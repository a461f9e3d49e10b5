// Random models commute with rotations, whatever their weights.

use symflow::models::check_model_equivariance;
use symflow::{Geometry, ModelKind, NodeModel};

pub fn run_example() -> symflow::Result<f64> {
    let mut worst = 0.0f64;
    for geometry in [Geometry::R2Punctured, Geometry::Sphere2] {
        for kind in [ModelKind::Plain, ModelKind::Augmented] {
            let model = NodeModel::new(geometry, kind, &[16, 16], 3);
            let report = check_model_equivariance(&model, 50, 1e-5, 0);
            println!(
                "{geometry} {kind}: max |L_g h(p) - h(L_g p)| = {:.2e}",
                report.max_violation
            );
            worst = worst.max(report.max_violation);
        }
    }
    Ok(worst)
}

fn main() -> symflow::Result<()> {
    run_example()?;
    Ok(())
}
