// Forward map and its inverse for a plain and an augmented model.

use symflow::models::Diffeomorphism;
use symflow::{Geometry, ModelKind, NodeModel};

pub fn run_example() -> symflow::Result<f64> {
    let p = [1.2, -0.4];
    let mut worst = 0.0f64;
    for kind in [ModelKind::Plain, ModelKind::Augmented] {
        let model = NodeModel::new(Geometry::R2Punctured, kind, &[8, 8], 5);
        let q = model.apply(&p)?;
        let back = model.apply_inverse(&q)?;
        let err = Geometry::R2Punctured.chart_distance(&back, &p);
        println!(
            "{kind}: h{p:?} = [{:.6}, {:.6}], |h^-1(h(p)) - p| = {err:.2e}",
            q[0], q[1]
        );
        worst = worst.max(err);
    }
    Ok(worst)
}

fn main() -> symflow::Result<()> {
    run_example()?;
    Ok(())
}
