// Pushes an equivariant swirl field forward along a random plane model.

use symflow::fields::{check_vector_equivariance, transform_vector, VectorFieldOnM};
use symflow::{Geometry, ModelKind, NodeModel};

pub fn run_example() -> symflow::Result<f64> {
    let v = VectorFieldOnM::new("swirl", |p| {
        let r = p[0].hypot(p[1]);
        [p[0] / r - p[1], p[1] / r + p[0]]
    });
    let h = NodeModel::new(Geometry::R2Punctured, ModelKind::Plain, &[8, 8], 2);
    let v_h = transform_vector(&h, &v);
    let w = v_h.eval(&[1.0, 1.0])?;
    println!("V_h(1, 1) = [{:.6}, {:.6}]", w[0], w[1]);
    let check = check_vector_equivariance(Geometry::R2Punctured, &v, &h, 100, 1e-4, 0);
    println!(
        "equivariance residual: V {:.2e}, V_h {:.2e}",
        check.input_residual, check.induced_residual
    );
    Ok(check.induced_residual)
}

fn main() -> symflow::Result<()> {
    run_example()?;
    Ok(())
}
