// Pushes a standard Gaussian through the unit radial translation and prints
// the transformed density along the positive x axis.

use symflow::cli::radial_translation;
use symflow::fields::{check_density_equivariance_in, transform_density, Density};
use symflow::models::Region;
use symflow::Geometry;

pub fn run_example() -> symflow::Result<f64> {
    let rho = Density::standard_gaussian();
    let h = radial_translation();
    let rho_h = transform_density(&h, &rho);
    for x in [1.25, 1.5, 2.0, 2.5, 3.0] {
        println!(
            "x = {x:<4}  rho = {:.6}  rho_h = {:.6}",
            rho.eval(&[x, 0.0])?,
            rho_h.eval(&[x, 0.0])?
        );
    }
    let check = check_density_equivariance_in(
        Geometry::R2Punctured,
        &rho,
        &h,
        Region::new(1.5, 2.8),
        100,
        1e-4,
        0,
    );
    println!(
        "rotation invariance of rho_h: residual {:.2e}",
        check.induced_residual
    );
    rho_h.eval(&[2.0, 0.0])
}

fn main() -> symflow::Result<()> {
    run_example()?;
    Ok(())
}
