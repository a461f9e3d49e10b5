// Checks every registered invariant set under the prolonged rotation action.

use symflow::invariants::registry;
use symflow::jet::check_invariance;
use symflow::Geometry;

pub fn run_example() -> symflow::Result<bool> {
    let mut all = true;
    for geometry in [Geometry::R2Punctured, Geometry::Sphere2] {
        for order in [1, 2] {
            let set = registry(geometry, order)?;
            let report = check_invariance(geometry, &set.members, order, 200, 1e-6, 1)?;
            println!(
                "{:<14} {:?}: |X(I)| <= {:.1e}, |I(gz) - I(z)| <= {:.1e}",
                set.label().to_string(),
                set.member_labels(),
                report.max_infinitesimal,
                report.max_finite
            );
            all &= report.pass;
        }
    }
    Ok(all)
}

fn main() -> symflow::Result<()> {
    let pass = run_example()?;
    println!(
        "{}",
        if pass {
            "all sets invariant"
        } else {
            "invariance violated"
        }
    );
    Ok(())
}
