//! Solves the HJB equation of both built-in fixtures on a truncated grid and
//! compares the result with the closed-form value functions.

use std::time::Instant;

use rsens::hjb::{solve_hjb, GridSpec};
use rsens::model::{example_5_1, example_5_2, DomainBox};

fn main() -> rsens::Result<()> {
    for fx in [example_5_1(), example_5_2()] {
        let spec = GridSpec::uniform(11, 241, DomainBox::cube(1, 3.0));
        let start = Instant::now();
        let grid = solve_hjb(fx.model(), &spec)?;
        println!(
            "example {}: {} substeps, cfl {:.3}, {:.2?}",
            fx.id(),
            grid.meta.substeps,
            grid.meta.cfl_ratio,
            start.elapsed()
        );
        for (t, x) in [(0.0, -1.6), (0.0, 0.4), (0.0, 1.0), (0.0, 2.0), (0.5, 1.0)] {
            println!(
                "  V({t}, {x:+.1}) grid {:.5}  closed form {:.5}",
                grid.interpolate(t, &[x]),
                fx.value(t, &[x])
            );
        }
    }
    Ok(())
}
