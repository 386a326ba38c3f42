//! Viscosity residual diagnostics on an HJB grid solution and on the
//! tabulated closed-form value of the second example.

use rsens::hjb::{solve_hjb, viscosity_residuals, GridSpec, ResidualOptions, ValueGrid};
use rsens::model::{example_5_1, example_5_2, example_5_2_value, DomainBox};

fn main() -> rsens::Result<()> {
    let opts = ResidualOptions::default();
    let fx = example_5_1();
    let grid = solve_hjb(fx.model(), &GridSpec::uniform(21, 241, DomainBox::cube(1, 3.0)))?;
    let points: Vec<(f64, Vec<f64>)> = [-1.0, 0.0, 1.0, 2.0].iter().map(|&x| (0.5, vec![x])).collect();
    for r in viscosity_residuals(&grid, fx.model(), &points, &opts)? {
        println!("5.1 grid  x = {:+.1}: {:?} residual {:.2e}", r.x[0], r.kind, r.sub_residual.unwrap_or(f64::NAN));
    }

    let kinked = example_5_2();
    let xs: Vec<f64> = (0..=2400).map(|k| -1.0 + 0.0025 * k as f64).collect();
    let ts: Vec<f64> = (0..=200).map(|k| 0.005 * k as f64).collect();
    let tabulated = ValueGrid::from_fn(ts, vec![xs], |t, x| example_5_2_value(t, x[0], 1.0))?;
    for r in viscosity_residuals(&tabulated, kinked.model(), &[(0.5, vec![0.5]), (0.5, vec![1.0])], &opts)? {
        println!(
            "5.2 closed form x = {:.1}: {:?} sub {:?} super {:?} ({} superjet members)",
            r.x[0], r.kind, r.sub_residual, r.super_residual, r.superjet_members
        );
        if let Some(w) = r.sub_witness {
            println!("  witness {w:?}");
        }
    }
    Ok(())
}
