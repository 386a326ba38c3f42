//! First- and second-order adjoint processes along the optimal trajectory,
//! checked against the closed forms, and the maximum condition on every
//! sampled cell.

use rsens::adjoint::{fixture_adjoints, verify_maximum_condition, MaximumConditionOptions};
use rsens::model::{example_5_1, example_5_2};
use rsens::montecarlo::{simulate_paths, Policy};
use rsens::qbsde::{solve_by_transform, PolynomialBasis};

fn main() -> rsens::Result<()> {
    for fx in [example_5_1().with_initial_state(0.5)?, example_5_2()] {
        let model = fx.model();
        let policy = Policy::Feedback(fx.optimal_feedback());
        let mut bundle = simulate_paths(model, &policy, fx.initial_state(), 100, 256, 1)?;
        solve_by_transform(model, &bundle, PolynomialBasis::default())?.attach_to(&mut bundle)?;

        let adj = fixture_adjoints(&fx, &bundle, PolynomialBasis::default())?;
        let (p, big_p) = adj.numeric.mean_at(0);
        println!(
            "example {} at x0 = {}: p(0) = {:.6}, P(0) = {:.6}; max error p {:.1e}, P {:.1e}",
            fx.id(),
            fx.initial_state()[0],
            p[0],
            big_p[0],
            adj.max_error_p,
            adj.max_error_big_p
        );

        let report = verify_maximum_condition(model, &bundle, &adj.numeric, MaximumConditionOptions::default())?;
        println!("  maximum condition: {}/{} cells", report.passed, report.cells);
        if let Some(cell) = &report.worst_cell {
            println!("  worst cell s = {:.2}: table {:?}", cell.s, cell.table);
        }
    }
    Ok(())
}
