//! A model described in TOML with coefficient expressions, checked against
//! the standing assumptions and solved on a grid.

use rsens::hjb::{solve_hjb, GridSpec};
use rsens::model::{validate_assumptions, DomainBox, ModelConfig};
use rsens::montecarlo::{simulate_path_costs, cost_from_samples, Policy};

const CONFIG: &str = r#"
name = "mean-reverting"
state_dim = 1
risk = 0.5
horizon = [0.0, 1.0]
controls = [[-1.0], [0.0], [1.0]]
domain = [[-4.0, 4.0]]

[coefficients]
kind = "expressions"
drift = ["-x1 + u1"]
diffusion = ["0.3"]
running_cost = "0.5*u1^2"
terminal_cost = "arctan(x1^2)"
"#;

fn main() -> rsens::Result<()> {
    let config = ModelConfig::from_toml_str(CONFIG)?;
    let model = config.build()?;

    let report = validate_assumptions(&model, 2_000, 1);
    for c in &report.checks {
        println!("{:<24} {:?} observed {:.3}", c.name, c.status, c.observed);
    }

    // upwind drift differencing is first order in dx
    for nx in [81, 161] {
        let coarse = solve_hjb(&model, &GridSpec::uniform(11, nx, DomainBox::cube(1, 4.0)))?;
        println!("nx {nx}: V(0, 1.5) = {:.4}", coarse.interpolate(0.0, &[1.5]));
    }
    let grid = solve_hjb(&model, &GridSpec::uniform(11, 321, DomainBox::cube(1, 4.0)))?;
    println!("nx 321: V(0, 1.5) = {:.4}, control {:?}", grid.interpolate(0.0, &[1.5]), grid.policy_at(0.0, &[1.5]).map(|i| model.controls().point(i)[0]));

    let policy = grid.feedback_policy()?;
    let costs = simulate_path_costs(&model, &policy, &[1.5], 200, 50_000, 2)?;
    let est = cost_from_samples(model.risk(), &costs.total())?;
    println!("cost of the grid policy: {:.4} ± {:.4}", est.point_estimate, est.std_error);
    let idle = simulate_path_costs(&model, &Policy::Constant(1), &[1.5], 200, 50_000, 2)?;
    println!("cost of u ≡ 0:           {:.4}", cost_from_samples(model.risk(), &idle.total())?.point_estimate);
    Ok(())
}
