//! Euler-Maruyama paths of a controlled SDE and their risk-sensitive cost.

use rsens::model::example_5_2;
use rsens::montecarlo::{risk_sensitive_cost, simulate_paths, Policy};

fn main() -> rsens::Result<()> {
    let fx = example_5_2();
    let model = fx.model();

    // u ≡ 1 makes X a geometric Brownian motion started at 1
    let bundle = simulate_paths(model, &Policy::Constant(1), &[1.0], 100, 20_000, 7)?;
    let mean_xt = (0..bundle.n_paths).map(|p| bundle.terminal_state(p)[0]).sum::<f64>() / bundle.n_paths as f64;
    println!("E[X_T] = {mean_xt:.4} (martingale, exact value 1)");

    let cost = risk_sensitive_cost(model, &bundle)?;
    println!("J(u=1) = {:.5} ± {:.5} with μ = {}", cost.point_estimate, cost.std_error, cost.mu);

    let idle = simulate_paths(model, &Policy::Constant(0), &[1.0], 100, 1_000, 7)?;
    println!("J(u=0) = {:.5} (deterministic, arctan 1)", risk_sensitive_cost(model, &idle)?.point_estimate);

    // first three steps of path 0 in the documented CSV layout
    let mut csv = Vec::new();
    idle.write_csv(model, &mut csv)?;
    for line in String::from_utf8_lossy(&csv).lines().take(4) {
        println!("{line}");
    }
    Ok(())
}
