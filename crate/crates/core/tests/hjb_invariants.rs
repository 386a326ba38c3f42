use std::f64::consts::FRAC_PI_4;

use rsens::hjb::{solve_hjb, GridSpec};
use rsens::model::{example_5_1, example_5_2, ControlSet, DomainBox};
use rsens::montecarlo::{cost_from_samples, simulate_path_costs, Policy};

/// V(t, x) = (T − t) + log E exp(arctan(x + √(T−t) ξ)) for dX = dW, f = 1,
/// h = arctan, μ = 1, by composite Simpson quadrature over ξ ∈ [−9, 9].
fn cole_hopf_value(t: f64, x: f64) -> f64 {
    let tau = 1.0 - t;
    if tau == 0.0 {
        return x.atan();
    }
    let n = 4000;
    let h = 18.0 / n as f64;
    let mut acc = 0.0;
    for k in 0..=n {
        let xi = -9.0 + h * k as f64;
        let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * (-0.5 * xi * xi).exp() * (x + tau.sqrt() * xi).atan().exp();
    }
    tau + (acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()).ln()
}

#[test]
fn refinement_reduces_the_error_at_least_by_half_again() {
    let model = example_5_1()
        .model()
        .with_controls(ControlSet::scalar(&[1.0]).unwrap())
        .unwrap();
    // the box is twice the probed region so boundary data stays out of the way
    let probes = [-3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0];
    let errors: Vec<f64> = [121, 241, 481]
        .iter()
        .map(|&nx| {
            let grid = solve_hjb(&model, &GridSpec::uniform(11, nx, DomainBox::cube(1, 6.0))).unwrap();
            let mut err = 0.0f64;
            for t in [0.0, 0.5] {
                for x in probes {
                    err = err.max((grid.interpolate(t, &[x]) - cole_hopf_value(t, x)).abs());
                }
            }
            err
        })
        .collect();
    assert!(errors[0] / errors[1] >= 1.5, "{errors:?}");
    assert!(errors[1] / errors[2] >= 1.5, "{errors:?}");
    assert!(errors[2] < 1e-4, "{errors:?}");
}

#[test]
fn value_is_dominated_by_constant_policy_costs() {
    let spec = GridSpec::uniform(11, 481, DomainBox::cube(1, 6.0));
    for fx in [example_5_1(), example_5_2()] {
        let model = fx.model();
        let grid = solve_hjb(model, &spec).unwrap();
        for (t, x) in [(0.0, 1.0), (0.0, -0.5), (0.5, 1.5), (0.3, 0.2)] {
            let v = grid.interpolate(t, &[x]);
            let shifted = model.with_horizon(rsens::model::Horizon::new(t, 1.0).unwrap());
            for i in 0..model.controls().len() {
                let costs = simulate_path_costs(&shifted, &Policy::Constant(i), &[x], 200, 40_000, 9).unwrap();
                let est = cost_from_samples(model.risk(), &costs.total()).unwrap();
                assert!(
                    v <= est.point_estimate + 3.0 * est.std_error + 1e-2,
                    "{:?} V({t}, {x}) = {v} vs J(u{i}) = {est:?}",
                    fx.id()
                );
            }
        }
    }
}

#[test]
fn example_5_2_grid_value_lies_below_the_stated_closed_form() {
    let fx = example_5_2();
    let grid = solve_hjb(fx.model(), &GridSpec::uniform(11, 961, DomainBox::cube(1, 12.0))).unwrap();
    let v = grid.interpolate(0.0, &[1.0]);
    assert!((v - 0.7318).abs() < 2e-3, "V(0, 1) = {v}");
    assert!(v < FRAC_PI_4 - 0.05);
    // the open-loop control u ≡ 1 already beats the stated value
    let costs = simulate_path_costs(fx.model(), &Policy::Constant(1), &[1.0], 400, 200_000, 1).unwrap();
    let est = cost_from_samples(2.0, &costs.total()).unwrap();
    assert!(est.point_estimate + 3.0 * est.std_error < FRAC_PI_4);
    assert!(v <= est.point_estimate + 3.0 * est.std_error);
    // well left of the kink the grid still reproduces arctan
    for x in [-2.0, -0.5, 0.3] {
        assert!((grid.interpolate(0.0, &[x]) - fx.value(0.0, &[x])).abs() < 2e-3, "x = {x}");
    }
}

#[test]
fn example_5_1_policy_is_idle_everywhere_inside() {
    let grid = solve_hjb(example_5_1().model(), &GridSpec::uniform(11, 241, DomainBox::cube(1, 3.0))).unwrap();
    let m = grid.n_space();
    for i in 0..grid.t_nodes.len() {
        assert!(grid.policy[i * m + 1..(i + 1) * m - 1].iter().all(|&u| u == 0));
    }
}

#[test]
fn value_stays_within_the_declared_bound() {
    for fx in [example_5_1(), example_5_2()] {
        let grid = solve_hjb(fx.model(), &GridSpec::uniform(11, 241, DomainBox::cube(1, 6.0))).unwrap();
        let bound = fx.model().bound_proxy().unwrap();
        let sup = grid.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sup <= 1.1 * bound, "{sup} > {bound}");
        assert!(grid.meta.cfl_ratio <= 1.0);
    }
}
