//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criterion 2 compares the grid solution of the second example with its
//! stated closed form, which is not the value function of that problem (the
//! open-loop control u ≡ 1 already costs less at x = 1). It is run as
//! written and listed in `KNOWN_UNATTAINABLE`: its FAIL line is printed, and
//! the binary exits nonzero on any other failure or if criterion 2 passes.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rsens::adjoint::{
    fixture_adjoints, hamiltonian_script_h, verify_maximum_condition, MaximumConditionOptions,
};
use rsens::hjb::{solve_hjb, GridSpec};
use rsens::jets::{
    script_h1, test_x_jet, verify_spatial_inclusions, verify_time_inclusions, JetOptions, Side,
};
use rsens::model::{example_5_1, example_5_2, ClosedFormExample, ControlSet, DomainBox};
use rsens::montecarlo::{cost_from_samples, risk_sensitive_cost, simulate_paths, small_mu_expansion_check, Policy};
use rsens::qbsde::{solve_by_regression, solve_by_transform, PolynomialBasis};
use rsens::Result;

const KNOWN_UNATTAINABLE: &[u32] = &[2];
const S_SAMPLES: [f64; 3] = [0.25, 0.5, 0.75];

type Criterion = (u32, &'static str, fn() -> Result<Verdict>);

struct Verdict {
    passed: bool,
    detail: String,
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> (T, Duration) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let start = Instant::now();
    let out = pool.install(f);
    (out, start.elapsed())
}

fn hjb_grid() -> GridSpec {
    GridSpec::uniform(11, 241, DomainBox::cube(1, 3.0))
}

fn criterion_1() -> Result<Verdict> {
    let fx = example_5_1();
    let (grid, took) = single_threaded(|| solve_hjb(fx.model(), &hjb_grid()));
    let err = grid?.max_interior_error(|_, x| x[0].atan(), 0.2);
    Ok(Verdict {
        passed: err <= 5e-3 && took.as_secs_f64() <= 60.0,
        detail: format!("max interior error {err:.2e} (tol 5e-3), {:.2}s single-threaded (limit 60s)", took.as_secs_f64()),
    })
}

fn criterion_2() -> Result<Verdict> {
    let fx = example_5_2();
    let (grid, took) = single_threaded(|| solve_hjb(fx.model(), &hjb_grid()));
    let grid = grid?;
    let mut worst = (0.0f64, 0.0, 0.0);
    for t in [0.0, 0.25, 0.5, 0.75] {
        for x in [-1.6, -0.8, 0.4, 1.2, 1.6] {
            let e = (grid.interpolate(t, &[x]) - fx.value(t, &[x])).abs();
            if e > worst.0 {
                worst = (e, t, x);
            }
        }
    }
    Ok(Verdict {
        passed: worst.0 <= 2e-2 && took.as_secs_f64() <= 60.0,
        detail: format!(
            "max probe error {:.2e} at (t={}, x={}) (tol 2e-2), {:.2}s single-threaded",
            worst.0,
            worst.1,
            worst.2,
            took.as_secs_f64()
        ),
    })
}

fn optimal_bundle(fx: &ClosedFormExample) -> Result<rsens::montecarlo::PathBundle> {
    let policy = Policy::Feedback(fx.optimal_feedback());
    let mut bundle = simulate_paths(fx.model(), &policy, fx.initial_state(), 100, 256, 17)?;
    solve_by_transform(fx.model(), &bundle, PolynomialBasis::default())?.attach_to(&mut bundle)?;
    Ok(bundle)
}

fn criterion_3() -> Result<Verdict> {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    let cases = [
        example_5_1(),
        example_5_1().with_initial_state(0.3)?,
        example_5_1().with_initial_state(-0.7)?,
        example_5_2(),
    ];
    for fx in &cases {
        let both = fixture_adjoints(fx, &optimal_bundle(fx)?, PolynomialBasis::default())?;
        let (p, big_p) = both.numeric.mean_at(0);
        let err = both.max_error_p.max(both.max_error_big_p);
        worst = worst.max(err);
        parts.push(format!("{} x0={}: (p,P)=({:.4},{:.4})", fx.id(), fx.initial_state()[0], p[0], big_p[0]));
    }
    Ok(Verdict {
        passed: worst <= 5e-3,
        detail: format!("max error {worst:.2e} (tol 5e-3); {}", parts.join("; ")),
    })
}

fn criterion_4() -> Result<Verdict> {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut equality_gap = f64::NAN;
    for fx in [example_5_1(), example_5_2()] {
        let bundle = optimal_bundle(&fx)?;
        let adj = fixture_adjoints(&fx, &bundle, PolynomialBasis::default())?.numeric;
        let report = verify_maximum_condition(fx.model(), &bundle, &adj, MaximumConditionOptions::default())?;
        ok &= report.all_passed();
        parts.push(format!("{}: {}/{} cells", fx.id(), report.passed, report.cells));
        if fx.id().to_string() == "5.2" {
            let m = fx.model();
            let z = bundle.backward.as_ref().map(|b| b.1[0]).unwrap_or(f64::NAN);
            let x = bundle.state(0, 0);
            let mut sigma_bar = [0.0];
            m.diffusion(0.0, x, m.controls().point(bundle.control(0, 0)), &mut sigma_bar);
            let h: Vec<f64> = m
                .controls()
                .iter()
                .map(|u| hamiltonian_script_h(m, 0.0, x, z, u, adj.p(0, 0), adj.q(0, 0), adj.big_p(0, 0), &sigma_bar))
                .collect();
            equality_gap = (h[0] - h[1]).abs().max(h[0].abs());
        }
    }
    Ok(Verdict {
        passed: ok && equality_gap <= 1e-10,
        detail: format!("{}; equality case |H(0)-H(1)| at (0,1) = {equality_gap:.1e} (tol 1e-10)", parts.join(", ")),
    })
}

fn criterion_5() -> Result<Verdict> {
    let opts = JetOptions::default();
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for fx in [example_5_1(), example_5_2()] {
        let r = verify_spatial_inclusions(&fx, &S_SAMPLES, &opts)?;
        ok &= r.passed;
        let swept: usize = r.samples.iter().map(|s| s.sweep.candidates).min().unwrap_or(0);
        let members: usize = r.samples.iter().map(|s| s.sweep.members).sum();
        if fx.id().to_string() == "5.2" {
            ok &= swept >= 13_000 && members == 0;
        }
        parts.push(format!("{}: passed={} sweep {} pairs/sample, {} sub members", fx.id(), r.passed, swept, members));
    }
    // negative control: a shifted gradient is not in the superjet
    let fx = example_5_1();
    let p = fx.adjoint(0.5).p[0] + 0.05;
    let neg = test_x_jet(&fx, 0.5, &fx.optimal_state(0.5), &[p], &fx.adjoint(0.5).big_p, Side::Super, &opts)?;
    ok &= !neg.is_member();
    let took = start.elapsed().as_secs_f64();
    Ok(Verdict {
        passed: ok && took <= 120.0,
        detail: format!("{}; p+0.05 control {:?}; {took:.1}s (limit 120s)", parts.join(", "), neg.decision),
    })
}

fn criterion_6() -> Result<Verdict> {
    let opts = JetOptions::default();
    let mut ok = true;
    let mut h1_max = 0.0f64;
    let mut parts = Vec::new();
    for fx in [example_5_1(), example_5_2()] {
        let m = fx.model();
        for &s in &S_SAMPLES {
            let x = fx.optimal_state(s);
            let a = fx.adjoint(s);
            let u = m.controls().point(fx.optimal_control(s, &x));
            let mut sigma_bar = vec![0.0];
            m.diffusion(s, &x, u, &mut sigma_bar);
            h1_max = h1_max.max(script_h1(m, s, &x, u, &a.p, &a.q, &a.big_p, &sigma_bar).abs());
        }
        let r = verify_time_inclusions(&fx, &S_SAMPLES, &opts)?;
        ok &= r.passed;
        parts.push(format!("{} time inclusions passed={}", fx.id(), r.passed));
    }
    Ok(Verdict {
        passed: ok && h1_max <= 1e-12,
        detail: format!("max |H1| = {h1_max:.1e} (tol 1e-12); {}", parts.join(", ")),
    })
}

fn criterion_7() -> Result<Verdict> {
    let fx = example_5_2();
    let model = fx.model();
    let bundle = simulate_paths(model, &Policy::Constant(1), &[1.0], 200, 100_000, 2024)?;
    let transform = solve_by_transform(model, &bundle, PolynomialBasis::default())?;
    // cubic polynomials in the state leave a visible bias in Z on the
    // lognormal state of this example; the quintic basis removes it
    let basis = PolynomialBasis { degree: 5, ridge: 1e-8 };
    let regression = solve_by_regression(model, &bundle, basis)?;
    let cubic = solve_by_regression(model, &bundle, PolynomialBasis::default())?;
    let se = (transform.std_error.powi(2) + regression.std_error.powi(2)).sqrt();
    let gap = (transform.y0 - regression.y0).abs();

    let forced = model.with_controls(ControlSet::scalar(&[1.0])?)?;
    let grid = solve_hjb(&forced, &GridSpec::uniform(11, 481, DomainBox::cube(1, 6.0)))?;
    let pde = grid.interpolate(0.0, &[1.0]);
    let ok_t = (transform.y0 - pde).abs() <= 3.0 * transform.std_error + 2e-2;
    let ok_r = (regression.y0 - pde).abs() <= 3.0 * regression.std_error + 2e-2;
    let direct = risk_sensitive_cost(model, &bundle)?;
    Ok(Verdict {
        passed: gap <= 3.0 * se && ok_t && ok_r,
        detail: format!(
            "transform {:.5}±{:.5}, regression(deg 5) {:.5}±{:.5}, |diff| {gap:.2e} vs 3se {:.2e}; PDE {pde:.5}; \
             regression(deg 3) {:.5}; direct MC {:.5}",
            transform.y0,
            transform.std_error,
            regression.y0,
            regression.std_error,
            3.0 * se,
            cubic.y0,
            direct.point_estimate
        ),
    })
}

fn criterion_8() -> Result<Verdict> {
    let fx = example_5_1();
    let table = small_mu_expansion_check(fx.model(), &Policy::Constant(1), &[1.0], &[0.4, 0.2, 0.1, 0.05], 100, 1_000_000, 8)?;
    let slope = table.fitted_slope().unwrap_or(f64::NAN);
    let residuals: Vec<String> = table.rows.iter().map(|r| format!("{:.2e}", r.residual)).collect();
    Ok(Verdict {
        passed: (1.7..=2.5).contains(&slope),
        detail: format!("fitted slope {slope:.3} (range [1.7, 2.5]); residuals {}", residuals.join(", ")),
    })
}

fn criterion_9() -> Result<Verdict> {
    let mut failures = Vec::new();

    let fx = example_5_1();
    let base = solve_hjb(fx.model(), &hjb_grid())?;
    let lifted = solve_hjb(&fx.model().with_terminal_shift(0.1), &hjb_grid())?;
    if !base.values.iter().zip(&lifted.values).all(|(a, b)| b >= a) {
        failures.push("hjb monotonicity");
    }

    let fx2 = example_5_2();
    let bundle = simulate_paths(fx2.model(), &Policy::Constant(1), &[1.0], 50, 10_000, 3)?;
    let y = solve_by_transform(fx2.model(), &bundle, PolynomialBasis::default())?;
    for shift in [0.0, 1e-3, 0.1, 1.0] {
        let y2 = solve_by_transform(&fx2.model().with_terminal_shift(shift), &bundle, PolynomialBasis::default())?;
        if y.y0 > y2.y0 + 1e-12 {
            failures.push("comparison principle");
        }
    }

    let again = simulate_paths(fx2.model(), &Policy::Constant(1), &[1.0], 50, 10_000, 3)?;
    let c1 = cost_from_samples(2.0, &rsens::montecarlo::path_costs(fx2.model(), &bundle).total())?;
    let c2 = cost_from_samples(2.0, &rsens::montecarlo::path_costs(fx2.model(), &again).total())?;
    if bundle.states != again.states || bundle.dw != again.dw || c1.point_estimate.to_bits() != c2.point_estimate.to_bits() {
        failures.push("seed determinism");
    }

    let opts = JetOptions::default();
    for (f, x) in [(&fx, 1.0), (&fx, -0.4), (&fx2, 1.0), (&fx2, 0.5)] {
        let a = f.adjoint(0.5);
        let p = if x == 1.0 || f.id().to_string() == "5.2" { a.p[0] } else { 1.0 / (1.0 + x * x) };
        let big = if x == 1.0 { a.big_p[0] } else { -2.0 * x / (1.0 + x * x).powi(2) };
        if test_x_jet(f, 0.5, &[x], &[p], &[big], Side::Super, &opts)?.is_member() {
            for delta in [0.01, 0.1, 1.0, 10.0] {
                if !test_x_jet(f, 0.5, &[x], &[p], &[big + delta], Side::Super, &opts)?.is_member() {
                    failures.push("jet nesting");
                }
            }
        }
    }

    let r = solve_by_regression(fx2.model(), &bundle, PolynomialBasis::default())?;
    let last = bundle.n_steps();
    let grid_last = base.t_nodes.len() - 1;
    let bsde_exact = (0..bundle.n_paths).all(|p| {
        let h = fx2.model().terminal_cost(bundle.terminal_state(p));
        y.y(p, last) == h && r.y(p, last) == h
    });
    let grid_exact = base.x_nodes[0]
        .iter()
        .enumerate()
        .all(|(j, x)| base.value_at(grid_last, j) == x.atan());
    if !bsde_exact || !grid_exact {
        failures.push("terminal exactness");
    }

    failures.dedup();
    Ok(Verdict {
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            "monotonicity, comparison, determinism, jet nesting, terminal exactness all hold".into()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    })
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "HJB reproduces the first example", criterion_1),
        (2, "HJB reproduces the stated closed form of the second example", criterion_2),
        (3, "adjoint closed-form match", criterion_3),
        (4, "maximum condition", criterion_4),
        (5, "spatial jet inclusions", criterion_5),
        (6, "time jet inclusions and H1 = 0", criterion_6),
        (7, "BSDE solver cross-validation", criterion_7),
        (8, "small-risk expansion order", criterion_8),
        (9, "property suites", criterion_9),
    ];
    let mut unexpected = 0;
    let mut passed = 0;
    for (id, name, run) in criteria {
        let v = run().unwrap_or_else(|e| Verdict {
            passed: false,
            detail: format!("error: {e}"),
        });
        let known = KNOWN_UNATTAINABLE.contains(&id);
        let tag = match (v.passed, known) {
            (true, false) => "PASS",
            (true, true) => "PASS (unexpected)",
            (false, false) => "FAIL",
            (false, true) => "FAIL (known unattainable)",
        };
        println!("{tag} criterion {id}: {name}: {}", v.detail);
        passed += v.passed as u32;
        if v.passed == known {
            unexpected += 1;
        }
    }
    println!("acceptance: {passed}/9 criteria passed, {unexpected} unexpected outcome(s)");
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
