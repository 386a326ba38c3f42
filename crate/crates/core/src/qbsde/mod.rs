//! Backward solvers on a simulated [`PathBundle`]:
//!
//! * [`solve_by_transform`]: Ỹ = e^{μY} turns dY = −(f + μ/2 Z²)ds + Z dW into a
//!   conditional expectation of exp(μ(∫f + h)), estimated by regression.
//! * [`solve_by_regression`]: backward least squares on the quadratic driver,
//!   explicit in Z.
//! * [`solve_linear_bsde`]: vector BSDE with affine driver A y + B z + c.

mod regression;

use rayon::prelude::*;
use serde::Serialize;

pub use regression::PolynomialBasis;
use regression::Regression;

use crate::error::{Error, Result};
use crate::model::{ProblemModel, ScalarFn, TerminalFn};
use crate::montecarlo::PathBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Transform,
    Regression,
}

/// `(Y, Z)` on the bundle grid, each stored `n_paths × (N+1)`. Z at the last
/// node repeats the value of the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSolution {
    pub method: Method,
    pub basis: PolynomialBasis,
    pub n_paths: usize,
    pub time_grid: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// Mean of Y(s₀) over paths.
    pub y0: f64,
    /// Monte Carlo standard error of `y0`.
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BackwardSummary {
    pub method: Method,
    pub y0: f64,
    pub std_error: f64,
    pub basis: PolynomialBasis,
    pub steps: usize,
    pub paths: usize,
    pub sup_norm: f64,
}

impl BackwardSolution {
    fn width(&self) -> usize {
        self.time_grid.len()
    }

    pub fn y(&self, path: usize, k: usize) -> f64 {
        self.y[path * self.width() + k]
    }

    pub fn z(&self, path: usize, k: usize) -> f64 {
        self.z[path * self.width() + k]
    }

    pub fn sup_norm(&self) -> f64 {
        self.y.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// ‖Y‖∞ ≤ 1.1·(‖h‖∞ + T‖f‖∞), when the model declares both sup-norms.
    pub fn within_bound_proxy(&self, model: &ProblemModel) -> Option<bool> {
        model.bound_proxy().map(|b| self.sup_norm() <= 1.1 * b + 1e-12)
    }

    pub fn summary(&self) -> BackwardSummary {
        BackwardSummary {
            method: self.method,
            y0: self.y0,
            std_error: self.std_error,
            basis: self.basis,
            steps: self.time_grid.len() - 1,
            paths: self.n_paths,
            sup_norm: self.sup_norm(),
        }
    }

    /// Copies `(Y, Z)` into the bundle.
    pub fn attach_to(&self, bundle: &mut PathBundle) -> Result<()> {
        bundle.set_backward(self.y.clone(), self.z.clone())
    }
}

fn check_bundle(model: &ProblemModel, bundle: &PathBundle) -> Result<()> {
    if bundle.state_dim != model.state_dim() {
        return Err(Error::InvalidArgument("bundle and model dimensions differ".into()));
    }
    if bundle.controls.iter().any(|&u| u as usize >= model.controls().len()) {
        return Err(Error::InvalidArgument("bundle controls do not index the model control set".into()));
    }
    Ok(())
}

fn running_costs(model: &ProblemModel, bundle: &PathBundle, k: usize) -> Vec<f64> {
    (0..bundle.n_paths)
        .into_par_iter()
        .map(|p| {
            let u = model.controls().point(bundle.control(p, k));
            model.running_cost(bundle.time_grid[k], bundle.state(p, k), u)
        })
        .collect()
}

fn mean_and_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn shifted_exp(mu: f64, s: &[f64]) -> (f64, Vec<f64>) {
    let c = s.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    (c, s.par_iter().map(|v| (mu * (v - c)).exp()).collect())
}

fn first_non_positive(values: &[f64]) -> Option<(usize, f64)> {
    values
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0))
        .map(|(i, v)| (i, *v))
}

/// Exponential-transform solver. Regresses the pathwise payoff
/// exp(μ(Σ_{j≥k} f_j Δs + h(X_N))) on X_k for Ỹ_k and sets Y_k = μ⁻¹ log Ỹ_k;
/// Z_k = E[(Ỹ_{k+1} − E[Ỹ_{k+1}|X_k]) ΔW_k | X_k] / (μ E[Ỹ_{k+1}|X_k] Δs_k).
/// A non-positive fitted Ỹ is an error.
pub fn solve_by_transform(model: &ProblemModel, bundle: &PathBundle, basis: PolynomialBasis) -> Result<BackwardSolution> {
    check_bundle(model, bundle)?;
    basis.validate()?;
    let mu = model.risk();
    let n = model.state_dim();
    let steps = bundle.n_steps();
    let width = steps + 1;
    let paths = bundle.n_paths;
    let mut y = vec![0.0; paths * width];
    let mut z = vec![0.0; paths * width];

    let mut s: Vec<f64> = (0..paths).map(|p| model.terminal_cost(bundle.terminal_state(p))).collect();
    for p in 0..paths {
        y[p * width + steps] = s[p];
    }
    let (_, mut payoff_next) = shifted_exp(mu, &s);
    let mut std_error = 0.0;

    for k in (0..steps).rev() {
        let dt = bundle.dt(k);
        let feats = basis.features(paths, n, |p| bundle.state(p, k));
        let reg = Regression::new(&feats, basis.ridge, k)?;

        let cond_next = reg.fit(&payoff_next);
        if let Some((path, value)) = first_non_positive(&cond_next) {
            return Err(Error::NonPositiveTransform { step: k, path, value });
        }
        let weighted: Vec<f64> = (0..paths)
            .map(|p| (payoff_next[p] - cond_next[p]) * bundle.dw(p, k))
            .collect();
        let cov = reg.fit(&weighted);

        let f = running_costs(model, bundle, k);
        for p in 0..paths {
            s[p] += f[p] * dt;
        }
        let (shift, payoff) = shifted_exp(mu, &s);
        let cond = reg.fit(&payoff);
        if let Some((path, value)) = first_non_positive(&cond) {
            return Err(Error::NonPositiveTransform { step: k, path, value });
        }
        for p in 0..paths {
            y[p * width + k] = shift + cond[p].ln() / mu;
            z[p * width + k] = cov[p] / (mu * cond_next[p] * dt);
        }
        if k == 0 {
            let resid: Vec<f64> = payoff.iter().zip(&cond).map(|(a, b)| a - b).collect();
            let (_, sd) = mean_and_sd(&resid);
            let level = cond.iter().sum::<f64>() / paths as f64;
            std_error = sd / ((paths as f64).sqrt() * mu * level);
        }
        payoff_next = payoff;
    }
    for p in 0..paths {
        z[p * width + steps] = z[p * width + steps - 1];
    }
    let y0 = (0..paths).map(|p| y[p * width]).sum::<f64>() / paths as f64;
    Ok(BackwardSolution {
        method: Method::Transform,
        basis,
        n_paths: paths,
        time_grid: bundle.time_grid.clone(),
        y,
        z,
        y0,
        std_error,
    })
}

fn guard(values: &[f64], step: usize, limit: Option<f64>) -> Result<()> {
    let worst = values.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) });
    match limit {
        _ if !worst.is_finite() => Err(Error::Divergence {
            step,
            value: worst,
            limit: limit.unwrap_or(f64::INFINITY),
        }),
        Some(l) if worst > l => Err(Error::Divergence { step, value: worst, limit: l }),
        _ => Ok(()),
    }
}

/// Backward least squares on the quadratic driver:
/// E_k = E[Y_{k+1}|X_k], Z_k = E[(Y_{k+1} − E_k) ΔW_k | X_k]/Δs_k,
/// Y_k = E_k + (f_k + μ/2 Z_k²) Δs_k. Fails if |Y| exceeds ten times the
/// declared sup-norm proxy.
pub fn solve_by_regression(model: &ProblemModel, bundle: &PathBundle, basis: PolynomialBasis) -> Result<BackwardSolution> {
    check_bundle(model, bundle)?;
    basis.validate()?;
    let mu = model.risk();
    let n = model.state_dim();
    let steps = bundle.n_steps();
    let width = steps + 1;
    let paths = bundle.n_paths;
    let limit = model.bound_proxy().map(|b| 10.0 * b);
    let mut y = vec![0.0; paths * width];
    let mut z = vec![0.0; paths * width];

    let mut next: Vec<f64> = (0..paths).map(|p| model.terminal_cost(bundle.terminal_state(p))).collect();
    // pathwise Y_N + Σ(f + μ/2 Z²)Δs − Σ Z ΔW, whose mean estimates Y(s₀)
    let mut realized = next.clone();
    for p in 0..paths {
        y[p * width + steps] = next[p];
    }
    for k in (0..steps).rev() {
        let dt = bundle.dt(k);
        let feats = basis.features(paths, n, |p| bundle.state(p, k));
        let reg = Regression::new(&feats, basis.ridge, k)?;
        let cond = reg.fit(&next);
        let weighted: Vec<f64> = (0..paths).map(|p| (next[p] - cond[p]) * bundle.dw(p, k)).collect();
        let zk: Vec<f64> = reg.fit(&weighted).into_iter().map(|v| v / dt).collect();
        let f = running_costs(model, bundle, k);
        for p in 0..paths {
            let driver = f[p] + 0.5 * mu * zk[p] * zk[p];
            next[p] = cond[p] + driver * dt;
            realized[p] += driver * dt - zk[p] * bundle.dw(p, k);
            y[p * width + k] = next[p];
            z[p * width + k] = zk[p];
        }
        guard(&next, k, limit)?;
    }
    for p in 0..paths {
        z[p * width + steps] = z[p * width + steps - 1];
    }
    let y0 = (0..paths).map(|p| y[p * width]).sum::<f64>() / paths as f64;
    let (_, sd) = mean_and_sd(&realized);
    Ok(BackwardSolution {
        method: Method::Regression,
        basis,
        n_paths: paths,
        time_grid: bundle.time_grid.clone(),
        y,
        z,
        y0,
        std_error: sd / (paths as f64).sqrt(),
    })
}

/// Affine driver `A y + B z + c` of a d-dimensional linear BSDE, evaluated
/// per path and step. `a` and `b` are d×d row-major.
pub trait LinearDriver: Sync {
    fn dim(&self) -> usize;
    fn coefficients(&self, path: usize, k: usize, a: &mut [f64], b: &mut [f64], c: &mut [f64]);
}

/// Driver with the same `(A, B, c)` everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantDriver {
    pub dim: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl ConstantDriver {
    pub fn scalar(a: f64, b: f64, c: f64) -> Self {
        Self {
            dim: 1,
            a: vec![a],
            b: vec![b],
            c: vec![c],
        }
    }
}

impl LinearDriver for ConstantDriver {
    fn dim(&self) -> usize {
        self.dim
    }

    fn coefficients(&self, _: usize, _: usize, a: &mut [f64], b: &mut [f64], c: &mut [f64]) {
        a.copy_from_slice(&self.a);
        b.copy_from_slice(&self.b);
        c.copy_from_slice(&self.c);
    }
}

/// Solution of a vector linear BSDE, stored `n_paths × (N+1) × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolution {
    pub dim: usize,
    pub n_paths: usize,
    pub time_grid: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl LinearSolution {
    pub fn y(&self, path: usize, k: usize) -> &[f64] {
        let i = (path * self.time_grid.len() + k) * self.dim;
        &self.y[i..i + self.dim]
    }

    pub fn z(&self, path: usize, k: usize) -> &[f64] {
        let i = (path * self.time_grid.len() + k) * self.dim;
        &self.z[i..i + self.dim]
    }

    /// Path average of Y at step k.
    pub fn mean_y(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for p in 0..self.n_paths {
            for (o, v) in out.iter_mut().zip(self.y(p, k)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.n_paths as f64);
        out
    }
}

/// Explicit backward regression for dY = −(A Y + B Z + c) ds + Z dW with
/// terminal value `terminal` (`n_paths × d`):
/// E_k = E[Y_{k+1}|X_k], Z_k = E[(Y_{k+1} − E_k)ΔW_k|X_k]/Δs_k,
/// Y_k = E_k + (A_k E_k + B_k Z_k + c_k)Δs_k.
pub fn solve_linear_bsde(
    bundle: &PathBundle,
    terminal: &[f64],
    driver: &dyn LinearDriver,
    basis: PolynomialBasis,
    divergence_limit: Option<f64>,
) -> Result<LinearSolution> {
    basis.validate()?;
    let d = driver.dim();
    let paths = bundle.n_paths;
    let steps = bundle.n_steps();
    let width = steps + 1;
    if d == 0 || terminal.len() != paths * d {
        return Err(Error::InvalidArgument(format!(
            "terminal values must be n_paths × d = {} entries",
            paths * d
        )));
    }
    let mut y = vec![0.0; paths * width * d];
    let mut z = vec![0.0; paths * width * d];
    let at = |p: usize, k: usize| (p * width + k) * d;
    for p in 0..paths {
        y[at(p, steps)..at(p, steps) + d].copy_from_slice(&terminal[p * d..(p + 1) * d]);
    }
    let mut next: Vec<Vec<f64>> = (0..d).map(|i| (0..paths).map(|p| terminal[p * d + i]).collect()).collect();

    for k in (0..steps).rev() {
        let dt = bundle.dt(k);
        let feats = basis.features(paths, bundle.state_dim, |p| bundle.state(p, k));
        let reg = Regression::new(&feats, basis.ridge, k)?;
        let mut cond = Vec::with_capacity(d);
        let mut zs = Vec::with_capacity(d);
        for comp in &next {
            let e = reg.fit(comp);
            let w: Vec<f64> = (0..paths).map(|p| (comp[p] - e[p]) * bundle.dw(p, k)).collect();
            zs.push(reg.fit(&w).into_iter().map(|v| v / dt).collect::<Vec<f64>>());
            cond.push(e);
        }
        let rows: Vec<Vec<f64>> = (0..paths)
            .into_par_iter()
            .map(|p| {
                let mut a = vec![0.0; d * d];
                let mut b = vec![0.0; d * d];
                let mut c = vec![0.0; d];
                driver.coefficients(p, k, &mut a, &mut b, &mut c);
                (0..d)
                    .map(|i| {
                        let mut g = c[i];
                        for j in 0..d {
                            g += a[i * d + j] * cond[j][p] + b[i * d + j] * zs[j][p];
                        }
                        cond[i][p] + g * dt
                    })
                    .collect()
            })
            .collect();
        for p in 0..paths {
            for i in 0..d {
                next[i][p] = rows[p][i];
                y[at(p, k) + i] = rows[p][i];
                z[at(p, k) + i] = zs[i][p];
            }
        }
        for comp in &next {
            guard(comp, k, divergence_limit)?;
        }
    }
    for p in 0..paths {
        let (last, prev) = (at(p, steps), at(p, steps - 1));
        for i in 0..d {
            z[last + i] = z[prev + i];
        }
    }
    Ok(LinearSolution {
        dim: d,
        n_paths: paths,
        time_grid: bundle.time_grid.clone(),
        y,
        z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    /// sup over paths and steps of |Y₁ − Y₂|.
    pub sup_y_difference: f64,
    /// sup |h₁ − h₂|(X_N) + sup over paths of Σ|f₁ − f₂|Δs.
    pub data_difference: f64,
    /// `sup_y_difference / data_difference`; `None` when the data agree.
    pub ratio: Option<f64>,
}

/// Runs the transform solver on two data sets `(f, h)` over the same paths
/// and compares the solutions with the size of the data perturbation.
pub fn stability_check(
    model: &ProblemModel,
    bundle: &PathBundle,
    basis: PolynomialBasis,
    first: (ScalarFn, TerminalFn),
    second: (ScalarFn, TerminalFn),
) -> Result<StabilityReport> {
    let m1 = model.with_running_cost(first.0.clone()).with_terminal_cost(first.1.clone());
    let m2 = model.with_running_cost(second.0.clone()).with_terminal_cost(second.1.clone());
    let y1 = solve_by_transform(&m1, bundle, basis)?;
    let y2 = solve_by_transform(&m2, bundle, basis)?;
    let sup_y_difference = y1.y.iter().zip(&y2.y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let mut sup_h = 0.0f64;
    let mut sup_f = 0.0f64;
    for p in 0..bundle.n_paths {
        let xt = bundle.terminal_state(p);
        sup_h = sup_h.max((first.1(xt) - second.1(xt)).abs());
        let mut acc = 0.0;
        for k in 0..bundle.n_steps() {
            let (s, x) = (bundle.time_grid[k], bundle.state(p, k));
            let u = model.controls().point(bundle.control(p, k));
            acc += (first.0(s, x, u) - second.0(s, x, u)).abs() * bundle.dt(k);
        }
        sup_f = sup_f.max(acc);
    }
    let data_difference = sup_h + sup_f;
    Ok(StabilityReport {
        sup_y_difference,
        data_difference,
        ratio: (data_difference > 0.0).then(|| sup_y_difference / data_difference),
    })
}
