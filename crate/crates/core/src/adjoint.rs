//! First- and second-order adjoint processes along a candidate optimal
//! trajectory, the Hamiltonians H and 𝓗, and a brute-force check of the
//! maximum condition 𝓗(ū) ≤ 𝓗(u) for all u ∈ U.
//!
//! With Z̄ the backward component of the cost and derivatives evaluated at
//! (s, X̄(s), ū(s)):
//!
//! ```text
//! dp = −[b_xᵀp + f_x + σ_xᵀq + μZ̄(σ_xᵀp + q)] ds + q dW,     p(T) = h_x(X̄_T)
//! dP = −[b_xᵀP + Pb_x + σ_xᵀ(P + μppᵀ)σ_x
//!        + σ_xᵀ(Q + μZ̄P + μpqᵀ) + (Q + μZ̄P + μqpᵀ)σ_x
//!        + μqqᵀ + H̄_xx + μZ̄Q] ds + Q dW,                       P(T) = h_xx(X̄_T)
//! ```
//!
//! Both are linear BSDEs and are solved with
//! [`solve_linear_bsde`](crate::qbsde::solve_linear_bsde); P is vectorized by
//! its upper triangle.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ClosedFormExample, CoefficientDerivatives, ProblemModel};
use crate::montecarlo::PathBundle;
use crate::qbsde::{solve_linear_bsde, LinearDriver, PolynomialBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointSource {
    ClosedForm,
    LinearBsdeSolve,
}

/// `(p, q)` and `(P, Q)` per path and step. `p`, `q` are
/// `n_paths × (N+1) × n`; `big_p`, `big_q` are `n_paths × (N+1) × n²`
/// (row-major n×n).
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPath {
    pub source: AdjointSource,
    pub state_dim: usize,
    pub n_paths: usize,
    pub time_grid: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub big_p: Vec<f64>,
    pub big_q: Vec<f64>,
}

impl AdjointPath {
    fn zeros(source: AdjointSource, n: usize, n_paths: usize, time_grid: Vec<f64>) -> Self {
        let cells = n_paths * time_grid.len();
        Self {
            source,
            state_dim: n,
            n_paths,
            time_grid,
            p: vec![0.0; cells * n],
            q: vec![0.0; cells * n],
            big_p: vec![0.0; cells * n * n],
            big_q: vec![0.0; cells * n * n],
        }
    }

    fn cell(&self, path: usize, k: usize) -> usize {
        path * self.time_grid.len() + k
    }

    pub fn p(&self, path: usize, k: usize) -> &[f64] {
        let n = self.state_dim;
        let i = self.cell(path, k) * n;
        &self.p[i..i + n]
    }

    pub fn q(&self, path: usize, k: usize) -> &[f64] {
        let n = self.state_dim;
        let i = self.cell(path, k) * n;
        &self.q[i..i + n]
    }

    pub fn big_p(&self, path: usize, k: usize) -> &[f64] {
        let m = self.state_dim * self.state_dim;
        let i = self.cell(path, k) * m;
        &self.big_p[i..i + m]
    }

    pub fn big_q(&self, path: usize, k: usize) -> &[f64] {
        let m = self.state_dim * self.state_dim;
        let i = self.cell(path, k) * m;
        &self.big_q[i..i + m]
    }

    /// Largest |P_ij − P_ji| over all cells.
    pub fn max_asymmetry(&self) -> f64 {
        let n = self.state_dim;
        self.big_p
            .chunks(n * n)
            .map(|m| crate::hjb::asymmetry(m, n))
            .fold(0.0, f64::max)
    }

    /// Path average of p and P at step k.
    pub fn mean_at(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.state_dim;
        let mut p = vec![0.0; n];
        let mut big_p = vec![0.0; n * n];
        for path in 0..self.n_paths {
            p.iter_mut().zip(self.p(path, k)).for_each(|(a, b)| *a += b);
            big_p.iter_mut().zip(self.big_p(path, k)).for_each(|(a, b)| *a += b);
        }
        let w = self.n_paths as f64;
        p.iter_mut().for_each(|a| *a /= w);
        big_p.iter_mut().for_each(|a| *a /= w);
        (p, big_p)
    }
}

/// H(s, x, z, u, p, q) = ⟨p, b⟩ + f + qᵀσ + μ σᵀp z.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian_h(model: &ProblemModel, s: f64, x: &[f64], z: f64, u: &[f64], p: &[f64], q: &[f64]) -> f64 {
    let n = model.state_dim();
    let mut b = vec![0.0; n];
    let mut sigma = vec![0.0; n];
    model.drift(s, x, u, &mut b);
    model.diffusion(s, x, u, &mut sigma);
    h_value(model.risk(), model.running_cost(s, x, u), &b, &sigma, z, p, q)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn h_value(mu: f64, f: f64, b: &[f64], sigma: &[f64], z: f64, p: &[f64], q: &[f64]) -> f64 {
    dot(p, b) + f + dot(q, sigma) + mu * dot(sigma, p) * z
}

/// ½ dᵀ(P + μppᵀ)d.
pub(crate) fn quadratic_correction(mu: f64, d: &[f64], p: &[f64], big_p: &[f64]) -> f64 {
    let n = d.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += d[i] * (big_p[i * n + j] + mu * p[i] * p[j]) * d[j];
        }
    }
    0.5 * acc
}

/// 𝓗 = H + ½(σ − σ̄)ᵀ(P + μppᵀ)(σ − σ̄), where σ̄ is the diffusion along the
/// reference trajectory at time s.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian_script_h(
    model: &ProblemModel,
    s: f64,
    x: &[f64],
    z: f64,
    u: &[f64],
    p: &[f64],
    q: &[f64],
    big_p: &[f64],
    sigma_bar: &[f64],
) -> f64 {
    let n = model.state_dim();
    let mut b = vec![0.0; n];
    let mut sigma = vec![0.0; n];
    model.drift(s, x, u, &mut b);
    model.diffusion(s, x, u, &mut sigma);
    let h = h_value(model.risk(), model.running_cost(s, x, u), &b, &sigma, z, p, q);
    let d: Vec<f64> = sigma.iter().zip(sigma_bar).map(|(a, c)| a - c).collect();
    h + quadratic_correction(model.risk(), &d, p, big_p)
}

/// Upper-triangle index pairs of an n×n symmetric matrix.
fn triangle(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

/// Per-cell derivative values along the trajectory.
struct CellDerivatives {
    bx: Vec<f64>,
    sx: Vec<f64>,
    fx: Vec<f64>,
    bxx: Vec<f64>,
    sxx: Vec<f64>,
    fxx: Vec<f64>,
}

struct Trajectory<'a> {
    model: &'a ProblemModel,
    bundle: &'a PathBundle,
    derivatives: &'a CoefficientDerivatives,
    z_bar: &'a [f64],
}

impl Trajectory<'_> {
    fn z(&self, path: usize, k: usize) -> f64 {
        self.z_bar[path * self.bundle.time_grid.len() + k]
    }

    fn derivatives(&self, path: usize, k: usize, second: bool) -> CellDerivatives {
        let n = self.model.state_dim();
        let s = self.bundle.time_grid[k];
        let x = self.bundle.state(path, k);
        let u = self.model.controls().point(self.bundle.control(path, k));
        let d = self.derivatives;
        let mut out = CellDerivatives {
            bx: vec![0.0; n * n],
            sx: vec![0.0; n * n],
            fx: vec![0.0; n],
            bxx: Vec::new(),
            sxx: Vec::new(),
            fxx: Vec::new(),
        };
        (d.drift_x.as_ref().unwrap())(s, x, u, &mut out.bx);
        (d.diffusion_x.as_ref().unwrap())(s, x, u, &mut out.sx);
        (d.running_x.as_ref().unwrap())(s, x, u, &mut out.fx);
        if second {
            out.bxx = vec![0.0; n * n * n];
            out.sxx = vec![0.0; n * n * n];
            out.fxx = vec![0.0; n * n];
            (d.drift_xx.as_ref().unwrap())(s, x, u, &mut out.bxx);
            (d.diffusion_xx.as_ref().unwrap())(s, x, u, &mut out.sxx);
            (d.running_xx.as_ref().unwrap())(s, x, u, &mut out.fxx);
        }
        out
    }
}

struct FirstOrderDriver<'a> {
    traj: Trajectory<'a>,
}

impl LinearDriver for FirstOrderDriver<'_> {
    fn dim(&self) -> usize {
        self.traj.model.state_dim()
    }

    fn coefficients(&self, path: usize, k: usize, a: &mut [f64], b: &mut [f64], c: &mut [f64]) {
        let n = self.dim();
        let mu = self.traj.model.risk();
        let z = self.traj.z(path, k);
        let d = self.traj.derivatives(path, k, false);
        for i in 0..n {
            for j in 0..n {
                // transposes: (b_xᵀ)_ij = ∂b_j/∂x_i
                a[i * n + j] = d.bx[j * n + i] + mu * z * d.sx[j * n + i];
                b[i * n + j] = d.sx[j * n + i] + if i == j { mu * z } else { 0.0 };
            }
        }
        c.copy_from_slice(&d.fx);
    }
}

struct SecondOrderDriver<'a> {
    traj: Trajectory<'a>,
    first: &'a AdjointPath,
    tri: Vec<(usize, usize)>,
}

fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik != 0.0 {
                for j in 0..n {
                    out[i * n + j] += aik * b[k * n + j];
                }
            }
        }
    }
    out
}

fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = a[i * n + j];
        }
    }
    out
}

impl SecondOrderDriver<'_> {
    fn n(&self) -> usize {
        self.traj.model.state_dim()
    }

    fn basis_matrix(&self, col: usize) -> Vec<f64> {
        let n = self.n();
        let (i, j) = self.tri[col];
        let mut m = vec![0.0; n * n];
        m[i * n + j] = 1.0;
        m[j * n + i] = 1.0;
        m
    }
}

impl LinearDriver for SecondOrderDriver<'_> {
    fn dim(&self) -> usize {
        self.tri.len()
    }

    fn coefficients(&self, path: usize, k: usize, a: &mut [f64], b: &mut [f64], c: &mut [f64]) {
        let n = self.n();
        let m = self.tri.len();
        let mu = self.traj.model.risk();
        let z = self.traj.z(path, k);
        let d = self.traj.derivatives(path, k, true);
        let p = self.first.p(path, k);
        let q = self.first.q(path, k);
        let bxt = transpose(&d.bx, n);
        let sxt = transpose(&d.sx, n);

        // L(P) = b_xᵀP + Pb_x + σ_xᵀPσ_x + μZ̄(σ_xᵀP + Pσ_x);  M(Q) = σ_xᵀQ + Qσ_x + μZ̄Q
        for col in 0..m {
            let e = self.basis_matrix(col);
            let mut lp = mat_mul(&bxt, &e, n);
            let pb = mat_mul(&e, &d.bx, n);
            let sps = mat_mul(&mat_mul(&sxt, &e, n), &d.sx, n);
            let sp = mat_mul(&sxt, &e, n);
            let ps = mat_mul(&e, &d.sx, n);
            for idx in 0..n * n {
                lp[idx] += pb[idx] + sps[idx] + mu * z * (sp[idx] + ps[idx]);
            }
            let mut mq = vec![0.0; n * n];
            for idx in 0..n * n {
                mq[idx] = sp[idx] + ps[idx] + mu * z * e[idx];
            }
            for (row, &(i, j)) in self.tri.iter().enumerate() {
                a[row * m + col] = lp[i * n + j];
                b[row * m + col] = mq[i * n + j];
            }
        }

        // μσ_xᵀppᵀσ_x + μσ_xᵀpqᵀ + μqpᵀσ_x + μqqᵀ + H̄_xx
        let sp: Vec<f64> = (0..n).map(|i| (0..n).map(|r| d.sx[r * n + i] * p[r]).sum()).collect();
        let weight: Vec<f64> = (0..n).map(|i| q[i] + mu * z * p[i]).collect();
        for (row, &(i, j)) in self.tri.iter().enumerate() {
            let mut v = mu * (sp[i] * sp[j] + sp[i] * q[j] + q[i] * sp[j] + q[i] * q[j]);
            v += d.fxx[i * n + j];
            for r in 0..n {
                v += p[r] * d.bxx[(r * n + i) * n + j] + weight[r] * d.sxx[(r * n + i) * n + j];
            }
            c[row] = v;
        }
    }
}

/// Solves both adjoint equations along `bundle`, which must have been
/// simulated under the candidate optimal policy and carry `(Y, Z)` from a
/// backward solver.
pub fn solve_adjoints(
    model: &ProblemModel,
    bundle: &PathBundle,
    derivatives: &CoefficientDerivatives,
    basis: PolynomialBasis,
) -> Result<AdjointPath> {
    let missing = derivatives.missing();
    if !missing.is_empty() {
        return Err(Error::MissingDerivatives(missing));
    }
    if bundle.state_dim != model.state_dim() {
        return Err(Error::InvalidArgument("bundle and model dimensions differ".into()));
    }
    let (_, z_bar) = bundle
        .backward
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("bundle carries no backward solution; run a qbsde solver first".into()))?;
    let n = model.state_dim();
    let paths = bundle.n_paths;
    let steps = bundle.n_steps();
    let traj = || Trajectory {
        model,
        bundle,
        derivatives,
        z_bar,
    };

    let hx = derivatives.terminal_x.as_ref().unwrap();
    let mut terminal = vec![0.0; paths * n];
    terminal
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(path, out)| hx(bundle.terminal_state(path), out));
    let first = solve_linear_bsde(bundle, &terminal, &FirstOrderDriver { traj: traj() }, basis, None)?;

    let mut out = AdjointPath::zeros(AdjointSource::LinearBsdeSolve, n, paths, bundle.time_grid.clone());
    out.p.copy_from_slice(&first.y);
    out.q.copy_from_slice(&first.z);

    let tri = triangle(n);
    let m = tri.len();
    let hxx = derivatives.terminal_xx.as_ref().unwrap();
    let mut terminal2 = vec![0.0; paths * m];
    terminal2.par_chunks_mut(m).enumerate().for_each(|(path, row)| {
        let mut h = vec![0.0; n * n];
        hxx(bundle.terminal_state(path), &mut h);
        for (r, &(i, j)) in tri.iter().enumerate() {
            row[r] = 0.5 * (h[i * n + j] + h[j * n + i]);
        }
    });
    let driver = SecondOrderDriver {
        traj: traj(),
        first: &out,
        tri: tri.clone(),
    };
    let second = solve_linear_bsde(bundle, &terminal2, &driver, basis, None)?;

    for path in 0..paths {
        for k in 0..=steps {
            let cell = path * (steps + 1) + k;
            let (yv, zv) = (second.y(path, k), second.z(path, k));
            for (r, &(i, j)) in tri.iter().enumerate() {
                for (target, v) in [(&mut out.big_p, yv[r]), (&mut out.big_q, zv[r])] {
                    target[cell * n * n + i * n + j] = v;
                    target[cell * n * n + j * n + i] = v;
                }
            }
        }
    }
    Ok(out)
}

/// The fixture's analytic adjoints on every cell of `bundle`.
pub fn closed_form_adjoints(fixture: &ClosedFormExample, bundle: &PathBundle) -> AdjointPath {
    let n = fixture.model().state_dim();
    let mut out = AdjointPath::zeros(AdjointSource::ClosedForm, n, bundle.n_paths, bundle.time_grid.clone());
    let width = bundle.time_grid.len();
    for (k, &s) in bundle.time_grid.iter().enumerate() {
        let a = fixture.adjoint(s);
        for path in 0..bundle.n_paths {
            let cell = path * width + k;
            out.p[cell * n..(cell + 1) * n].copy_from_slice(&a.p);
            out.q[cell * n..(cell + 1) * n].copy_from_slice(&a.q);
            out.big_p[cell * n * n..(cell + 1) * n * n].copy_from_slice(&a.big_p);
            out.big_q[cell * n * n..(cell + 1) * n * n].copy_from_slice(&a.big_q);
        }
    }
    out
}

/// Analytic adjoints together with the numeric solve they were checked
/// against.
#[derive(Debug, Clone)]
pub struct FixtureAdjoints {
    pub analytic: AdjointPath,
    pub numeric: AdjointPath,
    /// max |p_numeric − p_analytic| over all cells
    pub max_error_p: f64,
    pub max_error_big_p: f64,
}

/// For a closed-form fixture: solves the adjoint equations numerically with
/// the fixture's analytic derivative callbacks and returns both paths.
pub fn fixture_adjoints(fixture: &ClosedFormExample, bundle: &PathBundle, basis: PolynomialBasis) -> Result<FixtureAdjoints> {
    let numeric = solve_adjoints(fixture.model(), bundle, fixture.derivatives(), basis)?;
    let analytic = closed_form_adjoints(fixture, bundle);
    let max_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(FixtureAdjoints {
        max_error_p: max_diff(&numeric.p, &analytic.p),
        max_error_big_p: max_diff(&numeric.big_p, &analytic.big_p),
        analytic,
        numeric,
    })
}

/// 𝓗 at every control of one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub path: usize,
    pub k: usize,
    pub s: f64,
    pub x: Vec<f64>,
    pub u_bar: usize,
    /// `(control index, 𝓗(u))` for every u ∈ U.
    pub table: Vec<(usize, f64)>,
    /// 𝓗(ū) − min_u 𝓗(u) ≥ 0.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaximumConditionReport {
    pub cells: usize,
    pub passed: usize,
    pub pass_fraction: f64,
    pub tolerance: f64,
    pub worst_violation: f64,
    pub worst_cell: Option<CellReport>,
}

impl MaximumConditionReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaximumConditionOptions {
    pub tolerance: f64,
    /// Check every `stride`-th path.
    pub path_stride: usize,
}

impl Default for MaximumConditionOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            path_stride: 1,
        }
    }
}

fn cell_report(model: &ProblemModel, bundle: &PathBundle, z_bar: &[f64], adjoints: &AdjointPath, path: usize, k: usize) -> CellReport {
    let n = model.state_dim();
    let s = bundle.time_grid[k];
    let x = bundle.state(path, k);
    let u_bar = bundle.control(path, k);
    let z = z_bar[path * bundle.time_grid.len() + k];
    let mut sigma_bar = vec![0.0; n];
    model.diffusion(s, x, model.controls().point(u_bar), &mut sigma_bar);
    let (p, q, big_p) = (adjoints.p(path, k), adjoints.q(path, k), adjoints.big_p(path, k));
    let table: Vec<(usize, f64)> = model
        .controls()
        .iter()
        .enumerate()
        .map(|(i, u)| (i, hamiltonian_script_h(model, s, x, z, u, p, q, big_p, &sigma_bar)))
        .collect();
    let min = table.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    CellReport {
        path,
        k,
        s,
        x: x.to_vec(),
        u_bar,
        violation: table[u_bar].1 - min,
        table,
    }
}

/// Brute-force check of 𝓗(ū) ≤ 𝓗(u) + tol over U at every step of the
/// sampled paths. Z̄ is read from the bundle's backward solution.
pub fn verify_maximum_condition(
    model: &ProblemModel,
    bundle: &PathBundle,
    adjoints: &AdjointPath,
    options: MaximumConditionOptions,
) -> Result<MaximumConditionReport> {
    let (_, z_bar) = bundle
        .backward
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("bundle carries no backward solution".into()))?;
    if adjoints.n_paths != bundle.n_paths || adjoints.time_grid.len() != bundle.time_grid.len() {
        return Err(Error::InvalidArgument("adjoint path does not match the bundle".into()));
    }
    let stride = options.path_stride.max(1);
    let steps = bundle.n_steps();
    let cells: Vec<(usize, usize)> = (0..bundle.n_paths)
        .step_by(stride)
        .flat_map(|p| (0..steps).map(move |k| (p, k)))
        .collect();
    let worst = cells
        .par_iter()
        .map(|&(p, k)| {
            let c = cell_report(model, bundle, z_bar, adjoints, p, k);
            (c.violation <= options.tolerance, c.violation, p, k)
        })
        .collect::<Vec<_>>();
    let passed = worst.iter().filter(|w| w.0).count();
    let worst_entry = worst
        .iter()
        .fold(None::<&(bool, f64, usize, usize)>, |acc, w| match acc {
            Some(a) if !(w.1 > a.1) => Some(a),
            _ => Some(w),
        });
    let worst_cell = worst_entry.map(|w| cell_report(model, bundle, z_bar, adjoints, w.2, w.3));
    Ok(MaximumConditionReport {
        cells: cells.len(),
        passed,
        pass_fraction: if cells.is_empty() { 1.0 } else { passed as f64 / cells.len() as f64 },
        tolerance: options.tolerance,
        worst_violation: worst_entry.map_or(0.0, |w| w.1),
        worst_cell,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example_5_1, example_5_2, ControlSet};
    use crate::montecarlo::{simulate_paths, Policy};
    use crate::qbsde::{solve_by_regression, solve_by_transform};

    fn optimal_bundle(fx: &ClosedFormExample, steps: usize, paths: usize) -> PathBundle {
        let policy = Policy::Feedback(fx.optimal_feedback());
        let mut bundle = simulate_paths(fx.model(), &policy, fx.initial_state(), steps, paths, 1).unwrap();
        solve_by_transform(fx.model(), &bundle, PolynomialBasis::default())
            .unwrap()
            .attach_to(&mut bundle)
            .unwrap();
        bundle
    }

    #[test]
    fn hamiltonian_h_hand_values() {
        let m = example_5_1().model().clone();
        assert_eq!(hamiltonian_h(&m, 0.2, &[0.3], 0.0, &[1.0], &[1.0], &[0.0]), 1.0);
        let m = example_5_2().model().clone();
        assert_eq!(hamiltonian_h(&m, 0.2, &[1.0], 0.0, &[1.0], &[0.5], &[0.0]), 0.0);
        let zero = ProblemModel::builder("zero", 1)
            .controls(ControlSet::scalar(&[0.0]).unwrap())
            .build()
            .unwrap();
        assert_eq!(hamiltonian_h(&zero, 0.0, &[2.0], 1.0, &[0.0], &[3.0], &[4.0]), 0.0);
    }

    #[test]
    fn script_h_hand_values() {
        let m = example_5_1().model().clone();
        let v = hamiltonian_script_h(&m, 0.0, &[1.0], 0.0, &[1.0], &[0.5], &[0.0], &[-0.5], &[0.0]);
        assert!((v - 0.875).abs() < 1e-15);
        let v0 = hamiltonian_script_h(&m, 0.0, &[1.0], 0.0, &[0.0], &[0.5], &[0.0], &[-0.5], &[0.0]);
        assert_eq!(v0, 0.0);
        let m = example_5_2().model().clone();
        let v1 = hamiltonian_script_h(&m, 0.0, &[1.0], 0.0, &[1.0], &[0.5], &[0.0], &[-0.5], &[0.0]);
        assert!(v1.abs() < 1e-15);
        // σ(u) = σ̄ leaves H unchanged
        let h = hamiltonian_h(&m, 0.0, &[1.3], 0.2, &[1.0], &[0.5], &[0.1]);
        let sh = hamiltonian_script_h(&m, 0.0, &[1.3], 0.2, &[1.0], &[0.5], &[0.1], &[7.0], &[1.3]);
        assert_eq!(h, sh);
    }

    #[test]
    fn fixtures_match_closed_form() {
        for fx in [example_5_1(), example_5_1().with_initial_state(0.3).unwrap(), example_5_2()] {
            let bundle = optimal_bundle(&fx, 50, 64);
            let both = fixture_adjoints(&fx, &bundle, PolynomialBasis::default()).unwrap();
            assert!(both.max_error_p <= 5e-3 && both.max_error_big_p <= 5e-3, "{:?}", fx.id());
            let n = both.numeric.time_grid.len() - 1;
            let hx = 1.0 / (1.0 + fx.initial_state()[0].powi(2));
            assert_eq!(both.numeric.p(3, n)[0], hx);
            assert!(both.numeric.max_asymmetry() <= 1e-10);
        }
    }

    #[test]
    fn linear_terminal_gives_constant_adjoints() {
        let model = ProblemModel::builder("linear", 1)
            .diffusion(|_, _, _, out| out[0] = 1.0)
            .terminal_cost(|x| 2.0 * x[0])
            .controls(ControlSet::scalar(&[0.0]).unwrap())
            .build()
            .unwrap();
        let mut bundle = simulate_paths(&model, &Policy::Constant(0), &[0.0], 20, 2048, 5).unwrap();
        solve_by_regression(&model, &bundle, PolynomialBasis::default())
            .unwrap()
            .attach_to(&mut bundle)
            .unwrap();
        let derivatives = CoefficientDerivatives::finite_difference(&model);
        let adj = solve_adjoints(&model, &bundle, &derivatives, PolynomialBasis::default()).unwrap();
        for k in 0..=20 {
            for path in [0, 100, 2047] {
                assert!((adj.p(path, k)[0] - 2.0).abs() < 1e-6);
                assert!(adj.q(path, k)[0].abs() < 1e-6);
                assert!(adj.big_p(path, k)[0].abs() < 1e-6);
                assert!(adj.big_q(path, k)[0].abs() < 1e-6);
            }
        }
    }

    #[test]
    fn missing_derivatives_are_listed() {
        let fx = example_5_1();
        let bundle = optimal_bundle(&fx, 4, 8);
        let mut d = fx.derivatives().clone();
        d.diffusion_xx = None;
        d.terminal_x = None;
        match solve_adjoints(fx.model(), &bundle, &d, PolynomialBasis::default()) {
            Err(Error::MissingDerivatives(names)) => assert_eq!(names, vec!["terminal_x", "diffusion_xx"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn maximum_condition_on_fixtures() {
        for fx in [example_5_1(), example_5_2()] {
            let bundle = optimal_bundle(&fx, 40, 32);
            let adj = closed_form_adjoints(&fx, &bundle);
            let report = verify_maximum_condition(fx.model(), &bundle, &adj, Default::default()).unwrap();
            assert!(report.all_passed());
            assert!(report.worst_violation <= 1e-12);
        }
        // equality case at (0, 1) of example 5.2
        let fx = example_5_2();
        let bundle = optimal_bundle(&fx, 10, 4);
        let adj = closed_form_adjoints(&fx, &bundle);
        let report = verify_maximum_condition(fx.model(), &bundle, &adj, Default::default()).unwrap();
        let cell = report.worst_cell.unwrap();
        assert!((cell.table[0].1 - cell.table[1].1).abs() <= 1e-10);
    }
}
