//! Explicit monotone finite-difference solver for the risk-sensitive HJB
//! equation
//!
//! ```text
//! v_t + min_u G(t, x, u, v_x, v_xx) = 0,   v(T, x) = h(x),
//! G = f + ⟨p, b⟩ + (μ/2)|σᵀp|² + ½ tr(σσᵀP),
//! ```
//!
//! on a truncated box, plus viscosity residual diagnostics.
//!
//! Drift terms are upwinded by the sign of b, the quadratic gradient term uses
//! centered differences and second derivatives use central differences (the
//! four-point stencil for mixed terms). The time step is refined until
//! `Δt (Σ σ_i²/Δx_i² + Σ |b_i|/Δx_i) ≤ 0.9` over all controls.

mod grid;
mod residuals;

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DomainBox, ProblemModel};

pub use grid::ValueGrid;
pub use residuals::{viscosity_residuals, PointResidual, ResidualKind, ResidualOptions};

const CFL_TARGET: f64 = 0.9;
const SYMMETRY_TOL: f64 = 1e-12;

/// Generalized Hamiltonian G(s, x, u, p, P). `big_p` is n×n row-major and
/// must be symmetric within 1e-12.
pub fn hamiltonian_g(model: &ProblemModel, s: f64, x: &[f64], u: &[f64], p: &[f64], big_p: &[f64]) -> Result<f64> {
    let n = model.state_dim();
    if x.len() != n || p.len() != n || big_p.len() != n * n {
        return Err(Error::InvalidArgument(format!(
            "hamiltonian_g expects x, p of length {n} and P of length {}",
            n * n
        )));
    }
    let asym = asymmetry(big_p, n);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let mut b = vec![0.0; n];
    let mut sigma = vec![0.0; n];
    model.drift(s, x, u, &mut b);
    model.diffusion(s, x, u, &mut sigma);
    Ok(g_value(model.risk(), model.running_cost(s, x, u), &b, &sigma, p, big_p))
}

pub(crate) fn asymmetry(m: &[f64], n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((m[i * n + j] - m[j * n + i]).abs());
        }
    }
    worst
}

pub(crate) fn g_value(mu: f64, f: f64, b: &[f64], sigma: &[f64], p: &[f64], big_p: &[f64]) -> f64 {
    let n = b.len();
    let bp: f64 = b.iter().zip(p).map(|(a, c)| a * c).sum();
    let sp: f64 = sigma.iter().zip(p).map(|(a, c)| a * c).sum();
    let mut trace = 0.0;
    for i in 0..n {
        for j in 0..n {
            trace += sigma[i] * sigma[j] * big_p[i * n + j];
        }
    }
    f + bp + 0.5 * mu * sp * sp + 0.5 * trace
}

/// Value at the boundary faces of the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    /// Linear extrapolation `V₀ = 2V₁ − V₂` along each axis.
    #[default]
    Extrapolate,
    /// `V(t, x_b) = h(x_b) + (T − t) min_u f(t, x_b, u)`.
    Dirichlet,
}

impl FromStr for BoundaryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extrapolate" => Ok(BoundaryMode::Extrapolate),
            "dirichlet" => Ok(BoundaryMode::Dirichlet),
            other => Err(Error::InvalidArgument(format!(
                "unknown boundary mode `{other}` (expected extrapolate or dirichlet)"
            ))),
        }
    }
}

/// Grid resolution and scheme switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Number of stored time snapshots, including both ends (≥ 2).
    pub n_t: usize,
    /// Nodes per spatial axis, including boundary nodes (≥ 3).
    pub n_x: Vec<usize>,
    pub domain: DomainBox,
    pub boundary: BoundaryMode,
    /// Adds ½μσ_i²|p_i|Δx_i to the diffusion on axis i, which makes the
    /// centered quadratic term monotone at the cost of first-order accuracy.
    pub artificial_viscosity: bool,
    /// Upper bound on the total number of explicit substeps.
    pub max_steps: usize,
}

impl GridSpec {
    pub fn new(n_t: usize, n_x: Vec<usize>, domain: DomainBox) -> Self {
        Self {
            n_t,
            n_x,
            domain,
            boundary: BoundaryMode::default(),
            artificial_viscosity: false,
            max_steps: 2_000_000,
        }
    }

    /// Same `n` nodes on every axis of `domain`.
    pub fn uniform(n_t: usize, n: usize, domain: DomainBox) -> Self {
        let dim = domain.dim();
        Self::new(n_t, vec![n; dim], domain)
    }

    pub fn with_boundary(mut self, boundary: BoundaryMode) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_artificial_viscosity(mut self, on: bool) -> Self {
        self.artificial_viscosity = on;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    fn validate(&self, model: &ProblemModel) -> Result<()> {
        if self.n_t < 2 {
            return Err(Error::InvalidArgument("n_t must be at least 2".into()));
        }
        if self.n_x.len() != model.state_dim() || self.domain.dim() != model.state_dim() {
            return Err(Error::InvalidArgument(format!(
                "grid has {} axes, model state dimension is {}",
                self.n_x.len(),
                model.state_dim()
            )));
        }
        if self.n_x.iter().any(|&n| n < 3) {
            return Err(Error::InvalidArgument("every axis needs at least 3 nodes".into()));
        }
        Ok(())
    }
}

/// Scheme parameters recorded with a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeMeta {
    pub scheme: String,
    pub boundary: Option<BoundaryMode>,
    /// Explicit substep length.
    pub dt: f64,
    pub dx: Vec<f64>,
    /// Total number of explicit substeps.
    pub substeps: usize,
    /// Largest `Δt (Σσ²/Δx² + Σ|b|/Δx)` seen; ≤ 1 for a valid solve.
    pub cfl_ratio: f64,
    /// `μ max|p| Δx ≤ 1`, the condition under which the centered quadratic
    /// term keeps the scheme monotone (always true with artificial viscosity).
    pub gradient_monotone: bool,
    pub artificial_viscosity: bool,
    /// Uniqueness of viscosity solutions is only known for small risk levels
    /// with an unspecified threshold, so any μ > 0 is flagged.
    pub uniqueness_guaranteed: bool,
    pub note: Option<String>,
}

/// Row-major indexing over the spatial grid, last axis fastest.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub n: Vec<usize>,
    pub strides: Vec<usize>,
    pub lower: Vec<f64>,
    pub dx: Vec<f64>,
}

impl Layout {
    pub fn new(n: Vec<usize>, lower: Vec<f64>, dx: Vec<f64>) -> Self {
        let mut strides = vec![1; n.len()];
        for d in (0..n.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * n[d + 1];
        }
        Self { n, strides, lower, dx }
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn index(&self, flat: usize, out: &mut [usize]) {
        let mut rest = flat;
        for d in 0..self.n.len() {
            out[d] = rest / self.strides[d];
            rest %= self.strides[d];
        }
    }

    pub fn coords(&self, flat: usize, out: &mut [f64]) {
        let mut rest = flat;
        for d in 0..self.n.len() {
            let i = rest / self.strides[d];
            rest %= self.strides[d];
            out[d] = self.lower[d] + i as f64 * self.dx[d];
        }
    }

    pub fn is_interior(&self, flat: usize) -> bool {
        let mut rest = flat;
        for d in 0..self.n.len() {
            let i = rest / self.strides[d];
            rest %= self.strides[d];
            if i == 0 || i + 1 == self.n[d] {
                return false;
            }
        }
        true
    }

    /// Moves a flat index so that every coordinate lies in `[1, n-2]`.
    pub fn clamp_interior(&self, flat: usize) -> usize {
        let mut rest = flat;
        let mut out = 0;
        for d in 0..self.n.len() {
            let i = (rest / self.strides[d]).clamp(1, self.n[d] - 2);
            rest %= self.strides[d];
            out += i * self.strides[d];
        }
        out
    }

    /// Centered gradient, upwind one-sided differences and Hessian at an
    /// interior node.
    pub fn derivatives(&self, v: &[f64], j: usize, d: &mut Derivatives) {
        let n = self.n.len();
        for a in 0..n {
            let sa = self.strides[a];
            let h = self.dx[a];
            let (lo, mid, hi) = (v[j - sa], v[j], v[j + sa]);
            d.forward[a] = (hi - mid) / h;
            d.backward[a] = (mid - lo) / h;
            d.centered[a] = (hi - lo) / (2.0 * h);
            d.hessian[a * n + a] = (hi - 2.0 * mid + lo) / (h * h);
            for c in a + 1..n {
                let sc = self.strides[c];
                let cross = (v[j + sa + sc] - v[j + sa - sc] - v[j - sa + sc] + v[j - sa - sc]) / (4.0 * h * self.dx[c]);
                d.hessian[a * n + c] = cross;
                d.hessian[c * n + a] = cross;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Derivatives {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    pub centered: Vec<f64>,
    pub hessian: Vec<f64>,
}

impl Derivatives {
    pub fn new(n: usize) -> Self {
        Self {
            forward: vec![0.0; n],
            backward: vec![0.0; n],
            centered: vec![0.0; n],
            hessian: vec![0.0; n * n],
        }
    }
}

struct Scratch {
    x: Vec<f64>,
    b: Vec<f64>,
    sigma: Vec<f64>,
    der: Derivatives,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            x: vec![0.0; n],
            b: vec![0.0; n],
            sigma: vec![0.0; n],
            der: Derivatives::new(n),
        }
    }
}

struct Solver<'a> {
    model: &'a ProblemModel,
    layout: Layout,
    interior: Vec<usize>,
    boundary_nodes: Vec<usize>,
    mode: BoundaryMode,
    viscosity: bool,
}

impl Solver<'_> {
    /// One explicit step from the level at time `t` to `t − dt`.
    fn step(&self, t: f64, dt: f64, v: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.layout.n.len();
        let mu = self.model.risk();
        let controls = self.model.controls();
        let updated: Vec<f64> = self
            .interior
            .par_iter()
            .with_min_len(256)
            .map_init(
                || Scratch::new(n),
                |sc, &j| {
                    self.layout.coords(j, &mut sc.x);
                    self.layout.derivatives(v, j, &mut sc.der);
                    let der = &sc.der;
                    let mut best = f64::INFINITY;
                    for u in controls.iter() {
                        self.model.drift(t, &sc.x, u, &mut sc.b);
                        self.model.diffusion(t, &sc.x, u, &mut sc.sigma);
                        let mut g = self.model.running_cost(t, &sc.x, u);
                        let mut sp = 0.0;
                        for a in 0..n {
                            let ba = sc.b[a];
                            g += if ba > 0.0 { ba * der.forward[a] } else { ba * der.backward[a] };
                            sp += sc.sigma[a] * der.centered[a];
                        }
                        g += 0.5 * mu * sp * sp;
                        for a in 0..n {
                            for c in 0..n {
                                g += 0.5 * sc.sigma[a] * sc.sigma[c] * der.hessian[a * n + c];
                            }
                            if self.viscosity {
                                let extra = 0.5 * mu * sc.sigma[a] * sc.sigma[a] * der.centered[a].abs() * self.layout.dx[a];
                                g += 0.5 * extra * der.hessian[a * n + a];
                            }
                        }
                        if g < best || g.is_nan() {
                            best = g;
                        }
                        if best.is_nan() {
                            break;
                        }
                    }
                    v[j] + dt * best
                },
            )
            .collect();
        for (k, &j) in self.interior.iter().enumerate() {
            let value = updated[k];
            if !value.is_finite() {
                let mut x = vec![0.0; n];
                self.layout.coords(j, &mut x);
                return Err(Error::NonFinite {
                    what: "value",
                    s: t - dt,
                    x,
                    u: Vec::new(),
                });
            }
            out[j] = value;
        }
        self.apply_boundary(t - dt, out);
        Ok(())
    }

    fn apply_boundary(&self, t: f64, v: &mut [f64]) {
        let n = self.layout.n.len();
        match self.mode {
            BoundaryMode::Extrapolate => {
                let mut idx = vec![0; n];
                for a in 0..n {
                    let s = self.layout.strides[a];
                    let last = self.layout.n[a] - 1;
                    for &j in &self.boundary_nodes {
                        self.layout.index(j, &mut idx);
                        if idx[a] == 0 {
                            v[j] = 2.0 * v[j + s] - v[j + 2 * s];
                        } else if idx[a] == last {
                            v[j] = 2.0 * v[j - s] - v[j - 2 * s];
                        }
                    }
                }
            }
            BoundaryMode::Dirichlet => {
                let end = self.model.horizon().end;
                let mut x = vec![0.0; n];
                for &j in &self.boundary_nodes {
                    self.layout.coords(j, &mut x);
                    let fmin = self
                        .model
                        .controls()
                        .iter()
                        .map(|u| self.model.running_cost(t, &x, u))
                        .fold(f64::INFINITY, f64::min);
                    v[j] = self.model.terminal_cost(&x) + (end - t) * fmin;
                }
            }
        }
    }

    /// `max_u (Σσ²/Δx² + Σ|b|/Δx)` over all nodes at time `t`.
    fn rate(&self, t: f64, p_bound: f64) -> f64 {
        let n = self.layout.n.len();
        let mu = self.model.risk();
        (0..self.layout.len())
            .into_par_iter()
            .with_min_len(256)
            .map_init(
                || Scratch::new(n),
                |sc, j| {
                    self.layout.coords(j, &mut sc.x);
                    let mut worst: f64 = 0.0;
                    for u in self.model.controls().iter() {
                        self.model.drift(t, &sc.x, u, &mut sc.b);
                        self.model.diffusion(t, &sc.x, u, &mut sc.sigma);
                        let mut r = 0.0;
                        for a in 0..n {
                            let h = self.layout.dx[a];
                            let mut diff = sc.sigma[a] * sc.sigma[a];
                            if self.viscosity {
                                diff *= 1.0 + 0.5 * mu * p_bound * h;
                            }
                            r += diff / (h * h) + sc.b[a].abs() / h;
                        }
                        worst = worst.max(r);
                    }
                    worst
                },
            )
            .reduce(|| 0.0, f64::max)
    }

    /// Argmin of G with centered derivatives at every node. Boundary nodes
    /// reuse the derivatives of the nearest interior node.
    fn policy(&self, t: f64, v: &[f64]) -> Vec<usize> {
        let n = self.layout.n.len();
        let mu = self.model.risk();
        (0..self.layout.len())
            .into_par_iter()
            .with_min_len(256)
            .map_init(
                || Scratch::new(n),
                |sc, j| {
                    self.layout.coords(j, &mut sc.x);
                    self.layout.derivatives(v, self.layout.clamp_interior(j), &mut sc.der);
                    argmin_g(self.model, mu, t, &sc.x, &sc.der.centered, &sc.der.hessian, &mut sc.b, &mut sc.sigma)
                },
            )
            .collect()
    }

    fn max_centered_gradient(&self, v: &[f64]) -> f64 {
        let n = self.layout.n.len();
        let mut der = Derivatives::new(n);
        let mut worst: f64 = 0.0;
        for &j in &self.interior {
            self.layout.derivatives(v, j, &mut der);
            for a in 0..n {
                worst = worst.max(der.centered[a].abs());
            }
        }
        worst
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn argmin_g(
    model: &ProblemModel,
    mu: f64,
    t: f64,
    x: &[f64],
    p: &[f64],
    big_p: &[f64],
    b: &mut [f64],
    sigma: &mut [f64],
) -> usize {
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for (k, u) in model.controls().iter().enumerate() {
        model.drift(t, x, u, b);
        model.diffusion(t, x, u, sigma);
        let g = g_value(mu, model.running_cost(t, x, u), b, sigma, p, big_p);
        if g < best {
            best = g;
            arg = k;
        }
    }
    arg
}

/// Backward explicit sweep from `V(T) = h` to the start of the horizon.
/// Snapshots are stored at `spec.n_t` equally spaced times; each snapshot
/// interval is split into the number of substeps the CFL bound requires.
pub fn solve_hjb(model: &ProblemModel, spec: &GridSpec) -> Result<ValueGrid> {
    spec.validate(model)?;
    let n = model.state_dim();
    let horizon = model.horizon();
    let dx: Vec<f64> = (0..n)
        .map(|a| spec.domain.width(a) / (spec.n_x[a] - 1) as f64)
        .collect();
    let layout = Layout::new(spec.n_x.clone(), spec.domain.lower.clone(), dx.clone());
    let total = layout.len();
    let interior: Vec<usize> = (0..total).filter(|&j| layout.is_interior(j)).collect();
    let boundary_nodes: Vec<usize> = (0..total).filter(|&j| !layout.is_interior(j)).collect();
    let solver = Solver {
        model,
        layout,
        interior,
        boundary_nodes,
        mode: spec.boundary,
        viscosity: spec.artificial_viscosity,
    };

    let t_nodes: Vec<f64> = (0..spec.n_t)
        .map(|i| horizon.start + horizon.length() * i as f64 / (spec.n_t - 1) as f64)
        .collect();
    let mut terminal = vec![0.0; total];
    let mut x = vec![0.0; n];
    for (j, v) in terminal.iter_mut().enumerate() {
        solver.layout.coords(j, &mut x);
        *v = model.terminal_cost(&x);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "terminal cost",
                s: horizon.end,
                x: x.clone(),
                u: Vec::new(),
            });
        }
    }

    let base_rate = [horizon.start, 0.5 * (horizon.start + horizon.end), horizon.end]
        .iter()
        .map(|&t| solver.rate(t, 0.0))
        .fold(0.0, f64::max);
    let interval = horizon.length() / (spec.n_t - 1) as f64;

    let mut values = vec![0.0; spec.n_t * total];
    let mut policy = vec![0usize; spec.n_t * total];
    let last = spec.n_t - 1;
    values[last * total..].copy_from_slice(&terminal);
    policy[last * total..].copy_from_slice(&solver.policy(horizon.end, &terminal));

    let mut current = terminal;
    let mut next = current.clone();
    let mut substeps_total = 0usize;
    let mut cfl_ratio: f64 = 0.0;
    let mut dt_min = f64::INFINITY;
    let mut grad_max: f64 = 0.0;
    for i in (0..last).rev() {
        let p_bound = solver.max_centered_gradient(&current);
        grad_max = grad_max.max(p_bound);
        let rate = if spec.artificial_viscosity {
            [horizon.start, 0.5 * (horizon.start + horizon.end), horizon.end]
                .iter()
                .map(|&t| solver.rate(t, 1.5 * p_bound))
                .fold(0.0, f64::max)
        } else {
            base_rate
        };
        let m = ((interval * rate / CFL_TARGET).ceil() as usize).max(1);
        let required = substeps_total + m * (i + 1);
        if required > spec.max_steps {
            return Err(Error::Cfl {
                required,
                budget: spec.max_steps,
            });
        }
        let dt = interval / m as f64;
        dt_min = dt_min.min(dt);
        cfl_ratio = cfl_ratio.max(dt * rate);
        let t_hi = t_nodes[i + 1];
        for l in 0..m {
            let t = t_hi - l as f64 * dt;
            solver.step(t, dt, &current, &mut next)?;
            std::mem::swap(&mut current, &mut next);
        }
        substeps_total += m;
        values[i * total..(i + 1) * total].copy_from_slice(&current);
        policy[i * total..(i + 1) * total].copy_from_slice(&solver.policy(t_nodes[i], &current));
    }

    let gradient_monotone = spec.artificial_viscosity || gradient_monotone(model, &solver.layout, grad_max);
    let mu = model.risk();
    let meta = SchemeMeta {
        scheme: "explicit-monotone".into(),
        boundary: Some(spec.boundary),
        dt: dt_min,
        dx: dx.clone(),
        substeps: substeps_total,
        cfl_ratio,
        gradient_monotone,
        artificial_viscosity: spec.artificial_viscosity,
        uniqueness_guaranteed: mu == 0.0,
        note: (mu != 0.0).then(|| "uniqueness of the viscosity solution not guaranteed at this risk level".to_string()),
    };
    let x_nodes = (0..n)
        .map(|a| (0..spec.n_x[a]).map(|k| spec.domain.lower[a] + k as f64 * dx[a]).collect())
        .collect();
    Ok(ValueGrid::from_parts(t_nodes, x_nodes, values, policy, meta))
}

/// In one dimension the centered quadratic term keeps the scheme monotone
/// when `μ |p| Δx ≤ 1`; the same bound is applied per axis in general.
fn gradient_monotone(model: &ProblemModel, layout: &Layout, grad_max: f64) -> bool {
    let mu = model.risk();
    layout.dx.iter().all(|h| mu * grad_max * h <= 1.0)
}

impl ValueGrid {
    /// Writes the grid as CSV: one `# t_nodes:` line, one `# x<i>_nodes:`
    /// line per axis, then a header and one row per (time, node) in
    /// row-major order.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let join = |v: &[f64]| v.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",");
        writeln!(out, "# t_nodes: {}", join(&self.t_nodes))?;
        for (a, axis) in self.x_nodes.iter().enumerate() {
            writeln!(out, "# x{}_nodes: {}", a + 1, join(axis))?;
        }
        let n = self.x_nodes.len();
        let mut header = vec!["t_index".to_string(), "node".into(), "t".into()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.push("value".into());
        header.push("policy".into());
        writeln!(out, "{}", header.join(","))?;
        let layout = self.layout();
        let mut x = vec![0.0; n];
        for (i, t) in self.t_nodes.iter().enumerate() {
            for j in 0..layout.len() {
                layout.coords(j, &mut x);
                let pol = self.policy.get(i * layout.len() + j).map(|p| p.to_string()).unwrap_or_default();
                writeln!(out, "{i},{j},{t},{},{},{pol}", join(&x), self.values[i * layout.len() + j])?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example_5_1, example_5_2, ControlSet};

    #[test]
    fn hamiltonian_hand_values() {
        let m51 = example_5_1().model().clone();
        let g = hamiltonian_g(&m51, 0.0, &[1.0], &[1.0], &[0.5], &[-0.5]).unwrap();
        assert!((g - 0.875).abs() < 1e-15);
        let g = hamiltonian_g(&m51, 0.0, &[3.0], &[0.0], &[7.0], &[2.0]).unwrap();
        assert_eq!(g, 0.0);
        let m52 = example_5_2().model().clone();
        let g = hamiltonian_g(&m52, 0.3, &[1.0], &[1.0], &[0.5], &[-0.5]).unwrap();
        assert!(g.abs() < 1e-15);
    }

    #[test]
    fn asymmetric_hessian_rejected() {
        let model = ProblemModel::builder("zero", 2)
            .controls(ControlSet::scalar(&[0.0]).unwrap())
            .build()
            .unwrap();
        let err = hamiltonian_g(&model, 0.0, &[0.0, 0.0], &[0.0], &[0.0, 0.0], &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(err, Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn example_5_1_reproduces_arctan() {
        let model = example_5_1().model().clone();
        let spec = GridSpec::uniform(11, 241, DomainBox::cube(1, 3.0));
        let grid = solve_hjb(&model, &spec).unwrap();
        assert!(grid.meta.cfl_ratio <= 1.0);
        assert!(grid.meta.gradient_monotone);
        let err = grid.max_interior_error(|_, x| x[0].atan(), 0.2);
        assert!(err <= 5e-3, "max error {err}");
        let nodes = grid.layout().len();
        for i in 0..grid.t_nodes.len() {
            for j in 1..nodes - 1 {
                assert_eq!(grid.policy[i * nodes + j], 0);
            }
        }
    }

    #[test]
    fn constant_terminal_gives_constant_value() {
        let model = example_5_1()
            .model()
            .with_terminal_cost(std::sync::Arc::new(|_: &[f64]| 0.7))
            .with_running_cost(std::sync::Arc::new(|_, _, _| 0.0));
        for mode in [BoundaryMode::Extrapolate, BoundaryMode::Dirichlet] {
            let spec = GridSpec::uniform(5, 41, DomainBox::cube(1, 2.0)).with_boundary(mode);
            let grid = solve_hjb(&model, &spec).unwrap();
            assert!(grid.values.iter().all(|&v| v == 0.7), "{mode:?}");
        }
    }

    #[test]
    fn terminal_slice_is_exact() {
        let model = example_5_2().model().clone();
        let spec = GridSpec::uniform(3, 61, DomainBox::cube(1, 3.0));
        let grid = solve_hjb(&model, &spec).unwrap();
        let last = grid.t_nodes.len() - 1;
        for (k, x) in grid.x_nodes[0].iter().enumerate() {
            assert_eq!(grid.value_at(last, k), x.atan());
        }
    }

    #[test]
    fn step_budget_enforced() {
        let model = example_5_2().model().clone();
        let spec = GridSpec::uniform(3, 241, DomainBox::cube(1, 3.0)).with_max_steps(100);
        assert!(matches!(solve_hjb(&model, &spec), Err(Error::Cfl { budget: 100, .. })));
    }

    #[test]
    fn two_dimensional_heat_like_problem() {
        // b = 0, σ = (u, u), f = 0, h = x1 + x2 with U = {1}: V = h + μ(T−t)
        let model = ProblemModel::builder("plane", 2)
            .diffusion(|_, _, u, out| {
                out[0] = u[0];
                out[1] = u[0];
            })
            .terminal_cost(|x| x[0] + x[1])
            .controls(crate::ControlSet::scalar(&[1.0]).unwrap())
            .risk(0.5)
            .build()
            .unwrap();
        let spec = GridSpec::uniform(3, 21, DomainBox::cube(2, 1.0));
        let grid = solve_hjb(&model, &spec).unwrap();
        let err = grid.max_interior_error(|t, x| x[0] + x[1] + (1.0 - t), 0.0);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn boundary_mode_parses() {
        assert_eq!("dirichlet".parse::<BoundaryMode>().unwrap(), BoundaryMode::Dirichlet);
        assert!("periodic".parse::<BoundaryMode>().is_err());
    }
}
