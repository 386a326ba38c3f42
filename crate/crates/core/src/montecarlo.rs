//! Euler–Maruyama simulation of the controlled SDE and Monte Carlo estimation
//! of the risk-sensitive cost μ⁻¹ log E exp(μ(∫f ds + h(X_T))).
//!
//! Paths are generated in fixed blocks of [`BLOCK_SIZE`]; block `b` draws its
//! Gaussian increments from a ChaCha8 stream seeded by the master seed with
//! stream id `b`, so results do not depend on how blocks are scheduled.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ProblemModel;

pub const BLOCK_SIZE: usize = 1024;

/// `(s, x) -> index into the control set`.
pub type FeedbackFn = Arc<dyn Fn(f64, &[f64]) -> usize + Send + Sync>;

#[derive(Clone)]
pub enum Policy {
    /// The same control at every step.
    Constant(usize),
    /// One control index per time step.
    OpenLoop(Vec<usize>),
    Feedback(FeedbackFn),
}

impl Policy {
    pub fn feedback(f: impl Fn(f64, &[f64]) -> usize + Send + Sync + 'static) -> Self {
        Policy::Feedback(Arc::new(f))
    }

    #[inline]
    pub fn control(&self, k: usize, s: f64, x: &[f64]) -> usize {
        match self {
            Policy::Constant(i) => *i,
            Policy::OpenLoop(seq) => seq[k],
            Policy::Feedback(f) => f(s, x),
        }
    }
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Constant(i) => write!(f, "Constant({i})"),
            Policy::OpenLoop(seq) => write!(f, "OpenLoop(len {})", seq.len()),
            Policy::Feedback(_) => f.write_str("Feedback(..)"),
        }
    }
}

/// Simulated paths, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub time_grid: Vec<f64>,
    pub n_paths: usize,
    pub state_dim: usize,
    pub seed: u64,
    /// `n_paths × N` Brownian increments.
    pub dw: Vec<f64>,
    /// `n_paths × (N+1) × n` states.
    pub states: Vec<f64>,
    /// `n_paths × N` control indices.
    pub controls: Vec<u16>,
    /// Backward pair `(Y, Z)`, each `n_paths × (N+1)`, once a solver has run.
    pub backward: Option<(Vec<f64>, Vec<f64>)>,
}

impl PathBundle {
    pub fn n_steps(&self) -> usize {
        self.time_grid.len() - 1
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.time_grid[k + 1] - self.time_grid[k]
    }

    #[inline]
    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let n = self.state_dim;
        let start = (path * (self.n_steps() + 1) + k) * n;
        &self.states[start..start + n]
    }

    #[inline]
    pub fn control(&self, path: usize, k: usize) -> usize {
        self.controls[path * self.n_steps() + k] as usize
    }

    #[inline]
    pub fn dw(&self, path: usize, k: usize) -> f64 {
        self.dw[path * self.n_steps() + k]
    }

    pub fn terminal_state(&self, path: usize) -> &[f64] {
        self.state(path, self.n_steps())
    }

    /// Attaches `(Y, Z)`; both must be `n_paths × (N+1)`.
    pub fn set_backward(&mut self, y: Vec<f64>, z: Vec<f64>) -> Result<()> {
        let len = self.n_paths * (self.n_steps() + 1);
        if y.len() != len || z.len() != len {
            return Err(Error::InvalidArgument(format!(
                "backward arrays must have {len} entries"
            )));
        }
        self.backward = Some((y, z));
        Ok(())
    }

    /// CSV with header `path_id,k,s_k,x_1..x_n,u_1..u_m,dW`; the row at
    /// `k = N` leaves the control and increment columns empty.
    pub fn write_csv(&self, model: &ProblemModel, mut out: impl Write) -> Result<()> {
        let n = self.state_dim;
        let m = model.control_dim();
        let mut header = vec!["path_id".to_string(), "k".into(), "s_k".into()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        if m == 1 {
            header.push("u".into());
        } else {
            header.extend((1..=m).map(|j| format!("u_{j}")));
        }
        header.push("dW".into());
        writeln!(out, "{}", header.join(","))?;
        let steps = self.n_steps();
        for p in 0..self.n_paths {
            for k in 0..=steps {
                let mut row = vec![p.to_string(), k.to_string(), self.time_grid[k].to_string()];
                row.extend(self.state(p, k).iter().map(|v| v.to_string()));
                if k < steps {
                    row.extend(model.controls().point(self.control(p, k)).iter().map(|v| v.to_string()));
                    row.push(self.dw(p, k).to_string());
                } else {
                    row.extend(std::iter::repeat_n(String::new(), m + 1));
                }
                writeln!(out, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

/// Uniform grid on the model horizon.
pub fn uniform_grid(model: &ProblemModel, n_steps: usize) -> Vec<f64> {
    let h = model.horizon();
    let mut grid: Vec<f64> = (0..=n_steps)
        .map(|k| h.start + h.length() * k as f64 / n_steps as f64)
        .collect();
    grid[n_steps] = h.end;
    grid
}

struct Stepper<'a> {
    model: &'a ProblemModel,
    policy: &'a Policy,
    grid: &'a [f64],
    x0: &'a [f64],
}

impl Stepper<'_> {
    fn check(model: &ProblemModel, policy: &Policy, x0: &[f64], n_steps: usize, n_paths: usize) -> Result<()> {
        if n_steps == 0 || n_paths == 0 {
            return Err(Error::InvalidArgument("n_steps and n_paths must be >= 1".into()));
        }
        if x0.len() != model.state_dim() {
            return Err(Error::InvalidArgument(format!(
                "initial state has dimension {}, model has {}",
                x0.len(),
                model.state_dim()
            )));
        }
        if !model.domain().contains(x0) {
            return Err(Error::InvalidArgument(format!("initial state {x0:?} outside the domain box")));
        }
        if model.controls().len() > u16::MAX as usize {
            return Err(Error::InvalidArgument("control set too large".into()));
        }
        match policy {
            Policy::Constant(i) if *i >= model.controls().len() => {
                Err(Error::InvalidArgument(format!("control index {i} out of range")))
            }
            Policy::OpenLoop(seq) if seq.len() != n_steps => Err(Error::InvalidArgument(format!(
                "open-loop sequence has {} entries, need {n_steps}",
                seq.len()
            ))),
            Policy::OpenLoop(seq) if seq.iter().any(|i| *i >= model.controls().len()) => {
                Err(Error::InvalidArgument("open-loop control index out of range".into()))
            }
            _ => Ok(()),
        }
    }

    /// Runs one path; `visit(k, x_k, u_k, dW_k)` is called for k < N and the
    /// final state is left in `x`.
    fn path(
        &self,
        rng: &mut ChaCha8Rng,
        x: &mut [f64],
        drift: &mut [f64],
        diff: &mut [f64],
        mut visit: impl FnMut(usize, &[f64], usize, f64),
    ) -> Result<()> {
        x.copy_from_slice(self.x0);
        let n_controls = self.model.controls().len();
        for k in 0..self.grid.len() - 1 {
            let s = self.grid[k];
            let dt = self.grid[k + 1] - s;
            let ui = self.policy.control(k, s, x);
            if ui >= n_controls {
                return Err(Error::InvalidArgument(format!(
                    "policy returned control index {ui} at s={s}"
                )));
            }
            let u = self.model.controls().point(ui);
            let z: f64 = StandardNormal.sample(rng);
            let dw = z * dt.sqrt();
            self.model.drift(s, x, u, drift);
            self.model.diffusion(s, x, u, diff);
            if drift.iter().chain(diff.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "drift/diffusion",
                    s,
                    x: x.to_vec(),
                    u: u.to_vec(),
                });
            }
            visit(k, x, ui, dw);
            for i in 0..x.len() {
                x[i] += drift[i] * dt + diff[i] * dw;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "state",
                    s: self.grid[k + 1],
                    x: x.to_vec(),
                    u: u.to_vec(),
                });
            }
        }
        Ok(())
    }
}

fn block_rng(seed: u64, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    rng
}

fn n_blocks(n_paths: usize) -> usize {
    n_paths.div_ceil(BLOCK_SIZE)
}

fn block_len(n_paths: usize, block: usize) -> usize {
    BLOCK_SIZE.min(n_paths - block * BLOCK_SIZE)
}

/// Euler–Maruyama on a uniform grid over the model horizon.
pub fn simulate_paths(
    model: &ProblemModel,
    policy: &Policy,
    x0: &[f64],
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    Stepper::check(model, policy, x0, n_steps, n_paths)?;
    let grid = uniform_grid(model, n_steps);
    let n = model.state_dim();
    let stepper = Stepper {
        model,
        policy,
        grid: &grid,
        x0,
    };
    let blocks: Vec<(Vec<f64>, Vec<f64>, Vec<u16>)> = (0..n_blocks(n_paths))
        .into_par_iter()
        .map(|b| {
            let len = block_len(n_paths, b);
            let mut rng = block_rng(seed, b);
            let mut states = Vec::with_capacity(len * (n_steps + 1) * n);
            let mut dws = Vec::with_capacity(len * n_steps);
            let mut controls = Vec::with_capacity(len * n_steps);
            let (mut x, mut drift, mut diff) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for _ in 0..len {
                stepper.path(&mut rng, &mut x, &mut drift, &mut diff, |_, xk, ui, dw| {
                    states.extend_from_slice(xk);
                    controls.push(ui as u16);
                    dws.push(dw);
                })?;
                states.extend_from_slice(&x);
            }
            Ok((states, dws, controls))
        })
        .collect::<Result<_>>()?;

    let mut bundle = PathBundle {
        time_grid: grid.clone(),
        n_paths,
        state_dim: n,
        seed,
        dw: Vec::with_capacity(n_paths * n_steps),
        states: Vec::with_capacity(n_paths * (n_steps + 1) * n),
        controls: Vec::with_capacity(n_paths * n_steps),
        backward: None,
    };
    for (states, dws, controls) in blocks {
        bundle.states.extend(states);
        bundle.dw.extend(dws);
        bundle.controls.extend(controls);
    }
    Ok(bundle)
}

/// Per-path cost components without storing the paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCosts {
    /// Σ_k f(s_k, X_k, u_k) Δs_k (left-endpoint rule).
    pub running: Vec<f64>,
    /// h(X_N).
    pub terminal: Vec<f64>,
}

impl PathCosts {
    /// J₁ = ∫f ds + h(X_T) per path.
    pub fn total(&self) -> Vec<f64> {
        self.running.iter().zip(&self.terminal).map(|(a, b)| a + b).collect()
    }
}

/// Same paths as [`simulate_paths`] with the same arguments, reduced on the
/// fly to per-path costs. Suitable for millions of paths.
pub fn simulate_path_costs(
    model: &ProblemModel,
    policy: &Policy,
    x0: &[f64],
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathCosts> {
    Stepper::check(model, policy, x0, n_steps, n_paths)?;
    let grid = uniform_grid(model, n_steps);
    let n = model.state_dim();
    let stepper = Stepper {
        model,
        policy,
        grid: &grid,
        x0,
    };
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..n_blocks(n_paths))
        .into_par_iter()
        .map(|b| {
            let len = block_len(n_paths, b);
            let mut rng = block_rng(seed, b);
            let mut running = Vec::with_capacity(len);
            let mut terminal = Vec::with_capacity(len);
            let (mut x, mut drift, mut diff) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for _ in 0..len {
                let mut acc = 0.0;
                stepper.path(&mut rng, &mut x, &mut drift, &mut diff, |k, xk, ui, _| {
                    let dt = grid[k + 1] - grid[k];
                    acc += model.running_cost(grid[k], xk, model.controls().point(ui)) * dt;
                })?;
                running.push(acc);
                terminal.push(model.terminal_cost(&x));
            }
            Ok((running, terminal))
        })
        .collect::<Result<_>>()?;
    let mut out = PathCosts {
        running: Vec::with_capacity(n_paths),
        terminal: Vec::with_capacity(n_paths),
    };
    for (r, t) in blocks {
        out.running.extend(r);
        out.terminal.extend(t);
    }
    Ok(out)
}

/// Per-path costs of a stored bundle.
pub fn path_costs(model: &ProblemModel, bundle: &PathBundle) -> PathCosts {
    let steps = bundle.n_steps();
    let (running, terminal) = (0..bundle.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut acc = 0.0;
            for k in 0..steps {
                let u = model.controls().point(bundle.control(p, k));
                acc += model.running_cost(bundle.time_grid[k], bundle.state(p, k), u) * bundle.dt(k);
            }
            (acc, model.terminal_cost(bundle.terminal_state(p)))
        })
        .unzip();
    PathCosts { running, terminal }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub point_estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub mu: f64,
}

/// μ⁻¹ log( n⁻¹ Σ exp(μ J₁ᵢ) ), evaluated with a max shift. The standard
/// error is the delta-method transform of the exp-scale sample mean.
pub fn cost_from_samples(mu: f64, samples: &[f64]) -> Result<CostEstimate> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("risk parameter must be > 0, got {mu}")));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite path cost {bad}")));
    }
    let n = samples.len() as f64;
    let shift = samples.iter().fold(f64::NEG_INFINITY, |m, v| m.max(mu * v));
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for v in samples {
        let e = (mu * v - shift).exp();
        sum += e;
        sum_sq += e * e;
    }
    let mean = sum / n;
    let var = if samples.len() > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(CostEstimate {
        point_estimate: (shift + mean.ln()) / mu,
        std_error: var.sqrt() / (n.sqrt() * mu * mean),
        n_paths: samples.len(),
        mu,
    })
}

/// Risk-sensitive cost of a simulated bundle under the model's μ.
pub fn risk_sensitive_cost(model: &ProblemModel, bundle: &PathBundle) -> Result<CostEstimate> {
    if bundle.state_dim != model.state_dim() {
        return Err(Error::InvalidArgument("bundle and model dimensions differ".into()));
    }
    cost_from_samples(model.risk(), &path_costs(model, bundle).total())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionRow {
    pub mu: f64,
    pub cost: f64,
    pub mean_j1: f64,
    pub var_j1: f64,
    /// E[J₁] + (μ/2) Var(J₁)
    pub second_order: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionTable {
    pub rows: Vec<ExpansionRow>,
    pub n_paths: usize,
    pub seed: u64,
}

impl ExpansionTable {
    /// Least-squares slope of log|r| against log μ. `None` when fewer than
    /// two rows have a nonzero residual.
    pub fn fitted_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.residual != 0.0)
            .map(|r| (r.mu.ln(), r.residual.abs().ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    }
}

/// Compares J(μ) with its second-order expansion E[J₁] + (μ/2)Var(J₁) over
/// a list of μ, reusing one set of paths for every μ. Mean and variance are
/// those of the empirical distribution (variance with 1/n), for which the
/// residual is exactly the O(μ²) cumulant tail.
pub fn small_mu_expansion_check(
    model: &ProblemModel,
    policy: &Policy,
    x0: &[f64],
    mus: &[f64],
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<ExpansionTable> {
    if mus.is_empty() || mus.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::InvalidArgument("μ list must be nonempty and positive".into()));
    }
    for (i, m) in mus.iter().enumerate() {
        if mus[..i].contains(m) {
            return Err(Error::InvalidArgument(format!("duplicate μ {m}")));
        }
    }
    let j1 = simulate_path_costs(model, policy, x0, n_steps, n_paths, seed)?.total();
    let n = j1.len() as f64;
    let mean = j1.iter().sum::<f64>() / n;
    let var = j1.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rows = mus
        .iter()
        .map(|&mu| {
            let cost = cost_from_samples(mu, &j1)?.point_estimate;
            let second_order = mean + 0.5 * mu * var;
            Ok(ExpansionRow {
                mu,
                cost,
                mean_j1: mean,
                var_j1: var,
                second_order,
                residual: cost - second_order,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ExpansionTable { rows, n_paths, seed })
}
