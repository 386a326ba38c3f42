use std::sync::Arc;

use super::{ProblemModel, VectorFn};

/// `x -> out`, for derivatives of the terminal cost.
pub type TerminalVectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// First and second x-derivatives of the coefficients, as needed by the
/// adjoint equations. Layouts (n = state dimension):
///
/// * `drift_x`, `diffusion_x`: n×n row-major, `out[i*n + j] = ∂g_i/∂x_j`
/// * `running_x`, `terminal_x`: n
/// * `drift_xx`, `diffusion_xx`: n×n×n, `out[(i*n + j)*n + k] = ∂²g_i/∂x_j∂x_k`
/// * `running_xx`, `terminal_xx`: n×n
#[derive(Clone, Default)]
pub struct CoefficientDerivatives {
    pub drift_x: Option<VectorFn>,
    pub diffusion_x: Option<VectorFn>,
    pub running_x: Option<VectorFn>,
    pub terminal_x: Option<TerminalVectorFn>,
    pub drift_xx: Option<VectorFn>,
    pub diffusion_xx: Option<VectorFn>,
    pub running_xx: Option<VectorFn>,
    pub terminal_xx: Option<TerminalVectorFn>,
}

const FIRST_STEP: f64 = 1e-5;
const SECOND_STEP: f64 = 1e-3;

impl CoefficientDerivatives {
    /// Names of the callbacks that are not set.
    pub fn missing(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.drift_x.is_none() {
            out.push("drift_x");
        }
        if self.diffusion_x.is_none() {
            out.push("diffusion_x");
        }
        if self.running_x.is_none() {
            out.push("running_x");
        }
        if self.terminal_x.is_none() {
            out.push("terminal_x");
        }
        if self.drift_xx.is_none() {
            out.push("drift_xx");
        }
        if self.diffusion_xx.is_none() {
            out.push("diffusion_xx");
        }
        if self.running_xx.is_none() {
            out.push("running_xx");
        }
        if self.terminal_xx.is_none() {
            out.push("terminal_xx");
        }
        out
    }

    /// Central differences with one Richardson extrapolation step, for models
    /// defined by expressions. First derivatives use a base step of 1e-5;
    /// second derivatives use 1e-3 (a 1e-5 second difference is dominated by
    /// rounding).
    pub fn finite_difference(model: &ProblemModel) -> Self {
        let n = model.state_dim();
        let drift = model.coefficients().drift.clone();
        let diffusion = model.coefficients().diffusion.clone();
        let running = model.coefficients().running_cost.clone();
        let terminal = model.coefficients().terminal_cost.clone();

        let running_vec: VectorFn = {
            let running = running.clone();
            Arc::new(move |s, x, u, out: &mut [f64]| out[0] = running(s, x, u))
        };
        let terminal_vec: VectorFn = {
            let terminal = terminal.clone();
            Arc::new(move |_, x, _, out: &mut [f64]| out[0] = terminal(x))
        };

        let jac = |g: VectorFn, m: usize| -> VectorFn {
            Arc::new(move |s, x, u, out: &mut [f64]| jacobian(&g, m, n, s, x, u, out))
        };
        let hess = |g: VectorFn, m: usize| -> VectorFn {
            Arc::new(move |s, x, u, out: &mut [f64]| hessians(&g, m, n, s, x, u, out))
        };
        let tj = {
            let g = terminal_vec.clone();
            Arc::new(move |x: &[f64], out: &mut [f64]| jacobian(&g, 1, n, 0.0, x, &[], out))
        };
        let th = {
            let g = terminal_vec;
            Arc::new(move |x: &[f64], out: &mut [f64]| hessians(&g, 1, n, 0.0, x, &[], out))
        };
        Self {
            drift_x: Some(jac(drift.clone(), n)),
            diffusion_x: Some(jac(diffusion.clone(), n)),
            running_x: Some(jac(running_vec.clone(), 1)),
            terminal_x: Some(tj),
            drift_xx: Some(hess(drift, n)),
            diffusion_xx: Some(hess(diffusion, n)),
            running_xx: Some(hess(running_vec, 1)),
            terminal_xx: Some(th),
        }
    }
}

fn eval_shifted(g: &VectorFn, m: usize, s: f64, x: &[f64], u: &[f64], shifts: &[(usize, f64)]) -> Vec<f64> {
    let mut xs = x.to_vec();
    for &(j, d) in shifts {
        xs[j] += d;
    }
    let mut out = vec![0.0; m];
    g(s, &xs, u, &mut out);
    out
}

fn jacobian(g: &VectorFn, m: usize, n: usize, s: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
    for j in 0..n {
        let central = |h: f64| -> Vec<f64> {
            let up = eval_shifted(g, m, s, x, u, &[(j, h)]);
            let dn = eval_shifted(g, m, s, x, u, &[(j, -h)]);
            up.iter().zip(&dn).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        };
        let coarse = central(FIRST_STEP);
        let fine = central(FIRST_STEP / 2.0);
        for i in 0..m {
            out[i * n + j] = (4.0 * fine[i] - coarse[i]) / 3.0;
        }
    }
}

fn hessians(g: &VectorFn, m: usize, n: usize, s: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
    let center = eval_shifted(g, m, s, x, u, &[]);
    for j in 0..n {
        for k in j..n {
            let second = |h: f64| -> Vec<f64> {
                if j == k {
                    let up = eval_shifted(g, m, s, x, u, &[(j, h)]);
                    let dn = eval_shifted(g, m, s, x, u, &[(j, -h)]);
                    (0..m).map(|i| (up[i] - 2.0 * center[i] + dn[i]) / (h * h)).collect()
                } else {
                    let pp = eval_shifted(g, m, s, x, u, &[(j, h), (k, h)]);
                    let pm = eval_shifted(g, m, s, x, u, &[(j, h), (k, -h)]);
                    let mp = eval_shifted(g, m, s, x, u, &[(j, -h), (k, h)]);
                    let mm = eval_shifted(g, m, s, x, u, &[(j, -h), (k, -h)]);
                    (0..m).map(|i| (pp[i] - pm[i] - mp[i] + mm[i]) / (4.0 * h * h)).collect()
                }
            };
            let coarse = second(SECOND_STEP);
            let fine = second(SECOND_STEP / 2.0);
            for i in 0..m {
                let v = (4.0 * fine[i] - coarse[i]) / 3.0;
                out[(i * n + j) * n + k] = v;
                out[(i * n + k) * n + j] = v;
            }
        }
    }
}
