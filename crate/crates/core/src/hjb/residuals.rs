use rayon::prelude::*;
use serde::Serialize;

use super::grid::nearest;
use super::{g_value, Derivatives, ValueGrid};
use crate::error::{Error, Result};
use crate::jets::{Candidate, JetOptions, JetProbe, Side};
use crate::model::ProblemModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualKind {
    /// Discrete PDE residual V_t + min_u G.
    Smooth,
    /// Jet-based inequalities at a jump of the discrete gradient.
    Kink,
    /// V(T, x) − h(x).
    Terminal,
    /// A gradient jump in dimension > 1; not evaluated.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualOptions {
    /// A node is a kink candidate when its one-sided slope jump exceeds this
    /// multiple of the jumps two nodes away on both sides.
    pub kink_ratio: f64,
    /// Points per axis of the (ϙ, p, P) candidate sweep at kinks.
    pub sweep_points: usize,
    pub jets: JetOptions,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self {
            kink_ratio: 4.0,
            sweep_points: 11,
            jets: JetOptions::default(),
        }
    }
}

/// Residuals at one grid node.
///
/// A viscosity subsolution needs `ϙ + min_u G(p, P) ≥ 0` for every (ϙ, p, P)
/// in the parabolic superjet, a supersolution needs `≤ 0` on the subjet. At
/// smooth points both residuals equal the discrete `V_t + min_u G`; at kinks
/// `sub_residual` is the smallest value over tested superjet members and
/// `super_residual` the largest over tested subjet members (`None` when no
/// candidate was a member).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointResidual {
    pub t: f64,
    pub x: Vec<f64>,
    pub kind: ResidualKind,
    pub sub_residual: Option<f64>,
    pub super_residual: Option<f64>,
    /// Superjet member achieving `sub_residual`, as (ϙ, p, P).
    pub sub_witness: Option<Candidate>,
    pub super_witness: Option<Candidate>,
    pub superjet_members: usize,
    pub subjet_members: usize,
}

impl PointResidual {
    /// Both viscosity inequalities hold up to `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        match self.kind {
            ResidualKind::Skipped => true,
            ResidualKind::Smooth | ResidualKind::Terminal => {
                self.sub_residual.is_none_or(|r| r.abs() <= tol)
            }
            ResidualKind::Kink => {
                self.sub_residual.is_none_or(|r| r >= -tol) && self.super_residual.is_none_or(|r| r <= tol)
            }
        }
    }
}

fn min_g(model: &ProblemModel, t: f64, x: &[f64], p: &[f64], big_p: &[f64]) -> f64 {
    let n = x.len();
    let mut b = vec![0.0; n];
    let mut sigma = vec![0.0; n];
    model
        .controls()
        .iter()
        .map(|u| {
            model.drift(t, x, u, &mut b);
            model.diffusion(t, x, u, &mut sigma);
            g_value(model.risk(), model.running_cost(t, x, u), &b, &sigma, p, big_p)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Evaluates viscosity residuals at the grid nodes nearest to `points`.
/// Points must be interior in space; a point on the last time node yields
/// the terminal residual.
pub fn viscosity_residuals(
    grid: &ValueGrid,
    model: &ProblemModel,
    points: &[(f64, Vec<f64>)],
    options: &ResidualOptions,
) -> Result<Vec<PointResidual>> {
    let layout = grid.layout();
    let n = grid.dim();
    if model.state_dim() != n {
        return Err(Error::InvalidArgument("grid and model dimensions differ".into()));
    }
    let last = grid.t_nodes.len() - 1;
    let mut out = Vec::with_capacity(points.len());
    for (t, x) in points {
        if x.len() != n {
            return Err(Error::InvalidArgument("test point has the wrong dimension".into()));
        }
        let i = nearest(&grid.t_nodes, *t);
        let mut j = 0;
        let mut idx = vec![0; n];
        for a in 0..n {
            idx[a] = nearest(&grid.x_nodes[a], x[a]);
            j += idx[a] * layout.strides[a];
        }
        let node_x: Vec<f64> = (0..n).map(|a| grid.x_nodes[a][idx[a]]).collect();
        let node_t = grid.t_nodes[i];
        if i == last {
            let r = grid.value_at(i, j) - model.terminal_cost(&node_x);
            out.push(PointResidual {
                t: node_t,
                x: node_x,
                kind: ResidualKind::Terminal,
                sub_residual: Some(r),
                super_residual: Some(r),
                sub_witness: None,
                super_witness: None,
                superjet_members: 0,
                subjet_members: 0,
            });
            continue;
        }
        if (0..n).any(|a| idx[a] == 0 || idx[a] + 1 == layout.n[a]) {
            return Err(Error::InvalidArgument(format!("test point {x:?} is on the grid boundary")));
        }
        let snap = grid.snapshot(i);
        let v_t = (grid.value_at(i + 1, j) - grid.value_at(i, j)) / (grid.t_nodes[i + 1] - node_t);
        let mut der = Derivatives::new(n);
        layout.derivatives(snap, j, &mut der);

        let jump = |a: usize, k: usize| -> Option<f64> {
            let s = layout.strides[a];
            let base = j as isize + (k as isize - idx[a] as isize) * s as isize;
            if k == 0 || k + 1 >= layout.n[a] {
                return None;
            }
            let b = base as usize;
            Some((snap[b + s] - 2.0 * snap[b] + snap[b - s]).abs() / layout.dx[a])
        };
        let kink_axes: Vec<usize> = (0..n)
            .filter(|&a| {
                let here = jump(a, idx[a]).unwrap_or(0.0);
                let left = if idx[a] >= 2 { jump(a, idx[a] - 2) } else { None };
                let right = jump(a, idx[a] + 2);
                match (left, right) {
                    (Some(l), Some(r)) => here > 1e-8 && here > options.kink_ratio * l.max(r),
                    _ => false,
                }
            })
            .collect();

        if kink_axes.is_empty() {
            let r = v_t + min_g(model, node_t, &node_x, &der.centered, &der.hessian);
            out.push(PointResidual {
                t: node_t,
                x: node_x,
                kind: ResidualKind::Smooth,
                sub_residual: Some(r),
                super_residual: Some(r),
                sub_witness: None,
                super_witness: None,
                superjet_members: 0,
                subjet_members: 0,
            });
            continue;
        }
        if n > 1 {
            out.push(PointResidual {
                t: node_t,
                x: node_x,
                kind: ResidualKind::Skipped,
                sub_residual: None,
                super_residual: None,
                sub_witness: None,
                super_witness: None,
                superjet_members: 0,
                subjet_members: 0,
            });
            continue;
        }
        out.push(kink_residual(grid, model, node_t, node_x, v_t, &der, j, options)?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn kink_residual(
    grid: &ValueGrid,
    model: &ProblemModel,
    t: f64,
    x: Vec<f64>,
    v_t: f64,
    der: &Derivatives,
    j: usize,
    options: &ResidualOptions,
) -> Result<PointResidual> {
    let layout = grid.layout();
    let snap = grid.snapshot(nearest(&grid.t_nodes, t));
    let h = layout.dx[0];
    let second = |k: usize| (snap[k + 1] - 2.0 * snap[k] + snap[k - 1]) / (h * h);
    let p_ref = 0.5 * (second(j - 2) + second(j + 2));
    let (lo, hi) = (der.backward[0].min(der.forward[0]), der.backward[0].max(der.forward[0]));
    let k = options.sweep_points.max(2);
    let axis = |a: f64, b: f64| (0..k).map(move |i| a + (b - a) * i as f64 / (k - 1) as f64);
    let candidates: Vec<(f64, f64, f64)> = axis(v_t - 0.5, v_t + 0.5)
        .flat_map(|q| axis(lo, hi).flat_map(move |p| axis(p_ref - 2.0, p_ref + 2.0).map(move |pp| (q, p, pp))))
        .collect();
    let probe = JetProbe::parabolic(grid, t, &x, &options.jets)?;
    let results: Vec<(f64, Candidate, bool, bool)> = candidates
        .par_iter()
        .map(|&(q, p, pp)| {
            let c = Candidate::Parabolic {
                q,
                p: vec![p],
                big_p: vec![pp],
            };
            let sup = probe.test(&c, Side::Super)?.is_member();
            let sub = probe.test(&c, Side::Sub)?.is_member();
            Ok((q + min_g(model, t, &x, &[p], &[pp]), c, sup, sub))
        })
        .collect::<Result<_>>()?;
    let mut sub_best: Option<(f64, Candidate)> = None;
    let mut super_best: Option<(f64, Candidate)> = None;
    let (mut n_sup, mut n_sub) = (0, 0);
    for (value, c, sup, sub) in results {
        if sup {
            n_sup += 1;
            if sub_best.as_ref().is_none_or(|b| value < b.0) {
                sub_best = Some((value, c.clone()));
            }
        }
        if sub {
            n_sub += 1;
            if super_best.as_ref().is_none_or(|b| value > b.0) {
                super_best = Some((value, c));
            }
        }
    }
    Ok(PointResidual {
        t,
        x,
        kind: ResidualKind::Kink,
        sub_residual: sub_best.as_ref().map(|b| b.0),
        super_residual: super_best.as_ref().map(|b| b.0),
        sub_witness: sub_best.map(|b| b.1),
        super_witness: super_best.map(|b| b.1),
        superjet_members: n_sup,
        subjet_members: n_sub,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::{solve_hjb, GridSpec};
    use crate::jets::test_parabolic_jet;
    use crate::model::{example_5_1, example_5_2, example_5_2_value, DomainBox};

    #[test]
    fn example_5_1_interior_residuals_are_small() {
        let model = example_5_1().model().clone();
        let grid = solve_hjb(&model, &GridSpec::uniform(21, 241, DomainBox::cube(1, 3.0))).unwrap();
        let points: Vec<(f64, Vec<f64>)> = [0.0, 0.3, 0.6]
            .iter()
            .flat_map(|&t| [-1.5, -0.5, 0.0, 1.0, 2.0].map(|x| (t, vec![x])))
            .collect();
        let res = viscosity_residuals(&grid, &model, &points, &ResidualOptions::default()).unwrap();
        for r in &res {
            assert_eq!(r.kind, ResidualKind::Smooth);
            assert!(r.passes(5e-2), "{r:?}");
        }
        let term = viscosity_residuals(&grid, &model, &[(1.0, vec![0.7])], &ResidualOptions::default()).unwrap();
        assert_eq!(term[0].kind, ResidualKind::Terminal);
        assert_eq!(term[0].sub_residual, Some(0.0));
    }

    #[test]
    fn closed_form_kink_fails_subsolution_test() {
        // The closed-form value is concave-kinked at x = 1: superjet members
        // with p strictly inside the one-sided slopes give ϙ + min G < 0.
        let fx = example_5_2();
        let xs: Vec<f64> = (0..=2400).map(|k| -1.0 + 0.0025 * k as f64).collect();
        let ts: Vec<f64> = (0..=200).map(|k| 0.005 * k as f64).collect();
        let grid = ValueGrid::from_fn(ts, vec![xs], |t, x| example_5_2_value(t, x[0], 1.0)).unwrap();
        let model = fx.model();
        let res = viscosity_residuals(&grid, model, &[(0.5, vec![1.0])], &ResidualOptions::default()).unwrap();
        let r = &res[0];
        assert_eq!(r.kind, ResidualKind::Kink);
        assert!(r.superjet_members > 0);
        assert_eq!(r.subjet_members, 0);
        assert!(r.sub_residual.unwrap() < -1e-2, "{r:?}");
        assert!(!r.passes(1e-3));

        // the endpoint candidate p = 1/2, P = −1/2 is a member with 0 + min G = 0
        let v = test_parabolic_jet(&fx, 0.5, &[1.0], 0.0, &[0.5], &[-0.5], Side::Super, &JetOptions::default()).unwrap();
        assert!(v.is_member());
        assert!(min_g(model, 0.5, &[1.0], &[0.5], &[-0.5]).abs() < 1e-15);
    }

    #[test]
    fn boundary_points_rejected() {
        let model = example_5_1().model().clone();
        let grid = solve_hjb(&model, &GridSpec::uniform(3, 21, DomainBox::cube(1, 1.0))).unwrap();
        assert!(viscosity_residuals(&grid, &model, &[(0.0, vec![1.0])], &ResidualOptions::default()).is_err());
    }
}
