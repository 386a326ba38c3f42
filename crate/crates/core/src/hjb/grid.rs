use std::sync::Arc;

use serde::Serialize;

use super::{Layout, SchemeMeta};
use crate::error::{Error, Result};
use crate::montecarlo::Policy;

/// Value samples `V(t_i, x_j)` on a tensor grid.
///
/// `values` and `policy` are `n_t × Π n_x`, time-major, with the spatial
/// index row-major (last axis fastest). `policy` holds control-set indices
/// and is empty for grids tabulated from a function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueGrid {
    pub t_nodes: Vec<f64>,
    pub x_nodes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    pub meta: SchemeMeta,
}

impl ValueGrid {
    pub(crate) fn from_parts(
        t_nodes: Vec<f64>,
        x_nodes: Vec<Vec<f64>>,
        values: Vec<f64>,
        policy: Vec<usize>,
        meta: SchemeMeta,
    ) -> Self {
        Self {
            t_nodes,
            x_nodes,
            values,
            policy,
            meta,
        }
    }

    /// Tabulates `f(t, x)` on uniform axes. Useful for running the grid-based
    /// diagnostics on a closed-form value function.
    pub fn from_fn(t_nodes: Vec<f64>, x_nodes: Vec<Vec<f64>>, f: impl Fn(f64, &[f64]) -> f64) -> Result<Self> {
        if t_nodes.len() < 2 || t_nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("t_nodes must be increasing with at least 2 entries".into()));
        }
        let mut dx = Vec::with_capacity(x_nodes.len());
        for axis in &x_nodes {
            if axis.len() < 3 {
                return Err(Error::InvalidArgument("every axis needs at least 3 nodes".into()));
            }
            let h = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
            let uniform = axis
                .iter()
                .enumerate()
                .all(|(k, v)| (v - (axis[0] + k as f64 * h)).abs() <= 1e-9 * (1.0 + v.abs()));
            if !(h > 0.0) || !uniform {
                return Err(Error::InvalidArgument("spatial axes must be uniform and increasing".into()));
            }
            dx.push(h);
        }
        let layout = Layout::new(
            x_nodes.iter().map(Vec::len).collect(),
            x_nodes.iter().map(|a| a[0]).collect(),
            dx.clone(),
        );
        let total = layout.len();
        let mut values = Vec::with_capacity(t_nodes.len() * total);
        let mut x = vec![0.0; x_nodes.len()];
        for &t in &t_nodes {
            for j in 0..total {
                layout.coords(j, &mut x);
                values.push(f(t, &x));
            }
        }
        let meta = SchemeMeta {
            scheme: "tabulated".into(),
            boundary: None,
            dt: 0.0,
            dx,
            substeps: 0,
            cfl_ratio: 0.0,
            gradient_monotone: true,
            artificial_viscosity: false,
            uniqueness_guaranteed: false,
            note: None,
        };
        Ok(Self::from_parts(t_nodes, x_nodes, values, Vec::new(), meta))
    }

    pub(crate) fn layout(&self) -> Layout {
        let dx = self
            .x_nodes
            .iter()
            .map(|a| (a[a.len() - 1] - a[0]) / (a.len() - 1) as f64)
            .collect();
        Layout::new(
            self.x_nodes.iter().map(Vec::len).collect(),
            self.x_nodes.iter().map(|a| a[0]).collect(),
            dx,
        )
    }

    pub fn dim(&self) -> usize {
        self.x_nodes.len()
    }

    /// Number of spatial nodes per snapshot.
    pub fn n_space(&self) -> usize {
        self.x_nodes.iter().map(Vec::len).product()
    }

    /// `V(t_i, ·)` as a flat row-major slice.
    pub fn snapshot(&self, i: usize) -> &[f64] {
        let m = self.n_space();
        &self.values[i * m..(i + 1) * m]
    }

    /// `V(t_i, node j)` with `j` a flat spatial index.
    pub fn value_at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_space() + j]
    }

    /// Smallest spatial step and the largest snapshot spacing.
    pub fn resolution(&self) -> (f64, f64) {
        let dx = self.layout().dx.iter().copied().fold(f64::INFINITY, f64::min);
        let dt = self.t_nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        (dx, dt)
    }

    /// Linear in t, multilinear in x. NaN outside the grid.
    pub fn interpolate(&self, t: f64, x: &[f64]) -> f64 {
        let nt = self.t_nodes.len();
        let (t0, t1) = (self.t_nodes[0], self.t_nodes[nt - 1]);
        if x.len() != self.dim() || !(t >= t0 - 1e-12 && t <= t1 + 1e-12) {
            return f64::NAN;
        }
        let i = match self.t_nodes.partition_point(|&v| v <= t) {
            0 => 0,
            k => (k - 1).min(nt - 2),
        };
        let wt = ((t - self.t_nodes[i]) / (self.t_nodes[i + 1] - self.t_nodes[i])).clamp(0.0, 1.0);
        let a = self.interpolate_space(i, x);
        if wt == 0.0 {
            return a;
        }
        let b = self.interpolate_space(i + 1, x);
        if wt == 1.0 {
            return b;
        }
        (1.0 - wt) * a + wt * b
    }

    fn interpolate_space(&self, i: usize, x: &[f64]) -> f64 {
        let layout = self.layout();
        let n = self.dim();
        let mut base = 0usize;
        let mut frac = vec![0.0; n];
        for a in 0..n {
            let pos = (x[a] - layout.lower[a]) / layout.dx[a];
            let last = layout.n[a] - 1;
            if !(pos >= -1e-9 && pos <= last as f64 + 1e-9) {
                return f64::NAN;
            }
            let k = (pos.floor().max(0.0) as usize).min(last - 1);
            frac[a] = (pos - k as f64).clamp(0.0, 1.0);
            base += k * layout.strides[a];
        }
        let snap = self.snapshot(i);
        let mut out = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut j = base;
            for a in 0..n {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    j += layout.strides[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                out += w * snap[j];
            }
        }
        out
    }

    /// Recorded argmin control at the node nearest to `(t, x)`.
    pub fn policy_at(&self, t: f64, x: &[f64]) -> Option<usize> {
        if self.policy.is_empty() {
            return None;
        }
        let i = nearest(&self.t_nodes, t);
        let layout = self.layout();
        let mut j = 0;
        for a in 0..self.dim() {
            j += nearest(&self.x_nodes[a], x[a]) * layout.strides[a];
        }
        Some(self.policy[i * self.n_space() + j])
    }

    /// The recorded policy as a feedback law for simulation.
    pub fn feedback_policy(&self) -> Result<Policy> {
        if self.policy.is_empty() {
            return Err(Error::InvalidArgument("grid carries no policy".into()));
        }
        let grid = Arc::new(self.clone());
        Ok(Policy::feedback(move |t, x| grid.policy_at(t, x).unwrap_or(0)))
    }

    /// `max |V − f|` over all snapshots and the nodes that are at least
    /// `margin` × (box width) away from every face.
    pub fn max_interior_error(&self, f: impl Fn(f64, &[f64]) -> f64, margin: f64) -> f64 {
        let layout = self.layout();
        let n = self.dim();
        let mut x = vec![0.0; n];
        let mut worst: f64 = 0.0;
        for j in 0..layout.len() {
            layout.coords(j, &mut x);
            let inside = (0..n).all(|a| {
                let axis = &self.x_nodes[a];
                let (lo, hi) = (axis[0], axis[axis.len() - 1]);
                let pad = margin * (hi - lo) - 1e-12;
                x[a] >= lo + pad && x[a] <= hi - pad
            });
            if !inside {
                continue;
            }
            for (i, &t) in self.t_nodes.iter().enumerate() {
                let e = (self.value_at(i, j) - f(t, &x)).abs();
                if !(e <= worst) {
                    worst = e;
                }
            }
        }
        worst
    }
}

pub(crate) fn nearest(axis: &[f64], v: f64) -> usize {
    let k = axis.partition_point(|&a| a < v);
    if k == 0 {
        0
    } else if k == axis.len() {
        axis.len() - 1
    } else if (v - axis[k - 1]) <= (axis[k] - v) {
        k - 1
    } else {
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane() -> ValueGrid {
        let xs: Vec<f64> = (0..11).map(|k| -1.0 + 0.2 * k as f64).collect();
        ValueGrid::from_fn(vec![0.0, 0.5, 1.0], vec![xs.clone(), xs], |t, x| 1.0 + 2.0 * t + x[0] - 3.0 * x[1]).unwrap()
    }

    #[test]
    fn interpolation_reproduces_affine_functions() {
        let g = plane();
        for (t, x) in [(0.3, [0.13, -0.77]), (1.0, [1.0, 1.0]), (0.0, [-1.0, 0.45])] {
            let exact = 1.0 + 2.0 * t + x[0] - 3.0 * x[1];
            assert!((g.interpolate(t, &x) - exact).abs() < 1e-12);
        }
        assert!(g.interpolate(0.5, &[1.2, 0.0]).is_nan());
        assert!(g.interpolate(1.5, &[0.0, 0.0]).is_nan());
    }

    #[test]
    fn nearest_node_lookup() {
        let axis = [0.0, 1.0, 2.0];
        assert_eq!(nearest(&axis, -3.0), 0);
        assert_eq!(nearest(&axis, 1.4), 1);
        assert_eq!(nearest(&axis, 1.6), 2);
        assert_eq!(nearest(&axis, 9.0), 2);
    }

    #[test]
    fn from_fn_rejects_ragged_axes() {
        assert!(ValueGrid::from_fn(vec![0.0, 1.0], vec![vec![0.0, 0.1, 0.5]], |_, _| 0.0).is_err());
        assert!(ValueGrid::from_fn(vec![0.0], vec![vec![0.0, 0.1, 0.2]], |_, _| 0.0).is_err());
    }

    #[test]
    fn tabulated_grid_has_no_policy() {
        let g = plane();
        assert!(g.policy_at(0.0, &[0.0, 0.0]).is_none());
        assert!(g.feedback_policy().is_err());
    }
}
