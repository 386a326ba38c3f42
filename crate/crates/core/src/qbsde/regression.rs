use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHUNK: usize = 4096;
const RANK_TOL: f64 = 1e-10;
pub const WINSOR: f64 = 5.0;

/// Tensor polynomials of total degree ≤ `degree` in the standardized state,
/// fitted by least squares with a ridge penalty on the non-constant terms.
/// Standardized coordinates are winsorized at ±[`WINSOR`], so the basis is
/// flat beyond five standard deviations instead of extrapolating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolynomialBasis {
    pub degree: usize,
    pub ridge: f64,
}

impl Default for PolynomialBasis {
    fn default() -> Self {
        Self {
            degree: 3,
            ridge: 1e-8,
        }
    }
}

/// Row-major design matrix, `rows × cols`.
pub(crate) struct Features {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

fn exponents(active: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; active]];
    for d in 1..=degree {
        let mut current = vec![0; active];
        push_with_total(&mut out, &mut current, 0, d);
    }
    out
}

fn push_with_total(out: &mut Vec<Vec<usize>>, current: &mut Vec<usize>, axis: usize, remaining: usize) {
    if axis + 1 == current.len() {
        current[axis] = remaining;
        out.push(current.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        current[axis] = e;
        push_with_total(out, current, axis + 1, remaining - e);
    }
}

impl PolynomialBasis {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidArgument("ridge must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Design matrix for `rows` points of dimension `n` read through `point`.
    /// Axes with (numerically) zero spread are dropped, so a deterministic
    /// state reduces the fit to a sample mean.
    pub(crate) fn features<'a>(&self, rows: usize, n: usize, point: impl Fn(usize) -> &'a [f64] + Sync) -> Features {
        let mut mean = vec![0.0; n];
        for r in 0..rows {
            for (m, v) in mean.iter_mut().zip(point(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; n];
        for r in 0..rows {
            for ((s, v), m) in var.iter_mut().zip(point(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut active = Vec::new();
        let mut scale = Vec::new();
        for i in 0..n {
            let sd = (var[i] / rows as f64).sqrt();
            if sd > 1e-12 * (1.0 + mean[i].abs()) {
                active.push(i);
                scale.push(sd);
            }
        }
        let exps = if active.is_empty() {
            vec![vec![]]
        } else {
            exponents(active.len(), self.degree)
        };
        let cols = exps.len();
        let mut data = vec![0.0; rows * cols];
        data.par_chunks_mut(cols).enumerate().for_each(|(r, row)| {
            let x = point(r);
            let z: Vec<f64> = active
                .iter()
                .zip(&scale)
                .map(|(&i, sd)| ((x[i] - mean[i]) / sd).clamp(-WINSOR, WINSOR))
                .collect();
            for (c, e) in exps.iter().enumerate() {
                row[c] = e.iter().zip(&z).map(|(&p, v)| v.powi(p as i32)).product();
            }
        });
        Features { rows, cols, data }
    }
}

/// Factored normal equations for one design matrix, reusable across targets.
pub(crate) struct Regression<'a> {
    features: &'a Features,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl<'a> Regression<'a> {
    pub fn new(features: &'a Features, ridge: f64, step: usize) -> Result<Self> {
        let cols = features.cols;
        let n = features.rows as f64;
        let partials: Vec<Vec<f64>> = features
            .data
            .par_chunks(CHUNK * cols)
            .map(|chunk| {
                let mut g = vec![0.0; cols * cols];
                for row in chunk.chunks(cols) {
                    for i in 0..cols {
                        for j in i..cols {
                            g[i * cols + j] += row[i] * row[j];
                        }
                    }
                }
                g
            })
            .collect();
        let mut gram = DMatrix::<f64>::zeros(cols, cols);
        for g in &partials {
            for i in 0..cols {
                for j in i..cols {
                    gram[(i, j)] += g[i * cols + j];
                }
            }
        }
        for i in 0..cols {
            for j in i..cols {
                gram[(i, j)] /= n;
                gram[(j, i)] = gram[(i, j)];
            }
        }
        let eig = gram.clone().symmetric_eigenvalues();
        let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        if !(max > 0.0) || min <= RANK_TOL * max {
            return Err(Error::RankDeficient { step });
        }
        // column 0 is the constant
        for i in 1..cols {
            gram[(i, i)] += ridge;
        }
        let chol = gram.cholesky().ok_or(Error::RankDeficient { step })?;
        Ok(Self { features, chol })
    }

    pub fn coefficients(&self, target: &[f64]) -> DVector<f64> {
        let cols = self.features.cols;
        let partials: Vec<Vec<f64>> = self
            .features
            .data
            .par_chunks(CHUNK * cols)
            .zip(target.par_chunks(CHUNK))
            .map(|(chunk, t)| {
                let mut r = vec![0.0; cols];
                for (row, y) in chunk.chunks(cols).zip(t) {
                    for i in 0..cols {
                        r[i] += row[i] * y;
                    }
                }
                r
            })
            .collect();
        let mut rhs = DVector::<f64>::zeros(cols);
        for r in &partials {
            for i in 0..cols {
                rhs[i] += r[i];
            }
        }
        rhs /= self.features.rows as f64;
        self.chol.solve(&rhs)
    }

    /// Fitted values of `target` at every row.
    pub fn fit(&self, target: &[f64]) -> Vec<f64> {
        let beta = self.coefficients(target);
        let cols = self.features.cols;
        self.features
            .data
            .par_chunks(cols)
            .map(|row| row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_sets_have_binomial_size() {
        assert_eq!(exponents(1, 3).len(), 4);
        assert_eq!(exponents(2, 3).len(), 10);
        assert_eq!(exponents(3, 2).len(), 10);
    }

    #[test]
    fn cubic_targets_are_reproduced() {
        let pts: Vec<[f64; 1]> = (0..500).map(|i| [-2.0 + 4.0 * i as f64 / 499.0]).collect();
        let basis = PolynomialBasis { degree: 3, ridge: 0.0 };
        let feats = basis.features(pts.len(), 1, |r| &pts[r][..]);
        let reg = Regression::new(&feats, 0.0, 0).unwrap();
        let target: Vec<f64> = pts.iter().map(|p| 1.0 - p[0] + 0.5 * p[0].powi(3)).collect();
        let fit = reg.fit(&target);
        for (a, b) in fit.iter().zip(&target) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_state_reduces_to_mean() {
        let pts = [[1.5]; 10];
        let feats = PolynomialBasis::default().features(10, 1, |r| &pts[r][..]);
        assert_eq!(feats.cols, 1);
        let reg = Regression::new(&feats, 0.0, 0).unwrap();
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(reg.fit(&t).iter().all(|v| (v - 4.5).abs() < 1e-12));
    }

    #[test]
    fn two_point_support_is_rank_deficient() {
        let pts: Vec<[f64; 1]> = (0..100).map(|i| [(i % 2) as f64]).collect();
        let feats = PolynomialBasis::default().features(100, 1, |r| &pts[r][..]);
        assert!(matches!(Regression::new(&feats, 1e-8, 7), Err(Error::RankDeficient { step: 7 })));
    }
}
