//! Sampling spot-checks of the Lipschitz and boundedness assumptions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ProblemModel;

const LIPSCHITZ_SLACK: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

/// Sample achieving the worst observed ratio or value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub s: f64,
    pub x: Vec<f64>,
    /// Second point of the pair for Lipschitz checks.
    pub x_other: Option<Vec<f64>>,
    pub u: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    /// Largest ratio (Lipschitz checks) or |value| (bound checks) seen.
    pub observed: f64,
    /// Threshold compared against, if a bound was declared.
    pub threshold: Option<f64>,
    pub status: CheckStatus,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub seed: u64,
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// No check failed (skipped checks count as passing).
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }
}

struct Tracker {
    name: &'static str,
    worst: f64,
    witness: Option<Witness>,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            worst: 0.0,
            witness: None,
        }
    }

    fn observe(&mut self, value: f64, witness: impl FnOnce() -> Witness) {
        // a NaN sample is kept as the worst case
        if self.worst.is_nan() {
            return;
        }
        if value.is_nan() || value > self.worst || self.witness.is_none() {
            self.worst = value;
            self.witness = Some(witness());
        }
    }

    fn finish(self, threshold: Option<f64>) -> AssumptionCheck {
        let status = match threshold {
            None => CheckStatus::Skipped,
            Some(t) if self.worst <= t * (1.0 + 1e-12) + 1e-12 => CheckStatus::Pass,
            Some(_) => CheckStatus::Fail,
        };
        AssumptionCheck {
            name: self.name,
            observed: self.worst,
            threshold,
            status,
            witness: self.witness,
        }
    }
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Samples `samples` random pairs `(x₁, x₂)` in the model's domain box
/// (half of them close together, half independent), a random time and a
/// random control, and records the worst Lipschitz ratios of b, σ, f, h and
/// the largest |f|, |h|. Purely diagnostic.
pub fn validate_assumptions(model: &ProblemModel, samples: usize, seed: u64) -> AssumptionReport {
    let n = model.state_dim();
    let domain = model.domain();
    let horizon = model.horizon();
    let bounds = model.bounds().copied().unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut b_lip = Tracker::new("b-lipschitz");
    let mut sigma_lip = Tracker::new("sigma-lipschitz");
    let mut f_lip = Tracker::new("f-lipschitz");
    let mut h_lip = Tracker::new("h-lipschitz");
    let mut f_sup = Tracker::new("f-bounded");
    let mut h_sup = Tracker::new("h-bounded");

    let mut b1 = vec![0.0; n];
    let mut b2 = vec![0.0; n];
    let mut sig1 = vec![0.0; n];
    let mut sig2 = vec![0.0; n];

    for k in 0..samples.max(1) {
        let s = rng.gen_range(horizon.start..=horizon.end);
        let u = model.controls().point(rng.gen_range(0..model.controls().len())).to_vec();
        let x1: Vec<f64> = (0..n).map(|i| rng.gen_range(domain.lower[i]..=domain.upper[i])).collect();
        let x2: Vec<f64> = if k % 2 == 0 {
            (0..n)
                .map(|i| {
                    let step = 1e-3 * domain.width(i) * rng.gen_range(-1.0..=1.0);
                    (x1[i] + step).clamp(domain.lower[i], domain.upper[i])
                })
                .collect()
        } else {
            (0..n).map(|i| rng.gen_range(domain.lower[i]..=domain.upper[i])).collect()
        };
        let dist = norm_diff(&x1, &x2);
        let pair = |value: f64| Witness {
            s,
            x: x1.clone(),
            x_other: Some(x2.clone()),
            u: u.clone(),
            value,
        };

        if dist > 0.0 {
            model.drift(s, &x1, &u, &mut b1);
            model.drift(s, &x2, &u, &mut b2);
            let r = norm_diff(&b1, &b2) / dist;
            b_lip.observe(r, || pair(r));

            model.diffusion(s, &x1, &u, &mut sig1);
            model.diffusion(s, &x2, &u, &mut sig2);
            let r = norm_diff(&sig1, &sig2) / dist;
            sigma_lip.observe(r, || pair(r));

            let r = (model.running_cost(s, &x1, &u) - model.running_cost(s, &x2, &u)).abs() / dist;
            f_lip.observe(r, || pair(r));

            let r = (model.terminal_cost(&x1) - model.terminal_cost(&x2)).abs() / dist;
            h_lip.observe(r, || pair(r));
        }

        let fv = model.running_cost(s, &x1, &u).abs();
        f_sup.observe(fv, || Witness {
            s,
            x: x1.clone(),
            x_other: None,
            u: u.clone(),
            value: fv,
        });
        let hv = model.terminal_cost(&x1).abs();
        h_sup.observe(hv, || Witness {
            s: horizon.end,
            x: x1.clone(),
            x_other: None,
            u: Vec::new(),
            value: hv,
        });
    }

    let l1 = bounds.lipschitz_dynamics.map(|l| LIPSCHITZ_SLACK * l);
    let l2 = bounds.lipschitz_costs.map(|l| LIPSCHITZ_SLACK * l);
    AssumptionReport {
        samples,
        seed,
        checks: vec![
            b_lip.finish(l1),
            sigma_lip.finish(l1),
            f_sup.finish(bounds.sup_running),
            h_sup.finish(bounds.sup_terminal),
            f_lip.finish(l2),
            h_lip.finish(l2),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example_5_1, example_5_2, ControlSet, DeclaredBounds, DomainBox};

    #[test]
    fn example_5_1_passes_all_checks() {
        let report = validate_assumptions(example_5_1().model(), 1000, 7);
        assert!(report.all_passed(), "{report:#?}");
        assert!(report.checks.iter().all(|c| c.status == CheckStatus::Pass));
        let h = report.check("h-lipschitz").unwrap();
        assert!(h.observed > 0.9 && h.observed <= 1.0);
    }

    #[test]
    fn quadratic_drift_fails_with_witness() {
        let model = ProblemModel::builder("quadratic", 1)
            .drift(|_, x, _, out| out[0] = x[0] * x[0])
            .controls(ControlSet::scalar(&[0.0]).unwrap())
            .bounds(DeclaredBounds {
                lipschitz_dynamics: Some(1.0),
                ..Default::default()
            })
            .build()
            .unwrap();
        let report = validate_assumptions(&model, 1000, 1);
        let b = report.check("b-lipschitz").unwrap();
        assert_eq!(b.status, CheckStatus::Fail);
        let w = b.witness.as_ref().unwrap();
        let (x1, x2) = (w.x[0], w.x_other.as_ref().unwrap()[0]);
        assert!((x1 * x1 - x2 * x2).abs() / (x1 - x2).abs() > 1.05);
        assert_eq!(report.check("f-bounded").unwrap().status, CheckStatus::Skipped);
    }

    #[test]
    fn example_5_2_on_clipped_domain() {
        let base = example_5_2().model().clone();
        let bounds = DeclaredBounds {
            lipschitz_dynamics: Some(5.0),
            ..*base.bounds().unwrap()
        };
        let model = base.with_domain(DomainBox::cube(1, 5.0)).unwrap().with_bounds(Some(bounds));
        let report = validate_assumptions(&model, 1000, 3);
        let sigma = report.check("sigma-lipschitz").unwrap();
        assert_eq!(sigma.status, CheckStatus::Pass);
        // exhaustive oracle: |x1 u - x2 u| / |x1 - x2| = |u| <= 1 on the grid
        let mut worst: f64 = 0.0;
        for i in 0..=100 {
            for j in 0..i {
                let (a, b) = (-5.0 + 0.1 * i as f64, -5.0 + 0.1 * j as f64);
                for u in [0.0, 1.0] {
                    worst = worst.max((a * u - b * u).abs() / (a - b).abs());
                }
            }
        }
        assert!(sigma.observed <= worst + 1e-9);
        assert!(worst <= 5.0);
    }

    #[test]
    fn same_seed_same_report() {
        let m = example_5_2().model().clone();
        assert_eq!(validate_assumptions(&m, 200, 9), validate_assumptions(&m, 200, 9));
    }
}
