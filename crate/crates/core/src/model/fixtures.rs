//! The two closed-form scalar examples (U = {0, 1}, h = arctan) used as
//! reference fixtures throughout the test suites.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::{Coefficients, CoefficientDerivatives, ControlSet, DeclaredBounds, ModelConfig, ProblemModel};
use crate::error::{Error, Result};
use crate::model::CoefficientConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureId {
    /// dX = u dW, f = u², h = arctan; V(t, x) = arctan x.
    Example51,
    /// dX = X u dW, f = 0, h = arctan, μ = 2.
    Example52,
}

impl FixtureId {
    pub fn builtin_name(self) -> &'static str {
        match self {
            FixtureId::Example51 => "example-5.1",
            FixtureId::Example52 => "example-5.2",
        }
    }

    pub fn load(self) -> ClosedFormExample {
        match self {
            FixtureId::Example51 => example_5_1(),
            FixtureId::Example52 => example_5_2(),
        }
    }
}

impl FromStr for FixtureId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "5.1" | "example-5.1" => Ok(FixtureId::Example51),
            "5.2" | "example-5.2" => Ok(FixtureId::Example52),
            other => Err(Error::UnknownFixture(other.to_string())),
        }
    }
}

impl fmt::Display for FixtureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FixtureId::Example51 => "5.1",
            FixtureId::Example52 => "5.2",
        })
    }
}

/// Adjoint values at one time: first-order pair (p, q) and second-order
/// pair (P, Q), with P and Q stored n×n row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointValues {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub big_p: Vec<f64>,
    pub big_q: Vec<f64>,
}

/// One spatial jet set of the form `[p_lo, p_hi] × [bound, ∞)` (super) or
/// `[p_lo, p_hi] × (−∞, bound]` (sub), scalar state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialJetSet {
    pub p_lo: f64,
    pub p_hi: f64,
    pub second_order_bound: f64,
}

/// Closed-form jet sets at a point. `None` for a spatial set means empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetSetDescriptor {
    pub x_super: Option<SpatialJetSet>,
    pub x_sub: Option<SpatialJetSet>,
    /// D_{t+}^{1,+} = [t_super_min, ∞)
    pub t_super_min: f64,
    /// D_{t+}^{1,-} = (−∞, t_sub_max]
    pub t_sub_max: f64,
}

type ValueFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type FeedbackFn = Arc<dyn Fn(f64, &[f64]) -> usize + Send + Sync>;
type JetFn = Arc<dyn Fn(f64, &[f64]) -> Option<JetSetDescriptor> + Send + Sync>;

#[derive(Clone)]
pub struct ClosedFormExample {
    id: FixtureId,
    model: ProblemModel,
    initial_state: Vec<f64>,
    value_fn: ValueFn,
    optimal_control: FeedbackFn,
    jet_sets: JetFn,
    derivatives: CoefficientDerivatives,
}

impl fmt::Debug for ClosedFormExample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosedFormExample")
            .field("id", &self.id)
            .field("model", &self.model)
            .field("initial_state", &self.initial_state)
            .finish_non_exhaustive()
    }
}

impl ClosedFormExample {
    pub fn id(&self) -> FixtureId {
        self.id
    }

    pub fn model(&self) -> &ProblemModel {
        &self.model
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    pub fn derivatives(&self) -> &CoefficientDerivatives {
        &self.derivatives
    }

    pub fn value(&self, s: f64, x: &[f64]) -> f64 {
        (self.value_fn)(s, x)
    }

    pub fn value_fn(&self) -> ValueFn {
        self.value_fn.clone()
    }

    /// Index into the control set.
    pub fn optimal_control(&self, s: f64, x: &[f64]) -> usize {
        (self.optimal_control)(s, x)
    }

    pub fn optimal_feedback(&self) -> FeedbackFn {
        self.optimal_control.clone()
    }

    /// X̄(s); both fixtures have ū ≡ 0 from their initial state, so the
    /// optimal trajectory is constant.
    pub fn optimal_state(&self, _s: f64) -> Vec<f64> {
        self.initial_state.clone()
    }

    /// (p(s), q(s), P(s), Q(s)) along the optimal trajectory.
    pub fn adjoint(&self, _s: f64) -> AdjointValues {
        let x0 = self.initial_state[0];
        let w = 1.0 + x0 * x0;
        AdjointValues {
            p: vec![1.0 / w],
            q: vec![0.0],
            big_p: vec![-2.0 * x0 / (w * w)],
            big_q: vec![0.0],
        }
    }

    pub fn adjoint_first(&self, s: f64) -> (f64, f64) {
        let a = self.adjoint(s);
        (a.p[0], a.q[0])
    }

    pub fn adjoint_second(&self, s: f64) -> (f64, f64) {
        let a = self.adjoint(s);
        (a.big_p[0], a.big_q[0])
    }

    pub fn jet_sets(&self, s: f64, x: &[f64]) -> Option<JetSetDescriptor> {
        (self.jet_sets)(s, x)
    }

    /// Moves the reference trajectory's starting point. Example 5.2 only has
    /// closed-form adjoints on the ū = 0 region x ≤ 1.
    pub fn with_initial_state(&self, x0: f64) -> Result<Self> {
        if !x0.is_finite() {
            return Err(Error::InvalidArgument("initial state must be finite".into()));
        }
        if self.id == FixtureId::Example52 && x0 > 1.0 {
            return Err(Error::InvalidArgument(
                "example 5.2 closed-form adjoints are only available for x0 <= 1".into(),
            ));
        }
        let mut out = self.clone();
        out.initial_state = vec![x0];
        Ok(out)
    }

    pub fn with_model(&self, model: ProblemModel) -> Self {
        let mut out = self.clone();
        out.model = model;
        out
    }
}

fn arctan_jets(x: f64) -> JetSetDescriptor {
    let w = 1.0 + x * x;
    let p = 1.0 / w;
    let hess = -2.0 * x / (w * w);
    let set = SpatialJetSet {
        p_lo: p,
        p_hi: p,
        second_order_bound: hess,
    };
    JetSetDescriptor {
        x_super: Some(set),
        x_sub: Some(set),
        t_super_min: 0.0,
        t_sub_max: 0.0,
    }
}

pub(crate) fn builtin_coefficients(name: &str) -> Result<Coefficients> {
    let terminal = Arc::new(|x: &[f64]| x[0].atan());
    let zero = Arc::new(|_: f64, _: &[f64], _: &[f64], out: &mut [f64]| out[0] = 0.0);
    match name {
        "example-5.1" => Ok(Coefficients {
            drift: zero,
            diffusion: Arc::new(|_, _, u, out| out[0] = u[0]),
            running_cost: Arc::new(|_, _, u| u[0] * u[0]),
            terminal_cost: terminal,
        }),
        "example-5.2" => Ok(Coefficients {
            drift: zero,
            diffusion: Arc::new(|_, x, u, out| out[0] = x[0] * u[0]),
            running_cost: Arc::new(|_, _, _| 0.0),
            terminal_cost: terminal,
        }),
        other => Err(Error::UnknownFixture(other.to_string())),
    }
}

fn builtin_model(id: FixtureId, risk: f64, bounds: DeclaredBounds) -> Result<ProblemModel> {
    let cfg = ModelConfig {
        name: Some(id.builtin_name().to_string()),
        state_dim: 1,
        risk,
        horizon: [0.0, 1.0],
        controls: vec![vec![0.0], vec![1.0]],
        domain: None,
        bounds: Some(bounds),
        coefficients: CoefficientConfig::Builtin {
            name: id.builtin_name().to_string(),
        },
    };
    debug_assert!(ControlSet::new(cfg.controls.clone()).is_ok());
    cfg.build()
}

fn arctan_derivatives(diffusion_x: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> CoefficientDerivatives {
    CoefficientDerivatives {
        drift_x: Some(Arc::new(|_, _, _, out| out[0] = 0.0)),
        diffusion_x: Some(Arc::new(move |_, x, u, out| out[0] = diffusion_x(x, u))),
        running_x: Some(Arc::new(|_, _, _, out| out[0] = 0.0)),
        terminal_x: Some(Arc::new(|x, out| out[0] = 1.0 / (1.0 + x[0] * x[0]))),
        drift_xx: Some(Arc::new(|_, _, _, out| out[0] = 0.0)),
        diffusion_xx: Some(Arc::new(|_, _, _, out| out[0] = 0.0)),
        running_xx: Some(Arc::new(|_, _, _, out| out[0] = 0.0)),
        terminal_xx: Some(Arc::new(|x, out| {
            let w = 1.0 + x[0] * x[0];
            out[0] = -2.0 * x[0] / (w * w);
        })),
    }
}

/// Example 5.1 with μ = 1 and initial state x₀ = 1.
pub fn example_5_1() -> ClosedFormExample {
    example_5_1_with_risk(1.0).expect("μ = 1 is admissible")
}

/// Example 5.1 with a chosen μ; rejects μ < 1, the regime in which the
/// closed form is established.
pub fn example_5_1_with_risk(risk: f64) -> Result<ClosedFormExample> {
    if !(risk >= 1.0) {
        return Err(Error::InvalidModel(format!(
            "example 5.1 requires risk parameter >= 1, got {risk}"
        )));
    }
    let bounds = DeclaredBounds {
        lipschitz_dynamics: Some(1.0),
        lipschitz_costs: Some(1.0),
        sup_running: Some(1.0),
        sup_terminal: Some(PI / 2.0),
    };
    Ok(ClosedFormExample {
        id: FixtureId::Example51,
        model: builtin_model(FixtureId::Example51, risk, bounds)?,
        initial_state: vec![1.0],
        value_fn: Arc::new(|_, x| x[0].atan()),
        optimal_control: Arc::new(|_, _| 0),
        jet_sets: Arc::new(|_, x| Some(arctan_jets(x[0]))),
        derivatives: arctan_derivatives(|_, _| 0.0),
    })
}

/// V(t, x) of Example 5.2: arctan x for x ≤ 1, otherwise
/// x·e^{m(t−T)} / (x − 1 + e^{m(t−T)}) · arctan x with
/// m = x³ / ((1 + x²)² arctan x).
pub fn example_5_2_value(t: f64, x: f64, terminal_time: f64) -> f64 {
    if x <= 1.0 {
        return x.atan();
    }
    let at = x.atan();
    let w = 1.0 + x * x;
    let m = x.powi(3) / (w * w * at);
    let e = (m * (t - terminal_time)).exp();
    x * e / (x - 1.0 + e) * at
}

/// Example 5.2 with μ = 2 and initial state x₀ = 1.
pub fn example_5_2() -> ClosedFormExample {
    let bounds = DeclaredBounds {
        lipschitz_dynamics: Some(1.0),
        lipschitz_costs: Some(1.0),
        sup_running: Some(0.0),
        sup_terminal: Some(PI / 2.0),
    };
    let model = builtin_model(FixtureId::Example52, 2.0, bounds).expect("builtin example 5.2");
    let terminal_time = model.horizon().end;
    ClosedFormExample {
        id: FixtureId::Example52,
        model,
        initial_state: vec![1.0],
        value_fn: Arc::new(move |t, x| example_5_2_value(t, x[0], terminal_time)),
        optimal_control: Arc::new(|_, x| usize::from(x[0] > 1.0)),
        jet_sets: Arc::new(move |s, x| {
            let x = x[0];
            if (x - 1.0).abs() <= 1e-12 {
                let p_lo = 0.5 + PI / 4.0 * (1.0 - ((terminal_time - s) / PI).exp());
                Some(JetSetDescriptor {
                    x_super: Some(SpatialJetSet {
                        p_lo,
                        p_hi: 0.5,
                        second_order_bound: -0.5,
                    }),
                    x_sub: None,
                    t_super_min: 0.0,
                    t_sub_max: 0.0,
                })
            } else if x < 1.0 {
                Some(arctan_jets(x))
            } else {
                None
            }
        }),
        derivatives: arctan_derivatives(|_, u| u[0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn example_5_1_values() {
        let fx = example_5_1();
        assert!((fx.value(0.3, &[1.0]) - FRAC_PI_4).abs() < 1e-15);
        assert_eq!(fx.model().risk(), 1.0);
        let at0 = fx.with_initial_state(0.0).unwrap();
        assert_eq!(at0.adjoint_first(0.5), (1.0, 0.0));
        assert_eq!(fx.adjoint_second(0.5), (-0.5, 0.0));
        assert!(example_5_1_with_risk(0.5).is_err());
        assert_eq!(example_5_1_with_risk(3.0).unwrap().model().risk(), 3.0);
    }

    #[test]
    fn example_5_2_values() {
        let fx = example_5_2();
        assert!((fx.value(1.0, &[2.0]) - 2f64.atan()).abs() < 1e-15);
        assert!((fx.value(0.0, &[0.5]) - 0.5f64.atan()).abs() < 1e-15);
        assert_eq!(fx.adjoint_first(0.0), (0.5, 0.0));
        assert_eq!(fx.adjoint_second(0.0), (-0.5, 0.0));
        assert_eq!(fx.optimal_control(0.0, &[1.0]), 0);
        assert_eq!(fx.model().risk(), 2.0);
        assert!(fx.with_initial_state(1.5).is_err());
    }

    #[test]
    fn terminal_slice_equals_h() {
        for fx in [example_5_1(), example_5_2()] {
            let t_end = fx.model().horizon().end;
            for k in 0..=400 {
                let x = [-6.0 + 0.03 * k as f64];
                assert!((fx.value(t_end, &x) - fx.model().terminal_cost(&x)).abs() <= 1e-12);
                let u = fx.optimal_control(0.2, &x);
                assert!(u < fx.model().controls().len());
            }
        }
    }

    #[test]
    fn example_5_2_continuous_across_kink() {
        let fx = example_5_2();
        for k in 0..=10 {
            let t = 0.1 * k as f64;
            let left = fx.value(t, &[1.0 - 1e-6]);
            let right = fx.value(t, &[1.0 + 1e-6]);
            assert!((left - right).abs() <= 1e-5, "t={t}: {left} vs {right}");
            let at = fx.value(t, &[1.0]);
            let just_right = fx.value(t, &[1.0 + 1e-12]);
            assert!((at - just_right).abs() <= 1e-9);
        }
    }

    #[test]
    fn example_5_2_superjet_interval_matches_one_sided_slopes() {
        let fx = example_5_2();
        let s = 0.5;
        let jets = fx.jet_sets(s, &[1.0]).unwrap();
        let h = 1e-7;
        let right = (fx.value(s, &[1.0 + h]) - fx.value(s, &[1.0])) / h;
        let left = (fx.value(s, &[1.0]) - fx.value(s, &[1.0 - h])) / h;
        let sup = jets.x_super.unwrap();
        assert!((sup.p_lo - right).abs() < 1e-5, "{} vs {right}", sup.p_lo);
        assert!((sup.p_hi - left).abs() < 1e-5);
        assert!(jets.x_sub.is_none());
    }

    #[test]
    fn fixture_ids_parse() {
        assert_eq!("5.1".parse::<FixtureId>().unwrap(), FixtureId::Example51);
        assert_eq!("example-5.2".parse::<FixtureId>().unwrap(), FixtureId::Example52);
        assert!("5.3".parse::<FixtureId>().is_err());
    }
}
