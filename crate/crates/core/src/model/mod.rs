//! Control problem definition: coefficients, risk parameter, finite control
//! set, horizon and the truncated spatial domain used by grid solvers.

mod assumptions;
mod config;
mod derivatives;
mod fixtures;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use assumptions::{validate_assumptions, AssumptionCheck, AssumptionReport, CheckStatus, Witness};
pub use config::{CoefficientConfig, ModelConfig};
pub use derivatives::CoefficientDerivatives;
pub use fixtures::{
    example_5_1, example_5_1_with_risk, example_5_2, example_5_2_value, AdjointValues, ClosedFormExample, FixtureId,
    JetSetDescriptor, SpatialJetSet,
};

/// `(s, x, u, out)`: writes an `n`-vector into `out`.
pub type VectorFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(s, x, u) -> value`.
pub type ScalarFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
/// `x -> h(x)`.
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub start: f64,
    pub end: f64,
}

impl Horizon {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start >= 0.0 && start < end && end.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "horizon needs 0 <= t0 < T, got ({start}, {end})"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Axis-aligned box truncating ℝⁿ for grid work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn cube(n: usize, half_width: f64) -> Self {
        Self {
            lower: vec![-half_width; n],
            upper: vec![half_width; n],
        }
    }

    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidModel("domain box needs lower < upper per axis".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }
}

/// Finite control set U ⊂ ℝᵐ. Controls are referred to by index elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ControlSet {
    points: Vec<Vec<f64>>,
}

impl ControlSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidModel("control set must be nonempty".into()));
        }
        let m = points[0].len();
        if m == 0 || points.iter().any(|p| p.len() != m) {
            return Err(Error::InvalidModel("control points must share a positive dimension".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("control points must be finite".into()));
        }
        for (i, a) in points.iter().enumerate() {
            if points[..i].contains(a) {
                return Err(Error::InvalidModel(format!("duplicate control point {a:?}")));
            }
        }
        Ok(Self { points })
    }

    /// Convenience for scalar controls.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|v| vec![*v]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.points[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter().map(|p| p.as_slice())
    }
}

impl TryFrom<Vec<Vec<f64>>> for ControlSet {
    type Error = Error;
    fn try_from(points: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<ControlSet> for Vec<Vec<f64>> {
    fn from(set: ControlSet) -> Self {
        set.points
    }
}

/// Optional constants used by the assumption spot-checks and the
/// sup-norm bound proxy of the backward solvers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DeclaredBounds {
    /// L₁: Lipschitz constant of b and σ in x.
    pub lipschitz_dynamics: Option<f64>,
    /// L₂: Lipschitz constant of f and h in x.
    pub lipschitz_costs: Option<f64>,
    /// ‖f‖∞
    pub sup_running: Option<f64>,
    /// ‖h‖∞
    pub sup_terminal: Option<f64>,
}

#[derive(Clone)]
pub struct Coefficients {
    pub drift: VectorFn,
    pub diffusion: VectorFn,
    pub running_cost: ScalarFn,
    pub terminal_cost: TerminalFn,
}

/// A risk-sensitive control problem. Immutable once built; cloning shares
/// the coefficient closures.
#[derive(Clone)]
pub struct ProblemModel {
    name: String,
    state_dim: usize,
    coefficients: Coefficients,
    risk: f64,
    controls: ControlSet,
    horizon: Horizon,
    bounds: Option<DeclaredBounds>,
    domain: DomainBox,
    config: Option<ModelConfig>,
}

impl fmt::Debug for ProblemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("risk", &self.risk)
            .field("controls", &self.controls)
            .field("horizon", &self.horizon)
            .field("bounds", &self.bounds)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl ProblemModel {
    pub fn builder(name: impl Into<String>, state_dim: usize) -> ModelBuilder {
        ModelBuilder::new(name.into(), state_dim)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.controls.dim()
    }

    /// μ
    pub fn risk(&self) -> f64 {
        self.risk
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn bounds(&self) -> Option<&DeclaredBounds> {
        self.bounds.as_ref()
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }

    /// The declarative config this model was loaded from, if any.
    pub fn config(&self) -> Option<&ModelConfig> {
        self.config.as_ref()
    }

    #[inline]
    pub fn drift(&self, s: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.coefficients.drift)(s, x, u, out)
    }

    #[inline]
    pub fn diffusion(&self, s: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.coefficients.diffusion)(s, x, u, out)
    }

    #[inline]
    pub fn running_cost(&self, s: f64, x: &[f64], u: &[f64]) -> f64 {
        (self.coefficients.running_cost)(s, x, u)
    }

    #[inline]
    pub fn terminal_cost(&self, x: &[f64]) -> f64 {
        (self.coefficients.terminal_cost)(x)
    }

    /// Sup-norm proxy ‖h‖∞ + (T − t₀)‖f‖∞ when both norms are declared.
    pub fn bound_proxy(&self) -> Option<f64> {
        let b = self.bounds?;
        Some(b.sup_terminal? + self.horizon.length() * b.sup_running?)
    }

    pub fn with_risk(&self, risk: f64) -> Result<Self> {
        check_risk(risk)?;
        let mut m = self.clone();
        m.risk = risk;
        if let Some(cfg) = &mut m.config {
            cfg.risk = risk;
        }
        Ok(m)
    }

    pub fn with_domain(&self, domain: DomainBox) -> Result<Self> {
        if domain.dim() != self.state_dim {
            return Err(Error::InvalidModel("domain dimension mismatch".into()));
        }
        let mut m = self.clone();
        m.domain = domain;
        if let Some(cfg) = &mut m.config {
            cfg.domain = Some(m.domain.lower.iter().zip(&m.domain.upper).map(|(a, b)| [*a, *b]).collect());
        }
        Ok(m)
    }

    pub fn with_horizon(&self, horizon: Horizon) -> Self {
        let mut m = self.clone();
        m.horizon = horizon;
        if let Some(cfg) = &mut m.config {
            cfg.horizon = [horizon.start, horizon.end];
        }
        m
    }

    pub fn with_controls(&self, controls: ControlSet) -> Result<Self> {
        if controls.dim() != self.control_dim() {
            return Err(Error::InvalidModel("control dimension mismatch".into()));
        }
        let mut m = self.clone();
        m.controls = controls;
        if let Some(cfg) = &mut m.config {
            cfg.controls = m.controls.clone().into();
        }
        Ok(m)
    }

    pub fn with_bounds(&self, bounds: Option<DeclaredBounds>) -> Self {
        let mut m = self.clone();
        m.bounds = bounds;
        if let Some(cfg) = &mut m.config {
            cfg.bounds = bounds;
        }
        m
    }

    /// Replaces the running cost; the result no longer has a config source.
    pub fn with_running_cost(&self, running_cost: ScalarFn) -> Self {
        let mut m = self.clone();
        m.coefficients.running_cost = running_cost;
        m.config = None;
        m
    }

    /// Replaces the terminal cost; the result no longer has a config source.
    pub fn with_terminal_cost(&self, terminal_cost: TerminalFn) -> Self {
        let mut m = self.clone();
        m.coefficients.terminal_cost = terminal_cost;
        m.config = None;
        m
    }

    /// `h ↦ h + shift`, used by monotonicity and stability probes.
    pub fn with_terminal_shift(&self, shift: f64) -> Self {
        let h = self.coefficients.terminal_cost.clone();
        let mut m = self.with_terminal_cost(Arc::new(move |x: &[f64]| h(x) + shift));
        if let Some(b) = &mut m.bounds {
            b.sup_terminal = b.sup_terminal.map(|v| v + shift.abs());
        }
        m
    }

    pub(crate) fn set_config(&mut self, config: ModelConfig) {
        self.config = Some(config);
    }
}

fn check_risk(risk: f64) -> Result<()> {
    if !(risk > 0.0 && risk.is_finite()) {
        return Err(Error::InvalidModel(format!("risk parameter must be > 0, got {risk}")));
    }
    Ok(())
}

pub struct ModelBuilder {
    name: String,
    state_dim: usize,
    drift: Option<VectorFn>,
    diffusion: Option<VectorFn>,
    running_cost: Option<ScalarFn>,
    terminal_cost: Option<TerminalFn>,
    risk: f64,
    controls: Option<ControlSet>,
    horizon: (f64, f64),
    bounds: Option<DeclaredBounds>,
    domain: Option<DomainBox>,
}

impl ModelBuilder {
    fn new(name: String, state_dim: usize) -> Self {
        Self {
            name,
            state_dim,
            drift: None,
            diffusion: None,
            running_cost: None,
            terminal_cost: None,
            risk: 1.0,
            controls: None,
            horizon: (0.0, 1.0),
            bounds: None,
            domain: None,
        }
    }

    pub fn drift(mut self, f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(f));
        self
    }

    pub fn diffusion(mut self, f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.diffusion = Some(Arc::new(f));
        self
    }

    pub fn running_cost(mut self, f: impl Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.running_cost = Some(Arc::new(f));
        self
    }

    pub fn terminal_cost(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal_cost = Some(Arc::new(f));
        self
    }

    pub(crate) fn coefficients(mut self, c: Coefficients) -> Self {
        self.drift = Some(c.drift);
        self.diffusion = Some(c.diffusion);
        self.running_cost = Some(c.running_cost);
        self.terminal_cost = Some(c.terminal_cost);
        self
    }

    pub fn risk(mut self, mu: f64) -> Self {
        self.risk = mu;
        self
    }

    pub fn controls(mut self, controls: ControlSet) -> Self {
        self.controls = Some(controls);
        self
    }

    pub fn horizon(mut self, start: f64, end: f64) -> Self {
        self.horizon = (start, end);
        self
    }

    pub fn bounds(mut self, bounds: DeclaredBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn domain(mut self, domain: DomainBox) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn build(self) -> Result<ProblemModel> {
        let n = self.state_dim;
        if n == 0 {
            return Err(Error::InvalidModel("state dimension must be positive".into()));
        }
        check_risk(self.risk)?;
        let horizon = Horizon::new(self.horizon.0, self.horizon.1)?;
        let controls = self
            .controls
            .ok_or_else(|| Error::InvalidModel("control set is required".into()))?;
        let domain = self.domain.unwrap_or_else(|| DomainBox::cube(n, 6.0));
        if domain.dim() != n {
            return Err(Error::InvalidModel("domain dimension mismatch".into()));
        }
        let zero_vec: VectorFn = Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0));
        Ok(ProblemModel {
            name: self.name,
            state_dim: n,
            coefficients: Coefficients {
                drift: self.drift.unwrap_or_else(|| zero_vec.clone()),
                diffusion: self.diffusion.unwrap_or(zero_vec),
                running_cost: self.running_cost.unwrap_or_else(|| Arc::new(|_, _, _| 0.0)),
                terminal_cost: self.terminal_cost.unwrap_or_else(|| Arc::new(|_| 0.0)),
            },
            risk: self.risk,
            controls,
            horizon,
            bounds: self.bounds,
            domain,
            config: None,
        })
    }
}
