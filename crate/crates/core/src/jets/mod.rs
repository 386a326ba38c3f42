//! Numerical membership tests for second-order spatial semijets, right time
//! semijets and right parabolic semijets of a value function.
//!
//! A candidate is tested on a decreasing schedule of radii r. For each r the
//! defining inequality is sampled on the ball (or time interval) of radius r
//! and the worst violation is normalized by r² (spatial and parabolic) or r
//! (time), giving a margin curve m(r). The decision is:
//!
//! * `NonMember` if m at the smallest radius exceeds `nonmember_tol`;
//! * `Member` if m is nonincreasing and either its last two values are below
//!   `tol_final` or its last three ratios are at most `decay_ratio`;
//! * `Inconclusive` otherwise.

mod verify;

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::adjoint::{hamiltonian_script_h, quadratic_correction};
use crate::error::{Error, Result};
use crate::hjb::{g_value, ValueGrid};
use crate::model::{ClosedFormExample, ProblemModel};

pub use verify::{
    verify_parabolic_inclusions, verify_spatial_inclusions, verify_time_inclusions, Inclusion, InclusionCheck,
    InclusionReport, InclusionSample, SweepSummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JetKind {
    XSuper2,
    XSub2,
    TPlusSuper1,
    TPlusSub1,
    ParabolicSuper,
    ParabolicSub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Super,
    Sub,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Super => 1.0,
            Side::Sub => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Member,
    NonMember,
    Inconclusive,
}

/// Spatial pair (p, P), time slope ϙ, or the parabolic triple (ϙ, p, P).
/// `big_p` is n×n row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Candidate {
    Spatial { p: Vec<f64>, big_p: Vec<f64> },
    Time { q: f64 },
    Parabolic { q: f64, p: Vec<f64>, big_p: Vec<f64> },
}

/// Sample with the largest normalized violation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    pub radius: f64,
    /// Raw violation of the defining inequality at `(t, x)`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JetVerdict {
    pub kind: JetKind,
    pub candidate: Candidate,
    pub decision: Decision,
    pub witness: Option<Witness>,
    pub radii: Vec<f64>,
    pub margin_curve: Vec<f64>,
}

impl JetVerdict {
    pub fn is_member(&self) -> bool {
        self.decision == Decision::Member
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JetOptions {
    /// Strictly decreasing.
    pub radii: Vec<f64>,
    pub tol_final: f64,
    pub nonmember_tol: f64,
    pub decay_ratio: f64,
    /// Ball samples for a scalar state.
    pub samples_1d: usize,
    /// Ball samples in dimension ≥ 2.
    pub samples_nd: usize,
    /// Time samples per radius for time jets.
    pub samples_time: usize,
    /// Spatial × temporal samples for parabolic jets (scalar state).
    pub samples_parabolic: (usize, usize),
}

impl Default for JetOptions {
    fn default() -> Self {
        Self {
            radii: vec![0.2, 0.1, 0.05, 0.025, 0.0125],
            tol_final: 1e-4,
            nonmember_tol: 1e-2,
            decay_ratio: 0.75,
            samples_1d: 401,
            samples_nd: 2048,
            samples_time: 401,
            samples_parabolic: (41, 21),
        }
    }
}

impl JetOptions {
    fn validate(&self) -> Result<()> {
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidArgument("radii must be positive".into()));
        }
        if self.radii.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidArgument("radii must be strictly decreasing".into()));
        }
        Ok(())
    }
}

/// Something that can be evaluated as V(t, x).
pub trait ValueSource: Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64, x: &[f64]) -> f64;
    /// Spatial and temporal spacing for tabulated values, `None` for exact
    /// functions.
    fn resolution(&self) -> Option<(f64, f64)> {
        None
    }
    fn horizon_end(&self) -> f64;
}

impl ValueSource for ClosedFormExample {
    fn dim(&self) -> usize {
        self.model().state_dim()
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        ClosedFormExample::value(self, t, x)
    }
    fn horizon_end(&self) -> f64 {
        self.model().horizon().end
    }
}

impl ValueSource for ValueGrid {
    fn dim(&self) -> usize {
        ValueGrid::dim(self)
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.interpolate(t, x)
    }
    fn resolution(&self) -> Option<(f64, f64)> {
        Some(ValueGrid::resolution(self))
    }
    fn horizon_end(&self) -> f64 {
        self.t_nodes[self.t_nodes.len() - 1]
    }
}

type SharedValueFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A plain function `(t, x) -> V` on `[.., end] × ℝ^dim`.
#[derive(Clone)]
pub struct FnValue {
    pub dim: usize,
    pub end: f64,
    pub f: SharedValueFn,
}

impl FnValue {
    pub fn new(dim: usize, end: f64, f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            end,
            f: Arc::new(f),
        }
    }
}

impl ValueSource for FnValue {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.f)(t, x)
    }
    fn horizon_end(&self) -> f64 {
        self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Spatial,
    Time,
    Parabolic,
}

/// Samples of ΔV = V(t̂ + τ, x̂ + d) − V(t̂, x̂) on one radius.
#[derive(Debug, Clone)]
struct Shell {
    radius: f64,
    tau: Vec<f64>,
    /// `len × n`
    d: Vec<f64>,
    dv: Vec<f64>,
}

/// Precomputed value differences around a base point, reusable across
/// candidates of the same shape.
#[derive(Debug, Clone)]
pub struct JetProbe {
    shape: Shape,
    t: f64,
    x: Vec<f64>,
    shells: Vec<Shell>,
    options: JetOptions,
}

/// Deterministic low-discrepancy points in the unit ball (additive
/// recurrence with generalized golden ratios), plus ±e_i.
fn ball_points(n: usize, count: usize) -> Vec<Vec<f64>> {
    // φ_n solves x^{n+1} = x + 1
    let mut phi: f64 = 2.0;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (n as f64 + 1.0));
    }
    let alpha: Vec<f64> = (1..=n).map(|i| phi.powi(-(i as i32)).fract()).collect();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count + 2 * n + 1);
    out.push(vec![0.0; n]);
    for i in 0..n {
        for s in [-1.0, 1.0] {
            let mut e = vec![0.0; n];
            e[i] = s;
            out.push(e);
        }
    }
    let mut k = 1u64;
    while out.len() < count + 2 * n + 1 {
        let z: Vec<f64> = alpha.iter().map(|a| 2.0 * (0.5 + k as f64 * a).fract() - 1.0).collect();
        if z.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            out.push(z);
        }
        k += 1;
    }
    out
}

fn linspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect()
}

impl JetProbe {
    fn build(value: &dyn ValueSource, shape: Shape, t: f64, x: &[f64], options: &JetOptions) -> Result<Self> {
        options.validate()?;
        let n = value.dim();
        if x.len() != n {
            return Err(Error::InvalidArgument(format!("point has dimension {}, value has {n}", x.len())));
        }
        let end = value.horizon_end();
        if shape != Shape::Spatial && !(t < end) {
            return Err(Error::InvalidArgument(format!("time jets need t < {end}, got {t}")));
        }
        let base = value.value(t, x);
        if !base.is_finite() {
            return Err(non_finite(t, x));
        }
        let mut radii = options.radii.clone();
        if let Some((dx, dt)) = value.resolution() {
            let res = if shape == Shape::Time { dt } else { dx };
            if let Some(&r) = radii.iter().find(|&&r| r < res) {
                return Err(Error::RadiusBelowResolution { radius: r, resolution: res });
            }
            radii.retain(|&r| r >= 4.0 * res);
        }
        match shape {
            Shape::Time => radii.retain(|&r| t + r <= end),
            Shape::Parabolic => radii.retain(|&r| t + r * r <= end),
            Shape::Spatial => {}
        }

        let unit: Vec<Vec<f64>> = match shape {
            Shape::Time => vec![vec![0.0; n]],
            Shape::Spatial if n == 1 => linspace(-1.0, 1.0, options.samples_1d).into_iter().map(|v| vec![v]).collect(),
            Shape::Spatial => ball_points(n, options.samples_nd),
            Shape::Parabolic if n == 1 => linspace(-1.0, 1.0, options.samples_parabolic.0)
                .into_iter()
                .map(|v| vec![v])
                .collect(),
            Shape::Parabolic => ball_points(n, options.samples_nd / 8),
        };
        let unit_tau: Vec<f64> = match shape {
            Shape::Spatial => vec![0.0],
            Shape::Time => (1..=options.samples_time)
                .map(|k| k as f64 / options.samples_time as f64)
                .collect(),
            Shape::Parabolic => linspace(0.0, 1.0, options.samples_parabolic.1),
        };

        let shells = radii
            .iter()
            .map(|&r| {
                let tau_scale = if shape == Shape::Parabolic { r * r } else { r };
                let mut tau = Vec::new();
                let mut d = Vec::new();
                for &ut in &unit_tau {
                    for z in &unit {
                        tau.push(ut * tau_scale);
                        d.extend(z.iter().map(|v| v * r));
                    }
                }
                let dv: Vec<f64> = (0..tau.len())
                    .into_par_iter()
                    .with_min_len(64)
                    .map(|i| {
                        let xi: Vec<f64> = x.iter().zip(&d[i * n..(i + 1) * n]).map(|(a, b)| a + b).collect();
                        value.value(t + tau[i], &xi) - base
                    })
                    .collect();
                if let Some(i) = dv.iter().position(|v| !v.is_finite()) {
                    let xi: Vec<f64> = x.iter().zip(&d[i * n..(i + 1) * n]).map(|(a, b)| a + b).collect();
                    return Err(non_finite(t + tau[i], &xi));
                }
                Ok(Shell { radius: r, tau, d, dv })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            shape,
            t,
            x: x.to_vec(),
            shells,
            options: options.clone(),
        })
    }

    /// Probe for second-order spatial jets at `(s, x)`.
    pub fn spatial(value: &dyn ValueSource, s: f64, x: &[f64], options: &JetOptions) -> Result<Self> {
        Self::build(value, Shape::Spatial, s, x, options)
    }

    /// Probe for right time jets at `(s, x)`.
    pub fn time(value: &dyn ValueSource, s: f64, x: &[f64], options: &JetOptions) -> Result<Self> {
        Self::build(value, Shape::Time, s, x, options)
    }

    /// Probe for right parabolic jets at `(s, x)`.
    pub fn parabolic(value: &dyn ValueSource, s: f64, x: &[f64], options: &JetOptions) -> Result<Self> {
        Self::build(value, Shape::Parabolic, s, x, options)
    }

    /// Radii that survived the resolution and horizon filters.
    pub fn radii(&self) -> Vec<f64> {
        self.shells.iter().map(|s| s.radius).collect()
    }

    fn kind(&self, side: Side) -> JetKind {
        match (self.shape, side) {
            (Shape::Spatial, Side::Super) => JetKind::XSuper2,
            (Shape::Spatial, Side::Sub) => JetKind::XSub2,
            (Shape::Time, Side::Super) => JetKind::TPlusSuper1,
            (Shape::Time, Side::Sub) => JetKind::TPlusSub1,
            (Shape::Parabolic, Side::Super) => JetKind::ParabolicSuper,
            (Shape::Parabolic, Side::Sub) => JetKind::ParabolicSub,
        }
    }

    /// Tests `candidate` on the given side. The candidate's shape must match
    /// the probe.
    pub fn test(&self, candidate: &Candidate, side: Side) -> Result<JetVerdict> {
        let n = self.x.len();
        let zero_p = vec![0.0; n];
        let zero_pp = vec![0.0; n * n];
        let (q, p, big_p) = match (self.shape, candidate) {
            (Shape::Spatial, Candidate::Spatial { p, big_p }) => (0.0, p, big_p),
            (Shape::Time, Candidate::Time { q }) => (*q, &zero_p, &zero_pp),
            (Shape::Parabolic, Candidate::Parabolic { q, p, big_p }) => (*q, p, big_p),
            _ => return Err(Error::InvalidArgument("candidate does not match the probe".into())),
        };
        if p.len() != n || big_p.len() != n * n {
            return Err(Error::InvalidArgument(format!("candidate must have p ∈ ℝ^{n} and P ∈ ℝ^{n}×{n}")));
        }
        let sign = side.sign();
        let mut margins = Vec::with_capacity(self.shells.len());
        let mut best: Option<(f64, Witness)> = None;
        for shell in &self.shells {
            let r = shell.radius;
            let norm = if self.shape == Shape::Time { r } else { r * r };
            let mut worst = f64::NEG_INFINITY;
            let mut at = 0;
            for i in 0..shell.dv.len() {
                let d = &shell.d[i * n..(i + 1) * n];
                let mut model = q * shell.tau[i];
                for a in 0..n {
                    model += p[a] * d[a];
                    for b in 0..n {
                        model += 0.5 * d[a] * big_p[a * n + b] * d[b];
                    }
                }
                let v = sign * (shell.dv[i] - model);
                if v > worst {
                    worst = v;
                    at = i;
                }
            }
            let m = worst.max(0.0) / norm;
            margins.push(m);
            if best.as_ref().is_none_or(|(bm, _)| m >= *bm) {
                let d = &shell.d[at * n..(at + 1) * n];
                best = Some((
                    m,
                    Witness {
                        t: self.t + shell.tau[at],
                        x: self.x.iter().zip(d).map(|(a, b)| a + b).collect(),
                        radius: r,
                        residual: worst,
                    },
                ));
            }
        }
        Ok(JetVerdict {
            kind: self.kind(side),
            candidate: candidate.clone(),
            decision: decide(&margins, &self.options),
            witness: best.map(|b| b.1),
            radii: self.radii(),
            margin_curve: margins,
        })
    }
}

fn non_finite(t: f64, x: &[f64]) -> Error {
    Error::NonFinite {
        what: "value",
        s: t,
        x: x.to_vec(),
        u: Vec::new(),
    }
}

fn decide(m: &[f64], options: &JetOptions) -> Decision {
    let Some(&last) = m.last() else {
        return Decision::Inconclusive;
    };
    if last > options.nonmember_tol {
        return Decision::NonMember;
    }
    if m.len() < 2 {
        return Decision::Inconclusive;
    }
    let monotone = m.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let small = m[m.len() - 2..].iter().all(|&v| v <= options.tol_final);
    let decaying = m.len() >= 4
        && m[m.len() - 4..].windows(2).all(|w| {
            if w[0] == 0.0 {
                w[1] == 0.0
            } else {
                w[1] / w[0] <= options.decay_ratio
            }
        });
    if monotone && (small || decaying) {
        Decision::Member
    } else {
        Decision::Inconclusive
    }
}

/// Tests (p, P) against the second-order spatial super- or subjet at (s, x).
pub fn test_x_jet(
    value: &dyn ValueSource,
    s: f64,
    x: &[f64],
    p: &[f64],
    big_p: &[f64],
    side: Side,
    options: &JetOptions,
) -> Result<JetVerdict> {
    JetProbe::spatial(value, s, x, options)?.test(
        &Candidate::Spatial {
            p: p.to_vec(),
            big_p: big_p.to_vec(),
        },
        side,
    )
}

/// Tests ϙ against the right time super- or subjet at (s, x).
pub fn test_t_jet(value: &dyn ValueSource, s: f64, x: &[f64], q: f64, side: Side, options: &JetOptions) -> Result<JetVerdict> {
    JetProbe::time(value, s, x, options)?.test(&Candidate::Time { q }, side)
}

/// Tests (ϙ, p, P) against the right parabolic super- or subjet at (s, x).
#[allow(clippy::too_many_arguments)]
pub fn test_parabolic_jet(
    value: &dyn ValueSource,
    s: f64,
    x: &[f64],
    q: f64,
    p: &[f64],
    big_p: &[f64],
    side: Side,
    options: &JetOptions,
) -> Result<JetVerdict> {
    JetProbe::parabolic(value, s, x, options)?.test(
        &Candidate::Parabolic {
            q,
            p: p.to_vec(),
            big_p: big_p.to_vec(),
        },
        side,
    )
}

/// Both expressions of 𝓗₁(s, x, u): the shifted 𝓗 form
/// 𝓗(s, x, σ̄ᵀp, u, p, q, P) − ½σ̄ᵀ(P + μppᵀ)σ̄, and the reduced form
/// G(s, x, u, p, P) + ⟨q − Pσ̄, σ(s, x, u)⟩.
#[allow(clippy::too_many_arguments)]
pub fn script_h1_forms(
    model: &ProblemModel,
    s: f64,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    q: &[f64],
    big_p: &[f64],
    sigma_bar: &[f64],
) -> (f64, f64) {
    let n = model.state_dim();
    let mu = model.risk();
    let z: f64 = sigma_bar.iter().zip(p).map(|(a, b)| a * b).sum();
    let shifted = hamiltonian_script_h(model, s, x, z, u, p, q, big_p, sigma_bar) - quadratic_correction(mu, sigma_bar, p, big_p);

    let mut b = vec![0.0; n];
    let mut sigma = vec![0.0; n];
    model.drift(s, x, u, &mut b);
    model.diffusion(s, x, u, &mut sigma);
    let g = g_value(mu, model.running_cost(s, x, u), &b, &sigma, p, big_p);
    let mut inner = 0.0;
    for i in 0..n {
        let mut w = q[i];
        for j in 0..n {
            w -= big_p[i * n + j] * sigma_bar[j];
        }
        inner += w * sigma[i];
    }
    (shifted, g + inner)
}

/// 𝓗₁(s, x, u) = G(s, x, u, p, P) + ⟨q − Pσ̄, σ(s, x, u)⟩, with (p, q, P) the
/// adjoints at s and σ̄ the diffusion along the reference trajectory.
#[allow(clippy::too_many_arguments)]
pub fn script_h1(
    model: &ProblemModel,
    s: f64,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    q: &[f64],
    big_p: &[f64],
    sigma_bar: &[f64],
) -> f64 {
    let (shifted, reduced) = script_h1_forms(model, s, x, u, p, q, big_p, sigma_bar);
    debug_assert!(
        (shifted - reduced).abs() <= 1e-10 * shifted.abs().max(reduced.abs()).max(1.0),
        "𝓗₁ forms disagree: {shifted} vs {reduced}"
    );
    reduced
}

/// CSV `label,kind,decision,radius,margin`, one row per radius of each
/// verdict.
pub fn write_margin_csv<'a>(verdicts: impl IntoIterator<Item = (String, &'a JetVerdict)>, mut out: impl Write) -> Result<()> {
    writeln!(out, "label,kind,decision,radius,margin")?;
    for (label, v) in verdicts {
        let kind = serde_json::to_value(v.kind)?;
        let decision = serde_json::to_value(v.decision)?;
        for (r, m) in v.radii.iter().zip(&v.margin_curve) {
            writeln!(
                out,
                "{label},{},{},{r},{m}",
                kind.as_str().unwrap_or_default(),
                decision.as_str().unwrap_or_default()
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example_5_1, example_5_2};

    fn opts() -> JetOptions {
        JetOptions::default()
    }

    #[test]
    fn arctan_spatial_jets() {
        let fx = example_5_1();
        let sup = test_x_jet(&fx, 0.5, &[1.0], &[0.5], &[-0.5], Side::Super, &opts()).unwrap();
        let sub = test_x_jet(&fx, 0.5, &[1.0], &[0.5], &[-0.5], Side::Sub, &opts()).unwrap();
        assert_eq!(sup.decision, Decision::Member);
        assert_eq!(sub.decision, Decision::Member);
        let sup = test_x_jet(&fx, 0.5, &[1.0], &[0.5], &[-0.4], Side::Super, &opts()).unwrap();
        let sub = test_x_jet(&fx, 0.5, &[1.0], &[0.5], &[-0.4], Side::Sub, &opts()).unwrap();
        assert_eq!(sup.decision, Decision::Member);
        assert_eq!(sub.decision, Decision::NonMember);
        assert!(sub.witness.unwrap().residual > 0.0);
    }

    #[test]
    fn kinked_value_spatial_jets() {
        let fx = example_5_2();
        let probe = JetProbe::spatial(&fx, 0.5, &[1.0], &opts()).unwrap();
        let c = |p: f64, pp: f64| Candidate::Spatial {
            p: vec![p],
            big_p: vec![pp],
        };
        assert!(probe.test(&c(0.5, -0.5), Side::Super).unwrap().is_member());
        assert_eq!(probe.test(&c(0.55, -0.5), Side::Super).unwrap().decision, Decision::NonMember);
        assert_eq!(probe.test(&c(0.55, 3.0), Side::Super).unwrap().decision, Decision::NonMember);
        for p in [0.3, 0.4, 0.5, 0.6] {
            for pp in [-3.0, -0.5, 0.0] {
                assert!(!probe.test(&c(p, pp), Side::Sub).unwrap().is_member());
            }
        }
    }

    #[test]
    fn time_jets() {
        let fx = example_5_1();
        for side in [Side::Super, Side::Sub] {
            assert!(test_t_jet(&fx, 0.3, &[1.0], 0.0, side, &opts()).unwrap().is_member());
        }
        assert!(test_t_jet(&fx, 0.3, &[1.0], 0.1, Side::Super, &opts()).unwrap().is_member());
        assert_eq!(
            test_t_jet(&fx, 0.3, &[1.0], 0.1, Side::Sub, &opts()).unwrap().decision,
            Decision::NonMember
        );
        let fx = example_5_2();
        for side in [Side::Super, Side::Sub] {
            assert!(test_t_jet(&fx, 0.5, &[1.0], 0.0, side, &opts()).unwrap().is_member());
        }
        let c = FnValue::new(1, 1.0, |_, _| 2.0);
        assert!(test_t_jet(&c, 0.5, &[0.0], 0.0, Side::Super, &opts()).unwrap().is_member());
        assert!(test_t_jet(&c, 0.5, &[0.0], 0.0, Side::Sub, &opts()).unwrap().is_member());
        assert!(!test_t_jet(&c, 0.5, &[0.0], -0.1, Side::Super, &opts()).unwrap().is_member());
        assert!(test_t_jet(&c, 0.5, &[0.0], -0.1, Side::Sub, &opts()).unwrap().is_member());
    }

    #[test]
    fn constant_value_parabolic_jets() {
        let c = FnValue::new(2, 1.0, |_, _| -1.0);
        for side in [Side::Super, Side::Sub] {
            let v = test_parabolic_jet(&c, 0.2, &[0.3, 0.1], 0.0, &[0.0, 0.0], &[0.0; 4], side, &opts()).unwrap();
            assert!(v.is_member());
        }
    }

    #[test]
    fn time_radii_respect_horizon() {
        let fx = example_5_1();
        let probe = JetProbe::time(&fx, 0.9, &[1.0], &opts()).unwrap();
        assert_eq!(probe.radii(), vec![0.1, 0.05, 0.025, 0.0125]);
        assert!(JetProbe::time(&fx, 1.0, &[1.0], &opts()).is_err());
    }

    #[test]
    fn grid_values_refuse_radii_below_resolution() {
        let xs: Vec<f64> = (0..=60).map(|k| -3.0 + 0.1 * k as f64).collect();
        let grid = ValueGrid::from_fn(vec![0.0, 1.0], vec![xs], |_, x| x[0].atan()).unwrap();
        let err = test_x_jet(&grid, 0.0, &[1.0], &[0.5], &[-0.5], Side::Super, &opts());
        assert!(matches!(err, Err(Error::RadiusBelowResolution { .. })));
        let coarse = JetOptions {
            radii: vec![0.8, 0.4, 0.2],
            ..opts()
        };
        let v = test_x_jet(&grid, 0.0, &[1.0], &[0.5], &[-0.5], Side::Super, &coarse).unwrap();
        assert_eq!(v.radii, vec![0.8, 0.4]);
        // the cubic term of arctan dominates at these radii
        assert_eq!(v.decision, Decision::NonMember);
    }

    #[test]
    fn script_h1_values() {
        let m = example_5_1().model().clone();
        let v = script_h1(&m, 0.0, &[1.0], &[0.0], &[0.5], &[0.0], &[-0.5], &[0.0]);
        assert_eq!(v, 0.0);
        let v = script_h1(&m, 0.0, &[1.0], &[1.0], &[0.5], &[0.0], &[-0.5], &[0.0]);
        assert!((v - 0.875).abs() < 1e-15);
        let m = example_5_2().model().clone();
        assert_eq!(script_h1(&m, 0.0, &[1.0], &[0.0], &[0.5], &[0.0], &[-0.5], &[0.0]), 0.0);
    }

    #[test]
    fn ball_points_are_inside() {
        let pts = ball_points(3, 500);
        assert_eq!(pts.len(), 507);
        assert!(pts.iter().all(|z| z.iter().map(|v| v * v).sum::<f64>() <= 1.0 + 1e-15));
    }

    #[test]
    fn margin_csv_layout() {
        let fx = example_5_1();
        let v = test_x_jet(&fx, 0.5, &[1.0], &[0.5], &[-0.5], Side::Super, &opts()).unwrap();
        let mut buf = Vec::new();
        write_margin_csv([("a".to_string(), &v)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().nth(1).unwrap().starts_with("a,x_super2,member,0.2,"));
    }
}
