use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{fixtures, Coefficients, ControlSet, DeclaredBounds, DomainBox, ProblemModel};
use crate::error::{Error, Result};
use crate::expr::{Expr, Scope};

/// Declarative model description, loadable from TOML or JSON.
///
/// ```toml
/// name = "gbm-control"
/// state_dim = 1
/// risk = 2.0
/// horizon = [0.0, 1.0]
/// controls = [[0.0], [1.0]]
/// domain = [[-6.0, 6.0]]
///
/// [coefficients]
/// kind = "expressions"
/// drift = ["0"]
/// diffusion = ["x1*u1"]
/// running_cost = "0"
/// terminal_cost = "arctan(x1)"
/// ```
///
/// `kind = "builtin"` with `name = "example-5.1"` or `"example-5.2"` takes
/// the coefficient functions from the fixture registry instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "one")]
    pub state_dim: usize,
    pub risk: f64,
    pub horizon: [f64; 2],
    pub controls: Vec<Vec<f64>>,
    #[serde(default)]
    pub domain: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub bounds: Option<DeclaredBounds>,
    pub coefficients: CoefficientConfig,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CoefficientConfig {
    Builtin {
        name: String,
    },
    Expressions {
        drift: Vec<String>,
        diffusion: Vec<String>,
        running_cost: String,
        terminal_cost: String,
    },
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Picks the format from the file extension (`.json`, otherwise TOML).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build(&self) -> Result<ProblemModel> {
        let n = self.state_dim;
        let controls = ControlSet::new(self.controls.clone())?;
        let m = controls.dim();
        let coefficients = match &self.coefficients {
            CoefficientConfig::Builtin { name } => fixtures::builtin_coefficients(name)?,
            CoefficientConfig::Expressions {
                drift,
                diffusion,
                running_cost,
                terminal_cost,
            } => expression_coefficients(n, m, drift, diffusion, running_cost, terminal_cost)?,
        };
        let mut builder = ProblemModel::builder(self.name.clone().unwrap_or_else(|| "config".into()), n)
            .coefficients(coefficients)
            .risk(self.risk)
            .controls(controls)
            .horizon(self.horizon[0], self.horizon[1]);
        if let Some(b) = self.bounds {
            builder = builder.bounds(b);
        }
        if let Some(axes) = &self.domain {
            builder = builder.domain(DomainBox::new(
                axes.iter().map(|a| a[0]).collect(),
                axes.iter().map(|a| a[1]).collect(),
            )?);
        }
        let mut model = builder.build()?;
        model.set_config(self.clone());
        Ok(model)
    }
}

fn expression_coefficients(
    n: usize,
    m: usize,
    drift: &[String],
    diffusion: &[String],
    running_cost: &str,
    terminal_cost: &str,
) -> Result<Coefficients> {
    let full = Scope {
        state_dim: n,
        control_dim: m,
        allow_time: true,
    };
    let terminal_scope = Scope {
        state_dim: n,
        control_dim: 0,
        allow_time: false,
    };
    let parse_vec = |what: &str, srcs: &[String]| -> Result<Vec<Expr>> {
        if srcs.len() != n {
            return Err(Error::Config(format!("{what} needs {n} components, got {}", srcs.len())));
        }
        srcs.iter().map(|s| Expr::parse(s, full)).collect()
    };
    let drift = Arc::new(parse_vec("drift", drift)?);
    let diffusion = Arc::new(parse_vec("diffusion", diffusion)?);
    let running = Expr::parse(running_cost, full)?;
    let terminal = Expr::parse(terminal_cost, terminal_scope)?;
    Ok(Coefficients {
        drift: Arc::new(move |s, x, u, out| {
            for (o, e) in out.iter_mut().zip(drift.iter()) {
                *o = e.eval(s, x, u);
            }
        }),
        diffusion: Arc::new(move |s, x, u, out| {
            for (o, e) in out.iter_mut().zip(diffusion.iter()) {
                *o = e.eval(s, x, u);
            }
        }),
        running_cost: Arc::new(move |s, x, u| running.eval(s, x, u)),
        terminal_cost: Arc::new(move |x| terminal.eval(0.0, x, &[])),
    })
}
