use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use rsens::adjoint::{fixture_adjoints, solve_adjoints, verify_maximum_condition, AdjointPath, MaximumConditionOptions};
use rsens::hjb::{solve_hjb, BoundaryMode, GridSpec, ValueGrid};
use rsens::jets::{
    verify_parabolic_inclusions, verify_spatial_inclusions, verify_time_inclusions, write_margin_csv, Inclusion,
    InclusionReport, JetOptions,
};
use rsens::model::{ClosedFormExample, CoefficientDerivatives, DomainBox, FixtureId, ModelConfig, ProblemModel};
use rsens::montecarlo::{
    risk_sensitive_cost, simulate_path_costs, simulate_paths, cost_from_samples, small_mu_expansion_check, PathBundle,
    Policy,
};
use rsens::qbsde::{solve_by_regression, solve_by_transform, BackwardSolution, PolynomialBasis};
use rsens::Error;

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Serialize)]
#[command(name = "rsctl", version, about = "Risk-sensitive stochastic control toolkit")]
struct Cli {
    /// Output directory (created if missing).
    #[arg(long, global = true, env = "RSCTL_OUT", default_value = "rsctl-out")]
    out: PathBuf,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
enum Command {
    /// Simulate controlled paths and write them as CSV.
    Simulate(SimulateArgs),
    /// Monte Carlo risk-sensitive cost of a policy.
    Cost(SimArgs),
    /// Solve the quadratic BSDE along simulated paths.
    Bsde(BsdeArgs),
    /// Solve the HJB equation on a grid.
    Hjb(HjbArgs),
    /// Solve the first- and second-order adjoint equations.
    Adjoint(AdjointArgs),
    /// Check the maximum condition along simulated optimal paths.
    VerifyMp(AdjointArgs),
    /// Verify the semijet inclusions along the optimal trajectory.
    VerifyJets(JetArgs),
    /// Compare J(μ) with its small-μ expansion.
    ExpansionCheck(ExpansionArgs),
    /// Run the full pipeline on a closed-form example.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Serialize, Clone)]
struct ModelArgs {
    /// Built-in fixture: 5.1 or 5.2.
    #[arg(long, conflicts_with = "config")]
    fixture: Option<String>,
    /// Model config file (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the risk parameter μ.
    #[arg(long)]
    risk: Option<f64>,
}

#[derive(Args, Serialize, Clone)]
struct SimArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// `optimal` (fixtures only) or a control-set index.
    #[arg(long)]
    policy: Option<String>,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Skip the path CSV and write only the summary.
    #[arg(long)]
    no_csv: bool,
}

#[derive(ValueEnum, Clone, Copy, Serialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum BsdeMethod {
    Transform,
    Regression,
    Both,
}

#[derive(Args, Serialize)]
struct BsdeArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, value_enum, default_value_t = BsdeMethod::Both)]
    method: BsdeMethod,
    /// Polynomial degree of the regression basis.
    #[arg(long, default_value_t = 3)]
    degree: usize,
    #[arg(long, default_value_t = 1e-8)]
    ridge: f64,
    /// Write per-path Y and Z as CSV.
    #[arg(long)]
    dump_paths: bool,
}

#[derive(Args, Serialize)]
struct HjbArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Spatial nodes per axis.
    #[arg(long, default_value_t = 241)]
    nx: usize,
    /// Stored time snapshots.
    #[arg(long, default_value_t = 11)]
    nt: usize,
    /// Domain box: `lo:hi` per axis, comma separated, or one half-width.
    #[arg(long = "box", allow_hyphen_values = true)]
    domain: Option<String>,
    #[arg(long, default_value = "extrapolate")]
    boundary: String,
    #[arg(long)]
    artificial_viscosity: bool,
    #[arg(long, default_value_t = 2_000_000)]
    max_steps: usize,
    /// Skip the value-grid CSV.
    #[arg(long)]
    no_csv: bool,
}

#[derive(Args, Serialize)]
struct AdjointArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, default_value_t = 3)]
    degree: usize,
    /// Maximum-condition tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
}

#[derive(Args, Serialize)]
struct JetArgs {
    #[arg(long)]
    fixture: String,
    /// spatial|time|parabolic (or 4.1|4.2|4.3); all three when omitted.
    #[arg(long)]
    theorem: Option<String>,
    /// Times along the optimal trajectory.
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
    s: Vec<f64>,
}

#[derive(Args, Serialize)]
struct ExpansionArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1,0.05")]
    mus: Vec<f64>,
    /// Fail (exit 6) unless the fitted slope lies in `lo,hi`.
    #[arg(long, value_delimiter = ',')]
    expect_slope: Option<Vec<f64>>,
}

#[derive(Args, Serialize)]
struct ReproduceArgs {
    /// 5.1 or 5.2.
    #[arg(long)]
    example: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Process outcome with its exit code.
enum Failure {
    Io(String),
    UnknownFixture(String),
    Config(String),
    Solver(String),
    Verification(String),
    Usage(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Usage(_) => 2,
            Failure::UnknownFixture(_) => 3,
            Failure::Config(_) => 4,
            Failure::Solver(_) => 5,
            Failure::Verification(_) => 6,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m)
            | Failure::UnknownFixture(m)
            | Failure::Config(m)
            | Failure::Solver(m)
            | Failure::Verification(m)
            | Failure::Usage(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownFixture(_) => Failure::UnknownFixture(e.to_string()),
            Error::Config(_) | Error::Expression(_) => Failure::Config(e.to_string()),
            Error::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("rsctl: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: &Cli) -> Outcome<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    fs::create_dir_all(&cli.out)?;
    let echo = serde_json::to_string_pretty(cli).map_err(|e| Failure::Io(e.to_string()))?;
    fs::write(cli.out.join("run.json"), echo)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Cost(a) => cost(a, out),
        Command::Bsde(a) => bsde(a, out),
        Command::Hjb(a) => hjb(a, out),
        Command::Adjoint(a) => adjoint(a, out, false),
        Command::VerifyMp(a) => adjoint(a, out, true),
        Command::VerifyJets(a) => verify_jets(a, out),
        Command::ExpansionCheck(a) => expansion(a, out),
        Command::Reproduce(a) => reproduce(a, out),
    }
}

/// A loaded model, with the fixture it came from when built in.
struct Loaded {
    model: ProblemModel,
    fixture: Option<ClosedFormExample>,
    source: Value,
}

fn load_model(args: &ModelArgs, out: &Path) -> Outcome<Loaded> {
    let (mut model, fixture, source) = match (&args.fixture, &args.config) {
        (Some(id), None) => {
            let fx = id.parse::<FixtureId>()?.load();
            (fx.model().clone(), Some(fx), json!({ "fixture": id }))
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("toml");
            let config = if ext.eq_ignore_ascii_case("json") {
                ModelConfig::from_json_str(&text)
            } else {
                ModelConfig::from_toml_str(&text)
            }
            .map_err(|e| Failure::Config(e.to_string()))?;
            fs::write(out.join(format!("model_config.{ext}")), &text)?;
            let model = config.build().map_err(|e| Failure::Config(e.to_string()))?;
            (model, None, json!({ "config": path }))
        }
        _ => return Err(Failure::Usage("exactly one of --fixture or --config is required".into())),
    };
    let mut fixture = fixture;
    if let Some(mu) = args.risk {
        model = model.with_risk(mu)?;
        fixture = fixture.map(|f| f.with_model(model.clone()));
    }
    Ok(Loaded { model, fixture, source })
}

fn policy_and_x0(sim: &SimArgs, loaded: &Loaded) -> Outcome<(Policy, Value, Vec<f64>)> {
    let n = loaded.model.state_dim();
    let x0 = match (&sim.x0, &loaded.fixture) {
        (Some(x), _) => x.clone(),
        (None, Some(fx)) => fx.initial_state().to_vec(),
        (None, None) => vec![0.0; n],
    };
    if x0.len() != n {
        return Err(Failure::Usage(format!("--x0 needs {n} components")));
    }
    let spec = sim.policy.clone().unwrap_or_else(|| {
        if loaded.fixture.is_some() {
            "optimal".into()
        } else {
            "0".into()
        }
    });
    let policy = if spec == "optimal" {
        let fx = loaded
            .fixture
            .as_ref()
            .ok_or_else(|| Failure::Usage("--policy optimal needs a fixture".into()))?;
        Policy::Feedback(fx.optimal_feedback())
    } else {
        let i: usize = spec
            .parse()
            .map_err(|_| Failure::Usage(format!("--policy expects `optimal` or an index, got `{spec}`")))?;
        if i >= loaded.model.controls().len() {
            return Err(Failure::Usage(format!("control index {i} out of range")));
        }
        Policy::Constant(i)
    };
    Ok((policy, json!(spec), x0))
}

fn write_json(out: &Path, name: &str, mut body: Value, started: Instant) -> Outcome<()> {
    if let Value::Object(map) = &mut body {
        map.insert("schema_version".into(), json!(SCHEMA_VERSION));
        map.insert("timing".into(), json!({ "elapsed_seconds": started.elapsed().as_secs_f64() }));
    }
    let text = serde_json::to_string_pretty(&body).map_err(|e| Failure::Io(e.to_string()))?;
    fs::write(out.join(name), text + "\n")?;
    Ok(())
}

fn create(out: &Path, name: &str) -> Outcome<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn simulate(a: &SimulateArgs, out: &Path) -> Outcome<()> {
    let started = Instant::now();
    let loaded = load_model(&a.sim.model, out)?;
    let (policy, policy_label, x0) = policy_and_x0(&a.sim, &loaded)?;
    let bundle = simulate_paths(&loaded.model, &policy, &x0, a.sim.steps, a.sim.paths, a.sim.seed)?;
    if !a.no_csv {
        bundle.write_csv(&loaded.model, create(out, "paths.csv")?)?;
    }
    let estimate = risk_sensitive_cost(&loaded.model, &bundle).ok();
    write_json(
        out,
        "summary.json",
        json!({
            "command": "simulate",
            "model": loaded.source,
            "policy": policy_label,
            "x0": x0,
            "paths": a.sim.paths,
            "steps": a.sim.steps,
            "seed": a.sim.seed,
            "cost": estimate,
        }),
        started,
    )
}

fn cost(a: &SimArgs, out: &Path) -> Outcome<()> {
    let started = Instant::now();
    let loaded = load_model(&a.model, out)?;
    let (policy, policy_label, x0) = policy_and_x0(a, &loaded)?;
    let costs = simulate_path_costs(&loaded.model, &policy, &x0, a.steps, a.paths, a.seed)?;
    let estimate = cost_from_samples(loaded.model.risk(), &costs.total())?;
    let closed_form = loaded.fixture.as_ref().map(|fx| fx.value(loaded.model.horizon().start, &x0));
    write_json(
        out,
        "summary.json",
        json!({
            "command": "cost",
            "model": loaded.source,
            "policy": policy_label,
            "x0": x0,
            "steps": a.steps,
            "seed": a.seed,
            "cost": estimate,
            "closed_form_value": closed_form,
        }),
        started,
    )
}

fn basis(degree: usize, ridge: f64) -> PolynomialBasis {
    PolynomialBasis { degree, ridge }
}

fn write_backward_csv(solution: &BackwardSolution, out: &Path, name: &str) -> Outcome<()> {
    use std::io::Write;
    let mut w = create(out, name)?;
    writeln!(w, "path_id,k,s_k,y,z")?;
    for p in 0..solution.n_paths {
        for (k, s) in solution.time_grid.iter().enumerate() {
            writeln!(w, "{p},{k},{s},{},{}", solution.y(p, k), solution.z(p, k))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bsde(a: &BsdeArgs, out: &Path) -> Outcome<()> {
    let started = Instant::now();
    let loaded = load_model(&a.sim.model, out)?;
    let (policy, policy_label, x0) = policy_and_x0(&a.sim, &loaded)?;
    let bundle = simulate_paths(&loaded.model, &policy, &x0, a.sim.steps, a.sim.paths, a.sim.seed)?;
    let b = basis(a.degree, a.ridge);
    let mut results = serde_json::Map::new();
    let mut y0 = Vec::new();
    if a.method != BsdeMethod::Regression {
        let sol = solve_by_transform(&loaded.model, &bundle, b)?;
        if a.dump_paths {
            write_backward_csv(&sol, out, "bsde_transform.csv")?;
        }
        y0.push((sol.y0, sol.std_error));
        results.insert("transform".into(), json!(sol.summary()));
    }
    if a.method != BsdeMethod::Transform {
        let sol = solve_by_regression(&loaded.model, &bundle, b)?;
        if a.dump_paths {
            write_backward_csv(&sol, out, "bsde_regression.csv")?;
        }
        y0.push((sol.y0, sol.std_error));
        results.insert("regression".into(), json!(sol.summary()));
    }
    let agreement = (y0.len() == 2).then(|| {
        let diff = (y0[0].0 - y0[1].0).abs();
        let combined = (y0[0].1.powi(2) + y0[1].1.powi(2)).sqrt();
        json!({ "abs_difference": diff, "combined_std_error": combined, "within_3_se": diff <= 3.0 * combined })
    });
    write_json(
        out,
        "summary.json",
        json!({
            "command": "bsde",
            "model": loaded.source,
            "policy": policy_label,
            "x0": x0,
            "seed": a.sim.seed,
            "solutions": results,
            "agreement": agreement,
        }),
        started,
    )
}

fn parse_box(spec: Option<&str>, model: &ProblemModel) -> Outcome<DomainBox> {
    let n = model.state_dim();
    let Some(spec) = spec else {
        return Ok(model.domain().clone());
    };
    let bad = || Failure::Usage(format!("malformed --box `{spec}`"));
    if !spec.contains(':') {
        let hw: f64 = spec.parse().map_err(|_| bad())?;
        return Ok(DomainBox::new(vec![-hw; n], vec![hw; n])?);
    }
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for part in spec.split(',') {
        let (lo, hi) = part.split_once(':').ok_or_else(bad)?;
        lower.push(lo.trim().parse::<f64>().map_err(|_| bad())?);
        upper.push(hi.trim().parse::<f64>().map_err(|_| bad())?);
    }
    if lower.len() == 1 && n > 1 {
        lower = vec![lower[0]; n];
        upper = vec![upper[0]; n];
    }
    if lower.len() != n {
        return Err(bad());
    }
    Ok(DomainBox::new(lower, upper)?)
}

fn hjb(a: &HjbArgs, out: &Path) -> Outcome<()> {
    let started = Instant::now();
    let loaded = load_model(&a.model, out)?;
    let boundary: BoundaryMode = a.boundary.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let domain = parse_box(a.domain.as_deref(), &loaded.model)?;
    let spec = GridSpec::uniform(a.nt, a.nx, domain)
        .with_boundary(boundary)
        .with_artificial_viscosity(a.artificial_viscosity)
        .with_max_steps(a.max_steps);
    let grid = solve_hjb(&loaded.model, &spec)?;
    if !a.no_csv {
        grid.write_csv(create(out, "value_grid.csv")?)?;
    }
    let errors = loaded.fixture.as_ref().map(|fx| closed_form_errors(&grid, fx));
    write_json(
        out,
        "summary.json",
        json!({
            "command": "hjb",
            "model": loaded.source,
            "grid": { "nt": a.nt, "nx": a.nx, "box": [spec.domain.lower, spec.domain.upper] },
            "meta": grid.meta,
            "closed_form": errors,
        }),
        started,
    )
}

const PROBE_T: [f64; 4] = [0.0, 0.25, 0.5, 0.75];
const PROBE_X: [f64; 5] = [-1.6, -0.8, 0.4, 1.2, 1.6];

fn closed_form_errors(grid: &ValueGrid, fx: &ClosedFormExample) -> Value {
    let value = fx.value_fn();
    let max_error = grid.max_interior_error(|t, x| value(t, x), 0.2);
    let probes: Vec<Value> = PROBE_T
        .iter()
        .flat_map(|&t| PROBE_X.iter().map(move |&x| (t, x)))
        .filter(|(_, x)| grid.dim() == 1 && grid.interpolate(0.0, &[*x]).is_finite())
        .map(|(t, x)| {
            let (g, c) = (grid.interpolate(t, &[x]), fx.value(t, &[x]));
            json!({ "t": t, "x": x, "grid": g, "closed_form": c, "error": (g - c).abs() })
        })
        .collect();
    let probe_max = probes.iter().filter_map(|p| p["error"].as_f64()).fold(0.0, f64::max);
    json!({ "max_interior_error": max_error, "interior_margin": 0.2, "probe_max_error": probe_max, "probes": probes })
}

struct AdjointRun {
    bundle: PathBundle,
    adjoints: AdjointPath,
    analytic_errors: Option<(f64, f64)>,
}

fn adjoint_run(loaded: &Loaded, sim: &SimArgs, degree: usize) -> Outcome<AdjointRun> {
    let (policy, _, x0) = policy_and_x0(sim, loaded)?;
    let mut bundle = simulate_paths(&loaded.model, &policy, &x0, sim.steps, sim.paths, sim.seed)?;
    let b = basis(degree, PolynomialBasis::default().ridge);
    solve_by_transform(&loaded.model, &bundle, b)?.attach_to(&mut bundle)?;
    let (adjoints, analytic_errors) = match &loaded.fixture {
        Some(fx) if fx.initial_state() == x0.as_slice() || sim.x0.is_none() => {
            let both = fixture_adjoints(fx, &bundle, b)?;
            (both.numeric, Some((both.max_error_p, both.max_error_big_p)))
        }
        Some(fx) => (solve_adjoints(&loaded.model, &bundle, fx.derivatives(), b)?, None),
        None => {
            let derivatives = CoefficientDerivatives::finite_difference(&loaded.model);
            (solve_adjoints(&loaded.model, &bundle, &derivatives, b)?, None)
        }
    };
    Ok(AdjointRun {
        bundle,
        adjoints,
        analytic_errors,
    })
}

fn adjoint(a: &AdjointArgs, out: &Path, check_mp: bool) -> Outcome<()> {
    let started = Instant::now();
    let loaded = load_model(&a.sim.model, out)?;
    let run = adjoint_run(&loaded, &a.sim, a.degree)?;
    let (p0, big_p0) = run.adjoints.mean_at(0);
    let mut body = json!({
        "command": if check_mp { "verify-mp" } else { "adjoint" },
        "model": loaded.source,
        "paths": a.sim.paths,
        "steps": a.sim.steps,
        "seed": a.sim.seed,
        "mean_p0": p0,
        "mean_big_p0": big_p0,
        "max_asymmetry": run.adjoints.max_asymmetry(),
        "closed_form_error": run.analytic_errors.map(|(p, bp)| json!({ "p": p, "big_p": bp })),
    });
    if !check_mp {
        return write_json(out, "summary.json", body, started);
    }
    let options = MaximumConditionOptions {
        tolerance: a.tolerance,
        ..MaximumConditionOptions::default()
    };
    let report = verify_maximum_condition(&loaded.model, &run.bundle, &run.adjoints, options)?;
    let passed = report.all_passed();
    body["maximum_condition"] = json!(report);
    body["passed"] = json!(passed);
    write_json(out, "summary.json", body, started)?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "maximum condition violated in {} of {} cells",
            report.cells - report.passed,
            report.cells
        )))
    }
}

fn inclusion_reports(fx: &ClosedFormExample, which: &[Inclusion], s: &[f64]) -> Outcome<Vec<InclusionReport>> {
    let opts = JetOptions::default();
    which
        .iter()
        .map(|inc| {
            Ok(match inc {
                Inclusion::Spatial => verify_spatial_inclusions(fx, s, &opts)?,
                Inclusion::Time => verify_time_inclusions(fx, s, &opts)?,
                Inclusion::Parabolic => verify_parabolic_inclusions(fx, s, &opts)?,
            })
        })
        .collect()
}

fn verify_jets(a: &JetArgs, out: &Path) -> Outcome<()> {
    let started = Instant::now();
    let fx = a.fixture.parse::<FixtureId>()?.load();
    let which = match &a.theorem {
        Some(t) => vec![t.parse::<Inclusion>().map_err(|e| Failure::Usage(e.to_string()))?],
        None => vec![Inclusion::Spatial, Inclusion::Time, Inclusion::Parabolic],
    };
    let reports = inclusion_reports(&fx, &which, &a.s)?;
    write_margin_csv(
        reports
            .iter()
            .flat_map(|r| r.verdicts().map(move |(l, v)| (format!("{}:{l}", r.inclusion), v))),
        create(out, "margins.csv")?,
    )?;
    let passed = reports.iter().all(|r| r.passed);
    write_json(
        out,
        "summary.json",
        json!({ "command": "verify-jets", "fixture": a.fixture, "reports": reports, "passed": passed }),
        started,
    )?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Verification("jet inclusion checks failed".into()))
    }
}

fn expansion(a: &ExpansionArgs, out: &Path) -> Outcome<()> {
    let started = Instant::now();
    if a.expect_slope.as_ref().is_some_and(|r| r.len() != 2) {
        return Err(Failure::Usage("--expect-slope takes `lo,hi`".into()));
    }
    let loaded = load_model(&a.sim.model, out)?;
    let (policy, policy_label, x0) = policy_and_x0(&a.sim, &loaded)?;
    let table = small_mu_expansion_check(&loaded.model, &policy, &x0, &a.mus, a.sim.steps, a.sim.paths, a.sim.seed)?;
    let slope = table.fitted_slope();
    let passed = match (&a.expect_slope, slope) {
        (Some(r), Some(s)) => Some(s >= r[0] && s <= r[1]),
        (Some(_), None) => Some(false),
        (None, _) => None,
    };
    write_json(
        out,
        "summary.json",
        json!({
            "command": "expansion-check",
            "model": loaded.source,
            "policy": policy_label,
            "x0": x0,
            "steps": a.sim.steps,
            "table": table,
            "fitted_slope": slope,
            "expected_slope": a.expect_slope,
            "passed": passed,
        }),
        started,
    )?;
    match passed {
        Some(false) => Err(Failure::Verification(format!("fitted slope {slope:?} outside the expected range"))),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    value: f64,
    tolerance: f64,
    detail: Value,
}

fn check(name: &'static str, value: f64, tolerance: f64, detail: Value) -> Check {
    Check {
        name,
        passed: value <= tolerance,
        value,
        tolerance,
        detail,
    }
}

fn reproduce(a: &ReproduceArgs, out: &Path) -> Outcome<()> {
    let started = Instant::now();
    let id: FixtureId = a.example.parse()?;
    let fx = id.load();
    let model = fx.model();
    let x0 = fx.initial_state().to_vec();
    let horizon = model.horizon();
    let mut checks = Vec::new();

    let grid = solve_hjb(model, &GridSpec::uniform(11, 241, DomainBox::cube(1, 3.0)))?;
    let errors = closed_form_errors(&grid, &fx);
    checks.push(match id {
        FixtureId::Example51 => check(
            "hjb_closed_form",
            errors["max_interior_error"].as_f64().unwrap_or(f64::NAN),
            5e-3,
            errors.clone(),
        ),
        FixtureId::Example52 => check(
            "hjb_closed_form",
            errors["probe_max_error"].as_f64().unwrap_or(f64::NAN),
            2e-2,
            errors.clone(),
        ),
    });

    let mismatches: Vec<Value> = grid.t_nodes[..grid.t_nodes.len() - 1]
        .iter()
        .filter_map(|&s| {
            let x = fx.optimal_state(s);
            let (g, c) = (grid.policy_at(s, &x)?, fx.optimal_control(s, &x));
            (g != c).then(|| json!({ "s": s, "x": x, "grid": g, "closed_form": c }))
        })
        .collect();
    checks.push(check("hjb_policy_on_trajectory", mismatches.len() as f64, 0.0, json!(mismatches)));

    let n_paths = 20_000;
    let mut dominance = Vec::new();
    let v0 = fx.value(horizon.start, &x0);
    let mut worst_gap = f64::NEG_INFINITY;
    for i in 0..model.controls().len() {
        let costs = simulate_path_costs(model, &Policy::Constant(i), &x0, 200, n_paths, a.seed)?;
        let est = cost_from_samples(model.risk(), &costs.total())?;
        let gap = v0 - (est.point_estimate + 3.0 * est.std_error);
        worst_gap = worst_gap.max(gap);
        dominance.push(json!({ "control": i, "cost": est, "value_minus_cost_upper": gap }));
    }
    checks.push(check("value_below_constant_policy_costs", worst_gap, 0.0, json!(dominance)));

    let optimal = simulate_path_costs(model, &Policy::Feedback(fx.optimal_feedback()), &x0, 200, n_paths, a.seed)?;
    let est = cost_from_samples(model.risk(), &optimal.total())?;
    checks.push(check(
        "optimal_policy_cost",
        (est.point_estimate - v0).abs() - 3.0 * est.std_error,
        1e-3,
        json!({ "cost": est, "value": v0 }),
    ));

    let sim = SimArgs {
        model: ModelArgs {
            fixture: Some(a.example.clone()),
            config: None,
            risk: None,
        },
        policy: None,
        x0: None,
        paths: 256,
        steps: 100,
        seed: a.seed,
    };
    let loaded = Loaded {
        model: model.clone(),
        fixture: Some(fx.clone()),
        source: json!({ "fixture": a.example }),
    };
    let run = adjoint_run(&loaded, &sim, 3)?;
    let (ep, ebp) = run.analytic_errors.unwrap_or((f64::NAN, f64::NAN));
    checks.push(check("adjoint_closed_form", ep.max(ebp), 5e-3, json!({ "p": ep, "big_p": ebp })));
    let mp = verify_maximum_condition(model, &run.bundle, &run.adjoints, MaximumConditionOptions::default())?;
    checks.push(check(
        "maximum_condition",
        (mp.cells - mp.passed) as f64,
        0.0,
        json!(mp),
    ));

    let reports = inclusion_reports(&fx, &[Inclusion::Spatial, Inclusion::Time, Inclusion::Parabolic], &[0.25, 0.5, 0.75])?;
    let h1 = reports
        .iter()
        .flat_map(|r| r.samples.iter().map(|s| s.script_h1.abs()))
        .fold(0.0, f64::max);
    checks.push(check("script_h1_zero_on_trajectory", h1, 1e-12, Value::Null));
    for r in &reports {
        let name = match r.inclusion {
            Inclusion::Spatial => "spatial_jet_inclusions",
            Inclusion::Time => "time_jet_inclusions",
            Inclusion::Parabolic => "parabolic_jet_inclusions",
        };
        let failed = r.samples.iter().filter(|s| !s.passed).count();
        checks.push(check(name, failed as f64, 0.0, json!(r)));
    }
    write_margin_csv(
        reports
            .iter()
            .flat_map(|r| r.verdicts().map(move |(l, v)| (format!("{}:{l}", r.inclusion), v))),
        create(out, "margins.csv")?,
    )?;
    grid.write_csv(create(out, "value_grid.csv")?)?;

    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    for c in &checks {
        println!("{} {:<34} value {:.3e} tolerance {:.1e}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
    }
    write_json(
        out,
        "report.json",
        json!({
            "command": "reproduce",
            "example": id.to_string(),
            "seed": a.seed,
            "passed": failed.is_empty(),
            "failed": failed,
            "checks": checks,
        }),
        started,
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!("failed checks: {}", failed.join(", "))))
    }
}
