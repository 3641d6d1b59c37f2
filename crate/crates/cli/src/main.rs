//! `riskbound` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numeric failure, 64 usage.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use riskbound::bounds::{g_moments, offline_polynomial_eval, sos_risk_bound, BoundsError, GMoments, SosCertificate, SOS_DEGREES};
use riskbound::pipeline::{step_context, CertificateMethod, MethodOptions, MethodRegistry, PipelineError, RiskMethod};
use riskbound::scenario::{generate_scenario, serialize_scenario, GeneratorParams, ScenarioError};
use riskbound::{parse_scenario, AgentKind, ModeModel, RiskReport, Scenario};

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "riskbound", version, about = "Collision risk of an ego trajectory against predicted agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Assess one scenario with one method and write a risk report.
    Assess(AssessArgs),
    /// Write seeded synthetic scenarios.
    Generate(GenerateArgs),
    /// Compare several methods on one scenario against the first one.
    Compare(CompareArgs),
    /// Solve an SOS program and store its certificate for offline reuse.
    Certify(CertifyArgs),
    /// Time methods over a directory of scenarios.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct SamplingArgs {
    /// Seed for Monte Carlo methods (required when one is used).
    #[arg(long)]
    seed: Option<u64>,
    /// Sample count for `mc` given without a parameter.
    #[arg(long = "mc-samples")]
    mc_samples: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl SamplingArgs {
    fn options(&self) -> MethodOptions {
        MethodOptions {
            seed: self.seed,
            mc_samples: self.mc_samples,
        }
    }
}

#[derive(Debug, Args)]
struct AssessArgs {
    /// Scenario JSON file.
    scenario: Option<PathBuf>,
    /// Method as `name[:param]`, e.g. `imhof:1e-10`, `ltz`, `sos:4`, `cheby-hs:12`, `mc:100000`.
    #[arg(long)]
    method: Option<String>,
    /// Report destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-step `t,value,upper_bound,method` rows here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Evaluate a stored SOS certificate instead of solving.
    #[arg(long, conflicts_with = "method")]
    cert: Option<PathBuf>,
    /// With `--cert`: evaluate on a stored moment sequence of g instead of a scenario.
    #[arg(long, requires = "cert", conflicts_with = "scenario")]
    gmoments: Option<PathBuf>,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Position,
    Control,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    PerStep,
    Constant,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Number of scenarios.
    #[arg(long)]
    n: usize,
    /// Mixture components per step.
    #[arg(long, default_value_t = 3)]
    components: usize,
    /// Horizon in steps.
    #[arg(long = "T", default_value_t = 30)]
    horizon: usize,
    /// Seed of the first scenario; scenario i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = KindArg::Position)]
    kind: KindArg,
    #[arg(long = "mode-model", value_enum, default_value_t = ModeArg::PerStep)]
    mode_model: ModeArg,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    scenario: PathBuf,
    /// Comma-separated methods; the first is the reference column.
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<String>,
    /// Write the table as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Debug, Args)]
struct CertifyArgs {
    /// SOS degree (even, at most 8).
    #[arg(long)]
    degree: usize,
    /// Moment sequence `{"values": [1, E[g], ...]}` of g = xᵀQx − 1.
    #[arg(long, conflicts_with_all = ["scenario", "step"], required_unless_present = "scenario")]
    gmoments: Option<PathBuf>,
    /// Scenario whose step `--step` supplies the moments.
    #[arg(long, requires = "step")]
    scenario: Option<PathBuf>,
    /// Step index counted from 1.
    #[arg(long)]
    step: Option<usize>,
    /// Certificate destination.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Directory of scenario JSON files.
    dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "ltz,imhof:1e-10,cantelli,cheby-hs:12,sos:2,sos:4,sos:6")]
    methods: Vec<String>,
    /// Write the timing table as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Validation(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Validation(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

impl From<BoundsError> for CliError {
    fn from(e: BoundsError) -> Self {
        match e {
            BoundsError::Order { .. } | BoundsError::Param(_) | BoundsError::Certificate(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    parse_scenario(&read(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn load_certificate(path: &Path) -> Result<SosCertificate, CliError> {
    SosCertificate::from_json(&read(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Method construction problems are usage errors.
fn create_method(spec: &str, opts: &MethodOptions) -> Result<Box<dyn RiskMethod>, CliError> {
    let registry = MethodRegistry::builtin();
    registry.create(spec, opts).map_err(|e| {
        let mut msg = e.to_string();
        if matches!(e, PipelineError::UnknownMethod { .. }) {
            msg.push_str("\nmethods:\n");
            msg.push_str(&registry.help());
        }
        CliError::Usage(msg)
    })
}

fn init_threads(threads: usize) -> Result<(), CliError> {
    if threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_assess(a: &AssessArgs) -> Result<(), CliError> {
    init_threads(a.sampling.threads)?;
    if let Some(cert_path) = &a.cert {
        let cert = load_certificate(cert_path)?;
        if let Some(gpath) = &a.gmoments {
            let g = GMoments::from_json(&read(gpath)?).map_err(|e| CliError::Validation(format!("{}: {e}", gpath.display())))?;
            let b = offline_polynomial_eval(&cert, &g)?;
            let mut text = format!("{{\n  \"method\": \"cert:{}\",\n  \"bound\": {}", cert.degree, b.value);
            if let Some(d) = b.diagnostic {
                let _ = write!(text, ",\n  \"diagnostic\": \"{}\"", d.as_str());
            }
            text.push_str("\n}\n");
            return emit(a.out.as_deref(), &text);
        }
        let s = load_scenario(require_scenario(a)?)?;
        return finish_assess(a, CertificateMethod { certificate: cert }.assess(&s)?);
    }
    let spec = a
        .method
        .as_deref()
        .ok_or_else(|| CliError::Usage("assess needs --method (or --cert)".into()))?;
    let method = create_method(spec, &a.sampling.options())?;
    let s = load_scenario(require_scenario(a)?)?;
    finish_assess(a, method.assess(&s)?)
}

fn require_scenario(a: &AssessArgs) -> Result<&Path, CliError> {
    a.scenario
        .as_deref()
        .ok_or_else(|| CliError::Usage("assess needs a scenario file".into()))
}

fn finish_assess(a: &AssessArgs, report: RiskReport) -> Result<(), CliError> {
    if let Some(csv) = &a.csv {
        write(csv, &report.to_csv())?;
    }
    emit(a.out.as_deref(), &report.to_json())
}

fn cmd_generate(g: &GenerateArgs) -> Result<(), CliError> {
    if g.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    fs::create_dir_all(&g.out).map_err(|e| CliError::Usage(format!("{}: {e}", g.out.display())))?;
    let kind = match g.kind {
        KindArg::Position => AgentKind::PositionGmm,
        KindArg::Control => AgentKind::ControlGmm,
    };
    let mode_model = match g.mode_model {
        ModeArg::PerStep => ModeModel::PerStep,
        ModeArg::Constant => ModeModel::Constant,
    };
    let width = (g.n - 1).to_string().len().max(4);
    for i in 0..g.n {
        let params = GeneratorParams::new(g.horizon, g.components, kind, mode_model, g.seed.wrapping_add(i as u64));
        let s = generate_scenario(&params).map_err(|e| match e {
            ScenarioError::Param(m) => CliError::Usage(m),
            other => CliError::Validation(other.to_string()),
        })?;
        let path = g.out.join(format!("scenario_{i:0width$}.json"));
        fs::write(&path, serialize_scenario(&s)).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    }
    println!("wrote {} scenarios to {}", g.n, g.out.display());
    Ok(())
}

struct Row {
    method: String,
    report: RiskReport,
}

fn max_errors(reference: &RiskReport, r: &RiskReport) -> (f64, f64) {
    let mut abs: f64 = 0.0;
    let mut rel: f64 = 0.0;
    for (a, b) in reference.per_step.iter().zip(&r.per_step) {
        let d = (a.value - b.value).abs();
        abs = abs.max(d);
        if a.value > 0.0 {
            rel = rel.max(d / a.value);
        }
    }
    (abs, rel)
}

fn cmd_compare(c: &CompareArgs) -> Result<(), CliError> {
    init_threads(c.sampling.threads)?;
    let opts = c.sampling.options();
    let methods = c
        .methods
        .iter()
        .map(|m| create_method(m, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let s = load_scenario(&c.scenario)?;
    let rows = methods
        .iter()
        .map(|m| {
            Ok(Row {
                method: m.label(),
                report: m.assess(&s)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let with_errors = rows.len() > 1;
    let mut text = String::new();
    let mut csv = String::from("method,trajectory_risk,upper_bound");
    let _ = write!(text, "{:<16} {:>14} {:>6}", "method", "trajectory", "bound");
    if with_errors {
        let _ = write!(text, " {:>13} {:>13}", "max_abs_err", "max_rel_err");
        csv.push_str(",max_abs_err,max_rel_err");
    }
    let _ = writeln!(text, " {:>12}", "wall_s");
    csv.push_str(",wall_time_s\n");
    for row in &rows {
        let r = &row.report;
        let bound = r.per_step.iter().any(|p| p.upper_bound);
        let _ = write!(text, "{:<16} {:>14.8e} {:>6}", row.method, r.trajectory_risk, bound);
        let _ = write!(csv, "{},{},{}", row.method, r.trajectory_risk, bound);
        if with_errors {
            let (abs, rel) = max_errors(&rows[0].report, r);
            let _ = write!(text, " {abs:>13.5e} {rel:>13.5e}");
            let _ = write!(csv, ",{abs},{rel}");
        }
        let _ = writeln!(text, " {:>12.6}", r.wall_time_s);
        let _ = writeln!(csv, ",{}", r.wall_time_s);
    }
    print!("{text}");
    if let Some(p) = &c.csv {
        write(p, &csv)?;
    }
    Ok(())
}

fn cmd_certify(c: &CertifyArgs) -> Result<(), CliError> {
    if !SOS_DEGREES.contains(&c.degree) {
        return Err(CliError::Usage(format!(
            "degree {} is not supported; use an even degree from {SOS_DEGREES:?}",
            c.degree
        )));
    }
    let g = match (&c.gmoments, &c.scenario, c.step) {
        (Some(path), _, _) => {
            GMoments::from_json(&read(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        }
        (None, Some(path), Some(step)) => {
            let s = load_scenario(path)?;
            if step == 0 || step > s.horizon() {
                return Err(CliError::Validation(format!("--step {step} outside 1..={}", s.horizon())));
            }
            let ctx = step_context(&s, step - 1, 2 * c.degree)?;
            g_moments(&ctx.moments("certify", 2 * c.degree)?, &ctx.q_star, c.degree)?
        }
        _ => return Err(CliError::Usage("certify needs --gmoments or --scenario with --step".into())),
    };
    let (bound, cert) = sos_risk_bound(&g, c.degree)?;
    write(&c.out, &cert.to_json())?;
    println!("degree {} bound {} written to {}", c.degree, bound.bound.value, c.out.display());
    Ok(())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn cmd_bench(b: &BenchArgs) -> Result<(), CliError> {
    if !b.dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", b.dir.display())));
    }
    init_threads(b.sampling.threads)?;
    let opts = b.sampling.options();
    let methods = b
        .methods
        .iter()
        .map(|m| create_method(m, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let mut files: Vec<PathBuf> = fs::read_dir(&b.dir)
        .map_err(|e| CliError::Usage(format!("{}: {e}", b.dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no scenario files in {}", b.dir.display())));
    }
    let scenarios = files.iter().map(|f| load_scenario(f)).collect::<Result<Vec<_>, _>>()?;

    let mut text = format!(
        "{} scenarios\n{:<16} {:>6} {:>12} {:>12} {:>12} {:>12}\n",
        scenarios.len(),
        "method",
        "n",
        "mean_ms",
        "p50_ms",
        "p90_ms",
        "p99_ms"
    );
    let mut csv = String::from("method,n,mean_ms,p50_ms,p90_ms,p99_ms\n");
    for m in &methods {
        let mut times = Vec::with_capacity(scenarios.len());
        for s in &scenarios {
            if m.supports(s.agent().kind()).is_err() {
                continue;
            }
            times.push(1e3 * m.assess(s)?.wall_time_s);
        }
        if times.is_empty() {
            let _ = writeln!(text, "{:<16} {:>6} {:>12}", m.label(), 0, "n/a");
            continue;
        }
        times.sort_by(f64::total_cmp);
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let (p50, p90, p99) = (percentile(&times, 0.5), percentile(&times, 0.9), percentile(&times, 0.99));
        let _ = writeln!(
            text,
            "{:<16} {:>6} {mean:>12.3} {p50:>12.3} {p90:>12.3} {p99:>12.3}",
            m.label(),
            times.len()
        );
        let _ = writeln!(csv, "{},{},{mean},{p50},{p90},{p99}", m.label(), times.len());
    }
    print!("{text}");
    if let Some(p) = &b.csv {
        write(p, &csv)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Assess(a) => cmd_assess(a),
        Command::Generate(g) => cmd_generate(g),
        Command::Compare(c) => cmd_compare(c),
        Command::Certify(c) => cmd_certify(c),
        Command::Bench(b) => cmd_bench(b),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
