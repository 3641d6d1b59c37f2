//! Built-in estimators and the name-keyed registry that constructs them.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use nalgebra::Rotation2;

use crate::bounds::{
    cantelli_bound, g_moments, halfspace_cheby_bound, halfspace_tangents, offline_polynomial_eval,
    quadform_first_two_moments, sos_risk_bound, Bound, HalfSpace, SosCertificate, SOS_DEGREES,
};
use crate::mc::{mc_control_risk_only, mc_mixture_risk, mc_position_risk, McConfig, McRisk};
use crate::propagation::MAX_PROPAGATION_ORDER;
use crate::qfmvg::{gmm_step_risk, CdfMethod, GROUND_TRUTH_TOL};
use crate::scenario::{AgentKind, Ellipsoid, ReportDiagnostics, RiskReport, Scenario, StepRecord};
use crate::statmoments::{rotate_ellipsoid, MomentArray2};

use super::{PipelineError, RiskMethod, StepAgent, StepContext, StepValue};

const GAUSSIAN_ONLY: &str = "propagated positions are not Gaussian; use a moment bound or mc";

/// Typed description of a built-in method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Imhof { tol: f64 },
    Ltz,
    CantelliQuadform,
    CantelliHalfspace { n_h: usize },
    Sos { degree: usize },
    Mc { samples: usize, seed: u64 },
}

impl Method {
    pub fn build(&self) -> Box<dyn RiskMethod> {
        match *self {
            Method::Imhof { tol } => Box::new(ImhofMethod { tol }),
            Method::Ltz => Box::new(LtzMethod),
            Method::CantelliQuadform => Box::new(CantelliQuadformMethod),
            Method::CantelliHalfspace { n_h } => Box::new(CantelliHalfspaceMethod { n_h }),
            Method::Sos { degree } => Box::new(SosMethod { degree }),
            Method::Mc { samples, seed } => Box::new(McMethod {
                config: McConfig::new(samples, seed),
            }),
        }
    }

    /// Parses `name[:param]` with the built-in names.
    pub fn parse(spec: &str, opts: &MethodOptions) -> Result<Method, PipelineError> {
        let (name, param) = split_spec(spec);
        let method = match name {
            "imhof" => Method::Imhof {
                tol: parse_param(param, GROUND_TRUTH_TOL, name)?,
            },
            "ltz" => {
                no_param(param, name)?;
                Method::Ltz
            }
            "cantelli" => {
                no_param(param, name)?;
                Method::CantelliQuadform
            }
            "cheby-hs" => Method::CantelliHalfspace {
                n_h: parse_param(param, 12, name)?,
            },
            "sos" => Method::Sos {
                degree: parse_param(param, 4, name)?,
            },
            "mc" => {
                let samples = match param {
                    Some(_) => parse_param(param, 0, name)?,
                    None => opts.mc_samples.unwrap_or(100_000),
                };
                let seed = opts
                    .seed
                    .ok_or_else(|| PipelineError::Param("mc needs an explicit seed".into()))?;
                Method::Mc { samples, seed }
            }
            _ => {
                return Err(PipelineError::UnknownMethod {
                    name: name.to_string(),
                    available: BUILTIN_NAMES.join(", "),
                })
            }
        };
        method.validate()?;
        Ok(method)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        match *self {
            Method::Imhof { tol } if !(tol > 0.0 && tol < 1.0) => {
                Err(PipelineError::Param(format!("imhof tolerance must lie in (0, 1), got {tol}")))
            }
            Method::CantelliHalfspace { n_h } if !(3..=4096).contains(&n_h) => Err(PipelineError::Param(format!(
                "cheby-hs needs between 3 and 4096 half-spaces, got {n_h}"
            ))),
            Method::Sos { degree } if !SOS_DEGREES.contains(&degree) || 2 * degree > MAX_PROPAGATION_ORDER => {
                Err(PipelineError::Param(format!(
                    "sos degree {degree} unsupported; use one of {:?} (even degrees only)",
                    SOS_DEGREES
                )))
            }
            Method::Mc { samples: 0, .. } => Err(PipelineError::Param("mc needs at least one sample".into())),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Imhof { tol } => write!(f, "imhof:{tol:e}"),
            Method::Ltz => write!(f, "ltz"),
            Method::CantelliQuadform => write!(f, "cantelli"),
            Method::CantelliHalfspace { n_h } => write!(f, "cheby-hs:{n_h}"),
            Method::Sos { degree } => write!(f, "sos:{degree}"),
            Method::Mc { samples, .. } => write!(f, "mc:{samples}"),
        }
    }
}

const BUILTIN_NAMES: [&str; 6] = ["imhof", "ltz", "cantelli", "cheby-hs", "sos", "mc"];

fn split_spec(spec: &str) -> (&str, Option<&str>) {
    match spec.trim().split_once(':') {
        Some((n, p)) => (n, Some(p)),
        None => (spec.trim(), None),
    }
}

fn parse_param<T: std::str::FromStr>(param: Option<&str>, default: T, name: &str) -> Result<T, PipelineError> {
    match param {
        None => Ok(default),
        Some(p) => p
            .parse()
            .map_err(|_| PipelineError::Param(format!("cannot parse parameter '{p}' of method {name}"))),
    }
}

fn no_param(param: Option<&str>, name: &str) -> Result<(), PipelineError> {
    match param {
        None => Ok(()),
        Some(p) => Err(PipelineError::Param(format!("method {name} takes no parameter (got '{p}')"))),
    }
}

/// Settings shared by every method a registry constructs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MethodOptions {
    pub seed: Option<u64>,
    pub mc_samples: Option<usize>,
}

pub type MethodFactory = Box<dyn Fn(Option<&str>, &MethodOptions) -> Result<Box<dyn RiskMethod>, PipelineError> + Send + Sync>;

struct Entry {
    help: String,
    factory: MethodFactory,
}

/// Methods constructible by name at run time from `name[:param]` strings.
pub struct MethodRegistry {
    entries: BTreeMap<String, Entry>,
}

impl Default for MethodRegistry {
    fn default() -> Self {
        MethodRegistry::builtin()
    }
}

impl MethodRegistry {
    pub fn empty() -> Self {
        MethodRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = MethodRegistry::empty();
        let help = [
            ("imhof", "imhof[:tol]   exact CDF by characteristic-function inversion (default tol 1e-10)"),
            ("ltz", "ltz           noncentral chi-square moment-matching approximation"),
            ("cantelli", "cantelli      Cantelli bound on the quadratic form (order-4 moments)"),
            ("cheby-hs", "cheby-hs[:n]  Cantelli bound on n circumscribing half-spaces (default 12)"),
            ("sos", "sos[:d]       degree-d SOS moment bound, d in {2,4,6,8} (default 4)"),
            ("mc", "mc[:N]        Monte Carlo with N samples; needs a seed"),
        ];
        for (name, text) in help {
            r.register(
                name,
                text,
                Box::new(move |param: Option<&str>, opts: &MethodOptions| {
                    let spec = match param {
                        Some(p) => format!("{name}:{p}"),
                        None => name.to_string(),
                    };
                    Ok(Method::parse(&spec, opts)?.build())
                }),
            );
        }
        r
    }

    pub fn register(&mut self, name: &str, help: &str, factory: MethodFactory) {
        self.entries.insert(
            name.to_string(),
            Entry {
                help: help.to_string(),
                factory,
            },
        );
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn help(&self) -> String {
        self.entries.values().map(|e| format!("  {}\n", e.help)).collect()
    }

    pub fn create(&self, spec: &str, opts: &MethodOptions) -> Result<Box<dyn RiskMethod>, PipelineError> {
        let (name, param) = split_spec(spec);
        let entry = self.entries.get(name).ok_or_else(|| PipelineError::UnknownMethod {
            name: name.to_string(),
            available: self.names().collect::<Vec<_>>().join(", "),
        })?;
        (entry.factory)(param, opts)
    }
}

fn require_mixture<'a>(ctx: &'a StepContext, label: &str) -> Result<&'a crate::scenario::Mixture2, PipelineError> {
    match &ctx.agent {
        StepAgent::Mixture(m) => Ok(m),
        StepAgent::Moments(_) => Err(PipelineError::MethodKind {
            method: label.to_string(),
            kind: AgentKind::ControlGmm.as_str(),
            reason: GAUSSIAN_ONLY,
        }),
    }
}

fn exact_step(ctx: &StepContext, method: CdfMethod, label: &str) -> Result<StepValue, PipelineError> {
    let m = require_mixture(ctx, label)?;
    let r = gmm_step_risk(m, &ctx.q_star, method)?;
    Ok(StepValue {
        value: r.value,
        upper_bound: false,
        modes: Some(r.modes),
        flags: r.flags,
    })
}

/// Evaluates a moment bound per mode and mixes the results.
fn bound_step<F>(ctx: &StepContext, label: &str, order: usize, bound: F) -> Result<StepValue, PipelineError>
where
    F: Fn(&MomentArray2, &Ellipsoid) -> Result<(Bound, Vec<String>), PipelineError>,
{
    let parts = ctx.mode_moments(label, order)?;
    debug_assert!(parts.iter().all(|(_, m)| m.order() == order), "moment order must match the method exactly");
    let mut flags: Vec<String> = Vec::new();
    let mut modes = Vec::with_capacity(parts.len());
    let mut value = 0.0;
    for (w, m) in &parts {
        let (b, extra) = bound(m, &ctx.q_star)?;
        for f in b.diagnostic.map(|d| d.as_str().to_string()).into_iter().chain(extra) {
            if !flags.contains(&f) {
                flags.push(f);
            }
        }
        value += w * b.value;
        modes.push(b.value);
    }
    Ok(StepValue {
        value: value.clamp(0.0, 1.0),
        upper_bound: true,
        modes: (parts.len() > 1 || ctx.mode_model == crate::scenario::ModeModel::Constant).then_some(modes),
        flags,
    })
}

fn gaussian_only(kind: AgentKind) -> Result<(), &'static str> {
    match kind {
        AgentKind::PositionGmm => Ok(()),
        AgentKind::ControlGmm => Err(GAUSSIAN_ONLY),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImhofMethod {
    pub tol: f64,
}

impl RiskMethod for ImhofMethod {
    fn label(&self) -> String {
        Method::Imhof { tol: self.tol }.to_string()
    }

    fn is_upper_bound(&self) -> bool {
        false
    }

    fn required_order(&self) -> usize {
        0
    }

    fn supports(&self, kind: AgentKind) -> Result<(), &'static str> {
        gaussian_only(kind)
    }

    fn step_risk(&self, ctx: &StepContext) -> Result<StepValue, PipelineError> {
        exact_step(ctx, CdfMethod::Imhof { tol: self.tol }, &self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtzMethod;

impl RiskMethod for LtzMethod {
    fn label(&self) -> String {
        Method::Ltz.to_string()
    }

    fn is_upper_bound(&self) -> bool {
        false
    }

    fn required_order(&self) -> usize {
        0
    }

    fn supports(&self, kind: AgentKind) -> Result<(), &'static str> {
        gaussian_only(kind)
    }

    fn step_risk(&self, ctx: &StepContext) -> Result<StepValue, PipelineError> {
        exact_step(ctx, CdfMethod::Ltz, &self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CantelliQuadformMethod;

impl RiskMethod for CantelliQuadformMethod {
    fn label(&self) -> String {
        Method::CantelliQuadform.to_string()
    }

    fn is_upper_bound(&self) -> bool {
        true
    }

    fn required_order(&self) -> usize {
        4
    }

    fn step_risk(&self, ctx: &StepContext) -> Result<StepValue, PipelineError> {
        bound_step(ctx, &self.label(), 4, |m, e| {
            let (q1, q2) = quadform_first_two_moments(m, e)?;
            Ok((cantelli_bound(q1 - 1.0, q2 - 2.0 * q1 + 1.0), Vec::new()))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CantelliHalfspaceMethod {
    pub n_h: usize,
}

impl RiskMethod for CantelliHalfspaceMethod {
    fn label(&self) -> String {
        Method::CantelliHalfspace { n_h: self.n_h }.to_string()
    }

    fn is_upper_bound(&self) -> bool {
        true
    }

    fn required_order(&self) -> usize {
        2
    }

    fn step_risk(&self, ctx: &StepContext) -> Result<StepValue, PipelineError> {
        // Tangents are placed in the ego body frame so the polygon turns with
        // the ego, then expressed in world-aligned axes.
        let body = rotate_ellipsoid(&ctx.q_star, ctx.pose.heading);
        let r = Rotation2::new(ctx.pose.heading);
        let hs: Vec<HalfSpace> = halfspace_tangents(&body, self.n_h)?
            .into_iter()
            .map(|h| HalfSpace { a: r * h.a, b: h.b })
            .collect();
        bound_step(ctx, &self.label(), 2, |m, _| Ok((halfspace_cheby_bound(&m.mean(), &m.cov(), &hs), Vec::new())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SosMethod {
    pub degree: usize,
}

impl RiskMethod for SosMethod {
    fn label(&self) -> String {
        Method::Sos { degree: self.degree }.to_string()
    }

    fn is_upper_bound(&self) -> bool {
        true
    }

    fn required_order(&self) -> usize {
        2 * self.degree
    }

    fn step_risk(&self, ctx: &StepContext) -> Result<StepValue, PipelineError> {
        let d = self.degree;
        bound_step(ctx, &self.label(), 2 * d, |m, e| {
            let (b, _) = sos_risk_bound(&g_moments(m, e, d)?, d)?;
            let flags = if b.repair_eps > 0.0 { vec!["repaired".to_string()] } else { Vec::new() };
            Ok((b.bound, flags))
        })
    }
}

/// Applies a stored SOS certificate to every step without solving.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateMethod {
    pub certificate: SosCertificate,
}

impl RiskMethod for CertificateMethod {
    fn label(&self) -> String {
        format!("cert:{}", self.certificate.degree)
    }

    fn is_upper_bound(&self) -> bool {
        true
    }

    fn required_order(&self) -> usize {
        2 * self.certificate.degree
    }

    fn step_risk(&self, ctx: &StepContext) -> Result<StepValue, PipelineError> {
        let d = self.certificate.degree;
        bound_step(ctx, &self.label(), 2 * d, |m, e| {
            Ok((offline_polynomial_eval(&self.certificate, &g_moments(m, e, d)?)?, Vec::new()))
        })
    }
}

/// Monte Carlo reference. Trajectory risk is the fraction of sample paths
/// that enter the ego set at any step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McMethod {
    pub config: McConfig,
}

impl McMethod {
    fn report(&self, risk: &McRisk) -> RiskReport {
        RiskReport {
            method: self.label(),
            per_step: risk
                .per_step
                .iter()
                .enumerate()
                .map(|(t, e)| StepRecord {
                    t: t + 1,
                    value: e.p_hat,
                    upper_bound: false,
                    modes: None,
                    flags: Vec::new(),
                })
                .collect(),
            trajectory_risk: risk.trajectory.p_hat,
            wall_time_s: 0.0,
            seed: Some(self.config.master_seed),
            diagnostics: Some(ReportDiagnostics {
                alternate_trajectory_risk: None,
                notes: vec![format!(
                    "trajectory risk is the per-path union over {} samples (standard error {:.3e})",
                    risk.trajectory.n, risk.trajectory.std_err
                )],
            }),
        }
    }
}

impl RiskMethod for McMethod {
    fn label(&self) -> String {
        Method::Mc {
            samples: self.config.samples,
            seed: self.config.master_seed,
        }
        .to_string()
    }

    fn is_upper_bound(&self) -> bool {
        false
    }

    fn required_order(&self) -> usize {
        0
    }

    fn seed(&self) -> Option<u64> {
        Some(self.config.master_seed)
    }

    /// Single-step estimate for a position mixture; each step uses its own
    /// stream derived from the master seed and the step index.
    fn step_risk(&self, ctx: &StepContext) -> Result<StepValue, PipelineError> {
        let m = match &ctx.agent {
            StepAgent::Mixture(m) => m,
            StepAgent::Moments(_) => {
                return Err(PipelineError::Param(
                    "mc cannot sample from moments; assess the whole control scenario instead".into(),
                ))
            }
        };
        let cfg = McConfig {
            master_seed: self.config.master_seed.wrapping_add((ctx.t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..self.config
        };
        let e = mc_mixture_risk(m, &ctx.q_star, &cfg)?;
        Ok(StepValue {
            value: e.p_hat,
            upper_bound: false,
            modes: None,
            flags: Vec::new(),
        })
    }

    fn assess(&self, s: &Scenario) -> Result<RiskReport, PipelineError> {
        let start = Instant::now();
        let risk = match s.agent().kind() {
            AgentKind::PositionGmm => mc_position_risk(s, &self.config)?,
            AgentKind::ControlGmm => mc_control_risk_only(s, &self.config)?,
        };
        let mut report = self.report(&risk);
        report.wall_time_s = start.elapsed().as_secs_f64();
        Ok(report)
    }
}
