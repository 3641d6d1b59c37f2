//! End-to-end assessment: per-step ego-frame contexts, dispatch to a
//! [`RiskMethod`], and aggregation of per-step values into a trajectory risk.

mod methods;

pub use methods::{
    CantelliHalfspaceMethod, CantelliQuadformMethod, CertificateMethod, ImhofMethod, LtzMethod, McMethod, Method,
    MethodFactory, MethodOptions, MethodRegistry, SosMethod,
};

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::bounds::BoundsError;
use crate::mc::McError;
use crate::propagation::{propagate_prediction, PropagationError};
use crate::qfmvg::QfError;
use crate::scenario::{AgentKind, Ellipsoid, Mixture2, ModeModel, Pose2, ReportDiagnostics, RiskReport, Scenario, StepRecord};
use crate::statmoments::{mixture_moments_2d, rotate_ellipsoid, MomentArray2, MomentError};

/// Values at or above `1 − SATURATION_EPS` are reported as exactly 1.
pub const SATURATION_EPS: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("method {method} cannot be applied to {kind} predictions: {reason}")]
    MethodKind {
        method: String,
        kind: &'static str,
        reason: &'static str,
    },
    #[error("method {method} needs position moments of order {needed}; order {have} is missing from the context")]
    InsufficientMoments { method: String, needed: usize, have: usize },
    #[error("unknown method '{name}' (available: {available})")]
    UnknownMethod { name: String, available: String },
    #[error("invalid method specification: {0}")]
    Param(String),
    #[error("step index {t} outside horizon {horizon}")]
    Step { t: usize, horizon: usize },
    #[error(transparent)]
    Qf(#[from] QfError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Mc(#[from] McError),
}

impl PipelineError {
    /// True for errors caused by the inputs rather than by numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::MethodKind { .. }
                | PipelineError::InsufficientMoments { .. }
                | PipelineError::UnknownMethod { .. }
                | PipelineError::Param(_)
                | PipelineError::Step { .. }
                | PipelineError::Mc(_)
                | PipelineError::Bounds(BoundsError::Order { .. } | BoundsError::Param(_))
                | PipelineError::Propagation(
                    PropagationError::Order { .. } | PropagationError::Kind(_) | PropagationError::Mode(_)
                )
        )
    }
}

/// The agent at one step, expressed relative to the ego position.
#[derive(Debug, Clone, PartialEq)]
pub enum StepAgent {
    /// Gaussian mixture over `position − ego position`.
    Mixture(Mixture2),
    /// Raw moments of `position − ego position`, one entry per persistent
    /// mode (a single entry of weight 1 when modes are not persistent).
    Moments(Vec<(f64, MomentArray2)>),
}

/// Everything a method needs to evaluate one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepContext {
    /// Step index from 0.
    pub t: usize,
    pub pose: Pose2,
    /// Collision ellipse expressed in world-aligned axes around the ego.
    pub q_star: Ellipsoid,
    pub mode_model: ModeModel,
    pub agent: StepAgent,
}

impl StepContext {
    pub fn kind(&self) -> AgentKind {
        match self.agent {
            StepAgent::Mixture(_) => AgentKind::PositionGmm,
            StepAgent::Moments(_) => AgentKind::ControlGmm,
        }
    }

    /// Highest moment order available (unbounded for mixtures).
    pub fn available_order(&self) -> usize {
        match &self.agent {
            StepAgent::Mixture(_) => usize::MAX,
            StepAgent::Moments(parts) => parts[0].1.order(),
        }
    }

    /// Raw moments up to `order`, one entry per mode that has to be
    /// evaluated separately: mixture components for persistent modes, the
    /// whole mixture otherwise.
    pub fn mode_moments(&self, method: &str, order: usize) -> Result<Vec<(f64, MomentArray2)>, PipelineError> {
        match &self.agent {
            StepAgent::Mixture(m) => match self.mode_model {
                ModeModel::Constant => m
                    .components()
                    .iter()
                    .map(|(w, c)| Ok((*w, mixture_moments_2d(&Mixture2::single(*c), order)?)))
                    .collect(),
                ModeModel::PerStep => Ok(vec![(1.0, mixture_moments_2d(m, order)?)]),
            },
            StepAgent::Moments(parts) => {
                let have = parts[0].1.order();
                if have < order {
                    return Err(PipelineError::InsufficientMoments {
                        method: method.to_string(),
                        needed: order,
                        have,
                    });
                }
                Ok(parts.iter().map(|(w, m)| (*w, m.truncated(order))).collect())
            }
        }
    }

    /// Raw moments of the whole step distribution up to `order`.
    pub fn moments(&self, method: &str, order: usize) -> Result<MomentArray2, PipelineError> {
        if let StepAgent::Mixture(m) = &self.agent {
            return Ok(mixture_moments_2d(m, order)?);
        }
        let parts = self.mode_moments(method, order)?;
        let mut total = MomentArray2::zeros(order);
        for (w, m) in &parts {
            total.add_scaled(*w, m);
        }
        Ok(total)
    }
}

/// Result of one method on one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepValue {
    pub value: f64,
    pub upper_bound: bool,
    /// Per-mode values whose weighted sum is `value`, when available.
    pub modes: Option<Vec<f64>>,
    pub flags: Vec<String>,
}

fn ego_ellipsoid(s: &Scenario, pose: &Pose2) -> Ellipsoid {
    rotate_ellipsoid(s.ellipsoid(), -pose.heading)
}

fn check_step(s: &Scenario, t: usize) -> Result<(), PipelineError> {
    if t >= s.horizon() {
        Err(PipelineError::Step { t, horizon: s.horizon() })
    } else {
        Ok(())
    }
}

/// Ego-frame context for step `t`. Control predictions are propagated to
/// `order` in the global frame first, and the moments are then translated.
pub fn step_context(s: &Scenario, t: usize, order: usize) -> Result<StepContext, PipelineError> {
    check_step(s, t)?;
    match s.agent().kind() {
        AgentKind::PositionGmm => Ok(position_context(s, t)),
        AgentKind::ControlGmm => {
            let mut all = step_contexts(s, order)?;
            Ok(all.swap_remove(t))
        }
    }
}

fn position_context(s: &Scenario, t: usize) -> StepContext {
    let pose = s.ego_trajectory()[t];
    StepContext {
        t,
        pose,
        q_star: ego_ellipsoid(s, &pose),
        mode_model: s.agent().mode_model(),
        agent: StepAgent::Mixture(s.agent().steps()[t].translated(&pose.position())),
    }
}

/// Contexts for every step; control predictions are propagated once.
pub fn step_contexts(s: &Scenario, order: usize) -> Result<Vec<StepContext>, PipelineError> {
    match s.agent().kind() {
        AgentKind::PositionGmm => Ok((0..s.horizon()).map(|t| position_context(s, t)).collect()),
        AgentKind::ControlGmm => {
            let order = order.max(2);
            let moments = propagate_prediction(s.agent(), order)?;
            Ok(moments
                .iter()
                .zip(s.ego_trajectory())
                .enumerate()
                .map(|(t, (pm, pose))| StepContext {
                    t,
                    pose: *pose,
                    q_star: ego_ellipsoid(s, pose),
                    mode_model: s.agent().mode_model(),
                    agent: StepAgent::Moments(pm.modes_about(&pose.position())),
                })
                .collect())
        }
    }
}

/// A risk estimator selectable at run time.
pub trait RiskMethod: Send + Sync {
    /// Canonical `name[:param]` label.
    fn label(&self) -> String;

    /// Whether values are guaranteed upper bounds rather than probabilities.
    fn is_upper_bound(&self) -> bool;

    /// Position-moment order consumed per step (0 when the method needs the
    /// Gaussian mixture itself).
    fn required_order(&self) -> usize;

    /// Whether the method applies to the given prediction kind; the reason
    /// is reported otherwise.
    fn supports(&self, kind: AgentKind) -> Result<(), &'static str> {
        let _ = kind;
        Ok(())
    }

    fn step_risk(&self, ctx: &StepContext) -> Result<StepValue, PipelineError>;

    /// Full assessment; the default evaluates steps independently and
    /// aggregates them.
    fn assess(&self, s: &Scenario) -> Result<RiskReport, PipelineError> {
        let start = Instant::now();
        self.check_kind(s.agent().kind())?;
        let contexts = step_contexts(s, self.required_order())?;
        let mut report = report_from_contexts(s, self, &contexts)?;
        report.wall_time_s = start.elapsed().as_secs_f64();
        Ok(report)
    }

    /// Sampling seed, for reports of randomized methods.
    fn seed(&self) -> Option<u64> {
        None
    }

    fn check_kind(&self, kind: AgentKind) -> Result<(), PipelineError> {
        self.supports(kind).map_err(|reason| PipelineError::MethodKind {
            method: self.label(),
            kind: kind.as_str(),
            reason,
        })
    }
}

/// `1 − Π_t (1 − p_t)`, accumulated in log space.
pub fn trajectory_risk_independent(per_step: &[f64]) -> f64 {
    if per_step.iter().any(|&p| p >= 1.0) {
        return 1.0;
    }
    let log_survival: f64 = per_step.iter().map(|&p| (-p.max(0.0)).ln_1p()).sum();
    -log_survival.exp_m1()
}

/// `Σ_z w_z (1 − Π_t (1 − p_{t,z}))` for modes that persist over the
/// horizon; `per_mode[z][t]`.
pub fn trajectory_risk_constant_mode(per_mode: &[Vec<f64>], weights: &[f64]) -> f64 {
    per_mode
        .iter()
        .zip(weights)
        .map(|(row, w)| w * trajectory_risk_independent(row))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

fn saturate(v: f64, flags: &mut Vec<String>) -> f64 {
    if (1.0 - SATURATION_EPS..1.0).contains(&v) {
        flags.push("saturated".into());
        1.0
    } else {
        v
    }
}

/// Trajectory value and the alternate reading from per-step records.
///
/// Persistent modes: the primary value is the mode-weighted union and the
/// alternate treats steps as independent with the mixed marginals.
/// Per-step modes: the primary value is the independent product of the
/// marginals and the alternate (when per-mode values exist and the mode
/// count is fixed) applies the mode-weighted union with time-averaged
/// weights.
pub fn aggregate(s: &Scenario, per_step: &[StepRecord], modes: &[Option<Vec<f64>>]) -> (f64, Option<f64>) {
    let marginals: Vec<f64> = per_step.iter().map(|r| r.value).collect();
    let independent = trajectory_risk_independent(&marginals);
    let rows = mode_rows(modes);
    match s.agent().mode_model() {
        ModeModel::Constant => {
            let weights = s.agent().constant_weights().expect("constant mode model");
            match rows {
                Some(rows) if rows.len() == weights.len() => {
                    let constant = trajectory_risk_constant_mode(&rows, &weights);
                    (constant, distinct(independent, constant))
                }
                _ => (independent, None),
            }
        }
        ModeModel::PerStep => {
            let alt = rows.and_then(|rows| {
                let steps = s.agent().steps();
                if rows.len() < 2 || steps.iter().any(|m| m.len() != rows.len()) {
                    return None;
                }
                let mut w = vec![0.0; rows.len()];
                for m in steps {
                    for (acc, wi) in w.iter_mut().zip(m.weights()) {
                        *acc += wi / steps.len() as f64;
                    }
                }
                distinct(trajectory_risk_constant_mode(&rows, &w), independent)
            });
            (independent, alt)
        }
    }
}

fn distinct(alt: f64, primary: f64) -> Option<f64> {
    ((alt - primary).abs() > 1e-15).then_some(alt)
}

/// Transposes per-step mode values to `[mode][step]`.
fn mode_rows(modes: &[Option<Vec<f64>>]) -> Option<Vec<Vec<f64>>> {
    let first = modes.first()?.as_ref()?;
    let k = first.len();
    let mut rows = vec![Vec::with_capacity(modes.len()); k];
    for m in modes {
        let m = m.as_ref().filter(|m| m.len() == k)?;
        for (row, v) in rows.iter_mut().zip(m) {
            row.push(*v);
        }
    }
    Some(rows)
}

/// Evaluates every context (in parallel, collected in step order) and
/// aggregates. `wall_time_s` is left at 0 for the caller to fill in.
pub fn report_from_contexts<M: RiskMethod + ?Sized>(
    s: &Scenario,
    method: &M,
    contexts: &[StepContext],
) -> Result<RiskReport, PipelineError> {
    method.check_kind(s.agent().kind())?;
    let order = method.required_order();
    if order > 0 {
        for ctx in contexts {
            let have = ctx.available_order();
            if have < order {
                return Err(PipelineError::InsufficientMoments {
                    method: method.label(),
                    needed: order,
                    have,
                });
            }
        }
    }
    let values: Vec<StepValue> = contexts
        .par_iter()
        .map(|ctx| method.step_risk(ctx))
        .collect::<Result<_, _>>()?;

    let constant = s.agent().mode_model() == ModeModel::Constant;
    let mut records = Vec::with_capacity(values.len());
    let mut modes = Vec::with_capacity(values.len());
    for (ctx, v) in contexts.iter().zip(values) {
        let mut flags = v.flags;
        let value = saturate(v.value, &mut flags);
        let mode_values = v.modes.map(|m| m.into_iter().map(|p| if p >= 1.0 - SATURATION_EPS { 1.0 } else { p }).collect::<Vec<_>>());
        records.push(StepRecord {
            t: ctx.t + 1,
            value,
            upper_bound: v.upper_bound,
            modes: if constant { mode_values.clone() } else { None },
            flags,
        });
        modes.push(mode_values);
    }
    let (trajectory, alternate) = aggregate(s, &records, &modes);
    let mut notes = Vec::new();
    if alternate.is_none() && s.agent().steps().iter().any(|m| m.len() > 1) && modes.iter().any(|m| m.is_none()) {
        notes.push("per-mode values unavailable; alternate mode reading not computed".to_string());
    }
    let mut traj_flags = Vec::new();
    let trajectory = saturate(trajectory, &mut traj_flags);
    if !traj_flags.is_empty() {
        notes.push("trajectory risk saturated to 1".to_string());
    }
    let diagnostics = (alternate.is_some() || !notes.is_empty()).then_some(ReportDiagnostics {
        alternate_trajectory_risk: alternate,
        notes,
    });
    Ok(RiskReport {
        method: method.label(),
        per_step: records,
        trajectory_risk: trajectory,
        wall_time_s: 0.0,
        seed: method.seed(),
        diagnostics,
    })
}

/// Assesses a scenario with a typed method description.
pub fn assess(s: &Scenario, method: &Method) -> Result<RiskReport, PipelineError> {
    method.build().assess(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{AgentPrediction, GaussianComponent2, InitialState};
    use nalgebra::{Matrix2, Vector2};
    use std::f64::consts::FRAC_PI_2;

    fn position_scenario(steps: Vec<Mixture2>, ego: Vec<Pose2>, e: Ellipsoid, mode_model: ModeModel) -> Scenario {
        let agent = AgentPrediction::new(AgentKind::PositionGmm, mode_model, steps, None).unwrap();
        Scenario::new("pipeline-test", ego, e, agent).unwrap()
    }

    fn chi2_scenario() -> Scenario {
        let c = GaussianComponent2::new(Vector2::zeros(), Matrix2::identity()).unwrap();
        position_scenario(
            vec![Mixture2::single(c)],
            vec![Pose2::new(0.0, 0.0, 0.0)],
            Ellipsoid::from_semi_axes(1.0, 1.0).unwrap(),
            ModeModel::PerStep,
        )
    }

    fn control_scenario() -> Scenario {
        let c = GaussianComponent2::new(Vector2::zeros(), Matrix2::new(0.0025, 0.0, 0.0, 0.0025)).unwrap();
        let init = InitialState { x: 0.0, y: 0.0, v: 1.0, theta: 0.0 };
        let agent = AgentPrediction::new(AgentKind::ControlGmm, ModeModel::PerStep, vec![Mixture2::single(c); 4], Some(init)).unwrap();
        let ego = (1..=4).map(|k| Pose2::new(k as f64 + 0.5, 0.3, 0.0)).collect();
        Scenario::new("control", ego, Ellipsoid::from_semi_axes(1.0, 0.8).unwrap(), agent).unwrap()
    }

    #[test]
    fn heading_rotates_ellipse() {
        let c = GaussianComponent2::point(Vector2::zeros());
        let s = position_scenario(
            vec![Mixture2::single(c)],
            vec![Pose2::new(0.0, 0.0, FRAC_PI_2)],
            Ellipsoid::new(Matrix2::new(1.0, 0.0, 0.0, 4.0)).unwrap(),
            ModeModel::PerStep,
        );
        let ctx = step_context(&s, 0, 0).unwrap();
        let q = ctx.q_star.q();
        assert!((q - Matrix2::new(4.0, 0.0, 0.0, 1.0)).abs().max() < 1e-15);
    }

    #[test]
    fn origin_context_is_raw_prediction() {
        let s = chi2_scenario();
        let ctx = step_context(&s, 0, 0).unwrap();
        assert_eq!(ctx.agent, StepAgent::Mixture(s.agent().steps()[0].clone()));
        assert_eq!(ctx.q_star.q(), s.ellipsoid().q());
        assert!(matches!(step_context(&s, 1, 0), Err(PipelineError::Step { t: 1, horizon: 1 })));
    }

    #[test]
    fn deterministic_point_matches_membership() {
        let e = Ellipsoid::from_semi_axes(2.0, 1.0).unwrap();
        for (px, heading, inside) in [(4.5, 0.0, true), (4.5, FRAC_PI_2, false), (5.5, 0.0, false), (2.8, FRAC_PI_2, true)] {
            // Ego at (3, 1); agent at (px, 1).
            let a = GaussianComponent2::point(Vector2::new(px, 1.0));
            let ego = Pose2::new(3.0, 1.0, heading);
            let s = position_scenario(vec![Mixture2::single(a)], vec![ego], e, ModeModel::PerStep);
            let direct = {
                let d = Vector2::new(px - 3.0, 0.0);
                let local = nalgebra::Rotation2::new(-heading) * d;
                e.contains(&local)
            };
            assert_eq!(direct, inside, "case set-up for px={px}");
            for m in [Method::Imhof { tol: 1e-10 }, Method::Ltz] {
                let r = assess(&s, &m).unwrap();
                assert_eq!(r.per_step[0].value, if inside { 1.0 } else { 0.0 }, "{m} px={px}");
            }
        }
    }

    #[test]
    fn chi2_context_exact_and_cantelli_level() {
        let s = chi2_scenario();
        let ctx = step_context(&s, 0, 0).unwrap();
        let exact = ImhofMethod { tol: 1e-10 }.step_risk(&ctx).unwrap();
        assert!((exact.value - (1.0 - (-0.5f64).exp())).abs() < 1e-9);
        assert!(!exact.upper_bound);
        let sos = SosMethod { degree: 2 }.step_risk(&ctx).unwrap();
        assert!(sos.upper_bound);
        assert!((sos.value - 0.8).abs() < 1e-4, "{}", sos.value);
        let cantelli = CantelliQuadformMethod.step_risk(&ctx).unwrap();
        assert!((cantelli.value - 0.8).abs() < 1e-12);
    }

    #[test]
    fn far_agent_is_zero_for_every_method() {
        let a = GaussianComponent2::point(Vector2::new(100.0, -40.0));
        let s = position_scenario(
            vec![Mixture2::single(a); 3],
            vec![Pose2::new(0.0, 0.0, 0.3); 3],
            Ellipsoid::from_semi_axes(2.0, 1.0).unwrap(),
            ModeModel::PerStep,
        );
        for m in [
            Method::Imhof { tol: 1e-10 },
            Method::Ltz,
            Method::CantelliQuadform,
            Method::CantelliHalfspace { n_h: 12 },
            Method::Sos { degree: 2 },
            Method::Sos { degree: 4 },
            Method::Mc { samples: 1000, seed: 1 },
        ] {
            let r = assess(&s, &m).unwrap();
            // Interior-point solutions stop slightly above the exact value 0.
            assert!(r.per_step.iter().all(|p| p.value < 1e-7), "{m}: {:?}", r.per_step);
            assert!(r.trajectory_risk < 1e-6, "{m}");
        }
    }

    #[test]
    fn independent_aggregation_examples() {
        assert_eq!(trajectory_risk_independent(&[0.0; 5]), 0.0);
        assert!((trajectory_risk_independent(&[0.37]) - 0.37).abs() < 1e-16);
        let p = trajectory_risk_independent(&[0.01; 30]);
        assert!((p - (1.0 - 0.99f64.powi(30))).abs() < 1e-14);
        assert!((p - 0.26030).abs() < 1e-5);
        assert_eq!(trajectory_risk_independent(&[0.2, 1.0]), 1.0);
    }

    #[test]
    fn constant_mode_aggregation_examples() {
        let rows = vec![vec![0.0; 4], vec![1.0; 4]];
        assert!((trajectory_risk_constant_mode(&rows, &[0.3, 0.7]) - 0.7).abs() < 1e-15);
        let one = vec![vec![0.1, 0.2, 0.05]];
        assert_eq!(trajectory_risk_constant_mode(&one, &[1.0]), trajectory_risk_independent(&one[0]));
    }

    #[test]
    fn mode_readings_differ_on_two_mode_two_step_example() {
        // Mode A always at the ego, mode B always far away, equal weights.
        let near = GaussianComponent2::point(Vector2::zeros());
        let far = GaussianComponent2::point(Vector2::new(50.0, 0.0));
        let m = Mixture2::new(vec![(0.5, near), (0.5, far)]).unwrap();
        let ego = vec![Pose2::new(0.0, 0.0, 0.0); 2];
        let e = Ellipsoid::from_semi_axes(1.0, 1.0).unwrap();

        let constant = position_scenario(vec![m.clone(); 2], ego.clone(), e, ModeModel::Constant);
        let r = assess(&constant, &Method::Imhof { tol: 1e-10 }).unwrap();
        assert_eq!(r.trajectory_risk, 0.5);
        assert_eq!(r.diagnostics.unwrap().alternate_trajectory_risk, Some(0.75));
        assert_eq!(r.per_step[0].modes, Some(vec![1.0, 0.0]));

        let per_step = position_scenario(vec![m; 2], ego, e, ModeModel::PerStep);
        let r = assess(&per_step, &Method::Imhof { tol: 1e-10 }).unwrap();
        assert_eq!(r.trajectory_risk, 0.75);
        assert_eq!(r.diagnostics.unwrap().alternate_trajectory_risk, Some(0.5));
        assert_eq!(r.per_step[0].modes, None);
    }

    #[test]
    fn control_rejects_gaussian_exact_methods() {
        let s = control_scenario();
        for m in [Method::Imhof { tol: 1e-10 }, Method::Ltz] {
            assert!(matches!(assess(&s, &m), Err(PipelineError::MethodKind { .. })));
        }
        let r = assess(&s, &Method::CantelliHalfspace { n_h: 12 }).unwrap();
        assert_eq!(r.per_step.len(), 4);
        assert!(r.per_step.iter().all(|p| p.upper_bound));
    }

    #[test]
    fn control_context_reports_missing_order() {
        let s = control_scenario();
        let contexts = step_contexts(&s, 4).unwrap();
        let err = report_from_contexts(&s, &SosMethod { degree: 4 }, &contexts).unwrap_err();
        assert_eq!(
            err,
            PipelineError::InsufficientMoments {
                method: "sos:4".into(),
                needed: 8,
                have: 4
            }
        );
        assert!(err.to_string().contains("order 8"));
        assert!(report_from_contexts(&s, &SosMethod { degree: 2 }, &contexts).is_ok());
    }

    #[test]
    fn saturation_flags_values_next_to_one() {
        let mut flags = Vec::new();
        assert_eq!(saturate(1.0 - 5e-16, &mut flags), 1.0);
        assert_eq!(flags, vec!["saturated".to_string()]);
        let mut flags = Vec::new();
        assert_eq!(saturate(0.999, &mut flags), 0.999);
        assert!(flags.is_empty());
    }

    #[test]
    fn registry_parses_method_specs() {
        let reg = MethodRegistry::builtin();
        let opts = MethodOptions { seed: Some(3), mc_samples: None };
        assert_eq!(reg.create("imhof:1e-10", &opts).unwrap().label(), "imhof:1e-10");
        assert_eq!(reg.create("sos:6", &opts).unwrap().required_order(), 12);
        assert_eq!(reg.create("cheby-hs", &opts).unwrap().label(), "cheby-hs:12");
        assert_eq!(reg.create("mc:5000", &opts).unwrap().seed(), Some(3));
        assert!(matches!(reg.create("sos:5", &opts), Err(PipelineError::Param(_))));
        assert!(matches!(reg.create("sos:9", &opts), Err(PipelineError::Param(_))));
        assert!(matches!(reg.create("ltz:3", &opts), Err(PipelineError::Param(_))));
        assert!(matches!(reg.create("mc", &MethodOptions::default()), Err(PipelineError::Param(_))));
        assert!(matches!(reg.create("bogus", &opts), Err(PipelineError::UnknownMethod { .. })));
        assert_eq!(reg.names().count(), 6);
    }

    #[test]
    fn registry_accepts_custom_methods() {
        struct Half;
        impl RiskMethod for Half {
            fn label(&self) -> String {
                "half".into()
            }
            fn is_upper_bound(&self) -> bool {
                false
            }
            fn required_order(&self) -> usize {
                0
            }
            fn step_risk(&self, _: &StepContext) -> Result<StepValue, PipelineError> {
                Ok(StepValue { value: 0.5, upper_bound: false, modes: None, flags: Vec::new() })
            }
        }
        let mut reg = MethodRegistry::builtin();
        reg.register("half", "half  constant 1/2", Box::new(|_, _| Ok(Box::new(Half))));
        let m = reg.create("half", &MethodOptions::default()).unwrap();
        let r = m.assess(&chi2_scenario()).unwrap();
        assert_eq!(r.trajectory_risk, 0.5);
    }
}
