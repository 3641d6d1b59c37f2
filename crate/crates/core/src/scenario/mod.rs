//! Scenario data model: ego trajectory, collision ellipsoid and the agent
//! prediction, plus the JSON file schema, validation and a seeded synthetic
//! generator.

mod generate;
mod report;
mod schema;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use thiserror::Error;

pub use generate::{generate_scenario, GeneratorParams};
pub use report::{ReportDiagnostics, RiskReport, StepRecord};
pub use schema::{parse_scenario, serialize_scenario, SCHEMA_VERSION};

/// Tolerance on mixture weight sums.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;
/// Covariance eigenvalues in `[-COV_EIG_TOL, 0)` are clamped to zero.
pub const COV_EIG_TOL: f64 = 1e-12;
/// Relative asymmetry tolerated in ellipsoid and covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error at {path}: {message}")]
    Validation { path: String, message: String },
    #[error("non-finite value at {path}")]
    Numeric { path: String },
    #[error("invalid generator parameter: {0}")]
    Param(String),
}

impl ScenarioError {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    fn at(self, prefix: &str) -> Self {
        match self {
            ScenarioError::Validation { path, message } => ScenarioError::Validation {
                path: join_path(prefix, &path),
                message,
            },
            ScenarioError::Numeric { path } => ScenarioError::Numeric {
                path: join_path(prefix, &path),
            },
            other => other,
        }
    }
}

fn join_path(prefix: &str, rest: &str) -> String {
    match (prefix.is_empty(), rest.is_empty()) {
        (true, _) => rest.to_string(),
        (_, true) => prefix.to_string(),
        _ if rest.starts_with('[') => format!("{prefix}{rest}"),
        _ => format!("{prefix}.{rest}"),
    }
}

fn check_finite(values: &[f64], path: &str) -> Result<(), ScenarioError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ScenarioError::Numeric {
            path: path.to_string(),
        })
    }
}

fn symmetric_part(m: &Matrix2<f64>, path: &str) -> Result<Matrix2<f64>, ScenarioError> {
    check_finite(m.as_slice(), path)?;
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    if (m[(0, 1)] - m[(1, 0)]).abs() > SYMMETRY_TOL * scale {
        return Err(ScenarioError::validation(path, "matrix is not symmetric"));
    }
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Ok(Matrix2::new(m[(0, 0)], off, off, m[(1, 1)]))
}

/// Planned ego pose at one step. Heading is stored unwrapped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose2 { x, y, heading }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// Collision set `{x : xᵀ Q x ≤ 1}` with `Q` symmetric positive definite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    q: Matrix2<f64>,
}

impl Ellipsoid {
    pub fn new(q: Matrix2<f64>) -> Result<Self, ScenarioError> {
        let q = symmetric_part(&q, "q")?;
        let eig = SymmetricEigen::new(q).eigenvalues;
        if eig.iter().any(|&l| l <= 0.0) {
            return Err(ScenarioError::validation(
                "q",
                format!("ellipsoid matrix must be positive definite (eigenvalues {:?})", eig.as_slice()),
            ));
        }
        Ok(Ellipsoid { q })
    }

    /// Axis-aligned ellipse with the given semi-axes.
    pub fn from_semi_axes(a: f64, b: f64) -> Result<Self, ScenarioError> {
        Ellipsoid::new(Matrix2::new(1.0 / (a * a), 0.0, 0.0, 1.0 / (b * b)))
    }

    pub fn q(&self) -> &Matrix2<f64> {
        &self.q
    }

    /// `xᵀ Q x`.
    pub fn quad(&self, x: &Vector2<f64>) -> f64 {
        x.dot(&(self.q * x))
    }

    pub fn contains(&self, x: &Vector2<f64>) -> bool {
        self.quad(x) <= 1.0
    }

    pub(crate) fn from_trusted(q: Matrix2<f64>) -> Self {
        Ellipsoid { q }
    }
}

/// One Gaussian mixture component over a 2-vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent2 {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl GaussianComponent2 {
    /// Validates symmetry and positive semidefiniteness, clamping eigenvalues
    /// in `[-1e-12, 0)` to zero.
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>) -> Result<Self, ScenarioError> {
        check_finite(mean.as_slice(), "mean")?;
        let cov = symmetric_part(&cov, "cov")?;
        let eig = SymmetricEigen::new(cov);
        let min = eig.eigenvalues.min();
        if min < -COV_EIG_TOL {
            return Err(ScenarioError::validation(
                "cov",
                format!("covariance has negative eigenvalue {min}"),
            ));
        }
        let cov = if min < 0.0 {
            let clamped = eig.eigenvalues.map(|l| l.max(0.0));
            eig.eigenvectors * Matrix2::from_diagonal(&clamped) * eig.eigenvectors.transpose()
        } else {
            cov
        };
        Ok(GaussianComponent2 { mean, cov })
    }

    pub fn point(mean: Vector2<f64>) -> Self {
        GaussianComponent2 {
            mean,
            cov: Matrix2::zeros(),
        }
    }
}

/// Weighted Gaussian mixture over a 2-vector at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture2 {
    components: Vec<(f64, GaussianComponent2)>,
}

impl Mixture2 {
    pub fn new(components: Vec<(f64, GaussianComponent2)>) -> Result<Self, ScenarioError> {
        if components.is_empty() {
            return Err(ScenarioError::validation("components", "mixture needs at least one component"));
        }
        for (i, (w, _)) in components.iter().enumerate() {
            check_finite(&[*w], &format!("components[{i}].weight"))?;
            if *w < 0.0 {
                return Err(ScenarioError::validation(
                    format!("components[{i}].weight"),
                    format!("negative weight {w}"),
                ));
            }
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(ScenarioError::validation(
                "components",
                format!("weights sum to {total}, expected 1"),
            ));
        }
        Ok(Mixture2 { components })
    }

    pub fn single(component: GaussianComponent2) -> Self {
        Mixture2 {
            components: vec![(1.0, component)],
        }
    }

    pub fn components(&self) -> &[(f64, GaussianComponent2)] {
        &self.components
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.components.iter().map(|(w, _)| *w)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Mixture with every component mean shifted by `-offset`.
    pub fn translated(&self, offset: &Vector2<f64>) -> Mixture2 {
        Mixture2 {
            components: self
                .components
                .iter()
                .map(|(w, c)| {
                    (
                        *w,
                        GaussianComponent2 {
                            mean: c.mean - offset,
                            cov: c.cov,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Mean and covariance of the whole mixture.
    pub fn mean_cov(&self) -> (Vector2<f64>, Matrix2<f64>) {
        let mean: Vector2<f64> = self.components.iter().map(|(w, c)| c.mean * *w).sum();
        let second: Matrix2<f64> = self
            .components
            .iter()
            .map(|(w, c)| (c.cov + c.mean * c.mean.transpose()) * *w)
            .sum();
        (mean, second - mean * mean.transpose())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    PositionGmm,
    ControlGmm,
}

impl AgentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentKind::PositionGmm => "position_gmm",
            AgentKind::ControlGmm => "control_gmm",
        }
    }
}

/// How mixture modes relate across time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeModel {
    /// A fresh mode is drawn at every step.
    PerStep,
    /// One mode is drawn for the whole horizon.
    Constant,
}

impl ModeModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeModel::PerStep => "per_step",
            ModeModel::Constant => "constant",
        }
    }
}

/// Known initial state of an agent whose controls are predicted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
}

/// Prediction of the agent over the horizon: one mixture per step.
///
/// For [`AgentKind::ControlGmm`] the mixture components are over
/// `(w_v, w_theta)` and must have diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPrediction {
    kind: AgentKind,
    mode_model: ModeModel,
    steps: Vec<Mixture2>,
    initial_state: Option<InitialState>,
}

impl AgentPrediction {
    pub fn new(
        kind: AgentKind,
        mode_model: ModeModel,
        steps: Vec<Mixture2>,
        initial_state: Option<InitialState>,
    ) -> Result<Self, ScenarioError> {
        if steps.is_empty() {
            return Err(ScenarioError::validation("steps", "horizon must be at least 1"));
        }
        match (kind, &initial_state) {
            (AgentKind::ControlGmm, None) => {
                return Err(ScenarioError::validation(
                    "initial_state",
                    "initial_state is required for control_gmm",
                ))
            }
            (AgentKind::PositionGmm, Some(_)) => {
                return Err(ScenarioError::validation(
                    "initial_state",
                    "initial_state is only allowed for control_gmm",
                ))
            }
            (_, Some(s)) => check_finite(&[s.x, s.y, s.v, s.theta], "initial_state")?,
            _ => {}
        }
        if kind == AgentKind::ControlGmm {
            for (t, m) in steps.iter().enumerate() {
                for (i, (_, c)) in m.components().iter().enumerate() {
                    let scale = c.cov.abs().max().max(f64::MIN_POSITIVE);
                    if c.cov[(0, 1)].abs() > SYMMETRY_TOL * scale {
                        return Err(ScenarioError::validation(
                            format!("steps[{t}].components[{i}].cov"),
                            "control covariance must be diagonal (w_v and w_theta are independent)",
                        ));
                    }
                }
            }
        }
        if mode_model == ModeModel::Constant {
            let first: Vec<f64> = steps[0].weights().collect();
            for (t, m) in steps.iter().enumerate().skip(1) {
                if m.len() != first.len() {
                    return Err(ScenarioError::validation(
                        format!("steps[{t}].components"),
                        format!(
                            "constant mode model needs {} components at every step, found {}",
                            first.len(),
                            m.len()
                        ),
                    ));
                }
                for (i, (w, w0)) in m.weights().zip(&first).enumerate() {
                    if (w - w0).abs() > WEIGHT_SUM_TOL {
                        return Err(ScenarioError::validation(
                            format!("steps[{t}].components[{i}].weight"),
                            "constant mode model needs step-invariant weights",
                        ));
                    }
                }
            }
        }
        Ok(AgentPrediction {
            kind,
            mode_model,
            steps,
            initial_state,
        })
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn mode_model(&self) -> ModeModel {
        self.mode_model
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[Mixture2] {
        &self.steps
    }

    pub fn initial_state(&self) -> Option<&InitialState> {
        self.initial_state.as_ref()
    }

    /// Mode weights shared by all steps (constant mode model only).
    pub fn constant_weights(&self) -> Option<Vec<f64>> {
        match self.mode_model {
            ModeModel::Constant => Some(self.steps[0].weights().collect()),
            ModeModel::PerStep => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    ego_trajectory: Vec<Pose2>,
    ellipsoid: Ellipsoid,
    agent: AgentPrediction,
}

impl Scenario {
    pub fn new(
        id: impl Into<String>,
        ego_trajectory: Vec<Pose2>,
        ellipsoid: Ellipsoid,
        agent: AgentPrediction,
    ) -> Result<Self, ScenarioError> {
        for (t, p) in ego_trajectory.iter().enumerate() {
            check_finite(&[p.x, p.y, p.heading], &format!("ego_trajectory[{t}]"))?;
        }
        if ego_trajectory.len() != agent.horizon() {
            return Err(ScenarioError::validation(
                "ego_trajectory",
                format!(
                    "ego trajectory has {} poses but the agent horizon is {}",
                    ego_trajectory.len(),
                    agent.horizon()
                ),
            ));
        }
        Ok(Scenario {
            id: id.into(),
            ego_trajectory,
            ellipsoid,
            agent,
        })
    }

    pub fn ego_trajectory(&self) -> &[Pose2] {
        &self.ego_trajectory
    }

    pub fn ellipsoid(&self) -> &Ellipsoid {
        &self.ellipsoid
    }

    pub fn agent(&self) -> &AgentPrediction {
        &self.agent
    }

    pub fn horizon(&self) -> usize {
        self.ego_trajectory.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_with_negative_eigenvalue_is_rejected() {
        let err = GaussianComponent2::new(Vector2::zeros(), Matrix2::new(1.0, 2.0, 2.0, 1.0)).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation { .. }));
        assert!(err.to_string().contains("-1"));
    }

    #[test]
    fn tiny_negative_eigenvalue_is_clamped() {
        let c = GaussianComponent2::new(Vector2::zeros(), Matrix2::new(1.0, 0.0, 0.0, -5e-13)).unwrap();
        assert_eq!(c.cov[(1, 1)], 0.0);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let c = GaussianComponent2::point(Vector2::zeros());
        assert!(Mixture2::new(vec![(0.5, c), (0.6, c)]).is_err());
        assert!(Mixture2::new(vec![(0.5, c), (0.5, c)]).is_ok());
        assert!(Mixture2::new(vec![]).is_err());
    }

    #[test]
    fn ellipsoid_must_be_positive_definite() {
        assert!(Ellipsoid::new(Matrix2::new(1.0, 0.0, 0.0, 0.0)).is_err());
        assert!(Ellipsoid::new(Matrix2::new(1.0, 0.5, 0.4, 1.0)).is_err());
        assert!(Ellipsoid::from_semi_axes(2.0, 1.0).is_ok());
    }

    #[test]
    fn control_prediction_requires_initial_state() {
        let m = Mixture2::single(GaussianComponent2::point(Vector2::zeros()));
        let err = AgentPrediction::new(AgentKind::ControlGmm, ModeModel::PerStep, vec![m], None).unwrap_err();
        assert!(err.to_string().contains("initial_state"));
    }

    #[test]
    fn constant_mode_needs_invariant_weights() {
        let c = GaussianComponent2::point(Vector2::zeros());
        let a = Mixture2::new(vec![(0.3, c), (0.7, c)]).unwrap();
        let b = Mixture2::new(vec![(0.4, c), (0.6, c)]).unwrap();
        assert!(AgentPrediction::new(AgentKind::PositionGmm, ModeModel::Constant, vec![a.clone(), b.clone()], None).is_err());
        assert!(AgentPrediction::new(AgentKind::PositionGmm, ModeModel::PerStep, vec![a, b], None).is_ok());
    }

    #[test]
    fn mixture_mean_cov_matches_law_of_total_variance() {
        let m = Mixture2::new(vec![
            (0.5, GaussianComponent2::point(Vector2::new(-1.0, 0.0))),
            (0.5, GaussianComponent2::point(Vector2::new(1.0, 0.0))),
        ])
        .unwrap();
        let (mu, cov) = m.mean_cov();
        assert_eq!(mu, Vector2::zeros());
        assert!((cov[(0, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(cov[(1, 1)], 0.0);
    }
}
