//! Collision risk assessment against probabilistic agent predictions.
//!
//! The crate evaluates the probability that another agent enters an
//! ellipsoidal region around a planned ego trajectory. Agent predictions are
//! Gaussian mixtures over either future positions or future control inputs
//! of a stochastic Dubins car. Several interchangeable estimators are
//! provided:
//!
//! * exact quadratic-form CDFs (Imhof inversion, Liu-Tang-Zhang
//!   noncentral chi-square matching) for position mixtures,
//! * distributionally robust upper bounds from moments (Cantelli on the
//!   quadratic form, Cantelli on a circumscribing polygon, univariate SOS
//!   programs solved by a small dense interior-point SDP solver),
//! * exact nonlinear moment propagation through the Dubins dynamics so that
//!   the moment bounds also apply to control predictions,
//! * a Monte Carlo oracle.
//!
//! Estimators implement [`pipeline::RiskMethod`] and are looked up by name in
//! a [`pipeline::MethodRegistry`].

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod mc;
pub mod pipeline;
pub mod poly;
pub mod propagation;
pub mod qfmvg;
pub mod quadrature;
pub mod scenario;
pub mod statmoments;

pub use pipeline::{assess, Method, MethodRegistry, RiskMethod};
pub use scenario::{
    parse_scenario, serialize_scenario, AgentKind, AgentPrediction, Ellipsoid, GaussianComponent2,
    Mixture2, ModeModel, Pose2, RiskReport, Scenario,
};
