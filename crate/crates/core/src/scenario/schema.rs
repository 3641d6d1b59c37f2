//! Versioned JSON document format for scenarios.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{
    AgentKind, AgentPrediction, Ellipsoid, GaussianComponent2, InitialState, Mixture2, ModeModel, Pose2, Scenario,
    ScenarioError,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    schema_version: u32,
    id: String,
    ego_trajectory: Vec<PoseDoc>,
    ellipsoid: EllipsoidDoc,
    agent: AgentDoc,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseDoc {
    x: f64,
    y: f64,
    heading: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EllipsoidDoc {
    q: [[f64; 2]; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindDoc {
    PositionGmm,
    ControlGmm,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModeDoc {
    PerStep,
    Constant,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialStateDoc {
    x: f64,
    y: f64,
    v: f64,
    theta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentDoc {
    kind: KindDoc,
    mode_model: ModeDoc,
    horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_state: Option<InitialStateDoc>,
    steps: Vec<StepDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepDoc {
    components: Vec<ComponentDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentDoc {
    weight: f64,
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
}

fn matrix(rows: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1])
}

fn rows(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &[u8]) -> Result<Scenario, ScenarioError> {
    let doc: ScenarioDoc = serde_json::from_slice(text).map_err(|e| {
        let msg = e.to_string();
        if msg.contains("out of range") {
            ScenarioError::Numeric { path: msg }
        } else {
            ScenarioError::Schema(msg)
        }
    })?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(ScenarioError::Schema(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            doc.schema_version
        )));
    }

    let ego: Vec<Pose2> = doc
        .ego_trajectory
        .iter()
        .map(|p| Pose2::new(p.x, p.y, p.heading))
        .collect();
    let ellipsoid = Ellipsoid::new(matrix(&doc.ellipsoid.q)).map_err(|e| e.at("ellipsoid"))?;

    let agent = &doc.agent;
    if agent.horizon == 0 {
        return Err(ScenarioError::validation("agent.horizon", "horizon must be at least 1"));
    }
    if agent.steps.len() != agent.horizon {
        return Err(ScenarioError::validation(
            "agent.steps",
            format!("{} steps given for horizon {}", agent.steps.len(), agent.horizon),
        ));
    }
    let mut steps = Vec::with_capacity(agent.steps.len());
    for (t, step) in agent.steps.iter().enumerate() {
        let prefix = format!("agent.steps[{t}]");
        let mut comps = Vec::with_capacity(step.components.len());
        for (i, c) in step.components.iter().enumerate() {
            let g = GaussianComponent2::new(Vector2::new(c.mean[0], c.mean[1]), matrix(&c.cov))
                .map_err(|e| e.at(&format!("{prefix}.components[{i}]")))?;
            comps.push((c.weight, g));
        }
        steps.push(Mixture2::new(comps).map_err(|e| e.at(&prefix))?);
    }
    let kind = match agent.kind {
        KindDoc::PositionGmm => AgentKind::PositionGmm,
        KindDoc::ControlGmm => AgentKind::ControlGmm,
    };
    let mode_model = match agent.mode_model {
        ModeDoc::PerStep => ModeModel::PerStep,
        ModeDoc::Constant => ModeModel::Constant,
    };
    let initial_state = agent.initial_state.as_ref().map(|s| InitialState {
        x: s.x,
        y: s.y,
        v: s.v,
        theta: s.theta,
    });
    let prediction = AgentPrediction::new(kind, mode_model, steps, initial_state).map_err(|e| e.at("agent"))?;
    Scenario::new(doc.id, ego, ellipsoid, prediction)
}

/// Serializes a scenario. Floats are written in shortest round-trip form, so
/// parsing the output reproduces every value bit for bit.
pub fn serialize_scenario(s: &Scenario) -> Vec<u8> {
    let agent = s.agent();
    let doc = ScenarioDoc {
        schema_version: SCHEMA_VERSION,
        id: s.id.clone(),
        ego_trajectory: s
            .ego_trajectory()
            .iter()
            .map(|p| PoseDoc {
                x: p.x,
                y: p.y,
                heading: p.heading,
            })
            .collect(),
        ellipsoid: EllipsoidDoc {
            q: rows(s.ellipsoid().q()),
        },
        agent: AgentDoc {
            kind: match agent.kind() {
                AgentKind::PositionGmm => KindDoc::PositionGmm,
                AgentKind::ControlGmm => KindDoc::ControlGmm,
            },
            mode_model: match agent.mode_model() {
                ModeModel::PerStep => ModeDoc::PerStep,
                ModeModel::Constant => ModeDoc::Constant,
            },
            horizon: agent.horizon(),
            initial_state: agent.initial_state().map(|s| InitialStateDoc {
                x: s.x,
                y: s.y,
                v: s.v,
                theta: s.theta,
            }),
            steps: agent
                .steps()
                .iter()
                .map(|m| StepDoc {
                    components: m
                        .components()
                        .iter()
                        .map(|(w, c)| ComponentDoc {
                            weight: *w,
                            mean: [c.mean.x, c.mean.y],
                            cov: rows(&c.cov),
                        })
                        .collect(),
                })
                .collect(),
        },
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("scenario documents always serialize");
    out.push(b'\n');
    out
}
