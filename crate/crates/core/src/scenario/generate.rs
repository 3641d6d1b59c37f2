//! Seeded synthetic scenarios standing in for a learned predictor.
//!
//! The ego drives a gentle arc from the origin. The agent approaches a point
//! on the ego path from the side at a random time offset; each mixture mode
//! follows its own constant-curvature track and its uncertainty grows with
//! time.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Rotation2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    AgentKind, AgentPrediction, Ellipsoid, GaussianComponent2, InitialState, Mixture2, ModeModel, Pose2, Scenario,
    ScenarioError,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorParams {
    pub horizon: usize,
    pub n_components: usize,
    pub kind: AgentKind,
    pub mode_model: ModeModel,
    pub seed: u64,
}

impl GeneratorParams {
    pub fn new(horizon: usize, n_components: usize, kind: AgentKind, mode_model: ModeModel, seed: u64) -> Self {
        GeneratorParams {
            horizon,
            n_components,
            kind,
            mode_model,
            seed,
        }
    }
}

struct Track {
    curvature: f64,
    speed_scale: f64,
    accel: f64,
    sigma_v: f64,
    sigma_theta: f64,
}

fn normalized(mut w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

pub fn generate_scenario(params: &GeneratorParams) -> Result<Scenario, ScenarioError> {
    if params.horizon == 0 {
        return Err(ScenarioError::Param("horizon must be positive".into()));
    }
    if params.n_components == 0 {
        return Err(ScenarioError::Param("n_components must be positive".into()));
    }
    let t_max = params.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let ego_speed = rng.random_range(0.8..1.5);
    let ego_yaw_rate = rng.random_range(-0.01..0.01);
    let mut ego = Vec::with_capacity(t_max);
    let (mut ex, mut ey, mut eh) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..t_max {
        ex += ego_speed * eh.cos();
        ey += ego_speed * eh.sin();
        eh += ego_yaw_rate;
        ego.push(Pose2::new(ex, ey, eh));
    }

    let semi_long = rng.random_range(2.0..3.0);
    let semi_lat = rng.random_range(1.0..1.6);
    let ellipsoid = Ellipsoid::from_semi_axes(semi_long, semi_lat)?;

    // Agent approaches the ego path and reaches the crossing point around
    // step `t_cross + offset`.
    let t_cross = rng.random_range(0.3..0.9) * t_max as f64;
    let crossing = ego[(t_cross.round() as usize).clamp(1, t_max) - 1];
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let approach = crossing.heading + side * rng.random_range(PI / 4.0..3.0 * PI / 4.0);
    let agent_speed = rng.random_range(0.7..1.5);
    let arrival = t_cross + rng.random_range(-4.0..4.0);
    let start = Vector2::new(
        crossing.x - agent_speed * arrival * approach.cos(),
        crossing.y - agent_speed * arrival * approach.sin(),
    );
    let spread = rng.random_range(0.5..1.5);

    let tracks: Vec<Track> = (0..params.n_components)
        .map(|k| {
            let curvature = if k == 0 {
                0.0
            } else {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * rng.random_range(0.02..0.08)
            };
            Track {
                curvature,
                speed_scale: if k == 0 { 1.0 } else { rng.random_range(0.8..1.2) },
                accel: rng.random_range(-0.02..0.02),
                sigma_v: rng.random_range(0.01..0.05),
                sigma_theta: rng.random_range(0.01..0.05),
            }
        })
        .collect();
    let base_weights = normalized((0..params.n_components).map(|_| rng.random_range(0.2..1.0)).collect());
    let phases: Vec<f64> = (0..params.n_components).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let weights_at = |t: usize| -> Vec<f64> {
        match params.mode_model {
            ModeModel::Constant => base_weights.clone(),
            ModeModel::PerStep => normalized(
                base_weights
                    .iter()
                    .zip(&phases)
                    .map(|(w, ph)| w * (1.0 + 0.3 * (2.0 * PI * t as f64 / t_max as f64 + ph).sin()))
                    .collect(),
            ),
        }
    };

    let (steps, initial_state) = match params.kind {
        AgentKind::PositionGmm => {
            let mut states: Vec<(Vector2<f64>, f64)> = vec![(start, approach); params.n_components];
            let mut steps = Vec::with_capacity(t_max);
            for t in 1..=t_max {
                let w = weights_at(t);
                let mut comps = Vec::with_capacity(params.n_components);
                for (k, track) in tracks.iter().enumerate() {
                    let (pos, heading) = &mut states[k];
                    let v = agent_speed * track.speed_scale;
                    *pos += Vector2::new(v * heading.cos(), v * heading.sin());
                    *heading += track.curvature;
                    let along = spread * (0.15 + 0.06 * t as f64);
                    let cross = spread * (0.1 + 0.03 * t as f64);
                    let rot = Rotation2::new(*heading).into_inner();
                    let cov = rot * Matrix2::new(along * along, 0.0, 0.0, cross * cross) * rot.transpose();
                    let cov = 0.5 * (cov + cov.transpose());
                    comps.push((w[k], GaussianComponent2::new(*pos, cov)?));
                }
                steps.push(Mixture2::new(comps)?);
            }
            (steps, None)
        }
        AgentKind::ControlGmm => {
            let steps = (1..=t_max)
                .map(|t| {
                    let w = weights_at(t);
                    let comps = tracks
                        .iter()
                        .zip(&w)
                        .map(|(track, &wk)| {
                            GaussianComponent2::new(
                                Vector2::new(track.accel, track.curvature),
                                Matrix2::new(track.sigma_v.powi(2), 0.0, 0.0, track.sigma_theta.powi(2)),
                            )
                            .map(|c| (wk, c))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    Mixture2::new(comps)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let init = InitialState {
                x: start.x,
                y: start.y,
                v: agent_speed,
                theta: approach,
            };
            (steps, Some(init))
        }
    };

    let agent = AgentPrediction::new(params.kind, params.mode_model, steps, initial_state)?;
    let id = format!("gen-{}-{}-{}", params.kind.as_str(), params.mode_model.as_str(), params.seed);
    Scenario::new(id, ego, ellipsoid, agent)
}
