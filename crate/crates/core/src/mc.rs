//! Monte Carlo reference estimates of per-step and trajectory risk, for
//! position predictions and for control predictions rolled out through the
//! unicycle dynamics.
//!
//! Samples are drawn in fixed-size blocks. Each block has its own ChaCha8
//! stream selected by its index, so the estimates depend only on the master
//! seed and the sample count: neither the streaming batch size nor the
//! thread count changes a single bit of the output.

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::scenario::{AgentKind, Ellipsoid, InitialState, Mixture2, ModeModel, Scenario};
use crate::statmoments::{rotate_ellipsoid, MomentArray2};

/// Samples per independently seeded block.
pub const BLOCK_SIZE: usize = 4096;

/// Highest order of the sampled position moments.
pub const SAMPLE_MOMENT_ORDER: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("sample count must be at least 1")]
    Samples,
    #[error("scenario kind {found} does not match the sampler ({expected})")]
    Kind { expected: &'static str, found: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub samples: usize,
    pub master_seed: u64,
    /// Samples held in flight per streaming wave; only affects memory and
    /// scheduling, never the result.
    pub batch: usize,
}

impl McConfig {
    pub fn new(samples: usize, master_seed: u64) -> Self {
        McConfig {
            samples,
            master_seed,
            batch: 1 << 16,
        }
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    fn check(&self) -> Result<(), McError> {
        if self.samples == 0 {
            Err(McError::Samples)
        } else {
            Ok(())
        }
    }

    fn n_blocks(&self) -> usize {
        self.samples.div_ceil(BLOCK_SIZE)
    }

    fn block_len(&self, block: usize) -> usize {
        BLOCK_SIZE.min(self.samples - block * BLOCK_SIZE)
    }

    fn block_rng(&self, block: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(block as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub p_hat: f64,
    pub std_err: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_hits(hits: u64, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        McEstimate {
            p_hat: p,
            std_err: (p * (1.0 - p) / n as f64).sqrt(),
            n,
        }
    }
}

/// Per-step and whole-trajectory estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct McRisk {
    pub per_step: Vec<McEstimate>,
    /// Fraction of sample paths that enter the ego set at any step.
    pub trajectory: McEstimate,
}

/// Sampled raw position moments `E[x^a y^b]` (global frame) with the
/// standard error of each entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub mean: MomentArray2,
    pub std_err: MomentArray2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McControlRisk {
    pub risk: McRisk,
    pub moments: Vec<SampleMoments>,
}

/// Running mean and sum of squared deviations (Welford / Chan).
#[derive(Debug, Clone, Copy, Default)]
struct Running {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Running) {
        if o.n == 0.0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }

    fn std_err(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            (self.m2 / (self.n - 1.0) / self.n).sqrt()
        }
    }
}

#[derive(Debug, Clone)]
struct BlockTally {
    step_hits: Vec<u64>,
    path_hits: u64,
    /// `[step][moment index]` accumulators, empty for position samplers.
    moments: Vec<Vec<Running>>,
}

impl BlockTally {
    fn new(horizon: usize, with_moments: bool) -> Self {
        BlockTally {
            step_hits: vec![0; horizon],
            path_hits: 0,
            moments: if with_moments {
                vec![vec![Running::default(); moment_count()]; horizon]
            } else {
                Vec::new()
            },
        }
    }

    fn merge(&mut self, o: &BlockTally) {
        for (a, b) in self.step_hits.iter_mut().zip(&o.step_hits) {
            *a += b;
        }
        self.path_hits += o.path_hits;
        for (a, b) in self.moments.iter_mut().zip(&o.moments) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
    }
}

fn moment_count() -> usize {
    (SAMPLE_MOMENT_ORDER + 1) * (SAMPLE_MOMENT_ORDER + 2) / 2
}

/// Runs every block and merges the tallies in block order.
fn run_blocks<F>(cfg: &McConfig, horizon: usize, with_moments: bool, block: F) -> BlockTally
where
    F: Fn(&mut ChaCha8Rng, usize, &mut BlockTally) + Sync,
{
    let n_blocks = cfg.n_blocks();
    let wave = (cfg.batch / BLOCK_SIZE).max(1);
    let mut total = BlockTally::new(horizon, with_moments);
    let mut start = 0;
    while start < n_blocks {
        let end = (start + wave).min(n_blocks);
        let tallies: Vec<BlockTally> = (start..end)
            .into_par_iter()
            .map(|b| {
                let mut rng = cfg.block_rng(b);
                let mut tally = BlockTally::new(horizon, with_moments);
                block(&mut rng, cfg.block_len(b), &mut tally);
                tally
            })
            .collect();
        for t in &tallies {
            total.merge(t);
        }
        start = end;
    }
    total
}

fn finish(cfg: &McConfig, tally: &BlockTally) -> McRisk {
    McRisk {
        per_step: tally.step_hits.iter().map(|&h| McEstimate::from_hits(h, cfg.samples)).collect(),
        trajectory: McEstimate::from_hits(tally.path_hits, cfg.samples),
    }
}

/// Index of the component selected by a uniform draw.
fn pick(cumulative: &[f64], u: f64) -> usize {
    let total = *cumulative.last().expect("mixtures are non-empty");
    let target = u * total;
    cumulative.iter().position(|&c| target < c).unwrap_or(cumulative.len() - 1)
}

fn cumulative(m: &Mixture2) -> Vec<f64> {
    m.weights()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

/// Factor `L` with `L Lᵀ = cov` for a positive semidefinite covariance.
fn sqrt_factor(cov: &Matrix2<f64>) -> Matrix2<f64> {
    let eig = SymmetricEigen::new(*cov);
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * Matrix2::from_diagonal(&d)
}

fn std_normal2(rng: &mut ChaCha8Rng) -> Vector2<f64> {
    Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// One step of a position sampler, already in the ego frame.
struct PositionStep {
    cumulative: Vec<f64>,
    components: Vec<(Vector2<f64>, Matrix2<f64>)>,
    q: Matrix2<f64>,
}

impl PositionStep {
    fn new(m: &Mixture2, ego: &Vector2<f64>, e: &Ellipsoid) -> Self {
        PositionStep {
            cumulative: cumulative(m),
            components: m.components().iter().map(|(_, c)| (c.mean - ego, sqrt_factor(&c.cov))).collect(),
            q: *e.q(),
        }
    }

    fn hit(&self, mode: usize, rng: &mut ChaCha8Rng) -> bool {
        let (mu, l) = &self.components[mode];
        let d = mu + l * std_normal2(rng);
        d.dot(&(self.q * d)) <= 1.0
    }
}

fn position_risk(steps: &[PositionStep], mode_model: ModeModel, cfg: &McConfig) -> McRisk {
    let tally = run_blocks(cfg, steps.len(), false, |rng, len, tally| {
        for _ in 0..len {
            let fixed = match mode_model {
                ModeModel::Constant => Some(pick(&steps[0].cumulative, rng.random())),
                ModeModel::PerStep => None,
            };
            let mut any = false;
            for (t, s) in steps.iter().enumerate() {
                let mode = fixed.unwrap_or_else(|| pick(&s.cumulative, rng.random()));
                if s.hit(mode, rng) {
                    tally.step_hits[t] += 1;
                    any = true;
                }
            }
            tally.path_hits += u64::from(any);
        }
    });
    finish(cfg, &tally)
}

/// Estimates per-step and trajectory risk of a position prediction. Each
/// sample path draws a mode per step (or once per path for constant modes),
/// then a position from that component, and is tested against the
/// ego-frame ellipse.
pub fn mc_position_risk(s: &Scenario, cfg: &McConfig) -> Result<McRisk, McError> {
    cfg.check()?;
    let agent = s.agent();
    if agent.kind() != AgentKind::PositionGmm {
        return Err(McError::Kind {
            expected: AgentKind::PositionGmm.as_str(),
            found: agent.kind().as_str(),
        });
    }
    let steps: Vec<PositionStep> = agent
        .steps()
        .iter()
        .zip(s.ego_trajectory())
        .map(|(m, pose)| PositionStep::new(m, &pose.position(), &rotate_ellipsoid(s.ellipsoid(), -pose.heading)))
        .collect();
    Ok(position_risk(&steps, agent.mode_model(), cfg))
}

/// Estimates `P(xᵀ Q x ≤ 1)` for a single mixture already in the ellipse frame.
pub fn mc_mixture_risk(m: &Mixture2, e: &Ellipsoid, cfg: &McConfig) -> Result<McEstimate, McError> {
    cfg.check()?;
    let step = PositionStep::new(m, &Vector2::zeros(), e);
    Ok(position_risk(std::slice::from_ref(&step), ModeModel::PerStep, cfg).per_step[0])
}

/// Control distribution of one step: per component `(mean_v, sd_v, mean_θ, sd_θ)`.
struct ControlStep {
    cumulative: Vec<f64>,
    components: Vec<[f64; 4]>,
}

/// Rolls the unicycle forward under sampled controls. The position at step
/// `t` is reached with the speed and heading after `t − 1` control updates:
/// `x += v cos θ; y += v sin θ; v += w_v; θ += w_θ`.
pub fn mc_control_risk(s: &Scenario, cfg: &McConfig) -> Result<McControlRisk, McError> {
    let (risk, moments) = control_rollouts(s, cfg, true)?;
    Ok(McControlRisk { risk, moments })
}

/// Same sample paths as [`mc_control_risk`] without the moment tables.
pub fn mc_control_risk_only(s: &Scenario, cfg: &McConfig) -> Result<McRisk, McError> {
    Ok(control_rollouts(s, cfg, false)?.0)
}

fn control_rollouts(s: &Scenario, cfg: &McConfig, with_moments: bool) -> Result<(McRisk, Vec<SampleMoments>), McError> {
    cfg.check()?;
    let agent = s.agent();
    let init: InitialState = match (agent.kind(), agent.initial_state()) {
        (AgentKind::ControlGmm, Some(init)) => *init,
        _ => {
            return Err(McError::Kind {
                expected: AgentKind::ControlGmm.as_str(),
                found: agent.kind().as_str(),
            })
        }
    };
    let controls: Vec<ControlStep> = agent
        .steps()
        .iter()
        .map(|m| ControlStep {
            cumulative: cumulative(m),
            components: m
                .components()
                .iter()
                .map(|(_, c)| [c.mean.x, c.cov[(0, 0)].max(0.0).sqrt(), c.mean.y, c.cov[(1, 1)].max(0.0).sqrt()])
                .collect(),
        })
        .collect();
    let frames: Vec<(Vector2<f64>, Matrix2<f64>)> = s
        .ego_trajectory()
        .iter()
        .map(|p| (p.position(), *rotate_ellipsoid(s.ellipsoid(), -p.heading).q()))
        .collect();
    let mode_model = agent.mode_model();
    let horizon = controls.len();

    let tally = run_blocks(cfg, horizon, with_moments, |rng, len, tally| {
        let mut powers_x = [1.0; SAMPLE_MOMENT_ORDER + 1];
        let mut powers_y = [1.0; SAMPLE_MOMENT_ORDER + 1];
        for _ in 0..len {
            let fixed = match mode_model {
                ModeModel::Constant => Some(pick(&controls[0].cumulative, rng.random())),
                ModeModel::PerStep => None,
            };
            let (mut x, mut y, mut v, mut th) = (init.x, init.y, init.v, init.theta);
            let mut any = false;
            for (t, c) in controls.iter().enumerate() {
                x += v * th.cos();
                y += v * th.sin();
                let mode = fixed.unwrap_or_else(|| pick(&c.cumulative, rng.random()));
                let [mv, sv, mt, st] = c.components[mode];
                let z: Vector2<f64> = std_normal2(rng);
                v += mv + sv * z.x;
                th += mt + st * z.y;

                let (ego, q) = &frames[t];
                let d = Vector2::new(x, y) - ego;
                if d.dot(&(q * d)) <= 1.0 {
                    tally.step_hits[t] += 1;
                    any = true;
                }
                if !with_moments {
                    continue;
                }
                for k in 1..=SAMPLE_MOMENT_ORDER {
                    powers_x[k] = powers_x[k - 1] * x;
                    powers_y[k] = powers_y[k - 1] * y;
                }
                let acc = &mut tally.moments[t];
                let mut idx = 0;
                for total in 0..=SAMPLE_MOMENT_ORDER {
                    for b in 0..=total {
                        acc[idx].push(powers_x[total - b] * powers_y[b]);
                        idx += 1;
                    }
                }
            }
            tally.path_hits += u64::from(any);
        }
    });

    let moments = tally
        .moments
        .iter()
        .map(|acc| {
            let mut mean = MomentArray2::zeros(SAMPLE_MOMENT_ORDER);
            let mut se = MomentArray2::zeros(SAMPLE_MOMENT_ORDER);
            let mut idx = 0;
            for total in 0..=SAMPLE_MOMENT_ORDER {
                for b in 0..=total {
                    mean.set(total - b, b, acc[idx].mean);
                    se.set(total - b, b, acc[idx].std_err());
                    idx += 1;
                }
            }
            SampleMoments { mean, std_err: se }
        })
        .collect();
    Ok((finish(cfg, &tally), moments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{AgentPrediction, GaussianComponent2, Pose2};

    fn position_scenario(steps: Vec<Mixture2>, mode_model: ModeModel, e: Ellipsoid) -> Scenario {
        let ego = vec![Pose2::new(0.0, 0.0, 0.0); steps.len()];
        let agent = AgentPrediction::new(AgentKind::PositionGmm, mode_model, steps, None).unwrap();
        Scenario::new("mc-test", ego, e, agent).unwrap()
    }

    fn control_scenario(horizon: usize, sd_theta: f64, init: InitialState) -> Scenario {
        let c = GaussianComponent2::new(Vector2::zeros(), Matrix2::new(0.0, 0.0, 0.0, sd_theta * sd_theta)).unwrap();
        let steps = vec![Mixture2::single(c); horizon];
        let agent = AgentPrediction::new(AgentKind::ControlGmm, ModeModel::PerStep, steps, Some(init)).unwrap();
        let ego = vec![Pose2::new(5.0, 0.0, 0.0); horizon];
        Scenario::new("mc-control", ego, Ellipsoid::from_semi_axes(1.0, 1.0).unwrap(), agent).unwrap()
    }

    fn unit_gaussian() -> Mixture2 {
        Mixture2::single(GaussianComponent2::new(Vector2::zeros(), Matrix2::identity()).unwrap())
    }

    #[test]
    fn point_at_center_always_hits() {
        let s = position_scenario(
            vec![Mixture2::single(GaussianComponent2::point(Vector2::zeros())); 3],
            ModeModel::PerStep,
            Ellipsoid::from_semi_axes(1.0, 2.0).unwrap(),
        );
        let r = mc_position_risk(&s, &McConfig::new(1000, 1)).unwrap();
        assert!(r.per_step.iter().all(|e| e.p_hat == 1.0 && e.std_err == 0.0));
        assert_eq!(r.trajectory.p_hat, 1.0);
    }

    #[test]
    fn chi2_two_dof_within_four_standard_errors() {
        let e = Ellipsoid::from_semi_axes(1.0, 1.0).unwrap();
        let est = mc_mixture_risk(&unit_gaussian(), &e, &McConfig::new(1_000_000, 7)).unwrap();
        let exact = 1.0 - (-0.5f64).exp();
        assert!((est.p_hat - exact).abs() < 4.0 * est.std_err, "{est:?}");
        assert_eq!(est.n, 1_000_000);
    }

    #[test]
    fn deterministic_and_batch_independent() {
        let s = position_scenario(vec![unit_gaussian(); 4], ModeModel::PerStep, Ellipsoid::from_semi_axes(1.0, 0.5).unwrap());
        let a = mc_position_risk(&s, &McConfig::new(30_000, 3)).unwrap();
        let b = mc_position_risk(&s, &McConfig::new(30_000, 3)).unwrap();
        let c = mc_position_risk(&s, &McConfig::new(30_000, 3).with_batch(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let d = mc_position_risk(&s, &McConfig::new(30_000, 4)).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn constant_modes_share_one_draw_per_path() {
        let near = GaussianComponent2::point(Vector2::zeros());
        let far = GaussianComponent2::point(Vector2::new(10.0, 0.0));
        let m = Mixture2::new(vec![(0.5, near), (0.5, far)]).unwrap();
        let e = Ellipsoid::from_semi_axes(1.0, 1.0).unwrap();
        let cfg = McConfig::new(20_000, 11);
        let constant = mc_position_risk(&position_scenario(vec![m.clone(); 5], ModeModel::Constant, e), &cfg).unwrap();
        // Every path is either always inside or never inside.
        assert_eq!(constant.trajectory.p_hat, constant.per_step[0].p_hat);
        let per_step = mc_position_risk(&position_scenario(vec![m; 5], ModeModel::PerStep, e), &cfg).unwrap();
        let expected = 1.0 - 0.5f64.powi(5);
        assert!((per_step.trajectory.p_hat - expected).abs() < 4.0 * per_step.trajectory.std_err);
    }

    #[test]
    fn trajectory_risk_dominates_every_step() {
        let s = position_scenario(vec![unit_gaussian(); 6], ModeModel::PerStep, Ellipsoid::from_semi_axes(0.7, 1.2).unwrap());
        let r = mc_position_risk(&s, &McConfig::new(50_000, 5)).unwrap();
        assert!(r.per_step.iter().all(|e| e.p_hat <= r.trajectory.p_hat));
    }

    #[test]
    fn zero_noise_rollout_is_deterministic() {
        let init = InitialState { x: 0.0, y: 0.0, v: 1.0, theta: 0.1 };
        let r = mc_control_risk(&control_scenario(8, 0.0, init), &McConfig::new(5000, 2)).unwrap();
        for (t, m) in r.moments.iter().enumerate() {
            let k = (t + 1) as f64;
            assert!((m.mean.get(1, 0) - k * 0.1f64.cos()).abs() < 1e-12);
            assert!((m.mean.get(0, 1) - k * 0.1f64.sin()).abs() < 1e-12);
            assert!(m.std_err.get(1, 0) < 1e-12 && m.std_err.get(2, 2) < 1e-9);
        }
        for (t, e) in r.risk.per_step.iter().enumerate() {
            let k = (t + 1) as f64;
            let inside = (k * 0.1f64.cos() - 5.0).powi(2) + (k * 0.1f64.sin()).powi(2) <= 1.0;
            assert_eq!(e.p_hat, if inside { 1.0 } else { 0.0 });
        }
        assert_eq!(r.risk.trajectory.p_hat, 1.0);
    }

    #[test]
    fn risk_only_rollouts_match_full_rollouts() {
        let init = InitialState { x: 0.0, y: 0.0, v: 1.0, theta: 0.1 };
        let s = control_scenario(8, 0.05, init);
        let cfg = McConfig::new(20_000, 4);
        assert_eq!(mc_control_risk_only(&s, &cfg).unwrap(), mc_control_risk(&s, &cfg).unwrap().risk);
    }

    #[test]
    fn heading_noise_second_step_mean() {
        let init = InitialState { x: 0.0, y: 0.0, v: 1.0, theta: 0.0 };
        let r = mc_control_risk(&control_scenario(2, 0.05, init), &McConfig::new(200_000, 9)).unwrap();
        let expected = 1.0 + (-0.00125f64).exp();
        let m = &r.moments[1];
        assert!((m.mean.get(1, 0) - expected).abs() < 4.0 * m.std_err.get(1, 0).max(1e-15));
        assert_eq!(r.moments[0].mean.get(1, 0), 1.0);
    }

    #[test]
    fn rejects_wrong_kind_and_empty_config() {
        let s = position_scenario(vec![unit_gaussian()], ModeModel::PerStep, Ellipsoid::from_semi_axes(1.0, 1.0).unwrap());
        assert!(matches!(mc_control_risk(&s, &McConfig::new(10, 0)), Err(McError::Kind { .. })));
        assert_eq!(mc_position_risk(&s, &McConfig::new(0, 0)), Err(McError::Samples));
    }
}
