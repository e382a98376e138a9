use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{EvalConfig, EvalError};
use crate::dataset::EpisodeRecord;
use crate::model::{Ablation, ForwardMode, FrameInput, ModelInput, NavModel};
use crate::simworld::{
    raycast_fov, step_agent, Episode, EpisodeConfig, GeodesicField, Observation, Pose, Waypoint, World,
};
use crate::training::mix_seed;

/// A start pose, goal and instruction in a world.
#[derive(Clone, Debug)]
pub struct NavTask {
    pub episode_id: u64,
    pub world: World,
    pub start: Pose,
    pub goal: (f64, f64),
    pub instruction: Vec<u32>,
    /// Steps of the reference trajectory.
    pub gt_steps: usize,
    pub gt_path_len: f64,
}

impl NavTask {
    pub fn from_episode(world: World, ep: &Episode) -> Self {
        NavTask {
            episode_id: ep.id,
            start: ep.poses[0],
            goal: ep.goal,
            instruction: ep.instruction.clone(),
            gt_steps: ep.n_frames().saturating_sub(1),
            gt_path_len: ep.path_length,
            world,
        }
    }

    pub fn from_record(world: World, rec: &EpisodeRecord) -> Self {
        NavTask {
            episode_id: rec.id,
            start: rec.start,
            goal: rec.goal,
            instruction: rec.instruction.clone(),
            gt_steps: rec.n_frames.saturating_sub(1),
            gt_path_len: rec.path_length,
            world,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub episode_id: u64,
    pub trajectory: Vec<Pose>,
    pub stopped: bool,
    pub steps_taken: usize,
    /// Geodesic distance to the goal at the end.
    pub final_dist: f64,
    /// Smallest geodesic distance to the goal along the trajectory.
    pub min_dist: f64,
    pub agent_path_len: f64,
    pub gt_path_len: f64,
}

/// Maps the current observation and pose to `K` waypoints
/// `[x, y, sin θ, cos θ, stop]` in the agent's body frame.
pub trait Policy {
    fn reset(&mut self, task: &NavTask);
    fn act(&mut self, obs: &Observation, pose: &Pose) -> Result<Vec<[f64; 5]>, EvalError>;
}

/// The trained network with a sliding history window.
pub struct ModelPolicy<'m> {
    pub model: &'m NavModel,
    pub ablation: Ablation,
    instruction: Vec<u32>,
    history: VecDeque<(Observation, Pose)>,
}

impl<'m> ModelPolicy<'m> {
    pub fn new(model: &'m NavModel, ablation: Ablation) -> Self {
        ModelPolicy {
            model,
            ablation,
            instruction: Vec::new(),
            history: VecDeque::new(),
        }
    }
}

impl Policy for ModelPolicy<'_> {
    fn reset(&mut self, task: &NavTask) {
        self.instruction = task.instruction.clone();
        self.history.clear();
    }

    fn act(&mut self, obs: &Observation, pose: &Pose) -> Result<Vec<[f64; 5]>, EvalError> {
        if self.history.len() == self.model.cfg.h_max {
            self.history.pop_front();
        }
        self.history.push_back((obs.clone(), *pose));
        let input = ModelInput {
            instruction: &self.instruction,
            frames: self
                .history
                .iter()
                .map(|(o, p)| FrameInput {
                    obs: o,
                    rel_pose: pose.relative(p),
                })
                .collect(),
        };
        let out = self.model.predict(&input, &self.ablation, ForwardMode::Full)?;
        Ok(out.waypoints.expect("full forward yields waypoints"))
    }
}

/// Uniformly random forward-facing waypoints; stops with probability
/// `1 / expected_steps` per decision.
pub struct RandomWaypointPolicy {
    rng: ChaCha8Rng,
    seed: u64,
    pub n_waypoints: usize,
    pub max_step: f64,
    pub expected_steps: f64,
}

impl RandomWaypointPolicy {
    pub fn new(seed: u64, n_waypoints: usize, max_step: f64, expected_steps: f64) -> Self {
        RandomWaypointPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            n_waypoints,
            max_step,
            expected_steps,
        }
    }
}

impl Policy for RandomWaypointPolicy {
    fn reset(&mut self, task: &NavTask) {
        self.rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, task.episode_id));
    }

    fn act(&mut self, _obs: &Observation, _pose: &Pose) -> Result<Vec<[f64; 5]>, EvalError> {
        let stop = self.rng.gen::<f64>() < 1.0 / self.expected_steps.max(1.0);
        Ok((0..self.n_waypoints)
            .map(|_| {
                let heading = self.rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
                let r = self.rng.gen_range(0.0..self.max_step);
                let (s, c) = heading.sin_cos();
                [r * c, r * s, s, c, f64::from(u8::from(stop))]
            })
            .collect())
    }
}

fn step_budget(task: &NavTask, cfg: &EvalConfig) -> usize {
    ((cfg.max_steps_factor * task.gt_steps.max(1) as f64).ceil() as usize).max(1)
}

/// Runs the policy from the task start until it stops or exhausts the step
/// budget; each decision executes the first `exec_horizon` waypoints.
pub fn rollout(
    policy: &mut dyn Policy,
    task: &NavTask,
    ep_cfg: &EpisodeConfig,
    cfg: &EvalConfig,
) -> Result<RolloutResult, EvalError> {
    let world = &task.world;
    let field = GeodesicField::new(world, task.goal);
    let dist = |p: &Pose| field.distance_from(world, p.position());
    let budget = step_budget(task, cfg);
    policy.reset(task);
    let mut pose = task.start;
    let mut trajectory = vec![pose];
    let mut min_dist = dist(&pose);
    let mut steps = 0;
    let mut stopped = false;
    while steps < budget {
        let obs = raycast_fov(world, &pose, ep_cfg.n_rays, ep_cfg.fov_deg)?;
        let wps = policy.act(&obs, &pose)?;
        if !wps.is_empty() && wps.iter().all(|w| w[4] >= cfg.stop_threshold) {
            stopped = true;
            break;
        }
        let decision = pose;
        for w in wps.iter().take(cfg.exec_horizon) {
            if steps >= budget {
                break;
            }
            let (s, c) = (w[2], w[3]);
            let dtheta = if s.is_finite() && c.is_finite() && s.hypot(c) > 1e-12 { s.atan2(c) } else { 0.0 };
            let (x, y) = if w[0].is_finite() && w[1].is_finite() { (w[0], w[1]) } else { (0.0, 0.0) };
            let target = decision.compose(x, y, dtheta);
            let rel = pose.relative(&target);
            pose = step_agent(world, &pose, &Waypoint::from_rel(rel, false));
            trajectory.push(pose);
            min_dist = min_dist.min(dist(&pose));
            steps += 1;
        }
    }
    let agent_path_len = trajectory
        .windows(2)
        .map(|w| w[0].dist_to(w[1].position()))
        .sum();
    Ok(RolloutResult {
        episode_id: task.episode_id,
        final_dist: dist(&pose),
        min_dist,
        trajectory,
        stopped,
        steps_taken: steps,
        agent_path_len,
        gt_path_len: task.gt_path_len,
    })
}

/// Rollouts of independent policy instances over every task, in task order.
pub fn evaluate_policy<P, F>(
    make_policy: F,
    tasks: &[NavTask],
    ep_cfg: &EpisodeConfig,
    cfg: &EvalConfig,
) -> Result<Vec<RolloutResult>, EvalError>
where
    P: Policy,
    F: Fn() -> P + Sync,
{
    cfg.validate()?;
    tasks
        .par_iter()
        .map(|task| {
            let mut p = make_policy();
            rollout(&mut p, task, ep_cfg, cfg)
        })
        .collect()
}
