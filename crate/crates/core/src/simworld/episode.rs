use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{wrap_angle, Pose};
use super::planner::{geodesic_distance, plan_path};
use super::raycast::{raycast_fov, Observation};
use super::vocab::{class_name, Vocab, SEP};
use rayon::prelude::*;

use super::world::{generate_world, World, WorldConfig};
use super::SimError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub n_rays: usize,
    /// Angular extent of the ray fan; 360 is a full panorama.
    pub fov_deg: f64,
    pub success_radius: f64,
    pub max_step_dist: f64,
    pub turn_thresh_deg: f64,
    pub straight_span: f64,
    /// Gap between the goal object's surface and the goal point.
    pub goal_standoff: f64,
    pub max_retries: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            n_rays: 64,
            fov_deg: 360.0,
            success_radius: 1.0,
            max_step_dist: 0.5,
            turn_thresh_deg: 30.0,
            straight_span: 5.0,
            goal_standoff: 0.5,
            max_retries: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubInstruction {
    pub tokens: Vec<u32>,
    pub milestone_frame: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: u64,
    pub world_seed: u64,
    pub instruction: Vec<u32>,
    pub sub_instructions: Vec<SubInstruction>,
    pub poses: Vec<Pose>,
    #[serde(skip)]
    pub observations: Vec<Observation>,
    pub goal: (f64, f64),
    pub path_length: f64,
}

impl Episode {
    pub fn n_frames(&self) -> usize {
        self.poses.len()
    }

    pub fn final_frame(&self) -> usize {
        self.poses.len().saturating_sub(1)
    }

    pub fn milestones(&self) -> Vec<usize> {
        self.sub_instructions.iter().map(|s| s.milestone_frame).collect()
    }

    /// Checks the structural invariants.
    pub fn validate(&self, world: &World, cfg: &EpisodeConfig) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidEpisode(m.to_string()));
        if self.poses.is_empty() {
            return bad("no poses");
        }
        if self.observations.len() != self.poses.len() {
            return bad("observation count differs from pose count");
        }
        let ms = self.milestones();
        if ms.is_empty() || ms.windows(2).any(|w| w[1] <= w[0]) {
            return bad("milestones are not strictly increasing");
        }
        if *ms.last().unwrap() != self.final_frame() {
            return bad("last milestone is not the final frame");
        }
        for w in self.poses.windows(2) {
            if w[0].dist_to(w[1].position()) > cfg.max_step_dist + 1e-9 {
                return bad("step exceeds max_step_dist");
            }
        }
        if self.poses.iter().any(|p| !world.is_free(p.x, p.y)) {
            return bad("pose in occupied space");
        }
        if self.poses.last().unwrap().dist_to(self.goal) > cfg.success_radius {
            return bad("final pose is outside the success radius");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Reason {
    Room,
    Turn { left: bool },
    Straight,
}

fn episode_rng(world_seed: u64, seed: u64) -> ChaCha8Rng {
    let mut s = world_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ seed.rotate_left(29);
    s ^= s >> 31;
    ChaCha8Rng::seed_from_u64(s)
}

fn sample_in_room(world: &World, room: usize, clearance: f64, rng: &mut ChaCha8Rng) -> Option<(f64, f64)> {
    let r = world.rooms[room];
    for _ in 0..500 {
        let p = (rng.gen_range(r.x0..r.x1), rng.gen_range(r.y0..r.y1));
        if world.clearance(p.0, p.1) >= clearance {
            return Some(p);
        }
    }
    None
}

/// Samples a start/goal pair, plans the route and annotates milestones.
pub fn generate_episode(world: &World, seed: u64, cfg: &EpisodeConfig) -> Result<Episode, SimError> {
    let mut rng = episode_rng(world.seed, seed);
    let vocab = Vocab::for_classes(world.config.n_classes);
    let clearance = world.config.plan_clearance.max(world.config.agent_radius);
    let mut last_err = SimError::InvalidEpisode("no episode attempt succeeded".into());
    for _ in 0..cfg.max_retries.max(1) {
        let n_rooms = world.rooms.len();
        let start_room = rng.gen_range(0..n_rooms);
        let goal_room = if n_rooms > 1 {
            (start_room + rng.gen_range(1..n_rooms)) % n_rooms
        } else {
            start_room
        };
        let candidates: Vec<usize> = (0..world.objects.len())
            .filter(|&i| world.objects[i].room == goal_room)
            .collect();
        let Some(&obj_idx) = candidates.choose(&mut rng) else {
            continue;
        };
        let obj = world.objects[obj_idx];
        let ring = obj.radius + cfg.goal_standoff;
        let offset = rng.gen_range(0.0..std::f64::consts::TAU);
        let goal = (0..16).map(|k| offset + k as f64 * std::f64::consts::TAU / 16.0).find_map(|a| {
            let g = (obj.x + ring * a.cos(), obj.y + ring * a.sin());
            (world.clearance(g.0, g.1) >= clearance).then_some(g)
        });
        let Some(goal) = goal else {
            continue;
        };
        let Some(start) = sample_in_room(world, start_room, clearance, &mut rng) else {
            continue;
        };
        if ((start.0 - goal.0).powi(2) + (start.1 - goal.1).powi(2)).sqrt() <= cfg.success_radius {
            continue;
        }
        let mut poses = match plan_path(world, &Pose::new(start.0, start.1, 0.0), goal, cfg.max_step_dist) {
            Ok(p) => p,
            Err(e) => {
                last_err = e;
                continue;
            }
        };
        if poses.len() < 2 {
            continue;
        }
        let last = poses.len() - 1;
        let face = (obj.y - poses[last].y).atan2(obj.x - poses[last].x);
        poses[last] = Pose::new(poses[last].x, poses[last].y, face);
        let observations = poses
            .iter()
            .map(|p| raycast_fov(world, p, cfg.n_rays, cfg.fov_deg))
            .collect::<Result<Vec<_>, _>>()?;
        let sub_instructions = annotate_milestones(world, &poses, obj.class_id, cfg, &vocab);
        let mut instruction = Vec::new();
        for (i, s) in sub_instructions.iter().enumerate() {
            if i > 0 {
                instruction.push(SEP);
            }
            instruction.extend_from_slice(&s.tokens);
        }
        let path_length = geodesic_distance(world, start, goal);
        return Ok(Episode {
            id: seed,
            world_seed: world.seed,
            instruction,
            sub_instructions,
            poses,
            observations,
            goal,
            path_length,
        });
    }
    Err(last_err)
}

fn nearest_class(world: &World, p: &Pose) -> usize {
    world
        .objects
        .iter()
        .map(|o| (p.dist_to((o.x, o.y)) - o.radius, o.class_id))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map_or(0, |(_, c)| c)
}

/// Milestones at room changes, accumulated turns and long straight runs,
/// kept at least two frames apart and closed by the terminal frame.
fn annotate_milestones(
    world: &World,
    poses: &[Pose],
    goal_class: usize,
    cfg: &EpisodeConfig,
    vocab: &Vocab,
) -> Vec<SubInstruction> {
    let n = poses.len();
    let thresh = cfg.turn_thresh_deg.to_radians();
    let mut out = Vec::new();
    let mut last: Option<usize> = None;
    let mut room = world.room_of(poses[0].x, poses[0].y);
    let mut room_pending = false;
    let mut turn = 0.0;
    let mut travel = 0.0;
    for i in 1..n.saturating_sub(1) {
        travel += poses[i - 1].dist_to(poses[i].position());
        turn += wrap_angle(poses[i].theta - poses[i - 1].theta);
        if let Some(r) = world.room_of(poses[i].x, poses[i].y) {
            if room.is_some_and(|cur| cur != r) {
                room_pending = true;
            }
            room = Some(r);
        }
        let spaced = last.map_or(true, |l| i >= l + 2);
        if !spaced || i + 2 >= n {
            continue;
        }
        let reason = if room_pending {
            Some(Reason::Room)
        } else if f64::abs(turn) >= thresh {
            Some(Reason::Turn { left: turn > 0.0 })
        } else if travel >= cfg.straight_span {
            Some(Reason::Straight)
        } else {
            None
        };
        if let Some(reason) = reason {
            let obj = class_name(nearest_class(world, &poses[i]));
            let text = match reason {
                Reason::Room => "go through the door into the next room".to_string(),
                Reason::Turn { left } => {
                    format!("turn {} at the {obj}", if left { "left" } else { "right" })
                }
                Reason::Straight => format!("go forward to the {obj}"),
            };
            out.push(SubInstruction {
                tokens: vocab.encode(&text),
                milestone_frame: i,
            });
            last = Some(i);
            room_pending = false;
            turn = 0.0;
            travel = 0.0;
        }
    }
    out.push(SubInstruction {
        tokens: vocab.encode(&format!("stop at the {}", class_name(goal_class))),
        milestone_frame: n - 1,
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::geometry::Rect;
    use crate::simworld::world::{generate_world, Door, Object, WorldConfig};

    #[test]
    fn corridor_gets_straight_milestones() {
        let world = World::from_parts(
            0,
            WorldConfig::default(),
            vec![Rect { x0: 0.0, y0: 0.0, x1: 14.0, y1: 2.0 }],
            Vec::new(),
            Vec::new(),
        );
        let poses = plan_path(&world, &Pose::new(1.0, 1.0, 0.0), (13.0, 1.0), 0.5).unwrap();
        let cfg = EpisodeConfig::default();
        let subs = annotate_milestones(&world, &poses, 1, &cfg, &Vocab::for_classes(8));
        let interior: Vec<usize> = subs[..subs.len() - 1].iter().map(|s| s.milestone_frame).collect();
        assert_eq!(interior, vec![10, 20]);
        assert_eq!(subs.last().unwrap().milestone_frame, poses.len() - 1);
    }

    #[test]
    fn turn_and_door_milestones() {
        // Two rooms side by side, door low on the shared wall, goal high up.
        let world = World::from_parts(
            0,
            WorldConfig::default(),
            vec![
                Rect { x0: 0.0, y0: 0.0, x1: 6.0, y1: 3.0 },
                Rect { x0: 6.0, y0: 0.0, x1: 9.0, y1: 10.0 },
            ],
            vec![Door { vertical: true, coord: 6.0, lo: 0.7, hi: 2.3, rooms: (0, 1) }],
            vec![Object { class_id: 2, x: 7.5, y: 9.0, radius: 0.4, room: 1 }],
        );
        world.validate().unwrap();
        let poses = plan_path(&world, &Pose::new(1.0, 1.5, 0.0), (7.5, 8.1), 0.5).unwrap();
        let cfg = EpisodeConfig::default();
        let subs = annotate_milestones(&world, &poses, 2, &cfg, &Vocab::for_classes(8));
        assert!(subs.len() >= 3, "{subs:?}");
        let v = Vocab::for_classes(8);
        let texts: Vec<String> = subs.iter().map(|s| v.decode(&s.tokens)).collect();
        assert!(texts.iter().any(|t| t.contains("door")), "{texts:?}");
        assert!(texts.iter().any(|t| t.starts_with("turn left")), "{texts:?}");
        assert_eq!(texts.last().unwrap(), "stop at the table");
    }

    #[test]
    fn generated_episodes_are_valid_and_deterministic() {
        let cfg = EpisodeConfig::default();
        for s in 0..20 {
            let world = generate_world(s, &WorldConfig::default()).unwrap();
            let ep = generate_episode(&world, s + 100, &cfg).unwrap();
            ep.validate(&world, &cfg).unwrap();
            assert_eq!(ep, generate_episode(&world, s + 100, &cfg).unwrap());
        }
    }
}

/// One episode in each of `count` worlds with seeds `first_seed..`. A seed
/// whose world or episode cannot be generated is skipped and the range
/// extends until `count` pairs exist or `count` extra seeds were tried.
pub fn generate_episode_set(
    first_seed: u64,
    count: usize,
    world_cfg: &WorldConfig,
    ep_cfg: &EpisodeConfig,
) -> Result<Vec<(World, Episode)>, SimError> {
    let make = |seed: u64| -> Result<(World, Episode), SimError> {
        let world = generate_world(seed, world_cfg)?;
        let ep = generate_episode(&world, seed, ep_cfg)?;
        Ok((world, ep))
    };
    let mut out: Vec<(World, Episode)> = Vec::with_capacity(count);
    let mut next = first_seed;
    let limit = first_seed + 2 * count as u64;
    while out.len() < count && next < limit {
        let want = (count - out.len()) as u64;
        let seeds: Vec<u64> = (next..(next + want).min(limit)).collect();
        next += seeds.len() as u64;
        let made: Vec<Result<(World, Episode), SimError>> = seeds.into_par_iter().map(make).collect();
        for r in made {
            match r {
                Ok(pair) => out.push(pair),
                Err(e) => log::warn!("skipping seed: {e}"),
            }
        }
    }
    if out.len() < count {
        return Err(SimError::GenerationFailed {
            seed: first_seed,
            attempts: (next - first_seed) as usize,
        });
    }
    Ok(out)
}
