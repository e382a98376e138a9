use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::geometry::Pose;
use super::world::World;
use super::SimError;

/// Panoramic ring observation; stored in single precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// `R` ray depths in `(0, max_range]`, ray 0 along the agent heading.
    pub depth: Vec<f32>,
    /// Row-major `R × F` features of the class hit by each ray.
    pub semfeat: Vec<f32>,
    /// Class hit by each ray, −1 at max range.
    pub class_ids: Vec<i32>,
}

impl Observation {
    pub fn n_rays(&self) -> usize {
        self.depth.len()
    }

    pub fn feat_dim(&self) -> usize {
        if self.depth.is_empty() {
            0
        } else {
            self.semfeat.len() / self.depth.len()
        }
    }

    pub fn semfeat_row(&self, r: usize) -> &[f32] {
        let f = self.feat_dim();
        &self.semfeat[r * f..(r + 1) * f]
    }
}

/// Casts `n_rays` rays uniformly over 360° starting at the pose heading.
pub fn raycast_panorama(world: &World, pose: &Pose, n_rays: usize) -> Result<Observation, SimError> {
    raycast_fov(world, pose, n_rays, 360.0)
}

/// Like [`raycast_panorama`] but spreading the rays over `fov_deg` centred on
/// the heading; `fov_deg = 360` gives the panorama.
pub fn raycast_fov(
    world: &World,
    pose: &Pose,
    n_rays: usize,
    fov_deg: f64,
) -> Result<Observation, SimError> {
    if !world.is_free(pose.x, pose.y) {
        return Err(SimError::PoseInObstacle { x: pose.x, y: pose.y });
    }
    let f = world.config.feat_dim;
    let max_range = world.config.max_range;
    let mut obs = Observation {
        depth: Vec::with_capacity(n_rays),
        semfeat: Vec::with_capacity(n_rays * f),
        class_ids: Vec::with_capacity(n_rays),
    };
    let fov = fov_deg.to_radians();
    let (start, step) = if fov_deg >= 360.0 {
        (0.0, TAU / n_rays as f64)
    } else {
        (-0.5 * fov, if n_rays > 1 { fov / (n_rays - 1) as f64 } else { 0.0 })
    };
    for r in 0..n_rays {
        let a = pose.theta + start + step * r as f64;
        let (d, class) = cast_ray(world, (pose.x, pose.y), (a.cos(), a.sin()));
        if d >= max_range {
            obs.depth.push(max_range as f32);
            obs.semfeat.extend(std::iter::repeat(0.0).take(f));
            obs.class_ids.push(-1);
        } else {
            obs.depth.push(d as f32);
            obs.semfeat
                .extend(world.class_embeddings[class].iter().map(|&v| v as f32));
            obs.class_ids.push(class as i32);
        }
    }
    Ok(obs)
}

/// Nearest hit along a unit direction: `(distance, class)`; walls are class 0.
pub fn cast_ray(world: &World, o: (f64, f64), d: (f64, f64)) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0usize);
    for w in world.walls() {
        if let Some(t) = w.ray_hit(o, d) {
            if t < best.0 {
                best = (t, 0);
            }
        }
    }
    for obj in &world.objects {
        let (px, py) = (o.0 - obj.x, o.1 - obj.y);
        let b = px * d.0 + py * d.1;
        let c = px * px + py * py - obj.radius * obj.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        let t = if -b - sq > 1e-12 { -b - sq } else { -b + sq };
        if t > 1e-12 && t < best.0 {
            best = (t, obj.class_id);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::geometry::Rect;
    use crate::simworld::world::{Object, WorldConfig};

    fn square(half: f64) -> World {
        World::from_parts(
            0,
            WorldConfig::default(),
            vec![Rect { x0: -half, y0: -half, x1: half, y1: half }],
            Vec::new(),
            Vec::new(),
        )
    }

    #[test]
    fn centred_agent_sees_half_width_on_axes() {
        let w = square(3.0);
        let obs = raycast_panorama(&w, &Pose::new(0.0, 0.0, 0.0), 64).unwrap();
        assert!((obs.depth[0] - 3.0).abs() < 1e-6);
        assert!((obs.depth[16] - 3.0).abs() < 1e-6);
        assert!((obs.depth[32] - 3.0).abs() < 1e-6);
        assert!(obs.class_ids.iter().all(|&c| c == 0));
        assert_eq!(obs.semfeat_row(5), obs.semfeat_row(40));
    }

    #[test]
    fn object_hit_reports_its_class() {
        let mut w = square(4.0);
        w = World::from_parts(
            0,
            w.config.clone(),
            w.rooms.clone(),
            Vec::new(),
            vec![Object { class_id: 3, x: 2.0, y: 0.0, radius: 0.5, room: 0 }],
        );
        let obs = raycast_panorama(&w, &Pose::new(0.0, 0.0, 0.0), 8).unwrap();
        assert!((obs.depth[0] - 1.5).abs() < 1e-6);
        assert_eq!(obs.class_ids[0], 3);
        let e: Vec<f32> = w.class_embeddings[3].iter().map(|&v| v as f32).collect();
        assert_eq!(obs.semfeat_row(0), &e[..]);
    }

    #[test]
    fn pose_in_obstacle_is_rejected() {
        let w = square(3.0);
        assert!(raycast_panorama(&w, &Pose::new(2.95, 0.0, 0.0), 8).is_err());
        assert!(raycast_panorama(&w, &Pose::new(9.0, 0.0, 0.0), 8).is_err());
    }
}
