use super::geometry::{Pose, Waypoint};
use super::world::World;

const SUBSTEP: f64 = 0.02;

/// Moves toward the body-frame waypoint, stopping at the first contact.
pub fn step_agent(world: &World, pose: &Pose, wp: &Waypoint) -> Pose {
    let n = (wp.sin * wp.sin + wp.cos * wp.cos).sqrt();
    let dtheta = if n > 1e-12 && n.is_finite() {
        (wp.sin / n).atan2(wp.cos / n)
    } else {
        0.0
    };
    let target = pose.compose(wp.x, wp.y, dtheta);
    let theta = target.theta;
    if !world.is_free(pose.x, pose.y) {
        return Pose::new(pose.x, pose.y, theta);
    }
    let (dx, dy) = (target.x - pose.x, target.y - pose.y);
    let len = (dx * dx + dy * dy).sqrt();
    if len == 0.0 {
        return Pose::new(pose.x, pose.y, theta);
    }
    let at = |s: f64| (pose.x + s * dx, pose.y + s * dy);
    let steps = (len / SUBSTEP).ceil() as usize;
    let mut free = 0.0;
    for i in 1..=steps {
        let s = i as f64 / steps as f64;
        let p = at(s);
        if world.is_free(p.0, p.1) {
            free = s;
            continue;
        }
        let mut blocked = s;
        for _ in 0..40 {
            let mid = 0.5 * (free + blocked);
            let q = at(mid);
            if world.is_free(q.0, q.1) {
                free = mid;
            } else {
                blocked = mid;
            }
        }
        let q = at(free);
        return Pose::new(q.0, q.1, theta);
    }
    Pose::new(target.x, target.y, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::geometry::Rect;
    use crate::simworld::world::WorldConfig;

    fn room() -> World {
        World::from_parts(
            0,
            WorldConfig::default(),
            vec![Rect { x0: 0.0, y0: 0.0, x1: 10.0, y1: 10.0 }],
            Vec::new(),
            Vec::new(),
        )
    }

    #[test]
    fn identity_waypoint_keeps_pose() {
        let w = room();
        let p = Pose::new(3.0, 4.0, 1.1);
        let wp = Waypoint { x: 0.0, y: 0.0, sin: 0.0, cos: 1.0, stop: 0.0 };
        assert_eq!(step_agent(&w, &p, &wp), p);
    }

    #[test]
    fn forward_in_open_space() {
        let w = room();
        let p = Pose::new(3.0, 4.0, 0.5);
        let wp = Waypoint { x: 1.0, y: 0.0, sin: 0.0, cos: 1.0, stop: 0.0 };
        let q = step_agent(&w, &p, &wp);
        assert!((p.dist_to(q.position()) - 1.0).abs() < 1e-12);
        assert!(((q.y - p.y).atan2(q.x - p.x) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stops_at_wall_contact() {
        let w = room();
        let p = Pose::new(8.8, 5.0, 0.0);
        let wp = Waypoint { x: 3.0, y: 0.0, sin: 0.0, cos: 1.0, stop: 0.0 };
        let q = step_agent(&w, &p, &wp);
        assert!((q.x - (8.8 + 1.2 - 0.2)).abs() < 1e-6, "{}", q.x);
        assert!(w.is_free(q.x, q.y));
    }
}
