use std::f64::consts::TAU;

use dualnav_core::simworld::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn open_room(x1: f64, y1: f64) -> World {
    World::from_parts(
        0,
        WorldConfig::default(),
        vec![Rect { x0: 0.0, y0: 0.0, x1, y1 }],
        Vec::new(),
        Vec::new(),
    )
}

/// Independent ray oracle: nearest positive root over every wall and circle.
fn oracle_depth(world: &World, o: (f64, f64), a: f64) -> f64 {
    let d = (a.cos(), a.sin());
    let mut best = world.config.max_range;
    for w in world.walls() {
        // Axis-aligned segments only.
        if (w.a.0 - w.b.0).abs() < 1e-12 {
            if d.0.abs() > 1e-15 {
                let t = (w.a.0 - o.0) / d.0;
                let y = o.1 + t * d.1;
                if t > 0.0 && y >= w.a.1.min(w.b.1) - 1e-12 && y <= w.a.1.max(w.b.1) + 1e-12 {
                    best = best.min(t);
                }
            }
        } else if d.1.abs() > 1e-15 {
            let t = (w.a.1 - o.1) / d.1;
            let x = o.0 + t * d.0;
            if t > 0.0 && x >= w.a.0.min(w.b.0) - 1e-12 && x <= w.a.0.max(w.b.0) + 1e-12 {
                best = best.min(t);
            }
        }
    }
    for ob in &world.objects {
        // |o + t d - c|² = r² solved in t.
        let (fx, fy) = (o.0 - ob.x, o.1 - ob.y);
        let b = 2.0 * (fx * d.0 + fy * d.1);
        let c = fx * fx + fy * fy - ob.radius * ob.radius;
        let disc = b * b - 4.0 * c;
        if disc >= 0.0 {
            let t = (-b - disc.sqrt()) / 2.0;
            if t > 0.0 {
                best = best.min(t);
            }
        }
    }
    best
}

#[test]
fn seven_four_rooms_connected_and_deterministic() {
    let cfg = WorldConfig { n_rooms: 4, n_classes: 8, ..Default::default() };
    let a = generate_world(7, &cfg).unwrap();
    a.validate().unwrap();
    let b = generate_world(7, &cfg).unwrap();
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
}

#[test]
fn seven_single_room() {
    let cfg = WorldConfig { n_rooms: 1, ..Default::default() };
    let w = generate_world(7, &cfg).unwrap();
    assert_eq!(w.rooms.len(), 1);
    assert!(w.doors.is_empty());
    w.validate().unwrap();
}

#[test]
fn class_embeddings_unit_and_distinct() {
    let e = class_embeddings(8, 16, 0);
    for (i, r) in e.iter().enumerate() {
        assert!((r.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        for s in &e[i + 1..] {
            assert_ne!(r, s);
        }
    }
}

#[test]
fn centred_square_axis_rays() {
    let w = World::from_parts(
        0,
        WorldConfig::default(),
        vec![Rect { x0: -4.0, y0: -4.0, x1: 4.0, y1: 4.0 }],
        Vec::new(),
        Vec::new(),
    );
    let obs = raycast_panorama(&w, &Pose::new(0.0, 0.0, 0.0), 64).unwrap();
    assert!((obs.depth[0] - 4.0).abs() < 1e-6);
    assert!((obs.depth[16] - 4.0).abs() < 1e-6);
}

#[test]
fn wall_two_units_ahead() {
    let w = open_room(10.0, 10.0);
    let obs = raycast_panorama(&w, &Pose::new(8.0, 5.0, 0.0), 64).unwrap();
    let exact = oracle_depth(&w, (8.0, 5.0), 0.0);
    assert!((exact - 2.0).abs() < 1e-12);
    assert!((obs.depth[0] as f64 - 2.0).abs() <= w.config.cell);
}

#[test]
fn raycast_matches_oracle_in_generated_worlds() {
    let cfg = EpisodeConfig::default();
    for seed in 0..10 {
        let world = generate_world(seed, &WorldConfig::default()).unwrap();
        let ep = generate_episode(&world, seed, &cfg).unwrap();
        for (pose, obs) in ep.poses.iter().zip(&ep.observations) {
            for r in 0..cfg.n_rays {
                let a = pose.theta + TAU * r as f64 / cfg.n_rays as f64;
                let want = oracle_depth(&world, pose.position(), a);
                assert!((obs.depth[r] as f64 - want).abs() < 1e-4, "seed {seed} ray {r}");
                assert!(obs.depth[r] > 0.0 && obs.depth[r] as f64 <= world.config.max_range);
            }
        }
    }
}

#[test]
fn rotation_shifts_panorama() {
    let world = generate_world(11, &WorldConfig::default()).unwrap();
    let ep = generate_episode(&world, 3, &EpisodeConfig::default()).unwrap();
    let r = 64;
    for p in ep.poses.iter().step_by(3) {
        let a = raycast_panorama(&world, p, r).unwrap();
        for k in 1..4 {
            let q = Pose::new(p.x, p.y, p.theta + k as f64 * TAU / r as f64);
            let b = raycast_panorama(&world, &q, r).unwrap();
            for i in 0..r {
                let j = (i + k) % r;
                assert!((b.depth[i] - a.depth[j]).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn planner_corridor_and_errors() {
    let w = open_room(14.0, 2.0);
    let path = plan_path(&w, &Pose::new(1.0, 1.0, 0.0), (13.0, 1.0), 0.5).unwrap();
    let len = path_length(&path);
    assert!((len - 12.0).abs() / 12.0 < 0.05);
    assert!(path.windows(2).all(|p| p[1].x >= p[0].x));
    assert!(plan_path(&w, &Pose::new(1.0, 1.0, 0.0), (13.95, 1.0), 0.5).is_err());
    let p = Pose::new(3.0, 1.0, 0.0);
    assert_eq!(plan_path(&w, &p, (3.0, 1.0), 0.5).unwrap().len(), 1);
}

#[test]
fn geodesic_open_room_close_to_euclid() {
    let w = open_room(10.0, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let a = (rng.gen_range(1.0..9.0), rng.gen_range(1.0..9.0));
        let b = (rng.gen_range(1.0..9.0), rng.gen_range(1.0..9.0));
        let e = ((a.0 - b.0) as f64).hypot(a.1 - b.1);
        let g = geodesic_distance(&w, a, b);
        // Snapping moves each endpoint by at most half a cell diagonal.
        let snap = w.config.cell * std::f64::consts::SQRT_2;
        assert!(g <= 1.0824 * (e + snap) + 1e-9, "{g} vs {e}");
        assert!(g + snap >= e - 1e-9);
    }
}

#[test]
fn milestone_rules_on_turn_and_door() {
    let world = World::from_parts(
        0,
        WorldConfig::default(),
        vec![
            Rect { x0: 0.0, y0: 0.0, x1: 6.0, y1: 3.0 },
            Rect { x0: 6.0, y0: 0.0, x1: 9.0, y1: 10.0 },
        ],
        vec![Door { vertical: true, coord: 6.0, lo: 0.7, hi: 2.3, rooms: (0, 1) }],
        vec![Object { class_id: 2, x: 7.5, y: 9.3, radius: 0.4, room: 1 }],
    );
    let cfg = EpisodeConfig::default();
    let ep = (0..200)
        .filter_map(|s| generate_episode(&world, s, &cfg).ok())
        .find(|e| e.poses[0].x < 2.0)
        .expect("an episode starting at the far end");
    ep.validate(&world, &cfg).unwrap();
    let interior = ep.sub_instructions.len() - 1;
    assert!(interior >= 2, "{:?}", ep.milestones());
    assert_eq!(*ep.milestones().last().unwrap(), ep.final_frame());
}

#[test]
fn straight_corridor_milestones() {
    let world = World::from_parts(
        0,
        WorldConfig::default(),
        vec![
            Rect { x0: 0.0, y0: 0.0, x1: 14.0, y1: 2.0 },
            Rect { x0: 14.0, y0: 0.0, x1: 17.0, y1: 2.0 },
        ],
        vec![Door { vertical: true, coord: 14.0, lo: 0.2, hi: 1.8, rooms: (0, 1) }],
        vec![Object { class_id: 1, x: 16.0, y: 1.0, radius: 0.3, room: 1 }],
    );
    let ep = (0..500)
        .filter_map(|s| generate_episode(&world, s, &EpisodeConfig::default()).ok())
        .find(|e| e.poses[0].x < 1.5)
        .expect("an episode starting at the corridor end");
    assert!(ep.path_length >= 12.0);
    let straight = ep
        .sub_instructions
        .iter()
        .filter(|s| Vocab::for_classes(8).decode(&s.tokens).starts_with("go forward"))
        .count();
    assert!(straight >= 2, "{:?}", ep.milestones());
}

#[test]
fn episodes_deterministic_bytes() {
    let world = generate_world(4, &WorldConfig::default()).unwrap();
    let cfg = EpisodeConfig::default();
    let a = generate_episode(&world, 9, &cfg).unwrap();
    let b = generate_episode(&world, 9, &cfg).unwrap();
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    assert_eq!(a.observations, b.observations);
}

#[test]
fn fuzz_thousand_episode_seeds() {
    let cfg = EpisodeConfig::default();
    let wcfg = WorldConfig::default();
    for seed in 0..1000u64 {
        let world = generate_world(seed, &wcfg).unwrap();
        world.validate().unwrap();
        let ep = generate_episode(&world, seed, &cfg).unwrap();
        ep.validate(&world, &cfg).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

#[test]
fn step_agent_identity_forward_and_contact() {
    let w = open_room(10.0, 10.0);
    let p = Pose::new(5.0, 5.0, 0.0);
    let id = Waypoint { x: 0.0, y: 0.0, sin: 0.0, cos: 1.0, stop: 0.0 };
    assert_eq!(step_agent(&w, &p, &id), p);
    let fwd = Waypoint { x: 1.0, ..id };
    let q = step_agent(&w, &p, &fwd);
    assert!((q.x - 6.0).abs() < 1e-12 && (q.y - 5.0).abs() < 1e-12);
    // Wall 1.2 units ahead.
    let near = Pose::new(8.8, 5.0, 0.0);
    let q = step_agent(&w, &near, &Waypoint { x: 3.0, ..id });
    assert!((q.x - near.x - (1.2 - w.config.agent_radius)).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_agent_never_enters_obstacles(
        seed in 0u64..40,
        moves in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -1.0f64..1.0, -1.0f64..1.0), 1..30),
    ) {
        let world = generate_world(seed, &WorldConfig::default()).unwrap();
        let ep = generate_episode(&world, seed, &EpisodeConfig::default()).unwrap();
        let mut pose = ep.poses[0];
        for (x, y, s, c) in moves {
            pose = step_agent(&world, &pose, &Waypoint { x, y, sin: s, cos: c, stop: 0.0 });
            prop_assert!(world.is_free(pose.x, pose.y));
        }
    }
}
