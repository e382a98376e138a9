use std::f64::consts::FRAC_PI_2;

use dualnav_core::dataset::*;
use dualnav_core::simworld::*;
use proptest::prelude::*;

fn obs(v: f32) -> Observation {
    Observation {
        depth: vec![v; 4],
        semfeat: vec![0.0; 8],
        class_ids: vec![-1; 4],
    }
}

/// Straight episode along +x with the given milestones.
fn toy(n: usize, milestones: &[usize]) -> Episode {
    Episode {
        id: 0,
        world_seed: 0,
        instruction: vec![3, 4],
        sub_instructions: milestones
            .iter()
            .enumerate()
            .map(|(i, &m)| SubInstruction {
                tokens: vec![3 + i as u32],
                milestone_frame: m,
            })
            .collect(),
        poses: (0..n).map(|i| Pose::new(0.5 * i as f64, 0.0, 0.0)).collect(),
        observations: (0..n).map(|i| obs(1.0 + i as f32)).collect(),
        goal: (0.5 * (n - 1) as f64, 0.0),
        path_length: 0.5 * (n - 1) as f64,
    }
}

fn sample(kind: SampleKind, action: ActionClass) -> TrainingSample {
    TrainingSample {
        episode: 0,
        t: 0,
        kind,
        instruction: vec![],
        history: vec![],
        short_target: 0,
        long_target: 0,
        m_t: 1,
        waypoints: vec![],
        plan: PlanLabel {
            progress_index: 0,
            summary_span: (0, 0),
            next_plan_span: 0,
            action_class: action,
        },
        n_sub: 1,
    }
}

fn planning_set(f: usize, l: usize, r: usize, s: usize) -> Vec<TrainingSample> {
    let mut v = Vec::new();
    for (n, a) in [(f, ActionClass::Forward), (l, ActionClass::Left), (r, ActionClass::Right), (s, ActionClass::Stop)] {
        for _ in 0..n {
            v.push(sample(SampleKind::Planning, a));
        }
    }
    v
}

#[test]
fn well_formed_episode_is_a_fixpoint() {
    let ep = toy(12, &[3, 7, 11]);
    assert_eq!(annotate_episode(&ep).unwrap(), ep);
}

#[test]
fn duplicate_milestones_merge() {
    let ep = toy(10, &[3, 3, 9]);
    let out = annotate_episode(&ep).unwrap();
    assert_eq!(out.milestones(), vec![3, 9]);
    assert_eq!(out.sub_instructions[0].tokens, vec![3, SEP, 4]);
}

#[test]
fn close_milestones_merge_and_last_is_forced() {
    let ep = toy(12, &[2, 3, 8]);
    assert_eq!(annotate_episode(&ep).unwrap().milestones(), vec![3, 11]);
}

#[test]
fn bad_milestones_reject() {
    assert_eq!(annotate_episode(&toy(10, &[3, 12])), Err(RejectReason::BeyondEnd));
    assert_eq!(annotate_episode(&toy(10, &[5, 3, 9])), Err(RejectReason::NonIncreasing));
    assert_eq!(annotate_episode(&toy(10, &[])), Err(RejectReason::Empty));
}

#[test]
fn language_actions() {
    let cfg = DatasetConfig::default();
    let ep = toy(12, &[11]);
    assert_eq!(derive_language_action(&ep, 11, &cfg), ActionClass::Stop);
    assert_eq!(derive_language_action(&ep, 10, &cfg), ActionClass::Stop);
    assert_eq!(derive_language_action(&ep, 2, &cfg), ActionClass::Forward);

    // Quarter turns spread over four frames starting after frame 3.
    let mut turn = toy(14, &[13]);
    let mut heading = 0.0;
    for i in 0..14 {
        if (4..8).contains(&i) {
            heading += FRAC_PI_2 / 4.0;
        }
        turn.poses[i].theta = wrap_angle(heading);
    }
    let oracle = |t: usize| -> f64 {
        (t..t + 4).map(|j| wrap_angle(turn.poses[j + 1].theta - turn.poses[j].theta)).sum()
    };
    assert!((oracle(3) - FRAC_PI_2).abs() < 1e-12);
    assert_eq!(derive_language_action(&turn, 3, &cfg), ActionClass::Left);
    for p in &mut turn.poses {
        p.theta = wrap_angle(-p.theta);
    }
    assert_eq!(derive_language_action(&turn, 3, &cfg), ActionClass::Right);
}

#[test]
fn milestone_frame_advances_progress() {
    let cfg = DatasetConfig::default();
    let ep = toy(14, &[6, 13]);
    let s = extract_samples(&ep, 0, 0, &cfg);
    let at = |t: usize| s.iter().find(|x| x.t == t && x.kind == SampleKind::WorldModel).unwrap();
    assert_eq!(at(5).plan.progress_index, 0);
    assert_eq!(at(5).m_t, 1);
    assert_eq!(at(6).plan.progress_index, 1);
    assert_eq!(at(6).m_t, 7);
    assert_eq!(at(6).long_target, 13);
    assert_eq!(at(6).plan.summary_span, (0, 1));
    assert_eq!(at(6).plan.next_plan_span, 1);
}

#[test]
fn final_frame_and_padding() {
    let cfg = DatasetConfig::default();
    let ep = toy(10, &[4, 9]);
    let s = extract_samples(&ep, 0, 100, &cfg);
    let last = s.iter().find(|x| x.t == 9).unwrap();
    for w in &last.waypoints {
        assert_eq!(*w, [0.0, 0.0, 0.0, 1.0, 1.0]);
    }
    assert_eq!(last.short_target, 109);
    let seven = s.iter().find(|x| x.t == 7).unwrap();
    assert_eq!(seven.short_target, 109);
    assert_eq!(seven.waypoints[1][4], 0.0);
    assert_eq!(seven.waypoints[2][4], 1.0);
    assert_eq!(seven.waypoints[2][0], seven.waypoints[1][0]);
    assert_eq!(seven.history.last().unwrap().rel_pose, RelPose::IDENTITY);
    assert_eq!(seven.history.len(), 8);
}

#[test]
fn sample_count_per_kind() {
    let cfg = DatasetConfig::default();
    for n in [5, 6, 13, 30] {
        let s = extract_samples(&toy(n, &[n - 1]), 0, 0, &cfg);
        let wm = s.iter().filter(|x| x.kind == SampleKind::WorldModel).count();
        let pl = s.iter().filter(|x| x.kind == SampleKind::Planning).count();
        assert_eq!((wm, pl), (n - cfg.k, n - cfg.k));
    }
    assert!(extract_samples(&toy(4, &[3]), 0, 0, &cfg).is_empty());
}

#[test]
fn balance_arithmetic() {
    let p = BalancePolicy::default();
    let out = balance(planning_set(100, 10, 10, 5), &p, 1);
    let h = class_histogram(&out);
    assert_eq!((h.forward, h.left, h.right, h.stop), (20, 10, 10, 10));

    let out = balance(planning_set(15, 10, 8, 3), &p, 1);
    let h = class_histogram(&out);
    assert_eq!((h.forward, h.left, h.right, h.stop), (15, 10, 8, 6));

    let out = balance(planning_set(100, 0, 0, 2), &p, 1);
    assert_eq!(class_histogram(&out).forward, 20);
}

#[test]
fn balance_keeps_world_model_and_is_seeded() {
    let mut v = planning_set(50, 5, 3, 2);
    for _ in 0..7 {
        v.push(sample(SampleKind::WorldModel, ActionClass::Forward));
    }
    let mut ids = v.clone();
    for (i, s) in ids.iter_mut().enumerate() {
        s.t = i;
    }
    let a = balance(ids.clone(), &BalancePolicy::default(), 9);
    let b = balance(ids.clone(), &BalancePolicy::default(), 9);
    assert_eq!(a, b);
    assert_eq!(a.iter().filter(|s| s.kind == SampleKind::WorldModel).count(), 7);
    assert!(a.windows(2).all(|w| w[0].t <= w[1].t));
}

fn small_corpus() -> (Corpus, Vec<Episode>) {
    let world = generate_world(3, &WorldConfig::default()).unwrap();
    let eps: Vec<Episode> = (0..6)
        .map(|s| generate_episode(&world, s, &EpisodeConfig::default()).unwrap())
        .collect();
    let (mut c, _) = build_corpus(&eps, &DatasetConfig::default(), 5);
    c.header = "demo".into();
    (c, eps)
}

#[test]
fn corpus_round_trip_is_exact() {
    let (c, _) = small_corpus();
    let dir = tempfile::tempdir().unwrap();
    let (i, s) = (dir.path().join("c.jsonl"), dir.path().join("c.nfds"));
    write_dataset(&i, &s, &c).unwrap();
    let back = read_dataset(&i, &s).unwrap();
    assert_eq!(back, c);
    let (bi, bs) = encode_corpus(&back);
    assert_eq!(bi, std::fs::read(&i).unwrap());
    assert_eq!(bs, std::fs::read(&s).unwrap());
}

#[test]
fn corrupt_sidecar_header_names_offset() {
    let (c, _) = small_corpus();
    let (i, mut s) = encode_corpus(&c);
    s[4] = 9;
    let e = decode_corpus(&i, &s).unwrap_err().to_string();
    assert!(e.contains("offset 4"), "{e}");
    s[4] = 1;
    s[0] = b'Q';
    assert!(decode_corpus(&i, &s).unwrap_err().to_string().contains("offset 0"));
    s[0] = b'N';
    let cut = s.len() - 10;
    let e = decode_corpus(&i, &s[..cut]).unwrap_err().to_string();
    assert!(e.contains("offset"), "{e}");
}

#[test]
fn empty_corpus_round_trips() {
    let c = Corpus::default();
    let (i, s) = encode_corpus(&c);
    assert_eq!(decode_corpus(&i, &s).unwrap(), c);
}

/// Checks the labelling invariants of every sample against its episode.
fn check_invariants(c: &Corpus, eps: &[Episode], cfg: &DatasetConfig) {
    for s in &c.samples {
        let ep = &eps[s.episode];
        let ms = ep.milestones();
        let last = ep.final_frame();
        let progress = ms.iter().filter(|&&m| m <= s.t).count();
        assert_eq!(s.plan.progress_index, progress);
        assert!(s.m_t >= 1);
        let target = (s.t + s.m_t).min(last);
        if s.t < last {
            assert!(ms.contains(&(s.t + s.m_t)));
            assert_eq!(s.t + s.m_t, ms[progress]);
        }
        assert_eq!(c.episodes[s.episode].frame_start + target, s.long_target);
        for w in &s.waypoints {
            assert!((w[2] * w[2] + w[3] * w[3] - 1.0).abs() < 1e-12);
            assert!(w[4] == 0.0 || w[4] == 1.0);
        }
        assert_eq!(s.waypoints.len(), cfg.n_waypoints);
    }
}

#[test]
fn corpus_invariants_hold() {
    let (c, eps) = small_corpus();
    check_invariants(&c, &eps, &DatasetConfig::default());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn balance_caps_exactly(f in 0usize..200, l in 0usize..30, r in 0usize..30, s in 0usize..10, seed in 0u64..100) {
        let p = BalancePolicy::default();
        let out = balance(planning_set(f, l, r, s), &p, seed);
        let h = class_histogram(&out);
        prop_assert_eq!(h.left, l);
        prop_assert_eq!(h.right, r);
        prop_assert_eq!(h.stop, 2 * s);
        prop_assert_eq!(h.forward, f.min(p.forward_cap(l, r)));
    }

    #[test]
    fn extracted_labels_match_milestones(world_seed in 0u64..200, ep_seed in 0u64..10) {
        let world = generate_world(world_seed, &WorldConfig::default()).unwrap();
        let ep = annotate_episode(&generate_episode(&world, ep_seed, &EpisodeConfig::default()).unwrap()).unwrap();
        let cfg = DatasetConfig::default();
        let samples = extract_samples(&ep, 0, 0, &cfg);
        let c = Corpus {
            episodes: vec![EpisodeRecord {
                id: 0, world_seed, frame_start: 0, n_frames: ep.n_frames(), milestones: ep.milestones(),
                instruction: ep.instruction.clone(), start: ep.poses[0], goal: ep.goal, path_length: ep.path_length,
            }],
            samples,
            ..Default::default()
        };
        check_invariants(&c, &[ep], &cfg);
    }
}
