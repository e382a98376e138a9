use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use dualnav_core::dataset::{build_corpus, DatasetConfig, SampleKind};
use dualnav_core::evaluation::{rollout, EvalConfig, NavTask, RandomWaypointPolicy};
use dualnav_core::model::{
    build_structured_mask, build_token_layout, Ablation, ForwardMode, ModelConfig, NavModel, QueryGroups,
};
use dualnav_core::simworld::{generate_episode_set, generate_world, raycast_fov, EpisodeConfig, Pose, WorldConfig};
use dualnav_core::training::{batch_gradients, sample_input, TrainConfig, Trainer};

fn simulator(c: &mut Criterion) {
    let world_cfg = WorldConfig::default();
    let ep_cfg = EpisodeConfig::default();
    c.bench_function("generate_world", |b| b.iter(|| generate_world(black_box(7), &world_cfg).unwrap()));
    let world = generate_world(7, &world_cfg).unwrap();
    let (cx, cy) = world.rooms[0].center();
    let pose = Pose::new(cx, cy, 0.3);
    c.bench_function("raycast_64", |b| {
        b.iter(|| raycast_fov(&world, black_box(&pose), ep_cfg.n_rays, ep_cfg.fov_deg).unwrap())
    });
    c.bench_function("generate_episode", |b| {
        b.iter(|| generate_episode_set(black_box(3), 1, &world_cfg, &ep_cfg).unwrap())
    });
}

fn model(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    c.bench_function("structured_mask_h8", |b| {
        b.iter(|| {
            let layout = build_token_layout(&cfg, black_box(8), QueryGroups::ALL).unwrap();
            build_structured_mask(&layout)
        })
    });
    let episodes: Vec<_> = generate_episode_set(0, 4, &WorldConfig::default(), &EpisodeConfig::default())
        .unwrap()
        .into_iter()
        .map(|(_, e)| e)
        .collect();
    let corpus = build_corpus(&episodes, &DatasetConfig::default(), 0).0;
    let net = NavModel::new(cfg).unwrap();
    let sample = corpus
        .samples
        .iter()
        .find(|s| s.kind == SampleKind::WorldModel && s.history.len() == net.cfg.h_max)
        .unwrap();
    c.bench_function("forward_full_h8", |b| {
        b.iter(|| net.predict(&sample_input(&corpus, sample), &Ablation::FULL, ForwardMode::Full).unwrap())
    });
    let ids: Vec<usize> = corpus
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == SampleKind::WorldModel)
        .map(|(i, _)| i)
        .take(4)
        .collect();
    let tcfg = TrainConfig::default();
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("gradients_batch4", |b| {
        b.iter(|| batch_gradients(&net, &corpus, &ids, &Ablation::FULL, &tcfg, 0).unwrap())
    });
    group.bench_function("optimizer_step", |b| {
        b.iter_batched(
            || Trainer::new(&corpus, net.clone(), tcfg.clone()).unwrap(),
            |mut tr| tr.step().unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let ep_cfg = EpisodeConfig::default();
    let (world, ep) = generate_episode_set(5, 1, &WorldConfig::default(), &ep_cfg).unwrap().remove(0);
    let task = NavTask::from_episode(world, &ep);
    let eval = EvalConfig::default();
    c.bench_function("random_policy_rollout", |b| {
        b.iter(|| {
            let mut p = RandomWaypointPolicy::new(1, 5, 0.5, 25.0);
            rollout(&mut p, &task, &ep_cfg, &eval).unwrap()
        })
    });
}

criterion_group!(benches, simulator, model, evaluation);
criterion_main!(benches);
