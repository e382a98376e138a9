use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{compute_metrics, evaluate_policy, EvalConfig, EvalError, MetricsReport, ModelPolicy, NavTask, RandomWaypointPolicy};
use crate::dataset::{build_corpus, BuildStats, Corpus, DatasetConfig};
use crate::model::{Ablation, ModelConfig, NavModel};
use crate::simworld::{generate_episode, generate_episode_set, EpisodeConfig, WorldConfig};
use crate::training::{mix_seed, train, TrainConfig, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub train_episodes: usize,
    /// Episodes in unseen worlds.
    pub eval_episodes: usize,
    /// Training episodes replayed closed-loop for the seen-layout score.
    pub seen_eval_episodes: usize,
    pub train_seed_base: u64,
    pub unseen_seed_base: u64,
    pub seeds: Vec<u64>,
    pub variants: Vec<String>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            train_episodes: 200,
            eval_episodes: 50,
            seen_eval_episodes: 50,
            train_seed_base: 0,
            unseen_seed_base: 1_000_000,
            seeds: vec![0, 1, 2],
            variants: Ablation::VARIANTS.iter().map(|(n, _)| n.to_string()).collect(),
        }
    }
}

/// Everything a benchmark run needs besides the model.
pub struct BenchmarkData {
    pub corpus: Corpus,
    pub stats: BuildStats,
    /// Training episodes in their training worlds.
    pub seen: Vec<NavTask>,
    /// New routes in the training worlds.
    pub seen_new_routes: Vec<NavTask>,
    /// Episodes in worlds never used for training.
    pub unseen: Vec<NavTask>,
}

impl BenchmarkData {
    pub fn build(
        bench: &BenchmarkConfig,
        world: &WorldConfig,
        episode: &EpisodeConfig,
        dataset: &DatasetConfig,
    ) -> Result<Self, EvalError> {
        if bench.unseen_seed_base < bench.train_seed_base + 2 * bench.train_episodes as u64 {
            return Err(EvalError::Config(format!(
                "unseen_seed_base={} overlaps the training seed range",
                bench.unseen_seed_base
            )));
        }
        let train_pairs = generate_episode_set(bench.train_seed_base, bench.train_episodes, world, episode)?;
        let episodes: Vec<_> = train_pairs.iter().map(|(_, e)| e.clone()).collect();
        let (corpus, stats) = build_corpus(&episodes, dataset, bench.train_seed_base);
        let n_seen = bench.seen_eval_episodes.min(corpus.episodes.len());
        let world_of = |seed: u64| train_pairs.iter().find(|(w, _)| w.seed == seed).map(|(w, _)| w.clone());
        let mut seen = Vec::with_capacity(n_seen);
        let mut seen_new_routes = Vec::with_capacity(n_seen);
        for rec in corpus.episodes.iter().take(n_seen) {
            let w = world_of(rec.world_seed).expect("corpus episode comes from a training world");
            seen.push(NavTask::from_record(w.clone(), rec));
            if let Ok(ep) = generate_episode(&w, mix_seed(rec.world_seed, 0x5EE7), episode) {
                seen_new_routes.push(NavTask::from_episode(w, &ep));
            }
        }
        let unseen = generate_episode_set(bench.unseen_seed_base, bench.eval_episodes, world, episode)?
            .into_iter()
            .map(|(w, e)| NavTask::from_episode(w, &e))
            .collect();
        Ok(BenchmarkData {
            corpus,
            stats,
            seen,
            seen_new_routes,
            unseen,
        })
    }

    pub fn mean_gt_steps(&self) -> f64 {
        let n = self.corpus.episodes.len().max(1) as f64;
        self.corpus
            .episodes
            .iter()
            .map(|e| e.n_frames.saturating_sub(1) as f64)
            .sum::<f64>()
            / n
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub variant: String,
    pub seed: u64,
    pub probe_initial: f64,
    pub probe_final: f64,
    /// Relative drop of the probe loss, `1 − final / initial`.
    pub loss_drop: f64,
    pub train_secs: f64,
    pub seen: MetricsReport,
    pub seen_new_routes: MetricsReport,
    pub unseen: MetricsReport,
    pub random_unseen: MetricsReport,
}

/// Trains one variant with one seed and evaluates it closed loop.
#[allow(clippy::too_many_arguments)]
pub fn run_benchmark(
    data: &BenchmarkData,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    episode: &EpisodeConfig,
    eval: &EvalConfig,
    variant: &str,
    seed: u64,
    out: Option<&Path>,
) -> Result<BenchmarkRun, EvalError> {
    let ablation = Ablation::from_name(variant)
        .ok_or_else(|| EvalError::Config(format!("unknown ablation variant {variant}")))?;
    let mcfg = ModelConfig {
        init_seed: seed,
        ..model_cfg.clone()
    };
    let tcfg = TrainConfig {
        seed,
        ablation: variant.to_string(),
        ..train_cfg.clone()
    };
    let run_header = serde_json::json!({ "variant": variant, "seed": seed, "model": mcfg, "train": tcfg });
    let started = Instant::now();
    let trainer = Trainer::new(&data.corpus, NavModel::new(mcfg)?, tcfg)?;
    let outcome = train(trainer, out, &run_header)?;
    let train_secs = started.elapsed().as_secs_f64();
    let model = &outcome.model;
    let score = |tasks: &[NavTask]| -> Result<MetricsReport, EvalError> {
        if tasks.is_empty() {
            return Err(EvalError::Config("no evaluation tasks".into()));
        }
        let results = evaluate_policy(|| ModelPolicy::new(model, ablation), tasks, episode, eval)?;
        compute_metrics(&results, eval.success_radius)
    };
    let seen = score(&data.seen)?;
    let seen_new_routes = score(&data.seen_new_routes)?;
    let unseen = score(&data.unseen)?;
    let expected = data.mean_gt_steps();
    let k = model.cfg.n_waypoints;
    let random = evaluate_policy(
        || RandomWaypointPolicy::new(mix_seed(seed, 0xBA5E), k, episode.max_step_dist, expected),
        &data.unseen,
        episode,
        eval,
    )?;
    let random_unseen = compute_metrics(&random, eval.success_radius)?;
    let drop = if outcome.probe_initial > 0.0 {
        1.0 - outcome.probe_final / outcome.probe_initial
    } else {
        0.0
    };
    Ok(BenchmarkRun {
        variant: variant.to_string(),
        seed,
        probe_initial: outcome.probe_initial,
        probe_final: outcome.probe_final,
        loss_drop: drop,
        train_secs,
        seen,
        seen_new_routes,
        unseen,
        random_unseen,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub sr: f64,
    pub osr: f64,
    pub ne: f64,
    pub spl: f64,
    pub n_seeds: usize,
}

/// Seed-averaged unseen-layout metrics per variant, in `variants` order.
/// Variants without runs are skipped with a notice.
pub fn ablation_rows(runs: &[BenchmarkRun], variants: &[String]) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for v in variants {
        let rs: Vec<&BenchmarkRun> = runs.iter().filter(|r| &r.variant == v).collect();
        if rs.is_empty() {
            log::warn!("no runs for variant {v}; row skipped");
            continue;
        }
        let n = rs.len() as f64;
        let mean = |f: &dyn Fn(&MetricsReport) -> f64| rs.iter().map(|r| f(&r.unseen)).sum::<f64>() / n;
        rows.push(AblationRow {
            variant: v.clone(),
            sr: mean(&|m| m.sr),
            osr: mean(&|m| m.osr),
            ne: mean(&|m| m.ne),
            spl: mean(&|m| m.spl),
            n_seeds: rs.len(),
        });
    }
    rows
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow], header: &serde_json::Value) -> Result<(), EvalError> {
    let mut s = format!("# config: {}\nvariant,SR,OSR,NE,SPL\n", serde_json::to_string(header).unwrap_or_default());
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.variant, r.sr, r.osr, r.ne, r.spl));
    }
    std::fs::write(path, s)?;
    Ok(())
}
