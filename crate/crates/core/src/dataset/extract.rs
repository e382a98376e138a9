use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::annotate::{annotate_episode, derive_language_action, RejectReason};
use super::balance::balance;
use super::{
    Corpus, DatasetConfig, EpisodeRecord, HistoryFrame, PlanLabel, SampleKind, TrainingSample,
};
use crate::simworld::{Episode, Waypoint};

/// Number of milestones at or before frame `t`.
pub fn progress_index(milestones: &[usize], t: usize) -> usize {
    milestones.iter().take_while(|&&m| m <= t).count()
}

/// One world-model and one planning sample per frame `t ∈ [k, N)` at the
/// configured stride; frames are addressed from `frame_start` in the corpus.
pub fn extract_samples(
    ep: &Episode,
    episode_index: usize,
    frame_start: usize,
    cfg: &DatasetConfig,
) -> Vec<TrainingSample> {
    let n = ep.n_frames();
    if n <= cfg.k {
        return Vec::new();
    }
    let last = n - 1;
    let milestones = ep.milestones();
    let n_sub = milestones.len();
    let mut out = Vec::with_capacity(2 * (n - cfg.k));
    for t in (cfg.k..n).step_by(cfg.sample_stride.max(1)) {
        let pose = ep.poses[t];
        let first = (t + 1).saturating_sub(cfg.h_max);
        let history = (first..=t)
            .map(|i| HistoryFrame {
                frame: frame_start + i,
                rel_pose: pose.relative(&ep.poses[i]),
            })
            .collect();
        let progress = progress_index(&milestones, t);
        let target = milestones.get(progress).copied().unwrap_or(last);
        let m_t = target.saturating_sub(t).max(1);
        let waypoints = (1..=cfg.n_waypoints)
            .map(|i| {
                let j = t + i;
                Waypoint::from_rel(pose.relative(&ep.poses[j.min(last)]), j > last).to_array()
            })
            .collect();
        let plan = PlanLabel {
            progress_index: progress,
            summary_span: (0, progress),
            next_plan_span: progress,
            action_class: derive_language_action(ep, t, cfg),
        };
        let sample = TrainingSample {
            episode: episode_index,
            t,
            kind: SampleKind::WorldModel,
            instruction: ep.instruction.clone(),
            history,
            short_target: frame_start + (t + cfg.k).min(last),
            long_target: frame_start + (t + m_t).min(last),
            m_t,
            waypoints,
            plan,
            n_sub,
        };
        out.push(TrainingSample {
            kind: SampleKind::Planning,
            ..sample.clone()
        });
        out.push(sample);
    }
    // World-model samples first, keeping frame order within each kind.
    out.sort_by_key(|s| (s.kind == SampleKind::Planning, s.t));
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub episodes_in: usize,
    pub episodes_kept: usize,
    pub rejected: BTreeMap<String, usize>,
    pub skipped_short: usize,
    pub samples_before_balance: usize,
    pub samples_after_balance: usize,
}

/// Annotate → extract (in parallel per episode) → merge → balance.
pub fn build_corpus(episodes: &[Episode], cfg: &DatasetConfig, seed: u64) -> (Corpus, BuildStats) {
    let annotated: Vec<Result<Episode, RejectReason>> = episodes.par_iter().map(annotate_episode).collect();
    let mut stats = BuildStats {
        episodes_in: episodes.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for a in annotated {
        match a {
            Ok(ep) if ep.n_frames() > cfg.k => kept.push(ep),
            Ok(_) => stats.skipped_short += 1,
            Err(r) => *stats.rejected.entry(r.code().to_string()).or_default() += 1,
        }
    }
    stats.episodes_kept = kept.len();
    let mut corpus = Corpus {
        n_rays: kept.first().map_or(0, |e| e.observations[0].n_rays()),
        feat_dim: kept.first().map_or(0, |e| e.observations[0].feat_dim()),
        ..Default::default()
    };
    let mut starts = Vec::with_capacity(kept.len());
    for ep in &kept {
        starts.push(corpus.frames.len());
        corpus.episodes.push(EpisodeRecord {
            id: ep.id,
            world_seed: ep.world_seed,
            frame_start: corpus.frames.len(),
            n_frames: ep.n_frames(),
            milestones: ep.milestones(),
            instruction: ep.instruction.clone(),
            start: ep.poses[0],
            goal: ep.goal,
            path_length: ep.path_length,
        });
        corpus.frames.extend(ep.observations.iter().cloned());
    }
    let per_episode: Vec<Vec<TrainingSample>> = kept
        .par_iter()
        .enumerate()
        .map(|(i, ep)| extract_samples(ep, i, starts[i], cfg))
        .collect();
    let samples: Vec<TrainingSample> = per_episode.into_iter().flatten().collect();
    stats.samples_before_balance = samples.len();
    corpus.samples = balance(samples, &cfg.balance, seed);
    stats.samples_after_balance = corpus.samples.len();
    (corpus, stats)
}
