//! Plan annotation, sample extraction with dual-horizon targets, balancing
//! and the on-disk corpus.

mod annotate;
mod balance;
mod corpus;
mod extract;

use serde::{Deserialize, Serialize};

use crate::simworld::{Observation, RelPose};

pub use annotate::{annotate_episode, derive_language_action, RejectReason};
pub use balance::{balance, class_histogram, BalancePolicy, ClassHistogram};
pub use corpus::{decode_corpus, encode_corpus, read_dataset, write_dataset, CORPUS_MAGIC, CORPUS_VERSION};
pub use extract::{build_corpus, extract_samples, progress_index, BuildStats};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("malformed corpus at offset {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("corpus index line {line}: {reason}")]
    Index { line: usize, reason: String },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionClass {
    Forward,
    Left,
    Right,
    Stop,
}

impl ActionClass {
    pub const ALL: [ActionClass; 4] = [Self::Forward, Self::Left, Self::Right, Self::Stop];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    WorldModel,
    Planning,
}

/// Sub-instruction bookkeeping for one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanLabel {
    /// Index of the current sub-instruction; equals the count when all are done.
    pub progress_index: usize,
    /// Completed sub-instructions `[start, end)`.
    pub summary_span: (usize, usize),
    /// Upcoming sub-instruction.
    pub next_plan_span: usize,
    pub action_class: ActionClass,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryFrame {
    /// Index into [`Corpus::frames`].
    pub frame: usize,
    /// Pose of that frame relative to the sample frame.
    pub rel_pose: RelPose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// Index into [`Corpus::episodes`].
    pub episode: usize,
    pub t: usize,
    pub kind: SampleKind,
    pub instruction: Vec<u32>,
    /// Oldest first; the last entry is frame `t` with the identity pose.
    pub history: Vec<HistoryFrame>,
    pub short_target: usize,
    pub long_target: usize,
    pub m_t: usize,
    /// `K` rows of `[x, y, sin θ, cos θ, stop]` in the frame-`t` body frame.
    pub waypoints: Vec<[f64; 5]>,
    pub plan: PlanLabel,
    pub n_sub: usize,
}

/// Episode metadata kept alongside the samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub id: u64,
    pub world_seed: u64,
    pub frame_start: usize,
    pub n_frames: usize,
    pub milestones: Vec<usize>,
    pub instruction: Vec<u32>,
    pub start: crate::simworld::Pose,
    pub goal: (f64, f64),
    pub path_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Short prediction horizon in frames.
    pub k: usize,
    /// Waypoints per sample.
    pub n_waypoints: usize,
    pub h_max: usize,
    pub stop_window: usize,
    pub lookahead: usize,
    pub turn_thresh_deg: f64,
    pub sample_stride: usize,
    pub balance: BalancePolicy,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            k: 4,
            n_waypoints: 5,
            h_max: 8,
            stop_window: 1,
            lookahead: 4,
            turn_thresh_deg: 30.0,
            sample_stride: 1,
            balance: BalancePolicy::default(),
        }
    }
}

/// Training corpus: deduplicated frames referenced by index from samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub n_rays: usize,
    pub feat_dim: usize,
    /// Free-form provenance (typically the resolved run config).
    pub header: String,
    pub episodes: Vec<EpisodeRecord>,
    pub frames: Vec<Observation>,
    pub samples: Vec<TrainingSample>,
}

impl Corpus {
    pub fn frame(&self, i: usize) -> &Observation {
        &self.frames[i]
    }

    pub fn count_kind(&self, kind: SampleKind) -> usize {
        self.samples.iter().filter(|s| s.kind == kind).count()
    }
}
