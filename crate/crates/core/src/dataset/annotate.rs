use serde::{Deserialize, Serialize};

use super::{ActionClass, DatasetConfig};
use crate::simworld::{wrap_angle, Episode, SubInstruction, SEP};

/// Why an episode could not be normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Empty,
    Incomplete,
    NonIncreasing,
    BeyondEnd,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            Self::Empty => "empty",
            Self::Incomplete => "incomplete",
            Self::NonIncreasing => "non_increasing",
            Self::BeyondEnd => "beyond_end",
        }
    }
}

/// Validates and normalizes milestone annotations: milestones past the end
/// or out of order reject the episode, milestones fewer than two frames apart
/// merge into the later one, and the last milestone moves to the final frame.
pub fn annotate_episode(ep: &Episode) -> Result<Episode, RejectReason> {
    if ep.poses.is_empty() || ep.sub_instructions.is_empty() {
        return Err(RejectReason::Empty);
    }
    if ep.observations.len() != ep.poses.len() || ep.sub_instructions.iter().any(|s| s.tokens.is_empty()) {
        return Err(RejectReason::Incomplete);
    }
    let last = ep.poses.len() - 1;
    let subs = &ep.sub_instructions;
    if subs.iter().any(|s| s.milestone_frame > last) {
        return Err(RejectReason::BeyondEnd);
    }
    if subs.windows(2).any(|w| w[1].milestone_frame < w[0].milestone_frame) {
        return Err(RejectReason::NonIncreasing);
    }
    let mut out: Vec<SubInstruction> = subs.clone();
    out.last_mut().unwrap().milestone_frame = last;
    let mut merged: Vec<SubInstruction> = Vec::with_capacity(out.len());
    for s in out {
        match merged.last_mut() {
            Some(prev) if s.milestone_frame < prev.milestone_frame + 2 => {
                prev.tokens.push(SEP);
                prev.tokens.extend_from_slice(&s.tokens);
                prev.milestone_frame = s.milestone_frame;
            }
            _ => merged.push(s),
        }
    }
    let mut ep = ep.clone();
    ep.sub_instructions = merged;
    Ok(ep)
}

/// Language action at frame `t`: stop near the end, otherwise the sign of the
/// heading change accumulated over the next `lookahead` frames.
pub fn derive_language_action(ep: &Episode, t: usize, cfg: &DatasetConfig) -> ActionClass {
    let last = ep.final_frame();
    if t + cfg.stop_window >= last {
        return ActionClass::Stop;
    }
    let end = (t + cfg.lookahead).min(last);
    let turn: f64 = (t..end)
        .map(|j| wrap_angle(ep.poses[j + 1].theta - ep.poses[j].theta))
        .sum();
    let thresh = cfg.turn_thresh_deg.to_radians();
    if turn > thresh {
        ActionClass::Left
    } else if turn < -thresh {
        ActionClass::Right
    } else {
        ActionClass::Forward
    }
}
