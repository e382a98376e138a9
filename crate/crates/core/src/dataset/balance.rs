use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActionClass, SampleKind, TrainingSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalancePolicy {
    /// Forward samples may number at most this multiple of the larger turn class.
    pub forward_factor: usize,
    /// Forward cap when there are no turn samples at all.
    pub cap_floor: usize,
    /// Copies of every stop sample.
    pub stop_copies: usize,
}

impl Default for BalancePolicy {
    fn default() -> Self {
        Self {
            forward_factor: 2,
            cap_floor: 20,
            stop_copies: 2,
        }
    }
}

impl BalancePolicy {
    pub fn forward_cap(&self, left: usize, right: usize) -> usize {
        let turns = left.max(right);
        if turns == 0 {
            self.cap_floor
        } else {
            self.forward_factor * turns
        }
    }
}

/// Planning-sample counts per action class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub forward: usize,
    pub left: usize,
    pub right: usize,
    pub stop: usize,
}

pub fn class_histogram(samples: &[TrainingSample]) -> ClassHistogram {
    let mut h = ClassHistogram::default();
    for s in samples.iter().filter(|s| s.kind == SampleKind::Planning) {
        match s.plan.action_class {
            ActionClass::Forward => h.forward += 1,
            ActionClass::Left => h.left += 1,
            ActionClass::Right => h.right += 1,
            ActionClass::Stop => h.stop += 1,
        }
    }
    h
}

/// Down-samples forward planning samples to the cap and repeats stop
/// planning samples; world-model samples and order are preserved.
pub fn balance(samples: Vec<TrainingSample>, policy: &BalancePolicy, seed: u64) -> Vec<TrainingSample> {
    let h = class_histogram(&samples);
    let cap = policy.forward_cap(h.left, h.right);
    let is_fwd = |s: &TrainingSample| s.kind == SampleKind::Planning && s.plan.action_class == ActionClass::Forward;
    let mut keep_fwd = vec![true; samples.len()];
    if h.forward > cap {
        let mut fwd: Vec<usize> = (0..samples.len()).filter(|&i| is_fwd(&samples[i])).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fwd.shuffle(&mut rng);
        for &i in &fwd[cap..] {
            keep_fwd[i] = false;
        }
    }
    let mut out = Vec::with_capacity(samples.len() + h.stop);
    for (i, s) in samples.into_iter().enumerate() {
        if !keep_fwd[i] {
            continue;
        }
        let copies = if s.kind == SampleKind::Planning && s.plan.action_class == ActionClass::Stop {
            policy.stop_copies.max(1)
        } else {
            1
        };
        for _ in 1..copies {
            out.push(s.clone());
        }
        out.push(s);
    }
    out
}
