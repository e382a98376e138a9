use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, SampleKind};

/// Derives an independent stream seed from a base seed and a tag.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub kind: SampleKind,
    /// Indices into `Corpus::samples`.
    pub ids: Vec<usize>,
}

/// Samples drawn so far from each pool; enough to resume the stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixerState {
    pub world_model_drawn: u64,
    pub planning_drawn: u64,
}

/// Single-kind batches whose kind is planning with probability `mix_ratio`.
/// Each pool is consumed in seeded per-epoch permutations.
#[derive(Clone, Debug)]
pub struct BatchMixer {
    seed: u64,
    mix_ratio: f64,
    batch_size: usize,
    pools: [Vec<usize>; 2],
    epoch_perm: [Option<(u64, Vec<usize>)>; 2],
    pub state: MixerState,
}

fn slot(kind: SampleKind) -> usize {
    match kind {
        SampleKind::WorldModel => 0,
        SampleKind::Planning => 1,
    }
}

impl BatchMixer {
    pub fn new(corpus: &Corpus, mix_ratio: f64, batch_size: usize, seed: u64) -> Self {
        let pool = |k| {
            corpus
                .samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.kind == k)
                .map(|(i, _)| i)
                .collect::<Vec<_>>()
        };
        let pools = [pool(SampleKind::WorldModel), pool(SampleKind::Planning)];
        if pools.iter().any(Vec::is_empty) {
            log::warn!(
                "corpus holds {} world-model and {} planning samples; batches will be single-kind",
                pools[0].len(),
                pools[1].len()
            );
        }
        BatchMixer {
            seed,
            mix_ratio,
            batch_size,
            pools,
            epoch_perm: [None, None],
            state: MixerState::default(),
        }
    }

    pub fn pool(&self, kind: SampleKind) -> &[usize] {
        &self.pools[slot(kind)]
    }

    /// Kind of the batch at `step`; a function of the seed and step only.
    pub fn kind_at(&self, step: u64) -> SampleKind {
        let draw: f64 = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, step)).gen();
        let wanted = if draw < self.mix_ratio {
            SampleKind::Planning
        } else {
            SampleKind::WorldModel
        };
        match (self.pools[0].is_empty(), self.pools[1].is_empty()) {
            (true, false) => SampleKind::Planning,
            (false, true) => SampleKind::WorldModel,
            _ => wanted,
        }
    }

    fn draw(&mut self, kind: SampleKind) -> usize {
        let s = slot(kind);
        let n = self.pools[s].len() as u64;
        let drawn = match kind {
            SampleKind::WorldModel => &mut self.state.world_model_drawn,
            SampleKind::Planning => &mut self.state.planning_drawn,
        };
        let (epoch, pos) = (*drawn / n, (*drawn % n) as usize);
        *drawn += 1;
        if self.epoch_perm[s].as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut perm = self.pools[s].clone();
            let tag = (epoch << 1) | s as u64;
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.seed ^ 0x5A5A, tag)));
            self.epoch_perm[s] = Some((epoch, perm));
        }
        self.epoch_perm[s].as_ref().unwrap().1[pos]
    }

    /// Next batch for `step`; `None` when the corpus has no samples.
    pub fn next_batch(&mut self, step: u64) -> Option<Batch> {
        if self.pools.iter().all(Vec::is_empty) {
            return None;
        }
        let kind = self.kind_at(step);
        let ids = (0..self.batch_size).map(|_| self.draw(kind)).collect();
        Some(Batch { kind, ids })
    }
}
