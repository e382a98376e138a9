//! Corpus files: a JSON-lines index and a frame sidecar.
//!
//! The index starts with one `{"header": …}` line, followed by one
//! `{"episode": …}` line per episode and one `{"sample": …}` line per sample.
//! The sidecar uses the episode observation layout with magic `NFDS`:
//! magic, u32 version, u32 rays, u32 feature width, u64 frame count, then
//! per frame the depths, features and class ids as little-endian f32.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, DatasetError, EpisodeRecord, TrainingSample};
use crate::simworld::io::{decode_frames, encode_frames};
use crate::simworld::SimError;

pub const CORPUS_MAGIC: &[u8; 4] = b"NFDS";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    n_rays: usize,
    feat_dim: usize,
    n_frames: usize,
    n_episodes: usize,
    n_samples: usize,
    info: String,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Line {
    Header(Header),
    Episode(EpisodeRecord),
    Sample(TrainingSample),
}

fn io_err(e: impl ToString) -> DatasetError {
    DatasetError::Io(e.to_string())
}

/// Serializes the index and sidecar to bytes.
pub fn encode_corpus(c: &Corpus) -> (Vec<u8>, Vec<u8>) {
    let mut index = Vec::new();
    let mut push = |line: &Line| {
        serde_json::to_writer(&mut index, line).expect("corpus lines serialize");
        index.push(b'\n');
    };
    push(&Line::Header(Header {
        version: CORPUS_VERSION,
        n_rays: c.n_rays,
        feat_dim: c.feat_dim,
        n_frames: c.frames.len(),
        n_episodes: c.episodes.len(),
        n_samples: c.samples.len(),
        info: c.header.clone(),
    }));
    for e in &c.episodes {
        push(&Line::Episode(e.clone()));
    }
    for s in &c.samples {
        push(&Line::Sample(s.clone()));
    }
    let frames: Vec<_> = c.frames.iter().collect();
    let sidecar = encode_frames(CORPUS_MAGIC, CORPUS_VERSION, &frames, c.n_rays, c.feat_dim);
    (index, sidecar)
}

pub fn write_dataset(index: &Path, sidecar: &Path, c: &Corpus) -> Result<(), DatasetError> {
    let (i, s) = encode_corpus(c);
    std::fs::write(index, i).map_err(io_err)?;
    std::fs::write(sidecar, s).map_err(io_err)
}

pub fn decode_corpus(index: &[u8], sidecar: &[u8]) -> Result<Corpus, DatasetError> {
    let (n_rays, feat_dim, frames) = decode_frames(CORPUS_MAGIC, CORPUS_VERSION, sidecar).map_err(|e| match e {
        SimError::Format { offset, reason } => DatasetError::Format { offset, reason },
        other => DatasetError::Io(other.to_string()),
    })?;
    let mut corpus = Corpus {
        n_rays,
        feat_dim,
        frames,
        ..Default::default()
    };
    let mut header: Option<Header> = None;
    for (n, line) in BufReader::new(index).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| DatasetError::Index { line: n + 1, reason };
        match serde_json::from_str::<Line>(&line).map_err(|e| bad(e.to_string()))? {
            Line::Header(h) if n == 0 => header = Some(h),
            Line::Header(_) => return Err(bad("repeated header".into())),
            _ if header.is_none() => return Err(bad("missing header".into())),
            Line::Episode(e) => {
                if e.frame_start + e.n_frames > corpus.frames.len() {
                    return Err(bad("episode frames out of range".into()));
                }
                corpus.episodes.push(e);
            }
            Line::Sample(s) => {
                let max = s
                    .history
                    .iter()
                    .map(|h| h.frame)
                    .chain([s.short_target, s.long_target])
                    .max()
                    .unwrap_or(0);
                if max >= corpus.frames.len() || s.episode >= corpus.episodes.len() {
                    return Err(bad("sample references are out of range".into()));
                }
                corpus.samples.push(s);
            }
        }
    }
    let h = header.ok_or(DatasetError::Index { line: 1, reason: "missing header".into() })?;
    if h.version != CORPUS_VERSION {
        return Err(DatasetError::Index {
            line: 1,
            reason: format!("unsupported version {}", h.version),
        });
    }
    if h.n_frames != corpus.frames.len() || h.n_episodes != corpus.episodes.len() || h.n_samples != corpus.samples.len() {
        return Err(DatasetError::Index {
            line: 1,
            reason: "header counts disagree with contents".into(),
        });
    }
    if h.n_frames > 0 && (h.n_rays != n_rays || h.feat_dim != feat_dim) {
        return Err(DatasetError::Index {
            line: 1,
            reason: "header geometry disagrees with sidecar".into(),
        });
    }
    corpus.n_rays = h.n_rays;
    corpus.feat_dim = h.feat_dim;
    corpus.header = h.info;
    Ok(corpus)
}

pub fn read_dataset(index: &Path, sidecar: &Path) -> Result<Corpus, DatasetError> {
    let i = std::fs::read(index).map_err(io_err)?;
    let s = std::fs::read(sidecar).map_err(io_err)?;
    decode_corpus(&i, &s)
}
