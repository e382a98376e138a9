//! Episode files: one JSON object per line plus an observation sidecar.
//!
//! Sidecar layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `NFOB` |
//! | 4 | u32 version (1) |
//! | 4 | u32 rays `R` |
//! | 4 | u32 feature width `F` |
//! | 8 | u64 frame count |
//! | … | per frame: `R` depths, `R·F` features, `R` class ids, all f32 |
//!
//! Frames appear in episode order; each JSON line records the index of its
//! first frame as `obs_start`.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::episode::Episode;
use super::raycast::Observation;
use super::SimError;

pub const OBS_MAGIC: &[u8; 4] = b"NFOB";
pub const OBS_VERSION: u32 = 1;
const OBS_HEADER: usize = 24;

#[derive(Serialize, Deserialize)]
struct EpisodeLine {
    obs_start: u64,
    #[serde(flatten)]
    episode: Episode,
}

pub fn write_observations(frames: &[&Observation], n_rays: usize, feat_dim: usize) -> Vec<u8> {
    encode_frames(OBS_MAGIC, OBS_VERSION, frames, n_rays, feat_dim)
}

/// Frame block with the given magic and version; the layout is shared by
/// episode and corpus sidecars.
pub fn encode_frames(
    magic: &[u8; 4],
    version: u32,
    frames: &[&Observation],
    n_rays: usize,
    feat_dim: usize,
) -> Vec<u8> {
    let per = n_rays * (2 + feat_dim);
    let mut out = Vec::with_capacity(OBS_HEADER + frames.len() * per * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(n_rays as u32).to_le_bytes());
    out.extend_from_slice(&(feat_dim as u32).to_le_bytes());
    out.extend_from_slice(&(frames.len() as u64).to_le_bytes());
    for f in frames {
        for v in &f.depth {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &f.semfeat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &c in &f.class_ids {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    out
}

fn read_u32(b: &[u8], at: usize) -> Result<u32, SimError> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
        .ok_or(SimError::Format { offset: at, reason: "truncated header".into() })
}

/// Parses a sidecar into frames, validating magic, version and length.
pub fn read_observations(bytes: &[u8]) -> Result<(usize, usize, Vec<Observation>), SimError> {
    decode_frames(OBS_MAGIC, OBS_VERSION, bytes)
}

pub fn decode_frames(
    magic: &[u8; 4],
    expected_version: u32,
    bytes: &[u8],
) -> Result<(usize, usize, Vec<Observation>), SimError> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(SimError::Format { offset: 0, reason: "bad magic".into() });
    }
    let version = read_u32(bytes, 4)?;
    if version != expected_version {
        return Err(SimError::Format {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let r = read_u32(bytes, 8)? as usize;
    let f = read_u32(bytes, 12)? as usize;
    let count = bytes
        .get(16..24)
        .map(|s| u64::from_le_bytes(s.try_into().unwrap()) as usize)
        .ok_or(SimError::Format { offset: 16, reason: "truncated header".into() })?;
    let per = r * (2 + f) * 4;
    let need = OBS_HEADER + count * per;
    if bytes.len() < need {
        let frame = (bytes.len() - OBS_HEADER) / per.max(1);
        return Err(SimError::Format {
            offset: OBS_HEADER + frame * per,
            reason: format!("truncated frame {frame} of {count}"),
        });
    }
    let floats = |at: usize, n: usize| -> Vec<f32> {
        bytes[at..at + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let at = OBS_HEADER + i * per;
        let depth = floats(at, r);
        let semfeat = floats(at + 4 * r, r * f);
        let class_ids = floats(at + 4 * r * (1 + f), r).into_iter().map(|c| c as i32).collect();
        frames.push(Observation { depth, semfeat, class_ids });
    }
    Ok((r, f, frames))
}

/// Writes episodes as JSON lines and their observations to the sidecar.
pub fn write_episodes(jsonl: &Path, sidecar: &Path, episodes: &[Episode]) -> Result<(), SimError> {
    let (r, f) = episodes
        .iter()
        .find_map(|e| e.observations.first())
        .map_or((0, 0), |o| (o.n_rays(), o.feat_dim()));
    let mut lines = Vec::new();
    let mut frames = Vec::new();
    for ep in episodes {
        let line = EpisodeLine {
            obs_start: frames.len() as u64,
            episode: ep.clone(),
        };
        serde_json::to_writer(&mut lines, &line).map_err(|e| SimError::Io(e.to_string()))?;
        lines.push(b'\n');
        frames.extend(ep.observations.iter());
    }
    std::fs::write(jsonl, lines).map_err(|e| SimError::Io(e.to_string()))?;
    std::fs::write(sidecar, write_observations(&frames, r, f)).map_err(|e| SimError::Io(e.to_string()))?;
    Ok(())
}

pub fn read_episodes(jsonl: &Path, sidecar: &Path) -> Result<Vec<Episode>, SimError> {
    let bytes = std::fs::read(sidecar).map_err(|e| SimError::Io(e.to_string()))?;
    let (_, _, frames) = read_observations(&bytes)?;
    let file = std::fs::File::open(jsonl).map_err(|e| SimError::Io(e.to_string()))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| SimError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EpisodeLine = serde_json::from_str(&line)
            .map_err(|e| SimError::Io(format!("line {}: {e}", n + 1)))?;
        let mut ep = parsed.episode;
        let start = parsed.obs_start as usize;
        let end = start + ep.poses.len();
        if end > frames.len() {
            return Err(SimError::Io(format!("line {}: observations out of range", n + 1)));
        }
        ep.observations = frames[start..end].to_vec();
        out.push(ep);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SimError> {
    let mut f = std::fs::File::create(path).map_err(|e| SimError::Io(e.to_string()))?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| SimError::Io(e.to_string()))?;
    f.write_all(b"\n").map_err(|e| SimError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{generate_episode, generate_world, EpisodeConfig, WorldConfig};

    #[test]
    fn episodes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let world = generate_world(2, &WorldConfig::default()).unwrap();
        let eps: Vec<Episode> = (0..3)
            .map(|s| generate_episode(&world, s, &EpisodeConfig::default()).unwrap())
            .collect();
        let (j, b) = (dir.path().join("e.jsonl"), dir.path().join("e.nfob"));
        write_episodes(&j, &b, &eps).unwrap();
        assert_eq!(read_episodes(&j, &b).unwrap(), eps);
    }

    #[test]
    fn corrupt_sidecar_names_offset() {
        let obs = Observation { depth: vec![1.0; 4], semfeat: vec![0.5; 8], class_ids: vec![0, 1, -1, 2] };
        let mut bytes = write_observations(&[&obs, &obs], 4, 2);
        let (_, _, back) = read_observations(&bytes).unwrap();
        assert_eq!(back, vec![obs.clone(), obs]);
        bytes.truncate(bytes.len() - 3);
        let err = read_observations(&bytes).unwrap_err().to_string();
        assert!(err.contains("offset 88"), "{err}");
        bytes[0] = b'X';
        assert!(read_observations(&bytes).unwrap_err().to_string().contains("offset 0"));
    }
}
