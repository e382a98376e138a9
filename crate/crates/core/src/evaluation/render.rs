use std::io::Write;
use std::path::{Path, PathBuf};

use super::EvalError;
use crate::dataset::{Corpus, SampleKind};
use crate::model::{Ablation, ForwardMode, NavModel};
use crate::simworld::class_embeddings;
use crate::training::sample_input;

/// Binary 8-bit greyscale image (`P5`).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), EvalError> {
    if pixels.len() != width * height {
        return Err(EvalError::Config(format!(
            "image {width}x{height} needs {} pixels, got {}",
            width * height,
            pixels.len()
        )));
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(pixels)?;
    Ok(())
}

/// Reads an image written by [`write_pgm`]: `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), EvalError> {
    let bytes = std::fs::read(path)?;
    let bad = || EvalError::Io(format!("{} is not a binary PGM", path.display()));
    let mut fields = Vec::new();
    let mut at = 0;
    while fields.len() < 4 {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            return Err(bad());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..at]).into_owned());
    }
    at += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let px = bytes.get(at..at + w * h).ok_or_else(bad)?.to_vec();
    Ok((w, h, px))
}

/// Depths mapped linearly from `[0, max_range]` to `[0, 255]`.
pub fn depth_strip(depth: &[f64], max_range: f64) -> Vec<u8> {
    depth
        .iter()
        .map(|d| ((d / max_range).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Class ids spread over `[1, 255]`; no hit (−1) is 0.
pub fn class_strip(ids: &[i32], n_classes: usize) -> Vec<u8> {
    let span = n_classes.max(2) as f64 - 1.0;
    ids.iter()
        .map(|&c| if c < 0 { 0 } else { 1 + (c as f64 / span * 254.0).round() as u8 })
        .collect()
}

/// Nearest class embedding per ray; rays whose feature is closer to zero than
/// to every embedding decode as no hit (−1).
pub fn decode_classes(semfeat: &[f64], feat_dim: usize, embeddings: &[Vec<f64>]) -> Vec<i32> {
    semfeat
        .chunks_exact(feat_dim)
        .map(|f| {
            let mut best = (-1, f.iter().map(|v| v * v).sum::<f64>());
            for (c, e) in embeddings.iter().enumerate() {
                let d: f64 = f.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.1 {
                    best = (c as i32, d);
                }
            }
            best.0
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSummary {
    pub files: Vec<PathBuf>,
    /// Fraction of rays whose decoded predicted class matches the target.
    pub class_accuracy: f64,
    pub depth_abs_rel: f64,
}

/// Writes ground-truth and predicted short-horizon depth and class strips for
/// frame `t` of corpus episode `episode`.
#[allow(clippy::too_many_arguments)]
pub fn render_prediction(
    model: &NavModel,
    corpus: &Corpus,
    episode: usize,
    t: usize,
    max_range: f64,
    embedding_seed: u64,
    out_dir: &Path,
) -> Result<RenderSummary, EvalError> {
    let sample = corpus
        .samples
        .iter()
        .find(|s| s.kind == SampleKind::WorldModel && s.episode == episode && s.t == t)
        .ok_or_else(|| EvalError::Config(format!("no world-model sample for episode {episode} frame {t}")))?;
    let out = model.predict(&sample_input(corpus, sample), &Ablation::FULL, ForwardMode::Full)?;
    let target = corpus.frame(sample.short_target);
    let f = model.cfg.feat_dim;
    let emb = class_embeddings(model.cfg.n_classes, f, embedding_seed);
    let gt_depth: Vec<f64> = target.depth.iter().map(|&v| v as f64).collect();
    let pred_depth = out.pred_short_depth.unwrap_or_default();
    let pred_classes = decode_classes(&out.pred_short_sem.unwrap_or_default(), f, &emb);
    std::fs::create_dir_all(out_dir)?;
    let r = gt_depth.len();
    let stem = format!("ep{episode}_t{t}");
    let images: [(&str, Vec<u8>); 4] = [
        ("depth_gt", depth_strip(&gt_depth, max_range)),
        ("depth_pred", depth_strip(&pred_depth, max_range)),
        ("class_gt", class_strip(&target.class_ids, model.cfg.n_classes)),
        ("class_pred", class_strip(&pred_classes, model.cfg.n_classes)),
    ];
    let mut files = Vec::new();
    for (name, px) in images {
        let path = out_dir.join(format!("{stem}_{name}.pgm"));
        write_pgm(&path, r, 1, &px)?;
        files.push(path);
    }
    let hits = pred_classes.iter().zip(&target.class_ids).filter(|(a, b)| a == b).count();
    let abs_rel = pred_depth
        .iter()
        .zip(&gt_depth)
        .map(|(p, g)| (p - g).abs() / g)
        .sum::<f64>()
        / r.max(1) as f64;
    Ok(RenderSummary {
        files,
        class_accuracy: hits as f64 / r.max(1) as f64,
        depth_abs_rel: abs_rel,
    })
}
