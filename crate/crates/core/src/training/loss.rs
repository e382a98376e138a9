use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::dataset::{Corpus, SampleKind, TrainingSample};
use crate::model::{Ablation, ForwardMode, FrameInput, ModelInput, ModelOutput, NavModel};
use crate::numcore::{silog, Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_d: f64,
    pub l_c: f64,
    pub l_a: f64,
    pub l_plan: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_d, self.l_c, self.l_a, self.l_plan, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// `α·L_d + β·L_c + L_a` for world-model samples, `L_plan` for planning samples.
    pub fn compose(kind: SampleKind, l_d: f64, l_c: f64, l_a: f64, l_plan: f64, cfg: &TrainConfig) -> Self {
        let total = match kind {
            SampleKind::WorldModel => cfg.alpha * l_d + cfg.beta * l_c + l_a,
            SampleKind::Planning => l_plan,
        };
        LossBreakdown { l_d, l_c, l_a, l_plan, total }
    }

    pub fn add_scaled(&mut self, other: &LossBreakdown, s: f64) {
        self.l_d += s * other.l_d;
        self.l_c += s * other.l_c;
        self.l_a += s * other.l_a;
        self.l_plan += s * other.l_plan;
        self.total += s * other.total;
    }
}

/// Model input for a sample, frames resolved from the corpus.
pub fn sample_input<'a>(corpus: &'a Corpus, s: &'a TrainingSample) -> ModelInput<'a> {
    ModelInput {
        instruction: &s.instruction,
        frames: s
            .history
            .iter()
            .map(|h| FrameInput {
                obs: corpus.frame(h.frame),
                rel_pose: h.rel_pose,
            })
            .collect(),
    }
}

fn depth_target(corpus: &Corpus, frame: usize) -> Vec<f64> {
    corpus.frame(frame).depth.iter().map(|&v| v as f64).collect()
}

fn sem_target(corpus: &Corpus, frame: usize) -> Vec<f64> {
    corpus.frame(frame).semfeat.iter().map(|&v| v as f64).collect()
}

fn waypoint_target(s: &TrainingSample) -> Vec<f64> {
    s.waypoints.iter().flatten().copied().collect()
}

/// Progress class, clamped to the plan head's range.
pub fn progress_class(s: &TrainingSample, max_subinstr: usize) -> usize {
    s.plan.progress_index.min(max_subinstr)
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / b.len().max(1) as f64
}

fn cross_entropy(logits: &[f64], class: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[class]
}

/// Loss of a finished forward pass, computed from plain values. Absent
/// outputs (ablated groups) contribute nothing.
pub fn compute_loss(
    out: &ModelOutput,
    sample: &TrainingSample,
    corpus: &Corpus,
    max_subinstr: usize,
    ablation: &Ablation,
    cfg: &TrainConfig,
) -> Result<LossBreakdown, TrainError> {
    let (mut l_d, mut l_c, mut l_a, mut l_plan) = (0.0, 0.0, 0.0, 0.0);
    match sample.kind {
        SampleKind::WorldModel => {
            for (pred, frame) in [
                (&out.pred_short_depth, sample.short_target),
                (&out.pred_long_depth, sample.long_target),
            ] {
                if let Some(p) = pred {
                    l_d += silog(p, &depth_target(corpus, frame), cfg.silog_lambda)?;
                }
            }
            for (pred, frame) in [
                (&out.pred_short_sem, sample.short_target),
                (&out.pred_long_sem, sample.long_target),
            ] {
                if let Some(p) = pred {
                    l_c += mse(p, &sem_target(corpus, frame));
                }
            }
            if let Some(w) = &out.waypoints {
                let flat: Vec<f64> = w.iter().flatten().copied().collect();
                l_a = mse(&flat, &waypoint_target(sample));
            }
        }
        SampleKind::Planning => {
            if ablation.planning {
                let (Some(p), Some(a)) = (&out.plan_progress_logits, &out.plan_action_logits) else {
                    return Err(TrainError::Shape("planning sample without plan logits".into()));
                };
                l_plan = cross_entropy(p, progress_class(sample, max_subinstr))
                    + cross_entropy(a, sample.plan.action_class.index());
            }
        }
    }
    Ok(LossBreakdown::compose(sample.kind, l_d, l_c, l_a, l_plan, cfg))
}

/// Records the loss of one sample on `t`; returns `None` for the total when
/// the sample contributes no differentiable term under the ablation.
pub fn sample_loss(
    model: &NavModel,
    t: &mut Tape,
    corpus: &Corpus,
    sample: &TrainingSample,
    ablation: &Ablation,
    cfg: &TrainConfig,
) -> Result<(Option<Var>, LossBreakdown), TrainError> {
    let input = sample_input(corpus, sample);
    let mut terms: Vec<(Var, f64)> = Vec::new();
    let (mut l_d, mut l_c, mut l_a, mut l_plan) = (0.0, 0.0, 0.0, 0.0);
    match sample.kind {
        SampleKind::WorldModel => {
            let v = model.forward(t, &input, ablation, ForwardMode::Full)?;
            for (pred, frame) in [(v.short.depth, sample.short_target), (v.long.depth, sample.long_target)] {
                if let Some(p) = pred {
                    let l = t.silog_loss(p, &depth_target(corpus, frame), cfg.silog_lambda)?;
                    l_d += t.value(l).item();
                    terms.push((l, cfg.alpha));
                }
            }
            for (pred, frame) in [(v.short.sem, sample.short_target), (v.long.sem, sample.long_target)] {
                if let Some(p) = pred {
                    let l = t.mse_loss(p, &sem_target(corpus, frame))?;
                    l_c += t.value(l).item();
                    terms.push((l, cfg.beta));
                }
            }
            if let Some(w) = v.waypoints {
                let l = t.mse_loss(w, &waypoint_target(sample))?;
                l_a = t.value(l).item();
                terms.push((l, 1.0));
            }
        }
        SampleKind::Planning => {
            if ablation.planning {
                let v = model.forward(t, &input, ablation, ForwardMode::Plan)?;
                let (p, a) = (v.progress_logits.unwrap(), v.action_logits.unwrap());
                let lp = t.cross_entropy(p, progress_class(sample, model.cfg.max_subinstr))?;
                let la = t.cross_entropy(a, sample.plan.action_class.index())?;
                l_plan = t.value(lp).item() + t.value(la).item();
                terms.push((lp, 1.0));
                terms.push((la, 1.0));
            }
        }
    }
    let breakdown = LossBreakdown::compose(sample.kind, l_d, l_c, l_a, l_plan, cfg);
    let mut total: Option<Var> = None;
    for (v, w) in terms {
        let v = if w == 1.0 { v } else { t.scale(v, w)? };
        total = Some(match total {
            Some(acc) => t.add(acc, v)?,
            None => v,
        });
    }
    Ok((total, breakdown))
}
