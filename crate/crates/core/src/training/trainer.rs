use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::sample_loss;
use super::mixer::{mix_seed, BatchMixer, MixerState};
use super::{LossBreakdown, TrainConfig, TrainError};
use crate::dataset::{Corpus, SampleKind};
use crate::model::{Ablation, ModelConfig, NavModel};
use crate::numcore::{AdamW, Checkpoint, DType, GradStore, Tape, Tensor};

pub const METRICS_HEADER: &str = "step,L_d,L_c,L_a,L_plan,total,lr";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    /// 1-based step number.
    pub step: u64,
    pub kind: SampleKind,
    pub loss: LossBreakdown,
    pub lr: f64,
    pub grad_norm: f64,
    /// False when the batch carried no trainable term under the ablation.
    pub updated: bool,
}

impl StepLog {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{}",
            self.step, l.l_d, l.l_c, l.l_a, l.l_plan, l.total, self.lr
        )
    }
}

/// Mean gradients and losses of a batch. Per-sample tapes run in parallel and
/// are merged in batch order, so the result does not depend on thread count.
/// The flag reports whether any sample had a differentiable term.
pub fn batch_gradients(
    model: &NavModel,
    corpus: &Corpus,
    ids: &[usize],
    ablation: &Ablation,
    cfg: &TrainConfig,
    step: u64,
) -> Result<(GradStore, LossBreakdown, bool), TrainError> {
    let scale = 1.0 / ids.len().max(1) as f64;
    let per_sample: Vec<Result<(GradStore, LossBreakdown, bool), TrainError>> = ids
        .par_iter()
        .map(|&i| {
            let sample = &corpus.samples[i];
            let mut t = Tape::with_params(&model.params);
            let (total, breakdown) = sample_loss(model, &mut t, corpus, sample, ablation, cfg)?;
            if !breakdown.is_finite() {
                return Err(TrainError::NonFinite {
                    step,
                    sample: i,
                    detail: format!("{breakdown:?}"),
                });
            }
            let mut g = GradStore::new(&model.params);
            if let Some(total) = total {
                t.backward_scaled(total, scale, &mut g)?;
            }
            Ok((g, breakdown, total.is_some()))
        })
        .collect();
    let mut grads = GradStore::new(&model.params);
    let mut mean = LossBreakdown::default();
    let mut any = false;
    for r in per_sample {
        let (g, b, has) = r?;
        grads.merge(&g);
        mean.add_scaled(&b, scale);
        any |= has;
    }
    Ok((grads, mean, any))
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    mixer: MixerState,
    initial: [Option<f64>; 2],
    above: u64,
    #[serde(default)]
    run: serde_json::Value,
}

/// Training state over a borrowed corpus.
pub struct Trainer<'c> {
    pub corpus: &'c Corpus,
    pub cfg: TrainConfig,
    pub ablation: Ablation,
    pub model: NavModel,
    pub opt: AdamW,
    pub mixer: BatchMixer,
    /// Completed optimizer steps.
    pub step: u64,
    probe: Vec<usize>,
    initial: [Option<f64>; 2],
    above: u64,
}

fn kind_slot(kind: SampleKind) -> usize {
    match kind {
        SampleKind::WorldModel => 0,
        SampleKind::Planning => 1,
    }
}

fn check_corpus(corpus: &Corpus, m: &ModelConfig) -> Result<(), TrainError> {
    if corpus.n_rays != m.n_rays || corpus.feat_dim != m.feat_dim {
        return Err(TrainError::Config(format!(
            "corpus observations are R={} F={}, model expects R={} F={}",
            corpus.n_rays, corpus.feat_dim, m.n_rays, m.feat_dim
        )));
    }
    for (i, s) in corpus.samples.iter().enumerate() {
        if s.waypoints.len() != m.n_waypoints || s.history.is_empty() || s.history.len() > m.h_max {
            return Err(TrainError::Config(format!(
                "sample {i} has {} waypoints and {} history frames; model expects K={} and H_max={}",
                s.waypoints.len(),
                s.history.len(),
                m.n_waypoints,
                m.h_max
            )));
        }
    }
    Ok(())
}

impl<'c> Trainer<'c> {
    pub fn new(corpus: &'c Corpus, model: NavModel, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        check_corpus(corpus, &model.cfg)?;
        let ablation = cfg.ablation()?;
        let mixer = BatchMixer::new(corpus, cfg.mix_ratio, cfg.batch_size, cfg.seed);
        let mut probe = Vec::new();
        for kind in [SampleKind::WorldModel, SampleKind::Planning] {
            let mut pool = mixer.pool(kind).to_vec();
            pool.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x0BE5 + kind_slot(kind) as u64)));
            probe.extend(pool.into_iter().take(cfg.probe_size));
        }
        Ok(Trainer {
            corpus,
            opt: AdamW::new(cfg.adamw(), &model.params),
            ablation,
            model,
            mixer,
            step: 0,
            probe,
            initial: [None, None],
            above: 0,
            cfg,
        })
    }

    /// Restores model, optimizer and batch stream from a checkpoint written
    /// with optimizer state. `cfg` may extend `steps`; other fields should match.
    pub fn resume(corpus: &'c Corpus, ck: &Checkpoint, cfg: Option<TrainConfig>) -> Result<Self, TrainError> {
        let h: Header = serde_json::from_str(&ck.config)
            .map_err(|e| TrainError::Checkpoint(format!("header: {e}")))?;
        let model = NavModel::from_checkpoint(ck)?;
        let cfg = cfg.unwrap_or(h.train);
        let mut tr = Trainer::new(corpus, model, cfg)?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (_, name, _) in tr.model.params.iter() {
            let get = |prefix: &str| {
                ck.get(&format!("{prefix}{name}"))
                    .map(|t| t.data().to_vec())
                    .map_err(|_| TrainError::Checkpoint(format!("checkpoint has no optimizer state for {name}")))
            };
            m.push(get("optim.m.")?);
            v.push(get("optim.v.")?);
        }
        tr.opt.restore(h.step, m, v);
        tr.mixer.state = h.mixer;
        tr.step = h.step;
        tr.initial = h.initial;
        tr.above = h.above;
        Ok(tr)
    }

    pub fn probe_ids(&self) -> &[usize] {
        &self.probe
    }

    /// Mean total loss over the fixed probe set at the current parameters.
    pub fn probe_loss(&self) -> Result<f64, TrainError> {
        if self.probe.is_empty() {
            return Ok(0.0);
        }
        let totals: Vec<Result<f64, TrainError>> = self
            .probe
            .par_iter()
            .map(|&i| {
                let mut t = Tape::with_params(&self.model.params);
                let (_, b) = sample_loss(&self.model, &mut t, self.corpus, &self.corpus.samples[i], &self.ablation, &self.cfg)?;
                Ok(b.total)
            })
            .collect();
        let mut sum = 0.0;
        for r in totals {
            sum += r?;
        }
        Ok(sum / self.probe.len() as f64)
    }

    pub fn step(&mut self) -> Result<StepLog, TrainError> {
        let batch = self
            .mixer
            .next_batch(self.step)
            .ok_or_else(|| TrainError::Config("corpus has no training samples".into()))?;
        let (mut grads, loss, any) =
            batch_gradients(&self.model, self.corpus, &batch.ids, &self.ablation, &self.cfg, self.step + 1)?;
        let lr = self.cfg.lr_at(self.step);
        let grad_norm = grads.global_norm();
        if any {
            if self.cfg.grad_clip > 0.0 && grad_norm > self.cfg.grad_clip {
                grads.scale(self.cfg.grad_clip / grad_norm);
            }
            self.opt.step(&mut self.model.params, &grads, lr);
        }
        self.step += 1;
        let log = StepLog {
            step: self.step,
            kind: batch.kind,
            loss,
            lr,
            grad_norm,
            updated: any,
        };
        if any {
            let slot = kind_slot(batch.kind);
            let initial = *self.initial[slot].get_or_insert(loss.total);
            if loss.total > self.cfg.divergence_factor * initial {
                self.above += 1;
                if self.above >= self.cfg.divergence_window {
                    return Err(TrainError::Diverged {
                        step: self.step,
                        loss: loss.total,
                        initial,
                        factor: self.cfg.divergence_factor,
                    });
                }
            } else {
                self.above = 0;
            }
        }
        Ok(log)
    }

    /// Checkpoint of the current state; `run` is embedded in the header.
    pub fn checkpoint(&self, run: &serde_json::Value) -> Checkpoint {
        let header = Header {
            model: self.model.cfg.clone(),
            train: self.cfg.clone(),
            step: self.step,
            mixer: self.mixer.state,
            initial: self.initial,
            above: self.above,
            run: run.clone(),
        };
        let json = serde_json::to_string(&header).expect("header serializes");
        let mut ck = self.model.to_checkpoint(&json, self.cfg.checkpoint_dtype);
        if self.cfg.save_optimizer {
            for (i, (_, name, t)) in self.model.params.iter().enumerate() {
                let shape = t.shape();
                let m = Tensor::new(shape, self.opt.first_moment(i).to_vec()).expect("moment shape");
                let v = Tensor::new(shape, self.opt.second_moment(i).to_vec()).expect("moment shape");
                ck.push(format!("optim.m.{name}"), DType::F64, m);
                ck.push(format!("optim.v.{name}"), DType::F64, v);
            }
        }
        ck
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: NavModel,
    pub logs: Vec<StepLog>,
    /// Probe loss before the first step.
    pub probe_initial: f64,
    pub probe_final: f64,
}

/// Trains from `trainer`'s current step up to `cfg.steps`, writing
/// `metrics.csv` and `step_<n>.nfck` files into `out` when given.
pub fn train(mut trainer: Trainer<'_>, out: Option<&Path>, run: &serde_json::Value) -> Result<TrainOutcome, TrainError> {
    let save = |tr: &Trainer, dir: &Path| -> Result<(), TrainError> {
        tr.checkpoint(run)
            .save(&dir.join(format!("step_{}.nfck", tr.step)))
            .map_err(|e| TrainError::Checkpoint(e.to_string()))
    };
    let mut csv = None;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("metrics.csv");
        let resuming = trainer.step > 0 && path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(resuming)
            .write(true)
            .truncate(!resuming)
            .open(&path)?;
        let mut w = BufWriter::new(file);
        if !resuming {
            writeln!(w, "# config: {}", serde_json::to_string(run).unwrap_or_default())?;
            writeln!(w, "{METRICS_HEADER}")?;
        }
        csv = Some(w);
        if trainer.step == 0 {
            save(&trainer, dir)?;
        }
    }
    let probe_initial = trainer.probe_loss()?;
    let mut logs = Vec::new();
    while trainer.step < trainer.cfg.steps {
        let log = trainer.step()?;
        if let Some(w) = csv.as_mut() {
            writeln!(w, "{}", log.csv_row())?;
        }
        if log.step % 250 == 0 {
            log::info!(
                "step {} {:?} total {:.4} (L_d {:.4} L_c {:.4} L_a {:.4} L_plan {:.4})",
                log.step,
                log.kind,
                log.loss.total,
                log.loss.l_d,
                log.loss.l_c,
                log.loss.l_a,
                log.loss.l_plan
            );
        }
        logs.push(log);
        if let Some(dir) = out {
            let every = trainer.cfg.checkpoint_every;
            if (every > 0 && trainer.step % every == 0) || trainer.step == trainer.cfg.steps {
                csv.as_mut().map(|w| w.flush()).transpose()?;
                save(&trainer, dir)?;
            }
        }
    }
    if let Some(mut w) = csv {
        w.flush()?;
    }
    let probe_final = trainer.probe_loss()?;
    Ok(TrainOutcome {
        model: trainer.model,
        logs,
        probe_initial,
        probe_final,
    })
}

/// Writes a step log as CSV (used when logs are kept in memory).
pub fn write_metrics(path: &Path, logs: &[StepLog], run: &serde_json::Value) -> Result<(), TrainError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# config: {}", serde_json::to_string(run).unwrap_or_default())?;
    writeln!(w, "{METRICS_HEADER}")?;
    for l in logs {
        writeln!(w, "{}", l.csv_row())?;
    }
    w.flush()?;
    Ok(())
}
