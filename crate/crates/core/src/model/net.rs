use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{open_mask, Block, DecoderBlock, LayerNorm, Linear};
use super::layout::{build_structured_mask, build_token_layout, prepare_instruction, GroupKind, TokenLayout};
use super::{Ablation, ModelConfig, ModelError, QueryGroups};
use crate::numcore::{Checkpoint, DType, ParamId, ParamStore, Tape, Tensor, Var};
use crate::simworld::{Observation, RelPose};

#[derive(Clone, Copy, Debug)]
pub struct FrameInput<'a> {
    pub obs: &'a Observation,
    pub rel_pose: RelPose,
}

/// Instruction plus history frames, oldest first; the last frame is current.
#[derive(Clone, Debug)]
pub struct ModelInput<'a> {
    pub instruction: &'a [u32],
    pub frames: Vec<FrameInput<'a>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    /// Every query group enabled by the ablation, decoders and action head.
    Full,
    /// Context tokens only, followed by the plan head.
    Plan,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Prediction {
    /// `n_patches × obs_patch`, row-major in ray order.
    pub depth: Option<Var>,
    /// `n_patches × (obs_patch·F)`, row-major in ray order.
    pub sem: Option<Var>,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub layout: TokenLayout,
    pub instr_truncated: bool,
    pub e_s_depth: Option<Var>,
    pub e_s_sem: Option<Var>,
    pub e_l_depth: Option<Var>,
    pub e_l_sem: Option<Var>,
    pub e_a: Option<Var>,
    pub short: Prediction,
    pub long: Prediction,
    /// `K × 5`.
    pub waypoints: Option<Var>,
    pub progress_logits: Option<Var>,
    pub action_logits: Option<Var>,
}

/// Plain-value view of a forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelOutput {
    pub e_s: Option<Tensor>,
    pub e_l: Option<Tensor>,
    pub e_a: Option<Tensor>,
    pub plan_progress_logits: Option<Vec<f64>>,
    pub plan_action_logits: Option<Vec<f64>>,
    pub pred_short_depth: Option<Vec<f64>>,
    pub pred_short_sem: Option<Vec<f64>>,
    pub pred_long_depth: Option<Vec<f64>>,
    pub pred_long_sem: Option<Vec<f64>>,
    /// `K` rows of `[x, y, sin θ, cos θ, stop probability]` with exactly
    /// unit-norm heading pairs.
    pub waypoints: Option<Vec<[f64; 5]>>,
}

#[derive(Clone, Debug)]
struct Decoder {
    out_tokens: ParamId,
    blocks: Vec<DecoderBlock>,
    ln: LayerNorm,
    head: Linear,
}

#[derive(Clone, Debug)]
struct ActionHead {
    type_emb: ParamId,
    blocks: Vec<Block>,
    ln: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
struct Ids {
    tok_emb: ParamId,
    instr_pos: ParamId,
    obs_proj: Linear,
    patch_pos: ParamId,
    age_emb: ParamId,
    pose1: Linear,
    pose2: Linear,
    qs_depth: ParamId,
    qs_sem: ParamId,
    ql_depth: ParamId,
    ql_sem: ParamId,
    qa: ParamId,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    dec_depth: Decoder,
    dec_sem: Decoder,
    action: ActionHead,
    plan_progress: Linear,
    plan_action: Linear,
}

/// The navigation network and its parameters.
#[derive(Clone, Debug)]
pub struct NavModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    ids: Ids,
}

/// Parameter-name prefixes by functional group.
pub const PARAM_GROUPS: [&str; 8] = [
    "embed.", "pose.", "backbone.", "queries.", "decoder.", "action.", "plan.", "obs.",
];

fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl NavModel {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let rng = &mut rng;
        let mut ps = ParamStore::new();
        let d = cfg.d_model;
        let np = cfg.n_patches();
        let emb_std = 0.5;
        let tok_emb = ps.add_normal("embed.tokens", &[cfg.vocab_size, d], emb_std, rng);
        let instr_pos = ps.add_normal("embed.instr_pos", &[cfg.instr_len, d], emb_std, rng);
        let obs_proj = Linear::new(&mut ps, "obs.proj", cfg.obs_patch * (1 + cfg.feat_dim), d, 1.0, rng);
        let patch_pos = ps.add_normal("obs.patch_pos", &[np, d], emb_std, rng);
        let age_emb = ps.add_normal("embed.frame_age", &[cfg.h_max, d], emb_std, rng);
        let pose1 = Linear::new(&mut ps, "pose.fc1", 4, d, 1.0, rng);
        let pose2 = Linear::new(&mut ps, "pose.fc2", d, d, 1.0, rng);
        let q = cfg.q_tokens.max(1);
        let qs_depth = ps.add_normal("queries.qs_depth", &[q, d], emb_std, rng);
        let qs_sem = ps.add_normal("queries.qs_sem", &[q, d], emb_std, rng);
        let ql_depth = ps.add_normal("queries.ql_depth", &[q, d], emb_std, rng);
        let ql_sem = ps.add_normal("queries.ql_sem", &[q, d], emb_std, rng);
        let qa = ps.add_normal("queries.qa", &[1, d], emb_std, rng);
        let blocks = (0..cfg.n_layers)
            .map(|l| Block::new(&mut ps, &format!("backbone.layer{l}"), d, cfg.n_heads, cfg.ffn_mult, cfg.n_layers, rng))
            .collect();
        let ln_f = LayerNorm::new(&mut ps, "backbone.ln_f", d);
        let mut decoder = |name: &str, per_token: usize, bias: f64, ps: &mut ParamStore| {
            let out_tokens = ps.add_normal(format!("decoder.{name}.tokens"), &[np, d], emb_std, rng);
            let blocks = (0..cfg.decoder_layers)
                .map(|l| {
                    DecoderBlock::new(ps, &format!("decoder.{name}.layer{l}"), d, cfg.n_heads, cfg.ffn_mult, cfg.decoder_layers.max(1), rng)
                })
                .collect();
            let ln = LayerNorm::new(ps, &format!("decoder.{name}.ln"), d);
            let head = Linear::new(ps, &format!("decoder.{name}.head"), d, per_token, 0.1, rng);
            ps.get_mut(head.b).data_mut().fill(bias);
            Decoder { out_tokens, blocks, ln, head }
        };
        let dec_depth = decoder("depth", cfg.obs_patch, softplus_inv(cfg.depth_init), &mut ps);
        let dec_sem = decoder("sem", cfg.obs_patch * cfg.feat_dim, 0.0, &mut ps);
        let action = ActionHead {
            type_emb: ps.add_normal("action.type", &[5, d], emb_std, rng),
            blocks: (0..cfg.action_tf_layers)
                .map(|l| Block::new(&mut ps, &format!("action.layer{l}"), d, cfg.n_heads, cfg.ffn_mult, cfg.action_tf_layers.max(1), rng))
                .collect(),
            ln: LayerNorm::new(&mut ps, "action.ln", d),
            fc1: Linear::new(&mut ps, "action.fc1", d, cfg.action_hidden, 2f64.sqrt(), rng),
            fc2: Linear::new(&mut ps, "action.fc2", cfg.action_hidden, cfg.n_waypoints * 5, 0.5, rng),
        };
        let plan_progress = Linear::new(&mut ps, "plan.progress", d, cfg.max_subinstr + 1, 0.5, rng);
        let plan_action = Linear::new(&mut ps, "plan.action", d, 4, 0.5, rng);
        Ok(NavModel {
            cfg,
            params: ps,
            ids: Ids {
                tok_emb,
                instr_pos,
                obs_proj,
                patch_pos,
                age_emb,
                pose1,
                pose2,
                qs_depth,
                qs_sem,
                ql_depth,
                ql_sem,
                qa,
                blocks,
                ln_f,
                dec_depth,
                dec_sem,
                action,
                plan_progress,
                plan_action,
            },
        })
    }

    pub fn query_param(&self, kind: GroupKind) -> Option<ParamId> {
        match kind {
            GroupKind::QsDepth => Some(self.ids.qs_depth),
            GroupKind::QsSem => Some(self.ids.qs_sem),
            GroupKind::QlDepth => Some(self.ids.ql_depth),
            GroupKind::QlSem => Some(self.ids.ql_sem),
            GroupKind::Qa => Some(self.ids.qa),
            _ => None,
        }
    }

    /// Raw patch matrix `n_patches × obs_patch·(1+F)`: scaled depths, then features.
    pub fn observation_patches(&self, obs: &Observation) -> Result<Tensor, ModelError> {
        let c = &self.cfg;
        if obs.depth.len() != c.n_rays || obs.semfeat.len() != c.n_rays * c.feat_dim {
            return Err(ModelError::Shape(format!(
                "observation has {} rays and {} features, expected {} and {}",
                obs.depth.len(),
                obs.semfeat.len(),
                c.n_rays,
                c.n_rays * c.feat_dim
            )));
        }
        let p = c.obs_patch;
        let width = p * (1 + c.feat_dim);
        let mut data = Vec::with_capacity(c.n_patches() * width);
        for patch in 0..c.n_patches() {
            let rays = patch * p..(patch + 1) * p;
            data.extend(obs.depth[rays.clone()].iter().map(|&v| v as f64 / c.depth_scale));
            data.extend(obs.semfeat[rays.start * c.feat_dim..rays.end * c.feat_dim].iter().map(|&v| v as f64));
        }
        Ok(Tensor::new(&[c.n_patches(), width], data)?)
    }

    /// Linear projection of each patch, without position embeddings.
    pub fn project_observation(&self, t: &mut Tape, obs: &Observation) -> Result<Var, ModelError> {
        let x = t.constant(self.observation_patches(obs)?);
        Ok(self.ids.obs_proj.forward(t, x)?)
    }

    /// Observation tokens with patch-position embeddings.
    pub fn embed_observation(&self, t: &mut Tape, obs: &Observation) -> Result<Var, ModelError> {
        let x = self.project_observation(t, obs)?;
        let pos = t.param(self.ids.patch_pos);
        Ok(t.add(x, pos)?)
    }

    /// Two-layer pose encoder on `(Δx, Δy, sin Δθ, cos Δθ)`.
    pub fn encode_pose_var(&self, t: &mut Tape, x: Var) -> Result<Var, ModelError> {
        let h = self.ids.pose1.forward(t, x)?;
        let h = t.gelu(h)?;
        Ok(self.ids.pose2.forward(t, h)?)
    }

    pub fn encode_pose(&self, t: &mut Tape, rel: RelPose) -> Result<Var, ModelError> {
        let x = t.constant(Tensor::new(&[1, 4], rel.to_array().to_vec())?);
        self.encode_pose_var(t, x)
    }

    fn decode(&self, t: &mut Tape, dec: &Decoder, e: Var) -> Result<Var, ModelError> {
        let np = self.cfg.n_patches();
        let m = t.shape(e)[0];
        let self_mask = open_mask(np, np);
        let cross_mask = open_mask(np, m);
        let mut x = t.param(dec.out_tokens);
        for b in &dec.blocks {
            x = b.forward(t, x, e, &self_mask, &cross_mask)?;
        }
        let h = dec.ln.forward(t, x)?;
        Ok(dec.head.forward(t, h)?)
    }

    /// Depth ring (`n_patches × obs_patch`, strictly positive) from one half of
    /// a dream embedding.
    pub fn decode_depth(&self, t: &mut Tape, e_half: Var) -> Result<Var, ModelError> {
        let raw = self.decode(t, &self.ids.dec_depth, e_half)?;
        Ok(t.softplus(raw)?)
    }

    /// Feature ring (`n_patches × obs_patch·F`).
    pub fn decode_semantics(&self, t: &mut Tape, e_half: Var) -> Result<Var, ModelError> {
        self.decode(t, &self.ids.dec_sem, e_half)
    }

    /// Waypoints `K × 5` from the dream embeddings present and the action embedding.
    pub fn action_head(&self, t: &mut Tape, parts: &[(usize, Var)], e_a: Var) -> Result<Var, ModelError> {
        let a = &self.ids.action;
        let mut rows = Vec::with_capacity(parts.len() + 1);
        let mut types = Vec::new();
        for &(ty, v) in parts {
            types.extend(std::iter::repeat(ty).take(t.shape(v)[0]));
            rows.push(v);
        }
        rows.push(e_a);
        types.push(4);
        let x = if rows.len() == 1 { e_a } else { t.concat_rows(&rows)? };
        let table = t.param(a.type_emb);
        let ty = t.embedding(table, &types)?;
        let mut x = t.add(x, ty)?;
        let n = types.len();
        let mask = open_mask(n, n);
        for b in &a.blocks {
            x = b.forward(t, x, &mask)?;
        }
        let h = a.ln.forward(t, x)?;
        let last = t.slice_rows(h, n - 1, n)?;
        let z = a.fc1.forward(t, last)?;
        let z = t.relu(z)?;
        let z = a.fc2.forward(t, z)?;
        let k = self.cfg.n_waypoints;
        let z = t.reshape(z, &[k, 5])?;
        let xy = t.slice_cols(z, 0, 2)?;
        let sc = t.slice_cols(z, 2, 4)?;
        let sc = t.normalize_rows(sc)?;
        let stop = t.slice_cols(z, 4, 5)?;
        let stop = t.sigmoid(stop)?;
        Ok(t.concat_cols(&[xy, sc, stop])?)
    }

    /// Progress and language-action logits from one backbone output row.
    pub fn plan_head(&self, t: &mut Tape, h: Var) -> Result<(Var, Var), ModelError> {
        let p = self.ids.plan_progress.forward(t, h)?;
        let a = self.ids.plan_action.forward(t, h)?;
        Ok((p, a))
    }

    /// Input token matrix in layout order.
    fn embed_inputs(
        &self,
        t: &mut Tape,
        input: &ModelInput,
        layout: &TokenLayout,
    ) -> Result<(Var, bool), ModelError> {
        let c = &self.cfg;
        let instr = prepare_instruction(input.instruction, c.instr_len, c.vocab_size);
        let table = t.param(self.ids.tok_emb);
        let tok = t.embedding(table, &instr.ids)?;
        let pos = t.param(self.ids.instr_pos);
        let mut parts = vec![t.add(tok, pos)?];
        let h = input.frames.len();
        let age_table = t.param(self.ids.age_emb);
        for (i, f) in input.frames.iter().enumerate() {
            let age = t.embedding(age_table, &[h - 1 - i])?;
            let o = self.embed_observation(t, f.obs)?;
            parts.push(t.add_row(o, age)?);
            let p = self.encode_pose(t, f.rel_pose)?;
            parts.push(t.add(p, age)?);
        }
        for s in &layout.spans {
            if s.len == 0 {
                continue;
            }
            if let Some(id) = self.query_param(s.kind) {
                let q = t.param(id);
                parts.push(if s.kind == GroupKind::Qa { q } else { t.slice_rows(q, 0, s.len)? });
            }
        }
        Ok((t.concat_rows(&parts)?, instr.truncated))
    }

    pub fn forward(
        &self,
        t: &mut Tape,
        input: &ModelInput,
        ablation: &Ablation,
        mode: ForwardMode,
    ) -> Result<ForwardVars, ModelError> {
        let groups = match mode {
            ForwardMode::Full => ablation.groups(),
            ForwardMode::Plan => QueryGroups::NONE,
        };
        let layout = build_token_layout(&self.cfg, input.frames.len(), groups)?;
        let mask: Rc<[f64]> = build_structured_mask(&layout);
        let (mut x, instr_truncated) = self.embed_inputs(t, input, &layout)?;
        for b in &self.ids.blocks {
            x = b.forward(t, x, &mask)?;
        }
        let h = self.ids.ln_f.forward(t, x)?;
        let rows = |t: &mut Tape, kind: GroupKind| -> Result<Option<Var>, ModelError> {
            match layout.span(kind) {
                Some(s) if s.len > 0 => Ok(Some(t.slice_rows(h, s.start, s.end())?)),
                _ => Ok(None),
            }
        };
        let mut out = ForwardVars {
            e_s_depth: rows(t, GroupKind::QsDepth)?,
            e_s_sem: rows(t, GroupKind::QsSem)?,
            e_l_depth: rows(t, GroupKind::QlDepth)?,
            e_l_sem: rows(t, GroupKind::QlSem)?,
            e_a: rows(t, GroupKind::Qa)?,
            layout: layout.clone(),
            instr_truncated,
            short: Prediction::default(),
            long: Prediction::default(),
            waypoints: None,
            progress_logits: None,
            action_logits: None,
        };
        match mode {
            ForwardMode::Plan => {
                let last = layout.context_len() - 1;
                let row = t.slice_rows(h, last, last + 1)?;
                let (p, a) = self.plan_head(t, row)?;
                out.progress_logits = Some(p);
                out.action_logits = Some(a);
            }
            ForwardMode::Full => {
                if let Some(e) = out.e_s_depth {
                    out.short.depth = Some(self.decode_depth(t, e)?);
                }
                if let Some(e) = out.e_s_sem {
                    out.short.sem = Some(self.decode_semantics(t, e)?);
                }
                if let Some(e) = out.e_l_depth {
                    out.long.depth = Some(self.decode_depth(t, e)?);
                }
                if let Some(e) = out.e_l_sem {
                    out.long.sem = Some(self.decode_semantics(t, e)?);
                }
                let parts: Vec<(usize, Var)> = [out.e_s_depth, out.e_s_sem, out.e_l_depth, out.e_l_sem]
                    .into_iter()
                    .enumerate()
                    .filter_map(|(i, v)| v.map(|v| (i, v)))
                    .collect();
                let e_a = out.e_a.expect("action query is always present in full mode");
                out.waypoints = Some(self.action_head(t, &parts, e_a)?);
            }
        }
        Ok(out)
    }

    /// Runs a forward pass on a fresh tape and copies the values out.
    pub fn predict(&self, input: &ModelInput, ablation: &Ablation, mode: ForwardMode) -> Result<ModelOutput, ModelError> {
        let mut t = Tape::with_params(&self.params);
        let v = self.forward(&mut t, input, ablation, mode)?;
        Ok(output_values(&t, &v))
    }

    pub fn to_checkpoint(&self, header: &str, dtype: DType) -> Checkpoint {
        let mut ck = Checkpoint::new(header);
        for (_, name, tensor) in self.params.iter() {
            ck.push(name, dtype, tensor.clone());
        }
        ck
    }

    /// Rebuilds a model from a checkpoint whose header is a JSON object with
    /// a `model` entry holding the [`ModelConfig`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let v: serde_json::Value = serde_json::from_str(&ck.config)
            .map_err(|e| ModelError::Checkpoint(format!("header is not JSON: {e}")))?;
        let cfg: ModelConfig = serde_json::from_value(v.get("model").cloned().unwrap_or_default())
            .map_err(|e| ModelError::Checkpoint(format!("bad model config: {e}")))?;
        let mut m = NavModel::new(cfg)?;
        m.load_params(ck)?;
        Ok(m)
    }

    /// Overwrites every parameter from the checkpoint; names and shapes must
    /// match. Tensors under `optim.` hold optimizer state and are ignored.
    pub fn load_params(&mut self, ck: &Checkpoint) -> Result<(), ModelError> {
        let names: Vec<String> = self.params.iter().map(|(_, n, _)| n.to_string()).collect();
        let stored = ck.tensors.iter().filter(|t| !t.name.starts_with("optim.")).count();
        if stored != names.len() {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint holds {stored} parameter tensors, model has {}",
                names.len()
            )));
        }
        for name in names {
            let t = ck
                .get(&name)
                .map_err(|e| ModelError::Checkpoint(e.to_string()))?
                .clone();
            self.params
                .set(&name, t)
                .map_err(|e| ModelError::Checkpoint(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}

fn flat(t: &Tape, v: Option<Var>) -> Option<Vec<f64>> {
    v.map(|v| t.value(v).data().to_vec())
}

pub fn output_values(t: &Tape, v: &ForwardVars) -> ModelOutput {
    let cat = |a: Option<Var>, b: Option<Var>| -> Option<Tensor> {
        let rows: Vec<Vec<f64>> = [a, b]
            .into_iter()
            .flatten()
            .flat_map(|v| {
                let x = t.value(v);
                (0..x.rows()).map(|r| x.row(r).to_vec()).collect::<Vec<_>>()
            })
            .collect();
        (!rows.is_empty()).then(|| Tensor::from_rows(&rows).expect("equal row widths"))
    };
    ModelOutput {
        e_s: cat(v.e_s_depth, v.e_s_sem),
        e_l: cat(v.e_l_depth, v.e_l_sem),
        e_a: v.e_a.map(|e| t.value(e).clone()),
        plan_progress_logits: flat(t, v.progress_logits),
        plan_action_logits: flat(t, v.action_logits),
        pred_short_depth: flat(t, v.short.depth),
        pred_short_sem: flat(t, v.short.sem),
        pred_long_depth: flat(t, v.long.depth),
        pred_long_sem: flat(t, v.long.sem),
        waypoints: v.waypoints.map(|w| {
            t.value(w)
                .data()
                .chunks_exact(5)
                .map(|r| {
                    let n = r[2].hypot(r[3]);
                    [r[0], r[1], r[2] / n, r[3] / n, r[4]]
                })
                .collect()
        }),
    }
}
