use std::rc::Rc;

use rand::Rng;

use crate::numcore::{ParamId, ParamStore, Tape, TensorError, Var};

type R<T> = Result<T, TensorError>;

/// Affine map `x·W + b` with `W: in × out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<G: Rng>(ps: &mut ParamStore, name: &str, din: usize, dout: usize, gain: f64, rng: &mut G) -> Self {
        let std = gain / (din as f64).sqrt();
        Linear {
            w: ps.add_normal(format!("{name}.w"), &[din, dout], std, rng),
            b: ps.add_filled(format!("{name}.b"), &[1, dout], 0.0),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> R<Var> {
        let w = t.param(self.w);
        let b = t.param(self.b);
        let y = t.matmul(x, w)?;
        t.add_row(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub g: ParamId,
    pub b: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            g: ps.add_filled(format!("{name}.g"), &[1, d], 1.0),
            b: ps.add_filled(format!("{name}.b"), &[1, d], 0.0),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> R<Var> {
        let g = t.param(self.g);
        let b = t.param(self.b);
        t.layer_norm(x, g, b)
    }
}

/// Multi-head attention with separate query and key/value sources.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new<G: Rng>(ps: &mut ParamStore, name: &str, d: usize, heads: usize, out_gain: f64, rng: &mut G) -> Self {
        Attention {
            q: Linear::new(ps, &format!("{name}.q"), d, d, 1.0, rng),
            k: Linear::new(ps, &format!("{name}.k"), d, d, 1.0, rng),
            v: Linear::new(ps, &format!("{name}.v"), d, d, 1.0, rng),
            o: Linear::new(ps, &format!("{name}.o"), d, d, out_gain, rng),
            heads,
        }
    }

    /// `xq: n × d` attends over `xkv: m × d`; `mask` is `n × m` additive.
    pub fn forward(&self, t: &mut Tape, xq: Var, xkv: Var, mask: &Rc<[f64]>) -> R<Var> {
        let d = t.shape(xq)[1];
        let dh = d / self.heads;
        let q = self.q.forward(t, xq)?;
        let k = self.k.forward(t, xkv)?;
        let v = self.v.forward(t, xkv)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (t.slice_cols(q, a, b)?, t.slice_cols(k, a, b)?, t.slice_cols(v, a, b)?)
            };
            let s = t.matmul_nt(qh, kh)?;
            let s = t.scale(s, scale)?;
            let p = t.softmax_masked(s, mask)?;
            outs.push(t.matmul(p, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { t.concat_cols(&outs)? };
        self.o.forward(t, cat)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<G: Rng>(ps: &mut ParamStore, name: &str, d: usize, hidden: usize, out_gain: f64, rng: &mut G) -> Self {
        FeedForward {
            up: Linear::new(ps, &format!("{name}.up"), d, hidden, 1.0, rng),
            down: Linear::new(ps, &format!("{name}.down"), hidden, d, out_gain, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> R<Var> {
        let h = self.up.forward(t, x)?;
        let h = t.gelu(h)?;
        self.down.forward(t, h)
    }
}

/// Pre-norm self-attention + feed-forward block.
#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl Block {
    pub fn new<G: Rng>(ps: &mut ParamStore, name: &str, d: usize, heads: usize, ffn_mult: usize, depth: usize, rng: &mut G) -> Self {
        let gain = 1.0 / (2.0 * depth as f64).sqrt();
        Block {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d),
            attn: Attention::new(ps, &format!("{name}.attn"), d, heads, gain, rng),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d),
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), d, ffn_mult * d, gain, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var, mask: &Rc<[f64]>) -> R<Var> {
        let h = self.ln1.forward(t, x)?;
        let a = self.attn.forward(t, h, h, mask)?;
        let x = t.add(x, a)?;
        let h = self.ln2.forward(t, x)?;
        let f = self.ffn.forward(t, h)?;
        t.add(x, f)
    }
}

/// Pre-norm block with self-attention, cross-attention to a memory, and
/// feed-forward.
#[derive(Clone, Copy, Debug)]
pub struct DecoderBlock {
    pub ln_self: LayerNorm,
    pub self_attn: Attention,
    pub ln_cross: LayerNorm,
    pub ln_mem: LayerNorm,
    pub cross_attn: Attention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderBlock {
    pub fn new<G: Rng>(ps: &mut ParamStore, name: &str, d: usize, heads: usize, ffn_mult: usize, depth: usize, rng: &mut G) -> Self {
        let gain = 1.0 / (3.0 * depth as f64).sqrt();
        DecoderBlock {
            ln_self: LayerNorm::new(ps, &format!("{name}.ln_self"), d),
            self_attn: Attention::new(ps, &format!("{name}.self"), d, heads, gain, rng),
            ln_cross: LayerNorm::new(ps, &format!("{name}.ln_cross"), d),
            ln_mem: LayerNorm::new(ps, &format!("{name}.ln_mem"), d),
            cross_attn: Attention::new(ps, &format!("{name}.cross"), d, heads, gain, rng),
            ln_ffn: LayerNorm::new(ps, &format!("{name}.ln_ffn"), d),
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), d, ffn_mult * d, gain, rng),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var, mem: Var, self_mask: &Rc<[f64]>, cross_mask: &Rc<[f64]>) -> R<Var> {
        let h = self.ln_self.forward(t, x)?;
        let a = self.self_attn.forward(t, h, h, self_mask)?;
        let x = t.add(x, a)?;
        let h = self.ln_cross.forward(t, x)?;
        let m = self.ln_mem.forward(t, mem)?;
        let c = self.cross_attn.forward(t, h, m, cross_mask)?;
        let x = t.add(x, c)?;
        let h = self.ln_ffn.forward(t, x)?;
        let f = self.ffn.forward(t, h)?;
        t.add(x, f)
    }
}

/// All-visible additive mask.
pub fn open_mask(n: usize, m: usize) -> Rc<[f64]> {
    vec![0.0; n * m].into()
}
