use std::rc::Rc;

use super::{ModelConfig, ModelError, QueryGroups};
use crate::numcore::MASK_NEG;
use crate::simworld::PAD;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GroupKind {
    Instr,
    /// Observation tokens of history frame `i` (oldest first).
    Obs(usize),
    Pose(usize),
    QsDepth,
    QsSem,
    QlDepth,
    QlSem,
    Qa,
}

impl GroupKind {
    pub fn is_context(self) -> bool {
        matches!(self, Self::Instr | Self::Obs(_) | Self::Pose(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub kind: GroupKind,
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }
}

/// Ordered token groups: instruction, per-frame observation and pose blocks,
/// then the query groups. Absent query groups keep zero-length spans.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenLayout {
    pub spans: Vec<Span>,
    pub total: usize,
    pub h_prime: usize,
    /// Index into `spans` for every token.
    group_of: Vec<usize>,
}

impl TokenLayout {
    pub fn group_of(&self, token: usize) -> GroupKind {
        self.spans[self.group_of[token]].kind
    }

    pub fn span(&self, kind: GroupKind) -> Option<Span> {
        self.spans.iter().copied().find(|s| s.kind == kind)
    }

    /// Number of leading context tokens.
    pub fn context_len(&self) -> usize {
        self.spans
            .iter()
            .filter(|s| s.kind.is_context())
            .map(|s| s.len)
            .sum()
    }
}

pub fn build_token_layout(
    cfg: &ModelConfig,
    h_prime: usize,
    groups: QueryGroups,
) -> Result<TokenLayout, ModelError> {
    if h_prime == 0 || h_prime > cfg.h_max {
        return Err(ModelError::Layout(format!(
            "history length {h_prime} outside 1..={}",
            cfg.h_max
        )));
    }
    let mut spans = Vec::with_capacity(2 + 2 * h_prime + 5);
    let mut at = 0;
    let mut push = |kind, len| {
        spans.push(Span { kind, start: at, len });
        at += len;
    };
    push(GroupKind::Instr, cfg.instr_len);
    for i in 0..h_prime {
        push(GroupKind::Obs(i), cfg.n_patches());
        push(GroupKind::Pose(i), 1);
    }
    let q = cfg.q_tokens;
    push(GroupKind::QsDepth, if groups.qs_depth { q } else { 0 });
    push(GroupKind::QsSem, if groups.qs_sem { q } else { 0 });
    push(GroupKind::QlDepth, if groups.ql_depth { q } else { 0 });
    push(GroupKind::QlSem, if groups.ql_sem { q } else { 0 });
    push(GroupKind::Qa, usize::from(groups.qa));
    let total = at;
    let mut group_of = vec![0; total];
    for (g, s) in spans.iter().enumerate() {
        group_of[s.range()].fill(g);
    }
    Ok(TokenLayout {
        spans,
        total,
        h_prime,
        group_of,
    })
}

/// Instruction ids padded or truncated to the fixed span.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedInstruction {
    pub ids: Vec<usize>,
    pub truncated: bool,
}

pub fn prepare_instruction(tokens: &[u32], span: usize, vocab_size: usize) -> PreparedInstruction {
    let mut ids: Vec<usize> = tokens
        .iter()
        .take(span)
        .map(|&t| (t as usize).min(vocab_size - 1))
        .collect();
    ids.resize(span, PAD as usize);
    PreparedInstruction {
        ids,
        truncated: tokens.len() > span,
    }
}

fn visible(q: GroupKind, kv: GroupKind, q_tok: usize, kv_tok: usize) -> bool {
    use GroupKind::*;
    match q {
        _ if q.is_context() => kv.is_context() && kv_tok <= q_tok,
        QsDepth => kv.is_context() || kv == QsDepth,
        QsSem => kv.is_context() || kv == QsSem,
        QlDepth => kv.is_context() || matches!(kv, QsDepth | QlDepth),
        QlSem => kv.is_context() || matches!(kv, QsSem | QlSem),
        Qa => true,
        _ => false,
    }
}

/// Additive attention mask (`total × total`, row = query): 0 where visible,
/// `MASK_NEG` elsewhere.
pub fn build_structured_mask(layout: &TokenLayout) -> Rc<[f64]> {
    let n = layout.total;
    let mut m = vec![MASK_NEG; n * n];
    for qs in layout.spans.iter().filter(|s| s.len > 0) {
        for ks in layout.spans.iter().filter(|s| s.len > 0) {
            for q in qs.range() {
                let row = &mut m[q * n..(q + 1) * n];
                for kv in ks.range() {
                    if visible(qs.kind, ks.kind, q, kv) {
                        row[kv] = 0.0;
                    }
                }
            }
        }
    }
    m.into()
}
