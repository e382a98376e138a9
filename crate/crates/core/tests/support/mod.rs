//! Brute-force attention-visibility reference shared by the model and
//! acceptance tests.

use dualnav_core::model::{build_structured_mask, build_token_layout, ModelConfig, QueryGroups};
use dualnav_core::numcore::MASK_NEG;

/// Group of every token by direct offset arithmetic, independent of the layout
/// type: 0 instr, 1 obs, 2 pose, 3 qs_depth, 4 qs_sem, 5 ql_depth, 6 ql_sem, 7 qa.
fn oracle_groups(instr: usize, patches: usize, h: usize, q: [usize; 4], qa: bool) -> Vec<u8> {
    let mut g = vec![0u8; instr];
    for _ in 0..h {
        g.extend(std::iter::repeat(1).take(patches));
        g.push(2);
    }
    for (i, n) in q.iter().enumerate() {
        g.extend(std::iter::repeat(3 + i as u8).take(*n));
    }
    if qa {
        g.push(7);
    }
    g
}

fn oracle_visible(g: &[u8], q: usize, kv: usize) -> bool {
    let ctx = |x: u8| x <= 2;
    let (a, b) = (g[q], g[kv]);
    let rule1 = ctx(a) && ctx(b) && kv <= q;
    let rule2 = a == 3 && (ctx(b) || b == 3);
    let rule3 = a == 4 && (ctx(b) || b == 4);
    let rule4 = a == 5 && (ctx(b) || b == 3 || b == 5);
    let rule5 = a == 6 && (ctx(b) || b == 4 || b == 6);
    let rule6 = a == 7;
    rule1 || rule2 || rule3 || rule4 || rule5 || rule6
}

/// `(agreeing entries, total entries)` between the built mask and the reference.
pub fn mask_agreement(cfg: &ModelConfig, h: usize, groups: QueryGroups) -> (usize, usize) {
    let layout = build_token_layout(cfg, h, groups).unwrap();
    let mask = build_structured_mask(&layout);
    let q = cfg.q_tokens;
    let sizes = [
        if groups.qs_depth { q } else { 0 },
        if groups.qs_sem { q } else { 0 },
        if groups.ql_depth { q } else { 0 },
        if groups.ql_sem { q } else { 0 },
    ];
    let g = oracle_groups(cfg.instr_len, cfg.n_patches(), h, sizes, groups.qa);
    let n = g.len();
    if layout.total != n || mask.len() != n * n {
        return (0, n * n);
    }
    let mut agree = 0;
    for a in 0..n {
        for b in 0..n {
            let want = if oracle_visible(&g, a, b) { 0.0 } else { MASK_NEG };
            agree += usize::from(mask[a * n + b] == want);
        }
    }
    (agree, n * n)
}

/// Random layout parameters: instruction length, patch size, query count,
/// history length and enabled groups.
pub fn random_layout(rng: &mut impl rand::Rng) -> (ModelConfig, usize, QueryGroups) {
    let obs_patch = rng.gen_range(1..4);
    let cfg = ModelConfig {
        instr_len: rng.gen_range(1..6),
        obs_patch,
        n_rays: obs_patch * rng.gen_range(1..4),
        q_tokens: rng.gen_range(0..4),
        h_max: 4,
        ..ModelConfig::default()
    };
    let groups = QueryGroups {
        qs_depth: rng.gen(),
        qs_sem: rng.gen(),
        ql_depth: rng.gen(),
        ql_sem: rng.gen(),
        qa: rng.gen(),
    };
    let h = rng.gen_range(1..=4);
    (cfg, h, groups)
}

#[allow(dead_code)]
pub fn check_mask_against_oracle(cfg: &ModelConfig, h: usize, groups: QueryGroups) {
    let (agree, total) = mask_agreement(cfg, h, groups);
    assert_eq!(agree, total, "mask disagrees with the reference for {cfg:?} h={h} {groups:?}");
}
