use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Rays per observation.
    #[serde(rename = "R")]
    pub n_rays: usize,
    /// Semantic feature width.
    #[serde(rename = "F")]
    pub feat_dim: usize,
    /// Semantic classes.
    #[serde(rename = "C")]
    pub n_classes: usize,
    /// Rays per observation token.
    pub obs_patch: usize,
    /// Tokens per dream-query group.
    pub q_tokens: usize,
    /// Maximum history frames.
    #[serde(rename = "H_max")]
    pub h_max: usize,
    /// Short prediction horizon in frames.
    pub k: usize,
    /// Predicted waypoints.
    #[serde(rename = "K")]
    pub n_waypoints: usize,
    pub vocab_size: usize,
    /// Fixed instruction span in tokens.
    pub instr_len: usize,
    /// Sub-instructions addressable by the plan head.
    pub max_subinstr: usize,
    pub decoder_layers: usize,
    pub action_tf_layers: usize,
    pub ffn_mult: usize,
    pub action_hidden: usize,
    /// Depths are divided by this before entering the network.
    pub depth_scale: f64,
    /// Initial value of the depth decoder output.
    pub depth_init: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            n_rays: 64,
            feat_dim: 16,
            n_classes: 8,
            obs_patch: 8,
            q_tokens: 8,
            h_max: 8,
            k: 4,
            n_waypoints: 5,
            vocab_size: 64,
            instr_len: 32,
            max_subinstr: 8,
            decoder_layers: 2,
            action_tf_layers: 2,
            ffn_mult: 4,
            action_hidden: 128,
            depth_scale: 5.0,
            depth_init: 3.0,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn n_patches(&self) -> usize {
        self.n_rays / self.obs_patch
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("R", self.n_rays),
            ("F", self.feat_dim),
            ("C", self.n_classes),
            ("obs_patch", self.obs_patch),
            ("H_max", self.h_max),
            ("K", self.n_waypoints),
            ("vocab_size", self.vocab_size),
            ("instr_len", self.instr_len),
            ("max_subinstr", self.max_subinstr),
            ("ffn_mult", self.ffn_mult),
            ("action_hidden", self.action_hidden),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{key} must be positive, got 0")));
            }
        }
        if self.n_rays % self.obs_patch != 0 {
            return Err(ModelError::Config(format!(
                "R={} is not divisible by obs_patch={}",
                self.n_rays, self.obs_patch
            )));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model={} is not divisible by n_heads={}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.depth_scale > 0.0 && self.depth_init > 0.0) {
            return Err(ModelError::Config("depth_scale and depth_init must be positive".into()));
        }
        Ok(())
    }
}

/// Which parts of the model take part in a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub planning: bool,
    pub short: bool,
    pub long: bool,
    pub depth: bool,
    pub sem: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        planning: true,
        short: true,
        long: true,
        depth: true,
        sem: true,
    };

    /// Named variants in table order.
    pub const VARIANTS: [(&'static str, Ablation); 6] = [
        ("full", Self::FULL),
        ("-planning", Ablation { planning: false, ..Self::FULL }),
        ("-long", Ablation { long: false, ..Self::FULL }),
        ("-all", Ablation { planning: false, short: false, long: false, ..Self::FULL }),
        ("-depth", Ablation { depth: false, ..Self::FULL }),
        ("-sem", Ablation { sem: false, ..Self::FULL }),
    ];

    pub fn from_name(name: &str) -> Option<Ablation> {
        Self::VARIANTS.iter().find(|(n, _)| *n == name).map(|(_, a)| *a)
    }

    pub fn name(&self) -> String {
        Self::VARIANTS
            .iter()
            .find(|(_, a)| a == self)
            .map_or_else(|| format!("{self:?}"), |(n, _)| n.to_string())
    }

    pub fn groups(&self) -> QueryGroups {
        QueryGroups {
            qs_depth: self.short && self.depth,
            qs_sem: self.short && self.sem,
            ql_depth: self.long && self.depth,
            ql_sem: self.long && self.sem,
            qa: true,
        }
    }
}

/// Query groups present in a token layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QueryGroups {
    pub qs_depth: bool,
    pub qs_sem: bool,
    pub ql_depth: bool,
    pub ql_sem: bool,
    pub qa: bool,
}

impl QueryGroups {
    pub const ALL: QueryGroups = QueryGroups {
        qs_depth: true,
        qs_sem: true,
        ql_depth: true,
        ql_sem: true,
        qa: true,
    };

    pub const NONE: QueryGroups = QueryGroups {
        qs_depth: false,
        qs_sem: false,
        ql_depth: false,
        ql_sem: false,
        qa: false,
    };
}
