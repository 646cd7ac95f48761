//! Network configuration and the grid of fusion strategies.

use std::fmt;
use std::str::FromStr;

use crate::error::{config, ModelError, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum AuxSource {
    None,
    TlFeatures,
    SsFeatures,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum AuxStage {
    Early,
    Late,
    All,
    Block2,
    Block3,
}

/// Where semantic features come from when `aux_source` is `SsFeatures`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum SsProvider {
    /// One-hot ground-truth class maps.
    GroundTruth,
    /// A pre-trained segmenter's class probabilities.
    Learned,
}

macro_rules! names {
    ($ty:ty { $($variant:ident => $name:literal),* $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $(Self::$variant => $name),* }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $ty {
            type Err = ModelError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(Self::$variant),)*
                    _ => config(format!(
                        "unknown {} `{s}` (expected one of: {})",
                        stringify!($ty),
                        [$($name),*].join(", ")
                    )),
                }
            }
        }
    };
}

names!(AuxSource { None => "none", TlFeatures => "tl", SsFeatures => "ss" });
names!(AuxStage { Early => "early", Late => "late", All => "all", Block2 => "block2", Block3 => "block3" });
names!(SsProvider { GroundTruth => "ground_truth", Learned => "learned" });

impl AuxStage {
    /// Whether auxiliary tokens enter fusion block `k` (0-based).
    pub fn injects(self, k: usize) -> bool {
        match self {
            Self::Early => k == 0,
            Self::Late => k == 3,
            Self::All => k < 4,
            Self::Block2 => k == 1,
            Self::Block3 => k == 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub aux_source: AuxSource,
    pub aux_stage: AuxStage,
    pub ss_provider: SsProvider,
    pub head_tl: bool,
    pub head_ss: bool,
    pub block_dims: [usize; 4],
    pub heads: usize,
    /// Side of the square token grid per modality.
    pub token_grid: usize,
    pub waypoints: usize,
    pub gru_hidden: usize,
    /// Residual units per encoder stage.
    pub depth: usize,
    /// Side of the square network input; sensor frames are average-pooled
    /// down to it.
    pub input_size: usize,
    /// Hidden width of the transformer feed-forward as a multiple of the
    /// block dimension.
    pub ff_mult: usize,
    pub semantic_classes: usize,
    /// Channels of the traffic-light feature provider.
    pub tl_channels: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl FusionConfig {
    /// Channel schedule and token grid of the reference architecture.
    pub fn full() -> Self {
        Self {
            aux_source: AuxSource::None,
            aux_stage: AuxStage::Early,
            ss_provider: SsProvider::GroundTruth,
            head_tl: false,
            head_ss: false,
            block_dims: [64, 128, 256, 512],
            heads: 4,
            token_grid: 8,
            waypoints: 4,
            gru_hidden: 64,
            depth: 2,
            input_size: 256,
            ff_mult: 4,
            semantic_classes: cogfuse_sim::render::SEMANTIC_CLASSES,
            tl_channels: 16,
        }
    }

    /// Single-core training scale.
    pub fn desk() -> Self {
        Self {
            block_dims: [16, 32, 48, 64],
            token_grid: 2,
            depth: 1,
            input_size: 64,
            ff_mult: 2,
            tl_channels: 8,
            ..Self::full()
        }
    }

    /// Smallest shape-complete network, used for gradient checks and
    /// overfitting tests.
    pub fn tiny() -> Self {
        Self {
            block_dims: [4, 8, 12, 16],
            heads: 1,
            token_grid: 2,
            gru_hidden: 8,
            depth: 1,
            input_size: 64,
            ff_mult: 2,
            tl_channels: 4,
            ..Self::full()
        }
    }

    /// Spatial side of encoder stage `k` (0-based).
    pub fn stage_size(&self, k: usize) -> usize {
        self.input_size >> (k + 2)
    }

    pub fn tokens_per_modality(&self) -> usize {
        self.token_grid * self.token_grid
    }

    pub fn aux_injected(&self, k: usize) -> bool {
        self.aux_source != AuxSource::None && self.aux_stage.injects(k)
    }

    /// Channels of the auxiliary feature map.
    pub fn aux_channels(&self) -> usize {
        match self.aux_source {
            AuxSource::None => 0,
            AuxSource::TlFeatures => self.tl_channels,
            AuxSource::SsFeatures => self.semantic_classes,
        }
    }

    /// Side of the square maps fed to the optional auxiliary providers.
    pub fn aux_input_size(&self) -> usize {
        self.input_size / 2
    }

    /// Size of the final fused embedding.
    pub fn embedding(&self) -> usize {
        self.block_dims[3]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.block_dims;
        if d[0] == 0 || d.windows(2).any(|w| w[0] >= w[1]) {
            return config(format!("block_dims must be strictly increasing and positive, got {d:?}"));
        }
        if self.heads == 0 || d.iter().any(|&x| x % self.heads != 0) {
            return config(format!("every block dimension must be divisible by heads={}", self.heads));
        }
        if self.token_grid == 0 || self.waypoints == 0 || self.gru_hidden == 0 || self.ff_mult == 0 {
            return config("token_grid, waypoints, gru_hidden and ff_mult must be positive");
        }
        if self.input_size == 0 || 256 % self.input_size != 0 {
            return config(format!("input_size must divide 256, got {}", self.input_size));
        }
        let last = self.stage_size(3);
        if last < self.token_grid || last % self.token_grid != 0 {
            return config(format!(
                "input_size {} gives a {last}×{last} final stage, which does not tile into a {}×{} token grid",
                self.input_size, self.token_grid, self.token_grid
            ));
        }
        if self.aux_input_size() % self.token_grid != 0 {
            return config(format!(
                "auxiliary maps of side {} do not tile into a {}×{} token grid",
                self.aux_input_size(),
                self.token_grid,
                self.token_grid
            ));
        }
        if self.head_ss && self.semantic_classes < 2 {
            return config("the segmentation head needs at least two classes");
        }
        if self.aux_source == AuxSource::TlFeatures && self.tl_channels == 0 {
            return config("tl_channels must be positive for traffic-light features");
        }
        Ok(())
    }

    /// Same architecture with another fusion strategy.
    pub fn with_strategy(&self, s: &Strategy) -> Self {
        Self {
            aux_source: s.aux_source,
            aux_stage: s.aux_stage,
            head_tl: s.head_tl,
            head_ss: s.head_ss,
            ..self.clone()
        }
    }
}

/// One fusion strategy: auxiliary features and heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Strategy {
    pub name: &'static str,
    pub aux_source: AuxSource,
    pub aux_stage: AuxStage,
    pub head_tl: bool,
    pub head_ss: bool,
}

const fn strategy(name: &'static str, aux_source: AuxSource, aux_stage: AuxStage, head_tl: bool, head_ss: bool) -> Strategy {
    Strategy {
        name,
        aux_source,
        aux_stage,
        head_tl,
        head_ss,
    }
}

/// The baseline, every feature-fusion and auxiliary-head variant, the
/// block-2/3 injection ablations, and the combined model.
pub const STRATEGIES: [Strategy; 11] = {
    use AuxSource::*;
    use AuxStage::*;
    [
        strategy("baseline", None, Early, false, false),
        strategy("early_tl", TlFeatures, Early, false, false),
        strategy("late_tl", TlFeatures, Late, false, false),
        strategy("early_ss", SsFeatures, Early, false, false),
        strategy("all_ss", SsFeatures, All, false, false),
        strategy("aux_head_tl", None, Early, true, false),
        strategy("aux_head_ss", None, Early, false, true),
        strategy("aux_head_tl_ss", None, Early, true, true),
        strategy("block2_ss", SsFeatures, Block2, false, false),
        strategy("block3_ss", SsFeatures, Block3, false, false),
        strategy("early_ss_aux_head_tl", SsFeatures, Early, true, false),
    ]
};

pub fn strategy_by_name(name: &str) -> Option<&'static Strategy> {
    STRATEGIES.iter().find(|s| s.name == name)
}
