use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvActivation, NormScheme, PositionalEncoding, SubsamplingKind};

/// Order of the four modules inside one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockStructure {
    /// Half-step feed-forward, attention, convolution, half-step feed-forward.
    #[serde(rename = "fmcf-macaron")]
    Macaron,
    /// Attention, feed-forward, convolution, feed-forward, all full residuals.
    #[serde(rename = "mf-cf")]
    MfCf,
}

impl BlockStructure {
    /// Residual weight of the feed-forward modules.
    pub fn ffn_weight(self) -> f64 {
        match self {
            BlockStructure::Macaron => 0.5,
            BlockStructure::MfCf => 1.0,
        }
    }
}

fn default_kernel() -> usize {
    31
}
fn default_expansion() -> usize {
    4
}
fn default_feat() -> usize {
    80
}
fn default_vocab() -> usize {
    128
}
fn default_dropout() -> f64 {
    0.1
}
fn default_relative() -> PositionalEncoding {
    PositionalEncoding::Relative
}

/// Full architectural description of an encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_blocks: usize,
    pub dim: usize,
    pub heads: usize,
    #[serde(default = "default_kernel")]
    pub conv_kernel: usize,
    #[serde(default = "default_expansion")]
    pub ffn_expansion: usize,
    pub block_structure: BlockStructure,
    pub norm_scheme: NormScheme,
    pub conv_activation: ConvActivation,
    pub unet: bool,
    /// Number of blocks run before the U-Net downsampler. Defaults to
    /// `round(7·num_blocks/16)`.
    #[serde(default)]
    pub downsample_after: Option<usize>,
    pub subsampling: SubsamplingKind,
    #[serde(default = "default_relative")]
    pub positional: PositionalEncoding,
    #[serde(default = "default_feat")]
    pub input_feature_dim: usize,
    /// Number of output tokens, not counting the CTC blank.
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_dropout")]
    pub attention_dropout: f64,
}

/// Proportional placement of the U-Net downsampler: 7 of 16 blocks.
pub fn default_downsample_after(num_blocks: usize) -> usize {
    ((7 * num_blocks) as f64 / 16.0).round() as usize
}

/// Frame period of a block's input relative to the subsampled 40 ms rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameRate {
    Ms40,
    Ms80,
}

impl ModelConfig {
    /// Conformer-style toggles at the given size.
    pub fn conformer(num_blocks: usize, dim: usize, heads: usize) -> Self {
        Self {
            num_blocks,
            dim,
            heads,
            conv_kernel: default_kernel(),
            ffn_expansion: default_expansion(),
            block_structure: BlockStructure::Macaron,
            norm_scheme: NormScheme::PrePost,
            conv_activation: ConvActivation::Glu,
            unet: false,
            downsample_after: None,
            subsampling: SubsamplingKind::Vanilla,
            positional: PositionalEncoding::Relative,
            input_feature_dim: default_feat(),
            vocab_size: default_vocab(),
            dropout: default_dropout(),
            attention_dropout: default_dropout(),
        }
    }

    /// Squeezeformer toggles at the given size.
    pub fn squeezeformer(num_blocks: usize, dim: usize, heads: usize) -> Self {
        Self {
            block_structure: BlockStructure::MfCf,
            norm_scheme: NormScheme::ScaledPost,
            conv_activation: ConvActivation::Swish,
            unet: true,
            subsampling: SubsamplingKind::DepthwiseSeparable,
            ..Self::conformer(num_blocks, dim, heads)
        }
    }

    pub fn downsample_block(&self) -> usize {
        self.downsample_after.unwrap_or_else(|| default_downsample_after(self.num_blocks))
    }

    /// Rate annotation of every block, in order.
    pub fn block_rates(&self) -> Vec<FrameRate> {
        let d = self.downsample_block();
        (0..self.num_blocks)
            .map(|i| {
                if self.unet && i >= d && i + 1 < self.num_blocks {
                    FrameRate::Ms80
                } else {
                    FrameRate::Ms40
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |field, reason: String| Err(Error::Config { field, reason });
        if self.num_blocks == 0 {
            return err("num_blocks", "must be at least 1".into());
        }
        if self.dim == 0 {
            return err("dim", "must be positive".into());
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return err("heads", format!("dim {} is not divisible by {} heads", self.dim, self.heads));
        }
        if self.conv_kernel % 2 == 0 {
            return err("conv_kernel", format!("{} is even; the depthwise kernel must be odd", self.conv_kernel));
        }
        if self.ffn_expansion == 0 {
            return err("ffn_expansion", "must be positive".into());
        }
        if self.unet {
            let d = self.downsample_block();
            if d < 1 || d >= self.num_blocks {
                return err(
                    "downsample_after",
                    format!("{d} is outside 1..{} for {} blocks", self.num_blocks, self.num_blocks),
                );
            }
        }
        if self.input_feature_dim == 0 {
            return err("input_feature_dim", "must be positive".into());
        }
        if self.vocab_size == 0 {
            return err("vocab_size", "must be positive".into());
        }
        for (field, rate) in [("dropout", self.dropout), ("attention_dropout", self.attention_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return err(field, format!("{rate} is outside [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Names of the built-in presets, in table order.
pub const PRESET_NAMES: [&str; 11] = [
    "conformer-ctc-s",
    "squeezeformer-xs",
    "squeezeformer-s",
    "conformer-ctc-m",
    "squeezeformer-sm",
    "squeezeformer-m",
    "conformer-ctc-l",
    "squeezeformer-ml",
    "squeezeformer-l",
    "tiny",
    "tiny-conformer",
];

/// Small configuration for desk-scale training.
pub fn tiny(squeeze: bool) -> ModelConfig {
    let base = if squeeze {
        ModelConfig::squeezeformer(2, 32, 4)
    } else {
        ModelConfig::conformer(2, 32, 4)
    };
    ModelConfig {
        conv_kernel: 3,
        input_feature_dim: 16,
        vocab_size: 8,
        dropout: 0.0,
        attention_dropout: 0.0,
        ..base
    }
}

pub fn preset(name: &str) -> Result<ModelConfig> {
    let cfg = match name {
        "conformer-ctc-s" => ModelConfig::conformer(16, 144, 4),
        "squeezeformer-xs" => ModelConfig::squeezeformer(16, 144, 4),
        "squeezeformer-s" => ModelConfig::squeezeformer(18, 196, 4),
        "conformer-ctc-m" => ModelConfig::conformer(16, 256, 4),
        "squeezeformer-sm" => ModelConfig::squeezeformer(16, 256, 4),
        "squeezeformer-m" => ModelConfig::squeezeformer(20, 324, 4),
        "conformer-ctc-l" => ModelConfig::conformer(18, 512, 8),
        "squeezeformer-ml" => ModelConfig::squeezeformer(18, 512, 8),
        "squeezeformer-l" => ModelConfig::squeezeformer(22, 640, 8),
        "tiny" => tiny(true),
        "tiny-conformer" => tiny(false),
        other => {
            return Err(Error::Config {
                field: "preset",
                reason: format!("unknown preset {other:?}; expected one of {}", PRESET_NAMES.join(", ")),
            })
        }
    };
    Ok(cfg)
}
