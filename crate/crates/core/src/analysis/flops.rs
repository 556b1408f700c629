//! Closed-form cost model.
//!
//! Every matrix product, convolution tap and attention score counts one
//! multiply-accumulate (MAC) and a MAC is two FLOPs. Elementwise work is
//! charged per element with the constants below; scaling layers, the
//! residual weight and the `1/sqrt(d)` score scale are free because they
//! fold into an adjacent linear map, and biases are fused into their MACs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BlockStructure, FrameRate, ModelConfig};
use crate::nn::{ConvActivation, ConvModule, NormScheme, PositionalEncoding, SubsamplingKind};

pub const COST_LAYER_NORM: u64 = 5;
pub const COST_BATCH_NORM: u64 = 2;
pub const COST_SWISH: u64 = 4;
pub const COST_GLU: u64 = 4;
pub const COST_SOFTMAX: u64 = 5;
pub const COST_ADD: u64 = 1;

pub const REPORT_SCHEMA: &str = "squeezeformer.flops";
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopsEntry {
    pub path: String,
    pub macs: u64,
    pub flops: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FrameCounts {
    /// Frames at the input hop.
    pub input: usize,
    /// After the first stride-2 convolution.
    pub half: usize,
    /// Encoder rate after subsampling.
    pub encoder: usize,
    /// Inside the U-Net span.
    pub downsampled: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopsReport {
    pub schema: &'static str,
    pub version: u32,
    pub input_seconds: f64,
    pub frame_ms: f64,
    pub frames: FrameCounts,
    pub entries: Vec<FlopsEntry>,
    pub total_macs: u64,
    pub total_flops: u64,
}

impl FlopsReport {
    pub fn gflops(&self) -> f64 {
        self.total_flops as f64 / 1e9
    }

    /// FLOPs of every entry whose path starts with `prefix`.
    pub fn flops_with_prefix(&self, prefix: &str) -> u64 {
        self.entries.iter().filter(|e| e.path.starts_with(prefix)).map(|e| e.flops).sum()
    }

    /// FLOPs of every entry whose path ends with `suffix`.
    pub fn flops_with_suffix(&self, suffix: &str) -> u64 {
        self.entries.iter().filter(|e| e.path.ends_with(suffix)).map(|e| e.flops).sum()
    }

    /// Tab-separated records, one entry per line, after a commented header.
    pub fn to_tsv(&self) -> String {
        let mut s = format!(
            "# {REPORT_SCHEMA} v{REPORT_VERSION}\tseconds={}\tframe_ms={}\tframes={}/{}/{}/{}\n#path\tmacs\tflops\n",
            self.input_seconds, self.frame_ms, self.frames.input, self.frames.half, self.frames.encoder, self.frames.downsampled
        );
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.path, e.macs, e.flops));
        }
        s.push_str(&format!("total\t{}\t{}\n", self.total_macs, self.total_flops));
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Builder {
    entries: Vec<FlopsEntry>,
}

impl Builder {
    fn push(&mut self, path: String, macs: u64, elementwise: u64) {
        self.entries.push(FlopsEntry {
            path,
            macs,
            flops: 2 * macs + elementwise,
        });
    }
}

/// Norm and residual work around one module of width `c` over `t` frames.
/// Every scheme runs exactly one layer norm per module.
fn wrapper_cost(t: u64, c: u64) -> u64 {
    (COST_LAYER_NORM + COST_ADD) * t * c
}

fn block_cost(b: &mut Builder, cfg: &ModelConfig, prefix: &str, t: u64) {
    let c = cfg.dim as u64;
    let h = cfg.heads as u64;
    let e = cfg.ffn_expansion as u64 * c;
    let wrap = wrapper_cost(t, c);

    let ffn = |b: &mut Builder, name: &str| {
        b.push(format!("{prefix}.{name}"), 2 * t * c * e, COST_SWISH * t * e + wrap);
    };

    let mha = |b: &mut Builder| {
        let (pos_rows, pos_ew) = match cfg.positional {
            PositionalEncoding::Relative => (2 * t - 1, 2 * t * c),
            PositionalEncoding::Absolute => (0, t * c),
        };
        b.push(format!("{prefix}.mha"), 4 * t * c * c + pos_rows * c * c, pos_ew + wrap);
        let score_terms = match cfg.positional {
            PositionalEncoding::Relative => 3,
            PositionalEncoding::Absolute => 2,
        };
        let score_adds = if cfg.positional == PositionalEncoding::Relative { h * t * t } else { 0 };
        b.push(format!("{prefix}.mha.scores"), score_terms * t * t * c, score_adds + COST_SOFTMAX * h * t * t);
    };

    let conv = |b: &mut Builder| {
        let inner = ConvModule::inner_width(cfg.dim, cfg.conv_activation) as u64;
        let k = cfg.conv_kernel as u64;
        let act = match cfg.conv_activation {
            ConvActivation::Glu => COST_GLU * t * c,
            ConvActivation::Swish => COST_SWISH * t * 2 * c,
            ConvActivation::None => 0,
        };
        let macs = t * c * 2 * c + t * k * inner + t * inner * c;
        b.push(format!("{prefix}.conv"), macs, act + (COST_BATCH_NORM + COST_SWISH) * t * inner + wrap);
    };

    match cfg.block_structure {
        BlockStructure::Macaron => {
            ffn(b, "ffn1");
            mha(b);
        }
        BlockStructure::MfCf => {
            mha(b);
            ffn(b, "ffn1");
        }
    }
    conv(b);
    ffn(b, "ffn2");
    if cfg.norm_scheme == NormScheme::PrePost {
        b.push(format!("{prefix}.final_norm"), 0, COST_LAYER_NORM * t * c);
    }
}

/// Analytic cost of one forward pass over `input_seconds` of audio at a
/// `frame_ms` hop.
pub fn count_flops(cfg: &ModelConfig, input_seconds: f64, frame_ms: f64) -> Result<FlopsReport> {
    if !(input_seconds > 0.0 && input_seconds.is_finite()) {
        return Err(Error::invalid("count_flops", format!("input duration must be positive, got {input_seconds}")));
    }
    if !(frame_ms > 0.0 && frame_ms.is_finite()) {
        return Err(Error::invalid("count_flops", format!("frame hop must be positive, got {frame_ms}")));
    }
    let t0 = ((input_seconds * 1000.0 / frame_ms).round() as usize).max(1);
    count_flops_frames(cfg, t0, input_seconds, frame_ms)
}

/// Same as [`count_flops`] for an exact input frame count.
pub fn count_flops_frames(cfg: &ModelConfig, t0: usize, input_seconds: f64, frame_ms: f64) -> Result<FlopsReport> {
    cfg.validate()?;
    let t1 = t0.div_ceil(2);
    let t = t1.div_ceil(2);
    let t2 = t.div_ceil(2);
    let f = cfg.input_feature_dim;
    let (f1, f2) = (f.div_ceil(2), f.div_ceil(2).div_ceil(2));
    let c = cfg.dim as u64;
    let (t1u, tu, t2u, f1u, f2u) = (t1 as u64, t as u64, t2 as u64, f1 as u64, f2 as u64);
    let mut b = Builder { entries: Vec::new() };

    b.push("subsampling.conv1".into(), t1u * f1u * 9 * c, COST_SWISH * t1u * f1u * c);
    let conv2 = match cfg.subsampling {
        SubsamplingKind::Vanilla => tu * f2u * 9 * c * c,
        SubsamplingKind::DepthwiseSeparable => tu * f2u * 9 * c + tu * f2u * c * c,
    };
    b.push("subsampling.conv2".into(), conv2, COST_SWISH * tu * f2u * c);
    b.push("subsampling.out".into(), tu * f2u * c * c, 0);

    let d = cfg.downsample_block();
    let rates = cfg.block_rates();
    for (i, rate) in rates.iter().enumerate() {
        if cfg.unet && i == d && i + 1 < cfg.num_blocks {
            b.push("unet.down".into(), t2u * 3 * c + t2u * c * c, 0);
        }
        if cfg.unet && i + 1 == cfg.num_blocks && rates.contains(&FrameRate::Ms80) {
            b.push("unet.up".into(), tu * c * c, COST_ADD * tu * c);
        }
        let frames = if *rate == FrameRate::Ms80 { t2u } else { tu };
        block_cost(&mut b, cfg, &format!("blocks.{i}"), frames);
    }
    b.push("head".into(), tu * c * (cfg.vocab_size as u64 + 1), 0);

    let total_macs = b.entries.iter().map(|e| e.macs).sum();
    let total_flops = b.entries.iter().map(|e| e.flops).sum();
    Ok(FlopsReport {
        schema: REPORT_SCHEMA,
        version: REPORT_VERSION,
        input_seconds,
        frame_ms,
        frames: FrameCounts {
            input: t0,
            half: t1,
            encoder: t,
            downsampled: if cfg.unet { t2 } else { t },
        },
        entries: b.entries,
        total_macs,
        total_flops,
    })
}

/// FLOPs of the blocks that run inside the U-Net span of `unet_cfg`
/// (blocks `D..N-1`), computed once without and once with the U-Net.
/// Returns `(without, with)`.
pub fn span_block_flops(unet_cfg: &ModelConfig, input_seconds: f64) -> Result<(u64, u64)> {
    let base = ModelConfig {
        unet: false,
        ..unet_cfg.clone()
    };
    let with = count_flops(unet_cfg, input_seconds, 10.0)?;
    let without = count_flops(&base, input_seconds, 10.0)?;
    let rates = unet_cfg.block_rates();
    let sum = |r: &FlopsReport| -> u64 {
        rates
            .iter()
            .enumerate()
            .filter(|(_, &rate)| rate == FrameRate::Ms80)
            .map(|(i, _)| r.flops_with_prefix(&format!("blocks.{i}.")))
            .sum()
    };
    Ok((sum(&without), sum(&with)))
}
