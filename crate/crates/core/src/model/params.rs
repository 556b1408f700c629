use serde::Serialize;

use super::config::ModelConfig;
use crate::nn::{ConvActivation, ConvModule, NormScheme, PositionalEncoding, SubsamplingKind};

/// Analytic parameter count with one entry per module.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    pub entries: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamBreakdown {
    /// Sum of all entries whose path starts with `prefix`.
    pub fn sum_prefix(&self, prefix: &str) -> usize {
        self.entries.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, v)| v).sum()
    }
}

fn linear(d_in: usize, d_out: usize, bias: bool) -> usize {
    d_in * d_out + if bias { d_out } else { 0 }
}

fn residual(scheme: NormScheme, c: usize) -> usize {
    match scheme {
        NormScheme::PrePost | NormScheme::PostOnly => 2 * c,
        NormScheme::ScaledPost => 4 * c,
    }
}

/// Count learnable scalars from the configuration alone.
pub fn count_params(cfg: &ModelConfig) -> ParamBreakdown {
    let c = cfg.dim;
    let k_sub = 3 * 3;
    let f2 = cfg.input_feature_dim.div_ceil(2).div_ceil(2);
    let mut entries = Vec::new();

    let conv1 = k_sub * c + c;
    let conv2 = match cfg.subsampling {
        SubsamplingKind::Vanilla => k_sub * c * c + c,
        SubsamplingKind::DepthwiseSeparable => k_sub * c + c + linear(c, c, true),
    };
    entries.push(("subsampling".to_string(), conv1 + conv2 + linear(f2 * c, c, true)));

    let res = residual(cfg.norm_scheme, c);
    let e = cfg.ffn_expansion * c;
    let ffn = linear(c, e, true) + linear(e, c, true) + res;
    let rel = match cfg.positional {
        PositionalEncoding::Relative => linear(c, c, false) + 2 * c,
        PositionalEncoding::Absolute => 0,
    };
    let mha = 4 * linear(c, c, true) + rel + res;
    let inner = ConvModule::inner_width(c, cfg.conv_activation);
    let conv = linear(c, 2 * c, true) + inner * cfg.conv_kernel + inner + 2 * inner + linear(inner, c, true) + res;
    debug_assert!(cfg.conv_activation != ConvActivation::Glu || inner == c);
    let final_norm = if cfg.norm_scheme == NormScheme::PrePost { 2 * c } else { 0 };
    for i in 0..cfg.num_blocks {
        let p = format!("blocks.{i}");
        entries.push((format!("{p}.ffn1"), ffn));
        entries.push((format!("{p}.mha"), mha));
        entries.push((format!("{p}.conv"), conv));
        entries.push((format!("{p}.ffn2"), ffn));
        if final_norm > 0 {
            entries.push((format!("{p}.final_norm"), final_norm));
        }
    }
    if cfg.unet {
        entries.push(("unet.down".to_string(), 3 * c + c + linear(c, c, true)));
        entries.push(("unet.up".to_string(), linear(c, c, true)));
    }
    entries.push(("head".to_string(), linear(c, cfg.vocab_size + 1, true)));
    let total = entries.iter().map(|(_, v)| v).sum();
    ParamBreakdown { entries, total }
}
