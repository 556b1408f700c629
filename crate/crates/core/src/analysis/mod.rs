//! Analytic cost model, the design-change ladder and the temporal
//! redundancy profiler.

mod flops;
mod redundancy;

pub use flops::{
    count_flops, count_flops_frames, span_block_flops, FlopsEntry, FlopsReport, FrameCounts, COST_ADD, COST_BATCH_NORM,
    COST_GLU, COST_LAYER_NORM, COST_SOFTMAX, COST_SWISH, REPORT_SCHEMA, REPORT_VERSION,
};
pub use redundancy::{random_features, redundancy_profile, RedundancyProfile};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{count_params, BlockStructure, ModelConfig};
use crate::nn::{ConvActivation, NormScheme, SubsamplingKind};

/// Duration used for every headline FLOPs figure.
pub const REFERENCE_SECONDS: f64 = 30.0;

/// Blocks, width and heads of the Conformer that starts each ladder.
pub fn ladder_base(size: &str) -> Result<(usize, usize, usize)> {
    match size {
        "s" => Ok((16, 144, 4)),
        "m" => Ok((16, 256, 4)),
        "l" => Ok((18, 512, 8)),
        _ => Err(Error::Config {
            field: "size",
            reason: format!("unknown ladder size {size:?}, expected s, m or l"),
        }),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LadderRow {
    pub change: &'static str,
    pub params: usize,
    pub gflops: f64,
    #[serde(skip)]
    pub config: ModelConfig,
}

/// The six cumulative design states from a Conformer to a Squeezeformer of
/// the same size. Each row flips one toggle of the row above it.
pub fn ladder_configs(size: &str) -> Result<Vec<(&'static str, ModelConfig)>> {
    let (n, c, h) = ladder_base(size)?;
    let mut cfg = ModelConfig::conformer(n, c, h);
    let mut rows = vec![("baseline", cfg.clone())];
    cfg.unet = true;
    rows.push(("+unet", cfg.clone()));
    cfg.block_structure = BlockStructure::MfCf;
    rows.push(("+mf-cf", cfg.clone()));
    cfg.conv_activation = ConvActivation::Swish;
    rows.push(("+swish", cfg.clone()));
    cfg.norm_scheme = NormScheme::ScaledPost;
    rows.push(("+scaled-post", cfg.clone()));
    cfg.subsampling = SubsamplingKind::DepthwiseSeparable;
    rows.push(("+dw-subsampling", cfg));
    Ok(rows)
}

pub fn ablation_ladder(size: &str) -> Result<Vec<LadderRow>> {
    ladder_configs(size)?
        .into_iter()
        .map(|(change, config)| {
            Ok(LadderRow {
                change,
                params: count_params(&config).total,
                gflops: count_flops(&config, REFERENCE_SECONDS, 10.0)?.gflops(),
                config,
            })
        })
        .collect()
}

/// Ratios derived from the cost model at [`REFERENCE_SECONDS`] for a ladder
/// size. All fractions are relative to the ladder baseline.
#[derive(Clone, Debug, Serialize)]
pub struct ReductionSummary {
    /// Cost of the blocks inside the U-Net span, full rate over halved rate.
    pub span_block_ratio: f64,
    pub unet_total_reduction: f64,
    pub subsampling_share: f64,
    pub depthwise_subsampling_saving: f64,
}

pub fn reduction_summary(size: &str) -> Result<ReductionSummary> {
    let rows = ladder_configs(size)?;
    let reports = rows
        .iter()
        .map(|(_, c)| count_flops(c, REFERENCE_SECONDS, 10.0))
        .collect::<Result<Vec<_>>>()?;
    let base = reports[0].total_flops as f64;
    let (without, with) = span_block_flops(&rows[1].1, REFERENCE_SECONDS)?;
    Ok(ReductionSummary {
        span_block_ratio: without as f64 / with as f64,
        unet_total_reduction: 1.0 - reports[1].total_flops as f64 / base,
        subsampling_share: reports[0].flops_with_prefix("subsampling.") as f64 / base,
        depthwise_subsampling_saving: (reports[4].total_flops as f64 - reports[5].total_flops as f64) / base,
    })
}
