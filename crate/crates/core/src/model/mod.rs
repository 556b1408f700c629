//! Model configuration, presets, the assembled encoder and its checkpoints.

mod checkpoint;
mod config;
mod encoder;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{default_downsample_after, preset, tiny, BlockStructure, FrameRate, ModelConfig, PRESET_NAMES};
pub use encoder::{collapse_path, ctc_greedy_decode, Block, EncoderModel, ModuleKind, Trace};
pub use params::{count_params, ParamBreakdown};
