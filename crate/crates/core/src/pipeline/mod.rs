//! Forward (RAW → sRGB) and reverse (sRGB → RAW) composition of the stages,
//! checkpoints, ablation traces and the synthetic reference camera.

mod ablation;
mod checkpoint;
mod config;
mod model;
mod passes;
mod synthetic;

pub use ablation::{ablation_csv, ablation_trace, AblationRow};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::IspConfig;
pub use model::{PipelineModel, ATTENTION_INIT_BIAS, CHOL_MIN, GAMMA_MIN, GAUSS_INIT_SIGMA};
pub use passes::{
    cycle, forward_pass, forward_pass_with, reverse_pass, reverse_pass_with, ForwardOutput, IntermediateTrace,
    ReverseOutput, WeightOverride,
};
pub use synthetic::{quantize8, synthetic_scene, ImagePair, SyntheticCamera, ToneCurve};

pub(crate) use passes::{build_forward, build_reverse, GraphPass};
