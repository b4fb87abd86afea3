//! The proposed network, its two ablation baselines, and checkpoints.

pub mod checkpoint;
pub mod config;
pub(crate) mod forward;
pub mod model;
pub mod predictor;
pub mod probe;

pub use checkpoint::{load_model, save_model};
pub use config::{HeadKind, ModelConfig, ReceptiveField, Variant};
pub use forward::{ControlWindows, Controls};
pub use model::{build_bb_model, build_model, count_scalars, param_count, Model};
pub use predictor::{
    predict_frame, FramePredictor, GenerationRequest, Prediction, PredictionInput, RepeatPrevious, ToyOracle,
};
