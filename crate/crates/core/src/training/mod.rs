//! Optimizer, schedule and the three-step training procedure.

pub mod config;
pub mod data;
pub mod infer;
pub mod schedule;
pub mod stages;

pub use config::{DataPaths, ImageAugConfig, Networks, StageConfig, TrainConfig};
pub use data::{image_batch, image_patch, ImageBatch, SynthBatch, SynthSource};
pub use infer::{predict, tile_origins, Models, Prediction};
pub use schedule::{sgd_update, Schedule, SgdConfig};
pub use stages::{
    full_forward, fuse, load_network, loss_log_name, run_step1, run_step2, run_step3, FullForward, StageReport,
    Step3Report, BASE_CKPT, FUSION_CKPT, PROT_CKPT,
};
