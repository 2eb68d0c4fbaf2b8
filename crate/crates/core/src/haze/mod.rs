//! Data, metrics and training for dehazing.

pub mod ablation;
pub mod config;
pub mod data;
pub mod metrics;
pub mod optim;
pub mod scene;
pub mod train;

pub use ablation::{ranking, run_ablation, write_ablation_csv, AblationRow, ABLATION_HEADER, ABLATION_VARIANTS};
pub use config::{LossKind, RunConfig, TrainConfig};
pub use data::{load_rgb, save_rgb, PairedDataset};
pub use metrics::{l1, mse, psnr, ssim, PSNR_CAP};
pub use optim::{AdamW, AdamWConfig, LrPolicy, LrSchedule};
pub use scene::{apply_haze, synth_scene, HazeScene};
pub use train::{sidecar_path, MetricRow, Trainer, METRICS_HEADER};
