//! Transformer fusion of camera and LiDAR with auxiliary-task features and
//! heads, plus the imitation-learning trainer.

pub mod aux;
pub mod config;
pub mod data;
pub mod encoder;
mod error;
pub mod fusion;
pub mod gradcheck;
pub mod network;
pub mod trainer;

pub use aux::{install_provider, AuxProvider, ProviderKind};
pub use config::{strategy_by_name, AuxSource, AuxStage, FusionConfig, SsProvider, Strategy, STRATEGIES};
pub use data::{Batch, Features, NetInput, Sample, SS_SIZE};
pub use error::{ModelError, Result};
pub use network::{FusionNetwork, NetworkOutput};
pub use trainer::{compute_loss, loss_csv, pretrain_aux, Labels, LossRecord, PretrainedProvider, TrainConfig, TrainLoss, Trainer};
