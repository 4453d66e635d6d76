//! Network, map autoencoder, loss and training.

mod autoencoder;
mod config;
pub mod layers;
mod loss;
mod network;
mod train;

pub use autoencoder::{channel_mean_baseline, train_autoencoder, AutoencoderConfig, AutoencoderTraining, BnUpdates, MapAutoencoder};
pub use config::{ModelConfig, YawModes};
pub use loss::{compute_loss, loss_from_blocks, winner_mode, yaw_loss_rows, LossAgent, LossBlock, LossBreakdown, LossVars, DEGENERATE_STEP};
pub use network::{time_encoding, AgentPrediction, Network, Output, Prediction, TypeOutput, TRAJ_DIM};
pub use train::{evaluate_loss, predict, train, EpochLog, TrainConfig};
