//! The sound event detection network: topology config, construction,
//! forward pass, training and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod crnn;
pub mod micro;
pub mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use config::{preset, ModelConfig, PRESETS};
pub use crnn::{
    build_crnn, config_param_count, crnn_forward, model_param_count, Crnn, CrnnOutput, CrnnVars,
    ForwardOptions, Prediction,
};
pub use train::{sed_loss, sed_loss_with, train_step, Adam, Batch};
