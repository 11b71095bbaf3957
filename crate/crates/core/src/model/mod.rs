//! Network assembly, joint loss, training loop and checkpoints.

pub mod checkpoint;
mod config;
mod loss;
mod net;
mod train;

pub use config::{CmwrSetting, ModelConfig, SmarSetting, STRIDES};
pub use loss::{joint_loss, JointLoss, LossValues};
pub use net::{Backbone, CirNet, ModalityDecoder, Prediction, Saliency};
pub use train::{Adam, StepRecord, TrainConfig, Trainer};
