//! Heterogeneous graph network for skin weights: layers, forward pass,
//! loss, training and prediction.

pub mod layers;
mod loss;
mod model;
mod predict;
mod train;

pub use loss::{
    evaluate_loss, loss_targets, record_loss, smoothness_energy, LossBreakdown, LossVars, CONVEX_TOLERANCE, KL_EPS,
    SUPPORT_MASS_FLOOR,
};
pub use model::{forward_logits, network_input, BoundParams, DistanceMode, GraphTensors, HyperParams, Mode, Model, ModelParams};
pub use predict::{distances_for, prepare_rig, scatter_weights, PreparedRig};
pub use train::{initial_model, train, EpochRecord, TrainConfig, TrainOutcome, TrainSample};
