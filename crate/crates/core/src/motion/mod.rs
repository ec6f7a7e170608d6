//! Stage 1: audio + AU conditioning to landmark motion.

pub mod data;
pub mod loss;
pub mod sync;
pub mod train;
pub mod vmg;

pub use loss::{continuity_loss, kl_estimate, mse_loss, vmg_forward, vmg_loss, LossTerms, LossValues, LossWeights};
pub use sync::{auc, sync_auc, train_sync_expert, SyncConfig, SyncExpert, SyncTrainReport, SYNC_KIND};
pub use train::{generate_motion, generation_mse, mean_predictor_mse, train_vmg, VmgTrainConfig, VmgTrainer};
pub use vmg::{standard_normal_log_density, FlowPrior, PosteriorParams, VmgConfig, VmgModel, VMG_KIND};
