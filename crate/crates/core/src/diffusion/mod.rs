//! Stage 2: landmark-conditioned latent video diffusion.

pub mod blocks;
pub mod model;
pub mod sample;
pub mod schedule;
pub mod train;

pub use blocks::{guider_stride_count, upsample2, PoseGuider, ReferenceFusion, ResBlock, TemporalAttention, GUIDER_CHANNELS};
pub use model::{checkpoint_phase, is_autoencoder, is_temporal, M2vConfig, M2vModel, Paths, ToyAutoencoder, M2V_KIND};
pub use sample::{
    boundary_stats, ddim_sample, decode_latents, infer_pipeline, latent_boundary_stats, sample_latents, BoundaryStats,
    GeneratedVideo, InferenceInputs, SampleOptions,
};
pub use schedule::{ddim_sample_with, DiffusionSchedule, ScheduleKind};
pub use train::{
    diffusion_loss, noise_prediction_loss, prepare_clips, sample_phase1_batch, sample_phase2_batch, train_autoencoder,
    train_phase1, train_phase2, AeTrainConfig, CheckpointTarget, ClipTensors, DiffusionBatch, Phase1Config, Phase2Config,
};
