//! Data ingestion and synthesis: OpenFace AU CSVs, landmark files, audio
//! features, conditioning assembly and the synthetic rig dataset.

pub mod audio;
pub mod conditioning;
pub mod dataset;
pub mod landmark_io;
pub mod openface;
pub mod rig;

pub use audio::{
    audio_features, AudioFeatureProvider, AudioFeatureSequence, SpectralEnergyProvider,
};
pub use conditioning::{build_conditioning, ConditioningSequence};
pub use dataset::{Appearance, Clip, Split, ToyDataset};
pub use landmark_io::{read_landmark_file, write_landmark_file};
pub use openface::{read_openface_au_csv, write_openface_au_csv};
pub use rig::{synth_rig_generate, RigSpec, SynthOptions};
