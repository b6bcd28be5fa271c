//! From-scratch pixel-space diffusion: cosine schedule, a small convolutional
//! ε-denoiser with hand-written backpropagation, Adam training with
//! conditioning dropout, and ancestral sampling with classifier-free guidance.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod real;
pub mod sample;
pub mod schedule;
pub mod train;

pub use checkpoint::{AdamState, Checkpoint};
pub use data::TrainExample;
pub use error::{Error, Result};
pub use model::{Arch, Denoiser, Init, Role};
pub use sample::{hierarchical_sample, sample, HierarchicalSample, Network, SamplerConfig};
pub use schedule::Schedule;
pub use train::{TrainConfig, Trainer};
