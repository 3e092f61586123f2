//! Differentiable models: the task network and the Wasserstein auto-encoder.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod task;
pub mod wae;

pub use checkpoint::{Archive, CheckpointManifest, ModelSpec, NamedTensor};
pub use layers::{Layer, Sequential};
pub use loss::{cross_entropy, softmax};
pub use task::{ArchSpec, ArchTag, TaskModel, TaskParams};
pub use wae::{Bandwidth, Divergence, Wae, WaeArch, WaeLoss, WaeParams};
