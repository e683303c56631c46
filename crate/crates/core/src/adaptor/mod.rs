//! Parameter-to-latent adaptor: a small MLP trained against a frozen
//! surrogate renderer.

mod adam;
mod io;
mod loss;
mod mix;
mod net;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use io::{deserialize_adaptor, serialize_adaptor, AdaptorArtifact, ADAPTOR_FORMAT, ADAPTOR_VERSION};
pub use loss::{average_pose_params, compute_gradients, compute_losses, pose_residual, LossBreakdown, LossVariant, TrainConfig};
pub use mix::{map_params_to_latent, mix_driving_with_params, MixMode};
pub use net::{elu, init_adaptor, width_chain, AdaptorGrads, AdaptorNet};
pub use train::{train_adaptor, train_adaptor_with, Progress, StepRecord, TrainingReport};
