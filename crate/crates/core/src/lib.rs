//! Linear landmark parametric models, parameter-space editing and a
//! trainable parameter-to-latent adaptor.

pub mod adaptor;
pub mod edit;
pub mod error;
pub mod landmarks;
pub mod lpmm;
pub mod surrogate;
pub mod synthetic;

pub use adaptor::{
    compute_gradients, compute_losses, deserialize_adaptor, init_adaptor, map_params_to_latent, mix_driving_with_params,
    serialize_adaptor, train_adaptor, train_adaptor_with, AdaptorArtifact, AdaptorNet, LossBreakdown, LossVariant, MixMode,
    TrainConfig, TrainingReport,
};
pub use edit::{
    apply_blendshapes, deserialize_blendshape, interpolate_params, interpolation_frames, scale_from_base, serialize_blendshape,
    Blendshape, BlendshapeLibrary,
};
pub use error::{Error, ErrorKind, Result};
pub use landmarks::{
    dataset_from_json_values, interocular_distance, nme, normalize_to_canonical, parse_landmark_records, DatasetFormat, LandmarkDataset, LandmarkRecord,
    LandmarkSet, NmeReport, Space,
};
pub use lpmm::{
    build_lpmm, deserialize_model, explained_variance, fit_params, nme_sweep, reconstruct, residual_norm, serialize_model, ComponentCount,
    LpmmModel, ParamVector,
};
pub use surrogate::{make_surrogate, LatentVector, Raster, RasterConfig, SurrogateConfig, SurrogateStack};
