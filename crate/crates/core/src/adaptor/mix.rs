use serde::{Deserialize, Serialize};

use super::net::AdaptorNet;
use crate::edit::{apply_blendshapes, Blendshape};
use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;
use crate::lpmm::{fit_params, LpmmModel, ParamVector};
use crate::surrogate::{LatentVector, SurrogateStack};

/// How parameter edits are combined with a driving face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum MixMode {
    /// Edit the driving face's fitted parameters, then map them:
    /// `forward(apply(fit(driving), edits))`.
    #[default]
    A,
    /// Add the edit's latent effect to the encoder output:
    /// `encode(driving) + forward(p_mixed) - forward(p_drive)`.
    B,
}

/// Inference entry point: parameters to latent code.
pub fn map_params_to_latent(net: &AdaptorNet, p: &ParamVector) -> Result<LatentVector> {
    net.forward(p)
}

/// Fits the driving face, applies the weighted blendshapes and returns the
/// edited parameters with their latent code.
pub fn mix_driving_with_params(
    net: &AdaptorNet,
    model: &LpmmModel,
    stack: &SurrogateStack,
    driving: &LandmarkSet,
    edits: &[(&Blendshape, f64)],
    mode: MixMode,
) -> Result<(ParamVector, LatentVector)> {
    if net.w() != stack.w() {
        return Err(Error::DimensionMismatch {
            what: "adaptor output vs surrogate latent",
            expected: stack.w(),
            found: net.w(),
        });
    }
    let p_drive = fit_params(model, driving, net.k())?;
    let p_mixed = apply_blendshapes(&p_drive, edits)?;
    let latent = match mode {
        MixMode::A => net.forward(&p_mixed)?,
        MixMode::B => {
            let v = stack.encode_landmarks(driving)?;
            if edits.is_empty() {
                v
            } else {
                let edited = net.residual(&p_mixed)?;
                let base = net.residual(&p_drive)?;
                LatentVector::new(
                    v.as_slice()
                        .iter()
                        .zip(edited.iter().zip(&base))
                        .map(|(v, (e, b))| v + (e - b))
                        .collect(),
                )?
            }
        }
    };
    Ok((p_mixed, latent))
}
