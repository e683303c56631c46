use serde::{Deserialize, Serialize};

use super::loss::TrainConfig;
use super::net::AdaptorNet;
use crate::error::{Error, Result};
use crate::lpmm::check_header;
use crate::surrogate::LatentVector;

pub const ADAPTOR_FORMAT: &str = "lpmm-adaptor";
pub const ADAPTOR_VERSION: u64 = 1;

/// A trained adaptor together with what it was trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptorArtifact {
    pub net: AdaptorNet,
    pub train_config: TrainConfig,
    pub surrogate_seed: u64,
    pub model_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdaptorFile {
    format: String,
    version: u64,
    k: usize,
    w: usize,
    widths: [usize; 4],
    weights: [Vec<f64>; 3],
    biases: [Vec<f64>; 3],
    mean_latent: Vec<f64>,
    train_config: TrainConfig,
    surrogate_seed: u64,
    model_fingerprint: String,
}

pub fn serialize_adaptor(artifact: &AdaptorArtifact) -> Vec<u8> {
    let net = &artifact.net;
    let file = AdaptorFile {
        format: ADAPTOR_FORMAT.into(),
        version: ADAPTOR_VERSION,
        k: net.k(),
        w: net.w(),
        widths: net.widths(),
        weights: std::array::from_fn(|l| net.layer_weights(l).to_vec()),
        biases: std::array::from_fn(|l| net.layer_bias(l).to_vec()),
        mean_latent: net.mean_latent().as_slice().to_vec(),
        train_config: artifact.train_config.clone(),
        surrogate_seed: artifact.surrogate_seed,
        model_fingerprint: artifact.model_fingerprint.clone(),
    };
    serde_json::to_vec(&file).expect("adaptor serializes")
}

/// Parses and validates an adaptor file. When `model_fingerprint` is given,
/// the file must have been trained against that model.
pub fn deserialize_adaptor(bytes: &[u8], model_fingerprint: Option<&str>) -> Result<AdaptorArtifact> {
    check_header(bytes, ADAPTOR_FORMAT, ADAPTOR_VERSION)?;
    let file: AdaptorFile = serde_json::from_slice(bytes)?;
    if file.widths[0] != file.k || file.widths[3] != file.w {
        return Err(Error::InvalidFile(format!(
            "widths {:?} disagree with k = {}, w = {}",
            file.widths, file.k, file.w
        )));
    }
    if let Some(expected) = model_fingerprint {
        if expected != file.model_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: expected.into(),
                found: file.model_fingerprint,
            });
        }
    }
    let net = AdaptorNet::from_layers(file.weights, file.biases, LatentVector::new(file.mean_latent)?)?;
    if net.widths() != file.widths {
        return Err(Error::InvalidFile(format!(
            "layer shapes imply widths {:?}, header says {:?}",
            net.widths(),
            file.widths
        )));
    }
    file.train_config.validate()?;
    Ok(AdaptorArtifact {
        net,
        train_config: file.train_config,
        surrogate_seed: file.surrogate_seed,
        model_fingerprint: file.model_fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptor::net::init_adaptor;

    fn artifact() -> AdaptorArtifact {
        let vbar = LatentVector::new(vec![0.1, -0.2, 0.3]).unwrap();
        AdaptorArtifact {
            net: init_adaptor(2, 3, vbar, 7).unwrap(),
            train_config: TrainConfig { k: 2, ..Default::default() },
            surrogate_seed: 11,
            model_fingerprint: "abc".into(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let a = artifact();
        let back = deserialize_adaptor(&serialize_adaptor(&a), Some("abc")).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn rejects_other_model() {
        let bytes = serialize_adaptor(&artifact());
        assert!(matches!(deserialize_adaptor(&bytes, Some("xyz")), Err(Error::FingerprintMismatch { .. })));
    }

    #[test]
    fn rejects_bad_version_and_shapes() {
        let bytes = serialize_adaptor(&artifact());
        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["version"] = 2.into();
        let err = deserialize_adaptor(&serde_json::to_vec(&v).unwrap(), None).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { .. }));

        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["weights"][1].as_array_mut().unwrap().pop();
        assert!(deserialize_adaptor(&serde_json::to_vec(&v).unwrap(), None).is_err());
    }
}
