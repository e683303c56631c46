//! The landmark-parameter morphable model.
//!
//! A face is `mean + sum_i p_i * e_i` where the `e_i` are the principal
//! directions of a canonical landmark corpus. Parameters are raw projection
//! coefficients (no whitening); eigenvalues are kept so callers can scale
//! sliders by `sqrt(lambda_i)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::landmarks::{nme, LandmarkDataset, LandmarkSet, NmeReport};

pub const MODEL_FORMAT: &str = "lpmm-model";
pub const MODEL_VERSION: u64 = 1;

/// Maximum deviation of `basisᵀ·basis` from the identity accepted on load.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Number of principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComponentCount {
    /// `min(2n, N - 1)`.
    #[default]
    Auto,
    Fixed(usize),
}

/// How a model was built. Stored in the model file for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub samples: usize,
    /// Covariance normalization; always `"n-1"` (sample covariance).
    pub covariance: String,
    /// Set when the requested component count exceeded `min(2n, N - 1)`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clamped_from: Option<usize>,
}

/// LPMM coefficients of degree `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("parameter vector must have degree >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self(values))
    }

    /// The base pose `p_zero`.
    pub fn zeros(k: usize) -> Self {
        assert!(k >= 1, "degree must be >= 1");
        Self(vec![0.0; k])
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpmmModel {
    n: usize,
    mean: DVector<f64>,
    /// `2n x m`, orthonormal columns.
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    dataset_fingerprint: String,
    build: Option<BuildInfo>,
    fingerprint: String,
}

impl LpmmModel {
    /// Assembles a model from parts, checking every invariant.
    pub fn from_parts(
        n: usize,
        mean: Vec<f64>,
        basis_columns: Vec<Vec<f64>>,
        eigenvalues: Vec<f64>,
        dataset_fingerprint: String,
        build: Option<BuildInfo>,
    ) -> Result<Self> {
        let dim = 2 * n;
        if n == 0 {
            return Err(Error::InvalidFile("n must be positive".into()));
        }
        if mean.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "mean",
                expected: dim,
                found: mean.len(),
            });
        }
        let m = basis_columns.len();
        if m == 0 || m > dim {
            return Err(Error::InvalidFile(format!("component count {m} outside 1..={dim}")));
        }
        if eigenvalues.len() != m {
            return Err(Error::DimensionMismatch {
                what: "eigenvalues",
                expected: m,
                found: eigenvalues.len(),
            });
        }
        if let Some(c) = basis_columns.iter().find(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch {
                what: "basis column",
                expected: dim,
                found: c.len(),
            });
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&mean) || !finite(&eigenvalues) || !basis_columns.iter().all(|c| finite(c)) {
            return Err(Error::NonFinite("model"));
        }
        if eigenvalues.iter().any(|&e| e < -1e-12) {
            return Err(Error::InvalidFile("negative eigenvalue".into()));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidFile("eigenvalues not sorted non-increasing".into()));
        }
        let eigenvalues = eigenvalues.into_iter().map(|e| e.max(0.0)).collect();
        let basis = DMatrix::from_iterator(dim, m, basis_columns.into_iter().flatten());
        let dev = orthonormality_deviation(&basis);
        if !(dev < ORTHONORMALITY_TOL) {
            return Err(Error::BasisNotOrthonormal(dev));
        }
        let mut model = Self {
            n,
            mean: DVector::from_vec(mean),
            basis,
            eigenvalues,
            dataset_fingerprint,
            build,
            fingerprint: String::new(),
        };
        model.fingerprint = model.compute_fingerprint();
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored components.
    pub fn m(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn mean_landmarks(&self) -> LandmarkSet {
        LandmarkSet::from_vec(self.mean.as_slice().to_vec()).expect("model mean is finite")
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn dataset_fingerprint(&self) -> &str {
        &self.dataset_fingerprint
    }

    pub fn build_info(&self) -> Option<&BuildInfo> {
        self.build.as_ref()
    }

    /// Content hash of the model (dimensions, mean, eigenvalues, basis).
    /// Blendshapes and adaptors are bound to this value.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn compute_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(MODEL_FORMAT.as_bytes());
        h.update((self.n as u64).to_le_bytes());
        h.update((self.m() as u64).to_le_bytes());
        let values = self
            .mean
            .iter()
            .chain(self.eigenvalues.iter())
            .chain(self.basis.iter());
        for v in values {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn check_degree(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.m() {
            return Err(Error::DegreeOutOfRange { k, max: self.m() });
        }
        Ok(())
    }

    fn check_landmarks(&self, l: &LandmarkSet) -> Result<()> {
        if l.len() != self.n {
            return Err(Error::PointCount {
                expected: self.n,
                found: l.len(),
            });
        }
        Ok(())
    }

    /// Basis column `i` reshaped as per-point offsets.
    pub fn component_offsets(&self, i: usize) -> Result<Vec<[f64; 2]>> {
        if i >= self.m() {
            return Err(Error::DegreeOutOfRange { k: i + 1, max: self.m() });
        }
        Ok(self
            .basis
            .column(i)
            .as_slice()
            .chunks_exact(2)
            .map(|c| [c[0], c[1]])
            .collect())
    }
}

/// `max |basisᵀ·basis - I|`.
pub fn orthonormality_deviation(basis: &DMatrix<f64>) -> f64 {
    let gram = basis.transpose() * basis;
    let mut dev = 0.0f64;
    for (r, c) in (0..gram.nrows()).flat_map(|r| (0..gram.ncols()).map(move |c| (r, c))) {
        let target = if r == c { 1.0 } else { 0.0 };
        dev = dev.max((gram[(r, c)] - target).abs());
    }
    dev
}

/// Builds the model by PCA over the flattened canonical landmark vectors.
///
/// The principal directions come from the SVD of the centered `N x 2n` data
/// matrix; `eigenvalue_i = s_i² / (N - 1)`. Each direction is sign-fixed so
/// that its largest-magnitude entry is positive (ties go to the lowest
/// index), which makes builds reproducible bit for bit.
pub fn build_lpmm(dataset: &LandmarkDataset, m: ComponentCount) -> Result<LpmmModel> {
    let samples = dataset.len();
    if samples < 2 {
        return Err(Error::TooFewSamples(samples));
    }
    if !dataset.is_canonical() {
        return Err(Error::InvalidArgument(
            "dataset contains pixel-space records; canonicalize first".into(),
        ));
    }
    let n = dataset.point_count();
    let dim = 2 * n;
    let max_m = dim.min(samples - 1);
    let (m, clamped_from) = match m {
        ComponentCount::Auto => (max_m, None),
        ComponentCount::Fixed(0) => {
            return Err(Error::InvalidArgument("component count must be >= 1".into()))
        }
        ComponentCount::Fixed(req) if req > max_m => {
            log::warn!("requested {req} components, clamped to {max_m}");
            (max_m, Some(req))
        }
        ComponentCount::Fixed(req) => (req, None),
    };

    let data = DMatrix::from_row_iterator(
        samples,
        dim,
        dataset.landmarks().flat_map(|l| l.as_slice().iter().copied()),
    );
    let mean = data.row_mean().transpose();
    let mut centered = data;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }

    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("v_t was requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("singular values are finite")
    });

    let denom = (samples - 1) as f64;
    let mut columns = Vec::with_capacity(m);
    let mut eigenvalues = Vec::with_capacity(m);
    for &idx in order.iter().take(m) {
        let mut col: Vec<f64> = v_t.row(idx).iter().copied().collect();
        fix_sign(&mut col);
        columns.push(col);
        let s = svd.singular_values[idx];
        eigenvalues.push(s * s / denom);
    }

    LpmmModel::from_parts(
        n,
        mean.as_slice().to_vec(),
        columns,
        eigenvalues,
        dataset.fingerprint(),
        Some(BuildInfo {
            samples,
            covariance: "n-1".into(),
            clamped_from,
        }),
    )
}

fn fix_sign(col: &mut [f64]) {
    let mut best = 0;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.iter_mut().for_each(|v| *v = -*v);
    }
}

/// `mean + sum_{i<=k} p_i e_i`. No clamping to the unit square.
pub fn reconstruct(model: &LpmmModel, p: &ParamVector) -> Result<LandmarkSet> {
    model.check_degree(p.k())?;
    let mut out = model.mean.clone();
    for (i, &pi) in p.as_slice().iter().enumerate() {
        out.axpy(pi, &model.basis.column(i), 1.0);
    }
    LandmarkSet::from_vec(out.as_slice().to_vec())
}

/// Least-squares coefficients of degree `k`: the first `k` entries of
/// `basisᵀ (L - mean)`.
pub fn fit_params(model: &LpmmModel, l: &LandmarkSet, k: usize) -> Result<ParamVector> {
    model.check_degree(k)?;
    model.check_landmarks(l)?;
    let centered = DVector::from_column_slice(l.as_slice()) - &model.mean;
    let values = (0..k).map(|i| model.basis.column(i).dot(&centered)).collect();
    ParamVector::new(values)
}

/// Fraction of the stored variance captured by the first `k` components.
pub fn explained_variance(model: &LpmmModel, k: usize) -> Result<f64> {
    model.check_degree(k)?;
    let total: f64 = model.eigenvalues.iter().sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok(model.eigenvalues[..k].iter().sum::<f64>() / total)
}

/// `‖L - reconstruct(fit_params(L, k))‖₂`.
pub fn residual_norm(model: &LpmmModel, l: &LandmarkSet, k: usize) -> Result<f64> {
    let rec = reconstruct(model, &fit_params(model, l, k)?)?;
    Ok(rec
        .as_slice()
        .iter()
        .zip(l.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// NME between each landmark set and its degree-`k` reconstruction, for every
/// `k` in `ks`. Samples with a degenerate inter-ocular distance are skipped
/// and counted.
pub fn nme_sweep(model: &LpmmModel, eval: &LandmarkDataset, ks: &[usize]) -> Result<Vec<NmeReport>> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("ks must be non-empty".into()));
    }
    for &k in ks {
        model.check_degree(k)?;
    }
    ks.iter()
        .map(|&k| {
            let mut per_sample = Vec::with_capacity(eval.len());
            let mut skipped = 0;
            for l in eval.landmarks() {
                let rec = reconstruct(model, &fit_params(model, l, k)?)?;
                match nme(&rec, l) {
                    Ok(v) => per_sample.push(v),
                    Err(Error::DegenerateInterocular(_)) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok(NmeReport::from_samples(per_sample, Some(k), skipped))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u64,
    n: usize,
    m: usize,
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    basis: Vec<Vec<f64>>,
    dataset_fingerprint: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    build: Option<BuildInfo>,
}

/// Checks the `format` / `version` header of any artifact file.
pub(crate) fn check_header(bytes: &[u8], format: &'static str, version: u64) -> Result<()> {
    let header: Header =
        serde_json::from_slice(bytes).map_err(|e| Error::InvalidFile(format!("missing format header: {e}")))?;
    if header.format != format {
        return Err(Error::FormatTag {
            expected: format,
            found: header.format,
        });
    }
    if header.version != version {
        return Err(Error::VersionMismatch {
            format,
            found: header.version,
            expected: version,
        });
    }
    Ok(())
}

pub fn serialize_model(model: &LpmmModel) -> Vec<u8> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        n: model.n,
        m: model.m(),
        mean: model.mean.as_slice().to_vec(),
        eigenvalues: model.eigenvalues.clone(),
        basis: model.basis.column_iter().map(|c| c.iter().copied().collect()).collect(),
        dataset_fingerprint: model.dataset_fingerprint.clone(),
        build: model.build.clone(),
    };
    serde_json::to_vec(&file).expect("model serializes")
}

pub fn deserialize_model(bytes: &[u8]) -> Result<LpmmModel> {
    check_header(bytes, MODEL_FORMAT, MODEL_VERSION)?;
    let file: ModelFile = serde_json::from_slice(bytes)?;
    if file.m != file.basis.len() {
        return Err(Error::DimensionMismatch {
            what: "basis columns",
            expected: file.m,
            found: file.basis.len(),
        });
    }
    LpmmModel::from_parts(
        file.n,
        file.mean,
        file.basis,
        file.eigenvalues,
        file.dataset_fingerprint,
        file.build,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{SyntheticFaces, SyntheticSpec};

    fn small_dataset(samples: usize, seed: u64) -> LandmarkDataset {
        SyntheticFaces::new(SyntheticSpec {
            samples,
            seed,
            ..SyntheticSpec::default()
        })
        .dataset()
    }

    #[test]
    fn identical_samples_give_zero_variance() {
        let face = small_dataset(1, 3).records()[0].landmarks.clone();
        let ds = LandmarkDataset::from_landmarks(vec![face.clone(); 6]).unwrap();
        let model = build_lpmm(&ds, ComponentCount::Auto).unwrap();
        assert_eq!(model.m(), 5);
        assert!(model.eigenvalues().iter().all(|&e| e < 1e-28), "{:?}", model.eigenvalues());
        for (a, b) in model.mean().iter().zip(face.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(orthonormality_deviation(model.basis()) < ORTHONORMALITY_TOL);
        assert_eq!(explained_variance(&model, 2).unwrap(), 1.0);
    }

    #[test]
    fn too_few_samples() {
        let ds = small_dataset(1, 0);
        assert!(matches!(build_lpmm(&ds, ComponentCount::Auto), Err(Error::TooFewSamples(1))));
    }

    #[test]
    fn requested_m_is_clamped() {
        let ds = small_dataset(10, 1);
        let model = build_lpmm(&ds, ComponentCount::Fixed(50)).unwrap();
        assert_eq!(model.m(), 9);
        assert_eq!(model.build_info().unwrap().clamped_from, Some(50));
    }

    #[test]
    fn trace_identity() {
        let ds = small_dataset(40, 2);
        let model = build_lpmm(&ds, ComponentCount::Auto).unwrap();
        let total: f64 = model.eigenvalues().iter().sum();
        let direct: f64 = ds
            .landmarks()
            .map(|l| {
                l.as_slice()
                    .iter()
                    .zip(model.mean().iter())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / 39.0;
        assert!((total - direct).abs() <= 1e-9 * direct);
    }

    #[test]
    fn sign_convention_holds() {
        let model = build_lpmm(&small_dataset(30, 4), ComponentCount::Auto).unwrap();
        for col in model.basis().column_iter() {
            let (mut best, mut val) = (0, 0.0f64);
            for (i, v) in col.iter().enumerate() {
                if v.abs() > val.abs() {
                    best = i;
                    val = *v;
                }
            }
            assert!(col[best] > 0.0);
        }
    }

    #[test]
    fn zero_params_give_mean() {
        let model = build_lpmm(&small_dataset(20, 5), ComponentCount::Auto).unwrap();
        let l = reconstruct(&model, &ParamVector::zeros(7)).unwrap();
        assert_eq!(l.as_slice(), model.mean().as_slice());
    }

    #[test]
    fn single_component_and_basis_input() {
        let model = build_lpmm(&small_dataset(20, 6), ComponentCount::Auto).unwrap();
        let l = reconstruct(&model, &ParamVector::new(vec![0.7, 0.0, 0.0]).unwrap()).unwrap();
        for (i, v) in l.as_slice().iter().enumerate() {
            assert!((v - (model.mean()[i] + 0.7 * model.basis()[(i, 0)])).abs() < 1e-15);
        }
        let target = reconstruct(&model, &ParamVector::new(vec![0.0, 0.0, 2.0]).unwrap()).unwrap();
        let p = fit_params(&model, &target, 6).unwrap();
        for (i, v) in p.as_slice().iter().enumerate() {
            let expect = if i == 2 { 2.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-10);
        }
        let p = fit_params(&model, &model.mean_landmarks(), 4).unwrap();
        assert!(p.as_slice().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn degree_errors() {
        let model = build_lpmm(&small_dataset(5, 7), ComponentCount::Auto).unwrap();
        assert!(matches!(
            reconstruct(&model, &ParamVector::zeros(5)),
            Err(Error::DegreeOutOfRange { k: 5, max: 4 })
        ));
        assert!(fit_params(&model, &model.mean_landmarks(), 0).is_err());
        assert!(explained_variance(&model, 9).is_err());
        assert_eq!(explained_variance(&model, 4).unwrap(), 1.0);
    }

    #[test]
    fn model_round_trip_is_field_exact() {
        let model = build_lpmm(&small_dataset(25, 8), ComponentCount::Fixed(10)).unwrap();
        let back = deserialize_model(&serialize_model(&model)).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.fingerprint(), model.fingerprint());
    }

    #[test]
    fn tampered_and_versioned_files_are_rejected() {
        let model = build_lpmm(&small_dataset(25, 9), ComponentCount::Fixed(4)).unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&serialize_model(&model)).unwrap();
        for x in v["basis"][1].as_array_mut().unwrap() {
            *x = serde_json::json!(x.as_f64().unwrap() * 2.0);
        }
        let err = deserialize_model(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert!(matches!(err, Error::BasisNotOrthonormal(_)));
        assert!(err.to_string().contains("basis not orthonormal"));

        let mut v: serde_json::Value = serde_json::from_slice(&serialize_model(&model)).unwrap();
        v["version"] = serde_json::json!(7);
        let err = deserialize_model(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { found: 7, .. }));
    }
}
