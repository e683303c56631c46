//! Parameter-space editing: blendshapes, scaling from the base pose and
//! interpolation between poses. Every operation is a linear map on `R^k`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpmm::{check_header, ParamVector};

pub const BLENDSHAPE_FORMAT: &str = "lpmm-blendshape";
pub const BLENDSHAPE_VERSION: u64 = 1;

/// A named parameter offset, e.g. a captured "surprise" expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Blendshape {
    pub name: String,
    pub offset: ParamVector,
    pub description: String,
}

impl Blendshape {
    pub fn new(name: impl Into<String>, offset: ParamVector, description: impl Into<String>) -> Result<Self> {
        let name = name.into();
        validate_name(&name)?;
        Ok(Self {
            name,
            offset,
            description: description.into(),
        })
    }

    pub fn k(&self) -> usize {
        self.offset.k()
    }
}

/// Names double as file stems, so they are restricted to a safe alphabet.
fn validate_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("invalid blendshape name {name:?}")))
    }
}

fn check_same_degree(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DegreeMismatch { expected, found });
    }
    Ok(())
}

/// `base + sum_i weight_i * offset_i`.
///
/// Terms are accumulated in name order, so the result does not depend on the
/// order of `weighted`.
pub fn apply_blendshapes(base: &ParamVector, weighted: &[(&Blendshape, f64)]) -> Result<ParamVector> {
    let mut terms: Vec<(&Blendshape, f64)> = weighted.to_vec();
    for (b, w) in &terms {
        check_same_degree(base.k(), b.k())?;
        if !w.is_finite() {
            return Err(Error::NonFinite("blendshape weight"));
        }
    }
    terms.sort_by(|a, b| a.0.name.cmp(&b.0.name).then(a.1.total_cmp(&b.1)));
    let mut acc = base.as_slice().to_vec();
    for (b, w) in terms {
        for (a, o) in acc.iter_mut().zip(b.offset.as_slice()) {
            *a += w * o;
        }
    }
    ParamVector::new(acc)
}

/// `alpha * p`; `alpha = 0` gives the base pose, values above one
/// extrapolate.
pub fn scale_from_base(p: &ParamVector, alpha: f64) -> Result<ParamVector> {
    ParamVector::new(p.as_slice().iter().map(|v| alpha * v).collect())
}

/// `(1 - alpha) * from + alpha * to` for `alpha` in `[0, 1]`.
pub fn interpolate_params(from: &ParamVector, to: &ParamVector, alpha: f64) -> Result<ParamVector> {
    check_same_degree(from.k(), to.k())?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    if alpha == 0.0 {
        return Ok(from.clone());
    }
    if alpha == 1.0 {
        return Ok(to.clone());
    }
    ParamVector::new(
        from.as_slice()
            .iter()
            .zip(to.as_slice())
            .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
            .collect(),
    )
}

/// `steps` evenly spaced frames from `from` to `to`, both ends included.
pub fn interpolation_frames(from: &ParamVector, to: &ParamVector, steps: usize) -> Result<Vec<ParamVector>> {
    match steps {
        0 => Err(Error::InvalidArgument("steps must be >= 1".into())),
        1 => {
            check_same_degree(from.k(), to.k())?;
            Ok(vec![from.clone()])
        }
        _ => (0..steps)
            .map(|i| interpolate_params(from, to, i as f64 / (steps - 1) as f64))
            .collect(),
    }
}

#[derive(Serialize, Deserialize)]
struct BlendshapeFile {
    format: String,
    version: u64,
    name: String,
    k: usize,
    offset: Vec<f64>,
    model_fingerprint: String,
    description: String,
}

pub fn serialize_blendshape(b: &Blendshape, model_fingerprint: &str) -> Vec<u8> {
    let file = BlendshapeFile {
        format: BLENDSHAPE_FORMAT.into(),
        version: BLENDSHAPE_VERSION,
        name: b.name.clone(),
        k: b.k(),
        offset: b.offset.as_slice().to_vec(),
        model_fingerprint: model_fingerprint.into(),
        description: b.description.clone(),
    };
    serde_json::to_vec(&file).expect("blendshape serializes")
}

/// Parses a blendshape file and checks it was built for `model_fingerprint`.
pub fn deserialize_blendshape(bytes: &[u8], model_fingerprint: &str) -> Result<Blendshape> {
    check_header(bytes, BLENDSHAPE_FORMAT, BLENDSHAPE_VERSION)?;
    let file: BlendshapeFile = serde_json::from_slice(bytes)?;
    if file.model_fingerprint != model_fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: model_fingerprint.into(),
            found: file.model_fingerprint,
        });
    }
    if file.k != file.offset.len() {
        return Err(Error::DimensionMismatch {
            what: "blendshape offset",
            expected: file.k,
            found: file.offset.len(),
        });
    }
    Blendshape::new(file.name, ParamVector::new(file.offset)?, file.description)
}

/// Named blendshapes sharing one degree, bound to one model.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeLibrary {
    model_fingerprint: String,
    entries: BTreeMap<String, Blendshape>,
}

impl BlendshapeLibrary {
    pub fn new(model_fingerprint: impl Into<String>) -> Self {
        Self {
            model_fingerprint: model_fingerprint.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn model_fingerprint(&self) -> &str {
        &self.model_fingerprint
    }

    /// Shared degree, or `None` while empty.
    pub fn k(&self) -> Option<usize> {
        self.entries.values().next().map(Blendshape::k)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, b: Blendshape) -> Result<()> {
        if self.entries.contains_key(&b.name) {
            return Err(Error::DuplicateName(b.name));
        }
        if let Some(k) = self.k() {
            check_same_degree(k, b.k())?;
        }
        self.entries.insert(b.name.clone(), b);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Blendshape> {
        self.entries.get(name).ok_or_else(|| Error::NotFound(name.into()))
    }

    pub fn list(&self) -> impl Iterator<Item = &Blendshape> {
        self.entries.values()
    }

    pub fn remove(&mut self, name: &str) -> Result<Blendshape> {
        self.entries.remove(name).ok_or_else(|| Error::NotFound(name.into()))
    }

    /// Resolves `(name, weight)` pairs against the library.
    pub fn resolve<'a>(&'a self, edits: &[(String, f64)]) -> Result<Vec<(&'a Blendshape, f64)>> {
        edits.iter().map(|(n, w)| Ok((self.get(n)?, *w))).collect()
    }

    fn path_for(dir: &Path, name: &str) -> PathBuf {
        dir.join(format!("{name}.json"))
    }

    /// Inserts `b` and writes it to `<dir>/<name>.json`.
    pub fn save(&mut self, dir: &Path, b: Blendshape) -> Result<()> {
        if self.entries.contains_key(&b.name) {
            return Err(Error::DuplicateName(b.name));
        }
        if let Some(k) = self.k() {
            check_same_degree(k, b.k())?;
        }
        fs::create_dir_all(dir)?;
        let bytes = serialize_blendshape(&b, &self.model_fingerprint);
        let path = Self::path_for(dir, &b.name);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        self.insert(b)
    }

    /// Removes `name` from the library and deletes its file.
    pub fn delete(&mut self, dir: &Path, name: &str) -> Result<Blendshape> {
        let b = self.remove(name)?;
        match fs::remove_file(Self::path_for(dir, name)) {
            Ok(()) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(b),
            Err(e) => Err(e.into()),
        }
    }

    /// Loads every `*.json` file in `dir`. Files that fail to parse or belong
    /// to another model are returned as per-file errors instead of aborting.
    pub fn load_dir(dir: &Path, model_fingerprint: &str) -> Result<(Self, Vec<(PathBuf, Error)>)> {
        let mut lib = Self::new(model_fingerprint);
        let mut problems = Vec::new();
        if !dir.exists() {
            return Ok((lib, problems));
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let loaded = fs::read(&path)
                .map_err(Error::from)
                .and_then(|bytes| deserialize_blendshape(&bytes, model_fingerprint))
                .and_then(|b| lib.insert(b));
            if let Err(e) = loaded {
                problems.push((path, e));
            }
        }
        Ok((lib, problems))
    }
}
