use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::thread::JoinHandle;

use lpmm_core::{
    deserialize_adaptor, deserialize_model, parse_landmark_records, serialize_adaptor, serialize_model, AdaptorArtifact,
    BlendshapeLibrary, DatasetFormat, LandmarkDataset, LpmmModel, RasterConfig, SurrogateConfig, SurrogateStack,
};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::jobs::JobStatus;

pub const MODEL_FILE: &str = "model.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const SURROGATE_FILE: &str = "surrogate.json";
pub const ADAPTOR_FILE: &str = "adaptor.json";
pub const BLENDSHAPE_DIR: &str = "blendshapes";

const SURROGATE_FORMAT: &str = "lpmm-surrogate";
const SURROGATE_VERSION: u64 = 1;

/// Everything the API serves. Fields are swapped whole, never mutated in
/// place, so readers always see a consistent snapshot.
#[derive(Clone)]
pub struct Session {
    pub model: Option<Arc<LpmmModel>>,
    /// Dataset the model was built from; used for NME sweeps and training.
    pub dataset: Option<Arc<LandmarkDataset>>,
    pub surrogate: Option<Arc<SurrogateStack>>,
    pub adaptor: Option<Arc<AdaptorArtifact>>,
    pub library: Arc<BlendshapeLibrary>,
}

impl Session {
    fn empty() -> Self {
        Self {
            model: None,
            dataset: None,
            surrogate: None,
            adaptor: None,
            library: Arc::new(BlendshapeLibrary::new("")),
        }
    }

    pub fn model(&self) -> ApiResult<&Arc<LpmmModel>> {
        self.model.as_ref().ok_or_else(ApiError::no_model)
    }

    pub fn surrogate(&self) -> ApiResult<&Arc<SurrogateStack>> {
        self.surrogate
            .as_ref()
            .ok_or_else(|| ApiError::missing("no_surrogate", "no surrogate configured; POST /api/v1/surrogate first"))
    }

    pub fn adaptor(&self) -> ApiResult<&Arc<AdaptorArtifact>> {
        self.adaptor
            .as_ref()
            .ok_or_else(|| ApiError::missing("no_adaptor", "no trained adaptor; POST /api/v1/adaptor/train first"))
    }

    pub fn dataset(&self) -> ApiResult<&Arc<LandmarkDataset>> {
        self.dataset
            .as_ref()
            .ok_or_else(|| ApiError::missing("no_dataset", "no dataset loaded; rebuild the model from a dataset"))
    }
}

/// A state-dir file that could not be restored at startup.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactProblem {
    pub artifact: String,
    pub message: String,
}

#[derive(Serialize, Deserialize)]
struct SurrogateFile {
    format: String,
    version: u64,
    seed: u64,
    w: usize,
    raster: RasterConfig,
    model_fingerprint: String,
}

pub(crate) struct JobSlot {
    pub status: JobStatus,
    pub cancel: Option<Arc<AtomicBool>>,
    pub handle: Option<JoinHandle<()>>,
}

pub(crate) struct Inner {
    pub state_dir: PathBuf,
    session: RwLock<Session>,
    /// Serializes every mutation, including its file writes.
    writer: Mutex<()>,
    pub job: Mutex<JobSlot>,
    pub next_job: AtomicU64,
    problems: Vec<ArtifactProblem>,
}

/// Shared handle to the service state.
#[derive(Clone)]
pub struct Service {
    pub(crate) inner: Arc<Inner>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn remove_if_exists(path: &Path) -> io::Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}

impl Service {
    /// Opens `state_dir`, restoring whatever artifacts it holds. Corrupt or
    /// mismatched files are reported and skipped.
    pub fn open(state_dir: impl Into<PathBuf>) -> io::Result<Self> {
        let state_dir = state_dir.into();
        fs::create_dir_all(state_dir.join(BLENDSHAPE_DIR))?;
        let (session, problems) = restore(&state_dir);
        for p in &problems {
            log::warn!("skipping {}: {}", p.artifact, p.message);
        }
        Ok(Self {
            inner: Arc::new(Inner {
                state_dir,
                session: RwLock::new(session),
                writer: Mutex::new(()),
                job: Mutex::new(JobSlot {
                    status: JobStatus::Idle,
                    cancel: None,
                    handle: None,
                }),
                next_job: AtomicU64::new(1),
                problems,
            }),
        })
    }

    pub fn state_dir(&self) -> &Path {
        &self.inner.state_dir
    }

    pub fn startup_problems(&self) -> &[ArtifactProblem] {
        &self.inner.problems
    }

    pub fn snapshot(&self) -> Session {
        self.read().clone()
    }

    pub(crate) fn read(&self) -> RwLockReadGuard<'_, Session> {
        self.inner.session.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, Session> {
        self.inner.session.write().unwrap_or_else(|e| e.into_inner())
    }

    pub(crate) fn writer(&self) -> MutexGuard<'_, ()> {
        lock(&self.inner.writer)
    }

    pub(crate) fn job(&self) -> MutexGuard<'_, JobSlot> {
        lock(&self.inner.job)
    }

    pub fn training_active(&self) -> bool {
        matches!(self.job().status, JobStatus::Running { .. })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.inner.state_dir.join(name)
    }

    /// Installs a freshly built model. The surrogate and adaptor belong to
    /// the previous model and are dropped; the library is reloaded for the
    /// new fingerprint.
    pub(crate) fn install_model(&self, model: LpmmModel, dataset: LandmarkDataset) -> ApiResult<Arc<LpmmModel>> {
        let _w = self.writer();
        if self.training_active() {
            return Err(ApiError::job_running());
        }
        write_atomic(&self.path(MODEL_FILE), &serialize_model(&model)).map_err(io_error)?;
        write_atomic(&self.path(DATASET_FILE), dataset.to_jsonl_string().as_bytes()).map_err(io_error)?;
        let model = Arc::new(model);
        let mut session = self.write();
        let same_model = session.model.as_ref().is_some_and(|m| m.fingerprint() == model.fingerprint());
        if !same_model {
            remove_if_exists(&self.path(SURROGATE_FILE)).map_err(io_error)?;
            remove_if_exists(&self.path(ADAPTOR_FILE)).map_err(io_error)?;
            let (library, problems) =
                BlendshapeLibrary::load_dir(&self.path(BLENDSHAPE_DIR), model.fingerprint()).map_err(ApiError::from)?;
            for (path, e) in problems {
                log::info!("blendshape {} not loaded for the new model: {e}", path.display());
            }
            session.surrogate = None;
            session.adaptor = None;
            session.library = Arc::new(library);
        }
        session.model = Some(model.clone());
        session.dataset = Some(Arc::new(dataset));
        Ok(model)
    }

    pub(crate) fn install_surrogate(&self, config: SurrogateConfig) -> ApiResult<Arc<SurrogateStack>> {
        let _w = self.writer();
        if self.training_active() {
            return Err(ApiError::job_running());
        }
        let model = self.read().model()?.clone();
        let stack = Arc::new(SurrogateStack::from_config(&config, &model.mean_landmarks())?);
        let file = SurrogateFile {
            format: SURROGATE_FORMAT.into(),
            version: SURROGATE_VERSION,
            seed: config.seed,
            w: config.w,
            raster: config.raster,
            model_fingerprint: model.fingerprint().into(),
        };
        write_atomic(&self.path(SURROGATE_FILE), &serde_json::to_vec(&file).expect("serializes")).map_err(io_error)?;
        let mut session = self.write();
        let keep_adaptor = session.surrogate.as_ref().is_some_and(|s| s.config() == stack.config());
        if !keep_adaptor {
            remove_if_exists(&self.path(ADAPTOR_FILE)).map_err(io_error)?;
            session.adaptor = None;
        }
        session.surrogate = Some(stack.clone());
        Ok(stack)
    }

    /// Installs a trained adaptor if the model and surrogate it was trained
    /// against are still active.
    pub(crate) fn install_adaptor(&self, artifact: AdaptorArtifact) -> ApiResult<()> {
        let _w = self.writer();
        let mut session = self.write();
        let model_ok = session.model.as_ref().is_some_and(|m| m.fingerprint() == artifact.model_fingerprint);
        let surrogate_ok = session
            .surrogate
            .as_ref()
            .is_some_and(|s| s.seed() == artifact.surrogate_seed && s.w() == artifact.net.w());
        if !model_ok || !surrogate_ok {
            return Err(ApiError::new(
                axum::http::StatusCode::CONFLICT,
                "stale_adaptor",
                "model or surrogate changed during training",
            ));
        }
        write_atomic(&self.path(ADAPTOR_FILE), &serialize_adaptor(&artifact)).map_err(io_error)?;
        session.adaptor = Some(Arc::new(artifact));
        Ok(())
    }

    pub(crate) fn update_library<T>(
        &self,
        f: impl FnOnce(&mut BlendshapeLibrary, &Path) -> lpmm_core::Result<T>,
    ) -> ApiResult<T> {
        let _w = self.writer();
        self.read().model()?;
        let mut library = (*self.read().library).clone();
        let out = f(&mut library, &self.path(BLENDSHAPE_DIR))?;
        self.write().library = Arc::new(library);
        Ok(out)
    }

    /// Asks a running training job to stop and waits for its thread.
    pub fn cancel_training(&self) {
        let handle = {
            let mut slot = self.job();
            if let Some(c) = &slot.cancel {
                c.store(true, Ordering::SeqCst);
            }
            slot.handle.take()
        };
        if let Some(h) = handle {
            let _ = h.join();
        }
    }
}

fn io_error(e: io::Error) -> ApiError {
    ApiError::internal(format!("state dir write failed: {e}"))
}

fn restore(dir: &Path) -> (Session, Vec<ArtifactProblem>) {
    let mut session = Session::empty();
    let mut problems = Vec::new();
    let mut report = |artifact: &str, message: String| {
        problems.push(ArtifactProblem {
            artifact: artifact.into(),
            message,
        })
    };

    let Some(bytes) = read_optional(&dir.join(MODEL_FILE), &mut report) else {
        return (session, problems);
    };
    let model = match deserialize_model(&bytes) {
        Ok(m) => Arc::new(m),
        Err(e) => {
            report(MODEL_FILE, e.to_string());
            return (session, problems);
        }
    };

    if let Some(bytes) = read_optional(&dir.join(DATASET_FILE), &mut report) {
        match parse_landmark_records(bytes.as_slice(), DatasetFormat::Jsonl) {
            Ok(d) if d.point_count() == model.n() => session.dataset = Some(Arc::new(d)),
            Ok(d) => report(DATASET_FILE, format!("dataset has {} points, model has {}", d.point_count(), model.n())),
            Err(e) => report(DATASET_FILE, e.to_string()),
        }
    }

    if let Some(bytes) = read_optional(&dir.join(SURROGATE_FILE), &mut report) {
        match load_surrogate(&bytes, &model) {
            Ok(s) => session.surrogate = Some(Arc::new(s)),
            Err(msg) => report(SURROGATE_FILE, msg),
        }
    }

    if let Some(bytes) = read_optional(&dir.join(ADAPTOR_FILE), &mut report) {
        match deserialize_adaptor(&bytes, Some(model.fingerprint())) {
            Ok(a) => match &session.surrogate {
                Some(s) if s.seed() == a.surrogate_seed && s.w() == a.net.w() => session.adaptor = Some(Arc::new(a)),
                _ => report(ADAPTOR_FILE, "adaptor does not match the stored surrogate".into()),
            },
            Err(e) => report(ADAPTOR_FILE, e.to_string()),
        }
    }

    match BlendshapeLibrary::load_dir(&dir.join(BLENDSHAPE_DIR), model.fingerprint()) {
        Ok((library, skipped)) => {
            for (path, e) in skipped {
                report(&format!("{BLENDSHAPE_DIR}/{}", path.file_name().unwrap_or_default().to_string_lossy()), e.to_string());
            }
            session.library = Arc::new(library);
        }
        Err(e) => {
            report(BLENDSHAPE_DIR, e.to_string());
            session.library = Arc::new(BlendshapeLibrary::new(model.fingerprint()));
        }
    }
    session.model = Some(model);
    (session, problems)
}

fn read_optional(path: &Path, report: &mut impl FnMut(&str, String)) -> Option<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Some(b),
        Err(e) if e.kind() == io::ErrorKind::NotFound => None,
        Err(e) => {
            report(&path.file_name().unwrap_or_default().to_string_lossy(), e.to_string());
            None
        }
    }
}

fn load_surrogate(bytes: &[u8], model: &LpmmModel) -> Result<SurrogateStack, String> {
    let file: SurrogateFile = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    if file.format != SURROGATE_FORMAT || file.version != SURROGATE_VERSION {
        return Err(format!("unsupported {} version {}", file.format, file.version));
    }
    if file.model_fingerprint != model.fingerprint() {
        return Err("surrogate built for a different model".into());
    }
    let config = SurrogateConfig {
        seed: file.seed,
        w: file.w,
        raster: file.raster,
    };
    SurrogateStack::from_config(&config, &model.mean_landmarks()).map_err(|e| e.to_string())
}
