use std::path::PathBuf;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use lpmm_core::{
    build_lpmm, dataset_from_json_values, fit_params, interpolation_frames, map_params_to_latent,
    mix_driving_with_params, nme_sweep, normalize_to_canonical, parse_landmark_records, reconstruct, scale_from_base,
    Blendshape, ComponentCount, DatasetFormat, LandmarkDataset, LandmarkSet, LatentVector, LpmmModel, MixMode, ParamVector,
    Raster, RasterConfig, Space, SurrogateConfig, SurrogateStack, TrainConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ApiError, ApiResult};
use crate::state::{Service, Session};

pub fn router(service: Service) -> Router {
    let api = Router::new()
        .route("/model/build", post(build_model))
        .route("/model", get(model_summary))
        .route("/model/components", get(component))
        .route("/fit", post(fit))
        .route("/reconstruct", post(reconstruct_points))
        .route("/interpolate", post(interpolate))
        .route("/scale", post(scale))
        .route("/blendshapes", get(list_blendshapes).post(create_blendshape))
        .route("/blendshapes/{name}", get(get_blendshape).delete(delete_blendshape))
        .route("/surrogate", get(surrogate_summary).post(configure_surrogate))
        .route("/adaptor/train", post(train))
        .route("/adaptor/status", get(status))
        .route("/adaptor/map", post(map_latent))
        .route("/mix", post(mix))
        .route("/nme-sweep", get(sweep));
    Router::new().nest("/api/v1", api).with_state(service)
}

type Body<T> = Result<Json<T>, axum::extract::rejection::JsonRejection>;

fn body<T>(b: Body<T>) -> ApiResult<T> {
    Ok(b?.0)
}

fn points_of(l: &LandmarkSet) -> Vec<[f64; 2]> {
    l.to_points()
}

fn landmarks(points: &[[f64; 2]], space: Space) -> ApiResult<LandmarkSet> {
    let set = LandmarkSet::from_points(points)?;
    Ok(match space {
        Space::Canonical => set,
        Space::Pixel => normalize_to_canonical(&set)?,
    })
}

fn params(values: Vec<f64>) -> ApiResult<ParamVector> {
    Ok(ParamVector::new(values)?)
}

// ---------------------------------------------------------------- model

#[derive(Deserialize)]
#[serde(untagged)]
enum DatasetSource {
    Records(Vec<Value>),
    Path { path: PathBuf },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BuildRequest {
    dataset: DatasetSource,
    #[serde(default)]
    m: Option<usize>,
}

#[derive(Serialize)]
pub struct ModelSummary {
    pub n: usize,
    pub m: usize,
    pub eigenvalues: Vec<f64>,
    pub fingerprint: String,
    pub dataset_fingerprint: String,
    pub samples: Option<usize>,
    pub clamped_from: Option<usize>,
}

impl ModelSummary {
    fn of(model: &LpmmModel) -> Self {
        Self {
            n: model.n(),
            m: model.m(),
            eigenvalues: model.eigenvalues().to_vec(),
            fingerprint: model.fingerprint().into(),
            dataset_fingerprint: model.dataset_fingerprint().into(),
            samples: model.build_info().map(|b| b.samples),
            clamped_from: model.build_info().and_then(|b| b.clamped_from),
        }
    }
}

fn load_dataset(source: DatasetSource) -> ApiResult<LandmarkDataset> {
    let dataset = match source {
        DatasetSource::Records(values) => dataset_from_json_values(values)?,
        DatasetSource::Path { path } => {
            let file = std::fs::File::open(&path)
                .map_err(|e| ApiError::bad_request(format!("cannot open {}: {e}", path.display())))?;
            parse_landmark_records(std::io::BufReader::new(file), DatasetFormat::Jsonl)?
        }
    };
    Ok(dataset.canonicalize()?)
}

async fn build_model(State(svc): State<Service>, req: Body<BuildRequest>) -> ApiResult<Json<ModelSummary>> {
    let req = body(req)?;
    if svc.training_active() {
        return Err(ApiError::job_running());
    }
    let dataset = load_dataset(req.dataset)?;
    let m = req.m.map_or(ComponentCount::Auto, ComponentCount::Fixed);
    let model = build_lpmm(&dataset, m)?;
    let model = svc.install_model(model, dataset)?;
    Ok(Json(ModelSummary::of(&model)))
}

async fn model_summary(State(svc): State<Service>) -> ApiResult<Json<ModelSummary>> {
    Ok(Json(ModelSummary::of(svc.read().model()?)))
}

#[derive(Deserialize)]
struct ComponentQuery {
    i: usize,
}

#[derive(Serialize)]
struct ComponentResponse {
    i: usize,
    eigenvalue: f64,
    offsets: Vec<[f64; 2]>,
}

async fn component(
    State(svc): State<Service>,
    q: Result<Query<ComponentQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Json<ComponentResponse>> {
    let i = q?.0.i;
    let model = svc.read().model()?.clone();
    let offsets = model.component_offsets(i)?;
    Ok(Json(ComponentResponse {
        i,
        eigenvalue: model.eigenvalues()[i],
        offsets,
    }))
}

// ------------------------------------------------------- fit / reconstruct

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FitRequest {
    points: Vec<[f64; 2]>,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    space: Space,
}

#[derive(Serialize)]
struct ParamsResponse {
    k: usize,
    params: Vec<f64>,
}

async fn fit(State(svc): State<Service>, req: Body<FitRequest>) -> ApiResult<Json<ParamsResponse>> {
    let req = body(req)?;
    let model = svc.read().model()?.clone();
    let l = landmarks(&req.points, req.space)?;
    let k = req.k.unwrap_or(model.m());
    let p = fit_params(&model, &l, k)?;
    Ok(Json(ParamsResponse { k, params: p.into_vec() }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReconstructRequest {
    params: Vec<f64>,
}

#[derive(Serialize)]
struct RasterBody {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl From<Raster> for RasterBody {
    fn from(r: Raster) -> Self {
        Self {
            height: r.height,
            width: r.width,
            pixels: r.pixels,
        }
    }
}

#[derive(Serialize)]
struct ReconstructResponse {
    k: usize,
    points: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    raster: Option<RasterBody>,
}

/// Raster of `render(map_params_to_latent(p))` when a surrogate and an
/// adaptor of matching degree are active.
fn preview(session: &Session, p: &ParamVector) -> ApiResult<Option<RasterBody>> {
    let (Some(stack), Some(adaptor)) = (&session.surrogate, &session.adaptor) else {
        return Ok(None);
    };
    if adaptor.net.k() != p.k() {
        return Ok(None);
    }
    let v = map_params_to_latent(&adaptor.net, p)?;
    Ok(Some(stack.render_raster(&v)?.into()))
}

async fn reconstruct_points(State(svc): State<Service>, req: Body<ReconstructRequest>) -> ApiResult<Json<ReconstructResponse>> {
    let req = body(req)?;
    let session = svc.snapshot();
    let model = session.model()?;
    let p = params(req.params)?;
    let l = reconstruct(model, &p)?;
    Ok(Json(ReconstructResponse {
        k: p.k(),
        points: points_of(&l),
        raster: preview(&session, &p)?,
    }))
}

// ----------------------------------------------------------------- edits

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InterpolateRequest {
    from: Vec<f64>,
    to: Vec<f64>,
    steps: usize,
}

#[derive(Serialize)]
struct FramesResponse {
    k: usize,
    frames: Vec<Vec<f64>>,
}

async fn interpolate(req: Body<InterpolateRequest>) -> ApiResult<Json<FramesResponse>> {
    let req = body(req)?;
    let (from, to) = (params(req.from)?, params(req.to)?);
    let frames = interpolation_frames(&from, &to, req.steps)?;
    Ok(Json(FramesResponse {
        k: from.k(),
        frames: frames.into_iter().map(ParamVector::into_vec).collect(),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScaleRequest {
    params: Vec<f64>,
    alpha: f64,
}

async fn scale(req: Body<ScaleRequest>) -> ApiResult<Json<ParamsResponse>> {
    let req = body(req)?;
    let p = scale_from_base(&params(req.params)?, req.alpha)?;
    Ok(Json(ParamsResponse {
        k: p.k(),
        params: p.into_vec(),
    }))
}

// ------------------------------------------------------------ blendshapes

#[derive(Serialize)]
struct BlendshapeBody {
    name: String,
    k: usize,
    offset: Vec<f64>,
    description: String,
}

impl From<&Blendshape> for BlendshapeBody {
    fn from(b: &Blendshape) -> Self {
        Self {
            name: b.name.clone(),
            k: b.k(),
            offset: b.offset.as_slice().to_vec(),
            description: b.description.clone(),
        }
    }
}

#[derive(Serialize)]
struct LibraryResponse {
    model_fingerprint: String,
    k: Option<usize>,
    entries: Vec<BlendshapeBody>,
}

async fn list_blendshapes(State(svc): State<Service>) -> ApiResult<Json<LibraryResponse>> {
    let session = svc.snapshot();
    session.model()?;
    let lib = &session.library;
    Ok(Json(LibraryResponse {
        model_fingerprint: lib.model_fingerprint().into(),
        k: lib.k(),
        entries: lib.list().map(BlendshapeBody::from).collect(),
    }))
}

async fn get_blendshape(State(svc): State<Service>, Path(name): Path<String>) -> ApiResult<Json<BlendshapeBody>> {
    let session = svc.snapshot();
    session.model()?;
    Ok(Json(session.library.get(&name)?.into()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBlendshape {
    name: String,
    offset: Vec<f64>,
    #[serde(default)]
    description: String,
}

async fn create_blendshape(
    State(svc): State<Service>,
    req: Body<CreateBlendshape>,
) -> ApiResult<(StatusCode, Json<BlendshapeBody>)> {
    let req = body(req)?;
    let b = Blendshape::new(req.name, params(req.offset)?, req.description)?;
    let out = BlendshapeBody::from(&b);
    svc.update_library(|lib, dir| lib.save(dir, b))?;
    Ok((StatusCode::CREATED, Json(out)))
}

async fn delete_blendshape(State(svc): State<Service>, Path(name): Path<String>) -> ApiResult<Json<BlendshapeBody>> {
    let removed = svc.update_library(|lib, dir| lib.delete(dir, &name))?;
    Ok(Json((&removed).into()))
}

// -------------------------------------------------------------- surrogate

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RasterSpec {
    h: usize,
    w: usize,
    sigma: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SurrogateRequest {
    #[serde(default)]
    seed: u64,
    w: usize,
    #[serde(default)]
    raster: Option<RasterSpec>,
}

#[derive(Serialize)]
struct SurrogateSummary {
    seed: u64,
    w: usize,
    n: usize,
    raster: RasterSpec,
}

impl SurrogateSummary {
    fn of(s: &SurrogateStack) -> Self {
        let r = s.raster_config();
        Self {
            seed: s.seed(),
            w: s.w(),
            n: s.n(),
            raster: RasterSpec {
                h: r.height,
                w: r.width,
                sigma: r.sigma,
            },
        }
    }
}

async fn configure_surrogate(State(svc): State<Service>, req: Body<SurrogateRequest>) -> ApiResult<Json<SurrogateSummary>> {
    let req = body(req)?;
    let raster = req.raster.map_or_else(RasterConfig::default, |r| RasterConfig {
        height: r.h,
        width: r.w,
        sigma: r.sigma,
    });
    let stack = svc.install_surrogate(SurrogateConfig {
        seed: req.seed,
        w: req.w,
        raster,
    })?;
    Ok(Json(SurrogateSummary::of(&stack)))
}

async fn surrogate_summary(State(svc): State<Service>) -> ApiResult<Json<SurrogateSummary>> {
    Ok(Json(SurrogateSummary::of(svc.read().surrogate()?)))
}

// ---------------------------------------------------------------- adaptor

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRequest {
    #[serde(default)]
    config: TrainConfig,
}

#[derive(Serialize)]
struct TrainResponse {
    job_id: String,
}

async fn train(State(svc): State<Service>, req: Body<TrainRequest>) -> ApiResult<(StatusCode, Json<TrainResponse>)> {
    let req = body(req)?;
    let job_id = svc.start_training(req.config)?;
    Ok((StatusCode::ACCEPTED, Json(TrainResponse { job_id })))
}

async fn status(State(svc): State<Service>) -> Json<crate::jobs::JobStatus> {
    Json(svc.job_status())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MapRequest {
    params: Vec<f64>,
}

#[derive(Serialize)]
struct MapResponse {
    k: usize,
    w: usize,
    latent: Vec<f64>,
}

async fn map_latent(State(svc): State<Service>, req: Body<MapRequest>) -> ApiResult<Json<MapResponse>> {
    let req = body(req)?;
    let session = svc.snapshot();
    session.model()?;
    let adaptor = session.adaptor()?;
    let p = params(req.params)?;
    let v = map_params_to_latent(&adaptor.net, &p)?;
    Ok(Json(MapResponse {
        k: p.k(),
        w: v.w(),
        latent: v.into_vec(),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EditTerm {
    name: String,
    weight: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MixRequest {
    driving_points: Vec<[f64; 2]>,
    #[serde(default)]
    edits: Vec<EditTerm>,
    #[serde(default)]
    mode: MixMode,
    #[serde(default)]
    space: Space,
}

#[derive(Serialize)]
struct MixResponse {
    k: usize,
    w: usize,
    mode: MixMode,
    params: Vec<f64>,
    latent: Vec<f64>,
    raster: RasterBody,
}

async fn mix(State(svc): State<Service>, req: Body<MixRequest>) -> ApiResult<Json<MixResponse>> {
    let req = body(req)?;
    let session = svc.snapshot();
    let model = session.model()?;
    let stack = session.surrogate()?;
    let adaptor = session.adaptor()?;
    let driving = landmarks(&req.driving_points, req.space)?;
    let named: Vec<(String, f64)> = req.edits.into_iter().map(|e| (e.name, e.weight)).collect();
    let edits = session.library.resolve(&named)?;
    let (p, v): (ParamVector, LatentVector) =
        mix_driving_with_params(&adaptor.net, model, stack, &driving, &edits, req.mode)?;
    let raster = stack.render_raster(&v)?.into();
    Ok(Json(MixResponse {
        k: p.k(),
        w: v.w(),
        mode: req.mode,
        params: p.into_vec(),
        latent: v.into_vec(),
        raster,
    }))
}

// ------------------------------------------------------------------ eval

#[derive(Deserialize)]
struct SweepQuery {
    ks: String,
}

async fn sweep(
    State(svc): State<Service>,
    q: Result<Query<SweepQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Json<Vec<lpmm_core::NmeReport>>> {
    let ks = q?
        .0
        .ks
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<usize>().map_err(|e| ApiError::bad_request(format!("bad k {s:?}: {e}"))))
        .collect::<ApiResult<Vec<_>>>()?;
    if ks.is_empty() {
        return Err(ApiError::bad_request("ks must list at least one degree"));
    }
    let session = svc.snapshot();
    let model = session.model()?.clone();
    let dataset = session.dataset()?.clone();
    let reports = tokio::task::spawn_blocking(move || nme_sweep(&model, &dataset, &ks))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(reports))
}
