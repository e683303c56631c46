mod common;

use std::time::Duration;

use common::*;
use serde_json::json;

#[tokio::test]
async fn empty_state_reports_no_model() {
    let dir = tempfile::tempdir().unwrap();
    let srv = TestServer::start(dir.path()).await;
    let (status, body) = srv.get("/model").await;
    assert_eq!(status, 404);
    assert_eq!(error_code(&body), "no_model");
    let (status, body) = srv.post("/reconstruct", json!({"params": [0.0]})).await;
    assert_eq!((status, error_code(&body)), (404, "no_model"));
    let (status, _) = srv.get("/blendshapes").await;
    assert_eq!(status, 404);
    srv.stop().await;
}

#[tokio::test]
async fn build_fit_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let srv = TestServer::start(dir.path()).await;
    let summary = srv.build(40, 1).await;
    assert_eq!(summary["n"], 68);
    assert_eq!(summary["m"], 39);
    let (_, same) = srv.get("/model").await;
    assert_eq!(same, summary);

    let model = srv.service.snapshot().model.unwrap();
    let mean: Vec<[f64; 2]> = model.mean_landmarks().to_points();

    // base pose
    let (status, body) = srv.post("/reconstruct", json!({"params": vec![0.0; 10]})).await;
    assert_eq!(status, 200);
    let points: Vec<[f64; 2]> = serde_json::from_value(body["points"].clone()).unwrap();
    assert_eq!(points, mean);
    assert_eq!(body["k"], 10);
    assert!(body.get("raster").is_none());

    // fitting the mean gives zeros
    let (status, body) = srv.post("/fit", json!({"points": mean, "k": 6})).await;
    assert_eq!(status, 200);
    assert!(floats(&body["params"]).iter().all(|&p| p.abs() < 1e-14));

    // pixel-space input is normalized first
    let pixel: Vec<[f64; 2]> = mean.iter().map(|[x, y]| [300.0 * x + 20.0, 300.0 * y - 5.0]).collect();
    let (status, body) = srv.post("/fit", json!({"points": pixel, "k": 3, "space": "pixel"})).await;
    assert_eq!(status, 200, "{body}");
    assert_eq!(floats(&body["params"]).len(), 3);

    let (status, body) = srv.post("/fit", json!({"points": mean, "k": 400})).await;
    assert_eq!((status, error_code(&body)), (422, "degree_out_of_range"));

    let (status, body) = srv.get("/model/components?i=0").await;
    assert_eq!(status, 200);
    assert_eq!(body["offsets"].as_array().unwrap().len(), 68);
    let (status, _) = srv.get("/model/components?i=999").await;
    assert!(status == 400 || status == 422);
    srv.stop().await;
}

#[tokio::test]
async fn repeated_calls_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let srv = TestServer::start(dir.path()).await;
    srv.build(30, 2).await;
    let req = json!({"params": [0.01, -0.02, 0.003]});
    let (_, a) = srv.post_text("/reconstruct", req.clone()).await;
    let (_, b) = srv.post_text("/reconstruct", req).await;
    assert_eq!(a, b);
    srv.stop().await;
}

#[tokio::test]
async fn interpolate_and_scale() {
    let dir = tempfile::tempdir().unwrap();
    let srv = TestServer::start(dir.path()).await;
    let (status, body) = srv.post("/interpolate", json!({"from": [0.2, -0.4], "to": [-0.2, 0.4], "steps": 3})).await;
    assert_eq!(status, 200);
    assert_eq!(body["frames"], json!([[0.2, -0.4], [0.0, 0.0], [-0.2, 0.4]]));
    let (status, body) = srv.post("/scale", json!({"params": [0.2, -0.4], "alpha": 0.5})).await;
    assert_eq!(status, 200);
    assert_eq!(body["params"], json!([0.1, -0.2]));
    let (status, body) = srv.post("/interpolate", json!({"from": [0.2], "to": [0.1, 0.4], "steps": 3})).await;
    assert_eq!((status, error_code(&body)), (422, "degree_mismatch"));
    srv.stop().await;
}

#[tokio::test]
async fn malformed_requests_get_400() {
    let dir = tempfile::tempdir().unwrap();
    let srv = TestServer::start(dir.path()).await;
    let (status, body) = srv.post_raw("/scale", "{not json").await;
    assert_eq!((status, error_code(&body)), (400, "invalid_request"));
    let (status, body) = srv.post("/scale", json!({"params": [1.0], "alpha": 1.0, "extra": 1})).await;
    assert_eq!((status, error_code(&body)), (400, "invalid_request"));
    let (status, body) = srv.post("/model/build", json!({"dataset": []})).await;
    assert_eq!((status, error_code(&body)), (400, "empty_dataset"));
    srv.build(20, 3).await;
    let (status, _) = srv.get("/nme-sweep?ks=1,x").await;
    assert_eq!(status, 400);
    srv.stop().await;
}

#[tokio::test]
async fn degenerate_interocular_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let srv = TestServer::start(dir.path()).await;
    srv.build(20, 3).await;
    let mut pts = srv.service.snapshot().model.unwrap().mean_landmarks().to_points();
    pts[45] = pts[36];
    // NME of a face whose eyes coincide cannot be normalized
    let truth = lpmm_core::LandmarkSet::from_points(&pts).unwrap();
    let err = lpmm_core::nme(&truth, &truth).unwrap_err();
    let api: lpmm_service::ApiError = err.into();
    assert_eq!(api.status.as_u16(), 422);
    assert_eq!(api.code, "degenerate_interocular");
    srv.stop().await;
}

#[tokio::test]
async fn blendshape_library_crud_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let srv = TestServer::start(dir.path()).await;
    let summary = srv.build(30, 4).await;
    let (status, body) = srv
        .post("/blendshapes", json!({"name": "smile", "offset": [0.01, 0.0, -0.02], "description": "wide"}))
        .await;
    assert_eq!(status, 201, "{body}");
    let (status, body) = srv.post("/blendshapes", json!({"name": "smile", "offset": [0.0, 0.0, 0.0]})).await;
    assert_eq!((status, error_code(&body)), (409, "duplicate_name"));
    let (status, body) = srv.post("/blendshapes", json!({"name": "brow", "offset": [0.0, 1.0]})).await;
    assert_eq!((status, error_code(&body)), (422, "degree_mismatch"));
    let (status, body) = srv.post("/blendshapes", json!({"name": "../evil", "offset": [0.0, 0.0, 0.0]})).await;
    assert_eq!(status, 400, "{body}");
    srv.post("/blendshapes", json!({"name": "brow", "offset": [0.0, 0.01, 0.0]})).await;
    srv.stop().await;

    // a restart restores model and library from the state dir
    let srv = TestServer::start(dir.path()).await;
    assert!(srv.service.startup_problems().is_empty());
    let (_, model) = srv.get("/model").await;
    assert_eq!(model["fingerprint"], summary["fingerprint"]);
    let (status, body) = srv.get("/blendshapes").await;
    assert_eq!(status, 200);
    let names: Vec<&str> = body["entries"].as_array().unwrap().iter().map(|e| e["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["brow", "smile"]);
    let (_, smile) = srv.get("/blendshapes/smile").await;
    assert_eq!(smile["description"], "wide");
    assert_eq!(smile["offset"], json!([0.01, 0.0, -0.02]));

    let (status, _) = srv.delete("/blendshapes/smile").await;
    assert_eq!(status, 200);
    let (status, body) = srv.delete("/blendshapes/smile").await;
    assert_eq!((status, error_code(&body)), (404, "not_found"));
    assert!(!dir.path().join("blendshapes/smile.json").exists());
    srv.stop().await;
}

#[tokio::test]
async fn corrupt_state_files_do_not_abort_startup() {
    let dir = tempfile::tempdir().unwrap();
    let srv = TestServer::start(dir.path()).await;
    srv.build(25, 5).await;
    srv.post("/blendshapes", json!({"name": "ok", "offset": [0.1]})).await;
    srv.stop().await;
    std::fs::write(dir.path().join("blendshapes/bad.json"), b"{ nope").unwrap();
    std::fs::write(dir.path().join("adaptor.json"), b"[]").unwrap();

    let srv = TestServer::start(dir.path()).await;
    let problems: Vec<&str> = srv.service.startup_problems().iter().map(|p| p.artifact.as_str()).collect();
    assert!(problems.contains(&"adaptor.json"), "{problems:?}");
    assert!(problems.contains(&"blendshapes/bad.json"), "{problems:?}");
    let (status, _) = srv.get("/model").await;
    assert_eq!(status, 200);
    let (_, lib) = srv.get("/blendshapes").await;
    assert_eq!(lib["entries"].as_array().unwrap().len(), 1);
    srv.stop().await;

    std::fs::write(dir.path().join("model.json"), b"{\"format\": \"lpmm-model\", \"version\": 7}").unwrap();
    let srv = TestServer::start(dir.path()).await;
    assert_eq!(srv.service.startup_problems()[0].artifact, "model.json");
    let (status, body) = srv.get("/model").await;
    assert_eq!((status, error_code(&body)), (404, "no_model"));
    srv.stop().await;
}

#[tokio::test]
async fn nme_sweep_over_build_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let srv = TestServer::start(dir.path()).await;
    srv.build(30, 6).await;
    let (status, body) = srv.get("/nme-sweep?ks=1,4,29").await;
    assert_eq!(status, 200, "{body}");
    let means: Vec<f64> = body.as_array().unwrap().iter().map(|r| r["mean"].as_f64().unwrap()).collect();
    assert_eq!(means.len(), 3);
    assert!(means[0] >= means[1] && means[1] >= means[2]);
    assert!(means[2] < 1e-8);
    srv.stop().await;
}

async fn wait_for_done(srv: &TestServer) -> serde_json::Value {
    let mut last = 0;
    for _ in 0..2000 {
        let (_, status) = srv.get("/adaptor/status").await;
        let step = status["step"].as_u64().unwrap_or(0);
        assert!(step >= last, "step went backwards: {last} -> {step}");
        last = step;
        match status["state"].as_str().unwrap() {
            "running" => tokio::time::sleep(Duration::from_millis(10)).await,
            _ => return status,
        }
    }
    panic!("training did not finish");
}

#[tokio::test]
async fn surrogate_training_mix_and_preview() {
    let dir = tempfile::tempdir().unwrap();
    let srv = TestServer::start(dir.path()).await;
    srv.build(40, 7).await;
    let (status, body) = srv.post("/adaptor/train", json!({"config": {"k": 4, "steps": 5}})).await;
    assert_eq!((status, error_code(&body)), (404, "no_surrogate"));

    let (status, body) = srv.post("/surrogate", json!({"seed": 3, "w": 6, "raster": {"h": 16, "w": 16, "sigma": 0.05}})).await;
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["raster"], json!({"h": 16, "w": 16, "sigma": 0.05}));

    let (status, body) = srv
        .post("/adaptor/train", json!({"config": {"k": 4, "steps": 60, "batch_size": 8, "learning_rate": 0.003}}))
        .await;
    assert_eq!(status, 202, "{body}");
    assert!(body["job_id"].as_str().unwrap().starts_with("job-"));
    let done = wait_for_done(&srv).await;
    assert_eq!(done["state"], "done", "{done}");
    assert_eq!(done["step"], 60);
    assert!(done["losses"]["rgb"].as_f64().unwrap() < done["initial"]["rgb"].as_f64().unwrap());

    let (status, body) = srv.post("/adaptor/map", json!({"params": [0.0, 0.0, 0.0, 0.0]})).await;
    assert_eq!(status, 200);
    assert_eq!(body["w"], 6);
    let (status, body) = srv.post("/adaptor/map", json!({"params": [0.0]})).await;
    assert_eq!((status, error_code(&body)), (422, "degree_mismatch"));

    let (_, body) = srv.post("/reconstruct", json!({"params": [0.0, 0.0, 0.0, 0.0]})).await;
    assert_eq!(body["raster"]["pixels"].as_array().unwrap().len(), 256);

    let driving = srv.service.snapshot().dataset.unwrap().records()[3].landmarks.to_points();
    srv.post("/blendshapes", json!({"name": "tilt", "offset": [0.02, 0.0, 0.0, 0.0]})).await;
    let (status, plain) = srv.post("/mix", json!({"driving_points": driving, "mode": "B"})).await;
    assert_eq!(status, 200, "{plain}");
    let stack = srv.service.snapshot().surrogate.unwrap();
    let encoded = stack.encode_landmarks(&lpmm_core::LandmarkSet::from_points(&driving).unwrap()).unwrap();
    assert_eq!(floats(&plain["latent"]), encoded.as_slice());
    let (status, edited) = srv
        .post("/mix", json!({"driving_points": driving, "edits": [{"name": "tilt", "weight": 1.0}]}))
        .await;
    assert_eq!(status, 200);
    assert_eq!(edited["mode"], "A");
    let (status, body) = srv
        .post("/mix", json!({"driving_points": driving, "edits": [{"name": "missing", "weight": 1.0}]}))
        .await;
    assert_eq!((status, error_code(&body)), (404, "not_found"));
    srv.stop().await;

    // the adaptor survives a restart
    let srv = TestServer::start(dir.path()).await;
    assert!(srv.service.startup_problems().is_empty(), "{:?}", srv.service.startup_problems());
    let (status, _) = srv.post("/adaptor/map", json!({"params": [0.0, 0.0, 0.0, 0.0]})).await;
    assert_eq!(status, 200);
    srv.stop().await;
}

#[tokio::test]
async fn second_training_job_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let srv = TestServer::start(dir.path()).await;
    srv.build(60, 8).await;
    srv.post("/surrogate", json!({"w": 16})).await;
    let req = json!({"config": {"k": 8, "steps": 100000}});
    let (a, b) = tokio::join!(srv.post("/adaptor/train", req.clone()), srv.post("/adaptor/train", req.clone()));
    let mut statuses = [a.0, b.0];
    statuses.sort();
    assert_eq!(statuses, [202, 409]);
    let conflict = if a.0 == 409 { a.1 } else { b.1 };
    assert_eq!(error_code(&conflict), "job_running");

    // state-changing calls are refused while the job runs
    let (status, body) = srv.post("/surrogate", json!({"w": 8})).await;
    assert_eq!((status, error_code(&body)), (409, "job_running"));

    let mut last = 0;
    for _ in 0..5 {
        tokio::time::sleep(Duration::from_millis(30)).await;
        let (_, status) = srv.get("/adaptor/status").await;
        assert_eq!(status["state"], "running");
        let step = status["step"].as_u64().unwrap();
        assert!(step >= last);
        last = step;
    }
    // shutdown cancels the job
    let service = srv.service.clone();
    srv.stop().await;
    assert!(matches!(service.job_status(), lpmm_service::JobStatus::Done { cancelled: true, .. }));
}
