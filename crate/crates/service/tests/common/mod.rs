#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;

use lpmm_core::synthetic::{SyntheticFaces, SyntheticSpec};
use lpmm_core::LandmarkDataset;
use lpmm_service::{serve, Service};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub struct TestServer {
    pub base: String,
    pub client: reqwest::Client,
    pub service: Service,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<std::io::Result<()>>>,
}

impl TestServer {
    pub async fn start(state_dir: &Path) -> Self {
        let service = Service::open(state_dir).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr: SocketAddr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(serve(listener, service.clone(), async {
            let _ = rx.await;
        }));
        Self {
            base: format!("http://{addr}/api/v1"),
            client: reqwest::Client::new(),
            service,
            shutdown: Some(tx),
            task: Some(task),
        }
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.task.take() {
            t.await.unwrap().unwrap();
        }
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        decode(r).await
    }

    pub async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self.client.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        decode(r).await
    }

    pub async fn post_raw(&self, path: &str, body: &str) -> (u16, Value) {
        let r = self
            .client
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .await
            .unwrap();
        decode(r).await
    }

    pub async fn post_text(&self, path: &str, body: Value) -> (u16, String) {
        let r = self.client.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        (r.status().as_u16(), r.text().await.unwrap())
    }

    pub async fn delete(&self, path: &str) -> (u16, Value) {
        let r = self.client.delete(format!("{}{path}", self.base)).send().await.unwrap();
        decode(r).await
    }

    /// Builds a model from `faces(samples, seed)` and returns its summary.
    pub async fn build(&self, samples: usize, seed: u64) -> Value {
        let (status, body) = self.post("/model/build", json!({"dataset": records(&faces(samples, seed))})).await;
        assert_eq!(status, 200, "{body}");
        body
    }
}

async fn decode(r: reqwest::Response) -> (u16, Value) {
    let status = r.status().as_u16();
    let text = r.text().await.unwrap();
    let value = if text.is_empty() {
        Value::Null
    } else {
        serde_json::from_str(&text).unwrap_or(Value::String(text))
    };
    (status, value)
}

pub fn faces(samples: usize, seed: u64) -> LandmarkDataset {
    SyntheticFaces::new(SyntheticSpec {
        samples,
        seed,
        point_noise: 0.001,
        ..Default::default()
    })
    .dataset()
}

pub fn records(d: &LandmarkDataset) -> Value {
    Value::Array(d.to_jsonl_string().lines().map(|l| serde_json::from_str(l).unwrap()).collect())
}

pub fn error_code(body: &Value) -> &str {
    body["error"]["code"].as_str().unwrap_or("")
}

pub fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}
