#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use seqal::active::{ExperimentConfig, TaskView};
use seqal::corpus::{Dataset, SyntheticConfig};
use seqal::strategies::Strategy;
use seqal_server::{router, AppState, SessionStatus, StartRequest};
use serde_json::{json, Value};
use tower::ServiceExt;

/// One strategy, one seed, a few small iterations.
pub fn session_config(
    strategy: Strategy,
    batch_size: usize,
    n_iterations: usize,
) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.synthetic = Some(SyntheticConfig {
        n_sentences: 200,
        ..SyntheticConfig::default()
    });
    cfg.strategies = vec![strategy];
    cfg.batch_size = batch_size;
    cfg.n_iterations = n_iterations;
    cfg.n_seeds = 1;
    cfg.initial_labeled = 10;
    cfg.test_size = 50;
    cfg.train.max_iterations = 40;
    cfg
}

pub fn start_body(cfg: &ExperimentConfig) -> Value {
    json!(StartRequest {
        config: cfg.clone(),
        seed_index: 0
    })
}

pub fn gold(cfg: &ExperimentConfig) -> Dataset {
    seqal::active::prepare_dataset(cfg).unwrap()
}

pub fn gold_tags(d: &Dataset, id: usize) -> Vec<String> {
    d.get(id)
        .unwrap()
        .tags
        .iter()
        .map(ToString::to_string)
        .collect()
}

/// In-process client over the router.
pub struct Client {
    pub state: Arc<AppState>,
}

impl Client {
    pub async fn call(
        &self,
        method: &str,
        uri: &str,
        body: Option<Value>,
        request_id: Option<&str>,
    ) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(id) = request_id {
            req = req.header(seqal_server::REQUEST_ID_HEADER, id);
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = router(self.state.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap()
        };
        (status, value)
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call("GET", uri, None, None).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call("POST", uri, Some(body), None).await
    }

    pub async fn status(&self) -> SessionStatus {
        let (code, v) = self.get("/session/status").await;
        assert_eq!(code, StatusCode::OK, "{v}");
        serde_json::from_value(v).unwrap()
    }

    pub async fn next(&self) -> Option<TaskView> {
        let (code, v) = self.get("/tasks/next").await;
        match code {
            StatusCode::OK => Some(serde_json::from_value(v).unwrap()),
            StatusCode::NO_CONTENT => None,
            other => panic!("unexpected {other}: {v}"),
        }
    }

    pub async fn submit(&self, id: usize, tags: Vec<String>) -> (StatusCode, Value) {
        self.post(&format!("/tasks/{id}/labels"), json!({ "tags": tags }))
            .await
    }

    /// Polls until `pred` holds on the status.
    pub async fn wait_until(&self, pred: impl Fn(&SessionStatus) -> bool) -> SessionStatus {
        for _ in 0..6000 {
            let s = self.status().await;
            if pred(&s) {
                return s;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("condition not reached: {:?}", self.status().await);
    }
}
