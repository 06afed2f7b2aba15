//! A session labeled over HTTP with gold tags logs exactly what the batch simulator logs.

mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{gold_tags, session_config};
use seqal::active::{run_experiment, PreparedCorpus, SystemClock, TaskView};
use seqal::strategies::Strategy;
use seqal_server::{serve, AppState, SessionStatus, StartRequest};
use serde_json::json;

#[tokio::test(flavor = "multi_thread")]
async fn http_session_matches_in_process_run() {
    let cfg = session_config(Strategy::Ltp, 6, 3);
    let data = seqal::active::prepare_dataset(&cfg).unwrap();
    let corpus = Arc::new(PreparedCorpus::new(data.clone(), &cfg.templates).unwrap());
    let expected = run_experiment(&cfg, corpus, Strategy::Ltp)
        .unwrap()
        .to_json();

    let dir = tempfile::tempdir().unwrap();
    let state =
        AppState::open(dir.path(), Arc::new(SystemClock), Duration::from_secs(600)).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, state.clone(), async {
        let _ = stopped.await;
    }));

    let http = reqwest::Client::new();
    let start = StartRequest {
        config: cfg.clone(),
        seed_index: 0,
    };
    let r = http
        .post(format!("{base}/session/start"))
        .json(&start)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 200);

    loop {
        let s: SessionStatus = http
            .get(format!("{base}/session/status"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        if s.phase == seqal::active::Phase::Finished {
            assert_eq!(s.iteration, cfg.n_iterations);
            break;
        }
        let r = http.get(format!("{base}/tasks/next")).send().await.unwrap();
        if r.status() == 204 {
            tokio::time::sleep(Duration::from_millis(10)).await;
            continue;
        }
        let task: TaskView = r.json().await.unwrap();
        let r = http
            .post(format!("{base}/tasks/{}/labels", task.task_id))
            .json(&json!({ "tags": gold_tags(&data, task.sentence_id) }))
            .send()
            .await
            .unwrap();
        assert_eq!(r.status(), 200);
    }

    let logged = std::fs::read_to_string(dir.path().join("log.json")).unwrap();
    assert_eq!(logged, expected);
    state.shutdown();
    stop.send(()).unwrap();
    server.await.unwrap().unwrap();
}
