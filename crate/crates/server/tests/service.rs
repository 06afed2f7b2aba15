//! Annotation service behaviour through the HTTP router.

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use axum::http::StatusCode;
use common::{gold, gold_tags, session_config, start_body, Client};
use seqal::active::{ManualClock, Phase, SystemClock};
use seqal::strategies::Strategy;
use seqal_server::AppState;
use serde_json::json;

const LEASE: Duration = Duration::from_secs(60);

fn open(dir: &std::path::Path, clock: Arc<ManualClock>) -> Client {
    Client {
        state: AppState::open(dir, clock, LEASE).unwrap(),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn labeling_a_batch_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::default());
    let client = open(dir.path(), clock.clone());
    let cfg = session_config(Strategy::Lc, 5, 3);
    let data = gold(&cfg);

    assert_eq!(client.get("/session/status").await.0, StatusCode::NOT_FOUND);
    assert_eq!(client.get("/tasks/next").await.0, StatusCode::NOT_FOUND);

    let (code, v) = client.post("/session/start", start_body(&cfg)).await;
    assert_eq!(code, StatusCode::OK, "{v}");
    let s = client.status().await;
    assert_eq!(
        (s.iteration, s.open_tasks, s.phase),
        (0, 5, Phase::Labeling)
    );
    assert_eq!(s.curve.len(), 1);
    assert_eq!(
        client.post("/session/start", start_body(&cfg)).await.0,
        StatusCode::CONFLICT
    );

    let mut seen = BTreeSet::new();
    let mut tasks = Vec::new();
    for _ in 0..5 {
        let t = client.next().await.unwrap();
        assert!(seen.insert(t.task_id));
        assert_eq!(t.tokens.len(), t.proposed.len());
        assert!(t.weakest_position < t.tokens.len());
        tasks.push(t);
    }
    assert!(client.next().await.is_none());

    clock.advance(LEASE + Duration::from_secs(1));
    let again = client.next().await.unwrap();
    assert!(seen.contains(&again.task_id));

    let t = &tasks[0];
    let mut tags = vec!["O".to_string(); t.tokens.len()];
    tags[1] = "I-GPE".into();
    let (code, v) = client.submit(t.task_id, tags.clone()).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["position"], 1);
    tags[1] = "X-Y".into();
    let (code, v) = client.submit(t.task_id, tags).await;
    assert_eq!(
        (code, v["position"].as_u64()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some(1))
    );
    let (code, _) = client.submit(t.task_id, vec!["O".into()]).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(
        client.submit(999_999, vec![]).await.0,
        StatusCode::NOT_FOUND
    );

    assert_eq!(
        client
            .submit(t.task_id, gold_tags(&data, t.task_id))
            .await
            .0,
        StatusCode::OK
    );
    assert_eq!(
        client
            .submit(t.task_id, gold_tags(&data, t.task_id))
            .await
            .0,
        StatusCode::CONFLICT
    );
    assert_eq!(
        client.post("/session/advance", json!({})).await.0,
        StatusCode::CONFLICT
    );

    for t in &tasks[1..] {
        assert_eq!(
            client
                .submit(t.task_id, gold_tags(&data, t.task_id))
                .await
                .0,
            StatusCode::OK
        );
    }
    let s = client
        .wait_until(|s| s.iteration == 1 && s.phase == Phase::Labeling)
        .await;
    assert_eq!((s.labeled, s.open_tasks, s.curve.len()), (15, 5, 2));
    let (code, _) = client.post("/session/advance", json!({})).await;
    assert_eq!(code, StatusCode::CONFLICT);
    client.state.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_restores_the_same_session() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = session_config(Strategy::Ltp, 4, 3);
    let data = gold(&cfg);
    let client = open(dir.path(), Arc::new(ManualClock::default()));
    client.post("/session/start", start_body(&cfg)).await;
    for _ in 0..4 {
        let t = client.next().await.unwrap();
        client.submit(t.task_id, gold_tags(&data, t.task_id)).await;
    }
    client
        .wait_until(|s| s.iteration == 1 && s.phase == Phase::Labeling)
        .await;
    let first = client.next().await.unwrap();
    client
        .submit(first.task_id, gold_tags(&data, first.task_id))
        .await;
    let before = client.status().await;
    client.state.shutdown();
    drop(client);

    let client = open(dir.path(), Arc::new(ManualClock::default()));
    let after = client.wait_until(|s| s.phase != Phase::Training).await;
    assert_eq!(after, before);
    let t = client.next().await.unwrap();
    assert_ne!(t.task_id, first.task_id);
    client.state.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn repeated_request_ids_replay_the_first_answer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = session_config(Strategy::Rand, 3, 2);
    let data = gold(&cfg);
    let client = open(dir.path(), Arc::new(ManualClock::default()));
    let a = client
        .call(
            "POST",
            "/session/start",
            Some(start_body(&cfg)),
            Some("s-1"),
        )
        .await;
    let b = client
        .call(
            "POST",
            "/session/start",
            Some(start_body(&cfg)),
            Some("s-1"),
        )
        .await;
    assert_eq!(a, b);
    assert_eq!(a.0, StatusCode::OK);

    let t = client.next().await.unwrap();
    let body = json!({ "tags": gold_tags(&data, t.task_id) });
    let uri = format!("/tasks/{}/labels", t.task_id);
    let first = client
        .call("POST", &uri, Some(body.clone()), Some("l-1"))
        .await;
    let replay = client
        .call("POST", &uri, Some(body.clone()), Some("l-1"))
        .await;
    assert_eq!(first, replay);
    assert_eq!(first.0, StatusCode::OK);
    assert_eq!(
        client.call("POST", &uri, Some(body), Some("l-2")).await.0,
        StatusCode::CONFLICT
    );
    client.state.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_start_requests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let client = Client {
        state: AppState::open(dir.path(), Arc::new(SystemClock), LEASE).unwrap(),
    };
    let mut two = session_config(Strategy::Lc, 5, 1);
    two.strategies.push(Strategy::Rand);
    assert_eq!(
        client.post("/session/start", start_body(&two)).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let mut big = session_config(Strategy::Lc, 5, 1);
    big.test_size = 10_000;
    assert_eq!(
        client.post("/session/start", start_body(&big)).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    assert!(client.state.session().is_none());
    assert!(!dir.path().join("session.json").exists());
}
