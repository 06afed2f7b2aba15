//! Starts the annotation service in-process and plays a scripted annotator
//! that answers every task with the gold tags, printing the learning curve
//! as the session advances.
//!
//! ```text
//! cargo run -p seqal-server --example scripted_annotator
//! ```

use std::sync::Arc;
use std::time::Duration;

use seqal::active::{prepare_dataset, ExperimentConfig, Phase, SystemClock, TaskView};
use seqal::strategies::Strategy;
use seqal_server::{AppState, SessionStatus, StartRequest};
use serde_json::json;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ExperimentConfig {
        strategies: vec![Strategy::Ltp],
        n_seeds: 1,
        n_iterations: 4,
        ..ExperimentConfig::default()
    };
    let gold = prepare_dataset(&config)?;
    let dir = tempfile::tempdir()?;
    let state = AppState::open(dir.path(), Arc::new(SystemClock), Duration::from_secs(600))?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(seqal_server::serve(
        listener,
        state.clone(),
        std::future::pending(),
    ));

    let http = reqwest::Client::new();
    http.post(format!("{base}/session/start"))
        .json(&StartRequest {
            config,
            seed_index: 0,
        })
        .send()
        .await?
        .error_for_status()?;

    let mut reported = 0;
    loop {
        let status: SessionStatus = http
            .get(format!("{base}/session/status"))
            .send()
            .await?
            .json()
            .await?;
        for p in &status.curve[reported..] {
            println!(
                "iteration {}: token F1 {:.4}, sentence accuracy {:.4}",
                p.iteration, p.token_f1, p.sentence_accuracy
            );
        }
        reported = status.curve.len();
        if matches!(status.phase, Phase::Finished | Phase::Failed) {
            break;
        }
        let resp = http.get(format!("{base}/tasks/next")).send().await?;
        if resp.status() == reqwest::StatusCode::NO_CONTENT {
            tokio::time::sleep(Duration::from_millis(20)).await;
            continue;
        }
        let task: TaskView = resp.json().await?;
        let tags: Vec<String> = gold
            .get(task.sentence_id)
            .expect("known sentence")
            .tags
            .iter()
            .map(|t| t.to_string())
            .collect();
        http.post(format!("{base}/tasks/{}/labels", task.task_id))
            .json(&json!({ "tags": tags }))
            .send()
            .await?
            .error_for_status()?;
    }
    tokio::task::spawn_blocking(move || state.shutdown()).await?;
    Ok(())
}
