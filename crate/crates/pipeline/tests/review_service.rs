mod common;

use std::collections::BTreeSet;
use std::fs;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cfos_core::Provenance;
use cfos_pipeline::iterate::{Decision, ReviewStatus, ReviewStore};
use cfos_pipeline::service::{router, AppState, StatusBody};
use cfos_pipeline::{run_pipeline, PipelineConfig, RunOptions};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::tiny_corpus;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn get_json(app: &Router, uri: &str) -> Value {
    let (code, body) = call(app, "GET", uri, None).await;
    assert_eq!(code, StatusCode::OK, "{uri}");
    serde_json::from_slice(&body).unwrap()
}

async fn status(app: &Router) -> StatusBody {
    serde_json::from_value(get_json(app, "/api/status").await).unwrap()
}

async fn decide(app: &Router, id: &str, decision: &str) -> StatusCode {
    call(app, "POST", &format!("/api/items/{id}/decision"), Some(json!({ "decision": decision })))
        .await
        .0
}

/// A completed tiny run with a review queue of `batch` items.
fn reviewed_corpus(dir: &std::path::Path, batch: usize, cols: usize, rows: usize) -> (PipelineConfig, ReviewStore) {
    let mut cfg = tiny_corpus(dir, cols, rows);
    cfg.iterate.batch = batch;
    run_pipeline(&cfg, RunOptions::default()).unwrap();
    let store = ReviewStore::init(&cfg).unwrap();
    (cfg, store)
}

async fn wait_for_round(app: &Router, round: usize) -> StatusBody {
    for _ in 0..600 {
        let s = status(app).await;
        if s.round == round && !s.training {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    panic!("round {round} never finished");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn accept_ten_of_twenty_five_then_train() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, store) = reviewed_corpus(dir.path(), 25, 8, 5);
    let work = cfg.work_dir();
    let base_images = store.round_training_images(0).unwrap();
    let app = router(AppState::new(store, cfg.clone()), None);
    assert_eq!(
        status(&app).await,
        StatusBody { pending: 25, accepted: 0, rejected: 0, round: 0, training: false, last_error: None }
    );

    let mut seen = BTreeSet::new();
    let mut shown_masks = Vec::new();
    for i in 0..25 {
        let item = get_json(&app, "/api/queue/next").await;
        let id = item["id"].as_str().unwrap().to_string();
        assert!(seen.insert(id.clone()), "item {id} handed out twice");
        let (code, image) = call(&app, "GET", &format!("/api/items/{id}/image"), None).await;
        assert_eq!(code, StatusCode::OK);
        assert_eq!(&image[1..4], b"PNG");
        let (_, mask) = call(&app, "GET", &format!("/api/items/{id}/mask"), None).await;
        let (code, overlay) = call(&app, "GET", &format!("/api/items/{id}/overlay"), None).await;
        assert_eq!(code, StatusCode::OK);
        assert_eq!(&overlay[1..4], b"PNG");
        if i < 10 {
            shown_masks.push((item["tile"].as_str().unwrap().to_string(), mask));
        }
        assert_eq!(decide(&app, &id, if i < 10 { "accept" } else { "reject" }).await, StatusCode::OK);
        assert_eq!(decide(&app, &id, "accept").await, StatusCode::CONFLICT);
    }
    assert_eq!(get_json(&app, "/api/queue/next").await, json!({ "empty": true }));
    let s = status(&app).await;
    assert_eq!((s.pending, s.accepted, s.rejected, s.round), (0, 10, 15, 0));

    let (code, _) = call(&app, "POST", "/api/train", None).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    let (code, _) = call(&app, "POST", "/api/train", None).await;
    assert_eq!(code, StatusCode::CONFLICT);
    let s = wait_for_round(&app, 1).await;
    assert_eq!(s.last_error, None);

    // Reopen from disk: the log alone restores every decision.
    let store = ReviewStore::open(&work).unwrap();
    let st = store.status();
    assert_eq!((st.accepted, st.rejected, st.round), (10, 15, 1));
    let manifest = store.round_manifest(1).unwrap();
    let base = store.round_manifest(0).unwrap();
    let iteration: Vec<_> = manifest.entries.iter().filter(|e| e.provenance == Provenance::Iteration).collect();
    assert_eq!(iteration.len(), 10);
    assert_eq!(manifest.len(), base.len() + 10);
    assert_eq!(store.training_manifest(1).unwrap(), manifest);
    assert!(store.round_training_images(1).unwrap().is_superset(&base_images));

    // Accepted masks are the exact bytes shown to the reviewer.
    let round_dir = store.dir().join("round-1");
    for (tile, shown) in shown_masks {
        let e = iteration
            .iter()
            .find(|e| e.image_path.file_stem().unwrap() == tile.as_str())
            .unwrap();
        assert_eq!(fs::read(round_dir.join(&e.mask_path)).unwrap(), shown);
    }
    assert_eq!(store.state().lineage.len(), 2);
    for m in &store.state().lineage {
        cfos_core::nn::load_params(store.dir().join(m)).unwrap();
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn hundred_concurrent_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, store) = reviewed_corpus(dir.path(), 100, 12, 10);
    let ids: Vec<String> = store.items().iter().map(|i| i.id.clone()).collect();
    assert_eq!(ids.len(), 100);
    let work = cfg.work_dir();
    let app = router(AppState::new(store, cfg), None);
    let tasks: Vec<_> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let app = app.clone();
            let id = id.clone();
            tokio::spawn(async move { decide(&app, &id, if i % 2 == 0 { "accept" } else { "reject" }).await })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let s = status(&app).await;
    assert_eq!((s.pending, s.accepted, s.rejected), (0, 50, 50));
    let log = fs::read_to_string(ReviewStore::dir_in(&work).join("decisions.jsonl")).unwrap();
    let logged: Vec<&str> = log.lines().collect();
    assert_eq!(logged.len(), 100);
    let unique: BTreeSet<String> = logged
        .iter()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(unique.len(), 100);
}

#[tokio::test]
async fn unknown_items_and_bad_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, store) = reviewed_corpus(dir.path(), 3, 4, 3);
    let app = router(AppState::new(store, cfg), None);
    assert_eq!(decide(&app, "r0-99-99", "accept").await, StatusCode::NOT_FOUND);
    let (code, _) = call(&app, "GET", "/api/items/r0-99-99/image", None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    let id = get_json(&app, "/api/queue/next").await["id"].as_str().unwrap().to_string();
    assert_eq!(decide(&app, &id, "maybe").await, StatusCode::UNPROCESSABLE_ENTITY);
    let s = status(&app).await;
    assert_eq!((s.pending, s.accepted), (3, 0));
}

#[test]
fn all_rejected_round_matches_previous_model() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, mut store) = reviewed_corpus(dir.path(), 4, 4, 4);
    let ids: Vec<String> = store.items().iter().map(|i| i.id.clone()).collect();
    for id in &ids {
        store.decide(id, Decision::Reject).unwrap();
    }
    assert!(matches!(
        store.decide(&ids[0], Decision::Accept),
        Err(cfos_pipeline::PipelineError::AlreadyDecided(_))
    ));
    store.train_next(&cfg).unwrap();
    let lineage = store.state().lineage.clone();
    let r0 = fs::read(store.dir().join(&lineage[0])).unwrap();
    let r1 = fs::read(store.dir().join(&lineage[1])).unwrap();
    assert_eq!(r0, r1);
    assert_eq!(store.round_manifest(0).unwrap(), store.round_manifest(1).unwrap());
    // The new round queues fresh tiles only.
    let fresh: Vec<_> = store.items().iter().filter(|i| i.round == 1).collect();
    assert!(!fresh.is_empty());
    assert!(fresh.iter().all(|i| i.status == ReviewStatus::Pending));
    let old: BTreeSet<_> = store.items().iter().filter(|i| i.round == 0).map(|i| &i.tile).collect();
    assert!(fresh.iter().all(|i| !old.contains(&i.tile)));
}

#[test]
fn serve_requires_a_queue() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_corpus(dir.path(), 3, 3);
    assert!(matches!(
        ReviewStore::open(&cfg.work_dir()),
        Err(cfos_pipeline::PipelineError::NoQueue(_))
    ));
}
