mod common;

use std::path::Path;
use std::sync::Arc;

use common::{save_face, trained};
use faceprotect::image::RgbImage;
use faceprotect::pipeline::Models;
use faceprotect_app::service::{serve, AppState};
use reqwest::multipart::{Form, Part};
use reqwest::StatusCode;
use tokio::sync::oneshot;

struct Server {
    base: String,
    stop: Option<oneshot::Sender<()>>,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Server {
    async fn start(state: AppState) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        let handle = tokio::spawn(serve(listener, Arc::new(state), async {
            let _ = rx.await;
        }));
        Self {
            base,
            stop: Some(tx),
            handle,
        }
    }

    async fn shutdown(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        self.handle.await.unwrap().unwrap();
    }
}

fn loaded(log: Option<&Path>) -> AppState {
    let ck = trained();
    let models = Models::load(ck.join("godwgm"), ck.join("wvs")).map_err(|e| e.to_string());
    AppState::new(models, 0.8, log).unwrap()
}

fn png(img: &RgbImage) -> Vec<u8> {
    img.encode_png().unwrap()
}

fn upload(bytes: Vec<u8>) -> Form {
    Form::new().part("image", Part::bytes(bytes).file_name("face.png").mime_str("image/png").unwrap())
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn embed_then_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("requests.ndjson");
    let server = Server::start(loaded(Some(&log))).await;
    let client = reqwest::Client::new();
    let face = std::fs::read(save_face(dir.path(), "face.png", 3)).unwrap();

    let resp = client.post(format!("{}/embed", server.base)).multipart(upload(face)).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/png");
    let record: serde_json::Value =
        serde_json::from_str(resp.headers()["x-faceprotect-embed"].to_str().unwrap()).unwrap();
    assert_eq!(record["schema"], "faceprotect-embed/1");
    let protected = resp.bytes().await.unwrap();
    let decoded = RgbImage::decode(&protected).unwrap();
    assert_eq!((decoded.width(), decoded.height()), (256, 256));

    let resp = client
        .post(format!("{}/verify", server.base))
        .multipart(upload(protected.to_vec()))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let report: serde_json::Value = resp.json().await.unwrap();
    assert_eq!(report["schema"], "faceprotect-report/1");
    assert!(["REAL", "FAKE_OR_UNPROTECTED"].contains(&report["verdict"]["label"].as_str().unwrap()));
    assert_eq!(report["godwgm_id"], record["godwgm_id"]);

    // Raw bodies are accepted too.
    let resp = client
        .post(format!("{}/verify", server.base))
        .body(protected.to_vec())
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);

    server.shutdown().await;
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["endpoint"], "/embed");
    assert!(lines.iter().all(|l| l["status"] == 200));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_verifies_agree() {
    let server = Server::start(loaded(None)).await;
    let client = reqwest::Client::new();
    let bytes = png(&faceprotect::datasets::synthetic_face(4, 1));
    let calls = (0..6).map(|_| {
        let c = client.clone();
        let url = format!("{}/verify", server.base);
        let b = bytes.clone();
        tokio::spawn(async move {
            let r = c.post(url).multipart(upload(b)).send().await.unwrap();
            assert_eq!(r.status(), StatusCode::OK);
            r.json::<serde_json::Value>().await.unwrap()
        })
    });
    let mut reports = Vec::new();
    for c in calls {
        reports.push(c.await.unwrap());
    }
    for r in &reports[1..] {
        assert_eq!(r["verdict"], reports[0]["verdict"]);
        assert_eq!(r["recovered_hash"], reports[0]["recovered_hash"]);
    }
    server.shutdown().await;
}

#[tokio::test]
async fn unloaded_models_answer_503() {
    let state = AppState::new(Err("no checkpoint".into()), 0.8, None).unwrap();
    let server = Server::start(state).await;
    let client = reqwest::Client::new();
    let r = client.get(format!("{}/health", server.base)).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::SERVICE_UNAVAILABLE);
    let body = png(&faceprotect::datasets::synthetic_face(4, 1));
    for ep in ["embed", "verify"] {
        let r = client.post(format!("{}/{ep}", server.base)).body(body.clone()).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::SERVICE_UNAVAILABLE);
    }
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_and_faceless_uploads() {
    let server = Server::start(loaded(None)).await;
    let client = reqwest::Client::new();
    for body in [Vec::new(), b"not an image".to_vec()] {
        let r = client.post(format!("{}/verify", server.base)).body(body).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    }
    let r = client
        .post(format!("{}/embed", server.base))
        .multipart(upload(b"garbage".to_vec()))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);

    let flat = png(&RgbImage::filled(256, 256, [120, 120, 120]).unwrap());
    let r = client
        .post(format!("{}/embed", server.base))
        .multipart(upload(flat.clone()))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    // Verification of a faceless image is a verdict, not an error.
    let r = client.post(format!("{}/verify", server.base)).body(flat).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let report: serde_json::Value = r.json().await.unwrap();
    assert_eq!(report["verdict"]["label"], "FAKE_OR_UNPROTECTED");
    server.shutdown().await;
}
