//! Start the HTTP service in-process on an ephemeral port, protect a face via
//! `POST /embed` and check it via `POST /verify`.
//!
//! cargo run --release -p faceprotect-app --example service_client -- <godwgm_ckpt> <wvs_ckpt> [face.png]

use std::sync::Arc;

use faceprotect::datasets::synthetic_face;
use faceprotect::pipeline::Models;
use faceprotect::verify::DEFAULT_TAU;
use faceprotect_app::service::{serve, AppState};
use reqwest::multipart::{Form, Part};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [godwgm, wvs, rest @ ..] = args.as_slice() else {
        anyhow::bail!("usage: service_client <godwgm_ckpt> <wvs_ckpt> [face.png]");
    };
    let face = match rest.first() {
        Some(p) => std::fs::read(p)?,
        None => synthetic_face(900, 0).encode_png()?,
    };
    let models = Models::load(godwgm, wvs).map_err(|e| e.to_string());
    let state = AppState::new(models, DEFAULT_TAU, None)?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, Arc::new(state), async {
        let _ = stopped.await;
    }));
    println!("serving on {base}");

    let client = reqwest::Client::new();
    let health: serde_json::Value = client.get(format!("{base}/health")).send().await?.json().await?;
    println!("GET /health -> {health}");

    let form = Form::new().part("image", Part::bytes(face).file_name("face.png"));
    let resp = client.post(format!("{base}/embed")).multipart(form).send().await?;
    println!("POST /embed -> {}", resp.status());
    if let Some(h) = resp.headers().get("x-faceprotect-embed") {
        println!("  embed record {}", h.to_str()?);
    }
    let protected = resp.error_for_status()?.bytes().await?;

    let form = Form::new().part("image", Part::bytes(protected.to_vec()).file_name("protected.png"));
    let report: serde_json::Value =
        client.post(format!("{base}/verify")).multipart(form).send().await?.error_for_status()?.json().await?;
    println!("POST /verify -> {}", serde_json::to_string_pretty(&report["verdict"])?);

    let _ = stop.send(());
    server.await??;
    Ok(())
}
