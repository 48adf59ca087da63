//! Store fixtures and service contract checks shared by the integration
//! tests and the acceptance harness.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vecest::config::AppConfig;
use vecest_service::api::{router, AppState, Hook, JobHooks};
use vecest_service::cli::main_with_args;
use vecest_service::store::ModelStore;

pub const TINY_CONFIG: &str = "\
[model]
embed_dim = 4
top_k = 2
window = 2
heads = 2
mlp_hidden = 3

[meta]
epochs = 2
finetune_max_steps = 4
";

pub type Check = std::result::Result<String, String>;

pub fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

pub fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY_CONFIG).unwrap();
    path
}

pub fn tiny_app_config() -> AppConfig {
    AppConfig::from_toml(TINY_CONFIG).unwrap()
}

/// Runs the CLI in-process with `--store` and `--config` prepended.
pub fn cli(store: &Path, config: &Path, args: &[&str]) -> i32 {
    let mut argv = vec![
        "vecest".to_string(),
        "--store".into(),
        store.display().to_string(),
        "--config".into(),
        config.display().to_string(),
    ];
    argv.extend(args.iter().map(|a| a.to_string()));
    main_with_args(argv)
}

/// A store with four synthetic drivers and a trained global model.
pub fn trained_store(dir: &Path) -> (ModelStore, AppConfig) {
    let cfg_path = write_config(dir);
    let store = dir.join("store");
    assert_eq!(cli(&store, &cfg_path, &["--seed", "3", "generate", "--drivers", "4"]), 0);
    assert_eq!(cli(&store, &cfg_path, &["--seed", "3", "train"]), 0);
    let mut cfg = tiny_app_config();
    cfg.meta.seed = 3;
    cfg.model.selection_seed = 3;
    (ModelStore::new(store), cfg)
}

pub async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

/// A driver id and one of its routes from the store.
pub fn sample_route(store: &ModelStore) -> (String, Vec<String>) {
    let trips = store.load_trips().unwrap();
    let t = trips.iter().max_by_key(|t| t.route.segments.len()).unwrap();
    (t.driver_id.clone(), t.route.segments.clone())
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap()
}

/// Estimate shape, health, network, 404 with and without fallback, 422.
pub fn estimate_contract(dir: &Path) -> Check {
    let (store, cfg) = trained_store(dir);
    let global = store.load_global().map_err(|e| e.to_string())?;
    let (driver, route) = sample_route(&store);
    let state = AppState::start(store.clone(), cfg, JobHooks::default()).map_err(|e| e.to_string())?;
    let app = router(state);
    runtime().block_on(async {
        let (s, health) = call(&app, "GET", "/health", None).await;
        ensure(s == StatusCode::OK, format!("health returned {s}"))?;
        ensure(health["global_model"] == json!(global.meta.tensor_sha256), "health names the global model")?;

        let (s, net) = call(&app, "GET", "/network", None).await;
        ensure(s == StatusCode::OK, format!("network returned {s}"))?;
        let segs = net["segments"].as_array().ok_or("network has no segment list")?;
        ensure(segs.len() == store.load_network().unwrap().len(), "network lists every segment")?;
        ensure(segs.iter().all(|s| s["polyline"].is_array()), "every segment carries a polyline")?;

        let body = json!({ "driver_id": driver, "segment_ids": route, "departure_time": "2018-03-05T08:30" });
        let (s, est) = call(&app, "POST", "/estimate", Some(body.clone())).await;
        ensure(s == StatusCode::OK, format!("estimate returned {s}: {est}"))?;
        let out = est["segments"].as_array().ok_or("estimate has no segments")?;
        ensure(out.len() == route.len(), format!("{} segments for a route of {}", out.len(), route.len()))?;
        for (o, id) in out.iter().zip(&route) {
            ensure(o["id"] == json!(id), "segment ids follow the route order")?;
            ensure(o["predicted_energy"].as_f64().is_some_and(f64::is_finite), "segment energy is a number")?;
            ensure(o["predicted_speed"].as_f64().is_some_and(f64::is_finite), "segment speed is a number")?;
        }
        ensure(est["total_energy"].as_f64().is_some_and(f64::is_finite), "total energy is a number")?;
        ensure(est["model"] == json!("global"), "no driver checkpoint yet, so the global model answers")?;
        ensure(est["model_version"] == json!(global.meta.tensor_sha256), "model_version is the checkpoint digest")?;

        let (s2, est2) = call(&app, "POST", "/estimate", Some(body)).await;
        ensure(s2 == StatusCode::OK && est2 == est, "repeated estimates are identical")?;

        let unknown = json!({ "driver_id": "nobody", "segment_ids": route, "departure_time": 1520238600 });
        let (s, _) = call(&app, "POST", "/estimate", Some(unknown.clone())).await;
        ensure(s == StatusCode::NOT_FOUND, format!("unknown driver returned {s}"))?;
        let (s, fb) = call(&app, "POST", "/estimate?fallback=true", Some(unknown)).await;
        ensure(s == StatusCode::OK, format!("fallback returned {s}"))?;
        ensure(fb["model"] == json!("global") && fb["stats_fallback"] == json!(true), "fallback uses the global model")?;

        let bad = json!({ "driver_id": driver, "segment_ids": [route[0].clone(), "no-such-road"], "departure_time": 0 });
        let (s, err) = call(&app, "POST", "/estimate", Some(bad)).await;
        ensure(s == StatusCode::UNPROCESSABLE_ENTITY, format!("unknown segment returned {s}"))?;
        ensure(err["error"].as_str().is_some_and(|m| m.contains("no-such-road")), "422 names the segment")?;

        let (s, _) = call(&app, "GET", "/drivers/nobody/model", None).await;
        ensure(s == StatusCode::NOT_FOUND, "model metadata of an unknown driver is 404")?;
        let (s, _) = call(&app, "POST", "/drivers/nobody/finetune", None).await;
        ensure(s == StatusCode::NOT_FOUND, "fine-tuning an unknown driver is 404")?;
        Ok(format!("{} segments, 404/422 and fallback behave", route.len()))
    })
}

async fn wait_job(app: &axum::Router, id: &str) -> std::result::Result<Value, String> {
    let start = Instant::now();
    loop {
        let (_, job) = call(app, "GET", &format!("/jobs/{id}"), None).await;
        match job["state"].as_str() {
            Some("queued") | Some("running") => {}
            _ => return Ok(job),
        }
        if start.elapsed() > Duration::from_secs(120) {
            return Err(format!("job {id} did not finish"));
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

/// Blocks the worker before commit, checks 409 for a second request and
/// that estimates keep using the committed checkpoint until the swap.
pub fn finetune_isolation(dir: &Path) -> Check {
    let (store, cfg) = trained_store(dir);
    let global = store.load_global().map_err(|e| e.to_string())?;
    let (driver, route) = sample_route(&store);
    let (reached_tx, reached_rx) = mpsc::channel::<String>();
    let (release_tx, release_rx) = mpsc::channel::<()>();
    let reached_tx = Mutex::new(reached_tx);
    let release_rx = Mutex::new(release_rx);
    let hook: Hook = Arc::new(move |id: &str| {
        reached_tx.lock().unwrap().send(id.to_string()).unwrap();
        release_rx.lock().unwrap().recv().unwrap();
    });
    let state = AppState::start(store.clone(), cfg, JobHooks { before_commit: Some(hook) }).map_err(|e| e.to_string())?;
    let app = router(state);
    runtime().block_on(async {
        let trips = store.load_trips().unwrap();
        let requests: Vec<Value> = trips
            .iter()
            .filter(|t| t.driver_id == driver)
            .take(6)
            .map(|t| json!({ "driver_id": driver, "segment_ids": t.route.segments, "departure_time": t.departure_time }))
            .collect();
        let mut before = Vec::new();
        for r in &requests {
            before.push(call(&app, "POST", "/estimate", Some(r.clone())).await.1);
        }

        let (s, job) = call(&app, "POST", &format!("/drivers/{driver}/finetune"), None).await;
        ensure(s == StatusCode::ACCEPTED, format!("first fine-tune returned {s}"))?;
        let job_id = job["job_id"].as_str().ok_or("202 carries a job id")?.to_string();
        let (s, second) = call(&app, "POST", &format!("/drivers/{driver}/finetune"), None).await;
        ensure(s == StatusCode::CONFLICT, format!("second fine-tune returned {s}"))?;
        ensure(second["job_id"] == json!(job_id), "409 names the active job")?;

        let reached = tokio::task::spawn_blocking(move || reached_rx.recv_timeout(Duration::from_secs(120)))
            .await
            .unwrap()
            .map_err(|_| "worker never reached the commit point")?;
        ensure(reached == driver, "worker fine-tunes the requested driver")?;
        for (r, b) in requests.iter().zip(&before) {
            let (s, now) = call(&app, "POST", "/estimate", Some(r.clone())).await;
            ensure(s == StatusCode::OK && &now == b, "estimates during the job match the committed snapshot")?;
        }
        let (_, meta) = call(&app, "GET", &format!("/drivers/{driver}/model"), None).await;
        ensure(meta["model"] == json!("global"), "metadata still reports the global model mid-job")?;
        release_tx.send(()).unwrap();

        let done = wait_job(&app, &job_id).await?;
        ensure(done["state"] == json!("succeeded"), format!("job ended as {done}"))?;
        let version = done["model_version"].as_str().ok_or("finished job names its checkpoint")?.to_string();
        // Early stopping may keep the global parameters, so the digest can
        // equal the parent's; the checkpoint itself must still be separate.
        ensure(store.load_driver(&driver).map_err(|e| e.to_string())?.is_some(), "driver checkpoint was committed")?;

        let body = json!({ "driver_id": driver, "segment_ids": route, "departure_time": 1520238600 });
        let (_, est) = call(&app, "POST", "/estimate", Some(body)).await;
        ensure(est["model"] == json!("driver") && est["model_version"] == json!(version), "new estimates use the driver checkpoint")?;
        let (_, meta) = call(&app, "GET", &format!("/drivers/{driver}/model"), None).await;
        ensure(meta["meta"]["parent_sha256"] == json!(global.meta.tensor_sha256), "driver checkpoint references its global parent")?;

        let (s, _) = call(&app, "POST", &format!("/drivers/{driver}/finetune"), None).await;
        ensure(s == StatusCode::ACCEPTED, "a driver can be fine-tuned again once the job is done")?;
        Ok(format!("409 while active, {} estimates unchanged mid-job", requests.len()))
    })
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_vecest"))
}

fn run_bin(store: &Path, config: &Path, args: &[&str], fault: Option<&str>) -> std::process::ExitStatus {
    let mut cmd = Command::new(bin());
    cmd.env_remove("PEC_STORE").env("RUST_LOG", "error").arg("--store").arg(store).arg("--config").arg(config).args(args);
    if let Some(f) = fault {
        cmd.env("VECEST_FAULT", f);
    }
    cmd.stdout(std::process::Stdio::null()).stderr(std::process::Stdio::null());
    cmd.status().unwrap()
}

fn loaded_digest(store: &ModelStore) -> std::result::Result<Option<String>, String> {
    if !store.has_global() {
        return Ok(None);
    }
    store.load_global().map(|c| Some(c.meta.tensor_sha256)).map_err(|e| format!("store is not loadable: {e}"))
}

/// Aborts `train` at every step of the save protocol and kills it at
/// arbitrary times; the store must always load a complete checkpoint.
pub fn kill_injection(dir: &Path) -> Check {
    let cfg = write_config(dir);
    let store_dir = dir.join("store");
    let store = ModelStore::new(&store_dir);
    ensure(run_bin(&store_dir, &cfg, &["--seed", "5", "generate", "--drivers", "3"], None).success(), "generate failed")?;

    // First save ever: an interrupted save must leave no checkpoint at all.
    ensure(!run_bin(&store_dir, &cfg, &["--seed", "1", "train"], Some("meta_written")).success(), "fault did not fire")?;
    ensure(loaded_digest(&store)?.is_none(), "uncommitted first save is visible")?;

    ensure(run_bin(&store_dir, &cfg, &["--seed", "1", "train"], None).success(), "train failed")?;
    let first = loaded_digest(&store)?.ok_or("no checkpoint after train")?;

    let other_dir = dir.join("reference");
    std::fs::create_dir_all(other_dir.join("data")).unwrap();
    std::fs::copy(store_dir.join("network.json"), other_dir.join("network.json")).unwrap();
    std::fs::copy(store_dir.join("data/trips.jsonl"), other_dir.join("data/trips.jsonl")).unwrap();
    ensure(run_bin(&other_dir, &cfg, &["--seed", "2", "train"], None).success(), "reference train failed")?;
    let second = loaded_digest(&ModelStore::new(&other_dir))?.ok_or("no reference checkpoint")?;

    let mut crashes = 0;
    for point in ["tensor_written", "tensor_renamed", "meta_written"] {
        let status = run_bin(&store_dir, &cfg, &["--seed", "2", "train"], Some(point));
        ensure(!status.success(), format!("fault {point} did not fire"))?;
        crashes += 1;
        ensure(loaded_digest(&store)? == Some(first.clone()), format!("after a crash at {point} the old checkpoint must load"))?;
    }
    let status = run_bin(&store_dir, &cfg, &["--seed", "2", "train"], Some("meta_committed"));
    ensure(!status.success(), "fault meta_committed did not fire")?;
    crashes += 1;
    ensure(loaded_digest(&store)? == Some(second.clone()), "a crash after the commit point keeps the new checkpoint")?;

    // Hard kills at arbitrary moments of a longer training run: a killed
    // run must leave the previous checkpoint, a finished one its own.
    let slow = dir.join("slow.toml");
    std::fs::write(&slow, TINY_CONFIG.replace("epochs = 2", "epochs = 60\npatience = 0")).unwrap();
    let mut current = second.clone();
    let mut kills = 0;
    for (i, delay_ms) in [30u64, 150, 400, 800, 1500, 2500].into_iter().enumerate() {
        let mut child = Command::new(bin())
            .env_remove("PEC_STORE")
            .env("RUST_LOG", "error")
            .arg("--store")
            .arg(&store_dir)
            .arg("--config")
            .arg(&slow)
            .args(["--seed", &(10 + i).to_string(), "train"])
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::null())
            .spawn()
            .unwrap();
        std::thread::sleep(Duration::from_millis(delay_ms));
        let killed = child.try_wait().unwrap().is_none();
        if killed {
            child.kill().unwrap();
            kills += 1;
        }
        let status = child.wait().unwrap();
        let d = loaded_digest(&store)?.ok_or("checkpoint disappeared after a kill")?;
        if killed {
            ensure(d == current, "a killed run changed the committed checkpoint")?;
        } else {
            ensure(status.success(), "an unkilled run failed")?;
            current = d;
        }
    }
    ensure(kills > 0, "no run was still alive to kill")?;

    // Corruption of the committed tensor file is detected, not loaded.
    let meta = store.load_global().unwrap().meta;
    let tensor = store.global_dir().join(&meta.tensor_file);
    let mut bytes = std::fs::read(&tensor).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&tensor, &bytes).unwrap();
    ensure(store.load_global().is_err(), "a corrupted tensor file loaded")?;
    Ok(format!("{crashes} injected crashes and {kills} kills left a loadable store"))
}
