use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use gearcalib::calibration::{apply_calibration, build_pack, PackInputs};
use gearcalib::dataset::compute_camera_ratio;
use gearcalib::ratio::predict_pooled_ratio;
use gearcalib::simulation::fixture::default_fixture;
use gearcalib::{Camera, CalibrationPack, ModelConfig, PosteriorDraws};
use gearcalib_service::{router, PackState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixture_pack_json() -> String {
    let fx = default_fixture().unwrap();
    let names = fx.trips.iter().map(|t| format!("log_phi[{}]", t.trip_id)).collect();
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|m| {
            fx.trips
                .iter()
                .enumerate()
                .map(|(s, t)| (t.adjusted_acoustic() + 1.0).ln() + 0.1 * (((m * 31 + s * 7) % 17) as f64 / 8.0 - 1.0))
                .collect()
        })
        .collect();
    let draws = PosteriorDraws::from_chains(names, vec![rows]).unwrap();
    let ratios: Vec<[Option<f64>; 4]> = fx
        .trips
        .iter()
        .map(|t| Camera::ALL.map(|c| compute_camera_ratio(&fx.species, &t.trip_id, c).unwrap()))
        .collect();
    let pack = build_pack(&PackInputs {
        draws: &draws,
        trips: &fx.trips,
        model_config: &ModelConfig::final_model(),
        seed: 1,
        camera_ratios: Some(&ratios),
    })
    .unwrap();
    pack.to_json().unwrap()
}

fn app(text: &str, cors: &[&str]) -> axum::Router {
    let state = Arc::new(PackState::from_bytes(text.as_bytes().to_vec()).unwrap());
    let allow: Vec<String> = cors.iter().map(|s| s.to_string()).collect();
    router(state, &allow).unwrap()
}

async fn send(app: &axum::Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

fn post(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri).header(header::CONTENT_TYPE, "application/json").body(Body::from(body.to_string())).unwrap()
}

#[tokio::test]
async fn pack_is_served_byte_for_byte_with_stable_etag() {
    let text = fixture_pack_json();
    let app = app(&text, &[]);
    let (status, headers, body) = send(&app, Request::get("/pack").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, text.as_bytes());
    let etag = headers[header::ETAG].clone();
    let (_, again, _) = send(&app, Request::get("/pack").body(Body::empty()).unwrap()).await;
    assert_eq!(again[header::ETAG], etag);
    let cond = Request::get("/pack").header(header::IF_NONE_MATCH, etag).body(Body::empty()).unwrap();
    assert_eq!(send(&app, cond).await.0, StatusCode::NOT_MODIFIED);
    CalibrationPack::from_json(std::str::from_utf8(&body).unwrap()).unwrap();
}

#[tokio::test]
async fn calibrate_matches_library() {
    let text = fixture_pack_json();
    let pack = CalibrationPack::from_json(&text).unwrap();
    let app = app(&text, &[]);
    for camera in ["D", "S", "T", "R"] {
        for maxn in [0, 3, 17] {
            let (status, _, body) = send(&app, post("/calibrate", json!({"camera": camera, "maxn": maxn}))).await;
            assert_eq!(status, StatusCode::OK);
            let v: Value = serde_json::from_slice(&body).unwrap();
            let lib = apply_calibration(&pack, camera.parse().unwrap(), maxn).unwrap();
            assert_eq!(v["estimate"].as_f64().unwrap(), lib.estimate);
            assert_eq!(v["approx_se"].as_f64().unwrap(), lib.approx_se);
            let rows = v["calibration_error_context"].as_array().unwrap();
            assert_eq!(rows.len(), pack.camera(camera.parse().unwrap()).unwrap().error_table.len());
        }
    }
    let (_, _, body) =
        send(&app, post("/calibrate", json!({"camera": "S", "maxn": 2, "reef_type": "super pyramid"}))).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    let rows = v["calibration_error_context"].as_array().unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r["reef_type"] == "super pyramid"));
}

#[tokio::test]
async fn calibrate_rejects_bad_input() {
    let app = app(&fixture_pack_json(), &[]);
    for body in [json!({"camera": "S", "maxn": -1}), json!({"camera": "X", "maxn": 1}), json!({"camera": "S"})] {
        let (status, _, out) = send(&app, post("/calibrate", body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        let v: Value = serde_json::from_slice(&out).unwrap();
        assert!(v["error"].is_string());
    }
}

#[tokio::test]
async fn predict_ratio_matches_library_and_rejects_bad_ratio() {
    let text = fixture_pack_json();
    let pack = CalibrationPack::from_json(&text).unwrap();
    let app = app(&text, &[]);
    let model = &pack.paired[0];
    let code = model.camera.to_string();
    let (status, _, body) = send(&app, post("/predict-ratio", json!({"camera": code, "maxn": 4, "camratio": 0.5}))).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    let lib = predict_pooled_ratio(model, 4, 0.5).unwrap();
    assert_eq!(v["r_hat"].as_f64().unwrap(), lib.r_hat);
    assert_eq!(v["pred_se"].as_f64().unwrap(), lib.pred_se);
    assert_eq!(v["flags"]["out_of_range"].as_bool().unwrap(), lib.out_of_range);
    assert!(v["caveat"].as_str().unwrap().contains("not established"));

    let (status, _, _) = send(&app, post("/predict-ratio", json!({"camera": code, "maxn": 4, "camratio": 2.0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, _) = send(&app, post("/predict-ratio", json!({"camera": code, "maxn": -4, "camratio": 0.2}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn replayed_requests_give_identical_responses() {
    let app = app(&fixture_pack_json(), &[]);
    let log = [
        ("/calibrate", json!({"camera": "T", "maxn": 5})),
        ("/predict-ratio", json!({"camera": "S", "maxn": 1, "camratio": 0.3})),
        ("/calibrate", json!({"camera": "D", "maxn": 0})),
    ];
    let mut first = Vec::new();
    for (uri, body) in &log {
        first.push(send(&app, post(uri, body.clone())).await.2);
    }
    for ((uri, body), expected) in log.iter().rev().zip(first.iter().rev()) {
        assert_eq!(&send(&app, post(uri, body.clone())).await.2, expected);
    }
}

#[tokio::test]
async fn cors_allows_only_listed_origins() {
    let app = app(&fixture_pack_json(), &["http://localhost:5173"]);
    let req = |origin: &str| Request::get("/pack").header(header::ORIGIN, origin).body(Body::empty()).unwrap();
    let (_, ok, _) = send(&app, req("http://localhost:5173")).await;
    assert_eq!(ok[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://localhost:5173");
    let (_, other, _) = send(&app, req("http://evil.example")).await;
    assert!(other.get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());
}

#[test]
fn invalid_pack_is_rejected_at_startup() {
    let mut v: Value = serde_json::from_str(&fixture_pack_json()).unwrap();
    v["schema"] = json!("something/v0");
    assert!(PackState::from_bytes(v.to_string().into_bytes()).is_err());
    assert!(PackState::from_bytes(b"{".to_vec()).is_err());
}
