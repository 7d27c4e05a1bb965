#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chrono::TimeZone;
use http_body_util::BodyExt;
use sensor_service::config::ServiceConfig;
use sensor_service::mail::MemoryMailer;
use sensor_service::store::ManualClock;
use sensor_service::AppState;
use serde_json::{json, Value};
use tower::ServiceExt;

pub struct TestApp {
    pub router: Router,
    pub mailer: Arc<MemoryMailer>,
    pub clock: Arc<ManualClock>,
    pub state: AppState,
    pub dir: PathBuf,
}

pub const PASSWORD: &str = "s3cret-passphrase";

impl TestApp {
    pub fn new(dir: &std::path::Path) -> Self {
        Self::with_config(dir, |_| {})
    }

    pub fn with_config(dir: &std::path::Path, tweak: impl FnOnce(&mut ServiceConfig)) -> Self {
        let mut config = ServiceConfig {
            store_path: dir.join("sensor.db"),
            ..ServiceConfig::default()
        };
        tweak(&mut config);
        let mailer = Arc::new(MemoryMailer::default());
        let clock = Arc::new(ManualClock::new(chrono::Utc.with_ymd_and_hms(2025, 3, 1, 9, 0, 0).unwrap()));
        let state = AppState::new(config, mailer.clone(), clock.clone()).unwrap();
        TestApp {
            router: sensor_service::app(state.clone()),
            mailer,
            clock,
            state,
            dir: dir.to_path_buf(),
        }
    }

    pub async fn raw(&self, req: Request<Body>) -> (StatusCode, Bytes) {
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes())
    }

    pub async fn call(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let mut b = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            b = b.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(v) => b
                .header("content-type", "application/json")
                .body(Body::from(v.to_string()))
                .unwrap(),
            None => b.body(Body::empty()).unwrap(),
        };
        let (status, bytes) = self.raw(req).await;
        let v = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, v)
    }

    pub async fn get(&self, uri: &str, token: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, Some(token), None).await
    }

    pub async fn post(&self, uri: &str, token: Option<&str>, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, token, Some(body)).await
    }

    pub async fn register(&self, email: &str, role: &str) -> (StatusCode, Value) {
        self.post(
            "/api/v1/auth/register",
            None,
            json!({ "email": email, "password": PASSWORD, "role": role }),
        )
        .await
    }

    pub async fn login(&self, email: &str) -> (StatusCode, Value) {
        self.post("/api/v1/auth/login", None, json!({ "email": email, "password": PASSWORD }))
            .await
    }

    /// Registers, verifies with the mailed code and logs in; returns the token.
    pub async fn user(&self, email: &str, role: &str) -> String {
        let (s, v) = self.register(email, role).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        let code = self.mailer.latest_code(email).expect("otp mailed");
        let (s, v) = self
            .post("/api/v1/auth/verify-otp", None, json!({ "email": email, "code": code }))
            .await;
        assert_eq!(s, StatusCode::OK, "{v}");
        let (s, v) = self.login(email).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        v["token"].as_str().unwrap().to_string()
    }

    pub async fn upload(&self, token: &str, csv: &str) -> (StatusCode, Value) {
        let boundary = "sensorboundary7d3a";
        let body = format!(
            "--{boundary}\r\nContent-Disposition: form-data; name=\"name\"\r\n\r\nreviews.csv\r\n\
             --{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"reviews.csv\"\r\n\
             Content-Type: text/csv\r\n\r\n{csv}\r\n--{boundary}--\r\n"
        );
        let req = Request::builder()
            .method(Method::POST)
            .uri("/api/v1/files")
            .header("authorization", format!("Bearer {token}"))
            .header("content-type", format!("multipart/form-data; boundary={boundary}"))
            .body(Body::from(body))
            .unwrap();
        let (s, bytes) = self.raw(req).await;
        (s, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    /// GET returning the raw body as text (for CSV endpoints).
    pub async fn get_text(&self, uri: &str, token: &str) -> (StatusCode, String) {
        let req = Request::builder()
            .uri(uri)
            .header("authorization", format!("Bearer {token}"))
            .body(Body::empty())
            .unwrap();
        let (s, b) = self.raw(req).await;
        (s, String::from_utf8(b.to_vec()).unwrap())
    }

    pub async fn post_text(&self, uri: &str, token: &str, body: Value) -> (StatusCode, String) {
        let req = Request::builder()
            .method(Method::POST)
            .uri(uri)
            .header("authorization", format!("Bearer {token}"))
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        let (s, b) = self.raw(req).await;
        (s, String::from_utf8(b.to_vec()).unwrap())
    }
}

/// Ten reviews with the text column named `content` to exercise normalization.
pub fn ten_row_csv() -> String {
    let texts = [
        "Please add an option to hide my location from other users",
        "The app leaks my contacts to strangers without asking",
        "Great graphics and fun levels",
        "I want a setting to control who sees my photos",
        "After the update it uploads my messages even when disabled",
        "Music is relaxing, five stars",
        "Give us back the choice to delete our posts",
        "It keeps tracking my location after I opted out",
        "Too many ads but the story is good",
        "Add a toggle to lock my camera access",
    ];
    let mut s = String::from("reviewId,content,score,at\n");
    for (i, t) in texts.iter().enumerate() {
        s.push_str(&format!("r{:02},\"{t}\",{},2024-05-{:02}\n", i + 1, (i % 5) + 1, i + 1));
    }
    s
}

/// Parses an exported CSV back through the corpus reader.
pub fn parse_export(text: &str) -> Vec<sensor_core::Review> {
    use sensor_core::corpus::{read_csv, ColumnMapping, DatePolicy};
    read_csv(text.as_bytes(), &ColumnMapping::default(), DatePolicy::Strict).unwrap()
}

pub fn header(text: &str) -> Vec<String> {
    text.lines().next().unwrap_or("").split(',').map(String::from).collect()
}

/// A small GRACE model trained briefly on synthetic reviews.
pub fn tiny_model(dir: &std::path::Path) -> PathBuf {
    use sensor_core::cbow::Vocabulary;
    use sensor_core::grace::{self, EncodedSet, GraceConfig, GraceModel, TrainConfig};
    use sensor_core::synth::{generate, SynthConfig};
    use sensor_core::textprep::{run_stage, PrepConfig, Stage};

    let (reviews, _) = run_stage(
        generate(&SynthConfig {
            reviews: 90,
            ..SynthConfig::default()
        }),
        Stage::Post,
        &PrepConfig::builtin(),
    );
    let docs: Vec<Vec<String>> = reviews.iter().map(|r| r.tokens.clone().unwrap()).collect();
    let labels: Vec<_> = reviews.iter().map(|r| r.gold_label.unwrap()).collect();
    let vocab = Vocabulary::build(&docs, 1).unwrap();
    let cfg = GraceConfig {
        embed_dim: 8,
        hidden: 8,
        dense: 8,
        max_len: 30,
        ..GraceConfig::default()
    };
    let mut model = GraceModel::random(cfg, vocab, 5).unwrap();
    let set = EncodedSet::from_tokens(&model.vocab, &docs, &labels, 30).unwrap();
    let tc = TrainConfig {
        epochs: 5,
        lr: 1e-2,
        batch_size: 16,
        seed: 5,
        ..TrainConfig::default()
    };
    grace::train(&mut model, &set, &set, &tc).unwrap();
    let path = dir.join("tiny.model");
    model.save(&path).unwrap();
    path
}
