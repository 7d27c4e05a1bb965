mod common;

use axum::http::{Method, StatusCode};
use common::{TestApp, PASSWORD};
use serde_json::json;

fn wrong_code(code: &str) -> &'static str {
    if code == "000000" {
        "111111"
    } else {
        "000000"
    }
}

#[tokio::test]
async fn registration_and_login_rules() {
    let dir = tempfile::tempdir().unwrap();
    let app = TestApp::new(dir.path());

    let (s, v) = app.register("new@example.org", "developer").await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["verified"], false);
    let (s, v) = app.register("NEW@example.org ", "annotator").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("duplicate_email")));

    let weak = json!({ "email": "w@example.org", "password": "short", "role": "developer" });
    let (s, v) = app.post("/api/v1/auth/register", None, weak).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("weak_password")));
    let role = json!({ "email": "r@example.org", "password": PASSWORD, "role": "admin" });
    let (s, v) = app.post("/api/v1/auth/register", None, role).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_role")));
    let email = json!({ "email": "nobody", "password": PASSWORD, "role": "developer" });
    let (s, v) = app.post("/api/v1/auth/register", None, email).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_email")));
    let (s, v) = app.post("/api/v1/auth/register", None, json!({ "email": "x@y" })).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_body")));

    // Unverified accounts cannot log in.
    let (s, v) = app.login("new@example.org").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::FORBIDDEN, Some("unverified")));

    // Wrong password and unknown account look the same.
    let bad_pw = json!({ "email": "new@example.org", "password": "not-the-password" });
    let (s1, v1) = app.post("/api/v1/auth/login", None, bad_pw).await;
    let (s2, v2) = app.login("ghost@example.org").await;
    assert_eq!(s1, StatusCode::UNAUTHORIZED);
    assert_eq!((s1, &v1), (s2, &v2));

    let code = app.mailer.latest_code("new@example.org").unwrap();
    let (s, _) = app
        .post("/api/v1/auth/verify-otp", None, json!({ "email": "new@example.org", "code": code }))
        .await;
    assert_eq!(s, StatusCode::OK);
    let (s, v) = app.login("new@example.org").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["role"], "developer");
    assert_eq!(v["token"].as_str().unwrap().len(), 32);
}

#[tokio::test]
async fn otp_attempts_and_expiry() {
    let dir = tempfile::tempdir().unwrap();
    let app = TestApp::new(dir.path());
    app.register("a@example.org", "annotator").await;
    let code = app.mailer.latest_code("a@example.org").unwrap();
    let bad = json!({ "email": "a@example.org", "code": wrong_code(&code) });
    for left in (1..=4).rev() {
        let (s, v) = app.post("/api/v1/auth/verify-otp", None, bad.clone()).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        assert_eq!(v["code"], "otp_invalid");
        assert_eq!(v["details"]["attempts_left"], left);
    }
    let (_, v) = app.post("/api/v1/auth/verify-otp", None, bad.clone()).await;
    assert_eq!(v["code"], "otp_invalidated");
    // The sixth attempt fails even with the right code.
    let good = json!({ "email": "a@example.org", "code": code });
    let (s, v) = app.post("/api/v1/auth/verify-otp", None, good).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("otp_missing")));

    // A fresh code expires after ten minutes.
    let (s, _) = app.post("/api/v1/auth/resend-otp", None, json!({ "email": "a@example.org" })).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let code = app.mailer.latest_code("a@example.org").unwrap();
    app.clock.advance(chrono::Duration::minutes(11));
    let good = json!({ "email": "a@example.org", "code": code });
    let (_, v) = app.post("/api/v1/auth/verify-otp", None, good).await;
    assert_eq!(v["code"], "otp_expired");

    app.post("/api/v1/auth/resend-otp", None, json!({ "email": "a@example.org" })).await;
    let code = app.mailer.latest_code("a@example.org").unwrap();
    app.clock.advance(chrono::Duration::minutes(9));
    let good = json!({ "email": "a@example.org", "code": code });
    let (s, _) = app.post("/api/v1/auth/verify-otp", None, good).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(app.login("a@example.org").await.0, StatusCode::OK);

    // Resend reveals nothing about unknown or verified accounts.
    let sent = app.mailer.sent().len();
    for email in ["a@example.org", "ghost@example.org"] {
        let (s, _) = app.post("/api/v1/auth/resend-otp", None, json!({ "email": email })).await;
        assert_eq!(s, StatusCode::ACCEPTED);
    }
    assert_eq!(app.mailer.sent().len(), sent);
}

#[tokio::test]
async fn sessions_expire_and_log_out() {
    let dir = tempfile::tempdir().unwrap();
    let app = TestApp::new(dir.path());
    let token = app.user("d@example.org", "developer").await;
    assert_eq!(app.get("/api/v1/files", &token).await.0, StatusCode::OK);

    let (s, v) = app.get("/api/v1/files", "garbage").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("unauthenticated")));
    assert_eq!(app.call(Method::GET, "/api/v1/files", None, None).await.0, StatusCode::UNAUTHORIZED);

    // Activity keeps the session alive; a full idle day ends it.
    app.clock.advance(chrono::Duration::hours(23));
    assert_eq!(app.get("/api/v1/files", &token).await.0, StatusCode::OK);
    app.clock.advance(chrono::Duration::hours(23));
    assert_eq!(app.get("/api/v1/files", &token).await.0, StatusCode::OK);
    app.clock.advance(chrono::Duration::hours(24) + chrono::Duration::seconds(1));
    assert_eq!(app.get("/api/v1/files", &token).await.0, StatusCode::UNAUTHORIZED);

    let token = app.login("d@example.org").await.1["token"].as_str().unwrap().to_string();
    let (s, _) = app.call(Method::POST, "/api/v1/auth/logout", Some(&token), None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    assert_eq!(app.get("/api/v1/files", &token).await.0, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn health_and_unknown_routes() {
    let dir = tempfile::tempdir().unwrap();
    let app = TestApp::new(dir.path());
    let (s, v) = app.call(Method::GET, "/api/v1/health", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    let (s, v) = app.call(Method::GET, "/api/v1/nope", None, None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
}
