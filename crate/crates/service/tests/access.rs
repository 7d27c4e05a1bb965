mod common;

use axum::http::{Method, StatusCode};
use common::{ten_row_csv, TestApp};
use serde_json::{json, Value};

#[derive(Clone, Copy, PartialEq)]
enum Scope {
    /// Owning developer only.
    Owner,
    /// Owner and the assigned annotators.
    Readers,
    /// Assigned annotators only.
    Labelers,
}

fn routes(id: i64) -> Vec<(Method, String, Option<Value>, Scope)> {
    let pair = json!({ "emails": ["a1@example.org", "a2@example.org"] });
    let f = format!("/api/v1/files/{id}");
    vec![
        (Method::GET, f.clone(), None, Scope::Readers),
        (Method::GET, format!("{f}/reviews"), None, Scope::Readers),
        (Method::POST, format!("{f}/labels"), Some(json!({ "labels": [{ "review_id": "r01", "label": "PB" }] })), Scope::Labelers),
        (Method::GET, format!("{f}/progress"), None, Scope::Owner),
        (Method::POST, format!("{f}/invite"), Some(pair.clone()), Scope::Owner),
        (Method::POST, format!("{f}/reassign"), Some(pair), Scope::Owner),
        (Method::POST, format!("{f}/model-annotate"), Some(json!({})), Scope::Owner),
        (Method::POST, format!("{f}/feedback"), Some(json!({ "disagree": [], "category": "privacy_related" })), Scope::Owner),
        (Method::GET, format!("{f}/export?mode=human"), None, Scope::Owner),
        (Method::GET, format!("{f}/export?mode=model"), None, Scope::Owner),
        (Method::GET, format!("{f}/audit"), None, Scope::Owner),
    ]
}

#[tokio::test]
async fn every_route_rejects_the_wrong_caller() {
    let dir = tempfile::tempdir().unwrap();
    let app = TestApp::new(dir.path());
    let owner = app.user("owner@example.org", "developer").await;
    let other_dev = app.user("other@example.org", "developer").await;
    let a1 = app.user("a1@example.org", "annotator").await;
    let a2 = app.user("a2@example.org", "annotator").await;
    let outsider = app.user("a3@example.org", "annotator").await;
    let (_, f) = app.upload(&owner, &ten_row_csv()).await;
    let id = f["file_id"].as_i64().unwrap();
    let (s, _) = app
        .post(&format!("/api/v1/files/{id}/invite"), Some(&owner), json!({ "emails": ["a1@example.org", "a2@example.org"] }))
        .await;
    assert_eq!(s, StatusCode::OK);

    let mut checked = 0;
    for (method, uri, body, scope) in routes(id) {
        let callers: [(&str, Option<&str>, StatusCode); 6] = [
            ("no token", None, StatusCode::UNAUTHORIZED),
            ("garbage token", Some("deadbeef"), StatusCode::UNAUTHORIZED),
            ("other developer", Some(&other_dev), StatusCode::FORBIDDEN),
            ("uninvited annotator", Some(&outsider), StatusCode::FORBIDDEN),
            ("assigned annotator", Some(&a1), if scope == Scope::Owner { StatusCode::FORBIDDEN } else { StatusCode::OK }),
            ("owner", Some(&owner), if scope == Scope::Labelers { StatusCode::FORBIDDEN } else { StatusCode::OK }),
        ];
        for (who, token, expected) in callers {
            let (s, v) = app.call(method.clone(), &uri, token, body.clone()).await;
            if expected == StatusCode::OK {
                assert!(
                    s != StatusCode::UNAUTHORIZED && s != StatusCode::FORBIDDEN,
                    "{who} on {method} {uri}: {s} {v}"
                );
            } else {
                assert_eq!(s, expected, "{who} on {method} {uri}: {v}");
                assert!(v["code"].is_string() && v["message"].is_string());
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 66);

    // Developer-wide endpoints.
    for token in [&a2, &outsider] {
        let (s, _) = app.upload(token, &ten_row_csv()).await;
        assert_eq!(s, StatusCode::FORBIDDEN);
    }
    let req = json!({ "app_id": "x", "start_date": "2024-01-01", "end_date": "2024-01-02", "max_reviews": 1 });
    let uri = format!("/api/v1/files/{id}/scrape-proxy");
    assert_eq!(app.call(Method::GET, &uri, Some(&a1), Some(req.clone())).await.0, StatusCode::FORBIDDEN);
    assert_eq!(app.call(Method::GET, &uri, None, Some(req.clone())).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(
        app.call(Method::GET, &uri, Some(&owner), Some(req)).await.0,
        StatusCode::SERVICE_UNAVAILABLE
    );

    // File lists are scoped per caller.
    let (_, mine) = app.get("/api/v1/files", &owner).await;
    let (_, theirs) = app.get("/api/v1/files", &other_dev).await;
    let (_, outside) = app.get("/api/v1/files", &outsider).await;
    assert_eq!(mine.as_array().unwrap().len(), 1);
    assert!(theirs.as_array().unwrap().is_empty());
    assert!(outside.as_array().unwrap().is_empty());

    // Missing and malformed file ids.
    assert_eq!(app.get("/api/v1/files/999", &owner).await.0, StatusCode::NOT_FOUND);
    assert_eq!(app.get("/api/v1/files/999/progress", &owner).await.0, StatusCode::NOT_FOUND);
    assert_eq!(app.get("/api/v1/files/abc", &owner).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn annotators_do_not_see_each_others_labels_or_model_output() {
    let dir = tempfile::tempdir().unwrap();
    let app = TestApp::new(dir.path());
    let owner = app.user("owner@example.org", "developer").await;
    let a1 = app.user("a1@example.org", "annotator").await;
    let a2 = app.user("a2@example.org", "annotator").await;
    let (_, f) = app.upload(&owner, &ten_row_csv()).await;
    let id = f["file_id"].as_i64().unwrap();
    app.post(&format!("/api/v1/files/{id}/invite"), Some(&owner), json!({ "emails": ["a1@example.org", "a2@example.org"] }))
        .await;
    app.post(
        &format!("/api/v1/files/{id}/labels"),
        Some(&a1),
        json!({ "labels": [{ "review_id": "r01", "label": "PB" }] }),
    )
    .await;
    let (_, page) = app.get(&format!("/api/v1/files/{id}/reviews"), &a2).await;
    for item in page["reviews"].as_array().unwrap() {
        assert!(item.get("my_label").is_none());
        assert!(item.get("model_label").is_none());
    }
    let (_, page) = app.get(&format!("/api/v1/files/{id}/reviews"), &a1).await;
    assert_eq!(page["reviews"][0]["my_label"], "PB");
}
