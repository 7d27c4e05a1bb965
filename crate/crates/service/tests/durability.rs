mod common;

use axum::http::StatusCode;
use common::{parse_export, ten_row_csv, tiny_model, TestApp};
use serde_json::json;

#[tokio::test]
async fn state_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model(dir.path());
    let id;
    let disagree;
    {
        let app = TestApp::new(dir.path());
        let owner = app.user("owner@example.org", "developer").await;
        let a1 = app.user("a1@example.org", "annotator").await;
        let a2 = app.user("a2@example.org", "annotator").await;
        let (_, f) = app.upload(&owner, &ten_row_csv()).await;
        id = f["file_id"].as_i64().unwrap();
        let base = format!("/api/v1/files/{id}");
        app.post(&format!("{base}/invite"), Some(&owner), json!({ "emails": ["a1@example.org", "a2@example.org"] }))
            .await;
        let all: Vec<_> = (1..=10).map(|i| json!({ "review_id": format!("r{i:02}"), "label": "PIR" })).collect();
        app.post(&format!("{base}/labels"), Some(&a1), json!({ "labels": all })).await;
        app.post(&format!("{base}/labels"), Some(&a2), json!({ "labels": all[..4] })).await;
        let (s, _) = app.post(&format!("{base}/model-annotate"), Some(&owner), json!({ "model_path": model })).await;
        assert_eq!(s, StatusCode::OK);
        let (_, csv) = app.get_text(&format!("{base}/export?mode=model"), &owner).await;
        let rows = parse_export(&csv);
        let target = rows.iter().find(|r| r.model_label.is_some()).unwrap();
        let category = if target.model_label.unwrap().is_privacy_related() {
            "privacy_related"
        } else {
            "privacy_irrelevant"
        };
        disagree = (target.review_id.clone(), category);
        let (s, _) = app
            .post_text(&format!("{base}/feedback"), &owner, json!({ "disagree": [disagree.0], "category": category }))
            .await;
        assert_eq!(s, StatusCode::OK);
    }

    // A fresh process on the same database file.
    let app = TestApp::new(dir.path());
    let owner = app.login("owner@example.org").await.1["token"].as_str().unwrap().to_string();
    let a2 = app.login("a2@example.org").await.1["token"].as_str().unwrap().to_string();
    let base = format!("/api/v1/files/{id}");
    let (_, p) = app.get(&format!("{base}/progress"), &owner).await;
    assert_eq!(p["total"], 10);
    assert_eq!(p["co_labeled"], 4);
    assert_eq!(p["annotators"][0]["completed"], true);
    assert_eq!(p["annotators"][1]["labeled"], 4);
    assert_eq!(p["status"], "model_annotated");

    let c = app.state.store.conn().unwrap();
    let (n, flagged): (i64, i64) = c
        .query_row(
            "SELECT COUNT(*), SUM(disagree) FROM feedback WHERE file_id = ?1",
            [id],
            |r| Ok((r.get(0)?, r.get(1)?)),
        )
        .unwrap();
    assert!(n >= 1);
    assert_eq!(flagged, 1);
    let stored: String = c
        .query_row("SELECT review_id FROM feedback WHERE file_id = ?1 AND disagree = 1", [id], |r| r.get(0))
        .unwrap();
    assert_eq!(stored, disagree.0);

    // The second annotator resumes where they stopped.
    let rest: Vec<_> = (5..=10).map(|i| json!({ "review_id": format!("r{i:02}"), "label": "PIR" })).collect();
    let (_, v) = app.post(&format!("{base}/labels"), Some(&a2), json!({ "labels": rest })).await;
    assert_eq!(v["labeled"], 10);
    assert_eq!(v["completed"], true);
    let (s, csv) = app.get_text(&format!("{base}/export?mode=human"), &owner).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(parse_export(&csv).len(), 10);
}
