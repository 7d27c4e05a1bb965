//! SQLite persistence. Each request opens its own connection; the database
//! runs in WAL mode so readers never block on the single writer.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Utc};
use rusqlite::{params, Connection, OptionalExtension, Row};
use sensor_core::{Label, Review, Source};
use serde::{Deserialize, Serialize};

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS users (
    id            INTEGER PRIMARY KEY,
    email         TEXT NOT NULL UNIQUE,
    password_hash TEXT NOT NULL,
    role          TEXT NOT NULL CHECK (role IN ('developer', 'annotator')),
    verified      INTEGER NOT NULL DEFAULT 0,
    created_at    INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS otp (
    email         TEXT PRIMARY KEY,
    code          TEXT NOT NULL,
    expires_at    INTEGER NOT NULL,
    attempts_left INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS sessions (
    token      TEXT PRIMARY KEY,
    user_id    INTEGER NOT NULL REFERENCES users(id),
    created_at INTEGER NOT NULL,
    last_seen  INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS files (
    id         INTEGER PRIMARY KEY,
    owner_id   INTEGER NOT NULL REFERENCES users(id),
    name       TEXT NOT NULL,
    status     TEXT NOT NULL,
    generation INTEGER NOT NULL DEFAULT 1,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS reviews (
    file_id        INTEGER NOT NULL REFERENCES files(id),
    row_idx        INTEGER NOT NULL,
    review_id      TEXT NOT NULL,
    app_id         TEXT NOT NULL,
    posted_at      TEXT,
    rating         INTEGER,
    raw_text       TEXT NOT NULL,
    processed_text TEXT,
    source         TEXT NOT NULL,
    parent_id      TEXT,
    extra          TEXT NOT NULL,
    model_label    TEXT,
    model_probs    TEXT,
    PRIMARY KEY (file_id, review_id),
    UNIQUE (file_id, row_idx)
);
CREATE TABLE IF NOT EXISTS assignments (
    file_id      INTEGER NOT NULL REFERENCES files(id),
    generation   INTEGER NOT NULL,
    slot         INTEGER NOT NULL CHECK (slot IN (0, 1)),
    annotator_id INTEGER NOT NULL REFERENCES users(id),
    invited_at   INTEGER NOT NULL,
    completed    INTEGER NOT NULL DEFAULT 0,
    PRIMARY KEY (file_id, generation, slot),
    UNIQUE (file_id, generation, annotator_id)
);
CREATE TABLE IF NOT EXISTS annotations (
    file_id      INTEGER NOT NULL REFERENCES files(id),
    generation   INTEGER NOT NULL,
    review_id    TEXT NOT NULL,
    annotator_id INTEGER NOT NULL REFERENCES users(id),
    label        TEXT NOT NULL CHECK (label IN ('PFR', 'PB', 'PIR')),
    labeled_at   INTEGER NOT NULL,
    PRIMARY KEY (file_id, generation, review_id, annotator_id)
);
CREATE TABLE IF NOT EXISTS feedback (
    file_id      INTEGER NOT NULL REFERENCES files(id),
    review_id    TEXT NOT NULL,
    developer_id INTEGER NOT NULL REFERENCES users(id),
    disagree     INTEGER NOT NULL,
    recorded_at  INTEGER NOT NULL,
    PRIMARY KEY (file_id, review_id, developer_id)
);
CREATE TABLE IF NOT EXISTS audit_log (
    id      INTEGER PRIMARY KEY,
    at      INTEGER NOT NULL,
    user_id INTEGER,
    file_id INTEGER,
    action  TEXT NOT NULL,
    detail  TEXT NOT NULL
);
";

#[derive(Debug, Clone)]
pub struct Store {
    path: PathBuf,
}

impl Store {
    pub fn open(path: &Path) -> rusqlite::Result<Self> {
        let store = Store { path: path.to_path_buf() };
        let c = store.conn()?;
        c.pragma_update(None, "journal_mode", "WAL")?;
        c.execute_batch(SCHEMA)?;
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn conn(&self) -> rusqlite::Result<Connection> {
        let c = Connection::open(&self.path)?;
        c.busy_timeout(Duration::from_secs(10))?;
        c.pragma_update(None, "foreign_keys", true)?;
        c.pragma_update(None, "synchronous", "FULL")?;
        Ok(c)
    }
}

/// Serializes writers per file; readers take no lock.
#[derive(Debug, Default)]
pub struct FileLocks {
    locks: Mutex<HashMap<i64, Arc<tokio::sync::Mutex<()>>>>,
}

impl FileLocks {
    pub async fn lock(&self, file_id: i64) -> tokio::sync::OwnedMutexGuard<()> {
        let m = self
            .locks
            .lock()
            .expect("lock table")
            .entry(file_id)
            .or_default()
            .clone();
        m.lock_owned().await
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Test clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock(Mutex::new(start))
    }

    pub fn advance(&self, by: chrono::Duration) {
        *self.0.lock().expect("clock") += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Developer,
    Annotator,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Developer => "developer",
            Role::Annotator => "annotator",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "developer" => Some(Role::Developer),
            "annotator" => Some(Role::Annotator),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileStatus {
    Unassigned,
    InProgress,
    HumanComplete,
    ModelAnnotated,
}

impl FileStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FileStatus::Unassigned => "unassigned",
            FileStatus::InProgress => "in_progress",
            FileStatus::HumanComplete => "human_complete",
            FileStatus::ModelAnnotated => "model_annotated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            FileStatus::Unassigned,
            FileStatus::InProgress,
            FileStatus::HumanComplete,
            FileStatus::ModelAnnotated,
        ]
        .into_iter()
        .find(|f| f.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct User {
    pub id: i64,
    pub email: String,
    pub password_hash: String,
    pub role: Role,
    pub verified: bool,
}

fn bad_column(idx: usize, what: &str) -> rusqlite::Error {
    rusqlite::Error::FromSqlConversionFailure(idx, rusqlite::types::Type::Text, what.to_string().into())
}

fn user_from_row(r: &Row<'_>) -> rusqlite::Result<User> {
    let role: String = r.get(3)?;
    Ok(User {
        id: r.get(0)?,
        email: r.get(1)?,
        password_hash: r.get(2)?,
        role: Role::parse(&role).ok_or_else(|| bad_column(3, "role"))?,
        verified: r.get(4)?,
    })
}

const USER_COLS: &str = "id, email, password_hash, role, verified";

pub fn user_by_email(c: &Connection, email: &str) -> rusqlite::Result<Option<User>> {
    c.query_row(
        &format!("SELECT {USER_COLS} FROM users WHERE email = ?1"),
        [email],
        user_from_row,
    )
    .optional()
}

pub fn user_by_id(c: &Connection, id: i64) -> rusqlite::Result<Option<User>> {
    c.query_row(&format!("SELECT {USER_COLS} FROM users WHERE id = ?1"), [id], user_from_row)
        .optional()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileRow {
    pub id: i64,
    pub owner_id: i64,
    pub name: String,
    pub status: FileStatus,
    pub generation: i64,
}

fn file_from_row(r: &Row<'_>) -> rusqlite::Result<FileRow> {
    let status: String = r.get(3)?;
    Ok(FileRow {
        id: r.get(0)?,
        owner_id: r.get(1)?,
        name: r.get(2)?,
        status: FileStatus::parse(&status).ok_or_else(|| bad_column(3, "status"))?,
        generation: r.get(4)?,
    })
}

const FILE_COLS: &str = "id, owner_id, name, status, generation";

pub fn file_by_id(c: &Connection, id: i64) -> rusqlite::Result<Option<FileRow>> {
    c.query_row(&format!("SELECT {FILE_COLS} FROM files WHERE id = ?1"), [id], file_from_row)
        .optional()
}

pub fn files_owned_by(c: &Connection, owner: i64) -> rusqlite::Result<Vec<FileRow>> {
    let mut st = c.prepare(&format!("SELECT {FILE_COLS} FROM files WHERE owner_id = ?1 ORDER BY id"))?;
    let rows = st.query_map([owner], file_from_row)?;
    rows.collect()
}

pub fn files_assigned_to(c: &Connection, annotator: i64) -> rusqlite::Result<Vec<FileRow>> {
    let mut st = c.prepare(
        "SELECT f.id, f.owner_id, f.name, f.status, f.generation FROM files f
         JOIN assignments a ON a.file_id = f.id AND a.generation = f.generation
         WHERE a.annotator_id = ?1 ORDER BY f.id",
    )?;
    let rows = st.query_map([annotator], file_from_row)?;
    rows.collect()
}

pub fn set_status(c: &Connection, file: i64, status: FileStatus) -> rusqlite::Result<()> {
    c.execute("UPDATE files SET status = ?2 WHERE id = ?1", params![file, status.as_str()])?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub slot: i64,
    pub annotator_id: i64,
    pub email: String,
    pub completed: bool,
}

pub fn assignments(c: &Connection, file: i64, generation: i64) -> rusqlite::Result<Vec<Assignment>> {
    let mut st = c.prepare(
        "SELECT a.slot, a.annotator_id, u.email, a.completed FROM assignments a
         JOIN users u ON u.id = a.annotator_id
         WHERE a.file_id = ?1 AND a.generation = ?2 ORDER BY a.slot",
    )?;
    let rows = st.query_map(params![file, generation], |r| {
        Ok(Assignment {
            slot: r.get(0)?,
            annotator_id: r.get(1)?,
            email: r.get(2)?,
            completed: r.get(3)?,
        })
    })?;
    rows.collect()
}

pub fn review_count(c: &Connection, file: i64) -> rusqlite::Result<i64> {
    c.query_row("SELECT COUNT(*) FROM reviews WHERE file_id = ?1", [file], |r| r.get(0))
}

pub fn review_exists(c: &Connection, file: i64, review_id: &str) -> rusqlite::Result<bool> {
    c.query_row(
        "SELECT EXISTS(SELECT 1 FROM reviews WHERE file_id = ?1 AND review_id = ?2)",
        params![file, review_id],
        |r| r.get(0),
    )
}

pub fn insert_review(c: &Connection, file: i64, idx: usize, r: &Review) -> rusqlite::Result<()> {
    let extra = serde_json::to_string(&r.extra).expect("pairs serialize");
    let probs = r.model_probs.map(|p| serde_json::to_string(&p).expect("probs serialize"));
    c.execute(
        "INSERT INTO reviews (file_id, row_idx, review_id, app_id, posted_at, rating, raw_text,
             processed_text, source, parent_id, extra, model_label, model_probs)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12, ?13)",
        params![
            file,
            idx as i64,
            r.review_id,
            r.app_id,
            r.posted_at.map(|d| d.to_string()),
            r.rating,
            r.raw_text,
            r.processed_text,
            r.source.as_str(),
            r.parent_id,
            extra,
            r.model_label.map(Label::as_str),
            probs,
        ],
    )?;
    Ok(())
}

fn parse_label(idx: usize, s: Option<String>) -> rusqlite::Result<Option<Label>> {
    s.map(|v| v.parse::<Label>().map_err(|_| bad_column(idx, "label")))
        .transpose()
}

/// Reviews of a file in upload order. Label columns other than the model's
/// are left empty.
pub fn load_reviews(c: &Connection, file: i64) -> rusqlite::Result<Vec<Review>> {
    load_reviews_page(c, file, 0, i64::MAX)
}

pub fn load_reviews_page(c: &Connection, file: i64, offset: i64, limit: i64) -> rusqlite::Result<Vec<Review>> {
    let mut st = c.prepare(
        "SELECT review_id, app_id, posted_at, rating, raw_text, processed_text, source, parent_id,
                extra, model_label, model_probs
         FROM reviews WHERE file_id = ?1 AND row_idx >= ?2 ORDER BY row_idx LIMIT ?3",
    )?;
    let rows = st.query_map(params![file, offset, limit], |r| {
        let posted: Option<String> = r.get(2)?;
        let source: String = r.get(6)?;
        let extra: String = r.get(8)?;
        let probs: Option<String> = r.get(10)?;
        Ok(Review {
            review_id: r.get(0)?,
            app_id: r.get(1)?,
            posted_at: posted.and_then(|d| NaiveDate::parse_from_str(&d, "%Y-%m-%d").ok()),
            rating: r.get(3)?,
            raw_text: r.get(4)?,
            processed_text: r.get(5)?,
            tokens: None,
            source: Source::parse(&source).ok_or_else(|| bad_column(6, "source"))?,
            parent_id: r.get(7)?,
            label_a: None,
            label_b: None,
            gold_label: None,
            model_label: parse_label(9, r.get(9)?)?,
            model_probs: probs
                .map(|p| serde_json::from_str(&p).map_err(|_| bad_column(10, "model_probs")))
                .transpose()?,
            extra: serde_json::from_str(&extra).map_err(|_| bad_column(8, "extra"))?,
        })
    })?;
    rows.collect()
}

/// `review_id -> label` for one annotator in one generation.
pub fn labels_of(
    c: &Connection,
    file: i64,
    generation: i64,
    annotator: i64,
) -> rusqlite::Result<HashMap<String, Label>> {
    let mut st = c.prepare(
        "SELECT review_id, label FROM annotations
         WHERE file_id = ?1 AND generation = ?2 AND annotator_id = ?3",
    )?;
    let rows = st.query_map(params![file, generation, annotator], |r| {
        Ok((r.get::<_, String>(0)?, parse_label(1, Some(r.get(1)?))?.expect("some")))
    })?;
    rows.collect()
}

pub fn audit(
    c: &Connection,
    at: DateTime<Utc>,
    user: Option<i64>,
    file: Option<i64>,
    action: &str,
    detail: &str,
) -> rusqlite::Result<()> {
    c.execute(
        "INSERT INTO audit_log (at, user_id, file_id, action, detail) VALUES (?1, ?2, ?3, ?4, ?5)",
        params![at.timestamp(), user, file, action, detail],
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub at: i64,
    pub user_id: Option<i64>,
    pub action: String,
    pub detail: String,
}

pub fn audit_for_file(c: &Connection, file: i64) -> rusqlite::Result<Vec<AuditEntry>> {
    let mut st = c.prepare("SELECT at, user_id, action, detail FROM audit_log WHERE file_id = ?1 ORDER BY id")?;
    let rows = st.query_map([file], |r| {
        Ok(AuditEntry {
            at: r.get(0)?,
            user_id: r.get(1)?,
            action: r.get(2)?,
            detail: r.get(3)?,
        })
    })?;
    rows.collect()
}
