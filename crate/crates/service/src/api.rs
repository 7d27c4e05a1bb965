//! HTTP routes under `/api/v1`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Multipart, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rusqlite::{params, Connection};
use sensor_core::acquisition::{self, AcquisitionError, Backoff, ReviewSource, ScrapeRequest};
use sensor_core::classifier::load_classifier;
use sensor_core::corpus::{self, ColumnMapping, CorpusError, DatePolicy};
use sensor_core::metrics::{cohens_kappa, AgreementTable};
use sensor_core::textprep::{postprocess, preprocess, PrepConfig};
use sensor_core::{Label, Review, Source};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::auth::{self, AuthUser, OtpOutcome};
use crate::error::{ApiError, ApiResult};
use crate::mail::Mail;
use crate::store::{self, Assignment, FileRow, FileStatus, Role, User};
use crate::AppState;

pub const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;
const DEFAULT_PAGE: i64 = 50;
const MAX_PAGE: i64 = 500;

pub const GUIDELINES: &str = "\
Label each review with exactly one category.

PFR (privacy-related feature request): the user asks for a missing privacy \
feature or suggests one. Examples: \"Why remove the edit button? It's our post, \
and we should have the freedom to edit or delete it. Give us back the choice!\" \
and \"Add who saw your note that would make the app a little better!\"

PB (privacy-related bug report): the user reports a privacy-related flaw in how \
a feature works. Example: \"After the new IOS update they keep logging me out \
after I chose for the app not to track me\".

PIR (privacy-irrelevant): everything else, including generic complaints about \
privacy policy. Examples: \"The app keeps crashing and kicking me off!! It's so \
annoying!\" and \"A garbage app that is not capable of anything but tracking you \
and your interests so they can sell your info\".";

pub fn router(state: AppState) -> Router {
    let files = Router::new()
        .route("/", post(upload).get(list_files))
        .route("/{id}", get(get_file))
        .route("/{id}/invite", post(invite))
        .route("/{id}/progress", get(progress))
        .route("/{id}/reviews", get(list_reviews))
        .route("/{id}/labels", post(submit_labels))
        .route("/{id}/model-annotate", post(model_annotate))
        .route("/{id}/feedback", post(feedback))
        .route("/{id}/export", get(export))
        .route("/{id}/reassign", post(reassign))
        .route("/{id}/scrape-proxy", get(scrape_proxy))
        .route("/{id}/audit", get(audit_log));
    let api = Router::new()
        .route("/health", get(health))
        .route("/auth/register", post(register))
        .route("/auth/verify-otp", post(verify_otp))
        .route("/auth/resend-otp", post(resend_otp))
        .route("/auth/login", post(login))
        .route("/auth/logout", post(logout))
        .nest("/files", files);
    Router::new()
        .nest("/api/v1", api)
        .fallback(|| async { ApiError::not_found("no such route") })
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

/// JSON body whose rejections use the service error shape.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| ApiJson(v))
            .map_err(|e| ApiError::bad_request("invalid_body", e.body_text()))
    }
}

pub struct ApiQuery<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for ApiQuery<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| ApiQuery(v))
            .map_err(|e| ApiError::bad_request("invalid_query", e.body_text()))
    }
}

pub struct FileId(pub i64);

impl<S: Send + Sync> FromRequestParts<S> for FileId {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Path::<i64>::from_request_parts(parts, state)
            .await
            .map(|Path(id)| FileId(id))
            .map_err(|_| ApiError::not_found("no such file"))
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

// ---------------------------------------------------------------- accounts

fn normalize_email(e: &str) -> String {
    e.trim().to_ascii_lowercase()
}

fn valid_email(e: &str) -> bool {
    let mut parts = e.splitn(2, '@');
    let (local, domain) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
    !local.is_empty() && !domain.is_empty() && !e.chars().any(char::is_whitespace) && !domain.contains('@')
}

#[derive(Deserialize)]
struct RegisterBody {
    email: String,
    password: String,
    role: String,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

async fn register(State(st): State<AppState>, ApiJson(body): ApiJson<RegisterBody>) -> ApiResult<Response> {
    let email = normalize_email(&body.email);
    if !valid_email(&email) {
        return Err(ApiError::bad_request("invalid_email", "not a valid email address"));
    }
    let role = Role::parse(&body.role)
        .ok_or_else(|| ApiError::bad_request("invalid_role", "role must be developer or annotator"))?;
    if body.password.chars().count() < auth::MIN_PASSWORD_LEN {
        return Err(ApiError::bad_request(
            "weak_password",
            format!("password must be at least {} characters", auth::MIN_PASSWORD_LEN),
        ));
    }
    let password = body.password;
    let hash = blocking(move || auth::hash_password(&password)).await??;
    let now = st.clock.now().timestamp();
    let mut c = st.store.conn()?;
    let tx = c.transaction()?;
    let inserted = tx.execute(
        "INSERT INTO users (email, password_hash, role, verified, created_at) VALUES (?1, ?2, ?3, 0, ?4)",
        params![email, hash, role.as_str(), now],
    );
    match inserted {
        Err(rusqlite::Error::SqliteFailure(e, _)) if e.code == rusqlite::ErrorCode::ConstraintViolation => {
            return Err(ApiError::conflict("duplicate_email", "an account with this email already exists"));
        }
        other => other?,
    };
    let user_id = tx.last_insert_rowid();
    let code = auth::issue_otp(&tx, &email, now)?;
    store::audit(&tx, st.clock.now(), Some(user_id), None, "register", role.as_str())?;
    tx.commit()?;
    send_otp(&st, &email, &code)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "user_id": user_id, "email": email, "role": role, "verified": false })),
    )
        .into_response())
}

fn send_otp(st: &AppState, email: &str, code: &str) -> ApiResult<()> {
    st.mailer
        .send(Mail {
            to: email.to_string(),
            subject: "Your verification code".into(),
            body: format!(
                "Your verification code is {code}. It expires in {} minutes.",
                auth::OTP_TTL_MINUTES
            ),
        })
        .map_err(ApiError::internal)
}

#[derive(Deserialize)]
struct VerifyBody {
    email: String,
    code: String,
}

async fn verify_otp(State(st): State<AppState>, ApiJson(body): ApiJson<VerifyBody>) -> ApiResult<Json<serde_json::Value>> {
    let email = normalize_email(&body.email);
    let c = st.store.conn()?;
    match auth::check_otp(&c, &email, body.code.trim(), st.clock.now().timestamp())? {
        OtpOutcome::Verified => Ok(Json(json!({ "email": email, "verified": true }))),
        OtpOutcome::Wrong { attempts_left } => Err(ApiError::bad_request("otp_invalid", "incorrect code")
            .with_details(json!({ "attempts_left": attempts_left }))),
        OtpOutcome::Exhausted => Err(ApiError::bad_request(
            "otp_invalidated",
            "too many incorrect attempts; request a new code",
        )),
        OtpOutcome::Expired => Err(ApiError::bad_request("otp_expired", "the code has expired; request a new code")),
        OtpOutcome::NoChallenge => Err(ApiError::bad_request("otp_missing", "no active verification code")),
    }
}

#[derive(Deserialize)]
struct EmailBody {
    email: String,
}

async fn resend_otp(State(st): State<AppState>, ApiJson(body): ApiJson<EmailBody>) -> ApiResult<StatusCode> {
    let email = normalize_email(&body.email);
    let c = st.store.conn()?;
    match store::user_by_email(&c, &email)? {
        Some(u) if !u.verified => {
            let code = auth::issue_otp(&c, &email, st.clock.now().timestamp())?;
            send_otp(&st, &email, &code)?;
        }
        // Same answer either way so the endpoint does not reveal accounts.
        _ => {}
    }
    Ok(StatusCode::ACCEPTED)
}

#[derive(Deserialize)]
struct LoginBody {
    email: String,
    password: String,
}

async fn login(State(st): State<AppState>, ApiJson(body): ApiJson<LoginBody>) -> ApiResult<Json<serde_json::Value>> {
    let email = normalize_email(&body.email);
    let user = store::user_by_email(&st.store.conn()?, &email)?;
    let bad = || ApiError::new(StatusCode::UNAUTHORIZED, "invalid_credentials", "invalid email or password");
    let Some(user) = user else {
        return Err(bad());
    };
    let (password, hash) = (body.password, user.password_hash.clone());
    if !blocking(move || auth::verify_password(&password, &hash)).await? {
        return Err(bad());
    }
    if !user.verified {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "unverified",
            "verify your email with the one-time code first",
        ));
    }
    let token = auth::new_token();
    let now = st.clock.now().timestamp();
    st.store.conn()?.execute(
        "INSERT INTO sessions (token, user_id, created_at, last_seen) VALUES (?1, ?2, ?3, ?3)",
        params![token, user.id, now],
    )?;
    Ok(Json(json!({
        "token": token,
        "user_id": user.id,
        "email": user.email,
        "role": user.role,
        "idle_timeout_hours": auth::SESSION_IDLE_HOURS,
    })))
}

async fn logout(State(st): State<AppState>, who: AuthUser) -> ApiResult<StatusCode> {
    st.store.conn()?.execute("DELETE FROM sessions WHERE token = ?1", [&who.token])?;
    Ok(StatusCode::NO_CONTENT)
}

// ---------------------------------------------------------------- access

fn load_file(c: &Connection, id: i64) -> ApiResult<FileRow> {
    store::file_by_id(c, id)?.ok_or_else(|| ApiError::not_found("no such file"))
}

fn owned_file(c: &Connection, who: &AuthUser, id: i64) -> ApiResult<FileRow> {
    who.require(Role::Developer)?;
    let f = load_file(c, id)?;
    if f.owner_id != who.user.id {
        return Err(ApiError::forbidden("you do not own this file"));
    }
    Ok(f)
}

enum Access {
    Owner,
    Annotator(Assignment),
}

fn readable_file(c: &Connection, who: &AuthUser, id: i64) -> ApiResult<(FileRow, Access)> {
    let f = load_file(c, id)?;
    match who.user.role {
        Role::Developer if f.owner_id == who.user.id => Ok((f, Access::Owner)),
        Role::Annotator => {
            let a = store::assignments(c, f.id, f.generation)?
                .into_iter()
                .find(|a| a.annotator_id == who.user.id)
                .ok_or_else(|| ApiError::forbidden("this file is not assigned to you"))?;
            Ok((f, Access::Annotator(a)))
        }
        Role::Developer => Err(ApiError::forbidden("you do not own this file")),
    }
}

// ---------------------------------------------------------------- progress

#[derive(Debug, Clone, Serialize)]
pub struct AnnotatorProgress {
    pub email: String,
    pub slot: i64,
    pub labeled: usize,
    pub completed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProgressView {
    pub file_id: i64,
    pub status: FileStatus,
    pub generation: i64,
    pub total: usize,
    pub annotators: Vec<AnnotatorProgress>,
    pub fully_annotated: usize,
    pub percent: f64,
    pub co_labeled: usize,
    pub kappa: Option<f64>,
    pub kappa_degenerate: bool,
}

fn compute_progress(c: &Connection, f: &FileRow) -> ApiResult<ProgressView> {
    let total = store::review_count(c, f.id)? as usize;
    let assigned = store::assignments(c, f.id, f.generation)?;
    let labels: Vec<HashMap<String, Label>> = assigned
        .iter()
        .map(|a| store::labels_of(c, f.id, f.generation, a.annotator_id))
        .collect::<Result<_, _>>()?;
    let annotators = assigned
        .iter()
        .zip(&labels)
        .map(|(a, l)| AnnotatorProgress {
            email: a.email.clone(),
            slot: a.slot,
            labeled: l.len(),
            completed: a.completed,
        })
        .collect();
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    if let [a, b] = labels.as_slice() {
        let mut ids: Vec<&String> = a.keys().filter(|k| b.contains_key(*k)).collect();
        ids.sort();
        for id in ids {
            la.push(a[id]);
            lb.push(b[id]);
        }
    }
    let co = la.len();
    let (kappa, degenerate) = if co == 0 {
        (None, false)
    } else {
        let table = AgreementTable::from_labels(&la, &lb).map_err(ApiError::internal)?;
        let k = cohens_kappa(&table).map_err(ApiError::internal)?;
        (Some(k.value), k.degenerate)
    };
    Ok(ProgressView {
        file_id: f.id,
        status: f.status,
        generation: f.generation,
        total,
        annotators,
        fully_annotated: co,
        percent: if total == 0 { 0.0 } else { 100.0 * co as f64 / total as f64 },
        co_labeled: co,
        kappa,
        kappa_degenerate: degenerate,
    })
}

#[derive(Serialize)]
struct FileView {
    file_id: i64,
    name: String,
    status: FileStatus,
    generation: i64,
    rows: usize,
    annotators: Vec<AnnotatorProgress>,
    percent: f64,
    kappa: Option<f64>,
    guidelines: &'static str,
}

fn file_view(c: &Connection, f: &FileRow) -> ApiResult<FileView> {
    let p = compute_progress(c, f)?;
    Ok(FileView {
        file_id: f.id,
        name: f.name.clone(),
        status: f.status,
        generation: f.generation,
        rows: p.total,
        annotators: p.annotators,
        percent: p.percent,
        kappa: p.kappa,
        guidelines: GUIDELINES,
    })
}

// ---------------------------------------------------------------- files

fn corpus_error(e: CorpusError) -> ApiError {
    match e {
        CorpusError::MissingTextColumn => ApiError::bad_request("missing_text_column", e.to_string()),
        other => ApiError::bad_request("malformed_csv", other.to_string()),
    }
}

async fn upload(
    State(st): State<AppState>,
    who: AuthUser,
    mp: Result<Multipart, MultipartRejection>,
) -> ApiResult<Response> {
    who.require(Role::Developer)?;
    let mut mp = mp.map_err(|e| ApiError::bad_request("invalid_multipart", e.body_text()))?;
    let (mut data, mut name, mut filename) = (None, None, None);
    while let Some(field) = mp
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request("invalid_multipart", e.body_text()))?
    {
        match field.name() {
            Some("file") => {
                filename = field.file_name().map(str::to_string);
                data = Some(field.bytes().await.map_err(|e| ApiError::bad_request("invalid_multipart", e.body_text()))?);
            }
            Some("name") => {
                name = Some(field.text().await.map_err(|e| ApiError::bad_request("invalid_multipart", e.body_text()))?)
            }
            _ => {}
        }
    }
    let data = data.ok_or_else(|| ApiError::bad_request("missing_file", "multipart field \"file\" is required"))?;
    let mut reviews = corpus::read_csv(data.as_ref(), &ColumnMapping::default(), DatePolicy::Lenient).map_err(corpus_error)?;
    if reviews.is_empty() {
        return Err(ApiError::bad_request("empty_file", "the CSV has no review rows"));
    }
    for r in &mut reviews {
        r.label_a = None;
        r.label_b = None;
        r.gold_label = None;
        r.model_label = None;
        r.model_probs = None;
        r.tokens = None;
        r.source = Source::Uploaded;
    }
    let name = name
        .or(filename)
        .map(|n| n.trim().to_string())
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| "upload.csv".into());

    let mut c = st.store.conn()?;
    let tx = c.transaction()?;
    tx.execute(
        "INSERT INTO files (owner_id, name, status, generation, created_at) VALUES (?1, ?2, ?3, 1, ?4)",
        params![who.user.id, name, FileStatus::Unassigned.as_str(), st.clock.now().timestamp()],
    )?;
    let file_id = tx.last_insert_rowid();
    for (i, r) in reviews.iter().enumerate() {
        store::insert_review(&tx, file_id, i, r)?;
    }
    store::audit(&tx, st.clock.now(), Some(who.user.id), Some(file_id), "upload", &format!("rows={}", reviews.len()))?;
    tx.commit()?;
    let f = load_file(&c, file_id)?;
    Ok((StatusCode::CREATED, Json(file_view(&c, &f)?)).into_response())
}

async fn list_files(State(st): State<AppState>, who: AuthUser) -> ApiResult<Json<Vec<FileView>>> {
    let c = st.store.conn()?;
    let files = match who.user.role {
        Role::Developer => store::files_owned_by(&c, who.user.id)?,
        Role::Annotator => store::files_assigned_to(&c, who.user.id)?,
    };
    Ok(Json(files.iter().map(|f| file_view(&c, f)).collect::<Result<_, _>>()?))
}

async fn get_file(State(st): State<AppState>, who: AuthUser, FileId(id): FileId) -> ApiResult<Json<FileView>> {
    let c = st.store.conn()?;
    let (f, _) = readable_file(&c, &who, id)?;
    Ok(Json(file_view(&c, &f)?))
}

#[derive(Deserialize)]
struct PairBody {
    emails: Vec<String>,
}

/// Two distinct annotator accounts, in the given order.
fn resolve_pair(c: &Connection, emails: &[String]) -> ApiResult<[User; 2]> {
    if emails.len() != 2 {
        return Err(ApiError::bad_request("invalid_pair", "exactly two annotator emails are required"));
    }
    let a = normalize_email(&emails[0]);
    let b = normalize_email(&emails[1]);
    if a == b {
        return Err(ApiError::bad_request("invalid_pair", "the two annotators must be different people"));
    }
    let fetch = |e: &str| -> ApiResult<User> {
        match store::user_by_email(c, e)? {
            Some(u) if u.role == Role::Annotator => Ok(u),
            Some(_) => Err(ApiError::bad_request("not_annotator", format!("{e} is not an annotator account"))
                .with_details(json!({ "email": e }))),
            None => Err(ApiError::bad_request("unknown_user", format!("no account for {e}"))
                .with_details(json!({ "email": e }))),
        }
    };
    Ok([fetch(&a)?, fetch(&b)?])
}

fn assign_pair(st: &AppState, c: &Connection, f: &FileRow, generation: i64, pair: &[User; 2]) -> ApiResult<()> {
    let now = st.clock.now().timestamp();
    for (slot, u) in pair.iter().enumerate() {
        c.execute(
            "INSERT INTO assignments (file_id, generation, slot, annotator_id, invited_at, completed)
             VALUES (?1, ?2, ?3, ?4, ?5, 0)",
            params![f.id, generation, slot as i64, u.id, now],
        )?;
    }
    Ok(())
}

fn send_invites(st: &AppState, f: &FileRow, pair: &[User; 2]) -> ApiResult<()> {
    for u in pair {
        st.mailer
            .send(Mail {
                to: u.email.clone(),
                subject: format!("You have been invited to annotate \"{}\"", f.name),
                body: format!(
                    "Open the file here: {}/app/files/{}\n\n{GUIDELINES}\n",
                    st.config.public_url.trim_end_matches('/'),
                    f.id
                ),
            })
            .map_err(ApiError::internal)?;
    }
    Ok(())
}

async fn invite(
    State(st): State<AppState>,
    who: AuthUser,
    FileId(id): FileId,
    ApiJson(body): ApiJson<PairBody>,
) -> ApiResult<Json<FileView>> {
    let _guard = st.locks.lock(id).await;
    let mut c = st.store.conn()?;
    let f = owned_file(&c, &who, id)?;
    if !store::assignments(&c, f.id, f.generation)?.is_empty() {
        return Err(ApiError::conflict("already_assigned", "annotators already invited; use reassign"));
    }
    let pair = resolve_pair(&c, &body.emails)?;
    let tx = c.transaction()?;
    assign_pair(&st, &tx, &f, f.generation, &pair)?;
    store::set_status(&tx, f.id, FileStatus::InProgress)?;
    store::audit(&tx, st.clock.now(), Some(who.user.id), Some(f.id), "invite", &format!("{},{}", pair[0].email, pair[1].email))?;
    tx.commit()?;
    send_invites(&st, &f, &pair)?;
    let f = load_file(&c, id)?;
    Ok(Json(file_view(&c, &f)?))
}

async fn progress(State(st): State<AppState>, who: AuthUser, FileId(id): FileId) -> ApiResult<Json<ProgressView>> {
    let c = st.store.conn()?;
    let f = owned_file(&c, &who, id)?;
    Ok(Json(compute_progress(&c, &f)?))
}

#[derive(Deserialize)]
struct PageQuery {
    cursor: Option<String>,
    limit: Option<i64>,
}

#[derive(Serialize)]
struct ReviewItem {
    review_id: String,
    raw_text: String,
    app_id: String,
    posted_at: Option<String>,
    rating: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    my_label: Option<Label>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_label: Option<Label>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_probs: Option<[f64; 3]>,
}

async fn list_reviews(
    State(st): State<AppState>,
    who: AuthUser,
    FileId(id): FileId,
    ApiQuery(q): ApiQuery<PageQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    let c = st.store.conn()?;
    let (f, access) = readable_file(&c, &who, id)?;
    let offset = match q.cursor.as_deref() {
        None | Some("") => 0,
        Some(s) => s
            .parse::<i64>()
            .ok()
            .filter(|v| *v >= 0)
            .ok_or_else(|| ApiError::bad_request("invalid_cursor", "cursor must come from a previous page"))?,
    };
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
    let total = store::review_count(&c, f.id)?;
    let page = store::load_reviews_page(&c, f.id, offset, limit)?;
    let mine = match &access {
        Access::Annotator(a) => store::labels_of(&c, f.id, f.generation, a.annotator_id)?,
        Access::Owner => HashMap::new(),
    };
    let owner = matches!(access, Access::Owner);
    let items: Vec<ReviewItem> = page
        .into_iter()
        .map(|r| ReviewItem {
            my_label: mine.get(&r.review_id).copied(),
            model_label: r.model_label.filter(|_| owner),
            model_probs: r.model_probs.filter(|_| owner),
            review_id: r.review_id,
            raw_text: r.raw_text,
            app_id: r.app_id,
            posted_at: r.posted_at.map(|d| d.to_string()),
            rating: r.rating,
        })
        .collect();
    let next = offset + items.len() as i64;
    Ok(Json(json!({
        "total": total,
        "reviews": items,
        "next_cursor": if next < total { Some(next.to_string()) } else { None },
    })))
}

#[derive(Deserialize)]
struct LabelItem {
    review_id: String,
    label: String,
}

#[derive(Deserialize)]
struct LabelsBody {
    labels: Vec<LabelItem>,
}

async fn submit_labels(
    State(st): State<AppState>,
    who: AuthUser,
    FileId(id): FileId,
    ApiJson(body): ApiJson<LabelsBody>,
) -> ApiResult<Json<serde_json::Value>> {
    who.require(Role::Annotator)?;
    let _guard = st.locks.lock(id).await;
    let mut c = st.store.conn()?;
    let (f, access) = readable_file(&c, &who, id)?;
    let Access::Annotator(me) = access else {
        return Err(ApiError::forbidden("only assigned annotators can label"));
    };
    if me.completed {
        return Err(ApiError::conflict(
            "already_completed",
            "you have finished this file; it no longer accepts labels from you",
        ));
    }
    let mut parsed = Vec::with_capacity(body.labels.len());
    for item in &body.labels {
        let label: Label = item.label.parse().map_err(|_| {
            ApiError::bad_request("invalid_label", format!("unknown label {:?}; use PFR, PB or PIR", item.label))
                .with_details(json!({ "review_id": item.review_id, "label": item.label }))
        })?;
        if !store::review_exists(&c, f.id, &item.review_id)? {
            return Err(ApiError::bad_request("unknown_review", format!("no review {:?} in this file", item.review_id))
                .with_details(json!({ "review_id": item.review_id })));
        }
        parsed.push((item.review_id.as_str(), label));
    }
    let now = st.clock.now().timestamp();
    let tx = c.transaction()?;
    for (rid, label) in &parsed {
        tx.execute(
            "INSERT INTO annotations (file_id, generation, review_id, annotator_id, label, labeled_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6)
             ON CONFLICT(file_id, generation, review_id, annotator_id)
             DO UPDATE SET label = excluded.label, labeled_at = excluded.labeled_at",
            params![f.id, f.generation, rid, me.annotator_id, label.as_str(), now],
        )?;
    }
    let total = store::review_count(&tx, f.id)? as usize;
    let labeled = store::labels_of(&tx, f.id, f.generation, me.annotator_id)?.len();
    let completed = labeled == total;
    if completed {
        tx.execute(
            "UPDATE assignments SET completed = 1 WHERE file_id = ?1 AND generation = ?2 AND annotator_id = ?3",
            params![f.id, f.generation, me.annotator_id],
        )?;
        let all_done = store::assignments(&tx, f.id, f.generation)?.iter().all(|a| a.completed);
        if all_done && f.status == FileStatus::InProgress {
            store::set_status(&tx, f.id, FileStatus::HumanComplete)?;
        }
        store::audit(&tx, st.clock.now(), Some(who.user.id), Some(f.id), "annotator_complete", &me.email)?;
    }
    tx.commit()?;
    let status = load_file(&c, id)?.status;
    Ok(Json(json!({
        "labeled": labeled,
        "total": total,
        "completed": completed,
        "file_status": status,
    })))
}

// ---------------------------------------------------------------- model

#[derive(Deserialize, Default)]
struct AnnotateBody {
    model_path: Option<PathBuf>,
}

async fn model_annotate(
    State(st): State<AppState>,
    who: AuthUser,
    FileId(id): FileId,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let req: AnnotateBody = if body.iter().all(u8::is_ascii_whitespace) {
        AnnotateBody::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("invalid_body", e.to_string()))?
    };
    {
        let c = st.store.conn()?;
        owned_file(&c, &who, id)?;
    }
    let model_path = req
        .model_path
        .or_else(|| st.config.model_path.clone())
        .ok_or_else(|| ApiError::bad_request("no_model", "no model_path given and none configured"))?;

    let _guard = st.locks.lock(id).await;
    let c = st.store.conn()?;
    let f = owned_file(&c, &who, id)?;
    let mut reviews = store::load_reviews(&c, f.id)?;
    if reviews.is_empty() {
        return Err(ApiError::bad_request("empty_file", "file has no reviews"));
    }
    let prep = PrepConfig::builtin();
    for r in &mut reviews {
        let p = preprocess(&r.raw_text, &prep);
        r.tokens = Some(postprocess(&p, &prep));
        r.processed_text = Some(p);
    }
    let empty: Vec<String> = reviews
        .iter()
        .filter(|r| r.tokens.as_ref().is_some_and(Vec::is_empty))
        .map(|r| r.review_id.clone())
        .collect();
    if !empty.is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "empty_text",
            format!("{} review(s) have no text left after preparation", empty.len()),
        )
        .with_details(json!({ "rows": empty })));
    }
    let path = model_path.clone();
    let docs: Vec<Vec<String>> = reviews.iter().map(|r| r.tokens.clone().unwrap_or_default()).collect();
    let scored = blocking(move || load_classifier(&path).and_then(|m| m.classify(&docs)))
        .await?
        .map_err(|e| ApiError::bad_request("model_error", e.to_string()))?;

    let previously = reviews.iter().any(|r| r.model_label.is_some());
    let mut dist: BTreeMap<&'static str, usize> = Label::ALL.iter().map(|l| (l.as_str(), 0)).collect();
    let mut c = c;
    let tx = c.transaction()?;
    for (r, s) in reviews.iter().zip(&scored) {
        *dist.get_mut(s.label.as_str()).expect("label key") += 1;
        tx.execute(
            "UPDATE reviews SET processed_text = ?3, model_label = ?4, model_probs = ?5
             WHERE file_id = ?1 AND review_id = ?2",
            params![
                f.id,
                r.review_id,
                r.processed_text,
                s.label.as_str(),
                serde_json::to_string(&s.scores).expect("scores serialize")
            ],
        )?;
    }
    store::set_status(&tx, f.id, FileStatus::ModelAnnotated)?;
    store::audit(
        &tx,
        st.clock.now(),
        Some(who.user.id),
        Some(f.id),
        "model_annotate",
        &format!("model={} overwrote_previous={previously}", model_path.display()),
    )?;
    tx.commit()?;
    Ok(Json(json!({ "file_id": f.id, "total": reviews.len(), "distribution": dist })))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Category {
    PrivacyRelated,
    PrivacyIrrelevant,
}

impl Category {
    fn admits(self, l: Label) -> bool {
        match self {
            Category::PrivacyRelated => l.is_privacy_related(),
            Category::PrivacyIrrelevant => !l.is_privacy_related(),
        }
    }
}

#[derive(Deserialize)]
struct FeedbackBody {
    #[serde(default)]
    disagree: Vec<String>,
    category: Category,
}

fn csv_response(body: String, filename: &str) -> Response {
    (
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{filename}\"")),
        ],
        body,
    )
        .into_response()
}

async fn feedback(
    State(st): State<AppState>,
    who: AuthUser,
    FileId(id): FileId,
    ApiJson(body): ApiJson<FeedbackBody>,
) -> ApiResult<Response> {
    let _guard = st.locks.lock(id).await;
    let mut c = st.store.conn()?;
    let f = owned_file(&c, &who, id)?;
    if f.status != FileStatus::ModelAnnotated {
        return Err(ApiError::conflict("not_model_annotated", "feedback needs a model-annotated file"));
    }
    let reviews = store::load_reviews(&c, f.id)?;
    let filtered: Vec<&Review> = reviews
        .iter()
        .filter(|r| r.model_label.is_some_and(|l| body.category.admits(l)))
        .collect();
    let in_filter: HashSet<&str> = filtered.iter().map(|r| r.review_id.as_str()).collect();
    let mut disagree = HashSet::new();
    for rid in &body.disagree {
        if !store::review_exists(&c, f.id, rid)? {
            return Err(ApiError::bad_request("unknown_review", format!("no review {rid:?} in this file"))
                .with_details(json!({ "review_id": rid })));
        }
        if !in_filter.contains(rid.as_str()) {
            return Err(ApiError::bad_request(
                "outside_filter",
                format!("review {rid:?} is not in the selected category"),
            )
            .with_details(json!({ "review_id": rid })));
        }
        disagree.insert(rid.as_str());
    }
    let now = st.clock.now().timestamp();
    let tx = c.transaction()?;
    for r in &filtered {
        tx.execute(
            "INSERT INTO feedback (file_id, review_id, developer_id, disagree, recorded_at)
             VALUES (?1, ?2, ?3, ?4, ?5)
             ON CONFLICT(file_id, review_id, developer_id)
             DO UPDATE SET disagree = excluded.disagree, recorded_at = excluded.recorded_at",
            params![f.id, r.review_id, who.user.id, disagree.contains(r.review_id.as_str()), now],
        )?;
    }
    store::audit(
        &tx,
        st.clock.now(),
        Some(who.user.id),
        Some(f.id),
        "feedback",
        &format!("filtered={} disagreed={}", filtered.len(), disagree.len()),
    )?;
    tx.commit()?;
    let keep: Vec<Review> = filtered
        .into_iter()
        .filter(|r| !disagree.contains(r.review_id.as_str()))
        .cloned()
        .collect();
    Ok(csv_response(corpus::to_csv_string(&keep, true), &format!("file-{}-feedback.csv", f.id)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ExportMode {
    Human,
    Model,
}

#[derive(Deserialize)]
struct ExportQuery {
    mode: ExportMode,
    generation: Option<i64>,
}

async fn export(
    State(st): State<AppState>,
    who: AuthUser,
    FileId(id): FileId,
    ApiQuery(q): ApiQuery<ExportQuery>,
) -> ApiResult<Response> {
    let c = st.store.conn()?;
    let f = owned_file(&c, &who, id)?;
    let mut reviews = store::load_reviews(&c, f.id)?;
    match q.mode {
        ExportMode::Human => {
            let generation = q.generation.unwrap_or(f.generation);
            if generation < 1 || generation > f.generation {
                return Err(ApiError::not_found(format!("no generation {generation}")));
            }
            let assigned = store::assignments(&c, f.id, generation)?;
            if assigned.len() != 2 {
                return Err(ApiError::conflict("not_assigned", "no annotator pair for this generation"));
            }
            if generation == f.generation && !assigned.iter().all(|a| a.completed) {
                return Err(ApiError::conflict(
                    "not_complete",
                    "both annotators must finish before the human export is available",
                ));
            }
            let la = store::labels_of(&c, f.id, generation, assigned[0].annotator_id)?;
            let lb = store::labels_of(&c, f.id, generation, assigned[1].annotator_id)?;
            for r in &mut reviews {
                r.label_a = la.get(&r.review_id).copied();
                r.label_b = lb.get(&r.review_id).copied();
                r.model_label = None;
                r.model_probs = None;
            }
            Ok(csv_response(
                corpus::to_csv_string(&reviews, true),
                &format!("file-{}-human-g{generation}.csv", f.id),
            ))
        }
        ExportMode::Model => {
            if reviews.iter().any(|r| r.model_label.is_none()) {
                return Err(ApiError::conflict("not_model_annotated", "run model annotation first"));
            }
            Ok(csv_response(corpus::to_csv_string(&reviews, true), &format!("file-{}-model.csv", f.id)))
        }
    }
}

async fn reassign(
    State(st): State<AppState>,
    who: AuthUser,
    FileId(id): FileId,
    ApiJson(body): ApiJson<PairBody>,
) -> ApiResult<Json<FileView>> {
    let _guard = st.locks.lock(id).await;
    let mut c = st.store.conn()?;
    let f = owned_file(&c, &who, id)?;
    let current = store::assignments(&c, f.id, f.generation)?;
    if current.is_empty() {
        return Err(ApiError::conflict("not_assigned", "file has no annotators yet; use invite"));
    }
    let pair = resolve_pair(&c, &body.emails)?;
    let old: HashSet<i64> = current.iter().map(|a| a.annotator_id).collect();
    let new: HashSet<i64> = pair.iter().map(|u| u.id).collect();
    if old == new {
        return Err(ApiError::bad_request("same_pair", "the file is already assigned to these annotators"));
    }
    let next = f.generation + 1;
    let tx = c.transaction()?;
    tx.execute("UPDATE files SET generation = ?2 WHERE id = ?1", params![f.id, next])?;
    assign_pair(&st, &tx, &f, next, &pair)?;
    store::set_status(&tx, f.id, FileStatus::InProgress)?;
    store::audit(
        &tx,
        st.clock.now(),
        Some(who.user.id),
        Some(f.id),
        "reassign",
        &format!("generation {} -> {next}; {},{}", f.generation, pair[0].email, pair[1].email),
    )?;
    tx.commit()?;
    send_invites(&st, &f, &pair)?;
    let f = load_file(&c, id)?;
    Ok(Json(file_view(&c, &f)?))
}

async fn audit_log(State(st): State<AppState>, who: AuthUser, FileId(id): FileId) -> ApiResult<Json<Vec<store::AuditEntry>>> {
    let c = st.store.conn()?;
    let f = owned_file(&c, &who, id)?;
    Ok(Json(store::audit_for_file(&c, f.id)?))
}

// ---------------------------------------------------------------- scraping

async fn scrape_proxy(
    State(st): State<AppState>,
    who: AuthUser,
    FileId(_): FileId,
    ApiJson(req): ApiJson<ScrapeRequest>,
) -> ApiResult<Json<serde_json::Value>> {
    who.require(Role::Developer)?;
    let spec = st
        .config
        .scrape_source
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no_scrape_source", "no review source configured"))?;
    let source = ReviewSource::parse(&spec)
        .ok_or_else(|| ApiError::internal(format!("bad scrape_source {spec:?}")))?;
    let r = req.clone();
    let result = blocking(move || acquisition::fetch_all(&source, &r, Backoff::default(), std::thread::sleep))
        .await?
        .map_err(|e| match e {
            AcquisitionError::InvalidRequest(m) => ApiError::bad_request("invalid_request", m),
            AcquisitionError::UnknownApp(_) => ApiError::not_found(e.to_string()),
            other => ApiError::new(StatusCode::BAD_GATEWAY, "scrape_failed", other.to_string()),
        })?;
    Ok(Json(json!({
        "app_id": req.app_id,
        "count": result.reviews.len(),
        "dropped_undated": result.dropped_undated,
        "pages": result.pages,
        "csv": corpus::to_csv_string(&result.reviews, false),
    })))
}
