//! Review acquisition by app id and date range.
//!
//! Two sources: a fixture file in the corpus CSV layout (used by every test,
//! never touches the network) and, behind the `live` feature, a best-effort
//! client for the public Play Store review endpoint.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::corpus::{self, ColumnMapping, CorpusError, DatePolicy, Review, Source};

#[derive(Debug, thiserror::Error)]
pub enum AcquisitionError {
    #[error("invalid scrape request: {0}")]
    InvalidRequest(String),
    #[error("unknown app id {0:?}")]
    UnknownApp(String),
    #[error("transient failure ({message}); retry after {retry_after:?}")]
    Retryable {
        message: String,
        retry_after: Duration,
    },
    #[error("bad continuation token {0:?}")]
    BadToken(String),
    #[error("live scraping requires the `live` feature")]
    LiveDisabled,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AcquisitionError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, AcquisitionError::Retryable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrapeRequest {
    pub app_id: String,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub max_reviews: usize,
    #[serde(default = "default_language")]
    pub language: String,
}

fn default_language() -> String {
    "en".into()
}

impl ScrapeRequest {
    pub fn new(app_id: &str, start_date: NaiveDate, end_date: NaiveDate, max_reviews: usize) -> Self {
        ScrapeRequest {
            app_id: app_id.into(),
            start_date,
            end_date,
            max_reviews,
            language: default_language(),
        }
    }

    pub fn validate(&self) -> Result<(), AcquisitionError> {
        if self.app_id.trim().is_empty() {
            return Err(AcquisitionError::InvalidRequest("empty app id".into()));
        }
        if self.start_date > self.end_date {
            return Err(AcquisitionError::InvalidRequest(format!(
                "start date {} is after end date {}",
                self.start_date, self.end_date
            )));
        }
        if self.max_reviews == 0 {
            return Err(AcquisitionError::InvalidRequest("max_reviews must be >= 1".into()));
        }
        Ok(())
    }

    fn in_range(&self, d: NaiveDate) -> bool {
        self.start_date <= d && d <= self.end_date
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReviewSource {
    FixtureFile(PathBuf),
    LivePlayStore {
        endpoint: String,
        /// Requests per second.
        rate_limit: f64,
    },
}

impl ReviewSource {
    pub fn live_default() -> Self {
        ReviewSource::LivePlayStore {
            endpoint: "https://play.google.com/_/PlayStoreUi/data/batchexecute".into(),
            rate_limit: 1.0,
        }
    }

    /// Parses the CLI form: `live` or `fixture:<path>`.
    pub fn parse(spec: &str) -> Option<Self> {
        if spec == "live" {
            return Some(Self::live_default());
        }
        spec.strip_prefix("fixture:")
            .filter(|p| !p.is_empty())
            .map(|p| ReviewSource::FixtureFile(PathBuf::from(p)))
    }
}

/// Opaque cursor for the next page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContinuationToken(pub String);

#[derive(Debug, Clone, Default)]
pub struct Page {
    pub reviews: Vec<Review>,
    /// `None` marks the end of the sequence.
    pub next: Option<ContinuationToken>,
    /// Rows skipped because their date could not be parsed.
    pub dropped_undated: usize,
}

/// One page of reviews inside the request's date range, at most
/// `max_reviews` long.
pub fn fetch_reviews(
    source: &ReviewSource,
    request: &ScrapeRequest,
    cursor: Option<&ContinuationToken>,
) -> Result<Page, AcquisitionError> {
    request.validate()?;
    match source {
        ReviewSource::FixtureFile(path) => fetch_fixture(path, request, cursor),
        #[cfg(feature = "live")]
        ReviewSource::LivePlayStore { endpoint, .. } => live::fetch_page(endpoint, request, cursor),
        #[cfg(not(feature = "live"))]
        ReviewSource::LivePlayStore { .. } => Err(AcquisitionError::LiveDisabled),
    }
}

fn fetch_fixture(
    path: &Path,
    request: &ScrapeRequest,
    cursor: Option<&ContinuationToken>,
) -> Result<Page, AcquisitionError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let all = corpus::read_csv(file, &ColumnMapping::default(), DatePolicy::Lenient)?;
    let for_app: Vec<Review> = all
        .into_iter()
        .filter(|r| r.app_id.is_empty() || r.app_id == request.app_id)
        .collect();
    if for_app.is_empty() {
        return Err(AcquisitionError::UnknownApp(request.app_id.clone()));
    }
    let dropped_undated = for_app.iter().filter(|r| r.posted_at.is_none()).count();
    let matching: Vec<Review> = for_app
        .into_iter()
        .filter(|r| r.posted_at.is_some_and(|d| request.in_range(d)))
        .map(|mut r| {
            r.source = Source::Scraped;
            if r.app_id.is_empty() {
                r.app_id = request.app_id.clone();
            }
            r
        })
        .collect();

    let offset = match cursor {
        None => 0,
        Some(t) => t
            .0
            .strip_prefix("offset:")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n <= matching.len())
            .ok_or_else(|| AcquisitionError::BadToken(t.0.clone()))?,
    };
    let end = (offset + request.max_reviews).min(matching.len());
    let next = (end < matching.len()).then(|| ContinuationToken(format!("offset:{end}")));
    Ok(Page {
        reviews: matching[offset..end].to_vec(),
        next,
        dropped_undated,
    })
}

/// Exponential backoff schedule for retryable failures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub initial: Duration,
    pub base: u32,
    pub max_retries: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            initial: Duration::from_secs(1),
            base: 2,
            max_retries: 5,
        }
    }
}

impl Backoff {
    pub fn delay(&self, attempt: u32) -> Duration {
        self.initial * self.base.saturating_pow(attempt)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScrapeResult {
    pub reviews: Vec<Review>,
    pub dropped_undated: usize,
    pub pages: usize,
}

/// Follows continuation tokens to the end, retrying transient failures.
/// `sleep` is injected so callers (and tests) control waiting.
pub fn fetch_all(
    source: &ReviewSource,
    request: &ScrapeRequest,
    backoff: Backoff,
    mut sleep: impl FnMut(Duration),
) -> Result<ScrapeResult, AcquisitionError> {
    let min_gap = match source {
        ReviewSource::LivePlayStore { rate_limit, .. } if *rate_limit > 0.0 => {
            Some(Duration::from_secs_f64(1.0 / rate_limit))
        }
        _ => None,
    };
    let mut out = ScrapeResult::default();
    let mut seen = std::collections::HashSet::new();
    let mut cursor: Option<ContinuationToken> = None;
    loop {
        let mut attempt = 0;
        let page = loop {
            match fetch_reviews(source, request, cursor.as_ref()) {
                Ok(p) => break p,
                Err(AcquisitionError::Retryable { retry_after, .. }) if attempt < backoff.max_retries => {
                    sleep(retry_after.max(backoff.delay(attempt)));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        out.pages += 1;
        out.dropped_undated = out.dropped_undated.max(page.dropped_undated);
        for r in page.reviews {
            if seen.insert(r.review_id.clone()) {
                out.reviews.push(r);
            }
        }
        match page.next {
            Some(t) => {
                cursor = Some(t);
                if let Some(gap) = min_gap {
                    sleep(gap);
                }
            }
            None => return Ok(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScrapeManifest {
    pub app_id: String,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub fetched_at: NaiveDateTime,
    pub count: usize,
    pub dropped_undated: usize,
}

impl fmt::Display for ScrapeManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "app_id = {}", self.app_id)?;
        writeln!(f, "start_date = {}", self.start_date)?;
        writeln!(f, "end_date = {}", self.end_date)?;
        writeln!(f, "fetched_at = {}", self.fetched_at.format("%Y-%m-%dT%H:%M:%S"))?;
        writeln!(f, "count = {}", self.count)?;
        writeln!(f, "dropped_undated = {}", self.dropped_undated)
    }
}

/// Sidecar path for a scrape export: `<csv path>.manifest`.
pub fn manifest_path(csv_path: &Path) -> PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Writes the reviews as corpus CSV plus the key-value manifest sidecar.
pub fn export_scrape(
    reviews: &[Review],
    request: &ScrapeRequest,
    dropped_undated: usize,
    fetched_at: NaiveDateTime,
    path: &Path,
) -> Result<ScrapeManifest, AcquisitionError> {
    corpus::save_csv(reviews, path, true)?;
    let manifest = ScrapeManifest {
        app_id: request.app_id.clone(),
        start_date: request.start_date,
        end_date: request.end_date,
        fetched_at,
        count: reviews.len(),
        dropped_undated,
    };
    let mpath = manifest_path(path);
    let io = |source| AcquisitionError::Io {
        path: mpath.clone(),
        source,
    };
    let mut f = std::fs::File::create(&mpath).map_err(io)?;
    f.write_all(manifest.to_string().as_bytes()).map_err(io)?;
    Ok(manifest)
}

#[cfg(feature = "live")]
mod live {
    //! Unofficial endpoint; wire format mirrors what public scraping
    //! libraries send and may break without notice.

    use super::*;
    use chrono::DateTime;
    use serde_json::Value;

    const PAGE_SIZE: usize = 100;
    // Sort order 2 = newest first.
    const SORT_NEWEST: u8 = 2;

    fn payload(app_id: &str, token: Option<&str>) -> String {
        let token = token.map(|t| format!("\\\"{t}\\\"")).unwrap_or_else(|| "null".into());
        format!(
            "[[[\"UsvDTd\",\"[null,null,[2,{SORT_NEWEST},[{PAGE_SIZE},null,{token}]],[\\\"{app_id}\\\",7]]\",null,\"generic\"]]]"
        )
    }

    fn review_from(v: &Value, app_id: &str) -> Option<Review> {
        let id = v.get(0)?.as_str()?;
        let text = v.get(4)?.as_str()?;
        let ts = v.get(5)?.get(0)?.as_i64()?;
        let mut r = Review::new(id, text);
        r.app_id = app_id.to_string();
        r.rating = v.get(2).and_then(Value::as_u64).map(|x| x as u8);
        r.posted_at = DateTime::from_timestamp(ts, 0).map(|d| d.date_naive());
        r.source = Source::Scraped;
        Some(r)
    }

    pub(super) fn fetch_page(
        endpoint: &str,
        request: &ScrapeRequest,
        cursor: Option<&ContinuationToken>,
    ) -> Result<Page, AcquisitionError> {
        let client = reqwest::blocking::Client::new();
        let resp = client
            .post(endpoint)
            .query(&[("hl", request.language.as_str()), ("gl", "us")])
            .header("Content-Type", "application/x-www-form-urlencoded")
            .body(format!(
                "f.req={}",
                url_encode(&payload(&request.app_id, cursor.map(|c| c.0.as_str())))
            ))
            .send()
            .map_err(|e| AcquisitionError::Retryable {
                message: e.to_string(),
                retry_after: Duration::from_secs(1),
            })?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AcquisitionError::Retryable {
                message: format!("HTTP {status}"),
                retry_after: Duration::from_secs(2),
            });
        }
        if status.as_u16() == 404 {
            return Err(AcquisitionError::UnknownApp(request.app_id.clone()));
        }
        let body = resp.text().map_err(|e| AcquisitionError::Retryable {
            message: e.to_string(),
            retry_after: Duration::from_secs(1),
        })?;
        let json_part = body.lines().skip_while(|l| !l.starts_with('[')).collect::<String>();
        let outer: Value = serde_json::from_str(&json_part)
            .map_err(|_| AcquisitionError::UnknownApp(request.app_id.clone()))?;
        let inner = outer
            .get(0)
            .and_then(|v| v.get(2))
            .and_then(Value::as_str)
            .ok_or_else(|| AcquisitionError::UnknownApp(request.app_id.clone()))?;
        let data: Value = serde_json::from_str(inner)
            .map_err(|_| AcquisitionError::UnknownApp(request.app_id.clone()))?;

        let mut page = Page::default();
        let mut reached_older = false;
        for v in data.get(0).and_then(Value::as_array).into_iter().flatten() {
            let Some(r) = review_from(v, &request.app_id) else {
                page.dropped_undated += 1;
                continue;
            };
            let Some(d) = r.posted_at else {
                page.dropped_undated += 1;
                continue;
            };
            if d < request.start_date {
                reached_older = true;
                break;
            }
            if request.in_range(d) && page.reviews.len() < request.max_reviews {
                page.reviews.push(r);
            }
        }
        if !reached_older {
            page.next = data
                .get(1)
                .and_then(|v| v.get(1))
                .and_then(Value::as_str)
                .map(|t| ContinuationToken(t.to_string()));
        }
        Ok(page)
    }

    fn url_encode(s: &str) -> String {
        s.bytes()
            .map(|b| match b {
                b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => {
                    (b as char).to_string()
                }
                _ => format!("%{b:02X}"),
            })
            .collect()
    }
}
