use argon2::password_hash::rand_core::OsRng;
use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use axum::extract::FromRequestParts;
use axum::http::request::Parts;
use rand::{Rng, RngCore};
use rusqlite::{params, Connection, OptionalExtension};

use crate::error::ApiError;
use crate::store::{self, Role, User};
use crate::AppState;

pub const OTP_TTL_MINUTES: i64 = 10;
pub const OTP_ATTEMPTS: i64 = 5;
pub const SESSION_IDLE_HOURS: i64 = 24;
pub const MIN_PASSWORD_LEN: usize = 8;

pub fn hash_password(password: &str) -> Result<String, ApiError> {
    let salt = SaltString::generate(&mut OsRng);
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(ApiError::internal)
}

pub fn verify_password(password: &str, hash: &str) -> bool {
    PasswordHash::new(hash)
        .map(|h| Argon2::default().verify_password(password.as_bytes(), &h).is_ok())
        .unwrap_or(false)
}

/// 128 random bits, hex-encoded.
pub fn new_token() -> String {
    let mut b = [0u8; 16];
    rand::rngs::OsRng.fill_bytes(&mut b);
    hex::encode(b)
}

pub fn new_otp() -> String {
    format!("{:06}", rand::rngs::OsRng.gen_range(0..1_000_000))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtpOutcome {
    Verified,
    Wrong { attempts_left: i64 },
    /// The last allowed attempt failed; the challenge is gone.
    Exhausted,
    Expired,
    NoChallenge,
}

pub fn check_otp(c: &Connection, email: &str, code: &str, now: i64) -> rusqlite::Result<OtpOutcome> {
    let row: Option<(String, i64, i64)> = c
        .query_row(
            "SELECT code, expires_at, attempts_left FROM otp WHERE email = ?1",
            [email],
            |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)),
        )
        .optional()?;
    let Some((expected, expires_at, attempts_left)) = row else {
        return Ok(OtpOutcome::NoChallenge);
    };
    if now >= expires_at {
        c.execute("DELETE FROM otp WHERE email = ?1", [email])?;
        return Ok(OtpOutcome::Expired);
    }
    if code == expected {
        c.execute("DELETE FROM otp WHERE email = ?1", [email])?;
        c.execute("UPDATE users SET verified = 1 WHERE email = ?1", [email])?;
        return Ok(OtpOutcome::Verified);
    }
    let left = attempts_left - 1;
    if left <= 0 {
        c.execute("DELETE FROM otp WHERE email = ?1", [email])?;
        return Ok(OtpOutcome::Exhausted);
    }
    c.execute("UPDATE otp SET attempts_left = ?2 WHERE email = ?1", params![email, left])?;
    Ok(OtpOutcome::Wrong { attempts_left: left })
}

/// Replaces any active challenge for `email` and returns the new code.
pub fn issue_otp(c: &Connection, email: &str, now: i64) -> rusqlite::Result<String> {
    let code = new_otp();
    c.execute(
        "INSERT INTO otp (email, code, expires_at, attempts_left) VALUES (?1, ?2, ?3, ?4)
         ON CONFLICT(email) DO UPDATE SET code = excluded.code, expires_at = excluded.expires_at,
             attempts_left = excluded.attempts_left",
        params![email, code, now + OTP_TTL_MINUTES * 60, OTP_ATTEMPTS],
    )?;
    Ok(code)
}

/// Resolves a bearer token, expiring idle sessions and refreshing live ones.
pub fn session_user(c: &Connection, token: &str, now: i64) -> rusqlite::Result<Option<User>> {
    let row: Option<(i64, i64)> = c
        .query_row(
            "SELECT user_id, last_seen FROM sessions WHERE token = ?1",
            [token],
            |r| Ok((r.get(0)?, r.get(1)?)),
        )
        .optional()?;
    let Some((user_id, last_seen)) = row else {
        return Ok(None);
    };
    if now - last_seen > SESSION_IDLE_HOURS * 3600 {
        c.execute("DELETE FROM sessions WHERE token = ?1", [token])?;
        return Ok(None);
    }
    c.execute("UPDATE sessions SET last_seen = ?2 WHERE token = ?1", params![token, now])?;
    store::user_by_id(c, user_id)
}

/// The authenticated caller. Extraction fails with 401.
#[derive(Debug, Clone)]
pub struct AuthUser {
    pub user: User,
    pub token: String,
}

impl AuthUser {
    pub fn require(&self, role: Role) -> Result<(), ApiError> {
        if self.user.role == role {
            Ok(())
        } else {
            Err(ApiError::forbidden(format!("requires the {} role", role.as_str())))
        }
    }
}

impl FromRequestParts<AppState> for AuthUser {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(ApiError::unauthorized)?
            .to_string();
        let c = state.store.conn()?;
        let user = session_user(&c, &token, state.clock.now().timestamp())?.ok_or_else(ApiError::unauthorized)?;
        Ok(AuthUser { user, token })
    }
}
