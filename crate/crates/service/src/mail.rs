//! Outgoing mail providers.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mail {
    pub to: String,
    pub subject: String,
    pub body: String,
}

#[derive(Debug, thiserror::Error)]
#[error("mail delivery failed: {0}")]
pub struct MailError(pub String);

pub trait Mailer: Send + Sync {
    fn send(&self, mail: Mail) -> Result<(), MailError>;
}

/// Writes each message to the service log. Intended for development.
#[derive(Debug, Default)]
pub struct ConsoleMailer;

impl Mailer for ConsoleMailer {
    fn send(&self, mail: Mail) -> Result<(), MailError> {
        tracing::info!(to = %mail.to, subject = %mail.subject, body = %mail.body, "mail");
        Ok(())
    }
}

/// Keeps messages in memory so tests can read OTP codes and invitations.
#[derive(Debug, Default)]
pub struct MemoryMailer {
    sent: Mutex<Vec<Mail>>,
}

impl MemoryMailer {
    pub fn sent(&self) -> Vec<Mail> {
        self.sent.lock().expect("mailer lock").clone()
    }

    /// The six-digit code in the latest message to `to`.
    pub fn latest_code(&self, to: &str) -> Option<String> {
        self.sent().iter().rev().filter(|m| m.to == to).find_map(|m| extract_code(&m.body))
    }
}

impl Mailer for MemoryMailer {
    fn send(&self, mail: Mail) -> Result<(), MailError> {
        self.sent.lock().expect("mailer lock").push(mail);
        Ok(())
    }
}

/// Appends messages to `<dir>/<recipient>.mbox`, for deployments that hand
/// delivery to an external relay watching the directory.
#[derive(Debug)]
pub struct SpoolMailer {
    pub dir: PathBuf,
}

impl Mailer for SpoolMailer {
    fn send(&self, mail: Mail) -> Result<(), MailError> {
        let err = |e: std::io::Error| MailError(e.to_string());
        std::fs::create_dir_all(&self.dir).map_err(err)?;
        let name: String = mail
            .to
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '@' || c == '.' { c } else { '_' })
            .collect();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(format!("{name}.mbox")))
            .map_err(err)?;
        writeln!(f, "To: {}\nSubject: {}\n\n{}\n", mail.to, mail.subject, mail.body).map_err(err)
    }
}

fn extract_code(body: &str) -> Option<String> {
    body.split(|c: char| !c.is_ascii_digit())
        .find(|w| w.len() == 6)
        .map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_mailer_finds_latest_code() {
        let m = MemoryMailer::default();
        for code in ["111111", "222222"] {
            m.send(Mail {
                to: "a@x.org".into(),
                subject: "code".into(),
                body: format!("Your code is {code}. It expires in 10 minutes."),
            })
            .unwrap();
        }
        assert_eq!(m.latest_code("a@x.org").as_deref(), Some("222222"));
        assert_eq!(m.latest_code("b@x.org"), None);
    }

    #[test]
    fn spool_appends() {
        let dir = tempfile::tempdir().unwrap();
        let m = SpoolMailer { dir: dir.path().into() };
        for _ in 0..2 {
            m.send(Mail {
                to: "a@x.org".into(),
                subject: "s".into(),
                body: "b".into(),
            })
            .unwrap();
        }
        let text = std::fs::read_to_string(dir.path().join("a@x.org.mbox")).unwrap();
        assert_eq!(text.matches("Subject: s").count(), 2);
    }
}
