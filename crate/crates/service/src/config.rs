use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MailProvider {
    #[default]
    Console,
    Spool,
    Memory,
}

/// Service settings. Loaded from TOML, then overridden by `SENSOR_*`
/// environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub store_path: PathBuf,
    pub public_url: String,
    pub mail: MailProvider,
    pub mail_spool_dir: PathBuf,
    pub model_path: Option<PathBuf>,
    /// `fixture:<csv>` or `live`.
    pub scrape_source: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            store_path: "sensor.db".into(),
            public_url: "http://localhost:8080".into(),
            mail: MailProvider::Console,
            mail_spool_dir: "mail-spool".into(),
            model_path: None,
            scrape_source: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(String),
}

pub const ENV_KEYS: &[&str] = &[
    "SENSOR_LISTEN",
    "SENSOR_STORE_PATH",
    "SENSOR_PUBLIC_URL",
    "SENSOR_MAIL",
    "SENSOR_MAIL_SPOOL_DIR",
    "SENSOR_MODEL_PATH",
    "SENSOR_SCRAPE_SOURCE",
];

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        for (k, v) in vars {
            let v: String = v.into();
            match k.as_ref() {
                "SENSOR_LISTEN" => self.listen = v,
                "SENSOR_STORE_PATH" => self.store_path = v.into(),
                "SENSOR_PUBLIC_URL" => self.public_url = v,
                "SENSOR_MAIL" => {
                    self.mail = serde_json::from_value(serde_json::Value::String(v.clone()))
                        .map_err(|_| ConfigError::Parse(format!("unknown mail provider {v:?}")))?
                }
                "SENSOR_MAIL_SPOOL_DIR" => self.mail_spool_dir = v.into(),
                "SENSOR_MODEL_PATH" => self.model_path = Some(v.into()),
                "SENSOR_SCRAPE_SOURCE" => self.scrape_source = Some(v),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn apply_process_env(&mut self) -> Result<(), ConfigError> {
        self.apply_env(ENV_KEYS.iter().filter_map(|k| std::env::var(k).ok().map(|v| (*k, v))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering() {
        let mut c = ServiceConfig::from_toml("listen = \"0.0.0.0:9000\"\nmail = \"spool\"\n").unwrap();
        assert_eq!(c.listen, "0.0.0.0:9000");
        assert_eq!(c.mail, MailProvider::Spool);
        assert_eq!(c.store_path, PathBuf::from("sensor.db"));
        c.apply_env([("SENSOR_LISTEN", "1.2.3.4:1"), ("UNRELATED", "x")]).unwrap();
        assert_eq!(c.listen, "1.2.3.4:1");
        assert!(c.apply_env([("SENSOR_MAIL", "pigeon")]).is_err());
        assert!(ServiceConfig::from_toml("nope = 1").is_err());
    }
}
