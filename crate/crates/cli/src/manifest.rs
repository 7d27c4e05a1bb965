//! Run manifests: one flat `key = value` file per invocation.

use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<(String, PathBuf)>,
    pub outputs: Vec<(String, PathBuf)>,
    /// Command-specific results such as counts or scores.
    pub facts: Vec<(String, String)>,
    pub started: DateTime<Utc>,
    pub finished: Option<DateTime<Utc>>,
    pub version: &'static str,
}

impl RunManifest {
    pub fn new(subcommand: &str, config_hash: &str, seed: u64) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            facts: Vec::new(),
            started: Utc::now(),
            finished: None,
            version: env!("CARGO_PKG_VERSION"),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> &mut Self {
        self.inputs.push((name.to_string(), path.to_path_buf()));
        self
    }

    pub fn output(&mut self, name: &str, path: &Path) -> &mut Self {
        self.outputs.push((name.to_string(), path.to_path_buf()));
        self
    }

    pub fn fact(&mut self, name: &str, value: impl ToString) -> &mut Self {
        self.facts.push((name.to_string(), value.to_string()));
        self
    }

    pub fn finish(&mut self) {
        self.finished = Some(Utc::now());
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_string())
    }

    /// Parses the text form back into `key -> value` pairs.
    pub fn parse_pairs(text: &str) -> Vec<(String, String)> {
        text.lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }
}

/// Default manifest location: `<primary output>.run`.
pub fn beside(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".run");
    PathBuf::from(s)
}

fn stamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

impl fmt::Display for RunManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "subcommand = {}", self.subcommand)?;
        writeln!(f, "version = {}", self.version)?;
        writeln!(f, "config_hash = {}", self.config_hash)?;
        writeln!(f, "seed = {}", self.seed)?;
        for (k, p) in &self.inputs {
            writeln!(f, "input.{k} = {}", one_line(&p.display().to_string()))?;
        }
        for (k, p) in &self.outputs {
            writeln!(f, "output.{k} = {}", one_line(&p.display().to_string()))?;
        }
        for (k, v) in &self.facts {
            writeln!(f, "result.{k} = {}", one_line(v))?;
        }
        writeln!(f, "started = {}", stamp(&self.started))?;
        match &self.finished {
            Some(t) => writeln!(f, "finished = {}", stamp(t)),
            None => writeln!(f, "finished = running"),
        }
    }
}
