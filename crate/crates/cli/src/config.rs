//! Layered settings: built-in defaults, then a TOML file, then `--set`
//! overrides and dedicated flags, then `SENSOR_*` environment variables for
//! the service section.

use std::path::{Path, PathBuf};

use sensor_core::augmentation::AugPlan;
use sensor_core::baselines::LinearConfig;
use sensor_core::cbow::CbowConfig;
use sensor_core::grace::{GraceConfig, TrainConfig};
use sensor_core::metrics::{BENCH_RUNS, BENCH_WARMUPS, MTLD_THRESHOLD};
use sensor_service::config::ServiceConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepSettings {
    /// Directory holding contractions.txt, stopwords.txt and lemma_rules.txt.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub keywords: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    pub plan: AugPlan,
    pub synonyms: Option<PathBuf>,
    pub provider: String,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        AugmentSettings {
            plan: AugPlan::default(),
            synonyms: None,
            provider: "stub".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub mtld_threshold: f64,
    pub bench_runs: usize,
    pub bench_warmups: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            mtld_threshold: MTLD_THRESHOLD,
            bench_runs: BENCH_RUNS,
            bench_warmups: BENCH_WARMUPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub prep: PrepSettings,
    pub filter: FilterSettings,
    pub augment: AugmentSettings,
    pub cbow: CbowConfig,
    pub grace: GraceConfig,
    pub train: TrainConfig,
    pub baseline: LinearConfig,
    pub metrics: MetricSettings,
    pub service: ServiceConfig,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses the right-hand side of `--set key=value` as a TOML literal, falling
/// back to a bare string.
fn literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::usage(format!("bad --set key {key:?}")));
    }
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::usage(format!("--set {key}: {p} is not a section")))?;
        node = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::usage(format!("--set {key}: parent is not a section")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub struct Layers<'a> {
    pub file: Option<&'a Path>,
    pub sets: &'a [String],
    pub seed: Option<u64>,
}

impl Settings {
    /// Resolves every layer except the environment.
    pub fn resolve(layers: &Layers<'_>) -> Result<Self, CliError> {
        let mut value = toml::Value::try_from(Settings::default()).map_err(CliError::runtime)?;
        if let Some(path) = layers.file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
            let file: toml::Value = toml::from_str(&text)
                .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
            merge(&mut value, file);
        }
        for s in layers.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--set expects key=value, got {s:?}")))?;
            set_path(&mut value, k.trim(), literal(v.trim()))?;
        }
        let mut settings: Settings = value
            .try_into()
            .map_err(|e: toml::de::Error| CliError::usage(format!("config: {}", e.message())))?;
        if let Some(seed) = layers.seed {
            settings.seed = seed;
        }
        settings.propagate_seed();
        Ok(settings)
    }

    /// One seed drives every stochastic stage.
    pub fn propagate_seed(&mut self) {
        self.augment.plan.seed = self.seed;
        self.cbow.seed = self.seed;
        self.train.seed = self.seed;
        self.baseline.seed = self.seed;
    }

    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        self.service
            .apply_env(vars)
            .map_err(|e| CliError::usage(e.to_string()))
    }

    /// SHA-256 of the resolved settings.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("settings serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layers<'a>(file: Option<&'a Path>, sets: &'a [String], seed: Option<u64>) -> Layers<'a> {
        Layers { file, sets, seed }
    }

    #[test]
    fn defaults_match_library_defaults() {
        let s = Settings::resolve(&layers(None, &[], None)).unwrap();
        assert_eq!(s.grace, GraceConfig::default());
        assert_eq!(s.cbow.dim, 200);
        assert_eq!(s.augment.plan.per_review(), 9);
        assert_eq!(s.metrics.mtld_threshold, 0.72);
    }

    #[test]
    fn example_config_lists_the_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/sensor.example.toml");
        let s = Settings::resolve(&layers(Some(&path), &[], None)).unwrap();
        assert_eq!(s, Settings::resolve(&layers(None, &[], None)).unwrap());
    }

    #[test]
    fn file_then_flags_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "seed = 3\n[grace]\nhidden = 16\ndense = 8\n[service]\nlisten = \"0.0.0.0:1\"\n",
        )
        .unwrap();
        let sets = vec!["grace.hidden=32".to_string(), "train.lr = 0.01".to_string()];
        let mut s = Settings::resolve(&layers(Some(&path), &sets, Some(9))).unwrap();
        assert_eq!(s.grace.hidden, 32);
        assert_eq!(s.grace.dense, 8);
        assert_eq!(s.train.lr, 0.01);
        assert_eq!(s.seed, 9);
        assert_eq!((s.cbow.seed, s.train.seed, s.augment.plan.seed), (9, 9, 9));
        assert_eq!(s.service.listen, "0.0.0.0:1");
        s.apply_env([("SENSOR_LISTEN", "127.0.0.1:2")]).unwrap();
        assert_eq!(s.service.listen, "127.0.0.1:2");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let sets = vec!["grace.hiden=3".to_string()];
        assert!(matches!(
            Settings::resolve(&layers(None, &sets, None)),
            Err(CliError::Usage(_))
        ));
        let sets = vec!["nonsense".to_string()];
        assert!(Settings::resolve(&layers(None, &sets, None)).is_err());
    }

    #[test]
    fn string_values_need_no_quotes() {
        let sets = vec!["augment.provider=cmd:my-augmenter --fast".to_string()];
        let s = Settings::resolve(&layers(None, &sets, None)).unwrap();
        assert_eq!(s.augment.provider, "cmd:my-augmenter --fast");
    }

    #[test]
    fn hash_tracks_content() {
        let a = Settings::default();
        let mut b = Settings::default();
        assert_eq!(a.hash(), b.hash());
        b.grace.hidden += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
