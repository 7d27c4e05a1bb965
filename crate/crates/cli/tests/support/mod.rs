#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sensor_core::corpus::{load_csv, save_csv, ColumnMapping};
use sensor_core::synth::{generate, SynthConfig};
use sensor_core::Review;

pub const SYNTH_APP: &str = "com.example.synthetic";

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sensor"));
    c.env("SENSOR_LOG", "warn");
    c
}

/// Runs `sensor` with `args`, returning the output.
pub fn run<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    bin().args(args).output().expect("spawn sensor")
}

/// Runs and asserts exit 0, printing stderr on failure.
pub fn ok<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn p(path: &Path) -> String {
    path.display().to_string()
}

/// Writes a gold-labeled synthetic corpus and returns its path.
pub fn synth_csv(dir: &Path, name: &str, reviews: usize, seed: u64) -> PathBuf {
    let rows = generate(&SynthConfig {
        reviews,
        seed,
        ..SynthConfig::default()
    });
    let path = dir.join(name);
    save_csv(&rows, &path, true).unwrap();
    path
}

pub fn read_reviews(path: &Path) -> Vec<Review> {
    load_csv(path, &ColumnMapping::default()).unwrap()
}

pub fn manifest(path: &Path) -> BTreeMap<String, String> {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub fn run_file(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".run");
    PathBuf::from(s)
}

/// Small model sizes so CLI training finishes in seconds.
pub const SMALL_CONFIG: &str = r#"
seed = 5

[cbow]
dim = 16
epochs = 3
min_count = 1

[grace]
hidden = 16
dense = 8
max_len = 30

[train]
epochs = 4
batch_size = 32
lr = 0.01
"#;

pub fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL_CONFIG).unwrap();
    path
}
