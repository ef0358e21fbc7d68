//! Parameter sweeps: the cartesian product of `key=v1,v2,…` overrides, each
//! point run as an independent experiment in its own subdirectory.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiments::{output_dir, run};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepParam {
    /// `name` for the kind's table, `table.name` otherwise.
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| CliError::invalid("--param", format!("expected key=v1,v2,…, got {s}")))?;
        let key = key.trim().to_string();
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if key.is_empty() || values.iter().any(|v| v.is_empty()) {
            return Err(CliError::invalid("--param", format!("empty key or value in {s}")));
        }
        Ok(Self { key, values })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub overrides: Vec<(String, String)>,
    pub output: PathBuf,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub summary: Value,
}

fn parse_value(text: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").expect("key was just parsed"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

fn apply(table: &mut toml::Table, section: &str, key: &str, value: &str) -> Result<()> {
    let (sec, name) = key.split_once('.').unwrap_or((section, key));
    let entry = table
        .entry(sec.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => {
            t.insert(name.to_string(), parse_value(value));
            Ok(())
        }
        _ => Err(CliError::invalid(key, "is not a table")),
    }
}

fn dir_name(overrides: &[(String, String)]) -> String {
    overrides
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("_")
        .replace(['/', '\\'], "-")
}

/// Expands the grid of overrides in row-major order over `params`.
pub fn expand(params: &[SweepParam]) -> Vec<Vec<(String, String)>> {
    let mut points = vec![Vec::new()];
    for p in params {
        points = points
            .into_iter()
            .flat_map(|prefix: Vec<(String, String)>| {
                p.values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push((p.key.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }
    points
}

/// Validates every point up front, then runs them on `jobs` threads. Failed
/// points are reported in the result rather than aborting the sweep.
pub fn sweep(
    text: &str,
    base: &Path,
    root: &Path,
    params: &[SweepParam],
    jobs: usize,
) -> Result<(PathBuf, Vec<SweepPoint>)> {
    let raw: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
    let parent = ExperimentConfig::from_table(raw.clone())?;
    let sweep_dir = output_dir(&parent, root);
    let section = parent.experiment.kind.name();

    let mut configs = Vec::new();
    for overrides in expand(params) {
        let mut t = raw.clone();
        for (k, v) in &overrides {
            apply(&mut t, section, k, v)?;
        }
        let mut c = ExperimentConfig::from_table(t)?;
        let out = sweep_dir.join(dir_name(&overrides));
        c.experiment.output = Some(out.to_string_lossy().into_owned());
        configs.push((overrides, c, out));
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SweepPoint>>> = Mutex::new(vec![None; configs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, configs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((overrides, c, out)) = configs.get(i) else { break };
                let point = match run(c, base, out) {
                    Ok(m) => SweepPoint {
                        overrides: overrides.clone(),
                        output: out.clone(),
                        exit_code: 0,
                        error: None,
                        summary: m.summary,
                    },
                    Err(e) => SweepPoint {
                        overrides: overrides.clone(),
                        output: out.clone(),
                        exit_code: e.exit_code(),
                        error: Some(e.to_string()),
                        summary: Value::Null,
                    },
                };
                results.lock().expect("no worker panics while holding the lock")[i] = Some(point);
            });
        }
    });
    let points: Vec<SweepPoint> = results
        .into_inner()
        .expect("workers have finished")
        .into_iter()
        .map(|p| p.expect("every point ran"))
        .collect();

    std::fs::create_dir_all(&sweep_dir).map_err(|e| CliError::io(&sweep_dir, e))?;
    let path = sweep_dir.join("sweep.json");
    let text = serde_json::to_string_pretty(&points).expect("sweep results always serialize");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok((path, points))
}
