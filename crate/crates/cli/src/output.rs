//! Artifact naming and writing. Every file carries the resolved config.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::Value;

use crate::config::ExperimentConfig;

/// `<command>_<model>_<N>_<beta>_<seed>.<ext>`, with `na` for an unused field
/// and multiple sizes joined by `-`.
pub fn artifact_path(cfg: &ExperimentConfig, beta: Option<f64>, ext: &str) -> PathBuf {
    let n = if cfg.n_list.is_empty() {
        "na".to_string()
    } else {
        cfg.n_list.iter().map(u32::to_string).collect::<Vec<_>>().join("-")
    };
    let beta = beta.map_or("na".to_string(), |b| b.to_string());
    cfg.out.join(format!("{}_{}_{}_{}_{}.{ext}", cfg.command, cfg.model_name, n, beta, cfg.seed))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn config_line(cfg: &ExperimentConfig) -> Result<String> {
    Ok(format!("# config: {}\n", serde_json::to_string(cfg)?))
}

/// CSV text preceded by a `# config:` comment line.
pub fn write_text(path: &Path, cfg: &ExperimentConfig, body: &str) -> Result<()> {
    ensure_parent(path)?;
    let text = config_line(cfg)? + body;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_csv(path: &Path, cfg: &ExperimentConfig, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let body = String::from_utf8(w.into_inner().context("flushing csv")?)?;
    write_text(path, cfg, &body)
}
