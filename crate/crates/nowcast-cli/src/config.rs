//! Plain-text `key = value` pipeline configuration with `#` comments.
//!
//! Precedence elsewhere: command-line flags beat NOWCAST_SEED, which
//! beats these values, which beat built-in defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nowcast::rainfall::RegionOfInterest;

/// Raw settings from a config file; everything optional so callers can
/// layer flag/env overrides on top.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub cell: Option<String>,
    pub arch: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub norm_divisor: Option<f32>,
    pub pad_to: Option<usize>,
    pub mask_fill: Option<f32>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub top_events: Option<usize>,
    pub sequence_id: Option<String>,
    pub rois: Vec<RegionOfInterest>,
}

pub fn parse_config(text: &str) -> Result<FileConfig> {
    let mut cfg = FileConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`, got '{raw}'", lineno + 1);
        };
        let (key, value) = (key.trim(), value.trim());
        let ctx = || format!("config line {}: bad value for {key}", lineno + 1);
        match key {
            "seed" => cfg.seed = Some(value.parse().with_context(ctx)?),
            "cell" => cfg.cell = Some(value.to_string()),
            "arch" => cfg.arch = Some(value.to_string()),
            "epochs" => cfg.epochs = Some(value.parse().with_context(ctx)?),
            "batch_size" => cfg.batch_size = Some(value.parse().with_context(ctx)?),
            "lr" => cfg.lr = Some(value.parse().with_context(ctx)?),
            "norm_divisor" => cfg.norm_divisor = Some(value.parse().with_context(ctx)?),
            "pad_to" => cfg.pad_to = Some(value.parse().with_context(ctx)?),
            "mask_fill" => cfg.mask_fill = Some(value.parse().with_context(ctx)?),
            "alpha" => cfg.alpha = Some(value.parse().with_context(ctx)?),
            "beta" => cfg.beta = Some(value.parse().with_context(ctx)?),
            "top_events" => cfg.top_events = Some(value.parse().with_context(ctx)?),
            "sequence_id" => cfg.sequence_id = Some(value.to_string()),
            "roi" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| p.trim().parse().with_context(ctx))
                    .collect::<Result<_>>()?;
                if parts.len() != 4 {
                    bail!("config line {}: roi needs row0,col0,row1,col1", lineno + 1);
                }
                cfg.rois.push(
                    RegionOfInterest::new(parts[0], parts[1], parts[2], parts[3])
                        .with_context(ctx)?,
                );
            }
            other => bail!("config line {}: unknown key '{other}'", lineno + 1),
        }
    }
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            parse_config(&text)
        }
    }
}

/// Config seed, overridden by NOWCAST_SEED, overridden by `flag`.
pub fn resolve_seed(flag: Option<u64>, cfg: &FileConfig) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Ok(v) = std::env::var("NOWCAST_SEED") {
        return v.parse().with_context(|| format!("NOWCAST_SEED='{v}' is not an integer"));
    }
    Ok(cfg.seed.unwrap_or(7))
}
