//! Resolves the effective run configuration.
//!
//! Precedence, lowest first: preset, `--config` file (deep-merged key by
//! key), command-line flags.

use std::fs;
use std::path::Path;

use omnifield::config::{ConfigError, RunConfig};
use toml::{Table, Value};

use crate::error::{CliError, Result};

pub const DEFAULT_PRESET: &str = "desk-synthetic";

/// Recursively overlays `top` onto `base`; tables merge, everything else
/// (including arrays) is replaced.
pub fn deep_merge(base: &mut Table, top: Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(t)) => deep_merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

pub fn resolve(preset: Option<&str>, file: Option<&Path>) -> Result<RunConfig> {
    let overlay: Option<Table> = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(CliError::io(path.display()))?;
            Some(toml::from_str(&text).map_err(ConfigError::from)?)
        }
        None => None,
    };
    let file_preset = overlay
        .as_ref()
        .and_then(|t| t.get("preset"))
        .and_then(Value::as_str)
        .map(str::to_owned);
    let name = preset.map(str::to_owned).or(file_preset).unwrap_or_else(|| DEFAULT_PRESET.into());
    let base = RunConfig::preset(&name)?;
    let Some(mut overlay) = overlay else {
        return Ok(base);
    };
    overlay.insert("preset".into(), Value::String(name));
    let mut merged = Table::try_from(&base).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    deep_merge(&mut merged, overlay);
    let cfg: RunConfig = Value::Table(merged).try_into().map_err(ConfigError::from)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Human-readable hyperparameter summary printed before training.
pub fn describe(cfg: &RunConfig) -> String {
    let m = &cfg.model;
    let t = &cfg.train;
    let s = &t.schedule;
    let mut lines = vec![format!("preset: {}", cfg.preset.as_deref().unwrap_or("custom"))];
    lines.push(format!(
        "model: width {} | latents {} | stages {} | heads {} | trunk depth {} | fusion {:?}",
        m.width, m.latents, m.stages, m.heads, m.trunk_depth, m.fusion
    ));
    lines.push(format!(
        "encodings: space {} bands (scale {}) | time {} bands (scale {}) | query combine {:?}",
        m.space.bands, m.space.scale, m.time.bands, m.time.scale, m.query_combine
    ));
    lines.push(format!(
        "optimizer: AdamW beta1 {} beta2 {} eps {} weight decay {}",
        t.optimizer.beta1, t.optimizer.beta2, t.optimizer.eps, t.optimizer.weight_decay
    ));
    lines.push(format!(
        "schedule: max lr {} min lr {} warmup {} cycle {} (x{})",
        s.max_lr, s.min_lr, s.warmup_steps, s.cycle_steps, s.cycle_mult
    ));
    lines.push(format!(
        "training: {} steps | batch {} | grad clip {:?} | eval every {}",
        t.steps, t.batch_size, t.grad_clip, t.eval_every
    ));
    lines.join("\n")
}
