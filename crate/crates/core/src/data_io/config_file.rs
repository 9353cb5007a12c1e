use std::path::Path;

use crate::error::{Error, Result};
use crate::search::SearchConfig;

/// Parse `key = value` lines over the defaults. `#` starts a comment; blank
/// lines are ignored; unknown keys and malformed values are errors that
/// name the line.
pub fn parse_config(text: &str) -> Result<SearchConfig> {
    let mut cfg = SearchConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::ConfigLine { line: i + 1, msg: format!("expected `key = value`, got `{line}`") })?;
        cfg.set(k.trim(), v.trim()).map_err(|msg| Error::ConfigLine { line: i + 1, msg })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<SearchConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}
