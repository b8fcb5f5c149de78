//! Config-file grammar shared by the command-line binary and its fuzz
//! target: UTF-8 lines of `key=value`, `#` starts a comment, blank lines
//! ignored, and dashes in keys normalize to underscores.

use std::collections::BTreeMap;

/// Parse config text into a key → value map. Later duplicates win.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", lineno + 1))?;
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}
