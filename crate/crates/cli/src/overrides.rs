use std::path::Path;

use toml::{Table, Value};
use tsalign_core::datamodel::RunConfig;
use tsalign_core::{fsutil, Error, Result};

/// Defaults, then the file, then `--set` pairs, then `seed`.
pub fn resolve(file: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut table = match file {
        Some(path) => {
            let bytes = fsutil::read(path)?;
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
            text.parse::<Table>()
                .map_err(|e| Error::Config(format!("{}: {}", path.display(), one_line(&e.to_string()))))?
        }
        None => Table::new(),
    };
    for pair in sets {
        let (key, raw) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{pair}`")))?;
        set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
    }
    if let Some(seed) = seed {
        table.insert("seed".into(), Value::Integer(seed as i64));
    }
    RunConfig::from_toml_str(&table.to_string())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key in `{key}`")))?;
    let mut node = table;
    for part in parts {
        let entry = node.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
