//! Plain-text `key = value` files. `#` starts a comment line; blank lines
//! are ignored; keys are unique.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::MalformedLine {
            line: i + 1,
            reason: "expected `key = value`".into(),
        })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::MalformedLine {
                line: i + 1,
                reason: "empty key".into(),
            });
        }
        if out.insert(key.to_owned(), v.trim().to_owned()).is_some() {
            return Err(Error::MalformedLine {
                line: i + 1,
                reason: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(out)
}

pub fn read_kv(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text)
}

/// Parses every value with `FromStr`.
pub fn parse_values<T: std::str::FromStr>(map: &BTreeMap<String, String>) -> Result<BTreeMap<String, T>>
where
    T::Err: std::fmt::Display,
{
    map.iter()
        .map(|(k, v)| {
            v.parse()
                .map(|p| (k.clone(), p))
                .map_err(|e| Error::invalid(format!("`{k} = {v}`: {e}")))
        })
        .collect()
}
