//! Flat `key = value` text format shared by parameter files and scenario configs.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored. Keys are
//! case-sensitive identifiers; duplicate keys are an error.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut entries: Vec<Entry> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::Config {
                line,
                message: format!("invalid key `{key}`"),
            });
        }
        if value.is_empty() {
            return Err(Error::Config {
                line,
                message: format!("missing value for `{key}`"),
            });
        }
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key `{key}` (first set on line {})", prev.line),
            });
        }
        entries.push(Entry {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(entries)
}

pub fn parse_f64(entry: &Entry) -> Result<f64> {
    let v: f64 = entry.value.parse().map_err(|_| Error::Config {
        line: entry.line,
        message: format!("`{}` is not a number: `{}`", entry.key, entry.value),
    })?;
    if !v.is_finite() {
        return Err(Error::Config {
            line: entry.line,
            message: format!("`{}` must be finite", entry.key),
        });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_scientific_notation() {
        let entries = parse("# header\nalpha = 1.8e-1  # day^-1\n\n beta=2E-9\n").unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].key, "alpha");
        assert_eq!(parse_f64(&entries[0]).unwrap(), 0.18);
        assert_eq!(entries[1].line, 4);
        assert_eq!(parse_f64(&entries[1]).unwrap(), 2e-9);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            parse("alpha 0.18"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            parse("a = 1\na = 2"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(parse("bad key = 1"), Err(Error::Config { .. })));
        let e = parse("x = abc").unwrap();
        assert!(parse_f64(&e[0]).is_err());
    }
}
