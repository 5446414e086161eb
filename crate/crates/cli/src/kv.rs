//! Plain-text `key = value` files. Blank lines and `#` comments are ignored.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    /// A blank line followed by `# title`.
    pub fn section(&mut self, title: &str) {
        self.entries.push((String::new(), format!("# {title}")));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .filter(|(k, _)| !k.is_empty())
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            if k.is_empty() {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(v);
            } else {
                out.push_str(k);
                out.push_str(" = ");
                out.push_str(v);
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut doc = KvDoc::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected 'key = value'", i + 1))?;
            doc.push(k.trim(), v.trim());
        }
        Ok(doc)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|reason| CliError::Malformed {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.entries().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_parse_round_trip() {
        let mut doc = KvDoc::new();
        doc.push("a", 1.5);
        doc.section("checks");
        doc.push("b.c", "x = y");
        let text = doc.render();
        let back = KvDoc::parse(&text).unwrap();
        assert_eq!(back.get("a"), Some("1.5"));
        assert_eq!(back.get("b.c"), Some("x = y"));
        assert!(KvDoc::parse("no equals sign").is_err());
    }
}
