//! Line-oriented sectioned key/value config files.
//!
//! ```text
//! [run]
//! backend = lift
//! target = gumbel
//! ```
//!
//! Parsing keeps the line number of every entry so config errors point at
//! their source, and every key must be consumed by the command that loads the
//! file: unknown keys are rejected.

use std::collections::BTreeSet;

#[derive(Debug)]
pub struct CfgError {
    pub line: usize,
    pub msg: String,
}

impl CfgError {
    fn new(line: usize, msg: impl Into<String>) -> Self {
        CfgError { line, msg: msg.into() }
    }
}

#[derive(Clone, Debug)]
pub struct Entry {
    pub section: String,
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Config {
    entries: Vec<Entry>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, CfgError> {
        let mut entries = Vec::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| CfgError::new(line, "unterminated section header"))?;
                section = name.trim().to_string();
                if section.is_empty() {
                    return Err(CfgError::new(line, "empty section name"));
                }
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| CfgError::new(line, format!("expected `key = value`, got `{trimmed}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(CfgError::new(line, "empty key"));
            }
            if section.is_empty() {
                return Err(CfgError::new(line, format!("key `{key}` outside any [section]")));
            }
            if entries
                .iter()
                .any(|e: &Entry| e.section == section && e.key == key)
            {
                return Err(CfgError::new(line, format!("duplicate key `{key}` in [{section}]")));
            }
            entries.push(Entry {
                section: section.clone(),
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(Config { entries })
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries
            .iter()
            .find(|e| e.section == section && e.key == key)
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&Entry, CfgError> {
        self.get(section, key).ok_or_else(|| {
            CfgError::new(0, format!("missing required key `{key}` in section [{section}]"))
        })
    }

    pub fn get_u64(&self, section: &str, key: &str) -> Result<Option<u64>, CfgError> {
        self.get(section, key)
            .map(|e| {
                e.value
                    .parse()
                    .map_err(|_| CfgError::new(e.line, format!("`{key}` must be an integer, got `{}`", e.value)))
            })
            .transpose()
    }

    pub fn get_usize(&self, section: &str, key: &str) -> Result<Option<usize>, CfgError> {
        Ok(self.get_u64(section, key)?.map(|v| v as usize))
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>, CfgError> {
        self.get(section, key)
            .map(|e| {
                e.value
                    .parse()
                    .map_err(|_| CfgError::new(e.line, format!("`{key}` must be a number, got `{}`", e.value)))
            })
            .transpose()
    }

    pub fn get_bool(&self, section: &str, key: &str) -> Result<Option<bool>, CfgError> {
        self.get(section, key)
            .map(|e| match e.value.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(CfgError::new(e.line, format!("`{key}` must be a boolean, got `{other}`"))),
            })
            .transpose()
    }

    /// Whitespace-separated list of numbers.
    pub fn get_f64_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, CfgError> {
        self.get(section, key)
            .map(|e| {
                e.value
                    .split_whitespace()
                    .map(|p| {
                        p.parse().map_err(|_| {
                            CfgError::new(e.line, format!("`{key}` entries must be numbers, got `{p}`"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn get_str_list(&self, section: &str, key: &str) -> Option<Vec<String>> {
        self.get(section, key)
            .map(|e| e.value.split_whitespace().map(|s| s.to_string()).collect())
    }

    /// Reject any key outside the allowed (section, key) set.
    pub fn reject_unknown(&self, allowed: &[(&str, &[&str])]) -> Result<(), CfgError> {
        let set: BTreeSet<(String, String)> = allowed
            .iter()
            .flat_map(|(s, keys)| keys.iter().map(move |k| (s.to_string(), k.to_string())))
            .collect();
        for e in &self.entries {
            if !set.contains(&(e.section.clone(), e.key.clone())) {
                return Err(CfgError::new(
                    e.line,
                    format!("unknown key `{}` in section [{}]", e.key, e.section),
                ));
            }
        }
        Ok(())
    }
}
