//! Config-file defaults, provenance, and output writers.
//!
//! Every command accepts `--config <file.toml>` with flat `key = value`
//! entries named after long flags; explicit flags win over the file,
//! which wins over built-in defaults. Every output embeds a provenance
//! block with the fully resolved settings so runs are reproducible from
//! their artifacts alone; nothing time- or host-dependent is recorded.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Flat key=value defaults loaded from a TOML file.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, toml::Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::InvalidArg(format!("config {}: {e}", path.display())))?;
        Ok(Self {
            values: table.into_iter().collect(),
        })
    }

    fn get(&self, key: &str) -> Option<&toml::Value> {
        self.values.get(key)
    }

    pub fn f64(&self, key: &str) -> Option<f64> {
        match self.get(key) {
            Some(toml::Value::Float(v)) => Some(*v),
            Some(toml::Value::Integer(v)) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn u64(&self, key: &str) -> Option<u64> {
        match self.get(key) {
            Some(toml::Value::Integer(v)) if *v >= 0 => Some(*v as u64),
            _ => None,
        }
    }

    pub fn usize(&self, key: &str) -> Option<usize> {
        self.u64(key).map(|v| v as usize)
    }

    pub fn string(&self, key: &str) -> Option<String> {
        match self.get(key) {
            Some(toml::Value::String(v)) => Some(v.clone()),
            Some(toml::Value::Float(v)) => Some(v.to_string()),
            Some(toml::Value::Integer(v)) => Some(v.to_string()),
            Some(toml::Value::Boolean(v)) => Some(v.to_string()),
            _ => None,
        }
    }

}

/// Resolve an optional flag against the config file and a default.
pub fn resolve<T: Clone>(flag: &Option<T>, file: Option<T>, default: T) -> T {
    flag.clone().or(file).unwrap_or(default)
}

/// Fully resolved settings recorded in every output.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub settings: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            settings: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.settings.insert(key.to_string(), value.to_string());
        self
    }

    /// `# key=value` comment lines for CSV outputs, sorted by key.
    pub fn csv_comments(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# command={}\n", self.command));
        out.push_str(&format!("# version={}\n", self.version));
        for (k, v) in &self.settings {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out
    }
}

/// Serialize `value` with an embedded provenance block to `--out` or stdout.
pub fn emit_json<T: Serialize>(
    value: &T,
    provenance: &Provenance,
    out: Option<&Path>,
) -> Result<()> {
    #[derive(Serialize)]
    struct Wrapper<'a, T> {
        #[serde(flatten)]
        value: &'a T,
        provenance: &'a Provenance,
    }
    let text = serde_json::to_string_pretty(&Wrapper { value, provenance })
        .expect("reports serialize");
    match out {
        Some(path) => {
            let mut f = std::fs::File::create(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            f.write_all(text.as_bytes())
                .and_then(|_| f.write_all(b"\n"))
                .map_err(|e| Error::io(path.display().to_string(), e))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

/// Write a schema-versioned CSV: `# schema=1`, provenance comments,
/// header, then rows.
pub fn emit_csv(
    path: &Path,
    provenance: &Provenance,
    header: &str,
    rows: &[String],
) -> Result<()> {
    let mut text = String::from("# schema=1\n");
    text.push_str(&provenance.csv_comments());
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Resolve a dataset manifest path: directories need a `--split` stem and
/// expand to `<dir>/<split>.manifest.json`.
pub fn resolve_manifest(path: &Path, split: Option<&str>) -> Result<PathBuf> {
    if path.is_dir() {
        let stem = split.unwrap_or("data");
        Ok(path.join(format!("{stem}.manifest.json")))
    } else {
        if split.is_some() && !path.is_dir() {
            // a file path together with --split is accepted; the split is
            // metadata only
        }
        Ok(path.to_path_buf())
    }
}

/// Parse a comma-separated list of numbers.
pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|tok| tok.trim())
        .filter(|tok| !tok.is_empty())
        .map(|tok| {
            tok.parse::<T>()
                .map_err(|_| Error::InvalidArg(format!("bad {what} entry {tok:?}")))
        })
        .collect()
}

/// Format a float for CSV output: shortest round-trip representation.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}
