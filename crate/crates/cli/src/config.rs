//! Layered configuration: command-line flags over a TOML file over defaults.
//!
//! Every subcommand declares its flags as a struct of `Option` fields that
//! is both a clap argument group and a serde record. A TOML file holds one
//! table per subcommand with the same keys as the long flags (using `_` in
//! place of `-`). Flags that were given replace file values key by key.

use std::path::Path;

use anyhow::{bail, Context, Result};
use num_rational::Ratio;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Parsed configuration file.
#[derive(Debug, Default)]
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    /// Reads and parses `path`.
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(ConfigFile { table })
    }

    /// Overlays the flags `flags` of subcommand `name` on the file's table
    /// for that subcommand.
    pub fn merge<T: Serialize + DeserializeOwned>(&self, name: &str, flags: &T) -> Result<T> {
        let mut merged = match self.table.get(name) {
            None => serde_json::Map::new(),
            Some(toml::Value::Table(t)) => match serde_json::to_value(t)? {
                serde_json::Value::Object(map) => map,
                _ => unreachable!("a TOML table serializes to an object"),
            },
            Some(_) => bail!("config: `{name}` must be a table"),
        };
        let serde_json::Value::Object(given) = serde_json::to_value(flags)? else {
            bail!("flags of `{name}` are not a record");
        };
        for (key, value) in given {
            if !value.is_null() {
                merged.insert(key, value);
            }
        }
        serde_json::from_value(serde_json::Value::Object(merged))
            .with_context(|| format!("config: invalid `[{name}]` table"))
    }
}

/// Parses a direction: `e1`, `e2`, ... for coordinate vectors, or a list of
/// components separated by `,` or `;`.
pub fn parse_direction(s: &str, d: usize) -> Result<Vec<f64>> {
    let s = s.trim();
    if let Some(axis) = s.strip_prefix('e') {
        let axis: usize = axis
            .parse()
            .with_context(|| format!("invalid direction `{s}`"))?;
        if axis == 0 || axis > d {
            bail!("direction `{s}` is not a coordinate vector of dimension {d}");
        }
        let mut xi = vec![0.0; d];
        xi[axis - 1] = 1.0;
        return Ok(xi);
    }
    s.split([',', ';'])
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .with_context(|| format!("invalid direction component `{c}`"))
        })
        .collect()
}

/// Canonical label of a direction: `e<i>` for coordinate vectors, else the
/// components joined by `;`.
pub fn direction_label(xi: &[f64]) -> String {
    let ones: Vec<usize> = (0..xi.len()).filter(|&i| xi[i] == 1.0).collect();
    if ones.len() == 1 && xi.iter().filter(|&&x| x == 0.0).count() == xi.len() - 1 {
        return format!("e{}", ones[0] + 1);
    }
    xi.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Parses an exact positive ratio written as `a/b` or as a decimal such as `1.9`.
pub fn parse_ratio(s: &str) -> Result<Ratio<i64>> {
    let s = s.trim();
    let r = if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n
            .trim()
            .parse()
            .with_context(|| format!("invalid ratio `{s}`"))?;
        let d: i64 = d
            .trim()
            .parse()
            .with_context(|| format!("invalid ratio `{s}`"))?;
        if d == 0 {
            bail!("invalid ratio `{s}`: zero denominator");
        }
        Ratio::new(n, d)
    } else {
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 9 || !frac.chars().all(|c| c.is_ascii_digit()) {
            bail!("invalid ratio `{s}`");
        }
        let scale = 10i64.pow(frac.len() as u32);
        let int: i64 = int
            .parse()
            .with_context(|| format!("invalid ratio `{s}`"))?;
        let frac: i64 = if frac.is_empty() { 0 } else { frac.parse()? };
        Ratio::new(int * scale + frac, scale)
    };
    if r <= Ratio::from_integer(0) {
        bail!("ratio `{s}` must be positive");
    }
    Ok(r)
}
