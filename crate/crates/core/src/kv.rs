//! Flat `key = value` files shared by training configs and synthetic specs.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Blank lines and `#` comments are skipped. Keys are case-sensitive.
pub fn parse(text: &str, origin: &Path) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(origin, i + 1, format!("expected key=value, got {line:?}")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::parse(origin, i + 1, "empty key"));
        }
        if out.iter().any(|e: &Entry| e.key == key) {
            return Err(Error::parse(origin, i + 1, format!("duplicate key {key}")));
        }
        out.push(Entry {
            line: i + 1,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn value<T: FromStr>(entry: &Entry, origin: &Path) -> Result<T> {
    entry.value.parse().map_err(|_| {
        Error::parse(
            origin,
            entry.line,
            format!("invalid value {:?} for {}", entry.value, entry.key),
        )
    })
}

pub fn unknown(entry: &Entry, origin: &Path) -> Error {
    Error::parse(origin, entry.line, format!("unknown key {}", entry.key))
}

/// `%.9g`-style formatting: nine significant digits, trailing zeros trimmed.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
