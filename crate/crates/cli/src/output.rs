//! Artifact serialization: rounding, hashing, file emission.

use std::fs;
use std::path::{Path, PathBuf};

use relscat_core::{Error, ErrorKind};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ConfigDoc;

/// Significant digits kept in every floating output.
pub const DIGITS: usize = 12;

pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", DIGITS - 1, x).parse().unwrap_or(x)
}

/// Rounds every float in a JSON tree in place.
pub fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                *v = json!(round_sig(x));
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Number formatted for CSV after rounding.
pub fn num(x: f64) -> String {
    format!("{}", round_sig(x))
}

/// sha256 of the validated config with defaults filled.
pub fn config_hash(doc: &ConfigDoc) -> String {
    let text = serde_json::to_string(doc).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Validation => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Inconclusive => 4,
    }
}

/// Structured form of a module error.
pub fn error_value(e: &Error) -> Value {
    let debug = format!("{e:?}");
    let variant: String = debug.chars().take_while(|c| c.is_alphanumeric()).collect();
    let kind = match e.kind() {
        ErrorKind::Validation => "validation",
        ErrorKind::Numerical => "numerical",
        ErrorKind::Inconclusive => "inconclusive",
    };
    let mut v = json!({ "kind": kind, "variant": variant, "message": e.to_string() });
    if let Error::Config { pointer, .. } = e {
        v["pointer"] = json!(pointer);
    }
    v
}

/// Writes files into one output directory and remembers what was written.
pub struct Sink {
    dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Sink { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn json(&mut self, name: &str, mut value: Value) -> std::io::Result<()> {
        round_value(&mut value);
        let mut text = serde_json::to_string_pretty(&value).expect("value serializes");
        text.push('\n');
        self.text(name, &text)
    }

    pub fn text(&mut self, name: &str, text: &str) -> std::io::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text)?;
        self.written.push(path);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
        assert_eq!(round_sig(1.234567890123456e-7), 1.23456789012e-7);
        assert_eq!(round_sig(-2.0), -2.0);
        assert!(round_sig(f64::NAN).is_nan());
        let mut v = json!({"a": [1.00000000000001, 3], "b": {"c": 2.718281828459045}});
        round_value(&mut v);
        assert_eq!(v, json!({"a": [1.0, 3], "b": {"c": 2.71828182846}}));
    }

    #[test]
    fn structured_config_error() {
        let v = error_value(&Error::config("/grid/n", "bad"));
        assert_eq!(v["kind"], "validation");
        assert_eq!(v["variant"], "Config");
        assert_eq!(v["pointer"], "/grid/n");
        assert_eq!(exit_code(Error::Divergence("x".into()).kind()), 3);
    }
}
