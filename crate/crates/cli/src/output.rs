//! Manifest, fixed-precision JSON and CSV writers.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;
use std::time::{Duration, SystemTime};

use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::Value;
use sha2::{Digest, Sha256};

use refract_core::error::{RefractError, Result};

pub const TOOL_VERSION: &str = concat!("refract ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub model_hash: String,
    pub parameters: BTreeMap<String, Value>,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, model_bytes: &[u8], parameters: BTreeMap<String, Value>) -> Self {
        Self {
            command: command.to_string(),
            model_hash: sha256_hex(model_bytes),
            parameters,
            tool_version: TOOL_VERSION.to_string(),
            timestamp: timestamp(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// RFC 3339 time from `SOURCE_DATE_EPOCH` when set, otherwise now.
fn timestamp() -> String {
    let time = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<u64>().ok())
        .map(|secs| SystemTime::UNIX_EPOCH + Duration::from_secs(secs))
        .unwrap_or_else(SystemTime::now);
    humantime::format_rfc3339_seconds(time).to_string()
}

/// Writes every float with 17 significant digits.
struct FixedDigits;

impl Formatter for FixedDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{}", fmt_f64(value))
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedDigits);
    value.serialize(&mut ser).expect("output serialises");
    String::from_utf8(buf).expect("utf-8 json")
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    manifest: &'a RunManifest,
    result: &'a T,
}

pub fn json_document<T: Serialize>(manifest: &RunManifest, result: &T) -> String {
    let mut s = to_json(&Envelope { manifest, result });
    s.push('\n');
    s
}

/// CSV with the manifest as a leading comment line.
pub fn csv_document(manifest: &RunManifest, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = format!("# manifest: {}\n{}\n", to_json(manifest), header.join(","));
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text),
        None => io::stdout().lock().write_all(text.as_bytes()),
    }
    .map_err(|e| RefractError::Domain(format!("cannot write output: {e}")))
}
