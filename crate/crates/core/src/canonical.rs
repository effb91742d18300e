//! Canonical JSON encoding for signed payloads.
//!
//! Rules: object keys sorted by their UTF-8 bytes, no insignificant
//! whitespace, strings escaped as by `serde_json`, integers in decimal and
//! floating-point numbers in shortest round-trip positional notation
//! (never exponent form). Two implementations that follow these rules
//! produce identical bytes for the same value, so signatures over the
//! bytes can be checked anywhere.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CanonicalError {
    #[error("cannot encode value: {0}")]
    Encode(String),
    #[error("malformed document: {0}")]
    Decode(String),
    #[error("document is not in canonical form")]
    NotCanonical,
}

pub fn to_canonical_vec<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let v = serde_json::to_value(value).map_err(|e| CanonicalError::Encode(e.to_string()))?;
    let mut out = Vec::with_capacity(256);
    write_value(&v, &mut out)?;
    Ok(out)
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, CanonicalError> {
    // only ASCII syntax and serde_json-escaped strings are written
    Ok(String::from_utf8(to_canonical_vec(value)?).expect("canonical output is UTF-8"))
}

/// Decodes `bytes` and checks that re-encoding reproduces them exactly.
pub fn from_canonical_slice<T: Serialize + DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    let value: T = serde_json::from_slice(bytes).map_err(|e| CanonicalError::Decode(e.to_string()))?;
    if to_canonical_vec(&value)? != bytes {
        return Err(CanonicalError::NotCanonical);
    }
    Ok(value)
}

fn write_value(v: &Value, out: &mut Vec<u8>) -> Result<(), CanonicalError> {
    match v {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(b) => out.extend_from_slice(if *b { b"true" } else { b"false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                out.extend_from_slice(u.to_string().as_bytes());
            } else if let Some(i) = n.as_i64() {
                out.extend_from_slice(i.to_string().as_bytes());
            } else {
                let f = n.as_f64().ok_or_else(|| CanonicalError::Encode(format!("unrepresentable number {n}")))?;
                if !f.is_finite() {
                    return Err(CanonicalError::Encode("non-finite number".into()));
                }
                // `Display` for f64 is positional and round-trips
                out.extend_from_slice(format!("{}", f + 0.0).as_bytes());
            }
        }
        Value::String(s) => {
            let quoted = serde_json::to_string(s).map_err(|e| CanonicalError::Encode(e.to_string()))?;
            out.extend_from_slice(quoted.as_bytes());
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out)?;
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (k, val)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                let quoted = serde_json::to_string(k).map_err(|e| CanonicalError::Encode(e.to_string()))?;
                out.extend_from_slice(quoted.as_bytes());
                out.push(b':');
                write_value(val, out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

/// Serde adapter for byte fields rendered as standard padded base64.
pub mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text.as_bytes()).map_err(serde::de::Error::custom)
    }
}
