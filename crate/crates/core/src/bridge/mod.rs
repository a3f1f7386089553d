//! Line-delimited JSON protocol for external scorer processes.
//!
//! One JSON object per `\n`-terminated line. Every request carries a
//! `req_id`; the handshake uses id 0 and later requests count up from 1.
//!
//! ```text
//! -> {"req_id":0,"op":"hello","protocol":1}
//! <- {"req_id":0,"name":"qe-mock","shape":"joint","deterministic":true}
//! -> {"req_id":1,"op":"score_pair","pairs":[["a b","a b"]]}
//! <- {"req_id":1,"scores":[1.0]}
//! ```

mod client;
mod server;

use std::time::Duration;

use serde_json::{json, Map, Value};

use crate::utility::{ProviderCapabilities, ScoreError, Shape};

pub use client::{ScorerConnection, ScorerPool};
pub use server::{handle_request, serve, ServeOptions};

pub const PROTOCOL_VERSION: u64 = 1;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BridgeOptions {
    pub timeout: Duration,
    /// Maximum items per request; larger batches are split and pipelined.
    pub batch_size: usize,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

/// Capabilities object as sent in a hello reply.
pub fn capabilities_json(req_id: u64, caps: &ProviderCapabilities) -> Value {
    let mut obj = Map::new();
    obj.insert("req_id".into(), json!(req_id));
    obj.insert("name".into(), json!(caps.name));
    obj.insert("shape".into(), json!(caps.shape));
    if let Some(d) = caps.embedding_dim {
        obj.insert("embedding_dim".into(), json!(d));
    }
    obj.insert("deterministic".into(), json!(caps.deterministic));
    Value::Object(obj)
}

/// Parses and validates a hello reply.
pub fn parse_capabilities(reply: &Value) -> Result<ProviderCapabilities, ScoreError> {
    let bad = |m: String| ScoreError::Protocol(format!("handshake: {m}"));
    let obj = reply.as_object().ok_or_else(|| bad("reply is not an object".into()))?;
    if let Some(p) = obj.get("protocol") {
        if p.as_u64() != Some(PROTOCOL_VERSION) {
            return Err(bad(format!("protocol version mismatch: scorer speaks {p}, client speaks {PROTOCOL_VERSION}")));
        }
    }
    let field = |k: &str| obj.get(k).ok_or_else(|| bad(format!("missing field `{k}`")));
    let name = field("name")?
        .as_str()
        .ok_or_else(|| bad("`name` must be a string".into()))?
        .to_string();
    let shape = match field("shape")?.as_str() {
        Some("joint") => Shape::Joint,
        Some("factorable") => Shape::Factorable,
        _ => return Err(bad("`shape` must be \"joint\" or \"factorable\"".into())),
    };
    let deterministic = field("deterministic")?
        .as_bool()
        .ok_or_else(|| bad("`deterministic` must be a boolean".into()))?;
    let embedding_dim = match obj.get("embedding_dim") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| bad("`embedding_dim` must be a non-negative integer".into()))? as usize,
        ),
    };
    let caps = ProviderCapabilities {
        name,
        shape,
        embedding_dim,
        deterministic,
    };
    caps.validate().map_err(bad)?;
    Ok(caps)
}

pub(crate) fn parse_scores(reply: &Value, expected: usize) -> Result<Vec<f64>, ScoreError> {
    let arr = reply
        .get("scores")
        .and_then(Value::as_array)
        .ok_or_else(|| ScoreError::Protocol("response has no `scores` array".into()))?;
    if arr.len() != expected {
        return Err(ScoreError::LengthMismatch {
            expected,
            found: arr.len(),
        });
    }
    arr.iter()
        .enumerate()
        .map(|(index, v)| match v.as_f64() {
            Some(x) if x.is_finite() => Ok(x),
            _ => Err(ScoreError::NonFinite { index }),
        })
        .collect()
}

pub(crate) fn parse_embeddings(reply: &Value, expected: usize, dim: usize) -> Result<Vec<Vec<f64>>, ScoreError> {
    let arr = reply
        .get("embeddings")
        .and_then(Value::as_array)
        .ok_or_else(|| ScoreError::Protocol("response has no `embeddings` array".into()))?;
    if arr.len() != expected {
        return Err(ScoreError::LengthMismatch {
            expected,
            found: arr.len(),
        });
    }
    arr.iter()
        .enumerate()
        .map(|(index, row)| {
            let row = row
                .as_array()
                .ok_or_else(|| ScoreError::Protocol(format!("embedding {index} is not an array")))?;
            if row.len() != dim {
                return Err(ScoreError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            row.iter()
                .map(|v| v.as_f64().filter(|x| x.is_finite()).ok_or(ScoreError::NonFinite { index }))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capabilities_round_trip() {
        for caps in [
            ProviderCapabilities::joint("qe-mock", true),
            ProviderCapabilities::factorable("lexical-mock", 256, true),
        ] {
            assert_eq!(parse_capabilities(&capabilities_json(0, &caps)).unwrap(), caps);
        }
    }

    #[test]
    fn hello_reply_golden() {
        let v = capabilities_json(0, &ProviderCapabilities::factorable("lexical-mock", 8, true));
        assert_eq!(
            v.to_string(),
            r#"{"req_id":0,"name":"lexical-mock","shape":"factorable","embedding_dim":8,"deterministic":true}"#
        );
    }

    #[test]
    fn missing_shape_is_named() {
        let err = parse_capabilities(&json!({"req_id":0,"name":"x","deterministic":true})).unwrap_err();
        assert!(err.to_string().contains("`shape`"), "{err}");
    }

    #[test]
    fn factorable_without_dim_rejected() {
        let err = parse_capabilities(&json!({"req_id":0,"name":"x","shape":"factorable","deterministic":true})).unwrap_err();
        assert!(err.to_string().contains("embedding_dim"), "{err}");
    }

    #[test]
    fn protocol_mismatch_rejected() {
        let err = parse_capabilities(&json!({"req_id":0,"name":"x","shape":"joint","deterministic":true,"protocol":2})).unwrap_err();
        assert!(err.to_string().contains("version mismatch"), "{err}");
    }

    #[test]
    fn score_parsing() {
        assert_eq!(parse_scores(&json!({"scores":[1.0, 0.5]}), 2).unwrap(), vec![1.0, 0.5]);
        assert!(matches!(
            parse_scores(&json!({"scores":[1.0, 0.5]}), 3),
            Err(ScoreError::LengthMismatch { expected: 3, found: 2 })
        ));
        assert!(matches!(parse_scores(&json!({"scores":[null]}), 1), Err(ScoreError::NonFinite { index: 0 })));
    }
}
