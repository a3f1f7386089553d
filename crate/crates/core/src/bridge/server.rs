//! Scorer side of the protocol over any in-process provider. Used as a test
//! double and by the mock scorer binary.

use std::io::{self, BufRead, Write};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{capabilities_json, PROTOCOL_VERSION};
use crate::utility::{Embedding, ScoreError, UtilityProvider};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeOptions {
    /// Hold replies and release them newest-first.
    pub reorder: bool,
    /// Close the connection after answering this many non-hello requests.
    pub crash_after: Option<usize>,
}

const REORDER_WINDOW: usize = 8;
const REORDER_IDLE: Duration = Duration::from_millis(10);

fn error_reply(req_id: &Value, msg: impl std::fmt::Display) -> Value {
    json!({"req_id": req_id, "error": msg.to_string()})
}

fn parse_vec(v: &Value) -> Option<Embedding> {
    let vals: Option<Vec<f64>> = v.as_array()?.iter().map(Value::as_f64).collect();
    Embedding::new(vals?).ok()
}

fn scores_reply(req_id: &Value, scores: Result<Vec<f64>, ScoreError>) -> Value {
    match scores {
        Ok(s) => json!({"req_id": req_id, "scores": s}),
        Err(e) => error_reply(req_id, e),
    }
}

/// Answers one decoded request line.
pub fn handle_request(provider: &dyn UtilityProvider, request: &Value) -> Value {
    let id = request.get("req_id").cloned().unwrap_or(Value::Null);
    let op = request.get("op").and_then(Value::as_str).unwrap_or("");
    match op {
        "hello" => match request.get("protocol").and_then(Value::as_u64) {
            Some(PROTOCOL_VERSION) => capabilities_json(id.as_u64().unwrap_or(0), provider.capabilities()),
            other => error_reply(&id, format!("unsupported protocol version {other:?}; this scorer speaks {PROTOCOL_VERSION}")),
        },
        "score_pair" => {
            let Some(raw) = request.get("pairs").and_then(Value::as_array) else {
                return error_reply(&id, "`pairs` must be an array");
            };
            let pairs: Option<Vec<(&str, &str)>> = raw
                .iter()
                .map(|p| match p.as_array().map(Vec::as_slice) {
                    Some([l, r]) => Some((l.as_str()?, r.as_str()?)),
                    _ => None,
                })
                .collect();
            match pairs {
                Some(p) => scores_reply(&id, provider.score_pairs(&p)),
                None => error_reply(&id, "each pair must be [left, right] strings"),
            }
        }
        "embed" => {
            let texts: Option<Vec<&str>> = request
                .get("texts")
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(Value::as_str).collect());
            let Some(texts) = texts else {
                return error_reply(&id, "`texts` must be an array of strings");
            };
            match provider.embed(&texts) {
                Ok(embs) => {
                    let rows: Vec<&[f64]> = embs.iter().map(Embedding::values).collect();
                    json!({"req_id": id, "embeddings": rows})
                }
                Err(e) => error_reply(&id, e),
            }
        }
        "estimate" => {
            let triples: Option<Vec<[Embedding; 3]>> = request.get("triples").and_then(Value::as_array).and_then(|a| {
                a.iter()
                    .map(|t| match t.as_array().map(Vec::as_slice) {
                        Some([s, h, c]) => Some([parse_vec(s)?, parse_vec(h)?, parse_vec(c)?]),
                        _ => None,
                    })
                    .collect()
            });
            let Some(triples) = triples else {
                return error_reply(&id, "`triples` must be an array of [source, support, hypothesis] vectors");
            };
            let refs: Vec<_> = triples.iter().map(|[s, h, c]| (s, h, c)).collect();
            scores_reply(&id, provider.estimate(&refs))
        }
        other => error_reply(&id, format!("unknown op `{other}`")),
    }
}

/// Serves requests from `reader` until EOF (or until `crash_after` is hit).
pub fn serve<R, W>(provider: &dyn UtilityProvider, reader: R, mut writer: W, options: ServeOptions) -> io::Result<()>
where
    R: BufRead + Send + 'static,
    W: Write,
{
    let (tx, rx) = mpsc::channel::<io::Result<String>>();
    thread::spawn(move || {
        for line in reader.lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });

    let mut held: Vec<String> = Vec::new();
    let flush = |held: &mut Vec<String>, w: &mut W| -> io::Result<()> {
        while let Some(line) = held.pop() {
            w.write_all(line.as_bytes())?;
        }
        w.flush()
    };
    let mut answered = 0usize;
    loop {
        let next = if held.is_empty() {
            rx.recv().map_err(|_| RecvTimeoutError::Disconnected)
        } else {
            rx.recv_timeout(REORDER_IDLE)
        };
        let line = match next {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => {
                flush(&mut held, &mut writer)?;
                continue;
            }
            Err(RecvTimeoutError::Disconnected) => break,
        };
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Value>(&line) {
            Ok(req) => {
                let is_hello = req.get("op").and_then(Value::as_str) == Some("hello");
                if !is_hello {
                    answered += 1;
                }
                handle_request(provider, &req)
            }
            Err(e) => error_reply(&Value::Null, format!("malformed request: {e}")),
        };
        let mut out = reply.to_string();
        out.push('\n');
        held.push(out);
        if !options.reorder || held.len() >= REORDER_WINDOW {
            flush(&mut held, &mut writer)?;
        }
        if options.crash_after.is_some_and(|n| answered >= n) {
            break;
        }
    }
    flush(&mut held, &mut writer)
}
