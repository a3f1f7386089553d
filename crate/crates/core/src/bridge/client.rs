use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;

use serde_json::{json, Value};

use super::{parse_capabilities, parse_embeddings, parse_scores, BridgeOptions, PROTOCOL_VERSION};
use crate::utility::{check_dims, Embedding, ProviderCapabilities, ScoreError, Shape, Triple, UtilityProvider};

type Reply = Result<Value, ScoreError>;

#[derive(Default)]
struct State {
    pending: HashMap<u64, Sender<Reply>>,
    /// Highest request id written so far.
    issued: u64,
    dead: Option<ScoreError>,
}

impl State {
    fn fail_all(&mut self, err: ScoreError) {
        for (_, tx) in self.pending.drain() {
            let _ = tx.send(Err(err.clone()));
        }
        self.dead = Some(err);
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

enum Closer {
    Child(Mutex<Child>),
    Tcp(TcpStream),
    None,
}

/// Client side of one scorer connection.
///
/// Any number of threads may issue requests; one reader thread routes each
/// response to its waiting caller by `req_id`.
pub struct ScorerConnection {
    label: String,
    caps: ProviderCapabilities,
    options: BridgeOptions,
    writer: Mutex<Box<dyn Write + Send>>,
    state: Arc<Mutex<State>>,
    closer: Closer,
}

impl std::fmt::Debug for ScorerConnection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScorerConnection")
            .field("label", &self.label)
            .field("caps", &self.caps)
            .finish_non_exhaustive()
    }
}

fn reader_loop(reader: impl BufRead, state: Arc<Mutex<State>>, label: String) {
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                lock(&state).fail_all(ScoreError::Transport(format!("{label}: read failed: {e}")));
                return;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Result<Value, _> = serde_json::from_str(&line);
        let id = parsed.as_ref().ok().and_then(|v| v.get("req_id")).and_then(Value::as_u64);
        let (value, id) = match (parsed, id) {
            (Ok(v), Some(id)) => (v, id),
            (Err(e), _) => {
                lock(&state).fail_all(ScoreError::Protocol(format!("{label}: malformed response line: {e}")));
                return;
            }
            (Ok(_), None) => {
                lock(&state).fail_all(ScoreError::Protocol(format!("{label}: response without req_id")));
                return;
            }
        };
        let mut st = lock(&state);
        if let Some(tx) = st.pending.remove(&id) {
            let _ = tx.send(Ok(value));
        } else if id > st.issued {
            st.fail_all(ScoreError::Protocol(format!("{label}: response for unissued request id {id}")));
            return;
        } else {
            tracing::debug!(%label, id, "ignoring response for abandoned request");
        }
    }
    lock(&state).fail_all(ScoreError::Transport(format!("{label}: scorer closed the connection")));
}

impl ScorerConnection {
    /// Launches `command` (shell-style quoting) and speaks the protocol over
    /// its stdin and stdout. Stderr is inherited.
    pub fn spawn(command: &str, options: BridgeOptions) -> Result<Self, ScoreError> {
        let argv = shell_words::split(command).map_err(|e| ScoreError::Transport(format!("invalid scorer command `{command}`: {e}")))?;
        let (prog, args) = argv
            .split_first()
            .ok_or_else(|| ScoreError::Transport("empty scorer command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ScoreError::Transport(format!("cannot launch `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::start(
            format!("cmd:{command}"),
            BufReader::new(stdout),
            BufWriter::new(stdin),
            Closer::Child(Mutex::new(child)),
            options,
        )
    }

    pub fn connect_tcp(addr: impl ToSocketAddrs + std::fmt::Display, options: BridgeOptions) -> Result<Self, ScoreError> {
        let label = format!("tcp:{addr}");
        let stream = TcpStream::connect(&addr).map_err(|e| ScoreError::Transport(format!("{label}: connect failed: {e}")))?;
        let _ = stream.set_nodelay(true);
        let clone = |s: &TcpStream| s.try_clone().map_err(|e| ScoreError::Transport(format!("{label}: {e}")));
        let reader = BufReader::new(clone(&stream)?);
        let writer = BufWriter::new(clone(&stream)?);
        Self::start(label, reader, writer, Closer::Tcp(stream), options)
    }

    /// Runs the protocol over arbitrary byte streams.
    pub fn from_streams<R, W>(label: impl Into<String>, reader: R, writer: W, options: BridgeOptions) -> Result<Self, ScoreError>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::start(label.into(), BufReader::new(reader), writer, Closer::None, options)
    }

    fn start<R, W>(label: String, reader: R, writer: W, closer: Closer, options: BridgeOptions) -> Result<Self, ScoreError>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let state = Arc::new(Mutex::new(State::default()));
        let thread_state = Arc::clone(&state);
        let thread_label = label.clone();
        thread::Builder::new()
            .name("scorer-reader".into())
            .spawn(move || reader_loop(reader, thread_state, thread_label))
            .map_err(|e| ScoreError::Transport(e.to_string()))?;
        let mut conn = Self {
            label,
            caps: ProviderCapabilities::joint("<handshake pending>", false),
            options: BridgeOptions {
                batch_size: options.batch_size.max(1),
                ..options
            },
            writer: Mutex::new(Box::new(writer)),
            state,
            closer,
        };
        conn.caps = conn.handshake()?;
        tracing::debug!(label = %conn.label, caps = ?conn.caps, "scorer connected");
        Ok(conn)
    }

    fn handshake(&self) -> Result<ProviderCapabilities, ScoreError> {
        let (id, rx) = self.submit(true, |id| json!({"req_id": id, "op": "hello", "protocol": PROTOCOL_VERSION}))?;
        parse_capabilities(&self.wait(id, rx)?)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn options(&self) -> BridgeOptions {
        self.options
    }

    /// Requests still awaiting a response.
    pub fn in_flight(&self) -> usize {
        lock(&self.state).pending.len()
    }

    /// Registers and writes one request. Ids are allocated under the writer
    /// lock so they reach the wire in increasing order.
    fn submit(&self, hello: bool, build: impl FnOnce(u64) -> Value) -> Result<(u64, Receiver<Reply>), ScoreError> {
        let mut w = lock(&self.writer);
        let (tx, rx) = mpsc::channel();
        let id = {
            let mut st = lock(&self.state);
            if let Some(err) = &st.dead {
                return Err(err.clone());
            }
            let id = if hello { 0 } else { st.issued + 1 };
            st.issued = id;
            st.pending.insert(id, tx);
            id
        };
        let mut line = build(id).to_string();
        line.push('\n');
        if let Err(e) = w.write_all(line.as_bytes()).and_then(|_| w.flush()) {
            let err = ScoreError::Transport(format!("{}: write failed: {e}", self.label));
            lock(&self.state).fail_all(err.clone());
            return Err(err);
        }
        Ok((id, rx))
    }

    fn wait(&self, id: u64, rx: Receiver<Reply>) -> Result<Value, ScoreError> {
        match rx.recv_timeout(self.options.timeout) {
            Ok(Ok(v)) => match v.get("error") {
                Some(Value::String(msg)) => Err(ScoreError::Remote(msg.clone())),
                Some(other) => Err(ScoreError::Remote(other.to_string())),
                None => Ok(v),
            },
            Ok(Err(e)) => Err(e),
            Err(RecvTimeoutError::Timeout) => {
                lock(&self.state).pending.remove(&id);
                Err(ScoreError::Timeout(self.options.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => Err(lock(&self.state)
                .dead
                .clone()
                .unwrap_or_else(|| ScoreError::Transport(format!("{}: reader stopped", self.label)))),
        }
    }

    /// Splits `items` into capped chunks, pipelines every chunk, then decodes
    /// replies in chunk order. Any failure discards all results.
    fn batched<T, O>(
        &self,
        items: &[T],
        build: impl Fn(u64, &[T]) -> Value,
        decode: impl Fn(&Value, usize) -> Result<Vec<O>, ScoreError>,
    ) -> Result<Vec<O>, ScoreError> {
        if items.is_empty() {
            return Err(ScoreError::EmptyBatch);
        }
        let mut inflight = Vec::new();
        for chunk in items.chunks(self.options.batch_size) {
            let (id, rx) = self.submit(false, |id| build(id, chunk))?;
            inflight.push((id, rx, chunk.len()));
        }
        let mut out = Vec::with_capacity(items.len());
        let mut offset = 0;
        for (id, rx, len) in inflight {
            let reply = self.wait(id, rx)?;
            out.extend(decode(&reply, len).map_err(|e| shift_index(e, offset))?);
            offset += len;
        }
        Ok(out)
    }

    fn require_factorable(&self, op: &'static str) -> Result<usize, ScoreError> {
        match (self.caps.shape, self.caps.embedding_dim) {
            (Shape::Factorable, Some(d)) => Ok(d),
            _ => Err(ScoreError::shape(&self.caps, op, Shape::Factorable)),
        }
    }
}

fn shift_index(e: ScoreError, offset: usize) -> ScoreError {
    match e {
        ScoreError::NonFinite { index } => ScoreError::NonFinite { index: index + offset },
        ScoreError::Failed { index, message } => ScoreError::Failed {
            index: index + offset,
            message,
        },
        other => other,
    }
}

impl Drop for ScorerConnection {
    fn drop(&mut self) {
        match &self.closer {
            Closer::Child(child) => {
                let mut child = lock(child);
                let _ = child.kill();
                let _ = child.wait();
            }
            Closer::Tcp(stream) => {
                let _ = stream.shutdown(Shutdown::Both);
            }
            Closer::None => {}
        }
    }
}

impl UtilityProvider for ScorerConnection {
    fn capabilities(&self) -> &ProviderCapabilities {
        &self.caps
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        self.batched(
            pairs,
            |id, chunk| {
                let arr: Vec<[&str; 2]> = chunk.iter().map(|(l, r)| [*l, *r]).collect();
                json!({"req_id": id, "op": "score_pair", "pairs": arr})
            },
            parse_scores,
        )
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, ScoreError> {
        let dim = self.require_factorable("embed")?;
        let rows = self.batched(
            texts,
            |id, chunk| json!({"req_id": id, "op": "embed", "texts": chunk}),
            |v, n| parse_embeddings(v, n, dim),
        )?;
        rows.into_iter().map(Embedding::new).collect()
    }

    fn estimate(&self, triples: &[Triple<'_>]) -> Result<Vec<f64>, ScoreError> {
        let dim = self.require_factorable("estimate")?;
        check_dims(dim, triples)?;
        self.batched(
            triples,
            |id, chunk| {
                let arr: Vec<[&[f64]; 3]> = chunk.iter().map(|(s, h, c)| [s.values(), h.values(), c.values()]).collect();
                json!({"req_id": id, "op": "estimate", "triples": arr})
            },
            parse_scores,
        )
    }
}

/// Round-robin over several connections to equivalent scorers.
#[derive(Debug)]
pub struct ScorerPool {
    members: Vec<ScorerConnection>,
    next: AtomicUsize,
}

impl ScorerPool {
    pub fn new(members: Vec<ScorerConnection>) -> Result<Self, ScoreError> {
        let first = members
            .first()
            .ok_or_else(|| ScoreError::Transport("scorer pool is empty".into()))?
            .capabilities()
            .clone();
        if let Some(m) = members.iter().find(|m| *m.capabilities() != first) {
            return Err(ScoreError::Protocol(format!(
                "pool members disagree on capabilities: {} vs {}",
                first.name,
                m.capabilities().name
            )));
        }
        Ok(Self {
            members,
            next: AtomicUsize::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn pick(&self) -> &ScorerConnection {
        &self.members[self.next.fetch_add(1, Ordering::Relaxed) % self.members.len()]
    }
}

impl UtilityProvider for ScorerPool {
    fn capabilities(&self) -> &ProviderCapabilities {
        self.members[0].capabilities()
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        self.pick().score_pairs(pairs)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, ScoreError> {
        self.pick().embed(texts)
    }

    fn estimate(&self, triples: &[Triple<'_>]) -> Result<Vec<f64>, ScoreError> {
        self.pick().estimate(triples)
    }
}
