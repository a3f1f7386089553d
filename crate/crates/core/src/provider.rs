//! Provider selection strings: `mock:lexical`, `mock:qe`, `mock:bleu`,
//! `cmd:<command line>` or `tcp:<host>:<port>`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{BridgeOptions, ScorerConnection, ScorerPool};
use crate::utility::{BleuUtility, LexicalMock, QeMock, ScoreError, UtilityProvider};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("invalid provider spec `{spec}`: {reason}")]
    Parse { spec: String, reason: String },
    #[error(transparent)]
    Score(#[from] ScoreError),
}

impl ProviderError {
    pub fn is_scorer_failure(&self) -> bool {
        matches!(self, ProviderError::Score(e) if e.is_scorer_failure())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MockKind {
    Lexical,
    Qe,
    Bleu,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ProviderSpec {
    Mock(MockKind),
    Command(String),
    Tcp(String),
}

impl FromStr for ProviderSpec {
    type Err = ProviderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| ProviderError::Parse {
            spec: s.to_string(),
            reason: reason.to_string(),
        };
        let (kind, rest) = s.split_once(':').ok_or_else(|| err("expected mock:, cmd: or tcp: prefix"))?;
        match kind {
            "mock" => match rest {
                "lexical" => Ok(Self::Mock(MockKind::Lexical)),
                "qe" => Ok(Self::Mock(MockKind::Qe)),
                "bleu" => Ok(Self::Mock(MockKind::Bleu)),
                _ => Err(err("unknown mock (expected lexical, qe or bleu)")),
            },
            "cmd" if !rest.trim().is_empty() => Ok(Self::Command(rest.to_string())),
            "cmd" => Err(err("empty command")),
            "tcp" => match rest.rsplit_once(':') {
                Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => Ok(Self::Tcp(rest.to_string())),
                _ => Err(err("expected tcp:host:port")),
            },
            _ => Err(err("expected mock:, cmd: or tcp: prefix")),
        }
    }
}

impl TryFrom<String> for ProviderSpec {
    type Error = ProviderError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ProviderSpec> for String {
    fn from(p: ProviderSpec) -> Self {
        p.to_string()
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mock(MockKind::Lexical) => f.write_str("mock:lexical"),
            Self::Mock(MockKind::Qe) => f.write_str("mock:qe"),
            Self::Mock(MockKind::Bleu) => f.write_str("mock:bleu"),
            Self::Command(c) => write!(f, "cmd:{c}"),
            Self::Tcp(a) => write!(f, "tcp:{a}"),
        }
    }
}

impl ProviderSpec {
    pub fn is_remote(&self) -> bool {
        !matches!(self, Self::Mock(_))
    }

    /// Instantiates the provider. Remote specs open `connections` scorer
    /// connections behind a round-robin pool.
    pub fn build(&self, options: BridgeOptions, connections: usize) -> Result<Arc<dyn UtilityProvider>, ProviderError> {
        let open = |f: &dyn Fn() -> Result<ScorerConnection, ScoreError>| -> Result<Arc<dyn UtilityProvider>, ProviderError> {
            if connections <= 1 {
                return Ok(Arc::new(f()?));
            }
            let members = (0..connections).map(|_| f()).collect::<Result<Vec<_>, _>>()?;
            Ok(Arc::new(ScorerPool::new(members)?))
        };
        match self {
            Self::Mock(MockKind::Lexical) => Ok(Arc::new(LexicalMock::new())),
            Self::Mock(MockKind::Qe) => Ok(Arc::new(QeMock::new())),
            Self::Mock(MockKind::Bleu) => Ok(Arc::new(BleuUtility::default())),
            Self::Command(cmd) => open(&|| ScorerConnection::spawn(cmd, options)),
            Self::Tcp(addr) => open(&|| ScorerConnection::connect_tcp(addr.as_str(), options)),
        }
    }
}
