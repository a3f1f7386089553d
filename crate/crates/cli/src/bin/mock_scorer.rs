//! Scorer-protocol server backed by the in-process mocks, on stdio or TCP.

use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;

use clap::{Parser, ValueEnum};
use mbrkit_core::bridge::{serve, ServeOptions};
use mbrkit_core::metrics::TokenizeMode;
use mbrkit_core::utility::{BleuUtility, LexicalMock, QeMock};
use mbrkit_core::UtilityProvider;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backend {
    Lexical,
    Qe,
    Bleu,
}

#[derive(Debug, Parser)]
#[command(name = "mbrkit-mock-scorer", about = "Mock scorer speaking the mbrkit scorer protocol")]
struct Args {
    #[arg(long, value_enum)]
    backend: Backend,
    /// Embedding dimension for the lexical backend.
    #[arg(long)]
    dim: Option<usize>,
    /// Deliver replies out of order.
    #[arg(long)]
    reorder: bool,
    /// Drop the connection after this many requests.
    #[arg(long)]
    crash_after: Option<usize>,
    /// Listen on this address instead of stdio; prints the bound address.
    #[arg(long)]
    listen: Option<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let provider: Arc<dyn UtilityProvider> = match args.backend {
        Backend::Lexical => match args.dim {
            Some(d) => Arc::new(LexicalMock::with_dim(d)),
            None => Arc::new(LexicalMock::new()),
        },
        Backend::Qe => Arc::new(QeMock::new()),
        Backend::Bleu => Arc::new(BleuUtility::new(TokenizeMode::Intl)),
    };
    let opts = ServeOptions {
        reorder: args.reorder,
        crash_after: args.crash_after,
    };
    let res = match &args.listen {
        None => serve(&*provider, BufReader::new(io::stdin()), io::stdout().lock(), opts),
        Some(addr) => listen(provider, addr, opts),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mbrkit-mock-scorer: {e}");
            ExitCode::from(2)
        }
    }
}

fn listen(provider: Arc<dyn UtilityProvider>, addr: &str, opts: ServeOptions) -> io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "{}", listener.local_addr()?)?;
    stdout.flush()?;
    drop(stdout);
    for stream in listener.incoming() {
        let stream = stream?;
        let provider = Arc::clone(&provider);
        thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(_) => return,
            };
            let _ = serve(&*provider, reader, stream, opts);
        });
    }
    Ok(())
}
