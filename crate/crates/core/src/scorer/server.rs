//! Serves any in-process [`Scorer`] over the JSON-lines protocol.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use super::wire::{self, Request, Response};
use super::{BackendSession, Scorer, ScorerError};

/// Answers requests from `reader` until EOF. Protocol-level problems are
/// reported as `error` messages; only I/O failures end the loop early.
pub fn serve_lines<R: BufRead, W: Write>(scorer: &dyn Scorer, reader: R, mut writer: W) -> io::Result<()> {
    let mut sessions: HashMap<String, Box<dyn BackendSession>> = HashMap::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(req) => handle(scorer, &mut sessions, req),
            Err(err) => Response::Error { session: None, code: "bad_request".into(), msg: err.to_string() },
        };
        writer.write_all(wire::to_line(&response).as_bytes())?;
        writer.flush()?;
    }
    for (_, mut session) in sessions.drain() {
        let _ = session.close();
    }
    Ok(())
}

fn handle(scorer: &dyn Scorer, sessions: &mut HashMap<String, Box<dyn BackendSession>>, req: Request) -> Response {
    let session_name = req.session().map(str::to_string);
    let result = match req {
        Request::Hello => {
            let info = scorer.info();
            return Response::HelloAck { vocab_hash: info.vocab_hash, name: info.name };
        }
        Request::Open { session, kind, prompt, source_ids } => {
            if sessions.contains_key(&session) {
                return Response::Error {
                    session: Some(session),
                    code: "session_exists".into(),
                    msg: "session id already open".into(),
                };
            }
            wire::open_conditioning(&kind, prompt, source_ids).and_then(|cond| scorer.open(&cond)).map(|backend| {
                sessions.insert(session.clone(), backend);
                Response::OpenAck { session }
            })
        }
        Request::Score { session } => with_session(sessions, &session, |s| s.score())
            .map(|logprobs| Response::dist(session, &logprobs)),
        Request::Append { session, id } => {
            with_session(sessions, &session, |s| s.append(id)).map(|_| Response::AppendAck { session })
        }
        Request::Close { session } => {
            if let Some(mut s) = sessions.remove(&session) {
                let _ = s.close();
            }
            Ok(Response::CloseAck { session })
        }
    };
    result.unwrap_or_else(|err| Response::error(session_name.as_deref(), &err))
}

fn with_session<T>(
    sessions: &mut HashMap<String, Box<dyn BackendSession>>,
    name: &str,
    f: impl FnOnce(&mut dyn BackendSession) -> Result<T, ScorerError>,
) -> Result<T, ScorerError> {
    match sessions.get_mut(name) {
        Some(s) => f(s.as_mut()),
        None => Err(ScorerError::Backend { code: "unknown_session".into(), msg: format!("no open session {name:?}") }),
    }
}

pub fn serve_stdio(scorer: &dyn Scorer) -> io::Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve_lines(scorer, stdin.lock(), stdout.lock())
}

/// Accepts TCP connections forever, one thread per connection.
pub fn serve_tcp(scorer: Arc<dyn Scorer>, addr: impl ToSocketAddrs) -> io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    log::info!("listening on {}", listener.local_addr()?);
    serve_listener(scorer, listener)
}

pub fn serve_listener(scorer: Arc<dyn Scorer>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let scorer = Arc::clone(&scorer);
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(err) => {
                    log::warn!("connection {peer:?}: {err}");
                    return;
                }
            };
            if let Err(err) = serve_lines(scorer.as_ref(), reader, stream) {
                log::debug!("connection {peer:?} ended: {err}");
            }
        });
    }
    Ok(())
}
