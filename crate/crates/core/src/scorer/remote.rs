//! Client side of the wire protocol: a child process speaking over stdio, or a
//! TCP peer.
//!
//! One connection is shared by all sessions of a scorer; requests are
//! serialised under a mutex and matched to replies by order. A reply that does
//! not arrive within the timeout poisons the connection, since a late reply
//! would otherwise be read as the answer to the next request.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::wire::{self, Request, Response};
use super::{BackendSession, ConditioningSpec, Scorer, ScorerError, ScorerInfo};
use crate::vocab::TokenId;

struct Connection {
    writer: Box<dyn Write + Send>,
    replies: Receiver<io::Result<String>>,
    child: Option<Child>,
    broken: Option<String>,
}

impl Connection {
    fn new(writer: Box<dyn Write + Send>, reader: Box<dyn BufRead + Send>, child: Option<Child>) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in reader.lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Connection { writer, replies: rx, child, broken: None }
    }

    fn request(&mut self, req: &Request, timeout: Duration) -> Result<Response, ScorerError> {
        if let Some(reason) = &self.broken {
            return Err(ScorerError::ScorerUnavailable(reason.clone()));
        }
        let line = wire::to_line(req);
        if let Err(err) = self.writer.write_all(line.as_bytes()).and_then(|_| self.writer.flush()) {
            return Err(self.poison(format!("write failed: {err}")));
        }
        loop {
            match self.replies.recv_timeout(timeout) {
                Ok(Ok(reply)) if reply.trim().is_empty() => continue,
                Ok(Ok(reply)) => {
                    return serde_json::from_str(&reply)
                        .map_err(|err| ScorerError::ProtocolError(format!("malformed reply {reply:?}: {err}")));
                }
                Ok(Err(err)) => return Err(self.poison(format!("read failed: {err}"))),
                Err(RecvTimeoutError::Disconnected) => return Err(self.poison("backend closed the connection".into())),
                Err(RecvTimeoutError::Timeout) => {
                    self.broken = Some(format!("no reply within {timeout:?}"));
                    return Err(ScorerError::ScorerTimeout(timeout));
                }
            }
        }
    }

    fn poison(&mut self, reason: String) -> ScorerError {
        self.broken = Some(reason.clone());
        ScorerError::ScorerUnavailable(reason)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A scorer living in another process.
pub struct RemoteScorer {
    conn: Arc<Mutex<Connection>>,
    info: ScorerInfo,
    timeout: Duration,
    next_session: AtomicU64,
}

impl RemoteScorer {
    /// Spawns `argv` (no shell) and talks to it over its stdin/stdout.
    pub fn spawn(argv: &[String], timeout: Duration) -> Result<Self, ScorerError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| ScorerError::ScorerUnavailable("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|err| ScorerError::ScorerUnavailable(format!("spawning {program}: {err}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let conn = Connection::new(Box::new(stdin), Box::new(BufReader::new(stdout)), Some(child));
        Self::handshake(conn, timeout)
    }

    pub fn connect_tcp(addr: &str, timeout: Duration) -> Result<Self, ScorerError> {
        let stream =
            TcpStream::connect(addr).map_err(|err| ScorerError::ScorerUnavailable(format!("connecting to {addr}: {err}")))?;
        let _ = stream.set_nodelay(true);
        let reader = stream
            .try_clone()
            .map_err(|err| ScorerError::ScorerUnavailable(format!("cloning socket: {err}")))?;
        let conn = Connection::new(Box::new(stream), Box::new(BufReader::new(reader)), None);
        Self::handshake(conn, timeout)
    }

    fn handshake(mut conn: Connection, timeout: Duration) -> Result<Self, ScorerError> {
        let info = match conn.request(&Request::Hello, timeout)? {
            Response::HelloAck { vocab_hash, name } => ScorerInfo { name, vocab_hash },
            Response::Error { code, msg, .. } => return Err(ScorerError::Backend { code, msg }),
            other => return Err(unexpected("hello_ack", &other)),
        };
        Ok(RemoteScorer { conn: Arc::new(Mutex::new(conn)), info, timeout, next_session: AtomicU64::new(1) })
    }

    fn call(&self, req: &Request) -> Result<Response, ScorerError> {
        call(&self.conn, req, self.timeout)
    }
}

fn call(conn: &Mutex<Connection>, req: &Request, timeout: Duration) -> Result<Response, ScorerError> {
    let mut conn = conn.lock().unwrap_or_else(|p| p.into_inner());
    match conn.request(req, timeout)? {
        Response::Error { code, msg, .. } => Err(match code.as_str() {
            "session_closed" => ScorerError::SessionClosed,
            _ => ScorerError::Backend { code, msg },
        }),
        other => Ok(other),
    }
}

fn unexpected(expected: &str, got: &Response) -> ScorerError {
    ScorerError::ProtocolError(format!("expected {expected}, got {got:?}"))
}

impl Scorer for RemoteScorer {
    fn info(&self) -> ScorerInfo {
        self.info.clone()
    }

    fn open(&self, conditioning: &ConditioningSpec) -> Result<Box<dyn BackendSession>, ScorerError> {
        let id = format!("s{}", self.next_session.fetch_add(1, Ordering::Relaxed));
        match self.call(&Request::open(id.clone(), conditioning))? {
            Response::OpenAck { session } if session == id => {}
            other => return Err(unexpected("open_ack", &other)),
        }
        Ok(Box::new(RemoteSession {
            conn: Arc::clone(&self.conn),
            id,
            timeout: self.timeout,
            closed: false,
        }))
    }
}

struct RemoteSession {
    conn: Arc<Mutex<Connection>>,
    id: String,
    timeout: Duration,
    closed: bool,
}

impl RemoteSession {
    fn call(&self, req: &Request) -> Result<Response, ScorerError> {
        call(&self.conn, req, self.timeout)
    }
}

impl BackendSession for RemoteSession {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&mut self) -> Result<Vec<f64>, ScorerError> {
        match self.call(&Request::Score { session: self.id.clone() })? {
            Response::Dist { session, logprobs } if session == self.id => Ok(wire::decode_logprobs(logprobs)),
            other => Err(unexpected("dist", &other)),
        }
    }

    fn append(&mut self, id: TokenId) -> Result<(), ScorerError> {
        match self.call(&Request::Append { session: self.id.clone(), id })? {
            Response::AppendAck { session } if session == self.id => Ok(()),
            other => Err(unexpected("append_ack", &other)),
        }
    }

    fn close(&mut self) -> Result<(), ScorerError> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        match self.call(&Request::Close { session: self.id.clone() })? {
            Response::CloseAck { .. } => Ok(()),
            other => Err(unexpected("close_ack", &other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::server::serve_listener;
    use crate::scorer::ScorerSession;
    use crate::toy::UniformScorer;
    use crate::vocab::Vocabulary;
    use std::net::TcpListener;

    fn vocab() -> Vocabulary {
        Vocabulary::new(&["</s>", "a", "b"], &[("eos", "</s>")]).unwrap()
    }

    fn start_server(v: &Vocabulary) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let scorer: Arc<dyn Scorer> = Arc::new(UniformScorer::new(v));
        thread::spawn(move || serve_listener(scorer, listener));
        addr
    }

    #[test]
    fn tcp_roundtrip() {
        let v = vocab();
        let addr = start_server(&v);
        let remote = RemoteScorer::connect_tcp(&addr, Duration::from_secs(5)).unwrap();
        assert_eq!(remote.info().vocab_hash, v.hash());
        let mut a = ScorerSession::open(&remote, &v, ConditioningSpec::prompt("p")).unwrap();
        let mut b = ScorerSession::open(&remote, &v, ConditioningSpec::source(vec![1])).unwrap();
        assert_ne!(a.id(), b.id());
        let d = a.next_distribution().unwrap();
        assert_eq!(d.len(), 3);
        a.append_token(1).unwrap();
        b.append_token(2).unwrap();
        a.close();
        a.close();
        assert!(b.next_distribution().is_ok());
    }

    #[test]
    fn unreachable_backend() {
        let err = RemoteScorer::connect_tcp("127.0.0.1:1", Duration::from_secs(1)).err().unwrap();
        assert!(matches!(err, ScorerError::ScorerUnavailable(_)));
        let err = RemoteScorer::spawn(&["/nonexistent/backend".into()], Duration::from_secs(1)).err().unwrap();
        assert!(matches!(err, ScorerError::ScorerUnavailable(_)));
    }

    #[test]
    fn silent_backend_times_out() {
        let err = RemoteScorer::spawn(&["sleep".into(), "5".into()], Duration::from_millis(200)).err().unwrap();
        assert!(matches!(err, ScorerError::ScorerTimeout(_)), "{err:?}");
    }

    #[test]
    fn garbage_reply_is_protocol_error() {
        let argv = vec!["sh".into(), "-c".into(), "read line; echo not-json; sleep 1".into()];
        let err = RemoteScorer::spawn(&argv, Duration::from_secs(5)).err().unwrap();
        assert!(matches!(err, ScorerError::ProtocolError(_)), "{err:?}");
    }

    #[test]
    fn unnormalised_reply_is_rejected() {
        let v = vocab();
        let hash = v.hash().to_hex();
        let script = format!(
            r#"read l; echo '{{"type":"hello_ack","vocab_hash":"{hash}","name":"bad"}}';
               read l; echo '{{"type":"open_ack","session":"s1"}}';
               read l; echo '{{"type":"dist","session":"s1","logprobs":[-0.5,-0.5,-0.5]}}';
               read l; echo '{{"type":"close_ack","session":"s1"}}'"#
        );
        let remote = RemoteScorer::spawn(&["sh".into(), "-c".into(), script], Duration::from_secs(5)).unwrap();
        let mut s = ScorerSession::open(&remote, &v, ConditioningSpec::prompt("x")).unwrap();
        assert!(matches!(s.next_distribution(), Err(ScorerError::ProtocolError(_))));
    }

    #[test]
    fn wrong_hash_fails_handshake_check() {
        let v = vocab();
        let other = Vocabulary::new(&["</s>", "b", "a"], &[("eos", "</s>")]).unwrap();
        let addr = start_server(&other);
        let remote = RemoteScorer::connect_tcp(&addr, Duration::from_secs(5)).unwrap();
        let err = ScorerSession::open(&remote, &v, ConditioningSpec::prompt("x")).unwrap_err();
        assert!(matches!(err, ScorerError::VocabMismatch { .. }));
    }
}
