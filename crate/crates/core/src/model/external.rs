use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::protocol::{decode_scores, Message, PROTOCOL_VERSION};
use super::{Predictor, PredictorSpec};
use crate::error::{Error, Result};
use crate::types::Image;

/// Where an external model server lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `tcp://host:port`
    Tcp(String),
    /// `exec:program arg1 arg2` — spawned as a child speaking over stdio.
    Command(Vec<String>),
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.is_empty() || !addr.contains(':') {
                return Err(Error::Config(format!(
                    "tcp endpoint needs host:port, got {s:?}"
                )));
            }
            Ok(Endpoint::Tcp(addr.to_string()))
        } else if let Some(cmd) = s.strip_prefix("exec:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(Error::Config("exec endpoint needs a command".into()));
            }
            Ok(Endpoint::Command(argv))
        } else {
            Err(Error::Config(format!(
                "unrecognized endpoint {s:?} (expected tcp://host:port or exec:command)"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExternalOptions {
    pub timeout: Duration,
    pub batch_size: usize,
}

impl Default for ExternalOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(120),
            batch_size: 64,
        }
    }
}

struct Session {
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    child: Option<Child>,
    next_id: u64,
    timeout: Duration,
}

impl Session {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.writer
            .write_all(msg.to_line().as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(Error::Transport)
    }

    fn receive(&mut self) -> Result<Message> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Message::parse(&line),
            Ok(Err(e)) => Err(Error::Transport(e)),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Transport(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "model server closed the connection",
            ))),
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn spawn_reader<R: Read + Send + 'static>(source: R) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(source);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {
                    if tx.send(Ok(line)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    rx
}

/// A model reached over the wire protocol. One session, used serially.
pub struct ExternalPredictor {
    spec: PredictorSpec,
    session: Mutex<Session>,
    batch_size: usize,
}

pub fn connect_external(
    endpoint: &Endpoint,
    options: ExternalOptions,
) -> Result<ExternalPredictor> {
    let (writer, lines, child): (Box<dyn Write + Send>, _, _) = match endpoint {
        Endpoint::Tcp(addr) => {
            let stream = TcpStream::connect(addr).map_err(Error::Transport)?;
            let read_half = stream.try_clone().map_err(Error::Transport)?;
            (Box::new(stream), spawn_reader(read_half), None)
        }
        Endpoint::Command(argv) => {
            let mut child = Command::new(&argv[0])
                .args(&argv[1..])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(Error::Transport)?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            (Box::new(stdin), spawn_reader(stdout), Some(child))
        }
    };
    let session = Session {
        writer,
        lines,
        child,
        next_id: 1,
        timeout: options.timeout,
    };
    handshake(session, options)
}

/// Run the protocol over an already-connected pair of streams.
pub fn connect_streams<R, W>(
    reader: R,
    writer: W,
    options: ExternalOptions,
) -> Result<ExternalPredictor>
where
    R: Read + Send + 'static,
    W: Write + Send + 'static,
{
    let session = Session {
        writer: Box::new(writer),
        lines: spawn_reader(reader),
        child: None,
        next_id: 1,
        timeout: options.timeout,
    };
    handshake(session, options)
}

fn handshake(mut session: Session, options: ExternalOptions) -> Result<ExternalPredictor> {
    session.send(&Message::Hello {
        version: PROTOCOL_VERSION,
        spec: None,
    })?;
    let spec = match session.receive()? {
        Message::Hello {
            version,
            spec: Some(spec),
        } if version == PROTOCOL_VERSION => spec,
        Message::Hello {
            version,
            spec: None,
        } => {
            return Err(Error::Handshake(format!(
                "server hello (version {version}) carried no spec"
            )))
        }
        Message::Hello { version, .. } => {
            return Err(Error::Handshake(format!(
                "server speaks protocol version {version}, expected {PROTOCOL_VERSION}"
            )))
        }
        Message::Error { message, .. } => return Err(Error::Handshake(message)),
        other => return Err(Error::Handshake(format!("expected hello, got {other:?}"))),
    };
    Ok(ExternalPredictor {
        spec,
        session: Mutex::new(session),
        batch_size: options.batch_size.max(1),
    })
}

impl ExternalPredictor {
    fn round_trip(&self, session: &mut Session, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        let id = session.next_id;
        session.next_id += 1;
        session.send(&Message::predict(id, images))?;
        match session.receive()? {
            Message::Scores { id: got, n, data } => {
                if got != id || n != images.len() {
                    return Err(Error::MalformedResponse(format!(
                        "expected scores for request {id} ({} images), got request {got} ({n})",
                        images.len()
                    )));
                }
                decode_scores(n, &data, self.spec.n_classes)
            }
            Message::Error { message, .. } => Err(Error::Remote(message)),
            other => Err(Error::MalformedResponse(format!(
                "expected scores, got {other:?}"
            ))),
        }
    }
}

impl Predictor for ExternalPredictor {
    fn spec(&self) -> &PredictorSpec {
        &self.spec
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        self.spec.check_images(images)?;
        let mut session = self.session.lock().unwrap_or_else(|p| p.into_inner());
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.batch_size) {
            out.extend(self.round_trip(&mut session, chunk)?);
        }
        Ok(out)
    }
}
