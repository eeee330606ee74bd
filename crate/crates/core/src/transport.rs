//! Request/response link to a simulated cloud executor.
//!
//! Frame layout, all integers big-endian:
//!
//! ```text
//! +------------+-----+----------------+------------------+
//! | len: u32   | tag | task_id: u64   | value: f64 bits  |
//! +------------+-----+----------------+------------------+
//!   4 bytes     1      8                8
//! ```
//!
//! `len` counts the tag and the payload and is always 17. Tag `0x01` is a
//! request carrying the input size `d`; tag `0x02` is a response carrying the
//! server-side elapsed seconds. One request is in flight per connection.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::{ExecError, Executor};
use crate::workload::TargetProfile;

pub const TAG_REQUEST: u8 = 0x01;
pub const TAG_RESPONSE: u8 = 0x02;
pub const FRAME_BODY_LEN: u32 = 17;
pub const FRAME_LEN: usize = 4 + FRAME_BODY_LEN as usize;

pub const DEFAULT_RTT: Duration = Duration::from_millis(30);
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_BIND: &str = "127.0.0.1:7070";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecRequest {
    pub task_id: u64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecResponse {
    pub task_id: u64,
    pub elapsed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Message {
    Request(ExecRequest),
    Response(ExecResponse),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("incomplete frame: need {needed} more bytes")]
    Incomplete { needed: usize },
    #[error("unknown frame tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("frame length {0} != {FRAME_BODY_LEN}")]
    BadLength(u32),
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("protocol error: {0}")]
    Protocol(FrameError),
    #[error("unexpected {0} frame")]
    UnexpectedMessage(&'static str),
    #[error("response for task {got}, expected {expected}")]
    TaskMismatch { expected: u64, got: u64 },
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("connection closed by peer")]
    Closed,
    #[error("io: {0}")]
    Io(io::Error),
}

impl From<FrameError> for TransportError {
    fn from(e: FrameError) -> Self {
        Self::Protocol(e)
    }
}

impl From<io::Error> for TransportError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::UnexpectedEof => TransportError::Closed,
            _ => TransportError::Io(e),
        }
    }
}

pub fn encode_frame(msg: &Message) -> [u8; FRAME_LEN] {
    let (tag, task_id, value) = match *msg {
        Message::Request(r) => (TAG_REQUEST, r.task_id, r.d),
        Message::Response(r) => (TAG_RESPONSE, r.task_id, r.elapsed),
    };
    let mut buf = [0u8; FRAME_LEN];
    buf[0..4].copy_from_slice(&FRAME_BODY_LEN.to_be_bytes());
    buf[4] = tag;
    buf[5..13].copy_from_slice(&task_id.to_be_bytes());
    buf[13..21].copy_from_slice(&value.to_bits().to_be_bytes());
    buf
}

/// Decodes one frame from the front of `buf`, returning it with the number of
/// bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<(Message, usize), FrameError> {
    if buf.len() < 4 {
        return Err(FrameError::Incomplete {
            needed: 4 - buf.len(),
        });
    }
    let len = u32::from_be_bytes(buf[0..4].try_into().unwrap());
    if len != FRAME_BODY_LEN {
        return Err(FrameError::BadLength(len));
    }
    if buf.len() < FRAME_LEN {
        return Err(FrameError::Incomplete {
            needed: FRAME_LEN - buf.len(),
        });
    }
    Ok((
        decode_body(buf[4..FRAME_LEN].try_into().unwrap())?,
        FRAME_LEN,
    ))
}

fn decode_body(body: &[u8; FRAME_BODY_LEN as usize]) -> Result<Message, FrameError> {
    let task_id = u64::from_be_bytes(body[1..9].try_into().unwrap());
    let value = f64::from_bits(u64::from_be_bytes(body[9..17].try_into().unwrap()));
    match body[0] {
        TAG_REQUEST => Ok(Message::Request(ExecRequest { task_id, d: value })),
        TAG_RESPONSE => Ok(Message::Response(ExecResponse {
            task_id,
            elapsed: value,
        })),
        tag => Err(FrameError::UnknownTag(tag)),
    }
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode_frame(msg))?;
    w.flush()
}

/// Reads exactly one frame. A clean EOF before the first byte is reported as
/// [`TransportError::Closed`].
pub fn read_message<R: Read>(r: &mut R) -> Result<Message, TransportError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let n = u32::from_be_bytes(len);
    if n != FRAME_BODY_LEN {
        return Err(FrameError::BadLength(n).into());
    }
    let mut body = [0u8; FRAME_BODY_LEN as usize];
    r.read_exact(&mut body)?;
    Ok(decode_body(&body)?)
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: String,
    pub profile: TargetProfile,
    pub injected_rtt: Duration,
    /// Seeds the server's noise generator.
    pub seed: u64,
}

impl ServerConfig {
    pub fn new(bind: impl Into<String>, profile: TargetProfile) -> Self {
        Self {
            bind: bind.into(),
            profile,
            injected_rtt: DEFAULT_RTT,
            seed: 0,
        }
    }
}

struct Shared {
    profile: TargetProfile,
    rtt: Duration,
    rng: Mutex<ChaCha8Rng>,
}

/// Loopback stand-in for the cloud: each request sleeps for a profile-drawn
/// execution time plus the injected round trip, then reports how long it took.
pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl Server {
    pub fn bind(config: ServerConfig) -> crate::Result<Self> {
        config.profile.validate()?;
        let listener = TcpListener::bind(&config.bind)?;
        Ok(Self {
            listener,
            shared: Arc::new(Shared {
                profile: config.profile,
                rtt: config.injected_rtt,
                rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
            }),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until `shutdown` is set. Each connection gets its
    /// own thread; a protocol error closes only that connection.
    pub fn serve(&self, shutdown: &AtomicBool) -> io::Result<()> {
        self.listener.set_nonblocking(true)?;
        info!("serving on {}", self.listener.local_addr()?);
        while !shutdown.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    stream.set_nonblocking(false)?;
                    let shared = Arc::clone(&self.shared);
                    thread::spawn(move || match handle_connection(stream, &shared) {
                        Ok(served) => debug!("{peer}: closed after {served} requests"),
                        Err(e) => warn!("{peer}: {e}"),
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e),
            }
        }
        info!("shutting down");
        Ok(())
    }

    /// Runs [`Server::serve`] on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&shutdown);
        let join = thread::spawn(move || self.serve(&flag));
        Ok(ServerHandle {
            addr,
            shutdown,
            join: Some(join),
        })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    join: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> io::Result<()> {
        self.shutdown.store(true, Ordering::SeqCst);
        match self.join.take() {
            Some(j) => j
                .join()
                .unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

fn handle_connection(mut stream: TcpStream, shared: &Shared) -> Result<u64, TransportError> {
    stream.set_nodelay(true)?;
    let mut served = 0;
    loop {
        let req = match read_message(&mut stream) {
            Ok(Message::Request(r)) => r,
            Ok(Message::Response(_)) => return Err(TransportError::UnexpectedMessage("response")),
            Err(TransportError::Closed) => return Ok(served),
            Err(e) => return Err(e),
        };
        let received = Instant::now();
        let sim = {
            let mut rng = shared.rng.lock().unwrap_or_else(|p| p.into_inner());
            shared
                .profile
                .sample(req.task_id, req.d.max(0.0), &mut *rng)
        };
        thread::sleep(Duration::from_secs_f64(sim) + shared.rtt);
        let elapsed = received.elapsed().as_secs_f64();
        info!(
            "task {} d={:.4} simulated={:.6}s elapsed={:.6}s",
            req.task_id, req.d, sim, elapsed
        );
        write_message(
            &mut stream,
            &Message::Response(ExecResponse {
                task_id: req.task_id,
                elapsed,
            }),
        )?;
        served += 1;
    }
}

/// Client side of the link. Holds one connection and keeps one request in flight.
pub struct Client {
    stream: TcpStream,
    timeout: Duration,
}

impl Client {
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self, TransportError> {
        let mut last = None;
        for a in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(timeout))?;
                    stream.set_write_timeout(Some(timeout))?;
                    stream.set_nodelay(true)?;
                    return Ok(Self { stream, timeout });
                }
                Err(e) => last = Some(e),
            }
        }
        Err(map_timeout(
            last.unwrap_or_else(|| io::Error::new(io::ErrorKind::NotFound, "no address resolved")),
            timeout,
        ))
    }

    /// Sends one request and returns the client-measured wall-clock seconds
    /// until the matching response arrived.
    pub fn remote_execute(&mut self, task_id: u64, d: f64) -> Result<f64, TransportError> {
        let start = Instant::now();
        write_message(
            &mut self.stream,
            &Message::Request(ExecRequest { task_id, d }),
        )
        .map_err(|e| map_timeout(e, self.timeout))?;
        let resp = match read_message(&mut self.stream) {
            Ok(Message::Response(r)) => r,
            Ok(Message::Request(_)) => return Err(TransportError::UnexpectedMessage("request")),
            Err(TransportError::Io(e)) => return Err(map_timeout(e, self.timeout)),
            Err(e) => return Err(e),
        };
        let elapsed = start.elapsed().as_secs_f64();
        if resp.task_id != task_id {
            return Err(TransportError::TaskMismatch {
                expected: task_id,
                got: resp.task_id,
            });
        }
        debug!(
            "task {task_id}: client {:.6}s, server {:.6}s",
            elapsed, resp.elapsed
        );
        Ok(elapsed)
    }
}

fn map_timeout(e: io::Error, timeout: Duration) -> TransportError {
    match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => TransportError::Timeout(timeout),
        _ => TransportError::from(e),
    }
}

/// Engine executor backed by a [`Client`]. Connects lazily and drops the
/// connection after any failure so the next task reconnects.
pub struct RemoteExecutor {
    addr: String,
    timeout: Duration,
    client: Option<Client>,
}

impl RemoteExecutor {
    pub fn new(addr: impl Into<String>, timeout: Duration) -> Self {
        Self {
            addr: addr.into(),
            timeout,
            client: None,
        }
    }
}

impl Executor for RemoteExecutor {
    fn execute(&mut self, task_id: u64, d: f64) -> Result<f64, ExecError> {
        let client = match &mut self.client {
            Some(c) => c,
            None => self.client.insert(
                Client::connect(self.addr.as_str(), self.timeout)
                    .map_err(|e| ExecError(e.to_string()))?,
            ),
        };
        client.remote_execute(task_id, d).map_err(|e| {
            self.client = None;
            ExecError(e.to_string())
        })
    }
}
