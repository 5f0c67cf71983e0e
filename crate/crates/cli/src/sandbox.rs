//! Client for the sandbox worker.
//!
//! Every message is a 4-byte big-endian length followed by that many bytes
//! of UTF-8 JSON. One request and one response per connection:
//!
//! ```text
//! → {"request_id", "feed_id", "code", "timeout_s"}
//! ← {"request_id", "kind": "success"|"error"|"timeout", "result"?, "error"?, "exec_duration_ms"}
//! ```

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use serde_json::Value;
use transit_ask_core::exec::{ExecutionOutcome, ExecutionRequest, Executor, ExecutorError};

/// Frames larger than this are rejected as a protocol error.
pub const MAX_FRAME_BYTES: u32 = 64 * 1024 * 1024;

/// Extra time allowed on top of the snippet timeout before the client gives up.
pub const TIMEOUT_GRACE: Duration = Duration::from_secs(30);

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|&n| n <= MAX_FRAME_BYTES)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

pub fn read_frame(r: &mut impl Read) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SandboxAddr {
    Tcp(String),
    #[cfg(unix)]
    Unix(std::path::PathBuf),
}

impl std::str::FromStr for SandboxAddr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("tcp://") {
            return Ok(SandboxAddr::Tcp(rest.to_string()));
        }
        #[cfg(unix)]
        if let Some(rest) = s.strip_prefix("unix://") {
            return Ok(SandboxAddr::Unix(rest.into()));
        }
        Err(format!("unsupported sandbox address {s:?} (expected tcp://host:port or unix:///path)"))
    }
}

trait Stream: Read + Write {}
impl<T: Read + Write> Stream for T {}

#[derive(Debug, Clone)]
pub struct SocketExecutor {
    addr: SandboxAddr,
    connect_timeout: Duration,
}

impl SocketExecutor {
    pub fn new(addr: SandboxAddr) -> Self {
        SocketExecutor { addr, connect_timeout: Duration::from_secs(5) }
    }

    fn connect(&self, io_timeout: Duration) -> Result<Box<dyn Stream>, ExecutorError> {
        let unavailable = |e: io::Error| ExecutorError::SandboxUnavailable(format!("{:?}: {e}", self.addr));
        match &self.addr {
            SandboxAddr::Tcp(hostport) => {
                use std::net::ToSocketAddrs;
                let addr = hostport
                    .to_socket_addrs()
                    .map_err(unavailable)?
                    .next()
                    .ok_or_else(|| ExecutorError::SandboxUnavailable(format!("cannot resolve {hostport}")))?;
                let s = TcpStream::connect_timeout(&addr, self.connect_timeout).map_err(unavailable)?;
                s.set_read_timeout(Some(io_timeout)).map_err(unavailable)?;
                s.set_write_timeout(Some(io_timeout)).map_err(unavailable)?;
                Ok(Box::new(s))
            }
            #[cfg(unix)]
            SandboxAddr::Unix(path) => {
                let s = std::os::unix::net::UnixStream::connect(path).map_err(unavailable)?;
                s.set_read_timeout(Some(io_timeout)).map_err(unavailable)?;
                s.set_write_timeout(Some(io_timeout)).map_err(unavailable)?;
                Ok(Box::new(s))
            }
        }
    }
}

/// Decodes a worker response and checks it answers `request_id`.
pub fn decode_response(bytes: &[u8], request_id: &str) -> Result<ExecutionOutcome, ExecutorError> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| ExecutorError::Protocol(format!("invalid JSON: {e}")))?;
    match v.get("request_id").and_then(Value::as_str) {
        Some(id) if id == request_id => {}
        other => {
            return Err(ExecutorError::Protocol(format!("response for {other:?}, expected {request_id:?}")));
        }
    }
    serde_json::from_value(v).map_err(|e| ExecutorError::Protocol(e.to_string()))
}

impl Executor for SocketExecutor {
    fn execute(&self, req: &ExecutionRequest) -> Result<ExecutionOutcome, ExecutorError> {
        let mut stream = self.connect(Duration::from_secs(req.timeout_s) + TIMEOUT_GRACE)?;
        let payload = serde_json::to_vec(req).expect("request serializes");
        write_frame(&mut stream, &payload).map_err(|e| ExecutorError::SandboxUnavailable(e.to_string()))?;
        let bytes = read_frame(&mut stream).map_err(|e| match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => {
                ExecutorError::SandboxUnavailable(format!("no response within {}s plus grace", req.timeout_s))
            }
            io::ErrorKind::InvalidData => ExecutorError::Protocol(e.to_string()),
            _ => ExecutorError::SandboxUnavailable(e.to_string()),
        })?;
        decode_response(&bytes, &req.request_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"{\"a\":1}").unwrap();
        assert_eq!(&buf[..4], &[0, 0, 0, 7]);
        assert_eq!(read_frame(&mut buf.as_slice()).unwrap(), b"{\"a\":1}");
    }

    #[test]
    fn oversized_and_truncated() {
        let mut huge = (MAX_FRAME_BYTES + 1).to_be_bytes().to_vec();
        huge.extend_from_slice(b"xx");
        assert_eq!(read_frame(&mut huge.as_slice()).unwrap_err().kind(), io::ErrorKind::InvalidData);
        assert_eq!(read_frame(&mut [0u8, 0, 0, 9, b'x'].as_slice()).unwrap_err().kind(), io::ErrorKind::UnexpectedEof);
    }

    #[test]
    fn response_id_must_match() {
        let body = br#"{"request_id":"r1","kind":"timeout","exec_duration_ms":180000}"#;
        assert!(decode_response(body, "r1").is_ok());
        assert!(matches!(decode_response(body, "r2"), Err(ExecutorError::Protocol(_))));
        assert!(matches!(decode_response(br#"{"request_id":"r1","kind":"success"}"#, "r1"), Err(ExecutorError::Protocol(_))));
    }

    #[test]
    fn addresses() {
        assert_eq!("tcp://127.0.0.1:9000".parse::<SandboxAddr>().unwrap(), SandboxAddr::Tcp("127.0.0.1:9000".into()));
        assert!("http://x".parse::<SandboxAddr>().is_err());
    }
}
