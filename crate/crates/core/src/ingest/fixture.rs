//! Loopback HTTP server replaying recorded responses, for exercising the
//! live client without the public network.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FixtureResponse {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl FixtureResponse {
    pub fn ok(content_type: &str, body: impl Into<Vec<u8>>) -> Self {
        FixtureResponse { status: 200, content_type: content_type.to_string(), body: body.into() }
    }
}

struct Shared {
    routes: Mutex<HashMap<String, FixtureResponse>>,
    /// Requests to fail with 503 before serving normally.
    failures_left: AtomicUsize,
    requests: AtomicUsize,
    stop: AtomicBool,
}

pub struct FixtureServer {
    addr: std::net::SocketAddr,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl FixtureServer {
    pub fn start(routes: HashMap<String, FixtureResponse>) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| Error::io("127.0.0.1:0", e))?;
        let addr = listener.local_addr().map_err(|e| Error::io("127.0.0.1:0", e))?;
        let shared = Arc::new(Shared {
            routes: Mutex::new(routes),
            failures_left: AtomicUsize::new(0),
            requests: AtomicUsize::new(0),
            stop: AtomicBool::new(false),
        });
        let worker = Arc::clone(&shared);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if worker.stop.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let _ = serve(stream, &worker);
                }
            }
        });
        Ok(FixtureServer { addr, shared, handle: Some(handle) })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn fail_next(&self, n: usize) {
        self.shared.failures_left.store(n, Ordering::SeqCst);
    }

    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    pub fn set_route(&self, path: &str, response: FixtureResponse) {
        self.shared.routes.lock().expect("routes lock").insert(path.to_string(), response);
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
    }
    if request_line.is_empty() {
        return Ok(());
    }
    shared.requests.fetch_add(1, Ordering::SeqCst);
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let failing = shared.failures_left.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok();
    let response = if failing {
        FixtureResponse { status: 503, content_type: "text/plain".into(), body: b"unavailable".to_vec() }
    } else {
        shared.routes.lock().expect("routes lock").get(&path).cloned().unwrap_or(FixtureResponse {
            status: 404,
            content_type: "text/plain".into(),
            body: b"not found".to_vec(),
        })
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {} X\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        response.status,
        response.content_type,
        response.body.len()
    )?;
    out.write_all(&response.body)?;
    out.flush()
}
