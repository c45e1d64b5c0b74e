//! TCP front end: one thread per connection, one JSON request per line.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::json;

use super::EnvService;

/// Lines longer than this are refused before parsing. JSON escaping can
/// inflate a response, so the cap is well above the response byte limit.
fn line_cap(service: &EnvService) -> u64 {
    service.defaults().max_response_bytes as u64 * 6 + 64 * 1024
}

fn serve_connection(stream: TcpStream, service: Arc<EnvService>) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let cap = line_cap(&service);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = (&mut reader).take(cap + 1).read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Ok(());
        }
        if buf.last() != Some(&b'\n') && n as u64 > cap {
            let reply = json!({"error": "TOO_LARGE", "message": format!("request line exceeds {cap} bytes")});
            writeln!(writer, "{reply}")?;
            return Ok(());
        }
        let line = String::from_utf8_lossy(&buf);
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let reply = service.handle_line(line);
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    reaper: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting connections. Open connections finish on their own.
    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    /// Block until the accept loop exits.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        if let Some(h) = self.reaper.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

/// Serve `service` on `listener` in background threads. Idle episodes are
/// reaped every `reap_every`.
pub fn spawn(
    listener: TcpListener,
    service: Arc<EnvService>,
    reap_every: Duration,
) -> std::io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));

    let accept = {
        let stop = stop.clone();
        let service = service.clone();
        thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let service = service.clone();
                thread::spawn(move || {
                    let _ = serve_connection(conn, service);
                });
            }
        })
    };

    let reaper = {
        let stop = stop.clone();
        thread::spawn(move || {
            let tick = Duration::from_millis(50).min(reap_every);
            let mut waited = Duration::ZERO;
            while !stop.load(Ordering::SeqCst) {
                thread::sleep(tick);
                waited += tick;
                if waited >= reap_every {
                    service.reap_idle();
                    waited = Duration::ZERO;
                }
            }
        })
    };

    Ok(ServerHandle {
        addr,
        stop,
        accept: Some(accept),
        reaper: Some(reaper),
    })
}
