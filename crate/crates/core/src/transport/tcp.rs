//! Socket carrier: one TCP connection per worker, one outstanding request.

use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};

use super::{decode, read_frame, write_frame, Direction, Link, Message, MessageLog};
use crate::coordinator::Coordinator;
use crate::error::codes;
use crate::{Error, Result};

const POLL: Duration = Duration::from_millis(5);

/// Serves a coordinator over TCP until every worker has been admitted at
/// the final iteration and has disconnected.
pub struct TcpCoordinatorServer {
    coordinator: Arc<Coordinator>,
    listener: TcpListener,
    status: Option<TcpListener>,
}

impl TcpCoordinatorServer {
    pub fn bind<A: ToSocketAddrs>(coordinator: Arc<Coordinator>, addr: A) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        Ok(TcpCoordinatorServer {
            coordinator,
            listener,
            status: None,
        })
    }

    /// Also answers every connection on `addr` with the `key=value` status report.
    pub fn with_status<A: ToSocketAddrs>(mut self, addr: A) -> Result<Self> {
        self.status = Some(TcpListener::bind(addr)?);
        Ok(self)
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn status_addr(&self) -> Option<SocketAddr> {
        self.status.as_ref().and_then(|l| l.local_addr().ok())
    }

    pub fn coordinator(&self) -> &Arc<Coordinator> {
        &self.coordinator
    }

    /// Blocks until all workers finished `total_iterations`.
    pub fn serve(self, total_iterations: u64) -> Result<()> {
        let done = Arc::new(AtomicBool::new(false));
        let status_thread = self.status.map(|listener| {
            let coordinator = Arc::clone(&self.coordinator);
            let done = Arc::clone(&done);
            thread::spawn(move || serve_status(listener, coordinator, done))
        });

        self.listener.set_nonblocking(true)?;
        let mut connections: Vec<JoinHandle<()>> = Vec::new();
        while !self.coordinator.finished(total_iterations) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    debug!("worker connection from {peer}");
                    stream.set_nonblocking(false)?;
                    stream.set_nodelay(true)?;
                    let coordinator = Arc::clone(&self.coordinator);
                    connections.push(thread::spawn(move || {
                        if let Err(e) = serve_connection(stream, &coordinator) {
                            warn!("connection from {peer} closed: {e}");
                        }
                    }));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) => return Err(e.into()),
            }
        }
        info!("all workers reached iteration {total_iterations}");
        for handle in connections {
            let _ = handle.join();
        }
        done.store(true, Ordering::Release);
        if let Some(handle) = status_thread {
            let _ = handle.join();
        }
        Ok(())
    }

    /// Runs [`serve`](Self::serve) on a background thread.
    pub fn spawn(self, total_iterations: u64) -> JoinHandle<Result<()>> {
        thread::spawn(move || self.serve(total_iterations))
    }
}

fn serve_connection(stream: TcpStream, coordinator: &Coordinator) -> Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream.try_clone()?);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(frame)) => frame,
            Ok(None) => return Ok(()),
            Err(e) => return reject(&mut writer, &stream, e),
        };
        let request = match decode(&frame) {
            Ok(request) => request,
            Err(e) => return reject(&mut writer, &stream, e),
        };
        let reply = coordinator.handle(&request);
        write_frame(&mut writer, &reply)?;
    }
}

fn reject(writer: &mut impl Write, stream: &TcpStream, cause: Error) -> Result<()> {
    let _ = write_frame(
        writer,
        &Message::Error {
            code: codes::UNEXPECTED_MESSAGE,
            detail: cause.to_string(),
        },
    );
    let _ = stream.shutdown(Shutdown::Both);
    Err(cause)
}

fn serve_status(listener: TcpListener, coordinator: Arc<Coordinator>, done: Arc<AtomicBool>) {
    if listener.set_nonblocking(true).is_err() {
        return;
    }
    while !done.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((mut stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.write_all(coordinator.status_report().as_bytes());
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => return,
        }
    }
}

/// The worker end of the socket carrier.
pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    log: Option<MessageLog>,
}

impl TcpLink {
    /// Connects, retrying refused connections up to `attempts` times `delay` apart.
    pub fn connect<A: ToSocketAddrs>(addr: A, attempts: u32, delay: Duration) -> Result<Self> {
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs()?.collect();
        let mut last = None;
        for attempt in 0..attempts.max(1) {
            if attempt > 0 {
                thread::sleep(delay);
            }
            match TcpStream::connect(&addrs[..]) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    return Ok(TcpLink {
                        reader: BufReader::new(stream.try_clone()?),
                        writer: BufWriter::new(stream),
                        log: None,
                    });
                }
                Err(e) => last = Some(e),
            }
        }
        Err(Error::Transport(format!(
            "could not reach coordinator at {addrs:?}: {}",
            last.map_or_else(|| "no address".to_string(), |e| e.to_string())
        )))
    }

    pub fn with_log(mut self, log: MessageLog) -> Self {
        self.log = Some(log);
        self
    }
}

impl Link for TcpLink {
    fn exchange(&mut self, request: &Message) -> Result<Message> {
        write_frame(&mut self.writer, request)
            .map_err(|e| Error::Transport(format!("send failed: {e}")))?;
        let frame = read_frame(&mut self.reader)
            .map_err(|e| Error::Transport(format!("receive failed: {e}")))?
            .ok_or_else(|| Error::Transport("coordinator closed the connection".into()))?;
        let reply = decode(&frame)?;
        if let Some(log) = &self.log {
            let mut log = log.lock();
            log.push((Direction::Request, request.clone()));
            log.push((Direction::Response, reply.clone()));
        }
        Ok(reply)
    }
}
