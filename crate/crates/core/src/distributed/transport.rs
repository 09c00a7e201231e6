//! Point-to-point delivery of byte frames between workers.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::error::{DcError, Result};

/// Default time a worker waits for a frame before giving up.
pub const DEFAULT_RECV_TIMEOUT: Duration = Duration::from_secs(600);

/// One worker's view of the network.
pub trait Endpoint: Send {
    fn rank(&self) -> usize;
    fn send(&self, to: usize, frame: &[u8]) -> Result<()>;
    /// Blocks for the next frame addressed to this worker.
    fn recv(&self) -> Result<Vec<u8>>;
}

/// Endpoint backed by in-process channels.
pub struct ChannelEndpoint {
    rank: usize,
    peers: Vec<Sender<Vec<u8>>>,
    inbox: Receiver<Vec<u8>>,
    timeout: Duration,
}

/// Fully connected channel endpoints for `workers` ranks.
pub fn channel_network(workers: usize) -> Vec<ChannelEndpoint> {
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..workers).map(|_| channel()).unzip();
    receivers
        .into_iter()
        .enumerate()
        .map(|(rank, inbox)| ChannelEndpoint { rank, peers: senders.clone(), inbox, timeout: DEFAULT_RECV_TIMEOUT })
        .collect()
}

impl Endpoint for ChannelEndpoint {
    fn rank(&self) -> usize {
        self.rank
    }

    fn send(&self, to: usize, frame: &[u8]) -> Result<()> {
        let peer = self.peers.get(to).ok_or_else(|| DcError::WorkerUnreachable(format!("no worker {to}")))?;
        peer.send(frame.to_vec()).map_err(|_| DcError::WorkerUnreachable(format!("worker {to} has exited")))
    }

    fn recv(&self) -> Result<Vec<u8>> {
        recv_with_timeout(&self.inbox, self.timeout)
    }
}

fn recv_with_timeout(inbox: &Receiver<Vec<u8>>, timeout: Duration) -> Result<Vec<u8>> {
    inbox.recv_timeout(timeout).map_err(|e| match e {
        RecvTimeoutError::Timeout => DcError::WorkerUnreachable(format!("no frame within {timeout:?}")),
        RecvTimeoutError::Disconnected => DcError::WorkerUnreachable("all peers disconnected".into()),
    })
}

/// Writes a frame as a little-endian `u64` length followed by the bytes.
pub fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> std::io::Result<()> {
    w.write_all(&(frame.len() as u64).to_le_bytes())?;
    w.write_all(frame)?;
    w.flush()
}

/// Reads one frame written by [`write_frame`]; `None` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 8];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let mut buf = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

/// Sends one frame over a fresh TCP connection, retrying while the peer
/// starts up.
pub fn send_tcp(addr: &str, frame: &[u8], patience: Duration) -> Result<()> {
    let started = Instant::now();
    loop {
        match TcpStream::connect(addr) {
            Ok(mut stream) => {
                return write_frame(&mut stream, frame).map_err(|e| DcError::WorkerUnreachable(format!("{addr}: {e}")));
            }
            Err(e) if started.elapsed() >= patience => {
                return Err(DcError::WorkerUnreachable(format!("{addr}: {e}")));
            }
            Err(_) => std::thread::sleep(Duration::from_millis(20)),
        }
    }
}

/// Endpoint listening on a TCP socket; every incoming connection carries
/// frames for this worker.
pub struct TcpEndpoint {
    rank: usize,
    roster: Vec<String>,
    local: SocketAddr,
    inbox: Receiver<Vec<u8>>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    timeout: Duration,
}

impl TcpEndpoint {
    /// Starts accepting on `listener`. `roster[r]` is the address of rank `r`.
    pub fn new(rank: usize, listener: TcpListener, roster: Vec<String>) -> Result<Self> {
        let local = listener.local_addr().map_err(|e| DcError::WorkerUnreachable(e.to_string()))?;
        let (tx, inbox) = channel();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let acceptor = std::thread::spawn(move || accept_loop(listener, tx, flag));
        Ok(Self { rank, roster, local, inbox, stop, acceptor: Some(acceptor), timeout: DEFAULT_RECV_TIMEOUT })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Vec<u8>>, stop: Arc<AtomicBool>) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(mut stream) = stream else { continue };
        while let Ok(Some(frame)) = read_frame(&mut stream) {
            if tx.send(frame).is_err() {
                return;
            }
        }
    }
}

impl Endpoint for TcpEndpoint {
    fn rank(&self) -> usize {
        self.rank
    }

    fn send(&self, to: usize, frame: &[u8]) -> Result<()> {
        let addr = self.roster.get(to).ok_or_else(|| DcError::WorkerUnreachable(format!("no worker {to}")))?;
        send_tcp(addr, frame, Duration::from_secs(10))
    }

    fn recv(&self) -> Result<Vec<u8>> {
        recv_with_timeout(&self.inbox, self.timeout)
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let mut wake = self.local;
        if wake.ip().is_unspecified() {
            wake.set_ip(std::net::Ipv4Addr::LOCALHOST.into());
        }
        let _ = TcpStream::connect(wake);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}
