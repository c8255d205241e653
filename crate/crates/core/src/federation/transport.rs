//! Frame transports between the server and its clients.
//!
//! Both transports move the exact bytes produced by [`wire::encode`]; the
//! in-process one hands frames to one worker thread per client over
//! channels, the socket one writes them to TCP streams.

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::client::ClientNode;
use super::wire::{self, RoundMessage};
use crate::error::{Error, Result};

pub trait Transport {
    fn send(&mut self, client: u32, frame: &[u8]) -> Result<()>;
    /// Next frame from any client, in arrival order.
    fn recv(&mut self) -> Result<(u32, Vec<u8>)>;
}

type Inbox = Receiver<(u32, Result<Vec<u8>, String>)>;

/// Runs one frame through a client node, turning panics and protocol errors
/// into `ClientError` frames.
fn serve_frame(node: &mut ClientNode, frame: &[u8]) -> Option<Vec<u8>> {
    let id = node.id();
    let outcome = catch_unwind(AssertUnwindSafe(|| wire::decode(frame).and_then(|m| node.handle(m))));
    let reply = match outcome {
        Ok(Ok(reply)) => reply,
        Ok(Err(e)) => Some(RoundMessage::ClientError { round: 0, client_id: id, message: e.to_string() }),
        Err(_) => Some(RoundMessage::ClientError { round: 0, client_id: id, message: "client panicked".into() }),
    };
    reply.map(|m| wire::encode(&m))
}

pub struct InProcessTransport {
    outboxes: BTreeMap<u32, Sender<Vec<u8>>>,
    inbox: Inbox,
    workers: Vec<JoinHandle<()>>,
}

impl InProcessTransport {
    pub fn spawn(nodes: Vec<ClientNode>) -> Self {
        let (reply_tx, inbox) = channel();
        let mut outboxes = BTreeMap::new();
        let mut workers = Vec::new();
        for mut node in nodes {
            let (tx, rx) = channel::<Vec<u8>>();
            outboxes.insert(node.id(), tx);
            let reply_tx = reply_tx.clone();
            workers.push(std::thread::spawn(move || {
                while let Ok(frame) = rx.recv() {
                    if let Some(out) = serve_frame(&mut node, &frame) {
                        if reply_tx.send((node.id(), Ok(out))).is_err() {
                            break;
                        }
                    }
                    if node.is_finished() {
                        break;
                    }
                }
            }));
        }
        Self { outboxes, inbox, workers }
    }
}

impl Transport for InProcessTransport {
    fn send(&mut self, client: u32, frame: &[u8]) -> Result<()> {
        let tx = self.outboxes.get(&client).ok_or_else(|| Error::Protocol(format!("unknown client {client}")))?;
        tx.send(frame.to_vec()).map_err(|_| Error::ClientFailed { client, round: 0, message: "worker exited".into() })
    }

    fn recv(&mut self) -> Result<(u32, Vec<u8>)> {
        match self.inbox.recv() {
            Ok((id, Ok(frame))) => Ok((id, frame)),
            Ok((id, Err(message))) => Err(Error::ClientFailed { client: id, round: 0, message }),
            Err(_) => Err(Error::Protocol("all clients disconnected".into())),
        }
    }
}

impl Drop for InProcessTransport {
    fn drop(&mut self) {
        self.outboxes.clear();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

pub struct SocketTransport {
    streams: BTreeMap<u32, TcpStream>,
    inbox: Inbox,
    readers: Vec<JoinHandle<()>>,
}

impl SocketTransport {
    /// Accepts one connection per expected client id. Each connection must
    /// open with a `Join` frame naming its id.
    pub fn accept(listener: &TcpListener, expected: &[u32]) -> Result<Self> {
        let (tx, inbox) = channel();
        let mut streams = BTreeMap::new();
        let mut readers = Vec::new();
        while streams.len() < expected.len() {
            let (mut stream, peer) = listener.accept()?;
            stream.set_nodelay(true)?;
            let frame = wire::read_frame(&mut stream)?.ok_or_else(|| Error::Protocol(format!("{peer} closed before joining")))?;
            let id = match wire::decode(&frame)? {
                RoundMessage::Join { client_id } => client_id,
                m => return Err(Error::Protocol(format!("{peer} opened with {}", m.kind_name()))),
            };
            if !expected.contains(&id) || streams.contains_key(&id) {
                return Err(Error::Protocol(format!("unexpected or duplicate client id {id} from {peer}")));
            }
            let mut reader = stream.try_clone()?;
            let tx: Sender<(u32, Result<Vec<u8>, String>)> = tx.clone();
            readers.push(std::thread::spawn(move || loop {
                match wire::read_frame(&mut reader) {
                    Ok(Some(frame)) => {
                        if tx.send((id, Ok(frame))).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        let _ = tx.send((id, Err(e.to_string())));
                        break;
                    }
                }
            }));
            streams.insert(id, stream);
        }
        Ok(Self { streams, inbox, readers })
    }
}

impl Transport for SocketTransport {
    fn send(&mut self, client: u32, frame: &[u8]) -> Result<()> {
        let s = self.streams.get_mut(&client).ok_or_else(|| Error::Protocol(format!("unknown client {client}")))?;
        wire::write_frame(s, frame).map_err(|e| Error::ClientFailed { client, round: 0, message: e.to_string() })
    }

    fn recv(&mut self) -> Result<(u32, Vec<u8>)> {
        match self.inbox.recv() {
            Ok((id, Ok(frame))) => Ok((id, frame)),
            Ok((id, Err(message))) => Err(Error::ClientFailed { client: id, round: 0, message }),
            Err(_) => Err(Error::Protocol("all clients disconnected".into())),
        }
    }
}

impl Drop for SocketTransport {
    fn drop(&mut self) {
        for s in self.streams.values() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        for r in self.readers.drain(..) {
            let _ = r.join();
        }
    }
}

/// Connects to a server (retrying until `timeout`), joins, and serves frames
/// until the server sends `Complete` or closes the connection.
pub fn run_socket_client(addr: SocketAddr, mut node: ClientNode, timeout: Duration) -> Result<()> {
    let deadline = Instant::now() + timeout;
    let mut stream = loop {
        match TcpStream::connect(addr) {
            Ok(s) => break s,
            Err(_) if Instant::now() < deadline => {
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(e.into()),
        }
    };
    stream.set_nodelay(true)?;
    wire::write_frame(&mut stream, &wire::encode(&RoundMessage::Join { client_id: node.id() }))?;
    while let Some(frame) = wire::read_frame(&mut stream)? {
        if let Some(out) = serve_frame(&mut node, &frame) {
            wire::write_frame(&mut stream, &out)?;
        }
        if node.is_finished() {
            break;
        }
    }
    Ok(())
}
