//! TCP front end. Each connection gets a thread that parses frames; every
//! request goes through one channel to the thread that owns the archive.

use std::io::Write;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crate::transport::{ProtocolError, TransportError, WireFrame};

use super::Archive;

struct Request {
    frame: WireFrame,
    reply: Sender<WireFrame>,
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    owner: Option<JoinHandle<Archive>>,
    requests: Option<Sender<Request>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, waits for open connections to close and hands the
    /// archive back.
    pub fn shutdown(mut self) -> Archive {
        self.stop_accepting();
        self.requests.take();
        self.owner.take().expect("owner thread").join().expect("archive owner panicked")
    }

    /// Blocks until the server stops on its own, which only happens if the
    /// listener fails.
    pub fn wait(mut self) -> Archive {
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        self.requests.take();
        self.owner.take().expect("owner thread").join().expect("archive owner panicked")
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop_accepting();
        }
    }
}

/// Starts serving `archive` on `listener` in background threads.
pub fn serve(listener: TcpListener, mut archive: Archive) -> std::io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx): (Sender<Request>, Receiver<Request>) = mpsc::channel();
    let owner = thread::spawn(move || {
        for req in rx {
            let reply = archive.reply_to(&req.frame);
            let _ = req.reply.send(reply);
        }
        archive
    });
    let acceptor = {
        let stop = stop.clone();
        let tx = tx.clone();
        thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                match conn {
                    Ok(stream) => {
                        let tx = tx.clone();
                        thread::spawn(move || connection(stream, tx));
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })
    };
    Ok(ServerHandle {
        addr,
        stop,
        acceptor: Some(acceptor),
        owner: Some(owner),
        requests: Some(tx),
    })
}

fn connection(mut stream: TcpStream, requests: Sender<Request>) {
    let peer = stream.peer_addr().ok();
    let _ = stream.set_nodelay(true);
    loop {
        let reply = match WireFrame::read_from(&mut stream) {
            Ok(frame) => {
                let (tx, rx) = mpsc::channel();
                if requests.send(Request { frame, reply: tx }).is_err() {
                    return;
                }
                match rx.recv() {
                    Ok(r) => r,
                    Err(_) => return,
                }
            }
            // The length field was intact, so the stream is still in sync.
            Err(TransportError::Protocol(e @ (ProtocolError::Checksum | ProtocolError::UnknownType(_)))) => {
                WireFrame::nack(0, &e.to_string())
            }
            Err(TransportError::ConnectionClosed) => return,
            Err(e) => {
                log::warn!("dropping connection {peer:?}: {e}");
                return;
            }
        };
        if stream.write_all(&reply.emit()).is_err() {
            return;
        }
    }
}
