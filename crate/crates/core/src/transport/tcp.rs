//! TCP gateway: bridges the wire protocol on a local stream socket to a
//! [`Transport`]'s queues.
//!
//! Clients connect and write one encoded frame per line (direction `I`,
//! their own id in the peer field). Outbound frames are written to every
//! connection bound to the recipient id; frames for ids no connection has
//! claimed go to all connections so observers still see them.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::{decode_frame, encode_frame, Direction, Transport};

const IDLE_SLEEP: Duration = Duration::from_millis(5);

struct Connection {
    stream: TcpStream,
    bound_peer: Option<String>,
}

pub struct TcpGateway {
    local_addr: SocketAddr,
    stopping: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl TcpGateway {
    /// Bind the listener and start the accept and dispatch threads.
    pub fn start(addr: &str, transport: Arc<Transport>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let stopping = Arc::new(AtomicBool::new(false));
        let connections: Arc<Mutex<Vec<Connection>>> = Arc::new(Mutex::new(Vec::new()));

        let accept_thread = {
            let stopping = Arc::clone(&stopping);
            let connections = Arc::clone(&connections);
            let transport = Arc::clone(&transport);
            std::thread::spawn(move || {
                accept_loop(&listener, &stopping, &connections, &transport);
            })
        };

        let dispatch_thread = {
            let stopping = Arc::clone(&stopping);
            let connections = Arc::clone(&connections);
            let transport = Arc::clone(&transport);
            std::thread::spawn(move || {
                dispatch_loop(&stopping, &connections, &transport);
            })
        };

        Ok(Self {
            local_addr,
            stopping,
            threads: vec![accept_thread, dispatch_thread],
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stop(mut self) {
        self.stopping.store(true, Ordering::SeqCst);
        for handle in self.threads.drain(..) {
            let _ = handle.join();
        }
    }
}

fn accept_loop(
    listener: &TcpListener,
    stopping: &Arc<AtomicBool>,
    connections: &Arc<Mutex<Vec<Connection>>>,
    transport: &Arc<Transport>,
) {
    while !stopping.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if let Ok(write_half) = stream.try_clone() {
                    connections
                        .lock()
                        .expect("connections lock")
                        .push(Connection {
                            stream: write_half,
                            bound_peer: None,
                        });
                    let stopping = Arc::clone(stopping);
                    let connections = Arc::clone(connections);
                    let transport = Arc::clone(transport);
                    std::thread::spawn(move || {
                        read_loop(stream, &stopping, &connections, &transport);
                    });
                }
            }
            Err(ref e) if e.kind() == ErrorKind::WouldBlock => {
                std::thread::sleep(IDLE_SLEEP);
            }
            Err(_) => break,
        }
    }
}

fn read_loop(
    stream: TcpStream,
    stopping: &Arc<AtomicBool>,
    connections: &Arc<Mutex<Vec<Connection>>>,
    transport: &Arc<Transport>,
) {
    let peer_addr = stream.peer_addr().ok();
    let _ = stream.set_read_timeout(Some(Duration::from_millis(50)));
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    while !stopping.load(Ordering::SeqCst) {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => break,
            Ok(_) => {
                let trimmed = line.trim_end_matches(['\r', '\n']);
                if trimmed.is_empty() {
                    continue;
                }
                // outbound-tagged or malformed lines are dropped; the
                // socket peer is outside the trust boundary
                if let Ok(frame) = decode_frame(trimmed) {
                    if frame.direction == Direction::Inbound
                        && transport
                            .inject_inbound(&frame.peer_id, &frame.body)
                            .is_ok()
                    {
                        bind_peer(connections, peer_addr, &frame.peer_id);
                    }
                }
            }
            Err(ref e) if e.kind() == ErrorKind::WouldBlock || e.kind() == ErrorKind::TimedOut => {
                continue;
            }
            Err(_) => break,
        }
    }
}

fn bind_peer(
    connections: &Arc<Mutex<Vec<Connection>>>,
    peer_addr: Option<SocketAddr>,
    peer_id: &str,
) {
    let mut connections = connections.lock().expect("connections lock");
    for conn in connections.iter_mut() {
        if conn.stream.peer_addr().ok() == peer_addr {
            conn.bound_peer = Some(peer_id.to_string());
        }
    }
}

fn dispatch_loop(
    stopping: &Arc<AtomicBool>,
    connections: &Arc<Mutex<Vec<Connection>>>,
    transport: &Arc<Transport>,
) {
    loop {
        match transport.pop_outbound() {
            Some(frame) => {
                let line = encode_frame(&frame);
                let mut connections = connections.lock().expect("connections lock");
                let mut delivered = false;
                connections.retain_mut(|conn| {
                    if conn.bound_peer.as_deref() == Some(frame.peer_id.as_str()) {
                        delivered = true;
                        writeln!(conn.stream, "{line}").is_ok()
                    } else {
                        true
                    }
                });
                if !delivered {
                    connections.retain_mut(|conn| writeln!(conn.stream, "{line}").is_ok());
                }
            }
            None => {
                if stopping.load(Ordering::SeqCst) {
                    break;
                }
                std::thread::sleep(IDLE_SLEEP);
            }
        }
    }
}
