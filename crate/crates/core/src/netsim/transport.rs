//! Real-time TCP runtime around [`PeerNode`]. Peers exchange length-prefixed
//! frames; a console connects, sends requests with sender [`CONSOLE_ID`] and
//! reads replies on the same connection.

use std::collections::BTreeMap;
use std::io::{self, BufReader};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};

use crate::commander::{Commander, FirewallBackend, TickOutcome};

use super::message::{read_frame, write_frame, Message, NodeId, CONSOLE_ID};
use super::node::{NodeEvent, Outbound, PeerNode};

pub const SEAL_TICK: Duration = Duration::from_millis(50);
const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);
const RECONNECT_BACKOFF: Duration = Duration::from_millis(500);

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

type ReplyStream = Arc<Mutex<TcpStream>>;

struct Inbound {
    msg: Message,
    reply: Option<ReplyStream>,
}

pub type BoxedCommander = Commander<Box<dyn FirewallBackend + Send>>;

/// A running node. Dropping the handle does not stop it; call
/// [`NodeHandle::shutdown`].
pub struct NodeHandle {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    main: Option<JoinHandle<(PeerNode, Option<BoxedCommander>)>>,
}

impl NodeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn is_running(&self) -> bool {
        self.main.as_ref().is_some_and(|h| !h.is_finished())
    }

    /// Stops the node and returns its final state.
    pub fn shutdown(mut self) -> (PeerNode, Option<BoxedCommander>) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect_timeout(&self.local_addr, CONNECT_TIMEOUT);
        self.main
            .take()
            .expect("joined once")
            .join()
            .expect("node thread panicked")
    }

    /// Blocks until the node stops on its own (it never does unless the
    /// listener fails).
    pub fn wait(mut self) -> (PeerNode, Option<BoxedCommander>) {
        self.main
            .take()
            .expect("joined once")
            .join()
            .expect("node thread panicked")
    }
}

/// Binds `listen` and starts the node, its listener and one sender per peer.
pub fn spawn_node(
    peer: PeerNode,
    commander: Option<BoxedCommander>,
    listen: SocketAddr,
    peers: BTreeMap<NodeId, SocketAddr>,
) -> io::Result<NodeHandle> {
    let listener = TcpListener::bind(listen)?;
    let local_addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (inbox_tx, inbox_rx) = mpsc::channel();

    {
        let stop = stop.clone();
        thread::Builder::new()
            .name(format!("listen-{}", peer.id()))
            .spawn(move || accept_loop(listener, inbox_tx, stop))?;
    }

    let mut senders = BTreeMap::new();
    for (&id, &addr) in &peers {
        let (tx, rx) = mpsc::channel::<Message>();
        let stop = stop.clone();
        thread::Builder::new()
            .name(format!("send-{}-{id}", peer.id()))
            .spawn(move || send_loop(addr, rx, stop))?;
        senders.insert(id, tx);
    }

    let main_stop = stop.clone();
    let main = thread::Builder::new()
        .name(format!("node-{}", peer.id()))
        .spawn(move || node_loop(peer, commander, inbox_rx, senders, main_stop))?;
    info!("node listening on {local_addr}");
    Ok(NodeHandle {
        local_addr,
        stop,
        main: Some(main),
    })
}

fn accept_loop(listener: TcpListener, inbox: Sender<Inbound>, stop: Arc<AtomicBool>) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let inbox = inbox.clone();
        let stop = stop.clone();
        let _ = thread::Builder::new()
            .name("conn".into())
            .spawn(move || read_loop(stream, inbox, stop));
    }
}

fn read_loop(stream: TcpStream, inbox: Sender<Inbound>, stop: Arc<AtomicBool>) {
    let _ = stream.set_nodelay(true);
    let Ok(write_half) = stream.try_clone() else {
        return;
    };
    let reply = Arc::new(Mutex::new(write_half));
    let mut reader = BufReader::new(stream);
    while !stop.load(Ordering::SeqCst) {
        match read_frame(&mut reader) {
            Ok(Some(msg)) => {
                let reply = (msg.sender == CONSOLE_ID).then(|| reply.clone());
                if inbox.send(Inbound { msg, reply }).is_err() {
                    break;
                }
            }
            Ok(None) => break,
            Err(e) => {
                debug!("dropping connection: {e}");
                break;
            }
        }
    }
}

fn send_loop(addr: SocketAddr, rx: Receiver<Message>, stop: Arc<AtomicBool>) {
    let mut conn: Option<TcpStream> = None;
    let mut last_attempt: Option<Instant> = None;
    for msg in rx {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        if conn.is_none() {
            if last_attempt.is_some_and(|t| t.elapsed() < RECONNECT_BACKOFF) {
                continue;
            }
            last_attempt = Some(Instant::now());
            match TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT) {
                Ok(s) => {
                    let _ = s.set_nodelay(true);
                    conn = Some(s);
                }
                Err(e) => {
                    debug!("peer {addr} unreachable: {e}");
                    continue;
                }
            }
        }
        if let Some(s) = conn.as_mut() {
            if let Err(e) = write_frame(s, &msg) {
                debug!("peer {addr} write failed: {e}");
                let _ = s.shutdown(Shutdown::Both);
                conn = None;
            }
        }
    }
}

fn node_loop(
    mut peer: PeerNode,
    mut commander: Option<BoxedCommander>,
    inbox: Receiver<Inbound>,
    senders: BTreeMap<NodeId, Sender<Message>>,
    stop: Arc<AtomicBool>,
) -> (PeerNode, Option<BoxedCommander>) {
    let announce_every = Duration::from_millis(peer.config().announce_interval_ms);
    let refresh_every = commander
        .as_ref()
        .map(|c| Duration::from_millis(c.config().refresh_ms));
    let start = Instant::now();
    let mut next_seal = start + SEAL_TICK;
    let mut next_announce = start + announce_every;
    let mut next_refresh = refresh_every.map(|_| start);

    let route = |peer: &mut PeerNode, out: Vec<Outbound>, reply: Option<&ReplyStream>| {
        for o in out {
            if o.to == CONSOLE_ID {
                if let Some(r) = reply {
                    let mut s = r.lock().expect("reply lock");
                    if let Err(e) = write_frame(&mut *s, &o.msg) {
                        debug!("console reply failed: {e}");
                    }
                }
            } else if let Some(tx) = senders.get(&o.to) {
                let _ = tx.send(o.msg);
            }
        }
        for e in peer.drain_events() {
            log_event(&e);
        }
    };

    let out = peer.start(unix_ms());
    route(&mut peer, out, None);

    while !stop.load(Ordering::SeqCst) {
        let mut deadline = next_seal.min(next_announce);
        if let Some(r) = next_refresh {
            deadline = deadline.min(r);
        }
        let wait = deadline.saturating_duration_since(Instant::now());
        match inbox.recv_timeout(wait) {
            Ok(Inbound { msg, reply }) => {
                let out = peer.handle(msg, unix_ms());
                route(&mut peer, out, reply.as_ref());
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        let now = Instant::now();
        if now >= next_seal {
            next_seal = now + SEAL_TICK;
            let out = peer.on_seal_tick(unix_ms());
            route(&mut peer, out, None);
        }
        if now >= next_announce {
            next_announce = now + announce_every;
            let out = peer.on_announce_tick(unix_ms());
            route(&mut peer, out, None);
        }
        if let (Some(due), Some(every), Some(c)) = (next_refresh, refresh_every, commander.as_mut()) {
            if now >= due {
                next_refresh = Some(now + every);
                let (outcome, out) = c.tick(&mut peer, unix_ms());
                match outcome {
                    TickOutcome::Reconciled(r) if !r.is_noop() => {
                        info!("commander: +{} -{} ={}", r.added, r.removed, r.unchanged);
                        if let Some(e) = r.error {
                            warn!("commander: backend error {e}");
                        }
                    }
                    TickOutcome::CorruptionDetected => warn!("commander: ledger corruption, resyncing"),
                    _ => {}
                }
                route(&mut peer, out, None);
            }
        }
    }
    (peer, commander)
}

fn log_event(e: &NodeEvent) {
    match e {
        NodeEvent::Sealed { height, hash, txs } => {
            info!("sealed #{height} {} ({txs} txs)", hash.short())
        }
        NodeEvent::CorruptionDetected { offset, salvaged } => {
            warn!("ledger corrupt at {offset:?}; kept {salvaged} blocks, resyncing")
        }
        NodeEvent::SyncCompleted { height, .. } => info!("sync complete at height {height}"),
        NodeEvent::StorageError(e) => warn!("storage error: {e}"),
        other => debug!("{other:?}"),
    }
}

/// Synchronous request/response connection used by the console.
pub struct ConsoleConnection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl ConsoleConnection {
    pub fn connect(addr: SocketAddr, timeout: Duration) -> io::Result<Self> {
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    pub fn send(&mut self, msg: &Message) -> io::Result<()> {
        write_frame(&mut self.writer, msg)
    }

    pub fn recv(&mut self) -> io::Result<Message> {
        read_frame(&mut self.reader)?
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "node closed the connection"))
    }

    pub fn request(&mut self, msg: &Message) -> io::Result<Message> {
        self.send(msg)?;
        self.recv()
    }
}
