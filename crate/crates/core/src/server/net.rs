use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender, TrySendError};
use tungstenite::{Message, WebSocket};

use super::session::{ClientId, Outgoing, Session};
use super::wire::encode;
use super::ServerError;

#[derive(Clone, Debug)]
pub struct ServeConfig {
    pub addr: String,
    /// Frames buffered per client before it is dropped as too slow.
    pub queue_capacity: usize,
    /// Stop after this many loop iterations (mainly for tests and demos).
    pub max_steps: Option<u64>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            addr: "127.0.0.1:8765".into(),
            queue_capacity: 64,
            max_steps: None,
        }
    }
}

#[derive(Debug, Default)]
pub struct ServerStats {
    pub steps: AtomicU64,
    pub connected: AtomicU64,
    pub dropped_slow: AtomicU64,
}

enum Event {
    Connect(ClientId, Sender<Vec<u8>>),
    Input(ClientId, Vec<u8>),
    Disconnect(ClientId),
}

/// A running server. Dropping it stops the loops.
pub struct ServerHandle {
    pub local_addr: SocketAddr,
    pub stats: Arc<ServerStats>,
    stop: Arc<AtomicBool>,
    sim: Option<JoinHandle<Result<Session, ServerError>>>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    /// Waits for the simulation loop and returns the final session.
    pub fn join(mut self) -> Result<Session, ServerError> {
        let sim = self.sim.take().expect("joined once");
        let result = sim.join().unwrap_or(Err(ServerError::Closed));
        self.stop();
        if let Some(a) = self.accept.take() {
            let _ = a.join();
        }
        result
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `cfg.addr` and runs `session` at its decision rate on a
/// background thread.
pub fn serve(session: Session, cfg: ServeConfig) -> Result<ServerHandle, ServerError> {
    let listener = TcpListener::bind(&cfg.addr).map_err(|e| ServerError::Bind(cfg.addr.clone(), e))?;
    let local_addr = listener.local_addr().map_err(|e| ServerError::Bind(cfg.addr.clone(), e))?;
    listener.set_nonblocking(true).map_err(|e| ServerError::Bind(cfg.addr.clone(), e))?;
    let stop = Arc::new(AtomicBool::new(false));
    let stats = Arc::new(ServerStats::default());
    let (events_tx, events_rx) = unbounded();

    let accept = {
        let stop = stop.clone();
        let capacity = cfg.queue_capacity;
        std::thread::spawn(move || accept_loop(listener, events_tx, stop, capacity))
    };
    let sim = {
        let stop = stop.clone();
        let stats = stats.clone();
        std::thread::spawn(move || sim_loop(session, events_rx, stop, stats, cfg.max_steps))
    };
    Ok(ServerHandle {
        local_addr,
        stats,
        stop,
        sim: Some(sim),
        accept: Some(accept),
    })
}

fn accept_loop(listener: TcpListener, events: Sender<Event>, stop: Arc<AtomicBool>, capacity: usize) {
    let mut next_id: ClientId = 0;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = next_id;
                next_id += 1;
                let events = events.clone();
                let stop = stop.clone();
                std::thread::spawn(move || {
                    if let Err(e) = client_loop(id, stream, events.clone(), stop, capacity) {
                        log::debug!("client {id}: {e}");
                    }
                    let _ = events.send(Event::Disconnect(id));
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn client_loop(
    id: ClientId,
    stream: TcpStream,
    events: Sender<Event>,
    stop: Arc<AtomicBool>,
    capacity: usize,
) -> Result<(), Box<dyn std::error::Error>> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    stream.set_write_timeout(Some(Duration::from_secs(1)))?;
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream)?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?;
    let (tx, rx): (Sender<Vec<u8>>, Receiver<Vec<u8>>) = bounded(capacity);
    events.send(Event::Connect(id, tx))?;
    while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Binary(b)) => events.send(Event::Input(id, b.to_vec()))?,
            Ok(Message::Text(t)) => events.send(Event::Input(id, t.as_bytes().to_vec()))?,
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(e.into()),
        }
        loop {
            match rx.try_recv() {
                Ok(frame) => ws.write(Message::binary(frame))?,
                Err(crossbeam_channel::TryRecvError::Empty) => break,
                // the simulation dropped this client
                Err(crossbeam_channel::TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    return Ok(());
                }
            }
        }
        match ws.flush() {
            Ok(()) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(())
}

fn sim_loop(
    mut session: Session,
    events: Receiver<Event>,
    stop: Arc<AtomicBool>,
    stats: Arc<ServerStats>,
    max_steps: Option<u64>,
) -> Result<Session, ServerError> {
    let period = Duration::from_secs_f64(1.0 / session.config().decision_rate.max(1e-3));
    let mut outboxes: BTreeMap<ClientId, Sender<Vec<u8>>> = BTreeMap::new();
    let mut next = Instant::now();
    let mut steps = 0u64;
    while !stop.load(Ordering::SeqCst) && max_steps.is_none_or(|m| steps < m) {
        let mut out = Vec::new();
        while let Ok(ev) = events.try_recv() {
            match ev {
                Event::Connect(id, tx) => {
                    outboxes.insert(id, tx);
                    out.extend(session.connect_as(id).1);
                    stats.connected.fetch_add(1, Ordering::SeqCst);
                }
                Event::Input(id, bytes) => {
                    if outboxes.contains_key(&id) {
                        out.extend(session.handle_bytes(id, &bytes));
                    }
                }
                Event::Disconnect(id) => {
                    if outboxes.remove(&id).is_some() {
                        session.disconnect(id);
                    }
                }
            }
        }
        out.extend(session.step()?);
        deliver(&mut session, &mut outboxes, out, &stats);
        steps += 1;
        stats.steps.store(steps, Ordering::SeqCst);
        next += period;
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        } else {
            next = now;
        }
    }
    Ok(session)
}

fn deliver(session: &mut Session, outboxes: &mut BTreeMap<ClientId, Sender<Vec<u8>>>, out: Vec<Outgoing>, stats: &ServerStats) {
    for o in out {
        let Some(tx) = outboxes.get(&o.to) else {
            continue;
        };
        match tx.try_send(encode(&o.envelope)) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                log::info!("dropping client {}: send queue full or closed", o.to);
                outboxes.remove(&o.to);
                session.disconnect(o.to);
                stats.dropped_slow.fetch_add(1, Ordering::SeqCst);
            }
        }
    }
}
