//! Fixed-rate simulation loop plus one worker per WebSocket client. The
//! loop owns the session; workers only enqueue events and drain outboxes.

use std::collections::VecDeque;
use std::io::{self, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use forcedual::mesh::Vec3;
use tungstenite::{Message, WebSocket};

use crate::protocol::{ClientMessage, FrameSnapshot, ServerMessage, PROTOCOL_VERSION};
use crate::session::{Event, Session};

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: String,
    pub frame_rate: f64,
    /// Pending input events; the oldest are dropped beyond this.
    pub queue_capacity: usize,
    /// Control replies buffered per client before the oldest are dropped.
    pub client_backlog: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8765".into(),
            frame_rate: 60.0,
            queue_capacity: 1024,
            client_backlog: 64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServiceStats {
    pub frames: u64,
    /// Ticks skipped to catch up after overruns.
    pub skipped_ticks: u64,
    pub dropped_events: u64,
    /// Frames overwritten before a client could take them.
    pub dropped_frames: u64,
    pub clients: usize,
    /// Mean and standard deviation of recent step start intervals, seconds.
    pub interval_mean: f64,
    pub interval_std: f64,
}

type ClientId = u64;

#[derive(Default)]
struct Outbox {
    control: VecDeque<String>,
    frame: Option<Arc<Vec<u8>>>,
    closed: bool,
}

struct Client {
    id: ClientId,
    outbox: Mutex<Outbox>,
}

struct Shared {
    config: ServiceConfig,
    stop: AtomicBool,
    inputs: Mutex<VecDeque<(ClientId, ClientMessage)>>,
    clients: Mutex<Vec<Arc<Client>>>,
    latest: Mutex<Option<FrameSnapshot>>,
    init: String,
    dropped_events: AtomicU64,
    dropped_frames: AtomicU64,
    stats: Mutex<ServiceStats>,
}

impl Shared {
    fn enqueue(&self, client: ClientId, msg: ClientMessage) {
        let mut q = self.inputs.lock().expect("input queue");
        if q.len() >= self.config.queue_capacity {
            q.pop_front();
            self.dropped_events.fetch_add(1, Ordering::Relaxed);
        }
        q.push_back((client, msg));
    }

    fn reply(&self, client: ClientId, msg: &ServerMessage) {
        let clients = self.clients.lock().expect("client list");
        if let Some(c) = clients.iter().find(|c| c.id == client) {
            let mut out = c.outbox.lock().expect("outbox");
            if out.control.len() >= self.config.client_backlog {
                out.control.pop_front();
            }
            out.control.push_back(msg.to_json());
        }
    }

    fn publish(&self, frame: FrameSnapshot) {
        let bytes = Arc::new(frame.encode());
        for c in self.clients.lock().expect("client list").iter() {
            let mut out = c.outbox.lock().expect("outbox");
            if out.frame.replace(bytes.clone()).is_some() {
                self.dropped_frames.fetch_add(1, Ordering::Relaxed);
            }
        }
        *self.latest.lock().expect("latest frame") = Some(frame);
    }
}

/// Running service; dropping it stops the threads.
pub struct ServiceHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> ServiceStats {
        let mut s = self.shared.stats.lock().expect("stats").clone();
        s.dropped_events = self.shared.dropped_events.load(Ordering::Relaxed);
        s.dropped_frames = self.shared.dropped_frames.load(Ordering::Relaxed);
        s.clients = self.shared.clients.lock().expect("client list").len();
        s
    }

    pub fn latest_frame(&self) -> Option<FrameSnapshot> {
        self.shared.latest.lock().expect("latest frame").clone()
    }

    pub fn is_running(&self) -> bool {
        !self.shared.stop.load(Ordering::Relaxed)
    }

    /// Blocks until the loop stops (for example after a numerical failure).
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

/// Binds the socket and starts the simulation loop and the acceptor.
pub fn serve(session: Session, config: ServiceConfig) -> io::Result<ServiceHandle> {
    if !(config.frame_rate > 0.0 && config.frame_rate.is_finite()) {
        return Err(io::Error::new(ErrorKind::InvalidInput, "frame rate must be positive"));
    }
    let listener = TcpListener::bind(&config.bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let init = ServerMessage::Init {
        protocol: PROTOCOL_VERSION,
        surface: session.topology(),
        labels: session.labels().to_vec(),
        modes: session.modes() as u32,
        frame_rate: config.frame_rate,
    }
    .to_json();
    let shared = Arc::new(Shared {
        config,
        stop: AtomicBool::new(false),
        inputs: Mutex::new(VecDeque::new()),
        clients: Mutex::new(Vec::new()),
        latest: Mutex::new(None),
        init,
        dropped_events: AtomicU64::new(0),
        dropped_frames: AtomicU64::new(0),
        stats: Mutex::new(ServiceStats::default()),
    });
    let sim = {
        let shared = shared.clone();
        thread::Builder::new()
            .name("fd-sim".into())
            .spawn(move || simulation_loop(session, &shared))?
    };
    let acceptor = {
        let shared = shared.clone();
        thread::Builder::new()
            .name("fd-accept".into())
            .spawn(move || accept_loop(listener, &shared))?
    };
    log::info!("serving on ws://{addr}");
    Ok(ServiceHandle {
        addr,
        shared,
        threads: vec![sim, acceptor],
    })
}

fn to_event(msg: &ClientMessage) -> Option<Event> {
    let v = |t: &[f32; 3]| Vec3::new(t[0] as f64, t[1] as f64, t[2] as f64);
    match msg {
        ClientMessage::Assign { vertex, target } => Some(Event::Assign { vertex: *vertex, target: v(target) }),
        ClientMessage::Move { vertex, target } => Some(Event::Move { vertex: *vertex, target: v(target) }),
        ClientMessage::Release { vertex, .. } => Some(Event::Release { vertex: *vertex }),
        ClientMessage::Ping {} => None,
    }
}

const INTERVAL_WINDOW: usize = 240;

fn simulation_loop(mut session: Session, shared: &Shared) {
    let period = Duration::from_secs_f64(1.0 / shared.config.frame_rate);
    let mut deadline = Instant::now();
    let mut starts: VecDeque<Instant> = VecDeque::with_capacity(INTERVAL_WINDOW + 1);
    let mut skipped = 0u64;
    while !shared.stop.load(Ordering::Relaxed) {
        let now = Instant::now();
        if now < deadline {
            thread::sleep(deadline - now);
        }
        let start = Instant::now();
        // more than a whole period behind: drop the missed ticks
        if start > deadline + period {
            let behind = (start - deadline).as_secs_f64() / period.as_secs_f64();
            skipped += behind.floor() as u64;
            deadline = start;
        }
        deadline += period;

        let pending: Vec<_> = shared.inputs.lock().expect("input queue").drain(..).collect();
        for (client, msg) in pending {
            let reply = match to_event(&msg) {
                None => ServerMessage::Pong { frame: session.next_frame() },
                Some(event) => match session.handle_event(event) {
                    Ok(()) => ServerMessage::Ack {
                        event: event.name().into(),
                        vertex: event.vertex(),
                        frame: session.next_frame(),
                    },
                    Err(e) => ServerMessage::Error { message: e.to_string() },
                },
            };
            shared.reply(client, &reply);
        }
        match session.tick() {
            Ok(frame) => shared.publish(frame),
            Err(e) => {
                log::error!("simulation stopped: {e}");
                shared.stop.store(true, Ordering::Relaxed);
                break;
            }
        }

        starts.push_back(start);
        if starts.len() > INTERVAL_WINDOW {
            starts.pop_front();
        }
        let mut stats = shared.stats.lock().expect("stats");
        stats.frames += 1;
        stats.skipped_ticks = skipped;
        if starts.len() > 2 {
            let iv: Vec<f64> = starts.iter().zip(starts.iter().skip(1)).map(|(a, b)| (*b - *a).as_secs_f64()).collect();
            let mean = iv.iter().sum::<f64>() / iv.len() as f64;
            let var = iv.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / iv.len() as f64;
            stats.interval_mean = mean;
            stats.interval_std = var.sqrt();
        }
    }
    for c in shared.clients.lock().expect("client list").iter() {
        c.outbox.lock().expect("outbox").closed = true;
    }
}

fn accept_loop(listener: TcpListener, shared: &Arc<Shared>) {
    let mut next_id: ClientId = 1;
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !shared.stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let client = Arc::new(Client { id: next_id, outbox: Mutex::new(Outbox::default()) });
                next_id += 1;
                let shared = shared.clone();
                let spawned = thread::Builder::new()
                    .name(format!("fd-client-{}", client.id))
                    .spawn(move || {
                        if let Err(e) = client_worker(stream, client.clone(), &shared) {
                            log::info!("client {peer} dropped: {e}");
                        }
                        shared.clients.lock().expect("client list").retain(|c| c.id != client.id);
                    });
                match spawned {
                    Ok(h) => workers.push(h),
                    Err(e) => log::error!("could not start client worker: {e}"),
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::error!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
        workers.retain(|h| !h.is_finished());
    }
    for h in workers {
        let _ = h.join();
    }
}

fn would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

fn client_worker(stream: TcpStream, client: Arc<Client>, shared: &Shared) -> Result<(), String> {
    stream.set_nonblocking(false).map_err(|e| e.to_string())?;
    stream.set_nodelay(true).map_err(|e| e.to_string())?;
    stream.set_read_timeout(Some(Duration::from_secs(5))).map_err(|e| e.to_string())?;
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| e.to_string())?;
    ws.get_mut().set_nonblocking(true).map_err(|e| e.to_string())?;
    ws.send(Message::text(shared.init.clone())).map_err(|e| e.to_string())?;
    // only registered once init is out, so frames never precede it
    shared.clients.lock().expect("client list").push(client.clone());

    let mut blocked = false;
    loop {
        if shared.stop.load(Ordering::Relaxed) || client.outbox.lock().expect("outbox").closed {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        let mut idle = true;
        match ws.read() {
            Ok(Message::Text(text)) => {
                idle = false;
                match ClientMessage::parse(text.as_str()) {
                    Ok(msg) => shared.enqueue(client.id, msg),
                    Err(e) => {
                        let mut out = client.outbox.lock().expect("outbox");
                        out.control.push_back(ServerMessage::Error { message: e }.to_json());
                    }
                }
            }
            Ok(Message::Binary(_)) => {
                idle = false;
                let mut out = client.outbox.lock().expect("outbox");
                out.control.push_back(
                    ServerMessage::Error { message: "binary messages are not accepted".into() }.to_json(),
                );
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => idle = false,
            Err(e) if would_block(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.to_string()),
        }

        if blocked {
            match ws.flush() {
                Ok(()) => blocked = false,
                Err(e) if would_block(&e) => {}
                Err(e) => return Err(e.to_string()),
            }
        }
        if !blocked {
            let (control, frame) = {
                let mut out = client.outbox.lock().expect("outbox");
                (out.control.drain(..).collect::<Vec<_>>(), out.frame.take())
            };
            let mut queued = false;
            for text in control {
                ws.write(Message::text(text)).map_err(|e| e.to_string())?;
                queued = true;
            }
            if let Some(bytes) = frame {
                ws.write(Message::binary(bytes.as_ref().clone())).map_err(|e| e.to_string())?;
                queued = true;
            }
            if queued {
                idle = false;
                match ws.flush() {
                    Ok(()) => {}
                    Err(e) if would_block(&e) => blocked = true,
                    Err(e) => return Err(e.to_string()),
                }
            }
        }
        if idle {
            thread::sleep(Duration::from_millis(1));
        }
    }
}
