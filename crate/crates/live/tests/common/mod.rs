#![allow(dead_code)]

use std::net::TcpStream;
use std::time::{Duration, Instant};

use forcedual::fem::MaterialParams;
use forcedual::mesh::{shapes, TetMesh, Vec3};
use forcedual::mixture::{HysteresisSelector, MixtureModel};
use forcedual::operators::{Regularization, SystemOperators};
use forcedual::priors::{handle_prior, HandleSet};
use forcedual::sim::StepSettings;
use forcedual::subspace::{build_lowrank, lma_subspace, BuildSettings};
use forcedual_live::{serve, ClientMessage, FrameSnapshot, Scene, ServerMessage, ServiceConfig, ServiceHandle, Session};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

fn ops(mesh: &TetMesh, pins: &[usize]) -> SystemOperators {
    SystemOperators::assemble(mesh, &MaterialParams::uniform(1e5, 0.3, 1000.0), pins, Regularization::Auto).unwrap()
}

pub fn bar_scene(cells: [usize; 3]) -> Scene {
    let mesh = shapes::bar(cells, [0.8, 0.2, 0.1]);
    let pins = mesh.select_vertices(|p| p.x == 0.0);
    let ops = ops(&mesh, &pins);
    let sub = lma_subspace(&ops, 6, &BuildSettings::default()).unwrap();
    Scene {
        mesh,
        ops,
        subspaces: vec![sub],
        mixture: None,
        labels: vec!["lma".into()],
        hysteresis: HysteresisSelector::default(),
        step: StepSettings { damping_mass: 2.0, ..StepSettings::default() },
        handle_strength: 50.0,
        base_load: None,
    }
}

/// Bar clamped in the middle with one handle prior per end.
pub fn two_region_scene() -> Scene {
    let mesh = shapes::bar([10, 2, 1], [1.0, 0.2, 0.1]);
    let pins = mesh.select_vertices(|p| (p.x - 0.5).abs() < 1e-9);
    let ops = ops(&mesh, &pins);
    let priors: Vec<_> = [
        mesh.select_vertices(|p| p.x <= 0.1 + 1e-9),
        mesh.select_vertices(|p| p.x >= 0.9 - 1e-9),
    ]
    .into_iter()
    .map(|vs| handle_prior(&ops, &HandleSet::new(vs, 50.0), None, None).unwrap())
    .collect();
    let subs = priors.iter().map(|p| build_lowrank(&ops, p, 6, &BuildSettings::default()).unwrap()).collect();
    Scene {
        mesh,
        ops,
        subspaces: subs,
        mixture: Some(MixtureModel::new(priors, vec![0.5, 0.5]).unwrap()),
        labels: vec!["left".into(), "right".into()],
        hysteresis: HysteresisSelector::new(2.0, 3, true),
        step: StepSettings { damping_mass: 2.0, ..StepSettings::default() },
        handle_strength: 50.0,
        base_load: None,
    }
}

pub fn start(scene: Scene) -> ServiceHandle {
    let config = ServiceConfig { bind: "127.0.0.1:0".into(), ..ServiceConfig::default() };
    serve(Session::new(scene).unwrap(), config).unwrap()
}

pub enum Incoming {
    Control(ServerMessage),
    Frame(FrameSnapshot),
}

pub struct TestClient {
    pub ws: WebSocket<MaybeTlsStream<TcpStream>>,
    pub modes: usize,
    pub init: ServerMessage,
}

impl TestClient {
    pub fn connect(handle: &ServiceHandle) -> Self {
        let (mut ws, _) = tungstenite::connect(format!("ws://{}", handle.local_addr())).unwrap();
        if let MaybeTlsStream::Plain(s) = ws.get_mut() {
            s.set_read_timeout(Some(Duration::from_millis(200))).unwrap();
        }
        let mut client = Self { ws, modes: 0, init: ServerMessage::Error { message: String::new() } };
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            assert!(Instant::now() < deadline, "no init message");
            if let Ok(Message::Text(t)) = client.ws.read() {
                let msg = ServerMessage::parse(t.as_str()).unwrap();
                let ServerMessage::Init { modes, .. } = &msg else { panic!("first message must be init, got {msg:?}") };
                client.modes = *modes as usize;
                client.init = msg;
                return client;
            }
        }
    }

    /// Connects with a tiny receive window and never reads past `init`.
    pub fn connect_throttled(handle: &ServiceHandle) -> WebSocket<TcpStream> {
        let addr = handle.local_addr();
        let socket = socket2::Socket::new(socket2::Domain::IPV4, socket2::Type::STREAM, None).unwrap();
        socket.set_recv_buffer_size(2048).unwrap();
        socket.connect(&addr.into()).unwrap();
        let (ws, _) = tungstenite::client(format!("ws://{addr}"), TcpStream::from(socket)).unwrap();
        ws
    }

    pub fn send(&mut self, msg: &ClientMessage) {
        self.ws.send(Message::text(msg.to_json())).unwrap();
    }

    pub fn send_raw(&mut self, text: &str) {
        self.ws.send(Message::text(text.to_string())).unwrap();
    }

    pub fn next(&mut self, timeout: Duration) -> Option<Incoming> {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            match self.ws.read() {
                Ok(Message::Text(t)) => return Some(Incoming::Control(ServerMessage::parse(t.as_str()).unwrap())),
                Ok(Message::Binary(b)) => return Some(Incoming::Frame(FrameSnapshot::decode(&b, self.modes).unwrap())),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                Err(e) => panic!("read failed: {e}"),
            }
        }
        None
    }

    /// Reads until a control message arrives, collecting frames seen on the way.
    pub fn control(&mut self, frames: &mut Vec<FrameSnapshot>) -> ServerMessage {
        loop {
            match self.next(Duration::from_secs(10)).expect("timed out waiting for a reply") {
                Incoming::Control(m) => return m,
                Incoming::Frame(f) => frames.push(f),
            }
        }
    }

    pub fn frame(&mut self) -> FrameSnapshot {
        loop {
            match self.next(Duration::from_secs(10)).expect("timed out waiting for a frame") {
                Incoming::Frame(f) => return f,
                Incoming::Control(m) => panic!("unexpected control message {m:?}"),
            }
        }
    }
}

pub fn surface_index(init: &ServerMessage, vertex: usize) -> usize {
    let ServerMessage::Init { surface, .. } = init else { unreachable!() };
    surface.vertices.iter().position(|&v| v as usize == vertex).expect("surface vertex")
}

pub fn position(mesh_point: Vec3) -> [f32; 3] {
    [mesh_point.x as f32, mesh_point.y as f32, mesh_point.z as f32]
}
