//! Real-time session host: a fixed-rate reduced simulation driven by
//! handle events from WebSocket clients, streaming binary frames back.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, FrameSnapshot, ServerMessage, PROTOCOL_VERSION};
pub use server::{serve, ServiceConfig, ServiceHandle, ServiceStats};
pub use session::{Event, Scene, Session, SessionError};
