//! Wire format: JSON control messages and a little-endian binary frame.

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMessage {
    Assign { vertex: u32, target: [f32; 3] },
    Move { vertex: u32, target: [f32; 3] },
    Release { vertex: u32, target: Option<[f32; 3]> },
    Ping {},
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client messages serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceTopology {
    /// Mesh vertex id of each surface vertex, in frame order.
    pub vertices: Vec<u32>,
    /// Triangles indexing into `vertices`.
    pub triangles: Vec<[u32; 3]>,
    /// Rest positions, `3 · vertices.len()` floats.
    pub positions: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Init {
        protocol: u32,
        surface: SurfaceTopology,
        labels: Vec<String>,
        modes: u32,
        frame_rate: f64,
    },
    Ack {
        event: String,
        vertex: u32,
        /// First frame that reflects the event.
        frame: u64,
    },
    Pong {
        frame: u64,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("malformed server message: {e}"))
    }
}

/// One published simulation frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSnapshot {
    pub id: u64,
    pub component: u16,
    pub z: Vec<f32>,
    /// Deformed surface positions, xyz interleaved.
    pub positions: Vec<f32>,
}

const FRAME_HEADER: usize = 8 + 2;

impl FrameSnapshot {
    /// `id: u64 | component: u16 | z: m × f32 | positions: 3·n_surface × f32`
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER + 4 * (self.z.len() + self.positions.len()));
        out.extend_from_slice(&self.id.to_le_bytes());
        out.extend_from_slice(&self.component.to_le_bytes());
        for x in self.z.iter().chain(&self.positions) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Inverse of [`encode`](Self::encode); the split between `z` and the
    /// positions needs `m`, which clients learn from `init`.
    pub fn decode(bytes: &[u8], m: usize) -> Result<Self, String> {
        if bytes.len() < FRAME_HEADER + 4 * m || (bytes.len() - FRAME_HEADER - 4 * m) % 12 != 0 {
            return Err(format!("frame of {} bytes does not fit {m} modes", bytes.len()));
        }
        let id = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        let component = u16::from_le_bytes(bytes[8..10].try_into().expect("2 bytes"));
        let floats: Vec<f32> = bytes[FRAME_HEADER..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self {
            id,
            component,
            z: floats[..m].to_vec(),
            positions: floats[m..].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        let m = ClientMessage::parse(r#"{"type":"assign","vertex":7,"target":[0.5,1,2]}"#).unwrap();
        assert_eq!(m, ClientMessage::Assign { vertex: 7, target: [0.5, 1.0, 2.0] });
        assert_eq!(ClientMessage::parse(r#"{"type":"ping"}"#).unwrap(), ClientMessage::Ping {});
        let r = ClientMessage::parse(r#"{"type":"release","vertex":7}"#).unwrap();
        assert_eq!(r, ClientMessage::Release { vertex: 7, target: None });
        for bad in [
            "not json",
            r#"{"type":"spin","vertex":1}"#,
            r#"{"type":"move","vertex":-1,"target":[0,0,0]}"#,
            r#"{"type":"move","vertex":1,"target":[0,0]}"#,
            r#"{"type":"move","vertex":1}"#,
            r#"{"type":"ping","extra":1}"#,
        ] {
            assert!(ClientMessage::parse(bad).is_err(), "{bad}");
        }
        let m = ClientMessage::Move { vertex: 3, target: [1.0, -2.0, 0.25] };
        assert_eq!(ClientMessage::parse(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn server_messages_are_tagged() {
        let text = ServerMessage::Error { message: "x".into() }.to_json();
        assert_eq!(text, r#"{"type":"error","message":"x"}"#);
        let ack = ServerMessage::Ack { event: "move".into(), vertex: 2, frame: 9 };
        assert_eq!(ServerMessage::parse(&ack.to_json()).unwrap(), ack);
    }

    #[test]
    fn frame_layout() {
        let f = FrameSnapshot {
            id: 0x0102_0304_0506_0708,
            component: 3,
            z: vec![1.5, -2.0],
            positions: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        };
        let bytes = f.encode();
        assert_eq!(bytes.len(), 10 + 4 * 8);
        assert_eq!(&bytes[..8], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(&bytes[8..10], &[3, 0]);
        assert_eq!(&bytes[10..14], &1.5f32.to_le_bytes());
        assert_eq!(FrameSnapshot::decode(&bytes, 2).unwrap(), f);
        assert!(FrameSnapshot::decode(&bytes, 3).is_err());
        assert!(FrameSnapshot::decode(&bytes[..5], 0).is_err());
    }
}
