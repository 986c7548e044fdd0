//! Messages between the session service and an operator client.
//!
//! Every message is one frame: a 4-byte big-endian payload length followed
//! by that many bytes of UTF-8 JSON. Each JSON object carries its message
//! name in the `type` field.

use std::io::{self, Read, Write};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use verti_core::pgm;
use verti_core::vehicle::{Action, DepthImage, VehicleState};

use crate::HarnessError;

/// Frames above this size are rejected without being read.
pub const MAX_FRAME: usize = 16 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMsg {
    /// Respawn at the start pose with the clock at zero.
    Reset,
    /// New held command.
    Cmd { v: f64, omega: f64, d_front: bool, d_rear: bool, low_gear: bool },
    /// Start (`true`) or stop (`false`) recording.
    Record { on: bool },
}

impl ClientMsg {
    pub fn cmd(a: &Action) -> Self {
        Self::Cmd { v: a.v, omega: a.omega, d_front: a.d.0, d_rear: a.d.1, low_gear: a.s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMsg {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundSpeedMsg {
    pub dx: f64,
    pub dy: f64,
    pub z_clearance: f64,
    pub flag_speed: bool,
    pub flag_z: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMsg {
    pub t: f64,
    pub pose: PoseMsg,
    pub wheel_speeds: [f64; 4],
    pub ground_speed: GroundSpeedMsg,
    pub contacts: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fsm: Option<String>,
    pub camera_tilt: f64,
    pub status: String,
    pub recording: bool,
}

impl StateMsg {
    pub fn from_state(s: &VehicleState, recording: bool) -> Self {
        let p = s.pose;
        let g = s.ground_speed;
        Self {
            t: s.t,
            pose: PoseMsg { x: p.x, y: p.y, z: p.z, roll: p.roll, pitch: p.pitch, yaw: p.yaw },
            wheel_speeds: s.wheel_rim_speed,
            ground_speed: GroundSpeedMsg {
                dx: g.dx,
                dy: g.dy,
                z_clearance: g.z_clearance,
                flag_speed: g.flag_speed,
                flag_z: g.flag_z,
            },
            contacts: s.wheel_contact.clone(),
            fsm: None,
            camera_tilt: s.camera_tilt,
            status: format!("{:?}", s.status),
            recording,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    State(StateMsg),
    /// Row-major depth in whole millimeters, each value 16-bit big-endian,
    /// base64 encoded.
    Depth { width: usize, height: usize, data: String },
    /// `of` names the acknowledged message type.
    Ack {
        of: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    Err { message: String },
}

impl ServerMsg {
    pub fn depth(img: &DepthImage) -> Self {
        let mut bytes = Vec::with_capacity(img.data.len() * 2);
        for d in &img.data {
            bytes.extend_from_slice(&pgm::meters_to_mm(*d).to_be_bytes());
        }
        Self::Depth { width: img.width, height: img.height, data: base64::engine::general_purpose::STANDARD.encode(bytes) }
    }

    pub fn ack(of: &str, detail: Option<String>) -> Self {
        Self::Ack { of: of.into(), detail }
    }
}

/// Decode the payload of a depth message into millimeters.
pub fn decode_depth(width: usize, height: usize, data: &str) -> Result<Vec<u16>, HarnessError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(data)
        .map_err(|e| HarnessError::Protocol(format!("depth payload: {e}")))?;
    if bytes.len() != 2 * width * height {
        return Err(HarnessError::Protocol(format!(
            "depth payload has {} bytes for {width}x{height}",
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect())
}

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Next frame, or `None` at a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {n} bytes exceeds the limit")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

pub fn send<T: Serialize>(w: &mut impl Write, msg: &T) -> io::Result<()> {
    let payload = serde_json::to_vec(msg).map_err(io::Error::other)?;
    write_frame(w, &payload)
}

pub fn parse_client(payload: &[u8]) -> Result<ClientMsg, HarnessError> {
    serde_json::from_slice(payload).map_err(|e| HarnessError::Protocol(e.to_string()))
}

pub fn parse_server(payload: &[u8]) -> Result<ServerMsg, HarnessError> {
    serde_json::from_slice(payload).map_err(|e| HarnessError::Protocol(e.to_string()))
}
