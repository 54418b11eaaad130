//! Length-prefixed frames exchanged with plugin processes.
//!
//! ```text
//! u32 LE payload length | u8 frame type | payload
//! ```

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{read_archive, read_archive_prefix, write_archive, TensorArchive};

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_FRAME_LEN: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Hello = 1,
    Run = 2,
    Result = 3,
    Error = 4,
    Ping = 5,
    Bye = 6,
}

impl FrameType {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            1 => FrameType::Hello,
            2 => FrameType::Run,
            3 => FrameType::Result,
            4 => FrameType::Error,
            5 => FrameType::Ping,
            6 => FrameType::Bye,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameType, payload: Vec<u8>) -> Self {
        Frame { kind, payload }
    }

    pub fn empty(kind: FrameType) -> Self {
        Frame::new(kind, Vec::new())
    }

    pub fn text(kind: FrameType, text: &str) -> Self {
        Frame::new(kind, text.as_bytes().to_vec())
    }

    pub fn payload_text(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("stream closed")]
    Closed,
    #[error("stream ended inside a frame")]
    Truncated,
    #[error("unknown frame type {0}")]
    UnknownType(u8),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad payload: {0}")]
    Payload(String),
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<(), FrameError> {
    if frame.payload.len() > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(frame.payload.len()));
    }
    let mut head = [0u8; 5];
    head[..4].copy_from_slice(&(frame.payload.len() as u32).to_le_bytes());
    head[4] = frame.kind as u8;
    w.write_all(&head)?;
    w.write_all(&frame.payload)?;
    w.flush()?;
    Ok(())
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> Result<usize, io::Error> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

/// Reads one frame; `Closed` on a clean end of stream between frames.
pub fn read_frame(r: &mut impl Read) -> Result<Frame, FrameError> {
    let mut head = [0u8; 5];
    match read_full(r, &mut head)? {
        0 => return Err(FrameError::Closed),
        5 => {}
        _ => return Err(FrameError::Truncated),
    }
    let len = u32::from_le_bytes(head[..4].try_into().expect("4 bytes")) as usize;
    let kind = FrameType::from_u8(head[4]).ok_or(FrameError::UnknownType(head[4]))?;
    if len > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(len));
    }
    let mut payload = vec![0u8; len];
    if read_full(r, &mut payload)? != len {
        return Err(FrameError::Truncated);
    }
    Ok(Frame { kind, payload })
}

/// Host → plugin HELLO payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostHello {
    pub protocol: u32,
    pub solution: String,
    pub entry_point: String,
    /// Absolute path of the staged entry file.
    pub file: String,
    pub symbol: String,
}

/// Plugin → host HELLO payload.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PluginHello {
    #[serde(default)]
    pub runtime: BTreeMap<String, String>,
}

/// JSON trailer following the input archive in a RUN payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTrailer {
    pub entry_point: String,
    pub axes: BTreeMap<String, i64>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

pub fn encode_run(inputs: &TensorArchive, trailer: &RunTrailer) -> Vec<u8> {
    let mut bytes = write_archive(inputs);
    bytes.extend(serde_json::to_vec(trailer).expect("trailer serializes"));
    bytes
}

pub fn decode_run(payload: &[u8]) -> Result<(TensorArchive, RunTrailer), FrameError> {
    let (archive, used) = read_archive_prefix(payload).map_err(|e| FrameError::Payload(e.to_string()))?;
    let trailer = serde_json::from_slice(&payload[used..]).map_err(|e| FrameError::Payload(e.to_string()))?;
    Ok((archive, trailer))
}

pub fn decode_result(payload: &[u8]) -> Result<TensorArchive, FrameError> {
    read_archive(payload).map_err(|e| FrameError::Payload(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{DType, Tensor};

    #[test]
    fn frame_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &Frame::text(FrameType::Error, "bad")).unwrap();
        write_frame(&mut buf, &Frame::empty(FrameType::Bye)).unwrap();
        assert_eq!(&buf[..5], &[3, 0, 0, 0, 4]);
        let mut r = buf.as_slice();
        assert_eq!(read_frame(&mut r).unwrap().payload_text(), "bad");
        assert_eq!(read_frame(&mut r).unwrap().kind, FrameType::Bye);
        assert!(matches!(read_frame(&mut r), Err(FrameError::Closed)));
    }

    #[test]
    fn malformed_frames() {
        assert!(matches!(read_frame(&mut &[1u8, 0, 0][..]), Err(FrameError::Truncated)));
        assert!(matches!(read_frame(&mut &[0u8, 0, 0, 0, 9][..]), Err(FrameError::UnknownType(9))));
        assert!(matches!(read_frame(&mut &[4u8, 0, 0, 0, 2, 1][..]), Err(FrameError::Truncated)));
        assert!(matches!(
            read_frame(&mut &[0xff, 0xff, 0xff, 0x7f, 2][..]),
            Err(FrameError::TooLarge(_))
        ));
    }

    #[test]
    fn run_payload_round_trip() {
        let mut a = TensorArchive::new();
        a.insert("x", Tensor::from_f32(DType::F16, vec![2], vec![1.0, 2.0]).unwrap());
        let t = RunTrailer {
            entry_point: "k.json::gemm".into(),
            axes: [("M".to_string(), 2)].into(),
            outputs: vec!["C".into()],
            seed: 7,
        };
        let (a2, t2) = decode_run(&encode_run(&a, &t)).unwrap();
        assert!(a.bitwise_eq(&a2));
        assert_eq!(t, t2);
    }
}
