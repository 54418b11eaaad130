//! The plugin side of the frame protocol, plus built-in native kernels used
//! to exercise the engine without any other toolchain.

pub mod native;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::engine::{decode_run, read_frame, write_frame, Frame, FrameError, FrameType, HostHello, PluginHello, RunTrailer};
use crate::tensor::{write_archive, TensorArchive};

/// A kernel bound to one entry point.
pub trait Kernel {
    fn run(&mut self, inputs: TensorArchive, trailer: &RunTrailer) -> Result<TensorArchive, String>;
}

/// Exit codes: 0 after BYE, 1 when the host vanished, 2 on protocol desync.
pub fn serve<R: Read, W: Write>(
    mut input: R,
    mut output: W,
    runtime: BTreeMap<String, String>,
    bind: impl FnOnce(&HostHello) -> Result<Box<dyn Kernel>, String>,
) -> i32 {
    let hello = match read_frame(&mut input) {
        Ok(f) if f.kind == FrameType::Hello => f,
        _ => return 2,
    };
    let mut kernel = match serde_json::from_slice::<HostHello>(&hello.payload)
        .map_err(|e| format!("bad HELLO: {e}"))
        .and_then(|h| bind(&h))
    {
        Ok(k) => k,
        Err(e) => {
            let _ = write_frame(&mut output, &Frame::text(FrameType::Error, &e));
            return 0;
        }
    };
    let payload = serde_json::to_vec(&PluginHello { runtime }).expect("hello serializes");
    if write_frame(&mut output, &Frame::new(FrameType::Hello, payload)).is_err() {
        return 1;
    }
    loop {
        let frame = match read_frame(&mut input) {
            Ok(f) => f,
            Err(FrameError::Closed) => return 1,
            Err(_) => return 2,
        };
        let reply = match frame.kind {
            FrameType::Bye => return 0,
            FrameType::Ping => Frame::empty(FrameType::Ping),
            FrameType::Run => match decode_run(&frame.payload) {
                Ok((inputs, trailer)) => match kernel.run(inputs, &trailer) {
                    Ok(out) => Frame::new(FrameType::Result, write_archive(&out)),
                    Err(e) => Frame::text(FrameType::Error, &e),
                },
                Err(e) => Frame::text(FrameType::Error, &format!("bad RUN payload: {e}")),
            },
            _ => return 2,
        };
        if write_frame(&mut output, &reply).is_err() {
            return 1;
        }
    }
}
