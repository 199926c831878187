//! Line-delimited JSON protocol between the harness and external plug-ins.
//!
//! One UTF-8 JSON object per line in each direction:
//!
//! | host -> plug-in                                    | plug-in -> host                                      |
//! |----------------------------------------------------|------------------------------------------------------|
//! | `{"cmd":"init","image":"<path>","box":[x,y,w,h]}`  | `{"ok":true}`                                        |
//! | `{"cmd":"track","image":"<path>"}`                 | `{"box":[x,y,w,h],"score":s}`                        |
//! | `{"cmd":"detect","image":"<path>"}`                | `{"detections":[{"box":[x,y,w,h],"score":s}, ...]}` |
//! | `{"cmd":"shutdown"}`                               | process exits with status 0                          |
//!
//! A plug-in that cannot serve a request answers `{"error":"<message>"}`.

use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::plugins::{Detector, PluginError, ScoredBox, Tracker};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase", deny_unknown_fields)]
pub enum Request {
    Init {
        image: PathBuf,
        #[serde(rename = "box")]
        bbox: BBox,
    },
    Track {
        image: PathBuf,
    },
    Detect {
        image: PathBuf,
    },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitReply {
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackReply {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectReply {
    pub detections: Vec<ScoredBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorReply {
    pub error: String,
}

pub fn encode_line<T: Serialize>(msg: &T) -> String {
    let mut s = serde_json::to_string(msg).expect("protocol messages always serialize");
    s.push('\n');
    s
}

/// Host side of one plug-in session over an arbitrary byte stream.
pub struct ProtocolClient<R, W> {
    name: String,
    reader: R,
    writer: W,
    diagnostics: Box<dyn Fn() -> String + Send>,
}

impl<R: BufRead, W: Write> ProtocolClient<R, W> {
    pub fn new(name: impl Into<String>, reader: R, writer: W) -> Self {
        ProtocolClient { name: name.into(), reader, writer, diagnostics: Box::new(String::new) }
    }

    /// Attaches a source of extra context (e.g. captured stderr) for errors.
    pub fn with_diagnostics(mut self, f: impl Fn() -> String + Send + 'static) -> Self {
        self.diagnostics = Box::new(f);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn protocol_error(&self, msg: impl Into<String>) -> PluginError {
        PluginError::Protocol { plugin: self.name.clone(), msg: msg.into(), diagnostics: (self.diagnostics)() }
    }

    pub fn send(&mut self, req: &Request) -> Result<(), PluginError> {
        let line = encode_line(req);
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| self.protocol_error(format!("write failed: {e}")))
    }

    fn roundtrip<T: for<'de> Deserialize<'de>>(&mut self, req: &Request) -> Result<T, PluginError> {
        self.send(req)?;
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => return Err(self.protocol_error("plug-in closed its output")),
            Ok(_) => {}
            Err(e) => return Err(self.protocol_error(format!("read failed: {e}"))),
        }
        let line = line.trim_end_matches(['\n', '\r']);
        match serde_json::from_str::<T>(line) {
            Ok(v) => Ok(v),
            Err(parse_err) => match serde_json::from_str::<ErrorReply>(line) {
                Ok(e) => Err(PluginError::Remote { plugin: self.name.clone(), msg: e.error }),
                Err(_) => Err(self.protocol_error(format!("malformed reply {line:?}: {parse_err}"))),
            },
        }
    }

    pub fn init(&mut self, frame: &Path, gt: BBox) -> Result<(), PluginError> {
        let reply: InitReply = self.roundtrip(&Request::Init { image: frame.to_path_buf(), bbox: gt })?;
        if !reply.ok {
            return Err(self.protocol_error("init answered ok=false"));
        }
        Ok(())
    }

    pub fn track(&mut self, frame: &Path) -> Result<ScoredBox, PluginError> {
        let reply: TrackReply = self.roundtrip(&Request::Track { image: frame.to_path_buf() })?;
        ScoredBox::new(reply.bbox, reply.score)
            .validate()
            .map_err(|e| self.protocol_error(format!("invalid track reply: {e}")))
    }

    pub fn detect(&mut self, frame: &Path) -> Result<Vec<ScoredBox>, PluginError> {
        let reply: DetectReply = self.roundtrip(&Request::Detect { image: frame.to_path_buf() })?;
        reply
            .detections
            .into_iter()
            .map(|d| d.validate().map_err(|e| self.protocol_error(format!("invalid detection: {e}"))))
            .collect()
    }

    pub fn shutdown(&mut self) -> Result<(), PluginError> {
        self.send(&Request::Shutdown)
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("input closed before shutdown")]
    BrokenStream,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Plug-in side: answers requests from `input` until `shutdown`.
///
/// Malformed requests and plug-in failures produce an error reply and the
/// loop continues. End of input without `shutdown` is an error.
pub fn serve<R: BufRead, W: Write>(
    mut input: R,
    mut output: W,
    mut tracker: Option<&mut dyn Tracker>,
    mut detector: Option<&mut dyn Detector>,
) -> Result<(), ServeError> {
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(ServeError::BrokenStream);
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(text) {
            Err(e) => encode_line(&ErrorReply { error: format!("malformed request: {e}") }),
            Ok(Request::Shutdown) => return Ok(()),
            Ok(Request::Init { image, bbox }) => match tracker.as_deref_mut() {
                None => unsupported("init"),
                Some(t) => reply_or_error(t.init(&image, bbox).map(|_| InitReply { ok: true })),
            },
            Ok(Request::Track { image }) => match tracker.as_deref_mut() {
                None => unsupported("track"),
                Some(t) => reply_or_error(
                    t.track(&image).and_then(ScoredBox::validate).map(|s| TrackReply { bbox: s.bbox, score: s.score }),
                ),
            },
            Ok(Request::Detect { image }) => match detector.as_deref_mut() {
                None => unsupported("detect"),
                Some(d) => reply_or_error(d.detect(&image).and_then(|ds| {
                    let detections = ds.into_iter().map(ScoredBox::validate).collect::<Result<_, _>>()?;
                    Ok(DetectReply { detections })
                })),
            },
        };
        output.write_all(reply.as_bytes())?;
        output.flush()?;
    }
}

fn unsupported(cmd: &str) -> String {
    encode_line(&ErrorReply { error: format!("{cmd} is not supported by this plug-in") })
}

fn reply_or_error<T: Serialize>(r: Result<T, PluginError>) -> String {
    match r {
        Ok(v) => encode_line(&v),
        Err(e) => encode_line(&ErrorReply { error: e.to_string() }),
    }
}
