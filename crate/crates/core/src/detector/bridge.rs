//! Client side of the detector bridge: newline-delimited JSON exchanged with an
//! external detector process over stdio or a local socket.
//!
//! ```text
//! request:  {"v":1,"id":3,"op":"detect","images":["a.png"],"class_filter":"person"}
//! response: {"v":1,"id":3,"detections":[[{"xmin":..,"ymin":..,"xmax":..,"ymax":..,"objectness":..,"class":"person"}]]}
//! error:    {"v":1,"id":3,"error":"message"}
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde_json::{json, Map, Value};
use thiserror::Error;

use super::{Capabilities, Detection, Detector, DetectorError, PERSON};
use crate::imaging::{write_png, BBox, ImageBuffer};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("detector bridge unavailable: {0}")]
    BridgeUnavailable(String),
    #[error("detector bridge protocol error: {0}")]
    ProtocolError(String),
    #[error("detector bridge speaks protocol version {got}, expected {PROTOCOL_VERSION}")]
    VersionMismatch { got: u64 },
    #[error("detector bridge reported an error: {0}")]
    Remote(String),
}

/// How to reach a bridge process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BridgeConfig {
    /// Shell command spawned with piped stdio.
    Command(String),
    /// Path of a listening Unix domain socket.
    Socket(PathBuf),
}

impl BridgeConfig {
    /// Parses `unix:PATH` as a socket, anything else as a shell command.
    pub fn parse(spec: &str) -> Self {
        match spec.strip_prefix("unix:") {
            Some(path) => Self::Socket(PathBuf::from(path)),
            None => Self::Command(spec.to_string()),
        }
    }
}

pub fn encode_request(id: u64, images: &[PathBuf]) -> String {
    json!({
        "v": PROTOCOL_VERSION,
        "id": id,
        "op": "detect",
        "images": images.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "class_filter": PERSON,
    })
    .to_string()
}

fn detection_json(d: &Detection) -> Value {
    json!({
        "xmin": d.bbox.xmin,
        "ymin": d.bbox.ymin,
        "xmax": d.bbox.xmax,
        "ymax": d.bbox.ymax,
        "objectness": d.objectness,
        "class": d.class_label,
    })
}

pub fn encode_response(id: i64, detections: &[Vec<Detection>]) -> String {
    let per_image: Vec<Value> = detections
        .iter()
        .map(|ds| Value::Array(ds.iter().map(detection_json).collect()))
        .collect();
    json!({"v": PROTOCOL_VERSION, "id": id, "detections": per_image}).to_string()
}

pub fn encode_error(id: i64, message: &str) -> String {
    json!({"v": PROTOCOL_VERSION, "id": id, "error": message}).to_string()
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str, ctx: &str) -> Result<&'a Value, BridgeError> {
    obj.get(name)
        .ok_or_else(|| BridgeError::ProtocolError(format!("{ctx}: missing field \"{name}\"")))
}

fn number(obj: &Map<String, Value>, name: &str, ctx: &str) -> Result<f64, BridgeError> {
    field(obj, name, ctx)?.as_f64().ok_or_else(|| {
        BridgeError::ProtocolError(format!("{ctx}: field \"{name}\" is not a number"))
    })
}

fn parse_detection(v: &Value, ctx: &str) -> Result<Detection, BridgeError> {
    let obj = v
        .as_object()
        .ok_or_else(|| BridgeError::ProtocolError(format!("{ctx}: detection is not an object")))?;
    let bbox = BBox {
        xmin: number(obj, "xmin", ctx)?,
        ymin: number(obj, "ymin", ctx)?,
        xmax: number(obj, "xmax", ctx)?,
        ymax: number(obj, "ymax", ctx)?,
    };
    let objectness = number(obj, "objectness", ctx)?;
    let class_label = field(obj, "class", ctx)?
        .as_str()
        .ok_or_else(|| {
            BridgeError::ProtocolError(format!("{ctx}: field \"class\" is not a string"))
        })?
        .to_string();
    if !bbox.is_valid() {
        return Err(BridgeError::ProtocolError(format!(
            "{ctx}: invalid box {bbox:?}"
        )));
    }
    if !(0.0..=1.0).contains(&objectness) {
        return Err(BridgeError::ProtocolError(format!(
            "{ctx}: objectness {objectness} outside [0, 1]"
        )));
    }
    Ok(Detection {
        bbox,
        objectness,
        class_label,
    })
}

/// Validates one reply line against the request it answers.
pub fn parse_response(
    line: &str,
    expected_id: u64,
    expected_images: usize,
) -> Result<Vec<Vec<Detection>>, BridgeError> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| BridgeError::ProtocolError(format!("reply is not valid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| BridgeError::ProtocolError("reply is not a JSON object".into()))?;
    let v = field(obj, "v", "reply")?
        .as_u64()
        .ok_or_else(|| BridgeError::ProtocolError("reply: field \"v\" is not an integer".into()))?;
    if v != PROTOCOL_VERSION {
        return Err(BridgeError::VersionMismatch { got: v });
    }
    let id = field(obj, "id", "reply")?.as_i64().ok_or_else(|| {
        BridgeError::ProtocolError("reply: field \"id\" is not an integer".into())
    })?;
    if let Some(err) = obj.get("error") {
        let msg = err
            .as_str()
            .map(str::to_string)
            .unwrap_or_else(|| err.to_string());
        return Err(BridgeError::Remote(msg));
    }
    if id != expected_id as i64 {
        return Err(BridgeError::ProtocolError(format!(
            "reply id {id} does not match request id {expected_id}"
        )));
    }
    let per_image = field(obj, "detections", "reply")?
        .as_array()
        .ok_or_else(|| {
            BridgeError::ProtocolError("reply: field \"detections\" is not an array".into())
        })?;
    if per_image.len() != expected_images {
        return Err(BridgeError::ProtocolError(format!(
            "reply carries {} detection lists for {} images",
            per_image.len(),
            expected_images
        )));
    }
    per_image
        .iter()
        .enumerate()
        .map(|(i, dets)| {
            let ctx = format!("image {i}");
            dets.as_array()
                .ok_or_else(|| {
                    BridgeError::ProtocolError(format!("{ctx}: detections are not an array"))
                })?
                .iter()
                .enumerate()
                .map(|(j, d)| parse_detection(d, &format!("image {i}, detection {j}")))
                .collect()
        })
        .collect()
}

/// One connection to a bridge; one request in flight at a time.
pub struct BridgeClient {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    next_id: u64,
}

impl BridgeClient {
    pub fn from_streams(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Self {
        Self {
            reader: Box::new(reader),
            writer: Box::new(writer),
            child: None,
            next_id: 1,
        }
    }

    pub fn connect(config: &BridgeConfig) -> Result<Self, BridgeError> {
        match config {
            BridgeConfig::Command(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| {
                        BridgeError::BridgeUnavailable(format!("spawning {cmd:?}: {e}"))
                    })?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let mut client = Self::from_streams(BufReader::new(stdout), stdin);
                client.child = Some(child);
                Ok(client)
            }
            #[cfg(unix)]
            BridgeConfig::Socket(path) => {
                let stream = std::os::unix::net::UnixStream::connect(path).map_err(|e| {
                    BridgeError::BridgeUnavailable(format!("connecting to {}: {e}", path.display()))
                })?;
                let read = stream
                    .try_clone()
                    .map_err(|e| BridgeError::BridgeUnavailable(e.to_string()))?;
                Ok(Self::from_streams(BufReader::new(read), stream))
            }
            #[cfg(not(unix))]
            BridgeConfig::Socket(path) => Err(BridgeError::BridgeUnavailable(format!(
                "socket bridges are unsupported on this platform ({})",
                path.display()
            ))),
        }
    }

    pub fn detect(&mut self, images: &[PathBuf]) -> Result<Vec<Vec<Detection>>, BridgeError> {
        let id = self.next_id;
        self.next_id += 1;
        let request = encode_request(id, images);
        writeln!(self.writer, "{request}")
            .and_then(|_| self.writer.flush())
            .map_err(|e| BridgeError::BridgeUnavailable(format!("sending request: {e}")))?;
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| BridgeError::BridgeUnavailable(format!("reading reply: {e}")))?;
        if n == 0 {
            return Err(BridgeError::BridgeUnavailable(
                "bridge closed the connection".into(),
            ));
        }
        parse_response(line.trim_end(), id, images.len())
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            // Closing stdin ends the bridge's request loop.
            self.writer = Box::new(std::io::sink());
            let _ = child.wait();
        }
    }
}

/// Sends one request naming `images` to a freshly connected bridge.
pub fn bridge_detect(
    images: &[PathBuf],
    config: &BridgeConfig,
) -> Result<Vec<Vec<Detection>>, BridgeError> {
    BridgeClient::connect(config)?.detect(images)
}

static SCRATCH_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Evaluation-only detector backed by a bridge. Images are written as PNG into
/// a private scratch directory and referenced by path.
pub struct BridgeDetector {
    client: Mutex<BridgeClient>,
    scratch: PathBuf,
}

impl BridgeDetector {
    pub fn connect(config: &BridgeConfig) -> Result<Self, BridgeError> {
        let scratch = std::env::temp_dir().join(format!(
            "patchview-bridge-{}-{}",
            std::process::id(),
            SCRATCH_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::create_dir_all(&scratch)
            .map_err(|e| BridgeError::BridgeUnavailable(format!("scratch dir: {e}")))?;
        Ok(Self {
            client: Mutex::new(BridgeClient::connect(config)?),
            scratch,
        })
    }

    /// Runs detection on images already on disk.
    pub fn detect_paths(&self, images: &[PathBuf]) -> Result<Vec<Vec<Detection>>, BridgeError> {
        self.client
            .lock()
            .map_err(|_| BridgeError::BridgeUnavailable("client lock poisoned".into()))?
            .detect(images)
    }

    /// Writes `images` under the given names and detects on them in one request.
    pub fn detect_named(
        &self,
        images: &[(&str, &ImageBuffer)],
    ) -> Result<Vec<Vec<Detection>>, DetectorError> {
        let mut paths = Vec::with_capacity(images.len());
        for (name, img) in images {
            let path = self.scratch.join(format!("{name}.png"));
            write_png(&path, img).map_err(|e| {
                BridgeError::BridgeUnavailable(format!("writing {}: {e}", path.display()))
            })?;
            paths.push(path);
        }
        Ok(self.detect_paths(&paths)?)
    }
}

impl Drop for BridgeDetector {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.scratch);
    }
}

static IMAGE_COUNTER: AtomicU64 = AtomicU64::new(0);

impl Detector for BridgeDetector {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            eval: true,
            grad: false,
        }
    }

    fn detect_batch(&self, images: &[&ImageBuffer]) -> Result<Vec<Vec<Detection>>, DetectorError> {
        let names: Vec<String> = images
            .iter()
            .map(|_| format!("img{}", IMAGE_COUNTER.fetch_add(1, Ordering::Relaxed)))
            .collect();
        let named: Vec<(&str, &ImageBuffer)> = names
            .iter()
            .map(String::as_str)
            .zip(images.iter().copied())
            .collect();
        self.detect_named(&named)
    }

    fn detect_batch_named(
        &self,
        names: &[String],
        images: &[&ImageBuffer],
    ) -> Result<Vec<Vec<Detection>>, DetectorError> {
        let named: Vec<(&str, &ImageBuffer)> = names
            .iter()
            .map(String::as_str)
            .zip(images.iter().copied())
            .collect();
        self.detect_named(&named)
    }
}

/// Canned replies for a stub bridge: image file stem → detection objects,
/// passed through verbatim. Unknown images get an empty list.
#[derive(Debug, Clone, Default)]
pub struct CannedReplies {
    pub by_stem: BTreeMap<String, Vec<Value>>,
}

impl CannedReplies {
    pub fn parse(text: &str) -> Result<Self, BridgeError> {
        let by_stem: BTreeMap<String, Vec<Value>> = serde_json::from_str(text)
            .map_err(|e| BridgeError::ProtocolError(format!("canned replies: {e}")))?;
        Ok(Self { by_stem })
    }

    fn lookup(&self, image: &str) -> Vec<Value> {
        let stem = Path::new(image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.by_stem.get(&stem).cloned().unwrap_or_default()
    }
}

fn stub_reply(line: &str, canned: &CannedReplies) -> String {
    let Ok(req) = serde_json::from_str::<Value>(line) else {
        return encode_error(-1, "malformed JSON request");
    };
    let id = req.get("id").and_then(Value::as_i64).unwrap_or(-1);
    if req.get("v").and_then(Value::as_u64) != Some(PROTOCOL_VERSION) {
        return encode_error(id, "unsupported protocol version");
    }
    let Some(images) = req.get("images").and_then(Value::as_array) else {
        return encode_error(id, "request has no \"images\" array");
    };
    let per_image: Vec<Value> = images
        .iter()
        .map(|p| Value::Array(canned.lookup(p.as_str().unwrap_or_default())))
        .collect();
    json!({"v": PROTOCOL_VERSION, "id": id, "detections": per_image}).to_string()
}

/// Serves canned replies until the input closes.
pub fn run_stub_server(
    input: impl BufRead,
    mut output: impl Write,
    canned: &CannedReplies,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(output, "{}", stub_reply(&line, canned))?;
        output.flush()?;
    }
    Ok(())
}
