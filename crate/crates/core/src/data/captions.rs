//! Caption cleanup: a fixed rewrite rule plus the request/response contract
//! for an external text-refinement model. No model is called here; a
//! transport executes requests, and the bundled transports either replay
//! recorded exchanges or refuse.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const REDUNDANT: &str = "low quality recording features";
const REPLACEMENT: &str = "recording features";

/// Instruction sent with every refinement request.
pub const REFINEMENT_INSTRUCTION: &str = "Refine or remove an audio quality-related phrase to eliminate any mention of audio quality";
pub const FEW_SHOT_SLOTS: usize = 4;

fn find_ascii_ci(hay: &str, needle: &str) -> Option<usize> {
    let (h, n) = (hay.as_bytes(), needle.as_bytes());
    if n.len() > h.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

fn rewrite_once(text: &str) -> Option<String> {
    let first = find_ascii_ci(text, REDUNDANT)?;
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    let mut at = Some(first);
    while let Some(i) = at {
        out.push_str(&rest[..i]);
        let kept = out.trim_end_matches(' ').len();
        if kept < out.len() {
            out.truncate(kept);
            out.push(' ');
        }
        out.push_str(REPLACEMENT);
        rest = &rest[i + REDUNDANT.len()..];
        let tail = rest.trim_start_matches(' ');
        if tail.len() < rest.len() {
            rest = &rest[rest.len() - tail.len() - 1..];
        }
        at = find_ascii_ci(rest, REDUNDANT);
    }
    out.push_str(rest);
    Some(out)
}

/// Rewrites every case-insensitive "low quality recording features" to
/// "recording features", collapsing space runs at the seams. Text without
/// the phrase comes back unchanged.
pub fn clean_caption(text: &str) -> String {
    let mut cur = text.to_owned();
    // Removing "low quality " can bring a new occurrence together.
    while let Some(next) = rewrite_once(&cur) {
        cur = next;
    }
    cur
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotConfig {
    pub examples: Vec<FewShotExample>,
}

impl FewShotConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementRequest {
    pub instruction: String,
    pub examples: Vec<FewShotExample>,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementResponse {
    pub refined: String,
}

/// Builds a request from the first four configured examples.
pub fn refine_caption_request(text: &str, shots: &FewShotConfig) -> Result<RefinementRequest> {
    if shots.examples.len() < FEW_SHOT_SLOTS {
        return Err(Error::MissingExamples(shots.examples.len()));
    }
    Ok(RefinementRequest {
        instruction: REFINEMENT_INSTRUCTION.to_owned(),
        examples: shots.examples[..FEW_SHOT_SLOTS].to_vec(),
        caption: text.to_owned(),
    })
}

/// Executes refinement requests.
pub trait RefinementTransport {
    fn send(&self, request: &RefinementRequest) -> Result<RefinementResponse>;
}

pub fn refine_caption(text: &str, shots: &FewShotConfig, transport: &dyn RefinementTransport) -> Result<String> {
    let req = refine_caption_request(text, shots)?;
    Ok(transport.send(&req)?.refined)
}

/// Refuses every request.
#[derive(Debug, Default, Clone, Copy)]
pub struct OfflineTransport;

impl RefinementTransport for OfflineTransport {
    fn send(&self, request: &RefinementRequest) -> Result<RefinementResponse> {
        Err(Error::UnavailableClient(format!("no refinement client configured for `{}`", request.caption)))
    }
}

/// One recorded exchange, stored as a JSON line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub request: RefinementRequest,
    pub response: RefinementResponse,
}

/// Replays recorded responses keyed by caption text.
#[derive(Debug, Default, Clone)]
pub struct FixtureTransport {
    responses: HashMap<String, RefinementResponse>,
}

impl FixtureTransport {
    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        Self { responses: records.into_iter().map(|r| (r.request.caption, r.response)).collect() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?);
            }
        }
        Ok(Self::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl RefinementTransport for FixtureTransport {
    fn send(&self, request: &RefinementRequest) -> Result<RefinementResponse> {
        self.responses
            .get(&request.caption)
            .cloned()
            .ok_or_else(|| Error::UnavailableClient(format!("no recorded response for `{}`", request.caption)))
    }
}

/// Forwards to another transport and appends each exchange to a fixture
/// file that [`FixtureTransport::load`] can replay.
pub struct RecordingTransport<T> {
    inner: T,
    path: PathBuf,
    lock: Mutex<()>,
}

impl<T: RefinementTransport> RecordingTransport<T> {
    pub fn new(inner: T, path: impl Into<PathBuf>) -> Self {
        Self { inner, path: path.into(), lock: Mutex::new(()) }
    }
}

impl<T: RefinementTransport> RefinementTransport for RecordingTransport<T> {
    fn send(&self, request: &RefinementRequest) -> Result<RefinementResponse> {
        let response = self.inner.send(request)?;
        let mut line = serde_json::to_vec(&FixtureRecord { request: request.clone(), response: response.clone() })?;
        line.push(b'\n');
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        Ok(response)
    }
}
