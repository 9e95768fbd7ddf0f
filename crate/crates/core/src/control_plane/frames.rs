use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current wire version.
pub const WIRE_VERSION: u32 = 1;

/// Per-ACK metrics sent by the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub conn_id: u32,
    pub subflow_id: u32,
    pub seq: u64,
    pub timestamp_us: u64,
    pub delivered_bytes: u64,
    pub rtt_us: u64,
    pub cwnd: u32,
    pub min_rtt_us: u64,
    pub bw_estimate_bps: u64,
    pub mode: String,
    pub expflag: bool,
}

/// Target windows for a connection. A joint directive carries one target per
/// subflow in subflow order; a demultiplexed one names its subflow and
/// carries a single target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CwndDirective {
    pub conn_id: u32,
    pub decision_seq: u64,
    pub target_cwnd: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subflow_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Frame {
    Metric(MetricReport),
    Directive(CwndDirective),
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    v: u32,
    #[serde(flatten)]
    frame: &'a Frame,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    v: u32,
    #[serde(flatten)]
    frame: Frame,
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("malformed frame: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unsupported wire version {0}")]
    Version(u32),
}

/// One newline-terminated JSON record.
pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = serde_json::to_vec(&EnvelopeOut { v: WIRE_VERSION, frame }).expect("frames always serialise");
    out.push(b'\n');
    out
}

/// Decodes a single record; trailing whitespace is ignored.
pub fn decode_frame(line: &[u8]) -> Result<Frame, FrameError> {
    let env: EnvelopeIn = serde_json::from_slice(line.trim_ascii())?;
    if env.v != WIRE_VERSION {
        return Err(FrameError::Version(env.v));
    }
    Ok(env.frame)
}

/// Splits a byte stream into records, skipping and counting bad lines.
#[derive(Debug, Default, Clone)]
pub struct FrameDecoder {
    pub decoded: u64,
    pub malformed: u64,
}

impl FrameDecoder {
    pub fn decode_stream(&mut self, bytes: &[u8]) -> Vec<Frame> {
        let mut out = Vec::new();
        for line in bytes.split(|&b| b == b'\n') {
            if line.trim_ascii().is_empty() {
                continue;
            }
            if let Some(f) = self.decode_line(line) {
                out.push(f);
            }
        }
        out
    }

    pub fn decode_line(&mut self, line: &[u8]) -> Option<Frame> {
        match decode_frame(line) {
            Ok(f) => {
                self.decoded += 1;
                Some(f)
            }
            Err(e) => {
                self.malformed += 1;
                log::debug!("skipping frame: {e}");
                None
            }
        }
    }
}
