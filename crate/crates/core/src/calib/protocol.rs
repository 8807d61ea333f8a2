//! Experiment-backend wire protocol: length-delimited JSON jobs over byte
//! streams, so a hardware control system can stand in for the built-in
//! virtual experiment.
//!
//! Framing: a 4-byte big-endian payload length followed by a UTF-8 JSON
//! message. Client → server messages hold either a job or a shutdown flag;
//! the server answers each job with a result or an error string. The schema
//! is versioned through `ExperimentJob::version` (currently 1) and
//! documented in `docs/job-protocol.md`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::record::BeamGeometry;
use super::CalibError;

pub const PROTOCOL_VERSION: u32 = 1;

/// Swept parameter of a job; templates document which names they accept.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sweep {
    pub parameter: String,
    pub values: Vec<f64>,
}

impl Sweep {
    pub fn new(parameter: &str, values: Vec<f64>) -> Self {
        Sweep { parameter: parameter.to_string(), values }
    }

    /// Single-point sweep for scalar measurements.
    pub fn single(parameter: &str, value: f64) -> Self {
        Sweep { parameter: parameter.to_string(), values: vec![value] }
    }
}

/// Drive settings for the two-qubit templates: programmed software
/// amplitudes and the pulse parameters of one MS gate. Each ion's IA tones
/// run at amp_ia·κ·√ζ (blue) and amp_ia·κ/√ζ (red) with its own ratio ζ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MsSettings {
    pub pair: (i32, i32),
    /// Drive offset from the carrier (rad/s).
    pub delta_c: f64,
    /// Gate duration (s).
    pub duration: f64,
    /// Geometric-mean IA software amplitude before the κ scale.
    pub amp_ia: f64,
    /// Programmed blue/red tone ratios, one per ion of the pair.
    pub zeta_i: f64,
    pub zeta_j: f64,
    /// Uniform IA amplitude scale.
    pub kappa: f64,
    /// Global-beam software amplitude.
    pub amp_global: f64,
    /// Programmed frame rotation φ_f(τ) per gate (rad).
    pub frame_rotation: f64,
}

/// Calibration circuit templates. Each maps to a concrete pulse sequence on
/// the apparatus; sweep parameters accepted by each template:
///
/// - `AlignmentTransfer` — "well_position" (m); per-ion counts keyed
///   "q{label}:1".
/// - `RabiAmplitudeScan` — "amplitude" (software units); counts keyed "1".
/// - `SidebandProbe` — "probe_freq" (rad/s); counts keyed "1".
/// - `ZetaEcho` — "zeta"; per-ion return counts keyed "q{label}:0".
/// - `MsLoop` — one of "kappa", "frame_rotation" (rad), "delta_c" (rad/s),
///   "gates", "amp_global"; joint counts keyed "00".."11".
/// - `ParityScan` — "analysis_phase" (rad); joint counts keyed "00".."11".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum JobCircuit {
    AlignmentTransfer,
    RabiAmplitudeScan {
        ion: i32,
        geometry: BeamGeometry,
        duration: f64,
    },
    SidebandProbe {
        ion: i32,
        duration: f64,
    },
    ZetaEcho {
        blocks_per_side: u32,
    },
    MsLoop {
        settings: MsSettings,
        gates: u32,
    },
    ParityScan {
        settings: MsSettings,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentJob {
    pub version: u32,
    pub id: u64,
    pub circuit: JobCircuit,
    pub sweep: Sweep,
    /// 0 requests exact expectation values (noiseless mode); counts then
    /// sum to 1 per point.
    pub shots: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointResult {
    pub x: f64,
    /// Outcome label → count. Counts sum to `shots` (or 1.0 noiseless) per
    /// measured register.
    pub counts: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub version: u32,
    pub id: u64,
    pub shots: u32,
    pub points: Vec<PointResult>,
}

/// An experiment executor: the built-in virtual apparatus or a remote
/// process speaking the job protocol. One backend session is strictly
/// sequential.
pub trait Backend {
    fn run(&mut self, job: &ExperimentJob) -> Result<ExperimentResult, CalibError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientMessage {
    #[serde(skip_serializing_if = "Option::is_none")]
    job: Option<ExperimentJob>,
    #[serde(default)]
    shutdown: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ServerMessage {
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<ExperimentResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> Result<(), CalibError> {
    let len = u32::try_from(payload.len())
        .map_err(|_| CalibError::Protocol("frame too large".into()))?;
    w.write_all(&len.to_be_bytes())
        .and_then(|_| w.write_all(payload))
        .and_then(|_| w.flush())
        .map_err(|e| CalibError::Protocol(e.to_string()))
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, CalibError> {
    let mut len_buf = [0u8; 4];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(CalibError::Protocol(e.to_string())),
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > 64 << 20 {
        return Err(CalibError::Protocol(format!("oversized frame: {len} bytes")));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| CalibError::Protocol(e.to_string()))?;
    Ok(Some(payload))
}

/// Serves a backend over a byte-stream pair until EOF or a shutdown
/// message.
pub fn serve<R: Read, W: Write>(
    backend: &mut dyn Backend,
    input: &mut R,
    output: &mut W,
) -> Result<(), CalibError> {
    while let Some(frame) = read_frame(input)? {
        let msg: ClientMessage = serde_json::from_slice(&frame)
            .map_err(|e| CalibError::Protocol(format!("bad client frame: {e}")))?;
        if msg.shutdown {
            break;
        }
        let Some(job) = msg.job else {
            return Err(CalibError::Protocol("frame carried neither job nor shutdown".into()));
        };
        let reply = match backend.run(&job) {
            Ok(result) => ServerMessage { result: Some(result), error: None },
            Err(e) => ServerMessage { result: None, error: Some(e.to_string()) },
        };
        let payload =
            serde_json::to_vec(&reply).map_err(|e| CalibError::Protocol(e.to_string()))?;
        write_frame(output, &payload)?;
    }
    Ok(())
}

/// Client side of the protocol over arbitrary byte streams (a spawned
/// process's stdio, a socket, or an in-memory pipe).
pub struct RemoteBackend<R: Read, W: Write> {
    input: R,
    output: W,
}

impl<R: Read, W: Write> RemoteBackend<R, W> {
    pub fn new(input: R, output: W) -> Self {
        RemoteBackend { input, output }
    }

    pub fn shutdown(&mut self) -> Result<(), CalibError> {
        let payload = serde_json::to_vec(&ClientMessage { job: None, shutdown: true })
            .map_err(|e| CalibError::Protocol(e.to_string()))?;
        write_frame(&mut self.output, &payload)
    }
}

impl<R: Read, W: Write> Backend for RemoteBackend<R, W> {
    fn run(&mut self, job: &ExperimentJob) -> Result<ExperimentResult, CalibError> {
        let payload = serde_json::to_vec(&ClientMessage { job: Some(job.clone()), shutdown: false })
            .map_err(|e| CalibError::Protocol(e.to_string()))?;
        write_frame(&mut self.output, &payload)?;
        let frame = read_frame(&mut self.input)?
            .ok_or_else(|| CalibError::Protocol("backend closed the stream".into()))?;
        let msg: ServerMessage = serde_json::from_slice(&frame)
            .map_err(|e| CalibError::Protocol(format!("bad server frame: {e}")))?;
        if let Some(err) = msg.error {
            return Err(CalibError::Backend(err));
        }
        msg.result.ok_or_else(|| CalibError::Protocol("empty server reply".into()))
    }
}
