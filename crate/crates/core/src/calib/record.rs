//! Persisted per-pair gate settings and per-chain calibration state.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pulse::AomModel;

use super::CalibError;

/// Completed-stage marker for resumable schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Checkpoint {
    Fresh,
    Aligned,
    PiTimes,
    Sidebands,
    Planned,
    Zeta,
    Kappa,
    FrameRotation,
    Fidelity,
}

/// One beam geometry for single-qubit drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BeamGeometry {
    /// Both tones on the IA beam.
    CoPropagating,
    /// IA tone against the global beam.
    CounterPropagating,
    /// Global-beam AOM swept against a fixed IA tone.
    Global,
}

impl BeamGeometry {
    pub fn key(&self) -> &'static str {
        match self {
            BeamGeometry::CoPropagating => "co",
            BeamGeometry::CounterPropagating => "counter",
            BeamGeometry::Global => "global",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiTimeCal {
    pub geometry: BeamGeometry,
    pub aom: AomModel,
    /// Software amplitude realizing the target π-time.
    pub pi_amplitude: f64,
    /// Target π-time (s).
    pub pi_time: f64,
    /// 1σ fit uncertainties on (a_sat, Ξ).
    pub fit_sigma: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZetaCal {
    pub zeta: f64,
    pub fit_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityReport {
    pub theta: f64,
    pub value: f64,
    pub minus: f64,
    pub plus: f64,
    pub p00: f64,
    pub p11: f64,
    pub parity_amplitude: f64,
}

/// Calibrated state of one gate pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairCal {
    pub qubit_i: i32,
    pub qubit_j: i32,
    pub mode_upper: usize,
    pub mode_lower: usize,
    pub reference_mode: usize,
    pub balanced: bool,
    /// Drive offset from the carrier (rad/s).
    pub delta_c: f64,
    /// Offset from the reference sideband (rad/s).
    pub detuning: f64,
    /// Per-ion blue/red tone ratios.
    pub zeta_i: f64,
    pub zeta_j: f64,
    /// IA amplitude scale from the crossing calibration.
    pub kappa: f64,
    /// Geometric-mean IA software amplitude (κ applied separately).
    pub amp_ia: f64,
    /// Global software amplitude of the MS(π/2) point.
    pub amp_global: f64,
    /// Dynamic frame-rotation anchors φ_f(τ) at M = 2 and M = 32 (rad).
    pub frame_anchor_m2: Option<f64>,
    pub frame_anchor_m32: Option<f64>,
    pub fidelity: Option<FidelityReport>,
}

impl PairCal {
    pub fn key(qubit_i: i32, qubit_j: i32) -> String {
        format!("{qubit_i},{qubit_j}")
    }

    /// Linear θ-interpolation of the frame-rotation total from the two
    /// anchors (θ in rad).
    pub fn frame_rotation_for(&self, theta: f64) -> Option<f64> {
        let a2 = self.frame_anchor_m2?;
        let a32 = self.frame_anchor_m32?;
        let (t2, t32) = (std::f64::consts::FRAC_PI_2, std::f64::consts::PI / 32.0);
        let slope = (a2 - a32) / (t2 - t32);
        Some(a32 + slope * (theta - t32))
    }
}

/// Everything the pipeline learns about the chain, persisted as versioned
/// JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub version: u32,
    pub seed: u64,
    /// Unix seconds; excluded from determinism comparisons.
    pub timestamp_unix: u64,
    pub ion_count: usize,
    pub checkpoint: Checkpoint,
    /// Calibrated axial well position offset (m).
    pub well_position: Option<f64>,
    /// Fitted sideband frequencies per manifold (rad/s), descending.
    pub sidebands: Vec<Vec<f64>>,
    /// Keyed "q{label}:{geometry}".
    pub pi_times: BTreeMap<String, PiTimeCal>,
    /// Keyed "q{label}".
    pub zeta: BTreeMap<String, ZetaCal>,
    /// Keyed "{qi},{qj}".
    pub pairs: BTreeMap<String, PairCal>,
}

impl CalibrationRecord {
    pub fn new(seed: u64, ion_count: usize) -> Self {
        CalibrationRecord {
            version: 1,
            seed,
            timestamp_unix: 0,
            ion_count,
            checkpoint: Checkpoint::Fresh,
            well_position: None,
            sidebands: Vec::new(),
            pi_times: BTreeMap::new(),
            zeta: BTreeMap::new(),
            pairs: BTreeMap::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CalibError::Record(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| CalibError::Record(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CalibError> {
        let text = std::fs::read_to_string(path).map_err(|e| CalibError::Record(e.to_string()))?;
        let rec: CalibrationRecord =
            serde_json::from_str(&text).map_err(|e| CalibError::Record(e.to_string()))?;
        if rec.version != 1 {
            return Err(CalibError::Record(format!("unsupported record version {}", rec.version)));
        }
        Ok(rec)
    }

    /// Serialized bytes with the timestamp zeroed, for determinism checks.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut copy = self.clone();
        copy.timestamp_unix = 0;
        serde_json::to_vec_pretty(&copy).expect("record serializes")
    }

    pub fn pair(&self, qi: i32, qj: i32) -> Option<&PairCal> {
        self.pairs.get(&PairCal::key(qi, qj))
    }
}
