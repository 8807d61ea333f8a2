//! Circuit intermediate representation with dual per-qubit phase frames,
//! virtual-Z bookkeeping, ZZ(θ) wrapper synthesis, and a small dense-unitary
//! checker.
//!
//! Every qubit carries two phase accumulators: Φ⁰, the default frame that
//! virtual Z gates advance, and Φ¹, a temporary frame reset to zero at each
//! ZZ(θ) expansion so the inner MS waveforms always start from the same
//! phase relation. Emitted pulses carry absolute waveform phases; a pulse
//! about equatorial axis φ realizes exp(−i(angle/2)·σ_φ) with
//! σ_φ = cos φ·σx + sin φ·σy, and an MS pulse with per-qubit phases
//! (w_i, w_j) realizes exp(−i(θ/2)·σ_{w_i}⊗σ_{w_j}). Equal waveform phases
//! give the native positive-XX interaction (phase relation 0), a relation of
//! π gives −XX, matching the gate-dynamics tone-phase convention.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

type C64 = Complex64;
const FRAC_PI_2: f64 = std::f64::consts::FRAC_PI_2;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("qubit {0} out of range for a {1}-qubit circuit")]
    QubitOutOfRange(usize, usize),
    #[error("ZZ angle {0} outside [-π/2, π/2]")]
    ThetaOutOfRange(f64),
    #[error("ZZ expansion entered while qubit {0} is still in a temporary frame")]
    OverlappingZz(usize),
    #[error("unitary oracle limited to {max} qubits, circuit has {got}")]
    TooManyQubits { max: usize, got: usize },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Circuit-level gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Gate {
    /// Co-propagating single-qubit Y rotation.
    RyCo { qubit: usize, angle: f64 },
    /// Counter-propagating single-qubit Y rotation (wrapper-capable).
    RyCu { qubit: usize, angle: f64 },
    /// Virtual Z: advances the default frame Φ⁰, emits no pulse.
    RzVirtual { qubit: usize, angle: f64 },
    /// Bare MS gate; `phase` is the waveform-phase relation between the two
    /// qubits' tones (0 = native XX).
    Ms { qubits: (usize, usize), theta: f64, phase: f64 },
    /// Phase-agnostic wrapped gate; expanded by the resolver.
    Zz { qubits: (usize, usize), theta: f64 },
    /// Standalone frame rotation on the active frame.
    FrameRotation { qubit: usize, total: f64 },
}

impl Gate {
    fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::RyCo { qubit, .. }
            | Gate::RyCu { qubit, .. }
            | Gate::RzVirtual { qubit, .. }
            | Gate::FrameRotation { qubit, .. } => vec![qubit],
            Gate::Ms { qubits, .. } | Gate::Zz { qubits, .. } => vec![qubits.0, qubits.1],
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Circuit {
    pub qubit_count: usize,
    pub gates: Vec<Gate>,
    pub metadata: BTreeMap<String, String>,
}

impl Circuit {
    pub fn new(qubit_count: usize) -> Self {
        Circuit { qubit_count, gates: Vec::new(), metadata: BTreeMap::new() }
    }

    pub fn push(&mut self, gate: Gate) -> &mut Self {
        self.gates.push(gate);
        self
    }

    pub fn validate(&self) -> Result<(), CompileError> {
        for g in &self.gates {
            for q in g.qubits() {
                if q >= self.qubit_count {
                    return Err(CompileError::QubitOutOfRange(q, self.qubit_count));
                }
            }
            if let Gate::Zz { theta, .. } = g {
                if theta.abs() > FRAC_PI_2 + 1e-12 {
                    return Err(CompileError::ThetaOutOfRange(*theta));
                }
            }
        }
        Ok(())
    }
}

/// Which frame a qubit currently references.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ActiveFrame {
    Default,
    Temporary,
}

/// Per-qubit dual phase accumulators.
#[derive(Debug, Clone)]
pub struct FrameState {
    phi0: Vec<f64>,
    phi1: Vec<f64>,
    active: Vec<ActiveFrame>,
}

impl FrameState {
    fn new(n: usize) -> Self {
        FrameState {
            phi0: vec![0.0; n],
            phi1: vec![0.0; n],
            active: vec![ActiveFrame::Default; n],
        }
    }

    fn reference(&self, q: usize) -> f64 {
        match self.active[q] {
            ActiveFrame::Default => self.phi0[q],
            ActiveFrame::Temporary => self.phi1[q],
        }
    }

    fn advance_active(&mut self, q: usize, by: f64) {
        match self.active[q] {
            ActiveFrame::Default => self.phi0[q] += by,
            ActiveFrame::Temporary => self.phi1[q] += by,
        }
    }

    pub fn default_frame(&self, q: usize) -> f64 {
        self.phi0[q]
    }

    pub fn temporary_frame(&self, q: usize) -> f64 {
        self.phi1[q]
    }
}

/// Source of calibrated dynamic frame-rotation totals for MS pulses.
pub trait FrameLookup {
    /// φ_f(τ) for one MS(θ) pulse on this pair (rad).
    fn frame_rotation_total(&self, qubits: (usize, usize), theta: f64) -> f64;
}

/// Ideal-pulse lookup: no residual light shift to cancel.
pub struct ZeroFrames;

impl FrameLookup for ZeroFrames {
    fn frame_rotation_total(&self, _qubits: (usize, usize), _theta: f64) -> f64 {
        0.0
    }
}

/// Resolved physical pulses with absolute waveform phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PulseOp {
    SingleQubit {
        qubit: usize,
        counter_propagating: bool,
        angle: f64,
        waveform_phase: f64,
    },
    MsPulse {
        qubits: (usize, usize),
        theta: f64,
        waveform_phase_i: f64,
        waveform_phase_j: f64,
        /// Dynamic frame rotation programmed across the pulse (rad).
        frame_rotation: f64,
    },
}

/// Expands ZZ(θ) into counter-propagating wrappers around MS(|θ|).
///
/// θ ≥ 0 uses matched wrapper signs on the two qubits, θ < 0 mismatched;
/// the inner MS runs at the fixed waveform-phase relation (0 for a native
/// XX interaction, π when the hardware's native interaction is −XX).
pub fn expand_zz(
    qubits: (usize, usize),
    theta: f64,
    native_negative_xx: bool,
) -> Result<Vec<Gate>, CompileError> {
    if theta.abs() > FRAC_PI_2 + 1e-12 {
        return Err(CompileError::ThetaOutOfRange(theta));
    }
    let sign_j = if theta >= 0.0 { 1.0 } else { -1.0 };
    let relation = if native_negative_xx { std::f64::consts::PI } else { 0.0 };
    Ok(vec![
        Gate::RyCu { qubit: qubits.0, angle: FRAC_PI_2 },
        Gate::RyCu { qubit: qubits.1, angle: sign_j * FRAC_PI_2 },
        Gate::Ms { qubits, theta: theta.abs(), phase: relation },
        Gate::RyCu { qubit: qubits.0, angle: -FRAC_PI_2 },
        Gate::RyCu { qubit: qubits.1, angle: -sign_j * FRAC_PI_2 },
    ])
}

/// Walks the circuit maintaining both frames and emits every pulse with its
/// absolute waveform phase. Returns the pulses and the final frame state.
pub fn resolve_waveform_phases(
    circuit: &Circuit,
    frames: &dyn FrameLookup,
    native_negative_xx: bool,
) -> Result<(Vec<PulseOp>, FrameState), CompileError> {
    circuit.validate()?;
    let mut state = FrameState::new(circuit.qubit_count);
    let mut pulses = Vec::new();
    for gate in &circuit.gates {
        resolve_gate(gate, &mut state, &mut pulses, frames, native_negative_xx)?;
    }
    Ok((pulses, state))
}

fn resolve_gate(
    gate: &Gate,
    state: &mut FrameState,
    pulses: &mut Vec<PulseOp>,
    frames: &dyn FrameLookup,
    native_negative_xx: bool,
) -> Result<(), CompileError> {
    match *gate {
        Gate::RyCo { qubit, angle } => pulses.push(PulseOp::SingleQubit {
            qubit,
            counter_propagating: false,
            angle,
            waveform_phase: state.reference(qubit) + FRAC_PI_2,
        }),
        Gate::RyCu { qubit, angle } => pulses.push(PulseOp::SingleQubit {
            qubit,
            counter_propagating: true,
            angle,
            waveform_phase: state.reference(qubit) + FRAC_PI_2,
        }),
        Gate::RzVirtual { qubit, angle } => state.phi0[qubit] += angle,
        Gate::FrameRotation { qubit, total } => state.advance_active(qubit, total),
        Gate::Ms { qubits, theta, phase } => {
            let total = frames.frame_rotation_total(qubits, theta);
            pulses.push(PulseOp::MsPulse {
                qubits,
                theta,
                waveform_phase_i: state.reference(qubits.0),
                waveform_phase_j: state.reference(qubits.1) + phase,
                frame_rotation: total,
            });
            state.advance_active(qubits.0, total);
            state.advance_active(qubits.1, total);
        }
        Gate::Zz { qubits, theta } => {
            for q in [qubits.0, qubits.1] {
                if state.active[q] != ActiveFrame::Default {
                    return Err(CompileError::OverlappingZz(q));
                }
                state.phi1[q] = 0.0;
                state.active[q] = ActiveFrame::Temporary;
            }
            for inner in expand_zz(qubits, theta, native_negative_xx)? {
                resolve_gate(&inner, state, pulses, frames, native_negative_xx)?;
            }
            for q in [qubits.0, qubits.1] {
                state.active[q] = ActiveFrame::Default;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dense unitary oracle
// ---------------------------------------------------------------------------

fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DMatrix::zeros(ra * rb, ca * cb);
    for i in 0..ra {
        for j in 0..ca {
            for k in 0..rb {
                for l in 0..cb {
                    out[(i * rb + k, j * cb + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

fn identity(n: usize) -> DMatrix<C64> {
    DMatrix::identity(n, n)
}

fn sigma_phi(phi: f64) -> DMatrix<C64> {
    // [[0, e^{−iφ}], [e^{iφ}, 0]]
    let mut m = DMatrix::zeros(2, 2);
    m[(0, 1)] = C64::from_polar(1.0, -phi);
    m[(1, 0)] = C64::from_polar(1.0, phi);
    m
}

fn embed_single(op: &DMatrix<C64>, qubit: usize, n: usize) -> DMatrix<C64> {
    let mut out = identity(1);
    for q in 0..n {
        let factor = if q == qubit { op.clone() } else { identity(2) };
        out = kron(&out, &factor);
    }
    out
}

fn rotation_about(phi: f64, angle: f64, qubit: usize, n: usize) -> DMatrix<C64> {
    let s = sigma_phi(phi);
    let dim = 1usize << n;
    let big = embed_single(&s, qubit, n);
    identity(dim) * C64::new((angle / 2.0).cos(), 0.0)
        - big * C64::new(0.0, (angle / 2.0).sin())
}

fn ms_unitary(theta: f64, phi_i: f64, phi_j: f64, qubits: (usize, usize), n: usize) -> DMatrix<C64> {
    let si = embed_single(&sigma_phi(phi_i), qubits.0, n);
    let sj = embed_single(&sigma_phi(phi_j), qubits.1, n);
    let prod = si * sj;
    let dim = 1usize << n;
    identity(dim) * C64::new((theta / 2.0).cos(), 0.0)
        - prod * C64::new(0.0, (theta / 2.0).sin())
}

/// Dense unitary of the resolved circuit: the pulse product with the final
/// default-frame values applied as trailing Z rotations, which makes the
/// result equal to the direct gate-by-gate composition.
pub fn circuit_unitary(circuit: &Circuit, native_negative_xx: bool) -> Result<DMatrix<C64>, CompileError> {
    let n = circuit.qubit_count;
    if n > 4 {
        return Err(CompileError::TooManyQubits { max: 4, got: n });
    }
    let (pulses, state) = resolve_waveform_phases(circuit, &ZeroFrames, native_negative_xx)?;
    let dim = 1usize << n;
    let mut u = identity(dim);
    for p in &pulses {
        let g = match *p {
            PulseOp::SingleQubit { qubit, angle, waveform_phase, .. } => {
                rotation_about(waveform_phase, angle, qubit, n)
            }
            PulseOp::MsPulse { qubits, theta, waveform_phase_i, waveform_phase_j, .. } => {
                ms_unitary(theta, waveform_phase_i, waveform_phase_j, qubits, n)
            }
        };
        u = g * u;
    }
    for q in 0..n {
        // Virtual Z(β) advances subsequent pulse phases by +β, equivalent to
        // a trailing physical Rz with the matching axis-advance sign.
        let beta = state.phi0[q];
        if beta != 0.0 {
            u = rz_axis_advance(beta, q, n) * u;
        }
    }
    Ok(u)
}

fn rz_axis_advance(beta: f64, qubit: usize, n: usize) -> DMatrix<C64> {
    // V(β) = e^{+iβZ/2}: moving it left across a pulse advances the pulse
    // axis, P_φ·V = V·P_{φ+β}, matching the hardware frame semantics. This
    // also matches the dynamics convention where a phase r advances |1⟩ by
    // e^{−ir} (up to global phase).
    let mut m = DMatrix::zeros(2, 2);
    m[(0, 0)] = C64::from_polar(1.0, beta / 2.0);
    m[(1, 1)] = C64::from_polar(1.0, -beta / 2.0);
    embed_single(&m, qubit, n)
}

/// Direct symbolic composition: gates multiplied in order with their ideal
/// unitaries (ZZ via the analytic diagonal form), frames never tracked.
pub fn direct_unitary(circuit: &Circuit) -> Result<DMatrix<C64>, CompileError> {
    let n = circuit.qubit_count;
    if n > 4 {
        return Err(CompileError::TooManyQubits { max: 4, got: n });
    }
    circuit.validate()?;
    let dim = 1usize << n;
    let mut u = identity(dim);
    for gate in &circuit.gates {
        let g = match *gate {
            Gate::RyCo { qubit, angle } | Gate::RyCu { qubit, angle } => {
                rotation_about(FRAC_PI_2, angle, qubit, n)
            }
            Gate::RzVirtual { qubit, angle } => rz_axis_advance(angle, qubit, n),
            Gate::FrameRotation { qubit, total } => rz_axis_advance(total, qubit, n),
            Gate::Ms { qubits, theta, phase } => ms_unitary(theta, 0.0, phase, qubits, n),
            Gate::Zz { qubits, theta } => {
                // exp(−i(θ/2)·Z⊗Z)
                let zi = embed_single(
                    &DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                        C64::new(1.0, 0.0),
                        C64::new(-1.0, 0.0),
                    ])),
                    qubits.0,
                    n,
                );
                let zj = embed_single(
                    &DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                        C64::new(1.0, 0.0),
                        C64::new(-1.0, 0.0),
                    ])),
                    qubits.1,
                    n,
                );
                let zz = zi * zj;
                identity(dim) * C64::new((theta / 2.0).cos(), 0.0)
                    - zz * C64::new(0.0, (theta / 2.0).sin())
            }
        };
        u = g * u;
    }
    Ok(u)
}

/// Max entrywise distance after removing a global phase: both matrices are
/// normalized by their phase at the position of `a`'s largest-magnitude
/// entry.
pub fn global_phase_distance(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    let mut pos = 0;
    let mut best = 0.0;
    for (i, v) in a.iter().enumerate() {
        if v.norm() > best {
            best = v.norm();
            pos = i;
        }
    }
    let av = a.as_slice()[pos];
    let bv = b.as_slice()[pos];
    if bv.norm() < 1e-14 {
        return f64::INFINITY;
    }
    let pa = C64::from_polar(1.0, av.arg());
    let pb = C64::from_polar(1.0, bv.arg());
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        worst = worst.max((x / pa - y / pb).norm());
    }
    worst
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

/// Prints the one-gate-per-line text form:
///
/// ```text
/// qubits N
/// RYCO q angle
/// RYCU q angle
/// RZ q angle
/// MS qi qj theta phase
/// ZZ qi qj theta
/// FRAME q total
/// ```
///
/// Angles in radians; `#` starts a comment.
pub fn print_circuit(circuit: &Circuit) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "qubits {}", circuit.qubit_count);
    for g in &circuit.gates {
        let line = match *g {
            Gate::RyCo { qubit, angle } => format!("RYCO {qubit} {angle:.17e}"),
            Gate::RyCu { qubit, angle } => format!("RYCU {qubit} {angle:.17e}"),
            Gate::RzVirtual { qubit, angle } => format!("RZ {qubit} {angle:.17e}"),
            Gate::Ms { qubits, theta, phase } => {
                format!("MS {} {} {theta:.17e} {phase:.17e}", qubits.0, qubits.1)
            }
            Gate::Zz { qubits, theta } => format!("ZZ {} {} {theta:.17e}", qubits.0, qubits.1),
            Gate::FrameRotation { qubit, total } => format!("FRAME {qubit} {total:.17e}"),
        };
        let _ = writeln!(out, "{line}");
    }
    out
}

pub fn parse_circuit(text: &str) -> Result<Circuit, CompileError> {
    let mut circuit = Circuit::new(0);
    let mut saw_header = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().unwrap();
        let err = |msg: &str| CompileError::Parse { line: lineno + 1, msg: msg.to_string() };
        let next_usize = |parts: &mut std::str::SplitWhitespace| -> Result<usize, CompileError> {
            parts
                .next()
                .ok_or_else(|| err("missing qubit index"))?
                .parse()
                .map_err(|_| err("bad qubit index"))
        };
        let next_f64 = |parts: &mut std::str::SplitWhitespace| -> Result<f64, CompileError> {
            parts
                .next()
                .ok_or_else(|| err("missing numeric field"))?
                .parse()
                .map_err(|_| err("bad numeric field"))
        };
        match word.to_ascii_uppercase().as_str() {
            "QUBITS" => {
                circuit.qubit_count = next_usize(&mut parts)?;
                saw_header = true;
            }
            "RYCO" => {
                let q = next_usize(&mut parts)?;
                let a = next_f64(&mut parts)?;
                circuit.push(Gate::RyCo { qubit: q, angle: a });
            }
            "RYCU" => {
                let q = next_usize(&mut parts)?;
                let a = next_f64(&mut parts)?;
                circuit.push(Gate::RyCu { qubit: q, angle: a });
            }
            "RZ" => {
                let q = next_usize(&mut parts)?;
                let a = next_f64(&mut parts)?;
                circuit.push(Gate::RzVirtual { qubit: q, angle: a });
            }
            "MS" => {
                let qi = next_usize(&mut parts)?;
                let qj = next_usize(&mut parts)?;
                let theta = next_f64(&mut parts)?;
                let phase = next_f64(&mut parts)?;
                circuit.push(Gate::Ms { qubits: (qi, qj), theta, phase });
            }
            "ZZ" => {
                let qi = next_usize(&mut parts)?;
                let qj = next_usize(&mut parts)?;
                let theta = next_f64(&mut parts)?;
                circuit.push(Gate::Zz { qubits: (qi, qj), theta });
            }
            "FRAME" => {
                let q = next_usize(&mut parts)?;
                let t = next_f64(&mut parts)?;
                circuit.push(Gate::FrameRotation { qubit: q, total: t });
            }
            other => return Err(err(&format!("unknown gate '{other}'"))),
        }
        if parts.next().is_some() {
            return Err(err("trailing fields"));
        }
    }
    if !saw_header {
        return Err(CompileError::Parse { line: 0, msg: "missing 'qubits N' header".into() });
    }
    circuit.validate()?;
    Ok(circuit)
}
