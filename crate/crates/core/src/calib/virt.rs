//! The built-in virtual experiment: a simulated stand-in for the apparatus
//! with explicit ground truth, driven through the same job protocol a
//! hardware backend would speak.
//!
//! Ground truth covers the trap (true sideband frequencies = modeled modes
//! plus per-mode offsets), the AOM saturation response per beam geometry,
//! beam/ion alignment, the per-ion blue/red tone-ratio mismatch, SPAM error
//! rates, and phenomenological decoherence knobs for loop experiments. Every
//! sampled count comes from one seeded RNG consumed in strict job order, so
//! a fixed seed and job sequence reproduce identical results.

use std::collections::BTreeMap;

use nalgebra::Matrix2;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::chain::{chain_spectra, ModeSpectrum, TrapConfig};
use crate::comb::{CombModel, CombSpec};
use crate::dynamics::{GateChannel, GateDrive, ModeLine, Populations, SpinRho};
use crate::pulse::{AomModel, PulseProgram};

use super::protocol::{
    Backend, ExperimentJob, ExperimentResult, JobCircuit, MsSettings, PointResult,
    PROTOCOL_VERSION,
};
use super::record::BeamGeometry;
use super::CalibError;

type C64 = Complex64;
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Classical readout confusion per qubit.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SpamModel {
    /// P(read 1 | actual 0).
    pub read_0_as_1: f64,
    /// P(read 0 | actual 1).
    pub read_1_as_0: f64,
}

impl Default for SpamModel {
    fn default() -> Self {
        SpamModel { read_0_as_1: 0.0, read_1_as_0: 0.0 }
    }
}

/// Injected ground truth of the virtual apparatus.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct VirtualTruth {
    pub trap: TrapConfig,
    /// Added to each computed mode frequency (rad/s), per manifold.
    pub sideband_offsets: Vec<Vec<f64>>,
    /// True well-position offset of the beam array (m).
    pub well_offset: f64,
    /// IA beam intensity 1/e² waist for the alignment model (m).
    pub beam_waist: f64,
    /// Beams on a uniform grid (true for chains of 4+, where the harmonic
    /// spacing cannot match everywhere).
    pub uniform_beam_grid: bool,
    /// Pulse area fraction of π used by the alignment transfer pulse.
    pub alignment_pulse_area: f64,
    pub aom_ia_counter: AomModel,
    pub aom_ia_co: AomModel,
    pub aom_global: AomModel,
    /// Rabi-scan dephasing constant ξ.
    pub rabi_dephasing: f64,
    /// Carrier Rabi rate of the weak sideband probe (rad/s).
    pub sideband_probe_rabi: f64,
    /// Two-photon MS Rabi rate at the reference software amplitudes (rad/s).
    pub ms_reference_rabi: f64,
    pub reference_amp_ia: f64,
    pub reference_amp_global: f64,
    /// Actual blue/red ratio = programmed ζ times this, per ion.
    pub zeta_mismatch: Vec<f64>,
    /// Shift value (rad/s) at which single-qubit coherence peaks; offsets
    /// the best-coherence ζ from the exact cancellation root.
    pub coherence_shift_offset: f64,
    /// Shot-to-shot dephasing per gate: σ = frac·|shift phase| + floor.
    pub intensity_noise_frac: f64,
    pub dephasing_floor: f64,
    /// Gaussian loop-decay constants at θ = π/2 and their θ scaling
    /// exponent: Mσ(θ) = Mσ(π/2)·((π/2)/θ)^exponent.
    pub m_sigma_odd_pi2: f64,
    pub m_sigma_even_pi2: f64,
    pub m_sigma_exponent: f64,
    pub spam: SpamModel,
    pub nbar: f64,
    /// Standard gate duration (s).
    pub pulse_duration: f64,
}

impl VirtualTruth {
    pub fn default_chain(ion_count: usize) -> Self {
        let trap = TrapConfig::default_chain(ion_count);
        // A few-kHz systematic so frequency recovery is non-trivial.
        let offsets: Vec<Vec<f64>> = (0..2)
            .map(|m| {
                (0..ion_count)
                    .map(|k| TWO_PI * (1.7e3 - 0.9e3 * m as f64 - 0.6e3 * k as f64))
                    .collect()
            })
            .collect();
        VirtualTruth {
            trap,
            sideband_offsets: offsets,
            well_offset: 0.4e-6,
            beam_waist: 1.1e-6,
            uniform_beam_grid: ion_count >= 4,
            alignment_pulse_area: 0.93,
            aom_ia_counter: AomModel { a_sat: 200.0, xi: TWO_PI * 80.0e3 },
            aom_ia_co: AomModel { a_sat: 215.0, xi: TWO_PI * 35.0e3 },
            aom_global: AomModel { a_sat: 188.5, xi: TWO_PI * 73.6e3 },
            rabi_dephasing: 25.0,
            sideband_probe_rabi: TWO_PI * 12.5e3,
            ms_reference_rabi: TWO_PI * 122.1e3,
            reference_amp_ia: 100.0,
            reference_amp_global: 170.0,
            zeta_mismatch: (0..ion_count)
                .map(|i| if i % 2 == 0 { 0.936 } else { 0.916 })
                .collect(),
            coherence_shift_offset: -TWO_PI * 240.0,
            intensity_noise_frac: 0.18,
            dephasing_floor: 0.0105,
            m_sigma_odd_pi2: 83.0,
            m_sigma_even_pi2: 12.9,
            m_sigma_exponent: 0.5,
            spam: SpamModel::default(),
            nbar: 0.0,
            pulse_duration: 250e-6,
        }
    }
}

/// The virtual apparatus: truth plus the comb light-shift model and the
/// sampling RNG.
pub struct VirtualExperiment {
    pub truth: VirtualTruth,
    comb: CombModel,
    spectra: Vec<ModeSpectrum>,
    rng: ChaCha12Rng,
    env_sq_total: f64,
}

impl VirtualExperiment {
    pub fn new(truth: VirtualTruth, comb_spec: CombSpec, seed: u64) -> Result<Self, CalibError> {
        let mut spectra =
            chain_spectra(&truth.trap).map_err(|e| CalibError::Backend(e.to_string()))?;
        for (m, spec) in spectra.iter_mut().enumerate() {
            for (k, f) in spec.frequencies.iter_mut().enumerate() {
                *f += truth
                    .sideband_offsets
                    .get(m)
                    .and_then(|v| v.get(k))
                    .copied()
                    .unwrap_or(0.0);
            }
        }
        let comb = CombModel::new(comb_spec)
            .map_err(|e| CalibError::Backend(e.to_string()))?
            .with_target_rabi(truth.ms_reference_rabi, 2.0)
            .map_err(|e| CalibError::Backend(e.to_string()))?;
        let env = PulseProgram::new(truth.pulse_duration, 0.0, 0.0, 1.0, 0.0, 0.0, (0, 0))
            .map_err(|e| CalibError::Backend(e.to_string()))?
            .envelope();
        Ok(VirtualExperiment {
            truth,
            comb,
            spectra,
            rng: ChaCha12Rng::seed_from_u64(seed),
            env_sq_total: env.squared_integral_total(),
        })
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha12Rng::seed_from_u64(seed);
    }

    /// True (offset) mode spectra, gate manifold first.
    pub fn true_spectra(&self) -> &[ModeSpectrum] {
        &self.spectra
    }

    fn n(&self) -> usize {
        self.truth.trap.ion_count
    }

    // -- truth-side physics --------------------------------------------------

    /// Unbounded AOM response (the physical curve rolls over past a_sat).
    fn sat_response(aom: &AomModel, a: f64) -> f64 {
        aom.xi * (std::f64::consts::FRAC_PI_2 * a / aom.a_sat).sin()
    }

    /// Total differential shift (rad/s) at the reference Rabi rate for an
    /// actual tone ratio ζ.
    pub fn shift_at_reference(&self, zeta_actual: f64) -> Result<f64, CalibError> {
        let scaled = self
            .comb
            .scaled_for_zeta(zeta_actual, self.truth.ms_reference_rabi)
            .map_err(|e| CalibError::Backend(e.to_string()))?;
        Ok(scaled.total_shift().map_err(|e| CalibError::Backend(e.to_string()))?.total)
    }

    /// Actual ratio at which single-qubit coherence peaks.
    pub fn coherence_optimal_actual_zeta(&self) -> Result<f64, CalibError> {
        let target = self.truth.coherence_shift_offset;
        let f = |z: f64| self.shift_at_reference(z).map(|s| s - target);
        let (mut a, mut b) = (0.7, 1.6);
        let mut fa = f(a)?;
        let fb = f(b)?;
        if fa * fb > 0.0 {
            return Err(CalibError::Backend("no coherence optimum in bracket".into()));
        }
        for _ in 0..60 {
            let mid = 0.5 * (a + b);
            let fm = f(mid)?;
            if fa * fm <= 0.0 {
                b = mid;
            } else {
                a = mid;
                fa = fm;
            }
        }
        Ok(0.5 * (a + b))
    }

    /// Programmed ζ at which ion `pos` returns best from the echo.
    pub fn true_zeta_star(&self, pos: usize) -> Result<f64, CalibError> {
        Ok(self.coherence_optimal_actual_zeta()? / self.truth.zeta_mismatch[pos])
    }

    /// True drive for one MS pulse at the programmed settings.
    pub fn ms_drive(&self, s: &MsSettings) -> Result<GateDrive, CalibError> {
        let t = &self.truth;
        let pos_i = t.trap.position_of(s.pair.0).map_err(|e| CalibError::Backend(e.to_string()))?;
        let pos_j = t.trap.position_of(s.pair.1).map_err(|e| CalibError::Backend(e.to_string()))?;
        let mut modes = Vec::new();
        for spec in &self.spectra {
            for k in 0..spec.mode_count() {
                modes.push(ModeLine {
                    frequency: spec.frequencies[k],
                    eta_i: spec.lamb_dicke[k][pos_i],
                    eta_j: spec.lamb_dicke[k][pos_j],
                });
            }
        }
        let amp_ia = s.amp_ia * s.kappa;
        let ia_ref = Self::sat_response(&t.aom_ia_counter, t.reference_amp_ia);
        let g_ref = Self::sat_response(&t.aom_global, t.reference_amp_global);
        let rate = |amp: f64| -> f64 {
            t.ms_reference_rabi * (Self::sat_response(&t.aom_ia_counter, amp) / ia_ref)
                * (Self::sat_response(&t.aom_global, s.amp_global) / g_ref)
        };
        let omega_i = rate(amp_ia);
        let omega_j = omega_i;
        let rel = |omega: f64| (omega / t.ms_reference_rabi).powi(2);
        let ls_i = self.shift_at_reference(s.zeta_i * t.zeta_mismatch[pos_i])? * rel(omega_i);
        let ls_j = self.shift_at_reference(s.zeta_j * t.zeta_mismatch[pos_j])? * rel(omega_j);
        let scale = (s.amp_global / t.reference_amp_global).clamp(0.0, 1.0);
        let pulse = PulseProgram::new(
            s.duration,
            amp_ia / s.zeta_i.sqrt(),
            amp_ia * s.zeta_i.sqrt(),
            scale,
            s.frame_rotation,
            s.delta_c,
            s.pair,
        )
        .map_err(|e| CalibError::Backend(e.to_string()))?;
        Ok(GateDrive::new(pulse, modes, omega_i, omega_j)
            .with_lightshift(ls_i, ls_j)
            .with_nbar(t.nbar))
    }

    fn m_sigma(&self, base: f64, theta: f64) -> f64 {
        let th = theta.abs().max(1e-6);
        base * (std::f64::consts::FRAC_PI_2 / th).powf(self.truth.m_sigma_exponent)
    }

    /// ρ after M applications of the gate plus the phenomenological loop
    /// decay channels.
    pub fn loop_rho(&self, drive: &GateDrive, gates: u32) -> Result<SpinRho, CalibError> {
        let channel =
            GateChannel::build(drive).map_err(|e| CalibError::Backend(e.to_string()))?;
        let mut rho = SpinRho::zeros();
        rho[(0, 0)] = C64::new(1.0, 0.0);
        for _ in 0..gates {
            rho = channel.apply(&rho);
        }
        let m = gates as f64;
        let theta = channel.theta();
        // Even-subspace (and general) coherence decay.
        let ms_even = self.m_sigma(self.truth.m_sigma_even_pi2, theta);
        let decay = (-m * m / (2.0 * ms_even * ms_even)).exp();
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    rho[(a, b)] *= decay;
                }
            }
        }
        // Leakage into the odd-parity subspace.
        let ms_odd = self.m_sigma(self.truth.m_sigma_odd_pi2, theta);
        let q_target = 0.5 * (1.0 - (-m * m / (2.0 * ms_odd * ms_odd)).exp());
        let odd_now = rho[(1, 1)].re + rho[(2, 2)].re;
        if q_target > odd_now {
            let q = (q_target - odd_now) / (1.0 - odd_now);
            rho *= C64::new(1.0 - q, 0.0);
            rho[(1, 1)] += C64::new(q / 2.0, 0.0);
            rho[(2, 2)] += C64::new(q / 2.0, 0.0);
        }
        Ok(rho)
    }

    /// State fidelity of the virtual gate (loop channels included, SPAM
    /// excluded) against the ideal MS(θ_target) acting on |00⟩.
    pub fn true_state_fidelity(
        &self,
        settings: &MsSettings,
        theta_target: f64,
    ) -> Result<f64, CalibError> {
        let drive = self.ms_drive(settings)?;
        let rho = self.loop_rho(&drive, 1)?;
        let c = (theta_target / 2.0).cos();
        let s = (theta_target / 2.0).sin();
        // ψ = cos|00⟩ − i·sin|11⟩.
        let psi = [C64::new(c, 0.0), C64::default(), C64::default(), C64::new(0.0, -s)];
        let mut f = C64::default();
        for a in 0..4 {
            for b in 0..4 {
                f += psi[a].conj() * rho[(a, b)] * psi[b];
            }
        }
        Ok(f.re)
    }

    // -- measurement + sampling ----------------------------------------------

    fn apply_spam_single(&self, p1: f64) -> f64 {
        let s = &self.truth.spam;
        p1 * (1.0 - s.read_1_as_0) + (1.0 - p1) * s.read_0_as_1
    }

    fn apply_spam_joint(&self, p: &Populations) -> [f64; 4] {
        let s = &self.truth.spam;
        let flip = [
            [1.0 - s.read_0_as_1, s.read_1_as_0],
            [s.read_0_as_1, 1.0 - s.read_1_as_0],
        ];
        let probs = [p.p00, p.p01, p.p10, p.p11];
        let mut out = [0.0; 4];
        for (actual, &pa) in probs.iter().enumerate() {
            let (ai, aj) = (actual >> 1, actual & 1);
            for obs in 0..4usize {
                let (oi, oj) = (obs >> 1, obs & 1);
                out[obs] += pa * flip[oi][ai] * flip[oj][aj];
            }
        }
        out
    }

    fn sample_binomial(&mut self, n: u32, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let mut k = 0u32;
        for _ in 0..n {
            if self.rng.gen::<f64>() < p {
                k += 1;
            }
        }
        k as f64
    }

    /// Counts for a single binary outcome.
    fn binary_counts(&mut self, key0: &str, key1: &str, p1: f64, shots: u32) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        if shots == 0 {
            m.insert(key1.to_string(), p1);
            m.insert(key0.to_string(), 1.0 - p1);
        } else {
            let k = self.sample_binomial(shots, p1);
            m.insert(key1.to_string(), k);
            m.insert(key0.to_string(), shots as f64 - k);
        }
        m
    }

    fn joint_counts(&mut self, probs: [f64; 4], shots: u32) -> BTreeMap<String, f64> {
        let keys = ["00", "01", "10", "11"];
        let mut m = BTreeMap::new();
        if shots == 0 {
            for (k, p) in keys.iter().zip(probs) {
                m.insert((*k).to_string(), p);
            }
            return m;
        }
        // Multinomial via sequential conditional binomials.
        let mut remaining = shots;
        let mut mass = 1.0;
        for (idx, key) in keys.iter().enumerate() {
            let p = if mass > 1e-12 { (probs[idx] / mass).clamp(0.0, 1.0) } else { 0.0 };
            let draw = if idx == 3 {
                remaining
            } else {
                self.sample_binomial(remaining, p) as u32
            };
            m.insert((*key).to_string(), draw as f64);
            remaining -= draw;
            mass -= probs[idx];
        }
        m
    }

    // -- per-template models -------------------------------------------------

    fn beam_center(&self, pos: usize, positions: &[f64]) -> f64 {
        let t = &self.truth;
        if t.uniform_beam_grid && positions.len() > 1 {
            let spacing = (positions[positions.len() - 1] - positions[0])
                / (positions.len() - 1) as f64;
            let mid = (positions.len() as f64 - 1.0) / 2.0;
            (pos as f64 - mid) * spacing + t.well_offset
        } else {
            positions[pos] + t.well_offset
        }
    }

    fn alignment_p1(&self, pos: usize, x: f64, positions: &[f64]) -> f64 {
        let t = &self.truth;
        let ion = positions[pos] + x;
        let d = ion - self.beam_center(pos, positions);
        let g = (-d * d / (2.0 * t.beam_waist * t.beam_waist)).exp();
        let area = t.alignment_pulse_area * std::f64::consts::PI * g;
        (area / 2.0).sin().powi(2)
    }

    fn rabi_scan_p1(&self, geometry: BeamGeometry, amp: f64, duration: f64) -> f64 {
        let t = &self.truth;
        let aom = match geometry {
            BeamGeometry::CoPropagating => &t.aom_ia_co,
            BeamGeometry::CounterPropagating => &t.aom_ia_counter,
            BeamGeometry::Global => &t.aom_global,
        };
        crate::fit::amplitude_scan_model(amp, duration, aom.a_sat, aom.xi, t.rabi_dephasing)
    }

    fn sideband_p1(&self, pos: usize, probe: f64, duration: f64) -> f64 {
        let t = &self.truth;
        let mut p = 0.0;
        for spec in &self.spectra {
            for k in 0..spec.mode_count() {
                let eta = spec.lamb_dicke[k][pos].abs();
                let omega_sb = eta * t.sideband_probe_rabi;
                let delta = probe - spec.frequencies[k];
                let gen = (omega_sb * omega_sb + delta * delta).sqrt();
                if gen > 0.0 {
                    p += (omega_sb * omega_sb) / (gen * gen) * (gen * duration / 2.0).sin().powi(2);
                }
            }
        }
        p.min(1.0)
    }

    /// Echo return probability for one ion at programmed ratio ζ.
    fn echo_return_p0(&self, pos: usize, zeta_prog: f64, blocks_per_side: u32) -> Result<f64, CalibError> {
        let t = &self.truth;
        let zeta_actual = zeta_prog * t.zeta_mismatch[pos];
        let shift = self.shift_at_reference(zeta_actual)?;
        let phase = (shift - t.coherence_shift_offset) * self.env_sq_total;
        let sigma = t.intensity_noise_frac * phase.abs() + t.dephasing_floor;
        let gates = 2.0 * blocks_per_side as f64;
        let contrast = (-(gates * sigma).powi(2) / 2.0).exp();
        Ok(0.5 * (1.0 + contrast))
    }

    fn analysis_rotation(phi: f64) -> Matrix2<C64> {
        // exp(−i(π/4)σ_φ)
        let c = C64::new((std::f64::consts::FRAC_PI_4).cos(), 0.0);
        let s = (std::f64::consts::FRAC_PI_4).sin();
        let off = C64::from_polar(s, -phi) * C64::new(0.0, -1.0);
        let off2 = C64::from_polar(s, phi) * C64::new(0.0, -1.0);
        Matrix2::new(c, off, off2, c)
    }

    fn parity_populations(&self, rho: &SpinRho, phi: f64) -> Populations {
        let u1 = Self::analysis_rotation(phi);
        let mut u = SpinRho::zeros();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    for d in 0..2 {
                        u[(2 * a + c, 2 * b + d)] = u1[(a, b)] * u1[(c, d)];
                    }
                }
            }
        }
        let out = u * rho * u.adjoint();
        Populations::from_rho(&out)
    }
}

impl Backend for VirtualExperiment {
    fn run(&mut self, job: &ExperimentJob) -> Result<ExperimentResult, CalibError> {
        if job.version != PROTOCOL_VERSION {
            return Err(CalibError::Protocol(format!(
                "unsupported job version {}",
                job.version
            )));
        }
        let positions = crate::chain::equilibrium_positions(&self.truth.trap)
            .map_err(|e| CalibError::Backend(e.to_string()))?;
        let mut points = Vec::with_capacity(job.sweep.values.len());
        for &x in &job.sweep.values {
            let counts = match &job.circuit {
                JobCircuit::AlignmentTransfer => {
                    if job.sweep.parameter != "well_position" {
                        return Err(bad_param(&job.sweep.parameter, "AlignmentTransfer"));
                    }
                    let mut m = BTreeMap::new();
                    for pos in 0..self.n() {
                        let p1 = self.apply_spam_single(self.alignment_p1(pos, x, &positions));
                        let label = self.truth.trap.qubit_label(pos);
                        let c = self.binary_counts(
                            &format!("q{label}:0"),
                            &format!("q{label}:1"),
                            p1,
                            job.shots,
                        );
                        m.extend(c);
                    }
                    m
                }
                JobCircuit::RabiAmplitudeScan { geometry, duration, .. } => {
                    if job.sweep.parameter != "amplitude" {
                        return Err(bad_param(&job.sweep.parameter, "RabiAmplitudeScan"));
                    }
                    let p1 = self.apply_spam_single(self.rabi_scan_p1(*geometry, x, *duration));
                    self.binary_counts("0", "1", p1, job.shots)
                }
                JobCircuit::SidebandProbe { ion, duration } => {
                    if job.sweep.parameter != "probe_freq" {
                        return Err(bad_param(&job.sweep.parameter, "SidebandProbe"));
                    }
                    let pos = self
                        .truth
                        .trap
                        .position_of(*ion)
                        .map_err(|e| CalibError::Backend(e.to_string()))?;
                    let p1 = self.apply_spam_single(self.sideband_p1(pos, x, *duration));
                    self.binary_counts("0", "1", p1, job.shots)
                }
                JobCircuit::ZetaEcho { blocks_per_side } => {
                    if job.sweep.parameter != "zeta" {
                        return Err(bad_param(&job.sweep.parameter, "ZetaEcho"));
                    }
                    let mut m = BTreeMap::new();
                    for pos in 0..self.n() {
                        let p0 = self.echo_return_p0(pos, x, *blocks_per_side)?;
                        // SPAM on the bright/dark readout of |0⟩.
                        let p0 = 1.0 - self.apply_spam_single(1.0 - p0);
                        let label = self.truth.trap.qubit_label(pos);
                        let c = self.binary_counts(
                            &format!("q{label}:1"),
                            &format!("q{label}:0"),
                            p0,
                            job.shots,
                        );
                        m.extend(c);
                    }
                    m
                }
                JobCircuit::MsLoop { settings, gates } => {
                    let mut s = settings.clone();
                    let mut m_gates = *gates;
                    match job.sweep.parameter.as_str() {
                        "kappa" => s.kappa = x,
                        "frame_rotation" => s.frame_rotation = x,
                        "delta_c" => s.delta_c = x,
                        "amp_global" => s.amp_global = x,
                        "gates" => m_gates = x.round() as u32,
                        other => return Err(bad_param(other, "MsLoop")),
                    }
                    let drive = self.ms_drive(&s)?;
                    let rho = self.loop_rho(&drive, m_gates)?;
                    let probs = self.apply_spam_joint(&Populations::from_rho(&rho));
                    self.joint_counts(probs, job.shots)
                }
                JobCircuit::ParityScan { settings } => {
                    if job.sweep.parameter != "analysis_phase" {
                        return Err(bad_param(&job.sweep.parameter, "ParityScan"));
                    }
                    let drive = self.ms_drive(settings)?;
                    let rho = self.loop_rho(&drive, 1)?;
                    let pops = self.parity_populations(&rho, x);
                    let probs = self.apply_spam_joint(&pops);
                    self.joint_counts(probs, job.shots)
                }
            };
            points.push(PointResult { x, counts });
        }
        Ok(ExperimentResult { version: PROTOCOL_VERSION, id: job.id, shots: job.shots, points })
    }
}

fn bad_param(param: &str, template: &str) -> CalibError {
    CalibError::Protocol(format!("sweep parameter '{param}' not supported by {template}"))
}
