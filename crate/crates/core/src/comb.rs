//! Pulsed-laser frequency-comb model: two-photon Rabi rates and fourth-order
//! differential light shifts on the qubit transition, plus the blue/red
//! tone-ratio balancing root-find.
//!
//! Three combs drive the gate: the global comb (g) and the blue- and
//! red-detuned combs (b, r) on the individual-addressing beam. Tooth
//! frequencies are tracked relative to the S→P single-photon resonance, so
//! tooth 0 of comb g sits at the single-photon detuning Δ; only frequency
//! differences ever enter the model.
//!
//! The j-sums share one amplitude-independent kernel
//! T(l) = Σ_j sech(j·x)·sech((j+l)·x)·(1/(Δ+jω_rep) − 2/(Δ+jω_rep−ω_PP)),
//! x = 2π·f_rep·τ_pulse, evaluated once per comb geometry by FFT
//! cross-correlation at truncation J and 2J. Every Rabi rate and shift is a
//! cheap amplitude-weighted sum over the cached kernel, which keeps the
//! ζ_br root-find and scan loops fast.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Default tooth truncation; the sech envelope at |j| = J is below 1e-8 of
/// the peak for the reference comb.
pub const DEFAULT_TOOTH_TRUNCATION: i64 = 7000;

/// Skip comb teeth within this margin of a single-photon resonance (rad/s);
/// the physical comb has negligible power there and the model diverges.
pub const SINGLE_PHOTON_GUARD: f64 = TWO_PI * 10.0e9;

/// Two-photon denominators within this margin of zero raise a resonance
/// error (rad/s).
pub const TWO_PHOTON_RESONANCE_GUARD: f64 = TWO_PI * 100.0;

/// Relative J-vs-2J truncation agreement demanded of every sum.
pub const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CombError {
    #[error("invalid comb spec: {0}")]
    Invalid(String),
    #[error("tooth index {j} outside truncation |j| <= {truncation}")]
    ToothOutOfRange { j: i64, truncation: i64 },
    #[error("sum not converged: J and 2J truncations differ by {rel:.3e} (> {tol:.0e}) for {what}")]
    NotConverged { what: String, rel: f64, tol: f64 },
    #[error("accidental two-photon resonance at harmonic l = {l}: denominator {denom:.3e} rad/s within guard")]
    Resonance { l: i64, denom: f64 },
    #[error("no sign change of the total shift on ζ ∈ [{lo}, {hi}]: endpoints {f_lo:.3e}, {f_hi:.3e} rad/s")]
    NoBalanceRoot { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
}

/// Comb identity: global, blue-detuned IA tone, red-detuned IA tone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CombLabel {
    #[serde(rename = "g")]
    Global,
    #[serde(rename = "b")]
    Blue,
    #[serde(rename = "r")]
    Red,
}

impl CombLabel {
    fn short(self) -> &'static str {
        match self {
            CombLabel::Global => "g",
            CombLabel::Blue => "b",
            CombLabel::Red => "r",
        }
    }
}

/// Single-photon Rabi rate of tooth 0 of each comb (rad/s).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BaseRabi {
    pub global: f64,
    pub blue: f64,
    pub red: f64,
}

impl BaseRabi {
    pub fn get(&self, label: CombLabel) -> f64 {
        match label {
            CombLabel::Global => self.global,
            CombLabel::Blue => self.blue,
            CombLabel::Red => self.red,
        }
    }
}

/// Multiplicative suppression factors (polarization/geometry) applied to
/// each comb pair's shift contribution. 0 disables a pair entirely.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairScalings {
    pub gb: f64,
    pub gr: f64,
    pub br: f64,
    pub gg: f64,
    pub bb: f64,
    pub rr: f64,
}

impl PairScalings {
    /// Global intra-comb contribution suppressed by 7² (the global beam's
    /// polarization gives a 7× reduction of the co-propagating component).
    pub fn reference() -> Self {
        PairScalings { gb: 1.0, gr: 1.0, br: 1.0, gg: 1.0 / 49.0, bb: 1.0, rr: 1.0 }
    }
}

/// Full comb description for the light-shift model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombSpec {
    /// Laser repetition rate (Hz).
    pub f_rep: f64,
    /// Laser pulse duration (s).
    pub tau_pulse: f64,
    /// Single-photon detuning Δ of comb-g tooth 0 from S→P₁/₂ (rad/s).
    pub delta_single_photon: f64,
    /// P₃/₂–P₁/₂ fine-structure splitting ω_PP (rad/s).
    pub omega_pp: f64,
    /// Qubit splitting ω_{|1⟩−|0⟩} (rad/s).
    pub omega_qubit: f64,
    /// Offset of the median IA tone from the global tone (rad/s).
    pub delta_aom: f64,
    /// Symmetric blue/red tone offset from the carrier (rad/s).
    pub delta_c: f64,
    pub base_rabi: BaseRabi,
    /// Harmonic separation of the Raman teeth (105 for this comb).
    pub harmonic_offset: i64,
    /// Tooth-sum truncation J (|j| ≤ J).
    pub tooth_truncation: i64,
    pub pair_scalings: PairScalings,
}

impl CombSpec {
    /// Reference comb at the standard MS operating point, with amplitudes
    /// left at zero (fill in via [`CombModel::with_target_rabi`]).
    ///
    /// Defaults: f_rep = 120.125 MHz, τ_pulse = 3.9 ps, Δ = 2π×33 THz red of
    /// P₁/₂ (between the P levels), ω_PP = 2π×99.8 THz, δ_AOM = 2π×30 MHz,
    /// and the qubit splitting placed exactly at the comb+AOM carrier
    /// resonance (105 harmonics + δ_AOM ≈ 2π×12.643 GHz).
    pub fn reference(delta_c: f64) -> Self {
        let f_rep = 120.125e6;
        let delta_aom = TWO_PI * 30.0e6;
        CombSpec {
            f_rep,
            tau_pulse: 3.9e-12,
            delta_single_photon: TWO_PI * 33.0e12,
            omega_pp: TWO_PI * 99.8e12,
            omega_qubit: 105.0 * TWO_PI * f_rep + delta_aom,
            delta_aom,
            delta_c,
            base_rabi: BaseRabi { global: 0.0, blue: 0.0, red: 0.0 },
            harmonic_offset: 105,
            tooth_truncation: DEFAULT_TOOTH_TRUNCATION,
            pair_scalings: PairScalings::reference(),
        }
    }

    fn validate(&self) -> Result<(), CombError> {
        if self.f_rep <= 0.0 || self.tau_pulse <= 0.0 || self.omega_qubit <= 0.0 {
            return Err(CombError::Invalid(
                "f_rep, tau_pulse, omega_qubit must be positive".into(),
            ));
        }
        if self.tooth_truncation < 1 {
            return Err(CombError::Invalid("tooth_truncation must be >= 1".into()));
        }
        let x = TWO_PI * self.f_rep * self.tau_pulse;
        let edge = sech(self.tooth_truncation as f64 * x);
        if edge >= 1e-8 {
            return Err(CombError::Invalid(format!(
                "tooth_truncation {} too small: envelope at |j|=J is {edge:.2e} of peak (need < 1e-8)",
                self.tooth_truncation
            )));
        }
        for (name, s) in [
            ("gb", self.pair_scalings.gb),
            ("gr", self.pair_scalings.gr),
            ("br", self.pair_scalings.br),
            ("gg", self.pair_scalings.gg),
            ("bb", self.pair_scalings.bb),
            ("rr", self.pair_scalings.rr),
        ] {
            if !(0.0..=1.0).contains(&s) {
                return Err(CombError::Invalid(format!("pair scaling {name} = {s} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn sech(x: f64) -> f64 {
    1.0 / x.cosh()
}

/// Differential fourth-order shift per comb pair (rad/s) and their sum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftBreakdown {
    /// Keyed "gb", "gr", "br", "gg", "bb", "rr"; inter-comb entries include
    /// both orderings of the two combs. Pair scalings are already applied.
    pub per_pair: BTreeMap<String, f64>,
    /// Sum of the entries (rad/s).
    pub total: f64,
}

/// Result of the ζ_br balancing root-find.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceResult {
    pub zeta: f64,
    /// Total shift remaining at the root (rad/s).
    pub residual: f64,
}

/// Amplitude-independent tooth-sum kernel at one truncation level.
#[derive(Debug)]
struct KernelLevel {
    /// T(l) for l ∈ [offset − truncation, offset + truncation].
    l_min: i64,
    t: Vec<f64>,
}

impl KernelLevel {
    fn t(&self, l: i64) -> Option<f64> {
        let idx = l - self.l_min;
        if idx < 0 || idx as usize >= self.t.len() {
            None
        } else {
            Some(self.t[idx as usize])
        }
    }
}

#[derive(Debug)]
pub struct CombKernel {
    level1: KernelLevel,
    level2: KernelLevel,
}

impl CombKernel {
    fn build(spec: &CombSpec) -> Self {
        let j1 = spec.tooth_truncation;
        CombKernel {
            level1: build_level(spec, j1),
            level2: build_level(spec, 2 * j1),
        }
    }
}

/// T(l) over l ∈ offset ± trunc by FFT cross-correlation of
/// u(j) = sech(jx)·d(j) (|j| ≤ trunc) against v(m) = sech(mx).
fn build_level(spec: &CombSpec, trunc: i64) -> KernelLevel {
    let x = TWO_PI * spec.f_rep * spec.tau_pulse;
    let omega_rep = TWO_PI * spec.f_rep;
    let c = spec.harmonic_offset;
    let jt = trunc;

    let d = |j: i64| -> f64 {
        let dj = spec.delta_single_photon + j as f64 * omega_rep;
        let dpp = dj - spec.omega_pp;
        if dj.abs() < SINGLE_PHOTON_GUARD || dpp.abs() < SINGLE_PHOTON_GUARD {
            return 0.0;
        }
        1.0 / dj - 2.0 / dpp
    };

    let u_len = (2 * jt + 1) as usize;
    let v_len = (4 * jt + 1) as usize;
    let n = (u_len + v_len).next_power_of_two();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    let mut u = vec![Complex64::default(); n];
    for a in 0..u_len {
        let j = a as i64 - jt;
        u[a] = Complex64::new(sech(j as f64 * x) * d(j), 0.0);
    }
    let mut v = vec![Complex64::default(); n];
    for b in 0..v_len {
        let m = b as i64 + (c - 2 * jt);
        v[b] = Complex64::new(sech(m as f64 * x), 0.0);
    }
    fft.process(&mut u);
    fft.process(&mut v);
    for (ua, va) in u.iter_mut().zip(v.iter()) {
        *ua = ua.conj() * va;
    }
    ifft.process(&mut u);

    let t: Vec<f64> = (0..=2 * jt).map(|k| u[k as usize].re / n as f64).collect();
    KernelLevel { l_min: c - jt, t }
}

/// Comb spec plus its cached tooth-sum kernel. Amplitude, δ_c, and scaling
/// changes reuse the kernel; geometry changes rebuild it.
#[derive(Debug, Clone)]
pub struct CombModel {
    pub spec: CombSpec,
    kernel: Arc<CombKernel>,
}

impl CombModel {
    pub fn new(spec: CombSpec) -> Result<Self, CombError> {
        spec.validate()?;
        let kernel = Arc::new(CombKernel::build(&spec));
        Ok(CombModel { spec, kernel })
    }

    /// Same comb geometry with new tooth amplitudes.
    pub fn with_base_rabi(&self, base_rabi: BaseRabi) -> Self {
        let mut spec = self.spec.clone();
        spec.base_rabi = base_rabi;
        CombModel { spec, kernel: Arc::clone(&self.kernel) }
    }

    /// Same comb geometry with a new carrier offset δ_c.
    pub fn with_delta_c(&self, delta_c: f64) -> Self {
        let mut spec = self.spec.clone();
        spec.delta_c = delta_c;
        CombModel { spec, kernel: Arc::clone(&self.kernel) }
    }

    /// Scales the IA tones to the ratio ζ = a_blue/a_red while holding the
    /// geometric-mean MS Rabi rate √(Ω_bg·Ω_rg) at `rabi_target`.
    pub fn scaled_for_zeta(&self, zeta: f64, rabi_target: f64) -> Result<Self, CombError> {
        if zeta <= 0.0 {
            return Err(CombError::Invalid(format!("zeta must be positive, got {zeta}")));
        }
        let l = self.spec.harmonic_offset;
        let o_bg = self.two_photon_rabi(CombLabel::Blue, CombLabel::Global, l)?;
        let o_rg = self.two_photon_rabi(CombLabel::Red, CombLabel::Global, l)?;
        let gm = (o_bg * o_rg).sqrt();
        if gm <= 0.0 || gm.is_nan() {
            return Err(CombError::Invalid("IA amplitudes must be nonzero to rescale".into()));
        }
        let kappa = rabi_target / gm;
        let b = self.spec.base_rabi;
        self.with_base_rabi(BaseRabi {
            global: b.global,
            blue: b.blue * kappa * zeta.sqrt(),
            red: b.red * kappa / zeta.sqrt(),
        })
        .validated()
    }

    fn validated(self) -> Result<Self, CombError> {
        self.spec.validate()?;
        Ok(self)
    }

    /// Sets h_b = h_r = h_g/ratio so that Ω_bg = Ω_rg = `rabi_target` at
    /// ζ = 1. `global_amp_ratio` is the global-to-IA single-photon Rabi
    /// ratio at the ion.
    pub fn with_target_rabi(
        &self,
        rabi_target: f64,
        global_amp_ratio: f64,
    ) -> Result<Self, CombError> {
        let t = self
            .kernel
            .level1
            .t(self.spec.harmonic_offset)
            .ok_or_else(|| CombError::Invalid("harmonic offset outside kernel".into()))?;
        if t <= 0.0 || rabi_target <= 0.0 || global_amp_ratio <= 0.0 {
            return Err(CombError::Invalid("target Rabi and amplitude ratio must be positive".into()));
        }
        let h_ia = (2.0 * rabi_target / (global_amp_ratio * t)).sqrt();
        Ok(self.with_base_rabi(BaseRabi {
            global: global_amp_ratio * h_ia,
            blue: h_ia,
            red: h_ia,
        }))
    }

    /// Tooth frequency relative to the S→P₁/₂ resonance (rad/s):
    /// ω_g^(j) = Δ + j·2π·f_rep, ω_b = ω_g + δ_AOM + δ_c, ω_r = ω_g + δ_AOM − δ_c.
    pub fn tooth_frequency(&self, label: CombLabel, j: i64) -> f64 {
        let base = self.spec.delta_single_photon + j as f64 * TWO_PI * self.spec.f_rep;
        match label {
            CombLabel::Global => base,
            CombLabel::Blue => base + self.spec.delta_aom + self.spec.delta_c,
            CombLabel::Red => base + self.spec.delta_aom - self.spec.delta_c,
        }
    }

    /// h_α^(j) = h_α^(0)·sech(j·2π·f_rep·τ_pulse).
    pub fn tooth_envelope(&self, label: CombLabel, j: i64) -> Result<f64, CombError> {
        if j.abs() > self.spec.tooth_truncation {
            return Err(CombError::ToothOutOfRange { j, truncation: self.spec.tooth_truncation });
        }
        let x = TWO_PI * self.spec.f_rep * self.spec.tau_pulse;
        Ok(self.spec.base_rabi.get(label) * sech(j as f64 * x))
    }

    /// Resonant two-photon Rabi rate Ω_{α,β}^(l) from tooth j of comb α and
    /// tooth j+l of comb β, summed over j with the two-level-denominator
    /// weight. Errors if the J and 2J truncations disagree.
    pub fn two_photon_rabi(
        &self,
        alpha: CombLabel,
        beta: CombLabel,
        l: i64,
    ) -> Result<f64, CombError> {
        let amp = self.spec.base_rabi.get(alpha) * self.spec.base_rabi.get(beta) / 2.0;
        if amp == 0.0 {
            return Ok(0.0);
        }
        let t1 = self.kernel.level1.t(l);
        let t2 = self.kernel.level2.t(l);
        match (t1, t2) {
            (Some(t1), Some(t2)) => {
                let rel = (t1 - t2).abs() / t2.abs().max(f64::MIN_POSITIVE);
                if rel > CONVERGENCE_TOL {
                    return Err(CombError::NotConverged {
                        what: format!("two_photon_rabi({},{},{l})", alpha.short(), beta.short()),
                        rel,
                        tol: CONVERGENCE_TOL,
                    });
                }
                Ok(amp * t1)
            }
            _ => Err(CombError::ToothOutOfRange { j: l, truncation: self.spec.tooth_truncation }),
        }
    }

    /// Two-photon detuning of the (α tooth l, β tooth 0) pair from the
    /// qubit transition (rad/s).
    fn pair_denominator(&self, alpha: CombLabel, beta: CombLabel, l: i64) -> f64 {
        self.tooth_frequency(alpha, l) - self.tooth_frequency(beta, 0) - self.spec.omega_qubit
    }

    /// Ordered-pair differential fourth-order light shift
    /// δ^LS_{α,β} = Σ_l (Ω_{α,β}^(l))² / (2(ω_α^(l) − ω_β^(0) − ω_q)), no
    /// pair scaling applied.
    pub fn fourth_order_shift(&self, alpha: CombLabel, beta: CombLabel) -> Result<f64, CombError> {
        let amp = self.spec.base_rabi.get(alpha) * self.spec.base_rabi.get(beta) / 2.0;
        if amp == 0.0 {
            return Ok(0.0);
        }
        let s1 = self.shift_sum(&self.kernel.level1, alpha, beta, amp)?;
        let s2 = self.shift_sum(&self.kernel.level2, alpha, beta, amp)?;
        let rel = (s1 - s2).abs() / s2.abs().max(f64::MIN_POSITIVE);
        if rel > CONVERGENCE_TOL {
            return Err(CombError::NotConverged {
                what: format!("fourth_order_shift({},{})", alpha.short(), beta.short()),
                rel,
                tol: CONVERGENCE_TOL,
            });
        }
        Ok(s1)
    }

    fn shift_sum(
        &self,
        level: &KernelLevel,
        alpha: CombLabel,
        beta: CombLabel,
        amp: f64,
    ) -> Result<f64, CombError> {
        let c = self.spec.harmonic_offset;
        // The inter-comb detunings are retained in the denominator; only the
        // l-independent part is hoisted.
        let base = self.pair_denominator(alpha, beta, c);
        let omega_rep = TWO_PI * self.spec.f_rep;
        let mut acc = 0.0;
        for (idx, &t) in level.t.iter().enumerate() {
            let l = level.l_min + idx as i64;
            let denom = base + (l - c) as f64 * omega_rep;
            if denom.abs() < TWO_PHOTON_RESONANCE_GUARD {
                return Err(CombError::Resonance { l, denom });
            }
            let omega = amp * t;
            acc += omega * omega / (2.0 * denom);
        }
        Ok(acc)
    }

    /// Sums every comb-pair contribution with its pair scaling. Inter-comb
    /// entries include both orderings (each physical tooth pairing appears
    /// once per two-photon orientation).
    pub fn total_shift(&self) -> Result<ShiftBreakdown, CombError> {
        use CombLabel::*;
        let s = self.spec.pair_scalings;
        let entries: [(&str, f64, &[(CombLabel, CombLabel)]); 6] = [
            ("gb", s.gb, &[(Global, Blue), (Blue, Global)]),
            ("gr", s.gr, &[(Global, Red), (Red, Global)]),
            ("br", s.br, &[(Blue, Red), (Red, Blue)]),
            ("gg", s.gg, &[(Global, Global)]),
            ("bb", s.bb, &[(Blue, Blue)]),
            ("rr", s.rr, &[(Red, Red)]),
        ];
        let mut per_pair = BTreeMap::new();
        let mut total = 0.0;
        for (key, scale, pairs) in entries {
            let mut v = 0.0;
            if scale > 0.0 {
                for &(a, b) in pairs {
                    v += self.fourth_order_shift(a, b)?;
                }
                v *= scale;
            }
            per_pair.insert(key.to_string(), v);
            total += v;
        }
        Ok(ShiftBreakdown { per_pair, total })
    }

    /// Root-find on ζ = a_blue/a_red such that the total shift vanishes
    /// while the geometric-mean MS Rabi rate is held at `rabi_target`.
    /// Searches the bracket [0.5, 2.0] by bisection.
    pub fn balance_ratio(&self, rabi_target: f64) -> Result<BalanceResult, CombError> {
        let (lo, hi) = (0.5, 2.0);
        let eval = |z: f64| -> Result<f64, CombError> {
            Ok(self.scaled_for_zeta(z, rabi_target)?.total_shift()?.total)
        };
        let f_lo = eval(lo)?;
        let f_hi = eval(hi)?;
        if f_lo * f_hi > 0.0 {
            return Err(CombError::NoBalanceRoot { lo, hi, f_lo, f_hi });
        }
        let (mut a, mut b, mut fa) = (lo, hi, f_lo);
        let mut mid = 0.5 * (a + b);
        let mut fm = 0.0;
        for _ in 0..80 {
            mid = 0.5 * (a + b);
            fm = eval(mid)?;
            if fm.abs() < TWO_PI * 0.01 || (b - a) < 1e-12 {
                break;
            }
            if fa * fm <= 0.0 {
                b = mid;
            } else {
                a = mid;
                fa = fm;
            }
        }
        if fm.abs() >= TWO_PI * 1.0 {
            return Err(CombError::NoBalanceRoot { lo, hi, f_lo: fa, f_hi: fm });
        }
        Ok(BalanceResult { zeta: mid, residual: fm })
    }
}
