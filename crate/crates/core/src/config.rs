//! Artifact-wide configuration file (TOML): trap, comb, virtual-experiment
//! truth, and pipeline sections. Unknown keys are rejected. Frequencies are
//! given in ordinary Hz in the file and converted to angular units here.
//!
//! Environment overrides (only these two): `IONCAL_OUTPUT_DIR` and
//! `IONCAL_SEED`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::virt::{SpamModel, VirtualTruth};
use crate::calib::PipelineConfig;
use crate::chain::TrapConfig;
use crate::comb::{CombSpec, PairScalings, DEFAULT_TOOTH_TRUNCATION};
use crate::constants::{RAMAN_DELTA_K_355_COUNTERPROP, YB171_MASS};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapSection {
    pub ion_count: usize,
    /// Axial trap frequency (Hz); 0 selects the chain-length default.
    pub axial_freq_hz: f64,
    /// Radial COM frequencies of the two principal axes (Hz).
    pub radial_com_freqs_hz: [f64; 2],
    pub ion_mass_kg: f64,
    pub raman_delta_k: f64,
}

impl Default for TrapSection {
    fn default() -> Self {
        TrapSection {
            ion_count: 2,
            axial_freq_hz: 0.0,
            radial_com_freqs_hz: [2.40e6, 2.22e6],
            ion_mass_kg: YB171_MASS,
            raman_delta_k: RAMAN_DELTA_K_355_COUNTERPROP,
        }
    }
}

impl TrapSection {
    pub fn to_trap_config(&self) -> TrapConfig {
        let mut cfg = TrapConfig::default_chain(self.ion_count);
        if self.axial_freq_hz > 0.0 {
            cfg.axial_freq = TWO_PI * self.axial_freq_hz;
        }
        cfg.radial_com_freqs =
            [TWO_PI * self.radial_com_freqs_hz[0], TWO_PI * self.radial_com_freqs_hz[1]];
        cfg.ion_mass = self.ion_mass_kg;
        cfg.raman_delta_k = self.raman_delta_k;
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CombSection {
    pub f_rep_hz: f64,
    pub tau_pulse_s: f64,
    /// Single-photon detuning from S→P₁/₂ (Hz).
    pub delta_single_photon_hz: f64,
    /// Fine-structure splitting (Hz).
    pub omega_pp_hz: f64,
    pub delta_aom_hz: f64,
    pub harmonic_offset: i64,
    pub tooth_truncation: i64,
    /// Target two-photon MS Rabi rate (Hz) at ζ = 1.
    pub ms_rabi_target_hz: f64,
    /// Global-to-IA single-photon amplitude ratio at the ion.
    pub global_amp_ratio: f64,
    pub pair_scalings: PairScalings,
}

impl Default for CombSection {
    fn default() -> Self {
        CombSection {
            f_rep_hz: 120.125e6,
            tau_pulse_s: 3.9e-12,
            delta_single_photon_hz: 33.0e12,
            omega_pp_hz: 99.8e12,
            delta_aom_hz: 30.0e6,
            harmonic_offset: 105,
            tooth_truncation: DEFAULT_TOOTH_TRUNCATION,
            ms_rabi_target_hz: 122.1e3,
            global_amp_ratio: 2.0,
            pair_scalings: PairScalings::reference(),
        }
    }
}

impl CombSection {
    /// Comb spec centered at carrier offset `delta_c` (rad/s), amplitudes
    /// unset (scale via `CombModel::with_target_rabi`).
    pub fn to_comb_spec(&self, delta_c: f64) -> CombSpec {
        let delta_aom = TWO_PI * self.delta_aom_hz;
        CombSpec {
            f_rep: self.f_rep_hz,
            tau_pulse: self.tau_pulse_s,
            delta_single_photon: TWO_PI * self.delta_single_photon_hz,
            omega_pp: TWO_PI * self.omega_pp_hz,
            omega_qubit: self.harmonic_offset as f64 * TWO_PI * self.f_rep_hz + delta_aom,
            delta_aom,
            delta_c,
            base_rabi: crate::comb::BaseRabi { global: 0.0, blue: 0.0, red: 0.0 },
            harmonic_offset: self.harmonic_offset,
            tooth_truncation: self.tooth_truncation,
            pair_scalings: self.pair_scalings,
        }
    }
}

/// Ground-truth knobs of the virtual experiment; everything not listed here
/// follows the chain-length defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthSection {
    pub well_offset_um: f64,
    pub beam_waist_um: f64,
    pub zeta_mismatch: Vec<f64>,
    pub spam_read_0_as_1: f64,
    pub spam_read_1_as_0: f64,
    pub coherence_shift_offset_hz: f64,
    pub intensity_noise_frac: f64,
    pub dephasing_floor_rad: f64,
    pub m_sigma_odd_pi2: f64,
    pub m_sigma_even_pi2: f64,
    pub m_sigma_exponent: f64,
    pub nbar: f64,
    pub pulse_duration_s: f64,
}

impl Default for TruthSection {
    fn default() -> Self {
        let d = VirtualTruth::default_chain(2);
        TruthSection {
            well_offset_um: d.well_offset * 1e6,
            beam_waist_um: d.beam_waist * 1e6,
            zeta_mismatch: Vec::new(),
            spam_read_0_as_1: d.spam.read_0_as_1,
            spam_read_1_as_0: d.spam.read_1_as_0,
            coherence_shift_offset_hz: d.coherence_shift_offset / TWO_PI,
            intensity_noise_frac: d.intensity_noise_frac,
            dephasing_floor_rad: d.dephasing_floor,
            m_sigma_odd_pi2: d.m_sigma_odd_pi2,
            m_sigma_even_pi2: d.m_sigma_even_pi2,
            m_sigma_exponent: d.m_sigma_exponent,
            nbar: d.nbar,
            pulse_duration_s: d.pulse_duration,
        }
    }
}

impl TruthSection {
    pub fn to_virtual_truth(&self, trap: &TrapConfig) -> VirtualTruth {
        let mut t = VirtualTruth::default_chain(trap.ion_count);
        t.trap = trap.clone();
        t.well_offset = self.well_offset_um * 1e-6;
        t.beam_waist = self.beam_waist_um * 1e-6;
        if !self.zeta_mismatch.is_empty() {
            t.zeta_mismatch = (0..trap.ion_count)
                .map(|i| self.zeta_mismatch[i % self.zeta_mismatch.len()])
                .collect();
        }
        t.spam = SpamModel { read_0_as_1: self.spam_read_0_as_1, read_1_as_0: self.spam_read_1_as_0 };
        t.coherence_shift_offset = TWO_PI * self.coherence_shift_offset_hz;
        t.intensity_noise_frac = self.intensity_noise_frac;
        t.dephasing_floor = self.dephasing_floor_rad;
        t.m_sigma_odd_pi2 = self.m_sigma_odd_pi2;
        t.m_sigma_even_pi2 = self.m_sigma_even_pi2;
        t.m_sigma_exponent = self.m_sigma_exponent;
        t.nbar = self.nbar;
        t.pulse_duration = self.pulse_duration_s;
        t
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArtifactConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub trap: TrapSection,
    pub comb: CombSection,
    pub truth: TruthSection,
    pub pipeline: PipelineConfig,
}

impl Default for ArtifactConfig {
    fn default() -> Self {
        ArtifactConfig {
            seed: 7,
            output_dir: PathBuf::from("out"),
            trap: TrapSection::default(),
            comb: CombSection::default(),
            truth: TruthSection::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl ArtifactConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: ArtifactConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.apply_env();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::load(p),
            None => {
                let mut cfg = ArtifactConfig::default();
                cfg.apply_env();
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    fn apply_env(&mut self) {
        if let Ok(dir) = std::env::var("IONCAL_OUTPUT_DIR") {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
        if let Ok(seed) = std::env::var("IONCAL_SEED") {
            if let Ok(v) = seed.parse() {
                self.seed = v;
            }
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.trap
            .to_trap_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.comb.f_rep_hz <= 0.0 || self.comb.tau_pulse_s <= 0.0 {
            return Err(ConfigError::Invalid("comb f_rep and tau_pulse must be positive".into()));
        }
        Ok(())
    }

    /// δ_c for the virtual comb: the planned operating point of the first
    /// qubit pair, so light shifts are evaluated at the gate drive.
    pub fn planning_delta_c(&self) -> Result<f64, ConfigError> {
        let trap = self.trap.to_trap_config();
        let spectra =
            crate::chain::chain_spectra(&trap).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let others: Vec<&crate::chain::ModeSpectrum> = spectra[1..].iter().collect();
        let (qi, qj) = (trap.qubit_label(0), trap.qubit_label(1));
        let plan = crate::chain::select_mode_pair(
            &trap,
            &spectra[0],
            &others,
            qi,
            qj,
            self.pipeline.fallback_detuning,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(plan.delta_c)
    }

    pub fn default_toml() -> String {
        toml::to_string_pretty(&ArtifactConfig::default()).expect("default config serializes")
    }
}
