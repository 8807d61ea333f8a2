//! Calibration schedule against a pluggable experiment backend.
//!
//! The schedule follows the standard workflow: chain alignment, π-time
//! amplitude calibration, sideband finding, mode-pair/detuning planning,
//! ζ_br echo calibration, the κ amplitude-crossing calibration, the
//! frame-rotation anchors at M = 2 and M = 32, and the fidelity estimate.
//! Each stage writes into a [`CalibrationRecord`] and advances a checkpoint,
//! so an interrupted run resumes where it stopped. Every scan the pipeline
//! issues is retained for CSV emission.

pub mod protocol;
pub mod record;
pub mod virt;

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

use crate::chain::{self, GatePairPlan, ModeSpectrum, TrapConfig};
use crate::constants::HBAR;
use crate::fit::{
    self, fidelity_estimate, fit_amplitude_scan, fit_gaussian_peak, linear_crossing,
    mle_parity_amplitude, mle_upper_half_gaussian, wilson_interval, FitError, ShotData,
};
use crate::pulse::{theta_to_global_amplitude, AomModel, PulseError};

use protocol::{Backend, ExperimentJob, JobCircuit, MsSettings, PointResult, Sweep, PROTOCOL_VERSION};
use record::{BeamGeometry, CalibrationRecord, Checkpoint, FidelityReport, PairCal, PiTimeCal, ZetaCal};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("backend error: {0}")]
    Backend(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("record error: {0}")]
    Record(String),
    #[error("stage '{stage}' failed: {source}")]
    Fit {
        stage: String,
        #[source]
        source: FitError,
    },
    #[error("stage '{stage}' failed: {message}")]
    Stage { stage: String, message: String },
    #[error(transparent)]
    Pulse(#[from] PulseError),
}

fn fit_err(stage: &str) -> impl Fn(FitError) -> CalibError + '_ {
    move |source| CalibError::Fit { stage: stage.to_string(), source }
}

/// Scan grids, shot counts, and drive defaults for the schedule.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PipelineConfig {
    pub shots_scan: u32,
    pub shots_fidelity: u32,
    /// Request exact expectation values instead of sampled counts.
    pub noiseless: bool,
    pub pulse_duration: f64,
    pub reference_amp_ia: f64,
    pub reference_amp_global: f64,
    pub echo_blocks_per_side: u32,
    pub fallback_detuning: f64,
    /// Alignment sweep half-span (m) and point count.
    pub align_span: f64,
    pub align_points: usize,
    /// Amplitude-scan sweep ceiling and points.
    pub amp_scan_max: f64,
    pub amp_scan_points: usize,
    /// Coarse sideband sweep bounds (rad/s) and step (rad/s).
    pub sideband_coarse_lo: f64,
    pub sideband_coarse_hi: f64,
    pub sideband_coarse_step: f64,
    pub sideband_coarse_duration: f64,
    /// Fine sideband sweep half-span (rad/s), points, duration (s).
    pub sideband_fine_span: f64,
    pub sideband_fine_points: usize,
    pub sideband_fine_duration: f64,
    /// ζ sweep bounds and points.
    pub zeta_lo: f64,
    pub zeta_hi: f64,
    pub zeta_points: usize,
    /// κ coarse bounds/points and fine half-span/points.
    pub kappa_coarse_lo: f64,
    pub kappa_coarse_hi: f64,
    pub kappa_coarse_points: usize,
    pub kappa_fine_span: f64,
    pub kappa_fine_points: usize,
    /// Frame-rotation sweep half-spans (rad) and points.
    pub frame_span_m2: f64,
    pub frame_span_m32: f64,
    pub frame_points: usize,
    pub parity_points: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            shots_scan: 200,
            shots_fidelity: 500,
            noiseless: false,
            pulse_duration: 250e-6,
            reference_amp_ia: 100.0,
            reference_amp_global: 170.0,
            echo_blocks_per_side: 8,
            fallback_detuning: chain::DEFAULT_FALLBACK_DETUNING,
            align_span: 3.0e-6,
            align_points: 31,
            amp_scan_max: 240.0,
            amp_scan_points: 60,
            sideband_coarse_lo: TWO_PI * 1.95e6,
            sideband_coarse_hi: TWO_PI * 2.55e6,
            sideband_coarse_step: TWO_PI * 2.0e3,
            sideband_coarse_duration: 200e-6,
            sideband_fine_span: TWO_PI * 4.0e3,
            sideband_fine_points: 21,
            sideband_fine_duration: 400e-6,
            zeta_lo: 0.95,
            zeta_hi: 1.30,
            zeta_points: 41,
            kappa_coarse_lo: 0.70,
            kappa_coarse_hi: 1.40,
            kappa_coarse_points: 29,
            kappa_fine_span: 0.09,
            kappa_fine_points: 101,
            frame_span_m2: 0.61,
            frame_span_m32: 0.14,
            frame_points: 41,
            parity_points: 41,
        }
    }
}

/// One executed scan, kept for CSV emission and diagnostics.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScanRecord {
    pub name: String,
    pub parameter: String,
    pub shots: u32,
    pub points: Vec<PointResult>,
}

/// Drives the calibration schedule over a backend.
pub struct Pipeline<'a> {
    backend: &'a mut dyn Backend,
    pub trap: TrapConfig,
    pub cfg: PipelineConfig,
    next_id: u64,
    pub scans: Vec<ScanRecord>,
}

fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

impl<'a> Pipeline<'a> {
    pub fn new(backend: &'a mut dyn Backend, trap: TrapConfig, cfg: PipelineConfig) -> Self {
        Pipeline { backend, trap, cfg, next_id: 1, scans: Vec::new() }
    }

    fn shots(&self) -> u32 {
        if self.cfg.noiseless {
            0
        } else {
            self.cfg.shots_scan
        }
    }

    fn run_scan(
        &mut self,
        name: &str,
        circuit: JobCircuit,
        sweep: Sweep,
        shots: u32,
    ) -> Result<Vec<PointResult>, CalibError> {
        let job = ExperimentJob {
            version: PROTOCOL_VERSION,
            id: self.next_id,
            circuit,
            sweep: sweep.clone(),
            shots,
        };
        self.next_id += 1;
        let result = self.backend.run(&job)?;
        self.scans.push(ScanRecord {
            name: name.to_string(),
            parameter: sweep.parameter,
            shots,
            points: result.points.clone(),
        });
        Ok(result.points)
    }

    fn series(points: &[PointResult], key: &str, shots: u32) -> Result<ShotData, CalibError> {
        let trials = if shots == 0 { 1.0 } else { shots as f64 };
        let mut x = Vec::with_capacity(points.len());
        let mut s = Vec::with_capacity(points.len());
        for p in points {
            let v = *p.counts.get(key).ok_or_else(|| CalibError::Protocol(format!(
                "missing outcome key '{key}' in scan point"
            )))?;
            x.push(p.x);
            s.push(v.min(trials));
        }
        ShotData::new(x, s, vec![trials; points.len()], key)
            .map_err(|e| CalibError::Record(e.to_string()))
    }

    /// Sum of several outcome keys as one series (e.g. the even-parity
    /// population).
    fn series_sum(points: &[PointResult], keys: &[&str], shots: u32) -> Result<ShotData, CalibError> {
        let trials = if shots == 0 { 1.0 } else { shots as f64 };
        let mut x = Vec::with_capacity(points.len());
        let mut s = Vec::with_capacity(points.len());
        for p in points {
            let mut acc = 0.0;
            for key in keys {
                acc += p.counts.get(*key).copied().unwrap_or(0.0);
            }
            x.push(p.x);
            s.push(acc.min(trials));
        }
        ShotData::new(x, s, vec![trials; points.len()], "sum")
            .map_err(|e| CalibError::Record(e.to_string()))
    }

    // -- stage 1: chain alignment --------------------------------------------

    /// Sweeps the well position, fits each ion's transfer peak, and picks
    /// the position maximizing the average fitted transfer (ties toward the
    /// smallest |position|).
    pub fn align_chain(&mut self, rec: &mut CalibrationRecord) -> Result<f64, CalibError> {
        let stage = "align-chain";
        let span = self.cfg.align_span;
        let sweep = Sweep::new("well_position", grid(-span, span, self.cfg.align_points));
        let shots = self.shots();
        let points = self.run_scan(stage, JobCircuit::AlignmentTransfer, sweep, shots)?;
        let mut fits = Vec::new();
        for pos in 0..self.trap.ion_count {
            let label = self.trap.qubit_label(pos);
            let data = Self::series(&points, &format!("q{label}:1"), shots)?;
            let fit = fit_gaussian_peak(&data).map_err(|e| CalibError::Fit {
                stage: format!("{stage} (q{label})"),
                source: e,
            })?;
            fits.push((fit.get("center"), fit.get("sigma"), fit.get("amplitude"), fit.get("offset")));
        }
        // Dense argmax of the average fitted transfer model.
        let dense = grid(-span, span, 4001);
        let mut best = (f64::MIN, 0.0f64);
        for &x in &dense {
            let avg: f64 = fits
                .iter()
                .map(|&(c, s, a, o)| fit::gaussian_model(x, c, s, a, o))
                .sum::<f64>()
                / fits.len() as f64;
            let better = avg > best.0 + 1e-12
                || ((avg - best.0).abs() <= 1e-12 && x.abs() < best.1.abs());
            if better {
                best = (avg, x);
            }
        }
        rec.well_position = Some(best.1);
        rec.checkpoint = rec.checkpoint.max(Checkpoint::Aligned);
        Ok(best.1)
    }

    // -- stage 2: π-time amplitude calibration --------------------------------

    /// Amplitude-sweep Rabi scans per ion and geometry plus the global-beam
    /// scan; fits the saturation response and computes π-time amplitudes.
    pub fn calibrate_pi_times(&mut self, rec: &mut CalibrationRecord) -> Result<(), CalibError> {
        let stage = "pi-times";
        let shots = self.shots();
        let amps = grid(
            self.cfg.amp_scan_max / self.cfg.amp_scan_points as f64,
            self.cfg.amp_scan_max,
            self.cfg.amp_scan_points,
        );
        // Scan durations: 10× the co-propagating π-time, 3× counter; the
        // global beam scanned at an intermediate fixed duration.
        let plans = [
            (BeamGeometry::CoPropagating, 250e-6, Some(25e-6)),
            (BeamGeometry::CounterPropagating, 30e-6, Some(10e-6)),
        ];
        for pos in 0..self.trap.ion_count {
            let label = self.trap.qubit_label(pos);
            for (geometry, scan_t, pi_t) in plans {
                let name = format!("{stage}-q{label}-{}", geometry.key());
                let points = self.run_scan(
                    &name,
                    JobCircuit::RabiAmplitudeScan { ion: label, geometry, duration: scan_t },
                    Sweep::new("amplitude", amps.clone()),
                    shots,
                )?;
                let data = Self::series(&points, "1", shots)?;
                let fit = fit_amplitude_scan(&data, scan_t).map_err(fit_err(&name))?;
                let aom = AomModel::new(fit.get("a_sat"), fit.get("Xi"))?;
                let pi_time = pi_t.unwrap();
                let pi_amplitude = aom.inverse(PI / pi_time)?;
                rec.pi_times.insert(
                    format!("q{label}:{}", geometry.key()),
                    PiTimeCal {
                        geometry,
                        aom,
                        pi_amplitude,
                        pi_time,
                        fit_sigma: (fit.sigma("a_sat"), fit.sigma("Xi")),
                    },
                );
            }
        }
        // Global-beam saturation scan (used for θ scaling, not π pulses).
        let name = format!("{stage}-global");
        let points = self.run_scan(
            &name,
            JobCircuit::RabiAmplitudeScan {
                ion: self.trap.qubit_label(0),
                geometry: BeamGeometry::Global,
                duration: 50e-6,
            },
            Sweep::new("amplitude", amps),
            shots,
        )?;
        let data = Self::series(&points, "1", shots)?;
        let fit = fit_amplitude_scan(&data, 50e-6).map_err(fit_err(&name))?;
        rec.pi_times.insert(
            "global".to_string(),
            PiTimeCal {
                geometry: BeamGeometry::Global,
                aom: AomModel::new(fit.get("a_sat"), fit.get("Xi"))?,
                pi_amplitude: 0.0,
                pi_time: 0.0,
                fit_sigma: (fit.sigma("a_sat"), fit.sigma("Xi")),
            },
        );
        rec.checkpoint = rec.checkpoint.max(Checkpoint::PiTimes);
        Ok(())
    }

    // -- stage 3: sideband finding --------------------------------------------

    /// Coarse scan with peak finding on an edge ion, then parallel fine
    /// Gaussian fits with ions assigned to modes by coupling strength.
    pub fn find_sidebands(&mut self, rec: &mut CalibrationRecord) -> Result<(), CalibError> {
        let stage = "sidebands";
        let shots = self.shots();
        let edge = self.trap.qubit_label(0);
        let n_pts = ((self.cfg.sideband_coarse_hi - self.cfg.sideband_coarse_lo)
            / self.cfg.sideband_coarse_step)
            .round() as usize
            + 1;
        let coarse_grid = grid(self.cfg.sideband_coarse_lo, self.cfg.sideband_coarse_hi, n_pts);
        let points = self.run_scan(
            &format!("{stage}-coarse"),
            JobCircuit::SidebandProbe { ion: edge, duration: self.cfg.sideband_coarse_duration },
            Sweep::new("probe_freq", coarse_grid),
            shots,
        )?;
        let data = Self::series(&points, "1", shots)?;
        let peaks = find_peaks(&data.x, &data.probabilities(), 0.15, TWO_PI * 12e3);
        let nominal = chain::chain_spectra(&self.trap).map_err(|e| CalibError::Stage {
            stage: stage.into(),
            message: e.to_string(),
        })?;
        let expected = 2 * self.trap.ion_count;
        if peaks.len() != expected {
            return Err(CalibError::Stage {
                stage: stage.into(),
                message: format!("expected {expected} sideband peaks, found {}", peaks.len()),
            });
        }
        // Assign each found peak to the nearest nominal mode.
        let mut assigned: Vec<Vec<Option<f64>>> =
            nominal.iter().map(|s| vec![None; s.mode_count()]).collect();
        for &p in &peaks {
            let mut best = (f64::MAX, 0usize, 0usize);
            for (m, spec) in nominal.iter().enumerate() {
                for (k, &f) in spec.frequencies.iter().enumerate() {
                    let d = (p - f).abs();
                    if d < best.0 {
                        best = (d, m, k);
                    }
                }
            }
            assigned[best.1][best.2] = Some(p);
        }
        if assigned.iter().flatten().any(Option::is_none) {
            return Err(CalibError::Stage {
                stage: stage.into(),
                message: "coarse peaks do not cover every mode".into(),
            });
        }

        // Fine scans: within each manifold, assign one ion per mode by
        // descending |η| with each ion used once.
        rec.sidebands.clear();
        for (m, spec) in nominal.iter().enumerate() {
            let order = assign_ions_by_coupling(spec);
            let mut centers = vec![0.0; spec.mode_count()];
            for (k, &pos) in order.iter().enumerate() {
                let label = self.trap.qubit_label(pos);
                let guess = assigned[m][k].unwrap();
                let sweep = Sweep::new(
                    "probe_freq",
                    grid(
                        guess - self.cfg.sideband_fine_span,
                        guess + self.cfg.sideband_fine_span,
                        self.cfg.sideband_fine_points,
                    ),
                );
                let name = format!("{stage}-fine-m{m}k{k}");
                let pts = self.run_scan(
                    &name,
                    JobCircuit::SidebandProbe {
                        ion: label,
                        duration: self.cfg.sideband_fine_duration,
                    },
                    sweep,
                    shots,
                )?;
                let series = Self::series(&pts, "1", shots)?;
                let fit = fit_gaussian_peak(&series).map_err(fit_err(&name))?;
                centers[k] = fit.get("center");
            }
            rec.sidebands.push(centers);
        }
        rec.checkpoint = rec.checkpoint.max(Checkpoint::Sidebands);
        Ok(())
    }

    /// Recovered spectra: fitted frequencies with model participation and
    /// Lamb-Dicke factors recomputed at the fitted frequencies. Falls back
    /// to the nominal model before the sideband stage.
    pub fn recovered_spectra(&self, rec: &CalibrationRecord) -> Result<Vec<ModeSpectrum>, CalibError> {
        recovered_spectra_free(&self.trap, rec)
    }

    // -- stage 4: pair planning ------------------------------------------------

    /// Mode-pair and detuning selection per pair on the recovered spectra.
    pub fn plan_pairs(&mut self, rec: &mut CalibrationRecord) -> Result<(), CalibError> {
        let spectra = self.recovered_spectra(rec)?;
        let others: Vec<&ModeSpectrum> = spectra[1..].iter().collect();
        let n = self.trap.ion_count;
        for pi in 0..n {
            for pj in pi + 1..n {
                let qi = self.trap.qubit_label(pi);
                let qj = self.trap.qubit_label(pj);
                let plan = chain::select_mode_pair(
                    &self.trap,
                    &spectra[0],
                    &others,
                    qi,
                    qj,
                    self.cfg.fallback_detuning,
                )
                .map_err(|e| CalibError::Stage {
                    stage: "plan-pairs".into(),
                    message: e.to_string(),
                })?;
                rec.pairs.insert(PairCal::key(qi, qj), pair_from_plan(&plan, &self.cfg));
            }
        }
        rec.checkpoint = rec.checkpoint.max(Checkpoint::Planned);
        Ok(())
    }

    // -- stage 5: ζ echo calibration --------------------------------------------

    /// Scans ζ_br in the microwave echo and stores each ion's coherence
    /// optimum.
    pub fn calibrate_zeta(&mut self, rec: &mut CalibrationRecord) -> Result<(), CalibError> {
        let stage = "zeta-echo";
        let shots = self.shots();
        let sweep = Sweep::new("zeta", grid(self.cfg.zeta_lo, self.cfg.zeta_hi, self.cfg.zeta_points));
        let points = self.run_scan(
            stage,
            JobCircuit::ZetaEcho { blocks_per_side: self.cfg.echo_blocks_per_side },
            sweep,
            shots,
        )?;
        for pos in 0..self.trap.ion_count {
            let label = self.trap.qubit_label(pos);
            let name = format!("{stage}-q{label}");
            let data = Self::series(&points, &format!("q{label}:0"), shots)?;
            let fit = fit_gaussian_peak(&data).map_err(fit_err(&name))?;
            rec.zeta.insert(
                format!("q{label}"),
                ZetaCal { zeta: fit.get("center"), fit_sigma: fit.sigma("center") },
            );
        }
        // Fold the per-ion ratios into every pair plan.
        let zeta_of = |label: i32| -> f64 {
            rec.zeta.get(&format!("q{label}")).map(|z| z.zeta).unwrap_or(1.0)
        };
        let updates: Vec<(String, f64, f64)> = rec
            .pairs
            .iter()
            .map(|(k, p)| (k.clone(), zeta_of(p.qubit_i), zeta_of(p.qubit_j)))
            .collect();
        for (k, zi, zj) in updates {
            let p = rec.pairs.get_mut(&k).unwrap();
            p.zeta_i = zi;
            p.zeta_j = zj;
        }
        rec.checkpoint = rec.checkpoint.max(Checkpoint::Zeta);
        Ok(())
    }

    fn settings_for(&self, pair: &PairCal) -> MsSettings {
        MsSettings {
            pair: (pair.qubit_i, pair.qubit_j),
            delta_c: pair.delta_c,
            duration: self.cfg.pulse_duration,
            amp_ia: pair.amp_ia,
            zeta_i: pair.zeta_i,
            zeta_j: pair.zeta_j,
            kappa: pair.kappa,
            amp_global: pair.amp_global,
            frame_rotation: 0.0,
        }
    }

    // -- diagnostic: symmetric detuning scan -------------------------------------

    /// Sweeps the symmetric detuning δ_c and reports the populations plus
    /// the zero/two-bright crossings where the one-bright population stays
    /// suppressed. Diagnostic only; the schedule plans detunings from the
    /// sideband fits instead.
    pub fn symmetric_detuning_scan(
        &mut self,
        rec: &CalibrationRecord,
        qi: i32,
        qj: i32,
    ) -> Result<DetuningScan, CalibError> {
        let stage = "detuning-scan";
        let pair = rec.pair(qi, qj).ok_or_else(|| CalibError::Stage {
            stage: stage.into(),
            message: "pair not planned".into(),
        })?;
        let spectra = self.recovered_spectra(rec)?;
        let lo = spectra[0].frequencies[spectra[0].mode_count() - 1] - TWO_PI * 30e3;
        let hi = spectra[0].frequencies[0] + TWO_PI * 60e3;
        let sweep = Sweep::new("delta_c", grid(lo, hi, 141));
        let shots = self.shots();
        let settings = self.settings_for(pair);
        let points = self.run_scan(
            stage,
            JobCircuit::MsLoop { settings, gates: 1 },
            sweep,
            shots,
        )?;
        let trials = if shots == 0 { 1.0 } else { shots as f64 };
        let mut crossings = Vec::new();
        let mut prev: Option<(f64, f64)> = None;
        for p in &points {
            let p00 = p.counts["00"] / trials;
            let p11 = p.counts["11"] / trials;
            let pone = (p.counts["01"] + p.counts["10"]) / trials;
            if let Some((x0, d0)) = prev {
                let d1 = p00 - p11;
                if d0 * d1 < 0.0 && pone < 0.3 {
                    crossings.push(x0 + (p.x - x0) * d0 / (d0 - d1));
                }
            }
            prev = Some((p.x, p00 - p11));
        }
        Ok(DetuningScan { points, crossings })
    }

    // -- stage 6: κ amplitude calibration ----------------------------------------

    /// Coarse crossing search then fine linear crossing of P₀₀ and P₁₁;
    /// stores the combined IA amplitude scale.
    pub fn calibrate_kappa(
        &mut self,
        rec: &mut CalibrationRecord,
        qi: i32,
        qj: i32,
    ) -> Result<f64, CalibError> {
        let stage = format!("kappa-{qi},{qj}");
        let key = PairCal::key(qi, qj);
        let pair = rec.pairs.get(&key).cloned().ok_or_else(|| CalibError::Stage {
            stage: stage.clone(),
            message: "pair not planned".into(),
        })?;
        let shots = self.shots();
        let mut settings = self.settings_for(&pair);
        settings.kappa = 1.0;

        // Coarse: locate the P00/P11 crossing.
        let sweep = Sweep::new(
            "kappa",
            grid(self.cfg.kappa_coarse_lo, self.cfg.kappa_coarse_hi, self.cfg.kappa_coarse_points),
        );
        let points = self.run_scan(
            &format!("{stage}-coarse"),
            JobCircuit::MsLoop { settings: settings.clone(), gates: 1 },
            sweep,
            shots,
        )?;
        let trials = if shots == 0 { 1.0 } else { shots as f64 };
        let mut kappa0 = None;
        let mut prev: Option<(f64, f64)> = None;
        for p in &points {
            let d = (p.counts["00"] - p.counts["11"]) / trials;
            if let Some((x0, d0)) = prev {
                if d0 > 0.0 && d <= 0.0 {
                    kappa0 = Some(x0 + (p.x - x0) * d0 / (d0 - d));
                    break;
                }
            }
            prev = Some((p.x, d));
        }
        let kappa0 = kappa0.ok_or_else(|| CalibError::Stage {
            stage: stage.clone(),
            message: "no zero/two-bright crossing in the coarse scan".into(),
        })?;

        // Fine: two linear-crossing passes at precision shot counts.
        // Single-gate scans keep the crossing unbiased by the not yet
        // compensated residual light shift (multi-gate loops dephase
        // between gates); the second pass uses a narrow window where the
        // curvature of cos(θ(κ)) is negligible, with a dense grid for the
        // statistics.
        let fine_shots = if self.cfg.noiseless { 0 } else { self.cfg.shots_fidelity };
        let mut center = kappa0;
        for (pass, (span, pts)) in [
            (self.cfg.kappa_fine_span, 31),
            (self.cfg.kappa_fine_span / 2.2, self.cfg.kappa_fine_points),
        ]
        .iter()
        .enumerate()
        {
            let fine = Sweep::new(
                "kappa",
                grid(center * (1.0 - span), center * (1.0 + span), *pts),
            );
            let points = self.run_scan(
                &format!("{stage}-fine{}", pass + 1),
                JobCircuit::MsLoop { settings: settings.clone(), gates: 1 },
                fine,
                fine_shots,
            )?;
            let p00 = Self::series(&points, "00", fine_shots)?;
            let p11 = Self::series(&points, "11", fine_shots)?;
            center = linear_crossing(&p00, &p11).map_err(fit_err(&stage))?.x;
        }
        let kappa = center;
        let p = rec.pairs.get_mut(&key).unwrap();
        p.kappa = kappa;
        rec.checkpoint = rec.checkpoint.max(Checkpoint::Kappa);
        Ok(kappa)
    }

    // -- stage 7: frame-rotation anchors -------------------------------------------

    /// Scans φ_f(τ) for M×MS(π/M) at M = 2 and M = 32, fitting the |11⟩
    /// peak; stores both anchors. Returns (anchor_m2, anchor_m32,
    /// |gaussian − MLE| center difference in rad at M = 2).
    pub fn calibrate_frame_rotation(
        &mut self,
        rec: &mut CalibrationRecord,
        qi: i32,
        qj: i32,
    ) -> Result<(f64, f64, f64), CalibError> {
        let stage = format!("frame-{qi},{qj}");
        let key = PairCal::key(qi, qj);
        let pair = rec.pairs.get(&key).cloned().ok_or_else(|| CalibError::Stage {
            stage: stage.clone(),
            message: "pair not planned".into(),
        })?;
        let global_aom = rec
            .pi_times
            .get("global")
            .map(|p| p.aom)
            .ok_or_else(|| CalibError::Stage {
                stage: stage.clone(),
                message: "global AOM not calibrated".into(),
            })?;
        let shots = self.shots();
        let mut anchors = [0.0f64; 2];
        let mut mle_diff = 0.0;
        for (slot, (m_gates, span)) in
            [(2u32, self.cfg.frame_span_m2), (32u32, self.cfg.frame_span_m32)].iter().enumerate()
        {
            let theta = FRAC_PI_2 * 2.0 / *m_gates as f64;
            let mut settings = self.settings_for(&pair);
            settings.amp_global = theta_to_global_amplitude(
                &global_aom,
                pair.amp_global,
                FRAC_PI_2,
                theta,
            )?;
            let name = format!("{stage}-m{m_gates}");
            let sweep = Sweep::new("frame_rotation", grid(-span, *span, self.cfg.frame_points));
            let points = self.run_scan(
                &name,
                JobCircuit::MsLoop { settings, gates: *m_gates },
                sweep,
                shots,
            )?;
            let data = Self::series(&points, "11", shots)?;
            let fit = fit_gaussian_peak(&data).map_err(fit_err(&name))?;
            anchors[slot] = fit.get("center");
            if *m_gates == 2 {
                if let Ok(mle) = mle_upper_half_gaussian(&data) {
                    mle_diff = (mle.get("center") - fit.get("center")).abs();
                }
            }
        }
        let p = rec.pairs.get_mut(&key).unwrap();
        p.frame_anchor_m2 = Some(anchors[0]);
        p.frame_anchor_m32 = Some(anchors[1]);
        rec.checkpoint = rec.checkpoint.max(Checkpoint::FrameRotation);
        Ok((anchors[0], anchors[1], mle_diff))
    }

    // -- stage 8: fidelity ------------------------------------------------------

    /// Population measurement plus parity scan; Wilson 2σ intervals on the
    /// populations and a 2σ likelihood profile on the parity contrast,
    /// combined in quadrature.
    pub fn estimate_fidelity(
        &mut self,
        rec: &mut CalibrationRecord,
        qi: i32,
        qj: i32,
        theta: f64,
    ) -> Result<FidelityReport, CalibError> {
        let stage = format!("fidelity-{qi},{qj}");
        let key = PairCal::key(qi, qj);
        let pair = rec.pairs.get(&key).cloned().ok_or_else(|| CalibError::Stage {
            stage: stage.clone(),
            message: "pair not planned".into(),
        })?;
        let global_aom = rec.pi_times.get("global").map(|p| p.aom).ok_or_else(|| {
            CalibError::Stage { stage: stage.clone(), message: "global AOM not calibrated".into() }
        })?;
        let mut settings = self.settings_for(&pair);
        settings.amp_global =
            theta_to_global_amplitude(&global_aom, pair.amp_global, FRAC_PI_2, theta)?;
        settings.frame_rotation = pair.frame_rotation_for(theta).unwrap_or(0.0);
        let shots = if self.cfg.noiseless { 0 } else { self.cfg.shots_fidelity };
        let trials = if shots == 0 { 1.0 } else { shots as f64 };

        // Populations after one gate.
        let points = self.run_scan(
            &format!("{stage}-populations"),
            JobCircuit::MsLoop { settings: settings.clone(), gates: 1 },
            Sweep::single("frame_rotation", settings.frame_rotation),
            shots,
        )?;
        let counts = &points[0].counts;
        let p00 = counts["00"] / trials;
        let p11 = counts["11"] / trials;
        let iv00 = wilson_interval(counts["00"].min(trials), trials, 2.0);
        let iv11 = wilson_interval(counts["11"].min(trials), trials, 2.0);

        // Parity scan.
        let sweep = Sweep::new("analysis_phase", grid(0.0, TWO_PI, self.cfg.parity_points));
        let points = self.run_scan(
            &format!("{stage}-parity"),
            JobCircuit::ParityScan { settings },
            sweep,
            shots,
        )?;
        let even = Self::series_sum(&points, &["00", "11"], shots)?;
        let parity = mle_parity_amplitude(&even).map_err(fit_err(&stage))?;
        let amp = parity.get("amplitude");
        let iv_amp = parity.ci95["amplitude"];

        let est = fidelity_estimate(p00, p11, amp, theta, Some([iv00, iv11, iv_amp]));
        let report = FidelityReport {
            theta,
            value: est.value,
            minus: est.minus,
            plus: est.plus,
            p00,
            p11,
            parity_amplitude: amp,
        };
        let p = rec.pairs.get_mut(&key).unwrap();
        p.fidelity = Some(report.clone());
        rec.checkpoint = rec.checkpoint.max(Checkpoint::Fidelity);
        Ok(report)
    }

    // -- full schedule ------------------------------------------------------------

    /// Runs the calibration schedule in order, resuming from the record's
    /// checkpoint. Fidelity is estimated at θ = π/2 for the first pair.
    pub fn run_schedule(&mut self, rec: &mut CalibrationRecord) -> Result<(), CalibError> {
        if rec.checkpoint < Checkpoint::Aligned {
            self.align_chain(rec)?;
        }
        if rec.checkpoint < Checkpoint::PiTimes {
            self.calibrate_pi_times(rec)?;
        }
        if rec.checkpoint < Checkpoint::Sidebands {
            self.find_sidebands(rec)?;
        }
        if rec.checkpoint < Checkpoint::Planned {
            self.plan_pairs(rec)?;
        }
        if rec.checkpoint < Checkpoint::Zeta {
            self.calibrate_zeta(rec)?;
        }
        let pairs: Vec<(i32, i32)> =
            rec.pairs.values().map(|p| (p.qubit_i, p.qubit_j)).collect();
        if rec.checkpoint < Checkpoint::Kappa {
            for &(qi, qj) in &pairs {
                self.calibrate_kappa(rec, qi, qj)?;
            }
        }
        if rec.checkpoint < Checkpoint::FrameRotation {
            for &(qi, qj) in &pairs {
                self.calibrate_frame_rotation(rec, qi, qj)?;
            }
        }
        if rec.checkpoint < Checkpoint::Fidelity {
            let (qi, qj) = pairs[0];
            self.estimate_fidelity(rec, qi, qj, FRAC_PI_2)?;
        }
        rec.timestamp_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(())
    }
}

/// Model-side reconstruction of a calibrated MS(θ) drive from a record:
/// recovered mode frequencies, Rabi peaks solved so the drive realizes the
/// calibrated angle, and the residual light shift implied by the frame
/// anchors. `tone_phase_i/j` come from the resolved waveform phases.
#[allow(clippy::too_many_arguments)]
pub fn model_drive(
    trap: &TrapConfig,
    rec: &CalibrationRecord,
    qi: i32,
    qj: i32,
    theta: f64,
    tone_phase_i: f64,
    tone_phase_j: f64,
    duration: f64,
) -> Result<crate::dynamics::GateDrive, CalibError> {
    use crate::dynamics::{entangling_angle, GateDrive, ModeLine};
    let pair = rec.pair(qi, qj).ok_or_else(|| CalibError::Stage {
        stage: "model-drive".into(),
        message: format!("pair ({qi},{qj}) not calibrated"),
    })?;
    let spectra = recovered_spectra_free(trap, rec)?;
    let pos_i = trap.position_of(qi).map_err(|e| CalibError::Record(e.to_string()))?;
    let pos_j = trap.position_of(qj).map_err(|e| CalibError::Record(e.to_string()))?;
    let mut modes = Vec::new();
    for spec in &spectra {
        for k in 0..spec.mode_count() {
            modes.push(ModeLine {
                frequency: spec.frequencies[k],
                eta_i: spec.lamb_dicke[k][pos_i],
                eta_j: spec.lamb_dicke[k][pos_j],
            });
        }
    }
    let frame = pair.frame_rotation_for(theta).unwrap_or(0.0);
    let pulse = crate::pulse::PulseProgram::new(
        duration,
        pair.amp_ia * pair.kappa / pair.zeta_i.sqrt(),
        pair.amp_ia * pair.kappa * pair.zeta_i.sqrt(),
        (theta / FRAC_PI_2).clamp(0.0, 1.0),
        frame,
        pair.delta_c,
        (qi, qj),
    )?;
    let mut drive = GateDrive::new(pulse, modes, 1.0, 1.0);
    drive.tone_phase_i = tone_phase_i;
    drive.tone_phase_j = tone_phase_j;
    let theta_unit = entangling_angle(&drive).map_err(|e| CalibError::Stage {
        stage: "model-drive".into(),
        message: e.to_string(),
    })?;
    if theta_unit.abs() < 1e-30 {
        return Err(CalibError::Stage {
            stage: "model-drive".into(),
            message: "drive geometry produces no entanglement".into(),
        });
    }
    let scale = (theta.abs() / theta_unit.abs()).sqrt();
    drive.rabi_peak_i = scale;
    drive.rabi_peak_j = scale;
    // Residual shift implied by the anchors, canceled by the programmed
    // frame rotation.
    let env = drive.pulse.envelope();
    let ls = -frame / env.squared_integral_total();
    Ok(drive.with_lightshift(ls, ls))
}

/// `Pipeline::recovered_spectra` without a backend.
pub fn recovered_spectra_free(
    trap: &TrapConfig,
    rec: &CalibrationRecord,
) -> Result<Vec<ModeSpectrum>, CalibError> {
    let nominal = chain::chain_spectra(trap).map_err(|e| CalibError::Stage {
        stage: "recovered-spectra".into(),
        message: e.to_string(),
    })?;
    if rec.sidebands.is_empty() {
        return Ok(nominal);
    }
    let mut out = nominal;
    for (m, spec) in out.iter_mut().enumerate() {
        let fitted = &rec.sidebands[m];
        for k in 0..spec.mode_count() {
            spec.frequencies[k] = fitted[k];
            let zpf = (HBAR / (2.0 * trap.ion_mass * fitted[k])).sqrt();
            for i in 0..trap.ion_count {
                spec.lamb_dicke[k][i] = spec.participation[k][i] * trap.raman_delta_k * zpf;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DetuningScan {
    pub points: Vec<PointResult>,
    /// δ_c values where the zero- and two-bright populations cross with the
    /// one-bright population suppressed (rad/s).
    pub crossings: Vec<f64>,
}

fn pair_from_plan(plan: &GatePairPlan, cfg: &PipelineConfig) -> PairCal {
    PairCal {
        qubit_i: plan.qubit_i,
        qubit_j: plan.qubit_j,
        mode_upper: plan.mode_upper,
        mode_lower: plan.mode_lower,
        reference_mode: plan.reference_mode,
        balanced: plan.balanced,
        delta_c: plan.delta_c,
        detuning: plan.detuning,
        zeta_i: 1.0,
        zeta_j: 1.0,
        kappa: 1.0,
        amp_ia: cfg.reference_amp_ia,
        amp_global: cfg.reference_amp_global,
        frame_anchor_m2: None,
        frame_anchor_m32: None,
        fidelity: None,
    }
}

/// Local maxima above `threshold` separated by at least `min_separation`,
/// refined by a 3-point parabolic interpolation.
fn find_peaks(x: &[f64], y: &[f64], threshold: f64, min_separation: f64) -> Vec<f64> {
    let n = y.len();
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    for i in 1..n - 1 {
        if y[i] >= threshold && y[i] >= y[i - 1] && y[i] >= y[i + 1] {
            let denom = y[i - 1] - 2.0 * y[i] + y[i + 1];
            let offset = if denom.abs() > 1e-12 {
                0.5 * (y[i - 1] - y[i + 1]) / denom
            } else {
                0.0
            };
            let xc = x[i] + offset.clamp(-1.0, 1.0) * (x[1] - x[0]);
            match peaks.last() {
                Some(&(xl, yl)) if (xc - xl).abs() < min_separation => {
                    if y[i] > yl {
                        *peaks.last_mut().unwrap() = (xc, y[i]);
                    }
                }
                _ => peaks.push((xc, y[i])),
            }
        }
    }
    peaks.into_iter().map(|(xc, _)| xc).collect()
}

/// One ion per mode, assigned in descending coupling strength with each ion
/// used at most once: every assigned ion couples at least as strongly as
/// any ion left unassigned for that mode.
pub fn assign_ions_by_coupling(spec: &ModeSpectrum) -> Vec<usize> {
    let n = spec.mode_count();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for k in 0..n {
        for i in 0..n {
            pairs.push((spec.lamb_dicke[k][i].abs(), k, i));
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut mode_owner = vec![usize::MAX; n];
    let mut ion_used = vec![false; n];
    for (_, k, i) in pairs {
        if mode_owner[k] == usize::MAX && !ion_used[i] {
            mode_owner[k] = i;
            ion_used[i] = true;
        }
    }
    mode_owner
}

/// Writes every retained scan as a CSV file under `dir`: column 1 is the
/// swept parameter, remaining columns the outcome counts.
pub fn write_scan_csvs(scans: &[ScanRecord], dir: &std::path::Path) -> Result<(), CalibError> {
    std::fs::create_dir_all(dir).map_err(|e| CalibError::Record(e.to_string()))?;
    let mut name_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for scan in scans {
        let n = name_counts.entry(scan.name.as_str()).or_insert(0);
        let path = if *n == 0 {
            dir.join(format!("{}.csv", scan.name))
        } else {
            dir.join(format!("{}-{}.csv", scan.name, n))
        };
        *n += 1;
        let mut w = csv::Writer::from_path(&path).map_err(|e| CalibError::Record(e.to_string()))?;
        let keys: Vec<String> = scan
            .points
            .first()
            .map(|p| p.counts.keys().cloned().collect())
            .unwrap_or_default();
        let mut header = vec![scan.parameter.clone()];
        header.extend(keys.iter().map(|k| format!("count_{k}")));
        w.write_record(&header).map_err(|e| CalibError::Record(e.to_string()))?;
        for p in &scan.points {
            let mut row = vec![format!("{:.12e}", p.x)];
            for k in &keys {
                row.push(format!("{}", p.counts.get(k).copied().unwrap_or(0.0)));
            }
            w.write_record(&row).map_err(|e| CalibError::Record(e.to_string()))?;
        }
        w.flush().map_err(|e| CalibError::Record(e.to_string()))?;
    }
    Ok(())
}
