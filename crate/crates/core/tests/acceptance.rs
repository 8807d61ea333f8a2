//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (visible with `cargo test --test acceptance -- --nocapture`).

use std::f64::consts::{FRAC_PI_2, PI};

use ioncal::calib::protocol::{Backend, ExperimentJob, JobCircuit, MsSettings, Sweep, PROTOCOL_VERSION};
use ioncal::calib::record::CalibrationRecord;
use ioncal::calib::virt::{VirtualExperiment, VirtualTruth};
use ioncal::calib::{Pipeline, PipelineConfig};
use ioncal::chain::{chain_spectra, select_mode_pair, TrapConfig, DEFAULT_FALLBACK_DETUNING};
use ioncal::comb::{CombLabel, CombModel, CombSpec};
use ioncal::compiler::{circuit_unitary, global_phase_distance, Circuit, Gate};
use ioncal::dynamics::{
    entangling_angle, frequency_robustness, pop_diff, simulate_gate_analytic, simulate_gate_fock,
    FockInitial, FockOptions, GateDrive, ModeLine,
};
use ioncal::fit::{
    amplitude_scan_model, fit_amplitude_scan, fit_gaussian_peak, fit_parity_decay,
    mle_upper_half_gaussian, odd_parity_model, p11_loop_model, ShotData,
};
use ioncal::pulse::PulseProgram;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const TWO_PI: f64 = 2.0 * PI;

fn pass(name: &str, detail: String) {
    println!("criterion {name}: PASS — {detail}");
}

fn reference_comb(delta_c: f64) -> CombModel {
    CombModel::new(CombSpec::reference(delta_c))
        .unwrap()
        .with_target_rabi(TWO_PI * 122.1e3, 2.0)
        .unwrap()
}

fn two_ion_drive() -> GateDrive {
    let config = TrapConfig::default_chain(2);
    let spectra = chain_spectra(&config).unwrap();
    let plan = select_mode_pair(
        &config,
        &spectra[0],
        &[&spectra[1]],
        0,
        1,
        DEFAULT_FALLBACK_DETUNING,
    )
    .unwrap();
    let mut modes = Vec::new();
    for spec in &spectra {
        for k in 0..spec.mode_count() {
            modes.push(ModeLine {
                frequency: spec.frequencies[k],
                eta_i: spec.lamb_dicke[k][0],
                eta_j: spec.lamb_dicke[k][1],
            });
        }
    }
    let pulse = PulseProgram::new(250e-6, 0.0, 0.0, 1.0, 0.0, plan.delta_c, (0, 1)).unwrap();
    let rabi = TWO_PI * 122.1e3;
    GateDrive::new(pulse, modes, rabi, rabi)
}

fn virt(seed: u64) -> VirtualExperiment {
    VirtualExperiment::new(
        VirtualTruth::default_chain(2),
        CombSpec::reference(TWO_PI * 2.34e6),
        seed,
    )
    .unwrap()
}

#[test]
fn criterion_01_lightshift_headline() {
    let start = std::time::Instant::now();
    let model = reference_comb(TWO_PI * 2.34e6);
    let total = model.total_shift().unwrap().total;
    let hz = total.abs() / TWO_PI;
    assert!(
        (418.0 * 0.9..=418.0 * 1.1).contains(&hz),
        "criterion 1 (light-shift headline): FAIL — total {hz:.1} Hz outside 418 Hz ± 10%"
    );
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 5.0, "criterion 1 runtime {dt:?} over 5 s");
    pass("1 (light-shift headline)", format!("|Σ δ^LS| = {hz:.1} Hz vs 418 Hz ± 10% in {dt:?}"));
}

#[test]
fn criterion_02_magnitude_sanity() {
    let start = std::time::Instant::now();
    let delta_c = TWO_PI * 2.25e6;
    let model = CombModel::new(CombSpec::reference(delta_c))
        .unwrap()
        .with_target_rabi(TWO_PI * 125.0e3, 2.0)
        .unwrap();
    let shift = model.fourth_order_shift(CombLabel::Blue, CombLabel::Global).unwrap();
    let single_level_khz = shift.abs() / 2.0 / TWO_PI / 1e3;
    assert!(
        (1.5..=2.5).contains(&single_level_khz),
        "criterion 2 (magnitude sanity): FAIL — |Ω²/4δ| = {single_level_khz:.3} kHz outside 2 kHz ± 25%"
    );
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "criterion 2 runtime {dt:?} over 1 s");
    pass("2 (magnitude sanity)", format!("|Ω²/4δ| = {single_level_khz:.2} kHz in {dt:?}"));
}

#[test]
fn criterion_03_oracle_equivalence() {
    let start = std::time::Instant::now();
    let base = two_ion_drive().restricted_to_modes(&[0, 1]);
    let theta_unit = entangling_angle(&base).unwrap();
    let opts = FockOptions { n_max: 20, steps: Some(16_384), initial: FockInitial::ZeroZero };
    let mut worst: f64 = 0.0;
    // ζ-like residual-shift configurations run with the matching frame
    // rotation programmed, as calibrated drives are.
    for ls_hz in [0.0, 3911.0, 603.0] {
        for target in [PI / 32.0, PI / 8.0, FRAC_PI_2] {
            let mut d = base.clone();
            let scale = (target / theta_unit).sqrt();
            d.rabi_peak_i *= scale;
            d.rabi_peak_j *= scale;
            let ls = TWO_PI * ls_hz * (target / FRAC_PI_2);
            d = d.with_lightshift(ls, ls);
            d.pulse.frame_rotation_total = -ls * d.pulse.envelope().squared_integral_total();
            let a = simulate_gate_analytic(&d).unwrap();
            let f = simulate_gate_fock(&d, &opts).unwrap();
            let diff = pop_diff(&a.outcome.populations, &f.outcome.populations);
            worst = worst.max(diff);
            assert!(
                diff < 1e-6,
                "criterion 3 (oracle equivalence): FAIL — θ={target:.4}, shift {ls_hz} Hz: diff {diff:.3e}"
            );
        }
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 120.0, "criterion 3 runtime {dt:?} over 2 min");
    pass(
        "3 (oracle equivalence)",
        format!("worst population difference {worst:.2e} (< 1e-6) in {dt:?}"),
    );
}

#[test]
fn criterion_04_theta_calibration_closure() {
    let start = std::time::Instant::now();

    // Noiseless closure.
    let mut v = virt(19);
    let mut rec = CalibrationRecord::new(19, 2);
    let cfg = PipelineConfig { noiseless: true, ..PipelineConfig::default() };
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), cfg);
    pipe.find_sidebands(&mut rec).unwrap();
    pipe.plan_pairs(&mut rec).unwrap();
    pipe.calibrate_zeta(&mut rec).unwrap();
    let kappa = pipe.calibrate_kappa(&mut rec, 0, 1).unwrap();
    drop(pipe);
    let settings = |rec: &CalibrationRecord, kappa: f64| -> MsSettings {
        let p = rec.pair(0, 1).unwrap();
        MsSettings {
            pair: (0, 1),
            delta_c: p.delta_c,
            duration: 250e-6,
            amp_ia: p.amp_ia,
            zeta_i: p.zeta_i,
            zeta_j: p.zeta_j,
            kappa,
            amp_global: p.amp_global,
            frame_rotation: 0.0,
        }
    };
    let theta = entangling_angle(&v.ms_drive(&settings(&rec, kappa)).unwrap()).unwrap();
    let noiseless_err = (theta - FRAC_PI_2).abs();
    assert!(
        noiseless_err < 1e-3,
        "criterion 4 (θ closure): FAIL — noiseless θ error {noiseless_err:.2e} rad"
    );

    // 500-shot noise across 50 seeds.
    let mut pass_count = 0;
    let seeds = 50;
    for seed in 0..seeds {
        let mut v = virt(3000 + seed);
        let mut rec2 = rec.clone();
        let cfg = PipelineConfig {
            noiseless: false,
            shots_scan: 500,
            shots_fidelity: 500,
            ..PipelineConfig::default()
        };
        let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), cfg);
        let kappa = pipe.calibrate_kappa(&mut rec2, 0, 1).unwrap();
        drop(pipe);
        let theta = entangling_angle(&v.ms_drive(&settings(&rec2, kappa)).unwrap()).unwrap();
        if (theta - FRAC_PI_2).abs() / FRAC_PI_2 < 0.01 {
            pass_count += 1;
        }
    }
    assert!(
        pass_count * 100 >= seeds * 95,
        "criterion 4 (θ closure): FAIL — only {pass_count}/{seeds} seeds within 1%"
    );
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 600.0, "criterion 4 runtime {dt:?} over 10 min");
    pass(
        "4 (θ calibration closure)",
        format!(
            "noiseless error {noiseless_err:.1e} rad; {pass_count}/{seeds} noisy seeds within 1% in {dt:?}"
        ),
    );
}

#[test]
fn criterion_05_frequency_robustness() {
    let start = std::time::Instant::now();
    // Balanced 2-ion plan, κ-trimmed to π/2.
    let mut balanced = two_ion_drive();
    let th = entangling_angle(&balanced).unwrap();
    let scale = (FRAC_PI_2 / th).sqrt();
    balanced.rabi_peak_i *= scale;
    balanced.rabi_peak_j *= scale;
    let shifts: Vec<f64> = (-10..=10).map(|k| TWO_PI * 500.0 * k as f64).collect();
    let curve = frequency_robustness(&balanced, &shifts).unwrap();
    assert!(
        curve.max_rel_deviation < 0.01,
        "criterion 5 (frequency robustness): FAIL — balanced plan deviates {:.3}% within ±5 kHz",
        curve.max_rel_deviation * 100.0
    );

    // Unbalanced center-ion plan violates the same bound.
    let config = TrapConfig::default_chain(3);
    let spectra = chain_spectra(&config).unwrap();
    let fallback =
        select_mode_pair(&config, &spectra[0], &[&spectra[1]], 0, 1, DEFAULT_FALLBACK_DETUNING)
            .unwrap();
    assert!(!fallback.balanced);
    let mut modes = Vec::new();
    for spec in &spectra {
        for k in 0..spec.mode_count() {
            modes.push(ModeLine {
                frequency: spec.frequencies[k],
                eta_i: spec.lamb_dicke[k][1],
                eta_j: spec.lamb_dicke[k][2],
            });
        }
    }
    let pulse = PulseProgram::new(250e-6, 0.0, 0.0, 1.0, 0.0, fallback.delta_c, (0, 1)).unwrap();
    let unbalanced = GateDrive::new(pulse, modes, TWO_PI * 100e3, TWO_PI * 100e3);
    let ucurve = frequency_robustness(&unbalanced, &shifts).unwrap();
    assert!(
        ucurve.max_rel_deviation > 0.01,
        "criterion 5 (frequency robustness): FAIL — unbalanced plan unexpectedly robust ({:.3}%)",
        ucurve.max_rel_deviation * 100.0
    );
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 120.0, "criterion 5 runtime {dt:?} over 2 min");
    pass(
        "5 (frequency robustness)",
        format!(
            "balanced max deviation {:.3}% vs unbalanced {:.1}% over ±5 kHz in {dt:?}",
            curve.max_rel_deviation * 100.0,
            ucurve.max_rel_deviation * 100.0
        ),
    );
}

/// Noiseless frame-rotation sweep at M gates; returns the fitted peak.
fn frame_anchor_scan(v: &mut VirtualExperiment, rec: &CalibrationRecord, m: u32, span: f64) -> f64 {
    let p = rec.pair(0, 1).unwrap();
    let global_aom = rec.pi_times["global"].aom;
    let theta = FRAC_PI_2 * 2.0 / m as f64;
    let amp_global =
        ioncal::pulse::theta_to_global_amplitude(&global_aom, p.amp_global, FRAC_PI_2, theta)
            .unwrap();
    let settings = MsSettings {
        pair: (0, 1),
        delta_c: p.delta_c,
        duration: 250e-6,
        amp_ia: p.amp_ia,
        zeta_i: p.zeta_i,
        zeta_j: p.zeta_j,
        kappa: p.kappa,
        amp_global,
        frame_rotation: 0.0,
    };
    let values: Vec<f64> = (0..41).map(|i| -span + 2.0 * span * i as f64 / 40.0).collect();
    let job = ExperimentJob {
        version: PROTOCOL_VERSION,
        id: 1,
        circuit: JobCircuit::MsLoop { settings, gates: m },
        sweep: Sweep::new("frame_rotation", values),
        shots: 0,
    };
    let result = v.run(&job).unwrap();
    let x: Vec<f64> = result.points.iter().map(|p| p.x).collect();
    let y: Vec<f64> = result.points.iter().map(|p| p.counts["11"]).collect();
    let data = ShotData::new(x, y, vec![1.0; 41], "p11").unwrap();
    fit_gaussian_peak(&data).unwrap().get("center")
}

#[test]
fn criterion_06_frame_rotation_linearity() {
    let start = std::time::Instant::now();
    let mut v = virt(23);
    let mut rec = CalibrationRecord::new(23, 2);
    let cfg = PipelineConfig { noiseless: true, ..PipelineConfig::default() };
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), cfg);
    pipe.calibrate_pi_times(&mut rec).unwrap();
    pipe.find_sidebands(&mut rec).unwrap();
    pipe.plan_pairs(&mut rec).unwrap();
    pipe.calibrate_zeta(&mut rec).unwrap();
    pipe.calibrate_kappa(&mut rec, 0, 1).unwrap();
    drop(pipe);

    // Required φ_f(τ) across θ = π/M.
    let ms = [32u32, 16, 8, 4, 2];
    let mut thetas = Vec::new();
    let mut anchors = Vec::new();
    for &m in &ms {
        let span = (0.61 * 2.0 / m as f64).max(0.05);
        let anchor = frame_anchor_scan(&mut v, &rec, m, span);
        thetas.push(PI / m as f64);
        anchors.push(anchor);
    }
    // Least-squares line through the origin and its R².
    let sxy: f64 = thetas.iter().zip(&anchors).map(|(&t, &a)| t * a).sum();
    let sxx: f64 = thetas.iter().map(|&t| t * t).sum();
    let slope = sxy / sxx;
    let mean: f64 = anchors.iter().sum::<f64>() / anchors.len() as f64;
    let ss_tot: f64 = anchors.iter().map(|&a| (a - mean).powi(2)).sum();
    let ss_res: f64 =
        thetas.iter().zip(&anchors).map(|(&t, &a)| (a - slope * t).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    assert!(
        r2 > 0.999,
        "criterion 6 (frame linearity): FAIL — through-origin R² = {r2:.6}"
    );

    // Interpolated anchor at θ = π/8 from the {M=2, M=32} anchors vs the
    // direct M=8 calibration.
    let a2 = anchors[4];
    let a32 = anchors[0];
    let (t2, t32) = (FRAC_PI_2, PI / 32.0);
    let interp = a32 + (a2 - a32) / (t2 - t32) * (PI / 8.0 - t32);
    let direct = anchors[2];
    let diff = (interp - direct).abs();
    assert!(
        diff < 1.0f64.to_radians(),
        "criterion 6 (frame linearity): FAIL — interpolated vs direct anchor differ {:.3}°",
        diff.to_degrees()
    );
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 600.0, "criterion 6 runtime {dt:?} over 10 min");
    pass(
        "6 (frame-rotation linearity)",
        format!("R² = {r2:.6}, interpolation error {:.3}° in {dt:?}", diff.to_degrees()),
    );
}

#[test]
fn criterion_07_frame_rotation_cancellation() {
    let start = std::time::Instant::now();
    // Fock-oracle residual with the matched erf frame rotation.
    let mut d = two_ion_drive().restricted_to_modes(&[0, 1]);
    let th = entangling_angle(&d).unwrap();
    let scale = (FRAC_PI_2 / th).sqrt();
    d.rabi_peak_i *= scale;
    d.rabi_peak_j = 0.0;
    let ls = TWO_PI * 3.9e3;
    d = d.with_lightshift(ls, 0.0);
    d.pulse.frame_rotation_total = -ls * d.pulse.envelope().squared_integral_total();
    let opts = FockOptions { n_max: 20, steps: Some(16_384), initial: FockInitial::PlusZero };
    let f = simulate_gate_fock(&d, &opts).unwrap();
    let residual = f.outcome.ls_phase_i.abs();
    assert!(
        residual < 1e-6,
        "criterion 7 (cancellation): FAIL — Fock residual phase {residual:.2e} rad"
    );

    // MLE vs plain Gaussian centers on a simulator-generated 2×MS scan.
    let mut v = virt(29);
    let mut rec = CalibrationRecord::new(29, 2);
    let cfg = PipelineConfig { noiseless: true, ..PipelineConfig::default() };
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), cfg);
    pipe.calibrate_pi_times(&mut rec).unwrap();
    pipe.find_sidebands(&mut rec).unwrap();
    pipe.plan_pairs(&mut rec).unwrap();
    pipe.calibrate_zeta(&mut rec).unwrap();
    pipe.calibrate_kappa(&mut rec, 0, 1).unwrap();
    drop(pipe);
    let p = rec.pair(0, 1).unwrap().clone();
    let settings = MsSettings {
        pair: (0, 1),
        delta_c: p.delta_c,
        duration: 250e-6,
        amp_ia: p.amp_ia,
        zeta_i: p.zeta_i,
        zeta_j: p.zeta_j,
        kappa: p.kappa,
        amp_global: p.amp_global,
        frame_rotation: 0.0,
    };
    let values: Vec<f64> = (0..41).map(|i| -0.61 + 1.22 * i as f64 / 40.0).collect();
    let job = ExperimentJob {
        version: PROTOCOL_VERSION,
        id: 1,
        circuit: JobCircuit::MsLoop { settings, gates: 2 },
        sweep: Sweep::new("frame_rotation", values),
        shots: 0,
    };
    let result = v.run(&job).unwrap();
    let x: Vec<f64> = result.points.iter().map(|p| p.x).collect();
    let y: Vec<f64> = result.points.iter().map(|p| p.counts["11"]).collect();
    let data = ShotData::new(x, y, vec![1.0; 41], "p11").unwrap();
    let plain = fit_gaussian_peak(&data).unwrap().get("center");
    let mle = mle_upper_half_gaussian(&data).unwrap().get("center");
    let centers_diff = (plain - mle).abs();
    assert!(
        centers_diff < 2.0f64.to_radians(),
        "criterion 7 (cancellation): FAIL — MLE vs Gaussian centers differ {:.3}°",
        centers_diff.to_degrees()
    );
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 300.0, "criterion 7 runtime {dt:?} over 5 min");
    pass(
        "7 (frame-rotation cancellation)",
        format!(
            "Fock residual {residual:.1e} rad; fit-method centers differ {:.2}° in {dt:?}",
            centers_diff.to_degrees()
        ),
    );
}

#[test]
fn criterion_08_fit_recovery() {
    let start = std::time::Instant::now();
    // Amplitude-scan recovery: 100 seeds at 200 shots/point.
    let (a_sat, xi_rate, decay, t) = (188.5, TWO_PI * 73.6e3, 25.0, 50e-6);
    let xs: Vec<f64> = (0..60).map(|i| 4.0 + i as f64 * 4.0).collect();
    let mut ok = 0;
    let seeds = 100;
    for seed in 0..seeds {
        let mut rng = ChaCha12Rng::seed_from_u64(5000 + seed);
        let succ: Vec<f64> = xs
            .iter()
            .map(|&a| {
                let p = amplitude_scan_model(a, t, a_sat, xi_rate, decay);
                (0..200).filter(|_| rng.gen::<f64>() < p).count() as f64
            })
            .collect();
        let data = ShotData::new(xs.clone(), succ, vec![200.0; 60], "p1").unwrap();
        if let Ok(fit) = fit_amplitude_scan(&data, t) {
            if (fit.get("a_sat") - a_sat).abs() / a_sat < 0.02
                && (fit.get("Xi") - xi_rate).abs() / xi_rate < 0.02
            {
                ok += 1;
            }
        }
    }
    assert!(
        ok * 100 >= seeds * 95,
        "criterion 8 (fit recovery): FAIL — amplitude scan {ok}/{seeds} within 2%"
    );

    // Parity-decay recovery at 500 shots/point.
    let mut worst_rel: f64 = 0.0;
    for (idx, (ms_odd, ms_even, theta)) in
        [(83.0f64, 12.9f64, FRAC_PI_2), (157.0, 19.8, PI / 8.0), (179.0, 48.0, PI / 32.0)]
            .iter()
            .enumerate()
    {
        let mut rng = ChaCha12Rng::seed_from_u64(7100 + idx as u64);
        let a = 0.995;
        let m_max = (6.0 * ms_even).min(4.0 * ms_odd);
        let ms: Vec<f64> = (1..=60).map(|i| (i as f64 * m_max / 60.0).round()).collect();
        let draw = |p: f64, rng: &mut ChaCha12Rng| (0..500).filter(|_| rng.gen::<f64>() < p).count() as f64;
        let odd: Vec<f64> = ms.iter().map(|&m| draw(odd_parity_model(m, a, *ms_odd), &mut rng)).collect();
        let p11: Vec<f64> = ms
            .iter()
            .map(|&m| draw(p11_loop_model(m, a, *ms_odd, *ms_even, *theta), &mut rng))
            .collect();
        let d_odd = ShotData::new(ms.clone(), odd, vec![500.0; 60], "p_odd").unwrap();
        let d_11 = ShotData::new(ms, p11, vec![500.0; 60], "p11").unwrap();
        let fit = fit_parity_decay(&d_odd, &d_11).unwrap();
        for (name, truth) in [("M_sigma_odd", *ms_odd), ("M_sigma_even", *ms_even)] {
            let rel = (fit.get(name) - truth).abs() / truth;
            worst_rel = worst_rel.max(rel);
            assert!(
                rel < 0.05,
                "criterion 8 (fit recovery): FAIL — {name} = {:.2} vs {truth} ({rel:.3} rel)",
                fit.get(name)
            );
        }
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 900.0, "criterion 8 runtime {dt:?} over 15 min");
    pass(
        "8 (fit recovery)",
        format!(
            "amplitude scan {ok}/{seeds} within 2%; decay constants worst {:.1}% in {dt:?}",
            worst_rel * 100.0
        ),
    );
}

#[test]
fn criterion_09_zz_phase_agnosticism() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(97);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let theta = rng.gen_range(-FRAC_PI_2..FRAC_PI_2);
        let b0 = rng.gen_range(-PI..PI);
        let b1 = rng.gen_range(-PI..PI);
        let mut before = Circuit::new(2);
        before
            .push(Gate::RzVirtual { qubit: 0, angle: b0 })
            .push(Gate::RzVirtual { qubit: 1, angle: b1 })
            .push(Gate::Zz { qubits: (0, 1), theta });
        let mut after = Circuit::new(2);
        after
            .push(Gate::Zz { qubits: (0, 1), theta })
            .push(Gate::RzVirtual { qubit: 0, angle: b0 })
            .push(Gate::RzVirtual { qubit: 1, angle: b1 });
        let ua = circuit_unitary(&before, false).unwrap();
        let ub = circuit_unitary(&after, false).unwrap();
        let d = global_phase_distance(&ua, &ub);
        worst = worst.max(d);
        assert!(
            d < 1e-12,
            "criterion 9 (ZZ phase agnosticism): FAIL — distance {d:.3e} at θ={theta:.4}"
        );
    }
    // Wrapper sign table against the analytic exp(−i(θ/2)Z⊗Z).
    for theta in [FRAC_PI_2, -FRAC_PI_2, PI / 4.0, -PI / 4.0, PI / 8.0, -PI / 8.0] {
        let mut c = Circuit::new(2);
        c.push(Gate::Zz { qubits: (0, 1), theta });
        let u = circuit_unitary(&c, false).unwrap();
        let mut ideal = nalgebra::DMatrix::zeros(4, 4);
        for (idx, sign) in [(0usize, 1.0), (1, -1.0), (2, -1.0), (3, 1.0)] {
            ideal[(idx, idx)] = num_complex::Complex64::from_polar(1.0, -sign * theta / 2.0);
        }
        let d = global_phase_distance(&u, &ideal);
        assert!(
            d < 1e-12,
            "criterion 9 (ZZ phase agnosticism): FAIL — wrapper table θ={theta}: {d:.3e}"
        );
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 60.0, "criterion 9 runtime {dt:?} over 1 min");
    pass(
        "9 (ZZ phase agnosticism)",
        format!("100 random prefixes, worst distance {worst:.2e}; sign table exact in {dt:?}"),
    );
}

#[test]
fn criterion_10_end_to_end() {
    let start = std::time::Instant::now();
    let mut v = virt(4242);
    let mut rec = CalibrationRecord::new(4242, 2);
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), PipelineConfig::default());
    pipe.run_schedule(&mut rec).unwrap();
    drop(pipe);

    // Sidebands within 0.5 kHz of truth.
    let mut worst_sb = 0.0f64;
    for (m, spec) in v.true_spectra().iter().enumerate() {
        for k in 0..spec.mode_count() {
            worst_sb = worst_sb.max((rec.sidebands[m][k] - spec.frequencies[k]).abs() / TWO_PI);
        }
    }
    assert!(worst_sb < 500.0, "criterion 10: FAIL — sideband error {worst_sb:.1} Hz");

    // ζ* within 0.02 of the coherence optimum.
    let mut worst_zeta = 0.0f64;
    for (pos, label) in [(0usize, 0i32), (1, 1)] {
        let truth = v.true_zeta_star(pos).unwrap();
        let got = rec.zeta[&format!("q{label}")].zeta;
        worst_zeta = worst_zeta.max((got - truth).abs());
    }
    assert!(worst_zeta < 0.02, "criterion 10: FAIL — ζ error {worst_zeta:.4}");

    // κ gives θ within 1%.
    let p = rec.pair(0, 1).unwrap().clone();
    let settings = MsSettings {
        pair: (0, 1),
        delta_c: p.delta_c,
        duration: 250e-6,
        amp_ia: p.amp_ia,
        zeta_i: p.zeta_i,
        zeta_j: p.zeta_j,
        kappa: p.kappa,
        amp_global: p.amp_global,
        frame_rotation: 0.0,
    };
    let theta = entangling_angle(&v.ms_drive(&settings).unwrap()).unwrap();
    let theta_err = (theta - FRAC_PI_2).abs() / FRAC_PI_2;
    assert!(theta_err < 0.01, "criterion 10: FAIL — θ error {:.3}%", theta_err * 100.0);

    // Frame anchors within 0.5° of the residual the calibrated drive
    // actually carries.
    let drive = v.ms_drive(&settings).unwrap();
    let env = drive.pulse.envelope();
    let (r_i, r_j) = drive.residual_phases(&env);
    let expect = -(r_i + r_j) / 2.0;
    let anchor_err = (p.frame_anchor_m2.unwrap() - expect).abs();
    assert!(
        anchor_err < 0.5f64.to_radians(),
        "criterion 10: FAIL — anchor error {:.3}°",
        anchor_err.to_degrees()
    );

    // Fidelity estimate vs the state-fidelity oracle.
    let fid = p.fidelity.as_ref().unwrap();
    let mut oracle_settings = settings.clone();
    oracle_settings.frame_rotation = p.frame_rotation_for(FRAC_PI_2).unwrap();
    let f_true = v.true_state_fidelity(&oracle_settings, FRAC_PI_2).unwrap();
    let tol = 1e-3 + fid.minus.max(fid.plus);
    let f_err = (fid.value - f_true).abs();
    assert!(
        f_err < tol,
        "criterion 10: FAIL — fidelity {:.4} vs oracle {f_true:.4} (err {f_err:.4}, tol {tol:.4})",
        fid.value
    );
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 1200.0, "criterion 10 runtime {dt:?} over 20 min");
    pass(
        "10 (end-to-end)",
        format!(
            "sidebands {worst_sb:.0} Hz, ζ {worst_zeta:.3}, θ {:.2}%, anchor {:.2}°, fidelity err {f_err:.4} in {dt:?}",
            theta_err * 100.0,
            anchor_err.to_degrees()
        ),
    );
}
