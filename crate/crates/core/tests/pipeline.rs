//! Injected-truth recovery tests for the calibration pipeline against the
//! virtual experiment, plus job-protocol and record round-trips.

use std::f64::consts::{FRAC_PI_2, PI};

use ioncal::calib::protocol::{
    Backend, ExperimentJob, JobCircuit, MsSettings, RemoteBackend, Sweep, PROTOCOL_VERSION,
};
use ioncal::calib::record::{BeamGeometry, CalibrationRecord, Checkpoint};
use ioncal::calib::virt::{VirtualExperiment, VirtualTruth};
use ioncal::calib::{write_scan_csvs, CalibError, Pipeline, PipelineConfig};
use ioncal::chain::TrapConfig;
use ioncal::comb::CombSpec;
use ioncal::dynamics::entangling_angle;

const TWO_PI: f64 = 2.0 * PI;

fn virt(seed: u64) -> VirtualExperiment {
    virt_with(seed, VirtualTruth::default_chain(2))
}

fn virt_with(seed: u64, truth: VirtualTruth) -> VirtualExperiment {
    let comb = CombSpec::reference(TWO_PI * 2.34e6);
    VirtualExperiment::new(truth, comb, seed).unwrap()
}

fn pipeline_cfg(noiseless: bool) -> PipelineConfig {
    PipelineConfig { noiseless, ..PipelineConfig::default() }
}

fn settings_for(rec: &CalibrationRecord, qi: i32, qj: i32) -> MsSettings {
    let p = rec.pair(qi, qj).unwrap();
    MsSettings {
        pair: (qi, qj),
        delta_c: p.delta_c,
        duration: 250e-6,
        amp_ia: p.amp_ia,
        zeta_i: p.zeta_i,
        zeta_j: p.zeta_j,
        kappa: p.kappa,
        amp_global: p.amp_global,
        frame_rotation: 0.0,
    }
}

#[test]
fn alignment_recovers_the_injected_offset() {
    let mut v = virt(7);
    let truth_offset = v.truth.well_offset;
    let mut rec = CalibrationRecord::new(7, 2);
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), pipeline_cfg(false));
    let found = pipe.align_chain(&mut rec).unwrap();
    assert!(
        (found - truth_offset).abs() < 0.1e-6,
        "found {found:.3e}, truth {truth_offset:.3e}"
    );
}

#[test]
fn alignment_matches_the_analytic_transfer_optimum_for_longer_chains() {
    // Uniform beam grid against a harmonic 5-ion chain: some ions stay
    // intentionally misaligned; the chosen position maximizes the analytic
    // average transfer.
    let truth = VirtualTruth::default_chain(5);
    assert!(truth.uniform_beam_grid);
    let mut v = virt_with(11, truth.clone());
    let mut rec = CalibrationRecord::new(11, 5);
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(5), pipeline_cfg(true));
    let found = pipe.align_chain(&mut rec).unwrap();

    // Closed-form oracle from the truth parameters.
    let positions = ioncal::chain::equilibrium_positions(&truth.trap).unwrap();
    let spacing = (positions[4] - positions[0]) / 4.0;
    let beam = |i: usize| (i as f64 - 2.0) * spacing + truth.well_offset;
    let transfer = |x: f64| -> f64 {
        (0..5)
            .map(|i| {
                let d = positions[i] + x - beam(i);
                let g = (-d * d / (2.0 * truth.beam_waist * truth.beam_waist)).exp();
                ((truth.alignment_pulse_area * PI * g) / 2.0).sin().powi(2)
            })
            .sum::<f64>()
            / 5.0
    };
    let mut best = (f64::MIN, 0.0);
    for k in 0..=6000 {
        let x = -3.0e-6 + 6.0e-6 * k as f64 / 6000.0;
        let t = transfer(x);
        if t > best.0 {
            best = (t, x);
        }
    }
    assert!((found - best.1).abs() < 0.1e-6, "found {found:.3e}, oracle {:.3e}", best.1);
}

#[test]
fn pi_time_calibration_recovers_the_aom_truth() {
    let mut v = virt(3);
    let truth = v.truth.clone();
    let mut rec = CalibrationRecord::new(3, 2);
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), pipeline_cfg(false));
    pipe.calibrate_pi_times(&mut rec).unwrap();
    for (key, truth_aom) in [
        ("q0:counter", truth.aom_ia_counter),
        ("q0:co", truth.aom_ia_co),
        ("global", truth.aom_global),
    ] {
        let cal = &rec.pi_times[key];
        let ea = (cal.aom.a_sat - truth_aom.a_sat).abs() / truth_aom.a_sat;
        let ex = (cal.aom.xi - truth_aom.xi).abs() / truth_aom.xi;
        assert!(ea < 0.02 && ex < 0.02, "{key}: a_sat err {ea:.3}, Xi err {ex:.3}");
    }
    // π-amplitude reproduces the π-time through the truth response.
    let cal = &rec.pi_times["q0:counter"];
    let omega = truth.aom_ia_counter.response(cal.pi_amplitude).unwrap();
    assert!((omega * cal.pi_time - PI).abs() < 0.05);
}

#[test]
fn unreachable_pi_time_is_surfaced() {
    // Weak AOM: the requested 10 μs counter-propagating π-time needs a rate
    // beyond Ξ.
    let mut truth = VirtualTruth::default_chain(2);
    truth.aom_ia_counter.xi = TWO_PI * 30e3; // π/10μs needs 2π×50 kHz
    let mut v = virt_with(5, truth);
    let mut rec = CalibrationRecord::new(5, 2);
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), pipeline_cfg(true));
    match pipe.calibrate_pi_times(&mut rec) {
        Err(CalibError::Pulse(_)) => {}
        other => panic!("expected unreachable-rate error, got {other:?}"),
    }
}

#[test]
fn sidebands_recover_within_half_a_kilohertz() {
    let mut v = virt(13);
    let mut rec = CalibrationRecord::new(13, 2);
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), pipeline_cfg(false));
    pipe.find_sidebands(&mut rec).unwrap();
    assert_eq!(rec.sidebands.len(), 2);
    assert_eq!(rec.sidebands[0].len() + rec.sidebands[1].len(), 4);
    for (m, spec) in v.true_spectra().iter().enumerate() {
        for k in 0..spec.mode_count() {
            let err = (rec.sidebands[m][k] - spec.frequencies[k]).abs() / TWO_PI;
            assert!(err < 500.0, "manifold {m} mode {k}: {err:.1} Hz off");
        }
    }
}

#[test]
fn zeta_echo_recovers_the_coherence_optimum() {
    let mut v = virt(17);
    let mut rec = CalibrationRecord::new(17, 2);
    let truth_star = [v.true_zeta_star(0).unwrap(), v.true_zeta_star(1).unwrap()];
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), pipeline_cfg(false));
    pipe.calibrate_zeta(&mut rec).unwrap();
    for (pos, label) in [(0usize, 0i32), (1, 1)] {
        let got = rec.zeta[&format!("q{label}")].zeta;
        assert!(
            (got - truth_star[pos]).abs() < 0.02,
            "q{label}: got {got:.4}, truth {:.4}",
            truth_star[pos]
        );
        // Reference-scale outcome band for the reference comb.
        assert!((1.05..1.20).contains(&got), "q{label}: {got:.4}");
    }
}

#[test]
fn kappa_closes_the_entangling_angle_noiselessly() {
    let mut v = virt(19);
    let mut rec = CalibrationRecord::new(19, 2);
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), pipeline_cfg(true));
    pipe.find_sidebands(&mut rec).unwrap();
    pipe.plan_pairs(&mut rec).unwrap();
    pipe.calibrate_zeta(&mut rec).unwrap();
    let kappa = pipe.calibrate_kappa(&mut rec, 0, 1).unwrap();
    let mut s = settings_for(&rec, 0, 1);
    s.kappa = kappa;
    let theta = entangling_angle(&v.ms_drive(&s).unwrap()).unwrap();
    assert!(
        (theta - FRAC_PI_2).abs() < 1e-3,
        "θ = {theta:.6}, error {:+.2e}",
        theta - FRAC_PI_2
    );
    // The fine scan ran in the near-unity region by construction.
    assert!((0.9..1.5).contains(&kappa));
}

#[test]
fn frame_anchor_matches_the_injected_residual_shift() {
    let mut v = virt(23);
    let mut rec = CalibrationRecord::new(23, 2);
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), pipeline_cfg(true));
    pipe.calibrate_pi_times(&mut rec).unwrap();
    pipe.find_sidebands(&mut rec).unwrap();
    pipe.plan_pairs(&mut rec).unwrap();
    pipe.calibrate_zeta(&mut rec).unwrap();
    pipe.calibrate_kappa(&mut rec, 0, 1).unwrap();
    let (a2, a32, mle_diff) = pipe.calibrate_frame_rotation(&mut rec, 0, 1).unwrap();
    // Truth: the anchor must cancel the mean residual phase of the pair.
    let s = settings_for(&rec, 0, 1);
    let drive = v.ms_drive(&s).unwrap();
    let env = drive.pulse.envelope();
    let (r_i, r_j) = drive.residual_phases(&env);
    let expect = -(r_i + r_j) / 2.0;
    assert!(
        (a2 - expect).abs() < 0.5f64.to_radians(),
        "anchor {:.3}°, expected {:.3}°",
        a2.to_degrees(),
        expect.to_degrees()
    );
    // Linear through origin: the M=32 anchor is 1/16 of the M=2 anchor.
    assert!((a32 - a2 / 16.0).abs() < 0.2f64.to_radians());
    // Gaussian vs upper-half MLE centers agree within the 2° band.
    assert!(mle_diff < 2.0f64.to_radians(), "MLE diff {:.2}°", mle_diff.to_degrees());
    // Anchor magnitude sits in the few-degree residual band.
    assert!((1.0..30.0).contains(&a2.to_degrees().abs()));
}

#[test]
fn detuning_scan_shows_an_entangling_crossing_where_theta_says_so() {
    let mut v = virt(29);
    let mut rec = CalibrationRecord::new(29, 2);
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), pipeline_cfg(true));
    pipe.find_sidebands(&mut rec).unwrap();
    pipe.plan_pairs(&mut rec).unwrap();
    pipe.calibrate_zeta(&mut rec).unwrap();
    // Pre-κ diagnostic: at unit amplitude scale the gate underdrives at the
    // balanced detuning, and θ(δ_c) crosses π/2 on the flanks where it
    // rises toward the sidebands.
    let scan = pipe.symmetric_detuning_scan(&rec, 0, 1).unwrap();
    assert!(!scan.crossings.is_empty(), "no zero/two-bright crossing found");

    // Oracle: θ(δ_c) = π/2 root on the upper (constructive-addition) flank.
    let s = settings_for(&rec, 0, 1);
    let theta_at = |delta_c: f64| -> f64 {
        let mut s2 = s.clone();
        s2.delta_c = delta_c;
        entangling_angle(&v.ms_drive(&s2).unwrap()).unwrap()
    };
    let planned = rec.pair(0, 1).unwrap().delta_c;
    let (mut lo, mut hi) = (planned, planned + TWO_PI * 40e3);
    let (mut flo, fhi) = (theta_at(lo) - FRAC_PI_2, theta_at(hi) - FRAC_PI_2);
    assert!(flo * fhi < 0.0, "oracle root not bracketed near the plan");
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        let fm = theta_at(mid) - FRAC_PI_2;
        if flo * fm <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    let oracle = 0.5 * (lo + hi);
    let nearest = scan
        .crossings
        .iter()
        .cloned()
        .min_by(|a, b| (a - oracle).abs().partial_cmp(&(b - oracle).abs()).unwrap())
        .unwrap();
    // Within the scan resolution.
    let step = scan.points[1].x - scan.points[0].x;
    assert!(
        (nearest - oracle).abs() < 1.5 * step,
        "crossing {:.1} kHz vs oracle {:.1} kHz",
        nearest / TWO_PI / 1e3,
        oracle / TWO_PI / 1e3
    );
}

#[test]
fn full_schedule_is_deterministic_and_resumable() {
    let run = |seed: u64| -> CalibrationRecord {
        let mut v = virt(seed);
        let mut rec = CalibrationRecord::new(seed, 2);
        let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), pipeline_cfg(false));
        pipe.run_schedule(&mut rec).unwrap();
        rec
    };
    let a = run(99);
    let b = run(99);
    assert_eq!(a.canonical_bytes(), b.canonical_bytes());

    // Second pass from scratch on the same (already calibrated) virtual
    // apparatus converges to the same operating point.
    let mut v = virt(99);
    let mut rec = CalibrationRecord::new(99, 2);
    {
        let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), pipeline_cfg(false));
        pipe.run_schedule(&mut rec).unwrap();
    }
    let kappa_first = rec.pair(0, 1).unwrap().kappa;
    rec.checkpoint = Checkpoint::Planned;
    {
        let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), pipeline_cfg(false));
        pipe.run_schedule(&mut rec).unwrap();
    }
    let kappa_second = rec.pair(0, 1).unwrap().kappa;
    assert!(
        (kappa_second - kappa_first).abs() / kappa_first < 0.01,
        "second-pass κ moved {kappa_first:.4} → {kappa_second:.4}"
    );
}

#[test]
fn record_round_trips_through_json() {
    let mut v = virt(31);
    let mut rec = CalibrationRecord::new(31, 2);
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), pipeline_cfg(true));
    pipe.run_schedule(&mut rec).unwrap();
    let dir = std::env::temp_dir().join("ioncal-test-record");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("record.json");
    rec.save(&path).unwrap();
    let back = CalibrationRecord::load(&path).unwrap();
    assert_eq!(rec.canonical_bytes(), back.canonical_bytes());
    let p = back.pair(0, 1).unwrap();
    assert!(p.frame_anchor_m2.is_some() && p.fidelity.is_some());
    // Frame interpolation is finite and linear between the anchors.
    let f = p.frame_rotation_for(PI / 8.0).unwrap();
    assert!(f.is_finite());
}

#[test]
fn scan_csvs_are_emitted_with_unit_headers() {
    let mut v = virt(37);
    let mut rec = CalibrationRecord::new(37, 2);
    let mut pipe = Pipeline::new(&mut v, TrapConfig::default_chain(2), pipeline_cfg(true));
    pipe.align_chain(&mut rec).unwrap();
    let dir = std::env::temp_dir().join("ioncal-test-csv");
    let _ = std::fs::remove_dir_all(&dir);
    write_scan_csvs(&pipe.scans, &dir).unwrap();
    let text = std::fs::read_to_string(dir.join("align-chain.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("well_position"), "header: {header}");
    assert!(text.lines().count() > 10);
}

#[test]
fn remote_backend_speaks_the_protocol_over_a_socket() {
    use std::net::{TcpListener, TcpStream};

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut input = stream.try_clone().unwrap();
        let mut output = stream;
        let mut v = virt(41);
        ioncal::calib::protocol::serve(&mut v, &mut input, &mut output).unwrap();
    });

    let stream = TcpStream::connect(addr).unwrap();
    let input = stream.try_clone().unwrap();
    let mut remote = RemoteBackend::new(input, stream);
    let job = ExperimentJob {
        version: PROTOCOL_VERSION,
        id: 1,
        circuit: JobCircuit::RabiAmplitudeScan {
            ion: 0,
            geometry: BeamGeometry::CounterPropagating,
            duration: 30e-6,
        },
        sweep: Sweep::new("amplitude", (1..=40).map(|i| i as f64 * 6.0).collect()),
        shots: 100,
    };
    let result = remote.run(&job).unwrap();
    assert_eq!(result.points.len(), 40);
    for p in &result.points {
        let total: f64 = p.counts.values().sum();
        assert_eq!(total, 100.0);
    }
    // The same job against an in-process backend with the same seed gives
    // identical counts.
    let mut local = virt(41);
    let direct = local.run(&job).unwrap();
    for (a, b) in result.points.iter().zip(&direct.points) {
        assert_eq!(a.counts, b.counts);
    }
    // A malformed sweep comes back as a protocol-level error.
    let bad = ExperimentJob {
        version: PROTOCOL_VERSION,
        id: 2,
        circuit: JobCircuit::AlignmentTransfer,
        sweep: Sweep::new("nonsense", vec![0.0]),
        shots: 10,
    };
    assert!(remote.run(&bad).is_err());
    remote.shutdown().unwrap();
    server.join().unwrap();
}

#[test]
fn spam_errors_depress_the_measured_contrast() {
    let mut truth = VirtualTruth::default_chain(2);
    truth.spam.read_1_as_0 = 0.03;
    truth.spam.read_0_as_1 = 0.01;
    let mut v = virt_with(51, truth);
    let job = ExperimentJob {
        version: PROTOCOL_VERSION,
        id: 1,
        circuit: JobCircuit::AlignmentTransfer,
        sweep: Sweep::new("well_position", vec![0.4e-6]),
        shots: 0,
    };
    let result = v.run(&job).unwrap();
    let p1 = result.points[0].counts["q0:1"];
    // Perfect alignment transfers sin²(0.93·π/2) ≈ 0.988; readout error
    // pulls it down by ~3%.
    assert!(p1 < 0.97, "p1 = {p1}");
    assert!(p1 > 0.93, "p1 = {p1}");
}

#[test]
fn noiseless_counts_are_exact_probabilities() {
    let mut v = virt(43);
    let job = ExperimentJob {
        version: PROTOCOL_VERSION,
        id: 1,
        circuit: JobCircuit::ZetaEcho { blocks_per_side: 8 },
        sweep: Sweep::new("zeta", vec![1.0, 1.1]),
        shots: 0,
    };
    let result = v.run(&job).unwrap();
    for p in &result.points {
        let per_ion: f64 = p.counts["q0:0"] + p.counts["q0:1"];
        assert!((per_ion - 1.0).abs() < 1e-12);
    }
}
