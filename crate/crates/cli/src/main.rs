//! Command-line front end: mode reports, light-shift breakdowns,
//! calibration runs against the built-in virtual experiment or an external
//! backend, circuit simulation/compilation, and the stdio job-protocol
//! server.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use ioncal::calib::protocol::{Backend, RemoteBackend};
use ioncal::calib::record::CalibrationRecord;
use ioncal::calib::virt::VirtualExperiment;
use ioncal::calib::{model_drive, write_scan_csvs, Pipeline};
use ioncal::chain::{chain_spectra, select_mode_pair, ModeSpectrum};
use ioncal::comb::{CombLabel, CombModel};
use ioncal::compiler::{parse_circuit, resolve_waveform_phases, FrameLookup, PulseOp};
use ioncal::config::ArtifactConfig;
use ioncal::dynamics::{GateChannel, Populations, SpinRho};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Parser)]
#[command(
    name = "ioncal",
    about = "Simulator and calibration engine for continuously parameterized MS gates",
    version
)]
struct Cli {
    /// Configuration file (TOML); defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for this run (defaults to a dated directory under
    /// the configured output_dir).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mode spectra, Lamb-Dicke parameters, and gate plans for all pairs.
    Modes,
    /// Fourth-order light-shift breakdown and a ζ_br scan.
    Lightshift {
        #[arg(long, default_value_t = 0.90)]
        zeta_min: f64,
        #[arg(long, default_value_t = 1.30)]
        zeta_max: f64,
        #[arg(long, default_value_t = 81)]
        zeta_steps: usize,
    },
    /// Run the calibration schedule and persist the record.
    Calibrate {
        /// Resume from an existing record instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Drive an external backend process speaking the job protocol on
        /// its stdio instead of the built-in virtual experiment.
        #[arg(long)]
        backend_cmd: Option<String>,
    },
    /// Simulate a circuit file against the calibrated gate model.
    Simulate {
        #[arg(long)]
        circuit: PathBuf,
        #[arg(long)]
        record: PathBuf,
        /// Sampled shots; 0 prints exact populations only.
        #[arg(long, default_value_t = 0)]
        shots: u32,
    },
    /// Estimate the MS(θ) fidelity on the virtual experiment.
    Fidelity {
        /// Pair as center-indexed labels, e.g. "0,1".
        #[arg(long, default_value = "0,1")]
        pair: String,
        /// Entangling angle (rad).
        #[arg(long, default_value_t = FRAC_PI_2)]
        theta: f64,
        #[arg(long)]
        record: PathBuf,
    },
    /// Resolve a circuit to physical pulses with absolute waveform phases.
    Compile {
        #[arg(long)]
        circuit: PathBuf,
        /// Optional record supplying dynamic frame-rotation totals.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Serve the built-in virtual experiment over stdio (job protocol).
    Serve,
    /// Print the default configuration file.
    PrintConfig,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = ArtifactConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Modes => cmd_modes(&cfg, run_dir(&cfg, cli.run_dir, "modes")?),
        Command::Lightshift { zeta_min, zeta_max, zeta_steps } => cmd_lightshift(
            &cfg,
            run_dir(&cfg, cli.run_dir, "lightshift")?,
            zeta_min,
            zeta_max,
            zeta_steps,
        ),
        Command::Calibrate { resume, backend_cmd } => {
            cmd_calibrate(&cfg, run_dir(&cfg, cli.run_dir, "calibrate")?, resume, backend_cmd)
        }
        Command::Simulate { circuit, record, shots } => {
            cmd_simulate(&cfg, run_dir(&cfg, cli.run_dir, "simulate")?, &circuit, &record, shots)
        }
        Command::Fidelity { pair, theta, record } => {
            cmd_fidelity(&cfg, run_dir(&cfg, cli.run_dir, "fidelity")?, &pair, theta, &record)
        }
        Command::Compile { circuit, record } => {
            cmd_compile(&cfg, run_dir(&cfg, cli.run_dir, "compile")?, &circuit, record.as_deref())
        }
        Command::Serve => cmd_serve(&cfg),
        Command::PrintConfig => {
            print!("{}", ArtifactConfig::default_toml());
            Ok(())
        }
    }
}

fn run_dir(cfg: &ArtifactConfig, explicit: Option<PathBuf>, cmd: &str) -> Result<PathBuf> {
    let dir = match explicit {
        Some(d) => d,
        None => {
            let stamp = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            cfg.output_dir.join(format!("{stamp}-{cmd}"))
        }
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_modes(cfg: &ArtifactConfig, dir: PathBuf) -> Result<()> {
    let trap = cfg.trap.to_trap_config();
    let spectra = chain_spectra(&trap)?;
    write_json(&dir, "spectra.json", &spectra)?;

    let mut plans = Vec::new();
    let others: Vec<&ModeSpectrum> = spectra[1..].iter().collect();
    for pi in 0..trap.ion_count {
        for pj in pi + 1..trap.ion_count {
            let plan = select_mode_pair(
                &trap,
                &spectra[0],
                &others,
                trap.qubit_label(pi),
                trap.qubit_label(pj),
                cfg.pipeline.fallback_detuning,
            )?;
            plans.push(plan);
        }
    }
    write_json(&dir, "pair_plans.json", &plans)?;

    let mut w = csv::Writer::from_path(dir.join("modes.csv"))?;
    w.write_record(["manifold", "mode_index", "frequency_hz"])?;
    for spec in &spectra {
        for (k, f) in spec.frequencies.iter().enumerate() {
            w.write_record(&[spec.manifold.clone(), k.to_string(), format!("{}", f / TWO_PI)])?;
        }
    }
    w.flush()?;

    println!("chain of {} ions; manifolds at {:.4} / {:.4} MHz", trap.ion_count,
        spectra[0].frequencies[0] / TWO_PI / 1e6, spectra[1].frequencies[0] / TWO_PI / 1e6);
    for p in &plans {
        println!(
            "pair ({:+},{:+}): modes ({},{}) ref {} detuning {:+.1} kHz balanced={}",
            p.qubit_i,
            p.qubit_j,
            p.mode_upper,
            p.mode_lower,
            p.reference_mode,
            p.detuning / TWO_PI / 1e3,
            p.balanced
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn comb_model(cfg: &ArtifactConfig) -> Result<CombModel> {
    let delta_c = cfg.planning_delta_c()?;
    let spec = cfg.comb.to_comb_spec(delta_c);
    let model = CombModel::new(spec)?
        .with_target_rabi(TWO_PI * cfg.comb.ms_rabi_target_hz, cfg.comb.global_amp_ratio)?;
    Ok(model)
}

fn cmd_lightshift(
    cfg: &ArtifactConfig,
    dir: PathBuf,
    zeta_min: f64,
    zeta_max: f64,
    zeta_steps: usize,
) -> Result<()> {
    let model = comb_model(cfg)?;
    let breakdown = model.total_shift()?;
    write_json(&dir, "shift_breakdown.json", &breakdown)?;
    println!("total differential fourth-order shift: {:+.1} Hz", breakdown.total / TWO_PI);
    for (k, v) in &breakdown.per_pair {
        println!("  {k}: {:+.2} Hz", v / TWO_PI);
    }
    let rabi = model.two_photon_rabi(CombLabel::Blue, CombLabel::Global, 105)?;
    println!("two-photon Rabi at the operating point: {:.2} kHz", rabi / TWO_PI / 1e3);

    let target = TWO_PI * cfg.comb.ms_rabi_target_hz;
    let mut w = csv::Writer::from_path(dir.join("zeta_scan.csv"))?;
    w.write_record(["zeta", "total_hz", "gb_hz", "gr_hz", "br_hz", "gg_hz", "bb_hz", "rr_hz"])?;
    for i in 0..zeta_steps {
        let z = zeta_min + (zeta_max - zeta_min) * i as f64 / (zeta_steps - 1).max(1) as f64;
        let bd = model.scaled_for_zeta(z, target)?.total_shift()?;
        w.write_record(&[
            format!("{z:.6}"),
            format!("{:.6}", bd.total / TWO_PI),
            format!("{:.6}", bd.per_pair["gb"] / TWO_PI),
            format!("{:.6}", bd.per_pair["gr"] / TWO_PI),
            format!("{:.6}", bd.per_pair["br"] / TWO_PI),
            format!("{:.6}", bd.per_pair["gg"] / TWO_PI),
            format!("{:.6}", bd.per_pair["bb"] / TWO_PI),
            format!("{:.6}", bd.per_pair["rr"] / TWO_PI),
        ])?;
    }
    w.flush()?;
    match model.balance_ratio(target) {
        Ok(b) => println!("balance root ζ* = {:.4} (residual {:+.3} Hz)", b.zeta, b.residual / TWO_PI),
        Err(e) => println!("no balance root: {e}"),
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn build_virtual(cfg: &ArtifactConfig) -> Result<VirtualExperiment> {
    let trap = cfg.trap.to_trap_config();
    let truth = cfg.truth.to_virtual_truth(&trap);
    let comb_spec = cfg.comb.to_comb_spec(cfg.planning_delta_c()?);
    Ok(VirtualExperiment::new(truth, comb_spec, cfg.seed)?)
}

fn cmd_calibrate(
    cfg: &ArtifactConfig,
    dir: PathBuf,
    resume: Option<PathBuf>,
    backend_cmd: Option<String>,
) -> Result<()> {
    let trap = cfg.trap.to_trap_config();
    let mut rec = match &resume {
        Some(path) => CalibrationRecord::load(path)?,
        None => CalibrationRecord::new(cfg.seed, trap.ion_count),
    };
    let record_path = dir.join("calibration_record.json");

    let outcome = match backend_cmd {
        None => {
            let mut backend = build_virtual(cfg)?;
            run_calibration(&mut backend, cfg, &trap, &mut rec, &dir)
        }
        Some(cmdline) => {
            let parts: Vec<&str> = cmdline.split_whitespace().collect();
            if parts.is_empty() {
                bail!("empty --backend-cmd");
            }
            let mut child = std::process::Command::new(parts[0])
                .args(&parts[1..])
                .stdin(std::process::Stdio::piped())
                .stdout(std::process::Stdio::piped())
                .spawn()
                .with_context(|| format!("spawning backend '{cmdline}'"))?;
            let stdin = child.stdin.take().context("backend stdin")?;
            let stdout = child.stdout.take().context("backend stdout")?;
            let mut backend = RemoteBackend::new(stdout, stdin);
            let outcome = run_calibration(&mut backend, cfg, &trap, &mut rec, &dir);
            let _ = backend.shutdown();
            let _ = child.wait();
            outcome
        }
    };

    // Persist the record even when a stage fails, so the run can resume.
    rec.save(&record_path)?;
    match outcome {
        Ok(()) => {
            println!("calibration complete; record at {}", record_path.display());
            for (key, p) in &rec.pairs {
                println!(
                    "pair {key}: κ = {:.4}, ζ = ({:.3}, {:.3}), anchors = ({:.2}°, {:.2}°){}",
                    p.kappa,
                    p.zeta_i,
                    p.zeta_j,
                    p.frame_anchor_m2.unwrap_or(f64::NAN).to_degrees(),
                    p.frame_anchor_m32.unwrap_or(f64::NAN).to_degrees(),
                    p.fidelity
                        .as_ref()
                        .map(|f| format!(
                            ", F = {:.4} (+{:.4}/-{:.4})",
                            f.value, f.plus, f.minus
                        ))
                        .unwrap_or_default()
                );
            }
            Ok(())
        }
        Err(e) => {
            eprintln!("calibration stopped at checkpoint {:?}: {e}", rec.checkpoint);
            eprintln!("partial record saved to {}; rerun with --resume", record_path.display());
            std::process::exit(2);
        }
    }
}

fn run_calibration(
    backend: &mut dyn Backend,
    cfg: &ArtifactConfig,
    trap: &ioncal::chain::TrapConfig,
    rec: &mut CalibrationRecord,
    dir: &Path,
) -> Result<()> {
    let mut pipe = Pipeline::new(backend, trap.clone(), cfg.pipeline.clone());
    let result = pipe.run_schedule(rec);
    write_scan_csvs(&pipe.scans, &dir.join("scans"))?;
    result?;
    Ok(())
}

struct RecordFrames<'a> {
    trap: &'a ioncal::chain::TrapConfig,
    rec: &'a CalibrationRecord,
}

impl FrameLookup for RecordFrames<'_> {
    fn frame_rotation_total(&self, qubits: (usize, usize), theta: f64) -> f64 {
        let qi = self.trap.qubit_label(qubits.0);
        let qj = self.trap.qubit_label(qubits.1);
        self.rec
            .pair(qi, qj)
            .or_else(|| self.rec.pair(qj, qi))
            .and_then(|p| p.frame_rotation_for(theta))
            .unwrap_or(0.0)
    }
}

fn cmd_simulate(
    cfg: &ArtifactConfig,
    dir: PathBuf,
    circuit_path: &Path,
    record_path: &Path,
    shots: u32,
) -> Result<()> {
    let text = std::fs::read_to_string(circuit_path)
        .with_context(|| format!("reading {}", circuit_path.display()))?;
    let circuit = parse_circuit(&text)?;
    if circuit.qubit_count > 2 {
        bail!("simulate supports up to 2 qubits (got {})", circuit.qubit_count);
    }
    let trap = cfg.trap.to_trap_config();
    let rec = CalibrationRecord::load(record_path)?;
    // The calibrated frame rotation cancels the light shift inside each
    // gate channel, so the simulation composes in the programmed frame:
    // pulses resolve without the hardware frame advances (which exist to
    // track the physical precession the channel already accounts for).
    let (pulses, _) = resolve_waveform_phases(&circuit, &ioncal::compiler::ZeroFrames, false)?;

    let mut rho = SpinRho::zeros();
    rho[(0, 0)] = num_complex::Complex64::new(1.0, 0.0);
    for pulse in &pulses {
        match *pulse {
            PulseOp::SingleQubit { qubit, angle, waveform_phase, .. } => {
                rho = apply_single_qubit(&rho, qubit, angle, waveform_phase);
            }
            PulseOp::MsPulse { qubits, theta, waveform_phase_i, waveform_phase_j, .. } => {
                let qi = trap.qubit_label(qubits.0);
                let qj = trap.qubit_label(qubits.1);
                let drive = model_drive(
                    &trap,
                    &rec,
                    qi,
                    qj,
                    theta,
                    waveform_phase_i,
                    waveform_phase_j,
                    cfg.pipeline.pulse_duration,
                )?;
                let channel = GateChannel::build(&drive)?;
                rho = channel.apply(&rho);
            }
        }
    }
    let pops = Populations::from_rho(&rho);
    println!(
        "populations: p00 = {:.6}, p01 = {:.6}, p10 = {:.6}, p11 = {:.6}",
        pops.p00, pops.p01, pops.p10, pops.p11
    );
    write_json(&dir, "populations.json", &pops)?;
    if shots > 0 {
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let probs = [pops.p00, pops.p01, pops.p10, pops.p11];
        let mut counts = [0u32; 4];
        for _ in 0..shots {
            let mut r: f64 = rng.gen();
            let mut idx = 3;
            for (i, &p) in probs.iter().enumerate() {
                if r < p {
                    idx = i;
                    break;
                }
                r -= p;
            }
            counts[idx] += 1;
        }
        println!(
            "counts over {shots} shots: 00:{} 01:{} 10:{} 11:{}",
            counts[0], counts[1], counts[2], counts[3]
        );
        write_json(&dir, "counts.json", &counts)?;
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn apply_single_qubit(rho: &SpinRho, qubit: usize, angle: f64, phase: f64) -> SpinRho {
    use num_complex::Complex64 as C64;
    let c = C64::new((angle / 2.0).cos(), 0.0);
    let ms = C64::new(0.0, -(angle / 2.0).sin());
    // exp(−i(angle/2)σ_φ) on one qubit of the pair.
    let u1 = [[c, ms * C64::from_polar(1.0, -phase)], [ms * C64::from_polar(1.0, phase), c]];
    let mut u = SpinRho::zeros();
    for a in 0..2 {
        for b in 0..2 {
            for o in 0..2 {
                let (row, col) = if qubit == 0 {
                    (2 * a + o, 2 * b + o)
                } else {
                    (2 * o + a, 2 * o + b)
                };
                u[(row, col)] = u1[a][b];
            }
        }
    }
    u * rho * u.adjoint()
}

fn parse_pair(text: &str) -> Result<(i32, i32)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        bail!("pair must be 'i,j'");
    }
    Ok((parts[0].trim().parse()?, parts[1].trim().parse()?))
}

fn cmd_fidelity(
    cfg: &ArtifactConfig,
    dir: PathBuf,
    pair: &str,
    theta: f64,
    record_path: &Path,
) -> Result<()> {
    let (qi, qj) = parse_pair(pair)?;
    let trap = cfg.trap.to_trap_config();
    let mut rec = CalibrationRecord::load(record_path)?;
    if rec.pair(qi, qj).is_none() {
        bail!("pair ({qi},{qj}) not present in the record");
    }
    let mut backend = build_virtual(cfg)?;
    let report = {
        let mut pipe = Pipeline::new(&mut backend, trap, cfg.pipeline.clone());
        let report = pipe.estimate_fidelity(&mut rec, qi, qj, theta)?;
        write_scan_csvs(&pipe.scans, &dir.join("scans"))?;
        report
    };
    println!(
        "MS({theta:.4}) on ({qi},{qj}): F = {:.4} (+{:.4}/-{:.4}) with 95% confidence",
        report.value, report.plus, report.minus
    );
    println!(
        "  p00 = {:.4}, p11 = {:.4}, parity contrast = {:.4}",
        report.p00, report.p11, report.parity_amplitude
    );
    write_json(&dir, "fidelity.json", &report)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_compile(
    cfg: &ArtifactConfig,
    dir: PathBuf,
    circuit_path: &Path,
    record_path: Option<&Path>,
) -> Result<()> {
    let text = std::fs::read_to_string(circuit_path)
        .with_context(|| format!("reading {}", circuit_path.display()))?;
    let circuit = parse_circuit(&text)?;
    let trap = cfg.trap.to_trap_config();
    let rec = record_path.map(CalibrationRecord::load).transpose()?;
    let pulses = match &rec {
        Some(rec) => {
            let frames = RecordFrames { trap: &trap, rec };
            resolve_waveform_phases(&circuit, &frames, false)?.0
        }
        None => resolve_waveform_phases(&circuit, &ioncal::compiler::ZeroFrames, false)?.0,
    };
    let mut w = csv::Writer::from_path(dir.join("pulses.csv"))?;
    w.write_record([
        "index",
        "kind",
        "qubits",
        "angle_rad",
        "waveform_phase_i_rad",
        "waveform_phase_j_rad",
        "frame_rotation_rad",
    ])?;
    for (i, p) in pulses.iter().enumerate() {
        match *p {
            PulseOp::SingleQubit { qubit, counter_propagating, angle, waveform_phase } => {
                let kind = if counter_propagating { "ry_cu" } else { "ry_co" };
                println!("{i:3}  {kind:6} q{qubit}  angle {angle:+.6}  phase {waveform_phase:+.6}");
                w.write_record(&[
                    i.to_string(),
                    kind.to_string(),
                    qubit.to_string(),
                    format!("{angle:.12}"),
                    format!("{waveform_phase:.12}"),
                    String::new(),
                    String::new(),
                ])?;
            }
            PulseOp::MsPulse { qubits, theta, waveform_phase_i, waveform_phase_j, frame_rotation } => {
                println!(
                    "{i:3}  ms     q{},q{}  theta {theta:+.6}  phases ({waveform_phase_i:+.6}, {waveform_phase_j:+.6})  frame {frame_rotation:+.6}",
                    qubits.0, qubits.1
                );
                w.write_record(&[
                    i.to_string(),
                    "ms".to_string(),
                    format!("{}-{}", qubits.0, qubits.1),
                    format!("{theta:.12}"),
                    format!("{waveform_phase_i:.12}"),
                    format!("{waveform_phase_j:.12}"),
                    format!("{frame_rotation:.12}"),
                ])?;
            }
        }
    }
    w.flush()?;
    // Envelope and frame-rotation profile of the standard pulse, for
    // plotting; the frame total comes from the first MS pulse if any.
    let frame_total = pulses
        .iter()
        .find_map(|p| match p {
            PulseOp::MsPulse { frame_rotation, .. } => Some(*frame_rotation),
            _ => None,
        })
        .unwrap_or(0.0);
    let env = ioncal::pulse::SplineEnvelope::gaussian(
        cfg.pipeline.pulse_duration,
        ioncal::pulse::DEFAULT_ENVELOPE_KNOTS,
    );
    std::fs::write(dir.join("pulse_profile.csv"), env.profile_csv(frame_total, 501))?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_serve(cfg: &ArtifactConfig) -> Result<()> {
    let mut backend = build_virtual(cfg)?;
    eprintln!("ioncal virtual backend serving on stdio (seed {})", cfg.seed);
    let mut stdin = std::io::stdin().lock();
    let mut stdout = std::io::stdout().lock();
    ioncal::calib::protocol::serve(&mut backend, &mut stdin, &mut stdout)?;
    stdout.flush().ok();
    Ok(())
}
