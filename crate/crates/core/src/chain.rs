//! Linear-chain equilibrium positions, radial normal modes, Lamb-Dicke
//! parameters, and gate mode-pair/detuning selection.
//!
//! Mode indexing follows the descending-frequency convention: within one
//! radial manifold, index 0 is the center-of-mass mode (highest frequency)
//! and index N-1 the lowest (zig-zag) mode. Ion labels are center-indexed:
//! the center ion of an odd chain (or the left-of-center ion of an even
//! chain) is q0.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{COULOMB_COUPLING, HBAR, RAMAN_DELTA_K_355_COUNTERPROP, YB171_MASS};

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("invalid trap config: {0}")]
    InvalidConfig(String),
    #[error("equilibrium solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    EquilibriumNotConverged { iterations: usize, residual: f64 },
    #[error("chain unstable in manifold {manifold}: mode {mode} has non-positive squared frequency {value:.6e} (zig-zag transition)")]
    UnstableChain {
        manifold: String,
        mode: usize,
        value: f64,
    },
    #[error("no usable mode pair for ions ({qubit_i}, {qubit_j}): all Lamb-Dicke products below floor")]
    NoModePair { qubit_i: i32, qubit_j: i32 },
    #[error("ion label {0} out of range for a chain of {1}")]
    IonOutOfRange(i32, usize),
}

/// Static trap and beam-geometry parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrapConfig {
    pub ion_count: usize,
    /// Axial (chain-direction) trap frequency (rad/s).
    pub axial_freq: f64,
    /// Center-of-mass frequencies of the two radial principal axes (rad/s).
    /// The first entry is the gate manifold by default.
    pub radial_com_freqs: [f64; 2],
    /// Ion mass (kg).
    pub ion_mass: f64,
    /// Effective Raman wavevector difference (1/m).
    pub raman_delta_k: f64,
}

impl TrapConfig {
    /// Artifact default trap for an N-ion ¹⁷¹Yb⁺ chain. The radial
    /// frequencies land in the 2–2.5 MHz range; they are artifact defaults,
    /// not measured values. The axial frequency backs off for longer chains
    /// to stay clear of the zig-zag transition.
    pub fn default_chain(ion_count: usize) -> Self {
        let axial_khz = match ion_count {
            0..=6 => 750.0,
            7 => 650.0,
            n => 550.0 * (8.0 / n as f64).powf(0.9),
        };
        TrapConfig {
            ion_count,
            axial_freq: 2.0 * std::f64::consts::PI * axial_khz * 1e3,
            radial_com_freqs: [
                2.0 * std::f64::consts::PI * 2.40e6,
                2.0 * std::f64::consts::PI * 2.22e6,
            ],
            ion_mass: YB171_MASS,
            raman_delta_k: RAMAN_DELTA_K_355_COUNTERPROP,
        }
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        if self.ion_count < 1 {
            return Err(ChainError::InvalidConfig("ion_count must be >= 1".into()));
        }
        if self.axial_freq <= 0.0 || self.ion_mass <= 0.0 || self.raman_delta_k <= 0.0 {
            return Err(ChainError::InvalidConfig(
                "frequencies, mass, and raman_delta_k must be positive".into(),
            ));
        }
        for &w in &self.radial_com_freqs {
            if w <= self.axial_freq {
                return Err(ChainError::InvalidConfig(
                    "radial COM frequencies must exceed the axial frequency".into(),
                ));
            }
        }
        Ok(())
    }

    /// Coulomb length scale ℓ = (e²/(4πε₀ m ω_z²))^(1/3) (m).
    pub fn length_scale(&self) -> f64 {
        (COULOMB_COUPLING / (self.ion_mass * self.axial_freq * self.axial_freq)).cbrt()
    }

    /// Center-indexed label of chain position `pos` (0 = leftmost).
    pub fn qubit_label(&self, pos: usize) -> i32 {
        pos as i32 - (self.ion_count as i32 - 1) / 2
    }

    /// Chain position of a center-indexed qubit label.
    pub fn position_of(&self, label: i32) -> Result<usize, ChainError> {
        let pos = label + (self.ion_count as i32 - 1) / 2;
        if pos < 0 || pos >= self.ion_count as i32 {
            return Err(ChainError::IonOutOfRange(label, self.ion_count));
        }
        Ok(pos as usize)
    }
}

/// One radial manifold: frequencies ν_k (descending), participation vectors
/// b_{k,i} (rows orthonormal), and Lamb-Dicke parameters η_{k,i}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSpectrum {
    pub manifold: String,
    /// Mode angular frequencies (rad/s), sorted descending; index 0 is COM.
    pub frequencies: Vec<f64>,
    /// participation[k][i] = b_{k,i}.
    pub participation: Vec<Vec<f64>>,
    /// lamb_dicke[k][i] = η_{k,i} = b_{k,i}·Δk·√(ħ/(2 m ν_k)).
    pub lamb_dicke: Vec<Vec<f64>>,
}

impl ModeSpectrum {
    pub fn mode_count(&self) -> usize {
        self.frequencies.len()
    }

    /// η_{k,i}·η_{k,j} for chain positions (i, j).
    pub fn eta_product(&self, k: usize, pos_i: usize, pos_j: usize) -> f64 {
        self.lamb_dicke[k][pos_i] * self.lamb_dicke[k][pos_j]
    }
}

/// Mode pair and drive detuning chosen for one qubit pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatePairPlan {
    /// Center-indexed ion labels.
    pub qubit_i: i32,
    pub qubit_j: i32,
    /// Higher-frequency mode of the bracketing pair (descending index).
    pub mode_upper: usize,
    /// Lower-frequency mode of the bracketing pair. Equal to `mode_upper`
    /// for an unbalanced (center-ion fallback) plan.
    pub mode_lower: usize,
    /// Mode the detuning is quoted from (the nearer sideband).
    pub reference_mode: usize,
    /// Drive offset from the reference mode's sideband (rad/s, signed:
    /// positive = above the mode frequency).
    pub detuning: f64,
    /// Drive offset from the carrier, δ_c = ν_ref + detuning (rad/s).
    pub delta_c: f64,
    pub balanced: bool,
}

/// Equilibrium axial positions (m), sorted ascending, center of mass at 0.
///
/// Damped Newton iteration on the dimensionless force balance, starting from
/// the uniform-spacing ansatz.
pub fn equilibrium_positions(config: &TrapConfig) -> Result<Vec<f64>, ChainError> {
    config.validate()?;
    let n = config.ion_count;
    let scale = config.length_scale();
    if n == 1 {
        return Ok(vec![0.0]);
    }

    // Uniform-spacing ansatz; the 2.018/N^0.559 minimum-spacing fit is close
    // enough everywhere for Newton to converge.
    let d0 = 2.018 / (n as f64).powf(0.559);
    let mut u: Vec<f64> = (0..n).map(|i| (i as f64 - (n as f64 - 1.0) / 2.0) * d0).collect();

    let force = |u: &[f64], out: &mut DVector<f64>| {
        for i in 0..n {
            let mut f = u[i];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = u[i] - u[j];
                f -= d / (d * d * d.abs());
            }
            out[i] = f;
        }
    };

    let mut f = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, n);
    force(&u, &mut f);
    let mut residual = f.amax();
    let max_iter = 200;
    for _ in 0..max_iter {
        if residual < 1e-13 {
            break;
        }
        for i in 0..n {
            let mut diag = 1.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d: f64 = u[i] - u[j];
                let inv3 = 1.0 / (d * d * d.abs());
                diag += 2.0 * inv3;
                jac[(i, j)] = -2.0 * inv3;
            }
            jac[(i, i)] = diag;
        }
        let step = jac
            .clone()
            .lu()
            .solve(&f)
            .ok_or(ChainError::EquilibriumNotConverged { iterations: 0, residual })?;
        // Damp until the residual actually drops and the ordering survives.
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = (0..n).map(|i| u[i] - lambda * step[i]).collect();
            let ordered = trial.windows(2).all(|w| w[0] < w[1]);
            if ordered {
                force(&trial, &mut f);
                let r = f.amax();
                if r < residual {
                    u = trial;
                    residual = r;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(ChainError::EquilibriumNotConverged { iterations: max_iter, residual });
        }
    }
    if residual >= 1e-12 {
        return Err(ChainError::EquilibriumNotConverged { iterations: max_iter, residual });
    }

    // Exact reflection symmetry (the potential is even in u).
    let sym: Vec<f64> = (0..n).map(|i| 0.5 * (u[i] - u[n - 1 - i])).collect();
    let mean = sym.iter().sum::<f64>() / n as f64;
    Ok(sym.iter().map(|&ui| (ui - mean) * scale).collect())
}

/// Radial normal modes of one principal axis.
///
/// Diagonalizes the dimensionless Coulomb coupling matrix and shifts by the
/// radial COM frequency, so the COM eigenvalue is exact by construction.
pub fn radial_modes(
    config: &TrapConfig,
    positions: &[f64],
    manifold: usize,
) -> Result<ModeSpectrum, ChainError> {
    config.validate()?;
    let n = config.ion_count;
    assert_eq!(positions.len(), n, "positions/ion_count mismatch");
    let omega_r = config.radial_com_freqs[manifold];
    let omega_z = config.axial_freq;
    let scale = config.length_scale();
    let label = format!("radial-{}", manifold + 1);

    // Dimensionless transverse Coulomb matrix C (units of m·ω_z²):
    //   C_ij = 1/|u_i-u_j|³ (i≠j),  C_ii = -Σ_{j≠i} C_ij.
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = (positions[i] - positions[j]) / scale;
            let inv3 = 1.0 / (d.abs().powi(3));
            c[(i, j)] = inv3;
            diag -= inv3;
        }
        c[(i, i)] = diag;
    }

    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    // ν_k² = ω_r² + ω_z²·λ_k; sort descending in λ.
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let mut frequencies = Vec::with_capacity(n);
    let mut participation = Vec::with_capacity(n);
    let mut lamb_dicke = Vec::with_capacity(n);
    for (k, &idx) in order.iter().enumerate() {
        let nu_sq = omega_r * omega_r + omega_z * omega_z * eig.eigenvalues[idx];
        if nu_sq <= 0.0 {
            return Err(ChainError::UnstableChain { manifold: label, mode: k, value: nu_sq });
        }
        let nu = nu_sq.sqrt();
        let col = eig.eigenvectors.column(idx);
        // Sign convention: largest-|b| component positive.
        let mut imax = 0;
        for i in 1..n {
            if col[i].abs() > col[imax].abs() {
                imax = i;
            }
        }
        let sign = if col[imax] < 0.0 { -1.0 } else { 1.0 };
        let b: Vec<f64> = col.iter().map(|&v| sign * v).collect();
        let zpf = (HBAR / (2.0 * config.ion_mass * nu)).sqrt();
        let eta: Vec<f64> = b.iter().map(|&bi| bi * config.raman_delta_k * zpf).collect();
        frequencies.push(nu);
        participation.push(b);
        lamb_dicke.push(eta);
    }

    Ok(ModeSpectrum { manifold: label, frequencies, participation, lamb_dicke })
}

/// Both radial manifolds for a chain, gate manifold first.
pub fn chain_spectra(config: &TrapConfig) -> Result<Vec<ModeSpectrum>, ChainError> {
    let positions = equilibrium_positions(config)?;
    Ok(vec![
        radial_modes(config, &positions, 0)?,
        radial_modes(config, &positions, 1)?,
    ])
}

/// Relative participation floor below which an ion is treated as not
/// coupling to a mode (center ion in antisymmetric modes).
const ETA_PRODUCT_FLOOR_REL: f64 = 1e-6;

/// Default fallback detuning above the strongest symmetric mode for
/// center-ion pairs (rad/s).
pub const DEFAULT_FALLBACK_DETUNING: f64 = 2.0 * std::f64::consts::PI * 30.0e3;

/// Selects the adjacent mode pair maximizing |η_i,k+ η_j,k+ − η_i,k− η_j,k−|
/// and a drive detuning between the two modes at which the first-order
/// sensitivity of θ to a common shift of all mode frequencies vanishes.
///
/// `others` supplies the remaining manifolds so spectator modes are included
/// in the sensitivity balance. If either ion fails to participate in every
/// mode that could balance the pair (center ion of an odd chain), the plan
/// falls back to a fixed offset above the single strongest mode and is
/// marked `balanced: false`.
pub fn select_mode_pair(
    config: &TrapConfig,
    gate: &ModeSpectrum,
    others: &[&ModeSpectrum],
    qubit_i: i32,
    qubit_j: i32,
    fallback_detuning: f64,
) -> Result<GatePairPlan, ChainError> {
    let pos_i = config.position_of(qubit_i)?;
    let pos_j = config.position_of(qubit_j)?;
    let n = gate.mode_count();
    if pos_i == pos_j {
        return Err(ChainError::InvalidConfig("qubit pair must be distinct".into()));
    }

    let products: Vec<f64> = (0..n).map(|k| gate.eta_product(k, pos_i, pos_j)).collect();
    let p_max = products.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    if p_max <= 0.0 {
        return Err(ChainError::NoModePair { qubit_i, qubit_j });
    }
    let floor = ETA_PRODUCT_FLOOR_REL * p_max;

    if n >= 2 {
        // Adjacent pair maximizing the balancing objective.
        let mut best = 0usize;
        let mut best_obj = f64::NEG_INFINITY;
        for k in 0..n - 1 {
            let obj = (products[k] - products[k + 1]).abs();
            if obj > best_obj {
                best_obj = obj;
                best = k;
            }
        }
        let (upper, lower) = (best, best + 1);
        let p_up = products[upper];
        let p_lo = products[lower];
        if p_up.abs() >= floor && p_lo.abs() >= floor && p_up * p_lo < 0.0 {
            let delta_c = balance_detuning(gate, others, &products, pos_i, pos_j, upper, lower);
            let nu_up = gate.frequencies[upper];
            let nu_lo = gate.frequencies[lower];
            let (reference_mode, detuning) =
                if (delta_c - nu_lo).abs() <= (delta_c - nu_up).abs() {
                    (lower, delta_c - nu_lo)
                } else {
                    (upper, delta_c - nu_up)
                };
            return Ok(GatePairPlan {
                qubit_i,
                qubit_j,
                mode_upper: upper,
                mode_lower: lower,
                reference_mode,
                detuning,
                delta_c,
                balanced: true,
            });
        }
    }

    // Center-ion fallback: strongest coupled mode, fixed offset above it.
    let mut k_star = None;
    let mut p_best = floor;
    for (k, &p) in products.iter().enumerate() {
        if p.abs() >= p_best {
            p_best = p.abs();
            k_star = Some(k);
        }
    }
    let k_star = k_star.ok_or(ChainError::NoModePair { qubit_i, qubit_j })?;
    let nu = gate.frequencies[k_star];
    Ok(GatePairPlan {
        qubit_i,
        qubit_j,
        mode_upper: k_star,
        mode_lower: k_star,
        reference_mode: k_star,
        detuning: fallback_detuning,
        delta_c: nu + fallback_detuning,
        balanced: false,
    })
}

/// Root of dθ/dε = Σ_k p_k/(δ_c − ν_k)² over δ_c strictly between the two
/// selected modes, including spectator modes from all manifolds.
fn balance_detuning(
    gate: &ModeSpectrum,
    others: &[&ModeSpectrum],
    products: &[f64],
    pos_i: usize,
    pos_j: usize,
    upper: usize,
    lower: usize,
) -> f64 {
    let nu_up = gate.frequencies[upper];
    let nu_lo = gate.frequencies[lower];
    let mut terms: Vec<(f64, f64)> = products
        .iter()
        .enumerate()
        .map(|(k, &p)| (p, gate.frequencies[k]))
        .collect();
    for spec in others {
        for k in 0..spec.mode_count() {
            terms.push((spec.eta_product(k, pos_i, pos_j), spec.frequencies[k]));
        }
    }
    let slope = |dc: f64| -> f64 {
        terms
            .iter()
            .map(|&(p, nu)| {
                let d = dc - nu;
                p / (d * d)
            })
            .sum()
    };

    // The slope diverges with the sign of the adjacent-mode product at each
    // end of the gap, and those signs are opposite, so a root is bracketed.
    let gap = nu_up - nu_lo;
    let mut a = nu_lo + 1e-6 * gap;
    let mut b = nu_up - 1e-6 * gap;
    let (fa, fb) = (slope(a), slope(b));
    if fa * fb > 0.0 {
        // Spectators overwhelm the pair (pathological); fall back to the
        // pair-only zero of p_up/δ_up² + p_lo/δ_lo².
        let r = (products[upper].abs() / products[lower].abs()).sqrt();
        return nu_lo + gap / (1.0 + r);
    }
    let mut fa = fa;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = slope(mid);
        if fm == 0.0 || (b - a) < 1e-9 {
            return mid;
        }
        if fa * fm < 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cfg(n: usize) -> TrapConfig {
        TrapConfig::default_chain(n)
    }

    #[test]
    fn single_ion_sits_at_center() {
        let pos = equilibrium_positions(&cfg(1)).unwrap();
        assert_eq!(pos, vec![0.0]);
    }

    #[test]
    fn three_ion_chain_is_symmetric_with_center_at_zero() {
        let pos = equilibrium_positions(&cfg(3)).unwrap();
        assert_eq!(pos[1], 0.0);
        assert_eq!(pos[0], -pos[2]);
    }

    #[test]
    fn two_ion_spacing_matches_closed_form() {
        // d = 2^(1/3)·(e²/(4πε₀·m·ω_z²))^(1/3) at ω_z = 2π×700 kHz.
        let mut config = cfg(2);
        config.axial_freq = 2.0 * PI * 700e3;
        let pos = equilibrium_positions(&config).unwrap();
        let d = pos[1] - pos[0];
        let expected = 2.0f64.cbrt() * config.length_scale();
        assert!((d - expected).abs() / expected < 1e-10, "d={d:.6e} vs {expected:.6e}");
    }

    #[test]
    fn single_ion_mode_is_the_com() {
        let config = cfg(1);
        let pos = equilibrium_positions(&config).unwrap();
        let spec = radial_modes(&config, &pos, 0).unwrap();
        assert_eq!(spec.mode_count(), 1);
        assert!((spec.frequencies[0] - config.radial_com_freqs[0]).abs() < 1e-9);
        assert!((spec.participation[0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn com_mode_is_exact_for_all_sizes() {
        for n in 1..=8 {
            let config = cfg(n);
            let pos = equilibrium_positions(&config).unwrap();
            let spec = radial_modes(&config, &pos, 0).unwrap();
            let rel = (spec.frequencies[0] - config.radial_com_freqs[0]).abs()
                / config.radial_com_freqs[0];
            assert!(rel < 1e-12, "N={n}: rel err {rel:.3e}");
            let expect = 1.0 / (n as f64).sqrt();
            for i in 0..n {
                assert!((spec.participation[0][i] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_ion_tilt_frequency_matches_analytic() {
        let mut config = cfg(2);
        config.axial_freq = 2.0 * PI * 700e3;
        config.radial_com_freqs = [2.0 * PI * 2.4e6, 2.0 * PI * 2.2e6];
        let pos = equilibrium_positions(&config).unwrap();
        let spec = radial_modes(&config, &pos, 0).unwrap();
        let nu0 = spec.frequencies[0];
        let nu1 = spec.frequencies[1];
        let expected = (nu0 * nu0 - config.axial_freq * config.axial_freq).sqrt();
        assert!((nu1 - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn participation_rows_are_orthonormal() {
        for n in 1..=8 {
            let config = cfg(n);
            let pos = equilibrium_positions(&config).unwrap();
            let spec = radial_modes(&config, &pos, 0).unwrap();
            for k in 0..n {
                for l in 0..n {
                    let dot: f64 = (0..n)
                        .map(|i| spec.participation[k][i] * spec.participation[l][i])
                        .sum();
                    let expect = if k == l { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-10, "N={n} ({k},{l}): {dot:.3e}");
                }
            }
        }
    }

    #[test]
    fn lamb_dicke_scales_linearly_with_raman_wavevector() {
        let config = cfg(4);
        let pos = equilibrium_positions(&config).unwrap();
        let spec = radial_modes(&config, &pos, 0).unwrap();
        let mut doubled = config.clone();
        doubled.raman_delta_k *= 2.0;
        let spec2 = radial_modes(&doubled, &pos, 0).unwrap();
        for k in 0..4 {
            for i in 0..4 {
                let a = spec.lamb_dicke[k][i];
                let b = spec2.lamb_dicke[k][i];
                assert!((b - 2.0 * a).abs() <= 1e-15 * b.abs().max(1e-30));
            }
        }
    }

    #[test]
    fn chain_goes_unstable_when_radial_confinement_is_too_weak() {
        let mut config = cfg(8);
        // Radial barely above axial: an 8-ion chain zig-zags.
        config.radial_com_freqs = [config.axial_freq * 1.05, config.axial_freq * 1.10];
        let pos = equilibrium_positions(&config).unwrap();
        match radial_modes(&config, &pos, 0) {
            Err(ChainError::UnstableChain { .. }) => {}
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn two_ion_plan_matches_reference_structure() {
        // Bracketing pair (0,1), balanced, detuning at the tens-of-kHz
        // operating point quoted from the lower (tilt) mode.
        let config = cfg(2);
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
        assert!(plan.balanced);
        assert_eq!((plan.mode_upper, plan.mode_lower), (0, 1));
        assert_eq!(plan.reference_mode, 1);
        let khz = plan.detuning / (2.0 * PI * 1e3);
        assert!((40.0..70.0).contains(&khz), "detuning {khz:.1} kHz");
        assert!(plan.delta_c > spectra[0].frequencies[1] && plan.delta_c < spectra[0].frequencies[0]);
    }

    #[test]
    fn three_ion_outer_pair_is_balanced() {
        let config = cfg(3);
        let spectra = chain_spectra(&config).unwrap();
        let plan = select_mode_pair(
            &config,
            &spectra[0],
            &[&spectra[1]],
            -1,
            1,
            DEFAULT_FALLBACK_DETUNING,
        )
        .unwrap();
        assert!(plan.balanced);
        let khz = plan.detuning.abs() / (2.0 * PI * 1e3);
        assert!((15.0..90.0).contains(&khz), "detuning {khz:.1} kHz");
    }

    #[test]
    fn three_ion_center_pair_falls_back_to_strongest_mode() {
        let config = cfg(3);
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
        assert!(!plan.balanced);
        // Center ion kills the tilt mode; zig-zag has the strongest product.
        assert_eq!(plan.reference_mode, 2);
        assert!((plan.detuning - DEFAULT_FALLBACK_DETUNING).abs() < 1e-9);
    }

    #[test]
    fn selected_pair_maximizes_the_balancing_objective() {
        for n in 2..=8 {
            let config = cfg(n);
            let spectra = chain_spectra(&config).unwrap();
            let gate = &spectra[0];
            for pi in 0..n {
                for pj in pi + 1..n {
                    let qi = config.qubit_label(pi);
                    let qj = config.qubit_label(pj);
                    let plan = select_mode_pair(
                        &config,
                        gate,
                        &[&spectra[1]],
                        qi,
                        qj,
                        DEFAULT_FALLBACK_DETUNING,
                    )
                    .unwrap();
                    if !plan.balanced {
                        continue;
                    }
                    let chosen = (gate.eta_product(plan.mode_upper, pi, pj)
                        - gate.eta_product(plan.mode_lower, pi, pj))
                    .abs();
                    for k in 0..n - 1 {
                        let obj =
                            (gate.eta_product(k, pi, pj) - gate.eta_product(k + 1, pi, pj)).abs();
                        assert!(
                            obj <= chosen + 1e-15,
                            "N={n} pair ({qi},{qj}): adjacent pair {k} beats selection"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn qubit_labels_are_center_indexed() {
        let c2 = cfg(2);
        assert_eq!((c2.qubit_label(0), c2.qubit_label(1)), (0, 1));
        let c5 = cfg(5);
        assert_eq!(c5.qubit_label(0), -2);
        assert_eq!(c5.qubit_label(2), 0);
        assert_eq!(c5.qubit_label(4), 2);
        assert_eq!(c5.position_of(-2).unwrap(), 0);
        assert!(c5.position_of(3).is_err());
    }
}
