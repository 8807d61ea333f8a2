//! Deterministic fitting toolkit: damped least squares with a fixed
//! multi-start grid, binomial maximum-likelihood Gaussian fits with profile
//! intervals, Wilson score intervals, linear crossing fits, and the
//! two-qubit fidelity estimator.
//!
//! Uncertainty conventions: curve fits report 1σ from the covariance matrix
//! (ci95 = ±1.96σ); the upper-half MLE reports 2σ likelihood-profile
//! intervals. No randomness anywhere — identical data give bit-identical
//! results.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("fit did not converge: {0}")]
    NotConverged(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("insufficient data: need {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("lines are parallel within tolerance; no crossing")]
    NoCrossing,
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Binomial shot record over a swept parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShotData {
    pub x: Vec<f64>,
    pub successes: Vec<f64>,
    pub trials: Vec<f64>,
    /// Which measured probability this series records (e.g. "p1", "p11").
    pub outcome_label: String,
}

impl ShotData {
    pub fn new(
        x: Vec<f64>,
        successes: Vec<f64>,
        trials: Vec<f64>,
        outcome_label: &str,
    ) -> Result<Self, FitError> {
        if x.len() != successes.len() || x.len() != trials.len() {
            return Err(FitError::Invalid("x/successes/trials length mismatch".into()));
        }
        for (&s, &n) in successes.iter().zip(&trials) {
            if !(0.0..=n).contains(&s) || n <= 0.0 {
                return Err(FitError::Invalid(format!("bad counts: {s} of {n}")));
            }
        }
        Ok(ShotData { x, successes, trials, outcome_label: outcome_label.to_string() })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.successes.iter().zip(&self.trials).map(|(&s, &n)| s / n).collect()
    }

    /// Reads an externally recorded scan: CSV with header and columns
    /// `x, successes, trials`.
    pub fn from_csv<R: std::io::Read>(reader: R, outcome_label: &str) -> Result<Self, FitError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut x = Vec::new();
        let mut successes = Vec::new();
        let mut trials = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| FitError::Invalid(format!("csv: {e}")))?;
            if record.len() < 3 {
                return Err(FitError::Invalid("csv needs columns x, successes, trials".into()));
            }
            let parse = |i: usize| -> Result<f64, FitError> {
                record[i]
                    .trim()
                    .parse()
                    .map_err(|_| FitError::Invalid(format!("bad csv field '{}'", &record[i])))
            };
            x.push(parse(0)?);
            successes.push(parse(1)?);
            trials.push(parse(2)?);
        }
        ShotData::new(x, successes, trials, outcome_label)
    }
}

/// Fit output: named parameters, covariance (parameter order as in
/// `param_names`), and per-parameter intervals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: BTreeMap<String, f64>,
    pub param_names: Vec<String>,
    pub covariance: Vec<Vec<f64>>,
    pub ci95: BTreeMap<String, (f64, f64)>,
    pub residual_norm: f64,
    pub converged: bool,
}

impl FitResult {
    pub fn get(&self, name: &str) -> f64 {
        self.params[name]
    }

    pub fn sigma(&self, name: &str) -> f64 {
        let idx = self.param_names.iter().position(|n| n == name).unwrap();
        self.covariance[idx][idx].max(0.0).sqrt()
    }

    fn from_lm(names: &[String], lm: &LmOutcome) -> Self {
        let params: BTreeMap<String, f64> =
            names.iter().cloned().zip(lm.params.iter().copied()).collect();
        let mut ci95 = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            let s = lm.covariance[(i, i)].max(0.0).sqrt();
            ci95.insert(n.clone(), (lm.params[i] - 1.96 * s, lm.params[i] + 1.96 * s));
        }
        FitResult {
            params,
            param_names: names.to_vec(),
            covariance: (0..names.len())
                .map(|i| (0..names.len()).map(|j| lm.covariance[(i, j)]).collect())
                .collect(),
            ci95,
            residual_norm: lm.residual_norm,
            converged: lm.converged,
        }
    }
}

// ---------------------------------------------------------------------------
// Damped least squares
// ---------------------------------------------------------------------------

struct LmOutcome {
    params: Vec<f64>,
    covariance: DMatrix<f64>,
    residual_norm: f64,
    converged: bool,
}

/// Levenberg-Marquardt with numeric Jacobian; runs every start and keeps the
/// best converged minimum.
fn levenberg_marquardt<F>(residuals: F, starts: &[Vec<f64>], scales: &[f64]) -> Option<LmOutcome>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut best: Option<LmOutcome> = None;
    for start in starts {
        if let Some(out) = lm_single(&residuals, start, scales) {
            let better = match &best {
                None => true,
                Some(b) => out.residual_norm < b.residual_norm * (1.0 - 1e-12),
            };
            if better {
                best = Some(out);
            }
        }
    }
    best
}

fn lm_single<F>(residuals: &F, start: &[f64], scales: &[f64]) -> Option<LmOutcome>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let np = start.len();
    let mut p = DVector::from_column_slice(start);
    let mut r = DVector::from_vec(residuals(p.as_slice()));
    if r.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut sse = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..200 {
        let jac = numeric_jacobian(residuals, p.as_slice(), scales, r.len());
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..25 {
            let mut damped = jtj.clone();
            for i in 0..np {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = &p - &step;
            let tr = DVector::from_vec(residuals(trial.as_slice()));
            if tr.iter().all(|v| v.is_finite()) {
                let tsse = tr.norm_squared();
                if tsse < sse {
                    let rel = (sse - tsse) / sse.max(1e-300);
                    let small_step = step
                        .iter()
                        .enumerate()
                        .all(|(i, s)| s.abs() <= 1e-10 * scales[i].abs().max(1e-30));
                    p = trial;
                    r = tr;
                    sse = tsse;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    if rel < 1e-14 || small_step {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    // Covariance from the final Jacobian: (JᵀJ)⁻¹ · SSE/(n − p).
    let jac = numeric_jacobian(residuals, p.as_slice(), scales, r.len());
    let jtj = jac.transpose() * &jac;
    let dof = (r.len() as f64 - np as f64).max(1.0);
    let covariance = jtj
        .clone()
        .try_inverse()
        .map(|inv| inv * (sse / dof))
        .unwrap_or_else(|| DMatrix::from_element(np, np, f64::NAN));
    Some(LmOutcome { params: p.as_slice().to_vec(), covariance, residual_norm: sse.sqrt(), converged })
}

fn numeric_jacobian<F>(residuals: &F, p: &[f64], scales: &[f64], nr: usize) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let np = p.len();
    let mut jac = DMatrix::zeros(nr, np);
    let mut work = p.to_vec();
    for j in 0..np {
        let h = 1e-6 * scales[j].abs().max(1e-12);
        work[j] = p[j] + h;
        let rp = residuals(&work);
        work[j] = p[j] - h;
        let rm = residuals(&work);
        work[j] = p[j];
        for i in 0..nr {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    jac
}

// ---------------------------------------------------------------------------
// Nelder-Mead (for binomial likelihoods)
// ---------------------------------------------------------------------------

fn nelder_mead<F>(f: &F, start: &[f64], steps: &[f64], iters: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..iters {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let (best, worst, second_worst) = (order[0], order[n], order[n - 1]);
        if (values[worst] - values[best]).abs()
            < 1e-12 * (1.0 + values[best].abs())
        {
            break;
        }
        let mut centroid = vec![0.0; n];
        for &idx in order.iter().take(n) {
            for k in 0..n {
                centroid[k] += simplex[idx][k] / n as f64;
            }
        }
        let point = |coef: f64| -> Vec<f64> {
            (0..n).map(|k| centroid[k] + coef * (simplex[worst][k] - centroid[k])).collect()
        };
        let refl = point(-1.0);
        let f_refl = f(&refl);
        if f_refl < values[best] {
            let exp = point(-2.0);
            let f_exp = f(&exp);
            if f_exp < f_refl {
                simplex[worst] = exp;
                values[worst] = f_exp;
            } else {
                simplex[worst] = refl;
                values[worst] = f_refl;
            }
        } else if f_refl < values[second_worst] {
            simplex[worst] = refl;
            values[worst] = f_refl;
        } else {
            let contr = point(0.5);
            let f_contr = f(&contr);
            if f_contr < values[worst] {
                simplex[worst] = contr;
                values[worst] = f_contr;
            } else {
                // Shrink toward the best vertex.
                let best_v = simplex[best].clone();
                for idx in 0..=n {
                    if idx == best {
                        continue;
                    }
                    for k in 0..n {
                        simplex[idx][k] = 0.5 * (simplex[idx][k] + best_v[k]);
                    }
                    values[idx] = f(&simplex[idx]);
                }
            }
        }
    }
    let mut ib = 0;
    for i in 1..=n {
        if values[i] < values[ib] {
            ib = i;
        }
    }
    (simplex[ib].clone(), values[ib])
}

// ---------------------------------------------------------------------------
// Amplitude-scan saturation fit
// ---------------------------------------------------------------------------

/// P₁(a) = ½(1 − exp(−Ω(a)·t/ξ)·cos(Ω(a)·t)) with Ω(a) = Ξ·sin(π a/(2 a_sat)).
pub fn amplitude_scan_model(a: f64, t: f64, a_sat: f64, xi_rate: f64, decay: f64) -> f64 {
    let omega = xi_rate * (std::f64::consts::FRAC_PI_2 * a / a_sat).sin();
    let p = 0.5 * (1.0 - (-omega * t / decay).exp() * (omega * t).cos());
    p.clamp(0.0, 1.0)
}

/// Fits the AOM saturation response to a fixed-duration Rabi amplitude scan.
/// Returns parameters `a_sat`, `Xi` (rad/s), and the dephasing constant `xi`.
pub fn fit_amplitude_scan(data: &ShotData, duration: f64) -> Result<FitResult, FitError> {
    if data.len() < 10 {
        return Err(FitError::InsufficientData { needed: 10, got: data.len() });
    }
    let probs = data.probabilities();
    let spread = probs.iter().cloned().fold(f64::MIN, f64::max)
        - probs.iter().cloned().fold(f64::MAX, f64::min);
    if spread < 0.2 {
        return Err(FitError::Degenerate("no oscillation visible in the scan".into()));
    }
    let a_max = data.x.iter().cloned().fold(0.0f64, f64::max);
    // Half-period count of (P − ½) sign changes on the smoothed curve
    // estimates the peak phase; raw counts are inflated by shot noise.
    let n = probs.len();
    let smoothed: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            probs[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let mut crossings = 0usize;
    for w in smoothed.windows(2) {
        if (w[0] - 0.5) * (w[1] - 0.5) < 0.0 {
            crossings += 1;
        }
    }
    let phase_est = std::f64::consts::PI * crossings.max(1) as f64;
    let xi_est = phase_est / duration;

    let residual = |p: &[f64]| -> Vec<f64> {
        let (a_sat, xi_rate, decay) = (p[0].abs(), p[1].abs(), p[2].abs().max(1e-3));
        data.x
            .iter()
            .zip(&probs)
            .map(|(&a, &y)| amplitude_scan_model(a, duration, a_sat, xi_rate, decay) - y)
            .collect()
    };
    let mut starts = Vec::new();
    for fa in [0.9, 1.2, 1.8, 3.0] {
        for fx in [0.75, 0.9, 1.1, 1.3] {
            starts.push(vec![a_max * fa, xi_est * fx, 20.0]);
        }
    }
    let scales = [a_max, xi_est, 20.0];
    let lm = levenberg_marquardt(residual, &starts, &scales)
        .ok_or_else(|| FitError::NotConverged("amplitude scan".into()))?;
    if !lm.converged {
        return Err(FitError::NotConverged("amplitude scan".into()));
    }
    let names = ["a_sat".to_string(), "Xi".to_string(), "xi".to_string()];
    let mut lm = lm;
    for v in lm.params.iter_mut() {
        *v = v.abs();
    }
    Ok(FitResult::from_lm(&names, &lm))
}

// ---------------------------------------------------------------------------
// Sequential-gate decay fits
// ---------------------------------------------------------------------------

/// P_odd(M) = ½(1 − A·exp(−M²/(2·Mσ_odd²))).
pub fn odd_parity_model(m: f64, a: f64, m_sigma_odd: f64) -> f64 {
    (0.5 * (1.0 - a * (-m * m / (2.0 * m_sigma_odd * m_sigma_odd)).exp())).clamp(0.0, 1.0)
}

/// P_|11⟩(M) = (P_even(M)/2)·(1 − exp(−M²/(2·Mσ_even²))·cos(θM)).
pub fn p11_loop_model(m: f64, a: f64, m_sigma_odd: f64, m_sigma_even: f64, theta: f64) -> f64 {
    let p_even = 1.0 - odd_parity_model(m, a, m_sigma_odd);
    (p_even / 2.0 * (1.0 - (-m * m / (2.0 * m_sigma_even * m_sigma_even)).exp() * (theta * m).cos()))
        .clamp(0.0, 1.0)
}

/// Two-stage fit of the sequential-gate loop data: first the odd-parity
/// leakage (A, Mσ_odd), then the even-subspace Rabi dephasing (Mσ_even, θ)
/// with the stage-one parameters frozen.
pub fn fit_parity_decay(data_odd: &ShotData, data_11: &ShotData) -> Result<FitResult, FitError> {
    if data_odd.len() < 5 || data_11.len() < 8 {
        return Err(FitError::InsufficientData { needed: 8, got: data_odd.len().min(data_11.len()) });
    }
    let m_max = data_odd.x.iter().cloned().fold(0.0f64, f64::max);
    let probs_odd = data_odd.probabilities();

    // Stage 1: odd-parity leakage.
    let res_odd = |p: &[f64]| -> Vec<f64> {
        let (a, ms) = (p[0], p[1].abs().max(1e-6));
        data_odd
            .x
            .iter()
            .zip(&probs_odd)
            .map(|(&m, &y)| odd_parity_model(m, a, ms) - y)
            .collect()
    };
    let starts: Vec<Vec<f64>> = [0.3, 0.6, 1.0, 1.5, 2.5, 4.0, 6.0, 10.0]
        .iter()
        .map(|f| vec![1.0, m_max * f / 4.0])
        .collect();
    let scales = [1.0, m_max];
    let lm1 = levenberg_marquardt(res_odd, &starts, &scales)
        .filter(|o| o.converged)
        .ok_or_else(|| FitError::NotConverged("odd-parity stage".into()))?;
    let (a_fit, ms_odd) = (lm1.params[0], lm1.params[1].abs());

    // Stage 2: even-subspace oscillation with stage-1 frozen.
    let probs_11 = data_11.probabilities();
    let mut crossings = 0usize;
    let mean11: f64 = probs_11.iter().sum::<f64>() / probs_11.len() as f64;
    for w in probs_11.windows(2) {
        if (w[0] - mean11) * (w[1] - mean11) < 0.0 {
            crossings += 1;
        }
    }
    let m11_max = data_11.x.iter().cloned().fold(0.0f64, f64::max);
    let theta_est = std::f64::consts::PI * crossings.max(1) as f64 / m11_max;
    let res_11 = |p: &[f64]| -> Vec<f64> {
        let (mse, theta) = (p[0].abs().max(1e-6), p[1]);
        data_11
            .x
            .iter()
            .zip(&probs_11)
            .map(|(&m, &y)| p11_loop_model(m, a_fit, ms_odd, mse, theta) - y)
            .collect()
    };
    let mut starts2 = Vec::new();
    for fm in [0.1, 0.25, 0.5, 1.0] {
        for ft in [0.95, 1.05] {
            starts2.push(vec![m11_max * fm, theta_est * ft]);
        }
    }
    let scales2 = [m11_max, theta_est.max(1e-3)];
    let lm2 = levenberg_marquardt(res_11, &starts2, &scales2)
        .filter(|o| o.converged)
        .ok_or_else(|| FitError::NotConverged("|11⟩ stage".into()))?;

    let names = vec![
        "A".to_string(),
        "M_sigma_odd".to_string(),
        "M_sigma_even".to_string(),
        "theta".to_string(),
    ];
    let mut params = BTreeMap::new();
    params.insert("A".into(), a_fit);
    params.insert("M_sigma_odd".into(), ms_odd);
    params.insert("M_sigma_even".into(), lm2.params[0].abs());
    params.insert("theta".into(), lm2.params[1].abs());
    let mut covariance = vec![vec![0.0; 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            covariance[i][j] = lm1.covariance[(i, j)];
            covariance[i + 2][j + 2] = lm2.covariance[(i, j)];
        }
    }
    let mut ci95 = BTreeMap::new();
    for (i, n) in names.iter().enumerate() {
        let s = covariance[i][i].max(0.0).sqrt();
        let v = params[n];
        ci95.insert(n.clone(), (v - 1.96 * s, v + 1.96 * s));
    }
    Ok(FitResult {
        params,
        param_names: names,
        covariance,
        ci95,
        residual_norm: (lm1.residual_norm.powi(2) + lm2.residual_norm.powi(2)).sqrt(),
        converged: true,
    })
}

// ---------------------------------------------------------------------------
// Gaussian peak fits
// ---------------------------------------------------------------------------

pub fn gaussian_model(x: f64, center: f64, sigma: f64, amplitude: f64, offset: f64) -> f64 {
    offset + amplitude * (-0.5 * ((x - center) / sigma).powi(2)).exp()
}

/// Least-squares Gaussian peak fit with moment-based starts.
pub fn fit_gaussian_peak(data: &ShotData) -> Result<FitResult, FitError> {
    if data.len() < 5 {
        return Err(FitError::InsufficientData { needed: 5, got: data.len() });
    }
    let probs = data.probabilities();
    let ymin = probs.iter().cloned().fold(f64::MAX, f64::min);
    let ymax = probs.iter().cloned().fold(f64::MIN, f64::max);
    if ymax - ymin < 0.02 {
        return Err(FitError::Degenerate("flat scan; no peak to fit".into()));
    }
    let imax = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let span = data.x.last().unwrap() - data.x.first().unwrap();
    let residual = |p: &[f64]| -> Vec<f64> {
        let (c, s, a, o) = (p[0], p[1].abs().max(1e-12), p[2], p[3]);
        data.x
            .iter()
            .zip(&probs)
            .map(|(&x, &y)| gaussian_model(x, c, s, a, o) - y)
            .collect()
    };
    let mut starts = Vec::new();
    for fs in [0.05, 0.1, 0.2, 0.4] {
        for fc in [-0.05, 0.05] {
            starts.push(vec![
                data.x[imax] + fc * span,
                span.abs() * fs,
                ymax - ymin,
                ymin,
            ]);
        }
    }
    let scales = [span.abs(), span.abs(), 1.0, 1.0];
    let mut lm = levenberg_marquardt(residual, &starts, &scales)
        .filter(|o| o.converged)
        .ok_or_else(|| FitError::NotConverged("gaussian peak".into()))?;
    lm.params[1] = lm.params[1].abs();
    let names =
        ["center".to_string(), "sigma".to_string(), "amplitude".to_string(), "offset".to_string()];
    let out = FitResult::from_lm(&names, &lm);
    let (lo, hi) = (
        data.x.iter().cloned().fold(f64::MAX, f64::min),
        data.x.iter().cloned().fold(f64::MIN, f64::max),
    );
    if out.get("center") < lo || out.get("center") > hi {
        return Err(FitError::NotConverged("fitted center outside the sweep range".into()));
    }
    Ok(out)
}

/// Binomial-likelihood Gaussian fit restricted to points above the half-max
/// of the smoothed curve. Confidence entries are 2σ likelihood-profile
/// intervals on `center` and `amplitude`.
pub fn mle_upper_half_gaussian(data: &ShotData) -> Result<FitResult, FitError> {
    let n = data.len();
    if n < 6 {
        return Err(FitError::InsufficientData { needed: 6, got: n });
    }
    let probs = data.probabilities();
    // 3-point moving average picks the threshold.
    let smoothed: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            probs[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let smin = smoothed.iter().cloned().fold(f64::MAX, f64::min);
    let smax = smoothed.iter().cloned().fold(f64::MIN, f64::max);
    let threshold = 0.5 * (smin + smax);
    let selected: Vec<usize> = (0..n).filter(|&i| smoothed[i] >= threshold).collect();
    if selected.len() < 4 {
        return Err(FitError::InsufficientData { needed: 4, got: selected.len() });
    }

    let nll = |p: &[f64]| -> f64 {
        let (c, s, a, o) = (p[0], p[1].abs().max(1e-12), p[2], p[3]);
        // Probability bound enforced by penalty.
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&o) || a + o > 1.0 {
            return 1e12 + (a.abs() + o.abs()) * 1e6;
        }
        let mut acc = 0.0;
        for &i in &selected {
            let model = gaussian_model(data.x[i], c, s, a, o).clamp(1e-9, 1.0 - 1e-9);
            acc -= data.successes[i] * model.ln() + (data.trials[i] - data.successes[i]) * (1.0 - model).ln();
        }
        acc
    };

    // Start from the upper-half least-squares fit.
    let sel_data = ShotData::new(
        selected.iter().map(|&i| data.x[i]).collect(),
        selected.iter().map(|&i| data.successes[i]).collect(),
        selected.iter().map(|&i| data.trials[i]).collect(),
        &data.outcome_label,
    )?;
    let span = data.x.last().unwrap() - data.x.first().unwrap();
    let start = match fit_gaussian_peak(&sel_data) {
        Ok(f) => vec![
            f.get("center"),
            f.get("sigma"),
            f.get("amplitude").clamp(0.05, 1.0),
            f.get("offset").clamp(0.0, 0.5),
        ],
        Err(_) => {
            let imax = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            vec![data.x[imax], span.abs() * 0.2, (smax - smin).clamp(0.05, 1.0), smin.max(0.0)]
        }
    };
    let steps = vec![span.abs() * 0.02, span.abs() * 0.02, 0.05, 0.02];
    let (opt, nll_min) = nelder_mead(&nll, &start, &steps, 2000);

    // 2σ profile intervals: ΔNLL = 2 with the other parameters re-optimized.
    let profile = |index: usize| -> (f64, f64) {
        let mut bounds = [opt[index], opt[index]];
        for (dir, b) in [(1.0, 1), (-1.0, 0)] {
            let scale = if index == 0 { span.abs() * 0.01 } else { 0.01 };
            let mut step = scale;
            let mut last_in = opt[index];
            let mut found = None;
            for _ in 0..60 {
                let v = last_in + dir * step;
                let f = |p: &[f64]| -> f64 {
                    let mut full = opt.clone();
                    let mut k = 0;
                    for (slot, fv) in full.iter_mut().enumerate() {
                        if slot == index {
                            *fv = v;
                        } else {
                            *fv = p[k];
                            k += 1;
                        }
                    }
                    nll(&full)
                };
                let reduced: Vec<f64> =
                    opt.iter().enumerate().filter(|&(i, _)| i != index).map(|(_, &x)| x).collect();
                let rsteps: Vec<f64> =
                    steps.iter().enumerate().filter(|&(i, _)| i != index).map(|(_, &s)| s).collect();
                let (_, val) = nelder_mead(&f, &reduced, &rsteps, 400);
                if val - nll_min > 2.0 {
                    found = Some(v);
                    break;
                }
                last_in = v;
                step *= 1.6;
            }
            bounds[b] = found.unwrap_or(last_in);
        }
        (bounds[0], bounds[1])
    };
    let ci_center = profile(0);
    let ci_amp = profile(2);

    let names = ["center".to_string(), "sigma".to_string(), "amplitude".to_string(), "offset".to_string()];
    let params: BTreeMap<String, f64> = names
        .iter()
        .cloned()
        .zip([opt[0], opt[1].abs(), opt[2], opt[3]])
        .collect();
    let mut ci95 = BTreeMap::new();
    ci95.insert("center".into(), ci_center);
    ci95.insert("amplitude".into(), ci_amp);
    Ok(FitResult {
        params,
        param_names: names.to_vec(),
        covariance: vec![vec![0.0; 4]; 4],
        ci95,
        residual_norm: nll_min,
        converged: true,
    })
}

/// Binomial MLE of the parity-oscillation contrast: the even-parity
/// probability follows P_even(φ) = c + (A/2)·cos(2φ + φ₀). Returns
/// `amplitude` (= A, the parity contrast), `phase`, and `offset`, with a 2σ
/// likelihood-profile interval on the amplitude.
pub fn mle_parity_amplitude(data: &ShotData) -> Result<FitResult, FitError> {
    if data.len() < 8 {
        return Err(FitError::InsufficientData { needed: 8, got: data.len() });
    }
    let probs = data.probabilities();
    let pmin = probs.iter().cloned().fold(f64::MAX, f64::min);
    let pmax = probs.iter().cloned().fold(f64::MIN, f64::max);
    // Phase start from the quadrature components of the 2φ harmonic.
    let mut cs = 0.0;
    let mut sn = 0.0;
    for (&x, &p) in data.x.iter().zip(&probs) {
        cs += p * (2.0 * x).cos();
        sn += p * (2.0 * x).sin();
    }
    let phase0 = (-sn).atan2(cs);
    let nll = |p: &[f64]| -> f64 {
        let (a, phase, c) = (p[0], p[1], p[2]);
        if !(0.0..=1.0).contains(&a) {
            return 1e12 + a.abs() * 1e6;
        }
        let mut acc = 0.0;
        for i in 0..data.len() {
            let model = (c + a / 2.0 * (2.0 * data.x[i] + phase).cos()).clamp(1e-9, 1.0 - 1e-9);
            acc -= data.successes[i] * model.ln()
                + (data.trials[i] - data.successes[i]) * (1.0 - model).ln();
        }
        acc
    };
    let start = vec![(pmax - pmin).clamp(0.05, 1.0), phase0, 0.5 * (pmax + pmin)];
    let steps = vec![0.05, 0.1, 0.02];
    let (opt, nll_min) = nelder_mead(&nll, &start, &steps, 2000);

    // 2σ profile on the amplitude.
    let mut ci = (opt[0], opt[0]);
    for (dir, lo_side) in [(1.0, false), (-1.0, true)] {
        let mut step = 0.005;
        let mut last = opt[0];
        let mut bound = opt[0];
        for _ in 0..60 {
            let a_try = (last + dir * step).clamp(0.0, 1.0);
            let f = |p: &[f64]| nll(&[a_try, p[0], p[1]]);
            let (_, val) = nelder_mead(&f, &[opt[1], opt[2]], &[0.05, 0.01], 400);
            if val - nll_min > 2.0 {
                bound = a_try;
                break;
            }
            bound = a_try;
            if a_try == 0.0 || a_try == 1.0 {
                break;
            }
            last = a_try;
            step *= 1.6;
        }
        if lo_side {
            ci.0 = bound;
        } else {
            ci.1 = bound;
        }
    }

    let names = ["amplitude".to_string(), "phase".to_string(), "offset".to_string()];
    let params: BTreeMap<String, f64> = names.iter().cloned().zip(opt.iter().copied()).collect();
    let mut ci95 = BTreeMap::new();
    ci95.insert("amplitude".into(), ci);
    Ok(FitResult {
        params,
        param_names: names.to_vec(),
        covariance: vec![vec![0.0; 3]; 3],
        ci95,
        residual_norm: nll_min,
        converged: true,
    })
}

// ---------------------------------------------------------------------------
// Wilson interval, fidelity, linear crossing
// ---------------------------------------------------------------------------

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: f64, trials: f64, z: f64) -> (f64, f64) {
    assert!(trials >= 1.0 && (0.0..=trials).contains(&successes));
    let p = successes / trials;
    let z2 = z * z;
    let denom = 1.0 + z2 / trials;
    let center = (p + z2 / (2.0 * trials)) / denom;
    let half = z * (p * (1.0 - p) / trials + z2 / (4.0 * trials * trials)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Fidelity estimate with asymmetric error bars.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FidelityEstimate {
    pub value: f64,
    /// Downward/upward excursions (already combined in quadrature).
    pub minus: f64,
    pub plus: f64,
}

/// F(θ) = P₀₀·cos²(θ/2) + P₁₁·sin²(θ/2) + A_Π·cos(θ/2)·sin(θ/2).
/// Optional per-input intervals (lo, hi) are combined in quadrature.
pub fn fidelity_estimate(
    p00: f64,
    p11: f64,
    parity_amplitude: f64,
    theta: f64,
    intervals: Option<[(f64, f64); 3]>,
) -> FidelityEstimate {
    let c = (theta / 2.0).cos();
    let s = (theta / 2.0).sin();
    let w = [c * c, s * s, c.abs() * s.abs()];
    let value = p00 * w[0] + p11 * w[1] + parity_amplitude * w[2];
    let (mut minus, mut plus) = (0.0, 0.0);
    if let Some(iv) = intervals {
        let vals = [p00, p11, parity_amplitude];
        let mut m2 = 0.0;
        let mut p2 = 0.0;
        for k in 0..3 {
            m2 += (w[k] * (vals[k] - iv[k].0)).powi(2);
            p2 += (w[k] * (iv[k].1 - vals[k])).powi(2);
        }
        minus = m2.sqrt();
        plus = p2.sqrt();
    }
    FidelityEstimate { value, minus, plus }
}

/// Crossing of two least-squares lines with propagated 1σ uncertainty.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Crossing {
    pub x: f64,
    pub sigma: f64,
}

pub fn linear_crossing(data_00: &ShotData, data_11: &ShotData) -> Result<Crossing, FitError> {
    let (a1, b1, cov1) = line_fit(data_00)?;
    let (a2, b2, cov2) = line_fit(data_11)?;
    let db = b1 - b2;
    let x_scale = data_00
        .x
        .iter()
        .chain(&data_11.x)
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(1e-30);
    let y_scale = (b1.abs() + b2.abs()).max(1e-30);
    if db.abs() < 1e-9 * y_scale {
        return Err(FitError::NoCrossing);
    }
    let x = (a2 - a1) / db;
    // Var(x*) by linear propagation, lines independent.
    let dda1 = -1.0 / db;
    let dda2 = 1.0 / db;
    let ddb1 = -x / db;
    let ddb2 = x / db;
    let var = dda1 * dda1 * cov1[0]
        + ddb1 * ddb1 * cov1[2]
        + 2.0 * dda1 * ddb1 * cov1[1]
        + dda2 * dda2 * cov2[0]
        + ddb2 * ddb2 * cov2[2]
        + 2.0 * dda2 * ddb2 * cov2[1];
    let lo = data_00.x.iter().cloned().fold(f64::MAX, f64::min);
    let hi = data_00.x.iter().cloned().fold(f64::MIN, f64::max);
    if x < lo - 0.5 * (hi - lo) || x > hi + 0.5 * (hi - lo) {
        return Err(FitError::NoCrossing);
    }
    let _ = x_scale;
    Ok(Crossing { x, sigma: var.max(0.0).sqrt() })
}

/// y = a + b·x least squares; returns (a, b, [var_a, cov_ab, var_b]).
fn line_fit(data: &ShotData) -> Result<(f64, f64, [f64; 3]), FitError> {
    let n = data.len();
    if n < 2 {
        return Err(FitError::InsufficientData { needed: 2, got: n });
    }
    let y = data.probabilities();
    let sx: f64 = data.x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = data.x.iter().map(|v| v * v).sum();
    let sxy: f64 = data.x.iter().zip(&y).map(|(&a, &b)| a * b).sum();
    let nf = n as f64;
    let denom = nf * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return Err(FitError::Degenerate("x values collinear".into()));
    }
    let b = (nf * sxy - sx * sy) / denom;
    let a = (sy - b * sx) / nf;
    let sse: f64 = data.x.iter().zip(&y).map(|(&xv, &yv)| (a + b * xv - yv).powi(2)).sum();
    let s2 = sse / (nf - 2.0).max(1.0);
    let var_b = s2 * nf / denom;
    let var_a = s2 * sxx / denom;
    let cov_ab = -s2 * sx / denom;
    Ok((a, b, [var_a, cov_ab, var_b]))
}
