//! AOM saturation response, shaped-pulse envelope, and the dynamic
//! frame-rotation profile.
//!
//! The amplitude envelope is a Gaussian with σ = 0.133·τ centered on the
//! pulse, represented as a natural cubic spline over uniformly spaced knots
//! (the tails are left at their raw Gaussian values, not forced to zero).
//! The frame-rotation profile accumulates as the normalized integral of the
//! squared spline envelope, which is the erf-shaped curve the residual
//! fourth-order light shift follows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PulseError {
    #[error("software amplitude {amplitude} exceeds saturation amplitude {a_sat}; response is non-monotone beyond")]
    OverSaturation { amplitude: f64, a_sat: f64 },
    #[error("requested Rabi rate {rate:.6e} rad/s exceeds the peak rate {xi:.6e} rad/s")]
    UnreachableRate { rate: f64, xi: f64 },
    #[error("target angle {theta} outside the calibrated range [0, {theta_cal}]")]
    ThetaOutOfRange { theta: f64, theta_cal: f64 },
    #[error("invalid pulse parameter: {0}")]
    Invalid(String),
}

/// Saturation response of one AOM at one drive frequency:
/// Ω(a) = Ξ·sin(π·a / (2·a_sat)).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AomModel {
    /// Software amplitude at which the diffracted power saturates.
    pub a_sat: f64,
    /// Peak Rabi rate Ξ (rad/s).
    pub xi: f64,
}

impl AomModel {
    pub fn new(a_sat: f64, xi: f64) -> Result<Self, PulseError> {
        if a_sat <= 0.0 || xi <= 0.0 {
            return Err(PulseError::Invalid("a_sat and Xi must be positive".into()));
        }
        Ok(AomModel { a_sat, xi })
    }

    /// Post-saturation Rabi rate for software amplitude `a` (monotone on
    /// [0, a_sat]).
    pub fn response(&self, a: f64) -> Result<f64, PulseError> {
        if a < 0.0 {
            return Err(PulseError::Invalid(format!("negative amplitude {a}")));
        }
        if a > self.a_sat {
            return Err(PulseError::OverSaturation { amplitude: a, a_sat: self.a_sat });
        }
        Ok(self.xi * (std::f64::consts::FRAC_PI_2 * a / self.a_sat).sin())
    }

    /// Software amplitude producing Rabi rate `omega`.
    pub fn inverse(&self, omega: f64) -> Result<f64, PulseError> {
        if omega < 0.0 {
            return Err(PulseError::Invalid(format!("negative Rabi rate {omega}")));
        }
        if omega > self.xi {
            return Err(PulseError::UnreachableRate { rate: omega, xi: self.xi });
        }
        Ok(2.0 * self.a_sat / std::f64::consts::PI * (omega / self.xi).asin())
    }
}

/// Envelope standard deviation as a fraction of the gate duration.
pub const ENVELOPE_SIGMA_FRACTION: f64 = 0.133;

/// Default spline knot count. Odd so the center sample sits exactly on the
/// Gaussian peak.
pub const DEFAULT_ENVELOPE_KNOTS: usize = 65;

/// One MS(θ) pulse description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PulseProgram {
    /// Gate duration τ (s).
    pub duration: f64,
    /// Gaussian σ = 0.133·τ (s).
    pub envelope_sigma: f64,
    /// Spline sample count for the envelope and frame-rotation profile.
    pub knots: usize,
    /// Software amplitudes of the individual-addressing tones.
    pub amp_red: f64,
    pub amp_blue: f64,
    /// Scale on the calibrated global-tone amplitude, in [0, 1].
    pub amp_global_scale: f64,
    /// Total dynamic frame rotation φ_f(τ) (rad).
    pub frame_rotation_total: f64,
    /// Drive offset from the carrier, δ_c (rad/s).
    pub delta_c: f64,
    /// Center-indexed target qubit labels.
    pub pair: (i32, i32),
}

impl PulseProgram {
    pub fn new(
        duration: f64,
        amp_red: f64,
        amp_blue: f64,
        amp_global_scale: f64,
        frame_rotation_total: f64,
        delta_c: f64,
        pair: (i32, i32),
    ) -> Result<Self, PulseError> {
        if duration <= 0.0 {
            return Err(PulseError::Invalid("duration must be positive".into()));
        }
        if !(0.0..=1.0).contains(&amp_global_scale) {
            return Err(PulseError::Invalid(format!(
                "amp_global_scale {amp_global_scale} outside [0, 1]"
            )));
        }
        Ok(PulseProgram {
            duration,
            envelope_sigma: ENVELOPE_SIGMA_FRACTION * duration,
            knots: DEFAULT_ENVELOPE_KNOTS,
            amp_red,
            amp_blue,
            amp_global_scale,
            frame_rotation_total,
            delta_c,
            pair,
        })
    }

    /// Spline envelope for this pulse.
    pub fn envelope(&self) -> SplineEnvelope {
        SplineEnvelope::gaussian(self.duration, self.knots)
    }
}

/// Natural cubic spline over a uniform grid.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x0: f64,
    h: f64,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    /// Natural spline (zero second derivative at the ends) through uniform
    /// samples `y` on [x0, x0 + (n-1)h].
    pub fn natural(x0: f64, h: f64, y: Vec<f64>) -> Self {
        let n = y.len();
        assert!(n >= 2, "spline needs at least two knots");
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system: m[0] = m[n-1] = 0,
            // m[i-1] + 4 m[i] + m[i+1] = 6 (y[i-1] - 2 y[i] + y[i+1]) / h².
            let dim = n - 2;
            let mut diag = vec![4.0; dim];
            let mut rhs: Vec<f64> =
                (1..n - 1).map(|i| 6.0 * (y[i - 1] - 2.0 * y[i] + y[i + 1]) / (h * h)).collect();
            for i in 1..dim {
                let w = 1.0 / diag[i - 1];
                diag[i] -= w;
                rhs[i] -= w * rhs[i - 1];
            }
            m[dim] = rhs[dim - 1] / diag[dim - 1];
            for i in (0..dim - 1).rev() {
                m[i + 1] = (rhs[i] - m[i + 2]) / diag[i];
            }
        }
        CubicSpline { x0, h, y, m }
    }

    pub fn interval_count(&self) -> usize {
        self.y.len() - 1
    }

    pub fn knot(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.h
    }

    pub fn value(&self, x: f64) -> f64 {
        let n = self.y.len();
        let mut t = (x - self.x0) / self.h;
        if t <= 0.0 {
            t = 0.0;
        }
        let mut i = t.floor() as usize;
        if i >= n - 1 {
            i = n - 2;
        }
        let s = (x - self.knot(i)) / self.h;
        let h2 = self.h * self.h;
        let a = self.y[i];
        let c = h2 * self.m[i] / 2.0;
        let d = h2 * (self.m[i + 1] - self.m[i]) / 6.0;
        cubic_eval(a, b_lin(self, i), c, d, s)
    }
}

// Natural-spline interval polynomial in the local coordinate s ∈ [0, 1]:
//   f(s) = y_i + B s + (h² m_i / 2) s² + (h² (m_{i+1} − m_i) / 6) s³,
//   B = y_{i+1} − y_i − h² m_i / 3 − h² m_{i+1} / 6.
fn b_lin(sp: &CubicSpline, i: usize) -> f64 {
    let h2 = sp.h * sp.h;
    sp.y[i + 1] - sp.y[i] - h2 * sp.m[i] / 3.0 - h2 * sp.m[i + 1] / 6.0
}

fn cubic_eval(a: f64, b: f64, c: f64, d: f64, s: f64) -> f64 {
    a + s * (b + s * (c + s * d))
}

/// The Gaussian amplitude envelope as a spline, with prefix integrals of its
/// square for the frame-rotation profile.
#[derive(Debug, Clone)]
pub struct SplineEnvelope {
    pub duration: f64,
    spline: CubicSpline,
    /// ∫₀^{t_i} env² at each knot.
    sq_prefix: Vec<f64>,
}

/// 4-point Gauss-Legendre nodes/weights on [0, 1]; exact through degree 7,
/// enough for the squared cubic spline (degree 6).
#[allow(clippy::excessive_precision)]
const GL4: [(f64, f64); 4] = [
    (0.069_431_844_202_973_71, 0.173_927_422_568_727_0),
    (0.330_009_478_207_571_9, 0.326_072_577_431_273_0),
    (0.669_990_521_792_428_1, 0.326_072_577_431_273_0),
    (0.930_568_155_797_026_3, 0.173_927_422_568_727_0),
];

impl SplineEnvelope {
    /// Gaussian centered at τ/2 with σ = 0.133·τ, peak 1, sampled at `knots`
    /// uniform points.
    pub fn gaussian(duration: f64, knots: usize) -> Self {
        assert!(knots >= 2);
        let sigma = ENVELOPE_SIGMA_FRACTION * duration;
        let h = duration / (knots - 1) as f64;
        let y: Vec<f64> = (0..knots)
            .map(|i| {
                let t = i as f64 * h;
                let u = (t - duration / 2.0) / sigma;
                (-0.5 * u * u).exp()
            })
            .collect();
        let spline = CubicSpline::natural(0.0, h, y);
        let mut sq_prefix = Vec::with_capacity(knots);
        sq_prefix.push(0.0);
        let mut acc = 0.0;
        for i in 0..knots - 1 {
            acc += gl4_integral_sq(&spline, i, 1.0);
            sq_prefix.push(acc);
        }
        SplineEnvelope { duration, spline, sq_prefix }
    }

    /// Envelope value at `t`, clamped to the pulse window.
    pub fn value(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.duration);
        self.spline.value(t)
    }

    /// E(t) = ∫₀^t env²(t') dt'.
    pub fn squared_integral(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.duration);
        let h = self.spline.h;
        let mut i = (t / h).floor() as usize;
        if i >= self.spline.interval_count() {
            i = self.spline.interval_count() - 1;
        }
        let frac = (t - self.spline.knot(i)) / h;
        self.sq_prefix[i] + gl4_integral_sq(&self.spline, i, frac)
    }

    /// E(τ): full squared integral (s).
    pub fn squared_integral_total(&self) -> f64 {
        *self.sq_prefix.last().unwrap()
    }

    /// Frame-rotation profile φ_f(t) = φ_total·E(t)/E(τ): the erf-shaped
    /// accumulation matching a light shift proportional to env².
    pub fn frame_profile(&self, total: f64, t: f64) -> f64 {
        total * self.squared_integral(t) / self.squared_integral_total()
    }

    /// CSV of the envelope and frame-rotation profile for plotting:
    /// columns `t_s, envelope, frame_rotation_rad`.
    pub fn profile_csv(&self, frame_total: f64, samples: usize) -> String {
        let mut out = String::from("t_s,envelope,frame_rotation_rad\n");
        for k in 0..samples {
            let t = self.duration * k as f64 / (samples - 1).max(1) as f64;
            out.push_str(&format!(
                "{:.9e},{:.9e},{:.9e}\n",
                t,
                self.value(t),
                self.frame_profile(frame_total, t)
            ));
        }
        out
    }
}

/// ∫ over the first `frac` of interval `i` of spline(x)², by 4-point GL.
fn gl4_integral_sq(sp: &CubicSpline, i: usize, frac: f64) -> f64 {
    if frac <= 0.0 {
        return 0.0;
    }
    let a = sp.y[i];
    let b = b_lin(sp, i);
    let h2 = sp.h * sp.h;
    let c = h2 * sp.m[i] / 2.0;
    let d = h2 * (sp.m[i + 1] - sp.m[i]) / 6.0;
    let mut acc = 0.0;
    for &(node, w) in &GL4 {
        let s = frac * node;
        let v = cubic_eval(a, b, c, d, s);
        acc += w * v * v;
    }
    acc * frac * sp.h
}

/// Global-tone software amplitude hitting `theta_target`, given a calibrated
/// MS(θ_cal) at amplitude `a_cal`.
///
/// The entangling angle is bilinear in the two ions' two-photon Rabi rates
/// and the global beam is one leg of both, so θ scales as the square of the
/// post-saturation global Rabi rate: the required rate is
/// Ω_cal·√(θ_target/θ_cal), inverted through the AOM response.
pub fn theta_to_global_amplitude(
    aom: &AomModel,
    a_cal: f64,
    theta_cal: f64,
    theta_target: f64,
) -> Result<f64, PulseError> {
    if theta_cal <= 0.0 {
        return Err(PulseError::Invalid("calibrated angle must be positive".into()));
    }
    if !(0.0..=theta_cal).contains(&theta_target) {
        return Err(PulseError::ThetaOutOfRange { theta: theta_target, theta_cal });
    }
    let omega_cal = aom.response(a_cal)?;
    aom.inverse(omega_cal * (theta_target / theta_cal).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn aom_response_endpoints() {
        let aom = AomModel::new(188.5, 2.0 * PI * 73.6e3).unwrap();
        assert_eq!(aom.response(0.0).unwrap(), 0.0);
        assert!((aom.response(188.5).unwrap() - aom.xi).abs() < 1e-9);
        // sin(π/6) = 1/2 at a = a_sat/3.
        let half = aom.response(188.5 / 3.0).unwrap();
        assert!((half - aom.xi / 2.0).abs() < 1e-9);
        assert!(matches!(aom.response(200.0), Err(PulseError::OverSaturation { .. })));
    }

    #[test]
    fn aom_inverse_round_trips() {
        let aom = AomModel::new(188.5, 2.0 * PI * 73.6e3).unwrap();
        assert_eq!(aom.inverse(0.0).unwrap(), 0.0);
        assert!((aom.inverse(aom.xi).unwrap() - aom.a_sat).abs() < 1e-12);
        for k in 1..1000 {
            let omega = aom.xi * k as f64 / 1000.0;
            let a = aom.inverse(omega).unwrap();
            let back = aom.response(a).unwrap();
            assert!((back - omega).abs() <= 1e-12 * aom.xi);
        }
        assert!(matches!(aom.inverse(aom.xi * 1.01), Err(PulseError::UnreachableRate { .. })));
    }

    #[test]
    fn envelope_peaks_at_one_and_is_symmetric() {
        let tau = 250e-6;
        let env = SplineEnvelope::gaussian(tau, DEFAULT_ENVELOPE_KNOTS);
        assert!((env.value(tau / 2.0) - 1.0).abs() < 1e-12);
        for k in 1..40 {
            let x = tau / 2.0 * k as f64 / 40.0;
            let a = env.value(tau / 2.0 - x);
            let b = env.value(tau / 2.0 + x);
            assert!((a - b).abs() < 1e-12, "asymmetry at x={x}: {a} vs {b}");
        }
    }

    #[test]
    fn spline_tracks_the_exact_gaussian() {
        let tau = 250e-6;
        let sigma = ENVELOPE_SIGMA_FRACTION * tau;
        for knots in [64, 65, 128] {
            let env = SplineEnvelope::gaussian(tau, knots);
            let mut worst: f64 = 0.0;
            for k in 0..=4000 {
                let t = tau * k as f64 / 4000.0;
                let u = (t - tau / 2.0) / sigma;
                let exact = (-0.5 * u * u).exp();
                worst = worst.max((env.value(t) - exact).abs());
            }
            assert!(worst < 1e-4, "knots={knots}: max deviation {worst:.2e}");
        }
    }

    #[test]
    fn squared_integral_matches_erf_closed_form() {
        // ∫₀^τ env² dt = σ√π·erf(τ/(2σ)) for the ideal Gaussian; the spline
        // agrees to well under the spline fidelity bound.
        let tau = 250e-6;
        let sigma = ENVELOPE_SIGMA_FRACTION * tau;
        let env = SplineEnvelope::gaussian(tau, DEFAULT_ENVELOPE_KNOTS);
        let exact = sigma * PI.sqrt() * erf(tau / (2.0 * sigma));
        let got = env.squared_integral_total();
        assert!(
            (got - exact).abs() / exact < 2e-5,
            "spline ∫env² = {got:.9e}, erf form = {exact:.9e}"
        );
        // High-resolution quadrature oracle over the spline itself.
        let mut acc = 0.0;
        let n = 200_000;
        let h = tau / n as f64;
        for k in 0..n {
            let t = (k as f64 + 0.5) * h;
            let v = env.value(t);
            acc += v * v * h;
        }
        assert!((got - acc).abs() / acc < 1e-9);
    }

    #[test]
    fn frame_profile_hits_endpoints_and_midpoint() {
        let tau = 250e-6;
        let env = SplineEnvelope::gaussian(tau, DEFAULT_ENVELOPE_KNOTS);
        let total = -0.35;
        assert_eq!(env.frame_profile(total, 0.0), 0.0);
        assert!((env.frame_profile(total, tau) - total).abs() < 1e-15);
        let mid = env.frame_profile(total, tau / 2.0);
        assert!((mid - total / 2.0).abs() < 1e-12 * total.abs());
    }

    #[test]
    fn frame_profile_is_monotone() {
        let tau = 250e-6;
        let env = SplineEnvelope::gaussian(tau, DEFAULT_ENVELOPE_KNOTS);
        let mut prev = 0.0;
        for k in 1..=500 {
            let t = tau * k as f64 / 500.0;
            let v = env.frame_profile(1.0, t);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn theta_scaling_applies_the_saturation_correction() {
        let aom = AomModel::new(188.5, 2.0 * PI * 73.6e3).unwrap();
        let a_cal = 0.97 * aom.a_sat;
        let theta_cal = PI / 2.0;
        assert_eq!(theta_to_global_amplitude(&aom, a_cal, theta_cal, 0.0).unwrap(), 0.0);
        let same = theta_to_global_amplitude(&aom, a_cal, theta_cal, theta_cal).unwrap();
        assert!((same - a_cal).abs() < 1e-12 * a_cal);
        // θ/4 needs half the global Rabi rate; near saturation that amplitude
        // is strictly above the naive linear guess a_cal/4.
        let a = theta_to_global_amplitude(&aom, a_cal, theta_cal, theta_cal / 4.0).unwrap();
        assert!(a > a_cal / 4.0, "a = {a}, naive = {}", a_cal / 4.0);
        assert!(matches!(
            theta_to_global_amplitude(&aom, a_cal, theta_cal, theta_cal * 1.01),
            Err(PulseError::ThetaOutOfRange { .. })
        ));
    }

    // Error function via Abramowitz-Stegun 7.1.26 is not accurate enough for
    // the comparison above; use a series/continued-fraction hybrid.
    fn erf(x: f64) -> f64 {
        // For the argument here (τ/2σ ≈ 3.76) the complementary series
        // converges fast; erf(x) = 1 - erfc(x).
        1.0 - erfc_cf(x)
    }

    fn erfc_cf(x: f64) -> f64 {
        // Continued fraction for erfc, valid for x > 1.
        let mut f = 0.0;
        for k in (1..=60).rev() {
            f = 0.5 * k as f64 / (x + f);
        }
        (-x * x).exp() / ((x + f) * PI.sqrt())
    }
}
