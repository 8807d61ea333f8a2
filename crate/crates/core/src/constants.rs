//! Physical constants (CODATA 2018) and ¹⁷¹Yb⁺ properties.

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Vacuum permittivity (F/m).
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;

/// Mass of ¹⁷¹Yb⁺ (kg). 170.9363 u; the electron deficit is negligible here.
pub const YB171_MASS: f64 = 2.838_464_405_819_170_3e-25;

/// Coulomb coupling e²/(4πε₀) (J·m).
pub const COULOMB_COUPLING: f64 =
    ELEMENTARY_CHARGE * ELEMENTARY_CHARGE / (4.0 * std::f64::consts::PI * EPSILON_0);

/// Default effective Raman wavevector difference (1/m): counter-propagating
/// 355 nm beams, Δk = 2·(2π/λ).
pub const RAMAN_DELTA_K_355_COUNTERPROP: f64 = 2.0 * 2.0 * std::f64::consts::PI / 355.0e-9;
