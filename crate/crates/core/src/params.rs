//! Physical constants, parameter containers and the closed-form calibration
//! relations shared by every other module.
//!
//! Everything here is strict SI: metres, seconds, kilograms, volts, amperes,
//! and angular frequencies in rad/s. Unit conversion from the configuration
//! file's MHz / µm / kHz·µm⁻ⁿ happens through the helpers in [`units`].

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2, TAU};

use crate::error::{require_non_negative, require_positive, Error, Result};

/// CODATA 2018 values. The elementary charge is stored as a magnitude; the
/// electron's sign is applied explicitly where forces are written down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub electron_mass: f64,
    pub elementary_charge: f64,
    pub boltzmann: f64,
}

impl PhysicalConstants {
    pub const CODATA: PhysicalConstants = PhysicalConstants {
        electron_mass: 9.109_383_701_5e-31,
        elementary_charge: 1.602_176_634e-19,
        boltzmann: 1.380_649e-23,
    };

    /// Signed electron charge, −e.
    pub fn electron_charge(&self) -> f64 {
        -self.elementary_charge
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::CODATA
    }
}

pub mod units {
    use std::f64::consts::TAU;

    pub const MICRON: f64 = 1e-6;
    pub const MILLIMETRE: f64 = 1e-3;
    pub const MICROSECOND: f64 = 1e-6;
    pub const NANOSECOND: f64 = 1e-9;
    pub const MILLISECOND: f64 = 1e-3;

    /// Cyclic frequency in MHz to angular frequency in rad/s.
    pub fn mhz_to_angular(f_mhz: f64) -> f64 {
        TAU * f_mhz * 1e6
    }

    pub fn angular_to_mhz(omega: f64) -> f64 {
        omega / (TAU * 1e6)
    }

    pub fn angular_to_hz(omega: f64) -> f64 {
        omega / TAU
    }
}

/// How a frequency quoted in "kHz" per µmⁿ maps to rad/s per mⁿ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KhzConvention {
    /// 1 kHz ≙ 2π×10³ rad/s, the same convention as "ω = 2π×200 MHz".
    #[default]
    Angular,
    /// 1 kHz ≙ 10³ rad/s.
    Plain,
}

impl KhzConvention {
    pub fn khz_in_rad_per_s(self) -> f64 {
        match self {
            KhzConvention::Angular => TAU * 1e3,
            KhzConvention::Plain => 1e3,
        }
    }

    /// Converts a coefficient in kHz/µm^`power` to rad·s⁻¹·m^−`power`.
    pub fn to_si(self, value_khz_per_um_pow: f64, power: i32) -> f64 {
        value_khz_per_um_pow * self.khz_in_rad_per_s() / units::MICRON.powi(power)
    }

    pub fn from_si(self, value_si: f64, power: i32) -> f64 {
        value_si * units::MICRON.powi(power) / self.khz_in_rad_per_s()
    }
}

/// Trap frequencies and the x-axis anharmonicity of the potential-per-mass
/// polynomial `Σ C_i x^i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapParams {
    /// Secular angular frequencies (ω_x, ω_y, ω_z).
    pub secular: [f64; 3],
    pub omega_rf: f64,
    pub phi_rf: f64,
    /// Quartic coefficient, (rad/s)²·m⁻².
    pub c4: f64,
    /// Sextic coefficient, (rad/s)²·m⁻⁴.
    pub c6: f64,
    pub d_eff: f64,
}

impl TrapParams {
    pub fn new(
        secular: [f64; 3],
        omega_rf: f64,
        phi_rf: f64,
        c4: f64,
        c6: f64,
        d_eff: f64,
    ) -> Result<Self> {
        let p = TrapParams {
            secular,
            omega_rf,
            phi_rf,
            c4,
            c6,
            d_eff,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("TrapParams.omega_x", self.secular[0])?;
        require_positive("TrapParams.omega_y", self.secular[1])?;
        require_positive("TrapParams.omega_z", self.secular[2])?;
        require_positive("TrapParams.omega_rf", self.omega_rf)?;
        require_positive("TrapParams.d_eff", self.d_eff)?;
        if !self.phi_rf.is_finite() || !self.c4.is_finite() || !self.c6.is_finite() {
            return Err(Error::InvalidParameter {
                name: "TrapParams",
                reason: "phase and anharmonic coefficients must be finite".into(),
            });
        }
        let radial = self.secular[0].max(self.secular[1]);
        if self.omega_rf <= 2.0 * radial {
            return Err(Error::InvalidParameter {
                name: "TrapParams.omega_rf",
                reason: format!(
                    "must exceed twice the largest radial secular frequency ({:.4e} rad/s)",
                    2.0 * radial
                ),
            });
        }
        Ok(())
    }

    /// Builds the trap from the quoted frequency-shift coefficients λ₄, λ₆
    /// (kHz/µm² and kHz/µm⁴) under the chosen kHz convention.
    pub fn from_lambdas(
        secular: [f64; 3],
        omega_rf: f64,
        lambda4_khz_per_um2: f64,
        lambda6_khz_per_um4: f64,
        convention: KhzConvention,
        d_eff: f64,
    ) -> Result<Self> {
        let omega_x = secular[0];
        let lambda4 = convention.to_si(lambda4_khz_per_um2, 2);
        let lambda6 = convention.to_si(lambda6_khz_per_um4, 4);
        let c4 = 2.0 * omega_x * lambda4 / 3.0;
        let c6 = 8.0 * omega_x * lambda6 / 15.0;
        TrapParams::new(secular, omega_rf, 0.0, c4, c6, d_eff)
    }

    /// λ₄ = 3C₄/(2ω_x), rad·s⁻¹·m⁻².
    pub fn lambda4(&self) -> f64 {
        3.0 * self.c4 / (2.0 * self.secular[0])
    }

    /// λ₆ = 15C₆/(8ω_x), rad·s⁻¹·m⁻⁴.
    pub fn lambda6(&self) -> f64 {
        15.0 * self.c6 / (8.0 * self.secular[0])
    }

    pub fn standard(convention: KhzConvention) -> Self {
        TrapParams::from_lambdas(
            [
                units::mhz_to_angular(200.0),
                units::mhz_to_angular(173.0),
                units::mhz_to_angular(70.0),
            ],
            units::mhz_to_angular(1452.0),
            -4.08,
            6.78e-6,
            convention,
            4.8 * units::MILLIMETRE,
        )
        .expect("default trap parameters are valid")
    }
}

impl Default for TrapParams {
    fn default() -> Self {
        TrapParams::standard(KhzConvention::Angular)
    }
}

/// Lumped parallel RLC resonator. R, L and C are derived from (Q, Z₀, ω_res).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorParams {
    pub q: f64,
    pub z0: f64,
    pub omega_res: f64,
    pub temperature: f64,
    pub r: f64,
    pub l: f64,
    pub c: f64,
}

impl ResonatorParams {
    pub fn new(q: f64, z0: f64, omega_res: f64, temperature: f64) -> Result<Self> {
        require_positive("ResonatorParams.Q", q)?;
        require_positive("ResonatorParams.Z0", z0)?;
        require_positive("ResonatorParams.omega_res", omega_res)?;
        require_non_negative("ResonatorParams.temperature", temperature)?;
        Ok(ResonatorParams {
            q,
            z0,
            omega_res,
            temperature,
            r: q * z0,
            l: z0 / omega_res,
            c: 1.0 / (z0 * omega_res),
        })
    }

    /// Recovers (Q, Z₀, ω_res) from the stored R, L, C.
    pub fn recover_qz0w(&self) -> (f64, f64, f64) {
        let z0 = (self.l / self.c).sqrt();
        let omega = 1.0 / (self.l * self.c).sqrt();
        (self.r / z0, z0, omega)
    }

    /// Johnson voltage noise floor 4k_BTR, V²/Hz.
    pub fn johnson_floor(&self, constants: &PhysicalConstants) -> f64 {
        4.0 * constants.boltzmann * self.temperature * self.r
    }
}

impl Default for ResonatorParams {
    fn default() -> Self {
        ResonatorParams::new(1000.0, 300.0, units::mhz_to_angular(200.0), 4.0)
            .expect("default resonator parameters are valid")
    }
}

/// Parametric drive `ε(t) cos(ω_d t + φ_d)` with a linear turn-on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveSchedule {
    pub omega_d: f64,
    pub phi_d: f64,
    pub epsilon_max: f64,
    /// Zero means a step at `start_time`.
    pub ramp_duration: f64,
    pub start_time: f64,
}

impl DriveSchedule {
    pub fn new(
        omega_d: f64,
        phi_d: f64,
        epsilon_max: f64,
        ramp_duration: f64,
        start_time: f64,
    ) -> Result<Self> {
        let s = DriveSchedule {
            omega_d,
            phi_d,
            epsilon_max,
            ramp_duration,
            start_time,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        require_non_negative("DriveSchedule.omega_d", self.omega_d)?;
        require_non_negative("DriveSchedule.ramp_duration", self.ramp_duration)?;
        if !(0.0..1.0).contains(&self.epsilon_max) {
            return Err(Error::InvalidParameter {
                name: "DriveSchedule.epsilon_max",
                reason: format!("must lie in [0, 1), got {}", self.epsilon_max),
            });
        }
        if !self.phi_d.is_finite() || !self.start_time.is_finite() {
            return Err(Error::InvalidParameter {
                name: "DriveSchedule",
                reason: "phase and start time must be finite".into(),
            });
        }
        Ok(())
    }

    /// Drive switched off entirely.
    pub fn off(omega_d: f64) -> Self {
        DriveSchedule {
            omega_d,
            phi_d: 0.0,
            epsilon_max: 0.0,
            ramp_duration: 0.0,
            start_time: 0.0,
        }
    }

    pub fn ramped(omega_d: f64, epsilon_max: f64, ramp_duration: f64) -> Self {
        DriveSchedule {
            omega_d,
            phi_d: 0.0,
            epsilon_max,
            ramp_duration,
            start_time: 0.0,
        }
    }

    pub fn step(omega_d: f64, epsilon_max: f64) -> Self {
        Self::ramped(omega_d, epsilon_max, 0.0)
    }

    pub fn epsilon(&self, t: f64) -> f64 {
        if t < self.start_time {
            0.0
        } else if t >= self.start_time + self.ramp_duration {
            self.epsilon_max
        } else {
            self.epsilon_max * (t - self.start_time) / self.ramp_duration
        }
    }

    pub fn ramp_end(&self) -> f64 {
        self.start_time + self.ramp_duration
    }

    /// Full modulation factor ε(t)·cos(ω_d t + φ_d).
    pub fn modulation(&self, t: f64) -> f64 {
        let eps = self.epsilon(t);
        if eps == 0.0 {
            0.0
        } else {
            eps * (self.omega_d * t + self.phi_d).cos()
        }
    }
}

/// Resonator-induced damping rate γ = q²R/(m·d_eff²).
pub fn damping_rate(mass: f64, d_eff: f64, charge: f64, resistance: f64) -> Result<f64> {
    for (name, v) in [("mass", mass), ("d_eff", d_eff), ("charge", charge)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    if !(resistance.is_finite() && resistance >= 0.0) {
        return Err(Error::Domain(format!(
            "resistance must be non-negative, got {resistance}"
        )));
    }
    Ok(charge * charge * resistance / (mass * d_eff * d_eff))
}

/// Ratio of the rf trapping voltage to the parametric-drive voltage needed for
/// a relative drive strength ε: √2·ω_rf/(ω_x·ε).
pub fn drive_voltage_ratio(epsilon: f64, omega_rf: f64, omega_x: f64) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Domain(format!(
            "drive voltage ratio is undefined for epsilon = {epsilon}"
        )));
    }
    if !(omega_rf > 0.0 && omega_x > 0.0) {
        return Err(Error::Domain("frequencies must be positive".into()));
    }
    Ok(SQRT_2 * omega_rf / (omega_x * epsilon))
}

/// Same ratio expressed as a power ratio in dB.
pub fn drive_voltage_ratio_db(epsilon: f64, omega_rf: f64, omega_x: f64) -> Result<f64> {
    Ok(20.0 * drive_voltage_ratio(epsilon, omega_rf, omega_x)?.log10())
}

/// Deterministic thermal initial condition on one axis:
/// `r = √(k_BT/(mω²))·cos φ`, `v = −√(k_BT/m)·sin φ`.
pub fn thermal_sample(
    constants: &PhysicalConstants,
    temperature: f64,
    omega: f64,
    phase: f64,
) -> Result<(f64, f64)> {
    require_non_negative("temperature", temperature)?;
    require_positive("omega", omega)?;
    let v_th = (constants.boltzmann * temperature / constants.electron_mass).sqrt();
    Ok((v_th / omega * phase.cos(), -v_th * phase.sin()))
}

/// Wraps a phase into [0, 2π).
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(2.0 * PI);
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}
