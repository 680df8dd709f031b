//! Analytic trap-field model.
//!
//! Fields are stored as curvatures of the acceleration they produce on the
//! electron, in (rad/s)²: along axis `i` the dc field gives `a_i = −c_i r_i`,
//! the rf field `a_i = −κ_i r_i cos(ω_rf t + φ_rf)` and the parametric drive
//! `a_i = −d_i r_i ε(t) cos(ω_d t + φ_d)`. Both the dc and rf curvature triples
//! are trace-free (Laplace). The anharmonic polynomial `Σ C_k r_i^k` of each
//! axis is an extra static potential per unit mass.
//!
//! Electric fields in V/m follow from `E = (m/q)·a` with the signed electron
//! charge, so a restoring acceleration corresponds to a field pointing away
//! from the centre.
//!
//! # Coefficient files
//!
//! [`AnharmonicSpec::parse_table`] and [`FieldModel::load_coefficients`] read
//! a whitespace-separated table, `#` starts a comment:
//!
//! ```text
//! # axis   C3          C4          C5          C6
//! x        0.0        -2.148e25    0.0         3.8e46
//! y        0.0         0.0         0.0         0.0
//! z        0.0         0.0         0.0         0.0
//! # coupling rows: D_inv component along its own axis, p0 .. p6
//! dinv_x   208.333     0 0 0 0 0 0
//! ```
//!
//! Values are SI: `C_k` in s⁻²·m^(2−k), coupling coefficients in m^(−1−k).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{Dop853, Dop853Options};
use crate::params::{DriveSchedule, PhysicalConstants, TrapParams};

/// Region of interest, half-widths in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub half_width: [f64; 3],
}

impl Roi {
    pub fn contains(&self, r: &[f64; 3]) -> bool {
        (0..3).all(|i| r[i].abs() <= self.half_width[i])
    }
}

impl Default for Roi {
    fn default() -> Self {
        Roi {
            half_width: [150e-6, 150e-6, 25e-6],
        }
    }
}

/// Per-axis anharmonic potential-per-mass coefficients `C_3..C_6`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AnharmonicSpec {
    /// `coeffs[axis][k - 3]` multiplies `r_axis^k`.
    pub coeffs: [[f64; 4]; 3],
}

impl AnharmonicSpec {
    pub fn x_only(c4: f64, c6: f64) -> Self {
        let mut coeffs = [[0.0; 4]; 3];
        coeffs[0][1] = c4;
        coeffs[0][3] = c6;
        AnharmonicSpec { coeffs }
    }

    pub fn from_trap(trap: &TrapParams) -> Self {
        Self::x_only(trap.c4, trap.c6)
    }

    /// Same C₄, C₆ on every axis.
    pub fn all_axes(c4: f64, c6: f64) -> Self {
        let mut coeffs = [[0.0; 4]; 3];
        for row in coeffs.iter_mut() {
            row[1] = c4;
            row[3] = c6;
        }
        AnharmonicSpec { coeffs }
    }

    pub fn c(&self, axis: usize, order: usize) -> f64 {
        self.coeffs[axis][order - 3]
    }

    /// λ₄ = 3C₄/(2ω) for `axis` at secular frequency `omega`.
    pub fn lambda4(&self, axis: usize, omega: f64) -> f64 {
        3.0 * self.c(axis, 4) / (2.0 * omega)
    }

    /// λ₆ = 15C₆/(8ω).
    pub fn lambda6(&self, axis: usize, omega: f64) -> f64 {
        15.0 * self.c(axis, 6) / (8.0 * omega)
    }

    /// `Σ k·C_k·r^(k−1)`, the anharmonic part of −acceleration.
    #[inline]
    pub fn gradient(&self, axis: usize, r: f64) -> f64 {
        let c = &self.coeffs[axis];
        let r2 = r * r;
        3.0 * c[0] * r2 + 4.0 * c[1] * r2 * r + 5.0 * c[2] * r2 * r2 + 6.0 * c[3] * r2 * r2 * r
    }

    pub fn potential(&self, axis: usize, r: f64) -> f64 {
        let c = &self.coeffs[axis];
        let r3 = r * r * r;
        c[0] * r3 + c[1] * r3 * r + c[2] * r3 * r * r + c[3] * r3 * r3
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().flatten().all(|&c| c == 0.0)
    }

    /// Parses the `x|y|z C3 C4 C5 C6` rows of a coefficient table; other row
    /// kinds are skipped.
    pub fn parse_table(text: &str) -> Result<Self> {
        let (anh, _) = parse_coefficient_table(text)?;
        Ok(anh)
    }
}

/// Pickup coupling vector `D_inv(r)`, m⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CouplingModel {
    Constant([f64; 3]),
    /// `D_i(r) = Σ_k p[i][k]·r_i^k`, k = 0..6.
    Polynomial([[f64; 7]; 3]),
}

impl CouplingModel {
    pub fn constant_x(d_eff: f64) -> Self {
        CouplingModel::Constant([1.0 / d_eff, 0.0, 0.0])
    }

    #[inline]
    pub fn at(&self, r: &[f64; 3]) -> [f64; 3] {
        match self {
            CouplingModel::Constant(d) => *d,
            CouplingModel::Polynomial(p) => {
                let mut out = [0.0; 3];
                for i in 0..3 {
                    let mut acc = 0.0;
                    for k in (0..7).rev() {
                        acc = acc * r[i] + p[i][k];
                    }
                    out[i] = acc;
                }
                out
            }
        }
    }

    pub fn center(&self) -> [f64; 3] {
        self.at(&[0.0; 3])
    }
}

/// How rf amplitudes are matched to the requested secular frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Exact Floquet exponent of each axis' Mathieu equation equals the target.
    #[default]
    Floquet,
    /// Lowest-order pseudopotential, `ω² = c + κ²/(2ω_rf²)`.
    Pseudopotential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub targets: [f64; 3],
    pub omega_rf: f64,
    pub phi_rf: f64,
    /// Fraction of the dc anti-confinement (balancing the axial dc
    /// confinement) that lands on x; the rest goes to y.
    pub dc_split: f64,
    pub mode: CalibrationMode,
    /// With rf disabled the calibration must reach the targets with dc alone.
    pub rf_enabled: bool,
}

impl CalibrationSpec {
    pub fn new(targets: [f64; 3], omega_rf: f64) -> Self {
        CalibrationSpec {
            targets,
            omega_rf,
            phi_rf: 0.0,
            dc_split: 0.5,
            mode: CalibrationMode::Floquet,
            rf_enabled: true,
        }
    }

    pub fn from_trap(trap: &TrapParams) -> Self {
        CalibrationSpec {
            phi_rf: trap.phi_rf,
            ..Self::new(trap.secular, trap.omega_rf)
        }
    }
}

/// Field contributions at one point and time, V/m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub dc: [f64; 3],
    /// Static anharmonic correction; together with `dc` this is the static part.
    pub anharmonic: [f64; 3],
    /// rf field including `cos(ω_rf t + φ_rf)`.
    pub rf: [f64; 3],
    /// Drive field including `ε(t)·cos(ω_d t + φ_d)`.
    pub drive: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub dc_curvature: [f64; 3],
    pub rf_curvature: [f64; 3],
    pub omega_rf: f64,
    pub phi_rf: f64,
    /// Drive curvature per unit ε.
    pub drive_curvature: [f64; 3],
    pub anharmonic: AnharmonicSpec,
    pub coupling: CouplingModel,
    pub roi: Roi,
    pub targets: [f64; 3],
    pub constants: PhysicalConstants,
}

impl FieldModel {
    /// Calibrates dc and rf curvatures so that the secular frequencies match
    /// `spec.targets`. The drive is the 2D quadrupole `(ω_x², −ω_x², 0)` per
    /// unit ε, the coupling the constant `(1/d_eff, 0, 0)` and the anharmonic
    /// terms are zero; see the `with_*` builders.
    pub fn calibrate(spec: &CalibrationSpec, d_eff: f64) -> Result<Self> {
        let [wx, wy, wz] = spec.targets;
        if !(wx > 0.0 && wy > 0.0 && wz > 0.0) || spec.targets.iter().any(|w| !w.is_finite()) {
            return Err(Error::Calibration(format!(
                "secular targets must be positive, got {:?}",
                spec.targets
            )));
        }
        if !(d_eff > 0.0) {
            return Err(Error::Calibration(format!("d_eff must be positive, got {d_eff}")));
        }
        if !(0.0..=1.0).contains(&spec.dc_split) {
            return Err(Error::Calibration(format!(
                "dc_split must lie in [0, 1], got {}",
                spec.dc_split
            )));
        }
        let (dc, rf) = if spec.rf_enabled {
            if !(spec.omega_rf.is_finite() && spec.omega_rf > 2.0 * wx.max(wy)) {
                return Err(Error::Calibration(format!(
                    "omega_rf = {:.4e} rad/s must exceed twice the radial targets",
                    spec.omega_rf
                )));
            }
            solve_curvatures(spec)?
        } else {
            // Static confinement needs c_i = ω_i² on every axis, which a
            // trace-free dc field cannot provide.
            let c = [wx * wx, wy * wy, wz * wz];
            let trace: f64 = c.iter().sum();
            if trace.abs() > 1e-12 * c.iter().fold(0.0f64, |a, b| a.max(b.abs())) {
                return Err(Error::Calibration(
                    "radial confinement requires rf: a dc-only field cannot confine all three axes"
                        .into(),
                ));
            }
            (c, [0.0; 3])
        };
        Ok(FieldModel {
            dc_curvature: dc,
            rf_curvature: rf,
            omega_rf: spec.omega_rf,
            phi_rf: spec.phi_rf,
            drive_curvature: [wx * wx, -wx * wx, 0.0],
            anharmonic: AnharmonicSpec::default(),
            coupling: CouplingModel::constant_x(d_eff),
            roi: Roi::default(),
            targets: spec.targets,
            constants: PhysicalConstants::CODATA,
        })
    }

    /// Calibrated model for `trap` with its x-axis C₄, C₆ applied.
    pub fn for_trap(trap: &TrapParams, mode: CalibrationMode, dc_split: f64) -> Result<Self> {
        let spec = CalibrationSpec {
            mode,
            dc_split,
            ..CalibrationSpec::from_trap(trap)
        };
        Ok(Self::calibrate(&spec, trap.d_eff)?.with_anharmonic(AnharmonicSpec::from_trap(trap)))
    }

    pub fn with_anharmonic(mut self, anharmonic: AnharmonicSpec) -> Self {
        self.anharmonic = anharmonic;
        self
    }

    pub fn with_coupling(mut self, coupling: CouplingModel) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn with_roi(mut self, roi: Roi) -> Self {
        self.roi = roi;
        self
    }

    /// Replaces anharmonic and coupling coefficients with those of a table
    /// (see the module docs for the format).
    pub fn load_coefficients(mut self, text: &str) -> Result<Self> {
        let (anh, coupling) = parse_coefficient_table(text)?;
        self.anharmonic = anh;
        if let Some(c) = coupling {
            self.coupling = c;
        }
        Ok(self)
    }

    /// Pseudopotential secular frequencies `√(c_i + κ_i²/(2ω_rf²))`.
    pub fn pseudopotential_frequencies(&self) -> [f64; 3] {
        let w2 = 2.0 * self.omega_rf * self.omega_rf;
        std::array::from_fn(|i| {
            (self.dc_curvature[i] + self.rf_curvature[i].powi(2) / w2)
                .max(0.0)
                .sqrt()
        })
    }

    /// Exact Floquet secular frequencies of the three uncoupled Mathieu axes.
    pub fn floquet_frequencies(&self) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = match floquet_exponent(self.dc_curvature[i], self.rf_curvature[i], self.omega_rf)? {
                FloquetResult::Stable(b) => b,
                other => {
                    return Err(Error::Calibration(format!(
                        "axis {i} is not stable: {other:?}"
                    )))
                }
            };
        }
        Ok(out)
    }

    /// Electric field per unit acceleration, m/q with the signed charge.
    #[inline]
    pub fn field_per_acceleration(&self) -> f64 {
        self.constants.electron_mass / self.constants.electron_charge()
    }

    /// Acceleration of the electron from trap and drive fields, `rf_scale`
    /// being the relative rf voltage (1 without rf noise).
    #[inline]
    pub fn acceleration(
        &self,
        r: &[f64; 3],
        t: f64,
        schedule: &DriveSchedule,
        rf_scale: f64,
    ) -> [f64; 3] {
        let (s, d) = self.acceleration_parts(r, t, schedule, rf_scale);
        [s[0] + d[0], s[1] + d[1], s[2] + d[2]]
    }

    /// Acceleration split into the static part (dc and anharmonic) and the
    /// explicitly time-dependent part (rf and drive).
    #[inline]
    pub fn acceleration_parts(
        &self,
        r: &[f64; 3],
        t: f64,
        schedule: &DriveSchedule,
        rf_scale: f64,
    ) -> ([f64; 3], [f64; 3]) {
        let rf = rf_scale * (self.omega_rf * t + self.phi_rf).cos();
        let drive = rf_scale * schedule.modulation(t);
        let mut st = [0.0; 3];
        let mut td = [0.0; 3];
        for i in 0..3 {
            st[i] = -self.dc_curvature[i] * r[i] - self.anharmonic.gradient(i, r[i]);
            td[i] = -(self.rf_curvature[i] * rf + self.drive_curvature[i] * drive) * r[i];
        }
        (st, td)
    }

    /// Static potential energy per unit mass (dc and anharmonic).
    pub fn static_potential(&self, r: &[f64; 3]) -> f64 {
        (0..3)
            .map(|i| 0.5 * self.dc_curvature[i] * r[i] * r[i] + self.anharmonic.potential(i, r[i]))
            .sum()
    }

    /// Field contributions at `r`, `t`. Errors outside the region of interest.
    pub fn fields_at(&self, r: &[f64; 3], t: f64, schedule: &DriveSchedule) -> Result<FieldSample> {
        if !self.roi.contains(r) {
            return Err(Error::OutOfBounds {
                x: r[0],
                y: r[1],
                z: r[2],
            });
        }
        let s = self.field_per_acceleration();
        let rf = (self.omega_rf * t + self.phi_rf).cos();
        let drive = schedule.modulation(t);
        let mut out = FieldSample {
            dc: [0.0; 3],
            anharmonic: [0.0; 3],
            rf: [0.0; 3],
            drive: [0.0; 3],
        };
        for i in 0..3 {
            out.dc[i] = -s * self.dc_curvature[i] * r[i];
            out.anharmonic[i] = -s * self.anharmonic.gradient(i, r[i]);
            out.rf[i] = -s * self.rf_curvature[i] * rf * r[i];
            out.drive[i] = -s * self.drive_curvature[i] * drive * r[i];
        }
        Ok(out)
    }

    /// Static dc field only (no anharmonic part), without the ROI check.
    pub fn dc_field(&self, r: &[f64; 3]) -> [f64; 3] {
        let s = self.field_per_acceleration();
        std::array::from_fn(|i| -s * self.dc_curvature[i] * r[i])
    }

    pub fn coupling_vector(&self, r: &[f64; 3]) -> [f64; 3] {
        self.coupling.at(r)
    }
}

/// Outcome of a Floquet analysis of `ẍ = −(c + κ cos Ωt) x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FloquetResult {
    /// Characteristic frequency in (0, Ω/2).
    Stable(f64),
    /// Unstable with too little confinement (trace of monodromy > 2).
    UnstableLow,
    /// Unstable at the upper band edge (trace < −2).
    UnstableHigh,
}

/// Floquet characteristic frequency of `ẍ = −(c + κ cos Ωt) x`, from the
/// trace of the one-period monodromy matrix.
pub fn floquet_exponent(c: f64, kappa: f64, omega: f64) -> Result<FloquetResult> {
    if kappa == 0.0 {
        return Ok(if c > 0.0 && c.sqrt() < omega / 2.0 {
            FloquetResult::Stable(c.sqrt())
        } else if c <= 0.0 {
            FloquetResult::UnstableLow
        } else {
            FloquetResult::UnstableHigh
        });
    }
    let period = std::f64::consts::TAU / omega;
    // Columns of the fundamental matrix, time rescaled to τ = Ωt.
    let sys = |tau: f64, y: &[f64; 4], dy: &mut [f64; 4]| {
        let k = (c + kappa * tau.cos()) / (omega * omega);
        dy[0] = y[1];
        dy[1] = -k * y[0];
        dy[2] = y[3];
        dy[3] = -k * y[2];
    };
    let mut solver = Dop853::new(Dop853Options::new(1e-14, 1e-14));
    let y = solver.integrate(
        &sys,
        0.0,
        [1.0, 0.0, 0.0, 1.0],
        std::f64::consts::TAU,
        None,
        |_, _| Ok(()),
        |_, _| Ok(()),
    )?;
    let half_trace = 0.5 * (y[0] + y[3]);
    Ok(if half_trace >= 1.0 {
        FloquetResult::UnstableLow
    } else if half_trace <= -1.0 {
        FloquetResult::UnstableHigh
    } else {
        FloquetResult::Stable(half_trace.acos() / period)
    })
}

/// rf curvature magnitude giving secular frequency `target` on an axis with
/// dc curvature `c`.
fn rf_magnitude_for(c: f64, target: f64, omega_rf: f64, mode: CalibrationMode) -> Result<f64> {
    let pseudo = 2.0 * omega_rf * omega_rf * (target * target - c);
    match mode {
        CalibrationMode::Pseudopotential => {
            if pseudo < 0.0 {
                return Err(Error::Calibration(format!(
                    "dc curvature {c:.4e} alone exceeds the target {target:.4e}² (negative rf curvature required)"
                )));
            }
            Ok(pseudo.sqrt())
        }
        CalibrationMode::Floquet => {
            if c > 0.0 && (c.sqrt() - target).abs() <= 1e-13 * target {
                return Ok(0.0);
            }
            if c > 0.0 && c.sqrt() > target {
                return Err(Error::Calibration(format!(
                    "dc curvature {c:.4e} alone exceeds the target {target:.4e}² (negative rf curvature required)"
                )));
            }
            // β grows monotonically with |κ| across the first stability
            // band; bisect on q = 2κ/Ω² ∈ [0, 0.9].
            let mut lo = 0.0;
            let mut hi = 0.45 * omega_rf * omega_rf;
            let beta_minus_target = |kappa: f64| -> Result<f64> {
                Ok(match floquet_exponent(c, kappa, omega_rf)? {
                    FloquetResult::Stable(b) => b - target,
                    FloquetResult::UnstableLow => -target,
                    FloquetResult::UnstableHigh => omega_rf,
                })
            };
            if beta_minus_target(hi)? < 0.0 {
                return Err(Error::Calibration(format!(
                    "target {target:.4e} rad/s unreachable within the first stability region"
                )));
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if beta_minus_target(mid)? < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}

/// Solves for the dc strength `D` (dc curvatures `D·(−s, −(1−s), 1)`) such
/// that the rf curvatures needed on each axis are trace-free.
fn solve_curvatures(spec: &CalibrationSpec) -> Result<([f64; 3], [f64; 3])> {
    let s = spec.dc_split;
    let [wx, wy, wz] = spec.targets;
    let mode = spec.mode;
    let curvatures = |d: f64| -> Result<([f64; 3], [f64; 3], f64)> {
        let dc = [-s * d, -(1.0 - s) * d, d];
        let kx = rf_magnitude_for(dc[0], wx, spec.omega_rf, mode)?;
        let ky = rf_magnitude_for(dc[1], wy, spec.omega_rf, mode)?;
        let kz = rf_magnitude_for(dc[2], wz, spec.omega_rf, mode)?;
        let residual = (kx - ky).abs() - kz;
        let rf = [kx, -ky, -(kx - ky)];
        Ok((dc, rf, residual))
    };

    // At D = ω_z² no rf is needed along z, so the residual is ≥ 0; walk down
    // until it changes sign, then bisect.
    let d_hi = wz * wz;
    let (dc, rf, r_hi) = curvatures(d_hi)?;
    if r_hi <= 0.0 {
        return Ok((dc, rf));
    }
    let mut step = 0.01 * wz * wz;
    let mut d_lo = d_hi - step;
    let mut found = false;
    for _ in 0..80 {
        match curvatures(d_lo) {
            Ok((_, _, r)) if r <= 0.0 => {
                found = true;
                break;
            }
            Ok(_) => {}
            Err(_) => break,
        }
        step *= 2.0;
        d_lo = d_hi - step;
    }
    if !found {
        return Err(Error::Calibration(
            "no dc/rf combination reproduces the targets with a trace-free rf field".into(),
        ));
    }
    let (mut lo, mut hi) = (d_lo, d_hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (_, _, r) = curvatures(mid)?;
        if r <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= 1e-15 * wz * wz {
            break;
        }
    }
    let (dc, rf, _) = curvatures(0.5 * (lo + hi))?;
    Ok((dc, rf))
}

fn parse_coefficient_table(text: &str) -> Result<(AnharmonicSpec, Option<CouplingModel>)> {
    let mut anh = AnharmonicSpec::default();
    let mut poly = [[0.0; 7]; 3];
    let mut any_coupling = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let values = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::CoefficientFile {
                    line: line_no,
                    reason: format!("`{p}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::CoefficientFile {
                line: line_no,
                reason: "non-finite coefficient".into(),
            });
        }
        let axis = |name: &str| match name {
            "x" => Some(0),
            "y" => Some(1),
            "z" => Some(2),
            _ => None,
        };
        if let Some(i) = axis(key) {
            if values.len() != 4 {
                return Err(Error::CoefficientFile {
                    line: line_no,
                    reason: format!("expected 4 coefficients C3..C6, found {}", values.len()),
                });
            }
            anh.coeffs[i].copy_from_slice(&values);
        } else if let Some(i) = key.strip_prefix("dinv_").and_then(axis) {
            if values.is_empty() || values.len() > 7 {
                return Err(Error::CoefficientFile {
                    line: line_no,
                    reason: format!("expected 1 to 7 coupling coefficients, found {}", values.len()),
                });
            }
            poly[i][..values.len()].copy_from_slice(&values);
            any_coupling = true;
        } else {
            return Err(Error::CoefficientFile {
                line: line_no,
                reason: format!("unknown row `{key}`"),
            });
        }
    }
    let coupling = any_coupling.then(|| {
        if poly.iter().all(|p| p[1..].iter().all(|&c| c == 0.0)) {
            CouplingModel::Constant([poly[0][0], poly[1][0], poly[2][0]])
        } else {
            CouplingModel::Polynomial(poly)
        }
    });
    Ok((anh, coupling))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{units, KhzConvention};
    use approx::assert_relative_eq;

    fn default_targets() -> [f64; 3] {
        [200.0, 173.0, 70.0].map(units::mhz_to_angular)
    }

    #[test]
    fn floquet_matches_harmonic_limit() {
        let w = units::mhz_to_angular(100.0);
        match floquet_exponent(w * w, 1e-30, units::mhz_to_angular(1452.0)).unwrap() {
            FloquetResult::Stable(b) => assert_relative_eq!(b, w, max_relative = 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn floquet_small_q_approaches_pseudopotential() {
        let big = units::mhz_to_angular(1e5);
        let w = units::mhz_to_angular(100.0);
        let kappa = (2.0f64).sqrt() * big * w;
        match floquet_exponent(0.0, kappa, big).unwrap() {
            FloquetResult::Stable(b) => assert_relative_eq!(b, w, max_relative = 1e-5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn calibration_satisfies_traces_and_targets() {
        for mode in [CalibrationMode::Floquet, CalibrationMode::Pseudopotential] {
            let spec = CalibrationSpec {
                mode,
                ..CalibrationSpec::new(default_targets(), units::mhz_to_angular(1452.0))
            };
            let f = FieldModel::calibrate(&spec, 4.8e-3).unwrap();
            let scale = f.dc_curvature.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            assert!(f.dc_curvature.iter().sum::<f64>().abs() < 1e-12 * scale);
            let rscale = f.rf_curvature.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            assert!(f.rf_curvature.iter().sum::<f64>().abs() < 1e-9 * rscale);
            assert_eq!(f.drive_curvature[0] + f.drive_curvature[1], 0.0);
            let got = match mode {
                CalibrationMode::Pseudopotential => f.pseudopotential_frequencies(),
                CalibrationMode::Floquet => f.floquet_frequencies().unwrap(),
            };
            for i in 0..3 {
                assert_relative_eq!(got[i], spec.targets[i], max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn pseudopotential_rf_identity() {
        // ω_x = ω_y with negligible axial dc: κ = √2·ω_x·ω_rf.
        let wx = units::mhz_to_angular(200.0);
        let wrf = units::mhz_to_angular(1452.0);
        let spec = CalibrationSpec {
            mode: CalibrationMode::Pseudopotential,
            ..CalibrationSpec::new([wx, wx, units::mhz_to_angular(0.01)], wrf)
        };
        let f = FieldModel::calibrate(&spec, 4.8e-3).unwrap();
        assert_relative_eq!(f.rf_curvature[0], 2f64.sqrt() * wx * wrf, max_relative = 1e-6);
        assert!(f.rf_curvature[2].abs() < 1e-9 * f.rf_curvature[0]);
    }

    #[test]
    fn dc_only_radial_confinement_is_rejected() {
        let spec = CalibrationSpec {
            rf_enabled: false,
            ..CalibrationSpec::new(default_targets(), units::mhz_to_angular(1452.0))
        };
        assert!(matches!(FieldModel::calibrate(&spec, 4.8e-3), Err(Error::Calibration(_))));
    }

    #[test]
    fn infeasible_requests_fail() {
        let t = default_targets();
        let low_rf = CalibrationSpec::new(t, 1.5 * t[0]);
        assert!(FieldModel::calibrate(&low_rf, 4.8e-3).is_err());
        let bad_split = CalibrationSpec {
            dc_split: 1.5,
            ..CalibrationSpec::new(t, units::mhz_to_angular(1452.0))
        };
        assert!(FieldModel::calibrate(&bad_split, 4.8e-3).is_err());
    }

    #[test]
    fn fields_at_center_and_signs() {
        let trap = TrapParams::default();
        let f = FieldModel::for_trap(&trap, CalibrationMode::Floquet, 0.5).unwrap();
        let sched = DriveSchedule::ramped(2.0 * trap.secular[0], 0.1, 1e-6);
        for t in [0.0, 0.3e-9, 2e-6] {
            let s = f.fields_at(&[0.0; 3], t, &sched).unwrap();
            for v in [s.dc, s.anharmonic, s.rf, s.drive] {
                assert_eq!(v, [0.0; 3]);
            }
        }
        // dc-only x field at 1 µm: E = −c_x·(m/q)·x.
        let mut dc_only = f;
        dc_only.anharmonic = AnharmonicSpec::default();
        let x = 1e-6;
        let s = dc_only.fields_at(&[x, 0.0, 0.0], 0.0, &sched).unwrap();
        let k = &f.constants;
        let expected = -f.dc_curvature[0] * (k.electron_mass / k.electron_charge()) * x;
        assert_relative_eq!(s.dc[0], expected, max_relative = 1e-14);
        // Force q·E along z (confining dc) points back to the centre.
        let s = dc_only.fields_at(&[0.0, 0.0, 1e-6], 0.0, &sched).unwrap();
        assert!(k.electron_charge() * s.dc[2] < 0.0);
    }

    #[test]
    fn drive_field_follows_ramp() {
        let trap = TrapParams::default();
        let f = FieldModel::for_trap(&trap, CalibrationMode::Floquet, 0.5).unwrap();
        let wd = 2.0 * trap.secular[0];
        let ramp = DriveSchedule::ramped(wd, 0.1, 1e-6);
        // Both times sit on a cosine maximum of the 400 MHz drive.
        let r = [5e-6, 0.0, 0.0];
        let half = f.fields_at(&r, 0.5e-6, &ramp).unwrap().drive[0];
        let full = f.fields_at(&r, 1.5e-6, &ramp).unwrap().drive[0];
        assert_relative_eq!(half / full, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn roi_violation_is_reported() {
        let f = FieldModel::for_trap(&TrapParams::default(), CalibrationMode::Pseudopotential, 0.5).unwrap();
        let sched = DriveSchedule::off(1.0);
        assert!(matches!(
            f.fields_at(&[0.0, 0.0, 30e-6], 0.0, &sched),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(f.fields_at(&[150e-6, -150e-6, 25e-6], 0.0, &sched).is_ok());
    }

    #[test]
    fn laplace_divergence_vanishes() {
        let f = FieldModel::for_trap(&TrapParams::default(), CalibrationMode::Floquet, 0.3).unwrap();
        let h = 1e-7;
        let mut worst = 0.0f64;
        let scale = f.dc_field(&[150e-6, 150e-6, 25e-6]).iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for &x in &[-140e-6, -20e-6, 0.0, 60e-6, 140e-6] {
            for &y in &[-140e-6, 0.0, 90e-6] {
                for &z in &[-20e-6, 0.0, 20e-6] {
                    let mut div = 0.0;
                    for i in 0..3 {
                        let mut rp = [x, y, z];
                        let mut rm = [x, y, z];
                        rp[i] += h;
                        rm[i] -= h;
                        div += (f.dc_field(&rp)[i] - f.dc_field(&rm)[i]) / (2.0 * h);
                    }
                    worst = worst.max((div * 1e-4).abs());
                }
            }
        }
        // divergence × 100 µm compared with the field scale over the ROI
        assert!(worst < 1e-6 * scale, "{worst} vs {scale}");
    }

    #[test]
    fn coupling_defaults() {
        let f = FieldModel::for_trap(&TrapParams::default(), CalibrationMode::Pseudopotential, 0.5).unwrap();
        let d = f.coupling_vector(&[0.0; 3]);
        assert_relative_eq!(d[0], 208.333, max_relative = 1e-5);
        assert_eq!(&d[1..], &[0.0, 0.0]);
        assert_eq!(f.coupling_vector(&[100e-6, -50e-6, 10e-6]), d);
        let mut p = [[0.0; 7]; 3];
        p[0][0] = 1.0 / 4.8e-3;
        let poly = CouplingModel::Polynomial(p);
        assert_eq!(poly.at(&[1e-4, 2e-5, 0.0]), d);
    }

    #[test]
    fn lambda_extraction_is_exact() {
        for conv in [KhzConvention::Angular, KhzConvention::Plain] {
            let trap = TrapParams::standard(conv);
            let a = AnharmonicSpec::from_trap(&trap);
            let wx = trap.secular[0];
            assert_relative_eq!(conv.from_si(a.lambda4(0, wx), 2), -4.08, max_relative = 1e-13);
            assert_relative_eq!(conv.from_si(a.lambda6(0, wx), 4), 6.78e-6, max_relative = 1e-13);
        }
    }

    #[test]
    fn coefficient_table_round_trip() {
        let text = "# axis C3 C4 C5 C6\n\
                    x 0 -2.0e25 0 4.0e46\n\
                    y 0 0 0 0   # comment\n\
                    \n\
                    dinv_x 208.3 1.0e3\n";
        let f = FieldModel::for_trap(&TrapParams::default(), CalibrationMode::Pseudopotential, 0.5)
            .unwrap()
            .load_coefficients(text)
            .unwrap();
        assert_eq!(f.anharmonic.c(0, 4), -2.0e25);
        assert_eq!(f.anharmonic.c(0, 6), 4.0e46);
        assert!(matches!(f.coupling, CouplingModel::Polynomial(_)));
        assert_relative_eq!(f.coupling_vector(&[1e-3, 0.0, 0.0])[0], 209.3, max_relative = 1e-12);

        let bad = "x 1 2 3\n";
        assert!(matches!(
            AnharmonicSpec::parse_table(bad),
            Err(Error::CoefficientFile { line: 1, .. })
        ));
        assert!(matches!(
            AnharmonicSpec::parse_table("x 0 0 0 0\nw 1 2 3 4\n"),
            Err(Error::CoefficientFile { line: 2, .. })
        ));
    }

    #[test]
    fn anharmonic_gradient_matches_potential() {
        let a = AnharmonicSpec {
            coeffs: [[1e14, -2e25, 3e35, 4e46], [0.0; 4], [0.0; 4]],
        };
        for &x in &[-80e-6f64, -1e-6, 7e-6, 120e-6] {
            let h = 1e-5 * x.abs();
            let fd = (a.potential(0, x + h) - a.potential(0, x - h)) / (2.0 * h);
            assert_relative_eq!(a.gradient(0, x), fd, max_relative = 1e-6);
        }
    }
}
