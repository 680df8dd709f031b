//! Deterministic integration of the 1D parametric oscillator and of the
//! coupled electron/resonator system.
//!
//! The 3D state is `(x, y, z, vx, vy, vz, I, İ)`. With signed charge `q`:
//!
//! ```text
//! r̈  = a_trap(r, t) + (q/m)·L·İ·D_inv(r)
//! LCÏ = −Lİ/R − I − q·D_inv(r)·ṙ
//! ```
//!
//! and the resonator output is `V = L·İ`.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{AnharmonicSpec, CalibrationSpec, CouplingModel, FieldModel, Roi};
use crate::integrate::{Dop853, Dop853Options, IntegrationStats, SampleGrid};
use crate::params::{thermal_sample, DriveSchedule, ResonatorParams};
use crate::spectral::bin_power;

pub const DEFAULT_SAMPLE_RATE: f64 = 4.096e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorMode {
    #[default]
    Ode,
    Sde,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub abstol: f64,
    pub reltol: f64,
    pub max_step: Option<f64>,
    pub mode: IntegratorMode,
    /// Output sample rate, Hz.
    pub sample_rate: f64,
    /// SDE steps per output sample.
    pub sde_substeps: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            abstol: 1e-10,
            reltol: 1e-10,
            max_step: None,
            mode: IntegratorMode::Ode,
            sample_rate: DEFAULT_SAMPLE_RATE,
            sde_substeps: 8,
        }
    }
}

impl IntegratorSettings {
    pub fn sde() -> Self {
        IntegratorSettings {
            abstol: 1e-9,
            reltol: 1e-9,
            mode: IntegratorMode::Sde,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("IntegratorSettings.abstol", self.abstol), ("IntegratorSettings.reltol", self.reltol)] {
            if !(v > 0.0 && v <= 1e-3) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must lie in (0, 1e-3], got {v}"),
                });
            }
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "IntegratorSettings.max_step",
                    reason: format!("must be positive, got {h}"),
                });
            }
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "IntegratorSettings.sample_rate",
                reason: format!("must be positive, got {}", self.sample_rate),
            });
        }
        if self.sde_substeps == 0 {
            return Err(Error::InvalidParameter {
                name: "IntegratorSettings.sde_substeps",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Number of output samples in `[0, t_end)`.
    pub fn sample_count(&self, t_end: f64) -> usize {
        (t_end * self.sample_rate * (1.0 + 1e-12)).floor() as usize
    }

    fn max_step_or(&self, span: f64) -> f64 {
        self.max_step.unwrap_or(span)
    }
}

/// Parameters of `ẍ = −ω²x(1 + ε(t)cos(ω_d t + φ_d)) − Σ kC_k x^{k−1} − γẋ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneDParams {
    pub omega_x: f64,
    /// `C_3..C_6`.
    pub anharmonic: [f64; 4],
    pub gamma: f64,
}

impl OneDParams {
    pub fn new(omega_x: f64, c4: f64, c6: f64, gamma: f64) -> Self {
        OneDParams {
            omega_x,
            anharmonic: [0.0, c4, 0.0, c6],
            gamma,
        }
    }

    #[inline]
    fn force(&self, x: f64) -> f64 {
        let c = &self.anharmonic;
        let x2 = x * x;
        3.0 * c[0] * x2 + 4.0 * c[1] * x2 * x + 5.0 * c[2] * x2 * x2 + 6.0 * c[3] * x2 * x2 * x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory1D {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub stats: IntegrationStats,
}

pub fn integrate_1d(
    x0: f64,
    v0: f64,
    params: &OneDParams,
    schedule: &DriveSchedule,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory1D> {
    settings.validate()?;
    schedule.validate()?;
    if !(x0.is_finite() && v0.is_finite() && t_end.is_finite() && t_end > 0.0) {
        return Err(Error::Domain("integrate_1d needs finite inputs and t_end > 0".into()));
    }
    let w2 = params.omega_x * params.omega_x;
    let sys = |t: f64, y: &[f64; 2], dy: &mut [f64; 2]| {
        dy[0] = y[1];
        dy[1] = -w2 * y[0] * (1.0 + schedule.modulation(t)) - params.force(y[0]) - params.gamma * y[1];
    };
    let scale = [1e-6, 1e-6 * params.omega_x];
    let opts = Dop853Options::new(settings.abstol, settings.reltol)
        .with_scale(scale)
        .with_max_step(settings.max_step_or(t_end));
    let n = settings.sample_count(t_end);
    let grid = SampleGrid::record(0.0, settings.dt(), n);
    let mut out = Trajectory1D {
        t: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        stats: IntegrationStats::default(),
    };
    let mut solver = Dop853::new(opts);
    solver.integrate(
        &sys,
        0.0,
        [x0, v0],
        t_end,
        Some(grid),
        |t, y| {
            out.t.push(t);
            out.x.push(y[0]);
            out.v.push(y[1]);
            Ok(())
        },
        |t, y| {
            if y.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(Error::Integration {
                    t,
                    reason: "non-finite state".into(),
                })
            }
        },
    )?;
    out.stats = solver.stats;
    Ok(out)
}

/// Thermal initial condition `r_i = √(k_BT/mω_i²)cos φ_i`,
/// `v_i = −√(k_BT/m) sin φ_i`, with the circuit at rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitCondition {
    pub temperature: f64,
    pub phases: [f64; 3],
    /// Overrides the field model's rf phase when set.
    pub phi_rf: Option<f64>,
    /// Initial `(I, İ)`.
    pub circuit: [f64; 2],
}

impl Default for InitCondition {
    fn default() -> Self {
        InitCondition {
            temperature: 4.0,
            phases: [0.0; 3],
            phi_rf: None,
            circuit: [0.0; 2],
        }
    }
}

impl InitCondition {
    pub fn with_phi_x(phi_x: f64) -> Self {
        InitCondition {
            phases: [phi_x, 0.0, 0.0],
            ..Default::default()
        }
    }

    pub fn state(&self, field: &FieldModel) -> Result<[f64; 8]> {
        let mut y = [0.0; 8];
        for i in 0..3 {
            let (r, v) = thermal_sample(&field.constants, self.temperature, field.targets[i], self.phases[i])?;
            y[i] = r;
            y[3 + i] = v;
        }
        y[6] = self.circuit[0];
        y[7] = self.circuit[1];
        Ok(y)
    }
}

/// Extra forcing terms, used by the stochastic integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forcing {
    /// Uniform field, V/m.
    pub field_noise: [f64; 3],
    /// Current source parallel to the resonator, A.
    pub current_noise: f64,
    /// Relative rf (and drive) amplitude.
    pub rf_scale: f64,
}

impl Forcing {
    pub const NONE: Forcing = Forcing {
        field_noise: [0.0; 3],
        current_noise: 0.0,
        rf_scale: 1.0,
    };
}

/// Electron in the trap field coupled to the pickup resonator.
#[derive(Debug, Clone, Copy)]
pub struct CoupledSystem<'a> {
    pub field: &'a FieldModel,
    pub resonator: &'a ResonatorParams,
    pub schedule: &'a DriveSchedule,
    q: f64,
    q_over_m: f64,
}

impl<'a> CoupledSystem<'a> {
    pub fn new(field: &'a FieldModel, resonator: &'a ResonatorParams, schedule: &'a DriveSchedule) -> Self {
        let q = field.constants.electron_charge();
        CoupledSystem {
            field,
            resonator,
            schedule,
            q,
            q_over_m: q / field.constants.electron_mass,
        }
    }

    /// Right-hand side on the first 8 entries of `y`. With 11 entries the
    /// last three accumulate the work of the time-dependent trap fields, the
    /// coupling work on the electron and the resistor loss.
    #[inline]
    pub fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64], forcing: &Forcing) {
        let r = [y[0], y[1], y[2]];
        let v = [y[3], y[4], y[5]];
        let (i_l, j) = (y[6], y[7]);
        let d = self.field.coupling.at(&r);
        let (st, td) = self.field.acceleration_parts(&r, t, self.schedule, forcing.rf_scale);
        let res = self.resonator;
        let volt = res.l * j;
        let d_dot_v = d[0] * v[0] + d[1] * v[1] + d[2] * v[2];
        for k in 0..3 {
            dy[k] = v[k];
            dy[3 + k] = st[k] + td[k] + self.q_over_m * (volt * d[k] + forcing.field_noise[k]);
        }
        dy[6] = j;
        dy[7] = (-volt / res.r - i_l - self.q * d_dot_v + forcing.current_noise) / (res.l * res.c);
        if y.len() >= 11 {
            let m = self.field.constants.electron_mass;
            let mut p_ext = 0.0;
            for k in 0..3 {
                p_ext += m * v[k] * (td[k] + self.q_over_m * forcing.field_noise[k]);
            }
            dy[8] = p_ext;
            dy[9] = self.q * volt * d_dot_v;
            dy[10] = volt * volt / res.r;
        }
    }

    /// Electron energy: kinetic plus static potential.
    pub fn electron_energy(&self, y: &[f64]) -> f64 {
        let m = self.field.constants.electron_mass;
        let r = [y[0], y[1], y[2]];
        0.5 * m * (y[3] * y[3] + y[4] * y[4] + y[5] * y[5]) + m * self.field.static_potential(&r)
    }

    pub fn circuit_energy(&self, y: &[f64]) -> f64 {
        let res = self.resonator;
        let volt = res.l * y[7];
        0.5 * res.c * volt * volt + 0.5 * res.l * y[6] * y[6]
    }

    /// Absolute-tolerance scales: 1 µm, 1 µm·ω_x and the matching image
    /// current response of the resonator.
    pub fn scales(&self) -> [f64; 8] {
        let len = 1e-6;
        let w = self.field.targets[0];
        let d = self.field.coupling.center();
        let dmag = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let res = self.resonator;
        let i_src = self.q.abs() * dmag * w * len;
        let thermal = (self.field.constants.boltzmann * res.temperature.max(1e-3) / res.l).sqrt();
        let i_scale = if i_src > 0.0 { i_src * res.q } else { thermal };
        [len, len, len, len * w, len * w, len * w, i_scale, i_scale * res.omega_res]
    }

    pub fn check_roi(&self, t: f64, y: &[f64]) -> Result<()> {
        if y.iter().take(8).any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                t,
                reason: "non-finite state".into(),
            });
        }
        let r = [y[0], y[1], y[2]];
        if self.field.roi.contains(&r) {
            Ok(())
        } else {
            Err(Error::Escape {
                t,
                x: r[0],
                y: r[1],
                z: r[2],
            })
        }
    }
}

pub const COLUMN_NAMES: [&str; 10] = ["t", "x", "y", "z", "vx", "vy", "vz", "I", "dIdt", "V"];

/// Uniformly sampled trajectory, columnar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub sample_rate: f64,
    pub seed: Option<u64>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

const MAGIC: &[u8; 4] = b"PTRJ";
const FORMAT_VERSION: u32 = 1;

impl TrajectoryRecord {
    pub fn empty(sample_rate: f64, capacity: usize) -> Self {
        TrajectoryRecord {
            sample_rate,
            seed: None,
            names: COLUMN_NAMES.iter().map(|s| s.to_string()).collect(),
            columns: vec![Vec::with_capacity(capacity); COLUMN_NAMES.len()],
        }
    }

    pub fn push(&mut self, t: f64, y: &[f64; 8], inductance: f64) {
        self.columns[0].push(t);
        for k in 0..8 {
            self.columns[k + 1].push(y[k]);
        }
        self.columns[9].push(inductance * y[7]);
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    /// Little-endian columnar layout:
    ///
    /// ```text
    /// magic "PTRJ" | u32 version | f64 sample_rate | u64 samples
    /// u8 has_seed | u64 seed | u32 ncols | ncols × (u16 len, utf-8 name)
    /// ncols × samples × f64
    /// ```
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.len();
        if self.columns.iter().any(|c| c.len() != n) || self.names.len() != self.columns.len() {
            return Err(Error::TrajectoryFile("ragged columns".into()));
        }
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.sample_rate.to_le_bytes())?;
        w.write_all(&(n as u64).to_le_bytes())?;
        w.write_all(&[self.seed.is_some() as u8])?;
        w.write_all(&self.seed.unwrap_or(0).to_le_bytes())?;
        w.write_all(&(self.columns.len() as u32).to_le_bytes())?;
        for name in &self.names {
            let b = name.as_bytes();
            let len = u16::try_from(b.len()).map_err(|_| Error::TrajectoryFile("column name too long".into()))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(b)?;
        }
        let mut buf = Vec::with_capacity(8 * n);
        for c in &self.columns {
            buf.clear();
            for v in c {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        fn take<const K: usize, R: Read>(r: &mut R) -> Result<[u8; K]> {
            let mut b = [0u8; K];
            r.read_exact(&mut b)
                .map_err(|e| Error::TrajectoryFile(format!("truncated header: {e}")))?;
            Ok(b)
        }
        if &take::<4, _>(&mut r)? != MAGIC {
            return Err(Error::TrajectoryFile("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(Error::TrajectoryFile(format!("unsupported version {version}")));
        }
        let sample_rate = f64::from_le_bytes(take(&mut r)?);
        let n = u64::from_le_bytes(take(&mut r)?) as usize;
        let has_seed = take::<1, _>(&mut r)?[0] != 0;
        let seed = u64::from_le_bytes(take(&mut r)?);
        let ncols = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut names = Vec::with_capacity(ncols);
        for _ in 0..ncols {
            let len = u16::from_le_bytes(take(&mut r)?) as usize;
            let mut b = vec![0u8; len];
            r.read_exact(&mut b)
                .map_err(|e| Error::TrajectoryFile(format!("truncated header: {e}")))?;
            names.push(String::from_utf8(b).map_err(|_| Error::TrajectoryFile("column name is not utf-8".into()))?);
        }
        let mut columns = Vec::with_capacity(ncols);
        let mut buf = vec![0u8; 8 * n];
        for name in &names {
            r.read_exact(&mut buf)
                .map_err(|e| Error::TrajectoryFile(format!("column `{name}` truncated: {e}")))?;
            columns.push(
                buf.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect(),
            );
        }
        Ok(TrajectoryRecord {
            sample_rate,
            seed: has_seed.then_some(seed),
            names,
            columns,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if let Some(s) = self.seed {
            writeln!(w, "# seed={s}")?;
        }
        writeln!(w, "{}", self.names.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = self.columns.iter().map(|c| format!("{:e}", c[i])).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run3d {
    pub record: TrajectoryRecord,
    pub final_state: [f64; 8],
    pub stats: IntegrationStats,
}

fn validate_3d(settings: &IntegratorSettings, schedule: &DriveSchedule, resonator: &ResonatorParams, t_end: f64) -> Result<()> {
    settings.validate()?;
    schedule.validate()?;
    ResonatorParams::new(resonator.q, resonator.z0, resonator.omega_res, resonator.temperature)?;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::Domain(format!("t_end must be positive, got {t_end}")));
    }
    Ok(())
}

fn field_with_phase(field: &FieldModel, init: &InitCondition) -> FieldModel {
    let mut f = *field;
    if let Some(p) = init.phi_rf {
        f.phi_rf = p;
    }
    f
}

/// Integrates the coupled system and hands every output sample to `sink`.
pub fn integrate_3d_with<F>(
    init: &InitCondition,
    field: &FieldModel,
    resonator: &ResonatorParams,
    schedule: &DriveSchedule,
    t_end: f64,
    settings: &IntegratorSettings,
    mut sink: F,
) -> Result<([f64; 8], IntegrationStats)>
where
    F: FnMut(f64, &[f64; 8]) -> Result<()>,
{
    validate_3d(settings, schedule, resonator, t_end)?;
    let field = field_with_phase(field, init);
    let sys = CoupledSystem::new(&field, resonator, schedule);
    let y0 = init.state(&field)?;
    sys.check_roi(0.0, &y0)?;
    let rhs = |t: f64, y: &[f64; 8], dy: &mut [f64; 8]| sys.rhs(t, y, dy, &Forcing::NONE);
    let opts = Dop853Options::new(settings.abstol, settings.reltol)
        .with_scale(sys.scales())
        .with_max_step(settings.max_step_or(t_end));
    let grid = SampleGrid::record(0.0, settings.dt(), settings.sample_count(t_end));
    let mut solver = Dop853::new(opts);
    let y = solver.integrate(&rhs, 0.0, y0, t_end, Some(grid), |t, y| sink(t, y), |t, y| sys.check_roi(t, y))?;
    Ok((y, solver.stats))
}

/// Integrates the coupled system and records every column.
pub fn integrate_3d(
    init: &InitCondition,
    field: &FieldModel,
    resonator: &ResonatorParams,
    schedule: &DriveSchedule,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<Run3d> {
    let mut record = TrajectoryRecord::empty(settings.sample_rate, settings.sample_count(t_end));
    let l = resonator.l;
    let (final_state, stats) = integrate_3d_with(init, field, resonator, schedule, t_end, settings, |t, y| {
        record.push(t, y, l);
        Ok(())
    })?;
    Ok(Run3d {
        record,
        final_state,
        stats,
    })
}

/// Energy bookkeeping over `[0, t_end]` of a noise-free run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyAudit {
    pub electron_change: f64,
    /// Work of the rf and drive fields on the electron.
    pub external_work: f64,
    /// `∫ q·L·İ·D_inv·v dt`, work of the resonator on the electron.
    pub coupling_work: f64,
    pub circuit_change: f64,
    pub resistor_loss: f64,
}

impl EnergyAudit {
    /// `ΔE_e − W_ext − W_c`.
    pub fn electron_residual(&self) -> f64 {
        self.electron_change - self.external_work - self.coupling_work
    }

    /// `ΔE_c + W_R + W_c`.
    pub fn circuit_residual(&self) -> f64 {
        self.circuit_change + self.resistor_loss + self.coupling_work
    }
}

pub fn energy_audit(
    init: &InitCondition,
    field: &FieldModel,
    resonator: &ResonatorParams,
    schedule: &DriveSchedule,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<EnergyAudit> {
    validate_3d(settings, schedule, resonator, t_end)?;
    let field = field_with_phase(field, init);
    let sys = CoupledSystem::new(&field, resonator, schedule);
    let s8 = init.state(&field)?;
    let mut y0 = [0.0; 11];
    y0[..8].copy_from_slice(&s8);
    let rhs = |t: f64, y: &[f64; 11], dy: &mut [f64; 11]| sys.rhs(t, y, dy, &Forcing::NONE);
    let sc = sys.scales();
    let e_scale = field.constants.electron_mass * (sc[3] * sc[3]);
    let mut scale = [e_scale; 11];
    scale[..8].copy_from_slice(&sc);
    let opts = Dop853Options::new(settings.abstol, settings.reltol)
        .with_scale(scale)
        .with_max_step(settings.max_step_or(t_end));
    let mut solver = Dop853::new(opts);
    let y = solver.integrate(&rhs, 0.0, y0, t_end, None, |_, _| Ok(()), |t, y| sys.check_roi(t, y))?;
    Ok(EnergyAudit {
        electron_change: sys.electron_energy(&y) - sys.electron_energy(&y0),
        external_work: y[8],
        coupling_work: y[9],
        circuit_change: sys.circuit_energy(&y) - sys.circuit_energy(&y0),
        resistor_loss: y[10],
    })
}

/// Everything except ω_x needed to run one point of a detuning scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetuningSetup {
    pub calibration: CalibrationSpec,
    pub d_eff: f64,
    pub anharmonic: AnharmonicSpec,
    pub coupling: Option<CouplingModel>,
    pub roi: Roi,
    pub resonator: ResonatorParams,
    pub init: InitCondition,
    pub schedule: DriveSchedule,
    pub t_end: f64,
    pub settings: IntegratorSettings,
    /// Start of the record analysed for the probe amplitude.
    pub analysis_start: f64,
    /// Probe frequency, Hz.
    pub probe_frequency: f64,
}

impl DetuningSetup {
    /// Field re-calibrated for `omega_x`. The drive curvature keeps its
    /// nominal value, since the drive voltage does not change with the trap.
    pub fn field_for(&self, omega_x: f64) -> Result<FieldModel> {
        let mut spec = self.calibration;
        spec.targets[0] = omega_x;
        let nominal = self.calibration.targets[0];
        let mut f = FieldModel::calibrate(&spec, self.d_eff)?
            .with_anharmonic(self.anharmonic)
            .with_roi(self.roi);
        f.drive_curvature = [nominal * nominal, -nominal * nominal, 0.0];
        if let Some(c) = self.coupling {
            f = f.with_coupling(c);
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCell {
    pub omega_x: f64,
    pub phi_x: f64,
    /// Voltage amplitude at the probe bin, V.
    pub voltage_amplitude: Option<f64>,
    /// x-motion amplitude at the probe bin, m.
    pub x_amplitude: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetuningScan {
    pub omega_x: Vec<f64>,
    pub phi_x: Vec<f64>,
    /// `cells[i][j]` for `omega_x[i]`, `phi_x[j]`.
    pub cells: Vec<Vec<ScanCell>>,
}

impl DetuningScan {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "omega_x_rad_per_s,phi_x_rad,voltage_amplitude_V,x_amplitude_m,error")?;
        for row in &self.cells {
            for c in row {
                writeln!(
                    w,
                    "{:e},{:e},{:e},{:e},{}",
                    c.omega_x,
                    c.phi_x,
                    c.voltage_amplitude.unwrap_or(f64::NAN),
                    c.x_amplitude.unwrap_or(f64::NAN),
                    c.error.as_deref().unwrap_or("").replace(',', ";")
                )?;
            }
        }
        Ok(())
    }
}

/// Amplitudes of `x` and `V` at the probe bin over `[analysis_start, t_end)`.
pub fn probe_amplitudes(record: &TrajectoryRecord, analysis_start: f64, f: f64) -> Result<(f64, f64)> {
    let n0 = (analysis_start * record.sample_rate).round() as usize;
    let x = record.column("x").ok_or_else(|| Error::TrajectoryFile("missing x".into()))?;
    let v = record.column("V").ok_or_else(|| Error::TrajectoryFile("missing V".into()))?;
    if n0 >= x.len() {
        return Err(Error::Spectrum("analysis window is empty".into()));
    }
    Ok((
        bin_power(&v[n0..], record.sample_rate, f)?.amplitude,
        bin_power(&x[n0..], record.sample_rate, f)?.amplitude,
    ))
}

/// Runs every `(ω_x, φ_x)` pair, re-calibrating the radial field each time.
/// Cells are computed in parallel and returned in input order.
pub fn detuning_scan(omega_x_values: &[f64], phi_x_values: &[f64], setup: &DetuningSetup) -> Result<DetuningScan> {
    let pairs: Vec<(usize, usize)> = (0..omega_x_values.len())
        .flat_map(|i| (0..phi_x_values.len()).map(move |j| (i, j)))
        .collect();
    let cells: Vec<ScanCell> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let omega_x = omega_x_values[i];
            let phi_x = phi_x_values[j];
            let run = || -> Result<(f64, f64)> {
                let field = setup.field_for(omega_x)?;
                let init = InitCondition {
                    phases: [phi_x, setup.init.phases[1], setup.init.phases[2]],
                    ..setup.init
                };
                let run = integrate_3d(&init, &field, &setup.resonator, &setup.schedule, setup.t_end, &setup.settings)?;
                probe_amplitudes(&run.record, setup.analysis_start, setup.probe_frequency)
            };
            match run() {
                Ok((v, x)) => ScanCell {
                    omega_x,
                    phi_x,
                    voltage_amplitude: Some(v),
                    x_amplitude: Some(x),
                    error: None,
                },
                Err(e) => ScanCell {
                    omega_x,
                    phi_x,
                    voltage_amplitude: None,
                    x_amplitude: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut it = cells.into_iter();
    let grid = (0..omega_x_values.len())
        .map(|_| it.by_ref().take(phi_x_values.len()).collect())
        .collect();
    Ok(DetuningScan {
        omega_x: omega_x_values.to_vec(),
        phi_x: phi_x_values.to_vec(),
        cells: grid,
    })
}
