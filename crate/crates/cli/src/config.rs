//! Experiment configuration: TOML ingestion in laboratory units, overrides,
//! validation and conversion to library types.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use paramtrap::dynamics::{DetuningSetup, InitCondition, IntegratorMode, IntegratorSettings};
use paramtrap::field::{CalibrationMode, CalibrationSpec, FieldModel, Roi};
use paramtrap::noise::{CircuitInit, NoiseConfig};
use paramtrap::params::{units, DriveSchedule, KhzConvention, ResonatorParams, TrapParams};
use paramtrap::slowflow::{SlowFlowParams, SlowFlowSettings, ThermalSampling};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SlowflowPortrait,
    #[default]
    SlowflowEnsemble,
    Sim1d,
    Sim3d,
    DetuningScan,
    NoisyEnsemble,
    SnrCurve,
    BurstStats,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::SlowflowPortrait,
        ExperimentKind::SlowflowEnsemble,
        ExperimentKind::Sim1d,
        ExperimentKind::Sim3d,
        ExperimentKind::DetuningScan,
        ExperimentKind::NoisyEnsemble,
        ExperimentKind::SnrCurve,
        ExperimentKind::BurstStats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SlowflowPortrait => "slowflow-portrait",
            ExperimentKind::SlowflowEnsemble => "slowflow-ensemble",
            ExperimentKind::Sim1d => "sim1d",
            ExperimentKind::Sim3d => "sim3d",
            ExperimentKind::DetuningScan => "detuning-scan",
            ExperimentKind::NoisyEnsemble => "noisy-ensemble",
            ExperimentKind::SnrCurve => "snr-curve",
            ExperimentKind::BurstStats => "burst-stats",
        }
    }

    /// Whether the results depend on random streams.
    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            ExperimentKind::SlowflowEnsemble
                | ExperimentKind::NoisyEnsemble
                | ExperimentKind::SnrCurve
                | ExperimentKind::BurstStats
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrapSection {
    pub secular_mhz: [f64; 3],
    pub rf_mhz: f64,
    pub phi_rf_rad: f64,
    pub lambda4_khz_per_um2: f64,
    pub lambda6_khz_per_um4: f64,
    pub khz_convention: KhzConvention,
    pub d_eff_mm: f64,
}

impl Default for TrapSection {
    fn default() -> Self {
        TrapSection {
            secular_mhz: [200.0, 173.0, 70.0],
            rf_mhz: 1452.0,
            phi_rf_rad: 0.0,
            lambda4_khz_per_um2: -4.08,
            lambda6_khz_per_um4: 6.78e-6,
            khz_convention: KhzConvention::Angular,
            d_eff_mm: 4.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldSection {
    pub calibration: CalibrationMode,
    /// Share of the dc confinement taken by x; the rest goes to y.
    pub dc_split: f64,
    pub roi_um: [f64; 3],
    /// Optional anharmonic/coupling coefficient table replacing the defaults.
    pub coefficients: Option<PathBuf>,
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection {
            calibration: CalibrationMode::Floquet,
            dc_split: 0.5,
            roi_um: [150.0, 150.0, 25.0],
            coefficients: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResonatorSection {
    pub q: f64,
    pub z0_ohm: f64,
    pub freq_mhz: f64,
    pub temperature_k: f64,
}

impl Default for ResonatorSection {
    fn default() -> Self {
        ResonatorSection {
            q: 1000.0,
            z0_ohm: 300.0,
            freq_mhz: 200.0,
            temperature_k: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveSection {
    /// Defaults to twice the x secular frequency.
    pub freq_mhz: Option<f64>,
    pub epsilon: f64,
    pub ramp_us: f64,
    pub start_us: f64,
    pub phi_d_rad: f64,
}

impl Default for DriveSection {
    fn default() -> Self {
        DriveSection {
            freq_mhz: None,
            epsilon: 0.1,
            ramp_us: 1.0,
            start_us: 0.0,
            phi_d_rad: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorSection {
    pub abstol: f64,
    pub reltol: f64,
    pub sde_abstol: f64,
    pub sde_reltol: f64,
    pub max_step_ns: Option<f64>,
    pub sample_rate_gsps: f64,
    pub sde_substeps: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        IntegratorSection {
            abstol: 1e-10,
            reltol: 1e-10,
            sde_abstol: 1e-9,
            sde_reltol: 1e-9,
            max_step_ns: None,
            sample_rate_gsps: 4.096,
            sde_substeps: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitSection {
    pub temperature_k: f64,
    pub phases_rad: [f64; 3],
}

impl Default for InitSection {
    fn default() -> Self {
        InitSection {
            temperature_k: 4.0,
            phases_rad: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSection {
    pub surface_baseline: f64,
    pub electrode_distance_um: f64,
    pub temperature_k: f64,
    pub detection_mhz: f64,
    pub rf_walk_sigma: f64,
    pub rf_walk_horizon_ms: f64,
    pub surface: bool,
    pub johnson: bool,
    pub rf_walk: bool,
    pub axis_mask: [bool; 3],
    pub circuit_init: CircuitInit,
    pub random_phases: bool,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            surface_baseline: 1e-12,
            electrode_distance_um: 431.8,
            temperature_k: 4.0,
            detection_mhz: 200.0,
            rf_walk_sigma: 1e-3,
            rf_walk_horizon_ms: 10.0,
            surface: true,
            johnson: true,
            rf_walk: true,
            axis_mask: [true, false, false],
            circuit_init: CircuitInit::Thermal,
            random_phases: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlowflowSection {
    pub gamma_per_s: f64,
    pub states: usize,
    pub temperature_k: f64,
    pub sampling: ThermalSampling,
    pub t_end_us: f64,
    pub window_start_us: Option<f64>,
    /// Keep sampled trajectories at this interval.
    pub trajectory_dt_ns: Option<f64>,
    pub abstol: f64,
    pub reltol: f64,
    pub portrait_half_width_um: f64,
    pub portrait_points: usize,
}

impl Default for SlowflowSection {
    fn default() -> Self {
        SlowflowSection {
            gamma_per_s: 0.0,
            states: 1000,
            temperature_k: 4.0,
            sampling: ThermalSampling::Boltzmann,
            t_end_us: 20.0,
            window_start_us: None,
            trajectory_dt_ns: None,
            abstol: 1e-10,
            reltol: 1e-10,
            portrait_half_width_um: 120.0,
            portrait_points: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sim1dSection {
    pub x0_um: f64,
    pub v0_m_per_s: f64,
    pub t_end_us: f64,
    pub gamma_per_s: f64,
}

impl Default for Sim1dSection {
    fn default() -> Self {
        Sim1dSection {
            x0_um: 6.2,
            v0_m_per_s: 0.0,
            t_end_us: 20.0,
            gamma_per_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Ramp,
    Step,
    Off,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Ramp => "ramp",
            ScheduleKind::Step => "step",
            ScheduleKind::Off => "off",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sim3dSection {
    pub t_end_us: f64,
    pub schedules: Vec<ScheduleKind>,
    pub phi_x_rad: Vec<f64>,
    pub analysis_start_us: f64,
    pub probe_mhz: f64,
    pub write_trajectories: bool,
}

impl Default for Sim3dSection {
    fn default() -> Self {
        Sim3dSection {
            t_end_us: 20.0,
            schedules: vec![ScheduleKind::Ramp, ScheduleKind::Step],
            phi_x_rad: vec![0.0, FRAC_PI_2],
            analysis_start_us: 5.0,
            probe_mhz: 200.0,
            write_trajectories: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanSection {
    pub detuning_percent: Vec<f64>,
    pub phi_x_rad: Vec<f64>,
    pub t_end_us: f64,
    pub analysis_start_us: f64,
    pub probe_mhz: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection {
            detuning_percent: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            phi_x_rad: vec![0.0, 0.25 * std::f64::consts::PI, FRAC_PI_2],
            t_end_us: 20.0,
            analysis_start_us: 5.0,
            probe_mhz: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSection {
    pub trajectories: usize,
    pub detection_times_us: Vec<f64>,
    pub probe_mhz: f64,
    /// Write every trajectory record and the ensemble spectrum.
    pub keep_records: bool,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            trajectories: 20,
            detection_times_us: (1..=10).map(|i| 20.0 * i as f64).collect(),
            probe_mhz: 200.0,
            keep_records: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurstSection {
    /// Signal power over the floor, dB.
    pub snr_db: f64,
    pub samples: usize,
    pub series_points: usize,
    pub series_spacing_ms: f64,
    pub histogram_bins: usize,
}

impl Default for BurstSection {
    fn default() -> Self {
        BurstSection {
            snr_db: 3.0,
            samples: 1_000_000,
            series_points: 200,
            series_spacing_ms: 1.0,
            histogram_bins: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub trap: TrapSection,
    pub field: FieldSection,
    pub resonator: ResonatorSection,
    pub drive: DriveSection,
    pub integrator: IntegratorSection,
    pub init: InitSection,
    pub noise: NoiseSection,
    pub slowflow: SlowflowSection,
    pub sim1d: Sim1dSection,
    pub sim3d: Sim3dSection,
    pub scan: ScanSection,
    pub ensemble: EnsembleSection,
    pub burst: BurstSection,
}

/// Recursively merges `top` into `base`; tables merge, everything else is
/// replaced.
pub fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `key.path=value`. The value is read as a TOML value and falls back
/// to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{spec}` is not of the form key=value"))?;
    let path = path.trim();
    if path.is_empty() || path.split('.').any(str::is_empty) {
        bail!("override `{spec}` has an empty key");
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.split('.').collect();
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{spec}`: `{k}` is not a table"))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

pub fn parse_table(text: &str, origin: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| anyhow!("{origin}: {e}"))
}

/// Deserializes a merged table, rejecting every unknown key at once.
pub fn from_table(table: toml::Table) -> Result<Config> {
    let mut unknown = Vec::new();
    let cfg: Config = serde_ignored::deserialize(toml::Value::Table(table), |path| unknown.push(path.to_string()))
        .map_err(|e| anyhow!("configuration: {e}"))?;
    if !unknown.is_empty() {
        bail!("unknown configuration keys: {}", unknown.join(", "));
    }
    Ok(cfg)
}

pub fn load_file(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_table(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

fn check<T>(errors: &mut Vec<String>, key: &str, r: paramtrap::Result<T>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(format!("{key}: {e}"));
            None
        }
    }
}

fn positive(errors: &mut Vec<String>, key: &str, v: f64) {
    if !(v.is_finite() && v > 0.0) {
        errors.push(format!("{key}: must be finite and > 0, got {v}"));
    }
}

fn at_least_one(errors: &mut Vec<String>, key: &str, n: usize) {
    if n == 0 {
        errors.push(format!("{key}: must be at least 1"));
    }
}

impl Config {
    pub fn trap(&self) -> paramtrap::Result<TrapParams> {
        let t = &self.trap;
        let mut trap = TrapParams::from_lambdas(
            t.secular_mhz.map(units::mhz_to_angular),
            units::mhz_to_angular(t.rf_mhz),
            t.lambda4_khz_per_um2,
            t.lambda6_khz_per_um4,
            t.khz_convention,
            t.d_eff_mm * units::MILLIMETRE,
        )?;
        trap.phi_rf = t.phi_rf_rad;
        trap.validate()?;
        Ok(trap)
    }

    pub fn resonator(&self) -> paramtrap::Result<ResonatorParams> {
        let r = &self.resonator;
        ResonatorParams::new(r.q, r.z0_ohm, units::mhz_to_angular(r.freq_mhz), r.temperature_k)
    }

    pub fn omega_d(&self) -> f64 {
        match self.drive.freq_mhz {
            Some(f) => units::mhz_to_angular(f),
            None => 2.0 * units::mhz_to_angular(self.trap.secular_mhz[0]),
        }
    }

    /// The configured drive with its ramp replaced according to `kind`.
    pub fn schedule(&self, kind: ScheduleKind) -> paramtrap::Result<DriveSchedule> {
        let d = &self.drive;
        let (eps, ramp) = match kind {
            ScheduleKind::Ramp => (d.epsilon, d.ramp_us * units::MICROSECOND),
            ScheduleKind::Step => (d.epsilon, 0.0),
            ScheduleKind::Off => (0.0, 0.0),
        };
        DriveSchedule::new(self.omega_d(), d.phi_d_rad, eps, ramp, d.start_us * units::MICROSECOND)
    }

    pub fn calibration(&self) -> paramtrap::Result<CalibrationSpec> {
        let trap = self.trap()?;
        Ok(CalibrationSpec {
            mode: self.field.calibration,
            dc_split: self.field.dc_split,
            ..CalibrationSpec::from_trap(&trap)
        })
    }

    pub fn roi(&self) -> Roi {
        Roi {
            half_width: self.field.roi_um.map(|v| v * units::MICRON),
        }
    }

    fn coefficient_text(&self) -> Result<Option<String>> {
        match &self.field.coefficients {
            Some(p) => Ok(Some(
                std::fs::read_to_string(p).with_context(|| format!("field.coefficients: reading {}", p.display()))?,
            )),
            None => Ok(None),
        }
    }

    pub fn field(&self) -> Result<FieldModel> {
        let trap = self.trap()?;
        let mut f = FieldModel::for_trap(&trap, self.field.calibration, self.field.dc_split)?.with_roi(self.roi());
        if let Some(text) = self.coefficient_text()? {
            f = f.load_coefficients(&text)?;
        }
        Ok(f)
    }

    pub fn ode_settings(&self) -> IntegratorSettings {
        let i = &self.integrator;
        IntegratorSettings {
            abstol: i.abstol,
            reltol: i.reltol,
            max_step: i.max_step_ns.map(|v| v * units::NANOSECOND),
            mode: IntegratorMode::Ode,
            sample_rate: i.sample_rate_gsps * 1e9,
            sde_substeps: i.sde_substeps,
        }
    }

    pub fn sde_settings(&self) -> IntegratorSettings {
        IntegratorSettings {
            abstol: self.integrator.sde_abstol,
            reltol: self.integrator.sde_reltol,
            mode: IntegratorMode::Sde,
            ..self.ode_settings()
        }
    }

    pub fn init(&self) -> InitCondition {
        InitCondition {
            temperature: self.init.temperature_k,
            phases: self.init.phases_rad,
            phi_rf: None,
            circuit: [0.0; 2],
        }
    }

    pub fn noise(&self) -> NoiseConfig {
        let n = &self.noise;
        NoiseConfig {
            surface_baseline: n.surface_baseline,
            electrode_distance: n.electrode_distance_um * units::MICRON,
            temperature: n.temperature_k,
            detection_omega: units::mhz_to_angular(n.detection_mhz),
            rf_walk_sigma: n.rf_walk_sigma,
            rf_walk_horizon: n.rf_walk_horizon_ms * units::MILLISECOND,
            surface: n.surface,
            johnson: n.johnson,
            rf_walk: n.rf_walk,
            axis_mask: n.axis_mask,
            circuit_init: n.circuit_init,
            random_phases: n.random_phases,
            seed: self.seed,
            ..NoiseConfig::default()
        }
    }

    pub fn slowflow_params(&self, kind: ScheduleKind) -> paramtrap::Result<SlowFlowParams> {
        let trap = self.trap()?;
        Ok(SlowFlowParams {
            gamma: self.slowflow.gamma_per_s,
            schedule: self.schedule(kind)?,
            omega_x: trap.secular[0],
            lambda4: trap.lambda4(),
            lambda6: trap.lambda6(),
        })
    }

    pub fn slowflow_settings(&self) -> SlowFlowSettings {
        SlowFlowSettings {
            abstol: self.slowflow.abstol,
            reltol: self.slowflow.reltol,
            ..SlowFlowSettings::default()
        }
    }

    pub fn detuning_setup(&self) -> Result<DetuningSetup> {
        let trap = self.trap()?;
        let field = self.field()?;
        Ok(DetuningSetup {
            calibration: self.calibration()?,
            d_eff: trap.d_eff,
            anharmonic: field.anharmonic,
            coupling: Some(field.coupling),
            roi: self.roi(),
            resonator: self.resonator()?,
            init: self.init(),
            schedule: self.schedule(ScheduleKind::Ramp)?,
            t_end: self.scan.t_end_us * units::MICROSECOND,
            settings: self.ode_settings(),
            analysis_start: self.scan.analysis_start_us * units::MICROSECOND,
            probe_frequency: self.scan.probe_mhz * 1e6,
        })
    }

    /// Schema and physics checks without running anything. Every offending
    /// key is reported.
    pub fn validate(&self) -> ValidationReport {
        let mut errors = Vec::new();
        let mut warnings = Vec::new();
        let trap = check(&mut errors, "trap", self.trap());
        check(&mut errors, "resonator", self.resonator());
        for kind in [ScheduleKind::Ramp, ScheduleKind::Step] {
            if check(&mut errors, "drive", self.schedule(kind)).is_none() {
                break;
            }
        }
        if let Some(f) = self.drive.freq_mhz {
            positive(&mut errors, "drive.freq_mhz", f);
        }
        if !(0.0..=1.0).contains(&self.field.dc_split) {
            errors.push(format!("field.dc_split: must lie in [0, 1], got {}", self.field.dc_split));
        }
        for (k, v) in ["x", "y", "z"].iter().zip(self.field.roi_um) {
            positive(&mut errors, &format!("field.roi_um.{k}"), v);
        }
        check(&mut errors, "integrator", self.ode_settings().validate());
        check(&mut errors, "integrator (sde)", self.sde_settings().validate());
        positive(&mut errors, "integrator.sample_rate_gsps", self.integrator.sample_rate_gsps);
        check(&mut errors, "noise", self.noise().validate());
        if self.init.temperature_k < 0.0 || !self.init.temperature_k.is_finite() {
            errors.push(format!("init.temperature_k: must be >= 0, got {}", self.init.temperature_k));
        }
        if let Some(trap) = &trap {
            if trap.secular[1] == trap.secular[0] {
                warnings.push(
                    "trap.secular_mhz: ω_y equals ω_x; the y frequency is normally detuned from ω_x so that \
                     the y-component of the parametric drive does not excite y motion"
                        .into(),
                );
            }
            let nyquist = 0.5 * self.integrator.sample_rate_gsps * 1e9;
            let top = (trap.omega_rf + trap.secular[0]) / std::f64::consts::TAU;
            if nyquist < top {
                warnings.push(format!(
                    "integrator.sample_rate_gsps: Nyquist frequency {nyquist:.4e} Hz is below the upper micromotion sideband {top:.4e} Hz"
                ));
            }
            if errors.is_empty() {
                if let Err(e) = self.field() {
                    errors.push(format!("field: {e:#}"));
                }
            }
        }
        self.validate_experiment(&mut errors);
        ValidationReport { errors, warnings }
    }

    fn validate_experiment(&self, errors: &mut Vec<String>) {
        match self.experiment {
            ExperimentKind::SlowflowPortrait => {
                positive(errors, "slowflow.portrait_half_width_um", self.slowflow.portrait_half_width_um);
                if self.slowflow.portrait_points < 2 {
                    errors.push("slowflow.portrait_points: must be at least 2".into());
                }
            }
            ExperimentKind::SlowflowEnsemble => {
                at_least_one(errors, "slowflow.states", self.slowflow.states);
                positive(errors, "slowflow.t_end_us", self.slowflow.t_end_us);
                positive(errors, "slowflow.temperature_k", self.slowflow.temperature_k);
                if let Some(w) = self.slowflow.window_start_us {
                    if !(w >= 0.0 && w < self.slowflow.t_end_us) {
                        errors.push(format!("slowflow.window_start_us: must lie in [0, t_end_us), got {w}"));
                    }
                }
                if let Some(dt) = self.slowflow.trajectory_dt_ns {
                    positive(errors, "slowflow.trajectory_dt_ns", dt);
                }
            }
            ExperimentKind::Sim1d => {
                positive(errors, "sim1d.t_end_us", self.sim1d.t_end_us);
                if self.sim1d.gamma_per_s < 0.0 {
                    errors.push("sim1d.gamma_per_s: must be >= 0".into());
                }
            }
            ExperimentKind::Sim3d => {
                positive(errors, "sim3d.t_end_us", self.sim3d.t_end_us);
                at_least_one(errors, "sim3d.schedules", self.sim3d.schedules.len());
                at_least_one(errors, "sim3d.phi_x_rad", self.sim3d.phi_x_rad.len());
                if !(self.sim3d.analysis_start_us >= 0.0 && self.sim3d.analysis_start_us < self.sim3d.t_end_us) {
                    errors.push("sim3d.analysis_start_us: must lie in [0, t_end_us)".into());
                }
            }
            ExperimentKind::DetuningScan => {
                at_least_one(errors, "scan.detuning_percent", self.scan.detuning_percent.len());
                at_least_one(errors, "scan.phi_x_rad", self.scan.phi_x_rad.len());
                positive(errors, "scan.t_end_us", self.scan.t_end_us);
                if !(self.scan.analysis_start_us >= 0.0 && self.scan.analysis_start_us < self.scan.t_end_us) {
                    errors.push("scan.analysis_start_us: must lie in [0, t_end_us)".into());
                }
                if self.scan.detuning_percent.iter().any(|d| !(*d > -100.0)) {
                    errors.push("scan.detuning_percent: values must exceed -100".into());
                }
            }
            ExperimentKind::NoisyEnsemble | ExperimentKind::SnrCurve => {
                at_least_one(errors, "ensemble.trajectories", self.ensemble.trajectories);
                at_least_one(errors, "ensemble.detection_times_us", self.ensemble.detection_times_us.len());
                for t in &self.ensemble.detection_times_us {
                    positive(errors, "ensemble.detection_times_us", *t);
                }
                if self.experiment == ExperimentKind::SnrCurve && self.ensemble.detection_times_us.len() < 2 {
                    errors.push("ensemble.detection_times_us: an SNR curve needs at least two detection times".into());
                }
            }
            ExperimentKind::BurstStats => {
                at_least_one(errors, "burst.samples", self.burst.samples);
                at_least_one(errors, "burst.series_points", self.burst.series_points);
                at_least_one(errors, "burst.histogram_bins", self.burst.histogram_bins);
                positive(errors, "burst.series_spacing_ms", self.burst.series_spacing_ms);
                if !self.burst.snr_db.is_finite() {
                    errors.push("burst.snr_db: must be finite".into());
                }
            }
        }
    }
}
