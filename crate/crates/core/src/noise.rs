//! Stochastic sources and seeded random streams.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::dynamics::{CoupledSystem, Forcing, InitCondition, IntegratorSettings, TrajectoryRecord};
use crate::error::{require_non_negative, require_positive, Result};
use crate::field::FieldModel;
use crate::integrate::rk4_step;
use crate::params::{DriveSchedule, PhysicalConstants, ResonatorParams};
use crate::spectral::{BinPower, PrefixBins};

/// Independent random stream identified by `(seed, stream)`. Identical pairs
/// give identical sequences; different stream ids never overlap.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self, mean: f64, std_dev: f64) -> f64 {
        mean + std_dev * self.standard_normal()
    }

    pub fn exponential(&mut self) -> f64 {
        rand_distr::Exp1.sample(&mut self.rng)
    }
}

/// Noise source kinds, used to derive per-source stream ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    SurfaceField = 0,
    JohnsonCurrent = 1,
    RfWalk = 2,
    /// Initial-condition sampling.
    Initial = 3,
}

impl Source {
    pub const ALL: [Source; 4] = [
        Source::SurfaceField,
        Source::JohnsonCurrent,
        Source::RfWalk,
        Source::Initial,
    ];
}

/// Stream id of `source` for trajectory `trajectory`.
pub fn stream_id(trajectory: u64, source: Source) -> u64 {
    trajectory * Source::ALL.len() as u64 + source as u64
}

/// Settings of the three stochastic sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Surface field PSD at the reference point, V²m⁻²Hz⁻¹.
    pub surface_baseline: f64,
    pub reference_omega: f64,
    pub reference_distance: f64,
    pub reference_temperature: f64,
    pub electrode_distance: f64,
    pub temperature: f64,
    /// Frequency at which the surface PSD is evaluated and treated as white.
    pub detection_omega: f64,
    /// Standard deviation of the relative rf amplitude reached after
    /// `rf_walk_horizon`.
    pub rf_walk_sigma: f64,
    pub rf_walk_horizon: f64,
    pub surface: bool,
    pub johnson: bool,
    pub rf_walk: bool,
    /// Axes receiving surface field noise.
    pub axis_mask: [bool; 3],
    pub circuit_init: CircuitInit,
    /// Replaces the initial motional phases with uniform draws.
    pub random_phases: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircuitInit {
    #[default]
    Rest,
    /// Current and voltage drawn from the equilibrium distribution at the
    /// resonator temperature.
    Thermal,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            surface_baseline: 1e-12,
            reference_omega: 2.0 * PI * 1e6,
            reference_distance: 100e-6,
            reference_temperature: 4.0,
            electrode_distance: 431.8e-6,
            temperature: 4.0,
            detection_omega: 2.0 * PI * 200e6,
            rf_walk_sigma: 1e-3,
            rf_walk_horizon: 10e-3,
            surface: true,
            johnson: true,
            rf_walk: true,
            axis_mask: [true, false, false],
            circuit_init: CircuitInit::Rest,
            random_phases: false,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    /// All sources off.
    pub fn quiet() -> Self {
        NoiseConfig {
            surface: false,
            johnson: false,
            rf_walk: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("NoiseConfig.surface_baseline", self.surface_baseline),
            ("NoiseConfig.temperature", self.temperature),
            ("NoiseConfig.rf_walk_sigma", self.rf_walk_sigma),
        ] {
            require_non_negative(name, v)?;
        }
        for (name, v) in [
            ("NoiseConfig.reference_omega", self.reference_omega),
            ("NoiseConfig.reference_distance", self.reference_distance),
            ("NoiseConfig.reference_temperature", self.reference_temperature),
            ("NoiseConfig.electrode_distance", self.electrode_distance),
            ("NoiseConfig.detection_omega", self.detection_omega),
            ("NoiseConfig.rf_walk_horizon", self.rf_walk_horizon),
        ] {
            require_positive(name, v)?;
        }
        Ok(())
    }

    /// Surface field PSD at the detection frequency.
    pub fn surface_psd(&self) -> Result<f64> {
        surface_noise_psd(self.detection_omega, self.electrode_distance, self.temperature, self)
    }

    /// Diffusion constant of the rf amplitude walk, s⁻¹.
    pub fn rf_walk_diffusion(&self) -> f64 {
        self.rf_walk_sigma * self.rf_walk_sigma / self.rf_walk_horizon
    }
}

/// `S_E = S_0·(ω_ref/ω)·(d_ref/d)²·(T/T_ref)^0.5`.
pub fn surface_noise_psd(omega: f64, d: f64, temperature: f64, config: &NoiseConfig) -> Result<f64> {
    require_positive("omega", omega)?;
    require_positive("d", d)?;
    require_positive("temperature", temperature)?;
    Ok(config.surface_baseline
        * (config.reference_omega / omega)
        * (config.reference_distance / d).powi(2)
        * (temperature / config.reference_temperature).sqrt())
}

fn require_dt(dt: f64) -> Result<()> {
    require_positive("dt", dt)
}

/// Surface field held over a step `dt`: `N(0, S_E/(2dt))`, V/m.
pub fn surface_field_increment(config: &NoiseConfig, dt: f64, stream: &mut RngStream) -> Result<f64> {
    require_dt(dt)?;
    let s = config.surface_psd()?;
    Ok(if s == 0.0 { 0.0 } else { (s / (2.0 * dt)).sqrt() * stream.standard_normal() })
}

/// Johnson current held over a step `dt`: `N(0, 2k_BT/(R·dt))`, A.
pub fn johnson_current_increment(
    resonator: &ResonatorParams,
    constants: &PhysicalConstants,
    dt: f64,
    stream: &mut RngStream,
) -> Result<f64> {
    require_dt(dt)?;
    let var = 2.0 * constants.boltzmann * resonator.temperature / (resonator.r * dt);
    Ok(if var == 0.0 { 0.0 } else { var.sqrt() * stream.standard_normal() })
}

/// One step of the rf amplitude walk, `R_U + N(0, D·dt)`.
pub fn rf_walk_step(r_u: f64, dt: f64, config: &NoiseConfig, stream: &mut RngStream) -> Result<f64> {
    require_dt(dt)?;
    Ok(r_u + (config.rf_walk_diffusion() * dt).sqrt() * stream.standard_normal())
}

/// Equilibrium `(I, İ)` of the resonator at its temperature: `I ~ N(0, k_BT/L)`
/// and `V = Lİ ~ N(0, k_BT/C)`.
pub fn thermal_circuit_state(
    resonator: &ResonatorParams,
    constants: &PhysicalConstants,
    stream: &mut RngStream,
) -> [f64; 2] {
    let kt = constants.boltzmann * resonator.temperature;
    let i = (kt / resonator.l).sqrt() * stream.standard_normal();
    let v = (kt / resonator.c).sqrt() * stream.standard_normal();
    [i, v / resonator.l]
}

/// Per-trajectory streams, one per source.
#[derive(Debug, Clone)]
pub struct NoiseStreams {
    pub surface: RngStream,
    pub johnson: RngStream,
    pub rf_walk: RngStream,
    pub initial: RngStream,
}

impl NoiseStreams {
    pub fn new(seed: u64, trajectory: u64) -> Self {
        NoiseStreams {
            surface: RngStream::new(seed, stream_id(trajectory, Source::SurfaceField)),
            johnson: RngStream::new(seed, stream_id(trajectory, Source::JohnsonCurrent)),
            rf_walk: RngStream::new(seed, stream_id(trajectory, Source::RfWalk)),
            initial: RngStream::new(seed, stream_id(trajectory, Source::Initial)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeOutcome {
    pub final_state: [f64; 8],
    pub final_rf_scale: f64,
    pub steps: u64,
}

/// Fixed-step stochastic integration of the coupled electron/resonator
/// system. Noise is held constant over each step of `dt_out/sde_substeps`
/// and the step is advanced with classical RK4; `R_U` is updated after
/// every step. Every output sample `(t, state)` goes to `sink`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_3d_sde<F>(
    init: &InitCondition,
    field: &FieldModel,
    resonator: &ResonatorParams,
    schedule: &DriveSchedule,
    t_end: f64,
    settings: &IntegratorSettings,
    noise: &NoiseConfig,
    trajectory: u64,
    mut sink: F,
) -> Result<SdeOutcome>
where
    F: FnMut(f64, &[f64; 8]) -> Result<()>,
{
    settings.validate()?;
    schedule.validate()?;
    noise.validate()?;
    require_positive("t_end", t_end)?;
    let mut field = *field;
    if let Some(p) = init.phi_rf {
        field.phi_rf = p;
    }
    let sys = CoupledSystem::new(&field, resonator, schedule);
    let constants = field.constants;
    let mut streams = NoiseStreams::new(noise.seed, trajectory);
    let mut init = *init;
    if noise.random_phases {
        for p in init.phases.iter_mut() {
            *p = 2.0 * PI * streams.initial.uniform();
        }
    }
    let mut y = init.state(&field)?;
    if noise.circuit_init == CircuitInit::Thermal {
        let c = thermal_circuit_state(resonator, &constants, &mut streams.initial);
        y[6] += c[0];
        y[7] += c[1];
    }
    sys.check_roi(0.0, &y)?;
    let dt_out = settings.dt();
    let h = dt_out / settings.sde_substeps as f64;
    let n_out = settings.sample_count(t_end);
    let e_sd = if noise.surface {
        (noise.surface_psd()? / (2.0 * h)).sqrt()
    } else {
        0.0
    };
    let i_sd = if noise.johnson {
        (2.0 * constants.boltzmann * resonator.temperature / (resonator.r * h)).sqrt()
    } else {
        0.0
    };
    let walk_sd = if noise.rf_walk {
        (noise.rf_walk_diffusion() * h).sqrt()
    } else {
        0.0
    };
    let mut forcing = Forcing::NONE;
    let mut steps = 0u64;
    for n in 0..n_out {
        let t_n = n as f64 * dt_out;
        sink(t_n, &y)?;
        for s in 0..settings.sde_substeps {
            let t = t_n + s as f64 * h;
            for k in 0..3 {
                forcing.field_noise[k] = if noise.surface && noise.axis_mask[k] {
                    e_sd * streams.surface.standard_normal()
                } else {
                    0.0
                };
            }
            forcing.current_noise = if noise.johnson {
                i_sd * streams.johnson.standard_normal()
            } else {
                0.0
            };
            let rhs = |t: f64, y: &[f64; 8], dy: &mut [f64; 8]| sys.rhs(t, y, dy, &forcing);
            rk4_step(&rhs, t, &mut y, h);
            if noise.rf_walk {
                forcing.rf_scale += walk_sd * streams.rf_walk.standard_normal();
            }
            steps += 1;
            sys.check_roi(t + h, &y)?;
        }
    }
    Ok(SdeOutcome {
        final_state: y,
        final_rf_scale: forcing.rf_scale,
        steps,
    })
}

/// Ensemble of stochastic 3D runs sharing one seed, trajectory `j` using the
/// streams of index `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyEnsembleSpec {
    pub init: InitCondition,
    pub field: FieldModel,
    pub resonator: ResonatorParams,
    pub schedule: DriveSchedule,
    pub settings: IntegratorSettings,
    pub noise: NoiseConfig,
    pub trajectories: usize,
    /// Record lengths at which the probe bin is evaluated; the longest one
    /// sets the integration time.
    pub detection_times: Vec<f64>,
    pub probe_frequency: f64,
    pub keep_records: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyTrajectory {
    pub index: usize,
    /// Probe-bin result per detection time.
    pub bins: Vec<BinPower>,
    pub outcome: SdeOutcome,
    pub record: Option<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyEnsemble {
    pub members: Vec<NoisyTrajectory>,
    /// `(index, message)` of runs that stopped with an error.
    pub failures: Vec<(usize, String)>,
}

impl NoisyEnsemble {
    /// `powers[j][i]`: probe-bin PSD of member `j` at detection time `i`.
    pub fn powers(&self) -> Vec<Vec<f64>> {
        self.members.iter().map(|m| m.bins.iter().map(|b| b.psd).collect()).collect()
    }

    pub fn bin_frequencies(&self) -> Vec<f64> {
        self.members
            .first()
            .map(|m| m.bins.iter().map(|b| b.frequency).collect())
            .unwrap_or_default()
    }
}

/// Runs every trajectory in parallel; results keep trajectory order.
pub fn noisy_ensemble(spec: &NoisyEnsembleSpec) -> Result<NoisyEnsemble> {
    if spec.trajectories == 0 {
        return Err(crate::Error::InvalidParameter {
            name: "trajectories",
            reason: "must be at least 1".into(),
        });
    }
    if spec.detection_times.is_empty() {
        return Err(crate::Error::InvalidParameter {
            name: "detection_times",
            reason: "at least one detection time is required".into(),
        });
    }
    for &t in &spec.detection_times {
        require_positive("detection_times", t)?;
    }
    let fs = spec.settings.sample_rate;
    let counts: Vec<usize> = spec.detection_times.iter().map(|t| (t * fs).round() as usize).collect();
    let n_max = *counts.iter().max().expect("non-empty");
    let t_end = n_max as f64 / fs;
    PrefixBins::new(fs, spec.probe_frequency, &counts)?;
    let l = spec.resonator.l;
    let results: Vec<Result<NoisyTrajectory>> = (0..spec.trajectories)
        .into_par_iter()
        .map(|j| {
            let mut bins = PrefixBins::new(fs, spec.probe_frequency, &counts)?;
            let mut record = spec.keep_records.then(|| TrajectoryRecord::empty(fs, n_max));
            if let Some(r) = record.as_mut() {
                r.seed = Some(spec.noise.seed);
            }
            let outcome = integrate_3d_sde(
                &spec.init,
                &spec.field,
                &spec.resonator,
                &spec.schedule,
                t_end,
                &spec.settings,
                &spec.noise,
                j as u64,
                |t, y| {
                    if bins.seen() < n_max {
                        bins.push(l * y[7]);
                    }
                    if let Some(r) = record.as_mut() {
                        r.push(t, y, l);
                    }
                    Ok(())
                },
            )?;
            let bins = bins
                .powers()
                .into_iter()
                .map(|b| b.ok_or_else(|| crate::Error::Spectrum("record shorter than a detection time".into())))
                .collect::<Result<Vec<_>>>()?;
            Ok(NoisyTrajectory {
                index: j,
                bins,
                outcome,
                record,
            })
        })
        .collect();
    let mut members = Vec::new();
    let mut failures = Vec::new();
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok(m) => members.push(m),
            Err(e) => failures.push((j, e.to_string())),
        }
    }
    Ok(NoisyEnsemble { members, failures })
}

/// Fixed-step deterministic integration with the SDE scheme and every source
/// off; the reference for noise-free comparisons.
pub fn integrate_3d_fixed_step<F>(
    init: &InitCondition,
    field: &FieldModel,
    resonator: &ResonatorParams,
    schedule: &DriveSchedule,
    t_end: f64,
    settings: &IntegratorSettings,
    sink: F,
) -> Result<SdeOutcome>
where
    F: FnMut(f64, &[f64; 8]) -> Result<()>,
{
    integrate_3d_sde(init, field, resonator, schedule, t_end, settings, &NoiseConfig::quiet(), 0, sink)
}

/// Voltage `V = Lİ` across the bare resonator driven only by its Johnson
/// current, sampled at `sample_rate`. Each output interval is split into
/// `substeps` RK4 steps with the current held constant over a step. The
/// circuit starts from its thermal equilibrium.
pub fn johnson_voltage_record(
    resonator: &ResonatorParams,
    constants: &PhysicalConstants,
    sample_rate: f64,
    count: usize,
    substeps: usize,
    seed: u64,
    trajectory: u64,
) -> Result<Vec<f64>> {
    require_positive("sample_rate", sample_rate)?;
    if substeps == 0 {
        return Err(crate::Error::InvalidParameter {
            name: "substeps",
            reason: "must be at least 1".into(),
        });
    }
    let mut streams = NoiseStreams::new(seed, trajectory);
    let h = 1.0 / (sample_rate * substeps as f64);
    let i_sd = (2.0 * constants.boltzmann * resonator.temperature / (resonator.r * h)).sqrt();
    let res = *resonator;
    let mut y = thermal_circuit_state(resonator, constants, &mut streams.initial);
    let mut out = Vec::with_capacity(count);
    for n in 0..count {
        out.push(res.l * y[1]);
        for s in 0..substeps {
            let i_n = i_sd * streams.johnson.standard_normal();
            let rhs = |_: f64, y: &[f64; 2], dy: &mut [f64; 2]| {
                dy[0] = y[1];
                dy[1] = (-y[1] / res.r * res.l - y[0] + i_n) / (res.l * res.c);
            };
            rk4_step(&rhs, (n * substeps + s) as f64 * h, &mut y, h);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::CalibrationMode;
    use crate::params::TrapParams;
    use approx::assert_relative_eq;

    fn variance(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
    }

    #[test]
    fn surface_psd_examples() {
        let c = NoiseConfig::default();
        let at_ref = surface_noise_psd(c.reference_omega, c.reference_distance, c.reference_temperature, &c).unwrap();
        assert_relative_eq!(at_ref, 1e-12, max_relative = 1e-14);
        let sys = c.surface_psd().unwrap();
        assert_relative_eq!(sys, 1e-12 / 200.0 * (100.0f64 / 431.8).powi(2), max_relative = 1e-12);
        assert!(sys > 2.6e-16 && sys < 2.8e-16);
        let far = surface_noise_psd(c.detection_omega, 2.0 * c.electrode_distance, 4.0, &c).unwrap();
        assert_relative_eq!(far, sys / 4.0, max_relative = 1e-12);
        assert!(surface_noise_psd(0.0, 1.0, 1.0, &c).is_err());
    }

    #[test]
    fn increment_variances() {
        let c = NoiseConfig::default();
        let res = ResonatorParams::default();
        let k = PhysicalConstants::CODATA;
        let dt = 1e-10;
        let mut s = RngStream::new(1, 0);
        let e: Vec<f64> = (0..1_000_000).map(|_| surface_field_increment(&c, dt, &mut s).unwrap()).collect();
        assert_relative_eq!(variance(&e), c.surface_psd().unwrap() / (2.0 * dt), max_relative = 0.01);
        let mut s = RngStream::new(1, 1);
        let i: Vec<f64> = (0..1_000_000)
            .map(|_| johnson_current_increment(&res, &k, dt, &mut s).unwrap())
            .collect();
        assert_relative_eq!(variance(&i), 2.0 * k.boltzmann * 4.0 / (res.r * dt), max_relative = 0.01);

        let zero = NoiseConfig {
            surface_baseline: 0.0,
            ..c
        };
        assert_eq!(surface_field_increment(&zero, dt, &mut s).unwrap(), 0.0);
        let cold = ResonatorParams::new(1000.0, 300.0, res.omega_res, 0.0).unwrap();
        assert_eq!(johnson_current_increment(&cold, &k, dt, &mut s).unwrap(), 0.0);
        assert!(surface_field_increment(&c, 0.0, &mut s).is_err());
    }

    #[test]
    fn johnson_record_has_thermal_variance() {
        // Equipartition: <V²> = k_BT/C.
        let res = ResonatorParams::default();
        let k = PhysicalConstants::CODATA;
        let v = johnson_voltage_record(&res, &k, 1.024e9, 1 << 20, 10, 3, 0).unwrap();
        let expect = k.boltzmann * res.temperature / res.c;
        assert_relative_eq!(variance(&v), expect, max_relative = 0.1);
        assert_eq!(v, johnson_voltage_record(&res, &k, 1.024e9, 1 << 20, 10, 3, 0).unwrap());
        assert!(johnson_voltage_record(&res, &k, 1.024e9, 10, 0, 3, 0).is_err());
    }

    #[test]
    fn injected_surface_noise_is_white_over_the_band() {
        let c = NoiseConfig::default();
        let s_e = c.surface_psd().unwrap();
        let settings = IntegratorSettings::sde();
        let h = settings.dt() / settings.sde_substeps as f64;
        let mut st = NoiseStreams::new(4, 0);
        let e: Vec<f64> = (0..1 << 22)
            .map(|_| surface_field_increment(&c, h, &mut st.surface).unwrap())
            .collect();
        let sp = crate::spectral::psd(&e, 1.0 / h).unwrap();
        for band in 0..5 {
            let lo = 1e6 + band as f64 * 200e6;
            let m = sp.band_mean(lo, lo + 200e6);
            assert!((m / s_e - 1.0).abs() < 0.03, "{lo}: {}", m / s_e);
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = {
            let mut s = RngStream::new(5, 3);
            (0..100).map(|_| s.standard_normal()).collect()
        };
        let b: Vec<f64> = {
            let mut s = RngStream::new(5, 3);
            (0..100).map(|_| s.standard_normal()).collect()
        };
        assert_eq!(a, b);
        let mut s = RngStream::new(5, 4);
        let c: Vec<f64> = (0..100).map(|_| s.standard_normal()).collect();
        assert_ne!(a, c);
        let ids: std::collections::HashSet<u64> = (0..200u64)
            .flat_map(|t| Source::ALL.iter().map(move |&s| stream_id(t, s)))
            .collect();
        assert_eq!(ids.len(), 800);
    }

    #[test]
    fn sources_are_uncorrelated() {
        let n = 200_000;
        let mut st = NoiseStreams::new(17, 0);
        let a: Vec<f64> = (0..n).map(|_| st.surface.standard_normal()).collect();
        let b: Vec<f64> = (0..n).map(|_| st.johnson.standard_normal()).collect();
        let c: Vec<f64> = (0..n).map(|_| st.rf_walk.standard_normal()).collect();
        let corr = |x: &[f64], y: &[f64]| {
            let (mx, my) = (x.iter().sum::<f64>() / n as f64, y.iter().sum::<f64>() / n as f64);
            let cov: f64 = x.iter().zip(y).map(|(p, q)| (p - mx) * (q - my)).sum();
            cov / (variance(x) * variance(y)).sqrt() / (n - 1) as f64
        };
        let bound = 5.0 / (n as f64).sqrt();
        assert!(corr(&a, &b).abs() < bound);
        assert!(corr(&a, &c).abs() < bound);
        assert!(corr(&b, &c).abs() < bound);
    }

    #[test]
    fn rf_walk_std_scales_with_sqrt_time() {
        let c = NoiseConfig::default();
        assert_relative_eq!(c.rf_walk_diffusion(), 1e-4, max_relative = 1e-12);
        let dt = 50e-6;
        let walks = 10_000;
        let mut at_quarter = Vec::with_capacity(walks);
        let mut at_end = Vec::with_capacity(walks);
        for w in 0..walks {
            let mut s = RngStream::new(9, stream_id(w as u64, Source::RfWalk));
            let mut r = 1.0;
            for step in 1..=200 {
                r = rf_walk_step(r, dt, &c, &mut s).unwrap();
                if step == 50 {
                    at_quarter.push(r);
                }
            }
            at_end.push(r);
        }
        assert_relative_eq!(variance(&at_end).sqrt(), 1e-3, max_relative = 0.05);
        assert_relative_eq!(variance(&at_quarter).sqrt(), 5e-4, max_relative = 0.05);
        let mean = at_end.iter().sum::<f64>() / walks as f64;
        assert!((mean - 1.0).abs() < 4.0 * 1e-3 / (walks as f64).sqrt());
    }

    #[test]
    fn sde_is_bit_reproducible_and_seed_sensitive() {
        let trap = TrapParams::default();
        let f = FieldModel::for_trap(&trap, CalibrationMode::Floquet, 0.5).unwrap();
        let res = ResonatorParams::default();
        let sched = DriveSchedule::ramped(2.0 * trap.secular[0], 0.1, 1e-6);
        let set = IntegratorSettings::sde();
        let run = |seed: u64| {
            let cfg = NoiseConfig {
                seed,
                circuit_init: CircuitInit::Thermal,
                ..Default::default()
            };
            let mut v = Vec::new();
            integrate_3d_sde(&InitCondition::default(), &f, &res, &sched, 0.2e-6, &set, &cfg, 3, |_, y| {
                v.push(y[7]);
                Ok(())
            })
            .unwrap();
            v
        };
        let a = run(1);
        assert_eq!(a, run(1));
        assert_ne!(a, run(2));
    }

    fn small_ensemble(noise: NoiseConfig, trajectories: usize) -> NoisyEnsembleSpec {
        let trap = TrapParams::default();
        NoisyEnsembleSpec {
            init: InitCondition::default(),
            field: FieldModel::for_trap(&trap, CalibrationMode::Floquet, 0.5).unwrap(),
            resonator: ResonatorParams::default(),
            schedule: DriveSchedule::ramped(2.0 * trap.secular[0], 0.1, 0.2e-6),
            settings: IntegratorSettings::sde(),
            noise,
            trajectories,
            detection_times: vec![0.25e-6, 0.5e-6],
            probe_frequency: 200e6,
            keep_records: true,
        }
    }

    #[test]
    fn noisy_ensemble_is_ordered_and_reproducible() {
        let noise = NoiseConfig {
            seed: 11,
            random_phases: true,
            circuit_init: CircuitInit::Thermal,
            ..Default::default()
        };
        let spec = small_ensemble(noise, 3);
        let a = noisy_ensemble(&spec).unwrap();
        assert!(a.failures.is_empty());
        assert_eq!(a.members.iter().map(|m| m.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(a, noisy_ensemble(&spec).unwrap());
        assert_ne!(a.members[0].bins, a.members[1].bins);
        // Prefix powers agree with a direct evaluation on the kept record.
        let rec = a.members[1].record.as_ref().unwrap();
        let v = rec.column("V").unwrap();
        let n = (0.25e-6 * spec.settings.sample_rate) as usize;
        let direct = crate::spectral::bin_power(&v[..n], spec.settings.sample_rate, 200e6).unwrap();
        assert_relative_eq!(direct.psd, a.members[1].bins[0].psd, max_relative = 1e-9);

        let quiet = noisy_ensemble(&small_ensemble(NoiseConfig::quiet(), 2)).unwrap();
        assert_eq!(quiet.members[0].bins, quiet.members[1].bins);
        assert!(noisy_ensemble(&small_ensemble(NoiseConfig::quiet(), 0)).is_err());
    }

    #[test]
    fn quiet_fixed_step_converges_to_adaptive() {
        let trap = TrapParams::default();
        let f = FieldModel::for_trap(&trap, CalibrationMode::Floquet, 0.5).unwrap();
        let res = ResonatorParams::default();
        let sched = DriveSchedule::ramped(2.0 * trap.secular[0], 0.1, 1e-6);
        let adaptive =
            crate::dynamics::integrate_3d(&InitCondition::default(), &f, &res, &sched, 1e-6, &IntegratorSettings::default())
                .unwrap();
        let ax = adaptive.record.column("x").unwrap();
        let peak = ax.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let error = |substeps: usize| {
            let set = IntegratorSettings {
                sde_substeps: substeps,
                ..Default::default()
            };
            let mut fixed = Vec::new();
            integrate_3d_fixed_step(&InitCondition::default(), &f, &res, &sched, 1e-6, &set, |_, y| {
                fixed.push(y[0]);
                Ok(())
            })
            .unwrap();
            assert_eq!(ax.len(), fixed.len());
            ax.iter().zip(&fixed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (error(8), error(16));
        assert!(coarse < 1e-2 * peak, "{coarse} vs {peak}");
        assert!(fine < 1e-3 * peak, "{fine} vs {peak}");
        assert!(coarse / fine > 10.0, "{coarse} {fine}");
    }
}
