//! Experiment runners. Each writes its artifacts into the output directory
//! and returns a machine-readable summary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use paramtrap::dynamics::{detuning_scan, integrate_1d, integrate_3d, probe_amplitudes, InitCondition, OneDParams};
use paramtrap::noise::{noisy_ensemble, NoisyEnsembleSpec, RngStream};
use paramtrap::params::{units, PhysicalConstants};
use paramtrap::slowflow::{
    classify_basin, evolve_ensemble, fixed_points, phase_portrait, slow_hamiltonian, thermal_ensemble, write_ensemble_csv,
    write_portrait_csv, Basin, EnsembleOptions, SlowState, DEFAULT_AMPLITUDE_BOUND,
};
use paramtrap::spectral::{
    bin_power, burst_series, ensemble_stats, noncentral_power_stats, psd, snr_curve_from_powers, SpectrumResult,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Config, ExperimentKind, ScheduleKind};
use crate::seeds::{seed_plan, write_seed_csv};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub runs: usize,
    pub steps: u64,
    pub evaluations: u64,
    pub escapes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// Paths relative to the output directory, in creation order.
    pub artifacts: Vec<String>,
    pub failures: Vec<Failure>,
    pub metrics: Metrics,
    /// Number of random trajectories, for the seed table.
    pub seeded_trajectories: usize,
    pub summary: Value,
}

struct Sink<'a> {
    dir: &'a Path,
    artifacts: Vec<String>,
}

impl<'a> Sink<'a> {
    fn new(dir: &'a Path) -> Self {
        Sink {
            dir,
            artifacts: Vec::new(),
        }
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path: PathBuf = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn spectrum(&mut self, name: &str, s: &SpectrumResult) -> Result<()> {
        let mut w = self.create(name)?;
        s.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn failure(index: usize, e: &paramtrap::Error) -> (Failure, bool) {
    (
        Failure {
            index,
            reason: e.to_string(),
        },
        matches!(e, paramtrap::Error::Escape { .. }),
    )
}

pub fn run_experiment(cfg: &Config, dir: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut sink = Sink::new(dir);
    let (failures, metrics, seeded, summary) = match cfg.experiment {
        ExperimentKind::SlowflowPortrait => portrait(cfg, &mut sink)?,
        ExperimentKind::SlowflowEnsemble => slowflow_ensemble(cfg, &mut sink)?,
        ExperimentKind::Sim1d => sim1d(cfg, &mut sink)?,
        ExperimentKind::Sim3d => sim3d(cfg, &mut sink)?,
        ExperimentKind::DetuningScan => scan(cfg, &mut sink)?,
        ExperimentKind::NoisyEnsemble => noisy(cfg, &mut sink, false)?,
        ExperimentKind::SnrCurve => noisy(cfg, &mut sink, true)?,
        ExperimentKind::BurstStats => bursts(cfg, &mut sink)?,
    };
    if seeded > 0 {
        let mut w = sink.create("seeds.csv")?;
        write_seed_csv(&mut w, &seed_plan(cfg.seed, seeded)?)?;
        w.flush()?;
    }
    let summary_value = json!({
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "failures": failures.len(),
        "results": summary,
    });
    let mut w = sink.create("summary.json")?;
    serde_json::to_writer_pretty(&mut w, &summary_value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(Outcome {
        artifacts: sink.artifacts,
        failures,
        metrics,
        seeded_trajectories: seeded,
        summary: summary_value,
    })
}

type Parts = (Vec<Failure>, Metrics, usize, Value);

fn portrait(cfg: &Config, sink: &mut Sink) -> Result<Parts> {
    let p = cfg.slowflow_params(ScheduleKind::Ramp)?;
    let eps = cfg.drive.epsilon;
    let hw = cfg.slowflow.portrait_half_width_um * units::MICRON;
    let n = cfg.slowflow.portrait_points;
    let pts = phase_portrait(&p, eps, hw, n)?;
    let mut w = sink.create("portrait.csv")?;
    write_portrait_csv(&mut w, &pts)?;
    w.flush()?;

    let mut w = sink.create("basins.csv")?;
    writeln!(w, "X_m,Y_m,H,basin")?;
    for pt in &pts {
        let s = SlowState::from_cartesian(pt.x, pt.y);
        let b = classify_basin(&s, &p, eps);
        writeln!(w, "{:e},{:e},{:e},{}", pt.x, pt.y, slow_hamiltonian(&s, &p, eps), basin_name(b))?;
    }
    w.flush()?;

    let fps = fixed_points(&p, eps, DEFAULT_AMPLITUDE_BOUND.max(hw * std::f64::consts::SQRT_2))?;
    let mut w = sink.create("fixed_points.csv")?;
    writeln!(w, "A_m,phi_rad,X_m,Y_m,stability")?;
    for f in &fps {
        let [x, y] = f.state.cartesian();
        writeln!(w, "{:e},{:e},{:e},{:e},{:?}", f.state.a, f.state.phi, x, y, f.stability)?;
    }
    w.flush()?;
    let list: Vec<Value> = fps
        .iter()
        .map(|f| json!({"A_m": f.state.a, "phi_rad": f.state.phi, "stability": format!("{:?}", f.stability)}))
        .collect();
    Ok((Vec::new(), Metrics::default(), 0, json!({"epsilon": eps, "fixed_points": list})))
}

fn basin_name(b: Basin) -> &'static str {
    match b {
        Basin::LeftLobe => "left",
        Basin::RightLobe => "right",
        Basin::Outside => "outside",
        Basin::Boundary => "boundary",
    }
}

fn slowflow_ensemble(cfg: &Config, sink: &mut Sink) -> Result<Parts> {
    let s = &cfg.slowflow;
    let p = cfg.slowflow_params(ScheduleKind::Ramp)?;
    let initials = thermal_ensemble(s.states, s.temperature_k, p.omega_x, p.schedule.omega_d, s.sampling, cfg.seed)?;
    let opts = EnsembleOptions {
        window_start: s.window_start_us.map(|v| v * units::MICROSECOND),
        sample_dt: s.trajectory_dt_ns.map(|v| v * units::NANOSECOND),
        settings: cfg.slowflow_settings(),
    };
    let res = evolve_ensemble(&initials, &p, s.t_end_us * units::MICROSECOND, &opts)?;
    let mut w = sink.create("ensemble.csv")?;
    write_ensemble_csv(&mut w, &res)?;
    w.flush()?;
    if opts.sample_dt.is_some() {
        let mut w = sink.create("trajectories.csv")?;
        writeln!(w, "index,t_s,X_m,Y_m")?;
        for m in &res.members {
            for (t, y) in m.trajectory.iter().flatten() {
                writeln!(w, "{},{:e},{:e},{:e}", m.index, t, y[0], y[1])?;
            }
        }
        w.flush()?;
    }
    let failures: Vec<Failure> = res
        .failures
        .iter()
        .map(|f| Failure {
            index: f.index,
            reason: f.reason.clone(),
        })
        .collect();
    let a_star = res.attractor_amplitude;
    let (mut eligible, mut locked) = (0usize, 0usize);
    for m in &res.members {
        if m.basin0 != Basin::Boundary {
            eligible += 1;
            if a_star.is_some_and(|a| m.mean_projection.abs() > 0.5 * a) {
                locked += 1;
            }
        }
    }
    let count = |side| res.members.iter().filter(|m| m.side == side).count();
    let summary = json!({
        "states": s.states,
        "attractor_amplitude_m": a_star,
        "axis_phi_rad": res.axis_phi,
        "window_s": [res.window.0, res.window.1],
        "left_count": count(paramtrap::slowflow::Side::Left),
        "right_count": count(paramtrap::slowflow::Side::Right),
        "cluster_mean_left_m": res.cluster_means[0],
        "cluster_mean_right_m": res.cluster_means[1],
        "non_boundary": eligible,
        "locked": locked,
        "locked_fraction": if eligible > 0 { locked as f64 / eligible as f64 } else { f64::NAN },
    });
    let metrics = Metrics {
        runs: s.states,
        ..Metrics::default()
    };
    Ok((failures, metrics, s.states, summary))
}

fn sim1d(cfg: &Config, sink: &mut Sink) -> Result<Parts> {
    let trap = cfg.trap()?;
    let s = &cfg.sim1d;
    let sched = cfg.schedule(ScheduleKind::Ramp)?;
    let settings = cfg.ode_settings();
    let tr = integrate_1d(
        s.x0_um * units::MICRON,
        s.v0_m_per_s,
        &OneDParams::new(trap.secular[0], trap.c4, trap.c6, s.gamma_per_s),
        &sched,
        s.t_end_us * units::MICROSECOND,
        &settings,
    )?;
    let mut w = sink.create("trajectory_1d.csv")?;
    writeln!(w, "t_s,x_m,v_m_per_s")?;
    for k in 0..tr.t.len() {
        writeln!(w, "{:e},{:e},{:e}", tr.t[k], tr.x[k], tr.v[k])?;
    }
    w.flush()?;
    let sp = psd(&tr.x, settings.sample_rate)?;
    sink.spectrum("spectrum_x.csv", &sp)?;
    let f_half = 0.5 * sched.omega_d / std::f64::consts::TAU;
    let b = bin_power(&tr.x, settings.sample_rate, f_half)?;
    let metrics = Metrics {
        runs: 1,
        steps: tr.stats.accepted as u64,
        evaluations: tr.stats.evaluations as u64,
        escapes: 0,
    };
    Ok((
        Vec::new(),
        metrics,
        0,
        json!({"samples": tr.t.len(), "half_drive_frequency_Hz": b.frequency, "x_amplitude_m": b.amplitude}),
    ))
}

fn sim3d(cfg: &Config, sink: &mut Sink) -> Result<Parts> {
    let field = cfg.field()?;
    let res = cfg.resonator()?;
    let settings = cfg.ode_settings();
    let s = &cfg.sim3d;
    let t_end = s.t_end_us * units::MICROSECOND;
    let jobs: Vec<(ScheduleKind, usize, f64)> = s
        .schedules
        .iter()
        .flat_map(|&k| s.phi_x_rad.iter().enumerate().map(move |(j, &phi)| (k, j, phi)))
        .collect();
    let runs: Vec<paramtrap::Result<_>> = jobs
        .par_iter()
        .map(|&(kind, _, phi)| {
            let mut init: InitCondition = cfg.init();
            init.phases[0] = phi;
            integrate_3d(&init, &field, &res, &cfg.schedule(kind)?, t_end, &settings)
        })
        .collect();
    let mut failures = Vec::new();
    let mut metrics = Metrics::default();
    let mut table = Vec::new();
    for (i, (r, &(kind, j, phi))) in runs.into_iter().zip(&jobs).enumerate() {
        let tag = format!("{}_phi{}", kind.name(), j);
        metrics.runs += 1;
        match r {
            Ok(run) => {
                metrics.steps += run.stats.accepted as u64;
                metrics.evaluations += run.stats.evaluations as u64;
                if s.write_trajectories {
                    let mut w = sink.create(&format!("trajectory_{tag}.ptrj"))?;
                    run.record.write_binary(&mut w)?;
                    w.flush()?;
                }
                let fs = run.record.sample_rate;
                for col in ["x", "V"] {
                    let data = run.record.column(col).expect("recorded column");
                    sink.spectrum(&format!("spectrum_{col}_{tag}.csv"), &psd(data, fs)?)?;
                }
                let (v, x) = probe_amplitudes(&run.record, s.analysis_start_us * units::MICROSECOND, s.probe_mhz * 1e6)?;
                table.push(json!({"schedule": kind.name(), "phi_x_rad": phi, "voltage_amplitude_V": v, "x_amplitude_m": x}));
            }
            Err(e) => {
                let (f, escaped) = failure(i, &e);
                metrics.escapes += escaped as usize;
                table.push(json!({"schedule": kind.name(), "phi_x_rad": phi, "error": f.reason}));
                failures.push(f);
            }
        }
    }
    Ok((failures, metrics, 0, json!({"probe_frequency_Hz": s.probe_mhz * 1e6, "runs": table})))
}

fn scan(cfg: &Config, sink: &mut Sink) -> Result<Parts> {
    let setup = cfg.detuning_setup()?;
    let w0 = cfg.trap()?.secular[0];
    let omegas: Vec<f64> = cfg.scan.detuning_percent.iter().map(|p| w0 * (1.0 + p / 100.0)).collect();
    let result = detuning_scan(&omegas, &cfg.scan.phi_x_rad, &setup)?;
    let mut w = sink.create("scan.csv")?;
    result.write_csv(&mut w)?;
    w.flush()?;
    let mut failures = Vec::new();
    let mut metrics = Metrics::default();
    for (i, row) in result.cells.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            metrics.runs += 1;
            if let Some(e) = &c.error {
                failures.push(Failure {
                    index: i * row.len() + j,
                    reason: e.clone(),
                });
                metrics.escapes += e.contains("left the region") as usize;
            }
        }
    }
    let on = cfg.scan.detuning_percent.iter().position(|p| *p == 0.0);
    let ratios: Option<Vec<Vec<Option<f64>>>> = on.map(|i0| {
        result
            .cells
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&result.cells[i0])
                    .map(|(c, c0)| Some(c.voltage_amplitude? / c0.voltage_amplitude?))
                    .collect()
            })
            .collect()
    });
    Ok((
        failures,
        metrics,
        0,
        json!({"omega_x_rad_per_s": omegas, "phi_x_rad": cfg.scan.phi_x_rad, "ratio_to_on_resonance": ratios}),
    ))
}

fn noisy(cfg: &Config, sink: &mut Sink, curve: bool) -> Result<Parts> {
    let e = &cfg.ensemble;
    let res = cfg.resonator()?;
    let spec = NoisyEnsembleSpec {
        init: cfg.init(),
        field: cfg.field()?,
        resonator: res,
        schedule: cfg.schedule(ScheduleKind::Ramp)?,
        settings: cfg.sde_settings(),
        noise: cfg.noise(),
        trajectories: e.trajectories,
        detection_times: e.detection_times_us.iter().map(|t| t * units::MICROSECOND).collect(),
        probe_frequency: e.probe_mhz * 1e6,
        keep_records: e.keep_records && !curve,
    };
    let ens = noisy_ensemble(&spec)?;
    let floor = res.johnson_floor(&PhysicalConstants::CODATA);

    let mut w = sink.create("resonance_powers.csv")?;
    writeln!(w, "trajectory,detection_time_s,bin_frequency_Hz,psd_V2_per_Hz,amplitude_V")?;
    for m in &ens.members {
        for (b, t) in m.bins.iter().zip(&spec.detection_times) {
            writeln!(w, "{},{:e},{:e},{:e},{:e}", m.index, t, b.frequency, b.psd, b.amplitude)?;
        }
    }
    w.flush()?;

    let mut summary = json!({
        "trajectories": e.trajectories,
        "completed": ens.members.len(),
        "johnson_floor_V2_per_Hz": floor,
    });
    if spec.keep_records {
        let mut spectra = Vec::new();
        for m in &ens.members {
            let rec = m.record.as_ref().expect("records kept");
            let mut w = sink.create(&format!("trajectory_{:04}.ptrj", m.index))?;
            rec.write_binary(&mut w)?;
            w.flush()?;
            spectra.push(psd(rec.column("V").expect("V column"), rec.sample_rate)?);
        }
        if !spectra.is_empty() {
            let st = ensemble_stats(&spectra, spec.probe_frequency)?;
            let mut w = sink.create("ensemble_spectrum.csv")?;
            st.write_csv(&mut w)?;
            w.flush()?;
            summary["resonance_bin_Hz"] = json!(st.frequencies[st.resonance_bin]);
            summary["resonance_mean_psd_V2_per_Hz"] = json!(st.mean_psd[st.resonance_bin]);
            summary["resonance_powers_V2_per_Hz"] = json!(st.resonance_powers);
        }
    }
    if curve && !ens.members.is_empty() {
        let c = snr_curve_from_powers(&spec.detection_times, &ens.bin_frequencies(), &ens.powers(), floor)?;
        let mut w = sink.create("snr_curve.csv")?;
        c.write_csv(&mut w, floor)?;
        w.flush()?;
        summary["fit"] = json!({"slope": c.fit.slope, "intercept": c.fit.intercept, "r_squared": c.fit.r_squared});
        summary["extrapolation_slope_V2_per_Hz_per_s"] = json!(c.extrapolation_slope);
        summary["points"] = serde_json::to_value(&c.points)?;
    }
    let failures = ens
        .failures
        .iter()
        .map(|(i, r)| Failure {
            index: *i,
            reason: r.clone(),
        })
        .collect::<Vec<_>>();
    let metrics = Metrics {
        runs: e.trajectories,
        steps: ens.members.iter().map(|m| m.outcome.steps).sum(),
        evaluations: 4 * ens.members.iter().map(|m| m.outcome.steps).sum::<u64>(),
        escapes: ens.failures.iter().filter(|(_, r)| r.contains("left the region")).count(),
    };
    Ok((failures, metrics, e.trajectories, summary))
}

fn bursts(cfg: &Config, sink: &mut Sink) -> Result<Parts> {
    let b = &cfg.burst;
    let floor = cfg.resonator()?.johnson_floor(&PhysicalConstants::CODATA);
    let vs = (floor * 10f64.powf(b.snr_db / 10.0)).sqrt();
    let mut rng = RngStream::new(cfg.seed, 0);
    let stats = noncentral_power_stats(vs, floor, b.samples, &mut rng)?;
    let n = stats.samples.len() as f64;
    let mean = stats.samples.iter().sum::<f64>() / n;
    let below = stats.samples.iter().filter(|&&p| p < floor).count() as f64 / n;

    let top = stats.samples.iter().cloned().fold(0.0, f64::max);
    let width = top / b.histogram_bins as f64;
    let mut counts = vec![0usize; b.histogram_bins];
    for &p in &stats.samples {
        counts[((p / width) as usize).min(b.histogram_bins - 1)] += 1;
    }
    let mut w = sink.create("power_histogram.csv")?;
    writeln!(w, "bin_low_V2_per_Hz,bin_high_V2_per_Hz,density_per_V2_per_Hz,model_density_per_V2_per_Hz")?;
    for (k, c) in counts.iter().enumerate() {
        let (lo, hi) = (k as f64 * width, (k + 1) as f64 * width);
        let model = (stats.distribution.cdf(hi) - stats.distribution.cdf(lo)) / width;
        writeln!(w, "{:e},{:e},{:e},{:e}", lo, hi, *c as f64 / (n * width), model)?;
    }
    w.flush()?;

    let times: Vec<f64> = (0..b.series_points).map(|i| i as f64 * b.series_spacing_ms * units::MILLISECOND).collect();
    let series = burst_series(vs, floor, &times, &mut rng)?;
    let mut w = sink.create("burst_series.csv")?;
    writeln!(w, "time_s,power_V2_per_Hz")?;
    for (t, p) in &series {
        writeln!(w, "{t:e},{p:e}")?;
    }
    w.flush()?;
    Ok((
        Vec::new(),
        Metrics::default(),
        1,
        json!({
            "snr_dB": b.snr_db,
            "signal_density_V_per_rtHz": vs,
            "floor_V2_per_Hz": floor,
            "sample_mean": mean,
            "model_mean": stats.distribution.mean(),
            "fraction_below_floor": below,
        }),
    ))
}
