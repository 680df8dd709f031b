use std::f64::consts::PI;

use paramtrap::dynamics::{integrate_1d, integrate_3d, probe_amplitudes, InitCondition, IntegratorSettings, OneDParams};
use paramtrap::field::{CalibrationMode, FieldModel};
use paramtrap::integrate::SampleGrid;
use paramtrap::params::{damping_rate, DriveSchedule, PhysicalConstants, ResonatorParams, TrapParams};
use paramtrap::slowflow::{integrate_trajectory, SlowFlowParams, SlowFlowSettings, SlowState};
use paramtrap::spectral::psd;

const WINDOW: usize = 1024;

/// Amplitude of the `f` component over consecutive windows of `WINDOW` samples.
fn envelope(x: &[f64], fs: f64, f: f64) -> Vec<f64> {
    x.chunks_exact(WINDOW)
        .enumerate()
        .map(|(w, chunk)| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in chunk.iter().enumerate() {
                let t = (w * WINDOW + j) as f64 / fs;
                let (s, c) = (2.0 * PI * f * t).sin_cos();
                re += v * c;
                im -= v * s;
            }
            2.0 * (re * re + im * im).sqrt() / WINDOW as f64
        })
        .collect()
}

fn rms_relative(a: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(reference).map(|(p, q)| (p - q).powi(2)).sum();
    let den: f64 = reference.iter().map(|q| q * q).sum();
    (num / den).sqrt()
}

fn trap_field() -> (TrapParams, FieldModel) {
    let trap = TrapParams::default();
    let f = FieldModel::for_trap(&trap, CalibrationMode::Floquet, 0.5).unwrap();
    (trap, f)
}

#[test]
fn slowflow_tracks_one_dimensional_envelope() {
    let trap = TrapParams::default();
    let w = trap.secular[0];
    let settings = IntegratorSettings::default();
    let fs = settings.sample_rate;
    let mut cases = Vec::new();
    for eps in [0.03, 0.05, 0.1] {
        cases.push((DriveSchedule::ramped(2.0 * w, eps, 1e-6), 6e-6, -2e-6 * w));
    }
    // Step drives started inside a lobe.
    for eps in [0.05, 0.1] {
        cases.push((DriveSchedule::step(2.0 * w, eps), 20e-6, 0.0));
        cases.push((DriveSchedule::step(2.0 * w, eps), -30e-6, 0.0));
    }
    for (sched, x0, v0) in cases {
        let one = integrate_1d(x0, v0, &OneDParams::new(w, trap.c4, trap.c6, 0.0), &sched, 5e-6, &settings).unwrap();
        let env1 = envelope(&one.x, fs, w / (2.0 * PI));
        let p = SlowFlowParams {
            gamma: 0.0,
            schedule: sched,
            omega_x: w,
            lambda4: trap.lambda4(),
            lambda6: trap.lambda6(),
        };
        // Same windowed average as the demodulated envelope: |<X + iY>|.
        let n = env1.len() * WINDOW;
        let (traj, _) = integrate_trajectory(
            &SlowState::from_motion(x0, v0, sched.omega_d),
            &p,
            0.0,
            (n - 1) as f64 / fs,
            Some(SampleGrid::record(0.0, 1.0 / fs, n)),
            &SlowFlowSettings::default(),
        )
        .unwrap();
        assert_eq!(traj.len(), n);
        let slow: Vec<f64> = traj
            .chunks_exact(WINDOW)
            .map(|c| {
                let (sx, sy) = c.iter().fold((0.0, 0.0), |(a, b), (_, y)| (a + y[0], b + y[1]));
                sx.hypot(sy) / WINDOW as f64
            })
            .collect();
        let err = rms_relative(&slow, &env1);
        assert!(
            err < 0.1,
            "eps {} ramp {:e} from ({x0:e}, {v0:e}): {err}",
            sched.epsilon_max,
            sched.ramp_duration
        );
    }
}

#[test]
fn secular_frequencies_from_small_undriven_motion() {
    let (_, f) = trap_field();
    let init = InitCondition {
        temperature: 0.01,
        ..Default::default()
    };
    let run = integrate_3d(&init, &f, &ResonatorParams::default(), &DriveSchedule::off(2.0 * f.targets[0]), 8e-6, &IntegratorSettings::default())
        .unwrap();
    for (axis, name) in ["x", "y", "z"].iter().enumerate() {
        let col = run.record.column(name).unwrap();
        assert!(col.iter().all(|v| v.abs() <= 1.5e-6), "{name} amplitude");
        let sp = psd(col, run.record.sample_rate).unwrap();
        let target = f.targets[axis] / (2.0 * PI);
        let hi = sp.bin_of(0.5 * target + target);
        let k = (1..hi).max_by(|&a, &b| sp.psd[a].total_cmp(&sp.psd[b])).unwrap();
        // Parabolic interpolation on log power.
        let (a, b, c) = (sp.psd[k - 1].ln(), sp.psd[k].ln(), sp.psd[k + 1].ln());
        let shift = 0.5 * (a - c) / (a - 2.0 * b + c);
        let peak = (k as f64 + shift) * sp.bin_width;
        assert!((peak / target - 1.0).abs() < 0.005, "{name}: {peak} vs {target}");
    }
}

#[test]
fn halving_tolerances_barely_moves_the_final_state() {
    let (trap, f) = trap_field();
    let res = ResonatorParams::default();
    let sched = DriveSchedule::ramped(2.0 * trap.secular[0], 0.1, 1e-6);
    let run = |tol: f64| {
        let s = IntegratorSettings {
            abstol: tol,
            reltol: tol,
            ..Default::default()
        };
        integrate_3d(&InitCondition::default(), &f, &res, &sched, 10e-6, &s).unwrap().final_state
    };
    let (a, b) = (run(1e-10), run(5e-11));
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = |i: std::ops::Range<usize>| {
        let d: Vec<f64> = i.clone().map(|k| a[k] - b[k]).collect();
        norm(&d) / norm(&a[i])
    };
    assert!(diff(0..3) < 1e-6, "position {}", diff(0..3));
    assert!(diff(3..6) < 1e-6, "velocity {}", diff(3..6));
}

#[test]
fn three_dimensional_envelope_matches_pseudopotential_limit() {
    let (trap, f) = trap_field();
    let res = ResonatorParams::default();
    let k = PhysicalConstants::CODATA;
    let w = trap.secular[0];
    let sched = DriveSchedule::ramped(2.0 * w, 0.1, 1e-6);
    let settings = IntegratorSettings::default();
    let fs = settings.sample_rate;
    let run = integrate_3d(&InitCondition::default(), &f, &res, &sched, 5e-6, &settings).unwrap();
    let env3 = envelope(run.record.column("x").unwrap(), fs, w / (2.0 * PI));

    let gamma = damping_rate(k.electron_mass, trap.d_eff, k.elementary_charge, res.r).unwrap();
    let y0 = InitCondition::default().state(&f).unwrap();
    let one = integrate_1d(y0[0], y0[3], &OneDParams::new(w, trap.c4, trap.c6, gamma), &sched, 5e-6, &settings).unwrap();
    let env1 = envelope(&one.x, fs, w / (2.0 * PI));
    assert_eq!(env1.len(), env3.len());
    let err = rms_relative(&env3, &env1);
    assert!(err < 0.1, "{err}");
}

#[test]
fn induced_voltage_is_proportional_to_amplitude() {
    let (trap, f) = trap_field();
    let res = ResonatorParams::default();
    let settings = IntegratorSettings::default();
    let ratios: Vec<(f64, f64)> = [0.05, 0.1, 0.2]
        .iter()
        .map(|&eps| {
            let sched = DriveSchedule::ramped(2.0 * trap.secular[0], eps, 1e-6);
            let run = integrate_3d(&InitCondition::default(), &f, &res, &sched, 20e-6, &settings).unwrap();
            let (v, x) = probe_amplitudes(&run.record, 5e-6, 200e6).unwrap();
            (x, v / x)
        })
        .collect();
    let (amin, amax) = (ratios[0].0, ratios[2].0);
    assert!(amax / amin > 1.8, "amplitude range {amin:e}..{amax:e}");
    let r0 = ratios[1].1;
    for (a, r) in &ratios {
        assert!((r / r0 - 1.0).abs() < 0.05, "V/A at A = {a:e}: {r:e} vs {r0:e}");
    }
}
