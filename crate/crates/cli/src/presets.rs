//! Named parameter sets. Each is a TOML fragment merged under the user's
//! configuration.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// Full trajectory counts and durations.
    Full,
    /// Reduced counts or durations that finish on a workstation.
    Desk,
}

#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub scale: Scale,
    pub description: &'static str,
    pub toml: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "portrait",
        scale: Scale::Desk,
        description: "slow-flow phase portrait, fixed points and basins over ±120 µm at ε = 0.1",
        toml: r#"
experiment = "slowflow-portrait"
[slowflow]
portrait_half_width_um = 120.0
portrait_points = 81
"#,
    },
    Preset {
        name: "capture",
        scale: Scale::Full,
        description: "10,000 thermal states captured by a 1 µs ramp to ε = 0.1, 20 µs",
        toml: r#"
experiment = "slowflow-ensemble"
[slowflow]
states = 10000
t_end_us = 20.0
"#,
    },
    Preset {
        name: "capture-desk",
        scale: Scale::Desk,
        description: "1,000-state version of `capture`",
        toml: r#"
experiment = "slowflow-ensemble"
[slowflow]
states = 1000
t_end_us = 20.0
"#,
    },
    Preset {
        name: "capture-step",
        scale: Scale::Desk,
        description: "1,000 thermal states under an instantaneous ε = 0.1 step",
        toml: r#"
experiment = "slowflow-ensemble"
[drive]
ramp_us = 0.0
[slowflow]
states = 1000
t_end_us = 20.0
window_start_us = 0.0
"#,
    },
    Preset {
        name: "oscillator-1d",
        scale: Scale::Desk,
        description: "driven anharmonic 1D oscillator, 20 µs",
        toml: r#"
experiment = "sim1d"
"#,
    },
    Preset {
        name: "locking-spectra",
        scale: Scale::Desk,
        description: "noise-free 3D runs, ramped and stepped drive, φ_x ∈ {0, π/2}, 20 µs",
        toml: r#"
experiment = "sim3d"
[sim3d]
schedules = ["ramp", "step"]
phi_x_rad = [0.0, 1.5707963267948966]
t_end_us = 20.0
"#,
    },
    Preset {
        name: "detuning",
        scale: Scale::Desk,
        description: "ω_x scanned over ±2 % at three φ_x, 20 µs per point",
        toml: r#"
experiment = "detuning-scan"
"#,
    },
    Preset {
        name: "noisy-ensemble",
        scale: Scale::Desk,
        description: "4 noisy 3D trajectories of 20 µs with records and ensemble spectrum",
        toml: r#"
experiment = "noisy-ensemble"
[ensemble]
trajectories = 4
detection_times_us = [10.0, 20.0]
keep_records = true
"#,
    },
    Preset {
        name: "snr",
        scale: Scale::Full,
        description: "200 noisy trajectories of 1 ms, SNR against detection time",
        toml: r#"
experiment = "snr-curve"
[ensemble]
trajectories = 200
detection_times_us = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0, 900.0, 1000.0]
"#,
    },
    Preset {
        name: "snr-desk",
        scale: Scale::Desk,
        description: "20 noisy trajectories of 0.2 ms, SNR against detection time",
        toml: r#"
experiment = "snr-curve"
[ensemble]
trajectories = 20
detection_times_us = [20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 180.0, 200.0]
"#,
    },
    Preset {
        name: "bursts",
        scale: Scale::Desk,
        description: "non-central χ² resonance-bin powers at 3 dB SNR and a burst time series",
        toml: r#"
experiment = "burst-stats"
[burst]
snr_db = 3.0
samples = 1000000
"#,
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}
