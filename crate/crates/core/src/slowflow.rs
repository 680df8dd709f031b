//! Averaged amplitude/phase dynamics of the parametrically driven x mode.
//!
//! With `x(t) = A cos(ω_d t/2 + φ)` and `k = εω_x/4`:
//!
//! ```text
//! Ȧ = −(γ/2)A + kA sin 2φ
//! φ̇ = k cos 2φ + δ + λ₄A² + λ₆A⁴
//! ```
//!
//! where `δ = ω_x − ω_d/2` vanishes for the usual `ω_d = 2ω_x`. Integration
//! uses the Cartesian embedding `X = A cos φ`, `Y = A sin φ`, which is smooth
//! through the origin:
//!
//! ```text
//! Ẋ = −(γ/2)X + (k − g)Y
//! Ẏ = −(γ/2)Y + (k + g)X,   g = δ + λ₄ρ + λ₆ρ²,  ρ = X² + Y²
//! ```

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{Dop853, Dop853Options, SampleGrid};
use crate::noise::{stream_id, RngStream, Source};
use crate::params::{thermal_sample, wrap_phase, DriveSchedule, PhysicalConstants};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowState {
    pub a: f64,
    pub phi: f64,
}

impl SlowState {
    pub fn new(a: f64, phi: f64) -> Self {
        if a < 0.0 {
            SlowState {
                a: -a,
                phi: wrap_phase(phi + PI),
            }
        } else {
            SlowState {
                a,
                phi: wrap_phase(phi),
            }
        }
    }

    pub fn from_cartesian(x: f64, y: f64) -> Self {
        SlowState::new(x.hypot(y), y.atan2(x))
    }

    pub fn cartesian(&self) -> [f64; 2] {
        [self.a * self.phi.cos(), self.a * self.phi.sin()]
    }

    /// Envelope state of a 1D oscillation `(x, ẋ)` at `t = 0`.
    pub fn from_motion(x: f64, v: f64, omega_d: f64) -> Self {
        Self::from_cartesian(x, -v / (0.5 * omega_d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowFlowParams {
    pub gamma: f64,
    pub schedule: DriveSchedule,
    pub omega_x: f64,
    pub lambda4: f64,
    pub lambda6: f64,
}

impl SlowFlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "SlowFlowParams.gamma",
                reason: format!("must be finite and >= 0, got {}", self.gamma),
            });
        }
        if !(self.omega_x.is_finite() && self.omega_x > 0.0) {
            return Err(Error::InvalidParameter {
                name: "SlowFlowParams.omega_x",
                reason: format!("must be finite and > 0, got {}", self.omega_x),
            });
        }
        if !(self.lambda4.is_finite() && self.lambda6.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "SlowFlowParams.lambda",
                reason: "anharmonic coefficients must be finite".into(),
            });
        }
        self.schedule.validate()
    }

    /// Parametric rate `εω_x/4`.
    pub fn k(&self, epsilon: f64) -> f64 {
        0.25 * epsilon * self.omega_x
    }

    /// `ω_x − ω_d/2`.
    pub fn detuning(&self) -> f64 {
        self.omega_x - 0.5 * self.schedule.omega_d
    }

    /// Amplitude-dependent phase rate `g(ρ) = δ + λ₄ρ + λ₆ρ²`.
    #[inline]
    fn g(&self, rho: f64) -> f64 {
        self.detuning() + self.lambda4 * rho + self.lambda6 * rho * rho
    }

    #[inline]
    fn dg(&self, rho: f64) -> f64 {
        self.lambda4 + 2.0 * self.lambda6 * rho
    }

    /// Cartesian vector field at fixed ε.
    #[inline]
    pub fn cartesian_rhs(&self, xy: [f64; 2], epsilon: f64) -> [f64; 2] {
        let [x, y] = xy;
        let k = self.k(epsilon);
        let g = self.g(x * x + y * y);
        let h = 0.5 * self.gamma;
        [-h * x + (k - g) * y, -h * y + (k + g) * x]
    }

    fn jacobian(&self, xy: [f64; 2], epsilon: f64) -> [[f64; 2]; 2] {
        let [x, y] = xy;
        let k = self.k(epsilon);
        let rho = x * x + y * y;
        let g = self.g(rho);
        let dg = self.dg(rho);
        let h = 0.5 * self.gamma;
        [
            [-h - 2.0 * dg * x * y, k - g - 2.0 * dg * y * y],
            [k + g + 2.0 * dg * x * x, -h + 2.0 * dg * x * y],
        ]
    }
}

/// `(Ȧ, φ̇)` at time `t`.
pub fn slowflow_rhs(state: &SlowState, t: f64, params: &SlowFlowParams) -> (f64, f64) {
    let k = params.k(params.schedule.epsilon(t));
    let (s2, c2) = (2.0 * state.phi).sin_cos();
    let a = state.a;
    let a2 = a * a;
    let da = -0.5 * params.gamma * a + k * a * s2;
    let dphi = k * c2 + params.detuning() + params.lambda4 * a2 + params.lambda6 * a2 * a2;
    (da, dphi)
}

/// Conserved quantity of the undamped flow at fixed ε, with `J = A²/2`.
pub fn slow_hamiltonian(state: &SlowState, params: &SlowFlowParams, epsilon: f64) -> f64 {
    let j = 0.5 * state.a * state.a;
    params.k(epsilon) * j * (2.0 * state.phi).cos()
        + params.detuning() * j
        + params.lambda4 * j * j
        + 4.0 / 3.0 * params.lambda6 * j * j * j
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Center,
    Saddle,
    Stable,
    Unstable,
    /// Zero Jacobian determinant, e.g. a ring of equilibria without drive.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub state: SlowState,
    pub stability: Stability,
}

/// Largest amplitude reported by [`fixed_points`] unless overridden.
pub const DEFAULT_AMPLITUDE_BOUND: f64 = 150e-6;

fn classify(jac: [[f64; 2]; 2], scale: f64) -> Stability {
    let tr = jac[0][0] + jac[1][1];
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    let tol = 1e-9 * scale * scale;
    if det.abs() <= tol {
        Stability::Degenerate
    } else if det < 0.0 {
        Stability::Saddle
    } else if tr.abs() <= 1e-9 * scale {
        Stability::Center
    } else if tr < 0.0 {
        Stability::Stable
    } else {
        Stability::Unstable
    }
}

/// Positive roots of `c2 ρ² + c1 ρ + c0 = 0`.
fn positive_roots(c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if c2 == 0.0 {
        if c1 != 0.0 {
            out.push(-c0 / c1);
        }
    } else {
        let disc = c1 * c1 - 4.0 * c2 * c0;
        if disc >= 0.0 {
            let q = -0.5 * (c1 + c1.signum() * disc.sqrt());
            if q != 0.0 {
                out.push(q / c2);
                out.push(c0 / q);
            } else {
                out.push(0.0);
            }
        }
    }
    out.retain(|r| r.is_finite() && *r > 0.0);
    out
}

/// Equilibria of the flow at fixed ε, amplitudes up to `bound` (use
/// [`DEFAULT_AMPLITUDE_BOUND`] for the trap's region of interest). The origin
/// is always listed first.
pub fn fixed_points(params: &SlowFlowParams, epsilon: f64, bound: f64) -> Result<Vec<FixedPoint>> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let k = params.k(epsilon);
    let h = 0.5 * params.gamma;
    let scale = k.abs() + h + params.detuning().abs() + f64::MIN_POSITIVE;
    let mut out = vec![FixedPoint {
        state: SlowState { a: 0.0, phi: 0.0 },
        stability: classify(params.jacobian([0.0, 0.0], epsilon), scale),
    }];
    let s2 = k * k - h * h;
    if s2 < 0.0 {
        return Ok(out);
    }
    let s = s2.sqrt();
    let targets: Vec<f64> = if s == 0.0 { vec![0.0] } else { vec![s, -s] };
    for g_target in targets {
        for rho in positive_roots(params.lambda6, params.lambda4, params.detuning() - g_target) {
            let a = rho.sqrt();
            if a > bound {
                continue;
            }
            let v1 = [k - g_target, h];
            let v2 = [h, k + g_target];
            let n1 = v1[0].hypot(v1[1]);
            let n2 = v2[0].hypot(v2[1]);
            if n1 == 0.0 && n2 == 0.0 {
                // Undriven and undamped: a whole ring of equilibria.
                out.push(FixedPoint {
                    state: SlowState { a, phi: 0.0 },
                    stability: Stability::Degenerate,
                });
                continue;
            }
            let v = if n1 >= n2 { v1 } else { v2 };
            let phi = v[1].atan2(v[0]);
            for p in [phi, phi + PI] {
                let st = SlowState::new(a, p);
                out.push(FixedPoint {
                    state: st,
                    stability: classify(params.jacobian(st.cartesian(), epsilon), scale),
                });
            }
        }
    }
    Ok(out)
}

/// Non-trivial fixed points sorted so that the one on the positive side of
/// the attractor axis comes first.
fn attractor_pair(params: &SlowFlowParams, epsilon: f64) -> Option<(SlowState, f64)> {
    let undamped = SlowFlowParams {
        gamma: 0.0,
        ..*params
    };
    let pts = fixed_points(&undamped, epsilon, f64::INFINITY).ok()?;
    // Lobe centres: the smallest-amplitude non-trivial centres.
    let c = pts
        .iter()
        .filter(|p| p.stability == Stability::Center && p.state.a > 0.0)
        .min_by(|a, b| a.state.a.total_cmp(&b.state.a))?;
    let mut phi = wrap_phase(c.state.phi);
    // Canonical direction: φ in [−π/2, π/2).
    if phi >= 0.5 * PI && phi < 1.5 * PI {
        phi -= PI;
    } else if phi >= 1.5 * PI {
        phi -= 2.0 * PI;
    }
    Some((SlowState { a: c.state.a, phi }, slow_hamiltonian(&c.state, &undamped, epsilon)))
}

/// The two lobe attractors at ε (undamped flow), positive side first.
pub fn attractors(params: &SlowFlowParams, epsilon: f64) -> Option<[SlowState; 2]> {
    attractor_pair(params, epsilon).map(|(s, _)| [s, SlowState::new(s.a, s.phi + PI)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basin {
    LeftLobe,
    RightLobe,
    Outside,
    /// Numerically on the separatrix.
    Boundary,
}

/// Which separatrix lobe of the undamped flow at ε contains `state`.
/// "Right" is the lobe on the positive side of the attractor axis
/// (the attractor with φ in [−π/2, π/2)).
pub fn classify_basin(state: &SlowState, params: &SlowFlowParams, epsilon: f64) -> Basin {
    let Some((att, h_star)) = attractor_pair(params, epsilon) else {
        return if state.a == 0.0 {
            Basin::Boundary
        } else {
            Basin::Outside
        };
    };
    let p = SlowFlowParams {
        gamma: 0.0,
        ..*params
    };
    let k = p.k(epsilon);
    let h = slow_hamiltonian(state, &p, epsilon);
    if h.abs() < 1e-9 * k.abs() * att.a * att.a {
        return Basin::Boundary;
    }
    if h.signum() != h_star.signum() {
        return Basin::Outside;
    }
    // Outer tip of the lobe along the attractor axis: next zero of H(J)/J
    // beyond J*.
    let c = k * (2.0 * att.phi).cos() + p.detuning();
    let j_star = 0.5 * att.a * att.a;
    let j_tip = positive_roots(4.0 / 3.0 * p.lambda6, p.lambda4, c)
        .into_iter()
        .filter(|&j| j > j_star)
        .fold(f64::INFINITY, f64::min);
    if 0.5 * state.a * state.a >= j_tip {
        return Basin::Outside;
    }
    let proj = (state.phi - att.phi).cos();
    if proj >= 0.0 {
        Basin::RightLobe
    } else {
        Basin::LeftLobe
    }
}

/// Integration settings for the slow flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowFlowSettings {
    pub abstol: f64,
    pub reltol: f64,
    /// Length scale for the absolute tolerance, m.
    pub length_scale: f64,
}

impl Default for SlowFlowSettings {
    fn default() -> Self {
        SlowFlowSettings {
            abstol: 1e-10,
            reltol: 1e-10,
            length_scale: 1e-6,
        }
    }
}

impl SlowFlowSettings {
    fn options<const N: usize>(&self, max_step: f64) -> Dop853Options<N> {
        Dop853Options::new(self.abstol, self.reltol)
            .with_scale([self.length_scale; N])
            .with_max_step(max_step)
    }
}

fn max_step_for(params: &SlowFlowParams, t0: f64, t_end: f64) -> f64 {
    // Keep the ramp from being stepped over.
    let ramp = params.schedule.ramp_duration;
    let mut m = t_end - t0;
    if ramp > 0.0 {
        m = m.min(0.05 * ramp);
    }
    m.max(f64::MIN_POSITIVE)
}

/// Integrates one trajectory and returns the samples on `grid` as Cartesian
/// `(X, Y)` pairs, plus the final state.
pub fn integrate_trajectory(
    state0: &SlowState,
    params: &SlowFlowParams,
    t0: f64,
    t_end: f64,
    grid: Option<SampleGrid>,
    settings: &SlowFlowSettings,
) -> Result<(Vec<(f64, [f64; 2])>, SlowState)> {
    let sys = |t: f64, y: &[f64; 2], dy: &mut [f64; 2]| {
        let r = params.cartesian_rhs(*y, params.schedule.epsilon(t));
        dy[0] = r[0];
        dy[1] = r[1];
    };
    let mut out = Vec::new();
    let mut solver = Dop853::new(settings.options::<2>(max_step_for(params, t0, t_end)));
    let y = solver.integrate(
        &sys,
        t0,
        state0.cartesian(),
        t_end,
        grid,
        |t, y| {
            out.push((t, *y));
            Ok(())
        },
        |t, y| finite_or_err(t, y),
    )?;
    Ok((out, SlowState::from_cartesian(y[0], y[1])))
}

fn finite_or_err<const N: usize>(t: f64, y: &[f64; N]) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration {
            t,
            reason: "non-finite state".into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub index: usize,
    pub initial: SlowState,
    pub final_state: SlowState,
    /// Time-averaged `(A cos φ, A sin φ)` over the averaging window.
    pub mean: [f64; 2],
    /// Projection of `mean` on the attractor axis at the final ε.
    pub mean_projection: f64,
    pub side: Side,
    /// Slow Hamiltonian of the initial state at the final ε.
    pub h0: f64,
    pub basin0: Basin,
    /// Sampled Cartesian trajectory, when requested.
    pub trajectory: Option<Vec<(f64, [f64; 2])>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFailure {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub members: Vec<EnsembleMember>,
    pub failures: Vec<EnsembleFailure>,
    /// Mean time-averaged position of each side, `[left, right]`.
    pub cluster_means: [Option<[f64; 2]>; 2],
    pub window: (f64, f64),
    /// Attractor axis direction used for sides, radians.
    pub axis_phi: f64,
    pub attractor_amplitude: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    /// Averaging window start; defaults to the end of the ramp.
    pub window_start: Option<f64>,
    /// Keep trajectories sampled at this interval.
    pub sample_dt: Option<f64>,
    pub settings: SlowFlowSettings,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            window_start: None,
            sample_dt: None,
            settings: SlowFlowSettings::default(),
        }
    }
}

/// Integrates every initial state to `t_end` (in parallel, results in input
/// order) and averages `(X, Y)` over `[window_start, t_end]`.
pub fn evolve_ensemble(
    initials: &[SlowState],
    params: &SlowFlowParams,
    t_end: f64,
    options: &EnsembleOptions,
) -> Result<EnsembleResult> {
    params.validate()?;
    let t_w = options.window_start.unwrap_or(params.schedule.ramp_end());
    if !(t_end > t_w && t_w >= 0.0) {
        return Err(Error::Domain(format!(
            "averaging window [{t_w:e}, {t_end:e}] s is empty"
        )));
    }
    let eps_final = params.schedule.epsilon(t_end);
    let att = attractor_pair(params, eps_final);
    let axis_phi = att.map(|(s, _)| s.phi).unwrap_or(0.0);
    let axis = [axis_phi.cos(), axis_phi.sin()];

    let run = |state0: &SlowState| -> Result<([f64; 2], SlowState, Option<Vec<(f64, [f64; 2])>>)> {
        let grid = options.sample_dt.map(|dt| SampleGrid::covering(0.0, t_end, dt));
        let (mut samples, s_w) = integrate_trajectory(state0, params, 0.0, t_w, grid, &options.settings)?;
        // Second leg carries the running integrals of X and Y.
        let sys = |t: f64, y: &[f64; 4], dy: &mut [f64; 4]| {
            let r = params.cartesian_rhs([y[0], y[1]], params.schedule.epsilon(t));
            dy[0] = r[0];
            dy[1] = r[1];
            dy[2] = y[0];
            dy[3] = y[1];
        };
        let mut solver = Dop853::new(
            options
                .settings
                .options::<4>(max_step_for(params, t_w, t_end))
                .with_scale([
                    options.settings.length_scale,
                    options.settings.length_scale,
                    options.settings.length_scale * (t_end - t_w),
                    options.settings.length_scale * (t_end - t_w),
                ]),
        );
        let grid2 = options.sample_dt.map(|dt| {
            let first = (t_w / dt).floor() as usize + 1;
            let last = (t_end / dt).floor() as usize;
            SampleGrid::record(first as f64 * dt, dt, last.saturating_sub(first) + 1)
        });
        let [x, y] = s_w.cartesian();
        let end = solver.integrate(
            &sys,
            t_w,
            [x, y, 0.0, 0.0],
            t_end,
            grid2,
            |t, y| {
                samples.push((t, [y[0], y[1]]));
                Ok(())
            },
            |t, y| finite_or_err(t, y),
        )?;
        let span = t_end - t_w;
        Ok((
            [end[2] / span, end[3] / span],
            SlowState::from_cartesian(end[0], end[1]),
            options.sample_dt.map(|_| samples),
        ))
    };

    let results: Vec<_> = initials.par_iter().map(run).collect();
    let mut members = Vec::with_capacity(initials.len());
    let mut failures = Vec::new();
    let mut sums = [[0.0; 2]; 2];
    let mut counts = [0usize; 2];
    for (index, (init, res)) in initials.iter().zip(results).enumerate() {
        match res {
            Ok((mean, final_state, trajectory)) => {
                let proj = mean[0] * axis[0] + mean[1] * axis[1];
                let side = if proj >= 0.0 { Side::Right } else { Side::Left };
                let si = side as usize;
                sums[si][0] += mean[0];
                sums[si][1] += mean[1];
                counts[si] += 1;
                members.push(EnsembleMember {
                    index,
                    initial: *init,
                    final_state,
                    mean,
                    mean_projection: proj,
                    side,
                    h0: slow_hamiltonian(init, params, eps_final),
                    basin0: classify_basin(init, params, eps_final),
                    trajectory,
                });
            }
            Err(e) => failures.push(EnsembleFailure {
                index,
                reason: e.to_string(),
            }),
        }
    }
    let mean_of = |i: usize| (counts[i] > 0).then(|| [sums[i][0] / counts[i] as f64, sums[i][1] / counts[i] as f64]);
    Ok(EnsembleResult {
        members,
        failures,
        cluster_means: [mean_of(0), mean_of(1)],
        window: (t_w, t_end),
        axis_phi,
        attractor_amplitude: att.map(|(s, _)| s.a),
    })
}

/// How thermal envelope states are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermalSampling {
    /// Energy exponentially distributed with mean `k_BT`, uniform phase.
    #[default]
    Boltzmann,
    /// Fixed amplitude `√(k_BT/(mω²))`, uniform phase.
    FixedAmplitude,
}

/// `n` thermal initial envelope states of the x mode at temperature `t_k`.
/// Each state uses its own stream, so the set is independent of `n` order.
pub fn thermal_ensemble(
    n: usize,
    temperature: f64,
    omega_x: f64,
    omega_d: f64,
    sampling: ThermalSampling,
    seed: u64,
) -> Result<Vec<SlowState>> {
    let constants = PhysicalConstants::CODATA;
    (0..n)
        .map(|i| {
            let mut rng = RngStream::new(seed, stream_id(i as u64, Source::Initial));
            let phase = 2.0 * PI * rng.uniform();
            let t_eff = match sampling {
                ThermalSampling::Boltzmann => 2.0 * temperature * rng.exponential(),
                ThermalSampling::FixedAmplitude => temperature,
            };
            let (x, v) = thermal_sample(&constants, t_eff, omega_x, phase)?;
            Ok(SlowState::from_motion(x, v, omega_d))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortraitPoint {
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Vector field on an `n × n` grid over `[−half_width, half_width]²`.
pub fn phase_portrait(params: &SlowFlowParams, epsilon: f64, half_width: f64, n: usize) -> Result<Vec<PortraitPoint>> {
    if n < 2 || !(half_width > 0.0) {
        return Err(Error::Domain("portrait grid needs n >= 2 and a positive half-width".into()));
    }
    let step = 2.0 * half_width / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        let y = -half_width + j as f64 * step;
        for i in 0..n {
            let x = -half_width + i as f64 * step;
            let [dx, dy] = params.cartesian_rhs([x, y], epsilon);
            out.push(PortraitPoint { x, y, dx, dy });
        }
    }
    Ok(out)
}

pub fn write_portrait_csv<W: Write>(mut w: W, points: &[PortraitPoint]) -> Result<()> {
    writeln!(w, "X_m,Y_m,dXdt_m_per_s,dYdt_m_per_s")?;
    for p in points {
        writeln!(w, "{:e},{:e},{:e},{:e}", p.x, p.y, p.dx, p.dy)?;
    }
    Ok(())
}

pub fn write_ensemble_csv<W: Write>(mut w: W, result: &EnsembleResult) -> Result<()> {
    writeln!(w, "index,A0,phi0,side,mean_Acos,mean_Asin,H0")?;
    for m in &result.members {
        let side = match m.side {
            Side::Left => "left",
            Side::Right => "right",
        };
        writeln!(
            w,
            "{},{:e},{:e},{},{:e},{:e},{:e}",
            m.index, m.initial.a, m.initial.phi, side, m.mean[0], m.mean[1], m.h0
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{units, KhzConvention, TrapParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(conv: KhzConvention, schedule: DriveSchedule) -> SlowFlowParams {
        let trap = TrapParams::standard(conv);
        SlowFlowParams {
            gamma: 0.0,
            schedule,
            omega_x: trap.secular[0],
            lambda4: trap.lambda4(),
            lambda6: trap.lambda6(),
        }
    }

    fn default_params() -> SlowFlowParams {
        let wd = 2.0 * units::mhz_to_angular(200.0);
        params(KhzConvention::Angular, DriveSchedule::step(wd, 0.1))
    }

    /// Brute-force root of φ̇(A, φ=0) = 0 on a fine grid.
    fn root_scan(p: &SlowFlowParams, eps: f64, c2: f64) -> f64 {
        let f = |a: f64| p.k(eps) * c2 + p.detuning() + p.lambda4 * a * a + p.lambda6 * a.powi(4);
        let n = 1_500_000;
        let mut prev = f(0.0);
        for i in 1..=n {
            let a = 150e-6 * i as f64 / n as f64;
            let v = f(a);
            if v.signum() != prev.signum() {
                let a0 = 150e-6 * (i - 1) as f64 / n as f64;
                return a0 + (a - a0) * prev / (prev - v);
            }
            prev = v;
        }
        f64::NAN
    }

    #[test]
    fn rhs_examples() {
        let p = default_params();
        let (da, _) = slowflow_rhs(&SlowState::new(20e-6, 0.0), 1e-6, &p);
        assert_eq!(da, 0.0);
        let (_, dphi) = slowflow_rhs(&SlowState::new(0.0, 0.0), 1e-6, &p);
        assert_relative_eq!(dphi, 3.1416e7, max_relative = 1e-4);
        let off = SlowFlowParams {
            schedule: DriveSchedule::off(p.schedule.omega_d),
            ..p
        };
        let a = 10e-6;
        let (da, dphi) = slowflow_rhs(&SlowState::new(a, 1.0), 0.0, &off);
        assert_eq!(da, 0.0);
        assert_relative_eq!(dphi, p.lambda4 * a * a + p.lambda6 * a.powi(4), max_relative = 1e-14);
    }

    #[test]
    fn attractor_amplitude_matches_root_scan() {
        let p = default_params();
        let pts = fixed_points(&p, 0.1, DEFAULT_AMPLITUDE_BOUND).unwrap();
        let centers: Vec<_> = pts.iter().filter(|f| f.stability == Stability::Center).collect();
        assert_eq!(centers.len(), 2);
        let scan = root_scan(&p, 0.1, 1.0);
        for c in &centers {
            assert_relative_eq!(c.state.a, scan, max_relative = 1e-5);
            assert!((2.0 * c.state.phi).sin().abs() < 1e-12);
        }
        assert_relative_eq!(scan, 35.0e-6, max_relative = 2e-3);
        assert_eq!(pts[0].stability, Stability::Saddle);
        let phis: Vec<f64> = centers.iter().map(|c| c.state.phi).collect();
        assert!(phis.iter().any(|p| p.abs() < 1e-12) && phis.iter().any(|p| (p - PI).abs() < 1e-12));
    }

    #[test]
    fn plain_convention_attractor() {
        let wd = 2.0 * units::mhz_to_angular(200.0);
        let p = params(KhzConvention::Plain, DriveSchedule::step(wd, 0.1));
        let [a, _] = attractors(&p, 0.1).unwrap();
        assert_relative_eq!(a.a, root_scan(&p, 0.1, 1.0), max_relative = 1e-5);
        assert_relative_eq!(a.a, 88.3e-6, max_relative = 2e-3);
    }

    #[test]
    fn no_drive_leaves_only_origin() {
        let p = default_params();
        let pts = fixed_points(&p, 0.0, DEFAULT_AMPLITUDE_BOUND).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].state.a, 0.0);
    }

    #[test]
    fn flipped_lambda4_rotates_attractors() {
        let mut p = default_params();
        p.lambda4 = -p.lambda4;
        p.lambda6 = -p.lambda6;
        let [r, l] = attractors(&p, 0.1).unwrap();
        assert_relative_eq!(r.a, root_scan(&p, 0.1, -1.0), max_relative = 1e-5);
        let phis = [wrap_phase(r.phi), l.phi];
        assert!(phis.iter().any(|p| (p - 0.5 * PI).abs() < 1e-12));
        assert!(phis.iter().any(|p| (p - 1.5 * PI).abs() < 1e-12));
    }

    #[test]
    fn damped_fixed_points_are_equilibria() {
        let mut p = default_params();
        p.gamma = 0.3 * p.k(0.1);
        let pts = fixed_points(&p, 0.1, DEFAULT_AMPLITUDE_BOUND).unwrap();
        let nontrivial: Vec<_> = pts.iter().filter(|f| f.state.a > 0.0).collect();
        assert!(!nontrivial.is_empty());
        for f in &nontrivial {
            let [dx, dy] = p.cartesian_rhs(f.state.cartesian(), 0.1);
            let scale = p.k(0.1) * f.state.a;
            assert!(dx.abs() < 1e-9 * scale && dy.abs() < 1e-9 * scale);
        }
        assert!(nontrivial.iter().any(|f| f.stability == Stability::Stable));
    }

    #[test]
    fn hamiltonian_conserved_over_twenty_microseconds() {
        let p = default_params();
        for s0 in [SlowState::new(20e-6, 0.3), SlowState::new(70e-6, 1.7), SlowState::new(4e-6, 2.0)] {
            let h0 = slow_hamiltonian(&s0, &p, 0.1);
            let grid = SampleGrid::covering(0.0, 20e-6, 0.1e-6);
            let (samples, _) = integrate_trajectory(&s0, &p, 0.0, 20e-6, Some(grid), &SlowFlowSettings::default()).unwrap();
            let floor = 1e-12 * p.k(0.1) * 35e-6 * 35e-6;
            for (_, xy) in samples {
                let h = slow_hamiltonian(&SlowState::from_cartesian(xy[0], xy[1]), &p, 0.1);
                assert!((h - h0).abs() <= 1e-6 * h0.abs() + floor, "{h} vs {h0}");
            }
        }
    }

    #[test]
    fn hamiltonian_generates_flow() {
        let p = default_params();
        let s = SlowState::new(23e-6, 0.7);
        let j = 0.5 * s.a * s.a;
        let d = 1e-6;
        let dj = 1e-6 * j;
        let h = |a: f64, phi: f64| slow_hamiltonian(&SlowState { a, phi }, &p, 0.1);
        let a_of = |j: f64| (2.0 * j).sqrt();
        let dh_dphi = (h(s.a, s.phi + d) - h(s.a, s.phi - d)) / (2.0 * d);
        let dh_dj = (h(a_of(j + dj), s.phi) - h(a_of(j - dj), s.phi)) / (2.0 * dj);
        let (da, dphi) = slowflow_rhs(&s, 1.0, &p);
        assert_relative_eq!(s.a * da, -dh_dphi, max_relative = 1e-6);
        assert_relative_eq!(dphi, dh_dj, max_relative = 1e-6);
    }

    #[test]
    fn basin_examples() {
        let p = default_params();
        let [r, l] = attractors(&p, 0.1).unwrap();
        assert_eq!(classify_basin(&r, &p, 0.1), Basin::RightLobe);
        assert_eq!(classify_basin(&l, &p, 0.1), Basin::LeftLobe);
        assert_eq!(classify_basin(&SlowState::new(2.0 * r.a, 0.5 * PI), &p, 0.1), Basin::Outside);
        assert_eq!(classify_basin(&SlowState::new(0.0, 0.0), &p, 0.1), Basin::Boundary);
        assert_eq!(classify_basin(&SlowState::new(1.6 * r.a, 0.0), &p, 0.1), Basin::Outside);
        assert_eq!(classify_basin(&SlowState::new(1.3 * r.a, 0.0), &p, 0.1), Basin::RightLobe);
    }

    #[test]
    fn ensemble_all_in_phase_lock_to_one_side() {
        let wd = 2.0 * units::mhz_to_angular(200.0);
        let p = params(KhzConvention::Angular, DriveSchedule::ramped(wd, 0.1, 1e-6));
        let init: Vec<_> = [2e-6, 4e-6, 6e-6, 9e-6].iter().map(|&a| SlowState::new(a, 0.0)).collect();
        let res = evolve_ensemble(&init, &p, 20e-6, &EnsembleOptions::default()).unwrap();
        assert!(res.failures.is_empty());
        let a_star = res.attractor_amplitude.unwrap();
        for m in &res.members {
            assert_eq!(m.side, Side::Right);
            assert!(m.mean_projection > 0.5 * a_star);
        }
        assert!(res.cluster_means[0].is_none());
    }

    #[test]
    fn ensemble_without_drive_stays_at_origin() {
        let wd = 2.0 * units::mhz_to_angular(200.0);
        let p = params(KhzConvention::Angular, DriveSchedule::off(wd));
        let init = thermal_ensemble(64, 4.0, p.omega_x, wd, ThermalSampling::Boltzmann, 7).unwrap();
        let opts = EnsembleOptions {
            window_start: Some(1e-6),
            ..Default::default()
        };
        let res = evolve_ensemble(&init, &p, 20e-6, &opts).unwrap();
        assert!(res.attractor_amplitude.is_none());
        for m in res.cluster_means.iter().flatten() {
            assert!(m[0].hypot(m[1]) < 3e-6, "{m:?}");
        }
    }

    #[test]
    fn thermal_ensemble_scale() {
        let w = units::mhz_to_angular(200.0);
        let init = thermal_ensemble(20_000, 4.0, w, 2.0 * w, ThermalSampling::Boltzmann, 1).unwrap();
        let mean_a2 = init.iter().map(|s| s.a * s.a).sum::<f64>() / init.len() as f64;
        // ⟨A²⟩ = 2k_BT/(mω²)
        let sigma2 = 6.196e-6f64.powi(2);
        assert_relative_eq!(mean_a2, 2.0 * sigma2, max_relative = 0.03);
        let fixed = thermal_ensemble(10, 4.0, w, 2.0 * w, ThermalSampling::FixedAmplitude, 1).unwrap();
        for s in fixed {
            assert_relative_eq!(s.a, 6.196e-6, max_relative = 1e-3);
        }
        assert_eq!(
            thermal_ensemble(5, 4.0, w, 2.0 * w, ThermalSampling::Boltzmann, 9).unwrap(),
            thermal_ensemble(5, 4.0, w, 2.0 * w, ThermalSampling::Boltzmann, 9).unwrap()
        );
    }

    #[test]
    fn portrait_grid_and_csv() {
        let p = default_params();
        let pts = phase_portrait(&p, 0.1, 120e-6, 11).unwrap();
        assert_eq!(pts.len(), 121);
        assert_eq!(pts[0].x, -120e-6);
        assert_relative_eq!(pts[120].y, 120e-6, max_relative = 1e-12);
        let centre = pts[60];
        assert!(centre.x.abs() < 1e-18 && centre.dx == 0.0);
        let mut buf = Vec::new();
        write_portrait_csv(&mut buf, &pts).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 122);
    }

    proptest! {
        #[test]
        fn shift_by_pi_commutes_with_flow(a in 1e-6f64..90e-6, phi in 0.0f64..(2.0 * PI)) {
            let p = default_params();
            let s0 = SlowState::new(a, phi);
            let s1 = SlowState::new(a, phi + PI);
            let set = SlowFlowSettings::default();
            let (_, f0) = integrate_trajectory(&s0, &p, 0.0, 2e-6, None, &set).unwrap();
            let (_, f1) = integrate_trajectory(&s1, &p, 0.0, 2e-6, None, &set).unwrap();
            let [x0, y0] = f0.cartesian();
            let [x1, y1] = f1.cartesian();
            prop_assert!((x0 + x1).abs() < 1e-12 && (y0 + y1).abs() < 1e-12);
        }

        #[test]
        fn cartesian_matches_polar(a in 1e-7f64..140e-6, phi in 0.0f64..(2.0 * PI), eps in 0.0f64..0.2) {
            let wd = 2.0 * units::mhz_to_angular(200.0);
            let mut p = params(KhzConvention::Angular, DriveSchedule::step(wd, eps));
            p.gamma = 1e5;
            let s = SlowState::new(a, phi);
            let (da, dphi) = slowflow_rhs(&s, 1.0, &p);
            let [dx, dy] = p.cartesian_rhs(s.cartesian(), eps);
            let ex = da * phi.cos() - a * dphi * phi.sin();
            let ey = da * phi.sin() + a * dphi * phi.cos();
            let scale = a * (p.k(eps) + p.gamma + (p.lambda4 * a * a).abs()) + 1e-30;
            prop_assert!((dx - ex).abs() < 1e-12 * scale && (dy - ey).abs() < 1e-12 * scale);
        }

        #[test]
        fn hamiltonian_zero_at_origin(phi in 0.0f64..(2.0 * PI), eps in 0.0f64..0.5) {
            prop_assert_eq!(slow_hamiltonian(&SlowState::new(0.0, phi), &default_params(), eps), 0.0);
        }
    }
}
