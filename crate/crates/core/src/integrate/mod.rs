//! Time integrators.
//!
//! [`Dop853`] is an adaptive explicit Runge–Kutta method of order 8 with a
//! 5th/3rd order embedded error estimate and a 7th order continuous
//! extension (Hairer, Nørsett & Wanner). It is used for every deterministic
//! run. [`rk4_step`] is the fixed-step classical scheme the stochastic runs
//! build on, with noise held constant across each step.

mod dop853_tableau;

use dop853_tableau::*;

use crate::error::{Error, Result};

/// Right-hand side of `y' = f(t, y)` on a fixed-size state.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, y: &[f64; N], dy: &mut [f64; N]);
}

impl<const N: usize, F> OdeSystem<N> for F
where
    F: Fn(f64, &[f64; N], &mut [f64; N]),
{
    fn rhs(&self, t: f64, y: &[f64; N], dy: &mut [f64; N]) {
        self(t, y, dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dop853Options<const N: usize> {
    pub abstol: f64,
    pub reltol: f64,
    /// Per-component magnitude the absolute tolerance is measured in, so that
    /// SI states mixing µm positions and pA currents share one `abstol`.
    pub scale: [f64; N],
    pub max_step: f64,
    /// Zero selects the automatic initial step.
    pub initial_step: f64,
    pub max_steps: usize,
}

impl<const N: usize> Dop853Options<N> {
    pub fn new(abstol: f64, reltol: f64) -> Self {
        Dop853Options {
            abstol,
            reltol,
            scale: [1.0; N],
            max_step: f64::INFINITY,
            initial_step: 0.0,
            max_steps: 500_000_000,
        }
    }

    pub fn with_scale(mut self, scale: [f64; N]) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IntegrationStats {
    pub evaluations: usize,
    pub accepted: usize,
    pub rejected: usize,
}

/// Uniform output grid `t_first + k·dt`, `k = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleGrid {
    pub t_first: f64,
    pub dt: f64,
    pub count: usize,
}

impl SampleGrid {
    /// Grid covering `[t0, t_end]` at `dt`, including both ends when `t_end`
    /// falls on the grid.
    pub fn covering(t0: f64, t_end: f64, dt: f64) -> Self {
        let n = ((t_end - t0) / dt * (1.0 + 1e-12)).floor() as usize + 1;
        SampleGrid {
            t_first: t0,
            dt,
            count: n,
        }
    }

    /// `count` samples starting at `t0`, the usual layout for FFT records.
    pub fn record(t0: f64, dt: f64, count: usize) -> Self {
        SampleGrid {
            t_first: t0,
            dt,
            count,
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_first + k as f64 * self.dt
    }

    pub fn last_time(&self) -> f64 {
        self.time(self.count.saturating_sub(1))
    }
}

#[inline]
fn axpy<const N: usize>(out: &mut [f64; N], y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) {
    for i in 0..N {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

fn emit_samples<const N: usize, FS>(
    grid: &Option<SampleGrid>,
    next: &mut usize,
    t_hi: f64,
    interp: impl Fn(f64) -> [f64; N],
    cb: &mut FS,
) -> Result<()>
where
    FS: FnMut(f64, &[f64; N]) -> Result<()>,
{
    if let Some(g) = grid {
        while *next < g.count {
            let ts = g.time(*next);
            if ts > t_hi {
                break;
            }
            cb(ts, &interp(ts))?;
            *next += 1;
        }
    }
    Ok(())
}

/// Adaptive DOP853 integrator with dense output.
pub struct Dop853<const N: usize> {
    opts: Dop853Options<N>,
    pub stats: IntegrationStats,
}

struct Stages<const N: usize> {
    k: [[f64; N]; 16],
}

impl<const N: usize> Dop853<N> {
    const SAFE: f64 = 0.9;
    const FACC1: f64 = 1.0 / 0.333;
    const FACC2: f64 = 1.0 / 6.0;
    const EXPO1: f64 = 1.0 / 8.0;

    pub fn new(opts: Dop853Options<N>) -> Self {
        Dop853 {
            opts,
            stats: IntegrationStats::default(),
        }
    }

    fn weight(&self, a: f64, b: f64, i: usize) -> f64 {
        self.opts.abstol * self.opts.scale[i] + self.opts.reltol * a.abs().max(b.abs())
    }

    fn initial_step<S: OdeSystem<N>>(
        &mut self,
        sys: &S,
        t0: f64,
        y0: &[f64; N],
        f0: &[f64; N],
        span: f64,
    ) -> f64 {
        let mut dnf = 0.0;
        let mut dny = 0.0;
        for i in 0..N {
            let sk = self.weight(y0[i], 0.0, i);
            dnf += (f0[i] / sk).powi(2);
            dny += (y0[i] / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
            1e-6
        } else {
            (dny / dnf).sqrt() * 0.01
        };
        h = h.min(self.opts.max_step).min(span);
        let mut y1 = [0.0; N];
        for i in 0..N {
            y1[i] = y0[i] + h * f0[i];
        }
        let mut f1 = [0.0; N];
        sys.rhs(t0 + h, &y1, &mut f1);
        self.stats.evaluations += 1;
        let mut der2 = 0.0;
        for i in 0..N {
            let sk = self.weight(y0[i], 0.0, i);
            der2 += ((f1[i] - f0[i]) / sk).powi(2);
        }
        let der2 = der2.sqrt() / h;
        let der12 = der2.abs().max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / der12).powf(1.0 / 8.0)
        };
        (100.0 * h).min(h1).min(self.opts.max_step).min(span)
    }

    /// Integrates from `t0` to `t_end`, calling `on_sample` at each grid time
    /// inside `[t0, t_end]` (dense output) and `on_step` after every accepted
    /// step. An error from either callback aborts the run and is returned.
    pub fn integrate<S, FS, FT>(
        &mut self,
        sys: &S,
        t0: f64,
        y0: [f64; N],
        t_end: f64,
        grid: Option<SampleGrid>,
        mut on_sample: FS,
        mut on_step: FT,
    ) -> Result<[f64; N]>
    where
        S: OdeSystem<N>,
        FS: FnMut(f64, &[f64; N]) -> Result<()>,
        FT: FnMut(f64, &[f64; N]) -> Result<()>,
    {
        if !(t_end > t0) {
            if t_end == t0 {
                if let Some(g) = grid {
                    if g.count > 0 && (g.t_first - t0).abs() <= 1e-15 * t0.abs().max(1e-30) {
                        on_sample(t0, &y0)?;
                    }
                }
                return Ok(y0);
            }
            return Err(Error::Integration {
                t: t0,
                reason: "only forward integration is supported".into(),
            });
        }
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                t: t0,
                reason: "non-finite initial state".into(),
            });
        }

        let mut next_sample = 0usize;

        let mut st = Stages { k: [[0.0; N]; 16] };
        let mut t = t0;
        let mut y = y0;
        sys.rhs(t, &y, &mut st.k[0]);
        self.stats.evaluations += 1;

        // Samples before or at the start.
        emit_samples(&grid, &mut next_sample, t0, |_| y0, &mut on_sample)?;

        let span = t_end - t0;
        let mut h = if self.opts.initial_step > 0.0 {
            self.opts.initial_step.min(span)
        } else {
            let f0 = st.k[0];
            self.initial_step(sys, t, &y, &f0, span)
        };
        let mut last_rejected = false;
        let mut steps = 0usize;
        let mut tmp = [0.0; N];

        loop {
            if steps >= self.opts.max_steps {
                return Err(Error::Integration {
                    t,
                    reason: format!("maximum step count {} reached", self.opts.max_steps),
                });
            }
            if h.abs() <= 16.0 * f64::EPSILON * t.abs().max(span) {
                return Err(Error::Integration {
                    t,
                    reason: format!("step size underflow (h = {h:.3e} s)"),
                });
            }
            let last = t + 1.01 * h >= t_end;
            if last {
                h = t_end - t;
            }
            steps += 1;

            let [k1, k2, k3, k4, k5, k6, k7, k8, k9, k10, k11, k12, ..] = &mut st.k;
            axpy(&mut tmp, &y, h, &[(A21, k1)]);
            sys.rhs(t + C2 * h, &tmp, k2);
            axpy(&mut tmp, &y, h, &[(A31, k1), (A32, k2)]);
            sys.rhs(t + C3 * h, &tmp, k3);
            axpy(&mut tmp, &y, h, &[(A41, k1), (A43, k3)]);
            sys.rhs(t + C4 * h, &tmp, k4);
            axpy(&mut tmp, &y, h, &[(A51, k1), (A53, k3), (A54, k4)]);
            sys.rhs(t + C5 * h, &tmp, k5);
            axpy(&mut tmp, &y, h, &[(A61, k1), (A64, k4), (A65, k5)]);
            sys.rhs(t + C6 * h, &tmp, k6);
            axpy(&mut tmp, &y, h, &[(A71, k1), (A74, k4), (A75, k5), (A76, k6)]);
            sys.rhs(t + C7 * h, &tmp, k7);
            axpy(&mut tmp, &y, h, &[(A81, k1), (A84, k4), (A85, k5), (A86, k6), (A87, k7)]);
            sys.rhs(t + C8 * h, &tmp, k8);
            axpy(
                &mut tmp,
                &y,
                h,
                &[(A91, k1), (A94, k4), (A95, k5), (A96, k6), (A97, k7), (A98, k8)],
            );
            sys.rhs(t + C9 * h, &tmp, k9);
            axpy(
                &mut tmp,
                &y,
                h,
                &[(A101, k1), (A104, k4), (A105, k5), (A106, k6), (A107, k7), (A108, k8), (A109, k9)],
            );
            sys.rhs(t + C10 * h, &tmp, k10);
            axpy(
                &mut tmp,
                &y,
                h,
                &[
                    (A111, k1),
                    (A114, k4),
                    (A115, k5),
                    (A116, k6),
                    (A117, k7),
                    (A118, k8),
                    (A119, k9),
                    (A1110, k10),
                ],
            );
            sys.rhs(t + C11 * h, &tmp, k11);
            let mut y_stage12 = [0.0; N];
            axpy(
                &mut y_stage12,
                &y,
                h,
                &[
                    (A121, k1),
                    (A124, k4),
                    (A125, k5),
                    (A126, k6),
                    (A127, k7),
                    (A128, k8),
                    (A129, k9),
                    (A1210, k10),
                    (A1211, k11),
                ],
            );
            let t_new = t + h;
            sys.rhs(t_new, &y_stage12, k12);
            self.stats.evaluations += 11;

            let mut y_new = [0.0; N];
            let mut err = 0.0;
            let mut err2 = 0.0;
            for i in 0..N {
                let incr = B1 * k1[i]
                    + B6 * k6[i]
                    + B7 * k7[i]
                    + B8 * k8[i]
                    + B9 * k9[i]
                    + B10 * k10[i]
                    + B11 * k11[i]
                    + B12 * k12[i];
                y_new[i] = y[i] + h * incr;
                let sk = self.weight(y[i], y_new[i], i);
                let e2 = incr - BHH1 * k1[i] - BHH2 * k9[i] - BHH3 * k12[i];
                err2 += (e2 / sk).powi(2);
                let e = ER1 * k1[i]
                    + ER6 * k6[i]
                    + ER7 * k7[i]
                    + ER8 * k8[i]
                    + ER9 * k9[i]
                    + ER10 * k10[i]
                    + ER11 * k11[i]
                    + ER12 * k12[i];
                err += (e / sk).powi(2);
            }
            let mut deno = err + 0.01 * err2;
            if deno <= 0.0 {
                deno = 1.0;
            }
            let err = h.abs() * err * (1.0 / (deno * N as f64)).sqrt();

            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                // Treat as a hard rejection and shrink aggressively.
                self.stats.rejected += 1;
                h *= 0.1;
                last_rejected = true;
                continue;
            }

            let fac11 = err.powf(Self::EXPO1);
            let fac = (fac11 / Self::SAFE).clamp(Self::FACC2, Self::FACC1);
            let mut h_new = h / fac;

            if err <= 1.0 {
                self.stats.accepted += 1;
                let mut f_new = [0.0; N];
                sys.rhs(t_new, &y_new, &mut f_new);
                self.stats.evaluations += 1;

                let wants_samples = grid
                    .map(|g| next_sample < g.count && g.time(next_sample) <= t_new)
                    .unwrap_or(false);
                if wants_samples {
                    let cont = self.dense_coefficients(sys, t, h, &y, &y_new, &f_new, &mut st);
                    let interp = |ts: f64| -> [f64; N] {
                        let s = (ts - t) / h;
                        let s1 = 1.0 - s;
                        let mut out = [0.0; N];
                        for i in 0..N {
                            let conpar = cont[4][i] + s * (cont[5][i] + s1 * (cont[6][i] + s * cont[7][i]));
                            out[i] = cont[0][i]
                                + s * (cont[1][i] + s1 * (cont[2][i] + s * (cont[3][i] + s1 * conpar)));
                        }
                        out
                    };
                    emit_samples(&grid, &mut next_sample, t_new, interp, &mut on_sample)?;
                }

                st.k[0] = f_new;
                y = y_new;
                t = t_new;
                on_step(t, &y)?;

                if last || t >= t_end {
                    return Ok(y);
                }
                if h_new.abs() > self.opts.max_step {
                    h_new = self.opts.max_step;
                }
                if last_rejected {
                    h_new = h_new.min(h);
                }
                last_rejected = false;
            } else {
                h_new = h / Self::FACC1.min(fac11 / Self::SAFE);
                self.stats.rejected += 1;
                last_rejected = true;
            }
            h = h_new;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn dense_coefficients<S: OdeSystem<N>>(
        &mut self,
        sys: &S,
        t: f64,
        h: f64,
        y: &[f64; N],
        y_new: &[f64; N],
        f_new: &[f64; N],
        st: &mut Stages<N>,
    ) -> [[f64; N]; 8] {
        let mut cont = [[0.0; N]; 8];
        let [k1, _k2, _k3, _k4, _k5, k6, k7, k8, k9, k10, k11, k12, k14, k15, k16, _] = &mut st.k;
        for i in 0..N {
            let ydiff = y_new[i] - y[i];
            let bspl = h * k1[i] - ydiff;
            cont[0][i] = y[i];
            cont[1][i] = ydiff;
            cont[2][i] = bspl;
            cont[3][i] = ydiff - h * f_new[i] - bspl;
            cont[4][i] = D41 * k1[i]
                + D46 * k6[i]
                + D47 * k7[i]
                + D48 * k8[i]
                + D49 * k9[i]
                + D410 * k10[i]
                + D411 * k11[i]
                + D412 * k12[i];
            cont[5][i] = D51 * k1[i]
                + D56 * k6[i]
                + D57 * k7[i]
                + D58 * k8[i]
                + D59 * k9[i]
                + D510 * k10[i]
                + D511 * k11[i]
                + D512 * k12[i];
            cont[6][i] = D61 * k1[i]
                + D66 * k6[i]
                + D67 * k7[i]
                + D68 * k8[i]
                + D69 * k9[i]
                + D610 * k10[i]
                + D611 * k11[i]
                + D612 * k12[i];
            cont[7][i] = D71 * k1[i]
                + D76 * k6[i]
                + D77 * k7[i]
                + D78 * k8[i]
                + D79 * k9[i]
                + D710 * k10[i]
                + D711 * k11[i]
                + D712 * k12[i];
        }
        let mut tmp = [0.0; N];
        axpy(
            &mut tmp,
            y,
            h,
            &[
                (A141, k1),
                (A147, k7),
                (A148, k8),
                (A149, k9),
                (A1410, k10),
                (A1411, k11),
                (A1412, k12),
                (A1413, f_new),
            ],
        );
        sys.rhs(t + C14 * h, &tmp, k14);
        axpy(
            &mut tmp,
            y,
            h,
            &[
                (A151, k1),
                (A156, k6),
                (A157, k7),
                (A158, k8),
                (A1511, k11),
                (A1512, k12),
                (A1513, f_new),
                (A1514, k14),
            ],
        );
        sys.rhs(t + C15 * h, &tmp, k15);
        axpy(
            &mut tmp,
            y,
            h,
            &[
                (A161, k1),
                (A166, k6),
                (A167, k7),
                (A168, k8),
                (A169, k9),
                (A1613, f_new),
                (A1614, k14),
                (A1615, k15),
            ],
        );
        sys.rhs(t + C16 * h, &tmp, k16);
        self.stats.evaluations += 3;
        for i in 0..N {
            cont[4][i] = h * (cont[4][i] + D413 * f_new[i] + D414 * k14[i] + D415 * k15[i] + D416 * k16[i]);
            cont[5][i] = h * (cont[5][i] + D513 * f_new[i] + D514 * k14[i] + D515 * k15[i] + D516 * k16[i]);
            cont[6][i] = h * (cont[6][i] + D613 * f_new[i] + D614 * k14[i] + D615 * k15[i] + D616 * k16[i]);
            cont[7][i] = h * (cont[7][i] + D713 * f_new[i] + D714 * k14[i] + D715 * k15[i] + D716 * k16[i]);
        }
        cont
    }
}

/// Convenience wrapper: integrate and collect the grid samples.
pub fn solve_dense<S: OdeSystem<N>, const N: usize>(
    sys: &S,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    grid: SampleGrid,
    opts: Dop853Options<N>,
) -> Result<(Vec<f64>, Vec<[f64; N]>, IntegrationStats)> {
    let mut ts = Vec::with_capacity(grid.count);
    let mut ys = Vec::with_capacity(grid.count);
    let mut solver = Dop853::new(opts);
    solver.integrate(
        sys,
        t0,
        y0,
        t_end,
        Some(grid),
        |t, y| {
            ts.push(t);
            ys.push(*y);
            Ok(())
        },
        |_, _| Ok(()),
    )?;
    Ok((ts, ys, solver.stats))
}

/// One classical RK4 step of size `h` in place.
pub fn rk4_step<S: OdeSystem<N>, const N: usize>(sys: &S, t: f64, y: &mut [f64; N], h: f64) {
    let mut k1 = [0.0; N];
    let mut k2 = [0.0; N];
    let mut k3 = [0.0; N];
    let mut k4 = [0.0; N];
    let mut tmp = [0.0; N];
    sys.rhs(t, y, &mut k1);
    for i in 0..N {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    sys.rhs(t + 0.5 * h, &tmp, &mut k2);
    for i in 0..N {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    sys.rhs(t + 0.5 * h, &tmp, &mut k3);
    for i in 0..N {
        tmp[i] = y[i] + h * k3[i];
    }
    sys.rhs(t + h, &tmp, &mut k4);
    for i in 0..N {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}
